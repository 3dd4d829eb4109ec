//! Closed-form oracle models.
//!
//! The Keep-Switch model on `C²` has Kraus operators `A_1 = diag(√p, √q)`
//! and `A_2 = antidiag(√p, √q)` with `p ∈ (0, ½)`, `q = 1 − p`. Its invariant
//! measure is `p δ_{ê_a} + q δ_{ê_b}`, and at the two atoms the kernel
//! forgets its starting point, which makes the Poisson solution and the
//! asymptotic variance explicit. The module also holds degenerate families
//! used as negative controls, a generator for random valid families, and a
//! log-amplitude chain that follows monomial families without underflow.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::assumptions::PurStatus;
use crate::error::{Error, Result};
use crate::kernel::Observable;
use crate::linalg;
use crate::measures::DiscreteMeasure;
use crate::model::{ComplexMatrix, KrausFamily, ProjectiveState, C64};
use crate::rng;

/// Keep-Switch model with parameter `p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KeepSwitchModel {
    p: f64,
}

/// Exact quantities of the Keep-Switch model for one observable.
#[derive(Clone, Debug, Serialize)]
pub struct KeepSwitchOracles {
    pub nu_inv: DiscreteMeasure,
    pub mean: f64,
    pub gamma_sq: f64,
    pub g_tilde_a: f64,
    pub g_tilde_b: f64,
}

impl KeepSwitchModel {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 0.5) {
            return Err(Error::InvalidParameter(format!("Keep-Switch needs 0 < p < 1/2, got {p}")));
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        1.0 - self.p
    }

    pub fn family(&self) -> KrausFamily {
        let (sp, sq) = (self.p.sqrt(), self.q().sqrt());
        let a1 = ComplexMatrix::diag(&[sp, sq]);
        let mut a2 = ComplexMatrix::zeros(2);
        a2.set(0, 1, C64::new(sp, 0.0));
        a2.set(1, 0, C64::new(sq, 0.0));
        KrausFamily::new(vec![a1, a2]).expect("two 2x2 operators")
    }

    pub fn atom_a(&self) -> ProjectiveState {
        ProjectiveState::basis(2, 0)
    }

    pub fn atom_b(&self) -> ProjectiveState {
        ProjectiveState::basis(2, 1)
    }

    /// `ê_+ = (e_a + e_b)/√2`.
    pub fn e_plus(&self) -> ProjectiveState {
        ProjectiveState::from_real(&[1.0, 1.0]).expect("non-zero")
    }

    /// `p δ_{ê_a} + q δ_{ê_b}`.
    pub fn invariant_measure(&self) -> DiscreteMeasure {
        DiscreteMeasure::new(vec![(self.atom_a(), self.p), (self.atom_b(), self.q())]).expect("valid weights")
    }

    pub fn oracles(&self, g: &Observable) -> KeepSwitchOracles {
        let (p, q) = (self.p, self.q());
        let ga = g.eval(&self.atom_a());
        let gb = g.eval(&self.atom_b());
        let mean = p * ga + q * gb;
        KeepSwitchOracles {
            nu_inv: self.invariant_measure(),
            mean,
            gamma_sq: (p * ga * ga + q * gb * gb - mean * mean).max(0.0),
            g_tilde_a: ga - mean,
            g_tilde_b: gb - mean,
        }
    }
}

/// A degenerate family together with the verdicts the checkers should reach.
#[derive(Clone, Debug)]
pub struct NegativeControl {
    pub name: &'static str,
    pub family: KrausFamily,
    pub expected_pur: Option<PurStatus>,
    pub expected_erg: bool,
    pub expected_period: Option<usize>,
}

/// `A_i = diag(B_i, C_i)` built from two one-dimensional valid families.
pub fn reducible_family() -> KrausFamily {
    let a1 = ComplexMatrix::diag(&[0.3f64.sqrt(), 0.6f64.sqrt()]);
    let a2 = ComplexMatrix::diag(&[0.7f64.sqrt(), 0.4f64.sqrt()]);
    KrausFamily::new(vec![a1, a2]).expect("2x2 operators")
}

/// `A_1 = e_b e_a*`, `A_2 = e_a e_b*`: the channel swaps the two populations.
pub fn two_cycle_family() -> KrausFamily {
    let mut a1 = ComplexMatrix::zeros(2);
    a1.set(1, 0, C64::new(1.0, 0.0));
    let mut a2 = ComplexMatrix::zeros(2);
    a2.set(0, 1, C64::new(1.0, 0.0));
    KrausFamily::new(vec![a1, a2]).expect("2x2 operators")
}

/// `{diag(1, i)}`.
pub fn single_unitary_family() -> KrausFamily {
    let mut u = ComplexMatrix::zeros(2);
    u.set(0, 0, C64::new(1.0, 0.0));
    u.set(1, 1, C64::new(0.0, 1.0));
    KrausFamily::new(vec![u]).expect("2x2 operator")
}

pub fn identity_family(dim: usize) -> KrausFamily {
    KrausFamily::new(vec![ComplexMatrix::identity(dim)]).expect("identity")
}

pub fn negative_controls() -> Vec<NegativeControl> {
    vec![
        NegativeControl {
            name: "identity",
            family: identity_family(2),
            expected_pur: Some(PurStatus::No),
            expected_erg: false,
            expected_period: None,
        },
        NegativeControl {
            name: "single_unitary",
            family: single_unitary_family(),
            expected_pur: Some(PurStatus::No),
            expected_erg: false,
            expected_period: None,
        },
        NegativeControl {
            name: "reducible_block_diagonal",
            family: reducible_family(),
            expected_pur: None,
            expected_erg: false,
            expected_period: None,
        },
        NegativeControl {
            name: "two_cycle",
            family: two_cycle_family(),
            expected_pur: Some(PurStatus::Yes),
            expected_erg: true,
            expected_period: Some(2),
        },
    ]
}

const SINGULAR_FLOOR: f64 = 1e-12;
const MAX_RETRIES: usize = 32;

/// Draws Gaussian `B_i` and returns `A_i = B_i S^{−1/2}` with `S = Σ B_i* B_i`.
pub fn random_valid_family(dim: usize, count: usize, seed: u64) -> Result<KrausFamily> {
    if dim < 2 || count < 2 {
        return Err(Error::InvalidParameter("random families need d ≥ 2 and K ≥ 2".into()));
    }
    let mut rng = rng::stream(seed, 0);
    for _ in 0..MAX_RETRIES {
        let raw: Vec<ComplexMatrix> = (0..count)
            .map(|_| {
                let data = (0..dim * dim)
                    .map(|_| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        C64::new(re, im)
                    })
                    .collect();
                ComplexMatrix::from_row_major(dim, data).expect("finite gaussian entries")
            })
            .collect();
        let s = raw.iter().fold(ComplexMatrix::zeros(dim), |acc, b| acc.add(&b.adjoint().mul(b)));
        let (vals, vecs) = linalg::hermitian_eigen(&s.hermitian_part());
        if vals[0] < SINGULAR_FLOOR {
            continue;
        }
        let inv_sqrt = vals
            .iter()
            .zip(&vecs)
            .fold(ComplexMatrix::zeros(dim), |acc, (l, v)| acc.add(&ComplexMatrix::outer(v, v).scale(C64::new(1.0 / l.sqrt(), 0.0))));
        let ops = raw.iter().map(|b| b.mul(&inv_sqrt)).collect();
        return KrausFamily::new(ops);
    }
    Err(Error::InvalidParameter("could not draw a non-singular family".into()))
}

/// Chain state stored as per-coordinate log-modulus and phase.
///
/// For monomial families (each operator has at most one non-zero entry per
/// row and column) a coordinate of `W_n x` is a product of entries, so a
/// coordinate is exactly zero iff its log-modulus is `−∞`. Long runs never
/// underflow onto the coordinate axes, unlike the normalized floating
/// representation.
#[derive(Clone, Debug)]
pub struct LogAmplitudeChain<'a> {
    family: &'a KrausFamily,
    /// For each operator and row: `(column, ln|entry|, entry phase)`.
    maps: Vec<Vec<Option<(usize, f64, C64)>>>,
    log_mod: Vec<f64>,
    phase: Vec<C64>,
    rng: rng::StreamRng,
    steps: usize,
}

impl<'a> LogAmplitudeChain<'a> {
    pub fn new(family: &'a KrausFamily, start: &ProjectiveState, seed: u64, replica: u64) -> Result<Self> {
        let d = family.dim();
        if start.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, found: start.dim() });
        }
        let mut maps = Vec::with_capacity(family.len());
        for a in family.operators() {
            let mut rows = vec![None; d];
            let mut col_used = vec![false; d];
            for (r, slot) in rows.iter_mut().enumerate() {
                for c in 0..d {
                    let z = a.get(r, c);
                    if z.norm() > 0.0 {
                        if slot.is_some() || col_used[c] {
                            return Err(Error::InvalidParameter("family is not monomial".into()));
                        }
                        col_used[c] = true;
                        *slot = Some((c, z.norm().ln(), z / z.norm()));
                    }
                }
            }
            maps.push(rows);
        }
        let log_mod = start.amplitudes().iter().map(|z| z.norm().ln()).collect();
        let phase = start.amplitudes().iter().map(|z| if z.norm() > 0.0 { z / z.norm() } else { C64::new(1.0, 0.0) }).collect();
        Ok(Self { family, maps, log_mod, phase, rng: rng::stream(seed, replica), steps: 0 })
    }

    pub fn family(&self) -> &KrausFamily {
        self.family
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `ln |⟨e_k, x_n⟩|`, `−∞` iff the coordinate is exactly zero.
    pub fn log_modulus(&self, k: usize) -> f64 {
        self.log_mod[k]
    }

    /// True when the state lies on a coordinate axis (all but one coordinate zero).
    pub fn on_axis(&self) -> bool {
        self.log_mod.iter().filter(|l| l.is_finite()).count() <= 1
    }

    fn branch(&self, i: usize) -> (Vec<f64>, Vec<C64>, f64) {
        let mut lm = vec![f64::NEG_INFINITY; self.log_mod.len()];
        let mut ph = vec![C64::new(1.0, 0.0); self.log_mod.len()];
        for (r, entry) in self.maps[i].iter().enumerate() {
            if let Some((c, l, p)) = entry {
                lm[r] = l + self.log_mod[*c];
                ph[r] = p * self.phase[*c];
            }
        }
        let lse = log_sum_exp_doubled(&lm);
        (lm, ph, lse)
    }

    /// Advances one step and returns the chosen branch.
    pub fn step(&mut self) -> Result<usize> {
        let logs: Vec<f64> = (0..self.family.len()).map(|i| self.branch(i).2).collect();
        let weights: Vec<f64> = logs.iter().map(|l| l.exp()).collect();
        let total: f64 = weights.iter().sum();
        let u = self.rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = weights.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc && *w > 0.0 {
                chosen = i;
                break;
            }
        }
        let (mut lm, ph, lse) = self.branch(chosen);
        if !lse.is_finite() {
            return Err(Error::ZeroBranch { weight: 0.0 });
        }
        lm.iter_mut().for_each(|l| *l -= 0.5 * lse);
        self.log_mod = lm;
        self.phase = ph;
        self.steps += 1;
        Ok(chosen)
    }
}

/// `ln Σ_k exp(2 l_k)`.
fn log_sum_exp_doubled(l: &[f64]) -> f64 {
    let m = l.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return f64::NEG_INFINITY;
    }
    2.0 * m + l.iter().map(|x| (2.0 * (x - m)).exp()).sum::<f64>().ln()
}

/// Outcome of running the atom indicator along a Keep-Switch path from `ê_+`.
#[derive(Clone, Debug, Serialize)]
pub struct IndicatorCounterexample {
    pub n: usize,
    /// `S_n(1_{ê_a, ê_b})`, evaluated exactly.
    pub partial_sum: u64,
    /// `ν_inv(1_{ê_a, ê_b})`.
    pub invariant_mean: f64,
    /// Smallest `ln |⟨e_a, x_k⟩|` and `ln |⟨e_b, x_k⟩|` along the path.
    pub min_log_overlap_a: f64,
    pub min_log_overlap_b: f64,
}

impl KeepSwitchModel {
    /// Runs `n` steps from `ê_+` counting visits to the two atoms.
    pub fn indicator_counterexample(&self, n: usize, seed: u64) -> Result<IndicatorCounterexample> {
        let family = self.family();
        let mut chain = LogAmplitudeChain::new(&family, &self.e_plus(), seed, 0)?;
        let mut partial_sum = 0u64;
        let (mut min_a, mut min_b) = (f64::INFINITY, f64::INFINITY);
        for k in 0..n {
            if k > 0 {
                chain.step()?;
            }
            if chain.on_axis() {
                partial_sum += 1;
            }
            min_a = min_a.min(chain.log_modulus(0));
            min_b = min_b.min(chain.log_modulus(1));
        }
        let nu = self.invariant_measure();
        let invariant_mean = nu.atoms().iter().map(|(s, w)| if is_atom(s) { *w } else { 0.0 }).sum();
        Ok(IndicatorCounterexample { n, partial_sum, invariant_mean, min_log_overlap_a: min_a, min_log_overlap_b: min_b })
    }

    /// `E_{ê_a}[d(V·ê_a, V·ê_b)] / d(ê_a, ê_b)` with `V` drawn from the kernel at `ê_a`.
    pub fn non_contraction_ratio(&self) -> Result<f64> {
        let family = self.family();
        let (a, b) = (self.atom_a(), self.atom_b());
        let mut expected = 0.0;
        for op in family.operators() {
            let (ya, w) = crate::model::apply_kraus(op, &a)?;
            let (yb, _) = crate::model::apply_kraus(op, &b)?;
            expected += w * ya.distance(&yb);
        }
        Ok(expected / a.distance(&b))
    }
}

fn is_atom(s: &ProjectiveState) -> bool {
    s.amplitudes().iter().filter(|z| z.norm() > 0.0).count() == 1
}
