//! Algorithmic checks of the purification and ergodicity hypotheses: the
//! fixed point of the channel, the dimension of its support, the period,
//! and a span-closure test for purification.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ComplexMatrix, DensityMatrix, KrausFamily, Word, C64};

/// Tolerance for counting eigenvalues on (or at) the unit circle.
pub const SPECTRAL_TOL: f64 = 1e-8;
/// Tolerance used for the rank of the fixed point.
pub const RANK_TOL: f64 = 1e-8;
const CLIP_TOL: f64 = 1e-10;

/// Spectrum of the vectorized channel.
#[derive(Clone, Debug, Serialize)]
pub struct ChannelSpectrum {
    pub eigenvalues: Vec<C64>,
    pub fixed_space_dim: usize,
    pub peripheral_count: usize,
}

impl ChannelSpectrum {
    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Matrix of `ρ ↦ Σ A_i ρ A_i*` acting on column-stacked `vec(ρ)`.
pub fn vectorized_channel(family: &KrausFamily) -> DMatrix<C64> {
    let d = family.dim();
    let mut phi = DMatrix::zeros(d * d, d * d);
    for a in family.operators() {
        for (row_b, col_e) in index_pairs(d) {
            let conj = a.get(row_b, col_e).conj();
            if conj == C64::new(0.0, 0.0) {
                continue;
            }
            for (row_a, col_c) in index_pairs(d) {
                phi[(row_a + d * row_b, col_c + d * col_e)] += a.get(row_a, col_c) * conj;
            }
        }
    }
    phi
}

fn index_pairs(d: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..d).flat_map(move |i| (0..d).map(move |j| (i, j)))
}

fn devectorize(v: &DVector<C64>, d: usize) -> ComplexMatrix {
    let mut m = ComplexMatrix::zeros(d);
    for i in 0..d {
        for j in 0..d {
            m.set(i, j, v[i + d * j]);
        }
    }
    m
}

pub fn channel_spectrum(family: &KrausFamily) -> ChannelSpectrum {
    let phi = vectorized_channel(family);
    let eigenvalues = linalg::general_eigenvalues(&phi);
    let n = phi.nrows();
    let shifted = &phi - DMatrix::<C64>::identity(n, n);
    let fixed_space_dim = linalg::singular_values(&shifted).iter().filter(|&&s| s <= SPECTRAL_TOL).count();
    let peripheral_count = eigenvalues.iter().filter(|z| z.norm() >= 1.0 - SPECTRAL_TOL).count();
    ChannelSpectrum { eigenvalues, fixed_space_dim, peripheral_count }
}

/// The unique fixed density matrix of the channel.
pub fn compute_rho_inv(family: &KrausFamily) -> Result<DensityMatrix> {
    let d = family.dim();
    let phi = vectorized_channel(family);
    let n = d * d;
    let shifted = &phi - DMatrix::<C64>::identity(n, n);
    let svd = shifted.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let nullity = svd.singular_values.iter().filter(|&&s| s <= SPECTRAL_TOL).count();
    if nullity > 1 {
        return Err(Error::NonUniqueFixedPoint { dim: nullity });
    }
    let (k_min, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty spectrum");
    let v: DVector<C64> = v_t.row(k_min).adjoint().into_owned();
    let mut x = devectorize(&v, d);
    let tr = x.trace();
    if tr.norm() > 0.0 {
        x = x.scale(tr.conj() / tr.norm());
    }
    let (vals, vecs) = linalg::hermitian_eigen(&x.hermitian_part());
    let mut rho = ComplexMatrix::zeros(d);
    for (lambda, vec) in vals.iter().zip(&vecs) {
        if *lambda > CLIP_TOL {
            rho = rho.add(&ComplexMatrix::outer(vec, vec).scale(C64::new(*lambda, 0.0)));
        }
    }
    let trace = rho.trace().re;
    if !(trace > 0.0) {
        return Err(Error::InvalidParameter("fixed point has no positive part".into()));
    }
    Ok(DensityMatrix::new_unchecked(rho.scale(C64::new(1.0 / trace, 0.0)).hermitian_part()))
}

/// Result of the ergodicity check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErgodicityCheck {
    pub holds: bool,
    /// Dimension of the minimal invariant subspace (rank of the fixed point).
    pub e_dim: Option<usize>,
}

pub fn check_erg(family: &KrausFamily) -> ErgodicityCheck {
    match compute_rho_inv(family) {
        Ok(rho) => ErgodicityCheck { holds: true, e_dim: Some(rho.rank(RANK_TOL)) },
        Err(_) => ErgodicityCheck { holds: false, e_dim: None },
    }
}

/// Number of peripheral eigenvalues of an ergodic channel.
pub fn estimate_period(family: &KrausFamily) -> Result<usize> {
    if !check_erg(family).holds {
        return Err(Error::ErgodicityNotVerified);
    }
    Ok(channel_spectrum(family).peripheral_count.max(1))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PurStatus {
    Yes,
    No,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PurWitness {
    /// Shortest word whose `A_w* A_w` is not scalar.
    Word(Word),
    /// Projector of rank ≥ 2 on which every `A_w* A_w` compresses to a scalar.
    Projector(Vec<Vec<[f64; 2]>>),
    None,
}

/// Result of [`check_pur`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PurificationCheck {
    pub status: PurStatus,
    pub witness: PurWitness,
    /// Real dimension of `span{A_w* A_w : |w| ≤ L}`.
    pub span_dim: usize,
    /// Whether the span stopped growing within the word-length bound, in
    /// which case it equals the span over words of every length.
    pub span_stabilized: bool,
    pub levels_explored: usize,
}

/// Decides purification by closing `span{A_w* A_w}` under `M ↦ A_i* M A_i`.
///
/// A rank-≥2 projector with scalar compressions exists iff one exists for a
/// 2-dimensional subspace, so the procedure only ever looks at rank two:
/// joint eigenspaces of the span give certified failures, a full span (or
/// `d = 2` with a non-scalar generator) gives certified success, and other
/// cases fall back to a numerical search that can only certify failure.
pub fn check_pur(family: &KrausFamily, max_word_len: usize) -> PurificationCheck {
    let d = family.dim();
    let witness_word = family
        .operators()
        .iter()
        .position(|a| !a.adjoint().mul(a).is_scalar(SPECTRAL_TOL))
        .map(|i| Word(vec![i]));

    let (basis, span_stabilized, levels_explored) = span_closure(family, max_word_len.max(1));
    let span_dim = basis.len();

    if d < 2 {
        return PurificationCheck {
            status: PurStatus::Yes,
            witness: PurWitness::None,
            span_dim,
            span_stabilized,
            levels_explored,
        };
    }

    let Some(word) = witness_word else {
        // Every A_i* A_i is scalar, hence so is every A_w* A_w.
        return PurificationCheck {
            status: PurStatus::No,
            witness: PurWitness::Projector(projector_rows(&DMatrix::identity(d, d))),
            span_dim,
            span_stabilized: true,
            levels_explored,
        };
    };

    let joint = joint_eigenspaces(&basis, d);
    if let Some(q) = joint.into_iter().find(|q| q.ncols() >= 2) {
        let status = if span_stabilized { PurStatus::No } else { PurStatus::Unknown };
        return PurificationCheck {
            status,
            witness: PurWitness::Projector(projector_rows(&q)),
            span_dim,
            span_stabilized,
            levels_explored,
        };
    }

    if d == 2 || span_dim == d * d {
        return PurificationCheck {
            status: PurStatus::Yes,
            witness: PurWitness::Word(word),
            span_dim,
            span_stabilized,
            levels_explored,
        };
    }

    if let Some(q) = search_scalar_compression(&basis, d) {
        let status = if span_stabilized { PurStatus::No } else { PurStatus::Unknown };
        return PurificationCheck {
            status,
            witness: PurWitness::Projector(projector_rows(&q)),
            span_dim,
            span_stabilized,
            levels_explored,
        };
    }

    PurificationCheck { status: PurStatus::Unknown, witness: PurWitness::Word(word), span_dim, span_stabilized, levels_explored }
}

fn projector_rows(q: &DMatrix<C64>) -> Vec<Vec<[f64; 2]>> {
    let p = q * q.adjoint();
    (0..p.nrows()).map(|i| (0..p.ncols()).map(|j| [p[(i, j)].re, p[(i, j)].im]).collect()).collect()
}

fn hermitian_coords(m: &ComplexMatrix) -> Vec<f64> {
    let d = m.dim();
    let mut v = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in i..d {
            let z = m.get(i, j);
            v.push(if i == j { z.re } else { z.re * std::f64::consts::SQRT_2 });
            if i != j {
                v.push(z.im * std::f64::consts::SQRT_2);
            }
        }
    }
    v
}

/// Orthonormal basis (Frobenius inner product) of the span closure.
fn span_closure(family: &KrausFamily, max_len: usize) -> (Vec<ComplexMatrix>, bool, usize) {
    let d = family.dim();
    let mut basis: Vec<ComplexMatrix> = Vec::new();
    let mut coords: Vec<Vec<f64>> = Vec::new();
    let try_add = |m: ComplexMatrix, basis: &mut Vec<ComplexMatrix>, coords: &mut Vec<Vec<f64>>| -> bool {
        let h = m.hermitian_part();
        let mut c = hermitian_coords(&h);
        let norm0 = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            return false;
        }
        c.iter_mut().for_each(|x| *x /= norm0);
        let mut h = h.scale(C64::new(1.0 / norm0, 0.0));
        for _ in 0..2 {
            for (b, bc) in basis.iter().zip(coords.iter()) {
                let dot: f64 = c.iter().zip(bc).map(|(x, y)| x * y).sum();
                c.iter_mut().zip(bc).for_each(|(x, y)| *x -= dot * y);
                h = h.sub(&b.scale(C64::new(dot, 0.0)));
            }
        }
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-9 {
            return false;
        }
        c.iter_mut().for_each(|x| *x /= norm);
        basis.push(h.scale(C64::new(1.0 / norm, 0.0)));
        coords.push(c);
        true
    };

    try_add(ComplexMatrix::identity(d), &mut basis, &mut coords);
    let mut frontier = basis.clone();
    let mut stabilized = false;
    let mut levels = 0;
    for _ in 0..max_len {
        levels += 1;
        let mut added = Vec::new();
        for m in &frontier {
            for a in family.operators() {
                let image = a.adjoint().mul(m).mul(a);
                if try_add(image, &mut basis, &mut coords) {
                    added.push(basis.last().cloned().expect("just pushed"));
                }
            }
        }
        if added.is_empty() {
            stabilized = true;
            break;
        }
        frontier = added;
    }
    if !stabilized && basis.len() == d * d {
        stabilized = true;
    }
    (basis, stabilized, levels)
}

/// Maximal subspaces on which every generator acts as a scalar.
fn joint_eigenspaces(generators: &[ComplexMatrix], d: usize) -> Vec<DMatrix<C64>> {
    let mut spaces = vec![DMatrix::<C64>::identity(d, d)];
    for g in generators {
        let (vals, _) = linalg::hermitian_eigen(g);
        let mut distinct: Vec<f64> = Vec::new();
        for v in vals {
            if distinct.last().is_none_or(|&l| (v - l).abs() > SPECTRAL_TOL) {
                distinct.push(v);
            }
        }
        let gm = linalg::to_na(g);
        let tol = SPECTRAL_TOL * gm.norm().max(1.0);
        let mut next = Vec::new();
        for q in &spaces {
            for &c in &distinct {
                let shifted = &gm - DMatrix::<C64>::identity(d, d) * C64::new(c, 0.0);
                let restricted = &shifted * q;
                let ns = linalg::null_space(&restricted, tol);
                if ns.len() >= 2 {
                    let coeffs = DMatrix::from_columns(&ns);
                    next.push(q * coeffs);
                }
            }
        }
        spaces = next;
        if spaces.is_empty() {
            break;
        }
    }
    spaces
}

/// Multi-start descent for a rank-2 subspace whose compressions are all scalar.
fn search_scalar_compression(generators: &[ComplexMatrix], d: usize) -> Option<DMatrix<C64>> {
    let gens: Vec<DMatrix<C64>> = generators.iter().map(linalg::to_na).collect();
    let objective = |params: &[f64]| -> (f64, DMatrix<C64>) {
        let x = DMatrix::from_fn(d, 2, |i, j| C64::new(params[2 * (i * 2 + j)], params[2 * (i * 2 + j) + 1]));
        let q = x.qr().q();
        let mut f = 0.0;
        for g in &gens {
            let c = q.adjoint() * g * &q;
            let mean = (c[(0, 0)] + c[(1, 1)]) * 0.5;
            f += (c[(0, 0)] - mean).norm_sqr() + (c[(1, 1)] - mean).norm_sqr() + 2.0 * c[(0, 1)].norm_sqr();
        }
        (f, q)
    };
    let n_params = 4 * d;
    let mut rng = ChaCha8Rng::seed_from_u64(0x005e_ed0f_9012);
    for _ in 0..24 {
        let mut x: Vec<f64> = (0..n_params).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let (mut fx, _) = objective(&x);
        let mut step = 0.1;
        for _ in 0..400 {
            let h = 1e-7;
            let grad: Vec<f64> = (0..n_params)
                .map(|k| {
                    let mut xp = x.clone();
                    xp[k] += h;
                    (objective(&xp).0 - fx) / h
                })
                .collect();
            let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if gnorm < 1e-14 {
                break;
            }
            loop {
                let cand: Vec<f64> = x.iter().zip(&grad).map(|(a, g)| a - step * g / gnorm).collect();
                let (fc, _) = objective(&cand);
                if fc < fx {
                    x = cand;
                    fx = fc;
                    step *= 1.5;
                    break;
                }
                step *= 0.5;
                if step < 1e-14 {
                    break;
                }
            }
            if fx < 1e-20 || step < 1e-14 {
                break;
            }
        }
        if fx < 1e-18 {
            return Some(objective(&x).1);
        }
    }
    None
}

/// Combined verdict on both hypotheses.
#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport {
    pub pur_holds: PurStatus,
    pub pur_witness: PurWitness,
    pub erg_holds: bool,
    pub rho_inv: Option<DensityMatrix>,
    #[serde(rename = "E_dim")]
    pub e_dim: Option<usize>,
    pub period_m: Option<usize>,
    pub fixed_point_residual: Option<f64>,
}

impl AssumptionReport {
    /// Both hypotheses verified.
    pub fn holds(&self) -> bool {
        self.erg_holds && self.pur_holds == PurStatus::Yes
    }
}

/// Runs every check; the purification word bound defaults to `d²`.
pub fn assess(family: &KrausFamily, max_word_len: Option<usize>) -> AssumptionReport {
    let d = family.dim();
    let pur = check_pur(family, max_word_len.unwrap_or(d * d));
    let rho = compute_rho_inv(family).ok();
    let (erg_holds, e_dim, period_m, residual) = match &rho {
        Some(r) => {
            let res = crate::model::channel_apply(family, r).matrix().sub(r.matrix()).max_abs();
            (true, Some(r.rank(RANK_TOL)), Some(channel_spectrum(family).peripheral_count.max(1)), Some(res))
        }
        None => (false, None, None, None),
    };
    AssumptionReport {
        pur_holds: pur.status,
        pur_witness: pur.witness,
        erg_holds,
        rho_inv: rho,
        e_dim,
        period_m,
        fixed_point_residual: residual,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::channel_apply;
    use crate::reference::{self, KeepSwitchModel};

    fn single_unitary() -> KrausFamily {
        let mut u = ComplexMatrix::zeros(2);
        u.set(0, 0, C64::new(1.0, 0.0));
        u.set(1, 1, C64::new(0.0, 1.0));
        KrausFamily::new(vec![u]).unwrap()
    }

    #[test]
    fn keep_switch_fixed_point_is_diag_p_q() {
        let fam = KeepSwitchModel::new(0.3).unwrap().family();
        let rho = compute_rho_inv(&fam).unwrap();
        assert!(rho.matrix().sub(&ComplexMatrix::diag(&[0.3, 0.7])).max_abs() < 1e-12);
        assert!(channel_apply(&fam, &rho).matrix().sub(rho.matrix()).max_abs() < 1e-9);
    }

    #[test]
    fn identity_and_unitary_have_non_unique_fixed_points() {
        let id = KrausFamily::new(vec![ComplexMatrix::identity(2)]).unwrap();
        assert!(matches!(compute_rho_inv(&id), Err(Error::NonUniqueFixedPoint { dim: 4 })));
        assert!(matches!(compute_rho_inv(&single_unitary()), Err(Error::NonUniqueFixedPoint { dim: 2 })));
    }

    #[test]
    fn erg_examples() {
        let ks = KeepSwitchModel::new(0.3).unwrap().family();
        assert_eq!(check_erg(&ks), ErgodicityCheck { holds: true, e_dim: Some(2) });
        let id = KrausFamily::new(vec![ComplexMatrix::identity(2)]).unwrap();
        assert!(!check_erg(&id).holds);
        assert!(!check_erg(&reference::reducible_family()).holds);
    }

    #[test]
    fn pur_examples() {
        let ks = KeepSwitchModel::new(0.3).unwrap().family();
        let r = check_pur(&ks, 4);
        assert_eq!(r.status, PurStatus::Yes);
        assert_eq!(r.witness, PurWitness::Word(Word(vec![0])));

        let id = KrausFamily::new(vec![ComplexMatrix::identity(2)]).unwrap();
        let r = check_pur(&id, 4);
        assert_eq!(r.status, PurStatus::No);
        assert!(matches!(r.witness, PurWitness::Projector(_)));

        assert_eq!(check_pur(&single_unitary(), 4).status, PurStatus::No);
    }

    #[test]
    fn pur_fails_on_a_scalar_block() {
        // A_1 = diag(a, a, b), A_2 = diag(c, c, e): the first two coordinates form
        // a rank-2 block on which everything is scalar.
        let a1 = ComplexMatrix::diag(&[0.6, 0.6, 0.8]);
        let a2 = ComplexMatrix::diag(&[0.8, 0.8, 0.6]);
        let fam = KrausFamily::stochastic(vec![a1, a2]).unwrap();
        let r = check_pur(&fam, 9);
        assert_eq!(r.status, PurStatus::No);
        let PurWitness::Projector(p) = r.witness else { panic!("expected projector") };
        let trace: f64 = (0..3).map(|i| p[i][i][0]).sum();
        assert!((trace - 2.0).abs() < 1e-9);
    }

    #[test]
    fn random_three_dim_family_purifies() {
        let fam = reference::random_valid_family(3, 2, 11).unwrap();
        let r = check_pur(&fam, 9);
        assert_eq!(r.status, PurStatus::Yes);
        assert_eq!(r.span_dim, 9);
    }

    #[test]
    fn periods() {
        let ks = KeepSwitchModel::new(0.3).unwrap().family();
        assert_eq!(estimate_period(&ks).unwrap(), 1);
        assert_eq!(estimate_period(&reference::two_cycle_family()).unwrap(), 2);
        let id = KrausFamily::new(vec![ComplexMatrix::identity(2)]).unwrap();
        assert!(matches!(estimate_period(&id), Err(Error::ErgodicityNotVerified)));
    }

    #[test]
    fn keep_switch_spectrum() {
        let ks = KeepSwitchModel::new(0.3).unwrap().family();
        let s = channel_spectrum(&ks);
        let mut mods: Vec<f64> = s.eigenvalues.iter().map(|z| z.norm()).collect();
        mods.sort_by(|a, b| b.total_cmp(a));
        assert!((mods[0] - 1.0).abs() < 1e-12);
        assert!((mods[1] - 2.0 * 0.21f64.sqrt()).abs() < 1e-12);
        assert!(mods[2] < 1e-12 && mods[3] < 1e-12);
        assert_eq!(s.fixed_space_dim, 1);
        assert_eq!(s.peripheral_count, 1);
    }

    #[test]
    fn assess_keep_switch() {
        let ks = KeepSwitchModel::new(0.3).unwrap().family();
        let r = assess(&ks, None);
        assert!(r.holds());
        assert_eq!(r.e_dim, Some(2));
        assert_eq!(r.period_m, Some(1));
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["pur_holds"], "yes");
        assert_eq!(json["E_dim"], 2);
    }
}
