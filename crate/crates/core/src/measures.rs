//! Discrete probability measures on projective space, exact Wasserstein-1
//! distances between them, and Monte Carlo checks of geometric convergence
//! of the averaged iterates `(1/m) Σ_r ν Π^{mn+r}`.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::engine::{run_replicas, Initial, Trajectory};
use crate::error::{Error, Result};
use crate::model::{KrausFamily, ProjectiveState, C64};

/// Tolerance on `Σ weights = 1`.
pub const MASS_TOL: f64 = 1e-9;
/// Largest atom count per side accepted by [`wasserstein1`].
pub const DEFAULT_SIZE_LIMIT: usize = 2000;

/// Finitely supported probability measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MeasureRepr", into = "MeasureRepr")]
pub struct DiscreteMeasure {
    atoms: Vec<(ProjectiveState, f64)>,
}

#[derive(Serialize, Deserialize)]
struct AtomRepr {
    state: Vec<[f64; 2]>,
    weight: f64,
}

#[derive(Serialize, Deserialize)]
struct MeasureRepr {
    atoms: Vec<AtomRepr>,
}

impl TryFrom<MeasureRepr> for DiscreteMeasure {
    type Error = Error;

    fn try_from(r: MeasureRepr) -> Result<Self> {
        let atoms = r
            .atoms
            .into_iter()
            .map(|a| {
                let v: Vec<C64> = a.state.iter().map(|[re, im]| C64::new(*re, *im)).collect();
                Ok((ProjectiveState::from_vector(&v)?, a.weight))
            })
            .collect::<Result<Vec<_>>>()?;
        DiscreteMeasure::new(atoms)
    }
}

impl From<DiscreteMeasure> for MeasureRepr {
    fn from(m: DiscreteMeasure) -> Self {
        MeasureRepr {
            atoms: m
                .atoms
                .into_iter()
                .map(|(s, w)| AtomRepr { state: s.amplitudes().iter().map(|z| [z.re, z.im]).collect(), weight: w })
                .collect(),
        }
    }
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<(ProjectiveState, f64)>) -> Result<Self> {
        let first = atoms.first().ok_or_else(|| Error::InvalidParameter("a measure needs at least one atom".into()))?;
        let dim = first.0.dim();
        if let Some((s, _)) = atoms.iter().find(|(s, _)| s.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: s.dim() });
        }
        if atoms.iter().any(|(_, w)| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("atom weights must be finite and non-negative".into()));
        }
        let total: f64 = atoms.iter().map(|(_, w)| w).sum();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidParameter(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { atoms })
    }

    /// Rescales positive weights to total mass one.
    pub fn normalized(atoms: Vec<(ProjectiveState, f64)>) -> Result<Self> {
        let total: f64 = atoms.iter().map(|(_, w)| w).sum();
        if !(total > 0.0) {
            return Err(Error::InvalidParameter("total mass must be positive".into()));
        }
        Self::new(atoms.into_iter().map(|(s, w)| (s, w / total)).collect())
    }

    pub fn dirac(x: ProjectiveState) -> Self {
        Self { atoms: vec![(x, 1.0)] }
    }

    pub fn atoms(&self) -> &[(ProjectiveState, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].0.dim()
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|(_, w)| w).sum()
    }

    pub fn expectation<F: Fn(&ProjectiveState) -> f64>(&self, g: F) -> f64 {
        self.atoms.iter().map(|(s, w)| w * g(s)).sum()
    }

    /// `μ({ŷ : d(x̂, ŷ) < radius})`.
    pub fn mass_within(&self, x: &ProjectiveState, radius: f64) -> f64 {
        self.atoms.iter().filter(|(s, _)| s.distance(x) < radius).map(|(_, w)| w).sum()
    }

    /// Merges atoms whose canonical coordinates agree on a grid of the given
    /// resolution; the first atom of each cell is kept as representative.
    pub fn coalesce(&self, resolution: f64) -> Self {
        let mut index: HashMap<_, usize> = HashMap::new();
        let mut out: Vec<(ProjectiveState, f64)> = Vec::new();
        for (s, w) in &self.atoms {
            match index.entry(s.grid_key(resolution)) {
                std::collections::hash_map::Entry::Occupied(e) => out[*e.get()].1 += w,
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(out.len());
                    out.push((s.clone(), *w));
                }
            }
        }
        Self { atoms: out }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Pools states with equal weight, merging bitwise-identical canonical states.
fn pool(states: &[ProjectiveState]) -> DiscreteMeasure {
    let mut index: HashMap<_, usize> = HashMap::new();
    let mut atoms: Vec<(ProjectiveState, usize)> = Vec::new();
    for s in states {
        match index.entry(s.exact_key()) {
            std::collections::hash_map::Entry::Occupied(e) => atoms[*e.get()].1 += 1,
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert(atoms.len());
                atoms.push((s.clone(), 1));
            }
        }
    }
    let total = states.len() as f64;
    DiscreteMeasure { atoms: atoms.into_iter().map(|(s, c)| (s, c as f64 / total)).collect() }
}

/// Uniform weights on `x̂_k` for `k ≥ burn_in`.
pub fn empirical_measure(states: &[ProjectiveState], burn_in: usize) -> Result<DiscreteMeasure> {
    if burn_in >= states.len() {
        return Err(Error::InvalidParameter(format!(
            "burn-in {burn_in} leaves no states out of {}",
            states.len()
        )));
    }
    Ok(pool(&states[burn_in..]))
}

/// Exact `W₁` with ground metric `d(x̂, ŷ) = √(1 − |⟨x, y⟩|²)`.
pub fn wasserstein1(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<f64> {
    wasserstein1_with_limit(a, b, DEFAULT_SIZE_LIMIT)
}

pub fn wasserstein1_with_limit(a: &DiscreteMeasure, b: &DiscreteMeasure, limit: usize) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    let atoms = a.len().max(b.len());
    if atoms > limit {
        return Err(Error::SizeLimit { atoms, limit });
    }
    let (ta, tb) = (a.total_mass(), b.total_mass());
    let supply: Vec<f64> = a.atoms.iter().map(|(_, w)| w / ta).collect();
    let demand: Vec<f64> = b.atoms.iter().map(|(_, w)| w / tb).collect();
    let cost: Vec<f64> = a.atoms.iter().flat_map(|(x, _)| b.atoms.iter().map(move |(y, _)| x.distance(y))).collect();
    if a.len() == 1 || b.len() == 1 {
        // Only one coupling exists.
        return Ok(cost.iter().zip(if a.len() == 1 { &demand } else { &supply }).map(|(c, w)| c * w).sum());
    }
    Ok(transport(&supply, &demand, &cost))
}

const FLOW_EPS: f64 = 1e-15;

/// Min-cost transportation by successive shortest paths on the residual
/// network `S → sources → sinks → T`, with Johnson potentials and a dense
/// Dijkstra. `cost` is row-major `n × m`.
fn transport(supply: &[f64], demand: &[f64], cost: &[f64]) -> f64 {
    let (n, m) = (supply.len(), demand.len());
    let nodes = n + m + 2;
    let (src, sink) = (0, n + m + 1);
    let mut sent = vec![0.0; n];
    let mut received = vec![0.0; m];
    let mut flow = vec![0.0; n * m];
    let mut potential = vec![0.0; nodes];
    let mut dist = vec![f64::INFINITY; nodes];
    let mut prev = vec![usize::MAX; nodes];
    let mut done = vec![false; nodes];
    let total = supply.iter().sum::<f64>().min(demand.iter().sum::<f64>());
    let mut shipped = 0.0;

    while shipped < total - 1e-13 {
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        prev.iter_mut().for_each(|p| *p = usize::MAX);
        done.iter_mut().for_each(|d| *d = false);
        dist[src] = 0.0;
        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..nodes {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX || u == sink {
                break;
            }
            done[u] = true;
            let du = dist[u];
            let relax = |v: usize, c: f64, dist: &mut [f64], prev: &mut [usize]| {
                let nd = du + (c + potential[u] - potential[v]).max(0.0);
                if nd < dist[v] {
                    dist[v] = nd;
                    prev[v] = u;
                }
            };
            if u == src {
                for i in 0..n {
                    if supply[i] - sent[i] > FLOW_EPS {
                        relax(1 + i, 0.0, &mut dist, &mut prev);
                    }
                }
            } else if u <= n {
                let i = u - 1;
                for j in 0..m {
                    relax(1 + n + j, cost[i * m + j], &mut dist, &mut prev);
                }
            } else {
                let j = u - 1 - n;
                for i in 0..n {
                    if flow[i * m + j] > FLOW_EPS {
                        relax(1 + i, -cost[i * m + j], &mut dist, &mut prev);
                    }
                }
                if demand[j] - received[j] > FLOW_EPS {
                    relax(sink, 0.0, &mut dist, &mut prev);
                }
            }
        }
        if !dist[sink].is_finite() {
            break;
        }
        let cap = dist[sink];
        for v in 0..nodes {
            potential[v] += dist[v].min(cap);
        }
        // Bottleneck along the path.
        let mut push = f64::INFINITY;
        let mut v = sink;
        while v != src {
            let u = prev[v];
            let residual = if v == sink {
                demand[u - 1 - n] - received[u - 1 - n]
            } else if u == src {
                supply[v - 1] - sent[v - 1]
            } else if u <= n {
                f64::INFINITY
            } else {
                flow[(v - 1) * m + (u - 1 - n)]
            };
            push = push.min(residual);
            v = u;
        }
        if !(push > 0.0) {
            break;
        }
        let mut v = sink;
        while v != src {
            let u = prev[v];
            if v == sink {
                received[u - 1 - n] += push;
            } else if u == src {
                sent[v - 1] += push;
            } else if u <= n {
                flow[(u - 1) * m + (v - 1 - n)] += push;
            } else {
                flow[(v - 1) * m + (u - 1 - n)] -= push;
            }
            v = u;
        }
        shipped += push;
    }
    flow.iter().zip(cost).map(|(f, c)| f.max(0.0) * c).sum()
}

/// Monte Carlo estimate of `(1/m) Σ_{r<m} ν Π^{mn+r}`: each of `R` replicas
/// contributes its states at times `mn, …, mn+m−1`.
pub fn cesaro_pushforward(
    family: &KrausFamily,
    nu: &DiscreteMeasure,
    m: usize,
    n: usize,
    replicas: usize,
    seed: u64,
) -> Result<DiscreteMeasure> {
    if m == 0 || replicas == 0 {
        return Err(Error::InvalidParameter("need m ≥ 1 and at least one replica".into()));
    }
    family.ensure_stochastic()?;
    if nu.dim() != family.dim() {
        return Err(Error::DimensionMismatch { expected: family.dim(), found: nu.dim() });
    }
    let initial = Initial::Measure(nu.clone());
    let per: Vec<Vec<ProjectiveState>> = run_replicas(replicas, |r| {
        let mut t = Trajectory::start_unchecked(family, &initial, seed, r);
        for _ in 0..m * n {
            t.step()?;
        }
        let mut out = Vec::with_capacity(m);
        out.push(t.state().clone());
        for _ in 1..m {
            t.step()?;
            out.push(t.state().clone());
        }
        Ok(out)
    })?;
    let states: Vec<ProjectiveState> = per.into_iter().flatten().collect();
    Ok(pool(&states))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayPoint {
    pub n: usize,
    pub w1: f64,
    pub stderr: f64,
    /// False when `w1` fell below the Monte Carlo floor and was left out of the fit.
    pub used: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LambdaFit {
    pub lambda_hat: f64,
    pub slope: f64,
    pub intercept: f64,
    /// 95% confidence interval for the slope of `log W₁` against `n`.
    pub slope_ci: (f64, f64),
    pub lambda_ci: (f64, f64),
    pub floor: f64,
    pub points: Vec<DecayPoint>,
}

impl LambdaFit {
    pub fn decays(&self) -> bool {
        self.slope_ci.1 < 0.0
    }

    /// Writes `n,W1,stderr`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "n,W1,stderr")?;
        for p in &self.points {
            writeln!(out, "{},{},{}", p.n, p.w1, p.stderr)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    pub seed: u64,
    /// Grid on which the pushforward is coalesced before the transport solve.
    pub coalesce_resolution: f64,
    pub batches: usize,
    pub size_limit: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { seed: 0, coalesce_resolution: 1e-12, batches: 8, size_limit: DEFAULT_SIZE_LIMIT }
    }
}

/// Least-squares fit of `log W₁((1/m) Σ_r ν Π^{mn+r}, reference)` against `n`.
pub fn fit_lambda(
    family: &KrausFamily,
    nu: &DiscreteMeasure,
    m: usize,
    n_grid: &[usize],
    replicas: usize,
    reference: &DiscreteMeasure,
    opts: &FitOptions,
) -> Result<LambdaFit> {
    if n_grid.len() < 2 {
        return Err(Error::InsufficientPoints { found: n_grid.len(), needed: 2 });
    }
    let batches = opts.batches.max(2);
    let floor = 2.0 / (replicas as f64).sqrt();
    let mut points = Vec::with_capacity(n_grid.len());
    for (idx, &n) in n_grid.iter().enumerate() {
        let seed = opts.seed.wrapping_add(idx as u64);
        let full = cesaro_pushforward(family, nu, m, n, replicas, seed)?.coalesce(opts.coalesce_resolution);
        let w1 = wasserstein1_with_limit(&full, reference, opts.size_limit)?;
        let per_batch = replicas / batches;
        let mut bw = Vec::with_capacity(batches);
        if per_batch > 0 {
            for b in 0..batches {
                let bseed = seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(b as u64 + 1));
                let meas = cesaro_pushforward(family, nu, m, n, per_batch, bseed)?.coalesce(opts.coalesce_resolution);
                bw.push(wasserstein1_with_limit(&meas, reference, opts.size_limit)?);
            }
        }
        let stderr = if bw.len() >= 2 {
            let mean = bw.iter().sum::<f64>() / bw.len() as f64;
            (bw.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (bw.len() - 1) as f64 / bw.len() as f64).sqrt()
        } else {
            f64::NAN
        };
        points.push(DecayPoint { n, w1, stderr, used: w1 >= floor && w1 > 0.0 });
    }
    let used: Vec<(f64, f64)> = points.iter().filter(|p| p.used).map(|p| (p.n as f64, p.w1.ln())).collect();
    if used.len() < 2 {
        return Err(Error::InsufficientPoints { found: used.len(), needed: 2 });
    }
    let k = used.len() as f64;
    let mx = used.iter().map(|(x, _)| x).sum::<f64>() / k;
    let my = used.iter().map(|(_, y)| y).sum::<f64>() / k;
    let sxx: f64 = used.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let sxy: f64 = used.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientPoints { found: 1, needed: 2 });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let half = if used.len() > 2 {
        let rss: f64 = used.iter().map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
        let dof = k - 2.0;
        let se = (rss / dof / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, dof).expect("positive dof").inverse_cdf(0.975);
        t * se
    } else {
        f64::INFINITY
    };
    let slope_ci = (slope - half, slope + half);
    Ok(LambdaFit {
        lambda_hat: slope.exp(),
        slope,
        intercept,
        slope_ci,
        lambda_ci: (slope_ci.0.exp(), slope_ci.1.exp()),
        floor,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::{identity_family, KeepSwitchModel};

    fn two_point(p: f64) -> DiscreteMeasure {
        DiscreteMeasure::new(vec![(ProjectiveState::basis(2, 0), p), (ProjectiveState::basis(2, 1), 1.0 - p)]).unwrap()
    }

    #[test]
    fn construction_checks_mass() {
        assert!(DiscreteMeasure::new(vec![(ProjectiveState::basis(2, 0), 0.5)]).is_err());
        assert!(DiscreteMeasure::new(vec![]).is_err());
        assert!(DiscreteMeasure::new(vec![(ProjectiveState::basis(2, 0), 1.5), (ProjectiveState::basis(2, 1), -0.5)]).is_err());
        let m = DiscreteMeasure::normalized(vec![(ProjectiveState::basis(2, 0), 2.0), (ProjectiveState::basis(2, 1), 6.0)]).unwrap();
        assert!((m.atoms()[0].1 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let m = two_point(0.3);
        let back = DiscreteMeasure::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn empirical_examples() {
        let x = ProjectiveState::from_real(&[0.6, 0.8]).unwrap();
        let states = vec![x.clone(); 10];
        let e = empirical_measure(&states, 3).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e.atoms()[0].1, 1.0);
        let mixed = vec![ProjectiveState::basis(2, 0), ProjectiveState::basis(2, 1), ProjectiveState::basis(2, 1)];
        assert_eq!(empirical_measure(&mixed, 2).unwrap().len(), 1);
        assert!(empirical_measure(&mixed, 3).is_err());
    }

    #[test]
    fn w1_examples() {
        let a = DiscreteMeasure::dirac(ProjectiveState::basis(2, 0));
        let b = DiscreteMeasure::dirac(ProjectiveState::basis(2, 1));
        assert_eq!(wasserstein1(&a, &b).unwrap(), 1.0);
        let m = two_point(0.3);
        assert_eq!(wasserstein1(&m, &m).unwrap(), 0.0);
        // The transport polytope between two measures on {ê_a, ê_b} is one segment;
        // the cheapest plan moves |p − ½| across distance 1.
        let w = wasserstein1(&two_point(0.5), &m).unwrap();
        assert!((w - 0.2).abs() < 1e-12);
    }

    #[test]
    fn size_limit_is_enforced() {
        let m = two_point(0.5);
        assert!(matches!(wasserstein1_with_limit(&m, &m, 1), Err(Error::SizeLimit { .. })));
    }

    #[test]
    fn coalesce_merges_grid_neighbours() {
        let a = ProjectiveState::from_real(&[1.0, 1e-14]).unwrap();
        let m = DiscreteMeasure::new(vec![(a, 0.5), (ProjectiveState::basis(2, 0), 0.5)]).unwrap();
        let c = m.coalesce(1e-12);
        assert_eq!(c.len(), 1);
        assert!((c.total_mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pushforward_of_zero_steps_recovers_atoms() {
        let fam = KeepSwitchModel::new(0.3).unwrap().family();
        let nu = two_point(0.4);
        let est = cesaro_pushforward(&fam, &nu, 1, 0, 20000, 1).unwrap();
        assert_eq!(est.len(), 2);
        assert!((est.total_mass() - 1.0).abs() < 1e-12);
        assert!(wasserstein1(&est, &nu).unwrap() < 4.0 / (20000f64).sqrt());
    }

    /// `δ_x Π^n` by enumerating all words.
    fn enumerate_pushforward(fam: &KrausFamily, x: &ProjectiveState, n: usize) -> DiscreteMeasure {
        let mut atoms = Vec::new();
        for w in crate::model::Word::all_of_length(fam.len(), n) {
            let (mat, scale) = crate::model::word_product(fam, &w).unwrap();
            let v = mat.mul_vec(x.amplitudes());
            let nsq: f64 = v.iter().map(|z| z.norm_sqr()).sum();
            if nsq > 0.0 {
                atoms.push((ProjectiveState::from_vector(&v).unwrap(), nsq * (2.0 * scale).exp()));
            }
        }
        DiscreteMeasure::normalized(atoms).unwrap().coalesce(1e-12)
    }

    #[test]
    fn pushforward_matches_word_enumeration() {
        let fam = crate::reference::random_valid_family(2, 2, 4).unwrap();
        let x = ProjectiveState::from_real(&[0.8, 0.6]).unwrap();
        let r = 20_000;
        for n in 1..=3 {
            let exact = enumerate_pushforward(&fam, &x, n);
            let est = cesaro_pushforward(&fam, &DiscreteMeasure::dirac(x.clone()), 1, n, r, 7).unwrap();
            let w = wasserstein1(&est, &exact).unwrap();
            assert!(w <= 3.0 / (r as f64).sqrt(), "n={n}: {w}");
        }
    }

    #[test]
    fn keep_switch_pushforward_distance_to_invariant_measure() {
        let model = KeepSwitchModel::new(0.3).unwrap();
        let fam = model.family();
        let exact = wasserstein1(&enumerate_pushforward(&fam, &model.e_plus(), 10), &model.invariant_measure()).unwrap();
        let est = cesaro_pushforward(&fam, &DiscreteMeasure::dirac(model.e_plus()), 1, 10, 10_000, 2).unwrap();
        let w = wasserstein1(&est, &model.invariant_measure()).unwrap();
        assert!((w - exact).abs() < 3.0 / 100.0, "{w} vs {exact}");
        assert!(exact < 0.25);
    }

    #[test]
    fn fit_needs_two_points() {
        let model = KeepSwitchModel::new(0.3).unwrap();
        let nu = DiscreteMeasure::dirac(model.e_plus());
        let err = fit_lambda(&model.family(), &nu, 1, &[3], 100, &model.invariant_measure(), &FitOptions::default());
        assert!(matches!(err, Err(Error::InsufficientPoints { .. })));
    }

    #[test]
    fn identity_dynamics_do_not_decay() {
        let fam = identity_family(2);
        let nu = DiscreteMeasure::new(vec![
            (ProjectiveState::basis(2, 0), 0.5),
            (ProjectiveState::from_real(&[1.0, 1.0]).unwrap(), 0.5),
        ])
        .unwrap();
        let reference = DiscreteMeasure::dirac(ProjectiveState::basis(2, 1));
        let fit = fit_lambda(&fam, &nu, 1, &[1, 2, 3, 4, 5], 4000, &reference, &FitOptions::default()).unwrap();
        assert!(fit.slope.abs() < 0.05, "slope {}", fit.slope);
        let mut buf = Vec::new();
        fit.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("n,W1,stderr\n1,"));
    }
}
