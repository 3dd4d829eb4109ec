//! The Markov kernel `Π` acting on functions, the truncated Cesàro solution
//! of the Poisson equation `(Id − Π) g̃ = ḡ`, the conditional variance `h`,
//! `γ²` and the martingale decomposition of partial sums.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use serde::{Serialize, Serializer};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::linalg;
use crate::measures::DiscreteMeasure;
use crate::model::{Amplitudes, ComplexMatrix, KrausFamily, ProjectiveState, StateKey, C64, ZERO_BRANCH_FLOOR};
use crate::rng;

/// Declared Hölder regularity `|g(x̂) − g(ŷ)| ≤ C d(x̂, ŷ)^α`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Holder {
    pub exponent: f64,
    pub constant: f64,
}

type Evaluator = Arc<dyn Fn(&ProjectiveState) -> f64 + Send + Sync>;

/// A real observable on projective space.
#[derive(Clone)]
pub struct Observable {
    name: String,
    holder: Holder,
    sup_bound: Option<f64>,
    f: Evaluator,
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Observable").field("name", &self.name).field("holder", &self.holder).finish()
    }
}

impl Serialize for Observable {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            name: &'a str,
            holder_exponent: f64,
            holder_constant: f64,
        }
        Repr { name: &self.name, holder_exponent: self.holder.exponent, holder_constant: self.holder.constant }
            .serialize(s)
    }
}

impl Observable {
    pub fn new<F>(name: impl Into<String>, holder: Holder, f: F) -> Result<Self>
    where
        F: Fn(&ProjectiveState) -> f64 + Send + Sync + 'static,
    {
        if !(holder.exponent > 0.0 && holder.exponent <= 1.0) || !(holder.constant >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "Hölder exponent must lie in (0, 1] and constant be ≥ 0, got {:?}",
                holder
            )));
        }
        Ok(Self { name: name.into(), holder, sup_bound: None, f: Arc::new(f) })
    }

    /// Declares `sup |g|`; used to bound pruning errors.
    pub fn with_sup_bound(mut self, bound: f64) -> Self {
        self.sup_bound = Some(bound);
        self
    }

    /// `x̂ ↦ |⟨e_k, x⟩|²`.
    pub fn population(k: usize) -> Self {
        Self {
            name: format!("population:{k}"),
            holder: Holder { exponent: 1.0, constant: 1.0 },
            sup_bound: Some(1.0),
            f: Arc::new(move |x: &ProjectiveState| x.population(k)),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            name: format!("constant:{c}"),
            holder: Holder { exponent: 1.0, constant: 0.0 },
            sup_bound: Some(c.abs()),
            f: Arc::new(move |_: &ProjectiveState| c),
        }
    }

    /// `x̂ ↦ ⟨x, X x⟩` for hermitian `X`.
    pub fn quadratic_form(name: impl Into<String>, x: ComplexMatrix) -> Result<Self> {
        if !x.is_hermitian(1e-12) {
            return Err(Error::InvalidParameter("quadratic form needs a hermitian matrix".into()));
        }
        let (vals, _) = linalg::hermitian_eigen(&x);
        let (lo, hi) = (vals[0], *vals.last().expect("dimension ≥ 1"));
        Ok(Self {
            name: name.into(),
            // ⟨x,Xx⟩ − ⟨y,Xy⟩ = tr X(P − Q) and P − Q has eigenvalues ±d(x̂,ŷ).
            holder: Holder { exponent: 1.0, constant: hi - lo },
            sup_bound: Some(lo.abs().max(hi.abs())),
            f: Arc::new(move |s: &ProjectiveState| {
                let v = x.mul_vec(s.amplitudes());
                s.amplitudes().iter().zip(&v).map(|(a, b)| (a.conj() * b).re).sum()
            }),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn holder(&self) -> Holder {
        self.holder
    }

    pub fn sup_bound(&self) -> Option<f64> {
        self.sup_bound
    }

    pub fn eval(&self, x: &ProjectiveState) -> f64 {
        (self.f)(x)
    }

    /// Largest observed `|g(x̂) − g(ŷ)| / (C d^α)` over random pairs, half of
    /// them close together. Values ≤ 1 are consistent with the declaration.
    pub fn holder_spot_check(&self, dim: usize, pairs: usize, seed: u64) -> f64 {
        let mut rng = rng::stream(seed, 0);
        let mut worst: f64 = 0.0;
        for k in 0..pairs {
            let x = ProjectiveState::random(dim, &mut rng);
            let y = if k % 2 == 0 {
                ProjectiveState::random(dim, &mut rng)
            } else {
                let e = ProjectiveState::random(dim, &mut rng);
                let t = 1e-3 * (k as f64 + 1.0) / pairs as f64;
                let v: Vec<C64> = x.amplitudes().iter().zip(e.amplitudes()).map(|(a, b)| a + b * t).collect();
                ProjectiveState::from_vector(&v).expect("non-zero perturbation")
            };
            let d = x.distance(&y);
            if d == 0.0 {
                continue;
            }
            let diff = (self.eval(&x) - self.eval(&y)).abs();
            let bound = self.holder.constant * d.powf(self.holder.exponent);
            let ratio = if bound > 0.0 {
                diff / bound
            } else if diff > 1e-12 {
                f64::INFINITY
            } else {
                0.0
            };
            worst = worst.max(ratio);
        }
        worst
    }
}

/// `Πg(x̂) = Σ_i ‖A_i x‖² g(A_i·x̂)`, skipping branches below the zero floor.
pub fn apply_pi<F: Fn(&ProjectiveState) -> f64>(family: &KrausFamily, g: F, x: &ProjectiveState) -> f64 {
    let mut img: Amplitudes = SmallVec::from_elem(C64::new(0.0, 0.0), x.dim());
    let mut acc = 0.0;
    for op in family.operators() {
        op.mul_vec_into(x.amplitudes(), &mut img);
        let w: f64 = img.iter().map(|z| z.norm_sqr()).sum();
        if w < ZERO_BRANCH_FLOOR {
            continue;
        }
        acc += w * g(&ProjectiveState::from_unnormalized(&img, w));
    }
    acc
}

/// Default grid on which coincident atoms of `δ_x Π^k` are merged.
pub const DEFAULT_MERGE_RESOLUTION: f64 = 1.0 / (1u64 << 40) as f64;
pub const DEFAULT_PRUNE_EPS: f64 = 1e-12;

/// Level-by-level propagation of `δ_x Π^k` as a weighted atom list.
pub(crate) struct LevelPropagator<'a> {
    family: &'a KrausFamily,
    atoms: Vec<(ProjectiveState, f64)>,
    pruned: f64,
    prune_eps: f64,
    max_atoms: usize,
    resolution: f64,
    displacement: f64,
}

impl<'a> LevelPropagator<'a> {
    pub(crate) fn new(family: &'a KrausFamily, x: &ProjectiveState, prune_eps: f64, max_atoms: usize, resolution: f64) -> Self {
        Self { family, atoms: vec![(x.clone(), 1.0)], pruned: 0.0, prune_eps, max_atoms, resolution, displacement: 0.0 }
    }

    /// `(Σ w g(atom), Σ w)` at the current level.
    pub(crate) fn level_sum<F: Fn(&ProjectiveState) -> f64>(&self, g: F) -> (f64, f64) {
        self.atoms.iter().fold((0.0, 0.0), |(v, m), (s, w)| (v + w * g(s), m + w))
    }

    pub(crate) fn pruned_mass(&self) -> f64 {
        self.pruned
    }

    /// `Σ w · d(atom, representative)` accumulated by grid coarsening.
    pub(crate) fn displacement(&self) -> f64 {
        self.displacement
    }

    /// Merges atoms sharing a cell of the coarser grid into the heaviest one.
    fn coarsen(&mut self, mut atoms: Vec<(ProjectiveState, f64)>, resolution: f64) -> Vec<(ProjectiveState, f64)> {
        atoms.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut index: HashMap<StateKey, usize> = HashMap::with_capacity(atoms.len());
        let mut out: Vec<(ProjectiveState, f64)> = Vec::new();
        for (y, w) in atoms {
            match index.entry(y.grid_key(resolution)) {
                std::collections::hash_map::Entry::Occupied(e) => {
                    let rep = &mut out[*e.get()];
                    self.displacement += w * rep.0.distance(&y);
                    rep.1 += w;
                }
                std::collections::hash_map::Entry::Vacant(e) => {
                    e.insert(out.len());
                    out.push((y, w));
                }
            }
        }
        out
    }

    pub(crate) fn advance(&mut self) {
        let d = self.family.dim();
        let mut img: Amplitudes = SmallVec::from_elem(C64::new(0.0, 0.0), d);
        let mut index: HashMap<StateKey, usize> = HashMap::with_capacity(self.atoms.len() * self.family.len());
        let mut next: Vec<(ProjectiveState, f64)> = Vec::with_capacity(self.atoms.len() * self.family.len());
        for (x, wx) in &self.atoms {
            for op in self.family.operators() {
                op.mul_vec_into(x.amplitudes(), &mut img);
                let b: f64 = img.iter().map(|z| z.norm_sqr()).sum();
                if b < ZERO_BRANCH_FLOOR {
                    continue;
                }
                let w = wx * b;
                if w < self.prune_eps {
                    self.pruned += w;
                    continue;
                }
                let y = ProjectiveState::from_unnormalized(&img, b);
                match index.entry(y.grid_key(self.resolution)) {
                    std::collections::hash_map::Entry::Occupied(e) => next[*e.get()].1 += w,
                    std::collections::hash_map::Entry::Vacant(e) => {
                        e.insert(next.len());
                        next.push((y, w));
                    }
                }
            }
        }
        // Once coarsened, later levels keep merging on the coarser grid.
        while next.len() > self.max_atoms {
            self.resolution *= 2.0;
            next = self.coarsen(next, self.resolution);
        }
        self.atoms = next;
    }
}

/// Result of [`iterate_pi`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Iterate {
    pub value: f64,
    pub pruned_mass: f64,
}

/// `Π^k g(x̂)` by weighted tree expansion, dropping subtrees lighter than `prune_eps`.
/// The error is at most `sup|g| · pruned_mass`.
pub fn iterate_pi<F: Fn(&ProjectiveState) -> f64>(
    family: &KrausFamily,
    g: F,
    x: &ProjectiveState,
    k: usize,
    prune_eps: f64,
) -> Iterate {
    let mut prop = LevelPropagator::new(family, x, prune_eps, usize::MAX, DEFAULT_MERGE_RESOLUTION);
    for _ in 0..k {
        prop.advance();
    }
    Iterate { value: prop.level_sum(&g).0, pruned_mass: prop.pruned_mass() }
}

/// Where `E_{ν_inv}(g)` comes from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MeanSource {
    /// Known in closed form (reference models).
    Exact(f64),
    /// Ergodic average along a path, with its standard error.
    Ergodic { value: f64, std_error: f64 },
    /// Limit of the Cesàro averages of `Π^k g` at the probe states.
    KernelLimit,
}

impl MeanSource {
    fn label(&self) -> &'static str {
        match self {
            MeanSource::Exact(_) => "exact",
            MeanSource::Ergodic { .. } => "ergodic",
            MeanSource::KernelLimit => "kernel_limit",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoissonConfig {
    pub period: usize,
    pub tol: f64,
    pub prune_eps: f64,
    pub max_atoms: usize,
    pub max_blocks: usize,
    pub merge_resolution: f64,
    /// Upper bound on memoized `g̃` values.
    pub memo_capacity: usize,
}

impl Default for PoissonConfig {
    fn default() -> Self {
        Self {
            period: 1,
            tol: 1e-4,
            prune_eps: DEFAULT_PRUNE_EPS,
            max_atoms: 1 << 17,
            max_blocks: 200,
            merge_resolution: DEFAULT_MERGE_RESOLUTION,
            memo_capacity: 1 << 21,
        }
    }
}

/// Serializable summary of a Poisson solve.
#[derive(Clone, Debug, Serialize)]
pub struct PoissonDiagnostics {
    pub observable: String,
    pub mean: f64,
    pub mean_source: &'static str,
    pub mean_std_error: Option<f64>,
    pub period: usize,
    /// Number of Cesàro blocks `N`.
    pub blocks: usize,
    /// Deepest level `Π^k` used by an evaluation.
    pub depth: usize,
    /// `sup_probe |Σ_{k in block b} Π^k ḡ|` for each block inspected.
    pub block_increments: Vec<f64>,
    pub decay_ratio: Option<f64>,
    pub probe_residuals: Vec<f64>,
    pub residual_bound: f64,
    pub max_pruned_mass: f64,
    /// Largest `Σ w · d` moved by grid coarsening at a probe.
    pub max_displacement: f64,
    pub tol: f64,
}

#[derive(Clone, Copy, Debug)]
struct Eval {
    value: f64,
    residual: f64,
}

/// On-demand evaluator for the Cesàro solution `g̃` at a fixed truncation depth.
pub struct PoissonSolution {
    family: KrausFamily,
    g: Observable,
    mean: f64,
    cfg: PoissonConfig,
    blocks: usize,
    sup_centered: f64,
    diagnostics: PoissonDiagnostics,
    memo: RwLock<HashMap<StateKey, Eval>>,
}

impl fmt::Debug for PoissonSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PoissonSolution").field("diagnostics", &self.diagnostics).finish()
    }
}

/// Per-level `(Σ w g, Σ w)` plus the pruned mass and coarsening displacement.
struct Levels {
    raw: Vec<f64>,
    mass: Vec<f64>,
    pruned: f64,
    displacement: f64,
}

impl Levels {
    fn centered(&self, k: usize, mean: f64) -> f64 {
        self.raw[k] - mean * self.mass[k]
    }

    /// `(1/m) Σ_r Σ_{k<Nm+r} Π^k ḡ` and the tail `(1/m) Σ_r Π^{Nm+r} ḡ`.
    fn cesaro(&self, mean: f64, blocks: usize, m: usize) -> (f64, f64) {
        let mut partial = 0.0;
        let mut value = 0.0;
        let mut tail = 0.0;
        let start = blocks * m;
        for k in 0..start + m {
            let v = self.centered(k, mean);
            if k >= start {
                value += partial;
                tail += v;
            }
            partial += v;
        }
        (value / m as f64, tail / m as f64)
    }
}

fn propagate_levels(family: &KrausFamily, g: &Observable, x: &ProjectiveState, levels: usize, cfg: &PoissonConfig) -> Levels {
    let mut prop = LevelPropagator::new(family, x, cfg.prune_eps, cfg.max_atoms, cfg.merge_resolution);
    let mut raw = Vec::with_capacity(levels);
    let mut mass = Vec::with_capacity(levels);
    for k in 0..levels {
        if k > 0 {
            prop.advance();
        }
        let (v, w) = prop.level_sum(|s| g.eval(s));
        raw.push(v);
        mass.push(w);
    }
    Levels { raw, mass, pruned: prop.pruned_mass(), displacement: prop.displacement() }
}

/// Probe set: basis states, the uniform superposition, then seeded random states.
pub fn default_probes(dim: usize, count: usize, seed: u64) -> Vec<ProjectiveState> {
    let mut probes: Vec<ProjectiveState> = (0..dim).map(|k| ProjectiveState::basis(dim, k)).collect();
    probes.push(ProjectiveState::from_real(&vec![1.0; dim]).expect("non-zero"));
    let mut rng = rng::stream(seed, 0);
    while probes.len() < count.max(dim + 1) {
        probes.push(ProjectiveState::random(dim, &mut rng));
    }
    probes
}

/// Solves `(Id − Π) g̃ = g − E_{ν_inv}(g)` by the truncated Cesàro series
/// `g̃ = (1/m) Σ_{r<m} Σ_{k<Nm+r} Π^k ḡ`, choosing `N` on the probe states.
///
/// No additive shift is applied: the Cesàro limit already has zero
/// `ν_inv`-mean.
pub fn solve_poisson(
    family: &KrausFamily,
    g: &Observable,
    mean: MeanSource,
    probes: &[ProjectiveState],
    cfg: &PoissonConfig,
) -> Result<PoissonSolution> {
    family.ensure_stochastic()?;
    if cfg.period == 0 || !(cfg.tol > 0.0) {
        return Err(Error::InvalidParameter("period must be ≥ 1 and tol > 0".into()));
    }
    if probes.is_empty() {
        return Err(Error::InvalidParameter("at least one probe state is required".into()));
    }
    if let Some(p) = probes.iter().find(|p| p.dim() != family.dim()) {
        return Err(Error::DimensionMismatch { expected: family.dim(), found: p.dim() });
    }
    let m = cfg.period;
    let mut props: Vec<LevelPropagator<'_>> = probes
        .iter()
        .map(|x| LevelPropagator::new(family, x, cfg.prune_eps, cfg.max_atoms, cfg.merge_resolution))
        .collect();
    let mut raw: Vec<Vec<f64>> = vec![Vec::new(); probes.len()];
    let mut mass: Vec<Vec<f64>> = vec![Vec::new(); probes.len()];
    let mut increments = Vec::new();
    let mut current_mean = 0.0;
    let mut converged_at = None;

    for b in 0..=cfg.max_blocks {
        let level_data: Vec<(Vec<f64>, Vec<f64>)> = props
            .par_iter_mut()
            .map(|prop| {
                let mut r = Vec::with_capacity(m);
                let mut w = Vec::with_capacity(m);
                for j in 0..m {
                    if b > 0 || j > 0 {
                        prop.advance();
                    }
                    let (v, s) = prop.level_sum(|x| g.eval(x));
                    r.push(v);
                    w.push(s);
                }
                (r, w)
            })
            .collect();
        for (i, (r, w)) in level_data.into_iter().enumerate() {
            raw[i].extend(r);
            mass[i].extend(w);
        }
        let block_raw: Vec<(f64, f64)> = (0..probes.len())
            .map(|i| (raw[i][b * m..].iter().sum::<f64>(), mass[i][b * m..].iter().sum::<f64>()))
            .collect();
        current_mean = match mean {
            MeanSource::Exact(v) | MeanSource::Ergodic { value: v, .. } => v,
            MeanSource::KernelLimit => {
                block_raw.iter().map(|(v, w)| if *w > 0.0 { v / w } else { 0.0 }).sum::<f64>() / probes.len() as f64
            }
        };
        let sup = block_raw.iter().map(|(v, w)| (v - current_mean * w).abs()).fold(0.0, f64::max);
        increments.push(sup);
        if sup <= f64::EPSILON * 16.0 {
            converged_at = Some(b);
            break;
        }
        if b >= 1 && sup < cfg.tol / 2.0 {
            let lookback = increments.len().min(3);
            let ratio = increments[increments.len() - lookback..]
                .windows(2)
                .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 1.0 })
                .fold(0.0, f64::max);
            if ratio < 1.0 && ratio / (1.0 - ratio) * sup < cfg.tol / 2.0 {
                converged_at = Some(b);
                break;
            }
        }
    }
    let blocks = match converged_at {
        Some(b) => b,
        None => {
            return Err(Error::NoConvergence {
                blocks: cfg.max_blocks,
                last_increment: *increments.last().unwrap_or(&f64::NAN),
            })
        }
    };

    let decay_ratio = {
        let ratios: Vec<f64> = increments.windows(2).filter(|w| w[0] > 0.0).map(|w| w[1] / w[0]).collect();
        if ratios.is_empty() {
            None
        } else {
            Some(ratios.iter().sum::<f64>() / ratios.len() as f64)
        }
    };
    let sup_centered = match g.sup_bound() {
        Some(s) => s + current_mean.abs(),
        None => probes.iter().map(|x| (g.eval(x) - current_mean).abs()).fold(0.0, f64::max),
    };
    let max_pruned = props.iter().map(|p| p.pruned_mass()).fold(0.0, f64::max);
    let (mean_source, mean_std_error) = match mean {
        MeanSource::Ergodic { std_error, .. } => (mean.label(), Some(std_error)),
        _ => (mean.label(), None),
    };
    let diagnostics = PoissonDiagnostics {
        observable: g.name().to_string(),
        mean: current_mean,
        mean_source,
        mean_std_error,
        period: m,
        blocks,
        depth: blocks * m + m - 1,
        block_increments: increments,
        decay_ratio,
        probe_residuals: Vec::new(),
        residual_bound: 0.0,
        max_pruned_mass: max_pruned,
        max_displacement: props.iter().map(|p| p.displacement()).fold(0.0, f64::max),
        tol: cfg.tol,
    };
    let mut sol = PoissonSolution {
        family: family.clone(),
        g: g.clone(),
        mean: current_mean,
        cfg: cfg.clone(),
        blocks,
        sup_centered,
        diagnostics,
        memo: RwLock::new(HashMap::new()),
    };
    let mut residuals = Vec::with_capacity(probes.len());
    {
        let mut memo = sol.memo.write().expect("memo lock");
        for (i, x) in probes.iter().enumerate() {
            let levels = Levels {
                raw: raw[i].clone(),
                mass: mass[i].clone(),
                pruned: props[i].pruned_mass(),
                displacement: props[i].displacement(),
            };
            let e = sol.eval_from_levels(&levels);
            residuals.push(e.residual);
            memo.insert(x.grid_key(cfg.merge_resolution), e);
        }
    }
    sol.diagnostics.residual_bound = residuals.iter().copied().fold(0.0, f64::max);
    sol.diagnostics.probe_residuals = residuals;
    Ok(sol)
}

impl PoissonSolution {
    fn eval_from_levels(&self, levels: &Levels) -> Eval {
        let (value, tail) = levels.cesaro(self.mean, self.blocks, self.cfg.period);
        let holder = self.g.holder();
        let moved = holder.constant * levels.displacement.powf(holder.exponent);
        Eval { value, residual: tail.abs() + self.sup_centered * levels.pruned + moved }
    }

    fn evaluate(&self, x: &ProjectiveState) -> Eval {
        let key = x.grid_key(self.cfg.merge_resolution);
        if let Some(e) = self.memo.read().expect("memo lock").get(&key) {
            return *e;
        }
        let levels = propagate_levels(&self.family, &self.g, x, self.blocks * self.cfg.period + self.cfg.period, &self.cfg);
        let e = self.eval_from_levels(&levels);
        let mut memo = self.memo.write().expect("memo lock");
        if memo.len() < self.cfg.memo_capacity {
            memo.insert(key, e);
        }
        e
    }

    /// `g̃(x̂)`.
    pub fn eval(&self, x: &ProjectiveState) -> f64 {
        self.evaluate(x).value
    }

    /// Bound on `|(Id − Π) g̃(x̂) − ḡ(x̂)|` for the truncated series.
    pub fn residual_bound_at(&self, x: &ProjectiveState) -> f64 {
        self.evaluate(x).residual
    }

    /// `ḡ(x̂) = g(x̂) − E_{ν_inv}(g)`.
    pub fn centered(&self, x: &ProjectiveState) -> f64 {
        self.g.eval(x) - self.mean
    }

    /// `Π g̃(x̂)`.
    pub fn apply_pi_tilde(&self, x: &ProjectiveState) -> f64 {
        apply_pi(&self.family, |y| self.eval(y), x)
    }

    /// `|(Id − Π) g̃(x̂) − ḡ(x̂)|` with `Π g̃` evaluated independently at the children.
    pub fn poisson_residual(&self, x: &ProjectiveState) -> f64 {
        (self.eval(x) - self.apply_pi_tilde(x) - self.centered(x)).abs()
    }

    /// `h(x̂) = Π g̃²(x̂) − (Π g̃(x̂))²`, clipped at 0.
    pub fn variance_h(&self, x: &ProjectiveState) -> f64 {
        let mut first = 0.0;
        let mut second = 0.0;
        for op in self.family.operators() {
            let mut img: Amplitudes = SmallVec::from_elem(C64::new(0.0, 0.0), x.dim());
            op.mul_vec_into(x.amplitudes(), &mut img);
            let w: f64 = img.iter().map(|z| z.norm_sqr()).sum();
            if w < ZERO_BRANCH_FLOOR {
                continue;
            }
            let v = self.eval(&ProjectiveState::from_unnormalized(&img, w));
            first += w * v;
            second += w * v * v;
        }
        (second - first * first).max(0.0)
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn observable(&self) -> &Observable {
        &self.g
    }

    pub fn family(&self) -> &KrausFamily {
        &self.family
    }

    pub fn period(&self) -> usize {
        self.cfg.period
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn residual_bound(&self) -> f64 {
        self.diagnostics.residual_bound
    }

    pub fn diagnostics(&self) -> &PoissonDiagnostics {
        &self.diagnostics
    }

    /// `max − min` of `g̃` over the given states.
    pub fn oscillation(&self, states: &[ProjectiveState]) -> f64 {
        let vals: Vec<f64> = states.iter().map(|x| self.eval(x)).collect();
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    ErgodicH,
    AtomsExact,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct VarianceEstimate {
    pub gamma_sq: f64,
    pub method: VarianceMethod,
    pub n_samples: usize,
    pub std_error: f64,
}

const VARIANCE_BATCHES: usize = 32;

/// `γ² = Σ_atoms weight · h(atom)` for an exactly known `ν_inv`.
pub fn gamma_sq_atoms(sol: &PoissonSolution, nu_inv: &DiscreteMeasure) -> VarianceEstimate {
    let g2: f64 = nu_inv.atoms().iter().map(|(x, w)| w * sol.variance_h(x)).sum();
    VarianceEstimate { gamma_sq: g2.max(0.0), method: VarianceMethod::AtomsExact, n_samples: nu_inv.atoms().len(), std_error: 0.0 }
}

/// `γ² ≈ (1/n) Σ_k h(x̂_k)` along a path, with a batch-means standard error.
pub fn gamma_sq_ergodic(sol: &PoissonSolution, states: &[ProjectiveState]) -> Result<VarianceEstimate> {
    if states.is_empty() {
        return Err(Error::InvalidParameter("ergodic variance needs a non-empty path".into()));
    }
    let h: Vec<f64> = states.iter().map(|x| sol.variance_h(x)).collect();
    let n = h.len();
    let mean = h.iter().sum::<f64>() / n as f64;
    let std_error = batch_means_std_error(&h, VARIANCE_BATCHES);
    Ok(VarianceEstimate { gamma_sq: mean.max(0.0), method: VarianceMethod::ErgodicH, n_samples: n, std_error })
}

/// Standard error of the mean from non-overlapping batch means.
pub(crate) fn batch_means_std_error(x: &[f64], batches: usize) -> f64 {
    let size = x.len() / batches;
    if size == 0 || batches < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = x.chunks_exact(size).take(batches).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (var / batches as f64).sqrt()
}

/// `S_n(ḡ)`, `M_n(g)` and the telescoping defect along one path.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MartingalePath {
    /// `S_n(ḡ) = Σ_{k<n} ḡ(x̂_k)` for `n = 0..=N`.
    pub partial_sums: Vec<f64>,
    /// `M_n = Σ_{k=1..n} g̃(x̂_k) − Π g̃(x̂_{k−1})`.
    pub martingale: Vec<f64>,
    /// `S_n − M_n − (g̃(x̂_0) − g̃(x̂_n))`.
    pub telescoping_defect: Vec<f64>,
}

impl MartingalePath {
    pub fn sup_gap(&self) -> f64 {
        self.partial_sums.iter().zip(&self.martingale).map(|(s, m)| (s - m).abs()).fold(0.0, f64::max)
    }

    pub fn max_defect(&self) -> f64 {
        self.telescoping_defect.iter().map(|d| d.abs()).fold(0.0, f64::max)
    }
}

pub fn martingale_path(sol: &PoissonSolution, states: &[ProjectiveState]) -> MartingalePath {
    let n = states.len().saturating_sub(1);
    let tilde: Vec<f64> = states.iter().map(|x| sol.eval(x)).collect();
    let mut partial_sums = Vec::with_capacity(n + 1);
    let mut martingale = Vec::with_capacity(n + 1);
    let mut telescoping_defect = Vec::with_capacity(n + 1);
    let (mut s, mut m) = (0.0, 0.0);
    partial_sums.push(0.0);
    martingale.push(0.0);
    telescoping_defect.push(0.0);
    for k in 1..=n {
        s += sol.centered(&states[k - 1]);
        m += tilde[k] - sol.apply_pi_tilde(&states[k - 1]);
        partial_sums.push(s);
        martingale.push(m);
        telescoping_defect.push(s - m - (tilde[0] - tilde[k]));
    }
    MartingalePath { partial_sums, martingale, telescoping_defect }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assumptions;
    use crate::model::{Word, word_product};
    use crate::reference::{random_valid_family, KeepSwitchModel};

    fn ks() -> KeepSwitchModel {
        KeepSwitchModel::new(0.3).unwrap()
    }

    #[test]
    fn apply_pi_examples() {
        let model = ks();
        let fam = model.family();
        let ga = Observable::population(0);
        let x = model.atom_a();
        assert!((apply_pi(&fam, |s| ga.eval(s), &x) - 0.3).abs() < 1e-15);
        let c = Observable::constant(2.5);
        let y = ProjectiveState::from_real(&[0.2, -0.9]).unwrap();
        assert!((apply_pi(&fam, |s| c.eval(s), &y) - 2.5).abs() < 1e-14);
        let g = |s: &ProjectiveState| s.population(0).powi(2) + 0.3 * s.population(1);
        let nu = 0.3 * g(&model.atom_a()) + 0.7 * g(&model.atom_b());
        assert!((apply_pi(&fam, g, &model.atom_a()) - nu).abs() < 1e-15);
        assert!((apply_pi(&fam, g, &model.atom_b()) - nu).abs() < 1e-15);
    }

    #[test]
    fn iterate_matches_word_enumeration() {
        let fam = random_valid_family(2, 3, 21).unwrap();
        let g = |s: &ProjectiveState| s.population(0).powi(3) - s.amplitudes()[1].re;
        let x = ProjectiveState::from_real(&[0.4, 0.7]).unwrap();
        for k in 0..4 {
            let mut brute = 0.0;
            for w in Word::all_of_length(fam.len(), k) {
                let (mat, s) = word_product(&fam, &w).unwrap();
                let v = mat.mul_vec(x.amplitudes());
                let nsq: f64 = v.iter().map(|z| z.norm_sqr()).sum::<f64>();
                if nsq == 0.0 {
                    continue;
                }
                brute += nsq * (2.0 * s).exp() * g(&ProjectiveState::from_vector(&v).unwrap());
            }
            let it = iterate_pi(&fam, g, &x, k, 0.0);
            assert!((it.value - brute).abs() < 1e-12, "k={k}: {} vs {brute}", it.value);
            assert_eq!(it.pruned_mass, 0.0);
        }
        let exact = iterate_pi(&fam, g, &x, 10, 0.0);
        let pruned = iterate_pi(&fam, g, &x, 10, 1e-6);
        assert!(pruned.pruned_mass > 0.0);
        assert!((exact.value - pruned.value).abs() <= 1.0 * pruned.pruned_mass + 1e-15);
        assert_eq!(iterate_pi(&fam, g, &x, 0, 0.0).value, g(&x));
    }

    #[test]
    fn keep_switch_poisson_solution_at_atoms() {
        let model = ks();
        let fam = model.family();
        let g = Observable::population(0);
        let probes = default_probes(2, 10, 1);
        for mean in [MeanSource::Exact(0.3), MeanSource::KernelLimit] {
            let sol = solve_poisson(&fam, &g, mean, &probes, &PoissonConfig::default()).unwrap();
            assert!((sol.eval(&model.atom_a()) - 0.7).abs() < 1e-12);
            assert!((sol.eval(&model.atom_b()) + 0.3).abs() < 1e-12);
            assert!((sol.variance_h(&model.atom_a()) - 0.21).abs() < 1e-12);
            let gamma = gamma_sq_atoms(&sol, &model.invariant_measure());
            assert!((gamma.gamma_sq - 0.21).abs() < 1e-12);
            assert!(sol.residual_bound() < 1e-12);
        }
    }

    #[test]
    fn constant_observable_has_zero_solution() {
        let fam = random_valid_family(2, 2, 3).unwrap();
        let g = Observable::constant(1.5);
        let sol = solve_poisson(&fam, &g, MeanSource::Exact(1.5), &default_probes(2, 6, 0), &PoissonConfig::default()).unwrap();
        let x = ProjectiveState::from_real(&[0.1, 0.3]).unwrap();
        assert_eq!(sol.eval(&x), 0.0);
        assert_eq!(sol.variance_h(&x), 0.0);
        assert_eq!(sol.blocks(), 0);
    }

    // For g(x̂) = ⟨x, X x⟩ the kernel acts linearly: Π^k g(x̂) = ⟨x, φ*^k(X) x⟩,
    // so g̃ is the quadratic form of Σ_k φ*^k(X − tr(X ρ_inv) Id).
    fn linear_oracle(fam: &KrausFamily, x: &ComplexMatrix, probe: &ProjectiveState, terms: usize) -> f64 {
        let rho = assumptions::compute_rho_inv(fam).unwrap();
        let mu = x.mul(rho.matrix()).trace().re;
        let d = fam.dim();
        let centered = x.sub(&ComplexMatrix::identity(d).scale(C64::new(mu, 0.0)));
        let mut total = ComplexMatrix::zeros(d);
        let mut term = centered;
        for _ in 0..terms {
            total = total.add(&term);
            term = fam.operators().iter().fold(ComplexMatrix::zeros(d), |acc, a| acc.add(&a.adjoint().mul(&term).mul(a)));
        }
        let v = total.mul_vec(probe.amplitudes());
        probe.amplitudes().iter().zip(&v).map(|(a, b)| (a.conj() * b).re).sum()
    }

    #[test]
    fn random_family_matches_linear_oracle() {
        let fam = random_valid_family(2, 2, 3).unwrap();
        let mut xm = ComplexMatrix::diag(&[0.2, -0.5]);
        xm.set(0, 1, C64::new(0.3, 0.1));
        xm.set(1, 0, C64::new(0.3, -0.1));
        let g = Observable::quadratic_form("q", xm.clone()).unwrap();
        let cfg = PoissonConfig { tol: 1e-5, ..PoissonConfig::default() };
        let sol = solve_poisson(&fam, &g, MeanSource::KernelLimit, &default_probes(2, 8, 2), &cfg).unwrap();
        let mut rng = rng::stream(77, 0);
        for _ in 0..10 {
            let x = ProjectiveState::random(2, &mut rng);
            let oracle = linear_oracle(&fam, &xm, &x, 2000);
            assert!((sol.eval(&x) - oracle).abs() < 1e-4, "{} vs {oracle}", sol.eval(&x));
            assert!(sol.poisson_residual(&x) < 1e-4);
        }
    }

    #[test]
    fn two_probe_sets_differ_by_a_constant() {
        let fam = random_valid_family(2, 2, 3).unwrap();
        let g = Observable::population(1);
        let cfg = PoissonConfig { tol: 1e-5, ..PoissonConfig::default() };
        let s1 = solve_poisson(&fam, &g, MeanSource::KernelLimit, &default_probes(2, 6, 10), &cfg).unwrap();
        let s2 = solve_poisson(&fam, &g, MeanSource::KernelLimit, &default_probes(2, 9, 11), &cfg).unwrap();
        let mut rng = rng::stream(5, 5);
        let diffs: Vec<f64> = (0..20)
            .map(|_| {
                let x = ProjectiveState::random(2, &mut rng);
                s1.eval(&x) - s2.eval(&x)
            })
            .collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64;
        assert!(var < 1e-6);
    }

    #[test]
    fn increments_decay_geometrically() {
        let fam = random_valid_family(2, 2, 3).unwrap();
        let sol = solve_poisson(&fam, &Observable::population(0), MeanSource::KernelLimit, &default_probes(2, 6, 3), &PoissonConfig::default())
            .unwrap();
        assert!(sol.diagnostics().decay_ratio.unwrap() < 1.0);
        let json = serde_json::to_string(sol.diagnostics()).unwrap();
        assert!(json.contains("\"blocks\""));
    }

    #[test]
    fn wrong_mean_does_not_converge() {
        let fam = random_valid_family(2, 2, 3).unwrap();
        let cfg = PoissonConfig { max_blocks: 30, ..PoissonConfig::default() };
        let err = solve_poisson(&fam, &Observable::population(0), MeanSource::Exact(5.0), &default_probes(2, 4, 0), &cfg).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { .. }));
    }

    #[test]
    fn martingale_identity_on_keep_switch() {
        let model = ks();
        let fam = model.family();
        let sol = solve_poisson(&fam, &Observable::population(0), MeanSource::Exact(0.3), &default_probes(2, 4, 0), &PoissonConfig::default())
            .unwrap();
        let path = crate::engine::sample_trajectory(&crate::engine::TrajectoryConfig::new(&fam, model.e_plus(), 500, 4)).unwrap();
        let mp = martingale_path(&sol, &path.states);
        assert_eq!(mp.martingale[0], 0.0);
        assert!(mp.max_defect() < 1e-10);
        assert!(mp.sup_gap() <= 1.0 + 1e-6);
    }

    #[test]
    fn holder_declarations_hold() {
        assert!(Observable::population(1).holder_spot_check(3, 200, 1) <= 1.0 + 1e-9);
        let mut xm = ComplexMatrix::diag(&[1.0, -2.0]);
        xm.set(0, 1, C64::new(0.5, 0.5));
        xm.set(1, 0, C64::new(0.5, -0.5));
        assert!(Observable::quadratic_form("q", xm).unwrap().holder_spot_check(2, 200, 2) <= 1.0 + 1e-9);
        assert_eq!(Observable::constant(3.0).holder_spot_check(2, 20, 3), 0.0);
        assert!(Observable::new("bad", Holder { exponent: 1.5, constant: 1.0 }, |_| 0.0).is_err());
    }

    #[test]
    fn feller_continuity() {
        let fam = random_valid_family(2, 3, 9).unwrap();
        let g = Observable::population(0);
        let x = ProjectiveState::from_real(&[0.6, 0.8]).unwrap();
        let y = ProjectiveState::from_real(&[0.6 + 1e-6, 0.8]).unwrap();
        let d = x.distance(&y);
        assert!(d < 1e-4);
        let diff = (apply_pi(&fam, |s| g.eval(s), &x) - apply_pi(&fam, |s| g.eval(s), &y)).abs();
        assert!(diff < 10.0 * d);
    }
}
