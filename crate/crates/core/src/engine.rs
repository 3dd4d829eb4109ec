//! Trajectory sampling, outcome-word probabilities and the maximum-likelihood
//! estimators of the initial and current state.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use smallvec::SmallVec;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::measures::DiscreteMeasure;
use crate::model::{
    word_product, Amplitudes, ComplexMatrix, DensityMatrix, KrausFamily, ProjectiveState, Word, C64, ZERO_BRANCH_FLOOR,
};
use crate::rng::{self, StreamRng};

/// Initial condition of a trajectory.
#[derive(Clone, Debug)]
pub enum Initial {
    State(ProjectiveState),
    Measure(DiscreteMeasure),
}

impl From<ProjectiveState> for Initial {
    fn from(s: ProjectiveState) -> Self {
        Initial::State(s)
    }
}

impl From<DiscreteMeasure> for Initial {
    fn from(m: DiscreteMeasure) -> Self {
        Initial::Measure(m)
    }
}

impl Initial {
    pub fn dim(&self) -> usize {
        match self {
            Initial::State(s) => s.dim(),
            Initial::Measure(m) => m.dim(),
        }
    }

    fn draw(&self, rng: &mut StreamRng) -> ProjectiveState {
        match self {
            Initial::State(s) => s.clone(),
            Initial::Measure(m) => {
                let atoms = m.atoms();
                let total: f64 = atoms.iter().map(|(_, w)| w).sum();
                let u = rng.random::<f64>() * total;
                let mut acc = 0.0;
                for (s, w) in atoms {
                    acc += w;
                    if u < acc {
                        return s.clone();
                    }
                }
                atoms.last().expect("measures are non-empty").0.clone()
            }
        }
    }
}

/// What to do when the sampled branch has weight below the zero-branch floor.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroBranchPolicy {
    /// Fail with `ZeroBranch`.
    #[default]
    Abort,
    /// Redraw among the branches above the floor.
    Resample,
}

#[derive(Clone, Debug)]
pub struct TrajectoryConfig<'a> {
    pub family: &'a KrausFamily,
    pub initial: Initial,
    pub n_steps: usize,
    pub master_seed: u64,
    pub replica_index: u64,
    pub zero_branch: ZeroBranchPolicy,
}

impl<'a> TrajectoryConfig<'a> {
    pub fn new(family: &'a KrausFamily, initial: impl Into<Initial>, n_steps: usize, master_seed: u64) -> Self {
        Self { family, initial: initial.into(), n_steps, master_seed, replica_index: 0, zero_branch: ZeroBranchPolicy::Abort }
    }

    pub fn with_zero_branch(&self, policy: ZeroBranchPolicy) -> Self {
        Self { zero_branch: policy, ..self.clone() }
    }

    pub fn with_replica(&self, replica_index: u64) -> Self {
        Self { replica_index, ..self.clone() }
    }

    fn validate(&self) -> Result<()> {
        self.family.ensure_stochastic()?;
        if self.initial.dim() != self.family.dim() {
            return Err(Error::DimensionMismatch { expected: self.family.dim(), found: self.initial.dim() });
        }
        Ok(())
    }

    /// Streaming sampler positioned at `x̂_0`.
    pub fn start(&self) -> Result<Trajectory<'a>> {
        self.validate()?;
        let mut t = Trajectory::start_unchecked(self.family, &self.initial, self.master_seed, self.replica_index);
        t.zero_branch = self.zero_branch;
        Ok(t)
    }
}

/// Streaming Markov chain `x̂_{k+1} = A_i · x̂_k`, branch `i` with probability `‖A_i x_k‖²`.
pub struct Trajectory<'a> {
    family: &'a KrausFamily,
    state: ProjectiveState,
    rng: StreamRng,
    steps: usize,
    images: Vec<Amplitudes>,
    weights: Vec<f64>,
    zero_branch: ZeroBranchPolicy,
}

impl<'a> Trajectory<'a> {
    pub(crate) fn start_unchecked(family: &'a KrausFamily, initial: &Initial, seed: u64, replica: u64) -> Self {
        let mut rng = rng::stream(seed, replica);
        let state = initial.draw(&mut rng);
        let d = family.dim();
        Self {
            family,
            state,
            rng,
            steps: 0,
            images: vec![SmallVec::from_elem(C64::new(0.0, 0.0), d); family.len()],
            weights: vec![0.0; family.len()],
            zero_branch: ZeroBranchPolicy::Abort,
        }
    }

    pub fn state(&self) -> &ProjectiveState {
        &self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Moves to the next state, returning `(branch, ‖A_branch x‖²)`.
    pub fn step(&mut self) -> Result<(usize, f64)> {
        let x = self.state.amplitudes();
        let mut total = 0.0;
        for ((op, img), w) in self.family.operators().iter().zip(self.images.iter_mut()).zip(self.weights.iter_mut()) {
            op.mul_vec_into(x, img);
            *w = img.iter().map(|z| z.norm_sqr()).sum();
            total += *w;
        }
        let u = self.rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (i, &w) in self.weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            acc += w;
            chosen = Some(i);
            if u < acc {
                break;
            }
        }
        let mut i = chosen.ok_or(Error::ZeroBranch { weight: 0.0 })?;
        let mut w = self.weights[i];
        if w < ZERO_BRANCH_FLOOR {
            if self.zero_branch == ZeroBranchPolicy::Abort {
                return Err(Error::ZeroBranch { weight: w });
            }
            let live: f64 = self.weights.iter().filter(|&&v| v >= ZERO_BRANCH_FLOOR).sum();
            if live <= 0.0 {
                return Err(Error::ZeroBranch { weight: w });
            }
            let u = self.rng.random::<f64>() * live;
            let mut acc = 0.0;
            for (j, &v) in self.weights.iter().enumerate() {
                if v >= ZERO_BRANCH_FLOOR {
                    acc += v;
                    (i, w) = (j, v);
                    if u < acc {
                        break;
                    }
                }
            }
        }
        self.state = ProjectiveState::from_unnormalized(&self.images[i], w);
        self.steps += 1;
        Ok((i, w))
    }
}

/// A fully recorded path `x̂_0 … x̂_n`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryPath {
    pub states: Vec<ProjectiveState>,
    pub word: Word,
    /// `‖V_k x_{k−1}‖²` for `k = 1..n`.
    pub step_weights: Vec<f64>,
    /// `ln ‖W_n x_0‖²` for `n = 0..=N`, from the rescaled running product.
    pub log_w_norm: Vec<f64>,
}

impl TrajectoryPath {
    pub fn len(&self) -> usize {
        self.word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word.is_empty()
    }

    /// Writes `step,branch_index,weight,re_0,im_0,…,distance_to_estimator`.
    /// Step 0 has empty branch and weight fields.
    pub fn write_csv<W: Write>(&self, family: &KrausFamily, out: &mut W) -> Result<()> {
        let d = family.dim();
        let estimates = evolved_estimator(family, self)?;
        write!(out, "step,branch_index,weight")?;
        for k in 0..d {
            write!(out, ",re_{k},im_{k}")?;
        }
        writeln!(out, ",distance_to_estimator")?;
        for (n, state) in self.states.iter().enumerate() {
            if n == 0 {
                write!(out, "0,,")?;
            } else {
                write!(out, "{n},{},{}", self.word.0[n - 1], self.step_weights[n - 1])?;
            }
            for z in state.amplitudes() {
                write!(out, ",{},{}", z.re, z.im)?;
            }
            writeln!(out, ",{}", state.distance(&estimates[n]))?;
        }
        Ok(())
    }
}

struct RunningProduct {
    matrix: ComplexMatrix,
    log_scale: f64,
}

impl RunningProduct {
    fn new(dim: usize) -> Self {
        Self { matrix: ComplexMatrix::identity(dim), log_scale: 0.0 }
    }

    fn push(&mut self, op: &ComplexMatrix) {
        self.matrix = op.mul(&self.matrix);
        let s = self.matrix.max_abs();
        if s > 0.0 {
            self.matrix = self.matrix.scale(C64::new(1.0 / s, 0.0));
            self.log_scale += s.ln();
        } else {
            self.log_scale = f64::NEG_INFINITY;
        }
    }

    fn log_norm_sq(&self, x: &ProjectiveState) -> f64 {
        let v = self.matrix.mul_vec(x.amplitudes());
        v.iter().map(|z| z.norm_sqr()).sum::<f64>().ln() + 2.0 * self.log_scale
    }
}

/// Samples and records a full path.
pub fn sample_trajectory(cfg: &TrajectoryConfig<'_>) -> Result<TrajectoryPath> {
    let mut traj = cfg.start()?;
    let mut states = Vec::with_capacity(cfg.n_steps + 1);
    let mut word = Vec::with_capacity(cfg.n_steps);
    let mut step_weights = Vec::with_capacity(cfg.n_steps);
    let mut log_w_norm = Vec::with_capacity(cfg.n_steps + 1);
    let x0 = traj.state().clone();
    let mut product = RunningProduct::new(cfg.family.dim());
    states.push(x0.clone());
    log_w_norm.push(0.0);
    for _ in 0..cfg.n_steps {
        let (i, w) = traj.step()?;
        product.push(cfg.family.operator(i));
        states.push(traj.state().clone());
        word.push(i);
        step_weights.push(w);
        log_w_norm.push(product.log_norm_sq(&x0));
    }
    Ok(TrajectoryPath { states, word: Word(word), step_weights, log_w_norm })
}

/// Runs `f(r)` for `r = 0..count` in parallel; results keep replica order.
pub fn run_replicas<T, F>(count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..count as u64).into_par_iter().map(f).collect()
}

/// Replica `r` uses `replica_index = r`.
pub fn sample_replicas(template: &TrajectoryConfig<'_>, count: usize) -> Result<Vec<TrajectoryPath>> {
    if count == 0 {
        return Err(Error::InvalidParameter("need at least one replica".into()));
    }
    run_replicas(count, |r| sample_trajectory(&template.with_replica(r)))
}

/// `P^ρ(w) = tr(W_w ρ W_w*)`.
pub fn word_probability(rho: &DensityMatrix, word: &Word, family: &KrausFamily) -> Result<f64> {
    if rho.dim() != family.dim() {
        return Err(Error::DimensionMismatch { expected: family.dim(), found: rho.dim() });
    }
    let (w, log_scale) = word_product(family, word)?;
    if log_scale == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    let t = w.mul(rho.matrix()).mul(&w.adjoint()).trace().re;
    Ok((t.max(0.0).ln() + 2.0 * log_scale).exp())
}

const TIE_GAP: f64 = 1e-10;

/// `argmax_x ‖W x‖²`: the top right-singular vector of `W`, canonicalized.
///
/// When the top singular value is degenerate the argmax is a subspace; the
/// returned state is the projection onto it of the basis vector with the
/// largest overlap (lowest index on ties).
pub fn mle_initial_estimator(w: &ComplexMatrix) -> Result<ProjectiveState> {
    let scale = w.max_abs();
    if scale == 0.0 {
        return Err(Error::ZeroBranch { weight: 0.0 });
    }
    let w = w.scale(C64::new(1.0 / scale, 0.0));
    let gram = w.adjoint().mul(&w).hermitian_part();
    let (vals, vecs) = linalg::hermitian_eigen(&gram);
    let top = *vals.last().expect("dimension ≥ 1");
    let cluster: Vec<&Vec<C64>> =
        vals.iter().zip(&vecs).filter(|(l, _)| top - **l <= TIE_GAP * top.max(f64::MIN_POSITIVE)).map(|(_, v)| v).collect();
    if cluster.len() == 1 {
        return ProjectiveState::from_vector(cluster[0]);
    }
    let d = w.dim();
    let proj = cluster.iter().fold(ComplexMatrix::zeros(d), |acc, v| acc.add(&ComplexMatrix::outer(v, v)));
    let mut best = 0;
    for k in 1..d {
        if proj.get(k, k).re > proj.get(best, best).re + 1e-12 {
            best = k;
        }
    }
    let column: Vec<C64> = (0..d).map(|i| proj.get(i, best)).collect();
    ProjectiveState::from_vector(&column)
}

/// `ŷ_n = W_n · ẑ_n` for every prefix `n = 0..=N` of the path.
pub fn evolved_estimator(family: &KrausFamily, path: &TrajectoryPath) -> Result<Vec<ProjectiveState>> {
    let mut product = RunningProduct::new(family.dim());
    let mut out = Vec::with_capacity(path.len() + 1);
    let z0 = mle_initial_estimator(&product.matrix)?;
    out.push(z0);
    for &i in path.word.indices() {
        product.push(family.operator(i));
        let z = mle_initial_estimator(&product.matrix)?;
        let y = product.matrix.mul_vec(z.amplitudes());
        out.push(ProjectiveState::from_vector(&y)?);
    }
    Ok(out)
}
