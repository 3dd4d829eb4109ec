//! Monte Carlo checks of the limit theorems for `S_n(ḡ) = Σ_{k<n} ḡ(x̂_k)`:
//! law of large numbers, CLT and its functional version, the law of the
//! iterated logarithm and the moderate deviation cumulant.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::engine::{run_replicas, Initial, Trajectory};
use crate::error::{Error, Result};
use crate::kernel::Observable;
use crate::model::KrausFamily;

/// Shared inputs of the limit-theorem checks.
#[derive(Clone, Debug)]
pub struct LimitSetup<'a> {
    pub family: &'a KrausFamily,
    pub observable: &'a Observable,
    /// `E_{ν_inv}(g)`.
    pub mean: f64,
    /// `γ²` used for normalization.
    pub gamma_sq: f64,
    pub initial: Initial,
    pub seed: u64,
}

impl<'a> LimitSetup<'a> {
    fn check(&self) -> Result<()> {
        self.family.ensure_stochastic()?;
        if self.initial.dim() != self.family.dim() {
            return Err(Error::DimensionMismatch { expected: self.family.dim(), found: self.initial.dim() });
        }
        Ok(())
    }

    fn require_variance(&self) -> Result<()> {
        if !(self.gamma_sq > 0.0) {
            return Err(Error::DegenerateVariance { gamma_sq: self.gamma_sq });
        }
        Ok(())
    }

    /// Streams `ḡ(x̂_k)` for `k = 0..n` of replica `r` into `visit(k, ḡ(x̂_k))`.
    fn stream<F: FnMut(usize, f64)>(&self, replica: u64, n: usize, mut visit: F) -> Result<()> {
        let mut t = Trajectory::start_unchecked(self.family, &self.initial, self.seed, replica);
        for k in 0..n {
            visit(k, self.observable.eval(t.state()) - self.mean);
            if k + 1 < n {
                t.step()?;
            }
        }
        Ok(())
    }

    /// `S_n(ḡ)` for one replica.
    fn partial_sum(&self, replica: u64, n: usize) -> Result<f64> {
        let mut s = 0.0;
        self.stream(replica, n, |_, v| s += v)?;
        Ok(s)
    }
}

const LLN_BATCHES: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LlnReport {
    pub n: usize,
    pub mean: f64,
    pub target: f64,
    /// `4 √(γ²_eff / n)`.
    pub tolerance: f64,
    /// Batch-means estimate of the autocorrelation-inflated variance.
    pub gamma_eff_sq: f64,
    pub pass: bool,
}

/// `S_n(g)/n` against `target` with a batch-means tolerance.
pub fn lln_check(
    family: &KrausFamily,
    g: &Observable,
    initial: &Initial,
    n: usize,
    target: f64,
    seed: u64,
) -> Result<LlnReport> {
    if n == 0 {
        return Err(Error::InvalidParameter("n must be positive".into()));
    }
    let setup = LimitSetup { family, observable: g, mean: 0.0, gamma_sq: 0.0, initial: initial.clone(), seed };
    setup.check()?;
    let batch = (n / LLN_BATCHES).max(1);
    let mut batch_means = Vec::with_capacity(LLN_BATCHES + 1);
    let (mut total, mut comp) = (0.0f64, 0.0f64);
    let mut acc = 0.0;
    setup.stream(0, n, |k, v| {
        // Neumaier summation keeps S_n/n exact for constant observables.
        let t = total + v;
        comp += if total.abs() >= v.abs() { (total - t) + v } else { (v - t) + total };
        total = t;
        acc += v;
        if (k + 1) % batch == 0 {
            batch_means.push(acc / batch as f64);
            acc = 0.0;
        }
    })?;
    let mean = (total + comp) / n as f64;
    let b = batch_means.len();
    let gamma_eff_sq = if b >= 2 {
        let m = batch_means.iter().sum::<f64>() / b as f64;
        batch as f64 * batch_means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b - 1) as f64
    } else {
        0.0
    };
    let tolerance = 4.0 * (gamma_eff_sq / n as f64).sqrt();
    let pass = (mean - target).abs() <= tolerance + 4.0 * f64::EPSILON * target.abs();
    Ok(LlnReport { n, mean, target, tolerance, gamma_eff_sq, pass })
}

/// `Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} e^{−2k²λ²}`, truncated at 100 terms.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS distance and asymptotic p-value against `cdf`.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> (f64, f64) {
    let mut x = samples.to_vec();
    x.sort_by(|a, b| a.total_cmp(b));
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, v) in x.iter().enumerate() {
        let f = cdf(*v);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    (d, kolmogorov_survival(n.sqrt() * d))
}

/// Two-sample KS distance and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(|p, q| p.total_cmp(q));
    y.sort_by(|p, q| p.total_cmp(q));
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    (d, kolmogorov_survival(en * d))
}

fn standard_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CltReport {
    pub replicas: usize,
    pub n: usize,
    pub gamma_sq: f64,
    /// `S_n(ḡ)/√(nγ²)` per replica.
    pub normalized: Vec<f64>,
    pub ks_distance: f64,
    pub p_value: f64,
}

/// KS test of `S_n(ḡ)/√(nγ²)` across replicas against `N(0, 1)`.
pub fn clt_test(setup: &LimitSetup<'_>, n: usize, replicas: usize) -> Result<CltReport> {
    setup.check()?;
    setup.require_variance()?;
    if n == 0 || replicas == 0 {
        return Err(Error::InvalidParameter("n and replicas must be positive".into()));
    }
    let scale = (n as f64 * setup.gamma_sq).sqrt();
    let normalized = run_replicas(replicas, |r| Ok(setup.partial_sum(r, n)? / scale))?;
    let (ks_distance, p_value) = ks_one_sample(&normalized, standard_normal_cdf);
    Ok(CltReport { replicas, n, gamma_sq: setup.gamma_sq, normalized, ks_distance, p_value })
}

/// `s_n(t)` sampled on a grid of times.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FcltPath {
    pub t: Vec<f64>,
    pub s: Vec<f64>,
}

/// `s_n(t) = S_⌊nt⌋ + (nt − ⌊nt⌋)(S_⌊nt⌋+1 − S_⌊nt⌋)` at each `t` of the grid.
pub fn fclt_path(setup: &LimitSetup<'_>, replica: u64, n: usize, t_grid: &[f64]) -> Result<FcltPath> {
    if t_grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::InvalidParameter("times must lie in [0, 1]".into()));
    }
    let mut partial = vec![0.0; n + 1];
    let mut s = 0.0;
    setup.stream(replica, n, |k, v| {
        s += v;
        partial[k + 1] = s;
    })?;
    let values = t_grid
        .iter()
        .map(|&t| {
            let x = n as f64 * t;
            let k = (x.floor() as usize).min(n);
            let frac = x - k as f64;
            if frac > 0.0 && k < n {
                partial[k] + frac * (partial[k + 1] - partial[k])
            } else {
                partial[k]
            }
        })
        .collect();
    Ok(FcltPath { t: t_grid.to_vec(), s: values })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FcltReport {
    pub n: usize,
    pub replicas: usize,
    pub t: Vec<f64>,
    /// `cov(s_n(t_i), s_n(t_j)) / (nγ²)`.
    pub covariance: Vec<Vec<f64>>,
    /// Brownian target `min(t_i, t_j)`.
    pub target: Vec<Vec<f64>>,
}

/// Empirical covariance matrix of `s_n(t)/√(nγ²)` on the grid.
pub fn fclt_report(setup: &LimitSetup<'_>, n: usize, replicas: usize, t_grid: &[f64]) -> Result<FcltReport> {
    setup.check()?;
    setup.require_variance()?;
    if replicas < 2 {
        return Err(Error::InvalidParameter("covariances need at least two replicas".into()));
    }
    let paths = run_replicas(replicas, |r| fclt_path(setup, r, n, t_grid))?;
    let k = t_grid.len();
    let means: Vec<f64> = (0..k).map(|i| paths.iter().map(|p| p.s[i]).sum::<f64>() / replicas as f64).collect();
    let norm = n as f64 * setup.gamma_sq * (replicas - 1) as f64;
    let covariance = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| paths.iter().map(|p| (p.s[i] - means[i]) * (p.s[j] - means[j])).sum::<f64>() / norm)
                .collect()
        })
        .collect();
    let target = (0..k).map(|i| (0..k).map(|j| t_grid[i].min(t_grid[j])).collect()).collect();
    Ok(FcltReport { n, replicas, t: t_grid.to_vec(), covariance, target })
}

/// `cov(s_n(s), s_n(t)) / (nγ²)` across replicas.
pub fn fclt_covariance(setup: &LimitSetup<'_>, n: usize, replicas: usize, s: f64, t: f64) -> Result<f64> {
    Ok(fclt_report(setup, n, replicas, &[s, t])?.covariance[0][1])
}

/// Behaviour of `s_n` when `γ² = 0`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DegenerateReport {
    pub n: usize,
    pub replicas: usize,
    /// `max_r sup_t |s_n(t)|`.
    pub sup_abs: f64,
    /// `‖s_n(1)/√n‖_{L²}` across replicas.
    pub l2_scaled: f64,
    /// `6 osc(g̃)`.
    pub bound: f64,
}

pub fn degenerate_check(setup: &LimitSetup<'_>, n: usize, replicas: usize, osc: f64) -> Result<DegenerateReport> {
    setup.check()?;
    let per = run_replicas(replicas, |r| {
        let (mut s, mut sup) = (0.0f64, 0.0f64);
        setup.stream(r, n, |_, v| {
            s += v;
            sup = sup.max(s.abs());
        })?;
        Ok((sup, s))
    })?;
    let sup_abs = per.iter().map(|p| p.0).fold(0.0, f64::max);
    let l2 = (per.iter().map(|p| p.1 * p.1).sum::<f64>() / per.len() as f64).sqrt() / (n as f64).sqrt();
    Ok(DegenerateReport { n, replicas, sup_abs, l2_scaled: l2, bound: 6.0 * osc })
}

/// Heuristic band for the finite-`n` LIL envelope.
pub const LIL_BAND: (f64, f64) = (0.6, 1.4);

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LilEnvelope {
    /// `max_n S_n / √(2nγ² log log n)`.
    pub max_plus: f64,
    /// `max_n −S_n / √(2nγ² log log n)`.
    pub max_minus: f64,
}

impl LilEnvelope {
    pub fn max_abs(&self) -> f64 {
        self.max_plus.max(self.max_minus)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LilReport {
    pub n_min: usize,
    pub n_max: usize,
    pub envelopes: Vec<LilEnvelope>,
    /// Mean over replicas of `max_n |S_n| / √(2nγ² log log n)`.
    pub pooled: f64,
    /// Largest value over all replicas.
    pub overall_max: f64,
    /// Two-sample KS p-value comparing the + and − envelopes.
    pub sign_symmetry_p: f64,
    pub band: (f64, f64),
    pub in_band: bool,
    /// The band is an engineering choice; the theorem only fixes the limit.
    pub heuristic: bool,
}

pub fn lil_scan(setup: &LimitSetup<'_>, n_max: usize, replicas: usize, n_min: usize) -> Result<LilReport> {
    setup.check()?;
    if setup.gamma_sq < 0.0 {
        return Err(Error::DegenerateVariance { gamma_sq: setup.gamma_sq });
    }
    if n_min < 16 || n_min > n_max || replicas == 0 {
        return Err(Error::InvalidParameter("need 16 ≤ n_min ≤ n_max and at least one replica".into()));
    }
    let envelopes = run_replicas(replicas, |r| {
        let (mut s, mut plus, mut minus) = (0.0f64, 0.0f64, 0.0f64);
        setup.stream(r, n_max, |k, v| {
            s += v;
            let n = k + 1;
            if n >= n_min && setup.gamma_sq > 0.0 {
                let nf = n as f64;
                let scale = (2.0 * nf * setup.gamma_sq * nf.ln().ln()).sqrt();
                plus = plus.max(s / scale);
                minus = minus.max(-s / scale);
            }
        })?;
        Ok(LilEnvelope { max_plus: plus, max_minus: minus })
    })?;
    let pooled = envelopes.iter().map(LilEnvelope::max_abs).sum::<f64>() / envelopes.len() as f64;
    let overall_max = envelopes.iter().map(LilEnvelope::max_abs).fold(0.0, f64::max);
    let plus: Vec<f64> = envelopes.iter().map(|e| e.max_plus).collect();
    let minus: Vec<f64> = envelopes.iter().map(|e| e.max_minus).collect();
    let (_, sign_symmetry_p) = ks_two_sample(&plus, &minus);
    Ok(LilReport {
        n_min,
        n_max,
        envelopes,
        pooled,
        overall_max,
        sign_symmetry_p,
        band: LIL_BAND,
        in_band: pooled >= LIL_BAND.0 && pooled <= LIL_BAND.1,
        heuristic: true,
    })
}

/// `J(y) = y²/(2γ²)`, with the degenerate cases `J(0) = 0`, `J(y ≠ 0) = +∞` at `γ² = 0`.
pub fn rate_function(gamma_sq: f64, y: f64) -> f64 {
    if gamma_sq > 0.0 {
        y * y / (2.0 * gamma_sq)
    } else if y == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MdpPoint {
    pub z: f64,
    /// Block estimator `(n/a²)(n/L) log mean_blocks exp((a/n) z S_L)`.
    pub lambda_hat: f64,
    pub std_error: f64,
    /// Direct estimator `(n/a²) log mean_replicas exp((a/n) z S_n)`.
    pub literal: f64,
    pub literal_std_error: f64,
    /// `z²γ²/2`.
    pub target: f64,
    /// `J(zγ²)`, the rate at the conjugate point.
    pub rate: f64,
    pub overflow: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MdpReport {
    pub n: usize,
    pub beta: f64,
    pub a_n: f64,
    pub block_len: usize,
    pub blocks_per_replica: usize,
    pub replicas: usize,
    pub gamma_sq: f64,
    pub points: Vec<MdpPoint>,
}

/// `log Σ exp(v_i)`.
fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log(e^a − e^b)` for `a ≥ b`.
fn log_diff_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        a
    } else {
        a + (-(b - a).exp()).ln_1p()
    }
}

/// Leave-one-replica-out jackknife of `scale · (log Σ_all e^v − log count)`.
fn jackknife(groups: &[Vec<f64>], scale: f64) -> (f64, f64) {
    let per: Vec<f64> = groups.iter().map(|g| log_sum_exp(g)).collect();
    let counts: Vec<usize> = groups.iter().map(Vec::len).collect();
    let total_count: usize = counts.iter().sum();
    let total = log_sum_exp(&per);
    // ln(total_count / total_count) is exactly 0, so Λ̂(0) = 0 exactly.
    let estimate = scale * (total - (total_count as f64).ln());
    let r = groups.len();
    if r < 2 {
        return (estimate, f64::NAN);
    }
    let loo: Vec<f64> = (0..r)
        .map(|i| scale * (log_diff_exp(total, per[i]) - ((total_count - counts[i]) as f64).ln()))
        .collect();
    let mean = loo.iter().sum::<f64>() / r as f64;
    let var = (r - 1) as f64 / r as f64 * loo.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    (estimate, var.sqrt())
}

/// Cumulant estimates at `a(n) = n^β` for each `z`.
pub fn mdp_cumulant(setup: &LimitSetup<'_>, n: usize, replicas: usize, beta: f64, z_grid: &[f64]) -> Result<MdpReport> {
    setup.check()?;
    if !(beta > 0.5 && beta < 1.0) {
        return Err(Error::InvalidParameter(format!("β must lie in (1/2, 1), got {beta}")));
    }
    if n == 0 || replicas == 0 {
        return Err(Error::InvalidParameter("n and replicas must be positive".into()));
    }
    let nf = n as f64;
    let a = nf.powf(beta);
    let block_len = (nf.powf(2.0 - 2.0 * beta).ceil() as usize).clamp(1, n);
    let blocks = n / block_len;
    let sums: Vec<(Vec<f64>, f64)> = run_replicas(replicas, |r| {
        let mut out = Vec::with_capacity(blocks);
        let (mut block, mut total) = (0.0, 0.0);
        setup.stream(r, n, |k, v| {
            block += v;
            total += v;
            if (k + 1) % block_len == 0 && out.len() < blocks {
                out.push(block);
                block = 0.0;
            }
        })?;
        Ok((out, total))
    })?;
    let points = z_grid
        .iter()
        .map(|&z| {
            let theta = a * z / nf;
            let block_groups: Vec<Vec<f64>> = sums.iter().map(|(b, _)| b.iter().map(|s| theta * s).collect()).collect();
            let literal_groups: Vec<Vec<f64>> = sums.iter().map(|(_, s)| vec![theta * s]).collect();
            let (lambda_hat, std_error) = jackknife(&block_groups, nf / (a * a) * (nf / block_len as f64));
            let (literal, literal_std_error) = jackknife(&literal_groups, nf / (a * a));
            MdpPoint {
                z,
                lambda_hat,
                std_error,
                literal,
                literal_std_error,
                target: z * z * setup.gamma_sq / 2.0,
                rate: rate_function(setup.gamma_sq, z * setup.gamma_sq),
                overflow: !lambda_hat.is_finite() || !literal.is_finite(),
            }
        })
        .collect();
    Ok(MdpReport { n, beta, a_n: a, block_len, blocks_per_replica: blocks, replicas, gamma_sq: setup.gamma_sq, points })
}
