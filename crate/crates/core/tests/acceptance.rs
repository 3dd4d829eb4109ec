//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::time::Instant;

use qtraj::assumptions::{assess, PurStatus, PurWitness};
use qtraj::engine::{evolved_estimator, run_replicas, sample_trajectory, word_probability, TrajectoryConfig};
use qtraj::kernel::{
    apply_pi, default_probes, gamma_sq_atoms, gamma_sq_ergodic, martingale_path, solve_poisson, MeanSource, Observable,
    PoissonConfig,
};
use qtraj::measures::{empirical_measure, fit_lambda, wasserstein1, DiscreteMeasure, FitOptions};
use qtraj::model::{branches, DensityMatrix, KrausFamily, ProjectiveState, Word};
use qtraj::reference::{negative_controls, random_valid_family, KeepSwitchModel};
use qtraj::rng;
use qtraj::stats::{self, LimitSetup};

const P: f64 = 0.3;
const SEED: u64 = 20240917;
/// Fast-mixing seeded 2-Kraus family used where a generic model is needed.
const RANDOM_FAMILY_SEED: u64 = 0;

type Criterion = (&'static str, fn() -> qtraj::Result<Outcome>);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> qtraj::Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn ks() -> KeepSwitchModel {
    KeepSwitchModel::new(P).unwrap()
}

fn ks_setup<'a>(family: &'a KrausFamily, g: &'a Observable, seed: u64) -> LimitSetup<'a> {
    let m = ks();
    let o = m.oracles(g);
    LimitSetup { family, observable: g, mean: o.mean, gamma_sq: o.gamma_sq, initial: m.e_plus().into(), seed }
}

fn keep_switch_path(n: usize, seed: u64, replica: u64) -> qtraj::Result<Vec<ProjectiveState>> {
    let m = ks();
    let family = m.family();
    let mut t = TrajectoryConfig::new(&family, m.e_plus(), n, seed).with_replica(replica).start()?;
    let mut states = Vec::with_capacity(n + 1);
    states.push(t.state().clone());
    for _ in 0..n {
        t.step()?;
        states.push(t.state().clone());
    }
    Ok(states)
}

fn c1_stochasticity() -> qtraj::Result<Outcome> {
    let mut families = vec![ks().family()];
    for s in 0..50u64 {
        families.push(random_valid_family(2 + (s % 3) as usize, 2 + (s % 4) as usize, 1000 + s)?);
    }
    let mut worst = 0.0f64;
    for (i, fam) in families.iter().enumerate() {
        let mut r = rng::stream(SEED, i as u64);
        for _ in 0..100 {
            let x = ProjectiveState::random(fam.dim(), &mut r);
            let total: f64 = branches(fam, &x).iter().map(|(_, _, w)| w).sum();
            let pi_one = apply_pi(fam, |_| 1.0, &x);
            worst = worst.max((total - 1.0).abs()).max((pi_one - 1.0).abs());
        }
    }
    outcome(worst <= 1e-9, format!("51 families x 100 states, max |sum w - 1| = {worst:.2e}"))
}

fn c2_checkers() -> qtraj::Result<Outcome> {
    let r = assess(&ks().family(), None);
    let witness_len = match &r.pur_witness {
        PurWitness::Word(w) => Some(w.len()),
        _ => None,
    };
    let mut pass = r.pur_holds == PurStatus::Yes
        && witness_len == Some(1)
        && r.erg_holds
        && r.e_dim == Some(2)
        && r.period_m == Some(1);
    let mut detail = format!(
        "KS: pur={:?} witness_len={witness_len:?} erg={} E_dim={:?} m={:?}",
        r.pur_holds, r.erg_holds, r.e_dim, r.period_m
    );
    for c in negative_controls() {
        let rc = assess(&c.family, None);
        let ok = c.expected_pur.is_none_or(|p| p == rc.pur_holds)
            && rc.erg_holds == c.expected_erg
            && (c.expected_period.is_none() || rc.period_m == c.expected_period);
        pass &= ok;
        detail += &format!("; {} {}", c.name, if ok { "ok" } else { "unexpected" });
    }
    outcome(pass, detail)
}

fn c3_invariant_measure() -> qtraj::Result<Outcome> {
    let m = ks();
    let states = keep_switch_path(1_000_000, SEED, 0)?;
    let emp = empirical_measure(&states, 0)?;
    let mass = emp.mass_within(&m.atom_a(), 0.01);
    let w1 = wasserstein1(&emp.coalesce(1e-12), &m.invariant_measure())?;
    outcome((mass - P).abs() <= 0.01 && w1 < 0.02, format!("mass near e_a = {mass:.4}, W1 = {w1:.2e}"))
}

fn c4_poisson() -> qtraj::Result<Outcome> {
    let m = ks();
    let fam = m.family();
    let g = Observable::population(0);
    let probes = default_probes(2, 100, SEED);
    let cfg = PoissonConfig::default();
    let sol = solve_poisson(&fam, &g, MeanSource::Exact(m.oracles(&g).mean), &probes, &cfg)?;
    let (ga, gb) = (sol.eval(&m.atom_a()), sol.eval(&m.atom_b()));
    let shift = ((ga - 0.7) + (gb + 0.3)) / 2.0;
    let atom_err = (ga - 0.7 - shift).abs().max((gb + 0.3 - shift).abs());
    let ks_res = probes.iter().map(|x| sol.poisson_residual(x).abs()).fold(0.0, f64::max);

    let rfam = random_valid_family(2, 2, RANDOM_FAMILY_SEED)?;
    let rsol = solve_poisson(&rfam, &g, MeanSource::KernelLimit, &probes, &cfg)?;
    let r_res = probes.iter().map(|x| rsol.poisson_residual(x).abs()).fold(0.0, f64::max);
    outcome(
        atom_err <= 1e-4 && ks_res < 1e-3 && r_res < 1e-3,
        format!(
            "g~(e_a) = {ga:.6}, g~(e_b) = {gb:.6} (shift {shift:.1e}); residual KS {ks_res:.1e}, random {r_res:.1e}"
        ),
    )
}

fn c5_variance() -> qtraj::Result<Outcome> {
    let m = ks();
    let fam = m.family();
    let g = Observable::population(0);
    let probes = default_probes(2, 20, SEED);
    let sol = solve_poisson(&fam, &g, MeanSource::Exact(m.oracles(&g).mean), &probes, &PoissonConfig::default())?;
    let exact = gamma_sq_atoms(&sol, &m.invariant_measure()).gamma_sq;
    let states = keep_switch_path(1_000_000, SEED, 1)?;
    let erg = gamma_sq_ergodic(&sol, &states[1..])?.gamma_sq;
    let rel = (erg - 0.21).abs() / 0.21;
    outcome(
        (exact - 0.21).abs() <= 1e-12 && rel <= 0.05,
        format!("atoms_exact = {exact:.15}, ergodic_h = {erg:.5} ({:.2}% off)", 100.0 * rel),
    )
}

fn c6_martingale() -> qtraj::Result<Outcome> {
    let m = ks();
    let fam = m.family();
    let g = Observable::population(0);
    let probes = default_probes(2, 100, SEED);
    let sol = solve_poisson(&fam, &g, MeanSource::Exact(m.oracles(&g).mean), &probes, &PoissonConfig::default())?;
    let osc = sol.oscillation(&default_probes(2, 1000, SEED + 60));
    let paths = run_replicas(20, |r| {
        let states = keep_switch_path(10_000, SEED + 6, r)?;
        let mp = martingale_path(&sol, &states);
        Ok((mp.sup_gap(), mp.max_defect()))
    })?;
    let gap = paths.iter().map(|p| p.0).fold(0.0, f64::max);
    let defect = paths.iter().map(|p| p.1).fold(0.0, f64::max);
    outcome(
        gap <= osc + 1e-6 && defect <= 1e-8,
        format!("sup |S - M| = {gap:.6} vs osc {osc:.6}; telescoping defect {defect:.1e}"),
    )
}

fn c7_clt() -> qtraj::Result<Outcome> {
    let fam = ks().family();
    let g = Observable::population(0);
    let r = stats::clt_test(&ks_setup(&fam, &g, SEED + 7), 20_000, 400)?;
    outcome(r.p_value > 0.01, format!("KS distance {:.4}, p = {:.3}", r.ks_distance, r.p_value))
}

fn c8_fclt() -> qtraj::Result<Outcome> {
    let fam = ks().family();
    let g = Observable::population(0);
    let r = stats::fclt_report(&ks_setup(&fam, &g, SEED + 8), 10_000, 2000, &[0.5, 1.0])?;
    let (cov, var) = (r.covariance[0][1], r.covariance[1][1]);
    outcome(
        (cov - 0.5).abs() <= 0.05 && (var - 1.0).abs() <= 0.1,
        format!("cov(s(0.5), s(1)) = {cov:.4}, var(s(1)) = {var:.4}"),
    )
}

fn c9_lil() -> qtraj::Result<Outcome> {
    let fam = ks().family();
    let g = Observable::population(0);
    let r = stats::lil_scan(&ks_setup(&fam, &g, SEED + 9), 1_000_000, 20, 1000)?;
    outcome(
        r.in_band,
        format!("pooled {:.3} in [{}, {}] (largest replica {:.3})", r.pooled, r.band.0, r.band.1, r.overall_max),
    )
}

fn c10_mdp() -> qtraj::Result<Outcome> {
    let fam = ks().family();
    let g = Observable::population(0);
    let r = stats::mdp_cumulant(&ks_setup(&fam, &g, SEED + 10), 1_000_000, 200, 0.75, &[-1.0, -0.5, 0.0, 0.5, 1.0])?;
    let mut pass = true;
    let mut parts = Vec::new();
    for p in &r.points {
        let ok = if p.z == 0.0 { p.lambda_hat == 0.0 } else { (p.lambda_hat - p.target).abs() <= 0.2 * 2.0 * p.target };
        pass &= ok;
        parts.push(format!("z={:+}: {:.4} vs {:.4} (literal {:.4})", p.z, p.lambda_hat, p.target, p.literal));
    }
    outcome(pass, parts.join("; "))
}

fn random_density(dim: usize, r: &mut rng::StreamRng) -> qtraj::Result<DensityMatrix> {
    use rand::Rng;
    let atoms: Vec<(ProjectiveState, f64)> =
        (0..dim).map(|_| (ProjectiveState::random(dim, r), r.random::<f64>() + 1e-3)).collect();
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    DensityMatrix::mixture(&atoms.into_iter().map(|(s, w)| (s, w / total)).collect::<Vec<_>>())
}

fn c11_tv_bound() -> qtraj::Result<Outcome> {
    let words = Word::all_of_length(2, 6);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..50u64 {
        let fam = if i % 2 == 0 { ks().family() } else { random_valid_family(2 + (i % 3) as usize, 2, 500 + i)? };
        let mut r = rng::stream(SEED + 11, i);
        let rho = random_density(fam.dim(), &mut r)?;
        let sigma = random_density(fam.dim(), &mut r)?;
        let mut tv = 0.0;
        for w in &words {
            tv += (word_probability(&rho, w, &fam)? - word_probability(&sigma, w, &fam)?).abs();
        }
        worst = worst.max(0.5 * tv - rho.trace_distance(&sigma));
    }
    outcome(worst <= 1e-10, format!("50 pairs x 64 words, max (TV - |rho - sigma|_1) = {worst:.3e}"))
}

fn c12_counterexamples() -> qtraj::Result<Outcome> {
    let m = ks();
    let c = m.indicator_counterexample(10_000, SEED + 12)?;
    let ratio = m.non_contraction_ratio()?;
    outcome(
        c.partial_sum == 0 && c.invariant_mean == 1.0 && ratio == 1.0,
        format!("S_n(1_atoms) = {} for n = {}, nu_inv = {}, ratio = {ratio}", c.partial_sum, c.n, c.invariant_mean),
    )
}

fn c13_wasserstein_decay() -> qtraj::Result<Outcome> {
    let m = ks();
    let grid: Vec<usize> = (1..=12).collect();
    let fit = fit_lambda(
        &m.family(),
        &DiscreteMeasure::dirac(m.e_plus()),
        1,
        &grid,
        10_000,
        &m.invariant_measure(),
        &FitOptions { seed: SEED + 13, ..FitOptions::default() },
    )?;
    outcome(
        fit.decays() && fit.lambda_ci.1 < 1.0,
        format!(
            "slope {:.4} CI ({:.4}, {:.4}), lambda {:.4} CI ({:.4}, {:.4})",
            fit.slope, fit.slope_ci.0, fit.slope_ci.1, fit.lambda_hat, fit.lambda_ci.0, fit.lambda_ci.1
        ),
    )
}

fn c14_estimator() -> qtraj::Result<Outcome> {
    let m = ks();
    let fam = m.family();
    let template = TrajectoryConfig::new(&fam, m.e_plus(), 200, SEED + 14);
    let mut d = run_replicas(100, |r| {
        let path = sample_trajectory(&template.with_replica(r))?;
        let est = evolved_estimator(&fam, &path)?;
        Ok(path.states[200].distance(&est[200]))
    })?;
    d.sort_by(f64::total_cmp);
    let median = 0.5 * (d[49] + d[50]);
    outcome(median < 0.01, format!("median d(x_200, y_200) = {median:.3e}"))
}

fn main() {
    let criteria: [Criterion; 14] = [
        ("stochasticity and kernel normalization", c1_stochasticity),
        ("assumption checkers", c2_checkers),
        ("invariant measure", c3_invariant_measure),
        ("Poisson solver", c4_poisson),
        ("asymptotic variance", c5_variance),
        ("martingale approximation", c6_martingale),
        ("CLT", c7_clt),
        ("FCLT", c8_fclt),
        ("LIL (heuristic band)", c9_lil),
        ("MDP cumulant", c10_mdp),
        ("TV bound", c11_tv_bound),
        ("counterexamples", c12_counterexamples),
        ("Wasserstein decay", c13_wasserstein_decay),
        ("estimator", c14_estimator),
    ];
    let mut failures = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match f() {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        let secs = start.elapsed().as_secs_f64();
        println!("{} {:>2} {name}: {detail} [{secs:.1}s]", if pass { "PASS" } else { "FAIL" }, i + 1);
        failures += usize::from(!pass);
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
