//! Solve the Poisson equation for a population observable, on Keep-Switch
//! (exact mean) and on a seeded random family (mean from the kernel limit).

use qtraj::kernel::{default_probes, solve_poisson, MeanSource, Observable, PoissonConfig};
use qtraj::reference::{random_valid_family, KeepSwitchModel};

fn main() -> qtraj::Result<()> {
    let g = Observable::population(0);
    let probes = default_probes(2, 50, 1);
    let cfg = PoissonConfig::default();

    let ks = KeepSwitchModel::new(0.3)?;
    let sol = solve_poisson(&ks.family(), &g, MeanSource::Exact(ks.oracles(&g).mean), &probes, &cfg)?;
    println!("keep-switch: g~(e_a) = {:.6}, g~(e_b) = {:.6}", sol.eval(&ks.atom_a()), sol.eval(&ks.atom_b()));
    println!("  blocks {}, residual bound {:.2e}", sol.blocks(), sol.residual_bound());

    let family = random_valid_family(2, 2, 0)?;
    let sol = solve_poisson(&family, &g, MeanSource::KernelLimit, &probes, &cfg)?;
    let worst = probes.iter().map(|x| sol.poisson_residual(x).abs()).fold(0.0, f64::max);
    let d = sol.diagnostics();
    println!("random family: mean {:.6}, blocks {}, depth {}", sol.mean(), d.blocks, d.depth);
    println!("  max |(Id - Pi) g~ - g_bar| on probes: {worst:.2e}");
    println!("  decay ratio {:?}", d.decay_ratio);
    Ok(())
}
