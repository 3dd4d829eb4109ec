//! CLT and FCLT checks for the population of e_a along Keep-Switch trajectories.

use qtraj::kernel::Observable;
use qtraj::reference::KeepSwitchModel;
use qtraj::stats::{clt_test, fclt_report, LimitSetup};

fn main() -> qtraj::Result<()> {
    let model = KeepSwitchModel::new(0.3)?;
    let family = model.family();
    let g = Observable::population(0);
    let oracle = model.oracles(&g);
    let setup = LimitSetup {
        family: &family,
        observable: &g,
        mean: oracle.mean,
        gamma_sq: oracle.gamma_sq,
        initial: model.e_plus().into(),
        seed: 11,
    };

    let clt = clt_test(&setup, 5_000, 300)?;
    println!("gamma^2 = {}, KS distance {:.4}, p-value {:.3}", oracle.gamma_sq, clt.ks_distance, clt.p_value);

    let t = [0.25, 0.5, 1.0];
    let f = fclt_report(&setup, 5_000, 500, &t)?;
    println!("cov(s(t_i), s(t_j)) / (n gamma^2) against min(t_i, t_j):");
    for (i, row) in f.covariance.iter().enumerate() {
        let cells: Vec<String> = row.iter().zip(&f.target[i]).map(|(c, m)| format!("{c:.3} ({m})")).collect();
        println!("  t = {:<4} {}", t[i], cells.join("  "));
    }
    Ok(())
}
