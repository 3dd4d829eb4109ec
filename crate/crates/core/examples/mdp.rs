//! Moderate deviation cumulant against z^2 gamma^2 / 2.

use qtraj::kernel::Observable;
use qtraj::reference::KeepSwitchModel;
use qtraj::stats::{mdp_cumulant, LimitSetup};

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
        seed: 3,
    };
    let r = mdp_cumulant(&setup, 100_000, 100, 0.75, &[-1.0, -0.5, 0.0, 0.5, 1.0])?;
    println!("a(n) = n^{} = {:.1}, block length {}, {} blocks per replica", r.beta, r.a_n, r.block_len, r.blocks_per_replica);
    println!("{:>5} {:>10} {:>10} {:>10} {:>10}", "z", "block", "stderr", "literal", "target");
    for p in &r.points {
        println!("{:>5} {:>10.5} {:>10.5} {:>10.5} {:>10.5}", p.z, p.lambda_hat, p.std_error, p.literal, p.target);
    }
    Ok(())
}
