//! Law of the iterated logarithm envelopes on Keep-Switch.

use qtraj::kernel::Observable;
use qtraj::reference::KeepSwitchModel;
use qtraj::stats::{lil_scan, LimitSetup};

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
        seed: 5,
    };
    let r = lil_scan(&setup, 200_000, 10, 1000)?;
    for (i, e) in r.envelopes.iter().enumerate() {
        println!("replica {i:>2}: max+ {:.3}  max- {:.3}", e.max_plus, e.max_minus);
    }
    println!("pooled {:.3} (band {:?}, in band: {})", r.pooled, r.band, r.in_band);
    println!("sign symmetry p-value {:.3}", r.sign_symmetry_p);
    Ok(())
}
