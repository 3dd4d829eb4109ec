//! Purification and ergodicity checks on Keep-Switch and the degenerate controls.

use qtraj::assumptions::assess;
use qtraj::reference::{negative_controls, KeepSwitchModel};

fn main() -> qtraj::Result<()> {
    let ks = assess(&KeepSwitchModel::new(0.3)?.family(), None);
    println!("keep-switch:\n{}", serde_json::to_string_pretty(&ks)?);
    for c in negative_controls() {
        let r = assess(&c.family, None);
        println!(
            "{:<26} pur={:?} erg={} period={:?} holds={}",
            c.name,
            r.pur_holds,
            r.erg_holds,
            r.period_m,
            r.holds()
        );
    }
    Ok(())
}
