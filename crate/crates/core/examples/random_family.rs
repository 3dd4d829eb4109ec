//! Load a Kraus family from JSON (or draw one), check it, and estimate its invariant measure.
//!
//! cargo run --example random_family -- [family.json]

use qtraj::assumptions::assess;
use qtraj::engine::{sample_trajectory, TrajectoryConfig};
use qtraj::measures::empirical_measure;
use qtraj::model::{KrausFamily, ProjectiveState};
use qtraj::reference::random_valid_family;

fn main() -> qtraj::Result<()> {
    let family = match std::env::args().nth(1) {
        Some(path) => KrausFamily::from_json(&std::fs::read_to_string(path)?)?,
        None => random_valid_family(2, 3, 8)?,
    };
    println!("{}", family.to_json()?);
    println!("stochasticity: {:?}", family.validate_stochasticity());
    let report = assess(&family, None);
    println!("pur {:?}, erg {}, period {:?}", report.pur_holds, report.erg_holds, report.period_m);

    let d = family.dim();
    let start = ProjectiveState::from_real(&vec![1.0; d])?;
    let path = sample_trajectory(&TrajectoryConfig::new(&family, start, 20_000, 1))?;
    let emp = empirical_measure(&path.states, 1000)?;
    for k in 0..d {
        println!("E[|x_{k}|^2] under the empirical measure: {:.4}", emp.expectation(|x| x.population(k)));
    }
    if let Some(rho) = &report.rho_inv {
        let diag: Vec<f64> = (0..d).map(|k| rho.matrix().get(k, k).re).collect();
        println!("diagonal of rho_inv:                    {diag:.4?}");
    }
    Ok(())
}
