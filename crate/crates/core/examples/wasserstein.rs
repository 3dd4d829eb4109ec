//! Geometric decay of W1 between the n-step law from e_+ and the invariant measure.

use qtraj::measures::{fit_lambda, DiscreteMeasure, FitOptions};
use qtraj::reference::KeepSwitchModel;

fn main() -> qtraj::Result<()> {
    let model = KeepSwitchModel::new(0.3)?;
    let grid: Vec<usize> = (1..=12).collect();
    let fit = fit_lambda(
        &model.family(),
        &DiscreteMeasure::dirac(model.e_plus()),
        1,
        &grid,
        5_000,
        &model.invariant_measure(),
        &FitOptions::default(),
    )?;
    let mut csv = Vec::new();
    fit.write_csv(&mut csv)?;
    print!("{}", String::from_utf8_lossy(&csv));
    println!("lambda_hat {:.4}, 95% CI ({:.4}, {:.4})", fit.lambda_hat, fit.lambda_ci.0, fit.lambda_ci.1);
    println!("decays: {}", fit.decays());
    Ok(())
}
