//! Keep-Switch paths never land on the atoms that carry all invariant mass.

use qtraj::reference::KeepSwitchModel;

fn main() -> qtraj::Result<()> {
    let model = KeepSwitchModel::new(0.3)?;
    let c = model.indicator_counterexample(10_000, 1)?;
    println!("S_n(indicator of atoms) = {} for n = {}, while nu_inv(indicator) = {}", c.partial_sum, c.n, c.invariant_mean);
    println!("closest approach: ln|<e_a,x>| = {:.1}, ln|<e_b,x>| = {:.1}", c.min_log_overlap_a, c.min_log_overlap_b);
    println!("non-contraction ratio at (e_a, e_b): {}", model.non_contraction_ratio()?);
    Ok(())
}
