//! Sample a Keep-Switch trajectory and print the first rows of its CSV dump.
//!
//! cargo run --example simulate -- [n] [seed]

use qtraj::engine::{sample_trajectory, TrajectoryConfig};
use qtraj::reference::KeepSwitchModel;

fn main() -> qtraj::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(20, |s| s.parse().expect("n"));
    let seed: u64 = args.next().map_or(7, |s| s.parse().expect("seed"));

    let model = KeepSwitchModel::new(0.3)?;
    let family = model.family();
    let path = sample_trajectory(&TrajectoryConfig::new(&family, model.e_plus(), n, seed))?;

    let mut csv = Vec::new();
    path.write_csv(&family, &mut csv)?;
    print!("{}", String::from_utf8_lossy(&csv));
    println!("word: {}", path.word);
    println!("ln |W_n x_0|^2 at n = {n}: {:.4}", path.log_w_norm[n]);
    Ok(())
}
