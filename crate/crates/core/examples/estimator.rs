//! The evolved maximum-likelihood estimator tracks the true trajectory.

use qtraj::engine::{evolved_estimator, sample_trajectory, TrajectoryConfig};
use qtraj::model::ProjectiveState;
use qtraj::reference::random_valid_family;
use qtraj::rng;

fn main() -> qtraj::Result<()> {
    let family = random_valid_family(3, 3, 2)?;
    let x0 = ProjectiveState::random(3, &mut rng::stream(99, 0));
    let path = sample_trajectory(&TrajectoryConfig::new(&family, x0, 60, 4))?;
    let est = evolved_estimator(&family, &path)?;
    for n in (0..=60).step_by(6) {
        println!("n = {n:>2}  d(x_n, y_n) = {:.3e}", path.states[n].distance(&est[n]));
    }
    Ok(())
}
