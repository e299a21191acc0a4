//! Times the streamed Euler–Maruyama ensemble on the 10-agent path.
//!
//! Usage: `cargo run --release --example ensemble_benchmark -- [paths] [sigma]`

use std::time::Instant;

use consensus_lab::dynamics::{ensemble_statistics, stationary_prediction, TimeGrid};
use consensus_lab::generators;
use consensus_lab::schedule::CouplingSchedule;
use nalgebra::DVector;

fn main() -> consensus_lab::Result<()> {
    let mut args = std::env::args().skip(1);
    let paths: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(256);
    let sigma: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let d = generators::path(10)?.coupling_matrix();
    let schedule = CouplingSchedule::constant(d.clone())?.with_sigma(sigma)?;
    let alpha = 4.0 * (std::f64::consts::PI / 20.0).sin().powi(2);
    let horizon = 10.0 / alpha;
    let grid = TimeGrid::new(horizon, schedule.default_dt(horizon)?)?.with_records(200);
    let start = Instant::now();
    let stats = ensemble_statistics(&schedule, &DVector::zeros(10), grid, paths, 1)?;
    let elapsed = start.elapsed();
    let limit = stationary_prediction(&d, sigma)?.limit_second_moment;
    println!(
        "{} steps x {paths} paths in {:.2}s ({:.1} ns per path-step); plateau {:.5e}, prediction {limit:.5e}",
        grid.steps(),
        elapsed.as_secs_f64(),
        elapsed.as_nanos() as f64 / (grid.steps() * paths) as f64,
        stats.late_window_mean()
    );
    Ok(())
}
