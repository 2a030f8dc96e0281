//! Timestep schedules: the uniform grid versus the sway warp
//! `f(u) = u + s (cos(pi u / 2) - 1 + u)`, which concentrates steps early
//! in the trajectory for s < 0 while keeping the endpoints at exactly
//! 0 and 1.
//!
//! Run with: cargo run --example schedules

use gffm::sampler::{sway_max, sway_schedule, uniform_schedule, SWAY_MIN};

fn main() -> gffm::Result<()> {
    let nfe = 8;
    println!("admissible sway range: [{}, {:.4}]", SWAY_MIN, sway_max());
    println!("\ngrids at nfe = {nfe}:");
    let fmt = |ts: &[f64]| {
        ts.iter()
            .map(|t| format!("{t:.3}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    println!("  uniform   : {}", fmt(&uniform_schedule(nfe)));
    for s in [-1.0, -0.5, 0.5, sway_max()] {
        println!("  sway {s:>6.3}: {}", fmt(&sway_schedule(nfe, s)?));
    }

    // step sizes show where the budget goes
    let steps = |ts: &[f64]| -> Vec<f64> { ts.windows(2).map(|w| w[1] - w[0]).collect() };
    println!("\nstep sizes at s = -1 (early refinement):");
    println!("  uniform: {}", fmt(&steps(&uniform_schedule(nfe))));
    println!("  sway   : {}", fmt(&steps(&sway_schedule(nfe, -1.0)?)));

    // out-of-range coefficients are rejected rather than silently warped
    match sway_schedule(nfe, -1.2) {
        Err(e) => println!("\nsway_schedule(8, -1.2) -> error: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
