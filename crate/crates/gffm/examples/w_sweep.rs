//! Sweep the guidance weight baked into training. Larger w means stronger
//! conditioning pressure on the learned field; past w = 1 the bootstrapped
//! target amplification has no finite fixed point and runs can destabilize,
//! which the harness flags per point instead of crashing.
//!
//! Run with: cargo run --release --example w_sweep

use gffm::dataset::{make_dataset, DatasetKind, DatasetSpec};
use gffm::eval::{w_sweep, BenchContext, EvalSettings};
use gffm::model::Arch;
use gffm::oracle::GaussianMixtureSpec;
use gffm::sampler::Schedule;
use gffm::train::{LossKind, TrainConfig};

fn main() -> gffm::Result<()> {
    let mixture = GaussianMixtureSpec::ring(8, 2, 4.0, 0.5)?;
    let dataset = make_dataset(&DatasetSpec {
        kind: DatasetKind::Mixture,
        mixture: mixture.clone(),
        n_items: 4096,
        mask_lo: 0.7,
        mask_hi: 1.0,
        seed: 1,
    })?;
    let ctx = BenchContext {
        arch: Arch {
            data_dim: 2,
            n_classes: 8,
            hidden: 64,
            depth: 3,
            prompt_dim: 4,
            time_dim: 8,
        },
        dataset: &dataset,
        mixture: &mixture,
        guidance_scale: 2.0,
        schedule: Schedule::Uniform,
        eval: EvalSettings {
            n_samples: 800,
            n_projections: 96,
            seed: 5,
        },
        fingerprint: "sweep-demo".into(),
    };
    let template = TrainConfig {
        loss_kind: LossKind::MgCfm,
        w: 0.7,
        p_uncond: 0.2,
        p_prompt_drop: 0.3,
        use_stop_gradient: true,
        peak_lr: 2e-3,
        warmup_steps: 100,
        total_steps: 2000,
        grad_clip_norm: 1.0,
        batch_size: 64,
        seed: 0,
    };

    let w_list = [0.0, 0.3, 0.5, 0.7, 1.0, 2.0];
    println!("training one run per w in {w_list:?} (guidance-free sampling)...");
    let result = w_sweep(&ctx, &w_list, &template, 32);

    println!(
        "{:>5} {:>9} {:>11} {:>11} {:>9}",
        "w", "sw2", "misclass%", "final loss", "diverged"
    );
    for row in &result.rows {
        println!(
            "{:>5.2} {:>9} {:>11} {:>11} {:>9}",
            row.w,
            row.sw2.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            row.misclass_rate
                .map(|v| format!("{:.2}", v * 100.0))
                .unwrap_or_else(|| "-".into()),
            row.final_loss
                .map(|v| format!("{v:.3}"))
                .unwrap_or_else(|| "-".into()),
            row.diverged
        );
    }

    // per-step records are kept for every point, e.g. to plot loss
    // fluctuations of the largest w against the smallest
    let spread = |w: f64| -> Option<f64> {
        let record = &result.records.iter().find(|(rw, _)| *rw == w)?.1;
        let tail: Vec<f64> = record.rows.iter().rev().take(200).map(|r| r.loss).collect();
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        let var = tail.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / tail.len() as f64;
        Some(var.sqrt() / mean)
    };
    if let (Some(lo), Some(hi)) = (spread(0.0), spread(2.0)) {
        println!("\nrelative loss spread over the last 200 steps: w=0 {lo:.3}, w=2 {hi:.3}");
    }
    Ok(())
}
