//! The benchmark grid: {plain flow matching, model guidance} x
//! {guidance on, off at inference} x step counts {32, 16, 7}, each cell
//! scored by distribution distance, misclassification and exact forward
//! counts. Guidance-on cells always cost exactly twice their guidance-off
//! siblings.
//!
//! Short trainings keep this demo quick; the table layout and counting
//! laws are what it shows.
//!
//! Run with: cargo run --release --example benchmark_grid

use gffm::dataset::{make_dataset, DatasetKind, DatasetSpec};
use gffm::eval::{run_grid, BenchContext, EvalSettings};
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
    let n_samples = 800;
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
            n_samples,
            n_projections: 96,
            seed: 5,
        },
        fingerprint: "grid-demo".into(),
    };
    let template = TrainConfig {
        loss_kind: LossKind::Cfm,
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
    let variants = vec![
        template.clone(),
        TrainConfig {
            loss_kind: LossKind::MgCfm,
            ..template
        },
    ];

    println!("training 2 variants x 2 seeds, then 24 evaluation cells...");
    let result = run_grid(&ctx, &variants, &[true, false], &[32, 16, 7], &[0, 1]);
    print!("{}", result.format_table(n_samples));

    // the counting law, checked cell by cell
    let mut pairs = 0;
    for on in result.rows.iter().filter(|r| r.cfg_infer && !r.diverged) {
        let off = result
            .rows
            .iter()
            .find(|r| !r.cfg_infer && r.training == on.training && r.nfe == on.nfe && r.seed == on.seed)
            .unwrap();
        assert_eq!(on.forward_count, 2 * off.forward_count);
        pairs += 1;
    }
    println!("\nforward-count law held exactly for all {pairs} on/off cell pairs");
    Ok(())
}
