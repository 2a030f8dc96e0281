//! The core comparison: a plain flow-matching model sampled WITH
//! classifier-free guidance versus a model-guidance-trained model sampled
//! WITHOUT it, on the same mixture. The second costs exactly half the
//! field evaluations per step.
//!
//! Run with: cargo run --release --example guidance_free_vs_cfg

use gffm::dataset::{make_dataset, DatasetKind, DatasetSpec};
use gffm::eval::{evaluate_field, EvalSettings};
use gffm::model::Arch;
use gffm::oracle::GaussianMixtureSpec;
use gffm::rng::derive_seed;
use gffm::sampler::{SamplerConfig, Schedule};
use gffm::train::{train, LossKind, TrainConfig};

fn main() -> gffm::Result<()> {
    let mixture = GaussianMixtureSpec::ring(8, 2, 4.0, 0.5)?;
    let dataset = make_dataset(&DatasetSpec {
        kind: DatasetKind::Mixture,
        mixture: mixture.clone(),
        n_items: 8192,
        mask_lo: 0.7,
        mask_hi: 1.0,
        seed: 1,
    })?;

    let arch = Arch {
        data_dim: 2,
        n_classes: 8,
        hidden: 64,
        depth: 3,
        prompt_dim: 4,
        time_dim: 8,
    };
    let base = TrainConfig {
        loss_kind: LossKind::Cfm,
        w: 0.7,
        p_uncond: 0.2,
        p_prompt_drop: 0.3,
        use_stop_gradient: true,
        peak_lr: 2e-3,
        warmup_steps: 150,
        total_steps: 3000,
        grad_clip_norm: 1.0,
        batch_size: 64,
        seed: 11,
    };

    println!("training plain flow matching ({} steps)...", base.total_steps);
    let t0 = std::time::Instant::now();
    let cfm = train(&arch, &base, &dataset)?;
    println!("  done in {:.1}s", t0.elapsed().as_secs_f64());

    let mg_cfg = TrainConfig {
        loss_kind: LossKind::MgCfm,
        ..base.clone()
    };
    println!("training with model guidance (w = {})...", mg_cfg.w);
    let t0 = std::time::Instant::now();
    let mg = train(&arch, &mg_cfg, &dataset)?;
    println!("  done in {:.1}s", t0.elapsed().as_secs_f64());

    let eval = EvalSettings {
        n_samples: 2000,
        n_projections: 128,
        seed: derive_seed(base.seed, "eval"),
    };
    let sampler = |cfg_enabled: bool| SamplerConfig {
        nfe: 32,
        cfg_enabled,
        guidance_scale: 2.0,
        schedule: Schedule::Uniform,
        seed: derive_seed(base.seed, "sampler"),
    };

    println!("\n{:<26} {:>9} {:>11} {:>12}", "run", "sw2", "misclass%", "fwd passes");
    let report = |name: &str, model: &gffm::model::VelocityModel, cfg_on: bool| {
        let m = evaluate_field(model, &mixture, &sampler(cfg_on), &eval, "demo").unwrap();
        println!(
            "{:<26} {:>9.4} {:>11.2} {:>12}",
            name,
            m.sliced_w2,
            m.misclass_rate() * 100.0,
            m.model_forward_count
        );
        m
    };
    let baseline = report("cfm + guidance (w=2)", &cfm.model, true);
    report("cfm, no guidance", &cfm.model, false);
    let headline = report("model-guidance, no cfg", &mg.model, false);
    report("model-guidance + cfg", &mg.model, true);

    println!(
        "\nhalf the compute: {} vs {} forward passes ({}x)",
        headline.model_forward_count,
        baseline.model_forward_count,
        baseline.model_forward_count as f64 / headline.model_forward_count as f64
    );
    println!(
        "misclass gap (mg - baseline): {:+.2} points",
        (headline.misclass_rate() - baseline.misclass_rate()) * 100.0
    );
    println!(
        "sw2 ratio (mg / baseline): {:.3}",
        headline.sliced_w2 / baseline.sliced_w2
    );
    Ok(())
}
