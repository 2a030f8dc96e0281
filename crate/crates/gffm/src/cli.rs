//! Command implementations behind the `gffm` binary: train / sample /
//! eval / grid / sweep, all driven by a run-config file.
//!
//! Every artifact file name embeds the config fingerprint, so rerunning an
//! identical config overwrites the same files with identical content
//! (wall-clock fields aside). The `GFFM_SEED` environment variable
//! overrides the config seed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{parse_config, RunConfig};
use crate::dataset::{make_dataset, DatasetKind};
use crate::error::{Error, Result};
use crate::eval::{evaluate_field, run_grid, w_sweep, BenchContext};
use crate::model::{ensure_arch, load_checkpoint, save_checkpoint, Condition};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sampler::sample_batch;
use crate::train::{train, LossKind, TrainConfig, TrainRecord};

#[derive(Clone, Debug)]
pub enum Command {
    Train {
        config: PathBuf,
        out: PathBuf,
    },
    Sample {
        config: PathBuf,
        ckpt: PathBuf,
        out: PathBuf,
    },
    Eval {
        config: PathBuf,
        ckpt: PathBuf,
        out: PathBuf,
    },
    Grid {
        config: PathBuf,
        out: PathBuf,
    },
    Sweep {
        config: PathBuf,
        /// Override of the sweep weights, e.g. "0,0.3,0.7".
        w: Option<String>,
        out: PathBuf,
    },
}

pub fn run(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Train { config, out } => cmd_train(config, out),
        Command::Sample { config, ckpt, out } => cmd_sample(config, ckpt, out),
        Command::Eval { config, ckpt, out } => cmd_eval(config, ckpt, out),
        Command::Grid { config, out } => cmd_grid(config, out),
        Command::Sweep { config, w, out } => cmd_sweep(config, w.as_deref(), out),
    }
}

fn load_config(path: &Path) -> Result<RunConfig> {
    let mut cfg = parse_config(path)?;
    if let Ok(s) = std::env::var("GFFM_SEED") {
        cfg.seed = s
            .parse()
            .map_err(|_| Error::ConfigGeneral(format!("GFFM_SEED must be an unsigned integer, got \"{s}\"")))?;
    }
    Ok(cfg)
}

fn ensure_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))
}

fn write_file(path: &Path, content: &[u8]) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write_train_artifacts(out: &Path, fp: &str, record: &TrainRecord) -> Result<()> {
    let mut csv = Vec::new();
    record
        .write_csv(&mut csv)
        .map_err(|e| Error::io("train csv", e))?;
    write_file(&out.join(format!("train_{fp}.csv")), &csv)?;

    // two-column plot data: step vs loss
    let mut dat = String::new();
    for r in &record.rows {
        let _ = writeln!(dat, "{} {}", r.step, r.loss);
    }
    write_file(&out.join(format!("loss_vs_step_{fp}.dat")), dat.as_bytes())
}

pub fn cmd_train(config: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let fp = cfg.fingerprint();
    ensure_out(out)?;

    let dataset = make_dataset(&cfg.dataset_spec()?)?;
    match train(&cfg.arch(), &cfg.train_config(), &dataset) {
        Ok(result) => {
            save_checkpoint(&result.model, out.join(format!("ckpt_{fp}.gffm")))?;
            write_train_artifacts(out, &fp, &result.record)?;
            println!("trained {} steps, checkpoint ckpt_{fp}.gffm", cfg.train.total_steps);
            Ok(())
        }
        Err(Error::Diverged { step, what, record }) => {
            // keep the partial record for inspection, then fail
            write_train_artifacts(out, &fp, &record)?;
            Err(Error::Diverged { step, what, record })
        }
        Err(e) => Err(e),
    }
}

/// Draw sampling conditions from the dataset spec: labels proportional to
/// the mixture weights, prompts from freshly generated infill items when
/// the dataset kind has prompts.
fn sampling_conditions(cfg: &RunConfig, n: usize) -> Result<Vec<Condition>> {
    let mixture = cfg.mixture()?;
    match cfg.dataset.kind {
        DatasetKind::Mixture => {
            let mut rng = rng_from_seed(derive_seed(cfg.seed, "labels"));
            Ok((0..n)
                .map(|_| Condition::with_label(mixture.sample_label(&mut rng)))
                .collect())
        }
        DatasetKind::Infill => {
            let mut spec = cfg.dataset_spec()?;
            spec.n_items = n;
            spec.seed = derive_seed(cfg.seed, "labels");
            Ok(make_dataset(&spec)?.into_iter().map(|(_, c)| c).collect())
        }
    }
}

fn prompt_descriptor(cond: &Condition) -> String {
    match &cond.prompt {
        None => "none".to_string(),
        Some(p) => {
            let d = p.len() / 2;
            let flags = &p[d..];
            let start = flags.iter().position(|&f| f == 1.0);
            let len = flags.iter().filter(|&&f| f == 1.0).count();
            match start {
                Some(s) => format!("span:{s}:{len}"),
                None => "span:0:0".to_string(),
            }
        }
    }
}

pub fn cmd_sample(config: &Path, ckpt: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let fp = cfg.fingerprint();
    ensure_out(out)?;

    let model = load_checkpoint(ckpt)?;
    ensure_arch(&model, &cfg.arch())?;

    let conds = sampling_conditions(&cfg, cfg.eval.n_samples)?;
    let (samples, counters) = sample_batch(&model, &conds, &cfg.sampler_config())?;

    let mut csv = String::new();
    let dim = cfg.dataset.dim;
    let _ = write!(csv, "label,prompt");
    for i in 0..dim {
        let _ = write!(csv, ",x{i}");
    }
    let _ = writeln!(csv);
    for (cond, x) in conds.iter().zip(&samples) {
        let label = cond
            .label
            .map(|l| l.to_string())
            .unwrap_or_else(|| "null".to_string());
        let _ = write!(csv, "{label},{}", prompt_descriptor(cond));
        for v in x {
            let _ = write!(csv, ",{v}");
        }
        let _ = writeln!(csv);
    }
    write_file(&out.join(format!("samples_{fp}.csv")), csv.as_bytes())?;
    println!(
        "sampled {} points with {} forward passes -> samples_{fp}.csv",
        samples.len(),
        counters.model_forward_count
    );
    Ok(())
}

pub fn cmd_eval(config: &Path, ckpt: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let fp = cfg.fingerprint();
    ensure_out(out)?;

    let model = load_checkpoint(ckpt)?;
    ensure_arch(&model, &cfg.arch())?;

    let mixture = cfg.mixture()?;
    let report = evaluate_field(
        &model,
        &mixture,
        &cfg.sampler_config(),
        &cfg.eval_settings(),
        &fp,
    )?;

    let mut csv = String::new();
    let _ = writeln!(
        csv,
        "sw2,misclass_rate,fidelity,forward_count,wall_clock_seconds,fingerprint"
    );
    let _ = writeln!(
        csv,
        "{},{},{},{},{},{}",
        report.sliced_w2,
        report.misclass_rate(),
        report.fidelity,
        report.model_forward_count,
        report.wall_clock_seconds,
        report.config_fingerprint
    );
    write_file(&out.join(format!("metrics_{fp}.csv")), csv.as_bytes())?;
    println!(
        "sw2 {:.4}, misclass {:.2}%, {} forward passes -> metrics_{fp}.csv",
        report.sliced_w2,
        report.misclass_rate() * 100.0,
        report.model_forward_count
    );
    Ok(())
}

fn bench_context<'a>(
    cfg: &'a RunConfig,
    dataset: &'a [(Vec<f64>, Condition)],
    mixture: &'a crate::oracle::GaussianMixtureSpec,
    fp: &str,
) -> BenchContext<'a> {
    BenchContext {
        arch: cfg.arch(),
        dataset,
        mixture,
        guidance_scale: cfg.sampler.guidance_scale,
        schedule: cfg.sampler_config().schedule,
        eval: cfg.eval_settings(),
        fingerprint: fp.to_string(),
    }
}

pub fn cmd_grid(config: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let fp = cfg.fingerprint();
    ensure_out(out)?;

    let dataset = make_dataset(&cfg.dataset_spec()?)?;
    let mixture = cfg.mixture()?;
    let ctx = bench_context(&cfg, &dataset, &mixture, &fp);

    let template = cfg.train_config();
    let variants: Vec<TrainConfig> = [LossKind::Cfm, LossKind::MgCfm]
        .into_iter()
        .map(|kind| TrainConfig {
            loss_kind: kind,
            ..template.clone()
        })
        .collect();

    let result = run_grid(&ctx, &variants, &[true, false], &cfg.eval.nfe_list, &cfg.eval.seeds);

    let mut csv = Vec::new();
    result.write_csv(&mut csv).map_err(|e| Error::io("grid csv", e))?;
    write_file(&out.join(format!("grid_{fp}.csv")), &csv)?;
    let table = result.format_table(cfg.eval.n_samples);
    write_file(&out.join(format!("grid_{fp}.txt")), table.as_bytes())?;
    print!("{table}");
    println!("grid complete -> grid_{fp}.csv");
    Ok(())
}

pub fn cmd_sweep(config: &Path, w_override: Option<&str>, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let fp = cfg.fingerprint();
    ensure_out(out)?;

    let w_list: Vec<f64> = match w_override {
        Some(text) => text
            .split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| Error::ConfigGeneral(format!("bad sweep weight \"{p}\"")))
            })
            .collect::<Result<_>>()?,
        None => cfg.eval.w_list.clone(),
    };
    if w_list.is_empty() {
        return Err(Error::ConfigGeneral("empty sweep weight list".into()));
    }

    let dataset = make_dataset(&cfg.dataset_spec()?)?;
    let mixture = cfg.mixture()?;
    let ctx = bench_context(&cfg, &dataset, &mixture, &fp);
    let template = cfg.train_config();

    let result = w_sweep(&ctx, &w_list, &template, cfg.sampler.nfe);

    let mut csv = Vec::new();
    result.write_csv(&mut csv).map_err(|e| Error::io("sweep csv", e))?;
    write_file(&out.join(format!("wsweep_{fp}.csv")), &csv)?;

    // two-column plot data per figure analog
    let mut mis = String::new();
    let mut sw2 = String::new();
    for row in &result.rows {
        if let (Some(m), Some(s)) = (row.misclass_rate, row.sw2) {
            let _ = writeln!(mis, "{} {}", row.w, m);
            let _ = writeln!(sw2, "{} {}", row.w, s);
        }
    }
    write_file(&out.join(format!("wsweep_misclass_{fp}.dat")), mis.as_bytes())?;
    write_file(&out.join(format!("wsweep_sw2_{fp}.dat")), sw2.as_bytes())?;

    for (w, record) in &result.records {
        let mut csv = Vec::new();
        record.write_csv(&mut csv).map_err(|e| Error::io("sweep train csv", e))?;
        write_file(&out.join(format!("train_w{w}_{fp}.csv")), &csv)?;
    }
    println!("sweep over {:?} complete -> wsweep_{fp}.csv", w_list);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_descriptor_formats() {
        assert_eq!(prompt_descriptor(&Condition::null()), "none");
        let c = Condition {
            label: Some(1),
            prompt: Some(vec![0.0, 0.5, 0.0, 1.0, 0.0, 0.0]),
        };
        assert_eq!(prompt_descriptor(&c), "span:0:1");
    }
}
