//! Metrics and benchmark harnesses.
//!
//! Quality is sliced 2-Wasserstein distance against exact mixture draws;
//! condition fidelity is the fraction of samples the Bayes classifier
//! assigns to their requested label (reported in tables as the
//! misclassification rate so lower is better); cost is the exact count of
//! model forward passes plus wall clock.
//!
//! The harnesses reproduce the benchmark tables: the training x
//! guidance-at-inference x step-count grid, the guidance-weight sweep, and
//! the stop-gradient ablation. A diverged training run is flagged in its
//! rows, never crashes a harness.

use std::io::Write;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dataset::DataItem;
use crate::error::{Error, Result};
use crate::model::{Arch, Condition, VelocityModel};
use crate::oracle::GaussianMixtureSpec;
use crate::rng;
use crate::sampler::{sample_batch, SamplerConfig, Schedule, VelocityField};
use crate::train::{train, LossKind, TrainConfig, TrainRecord};

type TrainedPair = std::result::Result<(VelocityModel, TrainRecord), Error>;

/// Root-mean of squared 1-D 2-Wasserstein distances over random unit
/// projections, each computed by the sorted-match formula. Requires equal
/// sample counts; deterministic per rng stream.
pub fn sliced_wasserstein(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    n_proj: usize,
    rng: &mut rng::Rng,
) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("sliced_wasserstein"));
    }
    if a.len() != b.len() {
        return Err(Error::SizeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let dim = a[0].len();
    for s in a.iter().chain(b) {
        if s.len() != dim {
            return Err(Error::DimMismatch {
                left: s.len(),
                right: dim,
            });
        }
    }
    assert!(n_proj >= 1, "sliced_wasserstein: n_proj must be >= 1");

    let n = a.len() as f64;
    let mut acc = 0.0;
    let mut pa = vec![0.0; a.len()];
    let mut pb = vec![0.0; b.len()];
    for _ in 0..n_proj {
        let mut dir: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue; // measure-zero; the next draw replaces it
        }
        for d in dir.iter_mut() {
            *d /= norm;
        }
        for (o, s) in pa.iter_mut().zip(a) {
            *o = s.iter().zip(&dir).map(|(x, d)| x * d).sum();
        }
        for (o, s) in pb.iter_mut().zip(b) {
            *o = s.iter().zip(&dir).map(|(x, d)| x * d).sum();
        }
        pa.sort_by(f64::total_cmp);
        pb.sort_by(f64::total_cmp);
        let w2sq: f64 = pa
            .iter()
            .zip(&pb)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n;
        acc += w2sq;
    }
    Ok((acc / n_proj as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LabelFidelity {
    pub label: usize,
    pub requested: usize,
    pub matched: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FidelityReport {
    /// Fraction of samples classified as their requested label.
    pub overall: f64,
    pub per_label: Vec<LabelFidelity>,
}

/// Bayes-classify each sample and compare to its requested label.
pub fn condition_fidelity(
    samples: &[Vec<f64>],
    requested: &[usize],
    spec: &GaussianMixtureSpec,
) -> Result<FidelityReport> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("condition_fidelity"));
    }
    if samples.len() != requested.len() {
        return Err(Error::SizeMismatch {
            left: samples.len(),
            right: requested.len(),
        });
    }
    let mut per: Vec<LabelFidelity> = (0..spec.k())
        .map(|label| LabelFidelity {
            label,
            requested: 0,
            matched: 0,
        })
        .collect();
    let mut matched = 0usize;
    for (x, &want) in samples.iter().zip(requested) {
        if want >= spec.k() {
            return Err(Error::LabelOutOfRange {
                label: want,
                n_classes: spec.k(),
            });
        }
        per[want].requested += 1;
        if spec.bayes_classify(x) == want {
            per[want].matched += 1;
            matched += 1;
        }
    }
    Ok(FidelityReport {
        overall: matched as f64 / samples.len() as f64,
        per_label: per,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSettings {
    /// Samples generated per evaluation.
    pub n_samples: usize,
    /// Random projections for the sliced distance.
    pub n_projections: usize,
    /// Seed for label draws, the reference set, and projections.
    pub seed: u64,
}

/// One evaluation of one sampling configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub sliced_w2: f64,
    /// Fraction of samples matching their requested label.
    pub fidelity: f64,
    pub model_forward_count: u64,
    pub wall_clock_seconds: f64,
    pub config_fingerprint: String,
    pub per_condition: Vec<LabelFidelity>,
}

impl MetricsReport {
    pub fn misclass_rate(&self) -> f64 {
        1.0 - self.fidelity
    }
}

/// Sample a field under `sampler_cfg` with labels drawn from the mixture
/// weights, then score against an exact reference set with the same labels.
pub fn evaluate_field(
    field: &dyn VelocityField,
    mixture: &GaussianMixtureSpec,
    sampler_cfg: &SamplerConfig,
    eval: &EvalSettings,
    fingerprint: &str,
) -> Result<MetricsReport> {
    let mut label_rng = rng::rng_from_seed(rng::derive_seed(eval.seed, "labels"));
    let labels: Vec<usize> = (0..eval.n_samples)
        .map(|_| mixture.sample_label(&mut label_rng))
        .collect();
    let conds: Vec<Condition> = labels.iter().map(|&l| Condition::with_label(l)).collect();

    let (samples, counters) = sample_batch(field, &conds, sampler_cfg)?;

    let mut ref_rng = rng::rng_from_seed(rng::derive_seed(eval.seed, "reference"));
    let reference: Vec<Vec<f64>> = labels
        .iter()
        .map(|&l| mixture.exact_sample(l, &mut ref_rng))
        .collect::<Result<_>>()?;

    let mut proj_rng = rng::rng_from_seed(rng::derive_seed(eval.seed, "projections"));
    let sw2 = sliced_wasserstein(&samples, &reference, eval.n_projections, &mut proj_rng)?;
    let fid = condition_fidelity(&samples, &labels, mixture)?;

    Ok(MetricsReport {
        sliced_w2: sw2,
        fidelity: fid.overall,
        model_forward_count: counters.model_forward_count,
        wall_clock_seconds: counters.wall_clock_seconds,
        config_fingerprint: fingerprint.to_string(),
        per_condition: fid.per_label,
    })
}

/// Shared inputs of the benchmark harnesses.
pub struct BenchContext<'a> {
    pub arch: Arch,
    pub dataset: &'a [DataItem],
    pub mixture: &'a GaussianMixtureSpec,
    /// Guidance scale applied when a cell samples with guidance on.
    pub guidance_scale: f64,
    pub schedule: Schedule,
    pub eval: EvalSettings,
    pub fingerprint: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridRow {
    pub training: String,
    pub cfg_infer: bool,
    pub nfe: usize,
    pub seed: u64,
    pub sw2: Option<f64>,
    pub misclass_rate: Option<f64>,
    pub forward_count: u64,
    pub wall_clock: f64,
    pub diverged: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl GridResult {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(
            w,
            "training,cfg_infer,nfe,seed,sw2,misclass_rate,forward_count,wall_clock,diverged"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.training,
                r.cfg_infer,
                r.nfe,
                r.seed,
                opt(r.sw2),
                opt(r.misclass_rate),
                r.forward_count,
                r.wall_clock,
                r.diverged
            )?;
        }
        Ok(())
    }

    /// Seed-averaged summary grouped like the benchmark table: one block
    /// per training variant, sub-rows by guidance-at-inference and step
    /// count. `n_samples` is the evaluation batch size, used to report
    /// forward passes per sample. Wall clock is excluded (it is not
    /// reproducible).
    pub fn format_table(&self, n_samples: usize) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10} {:<10} {:>5} {:>12} {:>12} {:>12} {:>9}\n",
            "training", "cfg_infer", "nfe", "sw2", "misclass%", "fwd/sample", "diverged"
        ));
        let mut keys: Vec<(String, bool, usize)> = Vec::new();
        for r in &self.rows {
            let k = (r.training.clone(), r.cfg_infer, r.nfe);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let mut last_training = String::new();
        for (training, cfg_infer, nfe) in keys {
            let cells: Vec<&GridRow> = self
                .rows
                .iter()
                .filter(|r| r.training == training && r.cfg_infer == cfg_infer && r.nfe == nfe)
                .collect();
            let n_ok = cells.iter().filter(|r| !r.diverged).count();
            let mean = |f: &dyn Fn(&GridRow) -> Option<f64>| -> Option<f64> {
                if n_ok == 0 {
                    return None;
                }
                let mut acc = 0.0;
                for c in &cells {
                    acc += f(c)?;
                }
                Some(acc / n_ok as f64)
            };
            let sw2 = mean(&|r| if r.diverged { None } else { r.sw2 });
            let mis = mean(&|r| if r.diverged { None } else { r.misclass_rate });
            let fwd = mean(&|r| {
                if r.diverged {
                    None
                } else {
                    Some(r.forward_count as f64)
                }
            });
            if training != last_training {
                if !last_training.is_empty() {
                    out.push_str(&"-".repeat(76));
                    out.push('\n');
                }
                last_training = training.clone();
            }
            let n_div = cells.len() - n_ok;
            out.push_str(&format!(
                "{:<10} {:<10} {:>5} {:>12} {:>12} {:>12} {:>9}\n",
                training,
                if cfg_infer { "yes" } else { "no" },
                nfe,
                sw2.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
                mis.map(|v| format!("{:.2}", v * 100.0))
                    .unwrap_or_else(|| "-".into()),
                fwd.map(|v| format!("{:.0}", v / n_samples as f64))
                    .unwrap_or_else(|| "-".into()),
                if n_div > 0 {
                    format!("{n_div}/{}", cells.len())
                } else {
                    "no".into()
                }
            ));
        }
        out
    }
}

/// Train every (variant, seed) pair once, then evaluate each checkpoint at
/// every (guidance on/off) x (step count) cell. Diverged trainings are
/// flagged in their rows; the grid always completes.
pub fn run_grid(
    ctx: &BenchContext,
    train_variants: &[TrainConfig],
    infer_cfg_variants: &[bool],
    nfe_list: &[usize],
    seeds: &[u64],
) -> GridResult {
    let mut jobs: Vec<(TrainConfig, u64)> = Vec::new();
    for variant in train_variants {
        for &seed in seeds {
            let mut cfg = variant.clone();
            cfg.seed = seed;
            jobs.push((cfg, seed));
        }
    }

    let trained: Vec<(TrainConfig, u64, Result<VelocityModel>)> = jobs
        .into_par_iter()
        .map(|(cfg, seed)| {
            let r = train(&ctx.arch, &cfg, ctx.dataset).map(|out| out.model);
            (cfg, seed, r)
        })
        .collect();

    let mut rows = Vec::new();
    for (cfg, seed, outcome) in &trained {
        let training = cfg.loss_kind.to_string();
        for &cfg_infer in infer_cfg_variants {
            for &nfe in nfe_list {
                match outcome {
                    Err(_) => rows.push(GridRow {
                        training: training.clone(),
                        cfg_infer,
                        nfe,
                        seed: *seed,
                        sw2: None,
                        misclass_rate: None,
                        forward_count: 0,
                        wall_clock: 0.0,
                        diverged: true,
                    }),
                    Ok(model) => {
                        let sampler_cfg = SamplerConfig {
                            nfe,
                            cfg_enabled: cfg_infer,
                            guidance_scale: ctx.guidance_scale,
                            schedule: ctx.schedule,
                            seed: rng::derive_seed(*seed, "sampler"),
                        };
                        let eval = EvalSettings {
                            seed: rng::derive_seed(*seed, "eval"),
                            ..ctx.eval
                        };
                        let report = evaluate_field(
                            model,
                            ctx.mixture,
                            &sampler_cfg,
                            &eval,
                            &ctx.fingerprint,
                        );
                        match report {
                            Ok(m) => rows.push(GridRow {
                                training: training.clone(),
                                cfg_infer,
                                nfe,
                                seed: *seed,
                                sw2: Some(m.sliced_w2),
                                misclass_rate: Some(m.misclass_rate()),
                                forward_count: m.model_forward_count,
                                wall_clock: m.wall_clock_seconds,
                                diverged: false,
                            }),
                            Err(_) => rows.push(GridRow {
                                training: training.clone(),
                                cfg_infer,
                                nfe,
                                seed: *seed,
                                sw2: None,
                                misclass_rate: None,
                                forward_count: 0,
                                wall_clock: 0.0,
                                diverged: true,
                            }),
                        }
                    }
                }
            }
        }
    }
    GridResult { rows }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub w: f64,
    pub sw2: Option<f64>,
    pub misclass_rate: Option<f64>,
    pub forward_count: u64,
    pub wall_clock: f64,
    pub diverged: bool,
    pub final_loss: Option<f64>,
}

pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Full per-step records, one per sweep point (including diverged ones,
    /// truncated at the failing step).
    pub records: Vec<(f64, TrainRecord)>,
}

impl SweepResult {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(
            w,
            "w,sw2,misclass_rate,forward_count,wall_clock,diverged,final_loss"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.w,
                opt(r.sw2),
                opt(r.misclass_rate),
                r.forward_count,
                r.wall_clock,
                r.diverged,
                opt(r.final_loss)
            )?;
        }
        Ok(())
    }
}

/// Train one model-guidance run per weight in `w_list` (template's seed,
/// data and recipe fixed) and evaluate each without guidance at inference.
/// Divergence is captured per point; the sweep always completes.
pub fn w_sweep(
    ctx: &BenchContext,
    w_list: &[f64],
    template: &TrainConfig,
    nfe: usize,
) -> SweepResult {
    assert!(!w_list.is_empty(), "w_sweep: empty weight list");
    let outcomes: Vec<(f64, TrainedPair)> = w_list
        .par_iter()
        .map(|&w| {
            let mut cfg = template.clone();
            cfg.loss_kind = LossKind::MgCfm;
            cfg.w = w;
            let r = train(&ctx.arch, &cfg, ctx.dataset).map(|out| (out.model, out.record));
            (w, r)
        })
        .collect();

    let mut rows = Vec::new();
    let mut records = Vec::new();
    for (w, outcome) in outcomes {
        match outcome {
            Ok((model, record)) => {
                let sampler_cfg = SamplerConfig {
                    nfe,
                    cfg_enabled: false,
                    guidance_scale: ctx.guidance_scale,
                    schedule: ctx.schedule,
                    seed: rng::derive_seed(template.seed, "sampler"),
                };
                let eval = EvalSettings {
                    seed: rng::derive_seed(template.seed, "eval"),
                    ..ctx.eval
                };
                let final_loss = record.final_loss();
                let flagged = record.diverged_any();
                match evaluate_field(&model, ctx.mixture, &sampler_cfg, &eval, &ctx.fingerprint) {
                    Ok(m) => rows.push(SweepRow {
                        w,
                        sw2: Some(m.sliced_w2),
                        misclass_rate: Some(m.misclass_rate()),
                        forward_count: m.model_forward_count,
                        wall_clock: m.wall_clock_seconds,
                        diverged: flagged,
                        final_loss,
                    }),
                    Err(_) => rows.push(SweepRow {
                        w,
                        sw2: None,
                        misclass_rate: None,
                        forward_count: 0,
                        wall_clock: 0.0,
                        diverged: true,
                        final_loss,
                    }),
                }
                records.push((w, record));
            }
            Err(Error::Diverged { record, .. }) => {
                rows.push(SweepRow {
                    w,
                    sw2: None,
                    misclass_rate: None,
                    forward_count: 0,
                    wall_clock: 0.0,
                    diverged: true,
                    final_loss: record.final_loss(),
                });
                records.push((w, *record));
            }
            Err(_) => {
                rows.push(SweepRow {
                    w,
                    sw2: None,
                    misclass_rate: None,
                    forward_count: 0,
                    wall_clock: 0.0,
                    diverged: true,
                    final_loss: None,
                });
                records.push((w, TrainRecord::default()));
            }
        }
    }
    SweepResult { rows, records }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub stop_gradient: bool,
    pub sw2: Option<f64>,
    pub misclass_rate: Option<f64>,
    pub final_loss: Option<f64>,
    pub diverged: bool,
}

pub struct AblationResult {
    pub rows: Vec<AblationRow>,
    pub records: Vec<(bool, TrainRecord)>,
}

impl AblationResult {
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "stop_gradient,sw2,misclass_rate,final_loss,diverged")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.stop_gradient,
                opt(r.sw2),
                opt(r.misclass_rate),
                opt(r.final_loss),
                r.diverged
            )?;
        }
        Ok(())
    }
}

/// Train the same model-guidance config twice, toggling only the
/// stop-gradient, and report both metric sets side by side. Quality of the
/// no-stop-gradient variant is recorded, not asserted.
pub fn sg_ablation(
    ctx: &BenchContext,
    template: &TrainConfig,
    nfe: usize,
) -> Result<AblationResult> {
    if template.loss_kind != LossKind::MgCfm {
        return Err(Error::InvalidTrainConfig(
            "sg_ablation requires the model-guidance loss".into(),
        ));
    }
    let variants: Vec<bool> = vec![true, false];
    let outcomes: Vec<(bool, TrainedPair)> = variants
        .par_iter()
        .map(|&sg| {
            let mut cfg = template.clone();
            cfg.use_stop_gradient = sg;
            let r = train(&ctx.arch, &cfg, ctx.dataset).map(|out| (out.model, out.record));
            (sg, r)
        })
        .collect();

    let mut rows = Vec::new();
    let mut records = Vec::new();
    for (sg, outcome) in outcomes {
        match outcome {
            Ok((model, record)) => {
                let sampler_cfg = SamplerConfig {
                    nfe,
                    cfg_enabled: false,
                    guidance_scale: ctx.guidance_scale,
                    schedule: ctx.schedule,
                    seed: rng::derive_seed(template.seed, "sampler"),
                };
                let eval = EvalSettings {
                    seed: rng::derive_seed(template.seed, "eval"),
                    ..ctx.eval
                };
                let report =
                    evaluate_field(&model, ctx.mixture, &sampler_cfg, &eval, &ctx.fingerprint);
                let (sw2, mis, diverged) = match &report {
                    Ok(m) => (
                        Some(m.sliced_w2),
                        Some(m.misclass_rate()),
                        record.diverged_any(),
                    ),
                    Err(_) => (None, None, true),
                };
                rows.push(AblationRow {
                    stop_gradient: sg,
                    sw2,
                    misclass_rate: mis,
                    final_loss: record.final_loss(),
                    diverged,
                });
                records.push((sg, record));
            }
            Err(Error::Diverged { record, .. }) => {
                rows.push(AblationRow {
                    stop_gradient: sg,
                    sw2: None,
                    misclass_rate: None,
                    final_loss: record.final_loss(),
                    diverged: true,
                });
                records.push((sg, *record));
            }
            Err(e) => return Err(e),
        }
    }
    Ok(AblationResult { rows, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn sw2_identity_is_zero() {
        let a: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, -(i as f64)]).collect();
        let mut rng = rng_from_seed(1);
        let d = sliced_wasserstein(&a, &a, 32, &mut rng).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn sw2_unit_translation_in_1d() {
        let a: Vec<Vec<f64>> = (0..100).map(|_| vec![0.0]).collect();
        let b: Vec<Vec<f64>> = (0..100).map(|_| vec![1.0]).collect();
        let mut rng = rng_from_seed(2);
        let d = sliced_wasserstein(&a, &b, 16, &mut rng).unwrap();
        assert!((d - 1.0).abs() < 1e-12, "d = {d}");
    }

    #[test]
    fn sw2_shifted_gaussians_matches_quadrature_oracle() {
        // N(0, I) vs N((2, 0), I) in 2-D: projections onto a unit direction
        // at angle phi differ by a 2 cos(phi) shift, so the squared 1-D W2
        // is (2 cos phi)^2 and the root-mean over directions is
        // 2 sqrt(mean cos^2) = 2 / sqrt(2). Evaluate the angle average by
        // trapezoid quadrature instead of trusting the closed form.
        let n = 10_000;
        let mut rng = rng_from_seed(3);
        let mut draw = |mx: f64| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| {
                    vec![
                        mx + rng.sample::<f64, _>(StandardNormal),
                        rng.sample::<f64, _>(StandardNormal),
                    ]
                })
                .collect()
        };
        let a = draw(0.0);
        let b = draw(2.0);

        let quad_points = 4096;
        let mean_cos_sq: f64 = (0..quad_points)
            .map(|i| {
                let phi = 2.0 * std::f64::consts::PI * (i as f64 + 0.5) / quad_points as f64;
                phi.cos().powi(2)
            })
            .sum::<f64>()
            / quad_points as f64;
        let expected = 2.0 * mean_cos_sq.sqrt();
        assert!((expected - 2.0 / 2.0f64.sqrt()).abs() < 1e-6);

        let mut prng = rng_from_seed(4);
        let d = sliced_wasserstein(&a, &b, 128, &mut prng).unwrap();
        assert!((d - expected).abs() < 0.1, "d = {d}, expected {expected}");
    }

    #[test]
    fn sw2_is_symmetric() {
        let mut rng = rng_from_seed(5);
        let a: Vec<Vec<f64>> = (0..64)
            .map(|_| vec![rng.sample(StandardNormal), rng.sample(StandardNormal)])
            .collect();
        let b: Vec<Vec<f64>> = (0..64)
            .map(|_| {
                vec![
                    1.0 + rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                ]
            })
            .collect();
        let mut r1 = rng_from_seed(6);
        let mut r2 = rng_from_seed(6);
        let dab = sliced_wasserstein(&a, &b, 64, &mut r1).unwrap();
        let dba = sliced_wasserstein(&b, &a, 64, &mut r2).unwrap();
        assert!((dab - dba).abs() < 1e-12);
    }

    #[test]
    fn sw2_rejects_mismatches() {
        let a = vec![vec![0.0, 0.0]];
        let b = vec![vec![0.0]];
        let mut rng = rng_from_seed(0);
        assert!(sliced_wasserstein(&a, &b, 4, &mut rng).is_err());
        assert!(sliced_wasserstein(&a, &[], 4, &mut rng).is_err());
        let c = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        assert!(matches!(
            sliced_wasserstein(&a, &c, 4, &mut rng),
            Err(Error::SizeMismatch { .. })
        ));
    }

    #[test]
    fn fidelity_well_separated_exact_draws() {
        // pairwise mean distance is 6 sigma or more, so the Bayes
        // classifier recovers essentially every label
        let spec = GaussianMixtureSpec::ring(8, 2, 4.0, 0.5).unwrap();
        let mut rng = rng_from_seed(7);
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for i in 0..4000 {
            let l = i % 8;
            samples.push(spec.exact_sample(l, &mut rng).unwrap());
            labels.push(l);
        }
        let rep = condition_fidelity(&samples, &labels, &spec).unwrap();
        assert!(rep.overall > 0.99, "fidelity {}", rep.overall);
    }

    #[test]
    fn fidelity_half_mismatched_by_construction() {
        let spec = GaussianMixtureSpec::ring(2, 2, 5.0, 0.1).unwrap();
        let mu0 = spec.components()[0].mean.clone();
        let samples: Vec<Vec<f64>> = (0..100).map(|_| mu0.clone()).collect();
        let labels: Vec<usize> = (0..100).map(|i| i % 2).collect();
        let rep = condition_fidelity(&samples, &labels, &spec).unwrap();
        assert_eq!(rep.overall, 0.5);
        assert_eq!(rep.per_label[0].matched, 50);
        assert_eq!(rep.per_label[1].matched, 0);
    }

    #[test]
    fn fidelity_rejects_empty_input() {
        let spec = GaussianMixtureSpec::ring(2, 2, 5.0, 0.1).unwrap();
        assert!(condition_fidelity(&[], &[], &spec).is_err());
    }

    #[test]
    fn sg_ablation_requires_model_guidance_loss() {
        let mixture = GaussianMixtureSpec::ring(2, 2, 4.0, 0.5).unwrap();
        let dataset: Vec<crate::dataset::DataItem> = vec![];
        let ctx = BenchContext {
            arch: crate::model::Arch {
                data_dim: 2,
                n_classes: 2,
                hidden: 4,
                depth: 1,
                prompt_dim: 4,
                time_dim: 4,
            },
            dataset: &dataset,
            mixture: &mixture,
            guidance_scale: 2.0,
            schedule: Schedule::Uniform,
            eval: EvalSettings {
                n_samples: 10,
                n_projections: 4,
                seed: 0,
            },
            fingerprint: "t".into(),
        };
        let template = TrainConfig {
            loss_kind: LossKind::Cfm,
            w: 0.7,
            p_uncond: 0.2,
            p_prompt_drop: 0.3,
            use_stop_gradient: true,
            peak_lr: 1e-3,
            warmup_steps: 0,
            total_steps: 0,
            grad_clip_norm: 1.0,
            batch_size: 1,
            seed: 0,
        };
        assert!(sg_ablation(&ctx, &template, 4).is_err());
    }

    #[test]
    fn sweep_at_w_zero_reproduces_plain_cfm_metrics() {
        use crate::dataset::{make_dataset, DatasetKind, DatasetSpec};
        use crate::model::Arch;

        let mixture = GaussianMixtureSpec::ring(4, 2, 4.0, 0.5).unwrap();
        let dataset = make_dataset(&DatasetSpec {
            kind: DatasetKind::Mixture,
            mixture: mixture.clone(),
            n_items: 256,
            mask_lo: 0.7,
            mask_hi: 1.0,
            seed: 1,
        })
        .unwrap();
        let arch = Arch {
            data_dim: 2,
            n_classes: 4,
            hidden: 16,
            depth: 2,
            prompt_dim: 4,
            time_dim: 4,
        };
        let template = TrainConfig {
            loss_kind: LossKind::MgCfm,
            w: 0.7,
            p_uncond: 0.2,
            p_prompt_drop: 0.3,
            use_stop_gradient: true,
            peak_lr: 1e-3,
            warmup_steps: 5,
            total_steps: 100,
            grad_clip_norm: 1.0,
            batch_size: 16,
            seed: 77,
        };
        let ctx = BenchContext {
            arch,
            dataset: &dataset,
            mixture: &mixture,
            guidance_scale: 2.0,
            schedule: Schedule::Uniform,
            eval: EvalSettings {
                n_samples: 100,
                n_projections: 32,
                seed: 3,
            },
            fingerprint: "t".into(),
        };

        let sweep = w_sweep(&ctx, &[0.0], &template, 8);

        let mut cfm_cfg = template.clone();
        cfm_cfg.loss_kind = LossKind::Cfm;
        let cfm = train(&ctx.arch, &cfm_cfg, ctx.dataset).unwrap();
        let sampler_cfg = SamplerConfig {
            nfe: 8,
            cfg_enabled: false,
            guidance_scale: 2.0,
            schedule: Schedule::Uniform,
            seed: rng::derive_seed(template.seed, "sampler"),
        };
        let eval = EvalSettings {
            seed: rng::derive_seed(template.seed, "eval"),
            ..ctx.eval
        };
        let direct = evaluate_field(&cfm.model, &mixture, &sampler_cfg, &eval, "t").unwrap();

        // at w = 0 the guidance term contributes exactly nothing, so the
        // whole training trajectory coincides with plain flow matching
        let row = &sweep.rows[0];
        assert!((row.sw2.unwrap() - direct.sliced_w2).abs() < 1e-12);
        assert!((row.misclass_rate.unwrap() - direct.misclass_rate()).abs() < 1e-12);
    }
}
