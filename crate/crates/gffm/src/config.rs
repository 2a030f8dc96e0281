//! Run configuration: a sectioned key=value text format.
//!
//! ```text
//! # comment
//! seed = 42
//!
//! [dataset]
//! kind = mixture
//! k = 8
//! ...
//! ```
//!
//! Sections are `[dataset]`, `[model]`, `[train]`, `[sampler]`, `[eval]`;
//! the global `seed` lives before the first section header. Unknown
//! sections or keys are rejected with the offending line number, as are
//! type and range violations. Every run artifact embeds the config
//! fingerprint, the truncated SHA-256 of the canonical serialization, so
//! identical configs map to identical file names and contents.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::dataset::{DatasetKind, DatasetSpec};
use crate::error::{Error, Result};
use crate::eval::EvalSettings;
use crate::model::Arch;
use crate::oracle::{GaussianComponent, GaussianMixtureSpec};
use crate::rng::derive_seed;
use crate::sampler::{sway_max, SamplerConfig, Schedule, SWAY_MIN};
use crate::train::{LossKind, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    pub k: usize,
    pub dim: usize,
    pub radius: f64,
    pub sigma: f64,
    /// None means equal weights.
    pub weights: Option<Vec<f64>>,
    pub n_items: usize,
    pub mask_lo: f64,
    pub mask_hi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSection {
    pub hidden: usize,
    pub depth: usize,
    pub time_dim: usize,
    pub prompt_dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSection {
    pub loss: LossKind,
    pub w: f64,
    pub p_uncond: f64,
    pub p_prompt_drop: f64,
    pub stop_gradient: bool,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub grad_clip: f64,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerSection {
    pub nfe: usize,
    pub cfg: bool,
    pub guidance_scale: f64,
    pub schedule_kind: ScheduleKind,
    pub sway_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Uniform,
    Sway,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSection {
    pub n_samples: usize,
    pub n_projections: usize,
    pub seeds: Vec<u64>,
    pub nfe_list: Vec<usize>,
    pub w_list: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub sampler: SamplerSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            dataset: DatasetSection {
                kind: DatasetKind::Mixture,
                k: 8,
                dim: 2,
                radius: 4.0,
                sigma: 0.5,
                weights: None,
                n_items: 8192,
                mask_lo: 0.7,
                mask_hi: 1.0,
            },
            model: ModelSection {
                hidden: 256,
                depth: 4,
                time_dim: 8,
                prompt_dim: 4, // 2 * dim, resolved for the default dim
            },
            train: TrainSection {
                loss: LossKind::MgCfm,
                w: 0.7,
                p_uncond: 0.2,
                p_prompt_drop: 0.3,
                stop_gradient: true,
                peak_lr: 4e-4,
                warmup_steps: 400, // 5% of total, resolved
                total_steps: 8000,
                grad_clip: 1.0,
                batch_size: 64,
            },
            sampler: SamplerSection {
                nfe: 32,
                cfg: false,
                guidance_scale: 2.0,
                schedule_kind: ScheduleKind::Uniform,
                sway_s: -1.0,
            },
            eval: EvalSection {
                n_samples: 2000,
                n_projections: 128,
                seeds: vec![0, 1, 2],
                nfe_list: vec![32, 16, 7],
                w_list: vec![0.0, 0.3, 0.5, 0.7, 1.0, 2.0],
            },
        }
    }
}

struct Entry {
    line: usize,
    section: String,
    key: String,
    value: String,
}

fn cfg_err(e: &Entry, message: impl Into<String>) -> Error {
    Error::Config {
        line: e.line,
        section: e.section.clone(),
        key: e.key.clone(),
        message: message.into(),
    }
}

fn parse_as<T: std::str::FromStr>(e: &Entry, what: &str) -> Result<T> {
    e.value
        .parse()
        .map_err(|_| cfg_err(e, format!("expected {what}, got \"{}\"", e.value)))
}

fn parse_bool(e: &Entry) -> Result<bool> {
    match e.value.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(cfg_err(e, format!("expected true or false, got \"{other}\""))),
    }
}

fn parse_list<T: std::str::FromStr>(e: &Entry, what: &str) -> Result<Vec<T>> {
    e.value
        .split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| cfg_err(e, format!("expected comma-separated {what}, got \"{}\"", e.value)))
        })
        .collect()
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut entries = Vec::new();
    let mut section = String::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| Error::Config {
                line: line_no,
                section: section.clone(),
                key: line.to_string(),
                message: "malformed section header".into(),
            })?;
            match name {
                "dataset" | "model" | "train" | "sampler" | "eval" => section = name.to_string(),
                other => {
                    return Err(Error::Config {
                        line: line_no,
                        section: other.to_string(),
                        key: String::new(),
                        message: "unknown section".into(),
                    })
                }
            }
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
            line: line_no,
            section: section.clone(),
            key: line.to_string(),
            message: "expected key = value".into(),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !seen.insert((section.clone(), key.clone())) {
            return Err(Error::Config {
                line: line_no,
                section: section.clone(),
                key,
                message: "duplicate key".into(),
            });
        }
        entries.push(Entry {
            line: line_no,
            section: section.clone(),
            key,
            value,
        });
    }

    let mut cfg = RunConfig::default();
    let mut explicit_prompt_dim = false;
    let mut explicit_warmup = false;

    for e in &entries {
        match (e.section.as_str(), e.key.as_str()) {
            ("", "seed") => cfg.seed = parse_as(e, "an unsigned integer")?,
            ("dataset", "kind") => {
                cfg.dataset.kind = match e.value.as_str() {
                    "mixture" => DatasetKind::Mixture,
                    "infill" => DatasetKind::Infill,
                    other => return Err(cfg_err(e, format!("unknown kind \"{other}\""))),
                }
            }
            ("dataset", "k") => cfg.dataset.k = parse_as(e, "a positive integer")?,
            ("dataset", "dim") => cfg.dataset.dim = parse_as(e, "a positive integer")?,
            ("dataset", "radius") => cfg.dataset.radius = parse_as(e, "a number")?,
            ("dataset", "sigma") => cfg.dataset.sigma = parse_as(e, "a number")?,
            ("dataset", "weights") => {
                cfg.dataset.weights = if e.value == "equal" {
                    None
                } else {
                    Some(parse_list(e, "numbers")?)
                }
            }
            ("dataset", "n_items") => cfg.dataset.n_items = parse_as(e, "an integer")?,
            ("dataset", "mask_lo") => cfg.dataset.mask_lo = parse_as(e, "a number")?,
            ("dataset", "mask_hi") => cfg.dataset.mask_hi = parse_as(e, "a number")?,
            ("model", "hidden") => cfg.model.hidden = parse_as(e, "a positive integer")?,
            ("model", "depth") => cfg.model.depth = parse_as(e, "a positive integer")?,
            ("model", "time_dim") => cfg.model.time_dim = parse_as(e, "an even integer")?,
            ("model", "prompt_dim") => {
                cfg.model.prompt_dim = parse_as(e, "a positive integer")?;
                explicit_prompt_dim = true;
            }
            ("train", "loss") => {
                cfg.train.loss = match e.value.as_str() {
                    "cfm" => LossKind::Cfm,
                    "mg_cfm" => LossKind::MgCfm,
                    other => return Err(cfg_err(e, format!("unknown loss \"{other}\""))),
                }
            }
            ("train", "w") => cfg.train.w = parse_as(e, "a number")?,
            ("train", "p_uncond") => cfg.train.p_uncond = parse_as(e, "a number")?,
            ("train", "p_prompt_drop") => cfg.train.p_prompt_drop = parse_as(e, "a number")?,
            ("train", "stop_gradient") => cfg.train.stop_gradient = parse_bool(e)?,
            ("train", "peak_lr") => cfg.train.peak_lr = parse_as(e, "a number")?,
            ("train", "warmup_steps") => {
                cfg.train.warmup_steps = parse_as(e, "an integer")?;
                explicit_warmup = true;
            }
            ("train", "total_steps") => cfg.train.total_steps = parse_as(e, "an integer")?,
            ("train", "grad_clip") => cfg.train.grad_clip = parse_as(e, "a number")?,
            ("train", "batch_size") => cfg.train.batch_size = parse_as(e, "a positive integer")?,
            ("sampler", "nfe") => cfg.sampler.nfe = parse_as(e, "a positive integer")?,
            ("sampler", "cfg") => cfg.sampler.cfg = parse_bool(e)?,
            ("sampler", "guidance_scale") => cfg.sampler.guidance_scale = parse_as(e, "a number")?,
            ("sampler", "schedule") => {
                cfg.sampler.schedule_kind = match e.value.as_str() {
                    "uniform" => ScheduleKind::Uniform,
                    "sway" => ScheduleKind::Sway,
                    other => return Err(cfg_err(e, format!("unknown schedule \"{other}\""))),
                }
            }
            ("sampler", "sway_s") => cfg.sampler.sway_s = parse_as(e, "a number")?,
            ("eval", "n_samples") => cfg.eval.n_samples = parse_as(e, "a positive integer")?,
            ("eval", "n_projections") => cfg.eval.n_projections = parse_as(e, "a positive integer")?,
            ("eval", "seeds") => cfg.eval.seeds = parse_list(e, "unsigned integers")?,
            ("eval", "nfe_list") => cfg.eval.nfe_list = parse_list(e, "positive integers")?,
            ("eval", "w_list") => cfg.eval.w_list = parse_list(e, "numbers")?,
            _ => return Err(cfg_err(e, "unknown key")),
        }
    }

    if !explicit_prompt_dim {
        cfg.model.prompt_dim = 2 * cfg.dataset.dim;
    }
    if !explicit_warmup {
        cfg.train.warmup_steps = cfg.train.total_steps / 20;
    }

    validate(&cfg, &entries)?;
    Ok(cfg)
}

fn entry_line(entries: &[Entry], section: &str, key: &str) -> usize {
    entries
        .iter()
        .find(|e| e.section == section && e.key == key)
        .map(|e| e.line)
        .unwrap_or(0)
}

fn range_err(
    entries: &[Entry],
    section: &str,
    key: &str,
    message: impl Into<String>,
) -> Error {
    Error::Config {
        line: entry_line(entries, section, key),
        section: section.to_string(),
        key: key.to_string(),
        message: message.into(),
    }
}

fn validate(cfg: &RunConfig, entries: &[Entry]) -> Result<()> {
    let d = &cfg.dataset;
    if d.k == 0 {
        return Err(range_err(entries, "dataset", "k", "must be >= 1"));
    }
    if d.dim < 2 {
        return Err(range_err(entries, "dataset", "dim", "must be >= 2"));
    }
    if d.sigma.is_nan() || d.sigma <= 0.0 {
        return Err(range_err(entries, "dataset", "sigma", "must be > 0"));
    }
    if d.radius.is_nan() || d.radius <= 0.0 {
        return Err(range_err(entries, "dataset", "radius", "must be > 0"));
    }
    if let Some(wts) = &d.weights {
        if wts.len() != d.k {
            return Err(range_err(
                entries,
                "dataset",
                "weights",
                format!("needs exactly k = {} entries, got {}", d.k, wts.len()),
            ));
        }
    }
    if !(0.0..=1.0).contains(&d.mask_lo) || !(0.0..=1.0).contains(&d.mask_hi) || d.mask_lo > d.mask_hi
    {
        return Err(range_err(
            entries,
            "dataset",
            "mask_lo",
            "mask bounds must satisfy 0 <= lo <= hi <= 1",
        ));
    }

    let m = &cfg.model;
    if m.time_dim == 0 || !m.time_dim.is_multiple_of(2) {
        return Err(range_err(entries, "model", "time_dim", "must be a positive even integer"));
    }
    if m.hidden == 0 || m.depth == 0 || m.prompt_dim == 0 {
        return Err(range_err(entries, "model", "hidden", "hidden, depth and prompt_dim must be >= 1"));
    }

    let t = &cfg.train;
    if !(0.0..=1.0).contains(&t.p_uncond) {
        return Err(range_err(entries, "train", "p_uncond", "out of range [0, 1]"));
    }
    if !(0.0..=1.0).contains(&t.p_prompt_drop) {
        return Err(range_err(entries, "train", "p_prompt_drop", "out of range [0, 1]"));
    }
    if t.w < 0.0 {
        return Err(range_err(entries, "train", "w", "must be >= 0"));
    }
    if t.warmup_steps > t.total_steps {
        return Err(range_err(
            entries,
            "train",
            "warmup_steps",
            format!("{} exceeds total_steps {}", t.warmup_steps, t.total_steps),
        ));
    }
    if t.grad_clip.is_nan() || t.grad_clip <= 0.0 {
        return Err(range_err(entries, "train", "grad_clip", "must be > 0"));
    }
    if t.peak_lr.is_nan() || t.peak_lr <= 0.0 {
        return Err(range_err(entries, "train", "peak_lr", "must be > 0"));
    }
    if t.batch_size == 0 {
        return Err(range_err(entries, "train", "batch_size", "must be >= 1"));
    }

    let s = &cfg.sampler;
    if s.nfe == 0 {
        return Err(range_err(entries, "sampler", "nfe", "must be >= 1"));
    }
    if s.guidance_scale < 0.0 {
        return Err(range_err(entries, "sampler", "guidance_scale", "must be >= 0"));
    }
    if !(SWAY_MIN..=sway_max()).contains(&s.sway_s) {
        return Err(range_err(
            entries,
            "sampler",
            "sway_s",
            format!("outside admissible range [{}, {}]", SWAY_MIN, sway_max()),
        ));
    }

    let e = &cfg.eval;
    if e.n_samples == 0 || e.n_projections == 0 {
        return Err(range_err(entries, "eval", "n_samples", "n_samples and n_projections must be >= 1"));
    }
    if e.seeds.is_empty() {
        return Err(range_err(entries, "eval", "seeds", "needs at least one seed"));
    }
    if e.nfe_list.is_empty() || e.nfe_list.contains(&0) {
        return Err(range_err(entries, "eval", "nfe_list", "needs positive step counts"));
    }
    if e.w_list.is_empty() {
        return Err(range_err(entries, "eval", "w_list", "needs at least one weight"));
    }

    // cross-checks that need the assembled pieces
    cfg.mixture()?;
    cfg.arch().validate()?;
    Ok(())
}

impl RunConfig {
    pub fn mixture(&self) -> Result<GaussianMixtureSpec> {
        let d = &self.dataset;
        let base = GaussianMixtureSpec::ring(d.k, d.dim, d.radius, d.sigma)?;
        match &d.weights {
            None => Ok(base),
            Some(wts) => {
                let components = base
                    .components()
                    .iter()
                    .zip(wts)
                    .map(|(c, &w)| GaussianComponent {
                        weight: w,
                        mean: c.mean.clone(),
                        var: c.var,
                    })
                    .collect();
                GaussianMixtureSpec::new(components)
            }
        }
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        Ok(DatasetSpec {
            kind: self.dataset.kind,
            mixture: self.mixture()?,
            n_items: self.dataset.n_items,
            mask_lo: self.dataset.mask_lo,
            mask_hi: self.dataset.mask_hi,
            seed: derive_seed(self.seed, "dataset"),
        })
    }

    pub fn arch(&self) -> Arch {
        Arch {
            data_dim: self.dataset.dim,
            n_classes: self.dataset.k,
            hidden: self.model.hidden,
            depth: self.model.depth,
            prompt_dim: self.model.prompt_dim,
            time_dim: self.model.time_dim,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            loss_kind: self.train.loss,
            w: self.train.w,
            p_uncond: self.train.p_uncond,
            p_prompt_drop: self.train.p_prompt_drop,
            use_stop_gradient: self.train.stop_gradient,
            peak_lr: self.train.peak_lr,
            warmup_steps: self.train.warmup_steps,
            total_steps: self.train.total_steps,
            grad_clip_norm: self.train.grad_clip,
            batch_size: self.train.batch_size,
            seed: self.seed,
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            nfe: self.sampler.nfe,
            cfg_enabled: self.sampler.cfg,
            guidance_scale: self.sampler.guidance_scale,
            schedule: match self.sampler.schedule_kind {
                ScheduleKind::Uniform => Schedule::Uniform,
                ScheduleKind::Sway => Schedule::Sway(self.sampler.sway_s),
            },
            seed: derive_seed(self.seed, "sampler"),
        }
    }

    pub fn eval_settings(&self) -> EvalSettings {
        EvalSettings {
            n_samples: self.eval.n_samples,
            n_projections: self.eval.n_projections,
            seed: derive_seed(self.seed, "eval"),
        }
    }

    /// Canonical serialization: every key, resolved defaults included, in
    /// a fixed order. `parse(serialize(cfg)) == cfg`.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let d = &self.dataset;
        let _ = writeln!(s, "\n[dataset]");
        let _ = writeln!(
            s,
            "kind = {}",
            match d.kind {
                DatasetKind::Mixture => "mixture",
                DatasetKind::Infill => "infill",
            }
        );
        let _ = writeln!(s, "k = {}", d.k);
        let _ = writeln!(s, "dim = {}", d.dim);
        let _ = writeln!(s, "radius = {}", d.radius);
        let _ = writeln!(s, "sigma = {}", d.sigma);
        let _ = writeln!(
            s,
            "weights = {}",
            match &d.weights {
                None => "equal".to_string(),
                Some(w) => w
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            }
        );
        let _ = writeln!(s, "n_items = {}", d.n_items);
        let _ = writeln!(s, "mask_lo = {}", d.mask_lo);
        let _ = writeln!(s, "mask_hi = {}", d.mask_hi);

        let m = &self.model;
        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "hidden = {}", m.hidden);
        let _ = writeln!(s, "depth = {}", m.depth);
        let _ = writeln!(s, "time_dim = {}", m.time_dim);
        let _ = writeln!(s, "prompt_dim = {}", m.prompt_dim);

        let t = &self.train;
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "loss = {}", t.loss);
        let _ = writeln!(s, "w = {}", t.w);
        let _ = writeln!(s, "p_uncond = {}", t.p_uncond);
        let _ = writeln!(s, "p_prompt_drop = {}", t.p_prompt_drop);
        let _ = writeln!(s, "stop_gradient = {}", t.stop_gradient);
        let _ = writeln!(s, "peak_lr = {}", t.peak_lr);
        let _ = writeln!(s, "warmup_steps = {}", t.warmup_steps);
        let _ = writeln!(s, "total_steps = {}", t.total_steps);
        let _ = writeln!(s, "grad_clip = {}", t.grad_clip);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);

        let sp = &self.sampler;
        let _ = writeln!(s, "\n[sampler]");
        let _ = writeln!(s, "nfe = {}", sp.nfe);
        let _ = writeln!(s, "cfg = {}", sp.cfg);
        let _ = writeln!(s, "guidance_scale = {}", sp.guidance_scale);
        let _ = writeln!(
            s,
            "schedule = {}",
            match sp.schedule_kind {
                ScheduleKind::Uniform => "uniform",
                ScheduleKind::Sway => "sway",
            }
        );
        let _ = writeln!(s, "sway_s = {}", sp.sway_s);

        let e = &self.eval;
        let _ = writeln!(s, "\n[eval]");
        let _ = writeln!(s, "n_samples = {}", e.n_samples);
        let _ = writeln!(s, "n_projections = {}", e.n_projections);
        let _ = writeln!(
            s,
            "seeds = {}",
            e.seeds.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(
            s,
            "nfe_list = {}",
            e.nfe_list.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        );
        let _ = writeln!(
            s,
            "w_list = {}",
            e.w_list.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
        );
        s
    }

    /// Truncated SHA-256 of the canonical serialization.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.serialize().as_bytes());
        let mut s = String::with_capacity(16);
        for b in digest.iter().take(8) {
            let _ = write!(s, "{b:02x}");
        }
        s
    }
}
