//! Training loops for the two objectives.
//!
//! Plain conditional flow matching regresses the field onto the constant
//! path target `x1 - z` under condition dropout. Model-guidance training
//! additionally evaluates the fully-null field and moves the regression
//! target by a stop-gradient multiple of the conditional/unconditional
//! difference, so the converged conditional field already contains the
//! guidance that classifier-free sampling would otherwise add at twice
//! the inference cost.
//!
//! Training is a pure function of (arch, config, dataset): every random
//! draw comes from streams derived from `TrainConfig::seed`.

use std::collections::VecDeque;
use std::io::Write;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::kernels;
use crate::model::{
    collect_gradient, forward_on_tape, Arch, Condition, ModelVars, VelocityModel,
};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Cfm,
    MgCfm,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossKind::Cfm => write!(f, "cfm"),
            LossKind::MgCfm => write!(f, "mg_cfm"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    /// Guidance weight baked into the model-guidance target.
    pub w: f64,
    /// Probability of dropping all conditions for an item.
    pub p_uncond: f64,
    /// Independent probability of dropping the prompt alone.
    pub p_prompt_drop: f64,
    /// Ablation toggle; training with `false` lets gradients flow through
    /// the guidance difference.
    pub use_stop_gradient: bool,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub grad_clip_norm: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidTrainConfig(msg));
        if !(0.0..=1.0).contains(&self.p_uncond) {
            return bad(format!("p_uncond {} outside [0, 1]", self.p_uncond));
        }
        if !(0.0..=1.0).contains(&self.p_prompt_drop) {
            return bad(format!("p_prompt_drop {} outside [0, 1]", self.p_prompt_drop));
        }
        if self.w < 0.0 || !self.w.is_finite() {
            return bad(format!("w {} must be >= 0", self.w));
        }
        if self.warmup_steps > self.total_steps {
            return bad(format!(
                "warmup_steps {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            ));
        }
        if self.grad_clip_norm <= 0.0 {
            return bad(format!("grad_clip_norm {} must be > 0", self.grad_clip_norm));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.peak_lr <= 0.0 || !self.peak_lr.is_finite() {
            return bad(format!("peak_lr {} must be > 0", self.peak_lr));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRow {
    pub step: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
    pub diverged: bool,
}

/// Per-step training log. The divergence flag on a row is set when that
/// step's loss is non-finite or exceeds 10x the moving average of the
/// previous (up to) 100 losses.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainRecord {
    pub rows: Vec<StepRow>,
}

impl TrainRecord {
    pub fn diverged_any(&self) -> bool {
        self.rows.iter().any(|r| r.diverged)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.loss)
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "step,loss,grad_norm,lr,diverged")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.step, r.loss, r.grad_norm, r.lr, r.diverged
            )?;
        }
        Ok(())
    }
}

/// Linear path point and its constant transport target:
/// `x_t = (1 - t) z + t x1`, `u = x1 - z`.
pub fn sample_path(x1: &[f64], z: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(x1.len(), z.len(), "sample_path: {} vs {}", x1.len(), z.len());
    let x_t = x1
        .iter()
        .zip(z)
        .map(|(x, zz)| (1.0 - t) * zz + t * x)
        .collect();
    let u = x1.iter().zip(z).map(|(x, zz)| x - zz).collect();
    (x_t, u)
}

/// With probability `p_uncond` both label and prompt become null;
/// independently, with probability `p_prompt_drop` the prompt alone is
/// dropped. Both uniforms are always consumed so downstream draws stay
/// aligned across loss kinds.
pub fn dropout_condition(
    cond: &Condition,
    rng: &mut rng::Rng,
    p_uncond: f64,
    p_prompt_drop: f64,
) -> Condition {
    let u_all: f64 = rng.random();
    let u_prompt: f64 = rng.random();
    if u_all < p_uncond {
        return Condition::null();
    }
    if u_prompt < p_prompt_drop {
        return Condition {
            label: cond.label,
            prompt: None,
        };
    }
    cond.clone()
}

/// One batch item with all randomness already drawn: data point, condition
/// after dropout, path time, and noise endpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    pub x1: Vec<f64>,
    pub cond: Condition,
    pub t: f64,
    pub z: Vec<f64>,
}

/// Draw one training batch (indices with replacement, t ~ U(0,1),
/// z ~ N(0,I), condition dropout), in a fixed consumption order shared by
/// both loss kinds.
pub fn draw_batch(
    dataset: &[(Vec<f64>, Condition)],
    batch_size: usize,
    rng: &mut rng::Rng,
    p_uncond: f64,
    p_prompt_drop: f64,
) -> Vec<TrainItem> {
    assert!(!dataset.is_empty(), "draw_batch: empty dataset");
    let dim = dataset[0].0.len();
    (0..batch_size)
        .map(|_| {
            let idx = rng.random_range(0..dataset.len());
            let (x1, cond) = &dataset[idx];
            let t: f64 = rng.random();
            let z: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let cond = dropout_condition(cond, rng, p_uncond, p_prompt_drop);
            TrainItem {
                x1: x1.clone(),
                cond,
                t,
                z,
            }
        })
        .collect()
}

/// Mean over the batch of `|| v(x_t, t, cond) - (x1 - z) ||^2`.
pub fn cfm_loss(tape: &mut Tape, vars: &ModelVars, arch: &Arch, items: &[TrainItem]) -> NodeId {
    assert!(!items.is_empty(), "cfm_loss: empty batch");
    let mut total: Option<NodeId> = None;
    for item in items {
        let (x_t, u) = sample_path(&item.x1, &item.z, item.t);
        let v = forward_on_tape(tape, vars, arch, &x_t, item.t, &item.cond);
        let u_const = tape.vector(&u);
        let resid = tape.sub(v, u_const);
        let l = tape.sq_l2(resid);
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l),
        });
    }
    let total = total.unwrap();
    tape.scale(total, 1.0 / items.len() as f64)
}

/// Model-guidance loss. Per item the field is evaluated twice (with the
/// post-dropout condition and fully-null), the difference is taken through
/// a stop-gradient, and the residual becomes
/// `v_cond - w * sg(v_cond - v_uncond) - (x1 - z)`, i.e. the regression
/// target is shifted to `(x1 - z) + w * sg(v_cond - v_uncond)`.
///
/// When the sampled condition is itself fully null the two evaluations
/// coincide, the difference vanishes, and the item degenerates to plain
/// flow matching, which is exactly the dropout branch doing its job.
pub fn mg_cfm_loss(
    tape: &mut Tape,
    vars: &ModelVars,
    arch: &Arch,
    items: &[TrainItem],
    w: f64,
    use_stop_gradient: bool,
) -> NodeId {
    assert!(!items.is_empty(), "mg_cfm_loss: empty batch");
    let mut total: Option<NodeId> = None;
    for item in items {
        let (x_t, u) = sample_path(&item.x1, &item.z, item.t);
        let v_cond = forward_on_tape(tape, vars, arch, &x_t, item.t, &item.cond);
        let v_uncond = forward_on_tape(tape, vars, arch, &x_t, item.t, &Condition::null());
        let mut delta = tape.sub(v_cond, v_uncond);
        if use_stop_gradient {
            delta = tape.stop_gradient(delta);
        }
        let shift = tape.scale(delta, -w);
        let pred = tape.add(v_cond, shift);
        let u_const = tape.vector(&u);
        let resid = tape.sub(pred, u_const);
        let l = tape.sq_l2(resid);
        total = Some(match total {
            None => l,
            Some(acc) => tape.add(acc, l),
        });
    }
    let total = total.unwrap();
    tape.scale(total, 1.0 / items.len() as f64)
}

/// Linear warmup to `peak_lr` over `warmup_steps`, then linear decay to
/// zero at `total_steps`.
pub fn lr_schedule(step: usize, cfg: &TrainConfig) -> f64 {
    debug_assert!(step <= cfg.total_steps);
    if cfg.warmup_steps > 0 && step < cfg.warmup_steps {
        cfg.peak_lr * step as f64 / cfg.warmup_steps as f64
    } else if cfg.total_steps > cfg.warmup_steps {
        cfg.peak_lr * (cfg.total_steps - step) as f64
            / (cfg.total_steps - cfg.warmup_steps) as f64
    } else {
        cfg.peak_lr
    }
}

/// Scale gradients so the global L2 norm is at most `max_norm`; returns the
/// pre-clip norm.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> Result<f64> {
    assert!(max_norm > 0.0, "clip_grad_norm: max_norm must be > 0");
    if !kernels::all_finite(grads) {
        return Err(Error::NonFinite {
            context: "gradients".into(),
        });
    }
    let norm = kernels::l2_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= scale;
        }
    }
    Ok(norm)
}

/// Decoupled-weight-decay adaptive-moment optimizer with bias correction.
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(n_params: usize) -> Self {
        AdamW::with_hyper(n_params, 0.9, 0.999, 1e-8, 0.0)
    }

    pub fn with_hyper(n_params: usize, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        AdamW {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            steps: 0,
            beta1,
            beta2,
            eps,
            weight_decay,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "adamw: param count mismatch");
        assert_eq!(grads.len(), self.m.len(), "adamw: grad count mismatch");
        self.steps += 1;
        let bc1 = 1.0 - self.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - self.beta2.powi(self.steps as i32);
        for i in 0..params.len() {
            params[i] *= 1.0 - lr * self.weight_decay;
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

pub struct TrainOutput {
    pub model: VelocityModel,
    pub record: TrainRecord,
}

/// Run the full optimizer loop. Deterministic given (arch, cfg, dataset).
/// Aborts with a divergence report carrying the record so far if the loss
/// or gradients stop being finite.
pub fn train(
    arch: &Arch,
    cfg: &TrainConfig,
    dataset: &[(Vec<f64>, Condition)],
) -> Result<TrainOutput> {
    train_with_snapshots(arch, cfg, dataset, None).map(|(out, _)| out)
}

/// Like [`train`] but additionally snapshots the model every
/// `snapshot_every` steps (plus the initial and final states).
pub fn train_with_snapshots(
    arch: &Arch,
    cfg: &TrainConfig,
    dataset: &[(Vec<f64>, Condition)],
    snapshot_every: Option<usize>,
) -> Result<(TrainOutput, Vec<(usize, VelocityModel)>)> {
    cfg.validate()?;
    if dataset.is_empty() && cfg.total_steps > 0 {
        return Err(Error::InvalidTrainConfig(
            "cannot train on an empty dataset".into(),
        ));
    }

    let mut model = VelocityModel::init(*arch, rng::derive_seed(cfg.seed, "init"))?;
    let mut opt = AdamW::new(model.params().len());
    let mut loop_rng = rng::rng_from_seed(rng::derive_seed(cfg.seed, "train"));

    let mut record = TrainRecord::default();
    let mut window: VecDeque<f64> = VecDeque::with_capacity(100);
    let mut snapshots = Vec::new();
    if let Some(every) = snapshot_every {
        assert!(every > 0, "snapshot_every must be positive");
        snapshots.push((0, model.clone()));
    }

    for step in 0..cfg.total_steps {
        let items = draw_batch(
            dataset,
            cfg.batch_size,
            &mut loop_rng,
            cfg.p_uncond,
            cfg.p_prompt_drop,
        );

        let mut tape = Tape::new();
        let vars = model.register(&mut tape);
        let loss_node = match cfg.loss_kind {
            LossKind::Cfm => cfm_loss(&mut tape, &vars, arch, &items),
            LossKind::MgCfm => mg_cfm_loss(
                &mut tape,
                &vars,
                arch,
                &items,
                cfg.w,
                cfg.use_stop_gradient,
            ),
        };
        let loss = tape.value(loss_node).as_scalar();
        let lr = lr_schedule(step, cfg);

        let ma = if window.is_empty() {
            None
        } else {
            Some(window.iter().sum::<f64>() / window.len() as f64)
        };
        let flagged = !loss.is_finite() || ma.is_some_and(|m| loss > 10.0 * m);

        if !loss.is_finite() {
            record.rows.push(StepRow {
                step,
                loss,
                grad_norm: f64::NAN,
                lr,
                diverged: true,
            });
            return Err(Error::Diverged {
                step,
                what: format!("non-finite loss {loss}"),
                record: Box::new(record),
            });
        }

        let grads_map = tape.backward(loss_node);
        let mut grads = collect_gradient(&grads_map, &vars);
        drop(tape);

        if !kernels::all_finite(&grads) {
            record.rows.push(StepRow {
                step,
                loss,
                grad_norm: f64::NAN,
                lr,
                diverged: true,
            });
            return Err(Error::Diverged {
                step,
                what: "non-finite gradients".into(),
                record: Box::new(record),
            });
        }
        let grad_norm = clip_grad_norm(&mut grads, cfg.grad_clip_norm)?;
        opt.step(model.params_mut(), &grads, lr);

        record.rows.push(StepRow {
            step,
            loss,
            grad_norm,
            lr,
            diverged: flagged,
        });
        if window.len() == 100 {
            window.pop_front();
        }
        window.push_back(loss);

        if let Some(every) = snapshot_every {
            if (step + 1) % every == 0 {
                snapshots.push((step + 1, model.clone()));
            }
        }
    }

    if let Some(every) = snapshot_every {
        if !cfg.total_steps.is_multiple_of(every) {
            snapshots.push((cfg.total_steps, model.clone()));
        }
    }
    Ok((TrainOutput { model, record }, snapshots))
}
