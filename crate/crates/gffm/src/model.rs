//! The learned velocity field: a small MLP over
//! `[state, time embedding, class embedding, prompt]` with nullable
//! condition slots and binary checkpoint persistence.
//!
//! One network serves both the conditional and the unconditional field:
//! a missing label selects a dedicated null row of the class table, and a
//! missing prompt substitutes a learned null-prompt vector (never zeros,
//! so "dropped" stays distinguishable from "prompt happens to be zero").

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::autodiff::{Array, Gradients, NodeId, Tape};
use crate::error::{Error, Result};
use crate::kernels;
use crate::rng;

/// Optional class label plus optional prompt vector, each independently
/// nullable. `Condition::null()` is the fully-unconditional state.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition {
    pub label: Option<usize>,
    pub prompt: Option<Vec<f64>>,
}

impl Condition {
    pub fn null() -> Self {
        Condition {
            label: None,
            prompt: None,
        }
    }

    pub fn with_label(label: usize) -> Self {
        Condition {
            label: Some(label),
            prompt: None,
        }
    }

    pub fn is_fully_null(&self) -> bool {
        self.label.is_none() && self.prompt.is_none()
    }
}

/// Network dimensions. `depth` counts hidden layers; the output projection
/// is separate and zero-initialized. The class embedding width equals
/// `time_dim` so the checkpoint header stays at six integers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Arch {
    pub data_dim: usize,
    pub n_classes: usize,
    pub hidden: usize,
    pub depth: usize,
    pub prompt_dim: usize,
    pub time_dim: usize,
}

impl Arch {
    pub fn validate(&self) -> Result<()> {
        if self.time_dim == 0 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::ConfigGeneral(format!(
                "time_dim must be a positive even integer, got {}",
                self.time_dim
            )));
        }
        if self.data_dim == 0 || self.n_classes == 0 || self.hidden == 0 || self.depth == 0 {
            return Err(Error::ConfigGeneral(
                "data_dim, n_classes, hidden and depth must all be positive".into(),
            ));
        }
        if self.prompt_dim == 0 {
            return Err(Error::ConfigGeneral("prompt_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn class_emb_dim(&self) -> usize {
        self.time_dim
    }

    pub fn input_dim(&self) -> usize {
        self.data_dim + self.time_dim + self.class_emb_dim() + self.prompt_dim
    }

    /// (rows, cols) of each weight matrix, input layer first, output last.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.depth + 1);
        let mut prev = self.input_dim();
        for _ in 0..self.depth {
            dims.push((self.hidden, prev));
            prev = self.hidden;
        }
        dims.push((self.data_dim, prev));
        dims
    }

    /// Parameter tensor shapes in declaration (checkpoint payload) order:
    /// per layer weight then bias, then class table, then null prompt.
    fn tensor_shapes(&self) -> Vec<crate::autodiff::Shape> {
        use crate::autodiff::Shape;
        let mut shapes = Vec::new();
        for (rows, cols) in self.layer_dims() {
            shapes.push(Shape::Matrix(rows, cols));
            shapes.push(Shape::Vector(rows));
        }
        shapes.push(Shape::Matrix(self.n_classes + 1, self.class_emb_dim()));
        shapes.push(Shape::Vector(self.prompt_dim));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.tensor_shapes().iter().map(|s| s.len()).sum()
    }
}

/// Sinusoidal features of a time scalar: all sines first, then all
/// cosines, at frequencies 1, 10, 100, ... (angles `2*pi*f*t`).
pub fn time_embed(t: f64, dim: usize) -> Vec<f64> {
    assert!(dim.is_multiple_of(2) && dim > 0, "time_embed: dim must be even, got {dim}");
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = 10f64.powi(i as i32);
        out.push((2.0 * std::f64::consts::PI * freq * t).sin());
    }
    for i in 0..half {
        let freq = 10f64.powi(i as i32);
        out.push((2.0 * std::f64::consts::PI * freq * t).cos());
    }
    out
}

/// MLP velocity field with flat parameter storage.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityModel {
    arch: Arch,
    params: Vec<f64>,
}

/// Node ids of the registered parameter tensors on a tape, in declaration
/// order, ready for graph building and gradient collection.
pub struct ModelVars {
    pub layer_weights: Vec<NodeId>,
    pub layer_biases: Vec<NodeId>,
    pub class_emb: NodeId,
    pub null_prompt: NodeId,
}

impl ModelVars {
    /// Reassemble from a flat declaration-order id list (as produced by
    /// registering `param_arrays`, or by a gradient-check harness).
    pub fn from_nodes(arch: &Arch, ids: &[NodeId]) -> Self {
        let n_layers = arch.depth + 1;
        assert_eq!(ids.len(), 2 * n_layers + 2, "wrong number of param nodes");
        let mut layer_weights = Vec::with_capacity(n_layers);
        let mut layer_biases = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            layer_weights.push(ids[2 * l]);
            layer_biases.push(ids[2 * l + 1]);
        }
        ModelVars {
            layer_weights,
            layer_biases,
            class_emb: ids[2 * n_layers],
            null_prompt: ids[2 * n_layers + 1],
        }
    }

    pub fn node_ids(&self) -> Vec<NodeId> {
        let mut ids = Vec::new();
        for l in 0..self.layer_weights.len() {
            ids.push(self.layer_weights[l]);
            ids.push(self.layer_biases[l]);
        }
        ids.push(self.class_emb);
        ids.push(self.null_prompt);
        ids
    }
}

impl VelocityModel {
    /// Deterministic init: hidden layers get fan-in scaled Gaussian weights,
    /// the output layer is all zeros so the initial field is the zero field.
    /// Embeddings are unit Gaussian.
    pub fn init(arch: Arch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng::rng_from_seed(seed);
        let mut params = Vec::with_capacity(arch.param_count());
        let dims = arch.layer_dims();
        let n_layers = dims.len();
        for (l, (rows, cols)) in dims.into_iter().enumerate() {
            let last = l == n_layers - 1;
            let scale = 1.0 / (cols as f64).sqrt();
            for _ in 0..rows * cols {
                if last {
                    params.push(0.0);
                } else {
                    let g: f64 = rng.sample(StandardNormal);
                    params.push(g * scale);
                }
            }
            params.extend(std::iter::repeat_n(0.0, rows));
        }
        for _ in 0..(arch.n_classes + 1) * arch.class_emb_dim() {
            let g: f64 = rng.sample(StandardNormal);
            params.push(g);
        }
        for _ in 0..arch.prompt_dim {
            let g: f64 = rng.sample(StandardNormal);
            params.push(g);
        }
        Ok(VelocityModel { arch, params })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn from_flat(arch: Arch, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::ConfigGeneral(format!(
                "expected {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        Ok(VelocityModel { arch, params })
    }

    /// Parameter tensors in declaration order (copies of the flat storage).
    pub fn param_arrays(&self) -> Vec<Array> {
        use crate::autodiff::Shape;
        let mut out = Vec::new();
        let mut offset = 0;
        for shape in self.arch.tensor_shapes() {
            let len = shape.len();
            let data = self.params[offset..offset + len].to_vec();
            out.push(match shape {
                Shape::Scalar => Array::scalar(data[0]),
                Shape::Vector(_) => Array::vector(data),
                Shape::Matrix(r, c) => Array::matrix(r, c, data),
            });
            offset += len;
        }
        out
    }

    /// Register every parameter tensor on `tape` as a param leaf.
    pub fn register(&self, tape: &mut Tape) -> ModelVars {
        let ids: Vec<NodeId> = self
            .param_arrays()
            .into_iter()
            .map(|a| tape.param(a))
            .collect();
        ModelVars::from_nodes(&self.arch, &ids)
    }

    fn check_inputs(&self, x: &[f64], t: f64, cond: &Condition) -> Result<()> {
        if x.len() != self.arch.data_dim {
            return Err(Error::DimMismatch {
                left: x.len(),
                right: self.arch.data_dim,
            });
        }
        if !kernels::all_finite(x) || !t.is_finite() {
            return Err(Error::NonFinite {
                context: "velocity model input".into(),
            });
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::TimeOutOfRange { t });
        }
        if let Some(label) = cond.label {
            if label >= self.arch.n_classes {
                return Err(Error::LabelOutOfRange {
                    label,
                    n_classes: self.arch.n_classes,
                });
            }
        }
        if let Some(p) = &cond.prompt {
            if p.len() != self.arch.prompt_dim {
                return Err(Error::PromptLength {
                    got: p.len(),
                    expected: self.arch.prompt_dim,
                });
            }
            if !kernels::all_finite(p) {
                return Err(Error::NonFinite {
                    context: "prompt vector".into(),
                });
            }
        }
        Ok(())
    }

    /// Tape-free forward pass. Bitwise-identical to the tape path.
    pub fn forward(&self, x: &[f64], t: f64, cond: &Condition) -> Result<Vec<f64>> {
        self.check_inputs(x, t, cond)?;
        let arch = &self.arch;

        let mut input = Vec::with_capacity(arch.input_dim());
        input.extend_from_slice(x);
        input.extend_from_slice(&time_embed(t, arch.time_dim));
        let class_row = cond.label.unwrap_or(arch.n_classes);
        let emb_dim = arch.class_emb_dim();
        let class_off = self.offset_class_emb() + class_row * emb_dim;
        input.extend_from_slice(&self.params[class_off..class_off + emb_dim]);
        match &cond.prompt {
            Some(p) => input.extend_from_slice(p),
            None => {
                let off = self.offset_null_prompt();
                input.extend_from_slice(&self.params[off..off + arch.prompt_dim]);
            }
        }

        let mut h = input;
        let mut offset = 0;
        let dims = arch.layer_dims();
        let n_layers = dims.len();
        for (l, (rows, cols)) in dims.into_iter().enumerate() {
            let w = &self.params[offset..offset + rows * cols];
            offset += rows * cols;
            let b = &self.params[offset..offset + rows];
            offset += rows;
            let mut pre = vec![0.0; rows];
            kernels::matvec(w, rows, cols, &h, &mut pre);
            let mut z = vec![0.0; rows];
            kernels::add(&pre, b, &mut z);
            if l < n_layers - 1 {
                let mut a = vec![0.0; rows];
                kernels::tanh(&z, &mut a);
                h = a;
            } else {
                h = z;
            }
        }
        Ok(h)
    }

    fn offset_class_emb(&self) -> usize {
        self.arch
            .layer_dims()
            .iter()
            .map(|(r, c)| r * c + r)
            .sum()
    }

    fn offset_null_prompt(&self) -> usize {
        self.offset_class_emb() + (self.arch.n_classes + 1) * self.arch.class_emb_dim()
    }
}

impl crate::sampler::VelocityField for VelocityModel {
    fn dim(&self) -> usize {
        self.arch.data_dim
    }

    fn velocity(&self, x: &[f64], t: f64, cond: &Condition) -> Result<Vec<f64>> {
        self.forward(x, t, cond)
    }
}

/// Build the forward pass on a tape from registered parameters. The
/// computation order matches [`VelocityModel::forward`] exactly.
pub fn forward_on_tape(
    tape: &mut Tape,
    vars: &ModelVars,
    arch: &Arch,
    x: &[f64],
    t: f64,
    cond: &Condition,
) -> NodeId {
    assert_eq!(x.len(), arch.data_dim, "forward_on_tape: state dimension");
    let mut head = Vec::with_capacity(arch.data_dim + arch.time_dim);
    head.extend_from_slice(x);
    head.extend_from_slice(&time_embed(t, arch.time_dim));
    let head = tape.vector(&head);

    let class_row = cond.label.unwrap_or(arch.n_classes);
    let emb = tape.row(vars.class_emb, class_row);

    let prompt = match &cond.prompt {
        Some(p) => {
            assert_eq!(p.len(), arch.prompt_dim, "forward_on_tape: prompt dimension");
            tape.vector(p)
        }
        None => vars.null_prompt,
    };

    let mut h = tape.concat(&[head, emb, prompt]);
    let n_layers = arch.depth + 1;
    for l in 0..n_layers {
        let pre = tape.matvec(vars.layer_weights[l], h);
        let z = tape.add(pre, vars.layer_biases[l]);
        h = if l < n_layers - 1 { tape.tanh(z) } else { z };
    }
    h
}

/// Flatten a gradient map into declaration order, matching `params()`.
pub fn collect_gradient(grads: &Gradients, vars: &ModelVars) -> Vec<f64> {
    let mut flat = Vec::new();
    for id in vars.node_ids() {
        flat.extend_from_slice(grads.wrt(id).data());
    }
    flat
}

// ---------------------------------------------------------------------------
// Checkpoint format: little-endian binary.
//   magic "GFFM" | u32 version=1
//   u32 x 6: data_dim, n_classes, hidden, depth, prompt_dim, time_dim
//   payload: parameter arrays in declaration order, f64 each
//   trailing u64: count of payload floats
// ---------------------------------------------------------------------------

const MAGIC: &[u8; 4] = b"GFFM";
const VERSION: u32 = 1;

pub fn save_checkpoint(model: &VelocityModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let a = model.arch();
    let mut buf = Vec::with_capacity(4 + 4 + 24 + model.params.len() * 8 + 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        a.data_dim,
        a.n_classes,
        a.hidden,
        a.depth,
        a.prompt_dim,
        a.time_dim,
    ] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for p in &model.params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    buf.extend_from_slice(&(model.params.len() as u64).to_le_bytes());

    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&buf)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<VelocityModel> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::CheckpointNotFound {
            path: path.display().to_string(),
        });
    }
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;

    let header_len = 4 + 4 + 6 * 4;
    if bytes.len() < header_len + 8 {
        return Err(Error::CheckpointCorrupt(format!(
            "file too short ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::CheckpointMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            supported: VERSION,
        });
    }
    let mut ints = [0usize; 6];
    for (i, v) in ints.iter_mut().enumerate() {
        let off = 8 + 4 * i;
        *v = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    }
    let arch = Arch {
        data_dim: ints[0],
        n_classes: ints[1],
        hidden: ints[2],
        depth: ints[3],
        prompt_dim: ints[4],
        time_dim: ints[5],
    };
    arch.validate()
        .map_err(|e| Error::CheckpointCorrupt(format!("bad arch in header: {e}")))?;

    let expected = arch.param_count();
    let expected_len = header_len + expected * 8 + 8;
    if bytes.len() != expected_len {
        return Err(Error::CheckpointCorrupt(format!(
            "expected {expected_len} bytes for {expected} floats, found {}",
            bytes.len()
        )));
    }
    let trailer = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    if trailer != expected as u64 {
        return Err(Error::CheckpointCorrupt(format!(
            "trailer count {trailer} does not match arch ({expected} floats)"
        )));
    }
    let mut params = Vec::with_capacity(expected);
    for i in 0..expected {
        let off = header_len + i * 8;
        params.push(f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
    }
    Ok(VelocityModel { arch, params })
}

/// Error unless the checkpoint's arch equals `expected`.
pub fn ensure_arch(model: &VelocityModel, expected: &Arch) -> Result<()> {
    if model.arch() != expected {
        return Err(Error::CheckpointArch {
            found: format!("{:?}", model.arch()),
            expected: format!("{expected:?}"),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;

    fn tiny_arch() -> Arch {
        Arch {
            data_dim: 2,
            n_classes: 3,
            hidden: 8,
            depth: 2,
            prompt_dim: 4,
            time_dim: 4,
        }
    }

    #[test]
    fn time_embed_zero_t() {
        let e = time_embed(0.0, 6);
        assert_eq!(&e[0..3], &[0.0, 0.0, 0.0]);
        assert_eq!(&e[3..6], &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn time_embed_half_dim4() {
        // frequencies {1, 10}, angles 2*pi*f*t at t = 0.5:
        // [sin pi, sin 10pi, cos pi, cos 10pi] = [0, 0, -1, 1]
        let e = time_embed(0.5, 4);
        assert!(e[0].abs() < 1e-12, "sin(pi) ~ 0, got {}", e[0]);
        assert!(e[1].abs() < 1e-12, "sin(10pi) ~ 0, got {}", e[1]);
        assert!((e[2] + 1.0).abs() < 1e-12, "cos(pi) = -1, got {}", e[2]);
        assert!((e[3] - 1.0).abs() < 1e-12, "cos(10pi) = 1, got {}", e[3]);
    }

    #[test]
    fn time_embed_deterministic() {
        assert_eq!(time_embed(0.3, 8), time_embed(0.3, 8));
    }

    #[test]
    #[should_panic(expected = "dim must be even")]
    fn time_embed_odd_dim_panics() {
        time_embed(0.5, 3);
    }

    #[test]
    fn init_deterministic_and_zero_output_layer() {
        let a = tiny_arch();
        let m1 = VelocityModel::init(a, 11).unwrap();
        let m2 = VelocityModel::init(a, 11).unwrap();
        assert_eq!(m1.params(), m2.params());
        let m3 = VelocityModel::init(a, 12).unwrap();
        assert_ne!(m1.params(), m3.params());

        // zero output layer => zero field everywhere
        let y = m1.forward(&[0.7, -1.3], 0.4, &Condition::with_label(1)).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
        let y = m1.forward(&[2.0, 5.0], 0.9, &Condition::null()).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn forward_deterministic_and_output_shape() {
        let a = tiny_arch();
        let mut m = VelocityModel::init(a, 3).unwrap();
        // randomize the output layer so outputs are non-trivial
        for p in m.params_mut().iter_mut() {
            if *p == 0.0 {
                *p = 0.05;
            }
        }
        let conds = [
            Condition::null(),
            Condition::with_label(2),
            Condition {
                label: Some(0),
                prompt: Some(vec![0.1, 0.2, 0.3, 0.4]),
            },
            Condition {
                label: None,
                prompt: Some(vec![1.0, -1.0, 0.0, 2.0]),
            },
        ];
        for cond in &conds {
            let y1 = m.forward(&[0.3, 0.4], 0.25, cond).unwrap();
            let y2 = m.forward(&[0.3, 0.4], 0.25, cond).unwrap();
            assert_eq!(y1.len(), 2);
            assert_eq!(y1, y2);
        }
    }

    #[test]
    fn forward_rejects_bad_inputs() {
        let m = VelocityModel::init(tiny_arch(), 0).unwrap();
        assert!(m.forward(&[f64::NAN, 0.0], 0.5, &Condition::null()).is_err());
        assert!(m.forward(&[0.0, 0.0], 1.5, &Condition::null()).is_err());
        assert!(m
            .forward(&[0.0, 0.0], 0.5, &Condition::with_label(99))
            .is_err());
        let bad_prompt = Condition {
            label: None,
            prompt: Some(vec![1.0]),
        };
        assert!(m.forward(&[0.0, 0.0], 0.5, &bad_prompt).is_err());
    }

    #[test]
    fn tape_forward_matches_plain_forward_bitwise() {
        let a = tiny_arch();
        let mut m = VelocityModel::init(a, 5).unwrap();
        let n = m.params().len();
        let mut rng = crate::rng::rng_from_seed(99);
        for p in m.params_mut().iter_mut().take(n) {
            *p += rng.random_range(-0.5..0.5);
        }
        let cases = [
            (vec![0.2, -0.9], 0.0, Condition::null()),
            (vec![1.5, 2.5], 0.73, Condition::with_label(0)),
            (
                vec![-3.0, 0.1],
                1.0,
                Condition {
                    label: Some(2),
                    prompt: Some(vec![0.5, 0.6, 0.7, 0.8]),
                },
            ),
        ];
        for (x, t, cond) in &cases {
            let plain = m.forward(x, *t, cond).unwrap();
            let mut tape = Tape::new();
            let vars = m.register(&mut tape);
            let out = forward_on_tape(&mut tape, &vars, m.arch(), x, *t, cond);
            assert_eq!(tape.value(out).data(), plain.as_slice());
        }
    }

    #[test]
    fn null_condition_never_reads_class_rows_or_prompt() {
        let a = tiny_arch();
        let mut m = VelocityModel::init(a, 5).unwrap();
        let mut rng = crate::rng::rng_from_seed(2);
        for p in m.params_mut().iter_mut() {
            *p += rng.random_range(-0.5..0.5);
        }
        let x = [0.4, -0.2];
        let base = m.forward(&x, 0.3, &Condition::null()).unwrap();

        // Perturbing non-null class rows leaves the null forward unchanged.
        let mut pert = m.clone();
        let emb_dim = a.class_emb_dim();
        let class_off = pert.offset_class_emb();
        for r in 0..a.n_classes {
            for j in 0..emb_dim {
                pert.params_mut()[class_off + r * emb_dim + j] += 100.0;
            }
        }
        assert_eq!(pert.forward(&x, 0.3, &Condition::null()).unwrap(), base);

        // Perturbing the null row changes it.
        let mut pert = m.clone();
        pert.params_mut()[class_off + a.n_classes * emb_dim] += 1.0;
        assert_ne!(pert.forward(&x, 0.3, &Condition::null()).unwrap(), base);

        // Perturbing the null prompt changes it too (it is read when the
        // prompt is absent)...
        let mut pert = m.clone();
        let np = pert.offset_null_prompt();
        pert.params_mut()[np] += 1.0;
        assert_ne!(pert.forward(&x, 0.3, &Condition::null()).unwrap(), base);

        // ...but not the forward of a condition that supplies a prompt.
        let with_prompt = Condition {
            label: Some(1),
            prompt: Some(vec![0.0, 0.1, 0.2, 0.3]),
        };
        let before = m.forward(&x, 0.3, &with_prompt).unwrap();
        assert_eq!(pert.forward(&x, 0.3, &with_prompt).unwrap(), before);
    }

    #[test]
    fn forward_outputs_pass_grad_check() {
        let a = tiny_arch();
        let mut m = VelocityModel::init(a, 7).unwrap();
        let mut rng = crate::rng::rng_from_seed(4);
        for p in m.params_mut().iter_mut() {
            *p += rng.random_range(-0.5..0.5);
        }
        let x = vec![0.3, -0.6];
        let cond = Condition {
            label: Some(1),
            prompt: Some(vec![0.2, -0.2, 0.5, 0.0]),
        };
        let err = grad_check(
            |tape, ids| {
                let vars = ModelVars::from_nodes(&a, ids);
                let out = forward_on_tape(tape, &vars, &a, &x, 0.37, &cond);
                t_probe(tape, out)
            },
            &m.param_arrays(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "rel err {err}");

        // and with the fully-null condition (exercises null row + null prompt)
        let err = grad_check(
            |tape, ids| {
                let vars = ModelVars::from_nodes(&a, ids);
                let out = forward_on_tape(tape, &vars, &a, &x, 0.37, &Condition::null());
                t_probe(tape, out)
            },
            &m.param_arrays(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "rel err {err}");
    }

    fn t_probe(tape: &mut Tape, v: NodeId) -> NodeId {
        let probe = tape.vector(&[0.7, -1.3]);
        let m = tape.mul(v, probe);
        tape.sum(m)
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gffm");
        let mut m = VelocityModel::init(tiny_arch(), 9).unwrap();
        let mut rng = crate::rng::rng_from_seed(1);
        for p in m.params_mut().iter_mut() {
            *p += rng.random_range(-1.0..1.0);
        }
        save_checkpoint(&m, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded, m);
    }

    #[test]
    fn checkpoint_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gffm");
        let m = VelocityModel::init(tiny_arch(), 9).unwrap();
        save_checkpoint(&m, &path).unwrap();

        // truncation -> corrupt length
        let bytes = std::fs::read(&path).unwrap();
        let trunc = dir.path().join("trunc.gffm");
        std::fs::write(&trunc, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(
            load_checkpoint(&trunc),
            Err(Error::CheckpointCorrupt(_))
        ));

        // version 0 -> version error
        let mut v0 = bytes.clone();
        v0[4..8].copy_from_slice(&0u32.to_le_bytes());
        let vpath = dir.path().join("v0.gffm");
        std::fs::write(&vpath, &v0).unwrap();
        assert!(matches!(
            load_checkpoint(&vpath),
            Err(Error::CheckpointVersion { found: 0, .. })
        ));

        // bad magic
        let mut bm = bytes.clone();
        bm[0] = b'X';
        let mpath = dir.path().join("bm.gffm");
        std::fs::write(&mpath, &bm).unwrap();
        assert!(matches!(load_checkpoint(&mpath), Err(Error::CheckpointMagic)));

        // bad trailer count -> corrupt
        let mut bt = bytes.clone();
        let n = bt.len();
        bt[n - 8..].copy_from_slice(&1u64.to_le_bytes());
        let tpath = dir.path().join("bt.gffm");
        std::fs::write(&tpath, &bt).unwrap();
        assert!(matches!(
            load_checkpoint(&tpath),
            Err(Error::CheckpointCorrupt(_))
        ));

        // missing file
        assert!(matches!(
            load_checkpoint(dir.path().join("nope.gffm")),
            Err(Error::CheckpointNotFound { .. })
        ));

        // arch mismatch
        let other = Arch {
            hidden: 16,
            ..tiny_arch()
        };
        assert!(matches!(
            ensure_arch(&m, &other),
            Err(Error::CheckpointArch { .. })
        ));
    }
}
