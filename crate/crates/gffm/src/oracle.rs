//! Closed-form ground truth for isotropic Gaussian-mixture targets.
//!
//! Under the linear path `x_t = (1 - t) z + t x1` with `z ~ N(0, I)` and
//! `x1 ~ N(mu_k, sigma_k^2 I)`, the pair `(x_t, x1 - z)` is jointly
//! Gaussian, so the conditional expectation `E[x1 - z | x_t = x]` has the
//! closed form
//!
//! ```text
//! u_t(x | k) = mu_k + ((t sigma_k^2 - (1 - t)) / v_t) (x - t mu_k),
//! v_t = (1 - t)^2 + t^2 sigma_k^2
//! ```
//!
//! and the marginal field is the posterior-responsibility average of the
//! per-component fields. These exact fields are what learned models and
//! samplers are validated against.

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::Condition;
use crate::rng::Rng;
use crate::sampler::VelocityField;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Isotropic variance sigma^2 (> 0).
    pub var: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixtureSpec {
    components: Vec<GaussianComponent>,
}

impl GaussianMixtureSpec {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidMixture("no components".into()));
        }
        let dim = components[0].mean.len();
        if dim == 0 {
            return Err(Error::InvalidMixture("zero-dimensional means".into()));
        }
        let mut total = 0.0;
        for (i, c) in components.iter().enumerate() {
            if c.mean.len() != dim {
                return Err(Error::InvalidMixture(format!(
                    "component {i} has dimension {} (expected {dim})",
                    c.mean.len()
                )));
            }
            if c.weight.is_nan() || c.weight <= 0.0 || !c.weight.is_finite() {
                return Err(Error::InvalidMixture(format!(
                    "component {i} weight {} must be positive",
                    c.weight
                )));
            }
            if c.var.is_nan() || c.var <= 0.0 || !c.var.is_finite() {
                return Err(Error::InvalidMixture(format!(
                    "component {i} variance {} must be positive",
                    c.var
                )));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMixture(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        Ok(GaussianMixtureSpec { components })
    }

    /// Equal-weight components on a circle of the given radius in the
    /// first two coordinates (zero elsewhere), shared sigma.
    pub fn ring(k: usize, dim: usize, radius: f64, sigma: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidMixture(format!(
                "ring mixture needs dim >= 2, got {dim}"
            )));
        }
        if k == 0 {
            return Err(Error::InvalidMixture("ring mixture needs k >= 1".into()));
        }
        let components = (0..k)
            .map(|j| {
                let angle = 2.0 * std::f64::consts::PI * j as f64 / k as f64;
                let mut mean = vec![0.0; dim];
                mean[0] = radius * angle.cos();
                mean[1] = radius * angle.sin();
                GaussianComponent {
                    weight: 1.0 / k as f64,
                    mean,
                    var: sigma * sigma,
                }
            })
            .collect();
        GaussianMixtureSpec::new(components)
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    /// Exact conditional velocity for component `k` at time `t in [0, 1]`.
    /// At the data endpoint the limit is `u = x`.
    pub fn cond_velocity(&self, k: usize, x: &[f64], t: f64) -> Vec<f64> {
        assert!(k < self.k(), "component {k} out of range ({} components)", self.k());
        assert!((0.0..=1.0).contains(&t), "t = {t} outside [0, 1]");
        assert_eq!(x.len(), self.dim(), "state dim {} vs mixture dim {}", x.len(), self.dim());
        if t >= 1.0 - 1e-9 {
            return x.to_vec();
        }
        let c = &self.components[k];
        let v_t = (1.0 - t) * (1.0 - t) + t * t * c.var;
        let coef = (t * c.var - (1.0 - t)) / v_t;
        x.iter()
            .zip(&c.mean)
            .map(|(xi, mu)| mu + coef * (xi - t * mu))
            .collect()
    }

    /// Log weight plus log body of the path marginal N(x; t mu_k, v_t^(k) I),
    /// the unnormalized posterior over components.
    fn log_path_weights(&self, x: &[f64], t: f64) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| {
                let v_t = (1.0 - t) * (1.0 - t) + t * t * c.var;
                let mut sq = 0.0;
                for (xi, mu) in x.iter().zip(&c.mean) {
                    let d = xi - t * mu;
                    sq += d * d;
                }
                c.weight.ln() - 0.5 * (x.len() as f64) * v_t.ln() - 0.5 * sq / v_t
            })
            .collect()
    }

    /// Posterior responsibility of each component given `x_t = x`,
    /// computed with log-sum-exp stabilization.
    pub fn responsibilities(&self, x: &[f64], t: f64) -> Vec<f64> {
        let logs = self.log_path_weights(x, t);
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    /// Exact marginal velocity: responsibility-weighted average of the
    /// per-component conditional velocities.
    pub fn marginal_velocity(&self, x: &[f64], t: f64) -> Vec<f64> {
        assert!((0.0..=1.0).contains(&t), "t = {t} outside [0, 1]");
        if t >= 1.0 - 1e-9 {
            return x.to_vec();
        }
        let r = self.responsibilities(x, t);
        let mut out = vec![0.0; self.dim()];
        for (k, rk) in r.iter().enumerate() {
            let u = self.cond_velocity(k, x, t);
            for (o, ui) in out.iter_mut().zip(&u) {
                *o += rk * ui;
            }
        }
        out
    }

    /// Draw from N(mu_label, sigma_label^2 I).
    pub fn exact_sample(&self, label: usize, rng: &mut Rng) -> Result<Vec<f64>> {
        if label >= self.k() {
            return Err(Error::LabelOutOfRange {
                label,
                n_classes: self.k(),
            });
        }
        let c = &self.components[label];
        let sigma = c.var.sqrt();
        Ok(c
            .mean
            .iter()
            .map(|mu| {
                let g: f64 = rng.sample(StandardNormal);
                mu + sigma * g
            })
            .collect())
    }

    /// Draw a label proportional to the mixture weights.
    pub fn sample_label(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.random::<f64>();
        let mut acc = 0.0;
        for (k, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                return k;
            }
        }
        self.k() - 1
    }

    /// Most probable component under the mixture: argmax of
    /// `pi_k N(x; mu_k, sigma_k^2 I)`, ties broken toward the smallest k.
    pub fn bayes_classify(&self, x: &[f64]) -> usize {
        assert_eq!(x.len(), self.dim());
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (k, c) in self.components.iter().enumerate() {
            let mut sq = 0.0;
            for (xi, mu) in x.iter().zip(&c.mean) {
                let d = xi - mu;
                sq += d * d;
            }
            let score = c.weight.ln() - 0.5 * (x.len() as f64) * c.var.ln() - 0.5 * sq / c.var;
            if score > best_score {
                best_score = score;
                best = k;
            }
        }
        best
    }
}

/// An exact mixture as a velocity field: labelled conditions use the
/// conditional field of that component, the null condition the marginal —
/// the same contract a trained model follows. Prompts are ignored.
pub struct AnalyticField<'a> {
    pub spec: &'a GaussianMixtureSpec,
}

impl VelocityField for AnalyticField<'_> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn velocity(&self, x: &[f64], t: f64, cond: &Condition) -> Result<Vec<f64>> {
        match cond.label {
            Some(k) => {
                if k >= self.spec.k() {
                    return Err(Error::LabelOutOfRange {
                        label: k,
                        n_classes: self.spec.k(),
                    });
                }
                Ok(self.spec.cond_velocity(k, x, t))
            }
            None => Ok(self.spec.marginal_velocity(x, t)),
        }
    }
}
