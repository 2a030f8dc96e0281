//! ODE sampling of velocity fields: explicit Euler from noise (t = 0) to
//! data (t = 1), with optional classifier-free guidance and exact
//! forward-pass accounting.
//!
//! With guidance enabled every step costs two field evaluations
//! (conditional and fully-null); without it, one. That factor of two is
//! the quantity the whole benchmark is about, so the counters are exact
//! by construction, never estimated.

use std::time::Instant;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels;
use crate::model::Condition;
use crate::rng;

/// A time-dependent conditional velocity field over R^D.
pub trait VelocityField: Sync {
    fn dim(&self) -> usize;
    fn velocity(&self, x: &[f64], t: f64, cond: &Condition) -> Result<Vec<f64>>;
}

/// Adapter for plain closures `(x, t) -> v`, mostly for tests and demos.
pub struct FieldFn<F> {
    pub dim: usize,
    pub f: F,
}

impl<F: Fn(&[f64], f64) -> Vec<f64> + Sync> VelocityField for FieldFn<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, x: &[f64], t: f64, _cond: &Condition) -> Result<Vec<f64>> {
        Ok((self.f)(x, t))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Schedule {
    Uniform,
    Sway(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    /// Number of integration steps.
    pub nfe: usize,
    pub cfg_enabled: bool,
    /// Guidance scale w (used only when `cfg_enabled`).
    pub guidance_scale: f64,
    pub schedule: Schedule,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn times(&self) -> Result<Vec<f64>> {
        match self.schedule {
            Schedule::Uniform => Ok(uniform_schedule(self.nfe)),
            Schedule::Sway(s) => sway_schedule(self.nfe, s),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalCounters {
    pub model_forward_count: u64,
    pub wall_clock_seconds: f64,
}

/// Equally spaced grid 0 = t_0 < ... < t_nfe = 1.
pub fn uniform_schedule(nfe: usize) -> Vec<f64> {
    assert!(nfe >= 1, "uniform_schedule: nfe must be >= 1");
    (0..=nfe).map(|i| i as f64 / nfe as f64).collect()
}

/// Monotonicity range of the sway warp `f(u) = u + s (cos(pi u / 2) - 1 + u)`.
pub const SWAY_MIN: f64 = -1.0;
pub fn sway_max() -> f64 {
    2.0 / (std::f64::consts::PI - 2.0)
}

/// Warped grid concentrating steps early in the trajectory for s < 0.
/// `f(0) = 0` and `f(1) = 1` exactly for every admissible s.
pub fn sway_schedule(nfe: usize, s: f64) -> Result<Vec<f64>> {
    assert!(nfe >= 1, "sway_schedule: nfe must be >= 1");
    let hi = sway_max();
    if !(SWAY_MIN..=hi).contains(&s) {
        return Err(Error::SwayOutOfRange {
            s,
            lo: SWAY_MIN,
            hi,
        });
    }
    let warp = |u: f64| u + s * ((std::f64::consts::PI * u / 2.0).cos() - 1.0 + u);
    let mut times: Vec<f64> = uniform_schedule(nfe).into_iter().map(warp).collect();
    // cos(0) = 1 and cos(pi/2) = 0 pin the endpoints analytically; assign
    // them exactly so accumulated rounding cannot move them.
    times[0] = 0.0;
    *times.last_mut().unwrap() = 1.0;
    Ok(times)
}

/// Guidance interpolation `u(x) + w (u(x|y) - u(x))`, evaluating the field
/// twice (conditional, fully-null) and counting both evaluations.
///
/// At w = 1 the result is the conditional evaluation bit-for-bit, and at
/// w = 0 the unconditional one, rather than a rounded reconstruction.
pub fn cfg_velocity(
    field: &dyn VelocityField,
    x: &[f64],
    t: f64,
    cond: &Condition,
    w: f64,
    counters: &mut EvalCounters,
) -> Result<Vec<f64>> {
    let v_cond = field.velocity(x, t, cond)?;
    let v_uncond = field.velocity(x, t, &Condition::null())?;
    counters.model_forward_count += 2;
    if w == 1.0 {
        return Ok(v_cond);
    }
    if w == 0.0 {
        return Ok(v_uncond);
    }
    Ok(v_uncond
        .iter()
        .zip(&v_cond)
        .map(|(u, c)| u + w * (c - u))
        .collect())
}

/// Explicit Euler from t = 0 (noise) to t = 1 (data):
/// `x <- x + (t_{k+1} - t_k) v(x, t_k)`. The field is never evaluated at
/// exactly t = 1; the last step uses the left endpoint.
pub fn integrate(
    field: &dyn VelocityField,
    z0: &[f64],
    cfg: &SamplerConfig,
    cond: &Condition,
) -> Result<(Vec<f64>, EvalCounters)> {
    let start = Instant::now();
    let times = cfg.times()?;
    let mut counters = EvalCounters::default();
    let mut x = z0.to_vec();
    if !kernels::all_finite(&x) {
        return Err(Error::NonFiniteState { step: 0 });
    }
    for k in 0..cfg.nfe {
        let t = times[k];
        let dt = times[k + 1] - times[k];
        let v = if cfg.cfg_enabled {
            cfg_velocity(field, &x, t, cond, cfg.guidance_scale, &mut counters)?
        } else {
            counters.model_forward_count += 1;
            field.velocity(&x, t, cond)?
        };
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi += dt * vi;
        }
        if !kernels::all_finite(&x) {
            return Err(Error::NonFiniteState { step: k });
        }
    }
    counters.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok((x, counters))
}

/// Integrate one sample per condition, drawing `z0 ~ N(0, I)` per item
/// from the config seed. Deterministic given (config, conditions).
pub fn sample_batch(
    field: &dyn VelocityField,
    conds: &[Condition],
    cfg: &SamplerConfig,
) -> Result<(Vec<Vec<f64>>, EvalCounters)> {
    use rayon::prelude::*;

    if conds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let start = Instant::now();
    let dim = field.dim();
    let mut rng = rng::rng_from_seed(cfg.seed);
    let noise: Vec<Vec<f64>> = (0..conds.len())
        .map(|_| (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();

    let results: Vec<Result<(Vec<f64>, EvalCounters)>> = noise
        .par_iter()
        .zip(conds.par_iter())
        .map(|(z0, cond)| integrate(field, z0, cfg, cond))
        .collect();

    let mut samples = Vec::with_capacity(conds.len());
    let mut counters = EvalCounters::default();
    for r in results {
        let (x, c) = r?;
        samples.push(x);
        counters.model_forward_count += c.model_forward_count;
    }
    counters.wall_clock_seconds = start.elapsed().as_secs_f64();
    Ok((samples, counters))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_schedule_values() {
        assert_eq!(uniform_schedule(1), vec![0.0, 1.0]);
        assert_eq!(uniform_schedule(4), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let s = uniform_schedule(7);
        assert_eq!(s[0], 0.0);
        assert_eq!(*s.last().unwrap(), 1.0);
    }

    #[test]
    fn sway_zero_is_uniform() {
        assert_eq!(sway_schedule(8, 0.0).unwrap(), uniform_schedule(8));
    }

    #[test]
    fn sway_midpoint_at_minus_one() {
        // f(0.5) = 0.5 - (cos(pi/4) - 1 + 0.5) ~ 0.2929
        let s = sway_schedule(2, -1.0).unwrap();
        assert!((s[1] - 0.292_893_218_813_452_5).abs() < 1e-12, "got {}", s[1]);
    }

    #[test]
    fn sway_rejects_out_of_range() {
        assert!(sway_schedule(4, -1.01).is_err());
        assert!(sway_schedule(4, sway_max() + 1e-6).is_err());
        assert!(sway_schedule(4, sway_max()).is_ok());
    }

    proptest! {
        #[test]
        fn sway_strictly_increasing_with_exact_endpoints(
            nfe in 1usize..200,
            frac in 0.0f64..1.0,
        ) {
            let s = SWAY_MIN + frac * (sway_max() - SWAY_MIN);
            let times = sway_schedule(nfe, s).unwrap();
            prop_assert_eq!(times[0], 0.0);
            prop_assert_eq!(*times.last().unwrap(), 1.0);
            for w in times.windows(2) {
                prop_assert!(w[1] > w[0], "not strictly increasing: {:?}", w);
            }
        }
    }

    fn const_field(v: f64) -> FieldFn<impl Fn(&[f64], f64) -> Vec<f64>> {
        FieldFn {
            dim: 1,
            f: move |_x: &[f64], _t: f64| vec![v],
        }
    }

    #[test]
    fn cfg_velocity_arithmetic_and_endpoints() {
        // a field whose conditional evaluation is 3 and unconditional is 1
        struct Stub;
        impl VelocityField for Stub {
            fn dim(&self) -> usize {
                1
            }
            fn velocity(&self, _x: &[f64], _t: f64, cond: &Condition) -> Result<Vec<f64>> {
                Ok(vec![if cond.label.is_some() { 3.0 } else { 1.0 }])
            }
        }

        let mut c = EvalCounters::default();
        let cond = Condition::with_label(0);
        // w = 2: 1 + 2 * (3 - 1) = 5
        let v = cfg_velocity(&Stub, &[0.0], 0.5, &cond, 2.0, &mut c).unwrap();
        assert_eq!(v, vec![5.0]);
        // w = 1 -> conditional exactly; w = 0 -> unconditional exactly
        let v = cfg_velocity(&Stub, &[0.0], 0.5, &cond, 1.0, &mut c).unwrap();
        assert_eq!(v, vec![3.0]);
        let v = cfg_velocity(&Stub, &[0.0], 0.5, &cond, 0.0, &mut c).unwrap();
        assert_eq!(v, vec![1.0]);
        assert_eq!(c.model_forward_count, 6);
    }

    #[test]
    fn integrate_constant_field_exact() {
        let cfgs = [
            SamplerConfig {
                nfe: 1,
                cfg_enabled: false,
                guidance_scale: 0.0,
                schedule: Schedule::Uniform,
                seed: 0,
            },
            SamplerConfig {
                nfe: 13,
                cfg_enabled: false,
                guidance_scale: 0.0,
                schedule: Schedule::Sway(-0.8),
                seed: 0,
            },
        ];
        for cfg in &cfgs {
            let (x, c) = integrate(&const_field(1.0), &[0.25], cfg, &Condition::null()).unwrap();
            assert!((x[0] - 1.25).abs() < 1e-12, "x = {}", x[0]);
            assert_eq!(c.model_forward_count, cfg.nfe as u64);
        }
    }

    #[test]
    fn integrate_linear_decay_first_order() {
        // dx/dt = -x from x(0) = 1: exact x(1) = e^(-1).
        let field = FieldFn {
            dim: 1,
            f: |x: &[f64], _t: f64| vec![-x[0]],
        };
        let exact = (-1.0f64).exp();
        let err_at = |nfe: usize| -> f64 {
            let cfg = SamplerConfig {
                nfe,
                cfg_enabled: false,
                guidance_scale: 0.0,
                schedule: Schedule::Uniform,
                seed: 0,
            };
            let (x, _) = integrate(&field, &[1.0], &cfg, &Condition::null()).unwrap();
            (x[0] - exact).abs()
        };
        let e64 = err_at(64);
        let e128 = err_at(128);
        assert!(e64 > 0.0 && e128 > 0.0);
        let ratio = e64 / e128;
        assert!((1.6..=2.4).contains(&ratio), "ratio = {ratio}");
    }

    #[test]
    fn integrate_counts_doubled_under_cfg() {
        let cfg_off = SamplerConfig {
            nfe: 32,
            cfg_enabled: false,
            guidance_scale: 2.0,
            schedule: Schedule::Uniform,
            seed: 0,
        };
        let cfg_on = SamplerConfig {
            cfg_enabled: true,
            ..cfg_off.clone()
        };
        let (_, off) = integrate(&const_field(0.5), &[0.0], &cfg_off, &Condition::null()).unwrap();
        let (_, on) = integrate(&const_field(0.5), &[0.0], &cfg_on, &Condition::null()).unwrap();
        assert_eq!(off.model_forward_count, 32);
        assert_eq!(on.model_forward_count, 64);
    }

    #[test]
    fn integrate_reports_nonfinite_step() {
        let field = FieldFn {
            dim: 1,
            f: |_x: &[f64], t: f64| vec![if t > 0.4 { f64::NAN } else { 0.0 }],
        };
        let cfg = SamplerConfig {
            nfe: 10,
            cfg_enabled: false,
            guidance_scale: 0.0,
            schedule: Schedule::Uniform,
            seed: 0,
        };
        match integrate(&field, &[0.0], &cfg, &Condition::null()) {
            Err(Error::NonFiniteState { step }) => assert_eq!(step, 5),
            other => panic!("expected NonFiniteState, got {other:?}"),
        }
    }

    #[test]
    fn sample_batch_deterministic_and_counted() {
        let field = FieldFn {
            dim: 2,
            f: |x: &[f64], _t: f64| vec![-x[0], -x[1]],
        };
        let cfg = SamplerConfig {
            nfe: 7,
            cfg_enabled: false,
            guidance_scale: 0.0,
            schedule: Schedule::Uniform,
            seed: 42,
        };
        let conds: Vec<Condition> = (0..10).map(|_| Condition::null()).collect();
        let (s1, c1) = sample_batch(&field, &conds, &cfg).unwrap();
        let (s2, _) = sample_batch(&field, &conds, &cfg).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(c1.model_forward_count, 70);

        assert!(matches!(
            sample_batch(&field, &[], &cfg),
            Err(Error::EmptyBatch)
        ));
    }
}
