//! Deterministic toy conditional datasets.
//!
//! Two kinds: labelled draws from a Gaussian mixture (prompt absent), and
//! a masked-infilling variant where the prompt is a copy of the data point
//! with a contiguous span blanked out. The prompt carries the surviving
//! values (masked positions hold a 0.0 sentinel) followed by a parallel
//! 0/1 flag vector (1 = masked), so dimension is `2 * D` and "masked" stays
//! unambiguous even when data values are near zero.
//!
//! Datasets are regenerated from their spec, never stored.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::model::Condition;
use crate::oracle::GaussianMixtureSpec;
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Mixture,
    Infill,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub mixture: GaussianMixtureSpec,
    pub n_items: usize,
    /// Mask ratio bounds (infill only).
    pub mask_lo: f64,
    pub mask_hi: f64,
    pub seed: u64,
}

pub type DataItem = (Vec<f64>, Condition);

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_lo)
            || !(0.0..=1.0).contains(&self.mask_hi)
            || self.mask_lo > self.mask_hi
        {
            return Err(Error::InvalidDataset(format!(
                "mask bounds [{}, {}] must satisfy 0 <= lo <= hi <= 1",
                self.mask_lo, self.mask_hi
            )));
        }
        if self.kind == DatasetKind::Infill && self.mixture.dim() < 2 {
            return Err(Error::InvalidDataset(
                "infill datasets need dimension >= 2".into(),
            ));
        }
        Ok(())
    }

    /// Prompt dimension of infill prompts (values + mask flags); mixture
    /// datasets never carry a prompt but share the slot width.
    pub fn prompt_dim(&self) -> usize {
        2 * self.mixture.dim()
    }
}

pub fn make_dataset(spec: &DatasetSpec) -> Result<Vec<DataItem>> {
    spec.validate()?;
    match spec.kind {
        DatasetKind::Mixture => make_mixture_dataset(spec),
        DatasetKind::Infill => make_infill_dataset(spec),
    }
}

/// Labelled mixture draws; labels proportional to the component weights,
/// prompt always absent.
pub fn make_mixture_dataset(spec: &DatasetSpec) -> Result<Vec<DataItem>> {
    let mut rng = rng::rng_from_seed(spec.seed);
    let mut items = Vec::with_capacity(spec.n_items);
    for _ in 0..spec.n_items {
        let label = spec.mixture.sample_label(&mut rng);
        let x1 = spec.mixture.exact_sample(label, &mut rng)?;
        items.push((x1, Condition::with_label(label)));
    }
    Ok(items)
}

/// Mixture draws whose prompt is the data point with a contiguous span of
/// ratio r ~ U(mask_lo, mask_hi) masked out.
pub fn make_infill_dataset(spec: &DatasetSpec) -> Result<Vec<DataItem>> {
    let d = spec.mixture.dim();
    let mut rng = rng::rng_from_seed(spec.seed);
    let mut items = Vec::with_capacity(spec.n_items);
    for _ in 0..spec.n_items {
        let label = spec.mixture.sample_label(&mut rng);
        let x1 = spec.mixture.exact_sample(label, &mut rng)?;

        let ratio = rng.random_range(spec.mask_lo..=spec.mask_hi);
        let n_masked = ((ratio * d as f64).round() as usize).min(d);
        let start = if n_masked == d {
            0
        } else {
            rng.random_range(0..=(d - n_masked))
        };

        let mut prompt = Vec::with_capacity(2 * d);
        for (i, v) in x1.iter().enumerate() {
            let masked = i >= start && i < start + n_masked;
            prompt.push(if masked { 0.0 } else { *v });
        }
        for i in 0..d {
            let masked = i >= start && i < start + n_masked;
            prompt.push(if masked { 1.0 } else { 0.0 });
        }
        items.push((
            x1,
            Condition {
                label: Some(label),
                prompt: Some(prompt),
            },
        ));
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring_spec(kind: DatasetKind, n_items: usize, seed: u64) -> DatasetSpec {
        DatasetSpec {
            kind,
            mixture: GaussianMixtureSpec::ring(4, 2, 4.0, 0.5).unwrap(),
            n_items,
            mask_lo: 0.7,
            mask_hi: 1.0,
            seed,
        }
    }

    #[test]
    fn empty_dataset() {
        let items = make_dataset(&ring_spec(DatasetKind::Mixture, 0, 1)).unwrap();
        assert!(items.is_empty());
    }

    #[test]
    fn mixture_label_frequencies() {
        let spec = ring_spec(DatasetKind::Mixture, 100_000, 3);
        let items = make_dataset(&spec).unwrap();
        let mut counts = [0usize; 4];
        for (x1, cond) in &items {
            assert!(x1.iter().all(|v| v.is_finite()));
            let l = cond.label.unwrap();
            assert!(l < 4);
            assert!(cond.prompt.is_none());
            counts[l] += 1;
        }
        for c in counts {
            let f = c as f64 / items.len() as f64;
            assert!((f - 0.25).abs() < 0.01, "label frequency {f}");
        }
    }

    #[test]
    fn datasets_are_pure_functions_of_spec() {
        for kind in [DatasetKind::Mixture, DatasetKind::Infill] {
            let a = make_dataset(&ring_spec(kind, 500, 7)).unwrap();
            let b = make_dataset(&ring_spec(kind, 500, 7)).unwrap();
            assert_eq!(a, b);
            let c = make_dataset(&ring_spec(kind, 500, 8)).unwrap();
            assert_ne!(a, c);
        }
    }

    #[test]
    fn infill_full_mask() {
        let mut spec = ring_spec(DatasetKind::Infill, 50, 5);
        spec.mask_lo = 1.0;
        spec.mask_hi = 1.0;
        let items = make_dataset(&spec).unwrap();
        for (_, cond) in &items {
            let p = cond.prompt.as_ref().unwrap();
            assert_eq!(p.len(), 4);
            assert_eq!(&p[0..2], &[0.0, 0.0]);
            assert_eq!(&p[2..4], &[1.0, 1.0]);
        }
    }

    #[test]
    fn infill_forced_ratio_masks_exact_count() {
        let mixture = GaussianMixtureSpec::ring(2, 10, 4.0, 0.5).unwrap();
        let spec = DatasetSpec {
            kind: DatasetKind::Infill,
            mixture,
            n_items: 200,
            mask_lo: 0.7,
            mask_hi: 0.7,
            seed: 9,
        };
        let items = make_dataset(&spec).unwrap();
        for (x1, cond) in &items {
            let p = cond.prompt.as_ref().unwrap();
            assert_eq!(p.len(), 20);
            let flags = &p[10..20];
            let n_masked: f64 = flags.iter().sum();
            assert_eq!(n_masked, 7.0);
            // masked span is contiguous
            let first = flags.iter().position(|&f| f == 1.0).unwrap();
            assert!(flags[first..first + 7].iter().all(|&f| f == 1.0));
            // masked positions carry the sentinel exactly; others leak nothing
            for i in 0..10 {
                if flags[i] == 1.0 {
                    assert_eq!(p[i], 0.0);
                } else {
                    assert_eq!(p[i], x1[i]);
                }
            }
        }
    }

    #[test]
    fn infill_mean_ratio() {
        let mixture = GaussianMixtureSpec::ring(2, 10, 4.0, 0.5).unwrap();
        let spec = DatasetSpec {
            kind: DatasetKind::Infill,
            mixture,
            n_items: 10_000,
            mask_lo: 0.7,
            mask_hi: 1.0,
            seed: 11,
        };
        let items = make_dataset(&spec).unwrap();
        let mean_ratio: f64 = items
            .iter()
            .map(|(_, c)| {
                let p = c.prompt.as_ref().unwrap();
                p[10..20].iter().sum::<f64>() / 10.0
            })
            .sum::<f64>()
            / items.len() as f64;
        assert!((mean_ratio - 0.85).abs() < 0.01, "mean ratio {mean_ratio}");
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = ring_spec(DatasetKind::Infill, 10, 0);
        spec.mask_lo = 0.9;
        spec.mask_hi = 0.7;
        assert!(make_dataset(&spec).is_err());

        let spec = DatasetSpec {
            kind: DatasetKind::Infill,
            mixture: GaussianMixtureSpec::new(vec![crate::oracle::GaussianComponent {
                weight: 1.0,
                mean: vec![0.0],
                var: 1.0,
            }])
            .unwrap(),
            n_items: 1,
            mask_lo: 0.7,
            mask_hi: 1.0,
            seed: 0,
        };
        assert!(make_dataset(&spec).is_err());
    }
}
