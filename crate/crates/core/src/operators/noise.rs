//! Per-WFS scalar noise weighting C_η⁻¹.

use crate::config::SystemGeometry;
use crate::data::MeasurementSet;
use crate::error::{Error, Result};

/// Inverse noise variances `1/σ_g²`, one per WFS. Zero weights are allowed
/// and switch a sensor off.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseWeights {
    inv_variance: Vec<f64>,
}

impl NoiseWeights {
    pub fn new(inv_variance: Vec<f64>) -> Result<Self> {
        if let Some(w) = inv_variance.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::Validation(format!("noise weight {w} must be finite and >= 0")));
        }
        Ok(Self { inv_variance })
    }

    pub fn from_geometry(geometry: &SystemGeometry) -> Self {
        Self {
            inv_variance: geometry.wfs_list.iter().map(|w| 1.0 / w.noise_variance).collect(),
        }
    }

    pub fn get(&self, wfs: usize) -> f64 {
        self.inv_variance[wfs]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.inv_variance
    }

    pub fn len(&self) -> usize {
        self.inv_variance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inv_variance.is_empty()
    }
}

pub fn noise_weight_apply(measurements: &MeasurementSet, weights: &NoiseWeights) -> Result<MeasurementSet> {
    if measurements.n_blocks() != weights.len() {
        return Err(Error::Dimension {
            context: "noise weights",
            expected: measurements.n_blocks(),
            actual: weights.len(),
        });
    }
    let mut out = measurements.clone();
    for g in 0..weights.len() {
        let w = weights.get(g);
        out.block_mut(g).iter_mut().for_each(|v| *v *= w);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BlockLayout;

    fn set() -> MeasurementSet {
        let layout = BlockLayout::from_lens(vec![4, 6]);
        MeasurementSet::from_vec(&layout, (1..=10).map(f64::from).collect()).unwrap()
    }

    #[test]
    fn unit_variance_is_identity() {
        let s = set();
        let w = NoiseWeights::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(noise_weight_apply(&s, &w).unwrap(), s);
    }

    #[test]
    fn variance_four_scales_one_block() {
        let s = set();
        let w = NoiseWeights::new(vec![1.0, 0.25]).unwrap();
        let out = noise_weight_apply(&s, &w).unwrap();
        assert_eq!(out.block(0), s.block(0));
        for (a, b) in out.block(1).iter().zip(s.block(1)) {
            assert_eq!(*a, 0.25 * b);
        }
    }

    #[test]
    fn rejects_negative_and_mismatched() {
        assert!(NoiseWeights::new(vec![-1.0]).is_err());
        let w = NoiseWeights::new(vec![1.0]).unwrap();
        assert!(noise_weight_apply(&set(), &w).is_err());
    }
}
