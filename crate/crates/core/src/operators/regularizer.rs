//! Diagonal frequency-domain regularizer D.

use std::f64::consts::PI;

use crate::config::SystemGeometry;
use crate::data::WaveletCoefficients;
use crate::error::{check_len, Result};
use crate::grid::BlockLayout;
use crate::wavelet::sub_band_of;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalRegularizer {
    /// `scale_weights[l][j]` for scale `j = 0..=J_l` (0 is the coarse block).
    scale_weights: Vec<Vec<f64>>,
    layout: BlockLayout,
    /// `d` expanded to one entry per coefficient.
    diag: Vec<f64>,
    pub alpha: f64,
}

/// Weight of one sub-band at spatial frequency `kappa` (rad/m).
pub fn band_weight(kappa: f64, outer_scale: f64, exponent: f64, strength: f64) -> f64 {
    let k_out = if outer_scale.is_finite() {
        2.0 * PI / outer_scale
    } else {
        0.0
    };
    (kappa * kappa + k_out * k_out).powf(exponent) / strength
}

/// Representative frequency of scale `j` on a layer of physical side `extent`.
pub fn scale_frequency(j: u32, extent: f64) -> f64 {
    (1u64 << j) as f64 * 2.0 * PI / extent
}

pub fn regularizer_build(geometry: &SystemGeometry) -> DiagonalRegularizer {
    let params = &geometry.regularizer;
    let scale_weights: Vec<Vec<f64>> = geometry
        .layers
        .iter()
        .map(|layer| {
            (0..=layer.grid_order)
                .map(|j| {
                    band_weight(
                        scale_frequency(j, layer.extent),
                        params.outer_scale,
                        params.exponent,
                        layer.relative_strength,
                    )
                })
                .collect()
        })
        .collect();
    let layout = BlockLayout::square(geometry.layers.iter().map(|l| l.side()));
    let mut diag = Vec::with_capacity(layout.len());
    for (layer, weights) in geometry.layers.iter().zip(&scale_weights) {
        let side = layer.side();
        for row in 0..side {
            for col in 0..side {
                diag.push(weights[sub_band_of(row, col).scale as usize]);
            }
        }
    }
    DiagonalRegularizer {
        scale_weights,
        layout,
        diag,
        alpha: geometry.regularization_alpha,
    }
}

impl DiagonalRegularizer {
    pub fn scale_weights(&self, layer: usize) -> &[f64] {
        &self.scale_weights[layer]
    }

    /// Unscaled `d`, one entry per coefficient.
    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    /// `out = alpha * d ⊙ c` on one layer block.
    pub fn apply_block(&self, layer: usize, alpha: f64, c: &[f64], out: &mut [f64]) {
        let d = self.layout.block(&self.diag, layer);
        for ((o, &ci), &di) in out.iter_mut().zip(c).zip(d) {
            *o = alpha * di * ci;
        }
    }
}

pub fn regularizer_apply(
    coeffs: &WaveletCoefficients,
    reg: &DiagonalRegularizer,
    alpha: f64,
) -> Result<WaveletCoefficients> {
    check_len("regularizer coefficients", reg.diag.len(), coeffs.len())?;
    let data = coeffs
        .data()
        .iter()
        .zip(&reg.diag)
        .map(|(c, d)| alpha * d * c)
        .collect();
    WaveletCoefficients::from_vec(coeffs.layout(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn one_scale_apart_ratio_without_outer_scale() {
        let r = band_weight(scale_frequency(3, 10.0), f64::INFINITY, 11.0 / 6.0, 1.0)
            / band_weight(scale_frequency(2, 10.0), f64::INFINITY, 11.0 / 6.0, 1.0);
        assert!((r - 2f64.powf(11.0 / 3.0)).abs() < 1e-12 * r);
        assert!((r - 12.699).abs() < 1e-3);
    }

    #[test]
    fn entries_depend_only_on_scale() {
        let g = presets::mini();
        let reg = regularizer_build(&g);
        let side = g.layers[0].side();
        let d = reg.layout().block(reg.diagonal(), 0);
        assert!(d.iter().all(|&v| v > 0.0));
        for row in 0..side {
            for col in 0..side {
                let s = sub_band_of(row, col).scale as usize;
                assert_eq!(d[row * side + col], reg.scale_weights(0)[s]);
            }
        }
        let w = reg.scale_weights(0);
        assert!(w.windows(2).all(|p| p[1] > p[0]));
    }

    #[test]
    fn equal_layers_equal_weights_and_strength_scaling() {
        let g = presets::mini()
            .with_config(|c| {
                c.layers[0].relative_strength = 0.5;
                c.layers[1].relative_strength = 0.5;
                c.layers[1].height = c.layers[0].height + 1e-9;
                c.dms[1].conjugation_height = c.layers[1].height;
            })
            .unwrap();
        let reg = regularizer_build(&g);
        for (a, b) in reg.scale_weights(0).iter().zip(reg.scale_weights(1)) {
            assert!((a - b).abs() <= 1e-9 * a);
        }
        let half = g
            .with_config(|c| {
                c.layers[0].relative_strength = 0.25;
                c.layers[1].relative_strength = 0.75;
            })
            .unwrap();
        let reg_half = regularizer_build(&half);
        for (a, b) in reg.scale_weights(0).iter().zip(reg_half.scale_weights(0)) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b);
        }
    }

    #[test]
    fn apply_examples() {
        let g = presets::mini();
        let reg = regularizer_build(&g);
        let c = WaveletCoefficients::from_vec(reg.layout(), vec![1.5; reg.layout().len()]).unwrap();
        assert!(regularizer_apply(&c, &reg, 0.0)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let ones = DiagonalRegularizer {
            diag: vec![1.0; reg.diag.len()],
            ..reg.clone()
        };
        assert!(regularizer_apply(&c, &ones, 2.0)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 3.0));
    }
}
