//! Flat, block-structured vectors passed between the operators.

use crate::error::{check_len, Result};
use crate::grid::BlockLayout;

macro_rules! stacked {
    ($(#[$meta:meta])* $name:ident, $what:literal) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            layout: BlockLayout,
            data: Vec<f64>,
        }

        impl $name {
            pub fn zeros(layout: &BlockLayout) -> Self {
                Self {
                    layout: layout.clone(),
                    data: vec![0.0; layout.len()],
                }
            }

            pub fn from_vec(layout: &BlockLayout, data: Vec<f64>) -> Result<Self> {
                check_len($what, layout.len(), data.len())?;
                Ok(Self {
                    layout: layout.clone(),
                    data,
                })
            }

            pub fn layout(&self) -> &BlockLayout {
                &self.layout
            }

            pub fn data(&self) -> &[f64] {
                &self.data
            }

            pub fn data_mut(&mut self) -> &mut [f64] {
                &mut self.data
            }

            pub fn into_vec(self) -> Vec<f64> {
                self.data
            }

            pub fn len(&self) -> usize {
                self.data.len()
            }

            pub fn is_empty(&self) -> bool {
                self.data.is_empty()
            }

            pub fn n_blocks(&self) -> usize {
                self.layout.n_blocks()
            }

            pub fn block(&self, i: usize) -> &[f64] {
                self.layout.block(&self.data, i)
            }

            pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
                self.layout.block_mut(&mut self.data, i)
            }

            pub fn fill(&mut self, v: f64) {
                self.data.fill(v);
            }

            pub fn norm(&self) -> f64 {
                crate::linalg::norm(&self.data)
            }
        }
    };
}

stacked!(
    /// Nodal turbulence values, one `2^J x 2^J` block per layer.
    LayerStack,
    "layer stack"
);
stacked!(
    /// Wavelet coefficients, one `2^J x 2^J` block per layer.
    WaveletCoefficients,
    "wavelet coefficients"
);
stacked!(
    /// Slopes, one `[s^x | s^y]` block of `2 n_s^2` values per WFS.
    MeasurementSet,
    "measurement set"
);
stacked!(
    /// Actuator commands, one `n_a x n_a` block per DM.
    MirrorShapes,
    "mirror shapes"
);
