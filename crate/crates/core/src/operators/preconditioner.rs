//! Modified Jacobi preconditioner: either the exact diagonal of M or a
//! per-sub-band estimate with separate coarse/detail weighting.

use crate::config::PreconditionerParams;
use crate::error::{Error, Result};
use crate::grid::BlockLayout;
use crate::wavelet::sub_bands;

use super::DiagonalRegularizer;

pub fn check_positive(diag: &[f64]) -> Result<()> {
    match diag.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        Some(index) => Err(Error::NonPositiveDiagonal {
            index,
            value: diag[index],
        }),
        None => Ok(()),
    }
}

/// `diag(M)` by applying `m` to every canonical basis vector.
pub fn exact_diagonal(dim: usize, mut m: impl FnMut(&[f64], &mut [f64]) -> Result<()>) -> Result<Vec<f64>> {
    let mut e = vec![0.0; dim];
    let mut out = vec![0.0; dim];
    let mut diag = Vec::with_capacity(dim);
    for i in 0..dim {
        e[i] = 1.0;
        m(&e, &mut out)?;
        diag.push(out[i]);
        e[i] = 0.0;
    }
    check_positive(&diag)?;
    Ok(diag)
}

/// `J = α d + w_band · t̂_band`, where `t̂_band` is the data-term diagonal
/// probed at the middle coefficient of each (layer, sub-band) and
/// `w_band` is the coarse weight on scale 0 and the detail weight elsewhere.
pub fn approximate_diagonal(
    layout: &BlockLayout,
    grid_orders: &[u32],
    reg: &DiagonalRegularizer,
    alpha: f64,
    params: &PreconditionerParams,
    mut data_term: impl FnMut(&[f64], &mut [f64]) -> Result<()>,
) -> Result<Vec<f64>> {
    let dim = layout.len();
    let mut diag = vec![0.0; dim];
    let mut e = vec![0.0; dim];
    let mut out = vec![0.0; dim];
    for (layer, &order) in grid_orders.iter().enumerate() {
        let side = 1usize << order;
        let base = layout.range(layer).start;
        for band in sub_bands(order) {
            let (r0, c0) = band.origin();
            let s = band.side();
            let probe = base + (r0 + s / 2) * side + (c0 + s / 2);
            e[probe] = 1.0;
            data_term(&e, &mut out)?;
            e[probe] = 0.0;
            let t = out[probe];
            let w = if band.scale == 0 {
                params.coarse_weight
            } else {
                params.detail_weight
            };
            for r in r0..r0 + s {
                for c in c0..c0 + s {
                    diag[base + r * side + c] = w * t;
                }
            }
        }
    }
    for (j, d) in diag.iter_mut().zip(reg.diagonal()) {
        *j += alpha * d;
    }
    check_positive(&diag)?;
    Ok(diag)
}
