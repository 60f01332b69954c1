//! Shack-Hartmann slope operator Γ and its transpose.
//!
//! The wavefront is a bilinear function with nodal values on the
//! `(n+1) x (n+1)` subaperture corner grid (row index along y, column along
//! x). Each active subaperture reports the mean of its two edge differences
//! along each axis; inactive subapertures report exactly zero.

use crate::config::WfsConfig;
use crate::error::{check_len, Result};

/// Writes `[s^x | s^y]` (each `n x n`, row-major) into `slopes`.
pub fn apply(wavefront: &[f64], n: usize, mask: &[bool], slopes: &mut [f64]) {
    let m = n + 1;
    let (sx, sy) = slopes.split_at_mut(n * n);
    for i in 0..n {
        let top = &wavefront[i * m..(i + 1) * m];
        let bot = &wavefront[(i + 1) * m..(i + 2) * m];
        for j in 0..n {
            let k = i * n + j;
            if mask[k] {
                sx[k] = 0.5 * ((top[j + 1] - top[j]) + (bot[j + 1] - bot[j]));
                sy[k] = 0.5 * ((bot[j] - top[j]) + (bot[j + 1] - top[j + 1]));
            } else {
                sx[k] = 0.0;
                sy[k] = 0.0;
            }
        }
    }
}

/// Overwrites `wavefront` with Γᵀ applied to `[s^x | s^y]`.
pub fn apply_transpose(slopes: &[f64], n: usize, mask: &[bool], wavefront: &mut [f64]) {
    wavefront.fill(0.0);
    accumulate_transpose(slopes, n, mask, wavefront);
}

/// `wavefront += Γᵀ slopes`.
pub fn accumulate_transpose(slopes: &[f64], n: usize, mask: &[bool], wavefront: &mut [f64]) {
    let m = n + 1;
    let (sx, sy) = slopes.split_at(n * n);
    for i in 0..n {
        let (head, tail) = wavefront.split_at_mut((i + 1) * m);
        let top = &mut head[i * m..];
        let bot = &mut tail[..m];
        for j in 0..n {
            let k = i * n + j;
            if !mask[k] {
                continue;
            }
            let hx = 0.5 * sx[k];
            let hy = 0.5 * sy[k];
            top[j] += -hx - hy;
            top[j + 1] += hx - hy;
            bot[j] += -hx + hy;
            bot[j + 1] += hx + hy;
        }
    }
}

pub fn sh_apply(wavefront: &[f64], wfs: &WfsConfig) -> Result<Vec<f64>> {
    let n = wfs.n_subap;
    check_len("sh_apply wavefront", (n + 1) * (n + 1), wavefront.len())?;
    let mut slopes = vec![0.0; 2 * n * n];
    apply(wavefront, n, &wfs.active_mask, &mut slopes);
    Ok(slopes)
}

pub fn sh_transpose_apply(slopes: &[f64], wfs: &WfsConfig) -> Result<Vec<f64>> {
    let n = wfs.n_subap;
    check_len("sh_transpose_apply slopes", 2 * n * n, slopes.len())?;
    let mut wavefront = vec![0.0; (n + 1) * (n + 1)];
    apply_transpose(slopes, n, &wfs.active_mask, &mut wavefront);
    Ok(wavefront)
}
