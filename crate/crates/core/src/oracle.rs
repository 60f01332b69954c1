//! Dense reference matrices assembled directly from the operator
//! definitions (stencil entries, hat functions, 1D filter matrices), with no
//! code shared with the matrix-free kernels. Only for small systems.

use nalgebra::{DMatrix, DVector};

use crate::config::{StarKind, SystemGeometry};
use crate::error::{Error, Result};
use crate::wavelet::DAUBECHIES;

/// Largest coefficient dimension for which dense assembly is attempted.
pub const DEFAULT_ORACLE_CAP: usize = 20_000;

#[derive(Debug, Clone)]
pub struct DenseOracle {
    /// Γ: slopes x aperture nodes, block-diagonal over WFS.
    pub gamma: DMatrix<f64>,
    /// P: aperture nodes x layer nodes.
    pub prop: DMatrix<f64>,
    /// W, block-diagonal over layers.
    pub w_forward: DMatrix<f64>,
    /// W⁻¹, block-diagonal over layers.
    pub w_inverse: DMatrix<f64>,
    /// diag(C_η⁻¹) over all slopes.
    pub noise: DVector<f64>,
    /// diag(α D).
    pub reg: DVector<f64>,
    /// M = W⁻ᵀ Pᵀ Γᵀ C_η⁻¹ Γ P W⁻¹ + α D.
    pub m: DMatrix<f64>,
}

pub fn matvec(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (a * DVector::from_column_slice(x)).as_slice().to_vec()
}

pub fn matvec_t(a: &DMatrix<f64>, x: &[f64]) -> Vec<f64> {
    (a.transpose() * DVector::from_column_slice(x)).as_slice().to_vec()
}

impl DenseOracle {
    pub fn assemble(geometry: &SystemGeometry, cap: usize) -> Result<Self> {
        let dim = geometry.coefficient_dim();
        if dim > cap {
            return Err(Error::OracleTooLarge { dim, cap });
        }
        let gamma = dense_gamma(geometry);
        let prop = dense_propagation(geometry);
        let (w_forward, w_inverse) = dense_wavelets(geometry)?;
        let noise = DVector::from_iterator(
            gamma.nrows(),
            geometry
                .wfs_list
                .iter()
                .flat_map(|w| std::iter::repeat_n(1.0 / w.noise_variance, 2 * w.n_subap * w.n_subap)),
        );
        let reg = dense_regularizer(geometry);
        let a = &gamma * &prop * &w_inverse;
        let mut weighted = a.clone();
        for (mut row, w) in weighted.row_iter_mut().zip(noise.iter()) {
            row *= *w;
        }
        let mut m = a.transpose() * weighted;
        for i in 0..dim {
            m[(i, i)] += reg[i];
        }
        Ok(Self {
            gamma,
            prop,
            w_forward,
            w_inverse,
            noise,
            reg,
            m,
        })
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn apply_m(&self, x: &[f64]) -> Vec<f64> {
        matvec(&self.m, x)
    }

    /// b = W⁻ᵀ Pᵀ Γᵀ C_η⁻¹ s.
    pub fn rhs(&self, slopes: &[f64]) -> Vec<f64> {
        let weighted: Vec<f64> = slopes.iter().zip(self.noise.iter()).map(|(s, w)| s * w).collect();
        let nodes = matvec_t(&self.gamma, &weighted);
        let layers = matvec_t(&self.prop, &nodes);
        matvec_t(&self.w_inverse, &layers)
    }

    /// Direct solve of `M c = b` by Cholesky factorization.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let chol = self
            .m
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Validation("dense M is not positive definite".into()))?;
        Ok(chol.solve(&DVector::from_column_slice(b)).as_slice().to_vec())
    }
}

/// Γ from the subaperture stencil, one row per slope.
pub fn dense_gamma(geometry: &SystemGeometry) -> DMatrix<f64> {
    let rows: usize = geometry.wfs_list.iter().map(|w| 2 * w.n_subap * w.n_subap).sum();
    let cols: usize = geometry
        .wfs_list
        .iter()
        .map(|w| (w.n_subap + 1) * (w.n_subap + 1))
        .sum();
    let mut g = DMatrix::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for w in &geometry.wfs_list {
        let n = w.n_subap;
        let node = |i: usize, j: usize| c0 + i * (n + 1) + j;
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                if !w.active_mask[k] {
                    continue;
                }
                let x = r0 + k;
                let y = r0 + n * n + k;
                g[(x, node(i, j + 1))] += 0.5;
                g[(x, node(i, j))] -= 0.5;
                g[(x, node(i + 1, j + 1))] += 0.5;
                g[(x, node(i + 1, j))] -= 0.5;
                g[(y, node(i + 1, j))] += 0.5;
                g[(y, node(i, j))] -= 0.5;
                g[(y, node(i + 1, j + 1))] += 0.5;
                g[(y, node(i, j + 1))] -= 0.5;
            }
        }
        r0 += 2 * n * n;
        c0 += (n + 1) * (n + 1);
    }
    g
}

fn hat(t: f64) -> f64 {
    (1.0 - t.abs()).max(0.0)
}

/// P from the bilinear hat functions of every layer node, evaluated at the
/// ray intersection of every aperture node.
pub fn dense_propagation(geometry: &SystemGeometry) -> DMatrix<f64> {
    let rows: usize = geometry
        .wfs_list
        .iter()
        .map(|w| (w.n_subap + 1) * (w.n_subap + 1))
        .sum();
    let cols: usize = geometry.layers.iter().map(|l| l.side() * l.side()).sum();
    let mut p = DMatrix::zeros(rows, cols);
    let d = geometry.telescope_diameter;
    let mut r0 = 0;
    for (w, star) in geometry.wfs_list.iter().zip(&geometry.guide_stars) {
        let n = w.n_subap;
        let mut c0 = 0;
        for layer in &geometry.layers {
            let h = layer.height;
            let scale = match star.kind {
                StarKind::Lgs => 1.0 - h / star.height,
                StarKind::Ngs => 1.0,
            };
            let side = layer.side();
            let step = layer.extent / (side - 1) as f64;
            for i in 0..=n {
                for j in 0..=n {
                    let x = scale * (-d / 2.0 + j as f64 * d / n as f64) + star.direction[0] * h;
                    let y = scale * (-d / 2.0 + i as f64 * d / n as f64) + star.direction[1] * h;
                    let u = (x + layer.extent / 2.0) / step;
                    let v = (y + layer.extent / 2.0) / step;
                    let row = r0 + i * (n + 1) + j;
                    for r in 0..side {
                        let wy = hat(v - r as f64);
                        if wy == 0.0 {
                            continue;
                        }
                        for c in 0..side {
                            let wx = hat(u - c as f64);
                            if wx != 0.0 {
                                p[(row, c0 + r * side + c)] += wy * wx;
                            }
                        }
                    }
                }
            }
            c0 += side * side;
        }
        r0 += (n + 1) * (n + 1);
    }
    p
}

/// One periodic analysis level on `m` samples: low-pass rows then high-pass rows.
pub fn analysis_matrix(lo: &[f64], m: usize) -> DMatrix<f64> {
    let len = lo.len();
    let mut a = DMatrix::zeros(m, m);
    for k in 0..m / 2 {
        for (n, &h) in lo.iter().enumerate() {
            let g = if n % 2 == 0 { 1.0 } else { -1.0 } * lo[len - 1 - n];
            a[(k, (2 * k + n) % m)] += h;
            a[(m / 2 + k, (2 * k + n) % m)] += g;
        }
    }
    a
}

fn forward_2d(lo: &[f64], x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    let mut s = x.nrows();
    while s >= 2 {
        let a = analysis_matrix(lo, s);
        let block = &a * c.view((0, 0), (s, s)) * a.transpose();
        c.view_mut((0, 0), (s, s)).copy_from(&block);
        s /= 2;
    }
    c
}

fn inverse_2d(lo: &[f64], x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    let n = x.nrows();
    let mut s = 2;
    while s <= n {
        let a = analysis_matrix(lo, s);
        let block = a.transpose() * c.view((0, 0), (s, s)) * &a;
        c.view_mut((0, 0), (s, s)).copy_from(&block);
        s *= 2;
    }
    c
}

/// Dense 2D transform matrices for one `side x side` grid, acting on
/// row-major flattened vectors: `(W, W⁻¹)`.
pub fn dense_wavelet_layer(order: usize, side: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !side.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(side));
    }
    let lo = DAUBECHIES
        .get(order.wrapping_sub(1))
        .ok_or_else(|| Error::Validation(format!("wavelet order {order} out of range 1..=10")))?;
    let n = side * side;
    let mut fwd = DMatrix::zeros(n, n);
    let mut inv = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut e = DMatrix::zeros(side, side);
        e[(k / side, k % side)] = 1.0;
        let f = forward_2d(lo, &e);
        let i = inverse_2d(lo, &e);
        for r in 0..side {
            for c in 0..side {
                fwd[(r * side + c, k)] = f[(r, c)];
                inv[(r * side + c, k)] = i[(r, c)];
            }
        }
    }
    Ok((fwd, inv))
}

fn dense_wavelets(geometry: &SystemGeometry) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let dim = geometry.coefficient_dim();
    let mut fwd = DMatrix::zeros(dim, dim);
    let mut inv = DMatrix::zeros(dim, dim);
    let mut o = 0;
    for layer in &geometry.layers {
        let (f, i) = dense_wavelet_layer(geometry.wavelet_order, layer.side())?;
        let n = f.nrows();
        fwd.view_mut((o, o), (n, n)).copy_from(&f);
        inv.view_mut((o, o), (n, n)).copy_from(&i);
        o += n;
    }
    Ok((fwd, inv))
}

/// diag(α D), with the scale of coefficient `(r, c)` read off its position.
pub fn dense_regularizer(geometry: &SystemGeometry) -> DVector<f64> {
    let params = &geometry.regularizer;
    let k_out = if params.outer_scale.is_finite() {
        2.0 * std::f64::consts::PI / params.outer_scale
    } else {
        0.0
    };
    let mut out = Vec::with_capacity(geometry.coefficient_dim());
    for layer in &geometry.layers {
        let side = layer.side();
        for r in 0..side {
            for c in 0..side {
                let m = r.max(c);
                let scale = if m == 0 { 0 } else { m.ilog2() + 1 };
                let kappa = 2f64.powi(scale as i32) * 2.0 * std::f64::consts::PI / layer.extent;
                let d = (kappa * kappa + k_out * k_out).powf(params.exponent) / layer.relative_strength;
                out.push(geometry.regularization_alpha * d);
            }
        }
    }
    DVector::from_vec(out)
}
