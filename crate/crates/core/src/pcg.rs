//! Fused preconditioned conjugate gradient.
//!
//! One operator application and two inner products per iteration; the
//! search direction `p` and its image `q = M p` are updated together, so
//! `(p, q)` never has to be formed explicitly.

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm};

pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&mut self, x: &[f64], y: &mut [f64]) -> Result<()>;
}

/// Wraps a closure as a [`LinearOperator`].
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F: FnMut(&[f64], &mut [f64]) -> Result<()>> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: FnMut(&[f64], &mut [f64]) -> Result<()>> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&mut self, x: &[f64], y: &mut [f64]) -> Result<()> {
        (self.f)(x, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcgOptions {
    pub max_iter: usize,
    /// Stop once `‖r‖ <= tolerance`. `None` runs exactly `max_iter` iterations.
    pub tolerance: Option<f64>,
}

impl PcgOptions {
    pub fn fixed(max_iter: usize) -> Self {
        Self {
            max_iter,
            tolerance: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PcgOutcome {
    pub iterations: usize,
    /// `ρ = (r, J⁻¹ r)` at the start of each iteration.
    pub rho: Vec<f64>,
    /// Scalars of the last iteration.
    pub rho_old: f64,
    pub alpha: f64,
    pub initial_residual_norm: f64,
    pub residual_norm: f64,
}

/// Recurrence state carried between calls: the search direction `p`, its
/// image `q = M p` and the last `ρ` and step length. An empty carry starts
/// the classical way (`β = 0`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PcgCarry {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub rho_old: f64,
    pub alpha: f64,
}

impl PcgCarry {
    pub fn zeros(n: usize) -> Self {
        Self {
            p: vec![0.0; n],
            q: vec![0.0; n],
            rho_old: 0.0,
            alpha: 0.0,
        }
    }

    /// True when there is no previous iteration to continue from.
    pub fn is_cold(&self) -> bool {
        self.rho_old == 0.0 || self.alpha == 0.0
    }

    pub fn reset(&mut self) {
        self.p.fill(0.0);
        self.q.fill(0.0);
        self.rho_old = 0.0;
        self.alpha = 0.0;
    }
}

/// Runs the fused PCG on `M c = b`, given `r = b - M c` for the incoming `c`.
/// Updates `c` and `r` in place, starting cold.
pub fn pcg_solve<A: LinearOperator + ?Sized>(
    op: &mut A,
    precond: &[f64],
    c: &mut [f64],
    r: &mut [f64],
    options: PcgOptions,
) -> Result<PcgOutcome> {
    let mut carry = PcgCarry::zeros(op.dim());
    pcg_continue(op, precond, c, r, &mut carry, options)
}

/// Like [`pcg_solve`], but resumes the recurrence from `carry` and leaves
/// the final recurrence state in it.
pub fn pcg_continue<A: LinearOperator + ?Sized>(
    op: &mut A,
    precond: &[f64],
    c: &mut [f64],
    r: &mut [f64],
    carry: &mut PcgCarry,
    options: PcgOptions,
) -> Result<PcgOutcome> {
    let n = op.dim();
    if carry.p.is_empty() && carry.q.is_empty() {
        *carry = PcgCarry::zeros(n);
    }
    for (context, len) in [
        ("pcg preconditioner", precond.len()),
        ("pcg c", c.len()),
        ("pcg r", r.len()),
        ("pcg carried p", carry.p.len()),
        ("pcg carried q", carry.q.len()),
    ] {
        crate::error::check_len(context, n, len)?;
    }
    let mut z = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut out = PcgOutcome {
        initial_residual_norm: norm(r),
        ..Default::default()
    };
    out.residual_norm = out.initial_residual_norm;
    let PcgCarry { p, q, rho_old, alpha } = carry;
    for k in 0..options.max_iter {
        if let Some(tol) = options.tolerance {
            if out.residual_norm <= tol {
                break;
            }
        }
        for ((zi, ri), ji) in z.iter_mut().zip(r.iter()).zip(precond) {
            *zi = ri / ji;
        }
        op.apply(&z, &mut s)?;
        let rho = dot(r, &z);
        let mu = dot(&s, &z);
        if !rho.is_finite() || !mu.is_finite() {
            return Err(Error::NonFinite("pcg inner product"));
        }
        out.rho.push(rho);
        if rho == 0.0 {
            // exact solution reached
            break;
        }
        let (beta, a) = if *rho_old == 0.0 || *alpha == 0.0 {
            (0.0, rho / mu)
        } else {
            let beta = rho / *rho_old;
            (beta, rho / (mu - rho * beta / *alpha))
        };
        if !a.is_finite() || !beta.is_finite() {
            return Err(Error::NonFinite("pcg step length"));
        }
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
            q[i] = s[i] + beta * q[i];
        }
        axpy(a, p, c);
        axpy(-a, q, r);
        *rho_old = rho;
        *alpha = a;
        out.iterations = k + 1;
        out.residual_norm = norm(r);
    }
    out.rho_old = *rho_old;
    out.alpha = *alpha;
    log::trace!("pcg: {} iterations, rho {:?}", out.iterations, out.rho);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_system_converges_in_one_step() {
        let b: Vec<f64> = (0..10).map(|i| i as f64 - 3.5).collect();
        let mut op = FnOperator::new(10, |x: &[f64], y: &mut [f64]| {
            y.copy_from_slice(x);
            Ok(())
        });
        let mut c = vec![0.0; 10];
        let mut r = b.clone();
        let out = pcg_solve(&mut op, &[1.0; 10], &mut c, &mut r, PcgOptions::fixed(1)).unwrap();
        assert_eq!(c, b);
        assert!(r.iter().all(|&v| v == 0.0));
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn diagonal_system_matches_direct_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d: Vec<f64> = (0..16).map(|_| rng.gen_range(0.5..20.0)).collect();
        let b: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dd = d.clone();
        let mut op = FnOperator::new(16, move |x: &[f64], y: &mut [f64]| {
            for i in 0..16 {
                y[i] = dd[i] * x[i];
            }
            Ok(())
        });
        let mut c = vec![0.0; 16];
        let mut r = b.clone();
        pcg_solve(&mut op, &[1.0; 16], &mut c, &mut r, PcgOptions::fixed(16)).unwrap();
        for i in 0..16 {
            let x = b[i] / d[i];
            assert!((c[i] - x).abs() <= 1e-10 * x.abs().max(1.0));
        }
    }

    #[test]
    fn fused_step_matches_textbook_pcg() {
        // dense SPD matrix, compare iterates with the unfused recurrence
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 12;
        let b_mat: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                a[i][j] = (0..n).map(|k| b_mat[k][i] * b_mat[k][j]).sum::<f64>() + if i == j { 0.5 } else { 0.0 };
            }
        }
        let mv = |x: &[f64]| -> Vec<f64> { (0..n).map(|i| dot(&a[i], x)).collect() };
        let jac: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut x_ref = vec![0.0; n];
        let mut r_ref = rhs.clone();
        let mut z: Vec<f64> = r_ref.iter().zip(&jac).map(|(r, j)| r / j).collect();
        let mut p = z.clone();
        let mut rz = dot(&r_ref, &z);
        for _ in 0..6 {
            let ap = mv(&p);
            let step = rz / dot(&p, &ap);
            axpy(step, &p, &mut x_ref);
            axpy(-step, &ap, &mut r_ref);
            z = r_ref.iter().zip(&jac).map(|(r, j)| r / j).collect();
            let rz_new = dot(&r_ref, &z);
            for i in 0..n {
                p[i] = z[i] + rz_new / rz * p[i];
            }
            rz = rz_new;
        }

        let mut op = FnOperator::new(n, |x: &[f64], y: &mut [f64]| {
            y.copy_from_slice(&mv(x));
            Ok(())
        });
        let mut c = vec![0.0; n];
        let mut r = rhs.clone();
        pcg_solve(&mut op, &jac, &mut c, &mut r, PcgOptions::fixed(6)).unwrap();
        for i in 0..n {
            assert!((c[i] - x_ref[i]).abs() < 1e-10);
            assert!((r[i] - r_ref[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn indefinite_system_reports_non_finite() {
        let mut op = FnOperator::new(2, |_x: &[f64], y: &mut [f64]| {
            y.fill(0.0);
            Ok(())
        });
        let mut c = vec![0.0; 2];
        let mut r = vec![1.0, 1.0];
        let err = pcg_solve(&mut op, &[1.0, 1.0], &mut c, &mut r, PcgOptions::fixed(2)).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn tolerance_exit_stops_early() {
        let mut op = FnOperator::new(3, |x: &[f64], y: &mut [f64]| {
            y.copy_from_slice(x);
            Ok(())
        });
        let mut c = vec![0.0; 3];
        let mut r = vec![1.0, 2.0, 3.0];
        let opts = PcgOptions {
            max_iter: 10,
            tolerance: Some(1e-12),
        };
        let out = pcg_solve(&mut op, &[1.0; 3], &mut c, &mut r, opts).unwrap();
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn continued_runs_match_one_long_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 20;
        let b_mat: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let a: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..n).map(|k| b_mat[k][i] * b_mat[k][j]).sum::<f64>() + if i == j { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let jac: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        let mut op = FnOperator::new(n, |x: &[f64], y: &mut [f64]| {
            for i in 0..n {
                y[i] = dot(&a[i], x);
            }
            Ok(())
        });
        let (mut c1, mut r1) = (vec![0.0; n], rhs.clone());
        pcg_solve(&mut op, &jac, &mut c1, &mut r1, PcgOptions::fixed(12)).unwrap();
        let (mut c2, mut r2) = (vec![0.0; n], rhs.clone());
        let mut carry = PcgCarry::default();
        for _ in 0..3 {
            pcg_continue(&mut op, &jac, &mut c2, &mut r2, &mut carry, PcgOptions::fixed(4)).unwrap();
        }
        for i in 0..n {
            assert!((c1[i] - c2[i]).abs() < 1e-12);
            assert!((r1[i] - r2[i]).abs() < 1e-12);
        }
        carry.reset();
        assert!(carry.is_cold());
    }
}
