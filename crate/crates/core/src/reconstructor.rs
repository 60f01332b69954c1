//! The reconstruction step: M and b in three fork/join stages, the fused
//! PCG, mirror fitting and the two-step-delay control law.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::config::{LoopMode, PreconditionerMode, SystemGeometry};
use crate::data::{LayerStack, MeasurementSet, MirrorShapes, WaveletCoefficients};
use crate::error::{check_len, Error, Result};
use crate::linalg::norm;
use crate::operators::{approximate_diagonal, exact_diagonal, TomoOperators};
use crate::pcg::{pcg_continue, LinearOperator, PcgCarry, PcgOptions};

/// Coefficient dimension up to which `auto` probes the exact diagonal.
pub const EXACT_PRECONDITIONER_CAP: usize = 20_000;

/// Wall time spent in each stage of the M (and b) applications.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    pub stage1: Duration,
    pub stage2: Duration,
    pub stage3: Duration,
}

impl StageTimes {
    pub fn total(&self) -> Duration {
        self.stage1 + self.stage2 + self.stage3
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepTelemetry {
    pub step: usize,
    pub rho: Vec<f64>,
    pub rhs_norm: f64,
    pub initial_residual_norm: f64,
    pub final_residual_norm: f64,
    pub stages: StageTimes,
    pub pcg: Duration,
    pub total: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// The new command a^(1).
    pub mirrors: MirrorShapes,
    pub telemetry: StepTelemetry,
}

/// Everything carried from one step to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructorState {
    pub c_prev: WaveletCoefficients,
    pub b_prev: WaveletCoefficients,
    pub r_prev: WaveletCoefficients,
    /// a^(-1), the command the current measurements were taken with.
    pub a_prev2: MirrorShapes,
    /// a^(0), the most recent command.
    pub a_prev: MirrorShapes,
    /// PCG search direction `p` and its image `M p` from the last iteration.
    pub p_prev: Vec<f64>,
    pub q_prev: Vec<f64>,
    pub rho_old: f64,
    pub alpha_cg: f64,
    pub step: usize,
}

impl ReconstructorState {
    pub fn new(ops: &TomoOperators) -> Self {
        Self {
            c_prev: WaveletCoefficients::zeros(&ops.layer_layout),
            b_prev: WaveletCoefficients::zeros(&ops.layer_layout),
            r_prev: WaveletCoefficients::zeros(&ops.layer_layout),
            a_prev2: MirrorShapes::zeros(&ops.mirror_layout),
            a_prev: MirrorShapes::zeros(&ops.mirror_layout),
            p_prev: vec![0.0; ops.coefficient_dim()],
            q_prev: vec![0.0; ops.coefficient_dim()],
            rho_old: 0.0,
            alpha_cg: 0.0,
            step: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            self.c_prev.data(),
            self.b_prev.data(),
            self.r_prev.data(),
            self.a_prev2.data(),
            self.a_prev.data(),
            &self.p_prev,
            &self.q_prev,
        ]
        .iter()
        .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Zeroes every carried buffer; the next step is a cold start.
pub fn warm_restart_reset(state: &mut ReconstructorState) {
    state.c_prev.fill(0.0);
    state.b_prev.fill(0.0);
    state.r_prev.fill(0.0);
    state.a_prev2.fill(0.0);
    state.a_prev.fill(0.0);
    state.p_prev.fill(0.0);
    state.q_prev.fill(0.0);
    state.rho_old = 0.0;
    state.alpha_cg = 0.0;
    state.step = 0;
}

struct Workspace {
    layers: Vec<f64>,
    wavefronts: Vec<f64>,
    slopes: Vec<f64>,
}

pub struct Reconstructor {
    geometry: SystemGeometry,
    ops: TomoOperators,
    precond: Vec<f64>,
    pool: rayon::ThreadPool,
    threads: usize,
    ws: Workspace,
    times: StageTimes,
}

impl Reconstructor {
    /// Builds the operators, the thread pool (`threads` defaults to
    /// `max(L, W)`) and the preconditioner.
    pub fn new(geometry: &SystemGeometry, threads: Option<usize>) -> Result<Self> {
        let ops = TomoOperators::new(geometry)?;
        let threads = threads.unwrap_or_else(|| geometry.default_threads()).max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
        let ws = Workspace {
            layers: vec![0.0; ops.layer_layout.len()],
            wavefronts: vec![0.0; ops.wavefront_layout.len()],
            slopes: vec![0.0; ops.slope_layout.len()],
        };
        let mut rec = Self {
            geometry: geometry.clone(),
            ops,
            precond: Vec::new(),
            pool,
            threads,
            ws,
            times: StageTimes::default(),
        };
        rec.precond = rec.build_preconditioner()?;
        Ok(rec)
    }

    fn build_preconditioner(&mut self) -> Result<Vec<f64>> {
        let dim = self.ops.coefficient_dim();
        let params = self.geometry.preconditioner.clone();
        let exact = match params.mode {
            PreconditionerMode::Exact => true,
            PreconditionerMode::Approximate => false,
            PreconditionerMode::Auto => dim <= EXACT_PRECONDITIONER_CAP,
        };
        let diag = if exact {
            exact_diagonal(dim, |x, y| self.apply_m(x, y))?
        } else {
            let layout = self.ops.layer_layout.clone();
            let orders: Vec<u32> = self.geometry.layers.iter().map(|l| l.grid_order).collect();
            let reg = self.ops.regularizer.clone();
            let alpha = self.geometry.regularization_alpha;
            approximate_diagonal(&layout, &orders, &reg, alpha, &params, |x, y| {
                self.apply_data_term(x, y)
            })?
        };
        log::debug!(
            "preconditioner: {} mode, dim {dim}, range [{:.3e}, {:.3e}]",
            if exact { "exact" } else { "approximate" },
            diag.iter().cloned().fold(f64::INFINITY, f64::min),
            diag.iter().cloned().fold(0.0, f64::max)
        );
        Ok(diag)
    }

    pub fn geometry(&self) -> &SystemGeometry {
        &self.geometry
    }

    pub fn ops(&self) -> &TomoOperators {
        &self.ops
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    pub fn preconditioner(&self) -> &[f64] {
        &self.precond
    }

    pub fn set_preconditioner(&mut self, diag: Vec<f64>) -> Result<()> {
        check_len("preconditioner", self.ops.coefficient_dim(), diag.len())?;
        crate::operators::preconditioner::check_positive(&diag)?;
        self.precond = diag;
        Ok(())
    }

    pub fn new_state(&self) -> ReconstructorState {
        ReconstructorState::new(&self.ops)
    }

    /// Accumulated stage times since the last call.
    pub fn take_stage_times(&mut self) -> StageTimes {
        std::mem::take(&mut self.times)
    }

    /// `y = M x`.
    pub fn apply_m(&mut self, x: &[f64], y: &mut [f64]) -> Result<()> {
        self.apply_with(x, y, self.geometry.regularization_alpha)
    }

    /// `y = W⁻ᵀ Âᵀ C_η⁻¹ Â W⁻¹ x`, i.e. M without the regularizer.
    pub fn apply_data_term(&mut self, x: &[f64], y: &mut [f64]) -> Result<()> {
        self.apply_with(x, y, 0.0)
    }

    fn apply_with(&mut self, x: &[f64], y: &mut [f64], alpha: f64) -> Result<()> {
        let dim = self.ops.coefficient_dim();
        check_len("M input", dim, x.len())?;
        check_len("M output", dim, y.len())?;
        let ops = &self.ops;
        let ws = &mut self.ws;

        // stage 1: W⁻¹ per layer
        let t0 = Instant::now();
        ws.layers.copy_from_slice(x);
        self.pool.install(|| {
            ops.layer_layout
                .split_mut(&mut ws.layers)
                .into_par_iter()
                .zip(ops.layer_sides.par_iter())
                .try_for_each(|(layer, &side)| ops.wavelet.inverse_in_place(layer, side))
        })?;

        // stage 2: Γᵀ C_η⁻¹ Γ P per WFS
        let t1 = Instant::now();
        let layers = ops.layer_layout.split(&ws.layers);
        let layers = &layers;
        self.pool.install(|| {
            ops.wavefront_layout
                .split_mut(&mut ws.wavefronts)
                .into_par_iter()
                .zip(ops.slope_layout.split_mut(&mut ws.slopes).into_par_iter())
                .enumerate()
                .for_each(|(g, (wf, slopes))| {
                    let sensor = &ops.sensors[g];
                    sensor.propagate(layers, wf);
                    sensor.slopes(wf, slopes);
                    let w = ops.noise.get(g);
                    slopes.iter_mut().for_each(|v| *v *= w);
                    sensor.slopes_transpose(slopes, wf);
                })
        });

        // stage 3: Pᵀ gather in ascending WFS order, W⁻ᵀ, + α D x
        let t2 = Instant::now();
        self.gather_layers(x, y, alpha)?;
        let t3 = Instant::now();
        self.times.stage1 += t1 - t0;
        self.times.stage2 += t2 - t1;
        self.times.stage3 += t3 - t2;
        Ok(())
    }

    /// Stage 3, shared by M and b: `y_l = W⁻ᵀ Σ_g P_gᵀ wf_g + α d_l ⊙ x_l`.
    fn gather_layers(&self, x: &[f64], y: &mut [f64], alpha: f64) -> Result<()> {
        let ops = &self.ops;
        let wavefronts = ops.wavefront_layout.split(&self.ws.wavefronts);
        let wavefronts = &wavefronts;
        let xs = ops.layer_layout.split(x);
        self.pool.install(|| {
            ops.layer_layout
                .split_mut(y)
                .into_par_iter()
                .zip(xs.into_par_iter())
                .enumerate()
                .try_for_each(|(l, (out, xl))| -> Result<()> {
                    out.fill(0.0);
                    for (sensor, wf) in ops.sensors.iter().zip(wavefronts.iter()) {
                        sensor.layer_footprints[l].scatter(wf, out);
                    }
                    ops.wavelet.inverse_transposed_in_place(out, ops.layer_sides[l])?;
                    if alpha != 0.0 {
                        let d = ops.regularizer.layout().block(ops.regularizer.diagonal(), l);
                        for ((o, &xi), &di) in out.iter_mut().zip(xl).zip(d) {
                            *o += alpha * di * xi;
                        }
                    }
                    Ok(())
                })
        })
    }

    /// `b = W⁻ᵀ Âᵀ C_η⁻¹ s`.
    pub fn build_rhs(&mut self, measurements: &MeasurementSet) -> Result<WaveletCoefficients> {
        let ops = &self.ops;
        check_len("measurements", ops.slope_layout.len(), measurements.len())?;
        let t0 = Instant::now();
        let ws = &mut self.ws;
        self.pool.install(|| {
            ops.wavefront_layout
                .split_mut(&mut ws.wavefronts)
                .into_par_iter()
                .zip(ops.slope_layout.split_mut(&mut ws.slopes).into_par_iter())
                .enumerate()
                .for_each(|(g, (wf, slopes))| {
                    let w = ops.noise.get(g);
                    for (o, &v) in slopes.iter_mut().zip(measurements.block(g)) {
                        *o = w * v;
                    }
                    ops.sensors[g].slopes_transpose(slopes, wf);
                })
        });
        let t1 = Instant::now();
        let mut b = WaveletCoefficients::zeros(&self.ops.layer_layout);
        let zeros = vec![0.0; b.len()];
        self.gather_layers(&zeros, b.data_mut(), 0.0)?;
        self.times.stage2 += t1 - t0;
        self.times.stage3 += t1.elapsed();
        Ok(b)
    }

    /// Pseudo open-loop slopes `s + Γ P_dm a`.
    pub fn pseudo_open_loop(&self, measurements: &MeasurementSet, applied: &MirrorShapes) -> Result<MeasurementSet> {
        let ops = &self.ops;
        check_len("measurements", ops.slope_layout.len(), measurements.len())?;
        check_len("mirror shapes", ops.mirror_layout.len(), applied.len())?;
        let mut out = measurements.clone();
        let mirrors = ops.mirror_layout.split(applied.data());
        let mirrors = &mirrors;
        self.pool.install(|| {
            ops.slope_layout
                .split_mut(out.data_mut())
                .into_par_iter()
                .enumerate()
                .for_each(|(g, s)| {
                    let sensor = &ops.sensors[g];
                    let mut wf = vec![0.0; sensor.wavefront_len()];
                    let mut extra = vec![0.0; sensor.slope_len()];
                    sensor.propagate_mirrors(mirrors, &mut wf);
                    sensor.slopes(&wf, &mut extra);
                    for (a, b) in s.iter_mut().zip(&extra) {
                        *a += b;
                    }
                })
        });
        Ok(out)
    }

    /// Measurement correction, right-hand side and incremental residual:
    /// returns `(b^(1), r̄)` with
    /// `r̄ = (b^(1) - b^(0)) + r^(0)`.
    pub fn prepare_step(
        &mut self,
        state: &ReconstructorState,
        measurements: &MeasurementSet,
    ) -> Result<(WaveletCoefficients, WaveletCoefficients)> {
        let s = match self.geometry.loop_mode {
            LoopMode::Closed => self.pseudo_open_loop(measurements, &state.a_prev2)?,
            LoopMode::Open => measurements.clone(),
        };
        let b = self.build_rhs(&s)?;
        let mut r = b.clone();
        for ((ri, bp), rp) in r
            .data_mut()
            .iter_mut()
            .zip(state.b_prev.data())
            .zip(state.r_prev.data())
        {
            *ri = (*ri - bp) + rp;
        }
        Ok((b, r))
    }

    /// `F W⁻¹ c`.
    pub fn fit_coefficients(&self, c: &WaveletCoefficients) -> Result<MirrorShapes> {
        let layers = self.reconstructed_layers(c)?;
        let ops = &self.ops;
        let mut out = MirrorShapes::zeros(&ops.mirror_layout);
        self.pool.install(|| {
            ops.mirror_layout
                .split_mut(out.data_mut())
                .into_par_iter()
                .enumerate()
                .for_each(|(m, a)| ops.fitting[m].accumulate(layers.block(m), a))
        });
        Ok(out)
    }

    /// `W⁻¹ c` as layer grids.
    pub fn reconstructed_layers(&self, c: &WaveletCoefficients) -> Result<LayerStack> {
        let ops = &self.ops;
        check_len("coefficients", ops.layer_layout.len(), c.len())?;
        let mut data = c.data().to_vec();
        self.pool.install(|| {
            ops.layer_layout
                .split_mut(&mut data)
                .into_par_iter()
                .zip(ops.layer_sides.par_iter())
                .try_for_each(|(layer, &side)| ops.wavelet.inverse_in_place(layer, side))
        })?;
        LayerStack::from_vec(&ops.layer_layout, data)
    }

    /// One full reconstruction step with warm restart and two-step delay.
    pub fn reconstruct_step(
        &mut self,
        state: &mut ReconstructorState,
        measurements: &MeasurementSet,
    ) -> Result<StepOutput> {
        let start = Instant::now();
        self.times = StageTimes::default();
        let (b, mut r) = self.prepare_step(state, measurements)?;
        let mut c = state.c_prev.clone();

        let t_pcg = Instant::now();
        let precond = std::mem::take(&mut self.precond);
        let mut carry = PcgCarry {
            p: std::mem::take(&mut state.p_prev),
            q: std::mem::take(&mut state.q_prev),
            rho_old: state.rho_old,
            alpha: state.alpha_cg,
        };
        // The fused step length assumes r moved only by PCG updates. A new
        // right-hand side shifts r̄, so the recurrence restarts (β = 0) from
        // the warm-started c and r̄.
        if b.data() != state.b_prev.data() {
            carry.rho_old = 0.0;
            carry.alpha = 0.0;
        }
        let solved = pcg_continue(
            self,
            &precond,
            c.data_mut(),
            r.data_mut(),
            &mut carry,
            PcgOptions::fixed(self.geometry.pcg_max_iter),
        );
        self.precond = precond;
        state.p_prev = carry.p;
        state.q_prev = carry.q;
        let outcome = solved?;
        let pcg = t_pcg.elapsed();

        let a_tilde = self.fit_coefficients(&c)?;
        let g = self.geometry.gain;
        let mut a1 = state.a_prev.clone();
        match self.geometry.loop_mode {
            LoopMode::Closed => {
                for ((a, &t), &old) in a1.data_mut().iter_mut().zip(a_tilde.data()).zip(state.a_prev2.data()) {
                    *a += g * (t - old);
                }
            }
            LoopMode::Open => {
                for (a, &t) in a1.data_mut().iter_mut().zip(a_tilde.data()) {
                    *a = (1.0 - g) * *a + g * t;
                }
            }
        }
        if a1.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mirror command"));
        }

        let telemetry = StepTelemetry {
            step: state.step,
            rho: outcome.rho,
            rhs_norm: norm(b.data()),
            initial_residual_norm: outcome.initial_residual_norm,
            final_residual_norm: outcome.residual_norm,
            stages: self.take_stage_times(),
            pcg,
            total: start.elapsed(),
        };
        state.a_prev2 = std::mem::replace(&mut state.a_prev, a1.clone());
        state.c_prev = c;
        state.b_prev = b;
        state.r_prev = r;
        state.rho_old = outcome.rho_old;
        state.alpha_cg = outcome.alpha;
        state.step += 1;
        Ok(StepOutput { mirrors: a1, telemetry })
    }
}

impl LinearOperator for Reconstructor {
    fn dim(&self) -> usize {
        self.ops.coefficient_dim()
    }

    fn apply(&mut self, x: &[f64], y: &mut [f64]) -> Result<()> {
        self.apply_m(x, y)
    }
}
