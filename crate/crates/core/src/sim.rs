//! Synthetic turbulence, measurement synthesis, quality metrics and the
//! closed-loop driver.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::config::SystemGeometry;
use crate::data::{LayerStack, MeasurementSet, MirrorShapes};
use crate::error::{check_len, Error, Result};
use crate::grid::{ApertureGrid, Footprint};
use crate::operators::{dm_plane, layer_plane, TomoOperators};
use crate::reconstructor::{Reconstructor, StepTelemetry};

/// Fourier-domain description of one layer's screen on a periodic grid
/// larger than the layer.
#[derive(Debug, Clone)]
struct Screen {
    n: usize,
    spacing: f64,
    side: usize,
    spectrum: Vec<Complex64>,
    wind: [f64; 2],
}

impl Screen {
    fn frequency(&self, k: usize) -> f64 {
        let k = if k <= self.n / 2 {
            k as f64
        } else {
            k as f64 - self.n as f64
        };
        k / (self.n as f64 * self.spacing)
    }

    /// Layer window at time `t`, frozen flow applied as a phase ramp.
    fn sample(&self, t: f64, planner: &mut FftPlanner<f64>) -> Vec<f64> {
        let n = self.n;
        let mut buf = self.spectrum.clone();
        if t != 0.0 && self.wind != [0.0, 0.0] {
            for r in 0..n {
                let fy = self.frequency(r);
                for c in 0..n {
                    let fx = self.frequency(c);
                    let phase = -2.0 * PI * (fx * self.wind[0] + fy * self.wind[1]) * t;
                    buf[r * n + c] *= Complex64::from_polar(1.0, phase);
                }
            }
        }
        ifft2(&mut buf, n, planner);
        let mut out: Vec<f64> = (0..self.side * self.side)
            .map(|k| buf[(k / self.side) * n + k % self.side].re)
            .collect();
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        out.iter_mut().for_each(|v| *v -= mean);
        out
    }
}

fn ifft2(buf: &mut [Complex64], n: usize, planner: &mut FftPlanner<f64>) {
    let fft = planner.plan_fft_inverse(n);
    for row in buf.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for c in 0..n {
        for r in 0..n {
            col[r] = buf[r * n + c];
        }
        fft.process(&mut col);
        for r in 0..n {
            buf[r * n + c] = col[r];
        }
    }
}

/// Ground-truth turbulence.
#[derive(Debug, Clone)]
pub struct AtmosphereTruth {
    pub layers: LayerStack,
    pub seed: u64,
    pub outer_scale: f64,
    frame_time: f64,
    screens: Vec<Screen>,
}

impl AtmosphereTruth {
    /// Layers after `step` frames of frozen flow (the initial layers if
    /// there is no wind).
    pub fn at_step(&self, step: usize) -> LayerStack {
        if self.screens.iter().all(|s| s.wind == [0.0, 0.0]) || step == 0 {
            return self.layers.clone();
        }
        let mut planner = FftPlanner::new();
        let t = step as f64 * self.frame_time;
        let data = self.screens.iter().flat_map(|s| s.sample(t, &mut planner)).collect();
        LayerStack::from_vec(self.layers.layout(), data).expect("screen sizes match layout")
    }
}

/// Von Kármán phase power spectrum (rad² m²) at spatial frequency `f` (1/m).
pub fn von_karman_psd(f: f64, r0: f64, outer_scale: f64) -> f64 {
    let f0 = if outer_scale.is_finite() {
        1.0 / outer_scale
    } else {
        0.0
    };
    0.023 * r0.powf(-5.0 / 3.0) * (f * f + f0 * f0).powf(-11.0 / 6.0)
}

/// Periodic grid size for a layer of `side` points: at least four times the
/// layer and, when the outer scale is finite, at least twice the outer scale.
fn screen_size(side: usize, spacing: f64, outer_scale: f64) -> usize {
    let mut n = 4 * side;
    if outer_scale.is_finite() {
        n = n.max((2.0 * outer_scale / spacing).ceil() as usize);
    }
    n.min(MAX_SCREEN).next_power_of_two()
}

const MAX_SCREEN: usize = 1024;

/// Random layers with von Kármán statistics, each layer carrying its
/// fraction of the turbulence strength. Deterministic per `seed`.
pub fn generate_atmosphere(geometry: &SystemGeometry, seed: u64) -> Result<AtmosphereTruth> {
    let atm = &geometry.atmosphere;
    if !atm.wind.is_empty() && atm.wind.len() != geometry.n_layers() {
        return Err(Error::Validation(format!(
            "wind has {} entries for {} layers",
            atm.wind.len(),
            geometry.n_layers()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planner = FftPlanner::new();
    let mut screens = Vec::with_capacity(geometry.n_layers());
    for (l, layer) in geometry.layers.iter().enumerate() {
        let side = layer.side();
        let spacing = layer.extent / (side - 1) as f64;
        let n = screen_size(side, spacing, atm.outer_scale);
        let df = 1.0 / (n as f64 * spacing);
        let mut screen = Screen {
            n,
            spacing,
            side,
            spectrum: Vec::with_capacity(n * n),
            wind: atm.wind.get(l).copied().unwrap_or([0.0, 0.0]),
        };
        for r in 0..n {
            let fy = screen.frequency(r);
            for c in 0..n {
                let fx = screen.frequency(c);
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                let f = (fx * fx + fy * fy).sqrt();
                let amp = if r == 0 && c == 0 {
                    0.0
                } else {
                    (layer.relative_strength * von_karman_psd(f, atm.r0, atm.outer_scale)).sqrt() * df
                };
                screen.spectrum.push(Complex64::new(re, im) * amp);
            }
        }
        screens.push(screen);
    }
    let layout = crate::grid::BlockLayout::square(geometry.layers.iter().map(|l| l.side()));
    let data = screens.iter().flat_map(|s| s.sample(0.0, &mut planner)).collect();
    Ok(AtmosphereTruth {
        layers: LayerStack::from_vec(&layout, data)?,
        seed,
        outer_scale: atm.outer_scale,
        frame_time: atm.frame_time,
        screens,
    })
}

/// `Γ P φ − Γ P_dm a` plus optional Gaussian noise of variance σ_g² on
/// every active slope.
pub fn synthesize_measurements(
    ops: &TomoOperators,
    geometry: &SystemGeometry,
    layers: &LayerStack,
    correction: Option<&MirrorShapes>,
    noise_seed: Option<u64>,
) -> Result<MeasurementSet> {
    let mut s = ops.forward(layers)?;
    if let Some(a) = correction {
        let m = ops.mirror_slopes(a)?;
        for (x, y) in s.data_mut().iter_mut().zip(m.data()) {
            *x -= y;
        }
    }
    if let Some(seed) = noise_seed {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (g, wfs) in geometry.wfs_list.iter().enumerate() {
            let normal =
                Normal::new(0.0, wfs.noise_variance.sqrt()).map_err(|e| Error::Validation(format!("noise: {e}")))?;
            let nn = wfs.n_subap * wfs.n_subap;
            let block = s.block_mut(g);
            for k in 0..nn {
                if wfs.active_mask[k] {
                    block[k] += normal.sample(&mut rng);
                    block[nn + k] += normal.sample(&mut rng);
                }
            }
        }
    }
    Ok(s)
}

/// Probe directions on a square grid spanning `±half_width` on each axis.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationGrid {
    pub directions: Vec<[f64; 2]>,
}

impl EvaluationGrid {
    pub fn square(n_per_side: usize, half_width: f64) -> Self {
        let coord = |k: usize| {
            if n_per_side == 1 {
                0.0
            } else {
                -half_width + 2.0 * half_width * k as f64 / (n_per_side - 1) as f64
            }
        };
        let mut directions = Vec::with_capacity(n_per_side * n_per_side);
        for i in 0..n_per_side {
            for j in 0..n_per_side {
                directions.push([coord(j), coord(i)]);
            }
        }
        Self { directions }
    }

    pub fn from_geometry(geometry: &SystemGeometry) -> Self {
        Self::square(geometry.evaluation.n_per_side, geometry.evaluation.half_width)
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityRecord {
    pub step: usize,
    /// Piston-removed residual RMS per probe direction (rad).
    pub direction_rms: Vec<f64>,
    /// Mean of `direction_rms`.
    pub field_rms: f64,
    /// `‖φ_rec − φ_true‖ / ‖φ_true‖`.
    pub layer_rel_error: f64,
    /// PCG ρ per iteration of the step that produced this record.
    pub rho: Vec<f64>,
}

/// Precomputed footprints for evaluating residual wavefronts in the probe
/// directions over the pupil.
#[derive(Debug, Clone)]
pub struct Evaluator {
    pub grid: EvaluationGrid,
    aperture: ApertureGrid,
    pupil: Vec<bool>,
    layer_fps: Vec<Vec<Footprint>>,
    dm_fps: Vec<Vec<Footprint>>,
}

impl Evaluator {
    pub fn new(geometry: &SystemGeometry, grid: EvaluationGrid) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::Validation("evaluation grid is empty".into()));
        }
        let n = geometry.wfs_list.iter().map(|w| w.n_subap).max().unwrap_or(1);
        let d = geometry.telescope_diameter;
        let aperture = ApertureGrid::shack_hartmann(d, n);
        let (outer, inner) = (0.5 * d, 0.5 * geometry.inner_diameter());
        let mut pupil = Vec::with_capacity(aperture.len());
        for i in 0..aperture.nodes {
            for j in 0..aperture.nodes {
                let r = aperture.coord(i).hypot(aperture.coord(j));
                pupil.push(r <= outer * (1.0 + 1e-12) && r >= inner);
            }
        }
        if !pupil.iter().any(|&p| p) {
            pupil.fill(true);
        }
        let mut layer_fps = Vec::with_capacity(grid.len());
        let mut dm_fps = Vec::with_capacity(grid.len());
        for dir in &grid.directions {
            let star = crate::config::GuideStar::ngs(*dir);
            layer_fps.push(
                (0..geometry.n_layers())
                    .map(|l| Footprint::for_star(&aperture, &layer_plane(geometry, l), &star))
                    .collect::<Result<Vec<_>>>()?,
            );
            dm_fps.push(
                (0..geometry.dms.len())
                    .map(|m| Footprint::for_star(&aperture, &dm_plane(geometry, m), &star))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(Self {
            grid,
            aperture,
            pupil,
            layer_fps,
            dm_fps,
        })
    }

    /// Piston-removed RMS of `P φ − P_dm a` in every probe direction.
    pub fn residual_rms(&self, layers: &LayerStack, correction: &MirrorShapes) -> Vec<f64> {
        let mut wf = vec![0.0; self.aperture.len()];
        let mut dm = vec![0.0; self.aperture.len()];
        (0..self.grid.len())
            .map(|k| {
                wf.fill(0.0);
                dm.fill(0.0);
                for (l, fp) in self.layer_fps[k].iter().enumerate() {
                    fp.accumulate(layers.block(l), &mut wf);
                }
                for (m, fp) in self.dm_fps[k].iter().enumerate() {
                    fp.accumulate(correction.block(m), &mut dm);
                }
                let vals: Vec<f64> = (0..wf.len())
                    .filter(|&i| self.pupil[i])
                    .map(|i| wf[i] - dm[i])
                    .collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64).sqrt()
            })
            .collect()
    }
}

/// Quality of `correction` against `truth`, plus the layer error of an
/// optional reconstruction (zero layers if absent).
pub fn evaluate_quality(
    evaluator: &Evaluator,
    truth: &LayerStack,
    correction: &MirrorShapes,
    reconstruction: Option<&LayerStack>,
) -> Result<QualityRecord> {
    if let Some(rec) = reconstruction {
        check_len("reconstructed layers", truth.len(), rec.len())?;
    }
    let direction_rms = evaluator.residual_rms(truth, correction);
    let field_rms = direction_rms.iter().sum::<f64>() / direction_rms.len() as f64;
    let zeros;
    let rec = match reconstruction {
        Some(r) => r.data(),
        None => {
            zeros = vec![0.0; truth.len()];
            &zeros
        }
    };
    Ok(QualityRecord {
        step: 0,
        direction_rms,
        field_rms,
        layer_rel_error: crate::linalg::rel_diff(rec, truth.data()),
        rho: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimSeeds {
    pub atmosphere: u64,
    pub noise: u64,
}

impl SimSeeds {
    pub fn from_base(seed: u64) -> Self {
        Self {
            atmosphere: seed,
            noise: seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClosedLoopRun {
    pub records: Vec<QualityRecord>,
    pub telemetry: Vec<StepTelemetry>,
    /// Field RMS with no correction at step 0.
    pub uncorrected_rms: f64,
}

impl ClosedLoopRun {
    pub fn final_rms(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.field_rms)
    }

    pub fn improvement(&self) -> f64 {
        self.uncorrected_rms / self.final_rms()
    }
}

/// Runs `n_steps` of the loop. Record `k` scores the mirror shape the
/// step-`k` measurements were taken with, so the first two records are
/// uncorrected.
pub fn run_closed_loop(
    geometry: &SystemGeometry,
    n_steps: usize,
    seeds: SimSeeds,
    threads: Option<usize>,
) -> Result<ClosedLoopRun> {
    if n_steps == 0 {
        return Err(Error::Validation("n_steps must be >= 1".into()));
    }
    let truth = generate_atmosphere(geometry, seeds.atmosphere)?;
    let evaluator = Evaluator::new(geometry, EvaluationGrid::from_geometry(geometry))?;
    let mut rec = Reconstructor::new(geometry, threads)?;
    let ops = rec.ops().clone();
    let mut state = rec.new_state();
    let zero = MirrorShapes::zeros(&ops.mirror_layout);
    let uncorrected_rms = evaluate_quality(&evaluator, &truth.layers, &zero, None)?.field_rms;
    let mut records = Vec::with_capacity(n_steps);
    let mut telemetry = Vec::with_capacity(n_steps);
    for k in 0..n_steps {
        let layers = truth.at_step(k);
        let applied = state.a_prev2.clone();
        let noise = geometry.measurement_noise.then(|| seeds.noise.wrapping_add(k as u64));
        let s = synthesize_measurements(&ops, geometry, &layers, Some(&applied), noise)?;
        let out = rec.reconstruct_step(&mut state, &s)?;
        let reconstructed = rec.reconstructed_layers(&state.c_prev)?;
        let mut q = evaluate_quality(&evaluator, &layers, &applied, Some(&reconstructed))?;
        q.step = k;
        q.rho = out.telemetry.rho.clone();
        log::debug!(
            "step {k}: field rms {:.4e}, layer error {:.3e}",
            q.field_rms,
            q.layer_rel_error
        );
        records.push(q);
        telemetry.push(out.telemetry);
    }
    Ok(ClosedLoopRun {
        records,
        telemetry,
        uncorrected_rms,
    })
}

/// Quality series as CSV: `step,dir_00..,field_rms,layer_rel_error,rho`
/// with the ρ values joined by `;`.
pub fn quality_csv(records: &[QualityRecord]) -> String {
    let n_dirs = records.first().map_or(0, |r| r.direction_rms.len());
    let mut out = String::from("step");
    for k in 0..n_dirs {
        let _ = write!(out, ",dir_{k:02}");
    }
    out.push_str(",field_rms,layer_rel_error,rho\n");
    for r in records {
        let _ = write!(out, "{}", r.step);
        for v in &r.direction_rms {
            let _ = write!(out, ",{v:e}");
        }
        let rho: Vec<String> = r.rho.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(out, ",{:e},{:e},{}", r.field_rms, r.layer_rel_error, rho.join(";"));
    }
    out
}
