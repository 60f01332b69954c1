//! System geometry: telescope, wavefront sensors, guide stars, turbulence
//! layers, deformable mirrors and solver parameters.
//!
//! A [`SystemGeometry`] is built from the JSON configuration schema in
//! [`ConfigFile`], validated once, and treated as immutable afterwards. All
//! derived quantities (active-subaperture masks, layer extents, mirror
//! extents) are computed during construction.
//!
//! ```json
//! {
//!   "telescope":   { "diameter": 39.0, "central_obstruction": 0.28 },
//!   "wfs":         [ { "n_subap": 80, "noise_variance": 0.04 } ],
//!   "guide_stars": [ { "kind": "lgs", "direction": [2.9e-4, 0.0], "height": 90000.0 } ],
//!   "layers":      [ { "height": 0.0, "grid_order": 7, "relative_strength": 1.0 } ],
//!   "dms":         [ { "n_act": 81, "conjugation_height": 0.0 } ],
//!   "solver":      { "pcg_max_iter": 4, "regularization_alpha": 1.0 },
//!   "loop":        { "mode": "closed", "gain": 0.4 }
//! }
//! ```
//!
//! Directions are in radians, heights and lengths in meters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const STRENGTH_SUM_TOL: f64 = 1e-12;
const HEIGHT_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LoopMode {
    #[default]
    Closed,
    Open,
}

/// How `central_obstruction_fraction` maps to the inner pupil diameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ObstructionSemantics {
    /// Fraction of the pupil area: inner diameter = sqrt(f) * D.
    #[default]
    Area,
    /// Fraction of the diameter: inner diameter = f * D.
    Diameter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StarKind {
    Ngs,
    Lgs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuideStar {
    pub kind: StarKind,
    /// (θ₁, θ₂) in radians.
    pub direction: [f64; 2],
    /// Source height in meters; `f64::INFINITY` for natural guide stars.
    pub height: f64,
}

impl GuideStar {
    pub fn ngs(direction: [f64; 2]) -> Self {
        Self {
            kind: StarKind::Ngs,
            direction,
            height: f64::INFINITY,
        }
    }

    pub fn lgs(direction: [f64; 2], height: f64) -> Self {
        Self {
            kind: StarKind::Lgs,
            direction,
            height,
        }
    }

    /// Lateral magnification of the aperture footprint on a plane at `h`.
    pub fn cone_scale(&self, h: f64) -> f64 {
        match self.kind {
            StarKind::Ngs => 1.0,
            StarKind::Lgs => 1.0 - h / self.height,
        }
    }

    pub fn off_axis_angle(&self) -> f64 {
        self.direction[0].hypot(self.direction[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WfsConfig {
    pub n_subap: usize,
    pub subaperture_size: f64,
    /// Row-major `n_subap x n_subap`; row index runs along y, column along x.
    pub active_mask: Vec<bool>,
    /// Slope noise variance σ² in rad².
    pub noise_variance: f64,
}

impl WfsConfig {
    pub fn n_active(&self) -> usize {
        self.active_mask.iter().filter(|&&a| a).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerConfig {
    pub height: f64,
    /// J: the layer grid has 2^J points per side.
    pub grid_order: u32,
    /// Physical side length of the layer grid in meters (derived).
    pub extent: f64,
    pub relative_strength: f64,
}

impl LayerConfig {
    pub fn side(&self) -> usize {
        1usize << self.grid_order
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmConfig {
    pub n_act: usize,
    pub conjugation_height: f64,
    /// Physical side length spanned by the actuator grid (derived).
    pub extent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PreconditionerMode {
    /// Exact diagonal when the problem fits under the dense cap, otherwise approximate.
    #[default]
    Auto,
    Exact,
    Approximate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreconditionerParams {
    #[serde(default)]
    pub mode: PreconditionerMode,
    /// Weight applied to the probed fitting diagonal on the coarse scale.
    #[serde(default = "default_coarse_weight")]
    pub coarse_weight: f64,
    /// Weight applied on detail scales.
    #[serde(default = "one")]
    pub detail_weight: f64,
}

impl Default for PreconditionerParams {
    fn default() -> Self {
        Self {
            mode: PreconditionerMode::Auto,
            coarse_weight: default_coarse_weight(),
            detail_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerParams {
    /// Outer scale L₀ in meters (may be infinite).
    pub outer_scale: f64,
    /// Exponent applied to (κ² + κ₀²); 11/6 for Kolmogorov/von Kármán.
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtmosphereParams {
    /// Fried parameter in meters for the whole profile.
    pub r0: f64,
    pub outer_scale: f64,
    /// Per-layer wind vectors in m/s; empty for a static atmosphere.
    pub wind: Vec<[f64; 2]>,
    /// Seconds per loop step, used for frozen-flow translation.
    pub frame_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationParams {
    pub n_per_side: usize,
    /// Half-width of the probe grid per axis in radians.
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemGeometry {
    pub telescope_diameter: f64,
    pub central_obstruction_fraction: f64,
    pub obstruction_semantics: ObstructionSemantics,
    pub illumination_threshold: f64,
    pub wfs_list: Vec<WfsConfig>,
    pub guide_stars: Vec<GuideStar>,
    pub layers: Vec<LayerConfig>,
    pub dms: Vec<DmConfig>,
    pub pcg_max_iter: usize,
    pub regularization_alpha: f64,
    pub gain: f64,
    pub loop_mode: LoopMode,
    pub wavelet_order: usize,
    pub regularizer: RegularizerParams,
    pub preconditioner: PreconditionerParams,
    pub measurement_noise: bool,
    pub atmosphere: AtmosphereParams,
    pub evaluation: EvaluationParams,
}

// ---------------------------------------------------------------------------
// File schema
// ---------------------------------------------------------------------------

fn default_threshold() -> f64 {
    0.5
}
fn default_coarse_weight() -> f64 {
    4.0
}
fn one() -> f64 {
    1.0
}
fn default_outer_scale() -> f64 {
    25.0
}
fn default_exponent() -> f64 {
    11.0 / 6.0
}
fn default_wavelet_order() -> usize {
    3
}
fn default_max_iter() -> usize {
    4
}
fn default_gain() -> f64 {
    0.4
}
fn default_true() -> bool {
    true
}
fn default_r0() -> f64 {
    0.157
}
fn default_frame_time() -> f64 {
    0.002
}
fn default_eval_n() -> usize {
    5
}
fn default_eval_half_width() -> f64 {
    60.0 * ARCSEC
}

/// One arcsecond in radians.
pub const ARCSEC: f64 = std::f64::consts::PI / (180.0 * 3600.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TelescopeSection {
    pub diameter: f64,
    #[serde(default)]
    pub central_obstruction: f64,
    #[serde(default)]
    pub obstruction_semantics: ObstructionSemantics,
    #[serde(default = "default_threshold")]
    pub illumination_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WfsSection {
    pub n_subap: usize,
    pub noise_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuideStarSection {
    pub kind: StarKind,
    pub direction: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSection {
    pub height: f64,
    pub grid_order: u32,
    pub relative_strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DmSection {
    pub n_act: usize,
    pub conjugation_height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_max_iter")]
    pub pcg_max_iter: usize,
    pub regularization_alpha: f64,
    #[serde(default = "default_wavelet_order")]
    pub wavelet_order: usize,
    /// `null` in the file means an infinite outer scale.
    #[serde(default = "default_outer_scale_opt")]
    pub outer_scale: Option<f64>,
    #[serde(default = "default_exponent")]
    pub spectral_exponent: f64,
    #[serde(default)]
    pub preconditioner: PreconditionerParams,
}

fn default_outer_scale_opt() -> Option<f64> {
    Some(default_outer_scale())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    #[serde(default = "default_eval_n")]
    pub n_per_side: usize,
    #[serde(default = "default_eval_half_width")]
    pub half_width: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            n_per_side: default_eval_n(),
            half_width: default_eval_half_width(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopSection {
    #[serde(default)]
    pub mode: LoopMode,
    #[serde(default = "default_gain")]
    pub gain: f64,
    #[serde(default = "default_true")]
    pub noise: bool,
    #[serde(default = "default_r0")]
    pub r0: f64,
    #[serde(default = "default_outer_scale")]
    pub outer_scale: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub wind: Vec<[f64; 2]>,
    #[serde(default = "default_frame_time")]
    pub frame_time: f64,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

/// On-disk representation of a [`SystemGeometry`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub telescope: TelescopeSection,
    pub wfs: Vec<WfsSection>,
    pub guide_stars: Vec<GuideStarSection>,
    pub layers: Vec<LayerSection>,
    pub dms: Vec<DmSection>,
    pub solver: SolverSection,
    #[serde(rename = "loop")]
    pub loop_: LoopSection,
}

// ---------------------------------------------------------------------------
// Loading and validation
// ---------------------------------------------------------------------------

// Written as `!cond` so NaN inputs fail validation.
macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err(Error::Validation(format!($($msg)+)));
        }
    };
}

pub fn load_config(path: impl AsRef<Path>) -> Result<SystemGeometry> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    SystemGeometry::from_json(&text)
}

impl SystemGeometry {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ConfigFile = serde_json::from_str(text)?;
        Self::from_config(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_config()).expect("config serializes")
    }

    pub fn from_config(file: ConfigFile) -> Result<Self> {
        let ConfigFile {
            telescope,
            wfs,
            guide_stars,
            layers,
            dms,
            solver,
            loop_,
        } = file;

        let d = telescope.diameter;
        ensure!(d.is_finite() && d > 0.0, "telescope diameter must be positive");
        ensure!(
            (0.0..1.0).contains(&telescope.central_obstruction),
            "central obstruction out of [0,1)"
        );
        ensure!(
            telescope.illumination_threshold > 0.0 && telescope.illumination_threshold <= 1.0,
            "illumination threshold out of (0,1]"
        );

        ensure!(!wfs.is_empty(), "at least one wavefront sensor is required");
        ensure!(
            guide_stars.len() == wfs.len(),
            "every WFS needs exactly one guide star ({} WFS, {} guide stars)",
            wfs.len(),
            guide_stars.len()
        );

        ensure!(!layers.is_empty(), "at least one layer is required");
        for (i, l) in layers.iter().enumerate() {
            ensure!(
                l.height.is_finite() && l.height >= 0.0,
                "layer {i} height must be finite and >= 0"
            );
            ensure!(
                (2..=14).contains(&l.grid_order),
                "layer {i} grid_order must be in 2..=14"
            );
            ensure!(
                l.relative_strength > 0.0 && l.relative_strength <= 1.0,
                "layer {i} relative_strength out of (0,1]"
            );
        }
        for pair in layers.windows(2) {
            ensure!(
                pair[1].height > pair[0].height,
                "layer heights must be strictly increasing"
            );
        }
        let strength_sum: f64 = layers.iter().map(|l| l.relative_strength).sum();
        ensure!(
            (strength_sum - 1.0).abs() <= STRENGTH_SUM_TOL,
            "layer relative strengths sum to {strength_sum}, expected 1"
        );
        let top = layers.last().map(|l| l.height).unwrap_or(0.0);

        let mut stars = Vec::with_capacity(guide_stars.len());
        for (g, s) in guide_stars.iter().enumerate() {
            ensure!(
                s.direction.iter().all(|v| v.is_finite()),
                "guide star {g} direction must be finite"
            );
            let star = match s.kind {
                StarKind::Ngs => {
                    ensure!(
                        s.height.is_none(),
                        "guide star {g} is an NGS and must not carry a height"
                    );
                    GuideStar::ngs(s.direction)
                }
                StarKind::Lgs => {
                    let h = s
                        .height
                        .ok_or_else(|| Error::Validation(format!("guide star {g} is an LGS and needs a height")))?;
                    ensure!(
                        h.is_finite() && h > 0.0,
                        "guide star {g} LGS height must be finite and positive"
                    );
                    ensure!(
                        h > top,
                        "guide star {g} LGS height {h} m must exceed the top layer height {top} m"
                    );
                    GuideStar::lgs(s.direction, h)
                }
            };
            stars.push(star);
        }

        ensure!(
            dms.len() == layers.len(),
            "identity fitting needs one DM per layer ({} DMs, {} layers)",
            dms.len(),
            layers.len()
        );
        for (m, (dm, layer)) in dms.iter().zip(&layers).enumerate() {
            ensure!(dm.n_act >= 2, "DM {m} needs at least 2 actuators per side");
            ensure!(
                (dm.conjugation_height - layer.height).abs() <= HEIGHT_MATCH_TOL * layer.height.max(1.0),
                "DM {m} conjugation height {} m must match layer {m} height {} m",
                dm.conjugation_height,
                layer.height
            );
        }

        ensure!(solver.pcg_max_iter >= 1, "pcg_max_iter must be >= 1");
        ensure!(
            solver.regularization_alpha.is_finite() && solver.regularization_alpha > 0.0,
            "regularization_alpha must be positive"
        );
        ensure!(
            (1..=10).contains(&solver.wavelet_order),
            "wavelet_order must be in 1..=10"
        );
        let outer_scale = solver.outer_scale.unwrap_or(f64::INFINITY);
        ensure!(outer_scale > 0.0, "regularizer outer scale must be positive");
        ensure!(
            solver.spectral_exponent.is_finite() && solver.spectral_exponent > 0.0,
            "spectral exponent must be positive"
        );
        ensure!(
            solver.preconditioner.coarse_weight > 0.0 && solver.preconditioner.detail_weight > 0.0,
            "preconditioner weights must be positive"
        );

        ensure!((0.0..=1.0).contains(&loop_.gain), "gain out of [0,1]: {}", loop_.gain);
        ensure!(loop_.r0 > 0.0, "r0 must be positive");
        ensure!(loop_.outer_scale > 0.0, "atmosphere outer scale must be positive");
        ensure!(loop_.frame_time > 0.0, "frame_time must be positive");
        ensure!(
            loop_.wind.is_empty() || loop_.wind.len() == layers.len(),
            "wind must be empty or list one vector per layer"
        );
        ensure!(
            loop_.evaluation.n_per_side >= 1,
            "evaluation grid needs at least one direction"
        );
        ensure!(loop_.evaluation.half_width >= 0.0, "evaluation half width must be >= 0");

        let inner_diameter = inner_diameter(d, telescope.central_obstruction, telescope.obstruction_semantics);
        let mut wfs_list = Vec::with_capacity(wfs.len());
        for (g, w) in wfs.iter().enumerate() {
            ensure!(w.n_subap >= 1, "WFS {g} needs at least one subaperture");
            ensure!(
                w.noise_variance.is_finite() && w.noise_variance > 0.0,
                "WFS {g} noise variance must be positive"
            );
            wfs_list.push(WfsConfig {
                n_subap: w.n_subap,
                subaperture_size: d / w.n_subap as f64,
                active_mask: active_mask(d, inner_diameter, telescope.illumination_threshold, w.n_subap),
                noise_variance: w.noise_variance,
            });
        }

        let layer_cfgs: Vec<LayerConfig> = layers
            .iter()
            .map(|l| LayerConfig {
                height: l.height,
                grid_order: l.grid_order,
                extent: padded_extent(meta_pupil_width(d, &stars, l.height), 1 << l.grid_order),
                relative_strength: l.relative_strength,
            })
            .collect();
        let dm_cfgs = dms
            .iter()
            .zip(&layer_cfgs)
            .map(|(dm, layer)| DmConfig {
                n_act: dm.n_act,
                conjugation_height: dm.conjugation_height,
                extent: layer.extent,
            })
            .collect();

        Ok(SystemGeometry {
            telescope_diameter: d,
            central_obstruction_fraction: telescope.central_obstruction,
            obstruction_semantics: telescope.obstruction_semantics,
            illumination_threshold: telescope.illumination_threshold,
            wfs_list,
            guide_stars: stars,
            layers: layer_cfgs,
            dms: dm_cfgs,
            pcg_max_iter: solver.pcg_max_iter,
            regularization_alpha: solver.regularization_alpha,
            gain: loop_.gain,
            loop_mode: loop_.mode,
            wavelet_order: solver.wavelet_order,
            regularizer: RegularizerParams {
                outer_scale,
                exponent: solver.spectral_exponent,
            },
            preconditioner: solver.preconditioner,
            measurement_noise: loop_.noise,
            atmosphere: AtmosphereParams {
                r0: loop_.r0,
                outer_scale: loop_.outer_scale,
                wind: loop_.wind,
                frame_time: loop_.frame_time,
            },
            evaluation: EvaluationParams {
                n_per_side: loop_.evaluation.n_per_side,
                half_width: loop_.evaluation.half_width,
            },
        })
    }

    pub fn to_config(&self) -> ConfigFile {
        ConfigFile {
            telescope: TelescopeSection {
                diameter: self.telescope_diameter,
                central_obstruction: self.central_obstruction_fraction,
                obstruction_semantics: self.obstruction_semantics,
                illumination_threshold: self.illumination_threshold,
            },
            wfs: self
                .wfs_list
                .iter()
                .map(|w| WfsSection {
                    n_subap: w.n_subap,
                    noise_variance: w.noise_variance,
                })
                .collect(),
            guide_stars: self
                .guide_stars
                .iter()
                .map(|s| GuideStarSection {
                    kind: s.kind,
                    direction: s.direction,
                    height: match s.kind {
                        StarKind::Ngs => None,
                        StarKind::Lgs => Some(s.height),
                    },
                })
                .collect(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerSection {
                    height: l.height,
                    grid_order: l.grid_order,
                    relative_strength: l.relative_strength,
                })
                .collect(),
            dms: self
                .dms
                .iter()
                .map(|dm| DmSection {
                    n_act: dm.n_act,
                    conjugation_height: dm.conjugation_height,
                })
                .collect(),
            solver: SolverSection {
                pcg_max_iter: self.pcg_max_iter,
                regularization_alpha: self.regularization_alpha,
                wavelet_order: self.wavelet_order,
                outer_scale: self
                    .regularizer
                    .outer_scale
                    .is_finite()
                    .then_some(self.regularizer.outer_scale),
                spectral_exponent: self.regularizer.exponent,
                preconditioner: self.preconditioner.clone(),
            },
            loop_: LoopSection {
                mode: self.loop_mode,
                gain: self.gain,
                noise: self.measurement_noise,
                r0: self.atmosphere.r0,
                outer_scale: self.atmosphere.outer_scale,
                wind: self.atmosphere.wind.clone(),
                frame_time: self.atmosphere.frame_time,
                evaluation: EvaluationSection {
                    n_per_side: self.evaluation.n_per_side,
                    half_width: self.evaluation.half_width,
                },
            },
        }
    }

    pub fn n_wfs(&self) -> usize {
        self.wfs_list.len()
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn inner_diameter(&self) -> f64 {
        inner_diameter(
            self.telescope_diameter,
            self.central_obstruction_fraction,
            self.obstruction_semantics,
        )
    }

    /// Total number of wavelet coefficients, Σ 2^{2J_ℓ}.
    pub fn coefficient_dim(&self) -> usize {
        self.layers.iter().map(|l| l.side() * l.side()).sum()
    }

    /// Total number of slope entries, 2 Σ n_s².
    pub fn measurement_dim(&self) -> usize {
        self.wfs_list.iter().map(|w| 2 * w.n_subap * w.n_subap).sum()
    }

    /// Default parallelism degree, max(L, W).
    pub fn default_threads(&self) -> usize {
        self.n_layers().max(self.n_wfs())
    }

    /// Re-derives a geometry from a modified file representation.
    pub fn with_config(&self, edit: impl FnOnce(&mut ConfigFile)) -> Result<Self> {
        let mut file = self.to_config();
        edit(&mut file);
        Self::from_config(file)
    }
}

pub fn inner_diameter(diameter: f64, fraction: f64, semantics: ObstructionSemantics) -> f64 {
    match semantics {
        ObstructionSemantics::Area => fraction.sqrt() * diameter,
        ObstructionSemantics::Diameter => fraction * diameter,
    }
}

// ---------------------------------------------------------------------------
// Active subapertures
// ---------------------------------------------------------------------------

pub fn compute_active_subapertures(geometry: &SystemGeometry, wfs_index: usize) -> Vec<bool> {
    let wfs = &geometry.wfs_list[wfs_index];
    active_mask(
        geometry.telescope_diameter,
        geometry.inner_diameter(),
        geometry.illumination_threshold,
        wfs.n_subap,
    )
}

/// Active-subaperture mask of an `n x n` grid over an annular pupil.
///
/// Cells are folded into one octant by index before the area is evaluated so
/// the mask is exactly invariant under the symmetry group of the square.
pub fn active_mask(diameter: f64, inner_diameter: f64, threshold: f64, n: usize) -> Vec<bool> {
    let pitch = diameter / n as f64;
    let r_out = 0.5 * diameter;
    let r_in = 0.5 * inner_diameter;
    let mut mask = vec![false; n * n];
    for i in 0..n {
        for j in 0..n {
            let fi = i.min(n - 1 - i);
            let fj = j.min(n - 1 - j);
            let (a, b) = (fi.min(fj), fi.max(fj));
            let x0 = -r_out + a as f64 * pitch;
            let x1 = -r_out + (a + 1) as f64 * pitch;
            let y0 = -r_out + b as f64 * pitch;
            let y1 = -r_out + (b + 1) as f64 * pitch;
            let area = disk_rect_area(r_out, x0, x1, y0, y1) - disk_rect_area(r_in, x0, x1, y0, y1);
            mask[i * n + j] = area / (pitch * pitch) >= threshold;
        }
    }
    mask
}

/// Exact area of the intersection of the disk of radius `r` (centered at the
/// origin) with the rectangle `[x0, x1] x [y0, y1]`.
pub fn disk_rect_area(r: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let a = x0.max(-r);
    let b = x1.min(r);
    if b <= a || y1 <= y0 {
        return 0.0;
    }
    let mut breaks = vec![a, b];
    for y in [y0, y1] {
        if y.abs() < r {
            let x = (r * r - y * y).sqrt();
            for c in [-x, x] {
                if c > a && c < b {
                    breaks.push(c);
                }
            }
        }
    }
    breaks.sort_by(|p, q| p.total_cmp(q));

    // ∫ sqrt(r² - x²) dx
    let prim = |x: f64| {
        let x = x.clamp(-r, r);
        0.5 * (x * (r * r - x * x).max(0.0).sqrt() + r * r * (x / r).asin())
    };

    let mut area = 0.0;
    for w in breaks.windows(2) {
        let (p, q) = (w[0], w[1]);
        if q <= p {
            continue;
        }
        let m = 0.5 * (p + q);
        let s = (r * r - m * m).max(0.0).sqrt();
        let top_is_circle = s < y1;
        let bot_is_circle = -s > y0;
        let top_m = if top_is_circle { s } else { y1 };
        let bot_m = if bot_is_circle { -s } else { y0 };
        if top_m <= bot_m {
            continue;
        }
        let circ = prim(q) - prim(p);
        let top = if top_is_circle { circ } else { y1 * (q - p) };
        let bot = if bot_is_circle { -circ } else { y0 * (q - p) };
        area += top - bot;
    }
    area
}

// ---------------------------------------------------------------------------
// Layer extents
// ---------------------------------------------------------------------------

/// Side length of the union of all beam footprints at height `h`, before padding.
pub fn meta_pupil_width(diameter: f64, stars: &[GuideStar], h: f64) -> f64 {
    stars
        .iter()
        .map(|s| s.cone_scale(h) * diameter + 2.0 * s.off_axis_angle() * h)
        .fold(0.0, f64::max)
}

/// Grid extent that leaves half a grid cell of margin on each side of `width`:
/// solves E = width + E / (n - 1).
pub fn padded_extent(width: f64, n: usize) -> f64 {
    debug_assert!(n >= 3);
    width * (n - 1) as f64 / (n - 2) as f64
}

pub fn layer_extent(geometry: &SystemGeometry, layer_index: usize) -> f64 {
    let layer = &geometry.layers[layer_index];
    padded_extent(
        meta_pupil_width(geometry.telescope_diameter, &geometry.guide_stars, layer.height),
        layer.side(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn brute_area(r: f64, x0: f64, x1: f64, y0: f64, y1: f64, n: usize) -> f64 {
        let dx = (x1 - x0) / n as f64;
        let dy = (y1 - y0) / n as f64;
        let mut hits = 0usize;
        for i in 0..n {
            for j in 0..n {
                let x = x0 + (j as f64 + 0.5) * dx;
                let y = y0 + (i as f64 + 0.5) * dy;
                if x * x + y * y <= r * r {
                    hits += 1;
                }
            }
        }
        hits as f64 * dx * dy
    }

    #[test]
    fn disk_rect_area_matches_sampling() {
        let cases = [
            (1.0, -1.0, 0.0, -1.0, 0.0),
            (1.0, 0.2, 0.9, -0.3, 0.6),
            (2.0, -3.0, 3.0, -3.0, 3.0),
            (1.0, 0.5, 1.5, 0.5, 1.5),
            (1.0, -0.25, 0.25, 0.8, 1.2),
            (1.0, 2.0, 3.0, 0.0, 1.0),
        ];
        for (r, x0, x1, y0, y1) in cases {
            let exact = disk_rect_area(r, x0, x1, y0, y1);
            let approx = brute_area(r, x0, x1, y0, y1, 2000);
            assert!((exact - approx).abs() < 5e-5 * exact.max(1.0), "{exact} vs {approx}");
        }
        let full = disk_rect_area(1.0, -2.0, 2.0, -2.0, 2.0);
        assert!((full - std::f64::consts::PI).abs() < 1e-14);
    }

    #[test]
    fn two_by_two_unobstructed_pupil_is_fully_active() {
        // each quadrant holds a quarter disk: π/4 ≈ 0.785 of its area
        let mask = active_mask(2.0, 0.0, 0.5, 2);
        assert_eq!(mask, vec![true; 4]);
        let frac = disk_rect_area(1.0, -1.0, 0.0, -1.0, 0.0);
        assert!((frac - std::f64::consts::FRAC_PI_4).abs() < 1e-14);
    }

    #[test]
    fn fully_obstructed_pupil_is_inactive() {
        let eps = 1e-9;
        let inner = inner_diameter(2.0, 1.0 - eps, ObstructionSemantics::Area);
        let mask = active_mask(2.0, inner, 0.5, 8);
        assert!(mask.iter().all(|a| !a));
    }

    #[test]
    fn maory_mask_is_obstructed_and_symmetric() {
        let g = presets::maory();
        let mask = compute_active_subapertures(&g, 0);
        let n = 80;
        let count = mask.iter().filter(|&&a| a).count();
        assert!(count < n * n);
        assert!(count > n * n / 2);
        for i in 0..n {
            for j in 0..n {
                let a = mask[i * n + j];
                assert_eq!(a, mask[(n - 1 - i) * n + (n - 1 - j)]);
                assert_eq!(a, mask[j * n + i]);
                assert_eq!(a, mask[i * n + (n - 1 - j)]);
            }
        }
    }

    #[test]
    fn maory_mask_matches_brute_force_cell_areas() {
        let g = presets::maory();
        let mask = compute_active_subapertures(&g, 0);
        let n = 80;
        let d = g.telescope_diameter;
        let pitch = d / n as f64;
        let (ro, ri) = (0.5 * d, 0.5 * g.inner_diameter());
        let mut disagreements = 0;
        for i in 0..n {
            for j in 0..n {
                let x0 = -ro + j as f64 * pitch;
                let y0 = -ro + i as f64 * pitch;
                let f = (brute_area(ro, x0, x0 + pitch, y0, y0 + pitch, 64)
                    - brute_area(ri, x0, x0 + pitch, y0, y0 + pitch, 64))
                    / (pitch * pitch);
                // cells within sampling resolution of the threshold are ambiguous
                if (f - 0.5).abs() > 0.01 && (f >= 0.5) != mask[i * n + j] {
                    disagreements += 1;
                }
            }
        }
        assert_eq!(disagreements, 0);
    }

    #[test]
    fn single_on_axis_ngs_extent_is_diameter_plus_padding() {
        let stars = [GuideStar::ngs([0.0, 0.0])];
        for h in [0.0, 1000.0, 15000.0] {
            let w = meta_pupil_width(8.0, &stars, h);
            assert_eq!(w, 8.0);
            let e = padded_extent(w, 8);
            assert!((e - 8.0 - e / 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn lgs_at_apex_reduces_to_offset_only() {
        let theta = 30.0 * ARCSEC;
        let stars = [GuideStar::lgs([theta, 0.0], 90_000.0)];
        let w = meta_pupil_width(39.0, &stars, 90_000.0);
        assert!((w - 2.0 * theta * 90_000.0).abs() < 1e-12);
    }

    #[test]
    fn maory_extent_covers_ray_traced_footprints() {
        let g = presets::maory();
        let top = g.n_layers() - 1;
        let layer = &g.layers[top];
        let d = g.telescope_diameter;
        // trace the pupil boundary square for every star and keep the widest excursion
        let mut max_abs: f64 = 0.0;
        let samples = 400;
        for star in &g.guide_stars {
            for k in 0..=samples {
                let t = -0.5 * d + d * k as f64 / samples as f64;
                for (x, y) in [(t, -0.5 * d), (t, 0.5 * d), (-0.5 * d, t), (0.5 * d, t)] {
                    let s = star.cone_scale(layer.height);
                    let px = s * x + star.direction[0] * layer.height;
                    let py = s * y + star.direction[1] * layer.height;
                    max_abs = max_abs.max(px.abs()).max(py.abs());
                }
            }
        }
        let extent = layer_extent(&g, top);
        assert_eq!(extent, layer.extent);
        let cell = extent / (layer.side() - 1) as f64;
        assert!(2.0 * max_abs + cell <= extent + 1e-9);
        // the norm-based width is conservative by at most the per-axis slack
        assert!(extent - (2.0 * max_abs + cell) < 2.0 * layer.height * 80.0 * ARCSEC);
    }

    #[test]
    fn extent_monotone_in_height_for_maory_asterism() {
        let g = presets::maory();
        let mut prev = 0.0;
        for k in 0..=40 {
            let h = 20_000.0 * k as f64 / 40.0;
            let w = meta_pupil_width(g.telescope_diameter, &g.guide_stars, h);
            assert!(w >= prev);
            prev = w;
        }
    }

    #[test]
    fn maory_preset_matches_table_values() {
        let g = presets::maory();
        assert_eq!(g.n_wfs(), 9);
        let lgs = g.guide_stars.iter().filter(|s| s.kind == StarKind::Lgs).count();
        assert_eq!(lgs, 6);
        assert_eq!(g.n_wfs() - lgs, 3);
        assert_eq!(g.wfs_list[0].n_subap, 80);
        assert_eq!(g.layers[0].side(), 128);
        assert_eq!(g.telescope_diameter, 39.0);
    }

    #[test]
    fn minimal_system_is_valid() {
        let text = r#"{
            "telescope": { "diameter": 4.0 },
            "wfs": [ { "n_subap": 4, "noise_variance": 1.0 } ],
            "guide_stars": [ { "kind": "ngs", "direction": [0.0, 0.0] } ],
            "layers": [ { "height": 0.0, "grid_order": 3, "relative_strength": 1.0 } ],
            "dms": [ { "n_act": 5, "conjugation_height": 0.0 } ],
            "solver": { "regularization_alpha": 1.0 },
            "loop": {}
        }"#;
        let g = SystemGeometry::from_json(text).unwrap();
        assert_eq!(g.n_wfs(), 1);
        assert_eq!(g.coefficient_dim(), 64);
        assert_eq!(g.pcg_max_iter, 4);
        assert_eq!(g.gain, 0.4);
    }

    #[test]
    fn gain_above_one_is_rejected() {
        let err = presets::mini().with_config(|f| f.loop_.gain = 1.5).unwrap_err();
        assert!(err.to_string().contains("gain out of [0,1]"), "{err}");
    }

    type Edit = Box<dyn Fn(&mut ConfigFile)>;

    #[test]
    fn invariant_violations_are_named() {
        let base = presets::mini();
        let cases: Vec<(Edit, &str)> = vec![
            (
                Box::new(|f| {
                    f.guide_stars.pop();
                }),
                "exactly one guide star",
            ),
            (Box::new(|f| f.layers[1].height = 0.0), "strictly increasing"),
            (Box::new(|f| f.layers[0].relative_strength = 0.9), "sum to"),
            (Box::new(|f| f.solver.pcg_max_iter = 0), "pcg_max_iter"),
            (
                Box::new(|f| f.solver.regularization_alpha = 0.0),
                "regularization_alpha",
            ),
            (Box::new(|f| f.wfs[0].noise_variance = 0.0), "noise variance"),
            (Box::new(|f| f.dms[0].n_act = 1), "at least 2 actuators"),
            (Box::new(|f| f.dms[1].conjugation_height = 123.0), "conjugation height"),
            (
                Box::new(|f| {
                    f.guide_stars[0].kind = StarKind::Lgs;
                    f.guide_stars[0].height = Some(1000.0);
                }),
                "must exceed the top layer",
            ),
        ];
        for (edit, needle) in cases {
            let err = base.with_config(|f| edit(f)).unwrap_err();
            assert!(err.to_string().contains(needle), "{err} lacks {needle}");
        }
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        let err = SystemGeometry::from_json("{ \"telescope\": ").unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
    }

    #[test]
    fn presets_round_trip() {
        for g in [presets::mini(), presets::maory()] {
            let back = SystemGeometry::from_json(&g.to_json()).unwrap();
            assert_eq!(back, g);
        }
    }
}
