//! Matrix-free tomography operators and their precomputed stencils.

pub mod noise;
pub mod preconditioner;
pub mod propagation;
pub mod regularizer;
pub mod sh;

pub use noise::{noise_weight_apply, NoiseWeights};
pub use preconditioner::{approximate_diagonal, exact_diagonal};
pub use propagation::{propagate, propagate_transpose};
pub use regularizer::{regularizer_apply, regularizer_build, DiagonalRegularizer};
pub use sh::{sh_apply, sh_transpose_apply};

use crate::config::{GuideStar, SystemGeometry};
use crate::data::{LayerStack, MeasurementSet, MirrorShapes, WaveletCoefficients};
use crate::error::{check_len, Result};
use crate::grid::{ApertureGrid, BlockLayout, Footprint, PlaneGrid};
use crate::wavelet::Wavelet;

/// Everything needed to evaluate one WFS's forward model.
#[derive(Debug, Clone)]
pub struct SensorModel {
    pub n_subap: usize,
    pub mask: Vec<bool>,
    pub star: GuideStar,
    pub aperture: ApertureGrid,
    /// One footprint per layer.
    pub layer_footprints: Vec<Footprint>,
    /// One footprint per DM.
    pub dm_footprints: Vec<Footprint>,
}

impl SensorModel {
    pub fn wavefront_len(&self) -> usize {
        self.aperture.len()
    }

    pub fn slope_len(&self) -> usize {
        2 * self.n_subap * self.n_subap
    }

    /// `wavefront = Σ_l P_l layers_l`
    pub fn propagate(&self, layers: &[&[f64]], wavefront: &mut [f64]) {
        wavefront.fill(0.0);
        for (fp, layer) in self.layer_footprints.iter().zip(layers) {
            fp.accumulate(layer, wavefront);
        }
    }

    /// `wavefront = Σ_m P_m mirrors_m`
    pub fn propagate_mirrors(&self, mirrors: &[&[f64]], wavefront: &mut [f64]) {
        wavefront.fill(0.0);
        for (fp, dm) in self.dm_footprints.iter().zip(mirrors) {
            fp.accumulate(dm, wavefront);
        }
    }

    pub fn slopes(&self, wavefront: &[f64], slopes: &mut [f64]) {
        sh::apply(wavefront, self.n_subap, &self.mask, slopes);
    }

    pub fn slopes_transpose(&self, slopes: &[f64], wavefront: &mut [f64]) {
        sh::apply_transpose(slopes, self.n_subap, &self.mask, wavefront);
    }
}

pub fn layer_plane(geometry: &SystemGeometry, layer: usize) -> PlaneGrid {
    let l = &geometry.layers[layer];
    PlaneGrid {
        side: l.side(),
        extent: l.extent,
        height: l.height,
    }
}

pub fn dm_plane(geometry: &SystemGeometry, dm: usize) -> PlaneGrid {
    let d = &geometry.dms[dm];
    PlaneGrid {
        side: d.n_act,
        extent: d.extent,
        height: d.conjugation_height,
    }
}

pub fn sensor_model(geometry: &SystemGeometry, wfs: usize) -> Result<SensorModel> {
    let cfg = &geometry.wfs_list[wfs];
    let star = geometry.guide_stars[wfs];
    let aperture = ApertureGrid::shack_hartmann(geometry.telescope_diameter, cfg.n_subap);
    let layer_footprints = (0..geometry.n_layers())
        .map(|l| Footprint::for_star(&aperture, &layer_plane(geometry, l), &star))
        .collect::<Result<_>>()?;
    let dm_footprints = (0..geometry.dms.len())
        .map(|m| Footprint::for_star(&aperture, &dm_plane(geometry, m), &star))
        .collect::<Result<_>>()?;
    Ok(SensorModel {
        n_subap: cfg.n_subap,
        mask: cfg.active_mask.clone(),
        star,
        aperture,
        layer_footprints,
        dm_footprints,
    })
}

/// The full operator set for one geometry: Γ, P, C_η⁻¹, W, D and the
/// layer-to-actuator fitting F.
#[derive(Debug, Clone)]
pub struct TomoOperators {
    pub sensors: Vec<SensorModel>,
    pub layer_sides: Vec<usize>,
    pub layer_layout: BlockLayout,
    pub slope_layout: BlockLayout,
    pub wavefront_layout: BlockLayout,
    pub mirror_layout: BlockLayout,
    /// `fitting[m]` samples layer `m` at the nodes of DM `m`.
    pub fitting: Vec<Footprint>,
    pub wavelet: Wavelet,
    pub noise: NoiseWeights,
    pub regularizer: DiagonalRegularizer,
}

impl TomoOperators {
    pub fn new(geometry: &SystemGeometry) -> Result<Self> {
        let sensors: Vec<SensorModel> = (0..geometry.n_wfs())
            .map(|g| sensor_model(geometry, g))
            .collect::<Result<_>>()?;
        let layer_sides: Vec<usize> = geometry.layers.iter().map(|l| l.side()).collect();
        let fitting = (0..geometry.dms.len())
            .map(|m| {
                let dm = dm_plane(geometry, m);
                Footprint::new(&ApertureGrid::matching(&dm), &layer_plane(geometry, m), 1.0, [0.0, 0.0])
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            layer_layout: BlockLayout::square(layer_sides.iter().copied()),
            slope_layout: BlockLayout::from_lens(sensors.iter().map(|s| s.slope_len()).collect()),
            wavefront_layout: BlockLayout::from_lens(sensors.iter().map(|s| s.wavefront_len()).collect()),
            mirror_layout: BlockLayout::square(geometry.dms.iter().map(|d| d.n_act)),
            sensors,
            layer_sides,
            fitting,
            wavelet: Wavelet::daubechies(geometry.wavelet_order)?,
            noise: NoiseWeights::from_geometry(geometry),
            regularizer: regularizer_build(geometry),
        })
    }

    pub fn n_wfs(&self) -> usize {
        self.sensors.len()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sides.len()
    }

    pub fn coefficient_dim(&self) -> usize {
        self.layer_layout.len()
    }

    /// Noiseless slopes `Γ P φ`.
    pub fn forward(&self, layers: &LayerStack) -> Result<MeasurementSet> {
        check_len("forward layers", self.layer_layout.len(), layers.len())?;
        let blocks = self.layer_layout.split(layers.data());
        let mut out = MeasurementSet::zeros(&self.slope_layout);
        for (g, sensor) in self.sensors.iter().enumerate() {
            let mut wf = vec![0.0; sensor.wavefront_len()];
            sensor.propagate(&blocks, &mut wf);
            sensor.slopes(&wf, out.block_mut(g));
        }
        Ok(out)
    }

    /// `Pᵀ Γᵀ s`, accumulated in ascending WFS order.
    pub fn forward_transpose(&self, slopes: &MeasurementSet) -> Result<LayerStack> {
        check_len("forward_transpose slopes", self.slope_layout.len(), slopes.len())?;
        let mut out = LayerStack::zeros(&self.layer_layout);
        let mut wf = Vec::new();
        for (g, sensor) in self.sensors.iter().enumerate() {
            wf.resize(sensor.wavefront_len(), 0.0);
            sensor.slopes_transpose(slopes.block(g), &mut wf);
            let mut blocks = self.layer_layout.split_mut(out.data_mut());
            for (fp, layer) in sensor.layer_footprints.iter().zip(blocks.iter_mut()) {
                fp.scatter(&wf, layer);
            }
        }
        Ok(out)
    }

    /// Slopes produced by the mirrors alone, `Γ P_dm a`.
    pub fn mirror_slopes(&self, mirrors: &MirrorShapes) -> Result<MeasurementSet> {
        check_len("mirror shapes", self.mirror_layout.len(), mirrors.len())?;
        let blocks = self.mirror_layout.split(mirrors.data());
        let mut out = MeasurementSet::zeros(&self.slope_layout);
        for (g, sensor) in self.sensors.iter().enumerate() {
            let mut wf = vec![0.0; sensor.wavefront_len()];
            sensor.propagate_mirrors(&blocks, &mut wf);
            sensor.slopes(&wf, out.block_mut(g));
        }
        Ok(out)
    }

    /// `F φ`: each layer resampled onto its DM's actuator grid.
    pub fn fit(&self, layers: &LayerStack) -> Result<MirrorShapes> {
        check_len("fit layers", self.layer_layout.len(), layers.len())?;
        let mut out = MirrorShapes::zeros(&self.mirror_layout);
        for (m, fp) in self.fitting.iter().enumerate() {
            fp.accumulate(layers.block(m), out.block_mut(m));
        }
        Ok(out)
    }

    /// `W⁻¹ c` per layer.
    pub fn to_layers(&self, coeffs: &WaveletCoefficients) -> Result<LayerStack> {
        check_len("coefficients", self.layer_layout.len(), coeffs.len())?;
        let mut data = coeffs.data().to_vec();
        for (block, &side) in self
            .layer_layout
            .split_mut(&mut data)
            .into_iter()
            .zip(&self.layer_sides)
        {
            self.wavelet.inverse_in_place(block, side)?;
        }
        LayerStack::from_vec(&self.layer_layout, data)
    }

    /// `W⁻ᵀ φ` per layer.
    pub fn to_coefficients_transposed(&self, layers: &LayerStack) -> Result<WaveletCoefficients> {
        check_len("layers", self.layer_layout.len(), layers.len())?;
        let mut data = layers.data().to_vec();
        for (block, &side) in self
            .layer_layout
            .split_mut(&mut data)
            .into_iter()
            .zip(&self.layer_sides)
        {
            self.wavelet.inverse_transposed_in_place(block, side)?;
        }
        WaveletCoefficients::from_vec(&self.layer_layout, data)
    }

    /// `W φ` per layer.
    pub fn to_coefficients(&self, layers: &LayerStack) -> Result<WaveletCoefficients> {
        check_len("layers", self.layer_layout.len(), layers.len())?;
        let mut data = layers.data().to_vec();
        for (block, &side) in self
            .layer_layout
            .split_mut(&mut data)
            .into_iter()
            .zip(&self.layer_sides)
        {
            self.wavelet.forward_in_place(block, side)?;
        }
        WaveletCoefficients::from_vec(&self.layer_layout, data)
    }
}
