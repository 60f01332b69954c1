//! Geometric propagation P through the layers towards a guide star.
//!
//! NGS beams sample layer `l` at `x + θ h_l`, LGS beams at
//! `(1 - h_l/H) x + θ h_l`, with bilinear interpolation on the layer grid.

use crate::config::SystemGeometry;
use crate::data::LayerStack;
use crate::error::{check_len, Error, Result};

use super::sensor_model;

fn check_wfs(geometry: &SystemGeometry, wfs: usize) -> Result<()> {
    if wfs >= geometry.n_wfs() {
        return Err(Error::Validation(format!(
            "wfs index {wfs} out of range (have {})",
            geometry.n_wfs()
        )));
    }
    Ok(())
}

/// Aperture wavefront seen by WFS `wfs`, on its `(n_s+1)^2` node grid.
pub fn propagate(geometry: &SystemGeometry, wfs: usize, layers: &LayerStack) -> Result<Vec<f64>> {
    check_wfs(geometry, wfs)?;
    let sensor = sensor_model(geometry, wfs)?;
    let expected: usize = geometry.layers.iter().map(|l| l.side() * l.side()).sum();
    check_len("propagate layers", expected, layers.len())?;
    let blocks = layers.layout().split(layers.data());
    let mut out = vec![0.0; sensor.wavefront_len()];
    sensor.propagate(&blocks, &mut out);
    Ok(out)
}

/// Adjoint of [`propagate`]: the layer increment `Pᵀ v`.
pub fn propagate_transpose(geometry: &SystemGeometry, wfs: usize, wavefront: &[f64]) -> Result<LayerStack> {
    check_wfs(geometry, wfs)?;
    let sensor = sensor_model(geometry, wfs)?;
    check_len("propagate_transpose wavefront", sensor.wavefront_len(), wavefront.len())?;
    let layout = crate::grid::BlockLayout::square(geometry.layers.iter().map(|l| l.side()));
    let mut out = LayerStack::zeros(&layout);
    let mut blocks = layout.split_mut(out.data_mut());
    for (fp, layer) in sensor.layer_footprints.iter().zip(blocks.iter_mut()) {
        fp.scatter(wavefront, layer);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{GuideStar, ARCSEC};
    use crate::grid::BlockLayout;
    use crate::linalg::dot;
    use crate::presets;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_layers(layout: &BlockLayout, rng: &mut ChaCha8Rng) -> LayerStack {
        LayerStack::from_vec(layout, (0..layout.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn layout(g: &SystemGeometry) -> BlockLayout {
        BlockLayout::square(g.layers.iter().map(|l| l.side()))
    }

    #[test]
    fn ground_layer_aligned_with_aperture_is_identity_sampling() {
        // 1 layer at h=0 whose 8x8 grid coincides with an 7x7-subaperture grid
        let g = presets::mini()
            .with_config(|c| {
                c.wfs.truncate(1);
                c.wfs[0].n_subap = 7;
                c.guide_stars.truncate(1);
                c.guide_stars[0].kind = crate::config::StarKind::Ngs;
                c.guide_stars[0].height = None;
                c.guide_stars[0].direction = [0.0, 0.0];
                c.layers.truncate(1);
                c.layers[0].relative_strength = 1.0;
                c.dms.truncate(1);
            })
            .unwrap();
        // layer extent is padded, so stretch the layer to coincide with the aperture
        let mut g = g;
        g.layers[0].extent = g.telescope_diameter;
        g.dms[0].extent = g.telescope_diameter;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layers = random_layers(&layout(&g), &mut rng);
        for dir in [[0.0, 0.0], [3.0 * ARCSEC, -ARCSEC]] {
            g.guide_stars[0] = GuideStar::ngs(dir);
            let wf = propagate(&g, 0, &layers).unwrap();
            for (a, b) in wf.iter().zip(layers.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_at_sodium_height_collapses_to_one_point() {
        let mut g = presets::mini();
        let h = g.guide_stars[0].height;
        // cone apex: move the top layer to the LGS altitude
        g.layers[1].height = h;
        g.dms[1].conjugation_height = h;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut layers = random_layers(&layout(&g), &mut rng);
        layers.block_mut(0).fill(0.0);
        let wf = propagate(&g, 0, &layers).unwrap();
        assert!(wf.iter().all(|&v| (v - wf[0]).abs() < 1e-12));
    }

    #[test]
    fn adjoint_identity_on_shipped_configs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = presets::mini();
        let lay = layout(&g);
        for wfs in 0..g.n_wfs() {
            let n = g.wfs_list[wfs].n_subap + 1;
            for _ in 0..1000 {
                let x = random_layers(&lay, &mut rng);
                let v: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let px = propagate(&g, wfs, &x).unwrap();
                let ptv = propagate_transpose(&g, wfs, &v).unwrap();
                let lhs = dot(&px, &v);
                let rhs = dot(x.data(), ptv.data());
                let scale: f64 = px.iter().zip(&v).map(|(a, b)| (a * b).abs()).sum();
                assert!((lhs - rhs).abs() <= 1e-12 * scale);
            }
        }
    }

    #[test]
    fn zero_wavefront_gives_zero_increment_and_bad_input_fails() {
        let g = presets::mini();
        let inc = propagate_transpose(&g, 1, &[0.0; 25]).unwrap();
        assert!(inc.data().iter().all(|&v| v == 0.0));
        assert!(propagate_transpose(&g, 1, &[0.0; 24]).is_err());
        assert!(propagate_transpose(&g, 7, &[0.0; 25]).is_err());
    }

    #[test]
    fn star_outside_meta_pupil_is_an_error() {
        let mut g = presets::mini();
        g.guide_stars[1] = GuideStar::ngs([200.0 * ARCSEC, 0.0]);
        let layers = LayerStack::zeros(&layout(&g));
        assert!(matches!(propagate(&g, 1, &layers), Err(Error::OutOfGrid { .. })));
    }
}
