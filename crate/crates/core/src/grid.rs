//! Grid layouts and the separable bilinear sampling stencil shared by the
//! propagation, fitting and mirror operators.

use std::ops::Range;

use crate::config::GuideStar;
use crate::error::{Error, Result};

/// Index tolerance (in grid cells) for points that land on a grid edge.
const EDGE_TOL: f64 = 1e-9;

/// Contiguous blocks of a flat vector, e.g. one block per layer or per WFS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLayout {
    lens: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockLayout {
    pub fn from_lens(lens: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(lens.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &l in &lens {
            acc += l;
            offsets.push(acc);
        }
        Self { lens, offsets }
    }

    /// Square blocks of the given sides.
    pub fn square(sides: impl IntoIterator<Item = usize>) -> Self {
        Self::from_lens(sides.into_iter().map(|s| s * s).collect())
    }

    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_blocks(&self) -> usize {
        self.lens.len()
    }

    pub fn block_len(&self, i: usize) -> usize {
        self.lens[i]
    }

    pub fn range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn block<'a>(&self, v: &'a [f64], i: usize) -> &'a [f64] {
        &v[self.range(i)]
    }

    pub fn block_mut<'a>(&self, v: &'a mut [f64], i: usize) -> &'a mut [f64] {
        &mut v[self.range(i)]
    }

    pub fn split<'a>(&self, mut v: &'a [f64]) -> Vec<&'a [f64]> {
        let mut out = Vec::with_capacity(self.lens.len());
        for &l in &self.lens {
            let (head, tail) = v.split_at(l);
            out.push(head);
            v = tail;
        }
        out
    }

    pub fn split_mut<'a>(&self, mut v: &'a mut [f64]) -> Vec<&'a mut [f64]> {
        let mut out = Vec::with_capacity(self.lens.len());
        for &l in &self.lens {
            let (head, tail) = v.split_at_mut(l);
            out.push(head);
            v = tail;
        }
        out
    }
}

/// A square nodal grid centered on the optical axis at some altitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneGrid {
    pub side: usize,
    pub extent: f64,
    pub height: f64,
}

impl PlaneGrid {
    pub fn spacing(&self) -> f64 {
        self.extent / (self.side - 1) as f64
    }

    pub fn origin(&self) -> f64 {
        -0.5 * self.extent
    }

    pub fn coord(&self, k: usize) -> f64 {
        self.origin() + k as f64 * self.spacing()
    }
}

/// Evaluation nodes on the aperture (or on an actuator grid): `nodes` points
/// per side starting at `origin` with step `spacing`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApertureGrid {
    pub nodes: usize,
    pub spacing: f64,
    pub origin: f64,
}

impl ApertureGrid {
    /// Corner nodes of an `n_subap x n_subap` Shack-Hartmann grid over diameter `d`.
    pub fn shack_hartmann(d: f64, n_subap: usize) -> Self {
        Self {
            nodes: n_subap + 1,
            spacing: d / n_subap as f64,
            origin: -0.5 * d,
        }
    }

    /// Nodes coinciding with the points of `plane`.
    pub fn matching(plane: &PlaneGrid) -> Self {
        Self {
            nodes: plane.side,
            spacing: plane.spacing(),
            origin: plane.origin(),
        }
    }

    pub fn coord(&self, k: usize) -> f64 {
        self.origin + k as f64 * self.spacing
    }

    pub fn len(&self) -> usize {
        self.nodes * self.nodes
    }

    pub fn is_empty(&self) -> bool {
        self.nodes == 0
    }
}

/// Bilinear sampling of one plane at the affine image `scale * x + offset` of
/// every aperture node. The map is separable, so each column (row) of the
/// aperture grid shares a plane column (row) index and weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Footprint {
    plane_side: usize,
    cols: Vec<(usize, f64)>,
    rows: Vec<(usize, f64)>,
}

impl Footprint {
    pub fn new(aperture: &ApertureGrid, plane: &PlaneGrid, scale: f64, offset: [f64; 2]) -> Result<Self> {
        let locate = |p: f64, other: f64| -> Result<(usize, f64)> {
            let u = (p - plane.origin()) / plane.spacing();
            let last = (plane.side - 1) as f64;
            if !(u >= -EDGE_TOL && u <= last + EDGE_TOL) {
                return Err(Error::OutOfGrid {
                    x: p,
                    y: other,
                    extent: plane.extent,
                    height: plane.height,
                });
            }
            let u = u.clamp(0.0, last);
            let i = (u.floor() as usize).min(plane.side - 2);
            Ok((i, u - i as f64))
        };
        let mut cols = Vec::with_capacity(aperture.nodes);
        let mut rows = Vec::with_capacity(aperture.nodes);
        for k in 0..aperture.nodes {
            let x = scale * aperture.coord(k) + offset[0];
            let y = scale * aperture.coord(k) + offset[1];
            cols.push(locate(x, y)?);
            rows.push(locate(y, x)?);
        }
        Ok(Self {
            plane_side: plane.side,
            cols,
            rows,
        })
    }

    /// Footprint of the beam towards `star` on `plane`.
    pub fn for_star(aperture: &ApertureGrid, plane: &PlaneGrid, star: &GuideStar) -> Result<Self> {
        let h = plane.height;
        Self::new(
            aperture,
            plane,
            star.cone_scale(h),
            [star.direction[0] * h, star.direction[1] * h],
        )
    }

    pub fn aperture_nodes(&self) -> usize {
        self.cols.len()
    }

    /// `out[i, j] += plane(scale * x_ij + offset)`.
    pub fn accumulate(&self, plane: &[f64], out: &mut [f64]) {
        let n = self.cols.len();
        let side = self.plane_side;
        debug_assert_eq!(plane.len(), side * side);
        debug_assert_eq!(out.len(), n * n);
        for (i, &(iy, fy)) in self.rows.iter().enumerate() {
            let r0 = &plane[iy * side..(iy + 1) * side];
            let r1 = &plane[(iy + 1) * side..(iy + 2) * side];
            let gy = 1.0 - fy;
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &(ix, fx)) in out_row.iter_mut().zip(&self.cols) {
                let gx = 1.0 - fx;
                *o += gy * (gx * r0[ix] + fx * r0[ix + 1]) + fy * (gx * r1[ix] + fx * r1[ix + 1]);
            }
        }
    }

    /// Transpose of [`Footprint::accumulate`]: scatter-adds each aperture
    /// value into its four neighbouring plane nodes.
    pub fn scatter(&self, values: &[f64], plane: &mut [f64]) {
        let n = self.cols.len();
        let side = self.plane_side;
        debug_assert_eq!(plane.len(), side * side);
        debug_assert_eq!(values.len(), n * n);
        for (i, &(iy, fy)) in self.rows.iter().enumerate() {
            let gy = 1.0 - fy;
            let row = &values[i * n..(i + 1) * n];
            let (head, tail) = plane.split_at_mut((iy + 1) * side);
            let r0 = &mut head[iy * side..];
            let r1 = &mut tail[..side];
            for (&v, &(ix, fx)) in row.iter().zip(&self.cols) {
                let gx = 1.0 - fx;
                let a = gy * v;
                let b = fy * v;
                r0[ix] += gx * a;
                r0[ix + 1] += fx * a;
                r1[ix] += gx * b;
                r1[ix + 1] += fx * b;
            }
        }
    }
}
