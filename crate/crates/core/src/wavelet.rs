//! Periodic 2D Daubechies wavelet transform on 2^J x 2^J grids.
//!
//! The decomposition is the separable Mallat scheme: each level transforms the
//! rows and then the columns of the current coarse block, halving it, until a
//! single scaling coefficient remains. Boundaries wrap periodically, which
//! keeps the transform exactly orthonormal on every power-of-two side.
//!
//! After a full decomposition a coefficient grid is laid out as
//!
//! ```text
//!   (0,0)            coarse coefficient, scale 0
//!   rows [0,s)  cols [s,2s)   detail high in x,  scale k+1 where s = 2^k
//!   rows [s,2s) cols [0,s)    detail high in y,  scale k+1
//!   rows [s,2s) cols [s,2s)   detail high in xy, scale k+1
//! ```

use crate::error::{Error, Result};

/// Daubechies low-pass analysis filters, orders 1 through 10 (db1 = Haar).
/// Minimum-phase factorization, normalized so the taps sum to √2.
#[allow(clippy::excessive_precision)]
pub const DAUBECHIES: [&[f64]; 10] = [
    &[std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2],
    &[
        0.48296291314453414337,
        0.83651630373780790558,
        0.22414386804201338103,
        -0.12940952255126038117,
    ],
    &[
        0.332670552950082616,
        0.80689150931109257649,
        0.4598775021184915701,
        -0.1350110200102545887,
        -0.085441273882026661693,
        0.035226291885709536603,
    ],
    &[
        0.23037781330889650086,
        0.71484657055291564709,
        0.63088076792985890788,
        -0.027983769416859854211,
        -0.18703481171909308408,
        0.030841381835560763627,
        0.032883011666885199735,
        -0.010597401785069032105,
    ],
    &[
        0.16010239797419291448,
        0.60382926979718967054,
        0.72430852843777292773,
        0.13842814590132073151,
        -0.24229488706638203186,
        -0.032244869584638374648,
        0.077571493840045713523,
        -0.0062414902127982742742,
        -0.012580751999081999469,
        0.003335725285473771278,
    ],
    &[
        0.11154074335010946362,
        0.49462389039845308568,
        0.75113390802109535068,
        0.31525035170919762909,
        -0.22626469396543982008,
        -0.12976686756726193556,
        0.097501605587323049102,
        0.027522865530305728626,
        -0.031582039317486029565,
        0.00055384220116149613925,
        0.0047772575109455106396,
        -0.0010773010853084795649,
    ],
    &[
        0.07785205408500917902,
        0.39653931948191730654,
        0.72913209084623511992,
        0.46978228740519312247,
        -0.14390600392856497541,
        -0.22403618499387498264,
        0.071309219266830264751,
        0.080612609151083071913,
        -0.03802993693501441358,
        -0.016574541630666880654,
        0.012550998556099840613,
        0.00042957797292136652113,
        -0.0018016407040474909153,
        0.00035371379997452024845,
    ],
    &[
        0.054415842243104009955,
        0.31287159091429997066,
        0.67563073629728980681,
        0.58535468365420671277,
        -0.015829105256349305667,
        -0.28401554296154692652,
        0.00047248457391328277036,
        0.12874742662047845886,
        -0.01736930100180754617,
        -0.044088253930794751507,
        0.013981027917398281649,
        0.0087460940474057767164,
        -0.0048703529934515743104,
        -0.0003917403733769470463,
        0.00067544940645056936637,
        -0.00011747678412476953373,
    ],
    &[
        0.038077947363878346589,
        0.24383467461259035373,
        0.6048231236901111119,
        0.65728807805130053808,
        0.13319738582500757619,
        -0.29327378327917490881,
        -0.096840783222976460514,
        0.14854074933810638014,
        0.030725681479333379212,
        -0.067632829061329973676,
        0.00025094711483145195759,
        0.022361662123679097205,
        -0.0047232047577513972779,
        -0.0042815036824634298345,
        0.0018476468830562264766,
        0.00023038576352319596721,
        -0.00025196318894271013697,
        0.000039347320316271599481,
    ],
    &[
        0.026670057900555553587,
        0.18817680007769148902,
        0.52720118893172558648,
        0.68845903945360356574,
        0.28117234366057746075,
        -0.24984642432731537942,
        -0.1959462743773770435,
        0.12736934033579326008,
        0.09305736460357235116,
        -0.071394147166397087145,
        -0.029457536821875812858,
        0.03321267405934100174,
        0.0036065535669561696554,
        -0.010733175483330575044,
        0.0013953517470529011658,
        0.0019924052951850561172,
        -0.00068585669495971162656,
        -0.00011646685512928545095,
        0.000093588670320069591334,
        -0.000013264202894521244812,
    ],
];

#[derive(Debug, Clone, PartialEq)]
pub struct Wavelet {
    order: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Wavelet {
    pub fn daubechies(order: usize) -> Result<Self> {
        if !(1..=10).contains(&order) {
            return Err(Error::Validation(format!("Daubechies order {order} not in 1..=10")));
        }
        let lo = DAUBECHIES[order - 1].to_vec();
        let len = lo.len();
        // quadrature mirror: g[n] = (-1)^n h[L-1-n]
        let hi = (0..len)
            .map(|n| {
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                sign * lo[len - 1 - n]
            })
            .collect();
        Ok(Self { order, lo, hi })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn low_pass(&self) -> &[f64] {
        &self.lo
    }

    pub fn high_pass(&self) -> &[f64] {
        &self.hi
    }

    /// Full forward decomposition of a `side x side` row-major grid, in place.
    pub fn forward_in_place(&self, data: &mut [f64], side: usize) -> Result<()> {
        check_grid(data.len(), side)?;
        self.analysis_2d(data, side);
        Ok(())
    }

    /// Full reconstruction from a coefficient grid, in place.
    pub fn inverse_in_place(&self, data: &mut [f64], side: usize) -> Result<()> {
        check_grid(data.len(), side)?;
        let mut scratch = vec![0.0; side * side];
        let mut m = 2;
        while m <= side {
            self.synthesize_columns(data, side, m, &mut scratch);
            self.synthesize_rows(data, side, m, &mut scratch);
            m *= 2;
        }
        Ok(())
    }

    /// Applies the transpose of the inverse transform, in place.
    ///
    /// Transposing each synthesis step of [`Wavelet::inverse_in_place`] gives
    /// the periodic analysis step, so for these orthonormal filters this agrees
    /// with the forward transform.
    pub fn inverse_transposed_in_place(&self, data: &mut [f64], side: usize) -> Result<()> {
        check_grid(data.len(), side)?;
        self.analysis_2d(data, side);
        Ok(())
    }

    fn analysis_2d(&self, data: &mut [f64], side: usize) {
        let mut scratch = vec![0.0; side * side];
        let mut m = side;
        while m >= 2 {
            self.analyze_rows(data, side, m, &mut scratch);
            self.analyze_columns(data, side, m, &mut scratch);
            m /= 2;
        }
    }

    fn analyze_rows(&self, data: &mut [f64], side: usize, m: usize, scratch: &mut [f64]) {
        let half = m / 2;
        let buf = &mut scratch[..m];
        for r in 0..m {
            let row = &mut data[r * side..r * side + m];
            for k in 0..half {
                let (mut a, mut d) = (0.0, 0.0);
                for (n, (&h, &g)) in self.lo.iter().zip(&self.hi).enumerate() {
                    let x = row[(2 * k + n) % m];
                    a += h * x;
                    d += g * x;
                }
                buf[k] = a;
                buf[half + k] = d;
            }
            row.copy_from_slice(buf);
        }
    }

    fn analyze_columns(&self, data: &mut [f64], side: usize, m: usize, scratch: &mut [f64]) {
        let half = m / 2;
        // output row k is a filtered combination of whole input rows, so work row-wise
        let out = &mut scratch[..m * m];
        out.fill(0.0);
        for k in 0..half {
            for (n, (&h, &g)) in self.lo.iter().zip(&self.hi).enumerate() {
                let src = (2 * k + n) % m;
                let src_row = &data[src * side..src * side + m];
                let (lo_part, hi_part) = out.split_at_mut(half * m);
                let lo_row = &mut lo_part[k * m..(k + 1) * m];
                let hi_row = &mut hi_part[k * m..(k + 1) * m];
                for c in 0..m {
                    lo_row[c] += h * src_row[c];
                    hi_row[c] += g * src_row[c];
                }
            }
        }
        for r in 0..m {
            data[r * side..r * side + m].copy_from_slice(&out[r * m..(r + 1) * m]);
        }
    }

    fn synthesize_rows(&self, data: &mut [f64], side: usize, m: usize, scratch: &mut [f64]) {
        let half = m / 2;
        let buf = &mut scratch[..m];
        for r in 0..m {
            let row = &mut data[r * side..r * side + m];
            buf.fill(0.0);
            for k in 0..half {
                let (a, d) = (row[k], row[half + k]);
                for (n, (&h, &g)) in self.lo.iter().zip(&self.hi).enumerate() {
                    buf[(2 * k + n) % m] += h * a + g * d;
                }
            }
            row.copy_from_slice(buf);
        }
    }

    fn synthesize_columns(&self, data: &mut [f64], side: usize, m: usize, scratch: &mut [f64]) {
        let half = m / 2;
        let out = &mut scratch[..m * m];
        out.fill(0.0);
        for k in 0..half {
            let lo_row = &data[k * side..k * side + m];
            let hi_row = &data[(half + k) * side..(half + k) * side + m];
            for (n, (&h, &g)) in self.lo.iter().zip(&self.hi).enumerate() {
                let dst = (2 * k + n) % m;
                let dst_row = &mut out[dst * m..(dst + 1) * m];
                for c in 0..m {
                    dst_row[c] += h * lo_row[c] + g * hi_row[c];
                }
            }
        }
        for r in 0..m {
            data[r * side..r * side + m].copy_from_slice(&out[r * m..(r + 1) * m]);
        }
    }
}

fn check_grid(len: usize, side: usize) -> Result<()> {
    if !side.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(side));
    }
    if len != side * side {
        return Err(Error::Dimension {
            context: "wavelet grid",
            expected: side * side,
            actual: len,
        });
    }
    Ok(())
}

pub fn dwt_forward(wavelet: &Wavelet, grid: &[f64], side: usize) -> Result<Vec<f64>> {
    let mut out = grid.to_vec();
    wavelet.forward_in_place(&mut out, side)?;
    Ok(out)
}

pub fn dwt_inverse(wavelet: &Wavelet, coeffs: &[f64], side: usize) -> Result<Vec<f64>> {
    let mut out = coeffs.to_vec();
    wavelet.inverse_in_place(&mut out, side)?;
    Ok(out)
}

pub fn dwt_inverse_transposed(wavelet: &Wavelet, grid: &[f64], side: usize) -> Result<Vec<f64>> {
    let mut out = grid.to_vec();
    wavelet.inverse_transposed_in_place(&mut out, side)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Orientation {
    Coarse,
    HighX,
    HighY,
    HighXY,
}

/// A dyadic sub-band of a fully decomposed grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubBand {
    /// 0 for the coarse coefficient, k+1 for details of block side 2^k.
    pub scale: u32,
    pub orientation: Orientation,
}

impl SubBand {
    /// Block side of this sub-band.
    pub fn side(&self) -> usize {
        if self.scale == 0 {
            1
        } else {
            1 << (self.scale - 1)
        }
    }

    /// (row, column) of the block's upper-left corner.
    pub fn origin(&self) -> (usize, usize) {
        let s = self.side();
        match self.orientation {
            Orientation::Coarse => (0, 0),
            Orientation::HighX => (0, s),
            Orientation::HighY => (s, 0),
            Orientation::HighXY => (s, s),
        }
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        let (r0, c0) = self.origin();
        let s = self.side();
        (r0..r0 + s).contains(&row) && (c0..c0 + s).contains(&col)
    }
}

/// Sub-band of position (row, col) in a fully decomposed grid.
pub fn sub_band_of(row: usize, col: usize) -> SubBand {
    if row == 0 && col == 0 {
        return SubBand {
            scale: 0,
            orientation: Orientation::Coarse,
        };
    }
    let k = usize::BITS - 1 - row.max(col).leading_zeros();
    let s = 1usize << k;
    let orientation = match (row >= s, col >= s) {
        (false, true) => Orientation::HighX,
        (true, false) => Orientation::HighY,
        _ => Orientation::HighXY,
    };
    SubBand {
        scale: k + 1,
        orientation,
    }
}

/// All sub-bands of a grid of order `j` (side 2^j), coarse first.
pub fn sub_bands(j: u32) -> Vec<SubBand> {
    let mut bands = vec![SubBand {
        scale: 0,
        orientation: Orientation::Coarse,
    }];
    for scale in 1..=j {
        for orientation in [Orientation::HighX, Orientation::HighY, Orientation::HighXY] {
            bands.push(SubBand { scale, orientation });
        }
    }
    bands
}
