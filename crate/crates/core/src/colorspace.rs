//! sRGB <-> CIELab conversion under a D65 / 2 degree observer.
//!
//! The pixel-level functions are generic so the network stack can run the
//! same formulas (and their Jacobian) in `f32` or `f64`.

use std::sync::LazyLock;

use num_traits::{Float, FromPrimitive};
use thiserror::Error;

use crate::tensor::{Real, Tensor};

/// D65 reference white in XYZ, `Y` normalized to one.
pub const WHITE_D65: [f64; 3] = [0.95047, 1.0, 1.08883];

/// Divisor mapping `L` onto `[0, 1]` for the network.
pub const L_SCALE: f64 = 100.0;
/// Divisor mapping `a`/`b` onto roughly `[-1, 1]` for the network.
pub const AB_SCALE: f64 = 110.0;

const DELTA: f64 = 6.0 / 29.0;
const SRGB_KNEE_LINEAR: f64 = 0.003_130_8;
const SRGB_KNEE_ENCODED: f64 = 0.040_45;

/// Linear sRGB -> XYZ. Rows are rescaled so they sum exactly to the white
/// point, which keeps equal-RGB colors on the neutral axis.
static RGB_TO_XYZ: LazyLock<[[f64; 3]; 3]> = LazyLock::new(|| {
    let mut m = [
        [0.412_456_4, 0.357_576_1, 0.180_437_5],
        [0.212_672_9, 0.715_152_2, 0.072_175_0],
        [0.019_333_9, 0.119_192_0, 0.950_304_1],
    ];
    for (row, white) in m.iter_mut().zip(WHITE_D65) {
        let sum: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v *= white / sum;
        }
    }
    m
});

static XYZ_TO_RGB: LazyLock<[[f64; 3]; 3]> = LazyLock::new(|| invert3(&RGB_TO_XYZ));

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c = |r0: usize, c0: usize, r1: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let cof = [
        [c(1, 1, 2, 2), -c(1, 0, 2, 2), c(1, 0, 2, 1)],
        [-c(0, 1, 2, 2), c(0, 0, 2, 2), -c(0, 0, 2, 1)],
        [c(0, 1, 1, 2), -c(0, 0, 1, 2), c(0, 0, 1, 1)],
    ];
    let det = m[0][0] * cof[0][0] + m[0][1] * cof[0][1] + m[0][2] * cof[0][2];
    let mut inv = [[0.0; 3]; 3];
    for (r, row) in inv.iter_mut().enumerate() {
        for (col, v) in row.iter_mut().enumerate() {
            *v = cof[col][r] / det;
        }
    }
    inv
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ColorError {
    #[error("pixel {index} has a non-finite component")]
    NonFinite { index: usize },
    #[error("pixel {index} component {value} outside {range}")]
    OutOfRange {
        index: usize,
        value: f64,
        range: &'static str,
    },
    #[error("raster of {width}x{height} needs {expected} pixels, got {actual}")]
    Dimensions {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },
}

#[inline]
fn k<T: FromPrimitive>(v: f64) -> T {
    T::from_f64(v).expect("constant representable")
}

/// sRGB transfer function, encoded -> linear.
pub fn srgb_decode<T: Float + FromPrimitive>(c: T) -> T {
    if c <= k(SRGB_KNEE_ENCODED) {
        c / k(12.92)
    } else {
        ((c + k(0.055)) / k(1.055)).powf(k(2.4))
    }
}

/// sRGB transfer function, linear -> encoded.
pub fn srgb_encode<T: Float + FromPrimitive>(c: T) -> T {
    if c <= k(SRGB_KNEE_LINEAR) {
        c * k(12.92)
    } else {
        k::<T>(1.055) * c.powf(k(1.0 / 2.4)) - k(0.055)
    }
}

fn srgb_encode_slope<T: Float + FromPrimitive>(c: T) -> T {
    if c <= k(SRGB_KNEE_LINEAR) {
        k(12.92)
    } else {
        k::<T>(1.055 / 2.4) * c.powf(k(1.0 / 2.4 - 1.0))
    }
}

fn lab_f<T: Float + FromPrimitive>(t: T) -> T {
    if t > k(DELTA * DELTA * DELTA) {
        t.cbrt()
    } else {
        t / k(3.0 * DELTA * DELTA) + k(4.0 / 29.0)
    }
}

fn lab_f_inv<T: Float + FromPrimitive>(u: T) -> T {
    if u > k(DELTA) {
        u * u * u
    } else {
        k::<T>(3.0 * DELTA * DELTA) * (u - k(4.0 / 29.0))
    }
}

fn lab_f_inv_slope<T: Float + FromPrimitive>(u: T) -> T {
    if u > k(DELTA) {
        k::<T>(3.0) * u * u
    } else {
        k(3.0 * DELTA * DELTA)
    }
}

fn mat_vec<T: Float + FromPrimitive>(m: &[[f64; 3]; 3], v: [T; 3]) -> [T; 3] {
    let mut out = [T::zero(); 3];
    for (o, row) in out.iter_mut().zip(m) {
        *o = k::<T>(row[0]) * v[0] + k::<T>(row[1]) * v[1] + k::<T>(row[2]) * v[2];
    }
    out
}

/// Converts one encoded sRGB triple in `[0, 1]` to `(L, a, b)`.
pub fn rgb_to_lab<T: Float + FromPrimitive>(rgb: [T; 3]) -> [T; 3] {
    let lin = rgb.map(srgb_decode);
    let xyz = mat_vec(&RGB_TO_XYZ, lin);
    let fx = lab_f(xyz[0] / k(WHITE_D65[0]));
    let fy = lab_f(xyz[1] / k(WHITE_D65[1]));
    let fz = lab_f(xyz[2] / k(WHITE_D65[2]));
    [
        k::<T>(116.0) * fy - k(16.0),
        k::<T>(500.0) * (fx - fy),
        k::<T>(200.0) * (fy - fz),
    ]
}

/// Converts `(L, a, b)` to encoded sRGB, clamping out-of-gamut colors to `[0, 1]`.
pub fn lab_to_rgb<T: Float + FromPrimitive>(lab: [T; 3]) -> [T; 3] {
    lab_to_rgb_jacobian(lab).0
}

/// [`lab_to_rgb`] together with `d rgb[i] / d lab[j]`.
///
/// Channels clipped by the gamut clamp get a zero row.
pub fn lab_to_rgb_jacobian<T: Float + FromPrimitive>(lab: [T; 3]) -> ([T; 3], [[T; 3]; 3]) {
    let fy = (lab[0] + k(16.0)) / k(116.0);
    let fx = fy + lab[1] / k(500.0);
    let fz = fy - lab[2] / k(200.0);
    let xyz = [
        k::<T>(WHITE_D65[0]) * lab_f_inv(fx),
        k::<T>(WHITE_D65[1]) * lab_f_inv(fy),
        k::<T>(WHITE_D65[2]) * lab_f_inv(fz),
    ];
    let sx = k::<T>(WHITE_D65[0]) * lab_f_inv_slope(fx);
    let sy = k::<T>(WHITE_D65[1]) * lab_f_inv_slope(fy);
    let sz = k::<T>(WHITE_D65[2]) * lab_f_inv_slope(fz);
    // d xyz / d lab
    let inv116 = k::<T>(1.0 / 116.0);
    let dxyz = [
        [sx * inv116, sx * k(1.0 / 500.0), T::zero()],
        [sy * inv116, T::zero(), T::zero()],
        [sz * inv116, T::zero(), -sz * k(1.0 / 200.0)],
    ];
    let lin = mat_vec(&XYZ_TO_RGB, xyz);
    let m = &*XYZ_TO_RGB;
    let mut rgb = [T::zero(); 3];
    let mut jac = [[T::zero(); 3]; 3];
    for c in 0..3 {
        let l = lin[c];
        if l < T::zero() || l > T::one() {
            rgb[c] = srgb_encode(l.max(T::zero()).min(T::one()));
            continue;
        }
        rgb[c] = srgb_encode(l);
        let slope = srgb_encode_slope(l);
        for j in 0..3 {
            let dl = k::<T>(m[c][0]) * dxyz[0][j] + k::<T>(m[c][1]) * dxyz[1][j] + k::<T>(m[c][2]) * dxyz[2][j];
            jac[c][j] = slope * dl;
        }
    }
    (rgb, jac)
}

/// Encoded sRGB raster, row-major, components in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

/// CIELab raster with the same layout as [`RgbImage`].
#[derive(Clone, Debug, PartialEq)]
pub struct LabImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

fn check_dims(width: usize, height: usize, actual: usize) -> Result<(), ColorError> {
    let expected = width * height;
    if width == 0 || height == 0 || expected != actual {
        return Err(ColorError::Dimensions {
            width,
            height,
            expected,
            actual,
        });
    }
    Ok(())
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self, ColorError> {
        check_dims(width, height, data.len())?;
        let img = Self { width, height, data };
        img.validate()?;
        Ok(img)
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![rgb; width * height],
        }
    }

    pub fn validate(&self) -> Result<(), ColorError> {
        for (index, px) in self.data.iter().enumerate() {
            for &v in px {
                if !v.is_finite() {
                    return Err(ColorError::NonFinite { index });
                }
                if !(0.0..=1.0).contains(&v) {
                    return Err(ColorError::OutOfRange {
                        index,
                        value: v,
                        range: "[0, 1]",
                    });
                }
            }
        }
        Ok(())
    }

    /// Channel-major copy for the network.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let n = self.width * self.height;
        let mut t = Tensor::zeros(3, self.height, self.width);
        for (i, px) in self.data.iter().enumerate() {
            for c in 0..3 {
                t.data[c * n + i] = T::lit(px[c]);
            }
        }
        t
    }

    /// Builds an image from a 3-channel tensor, clamping into `[0, 1]`.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Self {
        assert_eq!(t.channels, 3, "rgb tensor needs 3 channels");
        let n = t.plane();
        let data = (0..n)
            .map(|i| std::array::from_fn(|c| t.data[c * n + i].to_f64().unwrap().clamp(0.0, 1.0)))
            .collect();
        Self {
            width: t.width,
            height: t.height,
            data,
        }
    }
}

impl LabImage {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self, ColorError> {
        check_dims(width, height, data.len())?;
        for (index, px) in data.iter().enumerate() {
            if px.iter().any(|v| !v.is_finite()) {
                return Err(ColorError::NonFinite { index });
            }
            if !(0.0..=100.0).contains(&px[0]) {
                return Err(ColorError::OutOfRange {
                    index,
                    value: px[0],
                    range: "L in [0, 100]",
                });
            }
            for &v in &px[1..] {
                if !(-128.0..=127.0).contains(&v) {
                    return Err(ColorError::OutOfRange {
                        index,
                        value: v,
                        range: "a/b in [-128, 127]",
                    });
                }
            }
        }
        Ok(Self { width, height, data })
    }
}

pub fn srgb_to_lab(img: &RgbImage) -> Result<LabImage, ColorError> {
    img.validate()?;
    let data = img
        .data
        .iter()
        .map(|&px| {
            let [l, a, b] = rgb_to_lab(px);
            [l.clamp(0.0, 100.0), a.clamp(-128.0, 127.0), b.clamp(-128.0, 127.0)]
        })
        .collect();
    Ok(LabImage {
        width: img.width,
        height: img.height,
        data,
    })
}

pub fn lab_to_srgb(img: &LabImage) -> Result<RgbImage, ColorError> {
    if let Some(index) = img.data.iter().position(|px| px.iter().any(|v| !v.is_finite())) {
        return Err(ColorError::NonFinite { index });
    }
    Ok(RgbImage {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|&px| lab_to_rgb(px)).collect(),
    })
}

/// `(L/100, a/110, b/110)` as a 3-channel tensor.
pub fn normalize_lab<T: Real>(img: &LabImage) -> Tensor<T> {
    let n = img.width * img.height;
    let mut t = Tensor::zeros(3, img.height, img.width);
    for (i, px) in img.data.iter().enumerate() {
        t.data[i] = T::lit(px[0] / L_SCALE);
        t.data[n + i] = T::lit(px[1] / AB_SCALE);
        t.data[2 * n + i] = T::lit(px[2] / AB_SCALE);
    }
    t
}

/// Inverse of [`normalize_lab`]. Values are clamped into the Lab ranges, which
/// is a no-op for anything `normalize_lab` produced.
pub fn denormalize_lab<T: Real>(t: &Tensor<T>) -> LabImage {
    assert_eq!(t.channels, 3, "normalized Lab needs 3 channels");
    let n = t.plane();
    let f = |v: T| v.to_f64().unwrap();
    let data = (0..n)
        .map(|i| {
            [
                (f(t.data[i]) * L_SCALE).clamp(0.0, 100.0),
                (f(t.data[n + i]) * AB_SCALE).clamp(-128.0, 127.0),
                (f(t.data[2 * n + i]) * AB_SCALE).clamp(-128.0, 127.0),
            ]
        })
        .collect();
    LabImage {
        width: t.width,
        height: t.height,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(rgb: [f64; 3]) -> [f64; 3] {
        srgb_to_lab(&RgbImage::filled(1, 1, rgb)).unwrap().data[0]
    }

    #[test]
    fn white_and_black() {
        let w = one([1.0, 1.0, 1.0]);
        assert!((w[0] - 100.0).abs() < 1e-9 && w[1].abs() < 1e-9 && w[2].abs() < 1e-9);
        assert_eq!(one([0.0, 0.0, 0.0]), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn red_matches_reference() {
        let r = one([1.0, 0.0, 0.0]);
        for (got, want) in r.iter().zip([53.241, 80.092, 67.203]) {
            assert!((got - want).abs() < 1e-3, "{r:?}");
        }
        let back = lab_to_rgb([53.241, 80.092, 67.203]);
        for (got, want) in back.iter().zip([1.0, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-3, "{back:?}");
        }
    }

    #[test]
    fn inverse_of_white() {
        let rgb = lab_to_rgb([100.0, 0.0, 0.0]);
        assert!(rgb.iter().all(|v| (v - 1.0).abs() < 1e-4));
    }

    #[test]
    fn out_of_gamut_is_clamped() {
        let lab = LabImage {
            width: 1,
            height: 1,
            data: vec![[50.0, 200.0, 0.0]],
        };
        let rgb = lab_to_srgb(&lab).unwrap();
        rgb.validate().unwrap();
        // linear red overshoots and green undershoots; both get clipped
        assert!((rgb.data[0][0] - 1.0).abs() < 1e-12);
        assert_eq!(rgb.data[0][1], 0.0);
    }

    #[test]
    fn gray_axis_neutral_and_monotone() {
        let mut last = -1.0;
        for i in 0..=1000 {
            let g = i as f64 / 1000.0;
            let [l, a, b] = one([g, g, g]);
            assert!(a.abs() < 1e-6 && b.abs() < 1e-6, "g={g} a={a} b={b}");
            assert!(l > last, "L not increasing at g={g}");
            last = l;
        }
    }

    #[test]
    fn non_finite_rejected() {
        let img = RgbImage {
            width: 1,
            height: 1,
            data: vec![[f64::NAN, 0.0, 0.0]],
        };
        assert_eq!(srgb_to_lab(&img), Err(ColorError::NonFinite { index: 0 }));
        let lab = LabImage {
            width: 1,
            height: 1,
            data: vec![[f64::INFINITY, 0.0, 0.0]],
        };
        assert!(lab_to_srgb(&lab).is_err());
    }

    #[test]
    fn normalization_examples() {
        let lab = LabImage::new(2, 1, vec![[100.0, 0.0, -55.0], [12.5, 55.0, 3.0]]).unwrap();
        let t = normalize_lab::<f64>(&lab);
        assert_eq!(t.at(0, 0, 0), 1.0);
        assert_eq!(t.at(1, 0, 0), 0.0);
        assert_eq!(t.at(1, 0, 1), 0.5);
        assert_eq!(denormalize_lab(&t), lab);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let lab = [47.0, 21.0, -13.0];
        let (_, jac) = lab_to_rgb_jacobian(lab);
        let h = 1e-6;
        for j in 0..3 {
            let mut p = lab;
            let mut m = lab;
            p[j] += h;
            m[j] -= h;
            let (rp, rm) = (lab_to_rgb(p), lab_to_rgb(m));
            for c in 0..3 {
                let fd = (rp[c] - rm[c]) / (2.0 * h);
                assert!((fd - jac[c][j]).abs() < 1e-7, "c={c} j={j} fd={fd} an={}", jac[c][j]);
            }
        }
    }
}
