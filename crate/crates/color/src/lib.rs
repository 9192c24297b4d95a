//! Color math: hex sRGB parsing, sRGB to CIELAB (D65, 2° observer) and the
//! CIEDE2000 color difference with unit parametric factors.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid hex color {input:?}: expected #RRGGBB")]
pub struct ParseColorError {
    pub input: String,
}

/// 8-bit sRGB color.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SrgbColor {
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

impl SrgbColor {
    pub const fn new(r: u8, g: u8, b: u8) -> Self {
        Self { r, g, b }
    }

    pub fn to_hex(self) -> String {
        format!("#{:02X}{:02X}{:02X}", self.r, self.g, self.b)
    }

    /// Linear-light channel values in [0, 1].
    pub fn to_linear(self) -> [f64; 3] {
        [self.r, self.g, self.b].map(|c| srgb_decode(f64::from(c) / 255.0))
    }

    /// Gamma-encodes linear channels, clamping to [0, 1] and rounding to 8 bits.
    pub fn from_linear(linear: [f64; 3]) -> Self {
        let [r, g, b] = linear.map(|c| {
            let c = if c.is_nan() { 0.0 } else { c.clamp(0.0, 1.0) };
            (srgb_encode(c) * 255.0).round() as u8
        });
        Self { r, g, b }
    }
}

impl fmt::Display for SrgbColor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for SrgbColor {
    type Err = ParseColorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_hex(s)
    }
}

/// Parses `#RRGGBB` (case-insensitive, `#` optional).
pub fn parse_hex(s: &str) -> Result<SrgbColor, ParseColorError> {
    let err = || ParseColorError { input: s.to_owned() };
    let digits = s.trim().strip_prefix('#').unwrap_or(s.trim());
    if digits.len() != 6 || !digits.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(err());
    }
    let channel = |i: usize| u8::from_str_radix(&digits[i..i + 2], 16).map_err(|_| err());
    Ok(SrgbColor::new(channel(0)?, channel(2)?, channel(4)?))
}

pub fn srgb_decode(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

pub fn srgb_encode(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

/// CIELAB coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabColor {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

impl LabColor {
    pub const fn new(l: f64, a: f64, b: f64) -> Self {
        Self { l, a, b }
    }
}

/// D65 reference white, 2° observer, Y normalized to 1.
pub const D65_WHITE: [f64; 3] = [0.950_47, 1.0, 1.088_83];

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

pub fn srgb_to_xyz(c: SrgbColor) -> [f64; 3] {
    let lin = c.to_linear();
    SRGB_TO_XYZ.map(|row| row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2])
}

pub fn xyz_to_lab(xyz: [f64; 3]) -> LabColor {
    const DELTA: f64 = 6.0 / 29.0;
    let f = |t: f64| {
        if t > DELTA * DELTA * DELTA {
            t.cbrt()
        } else {
            t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
        }
    };
    let fx = f(xyz[0] / D65_WHITE[0]);
    let fy = f(xyz[1] / D65_WHITE[1]);
    let fz = f(xyz[2] / D65_WHITE[2]);
    LabColor {
        l: 116.0 * fy - 16.0,
        a: 500.0 * (fx - fy),
        b: 200.0 * (fy - fz),
    }
}

pub fn srgb_to_lab(c: SrgbColor) -> LabColor {
    xyz_to_lab(srgb_to_xyz(c))
}

/// A CIEDE2000 color difference; always non-negative.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct DeltaE00(f64);

impl DeltaE00 {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for DeltaE00 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Hue angle in degrees within [0, 360); 0 for the neutral axis.
fn hue_degrees(b: f64, a: f64) -> f64 {
    if a == 0.0 && b == 0.0 {
        return 0.0;
    }
    let h = b.atan2(a).to_degrees();
    if h < 0.0 {
        h + 360.0
    } else {
        h
    }
}

/// CIEDE2000 with kL = kC = kH = 1.
pub fn ciede2000(x: LabColor, y: LabColor) -> DeltaE00 {
    let pow7 = |v: f64| v.powi(7);
    let twenty_five_7 = 25f64.powi(7);

    let c1 = x.a.hypot(x.b);
    let c2 = y.a.hypot(y.b);
    let c_bar = (c1 + c2) / 2.0;
    let g = 0.5 * (1.0 - (pow7(c_bar) / (pow7(c_bar) + twenty_five_7)).sqrt());

    let a1p = (1.0 + g) * x.a;
    let a2p = (1.0 + g) * y.a;
    let c1p = a1p.hypot(x.b);
    let c2p = a2p.hypot(y.b);
    let h1p = hue_degrees(x.b, a1p);
    let h2p = hue_degrees(y.b, a2p);

    let dl = y.l - x.l;
    let dc = c2p - c1p;
    let chroma_product = c1p * c2p;
    let dh_angle = if chroma_product == 0.0 {
        0.0
    } else {
        let d = h2p - h1p;
        if d > 180.0 {
            d - 360.0
        } else if d < -180.0 {
            d + 360.0
        } else {
            d
        }
    };
    let dh = 2.0 * chroma_product.sqrt() * (dh_angle.to_radians() / 2.0).sin();

    let l_bar = (x.l + y.l) / 2.0;
    let cp_bar = (c1p + c2p) / 2.0;
    let hp_bar = if chroma_product == 0.0 {
        h1p + h2p
    } else if (h1p - h2p).abs() <= 180.0 {
        (h1p + h2p) / 2.0
    } else if h1p + h2p < 360.0 {
        (h1p + h2p + 360.0) / 2.0
    } else {
        (h1p + h2p - 360.0) / 2.0
    };

    let t = 1.0 - 0.17 * (hp_bar - 30.0).to_radians().cos()
        + 0.24 * (2.0 * hp_bar).to_radians().cos()
        + 0.32 * (3.0 * hp_bar + 6.0).to_radians().cos()
        - 0.20 * (4.0 * hp_bar - 63.0).to_radians().cos();
    let d_theta = 30.0 * (-((hp_bar - 275.0) / 25.0).powi(2)).exp();
    let r_c = 2.0 * (pow7(cp_bar) / (pow7(cp_bar) + twenty_five_7)).sqrt();
    let l_offset = (l_bar - 50.0).powi(2);
    let s_l = 1.0 + 0.015 * l_offset / (20.0 + l_offset).sqrt();
    let s_c = 1.0 + 0.045 * cp_bar;
    let s_h = 1.0 + 0.015 * cp_bar * t;
    let r_t = -(2.0 * d_theta).to_radians().sin() * r_c;

    let tl = dl / s_l;
    let tc = dc / s_c;
    let th = dh / s_h;
    let sum = tl * tl + tc * tc + th * th + r_t * tc * th;
    DeltaE00(sum.max(0.0).sqrt())
}

/// ΔE00 between two sRGB colors.
pub fn srgb_delta_e(x: SrgbColor, y: SrgbColor) -> DeltaE00 {
    ciede2000(srgb_to_lab(x), srgb_to_lab(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_target_hex_colors() {
        assert_eq!(parse_hex("#6A4C9C").unwrap(), SrgbColor::new(106, 76, 156));
        assert_eq!(parse_hex("#D6C6AF").unwrap(), SrgbColor::new(214, 198, 175));
        assert_eq!(parse_hex("d6c6af").unwrap(), SrgbColor::new(214, 198, 175));
    }

    #[test]
    fn rejects_malformed_hex() {
        for bad in ["#GGGGGG", "#12345", "1234567", "", "#", "##123456", "#12 456"] {
            assert!(parse_hex(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn hex_roundtrip() {
        let c = SrgbColor::new(1, 128, 255);
        assert_eq!(parse_hex(&c.to_hex()).unwrap(), c);
        assert_eq!(SrgbColor::from_linear(c.to_linear()), c);
    }

    #[test]
    fn white_and_black() {
        let w = srgb_to_lab(SrgbColor::new(255, 255, 255));
        assert!((w.l - 100.0).abs() < 1e-3, "{w:?}");
        assert!(w.a.abs() < 0.01 && w.b.abs() < 0.01, "{w:?}");
        let k = srgb_to_lab(SrgbColor::new(0, 0, 0));
        assert_eq!((k.l, k.a, k.b), (0.0, 0.0, 0.0));
    }

    #[test]
    fn identity_is_zero() {
        let c = srgb_to_lab(SrgbColor::new(106, 76, 156));
        assert_eq!(ciede2000(c, c).value(), 0.0);
    }

    #[test]
    fn neutral_colors_do_not_produce_nan() {
        let gray = LabColor::new(50.0, 0.0, 0.0);
        let other = LabColor::new(60.0, 0.0, 0.0);
        let d = ciede2000(gray, other).value();
        assert!(d.is_finite() && d > 0.0);
    }
}
