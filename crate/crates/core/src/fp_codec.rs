//! Bit-exact codecs for the reduced-precision formats fed to tensor cores.
//!
//! All three formats share the IEEE-754 layout (sign, biased exponent,
//! fractional mantissa with an implicit leading one for normal values).
//! Encodings live right-aligned in a `u32`; for TF32 only the low 19 bits
//! are meaningful.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FpError {
    #[error("bit position {position} out of range for {format} ({total_bits} bits)")]
    BitOutOfRange {
        format: FpFormat,
        position: u32,
        total_bits: u32,
    },
    #[error("bit position {0} listed more than once")]
    DuplicateBit(u32),
    #[error("exponent field {field} does not fit in {exponent_bits} bits")]
    ExponentOutOfRange { field: u32, exponent_bits: u32 },
    #[error("bit pattern {bits:#x} does not fit in {format}")]
    PatternOutOfRange { format: FpFormat, bits: u32 },
    #[error("invalid hex encoding `{0}`")]
    BadHex(String),
    #[error("unknown format `{0}` (expected fp16, bf16 or tf32)")]
    UnknownFormat(String),
}

/// The input formats accepted by the simulated HMMA units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FpFormat {
    Fp16,
    Bf16,
    Tf32,
}

impl FpFormat {
    pub const ALL: [FpFormat; 3] = [FpFormat::Fp16, FpFormat::Bf16, FpFormat::Tf32];

    pub const fn sign_bits(self) -> u32 {
        1
    }

    pub const fn exponent_bits(self) -> u32 {
        match self {
            FpFormat::Fp16 => 5,
            FpFormat::Bf16 | FpFormat::Tf32 => 8,
        }
    }

    pub const fn mantissa_bits(self) -> u32 {
        match self {
            FpFormat::Fp16 | FpFormat::Tf32 => 10,
            FpFormat::Bf16 => 7,
        }
    }

    pub const fn total_bits(self) -> u32 {
        self.sign_bits() + self.exponent_bits() + self.mantissa_bits()
    }

    pub const fn exponent_bias(self) -> i32 {
        (1 << (self.exponent_bits() - 1)) - 1
    }

    /// All-ones exponent field (infinity / NaN).
    pub const fn max_exponent_field(self) -> u32 {
        (1 << self.exponent_bits()) - 1
    }

    pub const fn sign_position(self) -> u32 {
        self.total_bits() - 1
    }

    /// Bit index of the most significant exponent bit.
    pub const fn exponent_msb_position(self) -> u32 {
        self.total_bits() - 2
    }

    /// Bit index of the most significant mantissa bit.
    pub const fn mantissa_msb_position(self) -> u32 {
        self.mantissa_bits() - 1
    }

    pub const fn hex_digits(self) -> usize {
        self.total_bits().div_ceil(4) as usize
    }

    const fn mask(self) -> u32 {
        (1 << self.total_bits()) - 1
    }

    pub const fn name(self) -> &'static str {
        match self {
            FpFormat::Fp16 => "fp16",
            FpFormat::Bf16 => "bf16",
            FpFormat::Tf32 => "tf32",
        }
    }
}

impl fmt::Display for FpFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FpFormat {
    type Err = FpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "fp16" => Ok(FpFormat::Fp16),
            "bf16" => Ok(FpFormat::Bf16),
            "tf32" => Ok(FpFormat::Tf32),
            _ => Err(FpError::UnknownFormat(s.to_string())),
        }
    }
}

/// A bit pattern interpreted under a particular [`FpFormat`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Encoded {
    format: FpFormat,
    bits: u32,
}

impl Encoded {
    pub fn from_bits(format: FpFormat, bits: u32) -> Result<Self, FpError> {
        if bits & !format.mask() != 0 {
            return Err(FpError::PatternOutOfRange { format, bits });
        }
        Ok(Encoded { format, bits })
    }

    /// Assembles an encoding from its raw fields. Fields wider than the
    /// format are truncated.
    pub fn from_fields(format: FpFormat, sign: bool, exponent: u32, mantissa: u32) -> Self {
        let m = format.mantissa_bits();
        let e_mask = format.max_exponent_field();
        let bits = ((sign as u32) << format.sign_position()) | ((exponent & e_mask) << m) | (mantissa & ((1 << m) - 1));
        Encoded { format, bits }
    }

    pub fn zero(format: FpFormat) -> Self {
        Encoded { format, bits: 0 }
    }

    pub fn format(self) -> FpFormat {
        self.format
    }

    pub fn bits(self) -> u32 {
        self.bits
    }

    pub fn sign(self) -> bool {
        (self.bits >> self.format.sign_position()) & 1 == 1
    }

    pub fn exponent_field(self) -> u32 {
        (self.bits >> self.format.mantissa_bits()) & self.format.max_exponent_field()
    }

    pub fn mantissa_field(self) -> u32 {
        self.bits & ((1 << self.format.mantissa_bits()) - 1)
    }

    pub fn replace_exponent_field(self, field: u32) -> Result<Self, FpError> {
        let exponent_bits = self.format.exponent_bits();
        if field > self.format.max_exponent_field() {
            return Err(FpError::ExponentOutOfRange { field, exponent_bits });
        }
        Ok(Self::from_fields(
            self.format,
            self.sign(),
            field,
            self.mantissa_field(),
        ))
    }

    pub fn is_nan(self) -> bool {
        self.exponent_field() == self.format.max_exponent_field() && self.mantissa_field() != 0
    }

    pub fn is_finite(self) -> bool {
        self.exponent_field() != self.format.max_exponent_field()
    }

    /// Toggles every listed bit. Positions must be distinct and below
    /// `total_bits`.
    pub fn flip_bits(self, positions: &[u32]) -> Result<Self, FpError> {
        let total_bits = self.format.total_bits();
        let mut mask = 0u32;
        for &position in positions {
            if position >= total_bits {
                return Err(FpError::BitOutOfRange {
                    format: self.format,
                    position,
                    total_bits,
                });
            }
            if mask & (1 << position) != 0 {
                return Err(FpError::DuplicateBit(position));
            }
            mask |= 1 << position;
        }
        Ok(Encoded {
            format: self.format,
            bits: self.bits ^ mask,
        })
    }

    pub fn decode(self) -> f64 {
        decode(self)
    }

    /// Lowercase hex, zero padded to `ceil(total_bits / 4)` digits.
    pub fn to_hex(self) -> String {
        format!("{:0width$x}", self.bits, width = self.format.hex_digits())
    }

    pub fn from_hex(format: FpFormat, hex: &str) -> Result<Self, FpError> {
        if hex.is_empty() || hex.len() > format.hex_digits() {
            return Err(FpError::BadHex(hex.to_string()));
        }
        let bits = u32::from_str_radix(hex, 16).map_err(|_| FpError::BadHex(hex.to_string()))?;
        Self::from_bits(format, bits)
    }
}

impl fmt::Display for Encoded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.format, self.to_hex())
    }
}

/// `2^exp` as an exact binary64 value; `exp` must stay in the normal range.
fn pow2(exp: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&exp));
    f64::from_bits(((exp + 1023) as u64) << 52)
}

pub fn decode(e: Encoded) -> f64 {
    let f = e.format;
    let m = f.mantissa_bits() as i32;
    let bias = f.exponent_bias();
    let exponent = e.exponent_field();
    let mantissa = e.mantissa_field() as f64;
    let magnitude = if exponent == f.max_exponent_field() {
        if e.mantissa_field() != 0 {
            return f64::NAN;
        }
        f64::INFINITY
    } else if exponent == 0 {
        mantissa * pow2(1 - bias - m)
    } else {
        (pow2(m) + mantissa) * pow2(exponent as i32 - bias - m)
    };
    if e.sign() {
        -magnitude
    } else {
        magnitude
    }
}

/// Rounds `v` to the nearest value of `format`, ties to even mantissa.
/// Overflow saturates to infinity; NaN becomes the quiet NaN pattern.
pub fn encode(v: f64, format: FpFormat) -> Encoded {
    let sign = v.is_sign_negative();
    if v.is_nan() {
        let quiet = 1 << format.mantissa_msb_position();
        return Encoded::from_fields(format, false, format.max_exponent_field(), quiet);
    }
    let a = v.abs();
    if a.is_infinite() {
        return Encoded::from_fields(format, sign, format.max_exponent_field(), 0);
    }
    if a == 0.0 {
        return Encoded::from_fields(format, sign, 0, 0);
    }

    let m = format.mantissa_bits() as i32;
    let bias = format.exponent_bias();
    let min_normal_exp = 1 - bias;
    // Binary64 subnormals are far below every supported format's range.
    if a < pow2(min_normal_exp - m - 2) {
        return Encoded::from_fields(format, sign, 0, 0);
    }
    let unbiased = ((a.to_bits() >> 52) & 0x7ff) as i32 - 1023;
    let quantum_exp = unbiased.max(min_normal_exp) - m;
    let scaled = (a * pow2(-quantum_exp)).round_ties_even();
    // For subnormal inputs the rounded significand is the whole pattern (a
    // carry into bit m yields the smallest normal). For normal inputs the
    // implicit one is folded into the exponent field, again letting a
    // rounding carry propagate naturally.
    let significand = scaled as u64;
    let pattern = if unbiased < min_normal_exp {
        significand
    } else {
        (((unbiased + bias) as u64) << m) + significand - (1u64 << m)
    };
    let exponent = (pattern >> m) as u32;
    if exponent >= format.max_exponent_field() {
        return Encoded::from_fields(format, sign, format.max_exponent_field(), 0);
    }
    Encoded::from_fields(format, sign, exponent, pattern as u32)
}

/// Rounds a binary32 value into `format`.
pub fn quantize(v: f32, format: FpFormat) -> f32 {
    decode(encode(v as f64, format)) as f32
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bf16(sign: bool, exp: u32, man: u32) -> Encoded {
        Encoded::from_fields(FpFormat::Bf16, sign, exp, man)
    }

    #[test]
    fn format_layouts() {
        for f in FpFormat::ALL {
            assert_eq!(f.total_bits(), f.sign_bits() + f.exponent_bits() + f.mantissa_bits());
            assert_eq!(f.exponent_bias(), (1 << (f.exponent_bits() - 1)) - 1);
        }
        assert_eq!(FpFormat::Fp16.total_bits(), 16);
        assert_eq!(FpFormat::Bf16.total_bits(), 16);
        assert_eq!(FpFormat::Tf32.total_bits(), 19);
        assert_eq!(FpFormat::Fp16.exponent_bias(), 15);
        assert_eq!(FpFormat::Tf32.exponent_bias(), 127);
    }

    #[test]
    fn decode_known_values() {
        assert_eq!(bf16(false, 0b1000_0000, 0).decode(), 2.0);
        assert_eq!(bf16(false, 0b1001_0000, 0).decode(), 131072.0);
        let fp16 = Encoded::from_fields(FpFormat::Fp16, false, 0, 0b10_0000_0000);
        assert_eq!(fp16.decode(), 3.0517578125e-5);
        let tf32 = Encoded::zero(FpFormat::Tf32);
        assert_eq!(tf32.decode(), 0.0);
        assert!(tf32.decode().is_sign_positive());
    }

    #[test]
    fn decode_specials() {
        for f in FpFormat::ALL {
            let inf = Encoded::from_fields(f, true, f.max_exponent_field(), 0);
            assert_eq!(inf.decode(), f64::NEG_INFINITY);
            let nan = Encoded::from_fields(f, false, f.max_exponent_field(), 1);
            assert!(nan.decode().is_nan());
            assert!(nan.is_nan());
        }
    }

    #[test]
    fn encode_known_values() {
        assert_eq!(encode(1.0, FpFormat::Bf16), bf16(false, 0b0111_1111, 0));
        assert_eq!(encode(131072.0, FpFormat::Bf16), bf16(false, 0b1001_0000, 0));
        assert_eq!(encode(2.0, FpFormat::Bf16).to_hex(), "4000");
        assert_eq!(encode(2.0, FpFormat::Tf32).to_hex(), "20000");
    }

    #[test]
    fn encode_rounding_edges() {
        // Halfway between 1.0 and the next bf16 value rounds to even (1.0).
        let half_ulp = 2f64.powi(-8);
        assert_eq!(encode(1.0 + half_ulp, FpFormat::Bf16).bits(), 0x3f80);
        assert_eq!(encode(1.0 + 3.0 * half_ulp, FpFormat::Bf16).bits(), 0x3f82);
        // Overflow saturates, underflow flushes through subnormals to zero.
        assert_eq!(encode(70000.0, FpFormat::Fp16).bits(), 0x7c00);
        assert_eq!(encode(65504.0, FpFormat::Fp16).bits(), 0x7bff);
        assert_eq!(encode(2f64.powi(-24), FpFormat::Fp16).bits(), 0x0001);
        assert_eq!(encode(2f64.powi(-26), FpFormat::Fp16).bits(), 0x0000);
        assert_eq!(encode(-2f64.powi(-26), FpFormat::Fp16).bits(), 0x8000);
        // Largest subnormal rounds up into the smallest normal.
        let below_min_normal = 2f64.powi(-14) - 2f64.powi(-26);
        assert_eq!(encode(below_min_normal, FpFormat::Fp16).bits(), 0x0400);
        assert!(encode(f64::NAN, FpFormat::Tf32).is_nan());
    }

    #[test]
    fn flip_bits_examples() {
        let one = encode(1.0, FpFormat::Bf16);
        assert_eq!(one.flip_bits(&[15]).unwrap().decode(), -1.0);
        let two = encode(2.0, FpFormat::Bf16);
        let zero = two.flip_bits(&[14]).unwrap();
        assert_eq!(zero.decode(), 0.0);
        let big = two.flip_bits(&[13]).unwrap();
        assert_eq!(big.exponent_field(), 0b1100_0000);
        assert_eq!(big.decode(), 2f64.powi(65));
        assert!((big.decode() - 3.68935e19).abs() / 3.68935e19 < 1e-5);
    }

    #[test]
    fn flip_bits_rejects_bad_positions() {
        let v = encode(1.0, FpFormat::Tf32);
        assert!(matches!(
            v.flip_bits(&[19]),
            Err(FpError::BitOutOfRange { position: 19, .. })
        ));
        assert_eq!(v.flip_bits(&[3, 3]), Err(FpError::DuplicateBit(3)));
        assert!(v.flip_bits(&[18]).is_ok());
    }

    #[test]
    fn exponent_field_access() {
        let two = encode(2.0, FpFormat::Bf16);
        assert_eq!(two.exponent_field(), 128);
        assert_eq!(two.replace_exponent_field(127).unwrap().decode(), 1.0);
        assert_eq!(encode(131072.0, FpFormat::Bf16).exponent_field(), 144);
        assert!(two.replace_exponent_field(256).is_err());
        let fp16 = encode(-1.5, FpFormat::Fp16);
        let moved = fp16.replace_exponent_field(16).unwrap();
        assert_eq!(moved.decode(), -3.0);
        assert_eq!(moved.mantissa_field(), fp16.mantissa_field());
    }

    #[test]
    fn hex_round_trip() {
        let v = Encoded::from_bits(FpFormat::Tf32, 0x7_ffff).unwrap();
        assert_eq!(v.to_hex(), "7ffff");
        assert_eq!(Encoded::from_hex(FpFormat::Tf32, "7ffff").unwrap(), v);
        assert!(Encoded::from_hex(FpFormat::Bf16, "10000").is_err());
        assert!(Encoded::from_bits(FpFormat::Tf32, 0x8_0000).is_err());
        assert_eq!(Encoded::from_hex(FpFormat::Fp16, "003c").unwrap().bits(), 0x3c);
    }

    #[test]
    fn parse_format_names() {
        assert_eq!("BF16".parse::<FpFormat>().unwrap(), FpFormat::Bf16);
        assert!("fp8".parse::<FpFormat>().is_err());
    }
}
