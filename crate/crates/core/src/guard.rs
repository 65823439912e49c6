//! Exponent-only detection and correction for BF16 multiplication results.
//!
//! All three guards inspect only the exponent field of the product as it
//! leaves the multiplier and rewrite at most that field.
//!
//! * BoundCheck: an exponent of the form `1eeexxxx` with any `e` set means
//!   a magnitude of at least 2^17; the `eee` bits are cleared.
//! * RangeCheck-max: the product exponent can exceed neither operand
//!   exponent sum plus one; an out-of-range field is replaced by the bound.
//! * RangeCheck-flip: same detection, corrected by clearing set bits from
//!   the least significant end until the field is within the bound.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fp_codec::{Encoded, FpFormat};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GuardError {
    #[error("exponent guards only apply to bf16 products, got {0}")]
    Format(FpFormat),
    #[error("unknown guard `{0}` (expected none, bound_check, range_check_max or range_check_flip)")]
    Unknown(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardKind {
    #[default]
    None,
    BoundCheck,
    RangeCheckMax,
    RangeCheckFlip,
}

impl GuardKind {
    pub const ALL: [GuardKind; 4] = [
        GuardKind::None,
        GuardKind::BoundCheck,
        GuardKind::RangeCheckMax,
        GuardKind::RangeCheckFlip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GuardKind::None => "none",
            GuardKind::BoundCheck => "bound_check",
            GuardKind::RangeCheckMax => "range_check_max",
            GuardKind::RangeCheckFlip => "range_check_flip",
        }
    }
}

impl fmt::Display for GuardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GuardKind {
    type Err = GuardError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GuardKind::ALL
            .into_iter()
            .find(|g| g.name() == s || g.name().replace('_', "-") == s)
            .ok_or_else(|| GuardError::Unknown(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GuardReport {
    pub kind: GuardKind,
    pub detected: bool,
    /// Equal to the input when nothing was detected.
    pub corrected: Encoded,
    pub exponent_before: u32,
    pub exponent_after: u32,
    /// Upper bound on the raw exponent field (range checks only).
    pub bound_used: Option<u32>,
}

impl GuardReport {
    fn pass(kind: GuardKind, product: Encoded, bound_used: Option<u32>) -> Self {
        let e = product.exponent_field();
        GuardReport {
            kind,
            detected: false,
            corrected: product,
            exponent_before: e,
            exponent_after: e,
            bound_used,
        }
    }

    fn fix(kind: GuardKind, product: Encoded, exponent: u32, bound_used: Option<u32>) -> Self {
        GuardReport {
            kind,
            detected: true,
            corrected: product
                .replace_exponent_field(exponent)
                .expect("corrected exponent fits the field"),
            exponent_before: product.exponent_field(),
            exponent_after: exponent,
            bound_used,
        }
    }
}

fn require_bf16(product: Encoded) -> Result<(), GuardError> {
    match product.format() {
        FpFormat::Bf16 => Ok(()),
        other => Err(GuardError::Format(other)),
    }
}

/// `eee` bits of `1eeexxxx` in the 8-bit BF16 exponent field.
const BOUND_MASK: u32 = 0b0111_0000;
const EXPONENT_MSB: u32 = 0b1000_0000;

pub fn bound_check(product: Encoded) -> Result<GuardReport, GuardError> {
    require_bf16(product)?;
    let e = product.exponent_field();
    if e & EXPONENT_MSB != 0 && e & BOUND_MASK != 0 {
        Ok(GuardReport::fix(GuardKind::BoundCheck, product, e & !BOUND_MASK, None))
    } else {
        Ok(GuardReport::pass(GuardKind::BoundCheck, product, None))
    }
}

/// Largest biased exponent field a product of operands with biased fields
/// `e1_raw` and `e2_raw` can have: `e1 + e2 + 1` in unbiased terms, since
/// both significands are below 2.
pub fn range_bound(e1_raw: u32, e2_raw: u32, format: FpFormat) -> u32 {
    let bound = e1_raw as i64 + e2_raw as i64 - format.exponent_bias() as i64 + 1;
    bound.clamp(0, format.max_exponent_field() as i64) as u32
}

fn range_check(
    kind: GuardKind,
    product: Encoded,
    e1_raw: u32,
    e2_raw: u32,
    correct: impl Fn(u32, u32) -> u32,
) -> Result<GuardReport, GuardError> {
    require_bf16(product)?;
    // Zero and subnormal operands carry no normalized exponent to bound with.
    if e1_raw == 0 || e2_raw == 0 {
        return Ok(GuardReport::pass(kind, product, None));
    }
    let bound = range_bound(e1_raw, e2_raw, product.format());
    let e = product.exponent_field();
    if e <= bound {
        return Ok(GuardReport::pass(kind, product, Some(bound)));
    }
    Ok(GuardReport::fix(kind, product, correct(e, bound), Some(bound)))
}

pub fn range_check_max(product: Encoded, e1_raw: u32, e2_raw: u32) -> Result<GuardReport, GuardError> {
    range_check(GuardKind::RangeCheckMax, product, e1_raw, e2_raw, |_, bound| bound)
}

pub fn range_check_flip(product: Encoded, e1_raw: u32, e2_raw: u32) -> Result<GuardReport, GuardError> {
    range_check(GuardKind::RangeCheckFlip, product, e1_raw, e2_raw, |mut e, bound| {
        while e > bound {
            // e > bound >= 0, so a set bit remains.
            e &= e - 1;
        }
        e
    })
}

/// Applies `kind` to a product formed from operands with the given raw
/// exponent fields. `GuardKind::None` yields no report.
pub fn apply(kind: GuardKind, product: Encoded, e1_raw: u32, e2_raw: u32) -> Result<Option<GuardReport>, GuardError> {
    match kind {
        GuardKind::None => Ok(None),
        GuardKind::BoundCheck => bound_check(product).map(Some),
        GuardKind::RangeCheckMax => range_check_max(product, e1_raw, e2_raw).map(Some),
        GuardKind::RangeCheckFlip => range_check_flip(product, e1_raw, e2_raw).map(Some),
    }
}
