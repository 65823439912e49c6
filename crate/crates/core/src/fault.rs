//! Fault sites, bit-flip patterns and the write-back injection.
//!
//! A trial corrupts one term `re_i` of one destination register. The term
//! is held as a register image in the instruction's input format, bits are
//! flipped there, and the faulty value `re_err` is planted with
//!
//! ```text
//! re'      = re_sum - re_i
//! re'_sum  = re' + re_err
//! ```
//!
//! both in binary32.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fp_codec::{decode, encode, Encoded, FpError, FpFormat};
use crate::gemm::WriteBack;
use crate::guard::{self, GuardError, GuardKind, GuardReport};
use crate::hmma::{HmmaError, HmmaShape, WarpState, DREGS, WARP_SIZE};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FaultError {
    #[error("only 1, 2 or 4 bit flips are modelled, got {0}")]
    BitCount(u32),
    #[error("a fixed bit position requires a single-bit fault, got {0} bits")]
    FixedMultiBit(u32),
    #[error("fault site out of range: {0}")]
    Site(String),
    #[error(transparent)]
    Hmma(#[from] HmmaError),
    #[error(transparent)]
    Fp(#[from] FpError),
    #[error(transparent)]
    Guard(#[from] GuardError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitMode {
    /// Distinct positions drawn uniformly from the whole register image.
    RandomPositions,
    FixedPosition(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultSpec {
    n_bits: u32,
    mode: BitMode,
}

impl FaultSpec {
    pub fn new(n_bits: u32, mode: BitMode) -> Result<Self, FaultError> {
        if !matches!(n_bits, 1 | 2 | 4) {
            return Err(FaultError::BitCount(n_bits));
        }
        if matches!(mode, BitMode::FixedPosition(_)) && n_bits != 1 {
            return Err(FaultError::FixedMultiBit(n_bits));
        }
        Ok(FaultSpec { n_bits, mode })
    }

    pub fn random(n_bits: u32) -> Result<Self, FaultError> {
        Self::new(n_bits, BitMode::RandomPositions)
    }

    pub fn fixed(position: u32) -> Self {
        FaultSpec {
            n_bits: 1,
            mode: BitMode::FixedPosition(position),
        }
    }

    pub fn n_bits(&self) -> u32 {
        self.n_bits
    }

    pub fn mode(&self) -> BitMode {
        self.mode
    }

    /// Checks a fixed position against the format width.
    pub fn validate_for(&self, format: FpFormat) -> Result<(), FaultError> {
        if let BitMode::FixedPosition(p) = self.mode {
            if p >= format.total_bits() {
                return Err(FpError::BitOutOfRange {
                    format,
                    position: p,
                    total_bits: format.total_bits(),
                }
                .into());
            }
        }
        Ok(())
    }
}

/// Coordinates of one injection: which dynamic HMMA op, which lane and
/// destination register, which term of the dot product, which bits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaultSite {
    #[serde(rename = "instr")]
    pub instr_index: usize,
    pub lane: usize,
    pub dreg: usize,
    #[serde(rename = "term")]
    pub term_k: usize,
    pub bits: Vec<u32>,
}

/// Extent of the site cross product sampled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SiteSpace {
    pub instructions: usize,
    pub lanes: usize,
    pub dregs: usize,
    pub terms: usize,
}

impl SiteSpace {
    pub fn new(instructions: usize, shape: HmmaShape) -> Self {
        SiteSpace {
            instructions,
            lanes: WARP_SIZE,
            dregs: DREGS,
            terms: shape.k(),
        }
    }

    pub fn total(&self) -> usize {
        self.instructions * self.lanes * self.dregs * self.terms
    }

    /// Decomposes a flat index; terms vary fastest, instructions slowest.
    pub fn site_at(&self, flat: usize) -> (usize, usize, usize, usize) {
        let term = flat % self.terms;
        let rest = flat / self.terms;
        let dreg = rest % self.dregs;
        let rest = rest / self.dregs;
        (rest / self.lanes, rest % self.lanes, dreg, term)
    }

    pub fn check(&self, site: &FaultSite) -> Result<(), FaultError> {
        let ok = site.instr_index < self.instructions
            && site.lane < self.lanes
            && site.dreg < self.dregs
            && site.term_k < self.terms;
        if ok {
            Ok(())
        } else {
            Err(FaultError::Site(format!(
                "instr={} lane={} dreg={} term={} outside {}x{}x{}x{}",
                site.instr_index,
                site.lane,
                site.dreg,
                site.term_k,
                self.instructions,
                self.lanes,
                self.dregs,
                self.terms
            )))
        }
    }
}

/// Counter-based generator for one trial: the master seed selects the key
/// and the trial index selects the stream, so trials can be drawn in any
/// order.
pub fn trial_rng(master_seed: u64, trial_index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(b"mpgemmfi");
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(trial_index);
    rng
}

/// Draws bit positions for one fault, without replacement.
pub fn sample_bits<R: Rng>(rng: &mut R, spec: &FaultSpec, format: FpFormat) -> Vec<u32> {
    match spec.mode {
        BitMode::FixedPosition(p) => vec![p],
        BitMode::RandomPositions => {
            let mut bits: Vec<u32> = index::sample(rng, format.total_bits() as usize, spec.n_bits as usize)
                .into_iter()
                .map(|b| b as u32)
                .collect();
            bits.sort_unstable();
            bits
        }
    }
}

/// Uniform site over `space`, deterministic in `(seed, trial_index)`.
pub fn sample_site(space: &SiteSpace, spec: &FaultSpec, format: FpFormat, seed: u64, trial_index: u64) -> FaultSite {
    let mut rng = trial_rng(seed, trial_index);
    let flat = rng.random_range(0..space.total());
    let (instr_index, lane, dreg, term_k) = space.site_at(flat);
    FaultSite {
        instr_index,
        lane,
        dreg,
        term_k,
        bits: sample_bits(&mut rng, spec, format),
    }
}

/// Register image of a term in the instruction's input format.
pub fn encode_term(re_term: f32, format: FpFormat) -> Encoded {
    encode(re_term as f64, format)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InjectionOutcome {
    /// Original accumulated value of the destination register, C included.
    pub re_sum: f32,
    pub re_term: f32,
    pub re_err: f32,
    pub re_sum_prime: f32,
    /// `re_sum_prime - re_sum` in binary64.
    pub diff: f64,
    pub original: Encoded,
    /// Image after the bit flips, before any guard.
    pub faulty: Encoded,
    /// Image actually written back (after the guard, if any).
    pub applied: Encoded,
}

impl InjectionOutcome {
    pub fn write_back(&self, site: &FaultSite) -> WriteBack {
        WriteBack {
            lane: site.lane,
            dreg: site.dreg,
            value: self.re_sum_prime,
        }
    }
}

/// Injects without a guard.
pub fn inject(state: &WarpState<'_>, site: &FaultSite) -> Result<InjectionOutcome, FaultError> {
    inject_guarded(state, site, GuardKind::None).map(|(o, _)| o)
}

/// Flips `site.bits` in the term's register image, lets `guard` inspect
/// the faulty image, and computes the written-back sum.
///
/// When the image that reaches the adder equals the original image, no
/// fault materialised and the register keeps `re_sum` unchanged.
pub fn inject_guarded(
    state: &WarpState<'_>,
    site: &FaultSite,
    guard_kind: GuardKind,
) -> Result<(InjectionOutcome, Option<GuardReport>), FaultError> {
    let format = state.shape().format();
    let re_sum = state.d_value(site.lane, site.dreg)?;
    let re_term = state.term_value(site.lane, site.dreg, site.term_k)?;
    let original = encode_term(re_term, format);
    let faulty = original.flip_bits(&site.bits)?;

    let report = if guard_kind == GuardKind::None {
        None
    } else {
        let (a, b) = state.term_operands(site.lane, site.dreg, site.term_k)?;
        guard::apply(guard_kind, faulty, a.exponent_field(), b.exponent_field())?
    };
    let applied = report.map_or(faulty, |r| r.corrected);

    let (re_err, re_sum_prime) = if applied == original {
        (re_term, re_sum)
    } else {
        let re_err = decode(applied) as f32;
        (re_err, (re_sum - re_term) + re_err)
    };
    let outcome = InjectionOutcome {
        re_sum,
        re_term,
        re_err,
        re_sum_prime,
        diff: re_sum_prime as f64 - re_sum as f64,
        original,
        faulty,
        applied,
    };
    Ok((outcome, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmma::{execute_hmma, FragmentMap};

    fn constant_state(map: &FragmentMap, a: f64, b: f64, c: f32) -> WarpState<'_> {
        let shape = map.shape();
        let f = shape.format();
        let av = vec![encode(a, f); 16 * shape.k()];
        let bv = vec![encode(b, f); shape.k() * 8];
        execute_hmma(&av, &bv, &[c; 128], map).unwrap().1
    }

    fn site(bits: Vec<u32>) -> FaultSite {
        FaultSite {
            instr_index: 0,
            lane: 3,
            dreg: 1,
            term_k: 2,
            bits,
        }
    }

    #[test]
    fn spec_validation() {
        assert!(FaultSpec::random(3).is_err());
        assert!(FaultSpec::new(2, BitMode::FixedPosition(1)).is_err());
        assert!(FaultSpec::random(4).is_ok());
        assert!(FaultSpec::fixed(19).validate_for(FpFormat::Tf32).is_err());
        assert!(FaultSpec::fixed(18).validate_for(FpFormat::Tf32).is_ok());
    }

    #[test]
    fn encode_term_examples() {
        assert_eq!(encode_term(2.0, FpFormat::Bf16).to_hex(), "4000");
        let e = encode_term(2.25, FpFormat::Bf16);
        assert_eq!(e.exponent_field(), 0b1000_0000);
        assert_eq!(e.mantissa_field(), 0b001_0000);
    }

    #[test]
    fn bf16_exponent_flip() {
        let map = FragmentMap::new(HmmaShape::for_format(FpFormat::Bf16));
        // Every term is 1 * 2 = 2.
        let state = constant_state(&map, 1.0, 2.0, 0.0);
        let out = inject(&state, &site(vec![13])).unwrap();
        assert_eq!(out.re_term, 2.0);
        assert_eq!(out.re_sum, 32.0);
        assert_eq!(out.re_err as f64, 2f64.powi(65));
        assert!((out.diff - 3.68935e19).abs() / 3.68935e19 < 1e-5);
        assert_eq!(out.original.to_hex(), "4000");
        assert_eq!(out.faulty.to_hex(), "6000");
    }

    #[test]
    fn fp16_zero_mantissa_flip() {
        let map = FragmentMap::new(HmmaShape::for_format(FpFormat::Fp16));
        let state = constant_state(&map, 0.0, 1.0, 0.0);
        let out = inject(&state, &site(vec![FpFormat::Fp16.mantissa_msb_position()])).unwrap();
        assert_eq!(out.re_term, 0.0);
        assert_eq!(out.re_err, 2f32.powi(-15));
        assert_eq!(out.re_sum_prime, 2f32.powi(-15));
    }

    #[test]
    fn unchanged_image_is_identity() {
        let map = FragmentMap::new(HmmaShape::for_format(FpFormat::Bf16));
        let state = constant_state(&map, 1.5, 4.0, -86.0);
        let out = inject(&state, &site(vec![])).unwrap();
        assert_eq!(out.re_term, 6.0);
        assert_eq!(out.re_sum_prime, out.re_sum);
        assert_eq!(out.diff, 0.0);
    }

    #[test]
    fn double_flip_restores_sum() {
        let map = FragmentMap::new(HmmaShape::for_format(FpFormat::Tf32));
        let state = constant_state(&map, 0.3, -1.7, 0.125);
        let once = inject(&state, &site(vec![0, 11])).unwrap();
        let twice = once.faulty.flip_bits(&[0, 11]).unwrap();
        assert_eq!(twice, once.original);
        assert_ne!(once.diff, 0.0);
    }

    #[test]
    fn write_back_equations_hold() {
        let map = FragmentMap::new(HmmaShape::for_format(FpFormat::Tf32));
        let state = constant_state(&map, 0.7, 1.3, 2.0);
        for bit in 0..19 {
            let s = site(vec![bit]);
            let out = inject(&state, &s).unwrap();
            let expected_err = decode(out.original.flip_bits(&[bit]).unwrap()) as f32;
            assert!(out.re_err.to_bits() == expected_err.to_bits() || out.re_err.is_nan());
            let expected = (out.re_sum - out.re_term) + out.re_err;
            assert!(out.re_sum_prime.to_bits() == expected.to_bits() || expected.is_nan());
        }
    }

    #[test]
    fn guard_restores_or_confines() {
        let map = FragmentMap::new(HmmaShape::for_format(FpFormat::Bf16));
        let state = constant_state(&map, 1.0, 2.0, 0.0);
        let (out, report) = inject_guarded(&state, &site(vec![13]), GuardKind::BoundCheck).unwrap();
        let report = report.unwrap();
        assert!(report.detected);
        // 11000000 -> 10000000 restores the original 2.0 exactly.
        assert_eq!(out.applied, out.original);
        assert_eq!(out.diff, 0.0);
        let (out, report) = inject_guarded(&state, &site(vec![13]), GuardKind::RangeCheckMax).unwrap();
        let report = report.unwrap();
        // Operand exponents 127 and 128 bound the product field at 129.
        assert_eq!(report.bound_used, Some(129));
        assert_eq!(report.exponent_after, 129);
        assert_eq!(out.re_err, 4.0);
    }

    #[test]
    fn site_sampling_is_deterministic_and_in_range() {
        let space = SiteSpace::new(3, HmmaShape::for_format(FpFormat::Fp16));
        let spec = FaultSpec::random(4).unwrap();
        for trial in 0..200 {
            let a = sample_site(&space, &spec, FpFormat::Fp16, 11, trial);
            assert_eq!(a, sample_site(&space, &spec, FpFormat::Fp16, 11, trial));
            space.check(&a).unwrap();
            assert_eq!(a.bits.len(), 4);
            assert!(a.bits.windows(2).all(|w| w[0] < w[1]));
            assert!(a.bits.iter().all(|&b| b < 16));
        }
        let single = SiteSpace {
            instructions: 1,
            lanes: 1,
            dregs: 1,
            terms: 1,
        };
        let s = sample_site(&single, &FaultSpec::fixed(5), FpFormat::Bf16, 0, 9);
        assert_eq!((s.instr_index, s.lane, s.dreg, s.term_k, s.bits), (0, 0, 0, 0, vec![5]));
    }
}
