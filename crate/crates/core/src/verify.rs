//! Self-tests run by `mpgemmfi verify`: fragment-map bijection, HMMA and
//! GEMM results against a plain reference loop, and codec round trips.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fp_codec::{decode, encode, Encoded, FpFormat};
use crate::gemm::{run_gemm_with_map, GemmProblem};
use crate::hmma::{execute_hmma, FragmentMap, HmmaShape};
use crate::matrix::Matrix;

/// `c + Σ_k a[i,k]·b[k,j]` with exact binary32 products added in ascending
/// `k`, one binary32 rounding per addition.
pub fn reference_gemm(a: &Matrix<Encoded>, b: &Matrix<Encoded>, c: &Matrix<f32>) -> Matrix<f32> {
    Matrix::from_fn(a.rows(), b.cols(), |i, j| {
        let mut acc = c.get(i, j);
        for k in 0..a.cols() {
            acc += decode(a.get(i, k)) as f32 * decode(b.get(k, j)) as f32;
        }
        acc
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteResult {
    pub format: FpFormat,
    pub suite: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {} {}: {}", self.format, self.suite, self.detail)
    }
}

fn same_bits(x: &[f32], y: &[f32]) -> Option<usize> {
    x.iter()
        .zip(y)
        .position(|(a, b)| a.to_bits() != b.to_bits() && !(a.is_nan() && b.is_nan()))
}

fn random_operands(rng: &mut ChaCha8Rng, format: FpFormat, rows: usize, cols: usize) -> Matrix<Encoded> {
    Matrix::from_fn(rows, cols, |_, _| encode(rng.random_range(-4.0..4.0), format))
}

fn mapping_suite(map: &FragmentMap) -> Result<String, String> {
    map.check_bijection()?;
    Ok("A, B and D maps cover their tiles once; rows confined to {g, g+8}".into())
}

fn hmma_suite(map: &FragmentMap, ops: usize, seed: u64) -> Result<String, String> {
    let shape = map.shape();
    let f = shape.format();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for op in 0..ops {
        let a = random_operands(&mut rng, f, shape.m(), shape.k());
        let b = random_operands(&mut rng, f, shape.k(), shape.n());
        let c = Matrix::from_fn(shape.m(), shape.n(), |_, _| rng.random_range(-4.0f32..4.0));
        let (d, _) = execute_hmma(a.as_slice(), b.as_slice(), c.as_slice(), map).map_err(|e| e.to_string())?;
        let expected = reference_gemm(&a, &b, &c);
        if let Some(i) = same_bits(&d, expected.as_slice()) {
            return Err(format!(
                "op {op}: element {i} is {} , reference {}",
                d[i],
                expected.as_slice()[i]
            ));
        }
    }
    Ok(format!("{ops} random ops bit-identical to the reference"))
}

fn gemm_suite(map: &FragmentMap, seed: u64) -> Result<String, String> {
    let f = map.shape().format();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Odd extents exercise the zero padding.
    for (m, n, k) in [(64, 32, 64), (37, 19, 41)] {
        let a = random_operands(&mut rng, f, m, k);
        let b = random_operands(&mut rng, f, k, n);
        let c = Matrix::from_fn(m, n, |_, _| rng.random_range(-4.0f32..4.0));
        let p = GemmProblem::new(f, &a, &b, &c).map_err(|e| e.to_string())?;
        let d = run_gemm_with_map(&p, map, None).map_err(|e| e.to_string())?;
        let expected = reference_gemm(&a, &b, &c);
        if let Some(i) = same_bits(d.as_slice(), expected.as_slice()) {
            return Err(format!("{m}x{n}x{k}: element {i} differs"));
        }
    }
    Ok("64x32x64 and 37x19x41 bit-identical to the reference".into())
}

fn codec_suite(format: FpFormat) -> Result<String, String> {
    let mut checked = 0u64;
    for bits in 0..1u32 << format.total_bits() {
        let e = Encoded::from_bits(format, bits).map_err(|e| e.to_string())?;
        let v = decode(e);
        if v.is_nan() {
            if !encode(v, format).is_nan() {
                return Err(format!("NaN {} does not encode to NaN", e.to_hex()));
            }
            continue;
        }
        let back = encode(v, format);
        if back != e {
            return Err(format!(
                "{} decodes to {v:e} which encodes to {}",
                e.to_hex(),
                back.to_hex()
            ));
        }
        checked += 1;
    }
    Ok(format!("{checked} non-NaN patterns round-trip"))
}

/// Runs every suite for `format`. `corrupt_map` swaps two fragment slots
/// first, which must make the mapping suite fail.
pub fn run_suites(format: FpFormat, corrupt_map: bool) -> Vec<SuiteResult> {
    let stock = FragmentMap::new(HmmaShape::for_format(format));
    let map = if corrupt_map { stock.corrupted() } else { stock };
    let seed = 0x5eed ^ format.total_bits() as u64;
    let suites: [(&'static str, Result<String, String>); 4] = [
        ("mapping", mapping_suite(&map)),
        ("hmma", hmma_suite(&map, 200, seed)),
        ("gemm", gemm_suite(&map, seed + 1)),
        ("codec", codec_suite(format)),
    ];
    suites
        .into_iter()
        .map(|(suite, r)| {
            let passed = r.is_ok();
            SuiteResult {
                format,
                suite,
                passed,
                detail: r.unwrap_or_else(|e| e),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stock_suites_pass() {
        for f in FpFormat::ALL {
            for r in run_suites(f, false) {
                assert!(r.passed, "{r}");
            }
        }
    }

    #[test]
    fn corrupted_map_fails() {
        let results = run_suites(FpFormat::Bf16, true);
        assert!(results.iter().any(|r| !r.passed));
        assert!(!results.iter().find(|r| r.suite == "mapping").unwrap().passed);
    }

    #[test]
    fn reference_is_sequential_binary32() {
        let f = FpFormat::Fp16;
        let a = Matrix::from_col_major(1, 3, vec![encode(1.0, f), encode(1.0, f), encode(-1.0, f)]).unwrap();
        let b = Matrix::filled(3, 1, encode(1.0, f));
        let c = Matrix::filled(1, 1, 2.0f32.powi(24));
        // Each +1 is lost to rounding at 2^24, the -1 is not.
        assert_eq!(reference_gemm(&a, &b, &c).get(0, 0), 2.0f32.powi(24) - 1.0);
    }
}
