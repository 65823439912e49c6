//! Tiled GEMM (`D = A·B + C`) executed as a stream of simulated HMMA ops.
//!
//! Extents are padded with zeros up to whole tiles. Tiles run with
//! `tile_n` outermost, then `tile_m`, then `tile_k`; partial sums are
//! chained through the binary32 accumulator between `tile_k` steps.

use thiserror::Error;

use crate::fp_codec::{encode, Encoded, FpFormat};
use crate::hmma::{execute_hmma, FragmentMap, HmmaError, HmmaShape, WarpState};
use crate::matrix::Matrix;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GemmError {
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("operand format {got} does not match problem format {expected}")]
    Format { got: FpFormat, expected: FpFormat },
    #[error("problem extents must be positive")]
    Empty,
    #[error(transparent)]
    Hmma(#[from] HmmaError),
}

/// Position of one HMMA op in the tile grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TileCoord {
    pub tile_m: usize,
    pub tile_n: usize,
    pub tile_k: usize,
}

/// The dynamically executed HMMA ops of a problem, in execution order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionStream {
    coords: Vec<TileCoord>,
}

impl InstructionStream {
    pub fn total_count(&self) -> usize {
        self.coords.len()
    }

    pub fn get(&self, index: usize) -> Option<TileCoord> {
        self.coords.get(index).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = TileCoord> + '_ {
        self.coords.iter().copied()
    }
}

/// A GEMM over reduced-precision inputs with a binary32 accumulator.
/// Operands are stored padded to whole tiles.
#[derive(Debug, Clone, PartialEq)]
pub struct GemmProblem {
    shape: HmmaShape,
    m: usize,
    n: usize,
    k: usize,
    a: Matrix<Encoded>,
    b: Matrix<Encoded>,
    c: Matrix<f32>,
}

fn round_up(x: usize, to: usize) -> usize {
    x.div_ceil(to) * to
}

impl GemmProblem {
    pub fn new(format: FpFormat, a: &Matrix<Encoded>, b: &Matrix<Encoded>, c: &Matrix<f32>) -> Result<Self, GemmError> {
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        if m == 0 || n == 0 || k == 0 {
            return Err(GemmError::Empty);
        }
        if b.rows() != k {
            return Err(GemmError::Dimensions(format!("A is {m}x{k} but B is {}x{n}", b.rows())));
        }
        if c.rows() != m || c.cols() != n {
            return Err(GemmError::Dimensions(format!(
                "C is {}x{} but D is {m}x{n}",
                c.rows(),
                c.cols()
            )));
        }
        if let Some(bad) = a.as_slice().iter().chain(b.as_slice()).find(|e| e.format() != format) {
            return Err(GemmError::Format {
                got: bad.format(),
                expected: format,
            });
        }
        let shape = HmmaShape::for_format(format);
        let (pm, pn, pk) = (round_up(m, shape.m()), round_up(n, shape.n()), round_up(k, shape.k()));
        let zero = Encoded::zero(format);
        Ok(GemmProblem {
            shape,
            m,
            n,
            k,
            a: a.block(0, 0, pm, pk, zero),
            b: b.block(0, 0, pk, pn, zero),
            c: c.block(0, 0, pm, pn, 0.0),
        })
    }

    /// Rounds binary64 operands into `format` (round-to-nearest-even).
    pub fn from_values(format: FpFormat, a: &Matrix<f64>, b: &Matrix<f64>, c: &Matrix<f32>) -> Result<Self, GemmError> {
        let qa = a.map(|&v| encode(v, format));
        let qb = b.map(|&v| encode(v, format));
        Self::new(format, &qa, &qb, c)
    }

    pub fn format(&self) -> FpFormat {
        self.shape.format()
    }

    pub fn shape(&self) -> HmmaShape {
        self.shape
    }

    /// Logical (unpadded) extents `(m, n, k)`.
    pub fn extents(&self) -> (usize, usize, usize) {
        (self.m, self.n, self.k)
    }

    pub fn padded_extents(&self) -> (usize, usize, usize) {
        (self.a.rows(), self.b.cols(), self.a.cols())
    }

    pub fn a(&self) -> &Matrix<Encoded> {
        &self.a
    }

    pub fn b(&self) -> &Matrix<Encoded> {
        &self.b
    }

    pub fn c(&self) -> &Matrix<f32> {
        &self.c
    }

    pub fn tiles(&self) -> (usize, usize, usize) {
        let (pm, pn, pk) = self.padded_extents();
        (pm / self.shape.m(), pn / self.shape.n(), pk / self.shape.k())
    }

    pub fn instruction_count(&self) -> usize {
        let (tm, tn, tk) = self.tiles();
        tm * tn * tk
    }

    pub fn instruction_stream(&self) -> InstructionStream {
        let (tiles_m, tiles_n, tiles_k) = self.tiles();
        let mut coords = Vec::with_capacity(tiles_m * tiles_n * tiles_k);
        for tile_n in 0..tiles_n {
            for tile_m in 0..tiles_m {
                for tile_k in 0..tiles_k {
                    coords.push(TileCoord { tile_m, tile_n, tile_k });
                }
            }
        }
        InstructionStream { coords }
    }

    /// Total injectable terms: instructions × 32 lanes × 4 registers × k.
    pub fn enumerate_sites(&self) -> usize {
        self.instruction_count() * self.shape.sites_per_instruction()
    }

    /// The sub-problem covering padded rows `row0..row0+rows` and columns
    /// `col0..col0+cols` with the full K extent. Bounds must be tile aligned.
    pub fn sub_problem(&self, row0: usize, rows: usize, col0: usize, cols: usize) -> GemmProblem {
        let (sm, sn) = (self.shape.m(), self.shape.n());
        debug_assert!(
            row0.is_multiple_of(sm) && rows.is_multiple_of(sm) && col0.is_multiple_of(sn) && cols.is_multiple_of(sn)
        );
        let zero = Encoded::zero(self.format());
        let pk = self.a.cols();
        GemmProblem {
            shape: self.shape,
            m: rows,
            n: cols,
            k: pk,
            a: self.a.block(row0, 0, rows, pk, zero),
            b: self.b.block(0, col0, pk, cols, zero),
            c: self.c.block(row0, col0, rows, cols, 0.0),
        }
    }

    /// Replaces a block of A rows (padded coordinates). Used to propagate a
    /// corrupted activation into a later layer.
    pub fn with_a_rows(&self, row0: usize, rows: &Matrix<Encoded>) -> GemmProblem {
        let mut p = self.clone();
        p.a.paste(row0, 0, rows);
        p
    }
}

/// Replacement of one destination register's value (the write-back step).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WriteBack {
    pub lane: usize,
    pub dreg: usize,
    pub value: f32,
}

/// Intercepts the execution of one HMMA op of a [`run_gemm`] call.
pub trait InstructionHook {
    /// Index into the instruction stream to intercept.
    fn target(&self) -> usize;

    /// Called with the warp state of the targeted op after execution. A
    /// returned write-back replaces that destination element before the
    /// tile result is chained onward.
    fn intercept(&mut self, coord: TileCoord, state: &WarpState<'_>) -> Option<WriteBack>;
}

/// Adapts a closure into an [`InstructionHook`].
pub struct HookFn<F> {
    target: usize,
    f: F,
}

impl<F> HookFn<F>
where
    F: FnMut(TileCoord, &WarpState<'_>) -> Option<WriteBack>,
{
    pub fn new(target: usize, f: F) -> Self {
        HookFn { target, f }
    }
}

impl<F> InstructionHook for HookFn<F>
where
    F: FnMut(TileCoord, &WarpState<'_>) -> Option<WriteBack>,
{
    fn target(&self) -> usize {
        self.target
    }

    fn intercept(&mut self, coord: TileCoord, state: &WarpState<'_>) -> Option<WriteBack> {
        (self.f)(coord, state)
    }
}

/// Runs the problem and returns D over the logical extents.
pub fn run_gemm(p: &GemmProblem, hook: Option<&mut dyn InstructionHook>) -> Result<Matrix<f32>, GemmError> {
    let map = FragmentMap::new(p.shape);
    run_gemm_with_map(p, &map, hook)
}

/// [`run_gemm`] with an explicit fragment map.
pub fn run_gemm_with_map(
    p: &GemmProblem,
    map: &FragmentMap,
    hook: Option<&mut dyn InstructionHook>,
) -> Result<Matrix<f32>, GemmError> {
    let padded = run_padded(p, map, hook)?;
    Ok(padded.block(0, 0, p.m, p.n, 0.0))
}

pub(crate) fn run_padded(
    p: &GemmProblem,
    map: &FragmentMap,
    mut hook: Option<&mut dyn InstructionHook>,
) -> Result<Matrix<f32>, GemmError> {
    let (sm, sn, sk) = (p.shape.m(), p.shape.n(), p.shape.k());
    let (pm, pn, _) = p.padded_extents();
    let target = hook.as_ref().map(|h| h.target());
    let zero = Encoded::zero(p.format());
    let mut d = Matrix::filled(pm, pn, 0.0f32);
    for (index, coord) in p.instruction_stream().iter().enumerate() {
        let (r0, c0, k0) = (coord.tile_m * sm, coord.tile_n * sn, coord.tile_k * sk);
        let acc = if coord.tile_k == 0 {
            p.c.block(r0, c0, sm, sn, 0.0)
        } else {
            d.block(r0, c0, sm, sn, 0.0)
        };
        let a = p.a.block(r0, k0, sm, sk, zero);
        let b = p.b.block(k0, c0, sk, sn, zero);
        let (mut tile, state) = execute_hmma(a.as_slice(), b.as_slice(), acc.as_slice(), map)?;
        if Some(index) == target {
            if let Some(wb) = hook.as_mut().and_then(|h| h.intercept(coord, &state)) {
                let (r, c) = map.d_coord(wb.lane, wb.dreg);
                tile[c * sm + r] = wb.value;
            }
        }
        d.paste(r0, c0, &Matrix::from_col_major(sm, sn, tile).expect("tile size"));
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(format: FpFormat, m: usize, n: usize, k: usize) -> GemmProblem {
        let a = Matrix::from_fn(m, k, |r, c| ((r * 7 + c * 3) % 17) as f64 / 8.0 - 1.0);
        let b = Matrix::from_fn(k, n, |r, c| ((r * 5 + c * 11) % 13) as f64 / 4.0 - 1.5);
        GemmProblem::from_values(format, &a, &b, &Matrix::filled(m, n, 0.25)).unwrap()
    }

    #[test]
    fn instruction_counts() {
        let p = problem(FpFormat::Fp16, 64, 32, 64);
        assert_eq!(p.instruction_count(), 64);
        assert_eq!(p.enumerate_sites(), 131072);
        assert_eq!(problem(FpFormat::Tf32, 16, 8, 8).enumerate_sites(), 1024);
        assert_eq!(problem(FpFormat::Bf16, 16, 8, 16).enumerate_sites(), 2048);
        // 20x10x9 pads to 32x16x16 for bf16.
        let padded = problem(FpFormat::Bf16, 20, 10, 9);
        assert_eq!(padded.padded_extents(), (32, 16, 16));
        assert_eq!(padded.instruction_count(), 4);
    }

    #[test]
    fn stream_order() {
        let p = problem(FpFormat::Tf32, 32, 16, 16);
        let coords: Vec<_> = p.instruction_stream().iter().collect();
        assert_eq!(coords.len(), 8);
        assert_eq!(
            coords[1],
            TileCoord {
                tile_m: 0,
                tile_n: 0,
                tile_k: 1
            }
        );
        assert_eq!(
            coords[2],
            TileCoord {
                tile_m: 1,
                tile_n: 0,
                tile_k: 0
            }
        );
        assert_eq!(
            coords[4],
            TileCoord {
                tile_m: 0,
                tile_n: 1,
                tile_k: 0
            }
        );
    }

    #[test]
    fn identity_a_reproduces_b() {
        let f = FpFormat::Tf32;
        let a = Matrix::from_fn(8, 8, |r, c| if r == c { 1.0 } else { 0.0 });
        let b = Matrix::from_fn(8, 8, |r, c| (r as f64 - c as f64) * 0.375);
        let p = GemmProblem::from_values(f, &a, &b, &Matrix::filled(8, 8, 0.0)).unwrap();
        let d = run_gemm(&p, None).unwrap();
        let expected = b.map(|&v| v as f32);
        assert_eq!(d, expected);
    }

    #[test]
    fn identity_hook_is_transparent() {
        let p = problem(FpFormat::Bf16, 32, 16, 32);
        let golden = run_gemm(&p, None).unwrap();
        for target in [0, 3, 7] {
            let mut hook = HookFn::new(target, |_, s: &WarpState<'_>| {
                Some(WriteBack {
                    lane: 9,
                    dreg: 2,
                    value: s.d_value(9, 2).unwrap(),
                })
            });
            assert_eq!(run_gemm(&p, Some(&mut hook)).unwrap(), golden);
        }
    }

    #[test]
    fn write_back_lands_in_destination() {
        let p = problem(FpFormat::Tf32, 16, 8, 8);
        let golden = run_gemm(&p, None).unwrap();
        let mut hook = HookFn::new(0, |_, _: &WarpState<'_>| {
            Some(WriteBack {
                lane: 5,
                dreg: 3,
                value: 1234.5,
            })
        });
        let d = run_gemm(&p, Some(&mut hook)).unwrap();
        // lane 5: g = 1, t = 1, dreg 3 -> (g + 8, 2t + 1)
        for r in 0..16 {
            for c in 0..8 {
                if (r, c) == (9, 3) {
                    assert_eq!(d.get(r, c), 1234.5);
                } else {
                    assert_eq!(d.get(r, c).to_bits(), golden.get(r, c).to_bits());
                }
            }
        }
    }

    #[test]
    fn rejects_mismatched_operands() {
        let a = Matrix::filled(16, 8, 0.0f64);
        let b = Matrix::filled(9, 8, 0.0f64);
        let err = GemmProblem::from_values(FpFormat::Tf32, &a, &b, &Matrix::filled(16, 8, 0.0));
        assert!(matches!(err, Err(GemmError::Dimensions(_))));
        let qa = a.map(|&v| encode(v, FpFormat::Bf16));
        let qb = Matrix::filled(8, 8, Encoded::zero(FpFormat::Tf32));
        assert!(matches!(
            GemmProblem::new(FpFormat::Tf32, &qa, &qb, &Matrix::filled(16, 8, 0.0)),
            Err(GemmError::Format { .. })
        ));
    }

    #[test]
    fn sub_problem_matches_full_block() {
        let p = problem(FpFormat::Fp16, 48, 24, 32);
        let full = run_gemm(&p, None).unwrap();
        let sub = p.sub_problem(16, 16, 8, 8);
        assert_eq!(sub.instruction_count(), 2);
        let d = run_gemm(&sub, None).unwrap();
        assert_eq!(d, full.block(16, 8, 16, 8, 0.0));
    }
}
