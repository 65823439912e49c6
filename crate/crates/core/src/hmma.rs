//! One warp-level HMMA operation: `D(16×8) = A(16×k) · B(k×8) + C`.
//!
//! Operands are distributed over the 32 lanes of a warp the way Ampere
//! tensor cores lay them out. Lanes are organised in ThreadGroups of four
//! consecutive lanes; ThreadGroup `g` holds rows `g` and `g + 8` of A and
//! of the accumulator. Each lane computes four dot products of length k
//! (one per destination register) from operands gathered across its
//! ThreadGroup's fragments.

use thiserror::Error;

use crate::fp_codec::{Encoded, FpFormat};

pub const WARP_SIZE: usize = 32;
pub const THREAD_GROUP_SIZE: usize = 4;
/// Destination (accumulator) registers per lane.
pub const DREGS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HmmaError {
    #[error("lane {0} out of range (warp has {WARP_SIZE} lanes)")]
    Lane(usize),
    #[error("destination register {0} out of range (0..{DREGS})")]
    Dreg(usize),
    #[error("term index {index} out of range for k = {k}")]
    Term { index: usize, k: usize },
    #[error("operand {name} has {got} elements, expected {expected}")]
    OperandSize {
        name: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("operand format {got} does not match instruction format {expected}")]
    Format { got: FpFormat, expected: FpFormat },
}

/// Shape of one HMMA instruction. `k` follows from the input format:
/// 8 for TF32, 16 for FP16 and BF16. Accumulation is always binary32.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HmmaShape {
    format: FpFormat,
}

impl HmmaShape {
    pub const M: usize = 16;
    pub const N: usize = 8;

    pub fn for_format(format: FpFormat) -> Self {
        HmmaShape { format }
    }

    pub fn format(self) -> FpFormat {
        self.format
    }

    pub fn m(self) -> usize {
        Self::M
    }

    pub fn n(self) -> usize {
        Self::N
    }

    pub fn k(self) -> usize {
        match self.format {
            FpFormat::Tf32 => 8,
            FpFormat::Fp16 | FpFormat::Bf16 => 16,
        }
    }

    /// A-fragment elements held per lane.
    pub fn a_slots(self) -> usize {
        Self::M * self.k() / WARP_SIZE
    }

    /// B-fragment elements held per lane.
    pub fn b_slots(self) -> usize {
        self.k() * Self::N / WARP_SIZE
    }

    /// Injectable terms of one instruction: every lane, register and k.
    pub fn sites_per_instruction(self) -> usize {
        WARP_SIZE * DREGS * self.k()
    }
}

/// `(row, col)` index into a matrix.
pub type Coord = (usize, usize);

/// Bijection between per-lane register slots and matrix elements.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FragmentMap {
    shape: HmmaShape,
    a_map: Vec<Vec<Coord>>,
    b_map: Vec<Vec<Coord>>,
    d_map: Vec<[Coord; DREGS]>,
    // Inverse tables, column-major over the operand: (lane, slot).
    a_inv: Vec<(usize, usize)>,
    b_inv: Vec<(usize, usize)>,
}

impl FragmentMap {
    pub fn new(shape: HmmaShape) -> Self {
        let mut a_map = Vec::with_capacity(WARP_SIZE);
        let mut b_map = Vec::with_capacity(WARP_SIZE);
        let mut d_map = Vec::with_capacity(WARP_SIZE);
        for lane in 0..WARP_SIZE {
            let g = lane / THREAD_GROUP_SIZE;
            let t = lane % THREAD_GROUP_SIZE;
            match shape.k() {
                8 => {
                    a_map.push(vec![(g, t), (g + 8, t), (g, t + 4), (g + 8, t + 4)]);
                    b_map.push(vec![(t, g), (t + 4, g)]);
                }
                _ => {
                    // Two consecutive elements share one 32-bit register.
                    a_map.push(vec![
                        (g, 2 * t),
                        (g, 2 * t + 1),
                        (g + 8, 2 * t),
                        (g + 8, 2 * t + 1),
                        (g, 2 * t + 8),
                        (g, 2 * t + 9),
                        (g + 8, 2 * t + 8),
                        (g + 8, 2 * t + 9),
                    ]);
                    b_map.push(vec![(2 * t, g), (2 * t + 1, g), (2 * t + 8, g), (2 * t + 9, g)]);
                }
            }
            d_map.push([(g, 2 * t), (g, 2 * t + 1), (g + 8, 2 * t), (g + 8, 2 * t + 1)]);
        }
        Self::from_tables(shape, a_map, b_map, d_map)
    }

    /// Builds a map from explicit tables. Inverse lookups are derived from
    /// the tables; no bijection check is made here (see
    /// [`FragmentMap::check_bijection`]).
    pub fn from_tables(
        shape: HmmaShape,
        a_map: Vec<Vec<Coord>>,
        b_map: Vec<Vec<Coord>>,
        d_map: Vec<[Coord; DREGS]>,
    ) -> Self {
        let (m, n, k) = (shape.m(), shape.n(), shape.k());
        let mut a_inv = vec![(usize::MAX, usize::MAX); m * k];
        let mut b_inv = vec![(usize::MAX, usize::MAX); k * n];
        for (lane, slots) in a_map.iter().enumerate() {
            for (slot, &(r, c)) in slots.iter().enumerate() {
                if r < m && c < k {
                    a_inv[c * m + r] = (lane, slot);
                }
            }
        }
        for (lane, slots) in b_map.iter().enumerate() {
            for (slot, &(r, c)) in slots.iter().enumerate() {
                if r < k && c < n {
                    b_inv[c * k + r] = (lane, slot);
                }
            }
        }
        FragmentMap {
            shape,
            a_map,
            b_map,
            d_map,
            a_inv,
            b_inv,
        }
    }

    pub fn shape(&self) -> HmmaShape {
        self.shape
    }

    pub fn a_coord(&self, lane: usize, slot: usize) -> Coord {
        self.a_map[lane][slot]
    }

    pub fn b_coord(&self, lane: usize, slot: usize) -> Coord {
        self.b_map[lane][slot]
    }

    pub fn d_coord(&self, lane: usize, dreg: usize) -> Coord {
        self.d_map[lane][dreg]
    }

    pub fn a_tables(&self) -> &[Vec<Coord>] {
        &self.a_map
    }

    pub fn b_tables(&self) -> &[Vec<Coord>] {
        &self.b_map
    }

    pub fn d_tables(&self) -> &[[Coord; DREGS]] {
        &self.d_map
    }

    /// Swaps an A slot between ThreadGroups 0 and 1, breaking row
    /// confinement. Used to exercise failure reporting.
    pub fn corrupted(&self) -> Self {
        let mut a_map = self.a_map.clone();
        let tmp = a_map[0][0];
        a_map[0][0] = a_map[THREAD_GROUP_SIZE][0];
        a_map[THREAD_GROUP_SIZE][0] = tmp;
        Self::from_tables(self.shape, a_map, self.b_map.clone(), self.d_map.clone())
    }

    /// Verifies that each map covers its operand exactly once and that the
    /// ThreadGroup row confinement holds. Returns a description of the first
    /// violation.
    pub fn check_bijection(&self) -> Result<(), String> {
        let (m, n, k) = (self.shape.m(), self.shape.n(), self.shape.k());
        check_cover("A", self.a_map.iter().map(|v| v.as_slice()), m, k)?;
        check_cover("B", self.b_map.iter().map(|v| v.as_slice()), k, n)?;
        check_cover("D", self.d_map.iter().map(|v| v.as_slice()), m, n)?;
        for lane in 0..WARP_SIZE {
            let g = lane / THREAD_GROUP_SIZE;
            let rows = self.a_map[lane]
                .iter()
                .map(|c| c.0)
                .chain(self.d_map[lane].iter().map(|c| c.0));
            for row in rows {
                if row != g && row != g + 8 {
                    return Err(format!("lane {lane} (ThreadGroup {g}) touches row {row}"));
                }
            }
        }
        Ok(())
    }
}

fn check_cover<'a>(
    name: &str,
    lanes: impl Iterator<Item = &'a [Coord]>,
    rows: usize,
    cols: usize,
) -> Result<(), String> {
    let mut seen = vec![false; rows * cols];
    let mut count = 0;
    for (lane, slots) in lanes.enumerate() {
        for &(r, c) in slots {
            if r >= rows || c >= cols {
                return Err(format!("{name}: lane {lane} maps outside the matrix ({r},{c})"));
            }
            let idx = c * rows + r;
            if seen[idx] {
                return Err(format!("{name}: element ({r},{c}) held twice"));
            }
            seen[idx] = true;
            count += 1;
        }
    }
    if count != rows * cols {
        return Err(format!("{name}: {count} of {} elements covered", rows * cols));
    }
    Ok(())
}

/// Register contents of a warp after executing one HMMA op, including every
/// scalar product so that a single term can be replaced afterwards.
#[derive(Debug, Clone)]
pub struct WarpState<'m> {
    map: &'m FragmentMap,
    a_frag: Vec<Vec<Encoded>>,
    b_frag: Vec<Vec<Encoded>>,
    c_frag: Vec<[f32; DREGS]>,
    d_frag: Vec<[f32; DREGS]>,
    /// Indexed `[(lane * DREGS + dreg) * k + term]`.
    terms: Vec<f32>,
}

impl<'m> WarpState<'m> {
    pub fn map(&self) -> &'m FragmentMap {
        self.map
    }

    pub fn shape(&self) -> HmmaShape {
        self.map.shape
    }

    pub fn a_fragment(&self, lane: usize) -> &[Encoded] {
        &self.a_frag[lane]
    }

    pub fn b_fragment(&self, lane: usize) -> &[Encoded] {
        &self.b_frag[lane]
    }

    pub fn c_fragment(&self, lane: usize) -> [f32; DREGS] {
        self.c_frag[lane]
    }

    fn check(&self, lane: usize, dreg: usize, term: usize) -> Result<(), HmmaError> {
        if lane >= WARP_SIZE {
            return Err(HmmaError::Lane(lane));
        }
        if dreg >= DREGS {
            return Err(HmmaError::Dreg(dreg));
        }
        let k = self.shape().k();
        if term >= k {
            return Err(HmmaError::Term { index: term, k });
        }
        Ok(())
    }

    /// The exact binary32 product of the `term`-th pair feeding the
    /// destination register `dreg` of `lane`.
    pub fn term_value(&self, lane: usize, dreg: usize, term: usize) -> Result<f32, HmmaError> {
        self.check(lane, dreg, term)?;
        Ok(self.terms[(lane * DREGS + dreg) * self.shape().k() + term])
    }

    pub fn terms(&self, lane: usize, dreg: usize) -> Result<&[f32], HmmaError> {
        self.check(lane, dreg, 0)?;
        let k = self.shape().k();
        let start = (lane * DREGS + dreg) * k;
        Ok(&self.terms[start..start + k])
    }

    /// The A and B operands multiplied to form a term, as held in the
    /// fragments of their owning lanes.
    pub fn term_operands(&self, lane: usize, dreg: usize, term: usize) -> Result<(Encoded, Encoded), HmmaError> {
        self.check(lane, dreg, term)?;
        let (row, col) = self.map.d_coord(lane, dreg);
        Ok((self.a_element(row, term), self.b_element(term, col)))
    }

    /// Accumulated result held in a destination register.
    pub fn d_value(&self, lane: usize, dreg: usize) -> Result<f32, HmmaError> {
        self.check(lane, dreg, 0)?;
        Ok(self.d_frag[lane][dreg])
    }

    fn a_element(&self, row: usize, col: usize) -> Encoded {
        let (lane, slot) = self.map.a_inv[col * self.shape().m() + row];
        self.a_frag[lane][slot]
    }

    fn b_element(&self, row: usize, col: usize) -> Encoded {
        let (lane, slot) = self.map.b_inv[col * self.shape().k() + row];
        self.b_frag[lane][slot]
    }

    /// Gathers the destination fragments back into a column-major 16×8 tile.
    pub fn d_matrix(&self) -> Vec<f32> {
        let m = self.shape().m();
        let mut d = vec![0.0; m * self.shape().n()];
        for lane in 0..WARP_SIZE {
            for dreg in 0..DREGS {
                let (r, c) = self.map.d_coord(lane, dreg);
                d[c * m + r] = self.d_frag[lane][dreg];
            }
        }
        d
    }
}

/// Binary32 product of two reduced-precision operands. Every supported
/// format has at most 11 significand bits, so the product is exact unless
/// it leaves the binary32 range.
#[inline]
pub fn term_product(a: Encoded, b: Encoded) -> f32 {
    (a.decode() as f32) * (b.decode() as f32)
}

/// Executes one HMMA op over column-major tiles `a` (16×k), `b` (k×8) and
/// accumulator `c` (16×8). Each destination is `c + Σ term_i` accumulated
/// sequentially in ascending term order with binary32 round-to-nearest-even.
pub fn execute_hmma<'m>(
    a: &[Encoded],
    b: &[Encoded],
    c: &[f32],
    map: &'m FragmentMap,
) -> Result<(Vec<f32>, WarpState<'m>), HmmaError> {
    let shape = map.shape;
    let (m, n, k) = (shape.m(), shape.n(), shape.k());
    for (name, got, expected) in [("A", a.len(), m * k), ("B", b.len(), k * n), ("C", c.len(), m * n)] {
        if got != expected {
            return Err(HmmaError::OperandSize { name, got, expected });
        }
    }
    if let Some(bad) = a.iter().chain(b).find(|e| e.format() != shape.format()) {
        return Err(HmmaError::Format {
            got: bad.format(),
            expected: shape.format(),
        });
    }

    // Load fragments: each lane reads the elements its slots are mapped to.
    let a_frag: Vec<Vec<Encoded>> = map
        .a_map
        .iter()
        .map(|slots| slots.iter().map(|&(r, col)| a[col * m + r]).collect())
        .collect();
    let b_frag: Vec<Vec<Encoded>> = map
        .b_map
        .iter()
        .map(|slots| slots.iter().map(|&(r, col)| b[col * k + r]).collect())
        .collect();
    let c_frag: Vec<[f32; DREGS]> = map
        .d_map
        .iter()
        .map(|coords| coords.map(|(r, col)| c[col * m + r]))
        .collect();

    let mut state = WarpState {
        map,
        a_frag,
        b_frag,
        c_frag,
        d_frag: Vec::with_capacity(WARP_SIZE),
        terms: Vec::with_capacity(WARP_SIZE * DREGS * k),
    };
    for lane in 0..WARP_SIZE {
        let mut d = [0f32; DREGS];
        for (dreg, out) in d.iter_mut().enumerate() {
            let (row, col) = map.d_coord(lane, dreg);
            let mut acc = state.c_frag[lane][dreg];
            for i in 0..k {
                let p = term_product(state.a_element(row, i), state.b_element(i, col));
                state.terms.push(p);
                acc += p;
            }
            *out = acc;
        }
        state.d_frag.push(d);
    }
    Ok((state.d_matrix(), state))
}
