//! Column-major dense matrices and their on-disk forms.
//!
//! Two file layouts are supported, chosen by extension:
//! `.csv` holds one matrix column per line; anything else is a raw
//! little-endian binary32 array in column-major order.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("{rows}x{cols} matrix needs {expected} elements, got {got}")]
    Size {
        rows: usize,
        cols: usize,
        expected: usize,
        got: usize,
    },
    #[error("malformed matrix file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Clone> Matrix<T> {
    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_col_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, MatrixError> {
        if data.len() != rows * cols {
            return Err(MatrixError::Size {
                rows,
                cols,
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for c in 0..cols {
            for r in 0..rows {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[col * self.rows + row].clone()
    }

    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[col * self.rows + row] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// Copy of rows `r0..r0+rows` and columns `c0..c0+cols`; positions
    /// outside `self` are filled with `pad`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize, pad: T) -> Matrix<T> {
        Matrix::from_fn(rows, cols, |r, c| {
            let (rr, cc) = (r0 + r, c0 + c);
            if rr < self.rows && cc < self.cols {
                self.get(rr, cc)
            } else {
                pad.clone()
            }
        })
    }

    /// Writes `src` with its top-left corner at `(r0, c0)`, clipping to `self`.
    pub fn paste(&mut self, r0: usize, c0: usize, src: &Matrix<T>) {
        for c in 0..src.cols {
            for r in 0..src.rows {
                let (rr, cc) = (r0 + r, c0 + c);
                if rr < self.rows && cc < self.cols {
                    self.set(rr, cc, src.get(r, c));
                }
            }
        }
    }
}

impl Matrix<f32> {
    pub fn save(&self, path: &Path) -> Result<(), MatrixError> {
        if is_csv(path) {
            let mut out = String::new();
            for col in self.data.chunks(self.rows.max(1)) {
                let line: Vec<String> = col.iter().map(|v| v.to_string()).collect();
                out.push_str(&line.join(","));
                out.push('\n');
            }
            fs::write(path, out)?;
        } else {
            let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
            fs::write(path, bytes)?;
        }
        Ok(())
    }

    pub fn load(path: &Path, rows: usize, cols: usize) -> Result<Self, MatrixError> {
        let data = if is_csv(path) {
            let text = fs::read_to_string(path)?;
            let mut data = Vec::with_capacity(rows * cols);
            for (lineno, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                for field in line.split(',') {
                    let v = field
                        .trim()
                        .parse::<f32>()
                        .map_err(|e| MatrixError::Parse(format!("line {}: `{}`: {e}", lineno + 1, field.trim())))?;
                    data.push(v);
                }
            }
            data
        } else {
            let bytes = fs::read(path)?;
            if bytes.len() % 4 != 0 {
                return Err(MatrixError::Parse(format!(
                    "{} bytes is not a whole number of binary32 values",
                    bytes.len()
                )));
            }
            bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect()
        };
        Matrix::from_col_major(rows, cols, data)
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_and_paste() {
        let m = Matrix::from_fn(3, 2, |r, c| (r * 10 + c) as f32);
        let b = m.block(2, 1, 2, 2, -1.0);
        assert_eq!(b.as_slice(), &[21.0, -1.0, -1.0, -1.0]);
        let mut z = Matrix::filled(3, 2, 0.0f32);
        z.paste(1, 1, &b);
        assert_eq!(z.get(1, 1), 21.0);
        assert_eq!(z.get(2, 1), -1.0);
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Matrix::from_fn(4, 3, |r, c| r as f32 * 0.5 - c as f32 * 1e-7);
        for name in ["m.csv", "m.f32"] {
            let path = dir.path().join(name);
            m.save(&path).unwrap();
            assert_eq!(Matrix::load(&path, 4, 3).unwrap(), m);
            assert!(Matrix::load(&path, 4, 4).is_err());
        }
        let text = fs::read_to_string(dir.path().join("m.csv")).unwrap();
        assert_eq!(text.lines().count(), 3);
    }
}
