//! Unnormalized 2D FFTs over row-major complex buffers.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub(crate) struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub(crate) fn new(planner: &mut FftPlanner<f64>, rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub(crate) fn forward(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.row_fwd, &self.col_fwd);
    }

    /// Inverse transform without the `1/N` factor.
    pub(crate) fn inverse(&self, buf: &mut [Complex64]) {
        self.run(buf, &self.row_inv, &self.col_inv);
    }

    fn run(&self, buf: &mut [Complex64], row: &Arc<dyn Fft<f64>>, col: &Arc<dyn Fft<f64>>) {
        debug_assert_eq!(buf.len(), self.len());
        SCRATCH.with(|cell| {
            let (cols_major, fft_scratch) = &mut *cell.borrow_mut();
            let need = row.get_inplace_scratch_len().max(col.get_inplace_scratch_len());
            if fft_scratch.len() < need {
                fft_scratch.resize(need, Complex64::new(0.0, 0.0));
            }
            cols_major.resize(buf.len(), Complex64::new(0.0, 0.0));
            row.process_with_scratch(buf, &mut fft_scratch[..row.get_inplace_scratch_len()]);
            transpose(buf, cols_major, self.rows, self.cols);
            col.process_with_scratch(cols_major, &mut fft_scratch[..col.get_inplace_scratch_len()]);
            transpose(cols_major, buf, self.cols, self.rows);
        });
    }
}

thread_local! {
    /// Transpose buffer and FFT scratch, reused across calls on each thread.
    static SCRATCH: RefCell<(Vec<Complex64>, Vec<Complex64>)> = const { RefCell::new((Vec::new(), Vec::new())) };
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const BLOCK: usize = 16;
    for rb in (0..rows).step_by(BLOCK) {
        for cb in (0..cols).step_by(BLOCK) {
            for r in rb..(rb + BLOCK).min(rows) {
                for c in cb..(cb + BLOCK).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_inverse_round_trip() {
        let mut planner = FftPlanner::new();
        let fft = Fft2::new(&mut planner, 6, 10);
        let orig: Vec<Complex64> = (0..60)
            .map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()))
            .collect();
        let mut buf = orig.clone();
        fft.forward(&mut buf);
        fft.inverse(&mut buf);
        for (a, b) in orig.iter().zip(&buf) {
            assert!((a - b / 60.0).norm() < 1e-12);
        }
    }

    #[test]
    fn single_frequency_lands_in_one_bin() {
        let (rows, cols) = (8, 8);
        let mut planner = FftPlanner::new();
        let fft = Fft2::new(&mut planner, rows, cols);
        let mut buf: Vec<Complex64> = (0..rows * cols)
            .map(|i| {
                let (r, c) = (i / cols, i % cols);
                let arg = 2.0 * std::f64::consts::PI * (2.0 * c as f64 / cols as f64 + 1.0 * r as f64 / rows as f64);
                Complex64::from_polar(1.0, arg)
            })
            .collect();
        fft.forward(&mut buf);
        for (i, v) in buf.iter().enumerate() {
            let expected = if i == cols + 2 { 64.0 } else { 0.0 };
            assert!((v.norm() - expected).abs() < 1e-9, "bin {i}");
        }
    }
}
