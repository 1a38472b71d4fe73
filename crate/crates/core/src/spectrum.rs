//! Per-frame 2D spectra in half-plane layout, and the retained wave-vector set.
//!
//! A real W×H frame has a Hermitian spectrum, so only `H × (W/2 + 1)`
//! coefficients (non-negative horizontal frequencies) are stored. Transforms
//! are unnormalized: element (0, 0) is the plain pixel sum.

use std::sync::Arc;

use num_complex::Complex;
use realfft::{RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::io::ImageStack;
use crate::precision::Real;

/// Planned 2D real-to-half-plane transform for one frame size.
///
/// Plans are immutable and shared; each worker brings its own [`SpatialScratch`].
pub struct SpatialTransform<T: Real> {
    width: usize,
    height: usize,
    rows: Arc<dyn RealToComplex<T>>,
    cols: Arc<dyn Fft<T>>,
}

pub struct SpatialScratch<T: Real> {
    row_in: Vec<T>,
    row_out: Vec<Complex<T>>,
    row_scratch: Vec<Complex<T>>,
    column: Vec<Complex<T>>,
    col_scratch: Vec<Complex<T>>,
}

impl<T: Real> SpatialTransform<T> {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "frame size must be positive, got {width}x{height}"
            )));
        }
        let rows = RealFftPlanner::<T>::new().plan_fft_forward(width);
        let cols = FftPlanner::<T>::new().plan_fft_forward(height);
        Ok(Self {
            width,
            height,
            rows,
            cols,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn half_cols(&self) -> usize {
        self.width / 2 + 1
    }

    /// Number of complex coefficients in one half-plane spectrum.
    pub fn half_len(&self) -> usize {
        self.height * self.half_cols()
    }

    pub fn scratch(&self) -> SpatialScratch<T> {
        SpatialScratch {
            row_in: self.rows.make_input_vec(),
            row_out: self.rows.make_output_vec(),
            row_scratch: self.rows.make_scratch_vec(),
            column: vec![Complex::new(T::zero(), T::zero()); self.height],
            col_scratch: vec![Complex::new(T::zero(), T::zero()); self.cols.get_inplace_scratch_len()],
        }
    }

    /// Transforms a frame given through `pixel`, which maps a row-major pixel
    /// index to its value.
    fn run(
        &self,
        pixel: impl Fn(usize) -> T,
        out: &mut [Complex<T>],
        scratch: &mut SpatialScratch<T>,
    ) {
        let cols = self.half_cols();
        assert_eq!(out.len(), self.height * cols, "output is not half-plane sized");
        for r in 0..self.height {
            for (c, v) in scratch.row_in.iter_mut().enumerate() {
                *v = pixel(r * self.width + c);
            }
            self.rows
                .process_with_scratch(&mut scratch.row_in, &mut scratch.row_out, &mut scratch.row_scratch)
                .expect("buffer sizes come from the plan");
            out[r * cols..(r + 1) * cols].copy_from_slice(&scratch.row_out);
        }
        if self.height > 1 {
            for c in 0..cols {
                for r in 0..self.height {
                    scratch.column[r] = out[r * cols + c];
                }
                self.cols
                    .process_with_scratch(&mut scratch.column, &mut scratch.col_scratch);
                for r in 0..self.height {
                    out[r * cols + c] = scratch.column[r];
                }
            }
        }
    }

    /// Forward transform of a real-valued frame. Rejects non-finite pixels.
    pub fn forward(
        &self,
        frame: &[T],
        out: &mut [Complex<T>],
        scratch: &mut SpatialScratch<T>,
    ) -> Result<()> {
        self.check_len(frame.len())?;
        if let Some(i) = frame.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite pixel at index {i}")));
        }
        self.run(|i| frame[i], out, scratch);
        Ok(())
    }

    pub fn forward_u16(
        &self,
        frame: &[u16],
        out: &mut [Complex<T>],
        scratch: &mut SpatialScratch<T>,
    ) -> Result<()> {
        self.check_len(frame.len())?;
        self.run(|i| T::from_f64_lossy(frame[i] as f64), out, scratch);
        Ok(())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.width * self.height {
            return Err(Error::InvalidArgument(format!(
                "frame has {len} pixels, transform expects {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// One-shot f64 transform of a real frame into a fresh half-plane matrix.
pub fn forward_spectrum(frame: &[f64], width: usize, height: usize) -> Result<Vec<Complex<f64>>> {
    let plan = SpatialTransform::<f64>::new(width, height)?;
    let mut out = vec![Complex::new(0.0, 0.0); plan.half_len()];
    plan.forward(frame, &mut out, &mut plan.scratch())?;
    Ok(out)
}

/// Half-plane spectra of every frame of a stack, held in memory.
#[derive(Debug, Clone)]
pub struct SpectrumStack<T> {
    pub rows: usize,
    pub cols: usize,
    pub frames: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> SpectrumStack<T> {
    pub fn from_stack(stack: &ImageStack) -> Result<Self> {
        let plan = SpatialTransform::<T>::new(stack.width(), stack.height())?;
        let len = plan.half_len();
        let mut data = vec![Complex::new(T::zero(), T::zero()); len * stack.frames()];
        let mut scratch = plan.scratch();
        for (n, out) in data.chunks_exact_mut(len).enumerate() {
            plan.forward_u16(stack.frame(n), out, &mut scratch)?;
        }
        Ok(Self {
            rows: stack.height(),
            cols: plan.half_cols(),
            frames: stack.frames(),
            data,
        })
    }

    pub fn frame(&self, n: usize) -> &[Complex<T>] {
        let len = self.rows * self.cols;
        &self.data[n * len..(n + 1) * len]
    }
}

/// Half-plane positions kept for analysis, sorted row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveVectorSet {
    rows: usize,
    cols: usize,
    q_max: Option<f64>,
    /// Flat half-plane offsets `row * cols + col`.
    flat: Vec<usize>,
}

/// Signed vertical frequency of a half-plane row.
pub fn signed_row(row: usize, height: usize) -> i64 {
    if row <= height / 2 {
        row as i64
    } else {
        row as i64 - height as i64
    }
}

/// Radial index `sqrt(q_row² + col²)` of a half-plane position.
pub fn radius(row: usize, col: usize, height: usize) -> f64 {
    let qr = signed_row(row, height) as f64;
    let qc = col as f64;
    (qr * qr + qc * qc).sqrt()
}

/// Wave vectors of a W×H half-plane within radial index `q_max`; `None` keeps all.
pub fn cutoff_set(width: usize, height: usize, q_max: Option<f64>) -> Result<WaveVectorSet> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument("frame size must be positive".into()));
    }
    if let Some(q) = q_max {
        if !(q >= 0.0) {
            return Err(Error::InvalidArgument(format!("q_max must be >= 0, got {q}")));
        }
    }
    let cols = width / 2 + 1;
    let flat = (0..height)
        .flat_map(|r| (0..cols).map(move |c| (r, c)))
        .filter(|&(r, c)| q_max.is_none_or(|q| radius(r, c, height) <= q))
        .map(|(r, c)| r * cols + c)
        .collect();
    Ok(WaveVectorSet {
        rows: height,
        cols,
        q_max,
        flat,
    })
}

impl WaveVectorSet {
    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn q_max(&self) -> Option<f64> {
        self.q_max
    }

    pub fn flat_indices(&self) -> &[usize] {
        &self.flat
    }

    pub fn position(&self, i: usize) -> (usize, usize) {
        (self.flat[i] / self.cols, self.flat[i] % self.cols)
    }

    pub fn radius(&self, i: usize) -> f64 {
        let (r, c) = self.position(i);
        radius(r, c, self.rows)
    }

    /// Copies the retained coefficients of a half-plane spectrum, in set order.
    pub fn gather<T: Copy>(&self, half_plane: &[T], out: &mut [T]) {
        for (dst, &k) in out.iter_mut().zip(&self.flat) {
            *dst = half_plane[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(seed: u64, w: usize, h: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..w * h).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Rebuilds the full W×H spectrum from the half-plane via X[r][c] = conj(X[-r][-c]).
    fn full_plane(half: &[Complex<f64>], w: usize, h: usize) -> Vec<Complex<f64>> {
        let cols = w / 2 + 1;
        let mut full = vec![Complex::new(0.0, 0.0); w * h];
        for r in 0..h {
            for c in 0..w {
                full[r * w + c] = if c < cols {
                    half[r * cols + c]
                } else {
                    half[((h - r) % h) * cols + (w - c)].conj()
                };
            }
        }
        full
    }

    /// Naive O((WH)^2) inverse DFT with 1/(WH) normalization.
    fn inverse_dft(full: &[Complex<f64>], w: usize, h: usize) -> Vec<f64> {
        let tau = std::f64::consts::TAU;
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = Complex::new(0.0, 0.0);
                for r in 0..h {
                    for c in 0..w {
                        let phase = tau * (r as f64 * y as f64 / h as f64 + c as f64 * x as f64 / w as f64);
                        acc += full[r * w + c] * Complex::from_polar(1.0, phase);
                    }
                }
                out[y * w + x] = acc.re / (w * h) as f64;
            }
        }
        out
    }

    #[test]
    fn constant_frame_has_only_dc() {
        let v = 3.25;
        let spec = forward_spectrum(&[v; 64], 8, 8).unwrap();
        assert_eq!(spec.len(), 8 * 5);
        let dc = spec[0];
        assert!((dc.re - 64.0 * v).abs() < 1e-12 * 64.0 * v);
        for z in &spec[1..] {
            assert!(z.norm() <= 1e-12 * dc.norm(), "{z}");
        }
    }

    #[test]
    fn delta_frame_is_flat() {
        let mut frame = vec![0.0; 64];
        frame[0] = 1.0;
        for z in forward_spectrum(&frame, 8, 8).unwrap() {
            assert!((z - Complex::new(1.0, 0.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn parseval_on_random_frame() {
        let (w, h) = (16, 16);
        let frame = random_frame(1, w, h);
        let energy: f64 = frame.iter().map(|v| v * v).sum();
        let half = forward_spectrum(&frame, w, h).unwrap();
        let spectral: f64 =
            full_plane(&half, w, h).iter().map(|z| z.norm_sqr()).sum::<f64>() / (w * h) as f64;
        assert!((energy - spectral).abs() <= 1e-10 * energy);
    }

    #[test]
    fn inverse_of_reconstructed_plane_recovers_frame() {
        for (w, h) in [(6, 5), (7, 4), (1, 3), (5, 1)] {
            let frame = random_frame(w as u64 * 31 + h as u64, w, h);
            let half = forward_spectrum(&frame, w, h).unwrap();
            let back = inverse_dft(&full_plane(&half, w, h), w, h);
            for (a, b) in frame.iter().zip(&back) {
                assert!((a - b).abs() < 1e-12, "{w}x{h}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn non_finite_pixels_are_rejected() {
        let mut frame = vec![0.0; 4];
        frame[2] = f64::NAN;
        assert!(forward_spectrum(&frame, 2, 2).is_err());
    }

    #[test]
    fn f32_matches_f64_loosely() {
        let frame: Vec<u16> = (0..64u16).map(|v| v * 997 % 4096).collect();
        let p64 = SpatialTransform::<f64>::new(8, 8).unwrap();
        let p32 = SpatialTransform::<f32>::new(8, 8).unwrap();
        let mut a = vec![Complex::new(0.0, 0.0); p64.half_len()];
        let mut b = vec![Complex::new(0.0f32, 0.0); p32.half_len()];
        p64.forward_u16(&frame, &mut a, &mut p64.scratch()).unwrap();
        p32.forward_u16(&frame, &mut b, &mut p32.scratch()).unwrap();
        let scale = a[0].norm();
        for (x, y) in a.iter().zip(&b) {
            let y = Complex::new(y.re as f64, y.im as f64);
            assert!((x - y).norm() <= 1e-5 * scale);
        }
    }

    #[test]
    fn cutoff_zero_keeps_dc_only() {
        for (w, h) in [(1, 1), (8, 8), (17, 5)] {
            let set = cutoff_set(w, h, Some(0.0)).unwrap();
            assert_eq!(set.len(), 1);
            assert_eq!(set.position(0), (0, 0));
        }
    }

    #[test]
    fn cutoff_none_keeps_half_plane() {
        assert_eq!(cutoff_set(512, 512, None).unwrap().len(), 131_584);
    }

    #[test]
    fn cutoff_disc_matches_enumeration() {
        // brute force over the half-plane with explicit signed frequencies
        let (w, h, q) = (8usize, 8usize, 2.0f64);
        let mut expected = 0;
        for row in 0..h {
            let qr = if row <= h / 2 { row as f64 } else { row as f64 - h as f64 };
            for col in 0..=w / 2 {
                if (qr * qr + (col * col) as f64).sqrt() <= q {
                    expected += 1;
                }
            }
        }
        // row 0: cols 0..=2; rows ±1: cols 0..=1; rows ±2: col 0
        assert_eq!(expected, 9);
        assert_eq!(cutoff_set(w, h, Some(q)).unwrap().len(), expected);
    }

    #[test]
    fn cutoff_rejects_negative_radius() {
        assert!(cutoff_set(4, 4, Some(-1.0)).is_err());
        assert!(cutoff_set(4, 4, Some(f64::NAN)).is_err());
    }

    #[test]
    fn signed_rows_wrap_above_half() {
        assert_eq!(signed_row(4, 8), 4);
        assert_eq!(signed_row(5, 8), -3);
        assert_eq!(signed_row(2, 5), 2);
        assert_eq!(signed_row(3, 5), -2);
    }
}
