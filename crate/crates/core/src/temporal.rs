//! Structure function of a single time sequence through a temporal FFT.
//!
//! For one wave vector with amplitudes `s_0 .. s_{N-1}` the structure function
//! expands into
//!
//! ```text
//! d(m) = d_a(m) - 2 corr(m) / (N - m)
//! d_a(m) = 1/(N-m) * sum_{n=m}^{N-1} (|s_{n-m}|^2 + |s_n|^2)
//! corr(m) = sum_{n=m}^{N-1} Re(conj(s_{n-m}) s_n)
//! ```
//!
//! `d_a` costs O(N) through a backward recursion; `corr` is a linear
//! autocorrelation taken as the inverse transform of the power spectrum of
//! the sequence zero-padded to `2^(ceil(log2 N) + 1)` points, which is long
//! enough that the circular wrap-around of the FFT never reaches a lag < N.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::precision::Real;
use crate::timing::OpCounters;

/// Padded support length for an N-point sequence.
pub fn pad_length(n: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::InvalidArgument("time sequence must have at least one point".into()));
    }
    Ok(n.next_power_of_two() * 2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagProfile {
    pub d: Vec<f64>,
    pub d_a: Vec<f64>,
    pub corr: Vec<f64>,
}

fn check_finite<T: Real>(seq: &[Complex<T>]) -> Result<()> {
    match seq.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
        Some(i) => Err(Error::InvalidArgument(format!("non-finite sequence value at {i}"))),
        None => Ok(()),
    }
}

fn norm_sqr_f64<T: Real>(z: Complex<T>) -> f64 {
    let (re, im): (f64, f64) = (z.re.into(), z.im.into());
    re * re + im * im
}

/// Averages of squared moduli over the two ends of the sequence, in O(N).
pub fn averages_term<T: Real>(seq: &[Complex<T>]) -> Result<Vec<f64>> {
    check_finite(seq)?;
    let n_len = seq.len();
    let mut d_a = vec![0.0; n_len];
    // d_a(N-n-1) = n/(n+1) d_a(N-n) + (|s_n|^2 + |s_{N-n-1}|^2)/(n+1), with d_a(N) = 0
    let mut prev = 0.0;
    for n in 0..n_len {
        let k = n as f64;
        let m = n_len - n - 1;
        let next = k / (k + 1.0) * prev + (norm_sqr_f64(seq[n]) + norm_sqr_f64(seq[m])) / (k + 1.0);
        d_a[m] = next;
        prev = next;
    }
    Ok(d_a)
}

pub fn combine(d_a: &[f64], corr: &[f64]) -> Result<LagProfile> {
    if d_a.len() != corr.len() {
        return Err(Error::InvalidArgument(format!(
            "d_a has {} lags, corr has {}",
            d_a.len(),
            corr.len()
        )));
    }
    let n = d_a.len();
    let d = d_a
        .iter()
        .zip(corr)
        .enumerate()
        .map(|(m, (a, c))| a - 2.0 * c / (n - m) as f64)
        .collect();
    Ok(LagProfile {
        d,
        d_a: d_a.to_vec(),
        corr: corr.to_vec(),
    })
}

/// Planned temporal transforms for sequences of one length.
pub struct TemporalEngine<T: Real> {
    len: usize,
    padded: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

/// Per-worker padded buffer and FFT scratch, reused across sequences.
pub struct TemporalScratch<T> {
    buffer: Vec<Complex<T>>,
    fft: Vec<Complex<T>>,
}

impl<T: Real> TemporalEngine<T> {
    pub fn new(len: usize) -> Result<Self> {
        let padded = pad_length(len)?;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(padded);
        let inverse = planner.plan_fft_inverse(padded);
        Ok(Self {
            len,
            padded,
            forward,
            inverse,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn padded_len(&self) -> usize {
        self.padded
    }

    pub fn scratch(&self) -> TemporalScratch<T> {
        let zero = Complex::new(T::zero(), T::zero());
        let fft_len = self
            .forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len());
        TemporalScratch {
            buffer: vec![zero; self.padded],
            fft: vec![zero; fft_len],
        }
    }

    fn check_len(&self, seq: &[Complex<T>]) -> Result<()> {
        if seq.len() != self.len {
            return Err(Error::InvalidArgument(format!(
                "sequence has {} points, engine expects {}",
                seq.len(),
                self.len
            )));
        }
        check_finite(seq)
    }

    /// Unnormalized linear autocorrelation `corr(m)` for m in [0, N).
    ///
    /// Performs exactly two transforms of the padded length.
    pub fn correlation_term(
        &self,
        seq: &[Complex<T>],
        scratch: &mut TemporalScratch<T>,
        counters: Option<&OpCounters>,
    ) -> Result<Vec<f64>> {
        self.check_len(seq)?;
        let zero = Complex::new(T::zero(), T::zero());
        let buf = &mut scratch.buffer;
        buf[..self.len].copy_from_slice(seq);
        buf[self.len..].fill(zero);
        self.forward.process_with_scratch(buf, &mut scratch.fft);
        for z in buf.iter_mut() {
            *z = Complex::new(z.norm_sqr(), T::zero());
        }
        self.inverse.process_with_scratch(buf, &mut scratch.fft);
        if let Some(c) = counters {
            c.add_temporal(2);
        }
        let scale = 1.0 / self.padded as f64;
        Ok(buf[..self.len]
            .iter()
            .map(|z| Into::<f64>::into(z.re) * scale)
            .collect())
    }

    pub fn with_ft_sequence(
        &self,
        seq: &[Complex<T>],
        scratch: &mut TemporalScratch<T>,
        counters: Option<&OpCounters>,
    ) -> Result<LagProfile> {
        let corr = self.correlation_term(seq, scratch, counters)?;
        let d_a = averages_term(seq)?;
        combine(&d_a, &corr)
    }
}

/// Convenience one-shot correlation for a single sequence.
pub fn correlation_term<T: Real>(seq: &[Complex<T>]) -> Result<Vec<f64>> {
    let engine = TemporalEngine::new(seq.len())?;
    engine.correlation_term(seq, &mut engine.scratch(), None)
}

pub fn with_ft_sequence<T: Real>(seq: &[Complex<T>]) -> Result<LagProfile> {
    let engine = TemporalEngine::new(seq.len())?;
    engine.with_ft_sequence(seq, &mut engine.scratch(), None)
}

/// O(N²) reference: explicit mean of squared differences at every lag.
pub fn direct_sequence_oracle<T: Real>(seq: &[Complex<T>]) -> Result<LagProfile> {
    if seq.is_empty() {
        return Err(Error::InvalidArgument("time sequence must have at least one point".into()));
    }
    check_finite(seq)?;
    let s: Vec<Complex<f64>> = seq
        .iter()
        .map(|z| Complex::new(z.re.into(), z.im.into()))
        .collect();
    let n = s.len();
    let mut d = vec![0.0; n];
    let mut d_a = vec![0.0; n];
    let mut corr = vec![0.0; n];
    for m in 0..n {
        let (mut diff, mut avg, mut cross) = (0.0, 0.0, 0.0);
        for k in m..n {
            diff += (s[k - m] - s[k]).norm_sqr();
            avg += s[k - m].norm_sqr() + s[k].norm_sqr();
            cross += (s[k - m].conj() * s[k]).re;
        }
        let count = (n - m) as f64;
        d[m] = diff / count;
        d_a[m] = avg / count;
        corr[m] = cross;
    }
    Ok(LagProfile { d, d_a, corr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn real(values: &[f64]) -> Vec<Complex<f64>> {
        values.iter().map(|&v| Complex::new(v, 0.0)).collect()
    }

    fn random_seq(seed: u64, n: usize) -> Vec<Complex<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Complex::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)))
            .collect()
    }

    fn assert_close(a: &[f64], b: &[f64], rel: f64) {
        let scale = b.iter().chain(a).fold(1.0f64, |m, v| m.max(v.abs()));
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            assert!((x - y).abs() <= rel * scale, "index {i}: {x} vs {y}");
        }
    }

    #[test]
    fn pad_lengths() {
        assert_eq!(pad_length(16384).unwrap(), 32768);
        assert_eq!(pad_length(1000).unwrap(), 2048);
        assert_eq!(pad_length(2).unwrap(), 4);
        assert_eq!(pad_length(1).unwrap(), 2);
        assert!(pad_length(0).is_err());
    }

    #[test]
    fn averages_of_one_two_three() {
        let d_a = averages_term(&real(&[1.0, 2.0, 3.0])).unwrap();
        assert_close(&d_a, &[28.0 / 3.0, 9.0, 10.0], 1e-15);
    }

    #[test]
    fn averages_of_two_points() {
        let (a, b) = (Complex::new(1.5, -2.0), Complex::new(-0.25, 3.0));
        let d_a = averages_term(&[a, b]).unwrap();
        let both = a.norm_sqr() + b.norm_sqr();
        assert_close(&d_a, &[both, both], 1e-15);
    }

    #[test]
    fn averages_of_zeros() {
        assert_eq!(averages_term(&vec![Complex::new(0.0, 0.0); 16]).unwrap(), vec![0.0; 16]);
    }

    #[test]
    fn correlation_of_one_two_three() {
        assert_close(&correlation_term(&real(&[1.0, 2.0, 3.0])).unwrap(), &[14.0, 8.0, 3.0], 1e-14);
    }

    #[test]
    fn correlation_of_single_point() {
        let c = Complex::new(3.0, 4.0);
        assert_close(&correlation_term(&[c]).unwrap(), &[25.0], 1e-14);
    }

    #[test]
    fn correlation_has_no_wraparound_at_n100() {
        let seq = random_seq(100, 100);
        let fft = correlation_term(&seq).unwrap();
        let direct = direct_sequence_oracle(&seq).unwrap().corr;
        assert_close(&fft, &direct, 1e-10);
    }

    #[test]
    fn combine_worked_example() {
        let p = combine(&[28.0 / 3.0, 9.0, 10.0], &[14.0, 8.0, 3.0]).unwrap();
        assert_close(&p.d, &[0.0, 1.0, 4.0], 1e-14);
    }

    #[test]
    fn combine_does_not_force_zero_lag() {
        // seq [1, -1]: d_a = [2, 2], corr = [2, -1]
        let p = combine(&[2.0, 2.0], &[2.0, -1.0]).unwrap();
        assert_eq!(p.d, vec![0.0, 4.0]);
        let p = combine(&[2.0, 2.0], &[0.0, 0.0]).unwrap();
        assert_eq!(p.d[0], 2.0);
    }

    #[test]
    fn combine_length_mismatch() {
        assert!(combine(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn full_pipeline_worked_example() {
        let p = with_ft_sequence(&real(&[1.0, 2.0, 3.0])).unwrap();
        assert_close(&p.d, &[0.0, 1.0, 4.0], 1e-14);
        assert_close(&p.d_a, &[28.0 / 3.0, 9.0, 10.0], 1e-14);
        assert_close(&p.corr, &[14.0, 8.0, 3.0], 1e-14);
    }

    #[test]
    fn constant_sequence_has_zero_structure() {
        let seq = vec![Complex::new(2.5, -1.0); 37];
        let p = with_ft_sequence(&seq).unwrap();
        assert!(p.d.iter().all(|v| v.abs() < 1e-12), "{:?}", p.d);
    }

    #[test]
    fn single_point_sequence() {
        let p = with_ft_sequence(&[Complex::new(7.0, 1.0)]).unwrap();
        assert_eq!(p.d.len(), 1);
        assert!(p.d[0].abs() < 1e-12);
    }

    #[test]
    fn oracle_examples() {
        assert_eq!(direct_sequence_oracle(&real(&[1.0, 2.0, 3.0])).unwrap().d, vec![0.0, 1.0, 4.0]);
        assert_eq!(direct_sequence_oracle(&real(&[4.0, 4.0])).unwrap().d, vec![0.0, 0.0]);
    }

    #[test]
    fn random_n64_matches_oracle() {
        let seq = random_seq(64, 64);
        let fast = with_ft_sequence(&seq).unwrap();
        let slow = direct_sequence_oracle(&seq).unwrap();
        assert_close(&fast.d, &slow.d, 1e-9);
        assert_close(&fast.d_a, &slow.d_a, 1e-12);
    }

    #[test]
    fn two_transforms_per_sequence() {
        let counters = OpCounters::new();
        for n in [1, 5, 64, 100] {
            let engine = TemporalEngine::<f64>::new(n).unwrap();
            let mut scratch = engine.scratch();
            let before = counters.snapshot(0).temporal_ffts;
            engine
                .correlation_term(&random_seq(n as u64, n), &mut scratch, Some(&counters))
                .unwrap();
            assert_eq!(counters.snapshot(0).temporal_ffts - before, 2);
        }
    }

    #[test]
    fn scratch_reuse_does_not_leak_between_sequences() {
        let engine = TemporalEngine::<f64>::new(20).unwrap();
        let mut scratch = engine.scratch();
        let a = random_seq(1, 20);
        let b = random_seq(2, 20);
        let first = engine.with_ft_sequence(&b, &mut engine.scratch(), None).unwrap();
        engine.with_ft_sequence(&a, &mut scratch, None).unwrap();
        let reused = engine.with_ft_sequence(&b, &mut scratch, None).unwrap();
        assert_eq!(first, reused);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let seq = vec![Complex::new(1.0, 0.0), Complex::new(f64::INFINITY, 0.0)];
        assert!(averages_term(&seq).is_err());
        assert!(correlation_term(&seq).is_err());
        assert!(direct_sequence_oracle(&seq).is_err());
    }

    #[test]
    fn f32_engine_tracks_f64() {
        let seq = random_seq(9, 50);
        let seq32: Vec<Complex<f32>> = seq.iter().map(|z| Complex::new(z.re as f32, z.im as f32)).collect();
        let p64 = with_ft_sequence(&seq).unwrap();
        let p32 = with_ft_sequence(&seq32).unwrap();
        assert_close(&p32.d, &p64.d, 1e-4);
    }

    fn seq_strategy() -> impl Strategy<Value = Vec<Complex<f64>>> {
        prop::collection::vec((-1e3..1e3f64, -1e3..1e3f64), 1..130)
            .prop_map(|v| v.into_iter().map(|(re, im)| Complex::new(re, im)).collect())
    }

    proptest! {
        #[test]
        fn fft_path_matches_oracle(seq in seq_strategy()) {
            let fast = with_ft_sequence(&seq).unwrap();
            let slow = direct_sequence_oracle(&seq).unwrap();
            let scale = slow.d.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for (x, y) in fast.d.iter().zip(&slow.d) {
                prop_assert!((x - y).abs() <= 1e-9 * scale);
            }
            prop_assert!(fast.d[0].abs() <= 1e-9 * scale);
            for v in &fast.d {
                prop_assert!(*v >= -1e-9 * scale);
            }
        }

        #[test]
        fn offset_invariance(seq in seq_strategy(), re in -1e3..1e3f64, im in -1e3..1e3f64) {
            let z = Complex::new(re, im);
            let shifted: Vec<_> = seq.iter().map(|s| s + z).collect();
            for f in [with_ft_sequence::<f64>, direct_sequence_oracle::<f64>] {
                let a = f(&seq).unwrap().d;
                let b = f(&shifted).unwrap().d;
                // the offset inflates d_a and corr, so rounding scales with the shifted magnitudes
                let scale = shifted.iter().chain(&seq).fold(1.0f64, |m, s| m.max(s.norm_sqr()));
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() <= 1e-9 * scale);
                }
            }
        }

        #[test]
        fn scaling_by_alpha(seq in seq_strategy(), re in -4.0..4.0f64, im in -4.0..4.0f64) {
            let alpha = Complex::new(re, im);
            let scaled: Vec<_> = seq.iter().map(|s| s * alpha).collect();
            let a = direct_sequence_oracle(&seq).unwrap().d;
            let b = with_ft_sequence(&scaled).unwrap().d;
            let k = alpha.norm_sqr();
            let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs())) * k.max(1.0);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x * k - y).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn padding_is_at_least_twice(n in 1usize..1_000_000) {
            let p = pad_length(n).unwrap();
            prop_assert!(p >= 2 * n);
            prop_assert!(p.is_power_of_two());
            prop_assert!(p < 4 * n);
        }
    }
}
