//! Structure function by explicit differences of frame spectra.
//!
//! This is the pairwise scheme: every pair `(n - m, n)` contributes
//! `|S_{n-m} - S_n|²` to an in-place running sum per lag, giving O(N) pair
//! evaluations per lag. [`direct_eq1`] is the literal definition, transforming
//! each pixel-domain image difference, and serves as ground truth.

use num_complex::Complex;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::ImageStack;
use crate::precision::Real;
use crate::spectrum::{SpatialTransform, SpectrumStack, WaveVectorSet};
use crate::timing::OpCounters;

/// Wave vectors per parallel work unit. Fixed so tiling never depends on the
/// worker count.
const TILE: usize = 256;

/// Running per-lag sums over a compact wave-vector list.
///
/// Sums are lag-major, `sums[l * wave_vectors + q]`. Each lag row is split
/// into fixed tiles and every tile has a single writer.
#[derive(Debug, Clone)]
pub struct LagAccumulator {
    lags: Vec<usize>,
    wave_vectors: usize,
    sums: Vec<f64>,
    counts: Vec<u64>,
}

impl LagAccumulator {
    pub fn new(lags: Vec<usize>, wave_vectors: usize) -> Self {
        let sums = vec![0.0; lags.len() * wave_vectors];
        let counts = vec![0; lags.len()];
        Self {
            lags,
            wave_vectors,
            sums,
            counts,
        }
    }

    pub fn lags(&self) -> &[usize] {
        &self.lags
    }

    pub fn count(&self, slot: usize) -> u64 {
        self.counts[slot]
    }

    /// Adds the pairs formed by frame `n` with each available older frame.
    ///
    /// `older(l)` returns the spectrum of frame `n - lags[l]`, or `None` when
    /// that frame does not exist. Returns the number of pairs added.
    pub fn add_frame<'a, T: Real>(
        &mut self,
        newer: &[Complex<T>],
        older: impl Fn(usize) -> Option<&'a [Complex<T>]>,
    ) -> u64 {
        assert_eq!(newer.len(), self.wave_vectors);
        let n_lags = self.lags.len();
        let olders: Vec<Option<&[Complex<T>]>> = (0..n_lags).map(&older).collect();
        let mut added = 0;
        for (slot, o) in olders.iter().enumerate() {
            if let Some(o) = o {
                assert_eq!(o.len(), self.wave_vectors);
                self.counts[slot] += 1;
                added += 1;
            }
        }
        if added == 0 || self.wave_vectors == 0 {
            return added;
        }
        self.sums
            .par_chunks_mut(self.wave_vectors)
            .zip(olders.par_iter())
            .for_each(|(row, o)| {
                let Some(o) = o else { return };
                row.par_chunks_mut(TILE).enumerate().for_each(|(tile, block)| {
                    let q0 = tile * TILE;
                    for (j, cell) in block.iter_mut().enumerate() {
                        *cell += diff_sqr(o[q0 + j], newer[q0 + j]);
                    }
                });
            });
        added
    }

    /// Per-lag averages over the compact wave-vector list.
    pub fn finish(self) -> Vec<Vec<f64>> {
        let n_lags = self.lags.len();
        (0..n_lags)
            .map(|slot| {
                let count = self.counts[slot];
                (0..self.wave_vectors)
                    .map(|q| {
                        if count == 0 {
                            0.0
                        } else {
                            self.sums[slot * self.wave_vectors + q] / count as f64
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

#[inline]
fn diff_sqr<T: Real>(a: Complex<T>, b: Complex<T>) -> f64 {
    let re: f64 = a.re.into();
    let im: f64 = a.im.into();
    let (bre, bim): (f64, f64) = (b.re.into(), b.im.into());
    let (dr, di) = (re - bre, im - bim);
    dr * dr + di * di
}

pub(crate) fn check_lags(lags: &[usize], frames: usize) -> Result<()> {
    if let Some(&m) = lags.iter().find(|&&m| m >= frames) {
        return Err(Error::InvalidArgument(format!(
            "lag {m} requires more than {frames} frames"
        )));
    }
    Ok(())
}

/// Per-lag structure-function values at the retained wave vectors, computed
/// from in-memory spectra. Lag 0 is identically zero and forms no pairs.
pub fn without_ft<T: Real>(
    spectra: &SpectrumStack<T>,
    lags: &[usize],
    wave_vectors: &WaveVectorSet,
    counters: Option<&OpCounters>,
) -> Result<Vec<Vec<f64>>> {
    check_lags(lags, spectra.frames)?;
    if wave_vectors.shape() != (spectra.rows, spectra.cols) {
        return Err(Error::InvalidArgument("wave-vector set does not match spectra".into()));
    }
    let q = wave_vectors.len();
    let compact: Vec<Vec<Complex<T>>> = (0..spectra.frames)
        .map(|n| {
            let mut v = vec![Complex::new(T::zero(), T::zero()); q];
            wave_vectors.gather(spectra.frame(n), &mut v);
            v
        })
        .collect();
    let active: Vec<usize> = lags.iter().copied().filter(|&m| m > 0).collect();
    let mut acc = LagAccumulator::new(active.clone(), q);
    for n in 0..spectra.frames {
        let pairs = acc.add_frame(&compact[n], |slot| {
            n.checked_sub(active[slot]).map(|k| compact[k].as_slice())
        });
        if let Some(c) = counters {
            c.add_pairs(pairs);
        }
    }
    let mut per_active = acc.finish().into_iter();
    Ok(lags
        .iter()
        .map(|&m| {
            if m == 0 {
                vec![0.0; q]
            } else {
                per_active.next().expect("one map per nonzero lag")
            }
        })
        .collect())
}

/// Ground truth: transform each pixel-domain difference `I_{n-m} - I_n` and
/// average its squared modulus. O(N²) spatial transforms for all lags.
pub fn direct_eq1(
    stack: &ImageStack,
    lags: &[usize],
    wave_vectors: &WaveVectorSet,
    counters: Option<&OpCounters>,
) -> Result<Vec<Vec<f64>>> {
    check_lags(lags, stack.frames())?;
    let plan = SpatialTransform::<f64>::new(stack.width(), stack.height())?;
    if wave_vectors.shape() != (stack.height(), plan.half_cols()) {
        return Err(Error::InvalidArgument("wave-vector set does not match stack".into()));
    }
    let n = stack.frames();
    let q = wave_vectors.len();
    lags.par_iter()
        .map(|&m| {
            let mut sums = vec![0.0; q];
            if m == 0 {
                return Ok(sums);
            }
            let mut scratch = plan.scratch();
            let mut diff = vec![0.0; stack.width() * stack.height()];
            let mut spec = vec![Complex::new(0.0, 0.0); plan.half_len()];
            for k in m..n {
                for ((d, &a), &b) in diff.iter_mut().zip(stack.frame(k - m)).zip(stack.frame(k)) {
                    *d = a as f64 - b as f64;
                }
                plan.forward(&diff, &mut spec, &mut scratch)?;
                for (s, &flat) in sums.iter_mut().zip(wave_vectors.flat_indices()) {
                    *s += spec[flat].norm_sqr();
                }
            }
            if let Some(c) = counters {
                c.add_spatial((n - m) as u64);
                c.add_pairs((n - m) as u64);
            }
            let count = (n - m) as f64;
            sums.iter_mut().for_each(|s| *s /= count);
            Ok(sums)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::cutoff_set;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stack(seed: u64, w: usize, h: usize, n: usize) -> ImageStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let px = (0..w * h * n).map(|_| rng.random()).collect();
        ImageStack::new(w, h, n, px, 1.0).unwrap()
    }

    fn max_rel(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        let scale = a.iter().chain(b).flatten().fold(f64::MIN_POSITIVE, |m, v| m.max(v.abs()));
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
            / scale
    }

    #[test]
    fn identical_frames_give_zero_maps() {
        let frame: Vec<u16> = (0..16).map(|v| v * 1000).collect();
        let px = frame.repeat(5);
        let stack = ImageStack::new(4, 4, 5, px, 1.0).unwrap();
        let wv = cutoff_set(4, 4, None).unwrap();
        let lags: Vec<usize> = (0..5).collect();
        let spectra = SpectrumStack::<f64>::from_stack(&stack).unwrap();
        for maps in [
            without_ft(&spectra, &lags, &wv, None).unwrap(),
            direct_eq1(&stack, &lags, &wv, None).unwrap(),
        ] {
            assert!(maps.iter().flatten().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn one_by_one_images() {
        let stack = ImageStack::new(1, 1, 3, vec![1, 2, 3], 1.0).unwrap();
        let wv = cutoff_set(1, 1, None).unwrap();
        let spectra = SpectrumStack::<f64>::from_stack(&stack).unwrap();
        let maps = without_ft(&spectra, &[0, 1, 2], &wv, None).unwrap();
        assert_eq!(maps, vec![vec![0.0], vec![1.0], vec![4.0]]);
    }

    #[test]
    fn two_frames_single_pair() {
        let stack = random_stack(3, 4, 3, 2);
        let wv = cutoff_set(4, 3, None).unwrap();
        let diff: Vec<f64> = stack
            .frame(0)
            .iter()
            .zip(stack.frame(1))
            .map(|(&a, &b)| a as f64 - b as f64)
            .collect();
        let expected: Vec<f64> = crate::spectrum::forward_spectrum(&diff, 4, 3)
            .unwrap()
            .iter()
            .map(|z| z.norm_sqr())
            .collect();
        let maps = direct_eq1(&stack, &[1], &wv, None).unwrap();
        assert_eq!(maps[0], expected);
    }

    #[test]
    fn pairwise_matches_direct_on_random_stacks() {
        for (seed, n) in [(1u64, 16usize), (2, 32)] {
            let stack = random_stack(seed, 8, 8, n);
            let wv = cutoff_set(8, 8, None).unwrap();
            let lags: Vec<usize> = (0..n).collect();
            let spectra = SpectrumStack::<f64>::from_stack(&stack).unwrap();
            let fast = without_ft(&spectra, &lags, &wv, None).unwrap();
            let slow = direct_eq1(&stack, &lags, &wv, None).unwrap();
            assert!(max_rel(&fast, &slow) <= 1e-9);
        }
    }

    #[test]
    fn pair_count_is_triangular() {
        let n = 20;
        let stack = random_stack(4, 4, 4, n);
        let wv = cutoff_set(4, 4, Some(1.0)).unwrap();
        let spectra = SpectrumStack::<f64>::from_stack(&stack).unwrap();
        let counters = OpCounters::new();
        let lags: Vec<usize> = (0..n).collect();
        without_ft(&spectra, &lags, &wv, Some(&counters)).unwrap();
        assert_eq!(counters.snapshot(0).pairs, (n * (n - 1) / 2) as u64);
    }

    #[test]
    fn sparse_lags_and_cutoff() {
        let stack = random_stack(5, 8, 6, 12);
        let wv = cutoff_set(8, 6, Some(2.5)).unwrap();
        let spectra = SpectrumStack::<f64>::from_stack(&stack).unwrap();
        let lags = [3, 7, 11];
        let fast = without_ft(&spectra, &lags, &wv, None).unwrap();
        let slow = direct_eq1(&stack, &lags, &wv, None).unwrap();
        assert_eq!(fast.len(), 3);
        assert!(fast.iter().all(|m| m.len() == wv.len()));
        assert!(max_rel(&fast, &slow) <= 1e-9);
    }

    #[test]
    fn lag_beyond_stack_is_rejected() {
        let stack = random_stack(6, 2, 2, 4);
        let wv = cutoff_set(2, 2, None).unwrap();
        let spectra = SpectrumStack::<f64>::from_stack(&stack).unwrap();
        assert!(without_ft(&spectra, &[4], &wv, None).is_err());
        assert!(direct_eq1(&stack, &[4], &wv, None).is_err());
    }

    #[test]
    fn accumulator_is_independent_of_tiling_threads() {
        let stack = random_stack(7, 32, 32, 10);
        let wv = cutoff_set(32, 32, None).unwrap();
        let spectra = SpectrumStack::<f64>::from_stack(&stack).unwrap();
        let lags: Vec<usize> = (0..10).collect();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| without_ft(&spectra, &lags, &wv, None).unwrap())
        };
        assert_eq!(run(1), run(3));
    }
}
