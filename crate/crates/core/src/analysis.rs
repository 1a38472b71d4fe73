//! Radial averaging of structure-function maps and relaxation fits.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::ResultArchive;
use crate::spectrum::{cutoff_set, WaveVectorSet};

/// d(q, m): per-lag means over rings of equal rounded radial index.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialProfile {
    pub lags: Vec<usize>,
    /// Non-empty radial bins, ascending.
    pub bins: Vec<usize>,
    /// Wave vectors per bin; the same for every lag.
    pub counts: Vec<usize>,
    /// `means[lag_slot][bin_slot]`.
    pub means: Vec<Vec<f64>>,
}

impl RadialProfile {
    pub fn bin_slot(&self, q_bin: usize) -> Option<usize> {
        self.bins.binary_search(&q_bin).ok()
    }

    /// The curve d(q, m) over lags for one bin.
    pub fn curve(&self, q_bin: usize) -> Option<Vec<f64>> {
        let slot = self.bin_slot(q_bin)?;
        Some(self.means.iter().map(|row| row[slot]).collect())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["lag", "q_bin", "mean", "count"])?;
        for (lag, row) in self.lags.iter().zip(&self.means) {
            for ((bin, count), mean) in self.bins.iter().zip(&self.counts).zip(row) {
                w.write_record([lag.to_string(), bin.to_string(), format!("{mean:e}"), count.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Each stored half-plane coefficient counts once, in bin `round(radius)`.
pub fn azimuthal_average_maps(
    lags: &[usize],
    maps: &[Vec<f64>],
    wave_vectors: &WaveVectorSet,
) -> Result<RadialProfile> {
    let (rows, cols) = wave_vectors.shape();
    if maps.len() != lags.len() || maps.iter().any(|m| m.len() != rows * cols) {
        return Err(Error::InvalidArgument("maps do not match the wave-vector set".into()));
    }
    let bin_of: Vec<usize> = (0..wave_vectors.len())
        .map(|i| wave_vectors.radius(i).round() as usize)
        .collect();
    let n_bins = bin_of.iter().max().map_or(0, |b| b + 1);
    let mut counts = vec![0usize; n_bins];
    for &b in &bin_of {
        counts[b] += 1;
    }
    let bins: Vec<usize> = (0..n_bins).filter(|&b| counts[b] > 0).collect();
    let means = maps
        .iter()
        .map(|map| {
            let mut sums = vec![0.0; n_bins];
            for (&flat, &b) in wave_vectors.flat_indices().iter().zip(&bin_of) {
                sums[b] += map[flat];
            }
            bins.iter().map(|&b| sums[b] / counts[b] as f64).collect()
        })
        .collect();
    Ok(RadialProfile {
        lags: lags.to_vec(),
        counts: bins.iter().map(|&b| counts[b]).collect(),
        bins,
        means,
    })
}

pub fn azimuthal_average(archive: &ResultArchive) -> Result<RadialProfile> {
    let meta = &archive.meta;
    let wave_vectors = cutoff_set(meta.width, meta.height, meta.q_max)?;
    azimuthal_average_maps(&archive.lags, &archive.maps, &wave_vectors)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitFlag {
    Ok,
    /// No dynamics in the data: the curve is flat.
    Degenerate,
    /// Iteration cap reached before the cost settled.
    NotConverged,
    /// `tau` ended on a clamp limit, or the amplitude is not positive.
    AtBound,
}

impl FitFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            FitFlag::Ok => "ok",
            FitFlag::Degenerate => "degenerate",
            FitFlag::NotConverged => "not_converged",
            FitFlag::AtBound => "at_bound",
        }
    }
}

/// `d(t) = A (1 - exp(-t / tau)) + B` fitted at one radial bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialFit {
    pub q_bin: usize,
    pub amplitude: f64,
    pub baseline: f64,
    pub tau: f64,
    /// Root-mean-square residual.
    pub residual: f64,
    pub flag: FitFlag,
}

const MAX_ITERATIONS: usize = 500;

fn model(p: &[f64; 3], t: f64) -> f64 {
    p[0] * (1.0 - (-t / p[2].exp()).exp()) + p[1]
}

fn cost(p: &[f64; 3], ts: &[f64], ys: &[f64]) -> f64 {
    ts.iter().zip(ys).map(|(&t, &y)| (model(p, t) - y).powi(2)).sum()
}

/// Solves a 3×3 system by Gaussian elimination with partial pivoting.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Least-squares relaxation fit over the nonzero lags of one bin.
///
/// Deterministic: fixed initialization, Levenberg-Marquardt with a fixed
/// iteration cap, and `ln tau` kept inside `[ln(dt/1000), ln(1000 dt m_max)]`.
pub fn fit_exponential(profile: &RadialProfile, q_bin: usize, frame_interval: f64) -> Result<ExponentialFit> {
    let curve = profile
        .curve(q_bin)
        .ok_or_else(|| Error::InvalidArgument(format!("no radial bin {q_bin}")))?;
    let (ts, ys): (Vec<f64>, Vec<f64>) = profile
        .lags
        .iter()
        .zip(&curve)
        .filter(|(&m, y)| m > 0 && y.is_finite())
        .map(|(&m, &y)| (m as f64 * frame_interval, y))
        .unzip();
    fit_curve(q_bin, &ts, &ys, frame_interval)
}

pub fn fit_curve(q_bin: usize, ts: &[f64], ys: &[f64], frame_interval: f64) -> Result<ExponentialFit> {
    if ts.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "bin {q_bin}: need at least 4 finite nonzero lags, have {}",
            ts.len()
        )));
    }
    let (lo, hi) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| (lo.min(y), hi.max(y)));
    if hi - lo <= 1e-12 * hi.abs().max(lo.abs()).max(f64::MIN_POSITIVE) {
        let mean = ys.iter().sum::<f64>() / ys.len() as f64;
        let p = [0.0, mean, frame_interval.ln()];
        return Ok(ExponentialFit {
            q_bin,
            amplitude: 0.0,
            baseline: mean,
            tau: frame_interval,
            residual: (cost(&p, ts, ys) / ys.len() as f64).sqrt(),
            flag: FitFlag::Degenerate,
        });
    }

    let b0 = 0.0;
    let a0 = hi - b0;
    let target = a0 * (1.0 - (-1.0f64).exp()) + b0;
    let (best, _) = ts
        .iter()
        .zip(ys)
        .map(|(&t, &y)| (t, (y - target).abs()))
        .fold((ts[0], f64::INFINITY), |acc, (t, e)| if e < acc.1 { (t, e) } else { acc });
    let t_max = ts.iter().cloned().fold(0.0, f64::max);
    let ln_lo = (frame_interval / 1000.0).ln();
    let ln_hi = (1000.0 * t_max).ln();
    let mut p = [a0, b0, best.ln().clamp(ln_lo, ln_hi)];
    let mut c = cost(&p, ts, ys);
    let mut lambda = 1e-3;
    let mut converged = false;

    for _ in 0..MAX_ITERATIONS {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        let tau = p[2].exp();
        for (&t, &y) in ts.iter().zip(ys) {
            let u = t / tau;
            let e = (-u).exp();
            let j = [1.0 - e, 1.0, -p[0] * u * e];
            let r = model(&p, t) - y;
            for a in 0..3 {
                jtr[a] += j[a] * r;
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e16 {
            let mut lhs = jtj;
            for (k, row) in lhs.iter_mut().enumerate() {
                row[k] += lambda * jtj[k][k].max(1e-300);
            }
            let Some(step) = solve3(lhs, [-jtr[0], -jtr[1], -jtr[2]]) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [p[0] + step[0], p[1] + step[1], (p[2] + step[2]).clamp(ln_lo, ln_hi)];
            let tc = cost(&trial, ts, ys);
            if tc <= c {
                let settled = c - tc <= 1e-15 * c.max(f64::MIN_POSITIVE)
                    && step.iter().zip(&trial).all(|(s, v)| s.abs() <= 1e-10 * v.abs().max(1.0));
                p = trial;
                c = tc;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                converged = settled;
                break;
            }
            lambda *= 10.0;
        }
        if !improved || converged || c == 0.0 {
            // no downhill step left: a minimum up to rounding
            converged = true;
            break;
        }
    }

    Ok(ExponentialFit {
        q_bin,
        amplitude: p[0],
        baseline: p[1],
        tau: p[2].exp(),
        residual: (c / ys.len() as f64).sqrt(),
        flag: if !converged {
            FitFlag::NotConverged
        } else if p[0] <= 0.0 || p[2] <= ln_lo + 1e-9 || p[2] >= ln_hi - 1e-9 {
            FitFlag::AtBound
        } else {
            FitFlag::Ok
        },
    })
}

/// Fits every bin that has enough data; bins that cannot be fitted are skipped.
pub fn fit_all(profile: &RadialProfile, frame_interval: f64) -> Vec<ExponentialFit> {
    profile
        .bins
        .iter()
        .filter_map(|&b| fit_exponential(profile, b, frame_interval).ok())
        .collect()
}

pub fn write_fits_csv<W: Write>(fits: &[ExponentialFit], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["q_bin", "A", "B", "tau_seconds", "residual", "flag"])?;
    for f in fits {
        w.write_record([
            f.q_bin.to_string(),
            format!("{:e}", f.amplitude),
            format!("{:e}", f.baseline),
            format!("{:e}", f.tau),
            format!("{:e}", f.residual),
            f.flag.as_str().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Diffusion coefficient from the slope of `1/tau` against `q²`, with
/// `q = 2π q_bin / width` in inverse pixels. Uses only bins in `bins` whose
/// fit converged. Units: pixel² per unit of `tau`.
pub fn fit_diffusion(
    fits: &[ExponentialFit],
    width: usize,
    bins: std::ops::RangeInclusive<usize>,
) -> Option<f64> {
    let points: Vec<(f64, f64)> = fits
        .iter()
        .filter(|f| f.flag == FitFlag::Ok && bins.contains(&f.q_bin))
        .map(|f| {
            let q = std::f64::consts::TAU * f.q_bin as f64 / width as f64;
            (q * q, 1.0 / f.tau)
        })
        .collect();
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}
