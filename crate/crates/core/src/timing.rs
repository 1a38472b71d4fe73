//! Per-phase wall-clock accounting and operation counters.
//!
//! Counters are the machine-independent record of the work a run performed;
//! seconds are for humans.

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Disk,
    Step1,
    Step2,
    Merge,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingBreakdown {
    pub disk: f64,
    pub step1: f64,
    pub step2: f64,
    pub merge: f64,
    pub other: f64,
    pub total: f64,
}

impl TimingBreakdown {
    pub fn add(&mut self, phase: Phase, elapsed: Duration) {
        let secs = elapsed.as_secs_f64();
        match phase {
            Phase::Disk => self.disk += secs,
            Phase::Step1 => self.step1 += secs,
            Phase::Step2 => self.step2 += secs,
            Phase::Merge => self.merge += secs,
        }
    }

    /// Runs `f`, booking its wall-clock time to `phase`.
    pub fn time<R>(&mut self, phase: Phase, f: impl FnOnce() -> R) -> R {
        let start = Instant::now();
        let out = f();
        self.add(phase, start.elapsed());
        out
    }

    /// Closes the breakdown: unbooked time goes to `other`.
    pub fn finish(&mut self, total: Duration) {
        let booked = self.disk + self.step1 + self.step2 + self.merge;
        self.total = total.as_secs_f64().max(booked);
        self.other = (self.total - booked).max(0.0);
    }

    /// Phase fractions of the total, `other` included, so they sum to one.
    pub fn fractions(&self) -> [(&'static str, f64); 5] {
        let t = if self.total > 0.0 { self.total } else { 1.0 };
        [
            ("disk", self.disk / t),
            ("step1", self.step1 / t),
            ("step2", self.step2 / t),
            ("merge", self.merge / t),
            ("other", self.other / t),
        ]
    }

    /// Writes `phase,seconds,count` rows.
    pub fn write_csv<W: Write>(&self, counters: &CounterSnapshot, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["phase", "seconds", "count"])?;
        let step2_count = counters.temporal_ffts + counters.pairs;
        let rows = [
            ("disk", self.disk, counters.frames_read),
            ("step1", self.step1, counters.spatial_ffts),
            ("step2", self.step2, step2_count),
            ("merge", self.merge, counters.groups_or_passes),
            ("other", self.other, 0),
            ("total", self.total, 0),
        ];
        for (phase, secs, count) in rows {
            w.write_record([phase.to_string(), format!("{secs:.9}"), count.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Thread-safe operation counters shared by the workers of one run.
#[derive(Debug, Default)]
pub struct OpCounters {
    spatial_ffts: AtomicU64,
    temporal_ffts: AtomicU64,
    pairs: AtomicU64,
    frames_read: AtomicU64,
}

impl OpCounters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_spatial(&self, n: u64) {
        self.spatial_ffts.fetch_add(n, Ordering::Relaxed);
    }

    pub fn add_temporal(&self, n: u64) {
        self.temporal_ffts.fetch_add(n, Ordering::Relaxed);
    }

    pub fn add_pairs(&self, n: u64) {
        self.pairs.fetch_add(n, Ordering::Relaxed);
    }

    pub fn add_frames_read(&self, n: u64) {
        self.frames_read.fetch_add(n, Ordering::Relaxed);
    }

    pub fn snapshot(&self, groups_or_passes: u64) -> CounterSnapshot {
        CounterSnapshot {
            spatial_ffts: self.spatial_ffts.load(Ordering::Relaxed),
            temporal_ffts: self.temporal_ffts.load(Ordering::Relaxed),
            pairs: self.pairs.load(Ordering::Relaxed),
            frames_read: self.frames_read.load(Ordering::Relaxed),
            groups_or_passes,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    /// 2D transforms of whole frames (or frame differences for the direct oracle).
    pub spatial_ffts: u64,
    /// 1D transforms of padded time sequences.
    pub temporal_ffts: u64,
    /// Frame pairs differenced by the pairwise engine.
    pub pairs: u64,
    pub frames_read: u64,
    pub groups_or_passes: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finish_books_remainder_as_other() {
        let mut t = TimingBreakdown::default();
        t.add(Phase::Disk, Duration::from_millis(100));
        t.add(Phase::Step2, Duration::from_millis(300));
        t.finish(Duration::from_millis(500));
        assert!((t.other - 0.1).abs() < 1e-9);
        let sum: f64 = t.fractions().iter().map(|(_, f)| f).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn total_never_below_booked_phases() {
        let mut t = TimingBreakdown::default();
        t.add(Phase::Step1, Duration::from_millis(200));
        t.finish(Duration::from_millis(150));
        assert!(t.total >= t.step1);
        assert_eq!(t.other, 0.0);
    }

    #[test]
    fn csv_has_one_row_per_phase() {
        let mut t = TimingBreakdown::default();
        t.finish(Duration::from_millis(1));
        let snap = CounterSnapshot {
            spatial_ffts: 7,
            ..Default::default()
        };
        let mut buf = Vec::new();
        t.write_csv(&snap, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.contains("step1,0.000000000,7"));
    }
}
