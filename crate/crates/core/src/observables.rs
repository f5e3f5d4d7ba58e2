//! Mean-squared displacement, ensemble reduction and scaling fits.
//!
//! Reductions use a fixed pairwise tree over trajectory index, so a result
//! depends only on the ordered inputs, never on how they were scheduled.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ou::fmt17;

/// Ensemble-averaged MSD on a shared time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsdSeries {
    pub times: Vec<f64>,
    pub msd: Vec<f64>,
    /// Standard error of the mean; NaN for a single trajectory.
    pub stderr: Vec<f64>,
    pub n_traj: usize,
}

impl MsdSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `t,msd,stderr,n_traj`, one row per record.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,msd,stderr,n_traj")?;
        for i in 0..self.len() {
            writeln!(w, "{},{},{},{}", fmt17(self.times[i]), fmt17(self.msd[i]), fmt17(self.stderr[i]), self.n_traj)?;
        }
        Ok(())
    }

    /// Same schema plus a trailing `source` column.
    pub fn write_csv_with_source<W: Write>(&self, mut w: W, source: &str) -> io::Result<()> {
        writeln!(w, "t,msd,stderr,n_traj,source")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{},{},{},{},{source}",
                fmt17(self.times[i]),
                fmt17(self.msd[i]),
                fmt17(self.stderr[i]),
                self.n_traj
            )?;
        }
        Ok(())
    }
}

/// Subtracts the first record: `MSD(t) = <x^2>(t) - <x^2>(0)`.
pub fn msd_single(x2: &[f64]) -> Result<Vec<f64>> {
    let first = *x2.first().ok_or_else(|| invalid("empty series"))?;
    Ok(x2.iter().map(|v| v - first).collect())
}

/// Sum in a fixed binary tree over index order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Pointwise mean and unbiased standard error across runs.
///
/// Each run is a list of `(t, value)`; all runs must share the time grid
/// exactly.
pub fn ensemble_msd(runs: &[Vec<(f64, f64)>]) -> Result<MsdSeries> {
    let first = runs.first().ok_or_else(|| invalid("no runs to average"))?;
    let times: Vec<f64> = first.iter().map(|r| r.0).collect();
    for (i, run) in runs.iter().enumerate() {
        if run.len() != times.len() || run.iter().zip(&times).any(|(r, t)| r.0 != *t) {
            return Err(invalid(format!("run {i} does not share the time grid of run 0")));
        }
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("times must be strictly increasing"));
    }
    let n = runs.len();
    let mut msd = Vec::with_capacity(times.len());
    let mut stderr = Vec::with_capacity(times.len());
    let mut column = vec![0.0; n];
    for k in 0..times.len() {
        for (c, run) in column.iter_mut().zip(runs) {
            *c = run[k].1;
        }
        let (mean, se) = mean_stderr(&column);
        msd.push(mean);
        stderr.push(se);
    }
    Ok(MsdSeries { times, msd, stderr, n_traj: n })
}

/// Mean and standard error of the mean with the unbiased variance.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let mean = pairwise_sum(xs) / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Log-log least-squares fit result.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub window: [f64; 2],
    pub slope: f64,
    pub slope_err: f64,
    pub n_points: usize,
}

pub const MIN_FIT_POINTS: usize = 10;

/// Slope of `log MSD` against `log t` over records with `t_lo <= t <= t_hi`.
pub fn fit_scaling_exponent(series: &MsdSeries, t_lo: f64, t_hi: f64) -> Result<ScalingFit> {
    let window_err = |reason: String| Error::WindowInvalid { lo: t_lo, hi: t_hi, reason };
    if !(t_lo > 0.0 && t_hi > t_lo && t_hi.is_finite()) {
        return Err(window_err("need 0 < t_lo < t_hi".into()));
    }
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    for (&t, &m) in series.times.iter().zip(&series.msd) {
        if t < t_lo || t > t_hi {
            continue;
        }
        if !(m > 0.0) {
            return Err(window_err(format!("non-positive MSD {m:e} at t = {t}")));
        }
        lx.push(t.ln());
        ly.push(m.ln());
    }
    let n = lx.len();
    if n < MIN_FIT_POINTS {
        return Err(window_err(format!("{n} points, need at least {MIN_FIT_POINTS}")));
    }
    let mx = lx.iter().sum::<f64>() / n as f64;
    let my = ly.iter().sum::<f64>() / n as f64;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let rss: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum();
    let slope_err = (rss / (n - 2) as f64 / sxx).sqrt();
    Ok(ScalingFit { window: [t_lo, t_hi], slope, slope_err, n_points: n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64)).collect()
    }

    fn series(times: &[f64], f: impl Fn(f64) -> f64) -> MsdSeries {
        MsdSeries {
            times: times.to_vec(),
            msd: times.iter().map(|&t| f(t)).collect(),
            stderr: vec![0.0; times.len()],
            n_traj: 1,
        }
    }

    #[test]
    fn msd_single_examples() {
        assert_eq!(msd_single(&[0.5, 0.5, 0.5]).unwrap(), vec![0.0; 3]);
        let t = [0.0, 0.5, 1.0, 2.0];
        let x2: Vec<f64> = t.iter().map(|t| 0.5 + t * t).collect();
        let m = msd_single(&x2).unwrap();
        for (mi, ti) in m.iter().zip(t) {
            assert!((mi - ti * ti).abs() < 1e-15);
        }
        assert_eq!(m[0], 0.0);
        assert!(msd_single(&[]).is_err());
    }

    #[test]
    fn identical_runs_have_zero_stderr() {
        let run: Vec<(f64, f64)> = (0..50).map(|i| (i as f64 * 0.1, (i as f64 * 0.1).powi(3))).collect();
        let runs = vec![run.clone(); 200];
        let s = ensemble_msd(&runs).unwrap();
        assert_eq!(s.n_traj, 200);
        for (k, r) in run.iter().enumerate() {
            assert!((s.msd[k] - r.1).abs() <= 1e-15 * r.1.abs().max(1.0));
            assert!(s.stderr[k] < 1e-15 * r.1.abs().max(1.0));
        }
    }

    #[test]
    fn two_runs_average() {
        let a: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, (i * i) as f64)).collect();
        let b: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 3.0 * (i * i) as f64)).collect();
        let s = ensemble_msd(&[a, b]).unwrap();
        for i in 0..10 {
            assert_eq!(s.msd[i], 2.0 * (i * i) as f64);
        }
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = vec![(0.0, 0.0), (1.0, 1.0)];
        let b = vec![(0.0, 0.0), (1.5, 1.0)];
        assert!(ensemble_msd(&[a.clone(), b]).is_err());
        assert!(ensemble_msd(&[a, vec![(0.0, 0.0)]]).is_err());
        assert!(ensemble_msd(&[]).is_err());
    }

    #[test]
    fn single_run_stderr_is_nan() {
        let s = ensemble_msd(&[vec![(0.0, 0.0), (1.0, 2.0)]]).unwrap();
        assert!(s.stderr[1].is_nan());
    }

    #[test]
    fn pure_power_laws() {
        let t = log_grid(0.1, 1.0, 30);
        let f = fit_scaling_exponent(&series(&t, |t| 5.0 * t.powi(3)), 0.1, 1.0).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-3);
        assert!(f.slope_err < 1e-3);
        assert_eq!(f.n_points, 30);
        let f6 = fit_scaling_exponent(&series(&t, |t| t.powi(6)), 0.1, 1.0).unwrap();
        assert!((f6.slope - 6.0).abs() < 1e-9);
    }

    #[test]
    fn window_errors() {
        let t = log_grid(0.1, 1.0, 30);
        let s = series(&t, |t| t - 0.5);
        assert!(matches!(fit_scaling_exponent(&s, 0.1, 1.0), Err(Error::WindowInvalid { .. })));
        let few = series(&t[..5], |t| t);
        assert!(matches!(fit_scaling_exponent(&few, 0.1, 1.0), Err(Error::WindowInvalid { .. })));
        assert!(fit_scaling_exponent(&series(&t, |t| t), 1.0, 0.5).is_err());
    }

    #[test]
    fn csv_schema() {
        let s = MsdSeries { times: vec![0.0, 1.0], msd: vec![0.0, 0.25], stderr: vec![0.0, 0.125], n_traj: 3 };
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,msd,stderr,n_traj");
        assert_eq!(lines[2], "1.0000000000000000e0,2.5000000000000000e-1,1.2500000000000000e-1,3");
        let mut buf = Vec::new();
        s.write_csv_with_source(&mut buf, "oracle").unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,msd,stderr,n_traj,source\n"));
        assert!(text.lines().nth(1).unwrap().ends_with(",oracle"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn averaging_commutes_with_linear_maps(vals in prop::collection::vec(-10.0f64..10.0, 2..64), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            // mean(a x + b) == a mean(x) + b
            let mapped: Vec<f64> = vals.iter().map(|v| a * v + b).collect();
            let (m1, _) = mean_stderr(&mapped);
            let (m0, _) = mean_stderr(&vals);
            prop_assert!((m1 - (a * m0 + b)).abs() <= 1e-12 * (1.0 + m1.abs()));
        }

        #[test]
        fn pairwise_sum_matches_naive(vals in prop::collection::vec(-1e3f64..1e3, 0..200)) {
            let naive: f64 = vals.iter().sum();
            prop_assert!((pairwise_sum(&vals) - naive).abs() <= 1e-9);
        }
    }
}
