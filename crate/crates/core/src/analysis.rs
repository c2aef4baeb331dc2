//! Spectra, harmonic distortion, settling detection and run comparison.

use std::io::Write;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::controller::TimeSeriesRun;
use crate::error::{Error, Result};
use crate::plant::PHASE_NAMES;

/// Fundamentals smaller than this are treated as absent.
pub const FUNDAMENTAL_FLOOR: f64 = 1e-12;

/// Single-sided amplitude spectrum of a rectangular window.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    /// Bin frequencies in hertz; resolution is one over the window length.
    pub freq: Vec<f64>,
    /// Peak amplitude per bin, in the unit of the signal.
    pub magnitude: Vec<f64>,
    pub samples: usize,
}

impl Spectrum {
    pub fn compute(signal: &[f64], dt: f64) -> Result<Self> {
        let n = signal.len();
        if n == 0 {
            return Err(Error::Analysis("empty signal".into()));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Analysis(format!("sample period {dt}")));
        }
        let mut buf: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let bins = n / 2 + 1;
        let nf = n as f64;
        let magnitude = (0..bins)
            .map(|k| {
                let a = buf[k].norm() / nf;
                if k == 0 || (n % 2 == 0 && k == n / 2) {
                    a
                } else {
                    2.0 * a
                }
            })
            .collect();
        let df = 1.0 / (nf * dt);
        Ok(Self {
            freq: (0..bins).map(|k| k as f64 * df).collect(),
            magnitude,
            samples: n,
        })
    }

    /// Mean-square value implied by the bins; equals the time-domain mean
    /// square of the window.
    pub fn mean_square(&self) -> f64 {
        let n = self.samples;
        self.magnitude
            .iter()
            .enumerate()
            .map(|(k, a)| {
                if k == 0 || (n % 2 == 0 && k == n / 2) {
                    a * a
                } else {
                    a * a / 2.0
                }
            })
            .sum()
    }

    /// Magnitudes divided by the magnitude at `fundamental_bin`.
    pub fn normalized(&self, fundamental_bin: usize) -> Vec<f64> {
        let f = self.magnitude[fundamental_bin];
        self.magnitude.iter().map(|a| a / f).collect()
    }

    pub fn write_csv<W: Write>(&self, out: W, max_freq: f64) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["freq_hz", "magnitude"])?;
        for (f, a) in self.freq.iter().zip(&self.magnitude) {
            if *f > max_freq {
                break;
            }
            w.write_record([f.to_string(), a.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThdOptions {
    pub cycles: usize,
    pub max_harmonic: usize,
}

impl Default for ThdOptions {
    fn default() -> Self {
        Self {
            cycles: 5,
            max_harmonic: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThdReport {
    pub fundamental: f64,
    /// Percent.
    pub thd: f64,
    pub min_harmonic: usize,
    pub max_harmonic: usize,
    pub window_start: f64,
    pub cycles: usize,
    pub samples: usize,
}

/// Window bounds (first sample, sample count) of the final `cycles` periods.
pub fn final_window(len: usize, dt: f64, f0: f64, cycles: usize) -> Result<(usize, usize)> {
    if !(f0.is_finite() && f0 > 0.0 && dt.is_finite() && dt > 0.0) || cycles == 0 {
        return Err(Error::Analysis(format!("bad window: f0={f0} dt={dt} cycles={cycles}")));
    }
    let per_cycle = 1.0 / (f0 * dt);
    let rounded = per_cycle.round();
    if rounded < 1.0 || (per_cycle - rounded).abs() > 1e-6 * rounded {
        return Err(Error::Analysis(format!(
            "{per_cycle} samples per cycle is not an integer"
        )));
    }
    let samples = rounded as usize * cycles;
    if samples > len {
        return Err(Error::Analysis(format!(
            "window of {cycles} cycles needs {samples} samples, signal has {len}"
        )));
    }
    Ok((len - samples, samples))
}

/// Harmonic distortion of the final `cycles` fundamental periods.
pub fn thd(signal: &[f64], dt: f64, f0: f64, cycles: usize, max_harmonic: usize) -> Result<ThdReport> {
    let (start, samples) = final_window(signal.len(), dt, f0, cycles)?;
    if max_harmonic < 2 {
        return Err(Error::Analysis("max_harmonic must be >= 2".into()));
    }
    if max_harmonic * cycles > samples / 2 {
        return Err(Error::Analysis(format!(
            "harmonic {max_harmonic} is above the Nyquist limit of the window"
        )));
    }
    let spec = Spectrum::compute(&signal[start..], dt)?;
    let fundamental = spec.magnitude[cycles];
    if !(fundamental >= FUNDAMENTAL_FLOOR) {
        return Err(Error::Analysis(format!("fundamental magnitude {fundamental} below floor")));
    }
    let harmonics: f64 = (2..=max_harmonic)
        .map(|h| spec.magnitude[h * cycles].powi(2))
        .sum();
    Ok(ThdReport {
        fundamental,
        thd: harmonics.sqrt() / fundamental * 100.0,
        min_harmonic: 2,
        max_harmonic,
        window_start: start as f64 * dt,
        cycles,
        samples,
    })
}

pub fn thd_with(signal: &[f64], dt: f64, f0: f64, opts: &ThdOptions) -> Result<ThdReport> {
    thd(signal, dt, f0, opts.cycles, opts.max_harmonic)
}

/// Relative mismatch between time-domain and spectral mean square.
pub fn parseval_deviation(signal: &[f64], dt: f64) -> Result<f64> {
    let spec = Spectrum::compute(signal, dt)?;
    let time = signal.iter().map(|v| v * v).sum::<f64>() / signal.len() as f64;
    let freq = spec.mean_square();
    Ok((time - freq).abs() / time.abs().max(f64::MIN_POSITIVE))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Settling {
    /// Seconds after the step.
    Settled { time: f64 },
    NotSettled,
}

impl Settling {
    pub fn time(self) -> Option<f64> {
        match self {
            Settling::Settled { time } => Some(time),
            Settling::NotSettled => None,
        }
    }
}

/// Centred moving-average smoothing applied to the signed tracking error
/// before its magnitude is compared with the band. A window of a few
/// controller periods removes switching ripple while keeping any error at
/// the fundamental frequency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettleOptions {
    /// Envelope window, seconds.
    pub window: f64,
}

impl Default for SettleOptions {
    fn default() -> Self {
        Self { window: 1e-3 }
    }
}

/// Magnitude of the moving average of `e` over `w` samples centred on each
/// sample; the window shrinks at the edges.
pub fn error_envelope(e: &[f64], w: usize) -> Vec<f64> {
    let n = e.len();
    let half = w / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in e {
        acc += v;
        prefix.push(acc);
    }
    (0..n)
        .map(|j| {
            let lo = j.saturating_sub(half);
            let hi = (j + half + 1).min(n);
            ((prefix[hi] - prefix[lo]) / (hi - lo) as f64).abs()
        })
        .collect()
}

/// First time after `step_time` from which the error envelope stays within
/// `band_pct` percent of the post-step reference amplitude.
pub fn settling_time(
    current: &[f64],
    reference: &[f64],
    dt: f64,
    step_time: f64,
    band_pct: f64,
    opts: &SettleOptions,
) -> Result<Settling> {
    if current.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            got: current.len(),
        });
    }
    if !(dt > 0.0 && band_pct > 0.0 && opts.window >= 0.0) {
        return Err(Error::Analysis("dt, band and window must be positive".into()));
    }
    let start = (step_time / dt).round().max(0.0) as usize;
    if start >= current.len() {
        return Err(Error::Analysis(format!("step at {step_time} s lies outside the signal")));
    }
    let amplitude = reference[start..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if amplitude <= 0.0 {
        return Err(Error::Analysis("post-step reference is identically zero".into()));
    }
    let error: Vec<f64> = current[start..]
        .iter()
        .zip(&reference[start..])
        .map(|(i, r)| i - r)
        .collect();
    let w = ((opts.window / dt).round() as usize).max(1);
    let env = error_envelope(&error, w);
    let limit = band_pct / 100.0 * amplitude;
    match env.iter().rposition(|&v| v > limit) {
        None => Ok(Settling::Settled { time: 0.0 }),
        Some(last) if last + 1 == env.len() => Ok(Settling::NotSettled),
        Some(last) => Ok(Settling::Settled {
            time: (last + 1) as f64 * dt,
        }),
    }
}

/// One line of the controller comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub scenario_id: String,
    pub controller: String,
    pub thd_a: f64,
    pub thd_b: f64,
    pub thd_c: f64,
    pub thd_mean: f64,
    /// RMS of i - i_ref over the window, all phases pooled, amperes.
    pub rms_err: f64,
    /// Largest peak-to-peak inner-capacitor voltage over the phases, volts.
    pub v1_ripple: f64,
    /// Same for the outer capacitor.
    pub v2_ripple: f64,
}

pub const COMPARISON_COLUMNS: [&str; 9] = [
    "scenario_id",
    "controller",
    "thd_a",
    "thd_b",
    "thd_c",
    "thd_mean",
    "rms_err",
    "v1_ripple",
    "v2_ripple",
];

fn peak_to_peak(v: &[f64]) -> f64 {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    hi - lo
}

pub fn compare_run(run: &TimeSeriesRun, opts: &ThdOptions) -> Result<ComparisonRow> {
    let dt = run.sample_period();
    let f0 = run.meta.script.scenario.params.f0;
    let (start, samples) = final_window(run.recording.len(), dt, f0, opts.cycles)?;
    let mut thds = [0.0; 3];
    let mut sq = 0.0;
    let (mut r1, mut r2) = (0.0f64, 0.0f64);
    for x in 0..3 {
        thds[x] = thd_with(&run.recording.i[x], dt, f0, opts)?.thd;
        sq += run.recording.i[x][start..]
            .iter()
            .zip(&run.iref[x][start..])
            .map(|(i, r)| (i - r).powi(2))
            .sum::<f64>();
        r1 = r1.max(peak_to_peak(&run.recording.v1[x][start..]));
        r2 = r2.max(peak_to_peak(&run.recording.v2[x][start..]));
    }
    Ok(ComparisonRow {
        scenario_id: run.meta.scenario_id.clone(),
        controller: run.meta.controller.clone(),
        thd_a: thds[0],
        thd_b: thds[1],
        thd_c: thds[2],
        thd_mean: thds.iter().sum::<f64>() / 3.0,
        rms_err: (sq / (3 * samples) as f64).sqrt(),
        v1_ripple: r1,
        v2_ripple: r2,
    })
}

/// One row per run, in input order. All runs must share the sample period
/// and fundamental.
pub fn compare_runs(runs: &[TimeSeriesRun], opts: &ThdOptions) -> Result<Vec<ComparisonRow>> {
    if let Some(first) = runs.first() {
        let dt = first.sample_period();
        let f0 = first.meta.script.scenario.params.f0;
        for r in runs {
            if r.sample_period() != dt || r.meta.script.scenario.params.f0 != f0 {
                return Err(Error::Analysis(format!(
                    "run {}/{} does not share the sample period and fundamental of the first run",
                    r.meta.scenario_id, r.meta.controller
                )));
            }
        }
    }
    runs.iter().map(|r| compare_run(r, opts)).collect()
}

pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(COMPARISON_COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_comparison_csv(rows: &[ComparisonRow], path: impl AsRef<Path>) -> Result<()> {
    write_comparison_csv(rows, std::fs::File::create(path)?)
}

/// Per-phase THD of a recorded run under `opts`.
pub fn run_thd(run: &TimeSeriesRun, opts: &ThdOptions) -> Result<[ThdReport; 3]> {
    let dt = run.sample_period();
    let f0 = run.meta.script.scenario.params.f0;
    let r = |x: usize| thd_with(&run.recording.i[x], dt, f0, opts);
    Ok([r(0)?, r(1)?, r(2)?])
}

/// Column name of a phase current.
pub fn current_channel(x: usize) -> String {
    format!("i_{}", PHASE_NAMES[x])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    const DT: f64 = 1e-6;
    const F0: f64 = 50.0;

    fn tone(n: usize, parts: &[(f64, f64)]) -> Vec<f64> {
        (0..n)
            .map(|j| {
                let t = j as f64 * DT;
                parts.iter().map(|(h, a)| a * (2.0 * PI * h * F0 * t).sin()).sum()
            })
            .collect()
    }

    #[test]
    fn pure_sine_has_no_distortion() {
        let r = thd(&tone(100_000, &[(1.0, 10.0)]), DT, F0, 5, 100).unwrap();
        assert!(r.thd <= 1e-10, "{}", r.thd);
        assert!((r.fundamental - 10.0).abs() < 1e-9);
        assert_eq!(r.samples, 100_000);
        assert_eq!(r.window_start, 0.0);
    }

    #[test]
    fn third_harmonic_construction() {
        let r = thd(&tone(120_000, &[(1.0, 3.0), (3.0, 0.3)]), DT, F0, 5, 100).unwrap();
        assert!((r.thd - 10.0).abs() < 1e-6, "{}", r.thd);
        assert!((r.window_start - 0.02).abs() < 1e-12);
    }

    #[test]
    fn window_errors() {
        let s = tone(50_000, &[(1.0, 1.0)]);
        assert!(thd(&s, DT, F0, 5, 100).is_err());
        assert!(thd(&s, DT, 47.0, 1, 100).is_err());
        assert!(thd(&vec![0.0; 100_000], DT, F0, 5, 100).is_err());
        assert!(thd(&s, DT, F0, 1, 20_000).is_err());
    }

    #[test]
    fn parseval_holds_for_odd_and_even_lengths() {
        for n in [1000, 1001] {
            let s: Vec<f64> = (0..n).map(|j| ((j * 7919) % 113) as f64 - 40.0).collect();
            assert!(parseval_deviation(&s, DT).unwrap() < 1e-9);
        }
    }

    #[test]
    fn scale_invariance() {
        let s = tone(40_000, &[(1.0, 1.0), (5.0, 0.2), (7.0, 0.1)]);
        let a = thd(&s, DT, F0, 2, 100).unwrap().thd;
        let scaled: Vec<f64> = s.iter().map(|v| v * 37.5).collect();
        let b = thd(&scaled, DT, F0, 2, 100).unwrap().thd;
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn envelope_removes_ripple() {
        // 30-sample square ripple of 1 A averages out over a 300-sample window.
        let e: Vec<f64> = (0..3000).map(|j| if (j / 15) % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let env = error_envelope(&e, 300);
        assert!(env[200..2800].iter().all(|v| *v < 0.05));
        let offset: Vec<f64> = e.iter().map(|v| v + 0.5).collect();
        assert!(error_envelope(&offset, 300)[200..2800].iter().all(|v| (*v - 0.5).abs() < 0.05));
    }

    #[test]
    fn perfect_tracker_settles_immediately() {
        let r = tone(20_000, &[(1.0, 5.0)]);
        let s = settling_time(&r, &r, DT, 0.0, 5.0, &SettleOptions::default()).unwrap();
        assert_eq!(s, Settling::Settled { time: 0.0 });
    }

    #[test]
    fn constant_offset_never_settles() {
        let r = tone(20_000, &[(1.0, 5.0)]);
        let i = vec![0.0; 20_000];
        let s = settling_time(&i, &r, DT, 0.0, 5.0, &SettleOptions::default()).unwrap();
        assert_eq!(s, Settling::NotSettled);
    }

    #[test]
    fn first_order_settles_near_three_tau() {
        let tau = 2e-3;
        let n = 40_000;
        let r = vec![1.0; n];
        let i: Vec<f64> = (0..n).map(|j| 1.0 - (-(j as f64) * DT / tau).exp()).collect();
        let t = settling_time(&i, &r, DT, 0.0, 5.0, &SettleOptions { window: 0.0 })
            .unwrap()
            .time()
            .unwrap();
        assert!((t - 20f64.ln() * tau).abs() < 2.0 * DT, "{t}");
        assert!((t / tau - 3.0).abs() < 0.01);
    }
}
