// SPDX-License-Identifier: Apache-2.0

//! Post-processing of waveform records.
//!
//! Spectra use a rectangular window spanning an integer number of
//! fundamental periods, so harmonic `m` falls exactly on FFT bin
//! `m * cycles`.

use std::f64::consts::{SQRT_2, TAU};

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::AnalysisError;
use crate::exec::{self, ExecMode};
use crate::record::WaveformRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Harmonic {
    pub order: usize,
    /// Peak amplitude.
    pub magnitude: f64,
    /// Phase of the cosine term, radians.
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicSpectrum {
    pub fundamental_f: f64,
    pub cycles: usize,
    pub dc: f64,
    /// Orders `1..` up to the highest one below Nyquist.
    pub entries: Vec<Harmonic>,
    /// Mean-square content of every bin, harmonic or not, excluding dc.
    pub ac_power: f64,
}

impl HarmonicSpectrum {
    pub fn magnitude(&self, order: usize) -> Option<f64> {
        if order == 0 {
            return Some(self.dc.abs());
        }
        self.entries.get(order - 1).map(|h| h.magnitude)
    }

    pub fn max_order(&self) -> usize {
        self.entries.len()
    }

    /// Mean square over the window, from the spectrum.
    pub fn mean_square(&self) -> f64 {
        self.dc * self.dc + self.ac_power
    }

    fn fundamental(&self) -> Result<f64, AnalysisError> {
        match self.magnitude(1) {
            Some(m) if m > 1e-12 => Ok(m),
            _ => Err(AnalysisError::ZeroFundamental),
        }
    }
}

/// Number of samples in one fundamental period, if it is an integer.
pub fn samples_per_period(sample_period: f64, f: f64) -> Result<usize, AnalysisError> {
    if !(f > 0.0 && sample_period > 0.0) {
        return Err(AnalysisError::InvalidArgument("frequency and sample period must be positive".into()));
    }
    let exact = 1.0 / (f * sample_period);
    let n = exact.round();
    if n < 2.0 || (exact - n).abs() > 1e-6 * exact {
        return Err(AnalysisError::Window(format!("one period of {f} Hz spans {exact:.6} samples, not an integer")));
    }
    Ok(n as usize)
}

/// Spectrum of the last `cycles` fundamental periods of `samples`.
pub fn spectrum_of(
    samples: &[f64],
    sample_period: f64,
    f: f64,
    cycles: usize,
) -> Result<HarmonicSpectrum, AnalysisError> {
    if cycles == 0 {
        return Err(AnalysisError::InvalidArgument("cycles must be at least 1".into()));
    }
    let per = samples_per_period(sample_period, f)?;
    let len = per * cycles;
    if samples.len() < len {
        return Err(AnalysisError::Window(format!("{cycles} cycles need {len} samples, record has {}", samples.len())));
    }
    let window = &samples[samples.len() - len..];
    let mut buf: Vec<Complex<f64>> = window.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);

    let scale = 1.0 / len as f64;
    let dc = buf[0].re * scale;
    let half = len / 2;
    let mut ac_power = 0.0;
    for (k, b) in buf.iter().enumerate().take(half + 1).skip(1) {
        let a = b.norm() * scale;
        // Bins k and len - k fold together except at Nyquist.
        ac_power += if 2 * k == len { a * a } else { 2.0 * a * a };
    }
    let max_order = (half - 1) / cycles;
    let entries = (1..=max_order)
        .map(|m| {
            let b = buf[m * cycles];
            Harmonic { order: m, magnitude: 2.0 * b.norm() * scale, phase: b.arg() }
        })
        .collect();
    Ok(HarmonicSpectrum { fundamental_f: f, cycles, dc, entries, ac_power })
}

/// Spectrum of `channel` over the last `cycles` periods of the record.
pub fn fourier_coefficients(
    rec: &WaveformRecord,
    channel: &str,
    f: f64,
    cycles: usize,
) -> Result<HarmonicSpectrum, AnalysisError> {
    spectrum_of(rec.samples(channel)?, rec.sample_period, f, cycles)
}

/// Peak amplitude of harmonic `order` by direct projection onto sine and
/// cosine over the last `cycles` periods.
pub fn project_harmonic(
    samples: &[f64],
    sample_period: f64,
    f: f64,
    cycles: usize,
    order: usize,
) -> Result<f64, AnalysisError> {
    let per = samples_per_period(sample_period, f)?;
    let len = per * cycles;
    if cycles == 0 || samples.len() < len {
        return Err(AnalysisError::Window("not enough samples for projection".into()));
    }
    let window = &samples[samples.len() - len..];
    let (mut a, mut b) = (0.0, 0.0);
    for (k, x) in window.iter().enumerate() {
        let theta = TAU * (order * k) as f64 / per as f64;
        a += x * theta.cos();
        b += x * theta.sin();
    }
    let scale = if order == 0 { 1.0 } else { 2.0 } / len as f64;
    Ok(scale * a.hypot(b))
}

pub fn fundamental_rms(spec: &HarmonicSpectrum) -> f64 {
    spec.magnitude(1).unwrap_or(0.0) / SQRT_2
}

/// Root-sum-square of orders 3, 6, 9, ... up to `max_order`, relative to
/// the fundamental.
pub fn triplen_content(spec: &HarmonicSpectrum, max_order: usize) -> Result<f64, AnalysisError> {
    if max_order < 3 {
        return Err(AnalysisError::InvalidArgument("max_order must be at least 3".into()));
    }
    let fund = spec.fundamental()?;
    let sum: f64 =
        (3..=max_order.min(spec.max_order())).step_by(3).filter_map(|m| spec.magnitude(m)).map(|a| a * a).sum();
    Ok(sum.sqrt() / fund)
}

pub fn thd(spec: &HarmonicSpectrum, max_order: usize) -> Result<f64, AnalysisError> {
    let fund = spec.fundamental()?;
    let sum: f64 = (2..=max_order.min(spec.max_order())).filter_map(|m| spec.magnitude(m)).map(|a| a * a).sum();
    Ok(sum.sqrt() / fund)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ripple {
    pub peak_to_peak: f64,
    pub percent: f64,
    pub mean: f64,
}

pub fn ripple_of(window: &[f64]) -> Result<Ripple, AnalysisError> {
    if window.is_empty() {
        return Err(AnalysisError::Window("empty ripple window".into()));
    }
    let (lo, hi) = window.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let mean = window.iter().sum::<f64>() / window.len() as f64;
    let pp = hi - lo;
    let percent = if mean != 0.0 { 100.0 * pp / mean.abs() } else { f64::NAN };
    Ok(Ripple { peak_to_peak: pp, percent, mean })
}

/// Peak-to-peak ripple over the last `window` seconds.
pub fn ripple_pp(rec: &WaveformRecord, channel: &str, window: f64) -> Result<Ripple, AnalysisError> {
    let x = rec.samples(channel)?;
    let n = (window / rec.sample_period).round() as usize;
    if n == 0 || n > x.len() {
        return Err(AnalysisError::Window(format!("window of {window} s does not fit the record")));
    }
    ripple_of(&x[x.len() - n..])
}

/// Trailing one-period moving average; the first full value sits at index
/// `per - 1`, earlier entries average what is available.
pub fn cycle_average(samples: &[f64], per: usize) -> Vec<f64> {
    let per = per.max(1);
    let mut out = Vec::with_capacity(samples.len());
    let mut acc = 0.0;
    for (k, &x) in samples.iter().enumerate() {
        acc += x;
        if k >= per {
            acc -= samples[k - per];
        }
        out.push(acc / (k + 1).min(per) as f64);
    }
    out
}

/// Time after which `samples` stays inside `target * (1 +- band / 100)`.
/// Sample `k` sits at `t0 + k * sample_period`; a channel that is never
/// outside settles at 0.
pub fn settling_time_of(
    samples: &[f64],
    sample_period: f64,
    t0: f64,
    target: f64,
    band: f64,
) -> Result<f64, AnalysisError> {
    if !(band > 0.0) {
        return Err(AnalysisError::InvalidArgument("band must be positive".into()));
    }
    let tol = target.abs() * band / 100.0;
    let outside = |x: f64| (x - target).abs() > tol;
    match samples.iter().rposition(|&x| outside(x)) {
        None => Ok(0.0),
        Some(k) if k + 1 == samples.len() => {
            let d = samples[k] - target;
            Err(AnalysisError::NoSettling { final_deviation: d, final_percent: 100.0 * d / target })
        }
        Some(k) => Ok(t0 + (k + 1) as f64 * sample_period),
    }
}

pub fn settling_time(rec: &WaveformRecord, channel: &str, target: f64, band: f64) -> Result<f64, AnalysisError> {
    settling_time_of(rec.samples(channel)?, rec.sample_period, rec.t0, target, band)
}

/// Levels a channel dwells on, ascending.
///
/// Runs of at least three consecutive samples within `tol` of the run's
/// first sample count as dwells; dwells are merged into clusters whose
/// weighted centers lie within `tol` of each other.
pub fn distinct_levels_of(samples: &[f64], tol: f64) -> Result<Vec<f64>, AnalysisError> {
    if !(tol > 0.0) {
        return Err(AnalysisError::InvalidArgument("tol must be positive".into()));
    }
    let mut dwells: Vec<(f64, f64)> = Vec::new();
    let mut start = 0;
    while start < samples.len() {
        let anchor = samples[start];
        let mut end = start + 1;
        while end < samples.len() && (samples[end] - anchor).abs() <= tol {
            end += 1;
        }
        let len = end - start;
        if len >= 3 {
            let mean = samples[start..end].iter().sum::<f64>() / len as f64;
            dwells.push((mean, len as f64));
        }
        start = end;
    }
    dwells.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut clusters: Vec<(f64, f64)> = Vec::new();
    for (v, w) in dwells {
        match clusters.last_mut() {
            Some((c, cw)) if (v - *c).abs() <= tol => {
                *c = (*c * *cw + v * w) / (*cw + w);
                *cw += w;
            }
            _ => clusters.push((v, w)),
        }
    }
    Ok(clusters.into_iter().map(|(c, _)| c).collect())
}

pub fn distinct_levels(rec: &WaveformRecord, channel: &str, tol: f64) -> Result<Vec<f64>, AnalysisError> {
    distinct_levels_of(rec.samples(channel)?, tol)
}

/// `|E_src - dE_stored - E_loss|` relative to the delivered energy, from
/// the energy channels at the final sample.
pub fn energy_residual(rec: &WaveformRecord) -> Result<f64, AnalysisError> {
    let last = |name: &str| -> Result<f64, AnalysisError> {
        rec.samples(name)?.last().copied().ok_or_else(|| AnalysisError::Window("empty record".into()))
    };
    let (src, loss, store) = (last("E_SRC")?, last("E_LOSS")?, last("E_STORE")?);
    let scale = src.abs().max(loss);
    if scale <= 0.0 {
        return Err(AnalysisError::InvalidArgument("no energy delivered".into()));
    }
    Ok((src - store - loss).abs() / scale)
}

/// A number with its unit, as serialized in reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quantity {
    pub value: f64,
    pub unit: &'static str,
}

impl Quantity {
    pub fn new(value: f64, unit: &'static str) -> Self {
        Self { value, unit }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChannelMetrics {
    pub channel: String,
    pub mean: Quantity,
    pub ripple: Quantity,
    pub ripple_percent: Quantity,
    pub levels: Vec<Quantity>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseMetrics {
    pub channel: String,
    pub fundamental_rms: Quantity,
    pub thd: Quantity,
    pub triplen: Quantity,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SettlingMetrics {
    /// Slowest capacitor channel.
    pub channel: String,
    /// `None` when that channel is still outside the band at the end.
    pub time: Option<Quantity>,
    pub target: Quantity,
    pub band: Quantity,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub fundamental_f: Quantity,
    pub window: Quantity,
    pub channels: Vec<ChannelMetrics>,
    pub phases: Vec<PhaseMetrics>,
    pub settling: Option<SettlingMetrics>,
    pub energy_residual: Option<Quantity>,
}

impl MetricsReport {
    pub fn channel(&self, name: &str) -> Option<&ChannelMetrics> {
        self.channels.iter().find(|c| c.channel == name)
    }

    pub fn phase(&self, name: &str) -> Option<&PhaseMetrics> {
        self.phases.iter().find(|c| c.channel == name)
    }

    /// Capacitor-voltage channel metrics.
    pub fn capacitors(&self) -> impl Iterator<Item = &ChannelMetrics> {
        self.channels.iter().filter(|c| is_cap_voltage(&c.channel))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    /// Trailing periods used for every windowed metric.
    pub cycles: usize,
    pub level_tol: f64,
    pub max_order: usize,
    pub settle_band: f64,
    /// Settling target; defaults to the final mean of the capacitor channels.
    pub settle_target: Option<f64>,
    pub mode: ExecMode,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            cycles: 2,
            level_tol: 15.0,
            max_order: 13,
            settle_band: 2.0,
            settle_target: None,
            mode: ExecMode::default(),
        }
    }
}

fn is_phase_voltage(name: &str) -> bool {
    name.strip_prefix("V_").is_some_and(|r| !r.is_empty() && r.bytes().all(|b| b.is_ascii_digit()))
}

fn is_cap_voltage(name: &str) -> bool {
    name.starts_with("V_C")
}

/// Full metrics for a record at fundamental frequency `f`.
pub fn metrics_report(rec: &WaveformRecord, f: f64, opts: &AnalysisOptions) -> Result<MetricsReport, AnalysisError> {
    rec.validate()?;
    let per = samples_per_period(rec.sample_period, f)?;
    let cycles = opts.cycles.max(1).min(rec.len() / per);
    if cycles == 0 {
        return Err(AnalysisError::Window(format!("record is shorter than one period of {f} Hz")));
    }
    let window = per * cycles;
    let names: Vec<&str> = rec.names().filter(|n| !matches!(*n, "E_SRC" | "E_LOSS" | "E_STORE")).collect();

    let channels = exec::map(opts.mode, &names, |&name| -> Result<ChannelMetrics, AnalysisError> {
        let ch = rec.channel(name)?;
        let x = &ch.samples;
        let r = ripple_of(&x[x.len() - window..])?;
        let unit = unit_str(&ch.unit);
        let levels = if ch.unit == "V" {
            distinct_levels_of(x, opts.level_tol)?.into_iter().map(|v| Quantity::new(v, unit)).collect()
        } else {
            Vec::new()
        };
        Ok(ChannelMetrics {
            channel: name.to_string(),
            mean: Quantity::new(r.mean, unit),
            ripple: Quantity::new(r.peak_to_peak, unit),
            ripple_percent: Quantity::new(r.percent, "%"),
            levels,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let phase_names: Vec<&str> = names.iter().copied().filter(|n| is_phase_voltage(n)).collect();
    let phases = exec::map(opts.mode, &phase_names, |&name| -> Result<PhaseMetrics, AnalysisError> {
        let spec = fourier_coefficients(rec, name, f, cycles)?;
        Ok(PhaseMetrics {
            channel: name.to_string(),
            fundamental_rms: Quantity::new(fundamental_rms(&spec), "V"),
            thd: Quantity::new(thd(&spec, opts.max_order)?, "1"),
            triplen: Quantity::new(triplen_content(&spec, opts.max_order)?, "1"),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;

    let settling = settling_metrics(rec, per, &channels, opts)?;
    let energy_residual = match energy_residual(rec) {
        Ok(r) => Some(Quantity::new(100.0 * r, "%")),
        Err(AnalysisError::MissingChannel(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricsReport {
        fundamental_f: Quantity::new(f, "Hz"),
        window: Quantity::new(window as f64 * rec.sample_period, "s"),
        channels,
        phases,
        settling,
        energy_residual,
    })
}

fn unit_str(unit: &str) -> &'static str {
    match unit {
        "V" => "V",
        "A" => "A",
        "J" => "J",
        "W" => "W",
        _ => "1",
    }
}

/// Settling of cycle-averaged capacitor voltages. Reported only when some
/// capacitor starts outside the band.
fn settling_metrics(
    rec: &WaveformRecord,
    per: usize,
    channels: &[ChannelMetrics],
    opts: &AnalysisOptions,
) -> Result<Option<SettlingMetrics>, AnalysisError> {
    let caps: Vec<&ChannelMetrics> = channels.iter().filter(|c| is_cap_voltage(&c.channel)).collect();
    if caps.is_empty() || rec.len() < 2 * per {
        return Ok(None);
    }
    let target =
        opts.settle_target.unwrap_or_else(|| caps.iter().map(|c| c.mean.value).sum::<f64>() / caps.len() as f64);
    let tol = target.abs() * opts.settle_band / 100.0;
    // Unsettled channels rank above any finite time.
    let mut worst: Option<(f64, &str)> = None;
    let mut disturbed = false;
    for c in &caps {
        let avg = cycle_average(rec.samples(&c.channel)?, per);
        let steady = &avg[per - 1..];
        disturbed |= (steady[0] - target).abs() > tol;
        let t = match settling_time_of(
            steady,
            rec.sample_period,
            rec.time(per - 1) - rec.sample_period,
            target,
            opts.settle_band,
        ) {
            Ok(t) => t,
            Err(AnalysisError::NoSettling { .. }) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        if worst.is_none_or(|(w, _)| t > w) {
            worst = Some((t, &c.channel));
        }
    }
    Ok(match (disturbed, worst) {
        (true, Some((t, name))) => Some(SettlingMetrics {
            channel: name.to_string(),
            time: t.is_finite().then(|| Quantity::new(t, "s")),
            target: Quantity::new(target, "V"),
            band: Quantity::new(opts.settle_band, "%"),
        }),
        _ => None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const TS: f64 = 1e-5;
    const F: f64 = 50.0;

    fn sampled(periods: usize, g: impl Fn(f64) -> f64) -> Vec<f64> {
        let per = (1.0 / (F * TS)).round() as usize;
        (0..periods * per).map(|k| g(k as f64 * TS)).collect()
    }

    fn square(t: f64) -> f64 {
        // Sample at the cell midpoint of each phase slot so the edges are symmetric.
        if (TAU * F * (t + TS / 2.0)).sin() >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    /// 120-degree quasi-square wave of height `v`.
    fn staircase(v: f64) -> impl Fn(f64) -> f64 {
        move |t| {
            let s = (TAU * F * (t + TS / 2.0)).sin();
            if s.abs() > 0.5 {
                v * s.signum()
            } else {
                0.0
            }
        }
    }

    #[test]
    fn single_tone() {
        let x = sampled(10, |t| (TAU * F * t).sin());
        let s = spectrum_of(&x, TS, F, 10).unwrap();
        assert!((s.magnitude(1).unwrap() - 1.0).abs() < 1e-6);
        for m in 2..=50 {
            assert!(s.magnitude(m).unwrap() < 1e-9, "order {m}");
        }
        let x = sampled(4, |t| SQRT_2 * (TAU * F * t).sin());
        assert_relative_eq!(fundamental_rms(&spectrum_of(&x, TS, F, 4).unwrap()), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn square_wave_harmonics() {
        let x = sampled(4, square);
        let s = spectrum_of(&x, TS, F, 4).unwrap();
        for m in [1usize, 3, 5, 7, 9, 11, 13] {
            let exact = 4.0 / (m as f64 * PI);
            assert!((s.magnitude(m).unwrap() - exact).abs() / exact < 2e-3, "order {m}");
        }
        assert!(s.magnitude(2).unwrap() < 1e-9);
        // Partial sums of 1/m^2 over odd m approach pi^2/8.
        let limit = (PI * PI / 8.0 - 1.0).sqrt();
        assert_relative_eq!(limit, 0.4834, epsilon = 1e-4);
        let t = thd(&s, s.max_order()).unwrap();
        assert!((t - limit).abs() < 5e-3, "thd {t}");
    }

    #[test]
    fn fft_matches_projection() {
        let x = sampled(3, |t| staircase(200.0)(t) + 0.3 * (TAU * 7.0 * F * t).cos());
        let s = spectrum_of(&x, TS, F, 3).unwrap();
        for m in 0..20 {
            let p = project_harmonic(&x, TS, F, 3, m).unwrap();
            assert!((p - s.magnitude(m).unwrap()).abs() < 1e-9, "order {m}");
        }
    }

    #[test]
    fn staircase_claims() {
        let x = sampled(5, staircase(200.0));
        let s = spectrum_of(&x, TS, F, 5).unwrap();
        let rms = fundamental_rms(&s);
        assert!((rms - 0.78 * 200.0).abs() / (0.78 * 200.0) < 0.01, "rms {rms}");
        assert_relative_eq!(rms, 2.0 * 3f64.sqrt() / PI * 200.0 / SQRT_2, max_relative = 1e-3);
        let fund = s.magnitude(1).unwrap();
        for m in [5usize, 7, 11, 13] {
            let ratio = s.magnitude(m).unwrap() / fund;
            assert!((ratio * m as f64 - 1.0).abs() < 0.02, "order {m}: {ratio}");
        }
        assert!(triplen_content(&s, 13).unwrap() < 0.01);
        let t = thd(&s, 13).unwrap();
        let exact = (1.0f64 / 25.0 + 1.0 / 49.0 + 1.0 / 121.0 + 1.0 / 169.0).sqrt();
        assert_relative_eq!(exact, 0.273_11, epsilon = 1e-5);
        assert!((t - exact).abs() < 2e-3, "thd {t}");

        let x = sampled(5, staircase(100.0));
        let rms = fundamental_rms(&spectrum_of(&x, TS, F, 5).unwrap());
        assert!((rms - 78.0).abs() < 0.78);
    }

    #[test]
    fn triplen_of_constructed_input() {
        let x = sampled(2, |t| (TAU * F * t).sin() + 0.25 * (TAU * 3.0 * F * t).sin());
        let s = spectrum_of(&x, TS, F, 2).unwrap();
        assert_relative_eq!(triplen_content(&s, 9).unwrap(), 0.25, epsilon = 1e-9);
        let zero = spectrum_of(&vec![1.0; 4000], TS, F, 2).unwrap();
        assert_eq!(thd(&zero, 13), Err(AnalysisError::ZeroFundamental));
        assert_eq!(triplen_content(&zero, 13), Err(AnalysisError::ZeroFundamental));
        assert!(thd(&spectrum_of(&sampled(1, |t| (TAU * F * t).sin()), TS, F, 1).unwrap(), 13).unwrap() < 1e-9);
    }

    #[test]
    fn window_errors() {
        let x = sampled(2, square);
        assert!(matches!(spectrum_of(&x, TS, F, 3), Err(AnalysisError::Window(_))));
        assert!(matches!(spectrum_of(&x, TS, 47.0, 1), Err(AnalysisError::Window(_))));
        assert!(spectrum_of(&x, TS, F, 0).is_err());
    }

    #[test]
    fn ripple_cases() {
        let r = ripple_of(&[200.0; 100]).unwrap();
        assert_eq!((r.peak_to_peak, r.percent), (0.0, 0.0));
        let x = sampled(2, |t| 200.0 + 2.2 * (TAU * F * t + 0.3).sin());
        let r = ripple_of(&x).unwrap();
        assert!((r.peak_to_peak - 4.4).abs() < 1e-4);
        assert!((r.percent - 2.2).abs() < 1e-4);
        assert!(ripple_of(&[]).is_err());
    }

    #[test]
    fn settling_of_exponential() {
        let tau = 10e-3;
        let x: Vec<f64> = (1..=10_000).map(|k| 200.0 + 100.0 * (-(k as f64) * TS / tau).exp()).collect();
        let t = settling_time_of(&x, TS, TS, 200.0, 2.0).unwrap();
        let exact = tau * 25f64.ln();
        assert_relative_eq!(exact, 32.19e-3, epsilon = 1e-5);
        assert!((t - exact).abs() <= TS, "{t}");
        assert_eq!(settling_time_of(&[200.0, 201.0], TS, TS, 200.0, 2.0), Ok(0.0));
        assert!(matches!(settling_time_of(&[200.0, 250.0], TS, TS, 200.0, 2.0), Err(AnalysisError::NoSettling { .. })));
    }

    #[test]
    fn level_census() {
        assert_eq!(distinct_levels_of(&[5.0; 20], 1.0).unwrap(), vec![5.0]);
        let x = sampled(2, staircase(200.0));
        assert_eq!(distinct_levels_of(&x, 10.0).unwrap(), vec![-200.0, 0.0, 200.0]);
        // Isolated edge samples are not levels.
        let mut y = vec![0.0; 10];
        y.extend([100.0, 200.0, 200.0, 200.0, 200.0]);
        assert_eq!(distinct_levels_of(&y, 10.0).unwrap(), vec![0.0, 200.0]);
    }

    #[test]
    fn ideal_staircase_census_matches_level_set() {
        use crate::modulation::staircase_level;
        use crate::topology::{voltage_levels, LevelCount};
        for nl in [3u32, 5, 7, 9] {
            let levels = LevelCount::new(nl).unwrap();
            let step = 600.0 / 3.0;
            let x = sampled(2, |t| step * staircase_level((TAU * F * t).sin(), levels).level as f64);
            let census = distinct_levels_of(&x, 1.0).unwrap();
            assert_eq!(census, voltage_levels(nl, 3, 600.0).unwrap());
        }
    }

    #[test]
    fn parseval_holds() {
        let x = sampled(3, |t| 3.0 + staircase(120.0)(t) + 5.0 * (TAU * 1234.5 * t).sin());
        let s = spectrum_of(&x, TS, F, 3).unwrap();
        let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
        assert_relative_eq!(s.mean_square(), ms, max_relative = 1e-6);
    }

    #[test]
    fn cycle_average_of_periodic_is_flat() {
        let x = sampled(3, |t| 10.0 + (TAU * F * t).sin());
        let per = 2000;
        let a = cycle_average(&x, per);
        for v in &a[per - 1..] {
            assert!((v - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn report_on_synthetic_record() {
        let mut rec = WaveformRecord::new(TS, TS);
        rec.add_channel("V_1", "V", sampled(4, staircase(200.0)));
        rec.add_channel("V_C11", "V", vec![200.0; 8000]);
        let r = metrics_report(&rec, F, &AnalysisOptions::default()).unwrap();
        let c = r.channel("V_C11").unwrap();
        assert_eq!(c.ripple.value, 0.0);
        assert_eq!(c.mean, Quantity::new(200.0, "V"));
        assert!(r.settling.is_none());
        assert!(r.energy_residual.is_none());
        assert_eq!(r.channel("V_1").unwrap().levels.len(), 3);
        let json = r.to_json();
        assert!(json.contains("\"unit\": \"%\""));
    }

    proptest! {
        #[test]
        fn fourier_is_linear(a in -5.0f64..5.0, b in -5.0f64..5.0, ph in 0.0f64..TAU) {
            let x = sampled(2, |t| (TAU * F * t + ph).sin());
            let y = sampled(2, |t| staircase(1.0)(t));
            let z: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let sx = spectrum_of(&x, TS, F, 2).unwrap();
            let sy = spectrum_of(&y, TS, F, 2).unwrap();
            let sz = spectrum_of(&z, TS, F, 2).unwrap();
            let c = |s: &HarmonicSpectrum, m: usize| {
                let h = s.entries[m - 1];
                (h.magnitude * h.phase.cos(), h.magnitude * h.phase.sin())
            };
            for m in 1..=15 {
                let (xr, xi) = c(&sx, m);
                let (yr, yi) = c(&sy, m);
                let (zr, zi) = c(&sz, m);
                prop_assert!((zr - a * xr - b * yr).abs() < 1e-9);
                prop_assert!((zi - a * xi - b * yi).abs() < 1e-9);
            }
        }

        #[test]
        fn ripple_offset_and_scale(offset in 1.0f64..500.0, amp in 0.0f64..10.0) {
            let base: Vec<f64> = (0..100).map(|k| amp * (k as f64 * 0.37).sin()).collect();
            let a = ripple_of(&base.iter().map(|v| v + offset).collect::<Vec<_>>()).unwrap();
            let b = ripple_of(&base.iter().map(|v| v + 2.0 * offset).collect::<Vec<_>>()).unwrap();
            prop_assert!((a.peak_to_peak - b.peak_to_peak).abs() < 1e-9);
            prop_assert!((a.percent * a.mean - b.percent * b.mean).abs() < 1e-6);
        }
    }
}
