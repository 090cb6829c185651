//! Energy harvesting, storage, and consumption for each camera.
//!
//! Models the harvest-store-consume cycle per time-step: harvested power is
//! `eta * I * U`, storage is a capacity-clamped battery that powers off at
//! depletion and restarts with hysteresis, and consumption depends on the
//! camera's operating mode plus the per-bit transmission cost in effect.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::CameraMode;
use crate::rng;

/// Fraction of capacity at which a depleted camera powers back on.
/// Hysteresis: off at zero, on again only once some charge has rebuilt.
pub const RESTART_FRACTION: f64 = 0.05;

/// One harvesting measurement: current and voltage delivered by the panel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HarvestSample {
    pub t_seconds: f64,
    pub current_a: f64,
    pub voltage_v: f64,
}

/// Camera energy parameters. Energies in joules, payload sizes in bits.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyParams {
    /// Harvesting efficiency in (0, 1].
    pub eta_eh: f64,
    /// Battery capacity.
    pub e_max_j: f64,
    /// Baseline consumption per time-step, charged whenever powered.
    pub e_op_j: f64,
    /// Cost of one local detection pass.
    pub e_det_j: f64,
    /// Default per-bit transmission cost (overridden per epoch in dynamic-cost runs).
    pub e_tr_j_per_bit: f64,
    /// Raw image size.
    pub f_raw_bits: f64,
    /// Result packet size after local detection.
    pub f_proc_bits: f64,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            eta_eh: 0.8,
            e_max_j: 185_000.0,
            e_op_j: 0.139,
            e_det_j: 0.057_48,
            e_tr_j_per_bit: 45e-9,
            // 1024x768 monochrome, 8 bits per pixel, uncompressed.
            f_raw_bits: 6_291_456.0,
            f_proc_bits: 1024.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ParamError {
    #[error("energy parameter `{0}` out of range: {1}")]
    OutOfRange(&'static str, f64),
}

impl EnergyParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        if !(self.eta_eh > 0.0 && self.eta_eh <= 1.0) {
            return Err(ParamError::OutOfRange("eta_eh", self.eta_eh));
        }
        if !(self.e_max_j > 0.0) {
            return Err(ParamError::OutOfRange("e_max_j", self.e_max_j));
        }
        if !(self.f_raw_bits > self.f_proc_bits && self.f_proc_bits > 0.0) {
            return Err(ParamError::OutOfRange("f_raw_bits", self.f_raw_bits));
        }
        for (name, v) in [
            ("e_op_j", self.e_op_j),
            ("e_det_j", self.e_det_j),
            ("e_tr_j_per_bit", self.e_tr_j_per_bit),
        ] {
            if !(v >= 0.0) {
                return Err(ParamError::OutOfRange(name, v));
            }
        }
        Ok(())
    }
}

/// Battery charge state plus downtime accounting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatteryState {
    pub available_j: f64,
    pub downtime_steps: u64,
    pub powered: bool,
}

impl BatteryState {
    pub fn full(params: &EnergyParams) -> Self {
        Self::with_fraction(params, 1.0)
    }

    pub fn with_fraction(params: &EnergyParams, frac: f64) -> Self {
        Self {
            available_j: params.e_max_j * frac.clamp(0.0, 1.0),
            downtime_steps: 0,
            powered: true,
        }
    }

    pub fn fraction(&self, params: &EnergyParams) -> f64 {
        (self.available_j / params.e_max_j).clamp(0.0, 1.0)
    }
}

/// Realized energy flows for one step. Consumption is what the battery
/// actually delivered (truncated at depletion); overflow is harvest lost to
/// the capacity clamp. The ledger identity
/// `harvested - consumed - overflow = delta(available)` holds exactly.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepEnergy {
    pub harvested_j: f64,
    pub consumed_j: f64,
    pub overflow_j: f64,
}

/// Energy harvested over `dt` seconds at the sampled operating point.
pub fn harvest_energy(sample: &HarvestSample, params: &EnergyParams, dt_s: f64) -> f64 {
    debug_assert!(dt_s > 0.0);
    params.eta_eh * sample.current_a * sample.voltage_v * dt_s
}

/// Per-frame consumption for a powered camera in the given mode.
pub fn consumption_for_mode(mode: CameraMode, params: &EnergyParams, e_tr_now: f64) -> f64 {
    match mode {
        CameraMode::TransmitRaw => params.e_op_j + params.f_raw_bits * e_tr_now,
        CameraMode::DetectLocal => {
            params.e_op_j + params.e_det_j + params.f_proc_bits * e_tr_now
        }
        CameraMode::StandBy => params.e_op_j,
    }
}

/// Consumption of the guard frame: one raw image regardless of mode.
pub fn guard_consumption(params: &EnergyParams, e_tr_now: f64) -> f64 {
    params.e_op_j + params.f_raw_bits * e_tr_now
}

/// Advances the battery by one step. A powered camera that cannot cover the
/// requested consumption delivers what it has, ends at zero, and powers off.
/// A powered-off camera consumes nothing, keeps harvesting, accrues downtime,
/// and restarts once charge reaches [`RESTART_FRACTION`] of capacity.
pub fn apply_step(
    battery: BatteryState,
    harvested: f64,
    consumed: f64,
    params: &EnergyParams,
) -> (BatteryState, StepEnergy) {
    debug_assert!(harvested >= 0.0 && consumed >= 0.0);
    let mut b = battery;
    if b.powered {
        let pre = b.available_j + harvested - consumed;
        if pre <= 0.0 {
            let delivered = b.available_j + harvested;
            b.available_j = 0.0;
            b.powered = false;
            b.downtime_steps += 1;
            (
                b,
                StepEnergy {
                    harvested_j: harvested,
                    consumed_j: delivered,
                    overflow_j: 0.0,
                },
            )
        } else {
            let overflow = (pre - params.e_max_j).max(0.0);
            b.available_j = pre - overflow;
            (
                b,
                StepEnergy {
                    harvested_j: harvested,
                    consumed_j: consumed,
                    overflow_j: overflow,
                },
            )
        }
    } else {
        let pre = b.available_j + harvested;
        let overflow = (pre - params.e_max_j).max(0.0);
        b.available_j = pre - overflow;
        b.downtime_steps += 1;
        if b.available_j >= RESTART_FRACTION * params.e_max_j {
            b.powered = true;
        }
        (
            b,
            StepEnergy {
                harvested_j: harvested,
                consumed_j: 0.0,
                overflow_j: overflow,
            },
        )
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("failed to read `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("no samples")]
    NoSamples,
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("line {line}: timestamps must be strictly increasing")]
    NonMonotonic { line: usize },
    #[error("line {line}: negative {field}")]
    Negative { line: usize, field: &'static str },
}

/// A time-ordered harvesting trace with linear interpolation between samples.
#[derive(Debug, Clone)]
pub struct HarvestTrace {
    samples: Vec<HarvestSample>,
}

impl HarvestTrace {
    pub fn from_samples(samples: Vec<HarvestSample>) -> Result<Self, TraceError> {
        if samples.is_empty() {
            return Err(TraceError::NoSamples);
        }
        for (i, s) in samples.iter().enumerate() {
            let line = i + 2; // 1-based, after the header row
            if s.current_a < 0.0 {
                return Err(TraceError::Negative {
                    line,
                    field: "current",
                });
            }
            if s.voltage_v < 0.0 {
                return Err(TraceError::Negative {
                    line,
                    field: "voltage",
                });
            }
            if i > 0 && s.t_seconds <= samples[i - 1].t_seconds {
                return Err(TraceError::NonMonotonic { line });
            }
        }
        Ok(Self { samples })
    }

    /// Loads a CSV trace with header `t_seconds,current_a,voltage_v`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, TraceError> {
        let mut lines = text.lines().enumerate();
        let header = loop {
            match lines.next() {
                Some((_, l)) if l.trim().is_empty() => continue,
                Some((i, l)) => break (i, l),
                None => return Err(TraceError::NoSamples),
            }
        };
        if header.1.trim() != "t_seconds,current_a,voltage_v" {
            return Err(TraceError::Malformed {
                line: header.0 + 1,
                msg: format!("expected header `t_seconds,current_a,voltage_v`, got `{}`", header.1.trim()),
            });
        }
        let mut samples = Vec::new();
        for (i, raw) in lines {
            let line = i + 1;
            let row = raw.trim();
            if row.is_empty() || row.starts_with('#') {
                continue;
            }
            let mut fields = row.split(',');
            let mut next = |name: &str| -> Result<f64, TraceError> {
                let f = fields.next().ok_or_else(|| TraceError::Malformed {
                    line,
                    msg: format!("missing field `{name}`"),
                })?;
                f.trim().parse::<f64>().map_err(|_| TraceError::Malformed {
                    line,
                    msg: format!("field `{name}`: cannot parse `{}`", f.trim()),
                })
            };
            let t = next("t_seconds")?;
            let current = next("current_a")?;
            let voltage = next("voltage_v")?;
            if fields.next().is_some() {
                return Err(TraceError::Malformed {
                    line,
                    msg: "too many fields".into(),
                });
            }
            if current < 0.0 {
                return Err(TraceError::Negative {
                    line,
                    field: "current",
                });
            }
            if voltage < 0.0 {
                return Err(TraceError::Negative {
                    line,
                    field: "voltage",
                });
            }
            if let Some(prev) = samples.last() {
                let prev: &HarvestSample = prev;
                if t <= prev.t_seconds {
                    return Err(TraceError::NonMonotonic { line });
                }
            }
            samples.push(HarvestSample {
                t_seconds: t,
                current_a: current,
                voltage_v: voltage,
            });
        }
        if samples.is_empty() {
            return Err(TraceError::NoSamples);
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[HarvestSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn start_seconds(&self) -> f64 {
        self.samples[0].t_seconds
    }

    pub fn end_seconds(&self) -> f64 {
        self.samples[self.samples.len() - 1].t_seconds
    }

    /// (current, voltage) at time `t`, linearly interpolated. Times before
    /// the first sample clamp to it; times past the end return `None`.
    pub fn sample_at(&self, t: f64) -> Option<(f64, f64)> {
        if t > self.end_seconds() {
            return None;
        }
        let idx = self.samples.partition_point(|s| s.t_seconds <= t);
        Some(self.interp(idx, t))
    }

    fn interp(&self, upper: usize, t: f64) -> (f64, f64) {
        if upper == 0 {
            let s = &self.samples[0];
            return (s.current_a, s.voltage_v);
        }
        if upper >= self.samples.len() {
            let s = &self.samples[self.samples.len() - 1];
            return (s.current_a, s.voltage_v);
        }
        let a = &self.samples[upper - 1];
        let b = &self.samples[upper];
        let w = (t - a.t_seconds) / (b.t_seconds - a.t_seconds);
        (
            a.current_a + w * (b.current_a - a.current_a),
            a.voltage_v + w * (b.voltage_v - a.voltage_v),
        )
    }

    /// Trapezoid integral of current over `[a, b]` in ampere-seconds.
    pub fn integrate_current(&self, a: f64, b: f64) -> f64 {
        debug_assert!(b >= a);
        let mut total = 0.0;
        let mut t = a;
        let mut prev = self.sample_at(t).map(|(i, _)| i);
        // walk interior sample points
        let start = self.samples.partition_point(|s| s.t_seconds <= a);
        for s in &self.samples[start..] {
            if s.t_seconds >= b {
                break;
            }
            if let Some(p) = prev {
                total += 0.5 * (p + s.current_a) * (s.t_seconds - t);
            }
            t = s.t_seconds;
            prev = Some(s.current_a);
        }
        if let (Some(p), Some((end_i, _))) = (prev, self.sample_at(b)) {
            total += 0.5 * (p + end_i) * (b - t);
        }
        total
    }
}

/// Sequential-access cursor over a trace; O(1) amortized for monotone times.
#[derive(Debug, Clone, Default)]
pub struct TraceCursor {
    idx: usize,
}

impl TraceCursor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn value_at(&mut self, trace: &HarvestTrace, t: f64) -> Option<(f64, f64)> {
        let samples = trace.samples();
        if t > trace.end_seconds() {
            return None;
        }
        if samples[self.idx].t_seconds > t {
            // non-monotone query; fall back to search
            self.idx = samples.partition_point(|s| s.t_seconds <= t).saturating_sub(1);
        }
        while self.idx + 1 < samples.len() && samples[self.idx + 1].t_seconds <= t {
            self.idx += 1;
        }
        Some(trace.interp(self.idx + 1, t))
    }
}

/// Synthetic diurnal trace parameters. Irradiance follows a half-sine over
/// the daylight window centered on local noon; each day's amplitude gets a
/// seeded jitter and each sample a small multiplicative noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SolarTraceConfig {
    pub days: usize,
    pub panels: usize,
    pub panel_watts: f64,
    pub voltage_v: f64,
    /// Fraction of the 24 h cycle with sun.
    pub day_fraction: f64,
    /// Day-to-day amplitude jitter, +/- this fraction.
    pub amplitude_jitter: f64,
    /// Per-sample multiplicative noise, +/- this fraction.
    pub sample_noise: f64,
    pub sample_period_s: f64,
}

impl Default for SolarTraceConfig {
    fn default() -> Self {
        Self {
            days: 1,
            panels: 8,
            panel_watts: 2.0,
            voltage_v: 6.1,
            day_fraction: 0.45,
            amplitude_jitter: 0.30,
            sample_noise: 0.02,
            sample_period_s: 60.0,
        }
    }
}

impl SolarTraceConfig {
    pub fn peak_current_a(&self) -> f64 {
        self.panels as f64 * self.panel_watts / self.voltage_v
    }

    /// Closed-form integral of current over one jitter-free day (A*s).
    pub fn ideal_daily_current_integral(&self) -> f64 {
        let daylight = self.day_fraction * 86_400.0;
        self.peak_current_a() * 2.0 / std::f64::consts::PI * daylight
    }
}

/// Synthesizes a diurnal trace with the default profile.
pub fn synth_solar_trace(days: usize, panels: usize, panel_watts: f64, seed: u64) -> HarvestTrace {
    let cfg = SolarTraceConfig {
        days,
        panels,
        panel_watts,
        ..SolarTraceConfig::default()
    };
    synth_solar_trace_cfg(&cfg, seed)
}

/// Synthesizes a diurnal trace; deterministic for a given (config, seed).
pub fn synth_solar_trace_cfg(cfg: &SolarTraceConfig, seed: u64) -> HarvestTrace {
    assert!(cfg.days >= 1, "days must be >= 1");
    assert!(cfg.day_fraction > 0.0 && cfg.day_fraction < 1.0);
    let mut rng: ChaCha8Rng = rng::stream(seed, rng::streams::TRACE_BASE);
    let peak = cfg.peak_current_a();
    let daylight = cfg.day_fraction * 86_400.0;
    let sunrise_offset = (86_400.0 - daylight) / 2.0;
    let amps: Vec<f64> = (0..cfg.days)
        .map(|_| 1.0 + cfg.amplitude_jitter * rng.gen_range(-1.0..=1.0))
        .collect();
    let n = (cfg.days as f64 * 86_400.0 / cfg.sample_period_s) as usize + 1;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * cfg.sample_period_s;
        let day = ((t / 86_400.0) as usize).min(cfg.days - 1);
        let tod = t - day as f64 * 86_400.0;
        let noise = 1.0 + cfg.sample_noise * rng.gen_range(-1.0..=1.0);
        let current = if tod >= sunrise_offset && tod <= sunrise_offset + daylight {
            let phase = (tod - sunrise_offset) / daylight;
            (peak * amps[day] * (std::f64::consts::PI * phase).sin() * noise).max(0.0)
        } else {
            0.0
        };
        samples.push(HarvestSample {
            t_seconds: t,
            current_a: current,
            voltage_v: cfg.voltage_v,
        });
    }
    HarvestTrace::from_samples(samples).expect("synthesized trace is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::CameraMode;
    use approx::assert_relative_eq;

    fn params() -> EnergyParams {
        EnergyParams::default()
    }

    #[test]
    fn harvest_zero_current_is_zero() {
        let s = HarvestSample {
            t_seconds: 0.0,
            current_a: 0.0,
            voltage_v: 6.1,
        };
        assert_eq!(harvest_energy(&s, &params(), 1.0), 0.0);
    }

    #[test]
    fn harvest_matches_hand_computation() {
        let s = HarvestSample {
            t_seconds: 0.0,
            current_a: 0.5,
            voltage_v: 6.1,
        };
        assert_relative_eq!(harvest_energy(&s, &params(), 1.0), 2.44, max_relative = 1e-12);
        let unit = HarvestSample {
            t_seconds: 0.0,
            current_a: 1.0,
            voltage_v: 6.1,
        };
        let mut p = params();
        p.eta_eh = 1.0;
        assert_relative_eq!(harvest_energy(&unit, &p, 1.0), 6.1, max_relative = 1e-12);
    }

    #[test]
    fn consumption_per_mode() {
        let p = params();
        assert_relative_eq!(
            consumption_for_mode(CameraMode::StandBy, &p, 50e-9),
            0.139,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            consumption_for_mode(CameraMode::DetectLocal, &p, 50e-9),
            0.196_531_2,
            max_relative = 1e-9
        );
        assert_relative_eq!(
            consumption_for_mode(CameraMode::TransmitRaw, &p, 50e-9),
            0.453_572_8,
            max_relative = 1e-9
        );
    }

    #[test]
    fn transmit_costs_more_than_local_detection_across_sweep() {
        let p = params();
        for nj in [25.0, 45.0, 55.0, 65.0, 85.0] {
            let e_tr = nj * 1e-9;
            assert!(
                consumption_for_mode(CameraMode::TransmitRaw, &p, e_tr)
                    > consumption_for_mode(CameraMode::DetectLocal, &p, e_tr),
                "ordering must hold at {nj} nJ/bit"
            );
        }
    }

    #[test]
    fn apply_step_clamps_at_capacity() {
        let p = params();
        let full = BatteryState::full(&p);
        let (b, se) = apply_step(full, 5.0, 0.0, &p);
        assert_eq!(b.available_j, p.e_max_j);
        assert_relative_eq!(se.overflow_j, 5.0, max_relative = 1e-12);
        assert!(b.powered);
    }

    #[test]
    fn apply_step_depletion_forces_outage() {
        let p = params();
        let b0 = BatteryState {
            available_j: 0.1,
            downtime_steps: 0,
            powered: true,
        };
        let (b, se) = apply_step(b0, 0.0, 0.2, &p);
        assert_eq!(b.available_j, 0.0);
        assert!(!b.powered);
        assert_eq!(b.downtime_steps, 1);
        // only what was there gets delivered
        assert_relative_eq!(se.consumed_j, 0.1, max_relative = 1e-12);
    }

    #[test]
    fn apply_step_accumulates() {
        let p = params();
        let b0 = BatteryState {
            available_j: 100.0,
            downtime_steps: 0,
            powered: true,
        };
        let (b, _) = apply_step(b0, 2.44, 0.139, &p);
        assert_relative_eq!(b.available_j, 102.301, max_relative = 1e-12);
    }

    #[test]
    fn powered_off_camera_harvests_and_restarts_at_threshold() {
        let p = params();
        let mut b = BatteryState {
            available_j: 0.0,
            downtime_steps: 3,
            powered: false,
        };
        let below = RESTART_FRACTION * p.e_max_j - 1.0;
        let (b1, se) = apply_step(b, below, 123.0, &p);
        assert_eq!(se.consumed_j, 0.0, "powered-off camera consumes nothing");
        assert!(!b1.powered);
        assert_eq!(b1.downtime_steps, 4);
        b = b1;
        let (b2, _) = apply_step(b, 2.0, 0.0, &p);
        assert!(b2.powered, "restart once charge reaches the threshold");
        assert_eq!(b2.downtime_steps, 5);
    }

    #[test]
    fn ledger_identity_over_random_walk() {
        let p = params();
        let mut rng = crate::rng::stream(9, 99);
        let mut b = BatteryState::with_fraction(&p, 0.001);
        let initial = b.available_j;
        let (mut h_sum, mut c_sum, mut o_sum) = (0.0, 0.0, 0.0);
        let mut last_down = 0;
        for _ in 0..20_000 {
            let h = rng.gen_range(0.0..3.0);
            let c = rng.gen_range(0.0..4.0);
            let (nb, se) = apply_step(b, h, c, &p);
            assert!(nb.available_j >= 0.0 && nb.available_j <= p.e_max_j);
            assert!(nb.downtime_steps >= last_down);
            last_down = nb.downtime_steps;
            h_sum += se.harvested_j;
            c_sum += se.consumed_j;
            o_sum += se.overflow_j;
            b = nb;
        }
        let delta = b.available_j - initial;
        assert_relative_eq!(h_sum - c_sum - o_sum, delta, max_relative = 1e-9, epsilon = 1e-9);
    }

    #[test]
    fn trace_parse_and_interpolate() {
        let text = "t_seconds,current_a,voltage_v\n0,0.5,6.1\n60,0.5,6.1\n";
        let trace = HarvestTrace::parse(text).unwrap();
        let (i, u) = trace.sample_at(30.0).unwrap();
        assert_relative_eq!(i, 0.5);
        assert_relative_eq!(u, 6.1);

        let text = "t_seconds,current_a,voltage_v\n0,0.0,6.1\n60,0.6,6.1\n";
        let trace = HarvestTrace::parse(text).unwrap();
        let (i, _) = trace.sample_at(30.0).unwrap();
        assert_relative_eq!(i, 0.3, max_relative = 1e-12);
    }

    #[test]
    fn trace_errors_name_lines() {
        match HarvestTrace::parse("t_seconds,current_a,voltage_v\n") {
            Err(TraceError::NoSamples) => {}
            other => panic!("expected NoSamples, got {other:?}"),
        }
        match HarvestTrace::parse("t_seconds,current_a,voltage_v\n0,0.5,6.1\nbad,row\n") {
            Err(TraceError::Malformed { line: 3, .. }) => {}
            other => panic!("expected Malformed at line 3, got {other:?}"),
        }
        match HarvestTrace::parse("t_seconds,current_a,voltage_v\n10,0.5,6.1\n5,0.5,6.1\n") {
            Err(TraceError::NonMonotonic { line: 3 }) => {}
            other => panic!("expected NonMonotonic at line 3, got {other:?}"),
        }
    }

    #[test]
    fn trace_exhaustion_and_cursor_agree() {
        let text = "t_seconds,current_a,voltage_v\n0,0.1,6.0\n10,0.3,6.0\n20,0.2,6.2\n";
        let trace = HarvestTrace::parse(text).unwrap();
        assert!(trace.sample_at(20.0001).is_none());
        let mut cursor = TraceCursor::new();
        for k in 0..=200 {
            let t = k as f64 * 0.1;
            assert_eq!(cursor.value_at(&trace, t), trace.sample_at(t), "t={t}");
        }
        assert!(cursor.value_at(&trace, 21.0).is_none());
    }

    #[test]
    fn synth_trace_zero_at_midnight_and_peak_at_noon() {
        let cfg = SolarTraceConfig {
            days: 1,
            panels: 4,
            panel_watts: 2.0,
            amplitude_jitter: 0.0,
            sample_noise: 0.0,
            ..SolarTraceConfig::default()
        };
        let trace = synth_solar_trace_cfg(&cfg, 1);
        let (midnight, _) = trace.sample_at(0.0).unwrap();
        assert_eq!(midnight, 0.0);
        let (noon, _) = trace.sample_at(43_200.0).unwrap();
        assert_relative_eq!(noon, 8.0 / 6.1, max_relative = 1e-12);
    }

    #[test]
    fn synth_trace_deterministic() {
        let a = synth_solar_trace(2, 4, 2.0, 77);
        let b = synth_solar_trace(2, 4, 2.0, 77);
        assert_eq!(a.samples(), b.samples());
        let c = synth_solar_trace(2, 4, 2.0, 78);
        assert_ne!(a.samples(), c.samples());
    }

    #[test]
    fn synth_trace_integral_matches_half_sine() {
        let cfg = SolarTraceConfig {
            days: 1,
            amplitude_jitter: 0.0,
            sample_noise: 0.0,
            ..SolarTraceConfig::default()
        };
        let trace = synth_solar_trace_cfg(&cfg, 5);
        let got = trace.integrate_current(0.0, 86_400.0);
        let want = cfg.ideal_daily_current_integral();
        assert_relative_eq!(got, want, max_relative = 1e-3);
    }
}
