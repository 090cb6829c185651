//! The decision environment: cameras choose a mode per epoch, frames play
//! out with harvesting/consumption/detection, every epoch ends with a guard
//! frame where all powered cameras transmit a raw reference image, and the
//! reward combines guard recall with an energy-floor penalty.
//!
//! Epoch layout: `frames_per_epoch` frames, the last of which is the guard
//! frame. Action modes drive the first `frames_per_epoch - 1` frames; on the
//! guard frame every powered camera transmits one raw image (charged
//! `e_op + f_raw * e_tr`) and the cloud detector runs on all of them to
//! produce the reference set K(tau). Guard recall compares the union
//! detected in the final pre-guard frame against K(tau).

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::energy::{
    apply_step, consumption_for_mode, guard_consumption, BatteryState, EnergyParams, HarvestTrace,
    TraceCursor,
};
use crate::gpforecast::{self, ForecastWindow, GpModel};
use crate::policies::{Policy, PolicyContext, TransitionView};
use crate::rng;
use crate::world::{
    advance_scene, detect_into, init_stationary, recall, DetectionTrace, DetectorKind,
    DetectorProfile, ObjectId, SceneConfig, WorldFrame,
};

/// Per-epoch operating mode of one camera.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CameraMode {
    TransmitRaw,
    DetectLocal,
    StandBy,
}

impl CameraMode {
    pub fn code(self) -> usize {
        match self {
            CameraMode::TransmitRaw => 0,
            CameraMode::DetectLocal => 1,
            CameraMode::StandBy => 2,
        }
    }

    pub fn from_code(code: usize) -> Option<Self> {
        match code {
            0 => Some(CameraMode::TransmitRaw),
            1 => Some(CameraMode::DetectLocal),
            2 => Some(CameraMode::StandBy),
            _ => None,
        }
    }
}

/// One mode per camera, bijective with an index in `[0, 3^K)` via
/// `index = sum_k code_k * 3^k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointAction {
    modes: Vec<CameraMode>,
}

impl JointAction {
    pub fn from_modes(modes: Vec<CameraMode>) -> Self {
        assert!(!modes.is_empty());
        Self { modes }
    }

    pub fn from_index(index: usize, cameras: usize) -> Result<Self, EnvError> {
        let max = Self::num_actions(cameras);
        if index >= max {
            return Err(EnvError::InvalidAction { index, max });
        }
        let mut modes = Vec::with_capacity(cameras);
        let mut rest = index;
        for _ in 0..cameras {
            modes.push(CameraMode::from_code(rest % 3).unwrap());
            rest /= 3;
        }
        Ok(Self { modes })
    }

    pub fn index(&self) -> usize {
        self.modes
            .iter()
            .rev()
            .fold(0, |acc, m| acc * 3 + m.code())
    }

    pub fn modes(&self) -> &[CameraMode] {
        &self.modes
    }

    pub fn num_actions(cameras: usize) -> usize {
        3usize.pow(cameras as u32)
    }
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("action index {index} out of range (< {max})")]
    InvalidAction { index: usize, max: usize },
    #[error("action has {got} modes, environment has {want} cameras")]
    ActionDim { got: usize, want: usize },
    #[error("harvest trace exhausted")]
    TraceExhausted,
    #[error("environment setup: {0}")]
    Setup(String),
}

/// Environment shape and reward constants.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub cameras: usize,
    /// Frames per decision epoch (lambda * tau); the last one is the guard.
    pub frames_per_epoch: usize,
    pub frame_dt_s: f64,
    /// Detected-object count is normalized by this cap in the state.
    pub detected_count_cap: f64,
    /// Penalty subtracted when any battery sits below the floor.
    pub p_energy_penalty: f64,
    /// Floor as a fraction of capacity.
    pub energy_floor_frac: f64,
    pub initial_battery_frac: f64,
    /// Time-compression multiplier: each epoch advances time and scales
    /// energy flows by this factor while scene statistics stay per-frame.
    pub stride: u32,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            cameras: 2,
            frames_per_epoch: 10,
            frame_dt_s: 0.1,
            detected_count_cap: 10.0,
            p_energy_penalty: 50.0,
            energy_floor_frac: 0.15,
            initial_battery_frac: 1.0,
            stride: 1,
        }
    }
}

/// Per-bit transmission cost schedule, resolved once per epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostSchedule {
    Static(f64),
    /// Uniform draw per epoch from [lo, hi] (joules per bit).
    DynamicUniform { lo: f64, hi: f64 },
}

impl CostSchedule {
    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            CostSchedule::Static(v) => v,
            CostSchedule::DynamicUniform { lo, hi } => {
                use rand::Rng;
                rng.gen_range(lo..=hi)
            }
        }
    }
}

/// Observation vector: per-camera normalized energy, guard recall, the
/// normalized guard detection count, then per-camera forecast features when
/// forecasting is enabled. All entries lie in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    values: Vec<f64>,
}

impl EnvState {
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Assembles an observation from its normalized parts.
pub fn build_state(
    energies_frac: &[f64],
    guard_recall: f64,
    detected_norm: f64,
    forecasts: &[f64],
) -> EnvState {
    let mut values = Vec::with_capacity(energies_frac.len() + 2 + forecasts.len());
    for &e in energies_frac {
        values.push(e.clamp(0.0, 1.0));
    }
    values.push(guard_recall.clamp(0.0, 1.0));
    values.push(detected_norm.clamp(0.0, 1.0));
    for &f in forecasts {
        values.push(f.clamp(0.0, 1.0));
    }
    EnvState { values }
}

/// Guard recall per the reference-count ratio, clamped to [0, 1] and
/// vacuously 1 when the guard saw nothing.
pub fn guard_recall_ratio(pre_guard_count: usize, guard_count: usize) -> f64 {
    if guard_count == 0 {
        1.0
    } else {
        (pre_guard_count as f64 / guard_count as f64).min(1.0)
    }
}

/// Epoch reward: `10 * (guard_recall - 0.5)`, minus the energy penalty when
/// any camera sits below the floor.
pub fn epoch_reward(
    guard_recall: f64,
    energies_j: &[f64],
    params: &EnergyParams,
    cfg: &EnvConfig,
) -> f64 {
    let mut r = 10.0 * (guard_recall - 0.5);
    let floor = cfg.energy_floor_frac * params.e_max_j;
    if energies_j.iter().any(|&e| e < floor) {
        r -= cfg.p_energy_penalty;
    }
    r
}

/// Everything observed over one epoch, for logs and aggregation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpochOutcome {
    pub epoch: u64,
    pub day: u32,
    pub action_index: usize,
    pub guard_recall: f64,
    /// Mean per-frame recall over the epoch, guard frame included.
    pub true_recall: f64,
    pub reward: f64,
    pub e_tr_j_per_bit: f64,
    pub energy_penalty: bool,
    pub e_av_j: Vec<f64>,
    pub delta_e_j: Vec<f64>,
    pub harvested_j: Vec<f64>,
    /// Cumulative downtime steps per camera.
    pub downtime_steps: Vec<u64>,
    pub downtime_delta_steps: Vec<u64>,
}

/// Cumulative per-camera energy ledger. The identity
/// `harvested - consumed - overflow = e_av_end - e_av_start` holds exactly.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CameraLedger {
    pub harvested_j: f64,
    pub consumed_j: f64,
    pub overflow_j: f64,
    pub e_av_start_j: f64,
    pub min_e_av_j: f64,
    pub max_e_av_j: f64,
}

/// Scene source: the stochastic model or a replayed detection log.
pub enum WorldSource {
    Synthetic {
        frame: WorldFrame,
        scene: SceneConfig,
    },
    Replay {
        trace: DetectionTrace,
        step: u64,
    },
}

impl WorldSource {
    fn advance(&mut self, dt_s: f64, rng: &mut ChaCha8Rng) -> Result<(), EnvError> {
        match self {
            WorldSource::Synthetic { frame, scene } => {
                advance_scene(frame, scene, dt_s, rng);
                Ok(())
            }
            WorldSource::Replay { trace, step } => {
                *step += 1;
                if *step > trace.max_step {
                    Err(EnvError::TraceExhausted)
                } else {
                    Ok(())
                }
            }
        }
    }

    fn ground_truth_into(&self, out: &mut Vec<ObjectId>) {
        out.clear();
        match self {
            WorldSource::Synthetic { frame, .. } => out.extend(frame.ground_truth()),
            WorldSource::Replay { trace, step } => {
                out.extend(trace.rows_at(*step).iter().map(|r| r.object_id))
            }
        }
    }

    fn detect_into(
        &self,
        camera: usize,
        profile: &DetectorProfile,
        rng: &mut ChaCha8Rng,
        out: &mut Vec<ObjectId>,
    ) {
        match self {
            WorldSource::Synthetic { frame, .. } => detect_into(frame, camera, profile, rng, out),
            WorldSource::Replay { trace, step } => {
                let bit = 1u32 << camera;
                for row in trace.rows_at(*step) {
                    if row.camera_mask & bit == 0 {
                        continue;
                    }
                    let hit = match profile.kind {
                        DetectorKind::Cloud => row.detected_cloud,
                        DetectorKind::Local => row.detected_local,
                    };
                    if hit {
                        out.push(row.object_id);
                    }
                }
            }
        }
    }
}

/// Per-camera forecaster: refit once per simulated day on the trailing
/// window, feature cached per forecast bin.
struct Forecaster {
    window: ForecastWindow,
    model: Option<GpModel>,
    max_horizon_j: f64,
    fits: u64,
    cache: Option<(i64, f64)>,
}

impl Forecaster {
    fn refit(&mut self, trace: &HarvestTrace, now_abs_s: f64) {
        let span_s = self.window.fit_span_h * 3600.0;
        let lo = now_abs_s - span_s;
        let samples: Vec<(f64, f64)> = trace
            .samples()
            .iter()
            .filter(|s| s.t_seconds >= lo && s.t_seconds <= now_abs_s)
            .map(|s| (s.t_seconds / 3600.0, s.current_a))
            .collect();
        self.model = gpforecast::fit(&samples, &self.window).ok();
        self.fits += 1;
        self.cache = None;
    }

    fn feature(&mut self, now_abs_s: f64, eta: f64, voltage: f64) -> f64 {
        let Some(model) = &self.model else {
            return 0.0;
        };
        let bin_h = self.window.bin_hours();
        let now_h = now_abs_s / 3600.0;
        let bin_idx = (now_h / bin_h).floor() as i64;
        if let Some((cached_bin, value)) = self.cache {
            if cached_bin == bin_idx {
                return value;
            }
        }
        let value = gpforecast::forecast_feature(
            model,
            bin_idx as f64 * bin_h,
            &self.window,
            eta,
            voltage,
            self.max_horizon_j,
        );
        self.cache = Some((bin_idx, value));
        value
    }
}

/// Forecasting setup for the environment.
#[derive(Debug, Clone, PartialEq)]
pub struct GpSetup {
    pub window: ForecastWindow,
    /// Normalization ceiling for the forecast feature; derived from the
    /// trace's peak power when absent.
    pub max_horizon_j: Option<f64>,
}

pub struct EnvSetup {
    pub cfg: EnvConfig,
    pub params: EnergyParams,
    pub cost: CostSchedule,
    pub scene: SceneConfig,
    pub cloud: DetectorProfile,
    pub local: DetectorProfile,
    pub traces: Vec<HarvestTrace>,
    /// Simulation t=0 maps to this trace time (lead-in history for fits).
    pub trace_offset_s: f64,
    pub replay: Option<DetectionTrace>,
    pub gp: Option<GpSetup>,
    pub seed: u64,
}

pub struct SimEnv {
    cfg: EnvConfig,
    params: EnergyParams,
    cost: CostSchedule,
    cloud: DetectorProfile,
    local: DetectorProfile,
    world: WorldSource,
    traces: Vec<HarvestTrace>,
    cursors: Vec<TraceCursor>,
    trace_offset_s: f64,
    batteries: Vec<BatteryState>,
    ledgers: Vec<CameraLedger>,
    rng_scene: ChaCha8Rng,
    rng_detect: ChaCha8Rng,
    rng_cost: ChaCha8Rng,
    epoch: u64,
    time_s: f64,
    e_tr_now: f64,
    last_guard_count: usize,
    last_guard_recall: f64,
    forecasters: Option<Vec<Forecaster>>,
    last_fit_day: i64,
    voltage_hint: f64,
    energies_cache: Vec<f64>,
    buf_union: Vec<ObjectId>,
    buf_det: Vec<ObjectId>,
    buf_gt: Vec<ObjectId>,
    exhausted: bool,
}

impl SimEnv {
    pub fn new(setup: EnvSetup) -> Result<Self, EnvError> {
        let cfg = setup.cfg;
        if cfg.cameras == 0 || cfg.cameras > 8 {
            return Err(EnvError::Setup("cameras must be in 1..=8".into()));
        }
        if cfg.frames_per_epoch < 2 {
            return Err(EnvError::Setup("frames_per_epoch must be >= 2".into()));
        }
        if cfg.stride == 0 {
            return Err(EnvError::Setup("stride must be >= 1".into()));
        }
        if setup.traces.len() != cfg.cameras {
            return Err(EnvError::Setup(format!(
                "need one trace per camera ({} cameras, {} traces)",
                cfg.cameras,
                setup.traces.len()
            )));
        }
        setup
            .params
            .validate()
            .map_err(|e| EnvError::Setup(e.to_string()))?;
        if setup.local.p_detect > setup.cloud.p_detect {
            return Err(EnvError::Setup(
                "local detector cannot beat the cloud detector".into(),
            ));
        }

        let mut rng_scene = rng::stream(setup.seed, rng::streams::SCENE);
        let mut rng_detect = rng::stream(setup.seed, rng::streams::DETECT);
        let mut rng_cost = rng::stream(setup.seed, rng::streams::COST);

        let world = match setup.replay {
            Some(trace) => WorldSource::Replay { trace, step: 0 },
            None => WorldSource::Synthetic {
                frame: init_stationary(&setup.scene, &mut rng_scene),
                scene: setup.scene,
            },
        };

        let batteries =
            vec![BatteryState::with_fraction(&setup.params, cfg.initial_battery_frac); cfg.cameras];
        let ledgers: Vec<CameraLedger> = batteries
            .iter()
            .map(|b| CameraLedger {
                e_av_start_j: b.available_j,
                min_e_av_j: b.available_j,
                max_e_av_j: b.available_j,
                ..CameraLedger::default()
            })
            .collect();

        let voltage_hint = setup.traces[0]
            .samples()
            .iter()
            .map(|s| s.voltage_v)
            .fold(0.0, f64::max)
            .max(1e-9);
        let forecasters = match setup.gp {
            Some(gp) => {
                let mut list = Vec::with_capacity(cfg.cameras);
                for trace in &setup.traces {
                    let peak_w = trace
                        .samples()
                        .iter()
                        .map(|s| s.current_a * s.voltage_v)
                        .fold(0.0, f64::max);
                    let max_j = gp.max_horizon_j.unwrap_or_else(|| {
                        (setup.params.eta_eh * peak_w * gp.window.horizon_h * 3600.0).max(1e-9)
                    });
                    list.push(Forecaster {
                        window: gp.window,
                        model: None,
                        max_horizon_j: max_j,
                        fits: 0,
                        cache: None,
                    });
                }
                Some(list)
            }
            None => None,
        };

        let mut env = Self {
            cfg,
            params: setup.params,
            cost: setup.cost,
            cloud: setup.cloud,
            local: setup.local,
            world,
            cursors: vec![TraceCursor::new(); setup.traces.len()],
            traces: setup.traces,
            trace_offset_s: setup.trace_offset_s,
            batteries,
            ledgers,
            rng_scene,
            rng_detect: {
                use rand::RngCore;
                let _ = rng_detect.next_u64(); // reserve position zero
                rng_detect
            },
            rng_cost: {
                use rand::RngCore;
                let _ = rng_cost.next_u64();
                rng_cost
            },
            epoch: 0,
            time_s: 0.0,
            e_tr_now: 0.0,
            last_guard_count: 0,
            last_guard_recall: 1.0,
            forecasters,
            last_fit_day: -1,
            voltage_hint,
            energies_cache: Vec::new(),
            buf_union: Vec::new(),
            buf_det: Vec::new(),
            buf_gt: Vec::new(),
            exhausted: false,
        };

        // initial reference snapshot: the cloud detector runs on the starting
        // frame so the first observation has a detection count; no energy is
        // charged and time does not advance (each epoch pays its own guard).
        env.world.ground_truth_into(&mut env.buf_gt);
        env.buf_union.clear();
        for k in 0..env.cfg.cameras {
            env.buf_det.clear();
            let cloud = env.cloud;
            env.world
                .detect_into(k, &cloud, &mut env.rng_detect, &mut env.buf_det);
            env.buf_union.extend_from_slice(&env.buf_det);
        }
        env.buf_union.sort_unstable();
        env.buf_union.dedup();
        env.last_guard_count = env.buf_union.len();
        env.maybe_refit();
        env.e_tr_now = env.cost.draw(&mut env.rng_cost);
        env.refresh_energy_cache();
        Ok(env)
    }

    pub fn cameras(&self) -> usize {
        self.cfg.cameras
    }

    pub fn params(&self) -> &EnergyParams {
        &self.params
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn epoch_index(&self) -> u64 {
        self.epoch
    }

    pub fn time_s(&self) -> f64 {
        self.time_s
    }

    pub fn e_tr_now(&self) -> f64 {
        self.e_tr_now
    }

    pub fn batteries(&self) -> &[BatteryState] {
        &self.batteries
    }

    pub fn ledgers(&self) -> &[CameraLedger] {
        &self.ledgers
    }

    pub fn energies_j(&self) -> &[f64] {
        &self.energies_cache
    }

    /// Total fits performed per camera (forecasting enabled only).
    pub fn gp_fit_counts(&self) -> Option<Vec<u64>> {
        self.forecasters
            .as_ref()
            .map(|f| f.iter().map(|x| x.fits).collect())
    }

    pub fn observation_dim(&self) -> usize {
        self.cfg.cameras + 2 + if self.forecasters.is_some() { self.cfg.cameras } else { 0 }
    }

    fn refresh_energy_cache(&mut self) {
        self.energies_cache.clear();
        self.energies_cache
            .extend(self.batteries.iter().map(|b| b.available_j));
    }

    fn day_of(&self, t_s: f64) -> i64 {
        (t_s / 86_400.0).floor() as i64
    }

    fn maybe_refit(&mut self) {
        let day = self.day_of(self.time_s).max(0);
        if self.forecasters.is_none() || day <= self.last_fit_day {
            return;
        }
        let now_abs = self.time_s + self.trace_offset_s;
        if let Some(forecasters) = &mut self.forecasters {
            for (f, trace) in forecasters.iter_mut().zip(&self.traces) {
                f.refit(trace, now_abs);
            }
        }
        self.last_fit_day = day;
    }

    /// Current observation; forecast features are computed lazily per bin.
    pub fn observe(&mut self) -> EnvState {
        let e_max = self.params.e_max_j;
        let energies: Vec<f64> = self
            .batteries
            .iter()
            .map(|b| (b.available_j / e_max).clamp(0.0, 1.0))
            .collect();
        let detected_norm = (self.last_guard_count as f64 / self.cfg.detected_count_cap).min(1.0);
        let forecasts: Vec<f64> = match &mut self.forecasters {
            Some(list) => {
                let now_abs = self.time_s + self.trace_offset_s;
                let (eta, volt) = (self.params.eta_eh, self.voltage_hint);
                list.iter_mut().map(|f| f.feature(now_abs, eta, volt)).collect()
            }
            None => Vec::new(),
        };
        build_state(&energies, self.last_guard_recall, detected_norm, &forecasts)
    }

    pub fn policy_context<'a>(&'a self, state: &'a EnvState) -> PolicyContext<'a> {
        let per_frame = self.params.e_op_j + self.params.f_raw_bits * self.e_tr_now;
        PolicyContext {
            state,
            energies_j: &self.energies_cache,
            e_max_j: self.params.e_max_j,
            epoch_index: self.epoch,
            e_tr_now: self.e_tr_now,
            params: &self.params,
            cameras: self.cfg.cameras,
            // guard plus action frames at the current per-bit cost
            projected_transmit_cost_j: self.cfg.stride as f64
                * self.cfg.frames_per_epoch as f64
                * per_frame,
        }
    }

    /// Runs one decision epoch. Returns the next observation and the epoch's
    /// outcome, or `TraceExhausted` once any harvest trace or replay ends.
    pub fn step(&mut self, action: &JointAction) -> Result<(EnvState, EpochOutcome), EnvError> {
        if self.exhausted {
            return Err(EnvError::TraceExhausted);
        }
        if action.modes().len() != self.cfg.cameras {
            return Err(EnvError::ActionDim {
                got: action.modes().len(),
                want: self.cfg.cameras,
            });
        }
        // refit on the first epoch of each simulated day
        self.maybe_refit();

        let epoch_start_s = self.time_s;
        let frames = self.cfg.frames_per_epoch;
        let stride = self.cfg.stride as f64;
        let dt_eff = self.cfg.frame_dt_s * stride;
        let k_cams = self.cfg.cameras;
        let e_av_start: Vec<f64> = self.batteries.iter().map(|b| b.available_j).collect();
        let downtime_start: Vec<u64> = self.batteries.iter().map(|b| b.downtime_steps).collect();
        let mut harvested_epoch = vec![0.0; k_cams];
        let mut recall_sum = 0.0;
        let mut pre_guard_count = 0usize;
        let mut guard_count = 0usize;

        for f in 0..frames {
            let is_guard = f == frames - 1;
            self.time_s += dt_eff;
            self.world.advance(self.cfg.frame_dt_s, &mut self.rng_scene)?;

            for k in 0..k_cams {
                let t_abs = self.time_s + self.trace_offset_s;
                let Some((i_a, u_v)) = self.cursors[k].value_at(&self.traces[k], t_abs) else {
                    self.exhausted = true;
                    return Err(EnvError::TraceExhausted);
                };
                let harvested = self.params.eta_eh * i_a * u_v * dt_eff;
                let consumed = if self.batteries[k].powered {
                    let per_frame = if is_guard {
                        guard_consumption(&self.params, self.e_tr_now)
                    } else {
                        consumption_for_mode(action.modes()[k], &self.params, self.e_tr_now)
                    };
                    per_frame * stride
                } else {
                    0.0
                };
                let (nb, se) = apply_step(self.batteries[k], harvested, consumed, &self.params);
                debug_assert!(nb.available_j >= 0.0 && nb.available_j <= self.params.e_max_j);
                self.batteries[k] = nb;
                harvested_epoch[k] += se.harvested_j;
                let ledger = &mut self.ledgers[k];
                ledger.harvested_j += se.harvested_j;
                ledger.consumed_j += se.consumed_j;
                ledger.overflow_j += se.overflow_j;
                ledger.min_e_av_j = ledger.min_e_av_j.min(nb.available_j);
                ledger.max_e_av_j = ledger.max_e_av_j.max(nb.available_j);
            }

            self.world.ground_truth_into(&mut self.buf_gt);
            self.buf_union.clear();
            for k in 0..k_cams {
                if !self.batteries[k].powered {
                    continue;
                }
                let profile = if is_guard {
                    Some(self.cloud)
                } else {
                    match action.modes()[k] {
                        CameraMode::TransmitRaw => Some(self.cloud),
                        CameraMode::DetectLocal => Some(self.local),
                        CameraMode::StandBy => None,
                    }
                };
                if let Some(p) = profile {
                    self.buf_det.clear();
                    self.world
                        .detect_into(k, &p, &mut self.rng_detect, &mut self.buf_det);
                    self.buf_union.extend_from_slice(&self.buf_det);
                }
            }
            self.buf_union.sort_unstable();
            self.buf_union.dedup();
            recall_sum += recall(&self.buf_union, &self.buf_gt);
            if f == frames - 2 {
                pre_guard_count = self.buf_union.len();
            }
            if is_guard {
                guard_count = self.buf_union.len();
            }
        }

        let phi_g = guard_recall_ratio(pre_guard_count, guard_count);
        self.refresh_energy_cache();
        let reward = epoch_reward(phi_g, &self.energies_cache, &self.params, &self.cfg);
        let floor = self.cfg.energy_floor_frac * self.params.e_max_j;
        let penalty = self.energies_cache.iter().any(|&e| e < floor);
        self.last_guard_count = guard_count;
        self.last_guard_recall = phi_g;

        let outcome = EpochOutcome {
            epoch: self.epoch,
            day: self.day_of(epoch_start_s).max(0) as u32,
            action_index: action.index(),
            guard_recall: phi_g,
            true_recall: recall_sum / frames as f64,
            reward,
            e_tr_j_per_bit: self.e_tr_now,
            energy_penalty: penalty,
            e_av_j: self.energies_cache.clone(),
            delta_e_j: self
                .batteries
                .iter()
                .zip(&e_av_start)
                .map(|(b, s)| b.available_j - s)
                .collect(),
            harvested_j: harvested_epoch,
            downtime_steps: self.batteries.iter().map(|b| b.downtime_steps).collect(),
            downtime_delta_steps: self
                .batteries
                .iter()
                .zip(&downtime_start)
                .map(|(b, s)| b.downtime_steps - s)
                .collect(),
        };

        self.epoch += 1;
        self.e_tr_now = self.cost.draw(&mut self.rng_cost);
        let state = self.observe();
        Ok((state, outcome))
    }
}

/// Drives the observe/decide/step/learn loop for `horizon_epochs`, invoking
/// `on_epoch` per outcome. Stops early (without error) when a trace runs
/// out; returns the number of completed epochs.
pub fn run_episode<P: Policy + ?Sized>(
    env: &mut SimEnv,
    policy: &mut P,
    horizon_epochs: u64,
    mut on_epoch: impl FnMut(&EpochOutcome),
) -> Result<u64, EnvError> {
    let mut state = env.observe();
    for i in 0..horizon_epochs {
        let action = {
            let ctx = env.policy_context(&state);
            policy.decide(&ctx)
        };
        match env.step(&action) {
            Ok((next, outcome)) => {
                policy.learn(&TransitionView {
                    state: &state,
                    action: outcome.action_index,
                    reward: outcome.reward,
                    next_state: &next,
                    terminal: false,
                });
                on_epoch(&outcome);
                state = next;
            }
            Err(EnvError::TraceExhausted) => return Ok(i),
            Err(e) => return Err(e),
        }
    }
    Ok(horizon_epochs)
}
