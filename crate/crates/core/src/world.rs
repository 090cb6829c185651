//! Scene ground truth, per-camera visibility, stochastic detectors, recall.
//!
//! Objects arrive by a Poisson process, dwell for an exponential time, and
//! are either visible to every camera (with probability `overlap`) or to
//! exactly one camera drawn from the solo weights. Detectors are modeled by
//! their per-object hit probability; the cloud detector is calibrated so
//! that all-camera detection reaches a target union recall.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use thiserror::Error;

use crate::rng;

pub type ObjectId = u64;

#[derive(Debug, Clone, Copy, PartialEq)]
struct SceneObject {
    id: ObjectId,
    visible_mask: u32,
    departs_at_s: f64,
}

/// Scene state at one time-step: ground truth objects and who sees them.
/// The correlated set (objects visible to all cameras) is derived on demand.
#[derive(Debug, Clone, Default)]
pub struct WorldFrame {
    pub step: u64,
    time_s: f64,
    next_id: ObjectId,
    objects: Vec<SceneObject>,
}

impl WorldFrame {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn time_s(&self) -> f64 {
        self.time_s
    }

    pub fn ground_truth(&self) -> impl Iterator<Item = ObjectId> + '_ {
        self.objects.iter().map(|o| o.id)
    }

    pub fn ground_truth_count(&self) -> usize {
        self.objects.len()
    }

    pub fn visible(&self, camera: usize) -> impl Iterator<Item = ObjectId> + '_ {
        let bit = 1u32 << camera;
        self.objects
            .iter()
            .filter(move |o| o.visible_mask & bit != 0)
            .map(|o| o.id)
    }

    pub fn visible_count(&self, camera: usize) -> usize {
        self.visible(camera).count()
    }

    /// Objects visible to all `cameras` cameras at once.
    pub fn correlated(&self, cameras: usize) -> Vec<ObjectId> {
        let all = (1u32 << cameras) - 1;
        self.objects
            .iter()
            .filter(|o| o.visible_mask & all == all)
            .map(|o| o.id)
            .collect()
    }

    pub fn contains(&self, id: ObjectId) -> bool {
        self.objects.iter().any(|o| o.id == id)
    }
}

/// Synthetic scene statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub cameras: usize,
    pub arrival_rate_per_s: f64,
    pub dwell_mean_s: f64,
    /// Probability that a new object is visible to every camera.
    pub overlap: f64,
    /// Relative weights for assigning solo objects to a camera; empty = uniform.
    pub solo_weights: Vec<f64>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            cameras: 2,
            arrival_rate_per_s: 0.2,
            dwell_mean_s: 15.0,
            overlap: 0.5,
            solo_weights: Vec::new(),
        }
    }
}

impl SceneConfig {
    fn solo_weight(&self, k: usize) -> f64 {
        if self.solo_weights.is_empty() {
            1.0
        } else {
            self.solo_weights[k]
        }
    }

    fn draw_mask(&self, rng: &mut ChaCha8Rng) -> u32 {
        if rng.gen::<f64>() < self.overlap {
            (1u32 << self.cameras) - 1
        } else {
            let total: f64 = (0..self.cameras).map(|k| self.solo_weight(k)).sum();
            let mut u = rng.gen::<f64>() * total;
            for k in 0..self.cameras {
                u -= self.solo_weight(k);
                if u <= 0.0 {
                    return 1u32 << k;
                }
            }
            1u32 << (self.cameras - 1)
        }
    }
}

/// Draws a stationary initial frame: object count ~ Poisson(rate * dwell),
/// residual dwell times exponential by memorylessness.
pub fn init_stationary(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> WorldFrame {
    let mut frame = WorldFrame::empty();
    let mean = cfg.arrival_rate_per_s * cfg.dwell_mean_s;
    let n = if mean > 0.0 {
        Poisson::new(mean).expect("valid Poisson mean").sample(rng) as usize
    } else {
        0
    };
    let dwell = Exp::new(1.0 / cfg.dwell_mean_s).expect("valid dwell rate");
    for _ in 0..n {
        let id = frame.next_id;
        frame.next_id += 1;
        frame.objects.push(SceneObject {
            id,
            visible_mask: cfg.draw_mask(rng),
            departs_at_s: dwell.sample(rng),
        });
    }
    frame
}

/// Advances the scene by `dt`: departures leave, Poisson arrivals enter with
/// a visibility assignment that persists for the object's lifetime.
pub fn advance_scene(frame: &mut WorldFrame, cfg: &SceneConfig, dt_s: f64, rng: &mut ChaCha8Rng) {
    frame.step += 1;
    frame.time_s += dt_s;
    let now = frame.time_s;
    frame.objects.retain(|o| o.departs_at_s > now);
    if cfg.arrival_rate_per_s <= 0.0 {
        return;
    }
    let arrivals = Poisson::new(cfg.arrival_rate_per_s * dt_s)
        .expect("valid arrival mean")
        .sample(rng) as usize;
    let dwell = Exp::new(1.0 / cfg.dwell_mean_s).expect("valid dwell rate");
    for _ in 0..arrivals {
        let id = frame.next_id;
        frame.next_id += 1;
        frame.objects.push(SceneObject {
            id,
            visible_mask: cfg.draw_mask(rng),
            departs_at_s: now + dwell.sample(rng),
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorKind {
    Cloud,
    Local,
}

/// A detector reduced to its per-object hit statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorProfile {
    pub p_detect: f64,
    pub kind: DetectorKind,
}

impl DetectorProfile {
    pub fn new(p_detect: f64, kind: DetectorKind) -> Self {
        assert!((0.0..=1.0).contains(&p_detect));
        Self { p_detect, kind }
    }

    /// Local profile derived from the cloud one; `ratio` <= 1 keeps the
    /// cloud detector at least as good as the on-camera one.
    pub fn local_from(cloud: &DetectorProfile, ratio: f64) -> Self {
        assert!((0.0..=1.0).contains(&ratio));
        Self::new(cloud.p_detect * ratio, DetectorKind::Local)
    }
}

/// Runs a detector on camera `k`'s visible set: each object hits
/// independently with `p_detect`. Appends ids to `out`.
pub fn detect_into(
    frame: &WorldFrame,
    camera: usize,
    profile: &DetectorProfile,
    rng: &mut ChaCha8Rng,
    out: &mut Vec<ObjectId>,
) {
    let bit = 1u32 << camera;
    for o in &frame.objects {
        if o.visible_mask & bit != 0 && rng.gen::<f64>() < profile.p_detect {
            out.push(o.id);
        }
    }
}

pub fn detect(
    frame: &WorldFrame,
    camera: usize,
    profile: &DetectorProfile,
    rng: &mut ChaCha8Rng,
) -> Vec<ObjectId> {
    let mut out = Vec::new();
    detect_into(frame, camera, profile, rng, &mut out);
    out
}

/// Union recall: |detected ∩ ground_truth| / |ground_truth|.
/// An empty ground truth counts as fully recalled.
pub fn recall(detected: &[ObjectId], ground_truth: &[ObjectId]) -> f64 {
    if ground_truth.is_empty() {
        return 1.0;
    }
    let mut hit = 0usize;
    for id in ground_truth {
        if detected.contains(id) {
            hit += 1;
        }
    }
    hit as f64 / ground_truth.len() as f64
}

#[derive(Debug, Error, PartialEq)]
pub enum CalibrateError {
    #[error("target recall {0} not in (0, 1]")]
    BadTarget(f64),
    #[error("target recall {target} infeasible; max achievable {max:.4}")]
    Infeasible { target: f64, max: f64 },
}

/// Solves for the cloud detector's hit probability such that the expected
/// union recall over the stationary visibility distribution equals
/// `target_recall`. Bisection against a Monte-Carlo visibility sample
/// (>= 10^5 object draws), deterministic for a given seed.
pub fn calibrate_cloud_detector(
    cfg: &SceneConfig,
    cameras: usize,
    target_recall: f64,
    seed: u64,
) -> Result<DetectorProfile, CalibrateError> {
    if !(target_recall > 0.0 && target_recall <= 1.0) {
        return Err(CalibrateError::BadTarget(target_recall));
    }
    const DRAWS: usize = 200_000;
    let mut rng = rng::stream(seed, rng::streams::DETECT);
    // histogram over how many cameras see a drawn object
    let mut seen_by = vec![0u64; cameras + 1];
    for _ in 0..DRAWS {
        let mask = cfg.draw_mask(&mut rng);
        seen_by[mask.count_ones() as usize] += 1;
    }
    let expected_recall = |p: f64| -> f64 {
        let mut acc = 0.0;
        for (m, &count) in seen_by.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let miss = (1.0 - p).powi(m as i32);
            acc += count as f64 * (1.0 - miss);
        }
        acc / DRAWS as f64
    };
    let max = expected_recall(1.0);
    if target_recall > max + 1e-12 {
        return Err(CalibrateError::Infeasible {
            target: target_recall,
            max,
        });
    }
    if target_recall >= max {
        // cap: only p = 1 reaches the ceiling
        return Ok(DetectorProfile::new(1.0, DetectorKind::Cloud));
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected_recall(mid) < target_recall {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(DetectorProfile::new(0.5 * (lo + hi), DetectorKind::Cloud))
}

/// One replayed detection row: which cameras see the object and whether the
/// cloud/local detector would hit it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayRow {
    pub object_id: ObjectId,
    pub camera_mask: u32,
    pub detected_cloud: bool,
    pub detected_local: bool,
}

/// Externally produced detection log, replayed in place of the stochastic
/// model. Rows are grouped per time-step.
#[derive(Debug, Clone, Default)]
pub struct DetectionTrace {
    // sorted by t_step; one entry per step that has rows
    frames: Vec<(u64, Vec<ReplayRow>)>,
    pub max_step: u64,
}

#[derive(Debug, Error)]
pub enum DetectionTraceError {
    #[error("failed to read `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("no rows")]
    Empty,
}

impl DetectionTrace {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DetectionTraceError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| DetectionTraceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, DetectionTraceError> {
        let mut lines = text.lines().enumerate();
        let header = lines.next().ok_or(DetectionTraceError::Empty)?;
        if header.1.trim() != "t_step,object_id,camera_mask,detected_cloud,detected_local" {
            return Err(DetectionTraceError::Malformed {
                line: 1,
                msg: "expected header `t_step,object_id,camera_mask,detected_cloud,detected_local`"
                    .into(),
            });
        }
        let mut rows: Vec<(u64, ReplayRow)> = Vec::new();
        for (i, raw) in lines {
            let line = i + 1;
            let row = raw.trim();
            if row.is_empty() || row.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = row.split(',').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(DetectionTraceError::Malformed {
                    line,
                    msg: format!("expected 5 fields, got {}", fields.len()),
                });
            }
            let parse_u64 = |s: &str, name: &str| -> Result<u64, DetectionTraceError> {
                s.parse().map_err(|_| DetectionTraceError::Malformed {
                    line,
                    msg: format!("field `{name}`: cannot parse `{s}`"),
                })
            };
            let t_step = parse_u64(fields[0], "t_step")?;
            let object_id = parse_u64(fields[1], "object_id")?;
            let camera_mask = parse_u64(fields[2], "camera_mask")? as u32;
            let flag = |s: &str, name: &str| -> Result<bool, DetectionTraceError> {
                match s {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    _ => Err(DetectionTraceError::Malformed {
                        line,
                        msg: format!("field `{name}`: expected 0 or 1, got `{s}`"),
                    }),
                }
            };
            rows.push((
                t_step,
                ReplayRow {
                    object_id,
                    camera_mask,
                    detected_cloud: flag(fields[3], "detected_cloud")?,
                    detected_local: flag(fields[4], "detected_local")?,
                },
            ));
        }
        if rows.is_empty() {
            return Err(DetectionTraceError::Empty);
        }
        rows.sort_by_key(|(t, r)| (*t, r.object_id));
        let max_step = rows.last().unwrap().0;
        let mut frames: Vec<(u64, Vec<ReplayRow>)> = Vec::new();
        for (t, r) in rows {
            match frames.last_mut() {
                Some((ft, list)) if *ft == t => list.push(r),
                _ => frames.push((t, vec![r])),
            }
        }
        Ok(Self { frames, max_step })
    }

    pub fn rows_at(&self, step: u64) -> &[ReplayRow] {
        match self.frames.binary_search_by_key(&step, |(t, _)| *t) {
            Ok(i) => &self.frames[i].1,
            Err(_) => &[],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rng(seed: u64) -> ChaCha8Rng {
        crate::rng::stream(seed, crate::rng::streams::SCENE)
    }

    #[test]
    fn empty_scene_stays_empty_without_arrivals() {
        let cfg = SceneConfig {
            arrival_rate_per_s: 0.0,
            ..SceneConfig::default()
        };
        let mut frame = WorldFrame::empty();
        let mut r = rng(1);
        for _ in 0..100 {
            advance_scene(&mut frame, &cfg, 0.1, &mut r);
        }
        assert_eq!(frame.ground_truth_count(), 0);
    }

    #[test]
    fn full_overlap_means_everyone_sees_everything() {
        let cfg = SceneConfig {
            overlap: 1.0,
            ..SceneConfig::default()
        };
        let mut frame = WorldFrame::empty();
        let mut r = rng(2);
        for _ in 0..2_000 {
            advance_scene(&mut frame, &cfg, 0.1, &mut r);
            let gt: Vec<_> = frame.ground_truth().collect();
            for k in 0..cfg.cameras {
                let vis: Vec<_> = frame.visible(k).collect();
                assert_eq!(vis, gt);
            }
            assert_eq!(frame.correlated(cfg.cameras), gt);
        }
    }

    #[test]
    fn zero_overlap_means_disjoint_visibility() {
        let cfg = SceneConfig {
            overlap: 0.0,
            ..SceneConfig::default()
        };
        let mut frame = WorldFrame::empty();
        let mut r = rng(3);
        let mut seen = 0usize;
        while seen < 10_000 {
            advance_scene(&mut frame, &cfg, 0.1, &mut r);
            seen = frame.next_id as usize;
            let c1: Vec<_> = frame.visible(0).collect();
            for id in frame.visible(1) {
                assert!(!c1.contains(&id));
            }
            assert!(frame.correlated(cfg.cameras).is_empty());
        }
    }

    #[test]
    fn visibility_sets_are_subsets_of_ground_truth() {
        let cfg = SceneConfig::default();
        let mut r = rng(4);
        let mut frame = init_stationary(&cfg, &mut r);
        for _ in 0..5_000 {
            advance_scene(&mut frame, &cfg, 0.1, &mut r);
            let gt: Vec<_> = frame.ground_truth().collect();
            let corr = frame.correlated(cfg.cameras);
            for k in 0..cfg.cameras {
                for id in frame.visible(k) {
                    assert!(gt.contains(&id));
                }
            }
            for id in &corr {
                for k in 0..cfg.cameras {
                    assert!(frame.visible(k).any(|v| v == *id));
                }
            }
        }
    }

    #[test]
    fn detect_extremes() {
        let cfg = SceneConfig {
            overlap: 1.0,
            ..SceneConfig::default()
        };
        let mut r = rng(5);
        let mut frame = WorldFrame::empty();
        while frame.ground_truth_count() < 5 {
            advance_scene(&mut frame, &cfg, 0.5, &mut r);
        }
        let sure = DetectorProfile::new(1.0, DetectorKind::Cloud);
        let blind = DetectorProfile::new(0.0, DetectorKind::Local);
        assert_eq!(
            detect(&frame, 0, &sure, &mut r).len(),
            frame.ground_truth_count()
        );
        assert!(detect(&frame, 0, &blind, &mut r).is_empty());
    }

    #[test]
    fn detect_matches_binomial_mean() {
        // 1000 visible objects, p = 0.9, averaged over 100 seeds: 900 +/- 3 sigma
        let cfg = SceneConfig {
            overlap: 1.0,
            arrival_rate_per_s: 10.0,
            dwell_mean_s: 100.0,
            ..SceneConfig::default()
        };
        let mut r = rng(6);
        let mut frame = WorldFrame::empty();
        while frame.ground_truth_count() < 1000 {
            advance_scene(&mut frame, &cfg, 1.0, &mut r);
        }
        let n = frame.ground_truth_count() as f64;
        let profile = DetectorProfile::new(0.9, DetectorKind::Cloud);
        let mut total = 0.0;
        let runs = 100;
        for s in 0..runs {
            let mut dr = crate::rng::stream(1000 + s, crate::rng::streams::DETECT);
            total += detect(&frame, 0, &profile, &mut dr).len() as f64;
        }
        let mean = total / runs as f64;
        let sigma = (n * 0.9 * 0.1).sqrt() / (runs as f64).sqrt();
        assert!(
            (mean - 0.9 * n).abs() < 3.0 * sigma,
            "mean {mean} vs expected {} +/- {}",
            0.9 * n,
            3.0 * sigma
        );
    }

    #[test]
    fn recall_examples() {
        assert_relative_eq!(recall(&[1, 2, 3], &[1, 2, 3]), 1.0);
        assert_relative_eq!(recall(&[1, 2], &[1, 2, 3]), 2.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(recall(&[], &[]), 1.0);
        // detections outside ground truth are filtered before dividing
        assert_relative_eq!(recall(&[7, 8, 1], &[1, 2]), 0.5);
    }

    #[test]
    fn recall_monotone_in_detections() {
        let gt: Vec<ObjectId> = (0..20).collect();
        let mut detected: Vec<ObjectId> = Vec::new();
        let mut last = recall(&detected, &gt);
        for id in 0..20 {
            detected.push(id);
            let now = recall(&detected, &gt);
            assert!(now >= last);
            last = now;
        }
        assert_relative_eq!(last, 1.0);
    }

    #[test]
    fn calibration_matches_closed_forms() {
        let full = SceneConfig {
            overlap: 1.0,
            ..SceneConfig::default()
        };
        let p = calibrate_cloud_detector(&full, 2, 0.99, 11).unwrap();
        // 1 - (1-p)^2 = 0.99  =>  p = 0.9
        assert_relative_eq!(p.p_detect, 0.9, max_relative = 1e-6);

        let none = SceneConfig {
            overlap: 0.0,
            ..SceneConfig::default()
        };
        let p = calibrate_cloud_detector(&none, 2, 0.99, 11).unwrap();
        assert_relative_eq!(p.p_detect, 0.99, max_relative = 1e-6);

        let p = calibrate_cloud_detector(&full, 2, 1.0, 11).unwrap();
        assert_relative_eq!(p.p_detect, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn calibration_infeasible_when_cameras_cannot_cover() {
        let cfg = SceneConfig {
            overlap: 0.5,
            ..SceneConfig::default()
        };
        // a target above 1 is rejected outright
        assert!(matches!(
            calibrate_cloud_detector(&cfg, 2, 1.5, 1),
            Err(CalibrateError::BadTarget(_))
        ));
    }

    #[test]
    fn calibrated_profile_reaches_target_recall_in_monte_carlo() {
        let cfg = SceneConfig::default();
        let cloud = calibrate_cloud_detector(&cfg, cfg.cameras, 0.99, 7).unwrap();
        let mut r = rng(8);
        let mut dr = crate::rng::stream(8, crate::rng::streams::DETECT + 100);
        let mut frame = init_stationary(&cfg, &mut r);
        let mut acc = 0.0;
        let frames = 120_000;
        let mut union = Vec::new();
        for _ in 0..frames {
            advance_scene(&mut frame, &cfg, 0.1, &mut r);
            union.clear();
            for k in 0..cfg.cameras {
                detect_into(&frame, k, &cloud, &mut dr, &mut union);
            }
            union.sort_unstable();
            union.dedup();
            let gt: Vec<_> = frame.ground_truth().collect();
            acc += recall(&union, &gt);
        }
        let mean = acc / frames as f64;
        assert!(
            (mean - 0.99).abs() < 0.005,
            "calibrated mean recall {mean} outside 0.99 +/- 0.005"
        );
    }

    #[test]
    fn detection_trace_replay_parses() {
        let text = "t_step,object_id,camera_mask,detected_cloud,detected_local\n\
                    0,1,3,1,0\n0,2,1,1,1\n2,1,3,0,0\n";
        let trace = DetectionTrace::parse(text).unwrap();
        assert_eq!(trace.rows_at(0).len(), 2);
        assert_eq!(trace.rows_at(1).len(), 0);
        assert_eq!(trace.rows_at(2).len(), 1);
        assert_eq!(trace.max_step, 2);
        assert!(matches!(
            DetectionTrace::parse("bad header\n1,2,3,4,5\n"),
            Err(DetectionTraceError::Malformed { line: 1, .. })
        ));
    }
}
