//! Gaussian-process regression on harvesting current with a periodic plus
//! white-noise kernel, used to forecast harvestable energy a few hours out.
//!
//! The period is fixed at 24 h. Training data are bin means on a grid
//! aligned to absolute time; because the kernel depends only on the time
//! difference modulo the period, bins at the same time-of-day share one
//! latent value and are merged exactly: a group of m replicates enters the
//! model as its mean with noise sigma_n^2 / m, and the log marginal
//! likelihood keeps the within-group residual terms. This keeps the
//! factorization at one day's worth of points regardless of the fit span
//! (`gp_oracle` integration tests check equality against the dense form).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

pub const HOURS_PER_DAY: f64 = 24.0;

/// Kernel hyperparameters. `lengthscale` is the unitless scale inside the
/// periodic exponent; `period_h` stays fixed during fitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpHyperParams {
    pub signal_var: f64,
    pub lengthscale: f64,
    pub period_h: f64,
    pub noise_var: f64,
}

impl GpHyperParams {
    pub fn validate(&self) -> Result<(), GpError> {
        if !(self.signal_var > 0.0 && self.lengthscale > 0.0 && self.noise_var > 0.0) {
            return Err(GpError::BadHyperParams);
        }
        Ok(())
    }
}

/// Periodic kernel plus white noise on exact time coincidence:
/// `sigma_p^2 * exp(-2 sin^2(pi |t1-t2| / p) / l^2) + sigma_n^2 * [t1 == t2]`.
pub fn kernel(t1_h: f64, t2_h: f64, hp: &GpHyperParams) -> f64 {
    let s = (std::f64::consts::PI * (t1_h - t2_h).abs() / hp.period_h).sin();
    let k = hp.signal_var * (-2.0 * s * s / (hp.lengthscale * hp.lengthscale)).exp();
    if t1_h == t2_h {
        k + hp.noise_var
    } else {
        k
    }
}

/// Rolling-fit geometry: span of history used per fit, forecast horizon,
/// and the downsampling bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastWindow {
    pub fit_span_h: f64,
    pub horizon_h: f64,
    pub bin_minutes: f64,
}

impl Default for ForecastWindow {
    fn default() -> Self {
        Self {
            fit_span_h: 7.0 * 24.0,
            horizon_h: 6.0,
            bin_minutes: 10.0,
        }
    }
}

impl ForecastWindow {
    pub fn bin_hours(&self) -> f64 {
        self.bin_minutes / 60.0
    }

    pub fn validate(&self) -> Result<(), GpError> {
        if !(self.bin_minutes > 0.0) || self.fit_span_h < self.horizon_h {
            return Err(GpError::BadWindow);
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GpError {
    #[error("need at least 2 distinct-time samples")]
    TooFewSamples,
    #[error("invalid forecast window")]
    BadWindow,
    #[error("invalid hyperparameters")]
    BadHyperParams,
    #[error("kernel matrix factorization failed even with jitter 1e-4")]
    Factorization,
}

/// Fitted model with cached factorization.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub hp: GpHyperParams,
    pub mean_y: f64,
    pub lml: f64,
    pub jitter: f64,
    /// Group phase representatives in hours within [0, period).
    phases: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

struct Grouped {
    phases: Vec<f64>,
    ybar: Vec<f64>,
    counts: Vec<f64>,
    /// Within-group sum of squared residuals, pooled.
    ssw: f64,
    n_bins: usize,
    mean_y: f64,
    var_y: f64,
}

/// Bin-mean then group samples by time-of-day phase.
fn group_samples(samples: &[(f64, f64)], bin_h: f64, period_h: f64) -> Result<Grouped, GpError> {
    let mut distinct = false;
    for w in samples.windows(2) {
        if w[0].0 != w[1].0 {
            distinct = true;
            break;
        }
    }
    if samples.len() < 2 || !distinct {
        return Err(GpError::TooFewSamples);
    }
    // bin means on the absolute grid
    let mut bins: Vec<(i64, f64, f64)> = Vec::new(); // (bin index, sum, count)
    for &(t, y) in samples {
        let idx = (t / bin_h).floor() as i64;
        match bins.iter_mut().find(|(b, _, _)| *b == idx) {
            Some((_, s, c)) => {
                *s += y;
                *c += 1.0;
            }
            None => bins.push((idx, y, 1.0)),
        }
    }
    bins.sort_by_key(|(b, _, _)| *b);
    let bin_means: Vec<(i64, f64)> = bins.iter().map(|(b, s, c)| (*b, s / c)).collect();
    let n_bins = bin_means.len();
    let mean_y = bin_means.iter().map(|(_, y)| y).sum::<f64>() / n_bins as f64;
    let var_y = bin_means
        .iter()
        .map(|(_, y)| (y - mean_y) * (y - mean_y))
        .sum::<f64>()
        / n_bins as f64;

    // collapse equal-phase bins when the period is an integer number of bins
    let ratio = period_h / bin_h;
    let bins_per_period = ratio.round();
    let collapsible = (ratio - bins_per_period).abs() < 1e-9 && bins_per_period >= 1.0;
    let key_of = |bin_idx: i64| -> i64 {
        if collapsible {
            bin_idx.rem_euclid(bins_per_period as i64)
        } else {
            bin_idx
        }
    };
    let mut groups: Vec<(i64, Vec<f64>)> = Vec::new();
    for &(b, y) in &bin_means {
        let key = key_of(b);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, list)) => list.push(y - mean_y),
            None => groups.push((key, vec![y - mean_y])),
        }
    }
    groups.sort_by_key(|(k, _)| *k);
    let mut phases = Vec::with_capacity(groups.len());
    let mut ybar = Vec::with_capacity(groups.len());
    let mut counts = Vec::with_capacity(groups.len());
    let mut ssw = 0.0;
    for (key, list) in &groups {
        let m = list.len() as f64;
        let mean = list.iter().sum::<f64>() / m;
        ssw += list.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>();
        let center = (*key as f64 + 0.5) * bin_h;
        phases.push(if collapsible {
            center.rem_euclid(period_h)
        } else {
            center
        });
        ybar.push(mean);
        counts.push(m);
    }
    Ok(Grouped {
        phases,
        ybar,
        counts,
        ssw,
        n_bins,
        mean_y,
        var_y,
    })
}

/// Squared-sine phase distances, reused across hyperparameter evaluations.
fn sin2_matrix(phases: &[f64], period_h: f64) -> DMatrix<f64> {
    let g = phases.len();
    DMatrix::from_fn(g, g, |i, j| {
        let s = (std::f64::consts::PI * (phases[i] - phases[j]).abs() / period_h).sin();
        s * s
    })
}

fn build_cov(
    sin2: &DMatrix<f64>,
    counts: &[f64],
    hp: &GpHyperParams,
    jitter: f64,
) -> DMatrix<f64> {
    let g = counts.len();
    let inv_l2 = 1.0 / (hp.lengthscale * hp.lengthscale);
    let mut k = DMatrix::from_fn(g, g, |i, j| {
        hp.signal_var * (-2.0 * sin2[(i, j)] * inv_l2).exp()
    });
    for i in 0..g {
        k[(i, i)] += hp.noise_var / counts[i] + jitter;
    }
    k
}

/// Exact log marginal likelihood of the original (uncollapsed) bin means.
fn log_marginal(grouped: &Grouped, sin2: &DMatrix<f64>, hp: &GpHyperParams) -> Option<f64> {
    let g = grouped.phases.len();
    let cov = build_cov(sin2, &grouped.counts, hp, 0.0);
    let chol = Cholesky::new(cov)?;
    let ybar = DVector::from_column_slice(&grouped.ybar);
    let alpha = chol.solve(&ybar);
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    let mut lml = -0.5 * ybar.dot(&alpha) - 0.5 * g as f64 * ln2pi;
    for i in 0..g {
        lml -= chol.l_dirty()[(i, i)].ln();
    }
    // within-group residual terms restore the full-data likelihood
    let n = grouped.n_bins as f64;
    lml -= 0.5
        * ((n - g as f64) * (ln2pi + hp.noise_var.ln())
            + grouped.ssw / hp.noise_var
            + grouped.counts.iter().map(|&m| m.ln()).sum::<f64>());
    Some(lml)
}

/// Deterministic hyperparameter search: coarse log-grid scan, then
/// coordinate refinement around the best starts.
fn optimize_hyperparams(grouped: &Grouped, sin2: &DMatrix<f64>, period_h: f64) -> GpHyperParams {
    let v = grouped.var_y.max(1e-12);
    let sv_grid: Vec<f64> = [0.05, 0.3, 1.0, 3.0, 20.0].iter().map(|f| f * v).collect();
    let ls_grid = [0.2, 0.6, 1.5, 4.0, 10.0];
    let nv_grid: Vec<f64> = [1e-4, 1e-2, 0.1, 0.5, 1.0]
        .iter()
        .map(|f| (f * v).max(1e-10))
        .collect();
    let eval = |hp: &GpHyperParams| log_marginal(grouped, sin2, hp).unwrap_or(f64::NEG_INFINITY);

    let mut scored: Vec<(f64, GpHyperParams)> = Vec::new();
    for &sv in &sv_grid {
        for &ls in &ls_grid {
            for &nv in &nv_grid {
                let hp = GpHyperParams {
                    signal_var: sv,
                    lengthscale: ls,
                    period_h,
                    noise_var: nv,
                };
                scored.push((eval(&hp), hp));
            }
        }
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let starts: Vec<GpHyperParams> = scored.iter().take(3).map(|(_, hp)| *hp).collect();

    let factors = [0.25, 0.5, 1.0 / std::f64::consts::SQRT_2, 1.0, std::f64::consts::SQRT_2, 2.0, 4.0];
    let mut best = (scored[0].0, scored[0].1);
    for start in starts {
        let mut hp = start;
        let mut score = eval(&hp);
        for _round in 0..3 {
            for param in 0..3 {
                let current = match param {
                    0 => hp.signal_var,
                    1 => hp.lengthscale,
                    _ => hp.noise_var,
                };
                let mut local_best = (score, current);
                for &f in &factors {
                    let cand = (current * f).max(1e-10);
                    let mut trial = hp;
                    match param {
                        0 => trial.signal_var = cand,
                        1 => trial.lengthscale = cand,
                        _ => trial.noise_var = cand,
                    }
                    let s = eval(&trial);
                    if s > local_best.0 {
                        local_best = (s, cand);
                    }
                }
                match param {
                    0 => hp.signal_var = local_best.1,
                    1 => hp.lengthscale = local_best.1,
                    _ => hp.noise_var = local_best.1,
                }
                score = local_best.0;
            }
        }
        if score > best.0 {
            best = (score, hp);
        }
    }
    best.1
}

/// Fits the model on `(hours, amperes)` samples: bin means, centered
/// targets, marginal-likelihood hyperparameter search, cached factorization.
/// Deterministic.
pub fn fit(samples: &[(f64, f64)], window: &ForecastWindow) -> Result<GpModel, GpError> {
    window.validate()?;
    let grouped = group_samples(samples, window.bin_hours(), HOURS_PER_DAY)?;
    let sin2 = sin2_matrix(&grouped.phases, HOURS_PER_DAY);
    let hp = optimize_hyperparams(&grouped, &sin2, HOURS_PER_DAY);
    finalize(grouped, &sin2, hp)
}

/// Fits with fixed hyperparameters (no likelihood search).
pub fn fit_with_hyperparams(
    samples: &[(f64, f64)],
    window: &ForecastWindow,
    hp: GpHyperParams,
) -> Result<GpModel, GpError> {
    window.validate()?;
    hp.validate()?;
    let grouped = group_samples(samples, window.bin_hours(), HOURS_PER_DAY)?;
    let sin2 = sin2_matrix(&grouped.phases, HOURS_PER_DAY);
    finalize(grouped, &sin2, hp)
}

/// Log marginal likelihood of the binned data under `hp`.
pub fn marginal_likelihood(
    samples: &[(f64, f64)],
    window: &ForecastWindow,
    hp: &GpHyperParams,
) -> Result<f64, GpError> {
    window.validate()?;
    hp.validate()?;
    let grouped = group_samples(samples, window.bin_hours(), HOURS_PER_DAY)?;
    let sin2 = sin2_matrix(&grouped.phases, HOURS_PER_DAY);
    log_marginal(&grouped, &sin2, hp).ok_or(GpError::Factorization)
}

fn finalize(grouped: Grouped, sin2: &DMatrix<f64>, hp: GpHyperParams) -> Result<GpModel, GpError> {
    // cache the factorization, escalating jitter on failure
    let mut jitter = 0.0;
    let chol = loop {
        match Cholesky::new(build_cov(sin2, &grouped.counts, &hp, jitter)) {
            Some(c) => break c,
            None => {
                jitter = if jitter == 0.0 { 1e-8 } else { jitter * 10.0 };
                if jitter > 1e-4 {
                    return Err(GpError::Factorization);
                }
            }
        }
    };
    let ybar = DVector::from_column_slice(&grouped.ybar);
    let alpha = chol.solve(&ybar);
    let lml = log_marginal(&grouped, sin2, &hp).unwrap_or(f64::NEG_INFINITY);
    Ok(GpModel {
        hp,
        mean_y: grouped.mean_y,
        lml,
        jitter,
        phases: grouped.phases,
        chol,
        alpha,
    })
}

/// Fits on the trailing `window.fit_span_h` hours of a sample stream.
pub fn fit_trailing(
    samples: &[(f64, f64)],
    now_h: f64,
    window: &ForecastWindow,
) -> Result<GpModel, GpError> {
    let lo = now_h - window.fit_span_h;
    let slice: Vec<(f64, f64)> = samples
        .iter()
        .copied()
        .filter(|&(t, _)| t >= lo && t <= now_h)
        .collect();
    fit(&slice, window)
}

impl GpModel {
    fn k_star(&self, t_h: f64) -> DVector<f64> {
        let inv_l2 = 1.0 / (self.hp.lengthscale * self.hp.lengthscale);
        DVector::from_fn(self.phases.len(), |i, _| {
            let s = (std::f64::consts::PI * (t_h - self.phases[i]).abs() / self.hp.period_h).sin();
            self.hp.signal_var * (-2.0 * s * s * inv_l2).exp()
        })
    }

    /// Posterior mean/variance of a new observation at one time.
    pub fn predict_one(&self, t_h: f64) -> (f64, f64) {
        let k = self.k_star(t_h);
        let mean = self.mean_y + k.dot(&self.alpha);
        let mut v = k;
        self.chol.solve_mut(&mut v);
        // v now holds (K+D)^-1 k*; variance via quadratic form
        let var_f = (self.hp.signal_var - self.k_star(t_h).dot(&v)).max(0.0);
        (mean, var_f + self.hp.noise_var)
    }

    pub fn group_count(&self) -> usize {
        self.phases.len()
    }
}

/// Posterior means and variances at the query times.
pub fn predict(model: &GpModel, query_h: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut means = Vec::with_capacity(query_h.len());
    let mut vars = Vec::with_capacity(query_h.len());
    for &t in query_h {
        let (m, v) = model.predict_one(t);
        means.push(m);
        vars.push(v);
    }
    (means, vars)
}

/// Integrates predicted current (clamped at zero) times voltage and
/// efficiency over `[now, now + horizon]` by trapezoid on the bin grid.
/// Returns joules.
pub fn forecast_energy_j(
    model: &GpModel,
    now_h: f64,
    horizon_h: f64,
    bin_h: f64,
    eta: f64,
    voltage_v: f64,
) -> f64 {
    debug_assert!(horizon_h > 0.0 && bin_h > 0.0);
    let start = (now_h / bin_h).floor() * bin_h;
    let steps = (horizon_h / bin_h).ceil() as usize;
    let mut ts = Vec::with_capacity(steps + 1);
    for i in 0..=steps {
        ts.push((start + i as f64 * bin_h).min(start + horizon_h));
    }
    let mut integral_ah = 0.0; // ampere-hours
    let mut prev: Option<(f64, f64)> = None;
    for &t in &ts {
        let (mean, _) = model.predict_one(t);
        let i = mean.max(0.0);
        if let Some((pt, pi)) = prev {
            integral_ah += 0.5 * (pi + i) * (t - pt);
        }
        prev = Some((t, i));
    }
    integral_ah * 3600.0 * voltage_v * eta
}

/// Forecast feature for the agent state: predicted harvest over the horizon
/// normalized by the configured maximum, clamped to [0, 1].
pub fn forecast_feature(
    model: &GpModel,
    now_h: f64,
    window: &ForecastWindow,
    eta: f64,
    voltage_v: f64,
    max_horizon_j: f64,
) -> f64 {
    debug_assert!(max_horizon_j > 0.0);
    let e = forecast_energy_j(model, now_h, window.horizon_h, window.bin_hours(), eta, voltage_v);
    (e / max_horizon_j).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn hp(sv: f64, ls: f64, nv: f64) -> GpHyperParams {
        GpHyperParams {
            signal_var: sv,
            lengthscale: ls,
            period_h: 24.0,
            noise_var: nv,
        }
    }

    fn diurnal_samples(days: usize, step_h: f64) -> Vec<(f64, f64)> {
        let n = (days as f64 * 24.0 / step_h) as usize;
        (0..n)
            .map(|i| {
                // sample at bin centers so bin means sit at their own phase
                let t = (i as f64 + 0.5) * step_h;
                (t, (2.0 * std::f64::consts::PI * t / 24.0).sin())
            })
            .collect()
    }

    #[test]
    fn kernel_closed_forms() {
        let h = hp(1.5, 0.8, 0.25);
        assert_relative_eq!(kernel(5.0, 5.0, &h), 1.5 + 0.25, max_relative = 1e-12);
        // one full period apart: back to signal variance, no noise spike
        assert_relative_eq!(kernel(1.0, 25.0, &h), 1.5, max_relative = 1e-9);
        let unit = hp(1.0, 1.0, 0.0001);
        assert_relative_eq!(
            kernel(0.0, 12.0, &unit),
            (-2.0f64).exp(),
            max_relative = 1e-9
        );
    }

    #[test]
    fn kernel_is_symmetric() {
        let h = hp(2.0, 0.7, 0.1);
        for i in 0..20 {
            for j in 0..20 {
                let (a, b) = (i as f64 * 1.7, j as f64 * 2.3);
                assert_eq!(kernel(a, b, &h), kernel(b, a, &h));
            }
        }
    }

    #[test]
    fn fit_recovers_periodic_signal_at_training_points() {
        let samples = diurnal_samples(7, 1.0);
        let window = ForecastWindow {
            bin_minutes: 60.0,
            ..ForecastWindow::default()
        };
        let model = fit(&samples, &window).unwrap();
        for &(t, y) in samples.iter().step_by(7) {
            let (mean, _) = model.predict_one(t);
            assert!(
                (mean - y).abs() < 1e-2,
                "t={t}: mean {mean} vs target {y}"
            );
        }
    }

    #[test]
    fn all_zero_targets_give_zero_mean() {
        let samples: Vec<(f64, f64)> = (0..100).map(|i| (i as f64 * 0.5, 0.0)).collect();
        let model = fit(&samples, &ForecastWindow::default()).unwrap();
        for t in [0.0, 3.0, 11.5, 23.9] {
            let (mean, _) = model.predict_one(t);
            assert_relative_eq!(mean, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let samples = diurnal_samples(7, 0.25);
        let a = fit(&samples, &ForecastWindow::default()).unwrap();
        let b = fit(&samples, &ForecastWindow::default()).unwrap();
        assert_eq!(a.hp, b.hp);
        assert_eq!(a.mean_y, b.mean_y);
    }

    #[test]
    fn too_few_samples_is_an_error() {
        assert!(matches!(
            fit(&[(0.0, 1.0)], &ForecastWindow::default()),
            Err(GpError::TooFewSamples)
        ));
        let same_time = [(1.0, 0.5), (1.0, 0.7)];
        assert!(matches!(
            fit(&same_time, &ForecastWindow::default()),
            Err(GpError::TooFewSamples)
        ));
    }

    #[test]
    fn posterior_variance_bounded_by_prior() {
        let samples = diurnal_samples(7, 0.5);
        let model = fit(&samples, &ForecastWindow::default()).unwrap();
        let prior = model.hp.signal_var + model.hp.noise_var;
        for i in 0..200 {
            let t = i as f64 * 0.37;
            let (_, var) = model.predict_one(t);
            assert!(var >= 0.0);
            assert!(var <= prior + 1e-8, "var {var} above prior {prior}");
        }
    }

    #[test]
    fn shrinkage_pulls_mean_toward_targets() {
        let samples = diurnal_samples(7, 1.0);
        let model = fit(&samples, &ForecastWindow::default()).unwrap();
        // at a training phase, |posterior - target| <= |prior mean - target|
        let t = 6.0 + 0.5 / 6.0; // inside a bin
        let target = (2.0 * std::f64::consts::PI * t / 24.0).sin();
        let (mean, _) = model.predict_one(t);
        assert!((mean - target).abs() <= (model.mean_y - target).abs() + 1e-9);
    }

    #[test]
    fn predictions_are_periodic() {
        let samples = diurnal_samples(7, 0.5);
        let model = fit(&samples, &ForecastWindow::default()).unwrap();
        for i in 0..50 {
            let t = i as f64 * 0.7;
            let (a, _) = model.predict_one(t);
            let (b, _) = model.predict_one(t + 24.0);
            assert!((a - b).abs() < 1e-6, "t={t}: {a} vs {b}");
        }
    }

    #[test]
    fn tiny_lengthscale_reverts_to_prior_away_from_data() {
        // data only at phase 0..1 h, queried at phase 12 h with tiny lengthscale
        let mut samples = Vec::new();
        for d in 0..7 {
            for k in 0..4 {
                let t = d as f64 * 24.0 + k as f64 * 0.25;
                samples.push((t, 3.0));
            }
        }
        let model = fit(&samples, &ForecastWindow::default()).unwrap();
        let mut hp = model.hp;
        hp.lengthscale = 0.01;
        // rebuild with forced tiny lengthscale via raw kernel check instead:
        // correlation at 12 h lag is essentially zero
        let far = kernel(0.0, 12.0, &hp) / hp.signal_var;
        assert!(far < 1e-30);
    }

    #[test]
    fn forecast_feature_values() {
        // constant current 0.5 A: integral over 6 h at eta 0.8, 6.1 V
        let samples: Vec<(f64, f64)> = (0..2000).map(|i| (i as f64 * 0.1, 0.5)).collect();
        let window = ForecastWindow::default();
        let model = fit(&samples, &window).unwrap();
        let e = forecast_energy_j(&model, 50.0, 6.0, window.bin_hours(), 0.8, 6.1);
        assert_relative_eq!(e, 52_704.0, max_relative = 1e-2);
        let max = 100_000.0;
        let f = forecast_feature(&model, 50.0, &window, 0.8, 6.1, max);
        assert_relative_eq!(f, e / max, max_relative = 1e-12);
        // normalization ceiling clamps at 1
        let f1 = forecast_feature(&model, 50.0, &window, 0.8, 6.1, 1.0);
        assert_eq!(f1, 1.0);
        // zero-mean model clamps at 0
        let zeros: Vec<(f64, f64)> = (0..2000).map(|i| (i as f64 * 0.1, 0.0)).collect();
        let zmodel = fit(&zeros, &window).unwrap();
        assert_eq!(forecast_feature(&zmodel, 50.0, &window, 0.8, 6.1, max), 0.0);
    }
}
