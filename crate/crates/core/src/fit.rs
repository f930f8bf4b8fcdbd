//! Recovering the VR model constants from traces.
//!
//! Per group of frames recorded at one (target rate, frame rate):
//!
//! - the inter-frame intervals are fitted with a logistic by moment matching;
//! - the frame sizes are fitted with a two-component Gaussian mixture by EM,
//!   restarted from random initial conditions, keeping the best likelihood.
//!
//! Across groups, the component means are regressed through the origin on
//! the empirical mean frame size `S`, and the component standard deviations
//! are fitted with power laws of `S`. Both regressions weight each group by
//! the goodness of its mixture fit (or uniformly, on request).
//!
//! Sample standard deviations use the `n - 1` denominator throughout.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::generator::TraceFile;
use crate::model::{derive_weights, VrModelConstants};
use crate::rv::{Gmm2Params, LogisticParams, RngStream};
use crate::{Error, Result};

pub use crate::model::derive_weights as derive_mixture_weights;

fn mean_and_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Logistic with the sample mean as location and `std * sqrt(3) / PI` as scale.
pub fn fit_logistic(samples: &[f64]) -> Result<LogisticParams> {
    if samples.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "logistic fit needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let (mean, std) = mean_and_std(samples);
    LogisticParams::from_mean_std(mean, std)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub restarts: usize,
    pub max_iter: usize,
    /// Convergence threshold on the improvement of the mean per-sample
    /// log-likelihood between iterations.
    pub tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            restarts: 50,
            max_iter: 500,
            tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Gmm2Fit {
    pub params: Gmm2Params,
    /// Total log-likelihood of the samples under `params`.
    pub log_likelihood: f64,
    pub n_iterations: usize,
    pub converged: bool,
    pub best_restart: usize,
    /// Per restart, the mean per-sample log-likelihood (of standardized
    /// data) after each iteration.
    #[serde(skip)]
    pub restart_histories: Vec<Vec<f64>>,
}

impl Gmm2Fit {
    pub fn mean_log_likelihood(&self, n: usize) -> f64 {
        self.log_likelihood / n as f64
    }
}

#[derive(Clone, Copy, Debug)]
struct Comp {
    w: f64,
    mu: f64,
    sigma: f64,
}

struct EmRun {
    comps: [Comp; 2],
    mean_ll: f64,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
}

struct Moments {
    mean_ll: f64,
    resp: [f64; 2],
    sum_x: [f64; 2],
    sum_xx: [f64; 2],
}

/// E-step: the mean log-likelihood (without the `ln sqrt(2 PI)` constant)
/// and the responsibility-weighted moments.
fn e_step(xs: &[f64], c: &[Comp; 2]) -> Moments {
    let log_norm = c.map(|k| k.w.ln() - k.sigma.ln());
    let inv_sigma = c.map(|k| 1.0 / k.sigma);
    let mut m = Moments {
        mean_ll: 0.0,
        resp: [0.0; 2],
        sum_x: [0.0; 2],
        sum_xx: [0.0; 2],
    };
    let mut ll = 0.0;
    // Each factor (1 + e) lies in [1, 2], so a chunk of 64 cannot overflow
    // and one ln() per chunk replaces one per sample.
    for chunk in xs.chunks(64) {
        let mut prod = 1.0;
        for &x in chunk {
            let za = (x - c[0].mu) * inv_sigma[0];
            let zb = (x - c[1].mu) * inv_sigma[1];
            let la = log_norm[0] - 0.5 * za * za;
            let lb = log_norm[1] - 0.5 * zb * zb;
            let a_wins = la >= lb;
            let (hi, d) = if a_wins { (la, lb - la) } else { (lb, la - lb) };
            let e = d.exp();
            ll += hi;
            prod *= 1.0 + e;
            let r_hi = 1.0 / (1.0 + e);
            let ra = if a_wins { r_hi } else { 1.0 - r_hi };
            let rb = 1.0 - ra;
            m.resp[0] += ra;
            m.resp[1] += rb;
            m.sum_x[0] += ra * x;
            m.sum_x[1] += rb * x;
            m.sum_xx[0] += ra * x * x;
            m.sum_xx[1] += rb * x * x;
        }
        ll += prod.ln();
    }
    m.mean_ll = ll / xs.len() as f64;
    m
}

fn m_step(m: &Moments, n: usize, prev: &[Comp; 2], sigma_floor: f64) -> [Comp; 2] {
    let mut out = *prev;
    for k in 0..2 {
        if m.resp[k] <= 1e-12 * n as f64 {
            // Starved component: keep its shape, let its weight vanish.
            out[k].w = m.resp[k] / n as f64;
            continue;
        }
        let mu = m.sum_x[k] / m.resp[k];
        let var = (m.sum_xx[k] / m.resp[k] - mu * mu).max(0.0);
        out[k] = Comp {
            w: m.resp[k] / n as f64,
            mu,
            sigma: var.sqrt().max(sigma_floor),
        };
    }
    out
}

fn run_em(xs: &[f64], init: [Comp; 2], cfg: &EmConfig, sigma_floor: f64) -> EmRun {
    let mut comps = init;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut stats = e_step(xs, &comps);
    history.push(stats.mean_ll);
    while iterations < cfg.max_iter {
        comps = m_step(&stats, xs.len(), &comps, sigma_floor);
        iterations += 1;
        let prev = stats.mean_ll;
        stats = e_step(xs, &comps);
        history.push(stats.mean_ll);
        if stats.mean_ll - prev < cfg.tol {
            converged = true;
            break;
        }
    }
    EmRun {
        comps,
        mean_ll: stats.mean_ll,
        iterations,
        converged,
        history,
    }
}

/// Fits a two-component univariate Gaussian mixture by EM.
///
/// Each restart initialises the means at two distinct randomly chosen
/// samples, both standard deviations at the sample standard deviation and
/// equal weights. Standard deviations are floored at `1e-6` of the sample
/// standard deviation. The restart with the highest likelihood wins (the
/// lowest index on ties). The component with the larger mean is reported
/// as the "hi" component.
pub fn fit_gmm2_em(samples: &[f64], cfg: &EmConfig, rng: &mut RngStream) -> Result<Gmm2Fit> {
    if samples.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "mixture fit needs at least 10 samples, got {}",
            samples.len()
        )));
    }
    if cfg.restarts == 0 {
        return Err(Error::InvalidParameter(
            "at least one EM restart is required".into(),
        ));
    }
    let (mean, std) = mean_and_std(samples);
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::DegenerateModel(
            "samples have zero variance; a mixture is not identifiable".into(),
        ));
    }
    // Work on standardized data so the moment sums stay well conditioned.
    let xs: Vec<f64> = samples.iter().map(|x| (x - mean) / std).collect();
    let n = xs.len();

    let mut best: Option<(usize, EmRun)> = None;
    let mut histories = Vec::with_capacity(cfg.restarts);
    for restart in 0..cfg.restarts {
        let i = (rng.next_u64() % n as u64) as usize;
        let mut j = i;
        for _ in 0..64 {
            j = (rng.next_u64() % n as u64) as usize;
            if xs[j] != xs[i] {
                break;
            }
        }
        let init = [
            Comp {
                w: 0.5,
                mu: xs[i],
                sigma: 1.0,
            },
            Comp {
                w: 0.5,
                mu: xs[j],
                sigma: 1.0,
            },
        ];
        let run = run_em(&xs, init, cfg, 1e-6);
        histories.push(run.history.clone());
        if best.as_ref().is_none_or(|(_, b)| run.mean_ll > b.mean_ll) {
            best = Some((restart, run));
        }
    }
    let (best_restart, run) = best.expect("at least one restart");

    let [a, b] = run.comps.map(|c| Comp {
        w: c.w,
        mu: mean + std * c.mu,
        sigma: std * c.sigma,
    });
    let (hi, lo) = if a.mu >= b.mu { (a, b) } else { (b, a) };
    let params = Gmm2Params {
        w_hi: hi.w / (hi.w + lo.w),
        mu_hi: hi.mu,
        sigma_hi: hi.sigma,
        mu_lo: lo.mu,
        sigma_lo: lo.sigma,
    };
    let log_likelihood = n as f64 * (run.mean_ll - std.ln() - 0.5 * (2.0 * PI).ln());
    Ok(Gmm2Fit {
        params,
        log_likelihood,
        n_iterations: run.iterations,
        converged: run.converged,
        best_restart,
        restart_histories: histories,
    })
}

fn check_weights(n: usize, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    match weights {
        None => Ok(vec![1.0; n]),
        Some(w) if w.len() == n && w.iter().all(|&v| v >= 0.0 && v.is_finite()) => Ok(w.to_vec()),
        Some(w) => Err(Error::InvalidParameter(format!(
            "{} weights for {n} points, or a negative weight",
            w.len()
        ))),
    }
}

/// Weighted least squares of `y = slope * x`.
pub fn fit_linear_through_origin(points: &[(f64, f64)], weights: Option<&[f64]>) -> Result<f64> {
    let w = check_weights(points.len(), weights)?;
    let sxx: f64 = points.iter().zip(&w).map(|(&(x, _), w)| w * x * x).sum();
    if points.is_empty() || sxx == 0.0 {
        return Err(Error::InsufficientData(
            "through-origin fit needs a point with non-zero abscissa".into(),
        ));
    }
    let sxy: f64 = points.iter().zip(&w).map(|(&(x, y), w)| w * x * y).sum();
    Ok(sxy / sxx)
}

pub fn fit_power_law(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    fit_power_law_weighted(points, None)
}

/// Weighted least squares of `ln y = ln a + b ln x`; returns `(a, b)`.
pub fn fit_power_law_weighted(
    points: &[(f64, f64)],
    weights: Option<&[f64]>,
) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(Error::InsufficientData(
            "power-law fit needs at least 2 points".into(),
        ));
    }
    if let Some(&(x, y)) = points.iter().find(|&&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "power-law fit needs positive coordinates, got ({x}, {y})"
        )));
    }
    let w = check_weights(points.len(), weights)?;
    let sw: f64 = w.iter().sum();
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let mx = logs.iter().zip(&w).map(|((lx, _), w)| w * lx).sum::<f64>() / sw;
    let my = logs.iter().zip(&w).map(|((_, ly), w)| w * ly).sum::<f64>() / sw;
    let sxx: f64 = logs
        .iter()
        .zip(&w)
        .map(|((lx, _), w)| w * (lx - mx).powi(2))
        .sum();
    let sxy: f64 = logs
        .iter()
        .zip(&w)
        .map(|((lx, ly), w)| w * (lx - mx) * (ly - my))
        .sum();
    if sxx <= 1e-12 * sw {
        return Err(Error::InsufficientData(
            "power-law fit needs at least two distinct abscissae".into(),
        ));
    }
    let b = sxy / sxx;
    Ok(((my - b * mx).exp(), b))
}

/// Frames recorded at one stream configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceGroup {
    pub frame_rate: f64,
    pub target_rate_bps: Option<f64>,
    /// Frame sizes, bytes.
    pub sizes: Vec<f64>,
    /// Inter-frame intervals, seconds.
    pub periods_s: Vec<f64>,
}

impl TraceGroup {
    /// Builds a group from a trace. The frame rate comes from the `fps`
    /// metadata key when present, otherwise from the mean period.
    pub fn from_trace(trace: &TraceFile) -> Self {
        let sizes: Vec<f64> = trace.records.iter().map(|r| r.burst_size as f64).collect();
        let periods_s: Vec<f64> = trace
            .records
            .iter()
            .map(|r| r.next_period_ns as f64 / 1e9)
            .collect();
        let frame_rate = trace
            .metadata_f64("fps")
            .unwrap_or_else(|| periods_s.len() as f64 / periods_s.iter().sum::<f64>());
        Self {
            frame_rate,
            target_rate_bps: trace.metadata_f64("target_rate_mbps").map(|m| m * 1e6),
            sizes,
            periods_s,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupWeighting {
    /// Weight proportional to the per-sample geometric-mean likelihood of the
    /// group's mixture fit on scale-normalized data.
    #[default]
    Goodness,
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub em: EmConfig,
    pub weighting: GroupWeighting,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            em: EmConfig::default(),
            weighting: GroupWeighting::Goodness,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupFit {
    pub frame_rate: f64,
    pub target_rate_bps: Option<f64>,
    pub n_frames: usize,
    /// Empirical mean frame size, bytes.
    pub mean_size: f64,
    pub ifi: LogisticParams,
    pub ifi_std_s: f64,
    pub gmm: Gmm2Fit,
    /// Mean log-likelihood plus the log of the sample standard deviation.
    pub goodness: f64,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitReport {
    pub groups: Vec<GroupFit>,
    pub constants: VrModelConstants,
    pub weighting: GroupWeighting,
    /// `(w_I, w_P)` implied by the fitted slopes, when they are admissible.
    pub mixture_weights: Option<(f64, f64)>,
    /// False when the slopes violate `s_P <= 1 <= s_I`.
    pub valid: bool,
}

pub fn fit_vr_model(groups: &[TraceGroup], opts: &FitOptions) -> Result<FitReport> {
    if groups.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 groups, got {}",
            groups.len()
        )));
    }
    let mut fits = Vec::with_capacity(groups.len());
    for (i, g) in groups.iter().enumerate() {
        if !(g.frame_rate > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "group {i}: frame rate {}",
                g.frame_rate
            )));
        }
        let ifi = fit_logistic(&g.periods_s)?;
        let (mean_size, size_std) = mean_and_std(&g.sizes);
        let mut rng = RngStream::new(opts.seed, i as u64);
        let gmm = fit_gmm2_em(&g.sizes, &opts.em, &mut rng)?;
        let goodness = gmm.mean_log_likelihood(g.sizes.len()) + size_std.ln();
        fits.push(GroupFit {
            frame_rate: g.frame_rate,
            target_rate_bps: g.target_rate_bps,
            n_frames: g.sizes.len(),
            mean_size,
            ifi_std_s: ifi.std(),
            ifi,
            gmm,
            goodness,
            weight: 0.0,
        });
    }

    let first = fits[0].mean_size;
    if fits.iter().all(|f| f.mean_size == first) {
        return Err(Error::InsufficientData(
            "all groups share one mean frame size; the power laws are not identifiable".into(),
        ));
    }

    let raw: Vec<f64> = match opts.weighting {
        GroupWeighting::Uniform => vec![1.0; fits.len()],
        GroupWeighting::Goodness => {
            let top = fits
                .iter()
                .map(|f| f.goodness)
                .fold(f64::NEG_INFINITY, f64::max);
            fits.iter().map(|f| (f.goodness - top).exp()).collect()
        }
    };
    let total: f64 = raw.iter().sum();
    for (f, w) in fits.iter_mut().zip(&raw) {
        f.weight = w / total;
    }
    let weights: Vec<f64> = fits.iter().map(|f| f.weight).collect();

    let pts = |sel: fn(&Gmm2Params) -> f64| -> Vec<(f64, f64)> {
        fits.iter()
            .map(|f| (f.mean_size, sel(&f.gmm.params)))
            .collect()
    };
    let s_i = fit_linear_through_origin(&pts(|p| p.mu_hi), Some(&weights))?;
    let s_p = fit_linear_through_origin(&pts(|p| p.mu_lo), Some(&weights))?;
    let (a_i, b_i) = fit_power_law_weighted(&pts(|p| p.sigma_hi), Some(&weights))?;
    let (a_p, b_p) = fit_power_law_weighted(&pts(|p| p.sigma_lo), Some(&weights))?;
    let c = fits.iter().map(|f| f.ifi_std_s * f.frame_rate).sum::<f64>() / fits.len() as f64;

    let mixture_weights = derive_weights(s_i, s_p).ok();
    Ok(FitReport {
        groups: fits,
        constants: VrModelConstants {
            c,
            s_i,
            s_p,
            a_i,
            b_i,
            a_p,
            b_p,
        },
        weighting: opts.weighting,
        valid: mixture_weights.is_some(),
        mixture_weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rv::gmm2_sample;

    #[test]
    fn logistic_moment_matching() {
        let p = fit_logistic(&[0.0333; 5]).unwrap();
        assert_eq!((p.mu, p.s), (0.0333, 0.0));

        let p = fit_logistic(&[0.0, 2.0]).unwrap();
        assert_eq!(p.mu, 1.0);
        assert!((p.s - 2f64.sqrt() * 3f64.sqrt() / PI).abs() < 1e-15);

        assert!(matches!(
            fit_logistic(&[1.0]),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn logistic_round_trip() {
        let truth = LogisticParams::new(1.0 / 30.0, 0.0015).unwrap();
        let mut rng = RngStream::new(21, 0);
        let xs: Vec<f64> = (0..1_000_000)
            .map(|_| crate::rv::logistic_sample(&truth, &mut rng))
            .collect();
        let p = fit_logistic(&xs).unwrap();
        assert!((p.mu / truth.mu - 1.0).abs() < 0.005);
        assert!((p.s / truth.s - 1.0).abs() < 0.02);
    }

    #[test]
    fn linear_through_origin() {
        let pts: Vec<(f64, f64)> = (1..=10)
            .map(|i| (i as f64 * 1e4, 1.1764 * i as f64 * 1e4))
            .collect();
        let s = fit_linear_through_origin(&pts, None).unwrap();
        assert!((s / 1.1764 - 1.0).abs() < 1e-12);
        assert_eq!(fit_linear_through_origin(&[(2.0, 3.0)], None).unwrap(), 1.5);
        assert!(fit_linear_through_origin(&[(0.0, 3.0), (0.0, 1.0)], None).is_err());
        assert!(fit_linear_through_origin(&[], None).is_err());
        // weights pull the slope toward the heavier point
        let s = fit_linear_through_origin(&[(1.0, 1.0), (1.0, 2.0)], Some(&[3.0, 1.0])).unwrap();
        assert_eq!(s, 1.25);
    }

    #[test]
    fn power_law_exact() {
        let pts: Vec<(f64, f64)> = [2e4, 4e4, 8e4, 1.2e5, 2e5]
            .iter()
            .map(|&x: &f64| (x, 9.0399 * x.powf(0.6251)))
            .collect();
        let (a, b) = fit_power_law(&pts).unwrap();
        assert!((a / 9.0399 - 1.0).abs() < 1e-9 && (b / 0.6251 - 1.0).abs() < 1e-9);

        let (a, b) = fit_power_law(&[(1.0, 7.0), (10.0, 7.0), (100.0, 7.0)]).unwrap();
        assert!((a - 7.0).abs() < 1e-12 && b.abs() < 1e-12);

        assert!(matches!(
            fit_power_law(&[(1.0, 0.0), (2.0, 1.0)]),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            fit_power_law(&[(5.0, 1.0), (5.0, 2.0)]),
            Err(Error::InsufficientData(_))
        ));
        assert!(fit_power_law(&[(5.0, 1.0)]).is_err());
    }

    #[test]
    fn em_recovers_separated_mixture() {
        let truth = Gmm2Params::new(0.36, 100_000.0, 8000.0, 50_000.0, 5000.0).unwrap();
        let mut rng = RngStream::new(31, 0);
        let xs: Vec<f64> = (0..20_000).map(|_| gmm2_sample(&truth, &mut rng)).collect();
        let cfg = EmConfig {
            restarts: 5,
            ..Default::default()
        };
        let fit = fit_gmm2_em(&xs, &cfg, &mut RngStream::new(31, 1)).unwrap();
        let p = fit.params;
        assert!((p.mu_hi / 100_000.0 - 1.0).abs() < 0.02);
        assert!((p.mu_lo / 50_000.0 - 1.0).abs() < 0.02);
        assert!((p.w_hi - 0.36).abs() < 0.02);
        assert!(p.mu_hi >= p.mu_lo);
        assert!(fit.converged);
        for h in &fit.restart_histories {
            for w in h.windows(2) {
                assert!(w[1] >= w[0] - 1e-12, "{} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn em_on_single_normal_keeps_mean() {
        let mut rng = RngStream::new(41, 0);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.normal(1000.0, 50.0)).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let cfg = EmConfig {
            restarts: 3,
            ..Default::default()
        };
        let fit = fit_gmm2_em(&xs, &cfg, &mut RngStream::new(41, 1)).unwrap();
        assert!((fit.params.mean() / m - 1.0).abs() < 0.01);
    }

    #[test]
    fn em_rejects_degenerate_input() {
        let mut rng = RngStream::new(0, 0);
        let cfg = EmConfig::default();
        assert!(matches!(
            fit_gmm2_em(&[5.0; 100], &cfg, &mut rng),
            Err(Error::DegenerateModel(_))
        ));
        assert!(matches!(
            fit_gmm2_em(&[1.0, 2.0], &cfg, &mut rng),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn em_selection_is_deterministic() {
        let truth = Gmm2Params::new(0.5, 10.0, 1.0, 0.0, 1.0).unwrap();
        let mut rng = RngStream::new(5, 0);
        let xs: Vec<f64> = (0..2000).map(|_| gmm2_sample(&truth, &mut rng)).collect();
        let cfg = EmConfig {
            restarts: 4,
            ..Default::default()
        };
        let a = fit_gmm2_em(&xs, &cfg, &mut RngStream::new(9, 9)).unwrap();
        let b = fit_gmm2_em(&xs, &cfg, &mut RngStream::new(9, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn vr_fit_needs_two_distinct_groups() {
        let g = TraceGroup {
            frame_rate: 30.0,
            target_rate_bps: None,
            sizes: (0..100).map(|i| 1000.0 + i as f64).collect(),
            periods_s: vec![1.0 / 30.0; 100],
        };
        let opts = FitOptions {
            em: EmConfig {
                restarts: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(matches!(
            fit_vr_model(&[g.clone()], &opts),
            Err(Error::InsufficientData(_))
        ));
        assert!(matches!(
            fit_vr_model(&[g.clone(), g], &opts),
            Err(Error::InsufficientData(_))
        ));
    }
}
