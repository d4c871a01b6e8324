//! Particle-level Monte Carlo for the drift–diffusion channel.
//!
//! Each particle owns a ChaCha8 stream keyed by `(seed, particle index)`.
//! Particles are processed in fixed-size blocks whose partial sums are merged
//! in block order, so results are bit-identical for any thread count.
//!
//! Away from the receiver the step grows with the distance to the sphere
//! (free-space transitions are exact Gaussians with the exact drift
//! integral); within a few diffusive lengths of the boundary the base step
//! applies, with a Brownian-bridge crossing test between steps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::config::ScenarioConfig;
use crate::drift::{DriftWaveform, Vec3};
use crate::error::{FamcError, Result};

/// Particles per reduction block. Fixed so that the summation order never
/// depends on the thread count.
const BLOCK: u64 = 2048;

/// Far-field step control: a step of length h keeps the diffusive spread
/// √(2Dh) at `STEP_SAFETY` times the distance to the sphere, and the drift
/// excursion below the same fraction.
const STEP_SAFETY: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSettings {
    pub particle_count: u64,
    /// Base step Δt, used near the receiver, s.
    pub time_step: f64,
    pub horizon: f64,
    pub seed: u64,
    pub histogram_bin: f64,
}

impl SimSettings {
    pub fn new(particle_count: u64, time_step: f64, horizon: f64, seed: u64, histogram_bin: f64) -> Result<Self> {
        let s = SimSettings {
            particle_count,
            time_step,
            horizon,
            seed,
            histogram_bin,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FamcError::InvalidSettings(m));
        if self.particle_count < 1 {
            return bad("particle_count must be >= 1".into());
        }
        if !(self.time_step > 0.0) || !self.time_step.is_finite() {
            return bad(format!("time step must be > 0, got {}", self.time_step));
        }
        if !(self.horizon.is_finite()) || self.time_step > self.horizon / 100.0 {
            return bad(format!(
                "time step {} exceeds horizon/100 = {}",
                self.time_step,
                self.horizon / 100.0
            ));
        }
        if !(self.histogram_bin >= self.time_step) {
            return bad(format!(
                "histogram bin {} is shorter than the time step {}",
                self.histogram_bin, self.time_step
            ));
        }
        Ok(())
    }
}

/// Empirical first-hitting density.
#[derive(Debug, Clone, PartialEq)]
pub struct HitHistogram {
    /// `n + 1` edges for `n` bins; the last bin may be shorter.
    pub bin_edges: Vec<f64>,
    /// Per-bin density, 1/s.
    pub density: Vec<f64>,
    /// Fraction of particles absorbed within the horizon.
    pub total_hit_fraction: f64,
    /// Per-bin standard error of `density`, 1/s.
    pub std_error: Vec<f64>,
    /// Standard error of `total_hit_fraction`.
    pub total_std_error: f64,
}

impl HitHistogram {
    pub fn bin_width(&self, i: usize) -> f64 {
        self.bin_edges[i + 1] - self.bin_edges[i]
    }

    pub fn bin_centre(&self, i: usize) -> f64 {
        0.5 * (self.bin_edges[i] + self.bin_edges[i + 1])
    }

    /// Probability mass per bin.
    pub fn mass(&self) -> Vec<f64> {
        (0..self.density.len()).map(|i| self.density[i] * self.bin_width(i)).collect()
    }
}

/// Empirical sensing probability at one sample time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SenseEstimate {
    pub time: f64,
    pub probability: f64,
    pub std_error: f64,
}

/// Mean of the likelihood-ratio weight stopped at `min(time, hit time)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightMean {
    pub time: f64,
    pub mean: f64,
    pub std_error: f64,
}

fn particle_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn gaussian3(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

fn check_geometry(cfg: &ScenarioConfig) -> Result<()> {
    if cfg.tx_position.norm() <= cfg.rx_radius {
        return Err(FamcError::InvalidArgument(
            "transmitter lies inside the receiver sphere".into(),
        ));
    }
    Ok(())
}

/// Per-block sums for absorbing runs.
#[derive(Debug, Clone)]
struct AbsorbSums {
    bin: Vec<f64>,
    bin_sq: Vec<f64>,
    total: f64,
    total_sq: f64,
    probe: f64,
    probe_sq: f64,
}

impl AbsorbSums {
    fn new(bins: usize) -> Self {
        AbsorbSums {
            bin: vec![0.0; bins],
            bin_sq: vec![0.0; bins],
            total: 0.0,
            total_sq: 0.0,
            probe: 0.0,
            probe_sq: 0.0,
        }
    }

    fn merge(&mut self, other: &AbsorbSums) {
        for i in 0..self.bin.len() {
            self.bin[i] += other.bin[i];
            self.bin_sq[i] += other.bin_sq[i];
        }
        self.total += other.total;
        self.total_sq += other.total_sq;
        self.probe += other.probe;
        self.probe_sq += other.probe_sq;
    }
}

struct PathOutcome {
    hit_time: Option<f64>,
    /// Log weight at the hit (or at the horizon).
    log_weight: f64,
    /// Log weight stopped at the probe time.
    probe_log_weight: f64,
}

struct Tracer<'a> {
    x0: Vec3,
    radius: f64,
    diffusion: f64,
    drift: &'a DriftWaveform,
    drift_free: bool,
    speed: f64,
    settings: &'a SimSettings,
    /// Simulate zero-drift paths and carry the likelihood ratio of `drift`.
    reweight: bool,
    probe: f64,
}

impl Tracer<'_> {
    fn step_size(&self, dist: f64, remaining: f64) -> f64 {
        let mut h = STEP_SAFETY * STEP_SAFETY * dist * dist / (2.0 * self.diffusion);
        if self.speed > 0.0 {
            h = h.min(STEP_SAFETY * dist / self.speed);
        }
        h.max(self.settings.time_step).min(remaining)
    }

    fn trace(&self, rng: &mut ChaCha8Rng) -> Result<PathOutcome> {
        let d = self.diffusion;
        let r = self.radius;
        let horizon = self.settings.horizon;
        let mut t = 0.0;
        let mut x = self.x0;
        let mut log_w = 0.0;
        let mut probe_log_w = None;
        while t < horizon {
            let dist = x.norm() - r;
            // land exactly on the probe time
            let stop = if probe_log_w.is_none() && self.probe > t && self.probe < horizon {
                self.probe
            } else {
                horizon
            };
            let h = self.step_size(dist, stop - t);
            let t1 = if stop - t <= h { stop } else { t + h };
            let h = t1 - t;
            let noise = gaussian3(rng) * (2.0 * d * h).sqrt();
            let shift = if self.drift_free {
                Vec3::zeros()
            } else {
                let m = self.drift.cumulative_displacement(t1) - self.drift.cumulative_displacement(t);
                if !m.iter().all(|c| c.is_finite()) {
                    return Err(FamcError::NonFiniteDrift(t));
                }
                m
            };
            let x1 = if self.reweight {
                log_w += shift.dot(&noise) / (2.0 * d * h) - shift.norm_squared() / (4.0 * d * h);
                x + noise
            } else {
                x + shift + noise
            };
            let end_dist = x1.norm() - r;
            let hit = end_dist <= 0.0 || {
                let p = (-(dist * end_dist) / (d * h)).exp();
                p > 0.0 && rng.gen::<f64>() < p
            };
            if hit {
                return Ok(PathOutcome {
                    hit_time: Some(t + 0.5 * h),
                    log_weight: log_w,
                    probe_log_weight: probe_log_w.unwrap_or(log_w),
                });
            }
            x = x1;
            t = t1;
            if t1 == self.probe {
                probe_log_w = Some(log_w);
            }
        }
        Ok(PathOutcome {
            hit_time: None,
            log_weight: log_w,
            probe_log_weight: probe_log_w.unwrap_or(log_w),
        })
    }
}

fn bin_edges(horizon: f64, bin: f64) -> Vec<f64> {
    let n = ((horizon / bin) - 1e-9).ceil().max(1.0) as usize;
    let mut edges: Vec<f64> = (0..n).map(|i| i as f64 * bin).collect();
    edges.push(horizon);
    edges
}

fn run_absorbing(
    cfg: &ScenarioConfig,
    w: &DriftWaveform,
    s: &SimSettings,
    reweight: bool,
    probe: f64,
) -> Result<(Vec<f64>, AbsorbSums)> {
    s.validate()?;
    check_geometry(cfg)?;
    let edges = bin_edges(s.horizon, s.histogram_bin);
    let bins = edges.len() - 1;
    let drift_free = w.is_zero();
    let tracer = Tracer {
        x0: cfg.tx_position,
        radius: cfg.rx_radius,
        diffusion: cfg.diffusion,
        drift: w,
        drift_free,
        // zero-drift reference paths are stepped without drift in either mode
        speed: if reweight || drift_free { 0.0 } else { w.speed_bound() },
        settings: s,
        reweight,
        probe,
    };
    let n = s.particle_count;
    let blocks = n.div_ceil(BLOCK);
    let partial: Vec<AbsorbSums> = (0..blocks)
        .into_par_iter()
        .map(|b| -> Result<AbsorbSums> {
            let mut acc = AbsorbSums::new(bins);
            for i in (b * BLOCK)..((b + 1) * BLOCK).min(n) {
                let mut rng = particle_rng(s.seed, i);
                let out = tracer.trace(&mut rng)?;
                let pw = out.probe_log_weight.exp();
                acc.probe += pw;
                acc.probe_sq += pw * pw;
                if let Some(t) = out.hit_time {
                    if t < s.horizon {
                        let y = out.log_weight.exp();
                        let k = edges.partition_point(|&e| e <= t).saturating_sub(1).min(bins - 1);
                        acc.bin[k] += y;
                        acc.bin_sq[k] += y * y;
                        acc.total += y;
                        acc.total_sq += y * y;
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sums = AbsorbSums::new(bins);
    for p in &partial {
        sums.merge(p);
    }
    Ok((edges, sums))
}

/// Mean and standard error of a sample from its sum and sum of squares.
fn mean_and_se(sum: f64, sum_sq: f64, n: f64) -> (f64, f64) {
    let mean = sum / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = ((sum_sq / n - mean * mean) * n / (n - 1.0)).max(0.0);
    (mean, (var / n).sqrt())
}

fn histogram(edges: Vec<f64>, sums: &AbsorbSums, n: u64) -> HitHistogram {
    let n = n as f64;
    let mut density = Vec::with_capacity(sums.bin.len());
    let mut std_error = Vec::with_capacity(sums.bin.len());
    for i in 0..sums.bin.len() {
        let width = edges[i + 1] - edges[i];
        let (m, se) = mean_and_se(sums.bin[i], sums.bin_sq[i], n);
        density.push(m / width);
        std_error.push(se / width);
    }
    let (total, total_se) = mean_and_se(sums.total, sums.total_sq, n);
    HitHistogram {
        bin_edges: edges,
        density,
        total_hit_fraction: total,
        std_error,
        total_std_error: total_se,
    }
}

/// Direct simulation of drifted particles toward a fully absorbing sphere.
pub fn simulate_absorbing(cfg: &ScenarioConfig, w: &DriftWaveform, s: &SimSettings) -> Result<HitHistogram> {
    let (edges, sums) = run_absorbing(cfg, w, s, false, f64::INFINITY)?;
    Ok(histogram(edges, &sums, s.particle_count))
}

/// Zero-drift paths weighted by the likelihood ratio of the drifted process;
/// the weighted hit histogram estimates the drifted hitting density.
pub fn girsanov_reweighted_hit(cfg: &ScenarioConfig, w: &DriftWaveform, s: &SimSettings) -> Result<HitHistogram> {
    let (edges, sums) = run_absorbing(cfg, w, s, true, f64::INFINITY)?;
    Ok(histogram(edges, &sums, s.particle_count))
}

/// Mean of the likelihood-ratio weight stopped at `min(t, hit time)`; equals
/// one in expectation.
pub fn girsanov_weight_mean(cfg: &ScenarioConfig, w: &DriftWaveform, s: &SimSettings, t: f64) -> Result<WeightMean> {
    if !(t > 0.0 && t <= s.horizon) {
        return Err(FamcError::InvalidArgument(format!(
            "probe time {t} outside (0, horizon]"
        )));
    }
    let (_, sums) = run_absorbing(cfg, w, s, true, t)?;
    let (mean, std_error) = mean_and_se(sums.probe, sums.probe_sq, s.particle_count as f64);
    Ok(WeightMean { time: t, mean, std_error })
}

/// Fraction of free particles inside the receiver sphere at each sample time.
pub fn simulate_passive(
    cfg: &ScenarioConfig,
    w: &DriftWaveform,
    sample_times: &[f64],
    s: &SimSettings,
) -> Result<Vec<SenseEstimate>> {
    s.validate()?;
    check_geometry(cfg)?;
    if let Some(&bad) = sample_times.iter().find(|&&t| !(t >= 0.0 && t <= s.horizon)) {
        return Err(FamcError::InvalidSettings(format!(
            "sample time {bad} outside [0, horizon = {}]",
            s.horizon
        )));
    }
    let mut order: Vec<usize> = (0..sample_times.len()).collect();
    order.sort_by(|&a, &b| sample_times[a].total_cmp(&sample_times[b]));
    let d = cfg.diffusion;
    let r2 = cfg.rx_radius * cfg.rx_radius;
    let n = s.particle_count;
    let blocks = n.div_ceil(BLOCK);
    let m = sample_times.len();
    let partial: Vec<Vec<u64>> = (0..blocks)
        .into_par_iter()
        .map(|b| -> Result<Vec<u64>> {
            let mut counts = vec![0u64; m];
            for i in (b * BLOCK)..((b + 1) * BLOCK).min(n) {
                let mut rng = particle_rng(s.seed, i);
                let mut t = 0.0;
                let mut x = cfg.tx_position;
                for &k in &order {
                    let t1 = sample_times[k];
                    let h = t1 - t;
                    if h > 0.0 {
                        let shift = w.cumulative_displacement(t1) - w.cumulative_displacement(t);
                        if !shift.iter().all(|c| c.is_finite()) {
                            return Err(FamcError::NonFiniteDrift(t));
                        }
                        x += shift + gaussian3(&mut rng) * (2.0 * d * h).sqrt();
                        t = t1;
                    }
                    if x.norm_squared() <= r2 {
                        counts[k] += 1;
                    }
                }
            }
            Ok(counts)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut counts = vec![0u64; m];
    for p in &partial {
        for k in 0..m {
            counts[k] += p[k];
        }
    }
    let nf = n as f64;
    Ok(sample_times
        .iter()
        .zip(&counts)
        .map(|(&time, &c)| {
            let p = c as f64 / nf;
            SenseEstimate {
                time,
                probability: p,
                std_error: (p * (1.0 - p) / nf).sqrt(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::PiecewiseConstantField;
    use crate::special::{erf, erfc};
    use std::f64::consts::PI;

    fn cfg() -> ScenarioConfig {
        ScenarioConfig::reference_si_literal()
    }

    fn settings(n: u64, horizon: f64, seed: u64) -> SimSettings {
        SimSettings::new(n, 1e-4, horizon, seed, horizon / 20.0).unwrap()
    }

    #[test]
    fn settings_validation() {
        assert!(SimSettings::new(0, 1e-4, 1.0, 1, 0.01).is_err());
        assert!(SimSettings::new(10, 0.0, 1.0, 1, 0.01).is_err());
        assert!(SimSettings::new(10, 0.02, 1.0, 1, 0.05).is_err());
        assert!(SimSettings::new(10, 1e-3, 1.0, 1, 1e-4).is_err());
        assert!(SimSettings::new(10, 1e-3, 1.0, 1, 1e-3).is_ok());
    }

    #[test]
    fn tx_inside_sphere_is_rejected() {
        let mut c = cfg();
        c.tx_position = Vec3::new(-5e-6, 0.0, 0.0);
        let r = simulate_absorbing(&c, &DriftWaveform::zero(), &settings(10, 1.0, 1));
        assert!(r.is_err());
    }

    #[test]
    fn sample_beyond_horizon_is_rejected() {
        let r = simulate_passive(&cfg(), &DriftWaveform::zero(), &[2.0], &settings(10, 1.0, 1));
        assert!(matches!(r, Err(FamcError::InvalidSettings(_))));
    }

    #[test]
    fn passive_at_time_zero_is_empty() {
        let est = simulate_passive(&cfg(), &DriftWaveform::zero(), &[0.0, 1e-6], &settings(2000, 1.0, 3)).unwrap();
        assert_eq!(est[0].probability, 0.0);
        assert_eq!(est[1].probability, 0.0);
    }

    #[test]
    fn passive_zero_drift_matches_closed_form() {
        // Probability that a Gaussian cloud centred at distance d lies in the sphere.
        let c = cfg();
        let (r, d0, dd, t) = (c.rx_radius, 30e-6, c.diffusion, 0.1);
        let s = (4.0 * dd * t).sqrt();
        let exact = 0.5 * (erf((r - d0) / s) + erf((r + d0) / s))
            - (dd * t).sqrt() / (d0 * PI.sqrt())
                * ((-(r - d0).powi(2) / (4.0 * dd * t)).exp() - (-(r + d0).powi(2) / (4.0 * dd * t)).exp());
        let est = simulate_passive(&c, &DriftWaveform::zero(), &[t], &settings(100_000, 1.0, 11)).unwrap();
        assert!((exact - 8.5e-3).abs() < 1e-4, "{exact}");
        let e = est[0];
        assert!(
            (e.probability - exact).abs() <= 3.0 * e.std_error,
            "{} vs {exact} ± {}",
            e.probability,
            e.std_error
        );
    }

    #[test]
    fn absorbing_matches_zero_drift_finite_horizon() {
        // P(τ ≤ T) = (r/d0) erfc((d0 − r)/√(4DT)) for zero drift.
        let c = cfg();
        let horizon = 2.0;
        let exact = c.rx_radius / 30e-6 * erfc(20e-6 / (4.0 * c.diffusion * horizon).sqrt());
        let h = simulate_absorbing(&c, &DriftWaveform::zero(), &settings(20_000, horizon, 5)).unwrap();
        let tol = 3.0 * h.total_std_error + 0.003;
        assert!(
            (h.total_hit_fraction - exact).abs() <= tol,
            "{} vs {exact}",
            h.total_hit_fraction
        );
        let mass: f64 = h.mass().iter().sum();
        assert!((mass - h.total_hit_fraction).abs() < 1e-12);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let c = cfg();
        let w = DriftWaveform::direct(PiecewiseConstantField::benchmark_drift());
        let s = settings(5000, 1.0, 99);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = one.install(|| simulate_absorbing(&c, &w, &s)).unwrap();
        let b = three.install(|| simulate_absorbing(&c, &w, &s)).unwrap();
        assert_eq!(a, b);
        let a = one.install(|| girsanov_reweighted_hit(&c, &w, &s)).unwrap();
        let b = three.install(|| girsanov_reweighted_hit(&c, &w, &s)).unwrap();
        assert_eq!(a, b);
        let ts = [0.1, 0.5, 1.0];
        let a = one.install(|| simulate_passive(&c, &w, &ts, &s)).unwrap();
        let b = three.install(|| simulate_passive(&c, &w, &ts, &s)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn girsanov_with_zero_drift_reproduces_direct_run() {
        let c = cfg();
        let s = settings(3000, 1.0, 4);
        let a = simulate_absorbing(&c, &DriftWaveform::zero(), &s).unwrap();
        let b = girsanov_reweighted_hit(&c, &DriftWaveform::zero(), &s).unwrap();
        assert_eq!(a, b);
        let m = girsanov_weight_mean(&c, &DriftWaveform::zero(), &s, 0.5).unwrap();
        assert_eq!(m.mean, 1.0);
    }

    #[test]
    fn drift_away_reduces_capture() {
        // paired comparison under a shared seed
        let c = cfg();
        let s = settings(20_000, 1.0, 8);
        let away = DriftWaveform::constant(Vec3::new(-2e-4, 0.0, 0.0));
        let h0 = simulate_absorbing(&c, &DriftWaveform::zero(), &s).unwrap();
        let h1 = simulate_absorbing(&c, &away, &s).unwrap();
        let se = (h0.total_std_error.powi(2) + h1.total_std_error.powi(2)).sqrt();
        assert!(h1.total_hit_fraction + 3.0 * se < h0.total_hit_fraction);
    }

    #[test]
    fn girsanov_matches_direct_for_constant_drift() {
        let c = cfg();
        let v = DriftWaveform::constant(Vec3::new(1.5e-5, 0.0, 0.0));
        let s = SimSettings::new(20_000, 1e-4, 1.0, 21, 0.1).unwrap();
        let a = simulate_absorbing(&c, &v, &s).unwrap();
        let b = girsanov_reweighted_hit(&c, &v, &SimSettings { seed: 22, ..s }).unwrap();
        for i in 0..a.density.len() {
            let se = (a.std_error[i].powi(2) + b.std_error[i].powi(2)).sqrt();
            assert!(
                (a.density[i] - b.density[i]).abs() <= 3.5 * se + 1e-9,
                "bin {i}: {} vs {} (se {se})",
                a.density[i],
                b.density[i]
            );
        }
        let m = girsanov_weight_mean(&c, &v, &s, 0.5).unwrap();
        assert!((m.mean - 1.0).abs() <= 3.0 * m.std_error, "{m:?}");
    }
}
