//! Analytic channel impulse responses and per-slot received probabilities.
//!
//! The fully-absorbing response is the zero-drift first-hitting density
//! multiplied by the exponential tilt of the effective drift, evaluated at
//! the receiver point nearest the transmitter. The passive response is the
//! exact Gaussian-cloud/sphere overlap with the cloud centre shifted by the
//! cumulative drift.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::config::ScenarioConfig;
use crate::drift::{DriftWaveform, Vec3};
use crate::error::{FamcError, Result};
use crate::quadrature::{integrate, QuadOptions};
use crate::sim::{simulate_absorbing, simulate_passive, girsanov_reweighted_hit, SimSettings};
use crate::special::{erf, half_erf_sum};

/// Below this time the hitting density is treated as zero (it underflows
/// long before).
pub const TIME_FLOOR: f64 = 1e-6;

/// Relative separation below which the passive formula switches to its
/// centred limit.
const CENTRED_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Receiver {
    FullyAbsorbing,
    Passive,
}

impl FromStr for Receiver {
    type Err = FamcError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fa" => Ok(Receiver::FullyAbsorbing),
            "pa" => Ok(Receiver::Passive),
            other => Err(FamcError::InvalidArgument(format!(
                "unknown receiver {other:?} (expected fa or pa)"
            ))),
        }
    }
}

impl fmt::Display for Receiver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Receiver::FullyAbsorbing => "fa",
            Receiver::Passive => "pa",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CirMethod {
    Analytic,
    MonteCarlo,
    ReweightedMc,
}

impl fmt::Display for CirMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CirMethod::Analytic => "analytic",
            CirMethod::MonteCarlo => "monte-carlo",
            CirMethod::ReweightedMc => "reweighted-mc",
        })
    }
}

/// Exponential tilt exp(Φ_eff·(x − x_0)/(2D) − ‖Φ_eff‖²T/(4D)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiltWeight {
    pub log_weight: f64,
    pub effective_drift: Vec3,
    pub endpoint: Vec3,
    pub time: f64,
}

impl TiltWeight {
    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }
}

/// Received probability per slot, `slot_probs[i - 1] = p_R[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CirTable {
    pub receiver: Receiver,
    pub slot_probs: Vec<f64>,
    pub method: CirMethod,
}

impl CirTable {
    pub fn new(receiver: Receiver, slot_probs: Vec<f64>, method: CirMethod) -> Result<Self> {
        if slot_probs.is_empty() {
            return Err(FamcError::InvalidCir("no slots".into()));
        }
        if let Some((i, p)) = slot_probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(0.0..=1.0).contains(*p))
        {
            return Err(FamcError::InvalidCir(format!("p_R[{}] = {p} outside [0, 1]", i + 1)));
        }
        if receiver == Receiver::FullyAbsorbing {
            let total: f64 = slot_probs.iter().sum();
            // allow rounding from quadrature tolerance
            if total > 1.0 + 1e-9 {
                return Err(FamcError::InvalidCir(format!(
                    "fully-absorbing slot probabilities sum to {total} > 1"
                )));
            }
        }
        Ok(CirTable {
            receiver,
            slot_probs,
            method,
        })
    }

    pub fn len(&self) -> usize {
        self.slot_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slot_probs.is_empty()
    }

    /// p_R[i], 1-based.
    pub fn p(&self, i: usize) -> f64 {
        self.slot_probs[i - 1]
    }

    /// p_R[1] − p_R[2] (zero when only one slot is stored).
    pub fn signal_to_isi_gap(&self) -> f64 {
        self.slot_probs[0] - self.slot_probs.get(1).copied().unwrap_or(0.0)
    }
}

pub fn tilt_weight(cfg: &ScenarioConfig, w: &DriftWaveform, x: Vec3, t: f64) -> Result<TiltWeight> {
    let phi = w.effective_drift(t)?;
    let d = cfg.diffusion;
    let log_weight = phi.dot(&(x - cfg.tx_position)) / (2.0 * d) - phi.norm_squared() * t / (4.0 * d);
    Ok(TiltWeight {
        log_weight,
        effective_drift: phi,
        endpoint: x,
        time: t,
    })
}

fn ln_fht_zero_drift(cfg: &ScenarioConfig, t: f64) -> f64 {
    let r = cfg.rx_radius;
    let d0 = cfg.tx_distance();
    let d = cfg.diffusion;
    let gap = d0 - r;
    (r / d0).ln() + gap.ln() - 0.5 * (4.0 * PI * d * t * t * t).ln() - gap * gap / (4.0 * d * t)
}

/// Zero-drift first-hitting density of an absorbing sphere, 1/s.
pub fn fht_zero_drift(cfg: &ScenarioConfig, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    ln_fht_zero_drift(cfg, t).exp()
}

/// Tilted first-hitting density under drift `w`, 1/s.
pub fn fa_cir_tilted(cfg: &ScenarioConfig, w: &DriftWaveform, t: f64) -> Result<f64> {
    if t <= 0.0 {
        return Ok(0.0);
    }
    // tilt at the peak location times f0, with the two exponents merged:
    // Φ·Δ/(2D) − |Φ|²t/(4D) − |Δ|²/(4Dt) = −|Δ − tΦ|²/(4Dt), Δ = x_peak − x0.
    // Merging avoids cancelling large terms under strong drift.
    let m = w.cumulative_displacement(t);
    if !m.iter().all(|c| c.is_finite()) {
        return Err(FamcError::NonFiniteDrift(t));
    }
    let r = cfg.rx_radius;
    let d0 = cfg.tx_distance();
    let d = cfg.diffusion;
    let miss = cfg.peak_location() - cfg.tx_position - m;
    let ln_prefactor = (r / d0).ln() + (d0 - r).ln() - 0.5 * (4.0 * PI * d * t * t * t).ln();
    Ok((ln_prefactor - miss.norm_squared() / (4.0 * d * t)).exp())
}

/// Probability that an isotropic Gaussian cloud with variance 2DT per axis,
/// centred at distance `d_bar` from the origin, lies inside radius `r`.
pub fn sensing_probability(d_bar: f64, r: f64, d: f64, t: f64) -> f64 {
    let four_dt = 4.0 * d * t;
    let s = four_dt.sqrt();
    let p = if d_bar < CENTRED_LIMIT * r {
        erf(r / s) - 2.0 * r / (PI * four_dt).sqrt() * (-r * r / four_dt).exp()
    } else {
        let a = (r - d_bar) / s;
        let b = (r + d_bar) / s;
        // e^{-a²} − e^{-b²} = −e^{-a²}·expm1(a² − b²), a² − b² = −4r d̄/(4DT)
        let diff = -(-a * a).exp() * (-4.0 * r * d_bar / four_dt).exp_m1();
        half_erf_sum(a, b) - (d * t).sqrt() / (d_bar * PI.sqrt()) * diff
    };
    p.max(0.0)
}

/// Exact passive sensing probability at time `t`.
pub fn pa_cir_exact(cfg: &ScenarioConfig, w: &DriftWaveform, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(FamcError::InvalidArgument(format!("sensing time must be > 0, got {t}")));
    }
    let centre = cfg.tx_position + w.cumulative_displacement(t);
    Ok(sensing_probability(centre.norm(), cfg.rx_radius, cfg.diffusion, t))
}

/// Per-slot probabilities from the analytic responses. Fully absorbing:
/// integral of the tilted density over each slot; passive: the sensing
/// probability at `t_s + (i − 1)T_b`.
pub fn slot_probabilities(cfg: &ScenarioConfig, w: &DriftWaveform, receiver: Receiver, slots: usize) -> Result<CirTable> {
    if slots < 1 {
        return Err(FamcError::InvalidArgument("need at least one slot".into()));
    }
    let tb = cfg.symbol_duration;
    let probs = match receiver {
        Receiver::FullyAbsorbing => {
            let opts = QuadOptions::default();
            let mut out = Vec::with_capacity(slots);
            for i in 0..slots {
                let a = (i as f64 * tb).max(TIME_FLOOR);
                let b = (i + 1) as f64 * tb;
                // t >= TIME_FLOOR > 0, so the density is always defined
                let integral = integrate(
                    |t| fa_cir_tilted(cfg, w, t).unwrap_or(f64::NAN),
                    a,
                    b,
                    &w.breakpoints_in(a, b),
                    opts,
                );
                out.push(integral?.value.max(0.0));
            }
            out
        }
        Receiver::Passive => (0..slots)
            .map(|i| pa_cir_exact(cfg, w, cfg.sample_time + i as f64 * tb))
            .collect::<Result<Vec<_>>>()?,
    };
    CirTable::new(receiver, probs, CirMethod::Analytic)
}

/// Monte Carlo options for [`slot_probabilities_mc`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    pub particle_count: u64,
    pub time_step: f64,
    pub seed: u64,
}

/// Per-slot probabilities estimated by particle simulation. `ReweightedMc`
/// is only defined for the fully-absorbing receiver.
pub fn slot_probabilities_mc(
    cfg: &ScenarioConfig,
    w: &DriftWaveform,
    receiver: Receiver,
    slots: usize,
    method: CirMethod,
    mc: McOptions,
) -> Result<CirTable> {
    if slots < 1 {
        return Err(FamcError::InvalidArgument("need at least one slot".into()));
    }
    let tb = cfg.symbol_duration;
    let horizon = slots as f64 * tb;
    let probs = match (receiver, method) {
        (_, CirMethod::Analytic) => {
            return Err(FamcError::InvalidArgument(
                "analytic tables come from slot_probabilities".into(),
            ))
        }
        (Receiver::FullyAbsorbing, m) => {
            let s = SimSettings::new(mc.particle_count, mc.time_step, horizon, mc.seed, tb)?;
            let hist = if m == CirMethod::MonteCarlo {
                simulate_absorbing(cfg, w, &s)?
            } else {
                girsanov_reweighted_hit(cfg, w, &s)?
            };
            // Reweighted estimates are unbiased but not confined to [0, 1].
            hist.mass().into_iter().take(slots).map(|p| p.clamp(0.0, 1.0)).collect()
        }
        (Receiver::Passive, CirMethod::MonteCarlo) => {
            let times: Vec<f64> = (0..slots).map(|i| cfg.sample_time + i as f64 * tb).collect();
            let last = *times.last().unwrap();
            let s = SimSettings::new(mc.particle_count, mc.time_step.min(last / 100.0), last, mc.seed, last)?;
            simulate_passive(cfg, w, &times, &s)?
                .into_iter()
                .map(|e| e.probability)
                .collect()
        }
        (Receiver::Passive, CirMethod::ReweightedMc) => {
            return Err(FamcError::InvalidArgument(
                "reweighted estimation is only available for the fully-absorbing receiver".into(),
            ))
        }
    };
    CirTable::new(receiver, probs, method)
}
