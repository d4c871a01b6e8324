//! Two-phase electric-field design under an energy budget.
//!
//! Phase I pushes the release toward the receiver, phase II spends whatever
//! energy is left pushing the stragglers away. [`mrp`] allocates the field
//! magnitudes; [`mhp_targets`] and [`msp_targets`] supply the targets for
//! the fully-absorbing and passive receivers.

use std::fmt;
use std::str::FromStr;

use crate::config::ScenarioConfig;
use crate::drift::{field_energy, BackgroundFlow, DriftWaveform, Extension, PiecewiseConstantField, Vec3};
use crate::error::{FamcError, Result};

/// Slack on the energy inequality.
pub const ENERGY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MrpInput {
    /// Ideal phase-I field, V/m.
    pub q_s: f64,
    /// Phase-II reference; only its sign matters.
    pub q_r: f64,
    pub t_p1: f64,
    pub t_p2: f64,
    /// ξ, V²·s/m².
    pub budget: f64,
    pub symbol_duration: f64,
}

impl MrpInput {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_p1 > 0.0) || !(self.t_p2 >= 0.0) || !(self.budget >= 0.0) {
            return Err(FamcError::InvalidArgument(format!(
                "need t_p1 > 0, t_p2 >= 0, budget >= 0 (got {}, {}, {})",
                self.t_p1, self.t_p2, self.budget
            )));
        }
        if !self.q_s.is_finite() || !self.q_r.is_finite() {
            return Err(FamcError::InvalidArgument("non-finite field target".into()));
        }
        Ok(())
    }
}

/// A two-phase periodic field along the link axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldDesign {
    pub v1: f64,
    pub v2: f64,
    /// `[start, end)` within each slot.
    pub phase1_window: (f64, f64),
    pub phase2_window: (f64, f64),
    pub symbol_duration: f64,
    pub energy_used: f64,
    pub residual: f64,
    pub saturated: bool,
}

impl FieldDesign {
    pub fn zero(symbol_duration: f64) -> Self {
        FieldDesign {
            v1: 0.0,
            v2: 0.0,
            phase1_window: (0.0, symbol_duration),
            phase2_window: (symbol_duration, symbol_duration),
            symbol_duration,
            energy_used: 0.0,
            residual: 0.0,
            saturated: false,
        }
    }

    pub fn t_p1(&self) -> f64 {
        self.phase1_window.1 - self.phase1_window.0
    }

    pub fn t_p2(&self) -> f64 {
        self.phase2_window.1 - self.phase2_window.0
    }
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Field magnitudes `(v1, v2)`: phase I reaches `q_s` if the budget allows
/// (otherwise spends everything on it); any residual drives phase II
/// against `q_r`.
pub fn mrp(inp: &MrpInput) -> Result<(f64, f64)> {
    inp.validate()?;
    let cap = (inp.budget / inp.t_p1).sqrt();
    if inp.q_s.abs() >= cap {
        return Ok((sgn(inp.q_s) * cap, 0.0));
    }
    let v1 = inp.q_s;
    let whole_slot = (inp.t_p1 - inp.symbol_duration).abs() <= 1e-12 * inp.symbol_duration;
    if whole_slot || inp.t_p2 == 0.0 {
        return Ok((v1, 0.0));
    }
    let residual = (inp.budget - v1 * v1 * inp.t_p1).max(0.0);
    Ok((v1, -sgn(inp.q_r) * (residual / inp.t_p2).sqrt()))
}

fn design_from(inp: &MrpInput, phase1: (f64, f64), phase2: (f64, f64)) -> Result<FieldDesign> {
    let (v1, v2) = mrp(inp)?;
    let used = v1 * v1 * inp.t_p1 + v2 * v2 * inp.t_p2;
    Ok(FieldDesign {
        v1,
        v2,
        phase1_window: phase1,
        phase2_window: phase2,
        symbol_duration: inp.symbol_duration,
        energy_used: used,
        residual: (inp.budget - used).max(0.0),
        saturated: inp.q_s.abs() >= (inp.budget / inp.t_p1).sqrt(),
    })
}

/// Flow displacement along the Tx→Rx axis over `[0, t]`.
fn axial_flow(cfg: &ScenarioConfig, flow: Option<&BackgroundFlow>, t: f64) -> f64 {
    flow.map_or(0.0, |f| f.displacement(t).dot(&cfg.link_axis()))
}

/// Targets for the fully-absorbing receiver: the phase-I field that makes
/// the effective drift at `t_peak` carry the release exactly onto the
/// nearest receiver point; phase II runs on `[βT_b, T_b)` against the link
/// direction.
pub fn mhp_targets(cfg: &ScenarioConfig, flow: Option<&BackgroundFlow>, beta: f64) -> Result<MrpInput> {
    let tb = cfg.symbol_duration;
    let tp = cfg.peak_time;
    if !(0.0..=1.0).contains(&beta) {
        return Err(FamcError::InvalidArgument(format!("beta must lie in [0, 1], got {beta}")));
    }
    if tp > tb {
        return Err(FamcError::InvalidArgument(format!(
            "peak time {tp} exceeds the symbol duration {tb}"
        )));
    }
    let gap = cfg.tx_distance() - cfg.rx_radius;
    let mean_flow = axial_flow(cfg, flow, tp) / tp;
    Ok(MrpInput {
        q_s: (gap / tp - mean_flow) / cfg.electrophoretic_mobility,
        q_r: 1.0,
        t_p1: tp,
        t_p2: (1.0 - beta) * tb,
        budget: cfg.energy_budget,
        symbol_duration: tb,
    })
}

/// Phase-II target for the passive receiver given the chosen phase-I field:
/// the field that would bring the cloud centre onto the receiver at the
/// next sampling instant, with `v1` repeating in the next slot.
pub fn msp_suppression_target(cfg: &ScenarioConfig, flow: Option<&BackgroundFlow>, v1: f64) -> f64 {
    let (tb, ts, ce) = (cfg.symbol_duration, cfg.sample_time, cfg.electrophoretic_mobility);
    let remaining = cfg.tx_distance() - 2.0 * ce * v1 * ts - axial_flow(cfg, flow, ts + tb);
    remaining / (ce * (tb - ts))
}

/// Targets for the passive receiver: the phase-I field centring the cloud
/// on the receiver at `t_s`, and the phase-II reference evaluated at the
/// phase-I field MRP will actually choose.
pub fn msp_targets(cfg: &ScenarioConfig, flow: Option<&BackgroundFlow>) -> Result<MrpInput> {
    let (tb, ts) = (cfg.symbol_duration, cfg.sample_time);
    if !(ts < tb) {
        return Err(FamcError::InvalidArgument(format!(
            "sample time {ts} must precede the symbol end {tb}"
        )));
    }
    let mut inp = MrpInput {
        q_s: (cfg.tx_distance() - axial_flow(cfg, flow, ts)) / (cfg.electrophoretic_mobility * ts),
        q_r: 0.0,
        t_p1: ts,
        t_p2: tb - ts,
        budget: cfg.energy_budget,
        symbol_duration: tb,
    };
    let (v1, _) = mrp(&inp)?;
    inp.q_r = msp_suppression_target(cfg, flow, v1);
    Ok(inp)
}

/// MHP design with phase windows `[0, t_peak)` and `[βT_b, T_b)`.
pub fn mhp_design(cfg: &ScenarioConfig, flow: Option<&BackgroundFlow>, beta: f64) -> Result<FieldDesign> {
    let inp = mhp_targets(cfg, flow, beta)?;
    let tb = cfg.symbol_duration;
    let start2 = beta * tb;
    if inp.t_p1 > start2 {
        return Err(FamcError::OverlappingWindows {
            phase1_end: inp.t_p1,
            phase2_start: start2,
        });
    }
    design_from(&inp, (0.0, inp.t_p1), (start2, tb))
}

/// MSP design with phase windows `[0, t_s)` and `[t_s, T_b)`.
pub fn msp_design(cfg: &ScenarioConfig, flow: Option<&BackgroundFlow>) -> Result<FieldDesign> {
    let inp = msp_targets(cfg, flow)?;
    design_from(&inp, (0.0, inp.t_p1), (inp.t_p1, cfg.symbol_duration))
}

/// Constant field spending the whole budget evenly over the slot, pointing
/// from Tx to Rx.
pub fn undesign(cfg: &ScenarioConfig) -> FieldDesign {
    let tb = cfg.symbol_duration;
    let v = (cfg.energy_budget / tb).sqrt();
    FieldDesign {
        v1: v,
        v2: 0.0,
        phase1_window: (0.0, tb),
        phase2_window: (tb, tb),
        symbol_duration: tb,
        energy_used: v * v * tb,
        residual: 0.0,
        saturated: true,
    }
}

/// Periodic field along the link axis with the design's two windows.
pub fn build_field(design: &FieldDesign, cfg: &ScenarioConfig) -> Result<PiecewiseConstantField> {
    let tb = design.symbol_duration;
    let (a1, b1) = design.phase1_window;
    let (a2, b2) = design.phase2_window;
    if a1 != 0.0 || b1 > tb || a2 > b2 || b2 > tb {
        return Err(FamcError::InvalidArgument(format!(
            "design windows [{a1}, {b1}) and [{a2}, {b2}) do not fit a slot of {tb} s"
        )));
    }
    if b1 > a2 {
        return Err(FamcError::OverlappingWindows {
            phase1_end: b1,
            phase2_start: a2,
        });
    }
    let axis = cfg.link_axis();
    let mut bps = vec![0.0];
    let mut vals = vec![axis * design.v1];
    if a2 > b1 {
        bps.push(b1);
        vals.push(Vec3::zeros());
    }
    if b2 > a2 {
        if a2 > 0.0 {
            bps.push(a2);
            vals.push(axis * design.v2);
        } else {
            vals[0] = axis * design.v2;
        }
    }
    // trailing gap after phase II
    if b2 < tb && b2 > *bps.last().unwrap() && b2 > b1 {
        bps.push(b2);
        vals.push(Vec3::zeros());
    }
    PiecewiseConstantField::new(bps, vals, Extension::Periodic { period: tb })
}

/// Waveform families compared in the evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Design {
    /// Background flow only.
    NoDrift,
    Undesign,
    Mhp { beta: f64 },
    Msp,
}

impl Design {
    /// The drift waveform (background flow plus designed field) and the
    /// field design behind it.
    pub fn realize(&self, cfg: &ScenarioConfig) -> Result<(DriftWaveform, FieldDesign)> {
        let flow = BackgroundFlow::from_config(cfg);
        let design = match *self {
            Design::NoDrift => FieldDesign::zero(cfg.symbol_duration),
            Design::Undesign => undesign(cfg),
            Design::Mhp { beta } => mhp_design(cfg, Some(&flow), beta)?,
            Design::Msp => msp_design(cfg, Some(&flow))?,
        };
        // a design with no field is the flow-only waveform, exactly
        let field = if design.v1 == 0.0 && design.v2 == 0.0 {
            None
        } else {
            Some(build_field(&design, cfg)?)
        };
        Ok((DriftWaveform::from_config(cfg, field), design))
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Design::NoDrift => f.write_str("none"),
            Design::Undesign => f.write_str("undesign"),
            Design::Mhp { beta } => write!(f, "mhp-{beta}"),
            Design::Msp => f.write_str("msp"),
        }
    }
}

impl FromStr for Design {
    type Err = FamcError;
    /// `none`, `undesign`, `msp`, `mhp` (β = 0.8) or `mhp-<β>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Design::NoDrift),
            "undesign" => Ok(Design::Undesign),
            "msp" => Ok(Design::Msp),
            "mhp" => Ok(Design::Mhp { beta: 0.8 }),
            _ => {
                let beta = s
                    .strip_prefix("mhp-")
                    .and_then(|b| b.parse::<f64>().ok())
                    .ok_or_else(|| FamcError::InvalidArgument(format!("unknown design {s:?}")))?;
                Ok(Design::Mhp { beta })
            }
        }
    }
}

/// Energy of one slot of the realised field.
pub fn slot_energy(field: &PiecewiseConstantField, symbol_duration: f64) -> f64 {
    field_energy(field, 0.0, symbol_duration)
}
