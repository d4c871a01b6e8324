//! Scenario parameters, physical constants and the config-file boundary.
//!
//! Everything inside [`ScenarioConfig`] is SI (m, s, kg, K, V/m). The text
//! format is TOML with unit-suffixed keys; each length/diffusion quantity may be
//! given either in SI or in the customary micro-scale units (`_um`,
//! `_cm2_per_s`), but not both. Serialization always writes the SI keys so a
//! load/serialize/load cycle is exact.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{FamcError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// CODATA 2018 exact values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    pub boltzmann: f64,
    pub elementary_charge: f64,
}

impl PhysicalConstants {
    pub const BOLTZMANN: f64 = 1.380649e-23;
    pub const ELEMENTARY_CHARGE: f64 = 1.602176634e-19;

    pub const fn codata() -> Self {
        PhysicalConstants {
            boltzmann: Self::BOLTZMANN,
            elementary_charge: Self::ELEMENTARY_CHARGE,
        }
    }
}

const UM: f64 = 1e-6;
const CM2: f64 = 1e-4;

/// Relative mismatch between the configured mobility and D/(k_B T) above which
/// a warning is emitted.
pub const MOBILITY_MISMATCH_WARN: f64 = 0.05;

/// Fully validated scenario, SI units throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// Receiver radius, m.
    pub rx_radius: f64,
    /// Transmitter position relative to the receiver centre, m.
    pub tx_position: Vector3<f64>,
    /// Diffusion coefficient, m²/s.
    pub diffusion: f64,
    /// Temperature, K.
    pub temperature: f64,
    pub valence: i32,
    /// Mechanical mobility, s/kg.
    pub mobility: f64,
    /// Background-flow force amplitude, N.
    pub flow_force: f64,
    /// Background-flow period, s.
    pub flow_period: f64,
    /// Unit direction of the background flow.
    pub flow_axis: Vector3<f64>,
    /// Overrides mobility × flow_force as the peak flow speed (m/s).
    pub flow_speed_override: Option<f64>,
    /// Overrides μ·z·e as the electrophoretic mobility (m²/(V·s)).
    pub electrophoretic_mobility_override: Option<f64>,
    /// Symbol duration T_b, s.
    pub symbol_duration: f64,
    /// Passive sampling instant t_s within a slot, s.
    pub sample_time: f64,
    /// Target peak time for the absorbing receiver, s.
    pub peak_time: f64,
    pub particles_per_bit: u64,
    /// Energy budget ξ, V²·s/m².
    pub energy_budget: f64,
    /// Fraction β of the slot at which suppression starts.
    pub suppression_onset: f64,
    /// ISI memory L (slots).
    pub isi_memory: usize,
    pub prior_one: f64,
    /// Derived c_e in m²/(V·s).
    pub electrophoretic_mobility: f64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    schema_version: Option<u32>,
    rx_radius_um: Option<f64>,
    rx_radius_m: Option<f64>,
    tx_position_um: Option<[f64; 3]>,
    tx_position_m: Option<[f64; 3]>,
    diffusion_cm2_per_s: Option<f64>,
    diffusion_m2_per_s: Option<f64>,
    temperature_k: Option<f64>,
    valence: Option<i32>,
    mobility_s_per_kg: Option<f64>,
    flow_force_n: Option<f64>,
    flow_period_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    flow_axis: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    flow_speed_m_per_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    electrophoretic_mobility_m2_per_v_s: Option<f64>,
    symbol_duration_s: Option<f64>,
    sample_time_s: Option<f64>,
    peak_time_s: Option<f64>,
    particles_per_bit: Option<u64>,
    energy_budget_v2_s_per_m2: Option<f64>,
    suppression_onset: Option<f64>,
    isi_memory: Option<usize>,
    prior_one: Option<f64>,
}

fn one_of(name: &str, scaled: Option<f64>, scale: f64, si: Option<f64>) -> Result<f64> {
    match (scaled, si) {
        (Some(_), Some(_)) => Err(FamcError::Parse(format!(
            "{name}: give exactly one unit variant, not both"
        ))),
        (Some(v), None) => Ok(v * scale),
        (None, Some(v)) => Ok(v),
        (None, None) => Err(FamcError::Parse(format!("missing required key {name}"))),
    }
}

fn required<T>(name: &str, v: Option<T>) -> Result<T> {
    v.ok_or_else(|| FamcError::Parse(format!("missing required key {name}")))
}

/// Parse and validate a TOML scenario.
pub fn load_scenario(source: &str) -> Result<ScenarioConfig> {
    let raw: RawConfig = toml::from_str(source).map_err(|e| FamcError::Parse(e.to_string()))?;
    match raw.schema_version {
        Some(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(FamcError::Parse(format!(
                "unsupported schema_version {v} (expected {SCHEMA_VERSION})"
            )))
        }
        None => return Err(FamcError::Parse("missing required key schema_version".into())),
    }

    let tx = match (raw.tx_position_um, raw.tx_position_m) {
        (Some(_), Some(_)) => {
            return Err(FamcError::Parse(
                "tx_position: give exactly one unit variant, not both".into(),
            ))
        }
        (Some(p), None) => Vector3::new(p[0] * UM, p[1] * UM, p[2] * UM),
        (None, Some(p)) => Vector3::from(p),
        (None, None) => return Err(FamcError::Parse("missing required key tx_position".into())),
    };

    let cfg = ScenarioConfig {
        rx_radius: one_of("rx_radius", raw.rx_radius_um, UM, raw.rx_radius_m)?,
        tx_position: tx,
        diffusion: one_of("diffusion", raw.diffusion_cm2_per_s, CM2, raw.diffusion_m2_per_s)?,
        temperature: required("temperature_k", raw.temperature_k)?,
        valence: required("valence", raw.valence)?,
        mobility: required("mobility_s_per_kg", raw.mobility_s_per_kg)?,
        flow_force: required("flow_force_n", raw.flow_force_n)?,
        flow_period: required("flow_period_s", raw.flow_period_s)?,
        flow_axis: Vector3::from(raw.flow_axis.unwrap_or([1.0, 0.0, 0.0])),
        flow_speed_override: raw.flow_speed_m_per_s,
        electrophoretic_mobility_override: raw.electrophoretic_mobility_m2_per_v_s,
        symbol_duration: required("symbol_duration_s", raw.symbol_duration_s)?,
        sample_time: required("sample_time_s", raw.sample_time_s)?,
        peak_time: required("peak_time_s", raw.peak_time_s)?,
        particles_per_bit: required("particles_per_bit", raw.particles_per_bit)?,
        energy_budget: required("energy_budget_v2_s_per_m2", raw.energy_budget_v2_s_per_m2)?,
        suppression_onset: required("suppression_onset", raw.suppression_onset)?,
        isi_memory: raw.isi_memory.unwrap_or(3),
        prior_one: raw.prior_one.unwrap_or(0.5),
        electrophoretic_mobility: 0.0,
    };
    cfg.finalize()
}

/// Read and validate a scenario file.
pub fn load_scenario_file(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    load_scenario(&text)
}

impl ScenarioConfig {
    /// Validates invariants and fills in derived quantities.
    pub fn finalize(mut self) -> Result<Self> {
        self.validate()?;
        self.electrophoretic_mobility = self.electrophoretic_mobility_override.unwrap_or(
            self.mobility * self.valence as f64 * PhysicalConstants::ELEMENTARY_CHARGE,
        );
        for w in self.consistency_warnings() {
            log::warn!("{w}");
        }
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(FamcError::Constraint(msg));
        let finite = [
            ("rx_radius", self.rx_radius),
            ("diffusion", self.diffusion),
            ("temperature", self.temperature),
            ("mobility", self.mobility),
            ("flow_force", self.flow_force),
            ("flow_period", self.flow_period),
            ("symbol_duration", self.symbol_duration),
            ("sample_time", self.sample_time),
            ("peak_time", self.peak_time),
            ("energy_budget", self.energy_budget),
            ("suppression_onset", self.suppression_onset),
            ("prior_one", self.prior_one),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return fail(format!("{name} must be finite"));
            }
        }
        if !self.tx_position.iter().all(|v| v.is_finite()) {
            return fail("tx_position must be finite".into());
        }
        if self.rx_radius <= 0.0 {
            return fail("rx_radius must be > 0".into());
        }
        if self.tx_position.norm() <= self.rx_radius {
            return fail("|tx_position| > rx_radius (transmitter must lie outside the receiver)".into());
        }
        if self.diffusion <= 0.0 {
            return fail("diffusion must be > 0".into());
        }
        if self.temperature <= 0.0 {
            return fail("temperature must be > 0".into());
        }
        if self.mobility <= 0.0 {
            return fail("mobility must be > 0".into());
        }
        if self.flow_period <= 0.0 {
            return fail("flow_period must be > 0".into());
        }
        if (self.flow_axis.norm() - 1.0).abs() > 1e-9 {
            return fail("flow_axis must have unit norm".into());
        }
        if self.symbol_duration <= 0.0 {
            return fail("symbol_duration must be > 0".into());
        }
        if !(self.sample_time > 0.0 && self.sample_time <= self.symbol_duration) {
            return fail("0 < sample_time <= symbol_duration".into());
        }
        if !(self.peak_time > 0.0 && self.peak_time <= self.symbol_duration) {
            return fail("0 < peak_time <= symbol_duration".into());
        }
        if !(0.0..=1.0).contains(&self.suppression_onset) {
            return fail("0 <= suppression_onset <= 1".into());
        }
        if self.energy_budget < 0.0 {
            return fail("energy_budget >= 0".into());
        }
        if self.isi_memory < 1 {
            return fail("isi_memory >= 1".into());
        }
        if !(self.prior_one > 0.0 && self.prior_one < 1.0) {
            return fail("0 < prior_one < 1".into());
        }
        if let Some(v) = self.flow_speed_override {
            if !v.is_finite() {
                return fail("flow_speed_m_per_s must be finite".into());
            }
        }
        if let Some(v) = self.electrophoretic_mobility_override {
            if !v.is_finite() {
                return fail("electrophoretic_mobility_m2_per_v_s must be finite".into());
            }
        }
        Ok(())
    }

    /// Mobility implied by Einstein's relation, D/(k_B T).
    pub fn einstein_mobility(&self) -> f64 {
        self.diffusion / (PhysicalConstants::BOLTZMANN * self.temperature)
    }

    /// Non-fatal inconsistencies between configured quantities.
    pub fn consistency_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let einstein = self.einstein_mobility();
        let rel = (self.mobility - einstein).abs() / einstein;
        if rel > MOBILITY_MISMATCH_WARN {
            out.push(format!(
                "mobility {:.4e} s/kg differs from D/(k_B T) = {:.4e} s/kg by {:.1}%; using the configured value",
                self.mobility,
                einstein,
                rel * 100.0
            ));
        }
        out
    }

    /// Peak background-flow speed μF_0 (or its override), m/s.
    pub fn flow_speed(&self) -> f64 {
        self.flow_speed_override.unwrap_or(self.mobility * self.flow_force)
    }

    /// ‖x_0‖, m.
    pub fn tx_distance(&self) -> f64 {
        self.tx_position.norm()
    }

    /// Unit vector pointing from the transmitter toward the receiver centre.
    pub fn link_axis(&self) -> Vector3<f64> {
        -self.tx_position / self.tx_position.norm()
    }

    /// Receiver surface point closest to the transmitter.
    pub fn peak_location(&self) -> Vector3<f64> {
        self.tx_position * (self.rx_radius / self.tx_position.norm())
    }

    /// Serialize with SI-suffixed keys.
    pub fn to_toml_string(&self) -> String {
        let raw = RawConfig {
            schema_version: Some(SCHEMA_VERSION),
            rx_radius_m: Some(self.rx_radius),
            tx_position_m: Some([self.tx_position.x, self.tx_position.y, self.tx_position.z]),
            diffusion_m2_per_s: Some(self.diffusion),
            temperature_k: Some(self.temperature),
            valence: Some(self.valence),
            mobility_s_per_kg: Some(self.mobility),
            flow_force_n: Some(self.flow_force),
            flow_period_s: Some(self.flow_period),
            flow_axis: Some([self.flow_axis.x, self.flow_axis.y, self.flow_axis.z]),
            flow_speed_m_per_s: self.flow_speed_override,
            electrophoretic_mobility_m2_per_v_s: self.electrophoretic_mobility_override,
            symbol_duration_s: Some(self.symbol_duration),
            sample_time_s: Some(self.sample_time),
            peak_time_s: Some(self.peak_time),
            particles_per_bit: Some(self.particles_per_bit),
            energy_budget_v2_s_per_m2: Some(self.energy_budget),
            suppression_onset: Some(self.suppression_onset),
            isi_memory: Some(self.isi_memory),
            prior_one: Some(self.prior_one),
            ..Default::default()
        };
        toml::to_string(&raw).expect("scenario serializes")
    }

    /// Calcium-ion link with the literal SI parameter listing: 10 μm receiver,
    /// transmitter 30 μm away on the negative x1 axis, D = 7.5e-6 cm²/s,
    /// T = 300 K, z = 2, μ = 1.77e11 s/kg, F_0 = 4.18e-15 N, T_d = 1 s,
    /// T_b = 2 s, t_s = t_peak = 0.1 s, N = 100, ξ = 25 V²·s/m², β = 0.8.
    pub fn reference_si_literal() -> ScenarioConfig {
        load_scenario(REFERENCE_SI_LITERAL_TOML).expect("built-in scenario is valid")
    }

    /// The evaluation scenario: [`Self::reference_si_literal`] with the field
    /// coupling and flow speed read on the centimetre scale (c_e = 100·μze,
    /// peak flow = μF_0/100), where the energy budgets move the cloud by
    /// a useful fraction of the link distance.
    pub fn reference() -> ScenarioConfig {
        load_scenario(REFERENCE_TOML).expect("built-in scenario is valid")
    }
}

pub const REFERENCE_SI_LITERAL_TOML: &str = include_str!("../fixtures/reference_si_literal.toml");
pub const REFERENCE_TOML: &str = include_str!("../fixtures/reference.toml");
