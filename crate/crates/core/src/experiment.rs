//! Evaluation campaign: CIR verification against particle simulation,
//! parameter sweeps over the energy budget and the symbol duration, and the
//! manifest tying every CSV to the inputs that produced it.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cir::{
    fa_cir_tilted, pa_cir_exact, slot_probabilities, slot_probabilities_mc, CirMethod, McOptions, Receiver,
};
use crate::config::ScenarioConfig;
use crate::detection::{bep, bep_bitlevel_mc};
use crate::drift::{DriftWaveform, PiecewiseConstantField};
use crate::error::{FamcError, Result};
use crate::quadrature::{integrate, QuadOptions};
use crate::sim::{girsanov_reweighted_hit, girsanov_weight_mean, simulate_absorbing, simulate_passive, SimSettings};
use crate::waveform::Design;

/// L1 distance between the tilted FA density and direct simulation on the
/// [0, 2] s benchmark grid (0.05 s bins, 10^5 particles, base step 1e-4 s,
/// seed 1), measured once and frozen. Later runs may exceed it by at most
/// 10%.
pub const FA_L1_REFERENCE: f64 = 0.008728;

/// Allowed growth over [`FA_L1_REFERENCE`].
pub const FA_L1_SLACK: f64 = 1.1;

/// Passive sample times used by verification.
pub const PASSIVE_CHECK_TIMES: [f64; 6] = [0.05, 0.1, 0.5, 1.0, 1.5, 2.0];

/// Drift sources selectable from the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum WaveformChoice {
    Zero,
    /// Shipped arbitrary-drift benchmark.
    Benchmark,
    File(PathBuf),
    Designed(Design),
}

impl FromStr for WaveformChoice {
    type Err = FamcError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(WaveformChoice::Zero),
            "benchmark" | "fig2" => Ok(WaveformChoice::Benchmark),
            _ => match s.strip_prefix("file:") {
                Some(p) => Ok(WaveformChoice::File(PathBuf::from(p))),
                None => s.parse::<Design>().map(WaveformChoice::Designed),
            },
        }
    }
}

impl fmt::Display for WaveformChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WaveformChoice::Zero => f.write_str("zero"),
            WaveformChoice::Benchmark => f.write_str("benchmark"),
            WaveformChoice::File(p) => write!(f, "file:{}", p.display()),
            WaveformChoice::Designed(d) => d.fmt(f),
        }
    }
}

impl WaveformChoice {
    pub fn waveform(&self, cfg: &ScenarioConfig) -> Result<DriftWaveform> {
        Ok(match self {
            WaveformChoice::Zero => DriftWaveform::zero(),
            WaveformChoice::Benchmark => DriftWaveform::direct(PiecewiseConstantField::benchmark_drift()),
            WaveformChoice::File(p) => DriftWaveform::direct(PiecewiseConstantField::from_csv(fs::File::open(p)?)?),
            WaveformChoice::Designed(d) => d.realize(cfg)?.0,
        })
    }
}

/// Settings for [`verify_cir`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifySettings {
    pub particle_count: u64,
    pub time_step: f64,
    pub seed: u64,
    /// Horizon of the FA comparison, s.
    pub horizon: f64,
    pub bin: f64,
    /// Multiplier on every analytic value; 1 except when checking that the
    /// report notices a corrupted analytic path.
    pub analytic_scale: f64,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            particle_count: 100_000,
            time_step: 1e-4,
            seed: 1,
            horizon: 2.0,
            bin: 0.05,
            analytic_scale: 1.0,
        }
    }
}

/// One named pass/fail outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Per-bin FA comparison row.
#[derive(Debug, Clone, PartialEq)]
pub struct FaRow {
    pub bin_start: f64,
    pub bin_end: f64,
    pub analytic: f64,
    pub direct: f64,
    pub direct_se: f64,
    pub reweighted: f64,
    pub reweighted_se: f64,
}

/// Per-time PA comparison row.
#[derive(Debug, Clone, PartialEq)]
pub struct PaRow {
    pub time: f64,
    pub analytic: f64,
    pub simulated: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub fa_rows: Vec<FaRow>,
    pub pa_rows: Vec<PaRow>,
    /// Σ |analytic − direct| · bin width over the FA grid.
    pub fa_l1: f64,
    pub weight_mean: f64,
    pub weight_mean_se: f64,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn write_fa_csv<W: Write>(&self, out: W, header: &str) -> Result<()> {
        let mut out = out;
        writeln!(out, "{header}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "bin_start_s",
            "bin_end_s",
            "analytic_per_s",
            "direct_mc_per_s",
            "direct_mc_std_error",
            "reweighted_mc_per_s",
            "reweighted_mc_std_error",
        ])?;
        for r in &self.fa_rows {
            w.write_record(
                [r.bin_start, r.bin_end, r.analytic, r.direct, r.direct_se, r.reweighted, r.reweighted_se]
                    .map(|v| v.to_string()),
            )?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_pa_csv<W: Write>(&self, out: W, header: &str) -> Result<()> {
        let mut out = out;
        writeln!(out, "{header}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t_s", "analytic", "simulated", "std_error"])?;
        for r in &self.pa_rows {
            w.write_record([r.time, r.analytic, r.simulated, r.std_error].map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn bin_mean_analytic(cfg: &ScenarioConfig, w: &DriftWaveform, a: f64, b: f64) -> Result<f64> {
    let lo = a.max(crate::cir::TIME_FLOOR);
    let opts = QuadOptions {
        abs_tol: 1e-10,
        ..Default::default()
    };
    let v = integrate(|t| fa_cir_tilted(cfg, w, t).unwrap_or(f64::NAN), lo, b, &w.breakpoints_in(lo, b), opts)?;
    Ok(v.value / (b - a))
}

/// Compare the analytic responses with particle simulation for one drift:
/// FA tilted density against direct and reweighted simulation, the
/// reweighted run against the direct one, the reweighting martingale at
/// t = 1 s, and the exact passive probability at [`PASSIVE_CHECK_TIMES`].
pub fn verify_cir(cfg: &ScenarioConfig, w: &DriftWaveform, vs: &VerifySettings) -> Result<VerifyReport> {
    let s = SimSettings::new(vs.particle_count, vs.time_step, vs.horizon, vs.seed, vs.bin)?;
    let direct = simulate_absorbing(cfg, w, &s)?;
    // an independent stream for the reweighted estimate
    let s_rw = SimSettings {
        seed: vs.seed.wrapping_add(0x9E37_79B9),
        ..s
    };
    let reweighted = girsanov_reweighted_hit(cfg, w, &s_rw)?;
    let probe = 1.0f64.min(vs.horizon);
    let wm = girsanov_weight_mean(cfg, w, &s_rw, probe)?;

    let mut fa_rows = Vec::with_capacity(direct.density.len());
    let mut fa_l1 = 0.0;
    let mut worst_rw = (0.0f64, 0usize);
    for i in 0..direct.density.len() {
        let (a, b) = (direct.bin_edges[i], direct.bin_edges[i + 1]);
        let analytic = vs.analytic_scale * bin_mean_analytic(cfg, w, a, b)?;
        fa_l1 += (analytic - direct.density[i]).abs() * (b - a);
        let se = (direct.std_error[i].powi(2) + reweighted.std_error[i].powi(2)).sqrt();
        let z = if se > 0.0 {
            (direct.density[i] - reweighted.density[i]).abs() / se
        } else if direct.density[i] == reweighted.density[i] {
            0.0
        } else {
            f64::INFINITY
        };
        if z > worst_rw.0 {
            worst_rw = (z, i);
        }
        fa_rows.push(FaRow {
            bin_start: a,
            bin_end: b,
            analytic,
            direct: direct.density[i],
            direct_se: direct.std_error[i],
            reweighted: reweighted.density[i],
            reweighted_se: reweighted.std_error[i],
        });
    }

    let last = PASSIVE_CHECK_TIMES[PASSIVE_CHECK_TIMES.len() - 1];
    let sp = SimSettings::new(vs.particle_count, vs.time_step.min(last / 100.0), last, vs.seed, last)?;
    let sensed = simulate_passive(cfg, w, &PASSIVE_CHECK_TIMES, &sp)?;
    let mut pa_rows = Vec::new();
    let mut worst_pa = (0.0f64, 0.0f64);
    for e in &sensed {
        let analytic = vs.analytic_scale * pa_cir_exact(cfg, w, e.time)?;
        let z = (e.probability - analytic).abs() / e.std_error.max(f64::MIN_POSITIVE);
        if z > worst_pa.0 {
            worst_pa = (z, e.time);
        }
        pa_rows.push(PaRow {
            time: e.time,
            analytic,
            simulated: e.probability,
            std_error: e.std_error,
        });
    }

    let bound = FA_L1_SLACK * FA_L1_REFERENCE;
    let checks = vec![
        Check {
            name: "pa_exact_vs_simulation_3se".into(),
            passed: worst_pa.0 <= 3.0,
            detail: format!("max |z| = {:.3} at t = {} s", worst_pa.0, worst_pa.1),
        },
        Check {
            name: "fa_reweighted_vs_direct_3se".into(),
            passed: worst_rw.0 <= 3.0,
            detail: format!(
                "max |z| = {:.3} in bin starting {} s",
                worst_rw.0, direct.bin_edges[worst_rw.1]
            ),
        },
        Check {
            name: "reweighting_weight_mean_3se".into(),
            passed: (wm.mean - 1.0).abs() <= 3.0 * wm.std_error,
            detail: format!("E[M] at {} s = {} ± {}", probe, wm.mean, wm.std_error),
        },
        Check {
            name: "fa_tilted_l1_regression".into(),
            passed: fa_l1 <= bound,
            detail: format!("L1 = {fa_l1:.6} (bound {bound:.6})"),
        },
    ];
    Ok(VerifyReport {
        fa_rows,
        pa_rows,
        fa_l1,
        weight_mean: wm.mean,
        weight_mean_se: wm.std_error,
        checks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepVariable {
    /// Energy budget ξ, V²·s/m².
    Xi,
    /// Symbol duration T_b, s.
    Tb,
}

impl SweepVariable {
    /// Unit-suffixed column name.
    pub fn column(&self) -> &'static str {
        match self {
            SweepVariable::Xi => "xi_V2_s_per_m2",
            SweepVariable::Tb => "tb_s",
        }
    }

    fn apply(&self, cfg: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let mut c = cfg.clone();
        match self {
            SweepVariable::Xi => c.energy_budget = value,
            SweepVariable::Tb => c.symbol_duration = value,
        }
        c.finalize()
    }
}

impl FromStr for SweepVariable {
    type Err = FamcError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xi" => Ok(SweepVariable::Xi),
            "tb" => Ok(SweepVariable::Tb),
            other => Err(FamcError::InvalidArgument(format!(
                "unknown sweep variable {other:?} (expected xi or tb)"
            ))),
        }
    }
}

impl fmt::Display for SweepVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepVariable::Xi => "xi",
            SweepVariable::Tb => "tb",
        })
    }
}

/// Optional Monte Carlo confirmation inside a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepMc {
    pub particle_count: u64,
    pub time_step: f64,
    pub frames: u64,
}

impl Default for SweepMc {
    fn default() -> Self {
        SweepMc {
            particle_count: 100_000,
            time_step: 1e-4,
            frames: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub designs: Vec<Design>,
    pub receiver: Receiver,
    pub seeds: Vec<u64>,
    /// Overrides the scenario's particles per bit.
    pub particles_per_bit: Option<u64>,
    pub mc: Option<SweepMc>,
}

pub const DEFAULT_XI_GRID: [f64; 7] = [0.0, 5.0, 10.0, 25.0, 50.0, 100.0, 200.0];
pub const DEFAULT_TB_GRID: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
/// Energy budget held fixed in the symbol-duration sweep.
pub const TB_SWEEP_BUDGET: f64 = 25.0;

impl SweepSpec {
    /// Default grid for a variable and receiver: ξ ∈ {0, …, 200} or
    /// T_b ∈ {0.5, 1, 2, 4} s; FA compares MHP (β = 0.5, 0.8) and PA
    /// compares MSP against both baselines. PA runs use N = 1000.
    pub fn default_for(variable: SweepVariable, receiver: Receiver, seed: u64) -> Self {
        let values = match variable {
            SweepVariable::Xi => DEFAULT_XI_GRID.to_vec(),
            SweepVariable::Tb => DEFAULT_TB_GRID.to_vec(),
        };
        let (designs, n) = match receiver {
            Receiver::FullyAbsorbing => (
                vec![Design::NoDrift, Design::Undesign, Design::Mhp { beta: 0.5 }, Design::Mhp { beta: 0.8 }],
                None,
            ),
            Receiver::Passive => (vec![Design::NoDrift, Design::Undesign, Design::Msp], Some(1000)),
        };
        SweepSpec {
            variable,
            values,
            designs,
            receiver,
            seeds: vec![seed],
            particles_per_bit: n,
            mc: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.designs.is_empty() {
            return Err(FamcError::InvalidArgument("sweep needs values and designs".into()));
        }
        if self.seeds.is_empty() {
            return Err(FamcError::InvalidArgument("sweep needs at least one seed".into()));
        }
        for d in &self.designs {
            let ok = match (d, self.receiver) {
                (Design::Mhp { .. }, Receiver::Passive) | (Design::Msp, Receiver::FullyAbsorbing) => false,
                _ => true,
            };
            if !ok {
                return Err(FamcError::InvalidArgument(format!(
                    "design {d} does not apply to the {} receiver",
                    self.receiver
                )));
            }
        }
        Ok(())
    }

    /// Stable text form used in the manifest hash.
    fn canonical(&self) -> String {
        let designs: Vec<String> = self.designs.iter().map(|d| d.to_string()).collect();
        format!(
            "variable={};values={:?};designs={:?};receiver={};seeds={:?};n={:?};mc={:?}",
            self.variable, self.values, designs, self.receiver, self.seeds, self.particles_per_bit, self.mc
        )
    }

    /// Output file name.
    pub fn file_name(&self) -> String {
        format!("sweep_{}_{}.csv", self.variable, self.receiver)
    }
}

/// One tidy output row.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub design: String,
    pub seed: Option<u64>,
    pub metric: &'static str,
    pub result: f64,
    pub note: String,
}

fn sweep_point(cfg: &ScenarioConfig, spec: &SweepSpec, value: f64, design: Design) -> Vec<SweepRow> {
    let row = |metric, result: f64, seed: Option<u64>, note: String| SweepRow {
        value,
        design: design.to_string(),
        seed,
        metric,
        result,
        note,
    };
    let run = || -> Result<Vec<SweepRow>> {
        let mut c = spec.variable.apply(cfg, value)?;
        if spec.variable == SweepVariable::Tb {
            c.energy_budget = TB_SWEEP_BUDGET;
        }
        if let Some(n) = spec.particles_per_bit {
            c.particles_per_bit = n;
        }
        let (w, d) = design.realize(&c)?;
        let slots = c.isi_memory;
        let table = slot_probabilities(&c, &w, spec.receiver, slots)?;
        let b = bep(&table, &c)?;
        let mut rows = vec![
            row("v1_V_per_m", d.v1, None, String::new()),
            row("v2_V_per_m", d.v2, None, String::new()),
            row("energy_used_V2_s_per_m2", d.energy_used, None, String::new()),
            row("saturated", if d.saturated { 1.0 } else { 0.0 }, None, String::new()),
            row("p1", table.p(1), None, String::new()),
            row("p2", table.slot_probs.get(1).copied().unwrap_or(0.0), None, String::new()),
            row("p1_minus_p2", table.signal_to_isi_gap(), None, String::new()),
            row("bep_analytic", b.reported(), None, String::new()),
        ];
        if let Some(mc) = spec.mc {
            for &seed in &spec.seeds {
                let mc_table = slot_probabilities_mc(
                    &c,
                    &w,
                    spec.receiver,
                    slots,
                    CirMethod::MonteCarlo,
                    McOptions {
                        particle_count: mc.particle_count,
                        time_step: mc.time_step,
                        seed,
                    },
                )?;
                let bits = bep_bitlevel_mc(&table, &c, mc.frames, seed)?;
                let (lo, hi) = bits.interval.expect("Monte Carlo interval");
                let s = Some(seed);
                rows.push(row("p1_mc", mc_table.p(1), s, String::new()));
                rows.push(row("p2_mc", mc_table.slot_probs.get(1).copied().unwrap_or(0.0), s, String::new()));
                rows.push(row("bep_mc", bits.reported(), s, String::new()));
                rows.push(row("mc_ci_low", lo, s, String::new()));
                rows.push(row("mc_ci_high", hi, s, String::new()));
            }
        }
        Ok(rows)
    };
    match run() {
        Ok(rows) => rows,
        Err(e) => {
            log::warn!("sweep point {}={value} design {design} failed: {e}", spec.variable);
            vec![row("error", f64::NAN, None, e.to_string())]
        }
    }
}

/// Evaluate every grid point × design (in parallel), returning rows in grid
/// order. Failures become `error` rows; the sweep continues.
pub fn sweep(spec: &SweepSpec, cfg: &ScenarioConfig) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    let points: Vec<(f64, Design)> = spec
        .values
        .iter()
        .flat_map(|&v| spec.designs.iter().map(move |&d| (v, d)))
        .collect();
    let rows: Vec<Vec<SweepRow>> = points
        .par_iter()
        .map(|&(v, d)| sweep_point(cfg, spec, v, d))
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

/// Write sweep rows as a tidy CSV preceded by `# manifest <hash>`.
pub fn write_sweep_csv<W: Write>(mut out: W, spec: &SweepSpec, rows: &[SweepRow], hash: &str) -> Result<()> {
    writeln!(out, "# manifest {hash}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([spec.variable.column(), "design", "receiver", "seed", "metric", "value", "note"])?;
    let rx = spec.receiver.to_string();
    for r in rows {
        w.write_record([
            r.value.to_string(),
            r.design.clone(),
            rx.clone(),
            r.seed.map(|s| s.to_string()).unwrap_or_default(),
            r.metric.to_string(),
            r.result.to_string(),
            r.note.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Provenance of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    /// Hash of scenario, software version, seeds and run description; the
    /// value stamped into every output header.
    pub manifest_hash: String,
    pub scenario_hash: String,
    pub software_version: String,
    pub seeds: Vec<u64>,
    pub outputs: Vec<String>,
    pub wall_clock_s: f64,
}

fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl RunManifest {
    /// Manifest for a run described by `description`. Wall-clock time is
    /// recorded but never hashed.
    pub fn new(cfg: &ScenarioConfig, seeds: &[u64], description: &str) -> Self {
        let scenario = cfg.to_toml_string();
        let version = env!("CARGO_PKG_VERSION").to_string();
        let manifest_hash = sha256_hex(&format!("{scenario}\n{version}\n{seeds:?}\n{description}"));
        RunManifest {
            manifest_hash,
            scenario_hash: sha256_hex(&scenario),
            software_version: version,
            seeds: seeds.to_vec(),
            outputs: Vec::new(),
            wall_clock_s: 0.0,
        }
    }

    pub fn header(&self) -> String {
        format!("# manifest {}", self.manifest_hash)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| FamcError::Io(e.into()))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }
}

/// Run each sweep, write `sweep_<var>_<rx>.csv` files and `manifest.json`
/// into `out_dir`. Returns the manifest.
pub fn run_sweeps(specs: &[SweepSpec], cfg: &ScenarioConfig, out_dir: &Path) -> Result<RunManifest> {
    let start = Instant::now();
    fs::create_dir_all(out_dir)?;
    let mut seeds: Vec<u64> = specs.iter().flat_map(|s| s.seeds.iter().copied()).collect();
    seeds.sort_unstable();
    seeds.dedup();
    let description: Vec<String> = specs.iter().map(SweepSpec::canonical).collect();
    let mut manifest = RunManifest::new(cfg, &seeds, &description.join("|"));
    for spec in specs {
        let rows = sweep(spec, cfg)?;
        let name = spec.file_name();
        let file = fs::File::create(out_dir.join(&name))?;
        write_sweep_csv(std::io::BufWriter::new(file), spec, &rows, &manifest.manifest_hash)?;
        manifest.outputs.push(name);
    }
    manifest.wall_clock_s = start.elapsed().as_secs_f64();
    manifest.write_json(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}
