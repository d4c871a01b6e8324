use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use famc::cir::{slot_probabilities, slot_probabilities_mc, CirMethod, McOptions, Receiver};
use famc::config::{load_scenario_file, ScenarioConfig};
use famc::detection::{bep, bep_bitlevel_mc};
use famc::experiment::{
    run_sweeps, verify_cir, RunManifest, SweepMc, SweepSpec, SweepVariable, VerifySettings, WaveformChoice,
};
use famc::sim::{simulate_absorbing, simulate_passive, SimSettings};
use famc::waveform::Design;
use famc::Result;

/// Flow-assisted molecular communication link simulator.
#[derive(Parser)]
#[command(name = "famc", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Scenario TOML; the built-in reference scenario when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Directory for outputs given as bare file names.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    /// Add Monte Carlo confirmation (10^5 particles) to cir, bep and sweep.
    #[arg(long, global = true)]
    with_mc: bool,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Absorbing-receiver hit-time histogram by particle simulation.
    Simulate {
        #[arg(long, default_value = "fa")]
        receiver: Receiver,
        #[arg(long, default_value = "zero")]
        waveform: WaveformChoice,
        #[arg(long, default_value_t = 100_000)]
        particles: u64,
        #[arg(long, default_value_t = 1e-4)]
        dt: f64,
        #[arg(long, default_value_t = 2.0)]
        horizon: f64,
        #[arg(long, default_value_t = 0.05)]
        bin: f64,
        #[arg(long, default_value = "hist.csv")]
        out: PathBuf,
    },
    /// Per-slot received probabilities.
    Cir {
        #[arg(long, default_value = "fa")]
        receiver: Receiver,
        #[arg(long, default_value = "zero")]
        waveform: WaveformChoice,
        /// Number of slots; the scenario's ISI memory when omitted.
        #[arg(long)]
        slots: Option<usize>,
        #[arg(long, default_value = "cir.csv")]
        out: PathBuf,
    },
    /// Design an electric-field waveform under the energy budget.
    Optimize {
        /// mhp, msp, undesign or none.
        #[arg(long, default_value = "mhp")]
        method: String,
        #[arg(long, default_value_t = 0.8)]
        beta: f64,
        #[arg(long, default_value = "design.csv")]
        out: PathBuf,
    },
    /// Bit error probability of a design over energy budgets.
    Bep {
        #[arg(long, default_value = "mhp")]
        design: String,
        #[arg(long)]
        receiver: Option<Receiver>,
        /// Energy budgets; the scenario's own when omitted.
        #[arg(long, value_delimiter = ',')]
        xi: Vec<f64>,
        #[arg(long, default_value = "bep.csv")]
        out: PathBuf,
    },
    /// Compare analytic responses with particle simulation; exit 1 on failure.
    Verify {
        #[arg(long, default_value = "benchmark")]
        waveform: WaveformChoice,
        #[arg(long, default_value_t = 100_000)]
        particles: u64,
        #[arg(long, default_value_t = 1e-4)]
        dt: f64,
    },
    /// Energy-budget or symbol-duration sweeps for both receivers.
    Sweep {
        #[arg(long, default_value = "xi")]
        variable: SweepVariable,
        /// Receivers to sweep; both when omitted.
        #[arg(long, value_delimiter = ',')]
        receiver: Vec<Receiver>,
        /// Grid values; the default grid when omitted.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
}

fn out_path(dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() || p.parent().is_some_and(|d| !d.as_os_str().is_empty()) {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

fn create(dir: &Path, p: &Path) -> Result<(PathBuf, BufWriter<fs::File>)> {
    fs::create_dir_all(dir)?;
    let path = out_path(dir, p);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok((path.clone(), BufWriter::new(fs::File::create(path)?)))
}

fn design_named(name: &str, beta: f64) -> Result<Design> {
    if name == "mhp" {
        Ok(Design::Mhp { beta })
    } else {
        name.parse()
    }
}

fn default_receiver(d: Design) -> Receiver {
    match d {
        Design::Msp => Receiver::Passive,
        _ => Receiver::FullyAbsorbing,
    }
}

/// Finish a run: stamp the manifest and write it next to the outputs.
fn finish(g: &Global, mut m: RunManifest, outputs: &[PathBuf], start: std::time::Instant) -> Result<()> {
    m.outputs = outputs.iter().map(|p| p.display().to_string()).collect();
    m.wall_clock_s = start.elapsed().as_secs_f64();
    m.write_json(&g.out_dir.join("manifest.json"))?;
    for p in outputs {
        log::info!("wrote {}", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let g = &cli.global;
    let cfg = match &g.config {
        Some(p) => load_scenario_file(p)?,
        None => ScenarioConfig::reference(),
    };
    let start = std::time::Instant::now();
    let mc = McOptions {
        particle_count: SweepMc::default().particle_count,
        time_step: SweepMc::default().time_step,
        seed: g.seed,
    };
    match &cli.command {
        Command::Simulate {
            receiver,
            waveform,
            particles,
            dt,
            horizon,
            bin,
            out,
        } => {
            let w = waveform.waveform(&cfg)?;
            let s = SimSettings::new(*particles, *dt, *horizon, g.seed, *bin)?;
            let m = RunManifest::new(&cfg, &[g.seed], &format!("simulate {receiver} {waveform} {s:?}"));
            let (path, mut f) = create(&g.out_dir, out)?;
            writeln!(f, "{}", m.header())?;
            let mut csv = csv::Writer::from_writer(f);
            match receiver {
                Receiver::FullyAbsorbing => {
                    let h = simulate_absorbing(&cfg, &w, &s)?;
                    csv.write_record(["bin_start_s", "density_per_s", "std_error"])?;
                    for i in 0..h.density.len() {
                        csv.write_record([h.bin_edges[i], h.density[i], h.std_error[i]].map(|v| v.to_string()))?;
                    }
                    eprintln!("captured fraction {} ± {}", h.total_hit_fraction, h.total_std_error);
                }
                Receiver::Passive => {
                    let n = (horizon / bin).round() as usize;
                    let times: Vec<f64> = (1..=n).map(|i| i as f64 * bin).collect();
                    csv.write_record(["t_s", "probability", "std_error"])?;
                    for e in simulate_passive(&cfg, &w, &times, &s)? {
                        csv.write_record([e.time, e.probability, e.std_error].map(|v| v.to_string()))?;
                    }
                }
            }
            csv.flush()?;
            finish(g, m, &[path], start)?;
        }
        Command::Cir {
            receiver,
            waveform,
            slots,
            out,
        } => {
            let w = waveform.waveform(&cfg)?;
            let slots = slots.unwrap_or(cfg.isi_memory);
            let m = RunManifest::new(
                &cfg,
                &[g.seed],
                &format!("cir {receiver} {waveform} {slots} mc={}", g.with_mc),
            );
            let mut tables = vec![slot_probabilities(&cfg, &w, *receiver, slots)?];
            if g.with_mc {
                tables.push(slot_probabilities_mc(&cfg, &w, *receiver, slots, CirMethod::MonteCarlo, mc)?);
            }
            let (path, mut f) = create(&g.out_dir, out)?;
            writeln!(f, "{}", m.header())?;
            let mut csv = csv::Writer::from_writer(f);
            csv.write_record(["slot", "value", "method"])?;
            for t in &tables {
                for (i, p) in t.slot_probs.iter().enumerate() {
                    csv.write_record([(i + 1).to_string(), p.to_string(), t.method.to_string()])?;
                }
            }
            csv.flush()?;
            finish(g, m, &[path], start)?;
        }
        Command::Optimize { method, beta, out } => {
            let d = design_named(method, *beta)?;
            let (_, fd) = d.realize(&cfg)?;
            let m = RunManifest::new(&cfg, &[], &format!("optimize {d}"));
            let (path, mut f) = create(&g.out_dir, out)?;
            writeln!(f, "{}", m.header())?;
            let mut csv = csv::Writer::from_writer(f);
            csv.write_record([
                "v1_V_per_m",
                "v2_V_per_m",
                "t_p1_s",
                "t_p2_s",
                "energy_used",
                "residual",
                "saturated",
            ])?;
            csv.write_record([
                fd.v1.to_string(),
                fd.v2.to_string(),
                fd.t_p1().to_string(),
                fd.t_p2().to_string(),
                fd.energy_used.to_string(),
                fd.residual.to_string(),
                fd.saturated.to_string(),
            ])?;
            csv.flush()?;
            finish(g, m, &[path], start)?;
        }
        Command::Bep {
            design,
            receiver,
            xi,
            out,
        } => {
            let d = design_named(design, 0.8)?;
            let rx = receiver.unwrap_or_else(|| default_receiver(d));
            let budgets = if xi.is_empty() { vec![cfg.energy_budget] } else { xi.clone() };
            let m = RunManifest::new(
                &cfg,
                &[g.seed],
                &format!("bep {d} {rx} {budgets:?} mc={}", g.with_mc),
            );
            let (path, mut f) = create(&g.out_dir, out)?;
            writeln!(f, "{}", m.header())?;
            let mut csv = csv::Writer::from_writer(f);
            csv.write_record([
                "sweep_var",
                "p1",
                "p2",
                "p1_minus_p2",
                "bep_analytic",
                "bep_mc",
                "mc_ci_low",
                "mc_ci_high",
            ])?;
            for &budget in &budgets {
                let mut c = cfg.clone();
                c.energy_budget = budget;
                let c = c.finalize()?;
                let (w, _) = d.realize(&c)?;
                let t = slot_probabilities(&c, &w, rx, c.isi_memory)?;
                let b = bep(&t, &c)?;
                let (bmc, lo, hi) = if g.with_mc {
                    let r = bep_bitlevel_mc(&t, &c, SweepMc::default().frames, g.seed)?;
                    let (lo, hi) = r.interval.expect("Monte Carlo interval");
                    (r.reported().to_string(), lo.to_string(), hi.to_string())
                } else {
                    Default::default()
                };
                csv.write_record([
                    budget.to_string(),
                    t.p(1).to_string(),
                    t.slot_probs.get(1).copied().unwrap_or(0.0).to_string(),
                    t.signal_to_isi_gap().to_string(),
                    b.reported().to_string(),
                    bmc,
                    lo,
                    hi,
                ])?;
            }
            csv.flush()?;
            finish(g, m, &[path], start)?;
        }
        Command::Verify {
            waveform,
            particles,
            dt,
        } => {
            let w = waveform.waveform(&cfg)?;
            let vs = VerifySettings {
                particle_count: *particles,
                time_step: *dt,
                seed: g.seed,
                ..Default::default()
            };
            let m = RunManifest::new(&cfg, &[g.seed], &format!("verify {waveform} {vs:?}"));
            let report = verify_cir(&cfg, &w, &vs)?;
            let (fa_path, fa) = create(&g.out_dir, Path::new("verify_fa.csv"))?;
            report.write_fa_csv(fa, &m.header())?;
            let (pa_path, pa) = create(&g.out_dir, Path::new("verify_pa.csv"))?;
            report.write_pa_csv(pa, &m.header())?;
            let mut stdout = io::stdout().lock();
            for c in &report.checks {
                writeln!(stdout, "{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
            }
            finish(g, m, &[fa_path, pa_path], start)?;
            return Ok(report.passed());
        }
        Command::Sweep {
            variable,
            receiver,
            values,
        } => {
            let receivers = if receiver.is_empty() {
                vec![Receiver::FullyAbsorbing, Receiver::Passive]
            } else {
                receiver.clone()
            };
            let specs: Vec<SweepSpec> = receivers
                .iter()
                .map(|&rx| {
                    let mut s = SweepSpec::default_for(*variable, rx, g.seed);
                    if !values.is_empty() {
                        s.values = values.clone();
                    }
                    if g.with_mc {
                        s.mc = Some(SweepMc::default());
                    }
                    s
                })
                .collect();
            let m = run_sweeps(&specs, &cfg, &g.out_dir)?;
            for o in &m.outputs {
                log::info!("wrote {}", g.out_dir.join(o).display());
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.global.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
