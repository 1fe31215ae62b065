//! `chargescope`: segment battery logs into charging events, profile devices,
//! detect charging behavior, generate synthetic corpora and summarise them.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use chargescope::config::AnalysisConfig;
use chargescope::curves::GroupKey;
use chargescope::domain::{Charger, FuelGauge, Health, Screen, Technique, Variant};
use chargescope::export::{export_behavior, export_profiles, export_segments, write_health};
use chargescope::ingestion::{InputFormat, TimeUnit};
use chargescope::pipeline::{analyze_input, build_profiles, InputSet, ScanSummary};
use chargescope::report::build_report;
use chargescope::synthgen::{
    generate_corpus, write_corpus, FluctuationSpec, FullPluggedSpec, Manifest, ManifestEntry,
    TraceSpec,
};

/// Rejected-line diagnostics printed before summarising the rest.
const MAX_DIAGNOSTICS: usize = 20;

#[derive(Parser)]
#[command(name = "chargescope", version, about = "Smartphone battery telemetry analytics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Label charging events and write one CSV row per charge step.
    Segment(SegmentArgs),
    /// Classify devices (or models) and write profiles, curves and health.
    Profile(ProfileArgs),
    /// Detect SOC fluctuation and at-full charging per user.
    Behavior(BehaviorArgs),
    /// Generate a synthetic corpus with a ground-truth sidecar.
    Synth(SynthArgs),
    /// Summarise a corpus as Markdown or JSON.
    Report(ReportArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Input files (JSONL, or CSV by extension); read in order.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Override the extension-based format guess.
    #[arg(long)]
    format: Option<InputFormat>,
    /// Timestamp unit of the input.
    #[arg(long)]
    time_unit: Option<TimeUnit>,
    /// TOML configuration file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    /// Charger filter: ac, usb or any.
    #[arg(long)]
    charger: Option<String>,
    /// Screen filter: on, off or any.
    #[arg(long)]
    screen: Option<String>,
    /// Comma-separated health values to keep, or any.
    #[arg(long)]
    health: Option<String>,
    /// Keep only this device model.
    #[arg(long)]
    model: Option<String>,
    /// C-rate at or below which a step closes its event.
    #[arg(long)]
    termination_c: Option<f64>,
    /// Count event-closing steps in rate statistics.
    #[arg(long)]
    include_terminal: bool,
}

#[derive(Args)]
struct SegmentArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Labeled-step CSV.
    #[arg(long, short)]
    output: PathBuf,
    /// Also write per-step (or per-event mean) C-rates to this CSV.
    #[arg(long)]
    rates: Option<PathBuf>,
    /// One mean rate per event in the rate export.
    #[arg(long)]
    per_event_mean: bool,
}

#[derive(Args)]
struct ProfileArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Output directory for profiles.jsonl, curves.csv, health.csv, run.json.
    #[arg(long, short)]
    output: PathBuf,
    /// Profile per device or pool events per model.
    #[arg(long)]
    group: Option<GroupKey>,
}

#[derive(Args)]
struct BehaviorArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Behavior JSONL, one line per user.
    #[arg(long, short)]
    output: PathBuf,
    /// Nominal battery capacity; enables the wasted-energy estimate.
    #[arg(long)]
    capacity_mah: Option<f64>,
    /// Percent recharged per maintenance cycle.
    #[arg(long)]
    maintenance_pct: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Markdown,
    Json,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Report file; standard output when absent.
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "markdown")]
    report_format: ReportFormat,
    #[arg(long)]
    capacity_mah: Option<f64>,
    #[arg(long)]
    maintenance_pct: Option<f64>,
    /// Rate quantiles from one mean rate per event instead of per step.
    #[arg(long)]
    per_event_mean: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Corpus JSONL.
    #[arg(long, short)]
    output: PathBuf,
    /// Ground-truth sidecar; defaults to <output>.truth.json.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// TOML or JSON manifest of strata; replaces the single-stratum flags.
    #[arg(long, conflicts_with_all = ["count", "technique", "variant", "fuel_gauge", "loss", "noise", "sessions", "fluctuation", "full_plugged_hours"])]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value = "cc_cv")]
    technique: Technique,
    /// cv_first or cc_tail; repeatable.
    #[arg(long)]
    variant: Vec<Variant>,
    #[arg(long, default_value = "coulomb_counter")]
    fuel_gauge: FuelGauge,
    /// Capacity loss in percent.
    #[arg(long, default_value_t = 0.0)]
    loss: f64,
    /// Voltage noise standard deviation, millivolts.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 1)]
    sessions: u32,
    /// Fluctuation pattern as LEVEL:REVERSALS, e.g. 5:2.
    #[arg(long)]
    fluctuation: Option<String>,
    /// Hours left plugged in at 100%.
    #[arg(long)]
    full_plugged_hours: Option<f64>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Segment(a) => cmd_segment(a),
        Command::Profile(a) => cmd_profile(a),
        Command::Behavior(a) => cmd_behavior(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn parse_health_list(raw: &str) -> Result<Option<BTreeSet<Health>>> {
    if raw.eq_ignore_ascii_case("any") {
        return Ok(None);
    }
    let mut set = BTreeSet::new();
    for part in raw.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let h: Health = part.parse().unwrap_or(Health::Other);
        if h == Health::Other && !part.eq_ignore_ascii_case("other") {
            bail!("unknown health value {part:?}");
        }
        set.insert(h);
    }
    Ok(Some(set))
}

fn parse_optional<T: std::str::FromStr<Err = String>>(raw: &str) -> Result<Option<T>> {
    if raw.eq_ignore_ascii_case("any") {
        Ok(None)
    } else {
        raw.parse().map(Some).map_err(anyhow::Error::msg)
    }
}

impl InputArgs {
    /// Defaults, then the config file, then flags.
    fn config(&self) -> Result<AnalysisConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("cannot read config {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?
            }
            None => AnalysisConfig::default(),
        };
        if let Some(u) = self.time_unit {
            cfg.time_unit = u;
        }
        if let Some(c) = &self.charger {
            cfg.filter.charger = parse_optional::<Charger>(c)?;
        }
        if let Some(s) = &self.screen {
            cfg.filter.screen = parse_optional::<Screen>(s)?;
        }
        if let Some(h) = &self.health {
            cfg.filter.health = parse_health_list(h)?;
        }
        if let Some(m) = &self.model {
            cfg.filter.model = Some(m.clone());
        }
        if let Some(t) = self.termination_c {
            cfg.segmentation.termination_c = t;
        }
        if self.include_terminal {
            cfg.segmentation.include_terminal = true;
        }
        Ok(cfg)
    }

    fn open(&self, cfg: &AnalysisConfig) -> Result<(InputSet, ScanSummary)> {
        for p in &self.inputs {
            if !p.is_file() {
                bail!("cannot read input {}: no such file", p.display());
            }
        }
        let mut input = InputSet::new(self.inputs.clone(), cfg.time_unit);
        input.format = self.format;
        let scan = input.scan()?;
        for d in scan.rejected.iter().take(MAX_DIAGNOSTICS) {
            eprintln!("warning: {}:{}: {}", d.path.display(), d.diagnostic.line, d.diagnostic.reason);
        }
        if scan.rejected.len() > MAX_DIAGNOSTICS {
            eprintln!("warning: {} more rejected lines", scan.rejected.len() - MAX_DIAGNOSTICS);
        }
        if !scan.contiguous {
            eprintln!("note: users are interleaved across the input; grouping in memory");
        }
        Ok((input, scan))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(serde::Serialize)]
struct RunRecord<'a, C: serde::Serialize> {
    inputs: &'a [PathBuf],
    samples_read: u64,
    rejected_lines: usize,
    counts: C,
    config: &'a AnalysisConfig,
}

fn cmd_segment(a: SegmentArgs) -> Result<ExitCode> {
    let mut cfg = a.input.config()?;
    cfg.per_event_mean |= a.per_event_mean;
    let cfg = cfg.finalize()?;
    let (input, scan) = a.input.open(&cfg)?;
    let steps = create(&a.output)?;
    let rates = a.rates.as_deref().map(create).transpose()?;
    let counts = export_segments(&input, &scan, &cfg, a.input.jobs, steps, rates)?;
    write_json(
        &sidecar(&a.output, ".run.json"),
        &RunRecord {
            inputs: &a.input.inputs,
            samples_read: scan.samples,
            rejected_lines: scan.rejected.len(),
            counts,
            config: &cfg,
        },
    )?;
    if counts.steps == 0 {
        eprintln!("warning: no charge steps left after filtering");
    }
    eprintln!(
        "{} samples, {} users, {} events, {} steps",
        scan.samples, counts.users, counts.events, counts.steps
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_profile(a: ProfileArgs) -> Result<ExitCode> {
    let mut cfg = a.input.config()?;
    if let Some(g) = a.group {
        cfg.group = g;
    }
    let cfg = cfg.finalize()?;
    let (input, scan) = a.input.open(&cfg)?;
    fs::create_dir_all(&a.output).with_context(|| format!("cannot create {}", a.output.display()))?;
    let profiles = create(&a.output.join("profiles.jsonl"))?;
    let curves = create(&a.output.join("curves.csv"))?;
    let counts = export_profiles(&input, &scan, &cfg, a.input.jobs, profiles, curves)?;
    let mut health = create(&a.output.join("health.csv"))?;
    write_health(&mut health, &counts.health)?;
    health.flush()?;
    write_json(
        &a.output.join("run.json"),
        &RunRecord {
            inputs: &a.input.inputs,
            samples_read: scan.samples,
            rejected_lines: scan.rejected.len(),
            counts: &counts,
            config: &cfg,
        },
    )?;
    eprintln!("{} samples, {} profiles", scan.samples, counts.profiles);
    if counts.profiles == 0 {
        eprintln!("warning: no charging events, no profiles written");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_behavior(a: BehaviorArgs) -> Result<ExitCode> {
    let mut cfg = a.input.config()?;
    if a.capacity_mah.is_some() {
        cfg.behavior.capacity_mah = a.capacity_mah;
    }
    if let Some(p) = a.maintenance_pct {
        cfg.behavior.maintenance_pct_per_cycle = p;
    }
    let cfg = cfg.finalize()?;
    let (input, scan) = a.input.open(&cfg)?;
    let out = create(&a.output)?;
    let counts = export_behavior(&input, &scan, &cfg, a.input.jobs, out)?;
    eprintln!(
        "{} users, {} with fluctuation or at-full episodes",
        counts.users, counts.users_with_episodes
    );
    if counts.users == 0 {
        eprintln!("warning: no samples to analyse");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(a: ReportArgs) -> Result<ExitCode> {
    let mut cfg = a.input.config()?;
    if a.capacity_mah.is_some() {
        cfg.behavior.capacity_mah = a.capacity_mah;
    }
    if let Some(p) = a.maintenance_pct {
        cfg.behavior.maintenance_pct_per_cycle = p;
    }
    cfg.per_event_mean |= a.per_event_mean;
    let cfg = cfg.finalize()?;
    let (input, scan) = a.input.open(&cfg)?;
    let analyses = analyze_input(&input, &scan, &cfg, a.input.jobs)?;
    let profiles = build_profiles(&analyses, &cfg);
    let report = build_report(&scan, &analyses, &profiles, &cfg);
    let text = match a.report_format {
        ReportFormat::Markdown => report.to_markdown(),
        ReportFormat::Json => serde_json::to_string_pretty(&report)? + "\n",
    };
    match &a.output {
        Some(path) => {
            let mut w = create(path)?;
            w.write_all(text.as_bytes())?;
            w.flush()?;
        }
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    if profiles.is_empty() {
        eprintln!("warning: no charging events, report has no profiles");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_fluctuation(raw: &str) -> Result<FluctuationSpec> {
    let (level, reversals) = raw
        .split_once(':')
        .context("fluctuation must be LEVEL:REVERSALS")?;
    Ok(FluctuationSpec {
        level: level.trim().parse().context("fluctuation level")?,
        reversals: reversals.trim().parse().context("fluctuation reversals")?,
    })
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read manifest {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let manifest = if is_json {
        serde_json::from_str(&text)?
    } else {
        toml::from_str(&text).with_context(|| format!("invalid manifest {}", path.display()))?
    };
    Ok(manifest)
}

fn cmd_synth(a: SynthArgs) -> Result<ExitCode> {
    let manifest = match &a.manifest {
        Some(path) => {
            let mut m = load_manifest(path)?;
            if a.seed != 0 {
                m.seed = a.seed;
            }
            m
        }
        None => {
            let mut spec = TraceSpec::new(a.technique, a.fuel_gauge);
            spec.variants = a.variant.iter().copied().collect();
            spec.capacity_loss_pct = a.loss;
            spec.voltage_noise_mv = a.noise;
            spec.sessions = a.sessions;
            spec.behavior.fluctuation = a.fluctuation.as_deref().map(parse_fluctuation).transpose()?;
            spec.behavior.full_plugged = a.full_plugged_hours.map(|hours| FullPluggedSpec {
                hours,
                ..Default::default()
            });
            Manifest {
                seed: a.seed,
                entries: vec![ManifestEntry { count: a.count, spec }],
            }
        }
    };
    let traces = generate_corpus(&manifest)?;
    let truth = write_corpus(create(&a.output)?, &traces)?;
    let truth_path = a.truth.unwrap_or_else(|| sidecar(&a.output, ".truth.json"));
    write_json(
        &truth_path,
        &serde_json::json!({ "manifest": manifest, "truth": truth }),
    )?;
    let samples: usize = traces.iter().map(|t| t.samples.len()).sum();
    eprintln!("{} users, {samples} samples", traces.len());
    Ok(ExitCode::SUCCESS)
}
