//! Command-line front end: dataset generation, training runs, evaluation,
//! sweeps, continual-learning sequences, statistics, and figure-CSV export.
//!
//! Every run writes into a run directory (config copy, `checkpoints/`,
//! `metrics.csv`, `trace.log`, `losses.csv`) guarded by a lock file. All
//! randomness comes from seeds in the config file.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gossipgan::channel::{
    channel_matrix, normalize_dataset, sample_scenario, ArrayGeometry, ChannelConfig, CsiSample,
    ScenarioSpec,
};
use gossipgan::dae::build_dae;
use gossipgan::io::checkpoint::{load_checkpoint, save_checkpoint, ModelKind};
use gossipgan::io::dataset::{export_dataset, import_dataset};
use gossipgan::io::metrics::{append_rows, MetricsRow};
use gossipgan::io::rundir::RunDir;
use gossipgan::io::{load_toml, save_toml};
use gossipgan::pipeline::{
    continual_baselines, continual_run, run_baseline, run_gossip_gan, statistics, sweep,
    ContinualBaseline, ExperimentConfig, RunArtifacts, RunKind, RunReport, SweepAxis,
};
use gossipgan::seeds;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "gossipgan", version, about = "Decentralized GAN-trained CSI feedback, desk scale")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a CSI dataset file (plus a TOML sidecar with the settings).
    GenData(GenDataArgs),
    /// Decentralized training per a config file, then synthesize, train the
    /// autoencoder and record NMSE.
    TrainGossip(TrainArgs),
    /// One of the comparison schemes over the same config.
    TrainBaseline(TrainBaselineArgs),
    /// Re-evaluate the stored autoencoder checkpoints of a finished run.
    Eval(EvalArgs),
    /// One full run per axis value, repeated over derived seed sets.
    Sweep(SweepArgs),
    /// Scenario sequence with generative replay (or a baseline scheme).
    Continual(ContinualArgs),
    /// NMSE statistics (mean, variance, 95% CI) per run kind.
    Stats(StatsArgs),
    /// Reshape a run's metrics into per-figure CSV files.
    PlotData(PlotDataArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Scenario preset: dense or sparse.
    #[arg(long, default_value = "sparse")]
    preset: String,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    nt: usize,
    #[arg(long, default_value_t = 32)]
    nc: usize,
    /// Paths per channel draw.
    #[arg(long, default_value_t = 4)]
    paths: usize,
    /// Bandwidth in Hz.
    #[arg(long, default_value_t = 5e7)]
    bandwidth: f64,
    #[arg(long, short = 'o')]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    run_dir: PathBuf,
    /// Write zeros into timing columns so outputs are byte-reproducible.
    #[arg(long)]
    deterministic_timing: bool,
}

#[derive(Args)]
struct TrainBaselineArgs {
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, value_enum)]
    kind: BaselineKind,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineKind {
    TrueCsi,
    CentralizedGan,
    NoConnection,
    Federated,
    UntrainedDae,
}

impl From<BaselineKind> for RunKind {
    fn from(k: BaselineKind) -> RunKind {
        match k {
            BaselineKind::TrueCsi => RunKind::TrueCsi,
            BaselineKind::CentralizedGan => RunKind::CentralizedGan,
            BaselineKind::NoConnection => RunKind::NoConnection,
            BaselineKind::Federated => RunKind::Federated,
            BaselineKind::UntrainedDae => RunKind::UntrainedDae,
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run_dir: PathBuf,
    #[arg(long)]
    deterministic_timing: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, value_enum)]
    axis: AxisArg,
    /// Comma-separated axis values (γ as fractions, counts as integers).
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    repeats: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Gamma,
    FakeCount,
    UeCount,
}

impl From<AxisArg> for SweepAxis {
    fn from(a: AxisArg) -> SweepAxis {
        match a {
            AxisArg::Gamma => SweepAxis::Gamma,
            AxisArg::FakeCount => SweepAxis::FakeCount,
            AxisArg::UeCount => SweepAxis::UeCount,
        }
    }
}

#[derive(Args)]
struct ContinualArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Scenario presets in visiting order, e.g. sparse,dense.
    #[arg(long, value_delimiter = ',')]
    scenarios: Vec<String>,
    /// proposed (generative replay), no-retraining, or retraining.
    #[arg(long, default_value = "proposed")]
    scheme: String,
}

#[derive(Args)]
struct StatsArgs {
    /// Run directories or metrics.csv paths.
    #[arg(long, value_delimiter = ',')]
    inputs: Vec<PathBuf>,
}

#[derive(Args)]
struct PlotDataArgs {
    #[arg(long)]
    run_dir: PathBuf,
    /// gamma-sweep, fake-count-sweep, ue-sweep, or continual.
    #[arg(long)]
    figure: String,
    #[arg(long, short = 'o')]
    out: PathBuf,
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::GenData(a) => gen_data(a),
        Cmd::TrainGossip(a) => train(a, None),
        Cmd::TrainBaseline(a) => train(a.train, Some(a.kind.into())),
        Cmd::Eval(a) => eval(a),
        Cmd::Sweep(a) => run_sweep(a),
        Cmd::Continual(a) => continual(a),
        Cmd::Stats(a) => stats(a),
        Cmd::PlotData(a) => plot_data(a),
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let mut spec = ScenarioSpec::preset(&a.preset)
        .with_context(|| format!("unknown preset `{}` (expected dense or sparse)", a.preset))?;
    spec.n_paths = a.paths;
    let channel = ChannelConfig {
        n_t: a.nt,
        n_c: a.nc,
        bandwidth: a.bandwidth,
        n_paths: a.paths,
        geometry: ArrayGeometry::ula_x(a.nt),
        mode: Default::default(),
    };
    channel.validate()?;
    if a.count == 0 {
        bail!("count must be ≥ 1");
    }
    let mut rng = seeds::rng(a.seed, "gen-data", 0);
    let samples: Vec<CsiSample> = (0..a.count)
        .map(|_| {
            let s = spec.jittered(&mut rng);
            let paths = sample_scenario(&mut rng, &s)?;
            channel_matrix(&channel, &paths)
        })
        .collect::<std::result::Result<_, _>>()?;
    let ds = normalize_dataset(&samples, (0..a.count).collect(), Vec::new())?;
    export_dataset(&ds, &a.out)?;
    let readback = import_dataset(&a.out).context("verification read-back failed")?;
    if readback.len() != a.count {
        bail!("read-back sample count {} does not match {}", readback.len(), a.count);
    }

    #[derive(serde::Serialize)]
    struct Sidecar<'a> {
        preset: &'a str,
        count: usize,
        seed: u64,
        scale: f64,
        channel: &'a ChannelConfig,
        scenario: &'a ScenarioSpec,
    }
    let sidecar_path = a.out.with_extension("meta.toml");
    save_toml(
        &sidecar_path,
        &Sidecar {
            preset: &a.preset,
            count: a.count,
            seed: a.seed,
            scale: ds.scale,
            channel: &channel,
            scenario: &spec,
        },
    )?;
    println!("wrote {} samples to {} (sidecar {})", a.count, a.out.display(), sidecar_path.display());
    Ok(())
}

fn report_to_row(report: &RunReport, cfg: &ExperimentConfig, run_id: &str, zero_wall: bool) -> MetricsRow {
    MetricsRow {
        run_id: run_id.to_string(),
        kind: report.kind.name().to_string(),
        scenario: report.scenarios.join("+"),
        gamma: cfg.dae.gamma,
        synthetic_count: cfg.synth_size as u64,
        k_ues: cfg.k_ues as u64,
        seed: cfg.seeds.gossip,
        nmse_db_per_scenario: report.nmse_db.clone(),
        bs_uplink_params: report.bandwidth.bs_uplink_params,
        d2d_params: report.bandwidth.d2d_params,
        memory_bytes: report.memory_bytes,
        epochs: report.epochs,
        wall_seconds: if zero_wall { 0.0 } else { report.wall.total() },
    }
}

fn write_losses(dir: &RunDir, report: &RunReport) -> Result<()> {
    let mut f = std::fs::File::create(dir.root().join("losses.csv"))?;
    writeln!(f, "epoch,gan_d_loss,gan_g_loss,dae_loss")?;
    let n = report.gan_d_loss.len().max(report.dae_loss.len());
    for i in 0..n {
        let cell = |v: Option<&f64>| v.map(|x| x.to_string()).unwrap_or_default();
        writeln!(
            f,
            "{},{},{},{}",
            i,
            cell(report.gan_d_loss.get(i)),
            cell(report.gan_g_loss.get(i)),
            cell(report.dae_loss.get(i))
        )?;
    }
    Ok(())
}

fn run_id_of(dir: &Path) -> String {
    dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
}

fn save_artifacts(dir: &RunDir, art: &RunArtifacts) -> Result<()> {
    if let Some(g) = &art.generator {
        save_checkpoint(&dir.checkpoint("generator.ckpt"), ModelKind::Generator, &g.params)?;
    }
    if let Some(d) = &art.discriminator {
        save_checkpoint(&dir.checkpoint("discriminator.ckpt"), ModelKind::Discriminator, &d.params)?;
    }
    if let Some(dae) = &art.dae {
        save_checkpoint(&dir.checkpoint("encoder.ckpt"), ModelKind::Encoder, &dae.encoder)?;
        save_checkpoint(&dir.checkpoint("decoder.ckpt"), ModelKind::Decoder, &dae.decoder)?;
    }
    if let Some(trace) = &art.trace {
        std::fs::write(dir.trace_log(), trace.to_lines())?;
    }
    Ok(())
}

fn train(a: TrainArgs, kind: Option<RunKind>) -> Result<()> {
    let cfg: ExperimentConfig = load_toml(&a.config)?;
    cfg.validate()?;
    let dir = RunDir::open(&a.run_dir)?;
    let _lock = dir.lock()?;
    std::fs::copy(&a.config, dir.config_copy())?;

    let art = match kind {
        None => run_gossip_gan(&cfg)?,
        Some(k) => run_baseline(&cfg, k)?,
    };
    save_artifacts(&dir, &art)?;
    write_losses(&dir, &art.report)?;
    let row = report_to_row(&art.report, &cfg, &run_id_of(&a.run_dir), a.deterministic_timing);
    append_rows(&dir.metrics_csv(), &[row])?;
    for (scenario, nmse) in art.report.scenarios.iter().zip(&art.report.nmse_db) {
        println!("{}: {} NMSE {} dB", art.report.kind.name(), scenario, gossipgan::dae::format_nmse(*nmse));
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let dir = RunDir::open(&a.run_dir)?;
    let cfg: ExperimentConfig = load_toml(&dir.config_copy())
        .context("run directory has no config copy (was a training run completed here?)")?;
    cfg.validate()?;
    let _lock = dir.lock()?;

    let encoder = load_checkpoint(&dir.checkpoint("encoder.ckpt"), ModelKind::Encoder)?;
    let decoder = load_checkpoint(&dir.checkpoint("decoder.ckpt"), ModelKind::Decoder)?;
    let mut dae = build_dae(&cfg.dae, 0)?;
    dae.encoder.replace_values(&encoder).map_err(|e| anyhow::anyhow!(e.to_string()))?;
    dae.decoder.replace_values(&decoder).map_err(|e| anyhow::anyhow!(e.to_string()))?;

    let t0 = std::time::Instant::now();
    let data = gossipgan::pipeline::generate_scenario_data(&cfg)?;
    let test = data.dataset.test_tensors();
    let recon = dae.reconstruct(&test)?;
    let h: Vec<Vec<f64>> = test.iter().map(|t| data.dataset.denormalize(t)).collect();
    let hhat: Vec<Vec<f64>> = recon.iter().map(|t| data.dataset.denormalize(t)).collect();
    let nmse = gossipgan::dae::nmse_db(&h, &hhat)?;

    let row = MetricsRow {
        run_id: run_id_of(&a.run_dir),
        kind: "eval".into(),
        scenario: cfg.scenario_preset.clone(),
        gamma: cfg.dae.gamma,
        synthetic_count: cfg.synth_size as u64,
        k_ues: cfg.k_ues as u64,
        seed: cfg.seeds.gossip,
        nmse_db_per_scenario: vec![nmse],
        bs_uplink_params: 0,
        d2d_params: 0,
        memory_bytes: 0,
        epochs: 0,
        wall_seconds: if a.deterministic_timing { 0.0 } else { t0.elapsed().as_secs_f64() },
    };
    append_rows(&dir.metrics_csv(), &[row])?;
    println!("eval: NMSE {} dB", gossipgan::dae::format_nmse(nmse));
    Ok(())
}

fn run_sweep(a: SweepArgs) -> Result<()> {
    let cfg: ExperimentConfig = load_toml(&a.train.config)?;
    cfg.validate()?;
    if a.values.is_empty() {
        bail!("--values must list at least one axis value");
    }
    let dir = RunDir::open(&a.train.run_dir)?;
    let _lock = dir.lock()?;
    std::fs::copy(&a.train.config, dir.config_copy())?;

    let axis: SweepAxis = a.axis.into();
    let points = sweep(&cfg, axis, &a.values, a.repeats)?;
    let mut rows = Vec::new();
    for p in &points {
        for (rep, nmse) in p.nmse_db_per_seed.iter().enumerate() {
            let mut row = MetricsRow {
                run_id: run_id_of(&a.train.run_dir),
                kind: format!("sweep-{}", axis_name(axis)),
                scenario: cfg.scenario_preset.clone(),
                gamma: cfg.dae.gamma,
                synthetic_count: cfg.synth_size as u64,
                k_ues: cfg.k_ues as u64,
                seed: rep as u64,
                nmse_db_per_scenario: vec![*nmse],
                bs_uplink_params: 0,
                d2d_params: 0,
                memory_bytes: 0,
                epochs: cfg.gossip.epoch_budget as u64,
                wall_seconds: 0.0,
            };
            match axis {
                SweepAxis::Gamma => row.gamma = p.value,
                SweepAxis::FakeCount => row.synthetic_count = p.value as u64,
                SweepAxis::UeCount => row.k_ues = p.value as u64,
            }
            rows.push(row);
        }
        println!(
            "{} = {}: mean NMSE {} dB over {} seeds",
            axis_name(axis),
            p.value,
            gossipgan::dae::format_nmse(p.nmse_db_mean),
            p.nmse_db_per_seed.len()
        );
    }
    append_rows(&dir.metrics_csv(), &rows)?;
    Ok(())
}

fn axis_name(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::Gamma => "gamma",
        SweepAxis::FakeCount => "fake-count",
        SweepAxis::UeCount => "ue-count",
    }
}

fn continual(a: ContinualArgs) -> Result<()> {
    let base: ExperimentConfig = load_toml(&a.train.config)?;
    base.validate()?;
    if a.scenarios.is_empty() {
        bail!("--scenarios must list at least one preset");
    }
    let configs: Vec<ExperimentConfig> = a
        .scenarios
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mut c = base.clone();
            c.scenario_preset = name.clone();
            c.seeds = base.seeds.variant(i as u64 * 7919);
            c
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }

    let dir = RunDir::open(&a.train.run_dir)?;
    let _lock = dir.lock()?;
    std::fs::copy(&a.train.config, dir.config_copy())?;

    let reports = match a.scheme.as_str() {
        "proposed" => continual_run(&configs)?,
        "no-retraining" => continual_baselines(&configs, ContinualBaseline::NoRetraining)?,
        "retraining" => continual_baselines(&configs, ContinualBaseline::Retraining)?,
        other => bail!("unknown scheme `{other}` (proposed, no-retraining, retraining)"),
    };
    let mut rows = Vec::new();
    for (step, report) in reports.iter().enumerate() {
        let mut row =
            report_to_row(report, &configs[step], &run_id_of(&a.train.run_dir), a.train.deterministic_timing);
        row.kind = format!("continual-{}", a.scheme);
        rows.push(row);
        println!(
            "step {step} ({}): NMSE per scenario [{}] dB, memory {} bytes",
            report.scenarios.last().map(String::as_str).unwrap_or("?"),
            report
                .nmse_db
                .iter()
                .map(|v| gossipgan::dae::format_nmse(*v))
                .collect::<Vec<_>>()
                .join(", "),
            report.memory_bytes
        );
    }
    append_rows(&dir.metrics_csv(), &rows)?;
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    if a.inputs.is_empty() {
        bail!("--inputs must list at least one run directory or metrics.csv");
    }
    let mut by_kind: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for input in &a.inputs {
        let path = if input.is_dir() { input.join("metrics.csv") } else { input.clone() };
        let text =
            std::fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
        for line in text.lines().skip(1) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() < 8 {
                continue;
            }
            let kind = cols[1].to_string();
            if let Some(first) = cols[7].split(';').next() {
                if let Ok(v) = first.parse::<f64>() {
                    by_kind.entry(kind).or_default().push(v);
                }
            }
        }
    }
    println!("kind,count,nmse_mean_db,nmse_variance,ci95_lo,ci95_hi");
    for (kind, values) in &by_kind {
        match statistics(values) {
            Ok(s) => {
                println!("{},{},{},{},{},{}", kind, values.len(), s.mean, s.variance, s.ci95.0, s.ci95.1)
            }
            Err(_) => println!("{},{},{},,,", kind, values.len(), values.first().copied().unwrap_or(f64::NAN)),
        }
    }
    Ok(())
}

fn plot_data(a: PlotDataArgs) -> Result<()> {
    let metrics = a.run_dir.join("metrics.csv");
    let text =
        std::fs::read_to_string(&metrics).with_context(|| format!("cannot read {}", metrics.display()))?;
    let rows: Vec<Vec<String>> =
        text.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect();

    let mut out = std::fs::File::create(&a.out)?;
    match a.figure.as_str() {
        "gamma-sweep" | "fake-count-sweep" | "ue-sweep" => {
            let (kind, col, header) = match a.figure.as_str() {
                "gamma-sweep" => ("sweep-gamma", 3, "gamma"),
                "fake-count-sweep" => ("sweep-fake-count", 4, "fake_count"),
                _ => ("sweep-ue-count", 5, "ue_count"),
            };
            let mut groups: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
            for r in rows.iter().filter(|r| r.len() > 7 && r[1] == kind) {
                if let Ok(v) = r[7].split(';').next().unwrap_or("").parse::<f64>() {
                    groups.entry(r[col].clone()).or_default().push(v);
                }
            }
            if groups.is_empty() {
                bail!("no {kind} rows in {}; run `sweep` first", metrics.display());
            }
            writeln!(out, "{header},nmse_db_mean,n")?;
            for (value, vs) in groups {
                let mean = vs.iter().sum::<f64>() / vs.len() as f64;
                writeln!(out, "{value},{mean},{}", vs.len())?;
            }
        }
        "continual" => {
            let filtered: Vec<&Vec<String>> =
                rows.iter().filter(|r| r.len() > 7 && r[1].starts_with("continual-")).collect();
            if filtered.is_empty() {
                bail!("no continual rows in {}; run `continual` first", metrics.display());
            }
            writeln!(out, "scheme,step,scenarios,nmse_db_per_scenario,memory_bytes")?;
            let mut step_by_scheme: std::collections::BTreeMap<String, usize> = Default::default();
            for r in filtered {
                let step = step_by_scheme.entry(r[1].clone()).or_insert(0);
                writeln!(out, "{},{},{},{},{}", r[1], step, r[2], r[7].replace(';', "|"), r[10])?;
                *step += 1;
            }
        }
        other => bail!("unknown figure `{other}` (gamma-sweep, fake-count-sweep, ue-sweep, continual)"),
    }
    println!("wrote {}", a.out.display());
    Ok(())
}
