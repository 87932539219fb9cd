//! End-to-end experiment orchestration: synthesize per-user CSI shards,
//! train the GAN decentralizedly (or via a baseline), let one generator
//! synthesize a dataset, train the compression autoencoder on it, and
//! score NMSE on held-out true CSI. Also: parameter sweeps, the
//! generative-replay continual-learning scheme with storage accounting,
//! and repeated-seed statistics.

use crate::channel::{
    channel_matrix, normalize_dataset, sample_scenario, ChannelConfig, ChannelError, CsiSample,
    NormalizedDataset, ScenarioSpec,
};
use crate::dae::{build_dae, nmse_db, train_dae, Dae, DaeConfig, DaeError};
use crate::gan::{GanConfig, GanError, GanTrainer, Generator, Discriminator};
use crate::gossip::{
    baseline_federated, baseline_no_connection, run_gossip, BandwidthReport, GossipConfig,
    GossipError, GossipTrace, MergePolicy, Topology, UeSeedMode,
};
use crate::seeds;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Dae(#[from] DaeError),
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error(transparent)]
    Gossip(#[from] GossipError),
    #[error("invalid experiment config: {0}")]
    BadConfig(String),
    #[error("statistics need at least two reports")]
    NotEnoughReports,
    #[error("generator snapshots are shape-incompatible: {0}")]
    MemoryShape(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Named seeds for every stochastic stage; nothing falls back to ambient
/// entropy. Dropout masks and latent draws derive from the owning stage's
/// stream.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Channel paths and per-user placement jitter.
    pub data: u64,
    /// Autoencoder weight initialization.
    pub init: u64,
    /// Master seed of the decentralized run (model init, per-user training
    /// streams, peer selection, network losses/delays, dropout).
    pub gossip: u64,
    /// Which user's generator is forwarded for dataset synthesis.
    pub selection: u64,
    /// Latent draws for the synthetic dataset.
    pub synth: u64,
    /// Autoencoder training stream (shuffling).
    pub dae: u64,
}

impl Seeds {
    /// Derived seed set for repeat `rep`; rep 0 is the base set itself.
    pub fn variant(&self, rep: u64) -> Seeds {
        if rep == 0 {
            return *self;
        }
        Seeds {
            data: seeds::derive(self.data, "rep", rep),
            init: seeds::derive(self.init, "rep", rep),
            gossip: seeds::derive(self.gossip, "rep", rep),
            selection: seeds::derive(self.selection, "rep", rep),
            synth: seeds::derive(self.synth, "rep", rep),
            dae: seeds::derive(self.dae, "rep", rep),
        }
    }
}

/// Gossip knobs minus the user count and master seed, which the experiment
/// supplies.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GossipSettings {
    pub topology: Topology,
    pub delta: usize,
    pub n_peers: usize,
    pub epoch_budget: usize,
    pub drop_prob: f64,
    pub delay_ticks_max: usize,
    #[serde(default)]
    pub merge_policy: MergePolicy,
    #[serde(default)]
    pub seed_mode: UeSeedMode,
}

/// How the generative-replay mixed dataset sizes per-generator draws:
/// split a fixed total across stored generators, or draw the full amount
/// from each (the costlier text-faithful variant).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplayDraws {
    #[default]
    TotalSplit,
    PerModel,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `dense`, `sparse`, or `custom` (with `[scenario]` present).
    pub scenario_preset: String,
    #[serde(default)]
    pub scenario: Option<ScenarioSpec>,
    pub channel: ChannelConfig,
    pub k_ues: usize,
    pub per_ue_samples: usize,
    pub test_samples: usize,
    pub gossip: GossipSettings,
    pub gan: GanConfig,
    pub dae: DaeConfig,
    /// Synthetic dataset size S.
    pub synth_size: usize,
    #[serde(default)]
    pub replay_draws: ReplayDraws,
    pub seeds: Seeds,
}

impl ExperimentConfig {
    pub fn scenario_spec(&self) -> Result<ScenarioSpec> {
        match self.scenario_preset.as_str() {
            "custom" => self
                .scenario
                .clone()
                .ok_or_else(|| PipelineError::BadConfig("custom preset needs a [scenario] table".into())),
            name => {
                let mut spec = ScenarioSpec::preset(name)
                    .ok_or_else(|| PipelineError::BadConfig(format!("unknown scenario preset `{name}`")))?;
                spec.n_paths = self.channel.n_paths;
                Ok(spec)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.scenario_spec()?;
        if self.channel.n_t != self.dae.n_t || self.channel.n_c != self.dae.n_c {
            return Err(PipelineError::BadConfig("channel and autoencoder dimensions differ".into()));
        }
        if self.channel.n_t != self.channel.n_c {
            return Err(PipelineError::BadConfig("square channel matrices required (n_t == n_c)".into()));
        }
        if self.k_ues == 0 || self.per_ue_samples == 0 || self.test_samples == 0 {
            return Err(PipelineError::BadConfig("k_ues, per_ue_samples, test_samples must be ≥ 1".into()));
        }
        if self.synth_size == 0 {
            return Err(PipelineError::BadConfig("synth_size must be ≥ 1".into()));
        }
        self.gan.validate()?;
        self.dae.validate()?;
        Ok(())
    }

    pub fn gossip_config(&self) -> GossipConfig {
        GossipConfig {
            k_ues: self.k_ues,
            topology: self.gossip.topology,
            delta: self.gossip.delta,
            n_peers: self.gossip.n_peers,
            epoch_budget: self.gossip.epoch_budget,
            drop_prob: self.gossip.drop_prob,
            delay_ticks_max: self.gossip.delay_ticks_max,
            merge_policy: self.gossip.merge_policy,
            seed_mode: self.gossip.seed_mode,
            master_seed: self.seeds.gossip,
        }
    }

    /// Desk-scale defaults: 8×8 channels, width-scaled models, 4 users.
    pub fn desk(preset: &str, base_seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            scenario_preset: preset.to_string(),
            scenario: None,
            channel: ChannelConfig {
                n_t: 8,
                n_c: 8,
                bandwidth: 5e7,
                n_paths: 4,
                geometry: crate::channel::ArrayGeometry::ula_x(8),
                mode: Default::default(),
            },
            k_ues: 4,
            per_ue_samples: 200,
            test_samples: 256,
            gossip: GossipSettings {
                topology: Topology::FullyConnected,
                delta: 10,
                n_peers: 3,
                epoch_budget: 150,
                drop_prob: 0.0,
                delay_ticks_max: 0,
                merge_policy: MergePolicy::ReceivedOnly,
                seed_mode: UeSeedMode::Distinct,
            },
            gan: GanConfig {
                latent_dim: 32,
                width_scale: 0.125,
                batch: 20,
                n_critic: 3,
                dropout: 0.3,
                lr: 1e-3,
                ..GanConfig::default()
            },
            dae: DaeConfig { n_t: 8, n_c: 8, gamma: 0.25, lr: 1e-3, epochs: 100, batch: 50, width_scale: 1.0 },
            synth_size: 2000,
            replay_draws: ReplayDraws::TotalSplit,
            seeds: Seeds {
                data: seeds::derive(base_seed, "data", 0),
                init: seeds::derive(base_seed, "init", 0),
                gossip: seeds::derive(base_seed, "gossip", 0),
                selection: seeds::derive(base_seed, "selection", 0),
                synth: seeds::derive(base_seed, "synth", 0),
                dae: seeds::derive(base_seed, "dae", 0),
            },
        }
    }
}

/// Scenario data for one experiment: a globally normalized dataset whose
/// train region is sharded per user, plus the held-out test split (never
/// seen by any GAN or autoencoder during training).
pub struct ScenarioData {
    pub dataset: NormalizedDataset,
    pub shards: Vec<Vec<Vec<f64>>>,
}

pub fn generate_scenario_data(cfg: &ExperimentConfig) -> Result<ScenarioData> {
    cfg.validate()?;
    let spec = cfg.scenario_spec()?;
    let mut samples: Vec<CsiSample> = Vec::with_capacity(cfg.k_ues * cfg.per_ue_samples + cfg.test_samples);
    for ue in 0..cfg.k_ues {
        let mut jitter_rng = seeds::rng(cfg.seeds.data, "ue-jitter", ue as u64);
        let ue_spec = spec.jittered(&mut jitter_rng);
        let mut path_rng = seeds::rng(cfg.seeds.data, "ue-paths", ue as u64);
        for _ in 0..cfg.per_ue_samples {
            let paths = sample_scenario(&mut path_rng, &ue_spec)?;
            samples.push(channel_matrix(&cfg.channel, &paths)?);
        }
    }
    let mut test_rng = seeds::rng(cfg.seeds.data, "test", 0);
    for _ in 0..cfg.test_samples {
        let t_spec = spec.jittered(&mut test_rng);
        let paths = sample_scenario(&mut test_rng, &t_spec)?;
        samples.push(channel_matrix(&cfg.channel, &paths)?);
    }
    let train: Vec<usize> = (0..cfg.k_ues * cfg.per_ue_samples).collect();
    let test: Vec<usize> = (cfg.k_ues * cfg.per_ue_samples..samples.len()).collect();
    let dataset = normalize_dataset(&samples, train, test)?;
    let shards = (0..cfg.k_ues)
        .map(|ue| {
            (0..cfg.per_ue_samples)
                .map(|i| dataset.tensors[ue * cfg.per_ue_samples + i].clone())
                .collect()
        })
        .collect();
    Ok(ScenarioData { dataset, shards })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunKind {
    GossipGan,
    TrueCsi,
    CentralizedGan,
    NoConnection,
    Federated,
    UntrainedDae,
}

impl RunKind {
    pub fn name(&self) -> &'static str {
        match self {
            RunKind::GossipGan => "gossip-gan",
            RunKind::TrueCsi => "true-csi",
            RunKind::CentralizedGan => "centralized-gan",
            RunKind::NoConnection => "no-connection",
            RunKind::Federated => "federated",
            RunKind::UntrainedDae => "untrained-dae",
        }
    }
}

/// Wall time per phase, seconds. Reported, never part of any determinism
/// comparison.
#[derive(Clone, Copy, Debug, Default)]
pub struct PhaseTimings {
    pub data_s: f64,
    pub gan_s: f64,
    pub dae_s: f64,
    pub eval_s: f64,
}

impl PhaseTimings {
    pub fn total(&self) -> f64 {
        self.data_s + self.gan_s + self.dae_s + self.eval_s
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub kind: RunKind,
    pub scenarios: Vec<String>,
    /// NMSE (dB) on each scenario's held-out true CSI, oldest first.
    pub nmse_db: Vec<f64>,
    pub gan_d_loss: Vec<f64>,
    pub gan_g_loss: Vec<f64>,
    pub dae_loss: Vec<f64>,
    pub bandwidth: BandwidthReport,
    /// Scheme-specific storage cost in bytes (4 bytes per stored scalar).
    pub memory_bytes: u64,
    pub epochs: u64,
    pub wall: PhaseTimings,
}

impl RunReport {
    /// Deterministic content summary (excludes wall-clock timings).
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.kind.name().as_bytes());
        for s in &self.scenarios {
            h.update(s.as_bytes());
        }
        for v in self.nmse_db.iter().chain(&self.gan_d_loss).chain(&self.gan_g_loss).chain(&self.dae_loss) {
            h.update(v.to_le_bytes());
        }
        h.update(self.bandwidth.bs_uplink_params.to_le_bytes());
        h.update(self.bandwidth.d2d_params.to_le_bytes());
        h.update(self.memory_bytes.to_le_bytes());
        h.update(self.epochs.to_le_bytes());
        let d = h.finalize();
        d[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Everything a run leaves behind for persistence and later stages.
pub struct RunArtifacts {
    pub report: RunReport,
    pub generator: Option<Generator>,
    pub discriminator: Option<Discriminator>,
    pub dae: Option<Dae>,
    pub trace: Option<GossipTrace>,
}

fn now() -> std::time::Instant {
    std::time::Instant::now()
}

/// Train the autoencoder on `train_data`, evaluate on the held-out split.
fn dae_phase(
    cfg: &ExperimentConfig,
    data: &ScenarioData,
    train_data: &[Vec<f64>],
    timings: &mut PhaseTimings,
) -> Result<(Dae, Vec<f64>, f64)> {
    let t0 = now();
    let mut dae = build_dae(&cfg.dae, seeds::derive(cfg.seeds.init, "dae", 0))?;
    let history = train_dae(&mut dae, train_data, &cfg.dae, cfg.seeds.dae)?;
    timings.dae_s = t0.elapsed().as_secs_f64();
    let nmse = eval_dae(&dae, &data.dataset, timings)?;
    Ok((dae, history, nmse))
}

fn eval_dae(dae: &Dae, dataset: &NormalizedDataset, timings: &mut PhaseTimings) -> Result<f64> {
    let t0 = now();
    let test = dataset.test_tensors();
    let recon = dae.reconstruct(&test)?;
    let h: Vec<Vec<f64>> = test.iter().map(|t| dataset.denormalize(t)).collect();
    let hhat: Vec<Vec<f64>> = recon.iter().map(|t| dataset.denormalize(t)).collect();
    let nmse = nmse_db(&h, &hhat)?;
    timings.eval_s += t0.elapsed().as_secs_f64();
    Ok(nmse)
}

/// The full decentralized pipeline: gossip-train K users, pick one user's
/// generator uniformly, synthesize S samples, train the autoencoder on
/// them, and score NMSE on held-out true CSI.
pub fn run_gossip_gan(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let mut timings = PhaseTimings::default();
    let t0 = now();
    let data = generate_scenario_data(cfg)?;
    timings.data_s = t0.elapsed().as_secs_f64();

    let t0 = now();
    let (ues, trace, bandwidth) =
        run_gossip(&cfg.gossip_config(), data.shards.clone(), &cfg.gan, cfg.channel.n_t)?;
    timings.gan_s = t0.elapsed().as_secs_f64();

    let pick = seeds::rng(cfg.seeds.selection, "pick", 0).random_range(0..cfg.k_ues);
    let chosen = &ues[pick];
    let generator = chosen.generator().clone();
    let discriminator = chosen.discriminator().clone();
    let gan_d_loss = chosen.trainer.histories.d_loss.clone();
    let gan_g_loss = chosen.trainer.histories.g_loss.clone();

    let synthetic = generator.sample(cfg.synth_size, cfg.seeds.synth, 100)?;
    let (dae, dae_loss, nmse) = dae_phase(cfg, &data, &synthetic, &mut timings)?;

    let memory_bytes = generator.params.memory_bytes();
    let report = RunReport {
        kind: RunKind::GossipGan,
        scenarios: vec![cfg.scenario_preset.clone()],
        nmse_db: vec![nmse],
        gan_d_loss,
        gan_g_loss,
        dae_loss,
        bandwidth,
        memory_bytes,
        epochs: cfg.gossip.epoch_budget as u64,
        wall: timings,
    };
    Ok(RunArtifacts {
        report,
        generator: Some(generator),
        discriminator: Some(discriminator),
        dae: Some(dae),
        trace: Some(trace),
    })
}

/// The comparison schemes. `true-csi` skips the GAN and trains the
/// autoencoder on pooled real data; the GAN baselines produce a generator
/// by other means and then follow the same synthesize→train→evaluate tail.
pub fn run_baseline(cfg: &ExperimentConfig, kind: RunKind) -> Result<RunArtifacts> {
    cfg.validate()?;
    let mut timings = PhaseTimings::default();
    let t0 = now();
    let data = generate_scenario_data(cfg)?;
    timings.data_s = t0.elapsed().as_secs_f64();

    match kind {
        RunKind::GossipGan => run_gossip_gan(cfg),
        RunKind::TrueCsi => {
            let pooled = data.dataset.train_tensors();
            let (dae, dae_loss, nmse) = dae_phase(cfg, &data, &pooled, &mut timings)?;
            let memory_bytes = 4 * (pooled.len() * data.dataset.sample_len()) as u64;
            Ok(RunArtifacts {
                report: RunReport {
                    kind,
                    scenarios: vec![cfg.scenario_preset.clone()],
                    nmse_db: vec![nmse],
                    gan_d_loss: Vec::new(),
                    gan_g_loss: Vec::new(),
                    dae_loss,
                    bandwidth: BandwidthReport::default(),
                    memory_bytes,
                    epochs: cfg.dae.epochs as u64,
                    wall: timings,
                },
                generator: None,
                discriminator: None,
                dae: Some(dae),
                trace: None,
            })
        }
        RunKind::UntrainedDae => {
            let dae = build_dae(&cfg.dae, seeds::derive(cfg.seeds.init, "dae", 0))?;
            let nmse = eval_dae(&dae, &data.dataset, &mut timings)?;
            Ok(RunArtifacts {
                report: RunReport {
                    kind,
                    scenarios: vec![cfg.scenario_preset.clone()],
                    nmse_db: vec![nmse],
                    gan_d_loss: Vec::new(),
                    gan_g_loss: Vec::new(),
                    dae_loss: Vec::new(),
                    bandwidth: BandwidthReport::default(),
                    memory_bytes: 0,
                    epochs: 0,
                    wall: timings,
                },
                generator: None,
                discriminator: None,
                dae: Some(dae),
                trace: None,
            })
        }
        RunKind::CentralizedGan => {
            let t0 = now();
            let pooled: Vec<Vec<f64>> = data.dataset.train_tensors();
            let init_seed = seeds::derive(cfg.seeds.gossip, "central-init", 0);
            let g = Generator::new(cfg.gan.latent_dim, cfg.channel.n_t, cfg.gan.width_scale, seeds::derive(init_seed, "gen", 0))?;
            let d = Discriminator::new(cfg.channel.n_t, cfg.gan.width_scale, seeds::derive(init_seed, "disc", 0))?;
            let mut trainer = GanTrainer::new(g, d, cfg.gan.clone(), seeds::derive(cfg.seeds.gossip, "central-train", 0))?;
            trainer.train_epochs(&pooled, cfg.gossip.epoch_budget)?;
            timings.gan_s = t0.elapsed().as_secs_f64();
            let generator = trainer.generator.clone();
            let synthetic = generator.sample(cfg.synth_size, cfg.seeds.synth, 100)?;
            let (dae, dae_loss, nmse) = dae_phase(cfg, &data, &synthetic, &mut timings)?;
            Ok(RunArtifacts {
                report: RunReport {
                    kind,
                    scenarios: vec![cfg.scenario_preset.clone()],
                    nmse_db: vec![nmse],
                    gan_d_loss: trainer.histories.d_loss.clone(),
                    gan_g_loss: trainer.histories.g_loss.clone(),
                    dae_loss,
                    bandwidth: BandwidthReport::default(),
                    memory_bytes: generator.params.memory_bytes(),
                    epochs: cfg.gossip.epoch_budget as u64,
                    wall: timings,
                },
                generator: Some(generator),
                discriminator: Some(trainer.discriminator.clone()),
                dae: Some(dae),
                trace: None,
            })
        }
        RunKind::NoConnection => {
            let t0 = now();
            let ues = baseline_no_connection(&cfg.gossip_config(), data.shards.clone(), &cfg.gan, cfg.channel.n_t)?;
            timings.gan_s = t0.elapsed().as_secs_f64();
            let pick = seeds::rng(cfg.seeds.selection, "pick", 0).random_range(0..cfg.k_ues);
            let chosen = &ues[pick];
            let generator = chosen.generator().clone();
            let synthetic = generator.sample(cfg.synth_size, cfg.seeds.synth, 100)?;
            let (dae, dae_loss, nmse) = dae_phase(cfg, &data, &synthetic, &mut timings)?;
            Ok(RunArtifacts {
                report: RunReport {
                    kind,
                    scenarios: vec![cfg.scenario_preset.clone()],
                    nmse_db: vec![nmse],
                    gan_d_loss: chosen.trainer.histories.d_loss.clone(),
                    gan_g_loss: chosen.trainer.histories.g_loss.clone(),
                    dae_loss,
                    bandwidth: BandwidthReport::default(),
                    memory_bytes: generator.params.memory_bytes(),
                    epochs: cfg.gossip.epoch_budget as u64,
                    wall: timings,
                },
                generator: Some(generator),
                discriminator: Some(chosen.discriminator().clone()),
                dae: Some(dae),
                trace: None,
            })
        }
        RunKind::Federated => {
            let t0 = now();
            let rounds = cfg.gossip.epoch_budget.div_ceil(cfg.gossip.delta);
            let (ues, bandwidth) = baseline_federated(
                &cfg.gossip_config(),
                data.shards.clone(),
                &cfg.gan,
                cfg.channel.n_t,
                rounds,
                cfg.gossip.delta,
            )?;
            timings.gan_s = t0.elapsed().as_secs_f64();
            // after the final broadcast every user holds the same model
            let generator = ues[0].generator().clone();
            let synthetic = generator.sample(cfg.synth_size, cfg.seeds.synth, 100)?;
            let (dae, dae_loss, nmse) = dae_phase(cfg, &data, &synthetic, &mut timings)?;
            Ok(RunArtifacts {
                report: RunReport {
                    kind,
                    scenarios: vec![cfg.scenario_preset.clone()],
                    nmse_db: vec![nmse],
                    gan_d_loss: ues[0].trainer.histories.d_loss.clone(),
                    gan_g_loss: ues[0].trainer.histories.g_loss.clone(),
                    dae_loss,
                    bandwidth,
                    memory_bytes: generator.params.memory_bytes(),
                    epochs: (rounds * cfg.gossip.delta) as u64,
                    wall: timings,
                },
                generator: Some(generator),
                discriminator: Some(ues[0].discriminator().clone()),
                dae: Some(dae),
                trace: None,
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    FakeCount,
    Gamma,
    UeCount,
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub value: f64,
    pub nmse_db_per_seed: Vec<f64>,
    pub nmse_db_mean: f64,
}

/// One full pipeline run per axis value, each averaged over `repeats`
/// derived seed sets. All points share the same base seeds so they are
/// comparable.
pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64], repeats: u64) -> Result<Vec<SweepPoint>> {
    use rayon::prelude::*;
    if values.is_empty() {
        return Err(PipelineError::BadConfig("sweep needs at least one axis value".into()));
    }
    let mut points = Vec::with_capacity(values.len());
    for &value in values {
        let mut point_cfg = cfg.clone();
        apply_axis(&mut point_cfg, axis, value)?;
        let per_seed: Vec<f64> = (0..repeats.max(1))
            .into_par_iter()
            .map(|rep| {
                let mut c = point_cfg.clone();
                c.seeds = cfg.seeds.variant(rep);
                run_gossip_gan(&c).map(|a| a.report.nmse_db[0])
            })
            .collect::<Result<_>>()?;
        let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
        points.push(SweepPoint { value, nmse_db_per_seed: per_seed, nmse_db_mean: mean });
    }
    Ok(points)
}

fn apply_axis(cfg: &mut ExperimentConfig, axis: SweepAxis, value: f64) -> Result<()> {
    match axis {
        SweepAxis::FakeCount => {
            if value < 1.0 {
                return Err(PipelineError::BadConfig("fake-count must be ≥ 1".into()));
            }
            cfg.synth_size = value as usize;
        }
        SweepAxis::Gamma => {
            cfg.dae.gamma = value;
            cfg.dae.codeword_len().map_err(PipelineError::Dae)?;
        }
        SweepAxis::UeCount => {
            let k = value as usize;
            if k < 2 {
                return Err(PipelineError::BadConfig("ue-count must be ≥ 2".into()));
            }
            cfg.k_ues = k;
            if matches!(cfg.gossip.topology, Topology::FullyConnected) {
                cfg.gossip.n_peers = k - 1;
            } else {
                cfg.gossip.n_peers = cfg.gossip.n_peers.min(k - 1);
            }
        }
    }
    Ok(())
}

/// Stored generator snapshots, the continual-learning memory.
#[derive(Default)]
pub struct GeneratorMemory {
    pub snapshots: Vec<(String, Generator)>,
}

impl GeneratorMemory {
    pub fn push(&mut self, scenario: String, generator: Generator) -> Result<()> {
        if let Some((_, first)) = self.snapshots.first() {
            let a: Vec<_> = first.params.entries().iter().map(|e| (&e.name, &e.shape)).collect();
            let b: Vec<_> = generator.params.entries().iter().map(|e| (&e.name, &e.shape)).collect();
            if a != b {
                return Err(PipelineError::MemoryShape(format!(
                    "snapshot for {scenario} does not match stored generators"
                )));
            }
        }
        self.snapshots.push((scenario, generator));
        Ok(())
    }

    /// 4 bytes per stored generator scalar, summed over snapshots.
    pub fn memory_bytes(&self) -> u64 {
        self.snapshots.iter().map(|(_, g)| g.params.memory_bytes()).sum()
    }
}

/// Held-out truth for one visited scenario.
pub struct ScenarioEval {
    pub name: String,
    pub test_tensors: Vec<Vec<f64>>,
    pub scale: f64,
}

/// Rolling state of a continual-learning sequence.
#[derive(Default)]
pub struct ContinualState {
    pub memory: GeneratorMemory,
    pub evals: Vec<ScenarioEval>,
}

fn eval_on_scenarios(dae: &Dae, evals: &[ScenarioEval]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(evals.len());
    for ev in evals {
        let recon = dae.reconstruct(&ev.test_tensors)?;
        let h: Vec<Vec<f64>> = ev.test_tensors.iter().map(|t| t.iter().map(|v| v * ev.scale).collect()).collect();
        let hhat: Vec<Vec<f64>> = recon.iter().map(|t| t.iter().map(|v| v * ev.scale).collect()).collect();
        out.push(nmse_db(&h, &hhat)?);
    }
    Ok(out)
}

/// One generative-replay step: gossip-train in the new scenario, store its
/// selected generator, rebuild the autoencoder from the mixed synthetic
/// dataset of all stored generators, and evaluate on every scenario seen
/// so far.
pub fn continual_step(state: &mut ContinualState, cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let mut timings = PhaseTimings::default();
    let t0 = now();
    let data = generate_scenario_data(cfg)?;
    timings.data_s = t0.elapsed().as_secs_f64();

    let t0 = now();
    let (ues, _trace, bandwidth) =
        run_gossip(&cfg.gossip_config(), data.shards.clone(), &cfg.gan, cfg.channel.n_t)?;
    timings.gan_s = t0.elapsed().as_secs_f64();
    let pick = seeds::rng(cfg.seeds.selection, "pick", 0).random_range(0..cfg.k_ues);
    let generator = ues[pick].generator().clone();
    state.memory.push(cfg.scenario_preset.clone(), generator)?;
    state.evals.push(ScenarioEval {
        name: cfg.scenario_preset.clone(),
        test_tensors: data.dataset.test_tensors(),
        scale: data.dataset.scale,
    });

    // mixed synthetic dataset from every stored generator
    let t = state.memory.snapshots.len();
    let per_model = match cfg.replay_draws {
        ReplayDraws::TotalSplit => (cfg.synth_size / t).max(1),
        ReplayDraws::PerModel => cfg.synth_size,
    };
    let mut mixed = Vec::with_capacity(per_model * t);
    for (idx, (_, g)) in state.memory.snapshots.iter().enumerate() {
        let s = seeds::derive(cfg.seeds.synth, "replay", (t * 1000 + idx) as u64);
        mixed.extend(g.sample(per_model, s, 100)?);
    }

    let t0 = now();
    let mut dae = build_dae(&cfg.dae, seeds::derive(cfg.seeds.init, "dae", t as u64))?;
    let dae_loss = train_dae(&mut dae, &mixed, &cfg.dae, seeds::derive(cfg.seeds.dae, "continual", t as u64))?;
    timings.dae_s = t0.elapsed().as_secs_f64();

    let t0 = now();
    let nmse_db = eval_on_scenarios(&dae, &state.evals)?;
    timings.eval_s = t0.elapsed().as_secs_f64();

    Ok(RunReport {
        kind: RunKind::GossipGan,
        scenarios: state.evals.iter().map(|e| e.name.clone()).collect(),
        nmse_db,
        gan_d_loss: ues[pick].trainer.histories.d_loss.clone(),
        gan_g_loss: ues[pick].trainer.histories.g_loss.clone(),
        dae_loss,
        bandwidth,
        memory_bytes: state.memory.memory_bytes(),
        epochs: cfg.gossip.epoch_budget as u64,
        wall: timings,
    })
}

/// Run the proposed replay scheme over a scenario sequence.
pub fn continual_run(configs: &[ExperimentConfig]) -> Result<Vec<RunReport>> {
    let mut state = ContinualState::default();
    configs.iter().map(|cfg| continual_step(&mut state, cfg)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContinualBaseline {
    /// Keep one autoencoder, fine-tune it on each new scenario's real data
    /// only (exhibits forgetting; stores nothing).
    NoRetraining,
    /// Store all real data seen so far and retrain on the union.
    Retraining,
}

/// Run a conventional baseline over the same scenario sequence. Reports
/// per-step NMSE on all scenarios seen so far and the storage cost of the
/// scheme (zero / all retained samples).
pub fn continual_baselines(configs: &[ExperimentConfig], kind: ContinualBaseline) -> Result<Vec<RunReport>> {
    let mut evals: Vec<ScenarioEval> = Vec::new();
    let mut stored: Vec<Vec<f64>> = Vec::new();
    let mut reports = Vec::with_capacity(configs.len());
    let mut rolling_dae: Option<Dae> = None;
    for (t, cfg) in configs.iter().enumerate() {
        cfg.validate()?;
        let mut timings = PhaseTimings::default();
        let t0 = now();
        let data = generate_scenario_data(cfg)?;
        timings.data_s = t0.elapsed().as_secs_f64();
        evals.push(ScenarioEval {
            name: cfg.scenario_preset.clone(),
            test_tensors: data.dataset.test_tensors(),
            scale: data.dataset.scale,
        });
        let fresh = data.dataset.train_tensors();

        let (dae_loss, memory_bytes) = match kind {
            ContinualBaseline::NoRetraining => {
                let t0 = now();
                let mut dae = match rolling_dae.take() {
                    Some(d) => d,
                    None => build_dae(&cfg.dae, seeds::derive(cfg.seeds.init, "dae", 0))?,
                };
                let loss = train_dae(&mut dae, &fresh, &cfg.dae, seeds::derive(cfg.seeds.dae, "no-retrain", t as u64))?;
                timings.dae_s = t0.elapsed().as_secs_f64();
                rolling_dae = Some(dae);
                (loss, 0u64)
            }
            ContinualBaseline::Retraining => {
                stored.extend(fresh);
                let t0 = now();
                let mut dae = build_dae(&cfg.dae, seeds::derive(cfg.seeds.init, "dae", t as u64))?;
                let loss = train_dae(&mut dae, &stored, &cfg.dae, seeds::derive(cfg.seeds.dae, "retrain", t as u64))?;
                timings.dae_s = t0.elapsed().as_secs_f64();
                rolling_dae = Some(dae);
                let bytes = 4 * (stored.len() * 2 * cfg.channel.n_t * cfg.channel.n_c) as u64;
                (loss, bytes)
            }
        };

        let dae = rolling_dae.as_ref().expect("set above");
        let t0 = now();
        let nmse_db = eval_on_scenarios(dae, &evals)?;
        timings.eval_s = t0.elapsed().as_secs_f64();
        reports.push(RunReport {
            kind: RunKind::TrueCsi,
            scenarios: evals.iter().map(|e| e.name.clone()).collect(),
            nmse_db,
            gan_d_loss: Vec::new(),
            gan_g_loss: Vec::new(),
            dae_loss,
            bandwidth: BandwidthReport::default(),
            memory_bytes,
            epochs: cfg.dae.epochs as u64,
            wall: timings,
        });
    }
    Ok(reports)
}

/// Mean, sample variance and the Student-t 95% confidence interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub variance: f64,
    pub ci95: (f64, f64),
}

pub fn statistics(values: &[f64]) -> Result<Stats> {
    if values.len() < 2 {
        return Err(PipelineError::NotEnoughReports);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    let half = if variance == 0.0 {
        0.0
    } else {
        let t = StudentsT::new(0.0, 1.0, n - 1.0)
            .map_err(|e| PipelineError::BadConfig(e.to_string()))?
            .inverse_cdf(0.975);
        t * (variance / n).sqrt()
    };
    Ok(Stats { mean, variance, ci95: (mean - half, mean + half) })
}

/// Variance of the loss over the final 20% of epochs (at least one).
pub fn loss_variance(history: &[f64]) -> f64 {
    if history.is_empty() {
        return 0.0;
    }
    let window = (history.len() / 5).max(1);
    let tail = &history[history.len() - window..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    tail.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / tail.len() as f64
}

use rand::Rng;
