//! Deterministic event-driven simulation of decentralized GAN training:
//! each simulated user trains on its local shard in Δ-epoch chunks, ships
//! its (generator, discriminator) pair to selected peers, and replaces its
//! own models by the elementwise mean once enough peers' models arrived.
//!
//! Logical time is the epoch boundary (one tick per local epoch). The loop
//! body is single-threaded and is the only arbiter of event order; the
//! per-user train chunks between events run on parallel workers, which is
//! safe because each user owns its models, shard and RNG streams. A run is
//! a pure function of (config, shards, master seed).

use crate::gan::{Discriminator, GanConfig, GanError, GanTrainer, Generator};
use crate::nn::{ParamError, ParamVector};
use crate::seeds;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GossipError {
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("invalid gossip config: {0}")]
    BadConfig(String),
    #[error("need {expected} dataset shards, got {got}")]
    ShardCount { expected: usize, got: usize },
    #[error("shard {0} is empty")]
    EmptyShard(usize),
}

pub type Result<T> = std::result::Result<T, GossipError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "k")]
pub enum Topology {
    /// Each round, every user picks `k` distinct peers uniformly (never
    /// itself), re-sampled per round.
    RandomK(usize),
    /// Every user sends to all K−1 others.
    FullyConnected,
}

/// Whether a merge averages only the received models (the written rule) or
/// folds the user's own current model into the mean as well.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergePolicy {
    #[default]
    ReceivedOnly,
    IncludeOwn,
}

/// Whether users consume distinct training streams (the realistic default)
/// or one shared stream, which makes a symmetric configuration evolve
/// bit-identically on every user.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UeSeedMode {
    #[default]
    Distinct,
    Shared,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GossipConfig {
    pub k_ues: usize,
    pub topology: Topology,
    /// Local epochs between communication rounds.
    pub delta: usize,
    /// Received models required to trigger a merge.
    pub n_peers: usize,
    /// Total local epochs per user (the stopping criterion).
    pub epoch_budget: usize,
    /// Probability that a sent message never arrives (0 ..= 1; 1 models a
    /// fully disconnected network).
    pub drop_prob: f64,
    /// Message delays are uniform over 0..=delay_ticks_max epoch ticks.
    pub delay_ticks_max: usize,
    #[serde(default)]
    pub merge_policy: MergePolicy,
    #[serde(default)]
    pub seed_mode: UeSeedMode,
    pub master_seed: u64,
}

impl GossipConfig {
    /// Fully connected defaults: Δ = 10 epochs, merge once all K−1 peers
    /// reported, no loss or delay.
    pub fn fully_connected(k_ues: usize, epoch_budget: usize, master_seed: u64) -> GossipConfig {
        GossipConfig {
            k_ues,
            topology: Topology::FullyConnected,
            delta: 10,
            n_peers: k_ues.saturating_sub(1).max(1),
            epoch_budget,
            drop_prob: 0.0,
            delay_ticks_max: 0,
            merge_policy: MergePolicy::ReceivedOnly,
            seed_mode: UeSeedMode::Distinct,
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_ues < 2 {
            return Err(GossipError::BadConfig("need at least 2 users".into()));
        }
        if self.delta == 0 {
            return Err(GossipError::BadConfig("delta must be ≥ 1".into()));
        }
        if self.epoch_budget == 0 {
            return Err(GossipError::BadConfig("epoch budget must be ≥ 1".into()));
        }
        if self.n_peers == 0 || self.n_peers > self.k_ues - 1 {
            return Err(GossipError::BadConfig(format!(
                "n_peers {} outside 1..={}",
                self.n_peers,
                self.k_ues - 1
            )));
        }
        if let Topology::RandomK(k) = self.topology {
            if k == 0 || k > self.k_ues - 1 {
                return Err(GossipError::BadConfig(format!(
                    "random-k {} outside 1..={}",
                    k,
                    self.k_ues - 1
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(GossipError::BadConfig("drop probability outside [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    TrainChunk,
    Send,
    Drop,
    Deliver,
    Merge,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::TrainChunk => "train-chunk",
            EventKind::Send => "send",
            EventKind::Drop => "drop",
            EventKind::Deliver => "deliver",
            EventKind::Merge => "merge",
        }
    }
}

#[derive(Clone, Debug)]
pub struct TraceEvent {
    pub tick: u64,
    pub kind: EventKind,
    pub src: usize,
    pub dst: Option<usize>,
    pub digest: String,
}

/// Ordered event log; bit-reproducible from (config, shards, seed).
#[derive(Clone, Debug, Default)]
pub struct GossipTrace {
    pub events: Vec<TraceEvent>,
}

impl GossipTrace {
    /// Line format: `tick kind src dst digest` with `-` for no destination.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            let dst = e.dst.map(|d| d.to_string()).unwrap_or_else(|| "-".to_string());
            out.push_str(&format!("{} {} {} {} {}\n", e.tick, e.kind.name(), e.src, dst, e.digest));
        }
        out
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }
}

/// D2D and base-station traffic during training, counted in model scalars.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BandwidthReport {
    pub bs_uplink_params: u64,
    pub d2d_params: u64,
    pub rounds: u64,
}

struct InboxEntry {
    sender: usize,
    generator: ParamVector,
    discriminator: ParamVector,
}

/// One simulated user: shard, trainer (models + optimizer + RNG stream),
/// inbox of received model pairs, and progress counters.
pub struct UeState {
    pub id: usize,
    pub shard: Vec<Vec<f64>>,
    pub trainer: GanTrainer,
    inbox: Vec<InboxEntry>,
    pub epochs_done: usize,
    pub merges_done: usize,
}

impl UeState {
    pub fn generator(&self) -> &Generator {
        &self.trainer.generator
    }

    pub fn discriminator(&self) -> &Discriminator {
        &self.trainer.discriminator
    }

    pub fn model_digest(&self) -> String {
        pair_digest(&self.trainer.generator.params, &self.trainer.discriminator.params)
    }
}

pub fn pair_digest(g: &ParamVector, d: &ParamVector) -> String {
    let mut h = Sha256::new();
    h.update(g.digest().as_bytes());
    h.update(d.digest().as_bytes());
    let out = h.finalize();
    out[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Round peers for `ue_id`: all others (fully connected) or `k` distinct
/// uniform non-self picks.
pub fn select_peers(topology: Topology, k_ues: usize, ue_id: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if k_ues < 2 {
        return Err(GossipError::BadConfig("need at least 2 users".into()));
    }
    let others: Vec<usize> = (0..k_ues).filter(|&i| i != ue_id).collect();
    match topology {
        Topology::FullyConnected => Ok(others),
        Topology::RandomK(k) => {
            if k > others.len() {
                return Err(GossipError::BadConfig(format!("cannot pick {k} of {} peers", others.len())));
            }
            let mut pool = others;
            let mut picks = Vec::with_capacity(k);
            for _ in 0..k {
                let j = rng.random_range(0..pool.len());
                picks.push(pool.swap_remove(j));
            }
            Ok(picks)
        }
    }
}

/// Elementwise-mean merge of received model vectors, optionally folding in
/// the user's own.
pub fn merge_models(received: &[&ParamVector], own: &ParamVector, policy: MergePolicy) -> Result<ParamVector> {
    if received.is_empty() {
        return Err(GossipError::Param(ParamError::Empty));
    }
    let avg = match policy {
        MergePolicy::ReceivedOnly => ParamVector::average(received)?,
        MergePolicy::IncludeOwn => {
            let mut all: Vec<&ParamVector> = received.to_vec();
            all.push(own);
            ParamVector::average(&all)?
        }
    };
    Ok(avg)
}

struct Message {
    deliver_tick: u64,
    seq: u64,
    src: usize,
    dst: usize,
    generator: ParamVector,
    discriminator: ParamVector,
}

fn ue_train_seed(cfg: &GossipConfig, ue: usize) -> u64 {
    match cfg.seed_mode {
        UeSeedMode::Distinct => seeds::derive(cfg.master_seed, "ue-train", ue as u64),
        UeSeedMode::Shared => seeds::derive(cfg.master_seed, "ue-train", 0),
    }
}

fn build_ues(
    cfg: &GossipConfig,
    shards: Vec<Vec<Vec<f64>>>,
    gan_cfg: &GanConfig,
    out_hw: usize,
) -> Result<Vec<UeState>> {
    if shards.len() != cfg.k_ues {
        return Err(GossipError::ShardCount { expected: cfg.k_ues, got: shards.len() });
    }
    for (i, s) in shards.iter().enumerate() {
        if s.is_empty() {
            return Err(GossipError::EmptyShard(i));
        }
    }
    // one shared initialization so averaged models stay aligned
    let init_seed = seeds::derive(cfg.master_seed, "init", 0);
    shards
        .into_iter()
        .enumerate()
        .map(|(id, shard)| {
            let g = Generator::new(gan_cfg.latent_dim, out_hw, gan_cfg.width_scale, seeds::derive(init_seed, "gen", 0))?;
            let d = Discriminator::new(out_hw, gan_cfg.width_scale, seeds::derive(init_seed, "disc", 0))?;
            let trainer = GanTrainer::new(g, d, gan_cfg.clone(), ue_train_seed(cfg, id))?;
            Ok(UeState { id, shard, trainer, inbox: Vec::new(), epochs_done: 0, merges_done: 0 })
        })
        .collect()
}

/// Run the decentralized training loop to the epoch budget. Returns the
/// final user states, the event trace, and the traffic counters.
pub fn run_gossip(
    cfg: &GossipConfig,
    shards: Vec<Vec<Vec<f64>>>,
    gan_cfg: &GanConfig,
    out_hw: usize,
) -> Result<(Vec<UeState>, GossipTrace, BandwidthReport)> {
    cfg.validate()?;
    let mut ues = build_ues(cfg, shards, gan_cfg, out_hw)?;
    let pair_scalars = (ues[0].trainer.generator.params.param_count()
        + ues[0].trainer.discriminator.params.param_count()) as u64;

    let mut trace = GossipTrace::default();
    let mut bandwidth = BandwidthReport::default();
    let mut net_rng = seeds::rng(cfg.master_seed, "net", 0);
    let mut in_flight: Vec<Message> = Vec::new();
    let mut seq = 0u64;
    let mut round = 0u64;
    let mut done = 0usize;

    while done < cfg.epoch_budget {
        let chunk = cfg.delta.min(cfg.epoch_budget - done);
        train_chunk_parallel(&mut ues, chunk)?;
        done += chunk;
        let tick = done as u64;
        for ue in &mut ues {
            ue.epochs_done += chunk;
        }
        for ue in &ues {
            trace.events.push(TraceEvent {
                tick,
                kind: EventKind::TrainChunk,
                src: ue.id,
                dst: None,
                digest: ue.model_digest(),
            });
        }

        // sends (subject to drop and delay)
        for id in 0..cfg.k_ues {
            let mut sel_rng = seeds::rng(cfg.master_seed, "select", round * cfg.k_ues as u64 + id as u64);
            let peers = select_peers(cfg.topology, cfg.k_ues, id, &mut sel_rng)?;
            let digest = ues[id].model_digest();
            for dst in peers {
                bandwidth.d2d_params += pair_scalars;
                let dropped = net_rng.random::<f64>() < cfg.drop_prob;
                if dropped {
                    trace.events.push(TraceEvent {
                        tick,
                        kind: EventKind::Drop,
                        src: id,
                        dst: Some(dst),
                        digest: digest.clone(),
                    });
                    continue;
                }
                let delay = if cfg.delay_ticks_max == 0 {
                    0
                } else {
                    net_rng.random_range(0..=cfg.delay_ticks_max) as u64
                };
                trace.events.push(TraceEvent {
                    tick,
                    kind: EventKind::Send,
                    src: id,
                    dst: Some(dst),
                    digest: digest.clone(),
                });
                in_flight.push(Message {
                    deliver_tick: tick + delay,
                    seq,
                    src: id,
                    dst,
                    generator: ues[id].trainer.generator.params.clone(),
                    discriminator: ues[id].trainer.discriminator.params.clone(),
                });
                seq += 1;
            }
        }

        // deliveries due by this tick, in (deliver_tick, seq) order
        let mut due: Vec<Message> = Vec::new();
        let mut still = Vec::new();
        for m in in_flight.drain(..) {
            if m.deliver_tick <= tick {
                due.push(m);
            } else {
                still.push(m);
            }
        }
        in_flight = still;
        due.sort_by_key(|m| (m.deliver_tick, m.seq));
        for m in due {
            trace.events.push(TraceEvent {
                tick,
                kind: EventKind::Deliver,
                src: m.src,
                dst: Some(m.dst),
                digest: pair_digest(&m.generator, &m.discriminator),
            });
            let inbox = &mut ues[m.dst].inbox;
            inbox.retain(|e| e.sender != m.src); // newest copy per sender wins
            inbox.push(InboxEntry { sender: m.src, generator: m.generator, discriminator: m.discriminator });
            // bounded memory: keep the most recent n_peers entries
            while inbox.len() > cfg.n_peers {
                inbox.remove(0);
            }
        }

        // merges
        for ue in &mut ues {
            if ue.inbox.len() >= cfg.n_peers {
                let gs: Vec<&ParamVector> = ue.inbox.iter().map(|e| &e.generator).collect();
                let ds: Vec<&ParamVector> = ue.inbox.iter().map(|e| &e.discriminator).collect();
                ue.trainer.generator.params = merge_models(&gs, &ue.trainer.generator.params, cfg.merge_policy)?;
                ue.trainer.discriminator.params =
                    merge_models(&ds, &ue.trainer.discriminator.params, cfg.merge_policy)?;
                ue.inbox.clear();
                ue.merges_done += 1;
                trace.events.push(TraceEvent {
                    tick,
                    kind: EventKind::Merge,
                    src: ue.id,
                    dst: None,
                    digest: ue.model_digest(),
                });
            }
        }
        round += 1;
    }
    bandwidth.rounds = round;
    Ok((ues, trace, bandwidth))
}

fn train_chunk_parallel(ues: &mut [UeState], epochs: usize) -> Result<()> {
    use rayon::prelude::*;
    ues.par_iter_mut()
        .try_for_each(|ue| ue.trainer.train_epochs(&ue.shard, epochs).map_err(GossipError::Gan))
}

/// Pure local training, no communication: what each user ends up with when
/// the network is absent. Uses the same seed derivations as [`run_gossip`],
/// so it matches a gossip run whose messages all drop.
pub fn baseline_no_connection(
    cfg: &GossipConfig,
    shards: Vec<Vec<Vec<f64>>>,
    gan_cfg: &GanConfig,
    out_hw: usize,
) -> Result<Vec<UeState>> {
    cfg.validate()?;
    let mut ues = build_ues(cfg, shards, gan_cfg, out_hw)?;
    let mut done = 0usize;
    while done < cfg.epoch_budget {
        let chunk = cfg.delta.min(cfg.epoch_budget - done);
        train_chunk_parallel(&mut ues, chunk)?;
        done += chunk;
        for ue in &mut ues {
            ue.epochs_done += chunk;
        }
    }
    Ok(ues)
}

/// Synchronous server-aggregated baseline: every round, all users train
/// locally, a central aggregator averages all K generator and
/// discriminator vectors and broadcasts the means back. Each round moves
/// 2·K·(|G|+|D|) parameters through the base station (uplink + downlink).
pub fn baseline_federated(
    cfg: &GossipConfig,
    shards: Vec<Vec<Vec<f64>>>,
    gan_cfg: &GanConfig,
    out_hw: usize,
    rounds: usize,
    epochs_per_round: usize,
) -> Result<(Vec<UeState>, BandwidthReport)> {
    if cfg.k_ues == 0 || rounds == 0 || epochs_per_round == 0 {
        return Err(GossipError::BadConfig("rounds, epochs and users must be positive".into()));
    }
    // a single-user federation degenerates to local training (aggregation
    // of one model is the identity), so k = 1 is allowed here
    if shards.len() != cfg.k_ues {
        return Err(GossipError::ShardCount { expected: cfg.k_ues, got: shards.len() });
    }
    for (i, s) in shards.iter().enumerate() {
        if s.is_empty() {
            return Err(GossipError::EmptyShard(i));
        }
    }
    let init_seed = seeds::derive(cfg.master_seed, "init", 0);
    let mut ues: Vec<UeState> = shards
        .into_iter()
        .enumerate()
        .map(|(id, shard)| {
            let g = Generator::new(gan_cfg.latent_dim, out_hw, gan_cfg.width_scale, seeds::derive(init_seed, "gen", 0))?;
            let d = Discriminator::new(out_hw, gan_cfg.width_scale, seeds::derive(init_seed, "disc", 0))?;
            let trainer = GanTrainer::new(g, d, gan_cfg.clone(), ue_train_seed(cfg, id))?;
            Ok(UeState { id, shard, trainer, inbox: Vec::new(), epochs_done: 0, merges_done: 0 })
        })
        .collect::<Result<_>>()?;

    let pair_scalars = (ues[0].trainer.generator.params.param_count()
        + ues[0].trainer.discriminator.params.param_count()) as u64;
    let mut bandwidth = BandwidthReport::default();
    for _ in 0..rounds {
        train_chunk_parallel(&mut ues, epochs_per_round)?;
        for ue in &mut ues {
            ue.epochs_done += epochs_per_round;
        }
        let g_avg = ParamVector::average(&ues.iter().map(|u| &u.trainer.generator.params).collect::<Vec<_>>())?;
        let d_avg = ParamVector::average(&ues.iter().map(|u| &u.trainer.discriminator.params).collect::<Vec<_>>())?;
        for ue in &mut ues {
            ue.trainer.generator.params = g_avg.clone();
            ue.trainer.discriminator.params = d_avg.clone();
            ue.merges_done += 1;
        }
        bandwidth.bs_uplink_params += 2 * cfg.k_ues as u64 * pair_scalars;
        bandwidth.rounds += 1;
    }
    Ok((ues, bandwidth))
}
