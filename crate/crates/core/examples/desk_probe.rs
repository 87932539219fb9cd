//! Quick look at desk-scale NMSE orderings across run kinds.
//! Usage: desk_probe [seed] [epoch_budget] [dae_epochs]

use gossipgan::pipeline::{run_baseline, run_gossip_gan, ExperimentConfig, RunKind};

fn main() {
    let t0 = std::time::Instant::now();
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let budget: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(60);
    let dae_epochs: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(60);
    let mut cfg = ExperimentConfig::desk("sparse", seed);
    cfg.gossip.epoch_budget = budget;
    cfg.dae.epochs = dae_epochs;
    eprintln!(
        "seed={seed} budget={budget} dae_epochs={dae_epochs} batch={} n_critic={} dropout={} S={} gamma={}",
        cfg.gan.batch, cfg.gan.n_critic, cfg.gan.dropout, cfg.synth_size, cfg.dae.gamma
    );

    let untrained = run_baseline(&cfg, RunKind::UntrainedDae).unwrap();
    eprintln!("untrained:  {:8.3} dB   ({:.0}s)", untrained.report.nmse_db[0], t0.elapsed().as_secs_f64());

    let truth = run_baseline(&cfg, RunKind::TrueCsi).unwrap();
    eprintln!("true-csi:   {:8.3} dB   ({:.0}s)", truth.report.nmse_db[0], t0.elapsed().as_secs_f64());

    let gossip = run_gossip_gan(&cfg).unwrap();
    eprintln!(
        "gossip:     {:8.3} dB   ({:.0}s)  d_loss[last]={:.4}",
        gossip.report.nmse_db[0],
        t0.elapsed().as_secs_f64(),
        gossip.report.gan_d_loss.last().unwrap(),
    );

    let nocon = run_baseline(&cfg, RunKind::NoConnection).unwrap();
    eprintln!("no-conn:    {:8.3} dB   ({:.0}s)", nocon.report.nmse_db[0], t0.elapsed().as_secs_f64());
    eprintln!(
        "gossip wall: data={:.1}s gan={:.1}s dae={:.1}s eval={:.1}s",
        gossip.report.wall.data_s, gossip.report.wall.gan_s, gossip.report.wall.dae_s, gossip.report.wall.eval_s
    );
}
