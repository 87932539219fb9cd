//! GAN learnability diagnostics on pooled desk data: centralized training,
//! critic-difference trajectory, sample statistics, and a DAE trained on
//! the fake set scored against both fake and real test data.
//! Usage: gan_diag [epochs] [n_critic] [lr] [dropout] [lambda2]

use gossipgan::dae::{build_dae, nmse_db, train_dae};
use gossipgan::gan::{Discriminator, GanConfig, GanTrainer, Generator};
use gossipgan::pipeline::{generate_scenario_data, ExperimentConfig};
use gossipgan::seeds;

fn stats(name: &str, rows: &[Vec<f64>]) {
    let n = (rows.len() * rows[0].len()) as f64;
    let mean = rows.iter().flatten().sum::<f64>() / n;
    let var = rows.iter().flatten().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let maxabs = rows.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    // energy along the first plane's row structure as a crude shape probe
    eprintln!("{name}: mean={mean:+.4} std={:.4} maxabs={maxabs:.4}", var.sqrt());
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let n_critic: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let dropout: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0.3);
    let lambda2: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(2.0);

    let mut cfg = ExperimentConfig::desk("sparse", 1);
    cfg.gan.n_critic = n_critic;
    cfg.gan.lr = lr;
    cfg.gan.dropout = dropout;
    cfg.gan.lambda2 = lambda2;
    eprintln!("epochs={epochs} n_critic={n_critic} lr={lr} dropout={dropout} lambda2={lambda2}");

    let data = generate_scenario_data(&cfg).unwrap();
    let pooled = data.dataset.train_tensors();
    stats("real", &pooled);

    let g = Generator::new(cfg.gan.latent_dim, 8, cfg.gan.width_scale, seeds::derive(1, "gen", 0)).unwrap();
    let d = Discriminator::new(8, cfg.gan.width_scale, seeds::derive(1, "disc", 0)).unwrap();
    let gan_cfg = GanConfig { epochs, ..cfg.gan.clone() };
    let mut trainer = GanTrainer::new(g, d, gan_cfg, seeds::derive(1, "train", 0)).unwrap();
    let t0 = std::time::Instant::now();
    for block in 0..(epochs / 10).max(1) {
        trainer.train_epochs(&pooled, 10.min(epochs - block * 10)).unwrap();
        let h = &trainer.histories;
        eprintln!(
            "epoch {:3}: d_loss={:+.4} g_loss={:+.4} critic_diff={:+.5} ({:.0}s)",
            trainer.epochs_done(),
            h.d_loss.last().unwrap(),
            h.g_loss.last().unwrap(),
            h.critic_diff.last().unwrap(),
            t0.elapsed().as_secs_f64()
        );
    }

    let fake = trainer.generator.sample(2000, 99, 100).unwrap();
    stats("fake", &fake);

    // DAE on fakes, evaluated on fake held-out and real held-out
    let mut dae = build_dae(&cfg.dae, 7).unwrap();
    let dae_cfg = gossipgan::dae::DaeConfig { epochs: 60, ..cfg.dae.clone() };
    let hist = train_dae(&mut dae, &fake, &dae_cfg, 11).unwrap();
    eprintln!("dae loss: {:.5} -> {:.5} ({:.0}s)", hist[0], hist.last().unwrap(), t0.elapsed().as_secs_f64());

    let fake_test = trainer.generator.sample(256, 123, 100).unwrap();
    let recon_fake = dae.reconstruct(&fake_test).unwrap();
    eprintln!("DAE on fake test:  {:+.3} dB", nmse_db(&fake_test, &recon_fake).unwrap());

    let real_test = data.dataset.test_tensors();
    let recon_real = dae.reconstruct(&real_test).unwrap();
    eprintln!("DAE on real test:  {:+.3} dB", nmse_db(&real_test, &recon_real).unwrap());
}
