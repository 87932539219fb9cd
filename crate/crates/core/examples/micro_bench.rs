//! Microbenchmarks for the training inner loops.

use gossipgan::gan::{Discriminator, GanConfig, GanTrainer, Generator};
use gossipgan::nn::{Forward, Mode};
use gossipgan::tensor::{Tape, Tensor};
use std::time::Instant;

fn main() {
    let hw = 8usize;
    let ws = 0.125;
    let d = Discriminator::new(hw, ws, 2).unwrap();
    let x = Tensor::from_vec(&[20, 2, hw, hw], (0..20 * 2 * hw * hw).map(|i| ((i % 17) as f64) / 8.5 - 1.0).collect()).unwrap();

    // plain eval forward
    let t0 = Instant::now();
    let n = 50;
    for _ in 0..n {
        let tape = Tape::inference();
        let fw = Forward::new(&tape, &d.params, false, Mode::Eval);
        d.forward(&fw, &x, None).unwrap();
    }
    println!("D eval fwd (batch 20): {:.3} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);

    // recorded forward + first-order backward
    let t0 = Instant::now();
    for _ in 0..n {
        let tape = Tape::new();
        let fw = Forward::new(&tape, &d.params, true, Mode::Train);
        let (s, _) = d.forward(&fw, &x, None).unwrap();
        let loss = tape.mean_all(&s).unwrap();
        let leaves = fw.trainable_leaves();
        tape.backward(&loss, &leaves, false).unwrap();
    }
    println!("D fwd+bwd (batch 20):  {:.3} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);

    // gradient penalty double backward
    let t0 = Instant::now();
    for _ in 0..n {
        let tape = Tape::new();
        let fw = Forward::new(&tape, &d.params, true, Mode::Train);
        let hhat = tape.leaf(&x);
        let gp = gossipgan::gan::gradient_penalty(&d, &fw, &hhat, None).unwrap();
        let leaves = fw.trainable_leaves();
        tape.backward(&gp, &leaves, false).unwrap();
    }
    println!("GP double bwd:         {:.3} ms", t0.elapsed().as_secs_f64() * 1000.0 / n as f64);

    // one full training epoch on 200 samples
    let data: Vec<Vec<f64>> = (0..200)
        .map(|i| (0..2 * hw * hw).map(|k| (((i * 31 + k * 7) % 19) as f64 / 9.5 - 1.0) * 0.9).collect())
        .collect();
    let cfg = GanConfig { latent_dim: 32, width_scale: ws, batch: 20, n_critic: 3, dropout: 0.3, ..GanConfig::default() };
    let g = Generator::new(32, hw, ws, 1).unwrap();
    let dd = Discriminator::new(hw, ws, 2).unwrap();
    let mut trainer = GanTrainer::new(g, dd, cfg, 3).unwrap();
    let t0 = Instant::now();
    trainer.train_epochs(&data, 3).unwrap();
    println!("GAN epoch (200x, b20): {:.3} ms", t0.elapsed().as_secs_f64() * 1000.0 / 3.0);
}
