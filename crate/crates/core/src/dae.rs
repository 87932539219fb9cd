//! CSI compression autoencoder: convolutional feature extraction with a
//! fully connected bottleneck of length V = 2·N_t·N_c·γ, and a decoder
//! that restores the CSI size and refines it through three residual
//! conv stages before a tanh output.

use crate::nn::{Adam, BatchNorm, Conv2d, Forward, Linear, Mode, ParamVector};
use crate::seeds;
use crate::tensor::{Tape, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DaeError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid autoencoder config: {0}")]
    BadConfig(String),
    #[error("codeword size 2·{n_t}·{n_c}·γ = {v} is not a positive integer")]
    FractionalCodeword { n_t: usize, n_c: usize, v: f64 },
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("evaluation needs nonempty, equally sized sets")]
    BadEvalSet,
    #[error("NMSE undefined: reference sample {index} has zero norm")]
    ZeroReference { index: usize },
}

pub type Result<T> = std::result::Result<T, DaeError>;

/// Negative-side slope of the hidden activations.
pub const LEAKY_SLOPE: f64 = 0.3;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DaeConfig {
    pub n_t: usize,
    pub n_c: usize,
    /// Compression ratio γ = V / (2·N_t·N_c).
    pub gamma: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Channel multiplier for the refine stages (8 and 16 at scale 1).
    pub width_scale: f64,
}

impl Default for DaeConfig {
    fn default() -> Self {
        DaeConfig { n_t: 32, n_c: 32, gamma: 1.0 / 16.0, lr: 1e-3, epochs: 100, batch: 100, width_scale: 1.0 }
    }
}

impl DaeConfig {
    /// Codeword length V; errs unless 2·N_t·N_c·γ is a positive integer.
    pub fn codeword_len(&self) -> Result<usize> {
        let exact = 2.0 * self.n_t as f64 * self.n_c as f64 * self.gamma;
        let v = exact.round();
        if !(exact > 0.0) || (exact - v).abs() > 1e-9 {
            return Err(DaeError::FractionalCodeword { n_t: self.n_t, n_c: self.n_c, v: exact });
        }
        Ok(v as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_t == 0 || self.n_c == 0 || self.batch == 0 {
            return Err(DaeError::BadConfig("dimensions and batch must be positive".into()));
        }
        if !(self.width_scale > 0.0) {
            return Err(DaeError::BadConfig("width_scale must be positive".into()));
        }
        self.codeword_len()?;
        Ok(())
    }
}

#[derive(Clone)]
struct RefineBlock {
    conv1: Conv2d,
    bn1: BatchNorm,
    conv2: Conv2d,
    bn2: BatchNorm,
    conv3: Conv2d,
    bn3: BatchNorm,
}

/// Encoder + decoder pair. The two parameter vectors are separate so they
/// can be shipped (and checkpointed) independently.
#[derive(Clone)]
pub struct Dae {
    pub n_t: usize,
    pub n_c: usize,
    pub codeword_len: usize,
    pub encoder: ParamVector,
    pub decoder: ParamVector,
    enc_conv: Conv2d,
    enc_bn: BatchNorm,
    enc_fc: Linear,
    dec_fc: Linear,
    blocks: Vec<RefineBlock>,
    dec_out: Conv2d,
}

/// Build the model per the config; all weights come from `init_seed`,
/// biases start at zero.
pub fn build_dae(cfg: &DaeConfig, init_seed: u64) -> Result<Dae> {
    cfg.validate()?;
    let v = cfg.codeword_len()?;
    let flat = 2 * cfg.n_t * cfg.n_c;
    let c8 = ((8.0 * cfg.width_scale).round() as usize).max(1);
    let c16 = ((16.0 * cfg.width_scale).round() as usize).max(1);

    let mut enc_rng = ChaCha8Rng::seed_from_u64(seeds::derive(init_seed, "enc", 0));
    let mut encoder = ParamVector::new();
    let enc_conv = Conv2d::new(&mut encoder, "e.conv", 2, 2, 3, 1, 1, &mut enc_rng);
    let enc_bn = BatchNorm::new(&mut encoder, "e.bn", 2);
    let enc_fc = Linear::new(&mut encoder, "e.fc", flat, v, &mut enc_rng);

    let mut dec_rng = ChaCha8Rng::seed_from_u64(seeds::derive(init_seed, "dec", 0));
    let mut decoder = ParamVector::new();
    let dec_fc = Linear::new(&mut decoder, "d.fc", v, flat, &mut dec_rng);
    let mut blocks = Vec::with_capacity(3);
    for i in 0..3 {
        let conv1 = Conv2d::new(&mut decoder, &format!("d.refine{i}.conv1"), 2, c8, 3, 1, 1, &mut dec_rng);
        let bn1 = BatchNorm::new(&mut decoder, &format!("d.refine{i}.bn1"), c8);
        let conv2 = Conv2d::new(&mut decoder, &format!("d.refine{i}.conv2"), c8, c16, 3, 1, 1, &mut dec_rng);
        let bn2 = BatchNorm::new(&mut decoder, &format!("d.refine{i}.bn2"), c16);
        let conv3 = Conv2d::new(&mut decoder, &format!("d.refine{i}.conv3"), c16, 2, 3, 1, 1, &mut dec_rng);
        let bn3 = BatchNorm::new(&mut decoder, &format!("d.refine{i}.bn3"), 2);
        blocks.push(RefineBlock { conv1, bn1, conv2, bn2, conv3, bn3 });
    }
    let dec_out = Conv2d::new(&mut decoder, "d.out", 2, 2, 3, 1, 1, &mut dec_rng);

    Ok(Dae {
        n_t: cfg.n_t,
        n_c: cfg.n_c,
        codeword_len: v,
        encoder,
        decoder,
        enc_conv,
        enc_bn,
        enc_fc,
        dec_fc,
        blocks,
        dec_out,
    })
}

impl Dae {
    pub fn sample_len(&self) -> usize {
        2 * self.n_t * self.n_c
    }

    /// Encoder pass on a (B, 2, n_t, n_c) tensor → (B, V).
    pub fn encode_t(&self, fw: &Forward, x: &Tensor) -> Result<Tensor> {
        let sh = x.shape();
        if sh.len() != 4 || sh[1] != 2 || sh[2] != self.n_t || sh[3] != self.n_c {
            return Err(DaeError::BadConfig(format!("encoder input shape {:?}", sh)));
        }
        let t = fw.tape;
        let h = self.enc_conv.forward(fw, x)?;
        let h = t.leaky_relu(&self.enc_bn.forward(fw, &h)?, LEAKY_SLOPE)?;
        let flat = t.reshape(&h, &[sh[0], self.sample_len()])?;
        Ok(t.leaky_relu(&self.enc_fc.forward(fw, &flat)?, LEAKY_SLOPE)?)
    }

    /// Decoder pass on a (B, V) tensor → (B, 2, n_t, n_c) in (−1, 1).
    pub fn decode_t(&self, fw: &Forward, s: &Tensor) -> Result<Tensor> {
        let sh = s.shape();
        if sh.len() != 2 || sh[1] != self.codeword_len {
            return Err(DaeError::BadConfig(format!(
                "codeword shape {:?}, expected (B, {})",
                sh, self.codeword_len
            )));
        }
        let t = fw.tape;
        let h = t.leaky_relu(&self.dec_fc.forward(fw, s)?, LEAKY_SLOPE)?;
        let mut x = t.reshape(&h, &[sh[0], 2, self.n_t, self.n_c])?;
        for b in &self.blocks {
            let h = t.leaky_relu(&b.bn1.forward(fw, &b.conv1.forward(fw, &x)?)?, LEAKY_SLOPE)?;
            let h = t.leaky_relu(&b.bn2.forward(fw, &b.conv2.forward(fw, &h)?)?, LEAKY_SLOPE)?;
            let h = b.bn3.forward(fw, &b.conv3.forward(fw, &h)?)?;
            x = t.leaky_relu(&t.add(&h, &x)?, LEAKY_SLOPE)?;
        }
        Ok(t.tanh(&self.dec_out.forward(fw, &x)?)?)
    }

    /// Deterministic evaluation-mode encode of flat samples.
    pub fn encode(&self, samples: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.map_batched(samples, self.sample_len(), |fw_enc, _, x| self.encode_t(fw_enc, x))
    }

    /// Deterministic evaluation-mode decode of codewords.
    pub fn decode(&self, codewords: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.map_batched(codewords, self.codeword_len, |_, fw_dec, s| self.decode_t(fw_dec, s))
    }

    /// Evaluation-mode reconstruction of flat samples.
    pub fn reconstruct(&self, samples: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        self.map_batched(samples, self.sample_len(), |fw_enc, fw_dec, x| {
            let s = self.encode_t(fw_enc, x)?;
            self.decode_t(fw_dec, &s)
        })
    }

    fn map_batched<F>(&self, rows: &[Vec<f64>], row_len: usize, f: F) -> Result<Vec<Vec<f64>>>
    where
        F: Fn(&Forward, &Forward, &Tensor) -> Result<Tensor>,
    {
        if rows.iter().any(|r| r.len() != row_len) {
            return Err(DaeError::BadConfig("row length mismatch".into()));
        }
        let mut out = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(256.max(1)) {
            let tape = Tape::inference();
            let fw_enc = Forward::new(&tape, &self.encoder, false, Mode::Eval);
            let fw_dec = Forward::new(&tape, &self.decoder, false, Mode::Eval);
            let mut vals = Vec::with_capacity(chunk.len() * row_len);
            for r in chunk {
                vals.extend_from_slice(r);
            }
            let shape = if row_len == self.sample_len() {
                vec![chunk.len(), 2, self.n_t, self.n_c]
            } else {
                vec![chunk.len(), row_len]
            };
            let x = Tensor::from_vec(&shape, vals)?;
            let y = f(&fw_enc, &fw_dec, &x)?;
            let per_row = y.numel() / chunk.len();
            for i in 0..chunk.len() {
                out.push(y.data()[i * per_row..(i + 1) * per_row].to_vec());
            }
        }
        Ok(out)
    }
}

/// Reconstruction loss: (1/B) Σ_i ‖H_i − Ĥ_i‖₂².
pub fn mse_loss(tape: &Tape, h: &Tensor, hhat: &Tensor) -> Result<Tensor> {
    if h.shape() != hhat.shape() {
        return Err(DaeError::Tensor(TensorError::ShapeMismatch {
            op: "mse_loss",
            detail: format!("{:?} vs {:?}", h.shape(), hhat.shape()),
        }));
    }
    let batch = *h.shape().first().ok_or_else(|| DaeError::BadConfig("empty batch".into()))?;
    if batch == 0 {
        return Err(DaeError::BadConfig("empty batch".into()));
    }
    let diff = tape.sub(h, hhat)?;
    let sq = tape.mul(&diff, &diff)?;
    Ok(tape.scalar_mul(&tape.sum_all(&sq)?, 1.0 / batch as f64)?)
}

/// Value-level MSE over flat sample pairs.
pub fn mse_value(h: &[Vec<f64>], hhat: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    for (a, b) in h.iter().zip(hhat) {
        total += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    }
    total / h.len().max(1) as f64
}

/// Train in place; returns the per-epoch loss history. Deterministic given
/// the seed. Non-finite loss aborts with the offending epoch.
pub fn train_dae(dae: &mut Dae, data: &[Vec<f64>], cfg: &DaeConfig, train_seed: u64) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(DaeError::BadConfig("empty training set".into()));
    }
    let sample_len = dae.sample_len();
    if data.iter().any(|s| s.len() != sample_len) {
        return Err(DaeError::BadConfig("sample length does not match the model size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(train_seed);
    let mut adam_enc = Adam::new(&dae.encoder, cfg.lr);
    let mut adam_dec = Adam::new(&dae.decoder, cfg.lr);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let mut vals = Vec::with_capacity(chunk.len() * sample_len);
            for &i in chunk {
                vals.extend_from_slice(&data[i]);
            }
            let x = Tensor::from_vec(&[chunk.len(), 2, dae.n_t, dae.n_c], vals)?;

            let tape = Tape::new();
            let fw_enc = Forward::new(&tape, &dae.encoder, true, Mode::Train);
            let fw_dec = Forward::new(&tape, &dae.decoder, true, Mode::Train);
            let s = dae.encode_t(&fw_enc, &x)?;
            let y = dae.decode_t(&fw_dec, &s)?;
            let loss = mse_loss(&tape, &x, &y)?;
            epoch_loss += loss.scalar()?;
            batches += 1;

            let enc_leaves = fw_enc.trainable_leaves();
            let dec_leaves = fw_dec.trainable_leaves();
            let mut wrt: Vec<&Tensor> = enc_leaves.clone();
            wrt.extend(dec_leaves.iter().copied());
            let mut grads = tape.backward(&loss, &wrt, false)?;
            let dec_grads = grads.split_off(enc_leaves.len());
            adam_enc.step(&mut dae.encoder, &grads).map_err(DaeError::Tensor)?;
            adam_dec.step(&mut dae.decoder, &dec_grads).map_err(DaeError::Tensor)?;
            fw_enc.apply_state(&mut dae.encoder);
            fw_dec.apply_state(&mut dae.decoder);
        }
        let mean = epoch_loss / batches.max(1) as f64;
        if !mean.is_finite() {
            return Err(DaeError::Diverged { epoch });
        }
        history.push(mean);
    }
    Ok(history)
}

/// NMSE in dB over (denormalized) sample pairs:
/// 10·log10(mean_i ‖Ĥ_i − H_i‖² / ‖H_i‖²). A perfect reconstruction yields
/// −∞ (see [`format_nmse`]).
pub fn nmse_db(h_set: &[Vec<f64>], hhat_set: &[Vec<f64>]) -> Result<f64> {
    if h_set.is_empty() || h_set.len() != hhat_set.len() {
        return Err(DaeError::BadEvalSet);
    }
    let mut ratio_sum = 0.0;
    for (i, (h, hhat)) in h_set.iter().zip(hhat_set).enumerate() {
        if h.len() != hhat.len() {
            return Err(DaeError::BadEvalSet);
        }
        let num: f64 = h.iter().zip(hhat).map(|(a, b)| (b - a) * (b - a)).sum();
        let den: f64 = h.iter().map(|a| a * a).sum();
        if den == 0.0 {
            return Err(DaeError::ZeroReference { index: i });
        }
        ratio_sum += num / den;
    }
    Ok(10.0 * (ratio_sum / h_set.len() as f64).log10())
}

/// Render an NMSE value; −∞ (exact reconstruction) prints as `perfect`.
pub fn format_nmse(v: f64) -> String {
    if v == f64::NEG_INFINITY {
        "perfect".to_string()
    } else {
        format!("{v:.6}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_cfg() -> DaeConfig {
        DaeConfig { n_t: 8, n_c: 8, gamma: 0.25, lr: 1e-3, epochs: 5, batch: 4, width_scale: 0.5 }
    }

    fn toy_data(n: usize, len: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..len).map(|k| ((((i * 31 + k * 7) % 17) as f64) / 8.5 - 1.0) * 0.9).collect())
            .collect()
    }

    #[test]
    fn codeword_sizes_follow_the_compression_ratio() {
        for (gamma, v) in [(1.0 / 16.0, 128), (1.0 / 32.0, 64), (1.0 / 64.0, 32), (1.0 / 128.0, 16)] {
            let cfg = DaeConfig { n_t: 32, n_c: 32, gamma, ..DaeConfig::default() };
            assert_eq!(cfg.codeword_len().unwrap(), v);
            // the ratio identity holds exactly
            assert_eq!(v as f64 / (2.0 * 32.0 * 32.0), gamma);
        }
        let identity = DaeConfig { n_t: 8, n_c: 8, gamma: 1.0, ..DaeConfig::default() };
        assert_eq!(identity.codeword_len().unwrap(), 128);
        let bad = DaeConfig { n_t: 3, n_c: 3, gamma: 0.1, ..DaeConfig::default() };
        assert!(matches!(bad.codeword_len(), Err(DaeError::FractionalCodeword { .. })));
    }

    #[test]
    fn zero_input_encodes_to_zero_codeword() {
        let dae = build_dae(&desk_cfg(), 7).unwrap();
        let zero = vec![vec![0.0; dae.sample_len()]];
        let code = dae.encode(&zero).unwrap();
        assert!(code[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encoding_is_deterministic_and_batch_consistent() {
        let dae = build_dae(&desk_cfg(), 7).unwrap();
        let data = toy_data(5, dae.sample_len());
        let a = dae.encode(&data).unwrap();
        let b = dae.encode(&data).unwrap();
        assert_eq!(a, b);
        // batch encode equals per-sample encode stacked
        for (i, row) in data.iter().enumerate() {
            let single = dae.encode(std::slice::from_ref(row)).unwrap();
            for (x, y) in single[0].iter().zip(&a[i]) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decoder_output_stays_inside_tanh_range() {
        let dae = build_dae(&desk_cfg(), 3).unwrap();
        let codes = toy_data(4, dae.codeword_len);
        let out = dae.decode(&codes).unwrap();
        assert!(out.iter().flatten().all(|v| v.abs() < 1.0));
        assert_eq!(out[0].len(), dae.sample_len());
        // wrong codeword length is an error
        assert!(dae.decode(&[vec![0.0; dae.codeword_len + 1]]).is_err());
    }

    #[test]
    fn mse_loss_matches_scalar_loop() {
        let tape = Tape::new();
        let h = Tensor::from_vec(&[2, 3], vec![1.0, 0.5, -0.25, 0.0, 2.0, -1.0]).unwrap();
        let y = Tensor::from_vec(&[2, 3], vec![0.5, 0.5, 0.25, -1.0, 1.0, 1.0]).unwrap();
        let loss = mse_loss(&tape, &h, &y).unwrap().scalar().unwrap();
        let mut expect = 0.0;
        for i in 0..6 {
            let d = h.data()[i] - y.data()[i];
            expect += d * d;
        }
        expect /= 2.0;
        assert!((loss - expect).abs() < 1e-12);

        // unit-impulse case: one wrong entry of magnitude 1 → 1/B
        let h1 = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let z = Tensor::from_vec(&[2, 2], vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let l = mse_loss(&tape, &h1, &z).unwrap().scalar().unwrap();
        assert!((l - 0.5).abs() < 1e-15);
        let same = mse_loss(&tape, &h1, &h1).unwrap().scalar().unwrap();
        assert_eq!(same, 0.0);
    }

    #[test]
    fn overfit_smoke_reduces_loss_at_least_tenfold() {
        let mut cfg = desk_cfg();
        cfg.epochs = 200;
        cfg.batch = 4;
        let mut dae = build_dae(&cfg, 11).unwrap();
        let data = toy_data(4, dae.sample_len());

        let untrained = mse_value(&data, &dae.reconstruct(&data).unwrap());
        let history = train_dae(&mut dae, &data, &cfg, 13).unwrap();
        assert_eq!(history.len(), cfg.epochs);
        let trained = mse_value(&data, &dae.reconstruct(&data).unwrap());
        assert!(trained < untrained, "trained {trained} vs untrained {untrained}");
        assert!(history[0] / history[cfg.epochs - 1] >= 10.0, "{} -> {}", history[0], history[cfg.epochs - 1]);

        // loss non-increasing in at least 80% of epochs
        let drops = history.windows(2).filter(|w| w[1] <= w[0]).count();
        assert!(drops as f64 >= 0.8 * (history.len() - 1) as f64);
    }

    #[test]
    fn training_is_deterministic_given_the_seed() {
        let cfg = DaeConfig { epochs: 3, ..desk_cfg() };
        let data = toy_data(6, 2 * cfg.n_t * cfg.n_c);
        let run = || {
            let mut dae = build_dae(&cfg, 5).unwrap();
            let h = train_dae(&mut dae, &data, &cfg, 9).unwrap();
            (dae.encoder.digest(), dae.decoder.digest(), h)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn nmse_unit_cases() {
        let h = vec![vec![1.0, -2.0, 0.5]];
        assert_eq!(nmse_db(&h, &h.clone()).unwrap(), f64::NEG_INFINITY);
        assert_eq!(format_nmse(f64::NEG_INFINITY), "perfect");

        let zero = vec![vec![0.0, 0.0, 0.0]];
        assert!((nmse_db(&h, &zero).unwrap() - 0.0).abs() < 1e-12);

        let half = vec![vec![0.5, -1.0, 0.25]];
        let db = nmse_db(&h, &half).unwrap();
        assert!((db - 10.0 * 0.25f64.log10()).abs() < 1e-12);
        assert!((db + 6.0206).abs() < 1e-3);

        assert!(matches!(nmse_db(&zero, &h), Err(DaeError::ZeroReference { index: 0 })));
        assert!(matches!(nmse_db(&[], &[]), Err(DaeError::BadEvalSet)));
    }

    #[test]
    fn nmse_is_scale_invariant() {
        let h = vec![vec![1.0, 2.0, -3.0], vec![0.5, -0.25, 4.0]];
        let hhat = vec![vec![1.1, 1.8, -2.5], vec![0.4, -0.5, 3.5]];
        let a = nmse_db(&h, &hhat).unwrap();
        let scale = 7.3;
        let hs: Vec<Vec<f64>> = h.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
        let hhs: Vec<Vec<f64>> = hhat.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
        let b = nmse_db(&hs, &hhs).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
