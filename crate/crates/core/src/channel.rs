//! Parametric mMIMO-OFDM channel synthesis: per-path array responses
//! combined across subcarriers into complex channel matrices, scenario
//! presets that stand in for ray-traced path data, and dataset
//! normalization into real 2-plane tensors.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("invalid geometry: {0}")]
    BadGeometry(String),
    #[error("invalid channel config: {0}")]
    BadConfig(String),
    #[error("subcarrier index {n} outside 1..={max}")]
    SubcarrierOutOfRange { n: usize, max: usize },
    #[error("empty scenario (no paths)")]
    EmptyScenario,
    #[error("cannot normalize an all-zero dataset")]
    AllZero,
    #[error("empty dataset")]
    EmptyDataset,
}

pub type Result<T> = std::result::Result<T, ChannelError>;

/// Antenna array layout. `spacing_phase` is the per-element phase constant
/// ψ (radians per unit direction cosine); π corresponds to half-wavelength
/// spacing.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayGeometry {
    pub n_x: usize,
    pub n_y: usize,
    pub n_z: usize,
    pub spacing_phase: f64,
}

pub const HALF_WAVELENGTH_PHASE: f64 = std::f64::consts::PI;

impl ArrayGeometry {
    pub fn ula_x(n: usize) -> ArrayGeometry {
        ArrayGeometry { n_x: n, n_y: 1, n_z: 1, spacing_phase: HALF_WAVELENGTH_PHASE }
    }

    pub fn n_t(&self) -> usize {
        self.n_x * self.n_y * self.n_z
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_t() == 0 {
            return Err(ChannelError::BadGeometry("zero antennas".into()));
        }
        if !self.spacing_phase.is_finite() {
            return Err(ChannelError::BadGeometry("non-finite spacing phase".into()));
        }
        Ok(())
    }
}

/// How the per-element phase constant is chosen: a frequency-flat constant
/// ψ from the geometry, or the text-faithful variant where the constant is
/// n·ψ on subcarrier n.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseMode {
    #[default]
    Standard,
    Literal,
}

/// One propagation path.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PathParams {
    /// Linear receive power ρ ≥ 0.
    pub power: f64,
    /// Phase ϑ in radians.
    pub phase: f64,
    /// Propagation delay τ in seconds, ≥ 0.
    pub delay: f64,
    /// Azimuth of departure, radians.
    pub azimuth: f64,
    /// Elevation of departure, radians.
    pub elevation: f64,
}

impl PathParams {
    pub fn validate(&self) -> Result<()> {
        if self.power < 0.0 || self.delay < 0.0 {
            return Err(ChannelError::BadConfig("power and delay must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub n_t: usize,
    pub n_c: usize,
    /// System bandwidth in Hz.
    pub bandwidth: f64,
    pub n_paths: usize,
    pub geometry: ArrayGeometry,
    #[serde(default)]
    pub mode: ResponseMode,
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        if self.geometry.n_t() != self.n_t {
            return Err(ChannelError::BadConfig(format!(
                "geometry gives {} antennas, config says {}",
                self.geometry.n_t(),
                self.n_t
            )));
        }
        if self.n_c == 0 || self.n_paths == 0 {
            return Err(ChannelError::BadConfig("n_c and n_paths must be ≥ 1".into()));
        }
        if !(self.bandwidth > 0.0) {
            return Err(ChannelError::BadConfig("bandwidth must be positive".into()));
        }
        Ok(())
    }
}

/// One complex channel matrix H (n_t × n_c), column n = subcarrier n.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiSample {
    pub n_t: usize,
    pub n_c: usize,
    /// Row-major n_t × n_c.
    pub matrix: Vec<Complex64>,
}

impl CsiSample {
    /// Real 2-plane tensor (2, n_t, n_c): real plane then imaginary plane.
    pub fn to_planes(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.matrix.len());
        out.extend(self.matrix.iter().map(|c| c.re));
        out.extend(self.matrix.iter().map(|c| c.im));
        out
    }

    pub fn from_planes(n_t: usize, n_c: usize, planes: &[f64]) -> CsiSample {
        let half = n_t * n_c;
        let matrix = (0..half).map(|i| Complex64::new(planes[i], planes[half + i])).collect();
        CsiSample { n_t, n_c, matrix }
    }
}

/// Array response with an explicit per-element phase constant: the
/// Kronecker product a_z ⊗ a_y ⊗ a_x of per-axis progressions
/// e^{j·phase·k·u}, u the axis direction cosine.
pub fn array_response_with_phase(
    geometry: &ArrayGeometry,
    azimuth: f64,
    elevation: f64,
    phase: f64,
) -> Result<Vec<Complex64>> {
    geometry.validate()?;
    let ux = elevation.sin() * azimuth.cos();
    let uy = elevation.sin() * azimuth.sin();
    let uz = elevation.cos();
    let axis = |n: usize, u: f64| -> Vec<Complex64> {
        (0..n).map(|k| Complex64::from_polar(1.0, phase * k as f64 * u)).collect()
    };
    let ax = axis(geometry.n_x, ux);
    let ay = axis(geometry.n_y, uy);
    let az = axis(geometry.n_z, uz);
    let mut out = Vec::with_capacity(geometry.n_t());
    for vz in &az {
        for vy in &ay {
            for vx in &ax {
                out.push(vz * vy * vx);
            }
        }
    }
    Ok(out)
}

/// Array response using the geometry's own phase constant.
pub fn array_response(geometry: &ArrayGeometry, azimuth: f64, elevation: f64) -> Result<Vec<Complex64>> {
    array_response_with_phase(geometry, azimuth, elevation, geometry.spacing_phase)
}

/// Channel vector on subcarrier `n` (1-based):
/// h_n = Σ_l √(ρ_l/N_c) · e^{j(ϑ_l + 2πn·τ_l·B/N_c)} · a(φ_az, φ_el).
pub fn subcarrier_channel(config: &ChannelConfig, paths: &[PathParams], n: usize) -> Result<Vec<Complex64>> {
    config.validate()?;
    if n == 0 || n > config.n_c {
        return Err(ChannelError::SubcarrierOutOfRange { n, max: config.n_c });
    }
    if paths.is_empty() {
        return Err(ChannelError::EmptyScenario);
    }
    let mut h = vec![Complex64::new(0.0, 0.0); config.n_t];
    for p in paths {
        p.validate()?;
        let phase_const = match config.mode {
            ResponseMode::Standard => config.geometry.spacing_phase,
            ResponseMode::Literal => n as f64 * config.geometry.spacing_phase,
        };
        let a = array_response_with_phase(&config.geometry, p.azimuth, p.elevation, phase_const)?;
        let amp = (p.power / config.n_c as f64).sqrt();
        let rot = Complex64::from_polar(
            amp,
            p.phase + 2.0 * std::f64::consts::PI * n as f64 * p.delay * config.bandwidth / config.n_c as f64,
        );
        for (acc, ai) in h.iter_mut().zip(&a) {
            *acc += rot * ai;
        }
    }
    Ok(h)
}

/// Full channel matrix: column n is `subcarrier_channel(·, n)`.
pub fn channel_matrix(config: &ChannelConfig, paths: &[PathParams]) -> Result<CsiSample> {
    let mut matrix = vec![Complex64::new(0.0, 0.0); config.n_t * config.n_c];
    for n in 1..=config.n_c {
        let col = subcarrier_channel(config, paths, n)?;
        for (t, v) in col.into_iter().enumerate() {
            matrix[t * config.n_c + (n - 1)] = v;
        }
    }
    Ok(CsiSample { n_t: config.n_t, n_c: config.n_c, matrix })
}

/// Distributional surrogate for ray-traced path data. Powers follow an
/// exponential decay in delay, delays are exponential with the given
/// spread, angles are normal around the (possibly jittered) center.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub n_paths: usize,
    /// Power decay exponent per unit of normalized delay.
    pub power_decay: f64,
    /// Mean path delay in seconds.
    pub delay_spread: f64,
    pub az_center: f64,
    pub az_spread: f64,
    pub el_center: f64,
    pub el_spread: f64,
    /// Std-dev of the per-user angular offset applied by [`ScenarioSpec::jittered`].
    pub ue_jitter: f64,
}

impl ScenarioSpec {
    /// Tightly clustered users: narrow angular spread, little per-user
    /// offset, fast power decay.
    pub fn dense() -> ScenarioSpec {
        ScenarioSpec {
            n_paths: 4,
            power_decay: 3.0,
            delay_spread: 30e-9,
            az_center: -0.9,
            az_spread: 0.08,
            el_center: 1.45,
            el_spread: 0.04,
            ue_jitter: 0.03,
        }
    }

    /// Spread-out users: wide angular spread and noticeable per-user offset,
    /// slower power decay.
    pub fn sparse() -> ScenarioSpec {
        ScenarioSpec {
            n_paths: 4,
            power_decay: 1.5,
            delay_spread: 60e-9,
            az_center: 0.7,
            az_spread: 0.25,
            el_center: 1.35,
            el_spread: 0.10,
            ue_jitter: 0.12,
        }
    }

    pub fn preset(name: &str) -> Option<ScenarioSpec> {
        match name {
            "dense" => Some(ScenarioSpec::dense()),
            "sparse" => Some(ScenarioSpec::sparse()),
            _ => None,
        }
    }

    /// Shift the angle centers by a per-user offset drawn from N(0, jitter²).
    pub fn jittered(&self, rng: &mut ChaCha8Rng) -> ScenarioSpec {
        let daz: f64 = rng.sample::<f64, _>(StandardNormal) * self.ue_jitter;
        let del: f64 = rng.sample::<f64, _>(StandardNormal) * self.ue_jitter * 0.5;
        ScenarioSpec { az_center: self.az_center + daz, el_center: self.el_center + del, ..self.clone() }
    }
}

/// Draw one path set: delays sorted ascending, powers decaying in delay and
/// normalized to unit total, phases uniform, angles normal.
pub fn sample_scenario(rng: &mut ChaCha8Rng, spec: &ScenarioSpec) -> Result<Vec<PathParams>> {
    if spec.n_paths == 0 {
        return Err(ChannelError::EmptyScenario);
    }
    let mut delays: Vec<f64> = (0..spec.n_paths)
        .map(|_| {
            let u: f64 = rng.random::<f64>().max(1e-12);
            -spec.delay_spread * u.ln()
        })
        .collect();
    delays.sort_by(|a, b| a.partial_cmp(b).expect("finite delays"));
    let mut paths: Vec<PathParams> = delays
        .into_iter()
        .map(|delay| {
            let power = (-spec.power_decay * delay / spec.delay_spread).exp();
            let phase = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
            let azimuth = spec.az_center + rng.sample::<f64, _>(StandardNormal) * spec.az_spread;
            let elevation = spec.el_center + rng.sample::<f64, _>(StandardNormal) * spec.el_spread;
            PathParams { power, phase, delay, azimuth, elevation }
        })
        .collect();
    let total: f64 = paths.iter().map(|p| p.power).sum();
    for p in &mut paths {
        p.power /= total;
    }
    Ok(paths)
}

/// Real-plane dataset scaled into [−1, 1] by one global constant.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedDataset {
    pub n_t: usize,
    pub n_c: usize,
    /// One (2, n_t, n_c) tensor per sample, flattened row-major.
    pub tensors: Vec<Vec<f64>>,
    /// The global max-abs the planes were divided by.
    pub scale: f64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl NormalizedDataset {
    pub fn sample_len(&self) -> usize {
        2 * self.n_t * self.n_c
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Undo the global scaling for one tensor.
    pub fn denormalize(&self, tensor: &[f64]) -> Vec<f64> {
        tensor.iter().map(|v| v * self.scale).collect()
    }

    pub fn train_tensors(&self) -> Vec<Vec<f64>> {
        self.train.iter().map(|&i| self.tensors[i].clone()).collect()
    }

    pub fn test_tensors(&self) -> Vec<Vec<f64>> {
        self.test.iter().map(|&i| self.tensors[i].clone()).collect()
    }
}

/// Split samples into real 2-plane tensors and divide everything by the
/// global max-abs. `train`/`test` index lists are carried through.
pub fn normalize_dataset(samples: &[CsiSample], train: Vec<usize>, test: Vec<usize>) -> Result<NormalizedDataset> {
    let first = samples.first().ok_or(ChannelError::EmptyDataset)?;
    let (n_t, n_c) = (first.n_t, first.n_c);
    let planes: Vec<Vec<f64>> = samples.iter().map(|s| s.to_planes()).collect();
    let (tensors, scale) = normalize_planes(planes)?;
    Ok(NormalizedDataset { n_t, n_c, tensors, scale, train, test })
}

/// Core normalization: divide all planes by the global max-abs, return the
/// scale. Errors when everything is zero.
pub fn normalize_planes(mut planes: Vec<Vec<f64>>) -> Result<(Vec<Vec<f64>>, f64)> {
    if planes.is_empty() {
        return Err(ChannelError::EmptyDataset);
    }
    let scale = planes.iter().flat_map(|t| t.iter()).map(|v| v.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(ChannelError::AllZero);
    }
    for t in &mut planes {
        for v in t.iter_mut() {
            *v /= scale;
        }
    }
    Ok((planes, scale))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn ula_config(n_t: usize, n_c: usize) -> ChannelConfig {
        ChannelConfig {
            n_t,
            n_c,
            bandwidth: 5e7,
            n_paths: 1,
            geometry: ArrayGeometry::ula_x(n_t),
            mode: ResponseMode::Standard,
        }
    }

    #[test]
    fn single_element_response_is_one() {
        let g = ArrayGeometry { n_x: 1, n_y: 1, n_z: 1, spacing_phase: HALF_WAVELENGTH_PHASE };
        let a = array_response(&g, 0.3, 0.7).unwrap();
        assert_eq!(a.len(), 1);
        assert!((a[0] - Complex64::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn broadside_ula_response_is_all_ones() {
        let g = ArrayGeometry::ula_x(8);
        let a = array_response(&g, 0.4, 0.0).unwrap();
        for v in a {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn kronecker_equals_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let g = ArrayGeometry {
                n_x: rng.random_range(1..=4),
                n_y: rng.random_range(1..=4),
                n_z: rng.random_range(1..=4),
                spacing_phase: rng.random_range(0.1..6.0),
            };
            let az = rng.random_range(-3.0..3.0);
            let el = rng.random_range(-1.5..1.5);
            let a = array_response(&g, az, el).unwrap();

            // brute-force elementwise construction
            let ux = el.sin() * az.cos();
            let uy = el.sin() * az.sin();
            let uz = el.cos();
            let mut idx = 0;
            for kz in 0..g.n_z {
                for ky in 0..g.n_y {
                    for kx in 0..g.n_x {
                        let phase =
                            g.spacing_phase * (kx as f64 * ux + ky as f64 * uy + kz as f64 * uz);
                        let expect = Complex64::from_polar(1.0, phase);
                        assert!((a[idx] - expect).norm() < 1e-12);
                        idx += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn response_entries_have_unit_modulus() {
        let g = ArrayGeometry { n_x: 3, n_y: 2, n_z: 2, spacing_phase: 2.2 };
        for v in array_response(&g, 1.1, 0.8).unwrap() {
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn single_zero_phase_path_gives_all_ones() {
        let cfg = ula_config(6, 16);
        let paths = [PathParams { power: 16.0, phase: 0.0, delay: 0.0, azimuth: 0.9, elevation: 0.0 }];
        let h = subcarrier_channel(&cfg, &paths, 5).unwrap();
        for v in h {
            assert!((v - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn multipath_sum_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = ChannelConfig {
            n_t: 12,
            n_c: 8,
            bandwidth: 5e7,
            n_paths: 3,
            geometry: ArrayGeometry { n_x: 3, n_y: 2, n_z: 2, spacing_phase: 2.5 },
            mode: ResponseMode::Standard,
        };
        let paths: Vec<PathParams> = (0..3)
            .map(|_| PathParams {
                power: rng.random_range(0.1..2.0),
                phase: rng.random_range(0.0..6.28),
                delay: rng.random_range(0.0..1e-7),
                azimuth: rng.random_range(-3.0..3.0),
                elevation: rng.random_range(-1.5..1.5),
            })
            .collect();
        for n in 1..=cfg.n_c {
            let h = subcarrier_channel(&cfg, &paths, n).unwrap();
            for t in 0..cfg.n_t {
                let mut expect = Complex64::new(0.0, 0.0);
                for p in &paths {
                    let a = array_response(&cfg.geometry, p.azimuth, p.elevation).unwrap();
                    let amp = (p.power / cfg.n_c as f64).sqrt();
                    let arg = p.phase
                        + 2.0 * std::f64::consts::PI * n as f64 * p.delay * cfg.bandwidth
                            / cfg.n_c as f64;
                    expect += Complex64::from_polar(amp, arg) * a[t];
                }
                assert!((h[t] - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn full_period_delay_phase_equals_zero_delay() {
        let n = 4usize;
        let cfg = ula_config(4, 8);
        let tau = cfg.n_c as f64 / (n as f64 * cfg.bandwidth); // τB = N_c/n
        let with_delay = [PathParams { power: 1.0, phase: 0.0, delay: tau, azimuth: 0.5, elevation: 0.4 }];
        let no_delay = [PathParams { power: 1.0, phase: 0.0, delay: 0.0, azimuth: 0.5, elevation: 0.4 }];
        let a = subcarrier_channel(&cfg, &with_delay, n).unwrap();
        let b = subcarrier_channel(&cfg, &no_delay, n).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn matrix_columns_equal_subcarrier_vectors() {
        let cfg = ChannelConfig {
            n_t: 4,
            n_c: 6,
            bandwidth: 5e7,
            n_paths: 2,
            geometry: ArrayGeometry::ula_x(4),
            mode: ResponseMode::Standard,
        };
        let paths = [
            PathParams { power: 1.0, phase: 0.3, delay: 2e-8, azimuth: 0.5, elevation: 0.8 },
            PathParams { power: 0.5, phase: 1.3, delay: 5e-8, azimuth: -0.7, elevation: 1.1 },
        ];
        let m = channel_matrix(&cfg, &paths).unwrap();
        for n in 1..=cfg.n_c {
            let col = subcarrier_channel(&cfg, &paths, n).unwrap();
            for t in 0..cfg.n_t {
                assert_eq!(m.matrix[t * cfg.n_c + (n - 1)], col[t]);
            }
        }
    }

    #[test]
    fn matrix_dimensions_and_plane_layout() {
        let cfg = ChannelConfig {
            n_t: 32,
            n_c: 32,
            bandwidth: 5e7,
            n_paths: 1,
            geometry: ArrayGeometry::ula_x(32),
            mode: ResponseMode::Standard,
        };
        let paths = [PathParams { power: 1.0, phase: 0.2, delay: 1e-8, azimuth: 0.4, elevation: 0.9 }];
        let m = channel_matrix(&cfg, &paths).unwrap();
        assert_eq!(m.matrix.len(), 32 * 32);
        let planes = m.to_planes();
        assert_eq!(planes.len(), 2 * 32 * 32);
        let back = CsiSample::from_planes(32, 32, &planes);
        assert_eq!(back, m);
    }

    #[test]
    fn conjugate_phase_pair_cancels_imaginary_parts() {
        let cfg = ula_config(6, 8);
        let theta = 1.1;
        let paths = [
            PathParams { power: 1.0, phase: theta, delay: 0.0, azimuth: 0.3, elevation: 0.0 },
            PathParams { power: 1.0, phase: -theta, delay: 0.0, azimuth: 0.3, elevation: 0.0 },
        ];
        let m = channel_matrix(&cfg, &paths).unwrap();
        for v in &m.matrix {
            assert!(v.im.abs() < 1e-14, "imag {}", v.im);
        }
    }

    #[test]
    fn amplitude_linearity_in_sqrt_power() {
        let cfg = ula_config(4, 4);
        let base = [PathParams { power: 0.5, phase: 0.7, delay: 3e-8, azimuth: 0.2, elevation: 0.6 }];
        let scaled = [PathParams { power: 2.0, phase: 0.7, delay: 3e-8, azimuth: 0.2, elevation: 0.6 }];
        let a = channel_matrix(&cfg, &base).unwrap();
        let b = channel_matrix(&cfg, &scaled).unwrap();
        for (x, y) in a.matrix.iter().zip(&b.matrix) {
            assert!((y.norm() - 2.0 * x.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn scenario_draws_are_deterministic_and_power_sorted() {
        let spec = ScenarioSpec::sparse();
        let a = sample_scenario(&mut ChaCha8Rng::seed_from_u64(5), &spec).unwrap();
        let b = sample_scenario(&mut ChaCha8Rng::seed_from_u64(5), &spec).unwrap();
        assert_eq!(a.len(), spec.n_paths);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.power, y.power);
            assert_eq!(x.delay, y.delay);
            assert_eq!(x.azimuth, y.azimuth);
        }
        for w in a.windows(2) {
            assert!(w[0].power >= w[1].power, "powers must decay");
        }
        let total: f64 = a.iter().map(|p| p.power).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mean_delay_matches_spread_within_three_sigma() {
        let spec = ScenarioSpec { n_paths: 1, ..ScenarioSpec::sparse() };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 10_000;
        let mean: f64 =
            (0..n).map(|_| sample_scenario(&mut rng, &spec).unwrap()[0].delay).sum::<f64>() / n as f64;
        let sigma = spec.delay_spread / (n as f64).sqrt();
        assert!((mean - spec.delay_spread).abs() < 3.0 * sigma, "mean {mean} vs {}", spec.delay_spread);
    }

    #[test]
    fn empty_scenario_is_an_error() {
        let spec = ScenarioSpec { n_paths: 0, ..ScenarioSpec::dense() };
        assert!(matches!(
            sample_scenario(&mut ChaCha8Rng::seed_from_u64(0), &spec),
            Err(ChannelError::EmptyScenario)
        ));
    }

    #[test]
    fn normalization_divides_by_global_max() {
        let sample = CsiSample {
            n_t: 1,
            n_c: 2,
            matrix: vec![Complex64::new(4.0, -2.0), Complex64::new(1.0, 0.5)],
        };
        let ds = normalize_dataset(&[sample], vec![0], vec![]).unwrap();
        assert_eq!(ds.scale, 4.0);
        assert_eq!(ds.tensors[0], vec![1.0, 0.25, -0.5, 0.125]);
    }

    #[test]
    fn renormalizing_is_identity() {
        let planes = vec![vec![0.5, -1.0, 0.25]];
        let (once, scale1) = normalize_planes(planes).unwrap();
        assert_eq!(scale1, 1.0);
        let (twice, scale2) = normalize_planes(once.clone()).unwrap();
        assert_eq!(scale2, 1.0);
        assert_eq!(once, twice);
    }

    #[test]
    fn denormalize_round_trips() {
        let sample = CsiSample {
            n_t: 2,
            n_c: 2,
            matrix: vec![
                Complex64::new(3.0, -1.0),
                Complex64::new(0.5, 2.5),
                Complex64::new(-4.0, 0.0),
                Complex64::new(1.0, 1.0),
            ],
        };
        let original = sample.to_planes();
        let ds = normalize_dataset(&[sample], vec![0], vec![]).unwrap();
        let back = ds.denormalize(&ds.tensors[0]);
        for (a, b) in back.iter().zip(&original) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(ds.tensors[0].iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn all_zero_dataset_is_an_error() {
        let sample = CsiSample { n_t: 1, n_c: 1, matrix: vec![Complex64::new(0.0, 0.0)] };
        assert!(matches!(normalize_dataset(&[sample], vec![], vec![]), Err(ChannelError::AllZero)));
    }

    #[test]
    fn literal_mode_couples_subcarrier_into_response_phase() {
        let mut cfg = ula_config(4, 8);
        cfg.mode = ResponseMode::Literal;
        let paths = [PathParams { power: 1.0, phase: 0.0, delay: 0.0, azimuth: 0.7, elevation: 0.9 }];
        let h1 = subcarrier_channel(&cfg, &paths, 1).unwrap();
        let h2 = subcarrier_channel(&cfg, &paths, 2).unwrap();
        // with a frequency-flat response these would be identical (τ = 0)
        let differs = h1.iter().zip(&h2).any(|(a, b)| (a - b).norm() > 1e-9);
        assert!(differs);
        let mut std_cfg = ula_config(4, 8);
        std_cfg.mode = ResponseMode::Standard;
        let s1 = subcarrier_channel(&std_cfg, &paths, 1).unwrap();
        let s2 = subcarrier_channel(&std_cfg, &paths, 2).unwrap();
        for (a, b) in s1.iter().zip(&s2) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
