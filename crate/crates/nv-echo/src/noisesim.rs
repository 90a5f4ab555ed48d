//! Monte-Carlo spin-echo dephasing under Ornstein-Uhlenbeck noise.
//!
//! This is the independent numerical check of the closed-form decay curve:
//! OU paths are generated with the exact AR(1) discretization (the discrete
//! autocorrelation at lag k is exactly e^{−k·dt/τ_c}), the echo phase is
//! accumulated against the ±1 modulation function, and the coherence is
//! estimated as the mean of cos(φ) over paths.
//!
//! Reproducibility contract: the estimate is a deterministic function of
//! [`SimConfig`] alone. Path i always draws from ChaCha stream i of the
//! seed, and the reduction is over fixed-size chunks folded in index order,
//! so the result is bit-identical at any parallelism degree.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::models::NoiseModelParams;

/// Minimum number of time steps per path; caps the phase-quadrature step
/// at τ/200 so its O(dt²) bias stays below the Monte-Carlo noise at
/// 10⁵ paths.
pub const MIN_STEPS: usize = 200;

/// Paths per reduction chunk. Fixed so that partial sums are independent
/// of the number of worker threads.
const CHUNK: usize = 1024;

/// Configuration of one Monte-Carlo coherence estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub params: NoiseModelParams,
    /// Total free-evolution time τ in µs.
    pub tau: f64,
    /// Requested time step in µs; must satisfy dt ≤ τ_c/20.
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    n_steps: usize,
    dt_effective: f64,
}

impl SimConfig {
    /// Validates the step-size cap dt ≤ τ_c/20 and derives the actual
    /// discretization: the step count is rounded up to an even number of
    /// at least [`MIN_STEPS`] so that τ is an exact multiple of the
    /// effective step and the modulation flip falls on a bin boundary.
    pub fn new(params: NoiseModelParams, tau: f64, dt: f64, n_paths: usize, seed: u64) -> Result<Self> {
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(Error::domain(format!("tau must be finite and >= 0, got {tau}")));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::domain(format!("dt must be finite and > 0, got {dt}")));
        }
        let cap = params.tau_c / 20.0;
        if dt > cap * (1.0 + 1e-9) {
            return Err(Error::domain(format!(
                "dt = {dt} exceeds the tau_c/20 cap ({cap}); choose a finer step"
            )));
        }
        if n_paths == 0 {
            return Err(Error::domain("n_paths must be >= 1".to_string()));
        }
        let (n_steps, dt_effective) = if tau == 0.0 {
            (0, dt)
        } else {
            let mut n = (tau / dt).ceil() as usize;
            n = n.max(MIN_STEPS);
            if n % 2 == 1 {
                n += 1;
            }
            (n, tau / n as f64)
        };
        Ok(Self { params, tau, dt, n_paths, seed, n_steps, dt_effective })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// The step actually used: τ / n_steps.
    pub fn dt_effective(&self) -> f64 {
        self.dt_effective
    }
}

/// Monte-Carlo coherence estimate with diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    /// Mean of cos(φ) over paths.
    pub mean: f64,
    /// Standard error of the mean.
    pub std_error: f64,
    pub n_paths: usize,
    /// Mean of sin(φ); zero up to noise by the symmetry of the phase
    /// distribution.
    pub mean_sin: f64,
    /// Sample kurtosis of the accumulated phase (≈ 3 for Gaussian φ).
    /// `None` when the phase variance is zero.
    pub phase_kurtosis: Option<f64>,
}

/// RNG for one path: ChaCha stream `index` of the run seed, so path
/// streams are independent of evaluation order.
fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn fill_ou_path(buf: &mut [f64], a: f64, rng: &mut ChaCha8Rng) {
    if buf.is_empty() {
        return;
    }
    let s = (1.0 - a * a).sqrt();
    let mut f: f64 = rng.sample(StandardNormal);
    buf[0] = f;
    for slot in &mut buf[1..] {
        let xi: f64 = rng.sample(StandardNormal);
        f = a * f + s * xi;
        *slot = f;
    }
}

/// One stationary OU path: zero-mean, unit-variance Gaussian samples with
/// exact lag-k autocorrelation a^k, a = e^{−dt/τ_c}. The update is
/// f_{j+1} = a·f_j + √(1−a²)·ξ_j with f_0 drawn from the stationary
/// standard normal.
pub fn ou_path(tau_c: f64, dt: f64, n_steps: usize, seed: u64) -> Result<Vec<f64>> {
    if !(tau_c.is_finite() && tau_c > 0.0) {
        return Err(Error::domain(format!("tau_c must be > 0, got {tau_c}")));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::domain(format!("dt must be > 0, got {dt}")));
    }
    let a = (-dt / tau_c).exp();
    let mut buf = vec![0.0; n_steps];
    let mut rng = path_rng(seed, 0);
    fill_ou_path(&mut buf, a, &mut rng);
    Ok(buf)
}

/// Echo modulation function: +1 for t ≤ τ/2, −1 for t > τ/2.
pub fn modulation(t: f64, tau: f64) -> Result<f64> {
    if !(t.is_finite() && tau.is_finite() && (0.0..=tau).contains(&t)) {
        return Err(Error::domain(format!("t = {t} outside [0, tau = {tau}]")));
    }
    Ok(if t <= tau / 2.0 { 1.0 } else { -1.0 })
}

/// φ = 2λ Σ_j f_j g(t_j) dt with midpoint-in-bin times t_j = (j+½)dt.
///
/// The factor 2 comes from the ±1 eigenvalues of σ_z acting on the relative
/// phase of the two levels. Since the step count is even, the first half of
/// the bins carries g = +1 and the second half g = −1 exactly.
pub fn echo_phase(path: &[f64], config: &SimConfig) -> Result<f64> {
    if path.len() != config.n_steps {
        return Err(Error::domain(format!(
            "path length {} does not match configured step count {}",
            path.len(),
            config.n_steps
        )));
    }
    Ok(phase_from_path(path, config.params.lambda, config.dt_effective))
}

fn phase_from_path(path: &[f64], lambda: f64, dt: f64) -> f64 {
    let half = path.len() / 2;
    let mut acc = 0.0;
    for &f in &path[..half] {
        acc += f;
    }
    for &f in &path[half..] {
        acc -= f;
    }
    2.0 * lambda * acc * dt
}

/// Per-chunk accumulator; folded across chunks in index order.
#[derive(Clone, Copy, Default)]
struct Sums {
    cos: f64,
    cos2: f64,
    sin: f64,
    phi2: f64,
    phi4: f64,
}

impl Sums {
    fn add(&mut self, phi: f64) {
        let c = phi.cos();
        self.cos += c;
        self.cos2 += c * c;
        self.sin += phi.sin();
        let p2 = phi * phi;
        self.phi2 += p2;
        self.phi4 += p2 * p2;
    }

    fn merge(mut self, other: Sums) -> Sums {
        self.cos += other.cos;
        self.cos2 += other.cos2;
        self.sin += other.sin;
        self.phi2 += other.phi2;
        self.phi4 += other.phi4;
        self
    }
}

/// Monte-Carlo estimate of the Hahn-echo coherence at τ.
pub fn echo_coherence_mc(config: &SimConfig) -> McEstimate {
    let n = config.n_paths;
    let a = (-config.dt_effective / config.params.tau_c).exp();
    let n_chunks = n.div_ceil(CHUNK);

    let chunk_sums: Vec<Sums> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * CHUNK;
            let hi = ((chunk + 1) * CHUNK).min(n);
            let mut buf = vec![0.0; config.n_steps];
            let mut sums = Sums::default();
            for i in lo..hi {
                let mut rng = path_rng(config.seed, i as u64);
                fill_ou_path(&mut buf, a, &mut rng);
                let phi = phase_from_path(&buf, config.params.lambda, config.dt_effective);
                sums.add(phi);
            }
            sums
        })
        .collect();

    let sums = chunk_sums.into_iter().fold(Sums::default(), Sums::merge);

    let nf = n as f64;
    let mean = sums.cos / nf;
    let var = if n > 1 { ((sums.cos2 - nf * mean * mean) / (nf - 1.0)).max(0.0) } else { 0.0 };
    let std_error = (var / nf).sqrt();
    let m2 = sums.phi2 / nf;
    let m4 = sums.phi4 / nf;
    let phase_kurtosis = if m2 > 0.0 { Some(m4 / (m2 * m2)) } else { None };

    McEstimate { mean, std_error, n_paths: n, mean_sin: sums.sin / nf, phase_kurtosis }
}
