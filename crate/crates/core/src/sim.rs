//! Closed-loop conflict scenarios and Monte Carlo aggregation.
//!
//! Each episode owns four independent random streams derived from its seed
//! (initial geometry, mode switching, process noise, measurement noise), so
//! runs with avoidance on and off see the same noise realisations.

use std::f64::consts::TAU;

use nalgebra::{Cholesky, DMatrix, SMatrix, SVector, SymmetricEigen, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conflict::{
    advise, apply_avoidance, reorient_track, scan_predictions, Advisory, ConflictPrediction,
};
use crate::dynamics::{
    measure, position_observation, sample_next_mode, step_truth, ContinuousState, MeasMatrix,
    MeasVector, ModeId, NoiseModel, StateMatrix, StateVector, TransitionMatrix,
};
use crate::error::{Error, Result};
use crate::imm::{imm_step, ImmBelief, ImmModel, StepFlags};

/// Mode accuracy is scored from this step on, skipping filter burn-in.
pub const MODE_ACCURACY_FIRST_STEP: usize = 5;

const AIM_ATTEMPTS: usize = 64;

pub const STREAM_INIT: u64 = 0;
pub const STREAM_MODE: u64 = 1;
pub const STREAM_PROCESS: u64 = 2;
pub const STREAM_MEASUREMENT: u64 = 3;

/// Independent generator for one purpose within one episode.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub dt: f64,
    pub steps: usize,
    pub v_cruise: f64,
    pub r_safe: f64,
    pub spawn_radius: f64,
    pub pi: TransitionMatrix,
    /// Row-major 5×5 process noise covariance.
    pub process_cov: [[f64; 5]; 5],
    /// Row-major 2×2 measurement noise covariance.
    pub meas_cov: [[f64; 2]; 2],
    pub cda_enabled: bool,
    pub seed: u64,
    pub lookahead_max: usize,
    /// Hold the previous estimated mode while `max mu` is below this value.
    pub mode_threshold: Option<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let noise = NoiseModel::standard();
        Self {
            dt: 1.0,
            steps: 60,
            v_cruise: 285.841,
            r_safe: 3000.0,
            spawn_radius: 4500.0,
            pi: TransitionMatrix::standard(),
            process_cov: to_rows(&noise.process_cov),
            meas_cov: to_rows(&noise.meas_cov),
            cda_enabled: true,
            seed: 0,
            lookahead_max: 3,
            mode_threshold: None,
        }
    }
}

pub(crate) fn to_rows<const N: usize>(m: &SMatrix<f64, N, N>) -> [[f64; N]; N] {
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

fn from_rows<const N: usize>(rows: &[[f64; N]; N]) -> SMatrix<f64, N, N> {
    SMatrix::from_fn(|r, c| rows[r][c])
}

fn dynamic<const N: usize>(m: &SMatrix<f64, N, N>) -> DMatrix<f64> {
    DMatrix::from_fn(N, N, |r, c| m[(r, c)])
}

fn check_psd<const N: usize>(key: &str, m: &SMatrix<f64, N, N>) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::config(key, "entries must be finite"));
    }
    let scale = m.abs().max().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).abs().max() > 1e-9 * scale {
        return Err(Error::config(key, "matrix is not symmetric"));
    }
    let min_eig = SymmetricEigen::new(dynamic(m)).eigenvalues.min();
    if min_eig < -1e-9 * m.trace().abs().max(f64::MIN_POSITIVE) {
        return Err(Error::config(
            key,
            format!("matrix is not positive semidefinite (min eigenvalue {min_eig})"),
        ));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config("dt", format!("must be > 0, got {}", self.dt)));
        }
        if self.steps == 0 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        if !(self.v_cruise.is_finite() && self.v_cruise > 0.0) {
            return Err(Error::config(
                "v_cruise",
                format!("must be > 0, got {}", self.v_cruise),
            ));
        }
        if !(self.r_safe.is_finite() && self.r_safe > 0.0) {
            return Err(Error::config(
                "r_safe",
                format!("must be > 0, got {}", self.r_safe),
            ));
        }
        if !(self.spawn_radius.is_finite() && self.spawn_radius > self.r_safe) {
            return Err(Error::config(
                "spawn_radius",
                format!(
                    "must exceed r_safe ({}), got {}",
                    self.r_safe, self.spawn_radius
                ),
            ));
        }
        self.pi
            .validate()
            .map_err(|e| Error::config("pi", e.to_string()))?;
        check_psd("process_cov", &self.process_cov())?;
        check_psd("meas_cov", &self.meas_cov())?;
        if self.lookahead_max == 0 {
            return Err(Error::config("lookahead_max", "must be at least 1"));
        }
        if let Some(t) = self.mode_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::config(
                    "mode_threshold",
                    format!("must lie in [0, 1], got {t}"),
                ));
            }
        }
        Ok(())
    }

    pub fn process_cov(&self) -> StateMatrix {
        from_rows(&self.process_cov)
    }

    pub fn meas_cov(&self) -> MeasMatrix {
        from_rows(&self.meas_cov)
    }

    pub fn noise_model(&self) -> NoiseModel {
        NoiseModel::new(self.process_cov(), self.meas_cov())
    }

    pub fn imm_model(&self) -> ImmModel {
        ImmModel::new(self.pi, &self.noise_model(), self.dt)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }
}

/// Draws `L xi` with `L L^T = cov` for a PSD covariance.
#[derive(Debug, Clone)]
pub struct GaussianSampler<const N: usize> {
    factor: SMatrix<f64, N, N>,
}

impl<const N: usize> GaussianSampler<N> {
    pub fn new(cov: &SMatrix<f64, N, N>) -> Self {
        let factor = match Cholesky::new(*cov) {
            Some(ch) => ch.l(),
            None => {
                let eig = SymmetricEigen::new(dynamic(cov));
                let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
                let f = eig.eigenvectors * DMatrix::from_diagonal(&roots);
                SMatrix::from_fn(|r, c| f[(r, c)])
            }
        };
        Self { factor }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> SVector<f64, N> {
        let xi = SVector::<f64, N>::from_fn(|_, _| rng.sample(StandardNormal));
        self.factor * xi
    }
}

/// True when the noise-free straight track is strictly inside `r_safe` at
/// some step `1..=steps`.
pub fn straight_track_breaches(
    position: &Vector2<f64>,
    velocity: &Vector2<f64>,
    dt: f64,
    steps: usize,
    r_safe: f64,
) -> bool {
    (1..=steps).any(|k| (position + velocity * (k as f64 * dt)).norm() < r_safe)
}

/// Spawns the intruder on the spawn circle, heading for a point inside the
/// safety disc at a speed drawn from `[v_cruise, 2 v_cruise]`.
pub fn init_scenario<R: Rng>(config: &ScenarioConfig, rng: &mut R) -> (ContinuousState, ModeId) {
    let phi = rng.random::<f64>() * TAU;
    let position = Vector2::new(phi.cos(), phi.sin()) * config.spawn_radius;
    let speed = config.v_cruise * (1.0 + rng.random::<f64>());

    let heading_to = |aim: Vector2<f64>| (aim - position).normalize() * speed;
    let mut velocity = heading_to(Vector2::zeros());
    for _ in 0..AIM_ATTEMPTS {
        let radius = config.r_safe * rng.random::<f64>().sqrt();
        let angle = rng.random::<f64>() * TAU;
        let candidate = heading_to(Vector2::new(angle.cos(), angle.sin()) * radius);
        if straight_track_breaches(
            &position,
            &candidate,
            config.dt,
            config.steps,
            config.r_safe,
        ) {
            velocity = candidate;
            break;
        }
    }

    (
        ContinuousState::new(position.x, velocity.x, position.y, velocity.y, 0.0),
        ModeId::Straight,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    pub truth: ContinuousState,
    pub true_mode: ModeId,
    pub z: MeasVector,
    pub estimate: StateVector,
    pub mu: Vector3<f64>,
    pub est_mode: ModeId,
    pub predictions: Vec<ConflictPrediction>,
    pub advisory: Option<Advisory>,
    pub separation: f64,
    pub flags: StepFlags,
}

/// Running first and second moments of a 2-D error sequence.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorMoments {
    pub n: usize,
    pub sum: [f64; 2],
    pub sum_sq: [f64; 2],
}

impl ErrorMoments {
    pub fn push(&mut self, e: &Vector2<f64>) {
        self.n += 1;
        for a in 0..2 {
            self.sum[a] += e[a];
            self.sum_sq[a] += e[a] * e[a];
        }
    }

    pub fn merge(&self, other: &Self) -> Self {
        Self {
            n: self.n + other.n,
            sum: [self.sum[0] + other.sum[0], self.sum[1] + other.sum[1]],
            sum_sq: [
                self.sum_sq[0] + other.sum_sq[0],
                self.sum_sq[1] + other.sum_sq[1],
            ],
        }
    }

    pub fn rmse_axis(&self, axis: usize) -> f64 {
        (self.sum_sq[axis] / self.n as f64).sqrt()
    }

    /// Root mean squared Euclidean error over both axes.
    pub fn rmse(&self) -> f64 {
        ((self.sum_sq[0] + self.sum_sq[1]) / self.n as f64).sqrt()
    }

    /// Population standard deviation of the error on one axis.
    pub fn std_axis(&self, axis: usize) -> f64 {
        let n = self.n as f64;
        let mean = self.sum[axis] / n;
        (self.sum_sq[axis] / n - mean * mean).max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub seed: u64,
    pub min_separation: f64,
    pub breach_count: usize,
    pub advisory_count: usize,
    pub interior_breach_count: usize,
    pub estimate_error: ErrorMoments,
    pub measurement_error: ErrorMoments,
    pub mode_hits: usize,
    pub mode_scored: usize,
    pub degenerate_mixing_count: usize,
    pub likelihood_underflow_count: usize,
}

impl EpisodeSummary {
    pub fn breached(&self) -> bool {
        self.breach_count > 0
    }

    pub fn mode_accuracy(&self) -> f64 {
        self.mode_hits as f64 / self.mode_scored as f64
    }

    pub fn rmse_position_est(&self) -> f64 {
        self.estimate_error.rmse()
    }

    pub fn rmse_position_meas(&self) -> f64 {
        self.measurement_error.rmse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub r_safe: f64,
    pub records: Vec<StepRecord>,
    pub summary: EpisodeSummary,
}

fn estimated_mode(mu: &Vector3<f64>, threshold: Option<f64>, previous: ModeId) -> ModeId {
    let mut best = 0;
    for j in 1..3 {
        if mu[j] > mu[best] {
            best = j;
        }
    }
    match threshold {
        Some(t) if mu[best] < t => previous,
        _ => ModeId::ALL[best],
    }
}

/// Runs one closed-loop episode. Identical configs give identical traces.
pub fn run_episode(config: &ScenarioConfig) -> Result<EpisodeTrace> {
    run_episode_with_model(config, &config.imm_model())
}

/// Like [`run_episode`], but the estimator assumes `model` while the truth is
/// driven by the noise in `config`. Used to run noise-free truth through a
/// filter that still expects measurement noise.
pub fn run_episode_with_model(config: &ScenarioConfig, model: &ImmModel) -> Result<EpisodeTrace> {
    config.validate()?;
    let seed = config.seed;
    let mut init_rng = substream(seed, STREAM_INIT);
    let mut mode_rng = substream(seed, STREAM_MODE);
    let mut process_rng = substream(seed, STREAM_PROCESS);
    let mut meas_rng = substream(seed, STREAM_MEASUREMENT);

    let process = GaussianSampler::new(&config.process_cov());
    let meas = GaussianSampler::new(&config.meas_cov());
    let h = position_observation();

    let (mut truth, mut mode) = init_scenario(config, &mut init_rng);
    let z0 = measure(&truth, &meas.sample(&mut meas_rng));
    let mut belief = ImmBelief::from_first_measurement(&z0);

    let mut records = Vec::with_capacity(config.steps);
    let mut hold_mode = false;
    let mut est_mode = ModeId::Straight;
    let mut summary = EpisodeSummary {
        seed,
        min_separation: f64::INFINITY,
        breach_count: 0,
        advisory_count: 0,
        interior_breach_count: 0,
        estimate_error: ErrorMoments::default(),
        measurement_error: ErrorMoments::default(),
        mode_hits: 0,
        mode_scored: 0,
        degenerate_mixing_count: 0,
        likelihood_underflow_count: 0,
    };

    for k in 1..=config.steps {
        // The draw is consumed even while held so the stream stays aligned.
        let u = mode_rng.random::<f64>();
        if !hold_mode {
            mode = sample_next_mode(mode, &config.pi, u)?;
        }

        // Truth turn rate stays at zero; only the kinematic channels are perturbed.
        let mut w = process.sample(&mut process_rng);
        w[4] = 0.0;
        truth = step_truth(&truth, mode, config.dt, &w);
        let z = measure(&truth, &meas.sample(&mut meas_rng));

        let out = imm_step(&belief, &z, model).map_err(|e| Error::Estimator {
            step: k,
            source: Box::new(e),
        })?;
        belief = out.belief;
        let estimate = out.fused.mean;
        est_mode = estimated_mode(&out.belief.mu, config.mode_threshold, est_mode);

        let est_position = Vector2::new(estimate[0], estimate[2]);
        let est_velocity = Vector2::new(estimate[1], estimate[3]);
        let (predictions, advisory) = if config.cda_enabled {
            let predictions = scan_predictions(
                &est_position,
                &est_velocity,
                config.dt,
                config.r_safe,
                config.lookahead_max,
            );
            let advisory = predictions
                .iter()
                .find(|p| p.is_unsafe)
                .map(|p| advise(&est_position, p, config.r_safe));
            (predictions, advisory)
        } else {
            (Vec::new(), None)
        };

        let record_truth = truth;
        if let Some(adv) = &advisory {
            truth = reorient_track(&truth, adv.theta);
            belief = apply_avoidance(&belief, adv);
            summary.advisory_count += 1;
            summary.interior_breach_count += usize::from(adv.interior_breach);
        }
        hold_mode = advisory.is_some();

        let separation = record_truth.range();
        summary.min_separation = summary.min_separation.min(separation);
        summary.breach_count += usize::from(separation < config.r_safe);
        let truth_pos = record_truth.position();
        summary.estimate_error.push(&(h * estimate - truth_pos));
        summary.measurement_error.push(&(z - truth_pos));
        if k >= MODE_ACCURACY_FIRST_STEP {
            summary.mode_scored += 1;
            summary.mode_hits += usize::from(est_mode == mode);
        }
        summary.degenerate_mixing_count += usize::from(out.flags.degenerate_mixing);
        summary.likelihood_underflow_count += usize::from(out.flags.likelihood_underflow);

        records.push(StepRecord {
            k,
            t: k as f64 * config.dt,
            truth: record_truth,
            true_mode: mode,
            z,
            estimate,
            mu: out.belief.mu,
            est_mode,
            predictions,
            advisory,
            separation,
            flags: out.flags,
        });
    }

    Ok(EpisodeTrace {
        seed,
        r_safe: config.r_safe,
        records,
        summary,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub median: f64,
    pub stddev: f64,
}

impl Spread {
    /// Sample statistics; the standard deviation is zero for a single value.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        let stddev = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            median,
            stddev,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisPair {
    pub x1: f64,
    pub x2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub n_episodes: usize,
    pub min_separation: Spread,
    pub breach_fraction: f64,
    /// Euclidean position RMSE of the fused estimate, pooled over all steps.
    pub rmse_position_est: f64,
    /// Euclidean position RMSE of the raw measurements.
    pub rmse_position_meas: f64,
    pub rmse_est_axis: AxisPair,
    pub rmse_meas_axis: AxisPair,
    pub error_std_est_axis: AxisPair,
    pub error_std_meas_axis: AxisPair,
    pub mode_accuracy: f64,
    pub advisory_count: usize,
}

impl MonteCarloSummary {
    pub fn from_episodes(episodes: &[EpisodeSummary]) -> Self {
        let n = episodes.len();
        let mins: Vec<f64> = episodes.iter().map(|e| e.min_separation).collect();
        let est = episodes.iter().fold(ErrorMoments::default(), |acc, e| {
            acc.merge(&e.estimate_error)
        });
        let meas = episodes.iter().fold(ErrorMoments::default(), |acc, e| {
            acc.merge(&e.measurement_error)
        });
        let hits: usize = episodes.iter().map(|e| e.mode_hits).sum();
        let scored: usize = episodes.iter().map(|e| e.mode_scored).sum();
        let axes = |f: &dyn Fn(usize) -> f64| AxisPair { x1: f(0), x2: f(1) };
        Self {
            n_episodes: n,
            min_separation: Spread::of(&mins),
            breach_fraction: episodes.iter().filter(|e| e.breached()).count() as f64 / n as f64,
            rmse_position_est: est.rmse(),
            rmse_position_meas: meas.rmse(),
            rmse_est_axis: axes(&|a| est.rmse_axis(a)),
            rmse_meas_axis: axes(&|a| meas.rmse_axis(a)),
            error_std_est_axis: axes(&|a| est.std_axis(a)),
            error_std_meas_axis: axes(&|a| meas.std_axis(a)),
            mode_accuracy: hits as f64 / scored as f64,
            advisory_count: episodes.iter().map(|e| e.advisory_count).sum(),
        }
    }
}

/// Seeds used by a batch: `seed, seed + 1, ..., seed + n - 1` (wrapping).
pub fn episode_seeds(seed: u64, n_episodes: usize) -> Vec<u64> {
    (0..n_episodes as u64)
        .map(|i| seed.wrapping_add(i))
        .collect()
}

/// Runs a batch of episodes in parallel; results are kept in seed order.
pub fn run_monte_carlo_traces(
    config: &ScenarioConfig,
    n_episodes: usize,
) -> Result<Vec<EpisodeTrace>> {
    if n_episodes == 0 {
        return Err(Error::config("episodes", "must be at least 1"));
    }
    config.validate()?;
    episode_seeds(config.seed, n_episodes)
        .into_par_iter()
        .map(|s| run_episode(&config.with_seed(s)))
        .collect()
}

pub fn run_monte_carlo(config: &ScenarioConfig, n_episodes: usize) -> Result<MonteCarloSummary> {
    let traces = run_monte_carlo_traces(config, n_episodes)?;
    let summaries: Vec<EpisodeSummary> = traces.into_iter().map(|t| t.summary).collect();
    Ok(MonteCarloSummary::from_episodes(&summaries))
}
