//! Interacting Multiple Model estimator over the three flight modes.
//!
//! One cycle is: mixing probabilities, mixed initial conditions, mode-matched
//! Kalman filtering with Gaussian likelihoods, mode-probability update, and
//! moment-matched fusion of the mode-conditioned estimates.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    mode_matrix, MeasMatrix, MeasVector, ModeId, NoiseModel, ObservationMatrix, StateMatrix,
    StateVector, TransitionMatrix,
};
use crate::error::{Error, Result};
use crate::kalman::{gaussian_likelihood, kf_predict, kf_update, symmetrize, GaussianBelief};

pub const MODE_COUNT: usize = 3;

/// Per-mode beliefs and the mode-probability vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImmBelief {
    pub per_mode: [GaussianBelief; MODE_COUNT],
    pub mu: Vector3<f64>,
}

impl ImmBelief {
    /// Uniform mode probabilities with every filter anchored at the first
    /// position fix, zero velocity and a wide prior covering twice cruise speed.
    pub fn from_first_measurement(z: &MeasVector) -> Self {
        let mean = StateVector::new(z[0], 0.0, z[1], 0.0, 0.0);
        let cov = StateMatrix::from_diagonal(&StateVector::new(
            100.0 * 100.0,
            400.0 * 400.0,
            100.0 * 100.0,
            400.0 * 400.0,
            0.01,
        ));
        let b = GaussianBelief::new(mean, cov);
        Self {
            per_mode: [b; MODE_COUNT],
            mu: Vector3::repeat(1.0 / 3.0),
        }
    }

    pub fn fused(&self) -> GaussianBelief {
        fuse_estimates(&self.per_mode, &self.mu)
    }

    /// Mode with the largest probability; ties resolve to the lowest mode id.
    pub fn most_likely_mode(&self) -> ModeId {
        let mut best = 0;
        for j in 1..MODE_COUNT {
            if self.mu[j] > self.mu[best] {
                best = j;
            }
        }
        ModeId::ALL[best]
    }
}

/// Everything the estimator needs besides the belief and the measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct ImmModel {
    pub pi: TransitionMatrix,
    pub process_cov: StateMatrix,
    pub observation: ObservationMatrix,
    pub meas_cov: MeasMatrix,
    pub dt: f64,
}

impl ImmModel {
    pub fn new(pi: TransitionMatrix, noise: &NoiseModel, dt: f64) -> Self {
        Self {
            pi,
            process_cov: noise.process_cov,
            observation: noise.meas_matrix,
            meas_cov: noise.meas_cov,
            dt,
        }
    }

    /// Transition matrix of every mode around the given base turn rate.
    pub fn mode_matrices(&self, base_rate: f64) -> [StateMatrix; MODE_COUNT] {
        ModeId::ALL.map(|m| mode_matrix(m, base_rate, self.dt))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mixing {
    /// `mu_ij[(i, j)]`: probability that mode i was active given mode j is now.
    pub mu_ij: Matrix3<f64>,
    /// Predicted mode probabilities `c_bar[j] = sum_i pi[i][j] mu[i]`.
    pub c_bar: Vector3<f64>,
    /// Set when some `c_bar[j]` was zero and its column was replaced by 1/3.
    pub degenerate: bool,
}

pub fn mixing_probabilities(pi: &TransitionMatrix, mu_prev: &Vector3<f64>) -> Mixing {
    let c_bar = pi.propagate(mu_prev);
    let mut mu_ij = Matrix3::zeros();
    let mut degenerate = false;
    for j in 0..MODE_COUNT {
        if c_bar[j] > 0.0 {
            for i in 0..MODE_COUNT {
                mu_ij[(i, j)] = pi.get(i, j) * mu_prev[i] / c_bar[j];
            }
        } else {
            degenerate = true;
            mu_ij.column_mut(j).fill(1.0 / 3.0);
        }
    }
    Mixing {
        mu_ij,
        c_bar,
        degenerate,
    }
}

/// Weighted mean and spread-of-means covariance of a set of Gaussians.
fn moment_match(
    beliefs: &[GaussianBelief; MODE_COUNT],
    weights: [f64; MODE_COUNT],
) -> GaussianBelief {
    let mean = beliefs
        .iter()
        .zip(weights)
        .fold(StateVector::zeros(), |acc, (b, w)| acc + b.mean * w);
    let cov = beliefs
        .iter()
        .zip(weights)
        .fold(StateMatrix::zeros(), |acc, (b, w)| {
            let d = b.mean - mean;
            acc + (b.cov + d * d.transpose()) * w
        });
    GaussianBelief::new(mean, symmetrize(&cov))
}

pub fn mix_initial_conditions(
    per_mode: &[GaussianBelief; MODE_COUNT],
    mu_ij: &Matrix3<f64>,
) -> [GaussianBelief; MODE_COUNT] {
    std::array::from_fn(|j| moment_match(per_mode, [mu_ij[(0, j)], mu_ij[(1, j)], mu_ij[(2, j)]]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeUpdate {
    pub mu: Vector3<f64>,
    /// Set when every `likelihood * c_bar` product underflowed and `c_bar` was kept.
    pub underflow: bool,
}

pub fn update_mode_probabilities(likelihoods: &Vector3<f64>, c_bar: &Vector3<f64>) -> ModeUpdate {
    let weighted = likelihoods.component_mul(c_bar);
    let total = weighted.sum();
    if total.is_nan() || total < f64::MIN_POSITIVE || !total.is_finite() {
        return ModeUpdate {
            mu: *c_bar,
            underflow: true,
        };
    }
    ModeUpdate {
        mu: weighted / total,
        underflow: false,
    }
}

pub fn fuse_estimates(
    per_mode: &[GaussianBelief; MODE_COUNT],
    mu: &Vector3<f64>,
) -> GaussianBelief {
    moment_match(per_mode, [mu[0], mu[1], mu[2]])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepFlags {
    pub degenerate_mixing: bool,
    pub likelihood_underflow: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Innovation {
    pub residual: MeasVector,
    pub cov: MeasMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImmStepOutput {
    pub belief: ImmBelief,
    pub fused: GaussianBelief,
    pub likelihoods: Vector3<f64>,
    pub innovations: [Innovation; MODE_COUNT],
    pub flags: StepFlags,
}

/// One full IMM cycle on measurement `z`.
///
/// Mode transition matrices are rebuilt from the turn-rate component of the
/// incoming fused estimate. A failing mode filter is reported with its mode id.
pub fn imm_step(belief: &ImmBelief, z: &MeasVector, model: &ImmModel) -> Result<ImmStepOutput> {
    let base_rate = belief.fused().mean[4];
    imm_step_with_transitions(belief, z, model, &model.mode_matrices(base_rate))
}

/// IMM cycle with explicit per-slot transition matrices.
pub fn imm_step_with_transitions(
    belief: &ImmBelief,
    z: &MeasVector,
    model: &ImmModel,
    transitions: &[StateMatrix; MODE_COUNT],
) -> Result<ImmStepOutput> {
    let mixing = mixing_probabilities(&model.pi, &belief.mu);
    let mixed = mix_initial_conditions(&belief.per_mode, &mixing.mu_ij);

    let mut per_mode = mixed;
    let mut likelihoods = Vector3::zeros();
    let mut innovations = [Innovation {
        residual: MeasVector::zeros(),
        cov: MeasMatrix::zeros(),
    }; MODE_COUNT];

    for j in 0..MODE_COUNT {
        let wrap = |e: Error| Error::ModeFilter {
            mode: j + 1,
            source: Box::new(e),
        };
        let pred = kf_predict(&mixed[j], &transitions[j], &model.process_cov);
        let out = kf_update(&pred, z, &model.observation, &model.meas_cov).map_err(wrap)?;
        likelihoods[j] = gaussian_likelihood(&out.residual, &out.innovation_cov).map_err(wrap)?;
        per_mode[j] = out.posterior;
        innovations[j] = Innovation {
            residual: out.residual,
            cov: out.innovation_cov,
        };
    }

    let update = update_mode_probabilities(&likelihoods, &mixing.c_bar);
    let fused = fuse_estimates(&per_mode, &update.mu);

    Ok(ImmStepOutput {
        belief: ImmBelief {
            per_mode,
            mu: update.mu,
        },
        fused,
        likelihoods,
        innovations,
        flags: StepFlags {
            degenerate_mixing: mixing.degenerate,
            likelihood_underflow: update.underflow,
        },
    })
}
