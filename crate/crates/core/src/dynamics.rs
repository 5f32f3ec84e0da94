//! Hybrid plant of the tracked aircraft.
//!
//! The continuous state is the intruder's position and velocity relative to
//! the reference aircraft plus a turn-rate slot. Three discrete modes select
//! the transition matrix (straight flight, left coordinated turn, right
//! coordinated turn) and a row-stochastic Markov chain governs switching.

use std::f64::consts::FRAC_PI_4;
use std::fmt;

use nalgebra::{Matrix2, Matrix5, Matrix5x3, SMatrix, Vector2, Vector3, Vector5};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type StateVector = Vector5<f64>;
pub type StateMatrix = Matrix5<f64>;
pub type MeasVector = Vector2<f64>;
pub type MeasMatrix = Matrix2<f64>;
pub type ObservationMatrix = SMatrix<f64, 2, 5>;

/// Tolerance on each row sum of a transition matrix.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

/// Turn-rate offset of the turning modes, rad/s.
pub const TURN_RATE_OFFSET: f64 = FRAC_PI_4;

// Below this |omega * dt| the coordinated-turn entries use their Taylor limits.
const SERIES_THRESHOLD: f64 = 1e-8;

/// Relative state `[x1, vx1, x2, vx2, omega]` of the intruder.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ContinuousState {
    /// East position, m.
    pub x1: f64,
    /// East velocity, m/s.
    pub vx1: f64,
    /// North position, m.
    pub x2: f64,
    /// North velocity, m/s.
    pub vx2: f64,
    /// Turn rate, rad/s.
    pub omega: f64,
}

impl ContinuousState {
    pub fn new(x1: f64, vx1: f64, x2: f64, vx2: f64, omega: f64) -> Self {
        Self {
            x1,
            vx1,
            x2,
            vx2,
            omega,
        }
    }

    pub fn from_vector(v: &StateVector) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4])
    }

    pub fn to_vector(&self) -> StateVector {
        StateVector::new(self.x1, self.vx1, self.x2, self.vx2, self.omega)
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x1, self.x2)
    }

    pub fn velocity(&self) -> Vector2<f64> {
        Vector2::new(self.vx1, self.vx2)
    }

    pub fn speed(&self) -> f64 {
        self.velocity().norm()
    }

    /// Distance from the reference aircraft at the origin.
    pub fn range(&self) -> f64 {
        self.position().norm()
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// Discrete flight mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum ModeId {
    Straight = 1,
    LeftTurn = 2,
    RightTurn = 3,
}

impl ModeId {
    pub const ALL: [ModeId; 3] = [ModeId::Straight, ModeId::LeftTurn, ModeId::RightTurn];

    /// Zero-based position in per-mode arrays.
    pub fn index(self) -> usize {
        self as usize - 1
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// Signed turn-rate offset added to the base rate for this mode.
    pub fn rate_offset(self) -> f64 {
        match self {
            ModeId::Straight => 0.0,
            ModeId::LeftTurn => TURN_RATE_OFFSET,
            ModeId::RightTurn => -TURN_RATE_OFFSET,
        }
    }
}

impl From<ModeId> for u8 {
    fn from(m: ModeId) -> u8 {
        m as u8
    }
}

impl TryFrom<u8> for ModeId {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(ModeId::Straight),
            2 => Ok(ModeId::LeftTurn),
            3 => Ok(ModeId::RightTurn),
            other => Err(format!("mode id must be 1, 2 or 3, got {other}")),
        }
    }
}

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", *self as u8)
    }
}

/// Row-stochastic mode transition matrix: `pi[i][j] = Pr(next = j | current = i)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[[f64; 3]; 3]", into = "[[f64; 3]; 3]")]
pub struct TransitionMatrix([[f64; 3]; 3]);

impl TransitionMatrix {
    pub fn new(rows: [[f64; 3]; 3]) -> Result<Self> {
        let m = TransitionMatrix(rows);
        m.validate()?;
        Ok(m)
    }

    /// Default three-mode chain: straight flight favours staying
    /// straight, turns favour returning to straight over reversing.
    pub fn standard() -> Self {
        TransitionMatrix([[0.8, 0.1, 0.1], [0.19, 0.8, 0.01], [0.19, 0.01, 0.8]])
    }

    pub fn identity() -> Self {
        TransitionMatrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.0.iter().enumerate() {
            for (j, &p) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidTransitionEntry {
                        row: i,
                        col: j,
                        value: p,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::InvalidTransitionRow { row: i, sum });
            }
        }
        Ok(())
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.0[from][to]
    }

    pub fn row(&self, from: ModeId) -> [f64; 3] {
        self.0[from.index()]
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        self.0
    }

    /// One step of the mode-probability chain, `m' = Pi^T m`.
    pub fn propagate(&self, m: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|j, _| (0..3).map(|i| self.0[i][j] * m[i]).sum())
    }
}

impl TryFrom<[[f64; 3]; 3]> for TransitionMatrix {
    type Error = Error;

    fn try_from(rows: [[f64; 3]; 3]) -> Result<Self> {
        TransitionMatrix::new(rows)
    }
}

impl From<TransitionMatrix> for [[f64; 3]; 3] {
    fn from(m: TransitionMatrix) -> Self {
        m.0
    }
}

/// Process and measurement noise plus the position-selecting observation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub process_cov: StateMatrix,
    pub meas_cov: MeasMatrix,
    pub meas_matrix: ObservationMatrix,
}

impl NoiseModel {
    pub fn new(process_cov: StateMatrix, meas_cov: MeasMatrix) -> Self {
        Self {
            process_cov,
            meas_cov,
            meas_matrix: position_observation(),
        }
    }

    pub fn standard() -> Self {
        Self::new(default_process_cov(), default_meas_cov())
    }
}

/// `diag(200, 0.1, 200, 0.1, 0.001)`.
pub fn default_process_cov() -> StateMatrix {
    StateMatrix::from_diagonal(&StateVector::new(200.0, 0.1, 200.0, 0.1, 0.001))
}

/// 50 m standard deviation on each position axis.
pub fn default_meas_cov() -> MeasMatrix {
    MeasMatrix::from_diagonal(&Vector2::new(50.0 * 50.0, 50.0 * 50.0))
}

/// Selects `(x1, x2)` from the state.
pub fn position_observation() -> ObservationMatrix {
    let mut h = ObservationMatrix::zeros();
    h[(0, 0)] = 1.0;
    h[(1, 2)] = 1.0;
    h
}

/// Constant-turn-rate transition over `dt`.
///
/// The velocity block is the planar rotation by `omega * dt` (counterclockwise
/// for positive omega) and the position rows integrate that rotation exactly.
/// At `omega = 0` this is the constant-velocity double integrator.
pub fn coordinated_turn_matrix(omega: f64, dt: f64) -> StateMatrix {
    let angle = omega * dt;
    let (s, c) = angle.sin_cos();
    // sin(w dt)/w and (1 - cos(w dt))/w; the half-angle form avoids cancellation.
    let (sin_term, cos_term) = if angle.abs() < SERIES_THRESHOLD {
        (dt * (1.0 - angle * angle / 6.0), 0.5 * angle * dt)
    } else {
        let half = (0.5 * angle).sin();
        (s / omega, 2.0 * half * half / omega)
    };

    #[rustfmt::skip]
    let m = StateMatrix::new(
        1.0, sin_term,  0.0, -cos_term, 0.0,
        0.0, c,         0.0, -s,        0.0,
        0.0, cos_term,  1.0, sin_term,  0.0,
        0.0, s,         0.0, c,         0.0,
        0.0, 0.0,       0.0, 0.0,       1.0,
    );
    m
}

/// Transition matrix of `mode`, with the turn modes offset by ±π/4 rad/s from `base_rate`.
pub fn mode_matrix(mode: ModeId, base_rate: f64, dt: f64) -> StateMatrix {
    match mode {
        ModeId::Straight => coordinated_turn_matrix(0.0, dt),
        turn => coordinated_turn_matrix(base_rate + turn.rate_offset(), dt),
    }
}

/// Acceleration-to-state input map shared by all modes.
pub fn noise_input_matrix(dt: f64) -> Matrix5x3<f64> {
    let half_sq = 0.5 * dt * dt;
    #[rustfmt::skip]
    let b = Matrix5x3::new(
        half_sq, 0.0,     0.0,
        dt,      0.0,     0.0,
        0.0,     half_sq, 0.0,
        0.0,     dt,      0.0,
        0.0,     0.0,     0.0,
    );
    b
}

/// Advances the true state one step under `mode`; noise is given in state space.
pub fn step_truth(
    state: &ContinuousState,
    mode: ModeId,
    dt: f64,
    process_noise: &StateVector,
) -> ContinuousState {
    let a = mode_matrix(mode, state.omega, dt);
    ContinuousState::from_vector(&(a * state.to_vector() + process_noise))
}

/// Inverse-CDF draw of the next mode from row `mode` of `pi` using `u ∈ [0, 1)`.
pub fn sample_next_mode(mode: ModeId, pi: &TransitionMatrix, u: f64) -> Result<ModeId> {
    let row = pi.row(mode);
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidTransitionRow {
            row: mode.index(),
            sum,
        });
    }
    let mut cumulative = 0.0;
    let mut last_reachable = mode;
    for (j, &p) in row.iter().enumerate() {
        if p > 0.0 {
            last_reachable = ModeId::ALL[j];
        }
        cumulative += p;
        if u < cumulative {
            return Ok(ModeId::ALL[j]);
        }
    }
    // Rounding left a sliver above the final cumulative sum.
    Ok(last_reachable)
}

/// Noisy position measurement `(x1 + n1, x2 + n2)`.
pub fn measure(state: &ContinuousState, meas_noise: &MeasVector) -> MeasVector {
    state.position() + meas_noise
}
