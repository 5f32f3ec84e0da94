//! Conflict detection by short-horizon extrapolation and the tangent escape
//! maneuver.
//!
//! Angles follow one convention throughout: `gamma` is the signed angle from
//! the intruder's track direction (B to C) to the line of sight to the
//! reference (B to O), counterclockwise positive, and a maneuver of `theta`
//! turns the intruder's relative track by `-theta`. With that convention the
//! near-side tangent is reached by `theta = ±beta - gamma`.

use std::f64::consts::FRAC_PI_4;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::dynamics::{ContinuousState, StateMatrix};
use crate::imm::ImmBelief;
use crate::kalman::{symmetrize, GaussianBelief};

/// Largest turn commanded in one step.
pub const MAX_ESCAPE_ANGLE: f64 = FRAC_PI_4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConflictPrediction {
    pub horizon_j: usize,
    pub predicted_point: Vector2<f64>,
    pub predicted_range: f64,
    pub is_unsafe: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Advisory {
    /// Commanded angle, clamped to `[-π/4, π/4]`.
    pub theta: f64,
    pub theta_unclamped: f64,
    pub trigger_j: usize,
    pub beta: f64,
    pub gamma: f64,
    /// The intruder was already inside the safety radius; no tangent exists.
    pub interior_breach: bool,
}

fn cross(a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

fn rotation(angle: f64) -> Matrix2<f64> {
    let (s, c) = angle.sin_cos();
    Matrix2::new(c, -s, s, c)
}

pub fn predict_range(
    position: &Vector2<f64>,
    step_delta: &Vector2<f64>,
    j: usize,
    r_safe: f64,
) -> ConflictPrediction {
    let predicted_point = position + step_delta * j as f64;
    let predicted_range = predicted_point.norm();
    ConflictPrediction {
        horizon_j: j,
        predicted_point,
        predicted_range,
        is_unsafe: predicted_range < r_safe,
    }
}

/// Predictions for `j = 1..=lookahead`, stopping at the first unsafe one.
pub fn scan_predictions(
    est_position: &Vector2<f64>,
    est_velocity: &Vector2<f64>,
    dt: f64,
    r_safe: f64,
    lookahead: usize,
) -> Vec<ConflictPrediction> {
    let delta = est_velocity * dt;
    let mut out = Vec::with_capacity(lookahead);
    for j in 1..=lookahead {
        let p = predict_range(est_position, &delta, j, r_safe);
        out.push(p);
        if p.is_unsafe {
            break;
        }
    }
    out
}

/// First unsafe prediction over the three-step horizon, if any.
pub fn detect_conflict(
    est_position: &Vector2<f64>,
    est_velocity: &Vector2<f64>,
    dt: f64,
    r_safe: f64,
) -> Option<ConflictPrediction> {
    scan_predictions(est_position, est_velocity, dt, r_safe, 3)
        .into_iter()
        .find(|p| p.is_unsafe)
}

/// Escape angle that makes the ray from `b` through `c` tangent to the
/// safety circle, on the side needing the smaller turn.
///
/// Inside the circle there is no tangent: the maximal turn is commanded in
/// the direction that swings the track towards the outward radial.
pub fn escape_angle(b: &Vector2<f64>, c: &Vector2<f64>, r_safe: f64) -> Advisory {
    let bo = b.norm();
    let track = c - b;
    let to_origin = -b;
    let gamma = cross(&track, &to_origin).atan2(track.dot(&to_origin));

    if bo < r_safe {
        let turn = cross(b, &track);
        let theta = if turn > 0.0 {
            MAX_ESCAPE_ANGLE
        } else if turn < 0.0 {
            -MAX_ESCAPE_ANGLE
        } else if track.dot(b) > 0.0 {
            0.0
        } else {
            MAX_ESCAPE_ANGLE
        };
        return Advisory {
            theta,
            theta_unclamped: theta,
            trigger_j: 0,
            beta: std::f64::consts::FRAC_PI_2,
            gamma,
            interior_breach: true,
        };
    }

    let beta = (r_safe / bo).asin();
    let target = if gamma >= 0.0 { beta } else { -beta };
    let theta_unclamped = target - gamma;
    Advisory {
        theta: theta_unclamped.clamp(-MAX_ESCAPE_ANGLE, MAX_ESCAPE_ANGLE),
        theta_unclamped,
        trigger_j: 0,
        beta,
        gamma,
        interior_breach: false,
    }
}

/// Advisory for an unsafe prediction made from estimated position `b`.
pub fn advise(b: &Vector2<f64>, prediction: &ConflictPrediction, r_safe: f64) -> Advisory {
    Advisory {
        trigger_j: prediction.horizon_j,
        ..escape_angle(b, &prediction.predicted_point, r_safe)
    }
}

/// Expresses the state in a reference frame turned by `theta`: position and
/// velocity are both rotated by `-theta` about the origin.
pub fn rotate_frame(state: &ContinuousState, theta: f64) -> ContinuousState {
    ContinuousState::from_vector(&(frame_rotation(theta) * state.to_vector()))
}

/// Block rotation by `-theta` acting on both position and velocity pairs.
pub fn frame_rotation(theta: f64) -> StateMatrix {
    block_transform(Some(rotation(-theta)), rotation(-theta))
}

/// Turns the relative track by `-theta` about the intruder's current
/// position. Range to the origin is unchanged at the instant of the maneuver.
pub fn reorient_track(state: &ContinuousState, theta: f64) -> ContinuousState {
    ContinuousState::from_vector(&(track_rotation(theta) * state.to_vector()))
}

/// Identity on position, rotation by `-theta` on velocity.
pub fn track_rotation(theta: f64) -> StateMatrix {
    block_transform(None, rotation(-theta))
}

fn block_transform(position: Option<Matrix2<f64>>, velocity: Matrix2<f64>) -> StateMatrix {
    let p = position.unwrap_or_else(Matrix2::identity);
    let mut t = StateMatrix::identity();
    for (r, sr) in [(0usize, 0usize), (2, 1)] {
        for (c, sc) in [(0usize, 0usize), (2, 1)] {
            t[(r, c)] = p[(sr, sc)];
            t[(r + 1, c + 1)] = velocity[(sr, sc)];
        }
    }
    t
}

/// Applies the maneuver to every mode-conditioned estimate; `mu` is untouched.
pub fn apply_avoidance(belief: &ImmBelief, advisory: &Advisory) -> ImmBelief {
    let t = track_rotation(advisory.theta);
    ImmBelief {
        per_mode: belief
            .per_mode
            .map(|b| GaussianBelief::new(t * b.mean, symmetrize(&(t * b.cov * t.transpose())))),
        mu: belief.mu,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::StateVector;
    use nalgebra::{SymmetricEigen, Vector3};
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_6};

    fn v(x: f64, y: f64) -> Vector2<f64> {
        Vector2::new(x, y)
    }

    #[test]
    fn range_predictions() {
        let p = predict_range(&v(3000.0, 4000.0), &v(100.0, 0.0), 1, 3000.0);
        assert!((p.predicted_range - (3100.0f64.powi(2) + 4000.0f64.powi(2)).sqrt()).abs() < 1e-9);
        assert!((p.predicted_range - 5060.63).abs() < 0.01);
        assert!(!p.is_unsafe);

        let p = predict_range(&v(4000.0, 0.0), &v(-1000.0, 0.0), 3, 3000.0);
        assert_eq!(p.predicted_point, v(1000.0, 0.0));
        assert!(p.is_unsafe);

        for j in 1..=3 {
            let p = predict_range(&v(-700.0, 2400.0), &v(0.0, 0.0), j, 3000.0);
            assert_eq!(p.predicted_point, v(-700.0, 2400.0));
            assert_eq!(p.predicted_range, 2500.0);
        }
    }

    #[test]
    fn detection_uses_first_is_unsafehorizon() {
        // j=1: 3500, j=2: 3000 (not strictly inside), j=3: 2500
        let hit = detect_conflict(&v(4000.0, 0.0), &v(-500.0, 0.0), 1.0, 3000.0).unwrap();
        assert_eq!(hit.horizon_j, 3);
        assert_eq!(hit.predicted_range, 2500.0);

        assert!(detect_conflict(&v(10000.0, 10000.0), &v(0.0, 0.0), 1.0, 3000.0).is_none());

        let fast = detect_conflict(&v(4000.0, 0.0), &v(-2000.0, 0.0), 1.0, 3000.0).unwrap();
        assert_eq!(fast.horizon_j, 1);

        // current point inside but moving out: predictions, not the current point, decide
        assert!(detect_conflict(&v(2000.0, 0.0), &v(1200.0, 0.0), 1.0, 3000.0).is_none());
        assert_eq!(
            detect_conflict(&v(2000.0, 0.0), &v(100.0, 0.0), 1.0, 3000.0)
                .unwrap()
                .horizon_j,
            1
        );
    }

    #[test]
    fn scan_stops_at_trigger() {
        let scan = scan_predictions(&v(4000.0, 0.0), &v(-600.0, 0.0), 1.0, 3000.0, 3);
        assert_eq!(scan.len(), 2);
        assert!(scan[1].is_unsafe);
        let scan = scan_predictions(&v(9000.0, 0.0), &v(-10.0, 0.0), 1.0, 3000.0, 3);
        assert_eq!(scan.len(), 3);
    }

    #[test]
    fn head_on_escape_clamps() {
        let a = escape_angle(&v(4000.0, 0.0), &v(3000.0, 0.0), 3000.0);
        assert!((a.beta - 0.75f64.asin()).abs() < 1e-15);
        assert!((a.beta - 0.848_06).abs() < 1e-5);
        assert_eq!(a.gamma, 0.0);
        assert!((a.theta_unclamped - 0.848_06).abs() < 1e-5);
        assert_eq!(a.theta, FRAC_PI_4);
        assert!(!a.interior_breach);
    }

    #[test]
    fn already_tangent_needs_no_turn() {
        let b = v(5000.0, 0.0);
        let beta = (3000.0f64 / 5000.0).asin();
        // Track leaving b at angle beta from the line of sight, clockwise side.
        let dir = rotation(-beta) * (-b / 5000.0);
        let a = escape_angle(&b, &(b + dir * 800.0), 3000.0);
        assert!(a.theta.abs() < 1e-12, "theta = {}", a.theta);
        assert!((a.gamma - a.beta).abs() < 1e-12);
    }

    #[test]
    fn perpendicular_track() {
        let a = escape_angle(&v(6000.0, 0.0), &v(6000.0, 1000.0), 3000.0);
        assert!((a.gamma - FRAC_PI_2).abs() < 1e-15);
        assert!((a.beta - FRAC_PI_6).abs() < 1e-15);
        assert!((a.theta_unclamped - (FRAC_PI_6 - FRAC_PI_2)).abs() < 1e-15);
        assert_eq!(a.theta, -FRAC_PI_4);
    }

    #[test]
    fn interior_breach_turns_outward() {
        // Inside the circle heading counterclockwise of the outward radial.
        let b = v(2000.0, 0.0);
        let a = escape_angle(&b, &v(1900.0, 300.0), 3000.0);
        assert!(a.interior_breach);
        assert_eq!(a.theta, FRAC_PI_4);
        let s = ContinuousState::new(2000.0, -100.0, 0.0, 300.0, 0.0);
        let turned = reorient_track(&s, a.theta);
        assert!(turned.velocity().dot(&b) > s.velocity().dot(&b));

        let mirrored = escape_angle(&b, &v(1900.0, -300.0), 3000.0);
        assert_eq!(mirrored.theta, -FRAC_PI_4);
    }

    #[test]
    fn frame_rotation_examples() {
        let s = ContinuousState::new(1200.0, -30.0, -800.0, 250.0, 0.02);
        assert_eq!(rotate_frame(&s, 0.0), s);
        let unit = ContinuousState::new(1.0, 0.0, 0.0, 0.0, 0.0);
        let r = rotate_frame(&unit, FRAC_PI_2);
        assert!((r.x1 - 0.0).abs() < 1e-15 && (r.x2 + 1.0).abs() < 1e-15);
        let r = rotate_frame(&s, 0.6);
        assert!((r.range() - s.range()).abs() < 1e-12 * s.range());
        assert!((r.speed() - s.speed()).abs() < 1e-12 * s.speed());
        assert_eq!(r.omega, s.omega);
        let back = rotate_frame(&r, -0.6);
        assert!((back.to_vector() - s.to_vector()).abs().max() < 1e-12 * 1200.0);
    }

    #[test]
    fn track_reorientation_keeps_position() {
        let s = ContinuousState::new(3500.0, -400.0, 100.0, 20.0, 0.0);
        let r = reorient_track(&s, 0.3);
        assert_eq!(r.position(), s.position());
        assert!((r.speed() - s.speed()).abs() < 1e-9);
        assert!((rotation(-0.3) * s.velocity() - r.velocity()).norm() < 1e-12);
    }

    #[test]
    fn avoidance_on_belief() {
        let mut cov =
            StateMatrix::from_diagonal(&StateVector::new(900.0, 400.0, 1600.0, 100.0, 0.01));
        cov[(0, 1)] = 150.0;
        cov[(1, 0)] = 150.0;
        cov[(1, 3)] = -40.0;
        cov[(3, 1)] = -40.0;
        let g = GaussianBelief::new(StateVector::new(3900.0, -350.0, 800.0, 60.0, 0.0), cov);
        let belief = ImmBelief {
            per_mode: [g, g, g],
            mu: Vector3::new(0.5, 0.3, 0.2),
        };
        let zero = Advisory {
            theta: 0.0,
            theta_unclamped: 0.0,
            trigger_j: 1,
            beta: 0.0,
            gamma: 0.0,
            interior_breach: false,
        };
        assert_eq!(apply_avoidance(&belief, &zero), belief);

        let turn = Advisory {
            theta: -0.5,
            ..zero
        };
        let out = apply_avoidance(&belief, &turn);
        assert_eq!(out.mu, belief.mu);
        let before = SymmetricEigen::new(cov).eigenvalues;
        let mut before: Vec<f64> = before.iter().copied().collect();
        let mut after: Vec<f64> = SymmetricEigen::new(out.per_mode[0].cov)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        before.sort_by(f64::total_cmp);
        after.sort_by(f64::total_cmp);
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-9 * before.last().unwrap());
        }
        let r0 = belief.fused().mean;
        let r1 = out.fused().mean;
        assert!(
            (Vector2::new(r0[0], r0[2]).norm() - Vector2::new(r1[0], r1[2]).norm()).abs() < 1e-9
        );
    }
}
