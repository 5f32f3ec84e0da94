//! Desk-scale invariant suite behind `imm-cda check`.
//!
//! Every check draws from its own seeded stream, so a failing check can be
//! reproduced in isolation with the same seed.

use std::f64::consts::{FRAC_PI_4, PI};

use nalgebra::{Matrix2, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{resolve_config, ConfigOverrides};
use crate::conflict::{
    advise, escape_angle, predict_range, rotate_frame, scan_predictions, MAX_ESCAPE_ANGLE,
};
use crate::dynamics::{
    coordinated_turn_matrix, mode_matrix, sample_next_mode, step_truth, ContinuousState,
    MeasMatrix, MeasVector, ModeId, NoiseModel, StateMatrix, StateVector, TransitionMatrix,
};
use crate::error::Error;
use crate::imm::{
    imm_step, imm_step_with_transitions, mixing_probabilities, ImmBelief, ImmModel, MODE_COUNT,
};
use crate::io::{read_episode_csv_from, write_episode_csv_to};
use crate::kalman::{gaussian_likelihood, GaussianBelief, KalmanFilter};
use crate::sim::{run_episode, run_episode_with_model, run_monte_carlo_traces, ScenarioConfig};

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub module: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type CheckResult = Result<String, String>;
type CheckFn = fn(&mut ChaCha8Rng) -> CheckResult;

const CHECKS: &[(&str, &str, CheckFn)] = &[
    (
        "jump-markov-dynamics",
        "turn block orthogonal",
        turn_block_orthogonal,
    ),
    (
        "jump-markov-dynamics",
        "turns preserve speed",
        turns_preserve_speed,
    ),
    (
        "jump-markov-dynamics",
        "straight-line limit",
        straight_line_limit,
    ),
    (
        "jump-markov-dynamics",
        "mode sampling frequencies",
        mode_sampling_frequencies,
    ),
    (
        "jump-markov-dynamics",
        "propagation keeps simplex",
        propagation_keeps_simplex,
    ),
    (
        "imm-estimator",
        "likelihood normalised",
        likelihood_normalised,
    ),
    (
        "imm-estimator",
        "mixing column-stochastic",
        mixing_column_stochastic,
    ),
    (
        "imm-estimator",
        "fuzzed steps stay valid",
        fuzzed_steps_stay_valid,
    ),
    (
        "imm-estimator",
        "identity chain equals KF",
        identity_chain_equals_kf,
    ),
    (
        "imm-estimator",
        "permutation equivariance",
        permutation_equivariance,
    ),
    (
        "conflict-avoidance",
        "predicted range consistent",
        predicted_range_consistent,
    ),
    (
        "conflict-avoidance",
        "tangency and clamping",
        tangency_and_clamping,
    ),
    (
        "conflict-avoidance",
        "first trigger wins",
        first_trigger_wins,
    ),
    (
        "conflict-avoidance",
        "frame rotation round trip",
        frame_rotation_round_trip,
    ),
    (
        "conflict-avoidance",
        "avoidance raises median separation",
        avoidance_raises_separation,
    ),
    (
        "scenario-sim",
        "deterministic episodes",
        deterministic_episodes,
    ),
    (
        "scenario-sim",
        "quiet truth follows line",
        quiet_truth_follows_line,
    ),
    (
        "scenario-sim",
        "avoidance lowers breach fraction",
        avoidance_lowers_breaches,
    ),
    ("trace-io-cli", "csv round trip", csv_round_trip),
    ("trace-io-cli", "json round trip", json_round_trip),
    (
        "trace-io-cli",
        "config rejects bad values",
        config_rejects_bad_values,
    ),
];

/// Runs every check with streams derived from `seed`.
pub fn run_checks(seed: u64) -> Vec<CheckOutcome> {
    CHECKS
        .iter()
        .enumerate()
        .map(|(i, &(module, name, check))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let (passed, detail) = match check(&mut rng) {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckOutcome {
                module,
                name,
                passed,
                detail,
            }
        })
        .collect()
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lib<T>(r: crate::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn random_pi(rng: &mut ChaCha8Rng) -> TransitionMatrix {
    let rows = std::array::from_fn(|_| {
        let raw: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>() + 1e-3);
        let total: f64 = raw.iter().sum();
        let mut row = raw.map(|v| v / total);
        row[2] = 1.0 - row[0] - row[1];
        row
    });
    TransitionMatrix::new(rows).expect("normalised rows")
}

fn random_simplex(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let v = Vector3::from_fn(|_, _| -rng.random::<f64>().max(1e-300).ln());
    v / v.sum()
}

fn random_cov(rng: &mut ChaCha8Rng, scale: f64) -> StateMatrix {
    let a = StateMatrix::from_fn(|_, _| uniform(rng, -1.0, 1.0) * scale);
    a * a.transpose() + StateMatrix::identity() * (1e-3 * scale * scale)
}

fn random_belief(rng: &mut ChaCha8Rng) -> ImmBelief {
    let per_mode = std::array::from_fn(|_| {
        let mean = StateVector::new(
            uniform(rng, -8000.0, 8000.0),
            uniform(rng, -600.0, 600.0),
            uniform(rng, -8000.0, 8000.0),
            uniform(rng, -600.0, 600.0),
            uniform(rng, -0.05, 0.05),
        );
        let scale = uniform(rng, 1.0, 300.0);
        GaussianBelief::new(mean, random_cov(rng, scale))
    });
    ImmBelief {
        per_mode,
        mu: random_simplex(rng),
    }
}

/// Mode-conditioned estimates scattered around one common track, as they are
/// in a running filter.
fn clustered_belief(rng: &mut ChaCha8Rng) -> ImmBelief {
    let mut belief = random_belief(rng);
    let centre = belief.per_mode[0].mean;
    for b in &mut belief.per_mode {
        b.mean = centre
            + StateVector::new(
                uniform(rng, -100.0, 100.0),
                uniform(rng, -20.0, 20.0),
                uniform(rng, -100.0, 100.0),
                uniform(rng, -20.0, 20.0),
                uniform(rng, -0.01, 0.01),
            );
    }
    belief
}

fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn turn_block_orthogonal(rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst: f64 = 0.0;
    for _ in 0..2000 {
        let omega = uniform(rng, -2.0, 2.0);
        let dt = uniform(rng, 0.01, 5.0);
        let a = coordinated_turn_matrix(omega, dt);
        let v = Matrix2::new(a[(1, 1)], a[(1, 3)], a[(3, 1)], a[(3, 3)]);
        let gram = (v.transpose() * v - Matrix2::identity()).abs().max();
        let det = (v.determinant() - 1.0).abs();
        worst = worst.max(gram).max(det);
    }
    ensure(worst <= 1e-10, || format!("max deviation {worst:e}"))?;
    Ok(format!("2000 draws, max deviation {worst:.1e}"))
}

fn turns_preserve_speed(rng: &mut ChaCha8Rng) -> CheckResult {
    for _ in 0..200 {
        let mut s = ContinuousState::new(
            uniform(rng, -5000.0, 5000.0),
            uniform(rng, -500.0, 500.0),
            uniform(rng, -5000.0, 5000.0),
            uniform(rng, -500.0, 500.0),
            0.0,
        );
        let speed = s.speed();
        let mode = ModeId::ALL[rng.random_range(0..3)];
        let dt = uniform(rng, 0.1, 2.0);
        let omega = mode.rate_offset();
        let start = s;
        for k in 1..=40 {
            s = step_truth(&s, mode, dt, &StateVector::zeros());
            ensure((s.speed() - speed).abs() <= 1e-9 * speed.max(1.0), || {
                format!("speed drifted from {speed} to {} in mode {mode}", s.speed())
            })?;
            if mode != ModeId::Straight {
                // Closed-form arc about the turn centre.
                let (sin, cos) = (omega * dt * k as f64).sin_cos();
                let rot = Matrix2::new(cos, -sin, sin, cos);
                let center = start.position() + Vector2::new(-start.vx2, start.vx1) / omega;
                let expected = center + rot * (start.position() - center);
                let err = (s.position() - expected).norm();
                ensure(err <= 1e-6 * (1.0 + expected.norm()), || {
                    format!("arc position error {err:e} at step {k}")
                })?;
            }
        }
    }
    Ok("200 zero-noise tracks, 40 steps each".into())
}

fn straight_line_limit(rng: &mut ChaCha8Rng) -> CheckResult {
    let mut worst: f64 = 0.0;
    for _ in 0..2000 {
        // The position entries differ from A1 by about |omega dt| * dt / 2.
        let dt = uniform(rng, 0.01, 2.0);
        let omega = uniform(rng, -1.0, 1.0) * 1e-8 / dt;
        let a = coordinated_turn_matrix(omega, dt);
        let mut a1 = StateMatrix::identity();
        a1[(0, 1)] = dt;
        a1[(2, 3)] = dt;
        worst = worst.max((a - a1).abs().max());
    }
    ensure(worst <= 1e-8, || format!("max entry gap {worst:e}"))?;
    Ok(format!(
        "2000 draws with |omega dt| < 1e-8, max gap {worst:.1e}"
    ))
}

fn mode_sampling_frequencies(rng: &mut ChaCha8Rng) -> CheckResult {
    const DRAWS: usize = 100_000;
    let pi = TransitionMatrix::standard();
    let mut worst: f64 = 0.0;
    for from in ModeId::ALL {
        let mut counts = [0usize; 3];
        for _ in 0..DRAWS {
            counts[lib(sample_next_mode(from, &pi, rng.random()))?.index()] += 1;
        }
        for (j, &c) in counts.iter().enumerate() {
            let gap = (c as f64 / DRAWS as f64 - pi.get(from.index(), j)).abs();
            worst = worst.max(gap);
        }
    }
    ensure(worst <= 0.01, || format!("max frequency gap {worst}"))?;
    Ok(format!("{DRAWS} draws per row, max gap {worst:.4}"))
}

fn propagation_keeps_simplex(rng: &mut ChaCha8Rng) -> CheckResult {
    for _ in 0..2000 {
        let pi = random_pi(rng);
        let mut m = random_simplex(rng);
        for _ in 0..20 {
            m = pi.propagate(&m);
            ensure(
                m.iter().all(|&v| v >= 0.0) && (m.sum() - 1.0).abs() <= 1e-12,
                || format!("left simplex: {m:?}"),
            )?;
        }
    }
    Ok("2000 random chains, 20 steps each".into())
}

fn likelihood_normalised(rng: &mut ChaCha8Rng) -> CheckResult {
    for _ in 0..3 {
        let a = Matrix2::from_fn(|_, _| uniform(rng, -40.0, 40.0));
        let s: MeasMatrix = a * a.transpose() + Matrix2::identity() * 400.0;
        let reach = 9.0 * s.diagonal().max().sqrt();
        let n = 600;
        let h = 2.0 * reach / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let r =
                    MeasVector::new(-reach + (i as f64 + 0.5) * h, -reach + (j as f64 + 0.5) * h);
                total += lib(gaussian_likelihood(&r, &s))? * h * h;
            }
        }
        ensure((total - 1.0).abs() <= 1e-3, || format!("integral {total}"))?;
    }
    Ok("3 random covariances integrate to 1 within 1e-3".into())
}

fn mixing_column_stochastic(rng: &mut ChaCha8Rng) -> CheckResult {
    for _ in 0..2000 {
        let m = mixing_probabilities(&random_pi(rng), &random_simplex(rng));
        for j in 0..MODE_COUNT {
            let col = m.mu_ij.column(j).sum();
            ensure((col - 1.0).abs() <= 1e-12, || {
                format!("column {j} sums to {col}")
            })?;
        }
    }
    Ok("2000 random mixings".into())
}

fn fuzzed_steps_stay_valid(rng: &mut ChaCha8Rng) -> CheckResult {
    let noise = NoiseModel::standard();
    for n in 0..2000 {
        let model = ImmModel::new(random_pi(rng), &noise, uniform(rng, 0.1, 2.0));
        let belief = random_belief(rng);
        let fused = belief.fused();
        let z = MeasVector::new(
            fused.mean[0] + uniform(rng, -500.0, 500.0),
            fused.mean[2] + uniform(rng, -500.0, 500.0),
        );
        let out = lib(imm_step(&belief, &z, &model))?;
        let mu = out.belief.mu;
        ensure(
            mu.iter().all(|v| (0.0..=1.0).contains(v)) && (mu.sum() - 1.0).abs() <= 1e-12,
            || format!("draw {n}: mu off simplex {mu:?}"),
        )?;
        for (j, b) in out.belief.per_mode.iter().chain([&out.fused]).enumerate() {
            ensure(b.is_valid(), || {
                format!(
                    "draw {n}: belief {j} invalid, min eigenvalue {}",
                    b.min_eigenvalue()
                )
            })?;
        }
        for c in 0..5 {
            let vals = out.belief.per_mode.map(|b| b.mean[c]);
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let slack = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
            let v = out.fused.mean[c];
            ensure(v >= lo - slack && v <= hi + slack, || {
                format!("draw {n}: fused coordinate {c} = {v} outside [{lo}, {hi}]")
            })?;
        }
    }
    Ok("2000 random beliefs, models and measurements".into())
}

fn identity_chain_equals_kf(rng: &mut ChaCha8Rng) -> CheckResult {
    let noise = NoiseModel::standard();
    let model = ImmModel::new(TransitionMatrix::identity(), &noise, 1.0);
    for m in ModeId::ALL {
        let z0 = MeasVector::new(uniform(rng, -4000.0, 4000.0), uniform(rng, -4000.0, 4000.0));
        let mut belief = ImmBelief::from_first_measurement(&z0);
        belief.mu = Vector3::zeros();
        belief.mu[m.index()] = 1.0;
        let mut kf = KalmanFilter {
            belief: belief.per_mode[m.index()],
            transition: mode_matrix(m, 0.0, model.dt),
            process_cov: noise.process_cov,
            observation: noise.meas_matrix,
            meas_cov: noise.meas_cov,
        };
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let z = MeasVector::new(uniform(rng, -4000.0, 4000.0), uniform(rng, -4000.0, 4000.0));
            let out = lib(imm_step(&belief, &z, &model))?;
            belief = out.belief;
            kf.transition = mode_matrix(m, 0.0, model.dt);
            let k = lib(kf.step(&z))?.posterior;
            worst = worst
                .max((out.fused.mean - k.mean).abs().max())
                .max((out.fused.cov - k.cov).abs().max());
        }
        ensure(worst <= 1e-12, || format!("mode {m}: max gap {worst:e}"))?;
    }
    Ok("100 steps per mode".into())
}

fn permutation_equivariance(rng: &mut ChaCha8Rng) -> CheckResult {
    const PERMS: [[usize; 3]; 5] = [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let noise = NoiseModel::standard();
    for _ in 0..200 {
        let model = ImmModel::new(random_pi(rng), &noise, 1.0);
        let belief = clustered_belief(rng);
        let fused = belief.fused();
        let z = MeasVector::new(
            fused.mean[0] + uniform(rng, -300.0, 300.0),
            fused.mean[2] + uniform(rng, -300.0, 300.0),
        );
        let transitions = model.mode_matrices(belief.fused().mean[4]);
        let base = lib(imm_step_with_transitions(&belief, &z, &model, &transitions))?;

        let sigma = PERMS[rng.random_range(0..PERMS.len())];
        let rows = model.pi.rows();
        let permuted_model = ImmModel {
            pi: lib(TransitionMatrix::new(std::array::from_fn(|a| {
                std::array::from_fn(|b| rows[sigma[a]][sigma[b]])
            })))?,
            ..model.clone()
        };
        let permuted_belief = ImmBelief {
            per_mode: std::array::from_fn(|k| belief.per_mode[sigma[k]]),
            mu: Vector3::from_fn(|k, _| belief.mu[sigma[k]]),
        };
        let permuted_transitions = std::array::from_fn(|k| transitions[sigma[k]]);
        let out = lib(imm_step_with_transitions(
            &permuted_belief,
            &z,
            &permuted_model,
            &permuted_transitions,
        ))?;

        for k in 0..MODE_COUNT {
            ensure(
                (out.belief.mu[k] - base.belief.mu[sigma[k]]).abs() <= 1e-12,
                || format!("mu not permuted under {sigma:?}"),
            )?;
        }
        // Normwise: summation order changes only the last bits of each entry.
        let mean_gap = (out.fused.mean - base.fused.mean).abs().max() / base.fused.mean.abs().max();
        let cov_gap = (out.fused.cov - base.fused.cov).abs().max() / base.fused.cov.abs().max();
        let gap = mean_gap.max(cov_gap);
        ensure(gap <= 1e-12, || {
            format!("fused estimate moved by {gap:e} under {sigma:?}")
        })?;
    }
    Ok("200 random relabellings".into())
}

fn predicted_range_consistent(rng: &mut ChaCha8Rng) -> CheckResult {
    for _ in 0..2000 {
        let p = Vector2::new(uniform(rng, -9000.0, 9000.0), uniform(rng, -9000.0, 9000.0));
        let d = Vector2::new(uniform(rng, -600.0, 600.0), uniform(rng, -600.0, 600.0));
        let r_safe = uniform(rng, 500.0, 5000.0);
        let pred = predict_range(&p, &d, rng.random_range(1..=3), r_safe);
        ensure(
            (pred.predicted_range - pred.predicted_point.norm()).abs() <= 1e-9,
            || "range disagrees with predicted point".into(),
        )?;
        ensure(pred.is_unsafe == (pred.predicted_range < r_safe), || {
            "unsafe flag disagrees with range".into()
        })?;
    }
    Ok("2000 random predictions".into())
}

fn tangency_and_clamping(rng: &mut ChaCha8Rng) -> CheckResult {
    let mut tested = 0;
    for _ in 0..5000 {
        let r_safe = uniform(rng, 100.0, 5000.0);
        let bo = r_safe * uniform(rng, 1.001, 4.0);
        let phi = uniform(rng, -PI, PI);
        let b = Vector2::new(phi.cos(), phi.sin()) * bo;
        let heading = uniform(rng, -PI, PI);
        let c = b + Vector2::new(heading.cos(), heading.sin()) * uniform(rng, 10.0, 2000.0);
        let adv = escape_angle(&b, &c, r_safe);
        ensure(adv.theta.abs() <= MAX_ESCAPE_ANGLE, || {
            format!("theta {} unclamped", adv.theta)
        })?;
        if adv.theta_unclamped.abs() <= MAX_ESCAPE_ANGLE {
            ensure(adv.theta == adv.theta_unclamped, || {
                "in-bounds angle was altered".into()
            })?;
        }
        if adv.theta_unclamped.abs() <= FRAC_PI_4 {
            let (s, co) = (-adv.theta_unclamped).sin_cos();
            let d = c - b;
            let d_new = Vector2::new(co * d.x - s * d.y, s * d.x + co * d.y);
            let dist = (d_new.x * b.y - d_new.y * b.x).abs() / d_new.norm();
            ensure((dist - r_safe).abs() <= 1e-6 * r_safe, || {
                format!("distance {dist} vs r_safe {r_safe}")
            })?;
            tested += 1;
        }
    }
    Ok(format!("5000 triples, {tested} tangents measured"))
}

fn first_trigger_wins(rng: &mut ChaCha8Rng) -> CheckResult {
    let mut triggered = 0;
    for _ in 0..2000 {
        let p = Vector2::new(uniform(rng, -6000.0, 6000.0), uniform(rng, -6000.0, 6000.0));
        let v = Vector2::new(uniform(rng, -900.0, 900.0), uniform(rng, -900.0, 900.0));
        let preds = scan_predictions(&p, &v, 1.0, 3000.0, 3);
        if let Some(first) = preds.iter().find(|q| q.is_unsafe) {
            let adv = advise(&p, first, 3000.0);
            let expected = (1..=3).find(|&j| (p + v * j as f64).norm() < 3000.0);
            ensure(Some(adv.trigger_j) == expected, || {
                format!(
                    "trigger {} but first unsafe horizon {expected:?}",
                    adv.trigger_j
                )
            })?;
            triggered += 1;
        }
    }
    Ok(format!("{triggered} conflicts"))
}

fn frame_rotation_round_trip(rng: &mut ChaCha8Rng) -> CheckResult {
    for _ in 0..2000 {
        let s = ContinuousState::new(
            uniform(rng, -9000.0, 9000.0),
            uniform(rng, -600.0, 600.0),
            uniform(rng, -9000.0, 9000.0),
            uniform(rng, -600.0, 600.0),
            uniform(rng, -0.1, 0.1),
        );
        let theta = uniform(rng, -PI, PI);
        let rotated = rotate_frame(&s, theta);
        let back = rotate_frame(&rotated, -theta);
        let gap = (back.to_vector() - s.to_vector()).abs().max();
        ensure(gap <= 1e-12 * 9000.0, || format!("round trip gap {gap:e}"))?;
        ensure(
            (rotated.range() - s.range()).abs() <= 1e-12 * s.range(),
            || "range changed by frame rotation".into(),
        )?;
    }
    Ok("2000 random states".into())
}

fn paired_runs(rng: &mut ChaCha8Rng, n: usize) -> Result<(Vec<f64>, Vec<f64>), String> {
    let on = ScenarioConfig {
        seed: rng.random::<u32>() as u64,
        ..ScenarioConfig::default()
    };
    let off = ScenarioConfig {
        cda_enabled: false,
        ..on.clone()
    };
    let seps = |c: &ScenarioConfig| -> Result<Vec<f64>, String> {
        Ok(lib(run_monte_carlo_traces(c, n))?
            .iter()
            .map(|t| t.summary.min_separation)
            .collect())
    };
    Ok((seps(&on)?, seps(&off)?))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn avoidance_raises_separation(rng: &mut ChaCha8Rng) -> CheckResult {
    let (on, off) = paired_runs(rng, 200)?;
    let (m_on, m_off) = (median(on), median(off));
    ensure(m_on > m_off, || {
        format!("median {m_on:.0} m with avoidance vs {m_off:.0} m without")
    })?;
    Ok(format!("median min separation {m_on:.0} m vs {m_off:.0} m"))
}

fn deterministic_episodes(rng: &mut ChaCha8Rng) -> CheckResult {
    for _ in 0..5 {
        let c = ScenarioConfig {
            seed: rng.random(),
            ..ScenarioConfig::default()
        };
        let a = lib(run_episode(&c))?;
        let b = lib(run_episode(&c))?;
        ensure(a == b, || {
            format!("seed {} gave two different traces", c.seed)
        })?;
    }
    Ok("5 seeds replayed".into())
}

fn quiet_truth_follows_line(rng: &mut ChaCha8Rng) -> CheckResult {
    for _ in 0..10 {
        let c = ScenarioConfig {
            seed: rng.random(),
            process_cov: [[0.0; 5]; 5],
            meas_cov: [[0.0; 2]; 2],
            pi: TransitionMatrix::identity(),
            cda_enabled: false,
            ..ScenarioConfig::default()
        };
        let trace = lib(run_episode_with_model(
            &c,
            &ScenarioConfig::default().imm_model(),
        ))?;
        let first = trace.records[0].truth;
        for r in &trace.records {
            let steps = (r.k - 1) as f64 * c.dt;
            let expected = first.position() + first.velocity() * steps;
            let gap = (r.truth.position() - expected).norm();
            ensure(gap <= 1e-9 * (1.0 + expected.norm()), || {
                format!("seed {}: step {} off the line by {gap:e}", c.seed, r.k)
            })?;
        }
    }
    Ok("10 noise-free episodes".into())
}

fn avoidance_lowers_breaches(rng: &mut ChaCha8Rng) -> CheckResult {
    let (on, off) = paired_runs(rng, 200)?;
    let frac = |v: &[f64]| v.iter().filter(|&&s| s < 3000.0).count() as f64 / v.len() as f64;
    let (f_on, f_off) = (frac(&on), frac(&off));
    ensure(f_on < f_off, || {
        format!("breach fraction {f_on} with avoidance vs {f_off} without")
    })?;
    Ok(format!("breach fraction {f_on:.3} vs {f_off:.3}"))
}

fn csv_round_trip(rng: &mut ChaCha8Rng) -> CheckResult {
    let c = ScenarioConfig {
        seed: rng.random(),
        ..ScenarioConfig::default()
    };
    let trace = lib(run_episode(&c))?;
    let mut buf = Vec::new();
    write_episode_csv_to(&trace, &mut buf).map_err(|e| e.to_string())?;
    let rows = read_episode_csv_from(buf.as_slice()).map_err(|e| e.to_string())?;
    ensure(rows.len() == trace.records.len(), || {
        "row count changed".into()
    })?;
    for (row, rec) in rows.iter().zip(&trace.records) {
        let pairs = [
            (row.truth_x1, rec.truth.x1),
            (row.truth_vx1, rec.truth.vx1),
            (row.truth_x2, rec.truth.x2),
            (row.truth_vx2, rec.truth.vx2),
            (row.z1, rec.z[0]),
            (row.z2, rec.z[1]),
            (row.est_x1, rec.estimate[0]),
            (row.est_vx2, rec.estimate[3]),
            (row.mu1, rec.mu[0]),
            (row.mu2, rec.mu[1]),
            (row.mu3, rec.mu[2]),
            (row.separation, rec.separation),
        ];
        for (a, b) in pairs {
            ensure(rel_diff(a, b) <= 1e-9, || {
                format!("step {}: {a} read back as {b}", rec.k)
            })?;
        }
        ensure((row.mu1 + row.mu2 + row.mu3 - 1.0).abs() <= 1e-9, || {
            "mu off simplex".into()
        })?;
        ensure(
            (row.separation - row.truth_x1.hypot(row.truth_x2)).abs() <= 1e-6,
            || "separation disagrees with truth".into(),
        )?;
    }
    Ok(format!("{} rows", rows.len()))
}

fn json_round_trip(rng: &mut ChaCha8Rng) -> CheckResult {
    let c = ScenarioConfig {
        seed: rng.random::<u32>() as u64,
        ..ScenarioConfig::default()
    };
    let traces = lib(run_monte_carlo_traces(&c, 8))?;
    let summaries: Vec<_> = traces.iter().map(|t| t.summary.clone()).collect();
    let summary = crate::sim::MonteCarloSummary::from_episodes(&summaries);
    let text = serde_json::to_string(&summary).map_err(|e| e.to_string())?;
    let back: crate::sim::MonteCarloSummary =
        serde_json::from_str(&text).map_err(|e| e.to_string())?;
    ensure(back == summary, || "summary changed through JSON".into())?;
    let text = serde_json::to_string(&c).map_err(|e| e.to_string())?;
    let back: ScenarioConfig = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    ensure(back == c, || "config changed through JSON".into())?;
    Ok("summary and config".into())
}

fn config_rejects_bad_values(_: &mut ChaCha8Rng) -> CheckResult {
    let cases: [(&str, &str); 5] = [
        ("dt = 0", "dt"),
        ("r_safe = 5000", "spawn_radius"),
        ("v_cruise = -1", "v_cruise"),
        ("meas_cov = [[1, 2], [2, 1]]", "meas_cov"),
        ("pi = [[0.5, 0.5, 0.5], [0, 1, 0], [0, 0, 1]]", "pi"),
    ];
    for (text, key) in cases {
        match resolve_config(Some((text, "check")), &ConfigOverrides::default(), None) {
            Err(Error::InvalidConfig { key: k, .. }) if k == key => {}
            other => {
                return Err(format!(
                    "`{text}` gave {other:?}, expected rejection of {key}"
                ))
            }
        }
    }
    Ok("5 invalid files rejected with the right key".into())
}
