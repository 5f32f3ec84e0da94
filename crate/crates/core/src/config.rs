//! Scenario configuration loading.
//!
//! Files are flat `key = value` text, one key per line, with matrices as
//! bracketed row-major lists:
//!
//! ```text
//! dt = 1.0
//! r_safe = 3000
//! meas_cov = [[2500, 0], [0, 2500]]
//! ```
//!
//! Keys mirror the [`ScenarioConfig`] field names. Command-line overrides win
//! over file values, which win over defaults. `IMM_CDA_SEED` supplies the
//! seed when neither a flag nor the file sets one.

use std::path::Path;

use serde::Deserialize;

use crate::dynamics::TransitionMatrix;
use crate::error::{Error, Result};
use crate::sim::ScenarioConfig;

pub const SEED_ENV_VAR: &str = "IMM_CDA_SEED";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    dt: Option<f64>,
    steps: Option<usize>,
    v_cruise: Option<f64>,
    r_safe: Option<f64>,
    spawn_radius: Option<f64>,
    pi: Option<[[f64; 3]; 3]>,
    process_cov: Option<[[f64; 5]; 5]>,
    meas_cov: Option<[[f64; 2]; 2]>,
    cda_enabled: Option<bool>,
    seed: Option<u64>,
    lookahead_max: Option<usize>,
    mode_threshold: Option<f64>,
}

/// Values given on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub dt: Option<f64>,
    pub steps: Option<usize>,
    pub r_safe: Option<f64>,
    pub seed: Option<u64>,
    pub cda_enabled: Option<bool>,
    pub mode_threshold: Option<f64>,
}

fn parse_file(text: &str, origin: &str) -> Result<ConfigFile> {
    toml::from_str(text).map_err(|e| Error::ConfigParse {
        origin: origin.to_string(),
        message: e.to_string().trim_end().to_string(),
    })
}

/// Merges defaults, an optional file body and overrides, then validates.
pub fn resolve_config(
    file: Option<(&str, &str)>,
    overrides: &ConfigOverrides,
    env_seed: Option<&str>,
) -> Result<ScenarioConfig> {
    let parsed = match file {
        Some((text, origin)) => parse_file(text, origin)?,
        None => ConfigFile::default(),
    };

    let mut c = ScenarioConfig::default();
    macro_rules! take {
        ($($field:ident),*) => {$(
            if let Some(v) = parsed.$field { c.$field = v; }
        )*};
    }
    take!(
        dt,
        steps,
        v_cruise,
        r_safe,
        spawn_radius,
        process_cov,
        meas_cov,
        cda_enabled,
        lookahead_max
    );
    if let Some(rows) = parsed.pi {
        c.pi = TransitionMatrix::new(rows).map_err(|e| Error::config("pi", e.to_string()))?;
    }
    if parsed.mode_threshold.is_some() {
        c.mode_threshold = parsed.mode_threshold;
    }

    let env_seed = match env_seed {
        Some(s) => Some(s.trim().parse::<u64>().map_err(|e| {
            Error::config(
                SEED_ENV_VAR,
                format!("`{s}` is not an unsigned integer: {e}"),
            )
        })?),
        None => None,
    };
    c.seed = overrides
        .seed
        .or(parsed.seed)
        .or(env_seed)
        .unwrap_or(c.seed);

    if let Some(v) = overrides.dt {
        c.dt = v;
    }
    if let Some(v) = overrides.steps {
        c.steps = v;
    }
    if let Some(v) = overrides.r_safe {
        c.r_safe = v;
    }
    if let Some(v) = overrides.cda_enabled {
        c.cda_enabled = v;
    }
    if overrides.mode_threshold.is_some() {
        c.mode_threshold = overrides.mode_threshold;
    }

    c.validate()?;
    Ok(c)
}

/// Reads the optional config file and the seed environment variable.
pub fn load_config(path: Option<&Path>, overrides: &ConfigOverrides) -> Result<ScenarioConfig> {
    let text = match path {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|source| Error::Io {
            path: p.display().to_string(),
            source,
        })?),
        None => None,
    };
    let origin = path.map(|p| p.display().to_string()).unwrap_or_default();
    let env_seed = std::env::var(SEED_ENV_VAR).ok();
    resolve_config(
        text.as_deref().map(|t| (t, origin.as_str())),
        overrides,
        env_seed.as_deref(),
    )
}

impl ScenarioConfig {
    /// Renders the configuration in the file format accepted by [`load_config`].
    /// Fails only for seeds above `i64::MAX`, which the file format cannot hold.
    pub fn to_config_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("seed", e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key_of(r: Result<ScenarioConfig>) -> String {
        match r {
            Err(Error::InvalidConfig { key, .. }) => key,
            other => panic!("expected invalid-config error, got {other:?}"),
        }
    }

    #[test]
    fn empty_input_gives_defaults() {
        let c = resolve_config(None, &ConfigOverrides::default(), None).unwrap();
        assert_eq!(c, ScenarioConfig::default());
        let c = resolve_config(Some(("", "empty")), &ConfigOverrides::default(), None).unwrap();
        assert_eq!(c.v_cruise, 285.841);
        assert_eq!(c.r_safe, 3000.0);
        assert_eq!(c.meas_cov, [[2500.0, 0.0], [0.0, 2500.0]]);
    }

    #[test]
    fn zero_dt_flag_rejected() {
        let o = ConfigOverrides {
            dt: Some(0.0),
            ..Default::default()
        };
        assert_eq!(key_of(resolve_config(None, &o, None)), "dt");
    }

    #[test]
    fn flags_override_file() {
        let o = ConfigOverrides {
            r_safe: Some(3500.0),
            ..Default::default()
        };
        let c = resolve_config(Some(("r_safe = 2000", "f")), &o, None).unwrap();
        assert_eq!(c.r_safe, 3500.0);
        let c = resolve_config(
            Some(("r_safe = 2000", "f")),
            &ConfigOverrides::default(),
            None,
        )
        .unwrap();
        assert_eq!(c.r_safe, 2000.0);
    }

    #[test]
    fn seed_precedence() {
        let none = ConfigOverrides::default();
        let flag = ConfigOverrides {
            seed: Some(7),
            ..Default::default()
        };
        assert_eq!(resolve_config(None, &none, Some("99")).unwrap().seed, 99);
        assert_eq!(
            resolve_config(Some(("seed = 5", "f")), &none, Some("99"))
                .unwrap()
                .seed,
            5
        );
        assert_eq!(
            resolve_config(Some(("seed = 5", "f")), &flag, Some("99"))
                .unwrap()
                .seed,
            7
        );
        assert_eq!(
            key_of(resolve_config(None, &none, Some("abc"))),
            SEED_ENV_VAR
        );
    }

    #[test]
    fn matrices_parse_row_major() {
        let text =
            "pi = [[1, 0, 0], [0.5, 0.5, 0], [0, 0, 1]]\nmeas_cov = [[100, 10], [10, 400]]\n";
        let c = resolve_config(Some((text, "f")), &ConfigOverrides::default(), None).unwrap();
        assert_eq!(c.pi.get(1, 0), 0.5);
        assert_eq!(c.meas_cov, [[100.0, 10.0], [10.0, 400.0]]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = resolve_config(
            Some(("dt = 1\nwind = 3\n", "cfg.txt")),
            &ConfigOverrides::default(),
            None,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("wind"), "{msg}");
        assert!(msg.contains("cfg.txt"), "{msg}");
    }

    #[test]
    fn parse_errors_report_line() {
        let err = resolve_config(
            Some(("dt = 1\nsteps = = 4\n", "cfg.txt")),
            &ConfigOverrides::default(),
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn invariant_violations_name_key() {
        let bad_pi = "pi = [[0.5, 0.1, 0.1], [0, 1, 0], [0, 0, 1]]";
        assert_eq!(
            key_of(resolve_config(
                Some((bad_pi, "f")),
                &ConfigOverrides::default(),
                None
            )),
            "pi"
        );
        let bad_cov = "meas_cov = [[1, 3], [3, 1]]";
        assert_eq!(
            key_of(resolve_config(
                Some((bad_cov, "f")),
                &ConfigOverrides::default(),
                None
            )),
            "meas_cov"
        );
    }

    #[test]
    fn rendered_config_reloads() {
        let c = ScenarioConfig {
            dt: 0.5,
            seed: 123,
            cda_enabled: false,
            mode_threshold: Some(0.6),
            ..ScenarioConfig::default()
        };
        let text = c.to_config_text().unwrap();
        let back =
            resolve_config(Some((&text, "echo")), &ConfigOverrides::default(), None).unwrap();
        assert_eq!(back, c);
    }
}
