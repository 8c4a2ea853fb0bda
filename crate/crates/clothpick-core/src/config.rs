//! Plain-text run configuration.
//!
//! The format is `key = value` lines with `#` comments. Every known key has
//! a default; parsing rejects unknown keys so typos fail loudly. A resolved
//! snapshot (all keys, sorted) is written next to every run's outputs and is
//! sufficient to reproduce the run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Known keys and their defaults. The defaults are the desk-scale settings;
/// reference-scale values (e.g. plan.population = 5000) are documented in the
/// README and overridable here.
pub const KNOWN_KEYS: &[(&str, &str)] = &[
    // run identity
    ("run.seed", "0"),
    // simulator
    ("sim.rows", "8"),
    ("sim.cols", "8"),
    ("sim.spacing", "0.1"),
    ("sim.dt", "0.005"),
    ("sim.gravity", "9.8"),
    ("sim.stiffness_structural", "6000"),
    ("sim.stiffness_shear", "3000"),
    ("sim.stiffness_bend", "1500"),
    ("sim.damping", "2.0"),
    ("sim.spring_damping", "6.0"),
    ("sim.ground_friction", "0.4"),
    ("sim.strain_limit", "1.08"),
    ("sim.strain_iterations", "3"),
    ("sim.settle_steps", "500"),
    ("sim.settle_velocity_eps", "0.015"),
    ("sim.grasp_radius", "0.075"),
    ("sim.lift_height", "0.2"),
    ("sim.lift_substeps", "50"),
    ("sim.move_substeps", "100"),
    // observation rendering
    ("obs.resolution", "32"),
    ("obs.channels", "heightfield,mask"),
    ("obs.z_max", "0.3"),
    ("obs.layer_thickness", "0.01"),
    // reward shaping
    ("reward.tau_high", "0.95"),
    ("reward.eps_flat", "0.01"),
    // episode lifecycle
    ("env.max_steps", "20"),
    ("env.max_crumple_folds", "8"),
    // model architecture
    ("rssm.h_dim", "64"),
    ("rssm.z_dim", "16"),
    ("rssm.hidden_width", "128"),
    ("rssm.embed_dim", "128"),
    ("rssm.input_channels", "heightfield"),
    ("rssm.output_channels", "mask"),
    // training
    ("train.alpha", "0.8"),
    ("train.kl_balanced", "true"),
    ("train.free_nats", "3.0"),
    ("train.learning_rate", "0.0003"),
    ("train.batch_size", "16"),
    ("train.sequence_length", "10"),
    ("train.grad_clip_norm", "100"),
    ("train.augment_rotate", "true"),
    ("train.augment_vflip", "true"),
    ("train.obs_noise_std", "0.02"),
    ("train.w_obs", "1.0"),
    ("train.w_reward", "1.0"),
    ("train.w_kl", "1.0"),
    ("train.w_prior_reward", "1.0"),
    ("train.steps", "5000"),
    ("train.checkpoint_every", "1000"),
    // planner (desk defaults; reference setting is population 5000, iterations 100)
    ("plan.population", "500"),
    ("plan.iterations", "20"),
    ("plan.elite_fraction", "0.10"),
    ("plan.horizon", "1"),
    ("plan.std_floor", "0.001"),
    ("plan.mask_source", "environment"),
    ("plan.max_rejection_tries", "50"),
    ("plan.seed", "0"),
    // dataset generation
    ("data.main_episodes", "2000"),
    ("data.high_coverage_episodes", "240"),
    ("data.high_coverage_floor", "0.85"),
    ("data.w_pure_random", "0.10"),
    ("data.w_corner_biased", "0.10"),
    ("data.w_oracle_flatten", "0.25"),
    ("data.w_oracle_fold", "0.15"),
    ("data.w_noisy_expert", "0.30"),
    ("data.w_mix", "0.10"),
    ("data.high_w_expert", "0.2"),
    ("data.high_w_noisy_expert", "0.2"),
    ("data.high_w_small_drag", "0.6"),
    // evaluation
    ("eval.seeds_per_tier", "20"),
    ("eval.tiers", "0,1,2,3,4"),
    ("eval.record_steps", "5,10,20"),
];

/// Resolved configuration: every known key has a value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        let entries = KNOWN_KEYS
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Config { entries }
    }
}

impl Config {
    /// Parse config text on top of the defaults.
    pub fn from_text(text: &str) -> Result<Config> {
        let mut cfg = Config::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Read a config file on top of the defaults.
    pub fn from_file(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Config::from_text(&text)
    }

    /// Apply `key = value` lines to this config.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            };
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Set one key, rejecting unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KNOWN_KEYS.iter().any(|(k, _)| *k == key) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get_str(&self, key: &str) -> &str {
        self.entries
            .get(key)
            .unwrap_or_else(|| panic!("config key `{key}` missing from registry"))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        self.get_str(key)
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("key `{key}`: expected number")))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        self.get_str(key)
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("key `{key}`: expected non-negative integer")))
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        self.get_str(key)
            .parse::<u64>()
            .map_err(|_| Error::Config(format!("key `{key}`: expected non-negative integer")))
    }

    pub fn get_bool(&self, key: &str) -> Result<bool> {
        match self.get_str(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(Error::Config(format!(
                "key `{key}`: expected true/false, got `{other}`"
            ))),
        }
    }

    /// Comma-separated list getter.
    pub fn get_list(&self, key: &str) -> Vec<String> {
        self.get_str(key)
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect()
    }

    /// Serialize all resolved keys, sorted, as parseable config text.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Write the resolved snapshot to a file.
    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_cover_every_key() {
        let cfg = Config::default();
        for (k, v) in KNOWN_KEYS {
            assert_eq!(cfg.get_str(k), *v);
        }
    }

    #[test]
    fn parse_overrides_and_comments() {
        let cfg = Config::from_text(
            "# a comment\n sim.dt = 0.002  # inline\n\nobs.resolution=64\n",
        )
        .unwrap();
        assert_eq!(cfg.get_f64("sim.dt").unwrap(), 0.002);
        assert_eq!(cfg.get_usize("obs.resolution").unwrap(), 64);
        assert_eq!(cfg.get_usize("env.max_steps").unwrap(), 20);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = Config::from_text("sim.tdt = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn malformed_line_rejected() {
        assert!(Config::from_text("just words\n").is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = Config::default();
        cfg.set("train.steps", "7").unwrap();
        let text = cfg.to_text();
        let back = Config::from_text(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
