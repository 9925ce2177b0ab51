//! Run configuration: defaults, config files and command-line overrides.
//!
//! Precedence is flags, then the config file, then defaults. A config file is
//! TOML (`.toml`) or JSON; a result JSON written by `score` also works, in
//! which case its embedded `config` object is used.

use std::path::{Path, PathBuf};

use clap::Args;
use eventvad::attention::AttentionConfig;
use eventvad::boundary::{BoundaryConfig, GAUSSIAN_MAD_SCALE};
use eventvad::graph::GraphConfig;
use eventvad::pipeline::SegmentConfig;
use eventvad::scoring::ScoringOptions;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCORER_URL_ENV: &str = "EVENTVAD_SCORER_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub window: usize,
    pub seed: u64,
    pub flow_seed: u64,
    pub k: usize,
    pub iterations: usize,
    pub w: usize,
    pub mad_k: f64,
    pub mad_scale: f64,
    pub ratio_floor: f64,
    pub min_gap: usize,
    pub min_event_len: usize,
    pub fixed_threshold: Option<f64>,
    pub scorer_url: Option<String>,
    pub mock_scorer: bool,
    pub mock_fixture: Option<PathBuf>,
    pub inflight: usize,
    pub max_retries: usize,
    pub scorer_timeout_secs: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            alpha: 0.75,
            gamma: 0.6,
            window: 60,
            seed: 0,
            flow_seed: 0,
            k: 64,
            iterations: 1,
            w: 60,
            mad_k: 3.0,
            mad_scale: GAUSSIAN_MAD_SCALE,
            ratio_floor: 1e-3,
            min_gap: 30,
            min_event_len: 16,
            fixed_threshold: None,
            scorer_url: None,
            mock_scorer: false,
            mock_fixture: None,
            inflight: 4,
            max_retries: 3,
            scorer_timeout_secs: 120,
        }
    }
}

impl RunConfig {
    pub fn segment_config(&self) -> SegmentConfig {
        SegmentConfig {
            graph: GraphConfig {
                alpha: self.alpha,
                gamma: self.gamma,
                window: self.window,
            },
            attention: AttentionConfig {
                seed: self.seed,
                k: self.k,
                iterations: self.iterations,
                scale_dim: self.k,
                ..AttentionConfig::default()
            },
            boundary: BoundaryConfig {
                w: self.w,
                poly_order: 2,
                mad_k: self.mad_k,
                mad_scale: self.mad_scale,
                ratio_floor: self.ratio_floor,
                min_gap: self.min_gap,
                min_event_len: self.min_event_len,
                fixed_threshold: self.fixed_threshold,
            },
        }
    }

    pub fn scoring_options(&self) -> ScoringOptions {
        ScoringOptions {
            max_retries: self.max_retries,
            inflight: self.inflight,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.segment_config()
            .validate()
            .map_err(|e| CliError::Input(format!("invalid configuration: {e}")))?;
        if self.inflight == 0 {
            return Err(CliError::Input("inflight must be at least 1".into()));
        }
        Ok(())
    }

    /// Parses a config file. Missing keys keep their defaults.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::bad_path(path, &e.to_string()))?;
        let is_toml = path.extension().is_some_and(|e| e == "toml");
        if is_toml {
            return toml::from_str(&text)
                .map_err(|e| CliError::Input(format!("{}: {e}", path.display())));
        }
        let mut value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("{}: line {}: {e}", path.display(), e.line())))?;
        if let Some(embedded) = value.get_mut("config").filter(|_| value_is_result(&text)) {
            value = embedded.take();
        }
        serde_json::from_value(value)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }
}

fn value_is_result(text: &str) -> bool {
    serde_json::from_str::<serde_json::Value>(text)
        .map(|v| v.get("video_id").is_some() || v.get("frame_scores").is_some())
        .unwrap_or(false)
}

/// Configuration flags shared by every pipeline subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML or JSON config file (a result JSON reuses its embedded config)
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Semantic-motion fusion coefficient
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Time decay factor of the frame graph
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Largest frame distance linked in the graph
    #[arg(long)]
    pub window: Option<usize>,
    /// Seed of the attention projections
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seed of the flow projection matrix
    #[arg(long)]
    pub flow_seed: Option<u64>,
    /// Query/key projection dimension
    #[arg(long)]
    pub k: Option<usize>,
    /// Attention propagation rounds
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Smoothing window (w + 1 taps)
    #[arg(long)]
    pub w: Option<usize>,
    /// MAD multiplier of the adaptive threshold
    #[arg(long)]
    pub mad_k: Option<f64>,
    /// Scale applied to the MAD (1.4826 makes it a Gaussian sigma)
    #[arg(long)]
    pub mad_scale: Option<f64>,
    /// Relative level below which the smoothed signal counts as zero
    #[arg(long)]
    pub ratio_floor: Option<f64>,
    /// Candidates this close are merged
    #[arg(long)]
    pub min_gap: Option<usize>,
    /// Shortest allowed event
    #[arg(long)]
    pub min_event_len: Option<usize>,
    /// Use this ratio threshold instead of the adaptive one
    #[arg(long, value_name = "X")]
    pub fixed_threshold: Option<f64>,
    /// Base URL of the scorer service
    #[arg(long)]
    pub scorer_url: Option<String>,
    /// Use the built-in deterministic mock scorer
    #[arg(long)]
    pub mock_scorer: bool,
    /// JSON fixture table for the mock scorer
    #[arg(long, value_name = "PATH")]
    pub mock_fixture: Option<PathBuf>,
    /// Scorer requests allowed in flight at once
    #[arg(long)]
    pub inflight: Option<usize>,
    /// Retries after a transport failure or unparseable reply
    #[arg(long)]
    pub max_retries: Option<usize>,
    /// Worker threads for multi-video commands
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

impl ConfigArgs {
    /// Applies defaults, the config file, flags and finally the scorer URL
    /// environment fallback, then validates.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        self.resolve_with_env(std::env::var(SCORER_URL_ENV).ok())
    }

    pub fn resolve_with_env(&self, env_url: Option<String>) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { cfg.$field = v; })*
            };
        }
        take!(alpha, gamma, window, seed, flow_seed, k, iterations, w, mad_k, mad_scale);
        take!(ratio_floor, min_gap, min_event_len, inflight, max_retries);
        if self.fixed_threshold.is_some() {
            cfg.fixed_threshold = self.fixed_threshold;
        }
        if self.scorer_url.is_some() {
            cfg.scorer_url = self.scorer_url.clone();
        }
        if self.mock_scorer {
            cfg.mock_scorer = true;
        }
        if self.mock_fixture.is_some() {
            cfg.mock_fixture = self.mock_fixture.clone();
        }
        if cfg.scorer_url.is_none() && !cfg.mock_scorer {
            cfg.scorer_url = env_url.filter(|u| !u.is_empty());
        }
        if self.jobs == 0 {
            return Err(CliError::Input("--jobs must be at least 1".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_settings() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.alpha, 0.75);
        assert_eq!(cfg.gamma, 0.6);
        assert_eq!(cfg.w, 60);
        assert_eq!(cfg.mad_k, 3.0);
        assert_eq!(cfg.iterations, 1);
        assert_eq!(cfg.k, 64);
        assert_eq!(cfg.window, 60);
        assert_eq!(cfg.min_gap, 30);
        assert_eq!(cfg.min_event_len, 16);
        assert_eq!(cfg.inflight, 4);
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "gamma = 0.2\nalpha = 0.5\n").unwrap();
        let args = ConfigArgs {
            config: Some(path),
            alpha: Some(0.25),
            jobs: 1,
            ..ConfigArgs::default()
        };
        let cfg = args.resolve_with_env(None).unwrap();
        assert_eq!((cfg.alpha, cfg.gamma, cfg.window), (0.25, 0.2, 60));
    }

    #[test]
    fn env_url_is_only_a_fallback() {
        let args = ConfigArgs {
            jobs: 1,
            ..ConfigArgs::default()
        };
        let cfg = args.resolve_with_env(Some("http://env:1".into())).unwrap();
        assert_eq!(cfg.scorer_url.as_deref(), Some("http://env:1"));
        let args = ConfigArgs {
            scorer_url: Some("http://flag:2".into()),
            jobs: 1,
            ..ConfigArgs::default()
        };
        let cfg = args.resolve_with_env(Some("http://env:1".into())).unwrap();
        assert_eq!(cfg.scorer_url.as_deref(), Some("http://flag:2"));
    }

    #[test]
    fn result_json_config_is_reused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.json");
        let cfg = RunConfig {
            gamma: 0.4,
            ..RunConfig::default()
        };
        let doc = serde_json::json!({"video_id": "v", "config": cfg, "frame_scores": []});
        std::fs::write(&path, doc.to_string()).unwrap();
        assert_eq!(RunConfig::from_file(&path).unwrap(), cfg);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let args = ConfigArgs {
            alpha: Some(1.5),
            jobs: 1,
            ..ConfigArgs::default()
        };
        assert!(matches!(
            args.resolve_with_env(None),
            Err(CliError::Input(_))
        ));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "gama = 0.2\n").unwrap();
        assert!(RunConfig::from_file(&path).is_err());
    }
}
