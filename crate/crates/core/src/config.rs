//! Run configuration: one TOML document holding every tunable.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::BinScheme;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::metrics::MatchConfig;
use crate::provider::{ClassicalParams, ProviderConfig, ProviderKind};
use crate::raster::RasterConfig;
use crate::synth::SynthConfig;
use crate::tracer::TraceConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderSettings {
    pub kind: ProviderKind,
    /// Directory of feature grids for the file provider.
    pub path: Option<PathBuf>,
    pub history_weight: f64,
    pub classical: ClassicalParams,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        let base = ProviderConfig::default();
        ProviderSettings {
            kind: ProviderKind::Classical,
            path: None,
            history_weight: base.history_weight,
            classical: base.classical,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for every random draw; replaces `synth.rng_seed`.
    pub rng_seed: u64,
    pub bins: BinScheme,
    pub loss: LossWeights,
    pub trace: TraceConfig,
    pub matching: MatchConfig,
    pub raster: RasterConfig,
    pub synth: SynthConfig,
    pub provider: ProviderSettings,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.trace.validate()?;
        self.matching.validate()?;
        self.raster.validate()?;
        self.synth_config().validate()?;
        let h = self.provider.history_weight;
        if !(0.0..=1.0).contains(&h) {
            return Err(Error::Config(format!("provider.history_weight = {h} not in [0, 1]")));
        }
        let c = &self.provider.classical;
        if !(c.sigma_s >= 0.0 && c.boundary_sigma >= 0.0 && c.radius_offset >= 0.0) {
            return Err(Error::Config("classical smoothing and offset must be >= 0".into()));
        }
        if !(c.foreground_fraction > 0.0 && c.foreground_fraction < 1.0) {
            return Err(Error::Config(format!(
                "classical.foreground_fraction = {} not in (0, 1)",
                c.foreground_fraction
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::load(path, msg),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            rng_seed: self.rng_seed,
            ..self.synth.clone()
        }
    }

    pub fn provider_config(&self) -> ProviderConfig {
        ProviderConfig {
            bins: self.bins,
            history_weight: self.provider.history_weight,
            classical: self.provider.classical,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.loss.lambda_r, 100.0);
        assert_eq!(cfg.trace.boundary_threshold, 0.5);
        assert_eq!(cfg.bins.bins(), 5);
    }

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::default();
        cfg.rng_seed = 42;
        cfg.trace.history_len = 7;
        cfg.provider.kind = ProviderKind::File;
        cfg.provider.path = Some(PathBuf::from("features"));
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(cfg.synth_config().rng_seed, 42);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(RunConfig::from_toml("nonsense = 1").is_err());
        assert!(RunConfig::from_toml("[trace]\nmystery = 2").is_err());
        assert!(RunConfig::from_toml("[trace]\nboundary_threshold = 1.5").is_err());
        assert!(RunConfig::from_toml("bins = 0").is_err());
        assert!(RunConfig::from_toml("[loss]\nw_c = 1.0").is_err());
        let partial = RunConfig::from_toml("rng_seed = 9\n[matching]\nmatch_distance = 3.0").unwrap();
        assert_eq!(partial.matching.match_distance, 3.0);
        assert_eq!(partial.matching.resample_spacing, 1.0);
    }
}
