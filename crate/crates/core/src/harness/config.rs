//! JSON run configuration. Every section is optional; missing sections fall
//! back to defaults.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::geometry::Track;
use crate::perception::{Backend, Prediction, RegressorModel};
use crate::render::SceneConfig;
use crate::sim::EpisodeConfig;

use super::dagger::DaggerConfig;
use super::experiment::ExperimentSpec;
use super::scenes::SceneSampler;

pub const CONFIG_VERSION: u32 = 1;

/// A bundled layout by name, or an inline one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TrackSource {
    Named(String),
    Inline(Track),
}

impl Default for TrackSource {
    fn default() -> Self {
        TrackSource::Named("canonical".into())
    }
}

impl TrackSource {
    pub fn load(&self) -> Result<Track> {
        let track = match self {
            TrackSource::Named(n) if n == "canonical" => Track::canonical(),
            TrackSource::Named(n) if n == "small" => Track::small(),
            TrackSource::Named(n) => return Err(config(format!("unknown track '{n}' (expected canonical or small)"))),
            TrackSource::Inline(t) => t.clone(),
        };
        track.validate().map_err(|e| config(e.to_string()))?;
        Ok(track)
    }
}

/// Perception backend selection.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerceptionSpec {
    #[default]
    Oracle,
    Noisy {
        sigma_x: f64,
        sigma_v: f64,
    },
    Constant {
        prediction: Prediction,
    },
    /// A model checkpoint; relative paths resolve against the config file.
    Learned {
        checkpoint: String,
    },
}

impl PerceptionSpec {
    pub fn backend(&self, base_dir: &Path) -> Result<Backend> {
        Ok(match self {
            PerceptionSpec::Oracle => Backend::Oracle,
            PerceptionSpec::Noisy { sigma_x, sigma_v } => {
                if !(*sigma_x >= 0.0 && *sigma_v >= 0.0) {
                    return Err(config("noise sigmas must be non-negative"));
                }
                Backend::Noisy {
                    sigma_x: *sigma_x,
                    sigma_v: *sigma_v,
                }
            }
            PerceptionSpec::Constant { prediction } => Backend::Constant(*prediction),
            PerceptionSpec::Learned { checkpoint } => {
                let path = base_dir.join(checkpoint);
                let file = File::open(&path).map_err(|e| config(format!("{}: {e}", path.display())))?;
                Backend::Learned(Box::new(RegressorModel::read_checkpoint(BufReader::new(file))?))
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub track: TrackSource,
    #[serde(default)]
    pub episode: EpisodeConfig,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub perception: PerceptionSpec,
    #[serde(default)]
    pub scenes: Option<SceneSampler>,
    #[serde(default)]
    pub regressor: Option<crate::perception::RegressorConfig>,
    #[serde(default)]
    pub dagger: Option<DaggerConfig>,
    #[serde(default)]
    pub experiment: Option<ExperimentSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            track: TrackSource::default(),
            episode: EpisodeConfig::default(),
            scene: SceneConfig::default(),
            perception: PerceptionSpec::default(),
            scenes: None,
            regressor: None,
            dagger: None,
            experiment: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file; every failure is a config error
    /// naming the path.
    pub fn load(path: &Path) -> Result<Self> {
        let named = |e: Error| config(format!("{}: {e}", path.display()));
        let text = std::fs::read_to_string(path).map_err(|e| named(e.into()))?;
        Self::from_json(&text).map_err(named)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let wrap = |r: Result<()>| r.map_err(|e| config(e.to_string()));
        self.track.load()?;
        wrap(self.episode.validate())?;
        wrap(self.scene.validate())?;
        if let Some(r) = &self.regressor {
            wrap(r.validate())?;
        }
        if let Some(d) = &self.dagger {
            wrap(d.validate())?;
        }
        if let Some(x) = &self.experiment {
            wrap(x.validate())?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::from_json(r#"{"version": 1}"#).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn partial_sections_merge_with_defaults() {
        let cfg = RunConfig::from_json(
            r#"{"version": 1, "track": "small", "episode": {"planner": {"v_max": 7.0}}, "perception": {"kind": "noisy", "sigma_x": 0.1, "sigma_v": 0.0}}"#,
        )
        .unwrap();
        assert_eq!(cfg.episode.planner.v_max, 7.0);
        assert_eq!(cfg.episode.planner.d_min, 2.0);
        assert_eq!(cfg.track.load().unwrap().gate_count(), 4);
        assert!(matches!(cfg.perception, PerceptionSpec::Noisy { .. }));
    }

    #[test]
    fn rejects_bad_version_and_unknown_track() {
        assert!(matches!(
            RunConfig::from_json(r#"{"version": 2}"#),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_json(r#"{"version": 1, "track": "moon"}"#),
            Err(Error::Config(_))
        ));
        assert!(matches!(RunConfig::from_json("not json"), Err(Error::Config(_))));
    }

    #[test]
    fn missing_file_error_names_the_path() {
        let err = RunConfig::load(Path::new("/nonexistent/run.json")).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("/nonexistent/run.json"));
    }
}
