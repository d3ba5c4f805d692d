//! Scene sequences for data collection and evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::render::{sample_scene, SceneConfig, SceneMode};
use crate::rng::{mix_seed, streams, RngStream};

/// Which visual factors a randomized sampler varies; the rest stay at the
/// base scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Randomization {
    pub background: bool,
    pub illumination: bool,
    pub shape: bool,
    pub texture: bool,
}

impl Randomization {
    pub const NONE: Self = Self {
        background: false,
        illumination: false,
        shape: false,
        texture: false,
    };
    pub const FULL: Self = Self {
        background: true,
        illumination: true,
        shape: true,
        texture: true,
    };

    /// Named presets: any `+`-joined subset of `background`, `illumination`,
    /// `shape`, `texture`, or `none` / `full`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "none" => return Ok(Self::NONE),
            "full" => return Ok(Self::FULL),
            _ => {}
        }
        let mut r = Self::NONE;
        for part in name.split('+') {
            match part.trim() {
                "background" => r.background = true,
                "illumination" => r.illumination = true,
                "shape" => r.shape = true,
                "texture" => r.texture = true,
                other => return Err(invalid(format!("unknown randomization factor '{other}'"))),
            }
        }
        Ok(r)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SceneSampler {
    Fixed {
        scene: SceneConfig,
    },
    Randomized {
        mode: SceneMode,
        factors: Randomization,
        #[serde(default)]
        base: SceneConfig,
        seed: u64,
    },
}

impl SceneSampler {
    pub fn fixed(scene: SceneConfig) -> Self {
        SceneSampler::Fixed { scene }
    }

    pub fn randomized(mode: SceneMode, factors: Randomization, seed: u64) -> Self {
        SceneSampler::Randomized {
            mode,
            factors,
            base: SceneConfig::default(),
            seed,
        }
    }

    /// The `index`-th scene; a pure function of the sampler and `index`.
    pub fn scene(&self, index: u64) -> SceneConfig {
        match self {
            SceneSampler::Fixed { scene } => scene.clone(),
            SceneSampler::Randomized {
                mode,
                factors,
                base,
                seed,
            } => {
                let mut rng = RngStream::new(mix_seed(*seed, index), streams::SCENE);
                let drawn = sample_scene(&mut rng, *mode);
                let mut s = base.clone();
                if factors.background {
                    s.background_texture_id = drawn.background_texture_id;
                    s.floor_texture_id = drawn.floor_texture_id;
                }
                if factors.illumination {
                    s.background = drawn.background;
                    s.floor = drawn.floor;
                    s.gates = drawn.gates;
                }
                if factors.shape {
                    s.gate_shape_id = drawn.gate_shape_id;
                }
                if factors.texture {
                    s.gate_texture_id = drawn.gate_texture_id;
                }
                s
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::{TEST_GATE_SHAPE, TRAIN_GATE_SHAPES};

    #[test]
    fn presets_parse() {
        assert_eq!(Randomization::preset("full").unwrap(), Randomization::FULL);
        let r = Randomization::preset("background+shape").unwrap();
        assert!(r.background && r.shape && !r.texture && !r.illumination);
        assert!(Randomization::preset("fog").is_err());
    }

    #[test]
    fn fixed_sampler_repeats_its_scene() {
        let s = SceneSampler::fixed(SceneConfig::default());
        assert_eq!(s.scene(0), s.scene(17));
    }

    #[test]
    fn randomized_sampler_is_deterministic_and_varies() {
        let s = SceneSampler::randomized(SceneMode::Train, Randomization::FULL, 9);
        assert_eq!(s.scene(3), s.scene(3));
        assert_ne!(s.scene(3), s.scene(4));
        for i in 0..50 {
            assert!(TRAIN_GATE_SHAPES.contains(&s.scene(i).gate_shape_id));
        }
        let t = SceneSampler::randomized(SceneMode::Test, Randomization::FULL, 9);
        assert!((0..20).all(|i| t.scene(i).gate_shape_id == TEST_GATE_SHAPE));
    }

    #[test]
    fn partial_randomization_keeps_other_factors() {
        let s = SceneSampler::randomized(SceneMode::Train, Randomization::preset("illumination").unwrap(), 2);
        let base = SceneConfig::default();
        for i in 0..20 {
            let sc = s.scene(i);
            assert_eq!(sc.background_texture_id, base.background_texture_id);
            assert_eq!(sc.gate_shape_id, base.gate_shape_id);
            assert_eq!(sc.gate_texture_id, base.gate_texture_id);
        }
        assert_ne!(s.scene(0).gates, s.scene(1).gates);
    }
}
