//! Margin-gated dataset aggregation: the learner flies while it stays near
//! the global trajectory, the expert takes over (and labels) otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::perception::{Prediction, RegressorModel};
use crate::rng::{mix_seed, streams, RngStream};
use crate::sim::{Course, EpisodeConfig, Flight, Outcome};

use super::dataset::{Dataset, Sample};
use super::scenes::SceneSampler;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DaggerConfig {
    /// Margin around the global trajectory within which the learner acts, m.
    pub epsilon_init: f64,
    pub epsilon_increment: f64,
    /// Simulated flight time per round, s.
    pub round_duration: f64,
    pub epochs_per_round: usize,
    /// A lap flown with fewer expert actions than this widens the margin.
    pub promotion_threshold: usize,
    pub target_dataset_size: usize,
    /// Hard stop on the number of rounds.
    pub max_rounds: usize,
    /// Stop as soon as the learner flies a whole lap without the expert.
    pub stop_when_unaided: bool,
}

impl Default for DaggerConfig {
    fn default() -> Self {
        Self {
            epsilon_init: 0.5,
            epsilon_increment: 0.5,
            round_duration: 40.0,
            epochs_per_round: 10,
            promotion_threshold: 50,
            target_dataset_size: 20_000,
            max_rounds: 200,
            stop_when_unaided: true,
        }
    }
}

impl DaggerConfig {
    pub fn validate(&self) -> Result<()> {
        let reals = [self.epsilon_init, self.epsilon_increment, self.round_duration];
        if reals.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(invalid("dagger margins and round duration must be positive"));
        }
        if self.epochs_per_round == 0
            || self.promotion_threshold == 0
            || self.target_dataset_size == 0
            || self.max_rounds == 0
        {
            return Err(invalid("dagger counts must be positive"));
        }
        Ok(())
    }
}

/// Who acted on a perception tick.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Actor {
    Expert,
    Learner,
}

/// The arbitration rule: the expert acts in the first round and whenever
/// the vehicle is farther than `epsilon` from the global trajectory.
pub fn arbitrate(round: usize, deviation: f64, epsilon: f64) -> Actor {
    if round == 0 || deviation > epsilon {
        Actor::Expert
    } else {
        Actor::Learner
    }
}

/// A completed lap promotes the learner when the expert acted fewer than
/// `promotion_threshold` times during it.
pub fn lap_promotes(expert_actions: usize, dcfg: &DaggerConfig) -> bool {
    expert_actions < dcfg.promotion_threshold
}

/// Margin for the next round.
pub fn next_epsilon(epsilon: f64, promoted: bool, dcfg: &DaggerConfig) -> f64 {
    if promoted {
        epsilon + dcfg.epsilon_increment
    } else {
        epsilon
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub round: usize,
    /// Margin in force during the round.
    pub epsilon: f64,
    pub expert_actions: usize,
    pub learner_actions: usize,
    pub samples_added: usize,
    pub dataset_size: usize,
    pub crashes: usize,
    pub laps: usize,
    /// Laps flown with fewer than `promotion_threshold` expert actions.
    pub promoted_laps: usize,
    pub unaided_laps: usize,
    pub train_loss: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetSize,
    Unaided,
    MaxRounds,
}

#[derive(Clone, Debug)]
pub struct DaggerOutcome {
    pub dataset: Dataset,
    pub rounds: Vec<RoundStats>,
    pub stop: StopReason,
}

/// Collects a dataset while training `model` on it after every round.
///
/// Crashes and timeouts restart the flight from the track start; the round
/// continues until `round_duration` seconds have been flown. Scenes come
/// from `scenes`, one per flight.
pub fn dagger_collect(
    course: &Course,
    cfg: &EpisodeConfig,
    scenes: &SceneSampler,
    model: &mut RegressorModel,
    dcfg: &DaggerConfig,
    seed: u64,
) -> Result<DaggerOutcome> {
    dcfg.validate()?;
    cfg.validate()?;
    let (w, h) = (cfg.camera.image_width, cfg.camera.image_height);
    if model.config().input_width != w || model.config().input_height != h {
        return Err(invalid("model input does not match the camera resolution"));
    }
    let mut dataset = Dataset::new(w, h);
    let mut rounds = Vec::new();
    let mut epsilon = dcfg.epsilon_init;
    let mut shuffle = RngStream::new(seed, streams::SHUFFLE);
    let mut flights = 0u64;

    for round in 0..dcfg.max_rounds {
        let mut stats = RoundStats {
            round,
            epsilon,
            expert_actions: 0,
            learner_actions: 0,
            samples_added: 0,
            dataset_size: 0,
            crashes: 0,
            laps: 0,
            promoted_laps: 0,
            unaided_laps: 0,
            train_loss: f64::NAN,
        };
        let mut flown = 0.0;
        while flown < dcfg.round_duration {
            let scene = scenes.scene(flights);
            let scene_id = scene.scene_id();
            let mut flight = Flight::new(course, cfg, scene, mix_seed(seed, flights))?;
            flights += 1;
            let mut lap_expert = 0usize;
            let mut laps = 0usize;
            loop {
                if flight.perception_due() {
                    let expert = flight.expert_output()?;
                    let state = flight.state().clone();
                    let pred = match arbitrate(round, expert.deviation(&state), epsilon) {
                        Actor::Expert => {
                            stats.expert_actions += 1;
                            lap_expert += 1;
                            if expert.label.valid {
                                dataset.push(Sample::new(flight.render(), &expert.label, &state, scene_id))?;
                                stats.samples_added += 1;
                                Some(Prediction::from_label(&expert.label))
                            } else {
                                None
                            }
                        }
                        Actor::Learner => {
                            stats.learner_actions += 1;
                            Some(model.predict(&flight.render())?)
                        }
                    };
                    flight.replan(pred)?;
                }
                let outcome = flight.advance();
                let lap_count = flight.progress().lap_times.len();
                if lap_count > laps {
                    laps = lap_count;
                    stats.laps += 1;
                    if round > 0 && lap_promotes(lap_expert, dcfg) {
                        stats.promoted_laps += 1;
                    }
                    if round > 0 && lap_expert == 0 {
                        stats.unaided_laps += 1;
                    }
                    lap_expert = 0;
                }
                let t = flight.state().t;
                if flown + t >= dcfg.round_duration {
                    flown += t;
                    break;
                }
                if let Some(o) = outcome {
                    if o != Outcome::Completed {
                        stats.crashes += 1;
                    }
                    flown += t;
                    break;
                }
            }
        }
        if !dataset.is_empty() {
            let pairs = dataset.pairs();
            for _ in 0..dcfg.epochs_per_round {
                stats.train_loss = model.train_epoch(&pairs, &mut shuffle)?;
            }
        }
        epsilon = next_epsilon(epsilon, stats.promoted_laps > 0, dcfg);
        stats.dataset_size = dataset.len();
        let unaided = stats.unaided_laps > 0;
        rounds.push(stats);
        if dataset.len() >= dcfg.target_dataset_size {
            return Ok(DaggerOutcome {
                dataset,
                rounds,
                stop: StopReason::TargetSize,
            });
        }
        if unaided && dcfg.stop_when_unaided {
            return Ok(DaggerOutcome {
                dataset,
                rounds,
                stop: StopReason::Unaided,
            });
        }
    }
    Ok(DaggerOutcome {
        dataset,
        rounds,
        stop: StopReason::MaxRounds,
    })
}
