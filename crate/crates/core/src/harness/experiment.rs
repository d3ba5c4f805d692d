//! Parameter sweeps over closed-loop episodes, summarized as CSV rows.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::Track;
use crate::perception::{Backend, Perception, RegressorConfig, RegressorModel};
use crate::render::SceneMode;
use crate::rng::{streams, RngStream};
use crate::sim::{completion_for, run_episode, vio_baseline_episode, Course, DriftModel, EpisodeConfig, EpisodeTrace};

use super::dagger::{dagger_collect, DaggerConfig};
use super::dataset::Dataset;
use super::scenes::{Randomization, SceneSampler};

pub const CSV_HEADER: &str = "point,axis_value,runs,mean_completion,std_completion,mean_best_lap_s";

fn default_runs() -> usize {
    10
}

/// What flies the episodes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum System {
    /// Perception, planner and controller.
    #[default]
    Pipeline,
    /// Time-indexed tracking of the global trajectory on drifting odometry.
    DriftBaseline { sigma_per_meter: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", rename_all = "snake_case")]
pub enum Sweep {
    Speed {
        speeds: Vec<f64>,
    },
    /// Completion recomputed from the same traces for each lap threshold.
    Threshold {
        v_max: f64,
        thresholds: Vec<u32>,
    },
    Dynamic {
        v_max: f64,
        multipliers: Vec<f64>,
    },
    /// Grid of `d_min` and `d_max = d_min + offset`.
    PlanningLength {
        v_max: f64,
        d_min: Vec<f64>,
        d_max_offsets: Vec<f64>,
    },
    /// Trains one model per loss weight on the experiment dataset.
    Gamma {
        v_max: f64,
        values: Vec<f64>,
        epochs: usize,
    },
    /// Trains one model per capacity factor on the experiment dataset.
    Capacity {
        v_max: f64,
        factors: Vec<f64>,
        epochs: usize,
    },
    /// Collects and trains one model per randomization preset, then flies
    /// held-out scenes.
    Randomization {
        v_max: f64,
        presets: Vec<String>,
        dagger: DaggerConfig,
    },
}

impl Sweep {
    fn point_count(&self) -> usize {
        match self {
            Sweep::Speed { speeds } => speeds.len(),
            Sweep::Threshold { thresholds, .. } => thresholds.len(),
            Sweep::Dynamic { multipliers, .. } => multipliers.len(),
            Sweep::PlanningLength {
                d_min, d_max_offsets, ..
            } => d_min.len() * d_max_offsets.len(),
            Sweep::Gamma { values, .. } => values.len(),
            Sweep::Capacity { factors, .. } => factors.len(),
            Sweep::Randomization { presets, .. } => presets.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub id: String,
    pub sweep: Sweep,
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Episode seeds; defaults to `0..runs`.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub system: System,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(invalid("runs must be at least 1"));
        }
        if self.sweep.point_count() == 0 {
            return Err(invalid("sweep has no points"));
        }
        if !self.seeds.is_empty() && self.seeds.len() != self.runs {
            return Err(invalid("seeds must list one seed per run"));
        }
        if let Sweep::Threshold { thresholds, .. } = &self.sweep {
            if thresholds.contains(&0) {
                return Err(invalid("lap thresholds must be at least 1"));
            }
        }
        if let Sweep::Randomization { presets, dagger, .. } = &self.sweep {
            for p in presets {
                Randomization::preset(p)?;
            }
            dagger.validate()?;
        }
        if let System::DriftBaseline { sigma_per_meter } = self.system {
            if !(sigma_per_meter >= 0.0) {
                return Err(invalid("drift sigma must be non-negative"));
            }
        }
        Ok(())
    }

    fn seed(&self, run: usize) -> u64 {
        self.seeds.get(run).copied().unwrap_or(run as u64)
    }
}

/// Everything a sweep needs besides its own axis.
#[derive(Clone, Debug)]
pub struct ExperimentEnv {
    pub track: Track,
    pub episode: EpisodeConfig,
    /// Scene of run `r` is `scenes.scene(r)`.
    pub scenes: SceneSampler,
    pub backend: Backend,
    /// Training set for the gamma and capacity sweeps.
    pub dataset: Option<Dataset>,
    pub regressor: RegressorConfig,
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub point: String,
    pub axis_value: f64,
    /// Episodes that ran to an outcome; failed runs are left out.
    pub runs: usize,
    pub mean_completion: f64,
    pub std_completion: f64,
    pub mean_best_lap_s: f64,
}

impl Row {
    fn from_results(point: String, axis_value: f64, results: &[(f64, Option<f64>)]) -> Self {
        let n = results.len() as f64;
        let mean = results.iter().map(|r| r.0).sum::<f64>() / n;
        let var = results.iter().map(|r| (r.0 - mean).powi(2)).sum::<f64>() / n;
        let laps: Vec<f64> = results.iter().filter_map(|r| r.1).collect();
        Self {
            point,
            axis_value,
            runs: results.len(),
            mean_completion: if results.is_empty() { f64::NAN } else { mean },
            std_completion: if results.is_empty() { f64::NAN } else { var.sqrt() },
            mean_best_lap_s: if laps.is_empty() {
                f64::NAN
            } else {
                laps.iter().sum::<f64>() / laps.len() as f64
            },
        }
    }
}

pub fn write_csv(rows: &[Row], mut w: impl Write) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.point, r.axis_value, r.runs, r.mean_completion, r.std_completion, r.mean_best_lap_s
        )?;
    }
    Ok(())
}

/// Thread pool capped by `GRACER_THREADS` (all cores when unset).
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var("GRACER_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .map_err(|_| crate::error::config(format!("GRACER_THREADS must be a count, got '{v}'")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(e.to_string()))
}

struct Point {
    label: String,
    axis_value: f64,
    cfg: EpisodeConfig,
}

fn fly(
    course: &Course,
    env: &ExperimentEnv,
    cfg: &EpisodeConfig,
    system: &System,
    backend: &Backend,
    run: usize,
    seed: u64,
) -> Result<EpisodeTrace> {
    match system {
        System::Pipeline => {
            let mut p = Perception::new(backend.clone(), seed);
            run_episode(course, &env.scenes.scene(run as u64), &mut p, cfg, seed)
        }
        System::DriftBaseline { sigma_per_meter } => {
            let mut drift = DriftModel::new(*sigma_per_meter, seed)?;
            vio_baseline_episode(course, &mut drift, cfg)
        }
    }
}

/// Flies `runs` episodes per configuration; errors are dropped per run.
fn fly_points(
    spec: &ExperimentSpec,
    env: &ExperimentEnv,
    points: &[Point],
    backends: &[Backend],
) -> Result<Vec<Vec<EpisodeTrace>>> {
    let courses = points
        .iter()
        .map(|p| Course::new(env.track.clone(), &p.cfg))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..spec.runs).map(move |r| (p, r)))
        .collect();
    let traces: Vec<Option<EpisodeTrace>> = thread_pool()?.install(|| {
        jobs.par_iter()
            .map(|&(p, r)| {
                fly(
                    &courses[p],
                    env,
                    &points[p].cfg,
                    &spec.system,
                    &backends[p],
                    r,
                    spec.seed(r),
                )
                .ok()
            })
            .collect()
    });
    let mut out: Vec<Vec<EpisodeTrace>> = (0..points.len()).map(|_| Vec::new()).collect();
    for ((p, _), t) in jobs.into_iter().zip(traces) {
        if let Some(t) = t {
            out[p].push(t);
        }
    }
    Ok(out)
}

fn summarize(points: &[Point], traces: &[Vec<EpisodeTrace>]) -> Vec<Row> {
    points
        .iter()
        .zip(traces)
        .map(|(p, ts)| {
            let results: Vec<_> = ts.iter().map(|t| (t.completion(), t.best_lap())).collect();
            Row::from_results(p.label.clone(), p.axis_value, &results)
        })
        .collect()
}

fn with_speed(base: &EpisodeConfig, v_max: f64) -> EpisodeConfig {
    let mut cfg = base.clone();
    cfg.planner.v_max = v_max;
    cfg
}

fn train_offline(cfg: RegressorConfig, dataset: &Dataset, epochs: usize, seed: u64) -> Result<RegressorModel> {
    if dataset.is_empty() {
        return Err(invalid("training sweep needs a non-empty dataset"));
    }
    let mut model = RegressorModel::new(cfg, seed)?;
    let pairs = dataset.pairs();
    let mut rng = RngStream::new(seed, streams::SHUFFLE);
    for _ in 0..epochs {
        model.train_epoch(&pairs, &mut rng)?;
    }
    Ok(model)
}

/// Runs a sweep and returns one row per point, in sweep order.
pub fn run_experiment(spec: &ExperimentSpec, env: &ExperimentEnv) -> Result<Vec<Row>> {
    spec.validate()?;
    let single = |label: String, axis_value: f64, cfg: EpisodeConfig| Point { label, axis_value, cfg };
    let same_backend = |n: usize| vec![env.backend.clone(); n];
    match &spec.sweep {
        Sweep::Speed { speeds } => {
            let points: Vec<_> = speeds
                .iter()
                .map(|&v| single(format!("v_max={v}"), v, with_speed(&env.episode, v)))
                .collect();
            let traces = fly_points(spec, env, &points, &same_backend(points.len()))?;
            Ok(summarize(&points, &traces))
        }
        Sweep::Dynamic { v_max, multipliers } => {
            let points: Vec<_> = multipliers
                .iter()
                .map(|&m| {
                    let mut cfg = with_speed(&env.episode, *v_max);
                    cfg.gate_motion_multiplier = m;
                    single(format!("amplitude={m}"), m, cfg)
                })
                .collect();
            let traces = fly_points(spec, env, &points, &same_backend(points.len()))?;
            Ok(summarize(&points, &traces))
        }
        Sweep::PlanningLength {
            v_max,
            d_min,
            d_max_offsets,
        } => {
            let mut points = Vec::new();
            for &lo in d_min {
                for &off in d_max_offsets {
                    let mut cfg = with_speed(&env.episode, *v_max);
                    cfg.planner.d_min = lo;
                    cfg.planner.d_max = lo + off;
                    points.push(single(format!("d_min={lo} d_max={}", lo + off), lo + off, cfg));
                }
            }
            let traces = fly_points(spec, env, &points, &same_backend(points.len()))?;
            Ok(summarize(&points, &traces))
        }
        Sweep::Threshold { v_max, thresholds } => {
            let point = single(String::new(), f64::NAN, with_speed(&env.episode, *v_max));
            let traces = fly_points(spec, env, std::slice::from_ref(&point), &same_backend(1))?.remove(0);
            Ok(thresholds
                .iter()
                .map(|&laps| {
                    let results: Vec<_> = traces
                        .iter()
                        .map(|t| (completion_for(t.gates_passed, t.gate_count, laps), t.best_lap()))
                        .collect();
                    Row::from_results(format!("laps={laps}"), laps as f64, &results)
                })
                .collect())
        }
        Sweep::Gamma { v_max, values, epochs } => {
            let dataset = env
                .dataset
                .as_ref()
                .ok_or_else(|| invalid("gamma sweep needs a dataset"))?;
            let cfgs: Vec<_> = values
                .iter()
                .map(|&g| RegressorConfig {
                    gamma: g,
                    ..env.regressor.clone()
                })
                .collect();
            learned_sweep(spec, env, *v_max, cfgs, values, "gamma", |c| {
                train_offline(c, dataset, *epochs, spec.seed(0))
            })
        }
        Sweep::Capacity { v_max, factors, epochs } => {
            let dataset = env
                .dataset
                .as_ref()
                .ok_or_else(|| invalid("capacity sweep needs a dataset"))?;
            let cfgs: Vec<_> = factors
                .iter()
                .map(|&f| RegressorConfig {
                    capacity_factor: f,
                    ..env.regressor.clone()
                })
                .collect();
            learned_sweep(spec, env, *v_max, cfgs, factors, "capacity", |c| {
                train_offline(c, dataset, *epochs, spec.seed(0))
            })
        }
        Sweep::Randomization { v_max, presets, dagger } => {
            let cfg = with_speed(&env.episode, *v_max);
            let course = Course::new(env.track.clone(), &cfg)?;
            let mut backends = Vec::new();
            let mut points = Vec::new();
            for (i, name) in presets.iter().enumerate() {
                let factors = Randomization::preset(name)?;
                let sampler = match factors {
                    Randomization::NONE => SceneSampler::fixed(Default::default()),
                    f => SceneSampler::randomized(SceneMode::Train, f, spec.seed(0)),
                };
                let mut model = RegressorModel::new(env.regressor.clone(), spec.seed(0))?;
                dagger_collect(&course, &cfg, &sampler, &mut model, dagger, spec.seed(0))?;
                backends.push(Backend::Learned(Box::new(model)));
                points.push(single(format!("randomization={name}"), i as f64, cfg.clone()));
            }
            let traces = fly_points(spec, env, &points, &backends)?;
            Ok(summarize(&points, &traces))
        }
    }
}

fn learned_sweep(
    spec: &ExperimentSpec,
    env: &ExperimentEnv,
    v_max: f64,
    cfgs: Vec<RegressorConfig>,
    values: &[f64],
    name: &str,
    train: impl Fn(RegressorConfig) -> Result<RegressorModel> + Sync,
) -> Result<Vec<Row>> {
    let models: Vec<Result<RegressorModel>> = thread_pool()?.install(|| cfgs.into_par_iter().map(&train).collect());
    let backends = models
        .into_iter()
        .map(|m| m.map(|m| Backend::Learned(Box::new(m))))
        .collect::<Result<Vec<_>>>()?;
    let cfg = with_speed(&env.episode, v_max);
    let points: Vec<_> = values
        .iter()
        .map(|&v| Point {
            label: format!("{name}={v}"),
            axis_value: v,
            cfg: cfg.clone(),
        })
        .collect();
    let traces = fly_points(spec, env, &points, &backends)?;
    Ok(summarize(&points, &traces))
}

/// Root-mean-square of the concatenated `(x, y, v)` residuals of `model` on
/// each dataset.
pub fn ablation_rmse(model: &RegressorModel, datasets: &[&Dataset]) -> Result<Vec<f64>> {
    datasets
        .iter()
        .map(|ds| {
            if ds.is_empty() {
                return Err(invalid("ablation dataset is empty"));
            }
            let rasters: Vec<_> = ds.samples.iter().map(|s| &s.raster).collect();
            let preds = model.predict_batch(&rasters)?;
            let sq: f64 = preds
                .iter()
                .zip(&ds.samples)
                .map(|(p, s)| (p.x - s.x_g).norm_squared() + (p.v - s.v_g).powi(2))
                .sum();
            Ok((sq / (3 * ds.len()) as f64).sqrt())
        })
        .collect()
}

/// Seven log-spaced loss weights over `[1e-4, 1e2]`.
pub fn gamma_grid() -> Vec<f64> {
    (0..7).map(|i| 10f64.powf(-4.0 + i as f64)).collect()
}
