use gracer::camera::CameraModel;
use gracer::expert::Label;
use gracer::geometry::{QuadState, Track, Vec3};
use gracer::harness::{
    ablation_rmse, dagger_collect, run_experiment, write_csv, DaggerConfig, Dataset, ExperimentEnv, ExperimentSpec,
    Sample, SceneSampler, StopReason, Sweep, System,
};
use gracer::perception::{Backend, RegressorConfig, RegressorModel};
use gracer::render::{Raster, SceneConfig};
use gracer::rng::RngStream;
use gracer::sim::{Course, EpisodeConfig};
use nalgebra::Vector2;

fn tiny_episode() -> EpisodeConfig {
    let mut cfg = EpisodeConfig::with_speed(5.0);
    cfg.camera = CameraModel::with_resolution(16, 12);
    cfg.record_ticks = false;
    cfg
}

fn tiny_regressor() -> RegressorConfig {
    RegressorConfig {
        hidden_widths_base: vec![16, 8],
        ..RegressorConfig::with_input(16, 12)
    }
}

fn random_raster(rng: &mut RngStream, w: u32, h: u32) -> Raster {
    let pixels = (0..w * h * 3).map(|_| (rng.next_u64() & 0xff) as u8).collect();
    Raster::from_pixels(w, h, pixels).unwrap()
}

fn dataset_with_labels(labels: &[Label], seed: u64) -> Dataset {
    let mut rng = RngStream::new(seed, 0);
    let mut ds = Dataset::new(16, 12);
    let state = QuadState::at_rest(Vec3::new(0.0, 0.0, 2.0), 0.0);
    for (i, l) in labels.iter().enumerate() {
        ds.push(Sample::new(random_raster(&mut rng, 16, 12), l, &state, i as u64))
            .unwrap();
    }
    ds
}

fn label(x: f64, y: f64, v: f64) -> Label {
    Label {
        x_g: Vector2::new(x, y),
        v_g: v,
        valid: true,
    }
}

#[test]
fn dagger_rounds_respect_their_invariants() {
    let cfg = tiny_episode();
    let course = Course::new(Track::small(), &cfg).unwrap();
    let mut model = RegressorModel::new(tiny_regressor(), 1).unwrap();
    let dcfg = DaggerConfig {
        round_duration: 4.0,
        epochs_per_round: 2,
        target_dataset_size: 400,
        max_rounds: 12,
        ..DaggerConfig::default()
    };
    let scenes = SceneSampler::fixed(SceneConfig::default());
    let out = dagger_collect(&course, &cfg, &scenes, &mut model, &dcfg, 3).unwrap();
    let rounds = &out.rounds;
    assert!(!rounds.is_empty());
    assert_eq!(rounds[0].learner_actions, 0, "first round is expert only");
    for w in rounds.windows(2) {
        assert!(w[1].epsilon >= w[0].epsilon);
        assert!(w[1].dataset_size >= w[0].dataset_size);
    }
    let mut total = 0;
    for r in rounds {
        // Samples are only recorded on expert-controlled ticks.
        assert!(r.samples_added <= r.expert_actions);
        total += r.samples_added;
        assert_eq!(r.dataset_size, total);
    }
    assert_eq!(out.dataset.len(), total);
    if out.stop == StopReason::TargetSize {
        assert!(out.dataset.len() >= dcfg.target_dataset_size);
    }
}

#[test]
fn dagger_is_deterministic() {
    let cfg = tiny_episode();
    let course = Course::new(Track::small(), &cfg).unwrap();
    let dcfg = DaggerConfig {
        round_duration: 2.0,
        epochs_per_round: 1,
        target_dataset_size: 150,
        ..DaggerConfig::default()
    };
    let scenes = SceneSampler::fixed(SceneConfig::default());
    let run = || {
        let mut model = RegressorModel::new(tiny_regressor(), 2).unwrap();
        let out = dagger_collect(&course, &cfg, &scenes, &mut model, &dcfg, 9).unwrap();
        let mut bytes = Vec::new();
        out.dataset.write(&mut bytes).unwrap();
        (bytes, model.params())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0, b.0);
    assert!(a.1.iter().zip(&b.1).all(|(x, y)| x.to_bits() == y.to_bits()));
}

fn speed_env() -> ExperimentEnv {
    ExperimentEnv {
        track: Track::small(),
        episode: tiny_episode(),
        scenes: SceneSampler::fixed(SceneConfig::default()),
        backend: Backend::Oracle,
        dataset: None,
        regressor: tiny_regressor(),
    }
}

fn speed_spec() -> ExperimentSpec {
    ExperimentSpec {
        id: "speed".into(),
        sweep: Sweep::Speed {
            speeds: vec![4.0, 5.0, 6.0],
        },
        runs: 3,
        seeds: Vec::new(),
        system: System::Pipeline,
    }
}

#[test]
fn experiment_has_one_row_per_point_with_all_runs() {
    let rows = run_experiment(&speed_spec(), &speed_env()).unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert_eq!(r.runs, 3);
        assert!((0.0..=1.0).contains(&r.mean_completion));
        assert!(r.std_completion >= 0.0);
    }
}

#[test]
fn experiment_csv_is_byte_identical_across_runs() {
    let csv = || {
        let rows = run_experiment(&speed_spec(), &speed_env()).unwrap();
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        buf
    };
    assert_eq!(csv(), csv());
}

#[test]
fn rmse_of_a_perfect_model_is_zero() {
    let model = RegressorModel::new(tiny_regressor(), 4).unwrap();
    let mut rng = RngStream::new(1, 0);
    let mut ds = Dataset::new(16, 12);
    let state = QuadState::at_rest(Vec3::zeros(), 0.0);
    let rasters: Vec<_> = (0..20).map(|_| random_raster(&mut rng, 16, 12)).collect();
    let preds = model.predict_batch(&rasters.iter().collect::<Vec<_>>()).unwrap();
    for (i, (raster, p)) in rasters.into_iter().zip(preds).enumerate() {
        ds.push(Sample::new(raster, &label(p.x[0], p.x[1], p.v), &state, i as u64))
            .unwrap();
    }
    assert_eq!(ablation_rmse(&model, &[&ds]).unwrap(), vec![0.0]);
}

#[test]
fn rmse_of_a_constant_model_is_the_label_spread() {
    // All-zero parameters predict x = (0, 0) and v = 0.5 for every input.
    let mut model = RegressorModel::new(tiny_regressor(), 4).unwrap();
    let zeros = vec![0.0; model.param_count()];
    model.set_params(&zeros).unwrap();
    let labels = [
        label(0.3, -0.6, 0.9),
        label(-0.3, 0.6, 0.1),
        label(0.8, 0.2, 0.7),
        label(-0.8, -0.2, 0.3),
    ];
    let ds = dataset_with_labels(&labels, 5);
    // Residuals about the constant prediction; their population std is the
    // root mean square since the centred residuals have zero mean here.
    let residuals: Vec<f64> = labels.iter().flat_map(|l| [l.x_g[0], l.x_g[1], l.v_g - 0.5]).collect();
    let n = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / n;
    assert!(mean.abs() < 1e-15);
    let std = (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    let rmse = ablation_rmse(&model, &[&ds]).unwrap()[0];
    assert!((rmse - std).abs() < 1e-9, "{rmse} vs {std}");
}

#[test]
fn rmse_is_invariant_to_record_order() {
    let model = RegressorModel::new(tiny_regressor(), 6).unwrap();
    let labels: Vec<_> = (0..12)
        .map(|i| label(0.1 * i as f64 - 0.6, 0.05 * i as f64, 0.08 * i as f64))
        .collect();
    let ds = dataset_with_labels(&labels, 7);
    let mut reversed = ds.clone();
    reversed.samples.reverse();
    let mut rotated = ds.clone();
    rotated.samples.rotate_left(5);
    let r = ablation_rmse(&model, &[&ds, &reversed, &rotated]).unwrap();
    assert!((r[0] - r[1]).abs() < 1e-12 && (r[0] - r[2]).abs() < 1e-12);
}

#[test]
fn rmse_rejects_an_empty_dataset() {
    let model = RegressorModel::new(tiny_regressor(), 6).unwrap();
    assert!(ablation_rmse(&model, &[&Dataset::new(16, 12)]).is_err());
}

#[test]
fn dataset_file_round_trip_is_bit_exact() {
    let labels: Vec<_> = (0..5)
        .map(|i| label(0.2 * i as f64 - 0.4, -0.1, 0.2 * i as f64))
        .collect();
    let ds = dataset_with_labels(&labels, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("set.grds");
    ds.write(std::fs::File::create(&path).unwrap()).unwrap();
    let back = Dataset::read(std::fs::File::open(&path).unwrap()).unwrap();
    assert_eq!(back, ds);
}
