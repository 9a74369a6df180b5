use densal_core::geoembed::distance;
use densal_core::model::{
    predict_uncertainty, train, train_ensemble_with_seeds, LabelledPatch, Mlp, ModelSpec, Normalizer, TrainConfig,
    TrainedModel, UncertaintyMode,
};
use densal_core::raster::{generate_synthetic_scene, GeoTransform, RasterGrid, SceneParams, SyntheticScene, CLASS_BARE};

fn scene(seed: u64, with_plantation: bool) -> SyntheticScene {
    let gt = GeoTransform::new(seed as f64 * 1000.0, 0.0, 10.0).unwrap();
    let mut p = SceneParams::simple(40, 40, gt);
    if !with_plantation {
        p.plantations.clear();
    }
    generate_synthetic_scene(seed, &p).unwrap()
}

fn patch(s: &SyntheticScene) -> LabelledPatch {
    LabelledPatch::new(s.image.clone(), s.density.clone()).unwrap()
}

fn small_spec() -> ModelSpec {
    ModelSpec { hidden: vec![24, 16], ..ModelSpec::default() }
}

fn quick_cfg(seed: u64) -> TrainConfig {
    TrainConfig { learning_rate: 3e-3, batch_size: 64, epochs: 6, seed, samples_per_epoch: Some(3000), final_lr_fraction: 1.0 }
}

fn trained(seed: u64) -> TrainedModel {
    let data: Vec<LabelledPatch> = (0..4).map(|i| patch(&scene(100 + i, i % 3 != 2))).collect();
    train(&data, &small_spec(), &quick_cfg(seed)).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn zero_labels_train_to_near_zero_density() {
    let data: Vec<LabelledPatch> = (0..3)
        .map(|i| {
            let s = scene(i, true);
            let zero = RasterGrid::zeros(40, 40, 1, *s.image.geotransform()).unwrap();
            LabelledPatch::new(s.image, zero).unwrap()
        })
        .collect();
    let model = train(&data, &small_spec(), &quick_cfg(1)).unwrap();
    let held_out = scene(50, true);
    let (density, prob) = model.predict(&held_out.image).unwrap();
    assert!(mean(density.band(0)).abs() <= 0.05, "mean density {}", mean(density.band(0)));
    assert!(prob.band(0).iter().all(|p| (0.0..=1.0).contains(p)));
}

#[test]
fn untrained_zero_head_predicts_zero_on_zero_input() {
    let spec = ModelSpec::default();
    let model = TrainedModel {
        mlp: Mlp::with_zero_heads(&spec, 3).unwrap(),
        normalizer: Normalizer::identity(spec.bands),
        loss_history: vec![],
    };
    let zeros = RasterGrid::zeros(6, 6, spec.bands, GeoTransform::new(0.0, 0.0, 10.0).unwrap()).unwrap();
    let (density, prob) = model.predict(&zeros).unwrap();
    assert!(density.band(0).iter().all(|&d| d == 0.0));
    assert!(prob.band(0).iter().all(|&p| p == 0.5));
}

#[test]
fn plantation_scores_above_bare_ground() {
    let model = trained(2);
    let planted = scene(70, true);
    let bare = scene(71, false);
    let (dp, _) = model.predict(&planted.image).unwrap();
    let (db, _) = model.predict(&bare.image).unwrap();
    let planted_mean = mean(dp.band(0));
    let bare_mean = mean(db.band(0));
    assert!(planted_mean > bare_mean + 0.1, "{planted_mean} vs {bare_mean}");
}

#[test]
fn eval_mode_is_deterministic_and_embedding_has_spec_width() {
    let model = trained(3);
    let s = scene(80, true);
    assert_eq!(model.predict(&s.image).unwrap(), model.predict(&s.image).unwrap());
    let e1 = model.embed(&s.image).unwrap();
    let e2 = model.embed(&s.image).unwrap();
    assert_eq!(distance(&e1, &e2), 0.0);
    assert_eq!(e1.len(), 16);

    let spec = ModelSpec::default();
    let wide = TrainedModel { mlp: Mlp::new(&spec, 0).unwrap(), normalizer: Normalizer::identity(4), loss_history: vec![] };
    assert_eq!(wide.embed(&s.image).unwrap().len(), 64);
}

#[test]
fn band_mismatch_is_rejected() {
    let model = trained(4);
    let grid = RasterGrid::zeros(8, 8, 3, GeoTransform::new(0.0, 0.0, 10.0).unwrap()).unwrap();
    assert!(model.predict(&grid).is_err());
    assert!(model.embed(&grid).is_err());
}

#[test]
fn embeddings_separate_plantation_from_bare_windows() {
    let model = trained(5);
    let mut planted = Vec::new();
    let mut bare = Vec::new();
    let mut seed = 200;
    while planted.len() < 100 || bare.len() < 100 {
        let s = scene(seed, true);
        seed += 1;
        let w = s.image.width();
        for r in (0..s.image.height() - 5).step_by(5) {
            for c in (0..w - 5).step_by(5) {
                let win = s.image.window(r, c, 5, 5).unwrap();
                let all_bare = (r..r + 5).all(|rr| (c..c + 5).all(|cc| s.classes[rr * w + cc] == CLASS_BARE));
                let dens: f64 = (r..r + 5).flat_map(|rr| (c..c + 5).map(move |cc| (rr, cc))).map(|(rr, cc)| s.density.get(0, rr, cc)).sum();
                if dens > 25.0 && planted.len() < 100 {
                    planted.push(model.embed(&win).unwrap());
                } else if dens == 0.0 && all_bare && bare.len() < 100 {
                    bare.push(model.embed(&win).unwrap());
                }
            }
        }
    }
    let mut intra = Vec::new();
    for set in [&planted, &bare] {
        for i in 0..set.len() {
            for j in i + 1..set.len() {
                intra.push(distance(&set[i], &set[j]));
            }
        }
    }
    let inter: Vec<f64> = planted.iter().zip(&bare).map(|(a, b)| distance(a, b)).collect();
    let wins = inter.iter().filter(|&&d| d > mean(&intra)).count();
    assert!(mean(&inter) > mean(&intra), "inter {} intra {}", mean(&inter), mean(&intra));
    assert!(wins >= 90, "only {wins} of 100 cross-class pairs exceed the intra-class mean");
}

#[test]
fn training_loss_decreases_in_most_seeded_runs() {
    let data: Vec<LabelledPatch> = (0..3).map(|i| patch(&scene(300 + i, true))).collect();
    let runs = 20;
    let mut monotone = 0;
    for seed in 0..runs {
        let cfg = TrainConfig { learning_rate: 1e-3, batch_size: 128, epochs: 5, seed, samples_per_epoch: None, final_lr_fraction: 1.0 };
        let m = train(&data, &small_spec(), &cfg).unwrap();
        if m.loss_history.windows(2).all(|w| w[1] <= w[0]) {
            monotone += 1;
        } else {
            eprintln!("seed {seed}: non-monotone history {:?}", m.loss_history);
        }
    }
    assert!(monotone * 10 >= runs * 9, "{monotone}/{runs} monotone runs");
}

#[test]
fn single_member_and_cloned_seeds_have_zero_variance() {
    let data: Vec<LabelledPatch> = (0..2).map(|i| patch(&scene(400 + i, true))).collect();
    let cfg = quick_cfg(9);
    let probe = scene(410, true);

    let one = train_ensemble_with_seeds(&data, &small_spec(), &cfg, &[42]).unwrap();
    let p = predict_uncertainty(&one, &probe.image, UncertaintyMode::Ensemble, 1, 0).unwrap();
    assert!(p.variance.iter().all(|&v| v == 0.0));

    let same = train_ensemble_with_seeds(&data, &small_spec(), &cfg, &[42, 42, 42]).unwrap();
    let p = predict_uncertainty(&same, &probe.image, UncertaintyMode::Ensemble, 3, 0).unwrap();
    assert!(p.variance.iter().all(|&v| v == 0.0));

    let mc = predict_uncertainty(&one, &probe.image, UncertaintyMode::McDropout, 1, 7).unwrap();
    assert!(mc.variance.iter().all(|&v| v == 0.0));
}

#[test]
fn mc_dropout_requires_dropout() {
    let data = vec![patch(&scene(500, true))];
    let spec = ModelSpec { dropout_rate: 0.0, ..small_spec() };
    let model = train(&data, &spec, &TrainConfig { epochs: 1, ..quick_cfg(0) }).unwrap();
    let probe = scene(501, true);
    assert!(predict_uncertainty(&[model.clone()], &probe.image, UncertaintyMode::McDropout, 5, 0).is_err());
    assert!(predict_uncertainty(&[model], &probe.image, UncertaintyMode::Ensemble, 2, 0).is_err());
}
