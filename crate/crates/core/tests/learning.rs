//! Properties that only show up after training: the learned spread follows
//! the label ambiguity, the prior does not collapse, the model's own variance
//! scores better than a mismatched one, and checkpoints replay exactly.

use glenet::glenet::{
    infer_uncertainty, nll_from_predictions, train, GlenetModel, KlForm, ModelConfig, PreparedSample,
    TrainConfig,
};
use glenet::nn::checkpoint;
use glenet::rng;
use glenet::synth::{generate_scene_objects, ObjectSample, SynthConfig};
use glenet::Box3;
use rand::Rng;

const POINTS: usize = 64;
const T_L: usize = 4;

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// A car seen square from behind: only the rear face returns points, so the
/// same 8x8 grid is annotated with lengths drawn uniformly from `range`.
fn rear_face_family(range: [f64; 2], n: usize, seed: u64) -> Vec<ObjectSample> {
    let (rear, w, h) = (10.0, 1.6, 1.5);
    let points: Vec<[f64; 3]> = (0..8)
        .flat_map(|i| (0..8).map(move |j| [rear, -w / 2.0 + w * i as f64 / 7.0, h * j as f64 / 7.0]))
        .collect();
    let mut rng = rng::seeded(seed);
    (0..n)
        .map(|k| {
            let l = rng.random_range(range[0]..=range[1]);
            ObjectSample {
                points: points.clone(),
                bbox: Box3::new(rear + l / 2.0, 0.0, h / 2.0, w, l, h, 0.0).unwrap(),
                occlusion_fraction: 0.0,
                distance: rear + l / 2.0,
                seed: k as u64,
                original_points: points.len(),
            }
        })
        .collect()
}

fn fixed_cloud_train() -> TrainConfig {
    TrainConfig {
        epochs: 60,
        gamma: 1e-3,
        kl_form: KlForm::Printed,
        standard_augment: false,
        occlusion_augment: false,
        ..TrainConfig::default()
    }
}

#[test]
fn length_variance_grows_with_label_range() {
    let ranges = [[3.9, 4.1], [3.6, 4.4], [3.2, 4.8]];
    let mc = ModelConfig { num_points: POINTS, backbone_channels: vec![32, 64, 128], ..ModelConfig::default() };
    let learned: Vec<f64> = std::thread::scope(|s| {
        let handles: Vec<_> = ranges
            .iter()
            .enumerate()
            .map(|(i, range)| {
                let mc = mc.clone();
                s.spawn(move || {
                    let data = rear_face_family(*range, 160, 40 + i as u64);
                    let mut model = GlenetModel::new(mc.clone(), &mut rng::seeded(3)).unwrap();
                    train(&mut model, &data, &fixed_cloud_train()).unwrap();
                    let mut r = rng::seeded(8);
                    let p = PreparedSample::new(&data[0], &mc, &mut r).unwrap();
                    let draws: f64 = (0..10)
                        .map(|_| infer_uncertainty(&model, &p.cloud, 30, &mut r).unwrap().variance[T_L])
                        .sum();
                    draws / 10.0
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert!(
        learned.windows(2).all(|w| w[0] < w[1]),
        "t_l variance not rank-ordered by label range: {learned:?}"
    );
}

struct Trained {
    config: ModelConfig,
    model: GlenetModel,
    held_out: Vec<ObjectSample>,
}

fn one_to_many_model() -> Trained {
    let config = ModelConfig { num_points: POINTS, ..ModelConfig::default() };
    let train_set = generate_scene_objects(&SynthConfig { num_objects: 240, ..SynthConfig::default() }, 21).unwrap();
    let held_out = generate_scene_objects(&SynthConfig { num_objects: 120, ..SynthConfig::default() }, 22).unwrap();
    let mut model = GlenetModel::new(config.clone(), &mut rng::seeded(1)).unwrap();
    let tc = TrainConfig { epochs: 50, gamma: 1e-3, ..TrainConfig::default() };
    train(&mut model, &train_set, &tc).unwrap();
    Trained { config, model, held_out }
}

#[test]
fn trained_model_properties() {
    let t = one_to_many_model();
    let mut rng = rng::seeded(5);
    let mut prepared = Vec::new();
    let mut estimates = Vec::new();
    for o in &t.held_out {
        let p = PreparedSample::new(o, &t.config, &mut rng).unwrap();
        estimates.push(infer_uncertainty(&t.model, &p.cloud, 30, &mut rng).unwrap());
        prepared.push(p);
    }

    // posterior-collapse guard: the prior still widens on ambiguous inputs
    let mean_sigma = |i: usize| estimates[i].prior_sigma.iter().sum::<f64>() / estimates[i].prior_sigma.len() as f64;
    let mut occluded: Vec<f64> = (0..t.held_out.len()).filter(|&i| t.held_out[i].occlusion_fraction > 0.5).map(mean_sigma).collect();
    let mut complete: Vec<f64> = (0..t.held_out.len()).filter(|&i| t.held_out[i].occlusion_fraction == 0.0).map(mean_sigma).collect();
    assert!(occluded.len() >= 5 && complete.len() >= 5, "split too thin: {} / {}", occluded.len(), complete.len());
    let (mo, mc) = (median(&mut occluded), median(&mut complete));
    assert!(mo > mc, "median prior sigma occluded {mo} vs complete {mc}");

    // own variance versus the next object's variance on the same predictions
    let n = estimates.len();
    let (mut matched, mut shifted) = (0.0, 0.0);
    for i in 0..n {
        let target = prepared[i].encoding.offsets();
        let preds: Vec<Vec<f64>> = estimates[i].offsets.iter().map(|o| o.to_vec()).collect();
        matched += nll_from_predictions(&target, &preds, &estimates[i].variance).unwrap().0;
        shifted += nll_from_predictions(&target, &preds, &estimates[(i + 1) % n].variance).unwrap().0;
    }
    assert!(matched < shifted, "matched NLL {} not below mismatched {}", matched / n as f64, shifted / n as f64);
}

#[test]
fn checkpoint_replays_inference_bit_for_bit() {
    let config = ModelConfig { num_points: 32, backbone_channels: vec![16, 32], ..ModelConfig::default() };
    let data = generate_scene_objects(&SynthConfig { num_objects: 40, ..SynthConfig::default() }, 4).unwrap();
    let mut model = GlenetModel::new(config.clone(), &mut rng::seeded(2)).unwrap();
    train(&mut model, &data, &TrainConfig { epochs: 2, ..TrainConfig::default() }).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&path, &model.store, serde_json::json!({ "epoch": 2 })).unwrap();
    let (_, params) = checkpoint::load(&path).unwrap();
    let restored = GlenetModel::from_params(config.clone(), &params).unwrap();

    for o in data.iter().take(5) {
        let p = PreparedSample::new(o, &config, &mut rng::seeded(o.seed)).unwrap();
        let a = infer_uncertainty(&model, &p.cloud, 8, &mut rng::seeded(7)).unwrap();
        let b = infer_uncertainty(&restored, &p.cloud, 8, &mut rng::seeded(7)).unwrap();
        let bits = |v: &[[f64; 7]]| v.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.offsets), bits(&b.offsets));
        assert_eq!(a.variance.map(f64::to_bits), b.variance.map(f64::to_bits));
        assert_eq!(a.prior_sigma.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.prior_sigma.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }
}
