//! Properties of contrastive pretraining on a small synthetic dataset.

use std::sync::OnceLock;

use ndarray::Array2;
use scfa_core::encoder::images_to_tensor;
use scfa_core::frame_pipeline::{aggregate_view, FrameSequence};
use scfa_core::training::{metrics_csv, prepare_dataset, TrainOutcome};
use scfa_core::{generate_videos, train_contrastive, Error, Model, SynthConfig, TrainConfig};

fn config() -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        epochs: 50,
        ..TrainConfig::default()
    }
}

fn dataset() -> &'static Vec<FrameSequence> {
    static DATA: OnceLock<Vec<FrameSequence>> = OnceLock::new();
    DATA.get_or_init(|| {
        let synth = SynthConfig {
            videos_per_class: 8,
            ..SynthConfig::default()
        };
        prepare_dataset(
            &generate_videos(&synth).unwrap(),
            &config().layout().unwrap(),
        )
        .unwrap()
    })
}

struct Run {
    outcome: TrainOutcome,
    dir: tempfile::TempDir,
}

fn trained() -> &'static Run {
    static RUN: OnceLock<Run> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let outcome = train_contrastive(dataset(), 4, &config(), Some(dir.path())).unwrap();
        Run { outcome, dir }
    })
}

#[test]
fn loss_decreases_over_fifty_epochs() {
    let h = &trained().outcome.history;
    assert_eq!(h.len(), 50);
    assert!(
        h[49].mean_loss < h[0].mean_loss,
        "first {} last {}",
        h[0].mean_loss,
        h[49].mean_loss
    );
    assert!(h
        .iter()
        .all(|r| r.mean_loss.is_finite() && r.mean_loss >= 0.0));
}

/// Mean within-class minus mean cross-class cosine similarity of projections.
fn class_similarity_gap(model: &Model, cfg: &TrainConfig) -> f64 {
    let videos = dataset();
    let (layout, plan) = (cfg.layout().unwrap(), cfg.plan());
    let images: Vec<_> = videos
        .iter()
        .enumerate()
        .map(|(i, v)| {
            aggregate_view(v, &plan, &layout, 9_000 + i as u64)
                .unwrap()
                .pixels
        })
        .collect();
    let refs: Vec<_> = images.iter().collect();
    let z = model
        .forward(&images_to_tensor(&refs, &cfg.preprocess()).unwrap(), false)
        .unwrap()
        .embeddings;
    let sim: Array2<f64> = z.dot(&z.t());
    let (mut within, mut nw, mut across, mut na) = (0.0, 0, 0.0, 0);
    for i in 0..videos.len() {
        for j in 0..videos.len() {
            if i == j {
                continue;
            }
            if videos[i].label == videos[j].label {
                within += sim[[i, j]];
                nw += 1;
            } else {
                across += sim[[i, j]];
                na += 1;
            }
        }
    }
    within / nw as f64 - across / na as f64
}

#[test]
fn training_separates_classes_in_embedding_space() {
    let cfg = config();
    let initial = Model::new(cfg.encoder_config(4), cfg.seed).unwrap();
    let before = class_similarity_gap(&initial, &cfg);
    let after = class_similarity_gap(&trained().outcome.model, &cfg);
    assert!(after > before, "gap before {before}, after {after}");
}

#[test]
fn sibling_views_align_more_than_different_classes() {
    let cfg = config();
    let videos = dataset();
    let (layout, plan) = (cfg.layout().unwrap(), cfg.plan());
    let embed = |offset: u64| {
        let images: Vec<_> = videos
            .iter()
            .enumerate()
            .map(|(i, v)| aggregate_view(v, &plan, &layout, offset + i as u64).unwrap().pixels)
            .collect();
        let refs: Vec<_> = images.iter().collect();
        let x = images_to_tensor(&refs, &cfg.preprocess()).unwrap();
        trained().outcome.model.forward(&x, false).unwrap().embeddings
    };
    let (a, b) = (embed(20_000), embed(30_000));
    let sim: Array2<f64> = a.dot(&b.t());
    let n = videos.len();
    let sibling = (0..n).map(|i| sim[[i, i]]).sum::<f64>() / n as f64;
    let (mut other, mut count) = (0.0, 0);
    for i in 0..n {
        for j in 0..n {
            if videos[i].label != videos[j].label {
                other += sim[[i, j]];
                count += 1;
            }
        }
    }
    let other = other / count as f64;
    assert!(sibling > other, "sibling {sibling}, different-label {other}");
}

#[test]
fn artifacts_are_written_and_consistent() {
    let run = trained();
    let dir = run.dir.path();
    let metrics = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    assert_eq!(metrics, metrics_csv(&run.outcome.history));
    assert_eq!(metrics.lines().next(), Some("epoch,mean_loss,lr"));
    assert_eq!(metrics.lines().count(), 51);
    assert_eq!(
        std::fs::read_to_string(dir.join("timing.csv"))
            .unwrap()
            .lines()
            .count(),
        51
    );
    assert_eq!(
        std::fs::read_to_string(dir.join("config.txt")).unwrap(),
        config().to_kv()
    );

    let final_model = Model::load(&dir.join("final.ckpt"), 32, 32).unwrap();
    assert_eq!(final_model.params, run.outcome.model.params);
    let best = Model::load(&dir.join("best.ckpt"), 32, 32).unwrap();
    assert_eq!(best.params, run.outcome.best);
    let min = run
        .outcome
        .history
        .iter()
        .map(|r| r.mean_loss)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(run.outcome.history[run.outcome.best_epoch].mean_loss, min);

    // the schedule starts at lr_max and anneals downwards
    let lrs: Vec<f64> = run.outcome.history.iter().map(|r| r.lr).collect();
    assert_eq!(lrs[0], config().lr_max);
    assert!(lrs.windows(2).all(|p| p[1] <= p[0]));
}

#[test]
fn identical_configs_reproduce_bit_for_bit() {
    let cfg = TrainConfig {
        epochs: 3,
        ..config()
    };
    let a = train_contrastive(dataset(), 4, &cfg, None).unwrap();
    let b = train_contrastive(dataset(), 4, &cfg, None).unwrap();
    assert_eq!(a.history, b.history);
    let bits = |o: &TrainOutcome| {
        o.model
            .params
            .tensors()
            .iter()
            .flat_map(|t| t.data.iter().map(|v| v.to_bits()))
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
    let c = train_contrastive(dataset(), 4, &TrainConfig { seed: 1, ..cfg }, None).unwrap();
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn huge_temperature_gives_uniform_similarity_loss() {
    // one batch holding every video: with all similarities ~equal, each anchor
    // of class c scores -log((2 n_c - 1) / (2 N - 1))
    let videos = dataset();
    let n = videos.len();
    let cfg = TrainConfig {
        tau: 1e4,
        epochs: 1,
        batch_size: n,
        ..config()
    };
    let outcome = train_contrastive(videos, 4, &cfg, None).unwrap();
    let mut expected = 0.0;
    for v in videos {
        let same = videos.iter().filter(|u| u.label == v.label).count();
        expected += 2.0 * ((2 * n - 1) as f64 / (2 * same - 1) as f64).ln();
    }
    expected /= (2 * n) as f64;
    let got = outcome.history[0].mean_loss;
    assert!(
        (got - expected).abs() < 1e-3,
        "loss {got}, uniform value {expected}"
    );
}

#[test]
fn degenerate_batches_are_rejected() {
    let cfg = TrainConfig {
        batch_size: 1,
        ..config()
    };
    assert!(matches!(
        train_contrastive(dataset(), 4, &cfg, None),
        Err(Error::Config(_))
    ));
    let one = &dataset()[..1];
    assert!(train_contrastive(one, 4, &config(), None).is_err());
}

#[test]
fn divergence_aborts_with_diagnostic() {
    let cfg = TrainConfig {
        lr_max: 1e300,
        lr_min: 1e300,
        epochs: 3,
        ..config()
    };
    match train_contrastive(dataset(), 4, &cfg, None) {
        Err(Error::NonFiniteLoss { epoch, step, .. }) => assert!(epoch < 3 && step < 2),
        other => panic!("expected a non-finite loss error, got {other:?}"),
    }
}
