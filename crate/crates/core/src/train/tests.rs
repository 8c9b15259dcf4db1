use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{InputMode, ModelConfig, ParamStore, TensorKind};

fn tiny_config(seq_len: usize) -> ModelConfig {
    ModelConfig {
        n_layers: 1,
        n_heads: 2,
        dropout: 0.1,
        mlp_dim: 16,
        d_hw: 4,
        d_bw: 4,
        seq_len,
        n_classes: 4,
        input_mode: InputMode::HwBw,
        stem_channels: 4,
        wide_channels: 4,
        positions: true,
    }
}

/// Recording whose heart patches carry a class-dependent sinusoid.
fn toy_recording(n: usize, seed: u64) -> Recording {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
    let mut heart = Array2::zeros((300, n));
    let mut breath = Array2::zeros((150, n));
    for j in 0..n {
        let f = 0.02 + 0.03 * labels[j] as f64;
        for i in 0..300 {
            heart[[i, j]] = ((i as f64 * f * std::f64::consts::TAU).sin()
                + 0.3 * rng.random_range(-1.0..1.0)) as f32;
        }
        for i in 0..150 {
            breath[[i, j]] = rng.random_range(-1.0..1.0) as f32;
        }
    }
    let inputs = PatchedInputs::new(InputMode::HwBw, heart, breath).unwrap();
    Recording {
        name: format!("toy{seed}"),
        inputs,
        labels,
    }
}

#[test]
fn cross_entropy_examples() {
    let certain = array![[1.0, 0.0], [0.0, 1.0]];
    assert_eq!(
        cross_entropy(&certain, &[0, 1], &[true, true]).unwrap(),
        0.0
    );
    let uniform = Array2::from_elem((4, 3), 0.25);
    assert!((cross_entropy(&uniform, &[0, 1, 3], &[true; 3]).unwrap() - 4f64.ln()).abs() < 1e-12);
    let p = array![[0.7, 0.1], [0.3, 0.9]];
    let l = cross_entropy(&p, &[0, 0], &[true, true]).unwrap();
    assert!((l - 1.329630).abs() < 1e-6);
    assert!((l - (-(0.7f64.ln()) - 0.1f64.ln()) / 2.0).abs() < 1e-15);
    assert!(cross_entropy(&p, &[0, 0], &[false, false]).is_err());
    assert_eq!(
        cross_entropy(&p, &[0, 1], &[true, false]).unwrap(),
        -(0.7f64.ln())
    );
}

fn single_param(value: f64) -> (ParamStore<f64>, Vec<usize>) {
    let mut store = ParamStore::default();
    let id = store.add("p", TensorKind::Weight, Array2::from_elem((1, 1), value));
    (store, vec![id])
}

#[test]
fn adamw_closed_forms() {
    let (mut store, ids) = single_param(1.0);
    let mut opt = AdamW::new(
        AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        },
        1,
    );
    opt.step(&mut store, &ids, &[(0, Array2::zeros((1, 1)))])
        .unwrap();
    assert_eq!(store.value(0)[[0, 0]], 1.0);

    let (mut store, ids) = single_param(1.0);
    let mut opt = AdamW::new(
        AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        },
        1,
    );
    opt.step(&mut store, &ids, &[(0, Array2::ones((1, 1)))])
        .unwrap();
    let expected = 1.0 - 5e-4 * (1.0 / (1.0 + 1e-8));
    assert!((store.value(0)[[0, 0]] - expected).abs() < 1e-15);
    assert!((store.value(0)[[0, 0]] - 0.9995).abs() < 1e-9);

    let (mut store, ids) = single_param(1.0);
    let mut opt = AdamW::new(AdamWConfig::default(), 1);
    opt.step(&mut store, &ids, &[(0, Array2::zeros((1, 1)))])
        .unwrap();
    assert!((store.value(0)[[0, 0]] - 0.9999995).abs() < 1e-15);

    let (mut store, ids) = single_param(1.0);
    let mut opt = AdamW::new(AdamWConfig::default(), 1);
    let err = opt
        .step(
            &mut store,
            &ids,
            &[(0, Array2::from_elem((1, 1), f64::NAN))],
        )
        .unwrap_err();
    assert!(err.to_string().contains('p'));
    assert_eq!(store.value(0)[[0, 0]], 1.0);
}

#[test]
fn adam_moments_keep_parameter_shapes() {
    let mut store = ParamStore::<f64>::default();
    store.add("a", TensorKind::Weight, Array2::ones((3, 2)));
    store.add("b", TensorKind::Weight, Array2::ones((4, 1)));
    let mut opt = AdamW::new(AdamWConfig::default(), 2);
    opt.step(&mut store, &[0, 1], &[(0, Array2::ones((3, 2)))])
        .unwrap();
    assert_eq!(opt.moments(0).unwrap().0.dim(), (3, 2));
    assert_eq!(opt.moments(1).unwrap().1.dim(), (4, 1));
}

#[test]
fn gradient_clipping() {
    let mut grads = vec![(0, array![[3.0f64]]), (1, array![[4.0]])];
    assert_eq!(clip_grad_norm(&mut grads, 1.0), 5.0);
    assert!((grads[0].1[[0, 0]] - 0.6).abs() < 1e-15 && (grads[1].1[[0, 0]] - 0.8).abs() < 1e-15);
    let mut small = vec![(0, array![[0.1f64]])];
    clip_grad_norm(&mut small, 1.0);
    assert_eq!(small[0].1[[0, 0]], 0.1);
}

#[test]
fn sampling_examples() {
    assert_eq!(sample_sequences(240, 240, 10), vec![0]);
    assert_eq!(sample_sequences(260, 240, 10), vec![0, 10, 20]);
    let long = sample_sequences(1200, 240, 10);
    assert_eq!(long.len(), 97);
    assert_eq!(*long.last().unwrap(), 960);
    assert_eq!(sample_sequences(100, 240, 10), vec![0]);
}

#[test]
fn early_stopping_rule() {
    let mut s = EarlyStopping::new(3);
    let mut stopped_at = None;
    for (i, v) in [1.0, 0.9, 0.95, 0.96, 0.97, 0.5].into_iter().enumerate() {
        s.observe(i + 1, v);
        if s.should_stop() {
            stopped_at = Some(i + 1);
            break;
        }
    }
    assert_eq!(stopped_at, Some(5));
    assert_eq!(s.best_epoch, 2);

    let mut s = EarlyStopping::new(3);
    for (i, v) in [3.0, 2.0, 1.0, 0.5].into_iter().enumerate() {
        s.observe(i + 1, v);
        assert!(!s.should_stop());
    }
    assert_eq!(s.best_epoch, 4);

    // Equal losses are not improvements.
    let mut s = EarlyStopping::new(1);
    s.observe(1, 1.0);
    assert!(!s.observe(2, 1.0));
    assert!(s.should_stop());
}

#[test]
fn history_csv_round_trip() {
    let h = History {
        records: vec![
            EpochRecord {
                epoch: 1,
                train_loss: 1.25,
                val_loss: 1.5,
            },
            EpochRecord {
                epoch: 2,
                train_loss: 0.1 + 0.2,
                val_loss: 1e-9,
            },
        ],
    };
    let text = h.to_csv();
    assert!(text.starts_with("epoch,train_loss,val_loss\n"));
    assert_eq!(History::from_csv(&text).unwrap(), h);
    assert!(History::from_csv("a,b\n").is_err());
}

#[test]
fn one_step_decreases_batch_loss() {
    for seed in 0..20 {
        let mut model = Model::<f64>::new(tiny_config(4), seed).unwrap();
        let set = vec![toy_recording(8, seed + 100)];
        let lb = LabelledBatch::gather(&set, &[(0, 0), (0, 4)], 4).unwrap();
        let cfg = TrainConfig {
            lr: 1e-4,
            seq_len: 4,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg.adamw(), model.store.len());
        let before = batch_loss(&model, &lb, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let reported = train_step(
            &mut model,
            &mut opt,
            &lb,
            &cfg,
            &mut ChaCha8Rng::seed_from_u64(7),
        )
        .unwrap();
        let after = batch_loss(&model, &lb, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(before, reported);
        assert!(after < before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn training_is_deterministic_and_restores_best() {
    let train_set: Vec<Recording> = (0..3).map(|i| toy_recording(20, i)).collect();
    let val_set = vec![toy_recording(15, 50)];
    let cfg = TrainConfig {
        lr: 3e-3,
        batch_size: 4,
        seq_len: 8,
        sample_step: 4,
        max_epochs: 4,
        val_step: 4,
        seed: 11,
        ..Default::default()
    };
    let run = || {
        train(
            Model::<f32>::new(tiny_config(8), 3).unwrap(),
            &train_set,
            &val_set,
            &cfg,
        )
        .unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.history, b.history);
    assert_eq!(a.model.to_bytes(), b.model.to_bytes());
    assert!(!a.history.records.is_empty() && a.history.records.len() <= 4);
    let best = a
        .history
        .records
        .iter()
        .map(|r| r.val_loss)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(a.history.records[a.best_epoch - 1].val_loss, best);
    let restored = validation_loss(&a.model, &val_set, 4).unwrap();
    assert_eq!(restored, best);
}

#[test]
fn mismatched_sequence_length_is_rejected() {
    let set = vec![toy_recording(10, 1)];
    let cfg = TrainConfig {
        seq_len: 6,
        ..Default::default()
    };
    assert!(train(
        Model::<f32>::new(tiny_config(8), 0).unwrap(),
        &set,
        &set,
        &cfg
    )
    .is_err());
    assert!(train(
        Model::<f32>::new(tiny_config(6), 0).unwrap(),
        &set,
        &[],
        &cfg
    )
    .is_err());
}

#[test]
fn recordings_map_five_class_labels() {
    let rec = toy_recording(3, 0);
    let hyp = Hypnogram::new(vec![0, 1, 2, 3, 4], Strategy::FiveClass).unwrap();
    let r = Recording::new("x", rec.inputs.clone(), &hyp, Strategy::FourClass).unwrap();
    assert_eq!(r.labels, vec![0, 1, 1]);
    let short = Hypnogram::new(vec![0, 1], Strategy::FiveClass).unwrap();
    assert!(Recording::new("x", rec.inputs, &short, Strategy::FourClass).is_err());
}

#[test]
fn config_round_trip() {
    let cfg = TrainConfig {
        lr: 1e-3,
        batch_size: 3,
        seed: 9,
        ..Default::default()
    };
    let mut file = ConfigFile::default();
    cfg.write_config(&mut file, "train");
    assert_eq!(TrainConfig::from_config(&file, "train").unwrap(), cfg);
    file.set("train", "bogus", 1);
    assert!(TrainConfig::from_config(&file, "train").is_err());
}
