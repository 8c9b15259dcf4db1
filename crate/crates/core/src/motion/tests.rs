use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn uniform_series(w: usize, h: usize, frames: usize, mag: f32) -> FlowFieldSeries {
    let f = (vec![mag; w * h], vec![0.0; w * h]);
    FlowFieldSeries::new(w, h, FLOW_FS, vec![f; frames]).unwrap()
}

fn random_series(w: usize, h: usize, frames: usize, seed: u64) -> FlowFieldSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = |rng: &mut ChaCha8Rng| {
        (0..w * h)
            .map(|_| rng.random_range(-3.0f32..3.0))
            .collect::<Vec<_>>()
    };
    let frames = (0..frames)
        .map(|_| (plane(&mut rng), plane(&mut rng)))
        .collect();
    FlowFieldSeries::new(w, h, FLOW_FS, frames).unwrap()
}

/// Three stacked bands: H on top, B in the middle, O at the bottom.
fn band_masks(w: usize, h: usize) -> MaskSet {
    let third = h / 3;
    MaskSet::new(vec![
        RegionMask::rect("H", w, h, (0, w), (0, third)).unwrap(),
        RegionMask::rect("B", w, h, (0, w), (third, 2 * third)).unwrap(),
        RegionMask::rect("O", w, h, (0, w), (2 * third, h)).unwrap(),
    ])
    .unwrap()
}

#[test]
fn region_signal_examples() {
    let mask = RegionMask::rect("R", 10, 10, (0, 10), (0, 10)).unwrap();
    let sig = region_signals(&mut uniform_series(10, 10, 3, 2.0), &mask).unwrap();
    assert_eq!(sig.v, vec![2.0; 3]);
    assert_eq!(sig.s, vec![2.0; 3]);

    let mut u = vec![0.0; 100];
    u[37] = 3.0;
    let mut v = vec![0.0; 100];
    v[37] = 4.0;
    let mut one = FlowFieldSeries::new(10, 10, FLOW_FS, vec![(u, v)]).unwrap();
    let sig = region_signals(&mut one, &mask).unwrap();
    assert_eq!(sig.v, vec![5.0]);
    assert_eq!(sig.s, vec![5.0 / 100.0]);

    let sig = region_signals(&mut uniform_series(10, 10, 2, 0.0), &mask).unwrap();
    assert_eq!((sig.v, sig.s), (vec![0.0; 2], vec![0.0; 2]));

    assert!(RegionMask::new("E", 10, 10, vec![]).is_err());
    assert!(RegionMask::new("X", 10, 10, vec![100]).is_err());
    let other_grid = RegionMask::rect("R", 5, 5, (0, 5), (0, 5)).unwrap();
    assert!(region_signals(&mut uniform_series(10, 10, 1, 1.0), &other_grid).is_err());
}

#[test]
fn windowed_activity_examples() {
    let c = 0.7;
    let f = windowed_activity(&vec![c; 400], 4.0, 30.0).unwrap();
    assert!((f[399] - 120.0 * c).abs() < 1e-9);
    assert!((f[119] - 120.0 * c).abs() < 1e-9);
    assert!((f[118] - 119.0 * c).abs() < 1e-9);
    assert_eq!(
        windowed_activity(&[0.0; 50], 4.0, 30.0).unwrap(),
        vec![0.0; 50]
    );

    let mut spike = vec![0.0; 400];
    spike[10] = 1.0;
    let f = windowed_activity(&spike, 4.0, 30.0).unwrap();
    for (i, &x) in f.iter().enumerate() {
        let expected = if (10..130).contains(&i) { 1.0 } else { 0.0 };
        assert_eq!(x, expected, "sample {i}");
    }
    assert!(windowed_activity(&spike, 4.0, 0.0).is_err());
}

#[test]
fn time_since_threshold_examples() {
    assert_eq!(
        time_since_threshold(&[2.0; 5], 4.0, 1.0).unwrap(),
        vec![0.0; 5]
    );
    let f = time_since_threshold(&[0.0, 0.0, 5.0, 0.0, 0.0], 1.0, 1.0).unwrap();
    assert_eq!(f, vec![0.0, 1.0, 0.0, 1.0, 2.0]);
    assert_eq!(f[4], 2.0);
    let never = time_since_threshold(&[0.5; 8], 4.0, 1.0).unwrap();
    assert_eq!(never, (0..8).map(|i| i as f64 / 4.0).collect::<Vec<_>>());
    // Strictly above: equal to the threshold does not count.
    assert_eq!(
        time_since_threshold(&[1.0, 1.0], 1.0, 1.0).unwrap(),
        vec![0.0, 1.0]
    );
    assert!(time_since_threshold(&[1.0], 1.0, 0.0).is_err());
}

fn selection(f: impl FnOnce(&mut FeatureSelection)) -> FeatureSelection {
    let mut s = FeatureSelection::default();
    f(&mut s);
    s
}

#[test]
fn ablation_row_counts() {
    use Family::*;
    let cases = [
        (selection(|s| s.families = vec![]), 0),
        (selection(|s| s.families = vec![F1, F2]), 36),
        (selection(|s| s.families = vec![F3, F4]), 54),
        (FeatureSelection::default(), 90),
        (selection(|s| s.thresholds = vec![0.01]), 54),
        (selection(|s| s.thresholds = vec![0.1]), 54),
        (selection(|s| s.thresholds = vec![1.0]), 54),
        (selection(|s| s.shifts_s = vec![0.0]), 30),
        (selection(|s| s.windows_s = vec![30.0]), 72),
        (selection(|s| s.windows_s = vec![300.0]), 72),
        (
            selection(|s| s.regions = vec![vec!["H".into(), "B".into()]]),
            30,
        ),
        (
            selection(|s| s.regions = vec![vec!["H".into(), "B".into()], vec!["O".into()]]),
            60,
        ),
    ];
    let series = random_series(6, 6, 4 * 30 * 3, 1);
    let masks = band_masks(6, 6);
    for (sel, n) in cases {
        assert_eq!(sel.n_rows(), n);
        assert_eq!(sel.rows().len(), n);
        let grid = build_feature_grid(&mut series.clone(), &masks, 3, &sel).unwrap();
        assert_eq!(grid.values.dim(), (n, 3));
        assert_eq!(grid.names.len(), n);
    }
}

#[test]
fn grid_order_and_names() {
    let names = FeatureSelection::default().row_names();
    assert_eq!(names[0], "H:f1:30:-90");
    assert_eq!(names[1], "H:f1:30:0");
    assert_eq!(names[2], "H:f1:30:90");
    assert_eq!(names[3], "H:f1:300:-90");
    assert_eq!(names[6], "H:f2:30:-90");
    assert_eq!(names[12], "H:f3:0.01:-90");
    assert_eq!(names[21], "H:f4:0.01:-90");
    assert_eq!(names[29], "H:f4:1:90");
    assert_eq!(names[30], "B:f1:30:-90");
    assert_eq!(names[89], "O:f4:1:90");
    let unique: std::collections::HashSet<_> = names.iter().collect();
    assert_eq!(unique.len(), 90);
}

#[test]
fn epoch_values_come_from_the_shifted_epoch_end() {
    assert_eq!(epoch_frame(0, 0.0, 4.0, 1000), 119);
    assert_eq!(epoch_frame(2, 0.0, 4.0, 1000), 359);
    assert_eq!(epoch_frame(2, 90.0, 4.0, 1000), 719);
    assert_eq!(epoch_frame(2, -90.0, 4.0, 1000), 0);
    assert_eq!(epoch_frame(0, -90.0, 4.0, 1000), 0);
    assert_eq!(epoch_frame(5, 90.0, 4.0, 1000), 999);

    // Flow magnitude 1 in H from frame 200 on: f3 at δ = 0.5 counts the
    // seconds since the last quiet-to-moving frame.
    let (w, h, n) = (3, 3, 4 * 30 * 10);
    let frames = (0..n)
        .map(|i| {
            let m = if i >= 200 { 1.0 } else { 0.0 };
            (vec![m; w * h], vec![0.0; w * h])
        })
        .collect();
    let mut series = FlowFieldSeries::new(w, h, FLOW_FS, frames).unwrap();
    let masks = band_masks(w, h);
    let sel = FeatureSelection {
        families: vec![Family::F1, Family::F3],
        regions: vec![vec!["H".into()]],
        windows_s: vec![30.0],
        thresholds: vec![0.5],
        shifts_s: vec![0.0, 90.0],
    };
    let grid = build_feature_grid(&mut series, &masks, 10, &sel).unwrap();
    // f1 rows: window sum of the 120 frames ending at the epoch end.
    assert_eq!(grid.values[[0, 0]], 0.0);
    assert_eq!(grid.values[[0, 1]], 40.0);
    assert_eq!(grid.values[[0, 2]], 120.0);
    // Shifted by 90 s = 3 epochs, clamped at the last epoch.
    assert_eq!(grid.values[[1, 0]], 120.0);
    assert_eq!(grid.values[[1, 9]], grid.values[[0, 9]]);
    // f3: never exceeded before frame 200, then always exceeded.
    assert_eq!(grid.values[[2, 0]], 119.0 / 4.0);
    assert_eq!(grid.values[[2, 1]], 0.0);
}

#[test]
fn grid_rejects_bad_inputs() {
    let series = random_series(6, 6, 4 * 75, 3);
    let masks = band_masks(6, 6);
    let sel = FeatureSelection::default();
    assert!(build_feature_grid(&mut series.clone(), &masks, 3, &sel).is_ok());
    assert!(build_feature_grid(&mut series.clone(), &masks, 4, &sel).is_err());
    let missing = selection(|s| s.regions = vec![vec!["X".into()]]);
    assert!(build_feature_grid(&mut series.clone(), &masks, 2, &missing).is_err());
    let a = RegionMask::rect("H", 6, 6, (0, 3), (0, 3)).unwrap();
    let b = RegionMask::rect("B", 6, 6, (2, 6), (2, 6)).unwrap();
    assert!(MaskSet::new(vec![a.clone(), b]).is_err());
    assert!(MaskSet::new(vec![a.clone(), a]).is_err());
}

#[test]
fn homography_examples() {
    let pts = vec![(0.0, 0.0), (1.5, -2.0), (10.0, 7.25)];
    assert_eq!(homography_warp(&pts, &Homography::IDENTITY).unwrap(), pts);
    let moved = homography_warp(&pts, &Homography::translation(3.0, -2.0)).unwrap();
    for (p, q) in pts.iter().zip(&moved) {
        assert_eq!((q.0, q.1), (p.0 + 3.0, p.1 - 2.0));
    }
    let doubled = homography_warp(&pts, &Homography::scale(2.0)).unwrap();
    for (p, q) in pts.iter().zip(&doubled) {
        assert_eq!((q.0, q.1), (2.0 * p.0, 2.0 * p.1));
    }
    let proj = Homography([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]]);
    assert!(homography_warp(&[(0.0, 1.0)], &proj).is_err());
    assert!(Homography([[0.0; 3]; 3]).inverse().is_err());
}

#[test]
fn homography_inverse_round_trips() {
    let h = Homography([[1.2, 0.1, 3.0], [-0.2, 0.9, 1.0], [0.001, 0.002, 1.0]]);
    let inv = h.inverse().unwrap();
    let id = h.compose(&inv);
    for i in 0..3 {
        for j in 0..3 {
            assert!((id.0[i][j] - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
        }
    }
    let (x, y) = h.apply(4.0, 5.0).unwrap();
    let (bx, by) = inv.apply(x, y).unwrap();
    assert!((bx - 4.0).abs() < 1e-12 && (by - 5.0).abs() < 1e-12);
}

#[test]
fn mask_warp_translates_pixels() {
    let m = RegionMask::rect("B", 10, 10, (1, 3), (2, 4)).unwrap();
    let moved = warp_mask(&m, &Homography::translation(4.0, 5.0), 10, 10).unwrap();
    assert_eq!(
        moved,
        RegionMask::rect("B", 10, 10, (5, 7), (7, 9)).unwrap()
    );
    let same = warp_mask(&m, &Homography::IDENTITY, 10, 10).unwrap();
    assert_eq!(same, m);
    assert!(warp_mask(&m, &Homography::translation(50.0, 0.0), 10, 10).is_err());
}

#[test]
fn flow_formats_round_trip() {
    let series = random_series(5, 4, 9, 7);
    let bytes = series.to_bytes();
    let back = FlowFieldSeries::from_bytes(&bytes).unwrap();
    assert_eq!(back, series);
    assert_eq!(back.to_bytes(), bytes);
    assert!(FlowFieldSeries::from_bytes(&bytes[..bytes.len() - 1]).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flow.bin");
    write_flow(&path, &mut series.clone()).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    let mut file = FlowFile::open(&path).unwrap();
    assert_eq!(FlowFieldSeries::collect(&mut file).unwrap(), series);
    // Random access seeks.
    let mut u = vec![0.0; 20];
    let mut v = vec![0.0; 20];
    file.read_frame(3, &mut u, &mut v).unwrap();
    assert_eq!((u, v), series.frames[3]);
    assert!(file.read_frame(9, &mut [0.0; 20], &mut [0.0; 20]).is_err());

    let mut nan = series.clone();
    nan.frames[2].1[0] = f32::NAN;
    std::fs::write(&path, nan.to_bytes()).unwrap();
    assert!(FlowFieldSeries::collect(&mut FlowFile::open(&path).unwrap()).is_err());
    assert!(FlowFieldSeries::from_bytes(&nan.to_bytes()).is_err());
}

#[test]
fn mask_files_round_trip() {
    let masks = band_masks(7, 6);
    for m in &masks.regions {
        let bytes = m.to_bytes();
        let back = RegionMask::from_bytes(&bytes).unwrap();
        assert_eq!(&back, m);
        assert_eq!(back.to_bytes(), bytes);
    }
    let odd = RegionMask::new("odd", 4, 4, vec![0, 1, 5, 15]).unwrap();
    assert_eq!(odd.runs(), vec![0, 2, 3, 1, 9, 1]);
    assert_eq!(
        RegionMask::from_runs("odd", 4, 4, &odd.runs()).unwrap(),
        odd
    );

    let dir = tempfile::tempdir().unwrap();
    let reordered = MaskSet::new(vec![
        masks.get("O").unwrap().clone(),
        masks.get("H").unwrap().clone(),
        masks.get("B").unwrap().clone(),
    ])
    .unwrap();
    reordered.save_dir(dir.path()).unwrap();
    assert_eq!(MaskSet::load_dir(dir.path()).unwrap(), masks);
}

#[test]
fn grid_csv_round_trips() {
    let series = random_series(6, 6, 4 * 30 * 4, 9);
    let grid = build_feature_grid(
        &mut series.clone(),
        &band_masks(6, 6),
        4,
        &FeatureSelection::default(),
    )
    .unwrap();
    let text = grid.to_csv();
    assert!(text.starts_with("epoch,H:f1:30:-90,"));
    let back = MotionGrid::from_csv(&text).unwrap();
    assert_eq!(back, grid);
    assert_eq!(back.to_csv(), text);

    let empty = MotionGrid {
        names: vec![],
        values: ndarray::Array2::zeros((0, 3)),
    };
    assert_eq!(MotionGrid::from_csv(&empty.to_csv()).unwrap(), empty);

    let names = vec!["O:f4:1:90".to_string(), "H:f1:30:-90".to_string()];
    let sub = grid.select(&names).unwrap();
    assert_eq!(sub.values.row(0), grid.values.row(89));
    assert!(grid.select(&["nope".to_string()]).is_err());
}

#[test]
fn selection_config_round_trip() {
    let sel = FeatureSelection {
        families: vec![Family::F3, Family::F1],
        regions: vec![vec!["H".into(), "B".into()], vec!["O".into()]],
        windows_s: vec![30.0],
        thresholds: vec![0.01, 1.0],
        shifts_s: vec![0.0],
    };
    let mut cfg = crate::config::ConfigFile::default();
    sel.write_config(&mut cfg, "motion");
    assert_eq!(FeatureSelection::from_config(&cfg, "motion").unwrap(), sel);
    cfg.set("motion", "families", "");
    assert!(FeatureSelection::from_config(&cfg, "motion")
        .unwrap()
        .families
        .is_empty());
    cfg.set("motion", "windows", "0");
    assert!(FeatureSelection::from_config(&cfg, "motion").is_err());
}

fn brute_window(sig: &[f64], k: usize, i: usize) -> f64 {
    let mut acc = 0.0;
    for j in (0..=i).rev().take(k) {
        acc += sig[j];
    }
    acc
}

fn brute_elapsed(sig: &[f64], fs: f64, delta: f64, i: usize) -> f64 {
    match (0..=i).rev().find(|&j| sig[j] > delta) {
        Some(tau) => (i - tau) as f64 / fs,
        None => i as f64 / fs,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn window_sums_match_brute_force(
        sig in prop::collection::vec(0.0f64..10.0, 1..400),
        delta in prop::sample::select(vec![0.25, 1.0, 7.5, 30.0, 300.0]),
    ) {
        let f = windowed_activity(&sig, FLOW_FS, delta).unwrap();
        let k = (delta * FLOW_FS) as usize;
        for i in 0..sig.len() {
            prop_assert!((f[i] - brute_window(&sig, k, i)).abs() < 1e-9);
        }
    }

    #[test]
    fn elapsed_time_matches_tau_search(
        sig in prop::collection::vec(prop::sample::select(vec![0.0, 0.005, 0.05, 0.5, 2.0]), 1..300),
        delta in prop::sample::select(vec![0.01, 0.1, 1.0]),
    ) {
        let f = time_since_threshold(&sig, FLOW_FS, delta).unwrap();
        for i in 0..sig.len() {
            prop_assert_eq!(f[i], brute_elapsed(&sig, FLOW_FS, delta, i));
            prop_assert!(f[i] >= 0.0);
            if i > 0 {
                if sig[i] > delta {
                    prop_assert_eq!(f[i], 0.0);
                } else {
                    prop_assert_eq!(f[i], f[i - 1] + 1.0 / FLOW_FS);
                }
            }
        }
    }

    #[test]
    fn max_dominates_mean(seed in any::<u64>(), w in 1usize..8, h in 1usize..8, frames in 1usize..6) {
        let series = random_series(w, h, frames, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let pixels: Vec<usize> = (0..w * h).filter(|_| rng.random_bool(0.5)).collect();
        prop_assume!(!pixels.is_empty());
        let mask = RegionMask::new("R", w, h, pixels).unwrap();
        let sig = region_signals(&mut series.clone(), &mask).unwrap();
        for (v, s) in sig.v.iter().zip(&sig.s) {
            prop_assert!(*v >= *s && *s >= 0.0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn features_are_nonnegative_and_scale_covariant(
        seed in any::<u64>(),
        a in prop::sample::select(vec![0.25f32, 0.5, 2.0, 8.0]),
    ) {
        let series = random_series(6, 6, 4 * 30 * 3, seed);
        let masks = band_masks(6, 6);
        let base = FeatureSelection::default();
        let grid = build_feature_grid(&mut series.clone(), &masks, 3, &base).unwrap();
        prop_assert!(grid.values.iter().all(|&x| x >= 0.0));

        let mut scaled = series.clone();
        for (u, v) in &mut scaled.frames {
            u.iter_mut().chain(v.iter_mut()).for_each(|x| *x *= a);
        }
        let sel = FeatureSelection {
            thresholds: base.thresholds.iter().map(|d| d * a as f64).collect(),
            ..base.clone()
        };
        let g2 = build_feature_grid(&mut scaled, &masks, 3, &sel).unwrap();
        for (i, row) in base.rows().iter().enumerate() {
            for e in 0..3 {
                let (x, y) = (grid.values[[i, e]], g2.values[[i, e]]);
                match row.family {
                    Family::F1 | Family::F2 => prop_assert_eq!(y, x * a as f64),
                    Family::F3 | Family::F4 => prop_assert_eq!(y, x),
                }
            }
        }
    }
}
