use seqadv_core::datagen::{generate_problem, Frame, Labels, SequenceProblem};
use seqadv_core::features::{
    cell_histograms, hog_features, label_error, raw_features, train_autoencoder, train_shallow_cnn, train_siamese,
    AutoencoderConfig, CnnTrainConfig, FeatureExtractor, FeatureKind, HogConfig, SiameseConfig,
};
use seqadv_core::rng::SeededRng;
use seqadv_core::Error;

fn problems(seed: u64, n: u64) -> Vec<SequenceProblem> {
    (0..n).map(|id| generate_problem(seed, id, 2).unwrap()).collect()
}

fn vertical_edge(extent: usize, at: usize) -> Frame {
    let mut f = Frame::blank(extent, extent);
    for y in 0..extent {
        for x in at..extent {
            f.set(x, y, 1.0);
        }
    }
    f
}

#[test]
fn raw_is_row_major() {
    let f = Frame::new(2, 2, vec![0.0, 1.0, 0.5, 0.25]).unwrap();
    assert_eq!(raw_features(&f, 2).unwrap(), vec![0.0, 1.0, 0.5, 0.25]);
    assert!(raw_features(&Frame::blank(32, 32), 32)
        .unwrap()
        .iter()
        .all(|&v| v == 0.0));
    assert_eq!(FeatureExtractor::raw(32).spec().width, 1024);
    assert!(matches!(raw_features(&f, 3), Err(Error::ShapeMismatch { .. })));
}

#[test]
fn hog_width_and_constant_image() {
    let cfg = HogConfig::default();
    assert_eq!(cfg.width(32, 32).unwrap(), 324);
    let flat = Frame::new(32, 32, vec![0.7; 1024]).unwrap();
    let h = hog_features(&flat, &cfg).unwrap();
    assert_eq!(h.len(), 324);
    assert!(h.iter().all(|&v| v == 0.0));
    assert!(hog_features(&Frame::blank(15, 32), &cfg).is_err());
}

/// Whole-image orientation histogram computed pixel by pixel in degrees.
fn reference_orientation_mass(img: &Frame, bins: usize) -> Vec<f64> {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let px = |x: isize, y: isize| img.get(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize);
    let width_deg = 180.0 / bins as f64;
    let mut mass = vec![0.0; bins];
    for y in 0..h {
        for x in 0..w {
            let gx = px(x + 1, y) - px(x - 1, y);
            let gy = px(x, y + 1) - px(x, y - 1);
            let m = (gx * gx + gy * gy).sqrt();
            if m == 0.0 {
                continue;
            }
            let mut deg = gy.atan2(gx).to_degrees();
            while deg < 0.0 {
                deg += 180.0;
            }
            while deg >= 180.0 {
                deg -= 180.0;
            }
            let lower = (deg / width_deg).floor() as usize;
            let share = deg / width_deg - lower as f64;
            mass[lower % bins] += m * (1.0 - share);
            mass[(lower + 1) % bins] += m * share;
        }
    }
    mass
}

#[test]
fn hog_vertical_edge_votes_horizontal_gradient() {
    let cfg = HogConfig::default();
    for at in [5, 13, 16, 22] {
        let img = vertical_edge(32, at);
        let cells = cell_histograms(&img, &cfg).unwrap();
        let mut ours = vec![0.0; cfg.bins];
        for (i, v) in cells.iter().enumerate() {
            ours[i % cfg.bins] += v;
        }
        let reference = reference_orientation_mass(&img, cfg.bins);
        for (a, b) in ours.iter().zip(&reference) {
            assert!((a - b).abs() <= 1e-9, "edge at {at}: {ours:?} vs {reference:?}");
        }
        let total: f64 = reference.iter().sum();
        assert!(reference[0] >= 0.9 * total, "edge at {at}: {reference:?}");
    }
}

#[test]
fn hog_ignores_brightness_offset() {
    let p = generate_problem(1, 0, 2).unwrap();
    let cfg = HogConfig::default();
    for f in &p.question {
        let shifted = Frame::new(32, 32, f.pixels().iter().map(|v| 0.5 * v + 0.25).collect()).unwrap();
        let halved = Frame::new(32, 32, f.pixels().iter().map(|v| 0.5 * v).collect()).unwrap();
        let a = hog_features(&shifted, &cfg).unwrap();
        let b = hog_features(&halved, &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn autoencoder_reconstructs_training_frames() {
    let frames: Vec<Frame> = problems(21, 400).into_iter().flat_map(|p| p.question).collect();
    assert_eq!(frames.len(), 2000);
    let cfg = AutoencoderConfig::default();
    let (ae, trace) = train_autoencoder(&frames, &cfg, &mut SeededRng::new(4)).unwrap();
    assert_eq!(trace.len(), cfg.steps);
    assert_eq!(ae.code_width(), 64);
    let mse = ae.reconstruction_mse(&frames).unwrap();
    assert!(mse <= 0.02, "reconstruction mse {mse}");

    let fx = FeatureExtractor::Autoencoder(ae);
    let a = fx.extract_one(&frames[0]).unwrap();
    assert_eq!(a, fx.extract_one(&frames[0]).unwrap());
    assert_eq!(a.len(), 64);
    let back = fx.render(&a).unwrap();
    assert_eq!((back.width(), back.height()), (32, 32));
}

fn labeled(problems: &[SequenceProblem]) -> (Vec<Frame>, Vec<Labels>) {
    let mut frames = Vec::new();
    let mut labels = Vec::new();
    for p in problems {
        for (f, l) in p.full_sequence().zip(&p.labels) {
            frames.push(f.clone());
            labels.push(*l);
        }
    }
    (frames, labels)
}

#[test]
fn shallow_cnn_learns_quadrant_labels() {
    let train = problems(31, 150);
    let (frames, labels) = labeled(&train);
    let cfg = CnnTrainConfig::default();
    let mut rng = SeededRng::new(6);
    let (init, _) = train_shallow_cnn(
        &frames,
        &labels,
        &CnnTrainConfig { steps: 0, ..cfg },
        &mut SeededRng::new(6),
    )
    .unwrap();
    let (model, trace) = train_shallow_cnn(&frames, &labels, &cfg, &mut rng).unwrap();
    assert_eq!(trace.len(), cfg.steps);
    let before = label_error(&init, &frames, &labels).unwrap();
    let after = label_error(&model, &frames, &labels).unwrap();
    assert!(after <= 0.25 * before, "label error {after} vs initial {before}");

    let fx = FeatureExtractor::ShallowCnn(model);
    assert_eq!(fx.spec().width, 256);
    assert_eq!(fx.kind().normalization(), seqadv_core::features::Normalization::UnitL2);
    for v in fx.extract(&frames[..10].iter().collect::<Vec<_>>()).unwrap() {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() <= 1e-9);
    }
    assert!(matches!(fx.render(&[0.0; 256]), Err(Error::InvalidArgument { .. })));

    let short = CnnTrainConfig { steps: 5, ..cfg };
    let (a, _) = train_shallow_cnn(&frames, &labels, &short, &mut SeededRng::new(8)).unwrap();
    let (b, _) = train_shallow_cnn(&frames, &labels, &short, &mut SeededRng::new(8)).unwrap();
    assert_eq!(a.params, b.params);
    assert!(train_shallow_cnn(&frames, &labels[1..], &short, &mut rng).is_err());
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[test]
fn siamese_separates_adjacent_from_foreign_frames() {
    let train = problems(41, 150);
    let held_out = problems(42, 60);
    let (frames, labels) = labeled(&train);
    let cnn_cfg = CnnTrainConfig {
        steps: 200,
        ..CnnTrainConfig::default()
    };
    let (cnn, _) = train_shallow_cnn(&frames, &labels, &cnn_cfg, &mut SeededRng::new(1)).unwrap();
    let cfg = SiameseConfig::default();
    let (siamese, trace) = train_siamese(&train, &cnn, &cfg, &mut SeededRng::new(2)).unwrap();
    assert_eq!(trace.len(), cfg.steps);
    assert!(train_siamese(&train[..1], &cnn, &cfg, &mut SeededRng::new(2)).is_err());

    let fx = FeatureExtractor::Siamese(siamese);
    assert_eq!(fx.spec().width, 128);
    assert_eq!(fx.spec().kind, FeatureKind::Siamese);
    let embed: Vec<Vec<Vec<f64>>> = held_out
        .iter()
        .map(|p| fx.extract(&p.question.iter().collect::<Vec<_>>()).unwrap())
        .collect();
    for e in embed.iter().flatten() {
        assert!((e.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() <= 1e-9);
    }
    assert_eq!(
        distance(&embed[0][0], &fx.extract_one(&held_out[0].question[0]).unwrap()),
        0.0
    );

    let mut adjacent = Vec::new();
    let mut foreign = Vec::new();
    for (i, seq) in embed.iter().enumerate() {
        for t in 0..4 {
            adjacent.push(distance(&seq[t], &seq[t + 1]));
            let other = &embed[(i + 1) % embed.len()];
            foreign.push(distance(&seq[t], &other[(t + 2) % 5]));
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    assert!(
        mean(&adjacent) < mean(&foreign),
        "adjacent {} vs foreign {}",
        mean(&adjacent),
        mean(&foreign)
    );
}

#[test]
fn learned_extractors_restore_from_parameters() {
    let train = problems(51, 20);
    let (frames, labels) = labeled(&train);
    let (cnn, _) = train_shallow_cnn(
        &frames,
        &labels,
        &CnnTrainConfig {
            steps: 3,
            ..CnnTrainConfig::default()
        },
        &mut SeededRng::new(1),
    )
    .unwrap();
    let ae_cfg = AutoencoderConfig {
        steps: 3,
        ..AutoencoderConfig::default()
    };
    let (ae, _) = train_autoencoder(&frames, &ae_cfg, &mut SeededRng::new(1)).unwrap();
    for fx in [
        FeatureExtractor::ShallowCnn(cnn),
        FeatureExtractor::Autoencoder(ae),
        FeatureExtractor::hog(32),
    ] {
        let params = fx.params().cloned().unwrap_or_default();
        let back = FeatureExtractor::from_params(&fx.spec(), params).unwrap();
        assert_eq!(
            back.extract_one(&frames[0]).unwrap(),
            fx.extract_one(&frames[0]).unwrap()
        );
    }
}
