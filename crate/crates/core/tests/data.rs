use disentangle_core::{generate_synthetic_dataset, render, split, JitterDraw, SyntheticSpec};

fn nearest_centroid_accuracy(images: &[Vec<f64>], labels: &[usize], classes: usize) -> f64 {
    let d = images[0].len();
    let mut centroids = vec![vec![0.0; d]; classes];
    let mut counts = vec![0usize; classes];
    for (x, &y) in images.iter().zip(labels) {
        counts[y] += 1;
        for (c, v) in centroids[y].iter_mut().zip(x) {
            *c += v;
        }
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= *n as f64);
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let hits = images
        .iter()
        .zip(labels)
        .filter(|(x, &y)| {
            let best = (0..classes).min_by(|&i, &j| dist(x, &centroids[i]).total_cmp(&dist(x, &centroids[j]))).unwrap();
            best == y
        })
        .count();
    hits as f64 / images.len() as f64
}

#[test]
fn both_factors_are_separable_in_pixel_space() {
    let spec = SyntheticSpec { jitter: 0.0, samples_per_combo: 1, ..SyntheticSpec::default() };
    let ds = generate_synthetic_dataset(&spec).unwrap();
    let images: Vec<Vec<f64>> = ds.samples.iter().map(|s| s.image.clone()).collect();
    assert_eq!(nearest_centroid_accuracy(&images, &ds.exp_labels(), 4), 1.0);
    assert_eq!(nearest_centroid_accuracy(&images, &ds.id_labels(), 6), 1.0);
}

#[test]
fn joint_label_counts_are_uniform() {
    let spec = SyntheticSpec { samples_per_combo: 3, image_size: 16, ..SyntheticSpec::default() };
    let ds = generate_synthetic_dataset(&spec).unwrap();
    assert_eq!(ds.len(), 4 * 6 * 3);
    let mut counts = [[0; 6]; 4];
    for s in &ds.samples {
        counts[s.exp_label][s.id_label] += 1;
    }
    assert!(counts.iter().flatten().all(|&c| c == 3));
}

#[test]
fn generation_is_deterministic_and_jitter_free_copies_match() {
    let spec = SyntheticSpec { samples_per_combo: 2, image_size: 16, ..SyntheticSpec::default() };
    assert_eq!(generate_synthetic_dataset(&spec).unwrap(), generate_synthetic_dataset(&spec).unwrap());

    let flat = SyntheticSpec { jitter: 0.0, ..spec.clone() };
    let ds = generate_synthetic_dataset(&flat).unwrap();
    for pair in ds.samples.chunks(2) {
        assert_eq!(pair[0].image, pair[1].image);
    }
    assert_eq!(ds.samples[0].image, render(&flat, 0, 0, &JitterDraw::default()));
}

#[test]
fn rendered_pixels_are_in_range_for_rgb_too() {
    let spec = SyntheticSpec { channels: 3, image_size: 16, samples_per_combo: 1, jitter: 0.3, ..SyntheticSpec::default() };
    let ds = generate_synthetic_dataset(&spec).unwrap();
    for s in &ds.samples {
        assert_eq!(s.image.len(), 16 * 16 * 3);
        assert!(s.image.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn too_small_canvas_is_a_config_error() {
    let spec = SyntheticSpec { image_size: 8, ..SyntheticSpec::default() };
    let err = generate_synthetic_dataset(&spec).unwrap_err();
    assert!(matches!(err, disentangle_core::Error::Config(_)), "{err}");
}

#[test]
fn split_is_stratified_disjoint_and_complete() {
    let spec = SyntheticSpec { samples_per_combo: 10, image_size: 16, ..SyntheticSpec::default() };
    let ds = generate_synthetic_dataset(&spec).unwrap();
    let s = split(&ds, [0.8, 0.1, 0.1], 4).unwrap();
    let mut all: Vec<usize> = s.indices.iter().flatten().copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
    for part in [&s.train, &s.val, &s.test] {
        let mut per_class = [0; 4];
        part.exp_labels().iter().for_each(|&y| per_class[y] += 1);
        assert!(per_class.iter().all(|&c| c == per_class[0]), "{per_class:?}");
    }
    assert_eq!(s.test.len(), 24);
    assert_eq!(split(&ds, [0.8, 0.1, 0.1], 4).unwrap().indices, s.indices);
    assert!(split(&ds, [0.5, 0.1, 0.1], 4).is_err());
    assert!(split(&ds, [1.2, -0.1, -0.1], 4).is_err());
}
