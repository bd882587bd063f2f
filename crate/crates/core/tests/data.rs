use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tripartite_core::data::{
    add_gaussian_noise, attach_human_probs, correlation, decode_records, encode_records, human_agreement,
    split, synth_shapes, Dataset, ImageLayout,
};
use tripartite_core::Error;

#[test]
fn standard_record_is_3073_bytes() {
    assert_eq!(ImageLayout::CIFAR10.record_len(), 3073);
}

#[test]
fn all_zero_record_is_a_black_image_of_class_zero() {
    let ds = decode_records(&[0u8; 3073 * 2], ImageLayout::CIFAR10, "zeros").unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.labels, vec![0, 0]);
    assert_eq!(ds.image_shape(), (32, 32, 3));
    assert!(ds.images.data().iter().all(|&v| v == 0.0));
}

#[test]
fn records_round_trip() {
    let layout = ImageLayout { height: 4, width: 5, channels: 3, classes: 7 };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut bytes = Vec::new();
    for _ in 0..6 {
        bytes.push(rng.gen_range(0..7u8));
        bytes.extend((0..60).map(|_| rng.gen::<u8>()));
    }
    let ds = decode_records(&bytes, layout, "rt").unwrap();
    assert!(ds.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert_eq!(encode_records(&ds), bytes);
    let again = decode_records(&encode_records(&ds), layout, "rt").unwrap();
    assert_eq!(again.images, ds.images);
    // Channel-planar bytes land in interleaved pixels.
    assert_eq!(ds.images.data()[1], bytes[1 + 20] as f64 / 255.0);
}

#[test]
fn truncated_file_reports_byte_offset() {
    let err = decode_records(&[0u8; 3073 + 100], ImageLayout::CIFAR10, "t").unwrap_err();
    assert!(matches!(err, Error::Data { offset: Some(3073), .. }), "{err:?}");
}

#[test]
fn out_of_range_label_is_rejected() {
    let mut bytes = vec![0u8; 3073 * 3];
    bytes[3073 * 2] = 10;
    let err = decode_records(&bytes, ImageLayout::CIFAR10, "l").unwrap_err();
    assert!(matches!(err, Error::Data { offset: Some(6146), row: Some(2), .. }), "{err:?}");
}

#[test]
fn shapes_are_balanced_and_seeded() {
    let ds = synth_shapes(300, 32, 3, 5).unwrap();
    for c in 0..3 {
        assert_eq!(ds.labels.iter().filter(|&&l| l == c).count(), 100);
    }
    assert_eq!(ds, synth_shapes(300, 32, 3, 5).unwrap());
    assert_ne!(ds.images, synth_shapes(300, 32, 3, 6).unwrap().images);
    assert!(ds.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(synth_shapes(10, 8, 3, 0).is_err());
    assert!(synth_shapes(10, 32, 11, 0).is_err());
    let ten = synth_shapes(100, 32, 10, 1).unwrap();
    assert!((0..10).all(|c| ten.labels.iter().filter(|&&l| l == c).count() == 10));
}

fn centroid_accuracy(train: &Dataset, test: &Dataset) -> f64 {
    let n = train.images.len() / train.len();
    let mut centroids = vec![vec![0.0; n]; train.classes];
    let mut counts = vec![0.0; train.classes];
    for i in 0..train.len() {
        let row = &train.images.data()[i * n..(i + 1) * n];
        for (c, v) in centroids[train.labels[i]].iter_mut().zip(row) {
            *c += v;
        }
        counts[train.labels[i]] += 1.0;
    }
    for (c, k) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= k);
    }
    let mut correct = 0;
    for i in 0..test.len() {
        let row = &test.images.data()[i * n..(i + 1) * n];
        let dist = |c: &Vec<f64>| c.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let best = (0..centroids.len())
            .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
            .unwrap();
        correct += (best == test.labels[i]) as usize;
    }
    correct as f64 / test.len() as f64
}

#[test]
fn nearest_centroid_learns_the_three_class_task() {
    let train = synth_shapes(900, 32, 3, 101).unwrap();
    let test = synth_shapes(300, 32, 3, 201).unwrap();
    let acc = centroid_accuracy(&train, &test);
    eprintln!("centroid accuracy {acc}");
    assert!(acc > 0.8);
}

#[test]
fn zero_noise_is_identity_and_noise_is_seeded() {
    let ds = synth_shapes(12, 16, 3, 2).unwrap();
    assert_eq!(add_gaussian_noise(&ds, 0.0, 9).unwrap(), ds);
    let a = add_gaussian_noise(&ds, 0.3, 9).unwrap();
    assert_eq!(a, add_gaussian_noise(&ds, 0.3, 9).unwrap());
    assert_ne!(a, add_gaussian_noise(&ds, 0.3, 10).unwrap());
    assert_eq!(a.labels, ds.labels);
    assert_eq!(a.images.shape(), ds.images.shape());
    assert!(add_gaussian_noise(&ds, -0.1, 9).is_err());
}

#[test]
fn half_sigma_noise_has_matching_sample_std() {
    let ds = synth_shapes(400, 32, 3, 3).unwrap();
    let noisy = add_gaussian_noise(&ds, 0.5, 4).unwrap();
    let diffs: Vec<f64> = noisy.images.data().iter().zip(ds.images.data()).map(|(a, b)| a - b).collect();
    assert!(diffs.len() >= 1_000_000);
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    let std = (diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((0.49..=0.51).contains(&std), "std {std}");
    assert!(noisy.images.data().iter().any(|&v| !(0.0..=1.0).contains(&v)));
}

#[test]
fn split_partitions_indices() {
    let (train, val) = split(103, 0.25, 7).unwrap();
    assert_eq!(val.len(), 26);
    let mut all: Vec<usize> = train.iter().chain(&val).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..103).collect::<Vec<_>>());
    assert_eq!(split(103, 0.25, 7).unwrap(), (train, val));
    assert!(split(10, 1.5, 0).is_err());
}

#[test]
fn human_probability_rows() {
    let ds = synth_shapes(3, 16, 3, 4).unwrap();
    let one_hot = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
    let with = attach_human_probs(&ds, &one_hot).unwrap();
    assert_eq!(with.human_probs.as_ref().unwrap().data(), one_hot.concat().as_slice());
    assert_eq!(human_agreement(&with).unwrap(), vec![1.0; 3]);
    assert!(human_agreement(&ds).is_none());

    let rows = vec![vec![0.5, 0.3005, 0.2], vec![0.2, 0.3, 0.5], vec![0.1, 0.1, 0.8]];
    let with = attach_human_probs(&ds, &rows).unwrap();
    let first = with.human_probs.as_ref().unwrap().row(0);
    assert!((first.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let half = vec![vec![0.25, 0.25, 0.0], vec![0.2, 0.3, 0.5], vec![0.1, 0.1, 0.8]];
    assert!(matches!(attach_human_probs(&ds, &half), Err(Error::Data { row: Some(1), .. })));
    let short = vec![vec![0.5, 0.5, 0.0], vec![0.5, 0.5], vec![0.1, 0.1, 0.8]];
    assert!(matches!(attach_human_probs(&ds, &short), Err(Error::Data { row: Some(2), .. })));
    assert!(attach_human_probs(&ds, &one_hot[..2]).is_err());
}

#[test]
fn correlation_examples() {
    let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
    assert!((correlation(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    assert!((correlation(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
    assert!(matches!(correlation(&x, &[0.5; 50]), Err(Error::UndefinedCorrelation { .. })));
    assert!(correlation(&[1.0, 2.0], &[1.0, 3.0]).is_err());
    assert!(correlation(&x, &x[..10]).is_err());
}

#[test]
fn independent_samples_are_nearly_uncorrelated() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let x: Vec<f64> = (0..10_000).map(|_| rng.gen()).collect();
    let y: Vec<f64> = (0..10_000).map(|_| rng.gen()).collect();
    let r = correlation(&x, &y).unwrap();
    // The permutation null has standard deviation 1/sqrt(n) = 0.01.
    assert!(r.abs() < 0.03, "r = {r}");
}

#[test]
fn subsets_carry_labels_and_human_rows() {
    let ds = synth_shapes(6, 16, 3, 8).unwrap();
    let rows: Vec<Vec<f64>> = (0..6).map(|i| { let mut r = vec![0.0; 3]; r[i % 3] = 1.0; r }).collect();
    let ds = attach_human_probs(&ds, &rows).unwrap();
    let sub = ds.subset(&[4, 1]);
    assert_eq!(sub.labels, vec![ds.labels[4], ds.labels[1]]);
    assert_eq!(sub.human_probs.as_ref().unwrap().row(0), &rows[4][..]);
    assert_eq!(sub.batch(&[1]).data(), ds.batch(&[1]).data());
}
