use proptest::prelude::*;
use svdtrain::data::{batches, class_means, synthetic_blobs, BlobSpec, Dataset};
use svdtrain::Tensor;

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Nearest class mean, estimated from the data itself.
fn nearest_centroid_accuracy(ds: &Dataset) -> (f64, f64) {
    let means = class_means(ds);
    let d = ds.inputs.numel() / ds.len();
    let correct = ds
        .inputs
        .data()
        .chunks(d)
        .zip(&ds.labels)
        .filter(|(x, &l)| {
            let best = (0..means.len())
                .min_by(|&a, &b| distance(x, &means[a]).total_cmp(&distance(x, &means[b])))
                .unwrap();
            best == l
        })
        .count();
    let mut min_sep = f64::INFINITY;
    for i in 0..means.len() {
        for j in 0..i {
            min_sep = min_sep.min(distance(&means[i], &means[j]));
        }
    }
    (correct as f64 / ds.len() as f64, min_sep)
}

/// Every generated task whose class means end up at least 6 apart (the noise
/// has unit variance) is classified almost perfectly by its centroids.
#[test]
fn well_separated_blobs_are_nearly_linearly_classifiable() {
    let mut qualified = 0;
    for seed in 0..12 {
        for (classes, separation) in [(2, 6.0), (4, 6.0), (4, 8.0), (10, 9.0)] {
            let ds = synthetic_blobs(&BlobSpec {
                class_count: classes,
                per_class: 200,
                shape: vec![1, 8, 8],
                separation,
                seed,
            })
            .unwrap();
            let (acc, min_sep) = nearest_centroid_accuracy(&ds);
            if min_sep >= 6.0 {
                qualified += 1;
                assert!(acc >= 0.99, "{classes} classes, seed {seed}, means {min_sep} apart: {acc}");
            }
        }
    }
    assert!(qualified >= 30, "only {qualified} tasks qualified");
}

proptest! {
    #[test]
    fn batches_cover_every_index_once(n in 1usize..200, bs in 1usize..64, seed in any::<u64>(), epoch in 0usize..50) {
        let ds = Dataset::new(Tensor::zeros(&[n, 2]), vec![0; n], 1).unwrap();
        let mut seen: Vec<usize> = batches(&ds, bs, seed, epoch).into_iter().flat_map(|b| b.indices).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn batch_sizes_are_full_except_the_last(n in 1usize..200, bs in 1usize..64) {
        let ds = Dataset::new(Tensor::zeros(&[n, 1]), vec![0; n], 1).unwrap();
        let sizes: Vec<usize> = batches(&ds, bs, 0, 0).iter().map(|b| b.labels.len()).collect();
        prop_assert_eq!(sizes.len(), n.div_ceil(bs));
        prop_assert!(sizes[..sizes.len() - 1].iter().all(|&s| s == bs));
    }
}
