use lgd::maps::{
    encode_map, extract_edges, make_label_map, read_pgm, saliency_blob, train_tiny_ae, write_pgm, Encoder,
    LabelRegion, MapKind, Rect, SpatialMap, TinyAe, TinyAeConfig, TinyAeTrainConfig, DEFAULT_EDGE_THRESHOLD,
};
use lgd::{Error, Tensor32};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn image(h: usize, w: usize, seed: u64) -> Tensor32 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor32::from_fn([1, h, w], |_| rng.random_range(0.0..=1.0))
}

#[test]
fn vertical_step_marks_the_two_adjacent_columns() {
    // Sobel on a step at column 5: |gx| = 4 on columns 4 and 5, zero elsewhere.
    let (h, w) = (6, 10);
    let img = Tensor32::from_fn([1, h, w], |k| if k % w >= 5 { 1.0 } else { 0.0 });
    let edges = extract_edges(&img, DEFAULT_EDGE_THRESHOLD).unwrap();
    for i in 0..h {
        for j in 0..w {
            let want = if j == 4 || j == 5 { 1.0 } else { 0.0 };
            assert_eq!(edges.data().data()[i * w + j], want, "({i}, {j})");
        }
    }
}

proptest! {
    #[test]
    fn edges_are_binary_and_ignore_brightness(h in 3usize..12, w in 3usize..12, seed in any::<u64>(), thr in 0.05f32..0.95) {
        let img = image(h, w, seed);
        let edges = extract_edges(&img, thr).unwrap();
        prop_assert_eq!(edges.kind(), MapKind::Edges);
        prop_assert!(edges.data().data().iter().all(|&v| v == 0.0 || v == 1.0));
        prop_assert!(edges.data().data().contains(&1.0));
        // Halving and shifting is exact in binary floating point.
        let dim = img.map(|v| 0.5 * v + 0.25);
        prop_assert_eq!(extract_edges(&dim, thr).unwrap(), edges);
    }

    #[test]
    fn higher_thresholds_keep_fewer_edges(seed in any::<u64>(), a in 0.05f32..0.9, b in 0.05f32..0.9) {
        let img = image(9, 9, seed);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let count = |t| extract_edges(&img, t).unwrap().data().data().iter().sum::<f32>();
        prop_assert!(count(hi) <= count(lo));
    }

    #[test]
    fn label_maps_stay_in_unit_range(
        regions in prop::collection::vec((0usize..12, 0usize..12, 1usize..8, 1usize..8, 0.0f32..=1.0), 0..5),
        band in 0usize..3,
    ) {
        let regions: Vec<LabelRegion> = regions
            .into_iter()
            .map(|(y0, x0, dh, dw, prob)| LabelRegion { rect: Rect { y0, x0, y1: (y0 + dh).min(12), x1: (x0 + dw).min(12) }, prob })
            .collect();
        let map = make_label_map(12, 12, &regions, band).unwrap();
        prop_assert_eq!(map.kind(), MapKind::Labels);
        prop_assert!(map.data().data().iter().all(|v| (0.0..=1.0).contains(v)));
        if band == 0 {
            for (k, &v) in map.data().data().iter().enumerate() {
                let (i, j) = (k / 12, k % 12);
                let want = regions.iter().rev()
                    .find(|r| (r.rect.y0..r.rect.y1).contains(&i) && (r.rect.x0..r.rect.x1).contains(&j))
                    .map_or(0.0, |r| r.prob);
                prop_assert_eq!(v, want);
            }
        }
    }

    #[test]
    fn pgm_round_trip_is_exact_on_the_byte_grid(h in 1usize..20, w in 1usize..20, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Tensor32::from_fn([1, h, w], |_| rng.random_range(0u8..=255) as f32 / 255.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        write_pgm(&path, &img).unwrap();
        prop_assert_eq!(read_pgm(&path).unwrap(), img);
    }
}

#[test]
fn saliency_peaks_at_its_centre() {
    let map = saliency_blob(16, 16, 5.0, 9.0, 2.0).unwrap();
    let d = map.data().data();
    let argmax = (0..d.len()).max_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
    assert_eq!((argmax / 16, argmax % 16), (5, 9));
    assert!((d[argmax] - 1.0).abs() < 1e-6);
    assert!(d.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn spatial_maps_validate_their_contents() {
    assert!(matches!(
        SpatialMap::new(Tensor32::full([1, 2, 2], 0.5), MapKind::Edges),
        Err(Error::Domain(_))
    ));
    assert!(SpatialMap::new(Tensor32::full([1, 2, 2], 1.5), MapKind::Saliency).is_err());
    assert!(SpatialMap::new(Tensor32::full([2, 2], 0.0), MapKind::Labels).is_err());
    assert!(extract_edges(&Tensor32::full([1, 3, 3], 2.0), 0.5).is_err());
}

#[test]
fn identity_encoder_passes_maps_through() {
    let edges = extract_edges(&image(8, 8, 1), 0.5).unwrap();
    let enc = Encoder::Identity { channels: 1 };
    assert_eq!(encode_map(&edges, &enc).unwrap(), *edges.data());
    assert_eq!(enc.downsample(), 1);
    assert_eq!(enc.decode(edges.data()).unwrap(), *edges.data());
}

#[test]
fn autoencoder_shapes_and_training() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let ae = TinyAe::new(TinyAeConfig { width: 8, ..TinyAeConfig::default() }, &mut rng).unwrap();
    let enc = Encoder::TinyAe(ae);
    let x = image(16, 16, 2);
    let z = enc.encode(&x).unwrap();
    assert_eq!(z.shape(), [4, 4, 4]);
    assert_eq!(enc.latent_channels(), 4);
    let back = enc.decode(&z).unwrap();
    assert_eq!(back.shape(), [3, 16, 16]);
    assert!(back.data().iter().all(|v| (0.0..=1.0).contains(v)));

    let images: Vec<Tensor32> = (0..6).map(|s| image(16, 16, s)).collect();
    let refs: Vec<&Tensor32> = images.iter().collect();
    let cfg = TinyAeTrainConfig {
        ae: TinyAeConfig { width: 8, ..TinyAeConfig::default() },
        steps: 60,
        batch_size: 4,
        ..TinyAeTrainConfig::default()
    };
    let (a, log_a) = train_tiny_ae(&refs, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let (b, log_b) = train_tiny_ae(&refs, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(log_a, log_b);
    assert_eq!(a.params(), b.params());
    let head = log_a[..10].iter().sum::<f64>();
    let tail = log_a[50..].iter().sum::<f64>();
    assert!(tail < head, "{head} -> {tail}");
    assert!(train_tiny_ae(&[], &cfg, &mut rng).is_err());
}
