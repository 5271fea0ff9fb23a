use lap_core::corruption::{apply_corruption, CorruptionMode, CorruptionSpec};
use lap_core::{Batch, Matrix, Rng, SourceId};
use proptest::prelude::*;

fn batch(rows: usize, cols: usize, classes: usize, seed: u64) -> Batch {
    let mut rng = Rng::new(seed);
    let x = Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect()).unwrap();
    let labels = (0..rows).map(|_| rng.below(classes)).collect();
    Batch::new(x, labels, SourceId(3)).unwrap()
}

fn mode() -> impl Strategy<Value = CorruptionMode> {
    proptest::sample::select(CorruptionMode::ALL.to_vec())
}

fn spec(mode: CorruptionMode, rate: f64) -> CorruptionSpec {
    CorruptionSpec {
        chunks: 2,
        chunk_axes: vec![0, 1],
        input_shape: Some(vec![4, 3]),
        ..CorruptionSpec::new(mode, rate)
    }
}

proptest! {
    #[test]
    fn modes_touch_only_their_side(
        mode in mode(),
        rate in 0.0f64..=1.0,
        rows in 1usize..40,
        seed in any::<u64>(),
    ) {
        let b = batch(rows, 12, 5, seed);
        let out = apply_corruption(&b, &spec(mode, rate), 5, &mut Rng::new(seed ^ 1)).unwrap();
        if !mode.alters_features() {
            prop_assert_eq!(&out.x, &b.x);
        }
        if !mode.alters_labels() {
            prop_assert_eq!(&out.labels, &b.labels);
        }
        prop_assert_eq!(out.source, b.source);
        prop_assert!(out.labels.iter().all(|&y| y < 5));
    }

    #[test]
    fn chunk_shuffle_preserves_row_values(rows in 1usize..20, seed in any::<u64>()) {
        let b = batch(rows, 12, 3, seed);
        let out = apply_corruption(&b, &spec(CorruptionMode::ChunkShuffle, 1.0), 3, &mut Rng::new(seed)).unwrap();
        for r in 0..rows {
            let mut a: Vec<u64> = b.x.row(r).iter().map(|v| v.to_bits()).collect();
            let mut o: Vec<u64> = out.x.row(r).iter().map(|v| v.to_bits()).collect();
            a.sort_unstable();
            o.sort_unstable();
            prop_assert_eq!(a, o);
        }
    }

    #[test]
    fn corruption_is_reproducible(mode in mode(), seed in any::<u64>()) {
        let b = batch(16, 12, 4, seed);
        let s = spec(mode, 0.7);
        let one = apply_corruption(&b, &s, 4, &mut Rng::new(seed)).unwrap();
        let two = apply_corruption(&b, &s, 4, &mut Rng::new(seed)).unwrap();
        prop_assert_eq!(one, two);
    }

    #[test]
    fn zero_rate_is_identity(mode in mode(), seed in any::<u64>()) {
        let b = batch(10, 12, 4, seed);
        let out = apply_corruption(&b, &spec(mode, 0.0), 4, &mut Rng::new(seed)).unwrap();
        prop_assert_eq!(out, b);
    }
}
