use proptest::prelude::*;

use cadcnn::ecg_synth::{synth_record, SynthConfig};
use cadcnn::metrics::{confusion, derive_metrics, ConfusionMatrix};
use cadcnn::model::{build_model, ModelConfig};
use cadcnn::nn::{conv1d_forward, relu_forward, softmax, Conv1d, Tensor3};
use cadcnn::signal_io::{mean_and_std, normalize_segment, resegment, split, Label, Segment, SegmentDataset, SplitMode};
use cadcnn::training::evaluate;

fn segment(values: Vec<f64>, label: Label, id: &str) -> Segment {
    Segment {
        values,
        label,
        source_id: id.into(),
        normalized: false,
    }
}

fn non_constant(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3f64..1e3, 2..max_len).prop_filter("needs spread", |v| {
        let (_, s) = mean_and_std(v);
        s > 1e-6
    })
}

fn label() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::NonCad), Just(Label::Cad)]
}

proptest! {
    #[test]
    fn normalized_segments_have_zero_mean_unit_std(v in non_constant(300)) {
        let out = normalize_segment(&segment(v, Label::Cad, "s")).unwrap();
        let (m, s) = mean_and_std(&out.values);
        prop_assert!(m.abs() <= 1e-6);
        prop_assert!((s - 1.0).abs() <= 1e-6);
        prop_assert!(out.normalized);
        prop_assert_eq!(out.label, Label::Cad);
    }

    #[test]
    fn normalization_absorbs_affine_maps(
        v in non_constant(200),
        a in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0],
        b in -100.0f64..100.0,
    ) {
        let base = normalize_segment(&segment(v.clone(), Label::NonCad, "s")).unwrap();
        let mapped = normalize_segment(&segment(v.iter().map(|x| a * x + b).collect(), Label::NonCad, "s")).unwrap();
        for (x, y) in base.values.iter().zip(&mapped.values) {
            prop_assert!((a.signum() * x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn resegment_keeps_whole_pieces(
        lens in prop::collection::vec(1usize..400, 1..8),
        length in 1usize..120,
        labels in prop::collection::vec(label(), 8),
    ) {
        let windows: Vec<Segment> = lens
            .iter()
            .enumerate()
            .map(|(i, &n)| segment((0..n).map(|k| (i * 1000 + k) as f64).collect(), labels[i], &format!("r{i}")))
            .collect();
        let expected: usize = lens.iter().map(|n| n / length * length).sum();
        match resegment(&windows, length) {
            Ok(ds) => {
                prop_assert_eq!(ds.segments.iter().map(|s| s.len()).sum::<usize>(), expected);
                for s in &ds.segments {
                    // every piece is a contiguous run of one source window
                    let i: usize = s.source_id[1..].parse().unwrap();
                    prop_assert_eq!(s.label, labels[i]);
                    prop_assert_eq!((s.values[0] as usize - i * 1000) % length, 0);
                    prop_assert!(s.values.windows(2).all(|w| w[1] == w[0] + 1.0));
                }
            }
            Err(_) => prop_assert_eq!(expected, 0),
        }
    }

    #[test]
    fn split_is_a_deterministic_partition(
        n in 1usize..80,
        subjects in 1usize..10,
        fraction in 0.05f64..0.95,
        seed in any::<u64>(),
        per_subject in any::<bool>(),
    ) {
        let segs: Vec<Segment> = (0..n)
            .map(|i| segment(vec![i as f64, 0.0], if i % 3 == 0 { Label::Cad } else { Label::NonCad }, &format!("p{}", i % subjects)))
            .collect();
        let ds = SegmentDataset::new(segs, 2).unwrap();
        let mode = if per_subject { SplitMode::PerSubject } else { SplitMode::PerSegment };
        let (a, b) = split(&ds, fraction, seed, mode).unwrap();
        let mut ids: Vec<usize> = a.segments.iter().chain(&b.segments).map(|s| s.values[0] as usize).collect();
        ids.sort_unstable();
        prop_assert_eq!(ids, (0..n).collect::<Vec<_>>());
        for s in a.segments.iter().chain(&b.segments) {
            let i = s.values[0] as usize;
            prop_assert_eq!(s.label, ds.segments[i].label);
        }
        if per_subject {
            for s in &a.segments {
                prop_assert!(b.segments.iter().all(|t| t.source_id != s.source_id));
            }
        } else {
            prop_assert_eq!(a.len(), (fraction * n as f64).round() as usize);
        }
        let (a2, b2) = split(&ds, fraction, seed, mode).unwrap();
        prop_assert_eq!(a.segments, a2.segments);
        prop_assert_eq!(b.segments, b2.segments);
    }

    #[test]
    fn metrics_match_a_pairwise_recount(pairs in prop::collection::vec((label(), label()), 1..200)) {
        let (pred, actual): (Vec<Label>, Vec<Label>) = pairs.iter().copied().unzip();
        let m = derive_metrics(&confusion(&pred, &actual).unwrap()).unwrap();
        let count = |p: Label, a: Label| pairs.iter().filter(|&&x| x == (p, a)).count() as u64;
        let cm = ConfusionMatrix {
            tp: count(Label::Cad, Label::Cad),
            tn: count(Label::NonCad, Label::NonCad),
            fp: count(Label::Cad, Label::NonCad),
            fn_: count(Label::NonCad, Label::Cad),
        };
        prop_assert_eq!(m.confusion, cm);
        let correct = pairs.iter().filter(|(p, a)| p == a).count();
        prop_assert_eq!(m.accuracy, Some(correct as f64 / pairs.len() as f64));
        prop_assert!((m.accuracy.unwrap() + m.misclassification_rate.unwrap() - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn relabelling_swaps_counts_and_keeps_accuracy(pairs in prop::collection::vec((label(), label()), 1..100)) {
        let (pred, actual): (Vec<Label>, Vec<Label>) = pairs.iter().copied().unzip();
        let flip = |v: &[Label]| v.iter().map(|l| l.flipped()).collect::<Vec<_>>();
        let cm = confusion(&pred, &actual).unwrap();
        let swapped = confusion(&flip(&pred), &flip(&actual)).unwrap();
        prop_assert_eq!(swapped, cm.swapped());
        prop_assert_eq!(derive_metrics(&swapped).unwrap().accuracy, derive_metrics(&cm).unwrap().accuracy);
    }

    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..6, classes in 1usize..6, scale in 0.1f64..300.0, seed in any::<u64>()) {
        use rand::Rng;
        let mut r = cadcnn::rng::seeded(seed);
        let logits: Vec<f64> = (0..rows * classes).map(|_| r.gen_range(-1.0..1.0) * scale).collect();
        let p = softmax(&Tensor3::from_vec(logits, rows, classes, 1).unwrap()).unwrap();
        for row in p.data().chunks(classes) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn same_padding_conv_keeps_length(
        length in 1usize..60,
        kernel in 1usize..40,
        channels in 1usize..4,
        filters in 1usize..4,
        seed in any::<u64>(),
    ) {
        let mut r = cadcnn::rng::seeded(seed);
        let conv = Conv1d::<f64>::he_init(filters, channels, kernel, &mut r).unwrap();
        let x = Tensor3::from_vec(vec![0.5; 2 * channels * length], 2, channels, length).unwrap();
        let y = conv1d_forward(&x, &conv).unwrap();
        prop_assert_eq!(y.shape(), (2, filters, length));
        let once = relu_forward(&y);
        prop_assert_eq!(relu_forward(&once), once);
    }

    #[test]
    fn synthetic_records_are_reproducible(seed in any::<u64>(), cad in any::<bool>()) {
        let cfg = SynthConfig::shipped();
        let label = if cad { Label::Cad } else { Label::NonCad };
        let a = synth_record(label, 250.0, 2.0, seed, &cfg).unwrap();
        let b = synth_record(label, 250.0, 2.0, seed, &cfg).unwrap();
        prop_assert_eq!(&a.samples, &b.samples);
        prop_assert!(a.len() >= 500);
    }
}

#[test]
fn evaluation_ignores_dropout_rates() {
    let base = ModelConfig {
        input_length: 40,
        conv_filters: vec![3, 3, 3, 3],
        kernel: 5,
        dense_units: 4,
        seed: 12,
        ..ModelConfig::default()
    };
    let segs: Vec<Segment> = (0..10)
        .map(|i| {
            let v = (0..40).map(|k| ((k * (i + 1)) as f64 * 0.1).sin()).collect();
            segment(v, if i % 2 == 0 { Label::Cad } else { Label::NonCad }, "x")
        })
        .collect();
    let ds = SegmentDataset::new(segs, 40).unwrap();
    let with = build_model::<f32>(&base).unwrap();
    let without = build_model::<f32>(&ModelConfig {
        conv_dropout: vec![0.0; 4],
        head_dropout: 0.0,
        ..base
    })
    .unwrap();
    assert_eq!(evaluate(&with, &ds).unwrap(), evaluate(&without, &ds).unwrap());
}
