mod common;

use std::path::Path;

use common::*;
use infergate::eval::{
    average_precision, evaluate, iou, load_fixture, match_detections, parse_fixture, read_records,
    render_comparison, write_records, ComparisonRow, EvalConfig, EvalRecord, TableError,
};
use infergate::{BBox, Detection, LabeledBox};
use proptest::prelude::*;
use rand::Rng;

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
}

/// Boxes on a coarse grid so overlaps are common.
fn grid_box(r: &mut rand_chacha::ChaCha8Rng) -> BBox {
    let x1 = r.random_range(0..6u16) * 4;
    let y1 = r.random_range(0..6u16) * 4;
    let w = r.random_range(1..5u16) * 4;
    let h = r.random_range(1..5u16) * 4;
    BBox::new(x1, y1, x1 + w, y1 + h)
}

#[test]
fn greedy_matching_equals_exhaustive_oracle() {
    let mut r = rng(80);
    let mut checked = 0;
    while checked < 2000 {
        let nt = r.random_range(0..=3);
        let truth: Vec<LabeledBox> = (0..nt)
            .map(|_| LabeledBox {
                label_id: r.random_range(0..2),
                bbox: grid_box(&mut r),
            })
            .collect();
        let preds: Vec<Detection> = (0..6 - nt)
            .map(|_| {
                Detection::new(
                    r.random_range(0..2),
                    r.random_range(1..=20) as f32 / 20.0,
                    grid_box(&mut r),
                )
            })
            .collect();
        let thr = [0.3, 0.5, 0.7][r.random_range(0..3)];
        let Some(want) = brute_force_flags(&truth, &preds, thr) else {
            continue;
        };
        let got = match_detections(&truth, &preds, thr);
        assert_eq!(got.true_positive, want, "truth {truth:?} preds {preds:?}");
        // Each truth matched at most once, and TP count equals matched truths.
        assert_eq!(got.tp_count(), got.matched_by.iter().flatten().count());
        checked += 1;
    }
}

#[test]
fn ap_matches_definition() {
    let mut r = rng(81);
    for _ in 0..2000 {
        let n = r.random_range(0..30);
        let scored: Vec<(f32, bool)> = (0..n)
            .map(|_| (r.random::<f32>(), r.random_bool(0.5)))
            .collect();
        let tps = scored.iter().filter(|s| s.1).count();
        let n_truth = tps + r.random_range(0..5);
        if n_truth == 0 {
            assert_eq!(average_precision(&scored, 0), None);
            continue;
        }
        let got = average_precision(&scored, n_truth).unwrap();
        assert!((got - reference_ap(&scored, n_truth)).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&got));
    }
}

#[test]
fn hand_checked_fixtures() {
    let ap = average_precision(&[(0.9, true), (0.8, false), (0.7, true)], 2).unwrap();
    assert!((ap - 5.0 / 6.0).abs() < 1e-12);
    let v = iou(&BBox::new(0, 0, 10, 10), &BBox::new(5, 0, 15, 10));
    assert!((v - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn false_positive_fixture_is_seven_point_four_percent() {
    let f = std::fs::File::open(fixture("false_positive.records")).unwrap();
    let recs = read_records(std::io::BufReader::new(f)).unwrap();
    let rep = evaluate(&recs, EvalConfig::default());
    assert_eq!(rep.crowded_frames, 92);
    let crowded: Vec<&EvalRecord> = recs.iter().filter(|r| r.truth.len() >= 10).collect();
    assert_eq!(
        crowded.iter().map(|r| r.predictions.len()).sum::<usize>(),
        1000
    );
    assert!((rep.false_positive_pct.unwrap() - 7.4).abs() < 1e-9);
}

#[test]
fn table_fixture_renders_verbatim() {
    let rows = load_fixture(&fixture("table1.fixture")).unwrap();
    let table = render_comparison(&rows, &[]);
    let expected = "\
| Method | mAP50 | Inference Time (ms) |
|---|---|---|
| RetinaNet-50-500 | 50.9 | 73 |
| RetinaNet-101-500 | 53.1 | 90 |
| RetinaNet-101-800 | 57.5 | 198 |
| YOLOv3-320 | 51.5 | 22 |
| YOLOv3-416 | 55.3 | 29 |
| YOLOv3-608 | 57.9 | 51 |
| Proposed YOLOv3 for NAO Robot | 48.9 | 17 |
";
    assert_eq!(table, expected);
    let merged = render_comparison(
        &rows,
        &[ComparisonRow {
            method: "sim".into(),
            map50: Some(1.0),
            inference_ms: Some(0.5),
        }],
    );
    assert!(merged.ends_with("| sim | 100.0 | 0.50 |\n"));
}

#[test]
fn fixture_errors_name_the_line() {
    assert!(matches!(
        load_fixture(Path::new("/nonexistent/table.fixture")),
        Err(TableError::Io { .. })
    ));
    match parse_fixture("# header\nA,1,2\nB,oops\n") {
        Err(TableError::Malformed { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

fn random_record(r: &mut rand_chacha::ChaCha8Rng, seq: u64) -> EvalRecord {
    let answered = r.random_bool(0.8);
    EvalRecord {
        robot: format!("nao-{}", r.random_range(0..3)),
        seq,
        t_sent_us: seq * 1000,
        t_result_us: answered.then(|| seq * 1000 + r.random_range(0..5000)),
        truth: (0..r.random_range(0..5))
            .map(|_| LabeledBox {
                label_id: r.random_range(0..3),
                bbox: random_box(r, 640, 480),
            })
            .collect(),
        predictions: if answered {
            (0..r.random_range(0..5))
                .map(|_| Detection::new(r.random_range(0..3), r.random(), random_box(r, 640, 480)))
                .collect()
        } else {
            Vec::new()
        },
    }
}

#[test]
fn records_round_trip() {
    let mut r = rng(82);
    let recs: Vec<EvalRecord> = (0..300).map(|s| random_record(&mut r, s)).collect();
    let mut buf = Vec::new();
    write_records(&mut buf, &recs).unwrap();
    let back = read_records(&buf[..]).unwrap();
    let mut sorted = recs.clone();
    sorted.sort_by(|a, b| (a.robot.as_str(), a.seq).cmp(&(b.robot.as_str(), b.seq)));
    let mut back_sorted = back;
    back_sorted.sort_by(|a, b| (a.robot.as_str(), a.seq).cmp(&(b.robot.as_str(), b.seq)));
    assert_eq!(back_sorted, sorted);
}

#[test]
fn exact_predictions_score_one() {
    let mut r = rng(83);
    let recs: Vec<EvalRecord> = (0..50)
        .map(|s| {
            let mut rec = random_record(&mut r, s);
            rec.t_result_us = Some(rec.t_sent_us + 17_000);
            rec.predictions = rec
                .truth
                .iter()
                .map(|t| Detection::new(t.label_id, 1.0, t.bbox))
                .collect();
            rec
        })
        .collect();
    let rep = evaluate(&recs, EvalConfig::default());
    assert_eq!(rep.map50, Some(1.0));
    assert_eq!(rep.latency.unwrap().mean_us, 17_000.0);
}

proptest! {
    #[test]
    fn ap_is_invariant_under_confidence_scaling(
        hits in proptest::collection::vec((1u32..1000, any::<bool>()), 1..40),
        k in 0.01f32..1.0,
        extra in 0usize..4,
    ) {
        let a: Vec<(f32, bool)> = hits.iter().map(|&(c, h)| (c as f32 / 1000.0, h)).collect();
        let b: Vec<(f32, bool)> = a.iter().map(|&(c, h)| (c * k, h)).collect();
        let n = a.iter().filter(|s| s.1).count() + extra;
        prop_assume!(n > 0);
        // Scaling may merge near-equal confidences; only compare when the
        // ranking is unchanged.
        let rank = |v: &[(f32, bool)]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&i, &j| v[j].0.total_cmp(&v[i].0));
            idx
        };
        prop_assume!(rank(&a) == rank(&b));
        prop_assert_eq!(average_precision(&a, n), average_precision(&b, n));
    }

    #[test]
    fn iou_is_symmetric(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_box(&mut r, 100, 100);
        let b = random_box(&mut r, 100, 100);
        prop_assert_eq!(iou(&a, &b), iou(&b, &a));
        prop_assert_eq!(iou(&a, &a), 1.0);
        prop_assert!((iou(&a, &b) - iou_f64(&a, &b)).abs() < 1e-12);
    }
}
