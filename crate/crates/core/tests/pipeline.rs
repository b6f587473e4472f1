use vistrack::eval::{eval_f1, eval_vis};
use vistrack::io::{read_json, read_jsonl, read_manifest};
use vistrack::pipeline::{label_and_filter, track_dataset, FilterSettings, Tracker};
use vistrack::synth::{generate, SynthConfig, CLASSES_FILE, DETECTIONS_FILE, GROUND_TRUTH_FILE, MANIFEST_FILE};
use vistrack::tracking::{BaselineConfig, TrackerConfig};
use vistrack::validate::validate_dataset;
use vistrack::{ClassEmbeddingTable, DetectionRecord, GroundTruthRecord};

#[test]
fn noiseless_chain_is_perfect() {
    for seed in 0..3 {
        let ds = generate(&SynthConfig::noiseless(), seed).unwrap();
        let report = validate_dataset(&ds.manifest, &ds.detections, Some(&ds.ground_truth), &ds.table).unwrap();
        assert!(report.is_valid(), "{report}");
        let kept = label_and_filter(ds.detections.clone(), &ds.table, &FilterSettings::default()).unwrap();
        let tracker = Tracker::Memory(TrackerConfig::default());
        let tracklets = track_dataset(&ds.manifest, &kept, &tracker).unwrap();
        let r = eval_vis(&tracklets, &ds.ground_truth, &ds.manifest, false).unwrap();
        assert_eq!((r.ap, r.ap50, r.ap75), (1.0, 1.0, 1.0), "seed {seed}");

        let f1 = eval_f1(&kept, &ds.ground_truth, &ds.manifest.class_names, 0.5, false).unwrap();
        assert_eq!(f1.mf1, 1.0);
    }
}

#[test]
fn written_dataset_reads_back() {
    let ds = generate(&SynthConfig::default(), 11).unwrap();
    let dir = tempfile::tempdir().unwrap();
    ds.write(dir.path()).unwrap();
    let manifest = read_manifest(dir.path().join(MANIFEST_FILE)).unwrap();
    let dets: Vec<DetectionRecord> = read_jsonl(dir.path().join(DETECTIONS_FILE)).unwrap();
    let gt: Vec<GroundTruthRecord> = read_jsonl(dir.path().join(GROUND_TRUTH_FILE)).unwrap();
    let table: ClassEmbeddingTable = read_json(dir.path().join(CLASSES_FILE)).unwrap();
    assert_eq!(manifest, ds.manifest);
    assert_eq!(dets, ds.detections);
    assert_eq!(gt, ds.ground_truth);
    assert_eq!(table, ds.table);
}

#[test]
fn tracking_ignores_input_order() {
    let ds = generate(&SynthConfig::occlusion(), 3).unwrap();
    let labeled = label_and_filter(ds.detections.clone(), &ds.table, &FilterSettings { tau: None, ..Default::default() }).unwrap();
    let mut reversed = labeled.clone();
    reversed.reverse();
    for tracker in [Tracker::Memory(TrackerConfig::default()), Tracker::Baseline(BaselineConfig::default())] {
        let a = track_dataset(&ds.manifest, &labeled, &tracker).unwrap();
        let b = track_dataset(&ds.manifest, &reversed, &tracker).unwrap();
        let ra = eval_vis(&a, &ds.ground_truth, &ds.manifest, false).unwrap();
        let rb = eval_vis(&b, &ds.ground_truth, &ds.manifest, false).unwrap();
        assert_eq!(ra.num_predictions, rb.num_predictions);
        assert!((ra.ap - rb.ap).abs() < 0.05, "{tracker:?}: {} vs {}", ra.ap, rb.ap);
    }
}

#[test]
fn stricter_tau_keeps_a_subset() {
    let ds = generate(&SynthConfig::noisy_labels(), 7).unwrap();
    let run = |tau| {
        let s = FilterSettings { tau: Some(tau), ..Default::default() };
        label_and_filter(ds.detections.clone(), &ds.table, &s).unwrap()
    };
    let loose = run(0.5);
    let strict = run(0.9);
    assert!(strict.len() < loose.len());
    for d in &strict {
        assert!(loose.iter().any(|l| l == d));
    }
}
