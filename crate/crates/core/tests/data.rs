use std::io::Write;

use postcn_core::skeleton::{bone_lengths, bones_from_pose};
use postcn_core::synthdata::{make_multiview, project_to_2d, read_dataset};
use postcn_core::{
    apply_pipeline, generate_corpus, read_dataset_file, write_dataset_file, AugmentationConfig,
    CorpusSpec, Error, OrthoProjection, SkeletonTopology,
};

fn small_corpus() -> Vec<postcn_core::SequenceRecord> {
    generate_corpus(&CorpusSpec {
        sequences: 6,
        frames: 20,
        multiview_fraction: 0.5,
        noise_std: 3.0,
        seed: 17,
        ..CorpusSpec::default()
    })
    .unwrap()
}

#[test]
fn file_round_trip_is_lossless() {
    let records = small_corpus();
    assert!(records.iter().any(|r| !r.cameras.is_empty()));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.jsonl");
    write_dataset_file(&path, &records).unwrap();
    let back = read_dataset_file(&path).unwrap();
    assert_eq!(back, records);

    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 6 * 21);
    assert!(text.lines().next().unwrap().contains("\"schema\""));
}

#[test]
fn corpus_is_deterministic_per_seed() {
    let spec = CorpusSpec {
        sequences: 3,
        frames: 16,
        noise_std: 2.0,
        ..CorpusSpec::default()
    };
    assert_eq!(
        generate_corpus(&spec).unwrap(),
        generate_corpus(&spec).unwrap()
    );
    let other = CorpusSpec {
        seed: 99,
        ..spec.clone()
    };
    assert_ne!(
        generate_corpus(&spec).unwrap(),
        generate_corpus(&other).unwrap()
    );
}

#[test]
fn truncated_file_reports_the_line() {
    let records = small_corpus();
    let mut buf = Vec::new();
    postcn_core::synthdata::write_dataset(&mut buf, &records[..1]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let cut = &text[..text.len() - 30];
    let lines = cut.lines().count();
    match read_dataset(cut.as_bytes()) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, lines),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn frame_arity_must_match_the_header_topology() {
    let records = small_corpus();
    let mut buf = Vec::new();
    postcn_core::synthdata::write_dataset(&mut buf, &records[..1]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut frame: serde_json::Value = serde_json::from_str(&lines[3]).unwrap();
    frame["j3d"].as_array_mut().unwrap().pop();
    lines[3] = frame.to_string();
    match read_dataset(lines.join("\n").as_bytes()) {
        Err(Error::Schema { line, .. }) => assert_eq!(line, 4),
        other => panic!("expected a schema error, got {other:?}"),
    }
}

#[test]
fn frames_need_a_header() {
    let records = small_corpus();
    let mut buf = Vec::new();
    postcn_core::synthdata::write_dataset(&mut buf, &records[..1]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let headless: Vec<&str> = text.lines().skip(1).collect();
    assert!(matches!(
        read_dataset(headless.join("\n").as_bytes()),
        Err(Error::Schema { line: 1, .. })
    ));
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(
        read_dataset_file(&dir.path().join("absent.jsonl")),
        Err(Error::Io(_))
    ));
    let path = dir.path().join("junk.jsonl");
    std::fs::File::create(&path)
        .unwrap()
        .write_all(b"not json\n")
        .unwrap();
    assert!(matches!(
        read_dataset_file(&path),
        Err(Error::Parse { line: 1, .. })
    ));
}

#[test]
fn default_corpus_projects_inside_the_frame() {
    let records = generate_corpus(&CorpusSpec::default()).unwrap();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for r in &records {
        for pose in r.poses2d().frames {
            for c in &pose.coords {
                lo = lo.min(c[0].min(c[1]));
                hi = hi.max(c[0].max(c[1]));
            }
        }
    }
    assert!(lo >= 0.0 && hi < 64.0, "pixel range [{lo}, {hi}]");
}

#[test]
fn projection_agrees_with_stored_keypoints() {
    let topo = SkeletonTopology::h36m();
    let projection = OrthoProjection::for_topology(&topo);
    for r in generate_corpus(&CorpusSpec {
        sequences: 3,
        frames: 10,
        ..CorpusSpec::default()
    })
    .unwrap()
    {
        let poses = r.poses3d();
        let projected = project_to_2d(&poses, &projection);
        assert_eq!(projected, r.poses2d());
        let mut flat = poses.clone();
        for p in &mut flat.frames {
            for c in &mut p.coords {
                c[2] *= -3.0;
            }
        }
        assert_eq!(project_to_2d(&flat, &projection), projected);
    }
}

#[test]
fn second_view_keeps_bone_lengths() {
    let topo = SkeletonTopology::h36m();
    let r = &small_corpus()[0];
    let rotation = postcn_core::losses::rotation_matrix(0.3, 2.0, -0.4);
    let (a, b) = make_multiview(&r.poses3d(), &rotation);
    for (p, q) in a.frames.iter().zip(&b.frames) {
        let la = bone_lengths(&bones_from_pose(p, &topo).unwrap());
        let lb = bone_lengths(&bones_from_pose(q, &topo).unwrap());
        for (x, y) in la.iter().zip(&lb) {
            assert!((x - y).abs() <= 1e-9 * x);
        }
    }
    let loss = postcn_core::losses::loss_multiview(&a.frames, &b.frames, &rotation).unwrap();
    assert!(loss <= 1e-12);
}

#[test]
fn augmentation_is_byte_deterministic_per_stream() {
    let topo = SkeletonTopology::h36m();
    let r = &small_corpus()[1];
    let config = AugmentationConfig {
        seed: 8,
        ..AugmentationConfig::default()
    };
    let a = apply_pipeline(&config, &r.poses2d(), &topo, 2, 5).unwrap();
    let b = apply_pipeline(&config, &r.poses2d(), &topo, 2, 5).unwrap();
    let bits = |x: &postcn_core::Augmented| {
        (0..x.heatmaps.frames)
            .flat_map(|t| {
                x.heatmaps
                    .frame(t)
                    .iter()
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.mask, b.mask);
    let c = apply_pipeline(&config, &r.poses2d(), &topo, 2, 6).unwrap();
    assert_ne!(bits(&a), bits(&c));
}

#[test]
fn disabled_augmentation_renders_clean_heatmaps() {
    let topo = SkeletonTopology::h36m();
    let r = &small_corpus()[2];
    let config = AugmentationConfig::disabled();
    let a = apply_pipeline(&config, &r.poses2d(), &topo, 0, 0).unwrap();
    let clean =
        postcn_core::render_sequence(&r.poses2d(), config.sigma, config.resolution()).unwrap();
    assert_eq!(a.heatmaps, clean);
    assert_eq!(a.mask, postcn_core::MaskRecord::default());
}
