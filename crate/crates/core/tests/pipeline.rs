use artps_core::config::LocalizeMode;
use artps_core::features::ComponentId;
use artps_core::synth::{generate_scene, SceneBundle, SceneSpec};
use artps_core::{decode_frame, frame_id, io, run_pipeline, Error, Frame, PipelineConfig};

fn bundle(seed: u64) -> SceneBundle {
    generate_scene(&SceneSpec::standard(seed, 192, 160)).unwrap()
}

fn frame(b: &SceneBundle, with_depth: bool) -> Frame {
    Frame {
        image: b.image.clone(),
        depth: with_depth.then(|| b.depth.clone()),
        known_value: None,
    }
}

#[test]
fn report_ids_follow_ranking_and_contributions_add_up() {
    let b = bundle(21);
    let out = run_pipeline(&frame(&b, true), &PipelineConfig::default(), "f", None).unwrap();
    let r = &out.report;
    assert!(!r.regions.is_empty());
    let ids: Vec<u32> = r.regions.iter().map(|x| x.id).collect();
    assert_eq!(ids, (1..=r.regions.len() as u32).collect::<Vec<_>>());
    assert_eq!(r.ranking, ids);
    for w in r.regions.windows(2) {
        assert!(w[0].curiosity >= w[1].curiosity);
    }
    for reg in &r.regions {
        let total: f64 = reg.contributions.values().sum();
        assert!((total - reg.curiosity).abs() < 1e-9);
        assert_eq!(reg.diagnostics.len(), r.components.len());
    }
    let wsum: f64 = r.components.iter().map(|c| c.weight).sum();
    assert!((wsum - 1.0).abs() < 1e-12);
    let (_, side) = out.overlay().unwrap();
    assert_eq!(side.regions.iter().map(|s| s.id).collect::<Vec<_>>(), ids);
}

#[test]
fn missing_depth_falls_back() {
    let b = bundle(22);
    let out = run_pipeline(&frame(&b, false), &PipelineConfig::default(), "f", None).unwrap();
    let r = &out.report;
    assert!(r.depth.fallback && !r.depth.present);
    assert!(r
        .components
        .iter()
        .all(|c| !matches!(c.name, ComponentId::DepthGrad | ComponentId::DepthLap)));
    for reg in &r.regions {
        assert_eq!(reg.features.depth_var, 0.0);
    }
    assert!(out.depth.is_none());
}

#[test]
fn depth_of_the_wrong_size_is_rejected() {
    let b = bundle(23);
    let other = generate_scene(&SceneSpec::standard(23, 96, 80)).unwrap();
    let f = Frame {
        image: b.image.clone(),
        depth: Some(other.depth),
        known_value: None,
    };
    let e = run_pipeline(&f, &PipelineConfig::default(), "f", None).unwrap_err();
    assert!(matches!(e, Error::DimensionMismatch { .. }), "{e}");
}

#[test]
fn zero_weight_components_are_dropped() {
    let b = bundle(24);
    let mut cfg = PipelineConfig::default();
    cfg.fusion.weights.insert(ComponentId::Dog, 0.0);
    cfg.fusion.weights.insert(ComponentId::Recon, 0.0);
    let r = run_pipeline(&frame(&b, true), &cfg, "f", None).unwrap().report;
    assert!(r.components.iter().all(|c| c.name != ComponentId::Dog && c.name != ComponentId::Recon));
    assert_ne!(r.config_hash, PipelineConfig::default().hash());
}

#[test]
fn ablations_switch_stages_off() {
    let b = bundle(25);
    let mut cfg = PipelineConfig::default();
    cfg.ablation.advanced_signals = false;
    cfg.ablation.depth_postprocess = false;
    cfg.ablation.suppression = false;
    let r = run_pipeline(&frame(&b, true), &cfg, "f", None).unwrap().report;
    assert!(r.components.iter().all(|c| !c.suppressed));
    assert!(r
        .components
        .iter()
        .all(|c| c.name != ComponentId::PatchStats && c.name != ComponentId::Recon));
    assert!(!r.depth.postprocessed);
}

#[test]
fn raising_tau_high_never_adds_regions() {
    let b = bundle(26);
    let mut counts = vec![];
    for tau_high in [0.3, 0.45, 0.6, 0.8] {
        let mut cfg = PipelineConfig::default();
        cfg.fusion.hysteresis.tau_low = 0.25;
        cfg.fusion.hysteresis.tau_high = tau_high;
        cfg.localize.merge_distance = 0.0;
        cfg.localize.iou_threshold = 1.0;
        let out = run_pipeline(&frame(&b, true), &cfg, "f", None).unwrap();
        counts.push(out.mask.data.iter().filter(|&&m| m).count());
    }
    assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{counts:?}");
}

#[test]
fn edges_mode_produces_boxes() {
    let b = bundle(27);
    let mut cfg = PipelineConfig::default();
    cfg.localize.mode = LocalizeMode::Edges;
    let r = run_pipeline(&frame(&b, true), &cfg, "f", None).unwrap().report;
    assert!(!r.regions.is_empty());
}

#[test]
fn resize_brings_depth_along() {
    let b = bundle(28);
    let img = io::encode_png8(&b.image).unwrap();
    let depth = artps_core::depthpp::encode_ard1(&b.depth.raster).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.enhance.resize = Some([96, 80]);
    cfg.depth.load.resample = true;
    let f = decode_frame(&img, Some(&depth), &cfg).unwrap();
    assert_eq!(f.depth.as_ref().unwrap().dims(), (96, 80));
    let r = run_pipeline(&f, &cfg, &frame_id(&img, Some(&depth)), None).unwrap().report;
    assert_eq!((r.width, r.height), (96, 80));
}

#[test]
fn artifacts_are_written() {
    let b = bundle(29);
    let out = run_pipeline(&frame(&b, true), &PipelineConfig::default(), "f", None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    out.write_artifacts(dir.path(), true).unwrap();
    for f in ["report.json", "fused.png", "mask.png", "overlay.png", "overlay.json", "depth.ard1"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    for c in &out.components {
        assert!(dir.path().join(format!("component_{}.png", c.name)).exists());
    }
    let fused = io::read_image(dir.path().join("fused.png")).unwrap();
    let max_err = fused
        .data()
        .iter()
        .zip(out.fused.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0f32, f32::max);
    assert!(max_err <= 1.0 / 65535.0);
}

#[test]
fn frame_id_depends_on_both_inputs() {
    let a = frame_id(b"image", None);
    assert_eq!(a.len(), 16);
    assert_ne!(a, frame_id(b"image", Some(b"")));
    assert_ne!(frame_id(b"image", Some(b"d1")), frame_id(b"image", Some(b"d2")));
    assert_ne!(frame_id(b"ab", Some(b"c")), frame_id(b"a", Some(b"bc")));
}
