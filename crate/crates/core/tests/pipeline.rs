use ltfs::backbone::ExtractorConfig;
use ltfs::benchgen::build_manifest;
use ltfs::datamodel::{BenchmarkManifest, Head, Split, Subset, SupervisionConfig};
use ltfs::fewshot::{build_task, embed_novel, evaluate, ClassifierKind};
use ltfs::model::{Checkpoint, Model, ModelConfig, Vocabulary};
use ltfs::synth::{render_toy, ToyData, ToySpec};
use ltfs::trainer::{
    checkpoint_name, prepare_samples, run_plan, PlanOptions, RunOutputs, TrainConfig, TrainData, TrainingPlan,
};

fn toy_with_novel() -> (ToyData, BenchmarkManifest) {
    let toy = render_toy(&ToySpec {
        images: 160,
        novel_classes: 4,
        novel_instances: 20,
        ..ToySpec::default()
    });
    let m = build_manifest(&toy.raw(), 2.7, 5).unwrap();
    (toy, m)
}

fn small_model(m: &BenchmarkManifest, heads: &[Head], seed: u64) -> Model {
    let cfg = ModelConfig::new(ExtractorConfig::tiny(4), 8, heads, Vocabulary::from_manifest(m));
    Model::new(cfg, seed).unwrap()
}

#[test]
fn novel_embedding_covers_novel_instances_and_leaves_model_untouched() {
    let (toy, m) = toy_with_novel();
    let model = small_model(&m, &[], 1);
    let before = model.param_hash();
    let a = embed_novel(&model, &m, &toy.source, None).unwrap();
    let b = embed_novel(&model, &m, &toy.source, None).unwrap();
    assert_eq!(model.param_hash(), before);
    assert_eq!(a, b);
    let novel: Vec<u64> = m
        .instances
        .iter()
        .filter(|o| matches!(o.subset, Subset::NovelSupport | Subset::NovelQuery))
        .map(|o| o.instance_id)
        .collect();
    assert_eq!(a.keys().copied().collect::<Vec<_>>(), {
        let mut n = novel.clone();
        n.sort_unstable();
        n
    });
    assert!(a.values().all(|f| f.len() == 8));
}

#[test]
fn one_shot_uses_support_rank_zero() {
    let (toy, m) = toy_with_novel();
    let model = small_model(&m, &[], 1);
    let table = embed_novel(&model, &m, &toy.source, None).unwrap();
    let task = build_task(&m, &table, Split::NovelTest, 1).unwrap();
    assert_eq!(task.support.len(), task.way());
    for id in &task.support_ids {
        let o = m.instances.iter().find(|o| o.instance_id == *id).unwrap();
        assert_eq!(o.support_rank, Some(0));
    }
    let five = build_task(&m, &table, Split::NovelTest, 5).unwrap();
    assert_eq!(five.support.len(), 5 * five.way());
}

#[test]
fn reports_respect_invariants() {
    let (toy, m) = toy_with_novel();
    let model = small_model(&m, &[], 2);
    let mut settings = Vec::new();
    for split in [Split::NovelVal, Split::NovelTest] {
        for k in [1, 5] {
            for kind in ClassifierKind::ALL {
                settings.push((split, k, kind));
            }
        }
    }
    let reports = evaluate(&model, &m, &toy.source, None, &settings).unwrap();
    let again = evaluate(&model, &m, &toy.source, None, &settings).unwrap();
    assert_eq!(reports, again);
    for r in &reports {
        assert!(0.0 <= r.top1 && r.top1 <= r.top5 && r.top5 <= 100.0, "{r:?}");
        assert!(r.way <= 5);
        assert_eq!(r.top5, 100.0);
        assert_eq!(r.regime, "full");
    }
}

#[test]
fn resumed_run_continues_identically() {
    let toy = render_toy(&ToySpec { images: 60, objects_per_image: 4, base_classes: 2, ..ToySpec::default() });
    let m = build_manifest(&toy.raw(), 2.7, 1).unwrap();
    let heads = [Head::Bbox];
    let sup = SupervisionConfig::new(&heads, false).unwrap();
    let model = small_model(&m, &heads, 3);
    let mut train = prepare_samples(&m, &model.config, &toy.source, Subset::BaseTrain, None).unwrap();
    train.truncate(24);
    let data = TrainData { train, val: vec![] };
    let o = PlanOptions { epochs: 3, lr: 0.05, batch_size: 8, short_edge: None, seed: 4, max_steps: None };
    let plan = TrainingPlan::mtl(&sup, &o);

    let dir = tempfile::tempdir().unwrap();
    let outputs = RunOutputs { checkpoint_dir: Some(dir.path().to_path_buf()), ..RunOutputs::default() };
    let mut full = model;
    let logs = run_plan(&plan, &sup, &mut full, &data, &outputs, None).unwrap();

    let ck = Checkpoint::read(&dir.path().join(checkpoint_name(0, 0))).unwrap();
    let mut resumed = ck.to_model().unwrap();
    let state = ck.state.clone().unwrap();
    let rest = run_plan(&plan, &sup, &mut resumed, &data, &RunOutputs::default(), Some(&state)).unwrap();
    assert_eq!(resumed.param_hash(), full.param_hash());
    assert_eq!(rest[0].step_losses[..], logs[0].step_losses[3..]);
}

#[test]
fn config_file_drives_a_curriculum() {
    let toy = render_toy(&ToySpec { images: 60, objects_per_image: 4, base_classes: 2, ..ToySpec::default() });
    let m = build_manifest(&toy.raw(), 2.7, 1).unwrap();
    let text = r#"{"extractor": {"in_channels": 3, "layers": [
            {"type": "conv", "out": 4, "kernel": 3, "stride": 2},
            {"type": "conv", "out": 4, "kernel": 3, "stride": 2},
            {"type": "conv", "out": 4, "kernel": 3, "stride": 2}]},
        "feature_dim": 8, "heads": ["cls", "seg_fcn", "scene"], "mode": "cl", "stages": ["scene", "seg_fcn"],
        "epochs": 1, "lr": 0.05, "batch_size": 4, "seed": 9, "max_steps": 3}"#;
    let cfg = TrainConfig::parse(text, "inline").unwrap();
    let plan = cfg.plan().unwrap();
    let sup = cfg.supervision().unwrap();
    let mut model = Model::new(cfg.model_config(Vocabulary::from_manifest(&m)).unwrap(), cfg.seed).unwrap();
    let mut train = prepare_samples(&m, &model.config, &toy.source, Subset::BaseTrain, None).unwrap();
    train.truncate(12);
    let data = TrainData { train, val: vec![] };
    let logs = run_plan(&plan, &sup, &mut model, &data, &RunOutputs::default(), None).unwrap();
    let stage_heads: Vec<_> = logs.iter().map(|l| l.heads.clone()).collect();
    assert_eq!(
        stage_heads,
        vec![vec![Head::Cls], vec![Head::Cls, Head::Scene], vec![Head::Cls, Head::Scene, Head::SegFcn]]
    );
    for pair in logs.windows(2) {
        let entry = pair[1].entry_probe.unwrap();
        assert!((entry - pair[0].exit_probe).abs() < 1e-6, "{entry} vs {}", pair[0].exit_probe);
    }
    assert!(logs.iter().all(|l| l.steps == 3 && l.schedule_restarted));
}
