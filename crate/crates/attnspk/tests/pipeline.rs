use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use attnspk::config::{Config, NetworkConfig, SoftVadMode, SystemSpec, WeightKind};
use attnspk::format::{self, decode_vectors};
use attnspk::pipeline::variant_dir;
use attnspk::{Error, Pipeline, Stage};
use attnspk_core::embednet::FrameWeights;
use attnspk_core::synth::SynthCorpusConfig;

fn tiny() -> Config {
    let mut cfg = Config::default();
    cfg.corpus.synth = SynthCorpusConfig {
        n_speakers: 8,
        utts_per_speaker: 4,
        frames_per_utt: 60,
        feature_dim: 6,
        n_train_speakers: 5,
        enroll_per_speaker: 1,
        ..SynthCorpusConfig::default()
    };
    for (name, net) in cfg.networks.iter_mut() {
        *net = NetworkConfig {
            tdnn_contexts: vec![vec![-1, 0, 1], vec![0]],
            tdnn_dims: vec![8, 12],
            attention_dim: 4,
            embed_dim: 6,
            hidden_dim: 6,
            ..NetworkConfig::desk(name == "attentive")
        };
        net.train.epochs = 2;
        net.train.chunk_len = 30;
    }
    cfg.ubm.components = 2;
    cfg.ubm.iters = 3;
    cfg.tvm.rank = 3;
    cfg.tvm.iters = 2;
    cfg.backend.speaker_dim = 3;
    cfg.backend.iters = 3;
    cfg
}

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn vectors(out: &Path, sys: &str, sv: bool) -> Vec<Vec<f64>> {
    let p = out.join(format!("vectors/{sys}/{}/vectors.afs", variant_dir(sv)));
    decode_vectors(&fs::read(p).unwrap()).unwrap()
}

#[test]
fn single_system_report_shape() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.select_systems(&["S1".into()]).unwrap();
    cfg.soft_vad = SoftVadMode::Off;
    let report = Pipeline::new(cfg, dir.path()).unwrap().run_all().unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.metric_columns(), 2);
    assert_eq!(report.rows[0].metrics.len(), 1);
    assert!(report.attention.is_empty());
    let m = report.metrics("S1", false).unwrap();
    assert!((0.0..=1.0).contains(&m.eer) && m.min_cprimary >= 0.0);
    assert!(!dir.path().join("embed/attentive").exists());
    assert!(!dir.path().join("ubm").exists());

    let text = fs::read_to_string(dir.path().join("report/report.txt")).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("S1 ")).count(), 1);
    let kv = fs::read_to_string(dir.path().join("report/report.kv")).unwrap();
    assert!(kv.lines().any(|l| l.starts_with("S1.off.eer=")));
    assert!(!kv.contains(".on."));
}

#[test]
fn full_matrix_is_deterministic_and_cache_safe() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let report = Pipeline::new(tiny(), a.path()).unwrap().run_all().unwrap();
    assert_eq!(report.rows.len(), 6);
    assert_eq!(report.metric_columns(), 4);
    assert_eq!(report.attention.len(), 1);
    Pipeline::new(tiny(), b.path()).unwrap().run_all().unwrap();
    let reference = tree(a.path());
    assert_eq!(reference, tree(b.path()));

    // S3 borrows non-uniform weights, so its vectors differ from S1's.
    assert_ne!(vectors(a.path(), "S1", false), vectors(a.path(), "S3", false));

    // Drop intermediates at several depths and rebuild.
    fs::remove_file(a.path().join("embed/plain/model.emb")).unwrap();
    fs::remove_file(a.path().join("features/spk000-utt000.afs")).unwrap();
    fs::remove_dir_all(a.path().join("weights")).unwrap();
    fs::remove_file(a.path().join("vectors/S6/svad/vectors.afs")).unwrap();
    fs::remove_file(a.path().join("scores/S2/base/scores.txt")).unwrap();
    fs::remove_dir_all(a.path().join("report")).unwrap();
    Pipeline::new(tiny(), a.path()).unwrap().run_all().unwrap();
    assert_eq!(reference, tree(a.path()));

    // A different seed changes the results.
    let mut other = tiny();
    other.seed = 1;
    let c = tempfile::tempdir().unwrap();
    let r2 = Pipeline::new(other, c.path()).unwrap().run_all().unwrap();
    assert_ne!(report.to_kv(), r2.to_kv());
}

#[test]
fn config_change_invalidates_downstream_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.select_systems(&["S5".into()]).unwrap();
    cfg.soft_vad = SoftVadMode::Off;
    Pipeline::new(cfg.clone(), dir.path()).unwrap().run_all().unwrap();
    let ubm_stamp = fs::read(dir.path().join("ubm/stamp")).unwrap();
    let tvm_stamp = fs::read(dir.path().join("tvm/stamp")).unwrap();
    cfg.tvm.rank = 2;
    Pipeline::new(cfg, dir.path()).unwrap().run_all().unwrap();
    assert_eq!(fs::read(dir.path().join("ubm/stamp")).unwrap(), ubm_stamp);
    assert_ne!(fs::read(dir.path().join("tvm/stamp")).unwrap(), tvm_stamp);
    assert_eq!(vectors(dir.path(), "S5", false)[0].len(), 2);
}

#[test]
fn self_applied_weights_reproduce_internal_attention() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.soft_vad = SoftVadMode::Off;
    cfg.systems = vec![
        cfg.system("S2").unwrap().clone(),
        SystemSpec {
            id: "S2self".into(),
            representation: attnspk::config::Representation::Xvector,
            network: Some("attentive".into()),
            weights: WeightKind::External,
            weight_source: Some("attentive".into()),
        },
    ];
    Pipeline::new(cfg, dir.path()).unwrap().run_all().unwrap();
    let internal = vectors(dir.path(), "S2", false);
    let external = vectors(dir.path(), "S2self", false);
    // Weight files and vector files are single precision.
    for (u, v) in internal.iter().zip(&external) {
        let scale = u.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        for (x, y) in u.iter().zip(v) {
            assert!((x - y).abs() <= 1e-5 * scale, "{x} vs {y}");
        }
    }
}

#[test]
fn uniform_forced_weights_turn_s6_into_s5() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny();
    cfg.select_systems(&["S5".into(), "S6".into()]).unwrap();
    cfg.soft_vad = SoftVadMode::Off;
    let p = Pipeline::new(cfg, dir.path()).unwrap();
    for stage in [Stage::Synth, Stage::Features, Stage::TrainEmbed, Stage::TrainUbm, Stage::TrainTvm] {
        p.run_stage(stage, false).unwrap();
    }
    p.cross_apply_weights("attentive").unwrap();
    for e in fs::read_dir(dir.path().join("weights/attentive")).unwrap() {
        let path = e.unwrap().path();
        if path.extension().is_some_and(|x| x == "fwt") {
            let n = format::decode_weights(&fs::read(&path).unwrap()).unwrap().len();
            fs::write(&path, format::encode_weights(&FrameWeights::uniform(n).unwrap())).unwrap();
        }
    }
    let report = p.run_all().unwrap();
    let (s5, s6) = (report.metrics("S5", false).unwrap(), report.metrics("S6", false).unwrap());
    assert!((s5.eer - s6.eer).abs() < 1e-9 && (s5.min_cprimary - s6.min_cprimary).abs() < 1e-9);
    for (u, v) in vectors(dir.path(), "S5", false).iter().zip(&vectors(dir.path(), "S6", false)) {
        for (x, y) in u.iter().zip(v) {
            assert!((x - y).abs() < 1e-6);
        }
    }
}

#[test]
fn missing_upstream_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(tiny(), dir.path()).unwrap();
    match p.run_stage(Stage::Features, true) {
        Err(Error::MissingArtifact { stage, .. }) => assert_eq!(stage, "synth"),
        other => panic!("expected a missing artifact, got {other:?}"),
    }
    p.run_stage(Stage::Synth, true).unwrap();
    p.run_stage(Stage::Features, true).unwrap();
    match p.run_stage(Stage::Extract, true) {
        Err(Error::MissingArtifact { stage, .. }) => assert_eq!(stage, "train-embed"),
        other => panic!("expected a missing artifact, got {other:?}"),
    }
    match p.report() {
        Err(Error::MissingArtifact { stage, .. }) => assert_eq!(stage, "score"),
        other => panic!("expected a missing artifact, got {other:?}"),
    }
    let err = p.run_stage(Stage::Extract, true).unwrap_err().to_string();
    assert!(err.contains("train-embed"), "{err}");
}

#[test]
fn plain_network_cannot_export_weights() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(tiny(), dir.path()).unwrap();
    assert!(matches!(p.cross_apply_weights("plain"), Err(Error::Config(_))));
}
