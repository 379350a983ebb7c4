use std::fs;

use attnspk::text::*;
use attnspk::Error;
use attnspk_core::eval::compute_eer;
use attnspk_core::synth::Partition;

#[test]
fn trial_and_score_files_parse() {
    let dir = tempfile::tempdir().unwrap();
    let trials = dir.path().join("trials.txt");
    fs::write(&trials, "# comment\na x target\n\na y nontarget\nb x nontarget\n").unwrap();
    let keys = read_trials(&trials).unwrap();
    assert_eq!(keys.len(), 3);
    assert_eq!(keys[0], TrialKey { enroll: "a".into(), test: "x".into(), target: true });

    let scores = dir.path().join("scores.txt");
    write_scores(
        &scores,
        &[
            ScoreLine { enroll: "b".into(), test: "x".into(), score: -1.5 },
            ScoreLine { enroll: "a".into(), test: "x".into(), score: 2.0 },
            ScoreLine { enroll: "a".into(), test: "y".into(), score: 0.1 },
        ],
    )
    .unwrap();
    assert_eq!(fs::read_to_string(&scores).unwrap().lines().next(), Some("b x -1.5"));
    let set = label_scores(&keys, &read_scores(&scores).unwrap()).unwrap();
    assert_eq!(compute_eer(&set).unwrap(), 0.0);
}

#[test]
fn parse_errors_carry_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.txt");
    fs::write(&p, "a x target\na y maybe\n").unwrap();
    match read_trials(&p) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected parse error, got {other:?}"),
    }
    fs::write(&p, "a x 1.0 extra\n").unwrap();
    assert!(matches!(read_scores(&p), Err(Error::Parse { line: 1, .. })));
    fs::write(&p, "a x nan\n").unwrap();
    assert!(read_scores(&p).is_err());
}

#[test]
fn scores_must_cover_trials_once() {
    let keys = vec![
        TrialKey { enroll: "a".into(), test: "x".into(), target: true },
        TrialKey { enroll: "a".into(), test: "y".into(), target: false },
    ];
    let one = ScoreLine { enroll: "a".into(), test: "x".into(), score: 1.0 };
    assert!(label_scores(&keys, std::slice::from_ref(&one)).is_err());
    let two = ScoreLine { enroll: "a".into(), test: "y".into(), score: 0.0 };
    assert!(label_scores(&keys, &[one.clone(), two.clone(), one]).is_err());
}

#[test]
fn manifest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("manifest.txt");
    let entries = vec![
        ManifestEntry { id: "u1".into(), speaker: 0, partition: Partition::Train, noise_type: Some(3) },
        ManifestEntry { id: "u2".into(), speaker: 7, partition: Partition::Enroll, noise_type: None },
        ManifestEntry { id: "u3".into(), speaker: 7, partition: Partition::Test, noise_type: Some(0) },
    ];
    write_manifest(&p, &entries).unwrap();
    assert_eq!(read_manifest(&p).unwrap(), entries);

    let ids = dir.path().join("ids.txt");
    write_ids(&ids, &["a".into(), "b".into()]).unwrap();
    assert_eq!(read_ids(&ids).unwrap(), vec!["a".to_owned(), "b".to_owned()]);
}
