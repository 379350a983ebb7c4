use attnspk::format::*;
use attnspk_core::backend::{PldaModel, Preprocessor};
use attnspk_core::embednet::{EmbedNetConfig, EmbedNetParams, FrameWeights};
use attnspk_core::features::{AcousticFrameSequence, VoicePosteriorSequence};
use attnspk_core::ivector::TotalVariabilityModel;
use attnspk_core::linalg::Matrix;
use attnspk_core::ubm::DiagGmm;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn frame_header_layout() {
    let seq = AcousticFrameSequence::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.5], vec![-1.0, 0.25]], 0.01).unwrap();
    let buf = encode_frames(&seq);
    assert_eq!(&buf[..4], b"AFS1");
    assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 3);
    assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
    assert_eq!(f32::from_le_bytes(buf[12..16].try_into().unwrap()), 0.01f32);
    assert_eq!(buf.len(), 16 + 6 * 4);
    assert_eq!(f32::from_le_bytes(buf[16 + 12..16 + 16].try_into().unwrap()), 4.5);
}

#[test]
fn posterior_and_weight_files() {
    let q = VoicePosteriorSequence::new(vec![0.0, 0.5, 1.0, 0.25]).unwrap();
    let buf = encode_posteriors(&q, 0.01);
    assert_eq!(&buf[..4], b"VPS1");
    assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
    assert_eq!(decode_posteriors(&buf).unwrap(), q);

    let w = FrameWeights::normalized(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
    let buf = encode_weights(&w);
    assert_eq!(&buf[..4], b"FWT1");
    assert_eq!(buf.len(), 8 + 7 * 4);
    let back = decode_weights(&buf).unwrap();
    assert!((back.values().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    for (a, b) in back.values().iter().zip(w.values()) {
        assert!((a - b).abs() < 1e-7 * b);
    }
}

#[test]
fn malformed_input_is_rejected() {
    let seq = AcousticFrameSequence::from_rows(&[vec![1.0, 2.0]], 0.01).unwrap();
    let buf = encode_frames(&seq);
    assert!(matches!(decode_frames(b"AFS"), Err(FormatError::Magic { .. })));
    assert!(matches!(decode_posteriors(&buf), Err(FormatError::Magic { .. })));
    assert!(matches!(decode_frames(&buf[..buf.len() - 1]), Err(FormatError::Truncated)));
    let mut long = buf.clone();
    long.push(0);
    assert!(matches!(decode_frames(&long), Err(FormatError::Trailing(1))));

    let mut huge = buf.clone();
    huge[4..8].copy_from_slice(&u32::MAX.to_le_bytes());
    huge[8..12].copy_from_slice(&u32::MAX.to_le_bytes());
    assert!(decode_frames(&huge).is_err());
}

#[test]
fn embed_net_round_trip_is_canonical_after_one_rounding() {
    for attentive in [false, true] {
        let cfg = EmbedNetConfig::desk(5, 7, attentive);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = EmbedNetParams::init(&cfg, &mut rng).unwrap();
        let buf = encode_embed_net(&p);
        assert_eq!(&buf[..4], b"EMB1");
        let q = decode_embed_net(&buf).unwrap();
        assert_eq!(q.is_attentive(), attentive);
        assert_eq!(q.tdnn.iter().map(|l| l.offsets.clone()).collect::<Vec<_>>(), cfg.tdnn_contexts);
        for (a, b) in p.tensors().iter().zip(q.tensors()) {
            assert_eq!(a.len(), b.len());
            assert!(a.iter().zip(b).all(|(x, y)| (*x as f32) as f64 == *y));
        }
        assert_eq!(encode_embed_net(&q), buf);
    }
}

#[test]
fn embed_net_version_is_checked() {
    let cfg = EmbedNetConfig::desk(3, 2, false);
    let p = EmbedNetParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut buf = encode_embed_net(&p);
    buf[4..8].copy_from_slice(&(EMB_VERSION + 1).to_le_bytes());
    assert!(matches!(decode_embed_net(&buf), Err(FormatError::Version(_))));
}

#[test]
fn statistical_models_round_trip_exactly() {
    let gmm = DiagGmm::new(
        vec![0.25, 0.75],
        Matrix::from_vec(2, 3, vec![0.1, -0.2, 0.3, 1.0, 2.0, 3.0]).unwrap(),
        Matrix::from_vec(2, 3, vec![1.0, 0.5, 0.25, 2.0, 1.5, 1.0 / 3.0]).unwrap(),
    )
    .unwrap();
    assert_eq!(decode_gmm(&encode_gmm(&gmm)).unwrap(), gmm);

    let t = Matrix::from_vec(6, 2, (0..12).map(|i| i as f64 / 7.0).collect()).unwrap();
    let tvm = TotalVariabilityModel::new(2, 3, t, vec![0.1; 6], vec![1.0 / 3.0; 6]).unwrap();
    assert_eq!(decode_tvm(&encode_tvm(&tvm), 2).unwrap(), tvm);
    assert!(decode_tvm(&encode_tvm(&tvm), 4).is_err());

    let plda = PldaModel::new(
        vec![0.5, -0.5],
        Matrix::from_vec(2, 1, vec![1.0, 0.3]).unwrap(),
        Matrix::from_vec(2, 2, vec![1.0, 0.1, 0.1, 2.0]).unwrap(),
    )
    .unwrap();
    let back = decode_plda(&encode_plda(&plda)).unwrap();
    assert_eq!(back.speaker_subspace(), plda.speaker_subspace());
    assert_eq!(back.within_var(), plda.within_var());
    assert_eq!(back.global_mean(), plda.global_mean());

    let pre = Preprocessor { mean: vec![1.0, 2.0], whitener: Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 0.5]).unwrap() };
    assert_eq!(decode_preprocessor(&encode_preprocessor(&pre)).unwrap(), pre);
}

proptest! {
    #[test]
    fn f32_frames_round_trip_exactly(
        rows in prop::collection::vec(prop::collection::vec(-1e6f32..1e6, 4), 1..40),
        period in 0.001f32..0.1,
    ) {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&x| x as f64).collect()).collect();
        let seq = AcousticFrameSequence::from_rows(&rows, period as f64).unwrap();
        let back = decode_frames(&encode_frames(&seq)).unwrap();
        prop_assert_eq!(back, seq);
    }

    #[test]
    fn vector_files_round_trip(vectors in prop::collection::vec(prop::collection::vec(-100f32..100.0, 6), 1..20)) {
        let vectors: Vec<Vec<f64>> = vectors.iter().map(|r| r.iter().map(|&x| x as f64).collect()).collect();
        prop_assert_eq!(decode_vectors(&encode_vectors(&vectors)).unwrap(), vectors);
    }
}
