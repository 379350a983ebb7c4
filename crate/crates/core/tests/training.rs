use attnspk_core::embednet::{
    classification_accuracy, export_attention_weights, extract_embedding, train_embed_network, EmbedNetConfig,
    LabelledUtterance, TrainConfig, WeightSource,
};
use attnspk_core::synth::{generate_corpus, SynthCorpus, SynthCorpusConfig};

fn two_speakers() -> SynthCorpus {
    generate_corpus(&SynthCorpusConfig {
        n_speakers: 2,
        n_train_speakers: 2,
        utts_per_speaker: 10,
        frames_per_utt: 150,
        seed: 4,
        ..Default::default()
    })
    .unwrap()
}

fn labelled(c: &SynthCorpus) -> Vec<LabelledUtterance<'_>> {
    c.utterances.iter().map(|u| LabelledUtterance { frames: &u.frames, speaker: u.speaker }).collect()
}

#[test]
fn two_speaker_toy_problem_is_learned() {
    let corpus = two_speakers();
    let data = labelled(&corpus);
    for attentive in [false, true] {
        let arch = EmbedNetConfig::desk(12, 2, attentive);
        let cfg = TrainConfig { epochs: 30, ..Default::default() };
        let (params, report) = train_embed_network(&data, &arch, &cfg).unwrap();
        assert_eq!(report.epoch_loss.len(), 30);
        assert!(report.epoch_loss[29] < report.epoch_loss[0]);
        let acc = classification_accuracy(&params, &data).unwrap();
        assert!(acc >= 0.95, "attentive={attentive}: {acc}");
    }
}

#[test]
fn training_is_reproducible() {
    let corpus = two_speakers();
    let data = labelled(&corpus);
    let arch = EmbedNetConfig::desk(12, 2, true);
    let cfg = TrainConfig { epochs: 3, seed: 9, ..Default::default() };
    let (a, ra) = train_embed_network(&data, &arch, &cfg).unwrap();
    let (b, rb) = train_embed_network(&data, &arch, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    let (c, _) = train_embed_network(&data, &arch, &TrainConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn exported_weights_reproduce_internal_pooling() {
    let corpus = two_speakers();
    let data = labelled(&corpus);
    let arch = EmbedNetConfig::desk(12, 2, true);
    let (params, _) = train_embed_network(&data, &arch, &TrainConfig { epochs: 2, ..Default::default() }).unwrap();
    let utt = &corpus.utterances[3].frames;
    let alpha = export_attention_weights(utt, &params).unwrap();
    assert_eq!(alpha.len(), utt.len());
    let internal = extract_embedding(utt, &params, &WeightSource::Internal).unwrap();
    let external = extract_embedding(utt, &params, &WeightSource::External(alpha)).unwrap();
    for (x, y) in internal.x.iter().zip(&external.x) {
        assert!((x - y).abs() < 1e-10);
    }
}
