//! The staged experiment pipeline.
//!
//! Every stage is split into units, each owning one directory under the output
//! root. A unit writes a `stamp` file last: a digest of its configuration and
//! of its upstream stamps, followed by the artifacts it produced. `run_all`
//! skips a unit whose stamp matches and whose artifacts are all present.
//! Stages always read their inputs back from disk, so a cached run and a fresh
//! one see the same `f32`-rounded data.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use attnspk_core::backend::{apply_preprocess, fit_preprocessor, plda_score, train_plda, PldaTrainConfig};
use attnspk_core::embednet::{
    combine_weights, export_attention_weights, extract_embedding, train_embed_network, EmbedNetParams,
    FrameWeights, LabelledUtterance, TrainConfig, WeightSource,
};
use attnspk_core::eval::{compute_eer, compute_min_cprimary, weight_posterior_correlation};
use attnspk_core::features::{
    append_deltas, compute_mfcc, energy_vad, sliding_cmn, soft_vad_posteriors, AcousticFrameSequence,
    VoicePosteriorSequence,
};
use attnspk_core::ivector::{accumulate_stats, train_tvm, IvectorExtractor, TvmTrainConfig};
use attnspk_core::linalg::Matrix;
use attnspk_core::synth::{generate_corpus, Partition, SynthCorpusConfig};
use attnspk_core::ubm::{train_gmm, DiagGmm, GmmTrainConfig};

use crate::config::{
    derive_seed, digest, fragment, Config, CorpusSource, PosteriorSource, Representation, SystemSpec, WeightKind,
};
use crate::error::{Error, Result};
use crate::format::{self, read_file, write_file};
use crate::report::{AttentionSummary, Metrics, Report, SystemRow};
use crate::text::{self, ManifestEntry, ScoreLine, TrialKey};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Synth,
    Features,
    TrainEmbed,
    TrainUbm,
    TrainTvm,
    Extract,
    Backend,
    Score,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Synth,
        Stage::Features,
        Stage::TrainEmbed,
        Stage::TrainUbm,
        Stage::TrainTvm,
        Stage::Extract,
        Stage::Backend,
        Stage::Score,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Features => "features",
            Stage::TrainEmbed => "train-embed",
            Stage::TrainUbm => "train-ubm",
            Stage::TrainTvm => "train-tvm",
            Stage::Extract => "extract",
            Stage::Backend => "backend",
            Stage::Score => "score",
            Stage::Report => "report",
        }
    }
}

const STAMP: &str = "stamp";

/// Directory name of a soft-VAD variant.
pub fn variant_dir(soft_vad: bool) -> &'static str {
    if soft_vad {
        "svad"
    } else {
        "base"
    }
}

/// Collects the files a unit writes so the stamp can list them.
struct Unit {
    dir: PathBuf,
    written: Vec<String>,
}

impl Unit {
    fn path(&mut self, rel: &str) -> PathBuf {
        self.written.push(rel.to_owned());
        self.dir.join(rel)
    }

    fn put(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(rel);
        write_file(&p, bytes)
    }
}

pub struct Pipeline {
    cfg: Config,
    out: PathBuf,
    progress: bool,
}

impl Pipeline {
    pub fn new(cfg: Config, out: impl Into<PathBuf>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, out: out.into(), progress: false })
    }

    /// Print one line per unit to stderr.
    pub fn with_progress(mut self, on: bool) -> Self {
        self.progress = on;
        self
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    /// Runs every stage, reusing units whose stamps still match.
    pub fn run_all(&self) -> Result<Report> {
        for stage in Stage::ALL {
            self.run_stage(stage, false)?;
        }
        self.report()
    }

    /// Runs one stage. With `force`, its units are rebuilt even if cached;
    /// upstream stages are never run implicitly.
    pub fn run_stage(&self, stage: Stage, force: bool) -> Result<()> {
        match stage {
            Stage::Synth => self.corpus(force),
            Stage::Features => self.features(force),
            Stage::TrainEmbed => self.networks().iter().try_for_each(|n| self.train_embed(n, force)),
            Stage::TrainUbm if self.uses_ivectors() => self.train_ubm(force),
            Stage::TrainTvm if self.uses_ivectors() => self.train_tvm(force),
            Stage::TrainUbm | Stage::TrainTvm => Ok(()),
            Stage::Extract => {
                for net in self.weight_sources() {
                    self.export_weights(&net, force)?;
                }
                self.each_variant(|s, sv| self.extract(s, sv, force))
            }
            Stage::Backend => self.each_variant(|s, sv| self.backend(s, sv, force)),
            Stage::Score => self.each_variant(|s, sv| self.score(s, sv, force)),
            Stage::Report => {
                let report = self.report()?;
                let dir = self.out.join("report");
                write_file(&dir.join("report.txt"), report.to_text().as_bytes())?;
                write_file(&dir.join("report.kv"), report.to_kv().as_bytes())
            }
        }
    }

    /// Exports the attention weights of `network` for every utterance as
    /// `FWT1` files under `weights/<network>/`, for use by other systems.
    pub fn cross_apply_weights(&self, network: &str) -> Result<()> {
        self.export_weights(network, true)
    }

    fn each_variant(&self, mut f: impl FnMut(&SystemSpec, bool) -> Result<()>) -> Result<()> {
        for s in &self.cfg.systems {
            for &sv in self.cfg.soft_vad.variants() {
                f(s, sv)?;
            }
        }
        Ok(())
    }

    fn uses_ivectors(&self) -> bool {
        self.cfg.systems.iter().any(|s| s.representation == Representation::Ivector)
    }

    fn networks(&self) -> BTreeSet<String> {
        let mut nets = BTreeSet::new();
        for s in &self.cfg.systems {
            nets.extend(s.network.clone());
            nets.extend(s.attention_network().map(str::to_owned));
        }
        nets
    }

    fn weight_sources(&self) -> BTreeSet<String> {
        self.cfg
            .systems
            .iter()
            .filter(|s| s.weights == WeightKind::External)
            .filter_map(|s| s.weight_source.clone())
            .collect()
    }

    // ---- unit bookkeeping ----

    fn unit(
        &self,
        stage: Stage,
        rel: &str,
        key: &[&str],
        force: bool,
        build: impl FnOnce(&mut Unit) -> Result<()>,
    ) -> Result<()> {
        let dir = self.out.join(rel);
        let mut parts = vec![stage.name(), rel];
        parts.extend_from_slice(key);
        let stamp = digest(&parts);
        if !force && is_fresh(&dir, &stamp) {
            self.note(stage, rel, "cached");
            return Ok(());
        }
        let stamp_path = dir.join(STAMP);
        if stamp_path.exists() {
            fs::remove_file(&stamp_path).map_err(|e| Error::io(&stamp_path, e))?;
        }
        let mut unit = Unit { dir, written: Vec::new() };
        build(&mut unit)?;
        let mut body = stamp;
        body.push('\n');
        for w in &unit.written {
            body.push_str(w);
            body.push('\n');
        }
        write_file(&stamp_path, body.as_bytes())?;
        self.note(stage, rel, "built");
        Ok(())
    }

    fn note(&self, stage: Stage, rel: &str, what: &str) {
        if self.progress {
            eprintln!("{:<12} {rel:<28} {what}", stage.name());
        }
    }

    /// Stamp of a finished upstream unit.
    fn upstream(&self, stage: Stage, rel: &str) -> Result<String> {
        let path = self.out.join(rel).join(STAMP);
        match fs::read_to_string(&path) {
            Ok(s) => Ok(s.lines().next().unwrap_or_default().to_owned()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(Error::MissingArtifact { stage: stage.name(), path })
            }
            Err(e) => Err(Error::io(&path, e)),
        }
    }

    fn need(&self, stage: Stage, path: PathBuf) -> Result<PathBuf> {
        if path.exists() {
            Ok(path)
        } else {
            Err(Error::MissingArtifact { stage: stage.name(), path })
        }
    }

    fn load<T>(&self, stage: Stage, path: PathBuf, decode: impl FnOnce(&[u8]) -> format::FResult<T>) -> Result<T> {
        read_file(&self.need(stage, path)?, decode)
    }

    fn manifest(&self) -> Result<Vec<ManifestEntry>> {
        text::read_manifest(&self.need(Stage::Synth, self.out.join("corpus/manifest.txt"))?)
    }

    fn trials(&self) -> Result<Vec<TrialKey>> {
        text::read_trials(&self.need(Stage::Synth, self.out.join("corpus/trials.txt"))?)
    }

    fn frames(&self, id: &str) -> Result<AcousticFrameSequence> {
        self.load(Stage::Features, self.out.join(format!("features/{id}.afs")), format::decode_frames)
    }

    fn posteriors(&self, id: &str) -> Result<VoicePosteriorSequence> {
        self.load(Stage::Features, self.out.join(format!("features/{id}.vps")), format::decode_posteriors)
    }

    fn embed_net(&self, name: &str) -> Result<EmbedNetParams> {
        self.load(Stage::TrainEmbed, self.out.join(format!("embed/{name}/model.emb")), format::decode_embed_net)
    }

    fn ubm(&self) -> Result<DiagGmm> {
        self.load(Stage::TrainUbm, self.out.join("ubm/ubm.gmm"), format::decode_gmm)
    }

    fn seed(&self, tag: &str) -> u64 {
        derive_seed(self.cfg.seed, tag)
    }

    // ---- stages ----

    fn corpus(&self, force: bool) -> Result<()> {
        let c = &self.cfg.corpus;
        let mut key = vec![fragment(&c.source), self.cfg.seed.to_string()];
        match c.source {
            CorpusSource::Synth => key.push(fragment(&c.synth)),
            CorpusSource::Wav => {
                let list = c.wav_list.as_deref().expect("validated");
                let body = fs::read_to_string(list).map_err(|e| Error::io(list, e))?;
                key.extend([fragment(&c.frontend), body]);
            }
        }
        let key: Vec<&str> = key.iter().map(String::as_str).collect();
        self.unit(Stage::Synth, "corpus", &key, force, |u| match c.source {
            CorpusSource::Synth => {
                let cfg = SynthCorpusConfig { seed: self.seed("synth"), ..c.synth.clone() };
                self.write_synth(u, &cfg)
            }
            CorpusSource::Wav => self.write_wav_corpus(u, c.wav_list.as_deref().expect("validated")),
        })
    }

    fn write_synth(&self, u: &mut Unit, cfg: &SynthCorpusConfig) -> Result<()> {
        let corpus = generate_corpus(cfg)?;
        let mut manifest = Vec::with_capacity(corpus.utterances.len());
        for utt in &corpus.utterances {
            u.put(&format!("raw/{}.afs", utt.id), &format::encode_frames(&utt.frames))?;
            let truth = VoicePosteriorSequence::new(utt.voice.iter().map(|&v| f64::from(u8::from(v))).collect())?;
            u.put(&format!("truth/{}.vps", utt.id), &format::encode_posteriors(&truth, utt.frames.frame_period()))?;
            manifest.push(ManifestEntry {
                id: utt.id.clone(),
                speaker: utt.speaker,
                partition: utt.partition,
                noise_type: utt.noise_type,
            });
        }
        let trials: Vec<TrialKey> = corpus
            .trials()
            .into_iter()
            .map(|(e, t, target)| TrialKey {
                enroll: corpus.utterances[e].id.clone(),
                test: corpus.utterances[t].id.clone(),
                target,
            })
            .collect();
        text::write_manifest(&u.path("manifest.txt"), &manifest)?;
        text::write_trials(&u.path("trials.txt"), &trials)
    }

    fn write_wav_corpus(&self, u: &mut Unit, list: &Path) -> Result<()> {
        let body = fs::read_to_string(list).map_err(|e| Error::io(list, e))?;
        let base = list.parent().unwrap_or(Path::new("."));
        let mut speakers: BTreeMap<String, usize> = BTreeMap::new();
        let mut manifest = Vec::new();
        for (n, line) in body.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: String| Error::Parse { path: list.to_path_buf(), line: n + 1, msg };
            let f: Vec<&str> = line.split_whitespace().collect();
            let [id, speaker, partition, wav] = f[..] else {
                return Err(bad(format!("expected 4 fields, found {}", f.len())));
            };
            let partition = match partition {
                "train" => Partition::Train,
                "enroll" => Partition::Enroll,
                "test" => Partition::Test,
                other => return Err(bad(format!("unknown partition {other:?}"))),
            };
            let next = speakers.len();
            let speaker = *speakers.entry(speaker.to_owned()).or_insert(next);
            let wave = crate::wav::read_wav(&base.join(wav))?;
            let frames = compute_mfcc(&wave, &self.cfg.corpus.frontend)?;
            u.put(&format!("raw/{id}.afs"), &format::encode_frames(&frames))?;
            manifest.push(ManifestEntry { id: id.to_owned(), speaker, partition, noise_type: None });
        }
        let mut trials = Vec::new();
        for e in manifest.iter().filter(|m| m.partition == Partition::Enroll) {
            for t in manifest.iter().filter(|m| m.partition == Partition::Test) {
                trials.push(TrialKey { enroll: e.id.clone(), test: t.id.clone(), target: e.speaker == t.speaker });
            }
        }
        text::write_manifest(&u.path("manifest.txt"), &manifest)?;
        text::write_trials(&u.path("trials.txt"), &trials)
    }

    fn features(&self, force: bool) -> Result<()> {
        let up = self.upstream(Stage::Synth, "corpus")?;
        let key = fragment(&self.cfg.features);
        self.unit(Stage::Features, "features", &[&key, &up], force, |u| {
            let f = &self.cfg.features;
            for e in self.manifest()? {
                let raw = self.load(Stage::Synth, self.out.join(format!("corpus/raw/{}.afs", e.id)), format::decode_frames)?;
                let mut q = match f.posteriors {
                    PosteriorSource::Energy => soft_vad_posteriors(&raw, &f.soft_vad)?,
                    PosteriorSource::External => {
                        let dir = f.posterior_dir.as_deref().expect("validated");
                        let path = dir.join(format!("{}.vps", e.id));
                        let q = read_file(&path, format::decode_posteriors)?;
                        if q.len() != raw.len() {
                            return Err(Error::Config(format!(
                                "{}: {} posteriors for {} frames",
                                path.display(),
                                q.len(),
                                raw.len()
                            )));
                        }
                        q
                    }
                };
                let mut x = raw.clone();
                if let Some(w) = f.cmn_window_s {
                    x = sliding_cmn(&x, w)?;
                }
                if f.deltas {
                    x = append_deltas(&x)?;
                }
                if f.energy_vad {
                    let mask = energy_vad(&raw, &f.vad)?;
                    x = mask.apply(&x)?;
                    q = VoicePosteriorSequence::new(mask.select(q.values())?)?;
                }
                u.put(&format!("{}.afs", e.id), &format::encode_frames(&x))?;
                u.put(&format!("{}.vps", e.id), &format::encode_posteriors(&q, x.frame_period()))?;
            }
            Ok(())
        })
    }

    fn train_embed(&self, name: &str, force: bool) -> Result<()> {
        let net = self.cfg.network(name)?;
        let up = self.upstream(Stage::Features, "features")?;
        let rel = format!("embed/{name}");
        let key = fragment(net);
        let seed = self.seed(&rel).to_string();
        self.unit(Stage::TrainEmbed, &rel, &[&key, &seed, &up], force, |u| {
            let entries: Vec<ManifestEntry> =
                self.manifest()?.into_iter().filter(|e| e.partition == Partition::Train).collect();
            let labels = dense_labels(entries.iter().map(|e| e.speaker));
            let frames = entries.iter().map(|e| self.frames(&e.id)).collect::<Result<Vec<_>>>()?;
            let data: Vec<LabelledUtterance> = frames
                .iter()
                .zip(&labels.0)
                .map(|(f, &speaker)| LabelledUtterance { frames: f, speaker })
                .collect();
            let dim = frames.first().map_or(0, |f| f.dim());
            let arch = net.arch(dim, labels.1);
            let tc = TrainConfig { seed: self.seed(&rel), ..net.train.clone() };
            let (params, rep) = train_embed_network(&data, &arch, &tc)?;
            u.put("model.emb", &format::encode_embed_net(&params))?;
            let mut log = String::from("# epoch loss accuracy\n");
            for (i, (l, a)) in rep.epoch_loss.iter().zip(&rep.epoch_accuracy).enumerate() {
                writeln!(log, "{} {l} {a}", i + 1).unwrap();
            }
            u.put("train.txt", log.as_bytes())
        })
    }

    fn train_ubm(&self, force: bool) -> Result<()> {
        let up = self.upstream(Stage::Features, "features")?;
        let key = fragment(&self.cfg.ubm);
        let seed = self.seed("ubm").to_string();
        self.unit(Stage::TrainUbm, "ubm", &[&key, &seed, &up], force, |u| {
            let mut rows: Vec<Vec<f64>> = Vec::new();
            for e in self.manifest()?.iter().filter(|e| e.partition == Partition::Train) {
                rows.extend(self.frames(&e.id)?.iter().map(<[f64]>::to_vec));
            }
            let c = &self.cfg.ubm;
            let gc = GmmTrainConfig { components: c.components, iters: c.iters, seed: self.seed("ubm"), kmeans_iters: c.kmeans_iters };
            let gmm = train_gmm(&Matrix::from_rows(&rows)?, &gc)?.gmm;
            u.put("ubm.gmm", &format::encode_gmm(&gmm))
        })
    }

    fn train_tvm(&self, force: bool) -> Result<()> {
        let ups = [self.upstream(Stage::Features, "features")?, self.upstream(Stage::TrainUbm, "ubm")?];
        let key = fragment(&self.cfg.tvm);
        let seed = self.seed("tvm").to_string();
        self.unit(Stage::TrainTvm, "tvm", &[&key, &seed, &ups[0], &ups[1]], force, |u| {
            let ubm = self.ubm()?;
            let stats = self
                .manifest()?
                .iter()
                .filter(|e| e.partition == Partition::Train)
                .map(|e| Ok(accumulate_stats(&self.frames(&e.id)?, &ubm, None)?))
                .collect::<Result<Vec<_>>>()?;
            let tc = TvmTrainConfig { rank: self.cfg.tvm.rank, iters: self.cfg.tvm.iters, seed: self.seed("tvm") };
            let tvm = train_tvm(&stats, &ubm, &tc)?.tvm;
            u.put("tvm.tvm", &format::encode_tvm(&tvm))
        })
    }

    fn export_weights(&self, name: &str, force: bool) -> Result<()> {
        if !self.cfg.network(name)?.attentive {
            return Err(Error::Config(format!("network {name:?} has no attention model to export")));
        }
        let rel = format!("weights/{name}");
        let ups = [self.upstream(Stage::Features, "features")?, self.upstream(Stage::TrainEmbed, &format!("embed/{name}"))?];
        self.unit(Stage::Extract, &rel, &[&ups[0], &ups[1]], force, |u| {
            let net = self.embed_net(name)?;
            for e in self.manifest()? {
                let alpha = export_attention_weights(&self.frames(&e.id)?, &net)?;
                u.put(&format!("{}.fwt", e.id), &format::encode_weights(&alpha))?;
            }
            Ok(())
        })
    }

    fn external_weights(&self, source: &str, id: &str) -> Result<FrameWeights> {
        self.load(Stage::Extract, self.out.join(format!("weights/{source}/{id}.fwt")), format::decode_weights)
    }

    fn extract(&self, sys: &SystemSpec, sv: bool, force: bool) -> Result<()> {
        let mut ups = vec![self.upstream(Stage::Features, "features")?];
        match (&sys.representation, &sys.network) {
            (Representation::Xvector, Some(net)) => ups.push(self.upstream(Stage::TrainEmbed, &format!("embed/{net}"))?),
            _ => {
                ups.push(self.upstream(Stage::TrainUbm, "ubm")?);
                ups.push(self.upstream(Stage::TrainTvm, "tvm")?);
            }
        }
        if sys.weights == WeightKind::External {
            let src = sys.weight_source.as_deref().expect("validated");
            ups.push(self.upstream(Stage::Extract, &format!("weights/{src}"))?);
        }
        let rel = format!("vectors/{}/{}", sys.id, variant_dir(sv));
        let mut key = vec![fragment(sys), sv.to_string()];
        key.extend(ups);
        let key: Vec<&str> = key.iter().map(String::as_str).collect();
        self.unit(Stage::Extract, &rel, &key, force, |u| {
            let entries = self.manifest()?;
            let mut vectors = Vec::with_capacity(entries.len());
            match sys.representation {
                Representation::Xvector => {
                    let net = self.embed_net(sys.network.as_deref().expect("validated"))?;
                    for e in &entries {
                        let x = self.frames(&e.id)?;
                        let src = self.weight_source(sys, sv, &e.id, &x, &net)?;
                        vectors.push(extract_embedding(&x, &net, &src)?.x);
                    }
                }
                Representation::Ivector => {
                    let ubm = self.ubm()?;
                    let tvm = self.load(Stage::TrainTvm, self.out.join("tvm/tvm.tvm"), |b| {
                        format::decode_tvm(b, ubm.num_components())
                    })?;
                    let ex = IvectorExtractor::new(&tvm);
                    for e in &entries {
                        let x = self.frames(&e.id)?;
                        let mut w = match sys.weights {
                            WeightKind::External => Some(self.external_weights(sys.weight_source.as_deref().unwrap(), &e.id)?),
                            _ => None,
                        };
                        if sv {
                            let base = match w {
                                Some(w) => w,
                                None => FrameWeights::uniform(x.len())?,
                            };
                            w = Some(combine_weights(&base, &self.posteriors(&e.id)?)?);
                        }
                        vectors.push(ex.extract(&accumulate_stats(&x, &ubm, w.as_ref())?)?.phi);
                    }
                }
            }
            u.put("vectors.afs", &format::encode_vectors(&vectors))?;
            let ids: Vec<String> = entries.into_iter().map(|e| e.id).collect();
            text::write_ids(&u.path("ids.txt"), &ids)
        })
    }

    fn weight_source(
        &self,
        sys: &SystemSpec,
        sv: bool,
        id: &str,
        x: &AcousticFrameSequence,
        net: &EmbedNetParams,
    ) -> Result<WeightSource> {
        let base = match sys.weights {
            WeightKind::Uniform => None,
            WeightKind::Internal if !sv => return Ok(WeightSource::Internal),
            WeightKind::Internal => Some(export_attention_weights(x, net)?),
            WeightKind::External => Some(self.external_weights(sys.weight_source.as_deref().unwrap(), id)?),
        };
        Ok(match (base, sv) {
            (None, false) => WeightSource::Uniform,
            (Some(w), false) => WeightSource::External(w),
            (base, true) => {
                let base = match base {
                    Some(w) => w,
                    None => FrameWeights::uniform(x.len())?,
                };
                WeightSource::External(combine_weights(&base, &self.posteriors(id)?)?)
            }
        })
    }

    fn vectors(&self, sys: &str, sv: bool) -> Result<BTreeMap<String, Vec<f64>>> {
        let dir = self.out.join(format!("vectors/{sys}/{}", variant_dir(sv)));
        let vecs = self.load(Stage::Extract, dir.join("vectors.afs"), format::decode_vectors)?;
        let ids = text::read_ids(&self.need(Stage::Extract, dir.join("ids.txt"))?)?;
        if ids.len() != vecs.len() {
            return Err(Error::Config(format!("{}: {} ids for {} vectors", dir.display(), ids.len(), vecs.len())));
        }
        Ok(ids.into_iter().zip(vecs).collect())
    }

    fn backend(&self, sys: &SystemSpec, sv: bool, force: bool) -> Result<()> {
        let var = variant_dir(sv);
        let ups = [self.upstream(Stage::Synth, "corpus")?, self.upstream(Stage::Extract, &format!("vectors/{}/{var}", sys.id))?];
        let rel = format!("backend/{}/{var}", sys.id);
        let key = fragment(&self.cfg.backend);
        let seed = self.seed("backend").to_string();
        self.unit(Stage::Backend, &rel, &[&key, &seed, &ups[0], &ups[1]], force, |u| {
            let vecs = self.vectors(&sys.id, sv)?;
            let train: Vec<ManifestEntry> =
                self.manifest()?.into_iter().filter(|e| e.partition == Partition::Train).collect();
            let raw = train
                .iter()
                .map(|e| {
                    vecs.get(&e.id)
                        .cloned()
                        .ok_or_else(|| Error::Config(format!("no vector for training utterance {}", e.id)))
                })
                .collect::<Result<Vec<_>>>()?;
            let (labels, n_speakers) = dense_labels(train.iter().map(|e| e.speaker));
            let pre = fit_preprocessor(&raw)?;
            let data = raw.iter().map(|v| apply_preprocess(v, &pre)).collect::<Result<Vec<_>, _>>()?;
            let c = &self.cfg.backend;
            let speaker_dim = c.speaker_dim.min(pre.dim()).min(n_speakers.saturating_sub(1)).max(1);
            let pc = PldaTrainConfig { speaker_dim, iters: c.iters, seed: self.seed("backend") };
            let plda = train_plda(&data, &labels, &pc)?.model;
            u.put("pre.pre", &format::encode_preprocessor(&pre))?;
            u.put("plda.pld", &format::encode_plda(&plda))
        })
    }

    fn score(&self, sys: &SystemSpec, sv: bool, force: bool) -> Result<()> {
        let var = variant_dir(sv);
        let ups = [
            self.upstream(Stage::Synth, "corpus")?,
            self.upstream(Stage::Extract, &format!("vectors/{}/{var}", sys.id))?,
            self.upstream(Stage::Backend, &format!("backend/{}/{var}", sys.id))?,
        ];
        let rel = format!("scores/{}/{var}", sys.id);
        self.unit(Stage::Score, &rel, &[&ups[0], &ups[1], &ups[2]], force, |u| {
            let dir = self.out.join(format!("backend/{}/{var}", sys.id));
            let pre = self.load(Stage::Backend, dir.join("pre.pre"), format::decode_preprocessor)?;
            let plda = self.load(Stage::Backend, dir.join("plda.pld"), format::decode_plda)?;
            let mut vecs = self.vectors(&sys.id, sv)?;
            for v in vecs.values_mut() {
                *v = apply_preprocess(v, &pre)?;
            }
            let get = |id: &str| vecs.get(id).ok_or_else(|| Error::Config(format!("trial names unknown utterance {id}")));
            let scores = self
                .trials()?
                .into_iter()
                .map(|t| {
                    let score = plda_score(get(&t.enroll)?, get(&t.test)?, &plda)?;
                    Ok(ScoreLine { enroll: t.enroll, test: t.test, score })
                })
                .collect::<Result<Vec<_>>>()?;
            text::write_scores(&u.path("scores.txt"), &scores)
        })
    }

    /// Metrics for every configured system and soft-VAD variant, plus the
    /// attention/ground-truth alignment of every exported network.
    pub fn report(&self) -> Result<Report> {
        let trials = self.trials()?;
        let variants = self.cfg.soft_vad.variants().to_vec();
        let mut rows = Vec::new();
        for sys in &self.cfg.systems {
            let mut metrics = Vec::new();
            for &sv in &variants {
                let path = self.out.join(format!("scores/{}/{}/scores.txt", sys.id, variant_dir(sv)));
                let scores = text::read_scores(&self.need(Stage::Score, path)?)?;
                let set = text::label_scores(&trials, &scores)?;
                metrics.push(Metrics { eer: compute_eer(&set)?, min_cprimary: compute_min_cprimary(&set)? });
            }
            rows.push(SystemRow { id: sys.id.clone(), representation: sys.representation, metrics });
        }
        let mut attention = Vec::new();
        for net in self.weight_sources() {
            if let Some(a) = self.attention_alignment(&net)? {
                attention.push(a);
            }
        }
        Ok(Report { soft_vad: variants, rows, attention })
    }

    /// Compares exported weights against ground-truth voice labels on the test
    /// partition; `None` when the corpus carries no ground truth.
    fn attention_alignment(&self, net: &str) -> Result<Option<AttentionSummary>> {
        let mut summary = AttentionSummary { network: net.to_owned(), utterances: 0, aligned: 0, correlation: 0.0 };
        for e in self.manifest()?.iter().filter(|e| e.partition == Partition::Test) {
            let truth_path = self.out.join(format!("corpus/truth/{}.vps", e.id));
            if !truth_path.exists() {
                return Ok(None);
            }
            let truth = read_file(&truth_path, format::decode_posteriors)?;
            let alpha = self.external_weights(net, &e.id)?;
            if alpha.len() != truth.len() {
                return Ok(None);
            }
            let (mut voice, mut noise) = ((0.0, 0usize), (0.0, 0usize));
            for (&a, &q) in alpha.values().iter().zip(truth.values()) {
                let acc = if q > 0.5 { &mut voice } else { &mut noise };
                acc.0 += a;
                acc.1 += 1;
            }
            if voice.1 == 0 || noise.1 == 0 {
                continue;
            }
            summary.utterances += 1;
            if noise.0 / (noise.1 as f64) < voice.0 / (voice.1 as f64) {
                summary.aligned += 1;
            }
            summary.correlation += weight_posterior_correlation(&alpha, &truth)?;
        }
        if summary.utterances == 0 {
            return Ok(None);
        }
        summary.correlation /= summary.utterances as f64;
        Ok(Some(summary))
    }
}

fn is_fresh(dir: &Path, stamp: &str) -> bool {
    let Ok(body) = fs::read_to_string(dir.join(STAMP)) else {
        return false;
    };
    let mut lines = body.lines();
    lines.next() == Some(stamp) && lines.all(|rel| dir.join(rel).exists())
}

/// Maps arbitrary speaker labels to `0..n` in sorted order.
fn dense_labels(speakers: impl Iterator<Item = usize> + Clone) -> (Vec<usize>, usize) {
    let index: BTreeMap<usize, usize> =
        speakers.clone().collect::<BTreeSet<_>>().into_iter().enumerate().map(|(i, s)| (s, i)).collect();
    (speakers.map(|s| index[&s]).collect(), index.len())
}
