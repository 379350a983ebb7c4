//! Experiment configuration, read from a TOML file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use attnspk_core::embednet::{EmbedNetConfig, TrainConfig};
use attnspk_core::features::{FrontEndConfig, SoftVadConfig, VadConfig};
use attnspk_core::synth::SynthCorpusConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Master seed; every stage derives its own seed from it.
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub features: FeatureConfig,
    pub networks: BTreeMap<String, NetworkConfig>,
    pub ubm: UbmConfig,
    pub tvm: TvmConfig,
    pub backend: BackendConfig,
    pub soft_vad: SoftVadMode,
    pub systems: Vec<SystemSpec>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusSource {
    #[default]
    Synth,
    /// A list of `<id> <speaker> <train|enroll|test> <path.wav>` lines.
    Wav,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub source: CorpusSource,
    pub synth: SynthCorpusConfig,
    pub wav_list: Option<PathBuf>,
    pub frontend: FrontEndConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            source: CorpusSource::Synth,
            synth: SynthCorpusConfig::default(),
            wav_list: None,
            frontend: FrontEndConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosteriorSource {
    /// Logistic on the energy column.
    #[default]
    Energy,
    /// `VPS1` files named `<id>.vps` in `posterior_dir`.
    External,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Sliding mean normalization window in seconds; absent disables it.
    pub cmn_window_s: Option<f64>,
    pub deltas: bool,
    /// Drop frames rejected by the energy detector.
    pub energy_vad: bool,
    pub vad: VadConfig,
    pub posteriors: PosteriorSource,
    pub posterior_dir: Option<PathBuf>,
    pub soft_vad: SoftVadConfig,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            cmn_window_s: None,
            deltas: false,
            energy_vad: false,
            vad: VadConfig::default(),
            posteriors: PosteriorSource::Energy,
            posterior_dir: None,
            soft_vad: SoftVadConfig { offset: -0.2, ..SoftVadConfig::default() },
        }
    }
}

/// Layer sizes of an embedding network; input width and speaker count come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub attentive: bool,
    pub tdnn_contexts: Vec<Vec<isize>>,
    pub tdnn_dims: Vec<usize>,
    pub attention_dim: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub train: TrainConfig,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::desk(false)
    }
}

impl NetworkConfig {
    pub fn desk(attentive: bool) -> Self {
        let arch = EmbedNetConfig::desk(1, 2, attentive);
        Self {
            attentive,
            tdnn_contexts: arch.tdnn_contexts,
            tdnn_dims: arch.tdnn_dims,
            attention_dim: arch.attention_dim,
            embed_dim: arch.embed_dim,
            hidden_dim: arch.hidden_dim,
            train: TrainConfig { epochs: 20, ..TrainConfig::default() },
        }
    }

    pub fn arch(&self, input_dim: usize, num_speakers: usize) -> EmbedNetConfig {
        EmbedNetConfig {
            input_dim,
            tdnn_contexts: self.tdnn_contexts.clone(),
            tdnn_dims: self.tdnn_dims.clone(),
            attention_dim: self.attention_dim,
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            num_speakers,
            attentive: self.attentive,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UbmConfig {
    pub components: usize,
    pub iters: usize,
    pub kmeans_iters: usize,
}

impl Default for UbmConfig {
    fn default() -> Self {
        Self { components: 16, iters: 20, kmeans_iters: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TvmConfig {
    pub rank: usize,
    pub iters: usize,
}

impl Default for TvmConfig {
    fn default() -> Self {
        Self { rank: 16, iters: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    /// Upper bound on the PLDA speaker subspace; also capped by the vector
    /// dimension and the number of training speakers minus one.
    pub speaker_dim: usize,
    pub iters: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self { speaker_dim: 16, iters: 10 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SoftVadMode {
    Off,
    On,
    #[default]
    Both,
}

impl SoftVadMode {
    pub fn variants(self) -> &'static [bool] {
        match self {
            Self::Off => &[false],
            Self::On => &[true],
            Self::Both => &[false, true],
        }
    }
}

impl FromStr for SoftVadMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "off" => Ok(Self::Off),
            "on" => Ok(Self::On),
            "both" => Ok(Self::Both),
            other => Err(format!("expected on, off or both, got {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Xvector,
    Ivector,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    #[default]
    Uniform,
    /// The frame-feature network's own attention model.
    Internal,
    /// Attention weights exported by `weight_source`.
    External,
}

/// One row of the system matrix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub id: String,
    pub representation: Representation,
    /// Network producing the frame-level features (x-vector systems only).
    #[serde(default)]
    pub network: Option<String>,
    #[serde(default)]
    pub weights: WeightKind,
    #[serde(default)]
    pub weight_source: Option<String>,
}

impl SystemSpec {
    fn xvector(id: &str, network: &str, weights: WeightKind) -> Self {
        let weight_source = (weights == WeightKind::External).then(|| "attentive".to_owned());
        Self {
            id: id.into(),
            representation: Representation::Xvector,
            network: Some(network.into()),
            weights,
            weight_source,
        }
    }

    fn ivector(id: &str, weights: WeightKind) -> Self {
        let weight_source = (weights == WeightKind::External).then(|| "attentive".to_owned());
        Self { id: id.into(), representation: Representation::Ivector, network: None, weights, weight_source }
    }

    /// The network whose attention weights this system consumes, if any.
    pub fn attention_network(&self) -> Option<&str> {
        match self.weights {
            WeightKind::Uniform => None,
            WeightKind::Internal => self.network.as_deref(),
            WeightKind::External => self.weight_source.as_deref(),
        }
    }
}

/// The six systems: x-vectors from the plain and attentive networks with
/// uniform, own or borrowed attention weights, and i-vectors with uniform or
/// borrowed weights.
pub fn default_systems() -> Vec<SystemSpec> {
    use WeightKind::*;
    vec![
        SystemSpec::xvector("S1", "plain", Uniform),
        SystemSpec::xvector("S2", "attentive", Internal),
        SystemSpec::xvector("S3", "plain", External),
        SystemSpec::xvector("S4", "attentive", Uniform),
        SystemSpec::ivector("S5", Uniform),
        SystemSpec::ivector("S6", External),
    ]
}

impl Default for Config {
    fn default() -> Self {
        let networks =
            [("plain".to_owned(), NetworkConfig::desk(false)), ("attentive".to_owned(), NetworkConfig::desk(true))]
                .into_iter()
                .collect();
        Self {
            seed: 0,
            corpus: CorpusConfig::default(),
            features: FeatureConfig::default(),
            networks,
            ubm: UbmConfig::default(),
            tvm: TvmConfig::default(),
            backend: BackendConfig::default(),
            soft_vad: SoftVadMode::Both,
            systems: default_systems(),
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn system(&self, id: &str) -> Result<&SystemSpec> {
        self.systems.iter().find(|s| s.id == id).ok_or_else(|| Error::Config(format!("unknown system {id:?}")))
    }

    pub fn network(&self, name: &str) -> Result<&NetworkConfig> {
        self.networks.get(name).ok_or_else(|| Error::Config(format!("unknown network {name:?}")))
    }

    /// Keeps only the listed systems, in the given order.
    pub fn select_systems(&mut self, ids: &[String]) -> Result<()> {
        let picked = ids.iter().map(|id| self.system(id).cloned()).collect::<Result<Vec<_>>>()?;
        self.systems = picked;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.corpus.source == CorpusSource::Wav && self.corpus.wav_list.is_none() {
            return bad("corpus.source = \"wav\" needs corpus.wav_list".into());
        }
        if self.features.posteriors == PosteriorSource::External && self.features.posterior_dir.is_none() {
            return bad("features.posteriors = \"external\" needs features.posterior_dir".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.systems {
            if !seen.insert(s.id.as_str()) {
                return bad(format!("system {} defined twice", s.id));
            }
            if s.id.is_empty() || s.id.contains(|c: char| c.is_whitespace() || c == '/') {
                return bad(format!("system id {:?} must be a plain word", s.id));
            }
            match s.representation {
                Representation::Xvector => {
                    let Some(net) = &s.network else {
                        return bad(format!("{}: x-vector systems need a network", s.id));
                    };
                    self.network(net)?;
                }
                Representation::Ivector => {
                    if s.network.is_some() {
                        return bad(format!("{}: i-vector systems take no network", s.id));
                    }
                    if s.weights == WeightKind::Internal {
                        return bad(format!("{}: i-vector systems have no attention model of their own", s.id));
                    }
                }
            }
            if s.weights == WeightKind::External && s.weight_source.is_none() {
                return bad(format!("{}: external weights need a weight_source", s.id));
            }
            if let Some(src) = s.attention_network() {
                if !self.network(src)?.attentive {
                    return bad(format!("{}: network {src:?} has no attention model", s.id));
                }
            }
        }
        for (name, n) in &self.networks {
            if name.is_empty() || name.contains(|c: char| c.is_whitespace() || c == '/') {
                return bad(format!("network name {name:?} must be a plain word"));
            }
            if n.tdnn_contexts.len() != n.tdnn_dims.len() {
                return bad(format!("network {name}: {} contexts for {} layers", n.tdnn_contexts.len(), n.tdnn_dims.len()));
            }
        }
        Ok(())
    }
}

/// Hex SHA-256 digest of the given parts, separated so that boundaries matter.
pub fn digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Stage seed derived from the master seed and a tag.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.as_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// TOML fragment of a serializable value, used for stage stamps.
pub fn fragment<T: Serialize + ?Sized>(value: &T) -> String {
    #[derive(Serialize)]
    struct Wrap<'a, T: ?Sized> {
        v: &'a T,
    }
    toml::to_string(&Wrap { v: value }).expect("config fragment serializes")
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Xvector => "x-vector",
            Self::Ivector => "i-vector",
        })
    }
}
