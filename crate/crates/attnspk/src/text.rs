//! Whitespace-separated text files: trial lists, score files, id sidecars and the corpus manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use attnspk_core::eval::{Trial, TrialScoreSet};
use attnspk_core::synth::Partition;

use crate::error::{Error, Result};
use crate::format::write_file;

/// `<enroll_id> <test_id>` with its target flag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrialKey {
    pub enroll: String,
    pub test: String,
    pub target: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreLine {
    pub enroll: String,
    pub test: String,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub speaker: usize,
    pub partition: Partition,
    pub noise_type: Option<usize>,
}

fn partition_name(p: Partition) -> &'static str {
    match p {
        Partition::Train => "train",
        Partition::Enroll => "enroll",
        Partition::Test => "test",
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| (i + 1, l.split_whitespace().map(str::to_owned).collect()))
        .collect())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

fn fields<const N: usize>(path: &Path, line: usize, f: Vec<String>) -> Result<[String; N]> {
    let n = f.len();
    f.try_into().map_err(|_| parse_err(path, line, format!("expected {N} fields, found {n}")))
}

fn parse_num<T: FromStr>(path: &Path, line: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| parse_err(path, line, format!("cannot parse {s:?}")))
}

pub fn write_trials(path: &Path, trials: &[TrialKey]) -> Result<()> {
    let mut out = String::new();
    for t in trials {
        let label = if t.target { "target" } else { "nontarget" };
        writeln!(out, "{} {} {label}", t.enroll, t.test).unwrap();
    }
    write_file(path, out.as_bytes())
}

pub fn read_trials(path: &Path) -> Result<Vec<TrialKey>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, f)| {
            let [enroll, test, label] = fields(path, n, f)?;
            let target = match label.as_str() {
                "target" => true,
                "nontarget" => false,
                other => return Err(parse_err(path, n, format!("unknown label {other:?}"))),
            };
            Ok(TrialKey { enroll, test, target })
        })
        .collect()
}

pub fn write_scores(path: &Path, scores: &[ScoreLine]) -> Result<()> {
    let mut out = String::new();
    for s in scores {
        writeln!(out, "{} {} {}", s.enroll, s.test, s.score).unwrap();
    }
    write_file(path, out.as_bytes())
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreLine>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, f)| {
            let [enroll, test, score] = fields(path, n, f)?;
            let score: f64 = parse_num(path, n, &score)?;
            if !score.is_finite() {
                return Err(parse_err(path, n, "score is not finite"));
            }
            Ok(ScoreLine { enroll, test, score })
        })
        .collect()
}

/// Joins scores with trial labels; every trial must have exactly one score.
pub fn label_scores(trials: &[TrialKey], scores: &[ScoreLine]) -> Result<TrialScoreSet> {
    use std::collections::HashMap;
    let mut by_pair: HashMap<(&str, &str), f64> = HashMap::with_capacity(scores.len());
    for s in scores {
        if by_pair.insert((&s.enroll, &s.test), s.score).is_some() {
            return Err(Error::Config(format!("duplicate score for {} {}", s.enroll, s.test)));
        }
    }
    let entries = trials
        .iter()
        .map(|t| {
            let score = *by_pair
                .get(&(t.enroll.as_str(), t.test.as_str()))
                .ok_or_else(|| Error::Config(format!("no score for trial {} {}", t.enroll, t.test)))?;
            Ok(Trial { enroll: t.enroll.clone(), test: t.test.clone(), score, target: t.target })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialScoreSet::new(entries))
}

pub fn write_ids(path: &Path, ids: &[String]) -> Result<()> {
    let mut out = ids.join("\n");
    if !ids.is_empty() {
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

pub fn read_ids(path: &Path) -> Result<Vec<String>> {
    read_lines(path)?.into_iter().map(|(n, f)| Ok(fields::<1>(path, n, f)?.into_iter().next().unwrap())).collect()
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut out = String::from("# id speaker partition noise_type\n");
    for e in entries {
        let noise = e.noise_type.map_or_else(|| "-".to_owned(), |t| t.to_string());
        writeln!(out, "{} {} {} {noise}", e.id, e.speaker, partition_name(e.partition)).unwrap();
    }
    write_file(path, out.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    read_lines(path)?
        .into_iter()
        .map(|(n, f)| {
            let [id, speaker, partition, noise] = fields(path, n, f)?;
            let partition = match partition.as_str() {
                "train" => Partition::Train,
                "enroll" => Partition::Enroll,
                "test" => Partition::Test,
                other => return Err(parse_err(path, n, format!("unknown partition {other:?}"))),
            };
            let noise_type = if noise == "-" { None } else { Some(parse_num(path, n, &noise)?) };
            Ok(ManifestEntry { id, speaker: parse_num(path, n, &speaker)?, partition, noise_type })
        })
        .collect()
}
