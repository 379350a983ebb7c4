//! Result tables: aligned text for people, `key=value` lines for scripts.

use std::fmt::Write as _;

use crate::config::Representation;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    /// Equal error rate as a fraction.
    pub eer: f64,
    pub min_cprimary: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemRow {
    pub id: String,
    pub representation: Representation,
    /// One entry per soft-VAD variant, in the order of [`Report::soft_vad`].
    pub metrics: Vec<Metrics>,
}

/// How exported attention weights line up with ground-truth voice labels.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionSummary {
    pub network: String,
    /// Test utterances containing both voice and noise frames.
    pub utterances: usize,
    /// Of those, how many give noise frames a lower mean weight than voice frames.
    pub aligned: usize,
    /// Mean correlation between weights and ground-truth log-odds.
    pub correlation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub soft_vad: Vec<bool>,
    pub rows: Vec<SystemRow>,
    pub attention: Vec<AttentionSummary>,
}

fn variant_key(sv: bool) -> &'static str {
    if sv {
        "on"
    } else {
        "off"
    }
}

impl Report {
    pub fn metrics(&self, system: &str, soft_vad: bool) -> Option<Metrics> {
        let col = self.soft_vad.iter().position(|&v| v == soft_vad)?;
        self.rows.iter().find(|r| r.id == system).map(|r| r.metrics[col])
    }

    pub fn metric_columns(&self) -> usize {
        2 * self.soft_vad.len()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut group = format!("{:<18}", "");
        let mut head = format!("{:<8}{:<10}", "system", "vector");
        for &sv in &self.soft_vad {
            let title = if sv { "soft VAD" } else { "no soft VAD" };
            write!(group, "  {title:^20}").unwrap();
            write!(head, "  {:>8}  {:>10}", "EER(%)", "minCprim").unwrap();
        }
        writeln!(out, "{}", group.trim_end()).unwrap();
        writeln!(out, "{head}").unwrap();
        for r in &self.rows {
            let mut line = format!("{:<8}{:<10}", r.id, r.representation.to_string());
            for m in &r.metrics {
                write!(line, "  {:>8.2}  {:>10.3}", 100.0 * m.eer, m.min_cprimary).unwrap();
            }
            writeln!(out, "{line}").unwrap();
        }
        for a in &self.attention {
            writeln!(
                out,
                "\nattention {}: noise weighted below voice in {}/{} test utterances, mean correlation {:.3}",
                a.network, a.aligned, a.utterances, a.correlation
            )
            .unwrap();
        }
        out
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let ids: Vec<&str> = self.rows.iter().map(|r| r.id.as_str()).collect();
        let vads: Vec<&str> = self.soft_vad.iter().map(|&v| variant_key(v)).collect();
        writeln!(out, "systems={}", ids.join(",")).unwrap();
        writeln!(out, "soft_vad={}", vads.join(",")).unwrap();
        for r in &self.rows {
            for (m, &sv) in r.metrics.iter().zip(&self.soft_vad) {
                let k = variant_key(sv);
                writeln!(out, "{}.{k}.eer={}", r.id, m.eer).unwrap();
                writeln!(out, "{}.{k}.min_cprimary={}", r.id, m.min_cprimary).unwrap();
            }
        }
        for a in &self.attention {
            writeln!(out, "attention.{}.utterances={}", a.network, a.utterances).unwrap();
            writeln!(out, "attention.{}.aligned={}", a.network, a.aligned).unwrap();
            writeln!(out, "attention.{}.correlation={}", a.network, a.correlation).unwrap();
        }
        out
    }
}
