//! QA / PA / FA scoring with per-depth breakdown.

use std::collections::{BTreeMap, BTreeSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::proof::ProofGraph;
use crate::sample::Sample;
use crate::theory::{NodeRef, Strategy};

/// Exact node-set and edge-set equality with any gold proof.
pub fn proof_match(predicted: &ProofGraph, golds: &[ProofGraph]) -> bool {
    golds.iter().any(|g| g.nodes == predicted.nodes && g.edges == predicted.edges)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub parent: NodeRef,
    pub child: NodeRef,
    pub p_parent: f64,
    pub p_child: f64,
}

/// One line of a predictions file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub answer: bool,
    pub strategy: Strategy,
    pub proof: ProofGraph,
    pub truncated: bool,
    pub steps: Vec<StepRecord>,
}

pub fn read_predictions(reader: impl BufRead) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Data { line: i + 1, message: e.to_string() })?);
    }
    Ok(out)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    read_predictions(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// Depth, or `None` for the all-depth row.
    pub depth: Option<usize>,
    pub count: usize,
    pub qa: f64,
    pub pa: f64,
    pub fa: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub depth: usize,
    pub count: usize,
    pub mean_seconds: f64,
    /// Spread of the per-repetition means.
    pub stddev_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub latency: Vec<LatencyRow>,
}

impl EvalReport {
    pub fn all(&self) -> &ReportRow {
        self.rows.iter().find(|r| r.depth.is_none()).expect("report has an all row")
    }

    pub fn depth(&self, d: usize) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.depth == Some(d))
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:>6} {:>7} {:>7} {:>7} {:>7}\n", "depth", "count", "QA", "PA", "FA");
        for r in &self.rows {
            let d = r.depth.map_or("all".to_owned(), |d| d.to_string());
            out += &format!(
                "{d:>6} {:>7} {:>7.2} {:>7.2} {:>7.2}\n",
                r.count,
                100.0 * r.qa,
                100.0 * r.pa,
                100.0 * r.fa
            );
        }
        if !self.latency.is_empty() {
            out += &format!("\n{:>6} {:>7} {:>12} {:>12}\n", "depth", "count", "mean_s", "stddev_s");
            for l in &self.latency {
                out += &format!("{:>6} {:>7} {:>12.6} {:>12.6}\n", l.depth, l.count, l.mean_seconds, l.stddev_seconds);
            }
        }
        out
    }

    /// Grouped bar chart of QA/PA/FA per depth.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (80.0 * self.rows.len() as f64 + 60.0, 240.0, 30.0);
        let mut s = format!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
        );
        s += "\n";
        let colors = ["#4e79a7", "#f28e2b", "#59a14f"];
        for (i, r) in self.rows.iter().enumerate() {
            let x0 = pad + 80.0 * i as f64;
            for (j, v) in [r.qa, r.pa, r.fa].into_iter().enumerate() {
                let bh = v * (h - 2.0 * pad);
                s += &format!(
                    r#"<rect x="{:.1}" y="{:.1}" width="20" height="{:.1}" fill="{}"/>"#,
                    x0 + 22.0 * j as f64,
                    h - pad - bh,
                    bh,
                    colors[j]
                );
                s += "\n";
            }
            let label = r.depth.map_or("all".to_owned(), |d| format!("d{d}"));
            s += &format!(r#"<text x="{:.1}" y="{:.1}">{label}</text>"#, x0 + 20.0, h - 10.0);
            s += "\n";
        }
        for (j, name) in ["QA", "PA", "FA"].iter().enumerate() {
            s += &format!(r#"<text x="{:.1}" y="15" fill="{}">{name}</text>"#, pad + 40.0 * j as f64, colors[j]);
            s += "\n";
        }
        s + "</svg>\n"
    }
}

#[derive(Default)]
struct Tally {
    n: usize,
    qa: usize,
    pa: usize,
    fa: usize,
}

impl Tally {
    fn row(&self, depth: Option<usize>) -> ReportRow {
        let rate = |k: usize| if self.n == 0 { 0.0 } else { k as f64 / self.n as f64 };
        ReportRow { depth, count: self.n, qa: rate(self.qa), pa: rate(self.pa), fa: rate(self.fa) }
    }
}

/// Score predictions against samples; ids must match one-to-one (order is free).
pub fn evaluate(predictions: &[Prediction], samples: &[Sample]) -> Result<EvalReport> {
    let by_id: BTreeMap<&str, &Prediction> = predictions.iter().map(|p| (p.id.as_str(), p)).collect();
    let sample_ids: BTreeSet<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    let mut offenders: Vec<String> = samples
        .iter()
        .filter(|s| !by_id.contains_key(s.id.as_str()))
        .map(|s| format!("missing prediction for {}", s.id))
        .collect();
    offenders.extend(
        predictions.iter().filter(|p| !sample_ids.contains(p.id.as_str())).map(|p| format!("unknown id {}", p.id)),
    );
    if by_id.len() != predictions.len() {
        offenders.push("duplicate prediction ids".into());
    }
    if !offenders.is_empty() {
        return Err(Error::Alignment(offenders.join(", ")));
    }
    let mut all = Tally::default();
    let mut per: BTreeMap<usize, Tally> = BTreeMap::new();
    for s in samples {
        let p = by_id[s.id.as_str()];
        let qa = p.answer == s.answer;
        let pa = !p.truncated && proof_match(&p.proof, &s.gold_proofs);
        for t in [&mut all, per.entry(s.depth).or_default()] {
            t.n += 1;
            t.qa += usize::from(qa);
            t.pa += usize::from(pa);
            t.fa += usize::from(qa && pa);
        }
    }
    let mut rows: Vec<ReportRow> = per.iter().map(|(d, t)| t.row(Some(*d))).collect();
    rows.push(all.row(None));
    Ok(EvalReport { rows, latency: Vec::new() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{question, t1};
    use NodeRef::*;

    fn sample(id: &str, depth: usize, gold: ProofGraph) -> Sample {
        Sample {
            id: id.into(),
            theory: t1(),
            question: question("Anne", "big", true),
            answer: true,
            strategy: Strategy::Proof,
            depth,
            gold_proofs: vec![gold],
        }
    }

    fn pred(id: &str, answer: bool, proof: ProofGraph) -> Prediction {
        Prediction { id: id.into(), answer, strategy: Strategy::Proof, proof, truncated: false, steps: vec![] }
    }

    #[test]
    fn matching() {
        let g = ProofGraph::new([Fact(1), Rule(1)], [(Fact(1), Rule(1))]);
        assert!(proof_match(&g, &[g.clone()]));
        assert!(!proof_match(&ProofGraph::new([Fact(1), Rule(1)], []), &[g.clone()]));
        assert!(proof_match(&g, &[ProofGraph::single(Fact(2)), g.clone()]));
    }

    #[test]
    fn definition_arithmetic() {
        let g = ProofGraph::single(Fact(1));
        let wrong = ProofGraph::single(Fact(2));
        let samples = vec![sample("a", 0, g.clone()), sample("b", 0, g.clone()), sample("c", 1, g.clone())];
        let preds = vec![pred("a", true, wrong), pred("b", true, g.clone()), pred("c", false, g.clone())];
        let r = evaluate(&preds, &samples).unwrap();
        let all = r.all();
        assert!((all.qa - 2.0 / 3.0).abs() < 1e-12);
        assert!((all.pa - 2.0 / 3.0).abs() < 1e-12);
        assert!((all.fa - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.depth(0).unwrap().count, 2);
    }

    #[test]
    fn truncated_counts_as_wrong_proof() {
        let g = ProofGraph::single(Fact(1));
        let mut p = pred("a", true, g.clone());
        p.truncated = true;
        let r = evaluate(&[p], &[sample("a", 0, g)]).unwrap();
        assert_eq!((r.all().qa, r.all().pa), (1.0, 0.0));
    }

    #[test]
    fn misaligned_ids() {
        let g = ProofGraph::single(Fact(1));
        let err = evaluate(&[pred("z", true, g.clone())], &[sample("a", 0, g)]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("a") && msg.contains("z"), "{msg}");
    }

    #[test]
    fn prediction_line_shape() {
        let p = Prediction {
            steps: vec![StepRecord { parent: Question, child: Fact(1), p_parent: 1.0, p_child: 0.9 }],
            ..pred("a", true, ProofGraph::single(Fact(1)))
        };
        let line = serde_json::to_string(&p).unwrap();
        assert!(line.starts_with(r#"{"id":"a","answer":true,"strategy":"proof","proof":{"nodes":["F1"],"edges":[]},"truncated":false,"steps":[{"parent":"Q","child":"F1""#));
        assert_eq!(read_predictions(line.as_bytes()).unwrap(), vec![p]);
    }
}
