//! Triple-sample interchange file: one sample per line,
//! `score<TAB>subject<TAB>predicate<TAB>object<TAB>alpha1<TAB>alpha2<TAB>alpha3`,
//! each alpha a run of space-separated floats. Lexemes are strings so graph
//! building is decoupled from model code and oracle traces can be injected.

use anyhow::{bail, Context, Result};
use sggen_core::graphbuild::GraphInput;
use sggen_core::vocab::Triple;

#[derive(Debug, Clone, PartialEq)]
pub struct SampleLine {
    pub score: f64,
    pub subject: String,
    pub predicate: String,
    pub object: String,
    pub alphas: [Vec<f64>; 3],
}

fn floats_to_str(v: &[f64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

fn floats_from_str(s: &str, where_: &str) -> Result<Vec<f64>> {
    s.split(' ')
        .map(|t| {
            t.parse::<f64>()
                .with_context(|| format!("{where_}: bad float `{t}`"))
        })
        .collect()
}

pub fn serialize_samples(lines: &[SampleLine]) -> String {
    let mut out = String::new();
    for l in lines {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            l.score,
            l.subject,
            l.predicate,
            l.object,
            floats_to_str(&l.alphas[0]),
            floats_to_str(&l.alphas[1]),
            floats_to_str(&l.alphas[2]),
        ));
    }
    out
}

pub fn parse_samples(text: &str) -> Result<Vec<SampleLine>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let where_ = format!("samples line {}", i + 1);
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 7 {
            bail!(
                "{where_}: expected 7 tab-separated fields, got {}",
                fields.len()
            );
        }
        out.push(SampleLine {
            score: fields[0]
                .parse()
                .with_context(|| format!("{where_}: bad score"))?,
            subject: fields[1].to_string(),
            predicate: fields[2].to_string(),
            object: fields[3].to_string(),
            alphas: [
                floats_from_str(fields[4], &where_)?,
                floats_from_str(fields[5], &where_)?,
                floats_from_str(fields[6], &where_)?,
            ],
        });
    }
    Ok(out)
}

/// Assign ids to the distinct labels (sorted, so ids are stable for a given
/// file) and produce graph-builder inputs plus the label table.
pub fn to_graph_inputs(lines: &[SampleLine]) -> (Vec<GraphInput>, Vec<String>) {
    let mut labels: Vec<String> = lines
        .iter()
        .flat_map(|l| [l.subject.clone(), l.predicate.clone(), l.object.clone()])
        .collect();
    labels.sort();
    labels.dedup();
    let id_of = |s: &str| {
        labels
            .binary_search_by(|l| l.as_str().cmp(s))
            .expect("present")
    };
    let inputs = lines
        .iter()
        .map(|l| GraphInput {
            triple: Triple::new(id_of(&l.subject), id_of(&l.predicate), id_of(&l.object)),
            subject_alpha: l.alphas[0].clone(),
            object_alpha: l.alphas[2].clone(),
            score: l.score,
        })
        .collect();
    (inputs, labels)
}
