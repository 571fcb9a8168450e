//! Scene-graph assembly: resolve duplicate entities across generated triples
//! by comparing attention vectors with a generalized IoU, then emit nodes,
//! edges, DOT text, and the graph summary format.

use thiserror::Error;

use crate::generator::TripleSample;
use crate::vocab::Triple;

#[derive(Debug, Error)]
pub enum GraphBuildError {
    #[error("iou inputs have different lengths: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("iou inputs must be non-negative")]
    NegativeEntry,
    #[error("iou undefined: both vectors are all-zero")]
    BothZero,
    #[error("merge threshold {0} outside [0, 1]")]
    BadThreshold(f64),
    #[error("cannot resolve a label for an empty cluster")]
    EmptyCluster,
}

/// Generalized intersection over union: Σ min(xᵢ, yᵢ) / Σ max(xᵢ, yᵢ).
pub fn iou(x: &[f64], y: &[f64]) -> Result<f64, GraphBuildError> {
    if x.len() != y.len() {
        return Err(GraphBuildError::LengthMismatch(x.len(), y.len()));
    }
    if x.iter().chain(y).any(|v| *v < 0.0) {
        return Err(GraphBuildError::NegativeEntry);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in x.iter().zip(y) {
        num += a.min(*b);
        den += a.max(*b);
    }
    if den == 0.0 {
        return Err(GraphBuildError::BothZero);
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Position {
    Subject,
    Object,
}

/// One lexeme occurrence eligible for merging: the subject or object
/// position of a generated triple together with its attention vector.
#[derive(Debug, Clone)]
pub struct EntityOccurrence {
    pub lexeme: usize,
    pub position: Position,
    pub alpha: Vec<f64>,
    pub triple_index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeConfig {
    /// Occurrence pairs with IoU strictly above this merge.
    pub threshold: f64,
}

impl Default for MergeConfig {
    fn default() -> Self {
        MergeConfig { threshold: 0.8 }
    }
}

impl MergeConfig {
    pub fn validate(&self) -> Result<(), GraphBuildError> {
        if !(0.0..=1.0).contains(&self.threshold) || self.threshold.is_nan() {
            return Err(GraphBuildError::BadThreshold(self.threshold));
        }
        Ok(())
    }
}

/// Single-linkage clustering: connected components of the graph joining
/// occurrence pairs whose IoU exceeds the threshold. Clusters are ordered by
/// their smallest member index, members ascending.
pub fn cluster_occurrences(
    occurrences: &[EntityOccurrence],
    config: &MergeConfig,
) -> Result<Vec<Vec<usize>>, GraphBuildError> {
    config.validate()?;
    let n = occurrences.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let sim = iou(&occurrences[i].alpha, &occurrences[j].alpha)?;
            if sim > config.threshold {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    let (lo, hi) = (ri.min(rj), ri.max(rj));
                    parent[hi] = lo;
                }
            }
        }
    }
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut root_to_cluster: Vec<Option<usize>> = vec![None; n];
    for i in 0..n {
        let root = find(&mut parent, i);
        match root_to_cluster[root] {
            Some(c) => clusters[c].push(i),
            None => {
                root_to_cluster[root] = Some(clusters.len());
                clusters.push(vec![i]);
            }
        }
    }
    Ok(clusters)
}

/// Majority label of the cluster; ties break toward the highest summed
/// critic score, then the smallest lexeme id.
pub fn resolve_label(
    occurrences: &[EntityOccurrence],
    members: &[usize],
) -> Result<usize, GraphBuildError> {
    if members.is_empty() {
        return Err(GraphBuildError::EmptyCluster);
    }
    let mut tally: Vec<(usize, usize, f64)> = Vec::new(); // (lexeme, count, score sum)
    for &m in members {
        let occ = &occurrences[m];
        match tally.iter_mut().find(|(l, _, _)| *l == occ.lexeme) {
            Some((_, count, score)) => {
                *count += 1;
                *score += occ.score;
            }
            None => tally.push((occ.lexeme, 1, occ.score)),
        }
    }
    tally.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then(b.2.partial_cmp(&a.2).expect("finite scores"))
            .then(a.0.cmp(&b.0))
    });
    Ok(tally[0].0)
}

/// Everything build_graph needs from one generated triple.
#[derive(Debug, Clone)]
pub struct GraphInput {
    pub triple: Triple,
    pub subject_alpha: Vec<f64>,
    pub object_alpha: Vec<f64>,
    pub score: f64,
}

impl From<&TripleSample> for GraphInput {
    fn from(s: &TripleSample) -> Self {
        GraphInput {
            triple: s.triple,
            subject_alpha: s.alphas[0].clone(),
            object_alpha: s.alphas[2].clone(),
            score: s.score.unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphNode {
    pub label: usize,
    /// (triple index, position) of every merged occurrence.
    pub members: Vec<(usize, Position)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphEdge {
    pub from: usize,
    pub to: usize,
    pub predicate: usize,
    pub triple_index: usize,
}

/// Labeled directed scene graph. Every input triple contributes exactly one
/// edge unless its subject and object merged into one node, in which case
/// the triple index is recorded as a dropped self-loop instead.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SceneGraph {
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
    pub dropped_self_loops: Vec<usize>,
}

/// Cluster the subject and object occurrences of every triple, resolve one
/// label per cluster, and connect clusters with predicate-labeled edges.
/// The predicate position never participates in merging.
pub fn build_graph(
    inputs: &[GraphInput],
    config: &MergeConfig,
) -> Result<SceneGraph, GraphBuildError> {
    config.validate()?;
    let mut occurrences = Vec::with_capacity(inputs.len() * 2);
    for (i, input) in inputs.iter().enumerate() {
        occurrences.push(EntityOccurrence {
            lexeme: input.triple.subject,
            position: Position::Subject,
            alpha: input.subject_alpha.clone(),
            triple_index: i,
            score: input.score,
        });
        occurrences.push(EntityOccurrence {
            lexeme: input.triple.object,
            position: Position::Object,
            alpha: input.object_alpha.clone(),
            triple_index: i,
            score: input.score,
        });
    }
    let clusters = cluster_occurrences(&occurrences, config)?;
    let mut occurrence_node = vec![usize::MAX; occurrences.len()];
    let mut nodes = Vec::with_capacity(clusters.len());
    for (node_id, members) in clusters.iter().enumerate() {
        for &m in members {
            occurrence_node[m] = node_id;
        }
        nodes.push(GraphNode {
            label: resolve_label(&occurrences, members)?,
            members: members
                .iter()
                .map(|&m| (occurrences[m].triple_index, occurrences[m].position))
                .collect(),
        });
    }
    let mut edges = Vec::new();
    let mut dropped = Vec::new();
    for (i, input) in inputs.iter().enumerate() {
        let from = occurrence_node[2 * i];
        let to = occurrence_node[2 * i + 1];
        if from == to {
            dropped.push(i);
        } else {
            edges.push(GraphEdge {
                from,
                to,
                predicate: input.triple.predicate,
                triple_index: i,
            });
        }
    }
    Ok(SceneGraph {
        nodes,
        edges,
        dropped_self_loops: dropped,
    })
}

fn escape_dot(label: &str) -> String {
    label.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Deterministic DOT text; node ids are cluster order.
pub fn export_dot(graph: &SceneGraph, labels: &[String]) -> String {
    let name = |id: usize| -> String {
        labels
            .get(id)
            .map(|s| escape_dot(s))
            .unwrap_or_else(|| format!("lexeme-{id}"))
    };
    let mut out = String::from("digraph scene_graph {\n");
    for (i, node) in graph.nodes.iter().enumerate() {
        out.push_str(&format!("  n{i} [label=\"{}\"];\n", name(node.label)));
    }
    for e in &graph.edges {
        out.push_str(&format!(
            "  n{} -> n{} [label=\"{}\"];\n",
            e.from,
            e.to,
            name(e.predicate)
        ));
    }
    out.push_str("}\n");
    out
}

/// Line-oriented summary: `node<TAB>id<TAB>label<TAB>member-count` rows,
/// then `edge<TAB>from<TAB>predicate<TAB>to` rows.
pub fn graph_summary(graph: &SceneGraph, labels: &[String]) -> String {
    let name = |id: usize| -> &str { labels.get(id).map(|s| s.as_str()).unwrap_or("?") };
    let mut out = String::new();
    for (i, node) in graph.nodes.iter().enumerate() {
        out.push_str(&format!(
            "node\t{i}\t{}\t{}\n",
            name(node.label),
            node.members.len()
        ));
    }
    for e in &graph.edges {
        out.push_str(&format!(
            "edge\t{}\t{}\t{}\n",
            e.from,
            name(e.predicate),
            e.to
        ));
    }
    out
}
