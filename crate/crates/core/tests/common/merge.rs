//! Merge-oracle support: build a scene graph from ground-truth relation
//! triples with region masks standing in for attention vectors, and verify
//! it reconstructs the entity-level ground truth exactly (node and edge
//! sets equal up to node-id renaming).

use std::collections::BTreeMap;

use sggen_core::graphbuild::{build_graph, GraphInput, MergeConfig, Position, SceneGraph};
use sggen_core::scenes::{GroundTruth, SceneSpec, RELATION_LEXEMES, SHAPE_LEXEMES};
use sggen_core::vocab::Triple;

/// Fixed lexeme-id table for the synthetic domain: shapes then relations.
pub fn lexeme_id(lexeme: &str) -> usize {
    SHAPE_LEXEMES
        .iter()
        .chain(RELATION_LEXEMES.iter())
        .position(|l| *l == lexeme)
        .expect("synthetic lexeme")
}

pub fn mask_to_alpha(mask: &[u8]) -> Vec<f64> {
    mask.iter().map(|b| *b as f64).collect()
}

/// Relation triples with entity masks as attention vectors.
pub fn relation_inputs(scene: &SceneSpec, truth: &GroundTruth) -> Vec<GraphInput> {
    truth
        .relation_triples
        .iter()
        .map(|r| GraphInput {
            triple: Triple::new(
                lexeme_id(scene.entities[r.subject].shape.lexeme()),
                lexeme_id(r.predicate),
                lexeme_id(scene.entities[r.object].shape.lexeme()),
            ),
            subject_alpha: mask_to_alpha(&truth.masks[r.subject]),
            object_alpha: mask_to_alpha(&truth.masks[r.object]),
            score: 0.0,
        })
        .collect()
}

/// Check that the built graph equals the entity-level ground truth up to
/// node renaming: every node's members trace back to exactly one entity,
/// distinct nodes to distinct entities, labels match the entity shapes, and
/// the edge set matches the relation triples under that bijection.
pub fn check_reconstruction(
    scene: &SceneSpec,
    truth: &GroundTruth,
    graph: &SceneGraph,
) -> Result<(), String> {
    let entity_of_member = |(triple_idx, position): (usize, Position)| -> usize {
        let r = &truth.relation_triples[triple_idx];
        match position {
            Position::Subject => r.subject,
            Position::Object => r.object,
        }
    };

    let mut node_entity: Vec<usize> = Vec::with_capacity(graph.nodes.len());
    for (i, node) in graph.nodes.iter().enumerate() {
        let entities: Vec<usize> = node.members.iter().map(|m| entity_of_member(*m)).collect();
        let first = entities[0];
        if entities.iter().any(|e| *e != first) {
            return Err(format!("node {i} mixes entities {entities:?}"));
        }
        let expected_label = lexeme_id(scene.entities[first].shape.lexeme());
        if node.label != expected_label {
            return Err(format!(
                "node {i}: label {} but entity {first} is {expected_label}",
                node.label
            ));
        }
        node_entity.push(first);
    }

    // bijection onto the participating entities
    let mut participating: Vec<usize> = truth
        .relation_triples
        .iter()
        .flat_map(|r| [r.subject, r.object])
        .collect();
    participating.sort_unstable();
    participating.dedup();
    let mut mapped = node_entity.clone();
    mapped.sort_unstable();
    mapped.dedup();
    if mapped != participating {
        return Err(format!(
            "node/entity mismatch: nodes map to {mapped:?}, participating {participating:?}"
        ));
    }
    if node_entity.len() != participating.len() {
        return Err("two nodes map to one entity".into());
    }

    if !graph.dropped_self_loops.is_empty() {
        return Err(format!(
            "unexpected dropped triples {:?}",
            graph.dropped_self_loops
        ));
    }
    if graph.edges.len() != truth.relation_triples.len() {
        return Err(format!(
            "{} edges for {} relation triples",
            graph.edges.len(),
            truth.relation_triples.len()
        ));
    }
    let entity_node: BTreeMap<usize, usize> = node_entity
        .iter()
        .enumerate()
        .map(|(node, entity)| (*entity, node))
        .collect();
    for (i, r) in truth.relation_triples.iter().enumerate() {
        let edge = graph
            .edges
            .iter()
            .find(|e| e.triple_index == i)
            .ok_or_else(|| format!("triple {i} contributed no edge"))?;
        if edge.from != entity_node[&r.subject]
            || edge.to != entity_node[&r.object]
            || edge.predicate != lexeme_id(r.predicate)
        {
            return Err(format!("edge for triple {i} is wrong: {edge:?}"));
        }
    }
    Ok(())
}

/// Full oracle pass over one scene at the given merge threshold.
pub fn oracle_scene_check(scene: &SceneSpec, threshold: f64) -> Result<(), String> {
    let truth = sggen_core::scenes::ground_truth_triples(scene);
    let inputs = relation_inputs(scene, &truth);
    let graph = build_graph(&inputs, &MergeConfig { threshold }).map_err(|e| e.to_string())?;
    check_reconstruction(scene, &truth, &graph)
}
