use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dag::{validate_dag, ReasoningDag, ValidationReport};
use super::token::SemanticToken;

pub type PlaceId = String;
pub type TransId = String;

/// Transition ids are derived from the single place each transition produces.
pub fn transition_id_for(place: &str) -> TransId {
    format!("t:{place}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Transition {
    pub pre_set: BTreeSet<PlaceId>,
    pub post_set: BTreeSet<PlaceId>,
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ArcDirection {
    PlaceToTransition,
    TransitionToPlace,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowArc {
    pub place: PlaceId,
    pub transition: TransId,
    pub direction: ArcDirection,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetError {
    #[error("invalid reasoning DAG: {0}")]
    InvalidDag(ValidationReport),
    #[error("transition {0} has an empty pre-set or post-set")]
    EmptyArcSet(TransId),
    #[error("transition {0} reads and writes the same place")]
    SelfArc(TransId),
    #[error("transition {trans} references unknown place {place}")]
    UnknownPlace { trans: TransId, place: PlaceId },
    #[error("place {place} is produced by both {first} and {second}")]
    MultipleProducers {
        place: PlaceId,
        first: TransId,
        second: TransId,
    },
    #[error("transition graph has a cycle through {0}")]
    Cyclic(TransId),
    #[error("place {0} is not produced by any transition but is not initially marked")]
    UnmarkedSource(PlaceId),
    #[error("place {0} is initially marked but also produced by a transition")]
    MarkedProduced(PlaceId),
}

/// Executable net `(P, T, F, M0)` with acyclic flow and single-producer places.
///
/// Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PetriNet {
    places: BTreeSet<PlaceId>,
    transitions: BTreeMap<TransId, Transition>,
    initial_marking: BTreeMap<PlaceId, Option<SemanticToken>>,
    #[serde(skip)]
    producer: BTreeMap<PlaceId, TransId>,
    #[serde(skip)]
    consumers: BTreeMap<PlaceId, BTreeSet<TransId>>,
    #[serde(skip)]
    layer_of: BTreeMap<TransId, usize>,
}

impl PetriNet {
    /// Builds a net, checking every structural invariant. Places not produced by
    /// any transition must be exactly the `initially_marked` ones; each gets an
    /// empty token.
    pub fn new(
        places: BTreeSet<PlaceId>,
        transitions: BTreeMap<TransId, Transition>,
        initially_marked: &BTreeSet<PlaceId>,
    ) -> Result<Self, NetError> {
        let mut producer: BTreeMap<PlaceId, TransId> = BTreeMap::new();
        let mut consumers: BTreeMap<PlaceId, BTreeSet<TransId>> =
            places.iter().map(|p| (p.clone(), BTreeSet::new())).collect();
        for (id, t) in &transitions {
            if t.pre_set.is_empty() || t.post_set.is_empty() {
                return Err(NetError::EmptyArcSet(id.clone()));
            }
            if !t.pre_set.is_disjoint(&t.post_set) {
                return Err(NetError::SelfArc(id.clone()));
            }
            for p in t.pre_set.iter().chain(&t.post_set) {
                if !places.contains(p) {
                    return Err(NetError::UnknownPlace {
                        trans: id.clone(),
                        place: p.clone(),
                    });
                }
            }
            for p in &t.pre_set {
                consumers.get_mut(p).expect("checked").insert(id.clone());
            }
            for q in &t.post_set {
                if let Some(first) = producer.insert(q.clone(), id.clone()) {
                    return Err(NetError::MultipleProducers {
                        place: q.clone(),
                        first,
                        second: id.clone(),
                    });
                }
            }
        }
        for p in &places {
            match (producer.contains_key(p), initially_marked.contains(p)) {
                (false, false) => return Err(NetError::UnmarkedSource(p.clone())),
                (true, true) => return Err(NetError::MarkedProduced(p.clone())),
                _ => {}
            }
        }
        for p in initially_marked {
            if !places.contains(p) {
                return Err(NetError::UnknownPlace {
                    trans: "M0".into(),
                    place: p.clone(),
                });
            }
        }
        let layer_of = compute_layers(&transitions, &producer)?;
        let initial_marking = places
            .iter()
            .map(|p| {
                let token = initially_marked.contains(p).then(SemanticToken::empty);
                (p.clone(), token)
            })
            .collect();
        Ok(Self {
            places,
            transitions,
            initial_marking,
            producer,
            consumers,
            layer_of,
        })
    }

    pub fn places(&self) -> &BTreeSet<PlaceId> {
        &self.places
    }

    pub fn transitions(&self) -> &BTreeMap<TransId, Transition> {
        &self.transitions
    }

    pub fn transition(&self, id: &str) -> Option<&Transition> {
        self.transitions.get(id)
    }

    pub fn initial_marking(&self) -> &BTreeMap<PlaceId, Option<SemanticToken>> {
        &self.initial_marking
    }

    pub fn initially_marked(&self) -> impl Iterator<Item = &str> {
        self.initial_marking
            .iter()
            .filter(|(_, t)| t.is_some())
            .map(|(p, _)| p.as_str())
    }

    /// The transition writing `place`, if any.
    pub fn producer_of(&self, place: &str) -> Option<&str> {
        self.producer.get(place).map(String::as_str)
    }

    pub fn consumers_of(&self, place: &str) -> impl Iterator<Item = &str> {
        self.consumers
            .get(place)
            .into_iter()
            .flatten()
            .map(String::as_str)
    }

    /// Places no transition reads.
    pub fn terminal_places(&self) -> impl Iterator<Item = &str> {
        self.consumers
            .iter()
            .filter(|(_, c)| c.is_empty())
            .map(|(p, _)| p.as_str())
    }

    /// Layer of a transition in the static precedence layering.
    pub fn layer(&self, trans: &str) -> Option<usize> {
        self.layer_of.get(trans).copied()
    }

    /// Flow relation `F` as explicit arcs, ascending.
    pub fn arcs(&self) -> Vec<FlowArc> {
        let mut arcs = Vec::new();
        for (id, t) in &self.transitions {
            arcs.extend(t.pre_set.iter().map(|p| FlowArc {
                place: p.clone(),
                transition: id.clone(),
                direction: ArcDirection::PlaceToTransition,
            }));
            arcs.extend(t.post_set.iter().map(|q| FlowArc {
                place: q.clone(),
                transition: id.clone(),
                direction: ArcDirection::TransitionToPlace,
            }));
        }
        arcs.sort();
        arcs
    }

    /// Collapses every transition back into place-to-place edges.
    pub fn collapse_to_edges(&self) -> BTreeSet<(PlaceId, PlaceId)> {
        self.transitions
            .values()
            .flat_map(|t| {
                t.pre_set
                    .iter()
                    .flat_map(move |p| t.post_set.iter().map(move |q| (p.clone(), q.clone())))
            })
            .collect()
    }

    /// Transitions grouped by longest precedence distance from the initial marking.
    pub fn transition_layers(&self) -> Vec<BTreeSet<TransId>> {
        let depth = self.layer_of.values().max().map_or(0, |m| m + 1);
        let mut layers = vec![BTreeSet::new(); depth];
        for (t, layer) in &self.layer_of {
            layers[*layer].insert(t.clone());
        }
        layers
    }

    /// Length of the longest chain of place-mediated dependent transitions.
    pub fn topological_depth(&self) -> usize {
        self.layer_of.values().max().map_or(0, |m| m + 1)
    }

    /// Transitions in `(layer, id)` order; a valid serial firing order.
    pub fn serial_order(&self) -> Vec<&str> {
        let mut order: Vec<(usize, &str)> = self
            .layer_of
            .iter()
            .map(|(t, l)| (*l, t.as_str()))
            .collect();
        order.sort();
        order.into_iter().map(|(_, t)| t).collect()
    }
}

fn compute_layers(
    transitions: &BTreeMap<TransId, Transition>,
    producer: &BTreeMap<PlaceId, TransId>,
) -> Result<BTreeMap<TransId, usize>, NetError> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Visiting,
        Done(usize),
    }
    fn visit(
        id: &str,
        transitions: &BTreeMap<TransId, Transition>,
        producer: &BTreeMap<PlaceId, TransId>,
        marks: &mut BTreeMap<TransId, Mark>,
    ) -> Result<usize, NetError> {
        match marks.get(id) {
            Some(Mark::Done(l)) => return Ok(*l),
            Some(Mark::Visiting) => return Err(NetError::Cyclic(id.to_string())),
            None => {}
        }
        marks.insert(id.to_string(), Mark::Visiting);
        let mut layer = 0;
        for p in &transitions[id].pre_set {
            if let Some(up) = producer.get(p) {
                layer = layer.max(visit(up, transitions, producer, marks)? + 1);
            }
        }
        marks.insert(id.to_string(), Mark::Done(layer));
        Ok(layer)
    }

    let mut marks = BTreeMap::new();
    for id in transitions.keys() {
        visit(id, transitions, producer, &mut marks)?;
    }
    Ok(marks
        .into_iter()
        .map(|(k, m)| match m {
            Mark::Done(l) => (k, l),
            Mark::Visiting => unreachable!("all visits complete"),
        })
        .collect())
}

/// Compiles a validated DAG: one place per node, one transition per non-source
/// node aggregating all of its incoming edges.
pub fn dag_to_petri(dag: &ReasoningDag) -> Result<PetriNet, NetError> {
    let report = validate_dag(dag);
    if !report.is_ok() {
        return Err(NetError::InvalidDag(report));
    }
    let places: BTreeSet<PlaceId> = dag.nodes().keys().cloned().collect();
    let mut transitions = BTreeMap::new();
    let mut marked = BTreeSet::new();
    for (node, preds) in dag.predecessor_map() {
        if preds.is_empty() {
            marked.insert(node.to_string());
            continue;
        }
        transitions.insert(
            transition_id_for(node),
            Transition {
                pre_set: preds.iter().map(|p| p.to_string()).collect(),
                post_set: BTreeSet::from([node.to_string()]),
                label: dag.node(node).expect("known node").label.clone(),
            },
        );
    }
    PetriNet::new(places, transitions, &marked)
}

pub fn topological_depth(net: &PetriNet) -> usize {
    net.topological_depth()
}

pub fn transition_layers(net: &PetriNet) -> Vec<BTreeSet<TransId>> {
    net.transition_layers()
}
