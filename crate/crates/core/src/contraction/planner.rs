//! Elimination-order planning on the line graph of a tensor network.
//!
//! Vertices are labels; two labels are adjacent when some tensor carries both.
//! Eliminating a label contracts every live tensor that carries it (its
//! bucket) into one tensor over the remaining labels and sums the eliminated
//! one. The rank of that result equals the label's degree at elimination
//! time, so the plan width is the largest such degree.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{ContractionError, TensorNetwork};
use crate::tensor::{ContractionSpec, Label};

/// Networks with more labels than this are refused by the exhaustive search.
pub const EXHAUSTIVE_LABEL_LIMIT: usize = 16;
/// Plans wider than this are refused at execution time.
pub const MAX_EXECUTION_WIDTH: usize = 30;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heuristic {
    GreedyMinFill,
    GreedyMinDegree,
    Exhaustive,
}

impl Default for Heuristic {
    fn default() -> Self {
        Heuristic::GreedyMinFill
    }
}

/// One contraction: its operands are slots (network inputs are slots
/// `0..n_inputs`, step `k` writes slot `n_inputs + k`).
#[derive(Clone, Debug)]
pub struct PlanStep {
    pub operands: Vec<usize>,
    pub sum: Vec<Label>,
    pub out_labels: Vec<Label>,
    pub(crate) spec: ContractionSpec,
}

#[derive(Clone, Debug)]
pub struct ContractionPlan {
    pub order: Vec<Label>,
    pub width: usize,
    pub steps: Vec<PlanStep>,
    pub n_inputs: usize,
    pub heuristic: Heuristic,
}

#[derive(Serialize, Deserialize)]
struct PlanDump {
    order: Vec<u32>,
    width: usize,
    schedule: Vec<Vec<usize>>,
}

impl ContractionPlan {
    /// Slot holding the final scalar, or `None` for an empty network.
    pub fn result_slot(&self) -> Option<usize> {
        if self.steps.is_empty() {
            (self.n_inputs == 1).then_some(0)
        } else {
            Some(self.n_inputs + self.steps.len() - 1)
        }
    }

    /// Debug dump `{order, width, schedule}`; each schedule entry lists the
    /// operand slots of one step.
    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string_pretty(&PlanDump {
            order: self.order.iter().map(|l| l.0).collect(),
            width: self.width,
            schedule: self.steps.iter().map(|s| s.operands.clone()).collect(),
        })
    }
}

/// Live tensors during a symbolic elimination.
struct EliminationState {
    live: BTreeMap<usize, Vec<Label>>,
    carriers: Vec<BTreeSet<usize>>,
    eliminated: Vec<bool>,
    next_slot: usize,
}

impl EliminationState {
    fn new(network: &TensorNetwork) -> Self {
        let mut carriers = vec![BTreeSet::new(); network.n_labels];
        let mut live = BTreeMap::new();
        for (slot, stub) in network.stubs.iter().enumerate() {
            let mut labels = stub.labels.clone();
            labels.sort();
            for l in &labels {
                carriers[l.0 as usize].insert(slot);
            }
            live.insert(slot, labels);
        }
        Self {
            live,
            carriers,
            eliminated: vec![false; network.n_labels],
            next_slot: network.stubs.len(),
        }
    }

    fn neighbors(&self, v: Label) -> BTreeSet<Label> {
        let mut out = BTreeSet::new();
        for slot in &self.carriers[v.0 as usize] {
            out.extend(self.live[slot].iter().copied().filter(|&l| l != v));
        }
        out
    }

    fn adjacent(&self, a: Label, b: Label) -> bool {
        let (ca, cb) = (&self.carriers[a.0 as usize], &self.carriers[b.0 as usize]);
        if ca.len() <= cb.len() {
            ca.iter().any(|s| cb.contains(s))
        } else {
            cb.iter().any(|s| ca.contains(s))
        }
    }

    fn fill_in(&self, neighbors: &BTreeSet<Label>) -> usize {
        let nb: Vec<Label> = neighbors.iter().copied().collect();
        let mut fill = 0;
        for i in 0..nb.len() {
            for j in i + 1..nb.len() {
                if !self.adjacent(nb[i], nb[j]) {
                    fill += 1;
                }
            }
        }
        fill
    }

    fn eliminate(&mut self, v: Label) -> (Vec<usize>, Vec<Label>) {
        let bucket: Vec<usize> = self.carriers[v.0 as usize].iter().copied().collect();
        let mut union = BTreeSet::new();
        for slot in &bucket {
            let labels = self.live.remove(slot).expect("bucket slot is live");
            for l in labels {
                self.carriers[l.0 as usize].remove(slot);
                union.insert(l);
            }
        }
        union.remove(&v);
        let out: Vec<Label> = union.into_iter().collect();
        let slot = self.next_slot;
        self.next_slot += 1;
        for l in &out {
            self.carriers[l.0 as usize].insert(slot);
        }
        self.live.insert(slot, out.clone());
        self.eliminated[v.0 as usize] = true;
        (bucket, out)
    }
}

fn check_closed(network: &TensorNetwork) -> Result<(), ContractionError> {
    if !network.open_labels.is_empty() {
        return Err(ContractionError::OpenNetwork(network.open_labels.len()));
    }
    Ok(())
}

/// Replays an elimination order symbolically and records the step schedule.
pub fn plan_with_order(
    network: &TensorNetwork,
    order: &[Label],
    heuristic: Heuristic,
) -> Result<ContractionPlan, ContractionError> {
    check_closed(network)?;
    let mut seen = vec![false; network.n_labels];
    for &l in order {
        let idx = l.0 as usize;
        if idx >= network.n_labels || seen[idx] {
            return Err(ContractionError::InvalidOrder(format!(
                "label {l} is unknown or repeated"
            )));
        }
        seen[idx] = true;
    }
    if order.len() != network.n_labels {
        return Err(ContractionError::InvalidOrder(format!(
            "order covers {} of {} labels",
            order.len(),
            network.n_labels
        )));
    }

    let mut state = EliminationState::new(network);
    let mut steps = Vec::with_capacity(order.len() + 1);
    let mut width = 0;
    for &v in order {
        let snapshot: BTreeMap<usize, Vec<Label>> = state.carriers[v.0 as usize]
            .iter()
            .map(|s| (*s, state.live[s].clone()))
            .collect();
        let (bucket, out) = state.eliminate(v);
        let refs: Vec<&[Label]> = bucket.iter().map(|s| snapshot[s].as_slice()).collect();
        let spec = ContractionSpec::new(&refs, &[v])?;
        debug_assert_eq!(spec.out_labels(), out.as_slice());
        width = width.max(out.len());
        steps.push(PlanStep {
            operands: bucket,
            sum: vec![v],
            out_labels: out,
            spec,
        });
    }
    // disconnected components leave several scalars behind
    let rest: Vec<usize> = state.live.keys().copied().collect();
    if rest.len() > 1 {
        let empty: Vec<&[Label]> = rest.iter().map(|_| &[][..]).collect();
        steps.push(PlanStep {
            operands: rest,
            sum: Vec::new(),
            out_labels: Vec::new(),
            spec: ContractionSpec::new(&empty, &[])?,
        });
    }
    Ok(ContractionPlan {
        order: order.to_vec(),
        width,
        steps,
        n_inputs: network.stubs.len(),
        heuristic,
    })
}

fn greedy_order(network: &TensorNetwork, heuristic: Heuristic) -> Vec<Label> {
    let mut state = EliminationState::new(network);
    let mut order = Vec::with_capacity(network.n_labels);
    for _ in 0..network.n_labels {
        let mut best: Option<((usize, usize, u32), Label)> = None;
        for l in network.labels() {
            if state.eliminated[l.0 as usize] {
                continue;
            }
            let nb = state.neighbors(l);
            let key = match heuristic {
                Heuristic::GreedyMinDegree => (nb.len(), 0, l.0),
                _ => (state.fill_in(&nb), nb.len(), l.0),
            };
            if best.map_or(true, |(k, _)| key < k) {
                best = Some((key, l));
            }
        }
        let (_, v) = best.expect("an uneliminated label remains");
        state.eliminate(v);
        order.push(v);
    }
    order
}

/// Degree of `v` after eliminating `removed`: the labels outside
/// `removed ∪ {v}` reachable from `v` through eliminated labels.
fn reach_count(adj: &[u32], removed: u32, v: usize) -> usize {
    let mut visited = 1u32 << v;
    let mut frontier = 1u32 << v;
    let mut boundary = 0u32;
    while frontier != 0 {
        let u = frontier.trailing_zeros() as usize;
        frontier &= frontier - 1;
        let nb = adj[u] & !visited;
        visited |= nb;
        boundary |= nb & !removed;
        frontier |= nb & removed;
    }
    boundary.count_ones() as usize
}

/// Optimal order by dynamic programming over eliminated label sets.
fn exhaustive_order(network: &TensorNetwork) -> Result<Vec<Label>, ContractionError> {
    let n = network.n_labels;
    if n > EXHAUSTIVE_LABEL_LIMIT {
        return Err(ContractionError::ExhaustiveTooLarge {
            labels: n,
            limit: EXHAUSTIVE_LABEL_LIMIT,
        });
    }
    let mut adj = vec![0u32; n];
    for stub in &network.stubs {
        for a in &stub.labels {
            for b in &stub.labels {
                if a != b {
                    adj[a.0 as usize] |= 1 << b.0;
                }
            }
        }
    }
    let full = if n == 0 { 0 } else { (1u32 << n) - 1 };
    // best[s] = minimal width over orders that eliminate exactly the set s first
    let mut best = vec![usize::MAX; 1usize << n];
    best[0] = 0;
    for s in 1..=full {
        let mut rest = s;
        while rest != 0 {
            let v = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            let prev = s & !(1 << v);
            let cost = best[prev as usize].max(reach_count(&adj, prev, v));
            if cost < best[s as usize] {
                best[s as usize] = cost;
            }
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut s = full;
    while s != 0 {
        let mut rest = s;
        loop {
            let v = rest.trailing_zeros() as usize;
            rest &= rest - 1;
            let prev = s & !(1 << v);
            if best[prev as usize].max(reach_count(&adj, prev, v)) == best[s as usize] {
                order.push(Label(v as u32));
                s = prev;
                break;
            }
        }
    }
    order.reverse();
    Ok(order)
}

/// Finds an elimination order and its schedule. Deterministic: greedy ties
/// are broken by lower degree, then lower label id.
pub fn plan_order(
    network: &TensorNetwork,
    heuristic: Heuristic,
) -> Result<ContractionPlan, ContractionError> {
    check_closed(network)?;
    let order = match heuristic {
        Heuristic::Exhaustive => exhaustive_order(network)?,
        _ => greedy_order(network, heuristic),
    };
    plan_with_order(network, &order, heuristic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{inversion_test_template, Angle, Circuit, Gate};
    use crate::contraction::build_network;

    fn chain(depth: usize) -> TensorNetwork {
        let mut c = Circuit::new(1, 0, 0);
        for k in 0..depth {
            c.push(if k % 2 == 0 {
                Gate::rx(0, Angle::Fixed(0.3))
            } else {
                Gate::h(0)
            });
        }
        build_network(&c).unwrap()
    }

    #[test]
    fn chains_have_width_one() {
        for d in [1, 2, 5, 40] {
            let plan = plan_order(&chain(d), Heuristic::GreedyMinFill).unwrap();
            assert_eq!(plan.width, 1, "depth {d}");
        }
    }

    #[test]
    fn product_circuit_components_have_width_one() {
        let mut c = Circuit::new(5, 0, 0);
        for q in 0..5 {
            c.push(Gate::rx(q, Angle::Fixed(0.1)))
                .push(Gate::ry(q, Angle::Fixed(0.2)));
        }
        let net = build_network(&c).unwrap();
        let plan = plan_order(&net, Heuristic::GreedyMinFill).unwrap();
        assert_eq!(plan.width, 1);
        // five scalars are multiplied together at the end
        assert_eq!(plan.steps.last().unwrap().operands.len(), 5);
    }

    #[test]
    fn exhaustive_refuses_large_networks() {
        let net = build_network(&inversion_test_template(3, 1).unwrap()).unwrap();
        assert!(net.n_labels > EXHAUSTIVE_LABEL_LIMIT);
        assert!(matches!(
            plan_order(&net, Heuristic::Exhaustive),
            Err(ContractionError::ExhaustiveTooLarge { .. })
        ));
    }

    #[test]
    fn orders_are_validated() {
        let net = chain(3);
        assert!(plan_with_order(&net, &[Label(0)], Heuristic::GreedyMinFill).is_err());
        assert!(plan_with_order(
            &net,
            &[Label(0), Label(0), Label(1), Label(2)],
            Heuristic::GreedyMinFill
        )
        .is_err());
    }

    #[test]
    fn planning_is_deterministic() {
        let net = build_network(&inversion_test_template(5, 2).unwrap()).unwrap();
        let a = plan_order(&net, Heuristic::GreedyMinFill).unwrap();
        let b = plan_order(&net, Heuristic::GreedyMinFill).unwrap();
        assert_eq!(a.order, b.order);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    }

    #[test]
    fn plan_dump_shape() {
        let plan = plan_order(&chain(2), Heuristic::GreedyMinFill).unwrap();
        let v: serde_json::Value = serde_json::from_str(&plan.to_json().unwrap()).unwrap();
        assert_eq!(v["width"], 1);
        assert_eq!(v["order"].as_array().unwrap().len(), 3);
        assert!(v["schedule"][0].as_array().unwrap().len() >= 2);
    }
}
