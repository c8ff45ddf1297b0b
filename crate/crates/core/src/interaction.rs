//! Gated propagation of per-category states over the co-occurrence graph.
//!
//! Each step aggregates neighbour states along outgoing and incoming edges,
//! `a_c = [Σ_c' A[c][c'] h_c', Σ_c' A[c'][c] h_c']`, then applies a GRU-style
//! update without biases. All nodes update from the previous step's snapshot.
//! States are rows, so weight matrices multiply from the right.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::cooccurrence::CooccurrenceGraph;
use crate::error::{dim_err, Error, Result};
use crate::math;
use crate::tape::{Tape, Var};
use crate::tensor::{ParamId, ParamSet, Tensor};

/// Node states at one timestep.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStateSet {
    pub t: usize,
    /// `C × d_h`
    pub states: Tensor,
}

/// `h_c^0 = f_c`.
pub fn init_states(category_features: &Tensor, hidden: usize) -> Result<HiddenStateSet> {
    let s = category_features.shape();
    if s.len() != 2 || s[1] != hidden {
        return Err(dim_err("init_states", s, &[hidden]));
    }
    Ok(HiddenStateSet {
        t: 0,
        states: category_features.clone(),
    })
}

/// Parameter slots of the propagation network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PropagationParams {
    pub hidden: usize,
    /// message → update gate, `2d_h × d_h`
    pub w_z: ParamId,
    /// state → update gate, `d_h × d_h`
    pub u_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    /// message → candidate
    pub w: ParamId,
    /// gated state → candidate
    pub u: ParamId,
}

impl PropagationParams {
    pub fn register<R: Rng + ?Sized>(
        params: &mut ParamSet,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("hidden dimension must be positive".into()));
        }
        let msg_bound = 1.0 / math::sqrt((2 * hidden) as f64);
        let state_bound = 1.0 / math::sqrt(hidden as f64);
        let msg = |name: &str, ps: &mut ParamSet, rng: &mut R| {
            ps.insert(name, Tensor::uniform(&[2 * hidden, hidden], msg_bound, rng))
        };
        let w_z = msg("ggnn.Wz", params, rng)?;
        let u_z = params.insert(
            "ggnn.Uz",
            Tensor::uniform(&[hidden, hidden], state_bound, rng),
        )?;
        let w_r = msg("ggnn.Wr", params, rng)?;
        let u_r = params.insert(
            "ggnn.Ur",
            Tensor::uniform(&[hidden, hidden], state_bound, rng),
        )?;
        let w = msg("ggnn.W", params, rng)?;
        let u = params.insert(
            "ggnn.U",
            Tensor::uniform(&[hidden, hidden], state_bound, rng),
        )?;
        Ok(PropagationParams {
            hidden,
            w_z,
            u_z,
            w_r,
            u_r,
            w,
            u,
        })
    }

    pub fn load(&self, tape: &mut Tape, params: &ParamSet) -> PropagationVars {
        PropagationVars {
            w_z: tape.param(params, self.w_z),
            u_z: tape.param(params, self.u_z),
            w_r: tape.param(params, self.w_r),
            u_r: tape.param(params, self.u_r),
            w: tape.param(params, self.w),
            u: tape.param(params, self.u),
        }
    }

    /// Plain copies of the six matrices, for the tape-free reference path.
    pub fn weights(&self, params: &ParamSet) -> PropagationWeights {
        PropagationWeights {
            w_z: params.get(self.w_z).clone(),
            u_z: params.get(self.u_z).clone(),
            w_r: params.get(self.w_r).clone(),
            u_r: params.get(self.u_r).clone(),
            w: params.get(self.w).clone(),
            u: params.get(self.u).clone(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PropagationVars {
    pub w_z: Var,
    pub u_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub w: Var,
    pub u: Var,
}

/// Adjacency and its transpose as tape constants.
#[derive(Debug, Clone, Copy)]
pub struct GraphVars {
    pub adjacency: Var,
    pub adjacency_t: Var,
}

impl GraphVars {
    pub fn load(tape: &mut Tape, graph: &CooccurrenceGraph) -> Result<Self> {
        let adjacency = tape.constant(graph.adjacency().clone());
        let adjacency_t = tape.transpose(adjacency)?;
        Ok(GraphVars {
            adjacency,
            adjacency_t,
        })
    }
}

/// `C × 2d_h` messages: `[A·H, Aᵀ·H]`.
pub fn aggregate(tape: &mut Tape, states: Var, graph: &GraphVars) -> Result<Var> {
    let c = tape.shape(graph.adjacency)[0];
    if tape.shape(states)[0] != c {
        return Err(dim_err("aggregate", tape.shape(states), &[c, c]));
    }
    let outgoing = tape.matmul(graph.adjacency, states)?;
    let incoming = tape.matmul(graph.adjacency_t, states)?;
    tape.concat(outgoing, incoming, 1)
}

/// GRU-style update of all rows of `h_prev` given their messages.
pub fn gated_update(tape: &mut Tape, msg: Var, h_prev: Var, vars: &PropagationVars) -> Result<Var> {
    let gate = |tape: &mut Tape, w: Var, u: Var| -> Result<Var> {
        let from_msg = tape.matmul(msg, w)?;
        let from_state = tape.matmul(h_prev, u)?;
        let pre = tape.add(from_msg, from_state)?;
        Ok(tape.sigmoid(pre))
    };
    let z = gate(tape, vars.w_z, vars.u_z)?;
    let r = gate(tape, vars.w_r, vars.u_r)?;
    let from_msg = tape.matmul(msg, vars.w)?;
    let reset = tape.mul(r, h_prev)?;
    let from_state = tape.matmul(reset, vars.u)?;
    let pre = tape.add(from_msg, from_state)?;
    let candidate = tape.tanh(pre);
    let one = tape.constant(Tensor::scalar(1.0));
    let keep = tape.sub(one, z)?;
    let kept = tape.mul(keep, h_prev)?;
    let written = tape.mul(z, candidate)?;
    tape.add(kept, written)
}

/// `steps` rounds of aggregate + gated update.
pub fn propagate(
    tape: &mut Tape,
    init: Var,
    graph: &GraphVars,
    vars: &PropagationVars,
    steps: usize,
) -> Result<Var> {
    let mut h = init;
    for _ in 0..steps {
        let msg = aggregate(tape, h, graph)?;
        h = gated_update(tape, msg, h, vars)?;
    }
    Ok(h)
}

/// Plain weight matrices of the propagation network.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationWeights {
    pub w_z: Tensor,
    pub u_z: Tensor,
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub w: Tensor,
    pub u: Tensor,
}

impl PropagationWeights {
    pub fn zeros(hidden: usize) -> Self {
        let msg = Tensor::zeros(&[2 * hidden, hidden]);
        let state = Tensor::zeros(&[hidden, hidden]);
        PropagationWeights {
            w_z: msg.clone(),
            u_z: state.clone(),
            w_r: msg.clone(),
            u_r: state.clone(),
            w: msg,
            u: state,
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.shape()[0]
    }
}

/// Intermediate values of one node's update.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeUpdate {
    pub update_gate: Vec<f64>,
    pub reset_gate: Vec<f64>,
    pub candidate: Vec<f64>,
    pub state: Vec<f64>,
}

/// Row vector times matrix, accumulating in the same order as the tape.
fn row_times(row: &[f64], m: &Tensor) -> Vec<f64> {
    let cols = m.shape()[1];
    let mut out = vec![0.0; cols];
    for (p, &x) in row.iter().enumerate() {
        for (o, &w) in out.iter_mut().zip(m.row(p)) {
            *o += x * w;
        }
    }
    out
}

/// Single-node gated update without a tape.
pub fn gated_update_node(
    msg: &[f64],
    h_prev: &[f64],
    weights: &PropagationWeights,
) -> Result<NodeUpdate> {
    let d = weights.hidden();
    if msg.len() != 2 * d || h_prev.len() != d {
        return Err(dim_err(
            "gated_update",
            &[msg.len(), h_prev.len()],
            &[2 * d, d],
        ));
    }
    let gate = |w: &Tensor, u: &Tensor| -> Vec<f64> {
        let a = row_times(msg, w);
        let b = row_times(h_prev, u);
        a.iter()
            .zip(&b)
            .map(|(x, y)| math::sigmoid(x + y))
            .collect()
    };
    let z = gate(&weights.w_z, &weights.u_z);
    let r = gate(&weights.w_r, &weights.u_r);
    let reset: Vec<f64> = r.iter().zip(h_prev).map(|(r, h)| r * h).collect();
    let a = row_times(msg, &weights.w);
    let b = row_times(&reset, &weights.u);
    let candidate: Vec<f64> = a.iter().zip(&b).map(|(x, y)| math::tanh(x + y)).collect();
    let state = (0..d)
        .map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * candidate[i])
        .collect();
    Ok(NodeUpdate {
        update_gate: z,
        reset_gate: r,
        candidate,
        state,
    })
}

/// Order in which [`propagate_nodes`] visits nodes within a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeOrder {
    Ascending,
    Descending,
}

/// Message of node `c` computed from a snapshot of all states.
pub fn node_message(adjacency: &Tensor, states: &Tensor, c: usize) -> Vec<f64> {
    let n = adjacency.shape()[0];
    let d = states.shape()[1];
    let mut out = vec![0.0; 2 * d];
    for other in 0..n {
        let w_out = adjacency.at(c, other);
        let w_in = adjacency.at(other, c);
        for (i, &h) in states.row(other).iter().enumerate() {
            out[i] += w_out * h;
            out[d + i] += w_in * h;
        }
    }
    out
}

/// Node-by-node propagation without a tape. Every node in a step reads the
/// previous step's snapshot, so `order` does not affect the result.
pub fn propagate_nodes(
    init: &HiddenStateSet,
    graph: &CooccurrenceGraph,
    weights: &PropagationWeights,
    steps: usize,
    order: NodeOrder,
) -> Result<HiddenStateSet> {
    let c = graph.num_categories();
    let d = weights.hidden();
    if init.states.shape() != [c, d] {
        return Err(dim_err("propagate", init.states.shape(), &[c, d]));
    }
    let mut current = init.clone();
    for _ in 0..steps {
        let mut next = Tensor::zeros(&[c, d]);
        let nodes: Vec<usize> = match order {
            NodeOrder::Ascending => (0..c).collect(),
            NodeOrder::Descending => (0..c).rev().collect(),
        };
        for node in nodes {
            let msg = node_message(graph.adjacency(), &current.states, node);
            let upd = gated_update_node(&msg, current.states.row(node), weights)?;
            next.data_mut()[node * d..(node + 1) * d].copy_from_slice(&upd.state);
        }
        current = HiddenStateSet {
            t: current.t + 1,
            states: next,
        };
    }
    Ok(current)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::string::String;

    fn graph(rows: &[&[f64]]) -> CooccurrenceGraph {
        let c = rows.len();
        let names = (0..c).map(|i| format!("c{i}")).collect::<Vec<String>>();
        CooccurrenceGraph::from_parts(names, Tensor::from_rows(rows).unwrap()).unwrap()
    }

    fn tape_aggregate(g: &CooccurrenceGraph, states: Tensor) -> Tensor {
        let mut t = Tape::new();
        let gv = GraphVars::load(&mut t, g).unwrap();
        let h = t.constant(states);
        let m = aggregate(&mut t, h, &gv).unwrap();
        t.value(m).clone()
    }

    #[test]
    fn identity_graph_repeats_own_state() {
        let g = graph(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let m = tape_aggregate(&g, Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap());
        assert_eq!(m.row(0), &[1.0, 2.0, 1.0, 2.0]);
        assert_eq!(m.row(1), &[3.0, 4.0, 3.0, 4.0]);
    }

    #[test]
    fn zero_graph_gives_zero_messages() {
        let g = graph(&[&[0.0, 0.0], &[0.0, 0.0]]);
        let m = tape_aggregate(&g, Tensor::from_rows(&[&[1.0], &[3.0]]).unwrap());
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_node_in_out_example() {
        let g = graph(&[&[1.0, 0.5], &[1.0, 1.0]]);
        let m = tape_aggregate(&g, Tensor::from_rows(&[&[2.0], &[4.0]]).unwrap());
        assert_eq!(m.row(0), &[4.0, 6.0]);
        assert_eq!(m.row(1), &[6.0, 5.0]);
        let h = Tensor::from_rows(&[&[2.0], &[4.0]]).unwrap();
        assert_eq!(node_message(g.adjacency(), &h, 0), vec![4.0, 6.0]);
        assert_eq!(node_message(g.adjacency(), &h, 1), vec![6.0, 5.0]);
    }

    #[test]
    fn zero_weights_halve_state() {
        let w = PropagationWeights::zeros(3);
        let upd =
            gated_update_node(&[0.7, -1.0, 2.0, 0.1, 0.2, 0.3], &[1.0, -2.0, 0.25], &w).unwrap();
        assert_eq!(upd.update_gate, vec![0.5; 3]);
        assert_eq!(upd.reset_gate, vec![0.5; 3]);
        assert_eq!(upd.candidate, vec![0.0; 3]);
        assert_eq!(upd.state, vec![0.5, -1.0, 0.125]);
        let zero = gated_update_node(&[0.0; 6], &[0.0; 3], &w).unwrap();
        assert_eq!(zero.state, vec![0.0; 3]);
    }

    #[test]
    fn init_copies_features() {
        let f = Tensor::from_rows(&[&[1.5, -2.0], &[0.0, 3.0]]).unwrap();
        let h = init_states(&f, 2).unwrap();
        assert_eq!(h.t, 0);
        assert_eq!(h.states, f);
        assert!(init_states(&f, 3).is_err());
        let z = init_states(&Tensor::zeros(&[4, 2]), 2).unwrap();
        assert!(z.states.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_steps_is_identity() {
        let g = graph(&[&[1.0, 0.3], &[0.2, 1.0]]);
        let init = init_states(&Tensor::from_rows(&[&[1.0], &[2.0]]).unwrap(), 1).unwrap();
        let w = PropagationWeights::zeros(1);
        let out = propagate_nodes(&init, &g, &w, 0, NodeOrder::Ascending).unwrap();
        assert_eq!(out, init);
    }

    #[test]
    fn update_rejects_bad_shapes() {
        let w = PropagationWeights::zeros(2);
        assert!(gated_update_node(&[0.0; 3], &[0.0; 2], &w).is_err());
        let g = graph(&[&[1.0]]);
        let init = init_states(&Tensor::zeros(&[1, 3]), 3).unwrap();
        assert!(propagate_nodes(&init, &g, &w, 1, NodeOrder::Ascending).is_err());
    }
}
