//! Unrolled graph-network execution with exact reverse-mode gradients.
//!
//! One message-passing step: every directed edge applies its edge module to
//! the concatenated source and destination states; messages leaving the
//! pusher are additionally scaled by a softmax over the attention logits its
//! shared edge module emits (one extra output slot). Every node then applies
//! its node module to its own state concatenated with the summed incoming
//! messages, after which the read-only code slots are re-imposed. The pusher
//! is a pure source: its state is copied through unchanged.
//!
//! The forward pass records everything needed to backpropagate exactly:
//! state snapshots per step, per-module tapes, and the attention weights.
//! Module gradients are accumulated per *library entry*, so a module
//! occupying several slots receives the sum of its per-slot gradients.

use crate::error::{Error, Result};
use crate::graph::gen::{gen_encode, MIN_GEN_DIM};
use crate::graph::wheel::{wheel_decode, wheel_decode_backward, wheel_encode};
use crate::graph::{
    EdgeKind, GraphFamily, GraphTopology, HiddenStates, ModuleLibrary, NodeKind, Structure,
};
use crate::nn::{MlpGradients, MlpTape};

/// Gradients accumulated per library module. `None` means the module did not
/// appear in the computation and received no gradient.
#[derive(Debug)]
pub struct LibraryGrads {
    pub node: Vec<Option<MlpGradients>>,
    pub edge: Vec<Option<MlpGradients>>,
    pub pusher: Option<MlpGradients>,
    pub readout: Option<MlpGradients>,
}

impl LibraryGrads {
    pub fn empty(library: &ModuleLibrary) -> Self {
        LibraryGrads {
            node: (0..library.node_modules.len()).map(|_| None).collect(),
            edge: (0..library.edge_modules.len()).map(|_| None).collect(),
            pusher: None,
            readout: None,
        }
    }

    /// Accumulate another gradient set (e.g. across batch samples).
    pub fn add_assign(&mut self, other: &LibraryGrads) -> Result<()> {
        fn merge(slot: &mut Option<MlpGradients>, incoming: &Option<MlpGradients>) -> Result<()> {
            if let Some(g) = incoming {
                match slot {
                    Some(acc) => acc.add_assign(g)?,
                    None => *slot = Some(g.clone()),
                }
            }
            Ok(())
        }
        if self.node.len() != other.node.len() || self.edge.len() != other.edge.len() {
            return Err(Error::ShapeMismatch("library gradient sizes differ".into()));
        }
        for (a, b) in self.node.iter_mut().zip(&other.node) {
            merge(a, b)?;
        }
        for (a, b) in self.edge.iter_mut().zip(&other.edge) {
            merge(a, b)?;
        }
        merge(&mut self.pusher, &other.pusher)?;
        merge(&mut self.readout, &other.readout)?;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.node
            .iter()
            .chain(self.edge.iter())
            .chain([&self.pusher, &self.readout])
            .all(|g| g.as_ref().is_none_or(MlpGradients::is_finite))
    }
}

struct AttentionTape {
    /// Edge indices of the pusher's outgoing edges, in topology order.
    edge_ids: Vec<usize>,
    weights: Vec<f64>,
    /// Unscaled message part (first d outputs) per pusher edge.
    raw: Vec<Vec<f64>>,
}

struct StepTape {
    /// Indexed by edge id; every edge ran exactly one module forward.
    edge_tapes: Vec<MlpTape>,
    /// Indexed by node id; `None` for the pusher (no update).
    node_tapes: Vec<Option<MlpTape>>,
    attention: Option<AttentionTape>,
}

enum DecodeTape {
    Wheel,
    Gen { readouts: Vec<MlpTape> },
}

/// Record of one `agn_forward` call, sufficient for an exact backward pass
/// against the same topology, structure, and library.
pub struct AgnTape {
    family: GraphFamily,
    /// T+1 snapshots; `states[0]` is the encoding, `states[T]` feeds decode.
    states: Vec<HiddenStates>,
    steps: Vec<StepTape>,
    decode: DecodeTape,
    dim: usize,
}

impl AgnTape {
    pub fn mp_steps(&self) -> usize {
        self.steps.len()
    }

    /// State snapshot after `t` message-passing steps.
    pub fn state_after(&self, t: usize) -> Option<&HiddenStates> {
        self.states.get(t)
    }

    /// Attention weights used at step `t` (wheel graphs only).
    pub fn attention_weights(&self, t: usize) -> Option<&[f64]> {
        self.steps
            .get(t)
            .and_then(|s| s.attention.as_ref())
            .map(|a| a.weights.as_slice())
    }
}

fn validate_run(
    topology: &GraphTopology,
    structure: &Structure,
    library: &ModuleLibrary,
) -> Result<GraphFamily> {
    topology.validate()?;
    library.validate()?;
    structure.validate(
        topology,
        library.node_modules.len(),
        library.edge_modules.len(),
    )?;
    let family = topology.family()?;
    match family {
        GraphFamily::Wheel { .. } => {
            if library.hidden_dim < crate::graph::wheel::MIN_WHEEL_DIM {
                return Err(Error::InvalidSpec(format!(
                    "wheel graphs need hidden dim >= {}, library has {}",
                    crate::graph::wheel::MIN_WHEEL_DIM,
                    library.hidden_dim
                )));
            }
        }
        GraphFamily::Gen => {
            if library.hidden_dim < MIN_GEN_DIM {
                return Err(Error::InvalidSpec(format!(
                    "grid graphs need hidden dim >= {MIN_GEN_DIM}, library has {}",
                    library.hidden_dim
                )));
            }
        }
    }
    Ok(family)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

fn mp_step_taped(
    topology: &GraphTopology,
    structure: &Structure,
    library: &ModuleLibrary,
    states: &HiddenStates,
) -> Result<(HiddenStates, StepTape)> {
    let d = library.hidden_dim;
    let n = topology.node_count();
    if states.node_count() != n || states.dim() != d {
        return Err(Error::ShapeMismatch(format!(
            "states are {}x{}, expected {n}x{d}",
            states.node_count(),
            states.dim()
        )));
    }
    let code_len = states.code_len;

    let mut incoming = vec![vec![0.0; d]; n];
    let mut edge_tapes: Vec<MlpTape> = Vec::with_capacity(topology.edge_count());
    let mut att_ids = Vec::new();
    let mut att_logits = Vec::new();
    let mut att_raw = Vec::new();

    for (ei, edge) in topology.edges.iter().enumerate() {
        let input = concat(&states.states[edge.src], &states.states[edge.dst]);
        if edge.kind == EdgeKind::PusherOut {
            let (out, tape) = library.pusher_edge.forward(&input)?;
            edge_tapes.push(tape);
            att_ids.push(ei);
            att_logits.push(out[d]);
            let mut raw = out;
            raw.truncate(d);
            att_raw.push(raw);
        } else {
            let module = &library.edge_modules[structure.edge_assign[ei]];
            let (msg, tape) = module.forward(&input)?;
            edge_tapes.push(tape);
            let dst = &mut incoming[edge.dst];
            for (acc, m) in dst.iter_mut().zip(&msg) {
                *acc += m;
            }
        }
    }

    let attention = if att_ids.is_empty() {
        None
    } else {
        let weights = softmax(&att_logits);
        for (k, &ei) in att_ids.iter().enumerate() {
            let dst = &mut incoming[topology.edges[ei].dst];
            for (acc, m) in dst.iter_mut().zip(&att_raw[k]) {
                *acc += weights[k] * m;
            }
        }
        Some(AttentionTape {
            edge_ids: att_ids,
            weights,
            raw: att_raw,
        })
    };

    let mut new_states = Vec::with_capacity(n);
    let mut node_tapes: Vec<Option<MlpTape>> = Vec::with_capacity(n);
    for v in 0..n {
        if matches!(topology.nodes[v], NodeKind::Pusher) {
            new_states.push(states.states[v].clone());
            node_tapes.push(None);
            continue;
        }
        let input = concat(&states.states[v], &incoming[v]);
        let module = &library.node_modules[structure.node_assign[v]];
        let (mut h, tape) = module.forward(&input)?;
        h[..code_len].copy_from_slice(&states.states[v][..code_len]);
        new_states.push(h);
        node_tapes.push(Some(tape));
    }

    Ok((
        HiddenStates {
            states: new_states,
            code_len,
        },
        StepTape {
            edge_tapes,
            node_tapes,
            attention,
        },
    ))
}

/// One message-passing step (validated, forward only).
pub fn message_passing_step(
    topology: &GraphTopology,
    structure: &Structure,
    library: &ModuleLibrary,
    states: &HiddenStates,
) -> Result<HiddenStates> {
    topology.validate()?;
    library.validate()?;
    structure.validate(
        topology,
        library.node_modules.len(),
        library.edge_modules.len(),
    )?;
    mp_step_taped(topology, structure, library, states).map(|(s, _)| s)
}

/// Full forward pass: encode the input, run `mp_steps` message-passing steps,
/// decode. Returns the 3-vector prediction and the tape for `agn_backward`.
pub fn agn_forward(
    topology: &GraphTopology,
    structure: &Structure,
    library: &ModuleLibrary,
    x: &[f64],
    mp_steps: usize,
) -> Result<([f64; 3], AgnTape)> {
    let family = validate_run(topology, structure, library)?;
    let d = library.hidden_dim;
    let encoded = match family {
        GraphFamily::Wheel { exterior } => wheel_encode(x, exterior, d)?,
        GraphFamily::Gen => gen_encode(x, topology, d)?,
    };
    let mut states = Vec::with_capacity(mp_steps + 1);
    let mut steps = Vec::with_capacity(mp_steps);
    states.push(encoded);
    for _ in 0..mp_steps {
        let (next, tape) = mp_step_taped(topology, structure, library, states.last().unwrap())?;
        states.push(next);
        steps.push(tape);
    }
    let final_states = states.last().unwrap();
    let (y, decode) = match family {
        GraphFamily::Wheel { exterior } => (
            wheel_decode(final_states, exterior, d)?,
            DecodeTape::Wheel,
        ),
        GraphFamily::Gen => {
            let mut sum = [0.0; 3];
            let mut readouts = Vec::with_capacity(final_states.node_count());
            for h in &final_states.states {
                let (out, tape) = library.gen_readout.forward(h)?;
                for c in 0..3 {
                    sum[c] += out[c];
                }
                readouts.push(tape);
            }
            let count = final_states.node_count() as f64;
            for v in &mut sum {
                *v /= count;
            }
            (sum, DecodeTape::Gen { readouts })
        }
    };
    Ok((
        y,
        AgnTape {
            family,
            states,
            steps,
            decode,
            dim: d,
        },
    ))
}

/// Exact reverse pass for `y . dy` through the tape. Gradients land on the
/// library modules actually used; a module filling several slots gets the sum
/// of its per-slot contributions.
pub fn agn_backward(
    topology: &GraphTopology,
    structure: &Structure,
    library: &ModuleLibrary,
    tape: &AgnTape,
    dy: &[f64; 3],
) -> Result<LibraryGrads> {
    let family = validate_run(topology, structure, library)?;
    let d = library.hidden_dim;
    let n = topology.node_count();
    if tape.family != family || tape.dim != d || tape.states[0].node_count() != n {
        return Err(Error::ShapeMismatch(
            "tape does not match this topology/library (stale tape?)".into(),
        ));
    }

    let mut grads = LibraryGrads::empty(library);
    let mut dstate = vec![vec![0.0; d]; n];

    match (&tape.decode, family) {
        (DecodeTape::Wheel, GraphFamily::Wheel { exterior }) => {
            wheel_decode_backward(&mut dstate, dy, exterior, d);
        }
        (DecodeTape::Gen { readouts }, GraphFamily::Gen) => {
            let scale = 1.0 / n as f64;
            let dy_node: Vec<f64> = dy.iter().map(|v| v * scale).collect();
            for (v, ro_tape) in readouts.iter().enumerate() {
                let slot = grads
                    .readout
                    .get_or_insert_with(|| MlpGradients::zeros(library.gen_readout.spec()));
                let dx = library.gen_readout.backward_acc(ro_tape, &dy_node, slot)?;
                for (acc, val) in dstate[v].iter_mut().zip(&dx) {
                    *acc += val;
                }
            }
        }
        _ => {
            return Err(Error::ShapeMismatch(
                "tape decode record does not match the topology family".into(),
            ))
        }
    }

    let code_len = tape.states[0].code_len;
    for t in (0..tape.steps.len()).rev() {
        let step = &tape.steps[t];
        let mut dprev = vec![vec![0.0; d]; n];
        let mut dincoming = vec![vec![0.0; d]; n];

        for v in 0..n {
            if matches!(topology.nodes[v], NodeKind::Pusher) {
                // Pusher state is copied through; gradient flows straight back.
                for (acc, g) in dprev[v].iter_mut().zip(&dstate[v]) {
                    *acc += g;
                }
                continue;
            }
            // Code slots were overwritten with the pre-step values, so their
            // gradient bypasses the node module entirely.
            let mut g = dstate[v].clone();
            for s in 0..code_len {
                dprev[v][s] += g[s];
                g[s] = 0.0;
            }
            let node_tape = step.node_tapes[v].as_ref().ok_or_else(|| {
                Error::ShapeMismatch("missing node tape (stale tape?)".into())
            })?;
            let midx = structure.node_assign[v];
            let module = &library.node_modules[midx];
            let slot = grads.node[midx]
                .get_or_insert_with(|| MlpGradients::zeros(module.spec()));
            let dx = module.backward_acc(node_tape, &g, slot)?;
            for (acc, val) in dprev[v].iter_mut().zip(&dx[..d]) {
                *acc += val;
            }
            for (acc, val) in dincoming[v].iter_mut().zip(&dx[d..]) {
                *acc += val;
            }
        }

        for (ei, edge) in topology.edges.iter().enumerate() {
            if edge.kind == EdgeKind::PusherOut {
                continue;
            }
            let midx = structure.edge_assign[ei];
            let module = &library.edge_modules[midx];
            let slot = grads.edge[midx]
                .get_or_insert_with(|| MlpGradients::zeros(module.spec()));
            let dx = module.backward_acc(&step.edge_tapes[ei], &dincoming[edge.dst], slot)?;
            for (acc, val) in dprev[edge.src].iter_mut().zip(&dx[..d]) {
                *acc += val;
            }
            for (acc, val) in dprev[edge.dst].iter_mut().zip(&dx[d..]) {
                *acc += val;
            }
        }

        if let Some(att) = &step.attention {
            let k = att.edge_ids.len();
            // message_k = w_k * raw_k with w = softmax(logits):
            // dw_k = raw_k . dmsg_k, draw_k = w_k * dmsg_k,
            // dlogit_k = w_k * (dw_k - sum_j w_j dw_j).
            let mut dw = vec![0.0; k];
            for (j, &ei) in att.edge_ids.iter().enumerate() {
                let dmsg = &dincoming[topology.edges[ei].dst];
                dw[j] = att.raw[j].iter().zip(dmsg).map(|(r, g)| r * g).sum();
            }
            let mix: f64 = att.weights.iter().zip(&dw).map(|(w, g)| w * g).sum();
            for (j, &ei) in att.edge_ids.iter().enumerate() {
                let dst = topology.edges[ei].dst;
                let mut dyfull = vec![0.0; d + 1];
                for (out, g) in dyfull[..d].iter_mut().zip(&dincoming[dst]) {
                    *out = att.weights[j] * g;
                }
                dyfull[d] = att.weights[j] * (dw[j] - mix);
                let slot = grads
                    .pusher
                    .get_or_insert_with(|| MlpGradients::zeros(library.pusher_edge.spec()));
                let dx = library.pusher_edge.backward_acc(&step.edge_tapes[ei], &dyfull, slot)?;
                for (acc, val) in dprev[topology.edges[ei].src].iter_mut().zip(&dx[..d]) {
                    *acc += val;
                }
                for (acc, val) in dprev[dst].iter_mut().zip(&dx[d..]) {
                    *acc += val;
                }
            }
        }

        dstate = dprev;
    }

    Ok(grads)
}
