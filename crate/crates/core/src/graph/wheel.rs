//! Wheel-graph topology, input encoding, and the fixed cosine/sine decoder.
//!
//! N exterior nodes sit at angles `2*pi*i/N` on a ring, each connected to its
//! ring neighbors in both directions and to a central hub both ways; a pusher
//! node feeds every other node through a shared attention-weighted edge. All
//! exterior nodes are computationally equivalent, so their angular identity
//! is injected as a read-only code in the leading slots of the hidden state.

use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::graph::{Edge, EdgeKind, GraphTopology, HiddenStates, NodeKind};

/// Leading read-only slots: `[cos, sin, center?, pusher?, x, y, theta]`.
pub const WHEEL_CODE_LEN: usize = 7;

/// Smallest hidden dimension that leaves the decoder's six slots disjoint
/// from the seven code slots.
pub const MIN_WHEEL_DIM: usize = 13;

/// Ring of `n >= 2` exterior nodes, one center, one pusher. Edge layout: n
/// clockwise, n counter-clockwise, n to-center, n from-center, then one
/// pusher-out edge to every non-pusher node (exteriors first, center last).
pub fn wheel_topology(n: usize) -> Result<GraphTopology> {
    if n < 2 {
        return Err(Error::InvalidSpec(format!("wheel needs >= 2 exterior nodes, got {n}")));
    }
    let center = n;
    let pusher = n + 1;
    let mut nodes = Vec::with_capacity(n + 2);
    for i in 0..n {
        nodes.push(NodeKind::Exterior(i));
    }
    nodes.push(NodeKind::Center);
    nodes.push(NodeKind::Pusher);

    let mut edges = Vec::with_capacity(4 * n + n + 1);
    for i in 0..n {
        edges.push(Edge {
            src: i,
            dst: (i + 1) % n,
            kind: EdgeKind::Cw,
        });
    }
    for i in 0..n {
        edges.push(Edge {
            src: i,
            dst: (i + n - 1) % n,
            kind: EdgeKind::Ccw,
        });
    }
    for i in 0..n {
        edges.push(Edge {
            src: i,
            dst: center,
            kind: EdgeKind::ToCenter,
        });
    }
    for i in 0..n {
        edges.push(Edge {
            src: center,
            dst: i,
            kind: EdgeKind::FromCenter,
        });
    }
    for v in 0..=center {
        edges.push(Edge {
            src: pusher,
            dst: v,
            kind: EdgeKind::PusherOut,
        });
    }
    Ok(GraphTopology { nodes, edges })
}

/// Initial hidden states for a wheel of `n` nodes with hidden dimension `d`.
/// `x` is the 3-component pusher input, already normalized by the caller.
pub fn wheel_encode(x: &[f64], n: usize, d: usize) -> Result<HiddenStates> {
    if x.len() != 3 {
        return Err(Error::DimensionMismatch {
            context: "wheel encode input",
            expected: 3,
            got: x.len(),
        });
    }
    if n < 2 {
        return Err(Error::InvalidSpec(format!("wheel needs >= 2 exterior nodes, got {n}")));
    }
    if d < MIN_WHEEL_DIM {
        return Err(Error::InvalidSpec(format!(
            "wheel hidden dim must be >= {MIN_WHEEL_DIM}, got {d}"
        )));
    }
    let mut states = HiddenStates::zeros(n + 2, d, WHEEL_CODE_LEN);
    for i in 0..n {
        let theta = TAU * i as f64 / n as f64;
        states.states[i][0] = theta.cos();
        states.states[i][1] = theta.sin();
    }
    states.states[n][2] = 1.0; // center flag
    let pusher = &mut states.states[n + 1];
    pusher[3] = 1.0;
    pusher[4] = x[0];
    pusher[5] = x[1];
    pusher[6] = x[2];
    Ok(states)
}

/// Fixed linear decoder: averages, over exterior nodes, the last three slots
/// weighted by `cos(theta_i)` plus slots `[d-6, d-3)` weighted by
/// `sin(theta_i)`. Equal states on all exteriors decode to zero because the
/// cosines and sines sum to zero around the ring.
pub fn wheel_decode(states: &HiddenStates, n: usize, d: usize) -> Result<[f64; 3]> {
    if states.node_count() != n + 2 || states.dim() != d {
        return Err(Error::ShapeMismatch(format!(
            "decoder expects a wheel of {} nodes with dim {d}, got {} nodes with dim {}",
            n + 2,
            states.node_count(),
            states.dim()
        )));
    }
    if d < MIN_WHEEL_DIM {
        return Err(Error::InvalidSpec(format!(
            "wheel hidden dim must be >= {MIN_WHEEL_DIM}, got {d}"
        )));
    }
    let mut y = [0.0; 3];
    for i in 0..n {
        let theta = TAU * i as f64 / n as f64;
        let (cos, sin) = (theta.cos(), theta.sin());
        let h = &states.states[i];
        for c in 0..3 {
            y[c] += cos * h[d - 3 + c] + sin * h[d - 6 + c];
        }
    }
    for v in &mut y {
        *v /= n as f64;
    }
    Ok(y)
}

/// Decoder linearization used by the backward pass: contribution of `dy` to
/// each exterior node's state gradient.
pub(crate) fn wheel_decode_backward(dstates: &mut [Vec<f64>], dy: &[f64; 3], n: usize, d: usize) {
    for (i, ds) in dstates.iter_mut().enumerate().take(n) {
        let theta = TAU * i as f64 / n as f64;
        let (cos, sin) = (theta.cos(), theta.sin());
        for c in 0..3 {
            ds[d - 3 + c] += cos / n as f64 * dy[c];
            ds[d - 6 + c] += sin / n as f64 * dy[c];
        }
    }
}
