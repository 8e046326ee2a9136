//! Graph networks over abstract node sets: topologies, per-task module
//! assignments (structures), the shared module library, and message-passing
//! execution with exact gradients.
//!
//! Two families are supported. The *wheel* models a pushed object as N
//! exterior nodes on a ring around a hub, plus a pusher node that broadcasts
//! the input through a shared attention-weighted edge. The *grid element*
//! family places nodes in the plane on a lattice; each node's module is
//! dictated by the material found at its position, so its structure is fixed
//! per task rather than searched.

mod engine;
mod gen;
mod wheel;

pub use engine::{agn_backward, agn_forward, message_passing_step, AgnTape, LibraryGrads};
pub use gen::{gen_decode, gen_encode, gen_topology, MaterialMap, GEN_CODE_LEN, GEN_INPUT_SLOT};
pub use wheel::{wheel_decode, wheel_encode, wheel_topology, WHEEL_CODE_LEN};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::nn::{Activation, MlpParams, MlpSpec};

/// What occupies a node's position in space, for grid-grounded graphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MaterialLabel {
    Empty,
    SmallMass,
    BigMass,
    NoMass,
}

impl MaterialLabel {
    pub const COUNT: usize = 4;

    /// Stable index used both for one-hot codes and node-module assignment.
    pub fn index(self) -> usize {
        match self {
            MaterialLabel::Empty => 0,
            MaterialLabel::SmallMass => 1,
            MaterialLabel::BigMass => 2,
            MaterialLabel::NoMass => 3,
        }
    }

    pub fn to_char(self) -> char {
        match self {
            MaterialLabel::Empty => 'e',
            MaterialLabel::SmallMass => 's',
            MaterialLabel::BigMass => 'b',
            MaterialLabel::NoMass => 'n',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'e' => Some(MaterialLabel::Empty),
            's' => Some(MaterialLabel::SmallMass),
            'b' => Some(MaterialLabel::BigMass),
            'n' => Some(MaterialLabel::NoMass),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NodeKind {
    /// Ring node `i` of `n` on the wheel.
    Exterior(usize),
    /// The wheel hub.
    Center,
    /// Input carrier; source-only, its state is never updated.
    Pusher,
    /// Spatially grounded node whose module is determined by material.
    GenCell {
        position: Point2,
        material: MaterialLabel,
    },
}

/// Which slot family a directed edge belongs to. Slots, not instances: two
/// edges of the same kind may still hold different modules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeKind {
    Cw,
    Ccw,
    ToCenter,
    FromCenter,
    /// Pusher to everything else; carries the fixed attention edge module.
    PusherOut,
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub kind: EdgeKind,
}

/// The fixed scaffold: nodes (ids are the vector index) and directed edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphTopology {
    pub nodes: Vec<NodeKind>,
    pub edges: Vec<Edge>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFamily {
    Wheel { exterior: usize },
    Gen,
}

impl GraphTopology {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.edges {
            if e.src >= self.nodes.len() || e.dst >= self.nodes.len() {
                return Err(Error::InvalidStructure(format!(
                    "edge {} -> {} references a missing node",
                    e.src, e.dst
                )));
            }
            if e.src == e.dst {
                return Err(Error::InvalidStructure(format!("self-edge at node {}", e.src)));
            }
        }
        self.family().map(|_| ())
    }

    /// Classify the topology, checking the node population is coherent.
    pub fn family(&self) -> Result<GraphFamily> {
        let mut exterior = 0usize;
        let mut centers = 0usize;
        let mut pushers = 0usize;
        let mut cells = 0usize;
        for node in &self.nodes {
            match node {
                NodeKind::Exterior(_) => exterior += 1,
                NodeKind::Center => centers += 1,
                NodeKind::Pusher => pushers += 1,
                NodeKind::GenCell { .. } => cells += 1,
            }
        }
        if cells > 0 && cells == self.nodes.len() {
            return Ok(GraphFamily::Gen);
        }
        if cells == 0 && exterior >= 2 && centers == 1 && pushers == 1 {
            return Ok(GraphFamily::Wheel { exterior });
        }
        Err(Error::InvalidStructure(format!(
            "unrecognized topology: {exterior} exterior, {centers} center, {pushers} pusher, {cells} cells"
        )))
    }

    pub fn pusher_index(&self) -> Option<usize> {
        self.nodes.iter().position(|n| matches!(n, NodeKind::Pusher))
    }

    /// Node slots that participate in structure search. The pusher carries a
    /// fixed module and is excluded.
    pub fn is_assignable_node(&self, v: usize) -> bool {
        !matches!(self.nodes[v], NodeKind::Pusher)
    }

    /// Edge slots that participate in structure search; pusher-out edges all
    /// share the fixed attention module.
    pub fn is_assignable_edge(&self, e: usize) -> bool {
        self.edges[e].kind != EdgeKind::PusherOut
    }

    pub fn assignable_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&v| self.is_assignable_node(v))
            .collect()
    }

    pub fn assignable_edges(&self) -> Vec<usize> {
        (0..self.edges.len())
            .filter(|&e| self.is_assignable_edge(e))
            .collect()
    }
}

/// Per-task assignment of one module index to every node slot and edge slot.
/// Entries at non-assignable slots (pusher node, pusher-out edges) are kept
/// at 0 so structures compare and hash canonically.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Structure {
    pub node_assign: Vec<usize>,
    pub edge_assign: Vec<usize>,
}

impl Structure {
    pub fn validate(&self, topology: &GraphTopology, node_modules: usize, edge_modules: usize) -> Result<()> {
        if self.node_assign.len() != topology.node_count() {
            return Err(Error::InvalidStructure(format!(
                "{} node assignments for {} nodes",
                self.node_assign.len(),
                topology.node_count()
            )));
        }
        if self.edge_assign.len() != topology.edge_count() {
            return Err(Error::InvalidStructure(format!(
                "{} edge assignments for {} edges",
                self.edge_assign.len(),
                topology.edge_count()
            )));
        }
        for (v, &m) in self.node_assign.iter().enumerate() {
            if topology.is_assignable_node(v) && m >= node_modules {
                return Err(Error::InvalidStructure(format!(
                    "node {v} assigned module {m}, library has {node_modules}"
                )));
            }
        }
        for (e, &m) in self.edge_assign.iter().enumerate() {
            if topology.is_assignable_edge(e) && m >= edge_modules {
                return Err(Error::InvalidStructure(format!(
                    "edge {e} assigned module {m}, library has {edge_modules}"
                )));
            }
        }
        Ok(())
    }

    /// Number of slots where two structures differ.
    pub fn hamming(&self, other: &Structure) -> usize {
        self.node_assign
            .iter()
            .zip(&other.node_assign)
            .filter(|(a, b)| a != b)
            .count()
            + self
                .edge_assign
                .iter()
                .zip(&other.edge_assign)
                .filter(|(a, b)| a != b)
                .count()
    }
}

/// Architecture knobs for a module library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryConfig {
    /// Hidden state width d. Wheel graphs need d >= 13 (7 code slots plus the
    /// 6 slots the decoder reads); grid graphs need d >= 7.
    pub hidden_dim: usize,
    pub node_modules: usize,
    pub edge_modules: usize,
    /// Hidden layer widths of every module MLP.
    pub module_hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for LibraryConfig {
    fn default() -> Self {
        LibraryConfig {
            hidden_dim: 16,
            node_modules: 4,
            edge_modules: 4,
            module_hidden: vec![32],
            activation: Activation::Tanh,
        }
    }
}

/// The shared trainable weights: node modules (input 2d -> d), edge modules
/// (input 2d -> d), the fixed pusher edge (2d -> d+1, last output is the
/// attention logit), and the grid readout head (d -> 3).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleLibrary {
    pub hidden_dim: usize,
    pub node_modules: Vec<MlpParams>,
    pub edge_modules: Vec<MlpParams>,
    pub pusher_edge: MlpParams,
    pub gen_readout: MlpParams,
}

impl ModuleLibrary {
    pub fn node_spec(cfg: &LibraryConfig) -> Result<MlpSpec> {
        MlpSpec::new(
            2 * cfg.hidden_dim,
            cfg.module_hidden.clone(),
            cfg.hidden_dim,
            cfg.activation,
        )
    }

    pub fn edge_spec(cfg: &LibraryConfig) -> Result<MlpSpec> {
        Self::node_spec(cfg)
    }

    pub fn pusher_spec(cfg: &LibraryConfig) -> Result<MlpSpec> {
        MlpSpec::new(
            2 * cfg.hidden_dim,
            cfg.module_hidden.clone(),
            cfg.hidden_dim + 1,
            cfg.activation,
        )
    }

    pub fn readout_spec(cfg: &LibraryConfig) -> Result<MlpSpec> {
        MlpSpec::new(cfg.hidden_dim, cfg.module_hidden.clone(), 3, cfg.activation)
    }

    pub fn init(cfg: &LibraryConfig, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(cfg, &mut rng, 1.0)
    }

    pub fn init_with_rng<R: rand::Rng + ?Sized>(
        cfg: &LibraryConfig,
        rng: &mut R,
        gain: f64,
    ) -> Result<Self> {
        if cfg.node_modules == 0 || cfg.edge_modules == 0 {
            return Err(Error::EmptyLibrary);
        }
        let node_spec = Self::node_spec(cfg)?;
        let edge_spec = Self::edge_spec(cfg)?;
        let node_modules = (0..cfg.node_modules)
            .map(|_| MlpParams::init_scaled(&node_spec, rng, gain))
            .collect::<Result<Vec<_>>>()?;
        let edge_modules = (0..cfg.edge_modules)
            .map(|_| MlpParams::init_scaled(&edge_spec, rng, gain))
            .collect::<Result<Vec<_>>>()?;
        let pusher_edge = MlpParams::init_scaled(&Self::pusher_spec(cfg)?, rng, gain)?;
        let gen_readout = MlpParams::init_scaled(&Self::readout_spec(cfg)?, rng, gain)?;
        Ok(ModuleLibrary {
            hidden_dim: cfg.hidden_dim,
            node_modules,
            edge_modules,
            pusher_edge,
            gen_readout,
        })
    }

    /// All-zero weights; mostly useful in tests (zeros propagate to a zero
    /// prediction).
    pub fn zeros(cfg: &LibraryConfig) -> Result<Self> {
        Ok(ModuleLibrary {
            hidden_dim: cfg.hidden_dim,
            node_modules: (0..cfg.node_modules)
                .map(|_| MlpParams::zeros(&Self::node_spec(cfg)?))
                .collect::<Result<Vec<_>>>()?,
            edge_modules: (0..cfg.edge_modules)
                .map(|_| MlpParams::zeros(&Self::edge_spec(cfg)?))
                .collect::<Result<Vec<_>>>()?,
            pusher_edge: MlpParams::zeros(&Self::pusher_spec(cfg)?)?,
            gen_readout: MlpParams::zeros(&Self::readout_spec(cfg)?)?,
        })
    }

    /// Check every module's spec against the shared hidden dimension.
    pub fn validate(&self) -> Result<()> {
        let d = self.hidden_dim;
        if self.node_modules.is_empty() || self.edge_modules.is_empty() {
            return Err(Error::EmptyLibrary);
        }
        for m in self.node_modules.iter().chain(&self.edge_modules) {
            if m.spec().input_dim != 2 * d || m.spec().output_dim != d {
                return Err(Error::ShapeMismatch(format!(
                    "module is {} -> {}, library hidden dim is {d}",
                    m.spec().input_dim,
                    m.spec().output_dim
                )));
            }
        }
        if self.pusher_edge.spec().input_dim != 2 * d || self.pusher_edge.spec().output_dim != d + 1 {
            return Err(Error::ShapeMismatch("pusher edge must map 2d -> d+1".into()));
        }
        if self.gen_readout.spec().input_dim != d || self.gen_readout.spec().output_dim != 3 {
            return Err(Error::ShapeMismatch("readout must map d -> 3".into()));
        }
        Ok(())
    }
}

/// Per-node hidden vectors plus the number of leading read-only code slots.
/// Code slots are re-imposed after every message-passing step, so identity
/// information survives arbitrarily many updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenStates {
    pub states: Vec<Vec<f64>>,
    pub code_len: usize,
}

impl HiddenStates {
    pub fn zeros(nodes: usize, dim: usize, code_len: usize) -> Self {
        HiddenStates {
            states: vec![vec![0.0; dim]; nodes],
            code_len,
        }
    }

    pub fn node_count(&self) -> usize {
        self.states.len()
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn material_char_roundtrip() {
        for m in [
            MaterialLabel::Empty,
            MaterialLabel::SmallMass,
            MaterialLabel::BigMass,
            MaterialLabel::NoMass,
        ] {
            assert_eq!(MaterialLabel::from_char(m.to_char()), Some(m));
        }
        assert_eq!(MaterialLabel::from_char('x'), None);
    }

    #[test]
    fn structure_validation_catches_out_of_range() {
        let topo = wheel_topology(3).unwrap();
        let mut s = Structure {
            node_assign: vec![0; topo.node_count()],
            edge_assign: vec![0; topo.edge_count()],
        };
        assert!(s.validate(&topo, 2, 2).is_ok());
        s.node_assign[0] = 5;
        assert!(s.validate(&topo, 2, 2).is_err());
    }

    #[test]
    fn hamming_counts_changed_slots() {
        let a = Structure {
            node_assign: vec![0, 1, 2],
            edge_assign: vec![0, 0],
        };
        let mut b = a.clone();
        assert_eq!(a.hamming(&b), 0);
        b.edge_assign[1] = 3;
        assert_eq!(a.hamming(&b), 1);
    }

    #[test]
    fn library_validation() {
        let cfg = LibraryConfig {
            hidden_dim: 13,
            node_modules: 2,
            edge_modules: 2,
            module_hidden: vec![8],
            activation: Activation::Tanh,
        };
        let lib = ModuleLibrary::init(&cfg, 0).unwrap();
        lib.validate().unwrap();
        let mut broken = lib;
        broken.hidden_dim = 14;
        assert!(broken.validate().is_err());
    }
}
