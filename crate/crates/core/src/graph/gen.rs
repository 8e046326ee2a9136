//! Grid element networks: nodes placed on a planar lattice, each owning the
//! Voronoi region around it. The module in each node slot is entirely
//! determined by the material at that position, so a task's structure is a
//! pure function of its material map and is never searched.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{grid_topology, nearest_node, GridSpec, Point2};
use crate::graph::{
    Edge, EdgeKind, GraphFamily, GraphTopology, HiddenStates, MaterialLabel, ModuleLibrary,
    NodeKind, Structure,
};

/// Read-only one-hot material code occupies the first four slots.
pub const GEN_CODE_LEN: usize = MaterialLabel::COUNT;

/// The 3-component input lands in slots `[4, 7)` of its nearest node.
pub const GEN_INPUT_SLOT: usize = GEN_CODE_LEN;

/// Smallest hidden dimension: material code plus the input triple.
pub const MIN_GEN_DIM: usize = GEN_INPUT_SLOT + 3;

/// A rows x cols field of material labels, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaterialMap {
    pub rows: usize,
    pub cols: usize,
    pub labels: Vec<MaterialLabel>,
}

impl MaterialMap {
    pub fn new(rows: usize, cols: usize, labels: Vec<MaterialLabel>) -> Result<Self> {
        if rows == 0 || cols == 0 || labels.len() != rows * cols {
            return Err(Error::InvalidSpec(format!(
                "material map {rows}x{cols} needs {} labels, got {}",
                rows * cols,
                labels.len()
            )));
        }
        Ok(MaterialMap { rows, cols, labels })
    }

    pub fn uniform(rows: usize, cols: usize, label: MaterialLabel) -> Result<Self> {
        Self::new(rows, cols, vec![label; rows * cols])
    }

    /// Parse the plain-text format: one row per line, characters from
    /// `{e, s, b, n}`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut labels = Vec::new();
        let mut cols = None;
        let mut rows = 0;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let row: Vec<MaterialLabel> = line
                .chars()
                .map(|c| {
                    MaterialLabel::from_char(c).ok_or_else(|| {
                        Error::InvalidSpec(format!(
                            "material map line {}: invalid character {c:?} (expected e/s/b/n)",
                            lineno + 1
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            match cols {
                None => cols = Some(row.len()),
                Some(c) if c != row.len() => {
                    return Err(Error::InvalidSpec(format!(
                        "material map line {}: {} columns, expected {c}",
                        lineno + 1,
                        row.len()
                    )))
                }
                _ => {}
            }
            labels.extend(row);
            rows += 1;
        }
        let cols = cols.ok_or_else(|| Error::InvalidSpec("material map is empty".into()))?;
        Self::new(rows, cols, labels)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Data {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        Self::parse(&text).map_err(|e| Error::Data {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::checkpoint::write_bytes_atomic(path, self.to_string().as_bytes())
    }
}

impl fmt::Display for MaterialMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in 0..self.rows {
            for c in 0..self.cols {
                write!(f, "{}", self.labels[r * self.cols + c].to_char())?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Build the grid topology and its material-determined structure. Nodes sit
/// at the lattice points; every undirected lattice edge becomes two directed
/// edges; node slot v carries the module indexed by its material, and all
/// grid edges share edge module 0.
pub fn gen_topology(grid: &GridSpec, materials: &MaterialMap) -> Result<(GraphTopology, Structure)> {
    grid.validate()?;
    if materials.rows != grid.rows || materials.cols != grid.cols {
        return Err(Error::InvalidSpec(format!(
            "material map is {}x{}, grid is {}x{}",
            materials.rows, materials.cols, grid.rows, grid.cols
        )));
    }
    let (points, undirected) = grid_topology(grid)?;
    let nodes: Vec<NodeKind> = points
        .iter()
        .zip(&materials.labels)
        .map(|(&position, &material)| NodeKind::GenCell { position, material })
        .collect();
    let mut edges = Vec::with_capacity(undirected.len() * 2);
    for &(a, b) in &undirected {
        edges.push(Edge {
            src: a,
            dst: b,
            kind: EdgeKind::Grid,
        });
        edges.push(Edge {
            src: b,
            dst: a,
            kind: EdgeKind::Grid,
        });
    }
    let topology = GraphTopology { nodes, edges };
    let structure = Structure {
        node_assign: materials.labels.iter().map(|m| m.index()).collect(),
        edge_assign: vec![0; topology.edge_count()],
    };
    Ok((topology, structure))
}

/// Initial states: every node gets its one-hot material code (read-only);
/// the node whose Voronoi region contains `(x, y)` of the input receives the
/// full input triple in slots `[4, 7)`. Everything else is zero.
pub fn gen_encode(x: &[f64], topology: &GraphTopology, d: usize) -> Result<HiddenStates> {
    if x.len() != 3 {
        return Err(Error::DimensionMismatch {
            context: "grid encode input",
            expected: 3,
            got: x.len(),
        });
    }
    if d < MIN_GEN_DIM {
        return Err(Error::InvalidSpec(format!(
            "grid hidden dim must be >= {MIN_GEN_DIM}, got {d}"
        )));
    }
    if topology.family()? != GraphFamily::Gen {
        return Err(Error::InvalidStructure("grid encode needs a grid topology".into()));
    }
    let mut positions = Vec::with_capacity(topology.node_count());
    let mut materials = Vec::with_capacity(topology.node_count());
    for node in &topology.nodes {
        if let NodeKind::GenCell { position, material } = node {
            positions.push(*position);
            materials.push(*material);
        }
    }
    let owner = nearest_node(&positions, Point2::new(x[0], x[1]))?;
    let mut states = HiddenStates::zeros(topology.node_count(), d, GEN_CODE_LEN);
    for (v, material) in materials.iter().enumerate() {
        states.states[v][material.index()] = 1.0;
    }
    states.states[owner][GEN_INPUT_SLOT..GEN_INPUT_SLOT + 3].copy_from_slice(x);
    Ok(states)
}

/// Average of the learned readout over all node states; order- and
/// count-independent by construction.
pub fn gen_decode(states: &HiddenStates, library: &ModuleLibrary) -> Result<[f64; 3]> {
    let n = states.node_count();
    if n == 0 {
        return Err(Error::EmptyPointSet);
    }
    let mut y = [0.0; 3];
    for h in &states.states {
        let (out, _) = library.gen_readout.forward(h)?;
        for c in 0..3 {
            y[c] += out[c];
        }
    }
    for v in &mut y {
        *v /= n as f64;
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::LibraryConfig;

    fn grid5() -> GridSpec {
        GridSpec::square(0.2, 5).unwrap()
    }

    #[test]
    fn material_map_parse_and_display_roundtrip() {
        let text = "esb\nnnn\n";
        let m = MaterialMap::parse(text).unwrap();
        assert_eq!(m.rows, 2);
        assert_eq!(m.cols, 3);
        assert_eq!(m.labels[0], MaterialLabel::Empty);
        assert_eq!(m.labels[2], MaterialLabel::BigMass);
        assert_eq!(m.to_string(), text);
    }

    #[test]
    fn material_map_rejects_bad_input() {
        assert!(MaterialMap::parse("esx\n").is_err());
        assert!(MaterialMap::parse("es\nesb\n").is_err());
        assert!(MaterialMap::parse("").is_err());
    }

    #[test]
    fn gen_topology_5x5_all_empty() {
        let materials = MaterialMap::uniform(5, 5, MaterialLabel::Empty).unwrap();
        let (topo, structure) = gen_topology(&grid5(), &materials).unwrap();
        assert_eq!(topo.node_count(), 25);
        assert_eq!(topo.edge_count(), 80); // 2 x 40 lattice edges
        assert!(structure
            .node_assign
            .iter()
            .all(|&m| m == MaterialLabel::Empty.index()));
        topo.validate().unwrap();
    }

    #[test]
    fn gen_topology_marks_single_big_mass() {
        let mut labels = vec![MaterialLabel::Empty; 25];
        labels[7] = MaterialLabel::BigMass;
        let materials = MaterialMap::new(5, 5, labels).unwrap();
        let (_, structure) = gen_topology(&grid5(), &materials).unwrap();
        let big: Vec<usize> = structure
            .node_assign
            .iter()
            .enumerate()
            .filter(|(_, &m)| m == MaterialLabel::BigMass.index())
            .map(|(v, _)| v)
            .collect();
        assert_eq!(big, vec![7]);
    }

    #[test]
    fn gen_structure_is_a_function_of_materials() {
        let materials = MaterialMap::parse("esbn\nnbse\nesbn\nnbse\nesbn").unwrap();
        let grid = GridSpec::new(-0.1, 0.1, -0.1, 0.1, 5, 4).unwrap();
        let (_, s1) = gen_topology(&grid, &materials).unwrap();
        let (_, s2) = gen_topology(&grid, &materials).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn gen_topology_rejects_size_mismatch() {
        let materials = MaterialMap::uniform(4, 5, MaterialLabel::Empty).unwrap();
        assert!(gen_topology(&grid5(), &materials).is_err());
    }

    #[test]
    fn encode_places_input_at_exact_grid_point() {
        let materials = MaterialMap::uniform(5, 5, MaterialLabel::Empty).unwrap();
        let (topo, _) = gen_topology(&grid5(), &materials).unwrap();
        // Exact lattice point: row 0, col 1 => node 1 at (-0.05, -0.1).
        let x = [-0.05, -0.1, 0.7];
        let s = gen_encode(&x, &topo, 8).unwrap();
        assert_eq!(&s.states[1][4..7], &x);
        // Exactly one node has nonzero non-code slots.
        let hot: Vec<usize> = s
            .states
            .iter()
            .enumerate()
            .filter(|(_, h)| h[GEN_CODE_LEN..].iter().any(|&v| v != 0.0))
            .map(|(v, _)| v)
            .collect();
        assert_eq!(hot, vec![1]);
    }

    #[test]
    fn encode_breaks_ties_to_lowest_index() {
        let materials = MaterialMap::uniform(1, 2, MaterialLabel::Empty).unwrap();
        let grid = GridSpec::new(0.0, 1.0, 0.0, 1.0, 1, 2).unwrap();
        let (topo, _) = gen_topology(&grid, &materials).unwrap();
        // Equidistant between nodes 0 and 1.
        let s = gen_encode(&[0.5, 0.5, 0.0], &topo, 7).unwrap();
        assert!(s.states[0][GEN_INPUT_SLOT..].iter().any(|&v| v != 0.0));
        assert!(s.states[1][GEN_INPUT_SLOT..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_writes_one_hot_materials() {
        let materials = MaterialMap::parse("sb\nne").unwrap();
        let grid = GridSpec::new(0.0, 1.0, 0.0, 1.0, 2, 2).unwrap();
        let (topo, _) = gen_topology(&grid, &materials).unwrap();
        let s = gen_encode(&[10.0, 10.0, 0.0], &topo, 7).unwrap();
        for (v, label) in materials.labels.iter().enumerate() {
            for k in 0..GEN_CODE_LEN {
                let expect = if k == label.index() { 1.0 } else { 0.0 };
                assert_eq!(s.states[v][k], expect, "node {v} slot {k}");
            }
        }
    }

    #[test]
    fn decode_zero_readout_is_zero_and_average_of_equals_is_identity() {
        let cfg = LibraryConfig {
            hidden_dim: 8,
            ..Default::default()
        };
        let zero_lib = ModuleLibrary::zeros(&cfg).unwrap();
        let states = HiddenStates::zeros(9, 8, GEN_CODE_LEN);
        assert_eq!(gen_decode(&states, &zero_lib).unwrap(), [0.0; 3]);

        let lib = ModuleLibrary::init(&cfg, 5).unwrap();
        let h: Vec<f64> = (0..8).map(|k| 0.1 * k as f64 - 0.3).collect();
        let (single, _) = lib.gen_readout.forward(&h).unwrap();
        // Output magnitude is independent of how many nodes share the state.
        for n in [1usize, 6, 50] {
            let mut states = HiddenStates::zeros(n, 8, GEN_CODE_LEN);
            for s in states.states.iter_mut() {
                s.copy_from_slice(&h);
            }
            let y = gen_decode(&states, &lib).unwrap();
            for c in 0..3 {
                assert!((y[c] - single[c]).abs() < 1e-12, "n={n}");
            }
        }
    }

    #[test]
    fn decode_is_permutation_invariant() {
        let cfg = LibraryConfig {
            hidden_dim: 8,
            ..Default::default()
        };
        let lib = ModuleLibrary::init(&cfg, 9).unwrap();
        let mut states = HiddenStates::zeros(5, 8, GEN_CODE_LEN);
        for (i, s) in states.states.iter_mut().enumerate() {
            for (k, v) in s.iter_mut().enumerate() {
                *v = ((i + 1) * (k + 2)) as f64 * 0.01;
            }
        }
        let y1 = gen_decode(&states, &lib).unwrap();
        states.states.reverse();
        let y2 = gen_decode(&states, &lib).unwrap();
        for c in 0..3 {
            assert!((y1[c] - y2[c]).abs() < 1e-12);
        }
    }
}
