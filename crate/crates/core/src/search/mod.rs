//! Structure search: random initialization, single-slot proposals, the
//! Metropolis acceptance rule, frozen-library adaptation, and the training
//! loop that alternates annealed structure search with gradient updates to
//! the shared modules.

mod bouncegrad;

pub use bouncegrad::{
    apply_library_updates, batch_loss_and_grads, BounceGrad, FamilyMeta, LibraryOptState,
    MetaState, ModelMeta, StepRecord, TaskGraphs, TaskSamples, TrainConfig,
    META_CHECKPOINT_FORMAT,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{agn_forward, GraphTopology, ModuleLibrary, Structure};

/// Geometric cooling: `T(step) = t0 * gamma^step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnealingSchedule {
    pub t0: f64,
    pub gamma: f64,
}

impl AnnealingSchedule {
    pub fn new(t0: f64, gamma: f64) -> Result<Self> {
        if !(t0.is_finite() && t0 > 0.0) {
            return Err(Error::InvalidSpec(format!("t0 must be > 0, got {t0}")));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidSpec(format!("gamma must be in (0, 1), got {gamma}")));
        }
        Ok(AnnealingSchedule { t0, gamma })
    }

    /// Pick `gamma` so the temperature lands on `t_final` after `steps` steps.
    pub fn geometric(t0: f64, t_final: f64, steps: u64) -> Result<Self> {
        if !(t_final > 0.0 && t_final < t0) {
            return Err(Error::InvalidSpec(format!(
                "need 0 < t_final < t0, got t0={t0}, t_final={t_final}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidSpec("schedule needs at least one step".into()));
        }
        let gamma = (t_final / t0).powf(1.0 / steps as f64);
        Self::new(t0, gamma)
    }

    pub fn temperature(&self, step: u64) -> f64 {
        self.t0 * self.gamma.powf(step as f64)
    }
}

/// Uniform random module in every assignable node and edge slot.
pub fn initialize_structure<R: Rng + ?Sized>(
    topology: &GraphTopology,
    node_modules: usize,
    edge_modules: usize,
    rng: &mut R,
) -> Result<Structure> {
    if node_modules == 0 || edge_modules == 0 {
        return Err(Error::EmptyLibrary);
    }
    let mut node_assign = vec![0usize; topology.node_count()];
    for v in 0..topology.node_count() {
        if topology.is_assignable_node(v) {
            node_assign[v] = rng.gen_range(0..node_modules);
        }
    }
    let mut edge_assign = vec![0usize; topology.edge_count()];
    for e in 0..topology.edge_count() {
        if topology.is_assignable_edge(e) {
            edge_assign[e] = rng.gen_range(0..edge_modules);
        }
    }
    Ok(Structure {
        node_assign,
        edge_assign,
    })
}

/// Single-slot proposal: flip a fair coin between node and edge slots, pick
/// one slot uniformly, resample its module uniformly (the incumbent module is
/// a legal draw, so the proposal may equal the current structure).
pub fn propose_structure<R: Rng + ?Sized>(
    current: &Structure,
    topology: &GraphTopology,
    node_modules: usize,
    edge_modules: usize,
    rng: &mut R,
) -> Structure {
    let mut proposal = current.clone();
    let nodes = topology.assignable_nodes();
    let edges = topology.assignable_edges();
    let pick_node = if nodes.is_empty() {
        false
    } else if edges.is_empty() {
        true
    } else {
        rng.gen_bool(0.5)
    };
    if pick_node && !nodes.is_empty() {
        let slot = nodes[rng.gen_range(0..nodes.len())];
        proposal.node_assign[slot] = rng.gen_range(0..node_modules);
    } else if !edges.is_empty() {
        let slot = edges[rng.gen_range(0..edges.len())];
        proposal.edge_assign[slot] = rng.gen_range(0..edge_modules);
    }
    proposal
}

/// Mean over the batch of the squared error summed over the three output
/// coordinates. On normalized data the zero predictor scores about 3.
pub fn evaluate(
    topology: &GraphTopology,
    structure: &Structure,
    library: &ModuleLibrary,
    xs: &[[f64; 3]],
    ys: &[[f64; 3]],
    mp_steps: usize,
) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            context: "evaluate batch",
            expected: xs.len(),
            got: ys.len(),
        });
    }
    let mut loss = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let (p, _) = agn_forward(topology, structure, library, x, mp_steps)?;
        for c in 0..3 {
            let e = p[c] - y[c];
            loss += e * e;
        }
    }
    loss /= xs.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("evaluation loss".into()));
    }
    Ok(loss)
}

/// Metropolis rule: downhill always accepted, uphill with probability
/// `exp(-(l_p - l_s) / temperature)`.
pub fn sa_accept<R: Rng + ?Sized>(l_s: f64, l_p: f64, temperature: f64, rng: &mut R) -> bool {
    if l_p <= l_s {
        return true;
    }
    rng.gen::<f64>() < (-(l_p - l_s) / temperature).exp()
}

/// Result of a frozen-library structure search.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptResult {
    pub structure: Structure,
    pub loss: f64,
    /// Loss of the random structure the search started from.
    pub initial_loss: f64,
    pub proposals_evaluated: u64,
}

/// Test-time adaptation: simulated-annealing search over structures against a
/// frozen library, scoring every candidate on the given training data.
/// Returns the best structure visited, which is never worse than the initial
/// random one. A zero budget returns the initial structure itself.
#[allow(clippy::too_many_arguments)]
pub fn adapt<R: Rng + ?Sized>(
    topology: &GraphTopology,
    library: &ModuleLibrary,
    xs: &[[f64; 3]],
    ys: &[[f64; 3]],
    budget: u64,
    schedule: &AnnealingSchedule,
    mp_steps: usize,
    rng: &mut R,
) -> Result<AdaptResult> {
    let g = library.node_modules.len();
    let h = library.edge_modules.len();
    let mut current = initialize_structure(topology, g, h, rng)?;
    let mut current_loss = evaluate(topology, &current, library, xs, ys, mp_steps)?;
    let initial_loss = current_loss;
    let mut best = current.clone();
    let mut best_loss = current_loss;
    for step in 0..budget {
        let proposal = propose_structure(&current, topology, g, h, rng);
        let proposal_loss = evaluate(topology, &proposal, library, xs, ys, mp_steps)?;
        if proposal_loss < best_loss {
            best = proposal.clone();
            best_loss = proposal_loss;
        }
        let temperature = schedule.temperature(step);
        if sa_accept(current_loss, proposal_loss, temperature, rng) {
            current = proposal;
            current_loss = proposal_loss;
        }
    }
    Ok(AdaptResult {
        structure: best,
        loss: best_loss,
        initial_loss,
        proposals_evaluated: budget,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{wheel_topology, LibraryConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn schedule_is_geometric() {
        let s = AnnealingSchedule::new(1.0, 0.95).unwrap();
        for step in [0u64, 1, 7, 100] {
            let expect = 1.0 * 0.95f64.powf(step as f64);
            assert!((s.temperature(step) - expect).abs() < 1e-15);
        }
        let tuned = AnnealingSchedule::geometric(1.0, 0.01, 500).unwrap();
        assert!((tuned.temperature(500) - 0.01).abs() < 1e-12);
        assert!(AnnealingSchedule::new(0.0, 0.5).is_err());
        assert!(AnnealingSchedule::new(1.0, 1.0).is_err());
    }

    #[test]
    fn initialize_is_reproducible_and_respects_fixed_slots() {
        let topo = wheel_topology(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = initialize_structure(&topo, 3, 2, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = initialize_structure(&topo, 3, 2, &mut rng).unwrap();
        assert_eq!(a, b);
        // Pusher node slot and pusher-out edge slots stay at the canonical 0.
        let pusher = topo.pusher_index().unwrap();
        assert_eq!(a.node_assign[pusher], 0);
        for (e, edge) in topo.edges.iter().enumerate() {
            if !topo.is_assignable_edge(e) {
                assert_eq!(a.edge_assign[e], 0);
                assert_eq!(edge.kind, crate::graph::EdgeKind::PusherOut);
            }
        }
    }

    #[test]
    fn initialize_singleton_library_gives_unique_structure() {
        let topo = wheel_topology(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = initialize_structure(&topo, 1, 1, &mut rng).unwrap();
        assert!(s.node_assign.iter().all(|&m| m == 0));
        assert!(s.edge_assign.iter().all(|&m| m == 0));
        assert!(matches!(
            initialize_structure(&topo, 0, 1, &mut rng),
            Err(Error::EmptyLibrary)
        ));
    }

    #[test]
    fn initialize_draws_uniformly() {
        // 1e4 draws of one fixed slot with 4 modules: each frequency 0.25 +- 0.02.
        let topo = wheel_topology(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            let s = initialize_structure(&topo, 4, 1, &mut rng).unwrap();
            counts[s.node_assign[0]] += 1;
        }
        for c in counts {
            let freq = c as f64 / 10_000.0;
            assert!((freq - 0.25).abs() < 0.02, "frequency {freq}");
        }
    }

    #[test]
    fn proposals_change_at_most_one_slot() {
        let topo = wheel_topology(5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = initialize_structure(&topo, 3, 3, &mut rng).unwrap();
        for _ in 0..500 {
            let p = propose_structure(&s, &topo, 3, 3, &mut rng);
            assert!(s.hamming(&p) <= 1);
        }
    }

    #[test]
    fn proposals_with_singleton_library_are_identity() {
        let topo = wheel_topology(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = initialize_structure(&topo, 1, 1, &mut rng).unwrap();
        for _ in 0..50 {
            assert_eq!(propose_structure(&s, &topo, 1, 1, &mut rng), s);
        }
    }

    #[test]
    fn proposals_split_evenly_between_node_and_edge_slots() {
        let topo = wheel_topology(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let s = initialize_structure(&topo, 9, 9, &mut rng).unwrap();
        let mut node_changes = 0usize;
        let mut trials = 0usize;
        for _ in 0..10_000 {
            let p = propose_structure(&s, &topo, 9, 9, &mut rng);
            if p == s {
                continue; // resampled the incumbent; category unobservable
            }
            trials += 1;
            if p.node_assign != s.node_assign {
                node_changes += 1;
            }
        }
        let frac = node_changes as f64 / trials as f64;
        assert!((frac - 0.5).abs() < 0.02, "node fraction {frac}");
    }

    #[test]
    fn evaluate_matches_hand_arithmetic() {
        let topo = wheel_topology(4).unwrap();
        let cfg = LibraryConfig {
            hidden_dim: 13,
            node_modules: 1,
            edge_modules: 1,
            module_hidden: vec![4],
            ..Default::default()
        };
        let lib = ModuleLibrary::zeros(&cfg).unwrap();
        let s = Structure {
            node_assign: vec![0; topo.node_count()],
            edge_assign: vec![0; topo.edge_count()],
        };
        // Zero library predicts 0; single sample with y = (1, 0, 0) scores 1.
        let loss = evaluate(&topo, &s, &lib, &[[0.5, 0.5, 0.5]], &[[1.0, 0.0, 0.0]], 2).unwrap();
        assert!((loss - 1.0).abs() < 1e-15);
        // Predictions equal to targets score 0.
        let loss = evaluate(&topo, &s, &lib, &[[0.1, 0.2, 0.3]], &[[0.0, 0.0, 0.0]], 2).unwrap();
        assert_eq!(loss, 0.0);
        assert!(matches!(
            evaluate(&topo, &s, &lib, &[], &[], 2),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn evaluate_signals_non_finite_loss() {
        // A readout-free wheel with an exploded linear output layer: the
        // squared error overflows to infinity and must surface as an error,
        // not as a silent NaN/inf score.
        let topo = wheel_topology(2).unwrap();
        let cfg = LibraryConfig {
            hidden_dim: 13,
            node_modules: 1,
            edge_modules: 1,
            module_hidden: vec![4],
            ..Default::default()
        };
        let mut lib = ModuleLibrary::init(&cfg, 0).unwrap();
        for layer in lib.node_modules[0].layers_mut() {
            layer.w.iter_mut().for_each(|w| *w = 1e200);
        }
        let s = Structure {
            node_assign: vec![0; topo.node_count()],
            edge_assign: vec![0; topo.edge_count()],
        };
        let err = evaluate(&topo, &s, &lib, &[[0.5, 0.5, 0.5]], &[[0.0; 3]], 1).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)), "got {err:?}");
    }

    #[test]
    fn metropolis_accepts_downhill_always() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert!(sa_accept(1.0, 0.5, 1e-9, &mut rng));
        }
    }

    #[test]
    fn metropolis_rejects_uphill_at_low_temperature() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let accepted = (0..10_000)
            .filter(|_| sa_accept(1.0, 1.5, 1e-12, &mut rng))
            .count();
        assert_eq!(accepted, 0);
    }

    #[test]
    fn metropolis_uphill_rate_matches_formula() {
        // exp(-(1.5 - 1.0) / 0.5) = e^-1 ~ 0.368.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let accepted = (0..n).filter(|_| sa_accept(1.0, 1.5, 0.5, &mut rng)).count();
        let rate = accepted as f64 / n as f64;
        assert!(
            (rate - (-1.0f64).exp()).abs() < 0.02,
            "acceptance rate {rate}"
        );
    }

    #[test]
    fn adapt_budget_zero_returns_initial_structure() {
        let topo = wheel_topology(3).unwrap();
        let cfg = LibraryConfig {
            hidden_dim: 13,
            node_modules: 2,
            edge_modules: 2,
            module_hidden: vec![4],
            ..Default::default()
        };
        let lib = ModuleLibrary::init(&cfg, 4).unwrap();
        let xs = [[0.1, 0.2, 0.3], [0.0, -0.1, 0.5]];
        let ys = [[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]];
        let schedule = AnnealingSchedule::new(1.0, 0.99).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let res = adapt(&topo, &lib, &xs, &ys, 0, &schedule, 2, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let init = initialize_structure(&topo, 2, 2, &mut rng).unwrap();
        assert_eq!(res.structure, init);
        assert_eq!(res.loss, res.initial_loss);
    }

    #[test]
    fn adapt_never_returns_worse_than_initial_and_keeps_library_frozen() {
        let topo = wheel_topology(4).unwrap();
        let cfg = LibraryConfig {
            hidden_dim: 13,
            node_modules: 3,
            edge_modules: 3,
            module_hidden: vec![6],
            ..Default::default()
        };
        let lib = ModuleLibrary::init(&cfg, 10).unwrap();
        let frozen = lib.clone();
        let xs: Vec<[f64; 3]> = (0..12)
            .map(|i| [0.1 * i as f64 - 0.5, 0.05 * i as f64, -0.2])
            .collect();
        let ys: Vec<[f64; 3]> = xs.iter().map(|x| [x[0] * 0.5, -x[1], 0.1]).collect();
        let schedule = AnnealingSchedule::geometric(1.0, 0.01, 60).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let res = adapt(&topo, &lib, &xs, &ys, 60, &schedule, 2, &mut rng).unwrap();
        assert!(res.loss <= res.initial_loss);
        assert_eq!(lib, frozen, "adapt must not mutate module parameters");
        let check = evaluate(&topo, &res.structure, &lib, &xs, &ys, 2).unwrap();
        assert!((check - res.loss).abs() < 1e-12);
    }
}
