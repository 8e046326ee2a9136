//! Finite-difference oracles: every analytic gradient in the crate is checked
//! against central differences computed through the public forward pass only.

use agnet::graph::{
    agn_backward, agn_forward, wheel_topology, LibraryConfig, ModuleLibrary, Structure,
};
use agnet::nn::{Activation, MlpParams, MlpSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

#[test]
fn random_mlp_specs_pass_central_difference_checks() {
    // Random architectures (dims <= 8, depth <= 3), random inputs and
    // cotangents, both activations.
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for trial in 0..25 {
        let depth = rng.gen_range(0..=3);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.gen_range(1..=8)).collect();
        let activation = if trial % 2 == 0 {
            Activation::Tanh
        } else {
            Activation::Relu
        };
        let spec = MlpSpec::new(
            rng.gen_range(1..=8),
            hidden,
            rng.gen_range(1..=8),
            activation,
        )
        .unwrap();
        let mut params = MlpParams::init_with_rng(&spec, &mut rng).unwrap();
        let x: Vec<f64> = (0..spec.input_dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let dy: Vec<f64> = (0..spec.output_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let (_, tape) = params.forward(&x).unwrap();
        let (dx, grads) = params.backward(&tape, &dy).unwrap();

        let mut max_rel = 0.0_f64;
        for idx in 0..params.param_count() {
            let orig = params.get_flat(idx).unwrap();
            params.set_flat(idx, orig + H);
            let (yp, _) = params.forward(&x).unwrap();
            params.set_flat(idx, orig - H);
            let (ym, _) = params.forward(&x).unwrap();
            params.set_flat(idx, orig);
            let fp: f64 = yp.iter().zip(&dy).map(|(a, b)| a * b).sum();
            let fm: f64 = ym.iter().zip(&dy).map(|(a, b)| a * b).sum();
            max_rel = max_rel.max(rel_err(grads.get_flat(idx).unwrap(), (fp - fm) / (2.0 * H)));
        }
        // Input gradient too.
        let mut xp = x.clone();
        for i in 0..x.len() {
            xp[i] = x[i] + H;
            let (yp, _) = params.forward(&xp).unwrap();
            xp[i] = x[i] - H;
            let (ym, _) = params.forward(&xp).unwrap();
            xp[i] = x[i];
            let fp: f64 = yp.iter().zip(&dy).map(|(a, b)| a * b).sum();
            let fm: f64 = ym.iter().zip(&dy).map(|(a, b)| a * b).sum();
            max_rel = max_rel.max(rel_err(dx[i], (fp - fm) / (2.0 * H)));
        }
        assert!(
            max_rel < 1e-4,
            "trial {trial} ({spec:?}): max relative error {max_rel}"
        );
    }
}

#[test]
fn full_wheel_network_gradients_match_finite_differences() {
    // Every parameter of every module through the whole unrolled network:
    // encode, message passing with attention, decode.
    let n = 4;
    let topo = wheel_topology(n).unwrap();
    let cfg = LibraryConfig {
        hidden_dim: 13,
        node_modules: 2,
        edge_modules: 2,
        module_hidden: vec![8],
        activation: Activation::Tanh,
    };
    let mut lib = ModuleLibrary::init(&cfg, 77).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let structure = Structure {
        node_assign: (0..topo.node_count())
            .map(|v| if topo.is_assignable_node(v) { rng.gen_range(0..2) } else { 0 })
            .collect(),
        edge_assign: (0..topo.edge_count())
            .map(|e| if topo.is_assignable_edge(e) { rng.gen_range(0..2) } else { 0 })
            .collect(),
    };
    let x = [0.21, -0.47, 0.62];
    let target = [0.03, -0.01, 0.05];
    let mp_steps = 2;

    let loss = |lib: &ModuleLibrary| {
        let (y, _) = agn_forward(&topo, &structure, lib, &x, mp_steps).unwrap();
        y.iter().zip(&target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>()
    };
    let (y0, tape) = agn_forward(&topo, &structure, &lib, &x, mp_steps).unwrap();
    let dy = [
        2.0 * (y0[0] - target[0]),
        2.0 * (y0[1] - target[1]),
        2.0 * (y0[2] - target[2]),
    ];
    let grads = agn_backward(&topo, &structure, &lib, &tape, &dy).unwrap();

    let mut max_rel = 0.0_f64;
    for m in 0..2 {
        for idx in 0..lib.node_modules[m].param_count() {
            let orig = lib.node_modules[m].get_flat(idx).unwrap();
            lib.node_modules[m].set_flat(idx, orig + H);
            let fp = loss(&lib);
            lib.node_modules[m].set_flat(idx, orig - H);
            let fm = loss(&lib);
            lib.node_modules[m].set_flat(idx, orig);
            let analytic = grads.node[m].as_ref().map_or(0.0, |g| g.get_flat(idx).unwrap());
            max_rel = max_rel.max(rel_err(analytic, (fp - fm) / (2.0 * H)));
        }
        for idx in 0..lib.edge_modules[m].param_count() {
            let orig = lib.edge_modules[m].get_flat(idx).unwrap();
            lib.edge_modules[m].set_flat(idx, orig + H);
            let fp = loss(&lib);
            lib.edge_modules[m].set_flat(idx, orig - H);
            let fm = loss(&lib);
            lib.edge_modules[m].set_flat(idx, orig);
            let analytic = grads.edge[m].as_ref().map_or(0.0, |g| g.get_flat(idx).unwrap());
            max_rel = max_rel.max(rel_err(analytic, (fp - fm) / (2.0 * H)));
        }
    }
    for idx in 0..lib.pusher_edge.param_count() {
        let orig = lib.pusher_edge.get_flat(idx).unwrap();
        lib.pusher_edge.set_flat(idx, orig + H);
        let fp = loss(&lib);
        lib.pusher_edge.set_flat(idx, orig - H);
        let fm = loss(&lib);
        lib.pusher_edge.set_flat(idx, orig);
        let analytic = grads.pusher.as_ref().map_or(0.0, |g| g.get_flat(idx).unwrap());
        max_rel = max_rel.max(rel_err(analytic, (fp - fm) / (2.0 * H)));
    }
    assert!(max_rel < 1e-4, "max relative error {max_rel}");
}
