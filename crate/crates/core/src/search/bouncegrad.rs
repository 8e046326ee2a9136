//! The alternating training loop. Each step samples a task, proposes a
//! single-slot change to that task's structure, scores both on a fresh batch,
//! lets simulated annealing choose, then draws a second batch and applies one
//! optimizer step to every module the chosen structure touches. With
//! proposals disabled (structures pinned externally, e.g. material-determined
//! grids) the loop reduces exactly to plain multitask gradient descent: it
//! consumes the same random draws and performs the same arithmetic.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    agn_backward, agn_forward, GraphTopology, LibraryGrads, ModuleLibrary, Structure,
};
use crate::nn::{ModuleOptState, Optimizer};
use crate::search::{evaluate, initialize_structure, propose_structure, sa_accept, AnnealingSchedule};

/// One task's sampling pool (normally its training split, already normalized).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSamples {
    pub xs: Vec<[f64; 3]>,
    pub ys: Vec<[f64; 3]>,
}

impl TaskSamples {
    pub fn new(xs: Vec<[f64; 3]>, ys: Vec<[f64; 3]>) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(Error::InvalidSpec(format!(
                "task needs matching non-empty xs/ys, got {}/{}",
                xs.len(),
                ys.len()
            )));
        }
        Ok(TaskSamples { xs, ys })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

/// The scaffold tasks run on: one shared graph (wheel training) or one graph
/// per task (grids, whose node materials differ per task).
#[derive(Debug, Clone)]
pub enum TaskGraphs {
    Shared(GraphTopology),
    PerTask(Vec<GraphTopology>),
}

impl TaskGraphs {
    pub fn get(&self, task: usize) -> &GraphTopology {
        match self {
            TaskGraphs::Shared(t) => t,
            TaskGraphs::PerTask(ts) => &ts[task],
        }
    }

    fn validate(&self, tasks: usize) -> Result<()> {
        match self {
            TaskGraphs::Shared(t) => t.validate(),
            TaskGraphs::PerTask(ts) => {
                if ts.len() != tasks {
                    return Err(Error::InvalidSpec(format!(
                        "{} per-task graphs for {} tasks",
                        ts.len(),
                        tasks
                    )));
                }
                let counts: Vec<(usize, usize)> =
                    ts.iter().map(|t| (t.node_count(), t.edge_count())).collect();
                if counts.windows(2).any(|w| w[0] != w[1]) {
                    return Err(Error::InvalidSpec(
                        "per-task graphs must agree on node/edge counts".into(),
                    ));
                }
                for t in ts {
                    t.validate()?;
                }
                Ok(())
            }
        }
    }
}

/// Model-level metadata carried by checkpoints for validation on resume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FamilyMeta {
    Wheel { exterior: usize },
    Gen { nodes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub family: FamilyMeta,
    pub hidden_dim: usize,
    pub mp_steps: usize,
}

/// Per-library-module optimizer state, index-aligned with the library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryOptState {
    pub node: Vec<ModuleOptState>,
    pub edge: Vec<ModuleOptState>,
    pub pusher: ModuleOptState,
    pub readout: ModuleOptState,
}

impl LibraryOptState {
    pub fn new(library: &ModuleLibrary, optimizer: &Optimizer) -> Self {
        LibraryOptState {
            node: library
                .node_modules
                .iter()
                .map(|m| optimizer.init_state(m.spec()))
                .collect(),
            edge: library
                .edge_modules
                .iter()
                .map(|m| optimizer.init_state(m.spec()))
                .collect(),
            pusher: optimizer.init_state(library.pusher_edge.spec()),
            readout: optimizer.init_state(library.gen_readout.spec()),
        }
    }
}

/// Everything needed to resume training bit-exactly: the library, per-task
/// structures, annealing schedule, step counter, optimizer state, and the
/// generator state itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaState {
    pub model: ModelMeta,
    pub library: ModuleLibrary,
    pub structures: Vec<Structure>,
    pub schedule: AnnealingSchedule,
    pub step: u64,
    pub optimizer: Optimizer,
    pub opt_state: LibraryOptState,
    pub rng: ChaCha8Rng,
}

pub const META_CHECKPOINT_FORMAT: &str = "agnet-checkpoint";

/// Loop hyperparameters (the architecture lives in [`ModelMeta`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    /// Batch drawn for scoring the incumbent and the proposal. Zero means
    /// the whole task pool, in order, without consuming randomness.
    pub sa_batch: usize,
    /// Batch drawn for the gradient step; zero as above.
    pub grad_batch: usize,
    pub optimizer: Optimizer,
    pub schedule: AnnealingSchedule,
    /// When false, structures are left exactly as initialized and the loop
    /// performs no annealing draws at all.
    pub proposals: bool,
    pub seed: u64,
}

/// Per-step log record (one row of the training curve).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub task: usize,
    pub train_loss: f64,
    pub accepted: bool,
    pub temperature: f64,
}

/// Mean-squared-error loss (summed over the three coordinates, averaged over
/// the batch) together with its exact gradients, accumulated sample by sample.
pub fn batch_loss_and_grads(
    topology: &GraphTopology,
    structure: &Structure,
    library: &ModuleLibrary,
    xs: &[[f64; 3]],
    ys: &[[f64; 3]],
    mp_steps: usize,
) -> Result<(f64, LibraryGrads)> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::EmptyBatch);
    }
    let b = xs.len() as f64;
    let mut grads = LibraryGrads::empty(library);
    let mut loss = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let (p, tape) = agn_forward(topology, structure, library, x, mp_steps)?;
        let mut dy = [0.0; 3];
        for c in 0..3 {
            let e = p[c] - y[c];
            loss += e * e;
            dy[c] = 2.0 * e / b;
        }
        let g = agn_backward(topology, structure, library, &tape, &dy)?;
        grads.add_assign(&g)?;
    }
    loss /= b;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::NonFinite("training loss/gradients".into()));
    }
    Ok((loss, grads))
}

/// Step every module that received gradient; untouched modules keep both
/// their parameters and their optimizer state.
pub fn apply_library_updates(
    library: &mut ModuleLibrary,
    grads: &LibraryGrads,
    optimizer: &Optimizer,
    state: &mut LibraryOptState,
) -> Result<()> {
    for (i, g) in grads.node.iter().enumerate() {
        if let Some(g) = g {
            optimizer.step(&mut library.node_modules[i], g, &mut state.node[i])?;
        }
    }
    for (i, g) in grads.edge.iter().enumerate() {
        if let Some(g) = g {
            optimizer.step(&mut library.edge_modules[i], g, &mut state.edge[i])?;
        }
    }
    if let Some(g) = &grads.pusher {
        optimizer.step(&mut library.pusher_edge, g, &mut state.pusher)?;
    }
    if let Some(g) = &grads.readout {
        optimizer.step(&mut library.gen_readout, g, &mut state.readout)?;
    }
    Ok(())
}

/// Draw `count` sample indices with replacement and gather the batch; a zero
/// count returns the full pool without touching the generator.
fn sample_batch<R: Rng + ?Sized>(
    task: &TaskSamples,
    count: usize,
    rng: &mut R,
) -> (Vec<[f64; 3]>, Vec<[f64; 3]>) {
    if count == 0 {
        return (task.xs.clone(), task.ys.clone());
    }
    let mut xs = Vec::with_capacity(count);
    let mut ys = Vec::with_capacity(count);
    for _ in 0..count {
        let i = rng.gen_range(0..task.len());
        xs.push(task.xs[i]);
        ys.push(task.ys[i]);
    }
    (xs, ys)
}

/// The alternating optimizer over structures and shared module weights.
pub struct BounceGrad {
    graphs: TaskGraphs,
    tasks: Vec<TaskSamples>,
    config: TrainConfig,
    state: MetaState,
}

impl BounceGrad {
    /// Fresh run. `initial_structures` pins every task's structure (grid
    /// mode); when `None`, structures are drawn uniformly at random from the
    /// run's own seeded generator.
    pub fn new(
        graphs: TaskGraphs,
        tasks: Vec<TaskSamples>,
        library: ModuleLibrary,
        model: ModelMeta,
        config: TrainConfig,
        initial_structures: Option<Vec<Structure>>,
    ) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::EmptyTaskSet);
        }
        graphs.validate(tasks.len())?;
        library.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let structures = match initial_structures {
            Some(structures) => {
                if structures.len() != tasks.len() {
                    return Err(Error::InvalidSpec(format!(
                        "{} structures for {} tasks",
                        structures.len(),
                        tasks.len()
                    )));
                }
                structures
            }
            None => {
                let g = library.node_modules.len();
                let h = library.edge_modules.len();
                (0..tasks.len())
                    .map(|l| initialize_structure(graphs.get(l), g, h, &mut rng))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        for (l, s) in structures.iter().enumerate() {
            s.validate(
                graphs.get(l),
                library.node_modules.len(),
                library.edge_modules.len(),
            )?;
        }
        let opt_state = LibraryOptState::new(&library, &config.optimizer);
        let state = MetaState {
            model,
            library,
            structures,
            schedule: config.schedule,
            step: 0,
            optimizer: config.optimizer,
            opt_state,
            rng,
        };
        Ok(BounceGrad {
            graphs,
            tasks,
            config,
            state,
        })
    }

    /// Continue a checkpointed run. The graphs and task pools must be the
    /// ones the checkpoint was produced with; everything stochastic resumes
    /// from the serialized generator state.
    pub fn resume(
        graphs: TaskGraphs,
        tasks: Vec<TaskSamples>,
        config: TrainConfig,
        state: MetaState,
    ) -> Result<Self> {
        if tasks.is_empty() {
            return Err(Error::EmptyTaskSet);
        }
        graphs.validate(tasks.len())?;
        state.library.validate()?;
        if state.structures.len() != tasks.len() {
            return Err(Error::InvalidSpec(format!(
                "checkpoint has {} structures, {} tasks provided",
                state.structures.len(),
                tasks.len()
            )));
        }
        Ok(BounceGrad {
            graphs,
            tasks,
            config,
            state,
        })
    }

    pub fn state(&self) -> &MetaState {
        &self.state
    }

    pub fn into_state(self) -> MetaState {
        self.state
    }

    pub fn library(&self) -> &ModuleLibrary {
        &self.state.library
    }

    pub fn structures(&self) -> &[Structure] {
        &self.state.structures
    }

    /// One loop iteration; returns the curve record for this step.
    pub fn step(&mut self) -> Result<StepRecord> {
        let step = self.state.step;
        let temperature = self.state.schedule.temperature(step);
        let k = self.tasks.len();
        let task = self.state.rng.gen_range(0..k);
        let topology = self.graphs.get(task);
        let g = self.state.library.node_modules.len();
        let h = self.state.library.edge_modules.len();

        let mut accepted = false;
        if self.config.proposals {
            let proposal = propose_structure(
                &self.state.structures[task],
                topology,
                g,
                h,
                &mut self.state.rng,
            );
            let (bx, by) = sample_batch(&self.tasks[task], self.config.sa_batch, &mut self.state.rng);
            let incumbent_loss = evaluate(
                topology,
                &self.state.structures[task],
                &self.state.library,
                &bx,
                &by,
                self.state.model.mp_steps,
            )?;
            let proposal_loss = evaluate(
                topology,
                &proposal,
                &self.state.library,
                &bx,
                &by,
                self.state.model.mp_steps,
            )?;
            if sa_accept(incumbent_loss, proposal_loss, temperature, &mut self.state.rng) {
                self.state.structures[task] = proposal;
                accepted = true;
            }
        }

        let (gx, gy) = sample_batch(&self.tasks[task], self.config.grad_batch, &mut self.state.rng);
        let (train_loss, grads) = batch_loss_and_grads(
            topology,
            &self.state.structures[task],
            &self.state.library,
            &gx,
            &gy,
            self.state.model.mp_steps,
        )?;
        apply_library_updates(
            &mut self.state.library,
            &grads,
            &self.state.optimizer,
            &mut self.state.opt_state,
        )?;

        self.state.step += 1;
        Ok(StepRecord {
            step,
            task,
            train_loss,
            accepted,
            temperature,
        })
    }

    /// Run `steps` iterations, invoking `on_step` after each.
    pub fn run(&mut self, steps: u64, mut on_step: impl FnMut(&StepRecord)) -> Result<()> {
        for _ in 0..steps {
            let record = self.step()?;
            on_step(&record);
        }
        Ok(())
    }
}
