//! Command implementations. Every run derives all of its randomness from one
//! seed (CLI `--seed` overrides the config), threads it through a master
//! generator, and writes artifacts atomically, so identical invocations
//! produce identical bytes.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use agnet::graph::{
    agn_forward, gen_topology, wheel_topology, GraphTopology, MaterialMap, ModuleLibrary,
    Structure,
};
use agnet::search::{
    adapt, AnnealingSchedule, BounceGrad, FamilyMeta, MetaState, ModelMeta, StepRecord,
    TaskGraphs, TrainConfig,
};
use agnet::taskbench::{
    fit_normalization, load_metaset, load_task_csv, mse_to_distance, normalized_mse,
    pooled_predict, train_pooled_baseline, Metaset, NormalizationStats, TaskDataset,
};

use crate::artifacts::{AdaptReport, Checkpoint, Summary, TaskReport, ADAPT_FORMAT};
use crate::config::{require_path, Family, FileConfig};
use crate::{CliError, CliResult};

/// Per-task scaffold: the graph each task runs on and, for material-grounded
/// graphs, its fixed structure.
enum TaskScaffold {
    Wheel(GraphTopology),
    Gen(Vec<(GraphTopology, Structure)>),
}

impl TaskScaffold {
    fn topology(&self, task: usize) -> &GraphTopology {
        match self {
            TaskScaffold::Wheel(t) => t,
            TaskScaffold::Gen(v) => &v[task].0,
        }
    }

    fn train_graphs(&self, count: usize) -> TaskGraphs {
        match self {
            TaskScaffold::Wheel(t) => TaskGraphs::Shared(t.clone()),
            TaskScaffold::Gen(v) => {
                TaskGraphs::PerTask(v.iter().take(count).map(|(t, _)| t.clone()).collect())
            }
        }
    }

    fn fixed_structures(&self, count: usize) -> Option<Vec<Structure>> {
        match self {
            TaskScaffold::Wheel(_) => None,
            TaskScaffold::Gen(v) => Some(v.iter().take(count).map(|(_, s)| s.clone()).collect()),
        }
    }
}

fn build_scaffold(cfg: &FileConfig, tasks: &[TaskDataset]) -> CliResult<TaskScaffold> {
    match cfg.model.family {
        Family::Wheel => Ok(TaskScaffold::Wheel(wheel_topology(cfg.model.wheel_n)?)),
        Family::Gen => {
            let gen = cfg.gen.as_ref().ok_or_else(|| {
                CliError::Usage("family = \"gen\" requires a [gen] section".into())
            })?;
            let grid = gen.grid_spec()?;
            let shared_map = match &gen.material_map {
                Some(path) => Some(MaterialMap::load(path)?),
                None => None,
            };
            let mut scaffolds = Vec::with_capacity(tasks.len());
            for task in tasks {
                let map = task
                    .material_map
                    .as_ref()
                    .or(shared_map.as_ref())
                    .ok_or_else(|| {
                        CliError::Data(format!(
                            "task {}: no material map in the metaset and no [gen] material_map fallback",
                            task.id
                        ))
                    })?;
                scaffolds.push(gen_topology(&grid, map)?);
            }
            Ok(TaskScaffold::Gen(scaffolds))
        }
    }
}

fn load_and_normalize(metaset_dir: &Path) -> CliResult<(Metaset, NormalizationStats)> {
    let mut metaset = load_metaset(metaset_dir)?;
    if metaset.meta_train().is_empty() {
        return Err(CliError::Data(format!(
            "{}: metaset has no meta-train tasks",
            metaset_dir.display()
        )));
    }
    let stats = match metaset.normalization {
        Some(stats) => stats,
        None => fit_normalization(metaset.meta_train())?,
    };
    stats.apply_metaset(&mut metaset);
    Ok((metaset, stats))
}

/// Adapt (wheel) or look up (grid) a structure for one task, then score its
/// test split. `seed` drives the structure search only.
#[allow(clippy::too_many_arguments)]
fn evaluate_one_task(
    task: &TaskDataset,
    topology: &GraphTopology,
    fixed_structure: Option<&Structure>,
    library: &ModuleLibrary,
    mp_steps: usize,
    budget: u64,
    schedule: &AnnealingSchedule,
    seed: u64,
) -> CliResult<TaskReport> {
    let structure = match fixed_structure {
        Some(s) => s.clone(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            adapt(
                topology,
                library,
                task.train_xs(),
                task.train_ys(),
                budget,
                schedule,
                mp_steps,
                &mut rng,
            )?
            .structure
        }
    };
    let mut preds = Vec::with_capacity(task.n_test());
    for x in task.test_xs() {
        let (p, _) = agn_forward(topology, &structure, library, x, mp_steps)?;
        preds.push(p);
    }
    let mse = normalized_mse(&preds, task.test_ys())?;
    Ok(TaskReport {
        id: task.id.clone(),
        normalized_mse: mse,
        distance_equivalent_mm: mse_to_distance(mse)?,
        structure: Some(structure),
    })
}

/// Score every meta-test task: structure search against the frozen library
/// for wheels, material-determined structures for grids.
#[allow(clippy::too_many_arguments)]
fn evaluate_meta_test(
    metaset: &Metaset,
    scaffold: &TaskScaffold,
    library: &ModuleLibrary,
    mp_steps: usize,
    budget: u64,
    schedule: &AnnealingSchedule,
    adapt_seed_base: u64,
    verbose: bool,
) -> CliResult<Vec<TaskReport>> {
    let mut reports = Vec::new();
    for (i, task) in metaset.meta_test().iter().enumerate() {
        let global = metaset.meta_train_count + i;
        let fixed = match scaffold {
            TaskScaffold::Wheel(_) => None,
            TaskScaffold::Gen(v) => Some(&v[global].1),
        };
        let report = evaluate_one_task(
            task,
            scaffold.topology(global),
            fixed,
            library,
            mp_steps,
            budget,
            schedule,
            adapt_seed_base.wrapping_add(i as u64),
        )?;
        if verbose {
            eprintln!(
                "eval {}: normalized mse {:.4}",
                report.id, report.normalized_mse
            );
        }
        reports.push(report);
    }
    Ok(reports)
}

pub fn run_generate(cfg: &FileConfig, seed_override: Option<u64>, verbose: bool) -> CliResult<()> {
    if cfg.model.family == Family::Gen {
        return Err(CliError::Usage(
            "`generate` builds wheel-family metasets; grid tasks come from external data and material maps".into(),
        ));
    }
    let out = require_path(&cfg.paths.metaset, "metaset", "generate")?;
    let spec = cfg.generate.synthetic_spec(seed_override);
    let mut metaset = agnet::taskbench::generate_synthetic_metaset(&spec)?;
    metaset.normalization = Some(fit_normalization(metaset.meta_train())?);
    agnet::taskbench::save_metaset(&out, &metaset)?;
    if verbose {
        eprintln!(
            "wrote {} tasks ({} meta-train, {} meta-test) to {}",
            metaset.tasks.len(),
            metaset.meta_train().len(),
            metaset.meta_test().len(),
            out.display()
        );
    }
    Ok(())
}

pub fn run_train(cfg: &FileConfig, seed_override: Option<u64>, verbose: bool) -> CliResult<()> {
    let metaset_dir = require_path(&cfg.paths.metaset, "metaset", "train")?;
    let out_dir = require_path(&cfg.paths.out_dir, "out_dir", "train")?;
    let checkpoint_path = cfg
        .paths
        .checkpoint
        .clone()
        .unwrap_or_else(|| out_dir.join("checkpoint.json"));

    if cfg.model.family == Family::Gen && cfg.train.proposals {
        return Err(CliError::Usage(
            "grid structures are material-determined; set [train] proposals = false".into(),
        ));
    }

    let (metaset, stats) = load_and_normalize(&metaset_dir)?;
    let scaffold = build_scaffold(cfg, &metaset.tasks)?;

    let seed = seed_override.unwrap_or(cfg.train.seed);
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let library_seed: u64 = master.gen();
    let loop_seed: u64 = master.gen();
    let adapt_seed_base: u64 = master.gen();
    let pooled_seed: u64 = master.gen();

    let library = ModuleLibrary::init(&cfg.model.library_config(), library_seed)?;
    let schedule =
        AnnealingSchedule::geometric(cfg.train.t0, cfg.train.t_final, cfg.train.steps.max(1))
            .map_err(|e| CliError::Usage(e.to_string()))?;
    let train_config = TrainConfig {
        steps: cfg.train.steps,
        sa_batch: cfg.train.sa_batch,
        grad_batch: cfg.train.grad_batch,
        optimizer: cfg.train.optimizer(),
        schedule,
        proposals: cfg.train.proposals,
        seed: loop_seed,
    };
    let model = ModelMeta {
        family: match cfg.model.family {
            Family::Wheel => FamilyMeta::Wheel {
                exterior: cfg.model.wheel_n,
            },
            Family::Gen => FamilyMeta::Gen {
                nodes: scaffold.topology(0).node_count(),
            },
        },
        hidden_dim: cfg.model.hidden_dim,
        mp_steps: cfg.model.mp_steps,
    };

    let meta_train = metaset.meta_train();
    let task_samples = meta_train
        .iter()
        .map(TaskDataset::train_samples)
        .collect::<Result<Vec<_>, _>>()?;
    let mut runner = BounceGrad::new(
        scaffold.train_graphs(meta_train.len()),
        task_samples,
        library,
        model,
        train_config,
        scaffold.fixed_structures(meta_train.len()),
    )?;

    let mut records: Vec<StepRecord> = Vec::with_capacity(cfg.train.steps as usize);
    runner.run(cfg.train.steps, |r| {
        if verbose && r.step % 1000 == 0 {
            eprintln!(
                "step {} task {} loss {:.4} T {:.4}",
                r.step, r.task, r.train_loss, r.temperature
            );
        }
        records.push(*r);
    })?;

    crate::artifacts::write_curve(&out_dir.join("curve.csv"), &records)?;
    let state = runner.into_state();
    Checkpoint::new(state.clone(), stats).save(&checkpoint_path)?;

    let eval_schedule = AnnealingSchedule::geometric(
        cfg.adapt.t0,
        cfg.adapt.t_final,
        cfg.train.adapt_budget.max(1),
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let reports = evaluate_meta_test(
        &metaset,
        &scaffold,
        &state.library,
        cfg.model.mp_steps,
        cfg.train.adapt_budget,
        &eval_schedule,
        adapt_seed_base,
        verbose,
    )?;
    Summary::new("agn-meta", reports)?.save(&out_dir.join("summary.json"))?;

    if cfg.train.pooled_baseline {
        let pooled = train_pooled_baseline(metaset.meta_train(), &cfg.train.pooled_config(pooled_seed))?;
        let mut reports = Vec::new();
        for task in metaset.meta_test() {
            let preds: Vec<[f64; 3]> = task
                .test_xs()
                .iter()
                .map(|x| pooled_predict(&pooled, x))
                .collect::<Result<_, _>>()?;
            let mse = normalized_mse(&preds, task.test_ys())?;
            reports.push(TaskReport {
                id: task.id.clone(),
                normalized_mse: mse,
                distance_equivalent_mm: mse_to_distance(mse)?,
                structure: None,
            });
        }
        Summary::new("pooled", reports)?.save(&out_dir.join("pooled_summary.json"))?;
    }
    Ok(())
}

pub fn run_eval(cfg: &FileConfig, seed_override: Option<u64>, verbose: bool) -> CliResult<()> {
    let metaset_dir = require_path(&cfg.paths.metaset, "metaset", "eval")?;
    let out_dir = require_path(&cfg.paths.out_dir, "out_dir", "eval")?;
    let checkpoint_path = require_path(&cfg.paths.checkpoint, "checkpoint", "eval")?;
    let checkpoint = Checkpoint::load(&checkpoint_path)?;

    let mut metaset = load_metaset(&metaset_dir)?;
    checkpoint.normalization.apply_metaset(&mut metaset);
    let scaffold = build_scaffold(cfg, &metaset.tasks)?;
    validate_checkpoint_model(&checkpoint.state, &scaffold, cfg)?;

    let seed = seed_override.unwrap_or(cfg.adapt.seed);
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let adapt_seed_base: u64 = master.gen();
    let schedule =
        AnnealingSchedule::geometric(cfg.adapt.t0, cfg.adapt.t_final, cfg.adapt.budget.max(1))
            .map_err(|e| CliError::Usage(e.to_string()))?;
    let reports = evaluate_meta_test(
        &metaset,
        &scaffold,
        &checkpoint.state.library,
        checkpoint.state.model.mp_steps,
        cfg.adapt.budget,
        &schedule,
        adapt_seed_base,
        verbose,
    )?;
    Summary::new("agn-meta", reports)?.save(&out_dir.join("eval_summary.json"))?;
    Ok(())
}

pub fn run_adapt(
    cfg: &FileConfig,
    task_path: &Path,
    seed_override: Option<u64>,
    verbose: bool,
) -> CliResult<()> {
    let out_dir = require_path(&cfg.paths.out_dir, "out_dir", "adapt")?;
    let checkpoint_path = require_path(&cfg.paths.checkpoint, "checkpoint", "adapt")?;
    let checkpoint = Checkpoint::load(&checkpoint_path)?;

    let task_id = task_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "task".into());
    let mut task = load_task_csv(task_path, &task_id, cfg.adapt.train_points)?;
    checkpoint.normalization.apply_task(&mut task);

    let seed = seed_override.unwrap_or(cfg.adapt.seed);
    let library = &checkpoint.state.library;
    let mp_steps = checkpoint.state.model.mp_steps;

    let (topology, structure, train_loss, budget) = match checkpoint.state.model.family {
        FamilyMeta::Wheel { exterior } => {
            let topology = wheel_topology(exterior)?;
            let schedule = AnnealingSchedule::geometric(
                cfg.adapt.t0,
                cfg.adapt.t_final,
                cfg.adapt.budget.max(1),
            )
            .map_err(|e| CliError::Usage(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let result = adapt(
                &topology,
                library,
                task.train_xs(),
                task.train_ys(),
                cfg.adapt.budget,
                &schedule,
                mp_steps,
                &mut rng,
            )?;
            if verbose {
                eprintln!(
                    "adapted {}: train loss {:.4} (started {:.4})",
                    task.id, result.loss, result.initial_loss
                );
            }
            (topology, result.structure, result.loss, cfg.adapt.budget)
        }
        FamilyMeta::Gen { .. } => {
            // Grid structures are material-determined: no search to run.
            let gen = cfg.gen.as_ref().ok_or_else(|| {
                CliError::Usage("grid checkpoints require a [gen] section to adapt".into())
            })?;
            let grid = gen.grid_spec()?;
            let map_path = gen.material_map.as_ref().ok_or_else(|| {
                CliError::Usage("grid adaptation requires [gen] material_map".into())
            })?;
            let map = MaterialMap::load(map_path)?;
            let (topology, structure) = gen_topology(&grid, &map)?;
            let loss = agnet::search::evaluate(
                &topology,
                &structure,
                library,
                task.train_xs(),
                task.train_ys(),
                mp_steps,
            )?;
            (topology, structure, loss, 0)
        }
    };
    let report = finish_adapt_report(
        &topology,
        &structure,
        library,
        &task,
        mp_steps,
        train_loss,
        budget,
    )?;
    write_adapt_report(&out_dir, &report)
}

fn finish_adapt_report(
    topology: &GraphTopology,
    structure: &Structure,
    library: &ModuleLibrary,
    task: &TaskDataset,
    mp_steps: usize,
    train_loss: f64,
    budget: u64,
) -> CliResult<AdaptReport> {
    let (test_mse, test_mm) = if task.n_test() > 0 {
        let mut preds = Vec::with_capacity(task.n_test());
        for x in task.test_xs() {
            let (p, _) = agn_forward(topology, structure, library, x, mp_steps)?;
            preds.push(p);
        }
        let mse = normalized_mse(&preds, task.test_ys())?;
        (Some(mse), Some(mse_to_distance(mse)?))
    } else {
        (None, None)
    };
    Ok(AdaptReport {
        format: ADAPT_FORMAT.into(),
        version: 1,
        task_id: task.id.clone(),
        budget,
        train_loss,
        test_normalized_mse: test_mse,
        test_distance_equivalent_mm: test_mm,
        structure: structure.clone(),
    })
}

fn write_adapt_report(out_dir: &Path, report: &AdaptReport) -> CliResult<()> {
    agnet::checkpoint::write_json_atomic(
        &out_dir.join(format!("adapt_{}.json", report.task_id)),
        report,
    )
    .map_err(CliError::from)
}

fn validate_checkpoint_model(
    state: &MetaState,
    scaffold: &TaskScaffold,
    cfg: &FileConfig,
) -> CliResult<()> {
    let matches = match (state.model.family, &scaffold) {
        (FamilyMeta::Wheel { exterior }, TaskScaffold::Wheel(t)) => {
            t.node_count() == exterior + 2
        }
        (FamilyMeta::Gen { nodes }, TaskScaffold::Gen(v)) => {
            v.first().is_some_and(|(t, _)| t.node_count() == nodes)
        }
        _ => false,
    };
    if !matches {
        return Err(CliError::Usage(format!(
            "checkpoint model {:?} does not match the [model] section (family {:?})",
            state.model.family, cfg.model.family
        )));
    }
    Ok(())
}

pub fn run_report(input_dir: &Path, output_dir: &Path) -> CliResult<()> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(input_dir)
        .map_err(|e| CliError::Data(format!("{}: {e}", input_dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    entries.sort();

    let mut summaries = Vec::new();
    for path in &entries {
        let value: serde_json::Value = agnet::checkpoint::read_json(path)?;
        if value.get("format").and_then(|f| f.as_str()) != Some(crate::artifacts::SUMMARY_FORMAT) {
            continue; // some other artifact (checkpoint, adapt report, ...)
        }
        summaries.push(Summary::load(path)?);
    }
    if summaries.is_empty() {
        return Err(CliError::Usage(format!(
            "{}: no summary files to report on",
            input_dir.display()
        )));
    }

    let mut rows = Vec::new();
    for s in &summaries {
        let mm = mse_to_distance(s.mean_normalized_mse)?;
        rows.push((s.method.clone(), s.mean_normalized_mse, mm));
    }

    let mut csv = String::from("method,normalized_mse,distance_equivalent_mm\n");
    for (method, mse, mm) in &rows {
        csv.push_str(&format!("{method},{mse:.2},{mm:.1}\n"));
    }
    agnet::checkpoint::write_bytes_atomic(&output_dir.join("results.csv"), csv.as_bytes())?;

    let name_width = rows
        .iter()
        .map(|(m, _, _)| m.len())
        .chain(["method".len()])
        .max()
        .unwrap();
    let mut txt = format!(
        "{:<name_width$}  {:>14}  {:>19}\n",
        "method", "normalized MSE", "distance equivalent"
    );
    for (method, mse, mm) in &rows {
        txt.push_str(&format!(
            "{method:<name_width$}  {mse:>14.2}  {:>16.1} mm\n",
            mm
        ));
    }
    agnet::checkpoint::write_bytes_atomic(&output_dir.join("results.txt"), txt.as_bytes())?;
    Ok(())
}
