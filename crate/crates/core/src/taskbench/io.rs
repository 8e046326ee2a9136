//! Metaset files: a JSON manifest listing tasks, split sizes, normalization
//! stats, and an optional ground-truth sidecar; per-task CSV sample files
//! (train rows first); optional per-task material maps. Floats are written in
//! the shortest form that parses back bit-exactly, so save/load round-trips.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::write_bytes_atomic;
use crate::error::{Error, Result};
use crate::graph::MaterialMap;
use crate::taskbench::{GroundTruth, Metaset, NormalizationStats, TaskDataset};

pub const METASET_FORMAT: &str = "agnet-metaset";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CSV_HEADER: &str = "x_px,x_py,x_pth,y_dx,y_dy,y_dth";
const GROUND_TRUTH_FILE: &str = "ground_truth.json";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    tasks: Vec<ManifestTask>,
    normalization: Option<NormalizationStats>,
    ground_truth: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestTask {
    id: String,
    file: String,
    n_train: usize,
    n_test: usize,
    role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    material_map: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GroundTruthFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    ground_truth: GroundTruth,
}

fn fmt_f64(v: f64) -> String {
    // Shortest round-trip representation; `parse::<f64>` recovers the bits.
    format!("{v}")
}

/// Write a metaset directory: manifest, per-task CSVs, optional sidecars.
pub fn save_metaset(dir: &Path, metaset: &Metaset) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut tasks = Vec::with_capacity(metaset.tasks.len());
    for (i, task) in metaset.tasks.iter().enumerate() {
        let file = format!("{}.csv", task.id);
        let mut body = String::new();
        body.push_str(CSV_HEADER);
        body.push('\n');
        for (x, y) in task.xs.iter().zip(&task.ys) {
            let _ = writeln!(
                body,
                "{},{},{},{},{},{}",
                fmt_f64(x[0]),
                fmt_f64(x[1]),
                fmt_f64(x[2]),
                fmt_f64(y[0]),
                fmt_f64(y[1]),
                fmt_f64(y[2]),
            );
        }
        write_bytes_atomic(&dir.join(&file), body.as_bytes())?;
        let material_map = match &task.material_map {
            Some(map) => {
                let map_file = format!("{}.materials", task.id);
                map.save(&dir.join(&map_file))?;
                Some(map_file)
            }
            None => None,
        };
        tasks.push(ManifestTask {
            id: task.id.clone(),
            file,
            n_train: task.n_train,
            n_test: task.n_test(),
            role: if i < metaset.meta_train_count {
                "meta_train".into()
            } else {
                "meta_test".into()
            },
            material_map,
        });
    }
    let ground_truth = match &metaset.ground_truth {
        Some(gt) => {
            let body = GroundTruthFile {
                format: "agnet-ground-truth".into(),
                version: 1,
                ground_truth: gt.clone(),
            };
            crate::checkpoint::write_json_atomic(&dir.join(GROUND_TRUTH_FILE), &body)?;
            Some(GROUND_TRUTH_FILE.to_string())
        }
        None => None,
    };
    let manifest = Manifest {
        format: METASET_FORMAT.into(),
        version: 1,
        tasks,
        normalization: metaset.normalization,
        ground_truth,
    };
    crate::checkpoint::write_json_atomic(&dir.join(MANIFEST_FILE), &manifest)
}

fn parse_csv(path: &Path, expected: usize) -> Result<(Vec<[f64; 3]>, Vec<[f64; 3]>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::Data {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end() == CSV_HEADER => {}
        Some((_, header)) => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("expected header {CSV_HEADER:?}, found {header:?}"),
            })
        }
        None => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: "file is empty".into(),
            })
        }
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (lineno, line) in lines {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("expected 6 fields, got {}", fields.len()),
            });
        }
        let mut values = [0.0f64; 6];
        for (k, field) in fields.iter().enumerate() {
            values[k] = field.trim().parse().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("field {}: {e}", k + 1),
            })?;
            if !values[k].is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: format!("field {} is not finite", k + 1),
                });
            }
        }
        xs.push([values[0], values[1], values[2]]);
        ys.push([values[3], values[4], values[5]]);
    }
    if xs.len() != expected {
        return Err(Error::Data {
            path: path.to_path_buf(),
            msg: format!("expected {expected} samples, found {}", xs.len()),
        });
    }
    Ok((xs, ys))
}

/// Load a single task CSV outside any metaset. The first `n_train` rows (or
/// all rows, if fewer) become the training split.
pub fn load_task_csv(path: &Path, id: &str, n_train: usize) -> Result<TaskDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::Data {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let rows = text.lines().skip(1).filter(|l| !l.trim().is_empty()).count();
    let (xs, ys) = parse_csv(path, rows)?;
    let n_train = n_train.min(xs.len());
    TaskDataset::new(id.to_string(), xs, ys, n_train)
}

/// Load a metaset directory written by [`save_metaset`].
pub fn load_metaset(dir: &Path) -> Result<Metaset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest: Manifest = crate::checkpoint::read_json(&manifest_path)?;
    if manifest.format != METASET_FORMAT {
        return Err(Error::Data {
            path: manifest_path,
            msg: format!("unexpected manifest format {:?}", manifest.format),
        });
    }
    let mut ids = std::collections::BTreeSet::new();
    let mut tasks = Vec::with_capacity(manifest.tasks.len());
    let mut meta_train_count = 0usize;
    let mut seen_test = false;
    for entry in &manifest.tasks {
        if !ids.insert(entry.id.clone()) {
            return Err(Error::Data {
                path: manifest_path.clone(),
                msg: format!("duplicate task id {:?}", entry.id),
            });
        }
        match entry.role.as_str() {
            "meta_train" => {
                if seen_test {
                    return Err(Error::Data {
                        path: manifest_path.clone(),
                        msg: format!(
                            "task {}: meta_train tasks must precede meta_test tasks",
                            entry.id
                        ),
                    });
                }
                meta_train_count += 1;
            }
            "meta_test" => seen_test = true,
            other => {
                return Err(Error::Data {
                    path: manifest_path.clone(),
                    msg: format!("task {}: unknown role {other:?}", entry.id),
                })
            }
        }
        let csv_path = dir.join(&entry.file);
        let (xs, ys) = parse_csv(&csv_path, entry.n_train + entry.n_test)?;
        let mut task = TaskDataset::new(entry.id.clone(), xs, ys, entry.n_train)?;
        if let Some(map_file) = &entry.material_map {
            task.material_map = Some(MaterialMap::load(&dir.join(map_file))?);
        }
        tasks.push(task);
    }
    let ground_truth = match &manifest.ground_truth {
        Some(file) => {
            let gt: GroundTruthFile = crate::checkpoint::read_json(&dir.join(file))?;
            Some(gt.ground_truth)
        }
        None => None,
    };
    Ok(Metaset {
        tasks,
        meta_train_count,
        normalization: manifest.normalization,
        ground_truth,
    })
}
