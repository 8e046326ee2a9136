//! Meta-dataset plumbing: task datasets with train/test splits, RMS
//! normalization (calibrated so the predict-no-motion baseline scores exactly
//! 1), metrics and their millimeter conversion, synthetic task generation
//! with known ground truth, the pooled no-adaptation baseline, and file I/O.

mod baseline;
mod io;
mod synthetic;

pub use baseline::{pooled_predict, train_pooled_baseline, PooledBaselineConfig};
pub use io::{load_metaset, load_task_csv, save_metaset, CSV_HEADER, MANIFEST_FILE, METASET_FORMAT};
pub use synthetic::{
    generate_synthetic_metaset, structure_separation, GroundTruth, SyntheticSpec,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::MaterialMap;
use crate::search::TaskSamples;

/// Millimeters of RMS displacement corresponding to a normalized MSE of 1 on
/// the calibration surface (the no-motion baseline's displacement scale).
/// Surface-specific: runs on other surfaces should supply their own constant.
pub const NO_MOTION_RMS_MM: f64 = 21.6;

/// One task: input/output pairs with a train/test split. Samples are stored
/// train-first, so the split is the pair of contiguous ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub id: String,
    pub xs: Vec<[f64; 3]>,
    pub ys: Vec<[f64; 3]>,
    pub n_train: usize,
    /// Material field for grid-grounded runs; absent for wheel tasks.
    pub material_map: Option<MaterialMap>,
}

impl TaskDataset {
    pub fn new(
        id: String,
        xs: Vec<[f64; 3]>,
        ys: Vec<[f64; 3]>,
        n_train: usize,
    ) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::InvalidSpec(format!(
                "task {id}: {} inputs vs {} outputs",
                xs.len(),
                ys.len()
            )));
        }
        if n_train > xs.len() {
            return Err(Error::InvalidSpec(format!(
                "task {id}: train split {n_train} exceeds {} samples",
                xs.len()
            )));
        }
        Ok(TaskDataset {
            id,
            xs,
            ys,
            n_train,
            material_map: None,
        })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn n_test(&self) -> usize {
        self.len() - self.n_train
    }

    pub fn train_xs(&self) -> &[[f64; 3]] {
        &self.xs[..self.n_train]
    }

    pub fn train_ys(&self) -> &[[f64; 3]] {
        &self.ys[..self.n_train]
    }

    pub fn test_xs(&self) -> &[[f64; 3]] {
        &self.xs[self.n_train..]
    }

    pub fn test_ys(&self) -> &[[f64; 3]] {
        &self.ys[self.n_train..]
    }

    /// Training split as a sampling pool for the optimization loops.
    pub fn train_samples(&self) -> Result<TaskSamples> {
        TaskSamples::new(self.train_xs().to_vec(), self.train_ys().to_vec())
    }
}

/// A collection of tasks, meta-train first.
#[derive(Debug, Clone, PartialEq)]
pub struct Metaset {
    pub tasks: Vec<TaskDataset>,
    pub meta_train_count: usize,
    pub normalization: Option<NormalizationStats>,
    pub ground_truth: Option<GroundTruth>,
}

impl Metaset {
    pub fn meta_train(&self) -> &[TaskDataset] {
        &self.tasks[..self.meta_train_count]
    }

    pub fn meta_test(&self) -> &[TaskDataset] {
        &self.tasks[self.meta_train_count..]
    }
}

/// Per-coordinate multiplicative scales for inputs and outputs. Fitting on a
/// meta-train pool makes the root-mean-square of every scaled coordinate 1,
/// so the zero predictor's per-coordinate MSE is exactly 1 there. No
/// centering: that would break the no-motion identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub in_scale: [f64; 3],
    pub out_scale: [f64; 3],
}

impl NormalizationStats {
    pub fn identity() -> Self {
        NormalizationStats {
            in_scale: [1.0; 3],
            out_scale: [1.0; 3],
        }
    }

    pub fn normalize_input(&self, x: [f64; 3]) -> [f64; 3] {
        [
            x[0] * self.in_scale[0],
            x[1] * self.in_scale[1],
            x[2] * self.in_scale[2],
        ]
    }

    pub fn normalize_output(&self, y: [f64; 3]) -> [f64; 3] {
        [
            y[0] * self.out_scale[0],
            y[1] * self.out_scale[1],
            y[2] * self.out_scale[2],
        ]
    }

    /// Inverse of [`normalize_output`](Self::normalize_output).
    pub fn denormalize_output(&self, y: [f64; 3]) -> [f64; 3] {
        [
            y[0] / self.out_scale[0],
            y[1] / self.out_scale[1],
            y[2] / self.out_scale[2],
        ]
    }

    /// Scale a whole task in place.
    pub fn apply_task(&self, task: &mut TaskDataset) {
        for x in task.xs.iter_mut() {
            *x = self.normalize_input(*x);
        }
        for y in task.ys.iter_mut() {
            *y = self.normalize_output(*y);
        }
    }

    pub fn apply_metaset(&self, metaset: &mut Metaset) {
        for task in metaset.tasks.iter_mut() {
            self.apply_task(task);
        }
    }
}

/// Fit RMS scales over every sample of the given tasks (all splits pooled).
/// Errors if a coordinate is identically zero, since its scale is undefined.
pub fn fit_normalization(tasks: &[TaskDataset]) -> Result<NormalizationStats> {
    let total: usize = tasks.iter().map(TaskDataset::len).sum();
    if total == 0 {
        return Err(Error::EmptyTaskSet);
    }
    let mut in_sq = [0.0f64; 3];
    let mut out_sq = [0.0f64; 3];
    for task in tasks {
        for x in &task.xs {
            for c in 0..3 {
                in_sq[c] += x[c] * x[c];
            }
        }
        for y in &task.ys {
            for c in 0..3 {
                out_sq[c] += y[c] * y[c];
            }
        }
    }
    let mut in_scale = [0.0; 3];
    let mut out_scale = [0.0; 3];
    for c in 0..3 {
        let in_ms = in_sq[c] / total as f64;
        let out_ms = out_sq[c] / total as f64;
        if out_ms == 0.0 {
            return Err(Error::InvalidSpec(format!(
                "output coordinate {c} is identically zero; scale undefined"
            )));
        }
        if in_ms == 0.0 {
            return Err(Error::InvalidSpec(format!(
                "input coordinate {c} is identically zero; scale undefined"
            )));
        }
        in_scale[c] = 1.0 / in_ms.sqrt();
        out_scale[c] = 1.0 / out_ms.sqrt();
    }
    Ok(NormalizationStats {
        in_scale,
        out_scale,
    })
}

/// Mean over samples and coordinates of the squared error. In normalized
/// space the no-motion (all-zero) predictor scores exactly 1 on the fit pool.
pub fn normalized_mse(preds: &[[f64; 3]], targets: &[[f64; 3]]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            context: "normalized_mse",
            expected: targets.len(),
            got: preds.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for (p, y) in preds.iter().zip(targets) {
        for c in 0..3 {
            let e = p[c] - y[c];
            total += e * e;
        }
    }
    Ok(total / (3 * preds.len()) as f64)
}

/// Convert a normalized MSE to its millimeter displacement equivalent using
/// the default surface calibration.
pub fn mse_to_distance(mse: f64) -> Result<f64> {
    mse_to_distance_with(mse, NO_MOTION_RMS_MM)
}

/// `mm_per_unit_rmse * sqrt(mse)`, for surfaces with their own calibration.
pub fn mse_to_distance_with(mse: f64, mm_per_unit_rmse: f64) -> Result<f64> {
    if mse.is_nan() || mse < 0.0 {
        return Err(Error::InvalidSpec(format!("mse must be >= 0, got {mse}")));
    }
    Ok(mm_per_unit_rmse * mse.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task_from(ys: Vec<[f64; 3]>) -> TaskDataset {
        let xs = ys.iter().map(|y| [y[0] + 1.0, y[1] - 1.0, 1.0]).collect();
        let n = ys.len();
        TaskDataset::new("t".into(), xs, ys, n).unwrap()
    }

    #[test]
    fn fit_is_identity_when_already_unit_rms() {
        let t = task_from(vec![[1.0, -1.0, 1.0], [-1.0, 1.0, -1.0]]);
        let stats = fit_normalization(&[t]).unwrap();
        for c in 0..3 {
            assert!((stats.out_scale[c] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fit_scales_by_inverse_rms() {
        // Values {2, -2}: mean square 4, scale 1/2.
        let t = task_from(vec![[2.0, 2.0, 2.0], [-2.0, -2.0, -2.0]]);
        let stats = fit_normalization(&[t]).unwrap();
        for c in 0..3 {
            assert!((stats.out_scale[c] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn fit_rejects_identically_zero_coordinate() {
        let t = task_from(vec![[1.0, 0.0, 1.0], [2.0, 0.0, -1.0]]);
        assert!(fit_normalization(&[t]).is_err());
    }

    #[test]
    fn zero_predictor_scores_exactly_one_after_fit() {
        let ys: Vec<[f64; 3]> = (1..=40)
            .map(|i| {
                let v = i as f64;
                [0.02 * v, -0.4 * (v * 0.7).sin(), 3.0 * (v * 0.3).cos()]
            })
            .collect();
        let mut t = task_from(ys);
        let stats = fit_normalization(std::slice::from_ref(&t)).unwrap();
        stats.apply_task(&mut t);
        let zeros = vec![[0.0; 3]; t.len()];
        let mse = normalized_mse(&zeros, &t.ys).unwrap();
        assert!((mse - 1.0).abs() < 1e-9, "no-motion mse {mse}");
    }

    #[test]
    fn normalization_roundtrip_and_hand_example() {
        let stats = NormalizationStats {
            in_scale: [1.0; 3],
            out_scale: [0.5, 0.5, 1.0],
        };
        assert_eq!(stats.normalize_output([2.0, -2.0, 0.0]), [1.0, -1.0, 0.0]);
        let y = [0.123, -4.56, 7.0];
        let round = stats.denormalize_output(stats.normalize_output(y));
        for c in 0..3 {
            assert!((round[c] - y[c]).abs() < 1e-12);
        }
        let id = NormalizationStats::identity();
        assert_eq!(id.normalize_output(y), y);
    }

    #[test]
    fn normalized_mse_basics() {
        let t = vec![[1.0, 1.0, 1.0]];
        assert!((normalized_mse(&[[0.0; 3]], &t).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(normalized_mse(&t, &t).unwrap(), 0.0);
        assert!(normalized_mse(&[], &[]).is_err());
        assert!(normalized_mse(&[[0.0; 3]], &[]).is_err());
    }

    #[test]
    fn distance_equivalents() {
        assert!((mse_to_distance(1.0).unwrap() - 21.6).abs() < 1e-12);
        let mm = mse_to_distance(0.04).unwrap();
        assert!((mm - 4.3).abs() < 0.05, "0.04 -> {mm}");
        assert_eq!(mse_to_distance(0.0).unwrap(), 0.0);
        assert!(mse_to_distance(-0.1).is_err());
        // Degree-1/2 homogeneity: f(4m) = 2 f(m).
        for m in [0.01, 0.25, 0.8] {
            let a = mse_to_distance(4.0 * m).unwrap();
            let b = 2.0 * mse_to_distance(m).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn task_split_accessors() {
        let t = TaskDataset::new(
            "s".into(),
            vec![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]],
            vec![[0.1, 0.0, 0.0], [0.2, 0.0, 0.0], [0.3, 0.0, 0.0]],
            2,
        )
        .unwrap();
        assert_eq!(t.train_xs().len(), 2);
        assert_eq!(t.test_xs().len(), 1);
        assert_eq!(t.test_ys()[0][0], 0.3);
        assert!(TaskDataset::new("bad".into(), vec![[0.0; 3]], vec![], 0).is_err());
        assert!(TaskDataset::new("bad".into(), vec![[0.0; 3]], vec![[0.0; 3]], 2).is_err());
    }
}
