//! Tasks, datasets, seeded splits and the synthetic task generator.
//!
//! Dataset files are UTF-8 JSON:
//!
//! ```text
//! {"meta":{"m":1,"s":1,"seed":1,"generator":"..."},
//!  "tasks":[{"id":"task-000","r":[..],"x":[[..],..],"y":[..]}, ..]}
//! ```
//!
//! `x` is row-major (one row per observation). Numbers are written with the
//! shortest representation that parses back to the same `f64`.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernels::KernelParams;
use crate::linalg::JitteredCholesky;
use crate::nnet::{MlpArch, MlpParams};

/// One optimization task: observations `(x, y)` and a descriptor `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub id: String,
    /// `N × M`, one feature vector per row.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub r: Vec<f64>,
}

impl Task {
    pub fn new(id: impl Into<String>, x: DMatrix<f64>, y: DVector<f64>, r: Vec<f64>) -> Result<Self> {
        let task = Self { id: id.into(), x, y, r };
        task.validate()?;
        Ok(task)
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn descriptor_dim(&self) -> usize {
        self.r.len()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |field: &str, message: String| Error::Parse {
            location: format!("task `{}` field `{field}`", self.id),
            message,
        };
        if self.y.is_empty() {
            return Err(err("y", "a task needs at least one observation".into()));
        }
        if self.x.nrows() != self.y.len() {
            return Err(err(
                "y",
                format!("{} values for {} feature rows", self.y.len(), self.x.nrows()),
            ));
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(err("x", "non-finite entry".into()));
        }
        if self.y.iter().any(|v| !v.is_finite()) {
            return Err(err("y", "non-finite entry".into()));
        }
        if self.r.iter().any(|v| !v.is_finite()) {
            return Err(err("r", "non-finite entry".into()));
        }
        Ok(())
    }

    /// Keeps `n` randomly chosen observations, preserving their original order.
    pub fn subsample(&self, n: usize, rng: &mut impl Rng) -> Result<Task> {
        if n == 0 || n > self.n_obs() {
            return Err(Error::Config(format!(
                "cannot keep {n} of {} observations in task `{}`",
                self.n_obs(),
                self.id
            )));
        }
        let mut idx: Vec<usize> = (0..self.n_obs()).collect();
        idx.shuffle(rng);
        idx.truncate(n);
        idx.sort_unstable();
        Ok(self.select_rows(&idx))
    }

    pub fn select_rows(&self, idx: &[usize]) -> Task {
        Task {
            id: self.id.clone(),
            x: self.x.select_rows(idx),
            y: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.y[i])),
            r: self.r.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub m: usize,
    pub s: usize,
    pub seed: u64,
    pub generator: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub tasks: Vec<Task>,
}

impl Dataset {
    pub fn new(meta: DatasetMeta, tasks: Vec<Task>) -> Result<Self> {
        let ds = Self { meta, tasks };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.tasks {
            t.validate()?;
            if t.feature_dim() != self.meta.m {
                return Err(Error::Parse {
                    location: format!("task `{}` field `x`", t.id),
                    message: format!(
                        "{} feature columns, dataset declares m = {}",
                        t.feature_dim(),
                        self.meta.m
                    ),
                });
            }
            if t.descriptor_dim() != self.meta.s {
                return Err(Error::Parse {
                    location: format!("task `{}` field `r`", t.id),
                    message: format!(
                        "descriptor length {}, dataset declares s = {}",
                        t.descriptor_dim(),
                        self.meta.s
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(&DatasetRepr::from(self))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let repr: DatasetRepr = serde_json::from_str(text).map_err(|e| Error::Parse {
            location: "dataset".into(),
            message: e.to_string(),
        })?;
        repr.try_into()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(self.to_json()?.as_bytes()))
    }

    /// Applies [`Task::subsample`] to every task with `n` or more observations,
    /// drawing from a single stream seeded by `seed`.
    pub fn subsample_tasks(&self, n: usize, seed: u64) -> Result<Dataset> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tasks = self
            .tasks
            .iter()
            .map(|t| t.subsample(n.min(t.n_obs()), &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            meta: self.meta.clone(),
            tasks,
        })
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize, Deserialize)]
struct DatasetRepr {
    meta: DatasetMeta,
    tasks: Vec<TaskRepr>,
}

#[derive(Serialize, Deserialize)]
struct TaskRepr {
    id: String,
    r: Vec<f64>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
}

impl From<&Dataset> for DatasetRepr {
    fn from(d: &Dataset) -> Self {
        Self {
            meta: d.meta.clone(),
            tasks: d
                .tasks
                .iter()
                .map(|t| TaskRepr {
                    id: t.id.clone(),
                    r: t.r.clone(),
                    x: t.x.row_iter().map(|row| row.iter().copied().collect()).collect(),
                    y: t.y.iter().copied().collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<DatasetRepr> for Dataset {
    type Error = Error;

    fn try_from(repr: DatasetRepr) -> Result<Self> {
        let m = repr.meta.m;
        let mut tasks = Vec::with_capacity(repr.tasks.len());
        for t in repr.tasks {
            if let Some(bad) = t.x.iter().position(|row| row.len() != m) {
                return Err(Error::Parse {
                    location: format!("task `{}` field `x`", t.id),
                    message: format!("row {bad} has {} entries, expected m = {m}", t.x[bad].len()),
                });
            }
            let rows = t.x.len();
            let flat: Vec<f64> = t.x.into_iter().flatten().collect();
            tasks.push(Task {
                id: t.id,
                x: DMatrix::from_row_slice(rows, m, &flat),
                y: DVector::from_vec(t.y),
                r: t.r,
            });
        }
        Dataset::new(repr.meta, tasks)
    }
}

/// Sizes of the source / validation / target partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub source: usize,
    pub validation: usize,
    pub target: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Split {
    pub source: Vec<Task>,
    pub validation: Vec<Task>,
    pub target: Vec<Task>,
}

/// Seeded disjoint random partition of the dataset's tasks.
pub fn split_tasks(dataset: &Dataset, spec: &SplitSpec) -> Result<Split> {
    let total = spec.source + spec.validation + spec.target;
    if total > dataset.tasks.len() {
        return Err(Error::Config(format!(
            "split needs {total} tasks, dataset has {}",
            dataset.tasks.len()
        )));
    }
    let mut idx: Vec<usize> = (0..dataset.tasks.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let take =
        |range: std::ops::Range<usize>| -> Vec<Task> { idx[range].iter().map(|&i| dataset.tasks[i].clone()).collect() };
    Ok(Split {
        source: take(0..spec.source),
        validation: take(spec.source..spec.source + spec.validation),
        target: take(spec.source + spec.validation..total),
    })
}

/// Knobs of the synthetic generator. Defaults follow the documented recipe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub grid_size: usize,
    pub grid_low: f64,
    pub grid_high: f64,
    pub hidden: usize,
    pub weight_range: f64,
    pub amplitude: f64,
    pub lengthscale: f64,
    pub noise_variance: f64,
    /// Feed the raw grid value instead of the feature to the mean and
    /// embedding networks.
    pub grid_inputs: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            grid_size: 500,
            grid_low: -5.0,
            grid_high: 5.0,
            hidden: 32,
            weight_range: 1.0,
            amplitude: 1.0,
            lengthscale: 1.0,
            noise_variance: 1e-4,
            grid_inputs: false,
        }
    }
}

/// Evenly spaced points including both endpoints.
pub fn linspace(low: f64, high: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![low],
        _ => {
            let step = (high - low) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { high } else { low + step * i as f64 })
                .collect()
        }
    }
}

/// Synthetic tasks with the default recipe: 500 grid points, M = 1, S = 1.
pub fn generate_synthetic(n_tasks: usize, seed: u64) -> Result<Dataset> {
    generate_synthetic_with(n_tasks, seed, &SyntheticConfig::default())
}

/// Synthetic tasks drawn from a randomly constructed neural-mean,
/// neural-covariance GP.
///
/// A grid of scalars is mapped to one-dimensional features by a random tanh
/// network. Each task draws a scalar descriptor from N(0, 1); the pair
/// (feature, descriptor) feeds a random mean network and a random
/// embedding network, and the task's values are one GP sample with an RBF
/// kernel on the embeddings plus Gaussian observation noise.
pub fn generate_synthetic_with(n_tasks: usize, seed: u64, cfg: &SyntheticConfig) -> Result<Dataset> {
    if n_tasks == 0 {
        return Err(Error::Config("n_tasks must be at least 1".into()));
    }
    if cfg.grid_size == 0 || cfg.noise_variance <= 0.0 {
        return Err(Error::Config("grid_size and noise_variance must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (-cfg.weight_range, cfg.weight_range);
    let h = cfg.hidden;
    let feature_net = MlpParams::init_uniform(&MlpArch::tanh(&[1, h, h, 1])?, lo, hi, &mut rng)?;
    let mean_net = MlpParams::init_uniform(&MlpArch::tanh(&[2, h, h, 1])?, lo, hi, &mut rng)?;
    let embed_net = MlpParams::init_uniform(&MlpArch::tanh(&[2, h, h, 1])?, lo, hi, &mut rng)?;
    let task_seeds: Vec<u64> = (0..n_tasks).map(|_| rng.random()).collect();

    let grid = linspace(cfg.grid_low, cfg.grid_high, cfg.grid_size);
    let features = grid
        .iter()
        .map(|&g| feature_net.predict(&[g]).map(|o| o[0]))
        .collect::<Result<Vec<f64>>>()?;
    let x = DMatrix::from_column_slice(grid.len(), 1, &features);
    let kernel = KernelParams::rbf(cfg.amplitude, cfg.lengthscale);

    let tasks = task_seeds
        .par_iter()
        .enumerate()
        .map(|(d, &ts)| {
            let id = format!("task-{d:03}");
            let mut trng = ChaCha8Rng::seed_from_u64(ts);
            let r: f64 = trng.sample(StandardNormal);
            let mut mean = Vec::with_capacity(grid.len());
            let mut emb = Vec::with_capacity(grid.len());
            let inputs = if cfg.grid_inputs { &grid } else { &features };
            for &v in inputs {
                mean.push(mean_net.predict(&[v, r])?[0]);
                emb.push(embed_net.predict(&[v, r])?[0]);
            }
            let z = DMatrix::from_column_slice(grid.len(), 1, &emb);
            let mut cov = kernel.gram(&z);
            for i in 0..grid.len() {
                cov[(i, i)] += cfg.noise_variance;
            }
            let chol = JitteredCholesky::new(&cov, &id)?;
            let eps = DVector::from_fn(grid.len(), |_, _| trng.sample::<f64, _>(StandardNormal));
            let y = DVector::from_vec(mean) + chol.l() * eps;
            Task::new(id, x.clone(), y, vec![r])
        })
        .collect::<Result<Vec<_>>>()?;

    Dataset::new(
        DatasetMeta {
            m: 1,
            s: 1,
            seed,
            generator: format!(
                "synthetic: grid {} in [{}, {}], tanh nets {h} hidden, weights U(-{w}, {w}), {} inputs, rbf amplitude {} lengthscale {}, noise variance {:e}",
                cfg.grid_size, cfg.grid_low, cfg.grid_high,
                if cfg.grid_inputs { "grid" } else { "feature" },
                cfg.amplitude, cfg.lengthscale, cfg.noise_variance,
                w = cfg.weight_range,
            ),
        },
        tasks,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset() -> Dataset {
        generate_synthetic_with(
            6,
            3,
            &SyntheticConfig {
                grid_size: 40,
                ..SyntheticConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn grid_spacing_and_endpoints() {
        let g = linspace(-5.0, 5.0, 500);
        assert_eq!(g.len(), 500);
        assert_eq!(g[0], -5.0);
        assert_eq!(g[499], 5.0);
        for w in g.windows(2) {
            assert!((w[1] - w[0] - 10.0 / 499.0).abs() < 1e-12);
        }
    }

    #[test]
    fn synthetic_shapes_match_recipe() {
        let ds = generate_synthetic(3, 1).unwrap();
        assert_eq!(ds.tasks.len(), 3);
        assert_eq!((ds.meta.m, ds.meta.s), (1, 1));
        for t in &ds.tasks {
            assert_eq!(t.n_obs(), 500);
            assert_eq!(t.feature_dim(), 1);
            assert_eq!(t.descriptor_dim(), 1);
            assert!(t.y.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        assert_eq!(tiny_dataset(), tiny_dataset());
        assert!(generate_synthetic(0, 1).is_err());
    }

    #[test]
    fn json_round_trip_is_exact() {
        let ds = tiny_dataset();
        let back = Dataset::from_json(&ds.to_json().unwrap()).unwrap();
        assert_eq!(ds, back);
        assert_eq!(ds.digest().unwrap(), back.digest().unwrap());
    }

    #[test]
    fn mismatched_lengths_name_the_task() {
        let text = r#"{"meta":{"m":1,"s":0,"seed":0,"generator":"hand"},
            "tasks":[{"id":"bad-task","r":[],"x":[[1.0],[2.0]],"y":[1.0]}]}"#;
        let err = Dataset::from_json(text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("bad-task") && msg.contains("`y`"), "{msg}");

        let text = r#"{"meta":{"m":2,"s":0,"seed":0,"generator":"hand"},
            "tasks":[{"id":"ragged","r":[],"x":[[1.0,2.0],[2.0]],"y":[1.0,2.0]}]}"#;
        assert!(Dataset::from_json(text).unwrap_err().to_string().contains("ragged"));
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let ds = tiny_dataset();
        let spec = SplitSpec {
            source: 3,
            validation: 1,
            target: 2,
            seed: 9,
        };
        let a = split_tasks(&ds, &spec).unwrap();
        let b = split_tasks(&ds, &spec).unwrap();
        let ids = |v: &[Task]| v.iter().map(|t| t.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&a.source), ids(&b.source));
        let mut all: Vec<_> = [ids(&a.source), ids(&a.validation), ids(&a.target)].concat();
        assert_eq!((a.source.len(), a.validation.len(), a.target.len()), (3, 1, 2));
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 6);
        let too_many = SplitSpec { source: 5, ..spec };
        assert!(matches!(split_tasks(&ds, &too_many), Err(Error::Config(_))));
    }

    #[test]
    fn subsample_keeps_order() {
        let ds = tiny_dataset();
        let t = &ds.tasks[0];
        let s = t.subsample(10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(s.n_obs(), 10);
        let xs: Vec<f64> = s.x.column(0).iter().copied().collect();
        let pos: Vec<usize> = xs
            .iter()
            .zip(s.y.iter())
            .map(|(xv, yv)| (0..t.n_obs()).find(|&i| t.x[(i, 0)] == *xv && t.y[i] == *yv).unwrap())
            .collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert!(t.subsample(41, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
