//! Latent-factor task suite.
//!
//! Examples are driven by `d_latent` standard-normal factors. The first
//! `d_latent` input columns are a fixed random orthogonal mixing of those
//! factors; the remaining `d_in - d_latent` columns are pure noise. Each task
//! reads out its own subset of factors. `overlap` sets the fraction of a
//! task's subset drawn from a pool shared by every task, the rest being
//! private to that task.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::substream;

use super::{Labels, LossKind, MultiTaskDataset, Splits, TaskKind, TaskOrigin, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TaskShape {
    Regression { outputs: usize },
    Classification { classes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub seed: u64,
    pub n_tasks: usize,
    pub d_latent: usize,
    pub d_in: usize,
    pub n_examples: usize,
    pub overlap: f64,
    pub noise_std: f64,
    /// Latent factors per task; defaults to `d_latent / n_tasks`.
    pub subset_size: Option<usize>,
    /// Cycled over the tasks.
    pub shapes: Vec<TaskShape>,
    /// `tanh` on regression readouts.
    pub nonlinear: bool,
    /// Every task reuses the first task's readout weights.
    pub shared_readout: bool,
    pub split: SplitRatios,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_tasks: 3,
            d_latent: 12,
            d_in: 16,
            n_examples: 2000,
            overlap: 0.5,
            noise_std: 0.1,
            subset_size: None,
            shapes: vec![TaskShape::Classification { classes: 4 }],
            nonlinear: true,
            shared_readout: false,
            split: SplitRatios::default(),
        }
    }
}

impl SuiteConfig {
    pub fn task_name(t: usize) -> String {
        format!("task{t}")
    }

    fn validate(&self) -> Result<(usize, usize, usize)> {
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::Domain(format!(
                "overlap must lie in [0, 1], got {}",
                self.overlap
            )));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Domain(format!(
                "noise_std must be >= 0, got {}",
                self.noise_std
            )));
        }
        if self.n_tasks == 0 || self.d_latent == 0 {
            return Err(Error::Configuration(
                "n_tasks and d_latent must be positive".into(),
            ));
        }
        if self.d_latent > self.d_in {
            return Err(Error::Configuration(format!(
                "d_latent ({}) exceeds d_in ({})",
                self.d_latent, self.d_in
            )));
        }
        if self.n_examples < 30 {
            return Err(Error::Configuration(format!(
                "n_examples must be >= 30, got {}",
                self.n_examples
            )));
        }
        let SplitRatios { train, val } = self.split;
        if !(train > 0.0 && val > 0.0 && train + val < 1.0) {
            return Err(Error::Configuration(format!(
                "split ratios train={train} val={val} leave no test set"
            )));
        }
        if self.shapes.is_empty() {
            return Err(Error::Configuration("no task shapes given".into()));
        }
        for shape in &self.shapes {
            match *shape {
                TaskShape::Regression { outputs: 0 } => {
                    return Err(Error::Configuration("regression needs >= 1 output".into()))
                }
                TaskShape::Classification { classes } if classes < 2 => {
                    return Err(Error::Configuration(
                        "classification needs >= 2 classes".into(),
                    ))
                }
                _ => {}
            }
        }
        if self.shared_readout && self.shapes.iter().any(|s| *s != self.shapes[0]) {
            return Err(Error::Configuration(
                "shared_readout needs every task to have the same shape".into(),
            ));
        }
        let subset = self
            .subset_size
            .unwrap_or((self.d_latent / self.n_tasks).max(1));
        if subset == 0 || subset > self.d_latent {
            return Err(Error::Configuration(format!(
                "subset_size {subset} outside 1..={}",
                self.d_latent
            )));
        }
        let shared = (self.overlap * subset as f64).round() as usize;
        let private = subset - shared;
        let needed = shared + self.n_tasks * private;
        if needed > self.d_latent {
            return Err(Error::Configuration(format!(
                "{} tasks with {private} private + {shared} shared factors need {needed} \
                 latent factors, only {} available",
                self.n_tasks, self.d_latent
            )));
        }
        Ok((subset, shared, private))
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Row-major `d × d` orthogonal matrix from Gram-Schmidt on Gaussian rows.
fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut v = normal_vec(rng, d);
        for r in &rows {
            let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            rows.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    rows.concat()
}

/// Builds the suite described by `config`. Deterministic in `config.seed`.
pub fn generate_latent_factor_suite(config: &SuiteConfig) -> Result<MultiTaskDataset> {
    let (subset, shared, private) = config.validate()?;
    let seed = config.seed;
    let n = config.n_examples;
    let (d_latent, d_in) = (config.d_latent, config.d_in);

    let mut rng = substream(seed, "dataset/subsets");
    let mut perm: Vec<usize> = (0..d_latent).collect();
    perm.shuffle(&mut rng);
    let pool = &perm[..shared];
    let subsets: Vec<Vec<usize>> = (0..config.n_tasks)
        .map(|t| {
            let start = shared + t * private;
            let mut s: Vec<usize> = pool.iter().chain(&perm[start..start + private]).copied().collect();
            s.sort_unstable();
            s
        })
        .collect();

    let latents = normal_vec(&mut substream(seed, "dataset/latents"), n * d_latent);
    let mixing = random_orthogonal(&mut substream(seed, "dataset/mixing"), d_latent);
    let nuisance = normal_vec(&mut substream(seed, "dataset/nuisance"), n * (d_in - d_latent));

    let mut inputs = Vec::with_capacity(n * d_in);
    for i in 0..n {
        let z = &latents[i * d_latent..(i + 1) * d_latent];
        for j in 0..d_latent {
            inputs.push((0..d_latent).map(|k| z[k] * mixing[k * d_latent + j]).sum());
        }
        let w = d_in - d_latent;
        inputs.extend_from_slice(&nuisance[i * w..(i + 1) * w]);
    }
    let inputs = Tensor::new(vec![n, d_in], inputs)?;

    let mut tasks = Vec::with_capacity(config.n_tasks);
    let mut labels = Vec::with_capacity(config.n_tasks);
    let mut first_weights: Option<Vec<f64>> = None;
    for (t, indices) in subsets.into_iter().enumerate() {
        let shape = config.shapes[t % config.shapes.len()];
        let out = match shape {
            TaskShape::Regression { outputs } => outputs,
            TaskShape::Classification { classes } => classes,
        };
        let scale = 1.0 / (subset as f64).sqrt();
        let weights = match (&first_weights, config.shared_readout) {
            (Some(w), true) => w.clone(),
            _ => {
                let mut wr = substream(seed, &format!("dataset/readout/{t}"));
                let w: Vec<f64> = match shape {
                    // positive readouts: shared factors imply aligned targets
                    TaskShape::Regression { .. } => (0..subset * out)
                        .map(|_| scale * wr.random_range(0.5..1.5))
                        .collect(),
                    TaskShape::Classification { .. } => normal_vec(&mut wr, subset * out)
                        .into_iter()
                        .map(|v| scale * v)
                        .collect(),
                };
                first_weights.get_or_insert_with(|| w.clone());
                w
            }
        };

        let noise = normal_vec(&mut substream(seed, &format!("dataset/noise/{t}")), n * out);
        let mut raw = vec![0.0; n * out];
        for i in 0..n {
            let z = &latents[i * d_latent..(i + 1) * d_latent];
            for o in 0..out {
                let mut v: f64 = indices
                    .iter()
                    .enumerate()
                    .map(|(s, &k)| z[k] * weights[s * out + o])
                    .sum();
                if config.nonlinear && matches!(shape, TaskShape::Regression { .. }) {
                    v = v.tanh();
                }
                raw[i * out + o] = v + config.noise_std * noise[i * out + o];
            }
        }

        let (kind, loss_kind, task_labels) = match shape {
            TaskShape::Regression { .. } => (
                TaskKind::Regression,
                LossKind::Mse,
                Labels::Values(Tensor::new(vec![n, out], raw)?),
            ),
            TaskShape::Classification { .. } => {
                let classes = raw
                    .chunks(out)
                    .map(|row| {
                        row.iter()
                            .enumerate()
                            .fold((0, f64::NEG_INFINITY), |best, (k, &v)| {
                                if v > best.1 {
                                    (k, v)
                                } else {
                                    best
                                }
                            })
                            .0
                    })
                    .collect();
                (TaskKind::Classification, LossKind::CrossEntropy, Labels::Classes(classes))
            }
        };
        tasks.push(TaskSpec {
            name: SuiteConfig::task_name(t),
            kind,
            output_dim: out,
            loss_kind,
            origin: TaskOrigin::LatentFactor {
                latent_indices: indices,
                weights: Tensor::new(vec![subset, out], weights)?,
                nonlinear: config.nonlinear,
                noise_std: config.noise_std,
            },
        });
        labels.push(task_labels);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, "dataset/splits"));
    let n_train = (config.split.train * n as f64).floor() as usize;
    let n_val = (config.split.val * n as f64).floor() as usize;
    let splits = Splits {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    };

    let ds = MultiTaskDataset {
        inputs,
        tasks,
        labels,
        splits,
        seed,
    };
    ds.validate()?;
    Ok(ds)
}
