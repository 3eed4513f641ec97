//! Task metadata, multi-task datasets and the synthetic latent-factor suite.

mod generate;
mod io;
mod taxonomy;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub use generate::{generate_latent_factor_suite, SplitRatios, SuiteConfig, TaskShape};
pub use io::prepare_empty_dir;
pub use taxonomy::TaxonomyDistances;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    CrossEntropy,
}

/// Function applied to a parent task's class labels to obtain a derived task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMap {
    Identity,
    /// `label mod k`; e.g. digit parity with `k = 2`.
    Modulo(usize),
    Constant(usize),
    /// `table[label]`; undefined for labels beyond the table.
    Lookup(Vec<usize>),
}

impl LabelMap {
    fn apply(&self, label: usize) -> Option<usize> {
        match self {
            LabelMap::Identity => Some(label),
            LabelMap::Modulo(k) => Some(label % k),
            LabelMap::Constant(c) => Some(*c),
            LabelMap::Lookup(table) => table.get(label).copied(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskOrigin {
    LatentFactor {
        latent_indices: Vec<usize>,
        /// `len(latent_indices) × output_dim` readout.
        weights: Tensor,
        nonlinear: bool,
        noise_std: f64,
    },
    Derived {
        parent: String,
        map: LabelMap,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub kind: TaskKind,
    pub output_dim: usize,
    pub loss_kind: LossKind,
    pub origin: TaskOrigin,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let min = match self.kind {
            TaskKind::Regression => 1,
            TaskKind::Classification => 2,
        };
        if self.output_dim < min {
            return Err(Error::Validation(format!(
                "task `{}`: {:?} needs output_dim >= {min}",
                self.name, self.kind
            )));
        }
        let expected_loss = match self.kind {
            TaskKind::Regression => LossKind::Mse,
            TaskKind::Classification => LossKind::CrossEntropy,
        };
        if self.loss_kind != expected_loss {
            return Err(Error::Validation(format!(
                "task `{}`: {:?} paired with {:?}",
                self.name, self.kind, self.loss_kind
            )));
        }
        Ok(())
    }

    /// Width of the label when fed to a model as input: one-hot for classes,
    /// raw values for regression.
    pub fn encoded_width(&self) -> usize {
        self.output_dim
    }
}

/// Per-example labels of one task.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// `n × output_dim` regression targets.
    Values(Tensor),
    Classes(Vec<usize>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Values(t) => t.rows(),
            Labels::Classes(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Result<Labels> {
        Ok(match self {
            Labels::Values(t) => Labels::Values(t.select_rows(rows)?),
            Labels::Classes(c) => Labels::Classes(rows.iter().map(|&i| c[i]).collect()),
        })
    }

    /// Model-input encoding of the selected rows.
    pub fn encode(&self, rows: &[usize], width: usize) -> Result<Tensor> {
        match self {
            Labels::Values(t) => t.select_rows(rows),
            Labels::Classes(c) => {
                let mut data = vec![0.0; rows.len() * width];
                for (r, &i) in rows.iter().enumerate() {
                    let k = c[i];
                    if k >= width {
                        return Err(Error::Data(format!(
                            "class {k} does not fit a one-hot of width {width}"
                        )));
                    }
                    data[r * width + k] = 1.0;
                }
                Tensor::new(vec![rows.len(), width], data)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    /// Pairwise disjoint and jointly covering `0..n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n {
                return Err(Error::Validation(format!("split index {i} >= {n}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Validation(format!("index {i} in two splits")));
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::Validation(format!("index {i} in no split")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiTaskDataset {
    pub inputs: Tensor,
    pub tasks: Vec<TaskSpec>,
    /// Parallel to `tasks`.
    pub labels: Vec<Labels>,
    pub splits: Splits,
    pub seed: u64,
}

impl MultiTaskDataset {
    pub fn n_examples(&self) -> usize {
        self.inputs.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn task_names(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.name.clone()).collect()
    }

    pub fn task_index(&self, name: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::UnknownTask(name.to_string()))
    }

    pub fn task(&self, name: &str) -> Result<&TaskSpec> {
        Ok(&self.tasks[self.task_index(name)?])
    }

    pub fn labels_of(&self, name: &str) -> Result<&Labels> {
        Ok(&self.labels[self.task_index(name)?])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_examples();
        if self.tasks.len() != self.labels.len() {
            return Err(Error::Validation("tasks and labels differ in count".into()));
        }
        for (spec, labels) in self.tasks.iter().zip(&self.labels) {
            spec.validate()?;
            if labels.len() != n {
                return Err(Error::Validation(format!(
                    "task `{}` has {} labels for {n} examples",
                    spec.name,
                    labels.len()
                )));
            }
            match (spec.kind, labels) {
                (TaskKind::Regression, Labels::Values(t)) if t.cols() == spec.output_dim => {}
                (TaskKind::Classification, Labels::Classes(c))
                    if c.iter().all(|&k| k < spec.output_dim) => {}
                _ => {
                    return Err(Error::Validation(format!(
                        "labels of task `{}` do not match its spec",
                        spec.name
                    )))
                }
            }
        }
        let mut names: Vec<_> = self.tasks.iter().map(|t| &t.name).collect();
        names.sort();
        names.dedup();
        if names.len() != self.tasks.len() {
            return Err(Error::Validation("duplicate task names".into()));
        }
        self.splits.validate(n)
    }

    /// Adds a task whose label is `map(parent label)` for every example.
    ///
    /// `Identity` also works on regression parents (a verbatim copy); the
    /// other maps need class labels.
    pub fn derive_task(&mut self, parent: &str, map: LabelMap, name: &str) -> Result<TaskSpec> {
        if self.task_index(name).is_ok() {
            return Err(Error::Validation(format!("task `{name}` already exists")));
        }
        if matches!(map, LabelMap::Modulo(0)) {
            return Err(Error::Data("label map `modulo 0` is undefined".into()));
        }
        let p = self.task_index(parent)?;
        let parent_spec = &self.tasks[p];
        let (labels, kind, output_dim) = match (&self.labels[p], &map) {
            (Labels::Values(t), LabelMap::Identity) => {
                (Labels::Values(t.clone()), TaskKind::Regression, parent_spec.output_dim)
            }
            (Labels::Values(_), _) => {
                return Err(Error::Data(format!(
                    "map {map:?} is undefined on real-valued labels of `{parent}`"
                )))
            }
            (Labels::Classes(classes), _) => {
                let mapped = classes
                    .iter()
                    .map(|&k| {
                        map.apply(k).ok_or_else(|| {
                            Error::Data(format!("map {map:?} undefined for label {k}"))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let width = match &map {
                    LabelMap::Identity => parent_spec.output_dim,
                    LabelMap::Modulo(k) => *k,
                    LabelMap::Constant(c) => c + 1,
                    LabelMap::Lookup(t) => t.iter().max().map_or(0, |m| m + 1),
                }
                .max(2);
                (Labels::Classes(mapped), TaskKind::Classification, width)
            }
        };
        let spec = TaskSpec {
            name: name.to_string(),
            kind,
            output_dim,
            loss_kind: match kind {
                TaskKind::Regression => LossKind::Mse,
                TaskKind::Classification => LossKind::CrossEntropy,
            },
            origin: TaskOrigin::Derived {
                parent: parent.to_string(),
                map,
            },
        };
        self.tasks.push(spec.clone());
        self.labels.push(labels);
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn digits() -> MultiTaskDataset {
        let n = 40;
        let classes: Vec<usize> = (0..n).map(|i| i % 10).collect();
        MultiTaskDataset {
            inputs: Tensor::zeros(vec![n, 2]).unwrap(),
            tasks: vec![TaskSpec {
                name: "digit".into(),
                kind: TaskKind::Classification,
                output_dim: 10,
                loss_kind: LossKind::CrossEntropy,
                origin: TaskOrigin::Derived {
                    parent: "digit".into(),
                    map: LabelMap::Identity,
                },
            }],
            labels: vec![Labels::Classes(classes)],
            splits: Splits {
                train: (0..28).collect(),
                val: (28..34).collect(),
                test: (34..40).collect(),
            },
            seed: 0,
        }
    }

    #[test]
    fn parity_task_from_digits() {
        let mut ds = digits();
        let spec = ds.derive_task("digit", LabelMap::Modulo(2), "parity").unwrap();
        assert_eq!(spec.kind, TaskKind::Classification);
        assert_eq!(spec.output_dim, 2);
        let Labels::Classes(p) = ds.labels_of("parity").unwrap() else {
            panic!()
        };
        assert!(p.iter().enumerate().all(|(i, &k)| k == (i % 10) % 2));
        ds.validate().unwrap();
    }

    #[test]
    fn identity_copies_labels() {
        let mut ds = digits();
        ds.derive_task("digit", LabelMap::Identity, "copy").unwrap();
        assert_eq!(ds.labels_of("copy").unwrap(), ds.labels_of("digit").unwrap());
    }

    #[test]
    fn constant_map_has_single_label() {
        let mut ds = digits();
        let spec = ds.derive_task("digit", LabelMap::Constant(0), "zero").unwrap();
        assert!(spec.output_dim >= 2);
        let Labels::Classes(c) = ds.labels_of("zero").unwrap() else {
            panic!()
        };
        assert!(c.iter().all(|&k| k == 0));
    }

    #[test]
    fn partial_lookup_is_data_error() {
        let mut ds = digits();
        let err = ds.derive_task("digit", LabelMap::Lookup(vec![0, 1, 0]), "bad");
        assert!(matches!(err, Err(Error::Data(_))));
        assert!(matches!(
            ds.derive_task("nope", LabelMap::Identity, "x"),
            Err(Error::UnknownTask(_))
        ));
    }

    #[test]
    fn split_validation() {
        let s = Splits {
            train: vec![0, 1],
            val: vec![2],
            test: vec![2],
        };
        assert!(s.validate(3).is_err());
        let s = Splits {
            train: vec![0],
            val: vec![1],
            test: vec![],
        };
        assert!(s.validate(3).is_err());
    }

    #[test]
    fn one_hot_encoding() {
        let l = Labels::Classes(vec![3, 0]);
        let t = l.encode(&[0, 1], 10).unwrap();
        assert_eq!(t.shape(), &[2, 10]);
        assert_eq!(t.row(0)[3], 1.0);
        assert_eq!(t.row(1)[0], 1.0);
        assert_eq!(t.data().iter().sum::<f64>(), 2.0);
    }
}
