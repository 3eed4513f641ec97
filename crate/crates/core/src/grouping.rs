//! Budget-constrained task grouping over STL and pairwise-MTL models.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::GainMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCandidate {
    pub training_tasks: Vec<String>,
    pub serving_tasks: Vec<String>,
    /// Multiply-adds.
    pub cost: f64,
}

impl ModelCandidate {
    pub fn stl(task: &str, cost: f64) -> Self {
        Self {
            training_tasks: vec![task.to_string()],
            serving_tasks: vec![task.to_string()],
            cost,
        }
    }

    pub fn mtl(pair: (&str, &str), serving: &[&str], cost: f64) -> Self {
        Self {
            training_tasks: vec![pair.0.to_string(), pair.1.to_string()],
            serving_tasks: serving.iter().map(|s| s.to_string()).collect(),
            cost,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grouping {
    pub models: Vec<ModelCandidate>,
    pub budget: f64,
}

impl Grouping {
    pub fn total_cost(&self) -> f64 {
        self.models.iter().map(|m| m.cost).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Unserved { task: String },
    ServedMultiple { task: String, count: usize },
    UnknownTask { model: usize, task: String },
    ServingNotTrained { model: usize, task: String },
    EmptyServing { model: usize },
    NonPositiveCost { model: usize },
    OverBudget { total: f64, budget: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Unserved { task } => write!(f, "task `{task}` is not served"),
            Violation::ServedMultiple { task, count } => {
                write!(f, "task `{task}` served {count} times")
            }
            Violation::UnknownTask { model, task } => {
                write!(f, "model {model} uses unknown task `{task}`")
            }
            Violation::ServingNotTrained { model, task } => {
                write!(f, "model {model} serves `{task}` without training on it")
            }
            Violation::EmptyServing { model } => write!(f, "model {model} serves no task"),
            Violation::NonPositiveCost { model } => write!(f, "model {model} has cost <= 0"),
            Violation::OverBudget { total, budget } => {
                write!(f, "total cost {total} exceeds budget {budget}")
            }
        }
    }
}

/// Checks that every task is served exactly once, serving tasks are trained
/// on, and the total cost fits the budget.
pub fn is_valid_grouping(tasks: &[String], grouping: &Grouping) -> std::result::Result<(), Vec<Violation>> {
    let mut v = vec![];
    let mut served: HashMap<&str, usize> = HashMap::new();
    for (i, m) in grouping.models.iter().enumerate() {
        if m.serving_tasks.is_empty() {
            v.push(Violation::EmptyServing { model: i });
        }
        if !(m.cost > 0.0) {
            v.push(Violation::NonPositiveCost { model: i });
        }
        for t in m.training_tasks.iter().chain(&m.serving_tasks) {
            if !tasks.contains(t) {
                v.push(Violation::UnknownTask {
                    model: i,
                    task: t.clone(),
                });
            }
        }
        for t in &m.serving_tasks {
            if !m.training_tasks.contains(t) {
                v.push(Violation::ServingNotTrained {
                    model: i,
                    task: t.clone(),
                });
            }
            *served.entry(t).or_default() += 1;
        }
    }
    for t in tasks {
        match served.get(t.as_str()).copied().unwrap_or(0) {
            0 => v.push(Violation::Unserved { task: t.clone() }),
            1 => {}
            count => v.push(Violation::ServedMultiple {
                task: t.clone(),
                count,
            }),
        }
    }
    let total = grouping.total_cost();
    if total > grouping.budget {
        v.push(Violation::OverBudget {
            total,
            budget: grouping.budget,
        });
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

/// Sum over tasks of the gain of the model serving it: 0 for an STL model,
/// `gain(partner → task)` for a pairwise MTL model.
pub fn aggregate_performance(grouping: &Grouping, gain: &GainMatrix) -> Result<f64> {
    if let Err(v) = is_valid_grouping(gain.tasks(), grouping) {
        let msg: Vec<String> = v.iter().map(ToString::to_string).collect();
        return Err(Error::InvalidGrouping(msg.join("; ")));
    }
    let mut total = 0.0;
    for m in &grouping.models {
        match m.training_tasks.as_slice() {
            [_] => {}
            [a, b] if a != b => {
                for t in &m.serving_tasks {
                    let partner = if t == a { b } else { a };
                    total += gain.get(partner, t)?;
                }
            }
            other => {
                return Err(Error::InvalidGrouping(format!(
                    "only single tasks and distinct pairs are supported, got {other:?}"
                )))
            }
        }
    }
    Ok(total)
}

/// Largest task count accepted by the exhaustive search.
pub const MAX_TASKS: usize = 10;
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateFamily {
    /// Cost of an STL model; a pairwise MTL model costs twice this.
    pub stl_cost: f64,
    pub allow_mtl: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupingSolution {
    pub grouping: Grouping,
    pub total: f64,
}

/// A model in index form: training set and serving set, both sorted.
type Choice = (Vec<usize>, Vec<usize>);

#[derive(Clone)]
struct Best {
    value: f64,
    /// Models in the order of the first task each serves.
    models: Vec<Choice>,
}

struct Search<'a> {
    n: usize,
    gain: &'a [Vec<f64>],
    allow_mtl: bool,
    memo: HashMap<(u32, usize), Option<Best>>,
}

impl Search<'_> {
    /// Best grouping of the tasks in `unserved` with `units` budget left,
    /// one unit being one STL model.
    fn best(&mut self, unserved: u32, units: usize) -> Option<Best> {
        if unserved == 0 {
            return Some(Best {
                value: 0.0,
                models: vec![],
            });
        }
        let key = (unserved, units);
        if let Some(hit) = self.memo.get(&key) {
            return hit.clone();
        }
        let t = unserved.trailing_zeros() as usize;
        let rest = unserved & !(1 << t);
        let mut options: Vec<(usize, Choice, f64, u32)> = vec![(1, (vec![t], vec![t]), 0.0, rest)];
        if self.allow_mtl {
            for u in 0..self.n {
                if u == t {
                    continue;
                }
                let train = if t < u { vec![t, u] } else { vec![u, t] };
                options.push((2, (train.clone(), vec![t]), self.gain[u][t], rest));
                if rest & (1 << u) != 0 {
                    options.push((
                        2,
                        (train, vec![t.min(u), t.max(u)]),
                        self.gain[u][t] + self.gain[t][u],
                        rest & !(1 << u),
                    ));
                }
            }
        }
        let mut best: Option<Best> = None;
        for (cost, choice, value, next) in options {
            if cost > units {
                continue;
            }
            let Some(sub) = self.best(next, units - cost) else {
                continue;
            };
            let cand = Best {
                value: value + sub.value,
                models: std::iter::once(choice).chain(sub.models).collect(),
            };
            let better = match &best {
                None => true,
                Some(b) if cand.value > b.value + TIE_TOL => true,
                Some(b) if cand.value >= b.value - TIE_TOL => cand.models < b.models,
                _ => false,
            };
            if better {
                best = Some(cand);
            }
        }
        self.memo.insert(key, best.clone());
        best
    }
}

/// Exhaustive search over groupings built from STL models and pairwise MTL
/// models (each serving one or both of its tasks) within `budget`.
/// Maximizes the aggregate gain; ties within 1e-12 go to the
/// lexicographically smallest model sequence (models ordered by the first
/// task they serve, tasks by their index in the gain matrix).
pub fn optimize_grouping(gain: &GainMatrix, budget: f64, family: CandidateFamily) -> Result<GroupingSolution> {
    let tasks = gain.tasks();
    let n = tasks.len();
    if n == 0 || n > MAX_TASKS {
        return Err(Error::Domain(format!(
            "exhaustive grouping supports 1..={MAX_TASKS} tasks, got {n}"
        )));
    }
    if !(family.stl_cost > 0.0) || !budget.is_finite() {
        return Err(Error::Domain("costs must be positive and the budget finite".into()));
    }
    let g: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { Ok(0.0) } else { gain.get(&tasks[i], &tasks[j]) })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    // whole STL units that fit; never more than 2n are useful
    let units = if budget < 0.0 {
        0
    } else {
        ((budget / family.stl_cost + 1e-9).floor() as usize).min(2 * n)
    };
    let mut search = Search {
        n,
        gain: &g,
        allow_mtl: family.allow_mtl,
        memo: HashMap::new(),
    };
    let best = search
        .best((1u32 << n) - 1, units)
        .ok_or(Error::Infeasible { budget })?;
    let name = |ix: &[usize]| ix.iter().map(|&i| tasks[i].clone()).collect::<Vec<_>>();
    let models = best
        .models
        .iter()
        .map(|(train, serve)| ModelCandidate {
            cost: family.stl_cost * train.len() as f64,
            training_tasks: name(train),
            serving_tasks: name(serve),
        })
        .collect();
    Ok(GroupingSolution {
        grouping: Grouping { models, budget },
        total: best.value,
    })
}
