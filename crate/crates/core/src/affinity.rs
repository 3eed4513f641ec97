//! Pairwise task-affinity scores.
//!
//! Every score is oriented so that a higher value predicts a larger benefit
//! from training the partner task together with the target task.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Reduction, Tape, Tensor};
use crate::error::{Error, Result};
use crate::matrix::TaskMatrix;
use crate::model::{task_loss, Network, StlModel};
use crate::stats::spearman;
use crate::tasks::{Labels, TaxonomyDistances};
use crate::train::{cosine, TrainTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ScoreKind {
    Td,
    Ias,
    Rsa,
    Li,
    Gs,
    Gt,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 6] = [
        ScoreKind::Td,
        ScoreKind::Ias,
        ScoreKind::Rsa,
        ScoreKind::Li,
        ScoreKind::Gs,
        ScoreKind::Gt,
    ];

    pub fn is_symmetric(self) -> bool {
        matches!(self, ScoreKind::Td | ScoreKind::Ias | ScoreKind::Rsa | ScoreKind::Gs)
    }

    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Td => "TD",
            ScoreKind::Ias => "IAS",
            ScoreKind::Rsa => "RSA",
            ScoreKind::Li => "LI",
            ScoreKind::Gs => "GS",
            ScoreKind::Gt => "GT",
        }
    }

    /// Lower-case file stem, e.g. `gs` for `gs.csv`.
    pub fn file_stem(self) -> String {
        self.name().to_lowercase()
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScoreKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Usage(format!("unknown score `{s}` (expected one of TD, IAS, RSA, LI, GS, GT)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityMatrix {
    pub kind: ScoreKind,
    pub symmetric: bool,
    #[serde(flatten)]
    pub matrix: TaskMatrix,
}

impl AffinityMatrix {
    pub fn tasks(&self) -> &[String] {
        &self.matrix.tasks
    }

    pub fn get(&self, partner: &str, target: &str) -> Result<Option<f64>> {
        self.matrix.get(partner, target)
    }

    /// Wraps a complete matrix, checking symmetry for symmetric kinds.
    pub fn from_matrix(kind: ScoreKind, matrix: TaskMatrix) -> Result<Self> {
        matrix.check_complete()?;
        if kind.is_symmetric() && !matrix.is_symmetric() {
            return Err(Error::Validation(format!("{kind} matrix is not symmetric")));
        }
        Ok(Self {
            kind,
            symmetric: kind.is_symmetric(),
            matrix,
        })
    }

    /// CSV in natural units; `pow10` scales the written values (2 gives the
    /// ×100 display used for GS).
    pub fn write_csv(&self, path: impl AsRef<Path>, pow10: i32) -> Result<()> {
        self.matrix.write_csv(path, pow10)
    }

    pub fn load_csv(kind: ScoreKind, path: impl AsRef<Path>, pow10: i32) -> Result<Self> {
        Self::from_matrix(kind, TaskMatrix::load_csv(path, pow10)?)
    }
}

/// Builds a matrix from `(partner, target, value)` triples. Symmetric kinds
/// may give each unordered pair once; it is mirrored.
pub fn assemble_matrix(
    kind: ScoreKind,
    tasks: &[String],
    values: &[(String, String, f64)],
) -> Result<AffinityMatrix> {
    let mut m = TaskMatrix::empty(tasks.to_vec())?;
    for (p, t, v) in values {
        m.set(p, t, *v)?;
    }
    if kind.is_symmetric() {
        for (p, t, v) in values {
            let (i, j) = (m.index(p)?, m.index(t)?);
            match m.values[j][i] {
                Some(w) if w != *v => {
                    return Err(Error::Validation(format!(
                        "{kind} is symmetric but ({p}, {t}) = {v} and ({t}, {p}) = {w}"
                    )))
                }
                _ => m.values[j][i] = Some(*v),
            }
        }
    }
    AffinityMatrix::from_matrix(kind, m)
}

pub fn taxonomical_distance(distances: &TaxonomyDistances, a: &str, b: &str) -> Result<f64> {
    distances.get(a, b)
}

/// Score plus the number of examples or epochs left out of the average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averaged {
    pub score: f64,
    pub skipped: usize,
}

/// Input × gradient attribution of each example's own loss: row `i` is
/// `x_i ⊙ ∂ℓ(x_i)/∂x_i`.
pub fn attributions(model: &StlModel, inputs: &Tensor, targets: &Labels) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, false);
    let x = tape.leaf(inputs.clone().with_requires_grad(true));
    let (_, out) = model.forward(&mut tape, &vars, x)?;
    // summing per-example losses keeps each row's gradient its own
    let loss = task_loss(&mut tape, out, targets, Reduction::Sum)?;
    tape.backward(loss)?;
    let grad = tape
        .grad(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; inputs.len()]);
    let data = inputs.data().iter().zip(&grad).map(|(a, g)| a * g).collect();
    Tensor::new(inputs.shape().to_vec(), data)
}

/// Mean per-row cosine of two attribution maps. Rows where either map has
/// zero norm are skipped.
pub fn attribution_similarity(attr_a: &Tensor, attr_b: &Tensor) -> Result<Averaged> {
    if attr_a.shape() != attr_b.shape() {
        return Err(Error::Dimension(format!(
            "attribution shapes differ: {:?} vs {:?}",
            attr_a.shape(),
            attr_b.shape()
        )));
    }
    let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>();
    let (mut sum, mut used, mut skipped) = (0.0, 0usize, 0usize);
    for i in 0..attr_a.rows() {
        let (ra, rb) = (attr_a.row(i), attr_b.row(i));
        if norm(ra) == 0.0 || norm(rb) == 0.0 {
            skipped += 1;
            continue;
        }
        sum += cosine(ra, rb);
        used += 1;
    }
    if used == 0 {
        return Err(Error::Degenerate(
            "every attribution vector has zero norm".into(),
        ));
    }
    Ok(Averaged {
        score: sum / used as f64,
        skipped,
    })
}

/// IAS between the STL models of two tasks on one batch. Each model's
/// attribution uses its own task's labels.
pub fn input_attribution_similarity(
    model_a: &StlModel,
    model_b: &StlModel,
    inputs: &Tensor,
    targets: (&Labels, &Labels),
) -> Result<Averaged> {
    if model_a.backbone.input_dim() != model_b.backbone.input_dim() {
        return Err(Error::Dimension("models take different input widths".into()));
    }
    let aa = attributions(model_a, inputs, targets.0)?;
    let ab = attributions(model_b, inputs, targets.1)?;
    attribution_similarity(&aa, &ab)
}

/// Strict upper triangle (row-major) of the `1 − Pearson` dissimilarity
/// matrix between the rows of `latent`.
pub fn rdm_upper(latent: &Tensor) -> Result<Vec<f64>> {
    let m = latent.rows();
    if m < 3 {
        return Err(Error::Domain(format!("RSA needs at least 3 examples, got {m}")));
    }
    // center and normalise each row once
    let mut rows = Vec::with_capacity(m);
    for i in 0..m {
        let r = latent.row(i);
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let c: Vec<f64> = r.iter().map(|v| v - mean).collect();
        let n = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 || r.len() < 2 {
            return Err(Error::DegenerateRepresentation { example: i });
        }
        rows.push(c.into_iter().map(|v| v / n).collect::<Vec<_>>());
    }
    let mut out = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            let r: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            out.push(1.0 - r.clamp(-1.0, 1.0));
        }
    }
    Ok(out)
}

pub fn rsa_from_latents(latent_a: &Tensor, latent_b: &Tensor) -> Result<f64> {
    if latent_a.rows() != latent_b.rows() {
        return Err(Error::Dimension("latent batches differ in size".into()));
    }
    spearman(&rdm_upper(latent_a)?, &rdm_upper(latent_b)?)
}

pub fn rsa(model_a: &StlModel, model_b: &StlModel, inputs: &Tensor) -> Result<f64> {
    rsa_from_latents(&model_a.latent(inputs)?, &model_b.latent(inputs)?)
}

/// Relative test-loss reduction of `target` when its STL model is given the
/// partner's label as input.
pub fn label_injection(loss_stl: f64, loss_injected: f64) -> Result<f64> {
    if !(loss_stl > 0.0 && loss_injected > 0.0) {
        return Err(Error::Domain(format!(
            "label injection needs positive losses, got {loss_stl} and {loss_injected}"
        )));
    }
    Ok((loss_stl - loss_injected) / loss_injected)
}

/// Mean of the per-epoch backbone-gradient cosines over all epochs.
pub fn gradient_similarity(trace: &TrainTrace) -> Result<f64> {
    let cos: Vec<f64> = trace
        .epochs
        .iter()
        .filter_map(|r| r.probe.map(|p| p.grad_cosine))
        .collect();
    if cos.is_empty() || cos.len() != trace.epochs.len() {
        return Err(Error::Usage(format!(
            "trace `{}` has no per-epoch gradient cosines",
            trace.run
        )));
    }
    Ok(cos.iter().sum::<f64>() / cos.len() as f64)
}

/// Mean look-ahead value for `target` (the other task of the MTL run is the
/// partner whose update is simulated). Epochs with zero pre-update loss are
/// skipped.
pub fn gradient_transference(trace: &TrainTrace, target: &str) -> Result<Averaged> {
    let first = match trace.tasks.iter().position(|t| t == target) {
        Some(0) => true,
        Some(1) => false,
        _ => return Err(Error::UnknownTask(target.to_string())),
    };
    let (mut sum, mut used, mut skipped) = (0.0, 0usize, 0usize);
    for r in &trace.epochs {
        let p = r.probe.ok_or_else(|| {
            Error::Usage(format!("trace `{}` lacks look-ahead records", trace.run))
        })?;
        match if first { p.lookahead_a_from_b } else { p.lookahead_b_from_a } {
            Some(v) => {
                sum += v;
                used += 1;
            }
            None => skipped += 1,
        }
    }
    if used == 0 {
        return Err(Error::Degenerate(format!(
            "every epoch of `{}` had zero pre-update loss for `{target}`",
            trace.run
        )));
    }
    Ok(Averaged {
        score: sum / used as f64,
        skipped,
    })
}

/// Bare loss ratio `after / before` behind a GT score (`1 - score`).
pub fn transference_ratio(gt_score: f64) -> f64 {
    1.0 - gt_score
}
