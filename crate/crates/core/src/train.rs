//! Minibatch SGD with an exponentially decaying learning rate, per-epoch
//! snapshots and best-epoch selection on the validation loss.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sgd_step, Reduction, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{task_loss, BackboneConfig, InjectedStlModel, MtlModel, Network, StlModel};
use crate::rng::substream;
use crate::tasks::MultiTaskDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub initial_lr: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Size of the fixed validation batch used for per-epoch GS/GT records.
    pub eval_batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            initial_lr: 0.01,
            lr_decay: 0.95,
            batch_size: 32,
            seed: 0,
            eval_batch_size: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Configuration("epochs must be >= 1".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Configuration(format!(
                "lr_decay {} must lie in (0, 1]",
                self.lr_decay
            )));
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Configuration(format!(
                "initial_lr {} must be positive",
                self.initial_lr
            )));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Configuration("batch sizes must be >= 1".into()));
        }
        Ok(())
    }

    /// Learning rate used during epoch `t` (0-based).
    pub fn lr_at(&self, t: usize) -> f64 {
        self.initial_lr * self.lr_decay.powi(t as i32)
    }
}

/// Quantities recorded after each MTL epoch on the fixed evaluation batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairProbe {
    /// Cosine between the backbone gradients of `L_a` and `L_b`.
    pub grad_cosine: f64,
    /// `1 − L_a(after a step on L_b) / L_a(before)`; `None` if `L_a` was 0.
    pub lookahead_a_from_b: Option<f64>,
    /// `1 − L_b(after a step on L_a) / L_b(before)`; `None` if `L_b` was 0.
    pub lookahead_b_from_a: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    /// One entry per task of the run.
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<PairProbe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub run: String,
    pub tasks: Vec<String>,
    pub seed: u64,
    /// 1-based epoch whose snapshot was returned.
    pub best_epoch: usize,
    /// Example indices of the fixed evaluation batch (MTL runs only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eval_batch: Vec<usize>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainTrace {
    pub fn best(&self) -> &EpochRecord {
        &self.epochs[self.best_epoch - 1]
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        load_json(path.as_ref())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    /// Snapshot at the best epoch.
    pub model: M,
    pub trace: TrainTrace,
    /// `snapshots[i]` holds the parameters after epoch `i + 1`.
    pub snapshots: Vec<M>,
}

impl<M: Serialize> TrainOutcome<M> {
    /// Writes every epoch snapshot plus the trace into `dir`.
    pub fn save_checkpoints(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, m) in self.snapshots.iter().enumerate() {
            let name = checkpoint_file_name(&self.trace.run, self.trace.seed, i + 1);
            save_json(&dir.join(name), m)?;
        }
        self.trace
            .save(dir.join(format!("{}_seed{}_trace.json", self.trace.run, self.trace.seed)))
    }
}

/// `<run>_seed<seed>_epoch<epoch>.json`, where the run id encodes the kind
/// and task pair, e.g. `mtl_task0__task1`.
pub fn checkpoint_file_name(run: &str, seed: u64, epoch: usize) -> String {
    format!("{run}_seed{seed}_epoch{epoch:03}.json")
}

pub fn save_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn stl_run_id(task: &str) -> String {
    format!("stl_{task}")
}

pub fn mtl_run_id(a: &str, b: &str) -> String {
    format!("mtl_{a}__{b}")
}

pub fn injected_run_id(target: &str, partner: &str) -> String {
    format!("inj_{target}__{partner}")
}

/// Head initialisation uses one stream shared by every run, so two heads of
/// the same shape start from identical weights.
const HEAD_STREAM: &str = "init/head";

fn backbone_stream(seed: u64, run: &str) -> rand_chacha::ChaCha8Rng {
    substream(seed, &format!("init/backbone/{run}"))
}

/// Moves tape gradients of `vars` onto the model parameters.
fn pull_grads<M: Network>(model: &mut M, tape: &Tape, vars: &[Var]) -> Result<()> {
    for (p, &v) in model.params_mut().into_iter().zip(vars) {
        match tape.grad(v) {
            Some(g) => p.accumulate_grad(g)?,
            None => p.accumulate_grad(&vec![0.0; p.len()])?,
        }
    }
    Ok(())
}

/// Per-task mean losses of one minibatch, recorded on `tape` with the
/// model parameters bound to `vars`.
type BatchLoss<'a, M> = dyn Fn(&M, &mut Tape, &[Var], &[usize]) -> Result<Vec<Var>> + 'a;
/// Per-task mean losses over a set of examples.
type EvalLoss<'a, M> = dyn Fn(&M, &[usize]) -> Result<Vec<f64>> + 'a;
/// Per-epoch probe run after training on the epoch's minibatches.
type Probe<'a, M> = dyn Fn(&M, f64) -> Result<PairProbe> + 'a;

struct Run<'a, M> {
    id: String,
    tasks: Vec<String>,
    eval_batch: Vec<usize>,
    batch_loss: &'a BatchLoss<'a, M>,
    eval_loss: &'a EvalLoss<'a, M>,
    probe: Option<&'a Probe<'a, M>>,
}

fn fit<M: Network>(
    mut model: M,
    ds: &MultiTaskDataset,
    tc: &TrainConfig,
    run: Run<'_, M>,
) -> Result<TrainOutcome<M>> {
    let mut order = ds.splits.train.clone();
    let mut rng = substream(tc.seed, &format!("batching/{}", run.id));
    let mut records = Vec::with_capacity(tc.epochs);
    let mut snapshots = Vec::with_capacity(tc.epochs);
    let diverged = |epoch| Error::TrainingDiverged {
        run: run.id.clone(),
        epoch,
    };

    for t in 0..tc.epochs {
        let epoch = t + 1;
        let lr = tc.lr_at(t);
        order.shuffle(&mut rng);
        let mut train_sum = vec![0.0; run.tasks.len()];
        for batch in order.chunks(tc.batch_size) {
            let mut tape = Tape::new();
            let vars = model.bind(&mut tape, true);
            let losses = (run.batch_loss)(&model, &mut tape, &vars, batch)?;
            let mut total = losses[0];
            for &l in &losses[1..] {
                total = tape.add(total, l)?;
            }
            if !tape.value(total).data()[0].is_finite() {
                return Err(diverged(epoch));
            }
            for (s, &l) in train_sum.iter_mut().zip(&losses) {
                *s += tape.value(l).data()[0] * batch.len() as f64;
            }
            tape.backward(total)?;
            pull_grads(&mut model, &tape, &vars)?;
            sgd_step(&mut model.params_mut(), lr)?;
        }
        let train_loss = train_sum.iter().map(|s| s / order.len() as f64).collect();
        let val_loss = (run.eval_loss)(&model, &ds.splits.val)?;
        if val_loss.iter().any(|v| !v.is_finite()) {
            return Err(diverged(epoch));
        }
        let probe = match run.probe {
            Some(p) => Some(p(&model, lr)?),
            None => None,
        };
        log::debug!("{} epoch {epoch}: val {:?}", run.id, val_loss);
        records.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss,
            probe,
        });
        snapshots.push(model.clone());
    }

    let best = best_epoch(&records);
    Ok(TrainOutcome {
        model: snapshots[best - 1].clone(),
        trace: TrainTrace {
            run: run.id,
            tasks: run.tasks,
            seed: tc.seed,
            best_epoch: best,
            eval_batch: run.eval_batch,
            epochs: records,
        },
        snapshots,
    })
}

/// 1-based epoch with the smallest summed validation loss; earliest on ties.
pub fn best_epoch(records: &[EpochRecord]) -> usize {
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for (i, r) in records.iter().enumerate() {
        let v: f64 = r.val_loss.iter().sum();
        if v < best_val {
            best = i;
            best_val = v;
        }
    }
    best + 1
}

fn check_inputs(ds: &MultiTaskDataset, cfg: &BackboneConfig, tc: &TrainConfig) -> Result<()> {
    tc.validate()?;
    cfg.validate()?;
    if ds.splits.train.is_empty() || ds.splits.val.is_empty() {
        return Err(Error::Data("train and validation splits must be non-empty".into()));
    }
    Ok(())
}

fn input_mismatch(cfg: &BackboneConfig, expected: usize) -> Error {
    Error::Dimension(format!(
        "backbone input width {} does not match {expected}",
        cfg.input_dim
    ))
}

/// Trains an STL model for `task`; `cfg` is the (half-capacity) backbone.
pub fn train_stl(
    task: &str,
    ds: &MultiTaskDataset,
    cfg: &BackboneConfig,
    tc: &TrainConfig,
) -> Result<TrainOutcome<StlModel>> {
    check_inputs(ds, cfg, tc)?;
    if cfg.input_dim != ds.input_dim() {
        return Err(input_mismatch(cfg, ds.input_dim()));
    }
    let spec = ds.task(task)?;
    let labels = ds.labels_of(task)?;
    let id = stl_run_id(task);
    let model = StlModel::init(
        task,
        cfg,
        spec.output_dim,
        &mut backbone_stream(tc.seed, &id),
        &mut substream(tc.seed, HEAD_STREAM),
    );

    let batch_loss = |m: &StlModel, tape: &mut Tape, vars: &[Var], rows: &[usize]| {
        let x = tape.constant(ds.inputs.select_rows(rows)?);
        let (_, out) = m.forward(tape, vars, x)?;
        Ok(vec![task_loss(tape, out, &labels.select(rows)?, Reduction::Mean)?])
    };
    let eval_loss = |m: &StlModel, rows: &[usize]| {
        Ok(vec![m.loss_on(&ds.inputs.select_rows(rows)?, &labels.select(rows)?)?])
    };
    fit(
        model,
        ds,
        tc,
        Run {
            id,
            tasks: vec![task.to_string()],
            eval_batch: vec![],
            batch_loss: &batch_loss,
            eval_loss: &eval_loss,
            probe: None,
        },
    )
}

/// Draws the fixed evaluation batch for a run from the validation split.
pub fn eval_batch(ds: &MultiTaskDataset, tc: &TrainConfig, run: &str) -> Vec<usize> {
    let mut rows = ds.splits.val.clone();
    rows.shuffle(&mut substream(tc.seed, &format!("evalbatch/{run}")));
    rows.truncate(tc.eval_batch_size);
    rows
}

/// Trains a pairwise MTL model on `L_a + L_b`; `cfg` is the full backbone.
pub fn train_mtl(
    pair: (&str, &str),
    ds: &MultiTaskDataset,
    cfg: &BackboneConfig,
    tc: &TrainConfig,
) -> Result<TrainOutcome<MtlModel>> {
    check_inputs(ds, cfg, tc)?;
    if cfg.input_dim != ds.input_dim() {
        return Err(input_mismatch(cfg, ds.input_dim()));
    }
    let (a, b) = pair;
    let (spec_a, spec_b) = (ds.task(a)?, ds.task(b)?);
    let (la, lb) = (ds.labels_of(a)?, ds.labels_of(b)?);
    let id = mtl_run_id(a, b);
    let model = MtlModel::init(
        pair,
        cfg,
        (spec_a.output_dim, spec_b.output_dim),
        &mut backbone_stream(tc.seed, &id),
        || substream(tc.seed, HEAD_STREAM),
    );
    let probe_rows = eval_batch(ds, tc, &id);
    let probe_x = ds.inputs.select_rows(&probe_rows)?;
    let probe_a = la.select(&probe_rows)?;
    let probe_b = lb.select(&probe_rows)?;

    let batch_loss = |m: &MtlModel, tape: &mut Tape, vars: &[Var], rows: &[usize]| {
        let x = tape.constant(ds.inputs.select_rows(rows)?);
        let (_, oa, ob) = m.forward(tape, vars, x)?;
        Ok(vec![
            task_loss(tape, oa, &la.select(rows)?, Reduction::Mean)?,
            task_loss(tape, ob, &lb.select(rows)?, Reduction::Mean)?,
        ])
    };
    let eval_loss = |m: &MtlModel, rows: &[usize]| {
        let (va, vb) = m.losses_on(&ds.inputs.select_rows(rows)?, (&la.select(rows)?, &lb.select(rows)?))?;
        Ok(vec![va, vb])
    };
    let probe = |m: &MtlModel, lr: f64| pair_probe(m, &probe_x, (&probe_a, &probe_b), lr);
    fit(
        model,
        ds,
        tc,
        Run {
            id,
            tasks: vec![a.to_string(), b.to_string()],
            eval_batch: probe_rows.clone(),
            batch_loss: &batch_loss,
            eval_loss: &eval_loss,
            probe: Some(&probe),
        },
    )
}

/// Backbone gradient of each task loss on `x`, and the losses themselves.
fn backbone_grads(
    m: &MtlModel,
    x: &Tensor,
    targets: (&crate::tasks::Labels, &crate::tasks::Labels),
) -> Result<((f64, Vec<f64>), (f64, Vec<f64>))> {
    let nb = m.backbone_param_count();
    let mut tape = Tape::new();
    let vars = m.bind(&mut tape, true);
    let xv = tape.constant(x.clone());
    let (_, oa, ob) = m.forward(&mut tape, &vars, xv)?;
    let la = task_loss(&mut tape, oa, targets.0, Reduction::Mean)?;
    let lb = task_loss(&mut tape, ob, targets.1, Reduction::Mean)?;
    let flat = |tape: &Tape| -> Vec<f64> {
        vars[..nb]
            .iter()
            .flat_map(|&v| match tape.grad(v) {
                Some(g) => g.to_vec(),
                None => vec![0.0; tape.value(v).len()],
            })
            .collect()
    };
    tape.backward(la)?;
    let ga = flat(&tape);
    tape.zero_grad();
    tape.backward(lb)?;
    let gb = flat(&tape);
    Ok((
        (tape.value(la).data()[0], ga),
        (tape.value(lb).data()[0], gb),
    ))
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    (dot / (nu * nv)).clamp(-1.0, 1.0)
}

fn stepped_backbone(m: &MtlModel, grad: &[f64], lr: f64) -> MtlModel {
    let mut out = m.clone();
    let mut offset = 0;
    for layer in &mut out.backbone.layers {
        for p in [&mut layer.weight, &mut layer.bias] {
            let n = p.len();
            p.data_mut()
                .iter_mut()
                .zip(&grad[offset..offset + n])
                .for_each(|(w, g)| *w -= lr * g);
            offset += n;
        }
    }
    out
}

/// Gradient cosine and both look-ahead values for `m` on one batch.
pub fn pair_probe(
    m: &MtlModel,
    x: &Tensor,
    targets: (&crate::tasks::Labels, &crate::tasks::Labels),
    lr: f64,
) -> Result<PairProbe> {
    let ((la, ga), (lb, gb)) = backbone_grads(m, x, targets)?;
    let lookahead = |before: f64, after: f64| (before != 0.0).then(|| 1.0 - after / before);
    // a ← b: backbone moved by b's gradient, a's head fixed
    let after_a = stepped_backbone(m, &gb, lr).losses_on(x, targets)?.0;
    let after_b = stepped_backbone(m, &ga, lr).losses_on(x, targets)?.1;
    Ok(PairProbe {
        grad_cosine: cosine(&ga, &gb),
        lookahead_a_from_b: lookahead(la, after_a),
        lookahead_b_from_a: lookahead(lb, after_b),
    })
}

/// Trains `STL_{target ← partner}`: the input is the regular input with the
/// partner's encoded label appended. `cfg` is the same half-capacity
/// backbone used for standard STL, with the regular input width.
pub fn train_injected(
    target: &str,
    partner: &str,
    ds: &MultiTaskDataset,
    cfg: &BackboneConfig,
    tc: &TrainConfig,
) -> Result<TrainOutcome<InjectedStlModel>> {
    check_inputs(ds, cfg, tc)?;
    if cfg.input_dim != ds.input_dim() {
        return Err(input_mismatch(cfg, ds.input_dim()));
    }
    let spec = ds.task(target)?;
    let width = ds.task(partner)?.encoded_width();
    let labels = ds.labels_of(target)?;
    let partner_labels = ds.labels_of(partner)?;
    let id = injected_run_id(target, partner);
    let wide = cfg.with_input_dim(cfg.input_dim + width);
    let model = InjectedStlModel {
        partner: partner.to_string(),
        label_width: width,
        model: StlModel::init(
            target,
            &wide,
            spec.output_dim,
            &mut backbone_stream(tc.seed, &id),
            &mut substream(tc.seed, HEAD_STREAM),
        ),
    };

    let batch_loss = |m: &InjectedStlModel, tape: &mut Tape, vars: &[Var], rows: &[usize]| {
        let x = tape.constant(ds.inputs.select_rows(rows)?);
        let inj = tape.constant(partner_labels.encode(rows, width)?);
        let out = m.forward(tape, vars, x, inj)?;
        Ok(vec![task_loss(tape, out, &labels.select(rows)?, Reduction::Mean)?])
    };
    let eval_loss = |m: &InjectedStlModel, rows: &[usize]| {
        Ok(vec![m.loss_on(
            &ds.inputs.select_rows(rows)?,
            &partner_labels.encode(rows, width)?,
            &labels.select(rows)?,
        )?])
    };
    fit(
        model,
        ds,
        tc,
        Run {
            id,
            tasks: vec![target.to_string()],
            eval_batch: vec![],
            batch_loss: &batch_loss,
            eval_loss: &eval_loss,
            probe: None,
        },
    )
}

/// Mean test loss of an injected model.
pub fn injected_test_loss(m: &InjectedStlModel, ds: &MultiTaskDataset) -> Result<f64> {
    let rows = &ds.splits.test;
    m.loss_on(
        &ds.inputs.select_rows(rows)?,
        &ds.labels_of(&m.partner)?.encode(rows, m.label_width)?,
        &ds.labels_of(m.target())?.select(rows)?,
    )
}

pub fn stl_test_loss(m: &StlModel, ds: &MultiTaskDataset) -> Result<f64> {
    let rows = &ds.splits.test;
    m.loss_on(&ds.inputs.select_rows(rows)?, &ds.labels_of(&m.task)?.select(rows)?)
}

/// Test losses `(L_a, L_b)` of an MTL model.
pub fn mtl_test_losses(m: &MtlModel, ds: &MultiTaskDataset) -> Result<(f64, f64)> {
    let rows = &ds.splits.test;
    m.losses_on(
        &ds.inputs.select_rows(rows)?,
        (
            &ds.labels_of(&m.tasks.0)?.select(rows)?,
            &ds.labels_of(&m.tasks.1)?.select(rows)?,
        ),
    )
}
