//! End-to-end pipeline: train every STL, pairwise MTL and label-injected
//! model, score all pairs, evaluate the scores against the measured MTL
//! gains and write the results.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::affinity::{
    assemble_matrix, gradient_similarity, gradient_transference, input_attribution_similarity,
    label_injection, rsa, taxonomical_distance, AffinityMatrix, ScoreKind,
};
use crate::error::{Error, Result};
use crate::eval::{cost_table, evaluate, mtl_gain, write_cost_csv, CostModel, CostRow, EvaluationReport, GainMatrix};
use crate::matrix::TaskMatrix;
use crate::model::{half_capacity, BackboneConfig, Network, StlModel};
use crate::rng::substream;
use crate::stats::KendallVariant;
use crate::tasks::{generate_latent_factor_suite, prepare_empty_dir, MultiTaskDataset, SuiteConfig, TaxonomyDistances};
use crate::train::{
    injected_test_loss, mtl_test_losses, stl_test_loss, train_injected, train_mtl, train_stl, TrainConfig,
    TrainTrace,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// Generated per seed; the suite seed is replaced by the run seed.
    Generate(SuiteConfig),
    /// A directory written by `generate`.
    Path(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    /// Hidden widths of the full-capacity backbone.
    pub hidden_widths: Vec<usize>,
    pub latent_dim: usize,
    /// `seed` is ignored; each entry of `seeds` is used instead.
    pub train: TrainConfig,
    pub scores: Vec<ScoreKind>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Test-split batch used for IAS and RSA.
    pub score_batch_size: usize,
    /// Tree distances for TD; required when TD is requested.
    pub taxonomy: Option<PathBuf>,
    pub kendall: KendallVariant,
    /// Write GS matrices multiplied by 100.
    pub display_gs_x100: bool,
    /// Also write every per-epoch snapshot and trace.
    pub save_checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Generate(SuiteConfig::default()),
            hidden_widths: vec![64],
            latent_dim: 32,
            train: TrainConfig::default(),
            scores: vec![ScoreKind::Ias, ScoreKind::Rsa, ScoreKind::Li, ScoreKind::Gs, ScoreKind::Gt],
            seeds: vec![0],
            out_dir: PathBuf::from("runs"),
            score_batch_size: 256,
            taxonomy: None,
            kendall: KendallVariant::TauB,
            display_gs_x100: false,
            save_checkpoints: false,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scores.is_empty() {
            return Err(Error::Configuration("at least one score is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Configuration("at least one seed is required".into()));
        }
        if self.score_batch_size < 3 {
            return Err(Error::Configuration("score_batch_size must be >= 3".into()));
        }
        if self.scores.contains(&ScoreKind::Td) && self.taxonomy.is_none() {
            return Err(Error::Configuration("TD needs a `taxonomy` file".into()));
        }
        self.train.validate()
    }

    /// SHA-256 of the canonical JSON form, ignoring `out_dir`.
    pub fn hash(&self) -> Result<String> {
        let json = serde_json::to_string(&Self {
            out_dir: PathBuf::new(),
            ..self.clone()
        })?;
        Ok(Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect())
    }
}

pub fn load_dataset(source: &DatasetSource, seed: u64) -> Result<MultiTaskDataset> {
    match source {
        DatasetSource::Generate(cfg) => generate_latent_factor_suite(&SuiteConfig { seed, ..cfg.clone() }),
        DatasetSource::Path(p) => MultiTaskDataset::load(p),
    }
}

enum Job {
    Stl(usize),
    Mtl(usize, usize),
    Injected { target: usize, partner: usize },
}

enum Done {
    Stl(usize, StlModel, f64),
    Mtl(usize, usize, (f64, f64), TrainTrace),
    Injected { target: usize, partner: usize, loss: f64 },
}

/// Everything computed for one seed.
#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub tasks: Vec<String>,
    pub gain: GainMatrix,
    pub scores: Vec<AffinityMatrix>,
    pub report: EvaluationReport,
    pub costs: Vec<CostRow>,
    pub stl_test_loss: Vec<f64>,
    /// Examples (IAS) or epochs (GT) left out of score averages.
    pub skipped: BTreeMap<String, usize>,
    pub c_s: u64,
}

/// Trains and scores everything for one seed without touching the disk
/// (except for checkpoints when requested).
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedResult> {
    cfg.validate()?;
    let ds = load_dataset(&cfg.dataset, seed)?;
    let tasks = ds.task_names();
    let n = tasks.len();
    if n < 2 {
        return Err(Error::Configuration("need at least two tasks".into()));
    }
    let tc = TrainConfig { seed, ..cfg.train.clone() };
    let full = BackboneConfig::new(ds.input_dim(), cfg.hidden_widths.clone(), cfg.latent_dim)?;
    let half: Vec<BackboneConfig> = ds
        .tasks
        .iter()
        .map(|t| half_capacity(&full, t.output_dim))
        .collect::<Result<_>>()?;

    let wants = |k: ScoreKind| cfg.scores.contains(&k);
    let mut jobs: Vec<Job> = (0..n).map(Job::Stl).collect();
    for a in 0..n {
        for b in a + 1..n {
            jobs.push(Job::Mtl(a, b));
        }
    }
    if wants(ScoreKind::Li) {
        for target in 0..n {
            for partner in 0..n {
                if target != partner {
                    jobs.push(Job::Injected { target, partner });
                }
            }
        }
    }

    let ckpt_dir = cfg.out_dir.join(format!("seed_{seed}")).join("checkpoints");
    let done = jobs
        .par_iter()
        .map(|job| -> Result<Done> {
            match *job {
                Job::Stl(t) => {
                    let out = train_stl(&tasks[t], &ds, &half[t], &tc)?;
                    if cfg.save_checkpoints {
                        out.save_checkpoints(&ckpt_dir)?;
                    }
                    let loss = stl_test_loss(&out.model, &ds)?;
                    Ok(Done::Stl(t, out.model, loss))
                }
                Job::Mtl(a, b) => {
                    let out = train_mtl((&tasks[a], &tasks[b]), &ds, &full, &tc)?;
                    if cfg.save_checkpoints {
                        out.save_checkpoints(&ckpt_dir)?;
                    }
                    let losses = mtl_test_losses(&out.model, &ds)?;
                    Ok(Done::Mtl(a, b, losses, out.trace))
                }
                Job::Injected { target, partner } => {
                    let out = train_injected(&tasks[target], &tasks[partner], &ds, &half[target], &tc)?;
                    if cfg.save_checkpoints {
                        out.save_checkpoints(&ckpt_dir)?;
                    }
                    Ok(Done::Injected {
                        target,
                        partner,
                        loss: injected_test_loss(&out.model, &ds)?,
                    })
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut stl: Vec<Option<(StlModel, f64)>> = vec![None; n];
    let mut mtl: BTreeMap<(usize, usize), ((f64, f64), TrainTrace)> = BTreeMap::new();
    let mut injected: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut c_s = 0u64;
    for d in done {
        match d {
            Done::Stl(t, m, loss) => {
                c_s = c_s.max(m.multiply_add_count());
                stl[t] = Some((m, loss));
            }
            Done::Mtl(a, b, losses, trace) => {
                mtl.insert((a, b), (losses, trace));
            }
            Done::Injected { target, partner, loss } => {
                injected.insert((target, partner), loss);
            }
        }
    }
    let stl: Vec<(StlModel, f64)> = stl.into_iter().map(|s| s.expect("one STL job per task")).collect();

    // gain of target t with partner p
    let mut gain = TaskMatrix::empty(tasks.clone())?;
    for (&(a, b), ((la, lb), _)) in &mtl {
        gain.set(&tasks[b], &tasks[a], mtl_gain(stl[a].1, *la)?)?;
        gain.set(&tasks[a], &tasks[b], mtl_gain(stl[b].1, *lb)?)?;
    }
    let gain = GainMatrix::from_matrix(gain)?;

    let mut rows = ds.splits.test.clone();
    rows.shuffle(&mut substream(seed, "evalbatch/scores"));
    rows.truncate(cfg.score_batch_size);
    let batch_x = ds.inputs.select_rows(&rows)?;
    let batch_y = tasks
        .iter()
        .map(|t| ds.labels_of(t)?.select(&rows))
        .collect::<Result<Vec<_>>>()?;

    let mut skipped = BTreeMap::new();
    let mut scores = vec![];
    for &kind in &cfg.scores {
        let mut vals: Vec<(String, String, f64)> = vec![];
        let mut push = |p: usize, t: usize, v: f64| vals.push((tasks[p].clone(), tasks[t].clone(), v));
        let mut skip_count = 0;
        match kind {
            ScoreKind::Td => {
                let td = TaxonomyDistances::load(cfg.taxonomy.as_ref().expect("validated"))?;
                for a in 0..n {
                    for b in a + 1..n {
                        push(a, b, taxonomical_distance(&td, &tasks[a], &tasks[b])?);
                    }
                }
            }
            ScoreKind::Ias => {
                for a in 0..n {
                    for b in a + 1..n {
                        let r = input_attribution_similarity(&stl[a].0, &stl[b].0, &batch_x, (&batch_y[a], &batch_y[b]))?;
                        skip_count += r.skipped;
                        push(a, b, r.score);
                    }
                }
            }
            ScoreKind::Rsa => {
                for a in 0..n {
                    for b in a + 1..n {
                        push(a, b, rsa(&stl[a].0, &stl[b].0, &batch_x)?);
                    }
                }
            }
            ScoreKind::Li => {
                for (&(t, p), &loss) in &injected {
                    push(p, t, label_injection(stl[t].1, loss)?);
                }
            }
            ScoreKind::Gs => {
                for (&(a, b), (_, trace)) in &mtl {
                    push(a, b, gradient_similarity(trace)?);
                }
            }
            ScoreKind::Gt => {
                for (&(a, b), (_, trace)) in &mtl {
                    let ta = gradient_transference(trace, &tasks[a])?;
                    let tb = gradient_transference(trace, &tasks[b])?;
                    skip_count += ta.skipped + tb.skipped;
                    push(b, a, ta.score);
                    push(a, b, tb.score);
                }
            }
        }
        if skip_count > 0 {
            log::warn!("{kind}: {skip_count} degenerate examples or epochs skipped (seed {seed})");
        }
        skipped.insert(kind.name().to_string(), skip_count);
        scores.push(assemble_matrix(kind, &tasks, &vals)?);
    }

    let report = EvaluationReport {
        tasks: tasks.clone(),
        kendall: cfg.kendall,
        scores: scores
            .iter()
            .map(|s| evaluate(&gain, s, cfg.kendall))
            .collect::<Result<_>>()?,
    };
    let costs = cost_table(&cfg.scores, &CostModel::new(n as u64, c_s)?);
    Ok(SeedResult {
        seed,
        stl_test_loss: stl.iter().map(|s| s.1).collect(),
        tasks,
        gain,
        scores,
        report,
        costs,
        skipped,
        c_s,
    })
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    config_sha256: String,
    seed: u64,
    version: &'static str,
    tasks: &'a [String],
    c_s: u64,
    stl_test_loss: &'a [f64],
    skipped: &'a BTreeMap<String, usize>,
    config: &'a ExperimentConfig,
}

fn write(path: PathBuf, body: String) -> Result<()> {
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
}

impl SeedResult {
    /// Writes all result files of this seed into `dir`.
    pub fn write_dir(&self, dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.gain.write_csv(dir.join("gain.csv"))?;
        for s in &self.scores {
            let pow10 = if s.kind == ScoreKind::Gs && cfg.display_gs_x100 { 2 } else { 0 };
            s.write_csv(dir.join(format!("{}.csv", s.kind.file_stem())), pow10)?;
            write(dir.join(format!("scatter_{}.csv", s.kind.file_stem())), self.scatter_csv(s)?)?;
        }
        self.report.write_dir(dir)?;
        write(dir.join("costs.csv"), write_cost_csv(&self.costs)?)?;
        let manifest = Manifest {
            config_sha256: cfg.hash()?,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION"),
            tasks: &self.tasks,
            c_s: self.c_s,
            stl_test_loss: &self.stl_test_loss,
            skipped: &self.skipped,
            config: cfg,
        };
        write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")
    }

    /// Score-versus-gain points: one row per (target, partner).
    fn scatter_csv(&self, score: &AffinityMatrix) -> Result<String> {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(["target", "partner", "score", "gain_percent"])?;
        for t in &self.tasks {
            for p in &self.tasks {
                if p == t {
                    continue;
                }
                let s = score.get(p, t)?.expect("complete matrix");
                let g = self.gain.get(p, t)?;
                w.write_record([t.clone(), p.clone(), s.to_string(), crate::matrix::shifted_decimal(g, 2)])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv writer: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
    }
}

/// Runs every seed and writes `<out_dir>/seed_<seed>/`. The output
/// directory must be empty or absent.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<SeedResult>> {
    cfg.validate()?;
    prepare_empty_dir(&cfg.out_dir)?;
    let mut results = vec![];
    for &seed in &cfg.seeds {
        log::info!("seed {seed}: training");
        let r = run_seed(cfg, seed)?;
        r.write_dir(&cfg.out_dir.join(format!("seed_{seed}")), cfg)?;
        results.push(r);
    }
    Ok(results)
}
