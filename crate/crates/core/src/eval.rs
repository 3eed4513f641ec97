//! Ground-truth MTL gain and the three evaluation levels: correlation with
//! the gain, partner ranking, and best-partner selection. Also the training
//! cost of each score.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::affinity::{AffinityMatrix, ScoreKind};
use crate::error::{Error, Result};
use crate::matrix::{shifted_decimal, TaskMatrix};
use crate::stats::{kendall_tau, pearson, KendallVariant};

/// MTL gains stored as fractions; CSV files hold percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainMatrix {
    #[serde(flatten)]
    pub matrix: TaskMatrix,
}

impl GainMatrix {
    pub fn from_matrix(matrix: TaskMatrix) -> Result<Self> {
        matrix.check_complete()?;
        Ok(Self { matrix })
    }

    pub fn tasks(&self) -> &[String] {
        &self.matrix.tasks
    }

    /// Gain of `target` when trained with `partner`.
    pub fn get(&self, partner: &str, target: &str) -> Result<f64> {
        self.matrix
            .get(partner, target)?
            .ok_or_else(|| Error::Incomplete {
                partner: partner.to_string(),
                target: target.to_string(),
            })
    }

    pub fn to_csv(&self) -> Result<String> {
        self.matrix.to_csv(2)
    }

    pub fn from_csv(reader: impl Read) -> Result<Self> {
        Self::from_matrix(TaskMatrix::from_csv(reader, 2)?)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.matrix.write_csv(path, 2)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_matrix(TaskMatrix::load_csv(path, 2)?)
    }
}

/// Relative test-loss improvement of a task trained with a partner versus
/// alone; `loss_mtl` is the task's own loss inside the MTL model.
pub fn mtl_gain(loss_stl: f64, loss_mtl: f64) -> Result<f64> {
    if !(loss_stl > 0.0 && loss_mtl > 0.0) {
        return Err(Error::Domain(format!(
            "MTL gain needs positive losses, got {loss_stl} and {loss_mtl}"
        )));
    }
    Ok((loss_stl - loss_mtl) / loss_mtl)
}

fn check_pair(gain: &GainMatrix, score: &AffinityMatrix) -> Result<()> {
    gain.matrix.check_aligned(&score.matrix)?;
    if gain.matrix.n() < 2 {
        return Err(Error::Dimension("need at least two tasks".into()));
    }
    Ok(())
}

/// `None` where a statistic is undefined (too few partners, constant input).
fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Degenerate(_) | Error::Domain(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn columns(gain: &GainMatrix, score: &AffinityMatrix, t: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = score.matrix.column(t)?.into_iter().map(|(_, v)| v).collect();
    let g = gain.matrix.column(t)?.into_iter().map(|(_, v)| v).collect();
    Ok((s, g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level1 {
    /// Pearson per target, in task order.
    pub per_target: Vec<Option<f64>>,
    /// Pearson over every off-diagonal cell.
    pub all_at_once: Option<f64>,
}

pub fn level1_predictive(gain: &GainMatrix, score: &AffinityMatrix) -> Result<Level1> {
    check_pair(gain, score)?;
    let (mut xs, mut ys) = (vec![], vec![]);
    let mut per_target = vec![];
    for t in 0..gain.matrix.n() {
        let (s, g) = columns(gain, score, t)?;
        per_target.push(defined(pearson(&s, &g))?);
        xs.extend(s);
        ys.extend(g);
    }
    Ok(Level1 {
        per_target,
        all_at_once: defined(pearson(&xs, &ys))?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level2 {
    /// Kendall's tau per target, in task order.
    pub per_target: Vec<Option<f64>>,
    /// Mean over the defined per-target values.
    pub average: Option<f64>,
}

pub fn level2_ranking(
    gain: &GainMatrix,
    score: &AffinityMatrix,
    variant: KendallVariant,
) -> Result<Level2> {
    check_pair(gain, score)?;
    let per_target = (0..gain.matrix.n())
        .map(|t| {
            let (s, g) = columns(gain, score, t)?;
            defined(kendall_tau(&s, &g, variant))
        })
        .collect::<Result<Vec<_>>>()?;
    let vals: Vec<f64> = per_target.iter().flatten().copied().collect();
    let average = (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    Ok(Level2 {
        per_target,
        average,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level3Entry {
    pub target: String,
    /// Lexicographically first partner among those with the top score.
    pub selected: String,
    /// Every partner sharing the top score (includes `selected`).
    pub tied: Vec<String>,
    /// Lexicographically first partner with the largest gain.
    pub true_best: String,
    /// `gain(selected) − gain(true best)`, a fraction, `<= 0`.
    pub delta: f64,
    /// Mean delta over `tied`.
    pub mean_tied_delta: f64,
}

/// Partners of column `t` whose value equals the column maximum, sorted by
/// name.
fn argmax_set(m: &TaskMatrix, t: usize) -> Result<Vec<(String, f64)>> {
    let col = m.column(t)?;
    let max = col.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
    let mut top: Vec<(String, f64)> = col
        .into_iter()
        .filter(|&(_, v)| v == max)
        .map(|(i, v)| (m.tasks[i].clone(), v))
        .collect();
    top.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(top)
}

pub fn level3_best_partner(gain: &GainMatrix, score: &AffinityMatrix) -> Result<Vec<Level3Entry>> {
    check_pair(gain, score)?;
    (0..gain.matrix.n())
        .map(|t| {
            let target = gain.matrix.tasks[t].clone();
            let tied: Vec<String> = argmax_set(&score.matrix, t)?
                .into_iter()
                .map(|(p, _)| p)
                .collect();
            let (true_best, best_gain) = argmax_set(&gain.matrix, t)?.swap_remove(0);
            let delta_of = |p: &str| gain.get(p, &target).map(|g| g - best_gain);
            let deltas = tied.iter().map(|p| delta_of(p)).collect::<Result<Vec<_>>>()?;
            Ok(Level3Entry {
                selected: tied[0].clone(),
                delta: deltas[0],
                mean_tied_delta: deltas.iter().sum::<f64>() / deltas.len() as f64,
                tied,
                true_best,
                target,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEvaluation {
    pub kind: ScoreKind,
    pub level1: Level1,
    pub level2: Level2,
    pub level3: Vec<Level3Entry>,
}

pub fn evaluate(
    gain: &GainMatrix,
    score: &AffinityMatrix,
    variant: KendallVariant,
) -> Result<ScoreEvaluation> {
    Ok(ScoreEvaluation {
        kind: score.kind,
        level1: level1_predictive(gain, score)?,
        level2: level2_ranking(gain, score, variant)?,
        level3: level3_best_partner(gain, score)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub tasks: Vec<String>,
    pub kendall: KendallVariant,
    pub scores: Vec<ScoreEvaluation>,
}

const ALL_AT_ONCE: &str = "All-at-once";
const AVERAGE: &str = "Average";

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(cell: &str) -> Result<Option<f64>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse()
        .map(Some)
        .map_err(|_| Error::Data(format!("cannot parse `{cell}`")))
}

fn csv_string(rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(vec![]);
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Data(format!("csv writer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
}

fn csv_rows(reader: impl Read) -> Result<Vec<Vec<String>>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(reader);
    r.records()
        .map(|rec| Ok(rec?.iter().map(str::to_string).collect()))
        .collect()
}

/// Rows = targets plus one summary row, columns = scores.
fn write_table(
    tasks: &[String],
    kinds: &[ScoreKind],
    per_target: &[&[Option<f64>]],
    summary_name: &str,
    summary: &[Option<f64>],
) -> Result<String> {
    let mut rows = vec![std::iter::once("target".to_string())
        .chain(kinds.iter().map(|k| k.name().to_string()))
        .collect()];
    for (t, name) in tasks.iter().enumerate() {
        rows.push(
            std::iter::once(name.clone())
                .chain(per_target.iter().map(|col| opt_cell(col[t])))
                .collect(),
        );
    }
    rows.push(
        std::iter::once(summary_name.to_string())
            .chain(summary.iter().map(|&v| opt_cell(v)))
            .collect(),
    );
    csv_string(rows)
}

/// Parsed level-1 or level-2 table: task names, score kinds, per-score
/// per-target values and per-score summary.
pub type LevelTable = (Vec<String>, Vec<ScoreKind>, Vec<Vec<Option<f64>>>, Vec<Option<f64>>);

pub fn read_level_table(reader: impl Read, summary_name: &str) -> Result<LevelTable> {
    let rows = csv_rows(reader)?;
    let (header, body) = rows
        .split_first()
        .ok_or_else(|| Error::Data("empty table".into()))?;
    let kinds = header
        .iter()
        .skip(1)
        .map(|s| s.parse())
        .collect::<Result<Vec<ScoreKind>>>()?;
    let (summary_row, task_rows) = body
        .split_last()
        .ok_or_else(|| Error::Data("table has no summary row".into()))?;
    if summary_row[0] != summary_name {
        return Err(Error::Data(format!(
            "last row is `{}`, expected `{summary_name}`",
            summary_row[0]
        )));
    }
    let tasks = task_rows.iter().map(|r| r[0].clone()).collect();
    let mut per = vec![vec![]; kinds.len()];
    for r in task_rows {
        for (k, col) in per.iter_mut().enumerate() {
            col.push(parse_opt(r.get(k + 1).map(String::as_str).unwrap_or(""))?);
        }
    }
    let summary = (0..kinds.len())
        .map(|k| parse_opt(summary_row.get(k + 1).map(String::as_str).unwrap_or("")))
        .collect::<Result<Vec<_>>>()?;
    Ok((tasks, kinds, per, summary))
}

const LEVEL3_HEADER: [&str; 7] = [
    "score",
    "target",
    "selected",
    "tied",
    "true_best",
    "delta_percent",
    "mean_tied_delta_percent",
];

impl EvaluationReport {
    pub fn kinds(&self) -> Vec<ScoreKind> {
        self.scores.iter().map(|s| s.kind).collect()
    }

    pub fn level1_csv(&self) -> Result<String> {
        let per: Vec<&[Option<f64>]> = self.scores.iter().map(|s| &s.level1.per_target[..]).collect();
        let summary: Vec<_> = self.scores.iter().map(|s| s.level1.all_at_once).collect();
        write_table(&self.tasks, &self.kinds(), &per, ALL_AT_ONCE, &summary)
    }

    pub fn level2_csv(&self) -> Result<String> {
        let per: Vec<&[Option<f64>]> = self.scores.iter().map(|s| &s.level2.per_target[..]).collect();
        let summary: Vec<_> = self.scores.iter().map(|s| s.level2.average).collect();
        write_table(&self.tasks, &self.kinds(), &per, AVERAGE, &summary)
    }

    /// One row per (score, target); deltas in percent.
    pub fn level3_csv(&self) -> Result<String> {
        let mut rows = vec![LEVEL3_HEADER.iter().map(|s| s.to_string()).collect()];
        for s in &self.scores {
            for e in &s.level3 {
                rows.push(vec![
                    s.kind.name().to_string(),
                    e.target.clone(),
                    e.selected.clone(),
                    e.tied.join("/"),
                    e.true_best.clone(),
                    shifted_decimal(e.delta, 2),
                    shifted_decimal(e.mean_tied_delta, 2),
                ]);
            }
        }
        csv_string(rows)
    }

    pub fn read_level3_csv(reader: impl Read) -> Result<Vec<(ScoreKind, Level3Entry)>> {
        let rows = csv_rows(reader)?;
        if rows.first().map(|h| h.iter().map(String::as_str).eq(LEVEL3_HEADER)) != Some(true) {
            return Err(Error::Data("unexpected level-3 header".into()));
        }
        rows[1..]
            .iter()
            .map(|r| {
                if r.len() != LEVEL3_HEADER.len() {
                    return Err(Error::Data(format!("level-3 row has {} cells", r.len())));
                }
                let pct = |c: &str| -> Result<f64> {
                    format!("{}e-2", c.trim())
                        .parse()
                        .map_err(|_| Error::Data(format!("cannot parse `{c}`")))
                };
                Ok((
                    r[0].parse()?,
                    Level3Entry {
                        target: r[1].clone(),
                        selected: r[2].clone(),
                        tied: r[3].split('/').map(str::to_string).collect(),
                        true_best: r[4].clone(),
                        delta: pct(&r[5])?,
                        mean_tied_delta: pct(&r[6])?,
                    },
                ))
            })
            .collect()
    }

    /// Rebuilds a report from the three level CSVs.
    pub fn from_csvs(
        level1: impl Read,
        level2: impl Read,
        level3: impl Read,
        kendall: KendallVariant,
    ) -> Result<Self> {
        let (tasks, kinds, p1, s1) = read_level_table(level1, ALL_AT_ONCE)?;
        let (tasks2, kinds2, p2, s2) = read_level_table(level2, AVERAGE)?;
        if tasks != tasks2 || kinds != kinds2 {
            return Err(Error::Data("level-1 and level-2 tables disagree".into()));
        }
        let l3 = Self::read_level3_csv(level3)?;
        let scores = kinds
            .iter()
            .enumerate()
            .map(|(k, &kind)| ScoreEvaluation {
                kind,
                level1: Level1 {
                    per_target: p1[k].clone(),
                    all_at_once: s1[k],
                },
                level2: Level2 {
                    per_target: p2[k].clone(),
                    average: s2[k],
                },
                level3: l3
                    .iter()
                    .filter(|(sk, _)| *sk == kind)
                    .map(|(_, e)| e.clone())
                    .collect(),
            })
            .collect();
        Ok(Self {
            tasks,
            kendall,
            scores,
        })
    }

    /// Writes `level1.csv`, `level2.csv`, `level3.csv` and `report.json`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for (name, body) in [
            ("level1.csv", self.level1_csv()?),
            ("level2.csv", self.level2_csv()?),
            ("level3.csv", self.level3_csv()?),
            ("report.json", serde_json::to_string_pretty(self)? + "\n"),
        ] {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Training cost model: `n` tasks, `c_s` multiply-adds for one standard
/// half-capacity STL model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub n: u64,
    pub c_s: u64,
}

impl CostModel {
    pub fn new(n: u64, c_s: u64) -> Result<Self> {
        if n < 2 || c_s == 0 {
            return Err(Error::Domain(format!(
                "cost model needs n >= 2 and c_s > 0, got n={n}, c_s={c_s}"
            )));
        }
        Ok(Self { n, c_s })
    }
}

fn pairs(n: u64) -> u64 {
    n * (n - 1) / 2
}

/// Symbolic training cost of computing `kind` for every pair.
pub fn cost_expression(kind: ScoreKind) -> &'static str {
    match kind {
        ScoreKind::Td => "0",
        ScoreKind::Ias | ScoreKind::Rsa => "n*c_s",
        ScoreKind::Li => "n*c_s + 2*C(n,2)*c_s",
        ScoreKind::Gs | ScoreKind::Gt => "C(n,2)*2*c_s",
    }
}

/// Cost in units of `c_s`.
pub fn cost_multiple(kind: ScoreKind, n: u64) -> u64 {
    match kind {
        ScoreKind::Td => 0,
        ScoreKind::Ias | ScoreKind::Rsa => n,
        ScoreKind::Li => n + 2 * pairs(n),
        ScoreKind::Gs | ScoreKind::Gt => pairs(n) * 2,
    }
}

pub fn score_cost(kind: ScoreKind, cost: &CostModel) -> u64 {
    cost_multiple(kind, cost.n) * cost.c_s
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRow {
    pub score: ScoreKind,
    pub expression: String,
    pub n: u64,
    pub c_s: u64,
    pub c_s_multiple: u64,
    pub multiply_adds: u64,
}

pub fn cost_table(kinds: &[ScoreKind], cost: &CostModel) -> Vec<CostRow> {
    kinds
        .iter()
        .map(|&k| CostRow {
            score: k,
            expression: cost_expression(k).to_string(),
            n: cost.n,
            c_s: cost.c_s,
            c_s_multiple: cost_multiple(k, cost.n),
            multiply_adds: score_cost(k, cost),
        })
        .collect()
}

pub fn write_cost_csv(rows: &[CostRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(vec![]);
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Data(format!("csv writer: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
}

pub fn read_cost_csv(reader: impl Read) -> Result<Vec<CostRow>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize().map(|row| Ok(row?)).collect()
}
