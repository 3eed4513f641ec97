//! Bundled reference data for the five Taskonomy tasks: ground-truth MTL
//! gains, the six raw affinity matrices, and the published evaluation
//! tables, plus the comparison of recomputed tables against them.

use serde::Serialize;

use crate::affinity::{AffinityMatrix, ScoreKind};
use crate::error::{Error, Result};
use crate::eval::{evaluate, read_level_table, EvaluationReport, GainMatrix};
use crate::matrix::TaskMatrix;
use crate::stats::{has_ties, KendallVariant};

pub const TASKS: [&str; 5] = ["SemSeg", "Keypts", "Edges", "Depth", "Normal"];

const GAIN: &str = include_str!("../data/gain.csv");
const TD: &str = include_str!("../data/taskonomy_td.csv");
const IAS: &str = include_str!("../data/ias.csv");
const RSA: &str = include_str!("../data/rsa.csv");
const LI: &str = include_str!("../data/li.csv");
const GS: &str = include_str!("../data/gs.csv");
const GT: &str = include_str!("../data/gt.csv");
const LEVEL1: &str = include_str!("../data/expected_level1.csv");
const LEVEL2: &str = include_str!("../data/expected_level2.csv");
const LEVEL3: &str = include_str!("../data/expected_level3.csv");

/// Tolerance for correlation cells (tables print two decimals).
pub const CORRELATION_TOL: f64 = 0.005;
/// Tolerance for best-partner deltas, in percentage points.
pub const DELTA_TOL: f64 = 0.05;

/// Published best-partner cell: one or more partners and the delta in
/// percentage points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartnerCell {
    pub partners: Vec<String>,
    pub delta_percent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundledReferenceData {
    pub gain: GainMatrix,
    /// In the printed units (LI and GS as fractions after undoing the ×100).
    pub scores: Vec<AffinityMatrix>,
    pub level1: ExpectedTable,
    pub level2: ExpectedTable,
    /// `level3[score][target]`
    pub level3: Vec<Vec<PartnerCell>>,
    pub expected_partner: Vec<String>,
}

/// Published table with rows = targets plus one summary row.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedTable {
    pub kinds: Vec<ScoreKind>,
    /// `per_target[score][target]`
    pub per_target: Vec<Vec<f64>>,
    pub summary: Vec<f64>,
}

fn integrity(file: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| Error::Integrity {
        file: file.into(),
        reason: e.to_string(),
    }
}

fn matrix(file: &str, text: &str, pow10: i32) -> Result<TaskMatrix> {
    let m = TaskMatrix::from_csv(text.as_bytes(), pow10).map_err(integrity(file))?;
    if m.tasks != TASKS {
        return Err(Error::Integrity {
            file: file.into(),
            reason: format!("task set {:?}", m.tasks),
        });
    }
    Ok(m)
}

fn expected_table(file: &str, text: &str, summary: &str) -> Result<ExpectedTable> {
    let (tasks, kinds, per, sum) = read_level_table(text.as_bytes(), summary).map_err(integrity(file))?;
    let missing = || Error::Integrity {
        file: file.into(),
        reason: "empty cell".into(),
    };
    if tasks != TASKS {
        return Err(Error::Integrity {
            file: file.into(),
            reason: format!("rows {tasks:?}"),
        });
    }
    Ok(ExpectedTable {
        kinds,
        per_target: per
            .into_iter()
            .map(|c| c.into_iter().map(|v| v.ok_or_else(missing)).collect())
            .collect::<Result<_>>()?,
        summary: sum.into_iter().map(|v| v.ok_or_else(missing)).collect::<Result<_>>()?,
    })
}

/// Parses `Depth (-32.2)` or `SemSeg/Depth (-4.9)`.
fn partner_cell(cell: &str) -> Option<PartnerCell> {
    let (names, rest) = cell.trim().split_once('(')?;
    let delta = rest.trim().strip_suffix(')')?.trim().parse().ok()?;
    Some(PartnerCell {
        partners: names.trim().split('/').map(|s| s.trim().to_string()).collect(),
        delta_percent: delta,
    })
}

fn level3_table(text: &str) -> Result<(Vec<Vec<PartnerCell>>, Vec<String>)> {
    let bad = |reason: String| Error::Integrity {
        file: "expected_level3.csv".into(),
        reason,
    };
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let kinds: Vec<ScoreKind> = header[2..]
        .iter()
        .map(|s| s.parse())
        .collect::<Result<_>>()
        .map_err(|e| bad(e.to_string()))?;
    if kinds != ScoreKind::ALL {
        return Err(bad(format!("columns {kinds:?}")));
    }
    let mut cells = vec![vec![]; kinds.len()];
    let mut expected = vec![];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.get(0) != TASKS.get(i).copied() {
            return Err(bad(format!("row {i}")));
        }
        expected.push(rec.get(1).unwrap_or("").to_string());
        for (k, col) in cells.iter_mut().enumerate() {
            let c = rec.get(k + 2).unwrap_or("");
            col.push(partner_cell(c).ok_or_else(|| bad(format!("cell `{c}`")))?);
        }
    }
    Ok((cells, expected))
}

impl BundledReferenceData {
    pub fn load() -> Result<Self> {
        let gain = GainMatrix::from_matrix(matrix("gain.csv", GAIN, 2)?).map_err(integrity("gain.csv"))?;
        let sources = [
            (ScoreKind::Td, "taskonomy_td.csv", TD, 0),
            (ScoreKind::Ias, "ias.csv", IAS, 0),
            (ScoreKind::Rsa, "rsa.csv", RSA, 0),
            (ScoreKind::Li, "li.csv", LI, 2),
            (ScoreKind::Gs, "gs.csv", GS, 2),
            (ScoreKind::Gt, "gt.csv", GT, 0),
        ];
        let scores = sources
            .into_iter()
            .map(|(kind, file, text, pow10)| {
                AffinityMatrix::from_matrix(kind, matrix(file, text, pow10)?).map_err(integrity(file))
            })
            .collect::<Result<Vec<_>>>()?;
        let (level3, expected_partner) = level3_table(LEVEL3)?;
        Ok(Self {
            gain,
            scores,
            level1: expected_table("expected_level1.csv", LEVEL1, "All-at-once")?,
            level2: expected_table("expected_level2.csv", LEVEL2, "Average")?,
            level3,
            expected_partner,
        })
    }

    pub fn score(&self, kind: ScoreKind) -> &AffinityMatrix {
        self.scores
            .iter()
            .find(|s| s.kind == kind)
            .expect("all six kinds bundled")
    }

    /// Levels 1 to 3 recomputed from the bundled gain and score matrices.
    pub fn recompute(&self, kendall: KendallVariant) -> Result<EvaluationReport> {
        Ok(EvaluationReport {
            tasks: self.gain.tasks().to_vec(),
            kendall,
            scores: self
                .scores
                .iter()
                .map(|s| evaluate(&self.gain, s, kendall))
                .collect::<Result<_>>()?,
        })
    }

    /// `true` if the Kendall cell of `kind` for `target` involves tied
    /// values in the score or gain column; `None` asks about the average.
    pub fn kendall_tie_affected(&self, kind: ScoreKind, target: Option<usize>) -> Result<bool> {
        let tied = |t: usize| -> Result<bool> {
            let s: Vec<f64> = self.score(kind).matrix.column(t)?.into_iter().map(|c| c.1).collect();
            let g: Vec<f64> = self.gain.matrix.column(t)?.into_iter().map(|c| c.1).collect();
            Ok(has_ties(&s) || has_ties(&g))
        };
        match target {
            Some(t) => tied(t),
            None => {
                for t in 0..TASKS.len() {
                    if tied(t)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
        }
    }

    /// Cell-by-cell comparison of a recomputed report with the published
    /// tables.
    pub fn compare(&self, report: &EvaluationReport) -> Result<Vec<CellCheck>> {
        let mut out = vec![];
        let find = |kind: ScoreKind| {
            report
                .scores
                .iter()
                .find(|s| s.kind == kind)
                .ok_or_else(|| Error::Usage(format!("report lacks {kind}")))
        };
        let row_name = |t: Option<usize>, summary: &str| {
            t.map(|t| TASKS[t].to_string()).unwrap_or_else(|| summary.to_string())
        };

        for (k, &kind) in self.level1.kinds.iter().enumerate() {
            let ev = find(kind)?;
            let rows = (0..TASKS.len())
                .map(|t| (Some(t), ev.level1.per_target[t], self.level1.per_target[k][t]))
                .chain([(None, ev.level1.all_at_once, self.level1.summary[k])]);
            for (t, got, want) in rows {
                out.push(CellCheck::numeric(1, kind, row_name(t, "All-at-once"), got, want, CORRELATION_TOL, false));
            }
        }
        for (k, &kind) in self.level2.kinds.iter().enumerate() {
            let ev = find(kind)?;
            let rows = (0..TASKS.len())
                .map(|t| (Some(t), ev.level2.per_target[t], self.level2.per_target[k][t]))
                .chain([(None, ev.level2.average, self.level2.summary[k])]);
            for (t, got, want) in rows {
                let flagged = self.kendall_tie_affected(kind, t)?;
                out.push(CellCheck::numeric(2, kind, row_name(t, "Average"), got, want, CORRELATION_TOL, flagged));
            }
        }
        for (k, kind) in ScoreKind::ALL.into_iter().enumerate() {
            let ev = find(kind)?;
            for (t, want) in self.level3[k].iter().enumerate() {
                let e = &ev.level3[t];
                // a published cell naming several partners reports their
                // mean delta; match it against the full tie set
                let (got_partners, got_delta) = if want.partners.len() > 1 {
                    let mut tied = e.tied.clone();
                    tied.sort();
                    (tied, e.mean_tied_delta * 100.0)
                } else {
                    (vec![e.selected.clone()], e.delta * 100.0)
                };
                let mut want_partners = want.partners.clone();
                want_partners.sort();
                let pass = got_partners == want_partners
                    && (got_delta - want.delta_percent).abs() <= DELTA_TOL;
                out.push(CellCheck {
                    level: 3,
                    kind,
                    row: TASKS[t].to_string(),
                    got: format!("{} ({got_delta:.2})", got_partners.join("/")),
                    expected: format!("{} ({})", want.partners.join("/"), want.delta_percent),
                    pass,
                    tie_flagged: false,
                });
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellCheck {
    pub level: u8,
    pub kind: ScoreKind,
    pub row: String,
    pub got: String,
    pub expected: String,
    pub pass: bool,
    /// Tie-affected cell: reported, not counted as a failure.
    pub tie_flagged: bool,
}

impl CellCheck {
    fn numeric(level: u8, kind: ScoreKind, row: String, got: Option<f64>, want: f64, tol: f64, tie_flagged: bool) -> Self {
        Self {
            level,
            kind,
            row,
            got: got.map(|g| format!("{g:.4}")).unwrap_or_else(|| "undefined".into()),
            expected: format!("{want}"),
            pass: got.is_some_and(|g| (g - want).abs() <= tol),
            tie_flagged,
        }
    }

    /// Counts toward the reproduction verdict.
    pub fn is_failure(&self) -> bool {
        !self.pass && !self.tie_flagged
    }
}
