//! Library side of the `mtl-affinity` subcommands.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{EvaluationReport, GainMatrix};
use crate::experiment::{run_experiment, ExperimentConfig, SeedResult};
use crate::grouping::{optimize_grouping, CandidateFamily, GroupingSolution};
use crate::reference::{BundledReferenceData, CellCheck};
use crate::stats::KendallVariant;
use crate::tasks::{generate_latent_factor_suite, MultiTaskDataset, SuiteConfig};

/// Generates a suite and writes it to `out`, which must be empty or absent.
pub fn cmd_generate(config: &SuiteConfig, out: &Path) -> Result<MultiTaskDataset> {
    let ds = generate_latent_factor_suite(config)?;
    ds.save(out)?;
    Ok(ds)
}

pub fn cmd_run(config: &ExperimentConfig) -> Result<Vec<SeedResult>> {
    run_experiment(config)
}

#[derive(Debug, Clone, Serialize)]
pub struct Reproduction {
    pub report: EvaluationReport,
    pub checks: Vec<CellCheck>,
}

impl Reproduction {
    pub fn failures(&self) -> impl Iterator<Item = &CellCheck> {
        self.checks.iter().filter(|c| c.is_failure())
    }

    pub fn passed(&self) -> bool {
        self.failures().next().is_none()
    }

    /// One line per cell.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            let status = match (c.pass, c.tie_flagged) {
                (true, _) => "ok",
                (false, true) => "known tie discrepancy",
                (false, false) => "MISMATCH",
            };
            let _ = writeln!(
                s,
                "level{} {:<3} {:<12} got {:<22} expected {:<22} {status}",
                c.level,
                c.kind.name(),
                c.row,
                c.got,
                c.expected
            );
        }
        let failures = self.failures().count();
        let flagged = self.checks.iter().filter(|c| !c.pass && c.tie_flagged).count();
        let _ = writeln!(
            s,
            "{} cells, {failures} mismatches, {flagged} flagged tie discrepancies",
            self.checks.len()
        );
        s
    }

    fn checks_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(["level", "score", "row", "got", "expected", "pass", "tie_flagged"])?;
        for c in &self.checks {
            w.write_record([
                c.level.to_string(),
                c.kind.to_string(),
                c.row.clone(),
                c.got.clone(),
                c.expected.clone(),
                c.pass.to_string(),
                c.tie_flagged.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(format!("csv writer: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
    }
}

/// Recomputes the three evaluation tables from the bundled gains and
/// affinities and compares every cell with the bundled expectations.
/// With `out`, also writes the recomputed tables and `checks.csv`.
pub fn cmd_reproduce_tables(kendall: KendallVariant, out: Option<&Path>) -> Result<Reproduction> {
    let data = BundledReferenceData::load()?;
    let report = data.recompute(kendall)?;
    let checks = data.compare(&report)?;
    let rep = Reproduction { report, checks };
    if let Some(dir) = out {
        crate::tasks::prepare_empty_dir(dir)?;
        rep.report.write_dir(dir)?;
        let path = dir.join("checks.csv");
        std::fs::write(&path, rep.checks_csv()?).map_err(|e| Error::io(&path, e))?;
    }
    Ok(rep)
}

/// Loads a gain CSV (percent) and searches for the best grouping.
/// `budget` and `stl_cost` share a unit.
pub fn cmd_group(gain_csv: &Path, budget: f64, family: CandidateFamily) -> Result<GroupingSolution> {
    let gain = GainMatrix::load_csv(gain_csv)?;
    optimize_grouping(&gain, budget, family)
}
