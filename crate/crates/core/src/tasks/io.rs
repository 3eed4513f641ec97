//! Directory layout for datasets:
//!
//! ```text
//! manifest.json        seed, shapes and task specs
//! inputs.csv           x0..x{d-1}
//! labels_<task>.csv    y0..y{k-1} for regression, `class` for classification
//! splits.csv           index,split   (split ∈ train|val|test)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

use super::{Labels, MultiTaskDataset, Splits, TaskKind, TaskSpec};

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    n_examples: usize,
    input_dim: usize,
    tasks: Vec<TaskSpec>,
}

/// Fails if `dir` exists and has entries; creates it otherwise.
pub fn prepare_empty_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        let mut entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        if entries.next().is_some() {
            return Err(Error::OutputExists(dir.to_path_buf()));
        }
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_matrix(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| map_csv(path, e))?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn map_csv(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| map_csv(path, e))?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
    Ok((header, rows))
}

fn parse<T: std::str::FromStr>(cell: &str, path: &Path) -> Result<T> {
    cell.trim()
        .parse()
        .map_err(|_| Error::Data(format!("{}: cannot parse `{cell}`", path.display())))
}

impl MultiTaskDataset {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.validate()?;
        prepare_empty_dir(dir)?;

        let manifest = Manifest {
            seed: self.seed,
            n_examples: self.n_examples(),
            input_dim: self.input_dim(),
            tasks: self.tasks.clone(),
        };
        let path = dir.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
            .map_err(|e| Error::io(&path, e))?;

        let d = self.input_dim();
        let header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
        let rows = (0..self.n_examples())
            .map(|i| self.inputs.row(i).iter().map(|v| v.to_string()).collect());
        write_matrix(&dir.join("inputs.csv"), &header, rows)?;

        for (spec, labels) in self.tasks.iter().zip(&self.labels) {
            let path = dir.join(format!("labels_{}.csv", spec.name));
            match labels {
                Labels::Values(t) => {
                    let header: Vec<String> = (0..t.cols()).map(|j| format!("y{j}")).collect();
                    let rows = (0..t.rows())
                        .map(|i| t.row(i).iter().map(|v| v.to_string()).collect());
                    write_matrix(&path, &header, rows)?;
                }
                Labels::Classes(c) => {
                    let rows = c.iter().map(|k| vec![k.to_string()]);
                    write_matrix(&path, &["class".to_string()], rows)?;
                }
            }
        }

        // split order is meaningful (minibatch and evaluation-batch draws), so
        // rows are listed split by split rather than by index
        let rows = [
            ("train", &self.splits.train),
            ("val", &self.splits.val),
            ("test", &self.splits.test),
        ]
        .into_iter()
        .flat_map(|(name, idx)| idx.iter().map(move |i| vec![i.to_string(), name.to_string()]));
        write_matrix(
            &dir.join("splits.csv"),
            &["index".to_string(), "split".to_string()],
            rows,
        )
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;

        let path = dir.join("inputs.csv");
        let (_, rows) = read_rows(&path)?;
        let data = rows
            .iter()
            .flatten()
            .map(|c| parse::<f64>(c, &path))
            .collect::<Result<Vec<_>>>()?;
        let inputs = Tensor::new(vec![rows.len(), manifest.input_dim], data)?;

        let mut labels = Vec::with_capacity(manifest.tasks.len());
        for spec in &manifest.tasks {
            let path = dir.join(format!("labels_{}.csv", spec.name));
            let (_, rows) = read_rows(&path)?;
            labels.push(match spec.kind {
                TaskKind::Regression => {
                    let data = rows
                        .iter()
                        .flatten()
                        .map(|c| parse::<f64>(c, &path))
                        .collect::<Result<Vec<_>>>()?;
                    Labels::Values(Tensor::new(vec![rows.len(), spec.output_dim], data)?)
                }
                TaskKind::Classification => Labels::Classes(
                    rows.iter()
                        .map(|r| parse::<usize>(&r[0], &path))
                        .collect::<Result<Vec<_>>>()?,
                ),
            });
        }

        let path = dir.join("splits.csv");
        let (_, rows) = read_rows(&path)?;
        let mut splits = Splits {
            train: vec![],
            val: vec![],
            test: vec![],
        };
        for r in &rows {
            let i: usize = parse(&r[0], &path)?;
            match r.get(1).map(|s| s.trim()) {
                Some("train") => splits.train.push(i),
                Some("val") => splits.val.push(i),
                Some("test") => splits.test.push(i),
                other => {
                    return Err(Error::Data(format!(
                        "{}: unknown split {other:?}",
                        path.display()
                    )))
                }
            }
        }

        let ds = MultiTaskDataset {
            inputs,
            tasks: manifest.tasks,
            labels,
            splits,
            seed: manifest.seed,
        };
        if ds.n_examples() != manifest.n_examples {
            return Err(Error::Validation(format!(
                "manifest lists {} examples, inputs.csv has {}",
                manifest.n_examples,
                ds.n_examples()
            )));
        }
        ds.validate()?;
        Ok(ds)
    }
}
