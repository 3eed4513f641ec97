use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

const TASKONOMY: &str = include_str!("../../data/taskonomy_td.csv");

/// Negated tree distances between tasks: symmetric, zero diagonal, all
/// off-diagonal values `<= 0` (higher means closer).
#[derive(Debug, Clone, PartialEq)]
pub struct TaxonomyDistances {
    tasks: Vec<String>,
    values: Vec<Vec<f64>>,
}

impl TaxonomyDistances {
    pub fn new(tasks: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        let n = tasks.len();
        if values.len() != n || values.iter().any(|r| r.len() != n) {
            return Err(Error::Validation(format!(
                "taxonomy matrix is not {n}x{n}"
            )));
        }
        for i in 0..n {
            if values[i][i] != 0.0 {
                return Err(Error::Validation(format!(
                    "taxonomy diagonal for `{}` is {}, expected 0",
                    tasks[i], values[i][i]
                )));
            }
            for j in 0..n {
                if values[i][j] != values[j][i] {
                    return Err(Error::Validation(format!(
                        "taxonomy is asymmetric at ({}, {})",
                        tasks[i], tasks[j]
                    )));
                }
                if values[i][j] > 0.0 {
                    return Err(Error::Validation(format!(
                        "taxonomy value ({}, {}) = {} must be <= 0 (negated distance)",
                        tasks[i], tasks[j], values[i][j]
                    )));
                }
            }
        }
        Ok(Self { tasks, values })
    }

    /// Reads the CSV layout: header `with,<task>,...`, then one row per task.
    /// Diagonal cells may be blank, `-` or `0`.
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let tasks: Vec<String> = rdr
            .headers()?
            .iter()
            .skip(1)
            .map(|s| s.trim().to_string())
            .collect();
        let mut values = Vec::with_capacity(tasks.len());
        for (i, record) in rdr.records().enumerate() {
            let record = record?;
            let name = record.get(0).unwrap_or("").trim();
            if tasks.get(i).map(String::as_str) != Some(name) {
                return Err(Error::Validation(format!(
                    "row {i} is `{name}`, expected the header order {tasks:?}"
                )));
            }
            let row = record
                .iter()
                .skip(1)
                .enumerate()
                .map(|(j, cell)| {
                    let cell = cell.trim();
                    if j == i && (cell.is_empty() || cell == "-") {
                        return Ok(0.0);
                    }
                    cell.parse::<f64>().map_err(|_| {
                        Error::Validation(format!("cell ({name}, {}) = `{cell}`", tasks[j]))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            values.push(row);
        }
        Self::new(tasks, values)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    /// The bundled five-task Taskonomy tree distances.
    pub fn bundled_taskonomy() -> Result<Self> {
        Self::from_reader(TASKONOMY.as_bytes()).map_err(|e| Error::Integrity {
            file: "taskonomy_td.csv".into(),
            reason: e.to_string(),
        })
    }

    pub fn tasks(&self) -> &[String] {
        &self.tasks
    }

    pub fn get(&self, a: &str, b: &str) -> Result<f64> {
        let idx = |t: &str| {
            self.tasks
                .iter()
                .position(|x| x == t)
                .ok_or_else(|| Error::UnknownTask(t.to_string()))
        };
        Ok(self.values[idx(a)?][idx(b)?])
    }
}
