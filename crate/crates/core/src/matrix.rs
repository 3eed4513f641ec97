//! Task × task tables with rows = partner task, columns = target task and an
//! undefined diagonal.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMatrix {
    pub tasks: Vec<String>,
    /// `values[partner][target]`; `None` on the diagonal.
    pub values: Vec<Vec<Option<f64>>>,
}

impl TaskMatrix {
    /// Empty matrix over `tasks` (every cell missing).
    pub fn empty(tasks: Vec<String>) -> Result<Self> {
        let n = tasks.len();
        for (i, t) in tasks.iter().enumerate() {
            if tasks[..i].contains(t) {
                return Err(Error::Validation(format!("task `{t}` listed twice")));
            }
        }
        Ok(Self {
            tasks,
            values: vec![vec![None; n]; n],
        })
    }

    pub fn n(&self) -> usize {
        self.tasks.len()
    }

    pub fn index(&self, task: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t == task)
            .ok_or_else(|| Error::UnknownTask(task.to_string()))
    }

    pub fn get(&self, partner: &str, target: &str) -> Result<Option<f64>> {
        Ok(self.values[self.index(partner)?][self.index(target)?])
    }

    pub fn set(&mut self, partner: &str, target: &str, value: f64) -> Result<()> {
        let (i, j) = (self.index(partner)?, self.index(target)?);
        if i == j {
            return Err(Error::Usage(format!("diagonal cell ({partner}, {target}) is undefined")));
        }
        self.values[i][j] = Some(value);
        Ok(())
    }

    /// Off-diagonal entries of column `target` as `(partner index, value)`,
    /// in task order.
    pub fn column(&self, target: usize) -> Result<Vec<(usize, f64)>> {
        (0..self.n())
            .filter(|&i| i != target)
            .map(|i| {
                self.values[i][target].map(|v| (i, v)).ok_or_else(|| Error::Incomplete {
                    partner: self.tasks[i].clone(),
                    target: self.tasks[target].clone(),
                })
            })
            .collect()
    }

    /// Fails with the first missing off-diagonal cell, or any set diagonal.
    pub fn check_complete(&self) -> Result<()> {
        for i in 0..self.n() {
            for j in 0..self.n() {
                match (i == j, self.values[i][j]) {
                    (true, Some(_)) => {
                        return Err(Error::Validation(format!(
                            "diagonal cell of `{}` must be empty",
                            self.tasks[i]
                        )))
                    }
                    (false, None) => {
                        return Err(Error::Incomplete {
                            partner: self.tasks[i].clone(),
                            target: self.tasks[j].clone(),
                        })
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n()).all(|i| (0..i).all(|j| self.values[i][j] == self.values[j][i]))
    }

    /// Same task set in the same order.
    pub fn check_aligned(&self, other: &TaskMatrix) -> Result<()> {
        if self.tasks != other.tasks {
            return Err(Error::Dimension(format!(
                "task sets differ: {:?} vs {:?}",
                self.tasks, other.tasks
            )));
        }
        Ok(())
    }

    /// CSV with first cell `with`, a header of target names and one row per
    /// partner. Values are written multiplied by `10^pow10` without any
    /// rounding of the decimal digits, so reading with the same `pow10`
    /// recovers the exact values.
    pub fn to_csv(&self, pow10: i32) -> Result<String> {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(std::iter::once("with").chain(self.tasks.iter().map(String::as_str)))?;
        for (i, row) in self.values.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .map(|v| v.map(|x| shifted_decimal(x, pow10)).unwrap_or_default())
                .collect();
            w.write_record(std::iter::once(self.tasks[i].clone()).chain(cells))?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Data(format!("csv writer: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
    }

    pub fn from_csv(reader: impl Read, pow10: i32) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.get(0).map(str::trim) != Some("with") {
            return Err(Error::Data("first header cell must be `with`".into()));
        }
        let tasks: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
        let mut m = Self::empty(tasks)?;
        let mut seen = 0;
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let name = rec.get(0).unwrap_or("").trim();
            if m.tasks.get(i).map(String::as_str) != Some(name) {
                return Err(Error::Data(format!(
                    "row {i} is `{name}`, expected the header order {:?}",
                    m.tasks
                )));
            }
            for (j, cell) in rec.iter().skip(1).enumerate() {
                let cell = cell.trim();
                if cell.is_empty() || cell == "-" {
                    continue;
                }
                let v: f64 = format!("{cell}e{}", -pow10)
                    .parse()
                    .map_err(|_| Error::Data(format!("cell ({name}, {}) = `{cell}`", m.tasks[j])))?;
                if i == j {
                    // a 0 on the diagonal is accepted as "undefined"
                    if v != 0.0 {
                        return Err(Error::Data(format!("diagonal cell of `{name}` is {cell}")));
                    }
                    continue;
                }
                m.values[i][j] = Some(v);
            }
            seen += 1;
        }
        if seen != m.n() {
            return Err(Error::Data(format!("{seen} rows for {} tasks", m.n())));
        }
        Ok(m)
    }

    pub fn load_csv(path: impl AsRef<Path>, pow10: i32) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(file, pow10)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, pow10: i32) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv(pow10)?).map_err(|e| Error::io(path, e))
    }
}

/// Decimal string of `x · 10^pow10`, built by moving the decimal point in
/// the shortest round-trip representation of `x`.
pub fn shifted_decimal(x: f64, pow10: i32) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:e}", x.abs());
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    // number of digits before the decimal point
    let point = 1 + exp + pow10;
    let len = digits.len() as i32;
    let body = if point <= 0 {
        format!("0.{}{digits}", "0".repeat((-point) as usize))
    } else if point >= len {
        format!("{digits}{}", "0".repeat((point - len) as usize))
    } else {
        let (int, frac) = digits.split_at(point as usize);
        format!("{int}.{frac}")
    };
    if x < 0.0 {
        format!("-{body}")
    } else {
        body
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shifted_decimal_cases() {
        assert_eq!(shifted_decimal(0.123456, 2), "12.3456");
        assert_eq!(shifted_decimal(-0.5, 2), "-50");
        assert_eq!(shifted_decimal(0.0001, 2), "0.01");
        assert_eq!(shifted_decimal(2.5, 0), "2.5");
        assert_eq!(shifted_decimal(1234.0, -1), "123.4");
        assert_eq!(shifted_decimal(0.0, 2), "0");
    }

    #[test]
    fn csv_layout() {
        let mut m = TaskMatrix::empty(vec!["a".into(), "b".into()]).unwrap();
        m.set("a", "b", 0.25).unwrap();
        m.set("b", "a", -0.1).unwrap();
        let s = m.to_csv(2).unwrap();
        assert_eq!(s, "with,a,b\na,,25\nb,-10,\n");
        assert_eq!(TaskMatrix::from_csv(s.as_bytes(), 2).unwrap(), m);
    }

    #[test]
    fn missing_cell_is_named() {
        let mut m = TaskMatrix::empty(vec!["a".into(), "b".into()]).unwrap();
        m.set("a", "b", 1.0).unwrap();
        match m.check_complete() {
            Err(Error::Incomplete { partner, target }) => {
                assert_eq!((partner.as_str(), target.as_str()), ("b", "a"))
            }
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn csv_round_trip_exact(
            vals in proptest::collection::vec(-1e6f64..1e6, 6),
            pow10 in -3i32..4,
        ) {
            let mut m = TaskMatrix::empty(vec!["x".into(), "y".into(), "z".into()]).unwrap();
            let mut k = 0;
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        m.values[i][j] = Some(vals[k]);
                        k += 1;
                    }
                }
            }
            let back = TaskMatrix::from_csv(m.to_csv(pow10).unwrap().as_bytes(), pow10).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
