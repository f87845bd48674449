use std::io::{Read, Write};

use chrono::NaiveDate;
use indexmap::IndexMap;

use super::{DailyFeatureRow, FeatureError, Labels};
use crate::{Task, UserId};

const LABEL_COLUMNS: [&str; 3] = ["stress_avg", "soreness_avg", "injury_avg"];

/// Rows with a shared column layout, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub names: Vec<String>,
    pub keys: Vec<(UserId, NaiveDate)>,
    pub values: Vec<Vec<f64>>,
    pub labels: Vec<Option<Labels>>,
}

impl FeatureMatrix {
    /// Builds a matrix, checking every row carries the same feature order.
    pub fn from_rows(rows: &[DailyFeatureRow]) -> Result<Self, FeatureError> {
        let names: Vec<String> = rows
            .first()
            .map(|r| r.features.keys().cloned().collect())
            .unwrap_or_default();
        let mut m = FeatureMatrix {
            names,
            keys: Vec::with_capacity(rows.len()),
            values: Vec::with_capacity(rows.len()),
            labels: Vec::with_capacity(rows.len()),
        };
        for row in rows {
            if row.features.len() != m.names.len()
                || !row.features.keys().zip(&m.names).all(|(a, b)| a == b)
            {
                return Err(FeatureError::LayoutMismatch(format!(
                    "row {} {} has a different feature order",
                    row.user_id, row.date
                )));
            }
            m.keys.push((row.user_id.clone(), row.date));
            m.values.push(row.features.values().copied().collect());
            m.labels.push(row.labels);
        }
        Ok(m)
    }

    pub fn n_rows(&self) -> usize {
        self.values.len()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[j]).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Row indices that carry a label, with that label for `task`.
    pub fn labeled(&self, task: Task) -> Vec<(usize, f64)> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|l| (i, l.get(task))))
            .collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            names: self.names.clone(),
            keys: idx.iter().map(|&i| self.keys[i].clone()).collect(),
            values: idx.iter().map(|&i| self.values[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Columns `names`, in that order.
    pub fn select_columns(&self, names: &[String]) -> Result<FeatureMatrix, FeatureError> {
        let idx = names
            .iter()
            .map(|n| self.index_of(n).ok_or_else(|| FeatureError::UnknownFeature(n.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FeatureMatrix {
            names: names.to_vec(),
            keys: self.keys.clone(),
            values: self.values.iter().map(|r| idx.iter().map(|&j| r[j]).collect()).collect(),
            labels: self.labels.clone(),
        })
    }

    pub fn to_rows(&self) -> Vec<DailyFeatureRow> {
        self.keys
            .iter()
            .zip(&self.values)
            .zip(&self.labels)
            .map(|(((user, date), vals), labels)| DailyFeatureRow {
                user_id: user.clone(),
                date: *date,
                features: self.names.iter().cloned().zip(vals.iter().copied()).collect::<IndexMap<_, _>>(),
                labels: *labels,
            })
            .collect()
    }

    /// CSV with header `user_id,date,<features...>,stress_avg,soreness_avg,injury_avg`.
    /// Missing labels are empty cells.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), FeatureError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["user_id".to_string(), "date".to_string()];
        header.extend(self.names.iter().cloned());
        header.extend(LABEL_COLUMNS.iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        for ((key, vals), labels) in self.keys.iter().zip(&self.values).zip(&self.labels) {
            let mut rec = vec![key.0.to_string(), key.1.to_string()];
            rec.extend(vals.iter().map(|v| v.to_string()));
            match labels {
                Some(l) => rec.extend([l.stress_avg, l.soreness_avg, l.injury_avg].map(|v| v.to_string())),
                None => rec.extend(["", "", ""].map(String::from)),
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, FeatureError> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header.len() < 5
            || header[0] != "user_id"
            || header[1] != "date"
            || header[header.len() - 3..] != LABEL_COLUMNS
        {
            return Err(FeatureError::Malformed("unexpected header".into()));
        }
        let names = header[2..header.len() - 3].to_vec();
        let mut m = FeatureMatrix { names, keys: vec![], values: vec![], labels: vec![] };
        let parse = |s: &str| -> Result<f64, FeatureError> {
            s.parse::<f64>().map_err(|e| FeatureError::Malformed(format!("`{s}`: {e}")))
        };
        for rec in r.records() {
            let rec = rec?;
            let date: NaiveDate =
                rec[1].parse().map_err(|e| FeatureError::Malformed(format!("date: {e}")))?;
            m.keys.push((UserId::new(&rec[0]), date));
            let n = rec.len();
            let vals = (2..n - 3).map(|i| parse(&rec[i])).collect::<Result<Vec<_>, _>>()?;
            m.values.push(vals);
            let labels = if rec[n - 3].is_empty() {
                None
            } else {
                Some(Labels {
                    stress_avg: parse(&rec[n - 3])?,
                    soreness_avg: parse(&rec[n - 2])?,
                    injury_avg: parse(&rec[n - 1])?,
                })
            };
            m.labels.push(labels);
        }
        Ok(m)
    }
}
