//! Per-epoch metrics rows and their CSV form.

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "epoch,objective,lr,recall@1,recall@2,recall@5,recall@10,d_z_sup,d_z_mask,wall_seconds";

/// One training epoch. Recall fields are empty on epochs without evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    /// Mean objective value over the epoch's batches.
    pub objective: f64,
    pub lr: f64,
    /// Recall@{1,2,5,10} on the test split's fine labels.
    pub recall: Option<[f64; 4]>,
    pub d_z_sup: f64,
    pub d_z_mask: f64,
    pub wall_seconds: f64,
}

pub const METRIC_KS: [usize; 4] = [1, 2, 5, 10];

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        let recall = match self.recall {
            Some(r) => r.map(|v| v.to_string()).join(","),
            None => ",,,".to_string(),
        };
        format!(
            "{},{},{},{recall},{},{},{}",
            self.epoch, self.objective, self.lr, self.d_z_sup, self.d_z_mask, self.wall_seconds
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let bad = || Error::MalformedRecord(format!("metrics row {line:?}"));
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 10 {
            return Err(bad());
        }
        let f = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let recall = if cells[3..7].iter().all(|c| c.is_empty()) {
            None
        } else {
            Some([f(cells[3])?, f(cells[4])?, f(cells[5])?, f(cells[6])?])
        };
        Ok(Self {
            epoch: cells[0].parse().map_err(|_| bad())?,
            objective: f(cells[1])?,
            lr: f(cells[2])?,
            recall,
            d_z_sup: f(cells[7])?,
            d_z_mask: f(cells[8])?,
            wall_seconds: f(cells[9])?,
        })
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in rows {
        s.push_str(&r.to_csv_line());
        s.push('\n');
    }
    s
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::MalformedRecord("metrics header".into()));
    }
    lines.map(MetricsRow::parse_line).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            MetricsRow {
                epoch: 0,
                objective: 5.25,
                lr: 0.02,
                recall: None,
                d_z_sup: 0.1,
                d_z_mask: 1e-17,
                wall_seconds: 0.0,
            },
            MetricsRow {
                epoch: 1,
                objective: 4.0,
                lr: 0.019,
                recall: Some([0.5, 0.6, 0.7, 1.0]),
                d_z_sup: 0.3,
                d_z_mask: 0.2,
                wall_seconds: 1.5,
            },
        ];
        let text = metrics_csv(&rows);
        assert!(text.starts_with(METRICS_HEADER));
        assert_eq!(parse_metrics_csv(&text).unwrap(), rows);
    }

    #[test]
    fn rejects_bad_header() {
        assert!(parse_metrics_csv("epoch\n").is_err());
    }
}
