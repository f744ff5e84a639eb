use std::path::Path;

use serde::{Deserialize, Serialize};

use super::run::{CurvePoint, EpisodeRecord, RunLog};
use crate::error::{Error, Result};

/// Bumped whenever a column is added, removed or renamed.
pub const SCHEMA_VERSION: u32 = 1;

pub const CURVE_COLUMNS: [&str; 4] = ["t", "cumulative_regret", "k", "gamma"];
pub const AGGREGATE_COLUMNS: [&str; 4] = ["t", "mean", "stderr", "n"];
pub const EPISODE_COLUMNS: [&str; 5] = ["k", "t_k", "len", "delta_k", "delta_tilde_k"];

/// One row of `aggregate.csv`: mean cumulative regret over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregatePoint {
    pub t: u64,
    pub mean: f64,
    /// Standard error of the mean; zero for a single seed.
    pub stderr: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EpisodeRow {
    k: u64,
    t_k: u64,
    len: u64,
    delta_k: Option<f64>,
    delta_tilde_k: Option<f64>,
}

impl From<&EpisodeRecord> for EpisodeRow {
    fn from(e: &EpisodeRecord) -> Self {
        Self {
            k: e.k,
            t_k: e.t_k,
            len: e.len,
            delta_k: e.delta_k,
            delta_tilde_k: e.delta_tilde_k,
        }
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    write_rows(path, curve)
}

pub fn read_curve(path: &Path) -> Result<Vec<CurvePoint>> {
    read_rows(path)
}

pub fn write_episodes(path: &Path, log: &RunLog) -> Result<()> {
    write_rows(path, log.episodes.iter().map(EpisodeRow::from))
}

pub fn write_aggregate(path: &Path, points: &[AggregatePoint]) -> Result<()> {
    write_rows(path, points)
}

pub fn read_aggregate(path: &Path) -> Result<Vec<AggregatePoint>> {
    read_rows(path)
}

/// Mean and standard error of cumulative regret at every logged time the
/// curves share.
pub fn aggregate_curves(curves: &[&[CurvePoint]]) -> Result<Vec<AggregatePoint>> {
    let Some(first) = curves.first() else {
        return Err(Error::EmptyVector);
    };
    for curve in curves {
        if curve.len() != first.len() || curve.iter().zip(first.iter()).any(|(a, b)| a.t != b.t) {
            return Err(Error::InvalidParameter(
                "curves are logged at different times".into(),
            ));
        }
    }
    let n = curves.len();
    Ok((0..first.len())
        .map(|i| {
            let values: Vec<f64> = curves.iter().map(|c| c[i].cumulative_regret).collect();
            let mean = values.iter().sum::<f64>() / n as f64;
            let stderr = if n > 1 {
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            } else {
                0.0
            };
            AggregatePoint {
                t: first[i].t,
                mean,
                stderr,
                n,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(t: u64, r: f64) -> CurvePoint {
        CurvePoint {
            t,
            cumulative_regret: r,
            k: 1,
            gamma: Some(0.9),
        }
    }

    #[test]
    fn curve_csv_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let curve = vec![
            point(1, 0.1 + 0.2),
            point(2, -1.0 / 3.0),
            CurvePoint {
                gamma: None,
                ..point(3, 1e-300)
            },
        ];
        write_curve(&path, &curve).unwrap();
        assert_eq!(read_curve(&path).unwrap(), curve);
    }

    #[test]
    fn aggregate_mean_and_stderr() {
        let a = [point(10, 1.0), point(20, 2.0)];
        let b = [point(10, 3.0), point(20, 2.0)];
        let agg = aggregate_curves(&[&a, &b]).unwrap();
        assert_eq!(agg[0].mean, 2.0);
        assert!((agg[0].stderr - 1.0).abs() < 1e-12);
        assert_eq!(agg[1].stderr, 0.0);
        assert_eq!(agg[1].n, 2);
        assert!(aggregate_curves(&[&a, &b[..1]]).is_err());
    }
}
