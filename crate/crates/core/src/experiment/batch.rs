use std::fs;
use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::output::{
    aggregate_curves, write_aggregate, write_curve, write_episodes, AggregatePoint, SCHEMA_VERSION,
};
use super::plot::{render_svg, Series};
use super::run::{run_single, CurvePoint};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub total_regret: f64,
    pub realized_k: u64,
    pub k_hat: Option<u64>,
    pub curve_file: PathBuf,
    pub episode_file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub agent: String,
    pub horizon: u64,
    pub lambda_star: Vec<f64>,
    pub seeds: Vec<SeedSummary>,
    pub aggregate_file: PathBuf,
    pub plot_file: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SeedError {
    seed: u64,
    error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub manifest: Manifest,
    pub aggregate: Vec<AggregatePoint>,
}

/// Summary, optimal gain and regret curve of one finished seed.
type SeedOutput = (SeedSummary, f64, Vec<CurvePoint>);

pub fn curve_file_name(seed: u64) -> String {
    format!("seed_{seed}.csv")
}

pub fn episode_file_name(seed: u64) -> String {
    format!("episodes_seed_{seed}.csv")
}

/// Runs every seed in parallel and writes per-seed CSVs, `aggregate.csv`,
/// `regret.svg` and `manifest.json` under the output directory. When a seed
/// fails the other seeds' files are kept and `errors.json` lists the
/// failures.
pub fn run_batch(config: &RunConfig) -> Result<BatchResult> {
    config.validate()?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir)?;

    let outcomes: Vec<(u64, Result<SeedOutput>)> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let outcome = run_single(config, seed).and_then(|log| {
                let curve_file = PathBuf::from(curve_file_name(seed));
                let episode_file = PathBuf::from(episode_file_name(seed));
                write_curve(&dir.join(&curve_file), &log.curve)?;
                write_episodes(&dir.join(&episode_file), &log)?;
                let summary = SeedSummary {
                    seed,
                    total_regret: log.total_regret(),
                    realized_k: log.realized_k,
                    k_hat: log.k_hat,
                    curve_file,
                    episode_file,
                };
                Ok((summary, log.lambda_star, log.curve))
            });
            (seed, outcome)
        })
        .collect();

    let mut done = Vec::new();
    let mut failures = Vec::new();
    for (seed, outcome) in outcomes {
        match outcome {
            Ok(result) => done.push(result),
            Err(e) => failures.push(SeedError {
                seed,
                error: e.to_string(),
            }),
        }
    }
    if !failures.is_empty() {
        let path = dir.join("errors.json");
        fs::write(&path, serde_json::to_vec_pretty(&failures)?)?;
        return Err(Error::SeedFailures {
            failed: failures.len(),
            total: config.seeds.len(),
            manifest: path.display().to_string(),
        });
    }

    let curves: Vec<&[CurvePoint]> = done.iter().map(|(_, _, c)| c.as_slice()).collect();
    let aggregate = aggregate_curves(&curves)?;
    let aggregate_file = PathBuf::from("aggregate.csv");
    write_aggregate(&dir.join(&aggregate_file), &aggregate)?;

    let label = config.agent.name().to_string();
    let plot_file = PathBuf::from("regret.svg");
    let svg = render_svg(
        &format!("{label}, {} seeds", done.len()),
        &[Series {
            label: label.clone(),
            points: aggregate.clone(),
        }],
    );
    fs::write(dir.join(&plot_file), svg)?;

    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        agent: label,
        horizon: config.horizon,
        lambda_star: done.iter().map(|(_, l, _)| *l).collect(),
        seeds: done.into_iter().map(|(s, _, _)| s).collect(),
        aggregate_file,
        plot_file,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    Ok(BatchResult {
        manifest,
        aggregate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::EnvSpec;
    use crate::experiment::config::{AgentKind, ScheduleConfig};
    use crate::experiment::output::{read_aggregate, read_curve};

    #[test]
    fn two_seeds_two_files_and_an_aggregate() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = RunConfig::new(
            EnvSpec::river_swim(6),
            AgentKind::Cpsrl,
            ScheduleConfig::Fixed { gamma: 0.9 },
            2000,
        );
        config.seeds = vec![4, 9];
        config.output_dir = dir.path().to_path_buf();
        let result = run_batch(&config).unwrap();

        let a = read_curve(&dir.path().join(curve_file_name(4))).unwrap();
        let b = read_curve(&dir.path().join(curve_file_name(9))).unwrap();
        let agg = read_aggregate(&dir.path().join("aggregate.csv")).unwrap();
        assert_eq!(agg, result.aggregate);
        for ((x, y), m) in a.iter().zip(&b).zip(&agg) {
            assert_eq!(m.mean, (x.cumulative_regret + y.cumulative_regret) / 2.0);
        }
        let csvs = std::fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| {
                let name = e.as_ref().unwrap().file_name();
                name.to_string_lossy().starts_with("seed_")
            })
            .count();
        assert_eq!(csvs, 2);
        assert!(dir.path().join("regret.svg").exists());
        assert!(dir.path().join("episodes_seed_4.csv").exists());
    }

    #[test]
    fn failing_seed_leaves_error_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = RunConfig::new(
            EnvSpec::random_dirichlet(0, 2, 1.0),
            AgentKind::Random,
            ScheduleConfig::HorizonTuned,
            10,
        );
        config.output_dir = dir.path().to_path_buf();
        let err = run_batch(&config).unwrap_err();
        assert!(matches!(
            err,
            Error::SeedFailures {
                failed: 1,
                total: 1,
                ..
            }
        ));
        assert!(dir.path().join("errors.json").exists());
    }
}
