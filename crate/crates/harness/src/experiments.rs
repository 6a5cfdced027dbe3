//! Multi-run experiments: the maze exploration comparison and the
//! one-parameter ablations. Each run writes into its own directory and shares
//! nothing with the others, so the order runs are listed in does not matter.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ace_core::{Error, Result};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::{RunConfig, Variant};
use crate::trainer::{train, TrainSummary};

#[derive(Clone, Debug, PartialEq)]
pub struct VariantResult {
    pub variant: Variant,
    pub seeds: Vec<u64>,
    pub final_coverage: Vec<f64>,
    pub cumulative_model_error: Vec<f64>,
    /// Seed-mean coverage after each episode, truncated to the shortest run.
    pub mean_curve: Vec<(usize, f64)>,
}

impl VariantResult {
    pub fn mean_coverage(&self) -> f64 {
        mean(&self.final_coverage)
    }
    pub fn mean_model_error(&self) -> f64 {
        mean(&self.cumulative_model_error)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Mean and 95% Student-t half-width. The half-width is 0 for one sample.
pub fn mean_ci(v: &[f64]) -> (f64, f64) {
    let m = mean(v);
    if v.len() < 2 {
        return (m, 0.0);
    }
    let n = v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    let t = StudentsT::new(0.0, 1.0, n - 1.0).expect("positive degrees of freedom").inverse_cdf(0.975);
    (m, t * (var / n).sqrt())
}

fn seed_dir(out: &Path, cell: &str, seed: u64) -> std::path::PathBuf {
    out.join(cell).join(format!("seed_{seed}"))
}

/// Trains every variant on every seed of the maze task.
///
/// Writes `coverage.csv` (step, then one seed-mean column per variant),
/// `compare.csv` (one row per run) and `compare.txt` under `out`.
pub fn maze_compare(base: &RunConfig, variants: &[Variant], seeds: &[u64], out: &Path) -> Result<Vec<VariantResult>> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::Invalid("maze comparison needs at least one variant and one seed".into()));
    }
    fs::create_dir_all(out)?;
    let mut results = Vec::new();
    let mut runs = String::from("variant,seed,final_coverage,cumulative_model_error,episodes,updates\n");
    for &variant in variants {
        let mut summaries: Vec<TrainSummary> = Vec::new();
        for &seed in seeds {
            let cfg = RunConfig {
                variant,
                seed,
                ..base.clone()
            };
            let s = train(&cfg, &seed_dir(out, variant.name(), seed))?;
            writeln!(
                runs,
                "{},{},{},{},{},{}",
                variant.name(),
                seed,
                s.final_coverage.unwrap_or(f64::NAN),
                s.cumulative_model_error,
                s.counters.episodes,
                s.counters.updates
            )
            .expect("writing to a String");
            summaries.push(s);
        }
        let len = summaries.iter().map(|s| s.rows.len()).min().unwrap_or(0);
        let mean_curve = (0..len)
            .map(|i| {
                let cov: Vec<f64> = summaries.iter().map(|s| s.rows[i].coverage.unwrap_or(0.0)).collect();
                (summaries[0].rows[i].step, mean(&cov))
            })
            .collect();
        results.push(VariantResult {
            variant,
            seeds: seeds.to_vec(),
            final_coverage: summaries.iter().map(|s| s.final_coverage.unwrap_or(0.0)).collect(),
            cumulative_model_error: summaries.iter().map(|s| s.cumulative_model_error).collect(),
            mean_curve,
        });
    }
    fs::write(out.join("compare.csv"), runs)?;
    fs::write(out.join("coverage.csv"), coverage_table(&results))?;
    let mut text = String::new();
    for r in &results {
        let (m, ci) = mean_ci(&r.final_coverage);
        let (e, eci) = mean_ci(&r.cumulative_model_error);
        writeln!(text, "{:<14} coverage {m:.4} ± {ci:.4}  model error {e:.5} ± {eci:.5}", r.variant.name()).expect("writing to a String");
    }
    fs::write(out.join("compare.txt"), text)?;
    Ok(results)
}

fn coverage_table(results: &[VariantResult]) -> String {
    let mut s = String::from("step");
    for r in results {
        s.push(',');
        s.push_str(r.variant.name());
    }
    s.push('\n');
    let len = results.iter().map(|r| r.mean_curve.len()).min().unwrap_or(0);
    for i in 0..len {
        s.push_str(&results[0].mean_curve[i].0.to_string());
        for r in results {
            s.push_str(&format!(",{}", r.mean_curve[i].1));
        }
        s.push('\n');
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationKind {
    Lambda,
    Intrinsic,
}

impl std::str::FromStr for AblationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(Self::Lambda),
            "intrinsic" | "intrinsic-coef" => Ok(Self::Intrinsic),
            other => Err(Error::Invalid(format!("unknown ablation kind {other:?}"))),
        }
    }
}

impl AblationKind {
    pub fn key(self) -> &'static str {
        match self {
            Self::Lambda => "lambda",
            Self::Intrinsic => "intrinsic_reward_coefficient",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub value: f64,
    /// Per seed: mean return over the last `FINAL_WINDOW` episodes.
    pub final_returns: Vec<f64>,
    pub mean: f64,
    pub ci95: f64,
}

pub const FINAL_WINDOW: usize = 10;

pub fn final_return(s: &TrainSummary) -> f64 {
    let tail = &s.rows[s.rows.len().saturating_sub(FINAL_WINDOW)..];
    tail.iter().map(|r| r.ret).sum::<f64>() / tail.len().max(1) as f64
}

/// One run per (grid value, seed); `ablation.csv` holds one row per value.
pub fn ablation(base: &RunConfig, kind: AblationKind, grid: &[f64], seeds: &[u64], out: &Path) -> Result<Vec<AblationCell>> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::Invalid("ablation needs a nonempty grid and at least one seed".into()));
    }
    fs::create_dir_all(out)?;
    let mut cells = Vec::new();
    for &value in grid {
        let mut final_returns = Vec::new();
        for &seed in seeds {
            let mut cfg = RunConfig { seed, ..base.clone() };
            cfg.set(kind.key(), &value.to_string())?;
            cfg.validate()?;
            let s = train(&cfg, &seed_dir(out, &format!("{}_{value}", kind.key()), seed))?;
            final_returns.push(final_return(&s));
        }
        let (mean, ci95) = mean_ci(&final_returns);
        cells.push(AblationCell {
            value,
            final_returns,
            mean,
            ci95,
        });
    }
    let mut csv = format!("{},seeds,mean_final_return,ci95\n", kind.key());
    for c in &cells {
        writeln!(csv, "{},{},{},{}", c.value, c.final_returns.len(), c.mean, c.ci95).expect("writing to a String");
    }
    fs::write(out.join("ablation.csv"), csv)?;
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_interval_matches_tables() {
        let (m, h) = mean_ci(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(m, 3.0);
        // t(0.975, 4) = 2.7764, s = sqrt(2.5), n = 5
        assert!((h - 2.7764 * (2.5f64 / 5.0).sqrt()).abs() < 1e-3);
        assert_eq!(mean_ci(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn kinds_parse() {
        assert_eq!("lambda".parse::<AblationKind>().unwrap(), AblationKind::Lambda);
        assert_eq!("intrinsic".parse::<AblationKind>().unwrap().key(), "intrinsic_reward_coefficient");
        assert!("gamma".parse::<AblationKind>().is_err());
    }
}
