//! Run-level checks: the maze exploration ordering, sparse goal reaching and
//! run reproducibility. These train real agents and take minutes to hours.

use std::fs;
use std::path::Path;

use ace_core::nn::checkpoint;

use crate::config::{RunConfig, Variant};
use crate::experiments::maze_compare;
use crate::suites::{timed, SuiteReport};
use crate::trainer::{evaluate, restore, train, Trainer};

/// Seed-mean final coverage of ACE is at least that of ACE-blind and of
/// Greedy, and ACE's seed-mean cumulative model error is at most Greedy's.
pub fn maze_trend(base: &RunConfig, seeds: &[u64], out: &Path) -> SuiteReport {
    timed("maze exploration trend", || {
        let r = maze_compare(base, &[Variant::Ace, Variant::AceBlind, Variant::Greedy], seeds, out)?;
        let (ace, blind, greedy) = (&r[0], &r[1], &r[2]);
        let cov = |v: &crate::experiments::VariantResult| v.mean_coverage();
        let ok_blind = cov(ace) >= cov(blind);
        let ok_greedy = cov(ace) >= cov(greedy);
        let ok_error = ace.mean_model_error() <= greedy.mean_model_error();
        let inversions = ace
            .final_coverage
            .iter()
            .zip(&blind.final_coverage)
            .zip(&greedy.final_coverage)
            .filter(|((a, b), g)| a < b || a < g)
            .count();
        let detail = format!(
            "{} seeds, coverage ace {:.4} blind {:.4} greedy {:.4}, cumulative model error ace {:.4} greedy {:.4}, {} single-seed inversions{}",
            seeds.len(),
            cov(ace),
            cov(blind),
            cov(greedy),
            ace.mean_model_error(),
            greedy.mean_model_error(),
            inversions,
            [(ok_blind, "ace < blind"), (ok_greedy, "ace < greedy"), (ok_error, "error ace > greedy")]
                .iter()
                .filter(|(ok, _)| !ok)
                .map(|(_, s)| format!("; {s}"))
                .collect::<String>()
        );
        Ok((ok_blind && ok_greedy && ok_error, detail))
    })
}

/// Episodes in the rolling success window of [`sparse_goal`].
pub const SUCCESS_WINDOW: usize = 50;

/// Highest rolling success rate over a run.
pub fn peak_success(flags: &[bool], window: usize) -> f64 {
    if flags.len() < window {
        return 0.0;
    }
    flags
        .windows(window)
        .map(|w| w.iter().filter(|&&s| s).count() as f64 / window as f64)
        .fold(0.0, f64::max)
}

/// ACE reaches a rolling success rate of 0.8 on at least 4/5 of the seeds,
/// while the seed-mean peak rate of icem-no-value stays below 0.5.
pub fn sparse_goal(base: &RunConfig, seeds: &[u64], out: &Path) -> SuiteReport {
    timed("sparse goal task", || {
        let mut peaks = Vec::new();
        for variant in [Variant::Ace, Variant::IcemNoValue] {
            let mut p = Vec::new();
            for &seed in seeds {
                let cfg = RunConfig {
                    variant,
                    seed,
                    ..base.clone()
                };
                let s = train(&cfg, &out.join(variant.name()).join(format!("seed_{seed}")))?;
                let flags: Vec<bool> = s.rows.iter().map(|r| r.success).collect();
                p.push(peak_success(&flags, SUCCESS_WINDOW));
            }
            peaks.push(p);
        }
        let need = (seeds.len() * 4).div_ceil(5);
        let reached = peaks[0].iter().filter(|&&p| p >= 0.8).count();
        let baseline = peaks[1].iter().sum::<f64>() / seeds.len() as f64;
        let fmt = |v: &[f64]| v.iter().map(|p| format!("{p:.2}")).collect::<Vec<_>>().join(" ");
        let detail = format!(
            "ace peak success [{}] ({reached}/{} ≥ 0.80, need {need}), icem-no-value peaks [{}] mean {baseline:.2}",
            fmt(&peaks[0]),
            seeds.len(),
            fmt(&peaks[1])
        );
        Ok((reached >= need && baseline < 0.5, detail))
    })
}

/// Two runs with one config give byte-identical metrics, and an evaluation
/// episode is unchanged by a checkpoint save and load.
pub fn reproducibility(cfg: &RunConfig, out: &Path) -> SuiteReport {
    timed("reproducibility and checkpoint round trip", || {
        let (a, b) = (out.join("a"), out.join("b"));
        train(cfg, &a)?;
        train(cfg, &b)?;
        let same = fs::read(a.join("metrics.csv"))? == fs::read(b.join("metrics.csv"))?;

        let mut t = Trainer::new(cfg.clone())?;
        while t.counters.env_steps < cfg.total_steps {
            t.run_episode()?;
        }
        let stem = out.join("round_trip");
        checkpoint::save(&stem, &t.checkpoint())?;
        let before = evaluate(cfg, t.agent.clone(), 1, 99)?;
        let (loaded_cfg, agent) = restore(&stem)?;
        let after = evaluate(&loaded_cfg, agent, 1, 99)?;
        let kept = before == after && loaded_cfg == *cfg;
        let lines = fs::read_to_string(a.join("metrics.csv"))?.lines().count() - 1;
        Ok((
            same && kept,
            format!(
                "metrics {} over {lines} episodes, evaluation episode {} after reload (return {:.4})",
                if same { "identical" } else { "differ" },
                if kept { "identical" } else { "changed" },
                before[0].ret
            ),
        ))
    })
}
