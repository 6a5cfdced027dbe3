//! Per-episode metrics rows and their CSV form.
//!
//! Wall-clock time is kept out of `metrics.csv` (it goes to `timing.csv`) so
//! that reruns with the same seed produce identical bytes.

use std::fmt::Display;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ace_core::oracle::BiasReport;
use ace_core::Result;

pub const HEADER: &str = "step,episode,return,coverage,success,updates,loss_total,loss_latent,loss_reward,loss_value,policy_objective,intrinsic_mean,intrinsic_std,intrinsic_reward,model_error,bias_mean,bias_std";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub episode: usize,
    pub ret: f64,
    pub coverage: Option<f64>,
    pub success: bool,
    pub updates: usize,
    /// Episode means over its gradient updates.
    pub loss_total: Option<f64>,
    pub loss_latent: Option<f64>,
    pub loss_reward: Option<f64>,
    pub loss_value: Option<f64>,
    pub policy_objective: Option<f64>,
    pub intrinsic_mean: Option<f64>,
    pub intrinsic_std: Option<f64>,
    pub intrinsic_reward: Option<f64>,
    pub model_error: Option<f64>,
    pub bias: Option<BiasReport>,
}

fn opt<T: Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn csv(&self) -> String {
        [
            self.step.to_string(),
            self.episode.to_string(),
            self.ret.to_string(),
            opt(self.coverage),
            u8::from(self.success).to_string(),
            self.updates.to_string(),
            opt(self.loss_total),
            opt(self.loss_latent),
            opt(self.loss_reward),
            opt(self.loss_value),
            opt(self.policy_objective),
            opt(self.intrinsic_mean),
            opt(self.intrinsic_std),
            opt(self.intrinsic_reward),
            opt(self.model_error),
            opt(self.bias.as_ref().map(|b| b.mean)),
            opt(self.bias.as_ref().map(|b| b.std)),
        ]
        .join(",")
    }
}

/// Running means of update statistics within one episode.
#[derive(Clone, Debug, Default)]
pub struct Accumulator {
    n: usize,
    sums: [f64; 7],
    policy_n: usize,
    policy_sum: f64,
}

impl Accumulator {
    pub fn add(&mut self, st: &ace_core::value::UpdateStats) {
        self.n += 1;
        let v = [st.total, st.ld, st.lr, st.l_value, st.intrinsic_mean, st.intrinsic_std, st.mean_intrinsic_reward];
        for (s, x) in self.sums.iter_mut().zip(v) {
            *s += x;
        }
        if let Some(j) = st.j_pi {
            self.policy_n += 1;
            self.policy_sum += j;
        }
    }

    pub fn fill(&self, row: &mut MetricsRow) {
        row.updates = self.n;
        if self.n == 0 {
            return;
        }
        let m: Vec<f64> = self.sums.iter().map(|s| s / self.n as f64).collect();
        row.loss_total = Some(m[0]);
        row.loss_latent = Some(m[1]);
        row.loss_reward = Some(m[2]);
        row.loss_value = Some(m[3]);
        row.intrinsic_mean = Some(m[4]);
        row.intrinsic_std = Some(m[5]);
        row.intrinsic_reward = Some(m[6]);
        if self.policy_n > 0 {
            row.policy_objective = Some(self.policy_sum / self.policy_n as f64);
        }
    }
}

/// Append-only CSV with the fixed [`HEADER`].
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{HEADER}")?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.out, "{}", row.csv())?;
        self.out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_width_matches_header() {
        let cols = HEADER.split(',').count();
        assert_eq!(MetricsRow::default().csv().split(',').count(), cols);
        let full = MetricsRow {
            coverage: Some(0.5),
            loss_total: Some(1.0),
            bias: Some(BiasReport {
                mean: 0.1,
                std: 0.2,
                normalizer: 1.0,
                samples: 3,
            }),
            ..Default::default()
        };
        let text = full.csv();
        assert_eq!(text.split(',').count(), cols);
        assert!(text.ends_with(",0.1,0.2"));
    }
}
