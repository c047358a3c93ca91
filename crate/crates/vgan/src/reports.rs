//! Append-only training metric log and per-case score reports, both CSV.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use vgan_core::metrics::RegionScore;
use vgan_core::training::{LossReport, TrainConfig};

use crate::bytes::write_atomic;

pub const METRIC_COLUMNS: &str = "step,loss_G,loss_D,bce,dice,msL1";

/// One `# key=value ...` comment line summarizing the run settings.
pub fn metric_log_header(cfg: &TrainConfig) -> String {
    format!(
        "# lr={} batch_size={} adversarial_weight={} critic_steps={} seed={}",
        cfg.adam.lr, cfg.batch_size, cfg.adversarial_weight, cfg.critic_steps, cfg.seed
    )
}

pub fn metric_row(r: &LossReport) -> String {
    format!(
        "{},{},{},{},{},{}",
        r.step, r.loss_g, r.loss_d, r.bce, r.dice, r.adversarial
    )
}

/// Writes the header on creation and flushes after every row so a crashed
/// run still leaves a readable log.
pub struct MetricLog {
    out: BufWriter<File>,
}

impl MetricLog {
    pub fn create(path: &Path, cfg: &TrainConfig) -> std::io::Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{}", metric_log_header(cfg))?;
        writeln!(out, "{METRIC_COLUMNS}")?;
        out.flush()?;
        Ok(Self { out })
    }

    pub fn append(&mut self, r: &LossReport) -> std::io::Result<()> {
        writeln!(self.out, "{}", metric_row(r))?;
        self.out.flush()
    }
}

pub const SCORE_COLUMNS: &str = "case_id,region,dice,ppv,sensitivity,tp,fp,fn";

/// Per-case rows, then one `mean` row per region: ratios averaged over cases,
/// voxel counts summed.
pub fn score_csv(cases: &[(String, [RegionScore; 3])]) -> String {
    let mut out = String::from(SCORE_COLUMNS);
    out.push('\n');
    let row = |out: &mut String, id: &str, s: &RegionScore, dice: f64, ppv: f64, sens: f64| {
        out.push_str(&format!(
            "{id},{},{dice:.6},{ppv:.6},{sens:.6},{},{},{}\n",
            s.region.short_name(),
            s.tp,
            s.fp,
            s.fn_
        ));
    };
    for (id, scores) in cases {
        for s in scores {
            row(&mut out, id, s, s.dice, s.ppv, s.sensitivity);
        }
    }
    if !cases.is_empty() {
        let n = cases.len() as f64;
        for k in 0..3 {
            let mut total = cases[0].1[k];
            let (mut dice, mut ppv, mut sens) = (0.0, 0.0, 0.0);
            total.tp = 0;
            total.fp = 0;
            total.fn_ = 0;
            for (_, scores) in cases {
                let s = &scores[k];
                dice += s.dice;
                ppv += s.ppv;
                sens += s.sensitivity;
                total.tp += s.tp;
                total.fp += s.fp;
                total.fn_ += s.fn_;
            }
            row(&mut out, "mean", &total, dice / n, ppv / n, sens / n);
        }
    }
    out
}

pub fn write_scores(path: &Path, cases: &[(String, [RegionScore; 3])]) -> crate::error::Result<()> {
    write_atomic(path, score_csv(cases).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use vgan_core::data::Region;

    #[test]
    fn header_reports_default_rate() {
        assert!(metric_log_header(&TrainConfig::default()).starts_with("# lr=0.0001 "));
    }

    #[test]
    fn mean_rows_average_ratios_and_sum_counts() {
        let mk = |tp, fp, fn_| Region::ALL.map(|r| RegionScore::from_counts(r, tp, fp, fn_));
        let csv = score_csv(&[("a".into(), mk(8, 2, 4)), ("b".into(), mk(1, 0, 0))]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 6 + 3);
        assert_eq!(lines[1], "a,WT,0.727273,0.800000,0.666667,8,2,4");
        assert_eq!(lines[7], "mean,WT,0.863636,0.900000,0.833333,9,2,4");
    }
}
