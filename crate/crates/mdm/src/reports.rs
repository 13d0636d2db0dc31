//! CSV outputs: the training metrics log and the evaluation reports.

use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::Context;
use mdm_core::chem_eval::{key_hex, ConditionalReport, MetricsReport};
use mdm_core::training::StepRecord;

/// Appends one row per optimizer step.
pub struct MetricsLog {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl MetricsLog {
    pub fn create(path: &Path) -> anyhow::Result<Self> {
        let mut writer = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        writer.write_record(["step", "t_mean", "feature_loss", "coord_loss", "vn_loss", "total"])?;
        Ok(Self { path: path.to_path_buf(), writer })
    }

    pub fn record(&mut self, r: &StepRecord) -> anyhow::Result<()> {
        let l = &r.loss;
        self.writer
            .write_record([
                r.step.to_string(),
                r.t_mean.to_string(),
                l.score_feature_loss.to_string(),
                l.score_coord_loss.to_string(),
                l.vn_loss.to_string(),
                l.total.to_string(),
            ])
            .with_context(|| format!("writing {}", self.path.display()))
    }

    pub fn flush(&mut self) -> anyhow::Result<()> {
        self.writer.flush().with_context(|| format!("writing {}", self.path.display()))
    }
}

const EVAL_HEADER: [&str; 9] =
    ["index", "valid", "stable", "key", "validity", "uniqueness", "novelty", "stability", "samples"];

/// One row per sample (`index, valid, stable, key`), then a `summary` row
/// carrying the percentages and the sample count.
pub fn write_eval_report(path: &Path, report: &MetricsReport) -> anyhow::Result<()> {
    let run = || -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(EVAL_HEADER)?;
        for (i, v) in report.samples.iter().enumerate() {
            let row = [i.to_string(), v.valid.to_string(), v.stable.to_string(), key_hex(&v.key)];
            w.write_record(row.iter().map(String::as_str).chain([""; 5]))?;
        }
        let summary = [
            format!("{:.4}", report.validity),
            format!("{:.4}", report.uniqueness),
            format!("{:.4}", report.novelty),
            format!("{:.4}", report.stability),
            report.samples.len().to_string(),
        ];
        w.write_record(["summary", "", "", ""].into_iter().chain(summary.iter().map(String::as_str)))?;
        w.flush()?;
        Ok(())
    };
    run().with_context(|| format!("writing {}", path.display()))
}

/// Summary row of an evaluation report, as written by [`write_eval_report`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSummary {
    pub validity: f64,
    pub uniqueness: f64,
    pub novelty: f64,
    pub stability: f64,
    pub samples: usize,
}

pub fn read_eval_summary(path: &Path) -> anyhow::Result<EvalSummary> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    for row in r.records() {
        let row = row?;
        if &row[0] == "summary" {
            let f = |i: usize| row[i].parse::<f64>().with_context(|| format!("bad summary field {}", EVAL_HEADER[i]));
            return Ok(EvalSummary {
                validity: f(4)?,
                uniqueness: f(5)?,
                novelty: f(6)?,
                stability: f(7)?,
                samples: row[8].parse()?,
            });
        }
    }
    anyhow::bail!("{}: no summary row", path.display())
}

pub fn write_conditional_report(path: &Path, report: &ConditionalReport, samples: usize) -> anyhow::Result<()> {
    let run = || -> anyhow::Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["model_mae", "naive_mae", "natoms_mae", "lower_bound_mae", "samples"])?;
        w.write_record([
            report.model_mae.to_string(),
            report.naive_mae.to_string(),
            report.natoms_mae.to_string(),
            report.lower_bound_mae.to_string(),
            samples.to_string(),
        ])?;
        w.flush()?;
        Ok(())
    };
    run().with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use mdm_core::chem_eval::SampleVerdict;
    use mdm_core::training::LossBreakdown;

    #[test]
    fn eval_report_summary_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let v = |valid, key: u8| SampleVerdict { valid, stable: valid, key: vec![key] };
        let report = MetricsReport {
            validity: 50.0,
            uniqueness: 50.0,
            novelty: 25.0,
            stability: 50.0,
            samples: vec![v(true, 1), v(false, 2)],
        };
        write_eval_report(&path, &report).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().nth(1).unwrap().starts_with("0,true,true,01,"));
        let s = read_eval_summary(&path).unwrap();
        assert_eq!((s.validity, s.novelty, s.samples), (50.0, 25.0, 2));
    }

    #[test]
    fn metrics_log_has_expected_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut log = MetricsLog::create(&path).unwrap();
        let loss = LossBreakdown { score_feature_loss: 1.0, score_coord_loss: 2.0, vn_loss: 0.5, total: 3.5, gamma_weight: 1.0 };
        log.record(&StepRecord { step: 1, t_mean: 10.5, loss }).unwrap();
        log.flush().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "step,t_mean,feature_loss,coord_loss,vn_loss,total\n1,10.5,1,2,0.5,3.5\n");
    }
}
