//! Append-only metrics CSVs with fixed headers.
//!
//! The first column of every file is the epoch the row belongs to; resuming
//! at epoch `k` drops rows with a larger epoch so the file continues at
//! `k + 1` without duplicates.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use crate::classifier::EpochReport;
use crate::error::{Error, Result};
use crate::fd::FdRecord;
use crate::gan::{EpochSummary, LossRecord};

pub const CLASSIFIER_CSV: &str = "classifier_metrics.csv";
pub const GAN_EPOCH_CSV: &str = "gan_epochs.csv";
pub const GAN_STEP_CSV: &str = "gan_steps.csv";
/// One row per epoch: the FD-versus-epoch curve.
pub const FD_CSV: &str = "fd.csv";

pub fn classifier_header() -> Vec<String> {
    ["epoch", "loss", "precision", "recall", "f1", "f2", "tau_abs", "alpha"]
        .map(String::from)
        .to_vec()
}

pub fn classifier_row(r: &EpochReport) -> Vec<String> {
    let m = &r.metrics;
    vec![
        r.epoch.to_string(),
        fmt(r.loss),
        fmt(m.precision),
        fmt(m.recall),
        fmt(m.f1),
        fmt(m.f2),
        fmt(r.rule.tau_abs),
        fmt(r.rule.alpha),
    ]
}

pub fn gan_epoch_header() -> Vec<String> {
    let mut h = vec!["epoch".to_string(), "step".to_string()];
    h.extend(LossRecord::NAMES.iter().map(|n| n.to_string()));
    h.push("fd".into());
    h
}

pub fn gan_epoch_row(s: &EpochSummary, step: usize) -> Vec<String> {
    let mut r = vec![s.epoch.to_string(), step.to_string()];
    r.extend(s.mean.values().iter().map(|v| fmt(*v)));
    r.push(fmt(s.fd.fd));
    r
}

pub fn gan_step_header() -> Vec<String> {
    let mut h = vec!["epoch".to_string(), "step".to_string()];
    h.extend(LossRecord::NAMES.iter().map(|n| n.to_string()));
    h
}

/// `epoch` is the 1-based epoch the step belongs to.
pub fn gan_step_row(r: &LossRecord, epoch: usize) -> Vec<String> {
    let mut row = vec![epoch.to_string(), r.step.to_string()];
    row.extend(r.values().iter().map(|v| fmt(*v)));
    row
}

pub fn fd_header() -> Vec<String> {
    ["epoch", "fd", "n_a", "n_b", "d", "jitter_applied"].map(String::from).to_vec()
}

pub fn fd_row(epoch: usize, r: &FdRecord) -> Vec<String> {
    vec![
        epoch.to_string(),
        fmt(r.fd),
        r.n_a.to_string(),
        r.n_b.to_string(),
        r.d.to_string(),
        r.jitter_applied.to_string(),
    ]
}

/// Shortest round-trip representation.
fn fmt(v: f64) -> String {
    format!("{v}")
}

pub struct MetricsLog {
    path: PathBuf,
    width: usize,
}

impl MetricsLog {
    /// Fresh log: any previous file is replaced by a bare header.
    pub fn create(path: &Path, header: &[String]) -> Result<Self> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(header)?;
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            width: header.len(),
        })
    }

    /// Continues a log after `epoch` completed epochs. A missing file
    /// starts fresh; a file with a different header is refused.
    pub fn resume(path: &Path, header: &[String], epoch: usize) -> Result<Self> {
        if !path.exists() {
            return Self::create(path, header);
        }
        let mut rows = Vec::new();
        {
            let mut r = csv::Reader::from_path(path)?;
            let found: Vec<String> = r.headers()?.iter().map(String::from).collect();
            if found != header {
                return Err(Error::VersionMismatch(format!(
                    "{} has header {:?}, expected {:?}",
                    path.display(),
                    found,
                    header
                )));
            }
            for rec in r.records() {
                let rec = rec?;
                let e: usize = rec
                    .get(0)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::ParseError(format!("{}: bad epoch column", path.display())))?;
                if e <= epoch {
                    rows.push(rec);
                }
            }
        }
        let log = Self::create(path, header)?;
        let mut w = log.writer()?;
        for r in &rows {
            w.write_record(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(log)
    }

    fn writer(&self) -> Result<csv::Writer<std::fs::File>> {
        let f = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        Ok(csv::WriterBuilder::new().has_headers(false).from_writer(f))
    }

    pub fn append(&self, row: &[String]) -> Result<()> {
        if row.len() != self.width {
            return Err(Error::LengthMismatch {
                left: self.width,
                right: row.len(),
            });
        }
        let mut w = self.writer()?;
        w.write_record(row)?;
        w.flush().map_err(|e| Error::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h() -> Vec<String> {
        vec!["epoch".into(), "v".into()]
    }

    fn row(e: usize) -> Vec<String> {
        vec![e.to_string(), format!("{}", e as f64 * 0.5)]
    }

    #[test]
    fn resume_drops_later_epochs() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("m.csv");
        let log = MetricsLog::create(&p, &h()).unwrap();
        for e in 1..=5 {
            log.append(&row(e)).unwrap();
        }
        // resume from the epoch-3 checkpoint
        let log = MetricsLog::resume(&p, &h(), 3).unwrap();
        for e in 4..=6 {
            log.append(&row(e)).unwrap();
        }
        let text = std::fs::read_to_string(&p).unwrap();
        let epochs: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(epochs, ["1", "2", "3", "4", "5", "6"]);
        assert!(text.starts_with("epoch,v\n"));
    }

    #[test]
    fn header_mismatch_refused() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("m.csv");
        MetricsLog::create(&p, &h()).unwrap();
        let other = vec!["epoch".to_string(), "w".to_string()];
        assert!(matches!(MetricsLog::resume(&p, &other, 1), Err(Error::VersionMismatch(_))));
    }

    #[test]
    fn row_width_checked() {
        let tmp = tempfile::tempdir().unwrap();
        let log = MetricsLog::create(&tmp.path().join("m.csv"), &h()).unwrap();
        assert!(log.append(&["1".to_string()]).is_err());
    }

    #[test]
    fn fixed_headers() {
        assert_eq!(classifier_header().join(","), "epoch,loss,precision,recall,f1,f2,tau_abs,alpha");
        assert_eq!(gan_epoch_header().len(), 16);
        assert_eq!(fd_header()[..2], ["epoch", "fd"]);
    }
}
