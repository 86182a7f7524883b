//! Append-only per-epoch CSV log.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::Result;

pub const HEADER: &str = "epoch,train_loss,train_acc,test_acc,seconds";

/// One finished epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: Option<f64>,
    pub val_acc: Option<f64>,
    pub seconds: f64,
}

impl EpochReport {
    /// The CSV row; `test_acc` is empty when no test split was given.
    pub fn csv_row(&self) -> String {
        let test = self.test_acc.map(|a| format!("{a:.6}")).unwrap_or_default();
        format!(
            "{},{:.6},{:.6},{},{:.3}",
            self.epoch, self.train_loss, self.train_acc, test, self.seconds
        )
    }
}

#[derive(Debug, Clone)]
pub struct MetricsLog {
    path: PathBuf,
}

impl MetricsLog {
    /// Opens `path` for appending, writing the header if the file is new
    /// or empty.
    pub fn open(path: &Path) -> Result<Self> {
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        if f.metadata()?.len() == 0 {
            writeln!(f, "{HEADER}")?;
        }
        Ok(MetricsLog { path: path.to_path_buf() })
    }

    pub fn append(&self, report: &EpochReport) -> Result<()> {
        let mut f = OpenOptions::new().append(true).open(&self.path)?;
        writeln!(f, "{}", report.csv_row())?;
        Ok(())
    }
}
