//! Exclusion accounting shared by the analyses that drop users.

use std::collections::BTreeMap;
use std::io::Write;

/// Counts of excluded entities by reason, written alongside the main output
/// so coverage is always inspectable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoverageReport {
    counts: BTreeMap<String, u64>,
}

impl CoverageReport {
    pub fn bump(&mut self, reason: &str) {
        *self.counts.entry(reason.to_string()).or_insert(0) += 1;
    }

    pub fn add(&mut self, reason: &str, n: u64) {
        if n > 0 {
            *self.counts.entry(reason.to_string()).or_insert(0) += n;
        }
    }

    pub fn get(&self, reason: &str) -> u64 {
        self.counts.get(reason).copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn merge(&mut self, other: CoverageReport) {
        for (reason, n) in other.counts {
            *self.counts.entry(reason).or_insert(0) += n;
        }
    }

    /// Columns: `reason,count`, sorted by reason.
    pub fn write_csv(&self, out: &mut dyn Write) -> std::io::Result<()> {
        writeln!(out, "reason,count")?;
        for (reason, n) in &self.counts {
            writeln!(out, "{reason},{n}")?;
        }
        Ok(())
    }
}
