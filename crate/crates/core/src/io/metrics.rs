//! Append-only metrics CSV with a fixed schema shared by all subcommands.

use super::Result;
use crate::dae::format_nmse;
use std::io::Write;
use std::path::Path;

pub const HEADER: &str = "run_id,kind,scenario,gamma,s,k,seed,nmse_db_per_scenario,bs_uplink_params,d2d_params,memory_bytes,epochs,wall_seconds";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub kind: String,
    pub scenario: String,
    pub gamma: f64,
    pub synthetic_count: u64,
    pub k_ues: u64,
    pub seed: u64,
    /// NMSE (dB) per scenario seen so far, oldest first.
    pub nmse_db_per_scenario: Vec<f64>,
    pub bs_uplink_params: u64,
    pub d2d_params: u64,
    pub memory_bytes: u64,
    pub epochs: u64,
    pub wall_seconds: f64,
}

impl MetricsRow {
    pub fn to_csv_line(&self) -> String {
        let nmse = self
            .nmse_db_per_scenario
            .iter()
            .map(|v| format_nmse(*v))
            .collect::<Vec<_>>()
            .join(";");
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.run_id,
            self.kind,
            self.scenario,
            self.gamma,
            self.synthetic_count,
            self.k_ues,
            self.seed,
            nmse,
            self.bs_uplink_params,
            self.d2d_params,
            self.memory_bytes,
            self.epochs,
            self.wall_seconds
        )
    }
}

/// Append rows, writing the header first when the file is new. Existing
/// content is never rewritten.
pub fn append_rows(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let new_file = !path.exists();
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    if new_file {
        writeln!(f, "{HEADER}")?;
    }
    for r in rows {
        writeln!(f, "{}", r.to_csv_line())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row() -> MetricsRow {
        MetricsRow {
            run_id: "r1".into(),
            kind: "gossip".into(),
            scenario: "sparse".into(),
            gamma: 0.25,
            synthetic_count: 2000,
            k_ues: 4,
            seed: 7,
            nmse_db_per_scenario: vec![-7.25, f64::NEG_INFINITY],
            bs_uplink_params: 0,
            d2d_params: 123,
            memory_bytes: 456,
            epochs: 100,
            wall_seconds: 1.5,
        }
    }

    #[test]
    fn appending_preserves_schema_and_earlier_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        append_rows(&path, &[row()]).unwrap();
        append_rows(&path, &[row()]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], HEADER);
        assert_eq!(lines[1], lines[2]);
        assert!(lines[1].contains("-7.250000;perfect"));
    }
}
