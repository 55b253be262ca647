use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::engine::SimulationStats;

use super::experiments::{DispersionTable, GainTable};
use super::HarnessError;

struct CsvOut {
    path: PathBuf,
    writer: csv::Writer<File>,
}

impl CsvOut {
    fn create(path: &Path) -> Result<Self, HarnessError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|source| HarnessError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        let writer = csv::Writer::from_path(path).map_err(|source| HarnessError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(CsvOut { path: path.to_path_buf(), writer })
    }

    fn row<I, T>(&mut self, fields: I) -> Result<(), HarnessError>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(|source| HarnessError::Csv {
            path: self.path.clone(),
            source,
        })
    }

    fn finish(mut self) -> Result<(), HarnessError> {
        self.writer.flush().map_err(|source| HarnessError::Io {
            path: self.path.clone(),
            source,
        })
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

/// Writes `gain.csv` (variant,N,seed,gain), `gain_flows.csv` with one row
/// per flow and `gain_summary.csv` with the per-N aggregate into `dir`.
/// Returns the paths written.
pub fn write_gain_table(table: &GainTable, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let paths = vec![dir.join("gain.csv"), dir.join("gain_flows.csv"), dir.join("gain_summary.csv")];

    let mut out = CsvOut::create(&paths[0])?;
    out.row(["variant", "N", "seed", "gain"])?;
    for r in &table.rows {
        out.row([r.variant.name().to_string(), num(r.n), r.seed.to_string(), num(r.gain)])?;
    }
    out.finish()?;

    let mut out = CsvOut::create(&paths[1])?;
    out.row(["variant", "N", "seed", "flow", "throughput_bps"])?;
    for r in &table.rows {
        for (flow, t) in r.throughputs.iter().enumerate() {
            out.row([
                r.variant.name().to_string(),
                num(r.n),
                r.seed.to_string(),
                flow.to_string(),
                num(t * 8.0),
            ])?;
        }
    }
    out.finish()?;

    let mut out = CsvOut::create(&paths[2])?;
    out.row(["variant", "N", "seeds", "mean_gain", "median_gain", "std_gain"])?;
    for s in &table.summary {
        out.row([
            s.variant.name().to_string(),
            num(s.n),
            s.seeds.to_string(),
            num(s.mean_gain),
            num(s.median_gain),
            num(s.std_gain),
        ])?;
    }
    out.finish()?;
    Ok(paths)
}

/// Writes `fairness.csv` (N,seed,std_over_mean), `fairness_flows.csv` and
/// `fairness_summary.csv` into `dir`.
pub fn write_dispersion_table(table: &DispersionTable, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let paths = vec![
        dir.join("fairness.csv"),
        dir.join("fairness_flows.csv"),
        dir.join("fairness_summary.csv"),
    ];

    let mut out = CsvOut::create(&paths[0])?;
    out.row(["N", "seed", "std_over_mean"])?;
    for r in &table.rows {
        out.row([num(r.n), r.seed.to_string(), num(r.std_over_mean)])?;
    }
    out.finish()?;

    let mut out = CsvOut::create(&paths[1])?;
    out.row(["N", "seed", "flow", "rtt_s", "throughput_bps", "normalized"])?;
    for r in &table.rows {
        for (flow, (t, rtt)) in r.throughputs.iter().zip(&r.rtts).enumerate() {
            out.row([
                num(r.n),
                r.seed.to_string(),
                flow.to_string(),
                num(*rtt),
                num(t * 8.0),
                num(t * rtt),
            ])?;
        }
    }
    out.finish()?;

    let mut out = CsvOut::create(&paths[2])?;
    out.row(["N", "seeds", "mean_std_over_mean", "std_std_over_mean"])?;
    for s in &table.summary {
        out.row([num(s.n), s.seeds.to_string(), num(s.mean_std_over_mean), num(s.std_std_over_mean)])?;
    }
    out.finish()?;
    Ok(paths)
}

/// Per-flow counters of one run. `rtts` gives each flow's base RTT.
pub fn write_flow_stats<W: Write>(stats: &SimulationStats, rtts: &[f64], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "flow",
        "rtt_s",
        "throughput_bps",
        "sent_packets",
        "delivered_packets",
        "dropped_packets",
        "goodput_bytes",
        "measured_bytes",
        "retransmissions",
        "fast_retransmits",
        "timeouts",
        "completion_s",
    ])?;
    for (i, f) in stats.flows.iter().enumerate() {
        w.write_record([
            i.to_string(),
            rtts.get(i).map(|r| num(*r)).unwrap_or_default(),
            num(stats.measured_throughput(i) * 8.0),
            f.sent_packets.to_string(),
            f.delivered_packets.to_string(),
            f.dropped_packets.to_string(),
            f.goodput_bytes.to_string(),
            f.measured_bytes.to_string(),
            f.retransmissions.to_string(),
            f.fast_retransmits.to_string(),
            f.timeouts.to_string(),
            f.completion_time.map(|t| num(t.as_secs_f64())).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::experiments::{DispersionRow, DispersionSummary, GainRow, GainSummary};
    use crate::tcp::Variant;

    #[test]
    fn gain_schema() {
        let table = GainTable {
            rows: vec![GainRow { variant: Variant::Reno, n: 2.0, seed: 3, gain: 1.5, throughputs: vec![3.0, 2.0] }],
            summary: vec![GainSummary {
                variant: Variant::Reno,
                n: 2.0,
                seeds: 1,
                mean_gain: 1.5,
                median_gain: 1.5,
                std_gain: 0.0,
            }],
        };
        let dir = tempfile::tempdir().unwrap();
        let paths = write_gain_table(&table, dir.path()).unwrap();
        let text = std::fs::read_to_string(&paths[0]).unwrap();
        assert_eq!(text, "variant,N,seed,gain\nreno,2,3,1.5\n");
        let flows = std::fs::read_to_string(&paths[1]).unwrap();
        assert_eq!(flows.lines().count(), 3);
    }

    #[test]
    fn dispersion_schema() {
        let table = DispersionTable {
            variant: None,
            rows: vec![DispersionRow { n: 1.0, seed: 7, std_over_mean: 0.25, throughputs: vec![1.0], rtts: vec![0.1] }],
            summary: vec![DispersionSummary { n: 1.0, seeds: 1, mean_std_over_mean: 0.25, std_std_over_mean: 0.0 }],
        };
        let dir = tempfile::tempdir().unwrap();
        let paths = write_dispersion_table(&table, &dir.path().join("nested")).unwrap();
        assert_eq!(std::fs::read_to_string(&paths[0]).unwrap(), "N,seed,std_over_mean\n1,7,0.25\n");
    }

    #[test]
    fn unwritable_path_reports_it() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        std::fs::write(&blocker, "x").unwrap();
        let err = write_gain_table(&GainTable::default(), &blocker.join("sub")).unwrap_err();
        assert!(err.to_string().contains("file"), "{err}");
    }
}
