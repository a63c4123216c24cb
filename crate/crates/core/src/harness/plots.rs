//! Plot-ready data derived from a run's metrics.

use std::path::{Path, PathBuf};

use super::metrics::read_metrics;
use super::HarnessError;

#[derive(Clone, Debug, PartialEq)]
pub struct PlotFiles {
    pub utilization: PathBuf,
    pub loss: PathBuf,
    pub reward: PathBuf,
    pub rows: usize,
}

/// Median of each consecutive window of `w` values; the last window may be
/// short. Panics if `w == 0`.
pub fn window_medians(values: &[f64], w: usize) -> Vec<f64> {
    assert!(w > 0, "window must be positive");
    values
        .chunks(w)
        .map(|chunk| {
            let mut c = chunk.to_vec();
            c.sort_by(f64::total_cmp);
            let n = c.len();
            if n % 2 == 1 {
                c[n / 2]
            } else {
                0.5 * (c[n / 2 - 1] + c[n / 2])
            }
        })
        .collect()
}

fn write_rows(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<(), HarnessError> {
    let err = |e: csv::Error| HarnessError::Metrics { path: path.display().to_string(), message: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Writes `utilization.csv`, `loss.csv` and `reward.csv` next to the run's
/// metrics, one row per recorded step. With `window`, also writes
/// `loss_medians.csv` holding windowed medians of the recorded losses.
pub fn emit_plots(run: &Path, window: Option<usize>) -> Result<PlotFiles, HarnessError> {
    let metrics_path = run.join("metrics.csv");
    let records = read_metrics(&metrics_path)?;
    if records.is_empty() {
        return Err(HarnessError::Metrics { path: metrics_path.display().to_string(), message: "no records".into() });
    }
    let slots = records[0].utilization.len();
    let files = PlotFiles {
        utilization: run.join("utilization.csv"),
        loss: run.join("loss.csv"),
        reward: run.join("reward.csv"),
        rows: records.len(),
    };

    let mut header = vec!["step".to_string()];
    header.extend((0..slots).map(|i| format!("util_{i}")));
    write_rows(
        &files.utilization,
        &header,
        records.iter().map(|r| {
            let mut row = vec![r.step.to_string()];
            row.extend(r.utilization.iter().map(|u| cell(*u)));
            row
        }),
    )?;
    write_rows(
        &files.loss,
        &["step".into(), "loss".into()],
        records.iter().map(|r| vec![r.step.to_string(), cell(r.loss)]),
    )?;
    write_rows(
        &files.reward,
        &["step".into(), "reward".into(), "discounted_return".into()],
        records.iter().map(|r| vec![r.step.to_string(), cell(r.reward), r.discounted_return.to_string()]),
    )?;

    if let Some(w) = window {
        if w == 0 {
            return Err(HarnessError::Config("window must be positive".into()));
        }
        let losses: Vec<f64> = records.iter().filter_map(|r| r.loss).collect();
        let medians = window_medians(&losses, w);
        write_rows(
            &run.join("loss_medians.csv"),
            &["window".into(), "median_loss".into()],
            medians.iter().enumerate().map(|(i, m)| vec![i.to_string(), m.to_string()]),
        )?;
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians_by_window() {
        assert_eq!(window_medians(&[3.0, 1.0, 2.0, 10.0, 20.0], 3), vec![2.0, 15.0]);
        assert_eq!(window_medians(&[], 100), Vec::<f64>::new());
        let v: Vec<f64> = (0..250).map(f64::from).collect();
        assert_eq!(window_medians(&v, 100).len(), 3);
    }

    #[test]
    fn empty_metrics_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = crate::harness::metrics::metrics_header(2).join(",");
        std::fs::write(dir.path().join("metrics.csv"), format!("{m}\n")).unwrap();
        assert!(emit_plots(dir.path(), None).is_err());
        assert!(emit_plots(&dir.path().join("nope"), None).is_err());
    }
}
