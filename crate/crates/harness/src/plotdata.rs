//! Per-figure CSVs derived from a finished run directory.

use std::fs;
use std::path::{Path, PathBuf};

use abcgan_core::metrics::{posterior_report, read_samples_csv};

use crate::run::{Report, POSTERIOR_FILE, TRACE_FILE};
use crate::HarnessError;

/// Writes `plot_trace.csv` (minibatch-mean θ per iteration),
/// `plot_losses.csv`, `plot_l1.csv` when the run tracked it, and one
/// `plot_hist_<param>.csv` per parameter. Returns the written paths.
pub fn emit_plotdata(run_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let report = Report::read(run_dir)?;
    let posterior_path = run_dir.join(POSTERIOR_FILE);
    if !posterior_path.exists() {
        return Err(HarnessError::Io(format!("{} is missing", posterior_path.display())));
    }
    let mut written = Vec::new();
    let mut write = |name: String, body: String| -> Result<(), HarnessError> {
        let path = run_dir.join(name);
        fs::write(&path, body).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        written.push(path);
        Ok(())
    };

    let trace_path = run_dir.join(TRACE_FILE);
    if trace_path.exists() {
        let text = fs::read_to_string(&trace_path).map_err(|e| HarnessError::Io(format!("{}: {e}", trace_path.display())))?;
        let d = report.param_names.len();
        let mut theta = String::new();
        let mut losses = String::new();
        for line in text.lines() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d + 4 {
                return Err(HarnessError::Io(format!("{}: malformed row {line:?}", trace_path.display())));
            }
            theta.push_str(&fields[..=d].join(","));
            theta.push('\n');
            losses.push_str(fields[0]);
            losses.push(',');
            losses.push_str(&fields[d + 1..].join(","));
            losses.push('\n');
        }
        write("plot_trace.csv".into(), theta)?;
        write("plot_losses.csv".into(), losses)?;
    }

    if let Some(l1) = &report.metrics.l1_trajectory {
        let mut body = String::from("iteration,l1_mean_error\n");
        for (i, v) in l1.iter().enumerate() {
            body.push_str(&format!("{i},{v}\n"));
        }
        write("plot_l1.csv".into(), body)?;
    }

    let (_, samples) = read_samples_csv(&posterior_path).map_err(|e| HarnessError::Io(e.to_string()))?;
    let bounds: Vec<(f64, f64)> = report.config.prior.iter().map(|b| (b[0], b[1])).collect();
    let hist = posterior_report(&samples, &bounds, report.config.posterior.bins)
        .map_err(|e| HarnessError::Numeric(e.to_string()))?;
    for (name, h) in report.param_names.iter().zip(&hist.histograms) {
        let edges = h.edges();
        let mut body = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in h.counts.iter().enumerate() {
            body.push_str(&format!("{},{},{c}\n", edges[i], edges[i + 1]));
        }
        write(format!("plot_hist_{name}.csv"), body)?;
    }
    Ok(written)
}
