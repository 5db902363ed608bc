//! Tabulates metrics across run directories.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::PathBuf;

use crate::run::Report;
use crate::HarnessError;

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.3}"))
}

/// One row per run, then one row per (experiment, method) group with the
/// mean ± std of every estimate and metric across its runs. Time is that
/// of the first run in each group.
pub fn compare(runs: &[PathBuf]) -> Result<String, HarnessError> {
    if runs.is_empty() {
        return Err(HarnessError::Config("no runs given".into()));
    }
    let reports = runs.iter().map(|r| Report::read(r)).collect::<Result<Vec<_>, _>>()?;
    let mut out = String::new();
    writeln!(out, "run\texperiment\tmethod\tseed\tstatus\tposterior mean\tKL\tL1\tt (s)").unwrap();
    for (dir, r) in runs.iter().zip(&reports) {
        let means = r.posterior.as_ref().map_or_else(
            || "-".into(),
            |p| {
                r.param_names
                    .iter()
                    .zip(p.mean.iter().zip(&p.std))
                    .map(|(n, (m, s))| format!("{n}={m:.3}±{s:.3}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            },
        );
        writeln!(
            out,
            "{}\t{}\t{:?}\t{}\t{}\t{}\t{}\t{}\t{:.2}",
            dir.display(),
            r.experiment,
            r.method,
            r.seed,
            r.status,
            means,
            fmt_opt(r.metrics.kl),
            fmt_opt(r.metrics.l1_mean_error),
            r.wall_clock_s
        )
        .unwrap();
    }

    let mut groups: BTreeMap<(String, String), Vec<&Report>> = BTreeMap::new();
    for r in &reports {
        groups.entry((r.experiment.clone(), format!("{:?}", r.method))).or_default().push(r);
    }
    writeln!(out).unwrap();
    writeln!(out, "experiment\tmethod\truns\testimates\tKL\tL1\tt first (s)").unwrap();
    for ((experiment, method), rs) in &groups {
        let ok: Vec<&&Report> = rs.iter().filter(|r| r.posterior.is_some()).collect();
        let names = &rs[0].param_names;
        let estimates = (0..names.len())
            .map(|j| {
                let xs: Vec<f64> = ok.iter().map(|r| r.posterior.as_ref().unwrap().mean[j]).collect();
                if xs.is_empty() {
                    return format!("{}=-", names[j]);
                }
                let (m, s) = mean_std(&xs);
                format!("{}={m:.3}±{s:.3}", names[j])
            })
            .collect::<Vec<_>>()
            .join(" ");
        let metric = |f: &dyn Fn(&Report) -> Option<f64>| {
            let xs: Vec<f64> = rs.iter().filter_map(|r| f(r)).collect();
            if xs.is_empty() {
                "-".to_string()
            } else {
                let (m, s) = mean_std(&xs);
                format!("{m:.3}±{s:.3}")
            }
        };
        writeln!(
            out,
            "{experiment}\t{method}\t{}/{}\t{estimates}\t{}\t{}\t{:.2}",
            ok.len(),
            rs.len(),
            metric(&|r| r.metrics.kl),
            metric(&|r| r.metrics.l1_mean_error),
            rs[0].wall_clock_s
        )
        .unwrap();
    }
    Ok(out)
}
