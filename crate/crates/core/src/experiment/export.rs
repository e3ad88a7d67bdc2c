//! Flat CSV tables for the plotting scripts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;

use super::defense_suite::{EDGE_HIST_FILE, NODE_HIST_FILE};
use super::runner::{read_summary, RESULTS_FILE};

pub const SUMMARY_CSV: &str = "summary.csv";
pub const IMPACT_CSV: &str = "impact.csv";
pub const THEORY_CURVE_FILE: &str = "theory_curve.csv";

pub const SUMMARY_HEADER: &str =
    "dataset,mechanism,epsilon,eta1,eta2,K,model,task,scope,phase,n,mean,ci_low,ci_high";
pub const IMPACT_HEADER: &str =
    "dataset,mechanism,epsilon,eta1,eta2,K,model,task,scope,clean_mean,attacked_mean,impact_ratio";

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

/// Writes `summary.csv` and `impact.csv` from `summary.json` and copies the
/// results, homophily and theory CSVs that exist. Returns the written paths.
pub fn export_figures_data(results_dir: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let summary = read_summary(results_dir)?;
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let mut s = format!("{SUMMARY_HEADER}\n");
    for c in &summary.stats {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            c.dataset,
            c.mechanism,
            opt(c.epsilon),
            c.eta1,
            c.eta2,
            c.k,
            c.model,
            c.task,
            c.scope,
            c.phase,
            c.n,
            c.mean,
            c.ci_low,
            c.ci_high
        )
        .unwrap();
    }
    let p = out_dir.join(SUMMARY_CSV);
    fs::write(&p, s)?;
    written.push(p);

    let mut s = format!("{IMPACT_HEADER}\n");
    for i in &summary.impact {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            i.dataset,
            i.mechanism,
            opt(i.epsilon),
            i.eta1,
            i.eta2,
            i.k,
            i.model,
            i.task,
            i.scope,
            i.clean_mean,
            i.attacked_mean,
            opt(i.impact_ratio)
        )
        .unwrap();
    }
    let p = out_dir.join(IMPACT_CSV);
    fs::write(&p, s)?;
    written.push(p);

    for name in [RESULTS_FILE, NODE_HIST_FILE, EDGE_HIST_FILE, THEORY_CURVE_FILE] {
        let src = results_dir.join(name);
        if src.exists() && results_dir != out_dir {
            let dst = out_dir.join(name);
            fs::copy(&src, &dst)?;
            written.push(dst);
        }
    }
    Ok(written)
}
