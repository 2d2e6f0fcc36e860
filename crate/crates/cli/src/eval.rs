//! `canopy eval`: join a report with truth volumes and tabulate errors.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::Context;
use clap::Args;

use canopy_core::eval::{evaluate_run, read_truth_csv, EvaluationSummary};
use canopy_core::io::read_report_json;
use canopy_core::layout::LayoutParams;

use crate::run::Manifest;
use crate::{EXIT_FATAL, EXIT_OK, EXIT_PARTIAL};

#[derive(Debug, Clone, Default, Args)]
pub struct EvalArgs {
    /// Report JSON written by `run`.
    #[arg(long)]
    pub report: PathBuf,
    /// Truth CSV; a `label` column is used when present.
    #[arg(long)]
    pub truth: PathBuf,
    /// Summary JSON destination.
    #[arg(long)]
    pub out: PathBuf,
    /// Run manifest whose segmentation score is copied into the summary.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Used to label truth trees that carry no label.
    #[arg(long, default_value_t = 2.0)]
    pub row_threshold: f64,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub reference_y: f64,
}

/// Fixed-width table of per-tree volumes and errors.
pub fn render_table(summary: &EvaluationSummary) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:>10} {:>10} {:>12} {:>10} {:>12}",
        "tree", "gt", "convex", "convex err %", "alpha", "alpha err %"
    );
    for v in &summary.volumes {
        let _ = writeln!(
            out,
            "{:<8} {:>10.2} {:>10.2} {:>12.2} {:>10.2} {:>12.2}",
            v.label, v.gt, v.convex, v.convex_err_pct, v.alpha, v.alpha_err_pct
        );
    }
    let m = &summary.means;
    let _ = writeln!(
        out,
        "{:<8} {:>10} {:>10} {:>12.2} {:>10} {:>12.2}",
        "mean", "", "", m.convex_mean_pct, "", m.alpha_mean_pct
    );
    out
}

pub fn evaluate(args: &EvalArgs) -> anyhow::Result<EvaluationSummary> {
    let reports = read_report_json(&args.report)?;
    let truth = read_truth_csv(&args.truth)?;
    let layout = LayoutParams {
        row_distance_threshold: args.row_threshold,
        reference_y: args.reference_y,
    };
    let score = match &args.manifest {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let m: Manifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            m.segmentation
        }
        None => None,
    };
    let summary = evaluate_run(&reports, &truth, &layout, score)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(&args.out, serde_json::to_vec_pretty(&summary)?)
        .with_context(|| format!("writing {}", args.out.display()))?;
    Ok(summary)
}

pub fn cmd_eval(args: &EvalArgs) -> i32 {
    let summary = match evaluate(args) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_FATAL;
        }
    };
    print!("{}", render_table(&summary));
    if let Some(s) = &summary.segmentation {
        println!("segmentation success {}/{} ({:.3})", s.matched_trees, s.total_trees, s.success_rate);
    }
    let mut code = EXIT_OK;
    for label in &summary.unmatched_truth {
        eprintln!("join failure: truth tree `{label}` has no report");
        code = EXIT_PARTIAL;
    }
    for label in &summary.unmatched_reports {
        eprintln!("join failure: report `{label}` has no truth tree");
        code = EXIT_PARTIAL;
    }
    code
}
