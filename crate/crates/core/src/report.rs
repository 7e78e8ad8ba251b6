//! Table, figure and manifest emission. Every file is written with a
//! fixed, platform-independent formatting so identical reports produce
//! byte-identical artifacts.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::nn::{Activation, OptimizerKind};
use crate::pipeline::{ClusterArtifact, ExperimentReport, ReportRow};
use crate::tuning::TuningRun;

/// All emitted files with their SHA-256 content hashes, sorted by path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<(String, String)>,
}

/// Serialize a value as pretty JSON; used for stage artifacts.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        write!(hex, "{b:02x}").expect("writing to String cannot fail");
    }
    hex
}

struct Emitter<'a> {
    dir: &'a Path,
    entries: Vec<(String, String)>,
}

impl<'a> Emitter<'a> {
    fn write(&mut self, rel: &str, content: &str) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, content)?;
        self.entries.push((rel.to_string(), sha256_hex(content.as_bytes())));
        Ok(())
    }
}

/// Write tables (CSV), figures (SVG), the serialized report and a manifest
/// of content hashes into `dir`. Re-emitting the same report yields
/// identical bytes and therefore identical hashes.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<Manifest> {
    let mut em = Emitter {
        dir,
        entries: Vec::new(),
    };

    em.write("tables/results.csv", &results_csv(report))?;
    if let Some(importance) = &report.importance {
        em.write(
            "tables/importance.csv",
            &importance_csv(&report.column_names, &importance.scores),
        )?;
        em.write(
            "figures/importance.svg",
            &importance_svg(
                &report.column_names,
                &importance.scores,
                report.ground_truth.as_deref(),
            ),
        )?;
    }
    if !report.clusters.is_empty() {
        em.write("tables/clusters.csv", &clusters_csv(report))?;
        for artifact in &report.clusters {
            let importance = report
                .importance
                .as_ref()
                .expect("cluster artifacts imply importance scores");
            em.write(
                &format!("figures/clusters_k{}.svg", artifact.k),
                &clusters_svg(artifact, &importance.scores),
            )?;
        }
    }
    if !report.tuning.is_empty() {
        em.write("tables/tuning.csv", &tuning_csv(&report.tuning))?;
    }
    em.write("figures/mse.svg", &mse_svg(&report.rows))?;
    {
        let mut text = serde_json::to_string_pretty(report)?;
        text.push('\n');
        em.write("report.json", &text)?;
    }

    em.entries.sort();
    let mut manifest_csv = String::from("file,sha256\n");
    for (file, hash) in &em.entries {
        writeln!(manifest_csv, "{file},{hash}").expect("writing to String cannot fail");
    }
    let manifest_path = dir.join("manifest.csv");
    std::fs::write(&manifest_path, &manifest_csv)?;
    Ok(Manifest {
        entries: em.entries,
    })
}

fn optimizer_name(o: OptimizerKind) -> String {
    format!("{o:?}")
}

fn activation_name(a: Activation) -> String {
    format!("{a:?}")
}

/// Table 3/4 layout: one row per subset with per-fold MSEs.
fn results_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("label,provenance,n_features,mean_mse,sd_mse");
    for f in 0..report.n_folds {
        write!(out, ",fold_{f}").unwrap();
    }
    out.push('\n');
    for row in &report.rows {
        write!(
            out,
            "{},{},{},{},{}",
            row.label,
            row.subset.provenance.join(";"),
            row.subset.len(),
            row.cv.mean_mse,
            row.cv.sd_mse
        )
        .unwrap();
        for f in 0..report.n_folds {
            match row.cv.fold_mses.get(f) {
                Some(m) => write!(out, ",{m}").unwrap(),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

fn importance_csv(names: &[String], scores: &[f64]) -> String {
    let mut out = String::from("feature,name,score\n");
    for (i, (name, score)) in names.iter().zip(scores).enumerate() {
        writeln!(out, "{i},{name},{score}").unwrap();
    }
    out
}

fn clusters_csv(report: &ExperimentReport) -> String {
    let scores = &report
        .importance
        .as_ref()
        .expect("cluster table requires importance scores")
        .scores;
    let mut out = String::from("k,feature,score,cluster,centroid,eliminated\n");
    for artifact in &report.clusters {
        let r = &artifact.result;
        for (i, (&a, &s)) in r.assignments.iter().zip(scores).enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                artifact.k,
                i,
                s,
                a,
                r.centroids[a],
                a == r.lowest_cluster
            )
            .unwrap();
        }
    }
    out
}

fn tuning_csv(tuning: &[(String, TuningRun)]) -> String {
    let mut out = String::from(
        "run,iteration,phase,objective,incumbent,l1_exp,epochs_exp,batch_exp,\
         dropout,lr_mult,patience_exp,optimizer,activation\n",
    );
    for (label, run) in tuning {
        let trace = run.incumbent_trace();
        for (i, obs) in run.observations.iter().enumerate() {
            let phase = if i < run.initial_design_size {
                "design"
            } else {
                "infill"
            };
            let p = &obs.point;
            writeln!(
                out,
                "{label},{i},{phase},{},{},{},{},{},{},{},{},{},{}",
                obs.objective,
                trace[i],
                p.l1_exp,
                p.epochs_exp,
                p.batch_exp,
                p.dropout_prob,
                p.lr_mult,
                p.patience_exp,
                optimizer_name(p.optimizer),
                activation_name(p.act_fn)
            )
            .unwrap();
        }
    }
    out
}

// ---- figures ------------------------------------------------------------

const SVG_GREY: &str = "#bbbbbb";
const SVG_BLACK: &str = "#222222";
const CLUSTER_PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

fn svg_open(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {width:.0} {height:.0}\" \
         font-family=\"sans-serif\" font-size=\"10\">\n"
    )
}

/// Attribution bar chart. Bars are colored by the sign of the generating
/// coefficient when the ground truth is known (positive, negative, zero),
/// and the rescaled |coefficient| is overlaid as a dot per feature.
fn importance_svg(names: &[String], scores: &[f64], truth: Option<&[f64]>) -> String {
    let n = scores.len();
    let bar_w = 8.0;
    let gap = 2.0;
    let plot_h = 220.0;
    let margin = 40.0;
    let width = margin * 2.0 + n as f64 * (bar_w + gap);
    let height = plot_h + 70.0;
    let max_score = scores.iter().copied().fold(f64::MIN, f64::max).max(1e-12);

    let mut svg = svg_open(width, height);
    writeln!(
        svg,
        "  <text x=\"{margin:.1}\" y=\"14\">global importance (max {max_score:.4})</text>"
    )
    .unwrap();
    for (i, &s) in scores.iter().enumerate() {
        let h = (s / max_score).max(0.0) * plot_h;
        let x = margin + i as f64 * (bar_w + gap);
        let y = 30.0 + plot_h - h;
        let fill = match truth.map(|t| t[i]) {
            Some(c) if c > 0.0 => "#2ca02c",
            Some(c) if c < 0.0 => "#d62728",
            Some(_) => SVG_GREY,
            None => "#1f77b4",
        };
        writeln!(
            svg,
            "  <rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{bar_w:.1}\" height=\"{h:.1}\" fill=\"{fill}\"/>"
        )
        .unwrap();
        if i % 10 == 0 {
            writeln!(
                svg,
                "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"8\">{}</text>",
                x,
                30.0 + plot_h + 12.0,
                names[i]
            )
            .unwrap();
        }
    }
    if let Some(truth) = truth {
        let max_coef = truth.iter().map(|c| c.abs()).fold(f64::MIN, f64::max).max(1e-12);
        for (i, c) in truth.iter().enumerate() {
            let h = (c.abs() / max_coef) * plot_h;
            let x = margin + i as f64 * (bar_w + gap) + bar_w / 2.0;
            let y = 30.0 + plot_h - h;
            writeln!(
                svg,
                "  <circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"1.5\" fill=\"{SVG_BLACK}\"/>"
            )
            .unwrap();
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Score-vs-feature scatter colored by cluster; the eliminated (lowest
/// centroid) cluster is grey and a dashed line marks its upper edge.
fn clusters_svg(artifact: &ClusterArtifact, scores: &[f64]) -> String {
    let n = scores.len();
    let step = 10.0;
    let plot_h = 220.0;
    let margin = 40.0;
    let width = margin * 2.0 + n as f64 * step;
    let height = plot_h + 70.0;
    let max_score = scores.iter().copied().fold(f64::MIN, f64::max).max(1e-12);
    let r = &artifact.result;

    let mut svg = svg_open(width, height);
    writeln!(
        svg,
        "  <text x=\"{margin:.1}\" y=\"14\">k = {} clustering (lowest cluster eliminated)</text>",
        artifact.k
    )
    .unwrap();
    // elimination threshold: highest score inside the eliminated cluster
    let threshold = r
        .assignments
        .iter()
        .zip(scores)
        .filter(|(&a, _)| a == r.lowest_cluster)
        .map(|(_, &s)| s)
        .fold(f64::MIN, f64::max);
    if threshold > f64::MIN {
        let y = 30.0 + plot_h - (threshold / max_score) * plot_h;
        writeln!(
            svg,
            "  <line x1=\"{margin:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" \
             stroke=\"{SVG_BLACK}\" stroke-dasharray=\"4 3\"/>",
            width - margin
        )
        .unwrap();
    }
    for (i, (&a, &s)) in r.assignments.iter().zip(scores).enumerate() {
        let x = margin + i as f64 * step + step / 2.0;
        let y = 30.0 + plot_h - (s / max_score) * plot_h;
        let fill = if a == r.lowest_cluster {
            SVG_GREY
        } else {
            CLUSTER_PALETTE[a % CLUSTER_PALETTE.len()]
        };
        writeln!(
            svg,
            "  <circle cx=\"{x:.1}\" cy=\"{y:.1}\" r=\"3\" fill=\"{fill}\"/>"
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

/// MSE per subset: one grey dot per fold, a black mean dot and a vertical
/// mean +/- SD whisker, one column per report row.
fn mse_svg(rows: &[ReportRow]) -> String {
    let slot = 90.0;
    let plot_h = 220.0;
    let margin = 50.0;
    let width = margin * 2.0 + rows.len() as f64 * slot;
    let height = plot_h + 80.0;
    let max_val = rows
        .iter()
        .flat_map(|r| r.cv.fold_mses.iter().copied().chain([r.cv.mean_mse + r.cv.sd_mse]))
        .filter(|v| v.is_finite())
        .fold(f64::MIN, f64::max)
        .max(1e-12);
    let y_of = |v: f64| 30.0 + plot_h - (v.max(0.0) / max_val) * plot_h;

    let mut svg = svg_open(width, height);
    writeln!(
        svg,
        "  <text x=\"{margin:.1}\" y=\"14\">cross-validation MSE per subset (max {max_val:.4})</text>"
    )
    .unwrap();
    for (i, row) in rows.iter().enumerate() {
        let x = margin + i as f64 * slot + slot / 2.0;
        for &m in &row.cv.fold_mses {
            if m.is_finite() {
                writeln!(
                    svg,
                    "  <circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{SVG_GREY}\"/>",
                    x - 12.0,
                    y_of(m)
                )
                .unwrap();
            }
        }
        if row.cv.mean_mse.is_finite() {
            let lo = y_of(row.cv.mean_mse - row.cv.sd_mse);
            let hi = y_of(row.cv.mean_mse + row.cv.sd_mse);
            writeln!(
                svg,
                "  <line x1=\"{x:.1}\" y1=\"{hi:.1}\" x2=\"{x:.1}\" y2=\"{lo:.1}\" stroke=\"{SVG_BLACK}\"/>"
            )
            .unwrap();
            writeln!(
                svg,
                "  <circle cx=\"{x:.1}\" cy=\"{:.1}\" r=\"4\" fill=\"{SVG_BLACK}\"/>",
                y_of(row.cv.mean_mse)
            )
            .unwrap();
        }
        writeln!(
            svg,
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"9\">{} ({})</text>",
            x - slot / 2.0 + 4.0,
            30.0 + plot_h + 16.0,
            row.label,
            row.subset.len()
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}
