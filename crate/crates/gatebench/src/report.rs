//! Report rendering: the per-depth failure table, critical-depth table,
//! gate-population contrast, collapse-curve data and SVG, and the bundle
//! writer that ties them to run provenance.
//!
//! Tables are CSV with a JSON mirror. Suppressed cells (n < 5) render as
//! "--"; low-population cells (n < 15) carry a dagger. All numeric
//! formatting is fixed-precision so rendered bytes are stable across
//! platforms and reruns.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gate::Mode;
use crate::prompt::VariantId;
use crate::stats::{Censoring, D50Estimate, DepthStats, Scores};

/// Marker appended to cells whose population is below the caution threshold.
pub const CAUTION_MARKER: &str = "\u{2020}"; // †
/// Rendering of suppressed or unavailable cells.
pub const SUPPRESSED_CELL: &str = "--";

// ---------------------------------------------------------------------------
// Main table
// ---------------------------------------------------------------------------

fn pct(rate: f64) -> String {
    format!("{:.1}", rate * 100.0)
}

fn depth_cell(stats: &DepthStats) -> String {
    if stats.suppressed {
        return SUPPRESSED_CELL.to_string();
    }
    let marker = if stats.caution { CAUTION_MARKER } else { "" };
    format!("{} ({}){marker}", pct(stats.rate), stats.n_gate_pass)
}

fn ensure_same_manifest(scores: &[Scores]) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::EmptyInput("no scored runs to render".into()));
    }
    let first = &scores[0].manifest_hash;
    for s in scores.iter().skip(1) {
        if &s.manifest_hash != first {
            return Err(Error::ManifestMismatch {
                a: first.clone(),
                b: s.manifest_hash.clone(),
            });
        }
    }
    Ok(())
}

/// All depth bins any of the runs measured, in order.
fn all_bins(scores: &[Scores]) -> Vec<u32> {
    let mut bins: Vec<u32> = scores
        .iter()
        .flat_map(|s| s.depth_stats.keys().copied())
        .collect();
    bins.sort_unstable();
    bins.dedup();
    bins
}

/// Residual-failure-by-depth table: one row per run with atomic stability
/// and "rate (n)" cells per depth bin.
pub fn render_main_table(scores: &[Scores]) -> Result<String> {
    ensure_same_manifest(scores)?;
    let bins = all_bins(scores);
    let mut out = String::from("model_id,stability_pct");
    for bin in &bins {
        out.push_str(&format!(",d{bin}"));
    }
    out.push('\n');
    for s in scores {
        out.push_str(&s.model_id);
        out.push(',');
        match &s.stability {
            Some(stab) => out.push_str(&pct(stab.per_probe_rate)),
            None => out.push_str(SUPPRESSED_CELL),
        }
        for bin in &bins {
            out.push(',');
            match s.depth_stats.get(bin) {
                Some(stats) => out.push_str(&depth_cell(stats)),
                None => out.push_str(SUPPRESSED_CELL),
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// Structured mirror of one main-table row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MainTableRow {
    pub model_id: String,
    pub run_id: String,
    pub stability_pct: Option<f64>,
    pub cells: BTreeMap<String, MainTableCell>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MainTableCell {
    pub rate: f64,
    pub n: u64,
    pub suppressed: bool,
    pub caution: bool,
}

fn main_table_rows(scores: &[Scores]) -> Vec<MainTableRow> {
    scores
        .iter()
        .map(|s| MainTableRow {
            model_id: s.model_id.clone(),
            run_id: s.run_id.clone(),
            stability_pct: s.stability.as_ref().map(|st| st.per_probe_rate * 100.0),
            cells: s
                .depth_stats
                .iter()
                .map(|(bin, stats)| {
                    (
                        format!("d{bin}"),
                        MainTableCell {
                            rate: stats.rate,
                            n: stats.n_gate_pass,
                            suppressed: stats.suppressed,
                            caution: stats.caution,
                        },
                    )
                })
                .collect(),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Critical-depth table
// ---------------------------------------------------------------------------

fn d50_cell(d50: &Option<D50Estimate>) -> String {
    let Some(est) = d50 else {
        return SUPPRESSED_CELL.to_string();
    };
    match est.censored {
        Some(Censoring::BelowMin) => format!("<{}", est.min_bin),
        Some(Censoring::AboveMax) => format!(">{}", est.max_bin),
        None => match (est.point, est.band) {
            (Some(point), Some((low, high))) => {
                format!("{point:.1} [{low:.1}; {high:.1}]")
            }
            (Some(point), None) => format!("{point:.1}"),
            _ => SUPPRESSED_CELL.to_string(),
        },
    }
}

/// Critical-depth table: aggregate and per-family d50 per run.
pub fn render_critical_depth_table(scores: &[Scores]) -> Result<String> {
    ensure_same_manifest(scores)?;
    let mut out = String::from("model_id,scope,d50\n");
    for s in scores {
        out.push_str(&format!("{},aggregate,{}\n", s.model_id, d50_cell(&s.d50)));
        for (family, block) in &s.per_family {
            out.push_str(&format!("{},{family},{}\n", s.model_id, d50_cell(&block.d50)));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Gate-population table
// ---------------------------------------------------------------------------

/// Single- vs double-gate population contrast per run.
pub fn render_gate_population_table(scores: &[Scores]) -> Result<String> {
    ensure_same_manifest(scores)?;
    let mut out = String::from(
        "model_id,single_gate_n,double_gate_n,removed_fraction,\
         single_gate_failure_pct,double_gate_failure_pct,inflation_pp\n",
    );
    for s in scores {
        match &s.gate_population {
            Some(p) => out.push_str(&format!(
                "{},{},{},{:.3},{},{},{:.1}\n",
                s.model_id,
                p.single_gate_n,
                p.double_gate_n,
                p.removed_fraction,
                pct(p.single_gate_failure_rate),
                pct(p.double_gate_failure_rate),
                p.inflation_pp,
            )),
            None => out.push_str(&format!(
                "{},{c},{c},{c},{c},{c},{c}\n",
                s.model_id,
                c = SUPPRESSED_CELL
            )),
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Collapse curve
// ---------------------------------------------------------------------------

/// One point of the failure-versus-depth curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub depth_bin: u32,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: u64,
}

/// Reportable points of a run's collapse curve, shallowest first.
pub fn collapse_curve_points(scores: &Scores) -> Result<Vec<CurvePoint>> {
    let points: Vec<CurvePoint> = scores
        .depth_stats
        .values()
        .filter(|s| !s.suppressed)
        .map(|s| CurvePoint {
            depth_bin: s.depth_bin,
            rate: s.rate,
            ci_low: s.ci_low,
            ci_high: s.ci_high,
            n: s.n_gate_pass,
        })
        .collect();
    if points.len() < 2 {
        return Err(Error::EmptyInput(format!(
            "collapse curve needs at least 2 reportable bins, run {} has {}",
            scores.run_id,
            points.len()
        )));
    }
    Ok(points)
}

pub fn render_collapse_curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("depth_bin,rate,ci_low,ci_high,n\n");
    for p in points {
        out.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{}\n",
            p.depth_bin, p.rate, p.ci_low, p.ci_high, p.n
        ));
    }
    out
}

const SVG_WIDTH: f64 = 640.0;
const SVG_HEIGHT: f64 = 400.0;
const SVG_MARGIN: f64 = 56.0;

/// A minimal line-plus-band SVG of the collapse curve.
pub fn render_collapse_curve_svg(points: &[CurvePoint], title: &str) -> Result<String> {
    if points.len() < 2 {
        return Err(Error::EmptyInput(
            "collapse curve SVG needs at least 2 points".into(),
        ));
    }
    let min_bin = points.first().expect("nonempty").depth_bin as f64;
    let max_bin = points.last().expect("nonempty").depth_bin as f64;
    let span = (max_bin - min_bin).max(1.0);
    let x = |bin: f64| SVG_MARGIN + (bin - min_bin) / span * (SVG_WIDTH - 2.0 * SVG_MARGIN);
    let y = |rate: f64| SVG_HEIGHT - SVG_MARGIN - rate * (SVG_HEIGHT - 2.0 * SVG_MARGIN);

    let mut band = String::new();
    for p in points {
        band.push_str(&format!("{:.1},{:.1} ", x(p.depth_bin as f64), y(p.ci_high)));
    }
    for p in points.iter().rev() {
        band.push_str(&format!("{:.1},{:.1} ", x(p.depth_bin as f64), y(p.ci_low)));
    }
    let line: String = points
        .iter()
        .map(|p| format!("{:.1},{:.1}", x(p.depth_bin as f64), y(p.rate)))
        .collect::<Vec<_>>()
        .join(" ");

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_WIDTH}\" height=\"{SVG_HEIGHT}\" \
         viewBox=\"0 0 {SVG_WIDTH} {SVG_HEIGHT}\">\n"
    ));
    svg.push_str(&format!(
        "  <title>{}</title>\n",
        xml_escape(title)
    ));
    svg.push_str("  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    // Axes.
    svg.push_str(&format!(
        "  <line x1=\"{m}\" y1=\"{b:.1}\" x2=\"{r:.1}\" y2=\"{b:.1}\" stroke=\"black\"/>\n",
        m = SVG_MARGIN,
        b = SVG_HEIGHT - SVG_MARGIN,
        r = SVG_WIDTH - SVG_MARGIN
    ));
    svg.push_str(&format!(
        "  <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b:.1}\" stroke=\"black\"/>\n",
        m = SVG_MARGIN,
        t = SVG_MARGIN,
        b = SVG_HEIGHT - SVG_MARGIN
    ));
    // Y ticks at quarters.
    for i in 0..=4 {
        let rate = i as f64 / 4.0;
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"end\">{:.2}</text>\n",
            SVG_MARGIN - 6.0,
            y(rate) + 4.0,
            rate
        ));
    }
    // X ticks at the bins.
    for p in points {
        svg.push_str(&format!(
            "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            x(p.depth_bin as f64),
            SVG_HEIGHT - SVG_MARGIN + 16.0,
            p.depth_bin
        ));
    }
    svg.push_str(&format!(
        "  <polygon points=\"{}\" fill=\"#9ecae1\" fill-opacity=\"0.45\" stroke=\"none\"/>\n",
        band.trim_end()
    ));
    svg.push_str(&format!(
        "  <polyline points=\"{line}\" fill=\"none\" stroke=\"#08519c\" stroke-width=\"2\"/>\n"
    ));
    for p in points {
        svg.push_str(&format!(
            "  <circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"#08519c\"/>\n",
            x(p.depth_bin as f64),
            y(p.rate)
        ));
    }
    // Axis labels.
    svg.push_str(&format!(
        "  <text x=\"{:.1}\" y=\"{:.1}\" font-size=\"13\" text-anchor=\"middle\">depth (atoms per case)</text>\n",
        SVG_WIDTH / 2.0,
        SVG_HEIGHT - 12.0
    ));
    svg.push_str(&format!(
        "  <text x=\"16\" y=\"{:.1}\" font-size=\"13\" text-anchor=\"middle\" \
         transform=\"rotate(-90 16 {:.1})\">residual failure rate</text>\n",
        SVG_HEIGHT / 2.0,
        SVG_HEIGHT / 2.0
    ));
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

// ---------------------------------------------------------------------------
// Bundle
// ---------------------------------------------------------------------------

/// Provenance for one run, written alongside every table so each rendered
/// number is traceable to its records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunProvenance {
    pub run_id: String,
    pub model_id: String,
    pub variant: VariantId,
    pub mode: Mode,
    pub seed: u64,
    pub manifest_hash: String,
    pub pool_hash: String,
    pub records_hash: String,
    pub bootstrap_b: u32,
    pub ci_seed: u64,
    pub harness_version: String,
}

/// Everything a report emits, assembled in memory before any file is
/// written.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportBundle {
    /// Table name -> CSV text.
    pub tables: BTreeMap<String, String>,
    /// Curve name (per run) -> points.
    pub curves: BTreeMap<String, Vec<CurvePoint>>,
    /// Curve name -> SVG text.
    pub svgs: BTreeMap<String, String>,
    pub main_table_rows: Vec<MainTableRow>,
    pub provenance: Vec<RunProvenance>,
    /// Runs whose collapse curve could not be rendered, with the reason.
    pub notes: Vec<String>,
}

/// Assemble the full report for one or more runs scored on one manifest.
pub fn build_report_bundle(scores: &[Scores]) -> Result<ReportBundle> {
    ensure_same_manifest(scores)?;
    let mut tables = BTreeMap::new();
    tables.insert("main_table".to_string(), render_main_table(scores)?);
    tables.insert(
        "critical_depth".to_string(),
        render_critical_depth_table(scores)?,
    );
    tables.insert(
        "gate_population".to_string(),
        render_gate_population_table(scores)?,
    );

    let mut curves = BTreeMap::new();
    let mut svgs = BTreeMap::new();
    let mut notes = Vec::new();
    for s in scores {
        let name = format!("collapse_{}", s.run_id);
        match collapse_curve_points(s) {
            Ok(points) => {
                let title = format!("{} residual failure by depth", s.model_id);
                svgs.insert(name.clone(), render_collapse_curve_svg(&points, &title)?);
                curves.insert(name, points);
            }
            Err(e) => notes.push(format!("{name}: {e}")),
        }
    }

    let provenance = scores
        .iter()
        .map(|s| RunProvenance {
            run_id: s.run_id.clone(),
            model_id: s.model_id.clone(),
            variant: s.variant,
            mode: s.mode,
            seed: s.seed,
            manifest_hash: s.manifest_hash.clone(),
            pool_hash: s.pool_hash.clone(),
            records_hash: s.records_hash.clone(),
            bootstrap_b: s.bootstrap_b,
            ci_seed: s.ci_seed,
            harness_version: env!("CARGO_PKG_VERSION").to_string(),
        })
        .collect();

    Ok(ReportBundle {
        tables,
        curves,
        svgs,
        main_table_rows: main_table_rows(scores),
        provenance,
        notes,
    })
}

/// Write a bundle to `dir`: one file per table/curve/SVG plus JSON mirrors
/// and provenance. Rewrites are byte-identical for identical inputs.
pub fn write_report_bundle(bundle: &ReportBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, contents: &str| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))
    };
    for (name, csv) in &bundle.tables {
        write(&format!("{name}.csv"), csv)?;
    }
    for (name, points) in &bundle.curves {
        write(&format!("{name}.csv"), &render_collapse_curve_csv(points))?;
    }
    for (name, svg) in &bundle.svgs {
        write(&format!("{name}.svg"), svg)?;
    }
    let mirror = serde_json::json!({
        "main_table": bundle.main_table_rows,
        "notes": bundle.notes,
    });
    let path = dir.join("main_table.json");
    fs::write(
        &path,
        serde_json::to_string_pretty(&mirror).map_err(|e| Error::json(&path, e))?,
    )
    .map_err(|e| Error::io(&path, e))?;
    let path = dir.join("provenance.json");
    fs::write(
        &path,
        serde_json::to_string_pretty(&bundle.provenance).map_err(|e| Error::json(&path, e))?,
    )
    .map_err(|e| Error::io(&path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gate::GateVerdict;
    use crate::gate::RunManifest;
    use crate::stats::tests::verdict;
    use crate::stats::{score_run, StabilityStats};

    fn fixture_run(model: &str) -> RunManifest {
        RunManifest {
            run_id: format!("run-{model}"),
            model_id: model.to_string(),
            variant: VariantId::V1XmlReasoning,
            mode: Mode::ClosedBook,
            seed: 1,
            manifest_hash: "manifest-h".into(),
            pool_hash: "pool-h".into(),
            deterministic: true,
            started_at: "1970-01-01T00:00:00Z".into(),
            finished_at: "1970-01-01T00:00:00Z".into(),
            record_counts: BTreeMap::new(),
        }
    }

    fn verdicts(spec: &[(u32, u64, u64)]) -> Vec<GateVerdict> {
        let mut out = Vec::new();
        for &(bin, fails, n) in spec {
            for i in 0..n {
                out.push(verdict(&format!("c-{bin}-{i}"), bin, true, true, i >= fails));
            }
        }
        out
    }

    fn reference_scores(model: &str) -> Scores {
        let vs = verdicts(&[(2, 3, 25), (4, 37, 53), (6, 30, 38), (8, 30, 37)]);
        let mut scores = score_run(&fixture_run(model), &[], &vs, 200, 5, "records-h").unwrap();
        scores.stability = Some(StabilityStats {
            per_probe_rate: 0.899,
            per_fact_rate: 0.72,
            joint_at_k: [(2u32, 0.808), (4, 0.653)].into_iter().collect(),
        });
        scores
    }

    #[test]
    fn main_table_reproduces_the_reference_row() {
        let scores = vec![reference_scores("qwen-fixture")];
        let table = render_main_table(&scores).unwrap();
        let mut lines = table.lines();
        assert_eq!(lines.next().unwrap(), "model_id,stability_pct,d2,d4,d6,d8");
        assert_eq!(
            lines.next().unwrap(),
            "qwen-fixture,89.9,12.0 (25),69.8 (53),78.9 (38),81.1 (37)"
        );
    }

    #[test]
    fn suppression_and_caution_markers() {
        let vs = verdicts(&[(2, 1, 3), (4, 11, 11), (6, 10, 20)]);
        let scores = vec![score_run(&fixture_run("m"), &[], &vs, 200, 5, "h").unwrap()];
        let table = render_main_table(&scores).unwrap();
        let row = table.lines().nth(1).unwrap();
        assert!(row.contains(",--,"), "n=3 bin must be omitted: {row}");
        assert!(
            row.contains(&format!("100.0 (11){CAUTION_MARKER}")),
            "n=11 bin must carry the dagger: {row}"
        );
        assert!(row.ends_with("50.0 (20)"), "n=20 bin is unmarked: {row}");
    }

    #[test]
    fn mixed_manifests_are_rejected() {
        let a = reference_scores("a");
        let mut b = reference_scores("b");
        b.manifest_hash = "other".into();
        assert!(render_main_table(&[a, b]).is_err());
        assert!(render_main_table(&[]).is_err());
    }

    #[test]
    fn critical_depth_table_renders_point_and_censored_rows() {
        let scores = vec![reference_scores("m")];
        let table = render_critical_depth_table(&scores).unwrap();
        let row = table.lines().nth(1).unwrap();
        assert!(row.starts_with("m,aggregate,3.3 ["), "got {row}");

        let vs = verdicts(&[(4, 28, 30), (6, 29, 30)]);
        let censored = vec![score_run(&fixture_run("m"), &[], &vs, 200, 5, "h").unwrap()];
        let table = render_critical_depth_table(&censored).unwrap();
        assert!(table.lines().nth(1).unwrap().contains(",aggregate,<4"));
    }

    #[test]
    fn collapse_curve_points_and_svg() {
        let scores = reference_scores("m");
        let points = collapse_curve_points(&scores).unwrap();
        assert_eq!(points.len(), 4);
        assert_eq!(points[0].depth_bin, 2);
        assert!((points[1].rate - 37.0 / 53.0).abs() < 1e-12);
        let csv = render_collapse_curve_csv(&points);
        assert!(csv.starts_with("depth_bin,rate,ci_low,ci_high,n\n"));
        assert_eq!(csv.lines().count(), 5);

        let svg = render_collapse_curve_svg(&points, "m").unwrap();
        assert!(svg.contains("<polyline") && svg.contains("<polygon"));
        assert!(svg.contains("residual failure rate"));
        let again = render_collapse_curve_svg(&points, "m").unwrap();
        assert_eq!(svg, again, "SVG rendering is deterministic");

        let thin = score_run(
            &fixture_run("m"),
            &[],
            &verdicts(&[(4, 2, 30)]),
            200,
            5,
            "h",
        )
        .unwrap();
        assert!(collapse_curve_points(&thin).is_err());
    }

    #[test]
    fn bundle_roundtrips_byte_identically() {
        let scores = vec![reference_scores("m")];
        let bundle = build_report_bundle(&scores).unwrap();
        assert!(bundle.tables.contains_key("main_table"));
        assert!(bundle.curves.contains_key("collapse_run-m"));
        assert_eq!(bundle.provenance[0].records_hash, "records-h");

        let dir = tempfile::tempdir().unwrap();
        write_report_bundle(&bundle, dir.path()).unwrap();
        let first = fs::read(dir.path().join("main_table.csv")).unwrap();
        write_report_bundle(&bundle, dir.path()).unwrap();
        let second = fs::read(dir.path().join("main_table.csv")).unwrap();
        assert_eq!(first, second);
        assert!(dir.path().join("collapse_run-m.svg").exists());
        assert!(dir.path().join("provenance.json").exists());
        assert!(dir.path().join("gate_population.csv").exists());
    }
}
