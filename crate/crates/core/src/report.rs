//! Tables, heatmaps, layer curves and the artifact manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use itertools::Itertools;
use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agreescore::Significance;
use crate::num::round_half_up;
use crate::probes::{ProbeTask, ResultRecord};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("table has {rows}x{columns} labels but {cells} cells")]
    CellCount { rows: usize, columns: usize, cells: usize },
    #[error("marker list has {got} entries, expected {want}")]
    MarkerCount { got: usize, want: usize },
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("invalid scale [{min}, {max}]")]
    BadScale { min: f64, max: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Manifest(String),
}

/// A labelled grid of scores with optional highlight markers.
#[derive(Debug, Clone, PartialEq)]
pub struct TableSpec {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    /// Row-major.
    pub cells: Vec<f64>,
    /// Mark the maximum of each column (all tied cells).
    pub bold_max: bool,
    /// Row-major; cells at or below a random baseline.
    pub below_baseline: Option<Vec<bool>>,
    /// Row-major significance levels.
    pub significance: Option<Vec<Significance>>,
}

impl TableSpec {
    pub fn new(rows: Vec<String>, columns: Vec<String>, cells: Vec<f64>) -> Self {
        TableSpec { rows, columns, cells, bold_max: true, below_baseline: None, significance: None }
    }

    pub fn validate(&self) -> Result<(), ReportError> {
        let want = self.rows.len() * self.columns.len();
        if self.cells.len() != want {
            return Err(ReportError::CellCount { rows: self.rows.len(), columns: self.columns.len(), cells: self.cells.len() });
        }
        for got in [self.below_baseline.as_ref().map(Vec::len), self.significance.as_ref().map(Vec::len)].into_iter().flatten() {
            if got != want {
                return Err(ReportError::MarkerCount { got, want });
            }
        }
        Ok(())
    }

    pub fn cell(&self, row: usize, column: usize) -> f64 {
        self.cells[row * self.columns.len() + column]
    }

    /// Row-major flags for the per-column maxima; ties are all marked.
    pub fn column_maxima(&self) -> Vec<bool> {
        let ncols = self.columns.len();
        let maxima: Vec<f64> = (0..ncols)
            .map(|c| (0..self.rows.len()).map(|r| self.cell(r, c)).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        self.cells.iter().enumerate().map(|(i, &v)| v == maxima[i % ncols]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Markdown,
}

fn two_decimals(v: f64) -> String {
    format!("{:.2}", round_half_up(v, 2))
}

/// Renders a table. CSV is long-form, one line per cell:
/// `row,column,value,is_max,at_or_below_baseline,significance`, with a
/// trailing `value_full` column when `full_precision` is set.
pub fn emit_table(spec: &TableSpec, format: TableFormat, full_precision: bool) -> Result<String, ReportError> {
    spec.validate()?;
    let maxima = spec.column_maxima();
    let ncols = spec.columns.len();
    match format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["row", "column", "value", "is_max", "at_or_below_baseline", "significance"];
            if full_precision {
                header.push("value_full");
            }
            w.write_record(&header).map_err(csv_io)?;
            for (i, &v) in spec.cells.iter().enumerate() {
                let mut record = vec![
                    spec.rows[i / ncols].clone(),
                    spec.columns[i % ncols].clone(),
                    two_decimals(v),
                    (spec.bold_max && maxima[i]).to_string(),
                    spec.below_baseline.as_ref().is_some_and(|b| b[i]).to_string(),
                    spec.significance.as_ref().map_or("", |s| s[i].label()).to_string(),
                ];
                if full_precision {
                    record.push(v.to_string());
                }
                w.write_record(&record).map_err(csv_io)?;
            }
            let bytes = w.into_inner().map_err(|e| ReportError::Io(e.into_error()))?;
            Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
        }
        TableFormat::Markdown => {
            let mut out = String::new();
            writeln!(out, "| | {} |", spec.columns.iter().join(" | ")).unwrap();
            writeln!(out, "|---|{}", "---:|".repeat(ncols)).unwrap();
            for (r, label) in spec.rows.iter().enumerate() {
                let cells = (0..ncols).map(|c| {
                    let i = r * ncols + c;
                    let mut text = two_decimals(spec.cells[i]);
                    if spec.bold_max && maxima[i] {
                        text = format!("**{text}**");
                    }
                    if spec.below_baseline.as_ref().is_some_and(|b| b[i]) {
                        text.push_str(" (≤ baseline)");
                    }
                    if let Some(sig) = spec.significance.as_ref().map(|s| s[i]).filter(|&s| s != Significance::None) {
                        text.push_str(&format!(" ({})", sig.label()));
                    }
                    text
                });
                writeln!(out, "| {label} | {} |", cells.format(" | ")).unwrap();
            }
            Ok(out)
        }
    }
}

fn csv_io(e: csv::Error) -> ReportError {
    ReportError::Io(std::io::Error::other(e.to_string()))
}

/// Parses the long-form CSV back into (row, column, value) triples.
pub fn parse_table_csv(text: &str) -> Result<Vec<(String, String, f64)>, ReportError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_io)?;
        let value: f64 = record[2].parse().map_err(|e: std::num::ParseFloatError| ReportError::Manifest(e.to_string()))?;
        out.push((record[0].to_string(), record[1].to_string(), value));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeatmapScale {
    /// From min(0, smallest cell) to the largest cell.
    Auto,
    Fixed { min: f64, max: f64 },
}

const CELL: usize = 28;
const LEFT: usize = 76;
const TOP: usize = 40;

/// Gray level of a value: 0 = black at the bottom of the scale, 255 = white
/// at the top. A zero-width scale maps everything to black.
pub fn gray_level(v: f64, min: f64, max: f64) -> u8 {
    if max <= min {
        return 0;
    }
    let t = ((v - min) / (max - min)).clamp(0.0, 1.0);
    (t * 255.0).round() as u8
}

/// Renders an `L x H` grid as SVG, one square per (layer, head), layers as
/// rows. Labels are 1-based.
pub fn emit_heatmap(grid: ArrayView2<f64>, scale: HeatmapScale, title: &str) -> Result<String, ReportError> {
    let (layers, heads) = grid.dim();
    if let Some(((r, c), _)) = grid.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(ReportError::NonFinite { row: r, column: c });
    }
    let (min, max) = match scale {
        HeatmapScale::Auto => (
            grid.iter().copied().fold(0.0, f64::min),
            grid.iter().copied().fold(0.0, f64::max),
        ),
        HeatmapScale::Fixed { min, max } => {
            if !(min.is_finite() && max.is_finite() && min <= max) {
                return Err(ReportError::BadScale { min, max });
            }
            (min, max)
        }
    };
    let width = LEFT + heads * CELL + 90;
    let height = TOP + layers * CELL + 50;
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="9">"#
    )
    .unwrap();
    writeln!(svg, r#"<title>{}</title>"#, escape(title)).unwrap();
    writeln!(svg, r#"<text x="{LEFT}" y="14" font-size="12">{}</text>"#, escape(title)).unwrap();
    for h in 0..heads {
        let x = LEFT + h * CELL + CELL / 2;
        writeln!(svg, r#"<text x="{x}" y="{}" text-anchor="middle">Head={}</text>"#, TOP - 6, h + 1).unwrap();
    }
    for l in 0..layers {
        let y = TOP + l * CELL;
        writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">Layer={}</text>"#, LEFT - 6, y + CELL / 2 + 3, l + 1).unwrap();
        for h in 0..heads {
            let g = gray_level(grid[[l, h]], min, max);
            writeln!(
                svg,
                r#"<rect class="cell" x="{}" y="{y}" width="{CELL}" height="{CELL}" fill="rgb({g},{g},{g})" data-value="{:.6}"/>"#,
                LEFT + h * CELL,
                grid[[l, h]]
            )
            .unwrap();
        }
    }
    let lx = LEFT + heads * CELL + 20;
    let ly = TOP;
    let lh = (layers * CELL).max(CELL);
    writeln!(
        svg,
        r#"<defs><linearGradient id="legend" x1="0" y1="1" x2="0" y2="0"><stop offset="0" stop-color="rgb(0,0,0)"/><stop offset="1" stop-color="rgb(255,255,255)"/></linearGradient></defs>"#
    )
    .unwrap();
    writeln!(svg, r#"<rect x="{lx}" y="{ly}" width="14" height="{lh}" fill="url(#legend)" stroke="black" stroke-width="0.5"/>"#).unwrap();
    writeln!(svg, r#"<text x="{}" y="{}">{:.3}</text>"#, lx + 18, ly + 8, max).unwrap();
    writeln!(svg, r#"<text x="{}" y="{}">{:.3}</text>"#, lx + 18, ly + lh, min).unwrap();
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveGroup {
    Language,
    AmbiguityDegree,
}

/// One point of a layer curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub group: String,
    pub task: ProbeTask,
    pub layer: usize,
    pub mean_f1: f64,
    pub cells: usize,
}

/// Mean weighted F1 per layer for each (group, task). Grouping by ambiguity
/// degree uses only cells restricted to a degree set; grouping by language
/// uses only unrestricted cells.
pub fn layer_curves(results: &[ResultRecord], group_by: CurveGroup) -> Vec<CurvePoint> {
    let mut groups: BTreeMap<(String, ProbeTask), BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for r in results {
        let group = match (group_by, &r.ambiguity) {
            (CurveGroup::Language, None) => r.language.clone(),
            (CurveGroup::AmbiguityDegree, Some(d)) => d.iter().join("+"),
            _ => continue,
        };
        groups.entry((group, r.task)).or_default().entry(r.layer).or_default().push(r.weighted_f1);
    }
    if groups.is_empty() {
        log::warn!("no results to draw {group_by:?} curves from");
    }
    let mut out = Vec::new();
    for ((group, task), layers) in groups {
        for (layer, v) in layers {
            out.push(CurvePoint { group: group.clone(), task, layer, mean_f1: v.iter().sum::<f64>() / v.len() as f64, cells: v.len() });
        }
    }
    out
}

/// CSV `group,task,layer,mean_f1,cells` for [`layer_curves`].
pub fn emit_layer_curves(results: &[ResultRecord], group_by: CurveGroup) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["group", "task", "layer", "mean_f1", "cells"]).map_err(csv_io)?;
    for p in layer_curves(results, group_by) {
        w.write_record([p.group, p.task.to_string(), p.layer.to_string(), p.mean_f1.to_string(), p.cells.to_string()])
            .map_err(csv_io)?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the output directory for artifacts; as given for inputs.
    pub path: String,
    pub sha256: String,
}

/// Provenance index written next to the artifacts.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub inputs: Vec<ManifestEntry>,
    pub artifacts: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(config_text: &str) -> Self {
        Manifest { config_hash: sha256_hex(config_text.as_bytes()), ..Manifest::default() }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<(), ReportError> {
        let bytes = fs::read(path)?;
        self.inputs.push(ManifestEntry { path: path.display().to_string(), sha256: sha256_hex(&bytes) });
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        serde_json::from_str(text).map_err(|e| ReportError::Manifest(e.to_string()))
    }
}

/// Writes artifacts under an output root and records them in a manifest.
#[derive(Debug)]
pub struct ArtifactWriter {
    root: PathBuf,
    manifest: Manifest,
}

impl ArtifactWriter {
    pub fn new(root: impl Into<PathBuf>, manifest: Manifest) -> Self {
        ArtifactWriter { root: root.into(), manifest }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_mut(&mut self) -> &mut Manifest {
        &mut self.manifest
    }

    /// Writes `content` to `root/relative` (creating directories) and
    /// records its digest.
    pub fn write(&mut self, relative: &str, content: &[u8]) -> Result<PathBuf, ReportError> {
        let path = self.root.join(relative);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, content)?;
        self.manifest.artifacts.retain(|e| e.path != relative);
        self.manifest.artifacts.push(ManifestEntry { path: relative.to_string(), sha256: sha256_hex(content) });
        Ok(path)
    }

    /// Writes `manifest.json`, artifacts sorted by path.
    pub fn finish(mut self) -> Result<Manifest, ReportError> {
        self.manifest.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        fs::create_dir_all(&self.root)?;
        fs::write(self.root.join("manifest.json"), self.manifest.to_json())?;
        Ok(self.manifest)
    }
}
