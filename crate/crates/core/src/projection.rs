//! PCA by power iteration with deflation, and 2D scatter output (TSV or
//! self-contained SVG).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::exec::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcaConfig {
    pub max_iter: usize,
    /// Relative eigenvalue change between iterations.
    pub tolerance: f64,
    /// Euclidean change of the unit iterate between iterations.
    pub vector_tolerance: f64,
    pub seed: u64,
}

impl Default for PcaConfig {
    fn default() -> Self {
        PcaConfig {
            max_iter: 1000,
            tolerance: 1e-9,
            vector_tolerance: 1e-10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// One unit-norm row per component, pairwise orthogonal.
    pub components: Array2<f64>,
    /// Sample variance along each component, non-increasing.
    pub explained_variance: Vec<f64>,
    /// Trace of the sample covariance.
    pub total_variance: f64,
    /// Iterations spent on each component.
    pub iterations: Vec<usize>,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| if self.total_variance > 0.0 { v / self.total_variance } else { 0.0 })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `Xc^T (Xc v) / (n - 1)` without forming the covariance matrix.
fn covariance_times(xc: &Array2<f64>, v: &[f64], exec: Execution) -> Vec<f64> {
    let n = xc.nrows();
    let u = exec.map_range(n, |i| dot(xc.row(i).as_slice().expect("standard layout"), v));
    let scale = 1.0 / (n as f64 - 1.0);
    exec.map_range(xc.ncols(), |j| {
        xc.column(j).iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() * scale
    })
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let p = dot(v, b);
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
    }
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

pub fn pca_fit(x: ArrayView2<f64>, k: usize, config: &PcaConfig) -> Result<PcaModel> {
    pca_fit_with(x, k, config, Execution::default())
}

/// Top-`k` eigenvectors of the sample covariance (divisor `n - 1`).
///
/// Each component is found by power iteration on the covariance deflated by
/// the components before it; iterates are kept orthogonal to earlier
/// components. When the deflated covariance vanishes (k exceeds the rank) the
/// remaining components are orthonormal completions with zero variance.
pub fn pca_fit_with(x: ArrayView2<f64>, k: usize, config: &PcaConfig, exec: Execution) -> Result<PcaModel> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(Error::domain(format!("PCA needs at least 2 samples, got {n}")));
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::domain(format!("cannot extract {k} components from {n}x{d} data")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("PCA input contains non-finite values"));
    }
    let mean: Array1<f64> = x.mean_axis(Axis(0)).expect("n >= 2");
    let xc: Array2<f64> = (&x - &mean).as_standard_layout().to_owned();
    let total_variance = xc.iter().map(|v| v * v).sum::<f64>() / (n as f64 - 1.0);
    let zero_scale = 1e-13 * total_variance.max(f64::MIN_POSITIVE);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut comps: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut values: Vec<f64> = Vec::with_capacity(k);
    let mut iterations = Vec::with_capacity(k);

    for _ in 0..k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        orthogonalize(&mut v, &comps);
        orthogonalize(&mut v, &comps);
        let nv = norm(&v);
        v.iter_mut().for_each(|e| *e /= nv);

        let mut lambda = 0.0;
        let mut iters = 0;
        while iters < config.max_iter {
            iters += 1;
            let mut w = covariance_times(&xc, &v, exec);
            for (u, &lu) in comps.iter().zip(&values) {
                let p = dot(u, &v) * lu;
                w.iter_mut().zip(u).for_each(|(a, b)| *a -= p * b);
            }
            orthogonalize(&mut w, &comps);
            let new_lambda = dot(&v, &w);
            let nw = norm(&w);
            if nw <= zero_scale {
                // remaining spectrum is numerically zero
                lambda = 0.0;
                break;
            }
            w.iter_mut().for_each(|e| *e /= nw);
            let step = v.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let rel = (new_lambda - lambda).abs() / new_lambda.abs().max(zero_scale);
            v = w;
            lambda = new_lambda;
            if rel <= config.tolerance && step <= config.vector_tolerance {
                break;
            }
        }
        fix_sign(&mut v);
        comps.push(v);
        values.push(lambda.max(0.0));
        iterations.push(iters);
    }

    // Enforce descending order should convergence have mixed up close pairs.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut components = Array2::zeros((k, d));
    for (r, &i) in order.iter().enumerate() {
        components.row_mut(r).assign(&Array1::from(comps[i].clone()));
    }
    Ok(PcaModel {
        mean: mean.to_vec(),
        components,
        explained_variance: order.iter().map(|&i| values[i]).collect(),
        total_variance,
        iterations: order.iter().map(|&i| iterations[i]).collect(),
    })
}

/// `(X - mean) * components^T`.
pub fn pca_transform(model: &PcaModel, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != model.mean.len() {
        return Err(Error::domain(format!(
            "input has dimension {}, PCA model expects {}",
            x.ncols(),
            model.mean.len()
        )));
    }
    let mean = Array1::from(model.mean.clone());
    Ok((&x - &mean).dot(&model.components.t()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub ids: Vec<String>,
    pub coords: Vec<[f64; 2]>,
    pub class_ids: Vec<i64>,
    pub explained_variance_ratio: [f64; 2],
}

/// 2D projection of the labeled rows. With a class `filter`, `refit`
/// chooses between fitting PCA on the filtered subset (true) and fitting on
/// all labeled rows and dropping the others afterwards (false).
pub fn project(
    matrix: &EmbeddingMatrix,
    labels: &[(String, i64)],
    filter: Option<&BTreeSet<i64>>,
    refit: bool,
    config: &PcaConfig,
) -> Result<ProjectionResult> {
    let keep = |c: &i64| filter.is_none_or(|f| f.contains(c));
    let selected: Vec<&(String, i64)> = labels.iter().filter(|(_, c)| keep(c)).collect();
    if selected.len() < 2 {
        return Err(Error::domain(format!(
            "projection needs at least 2 instances, {} selected",
            selected.len()
        )));
    }
    let fit_rows: Vec<&(String, i64)> = if refit { selected.clone() } else { labels.iter().collect() };
    let fit_ids: Vec<&str> = fit_rows.iter().map(|(id, _)| id.as_str()).collect();
    let model = pca_fit(matrix.select(&fit_ids)?.view(), 2, config)?;
    let ids: Vec<&str> = selected.iter().map(|(id, _)| id.as_str()).collect();
    let coords = pca_transform(&model, matrix.select(&ids)?.view())?;
    let ratio = model.explained_variance_ratio();
    Ok(ProjectionResult {
        ids: ids.iter().map(|s| s.to_string()).collect(),
        coords: coords.axis_iter(Axis(0)).map(|r| [r[0], r[1]]).collect(),
        class_ids: selected.iter().map(|(_, c)| *c).collect(),
        explained_variance_ratio: [ratio[0], ratio[1]],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScatterFormat {
    Tsv,
    Svg,
}

impl FromStr for ScatterFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().as_str() {
            "tsv" => Ok(ScatterFormat::Tsv),
            "svg" => Ok(ScatterFormat::Svg),
            other => Err(Error::domain(format!("unknown scatter format '{other}'"))),
        }
    }
}

pub fn render_tsv(result: &ProjectionResult) -> String {
    let mut out = String::from("id\tx\ty\tclass\n");
    for ((id, [x, y]), c) in result.ids.iter().zip(&result.coords).zip(&result.class_ids) {
        let _ = writeln!(out, "{id}\t{x}\t{y}\t{c}");
    }
    out
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#7f7f7f", "#bcbd22",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&apos;")
}

fn marker(shape: usize, x: f64, y: f64, color: &str, title: &str) -> String {
    let r = 4.0;
    let body = match shape % 4 {
        0 => format!(r#"<circle cx="{x:.2}" cy="{y:.2}" r="{r}" fill="{color}" fill-opacity="0.75""#),
        1 => format!(
            r#"<rect x="{:.2}" y="{:.2}" width="{}" height="{}" fill="{color}" fill-opacity="0.75""#,
            x - r,
            y - r,
            2.0 * r,
            2.0 * r
        ),
        2 => format!(
            r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}" fill-opacity="0.75""#,
            x,
            y - r,
            x - r,
            y + r,
            x + r,
            y + r
        ),
        _ => format!(
            r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{color}" fill-opacity="0.75""#,
            x,
            y - r,
            x + r,
            y,
            x,
            y + r,
            x - r,
            y
        ),
    };
    if title.is_empty() {
        format!("{body}/>")
    } else {
        let tag = body.split_whitespace().next().unwrap().trim_start_matches('<').to_string();
        format!("{body}><title>{}</title></{tag}>", escape(title))
    }
}

/// Standalone SVG scatter plot, one marker per instance; each class gets its
/// own color and marker shape and a legend entry. `class_names` labels the
/// legend when given.
pub fn render_svg(result: &ProjectionResult, class_names: &BTreeMap<i64, String>) -> String {
    let (w, h, margin, legend_w) = (720.0, 540.0, 40.0, 190.0);
    let plot_w = w - 2.0 * margin - legend_w;
    let plot_h = h - 2.0 * margin;
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for [x, y] in &result.coords {
        xmin = xmin.min(*x);
        xmax = xmax.max(*x);
        ymin = ymin.min(*y);
        ymax = ymax.max(*y);
    }
    let span = |lo: f64, hi: f64| if hi - lo > 0.0 { hi - lo } else { 1.0 };
    let (sx, sy) = (plot_w / span(xmin, xmax), plot_h / span(ymin, ymax));
    let px = |x: f64| margin + (x - xmin) * sx;
    let py = |y: f64| margin + plot_h - (y - ymin) * sy;

    let classes: Vec<i64> = result.class_ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let style = |c: i64| {
        let i = classes.iter().position(|&k| k == c).unwrap();
        (PALETTE[i % PALETTE.len()], i)
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r##"<rect x="{margin}" y="{margin}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#999"/>"##
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">PC1 ({:.1}%)</text>"#,
        margin + plot_w / 2.0,
        h - 10.0,
        100.0 * result.explained_variance_ratio[0]
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">PC2 ({:.1}%)</text>"#,
        margin + plot_h / 2.0,
        margin + plot_h / 2.0,
        100.0 * result.explained_variance_ratio[1]
    );
    out.push_str("<g id=\"points\">\n");
    for ((id, [x, y]), &c) in result.ids.iter().zip(&result.coords).zip(&result.class_ids) {
        let (color, shape) = style(c);
        out.push_str(&marker(shape, px(*x), py(*y), color, &format!("{id} (class {c})")));
        out.push('\n');
    }
    out.push_str("</g>\n<g id=\"legend\">\n");
    let lx = w - legend_w - margin / 2.0 + 20.0;
    for (row, &c) in classes.iter().enumerate() {
        let (color, shape) = style(c);
        let ly = margin + 10.0 + 20.0 * row as f64;
        out.push_str(&marker(shape, lx, ly, color, ""));
        let name = class_names.get(&c).map(|n| format!("{c}. {n}")).unwrap_or_else(|| format!("class {c}"));
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, lx + 10.0, ly + 4.0, escape(&name));
    }
    out.push_str("</g>\n</svg>\n");
    out
}

pub fn emit_scatter(
    result: &ProjectionResult,
    path: &Path,
    format: ScatterFormat,
    class_names: &BTreeMap<i64, String>,
) -> Result<()> {
    let text = match format {
        ScatterFormat::Tsv => render_tsv(result),
        ScatterFormat::Svg => render_svg(result, class_names),
    };
    std::fs::write(path, text)?;
    Ok(())
}
