//! Representation analysis: PCA projections of untrained sentence embeddings
//! (colored by domain) and of trained pair representations (colored by
//! relation label), emitted as scatter CSVs and optional SVG plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedSentence, DomainId, RelationInstance};
use crate::encoding::EncodingContext;
use crate::error::{Error, Result};
use crate::model::{Encoder, RelationModel};
use crate::tokenizer::Tokenizer;

/// One embedded instance: a vector with its domain and (for trained pair
/// vectors) its relation label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceVector {
    pub values: Vec<f64>,
    pub domain: DomainId,
    pub label: Option<String>,
}

impl AsRef<[f64]> for InstanceVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// How a sentence is summarized into one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentencePooling {
    /// Mean of the final-layer states over the sentence's subwords.
    Mean,
    /// The sequence-start state.
    Cls,
}

impl std::str::FromStr for SentencePooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(SentencePooling::Mean),
            "cls" => Ok(SentencePooling::Cls),
            other => Err(Error::Config(format!(
                "unknown pooling `{other}` (expected mean or cls)"
            ))),
        }
    }
}

/// Embeds a raw (unaugmented) sentence with a not-fine-tuned encoder.
/// Dimension H.
pub fn sentence_vector_untrained(
    sentence: &AnnotatedSentence,
    encoder: &Encoder,
    tokenizer: &Tokenizer,
    pooling: SentencePooling,
) -> Result<InstanceVector> {
    if sentence.tokens.is_empty() {
        return Err(Error::Analysis(format!(
            "sentence `{}` has no tokens",
            sentence.doc_key
        )));
    }
    let (ids, _) = tokenizer.encode_tokens(&sentence.tokens);
    let mut sequence = Vec::with_capacity(ids.len() + 2);
    sequence.push(tokenizer.cls_id());
    sequence.extend(ids);
    sequence.push(tokenizer.sep_id());
    let max_len = encoder.config().max_len;
    if sequence.len() > max_len {
        sequence.truncate(max_len - 1);
        sequence.push(tokenizer.sep_id());
    }

    let states = encoder.forward(&sequence, None)?;
    let values: Vec<f64> = match pooling {
        SentencePooling::Cls => states.row(0).to_vec(),
        SentencePooling::Mean => {
            // Mean over the sentence subwords, excluding the sequence
            // start/end tokens.
            let inner = states.slice(ndarray::s![1..states.nrows() - 1, ..]);
            let n = inner.nrows() as f64;
            inner.sum_axis(ndarray::Axis(0)).mapv(|v| v / n).to_vec()
        }
    };
    Ok(InstanceVector {
        values,
        domain: sentence.domain,
        label: None,
    })
}

/// The trained pair representation (dimension 2H) of an instance under a
/// trained checkpoint.
pub fn pair_vector_trained(
    instance: &RelationInstance,
    model: &RelationModel,
    ctx: &EncodingContext,
) -> Result<InstanceVector> {
    let aug = ctx.encode(instance)?;
    let pair = model.pair_representation(&aug)?;
    Ok(InstanceVector {
        values: pair.to_vec(),
        domain: instance.domain,
        label: Some(instance.label.clone()),
    })
}

/// The `k` most frequent gold labels, frequency ties broken
/// lexicographically.
pub fn select_top_relations(instances: &[RelationInstance], k: usize) -> Result<Vec<String>> {
    if k == 0 {
        return Err(Error::Analysis("k must be at least 1".to_string()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for instance in instances {
        *counts.entry(instance.label.as_str()).or_insert(0) += 1;
    }
    if k > counts.len() {
        return Err(Error::Analysis(format!(
            "asked for {k} labels but only {} are present",
            counts.len()
        )));
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    // BTreeMap iteration is lexicographic, and the sort is stable, so ties
    // resolve to the lexicographically smaller label.
    ranked.sort_by(|a, b| b.1.cmp(&a.1));
    Ok(ranked.into_iter().take(k).map(|(l, _)| l.to_string()).collect())
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

/// A fitted PCA with projected points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// Top-k principal axes (rows), orthonormal, with a deterministic sign:
    /// each axis's largest-magnitude coordinate is positive.
    pub axes: Vec<Vec<f64>>,
    /// Top-k covariance eigenvalues (sample covariance, divisor n-1).
    pub explained_variance: Vec<f64>,
    /// Eigenvalues divided by the total variance, so the ratios over all
    /// components sum to 1.
    pub explained_variance_ratio: Vec<f64>,
    /// One k-dimensional projected point per input vector.
    pub points: Vec<Vec<f64>>,
}

/// Mean-centers the vectors and projects them onto the top-k principal
/// axes of the sample covariance. Deterministic, including axis signs.
pub fn pca_fit_transform<V: AsRef<[f64]>>(vectors: &[V], k: usize) -> Result<PcaProjection> {
    let n = vectors.len();
    if k == 0 {
        return Err(Error::Analysis("component count must be positive".to_string()));
    }
    if n < k + 1 {
        return Err(Error::Analysis(format!(
            "need at least {} vectors for {k} components, got {n}",
            k + 1
        )));
    }
    let dim = vectors[0].as_ref().len();
    if dim < k {
        return Err(Error::Analysis(format!(
            "cannot extract {k} components from {dim}-dimensional data"
        )));
    }
    for v in vectors {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(Error::Analysis(format!(
                "inconsistent vector dimensions: {} vs {dim}",
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("analysis vector entry".to_string()));
        }
    }

    let mut centered = Array2::zeros((n, dim));
    for (i, v) in vectors.iter().enumerate() {
        for (j, &x) in v.as_ref().iter().enumerate() {
            centered[[i, j]] = x;
        }
    }
    let mean = centered.mean_axis(ndarray::Axis(0)).expect("non-empty");
    for mut row in centered.outer_iter_mut() {
        row -= &mean;
    }

    let covariance = centered.t().dot(&centered) / (n as f64 - 1.0);
    let total_variance: f64 = covariance.diag().sum();
    if total_variance <= f64::EPSILON * dim as f64 {
        return Err(Error::Analysis(
            "zero-variance data has no principal axes".to_string(),
        ));
    }

    let (eigenvalues, eigenvectors) = eigen::symmetric_eigen(&covariance)?;

    // Eigenvalues arrive ascending; take the top k, largest first.
    let mut axes = Vec::with_capacity(k);
    let mut explained = Vec::with_capacity(k);
    for rank in 0..k {
        let col = dim - 1 - rank;
        let mut axis: Vec<f64> = (0..dim).map(|r| eigenvectors[[r, col]]).collect();
        // Sign convention: the largest-magnitude coordinate is positive
        // (first occurrence wins on exact magnitude ties).
        let lead = axis
            .iter()
            .enumerate()
            .max_by(|(ai, a), (bi, b)| {
                a.abs()
                    .partial_cmp(&b.abs())
                    .unwrap()
                    .then(bi.cmp(ai))
            })
            .map(|(i, _)| i)
            .expect("non-empty axis");
        if axis[lead] < 0.0 {
            for x in &mut axis {
                *x = -*x;
            }
        }
        axes.push(axis);
        explained.push(eigenvalues[col].max(0.0));
    }

    let ratios: Vec<f64> = explained.iter().map(|&l| l / total_variance).collect();

    let mut points = Vec::with_capacity(n);
    for row in centered.outer_iter() {
        let point: Vec<f64> = axes
            .iter()
            .map(|axis| row.iter().zip(axis.iter()).map(|(a, b)| a * b).sum())
            .collect();
        points.push(point);
    }

    Ok(PcaProjection {
        mean: mean.to_vec(),
        axes,
        explained_variance: explained,
        explained_variance_ratio: ratios,
        points,
    })
}

mod eigen {
    //! Symmetric eigendecomposition: Householder tridiagonalization followed
    //! by implicit-shift QL iteration (the classic tred2/tql2 pair).

    use ndarray::{Array1, Array2};

    use crate::error::{Error, Result};

    /// Returns eigenvalues in ascending order and the matching orthonormal
    /// eigenvectors as columns.
    pub(super) fn symmetric_eigen(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::Shape("eigen input must be square".to_string()));
        }
        let mut v = a.clone();
        let mut d = vec![0.0; n];
        let mut e = vec![0.0; n];
        tred2(&mut v, &mut d, &mut e);
        tql2(&mut v, &mut d, &mut e)?;
        Ok((Array1::from_vec(d), v))
    }

    fn tred2(v: &mut Array2<f64>, d: &mut [f64], e: &mut [f64]) {
        let n = d.len();
        for j in 0..n {
            d[j] = v[[n - 1, j]];
        }

        for i in (1..n).rev() {
            let mut scale = 0.0;
            let mut h = 0.0;
            for item in d.iter().take(i) {
                scale += item.abs();
            }
            if scale == 0.0 {
                e[i] = d[i - 1];
                for j in 0..i {
                    d[j] = v[[i - 1, j]];
                    v[[i, j]] = 0.0;
                    v[[j, i]] = 0.0;
                }
            } else {
                for item in d.iter_mut().take(i) {
                    *item /= scale;
                    h += *item * *item;
                }
                let f = d[i - 1];
                let mut g = h.sqrt();
                if f > 0.0 {
                    g = -g;
                }
                e[i] = scale * g;
                h -= f * g;
                d[i - 1] = f - g;
                for item in e.iter_mut().take(i) {
                    *item = 0.0;
                }

                for j in 0..i {
                    let f = d[j];
                    v[[j, i]] = f;
                    let mut g = e[j] + v[[j, j]] * f;
                    for k in (j + 1)..i {
                        g += v[[k, j]] * d[k];
                        e[k] += v[[k, j]] * f;
                    }
                    e[j] = g;
                }
                let mut f = 0.0;
                for j in 0..i {
                    e[j] /= h;
                    f += e[j] * d[j];
                }
                let hh = f / (h + h);
                for j in 0..i {
                    e[j] -= hh * d[j];
                }
                for j in 0..i {
                    let f = d[j];
                    let g = e[j];
                    for k in j..i {
                        v[[k, j]] -= f * e[k] + g * d[k];
                    }
                    d[j] = v[[i - 1, j]];
                    v[[i, j]] = 0.0;
                }
            }
            d[i] = h;
        }

        // Accumulate transformations.
        for i in 0..n - 1 {
            v[[n - 1, i]] = v[[i, i]];
            v[[i, i]] = 1.0;
            let h = d[i + 1];
            if h != 0.0 {
                for k in 0..=i {
                    d[k] = v[[k, i + 1]] / h;
                }
                for j in 0..=i {
                    let mut g = 0.0;
                    for k in 0..=i {
                        g += v[[k, i + 1]] * v[[k, j]];
                    }
                    for k in 0..=i {
                        v[[k, j]] -= g * d[k];
                    }
                }
            }
            for k in 0..=i {
                v[[k, i + 1]] = 0.0;
            }
        }
        for j in 0..n {
            d[j] = v[[n - 1, j]];
            v[[n - 1, j]] = 0.0;
        }
        v[[n - 1, n - 1]] = 1.0;
        e[0] = 0.0;
    }

    fn tql2(v: &mut Array2<f64>, d: &mut [f64], e: &mut [f64]) -> Result<()> {
        let n = d.len();
        for i in 1..n {
            e[i - 1] = e[i];
        }
        e[n - 1] = 0.0;

        let mut f = 0.0;
        let mut tst1: f64 = 0.0;
        let eps = 2.0_f64.powi(-52);
        for l in 0..n {
            tst1 = tst1.max(d[l].abs() + e[l].abs());
            let mut m = l;
            while m < n {
                if e[m].abs() <= eps * tst1 {
                    break;
                }
                m += 1;
            }

            if m > l {
                let mut iter = 0;
                loop {
                    iter += 1;
                    if iter > 100 {
                        return Err(Error::Analysis(
                            "eigendecomposition did not converge".to_string(),
                        ));
                    }

                    let g = d[l];
                    let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                    let mut r = p.hypot(1.0);
                    if p < 0.0 {
                        r = -r;
                    }
                    d[l] = e[l] / (p + r);
                    d[l + 1] = e[l] * (p + r);
                    let dl1 = d[l + 1];
                    let mut h = g - d[l];
                    for item in d.iter_mut().take(n).skip(l + 2) {
                        *item -= h;
                    }
                    f += h;

                    p = d[m];
                    let mut c = 1.0;
                    let mut c2 = c;
                    let mut c3 = c;
                    let el1 = e[l + 1];
                    let mut s = 0.0;
                    let mut s2 = 0.0;
                    for i in (l..m).rev() {
                        c3 = c2;
                        c2 = c;
                        s2 = s;
                        let g = c * e[i];
                        h = c * p;
                        r = p.hypot(e[i]);
                        e[i + 1] = s * r;
                        s = e[i] / r;
                        c = p / r;
                        p = c * d[i] - s * g;
                        d[i + 1] = h + s * (c * g + s * d[i]);

                        for k in 0..n {
                            h = v[[k, i + 1]];
                            v[[k, i + 1]] = s * v[[k, i]] + c * h;
                            v[[k, i]] = c * v[[k, i]] - s * h;
                        }
                    }
                    p = -s * s2 * c3 * el1 * e[l] / dl1;
                    e[l] = s * p;
                    d[l] = c * p;

                    if e[l].abs() <= eps * tst1 {
                        break;
                    }
                }
            }
            d[l] += f;
            e[l] = 0.0;
        }

        // Sort eigenvalues ascending, reordering the eigenvector columns.
        for i in 0..n.saturating_sub(1) {
            let mut k = i;
            let mut p = d[i];
            for j in (i + 1)..n {
                if d[j] < p {
                    k = j;
                    p = d[j];
                }
            }
            if k != i {
                d[k] = d[i];
                d[i] = p;
                for row in 0..n {
                    v.swap([row, i], [row, k]);
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Scatter output
// ---------------------------------------------------------------------------

/// Which figure's conventions apply to the scatter output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScatterMode {
    /// Domain-representation plot: `x,y,domain` rows, news excluded.
    Figure1,
    /// Relation-representation plot: `x,y,domain,label` rows.
    Figure2,
}

/// Serializes projected points with their metadata as CSV. In `Figure1` mode
/// news rows are filtered out; the second return value counts them.
pub fn emit_scatter_data(
    projection: &PcaProjection,
    vectors: &[InstanceVector],
    mode: ScatterMode,
) -> Result<(String, usize)> {
    if projection.points.len() != vectors.len() {
        return Err(Error::Shape(format!(
            "{} projected points but {} metadata rows",
            projection.points.len(),
            vectors.len()
        )));
    }
    if projection.axes.len() < 2 {
        return Err(Error::Analysis(
            "scatter output needs at least two components".to_string(),
        ));
    }

    let mut out = String::new();
    match mode {
        ScatterMode::Figure1 => out.push_str("x,y,domain\n"),
        ScatterMode::Figure2 => out.push_str("x,y,domain,label\n"),
    }
    let mut filtered = 0usize;
    for (point, vector) in projection.points.iter().zip(vectors) {
        if mode == ScatterMode::Figure1 && vector.domain == DomainId::News {
            filtered += 1;
            continue;
        }
        match mode {
            ScatterMode::Figure1 => {
                let _ = writeln!(out, "{},{},{}", point[0], point[1], vector.domain);
            }
            ScatterMode::Figure2 => {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    point[0],
                    point[1],
                    vector.domain,
                    vector.label.as_deref().unwrap_or("")
                );
            }
        }
    }
    Ok((out, filtered))
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// A minimal static SVG scatter plot; color tracks the domain (figure 1) or
/// the relation label (figure 2). Byte-deterministic for fixed inputs.
pub fn render_scatter_svg(
    projection: &PcaProjection,
    vectors: &[InstanceVector],
    mode: ScatterMode,
) -> Result<String> {
    if projection.points.len() != vectors.len() {
        return Err(Error::Shape("points and metadata disagree".to_string()));
    }
    let rows: Vec<(&Vec<f64>, &InstanceVector)> = projection
        .points
        .iter()
        .zip(vectors)
        .filter(|(_, v)| !(mode == ScatterMode::Figure1 && v.domain == DomainId::News))
        .collect();
    if rows.is_empty() {
        return Err(Error::Analysis("no points to plot".to_string()));
    }

    let mut keys: Vec<String> = rows
        .iter()
        .map(|(_, v)| match mode {
            ScatterMode::Figure1 => v.domain.name().to_string(),
            ScatterMode::Figure2 => v.label.clone().unwrap_or_default(),
        })
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    keys.sort();

    let (width, height, margin) = (640.0, 480.0, 40.0);
    let min = |f: fn(&(&Vec<f64>, &InstanceVector)) -> f64| {
        rows.iter().map(f).fold(f64::INFINITY, f64::min)
    };
    let max = |f: fn(&(&Vec<f64>, &InstanceVector)) -> f64| {
        rows.iter().map(f).fold(f64::NEG_INFINITY, f64::max)
    };
    let (x0, x1) = (min(|r| r.0[0]), max(|r| r.0[0]));
    let (y0, y1) = (min(|r| r.0[1]), max(|r| r.0[1]));
    let xspan = (x1 - x0).max(1e-12);
    let yspan = (y1 - y0).max(1e-12);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white" stroke="black"/>"#
    );
    for (point, vector) in &rows {
        let key = match mode {
            ScatterMode::Figure1 => vector.domain.name().to_string(),
            ScatterMode::Figure2 => vector.label.clone().unwrap_or_default(),
        };
        let color_index = keys.iter().position(|k| *k == key).unwrap_or(0);
        let cx = margin + (point[0] - x0) / xspan * (width - 2.0 * margin);
        let cy = height - margin - (point[1] - y0) / yspan * (height - 2.0 * margin);
        let _ = writeln!(
            svg,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3" fill="{}" fill-opacity="0.7"/>"#,
            PALETTE[color_index % PALETTE.len()]
        );
    }
    for (i, key) in keys.iter().enumerate() {
        let y = margin + 14.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<circle cx="{}" cy="{y:.2}" r="4" fill="{}"/><text x="{}" y="{:.2}" font-size="11">{key}</text>"#,
            width - margin - 110.0,
            PALETTE[i % PALETTE.len()],
            width - margin - 100.0,
            y + 4.0
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
