//! Multi-view datasets: CSV directory layout, observation masks, missing
//! view filling and a synthetic Gaussian-blob generator.
//!
//! A dataset directory holds `view1.csv … viewV.csv` (one instance per row,
//! no header), `labels.csv` (one integer per line), an optional `mask.csv`
//! (N×V of 0/1) and `meta.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Matrix;
use crate::rng::{self, Stream};

/// One feature matrix per view, all sharing the instance count.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewSet {
    views: Vec<Matrix>,
}

impl ViewSet {
    pub fn new(views: Vec<Matrix>) -> Result<Self> {
        let Some(first) = views.first() else {
            return Err(Error::Data("a dataset needs at least one view".into()));
        };
        let n = first.rows();
        for (v, x) in views.iter().enumerate() {
            if x.rows() != n {
                return Err(Error::Format(format!(
                    "view {} has {} rows, view 1 has {n}",
                    v + 1,
                    x.rows()
                )));
            }
            if !x.is_finite() {
                return Err(Error::Data(format!("view {} contains non-finite values", v + 1)));
            }
        }
        Ok(ViewSet { views })
    }

    pub fn n(&self) -> usize {
        self.views[0].rows()
    }

    pub fn n_views(&self) -> usize {
        self.views.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.views.iter().map(Matrix::cols).collect()
    }

    pub fn view(&self, v: usize) -> &Matrix {
        &self.views[v]
    }

    pub fn views(&self) -> &[Matrix] {
        &self.views
    }

    pub fn into_views(self) -> Vec<Matrix> {
        self.views
    }
}

/// N×V observation flags, `true` = observed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObservationMask {
    n: usize,
    n_views: usize,
    observed: Vec<bool>,
}

impl ObservationMask {
    pub fn full(n: usize, n_views: usize) -> Self {
        ObservationMask {
            n,
            n_views,
            observed: vec![true; n * n_views],
        }
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let n_views = rows.first().map_or(0, Vec::len);
        let mut observed = Vec::with_capacity(rows.len() * n_views);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n_views {
                return Err(Error::Format(format!(
                    "mask row {} has {} entries, expected {n_views}",
                    i + 1,
                    r.len()
                )));
            }
            observed.extend_from_slice(r);
        }
        let mask = ObservationMask {
            n: rows.len(),
            n_views,
            observed,
        };
        mask.validate()?;
        Ok(mask)
    }

    /// Every instance must be observed in at least one view.
    pub fn validate(&self) -> Result<()> {
        for i in 0..self.n {
            if !self.row(i).iter().any(|&o| o) {
                return Err(Error::Data(format!("instance {i} is missing in every view")));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    #[inline]
    pub fn is_observed(&self, i: usize, v: usize) -> bool {
        self.observed[i * self.n_views + v]
    }

    pub fn set(&mut self, i: usize, v: usize, observed: bool) {
        self.observed[i * self.n_views + v] = observed;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.observed[i * self.n_views..(i + 1) * self.n_views]
    }

    pub fn view_column(&self, v: usize) -> Vec<bool> {
        (0..self.n).map(|i| self.is_observed(i, v)).collect()
    }

    pub fn is_complete(&self, i: usize) -> bool {
        self.row(i).iter().all(|&o| o)
    }

    pub fn incomplete_count(&self) -> usize {
        (0..self.n).filter(|&i| !self.is_complete(i)).count()
    }

    /// `(n - m) / n` with `m` the number of complete instances.
    pub fn missing_rate(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.incomplete_count() as f64 / self.n as f64
        }
    }
}

/// Ground-truth or predicted cluster ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Labels(pub Vec<usize>);

impl Labels {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// `max id + 1`.
    pub fn n_clusters(&self) -> usize {
        self.0.iter().max().map_or(0, |m| m + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    pub views: usize,
    pub clusters: usize,
    pub dims: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub views: ViewSet,
    pub labels: Labels,
    pub mask: Option<ObservationMask>,
}

impl Dataset {
    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            n: self.views.n(),
            views: self.views.n_views(),
            clusters: self.labels.n_clusters(),
            dims: self.views.dims(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LoadOptions {
    /// Min-max scale every feature of every view to [0, 1] over observed rows.
    pub scale: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { scale: true }
    }
}

/// Returns `x` formatted as the shortest decimal that parses back to the
/// same `f64`.
pub fn format_f64(x: f64) -> String {
    format!("{x:?}")
}

pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|&x| format_f64(x)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Writes through a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_rows<T>(
    path: &Path,
    text: &str,
    mut cell: impl FnMut(&str) -> Option<T>,
) -> Result<Vec<Vec<T>>> {
    let mut rows = Vec::new();
    let mut width = None;
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (col, raw) in line.split(',').enumerate() {
            let raw = raw.trim();
            let value = cell(raw).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: ln + 1,
                column: col + 1,
                message: format!("cannot parse `{raw}`"),
            })?;
            row.push(value);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: ln + 1,
                    column: row.len().min(w) + 1,
                    message: format!("expected {w} columns, found {}", row.len()),
                })
            }
            _ => {}
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let text = read_text(path)?;
    let rows = parse_rows(path, &text, |s| {
        s.parse::<f64>().ok().filter(|x| x.is_finite())
    })?;
    if rows.is_empty() {
        return Err(Error::Format(format!("{} is empty", path.display())));
    }
    Ok(Matrix::from_rows(&rows))
}

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    write_atomic(path, matrix_to_csv(m).as_bytes())
}

pub fn read_labels(path: &Path) -> Result<Labels> {
    let text = read_text(path)?;
    let rows = parse_rows(path, &text, |s| s.parse::<usize>().ok())?;
    let mut out = Vec::with_capacity(rows.len());
    for (i, r) in rows.into_iter().enumerate() {
        if r.len() != 1 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                column: 2,
                message: "expected one label per line".into(),
            });
        }
        out.push(r[0]);
    }
    Ok(Labels(out))
}

pub fn labels_to_csv(labels: &Labels) -> String {
    labels.0.iter().map(|l| format!("{l}\n")).collect()
}

pub fn write_labels(path: &Path, labels: &Labels) -> Result<()> {
    write_atomic(path, labels_to_csv(labels).as_bytes())
}

pub fn read_mask(path: &Path) -> Result<ObservationMask> {
    let text = read_text(path)?;
    let rows = parse_rows(path, &text, |s| match s {
        "0" => Some(false),
        "1" => Some(true),
        _ => None,
    })?;
    ObservationMask::from_rows(&rows)
}

pub fn mask_to_csv(mask: &ObservationMask) -> String {
    let mut out = String::new();
    for i in 0..mask.n() {
        let cells: Vec<&str> = mask.row(i).iter().map(|&o| if o { "1" } else { "0" }).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_mask(path: &Path, mask: &ObservationMask) -> Result<()> {
    write_atomic(path, mask_to_csv(mask).as_bytes())
}

fn view_path(dir: &Path, v: usize) -> PathBuf {
    dir.join(format!("view{}.csv", v + 1))
}

/// Loads a dataset directory. Views are optionally min-max scaled, then the
/// rows a mask marks missing are zero-filled.
pub fn load_dataset(dir: &Path, options: LoadOptions) -> Result<Dataset> {
    let mut views = Vec::new();
    while view_path(dir, views.len()).exists() {
        views.push(read_matrix(&view_path(dir, views.len()))?);
    }
    if views.is_empty() {
        return Err(Error::Format(format!("no view1.csv in {}", dir.display())));
    }
    let views = ViewSet::new(views)?;
    let labels = read_labels(&dir.join("labels.csv"))?;
    if labels.len() != views.n() {
        return Err(Error::Format(format!(
            "labels.csv has {} rows, views have {}",
            labels.len(),
            views.n()
        )));
    }
    let mask_path = dir.join("mask.csv");
    let mask = if mask_path.exists() {
        let m = read_mask(&mask_path)?;
        if m.n() != views.n() || m.n_views() != views.n_views() {
            return Err(Error::Format(format!(
                "mask.csv is {}x{}, expected {}x{}",
                m.n(),
                m.n_views(),
                views.n(),
                views.n_views()
            )));
        }
        Some(m)
    } else {
        None
    };
    let meta_path = dir.join("meta.json");
    if meta_path.exists() {
        let meta: DatasetMeta = serde_json::from_str(&read_text(&meta_path)?)?;
        if meta.n != views.n() || meta.views != views.n_views() || meta.dims != views.dims() {
            return Err(Error::Format(format!(
                "meta.json disagrees with data files: {meta:?}"
            )));
        }
    }

    let full = ObservationMask::full(views.n(), views.n_views());
    let observed = mask.as_ref().unwrap_or(&full);
    let views = if options.scale {
        minmax_scale(&views, observed)
    } else {
        views
    };
    let views = zero_fill(&views, observed);
    Ok(Dataset {
        views,
        labels,
        mask,
    })
}

pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (v, x) in dataset.views.views().iter().enumerate() {
        write_matrix(&view_path(dir, v), x)?;
    }
    write_labels(&dir.join("labels.csv"), &dataset.labels)?;
    if let Some(mask) = &dataset.mask {
        write_mask(&dir.join("mask.csv"), mask)?;
    }
    let meta = serde_json::to_string_pretty(&dataset.meta())?;
    write_atomic(&dir.join("meta.json"), format!("{meta}\n").as_bytes())
}

/// Marks `⌊eta·N⌋` instances, drawn without replacement, as missing exactly
/// one uniformly chosen view.
pub fn make_mask(n: usize, n_views: usize, eta: f64, seed: u64) -> Result<ObservationMask> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Config(format!("missing rate must lie in [0,1], got {eta}")));
    }
    if n_views < 2 {
        return Err(Error::Config(format!(
            "missing views need at least 2 views, got {n_views}"
        )));
    }
    // tolerate products like 0.29 * 100 = 28.999999999999996
    let n_missing = ((eta * n as f64 + 1e-9).floor() as usize).min(n);
    let mut rng = rng::stream(seed, Stream::Mask);
    let mut chosen = index::sample(&mut rng, n, n_missing).into_vec();
    chosen.sort_unstable();
    let mut mask = ObservationMask::full(n, n_views);
    for i in chosen {
        let v = rng.random_range(0..n_views);
        mask.set(i, v, false);
    }
    Ok(mask)
}

/// Zeroes the rows of each view that the mask marks missing.
pub fn zero_fill(views: &ViewSet, mask: &ObservationMask) -> ViewSet {
    let views = views
        .views()
        .iter()
        .enumerate()
        .map(|(v, x)| {
            let mut x = x.clone();
            for i in (0..x.rows()).filter(|&i| !mask.is_observed(i, v)) {
                x.row_mut(i).fill(0.0);
            }
            x
        })
        .collect();
    ViewSet { views }
}

/// Replaces missing rows by the per-feature mean of the observed rows.
pub fn mean_impute(views: &ViewSet, mask: &ObservationMask) -> ViewSet {
    let views = views
        .views()
        .iter()
        .enumerate()
        .map(|(v, x)| {
            let observed: Vec<usize> = (0..x.rows()).filter(|&i| mask.is_observed(i, v)).collect();
            let mut mean = vec![0.0; x.cols()];
            for &i in &observed {
                for (m, val) in mean.iter_mut().zip(x.row(i)) {
                    *m += val;
                }
            }
            let count = observed.len().max(1) as f64;
            mean.iter_mut().for_each(|m| *m /= count);
            let mut x = x.clone();
            for i in (0..x.rows()).filter(|&i| !mask.is_observed(i, v)) {
                x.row_mut(i).copy_from_slice(&mean);
            }
            x
        })
        .collect();
    ViewSet { views }
}

/// Per-feature min-max scaling to [0,1], fitted on observed rows. Constant
/// features map to 0.
pub fn minmax_scale(views: &ViewSet, mask: &ObservationMask) -> ViewSet {
    let views = views
        .views()
        .iter()
        .enumerate()
        .map(|(v, x)| {
            let mut lo = vec![f64::INFINITY; x.cols()];
            let mut hi = vec![f64::NEG_INFINITY; x.cols()];
            for i in (0..x.rows()).filter(|&i| mask.is_observed(i, v)) {
                for (j, &val) in x.row(i).iter().enumerate() {
                    lo[j] = lo[j].min(val);
                    hi[j] = hi[j].max(val);
                }
            }
            Matrix::from_fn(x.rows(), x.cols(), |i, j| {
                let range = hi[j] - lo[j];
                if range > 0.0 {
                    (x[(i, j)] - lo[j]) / range
                } else {
                    0.0
                }
            })
        })
        .collect();
    ViewSet { views }
}

/// Parameters of the Gaussian-blob generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub views: usize,
    pub clusters: usize,
    /// Feature count per view; a single entry applies to every view.
    pub dims: Vec<usize>,
    pub noise_sigma: f64,
    /// Apply an independent random rotation to each view.
    pub rotate: bool,
    pub seed: u64,
}

impl SynthSpec {
    pub fn blobs(n: usize, views: usize, clusters: usize, dim: usize, sigma: f64, seed: u64) -> Self {
        SynthSpec {
            n,
            views,
            clusters,
            dims: vec![dim],
            noise_sigma: sigma,
            rotate: true,
            seed,
        }
    }

    fn dim(&self, v: usize) -> usize {
        if self.dims.len() == 1 {
            self.dims[0]
        } else {
            self.dims[v]
        }
    }
}

const MAX_CENTER_ATTEMPTS: usize = 100;

fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        z * scale
    })
}

/// Orthonormal rows from Gram-Schmidt on a Gaussian matrix.
fn random_rotation(rng: &mut impl Rng, d: usize) -> Matrix {
    loop {
        let mut q = gaussian_matrix(rng, d, d, 1.0);
        let mut ok = true;
        for i in 0..d {
            for k in 0..i {
                let dot: f64 = q.row(i).iter().zip(q.row(k)).map(|(a, b)| a * b).sum();
                let prev = q.row(k).to_vec();
                for (x, p) in q.row_mut(i).iter_mut().zip(&prev) {
                    *x -= dot * p;
                }
            }
            let norm = q.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            q.row_mut(i).iter_mut().for_each(|x| *x /= norm);
        }
        if ok {
            return q;
        }
    }
}

/// Balanced Gaussian blobs seen through `views` independently placed and
/// rotated coordinate systems. Every view shares the same label partition.
pub fn synth_blobs(spec: &SynthSpec) -> Result<(ViewSet, Labels)> {
    let SynthSpec {
        n,
        views,
        clusters,
        noise_sigma: sigma,
        ..
    } = *spec;
    if clusters == 0 || views == 0 {
        return Err(Error::Config("clusters and views must be positive".into()));
    }
    if spec.dims.len() != 1 && spec.dims.len() != views {
        return Err(Error::Config(format!(
            "{} dims given for {views} views",
            spec.dims.len()
        )));
    }
    if spec.dims.contains(&0) {
        return Err(Error::Config("view dimensions must be positive".into()));
    }
    if n < clusters * views {
        return Err(Error::Config(format!(
            "need N >= C*V = {}, got {n}",
            clusters * views
        )));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("noise sigma must be >= 0, got {sigma}")));
    }

    let mut rng = rng::stream(spec.seed, Stream::Synth);
    let mut labels: Vec<usize> = (0..n).map(|i| i % clusters).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        labels.swap(i, j);
    }

    let spread = if sigma > 0.0 { 2.0 * sigma } else { 1.0 };
    let min_gap = 6.0 * sigma;
    let mut out = Vec::with_capacity(views);
    for v in 0..views {
        let d = spec.dim(v);
        let centers = (0..MAX_CENTER_ATTEMPTS)
            .map(|_| gaussian_matrix(&mut rng, clusters, d, spread))
            .find(|c| {
                (0..clusters).all(|a| {
                    (a + 1..clusters).all(|b| {
                        let dist = c
                            .row(a)
                            .iter()
                            .zip(c.row(b))
                            .map(|(x, y)| (x - y) * (x - y))
                            .sum::<f64>()
                            .sqrt();
                        dist >= min_gap && dist > 0.0
                    })
                })
            })
            .ok_or_else(|| {
                Error::Generation(format!(
                    "no center layout with separation {min_gap} after {MAX_CENTER_ATTEMPTS} attempts"
                ))
            })?;
        let rotation = if spec.rotate {
            Some(random_rotation(&mut rng, d))
        } else {
            None
        };
        let mut x = Matrix::zeros(n, d);
        for (i, &label) in labels.iter().enumerate() {
            for j in 0..d {
                let z: f64 = rng.sample(StandardNormal);
                x[(i, j)] = centers[(label, j)] + sigma * z;
            }
        }
        if let Some(r) = rotation {
            x = x.matmul(&r)?;
        }
        out.push(x);
    }
    Ok((ViewSet::new(out)?, Labels(labels)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_boundaries() {
        let m = make_mask(10, 2, 0.0, 3).unwrap();
        assert_eq!(m, ObservationMask::full(10, 2));
        let m = make_mask(10, 2, 1.0, 3).unwrap();
        for i in 0..10 {
            assert_eq!(m.row(i).iter().filter(|&&o| o).count(), 1);
        }
        assert!(matches!(make_mask(10, 2, 1.5, 0), Err(Error::Config(_))));
        assert!(matches!(make_mask(10, 2, -0.1, 0), Err(Error::Config(_))));
        assert!(matches!(make_mask(10, 1, 0.3, 0), Err(Error::Config(_))));
    }

    #[test]
    fn mask_counts_over_seeds() {
        for seed in 0..100 {
            let m = make_mask(10, 3, 0.3, seed).unwrap();
            assert_eq!(m.incomplete_count(), 3);
            for i in (0..10).filter(|&i| !m.is_complete(i)) {
                assert_eq!(m.row(i).iter().filter(|&&o| o).count(), 2);
            }
        }
    }

    #[test]
    fn mask_rate_uses_floor() {
        assert_eq!(make_mask(100, 2, 0.29, 1).unwrap().incomplete_count(), 29);
        assert_eq!(make_mask(7, 2, 0.5, 1).unwrap().incomplete_count(), 3);
    }

    #[test]
    fn zero_fill_contract() {
        let x1 = Matrix::from_fn(4, 2, |i, j| (i + j + 1) as f64);
        let x2 = Matrix::from_fn(4, 3, |i, j| (i * j + 1) as f64);
        let vs = ViewSet::new(vec![x1.clone(), x2.clone()]).unwrap();
        assert_eq!(zero_fill(&vs, &ObservationMask::full(4, 2)), vs);
        let mut mask = ObservationMask::full(4, 2);
        mask.set(3, 1, false);
        let z = zero_fill(&vs, &mask);
        assert_eq!(z.view(1).row(3), &[0.0, 0.0, 0.0]);
        assert_eq!(z.view(0), &x1);
        assert_eq!(z.view(1).row(2), x2.row(2));
        assert_eq!(zero_fill(&z, &mask), z);
    }

    #[test]
    fn mean_impute_uses_observed_rows() {
        let x = Matrix::from_rows(&[[1.0], [3.0], [100.0]]);
        let vs = ViewSet::new(vec![x.clone(), x]).unwrap();
        let mut mask = ObservationMask::full(3, 2);
        mask.set(2, 0, false);
        let imp = mean_impute(&vs, &mask);
        assert_eq!(imp.view(0)[(2, 0)], 2.0);
        assert_eq!(imp.view(1)[(2, 0)], 100.0);
    }

    #[test]
    fn minmax_scale_ignores_missing_rows() {
        let x = Matrix::from_rows(&[[1.0, 5.0], [3.0, 5.0], [-50.0, 0.0]]);
        let vs = ViewSet::new(vec![x]).unwrap();
        let mut mask = ObservationMask::full(3, 1);
        mask.set(2, 0, false);
        let s = minmax_scale(&vs, &mask);
        assert_eq!(s.view(0).row(0), &[0.0, 0.0]);
        assert_eq!(s.view(0).row(1), &[1.0, 0.0]);
    }

    #[test]
    fn synth_is_deterministic_and_balanced() {
        let spec = SynthSpec::blobs(31, 2, 3, 4, 0.5, 11);
        let (a, la) = synth_blobs(&spec).unwrap();
        let (b, lb) = synth_blobs(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
        let mut counts = [0usize; 3];
        for &l in la.as_slice() {
            counts[l] += 1;
        }
        assert!(counts.iter().all(|&c| c == 10 || c == 11), "{counts:?}");
        assert_eq!(a.dims(), vec![4, 4]);
    }

    #[test]
    fn synth_zero_noise_points_coincide_per_cluster() {
        let spec = SynthSpec::blobs(12, 2, 3, 5, 0.0, 2);
        let (vs, labels) = synth_blobs(&spec).unwrap();
        for v in 0..2 {
            let x = vs.view(v);
            for i in 0..12 {
                for j in 0..12 {
                    let same = x.row(i) == x.row(j);
                    assert_eq!(same, labels.0[i] == labels.0[j]);
                }
            }
        }
    }

    #[test]
    fn synth_validation() {
        assert!(synth_blobs(&SynthSpec::blobs(10, 2, 0, 3, 0.5, 0)).is_err());
        assert!(synth_blobs(&SynthSpec::blobs(5, 2, 3, 3, 0.5, 0)).is_err());
        assert!(synth_blobs(&SynthSpec::blobs(10, 2, 3, 3, -1.0, 0)).is_err());
    }

    #[test]
    fn synth_reports_infeasible_separation() {
        // one dimension and many clusters cannot reach 6-sigma gaps with a 2-sigma spread
        let spec = SynthSpec {
            rotate: false,
            ..SynthSpec::blobs(200, 2, 20, 1, 1.0, 0)
        };
        assert!(matches!(synth_blobs(&spec), Err(Error::Generation(_))));
    }

    #[test]
    fn format_roundtrips() {
        for x in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, 123456789.125] {
            assert_eq!(format_f64(x).parse::<f64>().unwrap(), x);
        }
    }
}
