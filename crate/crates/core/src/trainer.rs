//! Graph preparation, the full-batch joint optimization loop, k-means and
//! the mean-impute k-means baselines.

use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::{self, Labels, ObservationMask, ViewSet};
use crate::error::{Error, Result};
use crate::graphs::{self, AdjacencySet, PropagationOperator, TransferRule};
use crate::metrics::{self, MetricsReport};
use crate::network::{self, Architecture, ModelParams};
use crate::numkit::{Adam, Matrix, Tape, Var};
use crate::objectives::{self, GuidanceReduction, LossBreakdown, LossFlags, LossSettings};
use crate::rng::{self, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Neighbors per instance in the KNN graphs.
    pub knn: usize,
    /// RBF bandwidth; `None` uses the median squared distance per view.
    pub bandwidth: Option<f64>,
    pub lr: f64,
    pub epochs: usize,
    pub tau_i: f64,
    pub tau_c: f64,
    pub tau_att: f64,
    pub hidden: usize,
    pub projection: usize,
    pub layers: usize,
    pub fusion_hidden: usize,
    pub seed: u64,
    pub flags: LossFlags,
    pub transfer: TransferRule,
    /// Keep the `j = i` term in the same-view contrastive denominator.
    pub include_self: bool,
    pub guidance: GuidanceReduction,
    /// Epochs between target distribution refreshes.
    pub target_interval: usize,
    pub kmeans_restarts: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            knn: 10,
            bandwidth: None,
            lr: 0.001,
            epochs: 500,
            tau_i: 1.0,
            tau_c: 0.5,
            tau_att: 1.0,
            hidden: 128,
            projection: 64,
            layers: 2,
            fusion_hidden: 128,
            seed: 0,
            flags: LossFlags::default(),
            transfer: TransferRule::Copy,
            include_self: true,
            guidance: GuidanceReduction::default(),
            target_interval: 1,
            kmeans_restarts: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        for (name, tau) in [("tau_i", self.tau_i), ("tau_c", self.tau_c), ("tau_att", self.tau_att)] {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {tau}")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.knn < 1 {
            return Err(Error::Config("knn must be at least 1".into()));
        }
        if self.layers < 1 {
            return Err(Error::Config("at least one GCN layer is required".into()));
        }
        if self.target_interval < 1 || self.kmeans_restarts < 1 {
            return Err(Error::Config(
                "target_interval and kmeans_restarts must be at least 1".into(),
            ));
        }
        if let Some(t) = self.bandwidth {
            if !(t > 0.0) {
                return Err(Error::Config(format!("bandwidth must be positive, got {t}")));
            }
        }
        self.flags.validate()
    }

    pub fn architecture(&self, view_dims: Vec<usize>, clusters: usize) -> Architecture {
        Architecture {
            view_dims,
            hidden: self.hidden,
            projection: self.projection,
            layers: self.layers,
            clusters,
            fusion_hidden: self.fusion_hidden,
        }
    }

    fn loss_settings(&self) -> LossSettings {
        LossSettings {
            tau_i: self.tau_i,
            tau_c: self.tau_c,
            include_self: self.include_self,
            guidance: self.guidance,
            flags: self.flags,
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Graphs and model inputs derived from a dataset and its mask.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub adjacency: AdjacencySet,
    pub operators: Vec<PropagationOperator>,
    /// Views with missing rows zero-filled.
    pub inputs: ViewSet,
}

pub fn prepare(views: &ViewSet, mask: &ObservationMask, config: &TrainConfig) -> Result<Prepared> {
    if mask.n() != views.n() || mask.n_views() != views.n_views() {
        return Err(Error::Data(format!(
            "mask is {}x{}, data has {} instances and {} views",
            mask.n(),
            mask.n_views(),
            views.n(),
            views.n_views()
        )));
    }
    mask.validate()?;
    let (adjacency, operators) = graphs::build_operators(
        views.views(),
        mask,
        config.knn,
        config.bandwidth,
        config.transfer,
    )?;
    Ok(Prepared {
        adjacency,
        operators,
        inputs: dataio::zero_fill(views, mask),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub metrics: Option<EpochMetrics>,
}

/// Soft assignments of every view and of the fused representation.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentBundle {
    pub views: Vec<Matrix>,
    pub fused: Matrix,
}

#[derive(Clone, Debug)]
pub struct TrainResult {
    pub labels: Labels,
    pub assignments: AssignmentBundle,
    /// Fused representation `H` after the last update.
    pub embedding: Matrix,
    /// N×V attention weights after the last update.
    pub attention: Matrix,
    pub history: Vec<EpochRecord>,
    /// Final metrics when truth labels were supplied.
    pub metrics: Option<MetricsReport>,
    pub params: ModelParams,
    pub config: TrainConfig,
    pub wall_time: Duration,
}

struct Snapshot {
    y_views: Vec<Matrix>,
    y_fused: Matrix,
    fused: Matrix,
    attention: Matrix,
}

fn bind_inputs(tape: &mut Tape, prepared: &Prepared) -> (Vec<Var>, Vec<Var>) {
    let xs = prepared
        .inputs
        .views()
        .iter()
        .map(|x| tape.constant(x.clone()))
        .collect();
    let ops = prepared
        .operators
        .iter()
        .map(|op| tape.constant(op.matrix().clone()))
        .collect();
    (xs, ops)
}

fn snapshot(tape: &Tape, fwd: &network::Forward) -> Snapshot {
    Snapshot {
        y_views: fwd.y_views.iter().map(|&y| tape.value(y).clone()).collect(),
        y_fused: tape.value(fwd.y_fused).clone(),
        fused: tape.value(fwd.fusion.fused).clone(),
        attention: tape.value(fwd.fusion.weights).clone(),
    }
}

fn hard_labels(
    snap: &Snapshot,
    config: &TrainConfig,
    clusters: usize,
    restarts: usize,
) -> Result<Labels> {
    if config.flags.use_clu {
        Ok(metrics::labels_from_assignment(&snap.y_fused))
    } else {
        Ok(kmeans(&snap.fused, clusters, config.seed, restarts)?.labels)
    }
}

/// Trains on already prepared graphs.
pub fn train_prepared(
    prepared: &Prepared,
    clusters: usize,
    config: &TrainConfig,
    truth: Option<&Labels>,
) -> Result<TrainResult> {
    config.validate()?;
    let started = Instant::now();
    let n = prepared.inputs.n();
    if clusters < 1 || clusters > n {
        return Err(Error::Config(format!("cluster count {clusters} out of range for N = {n}")));
    }
    if let Some(t) = truth {
        if t.len() != n {
            return Err(Error::Data(format!("{} labels for {n} instances", t.len())));
        }
    }
    let arch = config.architecture(prepared.inputs.dims(), clusters);
    let mut params = ModelParams::init(&arch, config.seed)?;
    let mut adam = Adam::new(config.lr)?;
    let settings = config.loss_settings();
    let mut target: Option<Matrix> = None;
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let (xs, ops) = bind_inputs(&mut tape, prepared);
        let fwd = network::forward(&mut tape, &bound, &xs, &ops, config.tau_att)?;

        let outputs = fwd.z_views.iter().chain(&fwd.y_views).chain([&fwd.y_fused]);
        if outputs.into_iter().any(|&v| !tape.value(v).is_finite()) {
            return Err(Error::Divergence {
                epoch: epoch + 1,
                l_ins: f64::NAN,
                l_clu: f64::NAN,
                l_hg: f64::NAN,
                total: f64::NAN,
            });
        }
        if config.flags.use_hg && (target.is_none() || epoch % config.target_interval == 0) {
            let mut sources: Vec<&Matrix> = fwd.y_views.iter().map(|&y| tape.value(y)).collect();
            sources.push(tape.value(fwd.y_fused));
            target = Some(objectives::high_confidence_target(&sources)?.p);
        }
        let (total, losses) = objectives::total_loss(
            &mut tape,
            &fwd.z_views,
            &fwd.y_views,
            fwd.y_fused,
            target.as_ref(),
            &settings,
        )?;
        if !losses.is_finite() {
            return Err(Error::Divergence {
                epoch: epoch + 1,
                l_ins: losses.l_ins,
                l_clu: losses.l_clu,
                l_hg: losses.l_hg,
                total: losses.total,
            });
        }

        let metrics = match truth {
            Some(t) => {
                let snap = snapshot(&tape, &fwd);
                let pred = hard_labels(&snap, config, clusters, 1)?;
                let report = metrics::evaluate(&pred, t)?;
                Some(EpochMetrics {
                    acc: report.acc,
                    nmi: report.nmi,
                    ari: report.ari,
                })
            }
            None => None,
        };
        history.push(EpochRecord {
            epoch: epoch + 1,
            losses,
            metrics,
        });

        let grads = tape.backward(total)?;
        let grads: Vec<Matrix> = bound.values().into_iter().map(|&v| grads.get(v)).collect();
        adam.step(&mut params.values_mut(), &grads)?;
    }

    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let (xs, ops) = bind_inputs(&mut tape, prepared);
    let fwd = network::forward(&mut tape, &bound, &xs, &ops, config.tau_att)?;
    let snap = snapshot(&tape, &fwd);
    let labels = hard_labels(&snap, config, clusters, config.kmeans_restarts)?;
    let metrics = truth.map(|t| metrics::evaluate(&labels, t)).transpose()?;

    Ok(TrainResult {
        labels,
        assignments: AssignmentBundle {
            views: snap.y_views,
            fused: snap.y_fused,
        },
        embedding: snap.fused,
        attention: snap.attention,
        history,
        metrics,
        params,
        config: config.clone(),
        wall_time: started.elapsed(),
    })
}

/// Builds the graphs, then trains. `truth` only adds metric columns.
pub fn train(
    views: &ViewSet,
    mask: &ObservationMask,
    clusters: usize,
    config: &TrainConfig,
    truth: Option<&Labels>,
) -> Result<TrainResult> {
    config.validate()?;
    let prepared = prepare(views, mask, config)?;
    train_prepared(&prepared, clusters, config, truth)
}

/// Ablation variant of [`train`]: the config's flags select the loss terms,
/// and without the clustering term labels come from k-means on `H`.
pub fn train_ablation(
    views: &ViewSet,
    mask: &ObservationMask,
    clusters: usize,
    config: &TrainConfig,
    truth: Option<&Labels>,
) -> Result<TrainResult> {
    config.flags.validate()?;
    train(views, mask, clusters, config, truth)
}

/// The four loss configurations of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Ablation {
    Full,
    NoIns,
    NoHg,
    NoHgNoClu,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::NoIns,
        Ablation::NoHg,
        Ablation::NoHgNoClu,
    ];

    pub fn flags(self) -> LossFlags {
        let all = LossFlags::default();
        match self {
            Ablation::Full => all,
            Ablation::NoIns => LossFlags {
                use_ins: false,
                ..all
            },
            Ablation::NoHg => LossFlags {
                use_hg: false,
                ..all
            },
            Ablation::NoHgNoClu => LossFlags {
                use_hg: false,
                use_clu: false,
                ..all
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoIns => "no-ins",
            Ablation::NoHg => "no-hg",
            Ablation::NoHgNoClu => "no-hg-no-clu",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansResult {
    pub labels: Labels,
    pub centers: Matrix,
    pub inertia: f64,
}

pub const KMEANS_MAX_ITER: usize = 300;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centers: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.row_iter().enumerate() {
        let d = sq_dist(x, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_seed(x: &Matrix, k: usize, rng: &mut impl Rng) -> Matrix {
    let n = x.rows();
    let mut chosen = vec![false; n];
    let mut centers = Matrix::zeros(k, x.cols());
    let first = rng.random_range(0..n);
    chosen[first] = true;
    centers.row_mut(0).copy_from_slice(x.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if r < d {
                        break;
                    }
                    r -= d;
                }
            }
            pick.expect("positive total has a positive entry")
        } else {
            // every point coincides with a center: take an unused index
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centers.row_mut(c).copy_from_slice(x.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.row(i), x.row(pick)));
        }
    }
    centers
}

fn lloyd(x: &Matrix, mut centers: Matrix) -> KMeansResult {
    let (n, k) = (x.rows(), centers.rows());
    let mut labels = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (i, l) in labels.iter_mut().enumerate() {
            let (c, _) = nearest(x.row(i), &centers);
            if *l != c {
                *l = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = Matrix::zeros(k, x.cols());
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, v) in sums.row_mut(l).iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in (0..k).filter(|&c| counts[c] > 0) {
            let inv = 1.0 / counts[c] as f64;
            for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                *dst = s * inv;
            }
        }
    }
    let inertia = (0..n)
        .map(|i| sq_dist(x.row(i), centers.row(labels[i])))
        .sum();
    KMeansResult {
        labels: Labels(labels),
        centers,
        inertia,
    }
}

/// Lloyd's algorithm from k-means++ seeds; the lowest-inertia restart wins.
pub fn kmeans(x: &Matrix, k: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    if k == 0 || k > x.rows() {
        return Err(Error::Config(format!(
            "k-means needs 1 <= k <= N, got k = {k}, N = {}",
            x.rows()
        )));
    }
    let mut rng = rng::stream(seed, Stream::KMeans);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let run = lloyd(x, plus_plus_seed(x, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    /// Best single view.
    Bsv,
    /// All views concatenated.
    Concat,
}

/// Mean-impute missing rows, then k-means. BSV reports the view with the
/// highest accuracy.
pub fn baseline(
    views: &ViewSet,
    mask: &ObservationMask,
    truth: &Labels,
    clusters: usize,
    kind: Baseline,
    seed: u64,
    restarts: usize,
) -> Result<MetricsReport> {
    let imputed = dataio::mean_impute(views, mask);
    match kind {
        Baseline::Concat => {
            let parts: Vec<&Matrix> = imputed.views().iter().collect();
            let x = Matrix::hstack(&parts)?;
            let labels = kmeans(&x, clusters, seed, restarts)?.labels;
            metrics::evaluate(&labels, truth)
        }
        Baseline::Bsv => {
            let mut best: Option<MetricsReport> = None;
            for x in imputed.views() {
                let labels = kmeans(x, clusters, seed, restarts)?.labels;
                let report = metrics::evaluate(&labels, truth)?;
                if best.as_ref().is_none_or(|b| report.acc > b.acc) {
                    best = Some(report);
                }
            }
            best.ok_or_else(|| Error::Data("no views".into()))
        }
    }
}

pub const HISTORY_HEADER: &str = "epoch,l_ins,l_clu,l_hg,total,acc,nmi,ari";

/// Loss and metric curves, one row per epoch. Metric cells are empty when no
/// truth labels were supplied.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let f = dataio::format_f64;
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for rec in history {
        let l = rec.losses;
        let _ = write!(out, "{},{},{},{},{}", rec.epoch, f(l.l_ins), f(l.l_clu), f(l.l_hg), f(l.total));
        match rec.metrics {
            Some(m) => {
                let _ = writeln!(out, ",{},{},{}", f(m.acc), f(m.nmi), f(m.ari));
            }
            None => out.push_str(",,,\n"),
        }
    }
    out
}

/// Deterministic summary of a run: final metrics (if scored), last losses
/// and the config hash. Wall time is left out so reruns are byte-identical.
pub fn metrics_json(result: &TrainResult) -> String {
    let last = result.history.last().map(|r| r.losses);
    let value = serde_json::json!({
        "acc": result.metrics.as_ref().map(|m| m.acc),
        "nmi": result.metrics.as_ref().map(|m| m.nmi),
        "ari": result.metrics.as_ref().map(|m| m.ari),
        "confusion": result.metrics.as_ref().map(|m| &m.confusion),
        "mapping": result.metrics.as_ref().map(|m| &m.mapping),
        "epochs": result.history.len(),
        "final_losses": last,
        "config_hash": result.config.hash(),
    });
    let mut text = serde_json::to_string_pretty(&value).expect("json value serializes");
    text.push('\n');
    text
}

pub const RUN_FILES: [&str; 3] = ["metrics.json", "history.csv", "labels.csv"];

/// Writes `metrics.json`, `history.csv`, `labels.csv`, the checkpoint under
/// `checkpoint/` and, if asked, `embeddings.csv` with the fused rows of `H`.
pub fn write_run(dir: &Path, result: &TrainResult, embeddings: bool) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    dataio::write_atomic(&dir.join("metrics.json"), metrics_json(result).as_bytes())?;
    dataio::write_atomic(&dir.join("history.csv"), history_csv(&result.history).as_bytes())?;
    dataio::write_labels(&dir.join("labels.csv"), &result.labels)?;
    if embeddings {
        dataio::write_matrix(&dir.join("embeddings.csv"), &result.embedding)?;
    }
    result
        .params
        .save_checkpoint(&dir.join("checkpoint"), &result.config.hash())
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One ablation configuration scored over several seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub acc: Vec<f64>,
    pub nmi: Vec<f64>,
    pub ari: Vec<f64>,
}

pub const ABLATION_HEADER: &str =
    "config,use_ins,use_clu,use_hg,runs,acc_mean,acc_std,nmi_mean,nmi_std,ari_mean,ari_std";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let f = dataio::format_f64;
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    for row in rows {
        let flags = row.ablation.flags();
        let _ = write!(
            out,
            "{},{},{},{},{}",
            row.ablation.name(),
            flags.use_ins as u8,
            flags.use_clu as u8,
            flags.use_hg as u8,
            row.acc.len()
        );
        for xs in [&row.acc, &row.nmi, &row.ari] {
            let (m, s) = mean_std(xs);
            let _ = write!(out, ",{},{}", f(m), f(s));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{synth_blobs, SynthSpec};

    fn small_config() -> TrainConfig {
        TrainConfig {
            knn: 3,
            epochs: 3,
            hidden: 8,
            projection: 4,
            fusion_hidden: 8,
            lr: 0.01,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = |f: fn(&mut TrainConfig)| {
            let mut c = TrainConfig::default();
            f(&mut c);
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        };
        bad(|c| c.epochs = 0);
        bad(|c| c.tau_c = 0.0);
        bad(|c| c.lr = -1.0);
        bad(|c| {
            c.flags = LossFlags {
                use_ins: true,
                use_clu: false,
                use_hg: true,
            }
        });
    }

    #[test]
    fn ablation_names_roundtrip() {
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
            assert!(a.flags().validate().is_ok());
        }
    }

    #[test]
    fn kmeans_trivial_cases() {
        let x = Matrix::from_rows(&[[0.0], [0.1], [10.0], [10.2]]);
        for seed in 0..10 {
            let r = kmeans(&x, 2, seed, 1).unwrap();
            let l = r.labels.as_slice();
            assert_eq!(l[0], l[1]);
            assert_eq!(l[2], l[3]);
            assert_ne!(l[0], l[2]);
        }
        let r = kmeans(&x, 4, 0, 1).unwrap();
        assert_eq!(r.inertia, 0.0);
        let mut l = r.labels.0.clone();
        l.sort_unstable();
        assert_eq!(l, vec![0, 1, 2, 3]);
        assert!(matches!(kmeans(&x, 5, 0, 1), Err(Error::Config(_))));
    }

    #[test]
    fn kmeans_beats_random_assignments() {
        let mut rng = rng::stream(5, Stream::Synth);
        let x = Matrix::from_fn(20, 3, |_, _| rng.random::<f64>());
        let best = kmeans(&x, 3, 1, 5).unwrap();
        for _ in 0..50 {
            let labels: Vec<usize> = (0..20).map(|_| rng.random_range(0..3)).collect();
            let mut inertia = 0.0;
            for c in 0..3 {
                let members: Vec<usize> = (0..20).filter(|&i| labels[i] == c).collect();
                if members.is_empty() {
                    continue;
                }
                let mut mean = [0.0; 3];
                for &i in &members {
                    for j in 0..3 {
                        mean[j] += x[(i, j)] / members.len() as f64;
                    }
                }
                inertia += members.iter().map(|&i| sq_dist(x.row(i), &mean)).sum::<f64>();
            }
            assert!(best.inertia <= inertia + 1e-12);
        }
    }

    #[test]
    fn baselines_on_noise_free_blobs() {
        let (views, truth) = synth_blobs(&SynthSpec::blobs(60, 2, 3, 5, 0.0, 3)).unwrap();
        let mask = ObservationMask::full(60, 2);
        for kind in [Baseline::Bsv, Baseline::Concat] {
            let r = baseline(&views, &mask, &truth, 3, kind, 0, 20).unwrap();
            assert_eq!(r.acc, 1.0, "{kind:?}");
        }
    }

    #[test]
    fn single_view_baselines_agree() {
        let (views, truth) = synth_blobs(&SynthSpec::blobs(40, 1, 2, 3, 0.8, 1)).unwrap();
        let mask = ObservationMask::full(40, 1);
        let a = baseline(&views, &mask, &truth, 2, Baseline::Bsv, 4, 5).unwrap();
        let b = baseline(&views, &mask, &truth, 2, Baseline::Concat, 4, 5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn one_epoch_runs_one_step() {
        let (views, truth) = synth_blobs(&SynthSpec::blobs(24, 2, 2, 3, 0.3, 1)).unwrap();
        let mask = dataio::make_mask(24, 2, 0.25, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            ..small_config()
        };
        let r = train(&views, &mask, 2, &cfg, Some(&truth)).unwrap();
        assert_eq!(r.history.len(), 1);
        assert!(r.history[0].metrics.is_some());
        assert_eq!(r.labels.len(), 24);
    }

    #[test]
    fn disabled_terms_record_zero() {
        let (views, _) = synth_blobs(&SynthSpec::blobs(24, 2, 2, 3, 0.3, 2)).unwrap();
        let mask = dataio::make_mask(24, 2, 0.25, 2).unwrap();
        for ablation in Ablation::ALL {
            let cfg = TrainConfig {
                flags: ablation.flags(),
                ..small_config()
            };
            let r = train_ablation(&views, &mask, 2, &cfg, None).unwrap();
            for rec in &r.history {
                let l = rec.losses;
                assert_eq!(l.l_ins == 0.0, !cfg.flags.use_ins, "{ablation:?}");
                assert_eq!(l.l_clu == 0.0, !cfg.flags.use_clu, "{ablation:?}");
                assert_eq!(l.l_hg == 0.0, !cfg.flags.use_hg, "{ablation:?}");
                assert!(rec.metrics.is_none());
            }
        }
    }

    #[test]
    fn illegal_flags_are_rejected() {
        let (views, _) = synth_blobs(&SynthSpec::blobs(12, 2, 2, 3, 0.3, 2)).unwrap();
        let mask = ObservationMask::full(12, 2);
        let cfg = TrainConfig {
            flags: LossFlags {
                use_ins: true,
                use_clu: false,
                use_hg: true,
            },
            ..small_config()
        };
        assert!(matches!(
            train_ablation(&views, &mask, 2, &cfg, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn divergence_is_reported() {
        let (views, _) = synth_blobs(&SynthSpec::blobs(12, 2, 2, 3, 0.3, 2)).unwrap();
        let mask = ObservationMask::full(12, 2);
        let cfg = TrainConfig {
            lr: 1e300,
            epochs: 10,
            ..small_config()
        };
        match train(&views, &mask, 2, &cfg, None) {
            Err(Error::Divergence { epoch, .. }) => assert!(epoch >= 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
