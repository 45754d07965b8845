//! Independent reference implementations shared by the integration tests and
//! the acceptance runner. Everything here is written with plain loops over
//! `Vec<Vec<f64>>` and does not call into the library's numerics.

#![allow(dead_code)]

use icmvc::dataio::{self, Labels, ObservationMask, ViewSet};
use icmvc::graphs::TransferRule;
use icmvc::network::{self, Architecture, ModelParams};
use icmvc::numkit::{check, Matrix, Tape};
use icmvc::objectives::{self, GuidanceReduction, LossSettings};
use icmvc::trainer::{self, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rows = Vec<Vec<f64>>;

pub fn rows(m: &Matrix) -> Rows {
    m.row_iter().map(<[f64]>::to_vec).collect()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0ac1e)
}

pub fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_stochastic(rng: &mut impl Rng, r: usize, c: usize) -> Matrix {
    let mut m = Matrix::from_fn(r, c, |_, _| rng.random_range(0.05..1.0));
    for i in 0..r {
        let s: f64 = m.row(i).iter().sum();
        m.row_mut(i).iter_mut().for_each(|x| *x /= s);
    }
    m
}

// ---------------------------------------------------------------- losses

fn cos(u: &[f64], w: &[f64]) -> f64 {
    let dot: f64 = u.iter().zip(w).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nw = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nw == 0.0 {
        0.0
    } else {
        dot / (nu * nw)
    }
}

fn contrast_view(a: &Rows, b: &Rows, tau: f64, include_self: bool) -> f64 {
    let n = a.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut denom = 0.0;
        for j in 0..n {
            if include_self || j != i {
                denom += (cos(&a[i], &a[j]) / tau).exp();
            }
            denom += (cos(&a[i], &b[j]) / tau).exp();
        }
        let pos = (cos(&a[i], &b[i]) / tau).exp();
        total += -(pos / denom).ln();
    }
    total
}

pub fn instance_loss_loop(z1: &Matrix, z2: &Matrix, tau: f64, include_self: bool) -> f64 {
    let (a, b) = (rows(z1), rows(z2));
    (contrast_view(&a, &b, tau, include_self) + contrast_view(&b, &a, tau, include_self))
        / (2.0 * a.len() as f64)
}

fn columns(m: &Matrix) -> Rows {
    (0..m.cols()).map(|j| (0..m.rows()).map(|i| m[(i, j)]).collect()).collect()
}

pub fn entropy_loop(y: &Matrix) -> f64 {
    let n = y.rows() as f64;
    let mut h = 0.0;
    for col in columns(y) {
        let p = col.iter().sum::<f64>() / n;
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    h
}

pub fn cluster_loss_loop(y1: &Matrix, y2: &Matrix, tau: f64) -> f64 {
    let (a, b) = (columns(y1), columns(y2));
    let c = a.len() as f64;
    let contrast = (contrast_view(&a, &b, tau, true) + contrast_view(&b, &a, tau, true)) / (2.0 * c);
    contrast - entropy_loop(y1) - entropy_loop(y2)
}

pub fn target_loop(sources: &[&Matrix]) -> Rows {
    let (n, c) = sources[0].shape();
    let mut p = vec![vec![0.0; c]; n];
    for i in 0..n {
        for j in 0..c {
            let q = sources.iter().map(|s| s[(i, j)]).fold(f64::MIN, f64::max);
            p[i][j] = q * q;
        }
        let s: f64 = p[i].iter().sum();
        p[i].iter_mut().for_each(|x| *x /= s);
    }
    p
}

pub fn guidance_loop(y: &Matrix, p: &Matrix, reduction: GuidanceReduction) -> f64 {
    let mut kl = 0.0;
    for i in 0..y.rows() {
        for j in 0..y.cols() {
            let pij = p[(i, j)];
            if pij > 0.0 {
                kl += pij * (pij / y[(i, j)]).ln();
            }
        }
    }
    match reduction {
        GuidanceReduction::Sum => kl,
        GuidanceReduction::Mean => kl / y.rows() as f64,
    }
}

/// Evaluates a library loss on constant inputs.
pub fn eval_loss(
    inputs: &[&Matrix],
    f: impl FnOnce(&mut Tape, &[icmvc::numkit::Var]) -> icmvc::Result<icmvc::numkit::Var>,
) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|m| tape.constant((*m).clone())).collect();
    let l = f(&mut tape, &vars).expect("loss evaluates");
    tape.scalar(l).expect("scalar loss")
}

// ---------------------------------------------------------------- graphs

pub struct GraphCase {
    pub views: Vec<Matrix>,
    pub mask: ObservationMask,
    pub k: usize,
    pub bandwidth: Option<f64>,
    pub rule: TransferRule,
}

/// Random graph instance with N ≤ 12, V ∈ {2, 3}, K ≤ 3. Each view keeps at
/// least K + 1 observed instances.
pub fn random_graph_case(seed: u64) -> GraphCase {
    let mut r = rng(seed);
    let v = r.random_range(2..=3);
    let n = r.random_range(5..=12);
    let k = r.random_range(1..=3);
    let views: Vec<Matrix> = (0..v)
        .map(|_| {
            let d = r.random_range(1..=4);
            // coarse grid values make similarity ties common
            Matrix::from_fn(n, d, |_, _| r.random_range(0..4) as f64 * 0.5)
        })
        .collect();
    let mask = loop {
        let mut m = ObservationMask::full(n, v);
        for i in 0..n {
            if r.random_bool(0.4) {
                let keep = r.random_range(0..v);
                for view in 0..v {
                    if view != keep && r.random_bool(0.6) {
                        m.set(i, view, false);
                    }
                }
            }
        }
        if (0..v).all(|view| m.view_column(view).iter().filter(|&&o| o).count() > k) {
            break m;
        }
    };
    let rule = [TransferRule::Copy, TransferRule::Union, TransferRule::Intersection][r.random_range(0..3)];
    let bandwidth = if r.random_bool(0.5) { Some(r.random_range(0.2..3.0)) } else { None };
    GraphCase {
        views,
        mask,
        k,
        bandwidth,
        rule,
    }
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn median_sq_distance(x: &Rows, observed: &[bool]) -> f64 {
    let mut d = Vec::new();
    for i in 0..x.len() {
        for j in 0..x.len() {
            if i < j && observed[i] && observed[j] {
                d.push(sq(&x[i], &x[j]));
            }
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = d.len();
    let med = if m % 2 == 1 { d[m / 2] } else { (d[m / 2 - 1] + d[m / 2]) / 2.0 };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Brute-force pipeline. `None` when some row ends up without any edge.
pub fn graph_oracle(case: &GraphCase) -> Option<(Vec<Rows>, Vec<Rows>)> {
    let n = case.mask.n();
    let v = case.views.len();
    let mut raw: Vec<Rows> = Vec::new();
    for (view, x) in case.views.iter().enumerate() {
        let x = rows(x);
        let obs = case.mask.view_column(view);
        let t = case.bandwidth.unwrap_or_else(|| median_sq_distance(&x, &obs));
        let sim = |i: usize, j: usize| (-sq(&x[i], &x[j]) / t).exp();
        let mut a = vec![vec![0.0; n]; n];
        for i in (0..n).filter(|&i| obs[i]) {
            for j in (0..n).filter(|&j| j != i && obs[j]) {
                // j is a neighbor iff fewer than K candidates outrank it
                let beaten_by = (0..n)
                    .filter(|&l| l != i && l != j && obs[l])
                    .filter(|&l| sim(i, l) > sim(i, j) || (sim(i, l) == sim(i, j) && l < j))
                    .count();
                if beaten_by < case.k {
                    a[i][j] = 1.0;
                }
            }
        }
        raw.push(a);
    }
    let mut moved = raw.clone();
    for i in 0..n {
        let observed: Vec<usize> = (0..v).filter(|&w| case.mask.is_observed(i, w)).collect();
        for target in (0..v).filter(|&w| !case.mask.is_observed(i, w)) {
            for j in 0..n {
                let links: Vec<bool> = observed.iter().map(|&w| raw[w][i][j] == 1.0).collect();
                let hit = match case.rule {
                    TransferRule::Copy => links[0],
                    TransferRule::Union => links.iter().any(|&b| b),
                    TransferRule::Intersection => links.iter().all(|&b| b),
                };
                moved[target][i][j] = if hit { 1.0 } else { 0.0 };
            }
        }
    }
    let mut binary = Vec::new();
    let mut normalized = Vec::new();
    for a in &moved {
        let mut s = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i != j && (a[i][j] == 1.0 || a[j][i] == 1.0) {
                    s[i][j] = 1.0;
                }
            }
        }
        if s.iter().any(|row| row.iter().all(|&x| x == 0.0)) {
            return None;
        }
        let deg: Vec<f64> = s.iter().map(|row| row.iter().sum::<f64>() + 1.0).collect();
        let mut op = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let e = if i == j { 1.0 } else { s[i][j] };
                op[i][j] = e / (deg[i].sqrt() * deg[j].sqrt());
            }
        }
        binary.push(s);
        normalized.push(op);
    }
    Some((binary, normalized))
}

// ---------------------------------------------------------------- metrics

/// Best accuracy over every injective map from predicted to true clusters
/// (or the reverse when there are more predicted clusters).
pub fn accuracy_exhaustive(pred: &[usize], truth: &[usize]) -> f64 {
    let cp = pred.iter().max().map_or(0, |m| m + 1);
    let ct = truth.iter().max().map_or(0, |m| m + 1);
    let k = cp.max(ct);
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0;
    permute(&mut perm, 0, &mut |p| {
        let hits = pred.iter().zip(truth).filter(|(&a, &b)| p[a] == b).count();
        best = best.max(hits);
    });
    best as f64 / pred.len() as f64
}

fn permute(p: &mut Vec<usize>, at: usize, f: &mut impl FnMut(&[usize])) {
    if at == p.len() {
        f(p);
        return;
    }
    for i in at..p.len() {
        p.swap(at, i);
        permute(p, at + 1, f);
        p.swap(at, i);
    }
}

fn table(pred: &[usize], truth: &[usize]) -> Vec<Vec<f64>> {
    let cp = pred.iter().max().map_or(0, |m| m + 1);
    let ct = truth.iter().max().map_or(0, |m| m + 1);
    let mut t = vec![vec![0.0; cp]; ct];
    for (&p, &q) in pred.iter().zip(truth) {
        t[q][p] += 1.0;
    }
    t
}

pub fn nmi_formula(pred: &[usize], truth: &[usize]) -> f64 {
    let t = table(pred, truth);
    let n = pred.len() as f64;
    let a: Vec<f64> = t.iter().map(|r| r.iter().sum()).collect();
    let b: Vec<f64> = (0..t[0].len()).map(|j| t.iter().map(|r| r[j]).sum()).collect();
    let h = |xs: &[f64]| -> f64 {
        xs.iter().filter(|&&x| x > 0.0).map(|&x| -(x / n) * (x / n).ln()).sum()
    };
    let (ha, hb) = (h(&a), h(&b));
    if ha == 0.0 || hb == 0.0 {
        return if ha == 0.0 && hb == 0.0 { 1.0 } else { 0.0 };
    }
    let mut mi = 0.0;
    for i in 0..a.len() {
        for j in 0..b.len() {
            if t[i][j] > 0.0 {
                mi += t[i][j] / n * ((t[i][j] / n) / ((a[i] / n) * (b[j] / n))).ln();
            }
        }
    }
    mi / (ha * hb).sqrt()
}

fn choose2(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

pub fn ari_formula(pred: &[usize], truth: &[usize]) -> f64 {
    let t = table(pred, truth);
    let n = pred.len() as f64;
    let index: f64 = t.iter().flatten().map(|&x| choose2(x)).sum();
    let a: f64 = t.iter().map(|r| choose2(r.iter().sum())).sum();
    let b: f64 = (0..t[0].len()).map(|j| choose2(t.iter().map(|r| r[j]).sum())).sum();
    let expected = a * b / choose2(n);
    let max = (a + b) / 2.0;
    if max == expected {
        return if index == expected { 1.0 } else { 0.0 };
    }
    (index - expected) / (max - expected)
}

/// Random label pair with every id in `[0, c)` used at least once.
pub fn random_labels(rng: &mut impl Rng, n: usize, c: usize) -> Vec<usize> {
    let mut l: Vec<usize> = (0..n).map(|i| if i < c { i } else { rng.random_range(0..c) }).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        l.swap(i, j);
    }
    l
}

pub fn relabel(l: &[usize], perm: &[usize]) -> Labels {
    Labels(l.iter().map(|&x| perm[x]).collect())
}

// ---------------------------------------------------------------- gradients

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossTerm {
    Instance,
    Cluster,
    Guidance,
    Total,
}

pub const LOSS_TERMS: [LossTerm; 4] = [LossTerm::Instance, LossTerm::Cluster, LossTerm::Guidance, LossTerm::Total];

pub struct GradFixture {
    pub params: ModelParams,
    inputs: Vec<Matrix>,
    operators: Vec<Matrix>,
    target: Matrix,
}

/// N = 8, C = 3, hidden width 16, two views with one incomplete instance.
pub fn grad_fixture(seed: u64) -> GradFixture {
    let mut r = rng(seed);
    let n = 8;
    let views = ViewSet::new(vec![random_matrix(&mut r, n, 5), random_matrix(&mut r, n, 6)]).unwrap();
    let mask = dataio::make_mask(n, 2, 0.25, seed).unwrap();
    let config = TrainConfig {
        knn: 3,
        hidden: 16,
        projection: 8,
        fusion_hidden: 16,
        seed,
        ..TrainConfig::default()
    };
    let prepared = trainer::prepare(&views, &mask, &config).unwrap();
    let arch = Architecture {
        view_dims: vec![5, 6],
        hidden: 16,
        projection: 8,
        layers: 2,
        clusters: 3,
        fusion_hidden: 16,
    };
    let mut params = ModelParams::init(&arch, seed).unwrap();
    // nonzero biases so their gradients are exercised away from the init point
    for m in params.values_mut() {
        if m.rows() == 1 {
            m.as_mut_slice().iter_mut().for_each(|x| *x = r.random_range(-0.1..0.1));
        }
    }
    let inputs = prepared.inputs.views().to_vec();
    let operators = prepared.operators.iter().map(|o| o.matrix().clone()).collect();
    let mut fixture = GradFixture {
        params,
        inputs,
        operators,
        target: Matrix::zeros(n, 3),
    };
    let (ys, y) = fixture.assignments();
    let mut sources: Vec<&Matrix> = ys.iter().collect();
    sources.push(&y);
    fixture.target = objectives::high_confidence_target(&sources).unwrap().p;
    fixture
}

impl GradFixture {
    fn assignments(&self) -> (Vec<Matrix>, Matrix) {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let xs: Vec<_> = self.inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let ops: Vec<_> = self.operators.iter().map(|x| tape.constant(x.clone())).collect();
        let fwd = network::forward(&mut tape, &bound, &xs, &ops, 1.0).unwrap();
        (
            fwd.y_views.iter().map(|&v| tape.value(v).clone()).collect(),
            tape.value(fwd.y_fused).clone(),
        )
    }

    fn loss(&self, params: &ModelParams, term: LossTerm, grads: bool) -> (f64, Vec<Matrix>) {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let xs: Vec<_> = self.inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let ops: Vec<_> = self.operators.iter().map(|x| tape.constant(x.clone())).collect();
        let fwd = network::forward(&mut tape, &bound, &xs, &ops, 1.0).unwrap();
        let settings = LossSettings::default();
        let l = match term {
            LossTerm::Instance => objectives::instance_contrastive_loss(
                &mut tape,
                fwd.z_views[0],
                fwd.z_views[1],
                settings.tau_i,
                settings.include_self,
            ),
            LossTerm::Cluster => {
                objectives::cluster_contrastive_loss(&mut tape, fwd.y_views[0], fwd.y_views[1], settings.tau_c)
            }
            LossTerm::Guidance => {
                objectives::guidance_loss(&mut tape, fwd.y_fused, &self.target, settings.guidance)
            }
            LossTerm::Total => objectives::total_loss(
                &mut tape,
                &fwd.z_views,
                &fwd.y_views,
                fwd.y_fused,
                Some(&self.target),
                &settings,
            )
            .map(|(l, _)| l),
        }
        .unwrap();
        let value = tape.scalar(l).unwrap();
        let g = if grads {
            let g = tape.backward(l).unwrap();
            bound.values().into_iter().map(|&v| g.get(v)).collect()
        } else {
            Vec::new()
        };
        (value, g)
    }

    /// Max relative error between analytic and central-difference gradients
    /// over every parameter scalar, and the number of coordinates whose
    /// stencil straddles a ReLU kink.
    ///
    /// A straddled kink shows up as forward and backward one-sided slopes
    /// that disagree; such a coordinate is judged against the closer
    /// one-sided slope, which is a valid derivative estimate on that side.
    pub fn max_relative_error(&self, term: LossTerm, h: f64) -> (f64, usize) {
        let (f0, analytic) = self.loss(&self.params, term, true);
        let mut worst = 0.0f64;
        let mut kinks = 0;
        for (b, grad) in analytic.iter().enumerate() {
            let base = self.params.values()[b].clone();
            let eval = |m: &Matrix| {
                let mut p = self.params.clone();
                *p.values_mut()[b] = m.clone();
                self.loss(&p, term, false).0
            };
            let numeric = check::central_difference(&base, h, eval);
            for k in 0..base.len() {
                let a = grad.as_slice()[k];
                let mut err = rel(a, numeric.as_slice()[k]);
                if err > GRAD_TOL {
                    let mut probe = base.clone();
                    probe.as_mut_slice()[k] += h;
                    let forward = (eval(&probe) - f0) / h;
                    probe.as_mut_slice()[k] -= 2.0 * h;
                    let backward = (f0 - eval(&probe)) / h;
                    if rel(forward, backward) > KINK_GAP {
                        kinks += 1;
                        err = rel(a, forward).min(rel(a, backward));
                    }
                }
                worst = worst.max(err);
            }
        }
        (worst, kinks)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_FLOOR)
}

pub const GRAD_TOL: f64 = 1e-4;

/// One-sided slopes further apart than this (relative) mark a kink inside
/// the stencil.
pub const KINK_GAP: f64 = 1e-3;

/// Denominator floor of the relative error, so entries whose true gradient
/// is zero are judged by absolute error.
pub const GRAD_FLOOR: f64 = 1e-6;

// ---------------------------------------------------------------- benchmark

pub const BENCH_N: usize = 300;
pub const BENCH_CLUSTERS: usize = 3;

/// Min-max scaled blobs (N = 300, V = 2, C = 3, d = 10, σ = 0.5) and a mask
/// at missing rate `eta`, both from `seed`.
pub fn benchmark(seed: u64, eta: f64) -> (ViewSet, ObservationMask, Labels) {
    let (views, labels) =
        dataio::synth_blobs(&dataio::SynthSpec::blobs(BENCH_N, 2, BENCH_CLUSTERS, 10, 0.5, seed)).unwrap();
    let mask = dataio::make_mask(BENCH_N, 2, eta, seed).unwrap();
    let views = dataio::minmax_scale(&views, &mask);
    (views, mask, labels)
}
