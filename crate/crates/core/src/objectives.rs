//! Training losses: cross-view instance contrast, cluster-level contrast
//! over assignment columns with an entropy bonus, and the KL guidance toward
//! a sharpened high-confidence target.
//!
//! Similarity is cosine throughout and every logarithm is natural.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Matrix, Tape, Var};

/// Row sums of an assignment matrix may drift this far from 1.
pub const ROW_STOCHASTIC_TOL: f64 = 1e-6;

/// `(i, j) ↦ ⟨u_i, w_j⟩ / (‖u_i‖ ‖w_j‖)`; zero rows give zero similarity.
pub fn cosine_similarity_matrix(tape: &mut Tape, u: Var, w: Var) -> Result<Var> {
    let un = tape.row_l2_normalize(u);
    let wn = tape.row_l2_normalize(w);
    let wt = tape.transpose(wn);
    tape.matmul(un, wt)
}

/// Sum over rows `i` of `-log(exp(s(a_i,b_i)/τ) / Σ_j [exp(s(a_i,a_j)/τ) + exp(s(a_i,b_j)/τ)])`
/// for already-normalized rows `a`, `b`.
fn contrast_rows(
    tape: &mut Tape,
    a: Var,
    b: Var,
    tau: f64,
    exclude_self: Option<Var>,
) -> Result<Var> {
    let bt = tape.transpose(b);
    let at = tape.transpose(a);
    let same = tape.matmul(a, at)?;
    let cross = tape.matmul(a, bt)?;
    let same = tape.scale(same, 1.0 / tau);
    let cross = tape.scale(cross, 1.0 / tau);
    let mut same_exp = tape.exp(same)?;
    if let Some(off_diagonal) = exclude_self {
        same_exp = tape.mul(same_exp, off_diagonal)?;
    }
    let cross_exp = tape.exp(cross)?;
    let same_sum = tape.row_sum(same_exp);
    let cross_sum = tape.row_sum(cross_exp);
    let denom = tape.add(same_sum, cross_sum)?;
    let log_denom = tape.log(denom)?;
    let pos = tape.mul(a, b)?;
    let pos = tape.row_sum(pos);
    let pos = tape.scale(pos, 1.0 / tau);
    let per_row = tape.sub(log_denom, pos)?;
    Ok(tape.sum(per_row))
}

/// Symmetric two-view contrast averaged over `2·rows`.
fn symmetric_contrast(
    tape: &mut Tape,
    a: Var,
    b: Var,
    tau: f64,
    include_self: bool,
) -> Result<Var> {
    let (ra, ca) = tape.shape(a);
    if tape.shape(b) != (ra, ca) {
        return Err(Error::Dimension {
            op: "contrastive loss",
            lhs: (ra, ca),
            rhs: tape.shape(b),
        });
    }
    let an = tape.row_l2_normalize(a);
    let bn = tape.row_l2_normalize(b);
    let mask = if include_self {
        None
    } else {
        Some(tape.constant(Matrix::from_fn(ra, ra, |i, j| if i == j { 0.0 } else { 1.0 })))
    };
    let first = contrast_rows(tape, an, bn, tau, mask)?;
    let second = contrast_rows(tape, bn, an, tau, mask)?;
    let both = tape.add(first, second)?;
    Ok(tape.scale(both, 1.0 / (2.0 * ra as f64)))
}

fn check_temperature(name: &str, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("{name} must be positive, got {tau}")));
    }
    Ok(())
}

/// `L_ins = 1/(2N) Σ_i (ℓ¹_i + ℓ²_i)`. With `include_self` the same-view
/// denominator keeps its `j = i` term.
pub fn instance_contrastive_loss(
    tape: &mut Tape,
    z1: Var,
    z2: Var,
    tau_i: f64,
    include_self: bool,
) -> Result<Var> {
    check_temperature("instance temperature", tau_i)?;
    symmetric_contrast(tape, z1, z2, tau_i, include_self)
}

/// `H(Y) = -Σ_j P(y_j) log P(y_j)` with `P(y_j)` the mean of column `j`.
pub fn assignment_entropy(tape: &mut Tape, y: Var) -> Result<Var> {
    let p = tape.reduce(y, crate::numkit::ReduceKind::ColSum);
    let p = tape.scale(p, 1.0 / tape.shape(y).0 as f64);
    let logp = tape.log(p)?;
    let plogp = tape.mul(p, logp)?;
    let s = tape.sum(plogp);
    tape.neg(s)
}

pub fn check_row_stochastic(name: &str, y: &Matrix) -> Result<()> {
    for (i, s) in y.row_sums().into_iter().enumerate() {
        if !((s - 1.0).abs() <= ROW_STOCHASTIC_TOL) {
            return Err(Error::Contract(format!(
                "{name} row {i} sums to {s}, not 1"
            )));
        }
    }
    Ok(())
}

/// Contrast over the columns (assignment statistics vectors) of `Y¹`, `Y²`
/// averaged over `2C`, minus both assignment entropies.
pub fn cluster_contrastive_loss(tape: &mut Tape, y1: Var, y2: Var, tau_c: f64) -> Result<Var> {
    check_temperature("cluster temperature", tau_c)?;
    check_row_stochastic("Y1", tape.value(y1))?;
    check_row_stochastic("Y2", tape.value(y2))?;
    let contrast = cluster_contrast(tape, y1, y2, tau_c)?;
    let h1 = assignment_entropy(tape, y1)?;
    let h2 = assignment_entropy(tape, y2)?;
    let c = tape.sub(contrast, h1)?;
    tape.sub(c, h2)
}

fn cluster_contrast(tape: &mut Tape, y1: Var, y2: Var, tau_c: f64) -> Result<Var> {
    let c1 = tape.transpose(y1);
    let c2 = tape.transpose(y2);
    symmetric_contrast(tape, c1, c2, tau_c, true)
}

/// `Q = max(Y¹, …, Yᵛ, Y)` elementwise and `P_ij = Q_ij² / Σ_j Q_ij²`.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetDistribution {
    pub q: Matrix,
    pub p: Matrix,
}

pub fn high_confidence_target(assignments: &[&Matrix]) -> Result<TargetDistribution> {
    let Some(first) = assignments.first() else {
        return Err(Error::Contract("target needs at least one assignment".into()));
    };
    let mut q = (*first).clone();
    for y in &assignments[1..] {
        q = q.zip_map(y, f64::max)?;
    }
    let mut p = q.map(|x| x * x);
    for i in 0..p.rows() {
        let row = p.row_mut(i);
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|x| *x /= total);
        }
    }
    Ok(TargetDistribution { q, p })
}

/// KL(P || Y) = `Σ_i Σ_j p_ij log(p_ij / y_ij)` with `0 log 0 = 0`, optionally
/// divided by N. `P` is a constant.
pub fn guidance_loss(
    tape: &mut Tape,
    y: Var,
    p: &Matrix,
    reduction: GuidanceReduction,
) -> Result<Var> {
    let shape = tape.shape(y);
    if p.shape() != shape {
        return Err(Error::Dimension {
            op: "guidance_loss",
            lhs: shape,
            rhs: p.shape(),
        });
    }
    let neg_entropy: f64 = p
        .as_slice()
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum();
    let pc = tape.constant(p.clone());
    let logy = tape.log(y)?;
    let cross = tape.mul(pc, logy)?;
    let cross = tape.sum(cross);
    let constant = tape.constant(Matrix::scalar(neg_entropy));
    let kl = tape.sub(constant, cross)?;
    Ok(match reduction {
        GuidanceReduction::Sum => kl,
        GuidanceReduction::Mean => tape.scale(kl, 1.0 / shape.0.max(1) as f64),
    })
}

/// How the per-instance KL terms of the guidance loss are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceReduction {
    /// Σ over instances, the literal double sum.
    Sum,
    /// Σ over instances divided by N, on the same per-instance scale as the
    /// contrastive terms.
    #[default]
    Mean,
}

impl std::str::FromStr for GuidanceReduction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(GuidanceReduction::Sum),
            "mean" => Ok(GuidanceReduction::Mean),
            other => Err(Error::Config(format!("unknown guidance reduction `{other}`"))),
        }
    }
}

/// Which terms enter the total.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LossFlags {
    pub use_ins: bool,
    pub use_clu: bool,
    pub use_hg: bool,
}

impl Default for LossFlags {
    fn default() -> Self {
        LossFlags {
            use_ins: true,
            use_clu: true,
            use_hg: true,
        }
    }
}

impl LossFlags {
    pub fn validate(&self) -> Result<()> {
        if self.use_hg && !self.use_clu {
            return Err(Error::Config(
                "high-confidence guidance requires the clustering loss".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ins: f64,
    pub l_clu: f64,
    pub l_hg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.l_ins.is_finite() && self.l_clu.is_finite() && self.l_hg.is_finite() && self.total.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSettings {
    pub tau_i: f64,
    pub tau_c: f64,
    pub include_self: bool,
    pub guidance: GuidanceReduction,
    pub flags: LossFlags,
}

impl Default for LossSettings {
    fn default() -> Self {
        LossSettings {
            tau_i: 1.0,
            tau_c: 0.5,
            include_self: true,
            guidance: GuidanceReduction::default(),
            flags: LossFlags::default(),
        }
    }
}

/// Mean of `f` over every unordered view pair. Two views give one pair.
fn mean_over_pairs(
    tape: &mut Tape,
    xs: &[Var],
    mut f: impl FnMut(&mut Tape, Var, Var) -> Result<Var>,
) -> Result<Var> {
    let mut acc = None;
    let mut pairs = 0;
    for a in 0..xs.len() {
        for b in a + 1..xs.len() {
            let term = f(tape, xs[a], xs[b])?;
            acc = Some(match acc {
                None => term,
                Some(s) => tape.add(s, term)?,
            });
            pairs += 1;
        }
    }
    let acc = acc.ok_or_else(|| Error::Config("contrastive losses need at least two views".into()))?;
    Ok(if pairs == 1 {
        acc
    } else {
        tape.scale(acc, 1.0 / pairs as f64)
    })
}

/// `L = L_ins + L_clu + L_hg` with unit weights; disabled terms contribute
/// zero. `target` is the detached `P` and must be given when guidance is on.
pub fn total_loss(
    tape: &mut Tape,
    z_views: &[Var],
    y_views: &[Var],
    y_fused: Var,
    target: Option<&Matrix>,
    settings: &LossSettings,
) -> Result<(Var, LossBreakdown)> {
    settings.flags.validate()?;
    let mut terms = Vec::new();
    let mut breakdown = LossBreakdown::default();
    if settings.flags.use_ins {
        let l = mean_over_pairs(tape, z_views, |t, a, b| {
            instance_contrastive_loss(t, a, b, settings.tau_i, settings.include_self)
        })?;
        breakdown.l_ins = tape.scalar(l).unwrap_or(f64::NAN);
        terms.push(l);
    }
    if settings.flags.use_clu {
        check_temperature("cluster temperature", settings.tau_c)?;
        for (v, &y) in y_views.iter().enumerate() {
            check_row_stochastic(&format!("Y{}", v + 1), tape.value(y))?;
        }
        let contrast = mean_over_pairs(tape, y_views, |t, a, b| {
            cluster_contrast(t, a, b, settings.tau_c)
        })?;
        let mut l = contrast;
        for &y in y_views {
            let h = assignment_entropy(tape, y)?;
            l = tape.sub(l, h)?;
        }
        breakdown.l_clu = tape.scalar(l).unwrap_or(f64::NAN);
        terms.push(l);
    }
    if settings.flags.use_hg {
        let p = target.ok_or_else(|| Error::Contract("guidance term needs a target".into()))?;
        let l = guidance_loss(tape, y_fused, p, settings.guidance)?;
        breakdown.l_hg = tape.scalar(l).unwrap_or(f64::NAN);
        terms.push(l);
    }
    let total = match terms.split_first() {
        None => tape.constant(Matrix::scalar(0.0)),
        Some((&first, rest)) => {
            let mut acc = first;
            for &t in rest {
                acc = tape.add(acc, t)?;
            }
            acc
        }
    };
    breakdown.total = breakdown.l_ins + breakdown.l_clu + breakdown.l_hg;
    Ok((total, breakdown))
}
