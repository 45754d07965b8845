//! Forward architecture: per-view GCN encoders with skip connections,
//! instance-level attention fusion, per-view instance projection heads and a
//! classifier shared by every view and by the fused representation.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{read_matrix, write_atomic, write_matrix};
use crate::error::{Error, Result};
use crate::numkit::{Matrix, Tape, Var};
use crate::rng::{self, Stream};

/// Layer widths. `view_dims` are the input feature counts.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub view_dims: Vec<usize>,
    /// Common encoder width `d`.
    pub hidden: usize,
    /// Projection width `d_z` of the instance heads.
    pub projection: usize,
    /// GCN layers per view.
    pub layers: usize,
    pub clusters: usize,
    /// Hidden width of the fusion MLP.
    pub fusion_hidden: usize,
}

impl Architecture {
    pub fn new(view_dims: Vec<usize>, clusters: usize) -> Self {
        Architecture {
            view_dims,
            hidden: 128,
            projection: 64,
            layers: 2,
            clusters,
            fusion_hidden: 128,
        }
    }

    pub fn n_views(&self) -> usize {
        self.view_dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 {
            return Err(Error::Config("at least one GCN layer is required".into()));
        }
        if self.view_dims.is_empty() {
            return Err(Error::Config("at least one view is required".into()));
        }
        let widths = [self.hidden, self.projection, self.clusters, self.fusion_hidden];
        if widths.contains(&0) || self.view_dims.contains(&0) {
            return Err(Error::Config(format!("layer widths must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: T,
    pub bias: T,
}

/// Two affine layers with a ReLU in between.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub first: Dense<T>,
    pub second: Dense<T>,
}

/// Every trainable block of the model. `T` is `Matrix` for stored values
/// and `Var` once bound to a tape.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    /// `encoders[v][m]`: weight of GCN layer `m` of view `v`.
    pub encoders: Vec<Vec<T>>,
    pub fusion: Mlp<T>,
    pub heads: Vec<Mlp<T>>,
    pub classifier: Dense<T>,
}

pub type ModelParams = Params<Matrix>;
pub type BoundParams = Params<Var>;

impl<T> Dense<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Dense<U> {
        Dense {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }
}

impl<T> Mlp<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Mlp<U> {
        Mlp {
            first: self.first.map(f),
            second: self.second.map(f),
        }
    }
}

impl<T> Params<T> {
    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Params<U> {
        Params {
            encoders: self
                .encoders
                .iter()
                .map(|layers| layers.iter().map(&mut f).collect())
                .collect(),
            fusion: self.fusion.map(&mut f),
            heads: self.heads.iter().map(|h| h.map(&mut f)).collect(),
            classifier: self.classifier.map(&mut f),
        }
    }

    /// Named blocks in a fixed order.
    pub fn entries(&self) -> Vec<(String, &T)> {
        let mut out = Vec::new();
        for (v, layers) in self.encoders.iter().enumerate() {
            for (m, w) in layers.iter().enumerate() {
                out.push((format!("encoder{v}.layer{m}.weight"), w));
            }
        }
        push_mlp("fusion".into(), &self.fusion, &mut out);
        for (v, h) in self.heads.iter().enumerate() {
            push_mlp(format!("head{v}"), h, &mut out);
        }
        out.push(("classifier.weight".into(), &self.classifier.weight));
        out.push(("classifier.bias".into(), &self.classifier.bias));
        out
    }

    /// Mutable blocks in the same order as [`Params::entries`].
    pub fn values_mut(&mut self) -> Vec<&mut T> {
        let mut out: Vec<&mut T> = Vec::new();
        for layers in &mut self.encoders {
            out.extend(layers.iter_mut());
        }
        let Params {
            fusion,
            heads,
            classifier,
            ..
        } = self;
        for m in std::iter::once(fusion).chain(heads.iter_mut()) {
            out.push(&mut m.first.weight);
            out.push(&mut m.first.bias);
            out.push(&mut m.second.weight);
            out.push(&mut m.second.bias);
        }
        out.push(&mut classifier.weight);
        out.push(&mut classifier.bias);
        out
    }

    pub fn values(&self) -> Vec<&T> {
        self.entries().into_iter().map(|(_, v)| v).collect()
    }
}

fn push_mlp<'a, T>(prefix: String, m: &'a Mlp<T>, out: &mut Vec<(String, &'a T)>) {
    out.push((format!("{prefix}.first.weight"), &m.first.weight));
    out.push((format!("{prefix}.first.bias"), &m.first.bias));
    out.push((format!("{prefix}.second.weight"), &m.second.weight));
    out.push((format!("{prefix}.second.bias"), &m.second.bias));
}

fn uniform_weight(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..=bound))
}

fn dense(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Dense<Matrix> {
    Dense {
        weight: uniform_weight(rng, fan_in, fan_out),
        bias: Matrix::zeros(1, fan_out),
    }
}

impl ModelParams {
    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = rng::stream(seed, Stream::Init);
        let d = arch.hidden;
        let encoders = arch
            .view_dims
            .iter()
            .map(|&dv| {
                (0..arch.layers)
                    .map(|m| uniform_weight(&mut rng, if m == 0 { dv } else { d }, d))
                    .collect()
            })
            .collect();
        let v = arch.n_views();
        let fusion = Mlp {
            first: dense(&mut rng, v * d, arch.fusion_hidden),
            second: dense(&mut rng, arch.fusion_hidden, v),
        };
        let heads = (0..v)
            .map(|_| Mlp {
                first: dense(&mut rng, d, d),
                second: dense(&mut rng, d, arch.projection),
            })
            .collect();
        let classifier = dense(&mut rng, d, arch.clusters);
        Ok(Params {
            encoders,
            fusion,
            heads,
            classifier,
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        self.map(|m| tape.param(m.clone()))
    }

    pub fn n_scalars(&self) -> usize {
        self.values().iter().map(|m| m.len()).sum()
    }

    /// One CSV per block plus `checkpoint.json` listing names and shapes.
    pub fn save_checkpoint(&self, dir: &Path, config_hash: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::new();
        for (name, m) in self.entries() {
            let file = format!("{name}.csv");
            write_matrix(&dir.join(&file), m)?;
            entries.push(CheckpointEntry {
                name,
                rows: m.rows(),
                cols: m.cols(),
                file,
            });
        }
        let manifest = CheckpointManifest {
            config_hash: config_hash.to_string(),
            entries,
        };
        let text = serde_json::to_string_pretty(&manifest)?;
        write_atomic(&dir.join("checkpoint.json"), format!("{text}\n").as_bytes())
    }

    /// Loads a checkpoint into the layout of `arch`.
    pub fn load_checkpoint(dir: &Path, arch: &Architecture) -> Result<(Self, String)> {
        let path = dir.join("checkpoint.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: CheckpointManifest = serde_json::from_str(&text)?;
        let mut params = ModelParams::init(arch, 0)?;
        let names: Vec<String> = params.entries().into_iter().map(|(k, _)| k).collect();
        if names.len() != manifest.entries.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} blocks, architecture needs {}",
                manifest.entries.len(),
                names.len()
            )));
        }
        for ((name, slot), entry) in names.iter().zip(params.values_mut()).zip(&manifest.entries) {
            if *name != entry.name {
                return Err(Error::Format(format!(
                    "checkpoint block `{}` where `{name}` was expected",
                    entry.name
                )));
            }
            let m = read_matrix(&dir.join(&entry.file))?;
            if m.shape() != slot.shape() || m.shape() != (entry.rows, entry.cols) {
                return Err(Error::Format(format!(
                    "block `{name}` is {:?}, expected {:?}",
                    m.shape(),
                    slot.shape()
                )));
            }
            *slot = m;
        }
        Ok((params, manifest.config_hash))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointEntry {
    name: String,
    rows: usize,
    cols: usize,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointManifest {
    config_hash: String,
    entries: Vec<CheckpointEntry>,
}

fn activate(tape: &mut Tape, x: Var, act: Activation) -> Result<Var> {
    match act {
        Activation::Relu => tape.relu(x),
        Activation::Identity => Ok(x),
    }
}

/// `φ(Â · H · W)`. The product is associated so the N×N operator meets the
/// narrower of the two widths.
pub fn gcn_layer(
    tape: &mut Tape,
    h_in: Var,
    operator: Var,
    weight: Var,
    act: Activation,
) -> Result<Var> {
    let (n, n2) = tape.shape(operator);
    let (rows, k) = tape.shape(h_in);
    let (wk, k_out) = tape.shape(weight);
    if n != n2 || rows != n || wk != k {
        return Err(Error::Dimension {
            op: "gcn_layer",
            lhs: (n, n2),
            rhs: (rows, wk),
        });
    }
    let pre = if k <= k_out {
        let agg = tape.matmul(operator, h_in)?;
        tape.matmul(agg, weight)?
    } else {
        let lin = tape.matmul(h_in, weight)?;
        tape.matmul(operator, lin)?
    };
    activate(tape, pre, act)
}

/// Stacked GCN layers. The first layer changes width and has no skip; each
/// later layer adds its input after the activation.
pub fn encode_view(tape: &mut Tape, x: Var, operator: Var, layers: &[Var]) -> Result<Var> {
    let Some((&first, rest)) = layers.split_first() else {
        return Err(Error::Config("at least one GCN layer is required".into()));
    };
    let mut h = gcn_layer(tape, x, operator, first, Activation::Relu)?;
    for &w in rest {
        let next = gcn_layer(tape, h, operator, w, Activation::Relu)?;
        h = if tape.shape(next) == tape.shape(h) {
            tape.add(next, h)?
        } else {
            next
        };
    }
    Ok(h)
}

fn affine(tape: &mut Tape, x: Var, layer: &Dense<Var>) -> Result<Var> {
    let xw = tape.matmul(x, layer.weight)?;
    tape.add(xw, layer.bias)
}

fn mlp(tape: &mut Tape, x: Var, m: &Mlp<Var>) -> Result<Var> {
    let hidden = affine(tape, x, &m.first)?;
    let hidden = tape.relu(hidden)?;
    affine(tape, hidden, &m.second)
}

/// Output of [`attention_fuse`].
#[derive(Clone, Debug)]
pub struct Fusion {
    pub fused: Var,
    /// N×V attention coefficients, rows on the simplex.
    pub weights: Var,
    /// Column `v` of `weights` as N×1.
    pub per_view: Vec<Var>,
}

/// `λ = softmax(sigmoid(f_u([H¹,…,Hᵛ])) / τ)` row-wise, `H = Σ_v λᵛ ⊙ Hᵛ`.
pub fn attention_fuse(
    tape: &mut Tape,
    hs: &[Var],
    fusion: &Mlp<Var>,
    tau_att: f64,
) -> Result<Fusion> {
    if !(tau_att > 0.0) {
        return Err(Error::Config(format!(
            "attention temperature must be positive, got {tau_att}"
        )));
    }
    let shape = tape.shape(hs[0]);
    for &h in hs {
        if tape.shape(h) != shape {
            return Err(Error::Dimension {
                op: "attention_fuse",
                lhs: shape,
                rhs: tape.shape(h),
            });
        }
    }
    let stacked = tape.concat_cols(hs)?;
    let scores = mlp(tape, stacked, fusion)?;
    let gated = tape.sigmoid(scores)?;
    let weights = tape.row_softmax(gated, tau_att)?;
    fuse_with_weights(tape, hs, weights)
}

/// `H = Σ_v λᵛ ⊙ Hᵛ` for given N×V weights.
pub fn fuse_with_weights(tape: &mut Tape, hs: &[Var], weights: Var) -> Result<Fusion> {
    let v = hs.len();
    let mut per_view = Vec::with_capacity(v);
    let mut fused = None;
    for (k, &h) in hs.iter().enumerate() {
        let selector = tape.constant(Matrix::from_fn(v, 1, |i, _| if i == k { 1.0 } else { 0.0 }));
        let lambda = tape.matmul(weights, selector)?;
        let term = tape.mul(h, lambda)?;
        fused = Some(match fused {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
        per_view.push(lambda);
    }
    Ok(Fusion {
        fused: fused.ok_or_else(|| Error::Config("fusion needs at least one view".into()))?,
        weights,
        per_view,
    })
}

/// `Z = W₂ · relu(W₁ h + b₁) + b₂`.
pub fn project_instances(tape: &mut Tape, h: Var, head: &Mlp<Var>) -> Result<Var> {
    mlp(tape, h, head)
}

/// Row softmax of the shared affine classifier.
pub fn classify(tape: &mut Tape, h: Var, classifier: &Dense<Var>) -> Result<Var> {
    let logits = affine(tape, h, classifier)?;
    tape.row_softmax(logits, 1.0)
}

/// Everything one forward pass produces.
#[derive(Clone, Debug)]
pub struct Forward {
    pub h_views: Vec<Var>,
    pub fusion: Fusion,
    pub z_views: Vec<Var>,
    pub y_views: Vec<Var>,
    pub y_fused: Var,
}

/// Full forward pass. `inputs[v]` is the zero-filled feature matrix of view
/// `v` and `operators[v]` its propagation operator, both as tape constants.
pub fn forward(
    tape: &mut Tape,
    params: &BoundParams,
    inputs: &[Var],
    operators: &[Var],
    tau_att: f64,
) -> Result<Forward> {
    let v = params.encoders.len();
    if inputs.len() != v || operators.len() != v || params.heads.len() != v {
        return Err(Error::Contract(format!(
            "{v} encoders, {} inputs, {} operators, {} heads",
            inputs.len(),
            operators.len(),
            params.heads.len()
        )));
    }
    let mut h_views = Vec::with_capacity(v);
    for k in 0..v {
        h_views.push(encode_view(tape, inputs[k], operators[k], &params.encoders[k])?);
    }
    let fusion = attention_fuse(tape, &h_views, &params.fusion, tau_att)?;
    let mut z_views = Vec::with_capacity(v);
    let mut y_views = Vec::with_capacity(v);
    for k in 0..v {
        z_views.push(project_instances(tape, h_views[k], &params.heads[k])?);
        y_views.push(classify(tape, h_views[k], &params.classifier)?);
    }
    let y_fused = classify(tape, fusion.fused, &params.classifier)?;
    Ok(Forward {
        h_views,
        fusion,
        z_views,
        y_views,
        y_fused,
    })
}
