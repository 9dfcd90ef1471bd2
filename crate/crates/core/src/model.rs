//! Fusion line-graph GCN.
//!
//! Forward path for one window:
//!
//! ```text
//! h0 = Z                                   [n_l, 2k]
//! h(l+1) = relu(A_hat h(l) W_l + b_l)      [n_l, c]
//! xL = relu(P h W2 + b2)                   [n_d, n_d-1]
//! x_hat = xL W3 + branch(xH) + b3          [n_d, n_d-1]
//! ```
//!
//! `branch` is either a stack of dense layers over the destination axis
//! (FCN) or same-padded 3x3 convolutions treating `xH` as a one-channel
//! image (CNN). Hidden activations are ReLU, the output is linear and
//! clamped at zero only at prediction time.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::NormStats;
use crate::error::{Error, Result};
use crate::rng::substream;
use crate::tensor::{Tape, Tensor, TensorError, Var};
use crate::topology::DirectedNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadVariant {
    Fcn,
    Cnn,
}

impl HeadVariant {
    pub fn label(self) -> &'static str {
        match self {
            HeadVariant::Fcn => "fcn",
            HeadVariant::Cnn => "cnn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlGcnConfig {
    pub n_gcn_layers: usize,
    pub gcn_hidden: usize,
    pub head_variant: HeadVariant,
    /// Dense layers in the FCN branch.
    pub n_hist_layers: usize,
    /// Output channels of each CNN layer; the last must be 1.
    pub cnn_channels: Vec<usize>,
    pub k_link_lags: usize,
}

impl Default for FlGcnConfig {
    fn default() -> Self {
        Self {
            n_gcn_layers: 3,
            gcn_hidden: 16,
            head_variant: HeadVariant::Cnn,
            n_hist_layers: 3,
            cnn_channels: vec![8, 8, 1],
            k_link_lags: 4,
        }
    }
}

impl FlGcnConfig {
    pub fn with_variant(mut self, variant: HeadVariant) -> Self {
        self.head_variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("model config: {m}")));
        if self.n_gcn_layers == 0 {
            return bad("n_gcn_layers must be >= 1");
        }
        if self.gcn_hidden == 0 {
            return bad("gcn_hidden must be >= 1");
        }
        if self.k_link_lags == 0 {
            return bad("k_link_lags must be >= 1");
        }
        if self.n_hist_layers == 0 {
            return bad("n_hist_layers must be >= 1");
        }
        if self.cnn_channels.last() != Some(&1) {
            return bad("cnn_channels must be non-empty and end in 1");
        }
        if self.cnn_channels.contains(&0) {
            return bad("cnn_channels entries must be positive");
        }
        Ok(())
    }

    fn hist_layers(&self) -> usize {
        match self.head_variant {
            HeadVariant::Fcn => self.n_hist_layers,
            HeadVariant::Cnn => self.cnn_channels.len(),
        }
    }
}

/// Constant graph operators for one network, as tensors.
#[derive(Debug, Clone)]
pub struct ModelTopology {
    pub n_d: usize,
    pub n_l: usize,
    pub a_hat: Tensor,
    pub incidence: Tensor,
}

impl ModelTopology {
    pub fn new(net: &DirectedNetwork) -> Self {
        let a_hat = net.line_graph().renormalized();
        let incidence = net.incidence();
        Self {
            n_d: net.node_count(),
            n_l: net.sensor_count(),
            a_hat: Tensor::from_dmatrix(&a_hat.0),
            incidence: Tensor::from_dmatrix(&incidence.0),
        }
    }
}

/// Every learnable tensor, in a fixed order described by [`FlGcnParams::names`].
#[derive(Debug, Clone, PartialEq)]
pub struct FlGcnParams {
    config: FlGcnConfig,
    n_d: usize,
    tensors: Vec<Tensor>,
}

impl FlGcnParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(config: &FlGcnConfig, n_d: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_d < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 interchanges, got {n_d}")));
        }
        let specs = tensor_specs(config, n_d);
        let tensors = specs
            .iter()
            .enumerate()
            .map(|(i, spec)| match spec.kind {
                TensorKind::Bias => Tensor::zeros(&spec.shape),
                TensorKind::Weight { fan_in, fan_out } => {
                    let bound = glorot_bound(fan_in, fan_out);
                    let mut rng = substream(seed, "init", &[i as u64]);
                    let n = spec.shape.iter().product();
                    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
                    Tensor::new(spec.shape.clone(), data).expect("finite by construction")
                }
            })
            .collect();
        Ok(Self { config: config.clone(), n_d, tensors })
    }

    /// Assembles parameters from explicit tensors, checking every shape.
    pub fn from_tensors(config: &FlGcnConfig, n_d: usize, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let specs = tensor_specs(config, n_d);
        if specs.len() != tensors.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        for (spec, t) in specs.iter().zip(&tensors) {
            if spec.shape != t.shape() {
                return Err(TensorError::ShapeMismatch { op: "parameter", lhs: spec.shape.clone(), rhs: t.shape().to_vec() }.into());
            }
        }
        Ok(Self { config: config.clone(), n_d, tensors })
    }

    pub fn config(&self) -> &FlGcnConfig {
        &self.config
    }

    pub fn n_d(&self) -> usize {
        self.n_d
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> Vec<String> {
        tensor_specs(&self.config, self.n_d).into_iter().map(|s| s.name).collect()
    }

    pub fn glorot_bounds(&self) -> Vec<Option<f64>> {
        tensor_specs(&self.config, self.n_d)
            .into_iter()
            .map(|s| match s.kind {
                TensorKind::Weight { fan_in, fan_out } => Some(glorot_bound(fan_in, fan_out)),
                TensorKind::Bias => None,
            })
            .collect()
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        BoundParams {
            layout: Layout::new(&self.config),
            variant: self.config.head_variant,
            vars: self.tensors.iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }
}

fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Debug, Clone, Copy)]
enum TensorKind {
    Weight { fan_in: usize, fan_out: usize },
    Bias,
}

#[derive(Debug, Clone)]
struct TensorSpec {
    name: String,
    shape: Vec<usize>,
    kind: TensorKind,
}

fn tensor_specs(config: &FlGcnConfig, n_d: usize) -> Vec<TensorSpec> {
    let weight = |name: String, fan_in, fan_out, shape: Vec<usize>| TensorSpec {
        name,
        shape,
        kind: TensorKind::Weight { fan_in, fan_out },
    };
    let bias = |name: String, shape: Vec<usize>| TensorSpec { name, shape, kind: TensorKind::Bias };
    let dests = n_d - 1;
    let c = config.gcn_hidden;
    let mut specs = Vec::new();
    let mut width = 2 * config.k_link_lags;
    for l in 0..config.n_gcn_layers {
        specs.push(weight(format!("gcn.{l}.weight"), width, c, vec![width, c]));
        specs.push(bias(format!("gcn.{l}.bias"), vec![c]));
        width = c;
    }
    specs.push(weight("head.weight".into(), c, dests, vec![c, dests]));
    specs.push(bias("head.bias".into(), vec![n_d, dests]));
    specs.push(weight("fusion.weight".into(), dests, dests, vec![dests, dests]));
    match config.head_variant {
        HeadVariant::Fcn => {
            for l in 0..config.n_hist_layers {
                specs.push(weight(format!("hist.{l}.weight"), dests, dests, vec![dests, dests]));
                specs.push(bias(format!("hist.{l}.bias"), vec![dests]));
            }
        }
        HeadVariant::Cnn => {
            let mut c_in = 1;
            for (l, &c_out) in config.cnn_channels.iter().enumerate() {
                specs.push(weight(format!("hist.{l}.kernel"), c_in * 9, c_out * 9, vec![c_out, c_in, 3, 3]));
                specs.push(bias(format!("hist.{l}.bias"), vec![c_out]));
                c_in = c_out;
            }
        }
    }
    specs.push(bias("fusion.bias".into(), vec![n_d, dests]));
    specs
}

/// Index arithmetic over the parameter order.
#[derive(Debug, Clone, Copy)]
pub struct Layout {
    n_gcn: usize,
    n_hist: usize,
}

impl Layout {
    fn new(config: &FlGcnConfig) -> Self {
        Self { n_gcn: config.n_gcn_layers, n_hist: config.hist_layers() }
    }

    pub fn gcn(&self, layer: usize) -> (usize, usize) {
        (2 * layer, 2 * layer + 1)
    }

    pub fn head(&self) -> (usize, usize) {
        (2 * self.n_gcn, 2 * self.n_gcn + 1)
    }

    pub fn fusion_weight(&self) -> usize {
        2 * self.n_gcn + 2
    }

    pub fn hist(&self, layer: usize) -> (usize, usize) {
        let base = 2 * self.n_gcn + 3;
        (base + 2 * layer, base + 2 * layer + 1)
    }

    pub fn hist_layers(&self) -> usize {
        self.n_hist
    }

    pub fn fusion_bias(&self) -> usize {
        2 * self.n_gcn + 3 + 2 * self.n_hist
    }

    pub fn gcn_layers(&self) -> usize {
        self.n_gcn
    }
}

/// Parameters recorded on a tape, in [`FlGcnParams`] order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    layout: Layout,
    variant: HeadVariant,
    vars: Vec<Var>,
}

impl BoundParams {
    /// Wraps vars already on a tape, in parameter order.
    pub fn from_vars(config: &FlGcnConfig, vars: Vec<Var>) -> Self {
        Self { layout: Layout::new(config), variant: config.head_variant, vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// GCN stack over link features: `[n_l, 2k] -> [n_l, c]`.
pub fn forward_gcn(tape: &mut Tape, z: Var, a_hat: Var, params: &BoundParams) -> Result<Var, TensorError> {
    let mut h = z;
    for l in 0..params.layout.gcn_layers() {
        let (w, b) = params.layout.gcn(l);
        let mixed = tape.matmul(a_hat, h)?;
        let lin = tape.matmul(mixed, params.vars[w])?;
        let lin = tape.add_bias(lin, params.vars[b])?;
        h = tape.relu(lin)?;
    }
    Ok(h)
}

/// Line-graph head: `relu(P h W2 + b2)`, `[n_l, c] -> [n_d, n_d-1]`.
pub fn forward_lgcn(tape: &mut Tape, link_features: Var, incidence: Var, params: &BoundParams) -> Result<Var, TensorError> {
    let (w, b) = params.layout.head();
    let nodes = tape.matmul(incidence, link_features)?;
    let lin = tape.matmul(nodes, params.vars[w])?;
    let lin = tape.add_bias(lin, params.vars[b])?;
    tape.relu(lin)
}

/// Historical branch over `[n_d, n_d-1]`; last layer linear.
pub fn forward_historical(tape: &mut Tape, x_hist: Var, params: &BoundParams) -> Result<Var, TensorError> {
    let layers = params.layout.hist_layers();
    match params.variant {
        HeadVariant::Fcn => {
            let mut x = x_hist;
            for l in 0..layers {
                let (w, b) = params.layout.hist(l);
                let lin = tape.matmul(x, params.vars[w])?;
                x = tape.add_bias(lin, params.vars[b])?;
                if l + 1 < layers {
                    x = tape.relu(x)?;
                }
            }
            Ok(x)
        }
        HeadVariant::Cnn => {
            let shape = tape.value(x_hist).shape().to_vec();
            if shape.len() != 2 {
                return Err(TensorError::InvalidShape { shape, reason: "historical O-D must be a matrix" });
            }
            let mut x = tape.reshape(x_hist, &[1, shape[0], shape[1]])?;
            for l in 0..layers {
                let (k, b) = params.layout.hist(l);
                x = tape.conv2d(x, params.vars[k], params.vars[b])?;
                if l + 1 < layers {
                    x = tape.relu(x)?;
                }
            }
            tape.reshape(x, &shape)
        }
    }
}

/// Graph operators recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BoundTopology {
    pub a_hat: Var,
    pub incidence: Var,
}

impl ModelTopology {
    pub fn bind(&self, tape: &mut Tape) -> BoundTopology {
        BoundTopology { a_hat: tape.leaf(self.a_hat.clone()), incidence: tape.leaf(self.incidence.clone()) }
    }
}

/// Full forward pass, unclamped: `x_hat = xL W3 + branch(xH) + b3`.
pub fn forward_flgcn(
    tape: &mut Tape,
    z: Var,
    x_hist: Var,
    topology: BoundTopology,
    params: &BoundParams,
) -> Result<Var, TensorError> {
    let links = forward_gcn(tape, z, topology.a_hat, params)?;
    let x_l = forward_lgcn(tape, links, topology.incidence, params)?;
    let fused = tape.matmul(x_l, params.vars[params.layout.fusion_weight()])?;
    let branch = forward_historical(tape, x_hist, params)?;
    let sum = tape.add(fused, branch)?;
    tape.add_bias(sum, params.vars[params.layout.fusion_bias()])
}

/// Forward pass on normalized inputs, returning the unclamped output.
pub fn evaluate(topology: &ModelTopology, params: &FlGcnParams, z: &Tensor, x_hist: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let topo = topology.bind(&mut tape);
    let bound = params.bind(&mut tape);
    let z = tape.leaf(z.clone());
    let x_hist = tape.leaf(x_hist.clone());
    let out = forward_flgcn(&mut tape, z, x_hist, topo, &bound)?;
    Ok(tape.value(out).clone())
}

/// A trained model with the normalization it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: FlGcnParams,
    pub norm: NormStats,
    /// Free-form provenance (config digest, seed, horizon).
    pub provenance: String,
}

const MAGIC: &[u8; 8] = b"ODCASTCK";
const FORMAT_VERSION: u32 = 1;

impl Checkpoint {
    /// Predicts an O-D matrix from raw flows: normalizes, runs the network,
    /// denormalizes and clamps at zero.
    pub fn predict(&self, topology: &ModelTopology, z_raw: &Tensor, x_hist_raw: &Tensor) -> Result<Tensor> {
        let z = self.norm.normalize_links(z_raw);
        let xh = self.norm.normalize_od(x_hist_raw);
        let mut out = evaluate(topology, &self.params, &z, &xh)?;
        for v in out.data_mut() {
            *v = (*v * self.norm.od_scale()).max(0.0);
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        let cfg = self.params.config();
        buf.extend_from_slice(MAGIC);
        put_u32(&mut buf, FORMAT_VERSION);
        buf.push(match cfg.head_variant {
            HeadVariant::Fcn => 0,
            HeadVariant::Cnn => 1,
        });
        for v in [cfg.n_gcn_layers, cfg.gcn_hidden, cfg.n_hist_layers, cfg.k_link_lags, self.params.n_d()] {
            put_u32(&mut buf, v as u32);
        }
        put_u32(&mut buf, cfg.cnn_channels.len() as u32);
        for &c in &cfg.cnn_channels {
            put_u32(&mut buf, c as u32);
        }
        put_str(&mut buf, &self.provenance);

        let mut named: Vec<(String, Tensor)> = self.params.names().into_iter().zip(self.params.tensors().iter().cloned()).collect();
        named.push(("norm.link_max".into(), Tensor::scalar(self.norm.link_max)));
        named.push(("norm.od_max".into(), Tensor::scalar(self.norm.od_max)));
        put_u32(&mut buf, named.len() as u32);
        for (name, t) in &named {
            put_str(&mut buf, name);
            put_u32(&mut buf, t.shape().len() as u32);
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let head_variant = match r.take(1)?[0] {
            0 => HeadVariant::Fcn,
            1 => HeadVariant::Cnn,
            other => return Err(Error::Checkpoint(format!("unknown head variant tag {other}"))),
        };
        let n_gcn_layers = r.u32()? as usize;
        let gcn_hidden = r.u32()? as usize;
        let n_hist_layers = r.u32()? as usize;
        let k_link_lags = r.u32()? as usize;
        let n_d = r.u32()? as usize;
        let n_channels = r.u32()? as usize;
        let cnn_channels = (0..n_channels).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let config = FlGcnConfig { n_gcn_layers, gcn_hidden, head_variant, n_hist_layers, cnn_channels, k_link_lags };
        let provenance = r.string()?;

        let count = r.u32()? as usize;
        let mut named = Vec::with_capacity(count);
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            named.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let od = named.pop().filter(|(n, _)| n == "norm.od_max");
        let link = named.pop().filter(|(n, _)| n == "norm.link_max");
        let (Some((_, od)), Some((_, link))) = (od, link) else {
            return Err(Error::Checkpoint("missing normalization tensors".into()));
        };
        let expected = tensor_specs(&config, n_d);
        if expected.len() != named.len() || expected.iter().zip(&named).any(|(s, (n, _))| &s.name != n) {
            return Err(Error::Checkpoint("parameter names do not match the configured layout".into()));
        }
        let params = FlGcnParams::from_tensors(&config, n_d, named.into_iter().map(|(_, t)| t).collect())?;
        Ok(Self { params, norm: NormStats { link_max: link.item(), od_max: od.item() }, provenance })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Checkpoint(format!("invalid utf-8: {e}")))
    }
}
