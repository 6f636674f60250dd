//! Heads, layers and stacked models with exact reverse-mode gradients.
//!
//! All learnable parameters of a model live in one flat vector. Layer by
//! layer and head by head it holds each channel's reconciliation vector,
//! then that head's remainder parameters.
//!
//! Training touches three kinds of values: a [`Fabricated`] set of weight
//! matrices (built once per parameter update), a per-sample [`Trace`] of
//! the forward pass, and an [`Accum`] of matrix-level gradients that
//! [`Model::collect_grads`] maps back onto the parameter vector.

use serde::{Deserialize, Serialize};

use crate::error::{config, shape, Result};
use crate::expand::ExpansionSpec;
use crate::reconcile::{Reconciler, ReconciliationSpec};
use crate::remainder::{linear_map, linear_map_vjp, Remainder, RemainderSpec};
use crate::rng::Rng;

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub expansion: ExpansionSpec,
    pub reconciliation: ReconciliationSpec,
    #[serde(default)]
    pub remainder: RemainderSpec,
    #[serde(default = "one")]
    pub channels: usize,
}

impl HeadSpec {
    pub fn new(expansion: ExpansionSpec, reconciliation: ReconciliationSpec, remainder: RemainderSpec) -> Self {
        Self {
            expansion,
            reconciliation,
            remainder,
            channels: 1,
        }
    }

    pub fn with_channels(mut self, channels: usize) -> Self {
        self.channels = channels;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub heads: Vec<HeadSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// One single-head layer per consecutive pair in `dims`, all sharing
    /// `head`.
    pub fn stack(dims: &[usize], head: &HeadSpec) -> Self {
        Self::stack_with(dims, |_| head.clone())
    }

    pub fn stack_with(dims: &[usize], mut head: impl FnMut(usize) -> HeadSpec) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| LayerSpec {
                in_dim: w[0],
                out_dim: w[1],
                heads: vec![head(k)],
            })
            .collect();
        Self { layers }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.layers.iter().map(|l| l.in_dim).collect();
        if let Some(last) = self.layers.last() {
            d.push(last.out_dim);
        }
        d
    }
}

/// One head bound to input dimension `m` and output dimension `n`.
#[derive(Clone, Debug)]
pub struct Head {
    m: usize,
    n: usize,
    d: usize,
    expansion: ExpansionSpec,
    recon: Reconciler,
    channels: usize,
    remainder: Remainder,
}

/// Channel-summed weight matrix of one head, plus remainder weights.
#[derive(Clone, Debug)]
pub struct HeadFab {
    w: Vec<f64>,
    rem: Vec<f64>,
    child: Option<Box<HeadFab>>,
}

/// Per-sample forward intermediates of one head.
#[derive(Clone, Debug)]
pub struct HeadTrace {
    kappa: Vec<f64>,
    z: Vec<f64>,
    child: Option<Box<HeadTrace>>,
}

/// Gradient with respect to a head's fabricated matrix and remainder
/// weights, summed over samples.
#[derive(Clone, Debug)]
pub struct HeadGrad {
    w: Vec<f64>,
    rem: Vec<f64>,
    child: Option<Box<HeadGrad>>,
}

impl HeadGrad {
    fn add(&mut self, other: &HeadGrad) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            *a += b;
        }
        for (a, b) in self.rem.iter_mut().zip(&other.rem) {
            *a += b;
        }
        if let (Some(a), Some(b)) = (self.child.as_mut(), other.child.as_ref()) {
            a.add(b);
        }
    }
}

impl Head {
    pub fn build(spec: &HeadSpec, m: usize, n: usize) -> Result<Self> {
        if spec.channels == 0 {
            return config("a head needs at least one channel");
        }
        let d = spec.expansion.out_dim(m)?;
        let recon = Reconciler::build(&spec.reconciliation, n, d)?;
        let remainder = Remainder::build(&spec.remainder, m, n)?;
        Ok(Self {
            m,
            n,
            d,
            expansion: spec.expansion.clone(),
            recon,
            channels: spec.channels,
            remainder,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.m
    }

    pub fn out_dim(&self) -> usize {
        self.n
    }

    /// Expansion output dimension `D`.
    pub fn expansion_dim(&self) -> usize {
        self.d
    }

    pub fn reconciler(&self) -> &Reconciler {
        &self.recon
    }

    pub fn remainder(&self) -> &Remainder {
        &self.remainder
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn channel_len(&self) -> usize {
        self.recon.storage_len()
    }

    pub fn param_len(&self) -> usize {
        self.channels * self.channel_len() + self.remainder.param_len()
    }

    pub fn param_count(&self) -> usize {
        self.channels * self.recon.required_length() + self.remainder.param_count()
    }

    /// Channel vectors `~ N(0, 1/l)`, then remainder parameters.
    pub fn init(&self, rng: &mut Rng) -> Vec<f64> {
        let l = self.channel_len();
        let s = 1.0 / (self.recon.required_length().max(1) as f64).sqrt();
        let mut out: Vec<f64> = (0..self.channels * l).map(|_| s * rng.normal()).collect();
        out.extend(self.remainder.init(rng));
        out
    }

    fn split<'a>(&self, params: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        params.split_at(self.channels * self.channel_len())
    }

    pub fn fabricate(&self, params: &[f64]) -> Result<HeadFab> {
        if params.len() != self.param_len() {
            return shape(format!(
                "head expects {} parameters, got {}",
                self.param_len(),
                params.len()
            ));
        }
        let (chan, rem) = self.split(params);
        let l = self.channel_len();
        let mut w = self.recon.forward(&chan[..l])?;
        for c in 1..self.channels {
            let wc = self.recon.forward(&chan[c * l..(c + 1) * l])?;
            for (a, b) in w.iter_mut().zip(wc) {
                *a += b;
            }
        }
        let child = match &self.remainder {
            Remainder::Complementary(h) => Some(Box::new(h.fabricate(rem)?)),
            _ => None,
        };
        Ok(HeadFab {
            w,
            rem: rem.to_vec(),
            child,
        })
    }

    pub fn forward_fab(&self, fab: &HeadFab, x: &[f64]) -> Result<(Vec<f64>, HeadTrace)> {
        if x.len() != self.m {
            return shape(format!("head expects input of length {}, got {}", self.m, x.len()));
        }
        let kappa = self.expansion.forward(x)?;
        let d = self.d;
        let mut out: Vec<f64> = (0..self.n).map(|i| dot(&fab.w[i * d..(i + 1) * d], &kappa)).collect();
        let mut z = Vec::new();
        let mut child = None;
        match &self.remainder {
            Remainder::Zero => {}
            Remainder::Constant(c) => add_into(&mut out, c),
            Remainder::Identity(act) => add_into(&mut out, &act.apply(x)),
            Remainder::Linear { m, n, act } => {
                z = linear_map(x, &fab.rem, *m, *n);
                add_into(&mut out, &act.apply(&z));
            }
            Remainder::Complementary(h) => {
                let cf = fab.child.as_ref().expect("child fabricated");
                let (co, ct) = h.forward_fab(cf, x)?;
                add_into(&mut out, &co);
                child = Some(Box::new(ct));
            }
        }
        Ok((out, HeadTrace { kappa, z, child }))
    }

    pub fn new_grad(&self) -> HeadGrad {
        HeadGrad {
            w: vec![0.0; self.n * self.d],
            rem: vec![0.0; self.remainder_matrix_len()],
            child: match &self.remainder {
                Remainder::Complementary(h) => Some(Box::new(h.new_grad())),
                _ => None,
            },
        }
    }

    fn remainder_matrix_len(&self) -> usize {
        match self.remainder {
            Remainder::Linear { m, n, .. } => m * n,
            _ => 0,
        }
    }

    /// Accumulates parameter-side gradients into `acc`; returns `∂L/∂x`
    /// when `need_x`.
    pub fn backward_fab(
        &self,
        fab: &HeadFab,
        x: &[f64],
        trace: &HeadTrace,
        g: &[f64],
        acc: &mut HeadGrad,
        need_x: bool,
    ) -> Result<Option<Vec<f64>>> {
        let d = self.d;
        for (i, &gi) in g.iter().enumerate() {
            if gi != 0.0 {
                for (a, k) in acc.w[i * d..(i + 1) * d].iter_mut().zip(&trace.kappa) {
                    *a += gi * k;
                }
            }
        }
        let mut gx = if need_x {
            let mut gk = vec![0.0; d];
            for (i, &gi) in g.iter().enumerate() {
                if gi != 0.0 {
                    for (a, w) in gk.iter_mut().zip(&fab.w[i * d..(i + 1) * d]) {
                        *a += gi * w;
                    }
                }
            }
            Some(self.expansion.vjp(x, &gk)?)
        } else {
            None
        };
        match &self.remainder {
            Remainder::Zero | Remainder::Constant(_) => {}
            Remainder::Identity(act) => {
                if let Some(gx) = gx.as_mut() {
                    add_into(gx, &act.vjp(x, g));
                }
            }
            Remainder::Linear { m, n, act } => {
                let gz = act.vjp(&trace.z, g);
                let (gxr, gw) = linear_map_vjp(x, &fab.rem, *m, *n, &gz);
                add_into(&mut acc.rem, &gw);
                if let Some(gx) = gx.as_mut() {
                    add_into(gx, &gxr);
                }
            }
            Remainder::Complementary(h) => {
                let cg = h.backward_fab(
                    fab.child.as_ref().expect("child fabricated"),
                    x,
                    trace.child.as_ref().expect("child traced"),
                    g,
                    acc.child.as_mut().expect("child gradient"),
                    need_x,
                )?;
                if let (Some(gx), Some(cg)) = (gx.as_mut(), cg) {
                    add_into(gx, &cg);
                }
            }
        }
        Ok(gx)
    }

    /// Maps accumulated matrix gradients onto this head's parameters.
    pub fn collect_grads(&self, params: &[f64], acc: &HeadGrad) -> Result<Vec<f64>> {
        let (chan, rem) = self.split(params);
        let l = self.channel_len();
        let mut out = Vec::with_capacity(params.len());
        for c in 0..self.channels {
            out.extend(self.recon.vjp(&chan[c * l..(c + 1) * l], &acc.w)?);
        }
        match &self.remainder {
            Remainder::Linear { .. } => out.extend_from_slice(&acc.rem),
            Remainder::Complementary(h) => {
                out.extend(h.collect_grads(rem, acc.child.as_ref().expect("child gradient"))?)
            }
            _ => {}
        }
        Ok(out)
    }

    pub fn forward(&self, x: &[f64], params: &[f64]) -> Result<Vec<f64>> {
        let fab = self.fabricate(params)?;
        Ok(self.forward_fab(&fab, x)?.0)
    }

    /// Single-sample `(∂L/∂x, ∂L/∂params)` for output gradient `g`.
    pub fn vjp(&self, x: &[f64], params: &[f64], g: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let fab = self.fabricate(params)?;
        let (_, trace) = self.forward_fab(&fab, x)?;
        let mut acc = self.new_grad();
        let gx = self
            .backward_fab(&fab, x, &trace, g, &mut acc, true)?
            .expect("input gradient requested");
        Ok((gx, self.collect_grads(params, &acc)?))
    }
}

#[derive(Clone, Debug)]
pub struct Layer {
    m: usize,
    n: usize,
    heads: Vec<Head>,
}

impl Layer {
    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    pub fn in_dim(&self) -> usize {
        self.m
    }

    pub fn out_dim(&self) -> usize {
        self.n
    }
}

/// Which part of a head a parameter segment feeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Channel(usize),
    Remainder,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub layer: usize,
    pub head: usize,
    pub role: Role,
    pub offset: usize,
    pub len: usize,
    /// Entries that training may change; below `len` only under masking.
    pub learnable: usize,
}

/// Flat parameter vector with a parallel gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
}

impl ParamStore {
    pub fn new(values: Vec<f64>) -> Self {
        let grads = vec![0.0; values.len()];
        Self { values, grads }
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }
}

pub type Fabricated = Vec<Vec<HeadFab>>;

/// Inputs to every layer plus per-head intermediates.
#[derive(Clone, Debug)]
pub struct Trace {
    inputs: Vec<Vec<f64>>,
    heads: Vec<Vec<HeadTrace>>,
}

#[derive(Clone, Debug)]
pub struct Accum {
    heads: Vec<Vec<HeadGrad>>,
}

impl Accum {
    pub fn add(&mut self, other: &Accum) {
        for (la, lb) in self.heads.iter_mut().zip(&other.heads) {
            for (a, b) in la.iter_mut().zip(lb) {
                a.add(b);
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<Layer>,
    /// Start of each head's parameters, per layer.
    offsets: Vec<Vec<usize>>,
    len: usize,
}

impl Model {
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        if spec.layers.is_empty() {
            return config("a model needs at least one layer");
        }
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut offsets = Vec::with_capacity(spec.layers.len());
        let mut len = 0;
        for (k, ls) in spec.layers.iter().enumerate() {
            if ls.in_dim == 0 || ls.out_dim == 0 {
                return config(format!("layer {k} has a zero dimension"));
            }
            if k > 0 && spec.layers[k - 1].out_dim != ls.in_dim {
                return config(format!(
                    "layer {k} input {} does not match layer {} output {}",
                    ls.in_dim,
                    k - 1,
                    spec.layers[k - 1].out_dim
                ));
            }
            if ls.heads.is_empty() {
                return config(format!("layer {k} has no heads"));
            }
            let mut heads = Vec::with_capacity(ls.heads.len());
            let mut offs = Vec::with_capacity(ls.heads.len());
            for (h, hs) in ls.heads.iter().enumerate() {
                let head = Head::build(hs, ls.in_dim, ls.out_dim).map_err(|e| match e {
                    crate::Error::Config(msg) => crate::Error::Config(format!("layer {k} head {h}: {msg}")),
                    other => other,
                })?;
                offs.push(len);
                len += head.param_len();
                heads.push(head);
            }
            layers.push(Layer {
                m: ls.in_dim,
                n: ls.out_dim,
                heads,
            });
            offsets.push(offs);
        }
        Ok(Self {
            spec: spec.clone(),
            layers,
            offsets,
            len,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].m
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").n
    }

    /// Length of the stored parameter vector.
    pub fn param_len(&self) -> usize {
        self.len
    }

    /// Number of learnable parameters.
    pub fn param_count(&self) -> usize {
        self.layers.iter().flat_map(|l| &l.heads).map(Head::param_count).sum()
    }

    pub fn segments(&self) -> Vec<Segment> {
        let mut out = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            for (h, head) in layer.heads.iter().enumerate() {
                let mut off = self.offsets[k][h];
                let cl = head.channel_len();
                let learnable = match head.recon.mask() {
                    Some(mask) => mask.iter().filter(|&&b| b).count(),
                    None => cl,
                };
                for c in 0..head.channels {
                    out.push(Segment {
                        layer: k,
                        head: h,
                        role: Role::Channel(c),
                        offset: off,
                        len: cl,
                        learnable,
                    });
                    off += cl;
                }
                let rl = head.remainder.param_len();
                if rl > 0 {
                    out.push(Segment {
                        layer: k,
                        head: h,
                        role: Role::Remainder,
                        offset: off,
                        len: rl,
                        learnable: head.remainder.param_count(),
                    });
                }
            }
        }
        out
    }

    pub fn init_params(&self, rng: &mut Rng) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len);
        for layer in &self.layers {
            for head in &layer.heads {
                out.extend(head.init(rng));
            }
        }
        out
    }

    pub fn param_store(&self, rng: &mut Rng) -> ParamStore {
        ParamStore::new(self.init_params(rng))
    }

    fn head_params<'a>(&self, params: &'a [f64], k: usize, h: usize) -> &'a [f64] {
        let off = self.offsets[k][h];
        &params[off..off + self.layers[k].heads[h].param_len()]
    }

    pub fn fabricate(&self, params: &[f64]) -> Result<Fabricated> {
        if params.len() != self.len {
            return shape(format!("model expects {} parameters, got {}", self.len, params.len()));
        }
        self.layers
            .iter()
            .enumerate()
            .map(|(k, layer)| {
                (0..layer.heads.len())
                    .map(|h| layer.heads[h].fabricate(self.head_params(params, k, h)))
                    .collect()
            })
            .collect()
    }

    pub fn forward_fab(&self, fab: &Fabricated, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(fab, x)?.0)
    }

    pub fn forward_trace(&self, fab: &Fabricated, x: &[f64]) -> Result<(Vec<f64>, Trace)> {
        if x.len() != self.in_dim() {
            return shape(format!(
                "model expects input of length {}, got {}",
                self.in_dim(),
                x.len()
            ));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for (layer, lfab) in self.layers.iter().zip(fab) {
            let mut out = vec![0.0; layer.n];
            let mut lt = Vec::with_capacity(layer.heads.len());
            for (head, hfab) in layer.heads.iter().zip(lfab) {
                let (o, t) = head.forward_fab(hfab, &h)?;
                add_into(&mut out, &o);
                lt.push(t);
            }
            inputs.push(std::mem::replace(&mut h, out));
            traces.push(lt);
        }
        Ok((h, Trace { inputs, heads: traces }))
    }

    pub fn new_accum(&self) -> Accum {
        Accum {
            heads: self
                .layers
                .iter()
                .map(|l| l.heads.iter().map(Head::new_grad).collect())
                .collect(),
        }
    }

    /// Back-propagates `g = ∂L/∂output` for one sample into `acc`. The
    /// input gradient is returned only when `need_input`; the first
    /// layer's expansion Jacobian is skipped otherwise.
    pub fn backward(
        &self,
        fab: &Fabricated,
        trace: &Trace,
        g: &[f64],
        acc: &mut Accum,
        need_input: bool,
    ) -> Result<Option<Vec<f64>>> {
        if g.len() != self.out_dim() {
            return shape(format!(
                "output gradient has length {}, expected {}",
                g.len(),
                self.out_dim()
            ));
        }
        let mut g = g.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let need_x = k > 0 || need_input;
            let mut gin = vec![0.0; layer.m];
            for (h, head) in layer.heads.iter().enumerate() {
                let gx = head.backward_fab(
                    &fab[k][h],
                    &trace.inputs[k],
                    &trace.heads[k][h],
                    &g,
                    &mut acc.heads[k][h],
                    need_x,
                )?;
                if let Some(gx) = gx {
                    add_into(&mut gin, &gx);
                }
            }
            if !need_x {
                return Ok(None);
            }
            g = gin;
        }
        Ok(Some(g))
    }

    /// Reconciliation adjoints: turns an [`Accum`] into `∂L/∂params`.
    pub fn collect_grads(&self, params: &[f64], acc: &Accum) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len);
        for (k, layer) in self.layers.iter().enumerate() {
            for (h, head) in layer.heads.iter().enumerate() {
                out.extend(head.collect_grads(self.head_params(params, k, h), &acc.heads[k][h])?);
            }
        }
        Ok(out)
    }

    pub fn predict(&self, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let fab = self.fabricate(params)?;
        self.forward_fab(&fab, x)
    }

    /// Single-sample `(∂L/∂params, ∂L/∂x)` for output gradient `g`.
    pub fn gradient(&self, params: &[f64], x: &[f64], g: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let fab = self.fabricate(params)?;
        let (_, trace) = self.forward_trace(&fab, x)?;
        let mut acc = self.new_accum();
        let gx = self
            .backward(&fab, &trace, g, &mut acc, true)?
            .expect("input gradient requested");
        Ok((self.collect_grads(params, &acc)?, gx))
    }

    /// Fills `store.grads` with `∂L/∂params` for one sample.
    pub fn backward_into(&self, store: &mut ParamStore, x: &[f64], g: &[f64]) -> Result<()> {
        store.grads = self.gradient(&store.values, x, g)?.0;
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}
