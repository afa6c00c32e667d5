//! Network assembly: a configurable residual CNN whose trainable tensors are
//! all [`FuncParam`]s, and its materialized fixed-weight counterpart.

use funcnet_tensor::{kernels, Element, Shape, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::func_param::{
    normalize, normalize_on_tape, FuncParam, MapKind, MlpH, MlpVars, ParamDomain, ParamMap,
};
use crate::rng::{stream, Purpose};

/// Channel width of the default backbone.
pub const DESK_WIDTH: usize = 32;
/// Residual blocks in the default backbone.
pub const DESK_BLOCKS: usize = 3;

/// Address of the learned map's init stream, disjoint from parameter indices.
const MLP_INIT_STREAM: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        in_ch: usize,
        out_ch: usize,
        k: usize,
    },
    Prelu {
        ch: usize,
    },
    ChannelAffine {
        ch: usize,
    },
    /// Saves the current activation for the matching [`LayerSpec::ResidualBlockEnd`].
    ResidualBlockBegin,
    /// Adds the activation saved by the innermost open block.
    ResidualBlockEnd,
    /// Adds the network input to the current activation.
    GlobalSkipAdd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
    pub domain: ParamDomain,
    pub map: MapKind,
    /// The layer stack predicts a residual that is added to the input.
    pub residual_output: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamInit {
    He { fan_in: usize },
    Const(f64),
}

/// One trainable tensor of a network, in canonical order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub layer: usize,
    pub dims: Vec<usize>,
    pub init: ParamInit,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

impl NetworkConfig {
    /// Conv(C→32) → 3 × [Conv, PReLU, Conv, ChannelAffine, local skip] → Conv(32→C).
    pub fn desk_default(input_channels: usize, domain: ParamDomain, map: MapKind) -> Self {
        let w = DESK_WIDTH;
        let mut layers = vec![LayerSpec::Conv {
            in_ch: input_channels,
            out_ch: w,
            k: 3,
        }];
        for _ in 0..DESK_BLOCKS {
            layers.extend([
                LayerSpec::ResidualBlockBegin,
                LayerSpec::Conv {
                    in_ch: w,
                    out_ch: w,
                    k: 3,
                },
                LayerSpec::Prelu { ch: w },
                LayerSpec::Conv {
                    in_ch: w,
                    out_ch: w,
                    k: 3,
                },
                LayerSpec::ChannelAffine { ch: w },
                LayerSpec::ResidualBlockEnd,
            ]);
        }
        layers.push(LayerSpec::Conv {
            in_ch: w,
            out_ch: input_channels,
            k: 3,
        });
        NetworkConfig {
            input_channels,
            layers,
            domain,
            map,
            residual_output: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.domain.validate()?;
        if self.input_channels == 0 {
            return bad("input_channels must be at least 1".into());
        }
        if self.layers.is_empty() {
            return bad("network has no layers".into());
        }
        let mut ch = self.input_channels;
        let mut open: Vec<usize> = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv { in_ch, out_ch, k } => {
                    if in_ch != ch {
                        return bad(format!(
                            "layer {i}: conv expects {in_ch} channels but receives {ch}"
                        ));
                    }
                    if out_ch == 0 {
                        return bad(format!("layer {i}: conv has zero output channels"));
                    }
                    if k == 0 || k % 2 == 0 {
                        return bad(format!("layer {i}: kernel size {k} is not odd"));
                    }
                    ch = out_ch;
                }
                LayerSpec::Prelu { ch: c } | LayerSpec::ChannelAffine { ch: c } => {
                    if c != ch {
                        return bad(format!("layer {i}: expects {c} channels but receives {ch}"));
                    }
                }
                LayerSpec::ResidualBlockBegin => open.push(ch),
                LayerSpec::ResidualBlockEnd => match open.pop() {
                    None => return bad(format!("layer {i}: residual block end without begin")),
                    Some(c) if c != ch => {
                        return bad(format!(
                            "layer {i}: residual skip joins {c} and {ch} channels"
                        ));
                    }
                    Some(_) => {}
                },
                LayerSpec::GlobalSkipAdd => {
                    if ch != self.input_channels {
                        return bad(format!(
                            "layer {i}: global skip joins {ch} channels with {} input channels",
                            self.input_channels
                        ));
                    }
                }
            }
        }
        if !open.is_empty() {
            return bad(format!("{} residual block(s) left open", open.len()));
        }
        if self.residual_output && ch != self.input_channels {
            return bad(format!(
                "residual output needs {} output channels, network emits {ch}",
                self.input_channels
            ));
        }
        if self.map != MapKind::LearnedMlp {
            let map = analytic_map::<f64>(self.map);
            normalize(&self.domain, &map, self.domain.lo)?;
        }
        Ok(())
    }

    /// Trainable tensors in canonical order.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        let mut push = |layer: usize, what: &str, dims: Vec<usize>, init| {
            specs.push(ParamSpec {
                name: format!("layer{layer}.{what}"),
                layer,
                dims,
                init,
            })
        };
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                LayerSpec::Conv { in_ch, out_ch, k } => {
                    push(
                        i,
                        "kernel",
                        vec![out_ch, in_ch, k, k],
                        ParamInit::He {
                            fan_in: in_ch * k * k,
                        },
                    );
                    push(i, "bias", vec![out_ch], ParamInit::Const(0.0));
                }
                LayerSpec::Prelu { ch } => push(i, "slope", vec![ch], ParamInit::Const(0.25)),
                LayerSpec::ChannelAffine { ch } => {
                    push(i, "scale", vec![ch], ParamInit::Const(1.0));
                    push(i, "shift", vec![ch], ParamInit::Const(0.0));
                }
                _ => {}
            }
        }
        specs
    }

    /// Scalar count of one plain (materialized) network.
    pub fn plain_scalar_count(&self) -> usize {
        self.param_specs().iter().map(ParamSpec::numel).sum()
    }

    /// Multiply-adds of one forward pass on a single `h`×`w` image: one per
    /// conv tap and one per element for PReLU and ChannelAffine.
    pub fn forward_macs(&self, h: usize, w: usize) -> u64 {
        let px = (h * w) as u64;
        self.layers
            .iter()
            .map(|l| match *l {
                LayerSpec::Conv { in_ch, out_ch, k } => px * (in_ch * out_ch * k * k) as u64,
                LayerSpec::Prelu { ch } | LayerSpec::ChannelAffine { ch } => px * ch as u64,
                _ => 0,
            })
            .sum()
    }

    /// Multiply-adds spent evaluating every functional parameter once.
    pub fn evaluation_macs(&self) -> u64 {
        self.plain_scalar_count() as u64
    }
}

fn analytic_map<T: Element>(kind: MapKind) -> ParamMap<T> {
    match kind {
        MapKind::Identity => ParamMap::Identity,
        MapKind::Reciprocal => ParamMap::Reciprocal,
        MapKind::JpegScale => ParamMap::JpegScale,
        MapKind::LearnedMlp => unreachable!("learned map has weights"),
    }
}

fn const_tensor<T: Element>(dims: &[usize], v: f64) -> Result<Tensor<T>> {
    Ok(Tensor::full(
        Shape::new(dims.to_vec())?,
        T::from_f64_lossy(v),
    ))
}

fn check_input<T: Element>(config: &NetworkConfig, dims: &[usize]) -> Result<()> {
    if dims.len() != 4 || dims[1] != config.input_channels {
        return Err(Error::Config(format!(
            "network input must be [N, {}, H, W], got {dims:?}",
            config.input_channels
        )));
    }
    Ok(())
}

fn check_shapes<T: Element>(specs: &[ParamSpec], tensors: &[&Tensor<T>]) -> Result<()> {
    if specs.len() != tensors.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter tensors, found {}",
            specs.len(),
            tensors.len()
        )));
    }
    for (s, t) in specs.iter().zip(tensors) {
        if t.dims() != s.dims.as_slice() {
            return Err(Error::Checkpoint(format!(
                "{} has shape {:?}, config requires {:?}",
                s.name,
                t.dims(),
                s.dims
            )));
        }
    }
    Ok(())
}

/// Layer primitives shared by the taped and the direct forward paths.
trait Exec {
    type V: Clone;
    fn conv(&self, x: &Self::V, k: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn prelu(&self, x: &Self::V, s: &Self::V) -> Result<Self::V>;
    fn affine(&self, x: &Self::V, s: &Self::V, h: &Self::V) -> Result<Self::V>;
    fn add(&self, x: &Self::V, y: &Self::V) -> Result<Self::V>;
}

struct DirectT<T>(std::marker::PhantomData<T>);

impl<T: Element> Exec for DirectT<T> {
    type V = Tensor<T>;
    fn conv(&self, x: &Tensor<T>, k: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(kernels::conv2d(x, k, b)?)
    }
    fn prelu(&self, x: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(kernels::prelu(x, s)?)
    }
    fn affine(&self, x: &Tensor<T>, s: &Tensor<T>, h: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(kernels::channel_affine(x, s, h)?)
    }
    fn add(&self, x: &Tensor<T>, y: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.zip_map(y, "add", |a, b| a + b)?)
    }
}

struct TapedT<'t, T>(std::marker::PhantomData<&'t T>);

impl<'t, T: Element> Exec for TapedT<'t, T> {
    type V = Var<'t, T>;
    fn conv(&self, x: &Var<'t, T>, k: &Var<'t, T>, b: &Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.conv2d(*k, *b)?)
    }
    fn prelu(&self, x: &Var<'t, T>, s: &Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.prelu(*s)?)
    }
    fn affine(&self, x: &Var<'t, T>, s: &Var<'t, T>, h: &Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.channel_affine(*s, *h)?)
    }
    fn add(&self, x: &Var<'t, T>, y: &Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(x.add(*y)?)
    }
}

fn run_layers<E: Exec>(e: &E, config: &NetworkConfig, input: &E::V, w: &[E::V]) -> Result<E::V> {
    let mut cur = input.clone();
    let mut saved: Vec<E::V> = Vec::new();
    let mut p = 0;
    for layer in &config.layers {
        cur = match layer {
            LayerSpec::Conv { .. } => {
                p += 2;
                e.conv(&cur, &w[p - 2], &w[p - 1])?
            }
            LayerSpec::Prelu { .. } => {
                p += 1;
                e.prelu(&cur, &w[p - 1])?
            }
            LayerSpec::ChannelAffine { .. } => {
                p += 2;
                e.affine(&cur, &w[p - 2], &w[p - 1])?
            }
            LayerSpec::ResidualBlockBegin => {
                saved.push(cur.clone());
                cur
            }
            LayerSpec::ResidualBlockEnd => {
                let skip = saved
                    .pop()
                    .ok_or_else(|| Error::Config("unbalanced residual block".into()))?;
                e.add(&cur, &skip)?
            }
            LayerSpec::GlobalSkipAdd => e.add(&cur, input)?,
        };
    }
    if config.residual_output {
        cur = e.add(&cur, input)?;
    }
    Ok(cur)
}

/// Network whose every trainable tensor is a functional parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct FuncNetwork<T> {
    config: NetworkConfig,
    params: Vec<FuncParam<T>>,
    map: ParamMap<T>,
}

/// Tape handles for a [`FuncNetwork`].
#[derive(Clone, Debug)]
pub struct FuncVars<'t, T: Element> {
    pub endpoints: Vec<(Var<'t, T>, Var<'t, T>)>,
    pub mlp: Option<MlpVars<'t, T>>,
}

impl<T: Element> FuncNetwork<T> {
    /// He-initialized network. Parameter `i` draws from its own stream, so the
    /// first endpoint coincides with [`PlainNetwork::build`] for the same seed.
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = Vec::new();
        for (i, spec) in config.param_specs().iter().enumerate() {
            let p = match spec.init {
                ParamInit::He { fan_in } => {
                    let mut rng = stream(seed, Purpose::Init, i as u64, 0);
                    FuncParam::init_he(Shape::new(spec.dims.clone())?, fan_in, &mut rng)?
                }
                ParamInit::Const(v) => {
                    FuncParam::constant(Shape::new(spec.dims.clone())?, T::from_f64_lossy(v))
                }
            };
            params.push(p);
        }
        let map = ParamMap::build(
            config.map,
            config.domain,
            &mut stream(seed, Purpose::Init, MLP_INIT_STREAM, 0),
        );
        Ok(FuncNetwork {
            config,
            params,
            map,
        })
    }

    /// Reassembles a network from tensors in [`FuncNetwork::named_tensors`] order.
    pub fn from_tensors(config: NetworkConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let specs = config.param_specs();
        let n_mlp = if config.map == MapKind::LearnedMlp {
            4
        } else {
            0
        };
        if tensors.len() != 2 * specs.len() + n_mlp {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                2 * specs.len() + n_mlp,
                tensors.len()
            )));
        }
        let mut it = tensors.into_iter();
        let mut params = Vec::with_capacity(specs.len());
        for spec in &specs {
            let (a, b) = (it.next().expect("counted"), it.next().expect("counted"));
            check_shapes(std::slice::from_ref(spec), &[&a])?;
            params.push(FuncParam::new(a, b)?);
        }
        let map = if n_mlp == 4 {
            let mut next = || it.next().expect("counted");
            let m = MlpH::from_parts(config.domain, next(), next(), next(), next());
            m.check_shapes()?;
            ParamMap::LearnedMlp(m)
        } else {
            analytic_map(config.map)
        };
        Ok(FuncNetwork {
            config,
            params,
            map,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn params(&self) -> &[FuncParam<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [FuncParam<T>] {
        &mut self.params
    }

    pub fn map(&self) -> &ParamMap<T> {
        &self.map
    }

    pub fn map_mut(&mut self) -> &mut ParamMap<T> {
        &mut self.map
    }

    /// Endpoints (`theta_a` then `theta_b` per parameter), then learned-map weights.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (spec, p) in self.config.param_specs().into_iter().zip(&self.params) {
            out.push((format!("{}.theta_a", spec.name), p.theta_a()));
            out.push((format!("{}.theta_b", spec.name), p.theta_b()));
        }
        if let Some(m) = self.map.mlp() {
            for (name, t) in MlpH::<T>::TENSOR_NAMES.iter().zip(m.tensors()) {
                out.push((name.to_string(), t));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for p in &mut self.params {
            let (a, b) = p.endpoints_mut();
            out.push(a);
            out.push(b);
        }
        if let Some(m) = self.map.mlp_mut() {
            out.extend(m.tensors_mut());
        }
        out
    }

    /// Scalars held by the functional parameters: twice the plain count.
    pub fn stored_scalar_count(&self) -> usize {
        self.params.iter().map(|p| 2 * p.numel()).sum()
    }

    /// Scalars held by the learned map, zero for fixed maps.
    pub fn map_scalar_count(&self) -> usize {
        self.map
            .mlp()
            .map_or(0, |m| m.tensors().iter().map(|t| t.numel()).sum())
    }

    pub fn normalize(&self, x: f64) -> Result<f64> {
        normalize(&self.config.domain, &self.map, x)
    }

    pub fn materialize(&self, x: f64) -> Result<PlainNetwork<T>> {
        let t = self.normalize(x)?;
        Ok(PlainNetwork {
            config: self.config.clone(),
            weights: self.params.iter().map(|p| p.evaluate(t)).collect(),
        })
    }

    pub fn register<'t>(&self, tape: &'t Tape<T>) -> Result<FuncVars<'t, T>> {
        let mut endpoints = Vec::with_capacity(self.params.len());
        for p in &self.params {
            endpoints.push((
                tape.param(p.theta_a().clone())?,
                tape.param(p.theta_b().clone())?,
            ));
        }
        let mlp = match self.map.mlp() {
            Some(m) => Some(m.register(tape)?),
            None => None,
        };
        Ok(FuncVars { endpoints, mlp })
    }

    /// Differentiable forward pass at parameter `x`.
    pub fn forward_tape<'t>(
        &self,
        vars: &FuncVars<'t, T>,
        x: f64,
        input: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        check_input::<T>(&self.config, input.shape().dims())?;
        let level = normalize_on_tape(&self.config.domain, &self.map, vars.mlp.as_ref(), x)?;
        let weights = vars
            .endpoints
            .iter()
            .map(|&(a, b)| FuncParam::evaluate_on_tape(a, b, &level))
            .collect::<Result<Vec<_>>>()?;
        run_layers(
            &TapedT::<T>(std::marker::PhantomData),
            &self.config,
            &input,
            &weights,
        )
    }

    /// Forward pass through the training path, returning only the value.
    pub fn forward(&self, x: f64, input: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let vars = self.register(&tape)?;
        let out = self.forward_tape(&vars, x, tape.constant(input.clone())?)?;
        Ok((*out.value()).clone())
    }
}

/// Conventional fixed-weight network.
#[derive(Clone, Debug, PartialEq)]
pub struct PlainNetwork<T> {
    config: NetworkConfig,
    weights: Vec<Tensor<T>>,
}

impl<T: Element> PlainNetwork<T> {
    /// Trainable plain baseline; kernels match the first endpoints of
    /// [`FuncNetwork::build`] with the same seed.
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut weights = Vec::new();
        for (i, spec) in config.param_specs().iter().enumerate() {
            let w = match spec.init {
                ParamInit::He { fan_in } => {
                    let mut rng = stream(seed, Purpose::Init, i as u64, 0);
                    FuncParam::<T>::init_he(Shape::new(spec.dims.clone())?, fan_in, &mut rng)?
                        .theta_a()
                        .clone()
                }
                ParamInit::Const(v) => const_tensor(&spec.dims, v)?,
            };
            weights.push(w);
        }
        Ok(PlainNetwork { config, weights })
    }

    pub fn from_tensors(config: NetworkConfig, weights: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        check_shapes(&config.param_specs(), &weights.iter().collect::<Vec<_>>())?;
        Ok(PlainNetwork { config, weights })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn weights(&self) -> &[Tensor<T>] {
        &self.weights
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        self.config
            .param_specs()
            .into_iter()
            .zip(&self.weights)
            .map(|(s, w)| (s.name, w))
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.weights.iter_mut().collect()
    }

    pub fn scalar_count(&self) -> usize {
        self.weights.iter().map(Tensor::numel).sum()
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        check_input::<T>(&self.config, input.dims())?;
        let out = run_layers(
            &DirectT(std::marker::PhantomData),
            &self.config,
            input,
            &self.weights,
        )?;
        out.ensure_finite("forward")?;
        Ok(out)
    }

    pub fn register<'t>(&self, tape: &'t Tape<T>) -> Result<Vec<Var<'t, T>>> {
        self.weights
            .iter()
            .map(|w| Ok(tape.param(w.clone())?))
            .collect()
    }

    pub fn forward_tape<'t>(&self, vars: &[Var<'t, T>], input: Var<'t, T>) -> Result<Var<'t, T>> {
        check_input::<T>(&self.config, input.shape().dims())?;
        run_layers(
            &TapedT::<T>(std::marker::PhantomData),
            &self.config,
            &input,
            vars,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Funcnet,
    Plain,
}

/// Either kind of trainable network.
#[derive(Clone, Debug, PartialEq)]
pub enum Model<T> {
    Func(FuncNetwork<T>),
    Plain(PlainNetwork<T>),
}

#[derive(Clone, Debug)]
pub enum ModelVars<'t, T: Element> {
    Func(FuncVars<'t, T>),
    Plain(Vec<Var<'t, T>>),
}

impl<'t, T: Element> ModelVars<'t, T> {
    /// All trainable handles in [`Model::named_tensors`] order.
    pub fn all(&self) -> Vec<Var<'t, T>> {
        match self {
            ModelVars::Func(v) => {
                let mut out: Vec<_> = v.endpoints.iter().flat_map(|&(a, b)| [a, b]).collect();
                if let Some(m) = &v.mlp {
                    out.extend([m.w1, m.b1, m.w2, m.b2]);
                }
                out
            }
            ModelVars::Plain(v) => v.clone(),
        }
    }
}

impl<T: Element> Model<T> {
    pub fn build(kind: ModelKind, config: NetworkConfig, seed: u64) -> Result<Self> {
        Ok(match kind {
            ModelKind::Funcnet => Model::Func(FuncNetwork::build(config, seed)?),
            ModelKind::Plain => Model::Plain(PlainNetwork::build(config, seed)?),
        })
    }

    pub fn from_tensors(
        kind: ModelKind,
        config: NetworkConfig,
        tensors: Vec<Tensor<T>>,
    ) -> Result<Self> {
        Ok(match kind {
            ModelKind::Funcnet => Model::Func(FuncNetwork::from_tensors(config, tensors)?),
            ModelKind::Plain => Model::Plain(PlainNetwork::from_tensors(config, tensors)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Func(_) => ModelKind::Funcnet,
            Model::Plain(_) => ModelKind::Plain,
        }
    }

    pub fn config(&self) -> &NetworkConfig {
        match self {
            Model::Func(n) => n.config(),
            Model::Plain(n) => n.config(),
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        match self {
            Model::Func(n) => n.named_tensors(),
            Model::Plain(n) => n.named_tensors(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Model::Func(n) => n.tensors_mut(),
            Model::Plain(n) => n.tensors_mut(),
        }
    }

    pub fn register<'t>(&self, tape: &'t Tape<T>) -> Result<ModelVars<'t, T>> {
        Ok(match self {
            Model::Func(n) => ModelVars::Func(n.register(tape)?),
            Model::Plain(n) => ModelVars::Plain(n.register(tape)?),
        })
    }

    /// Differentiable forward pass; plain networks ignore `x` beyond the
    /// domain check.
    pub fn forward_tape<'t>(
        &self,
        vars: &ModelVars<'t, T>,
        x: f64,
        input: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        match (self, vars) {
            (Model::Func(n), ModelVars::Func(v)) => n.forward_tape(v, x, input),
            (Model::Plain(n), ModelVars::Plain(v)) => {
                n.config().domain.check(x)?;
                n.forward_tape(v, input)
            }
            _ => Err(Error::Config(
                "model and tape handles are of different kinds".into(),
            )),
        }
    }

    /// Fixed-weight network for inference at `x`.
    pub fn materialize(&self, x: f64) -> Result<PlainNetwork<T>> {
        match self {
            Model::Func(n) => n.materialize(x),
            Model::Plain(n) => {
                n.config().domain.check(x)?;
                Ok(n.clone())
            }
        }
    }
}
