//! Functional parameters: weight tensors that are linear functions of a task
//! parameter.
//!
//! A [`FuncParam`] stores two endpoint tensors `theta_a` and `theta_b`. For a
//! task parameter `x` the weight is
//!
//! ```text
//! t = (H(x) - H(x_a)) / (H(x_b) - H(x_a))
//! w = t * (theta_b - theta_a) + theta_a
//! ```
//!
//! where `[x_a, x_b]` is the [`ParamDomain`] and `H` is a [`ParamMap`].

use std::fmt;

use funcnet_tensor::{kernels, CustomOp, Element, Shape, Tape, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Support `[lo, hi]` of the task parameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamDomain {
    pub lo: f64,
    pub hi: f64,
}

impl ParamDomain {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidDomain { lo, hi });
        }
        Ok(ParamDomain { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn check(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                x,
                lo: self.lo,
                hi: self.hi,
            })
        }
    }

    pub fn validate(&self) -> Result<()> {
        ParamDomain::new(self.lo, self.hi).map(|_| ())
    }
}

impl fmt::Display for ParamDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Identity,
    Reciprocal,
    JpegScale,
    LearnedMlp,
}

impl MapKind {
    pub fn name(self) -> &'static str {
        match self {
            MapKind::Identity => "identity",
            MapKind::Reciprocal => "reciprocal",
            MapKind::JpegScale => "jpeg_scale",
            MapKind::LearnedMlp => "learned_mlp",
        }
    }
}

/// Hidden width of the learned map.
pub const MLP_HIDDEN: usize = 16;

/// Learned map `H(x) = w2 . tanh(w1 * u + b1) + b2` with
/// `u = (x - x_a) / (x_b - x_a)`; its weights are ordinary trainable tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpH<T> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
    input_offset: f64,
    input_scale: f64,
}

/// Tape handles for the learned map's weights.
#[derive(Clone, Copy, Debug)]
pub struct MlpVars<'t, T: Element> {
    pub w1: Var<'t, T>,
    pub b1: Var<'t, T>,
    pub w2: Var<'t, T>,
    pub b2: Var<'t, T>,
}

impl<T: Element> MlpH<T> {
    pub const TENSOR_NAMES: [&'static str; 4] = ["mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2"];

    /// Random initialization that starts strictly increasing: every hidden
    /// unit's output weight shares the sign of its input weight.
    pub fn new(domain: ParamDomain, rng: &mut impl Rng) -> Self {
        let mut w1 = Vec::with_capacity(MLP_HIDDEN);
        let mut w2 = Vec::with_capacity(MLP_HIDDEN);
        for _ in 0..MLP_HIDDEN {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample::<f64, _>(StandardNormal).abs() / (MLP_HIDDEN as f64).sqrt();
            w1.push(T::from_f64_lossy(a));
            w2.push(T::from_f64_lossy(if a < 0.0 { -b } else { b }));
        }
        Self::from_parts(
            domain,
            Tensor::from_vec(&[1, MLP_HIDDEN], w1).expect("static shape"),
            Tensor::zeros(Shape::new(vec![1, MLP_HIDDEN]).expect("static shape")),
            Tensor::from_vec(&[MLP_HIDDEN, 1], w2).expect("static shape"),
            Tensor::zeros(Shape::new(vec![1, 1]).expect("static shape")),
        )
    }

    pub fn zeros(domain: ParamDomain) -> Self {
        let z = |d: &[usize]| Tensor::zeros(Shape::new(d.to_vec()).expect("static shape"));
        Self::from_parts(
            domain,
            z(&[1, MLP_HIDDEN]),
            z(&[1, MLP_HIDDEN]),
            z(&[MLP_HIDDEN, 1]),
            z(&[1, 1]),
        )
    }

    pub fn from_parts(
        domain: ParamDomain,
        w1: Tensor<T>,
        b1: Tensor<T>,
        w2: Tensor<T>,
        b2: Tensor<T>,
    ) -> Self {
        MlpH {
            w1,
            b1,
            w2,
            b2,
            input_offset: domain.lo,
            input_scale: 1.0 / (domain.hi - domain.lo),
        }
    }

    pub fn check_shapes(&self) -> Result<()> {
        let expected: [&[usize]; 4] = [
            &[1, MLP_HIDDEN],
            &[1, MLP_HIDDEN],
            &[MLP_HIDDEN, 1],
            &[1, 1],
        ];
        for (t, e) in self.tensors().iter().zip(expected) {
            if t.dims() != e {
                return Err(Error::Config(format!(
                    "learned map tensor has shape {:?}, expected {e:?}",
                    t.dims()
                )));
            }
        }
        Ok(())
    }

    pub fn tensors(&self) -> [&Tensor<T>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn input(&self, x: f64) -> Tensor<T> {
        let u = T::from_f64_lossy((x - self.input_offset) * self.input_scale);
        Tensor::from_vec(&[1, 1], vec![u]).expect("static shape")
    }

    /// Direct evaluation; performs the same arithmetic as [`MlpH::forward_tape`].
    pub fn eval(&self, x: f64) -> Result<T> {
        let h = kernels::matmul(&self.input(x), &self.w1)?;
        let h = h.zip_map(&self.b1, "mlp", |a, b| a + b)?.map(|v| v.tanh());
        let y = kernels::matmul(&h, &self.w2)?;
        let y = y.zip_map(&self.b2, "mlp", |a, b| a + b)?;
        y.ensure_finite("mlp")?;
        Ok(y.item()?)
    }

    pub fn register<'t>(&self, tape: &'t Tape<T>) -> Result<MlpVars<'t, T>> {
        Ok(MlpVars {
            w1: tape.param(self.w1.clone())?,
            b1: tape.param(self.b1.clone())?,
            w2: tape.param(self.w2.clone())?,
            b2: tape.param(self.b2.clone())?,
        })
    }

    pub fn forward_tape<'t>(&self, vars: &MlpVars<'t, T>, x: f64) -> Result<Var<'t, T>> {
        let tape = vars.w1.tape();
        let u = tape.constant(self.input(x))?;
        let h = u.matmul(vars.w1)?.add(vars.b1)?.tanh()?;
        Ok(h.matmul(vars.w2)?.add(vars.b2)?)
    }
}

/// Problem-related reparameterization `H(x)`.
#[derive(Clone, Debug, PartialEq)]
pub enum ParamMap<T> {
    Identity,
    Reciprocal,
    JpegScale,
    LearnedMlp(MlpH<T>),
}

impl<T: Element> ParamMap<T> {
    /// Builds the map for `kind`; the learned map draws its weights from `rng`.
    pub fn build(kind: MapKind, domain: ParamDomain, rng: &mut impl Rng) -> Self {
        match kind {
            MapKind::Identity => ParamMap::Identity,
            MapKind::Reciprocal => ParamMap::Reciprocal,
            MapKind::JpegScale => ParamMap::JpegScale,
            MapKind::LearnedMlp => ParamMap::LearnedMlp(MlpH::new(domain, rng)),
        }
    }

    pub fn kind(&self) -> MapKind {
        match self {
            ParamMap::Identity => MapKind::Identity,
            ParamMap::Reciprocal => MapKind::Reciprocal,
            ParamMap::JpegScale => MapKind::JpegScale,
            ParamMap::LearnedMlp(_) => MapKind::LearnedMlp,
        }
    }

    pub fn mlp(&self) -> Option<&MlpH<T>> {
        match self {
            ParamMap::LearnedMlp(m) => Some(m),
            _ => None,
        }
    }

    pub fn mlp_mut(&mut self) -> Option<&mut MlpH<T>> {
        match self {
            ParamMap::LearnedMlp(m) => Some(m),
            _ => None,
        }
    }
}

/// JPEG quality factor to quantization-table scale.
pub fn jpeg_scale(quality: f64) -> Result<f64> {
    if quality <= 0.0 || !quality.is_finite() {
        return Err(Error::MapUndefined { x: quality });
    }
    Ok(if quality <= 50.0 {
        5000.0 / quality
    } else {
        200.0 - 2.0 * quality
    })
}

/// Evaluates `H(x)`.
pub fn h_eval<T: Element>(map: &ParamMap<T>, x: f64) -> Result<f64> {
    match map {
        ParamMap::Identity => Ok(x),
        ParamMap::Reciprocal => {
            if x == 0.0 || !x.is_finite() {
                Err(Error::MapUndefined { x })
            } else {
                Ok(1.0 / x)
            }
        }
        ParamMap::JpegScale => jpeg_scale(x),
        ParamMap::LearnedMlp(m) => Ok(m.eval(x)?.as_f64()),
    }
}

/// Normalized parameter `t = (H(x) - H(x_a)) / (H(x_b) - H(x_a))`.
pub fn normalize<T: Element>(domain: &ParamDomain, map: &ParamMap<T>, x: f64) -> Result<f64> {
    domain.check(x)?;
    if let ParamMap::LearnedMlp(m) = map {
        // Same element-precision arithmetic as `normalize_on_tape`.
        let (hx, ha, hb) = (m.eval(x)?, m.eval(domain.lo)?, m.eval(domain.hi)?);
        let den = hb - ha;
        if den == T::zero() {
            return Err(Error::DegenerateMap(ha.as_f64()));
        }
        return Ok(((hx - ha) / den).as_f64());
    }
    let (ha, hb) = (h_eval(map, domain.lo)?, h_eval(map, domain.hi)?);
    if ha == hb {
        return Err(Error::DegenerateMap(ha));
    }
    Ok((h_eval(map, x)? - ha) / (hb - ha))
}

/// Normalized parameter for one forward pass on a tape.
#[derive(Clone, Copy, Debug)]
pub enum Level<'t, T: Element> {
    /// Fixed maps: `t` is a constant computed once in f64.
    Fixed(f64),
    /// Learned map: `t` is differentiable with respect to the map weights.
    Learned { t: f64, var: Var<'t, T> },
}

impl<T: Element> Level<'_, T> {
    pub fn t(&self) -> f64 {
        match self {
            Level::Fixed(t) | Level::Learned { t, .. } => *t,
        }
    }
}

pub fn normalize_on_tape<'t, T: Element>(
    domain: &ParamDomain,
    map: &ParamMap<T>,
    mlp_vars: Option<&MlpVars<'t, T>>,
    x: f64,
) -> Result<Level<'t, T>> {
    match (map, mlp_vars) {
        (ParamMap::LearnedMlp(m), Some(vars)) => {
            domain.check(x)?;
            let hx = m.forward_tape(vars, x)?;
            let ha = m.forward_tape(vars, domain.lo)?;
            let hb = m.forward_tape(vars, domain.hi)?;
            let den = hb.sub(ha)?;
            let den_value = den.value().item()?;
            if den_value == T::zero() {
                return Err(Error::DegenerateMap(ha.value().item()?.as_f64()));
            }
            let var = hx.sub(ha)?.div(den)?;
            Ok(Level::Learned {
                t: var.value().item()?.as_f64(),
                var,
            })
        }
        (ParamMap::LearnedMlp(_), None) => Err(Error::Config(
            "learned map weights are not registered on the tape".into(),
        )),
        _ => Ok(Level::Fixed(normalize(domain, map, x)?)),
    }
}

/// One functional weight tensor defined by its endpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct FuncParam<T> {
    theta_a: Tensor<T>,
    theta_b: Tensor<T>,
}

impl<T: Element> FuncParam<T> {
    pub fn new(theta_a: Tensor<T>, theta_b: Tensor<T>) -> Result<Self> {
        theta_a.expect_same_shape(&theta_b, "FuncParam")?;
        Ok(FuncParam { theta_a, theta_b })
    }

    /// Both endpoints set to `value`.
    pub fn constant(shape: Shape, value: T) -> Self {
        let t = Tensor::full(shape, value);
        FuncParam {
            theta_a: t.clone(),
            theta_b: t,
        }
    }

    /// He (fan-in) initialization with endpoints drawn independently.
    pub fn init_he(shape: Shape, fan_in: usize, rng: &mut impl Rng) -> Result<Self> {
        let theta_a = he_tensor(shape.clone(), fan_in, rng)?;
        let theta_b = he_tensor(shape, fan_in, rng)?;
        Ok(FuncParam { theta_a, theta_b })
    }

    pub fn shape(&self) -> &Shape {
        self.theta_a.shape()
    }

    pub fn numel(&self) -> usize {
        self.theta_a.numel()
    }

    pub fn theta_a(&self) -> &Tensor<T> {
        &self.theta_a
    }

    pub fn theta_b(&self) -> &Tensor<T> {
        &self.theta_b
    }

    pub fn endpoints_mut(&mut self) -> (&mut Tensor<T>, &mut Tensor<T>) {
        (&mut self.theta_a, &mut self.theta_b)
    }

    /// `t * (theta_b - theta_a) + theta_a`.
    pub fn evaluate(&self, t: f64) -> Tensor<T> {
        let data = lerp(self.theta_a.data(), self.theta_b.data(), t);
        Tensor::new(self.shape().clone(), data).expect("endpoint shapes agree")
    }

    /// Records the evaluation on a tape; gradients reach the endpoints
    /// through [`route_gradients`].
    pub fn evaluate_on_tape<'t>(
        theta_a: Var<'t, T>,
        theta_b: Var<'t, T>,
        level: &Level<'t, T>,
    ) -> Result<Var<'t, T>> {
        let tape = theta_a.tape();
        let t = level.t();
        let a = theta_a.value();
        let b = theta_b.value();
        a.expect_same_shape(&b, "FuncParam")?;
        let value = Tensor::new(a.shape().clone(), lerp(a.data(), b.data(), t))?;
        let op = Box::new(LerpOp { t });
        let var = match level {
            Level::Fixed(_) => tape.custom(&[theta_a, theta_b], value, op)?,
            Level::Learned { var, .. } => tape.custom(&[theta_a, theta_b, *var], value, op)?,
        };
        Ok(var)
    }
}

fn he_tensor<T: Element>(shape: Shape, fan_in: usize, rng: &mut impl Rng) -> Result<Tensor<T>> {
    if fan_in == 0 {
        return Err(Error::Config("He initialization needs fan_in >= 1".into()));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let data = (0..shape.numel())
        .map(|_| T::from_f64_lossy(std * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Ok(Tensor::new(shape, data)?)
}

/// Elementwise interpolation. Endpoints are returned bitwise for `t` in
/// `{0, 1}` and results are kept inside `[min, max]` of the endpoints for
/// `t` in `[0, 1]`.
fn lerp<T: Element>(a: &[T], b: &[T], t: f64) -> Vec<T> {
    if t == 0.0 {
        return a.to_vec();
    }
    if t == 1.0 {
        return b.to_vec();
    }
    let inside = (0.0..=1.0).contains(&t);
    a.iter()
        .zip(b)
        .map(|(&a, &b)| {
            let (af, bf) = (a.as_f64(), b.as_f64());
            let w = T::from_f64_lossy(t * (bf - af) + af);
            if inside {
                w.max(a.min(b)).min(a.max(b))
            } else {
                w
            }
        })
        .collect()
}

/// Splits the gradient of an evaluated weight between its endpoints:
/// `grad_a = (1 - t) * grad_w`, `grad_b = t * grad_w`.
///
/// `grad_b` is rounded onto the grid of `grad_w`'s last place, which makes
/// `grad_a + grad_b == grad_w` hold exactly in floating point for `t` in
/// `[0, 1]`.
pub fn route_gradients<T: Element>(grad_w: &Tensor<T>, t: f64) -> (Tensor<T>, Tensor<T>) {
    let mut grad_a = Vec::with_capacity(grad_w.numel());
    let mut grad_b = Vec::with_capacity(grad_w.numel());
    for &g in grad_w.data() {
        let scaled = T::from_f64_lossy(t * g.as_f64());
        let gb = (scaled + g) - g;
        grad_b.push(gb);
        grad_a.push(g - gb);
    }
    let shape = grad_w.shape().clone();
    (
        Tensor::new(shape.clone(), grad_a).expect("same length"),
        Tensor::new(shape, grad_b).expect("same length"),
    )
}

struct LerpOp {
    t: f64,
}

impl<T: Element> CustomOp<T> for LerpOp {
    fn name(&self) -> &'static str {
        "func_param"
    }

    fn backward(
        &self,
        grad_out: &Tensor<T>,
        inputs: &[&Tensor<T>],
        needs_grad: &[bool],
    ) -> funcnet_tensor::Result<Vec<Option<Tensor<T>>>> {
        let (ga, gb) = route_gradients(grad_out, self.t);
        let mut out = vec![Some(ga), Some(gb)];
        if inputs.len() == 3 {
            let gt = if needs_grad[2] {
                // dw/dt = theta_b - theta_a
                let s = grad_out
                    .data()
                    .iter()
                    .zip(inputs[0].data().iter().zip(inputs[1].data()))
                    .fold(T::zero(), |acc, (&g, (&a, &b))| acc + g * (b - a));
                Some(Tensor::full(inputs[2].shape().clone(), s))
            } else {
                None
            };
            out.push(gt);
        }
        Ok(out)
    }
}
