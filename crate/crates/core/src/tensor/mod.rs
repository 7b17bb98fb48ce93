//! Dense `f64` tensors with a small reverse-mode tape.
//!
//! A [`Tensor`] is a plain row-major value grid. Differentiation happens on a
//! [`Tape`]: values are registered as [`Var`]s, every operation on a `Var`
//! appends a node holding its output and a backward rule, and
//! [`Var::backward`] walks the nodes once in reverse order.
//!
//! ```
//! use pointdrag::tensor::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.var(Tensor::from_vec(vec![2.0, -3.0]).unwrap());
//! let loss = x.l1_norm().unwrap();
//! let grads = loss.backward().unwrap();
//! assert_eq!(loss.item(), 5.0);
//! assert_eq!(grads.get(x).unwrap().data(), &[1.0, -1.0]);
//! ```

mod gradcheck;
mod sample;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{DragError, Result};

pub use gradcheck::finite_difference_check;
pub use sample::{bilinear, crop};

/// Row-major grid of finite `f64` values.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?}[{} values]", self.shape, self.data.len())
        }
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(DragError::Shape(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        ensure_finite(&data, "tensor construction")?;
        Ok(Self { shape, data })
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![], vec![value])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    /// Builds a tensor without the finiteness scan. Callers guarantee the
    /// values come from finite arithmetic on finite inputs.
    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut off = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of range for axis {i} of size {dim}");
            off = off * dim + ix;
        }
        off
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(channels, height, width)` of a rank-3 tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(DragError::Shape(format!(
                "expected a C×H×W tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    /// The C-vector at integer position `(x, y)` of a C×H×W tensor.
    pub fn pixel(&self, x: usize, y: usize) -> Result<Vec<f64>> {
        let (c, h, w) = self.chw()?;
        if x >= w || y >= h {
            return Err(DragError::Bounds {
                x: x as f64,
                y: y as f64,
                width: w,
                height: h,
            });
        }
        let plane = h * w;
        Ok((0..c).map(|ch| self.data[ch * plane + y * w + x]).collect())
    }
}

pub(crate) fn ensure_finite(data: &[f64], what: &str) -> Result<()> {
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(DragError::Numeric(format!(
            "non-finite value {} at flat index {i} in {what}",
            data[i]
        )));
    }
    Ok(())
}

/// Backward rule of a custom node: receives the output gradient, the input
/// values and the output value; returns one optional gradient per input.
pub type BackwardFn = Box<dyn Fn(&Tensor, &[Rc<Tensor>], &Tensor) -> Vec<Option<Tensor>>>;

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Neg(usize),
    Exp(usize),
    Abs(usize),
    Square(usize),
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    ChannelDot(usize, usize),
    Custom {
        inputs: Vec<usize>,
        backward: BackwardFn,
    },
}

struct Node {
    value: Rc<Tensor>,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of operations. Nodes are appended in evaluation order, so
/// inputs always precede the operations that consume them.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable leaf.
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(value, true, Op::Leaf)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, false, Op::Leaf)
    }

    /// Registers an operation implemented outside this module.
    ///
    /// `value` is the already-computed output; `backward` maps the output
    /// gradient to input gradients. The node requires grad iff some input does.
    pub fn custom<'t>(
        &'t self,
        inputs: &[Var<'t>],
        value: Tensor,
        backward: BackwardFn,
    ) -> Result<Var<'t>> {
        ensure_finite(&value.data, "custom op output")?;
        let requires_grad = inputs.iter().any(|v| v.requires_grad());
        let ids = inputs.iter().map(|v| v.id).collect();
        Ok(self.push(
            value,
            requires_grad,
            Op::Custom {
                inputs: ids,
                backward,
            },
        ))
    }

    fn push(&self, value: Tensor, requires_grad: bool, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            op,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn backward_from(&self, root: usize) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        if !nodes[root].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[root] = Some(Tensor::filled(nodes[root].value.shape(), 1.0));

        for id in (0..=root).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[id].take() else {
                continue;
            };
            let rg = |i: usize| nodes[i].requires_grad;
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(gout);
                    continue;
                }
                Op::Add(a, b) => {
                    if rg(*a) {
                        accumulate(&mut grads, *a, reduce_to(&gout, &nodes[*a].value));
                    }
                    if rg(*b) {
                        accumulate(&mut grads, *b, reduce_to(&gout, &nodes[*b].value));
                    }
                }
                Op::Sub(a, b) => {
                    if rg(*a) {
                        accumulate(&mut grads, *a, reduce_to(&gout, &nodes[*a].value));
                    }
                    if rg(*b) {
                        let mut g = reduce_to(&gout, &nodes[*b].value);
                        g.data.iter_mut().for_each(|v| *v = -*v);
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    if rg(*a) {
                        let g = broadcast_binary(&gout, vb, |g, y| g * y);
                        accumulate(&mut grads, *a, reduce_to(&g, va));
                    }
                    if rg(*b) {
                        let g = broadcast_binary(&gout, va, |g, x| g * x);
                        accumulate(&mut grads, *b, reduce_to(&g, vb));
                    }
                }
                Op::Scale(a, k) => {
                    accumulate(&mut grads, *a, map(&gout, |g| g * k));
                }
                Op::Offset(a) => accumulate(&mut grads, *a, gout),
                Op::Neg(a) => accumulate(&mut grads, *a, map(&gout, |g| -g)),
                Op::Exp(a) => {
                    let g = zip(&gout, &node.value, |g, y| g * y);
                    accumulate(&mut grads, *a, g);
                }
                Op::Abs(a) => {
                    let g = zip(&gout, &nodes[*a].value, |g, x| g * sign(x));
                    accumulate(&mut grads, *a, g);
                }
                Op::Square(a) => {
                    let g = zip(&gout, &nodes[*a].value, |g, x| 2.0 * g * x);
                    accumulate(&mut grads, *a, g);
                }
                Op::Sum(a) => {
                    let g = Tensor::filled(nodes[*a].value.shape(), gout.item());
                    accumulate(&mut grads, *a, g);
                }
                Op::Mean(a) => {
                    let n = nodes[*a].value.numel().max(1) as f64;
                    let g = Tensor::filled(nodes[*a].value.shape(), gout.item() / n);
                    accumulate(&mut grads, *a, g);
                }
                Op::Reshape(a) => {
                    let g = Tensor::from_parts_unchecked(
                        nodes[*a].value.shape().to_vec(),
                        gout.data,
                    );
                    accumulate(&mut grads, *a, g);
                }
                Op::ChannelDot(field, z) => {
                    let (vf, vz) = (&nodes[*field].value, &nodes[*z].value);
                    let c = vz.numel();
                    let plane = vf.numel() / c;
                    if rg(*field) {
                        let mut g = vec![0.0; vf.numel()];
                        for ch in 0..c {
                            let zc = vz.data[ch];
                            for (dst, &go) in g[ch * plane..(ch + 1) * plane].iter_mut().zip(&gout.data) {
                                *dst = go * zc;
                            }
                        }
                        accumulate(
                            &mut grads,
                            *field,
                            Tensor::from_parts_unchecked(vf.shape().to_vec(), g),
                        );
                    }
                    if rg(*z) {
                        let g: Vec<f64> = (0..c)
                            .map(|ch| {
                                vf.data[ch * plane..(ch + 1) * plane]
                                    .iter()
                                    .zip(&gout.data)
                                    .map(|(f, go)| f * go)
                                    .sum()
                            })
                            .collect();
                        accumulate(&mut grads, *z, Tensor::from_parts_unchecked(vec![c], g));
                    }
                }
                Op::Custom { inputs, backward } => {
                    let values: Vec<Rc<Tensor>> =
                        inputs.iter().map(|&i| Rc::clone(&nodes[i].value)).collect();
                    let input_grads = backward(&gout, &values, &node.value);
                    for (&i, g) in inputs.iter().zip(input_grads) {
                        if let (true, Some(g)) = (rg(i), g) {
                            if g.shape() != nodes[i].value.shape() {
                                return Err(DragError::Shape(format!(
                                    "custom backward produced gradient of shape {:?} for input of shape {:?}",
                                    g.shape(),
                                    nodes[i].value.shape()
                                )));
                            }
                            accumulate(&mut grads, i, g);
                        }
                    }
                }
            }
        }

        for g in grads.iter().flatten() {
            ensure_finite(&g.data, "gradient")?;
        }
        Ok(Gradients { grads })
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts_unchecked(t.shape.clone(), t.data.iter().map(|&v| f(v)).collect())
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_parts_unchecked(
        a.shape.clone(),
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    )
}

/// Elementwise combination where either side may be a single-element tensor.
fn broadcast_binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.numel() == b.numel() {
        let shape = if a.ndim() >= b.ndim() { &a.shape } else { &b.shape };
        Tensor::from_parts_unchecked(
            shape.clone(),
            a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
        )
    } else if b.numel() == 1 {
        let y = b.data[0];
        map(a, |x| f(x, y))
    } else {
        let x = a.data[0];
        map(b, |y| f(x, y))
    }
}

/// Sums a gradient down to the shape of a (possibly scalar-broadcast) input.
fn reduce_to(g: &Tensor, input: &Tensor) -> Tensor {
    if g.numel() == input.numel() {
        Tensor::from_parts_unchecked(input.shape.clone(), g.data.clone())
    } else {
        Tensor::from_parts_unchecked(input.shape.clone(), vec![g.data.iter().sum()])
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
    match &mut grads[id] {
        Some(acc) => acc.data.iter_mut().zip(&g.data).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g),
    }
}

fn broadcast_compatible(a: &Tensor, b: &Tensor) -> bool {
    a.shape == b.shape || a.numel() == 1 || b.numel() == 1
}

/// Gradients of one backward pass, indexed by the `Var`s of the tape.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a var, `None` if it does not require grad or was unreachable.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradient of a var, zeros when nothing flowed into it.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value().shape()))
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.value())
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    fn unary(&self, value: Vec<f64>, what: &str, op: Op) -> Result<Var<'t>> {
        ensure_finite(&value, what)?;
        let shape = self.value().shape().to_vec();
        Ok(self.tape.push(
            Tensor::from_parts_unchecked(shape, value),
            self.requires_grad(),
            op,
        ))
    }

    fn binary(
        &self,
        other: &Var<'t>,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        if !broadcast_compatible(&a, &b) {
            return Err(DragError::Shape(format!(
                "{what}: shapes {:?} and {:?} are not broadcast-compatible",
                a.shape(),
                b.shape()
            )));
        }
        let out = broadcast_binary(&a, &b, f);
        ensure_finite(&out.data, what)?;
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(out, rg, op))
    }

    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |x, y| x + y, Op::Add(self.id, other.id))
    }

    pub fn sub(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |x, y| x - y, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |x, y| x * y, Op::Mul(self.id, other.id))
    }

    pub fn scale(&self, k: f64) -> Result<Var<'t>> {
        let v = self.value().data.iter().map(|x| x * k).collect();
        self.unary(v, "scale", Op::Scale(self.id, k))
    }

    pub fn add_scalar(&self, k: f64) -> Result<Var<'t>> {
        let v = self.value().data.iter().map(|x| x + k).collect();
        self.unary(v, "add_scalar", Op::Offset(self.id))
    }

    pub fn neg(&self) -> Result<Var<'t>> {
        let v = self.value().data.iter().map(|x| -x).collect();
        self.unary(v, "neg", Op::Neg(self.id))
    }

    pub fn exp(&self) -> Result<Var<'t>> {
        let v = self.value().data.iter().map(|x| x.exp()).collect();
        self.unary(v, "exp", Op::Exp(self.id))
    }

    pub fn abs(&self) -> Result<Var<'t>> {
        let v = self.value().data.iter().map(|x| x.abs()).collect();
        self.unary(v, "abs", Op::Abs(self.id))
    }

    pub fn square(&self) -> Result<Var<'t>> {
        let v = self.value().data.iter().map(|x| x * x).collect();
        self.unary(v, "square", Op::Square(self.id))
    }

    pub fn sum(&self) -> Result<Var<'t>> {
        let s: f64 = self.value().data.iter().sum();
        ensure_finite(&[s], "sum")?;
        Ok(self.tape.push(
            Tensor::from_parts_unchecked(vec![], vec![s]),
            self.requires_grad(),
            Op::Sum(self.id),
        ))
    }

    pub fn mean(&self) -> Result<Var<'t>> {
        let value = self.value();
        if value.numel() == 0 {
            return Err(DragError::Shape("mean of an empty tensor".into()));
        }
        let m = value.data.iter().sum::<f64>() / value.numel() as f64;
        ensure_finite(&[m], "mean")?;
        Ok(self.tape.push(
            Tensor::from_parts_unchecked(vec![], vec![m]),
            self.requires_grad(),
            Op::Mean(self.id),
        ))
    }

    /// `Σ|x|`; the subgradient at exactly zero is zero.
    pub fn l1_norm(&self) -> Result<Var<'t>> {
        self.abs()?.sum()
    }

    /// Same value, cut from the gradient graph.
    pub fn detach(&self) -> Var<'t> {
        self.tape.constant((*self.value()).clone())
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Var<'t>> {
        let t = self.value().reshape(shape)?;
        Ok(self.tape.push(t, self.requires_grad(), Op::Reshape(self.id)))
    }

    /// 1×1 convolution: for a `[C, ...]` tensor and a `[C]` filter, the inner
    /// product over channels at every remaining position.
    pub fn channel_dot(&self, z: &Var<'t>) -> Result<Var<'t>> {
        let (f, zv) = (self.value(), z.value());
        if zv.ndim() != 1 || f.ndim() < 1 || f.shape()[0] != zv.numel() {
            return Err(DragError::Shape(format!(
                "channel_dot: field {:?} vs filter {:?}",
                f.shape(),
                zv.shape()
            )));
        }
        let c = zv.numel();
        let plane = f.numel().checked_div(c).unwrap_or(0);
        let mut out = vec![0.0; plane];
        for ch in 0..c {
            let zc = zv.data[ch];
            for (o, v) in out.iter_mut().zip(&f.data[ch * plane..(ch + 1) * plane]) {
                *o += zc * v;
            }
        }
        ensure_finite(&out, "channel_dot")?;
        let rg = self.requires_grad() || z.requires_grad();
        Ok(self.tape.push(
            Tensor::from_parts_unchecked(f.shape()[1..].to_vec(), out),
            rg,
            Op::ChannelDot(self.id, z.id),
        ))
    }

    /// Reverse pass from this scalar node.
    pub fn backward(&self) -> Result<Gradients> {
        if self.value().numel() != 1 {
            return Err(DragError::Shape(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape()
            )));
        }
        self.tape.backward_from(self.id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn l1_norm_value_and_sign_gradient() {
        let tape = Tape::new();
        let x = tape.var(t(&[1.0, -2.0, 3.0]));
        assert_eq!(x.l1_norm().unwrap().item(), 6.0);

        let tape = Tape::new();
        let x = tape.var(t(&[2.0, -3.0]));
        let g = x.l1_norm().unwrap().backward().unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, -1.0]);
    }

    #[test]
    fn abs_subgradient_at_zero_is_zero() {
        let tape = Tape::new();
        let x = tape.var(t(&[0.0, 0.0]));
        let g = x.l1_norm().unwrap().backward().unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn exp_of_zero_distance_is_one() {
        let tape = Tape::new();
        let x = tape.var(t(&[0.0, 0.0]));
        let y = x.l1_norm().unwrap().neg().unwrap().exp().unwrap();
        assert_eq!(y.item(), 1.0);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let tape = Tape::new();
        let a = tape.var(t(&[1.0, 2.0]));
        let b = tape.var(t(&[1.0, 2.0, 3.0]));
        assert!(matches!(a.add(&b), Err(DragError::Shape(_))));
    }

    #[test]
    fn scalar_broadcast_reduces_gradient() {
        let tape = Tape::new();
        let a = tape.var(t(&[1.0, 2.0, 3.0]));
        let k = tape.var(Tensor::scalar(2.0).unwrap());
        let y = a.mul(&k).unwrap().sum().unwrap();
        assert_eq!(y.item(), 12.0);
        let g = y.backward().unwrap();
        assert_eq!(g.get(k).unwrap().data(), &[6.0]);
        assert_eq!(g.get(a).unwrap().data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let tape = Tape::new();
        let x = tape.var(t(&[1.5, -0.5]));
        let d = x.detach();
        let y = d.mul(&x).unwrap().sum().unwrap();
        let g = y.backward().unwrap();
        // only the non-detached operand contributes: dy/dx = detach(x)
        assert_eq!(g.get(x).unwrap().data(), &[1.5, -0.5]);
        assert!(g.get(d).is_none());
    }

    #[test]
    fn overflow_surfaces_as_numeric_error() {
        let tape = Tape::new();
        let x = tape.var(t(&[1000.0]));
        assert!(matches!(x.exp(), Err(DragError::Numeric(_))));
        assert!(Tensor::from_vec(vec![f64::NAN]).is_err());
    }

    #[test]
    fn channel_dot_is_a_one_by_one_convolution() {
        let tape = Tape::new();
        // 2 channels, 3 positions
        let f = tape.var(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let z = tape.var(t(&[1.0, -1.0]));
        let s = f.channel_dot(&z).unwrap();
        assert_eq!(s.value().data(), &[-3.0, -3.0, -3.0]);
        let g = s.sum().unwrap().backward().unwrap();
        assert_eq!(g.get(z).unwrap().data(), &[6.0, 15.0]);
        assert_eq!(g.get(f).unwrap().data(), &[1.0, 1.0, 1.0, -1.0, -1.0, -1.0]);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        let tape = Tape::new();
        let x = tape.var(t(&[3.0]));
        let y = x.mul(&x).unwrap().add(&x).unwrap().sum().unwrap();
        let g = y.backward().unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[7.0]);
    }
}
