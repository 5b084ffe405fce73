//! Reverse-mode automatic differentiation over dense N-d arrays.
//!
//! A [`Graph`] is an append-only tape. Every operation evaluates eagerly and
//! appends a node recording its inputs, so node ids are already a topological
//! order. [`Tensor`] is a cheap handle (the node id) into one graph.
//!
//! Backward rules are themselves expressed as graph operations. With
//! `create_graph = false` they run with recording switched off and produce
//! plain constants; with `create_graph = true` they are recorded like any other
//! op, so the returned gradient can be differentiated again. The gradient
//! penalty of the critic needs exactly that.
//!
//! Broadcasting is limited to scalar-with-tensor in the binary ops. Channel and
//! per-sample broadcasts exist as dedicated ops.

pub mod conv;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

pub use conv::ConvGeometry;

use crate::error::{arg_err, dim_err, Error, Result};
use crate::scalar::Scalar;

/// Owned dense array outside any graph (parameters, latent batches, data).
#[derive(Clone, Debug, PartialEq)]
pub struct NdArray<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> NdArray<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(dim_err(
                "NdArray::new",
                format!(
                    "shape {shape:?} holds {} values, got {}",
                    numel(shape),
                    data.len()
                ),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel(shape)],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Converts to another precision.
    pub fn cast<U: Scalar>(&self) -> NdArray<U> {
        NdArray {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.as_f64()))
                .collect(),
        }
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tensor(usize);

impl Tensor {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
enum Op<T> {
    Leaf,
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Affine {
        x: Tensor,
        scale: T,
    },
    Relu(Tensor),
    LeakyRelu {
        x: Tensor,
        slope: T,
    },
    Sigmoid(Tensor),
    Tanh(Tensor),
    Log(Tensor),
    Square(Tensor),
    Sqrt(Tensor),
    Reciprocal(Tensor),
    Clamp {
        x: Tensor,
        lo: T,
        hi: T,
    },
    Sum(Tensor),
    Mean(Tensor),
    Expand(Tensor),
    SumPerSample(Tensor),
    SampleBroadcast(Tensor),
    SumChannels(Tensor),
    ChannelBroadcast(Tensor),
    Reshape(Tensor),
    Conv {
        x: Tensor,
        w: Tensor,
        geo: ConvGeometry,
    },
    ConvAdjoint {
        g: Tensor,
        w: Tensor,
        geo: ConvGeometry,
    },
    ConvWeightGrad {
        x: Tensor,
        g: Tensor,
        geo: ConvGeometry,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

/// Append-only computation record.
///
/// A graph and its tensors belong to one worker; independent graphs can run on
/// separate threads.
#[derive(Debug, Clone)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    recording: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    // ---- leaves ----------------------------------------------------------------

    /// Creates a leaf. Leaves with `requires_grad` collect gradients in
    /// [`Graph::backward`].
    pub fn leaf(&mut self, value: Vec<T>, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        if shape.contains(&0) {
            return Err(arg_err(
                "leaf",
                format!("shape {shape:?} has a zero extent"),
            ));
        }
        if numel(shape) != value.len() {
            return Err(dim_err(
                "leaf",
                format!(
                    "shape {shape:?} holds {} values, got {}",
                    numel(shape),
                    value.len()
                ),
            ));
        }
        Ok(self.push_raw(value, shape.to_vec(), Op::Leaf, requires_grad))
    }

    pub fn variable(&mut self, value: Vec<T>, shape: &[usize]) -> Result<Tensor> {
        self.leaf(value, shape, true)
    }

    pub fn constant(&mut self, value: Vec<T>, shape: &[usize]) -> Result<Tensor> {
        self.leaf(value, shape, false)
    }

    pub fn leaf_from(&mut self, a: &NdArray<T>, requires_grad: bool) -> Result<Tensor> {
        self.leaf(a.data.clone(), &a.shape, requires_grad)
    }

    pub fn to_array(&self, t: Tensor) -> NdArray<T> {
        NdArray {
            shape: self.nodes[t.0].shape.clone(),
            data: self.nodes[t.0].value.clone(),
        }
    }

    /// Rank-0 constant.
    pub fn scalar(&mut self, v: T) -> Tensor {
        self.push_raw(vec![v], Vec::new(), Op::Leaf, false)
    }

    /// Copies the value of `t` into a fresh constant.
    pub fn detach(&mut self, t: Tensor) -> Tensor {
        let node = &self.nodes[t.0];
        let (value, shape) = (node.value.clone(), node.shape.clone());
        self.push_raw(value, shape, Op::Leaf, false)
    }

    // ---- accessors ---------------------------------------------------------------

    pub fn value(&self, t: Tensor) -> &[T] {
        &self.nodes[t.0].value
    }

    pub fn shape(&self, t: Tensor) -> &[usize] {
        &self.nodes[t.0].shape
    }

    pub fn numel(&self, t: Tensor) -> usize {
        self.nodes[t.0].value.len()
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.nodes[t.0].requires_grad
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, t: Tensor) -> Option<&[T]> {
        self.nodes[t.0].grad.as_deref()
    }

    /// Value of a single-element tensor.
    pub fn item(&self, t: Tensor) -> T {
        self.nodes[t.0].value[0]
    }

    /// Clears every accumulated leaf gradient.
    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push_raw(
        &mut self,
        value: Vec<T>,
        shape: Vec<usize>,
        op: Op<T>,
        requires_grad: bool,
    ) -> Tensor {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            grad: None,
        });
        Tensor(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Vec<T>, shape: Vec<usize>, op: Op<T>, inputs: &[Tensor]) -> Tensor {
        let requires_grad = self.recording && inputs.iter().any(|t| self.nodes[t.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.push_raw(value, shape, op, requires_grad)
    }

    // ---- elementwise -------------------------------------------------------------

    fn binary(
        &mut self,
        name: &'static str,
        a: Tensor,
        b: Tensor,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor> {
        let (na, nb) = (&self.nodes[a.0], &self.nodes[b.0]);
        let (value, shape) = if na.shape == nb.shape {
            let v = na
                .value
                .iter()
                .zip(&nb.value)
                .map(|(&x, &y)| f(x, y))
                .collect();
            (v, na.shape.clone())
        } else if nb.value.len() == 1 {
            let s = nb.value[0];
            (
                na.value.iter().map(|&x| f(x, s)).collect(),
                na.shape.clone(),
            )
        } else if na.value.len() == 1 {
            let s = na.value[0];
            (
                nb.value.iter().map(|&y| f(s, y)).collect(),
                nb.shape.clone(),
            )
        } else {
            return Err(dim_err(
                name,
                format!("shapes {:?} and {:?} differ", na.shape, nb.shape),
            ));
        };
        Ok(self.push(value, shape, op, &[a, b]))
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn unary(&mut self, x: Tensor, op: Op<T>, f: impl Fn(T) -> T) -> Tensor {
        let node = &self.nodes[x.0];
        let value = node.value.iter().map(|&v| f(v)).collect();
        let shape = node.shape.clone();
        self.push(value, shape, op, &[x])
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Tensor, scale: f64, shift: f64) -> Tensor {
        let (s, b) = (T::from_f64_lossy(scale), T::from_f64_lossy(shift));
        self.unary(x, Op::Affine { x, scale: s }, |v| s * v + b)
    }

    /// `scale * x`.
    pub fn affine_scale(&mut self, x: Tensor, scale: f64) -> Tensor {
        self.affine(x, scale, 0.0)
    }

    pub fn neg(&mut self, x: Tensor) -> Tensor {
        self.affine(x, -1.0, 0.0)
    }

    pub fn relu(&mut self, x: Tensor) -> Tensor {
        self.unary(
            x,
            Op::Relu(x),
            |v| if v > T::zero() { v } else { T::zero() },
        )
    }

    /// `max(0, x)`; the hinge of the one-sided gradient penalty.
    pub fn max_with_zero(&mut self, x: Tensor) -> Tensor {
        self.relu(x)
    }

    pub fn leaky_relu(&mut self, x: Tensor, slope: f64) -> Tensor {
        let s = T::from_f64_lossy(slope);
        self.unary(x, Op::LeakyRelu { x, slope: s }, |v| {
            if v > T::zero() {
                v
            } else {
                s * v
            }
        })
    }

    pub fn sigmoid(&mut self, x: Tensor) -> Tensor {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Tensor) -> Tensor {
        self.unary(x, Op::Tanh(x), |v| v.tanh())
    }

    /// Natural logarithm; every input must be strictly positive.
    pub fn log(&mut self, x: Tensor) -> Result<Tensor> {
        if let Some((i, &v)) = self.nodes[x.0]
            .value
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v > T::zero()))
        {
            return Err(Error::Domain {
                op: "log",
                index: i,
                value: v.as_f64(),
            });
        }
        Ok(self.unary(x, Op::Log(x), |v| v.ln()))
    }

    pub fn square(&mut self, x: Tensor) -> Tensor {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    /// Square root; inputs must be non-negative.
    pub fn sqrt(&mut self, x: Tensor) -> Result<Tensor> {
        if let Some((i, &v)) = self.nodes[x.0]
            .value
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v >= T::zero()))
        {
            return Err(Error::Domain {
                op: "sqrt",
                index: i,
                value: v.as_f64(),
            });
        }
        Ok(self.unary(x, Op::Sqrt(x), |v| v.sqrt()))
    }

    /// `1 / x`; zero inputs are a domain error.
    pub fn reciprocal(&mut self, x: Tensor) -> Result<Tensor> {
        if let Some((i, &v)) = self.nodes[x.0]
            .value
            .iter()
            .enumerate()
            .find(|(_, &v)| v == T::zero())
        {
            return Err(Error::Domain {
                op: "reciprocal",
                index: i,
                value: v.as_f64(),
            });
        }
        Ok(self.unary(x, Op::Reciprocal(x), |v| v.recip()))
    }

    fn reciprocal_or_zero(&mut self, x: Tensor) -> Tensor {
        self.unary(x, Op::Reciprocal(x), |v| {
            if v == T::zero() {
                T::zero()
            } else {
                v.recip()
            }
        })
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping is active.
    pub fn clamp(&mut self, x: Tensor, lo: f64, hi: f64) -> Tensor {
        let (lo, hi) = (T::from_f64_lossy(lo), T::from_f64_lossy(hi));
        self.unary(x, Op::Clamp { x, lo, hi }, |v| v.max(lo).min(hi))
    }

    // ---- reductions and broadcasts ----------------------------------------------

    pub fn sum(&mut self, x: Tensor) -> Result<Tensor> {
        let v = self.nodes[x.0].value.iter().copied().sum();
        Ok(self.push(vec![v], Vec::new(), Op::Sum(x), &[x]))
    }

    pub fn mean(&mut self, x: Tensor) -> Result<Tensor> {
        let node = &self.nodes[x.0];
        let n = T::from_usize(node.value.len()).unwrap();
        let v = node.value.iter().copied().sum::<T>() / n;
        Ok(self.push(vec![v], Vec::new(), Op::Mean(x), &[x]))
    }

    /// Broadcasts a single-element tensor to `shape`.
    pub fn expand(&mut self, x: Tensor, shape: &[usize]) -> Result<Tensor> {
        let node = &self.nodes[x.0];
        if node.value.len() != 1 {
            return Err(dim_err(
                "expand",
                format!("expected one element, got shape {:?}", node.shape),
            ));
        }
        let value = vec![node.value[0]; numel(shape)];
        Ok(self.push(value, shape.to_vec(), Op::Expand(x), &[x]))
    }

    /// `[N, ...] -> [N]`, summing each sample.
    pub fn sum_per_sample(&mut self, x: Tensor) -> Result<Tensor> {
        let node = &self.nodes[x.0];
        if node.shape.is_empty() {
            return Err(arg_err("sum_per_sample", "tensor has no sample axis"));
        }
        let n = node.shape[0];
        let per = node.value.len() / n;
        let value = node
            .value
            .chunks(per)
            .map(|c| c.iter().copied().sum())
            .collect();
        Ok(self.push(value, vec![n], Op::SumPerSample(x), &[x]))
    }

    /// `[N] -> shape` with `shape[0] == N`, repeating each sample's value.
    pub fn broadcast_samples(&mut self, s: Tensor, shape: &[usize]) -> Result<Tensor> {
        let node = &self.nodes[s.0];
        if node.shape.len() != 1 || shape.first() != Some(&node.shape[0]) {
            return Err(dim_err(
                "broadcast_samples",
                format!("cannot broadcast {:?} to {:?}", node.shape, shape),
            ));
        }
        let per = numel(shape) / node.shape[0];
        let value = node
            .value
            .iter()
            .flat_map(|&v| core::iter::repeat_n(v, per))
            .collect();
        Ok(self.push(value, shape.to_vec(), Op::SampleBroadcast(s), &[s]))
    }

    /// Euclidean norm of each sample of `[N, ...]`.
    pub fn l2_norm_per_sample(&mut self, x: Tensor) -> Result<Tensor> {
        let sq = self.square(x);
        let s = self.sum_per_sample(sq)?;
        self.sqrt(s)
    }

    /// `[N, C, ...] -> [C]`, summing over samples and spatial positions.
    pub fn sum_channels(&mut self, x: Tensor) -> Result<Tensor> {
        let node = &self.nodes[x.0];
        if node.shape.len() < 2 {
            return Err(dim_err(
                "sum_channels",
                format!("expected [N, C, ...], got {:?}", node.shape),
            ));
        }
        let (n, c) = (node.shape[0], node.shape[1]);
        let spatial = node.value.len() / (n * c);
        let mut out = vec![T::zero(); c];
        for (i, chunk) in node.value.chunks(spatial).enumerate() {
            out[i % c] = out[i % c] + chunk.iter().copied().sum::<T>();
        }
        Ok(self.push(out, vec![c], Op::SumChannels(x), &[x]))
    }

    /// `[C] -> [N, C, ...]`, repeating each channel value.
    pub fn broadcast_channels(&mut self, b: Tensor, shape: &[usize]) -> Result<Tensor> {
        let node = &self.nodes[b.0];
        if node.shape.len() != 1 || shape.len() < 2 || shape[1] != node.shape[0] {
            return Err(dim_err(
                "broadcast_channels",
                format!("cannot broadcast {:?} to {:?}", node.shape, shape),
            ));
        }
        let c = shape[1];
        let spatial = numel(&shape[2..]);
        let mut value = Vec::with_capacity(numel(shape));
        for _ in 0..shape[0] {
            for ch in 0..c {
                value.extend(core::iter::repeat_n(node.value[ch], spatial));
            }
        }
        Ok(self.push(value, shape.to_vec(), Op::ChannelBroadcast(b), &[b]))
    }

    /// Adds a per-channel bias `[C]` to `[N, C, ...]`.
    pub fn add_channel_bias(&mut self, x: Tensor, bias: Tensor) -> Result<Tensor> {
        let shape = self.nodes[x.0].shape.clone();
        let b = self.broadcast_channels(bias, &shape)?;
        self.add(x, b)
    }

    pub fn reshape(&mut self, x: Tensor, shape: &[usize]) -> Result<Tensor> {
        let node = &self.nodes[x.0];
        if numel(shape) != node.value.len() {
            return Err(dim_err(
                "reshape",
                format!("cannot reshape {:?} into {:?}", node.shape, shape),
            ));
        }
        let value = node.value.clone();
        Ok(self.push(value, shape.to_vec(), Op::Reshape(x), &[x]))
    }

    // ---- convolutions ------------------------------------------------------------

    /// 3D convolution of `x: [N,C,D,H,W]` with `kernel: [F,C,kd,kh,kw]`.
    pub fn conv3d(
        &mut self,
        x: Tensor,
        kernel: Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let geo = ConvGeometry::for_conv(
            &self.nodes[x.0].shape,
            &self.nodes[kernel.0].shape,
            stride,
            padding,
        )?;
        Ok(self.conv_node(x, kernel, geo))
    }

    /// Transposed 3D convolution of `x: [N,C,D,H,W]` with `kernel: [C,F,kd,kh,kw]`,
    /// the adjoint of [`Graph::conv3d`] with the same kernel, stride and padding.
    pub fn conv_transpose3d(
        &mut self,
        x: Tensor,
        kernel: Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let geo = ConvGeometry::for_transpose(
            &self.nodes[x.0].shape,
            &self.nodes[kernel.0].shape,
            stride,
            padding,
            None,
        )?;
        Ok(self.adjoint_node(x, kernel, geo))
    }

    /// Transposed convolution with an explicit output extent, for strides where
    /// several extents map onto the same input.
    pub fn conv_transpose3d_sized(
        &mut self,
        x: Tensor,
        kernel: Tensor,
        stride: usize,
        padding: usize,
        output: [usize; 3],
    ) -> Result<Tensor> {
        let geo = ConvGeometry::for_transpose(
            &self.nodes[x.0].shape,
            &self.nodes[kernel.0].shape,
            stride,
            padding,
            Some(output),
        )?;
        Ok(self.adjoint_node(x, kernel, geo))
    }

    fn conv_node(&mut self, x: Tensor, w: Tensor, geo: ConvGeometry) -> Tensor {
        let mut out = vec![T::zero(); numel(&geo.output_shape())];
        conv::forward(
            &geo,
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            &mut out,
        );
        self.push(out, geo.output_shape(), Op::Conv { x, w, geo }, &[x, w])
    }

    fn adjoint_node(&mut self, g: Tensor, w: Tensor, geo: ConvGeometry) -> Tensor {
        let mut out = vec![T::zero(); numel(&geo.input_shape())];
        conv::adjoint(
            &geo,
            &self.nodes[g.0].value,
            &self.nodes[w.0].value,
            &mut out,
        );
        self.push(
            out,
            geo.input_shape(),
            Op::ConvAdjoint { g, w, geo },
            &[g, w],
        )
    }

    fn weight_grad_node(&mut self, x: Tensor, g: Tensor, geo: ConvGeometry) -> Tensor {
        let mut out = vec![T::zero(); numel(&geo.kernel_shape())];
        conv::weight_grad(
            &geo,
            &self.nodes[x.0].value,
            &self.nodes[g.0].value,
            &mut out,
        );
        self.push(
            out,
            geo.kernel_shape(),
            Op::ConvWeightGrad { x, g, geo },
            &[x, g],
        )
    }

    // ---- differentiation ---------------------------------------------------------

    /// Populates the gradient of every `requires_grad` leaf with `d loss / d leaf`.
    ///
    /// Gradients accumulate across calls until [`Graph::zero_grads`].
    pub fn backward(&mut self, loss: Tensor) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(arg_err(
                "backward",
                format!(
                    "loss must be scalar, got shape {:?}",
                    self.nodes[loss.0].shape
                ),
            ));
        }
        let grads = self.backprop(loss, false)?;
        for (i, g) in grads.into_iter().enumerate() {
            let Some(g) = g else { continue };
            if !matches!(self.nodes[i].op, Op::Leaf) || !self.nodes[i].requires_grad {
                continue;
            }
            let gv = self.nodes[g.0].value.clone();
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&gv).for_each(|(a, &b)| *a = *a + b),
                None => node.grad = Some(gv),
            }
        }
        Ok(())
    }

    /// Returns `d output / d input` as a tensor of the input's shape.
    ///
    /// With `create_graph` the result is recorded and can itself be
    /// differentiated.
    pub fn grad_of(&mut self, output: Tensor, input: Tensor, create_graph: bool) -> Result<Tensor> {
        if self.nodes[output.0].value.len() != 1 {
            return Err(arg_err("grad_of", "output must be scalar"));
        }
        if input.0 > output.0 {
            return Err(arg_err("grad_of", "input was created after output"));
        }
        if !self.nodes[input.0].requires_grad {
            return Err(arg_err("grad_of", "input does not require grad"));
        }
        let grads = self.backprop(output, create_graph)?;
        grads[input.0]
            .ok_or_else(|| arg_err("grad_of", "input does not participate in output's graph"))
    }

    fn backprop(&mut self, root: Tensor, create_graph: bool) -> Result<Vec<Option<Tensor>>> {
        let saved = self.recording;
        self.recording = create_graph;
        let result = self.backprop_inner(root);
        self.recording = saved;
        result
    }

    fn backprop_inner(&mut self, root: Tensor) -> Result<Vec<Option<Tensor>>> {
        let n = root.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        if !self.nodes[root.0].requires_grad {
            return Ok(grads);
        }
        let shape = self.nodes[root.0].shape.clone();
        let seed = self.push_raw(vec![T::one(); numel(&shape)], shape, Op::Leaf, false);
        grads[root.0] = Some(seed);
        let mut contributions = Vec::with_capacity(2);
        for i in (0..n).rev() {
            let Some(g) = grads[i] else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            contributions.clear();
            self.input_grads(i, g, &mut contributions)?;
            for &(input, gi) in &contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                grads[input.0] = Some(match grads[input.0] {
                    None => gi,
                    Some(prev) => self.add(prev, gi)?,
                });
            }
        }
        Ok(grads)
    }

    /// Reduces a broadcast gradient back onto an operand's shape.
    fn unbroadcast(&mut self, g: Tensor, operand: Tensor) -> Result<Tensor> {
        if self.nodes[g.0].shape == self.nodes[operand.0].shape {
            return Ok(g);
        }
        let s = self.sum(g)?;
        let shape = self.nodes[operand.0].shape.clone();
        self.reshape(s, &shape)
    }

    fn mask_constant(&mut self, x: Tensor, f: impl Fn(T) -> T) -> Tensor {
        let node = &self.nodes[x.0];
        let value = node.value.iter().map(|&v| f(v)).collect();
        let shape = node.shape.clone();
        self.push_raw(value, shape, Op::Leaf, false)
    }

    fn input_grads(&mut self, i: usize, g: Tensor, out: &mut Vec<(Tensor, Tensor)>) -> Result<()> {
        let y = Tensor(i);
        match self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let ga = self.unbroadcast(g, a)?;
                let gb = self.unbroadcast(g, b)?;
                out.push((a, ga));
                out.push((b, gb));
            }
            Op::Sub(a, b) => {
                let ga = self.unbroadcast(g, a)?;
                let ng = self.neg(g);
                let gb = self.unbroadcast(ng, b)?;
                out.push((a, ga));
                out.push((b, gb));
            }
            Op::Mul(a, b) => {
                if self.nodes[a.0].requires_grad {
                    let t = self.mul(g, b)?;
                    out.push((a, self.unbroadcast(t, a)?));
                }
                if self.nodes[b.0].requires_grad {
                    let t = self.mul(g, a)?;
                    out.push((b, self.unbroadcast(t, b)?));
                }
            }
            Op::Affine { x, scale } => {
                let t = self.affine(g, scale.as_f64(), 0.0);
                out.push((x, t));
            }
            Op::Relu(x) => {
                let m = self.mask_constant(x, |v| if v > T::zero() { T::one() } else { T::zero() });
                out.push((x, self.mul(g, m)?));
            }
            Op::LeakyRelu { x, slope } => {
                let m = self.mask_constant(x, |v| if v > T::zero() { T::one() } else { slope });
                out.push((x, self.mul(g, m)?));
            }
            Op::Sigmoid(x) => {
                // y (1 - y)
                let one_minus = self.affine(y, -1.0, 1.0);
                let d = self.mul(y, one_minus)?;
                out.push((x, self.mul(g, d)?));
            }
            Op::Tanh(x) => {
                let sq = self.square(y);
                let d = self.affine(sq, -1.0, 1.0);
                out.push((x, self.mul(g, d)?));
            }
            Op::Log(x) => {
                let r = self.reciprocal(x)?;
                out.push((x, self.mul(g, r)?));
            }
            Op::Square(x) => {
                let d = self.affine(x, 2.0, 0.0);
                out.push((x, self.mul(g, d)?));
            }
            Op::Sqrt(x) => {
                // zero where the root is zero, so a vanishing norm has a zero subgradient
                let r = self.reciprocal_or_zero(y);
                let d = self.affine(r, 0.5, 0.0);
                out.push((x, self.mul(g, d)?));
            }
            Op::Reciprocal(x) => {
                let sq = self.square(y);
                let d = self.neg(sq);
                out.push((x, self.mul(g, d)?));
            }
            Op::Clamp { x, lo, hi } => {
                let m = self.mask_constant(x, |v| {
                    if v > lo && v < hi {
                        T::one()
                    } else {
                        T::zero()
                    }
                });
                out.push((x, self.mul(g, m)?));
            }
            Op::Sum(x) => {
                let shape = self.nodes[x.0].shape.clone();
                out.push((x, self.expand(g, &shape)?));
            }
            Op::Mean(x) => {
                let shape = self.nodes[x.0].shape.clone();
                let e = self.expand(g, &shape)?;
                out.push((x, self.affine(e, 1.0 / numel(&shape) as f64, 0.0)));
            }
            Op::Expand(x) => {
                let s = self.sum(g)?;
                let shape = self.nodes[x.0].shape.clone();
                out.push((x, self.reshape(s, &shape)?));
            }
            Op::SumPerSample(x) => {
                let shape = self.nodes[x.0].shape.clone();
                out.push((x, self.broadcast_samples(g, &shape)?));
            }
            Op::SampleBroadcast(x) => {
                out.push((x, self.sum_per_sample(g)?));
            }
            Op::SumChannels(x) => {
                let shape = self.nodes[x.0].shape.clone();
                out.push((x, self.broadcast_channels(g, &shape)?));
            }
            Op::ChannelBroadcast(x) => {
                out.push((x, self.sum_channels(g)?));
            }
            Op::Reshape(x) => {
                let shape = self.nodes[x.0].shape.clone();
                out.push((x, self.reshape(g, &shape)?));
            }
            Op::Conv { x, w, geo } => {
                if self.nodes[x.0].requires_grad {
                    out.push((x, self.adjoint_node(g, w, geo)));
                }
                if self.nodes[w.0].requires_grad {
                    out.push((w, self.weight_grad_node(x, g, geo)));
                }
            }
            Op::ConvAdjoint { g: src, w, geo } => {
                if self.nodes[src.0].requires_grad {
                    out.push((src, self.conv_node(g, w, geo)));
                }
                if self.nodes[w.0].requires_grad {
                    out.push((w, self.weight_grad_node(g, src, geo)));
                }
            }
            Op::ConvWeightGrad { x, g: src, geo } => {
                if self.nodes[x.0].requires_grad {
                    out.push((x, self.adjoint_node(src, g, geo)));
                }
                if self.nodes[src.0].requires_grad {
                    out.push((src, self.conv_node(x, g, geo)));
                }
            }
        }
        Ok(())
    }
}

fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}
