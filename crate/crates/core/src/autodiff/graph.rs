use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, ConvGeom, SampleGeom};
use crate::math;
use crate::params::{ParamId, ParamStore};
use crate::{Error, Result, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding that keeps the spatial size (stride 1).
    Same,
    Valid,
}

enum Op {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    BatchNormTrain {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    BatchNormEval {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Relu {
        input: Var,
    },
    Tanh {
        input: Var,
    },
    Softmax {
        input: Var,
    },
    L2NormalizeRows {
        input: Var,
        norms: Vec<f64>,
    },
    Reshape {
        input: Var,
    },
    Gram {
        input: Var,
    },
    AffineGrid {
        theta: Var,
    },
    BilinearSample {
        input: Var,
        grid: Var,
        geom: SampleGeom,
    },
    PairLoss {
        sim: Var,
        coef: Vec<f64>,
        /// Per element: bit 0 set when the `ln g` term is unfloored, bit 1
        /// for the `ln(1 − g)` term.
        open: Vec<u8>,
    },
    Sum {
        input: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::MaxPool2 { .. } => "maxpool2d",
            Op::Dense { .. } => "dense",
            Op::BatchNormTrain { .. } => "batch_norm(train)",
            Op::BatchNormEval { .. } => "batch_norm(eval)",
            Op::Relu { .. } => "relu",
            Op::Tanh { .. } => "tanh",
            Op::Softmax { .. } => "softmax",
            Op::L2NormalizeRows { .. } => "l2_normalize_rows",
            Op::Reshape { .. } => "reshape",
            Op::Gram { .. } => "gram",
            Op::AffineGrid { .. } => "affine_grid",
            Op::BilinearSample { .. } => "bilinear_sample",
            Op::PairLoss { .. } => "pair_loss",
            Op::Sum { .. } => "sum",
            Op::Mul { .. } => "mul",
        }
    }
}

struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
    param: Option<ParamId>,
    grad: Option<Tensor>,
}

/// Batch statistics produced by a train-mode batch norm, for the caller to
/// fold into its running averages.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Operation tape for one forward/backward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    no_grad: bool,
}

fn dim_err(op: &'static str, axis: &'static str, expected: usize, found: usize) -> Error {
    Error::Dimension {
        op,
        axis,
        expected,
        found,
    }
}

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(dim_err(op, "rank", rank, t.rank()));
    }
    Ok(())
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        slot => *slot = Some(g),
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// A graph that records no gradient information; used for evaluation.
    pub fn no_grad() -> Self {
        Graph {
            nodes: Vec::new(),
            no_grad: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
            requires_grad: requires_grad && !self.no_grad,
            param: None,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input (no gradient).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is tracked.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf bound to a stored parameter; gradients flow back to it.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        self.nodes.push(Node {
            value: p.shared_value(),
            op: Op::Leaf,
            requires_grad: p.trainable() && !self.no_grad,
            param: Some(id),
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf after [`Graph::backward`].
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// `(parameter, gradient)` pairs for every parameter leaf that received one.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.nodes
            .iter()
            .filter_map(|n| Some((n.param?, n.grad.as_ref()?)))
    }

    /// Cross-correlation, stride 1. `input` is `[N,H,W,Cin]`, `kernel` is
    /// `[kh,kw,Cin,Cout]`, `bias` is `[Cout]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, padding: Padding) -> Result<Var> {
        const OP: &str = "conv2d";
        let (x, k, b) = (self.value(input), self.value(kernel), self.value(bias));
        expect_rank(OP, x, 4)?;
        expect_rank(OP, k, 4)?;
        let (n, h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (kh, kw, kcin, cout) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
        if kh == 0 || kw == 0 {
            return Err(dim_err(OP, "kernel height/width", 1, 0));
        }
        if kcin != cin {
            return Err(dim_err(OP, "input channels", kcin, cin));
        }
        if b.shape() != [cout] {
            return Err(dim_err(OP, "bias length", cout, b.len()));
        }
        let (pad_top, pad_left, oh, ow) = match padding {
            Padding::Same => ((kh - 1) / 2, (kw - 1) / 2, h, w),
            Padding::Valid => {
                if kh > h {
                    return Err(dim_err(OP, "height", kh, h));
                }
                if kw > w {
                    return Err(dim_err(OP, "width", kw, w));
                }
                (0, 0, h - kh + 1, w - kw + 1)
            }
        };
        let geom = ConvGeom {
            n,
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            pad_top,
            pad_left,
            oh,
            ow,
        };
        let out = kernels::conv_forward(x.data(), k.data(), b.data(), &geom);
        let rg = self.rg(&[input, kernel, bias]);
        let value = Tensor::new(&[n, oh, ow, cout], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            rg,
        ))
    }

    /// 2×2 max pooling with stride 2 over `[N,H,W,C]`.
    pub fn maxpool2d(&mut self, input: Var) -> Result<Var> {
        const OP: &str = "maxpool2d";
        let x = self.value(input);
        expect_rank(OP, x, 4)?;
        let s = x.shape();
        let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
        if h < 2 {
            return Err(dim_err(OP, "height", 2, h));
        }
        if w < 2 {
            return Err(dim_err(OP, "width", 2, w));
        }
        let (out, argmax) = kernels::maxpool2(x.data(), n, h, w, c);
        let value = Tensor::new(&[n, h / 2, w / 2, c], out)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::MaxPool2 { input, argmax }, rg))
    }

    /// `input · weight + bias` with `input` `[N,D_in]`, `weight` `[D_in,D_out]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        const OP: &str = "dense";
        let (x, wt, b) = (self.value(input), self.value(weight), self.value(bias));
        expect_rank(OP, x, 2)?;
        expect_rank(OP, wt, 2)?;
        let (n, din) = (x.shape()[0], x.shape()[1]);
        let dout = wt.shape()[1];
        if wt.shape()[0] != din {
            return Err(dim_err(OP, "input features", wt.shape()[0], din));
        }
        if b.shape() != [dout] {
            return Err(dim_err(OP, "bias length", dout, b.len()));
        }
        let mut out = vec![0.0; n * dout];
        kernels::gemm(
            n,
            din,
            dout,
            x.data(),
            false,
            wt.data(),
            false,
            0.0,
            &mut out,
        );
        kernels::add_row_bias(&mut out, b.data());
        let value = Tensor::new(&[n, dout], out)?;
        let rg = self.rg(&[input, weight, bias]);
        Ok(self.push(
            value,
            Op::Dense {
                input,
                weight,
                bias,
            },
            rg,
        ))
    }

    fn bn_check(&self, input: Var, gamma: Var, beta: Var) -> Result<usize> {
        const OP: &str = "batch_norm";
        let x = self.value(input);
        let c = *x.shape().last().ok_or_else(|| dim_err(OP, "rank", 1, 0))?;
        if self.value(gamma).shape() != [c] {
            return Err(dim_err(OP, "gamma length", c, self.value(gamma).len()));
        }
        if self.value(beta).shape() != [c] {
            return Err(dim_err(OP, "beta length", c, self.value(beta).len()));
        }
        Ok(c)
    }

    /// Batch norm over the last axis using batch statistics. The leading
    /// axis is the batch and must hold at least two samples.
    pub fn batch_norm_train(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let c = self.bn_check(input, gamma, beta)?;
        let x = self.value(input);
        let batch = x.shape()[0];
        if x.rank() < 2 || batch < 2 {
            return Err(Error::BatchTooSmall(batch));
        }
        let bn = kernels::bn_train_forward(x.data(), c, eps);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = bn.xhat.clone();
        for row in out.chunks_exact_mut(c) {
            for ((o, gv), bv) in row.iter_mut().zip(g).zip(b) {
                *o = *o * gv + bv;
            }
        }
        let value = Tensor::new(x.shape(), out)?;
        let rg = self.rg(&[input, gamma, beta]);
        let stats = BatchStats {
            mean: bn.mean,
            var: bn.var,
        };
        let (xhat, inv_std) = if rg {
            (bn.xhat, bn.inv_std)
        } else {
            (Vec::new(), Vec::new())
        };
        let v = self.push(
            value,
            Op::BatchNormTrain {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        );
        Ok((v, stats))
    }

    /// Batch norm over the last axis with fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let c = self.bn_check(input, gamma, beta)?;
        if mean.len() != c || var.len() != c {
            return Err(dim_err(
                "batch_norm",
                "running statistics length",
                c,
                mean.len(),
            ));
        }
        let x = self.value(input);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / math::sqrt(v + eps)).collect();
        let mut xhat = x.data().to_vec();
        for row in xhat.chunks_exact_mut(c) {
            for ((xv, m), s) in row.iter_mut().zip(mean).zip(&inv_std) {
                *xv = (*xv - m) * s;
            }
        }
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut out = xhat.clone();
        for row in out.chunks_exact_mut(c) {
            for ((o, gv), bv) in row.iter_mut().zip(g).zip(b) {
                *o = *o * gv + bv;
            }
        }
        let value = Tensor::new(x.shape(), out)?;
        let rg = self.rg(&[input, gamma, beta]);
        let xhat = if rg { xhat } else { Vec::new() };
        Ok(self.push(
            value,
            Op::BatchNormEval {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    fn unary(&mut self, input: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let x = self.value(input);
        let out = x.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(x.shape(), out)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, op, rg))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.unary(input, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu { input })
    }

    pub fn tanh(&mut self, input: Var) -> Result<Var> {
        self.unary(input, math::tanh, Op::Tanh { input })
    }

    /// Row-wise softmax over the last axis of a `[N,k]` tensor.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        const OP: &str = "softmax";
        let x = self.value(input);
        expect_rank(OP, x, 2)?;
        let k = x.shape()[1];
        if k < 2 {
            return Err(dim_err(OP, "classes", 2, k));
        }
        let mut out = x.data().to_vec();
        for row in out.chunks_exact_mut(k) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = math::exp(*v - max);
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        let value = Tensor::new(x.shape(), out)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::Softmax { input }, rg))
    }

    /// Scales every row of a `[N,k]` tensor to unit Euclidean norm.
    pub fn l2_normalize_rows(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        expect_rank("l2_normalize_rows", x, 2)?;
        let k = x.shape()[1];
        let mut out = x.data().to_vec();
        let mut norms = Vec::with_capacity(x.shape()[0]);
        for row in out.chunks_exact_mut(k) {
            let norm = math::sqrt(row.iter().map(|v| v * v).sum::<f64>()).max(1e-12);
            row.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        let value = Tensor::new(x.shape(), out)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::L2NormalizeRows { input, norms }, rg))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = Tensor::new(shape, self.value(input).data().to_vec())?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::Reshape { input }, rg))
    }

    /// `[N,...]` → `[N, prod(...)]`.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let s = self.shape(input);
        let n = s[0];
        let rest = s[1..].iter().product();
        self.reshape(input, &[n, rest])
    }

    /// Gram matrix `F·Fᵀ` of a `[N,k]` tensor.
    pub fn gram(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        expect_rank("gram", x, 2)?;
        let (n, k) = (x.shape()[0], x.shape()[1]);
        let mut out = vec![0.0; n * n];
        kernels::gemm(n, k, n, x.data(), false, x.data(), true, 0.0, &mut out);
        let value = Tensor::new(&[n, n], out)?;
        let rg = self.rg(&[input]);
        Ok(self.push(value, Op::Gram { input }, rg))
    }

    /// Sampling grid `[N,out_h,out_w,2]` from affine parameters `[N,6]`
    /// laid out as `[a, b, tx, c, d, ty]`.
    pub fn affine_grid(&mut self, theta: Var, out_h: usize, out_w: usize) -> Result<Var> {
        const OP: &str = "affine_grid";
        let t = self.value(theta);
        expect_rank(OP, t, 2)?;
        if t.shape()[1] != 6 {
            return Err(dim_err(OP, "parameters", 6, t.shape()[1]));
        }
        if out_h == 0 || out_w == 0 {
            return Err(dim_err(OP, "output size", 1, 0));
        }
        let n = t.shape()[0];
        let grid = kernels::affine_grid(t.data(), n, out_h, out_w);
        let value = Tensor::new(&[n, out_h, out_w, 2], grid)?;
        let rg = self.rg(&[theta]);
        Ok(self.push(value, Op::AffineGrid { theta }, rg))
    }

    /// Bilinear sampling of `[N,H,W,C]` at normalized grid points
    /// `[N,Ho,Wo,2]`; points outside the image read zeros.
    pub fn bilinear_sample(&mut self, input: Var, grid: Var) -> Result<Var> {
        const OP: &str = "bilinear_sample";
        let (x, gr) = (self.value(input), self.value(grid));
        expect_rank(OP, x, 4)?;
        expect_rank(OP, gr, 4)?;
        if gr.shape()[0] != x.shape()[0] {
            return Err(dim_err(OP, "batch", x.shape()[0], gr.shape()[0]));
        }
        if gr.shape()[3] != 2 {
            return Err(dim_err(OP, "grid coordinates", 2, gr.shape()[3]));
        }
        let geom = SampleGeom {
            n: x.shape()[0],
            h: x.shape()[1],
            w: x.shape()[2],
            c: x.shape()[3],
            oh: gr.shape()[1],
            ow: gr.shape()[2],
        };
        let out = kernels::bilinear_sample(x.data(), gr.data(), &geom);
        let value = Tensor::new(&[geom.n, geom.oh, geom.ow, geom.c], out)?;
        let rg = self.rg(&[input, grid]);
        Ok(self.push(value, Op::BilinearSample { input, grid, geom }, rg))
    }

    /// Mean binary cross-entropy over selected pairs of a similarity matrix.
    ///
    /// `targets` holds r_ij ∈ {0,1} and `weights` holds v_ij ∈ {0,1}, both
    /// `n×n` row-major. Similarities are clamped into `[eps, 1-eps]` before
    /// the logarithms; clamped entries receive zero gradient.
    pub fn pair_loss(
        &mut self,
        sim: Var,
        targets: &[f64],
        weights: &[f64],
        eps: f64,
    ) -> Result<Var> {
        const OP: &str = "pair_loss";
        let s = self.value(sim);
        if targets.len() != s.len() {
            return Err(dim_err(OP, "targets", s.len(), targets.len()));
        }
        if weights.len() != s.len() {
            return Err(dim_err(OP, "weights", s.len(), weights.len()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::NoSelectedPairs);
        }
        let mut loss = 0.0;
        let mut coef = vec![0.0; s.len()];
        let mut open = vec![0u8; s.len()];
        for (i, &sv) in s.data().iter().enumerate() {
            let (r, v) = (targets[i], weights[i]);
            if v == 0.0 {
                continue;
            }
            // Each log argument is floored at `eps`; a floored term
            // contributes no gradient.
            let mut d = 0.0;
            if r != 0.0 {
                loss -= v * r * math::ln(sv.max(eps));
                if sv > eps {
                    d -= r / sv;
                    open[i] |= 1;
                }
            }
            if r != 1.0 {
                loss -= v * (1.0 - r) * math::ln((1.0 - sv).max(eps));
                if 1.0 - sv > eps {
                    d += (1.0 - r) / (1.0 - sv);
                    open[i] |= 2;
                }
            }
            coef[i] = v / total * d;
        }
        let rg = self.rg(&[sim]);
        Ok(self.push(
            Tensor::scalar(loss / total),
            Op::PairLoss { sim, coef, open },
            rg,
        ))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let total = self.value(input).data().iter().sum();
        let rg = self.rg(&[input]);
        Ok(self.push(Tensor::scalar(total), Op::Sum { input }, rg))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::Shape {
                op: "mul",
                msg: alloc::format!("{:?} vs {:?}", x.shape(), y.shape()),
            });
        }
        let out = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor::new(x.shape(), out)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul { a, b }, rg))
    }

    /// Fingerprint of every piecewise branch taken in the forward pass
    /// (relu signs, pooling winners, sampler cells, loss clamps). Two
    /// forward passes with equal fingerprints lie on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(PRIME);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu { input } => {
                    for &v in self.value(*input).data() {
                        mix((v > 0.0) as u64);
                    }
                }
                Op::MaxPool2 { argmax, .. } => argmax.iter().for_each(|&i| mix(i as u64)),
                Op::BilinearSample { input, grid, .. } => {
                    let x = self.value(*input);
                    let (h_in, w_in) = (x.shape()[1], x.shape()[2]);
                    for pt in self.value(*grid).data().chunks_exact(2) {
                        mix(math::floor(kernels::to_pixel(pt[0], w_in)) as i64 as u64);
                        mix(math::floor(kernels::to_pixel(pt[1], h_in)) as i64 as u64);
                    }
                }
                Op::PairLoss { open, .. } => open.iter().for_each(|&o| mix(u64::from(o))),
                _ => {}
            }
        }
        h
    }

    /// Reverse pass from a scalar `loss`. Gradients are added to the
    /// leaves' accumulators, so repeated calls sum.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let l = self.value(loss);
        let Some(lv) = l.item().filter(|_| l.rank() <= 1) else {
            return Err(Error::NonScalarLoss {
                shape: l.shape().to_vec(),
            });
        };
        if !lv.is_finite() {
            return Err(Error::NonFiniteLoss(lv));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    node: i,
                    op: self.nodes[i].op.name(),
                });
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(Tensor::new(node.value.shape(), g)?),
                }
                continue;
            }
            self.backward_node(i, g, &mut grads);
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, g: Vec<f64>, grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let needs = |v: Var| nodes[v.0].requires_grad;
        let val = |v: Var| nodes[v.0].value.data();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => {
                if needs(*kernel) {
                    accumulate(
                        grads,
                        *kernel,
                        kernels::conv_backward_kernel(val(*input), &g, geom),
                    );
                }
                if needs(*bias) {
                    accumulate(grads, *bias, kernels::column_sums(&g, geom.cout));
                }
                if needs(*input) {
                    accumulate(
                        grads,
                        *input,
                        kernels::conv_backward_input(&g, val(*kernel), geom),
                    );
                }
            }
            Op::MaxPool2 { input, argmax } => {
                let mut dx = vec![0.0; nodes[input.0].value.len()];
                for (&src, gv) in argmax.iter().zip(&g) {
                    dx[src] += gv;
                }
                accumulate(grads, *input, dx);
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let x = &nodes[input.0].value;
                let (n, din) = (x.shape()[0], x.shape()[1]);
                let dout = nodes[weight.0].value.shape()[1];
                if needs(*weight) {
                    let mut dw = vec![0.0; din * dout];
                    kernels::gemm(din, n, dout, x.data(), true, &g, false, 0.0, &mut dw);
                    accumulate(grads, *weight, dw);
                }
                if needs(*bias) {
                    accumulate(grads, *bias, kernels::column_sums(&g, dout));
                }
                if needs(*input) {
                    let mut dx = vec![0.0; n * din];
                    kernels::gemm(n, dout, din, &g, false, val(*weight), true, 0.0, &mut dx);
                    accumulate(grads, *input, dx);
                }
            }
            Op::BatchNormTrain {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            }
            | Op::BatchNormEval {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = inv_std.len();
                if needs(*gamma) {
                    let mut dg = vec![0.0; c];
                    for (gr, xr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                        for ((d, gv), xv) in dg.iter_mut().zip(gr).zip(xr) {
                            *d += gv * xv;
                        }
                    }
                    accumulate(grads, *gamma, dg);
                }
                if needs(*beta) {
                    accumulate(grads, *beta, kernels::column_sums(&g, c));
                }
                if needs(*input) {
                    let gam = val(*gamma);
                    let mut dxhat = g.clone();
                    for row in dxhat.chunks_exact_mut(c) {
                        row.iter_mut().zip(gam).for_each(|(d, gv)| *d *= gv);
                    }
                    let dx = if matches!(nodes[i].op, Op::BatchNormTrain { .. }) {
                        kernels::bn_train_backward(&dxhat, xhat, inv_std)
                    } else {
                        for row in dxhat.chunks_exact_mut(c) {
                            row.iter_mut().zip(inv_std).for_each(|(d, s)| *d *= s);
                        }
                        dxhat
                    };
                    accumulate(grads, *input, dx);
                }
            }
            Op::Relu { input } => {
                let dx = val(*input)
                    .iter()
                    .zip(&g)
                    .map(|(&x, &gv)| if x > 0.0 { gv } else { 0.0 })
                    .collect();
                accumulate(grads, *input, dx);
            }
            Op::Tanh { input } => {
                let dx = nodes[i]
                    .value
                    .data()
                    .iter()
                    .zip(&g)
                    .map(|(y, gv)| gv * (1.0 - y * y))
                    .collect();
                accumulate(grads, *input, dx);
            }
            Op::Softmax { input } => {
                let y = &nodes[i].value;
                let k = y.shape()[1];
                let mut dx = vec![0.0; y.len()];
                for ((dr, yr), gr) in dx
                    .chunks_exact_mut(k)
                    .zip(y.data().chunks_exact(k))
                    .zip(g.chunks_exact(k))
                {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..k {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(grads, *input, dx);
            }
            Op::L2NormalizeRows { input, norms } => {
                let y = &nodes[i].value;
                let k = y.shape()[1];
                let mut dx = vec![0.0; y.len()];
                for (((dr, yr), gr), norm) in dx
                    .chunks_exact_mut(k)
                    .zip(y.data().chunks_exact(k))
                    .zip(g.chunks_exact(k))
                    .zip(norms)
                {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..k {
                        dr[j] = (gr[j] - yr[j] * dot) / norm;
                    }
                }
                accumulate(grads, *input, dx);
            }
            Op::Reshape { input } => accumulate(grads, *input, g),
            Op::Gram { input } => {
                let x = &nodes[input.0].value;
                let (n, k) = (x.shape()[0], x.shape()[1]);
                let mut sym = g.clone();
                for r in 0..n {
                    for c in 0..n {
                        sym[r * n + c] += g[c * n + r];
                    }
                }
                let mut dx = vec![0.0; n * k];
                kernels::gemm(n, n, k, &sym, false, x.data(), false, 0.0, &mut dx);
                accumulate(grads, *input, dx);
            }
            Op::AffineGrid { theta } => {
                let s = nodes[i].value.shape();
                let dt = kernels::affine_grid_backward(&g, s[0], s[1], s[2]);
                accumulate(grads, *theta, dt);
            }
            Op::BilinearSample { input, grid, geom } => {
                let (dx, dgrid) = kernels::bilinear_sample_backward(
                    val(*input),
                    val(*grid),
                    &g,
                    geom,
                    needs(*input),
                    needs(*grid),
                );
                if let Some(dx) = dx {
                    accumulate(grads, *input, dx);
                }
                if let Some(dg) = dgrid {
                    accumulate(grads, *grid, dg);
                }
            }
            Op::PairLoss { sim, coef, .. } => {
                let dx = coef.iter().map(|c| c * g[0]).collect();
                accumulate(grads, *sim, dx);
            }
            Op::Sum { input } => {
                let n = nodes[input.0].value.len();
                accumulate(grads, *input, vec![g[0]; n]);
            }
            Op::Mul { a, b } => {
                if needs(*a) {
                    let d = val(*b).iter().zip(&g).map(|(y, gv)| y * gv).collect();
                    accumulate(grads, *a, d);
                }
                if needs(*b) {
                    let d = val(*a).iter().zip(&g).map(|(x, gv)| x * gv).collect();
                    accumulate(grads, *b, d);
                }
            }
        }
    }
}
