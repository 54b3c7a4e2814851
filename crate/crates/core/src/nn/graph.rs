//! Tape-based reverse-mode autodiff over NCHW tensors.

use crate::error::{Error, Result};
use crate::nn::kernels::{self, BnCache, Dims};
use crate::nn::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<F> {
    Leaf,
    Conv { x: Var, w: Var, b: Var, k: usize },
    TConv { x: Var, w: Var, b: Var },
    BnTrain { x: Var, gamma: Var, beta: Var, cache: BnCache<F> },
    BnEval { x: Var, gamma: Var, beta: Var, xhat: Vec<F>, inv_std: Vec<F> },
    Relu(Var),
    Sigmoid(Var),
    MaxPool { x: Var, arg: Vec<usize> },
    Concat(Var, Var),
    Slice { x: Var, start: usize },
    Affine { x: Var, scale: F },
    Mse { pred: Var, target: Vec<F> },
    Bce { pred: Var, target: Vec<F> },
    AddScaled { a: Var, b: Var, wb: F },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

pub struct Graph<F: Scalar> {
    nodes: Vec<Node<F>>,
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<F>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn dims(t: &Tensor<impl Scalar>) -> Result<Dims> {
    let (n, c, h, w) = t.dims4()?;
    Ok(Dims::new(n, c, h, w))
}

fn add_into<F: Scalar>(slot: &mut Option<Vec<F>>, g: Vec<F>) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(&g) {
                *a += *b;
            }
        }
        None => *slot = Some(g),
    }
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Same-padded stride-1 convolution; `w` is `(o, c, k, k)`, `b` is `(o)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let d = dims(self.value(x))?;
        let ws = self.value(w).shape().to_vec();
        let [o, c, k, k2] = ws[..] else {
            return Err(Error::Shape(format!("conv weight must be 4-D, got {ws:?}")));
        };
        if c != d.c || k != k2 || k % 2 == 0 || self.value(b).numel() != o {
            return Err(Error::Shape(format!(
                "conv weight {ws:?} / bias {:?} incompatible with input {:?}",
                self.value(b).shape(),
                self.value(x).shape()
            )));
        }
        let y = kernels::conv2d_forward(
            self.value(x).data(),
            d,
            self.value(w).data(),
            self.value(b).data(),
            o,
            k,
        );
        let t = Tensor::from_vec(&[d.n, o, d.h, d.w], y)?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(t, Op::Conv { x, w, b, k }, rg))
    }

    /// 2×2 stride-2 transposed convolution; `w` is `(o, c, 2, 2)`.
    pub fn tconv2(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let d = dims(self.value(x))?;
        let ws = self.value(w).shape().to_vec();
        let [o, c, 2, 2] = ws[..] else {
            return Err(Error::Shape(format!("tconv weight must be (o, c, 2, 2), got {ws:?}")));
        };
        if c != d.c || self.value(b).numel() != o {
            return Err(Error::Shape(format!(
                "tconv weight {ws:?} incompatible with input {:?}",
                self.value(x).shape()
            )));
        }
        let y = kernels::tconv2_forward(self.value(x).data(), d, self.value(w).data(), self.value(b).data(), o);
        let t = Tensor::from_vec(&[d.n, o, 2 * d.h, 2 * d.w], y)?;
        let rg = self.rg(&[x, w, b]);
        Ok(self.push(t, Op::TConv { x, w, b }, rg))
    }

    /// Training-mode batch norm. Also returns the batch mean and biased
    /// variance so the caller can update running statistics.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var) -> Result<(Var, Vec<F>, Vec<F>)> {
        let d = dims(self.value(x))?;
        self.check_channel_vec(gamma, d.c)?;
        self.check_channel_vec(beta, d.c)?;
        let (y, cache) = kernels::batchnorm_train(
            self.value(x).data(),
            d,
            self.value(gamma).data(),
            self.value(beta).data(),
        );
        let (mean, var) = (cache.mean.clone(), cache.var.clone());
        let t = Tensor::from_vec(self.value(x).shape(), y)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok((self.push(t, Op::BnTrain { x, gamma, beta, cache }, rg), mean, var))
    }

    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[F],
        var: &[F],
    ) -> Result<Var> {
        let d = dims(self.value(x))?;
        self.check_channel_vec(gamma, d.c)?;
        self.check_channel_vec(beta, d.c)?;
        if mean.len() != d.c || var.len() != d.c {
            return Err(Error::Shape("running statistics length mismatch".into()));
        }
        let xs = self.value(x).data();
        let (y, inv_std) = kernels::batchnorm_eval(
            xs,
            d,
            self.value(gamma).data(),
            self.value(beta).data(),
            mean,
            var,
        );
        let hw = d.plane();
        let xhat = xs
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let ch = (i / hw) % d.c;
                (v - mean[ch]) * inv_std[ch]
            })
            .collect();
        let t = Tensor::from_vec(self.value(x).shape(), y)?;
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(t, Op::BnEval { x, gamma, beta, xhat, inv_std }, rg))
    }

    fn check_channel_vec(&self, v: Var, c: usize) -> Result<()> {
        if self.value(v).numel() != c {
            return Err(Error::Shape(format!(
                "per-channel vector of {} for {c} channels",
                self.value(v).numel()
            )));
        }
        Ok(())
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let y: Vec<F> = src.data().iter().map(|&v| v.max(F::zero())).collect();
        let t = Tensor::from_vec(src.shape(), y).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(t, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let src = self.value(x);
        let y: Vec<F> = src.data().iter().map(|&v| kernels::sigmoid(v)).collect();
        let t = Tensor::from_vec(src.shape(), y).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(t, Op::Sigmoid(x), rg)
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let d = dims(self.value(x))?;
        if d.h % 2 != 0 || d.w % 2 != 0 {
            return Err(Error::Shape(format!("maxpool2 needs even spatial dims, got {}x{}", d.h, d.w)));
        }
        let (y, arg) = kernels::maxpool2_forward(self.value(x).data(), d);
        let t = Tensor::from_vec(&[d.n, d.c, d.h / 2, d.w / 2], y)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::MaxPool { x, arg }, rg))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let da = dims(self.value(a))?;
        let db = dims(self.value(b))?;
        if (da.n, da.h, da.w) != (db.n, db.h, db.w) {
            return Err(Error::Shape(format!(
                "concat {:?} with {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let y = kernels::concat_channels(self.value(a).data(), da.c, self.value(b).data(), db.c, da.n, da.plane());
        let t = Tensor::from_vec(&[da.n, da.c + db.c, da.h, da.w], y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Concat(a, b), rg))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x).slice_channels(start, len)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Slice { x, start }, rg))
    }

    /// `scale·x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (s, b) = (F::of(scale), F::of(shift));
        let src = self.value(x);
        let y: Vec<F> = src.data().iter().map(|&v| s * v + b).collect();
        let t = Tensor::from_vec(src.shape(), y).expect("same shape");
        let rg = self.rg(&[x]);
        self.push(t, Op::Affine { x, scale: s }, rg)
    }

    /// Mean squared error over every element.
    pub fn mse(&mut self, pred: Var, target: &Tensor<F>) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::Shape(format!("mse {:?} vs {:?}", p.shape(), target.shape())));
        }
        let loss = super::loss::mse(p.data(), target.data());
        let rg = self.rg(&[pred]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.data().to_vec(),
            },
            rg,
        ))
    }

    /// Mean binary cross-entropy of probabilities.
    pub fn bce(&mut self, pred: Var, target: &Tensor<F>) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::Shape(format!("bce {:?} vs {:?}", p.shape(), target.shape())));
        }
        let loss = super::loss::bce(p.data(), target.data());
        let rg = self.rg(&[pred]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                pred,
                target: target.data().to_vec(),
            },
            rg,
        ))
    }

    /// `a + wb·b` for equally shaped tensors.
    pub fn add_scaled(&mut self, a: Var, b: Var, wb: f64) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!("add {:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let w = F::of(wb);
        let y: Vec<F> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + w * y).collect();
        let t = Tensor::from_vec(ta.shape(), y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::AddScaled { a, b, wb: w }, rg))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape("backward needs a scalar loss".into()));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let dy = match &node.op {
                Op::Leaf => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            let wants = |v: &Var| self.nodes[v.0].requires_grad;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv { x, w, b, k } => {
                    let d = dims(self.value(*x))?;
                    let o = self.value(*b).numel();
                    let g = kernels::conv2d_backward(
                        self.value(*x).data(),
                        d,
                        self.value(*w).data(),
                        &dy,
                        o,
                        *k,
                        wants(x),
                    );
                    if let Some(dx) = g.dx {
                        add_into(&mut grads[x.0], dx);
                    }
                    add_into(&mut grads[w.0], g.dw);
                    add_into(&mut grads[b.0], g.db);
                }
                Op::TConv { x, w, b } => {
                    let d = dims(self.value(*x))?;
                    let o = self.value(*b).numel();
                    let g = kernels::tconv2_backward(
                        self.value(*x).data(),
                        d,
                        self.value(*w).data(),
                        &dy,
                        o,
                        wants(x),
                    );
                    if let Some(dx) = g.dx {
                        add_into(&mut grads[x.0], dx);
                    }
                    add_into(&mut grads[w.0], g.dw);
                    add_into(&mut grads[b.0], g.db);
                }
                Op::BnTrain { x, gamma, beta, cache } => {
                    let d = dims(self.value(*x))?;
                    let (dx, dg, db) =
                        kernels::batchnorm_train_backward(&dy, d, self.value(*gamma).data(), cache);
                    add_into(&mut grads[x.0], dx);
                    add_into(&mut grads[gamma.0], dg);
                    add_into(&mut grads[beta.0], db);
                }
                Op::BnEval { x, gamma, beta, xhat, inv_std } => {
                    let d = dims(self.value(*x))?;
                    let hw = d.plane();
                    let gm = self.value(*gamma).data();
                    let mut dx = vec![F::zero(); dy.len()];
                    let mut dg = vec![F::zero(); d.c];
                    let mut db = vec![F::zero(); d.c];
                    for (idx, &g) in dy.iter().enumerate() {
                        let ch = (idx / hw) % d.c;
                        dx[idx] = g * gm[ch] * inv_std[ch];
                        dg[ch] += g * xhat[idx];
                        db[ch] += g;
                    }
                    add_into(&mut grads[x.0], dx);
                    add_into(&mut grads[gamma.0], dg);
                    add_into(&mut grads[beta.0], db);
                }
                Op::Relu(x) => {
                    let xs = self.value(*x).data();
                    let dx = dy
                        .iter()
                        .zip(xs)
                        .map(|(&g, &v)| if v > F::zero() { g } else { F::zero() })
                        .collect();
                    add_into(&mut grads[x.0], dx);
                }
                Op::Sigmoid(x) => {
                    let ys = node.value.data();
                    let dx = dy.iter().zip(ys).map(|(&g, &s)| g * s * (F::one() - s)).collect();
                    add_into(&mut grads[x.0], dx);
                }
                Op::MaxPool { x, arg } => {
                    let mut dx = vec![F::zero(); self.value(*x).numel()];
                    for (&g, &a) in dy.iter().zip(arg) {
                        dx[a] += g;
                    }
                    add_into(&mut grads[x.0], dx);
                }
                Op::Concat(a, b) => {
                    let da = dims(self.value(*a))?;
                    let db = dims(self.value(*b))?;
                    let (sa, sb) = (da.sample(), db.sample());
                    let mut ga = Vec::with_capacity(da.len());
                    let mut gb = Vec::with_capacity(db.len());
                    for chunk in dy.chunks(sa + sb) {
                        ga.extend_from_slice(&chunk[..sa]);
                        gb.extend_from_slice(&chunk[sa..]);
                    }
                    if wants(a) {
                        add_into(&mut grads[a.0], ga);
                    }
                    if wants(b) {
                        add_into(&mut grads[b.0], gb);
                    }
                }
                Op::Slice { x, start } => {
                    let dx_dims = dims(self.value(*x))?;
                    let out = dims(&node.value)?;
                    let hw = dx_dims.plane();
                    let mut dx = vec![F::zero(); dx_dims.len()];
                    for n in 0..dx_dims.n {
                        let dst = (n * dx_dims.c + start) * hw;
                        let src = n * out.sample();
                        dx[dst..dst + out.sample()].copy_from_slice(&dy[src..src + out.sample()]);
                    }
                    add_into(&mut grads[x.0], dx);
                }
                Op::Affine { x, scale } => {
                    add_into(&mut grads[x.0], dy.iter().map(|&g| g * *scale).collect());
                }
                Op::Mse { pred, target } => {
                    let p = self.value(*pred).data();
                    let k = dy[0] * F::of(2.0) / F::of(p.len() as f64);
                    let dx = p.iter().zip(target).map(|(&a, &t)| k * (a - t)).collect();
                    add_into(&mut grads[pred.0], dx);
                }
                Op::Bce { pred, target } => {
                    let p = self.value(*pred).data();
                    let m = F::of(p.len() as f64);
                    let dx = p
                        .iter()
                        .zip(target)
                        .map(|(&a, &t)| dy[0] * super::loss::bce_grad(a, t) / m)
                        .collect();
                    add_into(&mut grads[pred.0], dx);
                }
                Op::AddScaled { a, b, wb } => {
                    if wants(b) {
                        add_into(&mut grads[b.0], dy.iter().map(|&g| g * *wb).collect());
                    }
                    if wants(a) {
                        add_into(&mut grads[a.0], dy);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}
