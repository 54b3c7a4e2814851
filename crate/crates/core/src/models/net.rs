use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::{ModelConfig, Variant, DB_OFFSET, DB_SCALE};
use crate::nn::kernels::BN_MOMENTUM;
use crate::nn::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are returned for update.
    Train,
    /// Running statistics.
    Eval,
}

/// 3×3 convolution, batch norm and ReLU.
#[derive(Clone, Debug)]
struct ConvBn {
    w: ParamId,
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

#[derive(Clone, Debug)]
struct Block {
    a: ConvBn,
    b: ConvBn,
}

#[derive(Clone, Debug)]
struct Up {
    w: ParamId,
    b: ParamId,
    block: Block,
}

/// 1×1 convolution.
#[derive(Clone, Debug)]
struct Head {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct Decoder {
    /// Deepest level first.
    ups: Vec<Up>,
}

/// Layer structure of a configured model; weights live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Network {
    pub config: ModelConfig,
    in_channels: usize,
    /// `depth` encoder levels followed by the bottleneck.
    enc: Vec<Block>,
    ss: Decoder,
    ss_head: Head,
    seg_head: Option<Head>,
    cov: Option<(Decoder, Head)>,
}

struct Init<'a> {
    store: &'a mut ParamStore<f32>,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    /// He-uniform weights, bound `sqrt(6 / fan_in)`.
    fn weight(&mut self, name: String, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = (6.0 / fan_in as f64).sqrt() as f32;
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.store.add(name, Tensor::from_vec(shape, data).expect("shape"), true)
    }

    fn fill(&mut self, name: String, shape: &[usize], v: f32, trainable: bool) -> ParamId {
        self.store.add(name, Tensor::full(shape, v), trainable)
    }

    fn conv_bn(&mut self, name: &str, cin: usize, cout: usize) -> ConvBn {
        ConvBn {
            w: self.weight(format!("{name}.w"), &[cout, cin, 3, 3], cin * 9),
            gamma: self.fill(format!("{name}.gamma"), &[cout], 1.0, true),
            beta: self.fill(format!("{name}.beta"), &[cout], 0.0, true),
            mean: self.fill(format!("{name}.running_mean"), &[cout], 0.0, false),
            var: self.fill(format!("{name}.running_var"), &[cout], 1.0, false),
        }
    }

    fn block(&mut self, name: &str, cin: usize, cout: usize) -> Block {
        Block {
            a: self.conv_bn(&format!("{name}.a"), cin, cout),
            b: self.conv_bn(&format!("{name}.b"), cout, cout),
        }
    }

    fn head(&mut self, name: &str, cin: usize, cout: usize) -> Head {
        Head {
            w: self.weight(format!("{name}.w"), &[cout, cin, 1, 1], cin),
            b: self.fill(format!("{name}.b"), &[cout], 0.0, true),
        }
    }

    fn decoder(&mut self, name: &str, width: usize, depth: usize, extra_final: usize) -> Decoder {
        let ups = (0..depth)
            .rev()
            .map(|i| {
                let c = width << i;
                let extra = if i == 0 { extra_final } else { 0 };
                Up {
                    w: self.weight(format!("{name}.up{i}.w"), &[c, 2 * c, 2, 2], 2 * c * 4),
                    b: self.fill(format!("{name}.up{i}.b"), &[c], 0.0, true),
                    block: self.block(&format!("{name}.up{i}"), 2 * c + extra, c),
                }
            })
            .collect();
        Decoder { ups }
    }
}

/// Graph variables of the trainable parameters.
pub struct Bound {
    vars: Vec<Option<Var>>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0].expect("parameter not bound")
    }

    /// Gradients of every bound parameter.
    pub fn collect<F: Scalar>(&self, grads: &mut crate::nn::Gradients<F>, store: &ParamStore<F>) -> Vec<(ParamId, Vec<F>)> {
        self.vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = (*v)?;
                let g = grads.take(v).unwrap_or_else(|| vec![F::zero(); store.value(ParamId(i)).numel()]);
                Some((ParamId(i), g))
            })
            .collect()
    }
}

pub fn bind<F: Scalar>(g: &mut Graph<F>, store: &ParamStore<F>) -> Bound {
    Bound {
        vars: store
            .iter()
            .map(|(_, p)| p.trainable.then(|| g.param(p.value.clone())))
            .collect(),
    }
}

/// Running-statistic ids with one batch's mean and biased variance.
pub type BnBatch<F = f32> = (ParamId, ParamId, Vec<F>, Vec<F>);

/// Network outputs as graph variables.
pub struct Forward<F> {
    /// `(N, 8, H, W)` in dBm.
    pub ss: Var,
    /// `(N, 1, H, W)` NLoS probability.
    pub seg: Option<Var>,
    /// `(N, 1, H, W)` reconstructed coverage in dBm.
    pub cov: Option<Var>,
    pub bn_batch: Vec<BnBatch<F>>,
}

struct Ctx<'a, F: Scalar> {
    g: &'a mut Graph<F>,
    store: &'a ParamStore<F>,
    bound: &'a Bound,
    mode: Mode,
    bn_batch: Vec<BnBatch<F>>,
}

impl<F: Scalar> Ctx<'_, F> {
    fn conv_bn(&mut self, x: Var, p: &ConvBn) -> Result<Var> {
        let w = self.bound.var(p.w);
        let out_c = self.store.value(p.w).shape()[0];
        let zero = self.g.constant(Tensor::zeros(&[out_c]));
        let y = self.g.conv2d(x, w, zero)?;
        let (gamma, beta) = (self.bound.var(p.gamma), self.bound.var(p.beta));
        let y = match self.mode {
            Mode::Train => {
                let (y, mean, var) = self.g.batch_norm_train(y, gamma, beta)?;
                self.bn_batch.push((p.mean, p.var, mean, var));
                y
            }
            Mode::Eval => {
                let (m, v) = (self.store.value(p.mean).data(), self.store.value(p.var).data());
                self.g.batch_norm_eval(y, gamma, beta, m, v)?
            }
        };
        Ok(self.g.relu(y))
    }

    fn block(&mut self, x: Var, b: &Block) -> Result<Var> {
        let y = self.conv_bn(x, &b.a)?;
        self.conv_bn(y, &b.b)
    }

    fn head(&mut self, x: Var, h: &Head) -> Result<Var> {
        let (w, b) = (self.bound.var(h.w), self.bound.var(h.b));
        self.g.conv2d(x, w, b)
    }

    /// Returns the last feature map; `inject` joins the final concat.
    fn decode(&mut self, mut x: Var, skips: &[Var], dec: &Decoder, inject: Option<Var>) -> Result<Var> {
        for (k, up) in dec.ups.iter().enumerate() {
            let level = dec.ups.len() - 1 - k;
            let (w, b) = (self.bound.var(up.w), self.bound.var(up.b));
            let u = self.g.tconv2(x, w, b)?;
            let mut cat = self.g.concat(u, skips[level])?;
            if level == 0 {
                if let Some(extra) = inject {
                    cat = self.g.concat(cat, extra)?;
                }
            }
            x = self.block(cat, &up.block)?;
        }
        Ok(x)
    }
}

impl Network {
    /// Layer structure plus freshly initialized parameters.
    pub fn new(config: &ModelConfig) -> Result<(Self, ParamStore<f32>)> {
        let v = config.violations();
        if !v.is_empty() {
            return Err(Error::InvalidParam(v.join("; ")));
        }
        let (wd, depth) = (config.width, config.depth);
        let in_channels = config.in_channels();
        let mut store = ParamStore::new();
        let mut init = Init {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        };
        let mut enc = Vec::with_capacity(depth + 1);
        let mut cin = in_channels;
        for i in 0..=depth {
            let cout = wd << i;
            enc.push(init.block(&format!("enc{i}"), cin, cout));
            cin = cout;
        }
        let partial = config.variant == Variant::Partial;
        let ss = init.decoder("ss", wd, depth, partial as usize);
        let ss_head = init.head("ss_head", wd, 8);
        let seg_head = config.variant.has_seg().then(|| init.head("seg_head", wd, 1));
        let cov = partial.then(|| {
            let d = init.decoder("cov", wd, depth, 0);
            let h = init.head("cov_head", wd, 1);
            (d, h)
        });
        let net = Self {
            config: config.clone(),
            in_channels,
            enc,
            ss,
            ss_head,
            seg_head,
            cov,
        };
        Ok((net, store))
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// Builds the forward pass for a `(N, C, H, W)` input.
    pub fn forward<F: Scalar>(
        &self,
        g: &mut Graph<F>,
        store: &ParamStore<F>,
        bound: &Bound,
        x: Var,
        mode: Mode,
    ) -> Result<Forward<F>> {
        let (_, c, h, w) = g.value(x).dims4()?;
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        self.config.check_dims(h, w)?;
        let mut ctx = Ctx {
            g,
            store,
            bound,
            mode,
            bn_batch: Vec::new(),
        };
        let depth = self.config.depth;
        let mut skips = Vec::with_capacity(depth);
        let mut y = x;
        for (i, block) in self.enc.iter().enumerate() {
            y = ctx.block(y, block)?;
            if i < depth {
                skips.push(y);
                y = ctx.g.maxpool2(y)?;
            }
        }
        let bottleneck = y;

        let (cov, cov_prob) = match &self.cov {
            Some((dec, head)) => {
                let f = ctx.decode(bottleneck, &skips, dec, None)?;
                let logits = ctx.head(f, head)?;
                let p = ctx.g.sigmoid(logits);
                (Some(ctx.g.affine(p, DB_SCALE, -DB_OFFSET)), Some(p))
            }
            None => (None, None),
        };
        let f = ctx.decode(bottleneck, &skips, &self.ss, cov_prob)?;
        let logits = ctx.head(f, &self.ss_head)?;
        let p = ctx.g.sigmoid(logits);
        let ss = ctx.g.affine(p, DB_SCALE, -DB_OFFSET);
        let seg = match &self.seg_head {
            Some(hd) => {
                let l = ctx.head(f, hd)?;
                Some(ctx.g.sigmoid(l))
            }
            None => None,
        };
        Ok(Forward {
            ss,
            seg,
            cov,
            bn_batch: ctx.bn_batch,
        })
    }
}

/// Exponential moving update of running statistics; the variance is
/// converted to its unbiased estimate first.
pub fn update_running<F: Scalar>(store: &mut ParamStore<F>, batch: &[BnBatch<F>], count: usize) {
    let m = F::of(BN_MOMENTUM);
    let unbias = if count > 1 {
        F::of(count as f64 / (count - 1) as f64)
    } else {
        F::one()
    };
    for (mid, vid, mean, var) in batch {
        for (r, &b) in store.value_mut(*mid).data_mut().iter_mut().zip(mean) {
            *r = (F::one() - m) * *r + m * b;
        }
        for (r, &b) in store.value_mut(*vid).data_mut().iter_mut().zip(var) {
            *r = (F::one() - m) * *r + m * b * unbias;
        }
    }
}
