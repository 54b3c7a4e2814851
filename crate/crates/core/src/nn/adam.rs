use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore, Scalar};

#[derive(Clone, Debug)]
pub struct Adam<F> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// One bias-corrected update. Parameters without a gradient entry are
    /// treated as having a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore<F>, grads: &[(ParamId, Vec<F>)]) -> Result<()> {
        if self.m.len() < store.len() {
            for (id, p) in store.iter().skip(self.m.len()) {
                let n = if p.trainable { p.value.numel() } else { 0 };
                debug_assert_eq!(id.0, self.m.len());
                self.m.push(vec![F::zero(); n]);
                self.v.push(vec![F::zero(); n]);
            }
        }
        for (id, g) in grads {
            let p = store.get(*id);
            if !p.trainable {
                return Err(Error::InvalidParam(format!("gradient for frozen tensor {}", p.name)));
            }
            if g.len() != p.value.numel() {
                return Err(Error::Shape(format!("gradient length for {}", p.name)));
            }
        }
        self.step += 1;
        let (b1, b2) = (F::of(self.beta1), F::of(self.beta2));
        let c1 = F::one() - F::of(self.beta1.powi(self.step));
        let c2 = F::one() - F::of(self.beta2.powi(self.step));
        let (lr, eps) = (F::of(self.lr), F::of(self.eps));
        let mut provided = vec![None; store.len()];
        for (id, g) in grads {
            provided[id.0] = Some(g);
        }
        for i in 0..store.len() {
            let id = ParamId(i);
            if !store.get(id).trainable {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let g = provided[i];
            let w = store.value_mut(id).data_mut();
            for j in 0..w.len() {
                let gj = g.map_or(F::zero(), |g| g[j]);
                m[j] = b1 * m[j] + (F::one() - b1) * gj;
                v[j] = b2 * v[j] + (F::one() - b2) * gj * gj;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                w[j] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
