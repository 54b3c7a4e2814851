use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::models::{Forward, ModelConfig, Variant};
use crate::nn::loss::{bce, mse};
use crate::nn::{Graph, Scalar, Tensor, Var};

/// Ground truth for a batch.
#[derive(Clone, Debug)]
pub struct Targets<F> {
    /// `(N, 8, H, W)` dBm.
    pub ss: Tensor<F>,
    /// `(N, 1, H, W)` NLoS indicator.
    pub nlos: Tensor<F>,
    /// `(N, 1, H, W)` complete coverage in dBm.
    pub cov: Tensor<F>,
}

impl<F: Scalar> Targets<F> {
    pub fn from_samples(samples: &[&Sample]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Shape("empty batch".into()))?;
        let (h, w) = first.dims();
        let n = samples.len();
        let mut ss = Vec::with_capacity(n * 8 * h * w);
        let mut nlos = Vec::with_capacity(n * h * w);
        let mut cov = Vec::with_capacity(n * h * w);
        for s in samples {
            if s.dims() != (h, w) || s.directions.len() != 8 {
                return Err(Error::Shape(format!("sample {} does not fit the batch", s.id())));
            }
            for d in &s.directions {
                ss.extend(d.values.iter().map(|&v| F::of(v as f64)));
            }
            let masks = s.masks.as_ref().ok_or_else(|| Error::Shape("sample without masks".into()))?;
            nlos.extend(masks.nlos.iter().map(|&b| if b { F::one() } else { F::zero() }));
            let c = s.coverage.as_ref().ok_or_else(|| Error::Shape("sample without coverage".into()))?;
            cov.extend(c.values.iter().map(|&v| F::of(v as f64)));
        }
        Ok(Self {
            ss: Tensor::from_vec(&[n, 8, h, w], ss)?,
            nlos: Tensor::from_vec(&[n, 1, h, w], nlos)?,
            cov: Tensor::from_vec(&[n, 1, h, w], cov)?,
        })
    }
}

/// Individual loss terms; absent terms are `None`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms<F> {
    pub ss: F,
    pub seg: Option<F>,
    pub cov: Option<F>,
    pub total: F,
}

/// Mean squared error in the dB domain.
pub fn mse_db<F: Scalar>(pred: &[F], truth: &[F]) -> F {
    mse(pred, truth)
}

/// `mse_db + λ_Seg · bce`; the segmentation term only when `seg` is given.
pub fn loss_full<F: Scalar>(ss_pred: &[F], ss_truth: &[F], seg: Option<(&[F], &[F])>, lambda_seg: f64) -> F {
    let mut l = mse_db(ss_pred, ss_truth);
    if let Some((p, t)) = seg {
        l = l + F::of(lambda_seg) * bce(p, t);
    }
    l
}

/// `loss_full + λ_Cov · mse_db(Ŝ_c, S_c)`.
#[allow(clippy::too_many_arguments)]
pub fn loss_partial<F: Scalar>(
    ss_pred: &[F],
    ss_truth: &[F],
    seg_pred: &[F],
    seg_truth: &[F],
    cov_pred: &[F],
    cov_truth: &[F],
    lambda_seg: f64,
    lambda_cov: f64,
) -> F {
    let l = loss_full(ss_pred, ss_truth, Some((seg_pred, seg_truth)), lambda_seg);
    l + F::of(lambda_cov) * mse_db(cov_pred, cov_truth)
}

/// Loss of a forward pass as a graph node, plus the term values.
pub fn graph_loss<F: Scalar>(
    g: &mut Graph<F>,
    fwd: &Forward<F>,
    targets: &Targets<F>,
    cfg: &ModelConfig,
) -> Result<(Var, LossTerms<F>)> {
    let l_ss = g.mse(fwd.ss, &targets.ss)?;
    let mut total = l_ss;
    let mut terms = LossTerms {
        ss: g.value(l_ss).item(),
        seg: None,
        cov: None,
        total: F::zero(),
    };
    if cfg.variant.has_seg() {
        let seg = fwd.seg.ok_or_else(|| Error::Shape("seg variant without seg output".into()))?;
        let l = g.bce(seg, &targets.nlos)?;
        terms.seg = Some(g.value(l).item());
        total = g.add_scaled(total, l, cfg.lambda_seg)?;
    }
    if cfg.variant == Variant::Partial {
        let cov = fwd.cov.ok_or_else(|| Error::Shape("partial variant without coverage output".into()))?;
        let l = g.mse(cov, &targets.cov)?;
        terms.cov = Some(g.value(l).item());
        total = g.add_scaled(total, l, cfg.lambda_cov)?;
    }
    terms.total = g.value(total).item();
    Ok((total, terms))
}
