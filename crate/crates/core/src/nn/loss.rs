use crate::nn::Scalar;

/// Probabilities are clamped into `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;

pub fn mse<F: Scalar>(pred: &[F], target: &[F]) -> F {
    let s: F = pred.iter().zip(target).map(|(&p, &t)| (p - t) * (p - t)).sum();
    s / F::of(pred.len() as f64)
}

pub fn bce<F: Scalar>(pred: &[F], target: &[F]) -> F {
    let lo = F::of(BCE_CLAMP);
    let hi = F::one() - lo;
    let s: F = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.max(lo).min(hi);
            -(t * p.ln() + (F::one() - t) * (F::one() - p).ln())
        })
        .sum();
    s / F::of(pred.len() as f64)
}

/// Derivative of one BCE term with respect to `p`; zero where clamped.
pub(crate) fn bce_grad<F: Scalar>(p: F, t: F) -> F {
    let lo = F::of(BCE_CLAMP);
    if p < lo || p > F::one() - lo {
        return F::zero();
    }
    (p - t) / (p * (F::one() - p))
}
