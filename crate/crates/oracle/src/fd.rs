/// Central-difference gradient; `nonfinite` lists components whose
/// evaluations were not finite (their gradient entry is NaN).
#[derive(Debug, Clone, PartialEq)]
pub struct FdGrad {
    pub grad: Vec<f64>,
    pub nonfinite: Vec<usize>,
}

/// `(f(p + eps e_i) - f(p - eps e_i)) / (2 eps)` for every component.
pub fn finite_diff_grad(mut f: impl FnMut(&[f64]) -> f64, p0: &[f64], eps: f64) -> FdGrad {
    let mut p = p0.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    let mut nonfinite = Vec::new();
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + eps;
        let hi = f(&p);
        p[i] = orig - eps;
        let lo = f(&p);
        p[i] = orig;
        if hi.is_finite() && lo.is_finite() {
            grad.push((hi - lo) / (2.0 * eps));
        } else {
            grad.push(f64::NAN);
            nonfinite.push(i);
        }
    }
    FdGrad { grad, nonfinite }
}
