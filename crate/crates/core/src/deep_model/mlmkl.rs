use crate::error::{check_dim, Error, Result};
use crate::kernels::ScalarKernelSpec;

/// Both sides of `a(|Σ ν_i (K₂(x_i, x) − K₂(x_i, y))|) = K₁(g(x), g(y))`
/// with `g = Σ ν_i K₂(x_i, ·)` and a radial outer kernel `K₁` on `ℝ`.
pub fn mlmkl_equivalence_check(
    outer: &ScalarKernelSpec,
    inner: &ScalarKernelSpec,
    centers: &[Vec<f64>],
    nu: &[f64],
    x: &[f64],
    y: &[f64],
) -> Result<(f64, f64)> {
    if outer.dim() != 1 || !outer.is_radial() {
        return Err(Error::arg(format!("outer kernel {} on dimension {} is not radial on the line", outer.family(), outer.dim())));
    }
    check_dim(centers.len(), nu.len())?;
    let mut diff = 0.0;
    let (mut gx, mut gy) = (0.0, 0.0);
    for (xi, v) in centers.iter().zip(nu) {
        let kx = inner.eval(xi, x)?;
        let ky = inner.eval(xi, y)?;
        diff += v * (kx - ky);
        gx += v * kx;
        gy += v * ky;
    }
    let lhs = outer.radial_profile(diff.abs()).expect("radial checked above");
    let rhs = outer.eval(&[gx], &[gy])?;
    Ok((lhs, rhs))
}
