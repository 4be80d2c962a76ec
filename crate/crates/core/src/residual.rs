//! Discrete residuals of the minimal surface system on a [`GridMap`].
//!
//! Two independent discretizations: the expanded (nondivergence) form
//! `F_{αi,βj}(Du) u^β_{ij}` with central differences, and the conservative
//! form `div DF(Du)` with staggered half-cell gradients.

use crate::error::{Error, Result};
use crate::geometry::{SystemCoefficients, MAX_M, MAX_N};
use crate::grid::{GridMap, PointClass};

/// `F_{αi,βj}(Du(p)) u^β_{ij}(p)` at an interior lattice point.
pub fn residual_nondivergence(u: &GridMap, idx: usize) -> Result<Vec<f64>> {
    let (n, m) = (u.dims().n, u.dims().m);
    let (du, d2) = u.central_jet(idx)?;
    let c = SystemCoefficients::new(&du, n, m);
    let mut out = vec![0.0; m];
    c.apply(&d2, n, m, &mut out);
    Ok(out)
}

/// `Σᵢ [DF(Du)_{iα}(p + ½eᵢ) − DF(Du)_{iα}(p − ½eᵢ)] / h` at an interior point.
pub fn residual_divergence(u: &GridMap, idx: usize) -> Result<Vec<f64>> {
    if u.class(idx) != PointClass::Interior {
        return Err(Error::BoundaryProximity { index: idx });
    }
    let (n, m) = (u.dims().n, u.dims().m);
    let h = u.spacing();
    let lat = u.lattice();
    let val = |j: usize, a: usize| u.raw_values()[j * m + a];
    let mut out = vec![0.0; m];
    for i in 0..n {
        let si = lat.stride(i);
        for (sign, lo) in [(1.0, idx), (-1.0, idx - si)] {
            // half cell between lo and lo + e_i
            let hi = lo + si;
            let mut du = [[0.0; MAX_M]; MAX_N];
            for a in 0..m {
                du[i][a] = (val(hi, a) - val(lo, a)) / h;
            }
            for j in (0..n).filter(|&j| j != i) {
                let sj = lat.stride(j);
                for a in 0..m {
                    du[j][a] = (val(lo + sj, a) - val(lo - sj, a) + val(hi + sj, a) - val(hi - sj, a)) / (4.0 * h);
                }
            }
            let c = SystemCoefficients::new(&du, n, m);
            for (a, o) in out.iter_mut().enumerate() {
                *o += sign * c.flux(i, a) / h;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualForm {
    Nondivergence,
    Divergence,
}

/// Largest residual norm over the interior points accepted by `keep`.
pub fn sup_residual(u: &GridMap, form: ResidualForm, keep: impl Fn(&[f64]) -> bool) -> Result<f64> {
    let mut sup = 0.0f64;
    for idx in u.interior_indices() {
        if !keep(&u.position(idx)) {
            continue;
        }
        let r = match form {
            ResidualForm::Nondivergence => residual_nondivergence(u, idx)?,
            ResidualForm::Divergence => residual_divergence(u, idx)?,
        };
        sup = sup.max(r.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    Ok(sup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Dims;

    #[test]
    fn affine_maps_have_zero_residual() {
        let dims = Dims::new(3, 2).unwrap();
        let u = GridMap::from_fn(dims, 21, |x| {
            vec![0.3 + 1.1 * x[0] - 0.4 * x[1] + 0.2 * x[2], -0.7 + 0.5 * x[1] + 0.9 * x[2]]
        })
        .unwrap();
        for idx in u.interior_indices() {
            for r in residual_nondivergence(&u, idx).unwrap() {
                assert!(r.abs() <= 1e-12, "{r}");
            }
            for r in residual_divergence(&u, idx).unwrap() {
                assert!(r.abs() <= 1e-12, "{r}");
            }
        }
    }

    #[test]
    fn flat_point_reduces_to_laplacian() {
        // Du(0) = 0 for these harmonic quadratics plus a non-harmonic one.
        let dims = Dims::new(2, 2).unwrap();
        let u = GridMap::from_fn(dims, 21, |x| vec![x[0] * x[0] - x[1] * x[1], x[0] * x[0] + 2.0 * x[1] * x[1]]).unwrap();
        let centre = u.lattice().len() / 2;
        let r = residual_nondivergence(&u, centre).unwrap();
        assert!(r[0].abs() <= 1e-10);
        assert!((r[1] - 6.0).abs() <= 1e-10);
    }

    #[test]
    fn boundary_points_are_rejected() {
        let dims = Dims::new(2, 1).unwrap();
        let u = GridMap::from_fn(dims, 11, |x| vec![x[0]]).unwrap();
        let b = u.boundary_indices()[0];
        assert!(matches!(residual_nondivergence(&u, b), Err(Error::BoundaryProximity { .. })));
        assert!(matches!(residual_divergence(&u, b), Err(Error::BoundaryProximity { .. })));
    }
}
