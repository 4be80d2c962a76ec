//! Tensor-product cubic (four-point Lagrange) interpolation of a [`GridMap`],
//! with first and second derivatives.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::MAX_N;
use crate::grid::{GridMap, PointClass};

/// Value, Jacobian (`n x m`, entry `(i, α) = ∂ᵢ`) and per-component Hessians.
#[derive(Debug, Clone)]
pub struct Jet {
    pub value: Vec<f64>,
    pub jacobian: DMatrix<f64>,
    pub hessians: Vec<DMatrix<f64>>,
}

// Lagrange basis on nodes -1, 0, 1, 2 at local coordinate s, with derivatives.
fn weights(s: f64) -> [[f64; 4]; 3] {
    let nodes = [-1.0, 0.0, 1.0, 2.0];
    let mut w = [[0.0; 4]; 3];
    for k in 0..4 {
        let others: Vec<f64> = (0..4).filter(|&j| j != k).map(|j| nodes[j]).collect();
        let denom: f64 = others.iter().map(|o| nodes[k] - o).product();
        let f: Vec<f64> = others.iter().map(|o| s - o).collect();
        w[0][k] = f[0] * f[1] * f[2] / denom;
        w[1][k] = (f[1] * f[2] + f[0] * f[2] + f[0] * f[1]) / denom;
        w[2][k] = 2.0 * (f[0] + f[1] + f[2]) / denom;
    }
    w
}

/// Interpolates `u` and its first two derivatives at `x`.
///
/// The 4ⁿ node window is centred on the cell containing `x` and shifted
/// inwards at the cube faces; every node must lie in the mask.
pub fn cubic_jet(u: &GridMap, x: &[f64]) -> Result<Jet> {
    let (n, m) = (u.dims().n, u.dims().m);
    if x.len() != n {
        return Err(Error::Shape(format!("point has {} coordinates, expected {n}", x.len())));
    }
    let lat = u.lattice();
    let h = lat.spacing();
    let last = lat.points_per_axis() - 1;
    let mut base = [0usize; MAX_N];
    let mut w = [[[0.0; 4]; 3]; MAX_N];
    for a in 0..n {
        let t = (x[a] + 1.0) / h;
        if !(t >= -1e-9 && t <= last as f64 + 1e-9) {
            return Err(Error::OutsideStencil(x.to_vec()));
        }
        let cell = (t.floor() as isize).clamp(1, last as isize - 2) as usize;
        base[a] = cell - 1;
        let s = t - cell as f64;
        let wa = weights(s);
        for d in 0..3 {
            for k in 0..4 {
                w[a][d][k] = wa[d][k] / h.powi(d as i32);
            }
        }
    }

    let mut value = vec![0.0; m];
    let mut jac = DMatrix::zeros(n, m);
    let mut hess = vec![DMatrix::zeros(n, n); m];
    let total = 4usize.pow(n as u32);
    let mut multi = [0usize; MAX_N];
    for node in 0..total {
        let mut rem = node;
        let mut local = [0usize; MAX_N];
        for a in (0..n).rev() {
            local[a] = rem % 4;
            rem /= 4;
            multi[a] = base[a] + local[a];
        }
        let idx = lat.flat_index(&multi[..n]);
        if u.class(idx) == PointClass::Outside {
            return Err(Error::OutsideStencil(x.to_vec()));
        }
        let v = u.value(idx);
        let w0: f64 = (0..n).map(|a| w[a][0][local[a]]).product();
        for al in 0..m {
            value[al] += w0 * v[al];
        }
        for i in 0..n {
            let wi: f64 = (0..n).map(|a| w[a][usize::from(a == i)][local[a]]).product();
            for al in 0..m {
                jac[(i, al)] += wi * v[al];
            }
            for j in i..n {
                let wij: f64 = (0..n)
                    .map(|a| {
                        let d = usize::from(a == i) + usize::from(a == j);
                        w[a][d][local[a]]
                    })
                    .product();
                for al in 0..m {
                    hess[al][(i, j)] += wij * v[al];
                }
            }
        }
    }
    for hm in &mut hess {
        for i in 0..n {
            for j in 0..i {
                hm[(i, j)] = hm[(j, i)];
            }
        }
    }
    Ok(Jet {
        value,
        jacobian: jac,
        hessians: hess,
    })
}
