//! Uniform lattices over the cube `[-1, 1]ⁿ`, ball masks and discrete maps.
//!
//! Lattice points are numbered row-major: the last axis varies fastest.
//! A mask of radius `r` classifies every point as outside the closed ball,
//! boundary (inside, but some point of the full second-difference stencil is
//! not) or interior.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{Dims, Gradient, SmallGrad, MAX_M, MAX_N};

pub const GRID_MAGIC: &[u8; 8] = b"msl-v1\0\0";
pub const MASK_BALL: u32 = 0;

/// Default points per axis: 41 for `n <= 3`, 21 for `n = 4`.
pub fn default_points_per_axis(n: usize) -> usize {
    if n >= 4 {
        21
    } else {
        41
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    n: usize,
    points: usize,
    spacing: f64,
}

impl Lattice {
    pub fn new(n: usize, points: usize) -> Result<Self> {
        if !(1..=MAX_N).contains(&n) {
            return Err(invalid("n", format!("lattice dimension {n} not in 1..=4")));
        }
        if points < 5 || points % 2 == 0 {
            return Err(invalid("grid_n", format!("need an odd count >= 5, got {points}")));
        }
        Ok(Self {
            n,
            points,
            spacing: 2.0 / (points as f64 - 1.0),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn points_per_axis(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.points.pow((self.n - 1 - axis) as u32)
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        -1.0 + i as f64 * self.spacing
    }

    pub fn multi_index(&self, mut idx: usize) -> [usize; MAX_N] {
        let mut out = [0; MAX_N];
        for axis in (0..self.n).rev() {
            out[axis] = idx % self.points;
            idx /= self.points;
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().fold(0, |acc, &i| acc * self.points + i)
    }

    pub fn position(&self, idx: usize) -> Vec<f64> {
        let mi = self.multi_index(idx);
        (0..self.n).map(|a| self.coordinate(mi[a])).collect()
    }

    /// Index of the lattice point nearest to `x` (clamped to the cube).
    pub fn nearest(&self, x: &[f64]) -> usize {
        let multi: Vec<usize> = x
            .iter()
            .map(|&c| (((c + 1.0) / self.spacing).round().max(0.0) as usize).min(self.points - 1))
            .collect();
        self.flat_index(&multi)
    }

    /// Neighbour of `idx` displaced by `offset` (entries in -1..=1), if it
    /// stays in the cube.
    pub fn offset(&self, idx: usize, offset: &[i32]) -> Option<usize> {
        let mi = self.multi_index(idx);
        let mut out = idx as i64;
        for axis in 0..self.n {
            let o = offset[axis];
            let c = mi[axis] as i64 + o as i64;
            if c < 0 || c >= self.points as i64 {
                return None;
            }
            out += o as i64 * self.stride(axis) as i64;
        }
        Some(out as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointClass {
    Outside,
    Boundary,
    Interior,
}

/// Classification of lattice points against the closed ball `|x| <= radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallMask {
    radius: f64,
    classes: Vec<PointClass>,
}

impl BallMask {
    pub fn new(lattice: &Lattice, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius <= 1.0) {
            return Err(invalid("radius", format!("mask radius {radius} not in (0, 1]")));
        }
        let inside = |idx: usize| {
            let x = lattice.position(idx);
            x.iter().map(|v| v * v).sum::<f64>().sqrt() <= radius * (1.0 + 1e-12)
        };
        let offsets = stencil_offsets(lattice.n());
        let classes = (0..lattice.len())
            .map(|idx| {
                if !inside(idx) {
                    PointClass::Outside
                } else if offsets
                    .iter()
                    .all(|o| lattice.offset(idx, o).is_some_and(inside))
                {
                    PointClass::Interior
                } else {
                    PointClass::Boundary
                }
            })
            .collect();
        Ok(Self { radius, classes })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn class(&self, idx: usize) -> PointClass {
        self.classes[idx]
    }

    pub fn count(&self, class: PointClass) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }
}

/// Offsets with at most two nonzero entries in {-1, 1}: the support of
/// central first and second differences, including mixed ones.
pub fn stencil_offsets(n: usize) -> Vec<Vec<i32>> {
    let mut out = Vec::new();
    for i in 0..n {
        for si in [-1, 1] {
            let mut o = vec![0; n];
            o[i] = si;
            out.push(o.clone());
            for j in (i + 1)..n {
                for sj in [-1, 1] {
                    let mut o2 = o.clone();
                    o2[j] = sj;
                    out.push(o2);
                }
            }
        }
    }
    out
}

/// Which formula produced a discrete derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stencil {
    Central,
    OneSided,
}

/// A discrete map from the masked lattice to `ℝᵐ`. Points outside the mask
/// hold `NaN`.
#[derive(Debug, Clone)]
pub struct GridMap {
    dims: Dims,
    lattice: Lattice,
    mask: Arc<BallMask>,
    values: Vec<f64>,
}

impl GridMap {
    /// Samples `f` at every lattice point of the closed unit ball.
    pub fn from_fn(dims: Dims, points: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        let lattice = Lattice::new(dims.n, points)?;
        let mask = Arc::new(BallMask::new(&lattice, 1.0)?);
        Self::from_fn_on(dims, lattice, mask, f)
    }

    pub fn from_fn_on(
        dims: Dims,
        lattice: Lattice,
        mask: Arc<BallMask>,
        f: impl Fn(&[f64]) -> Vec<f64>,
    ) -> Result<Self> {
        if lattice.n() != dims.n {
            return Err(Error::Shape(format!("lattice dimension {} != n = {}", lattice.n(), dims.n)));
        }
        let m = dims.m;
        let mut values = vec![f64::NAN; lattice.len() * m];
        for idx in 0..lattice.len() {
            if mask.class(idx) != PointClass::Outside {
                let v = f(&lattice.position(idx));
                if v.len() != m {
                    return Err(Error::Shape(format!("map returned {} components, expected {m}", v.len())));
                }
                values[idx * m..(idx + 1) * m].copy_from_slice(&v);
            }
        }
        Ok(Self {
            dims,
            lattice,
            mask,
            values,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn mask(&self) -> &BallMask {
        &self.mask
    }

    pub fn shared_mask(&self) -> Arc<BallMask> {
        Arc::clone(&self.mask)
    }

    pub fn spacing(&self) -> f64 {
        self.lattice.spacing()
    }

    pub fn value(&self, idx: usize) -> &[f64] {
        let m = self.dims.m;
        &self.values[idx * m..(idx + 1) * m]
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut [f64] {
        let m = self.dims.m;
        &mut self.values[idx * m..(idx + 1) * m]
    }

    pub fn raw_values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn raw_values_mut(&mut self) -> &mut Vec<f64> {
        &mut self.values
    }

    pub fn class(&self, idx: usize) -> PointClass {
        self.mask.class(idx)
    }

    pub fn position(&self, idx: usize) -> Vec<f64> {
        self.lattice.position(idx)
    }

    /// Indices of mask points (interior and boundary) in lattice order.
    pub fn mask_indices(&self) -> Vec<usize> {
        (0..self.lattice.len())
            .filter(|&i| self.mask.class(i) != PointClass::Outside)
            .collect()
    }

    pub fn interior_indices(&self) -> Vec<usize> {
        (0..self.lattice.len())
            .filter(|&i| self.mask.class(i) == PointClass::Interior)
            .collect()
    }

    pub fn boundary_indices(&self) -> Vec<usize> {
        (0..self.lattice.len())
            .filter(|&i| self.mask.class(i) == PointClass::Boundary)
            .collect()
    }

    /// Mask points with `|x| <= r`.
    pub fn indices_within(&self, r: f64) -> Vec<usize> {
        self.mask_indices()
            .into_iter()
            .filter(|&i| norm(&self.position(i)) <= r * (1.0 + 1e-12))
            .collect()
    }

    /// Same values on the same lattice, re-masked to the ball of radius `r`.
    pub fn restrict(&self, r: f64) -> Result<Self> {
        let mask = Arc::new(BallMask::new(&self.lattice, r)?);
        let m = self.dims.m;
        let mut values = self.values.clone();
        for idx in 0..self.lattice.len() {
            if mask.class(idx) == PointClass::Outside {
                values[idx * m..(idx + 1) * m].fill(f64::NAN);
            } else if self.mask.class(idx) == PointClass::Outside {
                return Err(invalid("radius", format!("radius {r} exceeds the mask radius {}", self.mask.radius())));
            }
        }
        Ok(Self {
            dims: self.dims,
            lattice: self.lattice,
            mask,
            values,
        })
    }

    /// Pointwise `f(x, u(x))` on the mask.
    pub fn map(&self, f: impl Fn(&[f64], &[f64]) -> Vec<f64>) -> Result<Self> {
        let mut out = self.clone();
        for idx in self.mask_indices() {
            let v = f(&self.position(idx), self.value(idx));
            if v.len() != self.dims.m {
                return Err(Error::Shape(format!("map returned {} components, expected {}", v.len(), self.dims.m)));
            }
            out.value_mut(idx).copy_from_slice(&v);
        }
        Ok(out)
    }

    pub fn sup_norm(&self) -> f64 {
        self.mask_indices()
            .into_iter()
            .map(|i| norm(self.value(i)))
            .fold(0.0, f64::max)
    }

    /// `max |u(x) - v(x)|` over common mask points.
    pub fn sup_distance(&self, other: &GridMap) -> f64 {
        self.mask_indices()
            .into_iter()
            .filter(|&i| other.class(i) != PointClass::Outside)
            .map(|i| {
                self.value(i)
                    .iter()
                    .zip(other.value(i))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    fn component(&self, idx: usize, alpha: usize) -> f64 {
        self.values[idx * self.dims.m + alpha]
    }

    fn defined(&self, idx: Option<usize>) -> Option<usize> {
        idx.filter(|&i| self.mask.class(i) != PointClass::Outside)
    }

    /// `Du` at a mask point: central differences where both axis neighbours
    /// are in the mask, otherwise second-order one-sided differences. The
    /// returned flag says which was used.
    pub fn gradient_at(&self, idx: usize) -> Result<(Gradient, Stencil)> {
        let (du, st) = self.small_gradient(idx)?;
        let (n, m) = (self.dims.n, self.dims.m);
        let mut out = nalgebra::DMatrix::zeros(n, m);
        for i in 0..n {
            for a in 0..m {
                out[(i, a)] = du[i][a];
            }
        }
        Ok((Gradient::new(out), st))
    }

    pub(crate) fn small_gradient(&self, idx: usize) -> Result<(SmallGrad, Stencil)> {
        if self.mask.class(idx) == PointClass::Outside {
            return Err(Error::BoundaryProximity { index: idx });
        }
        let (n, m) = (self.dims.n, self.dims.m);
        let h = self.spacing();
        let mut du = [[0.0; MAX_M]; MAX_N];
        let mut stencil = Stencil::Central;
        for i in 0..n {
            let mut e = [0i32; MAX_N];
            e[i] = 1;
            let fwd = self.defined(self.lattice.offset(idx, &e[..n]));
            e[i] = -1;
            let bwd = self.defined(self.lattice.offset(idx, &e[..n]));
            match (fwd, bwd) {
                (Some(f), Some(b)) => {
                    for a in 0..m {
                        du[i][a] = (self.component(f, a) - self.component(b, a)) / (2.0 * h);
                    }
                }
                (Some(f), None) => {
                    stencil = Stencil::OneSided;
                    let ff = self
                        .defined(self.lattice.offset(f, &unit(n, i, 1)))
                        .ok_or(Error::BoundaryProximity { index: idx })?;
                    for a in 0..m {
                        du[i][a] = (-3.0 * self.component(idx, a) + 4.0 * self.component(f, a)
                            - self.component(ff, a))
                            / (2.0 * h);
                    }
                }
                (None, Some(b)) => {
                    stencil = Stencil::OneSided;
                    let bb = self
                        .defined(self.lattice.offset(b, &unit(n, i, -1)))
                        .ok_or(Error::BoundaryProximity { index: idx })?;
                    for a in 0..m {
                        du[i][a] = (3.0 * self.component(idx, a) - 4.0 * self.component(b, a)
                            + self.component(bb, a))
                            / (2.0 * h);
                    }
                }
                (None, None) => return Err(Error::BoundaryProximity { index: idx }),
            }
        }
        Ok((du, stencil))
    }

    /// Central first and second differences at an interior point.
    pub(crate) fn central_jet(&self, idx: usize) -> Result<(SmallGrad, [[[f64; MAX_N]; MAX_N]; MAX_M])> {
        if self.mask.class(idx) != PointClass::Interior {
            return Err(Error::BoundaryProximity { index: idx });
        }
        let (n, m) = (self.dims.n, self.dims.m);
        let h = self.spacing();
        let h2 = h * h;
        let mut du = [[0.0; MAX_M]; MAX_N];
        let mut d2 = [[[0.0; MAX_N]; MAX_N]; MAX_M];
        for i in 0..n {
            let si = self.lattice.stride(i);
            for a in 0..m {
                let c = self.component(idx, a);
                let p = self.component(idx + si, a);
                let q = self.component(idx - si, a);
                du[i][a] = (p - q) / (2.0 * h);
                d2[a][i][i] = (p - 2.0 * c + q) / h2;
            }
            for j in (i + 1)..n {
                let sj = self.lattice.stride(j);
                for a in 0..m {
                    let pp = self.component(idx + si + sj, a);
                    let pm = self.component(idx + si - sj, a);
                    let mp = self.component(idx - si + sj, a);
                    let mm = self.component(idx - si - sj, a);
                    let v = (pp - pm - mp + mm) / (4.0 * h2);
                    d2[a][i][j] = v;
                    d2[a][j][i] = v;
                }
            }
        }
        Ok((du, d2))
    }

    /// Flat little-endian binary layout: magic `msl-v1\0\0`, then `u32` n, m,
    /// points per axis and mask id, `f64` mask radius, then every lattice
    /// point's `m` components in row-major order (`NaN` outside the mask).
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        w.write_all(GRID_MAGIC)?;
        for v in [
            self.dims.n as u32,
            self.dims.m as u32,
            self.lattice.points_per_axis() as u32,
            MASK_BALL,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.mask.radius().to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != GRID_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut word = [0u8; 4];
        let mut header = [0u32; 4];
        for h in header.iter_mut() {
            r.read_exact(&mut word)?;
            *h = u32::from_le_bytes(word);
        }
        let [n, m, points, mask_id] = header;
        if mask_id != MASK_BALL {
            return Err(Error::Format(format!("unknown mask id {mask_id}")));
        }
        let mut dword = [0u8; 8];
        r.read_exact(&mut dword)?;
        let radius = f64::from_le_bytes(dword);
        let dims = Dims::new(n as usize, m as usize)?;
        let lattice = Lattice::new(dims.n, points as usize)?;
        let mask = Arc::new(BallMask::new(&lattice, radius)?);
        let mut values = Vec::with_capacity(lattice.len() * dims.m);
        for _ in 0..lattice.len() * dims.m {
            r.read_exact(&mut dword)?;
            values.push(f64::from_le_bytes(dword));
        }
        let mut probe = [0u8; 1];
        if r.read(&mut probe)? != 0 {
            return Err(Error::Format("trailing bytes after payload".into()));
        }
        Ok(Self {
            dims,
            lattice,
            mask,
            values,
        })
    }

    /// CSV with columns `x1..xn,u1..um`, one row per mask point.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let (n, m) = (self.dims.n, self.dims.m);
        let header: Vec<String> = (1..=n)
            .map(|i| format!("x{i}"))
            .chain((1..=m).map(|a| format!("u{a}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for idx in self.mask_indices() {
            let row: Vec<String> = self
                .position(idx)
                .iter()
                .chain(self.value(idx))
                .map(|v| format!("{v:e}"))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn unit(n: usize, axis: usize, sign: i32) -> Vec<i32> {
    let mut o = vec![0; n];
    o[axis] = sign;
    o
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}
