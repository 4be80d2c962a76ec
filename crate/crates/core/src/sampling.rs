//! Seeded randomness and quasi-random points.
//!
//! Every random stream is a ChaCha8 generator keyed by the 64-bit run seed,
//! with the ChaCha stream id selecting the job. The same `(seed, stream)`
//! pair reproduces the same draws on any platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PRIMES: [u32; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as u64;
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += (i % b) as f64 * f;
        i /= b;
        f *= inv;
    }
    out
}

/// Halton points in `[0,1)^dim` with a seeded Cranley–Patterson rotation.
#[derive(Debug, Clone)]
pub struct Halton {
    shift: Vec<f64>,
    next: u64,
}

impl Halton {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim <= PRIMES.len(), "Halton dimension {dim} unsupported");
        let mut rng = stream_rng(seed, 0x4841_4c54);
        Self {
            shift: (0..dim).map(|_| rng.random::<f64>()).collect(),
            next: 1,
        }
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        let i = self.next;
        self.next += 1;
        self.shift
            .iter()
            .zip(PRIMES)
            .map(|(s, p)| (radical_inverse(i, p) + s).fract())
            .collect()
    }
}

/// Points of the cube `[-r, r]^dim` lattice with spacing close to `h`
/// (odd count per axis, so the centre is included) lying in the ball of
/// radius `r` about the origin.
pub fn ball_lattice(dim: usize, r: f64, h: f64) -> Vec<Vec<f64>> {
    if dim == 0 {
        return vec![Vec::new()];
    }
    let half = (r / h).ceil().max(1.0) as usize;
    let step = r / half as f64;
    let per = 2 * half + 1;
    let total = per.pow(dim as u32);
    let mut out = Vec::new();
    for k in 0..total {
        let mut rem = k;
        let mut p = vec![0.0; dim];
        for c in p.iter_mut().rev() {
            *c = (rem % per) as f64 * step - r;
            rem /= per;
        }
        if p.iter().map(|v| v * v).sum::<f64>().sqrt() <= r * (1.0 + 1e-12) {
            out.push(p);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_is_reproducible_and_in_range() {
        let mut a = Halton::new(3, 7);
        let mut b = Halton::new(3, 7);
        for _ in 0..100 {
            let p = a.next_point();
            assert_eq!(p, b.next_point());
            assert!(p.iter().all(|v| (0.0..1.0).contains(v)));
        }
        assert_ne!(Halton::new(3, 8).next_point(), Halton::new(3, 7).next_point());
    }

    #[test]
    fn radical_inverse_base_two() {
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(3, 2), 0.75);
        assert_eq!(radical_inverse(4, 2), 0.125);
    }

    #[test]
    fn ball_lattice_counts() {
        let pts = ball_lattice(2, 1.0, 0.5);
        assert_eq!(pts.len(), 13);
        assert_eq!(ball_lattice(0, 1.0, 0.1).len(), 1);
    }
}
