//! One-dimensional quantile functions built from atoms and uniform cells.

use alloc::vec::Vec;

/// A piece of a quantile function: `mass` worth of `q` on which `X(q)` runs linearly from
/// `x0` to `x1` (`x0 == x1` for an atom).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantilePiece {
    pub mass: f64,
    pub x0: f64,
    pub x1: f64,
}

/// Nondecreasing, piecewise-linear quantile function of a 1-D probability measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantile1d {
    pub pieces: Vec<QuantilePiece>,
}

impl Quantile1d {
    /// Atoms in any order; zero weights are dropped.
    pub fn from_atoms(xs: &[f64], ws: &[f64]) -> Self {
        let mut idx: Vec<usize> = (0..xs.len()).filter(|&i| ws[i] > 0.0).collect();
        idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
        Quantile1d {
            pieces: idx
                .into_iter()
                .map(|i| QuantilePiece {
                    mass: ws[i],
                    x0: xs[i],
                    x1: xs[i],
                })
                .collect(),
        }
    }

    /// Uniform density on each cell `[lo + k h, lo + (k+1) h]` with mass `masses[k]`.
    pub fn from_cells(lo: f64, h: f64, masses: &[f64]) -> Self {
        let mut pieces = Vec::with_capacity(masses.len());
        for (k, &m) in masses.iter().enumerate() {
            if m > 0.0 {
                pieces.push(QuantilePiece {
                    mass: m,
                    x0: lo + h * k as f64,
                    x1: lo + h * (k + 1) as f64,
                });
            }
        }
        Quantile1d { pieces }
    }

    pub fn total_mass(&self) -> f64 {
        self.pieces.iter().map(|p| p.mass).sum()
    }

    /// Walks the common refinement of several quantile functions (all normalized to the
    /// same total mass), calling `f(len, starts, ends)` with the value of each function at
    /// both ends of every refined piece.
    pub fn refine<const K: usize>(
        qs: [&Quantile1d; K],
        mut f: impl FnMut(f64, [f64; K], [f64; K]),
    ) {
        let mut idx = [0usize; K];
        // mass consumed inside the current piece of each function
        let mut used = [0.0f64; K];
        loop {
            let mut done = false;
            for k in 0..K {
                if idx[k] >= qs[k].pieces.len() {
                    done = true;
                }
            }
            if done {
                break;
            }
            let mut len = f64::INFINITY;
            for k in 0..K {
                let p = &qs[k].pieces[idx[k]];
                len = len.min(p.mass - used[k]);
            }
            let len = len.max(0.0);
            let mut a = [0.0; K];
            let mut b = [0.0; K];
            for k in 0..K {
                let p = &qs[k].pieces[idx[k]];
                let s0 = used[k] / p.mass;
                let s1 = ((used[k] + len) / p.mass).min(1.0);
                a[k] = p.x0 + (p.x1 - p.x0) * s0;
                b[k] = p.x0 + (p.x1 - p.x0) * s1;
            }
            if len > 0.0 {
                f(len, a, b);
            }
            // advance every function whose piece is exhausted (relative slack for rounding)
            let mut advanced = false;
            for k in 0..K {
                let p = &qs[k].pieces[idx[k]];
                used[k] += len;
                if used[k] >= p.mass * (1.0 - 1e-14) {
                    idx[k] += 1;
                    used[k] = 0.0;
                    advanced = true;
                }
            }
            if !advanced {
                // guard against stalling on rounding: advance the closest-to-exhausted piece
                let mut kbest = 0;
                let mut rem = f64::INFINITY;
                for k in 0..K {
                    let r = qs[k].pieces[idx[k]].mass - used[k];
                    if r < rem {
                        rem = r;
                        kbest = k;
                    }
                }
                idx[kbest] += 1;
                used[kbest] = 0.0;
            }
        }
    }

    /// `∫₀¹ |X_a(q) - X_b(q)|² dq`.
    pub fn w2_squared(a: &Quantile1d, b: &Quantile1d) -> f64 {
        let mut s = 0.0;
        let mut c = 0.0;
        Self::refine([a, b], |len, x0, x1| {
            let d0 = x0[0] - x0[1];
            let d1 = x1[0] - x1[1];
            let term = len * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0;
            let y = term - c;
            let t = s + y;
            c = (t - s) - y;
            s = t;
        });
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shifted_cells() {
        let a = Quantile1d::from_cells(0.0, 0.1, &[0.1; 10]);
        let b = Quantile1d::from_cells(0.25, 0.1, &[0.1; 10]);
        assert!((Quantile1d::w2_squared(&a, &b) - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn uniform_against_its_center() {
        // ∫₀¹ (q - ½)² dq = 1/12
        let a = Quantile1d::from_cells(0.0, 1.0, &[1.0]);
        let b = Quantile1d::from_atoms(&[0.5], &[1.0]);
        assert!((Quantile1d::w2_squared(&a, &b) - 1.0 / 12.0).abs() < 1e-15);
    }
}
