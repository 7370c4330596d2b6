//! Tensor quadrature over axis-aligned boxes.
//!
//! The reference rule for all reported numbers is the tensor midpoint
//! rule with `2^r` nodes per axis; Gauss–Legendre is available where a
//! smooth integrand justifies it. Midpoint nodes never coincide with
//! cell corners, so weights with a point singularity at the origin are
//! only ever sampled away from it; should a node still land exactly on
//! the origin (possible for dilated, non-dyadic boxes) it is nudged by a
//! quarter sub-cell.

use crate::lattice::AxisBox;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuadRule {
    Midpoint,
    GaussLegendre,
}

/// Quadrature resolution: `2^r` nodes per axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub r: u32,
    pub rule: QuadRule,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            r: 5,
            rule: QuadRule::Midpoint,
        }
    }
}

impl QuadratureSpec {
    pub fn midpoint(r: u32) -> Self {
        QuadratureSpec {
            r,
            rule: QuadRule::Midpoint,
        }
    }

    pub fn nodes_per_axis(&self) -> usize {
        1usize << self.r
    }

    /// 1-D nodes and weights on `[lo, hi)`.
    pub fn axis_nodes(&self, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.nodes_per_axis();
        let h = (hi - lo) / n as f64;
        match self.rule {
            QuadRule::Midpoint => {
                let mut xs = Vec::with_capacity(n);
                for i in 0..n {
                    let mut x = lo + (i as f64 + 0.5) * h;
                    if x == 0.0 {
                        x += 0.25 * h;
                    }
                    xs.push(x);
                }
                (xs, vec![h; n])
            }
            QuadRule::GaussLegendre => {
                // composite 2-point Gauss–Legendre on n/2 sub-cells
                let cells = (n / 2).max(1);
                let ch = (hi - lo) / cells as f64;
                let off = ch * 0.5 / 3.0f64.sqrt();
                let mut xs = Vec::with_capacity(2 * cells);
                let mut ws = Vec::with_capacity(2 * cells);
                for c in 0..cells {
                    let mid = lo + (c as f64 + 0.5) * ch;
                    for x in [mid - off, mid + off] {
                        let x = if x == 0.0 { x + 0.25 * ch } else { x };
                        xs.push(x);
                        ws.push(ch * 0.5);
                    }
                }
                (xs, ws)
            }
        }
    }

    /// Tensor nodes and weights over a box; weights sum to the volume.
    pub fn tensor_nodes(&self, b: &AxisBox) -> Vec<(Vec<f64>, f64)> {
        let n = b.dim();
        let per_axis: Vec<(Vec<f64>, Vec<f64>)> = (0..n)
            .map(|d| self.axis_nodes(b.lo[d], b.hi[d]))
            .collect();
        let counts: Vec<usize> = per_axis.iter().map(|(xs, _)| xs.len()).collect();
        let total: usize = counts.iter().product();
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; n];
        loop {
            let mut x = Vec::with_capacity(n);
            let mut w = 1.0;
            for d in 0..n {
                x.push(per_axis[d].0[idx[d]]);
                w *= per_axis[d].1[idx[d]];
            }
            out.push((x, w));
            let mut d = 0;
            loop {
                if d == n {
                    return out;
                }
                idx[d] += 1;
                if idx[d] < counts[d] {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }
    }

    /// `∫_b f` by the tensor rule.
    pub fn integrate(&self, b: &AxisBox, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.tensor_nodes(b)
            .iter()
            .map(|(x, w)| w * f(x))
            .sum()
    }

    /// Cube average `⨍_b f`.
    pub fn average(&self, b: &AxisBox, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.integrate(b, f) / b.volume()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box(n: usize) -> AxisBox {
        AxisBox {
            lo: vec![0.0; n],
            hi: vec![1.0; n],
        }
    }

    #[test]
    fn weights_sum_to_volume() {
        let spec = QuadratureSpec::default();
        let b = AxisBox {
            lo: vec![-1.0, 2.0],
            hi: vec![3.0, 2.5],
        };
        let total: f64 = spec.tensor_nodes(&b).iter().map(|(_, w)| w).sum();
        assert!((total - b.volume()).abs() < 1e-12);
    }

    #[test]
    fn midpoint_exact_on_linear() {
        let spec = QuadratureSpec::midpoint(4);
        let v = spec.integrate(&unit_box(1), |x| 3.0 * x[0] + 1.0);
        assert!((v - 2.5).abs() < 1e-13);
    }

    #[test]
    fn gauss_exact_on_cubic() {
        let spec = QuadratureSpec {
            r: 3,
            rule: QuadRule::GaussLegendre,
        };
        let v = spec.integrate(&unit_box(1), |x| x[0] * x[0] * x[0]);
        assert!((v - 0.25).abs() < 1e-13);
    }

    #[test]
    fn origin_node_nudged() {
        // box symmetric about 0 with an odd node count landing on 0
        let spec = QuadratureSpec::midpoint(1); // nodes at lo + {0.25, 0.75}·(hi-lo)
        let b = AxisBox {
            lo: vec![-0.5],
            hi: vec![0.5],
        };
        // nodes at -0.25, 0.25: no zero; force one by a degenerate box
        let spec0 = QuadratureSpec::midpoint(0); // single node at the center
        let nodes = spec0.tensor_nodes(&b);
        assert!(nodes.iter().all(|(x, _)| x[0] != 0.0));
        let _ = spec; // midpoint(1) case above documents the usual geometry
    }
}
