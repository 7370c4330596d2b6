//! Dyadic-cube arithmetic in arbitrary dimension.
//!
//! A dyadic cube is the half-open box `Q_{j,k} = 2^{-j}([0,1)^n + k)`.
//! Containment and the product/slice geometry are computed in exact
//! integer arithmetic on `(j, k)`; only distances and volumes go through
//! floating point.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

/// A dyadic cube `Q_{j,k}` in dimension `n = k.len()`.
///
/// `j` is the scale (`ℓ(Q) = 2^{-j}`), `k` the integer position of the
/// lower-left corner in units of `ℓ(Q)`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicCube {
    pub j: i32,
    pub k: Vec<i64>,
}

impl fmt::Display for DyadicCube {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Q_{{{},{:?}}}", self.j, self.k)
    }
}

impl DyadicCube {
    pub fn new(j: i32, k: Vec<i64>) -> Self {
        DyadicCube { j, k }
    }

    pub fn dim(&self) -> usize {
        self.k.len()
    }

    /// Edge length `ℓ(Q) = 2^{-j}`.
    pub fn edge(&self) -> f64 {
        scale_len(self.j)
    }

    /// Volume `|Q| = 2^{-jn}`.
    pub fn volume(&self) -> f64 {
        (-(self.j as f64) * self.dim() as f64).exp2()
    }

    /// Lower-left corner `x_Q = 2^{-j} k`.
    pub fn corner(&self) -> Vec<f64> {
        let l = self.edge();
        self.k.iter().map(|&ki| ki as f64 * l).collect()
    }

    /// Center `c_Q = 2^{-j}(k + 1/2)`.
    pub fn center(&self) -> Vec<f64> {
        let l = self.edge();
        self.k.iter().map(|&ki| (ki as f64 + 0.5) * l).collect()
    }

    /// The half-open box `[x_Q, x_Q + ℓ)^n` occupied by the cube.
    pub fn as_box(&self) -> AxisBox {
        let l = self.edge();
        let lo = self.corner();
        let hi = lo.iter().map(|&a| a + l).collect();
        AxisBox { lo, hi }
    }

    /// The dilate `rQ`: the axis box with the same center and edge `r·ℓ(Q)`.
    /// Not dyadic in general.
    pub fn dilate(&self, r: f64) -> AxisBox {
        let c = self.center();
        let half = 0.5 * r * self.edge();
        AxisBox {
            lo: c.iter().map(|&x| x - half).collect(),
            hi: c.iter().map(|&x| x + half).collect(),
        }
    }

    /// Unique ancestor at scale `j_up <= self.j` (exact integer floor
    /// division by the scale gap).
    pub fn ancestor(&self, j_up: i32) -> DyadicCube {
        assert!(j_up <= self.j, "ancestor must be at a coarser scale");
        let shift = (self.j - j_up) as u32;
        DyadicCube {
            j: j_up,
            k: self.k.iter().map(|&ki| ki >> shift).collect(),
        }
    }

    /// All `2^n` children one scale finer.
    pub fn children(&self) -> Vec<DyadicCube> {
        let n = self.dim();
        let mut out = Vec::with_capacity(1 << n);
        for mask in 0u64..(1 << n) {
            let k = self
                .k
                .iter()
                .enumerate()
                .map(|(d, &ki)| 2 * ki + ((mask >> d) & 1) as i64)
                .collect();
            out.push(DyadicCube { j: self.j + 1, k });
        }
        out
    }

    /// Does the point lie in the half-open cube?
    pub fn contains_point(&self, x: &[f64]) -> bool {
        let l = self.edge();
        self.k
            .iter()
            .zip(x)
            .all(|(&ki, &xi)| xi >= ki as f64 * l && xi < (ki + 1) as f64 * l)
    }
}

pub fn scale_len(j: i32) -> f64 {
    (-j as f64).exp2()
}

/// `1 + |x_Q − x_R| / (ℓ(Q) ∨ ℓ(R))`, the distance factor of almost-diagonal
/// envelopes and growth bounds. Symmetric; `>= 1`.
pub fn scaled_distance(q: &DyadicCube, r: &DyadicCube) -> Result<f64> {
    if q.dim() != r.dim() {
        return Err(Error::DimensionMismatch(format!(
            "scaled_distance: {} vs {} coordinates",
            q.dim(),
            r.dim()
        )));
    }
    let xq = q.corner();
    let xr = r.corner();
    let d2: f64 = xq.iter().zip(&xr).map(|(a, b)| (a - b) * (a - b)).sum();
    let lmax = q.edge().max(r.edge());
    Ok(1.0 + d2.sqrt() / lmax)
}

/// `R ⊆ Q` as half-open boxes, exact integer test.
pub fn contains(q: &DyadicCube, r: &DyadicCube) -> Result<bool> {
    if q.dim() != r.dim() {
        return Err(Error::DimensionMismatch(format!(
            "contains: {} vs {} coordinates",
            q.dim(),
            r.dim()
        )));
    }
    if r.j < q.j {
        return Ok(false);
    }
    Ok(r.ancestor(q.j).k == q.k)
}

/// `P(Q', i) = Q' × [i·ℓ(Q'), (i+1)·ℓ(Q'))`, a dyadic cube one dimension up.
pub fn lift(q: &DyadicCube, i: i64) -> DyadicCube {
    let mut k = q.k.clone();
    k.push(i);
    DyadicCube { j: q.j, k }
}

/// Drop the last coordinate: `I(P)`.
pub fn project(p: &DyadicCube) -> Result<DyadicCube> {
    if p.dim() < 2 {
        return Err(Error::DimensionMismatch(
            "project requires ambient dimension >= 2".into(),
        ));
    }
    let mut k = p.k.clone();
    k.pop();
    Ok(DyadicCube { j: p.j, k })
}

/// A dyadic `(n+1)`-cube containing `P(S, i)` for every dyadic `S ⊆ R`.
///
/// The union of those bands is covered by the slab
/// `R × [min(i,0)·ℓ(R), max(i+1,0)·ℓ(R))`; starting from the scale of `R`
/// we coarsen one scale at a time until a single dyadic cube covers the
/// slab. Termination: once the edge reaches `2^a ℓ(R)` with
/// `2^a ≥ |i| + 1`, the last-coordinate interval `[0, 2^a ℓ(R))`
/// (or `[-2^a ℓ(R), 0)` for negative `i`) is itself dyadic and covers the
/// slab, so at most `⌈log2(|i| + 2)⌉ + 1` coarsenings happen.
pub fn shadow_cube(r: &DyadicCube, i: i64) -> DyadicCube {
    // Slab in integer units of ℓ(R): last coordinate in [lo, hi).
    let lo = i.min(0);
    let hi = (i + 1).max(0);
    let mut a: u32 = 0;
    loop {
        // Candidate scale j = r.j - a, edge 2^a units.
        let lo_c = lo >> a; // floor(lo / 2^a)
        let hi_minus = (hi - 1) >> a;
        if lo_c == hi_minus {
            // Slab's last coordinate fits in one dyadic interval.
            let anc = r.ancestor(r.j - a as i32);
            return lift(&anc, lo_c);
        }
        a += 1;
        debug_assert!(a < 64, "shadow_cube failed to terminate");
    }
}

/// Windowed variant: errors if the covering cube leaves the window box.
pub fn shadow_cube_in(r: &DyadicCube, i: i64, window: &LatticeWindow) -> Result<DyadicCube> {
    let q = shadow_cube(r, i);
    if !window.contains_cube(&q) {
        return Err(Error::OutsideWindow(q.to_string()));
    }
    Ok(q)
}

/// The middle third band `E_{P(Q',i)} = Q' × [ℓ(i+1/3), ℓ(i+2/3))`.
pub fn middle_band(q: &DyadicCube, i: i64) -> AxisBox {
    let l = q.edge();
    let mut b = q.as_box();
    b.lo.push((i as f64 + 1.0 / 3.0) * l);
    b.hi.push((i as f64 + 2.0 / 3.0) * l);
    b
}

/// An axis-aligned half-open box `[lo, hi)`, used for dilated cubes,
/// middle bands, and `E_Q` sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AxisBox {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| b - a)
            .product()
    }

    pub fn contains_point(&self, x: &[f64]) -> bool {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(x)
            .all(|((a, b), xi)| xi >= a && xi < b)
    }

    pub fn intersects(&self, other: &AxisBox) -> bool {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(other.lo.iter().zip(&other.hi))
            .all(|((a, b), (c, d))| a < d && c < b)
    }

    pub fn contains_box(&self, other: &AxisBox) -> bool {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(other.lo.iter().zip(&other.hi))
            .all(|((a, b), (c, d))| a <= c && d <= b)
    }
}

/// Finite truncation of the dyadic lattice.
///
/// Scales run over `j ∈ [j_min, j_max]`; at scale `j` positions run over
/// `k ∈ [-B, B)^n` with `B = 2^{max(j + extent_log2, 0)}`, so every
/// enumerated cube lies in the fixed spatial box `[-2^e, 2^e)^n`
/// (coarse scales keep the two cubes astride the origin).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeWindow {
    pub j_min: i32,
    pub j_max: i32,
    pub extent_log2: i32,
}

impl Default for LatticeWindow {
    fn default() -> Self {
        LatticeWindow {
            j_min: -3,
            j_max: 6,
            extent_log2: 3,
        }
    }
}

impl LatticeWindow {
    pub fn new(j_min: i32, j_max: i32, extent_log2: i32) -> Result<Self> {
        if j_min > j_max {
            return Err(Error::InvalidParameter(format!(
                "window j_min {} > j_max {}",
                j_min, j_max
            )));
        }
        Ok(LatticeWindow {
            j_min,
            j_max,
            extent_log2,
        })
    }

    /// Position bound at scale `j`: `k ∈ [-B, B)`.
    pub fn k_bound(&self, j: i32) -> i64 {
        let e = j + self.extent_log2;
        if e <= 0 {
            1
        } else {
            1i64 << e
        }
    }

    /// One scale finer (used by refinement-drift experiments).
    pub fn refined(&self) -> LatticeWindow {
        LatticeWindow {
            j_min: self.j_min,
            j_max: self.j_max + 1,
            extent_log2: self.extent_log2,
        }
    }

    pub fn contains_cube(&self, q: &DyadicCube) -> bool {
        if q.j < self.j_min || q.j > self.j_max {
            return false;
        }
        let b = self.k_bound(q.j);
        q.k.iter().all(|&ki| ki >= -b && ki < b)
    }

    /// The spatial extent `[-2^e, 2^e)^n`.
    pub fn extent(&self, n: usize) -> AxisBox {
        let half = (self.extent_log2 as f64).exp2();
        AxisBox {
            lo: vec![-half; n],
            hi: vec![half; n],
        }
    }

    /// All cubes at scale `j`.
    pub fn cubes_at_scale(&self, j: i32, n: usize) -> Vec<DyadicCube> {
        let b = self.k_bound(j);
        let side = (2 * b) as usize;
        let total = side.pow(n as u32);
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; n];
        loop {
            let k: Vec<i64> = idx.iter().map(|&t| t as i64 - b).collect();
            out.push(DyadicCube { j, k });
            let mut d = 0;
            loop {
                if d == n {
                    return out;
                }
                idx[d] += 1;
                if idx[d] < side {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }
    }

    /// All cubes of the window, coarse scales first.
    pub fn cubes(&self, n: usize) -> Vec<DyadicCube> {
        let mut out = Vec::new();
        for j in self.j_min..=self.j_max {
            out.extend(self.cubes_at_scale(j, n));
        }
        out
    }

    pub fn scales(&self) -> impl Iterator<Item = i32> {
        self.j_min..=self.j_max
    }
}
