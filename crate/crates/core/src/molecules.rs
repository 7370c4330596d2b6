//! Molecule and atom condition checking, and smooth atom construction.
//!
//! A `(K, L, M, N)`-molecule near `Q` obeys a size bound with decay `K`,
//! vanishing moments through order `L`, derivative bounds with decay `M`
//! below order `N`, and a Hölder-type condition at the top order. The
//! checks here sample those conditions on a grid around the cube and
//! report worst-case ratios; they are evidence, not proof.

use crate::almostdiag::Thresholds;
use crate::error::{Error, Result};
use crate::exec;
use crate::lattice::DyadicCube;
use crate::linalg::C64;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// The four integer bracket functions and the fractional part
/// `r** = r − ⌊⌊r⌋⌋ ∈ (0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BracketFns {
    /// `⌈⌈r⌉⌉ = min{k ∈ Z : k > r}`
    pub ceil_strict: i64,
    /// `⌈r⌉`
    pub ceil: i64,
    /// `⌊⌊r⌋⌋ = max{k ∈ Z : k < r}`
    pub floor_strict: i64,
    /// `⌊r⌋`
    pub floor: i64,
    /// `r**`
    pub frac_star: f64,
}

pub fn bracket_fns(r: f64) -> BracketFns {
    let floor = r.floor() as i64;
    let ceil = r.ceil() as i64;
    let ceil_strict = floor + 1;
    let floor_strict = ceil - 1;
    BracketFns {
        ceil_strict,
        ceil,
        floor_strict,
        floor,
        frac_star: r - floor_strict as f64,
    }
}

/// A pointwise-evaluable function with optional closed-form derivatives
/// and a finite-difference fallback.
#[derive(Clone)]
pub struct SmoothFunctionHandle {
    pub n: usize,
    eval: Arc<dyn Fn(&[f64]) -> C64 + Send + Sync>,
    /// closed-form `∂^γ`; `None` when the order is not provided
    deriv: Option<Arc<dyn Fn(&[u32], &[f64]) -> Option<C64> + Send + Sync>>,
    pub fd_step: f64,
}

impl SmoothFunctionHandle {
    pub fn from_fn(n: usize, fd_step: f64, f: impl Fn(&[f64]) -> C64 + Send + Sync + 'static) -> Self {
        SmoothFunctionHandle {
            n,
            eval: Arc::new(f),
            deriv: None,
            fd_step,
        }
    }

    pub fn with_derivatives(
        mut self,
        d: impl Fn(&[u32], &[f64]) -> Option<C64> + Send + Sync + 'static,
    ) -> Self {
        self.deriv = Some(Arc::new(d));
        self
    }

    pub fn value(&self, x: &[f64]) -> C64 {
        (self.eval)(x)
    }

    pub fn derivative(&self, gamma: &[u32], x: &[f64]) -> C64 {
        if gamma.iter().all(|&g| g == 0) {
            return self.value(x);
        }
        if let Some(d) = &self.deriv {
            if let Some(v) = d(gamma, x) {
                return v;
            }
        }
        self.fd_derivative(gamma, x, self.fd_step)
    }

    /// Recursive central differences with one Richardson extrapolation
    /// at the outermost order.
    fn fd_derivative(&self, gamma: &[u32], x: &[f64], h: f64) -> C64 {
        let Some(axis) = gamma.iter().position(|&g| g > 0) else {
            return self.value(x);
        };
        let mut lower = gamma.to_vec();
        lower[axis] -= 1;
        let central = |step: f64| -> C64 {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[axis] += step;
            xm[axis] -= step;
            (self.fd_lower(&lower, &xp, step) - self.fd_lower(&lower, &xm, step)) / (2.0 * step)
        };
        let d1 = central(h);
        let d2 = central(h * 0.5);
        (d2 * 4.0 - d1) / 3.0
    }

    fn fd_lower(&self, gamma: &[u32], x: &[f64], h: f64) -> C64 {
        if gamma.iter().all(|&g| g == 0) {
            return self.value(x);
        }
        if let Some(d) = &self.deriv {
            if let Some(v) = d(gamma, x) {
                return v;
            }
        }
        let axis = gamma.iter().position(|&g| g > 0).unwrap();
        let mut lower = gamma.to_vec();
        lower[axis] -= 1;
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[axis] += h;
        xm[axis] -= h;
        (self.fd_lower(&lower, &xp, h) - self.fd_lower(&lower, &xm, h)) / (2.0 * h)
    }
}

/// Molecule orders `(K, L, M, N)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoleculeParams {
    /// size decay `K ∈ [0, ∞)`
    pub decay: f64,
    /// vanishing moments through `L` (negative disables the check)
    pub moments: f64,
    /// derivative decay `M ∈ [0, ∞)`
    pub deriv_decay: f64,
    /// smoothness order `N`
    pub smoothness: f64,
}

/// Sampling grid for molecule checks: a tensor grid of
/// `points_per_axis` points covering `radius` cube lengths around the
/// cube center.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MoleculeGrid {
    pub radius: f64,
    pub points_per_axis: usize,
}

impl Default for MoleculeGrid {
    fn default() -> Self {
        MoleculeGrid {
            radius: 6.0,
            points_per_axis: 96,
        }
    }
}

/// Worst-case ratios per molecule condition; `1.0`-normalized (a true
/// molecule has every ratio at most one).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MoleculeReport {
    pub size_ratio: f64,
    pub size_worst_point: Vec<f64>,
    /// `max_γ |∫ g x^γ| / (∫|g| sup|x^γ|)`, `None` when `L < 0`
    pub moment_ratio: Option<f64>,
    pub deriv_ratio: f64,
    pub deriv_worst_point: Vec<f64>,
    pub holder_ratio: f64,
    pub holder_worst_point: Vec<f64>,
    pub grid: MoleculeGrid,
    /// tolerance slack used by `pass`
    pub ratio_tol: f64,
    pub moment_tol: f64,
    pub pass: bool,
}

impl MoleculeReport {
    /// Largest condition ratio: the fitted constant making the function
    /// a `C`-multiple of a molecule.
    pub fn fitted_constant(&self) -> f64 {
        self.size_ratio.max(self.deriv_ratio).max(self.holder_ratio)
    }

    pub fn passes_with_constant(&self, c: f64) -> bool {
        let lim = c * (1.0 + self.ratio_tol);
        self.size_ratio <= lim
            && self.deriv_ratio <= lim
            && self.holder_ratio <= lim
            && self.moment_ratio.map_or(true, |m| m <= self.moment_tol)
    }
}

/// `(u_K)_Q(x) = 2^{jn/2}(1 + |2^j x − k|)^{-K}`.
pub fn envelope(q: &DyadicCube, decay: f64, x: &[f64]) -> f64 {
    let n = q.dim() as f64;
    let two_j = (q.j as f64).exp2();
    let d2: f64 = x
        .iter()
        .zip(&q.k)
        .map(|(&xd, &kd)| {
            let t = two_j * xd - kd as f64;
            t * t
        })
        .sum();
    (q.j as f64 * n / 2.0).exp2() * (1.0 + d2.sqrt()).powf(-decay)
}

fn tensor_grid(q: &DyadicCube, grid: &MoleculeGrid) -> Vec<Vec<f64>> {
    let n = q.dim();
    let c = q.center();
    let half = grid.radius * q.edge();
    let pts = grid.points_per_axis;
    let mut axes = Vec::with_capacity(n);
    for d in 0..n {
        let mut v = Vec::with_capacity(pts);
        for i in 0..pts {
            v.push(c[d] - half + (i as f64 + 0.5) * (2.0 * half / pts as f64));
        }
        axes.push(v);
    }
    let mut out = Vec::new();
    let mut idx = vec![0usize; n];
    loop {
        out.push(idx.iter().enumerate().map(|(d, &i)| axes[d][i]).collect());
        let mut d = 0;
        loop {
            if d == n {
                return out;
            }
            idx[d] += 1;
            if idx[d] < pts {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

fn multi_indices(n: usize, total: u32) -> Vec<Vec<u32>> {
    if n == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for rest in multi_indices(n - 1, total - first) {
            let mut v = vec![first];
            v.extend(rest);
            out.push(v);
        }
    }
    out
}

/// Checks the four molecule conditions on a grid around `Q`.
///
/// Moments (`L ≥ 0`) are quadrature sums over the grid box; the inner
/// supremum of the Hölder condition is discretized on eight radial
/// probes with a 5% ratio slack.
pub fn molecule_check(
    g: &SmoothFunctionHandle,
    q: &DyadicCube,
    params: &MoleculeParams,
    grid: &MoleculeGrid,
) -> Result<MoleculeReport> {
    if grid.points_per_axis < 8 {
        return Err(Error::Molecule("grid too coarse (need ≥ 8 points/axis)".into()));
    }
    let n = q.dim();
    let pts = tensor_grid(q, grid);
    let cell = (2.0 * grid.radius * q.edge() / grid.points_per_axis as f64).powi(n as i32);
    let l = q.edge();

    // (i) size
    let size = exec::map_collect(&pts, |x| {
        let v = g.value(x).norm();
        v / envelope(q, params.decay, x)
    });
    let (size_ratio, size_idx) = argmax(&size);

    // (ii) moments via grid quadrature
    let moment_ratio = if params.moments >= 0.0 {
        let mut worst = 0.0f64;
        let abs_mass: f64 = pts.iter().map(|x| g.value(x).norm()).sum::<f64>() * cell;
        for total in 0..=(params.moments.floor() as u32) {
            for gamma in multi_indices(n, total) {
                let mom: C64 = pts
                    .iter()
                    .map(|x| {
                        let mono: f64 = x
                            .iter()
                            .zip(&gamma)
                            .map(|(&xd, &gd)| xd.powi(gd as i32))
                            .product();
                        g.value(x) * mono * cell
                    })
                    .sum();
                let sup_mono: f64 = pts
                    .iter()
                    .map(|x| {
                        x.iter()
                            .zip(&gamma)
                            .map(|(&xd, &gd)| xd.powi(gd as i32))
                            .product::<f64>()
                            .abs()
                    })
                    .fold(0.0, f64::max);
                let scale = (abs_mass * sup_mono).max(f64::MIN_POSITIVE);
                worst = worst.max(mom.norm() / scale);
            }
        }
        Some(worst)
    } else {
        None
    };

    // (iii) derivative decay for |γ| < N
    let nb = bracket_fns(params.smoothness);
    let mut deriv_ratio = 0.0f64;
    let mut deriv_worst = vec![0.0; n];
    let max_below: i64 = if params.smoothness > 0.0 {
        // |γ| < N: strictly below
        (bracket_fns(params.smoothness).ceil_strict - 1).max(0)
    } else {
        -1
    };
    for total in 1..=max_below.max(0) {
        if total as f64 >= params.smoothness {
            break;
        }
        for gamma in multi_indices(n, total as u32) {
            let ratios = exec::map_collect(&pts, |x| {
                let v = g.derivative(&gamma, x).norm();
                v / (l.powi(-(total as i32)) * envelope(q, params.deriv_decay, x))
            });
            let (r, idx) = argmax(&ratios);
            if r > deriv_ratio {
                deriv_ratio = r;
                deriv_worst = pts[idx].clone();
            }
        }
    }

    // (iv) Hölder condition at |γ| = ⌊⌊N⌋⌋ with exponent N**; vacuous
    // when N ≤ 0 (the order would be negative)
    let mut holder_ratio = 0.0f64;
    let mut holder_worst = vec![0.0; n];
    let holder_orders: Vec<Vec<u32>> = if nb.floor_strict >= 0 {
        multi_indices(n, nb.floor_strict as u32)
    } else {
        Vec::new()
    };
    let top = nb.floor_strict.max(0);
    let nss = nb.frac_star;
    let steps: Vec<f64> = vec![0.35 * l, 1.1 * l, 3.2 * l];
    for gamma in holder_orders {
        let ratios = exec::map_collect(&pts, |x| {
            let mut worst = 0.0f64;
            for &st in &steps {
                for axis in 0..n {
                    let mut y = x.clone();
                    y[axis] += st;
                    let dv = (g.derivative(&gamma, x) - g.derivative(&gamma, &y)).norm();
                    let dist = st;
                    // sup over |z| ≤ |x−y| on 8 radial probes
                    let mut env_sup = envelope(q, params.deriv_decay, x);
                    for probe in 0..8 {
                        let frac = (probe / 2 + 1) as f64 / 4.0;
                        let sign = if probe % 2 == 0 { 1.0 } else { -1.0 };
                        let mut z = x.clone();
                        z[axis] += sign * frac * dist;
                        env_sup = env_sup.max(envelope(q, params.deriv_decay, &z));
                    }
                    let rhs =
                        l.powi(-(top as i32)) * (dist / l).powf(nss) * env_sup;
                    worst = worst.max(dv / rhs);
                }
            }
            worst
        });
        let (r, idx) = argmax(&ratios);
        if r > holder_ratio {
            holder_ratio = r;
            holder_worst = pts[idx].clone();
        }
    }

    let ratio_tol = 0.05;
    let moment_tol = 1e-6;
    let pass = size_ratio <= 1.0 + ratio_tol
        && deriv_ratio <= 1.0 + ratio_tol
        && holder_ratio <= 1.0 + ratio_tol
        && moment_ratio.map_or(true, |m| m <= moment_tol);
    Ok(MoleculeReport {
        size_ratio,
        size_worst_point: pts[size_idx].clone(),
        moment_ratio,
        deriv_ratio,
        deriv_worst_point: deriv_worst,
        holder_ratio,
        holder_worst_point: holder_worst,
        grid: *grid,
        ratio_tol,
        moment_tol,
        pass,
    })
}

fn argmax(vals: &[f64]) -> (f64, usize) {
    let mut best = f64::NEG_INFINITY;
    let mut idx = 0;
    for (i, &v) in vals.iter().enumerate() {
        if v > best {
            best = v;
            idx = i;
        }
    }
    (best, idx)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Analysis,
    Synthesis,
}

/// Open/closed parameter bounds for analysis or synthesis molecule
/// families: `K > decay_gt`, `L ≥ moments_ge`, `M > deriv_gt`,
/// `N > smooth_gt`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoleculeFamilyBounds {
    pub decay_gt: f64,
    pub moments_ge: f64,
    pub deriv_gt: f64,
    pub smooth_gt: f64,
}

impl MoleculeFamilyBounds {
    /// A parameter tuple strictly inside the bounds by `margin`
    /// (moments exactly at the closed bound).
    pub fn pick(&self, margin: f64) -> MoleculeParams {
        MoleculeParams {
            decay: self.decay_gt + margin,
            moments: self.moments_ge,
            deriv_decay: self.deriv_gt + margin,
            smoothness: self.smooth_gt + margin,
        }
    }
}

/// Molecule-family bounds from the boundedness thresholds; analysis and
/// synthesis swap the roles of `E*` and `F*`.
pub fn family_thresholds(th: &Thresholds, n: usize, kind: FamilyKind) -> MoleculeFamilyBounds {
    let half = n as f64 / 2.0;
    match kind {
        FamilyKind::Analysis => MoleculeFamilyBounds {
            decay_gt: th.d_star.max(th.e_star + half),
            moments_ge: th.e_star - half,
            deriv_gt: th.d_star,
            smooth_gt: th.f_star - half,
        },
        FamilyKind::Synthesis => MoleculeFamilyBounds {
            decay_gt: th.d_star.max(th.f_star + half),
            moments_ge: th.f_star - half,
            deriv_gt: th.d_star,
            smooth_gt: th.e_star - half,
        },
    }
}

// ---------------------------------------------------------------------
// Smooth atoms
// ---------------------------------------------------------------------

#[derive(Clone, Debug)]
struct Poly(Vec<f64>);

impl Poly {
    fn eval(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for &c in self.0.iter().rev() {
            acc = acc * u + c;
        }
        acc
    }

    fn derivative(&self) -> Poly {
        if self.0.len() <= 1 {
            return Poly(vec![0.0]);
        }
        Poly(
            self.0[1..]
                .iter()
                .enumerate()
                .map(|(i, &c)| c * (i + 1) as f64)
                .collect(),
        )
    }

    fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, &a) in self.0.iter().enumerate() {
            for (j, &b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly(out)
    }

    fn add(&self, other: &Poly) -> Poly {
        let mut out = vec![0.0; self.0.len().max(other.0.len())];
        for (i, &a) in self.0.iter().enumerate() {
            out[i] += a;
        }
        for (i, &b) in other.0.iter().enumerate() {
            out[i] += b;
        }
        Poly(out)
    }
}

#[derive(Clone, Debug)]
struct Rational {
    num: Poly,
    den: Poly,
}

impl Rational {
    fn from_poly(p: Poly) -> Self {
        Rational {
            num: p,
            den: Poly(vec![1.0]),
        }
    }

    fn eval(&self, u: f64) -> f64 {
        self.num.eval(u) / self.den.eval(u)
    }

    fn derivative(&self) -> Rational {
        Rational {
            num: self
                .num
                .derivative()
                .mul(&self.den)
                .add(&self.num.mul(&self.den.derivative()).neg()),
            den: self.den.mul(&self.den),
        }
    }

    fn mul(&self, other: &Rational) -> Rational {
        Rational {
            num: self.num.mul(&other.num),
            den: self.den.mul(&other.den),
        }
    }

    fn add(&self, other: &Rational) -> Rational {
        Rational {
            num: self
                .num
                .mul(&other.den)
                .add(&other.num.mul(&self.den)),
            den: self.den.mul(&other.den),
        }
    }
}

impl Poly {
    fn neg(&self) -> Poly {
        Poly(self.0.iter().map(|c| -c).collect())
    }
}

/// `β(u) = exp(-1/(1-u²))` on `|u| < 1`.
fn beta(u: f64) -> f64 {
    let d = 1.0 - u * u;
    if d <= 1e-12 {
        0.0
    } else {
        (-1.0 / d).exp()
    }
}

/// One axis factor `β(u) q(u)` with precomputed rational derivative
/// cofactors: `(β S)' = β (R₁ S + S')`, `R₁ = -2u/(1-u²)²`.
#[derive(Clone, Debug)]
struct AtomFactor {
    /// index r holds S_r with ∂^r (β q) = β S_r
    cofactors: Vec<Rational>,
    /// sup |∂^r (β q)| on [-1, 1]
    sups: Vec<f64>,
}

const ATOM_MAX_ORDER: usize = 6;

impl AtomFactor {
    fn build(q: Poly) -> AtomFactor {
        let r1 = Rational {
            num: Poly(vec![0.0, -2.0]),
            den: Poly(vec![1.0, 0.0, -1.0]).mul(&Poly(vec![1.0, 0.0, -1.0])),
        };
        let mut cofactors = vec![Rational::from_poly(q)];
        for r in 0..ATOM_MAX_ORDER {
            let s = &cofactors[r];
            cofactors.push(s.derivative().add(&r1.mul(s)));
        }
        let sups = cofactors
            .iter()
            .map(|s| {
                let mut worst = 0.0f64;
                for i in 0..=4096 {
                    let u = -1.0 + 2.0 * i as f64 / 4096.0;
                    let v = beta(u) * s.eval(u);
                    if v.is_finite() {
                        worst = worst.max(v.abs());
                    }
                }
                worst
            })
            .collect();
        AtomFactor { cofactors, sups }
    }

    fn deriv(&self, order: usize, u: f64) -> f64 {
        let b = beta(u);
        if b == 0.0 {
            return 0.0;
        }
        b * self.cofactors[order].eval(u)
    }
}

/// Orthogonal polynomial of the given degree for the weight `β` on
/// `[-1, 1]` (monic, Gram–Schmidt on monomials with a fine quadrature).
fn orthogonal_poly(degree: usize) -> Result<Poly> {
    // moments ∫ β u^k du by midpoint with 2^13 cells
    let cells = 8192usize;
    let h = 2.0 / cells as f64;
    let max_pow = 2 * degree + 2;
    let mut moments = vec![0.0f64; max_pow + 1];
    for i in 0..cells {
        let u = -1.0 + (i as f64 + 0.5) * h;
        let b = beta(u);
        let mut up = 1.0;
        for mom in moments.iter_mut() {
            *mom += b * up * h;
            up *= u;
        }
    }
    let ip = |p: &Poly, q: &Poly| -> f64 {
        let prod = p.mul(q);
        prod.0
            .iter()
            .enumerate()
            .map(|(i, &c)| c * moments[i])
            .sum()
    };
    let mut basis: Vec<Poly> = Vec::new();
    for d in 0..=degree {
        let mut mono = vec![0.0; d + 1];
        mono[d] = 1.0;
        let mut p = Poly(mono);
        for b in &basis {
            let c = ip(&p, b) / ip(b, b);
            p = p.add(&b.mul(&Poly(vec![-c])));
        }
        let nrm = ip(&p, &p);
        if !(nrm > 1e-18) {
            return Err(Error::Degenerate(format!(
                "moment Gram ill-conditioned at degree {d}; use smaller L or larger N headroom"
            )));
        }
        basis.push(p);
    }
    Ok(basis.pop().expect("degree-many elements"))
}

/// A smooth `(L, N)`-atom on `Q`: a `C^∞` bump supported in `3Q`,
/// orthogonal to monomials through degree `L` in `L²(3Q)`, scaled so
/// that `|∂^γ a_Q| ≤ |Q|^{-1/2-|γ|/n}` for `|γ| ≤ N`. Derivatives are
/// closed-form (bump cofactors times polynomial factors).
pub fn make_atom(q: &DyadicCube, moments_l: f64, smooth_n: f64) -> Result<SmoothFunctionHandle> {
    let n = q.dim();
    let qpoly = if moments_l < 0.0 {
        Poly(vec![1.0])
    } else {
        let degree = moments_l.floor() as usize + 1;
        if degree + (smooth_n.ceil() as usize) > ATOM_MAX_ORDER {
            return Err(Error::InvalidParameter(format!(
                "atom orders L={moments_l}, N={smooth_n} exceed the supported derivative depth"
            )));
        }
        orthogonal_poly(degree)?
    };
    let factor = Arc::new(AtomFactor::build(qpoly));
    let max_order = smooth_n.ceil() as usize;
    if max_order >= factor.cofactors.len() {
        return Err(Error::InvalidParameter(
            "smoothness order beyond precomputed cofactors".into(),
        ));
    }
    // amplitude: A = ℓ^{-n/2} min_{|γ| ≤ N} 1.5^{|γ|} / Π sup|∂^{γ_d}(βq)|
    let l = q.edge();
    let mut best = f64::INFINITY;
    for total in 0..=max_order.min(smooth_n.floor() as usize) {
        for gamma in multi_indices(n, total as u32) {
            let sup: f64 = gamma.iter().map(|&g| factor.sups[g as usize]).product();
            if sup > 0.0 {
                best = best.min(1.5f64.powi(total as i32) / sup);
            }
        }
    }
    let amp = l.powf(-(n as f64) / 2.0) * best * 0.999;
    let center = q.center();
    let half = 1.5 * l;
    let c2 = center.clone();
    let f2 = factor.clone();
    let eval = move |x: &[f64]| -> C64 {
        let mut v = amp;
        for d in 0..n {
            let u = (x[d] - c2[d]) / half;
            v *= f2.deriv(0, u);
            if v == 0.0 {
                return C64::new(0.0, 0.0);
            }
        }
        C64::new(v, 0.0)
    };
    let c3 = center;
    let f3 = factor;
    let deriv = move |gamma: &[u32], x: &[f64]| -> Option<C64> {
        let top = gamma.iter().map(|&g| g as usize).max().unwrap_or(0);
        if top >= f3.cofactors.len() {
            return None;
        }
        let mut v = amp;
        for d in 0..n {
            let u = (x[d] - c3[d]) / half;
            v *= f3.deriv(gamma[d] as usize, u) / half.powi(gamma[d] as i32);
        }
        Some(C64::new(v, 0.0))
    };
    Ok(SmoothFunctionHandle::from_fn(n, l * 2.0f64.powi(-12), eval).with_derivatives(deriv))
}

/// Atom-condition check corresponding to the three defining properties:
/// support in `3Q`, vanishing moments through `L`, and scaled derivative
/// bounds through `N`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AtomReport {
    pub support_ok: bool,
    pub worst_moment: f64,
    pub deriv_ratio: f64,
    pub pass: bool,
}

pub fn atom_check(
    a: &SmoothFunctionHandle,
    q: &DyadicCube,
    moments_l: f64,
    smooth_n: f64,
    points_per_axis: usize,
) -> Result<AtomReport> {
    let n = q.dim();
    let grid = MoleculeGrid {
        radius: 2.5,
        points_per_axis,
    };
    let pts = tensor_grid(q, &grid);
    let cell = (2.0 * grid.radius * q.edge() / points_per_axis as f64).powi(n as i32);
    let three_q = q.dilate(3.0);
    let mut support_ok = true;
    for x in &pts {
        if a.value(x).norm() > 0.0 && !three_q.contains_point(x) {
            // half-open vs closed support: allow the boundary itself
            let on_boundary = x
                .iter()
                .zip(three_q.lo.iter().zip(&three_q.hi))
                .all(|(&xd, (&lo, &hi))| xd >= lo - 1e-12 && xd <= hi + 1e-12);
            if !on_boundary {
                support_ok = false;
            }
        }
    }
    let mut worst_moment = 0.0f64;
    if moments_l >= 0.0 {
        for total in 0..=(moments_l.floor() as u32) {
            for gamma in multi_indices(n, total) {
                let mom: C64 = pts
                    .iter()
                    .map(|x| {
                        let mono: f64 = x
                            .iter()
                            .zip(&gamma)
                            .map(|(&xd, &gd)| xd.powi(gd as i32))
                            .product();
                        a.value(x) * mono * cell
                    })
                    .sum();
                worst_moment = worst_moment.max(mom.norm());
            }
        }
    }
    let mut deriv_ratio = 0.0f64;
    for total in 0..=(smooth_n.floor() as u32) {
        for gamma in multi_indices(n, total) {
            let bound = q.volume().powf(-0.5 - total as f64 / n as f64);
            for x in pts.iter().step_by(3) {
                let v = a.derivative(&gamma, x).norm();
                deriv_ratio = deriv_ratio.max(v / bound);
            }
        }
    }
    let pass = support_ok && worst_moment <= 1e-7 && deriv_ratio <= 1.0 + 1e-9;
    Ok(AtomReport {
        support_ok,
        worst_moment,
        deriv_ratio,
        pass,
    })
}

/// Atom decomposition harness for a sampled 1-D function `ψ_R`: builds
/// the distance weights `w_P = sd(R, P)^{-M}` at the scale of `R`, the
/// partition pieces `t_P = η_P ψ_R / w_P`, and reports the fitted
/// constant and the sup residual of `ψ_R − C Σ w_P t_P` on the grid.
/// The residual measures partition coverage and shrinks as the window
/// of `P` grows.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PsiAtomDecomposition {
    pub weights: Vec<(DyadicCube, f64)>,
    pub fitted_c: f64,
    pub residual_sup: f64,
}

pub fn psi_atom_decomposition(
    psi_r: &crate::wavelets::SampledFunction,
    r: &DyadicCube,
    decay_m: f64,
    p_cubes: &[DyadicCube],
) -> Result<PsiAtomDecomposition> {
    if psi_r.n != 1 || r.dim() != 1 {
        return Err(Error::InvalidParameter(
            "decomposition harness is one-dimensional".into(),
        ));
    }
    let l = r.edge();
    let mut weights = Vec::new();
    for p in p_cubes {
        if p.j != r.j {
            continue;
        }
        let w = crate::lattice::scaled_distance(r, p)?.powf(-decay_m);
        weights.push((p.clone(), w));
    }
    if weights.is_empty() {
        return Err(Error::Degenerate("no scale-matched cubes in the window".into()));
    }
    // partition of unity from bumps on 3P over the P-grid
    let bump_at = |p: &DyadicCube, x: f64| -> f64 {
        let c = p.center()[0];
        beta((x - c) / (1.5 * l))
    };
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    let mut residual = 0.0f64;
    for flat in 0..psi_r.len_cells() {
        let x = psi_r.point(flat)[0];
        let fv = psi_r.component(flat, 0).re;
        let cover: f64 = weights.iter().map(|(p, _)| bump_at(p, x)).sum();
        // Σ_P w_P t_P = ψ_R(x) · Σ η_P = ψ_R(x) when the cover is complete
        let gv = if cover > 0.0 {
            let total: f64 = weights
                .iter()
                .map(|(p, _)| bump_at(p, x) / cover)
                .sum::<f64>();
            fv * total
        } else {
            0.0
        };
        num += fv * gv;
        den += gv * gv;
        residual = residual.max((fv - gv).abs());
    }
    let fitted_c = if den > 0.0 { num / den } else { 0.0 };
    // residual against the fitted multiple
    let mut res = 0.0f64;
    for flat in 0..psi_r.len_cells() {
        let x = psi_r.point(flat)[0];
        let fv = psi_r.component(flat, 0).re;
        let cover: f64 = weights.iter().map(|(p, _)| bump_at(p, x)).sum();
        let gv = if cover > 0.0 { fv } else { 0.0 };
        res = res.max((fv - fitted_c * gv).abs());
    }
    Ok(PsiAtomDecomposition {
        weights,
        fitted_c,
        residual_sup: res,
    })
}
