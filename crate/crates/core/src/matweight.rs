//! Matrix weights and their `A_{p,∞}` machinery: the per-cube
//! characteristic, lower/upper dimension estimation, and reducing
//! operators.
//!
//! Everything is computed at finite quadrature resolution; the
//! characteristic and the dimension estimates are estimators over a
//! lattice window and are labeled as such by the reporting layer.

use crate::error::{Error, Result};
use crate::exec;
use crate::lattice::{scaled_distance, AxisBox, DyadicCube, LatticeWindow};
use crate::linalg::{CMat, HermitianPd, MatrixEntries, C64};
use crate::quad::QuadratureSpec;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

/// A matrix weight: an a.e.-positive-definite Hermitian-matrix-valued
/// function evaluated pointwise.
#[derive(Clone)]
pub struct MatrixWeight {
    pub n: usize,
    pub m: usize,
    pub label: String,
    kind: WeightKind,
    const_pow_cache: Arc<Mutex<BTreeMap<u64, HermitianPd>>>,
}

#[derive(Clone)]
enum WeightKind {
    Identity,
    Constant(HermitianPd),
    /// `|x|^a · I_m`
    ScalarPower { a: f64 },
    /// `diag(|x|^{a_1}, …, |x|^{a_m})`
    DiagPower { exponents: Vec<f64> },
    Grid(Arc<GridWeight>),
    Custom(Arc<dyn Fn(&[f64]) -> Result<HermitianPd> + Send + Sync>),
}

impl MatrixWeight {
    pub fn identity(n: usize, m: usize) -> Self {
        MatrixWeight {
            n,
            m,
            label: "identity".into(),
            kind: WeightKind::Identity,
            const_pow_cache: Arc::new(Mutex::new(BTreeMap::new())),
        }
    }

    pub fn constant(n: usize, a: HermitianPd) -> Self {
        MatrixWeight {
            n,
            m: a.dim(),
            label: "constant".into(),
            kind: WeightKind::Constant(a),
            const_pow_cache: Arc::new(Mutex::new(BTreeMap::new())),
        }
    }

    /// `w(x) = |x|^a` times the identity of order `m`.
    pub fn scalar_power(n: usize, m: usize, a: f64) -> Self {
        MatrixWeight {
            n,
            m,
            label: format!("|x|^{a}"),
            kind: WeightKind::ScalarPower { a },
            const_pow_cache: Arc::new(Mutex::new(BTreeMap::new())),
        }
    }

    pub fn diag_power(n: usize, exponents: Vec<f64>) -> Self {
        MatrixWeight {
            n,
            m: exponents.len(),
            label: format!("diag(|x|^{exponents:?})"),
            kind: WeightKind::DiagPower { exponents },
            const_pow_cache: Arc::new(Mutex::new(BTreeMap::new())),
        }
    }

    pub fn custom(
        n: usize,
        m: usize,
        label: &str,
        f: impl Fn(&[f64]) -> Result<HermitianPd> + Send + Sync + 'static,
    ) -> Self {
        MatrixWeight {
            n,
            m,
            label: label.into(),
            kind: WeightKind::Custom(Arc::new(f)),
            const_pow_cache: Arc::new(Mutex::new(BTreeMap::new())),
        }
    }

    fn radius(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// True for the identity kind; norm pipelines then skip quadrature.
    pub fn is_identity(&self) -> bool {
        matches!(self.kind, WeightKind::Identity)
    }

    pub fn eval(&self, x: &[f64]) -> Result<HermitianPd> {
        self.eval_power(x, 1.0)
    }

    /// `W(x)^α`, with closed-form shortcuts for diagonal kinds.
    pub fn eval_power(&self, x: &[f64], alpha: f64) -> Result<HermitianPd> {
        match &self.kind {
            WeightKind::Identity => Ok(HermitianPd::identity(self.m)),
            WeightKind::Constant(a) => {
                if alpha == 1.0 {
                    return Ok(a.clone());
                }
                let key = alpha.to_bits();
                if let Some(hit) = self.const_pow_cache.lock().unwrap().get(&key) {
                    return Ok(hit.clone());
                }
                let p = a.power(alpha)?;
                self.const_pow_cache
                    .lock()
                    .unwrap()
                    .insert(key, p.clone());
                Ok(p)
            }
            WeightKind::ScalarPower { a } => {
                let r = Self::radius(x);
                let v = r.powf(a * alpha);
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::SingularNode(x.to_vec()));
                }
                HermitianPd::diag(&vec![v; self.m])
            }
            WeightKind::DiagPower { exponents } => {
                let r = Self::radius(x);
                let d: Vec<f64> = exponents.iter().map(|&e| r.powf(e * alpha)).collect();
                if d.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::SingularNode(x.to_vec()));
                }
                HermitianPd::diag(&d)
            }
            WeightKind::Grid(g) => {
                let w = g.eval(x)?;
                if alpha == 1.0 {
                    Ok(w)
                } else {
                    w.power(alpha)
                }
            }
            WeightKind::Custom(f) => {
                let w = f(x)?;
                if alpha == 1.0 {
                    Ok(w)
                } else {
                    w.power(alpha)
                }
            }
        }
    }
}

/// Grid-sampled weight with nearest-node lookup.
pub struct GridWeight {
    pub points: Vec<(Vec<f64>, HermitianPd)>,
}

impl GridWeight {
    pub fn eval(&self, x: &[f64]) -> Result<HermitianPd> {
        let mut best = None;
        let mut best_d = f64::INFINITY;
        for (p, w) in &self.points {
            let d: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = Some(w);
            }
        }
        best.cloned()
            .ok_or_else(|| Error::WeightEvaluation(x.to_vec(), "empty grid weight".into()))
    }

    /// CSV rows: `x_1,…,x_n` then `m*m` pairs `re,im` row-major.
    pub fn from_csv(text: &str, n: usize, m: usize) -> Result<Self> {
        let mut points = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("grid csv line {}: {e}", lineno + 1)))?;
            if cols.len() != n + 2 * m * m {
                return Err(Error::Config(format!(
                    "grid csv line {}: expected {} columns, got {}",
                    lineno + 1,
                    n + 2 * m * m,
                    cols.len()
                )));
            }
            let x = cols[..n].to_vec();
            let mut mat = CMat::zeros(m);
            for i in 0..m {
                for j in 0..m {
                    let base = n + 2 * (i * m + j);
                    mat[(i, j)] = C64::new(cols[base], cols[base + 1]);
                }
            }
            points.push((x, HermitianPd::new(mat)?));
        }
        Ok(GridWeight { points })
    }
}

/// Weight catalog entry, the JSON-facing description of a weight.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSpec {
    Identity {
        m: usize,
    },
    Constant {
        entries: MatrixEntries,
    },
    ScalarPower {
        a: f64,
        #[serde(default = "one")]
        m: usize,
    },
    DiagPower {
        exponents: Vec<f64>,
    },
    Grid {
        path: String,
        m: usize,
    },
}

fn one() -> usize {
    1
}

impl WeightSpec {
    pub fn build(&self, n: usize) -> Result<MatrixWeight> {
        match self {
            WeightSpec::Identity { m } => Ok(MatrixWeight::identity(n, *m)),
            WeightSpec::Constant { entries } => {
                Ok(MatrixWeight::constant(n, entries.to_hermitian_pd()?))
            }
            WeightSpec::ScalarPower { a, m } => Ok(MatrixWeight::scalar_power(n, *m, *a)),
            WeightSpec::DiagPower { exponents } => {
                Ok(MatrixWeight::diag_power(n, exponents.clone()))
            }
            WeightSpec::Grid { path, m } => {
                let text = std::fs::read_to_string(path)?;
                let g = GridWeight::from_csv(&text, n, *m)?;
                Ok(MatrixWeight {
                    n,
                    m: *m,
                    label: format!("grid:{path}"),
                    kind: WeightKind::Grid(Arc::new(g)),
                    const_pow_cache: Arc::new(Mutex::new(BTreeMap::new())),
                })
            }
        }
    }
}

/// `exp(⨍_outer log(⨍_inner ‖W^{1/p}(x) W^{-1/p}(y)‖^p dx) dy)`.
fn exp_log_double_average(
    w: &MatrixWeight,
    p: f64,
    inner: &AxisBox,
    outer: &AxisBox,
    quad: &QuadratureSpec,
) -> Result<f64> {
    let inner_nodes = quad.tensor_nodes(inner);
    let outer_nodes = quad.tensor_nodes(outer);
    let wp: Vec<(HermitianPd, f64)> = inner_nodes
        .iter()
        .map(|(x, wt)| Ok((w.eval_power(x, 1.0 / p)?, *wt)))
        .collect::<Result<_>>()?;
    let wm: Vec<(HermitianPd, f64)> = outer_nodes
        .iter()
        .map(|(y, wt)| Ok((w.eval_power(y, -1.0 / p)?, *wt)))
        .collect::<Result<_>>()?;
    let inner_vol = inner.volume();
    let outer_vol = outer.volume();
    let logs = exec::map_collect(&wm, |(wy, wt)| {
        let mut acc = 0.0;
        for (wx, wxt) in &wp {
            let prod = wx.as_mat().mul(wy.as_mat());
            acc += wxt * prod.op_norm().powf(p);
        }
        wt * (acc / inner_vol).ln()
    });
    let log_avg: f64 = logs.into_iter().sum::<f64>() / outer_vol;
    Ok(log_avg.exp())
}

/// Per-cube value of the `A_{p,∞}` expression.
pub fn apinf_cube_value(
    w: &MatrixWeight,
    q: &DyadicCube,
    p: f64,
    quad: &QuadratureSpec,
) -> Result<f64> {
    if p <= 0.0 {
        return Err(Error::InvalidParameter("apinf requires p > 0".into()));
    }
    let b = q.as_box();
    exp_log_double_average(w, p, &b, &b, quad)
}

/// `[W]_{A_{p,∞}}`, truncated: the max of the per-cube values over the
/// window. Monotone nondecreasing as the window grows.
pub fn apinf_characteristic(
    w: &MatrixWeight,
    p: f64,
    window: &LatticeWindow,
    quad: &QuadratureSpec,
) -> Result<f64> {
    let cubes = window.cubes(w.n);
    let vals = exec::map_collect(&cubes, |q| apinf_cube_value(w, q, p, quad));
    // a value below 1 violates the Jensen-type lower bound and is worth
    // surfacing, so the max starts unclamped
    let mut best = f64::NEG_INFINITY;
    for v in vals {
        best = best.max(v?);
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimensionSide {
    Lower,
    Upper,
}

/// Log-log slope estimate of an `A_{p,∞}` dimension, with the per-λ
/// value table and the worst least-squares residual. This is an
/// estimator of the defining infimum, not the infimum itself.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DimensionEstimate {
    pub side: DimensionSide,
    pub d_hat: f64,
    /// Rows `(base cube, λ, double-average value)`.
    pub table: Vec<(DyadicCube, f64, f64)>,
    pub fit_residual: f64,
    /// Set when `side == Lower` and the estimate reaches the ambient
    /// dimension, where the theory guarantees `d < n`.
    pub warning: Option<String>,
}

/// Estimates one `A_{p,∞}` dimension by the least-squares slope of
/// `log value` against `log λ`, maximized over base cubes. Base cubes
/// are the window cubes whose largest dilate stays inside the window
/// extent; errors if a dilate of every candidate escapes.
pub fn dimension_estimate(
    w: &MatrixWeight,
    p: f64,
    window: &LatticeWindow,
    lambdas: &[f64],
    side: DimensionSide,
    quad: &QuadratureSpec,
) -> Result<DimensionEstimate> {
    if lambdas.len() < 3 || lambdas.iter().any(|&l| l < 1.0) {
        return Err(Error::InvalidParameter(
            "need at least 3 dilation factors λ ≥ 1".into(),
        ));
    }
    let lam_max = lambdas.iter().cloned().fold(1.0f64, f64::max);
    let extent = window.extent(w.n);
    let base: Vec<DyadicCube> = window
        .cubes(w.n)
        .into_iter()
        .filter(|q| extent.contains_box(&q.dilate(lam_max)))
        .collect();
    if base.is_empty() {
        return Err(Error::OutsideWindow(format!(
            "no base cube keeps its λ={lam_max} dilate inside the window"
        )));
    }
    let rows: Vec<Result<Vec<(DyadicCube, f64, f64)>>> = exec::map_collect(&base, |q| {
        let qb = q.as_box();
        lambdas
            .iter()
            .map(|&lam| {
                let dil = q.dilate(lam);
                let v = match side {
                    DimensionSide::Lower => exp_log_double_average(w, p, &qb, &dil, quad)?,
                    DimensionSide::Upper => exp_log_double_average(w, p, &dil, &qb, quad)?,
                };
                Ok((q.clone(), lam, v))
            })
            .collect()
    });
    let mut table = Vec::new();
    let mut d_hat = 0.0f64;
    let mut fit_residual = 0.0f64;
    for row in rows {
        let row = row?;
        let xs: Vec<f64> = row.iter().map(|(_, l, _)| l.ln()).collect();
        let ys: Vec<f64> = row.iter().map(|(_, _, v)| v.ln()).collect();
        let (slope, res) = least_squares_slope(&xs, &ys);
        d_hat = d_hat.max(slope);
        fit_residual = fit_residual.max(res);
        table.extend(row);
    }
    let d_hat = d_hat.max(0.0);
    let warning = if side == DimensionSide::Lower && d_hat >= w.n as f64 {
        Some(format!(
            "lower-dimension estimate {d_hat:.4} reached ambient dimension {}",
            w.n
        ))
    } else {
        None
    };
    Ok(DimensionEstimate {
        side,
        d_hat,
        table,
        fit_residual,
        warning,
    })
}

/// Slope and RMS residual of the least-squares line through `(x, y)`.
fn least_squares_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let icept = my - slope * mx;
    let res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (icept + slope * x);
            e * e
        })
        .sum::<f64>()
        / n;
    (slope, res.sqrt())
}

/// Controls for the general-`p` ellipsoid fit.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EllipsoidFitSpec {
    pub directions: usize,
    pub phases: usize,
    pub heldout: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for EllipsoidFitSpec {
    fn default() -> Self {
        EllipsoidFitSpec {
            directions: 64,
            phases: 8,
            heldout: 720,
            tol: 5e-5,
            max_iter: 500_000,
            seed: 0x9e3779b97f4a7c15,
        }
    }
}

/// A reducing operator together with its achieved held-out equivalence
/// ratio `c2/c1`.
#[derive(Clone, Debug)]
pub struct ReducingOperator {
    pub a_q: HermitianPd,
    pub heldout_ratio: f64,
}

/// `ρ_Q(z) = (⨍_Q |W^{1/p}(x) z|^p dx)^{1/p}` from precomputed node powers.
fn rho_from_nodes(nodes: &[(HermitianPd, f64)], vol: f64, z: &[C64], p: f64) -> f64 {
    let s: f64 = nodes
        .iter()
        .map(|(wx, wt)| wt * wx.apply_norm(z).powf(p))
        .sum();
    (s / vol).powf(1.0 / p)
}

/// Builds the reducing operator of order `p` for `W` on `Q`.
///
/// `p = 2` uses the exact formula `(⨍_Q W)^{1/2}`; other `p` run a
/// minimum-volume enclosing ellipsoid fit over a sampled, phase-closed
/// cloud on the `ρ_Q` unit surface and report the achieved held-out
/// ratio.
pub fn reducing_operator(
    w: &MatrixWeight,
    q: &DyadicCube,
    p: f64,
    fit: &EllipsoidFitSpec,
    quad: &QuadratureSpec,
) -> Result<ReducingOperator> {
    if p <= 0.0 {
        return Err(Error::InvalidParameter("reducing operator needs p > 0".into()));
    }
    let b = q.as_box();
    if p == 2.0 {
        let nodes = quad.tensor_nodes(&b);
        let m = w.m;
        let mut acc = CMat::zeros(m);
        for (x, wt) in &nodes {
            let wx = w.eval(x)?;
            for i in 0..m * m {
                acc.a[i] += wx.as_mat().a[i] * (*wt);
            }
        }
        let avg = acc.scale(1.0 / b.volume());
        let a_q = HermitianPd::new(avg)?.power(0.5)?;
        // held-out check of |A_Q z|^2 = z*(⨍W)z is exact by construction;
        // still measured so the family carries a uniform field.
        let nodes_p = nodes
            .iter()
            .map(|(x, wt)| Ok((w.eval_power(x, 0.5)?, *wt)))
            .collect::<Result<Vec<_>>>()?;
        let ratio = heldout_ratio(&a_q, &nodes_p, b.volume(), p, w.m, fit)?;
        return Ok(ReducingOperator {
            a_q,
            heldout_ratio: ratio,
        });
    }

    let nodes = quad
        .tensor_nodes(&b)
        .iter()
        .map(|(x, wt)| Ok((w.eval_power(x, 1.0 / p)?, *wt)))
        .collect::<Result<Vec<_>>>()?;
    let vol = b.volume();
    let m = w.m;
    if m == 1 {
        let rho = rho_from_nodes(&nodes, vol, &[C64::new(1.0, 0.0)], p);
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::Degenerate("ρ_Q vanishes".into()));
        }
        let a_q = HermitianPd::diag(&[rho])?;
        let ratio = heldout_ratio(&a_q, &nodes, vol, p, m, fit)?;
        return Ok(ReducingOperator {
            a_q,
            heldout_ratio: ratio,
        });
    }

    // Sample the ρ_Q-unit surface, closed under complex phases.
    let mut rng = ChaCha12Rng::seed_from_u64(fit.seed);
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(fit.directions * fit.phases);
    for _ in 0..fit.directions {
        let z = random_direction(m, &mut rng);
        let rho = rho_from_nodes(&nodes, vol, &z, p);
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::Degenerate(format!("ρ_Q degenerate on {q}")));
        }
        for l in 0..fit.phases {
            let ph = C64::from_polar(1.0, 2.0 * std::f64::consts::PI * l as f64 / fit.phases as f64);
            let zz: Vec<C64> = z.iter().map(|v| v * ph / rho).collect();
            pts.push(embed_real(&zz));
        }
    }
    let h_real = mvee_centered(&pts, 2 * m, fit.tol, fit.max_iter)?;
    let h = complex_projection(&h_real, m)?;
    let a_q = h.power(0.5)?;
    let ratio = heldout_ratio(&a_q, &nodes, vol, p, m, fit)?;
    Ok(ReducingOperator {
        a_q,
        heldout_ratio: ratio,
    })
}

fn random_direction(m: usize, rng: &mut impl Rng) -> Vec<C64> {
    loop {
        let z: Vec<C64> = (0..m)
            .map(|_| {
                C64::new(
                    standard_normal(rng),
                    standard_normal(rng),
                )
            })
            .collect();
        let n: f64 = z.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if n > 1e-6 {
            return z.iter().map(|v| v / n).collect();
        }
    }
}

pub(crate) fn standard_normal(rng: &mut impl Rng) -> f64 {
    // Box-Muller; deterministic for a seeded generator.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn embed_real(z: &[C64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(2 * z.len());
    v.extend(z.iter().map(|c| c.re));
    v.extend(z.iter().map(|c| c.im));
    v
}

fn heldout_ratio(
    a_q: &HermitianPd,
    nodes: &[(HermitianPd, f64)],
    vol: f64,
    p: f64,
    m: usize,
    fit: &EllipsoidFitSpec,
) -> Result<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(fit.seed ^ 0x5bf0_3635);
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for _ in 0..fit.heldout {
        let z = random_direction(m, &mut rng);
        let rho = rho_from_nodes(nodes, vol, &z, p);
        if rho <= 0.0 {
            return Err(Error::Degenerate("held-out ρ_Q vanishes".into()));
        }
        let r = a_q.apply_norm(&z) / rho;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok(hi / lo)
}

/// Centered Khachiyan iteration: minimum-volume origin-symmetric
/// ellipsoid `{v : v' H v ≤ 1}` containing the (symmetric) point cloud.
///
/// The inverse moment matrix and the leverage values are maintained by
/// rank-one updates, refreshed from scratch periodically; the returned
/// form is rescaled so the farthest point sits exactly on the boundary.
fn mvee_centered(points: &[Vec<f64>], d: usize, tol: f64, max_iter: usize) -> Result<Vec<Vec<f64>>> {
    let n = points.len();
    if n < d {
        return Err(Error::EllipsoidFit(format!(
            "need at least {d} points, got {n}"
        )));
    }
    let df = d as f64;
    let mut u = vec![1.0 / n as f64; n];
    let recompute = |u: &[f64]| -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let mut x = vec![vec![0.0f64; d]; d];
        for (ui, p) in u.iter().zip(points) {
            for a in 0..d {
                for b in 0..d {
                    x[a][b] += ui * p[a] * p[b];
                }
            }
        }
        let xinv = real_sym_inverse(&x)?;
        let m: Vec<f64> = points
            .iter()
            .map(|p| quad_form(&xinv, p))
            .collect();
        Ok((xinv, m))
    };
    let (mut xinv, mut m) = recompute(&u)?;
    let mut since_refresh = 0usize;
    let mut done = false;
    for _ in 0..max_iter {
        let (mut kappa, mut arg) = (f64::NEG_INFINITY, 0usize);
        for (i, &mi) in m.iter().enumerate() {
            if mi > kappa {
                kappa = mi;
                arg = i;
            }
        }
        if kappa <= df * (1.0 + tol) {
            done = true;
            break;
        }
        let beta = (kappa - df) / (df * (kappa - 1.0));
        for ui in u.iter_mut() {
            *ui *= 1.0 - beta;
        }
        u[arg] += beta;
        // Sherman–Morrison update of X^{-1} and the leverage values
        let p_star = &points[arg];
        let mut w = vec![0.0f64; d];
        for a in 0..d {
            let mut s = 0.0;
            for b in 0..d {
                s += xinv[a][b] * p_star[b];
            }
            w[a] = s;
        }
        let denom = 1.0 - beta + beta * kappa;
        let om = 1.0 - beta;
        for (i, p) in points.iter().enumerate() {
            let c: f64 = p.iter().zip(&w).map(|(a, b)| a * b).sum();
            m[i] = (m[i] - beta * c * c / denom) / om;
        }
        for a in 0..d {
            for b in 0..d {
                xinv[a][b] = (xinv[a][b] - beta * w[a] * w[b] / denom) / om;
            }
        }
        since_refresh += 1;
        if since_refresh >= 4096 {
            let fresh = recompute(&u)?;
            xinv = fresh.0;
            m = fresh.1;
            since_refresh = 0;
        }
    }
    if !done {
        return Err(Error::EllipsoidFit(format!(
            "Khachiyan iteration cap {max_iter} reached"
        )));
    }
    // H = X^{-1}/d, rescaled to put the farthest point on the boundary
    let (xinv, _) = recompute(&u)?;
    let mut h = xinv;
    for row in h.iter_mut() {
        for v in row.iter_mut() {
            *v /= df;
        }
    }
    let worst = points
        .iter()
        .map(|p| quad_form(&h, p))
        .fold(0.0f64, f64::max);
    if worst > 0.0 {
        for row in h.iter_mut() {
            for v in row.iter_mut() {
                *v /= worst;
            }
        }
    }
    Ok(h)
}

fn quad_form(mat: &[Vec<f64>], p: &[f64]) -> f64 {
    let d = p.len();
    let mut q = 0.0;
    for a in 0..d {
        let mut row = 0.0;
        for b in 0..d {
            row += mat[a][b] * p[b];
        }
        q += p[a] * row;
    }
    q
}

fn real_sym_inverse(x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let d = x.len();
    let mut cm = CMat::zeros(d);
    for a in 0..d {
        for b in 0..d {
            cm[(a, b)] = C64::new(0.5 * (x[a][b] + x[b][a]), 0.0);
        }
    }
    let inv = HermitianPd::new(cm)
        .map_err(|e| Error::EllipsoidFit(format!("X not PD: {e}")))?
        .inverse()?;
    let mut out = vec![vec![0.0f64; d]; d];
    for a in 0..d {
        for b in 0..d {
            out[a][b] = inv.as_mat()[(a, b)].re;
        }
    }
    Ok(out)
}

/// Projects a real `2m × 2m` quadratic form onto the complex-structure
/// subspace (`M = [[S, -T], [T, S]]`) and returns the Hermitian `S + iT`.
fn complex_projection(h: &[Vec<f64>], m: usize) -> Result<HermitianPd> {
    let mut out = CMat::zeros(m);
    for a in 0..m {
        for b in 0..m {
            let s = 0.5 * (h[a][b] + h[a + m][b + m]);
            let t = 0.5 * (h[a + m][b] - h[a][b + m]);
            out[(a, b)] = C64::new(s, t);
        }
    }
    // Hermitian-ize (S symmetric, T antisymmetric up to fit noise).
    let adj = out.adjoint();
    let sym = CMat {
        m,
        a: out.a.iter().zip(&adj.a).map(|(x, y)| (x + y) * 0.5).collect(),
    };
    HermitianPd::new(sym).map_err(|e| Error::EllipsoidFit(format!("projected form not PD: {e}")))
}

/// Reducing operators for every cube of a window.
#[derive(Clone)]
pub struct ReducingFamily {
    pub p: f64,
    pub map: BTreeMap<DyadicCube, HermitianPd>,
    /// Worst achieved held-out equivalence ratio across the family.
    pub worst_ratio: f64,
}

impl ReducingFamily {
    pub fn build(
        w: &MatrixWeight,
        p: f64,
        cubes: &[DyadicCube],
        fit: &EllipsoidFitSpec,
        quad: &QuadratureSpec,
    ) -> Result<Self> {
        let ops = exec::map_collect(cubes, |q| reducing_operator(w, q, p, fit, quad));
        let mut map = BTreeMap::new();
        let mut worst = 1.0f64;
        for (q, op) in cubes.iter().zip(ops) {
            let op = op?;
            worst = worst.max(op.heldout_ratio);
            map.insert(q.clone(), op.a_q);
        }
        Ok(ReducingFamily {
            p,
            map,
            worst_ratio: worst,
        })
    }

    pub fn get(&self, q: &DyadicCube) -> Result<&HermitianPd> {
        self.map
            .get(q)
            .ok_or_else(|| Error::MissingReducer(q.to_string()))
    }
}

/// Smallest empirical `C` with
/// `‖A_Q A_R^{-1}‖^p ≤ C · max{(ℓR/ℓQ)^{β1}, (ℓQ/ℓR)^{β2}} · sd(Q,R)^{β1+β2}`
/// over the given pairs.
pub fn reducing_growth_certificate(
    fam: &ReducingFamily,
    pairs: &[(DyadicCube, DyadicCube)],
    beta1: f64,
    beta2: f64,
) -> Result<f64> {
    let ratios = exec::map_collect(pairs, |(q, r)| -> Result<f64> {
        let aq = fam.get(q)?;
        let ar_inv = fam.get(r)?.inverse()?;
        let lhs = aq.as_mat().mul(ar_inv.as_mat()).op_norm().powf(fam.p);
        let lq = q.edge();
        let lr = r.edge();
        let scale = (lr / lq).powf(beta1).max((lq / lr).powf(beta2));
        let sd = scaled_distance(q, r)?;
        Ok(lhs / (scale * sd.powf(beta1 + beta2)))
    });
    let mut worst = 0.0f64;
    for r in ratios {
        worst = worst.max(r?);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeWindow;

    fn q1(j: i32, k: i64) -> DyadicCube {
        DyadicCube::new(j, vec![k])
    }

    #[test]
    fn apinf_identity_is_one() {
        let w = MatrixWeight::identity(1, 2);
        let v = apinf_cube_value(&w, &q1(0, 0), 2.0, &QuadratureSpec::default()).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn apinf_constant_is_one() {
        let a = HermitianPd::diag(&[2.0, 0.5]).unwrap();
        let w = MatrixWeight::constant(1, a);
        let v = apinf_cube_value(&w, &q1(1, 3), 1.0, &QuadratureSpec::default()).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    /// Symbolic oracle: w(x) = x on Q = [0,1), p = 1, m = 1 gives
    /// exp(⨍ log(1/(2y)) dy) = e/2.
    #[test]
    fn apinf_linear_weight_oracle() {
        let w = MatrixWeight::custom(1, 1, "x", |x| HermitianPd::diag(&[x[0]]));
        let v = apinf_cube_value(&w, &q1(0, 0), 1.0, &QuadratureSpec::midpoint(8)).unwrap();
        let target = std::f64::consts::E / 2.0;
        assert!(
            (v - target).abs() < 5e-3 * target,
            "got {v}, want {target}"
        );
    }

    /// Scale invariance: the expression cancels W ↦ cW exactly.
    #[test]
    fn apinf_scale_invariance() {
        let quad = QuadratureSpec::default();
        let w1 = MatrixWeight::scalar_power(1, 1, 1.0);
        let w2 = MatrixWeight::custom(1, 1, "7|x|", |x| {
            HermitianPd::diag(&[7.0 * x[0].abs()])
        });
        let q = q1(0, 1);
        let a = apinf_cube_value(&w1, &q, 1.0, &quad).unwrap();
        let b = apinf_cube_value(&w2, &q, 1.0, &quad).unwrap();
        assert!((a - b).abs() < 1e-10 * a.max(1.0));
    }

    #[test]
    fn apinf_characteristic_abs_weight_finite() {
        let w = MatrixWeight::scalar_power(1, 1, 1.0);
        let win = LatticeWindow::new(-1, 2, 1).unwrap();
        let quad = QuadratureSpec::default();
        let c = apinf_characteristic(&w, 1.0, &win, &quad).unwrap();
        assert!(c.is_finite() && c >= 1.0);
        // dense cross-check on 3 cubes with a finer rule
        let fine = QuadratureSpec::midpoint(8);
        for q in [q1(0, 0), q1(0, -1), q1(1, 1)] {
            let coarse = apinf_cube_value(&w, &q, 1.0, &quad).unwrap();
            let dense = apinf_cube_value(&w, &q, 1.0, &fine).unwrap();
            assert!(
                (coarse - dense).abs() < 2e-2 * dense,
                "cube {q}: {coarse} vs {dense}"
            );
        }
    }

    #[test]
    fn dimension_constant_weight_is_zero() {
        let w = MatrixWeight::constant(1, HermitianPd::diag(&[3.0]).unwrap());
        let win = LatticeWindow::new(-1, 1, 2).unwrap();
        let quad = QuadratureSpec::midpoint(4);
        for side in [DimensionSide::Lower, DimensionSide::Upper] {
            let est =
                dimension_estimate(&w, 1.0, &win, &[1.0, 2.0, 4.0], side, &quad).unwrap();
            assert!(est.d_hat.abs() < 1e-12);
            assert!(est.fit_residual < 1e-8);
        }
    }

    /// Dense-quadrature λ-sweep oracle for w(x) = |x|^{1/2} on [1,2).
    #[test]
    fn dimension_power_weight_oracle() {
        let w = MatrixWeight::scalar_power(1, 1, 0.5);
        let quad = QuadratureSpec::midpoint(5);
        let fine = QuadratureSpec::midpoint(9);
        let q = q1(0, 1);
        let qb = q.as_box();
        for lam in [1.0f64, 2.0, 4.0, 8.0] {
            let dil = q.dilate(lam);
            let v = exp_log_double_average(&w, 1.0, &qb, &dil, &quad).unwrap();
            let vf = exp_log_double_average(&w, 1.0, &qb, &dil, &fine).unwrap();
            assert!(
                (v - vf).abs() < 2e-2 * vf,
                "λ={lam}: {v} vs dense {vf}"
            );
        }
        // slope of a power weight is finite and nonnegative
        let win = LatticeWindow::new(-1, 1, 4).unwrap();
        let est = dimension_estimate(
            &w,
            1.0,
            &win,
            &[1.0, 2.0, 4.0, 8.0],
            DimensionSide::Lower,
            &quad,
        )
        .unwrap();
        assert!(est.d_hat >= 0.0 && est.d_hat.is_finite());
    }

    #[test]
    fn reducing_p2_exact() {
        // W ≡ A constant, p = 2: A_Q = A^{1/2}
        let a = HermitianPd::diag(&[4.0, 9.0]).unwrap();
        let w = MatrixWeight::constant(1, a);
        let fit = EllipsoidFitSpec {
            heldout: 64,
            ..Default::default()
        };
        let op =
            reducing_operator(&w, &q1(0, 2), 2.0, &fit, &QuadratureSpec::default()).unwrap();
        let expect = HermitianPd::diag(&[2.0, 3.0]).unwrap();
        assert!(op.a_q.as_mat().sub(expect.as_mat()).fro_norm() < 1e-12);
    }

    #[test]
    fn reducing_scalar_isotropic() {
        // w·I_m: A_Q = (⨍ w)^{1/p} I within fit tolerance (p = 1, m = 2)
        let w = MatrixWeight::custom(1, 2, "x I", |x| HermitianPd::diag(&[x[0], x[0]]));
        let fit = EllipsoidFitSpec {
            directions: 48,
            heldout: 128,
            ..Default::default()
        };
        let quad = QuadratureSpec::default();
        let op = reducing_operator(&w, &q1(0, 1), 1.0, &fit, &quad).unwrap();
        // ⨍_[1,2) x dx = 1.5
        let expect = 1.5f64;
        for i in 0..2 {
            let d = op.a_q.as_mat()[(i, i)].re;
            assert!((d - expect).abs() < 0.05 * expect, "diag {d} vs {expect}");
        }
        assert!(op.heldout_ratio < 1.05 * 2.0f64.sqrt());
    }

    /// Direction-sampling oracle: m=2, p=1, W = diag(1, x²) on [1,2).
    #[test]
    fn reducing_mvee_diag_weight() {
        let w = MatrixWeight::custom(1, 2, "diag(1,x^2)", |x| {
            HermitianPd::diag(&[1.0, x[0] * x[0]])
        });
        let fit = EllipsoidFitSpec::default();
        let quad = QuadratureSpec::default();
        let op = reducing_operator(&w, &q1(0, 1), 1.0, &fit, &quad).unwrap();
        assert!(
            op.heldout_ratio <= 2.0f64.sqrt() * 1.05,
            "held-out ratio {} too large",
            op.heldout_ratio
        );
    }

    #[test]
    fn growth_certificate_identity_is_one() {
        let w = MatrixWeight::identity(1, 2);
        let win = LatticeWindow::new(0, 2, 1).unwrap();
        let cubes = win.cubes(1);
        let fam = ReducingFamily::build(
            &w,
            2.0,
            &cubes,
            &EllipsoidFitSpec {
                heldout: 16,
                ..Default::default()
            },
            &QuadratureSpec::midpoint(3),
        )
        .unwrap();
        let mut pairs = Vec::new();
        for q in cubes.iter().take(8) {
            for r in cubes.iter().take(8) {
                pairs.push((q.clone(), r.clone()));
            }
        }
        let c = reducing_growth_certificate(&fam, &pairs, 1.0, 1.0).unwrap();
        assert_eq!(c, 1.0);
    }

    /// Two-window comparison oracle: |x| with p=1 gives a certificate
    /// stable (±10%) under one scale of refinement.
    #[test]
    fn growth_certificate_stability() {
        let w = MatrixWeight::scalar_power(1, 1, 1.0);
        let quad = QuadratureSpec::midpoint(4);
        let fit = EllipsoidFitSpec {
            heldout: 8,
            ..Default::default()
        };
        let mut cs = Vec::new();
        for win in [
            LatticeWindow::new(-1, 2, 1).unwrap(),
            LatticeWindow::new(-1, 3, 1).unwrap(),
        ] {
            let cubes = win.cubes(1);
            let fam = ReducingFamily::build(&w, 1.0, &cubes, &fit, &quad).unwrap();
            let mut pairs = Vec::new();
            for q in &cubes {
                for r in &cubes {
                    pairs.push((q.clone(), r.clone()));
                }
            }
            cs.push(reducing_growth_certificate(&fam, &pairs, 1.0, 1.0).unwrap());
        }
        assert!(cs[0].is_finite() && cs[1].is_finite());
        assert!(
            (cs[1] - cs[0]).abs() <= 0.10 * cs[0],
            "certificate drifted {} -> {}",
            cs[0],
            cs[1]
        );
    }

    #[test]
    fn dimension_dilate_exits_window() {
        let w = MatrixWeight::scalar_power(1, 1, 0.5);
        // every λ=64 dilate leaves the extent: no admissible base cube
        let win = LatticeWindow::new(0, 1, 1).unwrap();
        let err = dimension_estimate(
            &w,
            1.0,
            &win,
            &[1.0, 8.0, 64.0],
            DimensionSide::Lower,
            &QuadratureSpec::midpoint(3),
        );
        assert!(matches!(err, Err(Error::OutsideWindow(_))));
    }

    /// Pipeline oracle: estimated dimensions of a power weight feed the
    /// threshold formulas and produce finite, ordered values.
    #[test]
    fn power_weight_dimension_threshold_pipeline() {
        let w = MatrixWeight::scalar_power(1, 1, 1.0);
        let win = LatticeWindow::new(-1, 1, 3).unwrap();
        let quad = QuadratureSpec::midpoint(4);
        let lams = [1.0, 2.0, 4.0];
        let lo = dimension_estimate(&w, 1.0, &win, &lams, DimensionSide::Lower, &quad).unwrap();
        let up = dimension_estimate(&w, 1.0, &win, &lams, DimensionSide::Upper, &quad).unwrap();
        let params = crate::seqspace::SpaceParams {
            family: crate::seqspace::Family::B,
            s: 0.0,
            p: 1.0,
            q: 1.0,
            n: 1,
            m: 1,
            upsilon: crate::growth::GrowthFunction::one(),
        };
        let th = crate::almostdiag::thresholds(&params, lo.d_hat.min(0.99), up.d_hat).unwrap();
        assert!(th.d_star.is_finite() && th.e_star.is_finite() && th.f_star.is_finite());
        // the upper-dimension term only enlarges D* and F*
        let th0 = crate::almostdiag::thresholds(&params, 0.0, 0.0).unwrap();
        assert!(th.d_star >= th0.d_star && th.f_star >= th0.f_star);
    }

    #[test]
    fn weight_spec_round_trip() {
        let spec: WeightSpec =
            serde_json::from_str(r#"{"kind":"scalar_power","a":0.5}"#).unwrap();
        let w = spec.build(1).unwrap();
        assert_eq!(w.m, 1);
        let v = w.eval(&[4.0]).unwrap();
        assert!((v.as_mat()[(0, 0)].re - 2.0).abs() < 1e-12);
    }
}
