//! Compactly supported orthonormal wavelet systems and the band-limited
//! transform pair.
//!
//! Filters come from spectral factorization of the binomial half-band
//! polynomial with deterministic minimum-phase root selection. Sampled
//! functions are the piecewise-constant cascade iterates started from
//! the unit box: their cell values are exact integrals' worth of data,
//! so Riemann sums on the cascade grid evaluate inner products of the
//! iterates exactly and the discrete system is orthonormal to rounding
//! at every level.

use crate::error::{Error, Result};
use crate::exec;
use crate::lattice::{DyadicCube, LatticeWindow};
use crate::linalg::C64;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Tensor-type index `λ ∈ {0,1}^n \ {0}`: bit `d` selects the wavelet
/// factor on axis `d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Lambda(pub u32);

impl Lambda {
    pub fn factor_is_psi(&self, axis: usize) -> bool {
        (self.0 >> axis) & 1 == 1
    }

    /// All of `Λ_n`.
    pub fn all(n: usize) -> Vec<Lambda> {
        (1u32..(1 << n)).map(Lambda).collect()
    }

    /// `(λ', 0)`: the same bits one dimension up.
    pub fn extend(&self) -> Lambda {
        *self
    }

    pub fn bits(&self, n: usize) -> Vec<u8> {
        (0..n).map(|d| ((self.0 >> d) & 1) as u8).collect()
    }

    pub fn from_bits(bits: &[u8]) -> Lambda {
        let mut v = 0u32;
        for (d, &b) in bits.iter().enumerate() {
            if b != 0 {
                v |= 1 << d;
            }
        }
        Lambda(v)
    }
}

/// Orthonormal filter pair of a compactly supported system.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FilterPair {
    /// scaling (lowpass) coefficients, length 2k
    pub h: Vec<f64>,
    /// wavelet (highpass) coefficients `g_j = (-1)^j h_{2k-1-j}`
    pub g: Vec<f64>,
    /// the mask `m0 = h/√2`; the cascade uses `2·m0` so that rationals
    /// (Haar) refine without rounding
    pub m0: Vec<f64>,
}

impl FilterPair {
    /// Two-scale refinement coefficients `√2 h_j`, formed as `2 m0_j`.
    pub fn refine_phi(&self) -> Vec<f64> {
        self.m0.iter().map(|&v| 2.0 * v).collect()
    }

    /// Two-scale coefficients of the wavelet side, `√2 g_j = ±2 m0_{..}`.
    pub fn refine_psi(&self) -> Vec<f64> {
        let nn = self.m0.len();
        (0..nn)
            .map(|j| {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                sign * 2.0 * self.m0[nn - 1 - j]
            })
            .collect()
    }
}

/// Length-`2k` real filter from spectral factorization, minimum-phase
/// root selection (all retained roots inside the unit disk).
pub fn daubechies_filter(k: usize) -> Result<FilterPair> {
    if !(1..=10).contains(&k) {
        return Err(Error::InvalidParameter(format!(
            "vanishing-moment order {k} outside [1, 10]"
        )));
    }
    let m0 = if k == 1 {
        vec![0.5, 0.5]
    } else {
        // Roots of the binomial half-band factor P(y), degree k-1;
        // each maps to the in-disk root of z² − (2−4y)z + 1 = 0
        // (minimum phase: the two z-roots multiply to 1).
        let p_y: Vec<f64> = (0..k).map(|l| binomial(k - 1 + l, l) as f64).collect();
        let y_roots = durand_kerner(&p_y, 2000, 1e-14)?;
        let mut inside: Vec<Complex64> = y_roots
            .into_iter()
            .map(|y| {
                let b = Complex64::new(2.0, 0.0) - y * 4.0;
                let disc = (b * b - 4.0).sqrt();
                let z1 = (b + disc) * 0.5;
                let z2 = (b - disc) * 0.5;
                if z1.norm() < 1.0 {
                    z1
                } else {
                    z2
                }
            })
            .collect();
        inside.sort_by(|a, b| {
            a.re.partial_cmp(&b.re)
                .unwrap()
                .then(a.im.partial_cmp(&b.im).unwrap())
        });
        let mut b = vec![Complex64::new(1.0, 0.0)];
        for r in &inside {
            b = conv_c(&b, &[Complex64::new(1.0, 0.0), -r]);
        }
        let mut br: Vec<f64> = b.iter().map(|z| z.re).collect();
        let bsum: f64 = br.iter().sum();
        for v in br.iter_mut() {
            *v /= bsum;
        }
        // ((1+z)/2)^k factor
        let mut m = vec![1.0f64];
        for _ in 0..k {
            m = conv_r(&m, &[0.5, 0.5]);
        }
        conv_r(&m, &br)
    };
    let h: Vec<f64> = m0.iter().map(|v| v * std::f64::consts::SQRT_2).collect();
    let nn = h.len();
    let g: Vec<f64> = (0..nn)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * h[nn - 1 - j]
        })
        .collect();
    let fp = FilterPair { h, g, m0 };
    let res = filter_orthonormality_residual(&fp.h);
    if res > 1e-12 {
        return Err(Error::Wavelet(format!(
            "filter orthonormality residual {res:.3e} for k={k}"
        )));
    }
    Ok(fp)
}

/// `max_l |Σ_j h_j h_{j-2l} − δ_{0l}|` plus the lowpass normalization
/// deviation.
pub fn filter_orthonormality_residual(h: &[f64]) -> f64 {
    let n = h.len();
    let mut worst = (h.iter().sum::<f64>() - std::f64::consts::SQRT_2).abs();
    for l in 0..n / 2 {
        let mut s = 0.0;
        for j in 0..n {
            let idx = j as i64 - 2 * l as i64;
            if idx >= 0 && (idx as usize) < n {
                s += h[j] * h[idx as usize];
            }
        }
        let target = if l == 0 { 1.0 } else { 0.0 };
        worst = worst.max((s - target).abs());
    }
    worst
}

fn binomial(n: usize, k: usize) -> u64 {
    let mut out = 1u64;
    for i in 0..k {
        out = out * (n - i) as u64 / (i + 1) as u64;
    }
    out
}

fn conv_r(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn conv_c(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Simultaneous root iteration on a real-coefficient polynomial
/// (ascending coefficients), with deterministic initial configuration
/// and a Newton polish per root.
fn durand_kerner(coeffs: &[f64], max_iter: usize, tol: f64) -> Result<Vec<Complex64>> {
    let deg = coeffs.len() - 1;
    if deg == 0 {
        return Ok(Vec::new());
    }
    let lead = coeffs[deg];
    let monic: Vec<Complex64> = coeffs
        .iter()
        .map(|&c| Complex64::new(c / lead, 0.0))
        .collect();
    let eval = |z: Complex64| -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for &c in monic.iter().rev() {
            acc = acc * z + c;
        }
        acc
    };
    let eval_deriv = |z: Complex64| -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, &c) in monic.iter().enumerate().skip(1).rev() {
            acc = acc * z + c * i as f64;
        }
        acc
    };
    // deterministic log-spiral seeds spanning the Cauchy root bound
    let r_max = 1.0
        + monic
            .iter()
            .take(deg)
            .map(|c| c.norm())
            .fold(0.0f64, f64::max);
    let golden = 2.399_963_229_728_653f64;
    let mut roots: Vec<Complex64> = (0..deg)
        .map(|i| {
            let t = i as f64 / deg.max(2) as f64;
            let r = 0.3 * (r_max / 0.3f64).powf(t);
            Complex64::from_polar(r, golden * i as f64 + 0.5)
        })
        .collect();
    let mut converged = false;
    for _ in 0..max_iter {
        let mut worst = 0.0f64;
        for i in 0..deg {
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..deg {
                if j != i {
                    denom *= roots[i] - roots[j];
                }
            }
            let step = eval(roots[i]) / denom;
            roots[i] -= step;
            worst = worst.max(step.norm() / roots[i].norm().max(1e-3));
        }
        if worst < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::RootFinding(max_iter));
    }
    for r in roots.iter_mut() {
        for _ in 0..3 {
            let d = eval_deriv(*r);
            if d.norm() > 1e-300 {
                *r -= eval(*r) / d;
            }
        }
    }
    Ok(roots)
}

/// A 1-D wavelet system: filters plus cascade-iterate cell tables at a
/// ladder of depths.
///
/// A basis function at dyadic scale `j` is evaluated from the iterate of
/// depth `levels − j`, so every `θ_{j,k}` in a window is an exact finite
/// combination of box indicators at the common resolution `2^{-levels}`
/// and the sampled multiscale family is orthonormal to rounding. Depths
/// run up to `levels + COARSE_MARGIN` to cover coarse window scales.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WaveletSystem {
    pub k: usize,
    pub levels: u32,
    pub filters: FilterPair,
    /// φ iterate cell values per depth (index `M-1` holds depth `M`)
    tables_phi: Vec<Vec<f64>>,
    /// ψ iterate cell values per depth
    tables_psi: Vec<Vec<f64>>,
}

/// Extra iterate depths beyond `levels` for coarse window scales
/// (`j ≥ -COARSE_MARGIN` is evaluable).
pub const COARSE_MARGIN: u32 = 4;

impl WaveletSystem {
    pub fn build(k: usize, levels: u32) -> Result<Self> {
        if !(4..=14).contains(&levels) {
            return Err(Error::InvalidParameter(format!(
                "cascade levels {levels} outside [4, 14]"
            )));
        }
        let filters = daubechies_filter(k)?;
        let refine_phi = filters.refine_phi();
        let refine_psi = filters.refine_psi();
        let n = filters.h.len();
        let depth_max = (levels + COARSE_MARGIN).min(16);
        let mut tables_phi = Vec::with_capacity(depth_max as usize);
        let mut tables_psi = Vec::with_capacity(depth_max as usize);
        let mut prev_phi = vec![1.0f64]; // depth 0: the unit box
        for depth in 1..=depth_max {
            let half = 1i64 << (depth - 1);
            let ncells = (n - 1) * (1usize << depth);
            let mut phi = vec![0.0f64; ncells];
            let mut psi = vec![0.0f64; ncells];
            for t in 0..ncells {
                let mut sp = 0.0;
                let mut sq = 0.0;
                for j in 0..n {
                    let c = t as i64 - j as i64 * half;
                    if c >= 0 && c < prev_phi.len() as i64 {
                        sp += refine_phi[j] * prev_phi[c as usize];
                        sq += refine_psi[j] * prev_phi[c as usize];
                    }
                }
                phi[t] = sp;
                psi[t] = sq;
            }
            prev_phi = phi.clone();
            tables_phi.push(phi);
            tables_psi.push(psi);
        }
        Ok(WaveletSystem {
            k,
            levels,
            filters,
            tables_phi,
            tables_psi,
        })
    }

    /// Deepest available iterate depth.
    pub fn depth_max(&self) -> u32 {
        self.tables_phi.len() as u32
    }

    /// Iterate depth used for scale `j`: `levels − j`.
    fn depth_for(&self, j: i32) -> usize {
        let m = self.levels as i64 - j as i64;
        assert!(
            m >= 1 && m <= self.depth_max() as i64,
            "scale {} outside the evaluable range [{}, {}] at levels {}",
            j,
            self.levels as i64 - self.depth_max() as i64,
            self.levels - 1,
            self.levels
        );
        m as usize
    }

    /// The reference (depth `levels`) φ cell values.
    pub fn phi_cells(&self) -> &[f64] {
        &self.tables_phi[self.levels as usize - 1]
    }

    pub fn psi_cells(&self) -> &[f64] {
        &self.tables_psi[self.levels as usize - 1]
    }

    /// Disk cache keyed by `(k, levels)` with a version header.
    pub fn load_or_build(cache_dir: &Path, k: usize, levels: u32) -> Result<Self> {
        const VERSION: &str = "dms-wavelet-v1";
        let path = cache_dir.join(format!("wavelet_k{k}_L{levels}.json"));
        if let Ok(text) = std::fs::read_to_string(&path) {
            #[derive(Deserialize)]
            struct Cached {
                version: String,
                system: WaveletSystem,
            }
            if let Ok(c) = serde_json::from_str::<Cached>(&text) {
                if c.version == VERSION && c.system.k == k && c.system.levels == levels {
                    return Ok(c.system);
                }
            }
        }
        let system = Self::build(k, levels)?;
        #[derive(Serialize)]
        struct Cached<'a> {
            version: &'a str,
            system: &'a WaveletSystem,
        }
        std::fs::create_dir_all(cache_dir)?;
        std::fs::write(
            &path,
            serde_json::to_string(&Cached {
                version: VERSION,
                system: &system,
            })?,
        )?;
        Ok(system)
    }

    /// Support width of the 1-D factors: `[0, 2k-1)`.
    pub fn support_width(&self) -> f64 {
        (2 * self.k - 1) as f64
    }

    /// Trace band half-width: `θ^{(λ)}(·, -i)` vanishes for `|i|` beyond
    /// the 1-D support width.
    pub fn trace_band(&self) -> i64 {
        (2 * self.k - 1) as i64
    }

    pub fn cell_width(&self) -> f64 {
        (-(self.levels as f64)).exp2()
    }

    fn lookup(table: &[f64], depth: usize, x: f64) -> f64 {
        if x < 0.0 {
            return 0.0;
        }
        let idx = (x * (1u64 << depth) as f64).floor() as usize;
        if idx >= table.len() {
            return 0.0;
        }
        table[idx]
    }

    /// φ at the reference depth (scale-0 evaluation).
    pub fn eval_phi(&self, x: f64) -> f64 {
        Self::lookup(self.phi_cells(), self.levels as usize, x)
    }

    pub fn eval_psi(&self, x: f64) -> f64 {
        Self::lookup(self.psi_cells(), self.levels as usize, x)
    }

    fn factor_at_depth(&self, is_psi: bool, depth: usize, x: f64) -> f64 {
        let table = if is_psi {
            &self.tables_psi[depth - 1]
        } else {
            &self.tables_phi[depth - 1]
        };
        Self::lookup(table, depth, x)
    }

    /// `θ^{(λ)}(x) = Π_d φ^{(λ_d)}(x_d)` at the reference depth.
    pub fn eval_theta(&self, lambda: Lambda, x: &[f64]) -> f64 {
        let depth = self.levels as usize;
        let mut v = 1.0;
        for (d, &xd) in x.iter().enumerate() {
            v *= self.factor_at_depth(lambda.factor_is_psi(d), depth, xd);
            if v == 0.0 {
                return 0.0;
            }
        }
        v
    }

    /// `θ^{(λ)}_Q(x) = 2^{jn/2} θ^{(λ)}(2^j x − k)`, evaluated from the
    /// iterate of depth `levels − j`.
    pub fn eval_theta_q(&self, lambda: Lambda, q: &DyadicCube, x: &[f64]) -> f64 {
        let n = q.dim();
        let depth = self.depth_for(q.j);
        let scale = (q.j as f64 * n as f64 / 2.0).exp2();
        let two_j = (q.j as f64).exp2();
        let mut v = scale;
        for (d, (&xd, &kd)) in x.iter().zip(&q.k).enumerate() {
            let arg = two_j * xd - kd as f64;
            v *= self.factor_at_depth(lambda.factor_is_psi(d), depth, arg);
            if v == 0.0 {
                return 0.0;
            }
        }
        v
    }

    /// φ value at an integer argument for a cube at scale `j`, read from
    /// the depth that scale uses (the extension factor of that scale).
    pub fn phi_at_scale(&self, j: i32, arg: f64) -> f64 {
        let depth = self.depth_for(j);
        self.factor_at_depth(false, depth, arg)
    }

    /// L² norm of the self-consistency defect of the two-scale relation
    /// at the iterate's own resolution (common refinement one level
    /// finer).
    pub fn two_scale_residual_l2(&self) -> f64 {
        let refine = self.filters.refine_phi();
        let phi = self.phi_cells();
        let fine = 2 * phi.len();
        let hstep = 0.5 * self.cell_width();
        let mut acc = 0.0;
        for t in 0..fine {
            let own = phi[t / 2];
            let mut pred = 0.0;
            for (j, &cj) in refine.iter().enumerate() {
                // value of φ(2x - j) on fine cell t
                let c = t as i64 - j as i64 * (1i64 << self.levels);
                if c >= 0 && c < phi.len() as i64 {
                    pred += cj * phi[c as usize];
                }
            }
            let d = own - pred;
            acc += d * d * hstep;
        }
        acc.sqrt()
    }

    /// Riemann moment `Σ_cells ψ_c (x_c)^γ Δx` with left endpoints; the
    /// filter algebra makes it vanish exactly for `γ < k`.
    pub fn psi_moment(&self, gamma: u32) -> f64 {
        let h = self.cell_width();
        self.psi_cells()
            .iter()
            .enumerate()
            .map(|(t, &v)| v * (t as f64 * h).powi(gamma as i32) * h)
            .sum()
    }

    pub fn phi_integral(&self) -> f64 {
        let h = self.cell_width();
        self.phi_cells().iter().sum::<f64>() * h
    }
}

/// Smallest-|k0| integer with `|φ(-k0)|` above a tenth of the sup,
/// nonnegative preferred on ties; returns `(k0, φ(-k0))`.
pub fn find_k0(system: &WaveletSystem) -> Result<(i64, f64)> {
    let peak = system.phi_cells().iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let width = 2 * system.k as i64 - 1;
    let mut candidates: Vec<i64> = Vec::new();
    for a in 0..width {
        candidates.push(a); // |k0| = a with k0 = +a means φ(-a)… order below
    }
    // order by (|k0|, nonnegative first): 0, 1, -1, 2, -2, …
    let mut order: Vec<i64> = vec![0];
    for a in 1..=width {
        order.push(a);
        order.push(-a);
    }
    let _ = candidates;
    for &k0 in &order {
        let x = -k0 as f64;
        let v = system.eval_phi(x);
        if v.abs() > 0.1 * peak {
            return Ok((k0, v));
        }
    }
    Err(Error::Wavelet(
        "no integer point carries a significant φ value".into(),
    ))
}

/// A function sampled on a uniform grid (cell values, half-open cells).
#[derive(Clone, Debug)]
pub struct SampledFunction {
    pub n: usize,
    pub m: usize,
    pub origin: Vec<f64>,
    pub step: f64,
    pub shape: Vec<usize>,
    /// flattened row-major, `m` components per grid cell
    pub values: Vec<C64>,
}

impl SampledFunction {
    pub fn zeros(n: usize, m: usize, origin: Vec<f64>, step: f64, shape: Vec<usize>) -> Self {
        let total: usize = shape.iter().product();
        SampledFunction {
            n,
            m,
            origin,
            step,
            shape,
            values: vec![C64::new(0.0, 0.0); total * m],
        }
    }

    pub fn len_cells(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut rem = flat;
        let mut idx = vec![0usize; self.n];
        for d in (0..self.n).rev() {
            idx[d] = rem % self.shape[d];
            rem /= self.shape[d];
        }
        idx.iter()
            .zip(&self.origin)
            .map(|(&i, &o)| o + i as f64 * self.step)
            .collect()
    }

    pub fn component(&self, flat: usize, c: usize) -> C64 {
        self.values[flat * self.m + c]
    }

    pub fn component_mut(&mut self, flat: usize, c: usize) -> &mut C64 {
        &mut self.values[flat * self.m + c]
    }

    pub fn fill(&mut self, f: impl Fn(&[f64]) -> Vec<C64>) {
        for flat in 0..self.len_cells() {
            let x = self.point(flat);
            let v = f(&x);
            for c in 0..self.m {
                self.values[flat * self.m + c] = v[c];
            }
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

/// Wavelet coefficients: finite map `(λ, Q) → C^m`.
#[derive(Clone, Debug, Default)]
pub struct WaveletCoeffs {
    pub n: usize,
    pub m: usize,
    pub entries: BTreeMap<(Lambda, DyadicCube), Vec<C64>>,
}

impl WaveletCoeffs {
    pub fn new(n: usize, m: usize) -> Self {
        WaveletCoeffs {
            n,
            m,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, lambda: Lambda, q: DyadicCube, v: Vec<C64>) {
        self.entries.insert((lambda, q), v);
    }

    /// Largest coefficient distance to another set (union support).
    pub fn max_abs_diff(&self, other: &WaveletCoeffs) -> f64 {
        let zero = vec![C64::new(0.0, 0.0); self.m];
        let mut worst = 0.0f64;
        for key in self.entries.keys().chain(other.entries.keys()) {
            let a = self.entries.get(key).unwrap_or(&zero);
            let b = other.entries.get(key).unwrap_or(&zero);
            for (x, y) in a.iter().zip(b) {
                worst = worst.max((x - y).norm());
            }
        }
        worst
    }
}

/// JSON row: the coefficient-sequence schema plus a `lambda` field.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WaveletCoeffEntry {
    pub lambda: Vec<u8>,
    pub cube: DyadicCube,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl WaveletCoeffs {
    pub fn to_entries(&self) -> Vec<WaveletCoeffEntry> {
        self.entries
            .iter()
            .map(|((l, q), v)| WaveletCoeffEntry {
                lambda: l.bits(self.n),
                cube: q.clone(),
                re: v.iter().map(|z| z.re).collect(),
                im: v.iter().map(|z| z.im).collect(),
            })
            .collect()
    }
}

/// `⟨f, θ^{(λ)}_Q⟩` over the window by Riemann sums on `f`'s grid.
///
/// The grid must resolve the finest window scale with two levels to
/// spare, and the system's own resolution must cover the coarsest scale.
pub fn analyze(
    f: &SampledFunction,
    system: &WaveletSystem,
    window: &LatticeWindow,
) -> Result<WaveletCoeffs> {
    let needed = (-(window.j_max + 2) as f64).exp2();
    if f.step > needed {
        return Err(Error::Resolution(format!(
            "grid step {} too coarse for window scale {} (need ≤ {})",
            f.step, window.j_max, needed
        )));
    }
    if window.j_max >= system.levels as i32
        || window.j_min < system.levels as i32 - system.depth_max() as i32
    {
        return Err(Error::Resolution(format!(
            "window scales [{}, {}] outside the system's evaluable range",
            window.j_min, window.j_max
        )));
    }
    let mut jobs: Vec<(Lambda, DyadicCube)> = Vec::new();
    for lambda in Lambda::all(f.n) {
        for q in window.cubes(f.n) {
            jobs.push((lambda, q));
        }
    }
    let cell_vol = f.step.powi(f.n as i32);
    let results = exec::map_collect(&jobs, |(lambda, q)| {
        let mut acc = vec![C64::new(0.0, 0.0); f.m];
        // restrict to the support box of θ_Q: x ∈ x_Q + [0, width·ℓ)
        let width = system.support_width();
        let l = q.edge();
        let xq = q.corner();
        let mut ranges = Vec::with_capacity(f.n);
        for d in 0..f.n {
            let lo = ((xq[d] - f.origin[d]) / f.step).ceil().max(0.0) as usize;
            let hi = (((xq[d] + width * l - f.origin[d]) / f.step).ceil() as usize)
                .min(f.shape[d]);
            if lo >= hi {
                return (*lambda, q.clone(), acc);
            }
            ranges.push((lo, hi));
        }
        let mut idx: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        'outer: loop {
            let mut flat = 0usize;
            for d in 0..f.n {
                flat = flat * f.shape[d] + idx[d];
            }
            let x = f.point(flat);
            let tv = system.eval_theta_q(*lambda, q, &x);
            if tv != 0.0 {
                for c in 0..f.m {
                    acc[c] += f.component(flat, c) * tv * cell_vol;
                }
            }
            let mut d = f.n;
            loop {
                if d == 0 {
                    break 'outer;
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < ranges[d].1 {
                    break;
                }
                idx[d] = ranges[d].0;
            }
        }
        (*lambda, q.clone(), acc)
    });
    let mut out = WaveletCoeffs::new(f.n, f.m);
    for (lambda, q, v) in results {
        if v.iter().any(|z| z.norm() > 0.0) {
            out.insert(lambda, q, v);
        }
    }
    Ok(out)
}

/// `Σ t^{(λ)}_Q θ^{(λ)}_Q` sampled on the requested grid.
pub fn synthesize(
    coeffs: &WaveletCoeffs,
    system: &WaveletSystem,
    origin: Vec<f64>,
    step: f64,
    shape: Vec<usize>,
) -> SampledFunction {
    let mut out = SampledFunction::zeros(coeffs.n, coeffs.m, origin, step, shape);
    for ((lambda, q), v) in &coeffs.entries {
        let width = system.support_width();
        let l = q.edge();
        let xq = q.corner();
        let mut ranges = Vec::with_capacity(out.n);
        let mut empty = false;
        for d in 0..out.n {
            let lo = ((xq[d] - out.origin[d]) / out.step).ceil().max(0.0) as usize;
            let hi = (((xq[d] + width * l - out.origin[d]) / out.step).ceil() as usize)
                .min(out.shape[d]);
            if lo >= hi {
                empty = true;
                break;
            }
            ranges.push((lo, hi));
        }
        if empty {
            continue;
        }
        let mut idx: Vec<usize> = ranges.iter().map(|r| r.0).collect();
        'outer: loop {
            let mut flat = 0usize;
            for d in 0..out.n {
                flat = flat * out.shape[d] + idx[d];
            }
            let x = out.point(flat);
            let tv = system.eval_theta_q(*lambda, q, &x);
            if tv != 0.0 {
                for c in 0..out.m {
                    *out.component_mut(flat, c) += v[c] * tv;
                }
            }
            let mut d = out.n;
            loop {
                if d == 0 {
                    break 'outer;
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < ranges[d].1 {
                    break;
                }
                idx[d] = ranges[d].0;
            }
        }
    }
    out
}

/// The band-limited pair `(φ̂, ψ̂)`: a fixed smooth radial bump supported
/// on the octave annulus and its partition-normalized partner, so that
/// `Σ_j φ̂(2^jξ) ψ̂(2^jξ) = 1` away from the origin.
#[derive(Clone, Debug)]
pub struct BandlimitedPair {
    pub mesh: Vec<f64>,
    pub phi_hat_mesh: Vec<f64>,
    pub psi_hat_mesh: Vec<f64>,
}

/// `exp(1 − 1/(1−u²))` on `|u| < 1`, zero outside: value 1 at `u = 0`.
fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    }
}

/// Radial `φ̂(ξ) = bump(log2 |ξ|)`: supported on `1/2 ≤ |ξ| ≤ 2`,
/// positive on `3/5 ≤ |ξ| ≤ 5/3`.
pub fn phi_hat(xi: f64) -> f64 {
    let r = xi.abs();
    if r <= 0.0 {
        return 0.0;
    }
    bump(r.log2())
}

fn dyadic_sum_sq(xi: f64) -> f64 {
    // only j with 2^j |ξ| ∈ (1/2, 2) contribute: at most 2–3 terms
    let r = xi.abs();
    let l = r.log2();
    let j_lo = (-1.0 - l).ceil() as i32;
    let j_hi = (1.0 - l).floor() as i32;
    let mut s = 0.0;
    for j in j_lo..=j_hi {
        let v = phi_hat((j as f64).exp2() * r);
        s += v * v;
    }
    s
}

/// `ψ̂(ξ) = φ̂(ξ) / Σ_j |φ̂(2^jξ)|²`.
pub fn psi_hat(xi: f64) -> f64 {
    let p = phi_hat(xi);
    if p == 0.0 {
        return 0.0;
    }
    p / dyadic_sum_sq(xi)
}

/// `Σ_j φ̂(2^jξ) ψ̂(2^jξ)` evaluated on the contributing octaves.
pub fn cond3_sum(xi: f64) -> f64 {
    let r = xi.abs();
    let l = r.log2();
    let j_lo = (-1.0 - l).ceil() as i32;
    let j_hi = (1.0 - l).floor() as i32;
    let mut s = 0.0;
    for j in j_lo..=j_hi {
        let arg = (j as f64).exp2() * r;
        s += phi_hat(arg) * psi_hat(arg);
    }
    s
}

/// Builds the pair on a log-frequency mesh covering at least 4 octaves
/// around `|ξ| = 1` and verifies the defining conditions.
pub fn build_bandlimited_pair(points_per_octave: usize, octaves: usize) -> Result<BandlimitedPair> {
    if octaves < 4 {
        return Err(Error::InvalidParameter(
            "mesh must cover at least 4 octaves".into(),
        ));
    }
    let half = octaves as f64 / 2.0;
    let total = points_per_octave * octaves;
    let mesh: Vec<f64> = (0..=total)
        .map(|i| (-half + i as f64 / points_per_octave as f64).exp2())
        .collect();
    let phi_hat_mesh: Vec<f64> = mesh.iter().map(|&x| phi_hat(x)).collect();
    let psi_hat_mesh: Vec<f64> = mesh.iter().map(|&x| psi_hat(x)).collect();
    for &xi in &mesh {
        if dyadic_sum_sq(xi) <= 0.0 {
            return Err(Error::Wavelet(format!("octave cover vanishes at ξ={xi}")));
        }
        let res = (cond3_sum(xi) - 1.0).abs();
        if res > 1e-10 {
            return Err(Error::Wavelet(format!(
                "partition-of-unity residual {res:.3e} at ξ={xi}"
            )));
        }
    }
    Ok(BandlimitedPair {
        mesh,
        phi_hat_mesh,
        psi_hat_mesh,
    })
}
