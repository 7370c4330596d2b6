//! Finitely supported coefficient sequences and the discrete
//! Besov/Triebel–Lizorkin sequence norms.
//!
//! A sequence `t = {t_Q}` induces layer functions
//! `t_j = Σ_{Q ∈ D_j} |Q|^{-1/2} 1_Q t_Q`; the norms feed the scalar
//! magnitudes `2^{js} |W^{1/p} t_j|` through the `LA` functional: an
//! inner B- or F-aggregation over scales `j ≥ j_P` restricted to `P`,
//! then a supremum over located cubes `P` divided by `υ(P)`.
//!
//! Integrals of the piecewise-constant layers are exact in the cell
//! measure; only a varying weight factor is sampled by midpoint
//! quadrature. The sup over `P` runs over the window cubes plus one
//! synthetic whole-window super-cube (evaluated through a same-volume
//! proxy cube for `υ`) so that single-coefficient closed forms match
//! hand computation.

use crate::error::{Error, Result};
use crate::exec;
use crate::growth::GrowthFunction;
use crate::lattice::{contains, AxisBox, DyadicCube, LatticeWindow};
use crate::linalg::C64;
use crate::matweight::{MatrixWeight, ReducingFamily};
use crate::quad::QuadratureSpec;
use rand::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Besov (`B`) or Triebel–Lizorkin (`F`) aggregation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    B,
    F,
}

/// Space indices. `q = f64::INFINITY` selects the sup modification.
#[derive(Clone, Debug)]
pub struct SpaceParams {
    pub family: Family,
    pub s: f64,
    pub p: f64,
    pub q: f64,
    pub n: usize,
    pub m: usize,
    pub upsilon: GrowthFunction,
}

impl SpaceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p.is_finite()) {
            return Err(Error::InvalidParameter("p must lie in (0, ∞)".into()));
        }
        if !(self.q > 0.0) {
            return Err(Error::InvalidParameter("q must lie in (0, ∞]".into()));
        }
        if !self.upsilon.class.admissible(self.n) {
            return Err(Error::InvalidParameter(format!(
                "growth class {:?} outside the admissible range",
                self.upsilon.class
            )));
        }
        Ok(())
    }
}

/// Finitely supported map `DyadicCube → C^m`.
#[derive(Clone, Debug, Default)]
pub struct CoeffSequence {
    pub m: usize,
    pub entries: BTreeMap<DyadicCube, Vec<C64>>,
}

impl CoeffSequence {
    pub fn new(m: usize) -> Self {
        CoeffSequence {
            m,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, q: DyadicCube, v: Vec<C64>) {
        debug_assert_eq!(v.len(), self.m);
        self.entries.insert(q, v);
    }

    pub fn scalar(entries: &[(DyadicCube, f64)]) -> Self {
        let mut t = CoeffSequence::new(1);
        for (q, v) in entries {
            t.insert(q.clone(), vec![C64::new(*v, 0.0)]);
        }
        t
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn scale(&self, c: C64) -> CoeffSequence {
        CoeffSequence {
            m: self.m,
            entries: self
                .entries
                .iter()
                .map(|(q, v)| (q.clone(), v.iter().map(|z| z * c).collect()))
                .collect(),
        }
    }

    pub fn add(&self, other: &CoeffSequence) -> CoeffSequence {
        let mut out = self.clone();
        for (q, v) in &other.entries {
            out.entries
                .entry(q.clone())
                .and_modify(|u| {
                    for (a, b) in u.iter_mut().zip(v) {
                        *a += b;
                    }
                })
                .or_insert_with(|| v.clone());
        }
        out
    }

    pub fn support_scales(&self) -> BTreeSet<i32> {
        self.entries.keys().map(|q| q.j).collect()
    }
}

/// JSON row of the sequence schema.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoeffEntry {
    pub cube: DyadicCube,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl CoeffSequence {
    pub fn to_entries(&self) -> Vec<CoeffEntry> {
        self.entries
            .iter()
            .map(|(q, v)| CoeffEntry {
                cube: q.clone(),
                re: v.iter().map(|z| z.re).collect(),
                im: v.iter().map(|z| z.im).collect(),
            })
            .collect()
    }

    pub fn from_entries(rows: &[CoeffEntry]) -> Result<Self> {
        let m = rows.first().map(|r| r.re.len()).unwrap_or(1);
        let mut t = CoeffSequence::new(m);
        for r in rows {
            if r.re.len() != m || r.im.len() != m {
                return Err(Error::Config("inconsistent vector sizes".into()));
            }
            let v = r
                .re
                .iter()
                .zip(&r.im)
                .map(|(&a, &b)| C64::new(a, b))
                .collect();
            t.insert(r.cube.clone(), v);
        }
        Ok(t)
    }
}

/// The scale-`j` layer `t_j = Σ_{Q ∈ D_j} |Q|^{-1/2} 1_Q t_Q`,
/// stored as the scaled cell values.
#[derive(Clone, Debug)]
pub struct LayerFunction {
    pub j: i32,
    pub cells: Vec<(DyadicCube, Vec<C64>)>,
}

impl LayerFunction {
    pub fn eval(&self, x: &[f64]) -> Vec<C64> {
        for (q, v) in &self.cells {
            if q.contains_point(x) {
                return v.clone();
            }
        }
        vec![C64::new(0.0, 0.0); self.cells.first().map(|(_, v)| v.len()).unwrap_or(0)]
    }
}

/// Exact piecewise-constant assembly of the scale-`j` layer.
pub fn layer(t: &CoeffSequence, j: i32) -> LayerFunction {
    let mut cells = Vec::new();
    for (q, v) in &t.entries {
        if q.j == j {
            let norm = q.volume().sqrt().recip();
            cells.push((q.clone(), v.iter().map(|z| z * norm).collect()));
        }
    }
    LayerFunction { j, cells }
}

/// One integration cell of a scalar layer stack. `layer_j` is the scale
/// of the originating layer; `cell` the dyadic cell of integration.
#[derive(Clone, Debug)]
pub struct LayerCell {
    pub layer_j: i32,
    pub cell: DyadicCube,
    pub data: CellData,
}

#[derive(Clone, Debug)]
pub enum CellData {
    /// Constant magnitude on the cell.
    Const(f64),
    /// Midpoint-sampled magnitudes with matching weights (sum = |cell|).
    Nodes { vals: Vec<f64>, wts: Vec<f64> },
}

/// Scalar layer magnitudes refined to a common (finest-support) scale,
/// ready for the `LA` functional.
#[derive(Clone, Debug, Default)]
pub struct ScalarLayers {
    pub cells: Vec<LayerCell>,
}

/// The located cube of the outer supremum: a window cube or the
/// synthetic whole-window super-cube.
#[derive(Clone, Debug)]
pub enum SupCube {
    Dyadic(DyadicCube),
    WholeWindow,
}

fn cell_in_sup(cell: &DyadicCube, p: &SupCube, window: &LatticeWindow) -> bool {
    match p {
        SupCube::Dyadic(pc) => contains(pc, cell).unwrap_or(false),
        SupCube::WholeWindow => window.extent(cell.dim()).contains_box(&cell.as_box()),
    }
}

fn sup_scale(p: &SupCube, window: &LatticeWindow, min_support: i32) -> i32 {
    match p {
        SupCube::Dyadic(pc) => pc.j,
        SupCube::WholeWindow => window.j_min.min(min_support),
    }
}

fn upsilon_at(upsilon: &GrowthFunction, p: &SupCube, window: &LatticeWindow, n: usize) -> f64 {
    match p {
        SupCube::Dyadic(pc) => upsilon.eval(pc),
        SupCube::WholeWindow => {
            // same-volume proxy cube cornered at the origin
            let proxy = DyadicCube::new(-(window.extent_log2 + 1), vec![0; n]);
            upsilon.eval(&proxy)
        }
    }
}

/// Inner `LA` seminorm at one located cube: B-aggregation
/// `(Σ_{j≥j_P} ‖f_j 1_P‖_p^q)^{1/q}` or F-aggregation
/// `‖(Σ_{j≥j_P} |f_j|^q)^{1/q} 1_P‖_p`, with the sup modification at
/// `q = ∞`. Not divided by `υ(P)`.
pub fn la_seminorm_at(
    layers: &ScalarLayers,
    family: Family,
    p: f64,
    q: f64,
    sup: &SupCube,
    window: &LatticeWindow,
) -> f64 {
    let min_support = layers
        .cells
        .iter()
        .map(|c| c.layer_j)
        .min()
        .unwrap_or(window.j_min);
    let j_cut = sup_scale(sup, window, min_support);
    let included: Vec<&LayerCell> = layers
        .cells
        .iter()
        .filter(|c| c.layer_j >= j_cut && cell_in_sup(&c.cell, sup, window))
        .collect();
    if included.is_empty() {
        return 0.0;
    }
    match family {
        Family::B => {
            let mut mass: BTreeMap<i32, f64> = BTreeMap::new();
            for c in &included {
                let m = match &c.data {
                    CellData::Const(v) => v.powf(p) * c.cell.volume(),
                    CellData::Nodes { vals, wts } => vals
                        .iter()
                        .zip(wts)
                        .map(|(v, w)| w * v.powf(p))
                        .sum(),
                };
                *mass.entry(c.layer_j).or_insert(0.0) += m;
            }
            let terms: Vec<f64> = mass.values().map(|m| m.powf(1.0 / p)).collect();
            if q.is_infinite() {
                terms.into_iter().fold(0.0, f64::max)
            } else {
                terms
                    .into_iter()
                    .map(|t| t.powf(q))
                    .sum::<f64>()
                    .powf(1.0 / q)
            }
        }
        Family::F => {
            // group by finest cell; stacks mix layers pointwise
            let mut groups: BTreeMap<&DyadicCube, Vec<&LayerCell>> = BTreeMap::new();
            for c in &included {
                groups.entry(&c.cell).or_default().push(c);
            }
            let mut total = 0.0;
            for (cube, stack) in groups {
                let any_nodes = stack
                    .iter()
                    .any(|c| matches!(c.data, CellData::Nodes { .. }));
                if !any_nodes {
                    let inner = mix_q(
                        stack.iter().map(|c| match &c.data {
                            CellData::Const(v) => *v,
                            _ => unreachable!(),
                        }),
                        q,
                    );
                    total += inner.powf(p) * cube.volume();
                } else {
                    // align node layouts: all Nodes variants of a cell share
                    // the midpoint layout of the cell
                    let (nn, wts) = stack
                        .iter()
                        .find_map(|c| match &c.data {
                            CellData::Nodes { vals, wts } => Some((vals.len(), wts.clone())),
                            _ => None,
                        })
                        .expect("stack has a Nodes member");
                    for i in 0..nn {
                        let inner = mix_q(
                            stack.iter().map(|c| match &c.data {
                                CellData::Const(v) => *v,
                                CellData::Nodes { vals, .. } => vals[i],
                            }),
                            q,
                        );
                        total += wts[i] * inner.powf(p);
                    }
                }
            }
            total.powf(1.0 / p)
        }
    }
}

fn mix_q(vals: impl Iterator<Item = f64>, q: f64) -> f64 {
    if q.is_infinite() {
        vals.fold(0.0, f64::max)
    } else {
        vals.map(|v| v.powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

/// The full `LA` norm: sup over window cubes and the synthetic
/// whole-window super-cube of the inner seminorm divided by `υ(P)`.
pub fn la_norm(
    layers: &ScalarLayers,
    family: Family,
    p: f64,
    q: f64,
    upsilon: &GrowthFunction,
    window: &LatticeWindow,
    n: usize,
) -> f64 {
    if layers.cells.is_empty() {
        return 0.0;
    }
    let mut sups: Vec<SupCube> = window.cubes(n).into_iter().map(SupCube::Dyadic).collect();
    sups.push(SupCube::WholeWindow);
    exec::map_max(&sups, |sc| {
        let semi = la_seminorm_at(layers, family, p, q, sc, window);
        if semi == 0.0 {
            0.0
        } else {
            semi / upsilon_at(upsilon, sc, window, n)
        }
    })
}

/// Refines the support of `t` to its finest scale and attaches scalar
/// magnitudes per cell via `magnitude(support_cube, cell) -> CellData`.
fn refine_layers(
    t: &CoeffSequence,
    mut magnitude: impl FnMut(&DyadicCube, &Vec<C64>, &DyadicCube) -> Result<CellData>,
) -> Result<ScalarLayers> {
    let j_fin = t.entries.keys().map(|q| q.j).max().unwrap_or(0);
    let mut cells = Vec::new();
    for (q, v) in &t.entries {
        let mut level = vec![q.clone()];
        while level[0].j < j_fin {
            level = level.iter().flat_map(|c| c.children()).collect();
        }
        for cell in level {
            cells.push(LayerCell {
                layer_j: q.j,
                cell: cell.clone(),
                data: magnitude(q, v, &cell)?,
            });
        }
    }
    Ok(ScalarLayers { cells })
}

fn vec_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Scalar layers `2^{js} |W^{1/p} t_j|` of a sequence, refined to the
/// finest support scale. The weight factor is midpoint-sampled per cell;
/// identity weights take the exact constant path.
pub fn weighted_layers(
    t: &CoeffSequence,
    w: &MatrixWeight,
    params: &SpaceParams,
    quad: &QuadratureSpec,
) -> Result<ScalarLayers> {
    if w.m != t.m {
        return Err(Error::DimensionMismatch(format!(
            "weight size {} vs sequence size {}",
            w.m, t.m
        )));
    }
    let identity = w.is_identity();
    refine_layers(t, |q, v, cell| {
        let amp = (q.j as f64 * params.s).exp2() / q.volume().sqrt();
        if identity {
            return Ok(CellData::Const(amp * vec_norm(v)));
        }
        let nodes = quad.tensor_nodes(&cell.as_box());
        let mut vals = Vec::with_capacity(nodes.len());
        let mut wts = Vec::with_capacity(nodes.len());
        for (x, wt) in nodes {
            let wp = w.eval_power(&x, 1.0 / params.p)?;
            vals.push(amp * vec_norm(&wp.apply(v)));
            wts.push(wt);
        }
        Ok(CellData::Nodes { vals, wts })
    })
}

/// `‖t‖` in the matrix-weighted sequence space.
pub fn weighted_norm(
    t: &CoeffSequence,
    w: &MatrixWeight,
    params: &SpaceParams,
    window: &LatticeWindow,
    quad: &QuadratureSpec,
) -> Result<f64> {
    params.validate()?;
    if t.is_empty() {
        return Ok(0.0);
    }
    let layers = weighted_layers(t, w, params, quad)?;
    Ok(la_norm(
        &layers,
        params.family,
        params.p,
        params.q,
        &params.upsilon,
        window,
        params.n,
    ))
}

/// The norm together with its per-located-cube breakdown
/// (`None` marks the synthetic whole-window super-cube).
pub fn la_norm_breakdown(
    layers: &ScalarLayers,
    family: Family,
    p: f64,
    q: f64,
    upsilon: &GrowthFunction,
    window: &LatticeWindow,
    n: usize,
) -> (f64, Vec<(Option<DyadicCube>, f64)>) {
    if layers.cells.is_empty() {
        return (0.0, Vec::new());
    }
    let mut sups: Vec<SupCube> = window.cubes(n).into_iter().map(SupCube::Dyadic).collect();
    sups.push(SupCube::WholeWindow);
    let rows = exec::map_collect(&sups, |sc| {
        let semi = la_seminorm_at(layers, family, p, q, sc, window);
        let v = if semi == 0.0 {
            0.0
        } else {
            semi / upsilon_at(upsilon, sc, window, n)
        };
        let label = match sc {
            SupCube::Dyadic(c) => Some(c.clone()),
            SupCube::WholeWindow => None,
        };
        (label, v)
    });
    let norm = rows.iter().map(|(_, v)| *v).fold(0.0, f64::max);
    (norm, rows)
}

/// Averaging norm: the constant matrix `A_Q` replaces `W^{1/p}(x)` on
/// each cell.
pub fn averaging_norm(
    t: &CoeffSequence,
    fam: &ReducingFamily,
    params: &SpaceParams,
    window: &LatticeWindow,
) -> Result<f64> {
    params.validate()?;
    if t.is_empty() {
        return Ok(0.0);
    }
    let layers = refine_layers(t, |q, v, _cell| {
        let a_q = fam.get(q)?;
        let amp = (q.j as f64 * params.s).exp2() / q.volume().sqrt();
        Ok(CellData::Const(amp * vec_norm(&a_q.apply(v))))
    })?;
    Ok(la_norm(
        &layers,
        params.family,
        params.p,
        params.q,
        &params.upsilon,
        window,
        params.n,
    ))
}

/// Norm with `1_Q` replaced by `|E_Q|^{-1/2} 1_{E_Q}` for sub-boxes
/// `E_Q ⊆ Q`. Exact in both families: the F-family splits the finest
/// support cells at the participating box cuts, where the integrand is
/// constant.
pub fn eq_set_norm(
    t: &CoeffSequence,
    e_sets: &BTreeMap<DyadicCube, AxisBox>,
    params: &SpaceParams,
    window: &LatticeWindow,
) -> Result<f64> {
    params.validate()?;
    if t.is_empty() {
        return Ok(0.0);
    }
    if t.m != 1 {
        return Err(Error::InvalidParameter(
            "E_Q-set norms are defined for scalar sequences".into(),
        ));
    }
    // validate and collect (cube, region, scaled magnitude)
    let mut boxes = Vec::new();
    for (q, v) in &t.entries {
        let e = e_sets
            .get(q)
            .ok_or_else(|| Error::InvalidParameter(format!("missing E_Q for {q}")))?;
        let vol = e.volume();
        if vol <= 0.0 {
            return Err(Error::Degenerate(format!("|E_Q| = 0 for {q}")));
        }
        if !q.as_box().contains_box(e) {
            return Err(Error::InvalidParameter(format!(
                "E_Q is not a sub-box of {q}"
            )));
        }
        let amp = (q.j as f64 * params.s).exp2() / vol.sqrt();
        boxes.push((q.clone(), e.clone(), amp * vec_norm(v)));
    }
    let min_support = boxes.iter().map(|(q, _, _)| q.j).min().unwrap();
    let mut sups: Vec<SupCube> = window
        .cubes(params.n)
        .into_iter()
        .map(SupCube::Dyadic)
        .collect();
    sups.push(SupCube::WholeWindow);
    let value = exec::map_max(&sups, |sc| {
        let j_cut = sup_scale(sc, window, min_support);
        let included: Vec<&(DyadicCube, AxisBox, f64)> = boxes
            .iter()
            .filter(|(q, _, _)| q.j >= j_cut && cell_in_sup(q, sc, window))
            .collect();
        if included.is_empty() {
            return 0.0;
        }
        let semi = match params.family {
            Family::B => {
                let mut mass: BTreeMap<i32, f64> = BTreeMap::new();
                for (q, e, v) in &included {
                    *mass.entry(q.j).or_insert(0.0) += v.powf(params.p) * e.volume();
                }
                let terms = mass.values().map(|m| m.powf(1.0 / params.p));
                if params.q.is_infinite() {
                    terms.fold(0.0, f64::max)
                } else {
                    terms
                        .map(|t| t.powf(params.q))
                        .sum::<f64>()
                        .powf(1.0 / params.q)
                }
            }
            Family::F => {
                // exact: split the finest support cells at the box cuts,
                // where the stack of indicators is constant
                let j_s = included.iter().map(|(q, _, _)| q.j).max().unwrap();
                let mut covers: BTreeSet<DyadicCube> = BTreeSet::new();
                for (q, _, _) in &included {
                    let mut level = vec![(*q).clone()];
                    while level[0].j < j_s {
                        level = level.iter().flat_map(|c| c.children()).collect();
                    }
                    covers.extend(level);
                }
                let n = params.n;
                let mut total = 0.0;
                for cell in covers {
                    let cb = cell.as_box();
                    // per-axis cut coordinates inside the cell
                    let mut cuts: Vec<Vec<f64>> = (0..n)
                        .map(|d| {
                            let mut c = vec![cb.lo[d], cb.hi[d]];
                            for (_, e, _) in &included {
                                for v in [e.lo[d], e.hi[d]] {
                                    if v > cb.lo[d] && v < cb.hi[d] {
                                        c.push(v);
                                    }
                                }
                            }
                            c.sort_by(|a, b| a.partial_cmp(b).unwrap());
                            c.dedup();
                            c
                        })
                        .collect();
                    let counts: Vec<usize> = cuts.iter().map(|c| c.len() - 1).collect();
                    let mut idx = vec![0usize; n];
                    'sub: loop {
                        let mut vol = 1.0;
                        let mut mid = Vec::with_capacity(n);
                        for d in 0..n {
                            let (a, b) = (cuts[d][idx[d]], cuts[d][idx[d] + 1]);
                            vol *= b - a;
                            mid.push(0.5 * (a + b));
                        }
                        let inner = mix_q(
                            included.iter().filter_map(|(_, e, v)| {
                                if e.contains_point(&mid) {
                                    Some(*v)
                                } else {
                                    None
                                }
                            }),
                            params.q,
                        );
                        if inner > 0.0 {
                            total += vol * inner.powf(params.p);
                        }
                        let mut d = 0;
                        loop {
                            if d == n {
                                break 'sub;
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
                total.powf(1.0 / params.p)
            }
        };
        if semi == 0.0 {
            0.0
        } else {
            semi / upsilon_at(&params.upsilon, sc, window, params.n)
        }
    });
    Ok(value)
}

/// Random finitely supported sequence: complex Gaussian coefficients on
/// cubes drawn uniformly from the window.
pub fn random_sequence(
    window: &LatticeWindow,
    n: usize,
    m: usize,
    support: usize,
    rng: &mut impl Rng,
) -> CoeffSequence {
    let cubes = window.cubes(n);
    let mut t = CoeffSequence::new(m);
    for _ in 0..support {
        let q = cubes[rng.gen_range(0..cubes.len())].clone();
        let v = (0..m)
            .map(|_| {
                C64::new(
                    crate::matweight::standard_normal(rng),
                    crate::matweight::standard_normal(rng),
                )
            })
            .collect();
        t.insert(q, v);
    }
    t
}
