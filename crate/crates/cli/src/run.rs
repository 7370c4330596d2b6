//! Experiment runners and report emission.
//!
//! Every run writes `report.json`, `tables.csv`, and `plot.csv` into the
//! output directory. Reports embed the resolved spec, the tool version,
//! and every seed and grid parameter that shaped a number, and are
//! byte-identical for a fixed `(spec, seed)` on one platform.

use crate::spec::ExperimentSpec;
use anyhow::{anyhow, bail, Context, Result};
use dms_core::almostdiag::{
    certify, empirical_boundedness, thresholds, AdEnvelope, OperatorMatrix, Thresholds,
};
use dms_core::growth::GrowthFunction;
use dms_core::lattice::LatticeWindow;
use dms_core::matweight::{
    apinf_characteristic, dimension_estimate, DimensionSide, MatrixWeight,
};
use dms_core::molecules::MoleculeGrid;
use dms_core::operators::{
    cz_molecule_recipe, czk_condition_residuals, czo_atom_image_experiment, ext_coeffs_scaled,
    psi_q_reference, psido_apply, psido_molecule_experiment, symbol_class_residual, trace_coeffs,
    trace_norm_experiment, trace_smoothing_index, wavelet_family_norm, weight_compat_certificate,
    CompatDirection, PsidoGrid, TraceExperiment,
};
use dms_core::quad::QuadratureSpec;
use dms_core::seqspace::{
    la_norm_breakdown, random_sequence, weighted_layers, weighted_norm, CoeffSequence, Family,
    SpaceParams,
};
use dms_core::wavelets::{
    cond3_sum, find_k0, Lambda, WaveletCoeffs, WaveletSystem,
};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde_json::{json, Map, Value};
use std::path::Path;

pub struct RunOutcome {
    pub report: Value,
    pub tables_csv: String,
    pub plot_csv: String,
    /// precondition warnings: exit code 2
    pub warnings: Vec<String>,
}

pub fn version_string() -> String {
    let base = env!("CARGO_PKG_VERSION");
    let git = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string());
    match git {
        Some(g) if !g.is_empty() => format!("{base}+g{g}"),
        _ => base.to_string(),
    }
}

fn spec_value(spec: &ExperimentSpec) -> Value {
    serde_json::to_value(spec).unwrap_or(Value::Null)
}

fn envelope_report(kind: &str, spec: &ExperimentSpec, body: Map<String, Value>) -> Value {
    let mut top = Map::new();
    top.insert("version".into(), json!(version_string()));
    top.insert("kind".into(), json!(kind));
    top.insert("spec".into(), spec_value(spec));
    for (k, v) in body {
        top.insert(k, v);
    }
    Value::Object(top)
}

fn growth_of(spec: &ExperimentSpec, n: usize) -> Result<GrowthFunction> {
    match &spec.growth {
        Some(g) => Ok(g.build(n)?),
        None => Ok(GrowthFunction::one()),
    }
}

fn weight_of(spec: &ExperimentSpec, n: usize, m: usize) -> Result<MatrixWeight> {
    match &spec.weight {
        Some(w) => Ok(w.build(n)?),
        None => Ok(MatrixWeight::identity(n, m)),
    }
}

fn space_of(spec: &ExperimentSpec) -> Result<SpaceParams> {
    let space = spec
        .space
        .as_ref()
        .ok_or_else(|| anyhow!("`space` block required"))?;
    let upsilon = growth_of(spec, space.n)?;
    space.build(upsilon)
}

/// Weight dimension estimates `(d_lower, d_upper)`; identity weights are
/// exactly zero, others are log-log slope estimates over the window.
fn dims_of(
    w: &MatrixWeight,
    p: f64,
    window: &LatticeWindow,
    quad: &QuadratureSpec,
) -> Result<(f64, f64)> {
    if w.is_identity() {
        return Ok((0.0, 0.0));
    }
    let lams = [1.0, 2.0, 4.0];
    let lower = dimension_estimate(w, p, window, &lams, DimensionSide::Lower, quad)?;
    let upper = dimension_estimate(w, p, window, &lams, DimensionSide::Upper, quad)?;
    // lower dimension lives in [0, n)
    let cap = w.n as f64 - 1e-6;
    Ok((lower.d_hat.min(cap), upper.d_hat))
}

/// Minimal admissible wavelet order: smallest integer
/// `k > max(E* - n/2, F* - n/2)`.
pub fn minimal_wavelet_order(th: &Thresholds, n: usize) -> usize {
    let half = n as f64 / 2.0;
    let bound = (th.e_star - half).max(th.f_star - half);
    (bound.floor() as i64 + 1).max(1) as usize
}

pub fn run(spec: &ExperimentSpec, out_dir: &Path) -> Result<i32> {
    let outcome = match spec.kind.as_str() {
        "norm" => run_norm(spec)?,
        "adtest" => run_adtest(spec)?,
        "dims" => run_dims(spec)?,
        "trace" => run_trace(spec)?,
        "ext" => run_ext(spec)?,
        "psido" => run_psido(spec)?,
        "czo" => run_czo(spec)?,
        "wavelet-check" => run_wavelet_check(spec)?,
        other => bail!("unknown kind {other}"),
    };
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let mut report = outcome.report;
    if let Value::Object(map) = &mut report {
        map.insert("warnings".into(), json!(outcome.warnings));
    }
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    std::fs::write(out_dir.join("tables.csv"), outcome.tables_csv)?;
    std::fs::write(out_dir.join("plot.csv"), outcome.plot_csv)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    Ok(if outcome.warnings.is_empty() { 0 } else { 2 })
}

fn run_norm(spec: &ExperimentSpec) -> Result<RunOutcome> {
    let params = space_of(spec)?;
    let window = spec.window()?;
    let quad = spec.quad();
    let w = weight_of(spec, params.n, params.m)?;
    let mut body = Map::new();
    body.insert(
        "quad".into(),
        json!({"r": quad.r, "rule": format!("{:?}", quad.rule)}),
    );
    let mut tables = String::from("index,norm\n");
    let mut plot = String::from("cube_j,cube_k,contribution\n");
    if let Some(rows) = &spec.sequence {
        let t = CoeffSequence::from_entries(rows)?;
        let layers = weighted_layers(&t, &w, &params, &quad)?;
        let (norm, breakdown) = la_norm_breakdown(
            &layers,
            params.family,
            params.p,
            params.q,
            &params.upsilon,
            &window,
            params.n,
        );
        body.insert("norm".into(), json!(norm));
        let mut top: Vec<(Option<_>, f64)> = breakdown
            .iter()
            .filter(|(_, v)| *v > 0.0)
            .cloned()
            .collect();
        top.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        top.truncate(10);
        body.insert(
            "per_cube_top".into(),
            json!(top
                .iter()
                .map(|(c, v)| json!({
                    "cube": c.as_ref().map(|q| json!({"j": q.j, "k": q.k})).unwrap_or(json!("whole-window")),
                    "value": v
                }))
                .collect::<Vec<_>>()),
        );
        tables.push_str(&format!("0,{norm:.17e}\n"));
        for (c, v) in &breakdown {
            if *v > 0.0 {
                match c {
                    Some(q) => plot.push_str(&format!("{},{:?},{:.17e}\n", q.j, q.k, v)),
                    None => plot.push_str(&format!("window,,{v:.17e}\n")),
                }
            }
        }
    } else {
        let seed = spec.need_seed()?;
        let ens = spec.ensemble();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut norms = Vec::with_capacity(ens.size);
        for i in 0..ens.size {
            let t = random_sequence(&window, params.n, params.m, ens.support, &mut rng);
            let v = weighted_norm(&t, &w, &params, &window, &quad)?;
            norms.push(v);
            tables.push_str(&format!("{i},{v:.17e}\n"));
        }
        body.insert("norms".into(), json!(norms));
        body.insert("seed".into(), json!(seed));
    }
    Ok(RunOutcome {
        report: envelope_report("norm", spec, body),
        tables_csv: tables,
        plot_csv: plot,
        warnings: Vec::new(),
    })
}

fn run_adtest(spec: &ExperimentSpec) -> Result<RunOutcome> {
    let params = space_of(spec)?;
    let window = spec.window()?;
    let quad = spec.quad();
    let w = weight_of(spec, params.n, params.m)?;
    spec.need_seed()?;
    let ens = spec.ensemble();
    let (d_lower, d_upper) = dims_of(&w, params.p, &window, &quad)?;
    let th = thresholds(&params, d_lower, d_upper)?;
    let env = match spec.envelope {
        Some(e) => e,
        None => {
            let margin = spec.margin.unwrap_or(0.5);
            AdEnvelope {
                d: th.d_star + margin,
                e: th.e_star + margin,
                f: th.f_star + margin,
            }
        }
    };
    let identity_op = spec.operator.as_deref() == Some("identity");
    let rep = empirical_boundedness(
        |win| {
            let mut u = if identity_op {
                OperatorMatrix::identity(&win.cubes(params.n))
            } else {
                OperatorMatrix::udef_on_window(win, params.n, &env)?
            };
            certify(&mut u, &env)?;
            Ok(u)
        },
        &w,
        &params,
        &window,
        &ens,
        &quad,
    )?;
    let mut body = Map::new();
    body.insert(
        "thresholds".into(),
        json!({
            "j": th.j, "case": format!("{:?}", th.case), "delta": th.delta_cap,
            "d_star": th.d_star, "e_star": th.e_star, "f_star": th.f_star,
            "d_lower_hat": d_lower, "d_upper_hat": d_upper,
        }),
    );
    body.insert("envelope".into(), json!(env));
    body.insert("certificate".into(), json!(1.0));
    body.insert("max_ratio".into(), json!(rep.max_ratio));
    body.insert("median_ratio".into(), json!(rep.median_ratio));
    body.insert("refined_max_ratio".into(), json!(rep.refined_max_ratio));
    body.insert("drift".into(), json!(rep.drift));
    body.insert("dropped_mass_bound".into(), json!(rep.dropped_mass_bound));
    body.insert("seed".into(), json!(rep.seed));
    body.insert(
        "quad".into(),
        json!({"r": quad.r, "rule": format!("{:?}", quad.rule)}),
    );
    let mut tables = String::from("index,ratio\n");
    for (i, r) in rep.ratios.iter().enumerate() {
        tables.push_str(&format!("{i},{r:.17e}\n"));
    }
    let plot = format!(
        "j_max,max_ratio\n{},{:.17e}\n{},{:.17e}\n",
        window.j_max,
        rep.max_ratio,
        window.j_max + 1,
        rep.refined_max_ratio
    );
    Ok(RunOutcome {
        report: envelope_report("adtest", spec, body),
        tables_csv: tables,
        plot_csv: plot,
        warnings: Vec::new(),
    })
}

fn run_dims(spec: &ExperimentSpec) -> Result<RunOutcome> {
    let window = spec.window()?;
    let quad = spec.quad();
    let p = spec.p.unwrap_or(2.0);
    let wspec = spec
        .weight
        .as_ref()
        .ok_or_else(|| anyhow!("`weight` block required for dims"))?;
    let n = spec.space.as_ref().map(|s| s.n).unwrap_or(1);
    let w = wspec.build(n)?;
    let lambdas = spec
        .lambdas
        .clone()
        .unwrap_or_else(|| vec![1.0, 2.0, 4.0, 8.0]);
    let lower = dimension_estimate(&w, p, &window, &lambdas, DimensionSide::Lower, &quad)?;
    let upper = dimension_estimate(&w, p, &window, &lambdas, DimensionSide::Upper, &quad)?;
    let apinf = apinf_characteristic(&w, p, &window, &quad)?;
    let mut warnings = Vec::new();
    if let Some(msg) = &lower.warning {
        warnings.push(msg.clone());
    }
    if apinf < 1.0 - 1e-9 {
        warnings.push(format!(
            "characteristic {apinf} violates the Jensen-type lower bound 1 \
             beyond quadrature tolerance"
        ));
    }
    let mut body = Map::new();
    body.insert("estimator".into(), json!("log-log least-squares slope (not the defining infimum)"));
    body.insert("d_lower_hat".into(), json!(lower.d_hat));
    body.insert("d_upper_hat".into(), json!(upper.d_hat));
    body.insert("fit_residual_lower".into(), json!(lower.fit_residual));
    body.insert("fit_residual_upper".into(), json!(upper.fit_residual));
    body.insert("apinf_characteristic_window".into(), json!(apinf));
    body.insert("p".into(), json!(p));
    body.insert(
        "quad".into(),
        json!({"r": quad.r, "rule": format!("{:?}", quad.rule)}),
    );
    let mut tables = String::from("side,cube_j,cube_k,lambda,value\n");
    let mut plot = String::from("side,log2_lambda,log2_value\n");
    for (est, name) in [(&lower, "lower"), (&upper, "upper")] {
        for (q, lam, v) in &est.table {
            tables.push_str(&format!("{name},{},{:?},{lam},{v:.17e}\n", q.j, q.k));
            plot.push_str(&format!("{name},{:.17e},{:.17e}\n", lam.log2(), v.log2()));
        }
    }
    Ok(RunOutcome {
        report: envelope_report("dims", spec, body),
        tables_csv: tables,
        plot_csv: plot,
        warnings,
    })
}

struct TraceSetup {
    exp: TraceExperiment,
    system: std::sync::Arc<WaveletSystem>,
    k0: i64,
    d_upper_v: f64,
    warnings: Vec<String>,
}

fn trace_setup(spec: &ExperimentSpec) -> Result<TraceSetup> {
    let space = spec
        .space
        .as_ref()
        .ok_or_else(|| anyhow!("`space` block required (n = target dimension)"))?;
    let n = space.n;
    let upsilon_src = growth_of(spec, n + 1)?;
    let source = crate::spec::SpaceSpec {
        n: n + 1,
        ..space.clone()
    }
    .build(upsilon_src)?;
    let gamma = spec.gamma.unwrap_or(1.0);
    let wav = spec.wavelet.clone().unwrap_or(crate::spec::WaveletSpecCli {
        k: 2,
        levels: 10,
        force: false,
    });
    let system = std::sync::Arc::new(WaveletSystem::build(wav.k, wav.levels)?);
    let (k0, _) = find_k0(&system)?;
    let w_source = match &spec.weight {
        Some(ws) => ws.build(n + 1)?,
        None => MatrixWeight::identity(n + 1, source.m),
    };
    let v_target = match &spec.weight_target {
        Some(ws) => ws.build(n)?,
        None => MatrixWeight::identity(n, source.m),
    };
    let window_target = spec.window()?;
    let window_source = LatticeWindow::new(
        window_target.j_min,
        window_target.j_max,
        window_target.extent_log2,
    )?;
    let quad = spec.quad();
    let (_, d_upper_v) = dims_of(&v_target, source.p, &window_target, &quad)?;
    let exp = TraceExperiment {
        n,
        source,
        w_source,
        v_target,
        gamma,
        system: system.clone(),
        window_source,
        window_target,
    };
    // minimal admissible wavelet order from the source/target thresholds
    let mut warnings = Vec::new();
    let th_src = thresholds(&exp.source, 0.0, d_upper_v.max(0.0).min(f64::MAX))?;
    let th_tgt = thresholds(&exp.target_params(), 0.0, 0.0)?;
    let k_min = minimal_wavelet_order(&th_src, n + 1).max(minimal_wavelet_order(&th_tgt, n));
    if wav.k < k_min {
        if wav.force {
            warnings.push(format!(
                "wavelet order k={} below the admissible bound {k_min} (forced)",
                wav.k
            ));
        } else {
            bail!(
                "wavelet order k={} below the admissible bound {k_min}; set wavelet.force to override",
                wav.k
            );
        }
    }
    if !exp.precondition_met(d_upper_v) {
        let e = trace_smoothing_index(
            exp.source.family,
            n,
            exp.source.p,
            exp.source.q,
            exp.source.upsilon.class.delta1,
        );
        warnings.push(format!(
            "s = {} at or below the trace threshold γ/p + E + d_upper/p = {}",
            exp.source.s,
            gamma / exp.source.p + e + d_upper_v / exp.source.p
        ));
    }
    Ok(TraceSetup {
        exp,
        system,
        k0,
        d_upper_v,
        warnings,
    })
}

/// Round-trip residual of trace ∘ ext over random target-side inputs.
fn round_trip_residual(
    setup: &TraceSetup,
    ensemble: usize,
    support: usize,
    seed: u64,
) -> Result<f64> {
    let n = setup.exp.n;
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x0ddc0ffe);
    let cubes = setup.exp.window_target.cubes(n);
    let lambdas = Lambda::all(n);
    let mut worst = 0.0f64;
    for _ in 0..ensemble {
        let mut c = WaveletCoeffs::new(n, setup.exp.source.m);
        for _ in 0..support {
            let q = cubes[rng.gen_range(0..cubes.len())].clone();
            let l = lambdas[rng.gen_range(0..lambdas.len())];
            let v = (0..setup.exp.source.m)
                .map(|_| {
                    dms_core::linalg::C64::new(
                        rng.gen_range(-1.0..1.0f64),
                        rng.gen_range(-1.0..1.0f64),
                    )
                })
                .collect();
            c.insert(l, q, v);
        }
        let e = ext_coeffs_scaled(&c, &setup.system, setup.k0)?;
        let back = trace_coeffs(&e, &setup.system, &setup.exp.window_target)?;
        worst = worst.max(back.max_abs_diff(&c));
    }
    Ok(worst)
}

fn run_trace(spec: &ExperimentSpec) -> Result<RunOutcome> {
    let setup = trace_setup(spec)?;
    let seed = spec.need_seed()?;
    let ens = spec.ensemble();
    let quad = spec.quad();
    let rep = trace_norm_experiment(
        &setup.exp,
        ens.size,
        ens.support,
        seed,
        &quad,
        setup.d_upper_v,
    )?;
    let rt = round_trip_residual(&setup, ens.size.min(20), ens.support, seed)?;
    let mut body = Map::new();
    body.insert("compat_certificate".into(), json!(rep.compat_certificate));
    body.insert("max_ratio".into(), json!(rep.max_ratio));
    body.insert("median_ratio".into(), json!(rep.median_ratio));
    body.insert("refined_max_ratio".into(), json!(rep.refined_max_ratio));
    body.insert("drift".into(), json!(rep.drift));
    body.insert("round_trip_residual".into(), json!(rt));
    body.insert("precondition_met".into(), json!(rep.precondition_met));
    body.insert("seed".into(), json!(seed));
    body.insert("k0".into(), json!(setup.k0));
    body.insert(
        "quad".into(),
        json!({"r": quad.r, "rule": format!("{:?}", quad.rule)}),
    );
    let mut tables = String::from("index,ratio\n");
    for (i, r) in rep.ratios.iter().enumerate() {
        tables.push_str(&format!("{i},{r:.17e}\n"));
    }
    let plot = format!(
        "j_max,max_ratio\n{},{:.17e}\n{},{:.17e}\n",
        setup.exp.window_target.j_max,
        rep.max_ratio,
        setup.exp.window_target.j_max + 1,
        rep.refined_max_ratio
    );
    Ok(RunOutcome {
        report: envelope_report("trace", spec, body),
        tables_csv: tables,
        plot_csv: plot,
        warnings: setup.warnings,
    })
}

fn run_ext(spec: &ExperimentSpec) -> Result<RunOutcome> {
    let setup = trace_setup(spec)?;
    let seed = spec.need_seed()?;
    let ens = spec.ensemble();
    let quad = spec.quad();
    let compat = weight_compat_certificate(
        &setup.exp.v_target,
        &setup.exp.w_source,
        setup.exp.source.p,
        setup.exp.gamma,
        &setup.exp.window_target,
        CompatDirection::Ext,
        &quad,
        8,
    )?;
    // norm ratios ‖Ext f‖_{source} / ‖f‖_{target} over target-side inputs
    let n = setup.exp.n;
    let target = setup.exp.target_params();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let cubes = setup.exp.window_target.cubes(n);
    let lambdas = Lambda::all(n);
    let mut ratios = Vec::new();
    for _ in 0..ens.size {
        let mut c = WaveletCoeffs::new(n, setup.exp.source.m);
        for _ in 0..ens.support {
            let q = cubes[rng.gen_range(0..cubes.len())].clone();
            let l = lambdas[rng.gen_range(0..lambdas.len())];
            let v = (0..setup.exp.source.m)
                .map(|_| {
                    dms_core::linalg::C64::new(
                        rng.gen_range(-1.0..1.0f64),
                        rng.gen_range(-1.0..1.0f64),
                    )
                })
                .collect();
            c.insert(l, q, v);
        }
        let denom = wavelet_family_norm(
            &c,
            &setup.exp.v_target,
            &target,
            &setup.exp.window_target,
            &quad,
        )?;
        if denom == 0.0 {
            continue;
        }
        let e = ext_coeffs_scaled(&c, &setup.system, setup.k0)?;
        let numer = wavelet_family_norm(
            &e,
            &setup.exp.w_source,
            &setup.exp.source,
            &setup.exp.window_source,
            &quad,
        )?;
        ratios.push(numer / denom);
    }
    let rt = round_trip_residual(&setup, ens.size.min(20), ens.support, seed)?;
    let max_ratio = ratios.iter().cloned().fold(0.0f64, f64::max);
    let mut body = Map::new();
    body.insert("compat_certificate".into(), json!(compat));
    body.insert("max_ratio".into(), json!(max_ratio));
    body.insert("round_trip_residual".into(), json!(rt));
    body.insert("seed".into(), json!(seed));
    body.insert("k0".into(), json!(setup.k0));
    let mut tables = String::from("index,ratio\n");
    for (i, r) in ratios.iter().enumerate() {
        tables.push_str(&format!("{i},{r:.17e}\n"));
    }
    Ok(RunOutcome {
        report: envelope_report("ext", spec, body),
        tables_csv: tables,
        plot_csv: String::from("index,ratio\n"),
        warnings: setup.warnings,
    })
}

fn run_psido(spec: &ExperimentSpec) -> Result<RunOutcome> {
    let sym_spec = spec
        .symbol
        .clone()
        .unwrap_or(dms_core::operators::SymbolSpec::One);
    let sym = sym_spec.build(1);
    let grid = PsidoGrid::default();
    let residual = symbol_class_residual(&sym, 2, 2, 400, spec.seed.unwrap_or(1));
    // identity fidelity at two scales
    let mut ident = Vec::new();
    for j in [0i32, 1] {
        let q = dms_core::lattice::DyadicCube::new(j, vec![0]);
        let one = dms_core::operators::SymbolSpec::One.build(1);
        let got = psido_apply(&one, &q, &grid);
        let want = psi_q_reference(&q, &grid);
        let mut worst = 0.0f64;
        for i in 0..got.len_cells() {
            worst = worst.max((got.component(i, 0) - want.component(i, 0)).norm());
        }
        ident.push(worst / want.sup_norm().max(1e-300));
    }
    let scales = [0, 1, 2];
    let mrep = psido_molecule_experiment(
        &sym,
        &scales,
        2.5,
        0.8,
        &grid,
        &MoleculeGrid {
            radius: 6.0,
            points_per_axis: 64,
        },
    )?;
    let mut body = Map::new();
    body.insert("symbol".into(), json!(sym.label));
    body.insert("symbol_order".into(), json!(sym.order));
    body.insert("symbol_class_residual".into(), json!(residual.overall));
    body.insert("identity_residuals".into(), json!(ident));
    body.insert("fitted_constants".into(), json!(mrep.fitted_constants));
    body.insert("constant_spread".into(), json!(mrep.constant_spread));
    // smoothing regime: moment checks are vacuous below F* = n/2; above
    // it the adjoint must annihilate polynomials, verified by pairing
    if let Some(space) = &spec.space {
        let upsilon = growth_of(spec, space.n)?;
        let params = space.build(upsilon)?;
        let th = thresholds(&params, 0.0, 0.0)?;
        let half = params.n as f64 / 2.0;
        if th.f_star >= half {
            let cap = (th.f_star - half).floor() as u32;
            let pair_grid = PsidoGrid {
                x_radius: 24.0,
                x_points: 2048,
                ..grid
            };
            let rows = dms_core::operators::psido_moment_pairing(
                &sym,
                &dms_core::lattice::DyadicCube::new(0, vec![0]),
                &pair_grid,
                cap,
            );
            body.insert(
                "regime".into(),
                json!(format!("supercritical (F* = {} ≥ n/2)", th.f_star)),
            );
            body.insert(
                "adjoint_moment_pairings".into(),
                json!(rows.iter().map(|(g, r)| json!([g, r])).collect::<Vec<_>>()),
            );
        } else {
            body.insert(
                "regime".into(),
                json!(format!("subcritical (F* = {} < n/2): moment checks vacuous", th.f_star)),
            );
        }
    }
    body.insert(
        "grid".into(),
        json!({"points_per_octave": grid.points_per_octave, "x_points": grid.x_points}),
    );
    let mut tables = String::from("scale_j,fitted_constant,size_ratio,holder_ratio\n");
    let mut plot = String::from("scale_j,fitted_constant\n");
    for ((q, rep), c) in mrep.per_scale.iter().zip(&mrep.fitted_constants) {
        tables.push_str(&format!(
            "{},{c:.17e},{:.17e},{:.17e}\n",
            q.j, rep.size_ratio, rep.holder_ratio
        ));
        plot.push_str(&format!("{},{c:.17e}\n", q.j));
    }
    Ok(RunOutcome {
        report: envelope_report("psido", spec, body),
        tables_csv: tables,
        plot_csv: plot,
        warnings: Vec::new(),
    })
}

fn run_czo(spec: &ExperimentSpec) -> Result<RunOutcome> {
    let kernel_spec = spec
        .kernel
        .clone()
        .unwrap_or(dms_core::operators::KernelSpec::Hilbert);
    let kernel = kernel_spec.build();
    let params = match &spec.space {
        Some(_) => space_of(spec)?,
        None => SpaceParams {
            family: Family::B,
            s: 0.0,
            p: 2.0,
            q: 2.0,
            n: kernel.n,
            m: 1,
            upsilon: GrowthFunction::one(),
        },
    };
    let th = thresholds(&params, 0.0, 0.0)?;
    let half = params.n as f64 / 2.0;
    let czk_e = (th.e_star - half).max(0.0) + 0.5;
    let czk_f = (th.d_star.max(th.f_star + half) - params.n as f64).max(0.0) + 0.5;
    let residuals = czk_condition_residuals(
        &kernel,
        czk_e,
        czk_f,
        1,
        2000,
        spec.seed.unwrap_or(1),
    )?;
    let recipe = cz_molecule_recipe(&th, params.n, czk_e, czk_f);
    let report = if kernel.n == 1 {
        Some(czo_atom_image_experiment(
            &kernel,
            &[0, 1, 2],
            &recipe,
            &MoleculeGrid {
                radius: 6.0,
                points_per_axis: 48,
            },
            9,
        )?)
    } else {
        None
    };
    let mut body = Map::new();
    body.insert("kernel".into(), json!(kernel.label));
    body.insert("czk_orders".into(), json!({"e": czk_e, "f": czk_f}));
    body.insert(
        "size_constants".into(),
        json!(residuals.size.iter().map(|(a, c)| json!([a, c])).collect::<Vec<_>>()),
    );
    body.insert("holder_x".into(), json!(residuals.holder_x));
    body.insert("holder_y".into(), json!(residuals.holder_y));
    body.insert("double_difference".into(), json!(residuals.double_difference));
    body.insert("probes".into(), json!(residuals.probes));
    body.insert("atom_quadrature_r".into(), json!(9));
    body.insert(
        "molecule_recipe".into(),
        json!({
            "decay": recipe.decay, "moments": recipe.moments,
            "deriv_decay": recipe.deriv_decay, "smoothness": recipe.smoothness
        }),
    );
    let mut tables = String::from("section,key,value\n");
    let mut plot = String::from("radius,compliant_constant,violation_constant\n");
    if let Some(rep) = &report {
        body.insert("fitted_constants".into(), json!(rep.fitted_constants));
        body.insert("constant_spread".into(), json!(rep.constant_spread));
        body.insert(
            "far_field".into(),
            json!({"constants": rep.far_field.constants, "spread": rep.far_field.spread}),
        );
        body.insert(
            "far_field_violation".into(),
            json!({
                "constants": rep.far_field_violation.constants,
                "monotone_increasing": rep.far_field_violation.monotone_increasing
            }),
        );
        body.insert("moment_residual".into(), json!(rep.moment_residual));
        for ((r, c), (r2, c2)) in rep
            .far_field
            .constants
            .iter()
            .zip(&rep.far_field_violation.constants)
        {
            debug_assert_eq!(r, r2);
            plot.push_str(&format!("{r},{c:.17e},{c2:.17e}\n"));
        }
        for (q, m) in &rep.per_cube {
            tables.push_str(&format!("molecule,scale_{},{:.17e}\n", q.j, m.fitted_constant()));
        }
    }
    for (a, c) in &residuals.size {
        tables.push_str(&format!("kernel_size,alpha_{a},{c:.17e}\n"));
    }
    Ok(RunOutcome {
        report: envelope_report("czo", spec, body),
        tables_csv: tables,
        plot_csv: plot,
        warnings: Vec::new(),
    })
}

fn run_wavelet_check(spec: &ExperimentSpec) -> Result<RunOutcome> {
    let wav = spec.wavelet.clone().unwrap_or(crate::spec::WaveletSpecCli {
        k: 2,
        levels: 10,
        force: false,
    });
    let system = WaveletSystem::build(wav.k, wav.levels)?;
    let filter_residual =
        dms_core::wavelets::filter_orthonormality_residual(&system.filters.h);
    let moments: Vec<f64> = (0..wav.k as u32).map(|g| system.psi_moment(g)).collect();
    let (k0, phi_k0) = find_k0(&system)?;
    // Gram residual over a small window, exact-resolution sampling
    let window = LatticeWindow::new(0, 2, 1).unwrap();
    let gram = gram_residual(&system, &window)?;
    let two_scale: Vec<f64> = [wav.levels - 1, wav.levels]
        .iter()
        .map(|&l| {
            WaveletSystem::build(wav.k, l)
                .map(|s| s.two_scale_residual_l2())
                .unwrap_or(f64::NAN)
        })
        .collect();
    let cond3 = [0.7, 1.0, 1.9]
        .iter()
        .map(|&xi| (cond3_sum(xi) - 1.0).abs())
        .fold(0.0f64, f64::max);
    let mut warnings = Vec::new();
    if let Some(space) = &spec.space {
        let upsilon = growth_of(spec, space.n)?;
        let params = space.build(upsilon)?;
        let th = thresholds(&params, 0.0, 0.0)?;
        let k_min = minimal_wavelet_order(&th, params.n);
        if wav.k < k_min {
            if wav.force {
                warnings.push(format!(
                    "wavelet order k={} below the admissible bound {k_min} (forced)",
                    wav.k
                ));
            } else {
                bail!(
                    "wavelet order k={} below the admissible bound {k_min}; set wavelet.force to override",
                    wav.k
                );
            }
        }
    }
    let mut body = Map::new();
    body.insert("k".into(), json!(wav.k));
    body.insert("levels".into(), json!(wav.levels));
    body.insert("filter_residual".into(), json!(filter_residual));
    body.insert("phi_integral_minus_one".into(), json!(system.phi_integral() - 1.0));
    body.insert("moment_residuals".into(), json!(moments));
    body.insert("gram_residual".into(), json!(gram));
    body.insert("two_scale_l2".into(), json!(two_scale));
    body.insert("cond3_residual".into(), json!(cond3));
    body.insert("k0".into(), json!(k0));
    body.insert("phi_at_minus_k0".into(), json!(phi_k0));
    let tables = format!(
        "quantity,value\nfilter_residual,{filter_residual:.17e}\ngram_residual,{gram:.17e}\ncond3_residual,{cond3:.17e}\n"
    );
    let mut plot = String::from("levels,two_scale_l2\n");
    for (l, v) in [wav.levels - 1, wav.levels].iter().zip(&two_scale) {
        plot.push_str(&format!("{l},{v:.17e}\n"));
    }
    Ok(RunOutcome {
        report: envelope_report("wavelet-check", spec, body),
        tables_csv: tables,
        plot_csv: plot,
        warnings,
    })
}

/// Worst deviation of sampled inner products from orthonormality over a
/// window (1-D), Riemann sums at the common box resolution.
pub fn gram_residual(system: &WaveletSystem, window: &LatticeWindow) -> Result<f64> {
    let cubes = window.cubes(1);
    let step = system.cell_width();
    let half = (window.extent_log2 as f64).exp2();
    let width = system.support_width() * (-(window.j_min as f64)).exp2();
    let lo = -half;
    let count = ((2.0 * half + width) / step).ceil() as usize;
    // sample every basis function once
    let mut samples: Vec<Vec<f64>> = Vec::with_capacity(cubes.len());
    for q in &cubes {
        let mut v = vec![0.0f64; count];
        for (t, slot) in v.iter_mut().enumerate() {
            let x = [lo + t as f64 * step];
            *slot = system.eval_theta_q(Lambda(1), q, &x);
        }
        samples.push(v);
    }
    let mut worst = 0.0f64;
    for (a, qa) in cubes.iter().enumerate() {
        for (b, qb) in cubes.iter().enumerate().skip(a) {
            let ip: f64 = samples[a]
                .iter()
                .zip(&samples[b])
                .map(|(x, y)| x * y)
                .sum::<f64>()
                * step;
            let target = if qa == qb { 1.0 } else { 0.0 };
            worst = worst.max((ip - target).abs());
        }
    }
    Ok(worst)
}

/// Static diagnostics for a spec; never mutates anything and reads no
/// files beyond the spec itself.
pub fn validate(spec: &ExperimentSpec) -> Result<Vec<String>> {
    let mut diags = Vec::new();
    if let Some(space) = &spec.space {
        let class = spec
            .growth
            .as_ref()
            .map(|g| g.declared_class())
            .unwrap_or(GrowthFunction::one().class);
        if !class.admissible(space.n) {
            diags.push(format!(
                "growth class (δ1={}, δ2={}, ω={}) violates the admissible range: \
                 need δ2 ≥ 0, δ1 ≤ δ2, 0 ≤ ω ≤ n(δ2−δ1)",
                class.delta1, class.delta2, class.omega
            ));
        } else if let Ok(params) = space.build(GrowthFunction::custom(
            "declared",
            class,
            |_| 1.0,
        )) {
            let th = thresholds(&params, 0.0, 0.0)?;
            let k_min = minimal_wavelet_order(&th, params.n);
            if let Some(wav) = &spec.wavelet {
                if wav.k < k_min {
                    diags.push(format!(
                        "wavelet order k={} below the admissible bound {k_min} \
                         (k must exceed max(E*−n/2, F*−n/2) = {:.4})",
                        wav.k,
                        (th.e_star - params.n as f64 / 2.0).max(th.f_star - params.n as f64 / 2.0)
                    ));
                }
            }
            if spec.kind == "trace" || spec.kind == "ext" {
                let gamma = spec.gamma.unwrap_or(1.0);
                let e = trace_smoothing_index(
                    params.family,
                    params.n,
                    params.p,
                    params.q,
                    params.upsilon.class.delta1,
                );
                let bound = gamma / params.p + e;
                if params.s <= bound {
                    diags.push(format!(
                        "s = {} at or below the trace smoothing threshold {bound} \
                         (identity-weight bound; weight dimensions raise it)",
                        params.s
                    ));
                }
            }
            if spec.kind == "czo" {
                let half = params.n as f64 / 2.0;
                diags.push(format!(
                    "kernel orders must satisfy E > {:.4}, F > {:.4} with the \
                     moment conditions subject to σ ≥ {}",
                    (th.e_star - half).max(0.0),
                    (th.d_star.max(th.f_star + half) - params.n as f64).max(0.0),
                    if th.e_star - half >= 0.0 { 1 } else { 0 }
                ));
            }
        }
    }
    if spec.seed.is_none() && matches!(spec.kind.as_str(), "adtest" | "trace" | "ext") {
        diags.push("ensemble kinds require a seed".into());
    }
    Ok(diags)
}
