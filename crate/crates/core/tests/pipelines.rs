//! Cross-module pipeline checks: the trace experiment end to end, and
//! degenerate inputs flowing through analysis.

use dms_core::growth::GrowthFunction;
use dms_core::lattice::LatticeWindow;
use dms_core::matweight::MatrixWeight;
use dms_core::operators::{trace_norm_experiment, TraceExperiment};
use dms_core::quad::QuadratureSpec;
use dms_core::seqspace::{Family, SpaceParams};
use dms_core::wavelets::{analyze, SampledFunction, WaveletCoeffs, WaveletSystem};
use std::sync::Arc;

/// Drift oracle: identity weights, γ = 1 — the max trace norm ratio is
/// stable (±10%) under one-scale refinement, and the compatibility
/// certificate is exactly 1.
#[test]
fn trace_experiment_identity_drift() {
    let system = Arc::new(WaveletSystem::build(1, 6).unwrap());
    let window = LatticeWindow::new(0, 1, 1).unwrap();
    let source = SpaceParams {
        family: Family::B,
        s: 1.2,
        p: 2.0,
        q: 2.0,
        n: 2,
        m: 1,
        upsilon: GrowthFunction::one(),
    };
    let exp = TraceExperiment {
        n: 1,
        source,
        w_source: MatrixWeight::identity(2, 1),
        v_target: MatrixWeight::identity(1, 1),
        gamma: 1.0,
        system,
        window_source: window,
        window_target: window,
    };
    let rep = trace_norm_experiment(&exp, 20, 2, 0xfeed, &QuadratureSpec::default(), 0.0).unwrap();
    assert!(
        (rep.compat_certificate - 1.0).abs() <= 1e-12,
        "compat {}",
        rep.compat_certificate
    );
    assert!(rep.precondition_met);
    assert!(
        rep.drift <= 0.10,
        "max ratio {} -> {} (drift {:.3})",
        rep.max_ratio,
        rep.refined_max_ratio,
        rep.drift
    );
}

#[test]
fn analyze_zero_function_is_empty() {
    let system = WaveletSystem::build(2, 8).unwrap();
    let window = LatticeWindow::new(0, 1, 1).unwrap();
    let step = system.cell_width();
    let f = SampledFunction::zeros(1, 1, vec![-2.0], step, vec![(8.0 / step) as usize]);
    let coeffs = analyze(&f, &system, &window).unwrap();
    assert!(coeffs.entries.is_empty());
    // and an empty coefficient set synthesizes to zero
    let empty = WaveletCoeffs::new(1, 1);
    let g = dms_core::wavelets::synthesize(&empty, &system, vec![-2.0], step, vec![64]);
    assert_eq!(g.sup_norm(), 0.0);
}
