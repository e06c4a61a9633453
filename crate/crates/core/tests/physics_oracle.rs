//! Closed-form traces against the time-domain quadrature reference.

use etpa::dataset::{sample_system, DipoleMode, LevelBand};
use etpa::physics::{
    oracle_max_step, oracle_trace, oracle_trace_with_step, signal_trace, MolecularSystem,
    PhotonSource, PhysicsError, TauWindow,
};
use etpa::rng::{stream, Purpose};

#[test]
fn random_degenerate_systems_agree() {
    let band = LevelBand::new(835.0, 845.0, 1.0).unwrap();
    let source = PhotonSource::degenerate(810.0, 63.0).unwrap();
    let tau = TauWindow::DEFAULT.grid(500).unwrap();
    for i in 0..6 {
        let mut r = stream(77, Purpose::Record, 0, i);
        let sys = sample_system(&band, 1 + (i as usize % 4), DipoleMode::UniformRandom, &mut r).unwrap();
        let closed = signal_trace(&sys, &source, TauWindow::DEFAULT, 500, true).unwrap();
        let reference = oracle_trace(&sys, &source, &tau).unwrap();
        let d = closed.max_abs_diff(&reference);
        assert!(d < 1e-3, "system {i}: {d:e}");
    }
}

#[test]
fn non_degenerate_pair_agrees_inside_the_correlation_window() {
    // |τ| ≤ 2 T_e keeps both pathways inside the box correlation
    let source = PhotonSource::new(805.0, 815.0, 40.0, 10.0).unwrap();
    let sys = MolecularSystem::new(vec![832.0, 848.5], vec![1.0, 0.6]).unwrap();
    let window = TauWindow::new(-70.0, 70.0).unwrap();
    let tau = window.grid(201).unwrap();
    let closed = signal_trace(&sys, &source, window, 201, true).unwrap();
    let reference = oracle_trace(&sys, &source, &tau).unwrap();
    assert!(closed.max_abs_diff(&reference) < 1e-3);
    // no longer symmetric in τ
    let n = closed.len();
    let asym = (0..n)
        .map(|k| (closed.values[k] - closed.values[n - 1 - k]).abs())
        .fold(0.0, f64::max);
    assert!(asym > 1e-3);
}

#[test]
fn coarse_quadrature_is_refused() {
    let source = PhotonSource::degenerate(810.0, 63.0).unwrap();
    let sys = MolecularSystem::with_unit_dipoles(vec![840.0]).unwrap();
    let h = oracle_max_step(&sys, &source).unwrap();
    let tau = TauWindow::DEFAULT.grid(11).unwrap();
    assert!(oracle_trace_with_step(&sys, &source, &tau, h).is_ok());
    assert!(matches!(
        oracle_trace_with_step(&sys, &source, &tau, 3.0 * h),
        Err(PhysicsError::Resolution { .. })
    ));
}
