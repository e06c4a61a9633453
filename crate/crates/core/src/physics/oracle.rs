//! Brute-force reference for the closed-form probability.
//!
//! Works directly from the time-ordered second-order amplitude instead of the
//! closed form. After the absolute-time integral is absorbed into the
//! resonance delta, each pathway leaves a single integral over the time `u`
//! the absorber spends in an intermediate level:
//!
//! ```text
//! A(τ) ∝ Σ_j D_j [ ∫₀^∞ e^{−i(ε_j − ω_i⁰)u} C(u + τ) du + ∫₀^∞ e^{−i(ε_j − ω_s⁰)u} C(u − τ) du ]
//! ```
//!
//! where C is the pair's temporal correlation. For a sinc(T_e·(ω_i − ω_s))
//! joint spectrum C is the Fourier transform of the sinc, a box of half-width
//! 2T_e in the arrival-time difference. Positive τ delays the idler photon.
//!
//! The integrals are evaluated with the composite trapezoid rule on the exact
//! support of C, so the only error is the oscillatory discretisation error.
//!
//! Once |τ| exceeds 2T_e the box no longer touches u = 0 and this amplitude
//! departs from the closed form, which assumes the box always starts at
//! u = 0. Comparisons are only meaningful for |τ| ≤ 2T_e.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::{peak_normalize, MolecularSystem, PhotonSource, PhysicsError, Result, SignalTrace};

const C_NM_PER_FS: f64 = 299.792_458;

/// Nodes per radian of the fastest oscillation.
const NODES_PER_RADIAN: f64 = 50.0;

const MIN_INTERVALS: usize = 16;

struct Pathways {
    entanglement_time: f64,
    /// (dipole, detuning with idler first, detuning with signal first)
    levels: Vec<(f64, f64, f64)>,
}

impl Pathways {
    fn new(system: &MolecularSystem, source: &PhotonSource) -> Self {
        let w_s = 2.0 * PI * C_NM_PER_FS / source.lambda_signal();
        let w_i = 2.0 * PI * C_NM_PER_FS / source.lambda_idler();
        let levels = system
            .level_wavelengths()
            .iter()
            .zip(system.dipole_products())
            .map(|(&lam, &d)| {
                let eps = 2.0 * PI * C_NM_PER_FS / lam;
                (d, eps - w_i, eps - w_s)
            })
            .collect();
        Self {
            entanglement_time: source.entanglement_time(),
            levels,
        }
    }

    fn fastest_detuning(&self) -> f64 {
        self.levels
            .iter()
            .map(|&(_, a, b)| a.abs().max(b.abs()))
            .fold(0.0, f64::max)
    }

    /// Box correlation support intersected with u ≥ 0, shifted by `shift`.
    fn support(&self, shift: f64) -> Option<(f64, f64)> {
        let half = 2.0 * self.entanglement_time;
        let lo = (-shift - half).max(0.0);
        let hi = -shift + half;
        (hi > lo).then_some((lo, hi))
    }

    fn amplitude(&self, tau: f64, step: f64) -> Complex64 {
        let idler_first = self.support(tau);
        let signal_first = self.support(-tau);
        let mut total = Complex64::new(0.0, 0.0);
        for &(d, det_i, det_s) in &self.levels {
            if d == 0.0 {
                continue;
            }
            let mut a = Complex64::new(0.0, 0.0);
            if let Some((lo, hi)) = idler_first {
                a += trapezoid_phase(det_i, lo, hi, step);
            }
            if let Some((lo, hi)) = signal_first {
                a += trapezoid_phase(det_s, lo, hi, step);
            }
            total += d * a;
        }
        total
    }
}

/// ∫_lo^hi e^{−i·x·u} du by the composite trapezoid rule, step ≤ `max_step`.
fn trapezoid_phase(x: f64, lo: f64, hi: f64, max_step: f64) -> Complex64 {
    let n = (((hi - lo) / max_step).ceil() as usize).max(MIN_INTERVALS);
    let h = (hi - lo) / n as f64;
    let node = |u: f64| {
        let (s, c) = (x * u).sin_cos();
        Complex64::new(c, -s)
    };
    let mut acc = 0.5 * (node(lo) + node(hi));
    for k in 1..n {
        acc += node(lo + k as f64 * h);
    }
    acc * h
}

/// Largest quadrature step (fs) the reference accepts for these inputs, or
/// `None` when every detuning is zero and any step resolves the integrand.
pub fn oracle_max_step(system: &MolecularSystem, source: &PhotonSource) -> Option<f64> {
    let fastest = Pathways::new(system, source).fastest_detuning();
    (fastest > 0.0).then(|| 1.0 / (NODES_PER_RADIAN * fastest))
}

/// Peak-normalized reference trace using the finest step the resolution rule
/// requires.
pub fn oracle_trace(
    system: &MolecularSystem,
    source: &PhotonSource,
    tau_grid: &[f64],
) -> Result<SignalTrace> {
    let step = oracle_max_step(system, source).unwrap_or(source.entanglement_time());
    oracle_trace_with_step(system, source, tau_grid, step)
}

/// Peak-normalized reference trace with an explicit quadrature step (fs).
/// Steps too coarse for the fastest detuning are refused.
pub fn oracle_trace_with_step(
    system: &MolecularSystem,
    source: &PhotonSource,
    tau_grid: &[f64],
    step: f64,
) -> Result<SignalTrace> {
    if !(step.is_finite() && step > 0.0) {
        return Err(PhysicsError::NonPositive {
            name: "quadrature step",
            value: step,
        });
    }
    if tau_grid.len() < 2 {
        return Err(PhysicsError::TooFewSamples(tau_grid.len()));
    }
    if tau_grid.iter().any(|t| !t.is_finite()) {
        return Err(PhysicsError::NonFinite("delay grid"));
    }
    if tau_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(PhysicsError::BadGrid);
    }
    let paths = Pathways::new(system, source);
    let fastest = paths.fastest_detuning();
    if fastest > 0.0 {
        let max_step = 1.0 / (NODES_PER_RADIAN * fastest);
        if step > max_step {
            return Err(PhysicsError::Resolution {
                step,
                detuning: fastest,
                max_step,
            });
        }
    }
    let mut values: Vec<f64> = tau_grid
        .iter()
        .map(|&tau| paths.amplitude(tau, step).norm_sqr())
        .collect();
    let degenerate = peak_normalize(&mut values);
    Ok(SignalTrace {
        tau: tau_grid.to_vec(),
        values,
        normalized: true,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::TauWindow;

    #[test]
    fn trapezoid_is_exact_for_constant_integrand() {
        let v = trapezoid_phase(0.0, 1.0, 4.0, 0.5);
        assert!((v - Complex64::new(3.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn trapezoid_matches_analytic_phase_integral() {
        let x = 0.08;
        let (lo, hi) = (0.0, 126.0);
        let exact = (Complex64::new(0.0, -x * lo).exp() - Complex64::new(0.0, -x * hi).exp())
            / Complex64::new(0.0, x);
        let got = trapezoid_phase(x, lo, hi, 1.0 / (50.0 * x));
        assert!((got - exact).norm() / exact.norm() < 1e-4);
    }

    #[test]
    fn zero_dipoles_give_zero_trace() {
        let sys = MolecularSystem::new(vec![838.0], vec![0.0]).unwrap();
        let src = PhotonSource::degenerate(810.0, 63.0).unwrap();
        let grid = TauWindow::DEFAULT.grid(21).unwrap();
        let tr = oracle_trace(&sys, &src, &grid).unwrap();
        assert!(tr.degenerate);
        assert!(tr.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn degenerate_source_is_symmetric() {
        let sys = MolecularSystem::with_unit_dipoles(vec![836.0, 843.0]).unwrap();
        let src = PhotonSource::degenerate(810.0, 63.0).unwrap();
        let grid = TauWindow::DEFAULT.grid(41).unwrap();
        let tr = oracle_trace(&sys, &src, &grid).unwrap();
        for k in 0..41 {
            assert!((tr.values[k] - tr.values[40 - k]).abs() < 1e-9);
        }
    }

    #[test]
    fn coarse_step_is_refused() {
        let sys = MolecularSystem::with_unit_dipoles(vec![845.0]).unwrap();
        let src = PhotonSource::degenerate(810.0, 63.0).unwrap();
        let grid = TauWindow::DEFAULT.grid(11).unwrap();
        let max = oracle_max_step(&sys, &src).unwrap();
        assert!(matches!(
            oracle_trace_with_step(&sys, &src, &grid, 2.0 * max),
            Err(PhysicsError::Resolution { .. })
        ));
        assert!(oracle_trace_with_step(&sys, &src, &grid, max).is_ok());
    }

    #[test]
    fn bad_grids_are_refused() {
        let sys = MolecularSystem::with_unit_dipoles(vec![845.0]).unwrap();
        let src = PhotonSource::degenerate(810.0, 63.0).unwrap();
        assert!(oracle_trace(&sys, &src, &[1.0]).is_err());
        assert!(oracle_trace(&sys, &src, &[1.0, 0.0]).is_err());
    }
}
