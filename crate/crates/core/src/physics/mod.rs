//! Delay-dependent entangled two-photon absorption signals.
//!
//! Units throughout: wavelengths in nm, times in fs, energies and angular
//! frequencies in rad/fs with ħ = 1. The ground state sits at zero energy and
//! the final state is pinned to the two-photon resonance ε_f = ω_s⁰ + ω_i⁰.
//!
//! The closed-form probability drops the constant CW prefactor (which carries
//! a formally divergent energy-conservation delta), so values are in
//! arbitrary units. Only the shape of a trace is meaningful.

mod oracle;

pub use oracle::{oracle_trace, oracle_trace_with_step, oracle_max_step};

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

/// Speed of light in nm/fs.
pub const SPEED_OF_LIGHT: f64 = 299.792_458;

/// Below this |x·T| the resonance term switches to its Taylor series.
pub const SERIES_THRESHOLD: f64 = 1e-6;

/// Root of sinc²(x) = 1/2 for sinc(x) = sin(x)/x.
const SINC_SQ_HALF_MAX: f64 = 1.391_557_378_251_170_2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("{name} must be finite and positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("level wavelengths and dipole products differ in length ({levels} vs {dipoles})")]
    LengthMismatch { levels: usize, dipoles: usize },
    #[error("molecular system needs at least one intermediate level")]
    NoLevels,
    #[error("duplicate intermediate level at {0} nm")]
    DuplicateLevel(f64),
    #[error("delay window must satisfy start < end, got ({start}, {end})")]
    BadWindow { start: f64, end: f64 },
    #[error("a trace needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("delay grid must be strictly increasing")]
    BadGrid,
    #[error("quadrature step {step} fs does not resolve detuning {detuning} rad/fs (max step {max_step} fs)")]
    Resolution {
        step: f64,
        detuning: f64,
        max_step: f64,
    },
}

pub type Result<T> = std::result::Result<T, PhysicsError>;

fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(PhysicsError::NonPositive { name, value })
    }
}

/// Angular frequency (rad/fs) of light at the given vacuum wavelength (nm).
pub fn angular_frequency(wavelength_nm: f64) -> f64 {
    2.0 * std::f64::consts::PI * SPEED_OF_LIGHT / wavelength_nm
}

/// A CW-pumped photon-pair source with a sinc joint spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonSource {
    lambda_s0: f64,
    lambda_i0: f64,
    entanglement_time: f64,
    interaction_area: f64,
}

impl PhotonSource {
    pub const DEFAULT_AREA_UM2: f64 = 10.0;

    pub fn new(
        lambda_s0: f64,
        lambda_i0: f64,
        entanglement_time: f64,
        interaction_area: f64,
    ) -> Result<Self> {
        check_positive("signal wavelength", lambda_s0)?;
        check_positive("idler wavelength", lambda_i0)?;
        check_positive("entanglement time", entanglement_time)?;
        check_positive("interaction area", interaction_area)?;
        Ok(Self {
            lambda_s0,
            lambda_i0,
            entanglement_time,
            interaction_area,
        })
    }

    /// Degenerate pair (both photons centred at `lambda0`) with the default area.
    pub fn degenerate(lambda0: f64, entanglement_time: f64) -> Result<Self> {
        Self::new(lambda0, lambda0, entanglement_time, Self::DEFAULT_AREA_UM2)
    }

    pub fn lambda_signal(&self) -> f64 {
        self.lambda_s0
    }

    pub fn lambda_idler(&self) -> f64 {
        self.lambda_i0
    }

    pub fn entanglement_time(&self) -> f64 {
        self.entanglement_time
    }

    /// Effective interaction area in μm². It only enters the dropped prefactor.
    pub fn interaction_area(&self) -> f64 {
        self.interaction_area
    }

    pub fn omega_signal(&self) -> f64 {
        angular_frequency(self.lambda_s0)
    }

    pub fn omega_idler(&self) -> f64 {
        angular_frequency(self.lambda_i0)
    }

    /// Final-state energy, fixed by exact two-photon resonance.
    pub fn final_energy(&self) -> f64 {
        self.omega_signal() + self.omega_idler()
    }
}

/// Intermediate-level structure of an absorber.
#[derive(Debug, Clone, PartialEq)]
pub struct MolecularSystem {
    level_wavelengths: Vec<f64>,
    dipole_products: Vec<f64>,
}

impl MolecularSystem {
    pub fn new(level_wavelengths: Vec<f64>, dipole_products: Vec<f64>) -> Result<Self> {
        if level_wavelengths.is_empty() {
            return Err(PhysicsError::NoLevels);
        }
        if level_wavelengths.len() != dipole_products.len() {
            return Err(PhysicsError::LengthMismatch {
                levels: level_wavelengths.len(),
                dipoles: dipole_products.len(),
            });
        }
        for &l in &level_wavelengths {
            check_positive("level wavelength", l)?;
        }
        if dipole_products.iter().any(|d| !d.is_finite()) {
            return Err(PhysicsError::NonFinite("dipole product"));
        }
        for (i, a) in level_wavelengths.iter().enumerate() {
            if level_wavelengths[..i].contains(a) {
                return Err(PhysicsError::DuplicateLevel(*a));
            }
        }
        Ok(Self {
            level_wavelengths,
            dipole_products,
        })
    }

    /// All dipole products set to one.
    pub fn with_unit_dipoles(level_wavelengths: Vec<f64>) -> Result<Self> {
        let d = vec![1.0; level_wavelengths.len()];
        Self::new(level_wavelengths, d)
    }

    pub fn level_wavelengths(&self) -> &[f64] {
        &self.level_wavelengths
    }

    pub fn dipole_products(&self) -> &[f64] {
        &self.dipole_products
    }

    pub fn level_count(&self) -> usize {
        self.level_wavelengths.len()
    }

    /// Intermediate energies ε_j in rad/fs.
    pub fn level_energies(&self) -> impl Iterator<Item = f64> + '_ {
        self.level_wavelengths.iter().map(|&l| angular_frequency(l))
    }

    /// Same levels, dipoles multiplied by `factor`.
    pub fn scaled_dipoles(&self, factor: f64) -> Self {
        Self {
            level_wavelengths: self.level_wavelengths.clone(),
            dipole_products: self.dipole_products.iter().map(|d| d * factor).collect(),
        }
    }
}

/// Inclusive delay window in fs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauWindow {
    pub start: f64,
    pub end: f64,
}

impl TauWindow {
    pub const DEFAULT: TauWindow = TauWindow {
        start: -100.0,
        end: 100.0,
    };

    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite()) {
            return Err(PhysicsError::NonFinite("delay window"));
        }
        if start >= end {
            return Err(PhysicsError::BadWindow { start, end });
        }
        Ok(Self { start, end })
    }

    /// `n` uniformly spaced delays including both endpoints. A window
    /// symmetric about zero yields a grid that is exactly antisymmetric.
    pub fn grid(&self, n: usize) -> Result<Vec<f64>> {
        if n < 2 {
            return Err(PhysicsError::TooFewSamples(n));
        }
        let last = (n - 1) as f64;
        Ok((0..n)
            .map(|k| (self.start * (n - 1 - k) as f64 + self.end * k as f64) / last)
            .collect())
    }
}

impl Default for TauWindow {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalTrace {
    pub tau: Vec<f64>,
    pub values: Vec<f64>,
    pub normalized: bool,
    /// Normalization was requested but every value was zero.
    pub degenerate: bool,
}

impl SignalTrace {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Largest pointwise |a − b| against another trace on the same grid.
    pub fn max_abs_diff(&self, other: &SignalTrace) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Divide by the peak. Returns `true` when the trace was identically zero.
pub(crate) fn peak_normalize(values: &mut [f64]) -> bool {
    let peak = values.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        for v in values.iter_mut() {
            *v /= peak;
        }
        false
    } else {
        values.iter_mut().for_each(|v| *v = 0.0);
        true
    }
}

/// f(x, T) = (1 − e^{−ixT}) / x, with its continuous value iT at x = 0.
pub fn resonance_term(x: f64, t: f64) -> Result<Complex64> {
    if !x.is_finite() {
        return Err(PhysicsError::NonFinite("detuning"));
    }
    if !t.is_finite() {
        return Err(PhysicsError::NonFinite("duration"));
    }
    Ok(resonance_term_unchecked(x, t))
}

#[inline]
fn resonance_term_unchecked(x: f64, t: f64) -> Complex64 {
    let y = x * t;
    if y.abs() < SERIES_THRESHOLD {
        // iT + xT²/2 − i x²T³/6
        Complex64::new(x * t * t / 2.0, t - x * x * t * t * t / 6.0)
    } else {
        // 1 − e^{−iy} = 2 sin²(y/2) + i sin y, free of cancellation near y = 0
        let half = (0.5 * y).sin();
        Complex64::new(2.0 * half * half / x, y.sin() / x)
    }
}

/// Two-photon absorption probability at delay `tau` (fs), arbitrary units.
pub fn etpa_probability(system: &MolecularSystem, source: &PhotonSource, tau: f64) -> f64 {
    let w_s = source.omega_signal();
    let w_i = source.omega_idler();
    let te = source.entanglement_time();
    let amplitude: Complex64 = system
        .level_energies()
        .zip(system.dipole_products())
        .map(|(eps, &d)| {
            d * (resonance_term_unchecked(eps - w_i, 2.0 * te - tau)
                + resonance_term_unchecked(eps - w_s, 2.0 * te + tau))
        })
        .sum();
    w_i * w_s / te * amplitude.norm_sqr()
}

/// Sample the probability on a uniform delay grid, optionally peak-normalized.
pub fn signal_trace(
    system: &MolecularSystem,
    source: &PhotonSource,
    window: TauWindow,
    n_samples: usize,
    normalize: bool,
) -> Result<SignalTrace> {
    let tau = window.grid(n_samples)?;
    let mut values: Vec<f64> = tau
        .iter()
        .map(|&t| etpa_probability(system, source, t))
        .collect();
    let degenerate = normalize && peak_normalize(&mut values);
    Ok(SignalTrace {
        tau,
        values,
        normalized: normalize,
        degenerate,
    })
}

/// Same as [`signal_trace`] with the grid points evaluated on the rayon pool.
pub fn signal_trace_par(
    system: &MolecularSystem,
    source: &PhotonSource,
    window: TauWindow,
    n_samples: usize,
    normalize: bool,
) -> Result<SignalTrace> {
    let tau = window.grid(n_samples)?;
    let mut values: Vec<f64> = tau
        .par_iter()
        .map(|&t| etpa_probability(system, source, t))
        .collect();
    let degenerate = normalize && peak_normalize(&mut values);
    Ok(SignalTrace {
        tau,
        values,
        normalized: normalize,
        degenerate,
    })
}

/// FWHM of sinc²(T_e·Δ) in the pair detuning Δ = ω_i − ω_s, expressed as a
/// wavelength span (nm) at `center_wavelength`.
pub fn fwhm_bandwidth(entanglement_time: f64, center_wavelength: f64) -> Result<f64> {
    check_positive("entanglement time", entanglement_time)?;
    check_positive("center wavelength", center_wavelength)?;
    let d_omega = 2.0 * SINC_SQ_HALF_MAX / entanglement_time;
    Ok(center_wavelength * center_wavelength * d_omega
        / (2.0 * std::f64::consts::PI * SPEED_OF_LIGHT))
}

/// T_e = (N_s − N_i)·L/4 from crystal inverse group velocities and length.
///
/// The sign of N_s − N_i only says which photon walks off ahead; the
/// magnitude is returned.
pub fn entanglement_time_from_crystal(n_s: f64, n_i: f64, length: f64) -> f64 {
    ((n_s - n_i) * length / 4.0).abs()
}
