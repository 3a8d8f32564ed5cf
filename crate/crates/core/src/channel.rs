//! Near-field line-of-sight channel coefficients.
//!
//! Every link is modeled element-to-element: each surface element and feeder
//! antenna is small enough to be in the far field of every other individual
//! element even when the arrays as a whole are in each other's near field, so
//! a coefficient depends only on the exact distance and the radiation
//! profiles at both ends. Devices are isotropic receivers.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::geometry::{boresight_angle, GeometryError, ScenarioGeometry};

/// Propagation speed used to convert carrier frequency to wavelength, in m/s.
pub const SPEED_OF_LIGHT: f64 = 2.998e8;

/// Smallest boresight gain exponent for which the profile is defined.
pub const MIN_GAIN_EXPONENT: f64 = 2.0;

/// Errors produced while evaluating radiation profiles or channel entries.
#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("gain exponent {0} is below the minimum of 2")]
    GainBelowMinimum(f64),
    #[error("angle {0} outside [0, pi]")]
    InvalidAngle(f64),
    #[error("wavelength must be positive, got {0}")]
    NonPositiveWavelength(f64),
    #[error("geometry: {0}")]
    Geometry(#[from] GeometryError),
    #[error("dimension mismatch: {0}")]
    ShapeMismatch(String),
}

/// Wavelength in meters for a carrier frequency in Hz.
pub fn wavelength(carrier_hz: f64) -> f64 {
    SPEED_OF_LIGHT / carrier_hz
}

/// Radiation model shared by every link of a scenario.
#[derive(Debug, Clone, Copy)]
pub struct RadiationParams {
    /// Carrier wavelength in meters.
    pub wavelength: f64,
    /// Boresight gain exponent of the feeder antennas.
    pub feeder_gain: f64,
    /// Boresight gain exponent of the surface elements (both faces).
    pub its_gain: f64,
}

impl RadiationParams {
    pub fn new(wavelength: f64, feeder_gain: f64, its_gain: f64) -> Result<Self, ChannelError> {
        if !(wavelength > 0.0) {
            return Err(ChannelError::NonPositiveWavelength(wavelength));
        }
        for gain in [feeder_gain, its_gain] {
            if !(gain >= MIN_GAIN_EXPONENT) {
                return Err(ChannelError::GainBelowMinimum(gain));
            }
        }
        Ok(Self { wavelength, feeder_gain, its_gain })
    }
}

/// Normalized radiation power profile `2(xi+1) cos(beta)^xi` on the front
/// hemisphere, zero on the back one. The normalization makes the profile
/// integrate to `4*pi` over the front hemisphere for any exponent.
pub fn radiation_profile(angle: f64, gain: f64) -> Result<f64, ChannelError> {
    if !(gain >= MIN_GAIN_EXPONENT) {
        return Err(ChannelError::GainBelowMinimum(gain));
    }
    if !(0.0..=std::f64::consts::PI).contains(&angle) {
        return Err(ChannelError::InvalidAngle(angle));
    }
    Ok(profile_unchecked(angle, gain))
}

fn profile_unchecked(angle: f64, gain: f64) -> f64 {
    if angle > std::f64::consts::FRAC_PI_2 {
        0.0
    } else {
        2.0 * (gain + 1.0) * angle.cos().powf(gain)
    }
}

/// One complex link coefficient for a path of length `dist` observed under
/// the product of the endpoint profiles `front_profile * back_profile`.
fn link_coefficient(profile_product: f64, dist: f64, lambda: f64) -> Complex64 {
    let amplitude = profile_product.sqrt() * lambda / (4.0 * std::f64::consts::PI * dist);
    Complex64::from_polar(amplitude, -2.0 * std::f64::consts::PI * dist / lambda)
}

/// All channels of one scenario realization.
#[derive(Debug, Clone)]
pub struct ChannelSet {
    /// Feeder-to-surface matrix, element-by-antenna (`M x N`).
    pub feeder_to_its: DMatrix<Complex64>,
    /// Surface-to-device matrix, element-by-device (`M x K`).
    pub its_to_device: DMatrix<Complex64>,
}

impl ChannelSet {
    pub fn element_count(&self) -> usize {
        self.feeder_to_its.nrows()
    }

    pub fn antenna_count(&self) -> usize {
        self.feeder_to_its.ncols()
    }

    pub fn device_count(&self) -> usize {
        self.its_to_device.ncols()
    }

    /// Channel vector of one device (length `M`).
    pub fn device_channel(&self, device: usize) -> DVector<Complex64> {
        self.its_to_device.column(device).into_owned()
    }
}

/// Builds both channel matrices of a scenario.
pub fn build_channels(
    geom: &ScenarioGeometry,
    params: &RadiationParams,
) -> Result<ChannelSet, ChannelError> {
    Ok(ChannelSet {
        feeder_to_its: feeder_to_its_matrix(geom, params)?,
        its_to_device: its_to_device_matrix(geom, params)?,
    })
}

/// Feeder-to-surface channel matrix, `M x N`.
///
/// Entry `(m, n)` combines the feeder antenna profile evaluated at the
/// departure angle from antenna `n` towards element `m` with the element
/// profile of the feeder-facing side evaluated at the arrival angle.
pub fn feeder_to_its_matrix(
    geom: &ScenarioGeometry,
    params: &RadiationParams,
) -> Result<DMatrix<Complex64>, ChannelError> {
    let m = geom.its.positions.len();
    let n = geom.feeder.positions.len();
    let mut a = DMatrix::zeros(m, n);
    for (col, (&antenna, &bore)) in geom
        .feeder
        .positions
        .iter()
        .zip(&geom.feeder.boresights)
        .enumerate()
    {
        for (row, &element) in geom.its.positions.iter().enumerate() {
            let departure = boresight_angle(antenna, bore, element)?;
            let arrival = boresight_angle(element, geom.its.rx_boresight, antenna)?;
            let product = profile_unchecked(departure, params.feeder_gain)
                * profile_unchecked(arrival, params.its_gain);
            let dist = (antenna - element).norm();
            a[(row, col)] = link_coefficient(product, dist, params.wavelength);
        }
    }
    Ok(a)
}

/// Surface-to-device channel matrix, `M x K`.
///
/// Devices are isotropic, so only the element profile of the radiating side
/// enters; a device behind the surface plane sees a zero coefficient.
pub fn its_to_device_matrix(
    geom: &ScenarioGeometry,
    params: &RadiationParams,
) -> Result<DMatrix<Complex64>, ChannelError> {
    let m = geom.its.positions.len();
    let k = geom.devices.len();
    let mut h = DMatrix::zeros(m, k);
    for (col, &device) in geom.devices.iter().enumerate() {
        for (row, &element) in geom.its.positions.iter().enumerate() {
            let departure = boresight_angle(element, geom.its.tx_boresight, device)?;
            let product = profile_unchecked(departure, params.its_gain);
            let dist = (device - element).norm();
            h[(row, col)] = link_coefficient(product, dist, params.wavelength);
        }
    }
    Ok(h)
}

/// Channel seen by the feeder chains after the surface: for device channel
/// `h` and phase profile `phi`, returns `(h^H diag(phi) A)^H = A^H diag(conj
/// phi) h`, a vector of length `N`.
pub fn effective_channel(
    h: &DVector<Complex64>,
    phases: &DVector<Complex64>,
    a: &DMatrix<Complex64>,
) -> Result<DVector<Complex64>, ChannelError> {
    let m = a.nrows();
    if h.len() != m || phases.len() != m {
        return Err(ChannelError::ShapeMismatch(format!(
            "channel length {} and phase length {} must both match element count {m}",
            h.len(),
            phases.len()
        )));
    }
    let mut out = DVector::zeros(a.ncols());
    for n in 0..a.ncols() {
        let mut acc = Complex64::new(0.0, 0.0);
        for row in 0..m {
            acc += a[(row, n)].conj() * phases[row].conj() * h[row];
        }
        out[n] = acc;
    }
    Ok(out)
}

/// Fraction of antenna `n`'s radiated power captured by the surface under the
/// element-to-element model: the sum of `|a_{m,n}|^2` over elements. Values
/// above 1 indicate the model over-counts capture at that feeder distance;
/// reported as a diagnostic only.
pub fn captured_power_fraction(a: &DMatrix<Complex64>, antenna: usize) -> f64 {
    a.column(antenna).iter().map(|v| v.norm_sqr()).sum()
}
