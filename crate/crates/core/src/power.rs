//! Power consumption models: multi-way Doherty amplifiers, static circuit
//! terms, surface control power and the insertion losses of analog
//! beamforming networks.

use nalgebra::DVector;
use num_complex::Complex64;
use thiserror::Error;

use crate::architectures::Architecture;

/// Errors for consumption queries and parameter validation.
#[derive(Debug, Error)]
pub enum PowerError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("amplifier saturated: output {output_w} W exceeds {max_w} W")]
    Saturation { output_w: f64, max_w: f64 },
    #[error("output power must be non-negative, got {0}")]
    NegativeOutput(f64),
    #[error("chain {chain} out of range for {chains} chains")]
    ChainOutOfRange { chain: usize, chains: usize },
}

/// Multi-way Doherty high-power amplifier.
#[derive(Debug, Clone, Copy)]
pub struct DohertyParams {
    /// Number of ways (1 = class-B single branch).
    pub ways: u32,
    /// Peak drain efficiency, reached at both efficiency peaks.
    pub peak_efficiency: f64,
    /// Saturation output power in watts.
    pub max_output_w: f64,
    /// Amplifier power gain applied to the precoder output.
    pub gain: f64,
}

impl DohertyParams {
    pub fn new(ways: u32, peak_efficiency: f64, max_output_w: f64, gain: f64) -> Result<Self, PowerError> {
        if ways == 0 {
            return Err(PowerError::InvalidParams("ways must be at least 1".into()));
        }
        if !(peak_efficiency > 0.0 && peak_efficiency <= 1.0) {
            return Err(PowerError::InvalidParams(format!(
                "peak efficiency must lie in (0, 1], got {peak_efficiency}"
            )));
        }
        if !(max_output_w > 0.0) {
            return Err(PowerError::InvalidParams(format!(
                "max output power must be positive, got {max_output_w}"
            )));
        }
        if !(gain > 0.0) {
            return Err(PowerError::InvalidParams(format!("gain must be positive, got {gain}")));
        }
        Ok(Self { ways, peak_efficiency, max_output_w, gain })
    }

    /// Output power of the lower efficiency peak, where the peaking branches
    /// turn on: `P_max / ways^2`.
    pub fn transition_power(&self) -> f64 {
        self.max_output_w / (self.ways as f64 * self.ways as f64)
    }
}

/// Consumption on the carrier-only branch (back-off region), valid for
/// outputs in `(0, P_max / ways^2]`.
pub fn carrier_branch_consumption(output_w: f64, params: &DohertyParams) -> f64 {
    let ell = params.ways as f64;
    (output_w * params.max_output_w).sqrt() / (ell * params.peak_efficiency)
}

/// Consumption with the peaking branches active, valid for outputs in
/// `(P_max / ways^2, P_max]`.
pub fn peaking_branch_consumption(output_w: f64, params: &DohertyParams) -> f64 {
    let ell = params.ways as f64;
    ((ell + 1.0) * (output_w * params.max_output_w).sqrt() - params.max_output_w)
        / (ell * params.peak_efficiency)
}

/// Consumed power of one amplifier driving `output_w` watts.
///
/// Piecewise: zero at zero output, the carrier branch up to and including the
/// transition power, the peaking branch up to saturation. Outputs beyond
/// saturation are an error.
pub fn doherty_consumption(output_w: f64, params: &DohertyParams) -> Result<f64, PowerError> {
    if output_w < 0.0 {
        return Err(PowerError::NegativeOutput(output_w));
    }
    if output_w == 0.0 {
        return Ok(0.0);
    }
    if output_w > params.max_output_w {
        return Err(PowerError::Saturation { output_w, max_w: params.max_output_w });
    }
    if output_w <= params.transition_power() {
        Ok(carrier_branch_consumption(output_w, params))
    } else {
        Ok(peaking_branch_consumption(output_w, params))
    }
}

/// Drain efficiency `output / consumption`; undefined at zero output.
pub fn drain_efficiency(output_w: f64, params: &DohertyParams) -> Result<f64, PowerError> {
    if !(output_w > 0.0) {
        return Err(PowerError::InvalidParams(format!(
            "efficiency requires positive output, got {output_w}"
        )));
    }
    Ok(output_w / doherty_consumption(output_w, params)?)
}

/// Output power of one amplifier chain: `gain * sum_q |b_q[chain]|^2`.
pub fn hpa_output_power(
    precoders: &[DVector<Complex64>],
    chain: usize,
    gain: f64,
) -> Result<f64, PowerError> {
    let chains = precoders.first().map_or(0, |b| b.len());
    if chain >= chains {
        return Err(PowerError::ChainOutOfRange { chain, chains });
    }
    Ok(gain * precoders.iter().map(|b| b[chain].norm_sqr()).sum::<f64>())
}

/// Output powers of every chain.
pub fn chain_output_powers(precoders: &[DVector<Complex64>], gain: f64) -> Vec<f64> {
    let chains = precoders.first().map_or(0, |b| b.len());
    (0..chains)
        .map(|n| gain * precoders.iter().map(|b| b[n].norm_sqr()).sum::<f64>())
        .collect()
}

/// Architecture-independent static circuit power.
#[derive(Debug, Clone, Copy)]
pub struct StaticPower {
    pub baseband_w: f64,
    pub transceiver_w: f64,
}

/// Consumption of the passive surface control plane.
#[derive(Debug, Clone, Copy)]
pub struct ItsPowerParams {
    /// Surface controller power.
    pub control_w: f64,
    /// Per-element tuning power.
    pub element_w: f64,
}

/// Insertion loss of an analog beamforming network, accumulated in dB.
#[derive(Debug, Clone, Copy)]
pub struct InsertionLoss {
    pub total_db: f64,
    /// Linear power division factor (>= 1).
    pub linear: f64,
}

fn ceil_log2(x: usize) -> u32 {
    if x <= 1 {
        0
    } else {
        x.next_power_of_two().trailing_zeros()
    }
}

/// Insertion loss of the analog network between the amplifier outputs and
/// the antennas.
///
/// The fully connected network splits each of the `chains` outputs towards
/// all `antennas` elements (splitter stages scale with `antennas`), then
/// recombines `chains` contributions per element. The partially connected
/// network only splits each chain towards its own block of `antennas /
/// chains` elements and needs no combiners. Phase shifters add a flat loss.
/// Architectures without an analog network are lossless.
pub fn insertion_loss(
    arch: Architecture,
    antennas: usize,
    chains: usize,
    splitter_db: f64,
    combiner_db: f64,
    shifter_db: f64,
) -> Result<InsertionLoss, PowerError> {
    for (name, v) in [("splitter", splitter_db), ("combiner", combiner_db), ("shifter", shifter_db)] {
        if v < 0.0 {
            return Err(PowerError::InvalidParams(format!("{name} loss must be non-negative, got {v}")));
        }
    }
    let total_db = match arch {
        Architecture::Its | Architecture::FullyDigital => 0.0,
        Architecture::HybridFullyConnected => {
            ceil_log2(antennas) as f64 * splitter_db + ceil_log2(chains) as f64 * combiner_db + shifter_db
        }
        Architecture::HybridPartiallyConnected => {
            if chains == 0 || antennas / chains == 0 {
                return Err(PowerError::InvalidParams(format!(
                    "partially connected network needs at least one antenna per chain ({antennas} antennas, {chains} chains)"
                )));
            }
            ceil_log2(antennas / chains) as f64 * splitter_db + shifter_db
        }
    };
    Ok(InsertionLoss { total_db, linear: 10f64.powf(total_db / 10.0) })
}

/// Total consumed power of a transmitter: amplifier consumptions plus static
/// terms, plus the surface control plane for the surface-based architecture.
pub fn total_power(
    arch: Architecture,
    chain_powers: &[f64],
    doherty: &DohertyParams,
    statics: &StaticPower,
    its: &ItsPowerParams,
    element_count: usize,
) -> Result<f64, PowerError> {
    let mut total = statics.baseband_w + statics.transceiver_w;
    for &p in chain_powers {
        total += doherty_consumption(p, doherty)?;
    }
    if arch == Architecture::Its {
        total += its.control_w + element_count as f64 * its.element_w;
    }
    Ok(total)
}
