//! Transmitter architecture variants and their received-power semantics.
//!
//! Four beamformers are compared:
//!
//! - `its`: a small digital feeder radiating onto a passive transmitting
//!   surface whose per-element phases are tunable (unit modulus),
//! - `fd`: one amplifier chain per antenna, purely digital precoding,
//! - `hbfc`: a hybrid array whose analog network connects every chain to
//!   every antenna through constant-modulus phase shifters,
//! - `hbpc`: a hybrid array whose chains feed disjoint antenna sub-blocks.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{effective_channel, ChannelSet};

/// Errors for architecture-level dispatch.
#[derive(Debug, Error)]
pub enum ArchitectureError {
    #[error("analog stage mismatch: {0}")]
    AnalogMismatch(String),
    #[error("dimension mismatch: {0}")]
    ShapeMismatch(String),
    #[error("channel: {0}")]
    Channel(#[from] crate::channel::ChannelError),
}

/// Transmitter variant identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "its")]
    Its,
    #[serde(rename = "fd")]
    FullyDigital,
    #[serde(rename = "hbfc")]
    HybridFullyConnected,
    #[serde(rename = "hbpc")]
    HybridPartiallyConnected,
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Architecture::Its => "its",
            Architecture::FullyDigital => "fd",
            Architecture::HybridFullyConnected => "hbfc",
            Architecture::HybridPartiallyConnected => "hbpc",
        })
    }
}

impl std::str::FromStr for Architecture {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "its" => Ok(Architecture::Its),
            "fd" => Ok(Architecture::FullyDigital),
            "hbfc" => Ok(Architecture::HybridFullyConnected),
            "hbpc" => Ok(Architecture::HybridPartiallyConnected),
            other => Err(format!("unknown architecture `{other}` (expected its|fd|hbfc|hbpc)")),
        }
    }
}

impl Architecture {
    /// Number of amplifier chains for `antennas` radiating elements and
    /// `feeder_chains` feeder ports.
    pub fn chain_count(self, antennas: usize, feeder_chains: usize) -> usize {
        match self {
            Architecture::FullyDigital => antennas,
            _ => feeder_chains,
        }
    }

    /// Number of antennas actually driven. The partially connected hybrid
    /// uses `chains * floor(antennas / chains)` so each chain gets an equal
    /// block; the remainder stays unused.
    pub fn effective_antenna_count(self, antennas: usize, feeder_chains: usize) -> usize {
        match self {
            Architecture::HybridPartiallyConnected => (antennas / feeder_chains) * feeder_chains,
            _ => antennas,
        }
    }

    /// Number of tunable analog coefficients (zero for fully digital).
    pub fn analog_entry_count(self, antennas: usize, feeder_chains: usize) -> usize {
        match self {
            Architecture::Its => antennas,
            Architecture::FullyDigital => 0,
            Architecture::HybridFullyConnected => antennas * feeder_chains,
            Architecture::HybridPartiallyConnected => {
                self.effective_antenna_count(antennas, feeder_chains)
            }
        }
    }

    /// Modulus of every analog coefficient: unit phases on the surface,
    /// `1/sqrt(M)` per fully connected shifter, `1/sqrt(L)` per block
    /// shifter. `None` for the fully digital array.
    pub fn analog_modulus(self, antennas: usize, feeder_chains: usize) -> Option<f64> {
        match self {
            Architecture::Its => Some(1.0),
            Architecture::FullyDigital => None,
            Architecture::HybridFullyConnected => Some(1.0 / (antennas as f64).sqrt()),
            Architecture::HybridPartiallyConnected => {
                Some(1.0 / ((antennas / feeder_chains) as f64).sqrt())
            }
        }
    }

    /// End-to-end power gain multiplying `sum_q |h_eff^H b_q|^2`: the
    /// amplifier gain reduced by the surface refraction efficiency or by the
    /// analog network insertion loss.
    pub fn effective_gain(self, amplifier_gain: f64, rho_its: f64, insertion_linear: f64) -> f64 {
        match self {
            Architecture::Its => amplifier_gain * rho_its,
            Architecture::FullyDigital => amplifier_gain,
            Architecture::HybridFullyConnected | Architecture::HybridPartiallyConnected => {
                amplifier_gain / insertion_linear
            }
        }
    }
}

/// Hardware bill of one architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ComponentCounts {
    pub amplifiers: usize,
    pub power_dividers: usize,
    pub phase_shifters: usize,
    pub power_combiners: usize,
}

/// Component counts as a function of antennas and feeder chains.
pub fn component_counts(arch: Architecture, antennas: usize, feeder_chains: usize) -> ComponentCounts {
    match arch {
        Architecture::FullyDigital => ComponentCounts {
            amplifiers: antennas,
            power_dividers: 0,
            phase_shifters: 0,
            power_combiners: 0,
        },
        Architecture::HybridFullyConnected => ComponentCounts {
            amplifiers: feeder_chains,
            power_dividers: feeder_chains,
            phase_shifters: antennas * feeder_chains,
            power_combiners: feeder_chains,
        },
        Architecture::HybridPartiallyConnected => ComponentCounts {
            amplifiers: feeder_chains,
            power_dividers: feeder_chains,
            phase_shifters: antennas,
            power_combiners: 0,
        },
        Architecture::Its => ComponentCounts {
            amplifiers: feeder_chains,
            power_dividers: 0,
            phase_shifters: antennas,
            power_combiners: 0,
        },
    }
}

/// Analog beamforming stage of a solution.
#[derive(Debug, Clone)]
pub enum AnalogStage {
    /// No analog stage (fully digital).
    None,
    /// Surface phase profile, length `M`, unit modulus.
    Phases(DVector<Complex64>),
    /// Analog precoding matrix `C` (`M x N`); block-diagonal entries are
    /// stored dense with explicit zeros for the partially connected hybrid.
    Matrix(DMatrix<Complex64>),
}

/// Received RF power at every device for a configured transmitter.
///
/// `effective_gain` must already include the architecture's loss factor (see
/// [`Architecture::effective_gain`]). For the surface architecture the
/// precoders live on the feeder chains; for the digital array they drive the
/// antennas directly; for hybrids they pass through the analog matrix.
pub fn received_powers(
    arch: Architecture,
    channels: &ChannelSet,
    analog: &AnalogStage,
    precoders: &[DVector<Complex64>],
    effective_gain: f64,
) -> Result<Vec<f64>, ArchitectureError> {
    let k = channels.device_count();
    let mut powers = Vec::with_capacity(k);
    for device in 0..k {
        let h = channels.device_channel(device);
        let energy: f64 = match (arch, analog) {
            (Architecture::Its, AnalogStage::Phases(phases)) => {
                let eff = effective_channel(&h, phases, &channels.feeder_to_its)?;
                precoders.iter().map(|b| eff.dotc(b).norm_sqr()).sum()
            }
            (Architecture::FullyDigital, AnalogStage::None) => {
                precoders.iter().map(|b| h.dotc(b).norm_sqr()).sum()
            }
            (
                Architecture::HybridFullyConnected | Architecture::HybridPartiallyConnected,
                AnalogStage::Matrix(c),
            ) => {
                if c.nrows() != h.len() {
                    return Err(ArchitectureError::ShapeMismatch(format!(
                        "analog matrix has {} rows for {} antennas",
                        c.nrows(),
                        h.len()
                    )));
                }
                let eff = c.adjoint() * &h;
                precoders.iter().map(|b| eff.dotc(b).norm_sqr()).sum()
            }
            _ => {
                return Err(ArchitectureError::AnalogMismatch(format!(
                    "architecture {arch} is incompatible with the provided analog stage"
                )))
            }
        };
        powers.push(effective_gain * energy);
    }
    Ok(powers)
}
