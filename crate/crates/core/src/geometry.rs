//! Beacon layout and device deployment geometry.
//!
//! Coordinate convention: the transmitting surface is an axis-aligned grid of
//! elements centered at the origin in the `z = 0` plane. The feeder antennas
//! sit on a regular polygon in the `z = +feeder_distance` plane, each aimed at
//! the surface center. Devices lie in a rectangle in the `z =
//! -device_distance` plane. The surface radiates downwards: the transmit-side
//! element boresight is `(0, 0, -1)` and the receive side (facing the feeder)
//! is `(0, 0, +1)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Tolerance below which two points are considered coincident.
const COINCIDENT_EPS: f64 = 1e-12;
/// Tolerance on the norm of a direction that must be unit length.
const UNIT_NORM_EPS: f64 = 1e-12;

/// Errors produced while building or querying a scenario layout.
#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate geometry: source and target coincide")]
    CoincidentPoints,
    #[error("boresight vector has norm {norm}, expected unit length")]
    NonUnitBoresight { norm: f64 },
}

/// Three-dimensional point or direction in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, rhs: Self) -> f64 {
        self.x * rhs.x + self.y * rhs.y + self.z * rhs.z
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Unit vector in the same direction; `None` for the zero vector.
    pub fn normalized(self) -> Option<Self> {
        let n = self.norm();
        if n < COINCIDENT_EPS {
            None
        } else {
            Some(self * (1.0 / n))
        }
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl std::ops::Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Sizes and distances that define one scenario.
#[derive(Debug, Clone)]
pub struct ScenarioParams {
    /// Number of surface elements.
    pub element_count: usize,
    /// Number of feeder antennas.
    pub antenna_count: usize,
    /// Number of devices.
    pub device_count: usize,
    /// Element grid spacing in meters.
    pub spacing: f64,
    /// Circumradius of the feeder polygon in meters.
    pub circumradius: f64,
    /// Distance from surface plane to feeder plane in meters.
    pub feeder_distance: f64,
    /// Device rectangle extent along x in meters.
    pub extent_x: f64,
    /// Device rectangle extent along y in meters.
    pub extent_y: f64,
    /// Distance from surface plane to device plane in meters.
    pub device_distance: f64,
    /// Optional fixed device positions; when set, sampling is skipped and
    /// `device_count` must match the list length.
    pub fixed_devices: Option<Vec<Vec3>>,
}

/// Transmitting-surface element grid.
#[derive(Debug, Clone)]
pub struct ItsLayout {
    /// Element positions in row-major grid order, centered on the origin.
    pub positions: Vec<Vec3>,
    pub spacing: f64,
    /// Boresight of the radiating (device-facing) side.
    pub tx_boresight: Vec3,
    /// Boresight of the receiving (feeder-facing) side.
    pub rx_boresight: Vec3,
}

/// Feeder antenna polygon.
#[derive(Debug, Clone)]
pub struct FeederLayout {
    pub positions: Vec<Vec3>,
    /// Per-antenna boresight, aimed at the surface center.
    pub boresights: Vec<Vec3>,
    pub circumradius: f64,
    pub distance: f64,
}

/// Full scenario: surface, feeder and device positions.
#[derive(Debug, Clone)]
pub struct ScenarioGeometry {
    pub its: ItsLayout,
    pub feeder: FeederLayout,
    pub devices: Vec<Vec3>,
}

/// Builds the deterministic layout plus a seeded device deployment.
///
/// The element grid uses `ceil(sqrt(M))` columns filled row-major, truncated
/// to `M` elements and re-centered so the centroid is the origin. Feeder
/// antenna `n` sits at polar angle `2*pi*n/N` on the polygon; a single antenna
/// sits on the axis. Devices are drawn uniformly over the rectangle with the
/// x coordinate sampled before y, device by device, so deployments are
/// reproducible for a given seed.
pub fn build_scenario(params: &ScenarioParams, seed: u64) -> Result<ScenarioGeometry, GeometryError> {
    validate(params)?;

    let m = params.element_count;
    let cols = (m as f64).sqrt().ceil() as usize;
    let mut positions: Vec<Vec3> = (0..m)
        .map(|idx| {
            let row = idx / cols;
            let col = idx % cols;
            Vec3::new(col as f64 * params.spacing, row as f64 * params.spacing, 0.0)
        })
        .collect();
    let centroid = positions
        .iter()
        .fold(Vec3::new(0.0, 0.0, 0.0), |acc, &p| acc + p)
        * (1.0 / m as f64);
    for p in &mut positions {
        *p = *p - centroid;
    }
    let its = ItsLayout {
        positions,
        spacing: params.spacing,
        tx_boresight: Vec3::new(0.0, 0.0, -1.0),
        rx_boresight: Vec3::new(0.0, 0.0, 1.0),
    };

    let n = params.antenna_count;
    let mut feeder_positions = Vec::with_capacity(n);
    let mut boresights = Vec::with_capacity(n);
    for idx in 0..n {
        let pos = if n == 1 {
            Vec3::new(0.0, 0.0, params.feeder_distance)
        } else {
            let angle = 2.0 * std::f64::consts::PI * idx as f64 / n as f64;
            Vec3::new(
                params.circumradius * angle.cos(),
                params.circumradius * angle.sin(),
                params.feeder_distance,
            )
        };
        // Aim at the surface center; feeder_distance > 0 keeps this well defined.
        let boresight = (Vec3::new(0.0, 0.0, 0.0) - pos).normalized().unwrap();
        feeder_positions.push(pos);
        boresights.push(boresight);
    }
    let feeder = FeederLayout {
        positions: feeder_positions,
        boresights,
        circumradius: if n == 1 { 0.0 } else { params.circumradius },
        distance: params.feeder_distance,
    };

    let devices = match &params.fixed_devices {
        Some(fixed) => fixed.clone(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let hx = params.extent_x / 2.0;
            let hy = params.extent_y / 2.0;
            (0..params.device_count)
                .map(|_| {
                    let x = rng.gen_range(-hx..hx);
                    let y = rng.gen_range(-hy..hy);
                    Vec3::new(x, y, -params.device_distance)
                })
                .collect()
        }
    };

    Ok(ScenarioGeometry { its, feeder, devices })
}

/// Angle in `[0, pi]` between a unit boresight at `source` and the direction
/// towards `target`.
pub fn boresight_angle(source: Vec3, boresight: Vec3, target: Vec3) -> Result<f64, GeometryError> {
    let norm = boresight.norm();
    if (norm - 1.0).abs() > UNIT_NORM_EPS {
        return Err(GeometryError::NonUnitBoresight { norm });
    }
    let dir = match (target - source).normalized() {
        Some(d) => d,
        None => return Err(GeometryError::CoincidentPoints),
    };
    Ok(dir.dot(boresight).clamp(-1.0, 1.0).acos())
}

fn validate(params: &ScenarioParams) -> Result<(), GeometryError> {
    let positive = [
        ("spacing", params.spacing),
        ("feeder_distance", params.feeder_distance),
        ("device_distance", params.device_distance),
        ("extent_x", params.extent_x),
        ("extent_y", params.extent_y),
    ];
    for (name, value) in positive {
        if !(value > 0.0) {
            return Err(GeometryError::InvalidConfig(format!(
                "{name} must be positive, got {value}"
            )));
        }
    }
    if params.circumradius < 0.0 {
        return Err(GeometryError::InvalidConfig(format!(
            "circumradius must be non-negative, got {}",
            params.circumradius
        )));
    }
    if params.element_count == 0 || params.antenna_count == 0 {
        return Err(GeometryError::InvalidConfig(
            "element and antenna counts must be at least 1".into(),
        ));
    }
    if params.device_count == 0 {
        return Err(GeometryError::InvalidConfig("device count must be at least 1".into()));
    }
    if let Some(fixed) = &params.fixed_devices {
        if fixed.len() != params.device_count {
            return Err(GeometryError::InvalidConfig(format!(
                "{} fixed device positions given for device_count {}",
                fixed.len(),
                params.device_count
            )));
        }
    }
    Ok(())
}
