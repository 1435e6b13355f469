//! Spherical/Cartesian conversion, pairwise point encodings and 7-DoF boxes.
//!
//! Angle convention: `x = r cosθ cosφ`, `y = r cosθ sinφ`, `z = r sinθ`.
//! `theta` is therefore the angle out of the sensor's horizontal plane (the
//! beam angle, one per image row) and `phi` the rotation about the vertical
//! axis (one per image column).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SphericalCoord {
    pub theta: f64,
    pub phi: f64,
    pub r: f64,
}

impl SphericalCoord {
    pub const fn new(theta: f64, phi: f64, r: f64) -> Self {
        Self { theta, phi, r }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CartesianVec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl CartesianVec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl std::ops::Sub for CartesianVec3 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl std::ops::Add for CartesianVec3 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

pub fn spherical_to_cartesian(p: SphericalCoord) -> CartesianVec3 {
    let (st, ct) = p.theta.sin_cos();
    let (sp, cp) = p.phi.sin_cos();
    CartesianVec3::new(p.r * ct * cp, p.r * ct * sp, p.r * st)
}

/// Inverse of [`spherical_to_cartesian`] with `theta ∈ [-π/2, π/2]` and
/// `phi ∈ (-π, π]`. The origin maps to all zeros.
pub fn cartesian_to_spherical(v: CartesianVec3) -> SphericalCoord {
    let r = v.norm();
    if r == 0.0 {
        return SphericalCoord::default();
    }
    let theta = (v.z / r).clamp(-1.0, 1.0).asin();
    let phi = wrap_angle(v.y.atan2(v.x));
    SphericalCoord::new(theta, phi, r)
}

/// Offset of `x'` from `x` in the oblique frame obtained by rotating the sphere
/// so that `x` sits at `{0, 0, r}`.
pub fn positional_encoding(x: SphericalCoord, xp: SphericalCoord) -> CartesianVec3 {
    let (sdt, cdt) = (xp.theta - x.theta).sin_cos();
    let (sdp, cdp) = (xp.phi - x.phi).sin_cos();
    CartesianVec3::new(xp.r * cdt * cdp - x.r, xp.r * cdt * sdp, xp.r * sdt)
}

/// Displacement between the two points in the sensor's Cartesian frame.
pub fn cartesian_displacement(x: SphericalCoord, xp: SphericalCoord) -> CartesianVec3 {
    spherical_to_cartesian(xp) - spherical_to_cartesian(x)
}

/// Which pairwise encoding feeds the geometric kernels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    #[default]
    Polar,
    Cartesian,
}

impl Encoding {
    pub fn encode(self, center: SphericalCoord, neighbor: SphericalCoord) -> [f64; 3] {
        match self {
            Self::Polar => positional_encoding(center, neighbor),
            Self::Cartesian => cartesian_displacement(center, neighbor),
        }
        .to_array()
    }
}

impl std::str::FromStr for Encoding {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "polar" => Ok(Self::Polar),
            "cartesian" => Ok(Self::Cartesian),
            _ => Err(Error::Config(format!("unknown encoding {s:?}"))),
        }
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a - 2.0 * PI * ((a + PI) / (2.0 * PI)).floor();
    if w <= -PI {
        w += 2.0 * PI;
    }
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Box with a yaw rotation about the vertical axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box7DoF {
    pub center: CartesianVec3,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub yaw: f64,
}

impl Box7DoF {
    pub fn new(center: CartesianVec3, length: f64, width: f64, height: f64, yaw: f64) -> Result<Self> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !(ok(length) && ok(width) && ok(height)) {
            return Err(Error::Contract(format!(
                "box extents must be positive, got {length}x{width}x{height}"
            )));
        }
        if !yaw.is_finite() {
            return Err(Error::Contract("box yaw must be finite".into()));
        }
        Ok(Self {
            center,
            length,
            width,
            height,
            yaw: wrap_angle(yaw),
        })
    }

    pub fn volume(&self) -> f64 {
        self.length * self.width * self.height
    }

    pub fn bev_area(&self) -> f64 {
        self.length * self.width
    }

    pub fn z_min(&self) -> f64 {
        self.center.z - 0.5 * self.height
    }

    pub fn z_max(&self) -> f64 {
        self.center.z + 0.5 * self.height
    }

    /// `p` expressed in the box frame (x along the heading).
    pub fn to_local(&self, p: CartesianVec3) -> CartesianVec3 {
        let d = p - self.center;
        let (s, c) = self.yaw.sin_cos();
        CartesianVec3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    /// Closed containment test, no margin.
    pub fn contains(&self, p: CartesianVec3) -> bool {
        let l = self.to_local(p);
        l.x.abs() <= 0.5 * self.length && l.y.abs() <= 0.5 * self.width && l.z.abs() <= 0.5 * self.height
    }
}

/// Top-down footprint corners, counter-clockwise.
pub fn box_corners_bev(b: &Box7DoF) -> [[f64; 2]; 4] {
    let (s, c) = b.yaw.sin_cos();
    let (hl, hw) = (0.5 * b.length, 0.5 * b.width);
    [[hl, -hw], [hl, hw], [-hl, hw], [-hl, -hw]].map(|[u, v]| {
        [b.center.x + c * u - s * v, b.center.y + s * u + c * v]
    })
}
