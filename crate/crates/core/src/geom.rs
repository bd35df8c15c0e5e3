//! Planar positions, the service-area rectangle and UAV poses.

use crate::{Error, Result};

/// Ground position in metres, origin at the lower-left corner of the area.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn dist_sq(&self, other: &Position) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// Axis-aligned service area `[0, width] x [0, height]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Area {
    pub width: f64,
    pub height: f64,
}

impl Area {
    pub fn new(width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
            return Err(Error::Validation(format!(
                "area dimensions must be positive, got {width} x {height}"
            )));
        }
        Ok(Self { width, height })
    }

    pub fn contains(&self, p: &Position) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }

    pub fn clamp(&self, p: Position) -> Position {
        Position::new(p.x.clamp(0.0, self.width), p.y.clamp(0.0, self.height))
    }

    pub fn center(&self) -> Position {
        Position::new(self.width / 2.0, self.height / 2.0)
    }
}

impl Default for Area {
    fn default() -> Self {
        Self { width: 2000.0, height: 2000.0 }
    }
}

/// UAV position: planar coordinates plus altitude `h`, all in metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UavPose {
    pub x: f64,
    pub y: f64,
    pub h: f64,
}

impl UavPose {
    pub fn new(x: f64, y: f64, h: f64) -> Self {
        Self { x, y, h }
    }

    pub fn ground(&self) -> Position {
        Position::new(self.x, self.y)
    }

    pub fn horizontal_dist(&self, user: &Position) -> f64 {
        self.ground().dist(user)
    }
}
