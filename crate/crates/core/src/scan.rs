use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum PointError {
    #[error("radar return position is not finite")]
    NonFinite,
    #[error("radar return at the sensor origin")]
    AtOrigin,
}

/// A single 4D radar return in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarPoint {
    /// Meters, sensor frame.
    pub position: Vector3<f64>,
    /// Radial velocity in m/s, negative when the target is closing.
    pub doppler: f64,
    /// Radar cross section, dBsm.
    pub rcs: f64,
}

impl RadarPoint {
    pub fn new(position: Vector3<f64>, doppler: f64, rcs: f64) -> Result<Self, PointError> {
        if !position.iter().all(|v| v.is_finite()) {
            return Err(PointError::NonFinite);
        }
        if position.norm() == 0.0 {
            return Err(PointError::AtOrigin);
        }
        Ok(Self { position, doppler, rcs })
    }

    /// Unit line-of-sight vector from the sensor to the return.
    pub fn bearing(&self) -> Vector3<f64> {
        self.position / self.position.norm()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scan {
    pub points: Vec<RadarPoint>,
    /// Seconds.
    pub timestamp: f64,
}

impl Scan {
    pub fn new(points: Vec<RadarPoint>, timestamp: f64) -> Self {
        Self { points, timestamp }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid_positions() {
        assert_eq!(RadarPoint::new(Vector3::zeros(), 0.0, 0.0), Err(PointError::AtOrigin));
        assert_eq!(RadarPoint::new(Vector3::new(f64::NAN, 1.0, 0.0), 0.0, 0.0), Err(PointError::NonFinite));
        let p = RadarPoint::new(Vector3::new(0.0, 3.0, 4.0), -1.0, 5.0).unwrap();
        assert_eq!(p.bearing(), Vector3::new(0.0, 0.6, 0.8));
    }
}
