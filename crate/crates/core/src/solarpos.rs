//! Sun position from geolocation and time, discretization onto label grids,
//! and the two-element light encoding fed to the network.
//!
//! The ephemeris is the NOAA low-accuracy formulation (Meeus, "Astronomical
//! Algorithms"): geometric solar longitude, equation of center, nutation and
//! aberration corrections, equation of time. No refraction or parallax.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// 1950-01-01T00:00:00Z
pub const VALID_FROM: f64 = -631_152_000.0;
/// 2051-01-01T00:00:00Z (exclusive)
pub const VALID_UNTIL: f64 = 2_556_144_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolarError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("timestamp {0} outside the 1950-2050 validity window")]
    OutOfRange(f64),
    #[error("sun position ({azimuth}, {zenith}) outside azimuth (-180, 180] / zenith [0, 180)")]
    InvalidPosition { azimuth: f64, zenith: f64 },
    #[error("sun is below the horizon (zenith {0} >= 90)")]
    BelowHorizon(f64),
    #[error("explicit grid is empty")]
    EmptyGrid,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeoTime {
    pub latitude: f64,
    pub longitude: f64,
    /// UTC seconds since the Unix epoch.
    pub timestamp: f64,
}

impl GeoTime {
    pub fn new(latitude: f64, longitude: f64, timestamp: f64) -> Result<Self, SolarError> {
        let g = Self {
            latitude,
            longitude,
            timestamp,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), SolarError> {
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(SolarError::Latitude(self.latitude));
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(SolarError::Longitude(self.longitude));
        }
        if !(VALID_FROM..VALID_UNTIL).contains(&self.timestamp) {
            return Err(SolarError::OutOfRange(self.timestamp));
        }
        Ok(())
    }
}

/// Sun direction in degrees.
///
/// `azimuth` is measured clockwise (seen from above) from the scene-forward
/// axis and wrapped to `(-180, 180]`; for geographic positions the forward
/// axis is north. `zenith` is the angle from vertical, `< 90` above the horizon.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SunPosition {
    pub azimuth: f64,
    pub zenith: f64,
}

/// Maps any angle in degrees onto `(-180, 180]`.
pub fn wrap_azimuth(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    if r > 180.0 {
        r - 360.0
    } else {
        r
    }
}

impl SunPosition {
    pub fn new(azimuth: f64, zenith: f64) -> Result<Self, SolarError> {
        let p = Self { azimuth, zenith };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SolarError> {
        let az_ok = self.azimuth > -180.0 && self.azimuth <= 180.0;
        let zen_ok = (0.0..180.0).contains(&self.zenith);
        if az_ok && zen_ok {
            Ok(())
        } else {
            Err(SolarError::InvalidPosition {
                azimuth: self.azimuth,
                zenith: self.zenith,
            })
        }
    }

    pub fn above_horizon(&self) -> bool {
        self.zenith < 90.0
    }

    /// Azimuth on the compass convention `[0, 360)`.
    pub fn azimuth_north(&self) -> f64 {
        self.azimuth.rem_euclid(360.0)
    }

    /// Angular distance on the (azimuth, zenith) grid, azimuth wrapped.
    pub fn grid_distance(&self, other: &SunPosition) -> f64 {
        let daz = wrap_azimuth(self.azimuth - other.azimuth);
        let dzen = self.zenith - other.zenith;
        (daz * daz + dzen * dzen).sqrt()
    }
}

impl std::fmt::Display for SunPosition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{:.1}, {:.1}]", self.azimuth, self.zenith)
    }
}

fn julian_day(timestamp: f64) -> f64 {
    timestamp / 86_400.0 + 2_440_587.5
}

/// Astronomical sun position for an observer.
pub fn sun_position(gt: &GeoTime) -> Result<SunPosition, SolarError> {
    gt.validate()?;
    let jd = julian_day(gt.timestamp);
    let t = (jd - 2_451_545.0) / 36_525.0;

    let mean_long = (280.466_46 + t * (36_000.769_83 + t * 0.000_303_2)).rem_euclid(360.0);
    let mean_anom = 357.529_11 + t * (35_999.050_29 - 0.000_153_7 * t);
    let ecc = 0.016_708_634 - t * (0.000_042_037 + 0.000_000_126_7 * t);
    let m = mean_anom.to_radians();
    let center = m.sin() * (1.914_602 - t * (0.004_817 + 0.000_014 * t))
        + (2.0 * m).sin() * (0.019_993 - 0.000_101 * t)
        + (3.0 * m).sin() * 0.000_289;
    let true_long = mean_long + center;
    let omega = (125.04 - 1_934.136 * t).to_radians();
    let app_long = true_long - 0.005_69 - 0.004_78 * omega.sin();
    let mean_obliq = 23.0 + (26.0 + (21.448 - t * (46.815 + t * (0.000_59 - t * 0.001_813))) / 60.0) / 60.0;
    let obliq = (mean_obliq + 0.002_56 * omega.cos()).to_radians();
    let decl = (obliq.sin() * app_long.to_radians().sin()).asin();

    let y = (obliq / 2.0).tan().powi(2);
    let l0 = mean_long.to_radians();
    let eq_time_min = 4.0
        * (y * (2.0 * l0).sin() - 2.0 * ecc * m.sin() + 4.0 * ecc * y * m.sin() * (2.0 * l0).cos()
            - 0.5 * y * y * (4.0 * l0).sin()
            - 1.25 * ecc * ecc * (2.0 * m).sin())
        .to_degrees();

    let minutes_utc = gt.timestamp.rem_euclid(86_400.0) / 60.0;
    let true_solar_min = (minutes_utc + eq_time_min + 4.0 * gt.longitude).rem_euclid(1_440.0);
    let hour_angle = (true_solar_min / 4.0 - 180.0).to_radians();

    let lat = gt.latitude.to_radians();
    let cos_zen = (lat.sin() * decl.sin() + lat.cos() * decl.cos() * hour_angle.cos()).clamp(-1.0, 1.0);
    let zenith = cos_zen.acos().to_degrees();
    // clockwise from north
    let az_north = (hour_angle.sin().atan2(hour_angle.cos() * lat.sin() - decl.tan() * lat.cos()).to_degrees()
        + 180.0)
        .rem_euclid(360.0);

    Ok(SunPosition {
        azimuth: wrap_azimuth(az_north),
        zenith: zenith.min(179.999_999),
    })
}

/// How continuous sun angles are snapped to training labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SunGrid {
    /// Keep angles as they are.
    #[default]
    Continuous,
    /// Round both angles to the nearest multiple of ten.
    Tens,
    /// Snap to the nearest entry of an explicit list.
    List { positions: Vec<SunPosition> },
}

/// Rounds both angles to the nearest multiple of ten; ties go away from zero.
///
/// Azimuth -180 is folded onto 180. A zenith that would round to 180 is kept
/// at 170 so the result stays a valid position.
pub fn discretize(p: &SunPosition) -> SunPosition {
    let round10 = |v: f64| (v / 10.0).round() * 10.0;
    SunPosition {
        azimuth: wrap_azimuth(round10(p.azimuth)),
        zenith: round10(p.zenith).min(170.0),
    }
}

/// Nearest grid position; ties resolve to the earliest entry.
pub fn snap_to_list(p: &SunPosition, grid: &[SunPosition]) -> Result<SunPosition, SolarError> {
    let mut best: Option<(f64, SunPosition)> = None;
    for g in grid {
        let d = p.grid_distance(g);
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, *g));
        }
    }
    best.map(|(_, g)| g).ok_or(SolarError::EmptyGrid)
}

impl SunGrid {
    pub fn apply(&self, p: &SunPosition) -> Result<SunPosition, SolarError> {
        match self {
            SunGrid::Continuous => Ok(*p),
            SunGrid::Tens => Ok(discretize(p)),
            SunGrid::List { positions } => snap_to_list(p, positions),
        }
    }
}

/// Network encoding of a sun position: `(azimuth / 180, zenith / 90)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightVector(pub [f64; 2]);

pub fn encode_light(p: &SunPosition) -> LightVector {
    LightVector([p.azimuth / 180.0, p.zenith / 90.0])
}

pub fn decode_light(v: &LightVector) -> SunPosition {
    SunPosition {
        azimuth: v.0[0] * 180.0,
        zenith: v.0[1] * 90.0,
    }
}

/// Encoding for a training or relighting target; below-horizon suns are refused.
pub fn training_light(p: &SunPosition) -> Result<LightVector, SolarError> {
    p.validate()?;
    if !p.above_horizon() {
        return Err(SolarError::BelowHorizon(p.zenith));
    }
    Ok(encode_light(p))
}

/// The nine sun positions of the synthetic benchmark, in report order.
pub const BENCHMARK_POSITIONS: [SunPosition; 9] = [
    SunPosition { azimuth: -60.0, zenith: 60.0 },
    SunPosition { azimuth: 80.0, zenith: 30.0 },
    SunPosition { azimuth: -80.0, zenith: 30.0 },
    SunPosition { azimuth: 60.0, zenith: 60.0 },
    SunPosition { azimuth: 0.0, zenith: 75.0 },
    SunPosition { azimuth: -95.0, zenith: 10.0 },
    SunPosition { azimuth: -15.0, zenith: 80.0 },
    SunPosition { azimuth: 15.0, zenith: 80.0 },
    SunPosition { azimuth: 95.0, zenith: 10.0 },
];

#[cfg(test)]
mod tests {
    use super::*;

    // 2003-10-17T19:30:30Z
    const SPA_TS: f64 = 1_066_419_030.0;

    #[test]
    fn spa_reference_case() {
        let p = sun_position(&GeoTime::new(39.742476, -105.1786, SPA_TS).unwrap()).unwrap();
        // published SPA outputs: topocentric zenith 50.11162, azimuth 194.34024
        assert!((p.zenith - 50.11162).abs() < 0.3, "{p:?}");
        assert!((p.azimuth_north() - 194.34024).abs() < 0.3, "{p:?}");
    }

    #[test]
    fn equinox_noon_on_equator_is_overhead() {
        // 2024-03-20T03:06Z equinox; search the day for minimum zenith at lon 0
        let day = 1_710_892_800.0; // 2024-03-20T00:00Z
        let min_zen = (0..1440)
            .map(|m| sun_position(&GeoTime::new(0.0, 0.0, day + 60.0 * m as f64).unwrap()).unwrap().zenith)
            .fold(f64::INFINITY, f64::min);
        assert!(min_zen < 1.0, "{min_zen}");
    }

    #[test]
    fn midnight_is_below_horizon() {
        let p = sun_position(&GeoTime::new(0.0, 0.0, 1_710_892_800.0).unwrap()).unwrap();
        assert!(p.zenith > 90.0);
        assert!(training_light(&p).is_err());
    }

    #[test]
    fn window_enforced() {
        assert!(matches!(
            GeoTime::new(0.0, 0.0, VALID_UNTIL + 1.0),
            Err(SolarError::OutOfRange(_))
        ));
        assert!(GeoTime::new(91.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn discretize_examples() {
        let d = |a, z| discretize(&SunPosition { azimuth: a, zenith: z });
        assert_eq!(d(-63.2, 57.8), SunPosition { azimuth: -60.0, zenith: 60.0 });
        assert_eq!(d(95.0, 10.0), SunPosition { azimuth: 100.0, zenith: 10.0 });
        assert_eq!(d(-95.0, 15.0), SunPosition { azimuth: -100.0, zenith: 20.0 });
        assert_eq!(d(0.0, 0.0), SunPosition { azimuth: 0.0, zenith: 0.0 });
        assert_eq!(d(-176.0, 178.0), SunPosition { azimuth: 180.0, zenith: 170.0 });
    }

    #[test]
    fn list_grid_snaps_to_benchmark_position() {
        let grid = SunGrid::List {
            positions: BENCHMARK_POSITIONS.to_vec(),
        };
        let p = grid.apply(&SunPosition { azimuth: 94.7, zenith: 10.2 }).unwrap();
        assert_eq!(p, SunPosition { azimuth: 95.0, zenith: 10.0 });
        assert_eq!(
            SunGrid::List { positions: vec![] }.apply(&p),
            Err(SolarError::EmptyGrid)
        );
    }

    #[test]
    fn light_encoding_examples() {
        let v = encode_light(&SunPosition { azimuth: -60.0, zenith: 60.0 });
        assert!((v.0[0] + 1.0 / 3.0).abs() < 1e-15 && (v.0[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(encode_light(&SunPosition { azimuth: 0.0, zenith: 0.0 }).0, [0.0, 0.0]);
        assert_eq!(encode_light(&SunPosition { azimuth: 180.0, zenith: 90.0 }).0, [1.0, 1.0]);
        assert!(training_light(&SunPosition { azimuth: 180.0, zenith: 90.0 }).is_err());
    }
}
