//! Rotated-pole coordinate transformation.
//!
//! Rotated-pole grids express positions relative to a displaced pole. A
//! geographic point `(lat, lon)` is mapped into that frame by
//!
//! ```text
//! lat_rot = asin(sin lat * sin plat + cos lat * cos plat * cos dlon)
//! lon_rot = plon + atan2(cos lat * sin dlon,
//!                        sin lat * cos plat - cos lat * sin plat * cos dlon)
//! ```
//!
//! with `dlon = lon - plon`. Longitudes are reported in `(-180, 180]`.

use thiserror::Error;

use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("non-finite angle: {0}")]
    NonFinite(f64),
    #[error("latitude {0} outside [-90, 90]")]
    LatitudeOutOfRange(f64),
}

/// Geographic (or rotated) position in degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoCoord<T> {
    pub lat_deg: T,
    pub lon_deg: T,
}

impl<T: Real> GeoCoord<T> {
    /// Validates the latitude and normalizes the longitude.
    pub fn new(lat_deg: T, lon_deg: T) -> Result<Self, GeoError> {
        if !lat_deg.is_finite() {
            return Err(GeoError::NonFinite(lat_deg.as_f64()));
        }
        if lat_deg.abs() > T::lit(90.0) {
            return Err(GeoError::LatitudeOutOfRange(lat_deg.as_f64()));
        }
        Ok(Self {
            lat_deg,
            lon_deg: normalize_longitude(lon_deg)?,
        })
    }
}

/// Location of the rotated pole in geographic degrees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoleSpec<T> {
    pub pole_lat_deg: T,
    pub pole_lon_deg: T,
}

impl<T: Real> PoleSpec<T> {
    pub fn new(pole_lat_deg: T, pole_lon_deg: T) -> Result<Self, GeoError> {
        let c = GeoCoord::new(pole_lat_deg, pole_lon_deg)?;
        Ok(Self {
            pole_lat_deg: c.lat_deg,
            pole_lon_deg: c.lon_deg,
        })
    }
}

/// Maps `deg` into `(-180, 180]`, preserving it modulo 360.
pub fn normalize_longitude<T: Real>(deg: T) -> Result<T, GeoError> {
    if !deg.is_finite() {
        return Err(GeoError::NonFinite(deg.as_f64()));
    }
    let full = T::lit(360.0);
    let half = T::lit(180.0);
    // rem_euclid lands in [0, 360); fold the upper half down.
    let mut r = deg % full;
    if r < T::zero() {
        r += full;
    }
    if r >= full {
        r -= full;
    }
    if r > half {
        r -= full;
    }
    if r <= -half {
        r += full;
    }
    Ok(r)
}

/// Unnormalized rotated longitude/latitude in radians, shared by the public
/// entry points.
fn rotate_raw<T: Real>(p: GeoCoord<T>, pole: PoleSpec<T>) -> (T, T, T, T) {
    let deg = T::PI() / T::lit(180.0);
    let lat = p.lat_deg * deg;
    let lon = p.lon_deg * deg;
    let plat = pole.pole_lat_deg * deg;
    let plon = pole.pole_lon_deg * deg;
    let dlon = lon - plon;

    let s = lat.sin() * plat.sin() + lat.cos() * plat.cos() * dlon.cos();
    let y = lat.cos() * dlon.sin();
    let x = lat.sin() * plat.cos() - lat.cos() * plat.sin() * dlon.cos();
    // (x, y, s) is the rotated unit vector, so this equals asin(s). asin
    // loses half the digits as s approaches one; this form does not.
    let lat_rot = s.atan2(x.hypot(y));
    (lat_rot, plon, y, x)
}

/// Transforms a geographic point into the frame of `pole`.
///
/// Total for valid inputs; the latitude is in `[-90, 90]` and the longitude
/// in `(-180, 180]`.
pub fn rotate_coordinates<T: Real>(p: GeoCoord<T>, pole: PoleSpec<T>) -> GeoCoord<T> {
    let (lat_rot, plon, y, x) = rotate_raw(p, pole);
    let rad = T::lit(180.0) / T::PI();
    let lon_deg = (plon + y.atan2(x)) * rad;
    GeoCoord {
        lat_deg: lat_rot * rad,
        lon_deg: normalize_longitude(lon_deg).unwrap_or(T::zero()),
    }
}

/// Same as [`rotate_coordinates`] but with the longitude computed by
/// [`piecewise_atan2`] and left unnormalized.
pub fn rotate_coordinates_piecewise<T: Real>(p: GeoCoord<T>, pole: PoleSpec<T>) -> GeoCoord<T> {
    let (lat_rot, plon, y, x) = rotate_raw(p, pole);
    let rad = T::lit(180.0) / T::PI();
    GeoCoord {
        lat_deg: lat_rot * rad,
        lon_deg: (plon + piecewise_atan2(y, x)) * rad,
    }
}

/// Table form of the two-argument arctangent with range `[-pi/2, 3*pi/2)`.
///
/// Differs from [`Float::atan2`] by `2*pi` in the third quadrant
/// (`x < 0`, `y < 0`); both agree modulo a full turn.
pub fn piecewise_atan2<T: Real>(y: T, x: T) -> T {
    let zero = T::zero();
    if x < zero && y >= zero {
        (y / x).atan() + T::PI()
    } else if x < zero && y < zero {
        // the conventional value (atan - pi) lifted by a full turn
        (y / x).atan() + T::PI()
    } else if x > zero {
        (y / x).atan()
    } else if y > zero {
        T::FRAC_PI_2()
    } else if y < zero {
        -T::FRAC_PI_2()
    } else {
        zero
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(lat: f64, lon: f64) -> GeoCoord<f64> {
        GeoCoord::new(lat, lon).unwrap()
    }

    fn pole(lat: f64, lon: f64) -> PoleSpec<f64> {
        PoleSpec::new(lat, lon).unwrap()
    }

    #[test]
    fn point_on_pole_maps_to_north() {
        let r = rotate_coordinates(c(52.0, 13.0), pole(52.0, 13.0));
        assert!((r.lat_deg - 90.0).abs() < 1e-12);
    }

    #[test]
    fn equator_point_under_north_pole() {
        let r = rotate_coordinates(c(0.0, 0.0), pole(90.0, 0.0));
        assert!(r.lat_deg.abs() < 1e-12);
        assert_eq!(r.lon_deg, 180.0);
        let raw = rotate_coordinates_piecewise(c(0.0, 0.0), pole(90.0, 0.0));
        assert_eq!(raw.lon_deg, 180.0);
    }

    // Independent transcription of the rotation, written without any helper
    // from this module.
    fn rotate_oracle(lat: f64, lon: f64, plat: f64, plon: f64) -> (f64, f64) {
        let (lat, lon, plat, plon) = (
            lat * std::f64::consts::PI / 180.0,
            lon * std::f64::consts::PI / 180.0,
            plat * std::f64::consts::PI / 180.0,
            plon * std::f64::consts::PI / 180.0,
        );
        let d = lon - plon;
        let la = (lat.sin() * plat.sin() + lat.cos() * plat.cos() * d.cos()).asin();
        let lo = plon
            + f64::atan2(
                lat.cos() * d.sin(),
                lat.sin() * plat.cos() - lat.cos() * plat.sin() * d.cos(),
            );
        let mut lo = lo.to_degrees();
        while lo > 180.0 {
            lo -= 360.0;
        }
        while lo <= -180.0 {
            lo += 360.0;
        }
        (la.to_degrees(), lo)
    }

    #[test]
    fn wurzburg_against_transcription() {
        let r = rotate_coordinates(c(49.77, 10.16), pole(39.25, -162.0));
        let (la, lo) = rotate_oracle(49.77, 10.16, 39.25, -162.0);
        assert!((r.lat_deg - la).abs() < 1e-12, "{} vs {}", r.lat_deg, la);
        assert!((r.lon_deg - lo).abs() < 1e-12, "{} vs {}", r.lon_deg, lo);
        // Frozen from an external double-precision evaluation.
        assert!((r.lat_deg - -0.712_115_582_039_925_9).abs() < 1e-9, "{}", r.lat_deg);
        assert!((r.lon_deg - -156.945_319_344_946_48).abs() < 1e-9, "{}", r.lon_deg);
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_longitude(360.0).unwrap(), 0.0);
        assert_eq!(normalize_longitude(-180.0).unwrap(), 180.0);
        assert_eq!(normalize_longitude(180.0).unwrap(), 180.0);
        assert!((normalize_longitude(10.16f64 + 720.0).unwrap() - 10.16).abs() < 1e-12);
        assert!(matches!(
            normalize_longitude(f64::NAN),
            Err(GeoError::NonFinite(_))
        ));
    }

    #[test]
    fn rejects_bad_latitude() {
        assert!(GeoCoord::new(90.5, 0.0).is_err());
        assert!(GeoCoord::new(f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn piecewise_table_quadrants() {
        use std::f64::consts::PI;
        assert_eq!(piecewise_atan2(0.0, 0.0), 0.0);
        assert_eq!(piecewise_atan2(1.0, 0.0), PI / 2.0);
        assert_eq!(piecewise_atan2(-1.0, 0.0), -PI / 2.0);
        assert!((piecewise_atan2(-1.0, -1.0) - 1.25 * PI).abs() < 1e-15);
        assert!((piecewise_atan2(1.0, -1.0) - 0.75 * PI).abs() < 1e-15);
    }

    #[test]
    fn f32_instantiation() {
        let r = rotate_coordinates(
            GeoCoord::<f32>::new(52.0, 13.0).unwrap(),
            PoleSpec::<f32>::new(52.0, 13.0).unwrap(),
        );
        assert!((r.lat_deg - 90.0).abs() < 1e-3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn latitude_in_range(lat in -90.0f64..=90.0, lon in -540.0f64..540.0,
                                 plat in -90.0f64..=90.0, plon in -180.0f64..180.0) {
                let r = rotate_coordinates(c(lat, lon), pole(plat, plon));
                prop_assert!(r.lat_deg >= -90.0 && r.lat_deg <= 90.0);
                prop_assert!(r.lon_deg > -180.0 && r.lon_deg <= 180.0);
            }

            #[test]
            fn normalize_is_idempotent(x in -1.0e6f64..1.0e6) {
                let once = normalize_longitude(x).unwrap();
                prop_assert_eq!(normalize_longitude(once).unwrap(), once);
                prop_assert!(once > -180.0 && once <= 180.0);
            }

            #[test]
            fn piecewise_agrees_after_normalization(lat in -90.0f64..=90.0, lon in -180.0f64..180.0,
                                                    plat in -90.0f64..=90.0, plon in -180.0f64..180.0) {
                let p = c(lat, lon);
                let q = pole(plat, plon);
                let a = rotate_coordinates(p, q);
                let b = rotate_coordinates_piecewise(p, q);
                prop_assert_eq!(a.lat_deg, b.lat_deg);
                let bn = normalize_longitude(b.lon_deg).unwrap();
                let diff = (a.lon_deg - bn).abs();
                prop_assert!(diff < 1e-9 || (diff - 360.0).abs() < 1e-9, "{} vs {}", a.lon_deg, bn);
            }
        }
    }
}
