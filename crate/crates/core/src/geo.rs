//! Spherical-earth helpers: haversine distance, bounding boxes and the
//! small-displacement meters/degrees conversion used by the noise model.

use serde::{Deserialize, Serialize};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Meters per degree of latitude in the small-displacement approximation.
pub const METERS_PER_DEGREE: f64 = 111_320.0;

/// Haversine distance in meters between two WGS84 positions given in degrees.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let phi1 = lat1.to_radians();
    let phi2 = lat2.to_radians();
    let dphi = (lat2 - lat1).to_radians();
    let dlambda = (lon2 - lon1).to_radians();

    let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    // Rounding can push `a` a hair above 1 for antipodal points.
    2.0 * EARTH_RADIUS_M * a.min(1.0).sqrt().asin()
}

/// Converts a north/east displacement in meters at latitude `lat` into a
/// (Δlat, Δlon) pair in degrees.
pub fn meters_to_degrees(north_m: f64, east_m: f64, lat: f64) -> (f64, f64) {
    let dlat = north_m / METERS_PER_DEGREE;
    let dlon = east_m / (METERS_PER_DEGREE * lat.to_radians().cos());
    (dlat, dlon)
}

/// Axis-aligned latitude/longitude envelope.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl BoundingBox {
    /// Smallest box containing every `(lat, lon)` point, or `None` when empty.
    pub fn from_points<I>(points: I) -> Option<Self>
    where
        I: IntoIterator<Item = (f64, f64)>,
    {
        let mut iter = points.into_iter();
        let (lat, lon) = iter.next()?;
        let mut bbox = BoundingBox {
            lat_min: lat,
            lat_max: lat,
            lon_min: lon,
            lon_max: lon,
        };
        for (lat, lon) in iter {
            bbox.lat_min = bbox.lat_min.min(lat);
            bbox.lat_max = bbox.lat_max.max(lat);
            bbox.lon_min = bbox.lon_min.min(lon);
            bbox.lon_max = bbox.lon_max.max(lon);
        }
        Some(bbox)
    }

    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            lat_min: self.lat_min.min(other.lat_min),
            lat_max: self.lat_max.max(other.lat_max),
            lon_min: self.lon_min.min(other.lon_min),
            lon_max: self.lon_max.max(other.lon_max),
        }
    }

    pub fn lat_span(&self) -> f64 {
        self.lat_max - self.lat_min
    }

    pub fn lon_span(&self) -> f64 {
        self.lon_max - self.lon_min
    }

    /// Closed containment test.
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.lat_min && lat <= self.lat_max && lon >= self.lon_min && lon <= self.lon_max
    }

    /// Grows every side by `fraction` of the box's own extent on that axis.
    pub fn expanded(&self, fraction: f64) -> BoundingBox {
        let dlat = self.lat_span() * fraction;
        let dlon = self.lon_span() * fraction;
        BoundingBox {
            lat_min: self.lat_min - dlat,
            lat_max: self.lat_max + dlat,
            lon_min: self.lon_min - dlon,
            lon_max: self.lon_max + dlon,
        }
    }
}
