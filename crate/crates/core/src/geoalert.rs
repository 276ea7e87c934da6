//! Zone-proximity alerts computed from zone declarations only.
//!
//! Distance math is generic over the float type; the crate root exports
//! `f64` aliases. A query position is never written anywhere.

use std::fmt;

use num_traits::Float;

use crate::crypto::Digest;
use crate::txmodel::{LocationTx, ZoneType};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

pub const DEFAULT_NEAR_MARGIN_M: f64 = 100.0;

fn lit<T: Float>(v: f64) -> T {
    T::from(v).expect("float literal representable")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoPoint<T> {
    lat: T,
    lon: T,
}

impl<T: Float> GeoPoint<T> {
    /// `None` if either coordinate is outside its range or not finite.
    pub fn new(lat: T, lon: T) -> Option<Self> {
        let ok = lat >= lit(-90.0) && lat <= lit(90.0) && lon >= lit(-180.0) && lon <= lit(180.0);
        ok.then_some(GeoPoint { lat, lon })
    }

    pub fn lat(&self) -> T {
        self.lat
    }

    pub fn lon(&self) -> T {
        self.lon
    }

    pub fn of_zone(zone: &LocationTx) -> Self {
        GeoPoint { lat: lit(zone.lat.degrees()), lon: lit(zone.lon.degrees()) }
    }
}

/// Great-circle distance in meters on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine<T: Float>(a: GeoPoint<T>, b: GeoPoint<T>) -> T {
    let half = lit::<T>(0.5);
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi * half).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda * half).sin().powi(2);
    let h = h.max(T::zero()).min(T::one());
    lit::<T>(2.0 * EARTH_RADIUS_M) * h.sqrt().asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AlertLevel {
    Inside,
    Near,
    Clear,
}

impl AlertLevel {
    pub fn token(self) -> &'static str {
        match self {
            AlertLevel::Inside => "INSIDE",
            AlertLevel::Near => "NEAR",
            AlertLevel::Clear => "CLEAR",
        }
    }

    pub fn classify<T: Float>(distance_m: T, radius_m: T, margin_m: T) -> Self {
        if distance_m <= radius_m {
            AlertLevel::Inside
        } else if distance_m <= radius_m + margin_m {
            AlertLevel::Near
        } else {
            AlertLevel::Clear
        }
    }
}

impl fmt::Display for AlertLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZoneAlert<T> {
    pub zone_id: Digest,
    pub zone_type: ZoneType,
    pub level: AlertLevel,
    pub distance_m: T,
}

impl<T: Float + fmt::Display> ZoneAlert<T> {
    /// `zone=<hex8> type=<RED|ORANGE> level=<INSIDE|NEAR> dist=<m>`
    pub fn to_line(&self) -> String {
        format!(
            "zone={} type={} level={} dist={:.1}",
            &self.zone_id.to_hex()[..8],
            self.zone_type,
            self.level,
            self.distance_m
        )
    }
}

/// One alert per red or orange zone, nearest first. Green zones are skipped.
pub fn classify<T: Float>(position: GeoPoint<T>, zones: &[LocationTx], margin_m: T) -> Vec<ZoneAlert<T>> {
    let margin_m = margin_m.max(T::zero());
    let mut alerts: Vec<ZoneAlert<T>> = zones
        .iter()
        .filter(|z| z.zone_type.is_alerting())
        .map(|z| {
            let distance_m = haversine(position, GeoPoint::of_zone(z));
            ZoneAlert {
                zone_id: z.zone_id,
                zone_type: z.zone_type,
                level: AlertLevel::classify(distance_m, lit(f64::from(z.radius_m)), margin_m),
                distance_m,
            }
        })
        .collect();
    alerts.sort_by(|a, b| {
        a.distance_m
            .partial_cmp(&b.distance_m)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.zone_id.cmp(&b.zone_id))
    });
    alerts
}
