//! The atomic observation: one device ping.

use crate::engine::record::{
    key_i64, key_str, put_f64, put_i64, put_opt_f64, put_str, ByteReader, FieldDef, FieldKind,
    Record,
};
use crate::error::{Error, Result};

/// One anonymized device observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Ping {
    pub user_id: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp_utc: i64,
    /// Degrees WGS84, [-90, 90].
    pub lat: f64,
    /// Degrees WGS84, [-180, 180].
    pub lon: f64,
    /// Reported accuracy in meters, when the provider includes one.
    pub accuracy_m: Option<f64>,
}

impl Ping {
    pub fn new(
        user_id: String,
        timestamp_utc: i64,
        lat: f64,
        lon: f64,
        accuracy_m: Option<f64>,
    ) -> Result<Self> {
        if user_id.is_empty() {
            return Err(Error::Ingest("empty user_id".into()));
        }
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::Ingest(format!("coordinate out of range: {lat},{lon}")));
        }
        if let Some(acc) = accuracy_m {
            if !(acc >= 0.0) {
                return Err(Error::Ingest(format!("negative accuracy {acc}")));
            }
        }
        Ok(Ping {
            user_id,
            timestamp_utc,
            lat,
            lon,
            accuracy_m,
        })
    }
}

impl Record for Ping {
    fn schema() -> &'static [FieldDef] {
        &[
            ("user_id", FieldKind::Str),
            ("timestamp", FieldKind::I64),
            ("lat", FieldKind::F64),
            ("lon", FieldKind::F64),
            ("accuracy", FieldKind::F64),
        ]
    }

    fn key_bytes(&self, field: &str, out: &mut Vec<u8>) -> bool {
        match field {
            "user_id" => key_str(&self.user_id, out),
            "timestamp" => key_i64(self.timestamp_utc, out),
            _ => return false,
        }
        true
    }

    fn encode(&self, out: &mut Vec<u8>) {
        put_str(&self.user_id, out);
        put_i64(self.timestamp_utc, out);
        put_f64(self.lat, out);
        put_f64(self.lon, out);
        put_opt_f64(self.accuracy_m, out);
    }

    fn decode(input: &mut ByteReader<'_>) -> Result<Self> {
        Ok(Ping {
            user_id: input.str()?,
            timestamp_utc: input.i64()?,
            lat: input.f64()?,
            lon: input.f64()?,
            accuracy_m: input.opt_f64()?,
        })
    }
}
