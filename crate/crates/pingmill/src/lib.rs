//! Partitioned GPS-ping analytics for post-disaster mobility studies.
//!
//! The crate turns raw device pings into the standard disaster-response
//! products: per-user activity statistics, home/work inference, commuting
//! OD matrices, hour-of-week land-use clustering, displacement rates
//! grouped by epicenter distance or socio-economic index, POI visit
//! tracking, and tile density anomalies. Everything runs on a partitioned
//! batch engine that streams datasets larger than memory and produces
//! bitwise-identical outputs at any worker count.
//!
//! Start with the runnable examples (`cargo run --example user_stats`,
//! `home_work_inference`, `displacement_rates`, ...) or the `pingmill`
//! binary, which exposes each analysis as a subcommand over a TOML config.

pub mod chart;
pub mod clock;
pub mod config;
pub mod displacement;
pub mod engine;
pub mod error;
pub mod hierarchy;
pub mod homework;
pub mod ingest;
pub mod landuse;
pub mod manifest;
pub mod meanshift;
pub mod ping;
pub mod pipeline;
pub mod poi;
pub mod report;
pub mod spatial;
pub mod stats;

pub use error::{Error, Result};
pub use ping::Ping;
