//! Run configuration: a TOML file where every field has a default and every
//! field can be overridden on the command line as `--section.key value`.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::clock::{DaySchedule, LocalClock, TimeWindow};
use crate::displacement::{EventConfig, GroupingSpec, NightWindow};
use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::hierarchy::{Linkage, Metric};
use crate::homework::HomeWorkParams;
use crate::ingest::{FilterSpec, PingSchemaConfig, TimestampUnit};
use crate::landuse::CountMode;
use crate::meanshift::MeanShiftParams;
use crate::spatial::{BBox, Tessellation};
use crate::stats::UserFilterCriteria;

/// Spill-space environment fallback, consulted when `engine.work_dir` is not
/// configured.
pub const WORK_DIR_ENV: &str = "PINGMILL_WORK_DIR";

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: InputSection,
    pub clock: ClockSection,
    pub filter: FilterSection,
    pub tessellation: TessellationSection,
    pub schedule: ScheduleSection,
    pub homework: HomeworkSection,
    pub user_filter: UserFilterSection,
    pub event: EventSection,
    pub grouping: GroupingSection,
    pub displacement: DisplacementSection,
    pub landuse: LanduseSection,
    pub poi: PoiSection,
    pub privacy: PrivacySection,
    pub engine: EngineSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputSection {
    pub paths: Vec<String>,
    pub schema: SchemaSection,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaSection {
    pub user_id: String,
    pub timestamp: String,
    pub lat: String,
    pub lon: String,
    pub accuracy: Option<String>,
    /// "seconds", "milliseconds", or "auto".
    pub timestamp_unit: String,
    pub delimiter: String,
    pub has_header: bool,
}

impl Default for SchemaSection {
    fn default() -> Self {
        SchemaSection {
            user_id: "user_id".into(),
            timestamp: "timestamp".into(),
            lat: "lat".into(),
            lon: "lon".into(),
            accuracy: Some("accuracy".into()),
            timestamp_unit: "auto".into(),
            delimiter: ",".into(),
            has_header: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClockSection {
    pub utc_offset_minutes: i32,
}

impl Default for ClockSection {
    fn default() -> Self {
        ClockSection {
            utc_offset_minutes: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    /// (min_lon, min_lat, max_lon, max_lat)
    pub bbox: Option<[f64; 4]>,
    /// (start_utc, end_utc), end exclusive.
    pub time_window: Option<[i64; 2]>,
    pub max_accuracy_m: Option<f64>,
    pub user_allowlist: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct TessellationSection {
    /// GeoJSON FeatureCollection path.
    pub path: Option<String>,
    /// Fallback uniform grid: bbox plus cell size.
    pub grid_bbox: Option<[f64; 4]>,
    pub grid_cell_m: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub home_hours: Vec<u8>,
    pub work_hours: Vec<u8>,
    /// 0 = Monday .. 6 = Sunday.
    pub work_days: Vec<u8>,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            home_hours: vec![22, 23, 0, 1, 2, 3, 4, 5],
            work_hours: vec![9, 10, 11, 12, 13, 14, 15, 16],
            work_days: vec![0, 1, 2, 3, 4],
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct HomeworkSection {
    pub bandwidth_m: f64,
    pub convergence_tol_m: f64,
    pub max_iterations: u32,
    pub seed_bin_m: Option<f64>,
    pub mode_merge_m: Option<f64>,
    pub min_home_pings: usize,
    pub min_work_pings: usize,
    pub target_partitions: Option<usize>,
}

impl Default for HomeworkSection {
    fn default() -> Self {
        HomeworkSection {
            bandwidth_m: 300.0,
            convergence_tol_m: 1.0,
            max_iterations: 100,
            seed_bin_m: None,
            mode_merge_m: None,
            min_home_pings: 5,
            min_work_pings: 5,
            target_partitions: None,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct UserFilterSection {
    pub min_active_days: Option<u32>,
    pub min_total_pings: Option<u64>,
    pub min_avg_pings_per_day: Option<f64>,
    pub min_span_days: Option<u32>,
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventSection {
    pub time_utc: Option<i64>,
    /// (lon, lat)
    pub epicenter: Option<[f64; 2]>,
    /// (start_utc, end_utc)
    pub baseline: Option<[i64; 2]>,
    pub observation: Option<[i64; 2]>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupingSection {
    /// "none", "epicenter_rings", or "tile_attribute_quantiles".
    pub kind: String,
    pub ring_edges_km: Vec<f64>,
    pub attribute: Option<String>,
    pub quantiles: usize,
}

impl Default for GroupingSection {
    fn default() -> Self {
        GroupingSection {
            kind: "none".into(),
            ring_edges_km: Vec::new(),
            attribute: None,
            quantiles: 4,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisplacementSection {
    pub threshold_m: f64,
    pub night_hours: Vec<u8>,
}

impl Default for DisplacementSection {
    fn default() -> Self {
        DisplacementSection {
            threshold_m: 500.0,
            night_hours: vec![22, 23, 0, 1, 2, 3, 4, 5],
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct LanduseSection {
    /// Required: number of land-use classes.
    pub k: Option<usize>,
    /// "pings" or "distinct_users".
    pub count_mode: String,
    /// "ward" or "average".
    pub linkage: String,
    /// "euclidean" or "cosine".
    pub metric: String,
}

impl Default for LanduseSection {
    fn default() -> Self {
        LanduseSection {
            k: None,
            count_mode: "pings".into(),
            linkage: "ward".into(),
            metric: "euclidean".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoiSection {
    /// CSV path: `poi_id,lon,lat[,radius_m]`.
    pub path: Option<String>,
    pub default_radius_m: f64,
}

impl Default for PoiSection {
    fn default() -> Self {
        PoiSection {
            path: None,
            default_radius_m: 250.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacySection {
    pub k_anonymity: u64,
}

impl Default for PrivacySection {
    fn default() -> Self {
        PrivacySection { k_anonymity: 10 }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineSection {
    pub workers: Option<usize>,
    pub max_partition_rows: u64,
    pub max_partition_bytes: u64,
    pub chunk_bytes: u64,
    pub work_dir: Option<String>,
}

impl Default for EngineSection {
    fn default() -> Self {
        EngineSection {
            workers: None,
            max_partition_rows: 1_000_000,
            max_partition_bytes: 256 << 20,
            chunk_bytes: 128 << 20,
            work_dir: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
    pub charts: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: "out".into(),
            charts: true,
        }
    }
}

impl RunConfig {
    /// Load the config file (or defaults when None), apply `--key value`
    /// overrides in order, and deserialize strictly.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<(RunConfig, toml::Value)> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        let mut doc: toml::Value = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        if !doc.is_table() {
            doc = toml::Value::Table(Default::default());
        }
        for (key, raw) in overrides {
            apply_override(&mut doc, key, raw)?;
        }
        let config: RunConfig = doc
            .clone()
            .try_into()
            .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        Ok((config, doc))
    }

    pub fn clock(&self) -> Result<LocalClock> {
        LocalClock::from_offset_minutes(self.clock.utc_offset_minutes)
    }

    pub fn schema(&self) -> Result<PingSchemaConfig> {
        let unit = match self.input.schema.timestamp_unit.as_str() {
            "seconds" => TimestampUnit::Seconds,
            "milliseconds" => TimestampUnit::Milliseconds,
            "auto" => TimestampUnit::Auto,
            other => {
                return Err(Error::Config(format!(
                    "timestamp_unit '{other}' must be seconds, milliseconds, or auto"
                )))
            }
        };
        let delim = self.input.schema.delimiter.as_bytes();
        if delim.len() != 1 {
            return Err(Error::Config(format!(
                "delimiter '{}' must be a single byte",
                self.input.schema.delimiter
            )));
        }
        Ok(PingSchemaConfig {
            col_user_id: self.input.schema.user_id.clone(),
            col_timestamp: self.input.schema.timestamp.clone(),
            col_lat: self.input.schema.lat.clone(),
            col_lon: self.input.schema.lon.clone(),
            col_accuracy: self.input.schema.accuracy.clone(),
            timestamp_unit: unit,
            delimiter: delim[0],
            has_header: self.input.schema.has_header,
        })
    }

    pub fn input_paths(&self) -> Result<Vec<PathBuf>> {
        if self.input.paths.is_empty() {
            return Err(Error::Config("input.paths is empty".into()));
        }
        let paths: Vec<PathBuf> = self.input.paths.iter().map(PathBuf::from).collect();
        for p in &paths {
            if !p.exists() {
                return Err(Error::Config(format!("input file {} does not exist", p.display())));
            }
        }
        Ok(paths)
    }

    pub fn filter_spec(&self) -> Result<FilterSpec> {
        let bbox = match self.filter.bbox {
            Some([a, b, c, d]) => Some(BBox::new(a, b, c, d)?),
            None => None,
        };
        let time_window = match self.filter.time_window {
            Some([s, e]) => Some(TimeWindow::new(s, e)?),
            None => None,
        };
        if let Some(m) = self.filter.max_accuracy_m {
            if !(m >= 0.0) {
                return Err(Error::Config(format!("max_accuracy_m {m} must be >= 0")));
            }
        }
        Ok(FilterSpec {
            bbox,
            time_window,
            max_accuracy_m: self.filter.max_accuracy_m,
            user_allowlist: self
                .filter
                .user_allowlist
                .as_ref()
                .map(|v| v.iter().cloned().collect::<HashSet<String>>()),
        })
    }

    /// Tessellation from the configured GeoJSON path or grid spec.
    pub fn tessellation(&self) -> Result<Option<Arc<Tessellation>>> {
        if let Some(path) = &self.tessellation.path {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            return Ok(Some(Arc::new(crate::spatial::load_tessellation(&text)?)));
        }
        match (self.tessellation.grid_bbox, self.tessellation.grid_cell_m) {
            (Some([a, b, c, d]), Some(cell)) => Ok(Some(Arc::new(crate::spatial::make_grid(
                BBox::new(a, b, c, d)?,
                cell,
            )?))),
            (None, None) => Ok(None),
            _ => Err(Error::Config(
                "grid tessellation needs both grid_bbox and grid_cell_m".into(),
            )),
        }
    }

    pub fn schedule(&self) -> Result<DaySchedule> {
        DaySchedule::new(
            self.schedule.home_hours.iter().copied(),
            self.schedule.work_hours.iter().copied(),
            self.schedule.work_days.iter().copied(),
        )
    }

    pub fn home_work_params(&self) -> Result<HomeWorkParams> {
        let mut ms = MeanShiftParams::new(self.homework.bandwidth_m)?;
        ms.convergence_tol_m = self.homework.convergence_tol_m;
        ms.max_iterations = self.homework.max_iterations;
        if let Some(v) = self.homework.seed_bin_m {
            ms.seed_bin_m = v;
        }
        if let Some(v) = self.homework.mode_merge_m {
            ms.mode_merge_m = v;
        }
        ms.validate()?;
        Ok(HomeWorkParams {
            mean_shift: ms,
            schedule: self.schedule()?,
            min_home_pings: self.homework.min_home_pings,
            min_work_pings: self.homework.min_work_pings,
        })
    }

    pub fn user_filter(&self) -> UserFilterCriteria {
        UserFilterCriteria {
            min_active_days: self.user_filter.min_active_days,
            min_total_pings: self.user_filter.min_total_pings,
            min_avg_pings_per_day: self.user_filter.min_avg_pings_per_day,
            min_span_days: self.user_filter.min_span_days,
        }
    }

    pub fn event(&self) -> Result<EventConfig> {
        let time_utc = self
            .event
            .time_utc
            .ok_or_else(|| Error::Config("event.time_utc is required".into()))?;
        let [bs, be] = self
            .event
            .baseline
            .ok_or_else(|| Error::Config("event.baseline window is required".into()))?;
        let [os, oe] = self
            .event
            .observation
            .ok_or_else(|| Error::Config("event.observation window is required".into()))?;
        let event = EventConfig {
            event_time_utc: time_utc,
            epicenter: self.event.epicenter.map(|[lon, lat]| (lon, lat)),
            baseline_window: TimeWindow::new(bs, be)?,
            observation_window: TimeWindow::new(os, oe)?,
        };
        event.validate()?;
        Ok(event)
    }

    pub fn grouping(&self) -> Result<GroupingSpec> {
        let spec = match self.grouping.kind.as_str() {
            "none" => GroupingSpec::None,
            "epicenter_rings" => GroupingSpec::EpicenterRings {
                ring_edges_km: self.grouping.ring_edges_km.clone(),
            },
            "tile_attribute_quantiles" => GroupingSpec::TileAttributeQuantiles {
                attribute: self
                    .grouping
                    .attribute
                    .clone()
                    .ok_or_else(|| Error::Config("grouping.attribute is required".into()))?,
                quantile_count: self.grouping.quantiles,
            },
            other => {
                return Err(Error::Config(format!(
                    "grouping.kind '{other}' must be none, epicenter_rings, or tile_attribute_quantiles"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn night_window(&self) -> Result<NightWindow> {
        NightWindow::new(self.displacement.night_hours.iter().copied())
    }

    pub fn landuse_mode(&self) -> Result<CountMode> {
        match self.landuse.count_mode.as_str() {
            "pings" => Ok(CountMode::Pings),
            "distinct_users" => Ok(CountMode::DistinctUsers),
            other => Err(Error::Config(format!(
                "landuse.count_mode '{other}' must be pings or distinct_users"
            ))),
        }
    }

    pub fn landuse_linkage(&self) -> Result<(Linkage, Metric)> {
        let linkage = match self.landuse.linkage.as_str() {
            "ward" => Linkage::Ward,
            "average" => Linkage::Average,
            other => {
                return Err(Error::Config(format!(
                    "landuse.linkage '{other}' must be ward or average"
                )))
            }
        };
        let metric = match self.landuse.metric.as_str() {
            "euclidean" => Metric::Euclidean,
            "cosine" => Metric::Cosine,
            other => {
                return Err(Error::Config(format!(
                    "landuse.metric '{other}' must be euclidean or cosine"
                )))
            }
        };
        Ok((linkage, metric))
    }

    /// Engine config with work-dir resolution: config value, then the
    /// environment fallback, then the system temp dir.
    pub fn engine_config(&self) -> Result<EngineConfig> {
        let work_dir = self
            .engine
            .work_dir
            .clone()
            .map(PathBuf::from)
            .or_else(|| std::env::var_os(WORK_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(std::env::temp_dir);
        let worker_count = match self.engine.workers {
            Some(0) => return Err(Error::Config("engine.workers must be >= 1".into())),
            Some(n) => n,
            None => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
        };
        Ok(EngineConfig {
            worker_count,
            max_partition_rows: self.engine.max_partition_rows,
            max_partition_bytes: self.engine.max_partition_bytes,
            chunk_bytes: self.engine.chunk_bytes,
            work_dir,
        })
    }

    pub fn output_dir(&self) -> PathBuf {
        PathBuf::from(&self.output.dir)
    }
}

/// Set `dotted.key` in the TOML document to the parsed value (TOML literal
/// when it parses, bare string otherwise).
pub fn apply_override(doc: &mut toml::Value, dotted_key: &str, raw: &str) -> Result<()> {
    let parts: Vec<&str> = dotted_key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key '{dotted_key}'")));
    }
    let value = parse_override_value(raw);
    let mut cursor = doc;
    for part in &parts[..parts.len() - 1] {
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override '{dotted_key}' crosses a non-table")))?;
        cursor = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = cursor
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override '{dotted_key}' crosses a non-table")))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn parse_override_value(raw: &str) -> toml::Value {
    // Try the raw text as a TOML literal first, so numbers, booleans, and
    // arrays work; anything else is a string.
    if let Ok(table) = toml::from_str::<toml::Value>(&format!("v = {raw}")) {
        if let Some(v) = table.get("v") {
            return v.clone();
        }
    }
    toml::Value::String(raw.to_string())
}
