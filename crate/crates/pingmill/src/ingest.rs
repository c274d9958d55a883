//! Read, validate, and filter raw ping files into a partitioned dataset.
//!
//! Plain CSV files are split into byte-range chunks (one partition each)
//! aligned to line boundaries; gzip files are one streaming partition.
//! Validation is total: every input row either becomes a `Ping` or a counted
//! reject with a reason code, and `emitted + rejected = rows read` always
//! holds. A file whose rows are mostly invalid aborts the run, since that is
//! almost always a schema mismatch rather than dirty data.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use crate::clock::TimeWindow;
use crate::engine::dataset::{Dataset, PartitionTask};
use crate::engine::{EngineConfig, ExecCtx};
use crate::error::{Error, Result};
use crate::ping::Ping;
use crate::spatial::BBox;

/// Cap on reject rows written to the sidecar file.
pub const REJECT_CAP: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimestampUnit {
    Seconds,
    Milliseconds,
    /// Values above 10^11 are treated as milliseconds; epoch seconds stay
    /// below that until the year 5138.
    Auto,
}

/// Column mapping and parsing rules for ping CSV files.
#[derive(Debug, Clone)]
pub struct PingSchemaConfig {
    pub col_user_id: String,
    pub col_timestamp: String,
    pub col_lat: String,
    pub col_lon: String,
    /// Accuracy is optional in the data; set to None when the files have no
    /// such column at all.
    pub col_accuracy: Option<String>,
    pub timestamp_unit: TimestampUnit,
    pub delimiter: u8,
    /// With a header, columns are resolved by name; without one, the column
    /// mapping strings must be 0-based indexes.
    pub has_header: bool,
}

impl Default for PingSchemaConfig {
    fn default() -> Self {
        PingSchemaConfig {
            col_user_id: "user_id".into(),
            col_timestamp: "timestamp".into(),
            col_lat: "lat".into(),
            col_lon: "lon".into(),
            col_accuracy: Some("accuracy".into()),
            timestamp_unit: TimestampUnit::Auto,
            delimiter: b',',
            has_header: true,
        }
    }
}

/// Why a raw row was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    BadCoordinate,
    BadTimestamp,
    EmptyUser,
    BadAccuracy,
}

impl RejectReason {
    pub fn code(&self) -> &'static str {
        match self {
            RejectReason::BadCoordinate => "bad_coordinate",
            RejectReason::BadTimestamp => "bad_timestamp",
            RejectReason::EmptyUser => "empty_user",
            RejectReason::BadAccuracy => "bad_accuracy",
        }
    }
}

/// Timestamps are confined to the calendar range the local-time math
/// supports (1970 through 2100).
const MAX_TIMESTAMP: i64 = 4_102_444_800;

/// Validate one raw row. Total: every row maps to a ping or a reason.
pub fn validate_ping(
    user: Option<&str>,
    timestamp: Option<&str>,
    lat: Option<&str>,
    lon: Option<&str>,
    accuracy: Option<&str>,
    unit: TimestampUnit,
) -> std::result::Result<Ping, RejectReason> {
    let user = user.unwrap_or("").trim();
    if user.is_empty() {
        return Err(RejectReason::EmptyUser);
    }
    let ts_raw = timestamp
        .and_then(parse_number)
        .ok_or(RejectReason::BadTimestamp)?;
    let ts = match unit {
        TimestampUnit::Seconds => ts_raw,
        TimestampUnit::Milliseconds => ts_raw.div_euclid(1000),
        TimestampUnit::Auto => {
            if ts_raw > 100_000_000_000 {
                ts_raw.div_euclid(1000)
            } else {
                ts_raw
            }
        }
    };
    if !(0..=MAX_TIMESTAMP).contains(&ts) {
        return Err(RejectReason::BadTimestamp);
    }
    let lat: f64 = lat
        .and_then(|s| s.trim().parse().ok())
        .ok_or(RejectReason::BadCoordinate)?;
    let lon: f64 = lon
        .and_then(|s| s.trim().parse().ok())
        .ok_or(RejectReason::BadCoordinate)?;
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(RejectReason::BadCoordinate);
    }
    let accuracy_m = match accuracy.map(str::trim) {
        None | Some("") => None,
        Some(raw) => {
            let acc: f64 = raw.parse().map_err(|_| RejectReason::BadAccuracy)?;
            if !(acc >= 0.0) {
                return Err(RejectReason::BadAccuracy);
            }
            Some(acc)
        }
    };
    Ok(Ping {
        user_id: user.to_string(),
        timestamp_utc: ts,
        lat,
        lon,
        accuracy_m,
    })
}

fn parse_number(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    let f: f64 = s.parse().ok()?;
    if f.is_finite() {
        Some(f as i64)
    } else {
        None
    }
}

/// Criteria a ping must all satisfy to survive filtering.
#[derive(Debug, Clone, Default)]
pub struct FilterSpec {
    pub bbox: Option<BBox>,
    pub time_window: Option<TimeWindow>,
    /// Rows with accuracy present and above this are dropped; rows with
    /// missing accuracy are kept, since the field is only sometimes present.
    pub max_accuracy_m: Option<f64>,
    pub user_allowlist: Option<HashSet<String>>,
}

impl FilterSpec {
    pub fn is_empty(&self) -> bool {
        self.bbox.is_none()
            && self.time_window.is_none()
            && self.max_accuracy_m.is_none()
            && self.user_allowlist.is_none()
    }

    pub fn keeps(&self, ping: &Ping) -> bool {
        if let Some(bbox) = &self.bbox {
            if !bbox.contains(ping.lon, ping.lat) {
                return false;
            }
        }
        if let Some(window) = &self.time_window {
            if !window.contains(ping.timestamp_utc) {
                return false;
            }
        }
        if let (Some(max), Some(acc)) = (self.max_accuracy_m, ping.accuracy_m) {
            if acc > max {
                return false;
            }
        }
        if let Some(users) = &self.user_allowlist {
            if !users.contains(&ping.user_id) {
                return false;
            }
        }
        true
    }
}

/// Keep pings satisfying every present criterion; lazy, order preserving.
pub fn filter_pings(ds: Dataset<Ping>, spec: FilterSpec) -> Dataset<Ping> {
    if spec.is_empty() {
        return ds;
    }
    ds.filter(move |ping| spec.keeps(ping))
}

// --- ingest monitoring ----------------------------------------------------

#[derive(Debug, Default, Clone)]
struct ChunkReport {
    lines: u64,
    valid: u64,
    invalid: u64,
    rejects: Vec<(u64, RejectReason)>,
}

#[derive(Debug)]
struct FileEntry {
    path: PathBuf,
    chunk_count: u32,
    header_lines: u64,
}

/// Collects per-chunk validation counts and reject rows.
///
/// Reports are keyed by (file, chunk) and replaced on re-runs, so totals stay
/// correct when a lazy dataset is streamed more than once. The majority-
/// invalid check fires as soon as every chunk of a file has reported.
#[derive(Debug)]
pub struct IngestMonitor {
    files: Vec<FileEntry>,
    chunks: Mutex<HashMap<(u32, u32), ChunkReport>>,
}

impl IngestMonitor {
    fn new(files: Vec<FileEntry>) -> Self {
        IngestMonitor {
            files,
            chunks: Mutex::new(HashMap::new()),
        }
    }

    fn chunk_done(&self, file: u32, chunk: u32, report: ChunkReport) -> Result<()> {
        let mut chunks = self.chunks.lock().unwrap();
        chunks.insert((file, chunk), report);
        let entry = &self.files[file as usize];
        let done = (0..entry.chunk_count).all(|c| chunks.contains_key(&(file, c)));
        if done {
            let (mut valid, mut invalid) = (0u64, 0u64);
            for c in 0..entry.chunk_count {
                let r = &chunks[&(file, c)];
                valid += r.valid;
                invalid += r.invalid;
            }
            if invalid * 2 > valid + invalid {
                return Err(Error::Ingest(format!(
                    "{}: {invalid} of {} rows invalid (>50%), likely schema mismatch",
                    entry.path.display(),
                    valid + invalid
                )));
            }
        }
        Ok(())
    }

    /// (rows read, pings emitted, rows rejected) over all reported chunks.
    pub fn totals(&self) -> (u64, u64, u64) {
        let chunks = self.chunks.lock().unwrap();
        let mut valid = 0;
        let mut invalid = 0;
        for r in chunks.values() {
            valid += r.valid;
            invalid += r.invalid;
        }
        (valid + invalid, valid, invalid)
    }

    /// Write the rejects sidecar, sorted by (file, line), capped at
    /// `REJECT_CAP` rows. Line numbers are physical 1-based file lines.
    pub fn write_rejects_csv(&self, path: &Path) -> Result<u64> {
        let chunks = self.chunks.lock().unwrap();
        let mut rows: Vec<(u32, u64, RejectReason)> = Vec::new();
        for (file_idx, entry) in self.files.iter().enumerate() {
            let file_idx = file_idx as u32;
            let mut line_base = 1u64 + entry.header_lines; // physical lines are 1-based
            for c in 0..entry.chunk_count {
                if let Some(r) = chunks.get(&(file_idx, c)) {
                    for (line_in_chunk, reason) in &r.rejects {
                        rows.push((file_idx, line_base + line_in_chunk, *reason));
                    }
                    line_base += r.lines;
                }
            }
        }
        rows.sort_by_key(|(f, l, _)| (*f, *l));
        rows.truncate(REJECT_CAP);
        let mut out = std::io::BufWriter::new(
            File::create(path).map_err(|e| Error::io(path, e))?,
        );
        writeln!(out, "file,line,reason").map_err(|e| Error::io(path, e))?;
        let written = rows.len() as u64;
        for (file_idx, line, reason) in rows {
            writeln!(
                out,
                "{},{line},{}",
                csv_escape(&self.files[file_idx as usize].path.display().to_string()),
                reason.code()
            )
            .map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))?;
        Ok(written)
    }
}

/// Quote a CSV field when it contains the delimiter, quotes, or newlines.
pub fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

// --- readers ---------------------------------------------------------------

#[derive(Debug, Clone)]
struct ResolvedColumns {
    user: usize,
    timestamp: usize,
    lat: usize,
    lon: usize,
    accuracy: Option<usize>,
}

#[derive(Clone)]
struct ChunkSpec {
    path: PathBuf,
    file_idx: u32,
    chunk_idx: u32,
    start: u64,
    end: u64,
    gzip: bool,
    skip_header: bool,
    columns: ResolvedColumns,
    delimiter: u8,
    unit: TimestampUnit,
}

/// Plan the chunked read of `paths` and return the lazy ping dataset plus
/// the monitor that accumulates counts and rejects during execution.
pub fn read_pings(
    paths: &[PathBuf],
    schema: &PingSchemaConfig,
    engine_cfg: &EngineConfig,
) -> Result<(Dataset<Ping>, Arc<IngestMonitor>)> {
    if paths.is_empty() {
        return Err(Error::Ingest("no input files".into()));
    }
    let mut specs: Vec<ChunkSpec> = Vec::new();
    let mut files: Vec<FileEntry> = Vec::new();
    for path in paths {
        let meta = std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
        let gzip = path.extension().is_some_and(|e| e == "gz");
        let (columns, data_start, avg_row_bytes) = inspect_file(path, gzip, schema)?;
        let file_idx = files.len() as u32;
        let mut chunk_count = 0u32;
        if gzip {
            specs.push(ChunkSpec {
                path: path.clone(),
                file_idx,
                chunk_idx: 0,
                start: 0,
                end: u64::MAX,
                gzip,
                skip_header: schema.has_header,
                columns: columns.clone(),
                delimiter: schema.delimiter,
                unit: schema.timestamp_unit,
            });
            chunk_count = 1;
        } else {
            // Chunk size honors both the byte cap and the row cap (with 10%
            // slack for row-length variance around the sampled average).
            let rows_cap_bytes = (engine_cfg.max_partition_rows as f64 * avg_row_bytes * 0.9)
                .max(avg_row_bytes) as u64;
            let chunk_bytes = engine_cfg
                .chunk_bytes
                .min(engine_cfg.max_partition_bytes)
                .min(rows_cap_bytes)
                .max(1);
            let mut start = data_start;
            let size = meta.len();
            loop {
                let end = (start + chunk_bytes).min(size);
                specs.push(ChunkSpec {
                    path: path.clone(),
                    file_idx,
                    chunk_idx: chunk_count,
                    start,
                    end,
                    gzip: false,
                    skip_header: false,
                    columns: columns.clone(),
                    delimiter: schema.delimiter,
                    unit: schema.timestamp_unit,
                });
                chunk_count += 1;
                if end >= size {
                    break;
                }
                start = end;
            }
        }
        files.push(FileEntry {
            path: path.clone(),
            chunk_count,
            header_lines: schema.has_header as u64,
        });
    }
    let monitor = Arc::new(IngestMonitor::new(files));
    let tasks = specs
        .into_iter()
        .enumerate()
        .map(|(id, spec)| {
            let monitor = monitor.clone();
            let rows_estimate = if spec.end == u64::MAX {
                1024
            } else {
                (spec.end - spec.start) / 24
            };
            let bytes_estimate = if spec.end == u64::MAX {
                0
            } else {
                spec.end - spec.start
            };
            let run = Arc::new(
                move |_ctx: &ExecCtx,
                      sink: &mut crate::engine::dataset::RowSink<'_, Ping>| {
                    let report = read_chunk(&spec, sink)?;
                    monitor.chunk_done(spec.file_idx, spec.chunk_idx, report)
                },
            );
            PartitionTask::new(id, rows_estimate, run, None).with_bytes_estimate(bytes_estimate)
        })
        .collect();
    Ok((Dataset::from_tasks(tasks, None), monitor))
}

/// Resolve column indexes (reading the header when there is one) and sample
/// average row length for chunk sizing.
fn inspect_file(
    path: &Path,
    gzip: bool,
    schema: &PingSchemaConfig,
) -> Result<(ResolvedColumns, u64, f64)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader: Box<dyn BufRead> = if gzip {
        Box::new(BufReader::new(flate2::read::GzDecoder::new(file)))
    } else {
        Box::new(BufReader::new(file))
    };
    let mut header = Vec::new();
    let mut data_start = 0u64;
    let columns = if schema.has_header {
        let n = reader
            .read_until(b'\n', &mut header)
            .map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::Ingest(format!("{}: empty file", path.display())));
        }
        data_start = n as u64;
        let header_line = String::from_utf8_lossy(&header);
        let names: Vec<&str> = header_line
            .trim_end_matches(['\n', '\r'])
            .split(schema.delimiter as char)
            .map(|s| s.trim())
            .collect();
        let find = |name: &str| -> Result<usize> {
            names.iter().position(|n| *n == name).ok_or_else(|| {
                Error::Ingest(format!(
                    "{}: mapped column '{name}' not in header ({})",
                    path.display(),
                    names.join(",")
                ))
            })
        };
        ResolvedColumns {
            user: find(&schema.col_user_id)?,
            timestamp: find(&schema.col_timestamp)?,
            lat: find(&schema.col_lat)?,
            lon: find(&schema.col_lon)?,
            accuracy: match &schema.col_accuracy {
                // A configured accuracy column may be absent from the file;
                // the field is only sometimes present in this data.
                Some(name) => names.iter().position(|n| n == name),
                None => None,
            },
        }
    } else {
        let parse_idx = |name: &str, what: &str| -> Result<usize> {
            name.parse().map_err(|_| {
                Error::Ingest(format!(
                    "headerless input: column mapping for {what} must be an index, got '{name}'"
                ))
            })
        };
        ResolvedColumns {
            user: parse_idx(&schema.col_user_id, "user_id")?,
            timestamp: parse_idx(&schema.col_timestamp, "timestamp")?,
            lat: parse_idx(&schema.col_lat, "lat")?,
            lon: parse_idx(&schema.col_lon, "lon")?,
            accuracy: match &schema.col_accuracy {
                Some(name) => Some(parse_idx(name, "accuracy")?),
                None => None,
            },
        }
    };
    // Sample up to 50 rows for the average encoded row length.
    let mut sampled = 0u64;
    let mut bytes = 0u64;
    let mut line = Vec::new();
    for _ in 0..50 {
        line.clear();
        let n = reader
            .read_until(b'\n', &mut line)
            .map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        sampled += 1;
        bytes += n as u64;
    }
    let avg = if sampled > 0 {
        bytes as f64 / sampled as f64
    } else {
        32.0
    };
    Ok((columns, data_start, avg))
}

fn read_chunk(
    spec: &ChunkSpec,
    sink: &mut crate::engine::dataset::RowSink<'_, Ping>,
) -> Result<ChunkReport> {
    let file = File::open(&spec.path).map_err(|e| Error::io(&spec.path, e))?;
    let mut report = ChunkReport::default();
    if spec.gzip {
        let mut reader = BufReader::with_capacity(
            1 << 16,
            flate2::read::GzDecoder::new(file),
        );
        if spec.skip_header {
            let mut header = Vec::new();
            reader
                .read_until(b'\n', &mut header)
                .map_err(|e| Error::io(&spec.path, e))?;
        }
        read_rows(&mut reader, spec, u64::MAX, &mut report, sink)?;
    } else {
        let mut reader = BufReader::with_capacity(1 << 16, file);
        let mut pos = spec.start;
        if spec.start > 0 {
            // Land one byte early: if that byte is the previous line's
            // newline the chunk starts exactly on a row boundary, otherwise
            // the partial row belongs to the previous chunk either way.
            reader
                .seek(SeekFrom::Start(spec.start - 1))
                .map_err(|e| Error::io(&spec.path, e))?;
            let mut skipped = Vec::new();
            let n = reader
                .read_until(b'\n', &mut skipped)
                .map_err(|e| Error::io(&spec.path, e))?;
            pos = spec.start - 1 + n as u64;
        }
        read_rows(&mut reader, spec, spec.end.saturating_sub(pos), &mut report, sink)?;
    }
    Ok(report)
}

/// Read rows until `budget` bytes are consumed (a row started within budget
/// is read to completion) or the stream ends.
fn read_rows(
    reader: &mut impl BufRead,
    spec: &ChunkSpec,
    budget: u64,
    report: &mut ChunkReport,
    sink: &mut crate::engine::dataset::RowSink<'_, Ping>,
) -> Result<()> {
    let mut consumed = 0u64;
    let mut line = Vec::new();
    while consumed < budget {
        line.clear();
        let n = reader
            .read_until(b'\n', &mut line)
            .map_err(|e| Error::io(&spec.path, e))?;
        if n == 0 {
            break;
        }
        consumed += n as u64;
        let line_in_chunk = report.lines;
        report.lines += 1;
        let text = String::from_utf8_lossy(&line);
        let text = text.trim_end_matches(['\n', '\r']);
        if text.is_empty() {
            continue;
        }
        let mut user = None;
        let mut ts = None;
        let mut lat = None;
        let mut lon = None;
        let mut acc = None;
        for (i, field) in text.split(spec.delimiter as char).enumerate() {
            let c = &spec.columns;
            if i == c.user {
                user = Some(field);
            }
            if i == c.timestamp {
                ts = Some(field);
            }
            if i == c.lat {
                lat = Some(field);
            }
            if i == c.lon {
                lon = Some(field);
            }
            if Some(i) == c.accuracy {
                acc = Some(field);
            }
        }
        match validate_ping(user, ts, lat, lon, acc, spec.unit) {
            Ok(ping) => {
                report.valid += 1;
                sink(ping)?;
            }
            Err(reason) => {
                report.invalid += 1;
                report.rejects.push((line_in_chunk, reason));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Engine;
    use std::io::Write as _;

    fn write_file(dir: &Path, name: &str, content: &str) -> PathBuf {
        let path = dir.join(name);
        let mut f = File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        path
    }

    fn small_engine(dir: &Path) -> Engine {
        Engine::new(EngineConfig {
            worker_count: 2,
            work_dir: dir.to_path_buf(),
            ..EngineConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn reads_valid_rows_and_counts_rejects() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "pings.csv",
            "user_id,timestamp,lat,lon,accuracy\n\
             u1,1000,10.0,20.0,15\n\
             u2,1500000000000,1.0,2.0,\n\
             u3,2000,95.0,20.0,5\n",
        );
        let engine = small_engine(dir.path());
        let (ds, monitor) =
            read_pings(&[path], &PingSchemaConfig::default(), engine.config()).unwrap();
        let pings = engine.collect(&ds).unwrap();
        assert_eq!(pings.len(), 2);
        assert_eq!(pings[0].user_id, "u1");
        assert_eq!(pings[0].accuracy_m, Some(15.0));
        // ms auto-detected and divided down
        assert_eq!(pings[1].timestamp_utc, 1_500_000_000);
        assert_eq!(pings[1].accuracy_m, None);
        let (read, emitted, rejected) = monitor.totals();
        assert_eq!((read, emitted, rejected), (3, 2, 1));
    }

    #[test]
    fn validate_reasons_are_enumerated() {
        use RejectReason::*;
        let v = |u, t, la, lo, a| validate_ping(u, t, la, lo, a, TimestampUnit::Auto);
        assert_eq!(
            v(Some("u1"), Some("abc"), Some("1"), Some("1"), None).unwrap_err(),
            BadTimestamp
        );
        assert_eq!(
            v(Some("u1"), Some("1000"), Some("0"), Some("0"), Some("-5")).unwrap_err(),
            BadAccuracy
        );
        assert_eq!(
            v(Some(""), Some("1000"), Some("0"), Some("0"), None).unwrap_err(),
            EmptyUser
        );
        assert_eq!(
            v(Some("u1"), Some("1000"), Some("95"), Some("0"), None).unwrap_err(),
            BadCoordinate
        );
        assert!(v(Some("u1"), Some("1000"), Some("0"), Some("0"), Some("")).is_ok());
    }

    #[test]
    fn missing_file_and_missing_column_are_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let engine = small_engine(dir.path());
        let missing = dir.path().join("missing.csv");
        assert!(read_pings(&[missing], &PingSchemaConfig::default(), engine.config()).is_err());
        let path = write_file(dir.path(), "bad.csv", "a,b,c\n1,2,3\n");
        let err =
            read_pings(&[path], &PingSchemaConfig::default(), engine.config()).unwrap_err();
        assert!(err.to_string().contains("user_id"), "{err}");
    }

    #[test]
    fn mostly_invalid_file_aborts() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "junk.csv",
            "user_id,timestamp,lat,lon,accuracy\n\
             u1,1000,10,20,\n\
             u2,nope,10,20,\n\
             u3,nope,10,20,\n",
        );
        let engine = small_engine(dir.path());
        let (ds, _monitor) =
            read_pings(&[path], &PingSchemaConfig::default(), engine.config()).unwrap();
        let err = engine.collect(&ds).unwrap_err();
        assert!(err.to_string().contains("schema mismatch"), "{err}");
    }

    #[test]
    fn gzip_files_stream_as_one_partition() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pings.csv.gz");
        let mut gz = flate2::write::GzEncoder::new(
            File::create(&path).unwrap(),
            flate2::Compression::default(),
        );
        gz.write_all(b"user_id,timestamp,lat,lon,accuracy\n").unwrap();
        for i in 0..100 {
            writeln!(gz, "u{},{},{}.0,{}.0,", i % 7, 1000 + i, i % 80, i % 170).unwrap();
        }
        gz.finish().unwrap();
        let engine = small_engine(dir.path());
        let (ds, monitor) =
            read_pings(&[path], &PingSchemaConfig::default(), engine.config()).unwrap();
        assert_eq!(ds.partition_count(), 1);
        assert_eq!(engine.count(&ds).unwrap(), 100);
        assert_eq!(monitor.totals(), (100, 100, 0));
    }

    #[test]
    fn chunked_read_equals_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let mut content = String::from("user_id,timestamp,lat,lon,accuracy\n");
        for i in 0..500 {
            content.push_str(&format!("u{},{},{}.5,{}.5,{}\n", i % 13, 1000 + i, i % 80, i % 170, i % 40));
        }
        let path = write_file(dir.path(), "pings.csv", &content);
        // Force tiny chunks so the file splits into many partitions.
        let engine = Engine::new(EngineConfig {
            worker_count: 3,
            chunk_bytes: 512,
            work_dir: dir.path().to_path_buf(),
            ..EngineConfig::default()
        })
        .unwrap();
        let (ds, monitor) =
            read_pings(&[path.clone()], &PingSchemaConfig::default(), engine.config()).unwrap();
        assert!(ds.partition_count() > 10, "got {}", ds.partition_count());
        let chunked = engine.collect(&ds).unwrap();
        assert_eq!(chunked.len(), 500);
        assert_eq!(monitor.totals(), (500, 500, 0));

        let whole = Engine::new(EngineConfig {
            worker_count: 1,
            work_dir: dir.path().to_path_buf(),
            ..EngineConfig::default()
        })
        .unwrap();
        let (ds1, _) =
            read_pings(&[path], &PingSchemaConfig::default(), whole.config()).unwrap();
        assert_eq!(ds1.partition_count(), 1);
        let sequential = whole.collect(&ds1).unwrap();
        assert_eq!(chunked, sequential, "chunking must not change rows or order");
    }

    #[test]
    fn rejects_sidecar_has_exact_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_file(
            dir.path(),
            "pings.csv",
            "user_id,timestamp,lat,lon,accuracy\n\
             u1,1000,10,20,\n\
             ,1001,10,20,\n\
             u3,1002,99,20,\n\
             u4,1003,10,20,\n",
        );
        let engine = small_engine(dir.path());
        let (ds, monitor) =
            read_pings(&[path], &PingSchemaConfig::default(), engine.config()).unwrap();
        let _ = engine.collect(&ds).unwrap();
        let out = dir.path().join("rejects.csv");
        let written = monitor.write_rejects_csv(&out).unwrap();
        assert_eq!(written, 2);
        let text = std::fs::read_to_string(&out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "file,line,reason");
        assert!(lines[1].ends_with(",3,empty_user"), "{}", lines[1]);
        assert!(lines[2].ends_with(",4,bad_coordinate"), "{}", lines[2]);
    }

    #[test]
    fn filter_examples() {
        let ping = |lon: f64, lat: f64| Ping {
            user_id: "u".into(),
            timestamp_utc: 1000,
            lat,
            lon,
            accuracy_m: None,
        };
        let spec = FilterSpec {
            bbox: Some(BBox::new(0.0, 0.0, 1.0, 1.0).unwrap()),
            ..FilterSpec::default()
        };
        assert!(spec.keeps(&ping(0.5, 0.5)));
        assert!(!spec.keeps(&ping(2.0, 2.0)));
        assert!(FilterSpec::default().keeps(&ping(2.0, 2.0)), "empty spec keeps all");
    }

    #[test]
    fn filter_is_idempotent_and_matches_naive_scan() {
        let dir = tempfile::tempdir().unwrap();
        let engine = small_engine(dir.path());
        let mut pings = Vec::new();
        let mut state = 42u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for i in 0..10_000 {
            pings.push(Ping {
                user_id: format!("u{}", i % 97),
                timestamp_utc: (next() * 10_000.0) as i64,
                lat: next() * 20.0 - 10.0,
                lon: next() * 20.0 - 10.0,
                accuracy_m: if i % 3 == 0 { None } else { Some(next() * 100.0) },
            });
        }
        let spec = FilterSpec {
            bbox: Some(BBox::new(-5.0, -5.0, 5.0, 5.0).unwrap()),
            time_window: Some(TimeWindow::new(1000, 9000).unwrap()),
            max_accuracy_m: Some(50.0),
            user_allowlist: None,
        };
        let naive: Vec<Ping> = pings.iter().filter(|p| spec.keeps(p)).cloned().collect();
        let ds = Dataset::from_vec(pings, 7);
        let once = filter_pings(ds.clone(), spec.clone());
        let twice = filter_pings(once.clone(), spec.clone());
        assert_eq!(engine.collect(&once).unwrap(), naive);
        assert_eq!(engine.collect(&twice).unwrap(), naive, "idempotent");
    }
}
