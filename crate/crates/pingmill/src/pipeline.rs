//! Subcommand orchestration: configuration to output files.
//!
//! Every run validates its configuration before touching the output
//! directory, executes its stages on the engine, and writes the module CSVs
//! plus a rejects sidecar and a run manifest. Aggregate outputs go through
//! k-anonymity suppression at write time.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::chart::{line_chart, ChartSeries};
use crate::clock::LocalClock;
use crate::config::RunConfig;
use crate::displacement::{
    displacement_rates, displacement_series, group_users, tile_population_anomalies, write_anomalies_csv,
    write_rates_csv, AnomalyRow, DailyRate,
};
use crate::engine::{Dataset, Engine, ExecutionPlan, StageKind};
use crate::error::{Error, Result};
use crate::homework::{infer_home_work, od_matrix, write_home_work_csv, write_od_csv, HomeWorkResult};
use crate::ingest::{filter_pings, read_pings, FilterSpec, IngestMonitor};
use crate::landuse::{
    hierarchical_cluster, labeled_geojson, normalize_profiles, tile_activity_profiles,
    write_labels_csv, write_merge_tree_csv, write_profiles_csv,
};
use crate::manifest::{RunManifest, StageClock};
use crate::ping::Ping;
use crate::poi::{daily_visits, parse_pois_csv, visit_rate_change, write_visit_changes_csv, write_visits_csv, PoiIndex};
use crate::report::CoverageReport;
use crate::spatial::{tessellation_to_geojson, Tessellation};
use crate::stats::{filter_users, user_stats, write_user_stats_csv};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Stats,
    Homework,
    Od,
    Landuse,
    Displacement,
    Anomalies,
    Poi,
    Grid,
}

impl Subcommand {
    pub fn parse(name: &str) -> Option<Subcommand> {
        Some(match name {
            "stats" => Subcommand::Stats,
            "homework" => Subcommand::Homework,
            "od" => Subcommand::Od,
            "landuse" => Subcommand::Landuse,
            "displacement" => Subcommand::Displacement,
            "anomalies" => Subcommand::Anomalies,
            "poi" => Subcommand::Poi,
            "grid" => Subcommand::Grid,
            _ => return None,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Subcommand::Stats => "stats",
            Subcommand::Homework => "homework",
            Subcommand::Od => "od",
            Subcommand::Landuse => "landuse",
            Subcommand::Displacement => "displacement",
            Subcommand::Anomalies => "anomalies",
            Subcommand::Poi => "poi",
            Subcommand::Grid => "grid",
        }
    }

    pub const ALL: [&'static str; 8] = [
        "stats",
        "homework",
        "od",
        "landuse",
        "displacement",
        "anomalies",
        "poi",
        "grid",
    ];
}

/// What a run produced, for callers and tests.
#[derive(Debug)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub outputs: Vec<PathBuf>,
}

struct RunCtx {
    config: RunConfig,
    engine: Engine,
    clock: LocalClock,
    out_dir: PathBuf,
    manifest: RunManifest,
    clock_laps: StageClock,
    outputs: Vec<PathBuf>,
}

impl RunCtx {
    fn write_output(&mut self, name: &str, write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        let mut out = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        write(&mut out).map_err(|e| Error::io(&path, e))?;
        out.flush().map_err(|e| Error::io(&path, e))?;
        self.manifest.add_output(&path);
        self.outputs.push(path.clone());
        Ok(path)
    }

    fn finish(mut self, monitor: Option<&IngestMonitor>, filtered_out: u64) -> Result<RunOutcome> {
        if let Some(monitor) = monitor {
            let (read, emitted, rejected) = monitor.totals();
            self.manifest.counts.rows_read = read;
            self.manifest.counts.rows_emitted = emitted;
            self.manifest.counts.rows_rejected = rejected;
            self.manifest.counts.rows_filtered_out = filtered_out;
            let rejects_path = self.out_dir.join("rejects.csv");
            monitor.write_rejects_csv(&rejects_path)?;
            self.manifest.add_output(&rejects_path);
            self.outputs.push(rejects_path);
        }
        self.manifest.stages = self.clock_laps.into_entries();
        let manifest_path = self.out_dir.join("manifest.toml");
        self.manifest.write(&manifest_path)?;
        self.outputs.push(manifest_path);
        Ok(RunOutcome {
            output_dir: self.out_dir,
            outputs: self.outputs,
        })
    }
}

/// Run one subcommand: load and validate config, execute, write outputs.
pub fn run(
    subcommand: Subcommand,
    config_path: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<RunOutcome> {
    let (config, snapshot) = RunConfig::load(config_path, overrides)?;
    let engine = Engine::new(config.engine_config()?)?;
    let clock = config.clock()?;
    let worker_count = engine.config().worker_count;

    // Validate everything the subcommand needs before creating outputs.
    let plan = build_plan(subcommand, &config, worker_count)?;
    plan.validate()?;

    let out_dir = config.output_dir();
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let ctx = RunCtx {
        manifest: RunManifest::new(subcommand.name(), worker_count, snapshot),
        config,
        engine,
        clock,
        out_dir,
        clock_laps: StageClock::start(),
        outputs: Vec::new(),
    };
    match subcommand {
        Subcommand::Stats => run_stats(ctx),
        Subcommand::Homework => run_homework(ctx),
        Subcommand::Od => run_od(ctx),
        Subcommand::Landuse => run_landuse(ctx),
        Subcommand::Displacement => run_displacement(ctx),
        Subcommand::Anomalies => run_anomalies(ctx),
        Subcommand::Poi => run_poi(ctx),
        Subcommand::Grid => run_grid(ctx),
    }
}

/// Build and validate the stage DAG for a subcommand; doubles as the
/// up-front configuration check.
fn build_plan(subcommand: Subcommand, config: &RunConfig, workers: usize) -> Result<ExecutionPlan> {
    use StageKind::*;
    let plan = ExecutionPlan::new(workers)?;
    let ingest = |p: ExecutionPlan| -> Result<ExecutionPlan> {
        config.input_paths()?;
        config.schema()?;
        config.filter_spec()?;
        Ok(p.stage("read", Source, &[]).stage("filter", Map, &["read"]))
    };
    Ok(match subcommand {
        Subcommand::Stats => ingest(plan)?
            .stage("user_stats", Reduce, &["filter"])
            .stage("write_stats", Sink, &["user_stats"]),
        Subcommand::Homework | Subcommand::Od => {
            config.home_work_params()?;
            let p = ingest(plan)?
                .stage("by_user", Shuffle, &["filter"])
                .stage("infer_home_work", Map, &["by_user"]);
            if subcommand == Subcommand::Od {
                if config.tessellation()?.is_none() {
                    return Err(Error::Config(
                        "od requires a tessellation (path or grid)".into(),
                    ));
                }
                p.stage("od_matrix", Reduce, &["infer_home_work"])
                    .stage("write_od", Sink, &["od_matrix"])
            } else {
                p.stage("write_home_work", Sink, &["infer_home_work"])
            }
        }
        Subcommand::Landuse => {
            if config.tessellation()?.is_none() {
                return Err(Error::Config(
                    "landuse requires a tessellation (path or grid)".into(),
                ));
            }
            config.landuse_mode()?;
            config.landuse_linkage()?;
            if config.landuse.k.is_none() {
                return Err(Error::Config("landuse.k is required".into()));
            }
            ingest(plan)?
                .stage("profiles", Reduce, &["filter"])
                .stage("cluster", Map, &["profiles"])
                .stage("write_landuse", Sink, &["cluster"])
        }
        Subcommand::Displacement => {
            config.event()?;
            config.grouping()?;
            config.home_work_params()?;
            config.night_window()?;
            if matches!(config.grouping()?, crate::displacement::GroupingSpec::TileAttributeQuantiles { .. })
                && config.tessellation()?.is_none()
            {
                return Err(Error::Config(
                    "attribute grouping requires a tessellation".into(),
                ));
            }
            ingest(plan)?
                .stage("by_user", Shuffle, &["filter"])
                .stage("homes", Map, &["by_user"])
                .stage("nights", Reduce, &["filter"])
                .stage("rates", Reduce, &["nights", "homes"])
                .stage("write_rates", Sink, &["rates"])
        }
        Subcommand::Anomalies => {
            config.event()?;
            if config.tessellation()?.is_none() {
                return Err(Error::Config(
                    "anomalies requires a tessellation (path or grid)".into(),
                ));
            }
            ingest(plan)?
                .stage("tile_users", Reduce, &["filter"])
                .stage("anomalies", Map, &["tile_users"])
                .stage("write_anomalies", Sink, &["anomalies"])
        }
        Subcommand::Poi => {
            load_pois(config)?;
            ingest(plan)?
                .stage("visits", Reduce, &["filter"])
                .stage("write_visits", Sink, &["visits"])
        }
        Subcommand::Grid => {
            let has_grid =
                config.tessellation.grid_bbox.is_some() && config.tessellation.grid_cell_m.is_some();
            if !has_grid {
                return Err(Error::Config(
                    "grid requires tessellation.grid_bbox and tessellation.grid_cell_m".into(),
                ));
            }
            plan.stage("make_grid", Source, &[])
                .stage("write_grid", Sink, &["make_grid"])
        }
    })
}

fn load_pois(config: &RunConfig) -> Result<Vec<crate::poi::PointOfInterest>> {
    let path = config
        .poi
        .path
        .as_ref()
        .ok_or_else(|| Error::Config("poi.path is required".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pois_csv(&text, config.poi.default_radius_m)
}

/// Read and filter the input pings; registers input digests in the manifest.
fn ingest_stage(ctx: &mut RunCtx) -> Result<(Dataset<Ping>, Arc<IngestMonitor>, FilterSpec)> {
    let paths = ctx.config.input_paths()?;
    let digests = ctx
        .engine
        .parallel_map(paths.len(), |i| crate::manifest::sha256_file(&paths[i]))?;
    for (p, (sha256, bytes)) in paths.iter().zip(digests) {
        ctx.manifest.inputs.push(crate::manifest::InputDigest {
            path: p.display().to_string(),
            bytes,
            sha256,
        });
    }
    let schema = ctx.config.schema()?;
    let spec = ctx.config.filter_spec()?;
    let (ds, monitor) = read_pings(&paths, &schema, ctx.engine.config())?;
    let filtered = filter_pings(ds, spec.clone());
    ctx.clock_laps.lap("ingest_plan");
    Ok((filtered, monitor, spec))
}

fn auto_targets(engine: &Engine, ds: &Dataset<Ping>) -> usize {
    let per_partition = engine.config().max_partition_rows.max(1);
    let by_rows = ds.rows_estimate().div_ceil(per_partition) as usize;
    by_rows.max(engine.config().worker_count).clamp(1, 4096)
}

fn apply_user_filter(
    ctx: &mut RunCtx,
    ds: Dataset<Ping>,
) -> Result<Dataset<Ping>> {
    let criteria = ctx.config.user_filter();
    if criteria.is_empty() {
        return Ok(ds);
    }
    let stats = user_stats(&ctx.engine, &ds, &ctx.clock)?;
    ctx.clock_laps.lap("user_stats_for_filter");
    filter_users(ds, &stats, &criteria)
}

fn run_stats(mut ctx: RunCtx) -> Result<RunOutcome> {
    let (ds, monitor, _spec) = ingest_stage(&mut ctx)?;
    let table = user_stats(&ctx.engine, &ds, &ctx.clock)?;
    ctx.clock_laps.lap("user_stats");
    let survivors: u64 = table.iter().map(|s| s.total_pings).sum();
    ctx.write_output("user_stats.csv", |out| write_user_stats_csv(&table, out))?;
    ctx.clock_laps.lap("write_stats");
    let (_, emitted, _) = monitor.totals();
    ctx.finish(Some(&monitor), emitted - survivors)
}

fn infer_homes_stage(ctx: &mut RunCtx, ds: &Dataset<Ping>) -> Result<Vec<HomeWorkResult>> {
    let params = ctx.config.home_work_params()?;
    let tess = ctx.config.tessellation()?;
    let targets = ctx
        .config
        .homework
        .target_partitions
        .unwrap_or_else(|| auto_targets(&ctx.engine, ds));
    let results = infer_home_work(&ctx.engine, ds, &ctx.clock, &params, tess, targets)?;
    ctx.clock_laps.lap("infer_home_work");
    Ok(results)
}

fn count_filtered(ctx: &mut RunCtx, ds: &Dataset<Ping>, spec: &FilterSpec, monitor: &IngestMonitor) -> Result<u64> {
    if spec.is_empty() {
        return Ok(0);
    }
    let survivors = ctx.engine.count(ds)?;
    ctx.clock_laps.lap("count_filtered");
    let (_, emitted, _) = monitor.totals();
    Ok(emitted - survivors)
}

fn run_homework(mut ctx: RunCtx) -> Result<RunOutcome> {
    let (ds, monitor, spec) = ingest_stage(&mut ctx)?;
    let ds = apply_user_filter(&mut ctx, ds)?;
    let results = infer_homes_stage(&mut ctx, &ds)?;
    ctx.write_output("home_work.csv", |out| write_home_work_csv(&results, out))?;
    ctx.clock_laps.lap("write_home_work");
    let filtered = count_filtered(&mut ctx, &ds, &spec, &monitor)?;
    ctx.finish(Some(&monitor), filtered)
}

fn run_od(mut ctx: RunCtx) -> Result<RunOutcome> {
    let (ds, monitor, spec) = ingest_stage(&mut ctx)?;
    let ds = apply_user_filter(&mut ctx, ds)?;
    let results = infer_homes_stage(&mut ctx, &ds)?;
    let (matrix, coverage) = od_matrix(&results);
    ctx.clock_laps.lap("od_matrix");
    let k = ctx.config.privacy.k_anonymity;
    ctx.write_output("od.csv", |out| write_od_csv(&matrix, k, out))?;
    ctx.write_output("od_coverage.csv", |out| coverage.write_csv(out))?;
    ctx.clock_laps.lap("write_od");
    let filtered = count_filtered(&mut ctx, &ds, &spec, &monitor)?;
    ctx.finish(Some(&monitor), filtered)
}

fn run_landuse(mut ctx: RunCtx) -> Result<RunOutcome> {
    let (ds, monitor, spec) = ingest_stage(&mut ctx)?;
    let tess = ctx.config.tessellation()?.expect("validated in plan");
    let mode = ctx.config.landuse_mode()?;
    let (linkage, metric) = ctx.config.landuse_linkage()?;
    let k = ctx.config.landuse.k.expect("validated in plan");
    let profiles = tile_activity_profiles(&ctx.engine, &ds, tess.clone(), &ctx.clock, mode)?;
    ctx.clock_laps.lap("profiles");
    ctx.write_output("profiles.csv", |out| write_profiles_csv(&profiles, out))?;
    let (normalized, excluded) = normalize_profiles(profiles);
    if excluded > 0 {
        eprintln!("warning: {excluded} zero-activity profiles excluded from clustering");
    }
    if normalized.is_empty() {
        return Err(Error::Ingest("no tile activity to cluster".into()));
    }
    if k > normalized.len() {
        return Err(Error::Parameter(format!(
            "landuse.k = {k} exceeds the {} active tiles",
            normalized.len()
        )));
    }
    let clustering = hierarchical_cluster(&normalized, k, linkage, metric)?;
    ctx.clock_laps.lap("cluster");
    ctx.write_output("landuse_labels.csv", |out| write_labels_csv(&clustering, out))?;
    ctx.write_output("merge_tree.csv", |out| write_merge_tree_csv(&clustering, out))?;
    let geojson = labeled_geojson(&tess, &clustering);
    ctx.write_output("landuse.geojson", |out| out.write_all(geojson.as_bytes()))?;
    ctx.clock_laps.lap("write_landuse");
    let filtered = count_filtered(&mut ctx, &ds, &spec, &monitor)?;
    ctx.finish(Some(&monitor), filtered)
}

fn rates_chart_series(rates: &[DailyRate]) -> Vec<ChartSeries> {
    let mut by_group: BTreeMap<&str, Vec<(crate::clock::LocalDate, f64)>> = BTreeMap::new();
    for r in rates {
        by_group.entry(&r.group).or_default().push((r.date, r.rate));
    }
    by_group
        .into_iter()
        .map(|(label, points)| ChartSeries {
            label: label.to_string(),
            points,
        })
        .collect()
}

fn run_displacement(mut ctx: RunCtx) -> Result<RunOutcome> {
    let (ds, monitor, spec) = ingest_stage(&mut ctx)?;
    let ds = apply_user_filter(&mut ctx, ds)?;
    let event = ctx.config.event()?;
    let tess = ctx.config.tessellation()?;
    let night = ctx.config.night_window()?;
    let grouping = ctx.config.grouping()?;
    let threshold = ctx.config.displacement.threshold_m;
    let k = ctx.config.privacy.k_anonymity;

    // Homes come strictly from baseline-window pings.
    let baseline_window = event.baseline_window;
    let baseline_ds = ds.clone().filter(move |p| baseline_window.contains(p.timestamp_utc));
    let homes = infer_homes_stage(&mut ctx, &baseline_ds)?;

    let (records, series_coverage) =
        displacement_series(&ctx.engine, &ds, &homes, &event, threshold, &ctx.clock, &night)?;
    ctx.clock_laps.lap("nights");
    let (groups, group_coverage) = group_users(&homes, tess.as_deref(), &grouping, &event)?;
    let rates = displacement_rates(&records, &groups, k);
    ctx.clock_laps.lap("rates");

    let mut coverage = CoverageReport::default();
    coverage.merge(series_coverage);
    coverage.merge(group_coverage);

    ctx.write_output("displacement_rates.csv", |out| write_rates_csv(&rates, out))?;
    ctx.write_output("displacement_coverage.csv", |out| coverage.write_csv(out))?;
    if ctx.config.output.charts {
        let series = rates_chart_series(&rates);
        match line_chart("displacement rate by group", "rate", &series) {
            Some(svg) => {
                ctx.write_output("displacement_rates.svg", |out| out.write_all(svg.as_bytes()))?;
            }
            None => eprintln!("warning: empty rate table, chart skipped"),
        }
    }
    ctx.clock_laps.lap("write_rates");
    let filtered = count_filtered(&mut ctx, &ds, &spec, &monitor)?;
    ctx.finish(Some(&monitor), filtered)
}

fn anomalies_chart_series(rows: &[AnomalyRow]) -> Vec<ChartSeries> {
    // The most anomalous tiles by peak |z|, at most six.
    let mut peak: BTreeMap<&str, f64> = BTreeMap::new();
    for r in rows {
        if let Some(z) = r.z_score {
            let p = peak.entry(&r.tile_id).or_insert(0.0);
            *p = p.max(z.abs());
        }
    }
    let mut ranked: Vec<(&str, f64)> = peak.into_iter().collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite z").then(a.0.cmp(b.0)));
    ranked
        .into_iter()
        .take(6)
        .map(|(tile, _)| ChartSeries {
            label: tile.to_string(),
            points: rows
                .iter()
                .filter(|r| r.tile_id == tile)
                .filter_map(|r| r.z_score.map(|z| (r.date, z)))
                .collect(),
        })
        .collect()
}

fn run_anomalies(mut ctx: RunCtx) -> Result<RunOutcome> {
    let (ds, monitor, spec) = ingest_stage(&mut ctx)?;
    let event = ctx.config.event()?;
    let tess = ctx.config.tessellation()?.expect("validated in plan");
    let k = ctx.config.privacy.k_anonymity;
    let rows = tile_population_anomalies(&ctx.engine, &ds, tess, &ctx.clock, &event, k)?;
    ctx.clock_laps.lap("anomalies");
    ctx.write_output("anomalies.csv", |out| write_anomalies_csv(&rows, out))?;
    if ctx.config.output.charts {
        let series = anomalies_chart_series(&rows);
        match line_chart("population density anomalies", "z-score", &series) {
            Some(svg) => {
                ctx.write_output("anomalies.svg", |out| out.write_all(svg.as_bytes()))?;
            }
            None => eprintln!("warning: no anomaly series to chart"),
        }
    }
    ctx.clock_laps.lap("write_anomalies");
    let filtered = count_filtered(&mut ctx, &ds, &spec, &monitor)?;
    ctx.finish(Some(&monitor), filtered)
}

fn run_poi(mut ctx: RunCtx) -> Result<RunOutcome> {
    let (ds, monitor, spec) = ingest_stage(&mut ctx)?;
    let pois = load_pois(&ctx.config)?;
    let poi_ids: Vec<String> = pois.iter().map(|p| p.poi_id.clone()).collect();
    let index = Arc::new(PoiIndex::build(pois)?);
    let k = ctx.config.privacy.k_anonymity;
    let visits = daily_visits(&ctx.engine, &ds, index, &ctx.clock)?;
    ctx.clock_laps.lap("visits");
    ctx.write_output("poi_visits.csv", |out| {
        let published: Vec<_> = visits
            .iter()
            .filter(|v| v.unique_visitors >= k)
            .cloned()
            .collect();
        write_visits_csv(&published, out)
    })?;
    if ctx.config.event.time_utc.is_some() {
        let event = ctx.config.event()?;
        let changes = visit_rate_change(&visits, &poi_ids, &event, &ctx.clock, k)?;
        ctx.clock_laps.lap("visit_changes");
        ctx.write_output("poi_visit_changes.csv", |out| {
            write_visit_changes_csv(&changes, out)
        })?;
        if ctx.config.output.charts {
            let mut peak: BTreeMap<&str, f64> = BTreeMap::new();
            for r in &changes {
                if let Some(p) = r.pct_change {
                    let e = peak.entry(&r.poi_id).or_insert(0.0);
                    *e = e.max(p.abs());
                }
            }
            let mut ranked: Vec<(&str, f64)> = peak.into_iter().collect();
            ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite pct").then(a.0.cmp(b.0)));
            let series: Vec<ChartSeries> = ranked
                .into_iter()
                .take(8)
                .map(|(poi, _)| ChartSeries {
                    label: poi.to_string(),
                    points: changes
                        .iter()
                        .filter(|r| r.poi_id == poi)
                        .filter_map(|r| r.pct_change.map(|p| (r.date, p)))
                        .collect(),
                })
                .collect();
            match line_chart("poi visit rate change", "pct change", &series) {
                Some(svg) => {
                    ctx.write_output("poi_visit_changes.svg", |out| out.write_all(svg.as_bytes()))?;
                }
                None => eprintln!("warning: no visit-change series to chart"),
            }
        }
    }
    ctx.clock_laps.lap("write_visits");
    let filtered = count_filtered(&mut ctx, &ds, &spec, &monitor)?;
    ctx.finish(Some(&monitor), filtered)
}

fn run_grid(mut ctx: RunCtx) -> Result<RunOutcome> {
    let [a, b, c, d] = ctx.config.tessellation.grid_bbox.expect("validated in plan");
    let cell = ctx.config.tessellation.grid_cell_m.expect("validated in plan");
    let tess = crate::spatial::make_grid(crate::spatial::BBox::new(a, b, c, d)?, cell)?;
    ctx.clock_laps.lap("make_grid");
    let geojson = tessellation_to_geojson(&tess, &Default::default());
    ctx.write_output("grid.geojson", |out| out.write_all(geojson.as_bytes()))?;
    ctx.clock_laps.lap("write_grid");
    ctx.finish(None, 0)
}

/// Re-exported for integration tests that need a tessellation handle.
pub fn load_tessellation_for(config: &RunConfig) -> Result<Option<Arc<Tessellation>>> {
    config.tessellation()
}
