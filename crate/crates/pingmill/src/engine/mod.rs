//! Partitioned, larger-than-memory batch execution.
//!
//! Pipelines are DAGs of lazy row transforms over partitioned datasets with
//! three barrier actions: keyed shuffle (spill files on disk), keyed
//! two-phase reduction, and ordered sinks. A fixed pool of `worker_count`
//! threads processes one partition at a time each, so at most
//! `worker_count` partitions are ever materialized concurrently, and all
//! cross-partition merging happens in ascending partition order, which makes
//! every output bitwise-identical regardless of the worker count.

pub mod dataset;
pub mod gauge;
pub mod plan;
pub mod record;
pub mod spill;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};

pub use dataset::{Dataset, PartitionTask};
pub use gauge::{MemoryGauge, TrackedRows};
pub use plan::{ExecutionPlan, StageKind};
pub use record::{ByteReader, FieldKind, Record};

use crate::error::{Error, Result};
use record::require_field;
use spill::SpillStage;

const SPILL_FLUSH_BYTES: usize = 128 * 1024;

static RUN_SEQ: AtomicUsize = AtomicUsize::new(0);

/// Engine tuning knobs.
#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Number of partition-processing threads.
    pub worker_count: usize,
    /// Hard cap on rows materialized for a single partition buffer.
    pub max_partition_rows: u64,
    /// Approximate cap on bytes materialized for a single partition buffer.
    pub max_partition_bytes: u64,
    /// Input file chunk size; one source partition per chunk.
    pub chunk_bytes: u64,
    /// Directory for shuffle spill files.
    pub work_dir: PathBuf,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            worker_count: std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
            max_partition_rows: 1_000_000,
            max_partition_bytes: 256 << 20,
            chunk_bytes: 128 << 20,
            work_dir: std::env::temp_dir(),
        }
    }
}

/// Per-execution context handed to partition tasks.
#[derive(Clone)]
pub struct ExecCtx {
    pub gauge: Arc<MemoryGauge>,
    pub max_partition_rows: u64,
    pub max_partition_bytes: u64,
}

/// Associative, commutative keyed accumulator.
///
/// `merge` must be insensitive to merge order up to the documented contract;
/// the engine nevertheless always merges partials in ascending partition
/// order so that floating-point results are reproducible bit for bit.
pub trait Fold<T>: Send + Sync {
    type Acc: Send + 'static;
    fn empty(&self) -> Self::Acc;
    fn add(&self, acc: &mut Self::Acc, row: T);
    fn merge(&self, into: &mut Self::Acc, other: Self::Acc);
}

/// Partitioned batch executor.
pub struct Engine {
    cfg: EngineConfig,
    gauge: Arc<MemoryGauge>,
    run_dir: PathBuf,
    shuffle_seq: AtomicUsize,
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Result<Self> {
        if cfg.worker_count == 0 {
            return Err(Error::Config("worker_count must be >= 1".into()));
        }
        if cfg.max_partition_rows == 0 {
            return Err(Error::Config("max_partition_rows must be >= 1".into()));
        }
        let seq = RUN_SEQ.fetch_add(1, Ordering::Relaxed);
        let run_dir = cfg.work_dir.join(format!(
            "pingmill-{}-{}",
            std::process::id(),
            seq
        ));
        std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
        Ok(Engine {
            cfg,
            gauge: MemoryGauge::new(),
            run_dir,
            shuffle_seq: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn gauge(&self) -> &Arc<MemoryGauge> {
        &self.gauge
    }

    fn ctx(&self) -> ExecCtx {
        ExecCtx {
            gauge: self.gauge.clone(),
            max_partition_rows: self.cfg.max_partition_rows,
            max_partition_bytes: self.cfg.max_partition_bytes,
        }
    }

    /// Run `task` for indices `0..n` on the worker pool; results slotted by
    /// index. The first (lowest-index) error aborts outstanding work.
    fn pool_indexed<R: Send>(
        &self,
        n: usize,
        task: impl Fn(usize) -> Result<R> + Sync,
    ) -> Result<Vec<R>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let slots: Vec<Mutex<Option<R>>> = (0..n).map(|_| Mutex::new(None)).collect();
        let first_err: Mutex<Option<(usize, Error)>> = Mutex::new(None);
        let workers = self.cfg.worker_count.min(n);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    if abort.load(Ordering::Relaxed) {
                        return;
                    }
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        return;
                    }
                    match task(i) {
                        Ok(r) => *slots[i].lock().unwrap() = Some(r),
                        Err(e) => {
                            let mut guard = first_err.lock().unwrap();
                            if guard.as_ref().map_or(true, |(j, _)| i < *j) {
                                *guard = Some((i, e));
                            }
                            abort.store(true, Ordering::Relaxed);
                        }
                    }
                });
            }
        });
        if let Some((_, e)) = first_err.into_inner().unwrap() {
            return Err(e);
        }
        Ok(slots
            .into_iter()
            .map(|m| m.into_inner().unwrap().expect("slot filled"))
            .collect())
    }

    /// Run `task` for indices `0..n`, merging each result into `acc` in
    /// ascending index order. A worker whose result is not yet mergeable
    /// parks until its turn, so at most `worker_count` results are pending.
    fn pool_merge<R: Send, A: Send>(
        &self,
        n: usize,
        acc: A,
        task: impl Fn(usize) -> Result<R> + Sync,
        merge: impl Fn(&mut A, usize, R) -> Result<()> + Sync,
    ) -> Result<A> {
        struct Shared<A> {
            next_merge: usize,
            acc: Option<A>,
            error: Option<(usize, Error)>,
        }
        if n == 0 {
            return Ok(acc);
        }
        let state = Mutex::new(Shared {
            next_merge: 0,
            acc: Some(acc),
            error: None,
        });
        let turn = Condvar::new();
        let next = AtomicUsize::new(0);
        let workers = self.cfg.worker_count.min(n);
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    if state.lock().unwrap().error.is_some() {
                        return;
                    }
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        return;
                    }
                    match task(i) {
                        Err(e) => {
                            let mut st = state.lock().unwrap();
                            if st.error.as_ref().map_or(true, |(j, _)| i < *j) {
                                st.error = Some((i, e));
                            }
                            turn.notify_all();
                            return;
                        }
                        Ok(r) => {
                            let mut st = state.lock().unwrap();
                            while st.next_merge != i && st.error.is_none() {
                                st = turn.wait(st).unwrap();
                            }
                            if st.error.is_some() {
                                return;
                            }
                            let mut a = st.acc.take().expect("acc present");
                            let merged = merge(&mut a, i, r);
                            st.acc = Some(a);
                            match merged {
                                Ok(()) => {
                                    st.next_merge += 1;
                                    turn.notify_all();
                                }
                                Err(e) => {
                                    st.error = Some((i, e));
                                    turn.notify_all();
                                    return;
                                }
                            }
                        }
                    }
                });
            }
        });
        let mut st = state.into_inner().unwrap();
        if let Some((_, e)) = st.error.take() {
            return Err(e);
        }
        Ok(st.acc.take().expect("acc present"))
    }

    /// Run an indexed job on the worker pool; results in index order. For
    /// side work that should share the engine's parallelism budget, like
    /// hashing input files.
    pub fn parallel_map<R: Send>(
        &self,
        n: usize,
        f: impl Fn(usize) -> Result<R> + Sync,
    ) -> Result<Vec<R>> {
        self.pool_indexed(n, f)
    }

    /// Materialize every partition, in partition order.
    pub fn collect_partitions<T: Send + Sync + 'static>(&self, ds: &Dataset<T>) -> Result<Vec<Vec<T>>> {
        let ctx = self.ctx();
        let parts = ds.partitions();
        let bufs = self.pool_indexed(parts.len(), |i| {
            with_split(
                &parts[i],
                0,
                &|task| {
                    let mut buf = TrackedRows::new(ctx.gauge.clone());
                    task.stream(&ctx, &mut |row| {
                        buf.push(row);
                        check_buffer_size::<T>(task.id, buf.len(), &ctx)
                    })?;
                    Ok(buf)
                },
                &|mut a: TrackedRows<T>, b| {
                    a.append_vec(b.into_vec());
                    Ok(a)
                },
            )
        })?;
        Ok(bufs.into_iter().map(|b| b.into_vec()).collect())
    }

    /// Materialize the whole dataset as one vector, partition order preserved.
    pub fn collect<T: Send + Sync + 'static>(&self, ds: &Dataset<T>) -> Result<Vec<T>> {
        Ok(self.collect_partitions(ds)?.into_iter().flatten().collect())
    }

    pub fn count<T: Send + Sync + 'static>(&self, ds: &Dataset<T>) -> Result<u64> {
        let ctx = self.ctx();
        let counts = self.pool_indexed(ds.partitions().len(), |i| {
            let mut n = 0u64;
            ds.partitions()[i].stream(&ctx, &mut |_row| {
                n += 1;
                Ok(())
            })?;
            Ok(n)
        })?;
        Ok(counts.into_iter().sum())
    }

    /// Two-phase keyed reduction: per-partition partial folds, then partials
    /// merged in partition order. Output sorted by canonical key bytes, one
    /// row per distinct key; the result is independent of partitioning and
    /// worker count.
    pub fn reduce_by_key<T: Record, F: Fold<T>>(
        &self,
        ds: &Dataset<T>,
        key: &str,
        fold: &F,
    ) -> Result<Vec<(Vec<u8>, F::Acc)>> {
        require_field::<T>(key)?;
        let ctx = self.ctx();
        let parts = ds.partitions();
        let global = self.pool_merge(
            parts.len(),
            BTreeMap::<Vec<u8>, F::Acc>::new(),
            |i| {
                with_split(
                    &parts[i],
                    0,
                    &|task| self.fold_partition(task, key, fold, &ctx),
                    &|a, b| Ok(merge_sorted_partials(a, b, fold, &ctx)),
                )
            },
            |global, _i, partial| {
                for (k, acc) in partial {
                    match global.entry(k) {
                        std::collections::btree_map::Entry::Vacant(v) => {
                            v.insert(acc);
                        }
                        std::collections::btree_map::Entry::Occupied(mut o) => {
                            fold.merge(o.get_mut(), acc);
                            ctx.gauge.release(1);
                        }
                    }
                }
                Ok(())
            },
        )?;
        let out: Vec<(Vec<u8>, F::Acc)> = global.into_iter().collect();
        self.gauge.release(out.len() as i64);
        Ok(out)
    }

    fn fold_partition<T: Record, F: Fold<T>>(
        &self,
        task: &PartitionTask<T>,
        key: &str,
        fold: &F,
        ctx: &ExecCtx,
    ) -> Result<Vec<(Vec<u8>, F::Acc)>> {
        let mut map: HashMap<Vec<u8>, F::Acc> = HashMap::new();
        let mut scratch = Vec::new();
        let streamed = task.stream(ctx, &mut |row: T| {
            scratch.clear();
            if !row.key_bytes(key, &mut scratch) {
                return Err(Error::Schema(format!("unknown key field '{key}'")));
            }
            match map.get_mut(scratch.as_slice()) {
                Some(acc) => fold.add(acc, row),
                None => {
                    let mut acc = fold.empty();
                    fold.add(&mut acc, row);
                    map.insert(scratch.clone(), acc);
                    ctx.gauge.acquire(1);
                    if map.len() as u64 > ctx.max_partition_rows {
                        return Err(Error::OversizePartition {
                            partition: task.id,
                            rows: map.len() as u64,
                        });
                    }
                }
            }
            Ok(())
        });
        if let Err(e) = streamed {
            ctx.gauge.release(map.len() as i64);
            return Err(e);
        }
        let mut partial: Vec<(Vec<u8>, F::Acc)> = map.into_iter().collect();
        partial.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(partial)
    }

    /// Repartition so that all rows sharing a key value land in the same
    /// target partition (hash of the key's canonical bytes, modulo
    /// `target_partitions`). The row multiset is preserved exactly and the
    /// resulting partition contents are deterministic.
    pub fn shuffle_by_key<T: Record>(
        &self,
        ds: &Dataset<T>,
        key: &str,
        target_partitions: usize,
    ) -> Result<Dataset<T>> {
        require_field::<T>(key)?;
        if target_partitions == 0 {
            return Err(Error::Parameter("target_partitions must be >= 1".into()));
        }
        let stage_idx = self.shuffle_seq.fetch_add(1, Ordering::Relaxed);
        let stage = Arc::new(SpillStage::new(
            self.run_dir.join(format!("shuffle{stage_idx:03}")),
        )?);
        let ctx = self.ctx();
        let parts = ds.partitions();
        let upstream_count = parts.len();

        // Write phase: each upstream partition writes one piece per target.
        let counts: Vec<Vec<u64>> = self.pool_indexed(upstream_count, |i| {
            with_split(
                &parts[i],
                0,
                &|task| {
                    let mut writer = PieceWriter::new(stage.clone(), i, target_partitions);
                    let mut key_buf = Vec::new();
                    let mut frame = Vec::new();
                    task.stream(&ctx, &mut |row: T| {
                        key_buf.clear();
                        if !row.key_bytes(key, &mut key_buf) {
                            return Err(Error::Schema(format!("unknown key field '{key}'")));
                        }
                        let t = (record::fnv1a64(&key_buf) % target_partitions as u64) as usize;
                        frame.clear();
                        row.encode(&mut frame);
                        writer.push(t, &frame)
                    })?;
                    writer.finish()
                },
                &|a, b| Ok(a.iter().zip(&b).map(|(x, y)| x + y).collect()),
            )
        })?;

        // Barrier: concatenate pieces in upstream order, one file per target.
        self.pool_indexed(target_partitions, |t| stage.merge_target(t, upstream_count))?;

        let mut target_rows = vec![0u64; target_partitions];
        for per_upstream in &counts {
            for (t, n) in per_upstream.iter().enumerate() {
                target_rows[t] += n;
            }
        }

        let tasks = (0..target_partitions)
            .map(|t| {
                let stage = stage.clone();
                let path = stage.target_path(t);
                let run = Arc::new(move |_ctx: &ExecCtx, sink: &mut dataset::RowSink<'_, T>| {
                    let _keep_alive = &stage;
                    spill::read_frames(&path, |payload| {
                        let mut reader = ByteReader::new(payload);
                        sink(T::decode(&mut reader)?)
                    })
                });
                PartitionTask::new(t, target_rows[t], run, None)
            })
            .collect();
        Ok(Dataset::from_tasks(tasks, Some(key.to_string())))
    }

    /// Stream every partition through `format_row` and write the bytes to
    /// `out` in partition order. Returns the row count.
    pub fn sink_ordered<T: Send + Sync + 'static>(
        &self,
        ds: &Dataset<T>,
        format_row: impl Fn(&T, &mut Vec<u8>) + Send + Sync,
        out: &mut (dyn Write + Send),
    ) -> Result<u64> {
        let ctx = self.ctx();
        let parts = ds.partitions();
        let (_, rows) = self.pool_merge(
            parts.len(),
            (out, 0u64),
            |i| {
                let mut bytes = Vec::new();
                let mut rows = 0u64;
                parts[i].stream(&ctx, &mut |row: T| {
                    format_row(&row, &mut bytes);
                    rows += 1;
                    Ok(())
                })?;
                Ok((bytes, rows))
            },
            |(out, total), _i, (bytes, rows): (Vec<u8>, u64)| {
                out.write_all(&bytes)
                    .map_err(|e| Error::io("<sink>", e))?;
                *total += rows;
                Ok(())
            },
        )?;
        Ok(rows)
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.run_dir);
    }
}

fn check_buffer_size<T>(partition: usize, rows: usize, ctx: &ExecCtx) -> Result<()> {
    if rows as u64 > ctx.max_partition_rows
        || (rows * std::mem::size_of::<T>()) as u64 > ctx.max_partition_bytes
    {
        return Err(Error::OversizePartition {
            partition,
            rows: rows as u64,
        });
    }
    Ok(())
}

/// Process one partition; on an oversize failure, split it once and process
/// the halves in order, combining their results. A second oversize is fatal.
fn with_split<T: Send + Sync + 'static, R>(
    task: &PartitionTask<T>,
    depth: u8,
    process: &impl Fn(&PartitionTask<T>) -> Result<R>,
    combine: &impl Fn(R, R) -> Result<R>,
) -> Result<R> {
    match process(task) {
        Err(Error::OversizePartition { partition, rows }) if depth == 0 => {
            match task.split() {
                Some((a, b)) => {
                    let ra = with_split(&a, 1, process, combine)?;
                    let rb = with_split(&b, 1, process, combine)?;
                    combine(ra, rb)
                }
                None => Err(Error::OversizePartition { partition, rows }),
            }
        }
        other => other,
    }
}

fn merge_sorted_partials<T: Record, F: Fold<T>>(
    a: Vec<(Vec<u8>, F::Acc)>,
    b: Vec<(Vec<u8>, F::Acc)>,
    fold: &F,
    ctx: &ExecCtx,
) -> Vec<(Vec<u8>, F::Acc)> {
    let mut merged: Vec<(Vec<u8>, F::Acc)> = Vec::with_capacity(a.len() + b.len());
    let mut ib = b.into_iter().peekable();
    for (ka, va) in a {
        while ib.peek().is_some_and(|(kb, _)| *kb < ka) {
            merged.push(ib.next().unwrap());
        }
        if ib.peek().is_some_and(|(kb, _)| *kb == ka) {
            let (_, vb) = ib.next().unwrap();
            let mut va = va;
            fold.merge(&mut va, vb);
            ctx.gauge.release(1);
            merged.push((ka, va));
        } else {
            merged.push((ka, va));
        }
    }
    merged.extend(ib);
    merged
}

/// Writes shuffle pieces for one upstream partition, flushing buffered
/// frames per target once they pass the flush threshold.
struct PieceWriter {
    stage: Arc<SpillStage>,
    upstream: usize,
    bufs: Vec<Vec<u8>>,
    counts: Vec<u64>,
}

impl PieceWriter {
    fn new(stage: Arc<SpillStage>, upstream: usize, targets: usize) -> Self {
        PieceWriter {
            stage,
            upstream,
            bufs: vec![Vec::new(); targets],
            counts: vec![0; targets],
        }
    }

    fn push(&mut self, target: usize, frame_payload: &[u8]) -> Result<()> {
        spill::push_frame(frame_payload, &mut self.bufs[target]);
        self.counts[target] += 1;
        if self.bufs[target].len() >= SPILL_FLUSH_BYTES {
            spill::append_bytes(
                &self.stage.piece_path(self.upstream, target),
                &self.bufs[target],
            )?;
            self.bufs[target].clear();
        }
        Ok(())
    }

    fn finish(mut self) -> Result<Vec<u64>> {
        for target in 0..self.bufs.len() {
            if !self.bufs[target].is_empty() {
                spill::append_bytes(
                    &self.stage.piece_path(self.upstream, target),
                    &self.bufs[target],
                )?;
                self.bufs[target].clear();
            }
        }
        Ok(self.counts)
    }
}
