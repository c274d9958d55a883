//! Lazy partitioned datasets.
//!
//! A partition is a task that streams rows into a sink callback; transforms
//! wrap that task without materializing anything. Rows only accumulate in
//! engine-controlled, gauge-tracked buffers (collect, grouped partition ops,
//! keyed folds), which is what keeps datasets larger than memory processable.

use std::sync::Arc;

use super::gauge::TrackedRows;
use super::ExecCtx;
use crate::error::{Error, Result};

/// Sink callback receiving the rows of one partition in order.
pub type RowSink<'a, T> = dyn FnMut(T) -> Result<()> + 'a;

type RunFn<T> = Arc<dyn Fn(&ExecCtx, &mut RowSink<'_, T>) -> Result<()> + Send + Sync>;
type SplitFn<T> = Arc<dyn Fn() -> Option<(PartitionTask<T>, PartitionTask<T>)> + Send + Sync>;

/// One lazily-materializable partition.
pub struct PartitionTask<T> {
    pub id: usize,
    pub rows_estimate: u64,
    pub bytes_estimate: u64,
    run: RunFn<T>,
    split: Option<SplitFn<T>>,
}

impl<T> Clone for PartitionTask<T> {
    fn clone(&self) -> Self {
        PartitionTask {
            id: self.id,
            rows_estimate: self.rows_estimate,
            bytes_estimate: self.bytes_estimate,
            run: self.run.clone(),
            split: self.split.clone(),
        }
    }
}

impl<T: Send + Sync + 'static> PartitionTask<T> {
    pub fn new(id: usize, rows_estimate: u64, run: RunFn<T>, split: Option<SplitFn<T>>) -> Self {
        let bytes_estimate = rows_estimate * std::mem::size_of::<T>().max(1) as u64;
        PartitionTask {
            id,
            rows_estimate,
            bytes_estimate,
            run,
            split,
        }
    }

    pub fn with_bytes_estimate(mut self, bytes: u64) -> Self {
        self.bytes_estimate = bytes;
        self
    }

    /// Stream this partition's rows into `sink`.
    pub fn stream(&self, ctx: &ExecCtx, sink: &mut RowSink<'_, T>) -> Result<()> {
        (self.run)(ctx, sink)
    }

    /// Split into two halves covering the same rows in the same order, when
    /// the source supports it.
    pub fn split(&self) -> Option<(PartitionTask<T>, PartitionTask<T>)> {
        self.split.as_ref().and_then(|s| s())
    }

    fn from_shared_vec(id: usize, rows: Arc<Vec<T>>, lo: usize, hi: usize) -> Self
    where
        T: Clone,
    {
        let run_rows = rows.clone();
        let run: RunFn<T> = Arc::new(move |_ctx, sink| {
            for row in &run_rows[lo..hi] {
                sink(row.clone())?;
            }
            Ok(())
        });
        let split_rows = rows;
        let split: SplitFn<T> = Arc::new(move || {
            if hi - lo < 2 {
                return None;
            }
            let mid = lo + (hi - lo) / 2;
            Some((
                PartitionTask::from_shared_vec(id, split_rows.clone(), lo, mid),
                PartitionTask::from_shared_vec(id, split_rows.clone(), mid, hi),
            ))
        });
        PartitionTask {
            id,
            rows_estimate: (hi - lo) as u64,
            bytes_estimate: ((hi - lo) * std::mem::size_of::<T>().max(1)) as u64,
            run,
            split: Some(split),
        }
    }
}

/// An ordered collection of lazy partitions of one row type.
pub struct Dataset<T> {
    partitions: Vec<PartitionTask<T>>,
    partitioner_key: Option<String>,
}

impl<T> Clone for Dataset<T> {
    fn clone(&self) -> Self {
        Dataset {
            partitions: self.partitions.clone(),
            partitioner_key: self.partitioner_key.clone(),
        }
    }
}

impl<T> std::fmt::Debug for Dataset<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dataset")
            .field("partitions", &self.partitions.len())
            .field("partitioner_key", &self.partitioner_key)
            .finish()
    }
}

impl<T: Send + Sync + 'static> Dataset<T> {
    pub fn from_tasks(partitions: Vec<PartitionTask<T>>, partitioner_key: Option<String>) -> Self {
        Dataset {
            partitions,
            partitioner_key,
        }
    }

    /// In-memory source, one partition per input vector. Mostly for tests,
    /// examples, and small broadcast-sized tables.
    pub fn from_partitions(parts: Vec<Vec<T>>) -> Self
    where
        T: Clone,
    {
        let partitions = parts
            .into_iter()
            .enumerate()
            .map(|(id, rows)| {
                let n = rows.len();
                PartitionTask::from_shared_vec(id, Arc::new(rows), 0, n)
            })
            .collect();
        Dataset {
            partitions,
            partitioner_key: None,
        }
    }

    /// Single in-memory vector split into `parts` roughly equal partitions.
    pub fn from_vec(rows: Vec<T>, parts: usize) -> Self
    where
        T: Clone,
    {
        let parts = parts.max(1);
        let n = rows.len();
        let shared = Arc::new(rows);
        let per = n.div_ceil(parts).max(1);
        let mut tasks = Vec::new();
        let mut lo = 0;
        let mut id = 0;
        while lo < n {
            let hi = (lo + per).min(n);
            tasks.push(PartitionTask::from_shared_vec(id, shared.clone(), lo, hi));
            id += 1;
            lo = hi;
        }
        Dataset {
            partitions: tasks,
            partitioner_key: None,
        }
    }

    pub fn empty() -> Self {
        Dataset {
            partitions: Vec::new(),
            partitioner_key: None,
        }
    }

    pub fn partition_count(&self) -> usize {
        self.partitions.len()
    }

    pub fn partitions(&self) -> &[PartitionTask<T>] {
        &self.partitions
    }

    pub fn rows_estimate(&self) -> u64 {
        self.partitions.iter().map(|p| p.rows_estimate).sum()
    }

    pub fn bytes_estimate(&self) -> u64 {
        self.partitions.iter().map(|p| p.bytes_estimate).sum()
    }

    /// Key whose equal values are co-located in one partition, when known.
    pub fn partitioner_key(&self) -> Option<&str> {
        self.partitioner_key.as_deref()
    }

    /// Row-wise transform. Lazy; partition count unchanged.
    pub fn map<U, F>(self, f: F) -> Dataset<U>
    where
        U: Send + Sync + 'static,
        F: Fn(T) -> U + Send + Sync + 'static,
    {
        self.transform(move |row, sink| sink(f(row)))
    }

    /// Fallible row-wise transform; a failure aborts the plan and is
    /// reported with the partition id and row index.
    pub fn try_map<U, F>(self, f: F) -> Dataset<U>
    where
        U: Send + Sync + 'static,
        F: Fn(T) -> std::result::Result<U, String> + Send + Sync + 'static,
    {
        self.transform(move |row, sink| match f(row) {
            Ok(u) => sink(u),
            Err(message) => Err(Error::Udf {
                partition: usize::MAX,
                row: u64::MAX,
                message,
            }),
        })
    }

    /// Keep rows satisfying the predicate; order preserved.
    pub fn filter<F>(self, f: F) -> Dataset<T>
    where
        F: Fn(&T) -> bool + Send + Sync + 'static,
    {
        self.transform(move |row, sink| if f(&row) { sink(row) } else { Ok(()) })
    }

    /// Expand each row into zero or more rows.
    pub fn flat_map<U, F>(self, f: F) -> Dataset<U>
    where
        U: Send + Sync + 'static,
        F: Fn(T) -> Vec<U> + Send + Sync + 'static,
    {
        self.transform(move |row, sink| {
            for u in f(row) {
                sink(u)?;
            }
            Ok(())
        })
    }

    /// Fallible transform that may also drop rows.
    pub fn try_filter_map<U, F>(self, f: F) -> Dataset<U>
    where
        U: Send + Sync + 'static,
        F: Fn(T) -> std::result::Result<Option<U>, String> + Send + Sync + 'static,
    {
        self.transform(move |row, sink| match f(row) {
            Ok(Some(u)) => sink(u),
            Ok(None) => Ok(()),
            Err(message) => Err(Error::Udf {
                partition: usize::MAX,
                row: u64::MAX,
                message,
            }),
        })
    }

    /// Whole-partition transform. The partition is materialized (tracked by
    /// the memory gauge and subject to the row limit), handed to `f` as one
    /// vector, and the result streamed on. Partition count unchanged.
    pub fn map_partitions<U, F>(self, f: F) -> Dataset<U>
    where
        U: Send + Sync + 'static,
        F: Fn(Vec<T>) -> std::result::Result<Vec<U>, String> + Send + Sync + 'static,
    {
        let f = Arc::new(f);
        let partitions = self
            .partitions
            .into_iter()
            .map(|task| {
                let id = task.id;
                let estimate = task.rows_estimate;
                let f = f.clone();
                let run: RunFn<U> = Arc::new(move |ctx, sink| {
                    let mut buf = TrackedRows::new(ctx.gauge.clone());
                    task.stream(ctx, &mut |row| {
                        buf.push(row);
                        if buf.len() as u64 > ctx.max_partition_rows {
                            return Err(Error::OversizePartition {
                                partition: id,
                                rows: buf.len() as u64,
                            });
                        }
                        Ok(())
                    })?;
                    let out = f(buf.into_vec()).map_err(|message| Error::Udf {
                        partition: id,
                        row: u64::MAX,
                        message,
                    })?;
                    for u in out {
                        sink(u)?;
                    }
                    Ok(())
                });
                // Grouped work cannot be split without breaking co-location.
                PartitionTask::new(id, estimate, run, None)
            })
            .collect();
        Dataset {
            partitions,
            partitioner_key: self.partitioner_key,
        }
    }

    fn transform<U>(
        self,
        apply: impl Fn(T, &mut RowSink<'_, U>) -> Result<()> + Send + Sync + 'static,
    ) -> Dataset<U>
    where
        U: Send + Sync + 'static,
    {
        let apply: ApplyFn<T, U> = Arc::new(apply);
        let partitions = self
            .partitions
            .into_iter()
            .map(|task| wrap_task(task, apply.clone()))
            .collect();
        Dataset {
            partitions,
            partitioner_key: None,
        }
    }
}

type ApplyFn<T, U> = Arc<dyn Fn(T, &mut RowSink<'_, U>) -> Result<()> + Send + Sync>;

fn wrap_task<T, U>(task: PartitionTask<T>, apply: ApplyFn<T, U>) -> PartitionTask<U>
where
    T: Send + Sync + 'static,
    U: Send + Sync + 'static,
{
    let id = task.id;
    let estimate = task.rows_estimate;
    let bytes_estimate = task.bytes_estimate;
    let split_inner = task.clone();
    let has_split = task.split.is_some();
    let run_apply = apply.clone();
    let run: RunFn<U> = Arc::new(move |ctx, sink| {
        let mut row_index: u64 = 0;
        task.stream(ctx, &mut |row| {
            let r = run_apply(row, sink).map_err(|e| match e {
                // Attribute UDF failures to the row that triggered them.
                Error::Udf {
                    partition: usize::MAX,
                    row: u64::MAX,
                    message,
                } => Error::Udf {
                    partition: id,
                    row: row_index,
                    message,
                },
                other => other,
            });
            row_index += 1;
            r
        })
    });
    let split = has_split.then(|| {
        let split_apply = apply;
        let split_fn: SplitFn<U> = Arc::new(move || {
            split_inner.split().map(|(a, b)| {
                (
                    wrap_task(a, split_apply.clone()),
                    wrap_task(b, split_apply.clone()),
                )
            })
        });
        split_fn
    });
    PartitionTask {
        id,
        rows_estimate: estimate,
        bytes_estimate,
        run,
        split,
    }
}
