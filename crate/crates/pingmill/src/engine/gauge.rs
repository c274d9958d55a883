//! Instrumented row accounting for the memory-bound contract.
//!
//! Every buffer of decoded rows the engine holds (collected partitions,
//! partial fold tables, spill read buffers) is registered here, so tests can
//! assert that concurrently-materialized rows never exceed
//! `worker_count * max_partition_rows`.

use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

#[derive(Debug, Default)]
pub struct MemoryGauge {
    current_rows: AtomicI64,
    peak_rows: AtomicI64,
}

impl MemoryGauge {
    pub fn new() -> Arc<Self> {
        Arc::new(MemoryGauge::default())
    }

    pub fn acquire(&self, rows: i64) {
        let now = self.current_rows.fetch_add(rows, Ordering::SeqCst) + rows;
        self.peak_rows.fetch_max(now, Ordering::SeqCst);
    }

    pub fn release(&self, rows: i64) {
        self.current_rows.fetch_sub(rows, Ordering::SeqCst);
    }

    pub fn current(&self) -> i64 {
        self.current_rows.load(Ordering::SeqCst)
    }

    pub fn peak(&self) -> i64 {
        self.peak_rows.load(Ordering::SeqCst)
    }

    pub fn reset_peak(&self) {
        self.peak_rows
            .store(self.current(), Ordering::SeqCst);
    }
}

/// A row buffer whose size is reported to the gauge while it lives.
pub struct TrackedRows<T> {
    rows: Vec<T>,
    gauge: Arc<MemoryGauge>,
}

impl<T> TrackedRows<T> {
    pub fn new(gauge: Arc<MemoryGauge>) -> Self {
        TrackedRows {
            rows: Vec::new(),
            gauge,
        }
    }

    pub fn push(&mut self, row: T) {
        self.rows.push(row);
        self.gauge.acquire(1);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut Vec<T> {
        &mut self.rows
    }

    pub fn append_vec(&mut self, mut rows: Vec<T>) {
        self.gauge.acquire(rows.len() as i64);
        self.rows.append(&mut rows);
    }

    /// Hand the buffer to the caller, keeping the gauge accounting accurate.
    pub fn into_vec(mut self) -> Vec<T> {
        let rows = std::mem::take(&mut self.rows);
        self.gauge.release(rows.len() as i64);
        rows
    }
}

impl<T> Drop for TrackedRows<T> {
    fn drop(&mut self) {
        self.gauge.release(self.rows.len() as i64);
    }
}
