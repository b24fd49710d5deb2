//! Partial DAG execution support: lossy per-partition statistics gathered at
//! shuffle materialization, their aggregation at the stage barrier, and the
//! decisions the runtime optimizer makes from them (join strategy, reducer
//! coalescing).
//!
//! Statistics are deliberately tiny: a one-byte log-encoded size per output
//! partition, record counts, a bounded heavy-hitter sketch and a fixed-width
//! histogram, keeping each task's serialized stats under the 2 KiB budget.

use std::collections::BTreeMap;

use crate::value::{write_canonical_opt, Row};

/// Log base for one-byte size codes. Covers 0..=32 GiB within 10% relative
/// error: code 255 decodes to ~30.5 GiB and stays within bound.
const SIZE_LOG_BASE: f64 = 1.1;

/// Encodes a byte size into one byte: 0 only for 0, otherwise
/// `clamp(1 + round(log_B(bytes)), 1, 255)` with B = 1.1.
pub fn log_encode_size(bytes: u64) -> u8 {
    if bytes == 0 {
        return 0;
    }
    let code = 1.0 + ((bytes as f64).ln() / SIZE_LOG_BASE.ln()).round();
    code.clamp(1.0, 255.0) as u8
}

/// Decodes a size code to its representative byte count.
pub fn log_decode_size(code: u8) -> u64 {
    if code == 0 {
        return 0;
    }
    SIZE_LOG_BASE.powi(code as i32 - 1).round() as u64
}

// --- heavy hitters ---------------------------------------------------------

/// Misra-Gries summary with `k` counters. Any value with true frequency
/// above n/(k+1) is guaranteed to be present, and reported counts undercount
/// by at most n/(k+1).
#[derive(Debug, Clone)]
pub struct MisraGries<T: Ord + Clone> {
    k: usize,
    counters: BTreeMap<T, u64>,
}

impl<T: Ord + Clone> MisraGries<T> {
    pub fn new(k: usize) -> MisraGries<T> {
        MisraGries {
            k: k.max(1),
            counters: BTreeMap::new(),
        }
    }

    pub fn update(&mut self, value: T) {
        if let Some(c) = self.counters.get_mut(&value) {
            *c += 1;
        } else if self.counters.len() < self.k {
            self.counters.insert(value, 1);
        } else {
            // Decrement every counter; drop the ones that hit zero.
            self.counters.retain(|_, c| {
                *c -= 1;
                *c > 0
            });
        }
    }

    /// Top `k` survivors by approximate count, count-descending with value
    /// order breaking ties.
    pub fn report(&self, k: usize) -> Vec<(T, u64)> {
        let mut items: Vec<(T, u64)> = self
            .counters
            .iter()
            .map(|(v, c)| (v.clone(), *c))
            .collect();
        items.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        items.truncate(k);
        items
    }

    /// Exact-sum merge of reported summaries, truncated to the top `k`.
    pub fn merge_reports(reports: &[Vec<(T, u64)>], k: usize) -> Vec<(T, u64)> {
        let mut sums: BTreeMap<T, u64> = BTreeMap::new();
        for report in reports {
            for (v, c) in report {
                *sums.entry(v.clone()).or_insert(0) += c;
            }
        }
        let mut items: Vec<(T, u64)> = sums.into_iter().collect();
        items.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        items.truncate(k);
        items
    }
}

// --- histogram --------------------------------------------------------------

/// Equi-width histogram over the full 64-bit hash domain of the shuffle key.
/// A fixed domain keeps bucket-wise summation across tasks well-defined.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashHistogram {
    pub buckets: Vec<u64>,
}

impl HashHistogram {
    pub fn new(bucket_count: usize) -> HashHistogram {
        HashHistogram {
            buckets: vec![0; bucket_count.max(1)],
        }
    }

    pub fn update(&mut self, hash: u64) {
        let b = ((hash as u128 * self.buckets.len() as u128) >> 64) as usize;
        self.buckets[b] += 1;
    }

    pub fn merge(&mut self, other: &HashHistogram) {
        if self.buckets.len() == other.buckets.len() {
            for (a, b) in self.buckets.iter_mut().zip(&other.buckets) {
                *a += b;
            }
        }
    }
}

// --- per-task runtime stats --------------------------------------------------

/// Statistics one map task reports for its shuffle output.
#[derive(Debug, Clone)]
pub struct TaskStats {
    /// One log-encoded size code per output (reducer) partition.
    pub size_codes: Vec<u8>,
    /// Record count per output partition.
    pub record_counts: Vec<u32>,
    /// Heavy hitters over the shuffle key, already reported from the sketch.
    pub heavy_hitters: Vec<(Row, u64)>,
    pub histogram: HashHistogram,
    /// Set when a partition size exceeded the representable range.
    pub size_overflow: bool,
}

impl TaskStats {
    /// Serialized footprint in the canonical binary layout; the budget
    /// checks run against this.
    pub fn serialized_len(&self) -> usize {
        let mut n = 1 + self.size_codes.len(); // overflow flag + codes
        n += 4 * self.record_counts.len();
        n += 8 * self.histogram.buckets.len();
        for (row, _) in &self.heavy_hitters {
            let mut buf = Vec::new();
            for v in row {
                write_canonical_opt(v, &mut buf);
            }
            n += buf.len() + 8;
        }
        n
    }
}

/// Stage-level aggregation of task stats.
#[derive(Debug, Clone, Default)]
pub struct GlobalStats {
    /// Decoded byte total per reducer partition.
    pub bucket_bytes: Vec<u64>,
    pub total_bytes: u64,
    pub total_records: u64,
    pub heavy_hitters: Vec<(Row, u64)>,
    pub histogram: Option<HashHistogram>,
}

/// Sums decoded sizes, merges heavy hitters by exact count then truncates to
/// top-k, and sums histograms bucket-wise. Empty input yields zeroed stats.
pub fn aggregate_stats(per_task: &[TaskStats], hh_k: usize) -> GlobalStats {
    let mut out = GlobalStats::default();
    let reducers = per_task
        .iter()
        .map(|t| t.size_codes.len())
        .max()
        .unwrap_or(0);
    out.bucket_bytes = vec![0; reducers];
    for t in per_task {
        for (r, &code) in t.size_codes.iter().enumerate() {
            let bytes = log_decode_size(code);
            out.bucket_bytes[r] += bytes;
            out.total_bytes += bytes;
        }
        out.total_records += t.record_counts.iter().map(|&c| c as u64).sum::<u64>();
        match &mut out.histogram {
            None => out.histogram = Some(t.histogram.clone()),
            Some(h) => h.merge(&t.histogram),
        }
    }
    let reports: Vec<Vec<(Row, u64)>> = per_task.iter().map(|t| t.heavy_hitters.clone()).collect();
    out.heavy_hitters = MisraGries::merge_reports(&reports, hh_k);
    out
}

// --- join strategy -----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BroadcastSide {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JoinStrategy {
    Shuffle { reducers: usize },
    Broadcast { side: BroadcastSide },
}

/// Picks the join strategy from observed input sizes: broadcast the smaller
/// side when it fits under the threshold (ties broadcast left), otherwise
/// shuffle with a coalesced reducer count derived from the combined
/// per-bucket sizes.
pub fn select_join_strategy(
    left: &GlobalStats,
    right: &GlobalStats,
    broadcast_threshold: u64,
    coalesce: &CoalesceConfig,
) -> JoinStrategy {
    let (l, r) = (left.total_bytes, right.total_bytes);
    if l.min(r) <= broadcast_threshold {
        let side = if l <= r {
            BroadcastSide::Left
        } else {
            BroadcastSide::Right
        };
        return JoinStrategy::Broadcast { side };
    }
    let combined: Vec<u64> = left
        .bucket_bytes
        .iter()
        .zip(right.bucket_bytes.iter())
        .map(|(a, b)| a + b)
        .collect();
    let plan = choose_reducer_count(
        &combined,
        coalesce.target_bytes_per_reducer,
        coalesce.reducer_min,
        coalesce.reducer_max,
    );
    JoinStrategy::Shuffle {
        reducers: plan.coarse_count,
    }
}

// --- reducer coalescing -------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CoalesceConfig {
    pub target_bytes_per_reducer: u64,
    pub reducer_min: usize,
    pub reducer_max: usize,
}

/// Assignment of fine shuffle partitions onto coarse reduce tasks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoalescePlan {
    /// fine partition index -> coarse partition index
    pub assignment: Vec<usize>,
    pub coarse_count: usize,
}

impl CoalescePlan {
    pub fn bin_totals(&self, sizes: &[u64]) -> Vec<u64> {
        let mut bins = vec![0u64; self.coarse_count];
        for (fine, &coarse) in self.assignment.iter().enumerate() {
            bins[coarse] += sizes[fine];
        }
        bins
    }
}

/// Greedy longest-processing-time bin packing: coarse count is
/// `clamp(ceil(total/target), min, max)`; fine partitions are taken in
/// size-descending order (index ascending on ties) and each goes to the
/// currently lightest bin (lowest index on ties). Classical 4/3 bound
/// against the optimal max bin.
pub fn choose_reducer_count(
    sizes: &[u64],
    target_bytes_per_reducer: u64,
    min: usize,
    max: usize,
) -> CoalescePlan {
    let total: u64 = sizes.iter().sum();
    let ideal = total.div_ceil(target_bytes_per_reducer.max(1)) as usize;
    let coarse_count = ideal.clamp(min.max(1), max.max(min.max(1)));
    coalesce_into(sizes, coarse_count)
}

/// LPT assignment into a fixed number of bins.
pub fn coalesce_into(sizes: &[u64], coarse_count: usize) -> CoalescePlan {
    let coarse_count = coarse_count.max(1);
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| sizes[b].cmp(&sizes[a]).then(a.cmp(&b)));
    let mut bins = vec![0u64; coarse_count];
    let mut assignment = vec![0usize; sizes.len()];
    for fine in order {
        let lightest = bins
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.cmp(b.1).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
            .unwrap();
        assignment[fine] = lightest;
        bins[lightest] += sizes[fine];
    }
    CoalescePlan {
        assignment,
        coarse_count,
    }
}
