//! Two-phase aggregation: per-partition partial states, merged after the
//! exchange.
//!
//! Partial row layout: `[group keys][distinct columns][state columns]`.
//! Distinct columns are the arguments of COUNT(DISTINCT ...) that are not
//! already group keys; the local phase groups by keys plus distinct columns,
//! which dedups within a partition. Other aggregates keep partial states per
//! (keys, distinct) group; merging those finer partials per key is exact, so
//! distinct and plain aggregates coexist in one query.
//!
//! Ordering: groups accumulate in input-row order and emit sorted by group
//! key (nulls first), which makes results reproducible bit for bit.
//! AVG carries a (sum, count) pair and divides only at the end.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::LineageError;
use crate::value::{DataType, Field, Row, RowBatch, Schema, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggFunc {
    CountStar,
    Count,
    CountDistinct,
    Sum,
    Avg,
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggSpec {
    pub func: AggFunc,
    /// Input column the aggregate reads; `None` only for COUNT(*).
    pub arg: Option<usize>,
    /// Type of the argument column, fixed at planning time.
    pub arg_type: Option<DataType>,
    /// Output column name.
    pub name: String,
}

impl AggSpec {
    pub fn output_type(&self) -> DataType {
        match self.func {
            AggFunc::CountStar | AggFunc::Count | AggFunc::CountDistinct => DataType::Int64,
            AggFunc::Avg => DataType::Float64,
            AggFunc::Sum | AggFunc::Min | AggFunc::Max => {
                self.arg_type.expect("sum/min/max carry an argument type")
            }
        }
    }

    fn state_width(&self) -> usize {
        match self.func {
            AggFunc::CountDistinct => 0, // carried by its distinct column
            AggFunc::Avg => 2,           // (sum, count)
            _ => 1,
        }
    }
}

/// COUNT(DISTINCT ...) argument columns that are not group keys, deduped, in
/// order of first appearance. Local and merge phases derive this identically.
pub fn distinct_columns(keys: &[usize], aggs: &[AggSpec]) -> Vec<usize> {
    let mut out = Vec::new();
    for a in aggs {
        if a.func == AggFunc::CountDistinct {
            let arg = a.arg.expect("count distinct has an argument");
            if !keys.contains(&arg) && !out.contains(&arg) {
                out.push(arg);
            }
        }
    }
    out
}

/// Schema of partial rows emitted by the local phase.
pub fn partial_schema(
    parent: &Schema,
    keys: &[usize],
    aggs: &[AggSpec],
) -> Result<Schema, LineageError> {
    let mut fields: Vec<Field> = keys.iter().map(|&k| parent.field(k).clone()).collect();
    for (i, &d) in distinct_columns(keys, aggs).iter().enumerate() {
        fields.push(Field::new(format!("__d{i}"), parent.field(d).dtype));
    }
    for (i, a) in aggs.iter().enumerate() {
        match a.func {
            AggFunc::CountDistinct => {}
            AggFunc::Avg => {
                fields.push(Field::new(format!("__s{i}_sum"), DataType::Float64));
                fields.push(Field::new(format!("__s{i}_cnt"), DataType::Int64));
            }
            AggFunc::CountStar | AggFunc::Count => {
                fields.push(Field::new(format!("__s{i}"), DataType::Int64));
            }
            AggFunc::Sum | AggFunc::Min | AggFunc::Max => {
                fields.push(Field::new(format!("__s{i}"), a.output_type()));
            }
        }
    }
    Ok(Schema::new(fields)?)
}

/// Schema of the merged (final) aggregate output: keys then one column per
/// aggregate. `partial` is the local phase's output schema.
pub fn final_schema(
    partial: &Schema,
    key_count: usize,
    aggs: &[AggSpec],
) -> Result<Schema, LineageError> {
    let mut fields: Vec<Field> = partial.fields()[..key_count].to_vec();
    for a in aggs {
        fields.push(Field::new(a.name.clone(), a.output_type()));
    }
    Ok(Schema::new(fields)?)
}

/// Running state for one aggregate within one group.
#[derive(Debug, Clone)]
enum AggState {
    Count(i64),
    SumInt(Option<i64>),
    SumFloat(Option<f64>),
    Avg { sum: f64, count: i64 },
    Min(Option<Value>),
    Max(Option<Value>),
}

impl AggState {
    fn new(spec: &AggSpec) -> Option<AggState> {
        Some(match spec.func {
            AggFunc::CountStar | AggFunc::Count => AggState::Count(0),
            AggFunc::CountDistinct => return None,
            AggFunc::Sum => match spec.arg_type.unwrap() {
                DataType::Int64 => AggState::SumInt(None),
                _ => AggState::SumFloat(None),
            },
            AggFunc::Avg => AggState::Avg { sum: 0.0, count: 0 },
            AggFunc::Min => AggState::Min(None),
            AggFunc::Max => AggState::Max(None),
        })
    }

    fn update(&mut self, spec: &AggSpec, row: &Row) {
        match self {
            AggState::Count(n) => match spec.func {
                AggFunc::CountStar => *n += 1,
                _ => {
                    if row[spec.arg.unwrap()].is_some() {
                        *n += 1;
                    }
                }
            },
            AggState::SumInt(acc) => {
                if let Some(v) = &row[spec.arg.unwrap()] {
                    let x = v.as_i64().unwrap_or(0);
                    *acc = Some(acc.unwrap_or(0).wrapping_add(x));
                }
            }
            AggState::SumFloat(acc) => {
                if let Some(v) = &row[spec.arg.unwrap()] {
                    let x = v.as_f64().unwrap_or(0.0);
                    *acc = Some(acc.unwrap_or(0.0) + x);
                }
            }
            AggState::Avg { sum, count } => {
                if let Some(v) = &row[spec.arg.unwrap()] {
                    *sum += v.as_f64().unwrap_or(0.0);
                    *count += 1;
                }
            }
            AggState::Min(acc) => {
                if let Some(v) = &row[spec.arg.unwrap()] {
                    if acc.as_ref().is_none_or(|m| v < m) {
                        *acc = Some(v.clone());
                    }
                }
            }
            AggState::Max(acc) => {
                if let Some(v) = &row[spec.arg.unwrap()] {
                    if acc.as_ref().is_none_or(|m| v > m) {
                        *acc = Some(v.clone());
                    }
                }
            }
        }
    }

    /// Folds a partial state (columns of a partial row) into this one.
    fn absorb(&mut self, partial: &[Option<Value>]) {
        match self {
            AggState::Count(n) => {
                if let Some(v) = &partial[0] {
                    *n += v.as_i64().unwrap_or(0);
                }
            }
            AggState::SumInt(acc) => {
                if let Some(v) = &partial[0] {
                    *acc = Some(acc.unwrap_or(0).wrapping_add(v.as_i64().unwrap_or(0)));
                }
            }
            AggState::SumFloat(acc) => {
                if let Some(v) = &partial[0] {
                    *acc = Some(acc.unwrap_or(0.0) + v.as_f64().unwrap_or(0.0));
                }
            }
            AggState::Avg { sum, count } => {
                if let (Some(s), Some(c)) = (&partial[0], &partial[1]) {
                    *sum += s.as_f64().unwrap_or(0.0);
                    *count += c.as_i64().unwrap_or(0);
                }
            }
            AggState::Min(acc) => {
                if let Some(v) = &partial[0] {
                    if acc.as_ref().is_none_or(|m| v < m) {
                        *acc = Some(v.clone());
                    }
                }
            }
            AggState::Max(acc) => {
                if let Some(v) = &partial[0] {
                    if acc.as_ref().is_none_or(|m| v > m) {
                        *acc = Some(v.clone());
                    }
                }
            }
        }
    }

    fn partial_columns(&self) -> Vec<Option<Value>> {
        match self {
            AggState::Count(n) => vec![Some(Value::Int64(*n))],
            AggState::SumInt(acc) => vec![acc.map(Value::Int64)],
            AggState::SumFloat(acc) => vec![acc.map(Value::Float64)],
            AggState::Avg { sum, count } => vec![
                Some(Value::Float64(*sum)),
                Some(Value::Int64(*count)),
            ],
            AggState::Min(acc) | AggState::Max(acc) => vec![acc.clone()],
        }
    }

    fn finish(&self) -> Option<Value> {
        match self {
            AggState::Count(n) => Some(Value::Int64(*n)),
            AggState::SumInt(acc) => acc.map(Value::Int64),
            AggState::SumFloat(acc) => acc.map(Value::Float64),
            AggState::Avg { sum, count } => {
                if *count == 0 {
                    None
                } else {
                    Some(Value::Float64(sum / *count as f64))
                }
            }
            AggState::Min(acc) | AggState::Max(acc) => acc.clone(),
        }
    }
}

/// Local (partial) aggregation of one partition; output sorted by group.
pub fn local_aggregate(rows: &[Row], keys: &[usize], aggs: &[AggSpec]) -> RowBatch {
    let distincts = distinct_columns(keys, aggs);
    let mut groups: BTreeMap<Vec<Option<Value>>, Vec<Option<AggState>>> = BTreeMap::new();
    for row in rows {
        let group: Vec<Option<Value>> = keys
            .iter()
            .chain(distincts.iter())
            .map(|&c| row[c].clone())
            .collect();
        let states = groups
            .entry(group)
            .or_insert_with(|| aggs.iter().map(AggState::new).collect());
        for (a, st) in aggs.iter().zip(states.iter_mut()) {
            if let Some(st) = st {
                st.update(a, row);
            }
        }
    }
    groups
        .into_iter()
        .map(|(group, states)| {
            let mut out = group;
            for st in states.into_iter().flatten() {
                out.extend(st.partial_columns());
            }
            out
        })
        .collect()
}

// Maps a parent-relative distinct argument onto its partial-row position.
// Distinct args that were group keys reuse the key column; others occupy the
// slots after the keys in first-appearance order.
fn distinct_position(keys_parent: &[usize], aggs: &[AggSpec], arg: usize) -> usize {
    if let Some(p) = keys_parent.iter().position(|&k| k == arg) {
        return p;
    }
    let list = distinct_columns(keys_parent, aggs);
    keys_parent.len()
        + list
            .iter()
            .position(|&d| d == arg)
            .expect("distinct column present in partial layout")
}

enum MergeSlot {
    State(AggState),
    Distinct(BTreeSet<Value>),
}

/// Merges partial rows into final groups; output sorted by key.
///
/// `keys_parent` is the original aggregation's key column list (the same one
/// the local phase grouped by); partial rows carry those keys at positions
/// `0..keys_parent.len()`.
///
/// Ungrouped aggregation over no input still yields one identity row
/// (COUNT = 0, other aggregates NULL); grouped over no input yields no rows.
pub fn merge_aggregate(rows: &[Row], keys_parent: &[usize], aggs: &[AggSpec]) -> RowBatch {
    let key_count = keys_parent.len();
    let distincts = distinct_columns(keys_parent, aggs);

    // State column offset per aggregate within a partial row.
    let mut offsets = Vec::with_capacity(aggs.len());
    let mut at = key_count + distincts.len();
    for a in aggs {
        offsets.push(at);
        at += a.state_width();
    }

    let new_slots = |aggs: &[AggSpec]| -> Vec<MergeSlot> {
        aggs.iter()
            .map(|a| match AggState::new(a) {
                Some(st) => MergeSlot::State(st),
                None => MergeSlot::Distinct(BTreeSet::new()),
            })
            .collect()
    };

    let mut groups: BTreeMap<Vec<Option<Value>>, Vec<MergeSlot>> = BTreeMap::new();
    for row in rows {
        let key: Vec<Option<Value>> = row[..key_count].to_vec();
        let slots = groups.entry(key).or_insert_with(|| new_slots(aggs));
        for ((a, slot), &off) in aggs.iter().zip(slots.iter_mut()).zip(offsets.iter()) {
            match slot {
                MergeSlot::State(st) => st.absorb(&row[off..off + a.state_width()]),
                MergeSlot::Distinct(set) => {
                    let pos = distinct_position(keys_parent, aggs, a.arg.unwrap());
                    if let Some(v) = &row[pos] {
                        set.insert(v.clone());
                    }
                }
            }
        }
    }

    if key_count == 0 && groups.is_empty() {
        groups.insert(Vec::new(), new_slots(aggs));
    }

    groups
        .into_iter()
        .map(|(key, slots)| {
            let mut out = key;
            for slot in slots {
                out.push(match slot {
                    MergeSlot::State(st) => st.finish(),
                    MergeSlot::Distinct(set) => Some(Value::Int64(set.len() as i64)),
                });
            }
            out
        })
        .collect()
}
