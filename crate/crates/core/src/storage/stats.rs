//! Per-partition column statistics, collected while loading and used by the
//! planner for zone-map partition pruning.

use std::collections::BTreeSet;

use crate::value::Value;

/// Range and optional small-cardinality value set for one column of one
/// partition. Nulls are excluded; an all-null column has no min/max.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnStats {
    pub min: Option<Value>,
    pub max: Option<Value>,
    /// Present only when the observed cardinality stayed at or under the enum
    /// threshold.
    pub distinct: Option<BTreeSet<Value>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionStats {
    pub row_count: usize,
    /// Decoded (logical) size of the partition.
    pub byte_size: usize,
    pub columns: Vec<ColumnStats>,
}

/// Collects stats over decoded column values. Columns must be equal length.
pub fn compute_partition_stats(
    columns: &[Vec<Option<Value>>],
    enum_threshold: usize,
) -> PartitionStats {
    let row_count = columns.first().map_or(0, Vec::len);
    debug_assert!(columns.iter().all(|c| c.len() == row_count));

    let mut byte_size = 0;
    let mut out = Vec::with_capacity(columns.len());
    for col in columns {
        let mut min: Option<&Value> = None;
        let mut max: Option<&Value> = None;
        let mut distinct: Option<BTreeSet<Value>> = Some(BTreeSet::new());
        for v in col {
            byte_size += 1 + v.as_ref().map_or(0, Value::byte_size);
            let Some(v) = v else { continue };
            if min.is_none_or(|m| v < m) {
                min = Some(v);
            }
            if max.is_none_or(|m| v > m) {
                max = Some(v);
            }
            if let Some(set) = &mut distinct {
                set.insert(v.clone());
                if set.len() > enum_threshold {
                    distinct = None;
                }
            }
        }
        out.push(ColumnStats {
            min: min.cloned(),
            max: max.cloned(),
            distinct,
        });
    }
    PartitionStats {
        row_count,
        byte_size,
        columns: out,
    }
}
