//! Iterative machine learning over datasets inside the lineage graph.
//!
//! Query results become point datasets through registered row functions, so
//! the whole pipeline — SQL, feature extraction, gradient/assignment jobs   —
//! shares one lineage graph and one recovery story. The driver only ever
//! sees per-partition partial sums; combining them in partition order keeps
//! every run bit-reproducible, fault injection included.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::engine::plan::{ExecKind, ExecPlan, ScanInfo};
use crate::engine::report::JobReport;
use crate::engine::{run_job, Cluster, FaultEvent};
use crate::error::{LineageError, MlError};
use crate::lineage::{
    AggFunc, AggSpec, DatasetId, DatasetNode, FunctionRegistry, NodeBuilder, RowFunction,
};
use crate::value::{DataType, Field, Row, Schema, Value};

/// One training example: features and a label in {-1, +1}.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub x: Vec<f64>,
    pub y: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Gradient contribution of one partition of points at `w`:
/// sum over points of (1/(1+exp(-y (w.x))) - 1) * y * x, evaluated in the
/// numerically stable form -sigmoid(-y (w.x)) * y * x, in point order.
pub fn lr_gradient(points: &[LabeledPoint], w: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; w.len()];
    for p in points {
        let z = -p.y * dot(w, &p.x);
        let factor = -sigmoid(z) * p.y;
        for (gi, xi) in g.iter_mut().zip(&p.x) {
            *gi += factor * xi;
        }
    }
    g
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// --- registered row functions -------------------------------------------

/// `params = [label_index, feature_index...]`: rows become
/// `[y in {-1,+1}, x...]`, all Float64. Labels coerce by sign: > 0 is +1.
struct SelectAsPoints;

impl RowFunction for SelectAsPoints {
    fn output_schema(&self, input: &Schema, params: &[Value]) -> Result<Schema, LineageError> {
        let idx = param_indices(params)?;
        if idx.len() < 2 {
            return Err(LineageError::FunctionFailed {
                fn_name: "select_as_points".into(),
                msg: "need a label column and at least one feature".into(),
            });
        }
        for &i in &idx {
            let f = input.fields().get(i).ok_or_else(|| missing_col(i))?;
            if !f.dtype.is_numeric() {
                return Err(LineageError::FunctionFailed {
                    fn_name: "select_as_points".into(),
                    msg: format!("column `{}` is not numeric", f.name),
                });
            }
        }
        let mut fields = vec![Field::new("y", DataType::Float64)];
        for d in 0..idx.len() - 1 {
            fields.push(Field::new(format!("x{d}"), DataType::Float64));
        }
        Ok(Schema::new(fields)?)
    }

    fn apply(&self, row: &Row, params: &[Value]) -> Row {
        let idx = param_indices(params).expect("validated at planning");
        let num = |i: usize| -> f64 {
            row[i]
                .as_ref()
                .and_then(Value::as_f64)
                .unwrap_or(0.0)
        };
        let y = if num(idx[0]) > 0.0 { 1.0 } else { -1.0 };
        let mut out = vec![Some(Value::Float64(y))];
        for &i in &idx[1..] {
            out.push(Some(Value::Float64(num(i))));
        }
        out
    }
}

/// `params = [feature_index...]`: rows become `[x...]`, all Float64.
struct FeaturesOnly;

impl RowFunction for FeaturesOnly {
    fn output_schema(&self, input: &Schema, params: &[Value]) -> Result<Schema, LineageError> {
        let idx = param_indices(params)?;
        if idx.is_empty() {
            return Err(LineageError::FunctionFailed {
                fn_name: "features_only".into(),
                msg: "need at least one feature column".into(),
            });
        }
        for &i in &idx {
            let f = input.fields().get(i).ok_or_else(|| missing_col(i))?;
            if !f.dtype.is_numeric() {
                return Err(LineageError::FunctionFailed {
                    fn_name: "features_only".into(),
                    msg: format!("column `{}` is not numeric", f.name),
                });
            }
        }
        Ok(Schema::new(
            (0..idx.len())
                .map(|d| Field::new(format!("x{d}"), DataType::Float64))
                .collect(),
        )?)
    }

    fn apply(&self, row: &Row, params: &[Value]) -> Row {
        let idx = param_indices(params).expect("validated at planning");
        idx.iter()
            .map(|&i| {
                Some(Value::Float64(
                    row[i].as_ref().and_then(Value::as_f64).unwrap_or(0.0),
                ))
            })
            .collect()
    }
}

/// `params = [w...]`: maps a point row `[y, x...]` to its gradient
/// contribution `[g...]`.
struct LrGradientTerm;

impl RowFunction for LrGradientTerm {
    fn output_schema(&self, input: &Schema, params: &[Value]) -> Result<Schema, LineageError> {
        let d = params.len();
        if input.len() != d + 1 {
            return Err(LineageError::FunctionFailed {
                fn_name: "lr_gradient_term".into(),
                msg: format!("dimension mismatch: {} features vs |w| = {d}", input.len() - 1),
            });
        }
        Ok(Schema::new(
            (0..d)
                .map(|i| Field::new(format!("g{i}"), DataType::Float64))
                .collect(),
        )?)
    }

    fn apply(&self, row: &Row, params: &[Value]) -> Row {
        let w: Vec<f64> = params.iter().map(|v| v.as_f64().unwrap_or(0.0)).collect();
        let y = row[0].as_ref().and_then(Value::as_f64).unwrap_or(0.0);
        let x: Vec<f64> = row[1..]
            .iter()
            .map(|v| v.as_ref().and_then(Value::as_f64).unwrap_or(0.0))
            .collect();
        let z = -y * dot(&w, &x);
        let factor = -sigmoid(z) * y;
        x.iter()
            .map(|xi| Some(Value::Float64(factor * xi)))
            .collect()
    }
}

/// `params = [k, d, centroids flattened row-major]`: maps `[x...]` to
/// `[cluster, dist2, x...]`. Nearest centroid by Euclidean distance, ties to
/// the lowest index.
struct KmeansAssign;

impl RowFunction for KmeansAssign {
    fn output_schema(&self, input: &Schema, params: &[Value]) -> Result<Schema, LineageError> {
        let d = params
            .get(1)
            .and_then(Value::as_i64)
            .unwrap_or(0) as usize;
        if input.len() != d {
            return Err(LineageError::FunctionFailed {
                fn_name: "kmeans_assign".into(),
                msg: format!("dimension mismatch: {} vs {d}", input.len()),
            });
        }
        let mut fields = vec![
            Field::new("cluster", DataType::Int64),
            Field::new("dist2", DataType::Float64),
        ];
        for i in 0..d {
            fields.push(Field::new(format!("x{i}"), DataType::Float64));
        }
        Ok(Schema::new(fields)?)
    }

    fn apply(&self, row: &Row, params: &[Value]) -> Row {
        let k = params[0].as_i64().unwrap_or(0) as usize;
        let d = params[1].as_i64().unwrap_or(0) as usize;
        let x: Vec<f64> = row
            .iter()
            .map(|v| v.as_ref().and_then(Value::as_f64).unwrap_or(0.0))
            .collect();
        let mut best = 0usize;
        let mut best_d2 = f64::INFINITY;
        for c in 0..k {
            let mut d2 = 0.0;
            for i in 0..d {
                let ci = params[2 + c * d + i].as_f64().unwrap_or(0.0);
                let diff = x[i] - ci;
                d2 += diff * diff;
            }
            if d2 < best_d2 {
                best_d2 = d2;
                best = c;
            }
        }
        let mut out = vec![
            Some(Value::Int64(best as i64)),
            Some(Value::Float64(best_d2)),
        ];
        out.extend(x.into_iter().map(|v| Some(Value::Float64(v))));
        out
    }
}

fn param_indices(params: &[Value]) -> Result<Vec<usize>, LineageError> {
    params
        .iter()
        .map(|v| {
            v.as_i64()
                .map(|i| i as usize)
                .ok_or_else(|| LineageError::FunctionFailed {
                    fn_name: "points".into(),
                    msg: "parameters must be column indices".into(),
                })
        })
        .collect()
}

fn missing_col(i: usize) -> LineageError {
    LineageError::FunctionFailed {
        fn_name: "points".into(),
        msg: format!("column index {i} out of range"),
    }
}

pub fn register_builtins(registry: &FunctionRegistry) {
    registry.register("select_as_points", Arc::new(SelectAsPoints));
    registry.register("features_only", Arc::new(FeaturesOnly));
    registry.register("lr_gradient_term", Arc::new(LrGradientTerm));
    registry.register("kmeans_assign", Arc::new(KmeansAssign));
}

// --- dataset bridge ---------------------------------------------------------

/// Narrow per-row mapping of a table-shaped dataset through a registered
/// function; the result is cache-flagged like Listing-style `.cache()`d
/// features.
pub fn map_rows(
    builder: &NodeBuilder,
    input: Arc<DatasetNode>,
    function: &str,
    params: Vec<Value>,
) -> Result<Arc<DatasetNode>, MlError> {
    let node = builder
        .map(input, function, params)
        .map_err(|e| MlError::Sql(crate::error::SqlError::PlanError(e.to_string())))?;
    Ok(builder.cached(node))
}

// --- driver loops -------------------------------------------------------------

pub struct IterationJobs<'a> {
    pub cluster: &'a mut Cluster,
    pub builder: &'a NodeBuilder,
    pub scans: HashMap<DatasetId, ScanInfo>,
    /// Fault schedule applied to the first iteration's job only.
    pub first_iteration_faults: Vec<FaultEvent>,
    pub job_label: String,
}

pub struct LrOutcome {
    pub weights: Vec<f64>,
    /// (iteration, gradient l2 norm)
    pub metrics: Vec<(usize, f64)>,
    pub reports: Vec<JobReport>,
}

/// Full-batch gradient descent: w starts uniform in [-1, 1) per coordinate
/// from the seed; each iteration runs one distributed gradient job and
/// applies `w -= step * gradient`.
pub fn logistic_regression(
    ctx: &mut IterationJobs,
    points: Arc<DatasetNode>,
    dims: usize,
    iterations: usize,
    seed: u64,
    step: f64,
) -> Result<LrOutcome, MlError> {
    if iterations == 0 {
        return Err(MlError::InvalidIterations);
    }
    if points.schema.len() != dims + 1 {
        return Err(MlError::DimensionMismatch(format!(
            "points have {} feature columns, expected {dims}",
            points.schema.len() - 1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<f64> = (0..dims).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect();

    let mut metrics = Vec::new();
    let mut reports = Vec::new();
    for iter in 1..=iterations {
        let params: Vec<Value> = w.iter().map(|&x| Value::Float64(x)).collect();
        let grad_map = ctx
            .builder
            .map(points.clone(), "lr_gradient_term", params)
            .map_err(lineage_err)?;
        let aggs: Vec<AggSpec> = (0..dims)
            .map(|i| AggSpec {
                func: AggFunc::Sum,
                arg: Some(i),
                arg_type: Some(DataType::Float64),
                name: format!("g{i}"),
            })
            .collect();
        let partials = ctx
            .builder
            .local_aggregate(grad_map, vec![], aggs)
            .map_err(lineage_err)?;
        let plan = ExecPlan {
            kind: ExecKind::Static { root: partials },
            scans: ctx.scans.clone(),
        };
        let faults = if iter == 1 {
            ctx.first_iteration_faults.clone()
        } else {
            vec![]
        };
        let job_id = ctx.cluster.next_job_id();
        let label = format!("{} iter {iter}", ctx.job_label);
        let (out, report) = run_job(ctx.cluster, ctx.builder, &plan, &faults, job_id, &label)?;

        // Partition-ordered reduce of partial gradients.
        let mut g = vec![0.0; dims];
        for row in &out.rows {
            for (gi, v) in g.iter_mut().zip(row.iter()) {
                *gi += v.as_ref().and_then(Value::as_f64).unwrap_or(0.0);
            }
        }
        for (wi, gi) in w.iter_mut().zip(&g) {
            *wi -= step * gi;
        }
        metrics.push((iter, dot(&g, &g).sqrt()));
        reports.push(report);
    }
    Ok(LrOutcome {
        weights: w,
        metrics,
        reports,
    })
}

pub struct KmeansOutcome {
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squared distances after each assignment pass.
    pub sse: Vec<f64>,
    pub reports: Vec<JobReport>,
}

/// Lloyd's algorithm: seeded sampling of k distinct points, then iterate
/// assign/mean. Empty clusters keep their previous centroid.
pub fn kmeans(
    ctx: &mut IterationJobs,
    points: Arc<DatasetNode>,
    k: usize,
    iterations: usize,
    seed: u64,
) -> Result<KmeansOutcome, MlError> {
    if iterations == 0 {
        return Err(MlError::InvalidIterations);
    }
    let dims = points.schema.len();
    if k == 0 {
        return Err(MlError::InvalidK("k must be >= 1".into()));
    }

    // Initialization: collect the points once and sample k distinct values.
    let init_plan = ExecPlan {
        kind: ExecKind::Static {
            root: points.clone(),
        },
        scans: ctx.scans.clone(),
    };
    let job_id = ctx.cluster.next_job_id();
    let (out, init_report) = run_job(
        ctx.cluster,
        ctx.builder,
        &init_plan,
        &[],
        job_id,
        &format!("{} init", ctx.job_label),
    )?;
    let as_vec = |row: &Row| -> Vec<f64> {
        row.iter()
            .map(|v| v.as_ref().and_then(Value::as_f64).unwrap_or(0.0))
            .collect()
    };
    let mut distinct: Vec<Vec<f64>> = Vec::new();
    {
        let mut seen = std::collections::BTreeSet::new();
        for row in &out.rows {
            let key = crate::value::row_canonical_bytes(row);
            if seen.insert(key) {
                distinct.push(as_vec(row));
            }
        }
    }
    if distinct.len() < k {
        return Err(MlError::InvalidK(format!(
            "k = {k} exceeds the {} distinct points",
            distinct.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut pool: Vec<usize> = (0..distinct.len()).collect();
    for _ in 0..k {
        let pick = rng.gen_range(0..pool.len());
        centroids.push(distinct[pool.swap_remove(pick)].clone());
    }

    let mut reports = vec![init_report];
    let mut sse_track = Vec::new();
    for iter in 1..=iterations {
        let mut params = vec![
            Value::Int64(k as i64),
            Value::Int64(dims as i64),
        ];
        for c in &centroids {
            params.extend(c.iter().map(|&v| Value::Float64(v)));
        }
        let assigned = ctx
            .builder
            .map(points.clone(), "kmeans_assign", params)
            .map_err(lineage_err)?;
        // Partial per (partition, cluster): count, per-dim sums, dist2 sum.
        let mut aggs = vec![AggSpec {
            func: AggFunc::CountStar,
            arg: None,
            arg_type: None,
            name: "n".into(),
        }];
        for i in 0..dims {
            aggs.push(AggSpec {
                func: AggFunc::Sum,
                arg: Some(2 + i),
                arg_type: Some(DataType::Float64),
                name: format!("s{i}"),
            });
        }
        aggs.push(AggSpec {
            func: AggFunc::Sum,
            arg: Some(1),
            arg_type: Some(DataType::Float64),
            name: "sse".into(),
        });
        let partials = ctx
            .builder
            .local_aggregate(assigned, vec![0], aggs)
            .map_err(lineage_err)?;
        let plan = ExecPlan {
            kind: ExecKind::Static { root: partials },
            scans: ctx.scans.clone(),
        };
        let faults = if iter == 1 {
            ctx.first_iteration_faults.clone()
        } else {
            vec![]
        };
        let job_id = ctx.cluster.next_job_id();
        let label = format!("{} iter {iter}", ctx.job_label);
        let (out, report) = run_job(ctx.cluster, ctx.builder, &plan, &faults, job_id, &label)?;
        reports.push(report);

        // Merge per-cluster partials in partition order.
        let mut counts = vec![0i64; k];
        let mut sums = vec![vec![0.0; dims]; k];
        let mut sse = 0.0;
        for row in &out.rows {
            let c = row[0].as_ref().and_then(Value::as_i64).unwrap_or(0) as usize;
            counts[c] += row[1].as_ref().and_then(Value::as_i64).unwrap_or(0);
            for i in 0..dims {
                sums[c][i] += row[2 + i].as_ref().and_then(Value::as_f64).unwrap_or(0.0);
            }
            sse += row[2 + dims].as_ref().and_then(Value::as_f64).unwrap_or(0.0);
        }
        sse_track.push(sse);
        for c in 0..k {
            if counts[c] > 0 {
                for i in 0..dims {
                    centroids[c][i] = sums[c][i] / counts[c] as f64;
                }
            } // empty cluster keeps its previous centroid
        }
    }
    Ok(KmeansOutcome {
        centroids,
        sse: sse_track,
        reports,
    })
}

fn lineage_err(e: LineageError) -> MlError {
    MlError::Engine(crate::error::EngineError::Lineage(e))
}
