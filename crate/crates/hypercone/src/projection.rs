//! Plot-ready 2D projections and norm summaries of an embedding store.
//!
//! Two projection methods, both landing in the unit Poincaré disk:
//!
//! * `PoincareAxes` — convert each point to Poincaré-ball coordinates and
//!   keep the first two axes. Cheap, faithful near the chosen plane.
//! * `TangentPca` — log-map every point to the origin tangent space, run a
//!   principal-component analysis of the centered tangent vectors, project
//!   onto the top-2 directions, exp-map the 2D scores back to the
//!   hyperboloid, and convert to Poincaré coordinates. The eigenvector
//!   signs are canonicalized (largest-magnitude entry positive) so output
//!   is reproducible across input orderings.
//!
//! Every row carries the record's original spatial norm so norm structure
//! survives the dimension drop. Norm histograms share one bin-edge array
//! across roles, making per-role curves directly overlayable.
//!
//! Both table kinds serialize to CSV: `id,role,level,u,v,norm` for
//! projections and `role,bin_left,bin_right,count` for norm histograms.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::{exp_map_origin, log_map_origin, lorentz_to_poincare, TangentVector};
use crate::store::{EmbeddingStore, Role};

/// Bins in a norm-distribution table.
pub const DEFAULT_NORM_BINS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionMethod {
    PoincareAxes,
    TangentPca,
}

impl ProjectionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ProjectionMethod::PoincareAxes => "poincare_axes",
            ProjectionMethod::TangentPca => "tangent_pca",
        }
    }
}

/// One projected record: disk coordinates plus the original spatial norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionRow {
    pub id: String,
    pub role: Role,
    pub level: i32,
    pub u: f64,
    pub v: f64,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub method: ProjectionMethod,
    pub rows: Vec<ProjectionRow>,
    /// Fraction of tangent variance captured by the two kept directions;
    /// `None` for the axis projection, 1.0 for a variance-free store.
    pub explained_variance: Option<f64>,
}

/// Projects a store to 2D by the chosen method.
pub fn project_2d(store: &EmbeddingStore, method: ProjectionMethod) -> Result<ProjectionResult> {
    if store.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot project an empty store".to_string(),
        ));
    }
    let dim = store.dim().expect("nonempty store has a dimension");
    if dim < 2 {
        return Err(Error::InvalidParameter(format!(
            "projection needs at least 2 spatial dimensions, store has {dim}"
        )));
    }
    match method {
        ProjectionMethod::PoincareAxes => {
            let rows = store
                .records()
                .iter()
                .map(|r| {
                    let disk = lorentz_to_poincare(&r.point);
                    ProjectionRow {
                        id: r.id.clone(),
                        role: r.role,
                        level: r.level,
                        u: disk[0],
                        v: disk[1],
                        norm: r.point.spatial_norm(),
                    }
                })
                .collect();
            Ok(ProjectionResult {
                method,
                rows,
                explained_variance: None,
            })
        }
        ProjectionMethod::TangentPca => project_tangent_pca(store, dim),
    }
}

fn project_tangent_pca(store: &EmbeddingStore, dim: usize) -> Result<ProjectionResult> {
    let n = store.len();
    let tangents: Vec<Vec<f64>> = store
        .records()
        .iter()
        .map(|r| log_map_origin(&r.point).spatial().to_vec())
        .collect();
    let mut mean = vec![0.0; dim];
    for t in &tangents {
        for (m, x) in mean.iter_mut().zip(t) {
            *m += x / n as f64;
        }
    }
    let centered: Vec<DVector<f64>> = tangents
        .iter()
        .map(|t| DVector::from_iterator(dim, t.iter().zip(&mean).map(|(x, m)| x - m)))
        .collect();
    let mut covariance = DMatrix::<f64>::zeros(dim, dim);
    for c in &centered {
        covariance += c * c.transpose();
    }
    covariance /= n as f64;

    let eigen = covariance.symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eigen.eigenvalues[b]
            .partial_cmp(&eigen.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    let axis = |rank: usize| -> DVector<f64> {
        let mut v: DVector<f64> = eigen.eigenvectors.column(order[rank]).into();
        // Canonical sign: the entry of largest magnitude points positive.
        let lead = v
            .iter()
            .cloned()
            .max_by(|a, b| a.abs().partial_cmp(&b.abs()).expect("finite"))
            .unwrap_or(1.0);
        if lead < 0.0 {
            v.neg_mut();
        }
        v
    };
    let e1 = axis(0);
    let e2 = axis(1);

    let total: f64 = eigen.eigenvalues.iter().map(|l| l.max(0.0)).sum();
    let kept = eigen.eigenvalues[order[0]].max(0.0) + eigen.eigenvalues[order[1]].max(0.0);
    let explained = if total > 0.0 { kept / total } else { 1.0 };

    let mut rows = Vec::with_capacity(n);
    for (record, c) in store.records().iter().zip(&centered) {
        let scores = vec![e1.dot(c), e2.dot(c)];
        let plane_point = exp_map_origin(&TangentVector::new(scores)?, store.kappa());
        let disk = lorentz_to_poincare(&plane_point);
        rows.push(ProjectionRow {
            id: record.id.clone(),
            role: record.role,
            level: record.level,
            u: disk[0],
            v: disk[1],
            norm: record.point.spatial_norm(),
        });
    }
    Ok(ProjectionResult {
        method: ProjectionMethod::TangentPca,
        rows,
        explained_variance: Some(explained),
    })
}

/// Norm histogram of one role over the shared edges.
#[derive(Debug, Clone, PartialEq)]
pub struct RoleNorms {
    pub role: Role,
    pub count: usize,
    pub counts: Vec<u64>,
    pub mean: f64,
    pub variance: f64,
}

/// Per-role norm histograms over one shared bin-edge array.
#[derive(Debug, Clone, PartialEq)]
pub struct NormDistribution {
    /// `bins + 1` uniform edges spanning the pooled observed range.
    pub bin_edges: Vec<f64>,
    pub roles: Vec<RoleNorms>,
}

/// Builds per-role spatial-norm histograms. `roles` filters which roles
/// are tabulated (`None` = every role present, in fixed enum order).
pub fn norm_distribution(
    store: &EmbeddingStore,
    bins: usize,
    roles: Option<&[Role]>,
) -> Result<NormDistribution> {
    if store.is_empty() {
        return Err(Error::InvalidParameter(
            "cannot summarize an empty store".to_string(),
        ));
    }
    if bins == 0 {
        return Err(Error::InvalidParameter(
            "norm distribution needs at least one bin".to_string(),
        ));
    }
    let all_roles = [Role::Image, Role::Caption, Role::NodeA, Role::NodeB];
    let selected: Vec<Role> = match roles {
        Some(list) => list.to_vec(),
        None => all_roles
            .into_iter()
            .filter(|role| store.records().iter().any(|r| r.role == *role))
            .collect(),
    };
    let pooled: Vec<f64> = store
        .records()
        .iter()
        .filter(|r| selected.contains(&r.role))
        .map(|r| r.point.spatial_norm())
        .collect();
    if pooled.is_empty() {
        return Err(Error::InvalidParameter(
            "no records match the requested roles".to_string(),
        ));
    }
    let min = pooled.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = pooled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = if max > min { max - min } else { 1.0 };
    let bin_edges: Vec<f64> = (0..=bins)
        .map(|i| min + width * i as f64 / bins as f64)
        .collect();
    let mut out = Vec::with_capacity(selected.len());
    for role in selected {
        let norms: Vec<f64> = store
            .records()
            .iter()
            .filter(|r| r.role == role)
            .map(|r| r.point.spatial_norm())
            .collect();
        let count = norms.len();
        let mut counts = vec![0u64; bins];
        for &x in &norms {
            let idx = (((x - min) / width) * bins as f64) as usize;
            counts[idx.min(bins - 1)] += 1;
        }
        let mean = if count > 0 {
            norms.iter().sum::<f64>() / count as f64
        } else {
            0.0
        };
        let variance = if count > 0 {
            norms.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / count as f64
        } else {
            0.0
        };
        out.push(RoleNorms {
            role,
            count,
            counts,
            mean,
            variance,
        });
    }
    Ok(NormDistribution {
        bin_edges,
        roles: out,
    })
}

/// CSV table `id,role,level,u,v,norm`.
pub fn write_projection_csv(result: &ProjectionResult, path: &Path) -> Result<()> {
    let mut out = String::from("id,role,level,u,v,norm\n");
    for row in &result.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            row.id,
            row.role.as_str(),
            row.level,
            row.u,
            row.v,
            row.norm
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// CSV table `role,bin_left,bin_right,count`, one block of rows per role.
pub fn write_norm_csv(distribution: &NormDistribution, path: &Path) -> Result<()> {
    let mut out = String::from("role,bin_left,bin_right,count\n");
    for role in &distribution.roles {
        for (bin, &count) in role.counts.iter().enumerate() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                role.role.as_str(),
                distribution.bin_edges[bin],
                distribution.bin_edges[bin + 1],
                count
            );
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
