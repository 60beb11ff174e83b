//! Box domains and tensor-product collocation grids.

use std::collections::HashSet;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{fmt_f64, CsvError};

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("domain bounds must have equal, non-zero length")]
    BoundsShape,
    #[error("axis {axis}: lower bound {lower} must be below upper bound {upper}")]
    EmptyAxis { axis: usize, lower: f64, upper: f64 },
    #[error("expected {expected} spacings, got {got}")]
    SpacingCount { expected: usize, got: usize },
    #[error("axis {axis}: extent {extent} is not an integer multiple of spacing {dx}")]
    NonDivisible { axis: usize, extent: f64, dx: f64 },
    #[error("axis {axis}: only {nodes} grid nodes, at least 3 required")]
    TooFewNodes { axis: usize, nodes: usize },
    #[error("point has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Axis-aligned box `Π [lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Domain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, GridError> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(GridError::BoundsShape);
        }
        for (axis, (&lo, &hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(GridError::EmptyAxis {
                    axis,
                    lower: lo,
                    upper: hi,
                });
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[lo, hi]^n`.
    pub fn cube(n: usize, lo: f64, hi: f64) -> Result<Self, GridError> {
        Self::new(vec![lo; n], vec![hi; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&lo, &hi))| lo <= v && v <= hi)
    }

    pub fn clip(&self, x: &mut [f64]) {
        for (v, (&lo, &hi)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(lo, hi);
        }
    }

    fn on_boundary(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .any(|(&v, (&lo, &hi))| v == lo || v == hi)
    }

    /// Node count per axis for spacing `dx`, checking divisibility to 1e-9.
    pub fn nodes_per_axis(&self, dx: &[f64]) -> Result<Vec<usize>, GridError> {
        if dx.len() != self.dim() {
            return Err(GridError::SpacingCount {
                expected: self.dim(),
                got: dx.len(),
            });
        }
        let mut nodes = Vec::with_capacity(dx.len());
        for (axis, &h) in dx.iter().enumerate() {
            let extent = self.upper[axis] - self.lower[axis];
            let ratio = extent / h;
            let cells = ratio.round();
            if !(h > 0.0) || !ratio.is_finite() || (ratio - cells).abs() > 1e-9 * cells.max(1.0) {
                return Err(GridError::NonDivisible {
                    axis,
                    extent,
                    dx: h,
                });
            }
            let k = cells as usize + 1;
            if k < 3 {
                return Err(GridError::TooFewNodes { axis, nodes: k });
            }
            nodes.push(k);
        }
        Ok(nodes)
    }
}

/// Row-major list of points of a fixed dimension.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            coords: Vec::new(),
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Result<Self, GridError> {
        let mut set = Self::new(dim);
        for r in rows {
            set.push(r.as_ref())?;
        }
        Ok(set)
    }

    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Result<Self, GridError> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(GridError::DimensionMismatch {
                expected: dim,
                got: coords.len(),
            });
        }
        Ok(Self { dim, coords })
    }

    pub fn push(&mut self, x: &[f64]) -> Result<(), GridError> {
        if x.len() != self.dim {
            return Err(GridError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        self.coords.extend_from_slice(x);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.coords.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.coords.chunks_exact(self.dim.max(1))
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }
}

/// Interior and boundary collocation points on a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollocationSet {
    pub domain: Domain,
    pub interior: PointSet,
    pub boundary: PointSet,
    pub spacing: Vec<f64>,
}

fn key(x: &[f64]) -> Vec<u64> {
    // +0.0 normalizes -0.0 so the two compare equal
    x.iter().map(|v| (v + 0.0).to_bits()).collect()
}

impl CollocationSet {
    /// Inclusive-endpoint tensor grid; nodes with any coordinate on an axis bound are boundary.
    ///
    /// Ordering is lexicographic with the first axis outermost.
    pub fn uniform_grid(domain: &Domain, dx: &[f64]) -> Result<Self, GridError> {
        let nodes = domain.nodes_per_axis(dx)?;
        let n = domain.dim();
        let axes: Vec<Vec<f64>> = (0..n)
            .map(|a| {
                let (lo, hi, k) = (domain.lower[a], domain.upper[a], nodes[a]);
                (0..k)
                    .map(|i| {
                        if i == k - 1 {
                            hi
                        } else {
                            lo + (hi - lo) * (i as f64) / ((k - 1) as f64)
                        }
                    })
                    .collect()
            })
            .collect();
        let mut interior = PointSet::new(n);
        let mut boundary = PointSet::new(n);
        let mut idx = vec![0usize; n];
        let mut x = vec![0.0; n];
        loop {
            let mut on_edge = false;
            for a in 0..n {
                x[a] = axes[a][idx[a]];
                on_edge |= idx[a] == 0 || idx[a] == nodes[a] - 1;
            }
            if on_edge {
                boundary.coords.extend_from_slice(&x);
            } else {
                interior.coords.extend_from_slice(&x);
            }
            // odometer increment, last axis fastest
            let mut a = n;
            loop {
                if a == 0 {
                    return Ok(Self {
                        domain: domain.clone(),
                        interior,
                        boundary,
                        spacing: dx.to_vec(),
                    });
                }
                a -= 1;
                idx[a] += 1;
                if idx[a] < nodes[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
    }

    /// Appends points to the interior list. Points are clipped to the box; exact
    /// duplicates of existing interior points (or of each other) are dropped.
    /// Returns the number of points actually added.
    pub fn append_points(&mut self, new_points: &PointSet) -> Result<usize, GridError> {
        self.append_points_with(new_points, true)
    }

    pub fn append_points_with(
        &mut self,
        new_points: &PointSet,
        dedup: bool,
    ) -> Result<usize, GridError> {
        if new_points.dim() != self.domain.dim() {
            return Err(GridError::DimensionMismatch {
                expected: self.domain.dim(),
                got: new_points.dim(),
            });
        }
        let mut seen: HashSet<Vec<u64>> = if dedup {
            self.interior.iter().map(key).collect()
        } else {
            HashSet::new()
        };
        let mut added = 0;
        let mut x = vec![0.0; self.domain.dim()];
        for p in new_points.iter() {
            x.copy_from_slice(p);
            self.domain.clip(&mut x);
            if dedup && !seen.insert(key(&x)) {
                continue;
            }
            self.interior.coords.extend_from_slice(&x);
            added += 1;
        }
        Ok(added)
    }

    /// Points flagged as on the boundary by coordinate test (used by invariant checks).
    pub fn is_boundary_point(&self, x: &[f64]) -> bool {
        self.domain.on_boundary(x)
    }

    /// CSV with columns `x1..xn,tag`, tag in {interior, boundary}.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), CsvError> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.domain.dim();
        let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        header.push("tag".into());
        w.write_record(&header)?;
        for (set, tag) in [(&self.interior, "interior"), (&self.boundary, "boundary")] {
            for p in set.iter() {
                let mut row: Vec<String> = p.iter().map(|&v| fmt_f64(v)).collect();
                row.push(tag.into());
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
