//! Point clouds, farthest point sampling, and local neighborhood queries.
//!
//! Queries produce `LocalRegionBatch` values: fixed-size member sets per
//! centroid with coordinates normalized to the unit cube `[-1, 1]^3`,
//! ready for grid rendering.

use std::str::FromStr;

use rand::Rng;

use crate::nncore::Tensor;
use crate::rng::{seeded_rng, stream_rng};
use crate::scalar::dist2;
use crate::{invalid_arg, Result, Scalar};

/// Member index marking a synthesized slot in an empty region.
pub const NO_MEMBER: usize = usize::MAX;

/// Points with per-point feature rows.
pub struct PointCloud<S: Scalar> {
    coords: Vec<[S; 3]>,
    feats: Tensor<S>,
}

impl<S: Scalar> PointCloud<S> {
    /// `feats` must be `[N, C]` with one row per point. Coordinates and
    /// features must be finite.
    pub fn new(coords: Vec<[S; 3]>, feats: Tensor<S>) -> Result<Self> {
        if coords.is_empty() {
            return Err(invalid_arg!("point cloud must contain at least one point"));
        }
        if feats.shape().len() != 2 || feats.shape()[0] != coords.len() {
            return Err(invalid_arg!(
                "features shape {:?} does not match {} points",
                feats.shape(),
                coords.len()
            ));
        }
        if coords.iter().any(|p| p.iter().any(|v| !v.is_finite())) || !feats.all_finite() {
            return Err(crate::Error::NonFinite("point cloud input".into()));
        }
        Ok(PointCloud { coords, feats })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.feats.shape()[1]
    }

    pub fn coords(&self) -> &[[S; 3]] {
        &self.coords
    }

    pub fn feats(&self) -> &Tensor<S> {
        &self.feats
    }
}

/// Greedy farthest point sampling with a seeded uniform first pick.
///
/// Iteratively selects the not-yet-selected point with the largest
/// distance to the selected set; ties break to the lowest index. With
/// `n_out == n` the result is a permutation of all indices.
pub fn farthest_point_sample<S: Scalar>(
    coords: &[[S; 3]],
    n_out: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    let mut rng = seeded_rng(seed);
    let n = coords.len();
    if n == 0 || n_out == 0 || n_out > n {
        return Err(invalid_arg!("fps asked for {n_out} of {n} points"));
    }
    let first = rng.gen_range(0..n);
    farthest_point_sample_from(coords, n_out, first)
}

/// Farthest point sampling with an explicit first index.
pub fn farthest_point_sample_from<S: Scalar>(
    coords: &[[S; 3]],
    n_out: usize,
    first: usize,
) -> Result<Vec<usize>> {
    let n = coords.len();
    if n == 0 || n_out == 0 || n_out > n {
        return Err(invalid_arg!("fps asked for {n_out} of {n} points"));
    }
    if first >= n {
        return Err(invalid_arg!("fps first index {first} out of range {n}"));
    }
    let mut selected = Vec::with_capacity(n_out);
    let mut taken = vec![false; n];
    let mut min_d2: Vec<S> = coords.iter().map(|&p| dist2(p, coords[first])).collect();
    selected.push(first);
    taken[first] = true;
    while selected.len() < n_out {
        let mut best = NO_MEMBER;
        let mut best_d2 = S::neg_infinity();
        for (i, &d2) in min_d2.iter().enumerate() {
            if !taken[i] && d2 > best_d2 {
                best = i;
                best_d2 = d2;
            }
        }
        selected.push(best);
        taken[best] = true;
        let bp = coords[best];
        for (i, d2) in min_d2.iter_mut().enumerate() {
            let d = dist2(coords[i], bp);
            if d < *d2 {
                *d2 = d;
            }
        }
    }
    Ok(selected)
}

/// Fixed-size neighborhoods around centroids, normalized for rendering.
///
/// `local_coords[m][j]` is `(p - centroid_m) / scale` in `[-1, 1]^3` for
/// cube queries (scale = half edge) and within the unit ball scaled by
/// the radius for ball queries. Padded slots repeat real members;
/// `member_indices` maps slots back to input points (`NO_MEMBER` for the
/// synthesized slot of an empty region).
pub struct LocalRegionBatch<S: Scalar> {
    pub centroids: Vec<[S; 3]>,
    /// `[M, K, 3]` normalized member offsets.
    pub local_coords: Tensor<S>,
    /// `[M, K, C]` member feature rows.
    pub local_feats: Tensor<S>,
    /// Distinct real members per region (1 for empty regions).
    pub valid_counts: Vec<usize>,
    /// `[M * K]` source point index per slot.
    pub member_indices: Vec<usize>,
}

impl<S: Scalar> LocalRegionBatch<S> {
    pub fn num_regions(&self) -> usize {
        self.centroids.len()
    }

    pub fn members_per_region(&self) -> usize {
        self.local_coords.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.local_feats.shape()[2]
    }

    /// Local coordinates of one region, `[K, 3]`.
    pub fn region_coords(&self, m: usize) -> &[S] {
        let k = self.members_per_region();
        &self.local_coords.data()[m * k * 3..(m + 1) * k * 3]
    }

    /// Feature rows of one region, `[K, C]`.
    pub fn region_feats(&self, m: usize) -> &[S] {
        let k = self.members_per_region();
        let c = self.channels();
        &self.local_feats.data()[m * k * c..(m + 1) * k * c]
    }
}

/// Ball radius with the same volume as a cube of half edge `e`:
/// `r = e * (6 / pi)^(1/3)`.
pub fn equal_volume_radius(half_edge: f64) -> f64 {
    half_edge * (6.0 / std::f64::consts::PI).powf(1.0 / 3.0)
}

/// Neighborhood shape used by backbone stages. Both kinds take the same
/// half-edge parameter; `Ball` converts it to the equal-volume radius.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueryKind {
    Cube,
    Ball,
}

impl QueryKind {
    pub fn name(self) -> &'static str {
        match self {
            QueryKind::Cube => "cube",
            QueryKind::Ball => "ball",
        }
    }
}

impl FromStr for QueryKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cube" => Ok(QueryKind::Cube),
            "ball" => Ok(QueryKind::Ball),
            other => Err(invalid_arg!("unknown query kind {other:?} (cube, ball)")),
        }
    }
}

/// Dispatches on the query kind with shared parameters.
pub fn query_regions<S: Scalar>(
    pc: &PointCloud<S>,
    centroids: &[[S; 3]],
    kind: QueryKind,
    half_edge: f64,
    k: usize,
    seed: u64,
) -> Result<LocalRegionBatch<S>> {
    match kind {
        QueryKind::Cube => cube_query(pc, centroids, half_edge, k, seed),
        QueryKind::Ball => ball_query(pc, centroids, half_edge, k, seed),
    }
}

enum QueryShape {
    Cube { half_edge: f64 },
    Ball { radius: f64, norm: f64 },
}

/// Cube query: members satisfy max-norm distance <= half_edge; local
/// coordinates divide by half_edge, filling `[-1, 1]^3`.
pub fn cube_query<S: Scalar>(
    pc: &PointCloud<S>,
    centroids: &[[S; 3]],
    half_edge: f64,
    k: usize,
    seed: u64,
) -> Result<LocalRegionBatch<S>> {
    query(pc, centroids, QueryShape::Cube { half_edge }, half_edge, k, seed)
}

/// Ball query with the equal-volume radius for `half_edge`, normalized by
/// that radius. Selection and padding rules match the cube query.
pub fn ball_query<S: Scalar>(
    pc: &PointCloud<S>,
    centroids: &[[S; 3]],
    half_edge: f64,
    k: usize,
    seed: u64,
) -> Result<LocalRegionBatch<S>> {
    let r = equal_volume_radius(half_edge);
    query(pc, centroids, QueryShape::Ball { radius: r, norm: r }, half_edge, k, seed)
}

/// Ball query with an explicit radius (proposal grouping).
pub fn ball_query_radius<S: Scalar>(
    pc: &PointCloud<S>,
    centroids: &[[S; 3]],
    radius: f64,
    k: usize,
    seed: u64,
) -> Result<LocalRegionBatch<S>> {
    query(pc, centroids, QueryShape::Ball { radius, norm: radius }, radius, k, seed)
}

fn query<S: Scalar>(
    pc: &PointCloud<S>,
    centroids: &[[S; 3]],
    shape: QueryShape,
    scale: f64,
    k: usize,
    seed: u64,
) -> Result<LocalRegionBatch<S>> {
    if centroids.is_empty() {
        return Err(invalid_arg!("query needs at least one centroid"));
    }
    if k == 0 {
        return Err(invalid_arg!("query needs at least one member slot"));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(invalid_arg!("query scale {scale} must be positive and finite"));
    }
    let m = centroids.len();
    let c = pc.channels();
    let inv_scale = match &shape {
        QueryShape::Cube { half_edge } => S::of(1.0 / half_edge),
        QueryShape::Ball { norm, .. } => S::of(1.0 / norm),
    };
    let mut local_coords = Tensor::zeros(&[m, k, 3]);
    let mut local_feats = Tensor::zeros(&[m, k, c]);
    let mut valid_counts = vec![0usize; m];
    let mut member_indices = vec![NO_MEMBER; m * k];

    let mut candidates: Vec<usize> = Vec::new();
    for (mi, &center) in centroids.iter().enumerate() {
        // Per-region RNG stream: region results are independent of the
        // order regions are processed in.
        let mut rng = stream_rng(seed, mi as u64);
        candidates.clear();
        match &shape {
            QueryShape::Cube { half_edge } => {
                let he = S::of(*half_edge);
                for (i, p) in pc.coords().iter().enumerate() {
                    if (p[0] - center[0]).abs() <= he
                        && (p[1] - center[1]).abs() <= he
                        && (p[2] - center[2]).abs() <= he
                    {
                        candidates.push(i);
                    }
                }
            }
            QueryShape::Ball { radius, .. } => {
                let r2 = S::of(radius * radius);
                for (i, p) in pc.coords().iter().enumerate() {
                    if dist2(*p, center) <= r2 {
                        candidates.push(i);
                    }
                }
            }
        }
        let slots = &mut member_indices[mi * k..(mi + 1) * k];
        if candidates.is_empty() {
            // Empty region: one synthesized member at the centroid with
            // zero features, repeated across all slots.
            valid_counts[mi] = 1;
            continue;
        }
        if candidates.len() <= k {
            valid_counts[mi] = candidates.len();
            slots[..candidates.len()].copy_from_slice(&candidates);
            for slot in slots.iter_mut().skip(candidates.len()) {
                *slot = candidates[rng.gen_range(0..candidates.len())];
            }
        } else {
            // Partial Fisher-Yates: the first k entries are a uniform
            // sample without replacement, in shuffled order.
            valid_counts[mi] = k;
            for j in 0..k {
                let pick = rng.gen_range(j..candidates.len());
                candidates.swap(j, pick);
            }
            slots.copy_from_slice(&candidates[..k]);
        }
        let lc = &mut local_coords.data_mut()[mi * k * 3..(mi + 1) * k * 3];
        let lf = &mut local_feats.data_mut()[mi * k * c..(mi + 1) * k * c];
        for (slot, &pi) in slots.iter().enumerate() {
            let p = pc.coords()[pi];
            lc[slot * 3] = (p[0] - center[0]) * inv_scale;
            lc[slot * 3 + 1] = (p[1] - center[1]) * inv_scale;
            lc[slot * 3 + 2] = (p[2] - center[2]) * inv_scale;
            let row = &pc.feats().data()[pi * c..(pi + 1) * c];
            lf[slot * c..(slot + 1) * c].copy_from_slice(row);
        }
    }
    Ok(LocalRegionBatch {
        centroids: centroids.to_vec(),
        local_coords,
        local_feats,
        valid_counts,
        member_indices,
    })
}
