//! Local grid rendering: rasterizes a normalized local point set onto a
//! small dense voxel grid.
//!
//! Voxel centers are uniformly spaced over `[-1, 1]^3` including the
//! endpoints. Each point spreads its feature row onto nearby voxels
//! through the truncated kernel `k(m) = max(0, 1 - (m/r)^p)` of Euclidean
//! distance `m`; a voxel's value is the kernel-weighted average of the
//! contributing features (interpolation), their plain average (avg
//! pooling), or the nearest contributor's features (nearest neighbor).
//! Voxels no point reaches are exactly zero.
//!
//! The renderer walks points and touches only the voxel window within
//! kernel range, so cost scales with occupancy rather than grid volume.

use std::str::FromStr;

use crate::geometry::LocalRegionBatch;
use crate::nncore::Tensor;
use crate::{invalid_arg, invalid_state, Error, Result, Scalar};

/// How contributions within kernel range combine into a voxel value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregation {
    /// Kernel-weighted average; differentiable in both features and
    /// coordinates. The default.
    Interpolation,
    /// Unweighted mean over contributors; feature gradients only.
    AvgPool,
    /// Features of the closest contributor, ties to the lowest member
    /// slot; feature gradients only.
    NearestNeighbor,
}

impl Aggregation {
    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Interpolation => "interpolation",
            Aggregation::AvgPool => "avg_pool",
            Aggregation::NearestNeighbor => "nearest_neighbor",
        }
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interpolation" => Ok(Aggregation::Interpolation),
            "avg_pool" => Ok(Aggregation::AvgPool),
            "nearest_neighbor" => Ok(Aggregation::NearestNeighbor),
            other => Err(invalid_arg!(
                "unknown aggregation {other:?} (interpolation, avg_pool, nearest_neighbor)"
            )),
        }
    }
}

/// Grid geometry and kernel parameters for rendering.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub length: usize,
    /// Kernel cutoff radius in normalized units.
    pub radius: f64,
    /// Kernel exponent; >= 1 required for coordinate gradients.
    pub power: f64,
    pub aggregation: Aggregation,
}

impl GridSpec {
    /// Cubic grid with the default radius (half the voxel cell diagonal),
    /// power 1, interpolation.
    pub fn cube(resolution: usize) -> Self {
        GridSpec {
            width: resolution,
            height: resolution,
            length: resolution,
            radius: Self::default_radius(resolution, resolution, resolution),
            power: 1.0,
            aggregation: Aggregation::Interpolation,
        }
    }

    /// Half the diagonal of one voxel cell: every point lies within
    /// kernel range of at least one voxel center, and an interior point
    /// reaches only its immediate neighborhood.
    pub fn default_radius(width: usize, height: usize, length: usize) -> f64 {
        let sq = |n: usize| {
            let s = 2.0 / (n as f64 - 1.0);
            s * s
        };
        0.5 * (sq(width) + sq(height) + sq(length)).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        for (axis, n) in [("width", self.width), ("height", self.height), ("length", self.length)]
        {
            if n < 2 {
                return Err(invalid_arg!("grid {axis} {n} must be at least 2"));
            }
        }
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(invalid_arg!("kernel radius {} must be positive", self.radius));
        }
        if !(self.power > 0.0) || !self.power.is_finite() {
            return Err(invalid_arg!("kernel power {} must be positive", self.power));
        }
        Ok(())
    }

    pub fn voxels(&self) -> usize {
        self.width * self.height * self.length
    }

    /// Voxel center positions along one axis of size `n`.
    pub fn axis_coords<S: Scalar>(n: usize) -> Vec<S> {
        let step = 2.0 / (n as f64 - 1.0);
        (0..n).map(|i| S::of(-1.0 + step * i as f64)).collect()
    }
}

/// Truncated distance kernel `max(0, 1 - (m/r)^p)`.
///
/// Exactly 1 at m = 0 and exactly 0 for m >= r. Integer powers 1 and 2
/// take multiply fast paths; both agree with `powf` to the last bit for
/// these exponents.
#[inline]
pub fn kernel<S: Scalar>(m: S, radius: S, power: f64) -> S {
    if m >= radius {
        return S::zero();
    }
    let t = m / radius;
    let tp = if power == 1.0 {
        t
    } else if power == 2.0 {
        t * t
    } else {
        t.powf(S::of(power))
    };
    let v = S::one() - tp;
    if v > S::zero() {
        v
    } else {
        S::zero()
    }
}

/// d kernel / d m, taken as 0 at m = 0 (kernel maximum) and for m >= r
/// (outside support): `-(p / r) * (m / r)^(p - 1)` in between.
#[inline]
pub fn kernel_derivative<S: Scalar>(m: S, radius: S, power: f64) -> S {
    if m <= S::zero() || m >= radius {
        return S::zero();
    }
    let t = m / radius;
    let tp = if power == 1.0 {
        S::one()
    } else if power == 2.0 {
        t + t
    } else {
        S::of(power) * t.powf(S::of(power - 1.0))
    };
    -tp / radius
}

/// Voxel center coordinates as a `[W, H, L, 3]` tensor.
pub fn voxel_coordinates<S: Scalar>(spec: &GridSpec) -> Tensor<S> {
    let xs = GridSpec::axis_coords::<S>(spec.width);
    let ys = GridSpec::axis_coords::<S>(spec.height);
    let zs = GridSpec::axis_coords::<S>(spec.length);
    let mut out = Tensor::zeros(&[spec.width, spec.height, spec.length, 3]);
    let od = out.data_mut();
    let mut i = 0;
    for &x in &xs {
        for &y in &ys {
            for &z in &zs {
                od[i] = x;
                od[i + 1] = y;
                od[i + 2] = z;
                i += 3;
            }
        }
    }
    out
}

/// Slot marker for voxels no contributor reaches (nearest neighbor).
const NO_WINNER: usize = usize::MAX;

/// Rendered grids plus what backward needs.
pub struct RenderedBatch<S: Scalar> {
    /// `[R, W, H, L, C]` voxel values, channels last.
    pub values: Tensor<S>,
    /// `[R, W, H, L]` per-voxel normalizers: kernel weight sums for
    /// interpolation, contributor counts for avg pooling, the winning
    /// kernel weight for nearest neighbor. Zero marks untouched voxels.
    pub weight_sums: Tensor<S>,
    /// Winning member slot per voxel (nearest neighbor only).
    winners: Option<Vec<usize>>,
    spec: GridSpec,
    members: usize,
}

impl<S: Scalar> RenderedBatch<S> {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }
}

/// Per-axis index window of voxel centers within `radius` of `pos`,
/// padded by one voxel on each side; the kernel cutoff makes the exact
/// boundary decision.
#[inline]
fn axis_window(pos: f64, radius: f64, n: usize) -> (usize, usize) {
    let step = 2.0 / (n as f64 - 1.0);
    let lo = ((pos - radius + 1.0) / step).floor() as isize - 1;
    let hi = ((pos + radius + 1.0) / step).ceil() as isize + 1;
    (lo.clamp(0, n as isize - 1) as usize, hi.clamp(0, n as isize - 1) as usize)
}

/// Renders every region onto its own grid.
pub fn render<S: Scalar>(
    regions: &LocalRegionBatch<S>,
    spec: &GridSpec,
) -> Result<RenderedBatch<S>> {
    spec.validate()?;
    let (r_count, k, c) =
        (regions.num_regions(), regions.members_per_region(), regions.channels());
    let (w, h, l) = (spec.width, spec.height, spec.length);
    let v = spec.voxels();
    let xs = GridSpec::axis_coords::<S>(w);
    let ys = GridSpec::axis_coords::<S>(h);
    let zs = GridSpec::axis_coords::<S>(l);
    let radius = S::of(spec.radius);

    let mut values = Tensor::zeros(&[r_count, w, h, l, c]);
    let mut weight_sums = Tensor::zeros(&[r_count, w, h, l]);
    let mut winners = if spec.aggregation == Aggregation::NearestNeighbor {
        vec![NO_WINNER; r_count * v]
    } else {
        Vec::new()
    };
    // Best (smallest) contributor distance per voxel, nearest neighbor.
    let mut best_m = if spec.aggregation == Aggregation::NearestNeighbor {
        vec![S::infinity(); v]
    } else {
        Vec::new()
    };

    for region in 0..r_count {
        let coords = regions.region_coords(region);
        let feats = regions.region_feats(region);
        let vals = &mut values.data_mut()[region * v * c..(region + 1) * v * c];
        let wsum = &mut weight_sums.data_mut()[region * v..(region + 1) * v];
        if spec.aggregation == Aggregation::NearestNeighbor {
            best_m.iter_mut().for_each(|m| *m = S::infinity());
        }
        for j in 0..k {
            let (px, py, pz) = (coords[j * 3], coords[j * 3 + 1], coords[j * 3 + 2]);
            let frow = &feats[j * c..(j + 1) * c];
            let (x0, x1) = axis_window(px.as_f64(), spec.radius, w);
            let (y0, y1) = axis_window(py.as_f64(), spec.radius, h);
            let (z0, z1) = axis_window(pz.as_f64(), spec.radius, l);
            for ix in x0..=x1 {
                let dx = px - xs[ix];
                for iy in y0..=y1 {
                    let dy = py - ys[iy];
                    for iz in z0..=z1 {
                        let dz = pz - zs[iz];
                        let m = (dx * dx + dy * dy + dz * dz).sqrt();
                        let weight = kernel(m, radius, spec.power);
                        if weight <= S::zero() {
                            continue;
                        }
                        let vi = (ix * h + iy) * l + iz;
                        match spec.aggregation {
                            Aggregation::Interpolation => {
                                wsum[vi] = wsum[vi] + weight;
                                let cell = &mut vals[vi * c..(vi + 1) * c];
                                for (o, &f) in cell.iter_mut().zip(frow) {
                                    *o = *o + weight * f;
                                }
                            }
                            Aggregation::AvgPool => {
                                wsum[vi] = wsum[vi] + S::one();
                                let cell = &mut vals[vi * c..(vi + 1) * c];
                                for (o, &f) in cell.iter_mut().zip(frow) {
                                    *o = *o + f;
                                }
                            }
                            Aggregation::NearestNeighbor => {
                                if m < best_m[vi] {
                                    best_m[vi] = m;
                                    winners[region * v + vi] = j;
                                    wsum[vi] = weight;
                                }
                            }
                        }
                    }
                }
            }
        }
        match spec.aggregation {
            // Divide accumulated sums in place; untouched voxels stay 0.
            Aggregation::Interpolation | Aggregation::AvgPool => {
                for vi in 0..v {
                    if wsum[vi] > S::zero() {
                        let cell = &mut vals[vi * c..(vi + 1) * c];
                        for o in cell.iter_mut() {
                            *o = *o / wsum[vi];
                        }
                    }
                }
            }
            Aggregation::NearestNeighbor => {
                for vi in 0..v {
                    let slot = winners[region * v + vi];
                    if slot != NO_WINNER {
                        vals[vi * c..(vi + 1) * c]
                            .copy_from_slice(&feats[slot * c..(slot + 1) * c]);
                    }
                }
            }
        }
    }
    Ok(RenderedBatch {
        values,
        weight_sums,
        winners: if spec.aggregation == Aggregation::NearestNeighbor {
            Some(winners)
        } else {
            None
        },
        spec: spec.clone(),
        members: k,
    })
}

/// Gradients of a rendered batch with respect to member features and,
/// for interpolation, member coordinates (zero tensors otherwise: avg
/// pooling and nearest neighbor route features only).
///
/// Returns `([R, K, C] feature grads, [R, K, 3] coordinate grads)`.
pub fn render_backward<S: Scalar>(
    regions: &LocalRegionBatch<S>,
    spec: &GridSpec,
    rendered: &RenderedBatch<S>,
    upstream: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    spec.validate()?;
    if rendered.spec != *spec {
        return Err(invalid_state!("rendered batch was produced by a different grid spec"));
    }
    let (r_count, k, c) =
        (regions.num_regions(), regions.members_per_region(), regions.channels());
    if rendered.members != k || rendered.values.shape()[0] != r_count {
        return Err(invalid_state!("rendered batch does not match the region batch"));
    }
    if upstream.shape() != rendered.values.shape() {
        return Err(invalid_state!(
            "upstream gradient shape {:?} does not match rendered values {:?}",
            upstream.shape(),
            rendered.values.shape()
        ));
    }
    if spec.aggregation == Aggregation::Interpolation && spec.power < 1.0 {
        return Err(invalid_arg!(
            "kernel power {} < 1 has unbounded coordinate gradients near contributors",
            spec.power
        ));
    }
    let (w, h, l) = (spec.width, spec.height, spec.length);
    let v = spec.voxels();
    let xs = GridSpec::axis_coords::<S>(w);
    let ys = GridSpec::axis_coords::<S>(h);
    let zs = GridSpec::axis_coords::<S>(l);
    let radius = S::of(spec.radius);

    let mut dfeats = Tensor::zeros(&[r_count, k, c]);
    let mut dcoords = Tensor::zeros(&[r_count, k, 3]);

    for region in 0..r_count {
        let coords = regions.region_coords(region);
        let feats = regions.region_feats(region);
        let vals = &rendered.values.data()[region * v * c..(region + 1) * v * c];
        let wsum = &rendered.weight_sums.data()[region * v..(region + 1) * v];
        let up = &upstream.data()[region * v * c..(region + 1) * v * c];
        let df = &mut dfeats.data_mut()[region * k * c..(region + 1) * k * c];
        match spec.aggregation {
            Aggregation::NearestNeighbor => {
                let winners = rendered.winners.as_ref().expect("nearest neighbor winners");
                for vi in 0..v {
                    let slot = winners[region * v + vi];
                    if slot == NO_WINNER {
                        continue;
                    }
                    let dst = &mut df[slot * c..(slot + 1) * c];
                    let src = &up[vi * c..(vi + 1) * c];
                    for (o, &g) in dst.iter_mut().zip(src) {
                        *o = *o + g;
                    }
                }
            }
            Aggregation::Interpolation | Aggregation::AvgPool => {
                let interp = spec.aggregation == Aggregation::Interpolation;
                let dc = &mut dcoords.data_mut()[region * k * 3..(region + 1) * k * 3];
                for j in 0..k {
                    let (px, py, pz) =
                        (coords[j * 3], coords[j * 3 + 1], coords[j * 3 + 2]);
                    let frow = &feats[j * c..(j + 1) * c];
                    let (x0, x1) = axis_window(px.as_f64(), spec.radius, w);
                    let (y0, y1) = axis_window(py.as_f64(), spec.radius, h);
                    let (z0, z1) = axis_window(pz.as_f64(), spec.radius, l);
                    for ix in x0..=x1 {
                        let dx = px - xs[ix];
                        for iy in y0..=y1 {
                            let dy = py - ys[iy];
                            for iz in z0..=z1 {
                                let dz = pz - zs[iz];
                                let m = (dx * dx + dy * dy + dz * dz).sqrt();
                                let weight = kernel(m, radius, spec.power);
                                if weight <= S::zero() {
                                    continue;
                                }
                                let vi = (ix * h + iy) * l + iz;
                                let den = wsum[vi];
                                let urow = &up[vi * c..(vi + 1) * c];
                                if interp {
                                    let ratio = weight / den;
                                    let dst = &mut df[j * c..(j + 1) * c];
                                    for (o, &g) in dst.iter_mut().zip(urow) {
                                        *o = *o + g * ratio;
                                    }
                                    // Chain rule through both the numerator
                                    // and the shared weight sum:
                                    // dI_c/dm = k'(m) (f_c - I_c) / den.
                                    let kd = kernel_derivative(m, radius, spec.power);
                                    if kd != S::zero() {
                                        let vrow = &vals[vi * c..(vi + 1) * c];
                                        let mut g_sum = S::zero();
                                        for ch in 0..c {
                                            g_sum = g_sum
                                                + urow[ch] * (frow[ch] - vrow[ch]);
                                        }
                                        let factor = g_sum * kd / (den * m);
                                        dc[j * 3] = dc[j * 3] + factor * dx;
                                        dc[j * 3 + 1] = dc[j * 3 + 1] + factor * dy;
                                        dc[j * 3 + 2] = dc[j * 3 + 2] + factor * dz;
                                    }
                                } else {
                                    let dst = &mut df[j * c..(j + 1) * c];
                                    for (o, &g) in dst.iter_mut().zip(urow) {
                                        *o = *o + g / den;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((dfeats, dcoords))
}
