//! Rendering equivalence against an independently written double-loop
//! oracle: per voxel, walk every member, accumulate kernel-weighted
//! features, and normalize. The production renderer scatters point-major
//! with windowed voxel visits; agreement to 1e-9 checks both the math
//! and the window bookkeeping.

use lgr_core::geometry::LocalRegionBatch;
use lgr_core::lgr::{render, Aggregation, GridSpec};
use lgr_core::nncore::Tensor;
use lgr_core::rng::seeded_rng;
use rand::Rng;

/// Direct transcription of the rendering definition: kernel weights over
/// every member for every voxel, no windowing, no fast paths.
fn naive_render(
    coords: &[f64],
    feats: &[f64],
    k: usize,
    c: usize,
    spec: &GridSpec,
) -> Vec<f64> {
    let axis = |n: usize, i: usize| -> f64 {
        if n == 1 {
            0.0
        } else {
            -1.0 + 2.0 * i as f64 / (n - 1) as f64
        }
    };
    let (w, h, l) = (spec.width, spec.height, spec.length);
    let mut out = vec![0.0; w * h * l * c];
    for ix in 0..w {
        for iy in 0..h {
            for iz in 0..l {
                let v = [axis(w, ix), axis(h, iy), axis(l, iz)];
                let mut num = vec![0.0; c];
                let mut den = 0.0;
                let mut avg_count = 0usize;
                let mut best: Option<(f64, usize)> = None;
                for j in 0..k {
                    let p = &coords[j * 3..(j + 1) * 3];
                    let m = ((p[0] - v[0]).powi(2)
                        + (p[1] - v[1]).powi(2)
                        + (p[2] - v[2]).powi(2))
                    .sqrt();
                    let kw = 1.0 - (m / spec.radius).powf(spec.power);
                    let kw = if kw > 0.0 { kw } else { 0.0 };
                    if kw > 0.0 {
                        den += kw;
                        avg_count += 1;
                        for ch in 0..c {
                            match spec.aggregation {
                                Aggregation::Interpolation => {
                                    num[ch] += kw * feats[j * c + ch]
                                }
                                Aggregation::AvgPool => num[ch] += feats[j * c + ch],
                                Aggregation::NearestNeighbor => {}
                            }
                        }
                        if best.map_or(true, |(bm, _)| m < bm) {
                            best = Some((m, j));
                        }
                    }
                }
                let cell = ((ix * h + iy) * l + iz) * c;
                for ch in 0..c {
                    out[cell + ch] = match spec.aggregation {
                        Aggregation::Interpolation => {
                            if den > 0.0 {
                                num[ch] / den
                            } else {
                                0.0
                            }
                        }
                        Aggregation::AvgPool => {
                            if avg_count > 0 {
                                num[ch] / avg_count as f64
                            } else {
                                0.0
                            }
                        }
                        Aggregation::NearestNeighbor => {
                            best.map_or(0.0, |(_, j)| feats[j * c + ch])
                        }
                    };
                }
            }
        }
    }
    out
}

fn random_batch(
    regions: usize,
    k: usize,
    c: usize,
    seed: u64,
) -> (LocalRegionBatch<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = seeded_rng(seed);
    let mut coords = Vec::with_capacity(regions * k * 3);
    let mut feats = Vec::with_capacity(regions * k * c);
    for _ in 0..regions * k {
        // Slightly beyond the normalized cube so some members fall
        // outside every kernel's support.
        for _ in 0..3 {
            coords.push(rng.gen_range(-1.1..1.1));
        }
        for _ in 0..c {
            feats.push(rng.gen_range(-3.0..3.0));
        }
    }
    let batch = LocalRegionBatch {
        centroids: vec![[0.0; 3]; regions],
        local_coords: Tensor::from_vec(&[regions, k, 3], coords.clone()).unwrap(),
        local_feats: Tensor::from_vec(&[regions, k, c], feats.clone()).unwrap(),
        valid_counts: vec![k; regions],
        member_indices: (0..regions * k).collect(),
    };
    (batch, coords, feats)
}

fn check_equivalence(spec: &GridSpec, seed: u64, regions: usize, k: usize, c: usize) {
    let (batch, coords, feats) = random_batch(regions, k, c, seed);
    let out = render(&batch, spec).unwrap();
    let per_region = spec.voxels() * c;
    for m in 0..regions {
        let oracle = naive_render(
            &coords[m * k * 3..(m + 1) * k * 3],
            &feats[m * k * c..(m + 1) * k * c],
            k,
            c,
            spec,
        );
        let got = &out.values.data()[m * per_region..(m + 1) * per_region];
        for (i, (&a, &b)) in got.iter().zip(&oracle).enumerate() {
            assert!(
                (a - b).abs() <= 1e-9,
                "seed {seed} region {m} entry {i}: {a} vs oracle {b}"
            );
        }
    }
}

#[test]
fn interpolation_matches_naive_oracle() {
    let spec = GridSpec::cube(5);
    for seed in 0..10 {
        check_equivalence(&spec, seed, 10, 33, 4);
    }
}

#[test]
fn all_aggregations_match_on_varied_grids() {
    for agg in [
        Aggregation::Interpolation,
        Aggregation::AvgPool,
        Aggregation::NearestNeighbor,
    ] {
        let mut spec = GridSpec::cube(5);
        spec.aggregation = agg;
        check_equivalence(&spec, 42, 8, 16, 3);
        // Anisotropic grid with a wider radius and a fractional power.
        let mut spec = GridSpec {
            width: 3,
            height: 4,
            length: 5,
            radius: 0.9,
            power: 1.7,
            aggregation: agg,
        };
        check_equivalence(&spec, 43, 6, 20, 2);
        spec.power = 2.0;
        spec.radius = 0.25;
        check_equivalence(&spec, 44, 6, 20, 2);
    }
}

#[test]
fn single_member_regions_match() {
    let spec = GridSpec::cube(5);
    check_equivalence(&spec, 7, 20, 1, 5);
}

#[test]
fn padded_duplicate_members_match() {
    // Duplicating a member changes interpolation not at all and the
    // oracle handles the repetition identically.
    let mut spec = GridSpec::cube(4);
    spec.aggregation = Aggregation::AvgPool;
    let (mut batch, mut coords, mut feats) = random_batch(4, 6, 2, 9);
    // Overwrite the last two slots of each region with copies of slot 0.
    for m in 0..4 {
        for slot in 4..6 {
            for a in 0..3 {
                let src = coords[(m * 6) * 3 + a];
                coords[(m * 6 + slot) * 3 + a] = src;
            }
            for ch in 0..2 {
                let src = feats[(m * 6) * 2 + ch];
                feats[(m * 6 + slot) * 2 + ch] = src;
            }
        }
    }
    batch.local_coords = Tensor::from_vec(&[4, 6, 3], coords.clone()).unwrap();
    batch.local_feats = Tensor::from_vec(&[4, 6, 2], feats.clone()).unwrap();
    let out = render(&batch, &spec).unwrap();
    for m in 0..4 {
        let oracle = naive_render(
            &coords[m * 6 * 3..(m + 1) * 6 * 3],
            &feats[m * 6 * 2..(m + 1) * 6 * 2],
            6,
            2,
            &spec,
        );
        let got = &out.values.data()[m * spec.voxels() * 2..(m + 1) * spec.voxels() * 2];
        for (&a, &b) in got.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
}
