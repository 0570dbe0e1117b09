//! Farthest point sampling against a brute-force oracle that recomputes
//! every candidate's minimum distance to the selected set at each step,
//! plus the coverage property that motivates FPS in the first place.

use lgr_core::geometry::{farthest_point_sample, farthest_point_sample_from};
use lgr_core::rng::seeded_rng;
use rand::Rng;

/// Greedy max-min selection, recomputed from scratch each step: for each
/// unselected candidate, find its distance to the nearest selected
/// point; pick the candidate maximizing that, lowest index on ties.
fn oracle_fps(coords: &[[f64; 3]], n_out: usize, first: usize) -> Vec<usize> {
    let mut selected = vec![first];
    while selected.len() < n_out {
        let mut best: Option<(f64, usize)> = None;
        for i in 0..coords.len() {
            if selected.contains(&i) {
                continue;
            }
            let min_d = selected
                .iter()
                .map(|&s| {
                    let d = [
                        coords[i][0] - coords[s][0],
                        coords[i][1] - coords[s][1],
                        coords[i][2] - coords[s][2],
                    ];
                    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
                })
                .fold(f64::INFINITY, f64::min);
            let better = match best {
                None => true,
                Some((bd, _)) => min_d > bd,
            };
            if better {
                best = Some((min_d, i));
            }
        }
        selected.push(best.expect("candidates remain").1);
    }
    selected
}

fn random_cloud(n: usize, rng: &mut impl Rng, with_duplicates: bool) -> Vec<[f64; 3]> {
    let mut coords: Vec<[f64; 3]> = (0..n)
        .map(|_| {
            [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]
        })
        .collect();
    if with_duplicates && n >= 4 {
        coords[n - 1] = coords[0];
        coords[n - 2] = coords[1];
    }
    coords
}

fn min_pairwise(coords: &[[f64; 3]], idx: &[usize]) -> f64 {
    let mut best = f64::INFINITY;
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            let d = [
                coords[i][0] - coords[j][0],
                coords[i][1] - coords[j][1],
                coords[i][2] - coords[j][2],
            ];
            best = best.min((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt());
        }
    }
    best
}

#[test]
fn matches_brute_force_oracle_exhaustively() {
    for seed in 0..200u64 {
        let mut rng = seeded_rng(seed.wrapping_mul(0x9e37_79b9));
        let n = rng.gen_range(2..=64);
        let coords = random_cloud(n, &mut rng, seed % 5 == 0);
        let n_out = rng.gen_range(1..=n);
        let got = farthest_point_sample(&coords, n_out, seed).unwrap();
        let oracle = oracle_fps(&coords, n_out, got[0]);
        assert_eq!(got, oracle, "seed {seed}, n {n}, n_out {n_out}");
    }
}

#[test]
fn forced_first_pick_matches_oracle() {
    let mut rng = seeded_rng(5);
    let coords = random_cloud(16, &mut rng, false);
    for first in 0..16 {
        let got = farthest_point_sample_from(&coords, 4, first).unwrap();
        assert_eq!(got, oracle_fps(&coords, 4, first));
    }
}

#[test]
fn spreads_better_than_random_subsets() {
    // On 256-point clouds, the FPS subset's minimum pairwise distance
    // beats a uniform random subset of the same size in at least 95% of
    // 200 trials.
    let mut wins = 0usize;
    let trials = 200usize;
    for trial in 0..trials as u64 {
        let mut rng = seeded_rng(0xabcd ^ trial);
        let coords = random_cloud(256, &mut rng, false);
        let n_out = 32;
        let fps = farthest_point_sample(&coords, n_out, trial).unwrap();
        // Uniform subset: shuffle indices, take a prefix.
        let mut idx: Vec<usize> = (0..coords.len()).collect();
        for i in (1..idx.len()).rev() {
            let j = rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        let random = &idx[..n_out];
        if min_pairwise(&coords, &fps) >= min_pairwise(&coords, random) {
            wins += 1;
        }
    }
    assert!(
        wins * 100 >= trials * 95,
        "fps beat random spacing in only {wins}/{trials} trials"
    );
}
