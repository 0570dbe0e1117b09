//! Finite-difference verification of every gradient path: rendering
//! (features exactly, coordinates numerically), the layer stack as a
//! composed chain, and the full stage from point cloud to pooled
//! features.

use lgr_core::backbone::{SpConfig, SpModule};
use lgr_core::geometry::{LocalRegionBatch, QueryKind};
use lgr_core::lgr::{render, render_backward, GridSpec};
use lgr_core::nncore::{max_pool_middle, BatchNorm, Conv3d, Linear, Relu, Tensor};
use lgr_core::rng::seeded_rng;
use rand::Rng;

const H: f64 = 1e-6;

/// Members at least `margin` from every kernel cutoff and voxel center,
/// in unit-ball terms, so finite differences never cross the kink.
fn safe_batch(
    regions: usize,
    k: usize,
    c: usize,
    spec: &GridSpec,
    seed: u64,
    margin: f64,
) -> LocalRegionBatch<f64> {
    let voxels = lgr_core::lgr::voxel_coordinates::<f64>(spec);
    let mut rng = seeded_rng(seed);
    let mut coords = Vec::with_capacity(regions * k * 3);
    let mut feats = Vec::with_capacity(regions * k * c);
    'member: while coords.len() < regions * k * 3 {
        let p = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        for v in voxels.data().chunks_exact(3) {
            let m = ((p[0] - v[0]).powi(2) + (p[1] - v[1]).powi(2) + (p[2] - v[2]).powi(2))
                .sqrt();
            if (m - spec.radius).abs() < margin || m < margin {
                continue 'member;
            }
        }
        coords.extend_from_slice(&p);
        for _ in 0..c {
            feats.push(rng.gen_range(-2.0..2.0));
        }
    }
    LocalRegionBatch {
        centroids: vec![[0.0; 3]; regions],
        local_coords: Tensor::from_vec(&[regions, k, 3], coords).unwrap(),
        local_feats: Tensor::from_vec(&[regions, k, c], feats).unwrap(),
        valid_counts: vec![k; regions],
        member_indices: (0..regions * k).collect(),
    }
}

fn weighted_sum(values: &Tensor<f64>, weights: &[f64]) -> f64 {
    values.data().iter().zip(weights).map(|(&v, &w)| v * w).sum()
}

#[test]
fn feature_gradients_equal_analytic_weight_ratios() {
    let spec = GridSpec::cube(5);
    let batch = safe_batch(3, 6, 2, &spec, 11, 1e-4);
    let out = render(&batch, &spec).unwrap();
    let mut rng = seeded_rng(99);
    let up_data: Vec<f64> = (0..out.values.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let upstream = Tensor::from_vec(&[3, 5, 5, 5, 2], up_data.clone()).unwrap();
    let (dfeats, _) = render_backward(&batch, &spec, &out, &upstream).unwrap();

    // Oracle: full kernel table per region, then
    // dfeat[j][ch] = sum over voxels of upstream * k_j / sum_j' k_j'.
    let voxels = lgr_core::lgr::voxel_coordinates::<f64>(&spec);
    let nv = spec.voxels();
    for m in 0..3 {
        let coords = batch.region_coords(m);
        let mut table = vec![0.0; 6 * nv];
        for j in 0..6 {
            let p = &coords[j * 3..(j + 1) * 3];
            for (vi, v) in voxels.data().chunks_exact(3).enumerate() {
                let d = ((p[0] - v[0]).powi(2) + (p[1] - v[1]).powi(2)
                    + (p[2] - v[2]).powi(2))
                .sqrt();
                table[j * nv + vi] = (1.0 - d / spec.radius).max(0.0);
            }
        }
        for j in 0..6 {
            for ch in 0..2 {
                let mut want = 0.0;
                for vi in 0..nv {
                    let den: f64 = (0..6).map(|jj| table[jj * nv + vi]).sum();
                    if den > 0.0 && table[j * nv + vi] > 0.0 {
                        let up = up_data[(m * nv + vi) * 2 + ch];
                        want += up * table[j * nv + vi] / den;
                    }
                }
                let got = dfeats.data()[(m * 6 + j) * 2 + ch];
                assert!(
                    (got - want).abs() <= 1e-9,
                    "region {m} member {j} ch {ch}: {got} vs {want}"
                );
            }
        }
    }
}

#[test]
fn coordinate_gradients_match_finite_differences() {
    for (power, seed) in [(1.0, 21), (2.0, 22), (1.7, 23)] {
        let spec = GridSpec { power, ..GridSpec::cube(5) };
        // Probes stay 10H from kernel cutoffs so the central difference
        // never straddles the support boundary.
        let batch = safe_batch(2, 5, 2, &spec, seed, 10.0 * H);
        let out = render(&batch, &spec).unwrap();
        let mut rng = seeded_rng(seed ^ 0xff);
        let weights: Vec<f64> =
            (0..out.values.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let upstream = Tensor::from_vec(&[2, 5, 5, 5, 2], weights.clone()).unwrap();
        let (_, dcoords) = render_backward(&batch, &spec, &out, &upstream).unwrap();

        for slot in 0..2 * 5 {
            for axis in 0..3 {
                let mut plus = batch.local_coords.clone();
                plus.data_mut()[slot * 3 + axis] += H;
                let mut minus = batch.local_coords.clone();
                minus.data_mut()[slot * 3 + axis] -= H;
                let bp = LocalRegionBatch {
                    centroids: batch.centroids.clone(),
                    local_coords: plus,
                    local_feats: batch.local_feats.clone(),
                    valid_counts: batch.valid_counts.clone(),
                    member_indices: batch.member_indices.clone(),
                };
                let bm = LocalRegionBatch {
                    centroids: batch.centroids.clone(),
                    local_coords: minus,
                    local_feats: batch.local_feats.clone(),
                    valid_counts: batch.valid_counts.clone(),
                    member_indices: batch.member_indices.clone(),
                };
                let lp = weighted_sum(&render(&bp, &spec).unwrap().values, &weights);
                let lm = weighted_sum(&render(&bm, &spec).unwrap().values, &weights);
                let fd = (lp - lm) / (2.0 * H);
                let an = dcoords.data()[slot * 3 + axis];
                assert!(
                    (fd - an).abs() <= 1e-3 * (1.0 + fd.abs()),
                    "power {power} slot {slot} axis {axis}: fd {fd} vs {an}"
                );
            }
        }
    }
}

/// Composed chain conv -> bn -> relu -> max pool -> linear with loss
/// 0.5 * sum(out^2); every parameter and the input are probed.
#[test]
fn layer_chain_matches_finite_differences() {
    let mut rng = seeded_rng(31);
    let mut conv = Conv3d::<f64>::new(2, 3, 3, &mut rng).unwrap();
    let mut bn = BatchNorm::<f64>::new(3).unwrap();
    let mut relu = Relu::new();
    let mut lin = Linear::<f64>::new(3, 2, &mut rng).unwrap();
    let mut x = Tensor::zeros(&[2, 3, 3, 3, 2]);
    {
        let mut xr = seeded_rng(32);
        x.data_mut().iter_mut().for_each(|v| *v = xr.gen_range(-1.0..1.0));
    }

    // Analytic pass: forward with caches, backward through the chain.
    for t in conv
        .trainable_mut()
        .into_iter()
        .chain(bn.trainable_mut())
        .chain(lin.trainable_mut())
    {
        t.zero_grad();
    }
    let a = conv.forward(&x, true).unwrap();
    let b = bn.forward(&a, true).unwrap();
    let c = relu.forward(&b, true);
    let (p, cache) = max_pool_middle(&c).unwrap();
    let out = lin.forward(&p, true).unwrap();
    let d_lin = lin.backward(&out).unwrap();
    let d_pool = lgr_core::nncore::max_pool_middle_backward(&cache, &d_lin).unwrap();
    let d_relu = relu.backward(&d_pool).unwrap();
    let d_bn = bn.backward(&d_relu).unwrap();
    let d_x = conv.backward(&d_bn).unwrap();

    // Forward-only loss for finite-difference probes (train mode so the
    // batch-statistics path matches the analytic pass).
    let run = |conv: &mut Conv3d<f64>,
               bn: &mut BatchNorm<f64>,
               relu: &mut Relu,
               lin: &mut Linear<f64>,
               x: &Tensor<f64>|
     -> f64 {
        let a = conv.forward(x, true).unwrap();
        let b = bn.forward(&a, true).unwrap();
        let c = relu.forward(&b, true);
        let (p, _) = max_pool_middle(&c).unwrap();
        let out = lin.forward(&p, true).unwrap();
        0.5 * out.data().iter().map(|v| v * v).sum::<f64>()
    };

    // Collect analytic values, then probe by central differences.
    let mut probes: Vec<(String, usize, f64)> = Vec::new();
    let mut pr = seeded_rng(33);
    for (name, t) in conv
        .named_mut("conv")
        .into_iter()
        .chain(bn.named_mut("bn"))
        .chain(lin.named_mut("lin"))
    {
        if name.contains("running") {
            continue;
        }
        for _ in 0..6 {
            let i = pr.gen_range(0..t.numel());
            probes.push((name.clone(), i, t.grad()[i]));
        }
    }
    for (name, i, analytic) in probes {
        let place = |conv: &mut Conv3d<f64>,
                     bn: &mut BatchNorm<f64>,
                     lin: &mut Linear<f64>,
                     delta: f64| {
            for (n, t) in conv
                .named_mut("conv")
                .into_iter()
                .chain(bn.named_mut("bn"))
                .chain(lin.named_mut("lin"))
            {
                if n == name {
                    t.data_mut()[i] += delta;
                }
            }
        };
        place(&mut conv, &mut bn, &mut lin, H);
        let lp = run(&mut conv, &mut bn, &mut relu, &mut lin, &x);
        place(&mut conv, &mut bn, &mut lin, -2.0 * H);
        let lm = run(&mut conv, &mut bn, &mut relu, &mut lin, &x);
        place(&mut conv, &mut bn, &mut lin, H);
        let fd = (lp - lm) / (2.0 * H);
        assert!(
            (fd - analytic).abs() <= 1e-3 * (1.0 + fd.abs()),
            "{name}[{i}]: fd {fd} vs analytic {analytic}"
        );
    }

    // Input gradient probes.
    let mut ir = seeded_rng(34);
    for _ in 0..10 {
        let i = ir.gen_range(0..x.numel());
        let mut xp = x.clone();
        xp.data_mut()[i] += H;
        let lp = run(&mut conv, &mut bn, &mut relu, &mut lin, &xp);
        let mut xm = x.clone();
        xm.data_mut()[i] -= H;
        let lm = run(&mut conv, &mut bn, &mut relu, &mut lin, &xm);
        let fd = (lp - lm) / (2.0 * H);
        let an = d_x.data()[i];
        assert!(
            (fd - an).abs() <= 1e-3 * (1.0 + fd.abs()),
            "input[{i}]: fd {fd} vs analytic {an}"
        );
    }
}

/// End-to-end stage: point cloud to pooled features, loss on the first
/// conv's weights via rendering and the CNN, against finite differences.
#[test]
fn stage_micro_network_matches_finite_differences() {
    let cfg = SpConfig {
        num_regions: 2,
        half_edge: 0.6,
        neighbors: 4,
        conv_channels: (3, 4),
        kernel: 3,
        layers: 2,
        query: QueryKind::Cube,
        grid: GridSpec::cube(3),
    };
    let mut rng = seeded_rng(41);
    let mut sp = SpModule::<f64>::new(cfg, 1, &mut rng).unwrap();
    let mut cr = seeded_rng(42);
    let coords: Vec<[f64; 3]> = (0..16)
        .map(|_| {
            [
                cr.gen_range(-1.0..1.0),
                cr.gen_range(-1.0..1.0),
                cr.gen_range(-1.0..1.0),
            ]
        })
        .collect();
    let feats =
        Tensor::from_vec(&[16, 1], coords.iter().map(|p| p[2] + 1.0).collect()).unwrap();

    let loss_of = |sp: &mut SpModule<f64>| -> (f64, Tensor<f64>) {
        let (_, out) = sp.forward(&coords, &feats, 7, true).unwrap();
        let loss = 0.5 * out.data().iter().map(|v| v * v).sum::<f64>();
        (loss, out)
    };

    for t in sp.trainable_mut() {
        t.zero_grad();
    }
    let (_, out) = loss_of(&mut sp);
    sp.backward(&out).unwrap();
    let (grads, numel) = {
        let named = sp.named_mut("sp");
        let w = named.iter().find(|(n, _)| n.as_str() == "sp.conv1.weight").unwrap();
        (w.1.grad().to_vec(), w.1.numel())
    };
    assert!(grads.iter().any(|&g| g.abs() > 1e-12), "stage gradient vanished");

    let mut pr = seeded_rng(43);
    for _ in 0..10 {
        let i = pr.gen_range(0..numel);
        let bump = |sp: &mut SpModule<f64>, delta: f64| {
            let mut named = sp.named_mut("sp");
            let w =
                named.iter_mut().find(|(n, _)| n.as_str() == "sp.conv1.weight").unwrap();
            w.1.data_mut()[i] += delta;
        };
        bump(&mut sp, H);
        let (lp, _) = loss_of(&mut sp);
        bump(&mut sp, -2.0 * H);
        let (lm, _) = loss_of(&mut sp);
        bump(&mut sp, H);
        let fd = (lp - lm) / (2.0 * H);
        let an = grads[i];
        assert!(
            (fd - an).abs() <= 1e-2 * (1.0 + fd.abs()),
            "conv1.weight[{i}]: fd {fd} vs analytic {an}"
        );
    }
}
