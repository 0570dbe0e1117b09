//! Point-cloud backbone: four sampling-projection stages followed by two
//! feature-propagation layers.
//!
//! Each sampling-projection (SP) stage picks centroids by farthest point
//! sampling, groups fixed-size neighborhoods, renders every neighborhood
//! onto a small voxel grid, runs a two-layer 3D CNN per grid, and max
//! pools the grid into one feature row per centroid. Feature propagation
//! (FP) layers interpolate coarse features back onto denser centroid sets
//! with a skip connection, producing the seed set the detection head
//! consumes.
//!
//! Gradients flow through CNNs, rendering (feature path), grouping
//! scatter, and FP interpolation. Centroid selection and neighborhood
//! membership are index selections with no gradient; coordinate
//! gradients from rendering stop at the sampling boundary.

use rand_chacha::ChaCha8Rng;

use crate::geometry::{
    farthest_point_sample, query_regions, LocalRegionBatch, PointCloud, QueryKind, NO_MEMBER,
};
use crate::lgr::{render, render_backward, GridSpec, RenderedBatch};
use crate::nncore::{
    max_pool_middle, max_pool_middle_backward, BatchNorm, Conv3d, MaxPoolCache, Relu, Tensor,
};
use crate::rng::derive_seed;
use crate::scalar::dist2;
use crate::{invalid_arg, invalid_state, Result, Scalar};

/// Configuration of one sampling-projection stage.
#[derive(Clone, Debug)]
pub struct SpConfig {
    /// Centroids sampled by FPS.
    pub num_regions: usize,
    /// Neighborhood half edge in world units (cube side / 2); ball
    /// queries use the equal-volume radius derived from it.
    pub half_edge: f64,
    /// Member slots per neighborhood.
    pub neighbors: usize,
    /// Output channels of the stage's conv layers.
    pub conv_channels: (usize, usize),
    /// Conv kernel size (odd).
    pub kernel: usize,
    /// Conv layer count: 1 or 2.
    pub layers: usize,
    pub query: QueryKind,
    pub grid: GridSpec,
}

impl SpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_regions == 0 || self.neighbors == 0 {
            return Err(invalid_arg!("stage needs positive region and neighbor counts"));
        }
        if !(self.half_edge > 0.0) || !self.half_edge.is_finite() {
            return Err(invalid_arg!("stage half edge {} must be positive", self.half_edge));
        }
        if self.conv_channels.0 == 0 || self.conv_channels.1 == 0 {
            return Err(invalid_arg!("stage conv channels must be positive"));
        }
        if self.layers == 0 || self.layers > 2 {
            return Err(invalid_arg!("stage layer count {} must be 1 or 2", self.layers));
        }
        self.grid.validate()
    }

    /// Stage output feature width.
    pub fn out_channels(&self) -> usize {
        self.conv_channels.1
    }
}

/// Full backbone configuration.
#[derive(Clone, Debug)]
pub struct BackboneConfig {
    /// Input point feature channels (height only: 1).
    pub in_channels: usize,
    pub stages: Vec<SpConfig>,
    /// Widths of the two linear layers in each FP block.
    pub fp_channels: (usize, usize),
}

impl BackboneConfig {
    /// Reference architecture: 2048/1024/512/256 centroids with growing
    /// neighborhoods (0.15 / 0.3 / 0.6 / 1.0 half edges), 5^3 grids,
    /// 3^3 kernels, and 256-wide FP layers producing 1024 seeds.
    pub fn reference() -> Self {
        let stage = |num_regions, half_edge, neighbors, c1, c2| SpConfig {
            num_regions,
            half_edge,
            neighbors,
            conv_channels: (c1, c2),
            kernel: 3,
            layers: 2,
            query: QueryKind::Cube,
            grid: GridSpec::cube(5),
        };
        BackboneConfig {
            in_channels: 1,
            stages: vec![
                stage(2048, 0.15, 64, 64, 128),
                stage(1024, 0.30, 32, 128, 256),
                stage(512, 0.60, 16, 128, 256),
                stage(256, 1.00, 16, 128, 256),
            ],
            fp_channels: (256, 256),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 {
            return Err(invalid_arg!("backbone needs at least one input channel"));
        }
        if self.stages.len() != 4 {
            return Err(invalid_arg!(
                "backbone expects exactly 4 stages, got {}",
                self.stages.len()
            ));
        }
        for (i, s) in self.stages.iter().enumerate() {
            s.validate()
                .map_err(|e| invalid_arg!("stage {}: {e}", i + 1))?;
            if i > 0 && s.num_regions > self.stages[i - 1].num_regions {
                return Err(invalid_arg!(
                    "stage {} centroid count {} exceeds stage {}'s {}",
                    i + 1,
                    s.num_regions,
                    i,
                    self.stages[i - 1].num_regions
                ));
            }
        }
        if self.fp_channels.0 == 0 || self.fp_channels.1 == 0 {
            return Err(invalid_arg!("fp channels must be positive"));
        }
        Ok(())
    }

    /// Seed feature width produced by the backbone.
    pub fn seed_channels(&self) -> usize {
        self.fp_channels.1
    }

    /// Seed count: centroids of stage 2.
    pub fn seed_count(&self) -> usize {
        self.stages[1].num_regions
    }
}

/// One sampling-projection stage.
pub struct SpModule<S: Scalar> {
    cfg: SpConfig,
    in_channels: usize,
    convs: Vec<Conv3d<S>>,
    bns: Vec<BatchNorm<S>>,
    relus: Vec<Relu>,
    cache: Option<SpCache<S>>,
}

struct SpCache<S: Scalar> {
    regions: LocalRegionBatch<S>,
    rendered: RenderedBatch<S>,
    pool: MaxPoolCache,
    n_points: usize,
}

impl<S: Scalar> SpModule<S> {
    pub fn new(cfg: SpConfig, in_channels: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        if in_channels == 0 {
            return Err(invalid_arg!("stage needs at least one input channel"));
        }
        let (c1, c2) = cfg.conv_channels;
        let mut convs = Vec::new();
        let mut bns = Vec::new();
        let mut relus = Vec::new();
        if cfg.layers == 1 {
            convs.push(Conv3d::new(in_channels, c2, cfg.kernel, rng)?);
            bns.push(BatchNorm::new(c2)?);
            relus.push(Relu::new());
        } else {
            convs.push(Conv3d::new(in_channels, c1, cfg.kernel, rng)?);
            bns.push(BatchNorm::new(c1)?);
            relus.push(Relu::new());
            convs.push(Conv3d::new(c1, c2, cfg.kernel, rng)?);
            bns.push(BatchNorm::new(c2)?);
            relus.push(Relu::new());
        }
        Ok(SpModule { cfg, in_channels, convs, bns, relus, cache: None })
    }

    pub fn cfg(&self) -> &SpConfig {
        &self.cfg
    }

    /// FPS then grouping. Exposed separately so inspection and benchmarks
    /// can time the pieces; `forward` composes these.
    pub fn sample_and_group(
        &self,
        coords: &[[S; 3]],
        feats: &Tensor<S>,
        seed: u64,
    ) -> Result<(Vec<[S; 3]>, LocalRegionBatch<S>)> {
        if self.cfg.num_regions > coords.len() {
            return Err(invalid_arg!(
                "stage wants {} centroids from {} points",
                self.cfg.num_regions,
                coords.len()
            ));
        }
        let pc = PointCloud::new(coords.to_vec(), feats.clone())?;
        let idx =
            farthest_point_sample(coords, self.cfg.num_regions, derive_seed(seed, &[0]))?;
        let centroids: Vec<[S; 3]> = idx.iter().map(|&i| coords[i]).collect();
        let regions = query_regions(
            &pc,
            &centroids,
            self.cfg.query,
            self.cfg.half_edge,
            self.cfg.neighbors,
            derive_seed(seed, &[1]),
        )?;
        Ok((centroids, regions))
    }

    /// Renders grouped regions onto grids.
    pub fn render_regions(&self, regions: &LocalRegionBatch<S>) -> Result<RenderedBatch<S>> {
        render(regions, &self.cfg.grid)
    }

    /// Conv stack plus global max pool: `[R, W, H, L, C]` grids to
    /// `[R, out]` features.
    pub fn cnn_forward(&mut self, grids: &Tensor<S>, train: bool) -> Result<(Tensor<S>, MaxPoolCache)> {
        let mut x = grids.clone();
        for i in 0..self.convs.len() {
            x = self.convs[i].forward(&x, train)?;
            x = self.bns[i].forward(&x, train)?;
            x = self.relus[i].forward(&x, train);
        }
        let (pooled, pool) = max_pool_middle(&x)?;
        Ok((pooled, pool))
    }

    /// Full stage: sample, group, render, convolve, pool. Returns the
    /// centroids (world coordinates) and their features.
    pub fn forward(
        &mut self,
        coords: &[[S; 3]],
        feats: &Tensor<S>,
        seed: u64,
        train: bool,
    ) -> Result<(Vec<[S; 3]>, Tensor<S>)> {
        let (centroids, regions) = self.sample_and_group(coords, feats, seed)?;
        let rendered = self.render_regions(&regions)?;
        let (pooled, pool) = self.cnn_forward(&rendered.values, train)?;
        self.cache = if train {
            Some(SpCache { regions, rendered, pool, n_points: coords.len() })
        } else {
            None
        };
        Ok((centroids, pooled))
    }

    /// Propagates `[R, out]` gradients back to the previous point set's
    /// features `[N, C]`.
    pub fn backward(&mut self, dout: &Tensor<S>) -> Result<Tensor<S>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| invalid_state!("stage backward without train-mode forward"))?;
        let mut d = max_pool_middle_backward(&cache.pool, dout)?;
        for i in (0..self.convs.len()).rev() {
            d = self.relus[i].backward(&d)?;
            d = self.bns[i].backward(&d)?;
            d = self.convs[i].backward(&d)?;
        }
        let (dfeats, _dcoords) =
            render_backward(&cache.regions, &self.cfg.grid, &cache.rendered, &d)?;
        // Scatter member gradients back to source points. Padded slots
        // repeat a source point and accumulate; synthesized members of
        // empty regions have no source.
        let k = cache.regions.members_per_region();
        let c = self.in_channels;
        let mut dinput = Tensor::zeros(&[cache.n_points, c]);
        let dd = dinput.data_mut();
        for (slot, &pi) in cache.regions.member_indices.iter().enumerate() {
            if pi == NO_MEMBER {
                continue;
            }
            let src = &dfeats.data()[slot * c..(slot + 1) * c];
            let dst = &mut dd[pi * c..(pi + 1) * c];
            for (o, &g) in dst.iter_mut().zip(src) {
                *o = *o + g;
            }
        }
        debug_assert_eq!(dfeats.shape(), &[cache.regions.num_regions(), k, c]);
        Ok(dinput)
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor<S>)> {
        let mut out = Vec::new();
        for (i, (conv, bn)) in self.convs.iter_mut().zip(self.bns.iter_mut()).enumerate() {
            out.extend(conv.named_mut(&format!("{prefix}.conv{}", i + 1)));
            out.extend(bn.named_mut(&format!("{prefix}.bn{}", i + 1)));
        }
        out
    }

    /// See [`BatchNorm::freeze_stats`].
    pub fn freeze_norm_stats(&mut self) {
        for bn in &mut self.bns {
            bn.freeze_stats();
        }
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = Vec::new();
        for (conv, bn) in self.convs.iter_mut().zip(self.bns.iter_mut()) {
            out.extend(conv.trainable_mut());
            out.extend(bn.trainable_mut());
        }
        out
    }
}

/// Inverse-distance weights over up to three nearest sources.
pub struct InterpCache<S: Scalar> {
    /// `[Nd, 3]` source indices (repeats when fewer than 3 sources).
    indices: Vec<[usize; 3]>,
    /// `[Nd, 3]` normalized weights (zero on repeated pads).
    weights: Vec<[S; 3]>,
    src_len: usize,
}

/// Interpolates source features onto destination coordinates with
/// inverse-distance weights `1 / max(d, 1e-8)` over the three nearest
/// sources (all of them if fewer than three exist).
pub fn interpolate_3nn<S: Scalar>(
    src_coords: &[[S; 3]],
    src_feats: &Tensor<S>,
    dst_coords: &[[S; 3]],
) -> Result<(Tensor<S>, InterpCache<S>)> {
    if src_coords.is_empty() {
        return Err(invalid_arg!("interpolation needs at least one source point"));
    }
    let c = src_feats.shape()[1];
    if src_feats.shape() != [src_coords.len(), c] {
        return Err(invalid_arg!(
            "source features {:?} do not match {} source points",
            src_feats.shape(),
            src_coords.len()
        ));
    }
    let take = src_coords.len().min(3);
    let mut out = Tensor::zeros(&[dst_coords.len(), c]);
    let mut indices = vec![[0usize; 3]; dst_coords.len()];
    let mut weights = vec![[S::zero(); 3]; dst_coords.len()];
    for (di, &dst) in dst_coords.iter().enumerate() {
        // Three smallest distances by linear scan; ties keep the lower
        // source index.
        let mut best: [(S, usize); 3] = [(S::infinity(), NO_MEMBER); 3];
        for (si, &src) in src_coords.iter().enumerate() {
            let d = dist2(src, dst);
            if d < best[2].0 {
                best[2] = (d, si);
                if best[2].0 < best[1].0 {
                    best.swap(1, 2);
                }
                if best[1].0 < best[0].0 {
                    best.swap(0, 1);
                }
            }
        }
        let mut wsum = S::zero();
        let floor = S::of(1e-8);
        for slot in 0..take {
            let (d2, si) = best[slot];
            let d = d2.sqrt();
            let w = S::one() / if d > floor { d } else { floor };
            indices[di][slot] = si;
            weights[di][slot] = w;
            wsum = wsum + w;
        }
        for slot in take..3 {
            indices[di][slot] = indices[di][0];
            weights[di][slot] = S::zero();
        }
        let orow = &mut out.data_mut()[di * c..(di + 1) * c];
        for slot in 0..take {
            let w = weights[di][slot] / wsum;
            weights[di][slot] = w;
            let srow = &src_feats.data()[indices[di][slot] * c..indices[di][slot] * c + c];
            for (o, &f) in orow.iter_mut().zip(srow) {
                *o = *o + w * f;
            }
        }
    }
    Ok((out, InterpCache { indices, weights, src_len: src_coords.len() }))
}

/// Adjoint of `interpolate_3nn`: routes destination gradients back to the
/// sources with the cached weights.
pub fn interpolate_3nn_backward<S: Scalar>(
    cache: &InterpCache<S>,
    dout: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (nd, c) = dout.as_rows();
    if nd != cache.indices.len() {
        return Err(invalid_state!(
            "interpolation gradient has {nd} rows, cache has {}",
            cache.indices.len()
        ));
    }
    let mut dsrc = Tensor::zeros(&[cache.src_len, c]);
    let dd = dsrc.data_mut();
    for di in 0..nd {
        let drow = &dout.data()[di * c..(di + 1) * c];
        for slot in 0..3 {
            let w = cache.weights[di][slot];
            if w == S::zero() {
                continue;
            }
            let si = cache.indices[di][slot];
            let dst = &mut dd[si * c..(si + 1) * c];
            for (o, &g) in dst.iter_mut().zip(drow) {
                *o = *o + w * g;
            }
        }
    }
    Ok(dsrc)
}

/// Feature propagation: interpolate coarse features onto a denser
/// centroid set, concatenate that set's skip features, and refine with a
/// two-layer pointwise MLP.
pub struct FpLayer<S: Scalar> {
    lin1: crate::nncore::Linear<S>,
    bn1: BatchNorm<S>,
    relu1: Relu,
    lin2: crate::nncore::Linear<S>,
    bn2: BatchNorm<S>,
    relu2: Relu,
    src_channels: usize,
    skip_channels: usize,
    cache: Option<InterpCache<S>>,
}

impl<S: Scalar> FpLayer<S> {
    /// See [`BatchNorm::freeze_stats`].
    pub fn freeze_norm_stats(&mut self) {
        self.bn1.freeze_stats();
        self.bn2.freeze_stats();
    }

    pub fn new(
        src_channels: usize,
        skip_channels: usize,
        widths: (usize, usize),
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        Ok(FpLayer {
            lin1: crate::nncore::Linear::new(src_channels + skip_channels, widths.0, rng)?,
            bn1: BatchNorm::new(widths.0)?,
            relu1: Relu::new(),
            lin2: crate::nncore::Linear::new(widths.0, widths.1, rng)?,
            bn2: BatchNorm::new(widths.1)?,
            relu2: Relu::new(),
            src_channels,
            skip_channels,
            cache: None,
        })
    }

    pub fn forward(
        &mut self,
        src_coords: &[[S; 3]],
        src_feats: &Tensor<S>,
        dst_coords: &[[S; 3]],
        skip_feats: &Tensor<S>,
        train: bool,
    ) -> Result<Tensor<S>> {
        if src_feats.shape()[1] != self.src_channels {
            return Err(invalid_arg!(
                "fp source features have {} channels, layer expects {}",
                src_feats.shape()[1],
                self.src_channels
            ));
        }
        if skip_feats.shape() != [dst_coords.len(), self.skip_channels] {
            return Err(invalid_arg!(
                "fp skip features {:?} do not match {} destinations x {} channels",
                skip_feats.shape(),
                dst_coords.len(),
                self.skip_channels
            ));
        }
        let (interp, cache) = interpolate_3nn(src_coords, src_feats, dst_coords)?;
        // Concatenate [interpolated | skip] per destination row.
        let nd = dst_coords.len();
        let (cs, ck) = (self.src_channels, self.skip_channels);
        let mut x = Tensor::zeros(&[nd, cs + ck]);
        {
            let xd = x.data_mut();
            for d in 0..nd {
                xd[d * (cs + ck)..d * (cs + ck) + cs]
                    .copy_from_slice(&interp.data()[d * cs..(d + 1) * cs]);
                xd[d * (cs + ck) + cs..(d + 1) * (cs + ck)]
                    .copy_from_slice(&skip_feats.data()[d * ck..(d + 1) * ck]);
            }
        }
        let mut y = self.lin1.forward(&x, train)?;
        y = self.bn1.forward(&y, train)?;
        y = self.relu1.forward(&y, train);
        y = self.lin2.forward(&y, train)?;
        y = self.bn2.forward(&y, train)?;
        y = self.relu2.forward(&y, train);
        self.cache = if train { Some(cache) } else { None };
        Ok(y)
    }

    /// Returns `(source gradients, skip gradients)`.
    pub fn backward(&mut self, dout: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| invalid_state!("fp backward without train-mode forward"))?;
        let mut d = self.relu2.backward(dout)?;
        d = self.bn2.backward(&d)?;
        d = self.lin2.backward(&d)?;
        d = self.relu1.backward(&d)?;
        d = self.bn1.backward(&d)?;
        d = self.lin1.backward(&d)?;
        let (nd, total) = d.as_rows();
        let (cs, ck) = (self.src_channels, self.skip_channels);
        debug_assert_eq!(total, cs + ck);
        let mut dinterp = Tensor::zeros(&[nd, cs]);
        let mut dskip = Tensor::zeros(&[nd, ck]);
        for row in 0..nd {
            dinterp.data_mut()[row * cs..(row + 1) * cs]
                .copy_from_slice(&d.data()[row * total..row * total + cs]);
            dskip.data_mut()[row * ck..(row + 1) * ck]
                .copy_from_slice(&d.data()[row * total + cs..(row + 1) * total]);
        }
        let dsrc = interpolate_3nn_backward(&cache, &dinterp)?;
        Ok((dsrc, dskip))
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor<S>)> {
        let mut out = Vec::new();
        out.extend(self.lin1.named_mut(&format!("{prefix}.lin1")));
        out.extend(self.bn1.named_mut(&format!("{prefix}.bn1")));
        out.extend(self.lin2.named_mut(&format!("{prefix}.lin2")));
        out.extend(self.bn2.named_mut(&format!("{prefix}.bn2")));
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = Vec::new();
        out.extend(self.lin1.trainable_mut());
        out.extend(self.bn1.trainable_mut());
        out.extend(self.lin2.trainable_mut());
        out.extend(self.bn2.trainable_mut());
        out
    }
}

/// Seed points with features, the backbone's output.
pub struct SeedSet<S: Scalar> {
    pub coords: Vec<[S; 3]>,
    /// `[num_seeds, seed_channels]`.
    pub feats: Tensor<S>,
}

/// Centroid count and feature width per stage, recorded on forward.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageSummary {
    pub centroids: usize,
    pub channels: usize,
}

/// The full backbone.
pub struct Backbone<S: Scalar> {
    cfg: BackboneConfig,
    stages: Vec<SpModule<S>>,
    fp1: FpLayer<S>,
    fp2: FpLayer<S>,
    summaries: Vec<StageSummary>,
}

impl<S: Scalar> Backbone<S> {
    /// See [`BatchNorm::freeze_stats`].
    pub fn freeze_norm_stats(&mut self) {
        for stage in &mut self.stages {
            stage.freeze_norm_stats();
        }
        self.fp1.freeze_norm_stats();
        self.fp2.freeze_norm_stats();
    }

    pub fn new(cfg: BackboneConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let mut stages = Vec::with_capacity(4);
        let mut chan = cfg.in_channels;
        for sc in &cfg.stages {
            stages.push(SpModule::new(sc.clone(), chan, rng)?);
            chan = sc.out_channels();
        }
        let c3 = cfg.stages[2].out_channels();
        let c4 = cfg.stages[3].out_channels();
        let c2 = cfg.stages[1].out_channels();
        let fp1 = FpLayer::new(c4, c3, cfg.fp_channels, rng)?;
        let fp2 = FpLayer::new(cfg.fp_channels.1, c2, cfg.fp_channels, rng)?;
        Ok(Backbone { cfg, stages, fp1, fp2, summaries: Vec::new() })
    }

    pub fn cfg(&self) -> &BackboneConfig {
        &self.cfg
    }

    pub fn stage_mut(&mut self, i: usize) -> &mut SpModule<S> {
        &mut self.stages[i]
    }

    /// Stage sizes recorded by the most recent forward pass.
    pub fn summaries(&self) -> &[StageSummary] {
        &self.summaries
    }

    /// Runs the backbone. `feats` is `[N, in_channels]`; stage seeds
    /// derive from `seed` and the stage index, so a fixed seed fixes all
    /// sampling.
    pub fn forward(
        &mut self,
        coords: &[[S; 3]],
        feats: &Tensor<S>,
        seed: u64,
        train: bool,
    ) -> Result<SeedSet<S>> {
        if feats.shape() != [coords.len(), self.cfg.in_channels] {
            return Err(invalid_arg!(
                "backbone features {:?} do not match {} points x {} channels",
                feats.shape(),
                coords.len(),
                self.cfg.in_channels
            ));
        }
        self.summaries.clear();
        let (c1, f1) =
            self.stages[0].forward(coords, feats, derive_seed(seed, &[1]), train)?;
        let (c2, f2) =
            self.stages[1].forward(&c1, &f1, derive_seed(seed, &[2]), train)?;
        let (c3, f3) =
            self.stages[2].forward(&c2, &f2, derive_seed(seed, &[3]), train)?;
        let (c4, f4) =
            self.stages[3].forward(&c3, &f3, derive_seed(seed, &[4]), train)?;
        for (c, f) in [(&c1, &f1), (&c2, &f2), (&c3, &f3), (&c4, &f4)] {
            self.summaries.push(StageSummary { centroids: c.len(), channels: f.shape()[1] });
        }
        let g3 = self.fp1.forward(&c4, &f4, &c3, &f3, train)?;
        let g2 = self.fp2.forward(&c3, &g3, &c2, &f2, train)?;
        self.summaries.push(StageSummary { centroids: c2.len(), channels: g2.shape()[1] });
        Ok(SeedSet { coords: c2, feats: g2 })
    }

    /// Backpropagates seed feature gradients into all parameters. Input
    /// feature gradients are discarded at the first stage (inputs are
    /// data, not parameters).
    pub fn backward(&mut self, d_seed_feats: &Tensor<S>) -> Result<()> {
        let (d_g3, d_f2_fp) = self.fp2.backward(d_seed_feats)?;
        let (d_f4, d_f3_fp) = self.fp1.backward(&d_g3)?;
        let mut d_f3 = self.stages[3].backward(&d_f4)?;
        add_into(&mut d_f3, &d_f3_fp)?;
        let mut d_f2 = self.stages[2].backward(&d_f3)?;
        add_into(&mut d_f2, &d_f2_fp)?;
        let d_f1 = self.stages[1].backward(&d_f2)?;
        let _ = self.stages[0].backward(&d_f1)?;
        Ok(())
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out = Vec::new();
        for (i, sp) in self.stages.iter_mut().enumerate() {
            out.extend(sp.named_mut(&format!("net.sp{}", i + 1)));
        }
        out.extend(self.fp1.named_mut("net.fp1"));
        out.extend(self.fp2.named_mut("net.fp2"));
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = Vec::new();
        for sp in &mut self.stages {
            out.extend(sp.trainable_mut());
        }
        out.extend(self.fp1.trainable_mut());
        out.extend(self.fp2.trainable_mut());
        out
    }
}

fn add_into<S: Scalar>(dst: &mut Tensor<S>, src: &Tensor<S>) -> Result<()> {
    if dst.shape() != src.shape() {
        return Err(invalid_state!(
            "gradient shapes {:?} and {:?} disagree",
            dst.shape(),
            src.shape()
        ));
    }
    for (o, &g) in dst.data_mut().iter_mut().zip(src.data()) {
        *o = *o + g;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand::Rng;

    fn tiny_config() -> BackboneConfig {
        let stage = |num_regions, half_edge, neighbors| SpConfig {
            num_regions,
            half_edge,
            neighbors,
            conv_channels: (4, 6),
            kernel: 3,
            layers: 2,
            query: QueryKind::Cube,
            grid: GridSpec::cube(3),
        };
        BackboneConfig {
            in_channels: 1,
            stages: vec![
                stage(32, 0.2, 8),
                stage(16, 0.4, 8),
                stage(8, 0.8, 4),
                stage(4, 1.2, 4),
            ],
            fp_channels: (5, 7),
        }
    }

    fn random_cloud(n: usize, seed: u64) -> (Vec<[f64; 3]>, Tensor<f64>) {
        let mut rng = seeded_rng(seed);
        let coords: Vec<[f64; 3]> = (0..n)
            .map(|_| {
                [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.0..1.0f64),
                ]
            })
            .collect();
        let feats = Tensor::from_vec(
            &[n, 1],
            coords.iter().map(|p| p[2]).collect(),
        )
        .unwrap();
        (coords, feats)
    }

    #[test]
    fn reference_config_matches_stage_table() {
        let cfg = BackboneConfig::reference();
        cfg.validate().unwrap();
        let regions: Vec<usize> = cfg.stages.iter().map(|s| s.num_regions).collect();
        assert_eq!(regions, vec![2048, 1024, 512, 256]);
        let edges: Vec<f64> = cfg.stages.iter().map(|s| s.half_edge).collect();
        assert_eq!(edges, vec![0.15, 0.3, 0.6, 1.0]);
        let neighbors: Vec<usize> = cfg.stages.iter().map(|s| s.neighbors).collect();
        assert_eq!(neighbors, vec![64, 32, 16, 16]);
        let chans: Vec<(usize, usize)> =
            cfg.stages.iter().map(|s| s.conv_channels).collect();
        assert_eq!(chans, vec![(64, 128), (128, 256), (128, 256), (128, 256)]);
        assert_eq!(cfg.seed_count(), 1024);
        assert_eq!(cfg.seed_channels(), 256);
    }

    #[test]
    fn forward_produces_expected_shapes() {
        let cfg = tiny_config();
        let mut rng = seeded_rng(5);
        let mut net = Backbone::<f64>::new(cfg, &mut rng).unwrap();
        let (coords, feats) = random_cloud(64, 9);
        let seeds = net.forward(&coords, &feats, 42, false).unwrap();
        assert_eq!(seeds.coords.len(), 16);
        assert_eq!(seeds.feats.shape(), &[16, 7]);
        let sums: Vec<StageSummary> = net.summaries().to_vec();
        assert_eq!(
            sums,
            vec![
                StageSummary { centroids: 32, channels: 6 },
                StageSummary { centroids: 16, channels: 6 },
                StageSummary { centroids: 8, channels: 6 },
                StageSummary { centroids: 4, channels: 6 },
                StageSummary { centroids: 16, channels: 7 },
            ]
        );
    }

    #[test]
    fn forward_is_deterministic_and_seed_sensitive() {
        let cfg = tiny_config();
        let mut rng = seeded_rng(5);
        let mut net = Backbone::<f64>::new(cfg.clone(), &mut rng).unwrap();
        let (coords, feats) = random_cloud(64, 9);
        let a = net.forward(&coords, &feats, 42, false).unwrap();
        let b = net.forward(&coords, &feats, 42, false).unwrap();
        assert_eq!(a.feats.data(), b.feats.data());
        assert_eq!(a.coords, b.coords);
        let c = net.forward(&coords, &feats, 43, false).unwrap();
        assert_ne!(a.coords, c.coords);
    }

    #[test]
    fn train_backward_fills_every_parameter_gradient() {
        let cfg = tiny_config();
        let mut rng = seeded_rng(5);
        let mut net = Backbone::<f64>::new(cfg, &mut rng).unwrap();
        let (coords, feats) = random_cloud(64, 9);
        let seeds = net.forward(&coords, &feats, 42, true).unwrap();
        let mut d = Tensor::zeros(seeds.feats.shape());
        d.data_mut().iter_mut().enumerate().for_each(|(i, v)| {
            *v = ((i % 7) as f64 - 3.0) * 0.1;
        });
        net.backward(&d).unwrap();
        let mut nonzero = 0usize;
        let mut total = 0usize;
        for p in net.trainable_mut() {
            total += 1;
            if p.grad().iter().any(|&g| g != 0.0) {
                nonzero += 1;
            }
        }
        // Every layer's parameters should see some gradient.
        assert_eq!(nonzero, total);
    }

    #[test]
    fn backward_without_forward_fails() {
        let cfg = tiny_config();
        let mut rng = seeded_rng(5);
        let mut net = Backbone::<f64>::new(cfg, &mut rng).unwrap();
        let d = Tensor::zeros(&[16, 7]);
        assert!(net.backward(&d).is_err());
        // Eval-mode forward leaves no cache either.
        let (coords, feats) = random_cloud(64, 9);
        net.forward(&coords, &feats, 42, false).unwrap();
        assert!(net.backward(&d).is_err());
    }

    #[test]
    fn rejects_undersized_clouds() {
        let cfg = tiny_config();
        let mut rng = seeded_rng(5);
        let mut net = Backbone::<f64>::new(cfg, &mut rng).unwrap();
        let (coords, feats) = random_cloud(16, 9);
        assert!(net.forward(&coords, &feats, 42, false).is_err());
    }

    #[test]
    fn interpolation_weights_are_convex_and_exact_on_hit() {
        let src: Vec<[f64; 3]> = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let sf = Tensor::from_vec(&[3, 2], vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0]).unwrap();
        // Destination exactly on source 1: weight collapses there.
        let (out, _) = interpolate_3nn(&src, &sf, &[[1.0, 0.0, 0.0]]).unwrap();
        assert!((out.data()[0] - 2.0).abs() < 1e-6);
        assert!((out.data()[1] - 20.0).abs() < 1e-5);
        // A midpoint blends with positive weights summing to one.
        let (out, cache) = interpolate_3nn(&src, &sf, &[[0.4, 0.4, 0.0]]).unwrap();
        let w = &cache.weights[0];
        let wsum = w[0] + w[1] + w[2];
        assert!((wsum - 1.0).abs() < 1e-12);
        assert!(out.data()[0] > 1.0 && out.data()[0] < 3.0);
    }

    #[test]
    fn interpolation_handles_fewer_than_three_sources() {
        let src: Vec<[f64; 3]> = vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let sf = Tensor::from_vec(&[2, 1], vec![5.0, 9.0]).unwrap();
        let (out, cache) = interpolate_3nn(&src, &sf, &[[0.5, 0.0, 0.0]]).unwrap();
        // Weights 1/0.5 and 1/1.5 normalize to 0.75 and 0.25.
        assert!((out.data()[0] - (0.75 * 5.0 + 0.25 * 9.0)).abs() < 1e-12);
        assert_eq!(cache.weights[0][2], 0.0);
    }

    #[test]
    fn interpolation_backward_routes_by_weight() {
        let src: Vec<[f64; 3]> = vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        let sf = Tensor::from_vec(&[2, 1], vec![5.0, 9.0]).unwrap();
        let (_, cache) = interpolate_3nn(&src, &sf, &[[0.5, 0.0, 0.0]]).unwrap();
        let d = Tensor::from_vec(&[1, 1], vec![4.0]).unwrap();
        let ds = interpolate_3nn_backward(&cache, &d).unwrap();
        assert!((ds.data()[0] - 3.0).abs() < 1e-12);
        assert!((ds.data()[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn translation_leaves_rendered_grids_identical() {
        // All coordinates are multiples of 0.25 and the shift is a small
        // power of two, so world-space subtraction is exact and the
        // normalized local regions match bit for bit.
        let coords: Vec<[f64; 3]> = (0..40)
            .map(|i| {
                [
                    (i % 5) as f64 * 0.25,
                    ((i / 5) % 4) as f64 * 0.25,
                    (i / 20) as f64 * 0.25,
                ]
            })
            .collect();
        let feats = Tensor::from_vec(&[40, 1], (0..40).map(|i| i as f64).collect()).unwrap();
        let shifted: Vec<[f64; 3]> =
            coords.iter().map(|p| [p[0] + 8.0, p[1] - 4.0, p[2] + 16.0]).collect();

        let cfg = tiny_config();
        let mut rng = seeded_rng(5);
        let net = Backbone::<f64>::new(cfg, &mut rng).unwrap();
        let sp = &net.stages[0];
        let (cen_a, reg_a) = sp.sample_and_group(&coords, &feats, 7).unwrap();
        let (cen_b, reg_b) = sp.sample_and_group(&shifted, &feats, 7).unwrap();
        for (a, b) in cen_a.iter().zip(&cen_b) {
            assert_eq!(a[0] + 8.0, b[0]);
        }
        assert_eq!(reg_a.local_coords.data(), reg_b.local_coords.data());
        let ra = sp.render_regions(&reg_a).unwrap();
        let rb = sp.render_regions(&reg_b).unwrap();
        assert_eq!(ra.values.data(), rb.values.data());
    }
}
