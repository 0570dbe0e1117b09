//! Voting and proposal modules plus the detector that wires them to the
//! backbone.
//!
//! Seeds vote for object centers through a shared MLP; votes are
//! clustered by farthest point sampling and ball grouping, and each
//! cluster is summarized by a pointwise MLP with channel max pooling
//! before a linear head decodes objectness, class scores, a center
//! offset, and log-scale box sizes.

use rand_chacha::ChaCha8Rng;

use super::boxes::{Box3, Detection};
use crate::backbone::{Backbone, BackboneConfig, SeedSet};
use crate::geometry::{ball_query_radius, farthest_point_sample, PointCloud, NO_MEMBER};
use crate::nncore::{
    max_pool_middle, max_pool_middle_backward, BatchNorm, Linear, MaxPoolCache, Relu, Tensor,
};
use crate::rng::derive_seed;
use crate::{invalid_arg, invalid_state, Result, Scalar};

/// Detection head configuration.
#[derive(Clone, Debug)]
pub struct DetectConfig {
    pub num_classes: usize,
    /// Cluster centers sampled from the votes.
    pub num_proposals: usize,
    /// Ball radius for grouping votes around each cluster center.
    pub group_radius: f64,
    /// Member slots per cluster.
    pub group_neighbors: usize,
    /// Hidden width of the vote MLP.
    pub vote_hidden: usize,
    /// Widths of the two pointwise layers in the proposal MLP.
    pub proposal_hidden: (usize, usize),
}

impl DetectConfig {
    pub fn with_defaults(num_classes: usize, seed_channels: usize) -> Self {
        DetectConfig {
            num_classes,
            num_proposals: 64,
            group_radius: 0.3,
            group_neighbors: 16,
            vote_hidden: seed_channels,
            proposal_hidden: (128, 128),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(invalid_arg!("need at least one class"));
        }
        if self.num_proposals == 0 || self.group_neighbors == 0 {
            return Err(invalid_arg!("proposal and neighbor counts must be positive"));
        }
        if !(self.group_radius > 0.0) || !self.group_radius.is_finite() {
            return Err(invalid_arg!("group radius {} must be positive", self.group_radius));
        }
        if self.vote_hidden == 0 || self.proposal_hidden.0 == 0 || self.proposal_hidden.1 == 0 {
            return Err(invalid_arg!("mlp widths must be positive"));
        }
        Ok(())
    }

    /// Width of one head row: 2 objectness logits, class logits, a 3-d
    /// center offset, and 3 log sizes.
    pub fn head_dim(&self) -> usize {
        2 + self.num_classes + 6
    }

    /// Column where class logits start.
    pub fn class_offset(&self) -> usize {
        2
    }

    /// Column where the center offset starts.
    pub fn center_offset(&self) -> usize {
        2 + self.num_classes
    }

    /// Column where log sizes start.
    pub fn size_offset(&self) -> usize {
        5 + self.num_classes
    }
}

/// Shared MLP that turns each seed into a vote: a coordinate offset plus
/// a feature residual.
pub struct VoteModule<S: Scalar> {
    lin1: Linear<S>,
    bn1: BatchNorm<S>,
    relu1: Relu,
    lin2: Linear<S>,
    channels: usize,
}

impl<S: Scalar> VoteModule<S> {
    /// See [`BatchNorm::freeze_stats`].
    pub fn freeze_norm_stats(&mut self) {
        self.bn1.freeze_stats();
    }

    /// The output layer starts at zero so initial votes coincide with
    /// their seeds and features pass through unchanged.
    pub fn new(channels: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let lin1 = Linear::new(channels, hidden, rng)?;
        let mut lin2 = Linear::new(hidden, 3 + channels, rng)?;
        lin2.zero_init();
        Ok(VoteModule { lin1, bn1: BatchNorm::new(hidden)?, relu1: Relu::new(), lin2, channels })
    }

    /// Returns vote coordinates and vote features `[N, channels]`.
    pub fn forward(
        &mut self,
        seed_coords: &[[S; 3]],
        seed_feats: &Tensor<S>,
        train: bool,
    ) -> Result<(Vec<[S; 3]>, Tensor<S>)> {
        if seed_feats.shape() != [seed_coords.len(), self.channels] {
            return Err(invalid_arg!(
                "seed features {:?} do not match {} seeds x {} channels",
                seed_feats.shape(),
                seed_coords.len(),
                self.channels
            ));
        }
        let mut y = self.lin1.forward(seed_feats, train)?;
        y = self.bn1.forward(&y, train)?;
        y = self.relu1.forward(&y, train);
        let out = self.lin2.forward(&y, train)?;
        let d = 3 + self.channels;
        let mut coords = Vec::with_capacity(seed_coords.len());
        let mut feats = seed_feats.clone();
        for (i, &c) in seed_coords.iter().enumerate() {
            let row = &out.data()[i * d..(i + 1) * d];
            coords.push([c[0] + row[0], c[1] + row[1], c[2] + row[2]]);
            let frow = &mut feats.data_mut()[i * self.channels..(i + 1) * self.channels];
            for (f, &r) in frow.iter_mut().zip(&row[3..]) {
                *f = *f + r;
            }
        }
        Ok((coords, feats))
    }

    /// Returns the seed-feature gradient given vote coordinate and vote
    /// feature gradients.
    pub fn backward(
        &mut self,
        d_coords: &[[S; 3]],
        d_feats: &Tensor<S>,
    ) -> Result<Tensor<S>> {
        let n = d_coords.len();
        if d_feats.shape() != [n, self.channels] {
            return Err(invalid_state!(
                "vote gradients {:?} do not match {} votes x {} channels",
                d_feats.shape(),
                n,
                self.channels
            ));
        }
        let d = 3 + self.channels;
        let mut dout = Tensor::zeros(&[n, d]);
        {
            let dd = dout.data_mut();
            for i in 0..n {
                dd[i * d] = d_coords[i][0];
                dd[i * d + 1] = d_coords[i][1];
                dd[i * d + 2] = d_coords[i][2];
                dd[i * d + 3..(i + 1) * d]
                    .copy_from_slice(&d_feats.data()[i * self.channels..(i + 1) * self.channels]);
            }
        }
        let mut g = self.lin2.backward(&dout)?;
        g = self.relu1.backward(&g)?;
        g = self.bn1.backward(&g)?;
        g = self.lin1.backward(&g)?;
        // Residual path: vote features add the seed features directly.
        let mut dseed = g;
        for (o, &r) in dseed.data_mut().iter_mut().zip(d_feats.data()) {
            *o = *o + r;
        }
        Ok(dseed)
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor<S>)> {
        let mut out = Vec::new();
        out.extend(self.lin1.named_mut(&format!("{prefix}.lin1")));
        out.extend(self.bn1.named_mut(&format!("{prefix}.bn1")));
        out.extend(self.lin2.named_mut(&format!("{prefix}.lin2")));
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = Vec::new();
        out.extend(self.lin1.trainable_mut());
        out.extend(self.bn1.trainable_mut());
        out.extend(self.lin2.trainable_mut());
        out
    }
}

/// Cluster centers with raw head rows.
pub struct Proposals<S: Scalar> {
    pub centers: Vec<[S; 3]>,
    /// `[num_proposals, head_dim]`.
    pub head: Tensor<S>,
}

/// Groups votes into clusters and decodes one proposal per cluster.
pub struct ProposalModule<S: Scalar> {
    cfg: DetectConfig,
    channels: usize,
    lin1: Linear<S>,
    bn1: BatchNorm<S>,
    relu1: Relu,
    lin2: Linear<S>,
    bn2: BatchNorm<S>,
    relu2: Relu,
    head: Linear<S>,
    cache: Option<PropCache>,
}

struct PropCache {
    member_indices: Vec<usize>,
    pool: MaxPoolCache,
    num_votes: usize,
}

impl<S: Scalar> ProposalModule<S> {
    /// See [`BatchNorm::freeze_stats`].
    pub fn freeze_norm_stats(&mut self) {
        self.bn1.freeze_stats();
        self.bn2.freeze_stats();
    }

    pub fn new(cfg: DetectConfig, channels: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        if channels == 0 {
            return Err(invalid_arg!("vote features need at least one channel"));
        }
        let (h1, h2) = cfg.proposal_hidden;
        let head_dim = cfg.head_dim();
        Ok(ProposalModule {
            channels,
            lin1: Linear::new(3 + channels, h1, rng)?,
            bn1: BatchNorm::new(h1)?,
            relu1: Relu::new(),
            lin2: Linear::new(h1, h2, rng)?,
            bn2: BatchNorm::new(h2)?,
            relu2: Relu::new(),
            head: Linear::new(h2, head_dim, rng)?,
            cfg,
            cache: None,
        })
    }

    pub fn cfg(&self) -> &DetectConfig {
        &self.cfg
    }

    pub fn forward(
        &mut self,
        vote_coords: &[[S; 3]],
        vote_feats: &Tensor<S>,
        seed: u64,
        train: bool,
    ) -> Result<Proposals<S>> {
        if vote_feats.shape() != [vote_coords.len(), self.channels] {
            return Err(invalid_arg!(
                "vote features {:?} do not match {} votes x {} channels",
                vote_feats.shape(),
                vote_coords.len(),
                self.channels
            ));
        }
        if self.cfg.num_proposals > vote_coords.len() {
            return Err(invalid_arg!(
                "{} proposals requested from {} votes",
                self.cfg.num_proposals,
                vote_coords.len()
            ));
        }
        let idx = farthest_point_sample(
            vote_coords,
            self.cfg.num_proposals,
            derive_seed(seed, &[0]),
        )?;
        let centers: Vec<[S; 3]> = idx.iter().map(|&i| vote_coords[i]).collect();
        let pc = PointCloud::new(vote_coords.to_vec(), vote_feats.clone())?;
        let regions = ball_query_radius(
            &pc,
            &centers,
            self.cfg.group_radius,
            self.cfg.group_neighbors,
            derive_seed(seed, &[1]),
        )?;
        // Per-member rows [local offset | vote features].
        let p = centers.len();
        let k = self.cfg.group_neighbors;
        let c = self.channels;
        let mut x = Tensor::zeros(&[p, k, 3 + c]);
        {
            let xd = x.data_mut();
            for m in 0..p * k {
                xd[m * (3 + c)..m * (3 + c) + 3]
                    .copy_from_slice(&regions.local_coords.data()[m * 3..(m + 1) * 3]);
                xd[m * (3 + c) + 3..(m + 1) * (3 + c)]
                    .copy_from_slice(&regions.local_feats.data()[m * c..(m + 1) * c]);
            }
        }
        let mut y = self.lin1.forward(&x, train)?;
        y = self.bn1.forward(&y, train)?;
        y = self.relu1.forward(&y, train);
        y = self.lin2.forward(&y, train)?;
        y = self.bn2.forward(&y, train)?;
        y = self.relu2.forward(&y, train);
        let (pooled, pool) = max_pool_middle(&y)?;
        let head = self.head.forward(&pooled, train)?;
        self.cache = if train {
            Some(PropCache {
                member_indices: regions.member_indices.clone(),
                pool,
                num_votes: vote_coords.len(),
            })
        } else {
            None
        };
        Ok(Proposals { centers, head })
    }

    /// Returns the vote-feature gradient `[V, channels]`. Vote
    /// coordinates receive no gradient from the grouping (cluster
    /// selection is an index operation).
    pub fn backward(&mut self, d_head: &Tensor<S>) -> Result<Tensor<S>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| invalid_state!("proposal backward without train-mode forward"))?;
        let d_pooled = self.head.backward(d_head)?;
        let mut d = max_pool_middle_backward(&cache.pool, &d_pooled)?;
        d = self.relu2.backward(&d)?;
        d = self.bn2.backward(&d)?;
        d = self.lin2.backward(&d)?;
        d = self.relu1.backward(&d)?;
        d = self.bn1.backward(&d)?;
        d = self.lin1.backward(&d)?;
        let c = self.channels;
        let row = 3 + c;
        let mut dvotes = Tensor::zeros(&[cache.num_votes, c]);
        let dd = dvotes.data_mut();
        for (m, &vi) in cache.member_indices.iter().enumerate() {
            if vi == NO_MEMBER {
                continue;
            }
            let src = &d.data()[m * row + 3..(m + 1) * row];
            let dst = &mut dd[vi * c..(vi + 1) * c];
            for (o, &g) in dst.iter_mut().zip(src) {
                *o = *o + g;
            }
        }
        Ok(dvotes)
    }

    pub fn named_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor<S>)> {
        let mut out = Vec::new();
        out.extend(self.lin1.named_mut(&format!("{prefix}.lin1")));
        out.extend(self.bn1.named_mut(&format!("{prefix}.bn1")));
        out.extend(self.lin2.named_mut(&format!("{prefix}.lin2")));
        out.extend(self.bn2.named_mut(&format!("{prefix}.bn2")));
        out.extend(self.head.named_mut(&format!("{prefix}.head")));
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = Vec::new();
        out.extend(self.lin1.trainable_mut());
        out.extend(self.bn1.trainable_mut());
        out.extend(self.lin2.trainable_mut());
        out.extend(self.bn2.trainable_mut());
        out.extend(self.head.trainable_mut());
        out
    }
}

/// Everything a forward pass produces, kept for the loss.
pub struct DetectorOutput<S: Scalar> {
    pub seeds: SeedSet<S>,
    pub vote_coords: Vec<[S; 3]>,
    pub vote_feats: Tensor<S>,
    pub proposals: Proposals<S>,
}

/// Backbone plus detection head.
pub struct Detector<S: Scalar> {
    backbone: Backbone<S>,
    vote: VoteModule<S>,
    proposal: ProposalModule<S>,
}

impl<S: Scalar> Detector<S> {
    /// Freeze the running statistics of every normalization layer; later
    /// train-mode forwards normalize exactly like eval-mode ones.
    pub fn freeze_norm_stats(&mut self) {
        self.backbone.freeze_norm_stats();
        self.vote.freeze_norm_stats();
        self.proposal.freeze_norm_stats();
    }

    pub fn new(
        backbone_cfg: BackboneConfig,
        detect_cfg: DetectConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let channels = backbone_cfg.seed_channels();
        let backbone = Backbone::new(backbone_cfg, rng)?;
        let vote = VoteModule::new(channels, detect_cfg.vote_hidden, rng)?;
        let proposal = ProposalModule::new(detect_cfg, channels, rng)?;
        Ok(Detector { backbone, vote, proposal })
    }

    pub fn backbone(&self) -> &Backbone<S> {
        &self.backbone
    }

    pub fn backbone_mut(&mut self) -> &mut Backbone<S> {
        &mut self.backbone
    }

    pub fn detect_cfg(&self) -> &DetectConfig {
        self.proposal.cfg()
    }

    /// Full forward pass. Sampling uses streams derived from `seed` for
    /// the backbone and the proposal clustering.
    pub fn forward(
        &mut self,
        coords: &[[S; 3]],
        feats: &Tensor<S>,
        seed: u64,
        train: bool,
    ) -> Result<DetectorOutput<S>> {
        let seeds = self.backbone.forward(coords, feats, derive_seed(seed, &[0]), train)?;
        let (vote_coords, vote_feats) =
            self.vote.forward(&seeds.coords, &seeds.feats, train)?;
        let proposals =
            self.proposal
                .forward(&vote_coords, &vote_feats, derive_seed(seed, &[1]), train)?;
        Ok(DetectorOutput { seeds, vote_coords, vote_feats, proposals })
    }

    /// Backpropagates loss gradients on the head rows and the vote
    /// coordinates into every parameter.
    pub fn backward(
        &mut self,
        d_head: &Tensor<S>,
        d_vote_coords: &[[S; 3]],
    ) -> Result<()> {
        let d_vote_feats = self.proposal.backward(d_head)?;
        let d_seed_feats = self.vote.backward(d_vote_coords, &d_vote_feats)?;
        self.backbone.backward(&d_seed_feats)
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<S>)> {
        let mut out = self.backbone.named_mut();
        out.extend(self.vote.named_mut("vote"));
        out.extend(self.proposal.named_mut("prop"));
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = self.backbone.trainable_mut();
        out.extend(self.vote.trainable_mut());
        out.extend(self.proposal.trainable_mut());
        out
    }
}

/// Decodes raw head rows into scored detections: objectness and class
/// probabilities by softmax, center as cluster center plus offset, size
/// as the exponential of the log-size row. Score is objectness times the
/// best class probability.
pub fn decode_proposals<S: Scalar>(
    proposals: &Proposals<S>,
    cfg: &DetectConfig,
) -> Result<Vec<Detection>> {
    let d = cfg.head_dim();
    if proposals.head.shape() != [proposals.centers.len(), d] {
        return Err(invalid_arg!(
            "head rows {:?} do not match {} proposals x {}",
            proposals.head.shape(),
            proposals.centers.len(),
            d
        ));
    }
    let mut out = Vec::with_capacity(proposals.centers.len());
    for (i, center) in proposals.centers.iter().enumerate() {
        let row: Vec<f64> =
            proposals.head.data()[i * d..(i + 1) * d].iter().map(|v| v.as_f64()).collect();
        let obj = softmax(&row[..2]);
        let cls = softmax(&row[cfg.class_offset()..cfg.class_offset() + cfg.num_classes]);
        let (label, best) = cls
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (j, &p)| if p > acc.1 { (j, p) } else { acc });
        let co = cfg.center_offset();
        let so = cfg.size_offset();
        let bbox = Box3::new(
            [
                center[0].as_f64() + row[co],
                center[1].as_f64() + row[co + 1],
                center[2].as_f64() + row[co + 2],
            ],
            [row[so].exp(), row[so + 1].exp(), row[so + 2].exp()],
        )?;
        out.push(Detection { bbox, label, score: obj[1] * best, objectness: obj[1] });
    }
    Ok(out)
}

/// Numerically stable softmax.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
