//! Flat key-value run configuration.
//!
//! Format: one `key = value` per line; `#` starts a comment; blank
//! lines are ignored. Unknown keys and duplicate keys are errors so a
//! mistyped ablation never runs silently at defaults. Every key has a
//! documented default (see `configs/desk.cfg`); an empty file is the
//! reference configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use lgr_core::backbone::{BackboneConfig, SpConfig};
use lgr_core::dataio::{ObjectClass, SceneSpec};
use lgr_core::detect::{DetectConfig, LossWeights};
use lgr_core::geometry::QueryKind;
use lgr_core::lgr::{Aggregation, GridSpec};
use lgr_core::{invalid_arg, Error, Result};

/// Numeric precision the model runs at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

impl FromStr for Dtype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            other => Err(invalid_arg!("unknown dtype {other:?} (f32, f64)")),
        }
    }
}

/// Per-stage knobs exposed in the config file.
#[derive(Clone, Copy, Debug)]
pub struct StageKnobs {
    pub regions: usize,
    pub half_edge: f64,
    pub neighbors: usize,
    pub conv: (usize, usize),
}

/// Everything a run needs, with reference-architecture defaults.
#[derive(Clone, Debug)]
pub struct RunConfig {
    // scene.*
    pub scene_extent: [f64; 3],
    pub scene_objects: (usize, usize),
    pub scene_points: usize,
    pub scene_noise_sigma: f64,
    pub scene_clutter: bool,
    pub scene_classes: Vec<ObjectClass>,
    // model.*
    pub dtype: Dtype,
    pub grid_resolution: usize,
    pub radius_scale: f64,
    pub power: f64,
    pub aggregation: Aggregation,
    pub query: QueryKind,
    pub kernel: usize,
    pub conv_layers: usize,
    pub stages: [StageKnobs; 4],
    pub fp: (usize, usize),
    pub proposals: usize,
    pub group_radius: f64,
    pub group_neighbors: usize,
    /// 0 means "match the seed feature width".
    pub vote_hidden: usize,
    pub proposal_hidden: (usize, usize),
    // train.*
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub decay_epochs: Vec<usize>,
    pub decay_factor: f64,
    pub augment: bool,
    /// Epoch after which normalization statistics freeze (0 = never).
    pub bn_freeze_epoch: usize,
    pub checkpoint_every: usize,
    // loss.*
    pub loss: LossWeights,
    // eval.*
    pub nms_iou: f64,
    pub ap_ious: Vec<f64>,
    // shared
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let stage = |regions, half_edge, neighbors, c1, c2| StageKnobs {
            regions,
            half_edge,
            neighbors,
            conv: (c1, c2),
        };
        RunConfig {
            scene_extent: [4.0, 4.0, 2.0],
            scene_objects: (2, 4),
            scene_points: 2048,
            scene_noise_sigma: 0.005,
            scene_clutter: true,
            scene_classes: ObjectClass::ALL.to_vec(),
            dtype: Dtype::F32,
            grid_resolution: 5,
            radius_scale: 1.0,
            power: 1.0,
            aggregation: Aggregation::Interpolation,
            query: QueryKind::Cube,
            kernel: 3,
            conv_layers: 2,
            stages: [
                stage(2048, 0.15, 64, 64, 128),
                stage(1024, 0.30, 32, 128, 256),
                stage(512, 0.60, 16, 128, 256),
                stage(256, 1.00, 16, 128, 256),
            ],
            fp: (256, 256),
            proposals: 64,
            group_radius: 0.3,
            group_neighbors: 16,
            vote_hidden: 0,
            proposal_hidden: (128, 128),
            lr: 1e-3,
            batch: 8,
            epochs: 160,
            decay_epochs: vec![80, 120],
            decay_factor: 0.1,
            augment: true,
            bn_freeze_epoch: 0,
            checkpoint_every: 0,
            loss: LossWeights::default(),
            nms_iou: 0.25,
            ap_ious: vec![0.25, 0.5],
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Reads a config file and applies `--set key=value` overrides.
    pub fn load(path: &Path, overrides: &[String]) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| invalid_arg!("cannot read config {}: {e}", path.display()))?;
        Self::from_text(&text, overrides)
    }

    /// Parses config text plus overrides; unknown keys are rejected.
    pub fn from_text(text: &str, overrides: &[String]) -> Result<RunConfig> {
        let mut map = parse_pairs(text)?;
        for ov in overrides {
            let (k, v) = ov
                .split_once('=')
                .ok_or_else(|| invalid_arg!("--set needs key=value, got {ov:?}"))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut cfg = RunConfig::default();
        let mut bag = Bag { map };
        cfg.apply(&mut bag)?;
        if let Some(key) = bag.map.keys().next() {
            return Err(invalid_arg!("unknown config key {key:?}"));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, bag: &mut Bag) -> Result<()> {
        bag.f64("scene.extent_x", &mut self.scene_extent[0])?;
        bag.f64("scene.extent_y", &mut self.scene_extent[1])?;
        bag.f64("scene.extent_z", &mut self.scene_extent[2])?;
        bag.usize("scene.min_objects", &mut self.scene_objects.0)?;
        bag.usize("scene.max_objects", &mut self.scene_objects.1)?;
        bag.usize("scene.points", &mut self.scene_points)?;
        bag.f64("scene.noise_sigma", &mut self.scene_noise_sigma)?;
        bag.bool("scene.clutter", &mut self.scene_clutter)?;
        if let Some(v) = bag.take("scene.classes") {
            self.scene_classes = split_list(&v)
                .map(|s| s.parse::<ObjectClass>())
                .collect::<Result<Vec<_>>>()?;
        }

        bag.parse("model.dtype", &mut self.dtype)?;
        bag.usize("model.grid", &mut self.grid_resolution)?;
        bag.f64("model.radius_scale", &mut self.radius_scale)?;
        bag.f64("model.power", &mut self.power)?;
        if let Some(v) = bag.take("model.aggregation") {
            self.aggregation = parse_aggregation(&v)?;
        }
        bag.parse("model.query", &mut self.query)?;
        bag.usize("model.kernel", &mut self.kernel)?;
        bag.usize("model.conv_layers", &mut self.conv_layers)?;
        for (i, stage) in self.stages.iter_mut().enumerate() {
            let p = format!("model.sp{}", i + 1);
            bag.usize(&format!("{p}.regions"), &mut stage.regions)?;
            bag.f64(&format!("{p}.half_edge"), &mut stage.half_edge)?;
            bag.usize(&format!("{p}.neighbors"), &mut stage.neighbors)?;
            bag.usize(&format!("{p}.conv1"), &mut stage.conv.0)?;
            bag.usize(&format!("{p}.conv2"), &mut stage.conv.1)?;
        }
        bag.usize("model.fp1", &mut self.fp.0)?;
        bag.usize("model.fp2", &mut self.fp.1)?;
        bag.usize("model.proposals", &mut self.proposals)?;
        bag.f64("model.group_radius", &mut self.group_radius)?;
        bag.usize("model.group_neighbors", &mut self.group_neighbors)?;
        bag.usize("model.vote_hidden", &mut self.vote_hidden)?;
        bag.usize("model.proposal_hidden1", &mut self.proposal_hidden.0)?;
        bag.usize("model.proposal_hidden2", &mut self.proposal_hidden.1)?;

        bag.f64("train.lr", &mut self.lr)?;
        bag.usize("train.batch", &mut self.batch)?;
        bag.usize("train.epochs", &mut self.epochs)?;
        if let Some(v) = bag.take("train.decay_epochs") {
            self.decay_epochs = if v == "none" {
                Vec::new()
            } else {
                split_list(&v)
                    .map(|s| parse_num::<usize>("train.decay_epochs", s))
                    .collect::<Result<Vec<_>>>()?
            };
        }
        bag.f64("train.decay_factor", &mut self.decay_factor)?;
        bag.bool("train.augment", &mut self.augment)?;
        bag.usize("train.bn_freeze_epoch", &mut self.bn_freeze_epoch)?;
        bag.usize("train.checkpoint_every", &mut self.checkpoint_every)?;

        bag.f64("loss.vote", &mut self.loss.vote)?;
        bag.f64("loss.objectness", &mut self.loss.objectness)?;
        bag.f64("loss.box", &mut self.loss.bbox)?;
        bag.f64("loss.class", &mut self.loss.class)?;
        bag.f64("loss.pos_radius", &mut self.loss.pos_radius)?;
        bag.f64("loss.neg_radius", &mut self.loss.neg_radius)?;

        bag.f64("eval.nms_iou", &mut self.nms_iou)?;
        if let Some(v) = bag.take("eval.ap_iou") {
            self.ap_ious = split_list(&v)
                .map(|s| parse_num::<f64>("eval.ap_iou", s))
                .collect::<Result<Vec<_>>>()?;
        }

        bag.u64("seed", &mut self.seed)?;
        Ok(())
    }

    /// Cross-field checks beyond what the derived configs validate.
    fn validate(&self) -> Result<()> {
        self.scene_spec().validate()?;
        self.backbone_config().validate()?;
        self.detect_config().validate()?;
        self.loss.validate()?;
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(invalid_arg!("model.kernel {} must be odd", self.kernel));
        }
        if self.batch == 0 {
            return Err(invalid_arg!("train.batch must be at least 1"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(invalid_arg!("train.lr {} must be positive", self.lr));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(invalid_arg!(
                "train.decay_factor {} must be in (0, 1]",
                self.decay_factor
            ));
        }
        if !(self.radius_scale > 0.0) || !self.radius_scale.is_finite() {
            return Err(invalid_arg!(
                "model.radius_scale {} must be positive",
                self.radius_scale
            ));
        }
        if !(0.0..=1.0).contains(&self.nms_iou) {
            return Err(invalid_arg!("eval.nms_iou {} must be in [0, 1]", self.nms_iou));
        }
        if self.ap_ious.is_empty() {
            return Err(invalid_arg!("eval.ap_iou needs at least one threshold"));
        }
        for &t in &self.ap_ious {
            if !(0.0..=1.0).contains(&t) {
                return Err(invalid_arg!("eval.ap_iou {t} must be in [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            extent: self.scene_extent,
            classes: self.scene_classes.clone(),
            objects: self.scene_objects,
            points: self.scene_points,
            noise_sigma: self.scene_noise_sigma,
            floor: self.scene_clutter,
        }
    }

    pub fn grid_spec(&self) -> GridSpec {
        let base = GridSpec::cube(self.grid_resolution);
        GridSpec {
            radius: base.radius * self.radius_scale,
            power: self.power,
            aggregation: self.aggregation,
            ..base
        }
    }

    pub fn backbone_config(&self) -> BackboneConfig {
        let grid = self.grid_spec();
        BackboneConfig {
            in_channels: 1,
            stages: self
                .stages
                .iter()
                .map(|s| SpConfig {
                    num_regions: s.regions,
                    half_edge: s.half_edge,
                    neighbors: s.neighbors,
                    conv_channels: s.conv,
                    kernel: self.kernel,
                    layers: self.conv_layers,
                    query: self.query,
                    grid: grid.clone(),
                })
                .collect(),
            fp_channels: self.fp,
        }
    }

    /// Label space: the full class universe, independent of which
    /// classes a particular scene spec samples from.
    pub fn num_classes(&self) -> usize {
        ObjectClass::ALL.len()
    }

    pub fn detect_config(&self) -> DetectConfig {
        let seed_channels = self.fp.1;
        DetectConfig {
            num_classes: self.num_classes(),
            num_proposals: self.proposals,
            group_radius: self.group_radius,
            group_neighbors: self.group_neighbors,
            vote_hidden: if self.vote_hidden == 0 { seed_channels } else { self.vote_hidden },
            proposal_hidden: self.proposal_hidden,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        self.loss
    }

    /// Learning rate for a 1-based epoch under the step decay schedule:
    /// each configured boundary multiplies the rate once the epoch
    /// number exceeds it.
    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        let drops = self.decay_epochs.iter().filter(|&&d| epoch > d).count();
        self.lr * self.decay_factor.powi(drops as i32)
    }

    /// One-line architecture descriptor stored in checkpoints; loading
    /// with a different architecture is rejected by string comparison.
    pub fn fingerprint(&self) -> String {
        let mut s = String::from("arch1");
        let _ = write!(
            s,
            ";dtype={};grid={};radius_scale={};power={};agg={};query={};kernel={};layers={}",
            self.dtype.name(),
            self.grid_resolution,
            self.radius_scale,
            self.power,
            aggregation_name(self.aggregation),
            self.query.name(),
            self.kernel,
            self.conv_layers,
        );
        for (i, st) in self.stages.iter().enumerate() {
            let _ = write!(
                s,
                ";sp{}={}:{}:{}:{}:{}",
                i + 1,
                st.regions,
                st.half_edge,
                st.neighbors,
                st.conv.0,
                st.conv.1
            );
        }
        let d = self.detect_config();
        let _ = write!(
            s,
            ";fp={}:{};classes={};proposals={};group={}:{};vote_hidden={};prop_hidden={}:{}",
            self.fp.0,
            self.fp.1,
            d.num_classes,
            d.num_proposals,
            d.group_radius,
            d.group_neighbors,
            d.vote_hidden,
            d.proposal_hidden.0,
            d.proposal_hidden.1
        );
        s
    }
}

pub fn aggregation_name(a: Aggregation) -> &'static str {
    match a {
        Aggregation::Interpolation => "interpolation",
        Aggregation::AvgPool => "average",
        Aggregation::NearestNeighbor => "nearest",
    }
}

fn parse_aggregation(s: &str) -> Result<Aggregation> {
    match s {
        "interpolation" => Ok(Aggregation::Interpolation),
        "average" => Ok(Aggregation::AvgPool),
        "nearest" => Ok(Aggregation::NearestNeighbor),
        other => Err(invalid_arg!(
            "unknown aggregation {other:?} (interpolation, average, nearest)"
        )),
    }
}

fn split_list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse::<T>().map_err(|_| invalid_arg!("config key {key}: cannot parse {v:?}"))
}

/// Key-value pairs consumed as they are recognized; leftovers are
/// unknown keys.
struct Bag {
    map: BTreeMap<String, String>,
}

impl Bag {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn f64(&mut self, key: &str, into: &mut f64) -> Result<()> {
        if let Some(v) = self.take(key) {
            *into = parse_num(key, &v)?;
        }
        Ok(())
    }

    fn usize(&mut self, key: &str, into: &mut usize) -> Result<()> {
        if let Some(v) = self.take(key) {
            *into = parse_num(key, &v)?;
        }
        Ok(())
    }

    fn u64(&mut self, key: &str, into: &mut u64) -> Result<()> {
        if let Some(v) = self.take(key) {
            *into = parse_num(key, &v)?;
        }
        Ok(())
    }

    fn bool(&mut self, key: &str, into: &mut bool) -> Result<()> {
        if let Some(v) = self.take(key) {
            *into = match v.as_str() {
                "true" => true,
                "false" => false,
                other => {
                    return Err(invalid_arg!(
                        "config key {key}: expected true or false, got {other:?}"
                    ))
                }
            };
        }
        Ok(())
    }

    fn parse<T: FromStr<Err = Error>>(&mut self, key: &str, into: &mut T) -> Result<()> {
        if let Some(v) = self.take(key) {
            *into = v.parse::<T>().map_err(|e| invalid_arg!("config key {key}: {e}"))?;
        }
        Ok(())
    }
}

fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i + 1,
            msg: format!("expected key = value, got {raw:?}"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() || v.is_empty() {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("empty key or value in {raw:?}"),
            });
        }
        if map.insert(k.to_string(), v.to_string()).is_some() {
            return Err(Error::Parse { line: i + 1, msg: format!("duplicate key {k:?}") });
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_reference_architecture() {
        let cfg = RunConfig::from_text("", &[]).unwrap();
        let bb = cfg.backbone_config();
        assert_eq!(bb.stages[0].num_regions, 2048);
        assert_eq!(bb.stages[3].conv_channels, (128, 256));
        assert_eq!(bb.seed_count(), 1024);
        assert_eq!(bb.seed_channels(), 256);
        assert_eq!(cfg.lr, 1e-3);
        assert_eq!(cfg.batch, 8);
        assert_eq!(cfg.decay_epochs, vec![80, 120]);
        assert_eq!(cfg.detect_config().vote_hidden, 256);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = RunConfig::from_text("model.grid_size = 5\n", &[]).unwrap_err();
        assert!(err.to_string().contains("model.grid_size"), "{err}");
    }

    #[test]
    fn duplicate_key_is_rejected_with_line() {
        let err = RunConfig::from_text("seed = 1\nseed = 2\n", &[]).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let cfg = RunConfig::from_text(
            "# reference run\n\nseed = 9   # inline comment\ntrain.lr = 0.01\n",
            &[],
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.lr, 0.01);
    }

    #[test]
    fn overrides_beat_file_values() {
        let cfg = RunConfig::from_text(
            "train.batch = 4\n",
            &["train.batch=2".to_string(), "model.grid=3".to_string()],
        )
        .unwrap();
        assert_eq!(cfg.batch, 2);
        assert_eq!(cfg.grid_resolution, 3);
    }

    #[test]
    fn bad_values_are_config_errors() {
        assert!(RunConfig::from_text("train.batch = zero\n", &[]).is_err());
        assert!(RunConfig::from_text("train.batch = 0\n", &[]).is_err());
        assert!(RunConfig::from_text("model.kernel = 2\n", &[]).is_err());
        assert!(RunConfig::from_text("model.aggregation = max\n", &[]).is_err());
        assert!(RunConfig::from_text("scene.classes = pyramid\n", &[]).is_err());
        assert!(RunConfig::from_text("eval.ap_iou = 1.5\n", &[]).is_err());
        assert!(RunConfig::from_text("no_equals_sign\n", &[]).is_err());
    }

    #[test]
    fn lr_schedule_decays_after_boundaries() {
        let cfg = RunConfig::from_text("train.lr = 1.0\n", &[]).unwrap();
        assert_eq!(cfg.lr_for_epoch(80), 1.0);
        assert!((cfg.lr_for_epoch(81) - 0.1).abs() < 1e-12);
        assert_eq!(cfg.lr_for_epoch(120), cfg.lr_for_epoch(81));
        assert!((cfg.lr_for_epoch(121) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn fingerprint_tracks_architecture_changes() {
        let a = RunConfig::from_text("", &[]).unwrap().fingerprint();
        let b = RunConfig::from_text("model.sp1.conv2 = 96\n", &[]).unwrap().fingerprint();
        let c = RunConfig::from_text("train.lr = 0.5\n", &[]).unwrap().fingerprint();
        assert_ne!(a, b);
        assert_eq!(a, c, "training keys must not change the architecture id");
    }

    #[test]
    fn grid_spec_scales_radius() {
        let cfg = RunConfig::from_text("model.radius_scale = 2.0\n", &[]).unwrap();
        let base = GridSpec::cube(5);
        assert!((cfg.grid_spec().radius - 2.0 * base.radius).abs() < 1e-15);
    }
}
