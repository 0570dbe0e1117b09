//! Micro-benchmark: times the five pipeline stages — centroid sampling,
//! neighborhood query, grid rendering, grid CNN (including feature
//! propagation), and the detection head — with disjoint timers.

use std::path::Path;
use std::time::Instant;

use lgr_core::backbone::{FpLayer, SpModule};
use lgr_core::dataio::{load_points, Sample};
use lgr_core::detect::{decode_proposals, nms, ProposalModule, VoteModule};
use lgr_core::geometry::{farthest_point_sample, query_regions, PointCloud};
use lgr_core::nncore::Tensor;
use lgr_core::rng::{derive_seed, seeded_rng};
use lgr_core::Scalar;
use serde_json::json;

use crate::config::{Dtype, RunConfig};
use crate::fail::{config_err, data_err, run_err, Failure};

pub struct BenchArgs<'a> {
    pub config: &'a Path,
    pub points: &'a Path,
    pub repeat: usize,
    pub overrides: &'a [String],
}

pub fn run(args: &BenchArgs) -> Result<(), Failure> {
    let cfg = RunConfig::load(args.config, args.overrides).map_err(config_err)?;
    if args.repeat == 0 {
        return Err(Failure::config("--repeat must be at least 1"));
    }
    let sample = load_points(args.points).map_err(data_err)?;
    let value = match cfg.dtype {
        Dtype::F32 => drive::<f32>(&cfg, &sample, args.repeat)?,
        Dtype::F64 => drive::<f64>(&cfg, &sample, args.repeat)?,
    };
    println!("{:#}", value);
    Ok(())
}

#[derive(Default)]
struct StageClock {
    sampling: f64,
    query: f64,
    render: f64,
    cnn: f64,
    head: f64,
}

fn ms_since(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

fn drive<S: Scalar>(
    cfg: &RunConfig,
    sample: &Sample,
    repeat: usize,
) -> Result<serde_json::Value, Failure> {
    let bb = cfg.backbone_config();
    bb.validate().map_err(config_err)?;
    let dcfg = cfg.detect_config();

    // Same parameter stream the full model uses, so the timed math is
    // representative of a real run.
    let mut rng = seeded_rng(derive_seed(cfg.seed, &[10]));
    let mut stages: Vec<SpModule<S>> = Vec::with_capacity(bb.stages.len());
    let mut chan = bb.in_channels;
    for sc in &bb.stages {
        stages.push(SpModule::new(sc.clone(), chan, &mut rng).map_err(config_err)?);
        chan = sc.out_channels();
    }
    let (c2o, c3o, c4o) = (
        bb.stages[1].out_channels(),
        bb.stages[2].out_channels(),
        bb.stages[3].out_channels(),
    );
    let mut fp1 = FpLayer::new(c4o, c3o, bb.fp_channels, &mut rng).map_err(config_err)?;
    let mut fp2 =
        FpLayer::new(bb.fp_channels.1, c2o, bb.fp_channels, &mut rng).map_err(config_err)?;
    let mut vote =
        VoteModule::new(bb.seed_channels(), dcfg.vote_hidden, &mut rng).map_err(config_err)?;
    let mut proposal =
        ProposalModule::new(dcfg.clone(), bb.seed_channels(), &mut rng).map_err(config_err)?;

    let (in_coords, in_feats) = sample.as_inputs::<S>();
    let mut clock = StageClock::default();

    for rep in 0..repeat as u64 {
        let mut coords = in_coords.clone();
        let mut feats = in_feats.clone();
        let mut kept: Vec<(Vec<[S; 3]>, Tensor<S>)> = Vec::with_capacity(stages.len());
        for (i, stage) in stages.iter_mut().enumerate() {
            let sc = stage.cfg();
            if sc.num_regions > coords.len() {
                return Err(Failure::config(format!(
                    "stage {} wants {} centroids from {} points",
                    i + 1,
                    sc.num_regions,
                    coords.len()
                )));
            }
            let stage_seed = derive_seed(cfg.seed, &[20, rep, i as u64]);

            let t = Instant::now();
            let idx = farthest_point_sample(&coords, sc.num_regions, derive_seed(stage_seed, &[0]))
                .map_err(run_err)?;
            let centroids: Vec<[S; 3]> = idx.iter().map(|&j| coords[j]).collect();
            clock.sampling += ms_since(t);

            let t = Instant::now();
            let pc = PointCloud::new(coords, feats).map_err(run_err)?;
            let regions = query_regions(
                &pc,
                &centroids,
                sc.query,
                sc.half_edge,
                sc.neighbors,
                derive_seed(stage_seed, &[1]),
            )
            .map_err(run_err)?;
            clock.query += ms_since(t);

            let t = Instant::now();
            let rendered = stage.render_regions(&regions).map_err(run_err)?;
            clock.render += ms_since(t);

            let t = Instant::now();
            let (pooled, _) = stage.cnn_forward(&rendered.values, false).map_err(run_err)?;
            clock.cnn += ms_since(t);

            kept.push((centroids.clone(), pooled.clone()));
            coords = centroids;
            feats = pooled;
        }

        let t = Instant::now();
        let (c2, f2) = (&kept[1].0, &kept[1].1);
        let (c3, f3) = (&kept[2].0, &kept[2].1);
        let (c4, f4) = (&kept[3].0, &kept[3].1);
        let g3 = fp1.forward(c4, f4, c3, f3, false).map_err(run_err)?;
        let g2 = fp2.forward(c3, &g3, c2, f2, false).map_err(run_err)?;
        clock.cnn += ms_since(t);

        let t = Instant::now();
        let (vote_coords, vote_feats) = vote.forward(c2, &g2, false).map_err(run_err)?;
        let proposals = proposal
            .forward(&vote_coords, &vote_feats, derive_seed(cfg.seed, &[21, rep]), false)
            .map_err(run_err)?;
        let decoded = decode_proposals(&proposals, &dcfg).map_err(run_err)?;
        let _ = nms(&decoded, cfg.nms_iou).map_err(run_err)?;
        clock.head += ms_since(t);
    }

    let n = repeat as f64;
    let stages_ms = json!({
        "cnn": clock.cnn / n,
        "head": clock.head / n,
        "query": clock.query / n,
        "render": clock.render / n,
        "sampling": clock.sampling / n,
    });
    let total = (clock.sampling + clock.query + clock.render + clock.cnn + clock.head) / n;
    Ok(json!({
        "num_points": in_coords.len(),
        "repeat": repeat,
        "stages_ms": stages_ms,
        "total_ms": total,
    }))
}
