//! Inspection: dumps the rendered grid of one first-stage neighborhood
//! as portable text, and optionally exports a seed trace — every seed's
//! coordinates, its vote, and the proposals that vote fed.

use std::path::Path;

use lgr_core::dataio::load_points;
use lgr_core::geometry::{
    ball_query_radius, farthest_point_sample, query_regions, PointCloud, NO_MEMBER,
};
use lgr_core::lgr::render;
use lgr_core::rng::derive_seed;
use lgr_core::Scalar;
use serde_json::json;

use crate::config::{Dtype, RunConfig};
use crate::fail::{config_err, data_err, run_err, Failure};
use crate::gridfmt::write_grid;
use crate::model::{build_detector, load_checkpoint};

pub struct InspectArgs<'a> {
    pub points: &'a Path,
    pub centroid_index: usize,
    pub config: &'a Path,
    pub ckpt: Option<&'a Path>,
    pub out: Option<&'a Path>,
    pub trace: Option<&'a Path>,
    pub overrides: &'a [String],
}

pub fn run(args: &InspectArgs) -> Result<(), Failure> {
    let cfg = RunConfig::load(args.config, args.overrides).map_err(config_err)?;
    let sample = load_points(args.points).map_err(data_err)?;

    let dump = grid_dump(&cfg, &sample, args.centroid_index, args.points)?;
    match args.out {
        Some(path) => super::write_text_atomic(path, &dump).map_err(data_err)?,
        None => print!("{dump}"),
    }

    if let Some(trace_path) = args.trace {
        let value = match cfg.dtype {
            Dtype::F32 => trace::<f32>(&cfg, &sample, args.ckpt)?,
            Dtype::F64 => trace::<f64>(&cfg, &sample, args.ckpt)?,
        };
        let text = format!("{:#}\n", value);
        super::write_text_atomic(trace_path, &text).map_err(data_err)?;
        eprintln!("seed trace written to {}", trace_path.display());
    }
    Ok(())
}

/// Renders the grid the first backbone stage would build around the
/// chosen centroid, using the same sampling streams the model uses.
/// When the cloud has fewer points than the configured centroid count,
/// sampling is clamped to the cloud size so small probe files work.
fn grid_dump(
    cfg: &RunConfig,
    sample: &lgr_core::dataio::Sample,
    centroid_index: usize,
    source: &Path,
) -> Result<String, Failure> {
    let (coords, feats) = sample.as_inputs::<f64>();
    let stage = &cfg.stages[0];
    let regions = stage.regions.min(coords.len());
    if centroid_index >= regions {
        return Err(Failure::config(format!(
            "--centroid-index {centroid_index} out of range: {regions} centroids"
        )));
    }
    // Stream layout mirrors the model: detector [0] -> backbone, stage 1
    // is backbone stream [1], FPS is stage stream [0], grouping [1].
    let stage1_seed = derive_seed(derive_seed(cfg.seed, &[0]), &[1]);
    let idx = farthest_point_sample(&coords, regions, derive_seed(stage1_seed, &[0]))
        .map_err(run_err)?;
    let centroids: Vec<[f64; 3]> = idx.iter().map(|&i| coords[i]).collect();
    let pc = PointCloud::new(coords, feats).map_err(run_err)?;
    let batch = query_regions(
        &pc,
        &centroids,
        cfg.query,
        stage.half_edge,
        stage.neighbors,
        derive_seed(stage1_seed, &[1]),
    )
    .map_err(run_err)?;
    let grid = cfg.grid_spec();
    let rendered = render(&batch, &grid).map_err(run_err)?;

    let [w, h, l] = [grid.width, grid.height, grid.length];
    let c = pc.channels();
    let voxels = w * h * l * c;
    let values: Vec<f64> =
        rendered.values.data()[centroid_index * voxels..(centroid_index + 1) * voxels].to_vec();
    let center = centroids[centroid_index];
    let comments = vec![
        format!("source {} centroid {}", source.display(), centroid_index),
        format!("centroid {:.8e} {:.8e} {:.8e}", center[0], center[1], center[2]),
        format!("members {}", batch.valid_counts[centroid_index]),
        format!(
            "radius {:.8e} power {} aggregation {}",
            grid.radius,
            grid.power,
            crate::config::aggregation_name(grid.aggregation)
        ),
    ];
    Ok(write_grid([w, h, l, c], &comments, &values))
}

/// Full-model seed trace: runs the detector in eval mode and reports,
/// for every seed, its coordinates, its vote, and the indices of the
/// proposals whose vote cluster contained it.
fn trace<S: Scalar>(
    cfg: &RunConfig,
    sample: &lgr_core::dataio::Sample,
    ckpt: Option<&Path>,
) -> Result<serde_json::Value, Failure> {
    let mut det = build_detector::<S>(cfg).map_err(config_err)?;
    if let Some(path) = ckpt {
        load_checkpoint(path, cfg, &mut det).map_err(run_err)?;
    }
    let (coords, feats) = sample.as_inputs::<S>();
    let fwd = det.forward(&coords, &feats, cfg.seed, false).map_err(run_err)?;
    let dcfg = cfg.detect_config();

    // Rebuild the proposal clustering with the same streams the head
    // uses: detector stream [1] feeds the proposal module, which groups
    // votes with its stream [1].
    let votes_pc =
        PointCloud::new(fwd.vote_coords.clone(), fwd.vote_feats.clone()).map_err(run_err)?;
    let members = ball_query_radius(
        &votes_pc,
        &fwd.proposals.centers,
        dcfg.group_radius,
        dcfg.group_neighbors,
        derive_seed(derive_seed(cfg.seed, &[1]), &[1]),
    )
    .map_err(run_err)?;

    let k = dcfg.group_neighbors;
    let num_seeds = fwd.seeds.coords.len();
    let mut fed: Vec<Vec<usize>> = vec![Vec::new(); num_seeds];
    for p in 0..fwd.proposals.centers.len() {
        for &vi in &members.member_indices[p * k..(p + 1) * k] {
            if vi != NO_MEMBER && !fed[vi].contains(&p) {
                fed[vi].push(p);
            }
        }
    }

    let seeds: Vec<_> = (0..num_seeds)
        .map(|i| {
            let s = fwd.seeds.coords[i];
            let v = fwd.vote_coords[i];
            json!({
                "index": i,
                "seed": [s[0].as_f64(), s[1].as_f64(), s[2].as_f64()],
                "vote": [v[0].as_f64(), v[1].as_f64(), v[2].as_f64()],
                "proposals": fed[i],
            })
        })
        .collect();
    let proposals: Vec<_> = fwd
        .proposals
        .centers
        .iter()
        .map(|c| json!([c[0].as_f64(), c[1].as_f64(), c[2].as_f64()]))
        .collect();
    Ok(json!({
        "num_seeds": num_seeds,
        "proposals": proposals,
        "seeds": seeds,
    }))
}
