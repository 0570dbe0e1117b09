//! Dataset generation: writes `count` scenes plus a manifest.

use std::path::Path;

use lgr_core::dataio::{generate_scene, save_points, scene_stem, write_manifest};
use lgr_core::rng::derive_seed;

use crate::dataset::{MANIFEST_NAME, POINTS_EXT};
use crate::fail::{config_err, data_err, Failure};
use crate::config::RunConfig;

pub fn run(
    spec: &Path,
    out: &Path,
    count: usize,
    overrides: &[String],
) -> Result<(), Failure> {
    let cfg = RunConfig::load(spec, overrides).map_err(config_err)?;
    if count == 0 {
        return Err(Failure::config("--count must be at least 1"));
    }
    let scene_spec = cfg.scene_spec();
    std::fs::create_dir_all(out)
        .map_err(|e| Failure::data(format!("cannot create {}: {e}", out.display())))?;
    let mut stems = Vec::with_capacity(count);
    for i in 0..count {
        let sample =
            generate_scene(&scene_spec, derive_seed(cfg.seed, &[i as u64])).map_err(data_err)?;
        let stem = scene_stem(i);
        save_points(&out.join(format!("{stem}.{POINTS_EXT}")), &sample)
            .map_err(data_err)?;
        stems.push(stem);
    }
    write_manifest(&out.join(MANIFEST_NAME), &stems).map_err(data_err)?;
    println!("wrote {count} scenes to {}", out.display());
    Ok(())
}
