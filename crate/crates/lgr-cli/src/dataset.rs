//! Dataset directory loading: a manifest listing scene stems, or every
//! point file in the directory when no manifest is present.

use std::path::{Path, PathBuf};

use lgr_core::dataio::{load_points, read_manifest, Sample};
use lgr_core::{invalid_arg, Result};

pub const MANIFEST_NAME: &str = "manifest.txt";
pub const POINTS_EXT: &str = "lgrpc";

/// Loaded scenes, in manifest (or filename) order.
pub struct Dataset {
    pub scenes: Vec<Sample>,
    pub paths: Vec<PathBuf>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}

/// Loads every scene under `dir`.
pub fn load_dir(dir: &Path) -> Result<Dataset> {
    let manifest = dir.join(MANIFEST_NAME);
    let paths: Vec<PathBuf> = if manifest.is_file() {
        read_manifest(&manifest)?
            .into_iter()
            .map(|stem| dir.join(format!("{stem}.{POINTS_EXT}")))
            .collect()
    } else {
        let mut found: Vec<PathBuf> = std::fs::read_dir(dir)?
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|e| e == POINTS_EXT))
            .collect();
        found.sort();
        found
    };
    if paths.is_empty() {
        return Err(invalid_arg!("no scenes found under {}", dir.display()));
    }
    let scenes =
        paths.iter().map(|p| load_points(p)).collect::<Result<Vec<Sample>>>()?;
    Ok(Dataset { scenes, paths })
}

#[cfg(test)]
mod tests {
    use super::*;
    use lgr_core::dataio::{generate_scene, save_points, scene_stem, write_manifest, SceneSpec};

    #[test]
    fn manifest_order_wins_over_filename_order() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SceneSpec { points: 300, objects: (1, 2), ..SceneSpec::desk() };
        let mut stems = Vec::new();
        for i in 0..3 {
            let s = generate_scene(&spec, 40 + i).unwrap();
            let stem = scene_stem(i as usize);
            save_points(&dir.path().join(format!("{stem}.lgrpc")), &s).unwrap();
            stems.push(stem);
        }
        stems.reverse();
        write_manifest(&dir.path().join(MANIFEST_NAME), &stems).unwrap();
        let ds = load_dir(dir.path()).unwrap();
        assert_eq!(ds.len(), 3);
        assert!(ds.paths[0].to_string_lossy().contains("0002"));
    }

    #[test]
    fn missing_dir_and_empty_dir_are_errors() {
        assert!(load_dir(Path::new("/nonexistent/nowhere")).is_err());
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dir(dir.path()).is_err());
    }
}
