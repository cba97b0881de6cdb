//! Scene directories: one sub-directory per scene holding `lst_lr.f32`,
//! `ndvi_hr.f32` and optionally `ref_hr.f32`, each with a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use sifsr_core::raster::{load_raster, save_raster, EvalTriple, Grid2D, ScenePair};

pub const LST_FILE: &str = "lst_lr.f32";
pub const NDVI_FILE: &str = "ndvi_hr.f32";
pub const REF_FILE: &str = "ref_hr.f32";

#[derive(Clone, Debug)]
pub struct Scene {
    pub id: String,
    pub pair: ScenePair,
    pub reference: Option<Grid2D>,
}

impl Scene {
    pub fn triple(&self) -> Result<EvalTriple> {
        let reference = self
            .reference
            .clone()
            .ok_or_else(|| sifsr_core::Error::InvalidInput(format!("scene {} has no reference", self.id)))?;
        Ok(EvalTriple::new(self.pair.clone(), reference)?)
    }
}

/// Builds a pair, inferring the scale factor from the grid sizes.
pub fn pair_from_grids(lst: Grid2D, ndvi: Grid2D) -> Result<ScenePair> {
    let (lw, nw) = (lst.width(), ndvi.width());
    if lw == 0 || nw % lw != 0 {
        return Err(sifsr_core::Error::Shape(format!(
            "NDVI width {nw} is not a multiple of LST width {lw}"
        ))
        .into());
    }
    Ok(ScenePair::new(lst, ndvi, nw / lw)?)
}

pub fn write_scene(dir: &Path, triple: &EvalTriple) -> Result<Vec<PathBuf>> {
    let files = [
        (triple.pair().lst_lr(), LST_FILE),
        (triple.pair().ndvi_hr(), NDVI_FILE),
        (triple.ref_hr(), REF_FILE),
    ];
    let mut out = Vec::new();
    for (grid, name) in files {
        let path = dir.join(name);
        save_raster(grid, &path)?;
        out.push(path);
    }
    Ok(out)
}

pub fn load_scene(dir: &Path) -> Result<Scene> {
    let id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string());
    let lst = load_raster(&dir.join(LST_FILE))?;
    let ndvi = load_raster(&dir.join(NDVI_FILE))?;
    let ref_path = dir.join(REF_FILE);
    let reference = if ref_path.exists() {
        Some(load_raster(&ref_path)?)
    } else {
        None
    };
    let pair = pair_from_grids(lst, ndvi).with_context(|| format!("scene {id}"))?;
    Ok(Scene { id, pair, reference })
}

/// Loads every scene directory under `root`, sorted by name.
pub fn load_dataset(root: &Path) -> Result<Vec<Scene>> {
    let entries = fs::read_dir(root)
        .map_err(|e| sifsr_core::Error::Io {
            path: root.to_path_buf(),
            source: e,
        })
        .with_context(|| format!("reading data directory {}", root.display()))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(LST_FILE).exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(sifsr_core::Error::Empty(format!("no scenes found under {}", root.display())).into());
    }
    dirs.iter().map(|d| load_scene(d)).collect()
}

/// Directory name for the `i`-th generated scene.
pub fn scene_dir_name(i: usize) -> String {
    format!("scene_{i:03}")
}
