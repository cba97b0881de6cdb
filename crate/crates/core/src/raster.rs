//! Single-band rasters with explicit validity masks.
//!
//! A [`Grid2D`] stores values in 64-bit precision with a per-pixel validity
//! mask. On disk a raster is a raw little-endian `f32` payload (row-major,
//! masked pixels written as NaN) plus a JSON sidecar holding the geometry.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single-band raster: values, validity mask and ground pixel size.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid2D {
    values: Array2<f64>,
    mask: Array2<bool>,
    pixel_size: f64,
    units: String,
}

impl Grid2D {
    /// Builds a grid whose mask is derived from the values: non-finite
    /// entries become masked pixels.
    pub fn new(values: Array2<f64>, pixel_size: f64) -> Result<Self> {
        let mask = values.mapv(f64::is_finite);
        Self::with_mask(values, mask, pixel_size)
    }

    pub fn with_mask(mut values: Array2<f64>, mask: Array2<bool>, pixel_size: f64) -> Result<Self> {
        let (h, w) = values.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidInput("raster must be at least 1x1".into()));
        }
        if mask.dim() != values.dim() {
            return Err(Error::Shape(format!(
                "mask {:?} does not match values {:?}",
                mask.dim(),
                values.dim()
            )));
        }
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "pixel size must be positive, got {pixel_size}"
            )));
        }
        Zip::from(&mut values).and(&mask).for_each(|v, &m| {
            if !m {
                *v = 0.0;
            }
        });
        if Zip::from(&values).and(&mask).any(|v, &m| m && !v.is_finite()) {
            return Err(Error::InvalidInput(
                "valid pixels must hold finite values".into(),
            ));
        }
        Ok(Self {
            values,
            mask,
            pixel_size,
            units: String::new(),
        })
    }

    pub fn constant(width: usize, height: usize, value: f64, pixel_size: f64) -> Result<Self> {
        Self::new(Array2::from_elem((height, width), value), pixel_size)
    }

    pub fn with_units(mut self, units: impl Into<String>) -> Self {
        self.units = units.into();
        self
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn height(&self) -> usize {
        self.values.nrows()
    }

    /// `(height, width)`, matching ndarray's row-major convention.
    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn units(&self) -> &str {
        &self.units
    }

    /// Values with masked pixels set to zero.
    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn mask(&self) -> ArrayView2<'_, bool> {
        self.mask.view()
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        if *self.mask.get((row, col))? {
            Some(self.values[(row, col)])
        } else {
            None
        }
    }

    pub fn is_fully_valid(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(self.mask.iter())
            .filter_map(|(&v, &m)| m.then_some(v))
    }

    pub fn mean(&self) -> Option<f64> {
        let n = self.valid_count();
        (n > 0).then(|| self.valid_values().sum::<f64>() / n as f64)
    }

    /// Population standard deviation over valid pixels.
    pub fn std(&self) -> Option<f64> {
        let mean = self.mean()?;
        let n = self.valid_count() as f64;
        let var = self.valid_values().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(var.sqrt())
    }

    pub fn min_max(&self) -> Option<(f64, f64)> {
        self.valid_values().fold(None, |acc, v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }

    /// Same geometry and mask, new values. Masked positions of `values` are ignored.
    pub fn with_values(&self, values: Array2<f64>) -> Result<Self> {
        if values.dim() != self.values.dim() {
            return Err(Error::Shape(format!(
                "replacement values {:?} do not match grid {:?}",
                values.dim(),
                self.values.dim()
            )));
        }
        let mut out = Self::with_mask(values, self.mask.clone(), self.pixel_size)?;
        out.units = self.units.clone();
        Ok(out)
    }

    /// Applies `f` to every valid value.
    pub fn map_valid(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let mut values = self.values.clone();
        Zip::from(&mut values).and(&self.mask).for_each(|v, &m| {
            if m {
                *v = f(*v);
            }
        });
        self.with_values(values)
    }

    pub fn with_pixel_size(&self, pixel_size: f64) -> Result<Self> {
        let mut out = Self::with_mask(self.values.clone(), self.mask.clone(), pixel_size)?;
        out.units = self.units.clone();
        Ok(out)
    }

    /// Values as an owned array, NaN where masked.
    pub fn to_nan_array(&self) -> Array2<f64> {
        let mut out = self.values.clone();
        Zip::from(&mut out).and(&self.mask).for_each(|v, &m| {
            if !m {
                *v = f64::NAN;
            }
        });
        out
    }

    /// Extracts a rectangular window.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if row + height > self.height() || col + width > self.width() {
            return Err(Error::Shape(format!(
                "crop {height}x{width} at ({row},{col}) exceeds {}x{} raster",
                self.height(),
                self.width()
            )));
        }
        let vals = self
            .values
            .slice(ndarray::s![row..row + height, col..col + width])
            .to_owned();
        let mask = self
            .mask
            .slice(ndarray::s![row..row + height, col..col + width])
            .to_owned();
        let mut out = Self::with_mask(vals, mask, self.pixel_size)?;
        out.units = self.units.clone();
        Ok(out)
    }
}

fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs())
}

/// A low-resolution LST raster with its high-resolution NDVI guide.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePair {
    lst_lr: Grid2D,
    ndvi_hr: Grid2D,
    scale_factor: usize,
}

impl ScenePair {
    pub fn new(lst_lr: Grid2D, ndvi_hr: Grid2D, scale_factor: usize) -> Result<Self> {
        if scale_factor < 2 {
            return Err(Error::InvalidInput(format!(
                "scale factor must be at least 2, got {scale_factor}"
            )));
        }
        if ndvi_hr.width() != scale_factor * lst_lr.width()
            || ndvi_hr.height() != scale_factor * lst_lr.height()
        {
            return Err(Error::Shape(format!(
                "NDVI {}x{} is not {scale_factor}x the LST {}x{}",
                ndvi_hr.height(),
                ndvi_hr.width(),
                lst_lr.height(),
                lst_lr.width()
            )));
        }
        if !rel_close(lst_lr.pixel_size(), scale_factor as f64 * ndvi_hr.pixel_size()) {
            return Err(Error::Shape(format!(
                "LST pixel size {} m is not {scale_factor}x the NDVI pixel size {} m",
                lst_lr.pixel_size(),
                ndvi_hr.pixel_size()
            )));
        }
        Ok(Self {
            lst_lr,
            ndvi_hr,
            scale_factor,
        })
    }

    pub fn lst_lr(&self) -> &Grid2D {
        &self.lst_lr
    }

    pub fn ndvi_hr(&self) -> &Grid2D {
        &self.ndvi_hr
    }

    pub fn scale_factor(&self) -> usize {
        self.scale_factor
    }
}

/// A scene pair with its high-resolution reference temperature.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalTriple {
    pair: ScenePair,
    ref_hr: Grid2D,
}

impl EvalTriple {
    pub fn new(pair: ScenePair, ref_hr: Grid2D) -> Result<Self> {
        if ref_hr.dim() != pair.ndvi_hr().dim() {
            return Err(Error::Shape(format!(
                "reference {:?} does not match NDVI grid {:?}",
                ref_hr.dim(),
                pair.ndvi_hr().dim()
            )));
        }
        Ok(Self { pair, ref_hr })
    }

    pub fn pair(&self) -> &ScenePair {
        &self.pair
    }

    pub fn ref_hr(&self) -> &Grid2D {
        &self.ref_hr
    }
}

/// Dataset-wide standardization statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub lst_mean: f64,
    pub lst_std: f64,
    pub ndvi_mean: f64,
    pub ndvi_std: f64,
}

impl NormStats {
    pub fn new(lst_mean: f64, lst_std: f64, ndvi_mean: f64, ndvi_std: f64) -> Result<Self> {
        let stats = Self {
            lst_mean,
            lst_std,
            ndvi_mean,
            ndvi_std,
        };
        stats.validate()?;
        Ok(stats)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if !ok(self.lst_std) || !ok(self.ndvi_std) {
            return Err(Error::Degenerate(format!(
                "standard deviations must be positive (lst {}, ndvi {})",
                self.lst_std, self.ndvi_std
            )));
        }
        if !self.lst_mean.is_finite() || !self.ndvi_mean.is_finite() {
            return Err(Error::Degenerate("non-finite mean".into()));
        }
        Ok(())
    }

    /// Pools the valid pixels of every LST and NDVI raster in the set.
    ///
    /// A zero spread (e.g. a constant-scene dataset) is replaced by 1 so the
    /// transform stays a pure centering.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a ScenePair>) -> Result<Self> {
        let mut lst = Moments::default();
        let mut ndvi = Moments::default();
        for p in pairs {
            p.lst_lr().valid_values().for_each(|v| lst.push(v));
            p.ndvi_hr().valid_values().for_each(|v| ndvi.push(v));
        }
        if lst.n == 0 || ndvi.n == 0 {
            return Err(Error::Empty("no valid pixels to compute statistics".into()));
        }
        let spread = |s: f64| if s > 1e-12 { s } else { 1.0 };
        Self::new(lst.mean(), spread(lst.std()), ndvi.mean(), spread(ndvi.std()))
    }
}

#[derive(Default)]
struct Moments {
    n: usize,
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    fn std(&self) -> f64 {
        let m = self.mean();
        (self.sum_sq / self.n as f64 - m * m).max(0.0).sqrt()
    }
}

/// Mean of each `r`×`r` block over its valid pixels.
pub fn block_mean(hr: &Grid2D, r: usize) -> Result<Grid2D> {
    if r == 0 || hr.width() % r != 0 || hr.height() % r != 0 {
        return Err(Error::Shape(format!(
            "{}x{} raster is not divisible by block size {r}",
            hr.height(),
            hr.width()
        )));
    }
    let (h, w) = (hr.height() / r, hr.width() / r);
    let mut values = Array2::zeros((h, w));
    let mut mask = Array2::from_elem((h, w), false);
    for i in 0..h {
        for j in 0..w {
            let mut sum = 0.0;
            let mut n = 0usize;
            for di in 0..r {
                for dj in 0..r {
                    if let Some(v) = hr.get(i * r + di, j * r + dj) {
                        sum += v;
                        n += 1;
                    }
                }
            }
            if n > 0 {
                values[(i, j)] = sum / n as f64;
                mask[(i, j)] = true;
            }
        }
    }
    let mut out = Grid2D::with_mask(values, mask, hr.pixel_size() * r as f64)?;
    out.units = hr.units.clone();
    Ok(out)
}

/// Replicates every pixel into an `r`×`r` block (nearest-neighbour upsampling).
pub fn replicate(lr: &Grid2D, r: usize) -> Result<Grid2D> {
    if r == 0 {
        return Err(Error::InvalidInput("replication factor must be positive".into()));
    }
    let (h, w) = lr.dim();
    let values = Array2::from_shape_fn((h * r, w * r), |(i, j)| lr.values[(i / r, j / r)]);
    let mask = Array2::from_shape_fn((h * r, w * r), |(i, j)| lr.mask[(i / r, j / r)]);
    let mut out = Grid2D::with_mask(values, mask, lr.pixel_size() / r as f64)?;
    out.units = lr.units.clone();
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    width: usize,
    height: usize,
    pixel_size_m: f64,
    #[serde(default)]
    units: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stats: Option<SidecarStats>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SidecarStats {
    valid: usize,
    mean: f64,
    std: f64,
    min: f64,
    max: f64,
}

/// Sidecar path for a payload path: same stem, `.json` extension.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes the `f32` payload to `path` and the JSON sidecar next to it.
pub fn save_raster(grid: &Grid2D, path: &Path) -> Result<()> {
    let mut payload = Vec::with_capacity(grid.width() * grid.height() * 4);
    for (&v, &m) in grid.values.iter().zip(grid.mask.iter()) {
        let v = if m { v as f32 } else { f32::NAN };
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let stats = match (grid.mean(), grid.std(), grid.min_max()) {
        (Some(mean), Some(std), Some((min, max))) => Some(SidecarStats {
            valid: grid.valid_count(),
            mean,
            std,
            min,
            max,
        }),
        _ => None,
    };
    let sidecar = Sidecar {
        width: grid.width(),
        height: grid.height(),
        pixel_size_m: grid.pixel_size(),
        units: grid.units.clone(),
        stats,
    };
    write_atomic(path, &payload)?;
    let json = serde_json::to_vec_pretty(&sidecar)?;
    write_atomic(&sidecar_path(path), &json)
}

/// Reads a raster written by [`save_raster`]. NaN payload values become masked pixels.
pub fn load_raster(path: &Path) -> Result<Grid2D> {
    let side = sidecar_path(path);
    let meta = fs::read(&side).map_err(|e| Error::io(&side, e))?;
    let meta: Sidecar =
        serde_json::from_slice(&meta).map_err(|e| Error::format(&side, e.to_string()))?;
    if !(meta.pixel_size_m > 0.0 && meta.pixel_size_m.is_finite()) {
        return Err(Error::format(
            &side,
            format!("non-positive pixel size {}", meta.pixel_size_m),
        ));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = meta.width * meta.height * 4;
    if meta.width == 0 || meta.height == 0 || bytes.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "payload has {} bytes, header expects {}x{} f32 = {expected}",
                bytes.len(),
                meta.height,
                meta.width
            ),
        ));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let values = Array2::from_shape_vec((meta.height, meta.width), data)
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(Grid2D::new(values, meta.pixel_size_m)?.with_units(meta.units))
}

/// Writes to a sibling temp file, then renames over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Reads a comma-separated grid; empty cells and `nan` are masked.
pub fn load_csv(path: &Path, pixel_size: f64) -> Result<Grid2D> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        let row = record
            .iter()
            .map(|cell| {
                if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
                    Ok(f64::NAN)
                } else {
                    cell.parse::<f64>()
                        .map_err(|e| Error::format(path, format!("bad cell '{cell}': {e}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let height = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    if height == 0 || width == 0 || rows.iter().any(|r| r.len() != width) {
        return Err(Error::format(path, "ragged or empty csv grid"));
    }
    let values = Array2::from_shape_vec((height, width), rows.concat())
        .map_err(|e| Error::format(path, e.to_string()))?;
    Grid2D::new(values, pixel_size)
}

pub fn save_csv(grid: &Grid2D, path: &Path) -> Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    for i in 0..grid.height() {
        let row: Vec<String> = (0..grid.width())
            .map(|j| grid.get(i, j).map_or_else(|| "nan".to_string(), |v| v.to_string()))
            .collect();
        writer
            .write_record(&row)
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::format(path, e.to_string()))?;
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn nan_values_become_masked() {
        let g = Grid2D::new(array![[f64::NAN, 1.0], [2.0, 3.0]], 10.0).unwrap();
        assert_eq!(g.get(0, 0), None);
        assert_eq!(g.valid_count(), 3);
        assert_eq!(g.mean(), Some(2.0));
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(Grid2D::constant(2, 2, 1.0, 0.0).is_err());
        assert!(Grid2D::constant(2, 2, 1.0, -3.0).is_err());
        assert!(Grid2D::new(Array2::zeros((0, 3)), 1.0).is_err());
    }

    #[test]
    fn block_mean_examples() {
        let g = Grid2D::constant(8, 8, 300.0, 250.0).unwrap();
        let b = block_mean(&g, 4).unwrap();
        assert_eq!(b.dim(), (2, 2));
        assert!(b.valid_values().all(|v| v == 300.0));
        assert_eq!(b.pixel_size(), 1000.0);

        let g = Grid2D::new(array![[1.0, 2.0], [3.0, 4.0]], 1.0).unwrap();
        assert_eq!(block_mean(&g, 2).unwrap().get(0, 0), Some(2.5));

        let g = Grid2D::new(array![[f64::NAN, f64::NAN], [f64::NAN, 7.0]], 1.0).unwrap();
        assert_eq!(block_mean(&g, 2).unwrap().get(0, 0), Some(7.0));

        let g = Grid2D::new(Array2::from_elem((2, 2), f64::NAN), 1.0).unwrap();
        assert_eq!(block_mean(&g, 2).unwrap().get(0, 0), None);

        let g = Grid2D::constant(6, 8, 1.0, 1.0).unwrap();
        assert!(matches!(block_mean(&g, 4), Err(Error::Shape(_))));
    }

    #[test]
    fn block_mean_inverts_replication() {
        let g = Grid2D::new(array![[1.5, -2.0, 3.25], [0.0, 9.0, 4.0]], 1000.0).unwrap();
        let up = replicate(&g, 4).unwrap();
        assert_eq!(block_mean(&up, 4).unwrap(), g);
    }

    #[test]
    fn scene_pair_invariants() {
        let lst = Grid2D::constant(4, 4, 300.0, 1000.0).unwrap();
        let ndvi = Grid2D::constant(16, 16, 0.5, 250.0).unwrap();
        assert!(ScenePair::new(lst.clone(), ndvi.clone(), 4).is_ok());
        assert!(ScenePair::new(lst.clone(), ndvi.clone(), 2).is_err());
        let bad = Grid2D::constant(16, 16, 0.5, 200.0).unwrap();
        assert!(ScenePair::new(lst, bad, 4).is_err());
    }

    #[test]
    fn save_writes_expected_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.f32raw");
        let g = Grid2D::constant(3, 2, 300.0, 250.0).unwrap();
        save_raster(&g, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 24);
        assert!(bytes
            .chunks_exact(4)
            .all(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) == 300.0));

        let g = Grid2D::new(array![[1.0, f64::NAN], [2.0, 3.0]], 1.0).unwrap();
        save_raster(&g, &path).unwrap();
        let nan_count = fs::read(&path)
            .unwrap()
            .chunks_exact(4)
            .filter(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]).is_nan())
            .count();
        assert_eq!(nan_count, 1);
    }

    #[test]
    fn load_detects_nan_and_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.f32raw");
        let g = Grid2D::new(array![[f64::NAN, 1.0], [2.0, 3.0]], 30.0).unwrap();
        save_raster(&g, &path).unwrap();
        let back = load_raster(&path).unwrap();
        assert!(!back.mask()[(0, 0)]);
        assert_eq!(back, g);

        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(12);
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_raster(&path), Err(Error::Format { .. })));

        assert!(matches!(
            load_raster(&dir.path().join("missing.f32raw")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn load_rejects_nonpositive_pixel_size() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.f32raw");
        save_raster(&Grid2D::constant(2, 2, 1.0, 1.0).unwrap(), &path).unwrap();
        let side = sidecar_path(&path);
        let text = fs::read_to_string(&side).unwrap();
        fs::write(&side, text.replace("\"pixel_size_m\": 1.0", "\"pixel_size_m\": 0.0")).unwrap();
        assert!(matches!(load_raster(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.csv");
        let g = Grid2D::new(array![[1.5, f64::NAN, 3.0], [4.0, 5.0, -6.25]], 2.0).unwrap();
        save_csv(&g, &path).unwrap();
        assert_eq!(load_csv(&path, 2.0).unwrap(), g);
    }

    #[test]
    fn norm_stats_pool_all_pairs() {
        let lst = Grid2D::new(array![[290.0, 310.0]], 1000.0).unwrap();
        let ndvi = Grid2D::new(Array2::from_elem((2, 4), 0.5), 500.0).unwrap();
        let pair = ScenePair::new(lst, ndvi, 2).unwrap();
        let s = NormStats::from_pairs([&pair]).unwrap();
        assert_eq!(s.lst_mean, 300.0);
        assert_eq!(s.lst_std, 10.0);
        assert_eq!(s.ndvi_std, 1.0);
        assert!(NormStats::new(0.0, 0.0, 0.0, 1.0).is_err());
    }
}
