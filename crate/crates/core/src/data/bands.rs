use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use ndarray::Array2;
use tiff::decoder::{Decoder, DecodingResult};

use crate::error::{Error, Result};

/// Band names of the distributed patches in channel order (ascending name).
/// The cirrus band B10 is not part of the distribution format.
pub const BAND_NAMES: [&str; 12] = [
    "B01", "B02", "B03", "B04", "B05", "B06", "B07", "B08", "B09", "B11", "B12", "B8A",
];

/// Grid side length of each band within one 1.2 km patch.
pub fn native_size(band: &str) -> Option<usize> {
    match band {
        "B02" | "B03" | "B04" | "B08" => Some(120),
        "B05" | "B06" | "B07" | "B8A" | "B11" | "B12" => Some(60),
        "B01" | "B09" => Some(20),
        _ => None,
    }
}

/// Channel index of a band in [`BAND_NAMES`] order.
pub fn band_index(band: &str) -> Option<usize> {
    BAND_NAMES.iter().position(|b| *b == band)
}

/// Raw digital numbers of all 12 bands of one patch at native resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct BandStack {
    pub patch_id: String,
    pub bands: BTreeMap<String, Array2<u16>>,
}

impl BandStack {
    /// Checks the band set and per-band grid sizes.
    pub fn new(patch_id: impl Into<String>, bands: BTreeMap<String, Array2<u16>>) -> Result<Self> {
        let patch_id = patch_id.into();
        for name in BAND_NAMES {
            let grid = bands.get(name).ok_or_else(|| Error::MissingBand {
                band: name.into(),
                dir: patch_id.clone().into(),
            })?;
            let n = native_size(name).unwrap();
            if grid.dim() != (n, n) {
                return Err(Error::MalformedRaster {
                    path: format!("{patch_id}_{name}").into(),
                    reason: format!("expected {n}x{n}, got {:?}", grid.dim()),
                });
            }
        }
        if let Some(extra) = bands.keys().find(|k| band_index(k).is_none()) {
            return Err(Error::MalformedRaster {
                path: format!("{patch_id}_{extra}").into(),
                reason: "unexpected band".into(),
            });
        }
        Ok(Self { patch_id, bands })
    }

    pub fn native_size(&self) -> BTreeMap<String, usize> {
        self.bands
            .iter()
            .map(|(k, v)| (k.clone(), v.nrows()))
            .collect()
    }
}

fn read_raster(path: &Path, expected: usize) -> Result<Array2<u16>> {
    let malformed = |reason: String| Error::MalformedRaster {
        path: path.to_path_buf(),
        reason,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut dec = Decoder::new(BufReader::new(file)).map_err(|e| malformed(e.to_string()))?;
    let (w, h) = dec.dimensions().map_err(|e| malformed(e.to_string()))?;
    if (w as usize, h as usize) != (expected, expected) {
        return Err(malformed(format!("expected {expected}x{expected}, got {w}x{h}")));
    }
    let data: Vec<u16> = match dec.read_image().map_err(|e| malformed(e.to_string()))? {
        DecodingResult::U16(v) => v,
        DecodingResult::U8(v) => v.into_iter().map(u16::from).collect(),
        DecodingResult::I16(v) => v.into_iter().map(|x| x.max(0) as u16).collect(),
        other => {
            return Err(malformed(format!(
                "unsupported sample format ({} values)",
                match other {
                    DecodingResult::F32(v) => v.len(),
                    DecodingResult::F64(v) => v.len(),
                    _ => 0,
                }
            )))
        }
    };
    if data.len() != expected * expected {
        return Err(malformed(format!("{} samples, expected single band", data.len())));
    }
    Array2::from_shape_vec((expected, expected), data).map_err(|e| malformed(e.to_string()))
}

/// Reads `<patch_id>_<band>.tif` for all 12 bands from a patch directory
/// whose name is the patch id.
pub fn read_band_stack(patch_directory: &Path) -> Result<BandStack> {
    let patch_id = patch_directory
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::ParseError(format!("bad patch directory {}", patch_directory.display())))?
        .to_string();
    let mut bands = BTreeMap::new();
    for name in BAND_NAMES {
        let path = patch_directory.join(format!("{patch_id}_{name}.tif"));
        if !path.is_file() {
            return Err(Error::MissingBand {
                band: name.into(),
                dir: patch_directory.to_path_buf(),
            });
        }
        bands.insert(name.to_string(), read_raster(&path, native_size(name).unwrap())?);
    }
    BandStack::new(patch_id, bands)
}

/// Writes one single-band 16-bit raster.
pub fn write_raster(path: &Path, grid: &Array2<u16>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = tiff::encoder::TiffEncoder::new(std::io::BufWriter::new(file)).map_err(|e| {
        Error::MalformedRaster {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }
    })?;
    let (h, w) = grid.dim();
    let data: Vec<u16> = grid.iter().copied().collect();
    enc.write_image::<tiff::encoder::colortype::Gray16>(w as u32, h as u32, &data)
        .map_err(|e| Error::MalformedRaster {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Writes a patch directory in the distribution layout; band values are
    /// `base + channel index`.
    pub(crate) fn write_patch_dir(root: &Path, id: &str, base: u16, skip: &[&str]) -> std::path::PathBuf {
        let dir = root.join(id);
        std::fs::create_dir_all(&dir).unwrap();
        for (i, name) in BAND_NAMES.iter().enumerate() {
            if skip.contains(name) {
                continue;
            }
            let n = native_size(name).unwrap();
            let grid = Array2::from_elem((n, n), base + i as u16);
            write_raster(&dir.join(format!("{id}_{name}.tif")), &grid).unwrap();
        }
        dir
    }

    #[test]
    fn band_order_is_ascending() {
        let mut sorted = BAND_NAMES.to_vec();
        sorted.sort();
        assert_eq!(sorted, BAND_NAMES.to_vec());
        assert!(!BAND_NAMES.contains(&"B10"));
    }

    #[test]
    fn reads_full_directory() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = write_patch_dir(tmp.path(), "S2A_MSIL2A_20170613_1_2", 100, &[]);
        let s = read_band_stack(&dir).unwrap();
        assert_eq!(s.patch_id, "S2A_MSIL2A_20170613_1_2");
        assert_eq!(s.bands["B02"].dim(), (120, 120));
        assert_eq!(s.bands["B8A"].dim(), (60, 60));
        assert_eq!(s.bands["B01"].dim(), (20, 20));
        assert_eq!(s.native_size()["B09"], 20);
        assert_eq!(s.bands["B03"][(5, 5)], 102);
    }

    #[test]
    fn missing_band_is_reported() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = write_patch_dir(tmp.path(), "p", 0, &["B02"]);
        match read_band_stack(&dir) {
            Err(Error::MissingBand { band, .. }) => assert_eq!(band, "B02"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_dimensions_are_malformed() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = write_patch_dir(tmp.path(), "p", 0, &[]);
        write_raster(&dir.join("p_B04.tif"), &Array2::zeros((60, 60))).unwrap();
        assert!(matches!(read_band_stack(&dir), Err(Error::MalformedRaster { .. })));
        std::fs::write(dir.join("p_B04.tif"), b"not a tiff").unwrap();
        assert!(matches!(read_band_stack(&dir), Err(Error::MalformedRaster { .. })));
    }
}
