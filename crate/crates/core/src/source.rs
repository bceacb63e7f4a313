//! Where pixels come from: image files under a data root, or in-memory maps
//! for generated data.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::raster::Image;

/// Environment variable naming the directory image URIs are resolved against.
pub const DATA_ROOT_ENV: &str = "LTFS_DATA_ROOT";

/// Integer label raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u16>,
}

impl LabelMap {
    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.data[y * self.width + x]
    }
}

pub trait ImageSource: Sync {
    fn image(&self, uri: &str) -> Result<Image>;
    fn label_map(&self, uri: &str) -> Result<LabelMap>;
}

pub struct DirSource {
    pub root: PathBuf,
}

impl DirSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DirSource { root: root.into() }
    }

    /// Root from `LTFS_DATA_ROOT`, else `fallback`.
    pub fn from_env_or(fallback: &Path) -> Self {
        match std::env::var_os(DATA_ROOT_ENV) {
            Some(root) => DirSource::new(root),
            None => DirSource::new(fallback),
        }
    }
}

impl ImageSource for DirSource {
    fn image(&self, uri: &str) -> Result<Image> {
        Image::load(&self.root.join(uri))
    }

    fn label_map(&self, uri: &str) -> Result<LabelMap> {
        let path = self.root.join(uri);
        let img = image::open(&path)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?
            .into_luma16();
        Ok(LabelMap {
            width: img.width() as usize,
            height: img.height() as usize,
            data: img.into_raw(),
        })
    }
}

#[derive(Default, Clone)]
pub struct MemorySource {
    pub images: BTreeMap<String, Image>,
    pub labels: BTreeMap<String, LabelMap>,
}

impl ImageSource for MemorySource {
    fn image(&self, uri: &str) -> Result<Image> {
        self.images
            .get(uri)
            .cloned()
            .ok_or_else(|| Error::Image(format!("no image '{uri}'")))
    }

    fn label_map(&self, uri: &str) -> Result<LabelMap> {
        self.labels
            .get(uri)
            .cloned()
            .ok_or_else(|| Error::Image(format!("no label map '{uri}'")))
    }
}

pub fn write_label_map(map: &LabelMap, path: &Path) -> Result<()> {
    let buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(
        map.width as u32,
        map.height as u32,
        map.data.clone(),
    )
    .ok_or_else(|| Error::Image("label map size mismatch".into()))?;
    buf.save(path)
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_map_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let map = LabelMap {
            width: 3,
            height: 2,
            data: vec![0, 1, 2, 300, 0, 7],
        };
        write_label_map(&map, &dir.path().join("s.png")).unwrap();
        let back = DirSource::new(dir.path()).label_map("s.png").unwrap();
        assert_eq!(back, map);
    }
}
