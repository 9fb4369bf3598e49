//! Content-addressed PNG storage for captures and crops.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use crate::error::{Error, Result};
use crate::imaging::{ImageBuffer, ImageRef};

/// Images keyed by [`ImageBuffer::content_id`]. Clones share storage, so a
/// store can be snapshotted cheaply; writing the same image twice is a no-op.
#[derive(Debug, Clone, Default)]
pub struct BlobStore {
    dir: Option<PathBuf>,
    cache: Arc<RwLock<HashMap<String, ImageBuffer>>>,
}

impl BlobStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Files are written to `dir/<id>.png`; existing files are read lazily.
    pub fn on_disk(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            dir: Some(dir),
            cache: Arc::default(),
        })
    }

    fn path_for(dir: &Path, id: &str) -> PathBuf {
        dir.join(format!("{id}.png"))
    }

    pub fn put(&self, img: &ImageBuffer) -> Result<ImageRef> {
        let id = img.content_id();
        if self.cache.read().expect("blob cache poisoned").contains_key(&id) {
            return Ok(ImageRef(id));
        }
        if let Some(dir) = &self.dir {
            let path = Self::path_for(dir, &id);
            if !path.exists() {
                img.write_png(&path)?;
            }
        }
        self.cache
            .write()
            .expect("blob cache poisoned")
            .insert(id.clone(), img.clone());
        Ok(ImageRef(id))
    }

    pub fn get(&self, r: &ImageRef) -> Result<ImageBuffer> {
        if let Some(img) = self.cache.read().expect("blob cache poisoned").get(&r.0) {
            return Ok(img.clone());
        }
        let dir = self
            .dir
            .as_ref()
            .ok_or_else(|| Error::NotFound(format!("image {}", r.0)))?;
        let path = Self::path_for(dir, &r.0);
        if !path.exists() {
            return Err(Error::NotFound(format!("image {}", r.0)));
        }
        let img = ImageBuffer::read_png(&path)?;
        self.cache
            .write()
            .expect("blob cache poisoned")
            .insert(r.0.clone(), img.clone());
        Ok(img)
    }

    pub fn contains(&self, r: &ImageRef) -> bool {
        self.cache.read().expect("blob cache poisoned").contains_key(&r.0)
            || self.dir.as_ref().is_some_and(|d| Self::path_for(d, &r.0).exists())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_round_trip_survives_a_fresh_handle() {
        let tmp = tempfile::tempdir().unwrap();
        let img = ImageBuffer::from_fn(5, 3, |x, y| [x as u8, y as u8, 7]).unwrap();
        let r = BlobStore::on_disk(tmp.path()).unwrap().put(&img).unwrap();
        let fresh = BlobStore::on_disk(tmp.path()).unwrap();
        assert!(fresh.contains(&r));
        assert_eq!(fresh.get(&r).unwrap(), img);
    }

    #[test]
    fn unknown_ref_is_not_found() {
        let s = BlobStore::in_memory();
        assert!(matches!(s.get(&ImageRef("img-00".into())), Err(Error::NotFound(_))));
    }
}
