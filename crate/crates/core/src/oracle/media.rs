//! Content-addressed image storage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Opaque handle of a stored image: `<16 hex digits>.<ext>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageHandle(pub String);

impl ImageHandle {
    pub fn for_bytes(bytes: &[u8], ext: &str) -> Self {
        let digest = Sha256::digest(bytes);
        ImageHandle(format!("{}.{ext}", &hex::encode(digest)[..16]))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Handles never contain path separators or parent references.
    pub fn is_well_formed(&self) -> bool {
        let s = self.0.as_str();
        !s.is_empty()
            && s.len() <= 64
            && !s.starts_with('.')
            && s.chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_')
    }
}

impl std::fmt::Display for ImageHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone)]
pub struct MediaStore {
    root: PathBuf,
}

impl MediaStore {
    pub fn new(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn store(&self, bytes: &[u8], ext: &str) -> std::io::Result<ImageHandle> {
        let handle = ImageHandle::for_bytes(bytes, ext);
        let path = self.root.join(handle.as_str());
        if !path.exists() {
            std::fs::write(&path, bytes)?;
        }
        Ok(handle)
    }

    pub fn path(&self, handle: &ImageHandle) -> Option<PathBuf> {
        if !handle.is_well_formed() {
            return None;
        }
        let path = self.root.join(handle.as_str());
        path.exists().then_some(path)
    }
}

pub fn content_type(handle: &ImageHandle) -> &'static str {
    match handle.as_str().rsplit('.').next() {
        Some("png") => "image/png",
        Some("jpg") | Some("jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("svg") => "image/svg+xml",
        _ => "application/octet-stream",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_is_content_addressed() {
        let dir = tempfile::tempdir().unwrap();
        let store = MediaStore::new(dir.path()).unwrap();
        let a = store.store(b"abc", "png").unwrap();
        let b = store.store(b"abc", "png").unwrap();
        assert_eq!(a, b);
        assert!(store.path(&a).is_some());
        assert!(store.path(&ImageHandle("../etc/passwd".into())).is_none());
    }
}
