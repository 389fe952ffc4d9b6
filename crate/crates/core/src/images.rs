//! Content-addressed image storage.
//!
//! Images are kept exactly as uploaded, named by the SHA-256 of their bytes
//! plus an extension derived from the detected format.

use std::fmt;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ImageRef(String);

impl ImageRef {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn digest(&self) -> &str {
        self.0.split('.').next().unwrap_or_default()
    }

    fn for_bytes(bytes: &[u8], format: ImageFormat) -> Self {
        let digest = hex::encode(Sha256::digest(bytes));
        let ext = format.extensions_str().first().copied().unwrap_or("img");
        ImageRef(format!("{digest}.{ext}"))
    }
}

impl fmt::Display for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for ImageRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (digest, ext) = s
            .split_once('.')
            .ok_or_else(|| Error::BadRequest(format!("malformed image reference `{s}`")))?;
        let valid = digest.len() == 64
            && digest.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
            && !ext.is_empty()
            && ext.bytes().all(|b| b.is_ascii_alphanumeric());
        if !valid {
            return Err(Error::BadRequest(format!("malformed image reference `{s}`")));
        }
        Ok(ImageRef(s.to_owned()))
    }
}

impl TryFrom<String> for ImageRef {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ImageRef> for String {
    fn from(r: ImageRef) -> String {
        r.0
    }
}

/// Decode encoded image bytes, rejecting anything without at least one pixel.
pub fn decode(bytes: &[u8]) -> Result<DynamicImage> {
    let img = image::load_from_memory(bytes).map_err(|e| Error::UndecodableImage(e.to_string()))?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::UndecodableImage("image has no pixels".into()));
    }
    Ok(img)
}

pub fn encode_png(img: &DynamicImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::storage("encoding png", e))?;
    Ok(out.into_inner())
}

#[derive(Debug)]
pub struct ImageStore {
    dir: PathBuf,
}

impl ImageStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::storage("creating image directory", e))?;
        Ok(Self { dir })
    }

    /// Validate and persist an image, returning its content address.
    /// Storing the same bytes twice is a no-op.
    pub fn put(&self, bytes: &[u8]) -> Result<ImageRef> {
        let format = image::guess_format(bytes).map_err(|e| Error::UndecodableImage(e.to_string()))?;
        decode(bytes)?;
        let r = ImageRef::for_bytes(bytes, format);
        let path = self.path_of(&r);
        if !path.exists() {
            let tmp = self.dir.join(format!(".{}.tmp", r.digest()));
            std::fs::write(&tmp, bytes).map_err(|e| Error::storage("writing image", e))?;
            std::fs::rename(&tmp, &path).map_err(|e| Error::storage("publishing image", e))?;
        }
        Ok(r)
    }

    pub fn get(&self, r: &ImageRef) -> Result<Vec<u8>> {
        std::fs::read(self.path_of(r)).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(format!("image {r}")),
            _ => Error::storage("reading image", e),
        })
    }

    pub fn contains(&self, r: &ImageRef) -> bool {
        self.path_of(r).is_file()
    }

    pub fn path_of(&self, r: &ImageRef) -> PathBuf {
        self.dir.join(r.as_str())
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}
