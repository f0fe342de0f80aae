//! Dataset manifests and random patch extraction.

use std::path::{Path, PathBuf};

use crate::data::image_plane::ImagePlane;
use crate::error::{Error, Result};
use crate::tensor::RngStream;

/// A training dataset: image paths plus the sampling geometry.
///
/// The manifest file is plain text with one image path per line; blank lines
/// and lines starting with `#` are ignored. Relative paths are resolved
/// against the manifest file's directory.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub paths: Vec<PathBuf>,
    /// Super-resolution factor (2, 4, or 8).
    pub scale: usize,
    /// Side length of square HR patches.
    pub patch_size: usize,
    /// Number of patches drawn per sampling round.
    pub patches_per_epoch: usize,
}

impl DatasetManifest {
    pub fn from_file(
        path: impl AsRef<Path>,
        scale: usize,
        patch_size: usize,
        patches_per_epoch: usize,
    ) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Data(format!("cannot read manifest {}: {e}", path.display()))
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut paths = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let p = PathBuf::from(line);
            paths.push(if p.is_relative() { base.join(p) } else { p });
        }
        if paths.is_empty() {
            return Err(Error::Data(format!(
                "manifest {} lists no images",
                path.display()
            )));
        }
        Ok(DatasetManifest {
            paths,
            scale,
            patch_size,
            patches_per_epoch,
        })
    }

    /// Check the sampling geometry against the generator's downsampling
    /// depth: the patch must tile into `2^n_half` twice-halvable blocks and
    /// into scale-factor cells, and every listed path must exist.
    pub fn validate(&self, n_half: usize) -> Result<()> {
        if !matches!(self.scale, 2 | 4 | 8) {
            return Err(Error::Config(format!(
                "scale must be 2, 4, or 8, got {}",
                self.scale
            )));
        }
        let div = 1usize << n_half;
        if self.patch_size == 0 || self.patch_size % div != 0 {
            return Err(Error::Config(format!(
                "patch size {} is not divisible by 2^{n_half} = {div}",
                self.patch_size
            )));
        }
        if self.patch_size % self.scale != 0 {
            return Err(Error::Config(format!(
                "patch size {} is not divisible by scale {}",
                self.patch_size, self.scale
            )));
        }
        if self.patches_per_epoch == 0 {
            return Err(Error::Config("patches per epoch must be >= 1".into()));
        }
        for p in &self.paths {
            if !p.is_file() {
                return Err(Error::Data(format!(
                    "manifest image does not exist: {}",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}

/// Decode every image listed in the manifest.
pub fn load_images(manifest: &DatasetManifest) -> Result<Vec<ImagePlane>> {
    manifest
        .paths
        .iter()
        .map(|p| {
            ImagePlane::load(p)
                .map_err(|e| Error::Data(format!("cannot decode {}: {e}", p.display())))
        })
        .collect()
}

/// Draw `count` square HR patches of side `size` with uniformly random
/// top-left corners: each draw picks an eligible image uniformly, then a
/// corner uniformly among all valid positions. Deterministic for a given
/// stream state. Images smaller than `size` in either dimension are skipped
/// (one aggregate warning per call); if none is large enough this is an
/// error.
pub fn sample_patches(
    images: &[ImagePlane],
    stream: &mut RngStream,
    count: usize,
    size: usize,
) -> Result<Vec<ImagePlane>> {
    if size == 0 {
        return Err(Error::InvalidParameter("patch size must be >= 1".into()));
    }
    let eligible: Vec<usize> = (0..images.len())
        .filter(|&i| images[i].width() >= size && images[i].height() >= size)
        .collect();
    let skipped = images.len() - eligible.len();
    if skipped > 0 {
        eprintln!("warning: {skipped} image(s) smaller than patch size {size} skipped");
    }
    if eligible.is_empty() {
        return Err(Error::Data(format!(
            "no source image is at least {size}x{size}"
        )));
    }
    (0..count)
        .map(|_| {
            let img = &images[eligible[stream.next_below(eligible.len())]];
            let x0 = stream.next_below(img.width() - size + 1);
            let y0 = stream.next_below(img.height() - size + 1);
            img.crop(x0, y0, size, size)
        })
        .collect()
}
