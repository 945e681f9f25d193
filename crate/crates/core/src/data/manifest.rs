use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{load_sample, save_image_png, save_mask_png, Sample};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Usage(format!("unknown split {s:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
}

/// List of image/mask pairs, one `image<TAB>mask` record per line with `-` for a missing
/// mask. Relative paths are resolved against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub split: Split,
    pub target_size: usize,
}

impl DatasetManifest {
    pub fn parse(text: &str, base: &Path, split: Split, target_size: usize) -> Result<Self> {
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (Some(image), Some(mask), None) = (fields.next(), fields.next(), fields.next())
            else {
                return Err(Error::Format {
                    path: base.to_path_buf(),
                    detail: format!("manifest line {}: expected `image<TAB>mask`", i + 1),
                });
            };
            entries.push(ManifestEntry {
                image: resolve(image),
                mask: (mask != "-").then(|| resolve(mask)),
            });
        }
        Ok(DatasetManifest {
            entries,
            split,
            target_size,
        })
    }

    pub fn load(path: &Path, split: Split, target_size: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, split, target_size)
    }

    /// Records with paths relative to `base` where possible.
    pub fn to_text(&self, base: &Path) -> String {
        let rel = |p: &Path| {
            p.strip_prefix(base)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned()
        };
        self.entries
            .iter()
            .map(|e| {
                let mask = e.mask.as_deref().map(rel).unwrap_or_else(|| "-".into());
                format!("{}\t{}\n", rel(&e.image), mask)
            })
            .collect()
    }

    /// Load every labelled sample; an entry without a mask is a usage error.
    pub fn load_samples(&self) -> Result<Vec<Sample>> {
        self.entries
            .iter()
            .map(|e| {
                let mask = e.mask.as_deref().ok_or_else(|| {
                    Error::Usage(format!("{} has no mask", e.image.display()))
                })?;
                load_sample(&e.image, mask, self.target_size)
            })
            .collect()
    }
}

/// Write `images/<id>.png`, `masks/<id>.png` and a `manifest.tsv` listing them under `dir`;
/// returns the manifest path.
pub fn save_samples(samples: &[Sample], dir: &Path) -> Result<PathBuf> {
    let (images, masks) = (dir.join("images"), dir.join("masks"));
    for d in [&images, &masks] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let image = images.join(format!("{}.png", s.id));
        let mask = masks.join(format!("{}.png", s.id));
        save_image_png(&image, &s.image)?;
        save_mask_png(&mask, &s.mask)?;
        entries.push(ManifestEntry {
            image,
            mask: Some(mask),
        });
    }
    let manifest = DatasetManifest {
        entries,
        split: Split::Train,
        target_size: samples.first().map_or(0, |s| s.image.shape().h),
    };
    let path = dir.join("manifest.tsv");
    std::fs::write(&path, manifest.to_text(dir)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
