//! Dataset directory ingestion.
//!
//! Two layouts are understood:
//!
//! * `paired`: `root/LR/<name>` and `root/HR/<name>` with identical file
//!   names, HR exactly `scale` times LR.
//! * `hr-only`: images directly under `root`; LR is synthesized by bicubic
//!   downscaling.
//!
//! Entries are sorted by file name.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::{is_image_path, load_image};
use super::pair::{make_pair, ImagePair};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    Paired,
    HrOnly,
}

impl Layout {
    /// `Paired` when `root` has both `LR/` and `HR/` subdirectories.
    pub fn detect(root: &Path) -> Layout {
        if root.join("LR").is_dir() && root.join("HR").is_dir() {
            Layout::Paired
        } else {
            Layout::HrOnly
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    /// Absent for synthesized pairs.
    pub lr_path: Option<PathBuf>,
    pub hr_path: PathBuf,
    pub scale: usize,
}

/// A pair that was skipped, with the reason.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejected {
    pub name: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub layout: Layout,
    pub entries: Vec<ManifestEntry>,
    pub rejected: Vec<Rejected>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn load_pair(&self, i: usize) -> Result<ImagePair> {
        let e = &self.entries[i];
        let hr = load_image(&e.hr_path)?;
        let mut pair = match &e.lr_path {
            Some(lr) => ImagePair::new(load_image(lr)?, hr, e.scale)?,
            None => make_pair(&hr, e.scale)?,
        };
        pair.source = Some(e.hr_path.clone());
        Ok(pair)
    }

    pub fn load_pairs(&self) -> Result<Vec<ImagePair>> {
        (0..self.len()).map(|i| self.load_pair(i)).collect()
    }
}

fn image_names(dir: &Path) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_image_path(&path) {
            if let Some(n) = path.file_name().and_then(|n| n.to_str()) {
                out.insert(n.to_string());
            }
        }
    }
    Ok(out)
}

fn extents(path: &Path) -> Result<(usize, usize)> {
    let t = load_image(path)?;
    Ok((t.shape()[1], t.shape()[2]))
}

/// Scans `root` and validates every pair. Missing counterparts are reported
/// together in one [`Error::Dataset`]; pairs with inconsistent extents are
/// listed in [`DatasetManifest::rejected`].
pub fn load_dataset(root: impl AsRef<Path>, layout: Layout, scale: usize) -> Result<DatasetManifest> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    if scale == 0 {
        return Err(Error::Usage("scale must be positive".into()));
    }
    let mut manifest = DatasetManifest {
        layout,
        entries: Vec::new(),
        rejected: Vec::new(),
    };
    match layout {
        Layout::Paired => {
            let (lr_dir, hr_dir) = (root.join("LR"), root.join("HR"));
            if !lr_dir.is_dir() && !hr_dir.is_dir() {
                if fs::read_dir(root).map_err(|e| Error::io(root, e))?.next().is_none() {
                    return Ok(manifest);
                }
                return Err(Error::Dataset {
                    problems: vec![format!("{} has no LR/ and HR/ subdirectories", root.display())],
                });
            }
            let lr = if lr_dir.is_dir() {
                image_names(&lr_dir)?
            } else {
                BTreeSet::new()
            };
            let hr = if hr_dir.is_dir() {
                image_names(&hr_dir)?
            } else {
                BTreeSet::new()
            };
            let mut problems = Vec::new();
            for n in lr.difference(&hr) {
                problems.push(format!("LR/{n} has no HR counterpart"));
            }
            for n in hr.difference(&lr) {
                problems.push(format!("HR/{n} has no LR counterpart"));
            }
            if !problems.is_empty() {
                return Err(Error::Dataset { problems });
            }
            for name in lr {
                let (lp, hp) = (lr_dir.join(&name), hr_dir.join(&name));
                let (lh, lw) = extents(&lp)?;
                let (hh, hw) = extents(&hp)?;
                if hh != scale * lh || hw != scale * lw {
                    manifest.rejected.push(Rejected {
                        name,
                        reason: format!("HR {hh}x{hw} is not {scale}x LR {lh}x{lw}"),
                    });
                    continue;
                }
                manifest.entries.push(ManifestEntry {
                    name,
                    lr_path: Some(lp),
                    hr_path: hp,
                    scale,
                });
            }
        }
        Layout::HrOnly => {
            for name in image_names(root)? {
                let hp = root.join(&name);
                let (h, w) = extents(&hp)?;
                if h % scale != 0 || w % scale != 0 {
                    manifest.rejected.push(Rejected {
                        name,
                        reason: format!("HR {h}x{w} is not divisible by scale {scale}"),
                    });
                    continue;
                }
                manifest.entries.push(ManifestEntry {
                    name,
                    lr_path: None,
                    hr_path: hp,
                    scale,
                });
            }
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::image::save_image;
    use crate::tensor::{Rng, Tensor};

    fn write(path: &Path, h: usize, w: usize, seed: u64) {
        let t = Tensor::rand_uniform(&[3, h, w], 0.0, 1.0, &mut Rng::new(seed));
        save_image(&t, path).unwrap();
    }

    #[test]
    fn empty_directory_is_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        for layout in [Layout::Paired, Layout::HrOnly] {
            assert!(load_dataset(dir.path(), layout, 2).unwrap().is_empty());
        }
    }

    #[test]
    fn hr_only_synthesizes_pairs() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..5 {
            write(&dir.path().join(format!("img{i}.png")), 8, 12, i);
        }
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let m = load_dataset(dir.path(), Layout::HrOnly, 2).unwrap();
        assert_eq!(m.len(), 5);
        assert_eq!(m.entries[0].name, "img0.png");
        let p = m.load_pair(3).unwrap();
        assert_eq!(p.lr.shape(), &[3, 4, 6]);
    }

    #[test]
    fn paired_layout_and_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let (lr, hr) = (dir.path().join("LR"), dir.path().join("HR"));
        fs::create_dir_all(&lr).unwrap();
        fs::create_dir_all(&hr).unwrap();
        write(&lr.join("a.ppm"), 4, 4, 1);
        write(&hr.join("a.ppm"), 8, 8, 2);
        write(&lr.join("b.png"), 4, 4, 3);
        write(&hr.join("b.png"), 8, 6, 4);
        assert_eq!(Layout::detect(dir.path()), Layout::Paired);
        let m = load_dataset(dir.path(), Layout::Paired, 2).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.rejected.len(), 1);
        assert_eq!(m.rejected[0].name, "b.png");
        assert!(m.rejected[0].reason.contains("8x6"));
        assert_eq!(m.load_pairs().unwrap()[0].hr.shape(), &[3, 8, 8]);
    }

    #[test]
    fn missing_counterparts_reported_together() {
        let dir = tempfile::tempdir().unwrap();
        let (lr, hr) = (dir.path().join("LR"), dir.path().join("HR"));
        fs::create_dir_all(&lr).unwrap();
        fs::create_dir_all(&hr).unwrap();
        write(&lr.join("x.png"), 4, 4, 1);
        write(&hr.join("y.png"), 8, 8, 2);
        match load_dataset(dir.path(), Layout::Paired, 2) {
            Err(Error::Dataset { problems }) => {
                assert_eq!(problems.len(), 2);
                assert!(problems[0].contains("x.png"));
                assert!(problems[1].contains("y.png"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_root_is_io_error() {
        assert!(matches!(
            load_dataset("/nonexistent/dataset", Layout::HrOnly, 2),
            Err(Error::Io { .. })
        ));
    }
}
