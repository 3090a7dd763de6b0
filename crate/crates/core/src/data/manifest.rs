//! Dataset manifests: one JSON record per line,
//! `{"image": .., "la": .., "scar": .., "split": .., "style": .., "seed": ..}`,
//! with paths relative to the manifest's directory.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::ugt::read_tensor;
use crate::error::{Error, Result};
use crate::pipeline::sample::{Sample, SampleMeta};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
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

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub image: PathBuf,
    pub la: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scar: Option<PathBuf>,
    pub split: Split,
    pub style: String,
    pub seed: u64,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    fn split_mut(&mut self, split: Split) -> &mut Vec<Sample> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).map_err(|e| Error::Malformed(e.to_string()))?);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: ManifestRecord = serde_json::from_str(line)
            .map_err(|e| Error::Malformed(format!("{}:{}: {e}", path.display(), n + 1)))?;
        records.push(r);
    }
    check_disjoint(&records)?;
    Ok(records)
}

fn check_disjoint(records: &[ManifestRecord]) -> Result<()> {
    let mut seen: HashMap<&Path, Split> = HashMap::new();
    for r in records {
        if let Some(&prev) = seen.get(r.image.as_path()) {
            if prev != r.split {
                return Err(Error::BadSplit(format!("{} is in both {prev} and {}", r.image.display(), r.split)));
            }
        }
        seen.insert(&r.image, r.split);
    }
    Ok(())
}

fn resolve(base: &Path, p: &Path) -> Result<PathBuf> {
    let full = base.join(p);
    if !full.exists() {
        return Err(Error::MissingFile(full));
    }
    Ok(full)
}

pub fn load_dataset(manifest: impl AsRef<Path>) -> Result<Dataset> {
    let manifest = manifest.as_ref();
    let records = read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut ds = Dataset::default();
    for r in records {
        let image = read_tensor(resolve(base, &r.image)?)?;
        let la = read_tensor(resolve(base, &r.la)?)?;
        let scar = r.scar.as_ref().map(|p| resolve(base, p).and_then(read_tensor)).transpose()?;
        let (h, w) = match image.dims() {
            &[1, h, w] | &[h, w] => (h, w),
            d => return Err(Error::ShapeMismatch(format!("{}: image dims {d:?}", r.image.display()))),
        };
        let meta = SampleMeta { seed: r.seed, style: r.style.clone(), original_size: (h, w) };
        ds.split_mut(r.split).push(Sample::new(image, Some(la), scar, meta)?);
    }
    log::info!("loaded {} with splits {:?}", manifest.display(), ds.counts());
    Ok(ds)
}
