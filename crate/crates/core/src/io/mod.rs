//! Volume files, synthetic phantoms, dataset directories and splits.
//!
//! A dataset directory holds one `<id>_image.nrrd` and one
//! `<id>_label.nrrd` per case.

pub mod nrrd;
pub mod phantom;
pub mod split;

use std::path::{Path, PathBuf};

pub use nrrd::{
    encode_volume, parse_nrrd_header, read_raw, read_volume, write_volume, Encoding, Endian, NrrdHeader,
    ScalarType, WriteOptions,
};
pub use phantom::{generate_phantom, PhantomParams, PHANTOM_SPACING};
pub use split::{make_split, DatasetSplit};

use crate::error::{Error, Result};
use crate::volume::{Volume, VolumeKind};

const IMAGE_SUFFIX: &str = "_image.nrrd";
const LABEL_SUFFIX: &str = "_label.nrrd";

#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub id: String,
    pub image: Volume,
    pub label: Volume,
}

pub fn image_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}{IMAGE_SUFFIX}"))
}

pub fn label_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}{LABEL_SUFFIX}"))
}

/// Sorted ids of cases whose image file exists in `dir`.
pub fn list_cases(dir: impl AsRef<Path>) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if let Some(id) = entry.file_name().to_str().and_then(|n| n.strip_suffix(IMAGE_SUFFIX)) {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}

pub fn load_case(dir: impl AsRef<Path>, id: &str) -> Result<Case> {
    let dir = dir.as_ref();
    let image = read_volume(image_path(dir, id), VolumeKind::Intensity)?;
    let label_file = label_path(dir, id);
    let label = read_volume(&label_file, VolumeKind::Mask)?;
    if image.extents() != label.extents() {
        return Err(Error::format(
            label_file,
            format!("label extents {:?} differ from image extents {:?}", label.extents(), image.extents()),
        ));
    }
    Ok(Case {
        id: id.to_string(),
        image,
        label,
    })
}

/// Writes both volumes of a case (`float` image, `uchar` label).
pub fn save_case(dir: impl AsRef<Path>, case: &Case) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_volume(
        image_path(dir, &case.id),
        &case.image,
        WriteOptions::for_kind(VolumeKind::Intensity),
    )?;
    write_volume(label_path(dir, &case.id), &case.label, WriteOptions::for_kind(VolumeKind::Mask))
}
