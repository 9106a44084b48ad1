//! On-disk case layout: `<case>/modal<k>.nii` for k = 1.., `label.nii`, and an
//! optional `region.nii` corruption mask.

use std::path::{Path, PathBuf};

use super::nifti::{read_nifti, write_nifti, NiftiData, NiftiImage};
use super::volume::{Grid, Volume};
use crate::error::{Error, Result};

pub const LABEL_FILE: &str = "label.nii";
pub const REGION_FILE: &str = "region.nii";

pub fn modality_file(k: usize) -> String {
    format!("modal{}.nii", k + 1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Case {
    pub name: String,
    pub volume: Volume,
    pub region: Option<Grid<u8>>,
}

pub fn write_case(dir: impl AsRef<Path>, vol: &Volume, region: Option<&Grid<u8>>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let img = |data| NiftiImage { data, spacing: vol.spacing };
    for (k, m) in vol.modalities.iter().enumerate() {
        write_nifti(dir.join(modality_file(k)), &img(NiftiData::F32(m.clone())))?;
    }
    if let Some(l) = &vol.label {
        write_nifti(dir.join(LABEL_FILE), &img(NiftiData::U8(l.clone())))?;
    }
    if let Some(r) = region {
        write_nifti(dir.join(REGION_FILE), &img(NiftiData::U8(r.clone())))?;
    }
    Ok(())
}

/// Reads every `modal<k>.nii` present (k = 1, 2, ... until the first gap);
/// the label and region files are optional.
pub fn read_case(dir: impl AsRef<Path>) -> Result<Case> {
    let dir = dir.as_ref();
    let mut modalities = Vec::new();
    let mut names = Vec::new();
    let mut spacing = [1.0; 3];
    while dir.join(modality_file(modalities.len())).is_file() {
        let k = modalities.len();
        let img = read_nifti(dir.join(modality_file(k)))?;
        if k == 0 {
            spacing = img.spacing;
        }
        modalities.push(img.data.to_f32());
        names.push(format!("modal{}", k + 1));
    }
    if modalities.is_empty() {
        return Err(Error::io(dir.join(modality_file(0)), std::io::ErrorKind::NotFound.into()));
    }
    let optional = |f: &str| -> Result<Option<Grid<u8>>> {
        let p = dir.join(f);
        if p.is_file() { read_nifti(p)?.data.to_labels().map(Some) } else { Ok(None) }
    };
    let volume = Volume { modalities, label: optional(LABEL_FILE)?, spacing, modality_names: names };
    let name = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
    Ok(Case { name, volume, region: optional(REGION_FILE)? })
}

/// Orders `case_2` before `case_10`.
fn natural_key(name: &str) -> (String, u64, String) {
    let digits = name.len() - name.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    let (prefix, num) = name.split_at(name.len() - digits);
    (prefix.to_string(), num.parse().unwrap_or(0), name.to_string())
}

/// Subdirectories of `root` that contain `modal1.nii`, in natural name order.
pub fn list_cases(root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let root = root.as_ref();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(modality_file(0)).is_file())
        .collect();
    dirs.sort_by_cached_key(|p| natural_key(&p.file_name().unwrap_or_default().to_string_lossy()));
    Ok(dirs)
}
