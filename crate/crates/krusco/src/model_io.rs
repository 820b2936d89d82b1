//! Dictionaries and activations as directories of NPY files, described by a
//! JSON manifest.
//!
//! ```text
//! <dictionary_dir>/atom_000.npy           one tensor per atom
//! <activations_dir>/z_000_mode1.npy       Kruskal: one m_l × R factor per mode
//! <activations_dir>/z_000.npy             dense: one activation tensor per atom
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use krusco_core::{
    reconstruct, reconstruct_dense, ActivationSet, DenseTensor, Dictionary, KruskalTensor,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::npy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Kruskal,
    Dense,
}

/// Description of a stored model. Directories are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFiles {
    pub kind: ModelKind,
    pub atoms: usize,
    /// CP rank; absent for dense activations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    pub atom_shape: Vec<usize>,
    pub act_shape: Vec<usize>,
    pub dictionary_dir: String,
    pub activations_dir: String,
    /// Penalty weights the model was fitted with.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub enum Activations {
    Kruskal(ActivationSet),
    Dense(Vec<DenseTensor>),
}

impl Activations {
    pub fn kind(&self) -> ModelKind {
        match self {
            Activations::Kruskal(_) => ModelKind::Kruskal,
            Activations::Dense(_) => ModelKind::Dense,
        }
    }

    pub fn nnz_per_mode(&self) -> Vec<usize> {
        match self {
            Activations::Kruskal(a) => a.nnz_per_mode(),
            Activations::Dense(_) => Vec::new(),
        }
    }

    /// Stored nonzeros: factor entries for Kruskal, tensor entries for dense.
    pub fn nnz(&self) -> usize {
        match self {
            Activations::Kruskal(a) => a.total_nnz(),
            Activations::Dense(z) => z.iter().map(|t| t.nnz()).sum(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Activations::Kruskal(a) => a.param_count(),
            Activations::Dense(z) => z.iter().map(|t| t.len()).sum(),
        }
    }

    pub fn dense_param_count(&self) -> usize {
        match self {
            Activations::Kruskal(a) => a.dense_param_count(),
            Activations::Dense(z) => z.iter().map(|t| t.len()).sum(),
        }
    }

    pub fn l1_norm(&self) -> Vec<f64> {
        match self {
            Activations::Kruskal(a) => (0..a.order())
                .map(|l| a.entries().iter().map(|z| z.factor(l).l1_norm()).sum())
                .collect(),
            Activations::Dense(z) => vec![z.iter().map(|t| t.l1_norm()).sum()],
        }
    }

    pub fn sq_norm(&self) -> Vec<f64> {
        match self {
            Activations::Kruskal(a) => (0..a.order())
                .map(|l| a.entries().iter().map(|z| z.factor(l).norm_sq()).sum())
                .collect(),
            Activations::Dense(z) => vec![z.iter().map(|t| t.norm_sq()).sum()],
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub files: ModelFiles,
    pub dictionary: Dictionary,
    pub activations: Activations,
}

impl Model {
    pub fn reconstruct(&self) -> CliResult<DenseTensor> {
        Ok(match &self.activations {
            Activations::Kruskal(a) => reconstruct(&self.dictionary, a)?,
            Activations::Dense(z) => reconstruct_dense(&self.dictionary, z)?,
        })
    }
}

pub(crate) fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(path, e))
}

fn atom_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("atom_{k:03}.npy"))
}

pub fn save_dictionary(dir: &Path, dict: &Dictionary) -> CliResult<()> {
    create_dir(dir)?;
    for (k, atom) in dict.atoms().iter().enumerate() {
        npy::write_tensor(&atom_path(dir, k), atom)?;
    }
    Ok(())
}

pub fn load_dictionary(dir: &Path, atoms: usize) -> CliResult<Dictionary> {
    let atoms = (0..atoms)
        .map(|k| npy::read_tensor(&atom_path(dir, k)))
        .collect::<CliResult<Vec<_>>>()?;
    Dictionary::new(atoms).map_err(|e| CliError::io(dir, e))
}

fn factor_path(dir: &Path, k: usize, l: usize) -> PathBuf {
    dir.join(format!("z_{k:03}_mode{}.npy", l + 1))
}

fn dense_path(dir: &Path, k: usize) -> PathBuf {
    dir.join(format!("z_{k:03}.npy"))
}

pub fn save_activations(dir: &Path, acts: &Activations) -> CliResult<()> {
    create_dir(dir)?;
    match acts {
        Activations::Kruskal(a) => {
            for (k, z) in a.entries().iter().enumerate() {
                for (l, f) in z.factors().iter().enumerate() {
                    npy::write_factor(&factor_path(dir, k, l), f)?;
                }
            }
        }
        Activations::Dense(z) => {
            for (k, t) in z.iter().enumerate() {
                npy::write_tensor(&dense_path(dir, k), t)?;
            }
        }
    }
    Ok(())
}

pub fn load_activations(dir: &Path, files: &ModelFiles) -> CliResult<Activations> {
    let order = files.act_shape.len();
    match files.kind {
        ModelKind::Kruskal => {
            let entries = (0..files.atoms)
                .map(|k| {
                    let factors = (0..order)
                        .map(|l| npy::read_factor(&factor_path(dir, k, l)))
                        .collect::<CliResult<Vec<_>>>()?;
                    KruskalTensor::new(factors).map_err(|e| CliError::io(dir, e))
                })
                .collect::<CliResult<Vec<_>>>()?;
            let set = ActivationSet::new(entries).map_err(|e| CliError::io(dir, e))?;
            if set.shape() != files.act_shape || Some(set.rank()) != files.rank {
                return Err(CliError::io(
                    dir,
                    format!(
                        "factors give shape {:?} rank {}, manifest says {:?} rank {:?}",
                        set.shape(),
                        set.rank(),
                        files.act_shape,
                        files.rank
                    ),
                ));
            }
            Ok(Activations::Kruskal(set))
        }
        ModelKind::Dense => {
            let z = (0..files.atoms)
                .map(|k| {
                    let path = dense_path(dir, k);
                    let t = npy::read_tensor(&path)?;
                    if t.shape() != files.act_shape.as_slice() {
                        return Err(CliError::io(
                            &path,
                            format!("shape {:?}, manifest says {:?}", t.shape(), files.act_shape),
                        ));
                    }
                    Ok(t)
                })
                .collect::<CliResult<Vec<_>>>()?;
            Ok(Activations::Dense(z))
        }
    }
}

/// Write the dictionary and activation directories named in `files`, rooted
/// at `root`.
pub fn save_model_parts(root: &Path, model: &Model) -> CliResult<()> {
    save_dictionary(&root.join(&model.files.dictionary_dir), &model.dictionary)?;
    save_activations(&root.join(&model.files.activations_dir), &model.activations)
}

/// Manifests that embed a model under a `model` key, such as the one
/// written by `synth`.
#[derive(Deserialize)]
#[serde(untagged)]
enum AnyManifest {
    Model(ModelFiles),
    Embedded { model: ModelFiles },
}

/// Resolve a model path: a JSON file, or a directory containing
/// `model.json` or `manifest.json`.
pub fn model_manifest_path(path: &Path) -> CliResult<PathBuf> {
    if !path.is_dir() {
        return Ok(path.to_path_buf());
    }
    ["model.json", "manifest.json"]
        .iter()
        .map(|n| path.join(n))
        .find(|p| p.is_file())
        .ok_or_else(|| CliError::io(path, "no model.json or manifest.json in directory"))
}

pub fn load_model(path: &Path) -> CliResult<Model> {
    let manifest = model_manifest_path(path)?;
    let files = match read_json::<AnyManifest>(&manifest)? {
        AnyManifest::Model(f) | AnyManifest::Embedded { model: f } => f,
    };
    let root = manifest.parent().unwrap_or(Path::new("."));
    let dictionary = load_dictionary(&root.join(&files.dictionary_dir), files.atoms)?;
    if dictionary.atom_shape() != files.atom_shape.as_slice() {
        return Err(CliError::io(
            &manifest,
            format!(
                "atoms have shape {:?}, manifest says {:?}",
                dictionary.atom_shape(),
                files.atom_shape
            ),
        ));
    }
    let activations = load_activations(&root.join(&files.activations_dir), &files)?;
    Ok(Model {
        files,
        dictionary,
        activations,
    })
}
