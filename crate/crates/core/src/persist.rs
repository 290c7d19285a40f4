//! Versioned JSON files for trained models and regressor sets.

use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{RegressorSpec, TermRecord};
use crate::scalar::Scalar;
use crate::sysid::StateSpaceModel;

pub const MODEL_FORMAT: &str = "thermsid-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const SPEC_FORMAT: &str = "thermsid-regressors";
pub const SPEC_FORMAT_VERSION: u32 = 1;

/// On-disk model. Matrices are row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub format_version: u32,
    pub order: usize,
    pub m: usize,
    pub sample_rate_hz: f64,
    pub horizon: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub k: Vec<f64>,
    pub output_offset: f64,
    pub stable: bool,
    pub spectral_radius: f64,
    pub parameter_count: usize,
    pub regressors: Vec<TermRecord>,
}

fn row_major<T: Scalar>(m: &DMatrix<T>) -> Vec<f64> {
    m.transpose().iter().map(|x| x.as_f64()).collect()
}

fn from_row_major<T: Scalar>(rows: usize, cols: usize, data: &[f64], name: &str) -> Result<DMatrix<T>> {
    if data.len() != rows * cols {
        return Err(Error::Format(format!(
            "matrix {name} has {} entries, expected {rows}×{cols}",
            data.len()
        )));
    }
    Ok(DMatrix::from_row_iterator(rows, cols, data.iter().map(|&x| T::of(x))))
}

impl ModelFile {
    pub fn from_model<T: Scalar>(model: &StateSpaceModel<T>) -> Result<Self> {
        let spec = model
            .spec()
            .ok_or_else(|| Error::InvalidArgument("only models with a regressor spec can be saved".into()))?;
        Ok(ModelFile {
            format: MODEL_FORMAT.into(),
            format_version: MODEL_FORMAT_VERSION,
            order: model.order(),
            m: model.m(),
            sample_rate_hz: model.sample_rate().as_f64(),
            horizon: model.horizon(),
            a: row_major(model.a()),
            b: row_major(model.b()),
            c: row_major(model.c()),
            k: row_major(model.k()),
            output_offset: model.output_offset().as_f64(),
            stable: model.is_stable(),
            spectral_radius: model.spectral_radius().as_f64(),
            parameter_count: model.parameter_count(),
            regressors: spec.to_records(),
        })
    }

    pub fn to_model<T: Scalar>(&self) -> Result<StateSpaceModel<T>> {
        if self.format != MODEL_FORMAT || self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "expected {MODEL_FORMAT} v{MODEL_FORMAT_VERSION}, found {} v{}",
                self.format, self.format_version
            )));
        }
        let (n, m) = (self.order, self.m);
        let spec = RegressorSpec::from_records(&self.regressors)?;
        if spec.normalization().is_none() {
            return Err(Error::Format("model regressors lack normalization".into()));
        }
        let model = StateSpaceModel::new(
            from_row_major(n, n, &self.a, "a")?,
            from_row_major(n, m, &self.b, "b")?,
            from_row_major(1, n, &self.c, "c")?,
            from_row_major(n, 1, &self.k, "k")?,
            T::of(self.output_offset),
            T::of(self.sample_rate_hz),
        )?
        .with_horizon(self.horizon)
        .with_spec(spec)?;
        if model.parameter_count() != self.parameter_count {
            return Err(Error::Format(format!(
                "parameter count {} disagrees with dimensions ({})",
                self.parameter_count,
                model.parameter_count()
            )));
        }
        Ok(model)
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn model_to_json<T: Scalar>(model: &StateSpaceModel<T>) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&ModelFile::from_model(model)?)?;
    s.push('\n');
    Ok(s)
}

pub fn model_from_json<T: Scalar>(text: &str) -> Result<StateSpaceModel<T>> {
    serde_json::from_str::<ModelFile>(text)?.to_model()
}

pub fn save_model<T: Scalar>(model: &StateSpaceModel<T>, path: &Path) -> Result<()> {
    write(path, &model_to_json(model)?)
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<StateSpaceModel<T>> {
    model_from_json(&read(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SpecFile {
    format: String,
    format_version: u32,
    regressors: Vec<TermRecord>,
}

pub fn spec_to_json<T: Scalar>(spec: &RegressorSpec<T>) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&SpecFile {
        format: SPEC_FORMAT.into(),
        format_version: SPEC_FORMAT_VERSION,
        regressors: spec.without_normalization().to_records(),
    })?;
    s.push('\n');
    Ok(s)
}

pub fn spec_from_json<T: Scalar>(text: &str) -> Result<RegressorSpec<T>> {
    let file: SpecFile = serde_json::from_str(text)?;
    if file.format != SPEC_FORMAT || file.format_version != SPEC_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "expected {SPEC_FORMAT} v{SPEC_FORMAT_VERSION}, found {} v{}",
            file.format, file.format_version
        )));
    }
    RegressorSpec::from_records(&file.regressors)
}

pub fn save_spec<T: Scalar>(spec: &RegressorSpec<T>, path: &Path) -> Result<()> {
    write(path, &spec_to_json(spec)?)
}

pub fn load_spec<T: Scalar>(path: &Path) -> Result<RegressorSpec<T>> {
    spec_from_json(&read(path)?)
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 of a file's contents, streamed.
pub fn sha256_file(path: &Path) -> Result<String> {
    let name = || path.display().to_string();
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(name(), e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(name(), e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}
