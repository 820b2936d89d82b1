//! Tensors as NPY files: little-endian `f8`, C order, at least one axis.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use krusco_core::{DenseTensor, FactorMatrix};
use npyz::{DType, Endianness, Order, TypeChar, WriterBuilder};
use thiserror::Error;

use crate::error::{CliError, CliResult};

#[derive(Debug, Error)]
pub enum NpyError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("header field '{field}': {message}")]
    Header {
        field: &'static str,
        message: String,
    },
}

fn header(field: &'static str, message: impl Into<String>) -> NpyError {
    NpyError::Header {
        field,
        message: message.into(),
    }
}

/// Parse an NPY stream into a tensor, rejecting anything but `<f8` in C order.
pub fn read_tensor_from(r: impl Read) -> Result<DenseTensor, NpyError> {
    let npy = npyz::NpyFile::new(r)?;
    match npy.dtype() {
        DType::Plain(ts) => {
            if ts.type_char() != TypeChar::Float || ts.size_field() != 8 {
                return Err(header(
                    "descr",
                    format!("dtype '{ts}' is not supported; expected '<f8'"),
                ));
            }
            if ts.endianness() != Endianness::Little {
                return Err(header(
                    "descr",
                    format!("dtype '{ts}' is not little-endian; expected '<f8'"),
                ));
            }
        }
        other => {
            return Err(header(
                "descr",
                format!(
                    "structured dtype {} is not supported; expected '<f8'",
                    other.descr()
                ),
            ))
        }
    }
    if npy.order() == Order::Fortran {
        return Err(header("fortran_order", "Fortran order is not supported"));
    }
    let shape: Vec<usize> = npy.shape().iter().map(|v| *v as usize).collect();
    if shape.is_empty() {
        return Err(header("shape", "0-dimensional arrays are not supported"));
    }
    if shape.contains(&0) {
        return Err(header("shape", format!("{shape:?} has an empty axis")));
    }
    let data: Vec<f64> = npy.into_vec()?;
    DenseTensor::new(shape, data).map_err(|e| header("shape", e.to_string()))
}

/// Serialize a row-major `f64` array of the given shape as NPY v1.0.
pub fn write_array_to(w: impl Write, shape: &[usize], data: &[f64]) -> io::Result<()> {
    let shape: Vec<u64> = shape.iter().map(|v| *v as u64).collect();
    let mut writer = npyz::WriteOptions::new()
        .default_dtype()
        .shape(&shape)
        .writer(w)
        .begin_nd()?;
    writer.extend(data.iter().copied())?;
    writer.finish()
}

pub fn read_tensor(path: &Path) -> CliResult<DenseTensor> {
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    read_tensor_from(BufReader::new(f)).map_err(|e| CliError::io(path, e))
}

pub fn write_tensor(path: &Path, t: &DenseTensor) -> CliResult<()> {
    write_array(path, t.shape(), t.as_slice())
}

fn write_array(path: &Path, shape: &[usize], data: &[f64]) -> CliResult<()> {
    let f = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_array_to(&mut w, shape, data).map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Factor matrices are stored as `rows × cols` row-major arrays.
pub fn write_factor(path: &Path, f: &FactorMatrix) -> CliResult<()> {
    let mut data = Vec::with_capacity(f.rows() * f.cols());
    for i in 0..f.rows() {
        for r in 0..f.cols() {
            data.push(f.get(i, r));
        }
    }
    write_array(path, &[f.rows(), f.cols()], &data)
}

pub fn read_factor(path: &Path) -> CliResult<FactorMatrix> {
    let t = read_tensor(path)?;
    if t.order() != 2 {
        return Err(CliError::io(
            path,
            format!(
                "header field 'shape': factor matrix must be 2-D, got {:?}",
                t.shape()
            ),
        ));
    }
    let (rows, cols) = (t.shape()[0], t.shape()[1]);
    let mut col_major = vec![0.0; rows * cols];
    for i in 0..rows {
        for r in 0..cols {
            col_major[r * rows + i] = t.as_slice()[i * cols + r];
        }
    }
    FactorMatrix::new(rows, cols, col_major).map_err(|e| CliError::io(path, e))
}
