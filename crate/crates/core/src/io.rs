//! On-disk volume archives.
//!
//! A volume `<name>` is stored as two files: `<name>.json` holds an
//! [`ArchiveHeader`], `<name>.bin` holds the raw little-endian scalars in
//! row-major order (`x` fastest). `complex64` elements are interleaved
//! `(re, im)` float32 pairs. An echo series is a directory with
//! `echo_00` .. `echo_{I-1}` archives plus `series.json`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{ComplexVolume, Dtype, EchoSeries, RealVolume, Scalar, Shape, Volume};

pub const LITTLE_ENDIAN: &str = "little";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub shape: [usize; 3],
    pub dtype: String,
    pub endianness: String,
    pub role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub echo_times_ms: Option<Vec<f64>>,
}

impl ArchiveHeader {
    pub fn new(shape: Shape, dtype: Dtype, role: impl Into<String>) -> Self {
        Self {
            shape: shape.as_array(),
            dtype: dtype.tag().to_string(),
            endianness: LITTLE_ENDIAN.to_string(),
            role: role.into(),
            echo_times_ms: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("header serializes")
    }

    pub fn parse(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn dtype(&self) -> Result<Dtype> {
        Dtype::from_tag(&self.dtype)
    }

    pub fn shape(&self) -> Result<Shape> {
        Shape::new(self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn payload_bytes(&self) -> Result<usize> {
        Ok(self.shape()?.len() * self.dtype()?.element_bytes())
    }
}

/// A volume of either on-disk dtype.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyVolume {
    Real(RealVolume),
    Complex(ComplexVolume),
}

impl AnyVolume {
    pub fn shape(&self) -> Shape {
        match self {
            AnyVolume::Real(v) => v.shape(),
            AnyVolume::Complex(v) => v.shape(),
        }
    }

    pub fn into_real(self) -> Result<RealVolume> {
        match self {
            AnyVolume::Real(v) => Ok(v),
            AnyVolume::Complex(_) => Err(Error::invalid("expected a real32 volume, found complex64")),
        }
    }

    /// Real volumes are promoted with zero imaginary part.
    pub fn into_complex(self) -> ComplexVolume {
        match self {
            AnyVolume::Real(v) => v.to_complex(),
            AnyVolume::Complex(v) => v,
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn header_path(path: &Path) -> PathBuf {
    with_suffix(path, ".json")
}

pub fn payload_path(path: &Path) -> PathBuf {
    with_suffix(path, ".bin")
}

/// Writes `<path>.json` and `<path>.bin`.
pub fn write_volume<T: Scalar>(path: &Path, v: &Volume<T>, role: &str) -> Result<()> {
    write_volume_with_header(path, v, ArchiveHeader::new(v.shape(), T::DTYPE, role))
}

fn write_volume_with_header<T: Scalar>(path: &Path, v: &Volume<T>, header: ArchiveHeader) -> Result<()> {
    if !v.all_finite() {
        return Err(Error::NonFinite(path.display().to_string()));
    }
    let mut bytes = Vec::with_capacity(v.len() * T::DTYPE.element_bytes());
    for &x in v.data() {
        let c = x.to_complex();
        bytes.extend_from_slice(&(c.re as f32).to_le_bytes());
        if T::DTYPE == Dtype::Complex64 {
            bytes.extend_from_slice(&(c.im as f32).to_le_bytes());
        }
    }
    let hp = header_path(path);
    fs::write(&hp, header.to_json()).map_err(|e| Error::io(&hp, e))?;
    let bp = payload_path(path);
    fs::write(&bp, bytes).map_err(|e| Error::io(&bp, e))?;
    Ok(())
}

pub fn read_header(path: &Path) -> Result<ArchiveHeader> {
    let hp = header_path(path);
    let text = fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    ArchiveHeader::parse(&text).map_err(|e| Error::json(&hp, e))
}

pub fn read_volume(path: &Path) -> Result<AnyVolume> {
    Ok(read_volume_with_header(path)?.0)
}

pub fn read_volume_with_header(path: &Path) -> Result<(AnyVolume, ArchiveHeader)> {
    let header = read_header(path)?;
    let dtype = header.dtype()?;
    let shape = header.shape()?;
    if header.endianness != LITTLE_ENDIAN {
        return Err(Error::invalid(format!("unsupported endianness {:?}", header.endianness)));
    }
    let bp = payload_path(path);
    let bytes = fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
    let expected = header.payload_bytes()?;
    if bytes.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "{} holds {} bytes but header shape {shape} with dtype {} needs {expected}",
            bp.display(),
            bytes.len(),
            dtype.tag()
        )));
    }
    let floats: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let vol = match dtype {
        Dtype::Real32 => AnyVolume::Real(Volume::from_vec(shape, floats)?),
        Dtype::Complex64 => {
            let data = floats.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
            AnyVolume::Complex(Volume::from_vec(shape, data)?)
        }
    };
    Ok((vol, header))
}

pub fn read_real(path: &Path) -> Result<RealVolume> {
    read_volume(path)?.into_real()
}

pub fn read_complex(path: &Path) -> Result<ComplexVolume> {
    Ok(read_volume(path)?.into_complex())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SeriesIndex {
    times_ms: Vec<f64>,
    echoes: Vec<String>,
}

pub fn echo_name(i: usize) -> String {
    format!("echo_{i:02}")
}

/// Writes an echo series into directory `dir` (created if missing).
pub fn write_series<T: Scalar>(dir: &Path, series: &EchoSeries<T>, role: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::with_capacity(series.len());
    for (i, (echo, &t)) in series.echoes().iter().zip(series.times_ms()).enumerate() {
        let name = echo_name(i);
        let mut header = ArchiveHeader::new(echo.shape(), T::DTYPE, role);
        header.echo_times_ms = Some(vec![t]);
        write_volume_with_header(&dir.join(&name), echo, header)?;
        names.push(name);
    }
    let index = SeriesIndex { times_ms: series.times_ms().to_vec(), echoes: names };
    write_json(&dir.join("series.json"), &index)
}

pub fn read_series(dir: &Path) -> Result<(Vec<AnyVolume>, Vec<f64>)> {
    let index: SeriesIndex = read_json(&dir.join("series.json"))?;
    if index.echoes.len() != index.times_ms.len() {
        return Err(Error::ShapeMismatch("series.json lists mismatched echoes and times".into()));
    }
    let vols = index
        .echoes
        .iter()
        .map(|name| read_volume(&dir.join(name)))
        .collect::<Result<Vec<_>>>()?;
    Ok((vols, index.times_ms))
}

pub fn read_complex_series(dir: &Path) -> Result<EchoSeries<Complex64>> {
    let (vols, times) = read_series(dir)?;
    EchoSeries::new(vols.into_iter().map(AnyVolume::into_complex).collect(), times)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}
