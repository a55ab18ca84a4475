//! Volume container: a JSON header next to a raw little-endian body.
//!
//! `vol.json` holds `dims`, `spacing_mm`, `dtype`, `kind` and `channels`;
//! the payload lives in `vol.raw`, channel-fastest then x-fastest.
//! Real data is `f32le`, masks are `u8` (0 or 1) and label-sets are `u32le`
//! bitmasks.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{
    GridMeta, LabelSetVolume, LabelSpace, MaskVolume, ProbabilityVolume, ScalarVolume, SubsetMask,
    VectorVolume,
};

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "f32le")]
    F32Le,
    #[serde(rename = "u8")]
    U8,
    #[serde(rename = "u32le")]
    U32Le,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F32Le | Dtype::U32Le => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Scalar,
    Prob,
    Mask,
    Labelset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub dtype: Dtype,
    pub kind: Kind,
    pub channels: usize,
}

/// Any volume the container can hold.
#[derive(Clone, Debug, PartialEq)]
pub enum Volume {
    Scalar(ScalarVolume),
    Vector(VectorVolume),
    Prob(ProbabilityVolume),
    Mask(MaskVolume),
    LabelSet(LabelSetVolume),
}

/// Borrowed view used for writing.
#[derive(Copy, Clone, Debug)]
pub enum VolumeRef<'a> {
    Scalar(&'a ScalarVolume),
    Vector(&'a VectorVolume),
    Prob(&'a ProbabilityVolume),
    Mask(&'a MaskVolume),
    LabelSet(&'a LabelSetVolume),
}

macro_rules! volume_ref_from {
    ($($t:ty => $v:ident),*) => {$(
        impl<'a> From<&'a $t> for VolumeRef<'a> {
            fn from(v: &'a $t) -> Self { VolumeRef::$v(v) }
        }
    )*};
}
volume_ref_from!(ScalarVolume => Scalar, VectorVolume => Vector, ProbabilityVolume => Prob,
    MaskVolume => Mask, LabelSetVolume => LabelSet);

impl<'a> From<&'a Volume> for VolumeRef<'a> {
    fn from(v: &'a Volume) -> Self {
        match v {
            Volume::Scalar(v) => VolumeRef::Scalar(v),
            Volume::Vector(v) => VolumeRef::Vector(v),
            Volume::Prob(v) => VolumeRef::Prob(v),
            Volume::Mask(v) => VolumeRef::Mask(v),
            Volume::LabelSet(v) => VolumeRef::LabelSet(v),
        }
    }
}

impl Volume {
    pub fn meta(&self) -> &GridMeta {
        match self {
            Volume::Scalar(v) => v.meta(),
            Volume::Vector(v) => v.meta(),
            Volume::Prob(v) => v.meta(),
            Volume::Mask(v) => v.meta(),
            Volume::LabelSet(v) => v.meta(),
        }
    }

    fn kind_name(&self) -> &'static str {
        match self {
            Volume::Scalar(_) => "scalar",
            Volume::Vector(_) => "3-channel scalar",
            Volume::Prob(_) => "prob",
            Volume::Mask(_) => "mask",
            Volume::LabelSet(_) => "labelset",
        }
    }
}

/// Path of the raw body that belongs to a header path.
pub fn body_path(header: &Path) -> PathBuf {
    header.with_extension("raw")
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_header(path: &Path) -> Result<Header> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Header(format!("{}: {e}", path.display())))
}

fn f32s(bytes: &[u8]) -> Result<Vec<f64>> {
    bytes
        .chunks_exact(4)
        .enumerate()
        .map(|(i, b)| {
            let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            if v.is_nan() {
                Err(Error::InvalidValue(format!(
                    "NaN in payload at element {i}"
                )))
            } else {
                Ok(v as f64)
            }
        })
        .collect()
}

/// Decodes a header plus raw payload.
pub fn decode(header: &Header, bytes: &[u8]) -> Result<Volume> {
    let meta =
        GridMeta::new(header.dims, header.spacing_mm).map_err(|e| Error::Header(e.to_string()))?;
    let ch = header.channels;
    let expected_dtype = match header.kind {
        Kind::Scalar | Kind::Prob => Dtype::F32Le,
        Kind::Mask => Dtype::U8,
        Kind::Labelset => Dtype::U32Le,
    };
    if header.dtype != expected_dtype {
        return Err(Error::Header(format!(
            "kind {:?} requires dtype {:?}, got {:?}",
            header.kind, expected_dtype, header.dtype
        )));
    }
    let channels_ok = match header.kind {
        Kind::Scalar => ch == 1 || ch == 3,
        Kind::Prob => ch >= 1,
        Kind::Mask | Kind::Labelset => ch == 1,
    };
    if !channels_ok {
        return Err(Error::Header(format!(
            "invalid channel count {ch} for kind {:?}",
            header.kind
        )));
    }
    let expected = meta.len() * ch * header.dtype.size();
    if bytes.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    Ok(match header.kind {
        Kind::Scalar if ch == 1 => Volume::Scalar(ScalarVolume::new(meta, f32s(bytes)?)?),
        Kind::Scalar => {
            let v = f32s(bytes)?;
            let data = v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
            Volume::Vector(VectorVolume::new(meta, data)?)
        }
        Kind::Prob => Volume::Prob(ProbabilityVolume::new(meta, ch, f32s(bytes)?)?),
        Kind::Mask => {
            let data = bytes
                .iter()
                .enumerate()
                .map(|(i, &b)| match b {
                    0 => Ok(false),
                    1 => Ok(true),
                    _ => Err(Error::InvalidValue(format!("mask byte {b} at voxel {i}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            Volume::Mask(MaskVolume::new(meta, data)?)
        }
        Kind::Labelset => {
            let data = bytes
                .chunks_exact(4)
                .map(|b| SubsetMask::from_bits(u32::from_le_bytes([b[0], b[1], b[2], b[3]])))
                .collect();
            Volume::LabelSet(LabelSetVolume::new(meta, data)?)
        }
    })
}

fn put_f32(out: &mut Vec<u8>, v: f64) -> Result<()> {
    let f = v as f32;
    if !f.is_finite() {
        return Err(Error::InvalidValue(format!(
            "{v} is not representable as f32"
        )));
    }
    out.extend_from_slice(&f.to_le_bytes());
    Ok(())
}

/// Encodes a volume into its header and raw payload.
pub fn encode<'a>(vol: impl Into<VolumeRef<'a>>) -> Result<(Header, Vec<u8>)> {
    let vol = vol.into();
    let (meta, kind, dtype, channels) = match vol {
        VolumeRef::Scalar(v) => (*v.meta(), Kind::Scalar, Dtype::F32Le, 1),
        VolumeRef::Vector(v) => (*v.meta(), Kind::Scalar, Dtype::F32Le, 3),
        VolumeRef::Prob(v) => (*v.meta(), Kind::Prob, Dtype::F32Le, v.channels()),
        VolumeRef::Mask(v) => (*v.meta(), Kind::Mask, Dtype::U8, 1),
        VolumeRef::LabelSet(v) => (*v.meta(), Kind::Labelset, Dtype::U32Le, 1),
    };
    let mut bytes = Vec::with_capacity(meta.len() * channels * dtype.size());
    match vol {
        VolumeRef::Scalar(v) => {
            for &x in v.data() {
                put_f32(&mut bytes, x)?;
            }
        }
        VolumeRef::Vector(v) => {
            for &x in v.data().iter().flatten() {
                put_f32(&mut bytes, x)?;
            }
        }
        VolumeRef::Prob(v) => {
            for &x in v.data() {
                put_f32(&mut bytes, x)?;
            }
        }
        VolumeRef::Mask(v) => bytes.extend(v.data().iter().map(|&b| b as u8)),
        VolumeRef::LabelSet(v) => {
            for s in v.data() {
                bytes.extend_from_slice(&s.bits().to_le_bytes());
            }
        }
    }
    let header = Header {
        dims: meta.dims,
        spacing_mm: meta.spacing,
        dtype,
        kind,
        channels,
    };
    Ok((header, bytes))
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let header = read_header(path)?;
    let bytes = read_bytes(&body_path(path))?;
    decode(&header, &bytes)
}

pub fn write_volume<'a>(vol: impl Into<VolumeRef<'a>>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (header, bytes) = encode(vol)?;
    let mut text = serde_json::to_string_pretty(&header).expect("header serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    let body = body_path(path);
    fs::write(&body, bytes).map_err(|e| Error::io(&body, e))
}

fn wrong_kind(path: &Path, want: &str, got: &Volume) -> Error {
    Error::Validation(format!(
        "{}: expected a {want} volume, found {}",
        path.display(),
        got.kind_name()
    ))
}

macro_rules! typed_reader {
    ($name:ident, $t:ty, $variant:ident, $label:expr) => {
        pub fn $name(path: impl AsRef<Path>) -> Result<$t> {
            let path = path.as_ref();
            match read_volume(path)? {
                Volume::$variant(v) => Ok(v),
                other => Err(wrong_kind(path, $label, &other)),
            }
        }
    };
}

typed_reader!(read_scalar, ScalarVolume, Scalar, "scalar");
typed_reader!(read_vector, VectorVolume, Vector, "3-channel scalar");
typed_reader!(read_prob, ProbabilityVolume, Prob, "prob");
typed_reader!(read_mask, MaskVolume, Mask, "mask");
typed_reader!(read_labelset, LabelSetVolume, LabelSet, "labelset");

/// Reads a `{ "classes": [...] }` label-space file.
pub fn read_label_space(path: impl AsRef<Path>) -> Result<LabelSpace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

/// Reads any JSON document into `T`, reporting the path on failure.
pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
