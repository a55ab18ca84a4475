//! Label spaces, subset bitmasks and voxel-grid containers.
//!
//! Voxels are stored x-fastest (`x + nx * (y + ny * z)`); multi-channel
//! volumes store their channels contiguously per voxel.

use std::fmt;
use std::ops::{BitAnd, BitOr};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported number of classes.
pub const MAX_CLASSES: usize = 30;

/// Tolerance on per-voxel channel sums of a [`ProbabilityVolume`].
pub const PROB_SUM_TOL: f64 = 1e-6;

/// Ordered, named set of classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LabelSpaceFile", into = "LabelSpaceFile")]
pub struct LabelSpace {
    names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct LabelSpaceFile {
    classes: Vec<String>,
}

impl TryFrom<LabelSpaceFile> for LabelSpace {
    type Error = Error;
    fn try_from(f: LabelSpaceFile) -> Result<Self> {
        LabelSpace::new(f.classes)
    }
}

impl From<LabelSpace> for LabelSpaceFile {
    fn from(s: LabelSpace) -> Self {
        LabelSpaceFile { classes: s.names }
    }
}

impl LabelSpace {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 || names.len() > MAX_CLASSES {
            return Err(Error::Validation(format!(
                "label space needs between 2 and {MAX_CLASSES} classes, got {}",
                names.len()
            )));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.contains('|') {
                return Err(Error::Validation(format!("invalid class name {n:?}")));
            }
            if names[..i].contains(n) {
                return Err(Error::Validation(format!("duplicate class name {n:?}")));
            }
        }
        Ok(LabelSpace { names })
    }

    /// Classes named `c0`, `c1`, ...
    pub fn indexed(k: usize) -> Result<Self> {
        Self::new((0..k).map(|i| format!("c{i}")))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// The whole class set.
    pub fn full(&self) -> SubsetMask {
        SubsetMask::full(self.len())
    }

    pub fn contains(&self, s: SubsetMask) -> bool {
        s.bits() & !self.full().bits() == 0
    }

    pub fn subset<S: AsRef<str>>(&self, names: &[S]) -> Result<SubsetMask> {
        names.iter().try_fold(SubsetMask::EMPTY, |acc, n| {
            let n = n.as_ref();
            self.index_of(n)
                .map(|i| acc | SubsetMask::singleton(i))
                .ok_or_else(|| Error::Validation(format!("unknown class {n:?}")))
        })
    }

    /// Parses a `|`-joined list of class names.
    pub fn parse_subset(&self, s: &str) -> Result<SubsetMask> {
        let parts: Vec<&str> = s.split('|').map(str::trim).collect();
        self.subset(&parts)
    }

    pub fn format_subset(&self, s: SubsetMask) -> String {
        s.iter()
            .map(|i| self.names[i].as_str())
            .collect::<Vec<_>>()
            .join("|")
    }
}

/// Bitmask subset of a label space (bit `c` selects class `c`).
#[derive(
    Copy, Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct SubsetMask(u32);

impl SubsetMask {
    pub const EMPTY: SubsetMask = SubsetMask(0);

    pub const fn from_bits(bits: u32) -> Self {
        SubsetMask(bits)
    }

    pub fn singleton(c: usize) -> Self {
        debug_assert!(c < MAX_CLASSES);
        SubsetMask(1 << c)
    }

    pub fn full(k: usize) -> Self {
        debug_assert!(k <= MAX_CLASSES);
        SubsetMask(((1u64 << k) - 1) as u32)
    }

    pub fn from_classes<I: IntoIterator<Item = usize>>(classes: I) -> Self {
        classes
            .into_iter()
            .fold(Self::EMPTY, |acc, c| acc | Self::singleton(c))
    }

    pub const fn bits(self) -> u32 {
        self.0
    }

    pub fn contains(self, c: usize) -> bool {
        c < 32 && self.0 & (1 << c) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_singleton(self) -> bool {
        self.0.count_ones() == 1
    }

    pub fn is_subset_of(self, other: SubsetMask) -> bool {
        self.0 & !other.0 == 0
    }

    /// Complement within a space of `k` classes.
    pub fn complement(self, k: usize) -> Self {
        SubsetMask(!self.0 & Self::full(k).0)
    }

    /// Class indices in increasing order.
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let c = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(c)
            }
        })
    }

    /// All subsets of a `k`-class space, empty set first.
    pub fn all(k: usize) -> impl Iterator<Item = SubsetMask> {
        (0..(1u64 << k)).map(|b| SubsetMask(b as u32))
    }
}

impl BitAnd for SubsetMask {
    type Output = SubsetMask;
    fn bitand(self, rhs: SubsetMask) -> SubsetMask {
        SubsetMask(self.0 & rhs.0)
    }
}

impl BitOr for SubsetMask {
    type Output = SubsetMask;
    fn bitor(self, rhs: SubsetMask) -> SubsetMask {
        SubsetMask(self.0 | rhs.0)
    }
}

impl fmt::Display for SubsetMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (n, c) in self.iter().enumerate() {
            if n > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, "}}")
    }
}

/// Grid dimensions and voxel spacing in mm.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct GridMeta {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
}

impl GridMeta {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Validation(format!(
                "grid dims must be >= 1, got {dims:?}"
            )));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Validation(format!(
                "grid spacing must be positive, got {spacing:?}"
            )));
        }
        Ok(GridMeta { dims, spacing })
    }

    /// Unit-spaced grid.
    pub fn cube(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, [1.0; 3])
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn coords(&self, i: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    pub fn ensure_same(&self, other: &GridMeta) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{:?}@{:?} vs {:?}@{:?}",
                self.dims, self.spacing, other.dims, other.spacing
            )))
        }
    }
}

fn check_len(meta: &GridMeta, per_voxel: usize, len: usize) -> Result<()> {
    let expected = meta.len() * per_voxel;
    if len != expected {
        return Err(Error::Validation(format!(
            "data length {len} does not match grid ({expected} values)"
        )));
    }
    Ok(())
}

/// One real value per voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarVolume {
    meta: GridMeta,
    data: Vec<f64>,
}

impl ScalarVolume {
    pub fn new(meta: GridMeta, data: Vec<f64>) -> Result<Self> {
        check_len(&meta, 1, data.len())?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "non-finite value at voxel {i}"
            )));
        }
        Ok(ScalarVolume { meta, data })
    }

    pub fn filled(meta: GridMeta, value: f64) -> Self {
        ScalarVolume {
            meta,
            data: vec![value; meta.len()],
        }
    }

    pub fn from_fn(meta: GridMeta, mut f: impl FnMut([usize; 3]) -> f64) -> Result<Self> {
        let data = (0..meta.len()).map(|i| f(meta.coords(i))).collect();
        Self::new(meta, data)
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.meta.index(x, y, z)]
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

/// One boolean per voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskVolume {
    meta: GridMeta,
    data: Vec<bool>,
}

impl MaskVolume {
    pub fn new(meta: GridMeta, data: Vec<bool>) -> Result<Self> {
        check_len(&meta, 1, data.len())?;
        Ok(MaskVolume { meta, data })
    }

    pub fn empty(meta: GridMeta) -> Self {
        MaskVolume {
            meta,
            data: vec![false; meta.len()],
        }
    }

    pub fn from_fn(meta: GridMeta, mut f: impl FnMut([usize; 3]) -> bool) -> Self {
        let data = (0..meta.len()).map(|i| f(meta.coords(i))).collect();
        MaskVolume { meta, data }
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.meta.index(x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = self.meta.index(x, y, z);
        self.data[i] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn union(&self, other: &MaskVolume) -> Result<MaskVolume> {
        self.meta.ensure_same(&other.meta)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a || b)
            .collect();
        Ok(MaskVolume {
            meta: self.meta,
            data,
        })
    }

    pub fn intersection(&self, other: &MaskVolume) -> Result<MaskVolume> {
        self.meta.ensure_same(&other.meta)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a && b)
            .collect();
        Ok(MaskVolume {
            meta: self.meta,
            data,
        })
    }
}

/// `channels` probabilities per voxel, each voxel summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityVolume {
    meta: GridMeta,
    channels: usize,
    data: Vec<f64>,
}

impl ProbabilityVolume {
    pub fn new(meta: GridMeta, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels < 1 {
            return Err(Error::Validation(
                "probability volume needs >= 1 channel".into(),
            ));
        }
        check_len(&meta, channels, data.len())?;
        for (i, row) in data.chunks_exact(channels).enumerate() {
            if row.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
                return Err(Error::InvalidValue(format!(
                    "negative or non-finite probability at voxel {i}"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::Validation(format!(
                    "channel sum {s} at voxel {i} is not 1"
                )));
            }
        }
        Ok(ProbabilityVolume {
            meta,
            channels,
            data,
        })
    }

    /// Divides each voxel by its channel sum.
    pub fn renormalized(meta: GridMeta, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        if channels < 1 {
            return Err(Error::Validation(
                "probability volume needs >= 1 channel".into(),
            ));
        }
        check_len(&meta, channels, data.len())?;
        for (i, row) in data.chunks_exact_mut(channels).enumerate() {
            let s: f64 = row.iter().sum();
            if row.iter().any(|&v| !(v >= 0.0 && v.is_finite())) || !(s > 0.0) {
                return Err(Error::InvalidValue(format!(
                    "voxel {i} cannot be normalized (sum {s})"
                )));
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        Ok(ProbabilityVolume {
            meta,
            channels,
            data,
        })
    }

    /// Same per-voxel vector everywhere.
    pub fn constant(meta: GridMeta, p: &[f64]) -> Result<Self> {
        let data = p
            .iter()
            .copied()
            .cycle()
            .take(meta.len() * p.len())
            .collect();
        Self::new(meta, p.len(), data)
    }

    /// One-hot encoding of a hard label map.
    pub fn one_hot(meta: GridMeta, channels: usize, labels: &[usize]) -> Result<Self> {
        check_len(&meta, 1, labels.len())?;
        let mut data = vec![0.0; labels.len() * channels];
        for (i, &l) in labels.iter().enumerate() {
            if l >= channels {
                return Err(Error::Validation(format!(
                    "label {l} out of range at voxel {i}"
                )));
            }
            data[i * channels + l] = 1.0;
        }
        Ok(ProbabilityVolume {
            meta,
            channels,
            data,
        })
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn voxel(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn voxels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.channels)
    }

    /// Binary mask of one channel's argmax region.
    pub fn argmax_mask(&self, c: usize) -> MaskVolume {
        let data = self.voxels().map(|row| argmax(row) == c).collect();
        MaskVolume {
            meta: self.meta,
            data,
        }
    }
}

/// Per-voxel label-set annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelSetVolume {
    meta: GridMeta,
    data: Vec<SubsetMask>,
}

impl LabelSetVolume {
    pub fn new(meta: GridMeta, data: Vec<SubsetMask>) -> Result<Self> {
        check_len(&meta, 1, data.len())?;
        if let Some(i) = data.iter().position(|s| s.is_empty()) {
            return Err(Error::Validation(format!("empty label-set at voxel {i}")));
        }
        Ok(LabelSetVolume { meta, data })
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn data(&self) -> &[SubsetMask] {
        &self.data
    }
}

/// Three real components per voxel (a displacement field in mm).
#[derive(Clone, Debug, PartialEq)]
pub struct VectorVolume {
    meta: GridMeta,
    data: Vec<[f64; 3]>,
}

impl VectorVolume {
    pub fn new(meta: GridMeta, data: Vec<[f64; 3]>) -> Result<Self> {
        check_len(&meta, 1, data.len())?;
        if data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("non-finite displacement".into()));
        }
        Ok(VectorVolume { meta, data })
    }

    pub fn meta(&self) -> &GridMeta {
        &self.meta
    }

    pub fn data(&self) -> &[[f64; 3]] {
        &self.data
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// Hard decision: the singleton of the most probable channel at every voxel.
pub fn argmax_labels(pv: &ProbabilityVolume) -> LabelSetVolume {
    let data = pv
        .voxels()
        .map(|row| SubsetMask::singleton(argmax(row)))
        .collect();
    LabelSetVolume {
        meta: pv.meta,
        data,
    }
}
