//! Voxel volumes, tumor sub-region masks and NIfTI-1 I/O.
//!
//! All voxel buffers are stored x-fastest: the linear index of `(x, y, z)` is
//! `x + nx * (y + ny * z)`.

mod nifti;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use nifti::{
    decode as decode_nifti, encode as encode_nifti, read_label_nifti, read_nifti, write_nifti,
    NiftiDatatype, NiftiImage,
};

/// Label values a segmentation may contain.
pub const VALID_LABELS: [u8; 4] = [0, 1, 2, 4];

/// Necrotic / non-enhancing tumor core.
pub const LABEL_NCR: u8 = 1;
/// Peritumoral edema.
pub const LABEL_ED: u8 = 2;
/// Enhancing tumor.
pub const LABEL_ET: u8 = 4;

pub fn is_valid_label(v: u8) -> bool {
    VALID_LABELS.contains(&v)
}

/// Voxel grid shape and physical spacing in millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
}

impl Geometry {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidVolume(format!(
                "dimensions must be positive, got {dims:?}"
            )));
        }
        if dims.iter().any(|&d| d > i16::MAX as usize) {
            return Err(Error::InvalidVolume(format!(
                "dimensions exceed the NIfTI-1 limit of {}: {dims:?}",
                i16::MAX
            )));
        }
        if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
            return Err(Error::InvalidVolume(format!(
                "spacing must be finite and positive, got {spacing:?}"
            )));
        }
        Ok(Self { dims, spacing })
    }

    /// Isotropic 1 mm spacing.
    pub fn isotropic(dims: [usize; 3]) -> Result<Self> {
        Self::new(dims, [1.0; 3])
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// Physical position of a voxel center in millimeters.
    #[inline]
    pub fn position(&self, idx: usize) -> [f64; 3] {
        let c = self.coords(idx);
        [
            c[0] as f64 * self.spacing[0],
            c[1] as f64 * self.spacing[1],
            c[2] as f64 * self.spacing[2],
        ]
    }

    /// Largest distance between any two voxel centers.
    pub fn diagonal(&self) -> f64 {
        (0..3)
            .map(|a| {
                let e = (self.dims[a] - 1) as f64 * self.spacing[a];
                e * e
            })
            .sum::<f64>()
            .sqrt()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return Err(Error::InvalidVolume(format!(
                "data length {len} does not match dimensions {:?} ({} voxels)",
                self.dims,
                self.len()
            )));
        }
        Ok(())
    }

    pub(crate) fn ensure_same(&self, other: &Geometry) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::GeometryMismatch(format!(
                "dimensions {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        if self.spacing != other.spacing {
            return Err(Error::GeometryMismatch(format!(
                "spacing {:?} vs {:?}",
                self.spacing, other.spacing
            )));
        }
        Ok(())
    }
}

/// A segmentation volume with labels drawn from {0, 1, 2, 4}.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    geometry: Geometry,
    data: Vec<u8>,
}

impl LabelVolume {
    pub fn new(geometry: Geometry, data: Vec<u8>) -> Result<Self> {
        geometry.check_len(data.len())?;
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !is_valid_label(**v)) {
            return Err(Error::InvalidLabel { value, index });
        }
        Ok(Self { geometry, data })
    }

    pub fn zeros(geometry: Geometry) -> Self {
        Self {
            data: vec![0; geometry.len()],
            geometry,
        }
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u8 {
        self.data[self.geometry.index(x, y, z)]
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }
}

/// Foreground/background voxel flags on a geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    geometry: Geometry,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(geometry: Geometry, data: Vec<bool>) -> Result<Self> {
        geometry.check_len(data.len())?;
        Ok(Self { geometry, data })
    }

    pub fn empty(geometry: Geometry) -> Self {
        Self {
            data: vec![false; geometry.len()],
            geometry,
        }
    }

    /// Mask with foreground at the given voxel indices.
    pub fn from_indices<I: IntoIterator<Item = [usize; 3]>>(
        geometry: Geometry,
        voxels: I,
    ) -> Result<Self> {
        let mut mask = Self::empty(geometry);
        for [x, y, z] in voxels {
            if x >= geometry.dims[0] || y >= geometry.dims[1] || z >= geometry.dims[2] {
                return Err(Error::InvalidVolume(format!(
                    "voxel ({x}, {y}, {z}) outside dimensions {:?}",
                    geometry.dims
                )));
            }
            let i = geometry.index(x, y, z);
            mask.data[i] = true;
        }
        Ok(mask)
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|v| *v)
    }

    /// Same flags with a different spacing.
    pub fn with_spacing(&self, spacing: [f64; 3]) -> Result<Self> {
        let geometry = Geometry::new(self.geometry.dims, spacing)?;
        Ok(Self {
            geometry,
            data: self.data.clone(),
        })
    }

    /// Encodes the mask as a label volume using `label` for foreground.
    pub fn to_labels(&self, label: u8) -> Result<LabelVolume> {
        let data = self.data.iter().map(|&f| if f { label } else { 0 }).collect();
        LabelVolume::new(self.geometry, data)
    }
}

/// Voxel storage of an intensity image.
#[derive(Debug, Clone, PartialEq)]
pub enum VoxelData {
    U8(Vec<u8>),
    I16(Vec<i16>),
    F32(Vec<f32>),
}

impl VoxelData {
    pub fn len(&self) -> usize {
        match self {
            VoxelData::U8(v) => v.len(),
            VoxelData::I16(v) => v.len(),
            VoxelData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn datatype(&self) -> NiftiDatatype {
        match self {
            VoxelData::U8(_) => NiftiDatatype::Uint8,
            VoxelData::I16(_) => NiftiDatatype::Int16,
            VoxelData::F32(_) => NiftiDatatype::Float32,
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            VoxelData::U8(v) => v.iter().map(|&x| f64::from(x)).collect(),
            VoxelData::I16(v) => v.iter().map(|&x| f64::from(x)).collect(),
            VoxelData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
        }
    }
}

/// A single-channel intensity image.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityVolume {
    geometry: Geometry,
    data: VoxelData,
}

impl IntensityVolume {
    pub fn new(geometry: Geometry, data: VoxelData) -> Result<Self> {
        geometry.check_len(data.len())?;
        if let VoxelData::F32(v) = &data {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidVolume("intensities must be finite".into()));
            }
        }
        Ok(Self { geometry, data })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn data(&self) -> &VoxelData {
        &self.data
    }
}

/// Evaluated tumor sub-regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    /// Enhancing tumor.
    ET,
    /// Tumor core.
    TC,
    /// Whole tumor.
    WT,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::ET, Region::TC, Region::WT];

    pub fn as_str(self) -> &'static str {
        match self {
            Region::ET => "ET",
            Region::TC => "TC",
            Region::WT => "WT",
        }
    }
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ET" => Ok(Region::ET),
            "TC" => Ok(Region::TC),
            "WT" => Ok(Region::WT),
            other => Err(Error::Config(format!("unknown region {other:?}"))),
        }
    }
}

/// Label sets making up each region.
///
/// The default scores TC as labels {2, 4}. Some protocols define TC as
/// ET + NCR, i.e. {1, 4}; use [`RegionMapping::with_labels`] for that.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegionMapping {
    pub et: Vec<u8>,
    pub tc: Vec<u8>,
    pub wt: Vec<u8>,
}

impl Default for RegionMapping {
    fn default() -> Self {
        Self {
            et: vec![LABEL_ET],
            tc: vec![LABEL_ED, LABEL_ET],
            wt: vec![LABEL_NCR, LABEL_ED, LABEL_ET],
        }
    }
}

impl RegionMapping {
    pub fn with_labels(mut self, region: Region, labels: Vec<u8>) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|l| !is_valid_label(**l) || **l == 0) {
            return Err(Error::Config(format!(
                "region {region} cannot contain label {bad}"
            )));
        }
        *self.slot_mut(region) = labels;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        for region in Region::ALL {
            let labels = self.labels(region);
            if labels.is_empty() {
                return Err(Error::Config(format!("region {region} has no labels")));
            }
            if let Some(&bad) = labels.iter().find(|l| !is_valid_label(**l) || **l == 0) {
                return Err(Error::Config(format!(
                    "region {region} cannot contain label {bad}"
                )));
            }
        }
        Ok(())
    }

    pub fn labels(&self, region: Region) -> &[u8] {
        match region {
            Region::ET => &self.et,
            Region::TC => &self.tc,
            Region::WT => &self.wt,
        }
    }

    fn slot_mut(&mut self, region: Region) -> &mut Vec<u8> {
        match region {
            Region::ET => &mut self.et,
            Region::TC => &mut self.tc,
            Region::WT => &mut self.wt,
        }
    }

    pub fn contains(&self, region: Region, label: u8) -> bool {
        self.labels(region).contains(&label)
    }

    pub fn mask(&self, vol: &LabelVolume, region: Region) -> BinaryMask {
        let mut lut = [false; 256];
        for &l in self.labels(region) {
            lut[l as usize] = true;
        }
        BinaryMask {
            geometry: vol.geometry,
            data: vol.data.iter().map(|&l| lut[l as usize]).collect(),
        }
    }
}

/// Foreground mask of `region` under the default label mapping.
pub fn region_mask(vol: &LabelVolume, region: Region) -> BinaryMask {
    RegionMapping::default().mask(vol, region)
}
