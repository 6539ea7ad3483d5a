//! Minimal NIfTI-1 single-file (`.nii`) reader and writer.
//!
//! Supported: little-endian, uncompressed, `magic = "n+1\0"`, 3-D volumes of
//! uint8, int16 or float32 voxels. Spacing comes from `pixdim[1..=3]`; no
//! orientation or intensity scaling is applied.

use std::fs;
use std::path::Path;

use super::{Geometry, IntensityVolume, LabelVolume, VoxelData};
use crate::error::{Error, Result};

const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";

mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const XYZT_UNITS: usize = 123;
    pub const MAGIC: usize = 344;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(i16)]
pub enum NiftiDatatype {
    Uint8 = 2,
    Int16 = 4,
    Float32 = 16,
}

impl NiftiDatatype {
    pub fn from_code(code: i16) -> Result<Self> {
        match code {
            2 => Ok(Self::Uint8),
            4 => Ok(Self::Int16),
            16 => Ok(Self::Float32),
            other => Err(Error::UnsupportedDatatype(other)),
        }
    }

    pub fn code(self) -> i16 {
        self as i16
    }

    pub fn bytes_per_voxel(self) -> usize {
        match self {
            Self::Uint8 => 1,
            Self::Int16 => 2,
            Self::Float32 => 4,
        }
    }
}

/// Anything that can be stored as a NIfTI-1 volume.
pub trait NiftiImage {
    fn geometry(&self) -> &Geometry;
    fn datatype(&self) -> NiftiDatatype;
    fn append_voxels(&self, out: &mut Vec<u8>);
}

impl NiftiImage for LabelVolume {
    fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    fn datatype(&self) -> NiftiDatatype {
        NiftiDatatype::Uint8
    }

    fn append_voxels(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.data);
    }
}

impl NiftiImage for IntensityVolume {
    fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    fn datatype(&self) -> NiftiDatatype {
        self.data.datatype()
    }

    fn append_voxels(&self, out: &mut Vec<u8>) {
        match &self.data {
            VoxelData::U8(v) => out.extend_from_slice(v),
            VoxelData::I16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            VoxelData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
}

fn put_i16(buf: &mut [u8], off: usize, v: i16) {
    buf[off..off + 2].copy_from_slice(&v.to_le_bytes());
}

fn put_f32(buf: &mut [u8], off: usize, v: f32) {
    buf[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

fn get_i16(buf: &[u8], off: usize) -> i16 {
    i16::from_le_bytes([buf[off], buf[off + 1]])
}

fn get_i32(buf: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(buf[off..off + 4].try_into().unwrap())
}

fn get_f32(buf: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(buf[off..off + 4].try_into().unwrap())
}

/// Serializes an image into `.nii` bytes.
pub fn encode(image: &impl NiftiImage) -> Vec<u8> {
    let geometry = image.geometry();
    let datatype = image.datatype();
    let mut out = vec![0u8; VOX_OFFSET];
    out[offsets::SIZEOF_HDR..4].copy_from_slice(&(HEADER_SIZE as i32).to_le_bytes());

    let mut dim = [1i16; 8];
    dim[0] = 3;
    for a in 0..3 {
        dim[a + 1] = geometry.dims[a] as i16;
    }
    for (i, d) in dim.iter().enumerate() {
        put_i16(&mut out, offsets::DIM + 2 * i, *d);
    }
    put_i16(&mut out, offsets::DATATYPE, datatype.code());
    put_i16(&mut out, offsets::BITPIX, (datatype.bytes_per_voxel() * 8) as i16);

    let mut pixdim = [1.0f32; 8];
    for a in 0..3 {
        pixdim[a + 1] = geometry.spacing[a] as f32;
    }
    for (i, p) in pixdim.iter().enumerate() {
        put_f32(&mut out, offsets::PIXDIM + 4 * i, *p);
    }
    put_f32(&mut out, offsets::VOX_OFFSET, VOX_OFFSET as f32);
    put_f32(&mut out, offsets::SCL_SLOPE, 1.0);
    // millimeters, seconds
    out[offsets::XYZT_UNITS] = 2 | 8;
    out[offsets::MAGIC..offsets::MAGIC + 4].copy_from_slice(MAGIC);

    out.reserve(geometry.len() * datatype.bytes_per_voxel());
    image.append_voxels(&mut out);
    out
}

/// Parses `.nii` bytes into a typed intensity volume.
pub fn decode(bytes: &[u8]) -> Result<IntensityVolume> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::Format(format!(
            "file is {} bytes, shorter than the {HEADER_SIZE}-byte header",
            bytes.len()
        )));
    }
    let sizeof_hdr = get_i32(bytes, offsets::SIZEOF_HDR);
    if sizeof_hdr != HEADER_SIZE as i32 {
        if sizeof_hdr.swap_bytes() == HEADER_SIZE as i32 {
            return Err(Error::Format("big-endian files are not supported".into()));
        }
        return Err(Error::Format(format!("sizeof_hdr is {sizeof_hdr}, expected 348")));
    }
    let magic = &bytes[offsets::MAGIC..offsets::MAGIC + 4];
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, expected single-file \"n+1\\0\""
        )));
    }

    let dim: Vec<i16> = (0..8).map(|i| get_i16(bytes, offsets::DIM + 2 * i)).collect();
    let ndim = dim[0];
    if !(3..=7).contains(&ndim) {
        return Err(Error::Format(format!("dim[0] = {ndim}, expected a 3-D volume")));
    }
    if let Some(extra) = dim[4..=ndim as usize].iter().find(|d| **d != 1) {
        return Err(Error::Format(format!(
            "only 3-D volumes are supported, found extra dimension of size {extra}"
        )));
    }
    let mut dims = [0usize; 3];
    for a in 0..3 {
        let d = dim[a + 1];
        if d < 1 {
            return Err(Error::Format(format!("dim[{}] = {d} is not positive", a + 1)));
        }
        dims[a] = d as usize;
    }

    let datatype = NiftiDatatype::from_code(get_i16(bytes, offsets::DATATYPE))?;
    let bitpix = get_i16(bytes, offsets::BITPIX);
    if bitpix as usize != datatype.bytes_per_voxel() * 8 {
        return Err(Error::Format(format!(
            "bitpix {bitpix} inconsistent with datatype {datatype:?}"
        )));
    }

    let mut spacing = [0f64; 3];
    for a in 0..3 {
        spacing[a] = f64::from(get_f32(bytes, offsets::PIXDIM + 4 * (a + 1)));
    }
    let geometry = Geometry::new(dims, spacing)
        .map_err(|e| Error::Format(format!("invalid header geometry: {e}")))?;

    let vox_offset = get_f32(bytes, offsets::VOX_OFFSET);
    if !vox_offset.is_finite() || vox_offset < VOX_OFFSET as f32 || vox_offset.fract() != 0.0 {
        return Err(Error::Format(format!("invalid vox_offset {vox_offset}")));
    }
    let start = vox_offset as usize;
    let n = geometry.len();
    let nbytes = n * datatype.bytes_per_voxel();
    let payload = bytes
        .get(start..start + nbytes)
        .ok_or_else(|| {
            Error::Format(format!(
                "truncated voxel data: need {nbytes} bytes at offset {start}, file has {}",
                bytes.len()
            ))
        })?;

    let data = match datatype {
        NiftiDatatype::Uint8 => VoxelData::U8(payload.to_vec()),
        NiftiDatatype::Int16 => VoxelData::I16(
            payload
                .chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]))
                .collect(),
        ),
        NiftiDatatype::Float32 => VoxelData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
    };
    IntensityVolume::new(geometry, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<IntensityVolume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Reads a uint8 segmentation and checks every label is in {0, 1, 2, 4}.
pub fn read_label_nifti(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let image = read_nifti(path)?;
    labels_from_image(image)
}

pub(crate) fn labels_from_image(image: IntensityVolume) -> Result<LabelVolume> {
    match image.data {
        VoxelData::U8(data) => LabelVolume::new(image.geometry, data),
        other => Err(Error::Format(format!(
            "label volumes must be uint8, found {:?}",
            other.datatype()
        ))),
    }
}

pub fn write_nifti(image: &impl NiftiImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(image)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volumes::Geometry;

    fn labels_2x2x2(data: Vec<u8>) -> LabelVolume {
        LabelVolume::new(Geometry::isotropic([2, 2, 2]).unwrap(), data).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&labels_2x2x2(vec![0; 8]));
        assert_eq!(bytes.len(), 352 + 8);
        assert_eq!(get_i32(&bytes, 0), 348);
        assert_eq!(&bytes[344..348], b"n+1\0");
        assert_eq!(get_i16(&bytes, 40), 3);
        assert_eq!(get_i16(&bytes, 70), 2);
        assert_eq!(get_i16(&bytes, 72), 8);
        assert_eq!(get_f32(&bytes, 108), 352.0);
    }

    #[test]
    fn round_trip_zero_volume() {
        let v = LabelVolume::zeros(Geometry::isotropic([4, 4, 4]).unwrap());
        let back = labels_from_image(decode(&encode(&v)).unwrap()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn anisotropic_spacing_preserved() {
        let g = Geometry::new([3, 2, 5], [1.0, 2.0, 0.5]).unwrap();
        let v = LabelVolume::zeros(g);
        let back = decode(&encode(&v)).unwrap();
        assert_eq!(back.geometry().spacing, [1.0, 2.0, 0.5]);
        assert_eq!(back.geometry().dims, [3, 2, 5]);
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let mut bytes = encode(&labels_2x2x2(vec![0; 8]));
        bytes[344..348].copy_from_slice(b"ni1\0");
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn label_three_is_rejected() {
        let image = IntensityVolume::new(
            Geometry::isotropic([2, 2, 2]).unwrap(),
            VoxelData::U8(vec![0, 0, 0, 3, 0, 0, 0, 0]),
        )
        .unwrap();
        let bytes = encode(&image);
        let err = labels_from_image(decode(&bytes).unwrap()).unwrap_err();
        assert!(matches!(err, Error::InvalidLabel { value: 3, index: 3 }));
    }

    #[test]
    fn unsupported_datatype() {
        let mut bytes = encode(&labels_2x2x2(vec![0; 8]));
        put_i16(&mut bytes, offsets::DATATYPE, 64);
        assert!(matches!(decode(&bytes), Err(Error::UnsupportedDatatype(64))));
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode(&labels_2x2x2(vec![0; 8]));
        assert!(matches!(decode(&bytes[..355]), Err(Error::Format(_))));
        assert!(matches!(decode(&bytes[..100]), Err(Error::Format(_))));
    }

    #[test]
    fn big_endian_reported() {
        let mut bytes = encode(&labels_2x2x2(vec![0; 8]));
        bytes[0..4].copy_from_slice(&348i32.to_be_bytes());
        let err = decode(&bytes).unwrap_err();
        assert!(err.to_string().contains("big-endian"));
    }

    #[test]
    fn int16_and_float32_round_trip() {
        let g = Geometry::new([2, 3, 1], [0.7, 1.1, 3.0]).unwrap();
        let a = IntensityVolume::new(g, VoxelData::I16(vec![-5, 0, 7, i16::MAX, i16::MIN, 1])).unwrap();
        assert_eq!(decode(&encode(&a)).unwrap(), IntensityVolume::new(
            Geometry::new([2, 3, 1], [0.7f32 as f64, 1.1f32 as f64, 3.0]).unwrap(),
            a.data().clone(),
        ).unwrap());
        let b = IntensityVolume::new(g, VoxelData::F32(vec![0.1, -2.5, 1e-30, 3.0, 0.0, -0.0])).unwrap();
        let back = decode(&encode(&b)).unwrap();
        match (back.data(), b.data()) {
            (VoxelData::F32(x), VoxelData::F32(y)) => {
                assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()))
            }
            _ => panic!("datatype changed"),
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seg.nii");
        let v = labels_2x2x2(vec![0, 1, 2, 4, 4, 2, 1, 0]);
        write_nifti(&v, &path).unwrap();
        assert_eq!(read_label_nifti(&path).unwrap(), v);
        assert!(matches!(
            read_nifti(dir.path().join("missing.nii")),
            Err(Error::Io { .. })
        ));
    }
}
