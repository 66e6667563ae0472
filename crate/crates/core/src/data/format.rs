//! SFNR raster container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SFNR" | version u8 | H u32 | W u32 | bands u32 | aux channels u32 | classes u32 | dtype u32 (0 = f32)
//! hsi     bands × H × W   f32, band-sequential, row-major
//! aux     channels × H × W f32
//! labels  H × W u16
//! names   classes × (length u16, UTF-8 bytes)
//! ```

use std::fs;
use std::path::Path;

use super::RasterPair;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const RASTER_MAGIC: [u8; 4] = *b"SFNR";
pub const RASTER_VERSION: u8 = 1;
const DTYPE_F32: u32 = 0;

pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let found: [u8; 4] = self.take(4)?.try_into().expect("4 bytes");
        if found != expected {
            return Err(Error::BadMagic { expected, found });
        }
        Ok(())
    }

    pub(crate) fn scalars<T: Scalar>(&mut self, count: u64) -> Result<Vec<T>> {
        let bytes = count
            .checked_mul(T::BYTES as u64)
            .and_then(|b| usize::try_from(b).ok())
            .ok_or_else(|| Error::ExtentOverflow(format!("{count} scalars")))?;
        Ok(self.take(bytes)?.chunks_exact(T::BYTES).map(T::read_le).collect())
    }

    pub(crate) fn string(&mut self) -> Result<String> {
        let len = self.u16()? as usize;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|e| Error::InvalidData(format!("name is not UTF-8: {e}")))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            extra => Err(Error::TrailingBytes(extra)),
        }
    }
}

pub(crate) fn put_string(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let len = u16::try_from(s.len()).map_err(|_| Error::ExtentOverflow(format!("name of {} bytes", s.len())))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn extent_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::ExtentOverflow(format!("{what} = {v}")))
}

pub fn encode_raster(raster: &RasterPair) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&RASTER_MAGIC);
    out.push(RASTER_VERSION);
    for (v, what) in [
        (raster.height(), "height"),
        (raster.width(), "width"),
        (raster.bands(), "bands"),
        (raster.aux_channels(), "aux channels"),
        (raster.n_classes(), "classes"),
    ] {
        out.extend_from_slice(&extent_u32(v, what)?.to_le_bytes());
    }
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    raster.hsi().data().iter().for_each(|v| v.write_le(&mut out));
    raster.aux().data().iter().for_each(|v| v.write_le(&mut out));
    raster.labels().iter().for_each(|l| out.extend_from_slice(&l.to_le_bytes()));
    for name in raster.class_names() {
        put_string(&mut out, name)?;
    }
    Ok(out)
}

pub fn decode_raster(bytes: &[u8]) -> Result<RasterPair> {
    let mut r = ByteReader::new(bytes);
    r.magic(RASTER_MAGIC)?;
    let version = r.u8()?;
    if version != RASTER_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let h = r.u32()? as u64;
    let w = r.u32()? as u64;
    let bands = r.u32()? as u64;
    let channels = r.u32()? as u64;
    let classes = r.u32()? as u64;
    let dtype = r.u32()?;
    if dtype != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(dtype));
    }
    if h == 0 || w == 0 || bands == 0 || channels == 0 || classes == 0 {
        return Err(Error::InvalidData(format!(
            "zero extent in header: {h}x{w}, {bands} bands, {channels} channels, {classes} classes"
        )));
    }
    let overflow = || Error::ExtentOverflow(format!("{h}x{w} grid with {bands} bands and {channels} channels"));
    let plane = h.checked_mul(w).ok_or_else(overflow)?;
    let hsi_len = plane.checked_mul(bands).ok_or_else(overflow)?;
    let aux_len = plane.checked_mul(channels).ok_or_else(overflow)?;
    // every count must still fit in memory-addressable byte ranges
    hsi_len
        .checked_add(aux_len)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| plane.checked_mul(2).and_then(|p| n.checked_add(p)))
        .filter(|&n| usize::try_from(n).is_ok())
        .ok_or_else(overflow)?;

    let hsi = r.scalars::<f32>(hsi_len)?;
    let aux = r.scalars::<f32>(aux_len)?;
    let label_bytes = r.take(plane as usize * 2)?;
    let labels = label_bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect();
    let names = (0..classes).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
    r.finish()?;

    let (h, w) = (h as usize, w as usize);
    RasterPair::new(
        Tensor::new([bands as usize, h, w], hsi)?,
        Tensor::new([channels as usize, h, w], aux)?,
        labels,
        names,
    )
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<RasterPair> {
    decode_raster(&fs::read(path)?)
}

pub fn write_raster(path: impl AsRef<Path>, raster: &RasterPair) -> Result<()> {
    fs::write(path, encode_raster(raster)?)?;
    Ok(())
}
