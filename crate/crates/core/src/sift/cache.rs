//! `GIDX` descriptor cache: one file per font.
//!
//! Layout (little-endian): magic, version u32, font_id length u32 + UTF-8
//! bytes, count u32, dim u32, `count * dim` f32 values, then per descriptor
//! x, y, sigma, orientation (f32) and glyph index (u16).
//!
//! Only the geometry above survives a round trip; octave, level and response
//! are detector internals and read back as zero.

use std::path::Path;

use super::{Descriptor, DescriptorSet, Keypoint, DESCRIPTOR_DIM};
use crate::io::{read_file, write_file, ByteReader, ByteWriter};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"GIDX";
pub const CACHE_VERSION: u32 = 1;

pub(crate) fn encode(set: &DescriptorSet) -> Result<Vec<u8>> {
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.u32(CACHE_VERSION);
    w.len_u32(set.font_id.len())?;
    w.bytes(set.font_id.as_bytes());
    w.len_u32(set.descriptors.len())?;
    w.u32(DESCRIPTOR_DIM as u32);
    for d in &set.descriptors {
        for &v in &d.values {
            w.f32(v);
        }
    }
    for d in &set.descriptors {
        let k = &d.keypoint;
        w.f32(k.x);
        w.f32(k.y);
        w.f32(k.sigma);
        w.f32(k.orientation);
        w.u16(d.glyph);
    }
    Ok(w.buf)
}

pub(crate) fn decode(bytes: &[u8], what: &str) -> Result<DescriptorSet> {
    let mut r = ByteReader::new(bytes, what);
    r.magic(MAGIC)?;
    let version = r.u32()?;
    if version != CACHE_VERSION {
        return Err(Error::format(what, format!("unsupported version {version}")));
    }
    let id_len = r.u32()? as usize;
    let font_id = std::str::from_utf8(r.take(id_len)?)
        .map_err(|e| Error::format(what, format!("font id is not UTF-8: {e}")))?
        .to_owned();
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    if dim != DESCRIPTOR_DIM {
        return Err(Error::format(
            what,
            format!("descriptor dim {dim}, expected {DESCRIPTOR_DIM}"),
        ));
    }
    // cheap sanity check before allocating
    let needed = count
        .checked_mul(dim * 4 + 18)
        .ok_or_else(|| Error::format(what, "descriptor count overflows"))?;
    if bytes.len() - r.position() != needed {
        return Err(Error::format(
            what,
            format!(
                "{count} descriptors need {needed} bytes, found {}",
                bytes.len() - r.position()
            ),
        ));
    }
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        let mut v = [0f32; DESCRIPTOR_DIM];
        for x in &mut v {
            *x = r.f32()?;
        }
        values.push(v);
    }
    let mut descriptors = Vec::with_capacity(count);
    for values in values {
        let (x, y, sigma, orientation) = (r.f32()?, r.f32()?, r.f32()?, r.f32()?);
        let glyph = r.u16()?;
        descriptors.push(Descriptor {
            values,
            keypoint: Keypoint {
                x,
                y,
                sigma,
                orientation,
                octave: 0,
                level: 0,
                response: 0.0,
            },
            glyph,
        });
    }
    r.finish()?;
    Ok(DescriptorSet { font_id, descriptors })
}

pub fn write_descriptor_cache(path: &Path, set: &DescriptorSet) -> Result<()> {
    write_file(path, &encode(set)?)
}

pub fn read_descriptor_cache(path: &Path) -> Result<DescriptorSet> {
    let bytes = read_file(path)?;
    decode(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_set() -> DescriptorSet {
        let mut descriptors = Vec::new();
        for i in 0..3u16 {
            let mut values = [0f32; DESCRIPTOR_DIM];
            values[i as usize * 7] = 1.0;
            descriptors.push(Descriptor {
                values,
                keypoint: Keypoint {
                    x: 1.25 * i as f32,
                    y: 40.5,
                    sigma: 2.0 + i as f32,
                    orientation: 0.3,
                    octave: 0,
                    level: 0,
                    response: 0.0,
                },
                glyph: i,
            });
        }
        DescriptorSet {
            font_id: "fönt-7".into(),
            descriptors,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let set = sample_set();
        let bytes = encode(&set).unwrap();
        assert_eq!(&bytes[..4], b"GIDX");
        assert_eq!(decode(&bytes, "t").unwrap(), set);
    }

    #[test]
    fn empty_set_round_trips() {
        let set = DescriptorSet {
            font_id: "e".into(),
            descriptors: vec![],
        };
        assert_eq!(decode(&encode(&set).unwrap(), "t").unwrap(), set);
    }

    #[test]
    fn rejects_truncation_and_bad_magic() {
        let bytes = encode(&sample_set()).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1], "t").is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode(&bad, "t"), Err(Error::Format { .. })));
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra, "t").is_err());
    }
}
