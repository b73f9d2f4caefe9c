//! Binary dataset container and CSV manifest, for identical data across
//! processes.

use crate::data::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::wire::{ByteReader, ByteWriter};
use std::fs;
use std::path::Path;

const DATASET_MAGIC: [u8; 4] = *b"FDDS";
const DATASET_VERSION: u16 = 1;

pub fn encode_dataset(ds: &Dataset) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.put_bytes(&DATASET_MAGIC);
    w.put_u16(DATASET_VERSION);
    w.put_u32(ds.height as u32);
    w.put_u32(ds.width as u32);
    w.put_u32(ds.class_count as u32);
    w.put_u32(ds.samples.len() as u32);
    let id = ds.domain_id.as_bytes();
    w.put_u16(id.len() as u16);
    w.put_bytes(id);
    for s in &ds.samples {
        w.put_u32(s.label as u32);
        for p in &s.pixels {
            w.put_f64(*p);
        }
    }
    w.into_bytes()
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = ByteReader::new(bytes);
    if r.take_bytes(4)? != DATASET_MAGIC {
        return Err(Error::Decode("bad dataset magic".into()));
    }
    let version = r.take_u16()?;
    if version != DATASET_VERSION {
        return Err(Error::Decode(format!("unsupported dataset version {version}")));
    }
    let height = r.take_u32()? as usize;
    let width = r.take_u32()? as usize;
    let class_count = r.take_u32()? as usize;
    let count = r.take_u32()? as usize;
    let id_len = r.take_u16()? as usize;
    let domain_id = String::from_utf8(r.take_bytes(id_len)?.to_vec())
        .map_err(|_| Error::Decode("domain id not utf-8".into()))?;
    let dim = height * width;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let label = r.take_u32()? as usize;
        if label >= class_count {
            return Err(Error::Decode(format!("label {label} >= {class_count}")));
        }
        let mut pixels = Vec::with_capacity(dim);
        for _ in 0..dim {
            pixels.push(r.take_f64()?);
        }
        samples.push(Sample { pixels, label });
    }
    r.finish()?;
    Ok(Dataset {
        samples,
        domain_id,
        class_count,
        height,
        width,
    })
}

pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    fs::write(path, encode_dataset(ds))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}

/// CSV manifest: one row per sample (index, label, domain).
pub fn write_manifest_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let mut out = String::from("index,label,domain_id\n");
    for (i, s) in ds.samples.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", i, s.label, ds.domain_id));
    }
    fs::write(path, out)?;
    Ok(())
}
