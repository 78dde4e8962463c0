//! Checkpoint format: `u32` layer count, then per layer `u32` rows, `u32`
//! cols, `u32` has-bias flag, then every parameter as an `f64`. All
//! little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{LayerShape, ParamVector};
use crate::error::{Error, Result};

pub fn write_checkpoint<W: Write>(mut w: W, params: &ParamVector) -> Result<()> {
    let layout = params.layout();
    w.write_all(&(layout.len() as u32).to_le_bytes())?;
    for l in layout {
        w.write_all(&l.rows.to_le_bytes())?;
        w.write_all(&l.cols.to_le_bytes())?;
        w.write_all(&u32::from(l.bias).to_le_bytes())?;
    }
    for v in params.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<ParamVector> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode(&bytes, Path::new("<stream>"))
}

pub fn write_checkpoint_file(path: &Path, params: &ParamVector) -> Result<()> {
    let mut buf = Vec::with_capacity(4 + params.layout().len() * 12 + params.len() * 8);
    write_checkpoint(&mut buf, params)?;
    // Write-then-rename so an interrupted save never leaves a torn file.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint_file(path: &Path) -> Result<ParamVector> {
    decode(&fs::read(path)?, path)
}

fn decode(bytes: &[u8], path: &Path) -> Result<ParamVector> {
    let truncated = |detail: &str| Error::Truncated {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    let mut cursor = bytes;
    let mut u32_at = |what: &str| -> Result<u32> {
        if cursor.len() < 4 {
            return Err(truncated(what));
        }
        let (head, rest) = cursor.split_at(4);
        cursor = rest;
        Ok(u32::from_le_bytes(head.try_into().expect("4 bytes")))
    };
    let layers = u32_at("layer count")? as usize;
    let mut layout = Vec::with_capacity(layers);
    for _ in 0..layers {
        let rows = u32_at("layer rows")?;
        let cols = u32_at("layer cols")?;
        let bias = u32_at("bias flag")? != 0;
        layout.push(LayerShape { rows, cols, bias });
    }
    let header = 4 + 12 * layers;
    let expected: usize = layout.iter().map(LayerShape::len).sum();
    let body = &bytes[header..];
    if body.len() != expected * 8 {
        return Err(truncated(&format!(
            "expected {} parameter bytes, found {}",
            expected * 8,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    ParamVector::from_parts(values, layout)
}
