//! Model files: a flat little-endian binary of layer shapes and row-major
//! weights, plus a JSON sidecar with the standardization metadata.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::mlp::{Dense, Mlp};
use super::{DecoderMeta, PoseDecoder, TrainReport};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MCMLP001";
pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub schema_version: u32,
    pub dtype: String,
    pub widths: Vec<usize>,
    pub output_units: String,
    pub meta: DecoderMeta,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<TrainReport>,
}

pub fn sidecar_path(model: &Path) -> PathBuf {
    model.with_extension("json")
}

pub fn write_weights<W: Write>(mut w: W, mlp: &Mlp<f32>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(mlp.layers.len() as u32).to_le_bytes())?;
    for l in &mlp.layers {
        w.write_all(&(l.inputs() as u32).to_le_bytes())?;
        w.write_all(&(l.outputs() as u32).to_le_bytes())?;
    }
    for l in &mlp.layers {
        for v in l.w.iter().chain(l.b.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_weights<R: Read>(mut r: R) -> Result<Mlp<f32>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a model file".into()));
    }
    let n = read_u32(&mut r)? as usize;
    if n == 0 || n > 64 {
        return Err(Error::Format(format!("implausible layer count {n}")));
    }
    let mut shapes = Vec::with_capacity(n);
    for _ in 0..n {
        shapes.push((read_u32(&mut r)? as usize, read_u32(&mut r)? as usize));
    }
    for pair in shapes.windows(2) {
        if pair[0].1 != pair[1].0 {
            return Err(Error::Format("layer shapes do not compose".into()));
        }
    }
    let mut read_f32 = |count: usize| -> Result<Vec<f32>> {
        let mut buf = vec![0u8; count * 4];
        r.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    };
    let mut layers = Vec::with_capacity(n);
    for (i, o) in shapes {
        let w = Array2::from_shape_vec((i, o), read_f32(i * o)?).expect("length checked");
        let b = Array1::from_vec(read_f32(o)?);
        layers.push(Dense { w, b });
    }
    Ok(Mlp { layers })
}

/// Writes `path` and its `.json` sidecar.
pub fn save(decoder: &PoseDecoder, report: Option<&TrainReport>, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_weights(&mut w, &decoder.mlp)?;
    w.flush()?;
    let sidecar = Sidecar {
        schema_version: MODEL_SCHEMA_VERSION,
        dtype: "f32".into(),
        widths: decoder.mlp.widths(),
        output_units: "decimeters".into(),
        meta: decoder.meta.clone(),
        report: report.cloned(),
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)? + "\n")?;
    Ok(())
}

pub fn load(path: &Path) -> Result<PoseDecoder> {
    let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    if sidecar.schema_version != MODEL_SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "unsupported model schema {}",
            sidecar.schema_version
        )));
    }
    let mlp = read_weights(std::io::BufReader::new(std::fs::File::open(path)?))?;
    if mlp.widths() != sidecar.widths {
        return Err(Error::Format("sidecar widths disagree with weights".into()));
    }
    PoseDecoder::new(mlp, sidecar.meta)
}
