//! Binary parameter checkpoints for [`MlpModel`].
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "FPMLPCK\0"
//! version      u32      1
//! layer_count  u32
//! per layer:
//!   input_dim  u32
//!   output_dim u32
//!   activation u8       0 = tanh, 1 = identity
//!   weight     output_dim * input_dim f64, row-major
//!   bias       output_dim f64
//! ```

use std::io::{Read, Write};

use super::mlp::{Activation, Dense, MlpModel};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MLP_MAGIC: &[u8; 8] = b"FPMLPCK\0";
pub const MLP_FORMAT_VERSION: u32 = 1;

fn io_err(e: std::io::Error) -> Error {
    Error::Format(e.to_string())
}

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes()).map_err(io_err)
}

pub fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(io_err)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(io_err)
}

pub fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf).map_err(io_err)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// Writes the model body (layer count and layers) without magic/version.
pub fn write_mlp_body<W: Write>(w: &mut W, model: &MlpModel) -> Result<()> {
    write_u32(w, model.layers().len() as u32)?;
    for layer in model.layers() {
        write_u32(w, layer.input_dim() as u32)?;
        write_u32(w, layer.output_dim() as u32)?;
        w.write_all(&[layer.activation().tag()]).map_err(io_err)?;
        write_f64s(w, layer.weight().data())?;
        write_f64s(w, layer.bias().data())?;
    }
    Ok(())
}

const MAX_LAYERS: u32 = 1024;
const MAX_DIM: u32 = 1 << 20;

pub fn read_mlp_body<R: Read>(r: &mut R) -> Result<MlpModel> {
    let count = read_u32(r)?;
    if count == 0 || count > MAX_LAYERS {
        return Err(Error::Format(format!("implausible layer count {count}")));
    }
    let mut layers = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let input = read_u32(r)?;
        let output = read_u32(r)?;
        if input == 0 || output == 0 || input > MAX_DIM || output > MAX_DIM {
            return Err(Error::Format(format!("implausible layer dims {input}x{output}")));
        }
        let (input, output) = (input as usize, output as usize);
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag).map_err(io_err)?;
        let activation = Activation::from_tag(tag[0])?;
        let weight = Tensor::new(vec![output, input], read_f64s(r, input * output)?)?;
        let bias = Tensor::new(vec![output], read_f64s(r, output)?)?;
        layers.push(Dense::new(weight, bias, activation)?);
    }
    MlpModel::from_layers(layers).map_err(|e| Error::Format(e.to_string()))
}

pub fn save_mlp<W: Write>(w: &mut W, model: &MlpModel) -> Result<()> {
    w.write_all(MLP_MAGIC).map_err(io_err)?;
    write_u32(w, MLP_FORMAT_VERSION)?;
    write_mlp_body(w, model)
}

pub fn load_mlp<R: Read>(r: &mut R) -> Result<MlpModel> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MLP_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != MLP_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    read_mlp_body(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::mlp::Parameters;
    use crate::numcore::rng::Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = Rng::new(31);
        let m = MlpModel::new(&[5, 9, 9, 2], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let mut buf = Vec::new();
        save_mlp(&mut buf, &m).unwrap();
        let back = load_mlp(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
        let bits = |m: &MlpModel| m.flat_parameters().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
        let mut again = Vec::new();
        save_mlp(&mut again, &back).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn corrupt_input_rejected() {
        let mut rng = Rng::new(32);
        let m = MlpModel::new(&[2, 3], Activation::Tanh, Activation::Identity, &mut rng).unwrap();
        let mut buf = Vec::new();
        save_mlp(&mut buf, &m).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(load_mlp(&mut bad.as_slice()).is_err());
        let truncated = &buf[..buf.len() - 3];
        assert!(load_mlp(&mut &truncated[..]).is_err());
        let mut wrong_version = buf.clone();
        wrong_version[8] = 9;
        assert!(load_mlp(&mut wrong_version.as_slice()).is_err());
    }
}
