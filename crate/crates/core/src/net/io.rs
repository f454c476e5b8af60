//! Flat binary parameter files.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "DCSN"
//! 4       4     u32 format version (1)
//! 8       1     u8 activation (0 tanh, 1 silu, 2 identity)
//! 9       1     u8 time embedding (0 scalar, 1 sinusoidal)
//! 10      2     reserved, zero
//! 12      4     u32 D
//! 16      4     u32 H, number of hidden layers
//! 20      4·H   u32 hidden widths
//! ..      8     u64 P, parameter count
//! ..      8·P   f64 parameters in network order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{Activation, ScoreNetwork, TimeEmbedding};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"DCSN";
const VERSION: u32 = 1;

pub fn write_params<W: Write>(net: &ScoreNetwork, mut out: W) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&[net.activation().code(), net.embedding().code(), 0, 0])?;
    out.write_all(&(net.dim() as u32).to_le_bytes())?;
    let hidden = net.hidden();
    out.write_all(&(hidden.len() as u32).to_le_bytes())?;
    for &h in hidden {
        out.write_all(&(h as u32).to_le_bytes())?;
    }
    out.write_all(&(net.n_params() as u64).to_le_bytes())?;
    for p in net.params() {
        out.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn bad(reason: impl Into<String>) -> Error {
    Error::invalid("parameter file", reason)
}

pub fn read_params<R: Read>(mut input: R) -> Result<ScoreNetwork> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut codes = [0u8; 4];
    input.read_exact(&mut codes)?;
    let activation = Activation::from_code(codes[0]).ok_or_else(|| bad("unknown activation"))?;
    let embedding = TimeEmbedding::from_code(codes[1]).ok_or_else(|| bad("unknown time embedding"))?;
    let dim = read_u32(&mut input)? as usize;
    let n_hidden = read_u32(&mut input)? as usize;
    if n_hidden > 64 {
        return Err(bad("implausible layer count"));
    }
    let hidden = (0..n_hidden)
        .map(|_| read_u32(&mut input).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut b8 = [0u8; 8];
    input.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    let mut net = ScoreNetwork::zeros(dim, &hidden, activation, embedding)?;
    if n != net.n_params() {
        return Err(bad(format!("header promises {n} parameters, shape needs {}", net.n_params())));
    }
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        input.read_exact(&mut b8)?;
        params.push(f64::from_le_bytes(b8));
    }
    net.set_params(params)?;
    Ok(net)
}

pub fn save_params(net: &ScoreNetwork, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_params(net, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_params(path: &Path) -> Result<ScoreNetwork> {
    read_params(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let net = ScoreNetwork::new(2, &[5, 3], Activation::Tanh, TimeEmbedding::Sinusoidal, 8).unwrap();
        let mut buf = Vec::new();
        write_params(&net, &mut buf).unwrap();
        assert_eq!(buf.len(), 20 + 8 + 8 + 8 * net.n_params());
        assert_eq!(read_params(&buf[..]).unwrap(), net);
    }

    #[test]
    fn truncated_file_rejected() {
        let net = ScoreNetwork::default_arch(1, 0).unwrap();
        let mut buf = Vec::new();
        write_params(&net, &mut buf).unwrap();
        assert!(read_params(&buf[..buf.len() - 3]).is_err());
        buf[0] = b'X';
        assert!(read_params(&buf[..]).is_err());
    }
}
