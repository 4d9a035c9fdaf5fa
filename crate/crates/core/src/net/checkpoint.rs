//! Checkpoint file: `EQNET1`, `u32` version, spec as TOML, then named
//! parameter tensors in the tensor binary format.

use std::io::{Read, Write};
use std::path::Path;

use super::network::Network;
use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"EQNET1";
pub const CHECKPOINT_VERSION: u32 = 1;

pub(crate) fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::invalid(format!("length {v} exceeds u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    write_u32(w, s.len())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub(crate) fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = Vec::new();
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(Error::Corrupt("truncated string".into()));
    }
    String::from_utf8(buf).map_err(|e| Error::Corrupt(e.to_string()))
}

pub(crate) fn check_magic<R: Read>(r: &mut R, expected: &[u8]) -> Result<()> {
    let mut found = vec![0u8; expected.len()];
    r.read_exact(&mut found)?;
    if found != expected {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(expected).into_owned(),
            found: String::from_utf8_lossy(&found).into_owned(),
        });
    }
    Ok(())
}

pub(crate) fn write_named<W: Write>(w: &mut W, names: &[String], tensors: &[Tensor<f32>]) -> Result<()> {
    write_u32(w, tensors.len())?;
    for (name, t) in names.iter().zip(tensors) {
        write_str(w, name)?;
        t.write_to(&mut *w)?;
    }
    Ok(())
}

pub(crate) fn read_named<R: Read>(r: &mut R) -> Result<(Vec<String>, Vec<Tensor<f32>>)> {
    let count = read_u32(r)? as usize;
    let mut names = Vec::with_capacity(count.min(4096));
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        names.push(read_str(r)?);
        tensors.push(Tensor::read_from(&mut *r)?);
    }
    Ok((names, tensors))
}

impl Network<f32> {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        write_u32(&mut w, CHECKPOINT_VERSION as usize)?;
        write_str(&mut w, &self.spec().to_toml())?;
        write_named(&mut w, self.param_names(), self.params())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        check_magic(&mut r, CHECKPOINT_MAGIC)?;
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version(version));
        }
        let spec = NetworkSpec::from_toml(&read_str(&mut r)?)?;
        let (names, params) = read_named(&mut r)?;
        let mut net = Network::build(&spec)?;
        if names != net.param_names() {
            return Err(Error::Corrupt("parameter names do not match the stored spec".into()));
        }
        net.set_params(params)?;
        Ok(net)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_byte_identical() {
        let net = Network::<f32>::build(&NetworkSpec::sevnet().with_seed(9)).unwrap();
        let bytes = net.to_bytes();
        let back = Network::from_bytes(&bytes).unwrap();
        assert_eq!(back.spec(), net.spec());
        assert_eq!(back.params(), net.params());
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let mut bytes = Network::<f32>::build(&NetworkSpec::baseline()).unwrap().to_bytes();
        bytes[0] = b'X';
        assert!(matches!(Network::from_bytes(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut bytes = Network::<f32>::build(&NetworkSpec::baseline()).unwrap().to_bytes();
        bytes[6] = 7;
        assert!(matches!(Network::from_bytes(&bytes), Err(Error::Version(7))));
    }

    #[test]
    fn truncated_file_is_an_error() {
        let bytes = Network::<f32>::build(&NetworkSpec::baseline()).unwrap().to_bytes();
        assert!(Network::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
