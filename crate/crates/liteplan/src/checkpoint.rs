//! Checkpoint container: magic "PRPL", format version, the run config
//! document embedded verbatim, then named tensor records. Bit-exact
//! round-trip; model reconstruction happens in the harness, which knows
//! the architecture from the config.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor2;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PRPL";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_doc: String,
    /// Ordered name -> tensor records (order preserved for byte-exact
    /// rewrites).
    pub tensors: Vec<(String, Tensor2)>,
}

impl Checkpoint {
    pub fn new(config_doc: String) -> Self {
        Self { config_doc, tensors: vec![] }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor2) {
        self.tensors.push((name.into(), tensor));
    }

    pub fn push_vec(&mut self, name: impl Into<String>, values: &[f32]) {
        let mut t = Tensor2::zeros(1, values.len());
        t.data.copy_from_slice(values);
        self.push(name, t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor2> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
    }

    pub fn get_vec(&self, name: &str) -> Result<Vec<f32>> {
        Ok(self.get(name)?.data.clone())
    }

    pub fn get_scalar(&self, name: &str) -> Result<f32> {
        let t = self.get(name)?;
        if t.data.len() != 1 {
            return Err(Error::Checkpoint(format!("tensor {name} is not a scalar")));
        }
        Ok(t.data[0])
    }

    /// Fetch a tensor and verify the shape the architecture expects.
    pub fn get_shaped(&self, name: &str, rows: usize, cols: usize) -> Result<Tensor2> {
        let t = self.get(name)?;
        if t.rows != rows || t.cols != cols {
            return Err(Error::Checkpoint(format!(
                "tensor {name}: stored {}x{}, architecture expects {rows}x{cols}",
                t.rows, t.cols
            )));
        }
        Ok(t.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let doc = self.config_doc.as_bytes();
        w.write_all(&(doc.len() as u32).to_le_bytes())?;
        w.write_all(doc)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            let nb = name.as_bytes();
            w.write_all(&(nb.len() as u32).to_le_bytes())?;
            w.write_all(nb)?;
            w.write_all(&(t.rows as u32).to_le_bytes())?;
            w.write_all(&(t.cols as u32).to_le_bytes())?;
            for v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut r = std::io::BufReader::new(file);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!("bad checkpoint magic {magic:?}")));
        }
        let mut u32buf = [0u8; 4];
        let mut read_u32 = |r: &mut dyn Read| -> Result<u32> {
            r.read_exact(&mut u32buf)?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let doc_len = read_u32(&mut r)? as usize;
        let mut doc = vec![0u8; doc_len];
        r.read_exact(&mut doc)?;
        let config_doc = String::from_utf8(doc)
            .map_err(|_| Error::Checkpoint("config document is not UTF-8".into()))?;
        let n = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let mut bytes = vec![0u8; 4 * rows * cols];
            r.read_exact(&mut bytes)?;
            let mut t = Tensor2::zeros(rows, cols);
            t.data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, t));
        }
        Ok(Self { config_doc, tensors })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn roundtrip_bit_exact_and_byte_identical() {
        let mut rng = Rng::seed(0);
        let mut ck = Checkpoint::new("[run]\nenv = maze\n".into());
        ck.push("a.weight", rng.randn(3, 4));
        ck.push("a.bias", rng.randn(1, 4));
        ck.push_vec("stats.mean", &[0.5, -0.25]);
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.prpl");
        let p2 = dir.path().join("b.prpl");
        ck.save(&p1).unwrap();
        let back = Checkpoint::load(&p1).unwrap();
        assert_eq!(back, ck);
        for ((_, t1), (_, t2)) in ck.tensors.iter().zip(back.tensors.iter()) {
            let b1: Vec<u32> = t1.data.iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u32> = t2.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
        back.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn missing_and_misshapen_tensors_are_checkpoint_errors() {
        let mut ck = Checkpoint::new(String::new());
        ck.push("x", Tensor2::zeros(2, 2));
        assert!(matches!(ck.get("y").unwrap_err(), Error::Checkpoint(_)));
        assert!(matches!(ck.get_shaped("x", 3, 2).unwrap_err(), Error::Checkpoint(_)));
        assert!(ck.get_shaped("x", 2, 2).is_ok());
        assert!(matches!(ck.get_scalar("x").unwrap_err(), Error::Checkpoint(_)));
    }

    #[test]
    fn bad_magic_and_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.prpl");
        std::fs::write(&p, b"XXXX\x01\x00\x00\x00").unwrap();
        assert!(matches!(Checkpoint::load(&p).unwrap_err(), Error::Checkpoint(_)));
        let mut bytes = CHECKPOINT_MAGIC.to_vec();
        bytes.extend_from_slice(&99u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&p, bytes).unwrap();
        let err = Checkpoint::load(&p).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }
}
