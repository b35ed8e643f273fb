//! Binary checkpoint container. Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "CNTRCKPT"
//! version    u32      1
//! precision  u8       0 = double (f64 values), 1 = single (f32 values)
//! created    u64      unix seconds
//! n_meta     u32      then n_meta x (key: str, value: str)
//! n_params   u32      then n_params x (name: str, ndim: u32, dims: ndim x u64, values)
//! has_adam   u8       if 1: step u64, beta1 f64, beta2 f64, eps f64,
//!                     then m and v for every parameter in order, as f64
//! ```
//!
//! `str` is a u32 byte length followed by UTF-8 bytes.

use std::path::Path;

use crate::error::{Result, TensorError};
use crate::graph::Precision;
use crate::optim::Adam;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CNTRCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamSnapshot {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub precision: Precision,
    pub created_unix: u64,
    pub metadata: Vec<(String, String)>,
    pub params: Vec<(String, Tensor)>,
    pub adam: Option<AdamSnapshot>,
}

fn bad(msg: impl Into<String>) -> TensorError {
    TensorError::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(bad(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| bad("invalid utf-8 string"))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn from_store(
        store: &ParamStore,
        precision: Precision,
        metadata: Vec<(String, String)>,
        adam: Option<&Adam>,
    ) -> Self {
        let created_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Checkpoint {
            precision,
            created_unix,
            metadata,
            params: store.named_values(),
            adam: adam.map(|a| AdamSnapshot {
                step: a.step,
                beta1: a.config.beta1,
                beta2: a.config.beta2,
                eps: a.config.eps,
                m: a.m.clone(),
                v: a.v.clone(),
            }),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn restore_store(&self, store: &mut ParamStore) -> Result<()> {
        store.load_named(&self.params)
    }

    /// Copies step and moments into `adam`; hyperparameters stay as configured.
    pub fn restore_adam(&self, adam: &mut Adam) -> Result<()> {
        let snap = self.adam.as_ref().ok_or_else(|| bad("no optimizer state stored"))?;
        if snap.m.len() != adam.m.len()
            || snap.m.iter().zip(&adam.m).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(bad("optimizer state does not match the parameter set"));
        }
        adam.step = snap.step;
        adam.m = snap.m.clone();
        adam.v = snap.v.clone();
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(match self.precision {
            Precision::Double => 0,
            Precision::Single => 1,
        });
        out.extend_from_slice(&self.created_unix.to_le_bytes());
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (name, t) in &self.params {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &x in t.data() {
                match self.precision {
                    Precision::Double => out.extend_from_slice(&x.to_le_bytes()),
                    Precision::Single => out.extend_from_slice(&(x as f32).to_le_bytes()),
                }
            }
        }
        match &self.adam {
            None => out.push(0),
            Some(a) => {
                out.push(1);
                out.extend_from_slice(&a.step.to_le_bytes());
                for x in [a.beta1, a.beta2, a.eps] {
                    out.extend_from_slice(&x.to_le_bytes());
                }
                for t in a.m.iter().chain(&a.v) {
                    for &x in t.data() {
                        out.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let precision = match r.u8()? {
            0 => Precision::Double,
            1 => Precision::Single,
            p => return Err(bad(format!("unknown precision tag {p}"))),
        };
        let created_unix = r.u64()?;
        let n_meta = r.u32()?;
        let mut metadata = Vec::new();
        for _ in 0..n_meta {
            let k = r.str()?;
            let v = r.str()?;
            metadata.push((k, v));
        }
        let n_params = r.u32()?;
        let mut params = Vec::new();
        for _ in 0..n_params {
            let name = r.str()?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(match precision {
                    Precision::Double => r.f64()?,
                    Precision::Single => r.f32()? as f64,
                });
            }
            params.push((name, Tensor::new(shape, data)?));
        }
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let (beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?);
                let read_set = |r: &mut Reader| -> Result<Vec<Tensor>> {
                    params
                        .iter()
                        .map(|(_, p)| {
                            let data = (0..p.numel()).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                            Tensor::new(p.shape().to_vec(), data)
                        })
                        .collect()
                };
                let m = read_set(&mut r)?;
                let v = read_set(&mut r)?;
                Some(AdamSnapshot {
                    step,
                    beta1,
                    beta2,
                    eps,
                    m,
                    v,
                })
            }
            t => return Err(bad(format!("bad optimizer flag {t}"))),
        };
        if r.pos != buf.len() {
            return Err(bad("trailing bytes after checkpoint"));
        }
        Ok(Checkpoint {
            precision,
            created_unix,
            metadata,
            params,
            adam,
        })
    }

    /// Writes to a sibling temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path)?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{AdamConfig, LrSchedule};

    fn sample_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a", Tensor::matrix(2, 2, vec![1.0, -2.0, 0.25, 3.5]).unwrap());
        s.add("b", Tensor::row(vec![0.1, 0.2, 0.3]));
        s
    }

    #[test]
    fn roundtrip_with_optimizer_state() {
        let mut s = sample_store();
        let mut adam = Adam::new(&s, AdamConfig::default(), LrSchedule::Constant(1e-3));
        s.iter_mut().for_each(|p| p.grad.data_mut().fill(0.5));
        adam.update(&mut s).unwrap();
        let ck = Checkpoint::from_store(&s, Precision::Double, vec![("model".into(), "x".into())], Some(&adam));
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.meta("model"), Some("x"));

        let mut fresh = sample_store();
        let mut adam2 = Adam::new(&fresh, AdamConfig::default(), LrSchedule::Constant(1e-3));
        back.restore_store(&mut fresh).unwrap();
        back.restore_adam(&mut adam2).unwrap();
        assert_eq!(adam2.step, 1);
        assert_eq!(fresh.named_values(), s.named_values());
    }

    #[test]
    fn single_precision_rounds_values() {
        let mut s = ParamStore::new();
        s.add("p", Tensor::row(vec![0.1]));
        let ck = Checkpoint::from_store(&s, Precision::Single, vec![], None);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back.params[0].1.data()[0], 0.1f32 as f64);
    }

    #[test]
    fn rejects_corruption() {
        let ck = Checkpoint::from_store(&sample_store(), Precision::Double, vec![], None);
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong_version = bytes.clone();
        wrong_version[8] = 9;
        assert!(Checkpoint::from_bytes(&wrong_version).is_err());
        assert!(Checkpoint::from_bytes(b"garbage!").is_err());
    }

    #[test]
    fn atomic_save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = Checkpoint::from_store(&sample_store(), Precision::Double, vec![], None);
        ck.save(&path).unwrap();
        assert!(!dir.path().join("m.tmp").exists());
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }
}
