//! Checkpoint container: magic + version, config snapshot, RNG and sampler
//! state, named parameter tensors, and optimizer state. A save -> load ->
//! save round trip is byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::optim::AdamWConfig;
use crate::params::ParamStore;
use crate::rng::RngPos;
use crate::tensor::{read_named_tensor, write_named_tensor, RecordReader, Tensor};

const MAGIC: &[u8; 4] = b"UEC1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerState {
    pub rng_pos: RngPos,
    pub image_epoch: u64,
    pub image_cursor: u64,
    pub video_epoch: u64,
    pub video_cursor: u64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config_snapshot: String,
    pub step: u64,
    pub seed: u64,
    pub train_rng: RngPos,
    pub sampler: SamplerState,
    pub params: ParamStore,
    pub opt_step: u64,
    pub opt_cfg: AdamWConfig,
    /// First/second moments keyed by parameter name.
    pub moments: BTreeMap<String, (Tensor<f32>, Tensor<f32>)>,
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u128(out: &mut Vec<u8>, v: u128) {
    put_u64(out, v as u64);
    put_u64(out, (v >> 64) as u64);
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u64(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.config_snapshot);
        put_u64(&mut out, self.step);
        put_u64(&mut out, self.seed);
        put_u128(&mut out, self.train_rng.word_pos);
        put_u128(&mut out, self.sampler.rng_pos.word_pos);
        put_u64(&mut out, self.sampler.image_epoch);
        put_u64(&mut out, self.sampler.image_cursor);
        put_u64(&mut out, self.sampler.video_epoch);
        put_u64(&mut out, self.sampler.video_cursor);

        put_u64(&mut out, self.params.len() as u64);
        for (name, t) in self.params.iter() {
            write_named_tensor(&mut out, name, t);
        }

        put_u64(&mut out, self.opt_step);
        put_f64(&mut out, self.opt_cfg.lr);
        put_f64(&mut out, self.opt_cfg.beta1);
        put_f64(&mut out, self.opt_cfg.beta2);
        put_f64(&mut out, self.opt_cfg.eps);
        put_f64(&mut out, self.opt_cfg.weight_decay);
        put_u64(&mut out, self.moments.len() as u64);
        for (name, (m, v)) in &self.moments {
            write_named_tensor(&mut out, &format!("m.{name}"), m);
            write_named_tensor(&mut out, &format!("v.{name}"), v);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = RecordReader::new(buf);
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "bad magic {magic:02x?}, not a checkpoint file"
            )));
        }
        let version = r.read_u32("version")?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let config_snapshot = {
            let len = r.read_u64("config snapshot length")? as usize;
            let bytes = r.take(len, "config snapshot")?;
            String::from_utf8(bytes.to_vec())
                .map_err(|_| Error::Checkpoint("config snapshot is not UTF-8".into()))?
        };
        let step = r.read_u64("step")?;
        let seed = r.read_u64("seed")?;
        let read_u128 = |r: &mut RecordReader, what: &str| -> Result<u128> {
            let lo = r.read_u64(what)? as u128;
            let hi = r.read_u64(what)? as u128;
            Ok(lo | (hi << 64))
        };
        let train_rng = RngPos {
            word_pos: read_u128(&mut r, "train rng position")?,
        };
        let sampler = SamplerState {
            rng_pos: RngPos {
                word_pos: read_u128(&mut r, "sampler rng position")?,
            },
            image_epoch: r.read_u64("image epoch")?,
            image_cursor: r.read_u64("image cursor")?,
            video_epoch: r.read_u64("video epoch")?,
            video_cursor: r.read_u64("video cursor")?,
        };

        let n_params = r.read_u64("parameter count")? as usize;
        let mut params = ParamStore::new();
        for _ in 0..n_params {
            let rec = read_named_tensor::<f32>(&mut r)?;
            params.insert(&rec.name, rec.tensor)?;
        }

        let opt_step = r.read_u64("optimizer step")?;
        let read_f64 = |r: &mut RecordReader, what: &str| -> Result<f64> {
            let b = r.take(8, what)?;
            let mut buf = [0u8; 8];
            buf.copy_from_slice(b);
            Ok(f64::from_le_bytes(buf))
        };
        let opt_cfg = AdamWConfig {
            lr: read_f64(&mut r, "lr")?,
            beta1: read_f64(&mut r, "beta1")?,
            beta2: read_f64(&mut r, "beta2")?,
            eps: read_f64(&mut r, "eps")?,
            weight_decay: read_f64(&mut r, "weight_decay")?,
        };
        let n_moments = r.read_u64("moment count")? as usize;
        let mut moments = BTreeMap::new();
        for _ in 0..n_moments {
            let m = read_named_tensor::<f32>(&mut r)?;
            let v = read_named_tensor::<f32>(&mut r)?;
            let name = m
                .name
                .strip_prefix("m.")
                .ok_or_else(|| {
                    Error::Checkpoint(format!("expected moment record, found '{}'", m.name))
                })?
                .to_string();
            if v.name != format!("v.{name}") {
                return Err(Error::Checkpoint(format!(
                    "moment records out of order: '{}' then '{}'",
                    m.name, v.name
                )));
            }
            moments.insert(name, (m.tensor, v.tensor));
        }
        if r.remaining() != 0 {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after checkpoint payload",
                r.remaining()
            )));
        }
        Ok(Checkpoint {
            config_snapshot,
            step,
            seed,
            train_rng,
            sampler,
            params,
            opt_step,
            opt_cfg,
            moments,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path)?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_checkpoint() -> Checkpoint {
        let mut params = ParamStore::new();
        params.init_gaussian("w.a", &[2, 3], 0.02, 1).unwrap();
        params.init_zeros("w.b", &[4]).unwrap();
        let mut moments = BTreeMap::new();
        moments.insert(
            "w.a".to_string(),
            (Tensor::zeros(&[2, 3]), Tensor::full(&[2, 3], 0.5)),
        );
        Checkpoint {
            config_snapshot: "lr=1e-4\nmix.p_video=0.6\n".into(),
            step: 42,
            seed: 7,
            train_rng: RngPos { word_pos: 1234 },
            sampler: SamplerState {
                rng_pos: RngPos { word_pos: 99 },
                image_epoch: 1,
                image_cursor: 3,
                video_epoch: 0,
                video_cursor: 5,
            },
            params,
            opt_step: 42,
            opt_cfg: AdamWConfig::default(),
            moments,
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ck = sample_checkpoint();
        let b1 = ck.to_bytes();
        let back = Checkpoint::from_bytes(&b1).unwrap();
        let b2 = back.to_bytes();
        assert_eq!(b1, b2);
    }

    #[test]
    fn roundtrip_preserves_tensors_bitwise() {
        let ck = sample_checkpoint();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        for (name, t) in ck.params.iter() {
            assert!(back.params.get(name).unwrap().bit_eq(t));
        }
        assert_eq!(back.step, 42);
        assert_eq!(back.sampler, ck.sampler);
        let (m, v) = &back.moments["w.a"];
        assert!(m.bit_eq(&ck.moments["w.a"].0));
        assert!(v.bit_eq(&ck.moments["w.a"].1));
    }

    #[test]
    fn truncated_by_one_byte_fails_with_no_partial_state() {
        let ck = sample_checkpoint();
        let mut bytes = ck.to_bytes();
        bytes.pop();
        let err = Checkpoint::from_bytes(&bytes).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = sample_checkpoint().to_bytes();
        bytes[0] = b'X';
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
