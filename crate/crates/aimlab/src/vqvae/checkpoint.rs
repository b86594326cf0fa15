//! Versioned binary checkpoint container.
//!
//! Layout: magic "AIMV1", then K/D/L as little-endian u32, beta as f64,
//! then a u32 array count followed by named length-prefixed f64 arrays.
//! Same parameters always serialize to the same bytes.

use std::path::Path;

use crate::{AimError, Result};

const MAGIC: &[u8; 5] = b"AIMV1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub k: usize,
    pub d: usize,
    pub l: usize,
    pub beta: f64,
    pub arrays: Vec<(String, Vec<f64>)>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.k as u32).to_le_bytes());
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        out.extend_from_slice(&(self.l as u32).to_le_bytes());
        out.extend_from_slice(&self.beta.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, values) in &self.arrays {
            let nb = name.as_bytes();
            out.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            out.extend_from_slice(nb);
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(data: &[u8], path: &str) -> Result<Self> {
        let mut r = Reader { data, pos: 0, path };
        let magic = r.take(MAGIC.len())?;
        if magic != MAGIC {
            return Err(AimError::format(
                path,
                format!("bad magic {magic:?}, expected {MAGIC:?}"),
            ));
        }
        let k = r.u32()? as usize;
        let d = r.u32()? as usize;
        let l = r.u32()? as usize;
        let beta = r.f64()?;
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name_bytes = r.take(name_len)?;
            let name = std::str::from_utf8(name_bytes)
                .map_err(|_| AimError::format(path, "array name is not valid utf-8"))?
                .to_string();
            let n = r.u64()? as usize;
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                values.push(r.f64()?);
            }
            arrays.push((name, values));
        }
        if r.pos != data.len() {
            return Err(AimError::format(
                path,
                format!("{} trailing bytes after last array", data.len() - r.pos),
            ));
        }
        Ok(Self {
            k,
            d,
            l,
            beta,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())
            .map_err(|e| AimError::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data =
            std::fs::read(path).map_err(|e| AimError::io(path.display().to_string(), e))?;
        Self::from_bytes(&data, &path.display().to_string())
    }

    pub fn array(&self, name: &str) -> Result<&[f64]> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| {
                AimError::Config(format!("checkpoint has no array named '{name}'"))
            })
    }
}

impl super::VqVae {
    /// Array order is fixed so identical parameters give identical bytes.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut arrays = vec![(
            "meta".to_string(),
            vec![self.cfg.input_dim as f64, self.cfg.hidden as f64],
        )];
        for (prefix, net) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            for (i, pair) in net.params().chunks_exact(2).enumerate() {
                arrays.push((
                    format!("{prefix}.w{i}"),
                    self.store.get(pair[0]).values.clone(),
                ));
                arrays.push((
                    format!("{prefix}.b{i}"),
                    self.store.get(pair[1]).values.clone(),
                ));
            }
        }
        arrays.push((
            "codebook".to_string(),
            self.store.get(self.codebook_id).values.clone(),
        ));
        Checkpoint {
            k: self.cfg.k,
            d: self.cfg.d,
            l: self.cfg.l,
            beta: self.cfg.beta,
            arrays,
        }
    }

    pub fn from_checkpoint(cp: &Checkpoint, path: &str) -> Result<Self> {
        let meta = cp.array("meta")?;
        if meta.len() != 2 {
            return Err(AimError::format(path, "meta array must hold 2 entries"));
        }
        let cfg = super::VqConfig {
            k: cp.k,
            d: cp.d,
            l: cp.l,
            beta: cp.beta,
            input_dim: meta[0] as usize,
            hidden: meta[1] as usize,
        };
        use rand::SeedableRng;
        let mut model = super::VqVae::new(cfg, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))
            .map_err(|e| AimError::format(path, format!("invalid checkpoint header: {e}")))?;
        let expected = model.to_checkpoint();
        for ((name, _), id) in expected
            .arrays
            .iter()
            .skip(1)
            .zip(model.all_params_in_checkpoint_order())
        {
            let values = cp.array(name).map_err(|_| {
                AimError::format(path, format!("checkpoint is missing array '{name}'"))
            })?;
            let p = model.store.get_mut(id);
            if values.len() != p.numel() {
                return Err(AimError::format(
                    path,
                    format!(
                        "array '{name}' has {} entries, model expects {}",
                        values.len(),
                        p.numel()
                    ),
                ));
            }
            p.values.copy_from_slice(values);
        }
        Ok(model)
    }

    fn all_params_in_checkpoint_order(&self) -> Vec<crate::diffcore::ParamId> {
        let mut ids = self.encoder.params();
        ids.extend(self.decoder.params());
        ids.push(self.codebook_id);
        ids
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, &path.display().to_string())
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(AimError::format(
                self.path,
                format!("truncated checkpoint at offset {}", self.pos),
            ));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }
}
