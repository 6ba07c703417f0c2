//! Binary checkpoint format.
//!
//! ```text
//! "TAPFM01" | u64 LE header length | JSON header | f32 LE payload
//! ```
//!
//! The header lists every parameter with its shape and byte offset into the
//! payload; parameters are stored in manifest order with no padding. Values
//! are written as 32-bit floats, so loading then saving reproduces the file
//! byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoders::{EncoderConfig, WindowSpec};
use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::numerics::{ParamStore, Tensor};
use crate::synthcorpus::lexicon::Lexicon;

pub const MAGIC: &[u8; 7] = b"TAPFM01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainMeta {
    pub lexicon: Lexicon,
    pub encoder: EncoderConfig,
    pub text_window: WindowSpec,
    pub audio_window: WindowSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontendMeta {
    pub lexicon: Lexicon,
    pub frontend: FrontendConfig,
}

/// What the parameters belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMeta {
    Pretrain(PretrainMeta),
    Frontend(FrontendMeta),
}

impl ModelMeta {
    pub fn lexicon(&self) -> &Lexicon {
        match self {
            ModelMeta::Pretrain(m) => &m.lexicon,
            ModelMeta::Frontend(m) => &m.lexicon,
        }
    }

    pub fn encoder(&self) -> &EncoderConfig {
        match self {
            ModelMeta::Pretrain(m) => &m.encoder,
            ModelMeta::Frontend(m) => &m.frontend.encoder,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
    /// Byte offset into the payload.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub format_version: u32,
    pub model: ModelMeta,
    pub params: Vec<ParamEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: ModelMeta,
    pub store: ParamStore,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut params = Vec::with_capacity(self.store.len());
        let mut payload = Vec::new();
        for (name, t) in self.store.iter() {
            params.push(ParamEntry { name: name.to_string(), shape: t.shape(), offset: payload.len() as u64 });
            for &v in t.data() {
                let f = v as f32;
                if !f.is_finite() {
                    return Err(Error::Checkpoint(format!("parameter {name} holds a non-finite value")));
                }
                payload.extend_from_slice(&f.to_le_bytes());
            }
        }
        let header = Header { format_version: FORMAT_VERSION, model: self.model.clone(), params };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let bad = |m: String| Error::Checkpoint(m);
        if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let len_bytes: [u8; 8] = bytes[MAGIC.len()..MAGIC.len() + 8].try_into().expect("8 bytes");
        let header_len = usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| bad("header too large".into()))?;
        let start = MAGIC.len() + 8;
        let end = start.checked_add(header_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[start..end]).map_err(|e| bad(format!("header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {}", header.format_version)));
        }
        let payload = &bytes[end..];
        let mut store = ParamStore::new();
        let mut expected = 0u64;
        for p in &header.params {
            if p.offset != expected {
                return Err(bad(format!("parameter {} at offset {} (expected {expected})", p.name, p.offset)));
            }
            let n = p.shape[0] * p.shape[1];
            let (a, b) = (expected as usize, expected as usize + 4 * n);
            let chunk = payload.get(a..b).ok_or_else(|| bad(format!("payload too short for {}", p.name)))?;
            let data = chunk.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))).collect();
            if store.id(&p.name).is_some() {
                return Err(bad(format!("duplicate parameter {}", p.name)));
            }
            store.insert(&p.name, Tensor::new(p.shape[0], p.shape[1], data));
            expected = b as u64;
        }
        if expected as usize != payload.len() {
            return Err(bad(format!("payload has {} bytes, header declares {expected}", payload.len())));
        }
        Ok(Checkpoint { model: header.model, store })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{params::normal_tensor, seeded_rng};

    fn sample() -> Checkpoint {
        let mut store = ParamStore::new();
        let mut rng = seeded_rng(3, 0);
        store.insert("a.w", normal_tensor(3, 4, 1.0, &mut rng));
        store.insert("a.b", normal_tensor(1, 4, 1.0, &mut rng));
        let model = ModelMeta::Pretrain(PretrainMeta {
            lexicon: Lexicon::standard(40).unwrap(),
            encoder: EncoderConfig::default(),
            text_window: WindowSpec { size: 3, stride: 1 },
            audio_window: WindowSpec { size: 33, stride: 11 },
        });
        Checkpoint { model, store }
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.model, c.model);
        for ((n1, t1), (n2, t2)) in c.store.iter().zip(back.store.iter()) {
            assert_eq!(n1, n2);
            for (x, y) in t1.data().iter().zip(t2.data()) {
                assert_eq!((*x as f32).to_bits(), (*y as f32).to_bits());
            }
        }
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(back.model.lexicon().token_id("the"), c.model.lexicon().token_id("the"));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(Checkpoint::from_bytes(&longer).is_err());
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(Checkpoint::from_bytes(&magic).is_err());
        assert!(Checkpoint::from_bytes(b"TAPFM01").is_err());
    }
}
