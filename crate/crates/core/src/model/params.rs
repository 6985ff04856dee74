//! Named parameter store with deterministic initialization and the binary
//! checkpoint format.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ModelConfig, ModelError};

/// Checkpoint magic bytes.
const MAGIC: &[u8; 5] = b"FHDB1";

/// Ordered, named `f64` tensors. Iteration order is the creation order,
/// which all training state (optimizer moments, gradient checks) relies on.
#[derive(Debug, Clone)]
pub struct ParamStore {
    entries: Vec<(String, Array2<f64>)>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn empty() -> Self {
        Self {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Initializes all parameters for `config`, deterministically from `seed`.
    ///
    /// Weights are scaled-normal (std `1/sqrt(fan_in)`), biases zero, layer
    /// norm gains one, positional embeddings std 0.02.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = Self::empty();
        let d = config.d;
        let normal =
            |rng: &mut ChaCha8Rng, r: usize, c: usize, std: f64| -> Array2<f64> {
                Array2::from_shape_fn((r, c), |_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * std
                })
            };

        // Conditioning fusion MLP: concat(img, hand) -> d -> d.
        let c_in = super::features::IMAGE_CHANNELS + super::features::HAND_CHANNELS;
        store.insert("fuse.w1", normal(&mut rng, c_in, d, 1.0 / (c_in as f64).sqrt()));
        store.insert("fuse.b1", Array2::zeros((1, d)));
        store.insert("fuse.w2", normal(&mut rng, d, d, 1.0 / (d as f64).sqrt()));
        store.insert("fuse.b2", Array2::zeros((1, d)));

        // Per-frame fusion-weight scorer.
        store.insert("fusion.w", normal(&mut rng, d, 1, 1.0 / (d as f64).sqrt()));
        store.insert("fusion.b", Array2::zeros((1, 1)));

        // Branch embeddings.
        let geo_pv = config.geo_patch.pow(3);
        let mask_pv = config.mask_patch.pow(2);
        store.insert("geo.embed.w", normal(&mut rng, geo_pv, d, 1.0 / (geo_pv as f64).sqrt()));
        store.insert("geo.embed.b", Array2::zeros((1, d)));
        store.insert("geo.pos", normal(&mut rng, config.geo_tokens(), d, 0.02));
        store.insert("mask.embed.w", normal(&mut rng, mask_pv, d, 1.0 / (mask_pv as f64).sqrt()));
        store.insert("mask.embed.b", Array2::zeros((1, d)));
        store.insert("mask.pos", normal(&mut rng, config.mask_tokens(), d, 0.02));

        let hidden = d * config.ff_mult;
        let std_d = 1.0 / (d as f64).sqrt();
        let std_h = 1.0 / (hidden as f64).sqrt();
        let add_block = |store: &mut Self, rng: &mut ChaCha8Rng, prefix: String| {
            for sub in ["sa", "ca"] {
                for p in ["wq", "wk", "wv", "wo"] {
                    store.insert(&format!("{prefix}.{sub}.{p}"), normal(rng, d, d, std_d));
                }
                for p in ["bq", "bk", "bv", "bo"] {
                    store.insert(&format!("{prefix}.{sub}.{p}"), Array2::zeros((1, d)));
                }
            }
            for ln in ["ln1", "ln2", "ln_kv", "ln3"] {
                store.insert(&format!("{prefix}.{ln}.g"), Array2::ones((1, d)));
                store.insert(&format!("{prefix}.{ln}.b"), Array2::zeros((1, d)));
            }
            store.insert(&format!("{prefix}.ff.w1"), normal(rng, d, hidden, std_d));
            store.insert(&format!("{prefix}.ff.b1"), Array2::zeros((1, hidden)));
            store.insert(&format!("{prefix}.ff.w2"), normal(rng, hidden, d, std_h));
            store.insert(&format!("{prefix}.ff.b2"), Array2::zeros((1, d)));
        };
        for j in 0..config.geo_blocks {
            add_block(&mut store, &mut rng, format!("geo.blk{j}"));
        }
        for i in 0..config.mask_blocks {
            add_block(&mut store, &mut rng, format!("mask.blk{i}"));
        }

        // Output heads.
        store.insert("geo.head.ln.g", Array2::ones((1, d)));
        store.insert("geo.head.ln.b", Array2::zeros((1, d)));
        store.insert("geo.head.w", normal(&mut rng, d, geo_pv, std_d));
        store.insert("geo.head.b", Array2::zeros((1, geo_pv)));
        store.insert("mask.head.ln.g", Array2::ones((1, d)));
        store.insert("mask.head.ln.b", Array2::zeros((1, d)));
        store.insert("mask.head.w", normal(&mut rng, d, mask_pv, std_d));
        store.insert("mask.head.b", Array2::zeros((1, mask_pv)));

        Ok(store)
    }

    fn insert(&mut self, name: &str, value: Array2<f64>) {
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter {name}"
        );
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), value));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.len()).sum()
    }

    pub fn get(&self, name: &str) -> Result<&Array2<f64>, ModelError> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i].1)
            .ok_or_else(|| ModelError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Array2<f64>, ModelError> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| ModelError::UnknownParam(name.to_string()))?;
        Ok(&mut self.entries[i].1)
    }

    pub fn index_of(&self, name: &str) -> Result<usize, ModelError> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.entries.iter().map(|(n, v)| (n.as_str(), v))
    }

    pub fn at(&self, i: usize) -> (&str, &Array2<f64>) {
        let (n, v) = &self.entries[i];
        (n.as_str(), v)
    }

    pub fn at_mut(&mut self, i: usize) -> &mut Array2<f64> {
        &mut self.entries[i].1
    }

    /// Writes the checkpoint: magic `FHDB1`, little-endian u32 tensor count,
    /// then per tensor u32 name length, name bytes, u32 rank, u64 dims, and
    /// the row-major f64 payload.
    pub fn write<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, value) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&2u32.to_le_bytes())?;
            w.write_all(&(value.nrows() as u64).to_le_bytes())?;
            w.write_all(&(value.ncols() as u64).to_le_bytes())?;
            for v in value.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let file = std::fs::File::create(path)?;
        self.write(std::io::BufWriter::new(file))?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self, ModelError> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic)
            .map_err(|_| ModelError::Checkpoint("truncated magic".into()))?;
        if &magic != MAGIC {
            return Err(ModelError::Checkpoint(format!(
                "bad magic {:?}, expected FHDB1",
                String::from_utf8_lossy(&magic)
            )));
        }
        let count = read_u32(&mut r)? as usize;
        let mut store = Self::empty();
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            if name_len > 4096 {
                return Err(ModelError::Checkpoint("unreasonable name length".into()));
            }
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)
                .map_err(|_| ModelError::Checkpoint("truncated name".into()))?;
            let name = String::from_utf8(name)
                .map_err(|_| ModelError::Checkpoint("non-utf8 tensor name".into()))?;
            let rank = read_u32(&mut r)? as usize;
            if rank != 2 {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {name} has rank {rank}, expected 2"
                )));
            }
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            let mut data = vec![0.0f64; rows * cols];
            let mut buf = [0u8; 8];
            for v in data.iter_mut() {
                r.read_exact(&mut buf)
                    .map_err(|_| ModelError::Checkpoint(format!("truncated payload of {name}")))?;
                *v = f64::from_le_bytes(buf);
            }
            let value = Array2::from_shape_vec((rows, cols), data)
                .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
            store.insert(&name, value);
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let file = std::fs::File::open(path)?;
        Self::read(std::io::BufReader::new(file))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ModelError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| ModelError::Checkpoint("truncated u32".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, ModelError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| ModelError::Checkpoint("truncated u64".into()))?;
    Ok(u64::from_le_bytes(buf))
}
