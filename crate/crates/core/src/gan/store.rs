use std::path::Path;

use super::{EpochRecord, GanConfig, GanModel};
use crate::container::{Reader, Writer};
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, DenseNet};

const MAGIC: &[u8; 4] = b"KDSG";
const VERSION: u32 = 1;

fn write_adam(w: &mut Writer, s: &AdamState) {
    w.str(&serde_json::to_string(&s.config).expect("adam config serializes"));
    w.u64(s.step);
    w.usize(s.first_moment.len());
    w.f64s(&s.first_moment);
    w.f64s(&s.second_moment);
}

fn read_adam(r: &mut Reader<'_>, n_params: usize) -> Result<AdamState> {
    let config: AdamConfig = serde_json::from_str(&r.str()?)
        .map_err(|e| Error::InvalidContainer(format!("adam config: {e}")))?;
    let step = r.u64()?;
    let n = r.usize()?;
    if n != n_params {
        return Err(Error::InvalidContainer(format!(
            "optimizer holds {n} moments for {n_params} parameters"
        )));
    }
    Ok(AdamState {
        config,
        step,
        first_moment: r.f64s(n)?,
        second_moment: r.f64s(n)?,
    })
}

impl GanModel {
    /// Serializes both networks with batch-norm and optimizer state, the
    /// configuration, the bound basis hash and the training history.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.encode("")
    }

    /// Encoding with a free-form text annotation (for provenance); the
    /// annotation does not affect decoding of the model itself.
    pub fn to_bytes_with_metadata(&self, metadata: &str) -> Vec<u8> {
        self.encode(metadata)
    }

    fn encode(&self, metadata: &str) -> Vec<u8> {
        let mut w = Writer::new(MAGIC, VERSION);
        w.str(&serde_json::to_string(&self.config).expect("config serializes"));
        w.str(self.basis_hash.as_deref().unwrap_or(""));
        self.generator.write_to(&mut w);
        self.discriminator.write_to(&mut w);
        write_adam(&mut w, &self.gen_adam);
        write_adam(&mut w, &self.disc_adam);
        w.str(&serde_json::to_string(&self.history).expect("history serializes"));
        w.str(metadata);
        w.finish()
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        Ok(Self::from_bytes_with_metadata(buf)?.0)
    }

    pub fn from_bytes_with_metadata(buf: &[u8]) -> Result<(Self, String)> {
        let (mut r, version) = Reader::open(buf, MAGIC)?;
        if version != VERSION {
            return Err(Error::InvalidContainer(format!(
                "unsupported model version {version}"
            )));
        }
        let config: GanConfig = serde_json::from_str(&r.str()?)
            .map_err(|e| Error::InvalidContainer(format!("model config: {e}")))?;
        let hash = r.str()?;
        let generator = DenseNet::read_from(&mut r)?;
        let discriminator = DenseNet::read_from(&mut r)?;
        let mut model = GanModel::from_parts(generator, discriminator, config)?;
        model.gen_adam = read_adam(&mut r, model.generator.n_params())?;
        model.disc_adam = read_adam(&mut r, model.discriminator.n_params())?;
        let history: Vec<EpochRecord> = serde_json::from_str(&r.str()?)
            .map_err(|e| Error::InvalidContainer(format!("history: {e}")))?;
        let metadata = r.str()?;
        r.finish()?;
        model.history = history;
        model.basis_hash = (!hash.is_empty()).then_some(hash);
        Ok((model, metadata))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn save_with_metadata(&self, path: impl AsRef<Path>, metadata: &str) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes_with_metadata(metadata)).map_err(|e| Error::io(path, e))
    }

    pub fn load_with_metadata(path: impl AsRef<Path>) -> Result<(Self, String)> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes_with_metadata(&buf)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}
