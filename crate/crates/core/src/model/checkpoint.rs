//! Checkpoint and embedding-dump file formats.
//!
//! Checkpoint: `DGCK`, version u32, 32-byte config hash, model spec and
//! layout as JSON strings, seed u64, Adam constants and step, then named
//! f64 blobs (parameters, first moments, second moments). Little-endian
//! throughout; a round trip is bitwise exact.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::Adam;
use super::{ModelSpec, Params};
use crate::data::Layout;
use crate::error::{Error, Result};
use crate::io_util::{put_str, read_file, write_file, ByteReader};
use crate::tensor::Mat;

const VERSION: u32 = 1;

/// Everything needed to resume or serve a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub spec: ModelSpec,
    pub layout: Layout,
    pub params: Params,
    pub adam: Adam,
    pub seed: u64,
    pub config_hash: [u8; 32],
}

impl ModelState {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"DGCK");
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.config_hash);
        put_str(
            &mut out,
            &serde_json::to_string(&self.spec).expect("spec serializes"),
        );
        put_str(
            &mut out,
            &serde_json::to_string(&self.layout).expect("layout serializes"),
        );
        out.extend_from_slice(&self.seed.to_le_bytes());
        for x in [
            self.adam.lr,
            self.adam.beta1,
            self.adam.beta2,
            self.adam.eps,
        ] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&self.adam.step.to_le_bytes());
        let names = self.params.names();
        out.extend_from_slice(&(3 * names.len() as u32).to_le_bytes());
        for (prefix, p) in [
            ("param", &self.params),
            ("adam_m", &self.adam.m),
            ("adam_v", &self.adam.v),
        ] {
            for (name, blob) in names.iter().zip(p.blobs()) {
                put_str(&mut out, &format!("{prefix}/{name}"));
                out.extend_from_slice(&(blob.len() as u64).to_le_bytes());
                for x in blob {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "checkpoint");
        r.expect_magic(b"DGCK")?;
        if r.u32()? != VERSION {
            return Err(Error::format("checkpoint", "unsupported version"));
        }
        let config_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
        let spec: ModelSpec = serde_json::from_str(&r.string()?)?;
        let layout: Layout = serde_json::from_str(&r.string()?)?;
        let seed = r.u64()?;
        let (lr, beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let step = r.u64()?;
        let template = Params::init(&spec, &layout, &mut ChaCha8Rng::seed_from_u64(0)).zeros_like();
        let names = template.names();
        if r.u32()? as usize != 3 * names.len() {
            return Err(Error::format(
                "checkpoint",
                "blob count does not match the model spec",
            ));
        }
        let mut sets = [template.clone(), template.clone(), template];
        for (prefix, p) in ["param", "adam_m", "adam_v"].iter().zip(sets.iter_mut()) {
            for (name, blob) in names.iter().zip(p.blobs_mut()) {
                let got = r.string()?;
                if got != format!("{prefix}/{name}") {
                    return Err(Error::format(
                        "checkpoint",
                        format!("expected blob {prefix}/{name}, found {got}"),
                    ));
                }
                if r.u64()? as usize != blob.len() {
                    return Err(Error::format(
                        "checkpoint",
                        format!("blob {got} has the wrong length"),
                    ));
                }
                for x in blob.iter_mut() {
                    *x = r.f64()?;
                }
            }
        }
        r.finish()?;
        let [params, m, v] = sets;
        Ok(ModelState {
            spec,
            layout,
            params,
            adam: Adam {
                lr,
                beta1,
                beta2,
                eps,
                m,
                v,
                step,
            },
            seed,
            config_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path, "checkpoint")?)
    }
}

/// Header `count: u64, dim: u32`, then `count` rows of `dim` f32 values.
pub fn dump_embeddings(table: &Mat, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(12 + table.as_slice().len() * 4);
    out.extend_from_slice(&(table.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(table.cols() as u32).to_le_bytes());
    for &x in table.as_slice() {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    write_file(path, &out)
}

pub fn load_embeddings(path: &Path) -> Result<Mat> {
    let bytes = read_file(path, "embedding dump")?;
    let mut r = ByteReader::new(&bytes, "embedding dump");
    let rows = r.u64()? as usize;
    let cols = r.u32()? as usize;
    let data = (0..rows * cols)
        .map(|_| r.f32().map(f64::from))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(Mat::from_vec(rows, cols, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregators::AggregatorKind;
    use crate::data::FieldRange;

    fn state() -> ModelState {
        let layout = Layout {
            n_users: 3,
            n_items: 2,
            user_attr: vec![FieldRange {
                offset: 5,
                cardinality: 2,
            }],
            item_attr: vec![],
            context: vec![],
            total: 7,
        };
        let spec = ModelSpec {
            aggregator: AggregatorKind::Ngcf,
            mlp: vec![4, 1],
            dim: 3,
            ..ModelSpec::default()
        };
        let params = Params::init(&spec, &layout, &mut ChaCha8Rng::seed_from_u64(9));
        let mut adam = Adam::new(&params, 0.003);
        let g = Params::init(&spec, &layout, &mut ChaCha8Rng::seed_from_u64(10));
        let mut p = params.clone();
        adam.update(&mut p, &g);
        ModelState {
            spec,
            layout,
            params: p,
            adam,
            seed: 77,
            config_hash: [7; 32],
        }
    }

    #[test]
    fn roundtrip_is_bitwise() {
        let s = state();
        let bytes = s.to_bytes();
        let back = ModelState::from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_bytes(), bytes);
        let mut truncated = bytes.clone();
        truncated.pop();
        assert!(ModelState::from_bytes(&truncated).is_err());
    }

    #[test]
    fn missing_checkpoint_is_reported() {
        let err = ModelState::load(Path::new("/nonexistent/model.ckpt")).unwrap_err();
        assert_eq!(
            err.to_string(),
            "checkpoint not found: /nonexistent/model.ckpt"
        );
    }

    #[test]
    fn embedding_dump_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let t = Mat::from_rows(&[vec![0.5, -1.25], vec![3.0, 0.0]]);
        dump_embeddings(&t, &dir.path().join("e.bin")).unwrap();
        assert_eq!(load_embeddings(&dir.path().join("e.bin")).unwrap(), t);
    }
}
