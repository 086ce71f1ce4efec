//! The dataset bundle: vocabulary, entity attributes, splits and `Y`.
//!
//! On disk a bundle is a directory holding `vocab.json`, `entities.json`,
//! `instances.{train,val,test}.bin` and `Y.bin`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::negatives::{sample_negatives, NegativeMode};
use super::parse::{InteractionLog, ParseReport};
use super::split::split_leave_last;
use super::vocab::{FeatureVocabulary, Layout};
use super::{Instance, InteractionMatrix};
use crate::error::{Error, Result};
use crate::io_util::{read_file, write_file, ByteReader};

#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: FeatureVocabulary,
    pub user_attrs: Vec<Vec<Vec<u32>>>,
    pub item_attrs: Vec<Vec<Vec<u32>>>,
    /// Training-window behavior sequences (local item ids).
    pub train_sequences: Vec<Vec<u32>>,
    pub interactions: InteractionMatrix,
    pub train: Vec<Instance>,
    pub val: Vec<Instance>,
    pub test: Vec<Instance>,
    pub dropped_users: usize,
    pub report: ParseReport,
}

#[derive(Serialize, Deserialize)]
struct Entities {
    user_attrs: Vec<Vec<Vec<u32>>>,
    item_attrs: Vec<Vec<Vec<u32>>>,
    train_sequences: Vec<Vec<u32>>,
    dropped_users: usize,
    report: ParseReport,
}

impl Dataset {
    /// Split, attach negatives to every split and count training frequencies.
    pub fn build(
        log: &InteractionLog,
        n_neg: usize,
        seed: u64,
        mode: NegativeMode,
    ) -> Result<Self> {
        let split = split_leave_last(log)?;
        let train = sample_negatives(&split.train, log, n_neg, seed, mode)?;
        let val = sample_negatives(&split.val, log, n_neg, seed.wrapping_add(1), mode)?;
        let test = sample_negatives(&split.test, log, n_neg, seed.wrapping_add(2), mode)?;
        let mut vocab = log.vocab.clone();
        vocab.frequency = vec![0; vocab.total()];
        for inst in &train {
            for f in inst.features() {
                vocab.frequency[f as usize] += 1;
            }
        }
        Ok(Dataset {
            vocab,
            user_attrs: log.user_attrs.clone(),
            item_attrs: log.item_attrs.clone(),
            train_sequences: split.train_sequences,
            interactions: split.interactions,
            train,
            val,
            test,
            dropped_users: split.dropped_users,
            report: log.report.clone(),
        })
    }

    pub fn layout(&self) -> Layout {
        self.vocab.layout()
    }

    pub fn n_users(&self) -> usize {
        self.vocab.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.vocab.n_items()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("vocab.json"), &serde_json::to_vec(&self.vocab)?)?;
        let entities = Entities {
            user_attrs: self.user_attrs.clone(),
            item_attrs: self.item_attrs.clone(),
            train_sequences: self.train_sequences.clone(),
            dropped_users: self.dropped_users,
            report: self.report.clone(),
        };
        write_file(&dir.join("entities.json"), &serde_json::to_vec(&entities)?)?;
        for (name, split) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            let mut buf = Vec::new();
            write_instances(&mut buf, split, &self.layout()).map_err(|e| Error::io(dir, e))?;
            write_file(&dir.join(format!("instances.{name}.bin")), &buf)?;
        }
        let mut y = Vec::new();
        self.interactions
            .write_to(&mut y)
            .map_err(|e| Error::io(dir, e))?;
        write_file(&dir.join("Y.bin"), &y)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut vocab: FeatureVocabulary =
            serde_json::from_slice(&read_file(&dir.join("vocab.json"), "dataset vocabulary")?)?;
        vocab.rebuild_lookup();
        let entities: Entities =
            serde_json::from_slice(&read_file(&dir.join("entities.json"), "dataset entities")?)?;
        let layout = vocab.layout();
        let split = |name: &str| -> Result<Vec<Instance>> {
            let bytes = read_file(&dir.join(format!("instances.{name}.bin")), "instance file")?;
            read_instances(&bytes, &layout)
        };
        Ok(Dataset {
            train: split("train")?,
            val: split("val")?,
            test: split("test")?,
            interactions: InteractionMatrix::read_from(&read_file(
                &dir.join("Y.bin"),
                "interaction matrix",
            )?)?,
            vocab,
            user_attrs: entities.user_attrs,
            item_attrs: entities.item_attrs,
            train_sequences: entities.train_sequences,
            dropped_users: entities.dropped_users,
            report: entities.report,
        })
    }
}

/// Length-prefixed little-endian u32 index lists.
pub fn write_instances<W: std::io::Write>(
    mut w: W,
    instances: &[Instance],
    layout: &Layout,
) -> std::io::Result<()> {
    w.write_all(b"DGIN")?;
    w.write_all(&1u32.to_le_bytes())?;
    w.write_all(&(instances.len() as u64).to_le_bytes())?;
    for n in [
        layout.user_attr.len(),
        layout.item_attr.len(),
        layout.context.len(),
    ] {
        w.write_all(&(n as u32).to_le_bytes())?;
    }
    let list = |w: &mut W, xs: &[u32]| -> std::io::Result<()> {
        w.write_all(&(xs.len() as u32).to_le_bytes())?;
        for x in xs {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    };
    for inst in instances {
        for x in [inst.label as u32, inst.user, inst.item] {
            w.write_all(&x.to_le_bytes())?;
        }
        for l in &inst.user_attrs {
            list(&mut w, l)?;
        }
        for l in &inst.item_attrs {
            list(&mut w, l)?;
        }
        list(&mut w, &inst.behaviors)?;
        for l in &inst.context {
            list(&mut w, l)?;
        }
    }
    Ok(())
}

pub fn read_instances(bytes: &[u8], layout: &Layout) -> Result<Vec<Instance>> {
    let mut r = ByteReader::new(bytes, "instance file");
    r.expect_magic(b"DGIN")?;
    if r.u32()? != 1 {
        return Err(Error::format("instance file", "unsupported version"));
    }
    let count = r.u64()? as usize;
    let (j, k, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    if (j, k, c)
        != (
            layout.user_attr.len(),
            layout.item_attr.len(),
            layout.context.len(),
        )
    {
        return Err(Error::format(
            "instance file",
            "field counts disagree with vocabulary",
        ));
    }
    let list = |r: &mut ByteReader| -> Result<Vec<u32>> {
        let n = r.u32()? as usize;
        (0..n).map(|_| r.u32()).collect()
    };
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let label = r.u32()?;
        if label > 1 {
            return Err(Error::format("instance file", "label not binary"));
        }
        let user = r.u32()?;
        let item = r.u32()?;
        let user_attrs = (0..j).map(|_| list(&mut r)).collect::<Result<_>>()?;
        let item_attrs = (0..k).map(|_| list(&mut r)).collect::<Result<_>>()?;
        let behaviors = list(&mut r)?;
        let context = (0..c).map(|_| list(&mut r)).collect::<Result<_>>()?;
        out.push(Instance {
            user,
            item,
            user_attrs,
            item_attrs,
            behaviors,
            context,
            label: label as u8,
        });
    }
    r.finish()?;
    Ok(out)
}
