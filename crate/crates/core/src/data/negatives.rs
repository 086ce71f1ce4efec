use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::parse::InteractionLog;
use super::Instance;
use crate::error::{Error, Result};

/// Proposal distribution over non-clicked items.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMode {
    #[default]
    Uniform,
    /// Weighted by log-wide click counts (+1 smoothing).
    Popularity,
}

/// Emit each positive followed by `n_neg` label-0 copies whose target item
/// the user never clicked in any window.
///
/// Sampling is without replacement per positive. When a user has fewer than
/// `n_neg` non-clicked items the sampler falls back to drawing with
/// replacement from those that exist, and emits no negatives when none exist.
pub fn sample_negatives(
    positives: &[Instance],
    log: &InteractionLog,
    n_neg: usize,
    seed: u64,
    mode: NegativeMode,
) -> Result<Vec<Instance>> {
    if n_neg == 0 {
        return Err(Error::InvalidArgument("n_neg must be at least 1".into()));
    }
    let m = log.n_users() as u32;
    let n = log.n_items();
    let clicked: Vec<Vec<u32>> = log
        .sequences
        .iter()
        .map(|s| {
            let mut v: Vec<u32> = s.iter().map(|e| e.item).collect();
            v.sort_unstable();
            v.dedup();
            v
        })
        .collect();
    let weights = match mode {
        NegativeMode::Uniform => None,
        NegativeMode::Popularity => {
            let mut w = vec![1.0f64; n];
            for s in &log.sequences {
                for e in s {
                    w[e.item as usize] += 1.0;
                }
            }
            Some(WeightedIndex::new(&w).expect("positive weights"))
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(positives.len() * (n_neg + 1));
    for pos in positives {
        out.push(pos.clone());
        let seen = &clicked[pos.user as usize];
        let available = n - seen.len();
        let is_clicked = |v: u32| seen.binary_search(&v).is_ok();
        let draw = |rng: &mut ChaCha8Rng| -> u32 {
            match &weights {
                Some(w) => w.sample(rng) as u32,
                None => rng.random_range(0..n as u32),
            }
        };

        let mut chosen: Vec<u32> = Vec::with_capacity(n_neg);
        if available == 0 {
            log::warn!("user {} clicked every item; no negatives emitted", pos.user);
        } else if available < n_neg {
            log::warn!(
                "user {} has only {available} non-clicked items; sampling with replacement",
                pos.user
            );
            let candidates: Vec<u32> = (0..n as u32).filter(|&v| !is_clicked(v)).collect();
            for _ in 0..n_neg {
                chosen.push(candidates[rng.random_range(0..candidates.len())]);
            }
        } else if available * 2 < n && weights.is_none() {
            // Dense clicks: enumerate candidates instead of rejection sampling.
            let candidates: Vec<u32> = (0..n as u32).filter(|&v| !is_clicked(v)).collect();
            chosen.extend(
                rand::seq::index::sample(&mut rng, candidates.len(), n_neg)
                    .into_iter()
                    .map(|i| candidates[i]),
            );
        } else {
            while chosen.len() < n_neg {
                let v = draw(&mut rng);
                if !is_clicked(v) && !chosen.contains(&v) {
                    chosen.push(v);
                }
            }
        }

        for v in chosen {
            out.push(Instance {
                item: m + v,
                item_attrs: log.item_attrs[v as usize].clone(),
                label: 0,
                ..pos.clone()
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_reader, split_leave_last, ColumnType, FieldRole, FieldSpec, Schema};

    fn log_with(n_items: usize, user_len: &[usize]) -> InteractionLog {
        let schema = Schema::new(vec![
            FieldSpec::new("user", "u", ColumnType::Id, FieldRole::User),
            FieldSpec::new("item", "i", ColumnType::Id, FieldRole::Item),
            FieldSpec::new("ts", "t", ColumnType::Timestamp, FieldRole::EventTime),
        ]);
        let mut s = String::from("u,i,t\n");
        // Pad an item universe through a throwaway user.
        for j in 0..n_items {
            s.push_str(&format!("zz,i{j:03},{j}\n"));
        }
        for (k, &len) in user_len.iter().enumerate() {
            for j in 0..len {
                s.push_str(&format!("u{k},i{:03},{j}\n", (j * 3 + k) % n_items));
            }
        }
        parse_reader(s.as_bytes(), &schema).unwrap()
    }

    #[test]
    fn one_positive_ten_negatives() {
        let log = log_with(50, &[5]);
        let split = split_leave_last(&log).unwrap();
        let pos: Vec<_> = split
            .train
            .iter()
            .filter(|i| i.user == 0)
            .cloned()
            .collect();
        let out = sample_negatives(&pos, &log, 10, 7, NegativeMode::Uniform).unwrap();
        assert_eq!(out.len(), 11);
        assert_eq!(out.iter().filter(|i| i.label == 1).count(), 1);
    }

    #[test]
    fn zero_negatives_rejected() {
        let log = log_with(10, &[5]);
        let split = split_leave_last(&log).unwrap();
        assert!(sample_negatives(&split.train, &log, 0, 1, NegativeMode::Uniform).is_err());
    }

    #[test]
    fn deterministic_and_valid() {
        let log = log_with(40, &[5, 9, 12, 4]);
        let split = split_leave_last(&log).unwrap();
        let zz = log.vocab.index_of(0, "zz").unwrap();
        let pos: Vec<_> = split.train.into_iter().filter(|i| i.user != zz).collect();
        for mode in [NegativeMode::Uniform, NegativeMode::Popularity] {
            let a = sample_negatives(&pos, &log, 10, 99, mode).unwrap();
            let b = sample_negatives(&pos, &log, 10, 99, mode).unwrap();
            assert_eq!(a, b);
            let m = log.n_users() as u32;
            for inst in a.iter().filter(|i| i.label == 0) {
                let clicked = log.sequences[inst.user as usize]
                    .iter()
                    .any(|e| e.item == inst.item - m);
                assert!(!clicked);
            }
            // without replacement per positive
            for chunk in a.chunks(11) {
                let mut items: Vec<u32> = chunk.iter().map(|i| i.item).collect();
                items.sort_unstable();
                items.dedup();
                assert_eq!(items.len(), 11);
            }
        }
    }

    #[test]
    fn saturated_user_falls_back() {
        // 5 items, the padding user clicks all five; u0 clicks 4 of them.
        let log = log_with(5, &[4]);
        let split = split_leave_last(&log).unwrap();
        let out = sample_negatives(&split.train, &log, 3, 1, NegativeMode::Uniform).unwrap();
        // "zz" clicked every item: only its positive survives.
        let zz = log.vocab.index_of(0, "zz").unwrap();
        assert_eq!(out.iter().filter(|i| i.user == zz).count(), 1);
        // u0 has one candidate, drawn with replacement.
        let u0 = log.vocab.index_of(0, "u0").unwrap();
        assert_eq!(out.iter().filter(|i| i.user == u0).count(), 4);
    }
}
