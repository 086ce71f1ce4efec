use super::parse::InteractionLog;
use super::{Instance, InteractionMatrix};
use crate::error::{Error, Result};

/// Users with fewer behaviors cannot supply train, validation and test targets.
pub const MIN_BEHAVIORS: usize = 4;

/// Positive instances per split plus the training-window interaction data.
#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<Instance>,
    pub val: Vec<Instance>,
    pub test: Vec<Instance>,
    /// `Y` rebuilt from the training window (behaviors `1..=T-3`).
    pub interactions: InteractionMatrix,
    /// Training-window behavior sequence per user (local item ids); empty
    /// for dropped users.
    pub train_sequences: Vec<Vec<u32>>,
    pub dropped_users: usize,
}

/// Positive instance predicting behavior `t` (0-based) from behaviors `0..t`.
///
/// Earlier occurrences of the target item are left out of the behavior list.
pub(crate) fn positive_instance(log: &InteractionLog, user: usize, t: usize) -> Instance {
    let m = log.n_users() as u32;
    let seq = &log.sequences[user];
    let target = seq[t].item;
    Instance {
        user: user as u32,
        item: m + target,
        user_attrs: log.user_attrs[user].clone(),
        item_attrs: log.item_attrs[target as usize].clone(),
        behaviors: seq[..t]
            .iter()
            .filter(|e| e.item != target)
            .map(|e| m + e.item)
            .collect(),
        context: seq[t].context.clone(),
        label: 1,
    }
}

/// Leave-last-out split: with `T` behaviors, train predicts `T-2` from
/// `1..=T-3`, validation predicts `T-1` from `1..=T-2` and test predicts `T`
/// from `1..=T-1` (1-based).
pub fn split_leave_last(log: &InteractionLog) -> Result<Split> {
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        interactions: InteractionMatrix::from_rows(log.n_items(), &[]),
        train_sequences: Vec::with_capacity(log.n_users()),
        dropped_users: 0,
    };
    for (u, seq) in log.sequences.iter().enumerate() {
        let t = seq.len();
        if t < MIN_BEHAVIORS {
            split.dropped_users += 1;
            split.train_sequences.push(Vec::new());
            continue;
        }
        split.train.push(positive_instance(log, u, t - 3));
        split.val.push(positive_instance(log, u, t - 2));
        split.test.push(positive_instance(log, u, t - 1));
        split
            .train_sequences
            .push(seq[..t - 3].iter().map(|e| e.item).collect());
    }
    if split.train.is_empty() {
        return Err(Error::AllUsersDropped);
    }
    if split.dropped_users > 0 {
        log::info!(
            "dropped {} users with fewer than {MIN_BEHAVIORS} behaviors",
            split.dropped_users
        );
    }
    split.interactions = InteractionMatrix::from_rows(log.n_items(), &split.train_sequences);
    Ok(split)
}
