use std::collections::BTreeMap;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::metrics::labels;
use super::EvalError;
use crate::ingest::FlowRecord;
use crate::rng::rng_for;

/// Per-class cap and `train:val:test` proportions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub ratios: [u32; 3],
    pub per_class_cap: Option<usize>,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            ratios: [8, 1, 1],
            per_class_cap: Some(5000),
            seed: 0,
        }
    }
}

/// Record indices of each part; classes appear in ascending order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<FlowRecord>,
    pub val: Vec<FlowRecord>,
    pub test: Vec<FlowRecord>,
}

/// Val and test take `⌊n·r/Σr⌋` records (at least one each), train the rest.
pub fn part_sizes(n: usize, ratios: [u32; 3]) -> (usize, usize, usize) {
    let sum = ratios.iter().map(|&r| r as usize).sum::<usize>();
    let val = (n * ratios[1] as usize / sum).max(1);
    let test = (n * ratios[2] as usize / sum).max(1);
    (n - val - test, val, test)
}

/// Per class: cap by uniform sampling without replacement, shuffle, then
/// partition. A pure function of the labels and `spec`.
pub fn split_indices(records: &[FlowRecord], spec: &SplitSpec) -> Result<SplitIndices, EvalError> {
    if spec.ratios.contains(&0) {
        return Err(EvalError::InvalidSplit("ratios must be positive".into()));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, y) in labels(records)?.into_iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut out = SplitIndices::default();
    for (class, members) in by_class {
        if members.len() < 3 {
            return Err(EvalError::ClassTooSmall {
                class,
                count: members.len(),
            });
        }
        let mut rng = rng_for(spec.seed, &[0x5B11, class as u64]);
        let mut kept = match spec.per_class_cap {
            Some(cap) if members.len() > cap => {
                let mut picked = index::sample(&mut rng, members.len(), cap).into_vec();
                picked.sort_unstable();
                picked.into_iter().map(|i| members[i]).collect()
            }
            _ => members,
        };
        kept.shuffle(&mut rng);
        let (n_train, n_val, _) = part_sizes(kept.len(), spec.ratios);
        out.train.extend_from_slice(&kept[..n_train]);
        out.val.extend_from_slice(&kept[n_train..n_train + n_val]);
        out.test.extend_from_slice(&kept[n_train + n_val..]);
    }
    Ok(out)
}

pub fn split_dataset(records: &[FlowRecord], spec: &SplitSpec) -> Result<Splits, EvalError> {
    let idx = split_indices(records, spec)?;
    let take = |ix: &[usize]| ix.iter().map(|&i| records[i].clone()).collect();
    Ok(Splits {
        train: take(&idx.train),
        val: take(&idx.val),
        test: take(&idx.test),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(part_sizes(10, [8, 1, 1]), (8, 1, 1));
        assert_eq!(part_sizes(5000, [8, 1, 1]), (4000, 500, 500));
        assert_eq!(part_sizes(3, [8, 1, 1]), (1, 1, 1));
        assert_eq!(part_sizes(19, [8, 1, 1]), (17, 1, 1));
    }
}
