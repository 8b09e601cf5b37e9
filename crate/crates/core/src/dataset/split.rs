use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Identity used to keep a split leak-free.
pub trait SplitKey {
    fn image_key(&self) -> &str;
    /// Items sharing a group key (a patient) stay on one side of a
    /// patient-level split.
    fn group_key(&self) -> &str;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split<I> {
    pub train: Vec<I>,
    pub val: Vec<I>,
    pub split_seed: u64,
    pub by_patient: bool,
}

/// Seeded train/validation split.
///
/// Image-level splits put exactly `round(ratio × n)` items in train.
/// Patient-level splits assign whole groups, greedily bringing the
/// validation count as close to `n − round(ratio × n)` as group sizes allow.
pub fn split<I: SplitKey>(items: Vec<I>, ratio: f64, seed: u64, by_patient: bool) -> Result<Split<I>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid("split", format!("ratio {ratio} outside (0, 1)")));
    }
    let n = items.len();
    if n < 2 {
        return Err(Error::invalid("split", format!("need at least 2 records, got {n}")));
    }
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let in_val: Vec<bool> = if by_patient {
        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, item) in items.iter().enumerate() {
            groups.entry(item.group_key()).or_default().push(i);
        }
        if groups.len() < 2 {
            return Err(Error::invalid(
                "split",
                "patient-level split needs at least 2 distinct patients",
            ));
        }
        let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
        groups.shuffle(&mut rng);

        let target = (n - n_train) as i64;
        let mut val_count = 0i64;
        let mut flags = vec![false; n];
        let mut chosen = vec![false; groups.len()];
        for (g, members) in groups.iter().enumerate() {
            let size = members.len() as i64;
            if (val_count + size - target).abs() < (val_count - target).abs() {
                val_count += size;
                chosen[g] = true;
            }
        }
        if val_count == 0 {
            // every group overshoots; take the smallest
            let smallest = (0..groups.len()).min_by_key(|&g| groups[g].len()).unwrap();
            chosen[smallest] = true;
        }
        if chosen.iter().all(|&c| c) {
            let largest = (0..groups.len()).max_by_key(|&g| groups[g].len()).unwrap();
            chosen[largest] = false;
        }
        for (g, members) in groups.iter().enumerate() {
            if chosen[g] {
                for &i in members {
                    flags[i] = true;
                }
            }
        }
        flags
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut flags = vec![false; n];
        for &i in &order[n_train..] {
            flags[i] = true;
        }
        flags
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut slots: Vec<Option<I>> = items.into_iter().map(Some).collect();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for i in order {
        let item = slots[i].take().expect("each index visited once");
        if in_val[i] {
            val.push(item);
        } else {
            train.push(item);
        }
    }
    Ok(Split {
        train,
        val,
        split_seed: seed,
        by_patient,
    })
}
