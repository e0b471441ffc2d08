use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::{EventClass, NUM_CLASSES};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.90,
            val: 0.05,
            test: 0.05,
        }
    }
}

impl SplitFractions {
    pub fn violations(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, v) in [("train", self.train), ("val", self.val), ("test", self.test)] {
            if !(0.0..=1.0).contains(&v) {
                errs.push(format!("{name} fraction {v} outside [0, 1]"));
            }
        }
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            errs.push(format!("split fractions sum to {sum}, expected 1"));
        }
        errs
    }
}

/// Indices into the dataset, each list ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Distributes `total` over classes in proportion to `counts`, flooring each
/// share and handing the remainder to the largest fractional parts.
fn apportion(total: usize, counts: &[usize; NUM_CLASSES], cap: &[usize; NUM_CLASSES]) -> [usize; NUM_CLASSES] {
    let n: usize = counts.iter().sum();
    let exact: Vec<f64> = counts.iter().map(|&c| total as f64 * c as f64 / n as f64).collect();
    let mut out: [usize; NUM_CLASSES] = std::array::from_fn(|k| (exact[k].floor() as usize).min(cap[k]));
    let mut order: Vec<usize> = (0..NUM_CLASSES).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut left = total - out.iter().sum::<usize>();
    while left > 0 {
        let before = left;
        for &k in &order {
            if left > 0 && out[k] < cap[k] {
                out[k] += 1;
                left -= 1;
            }
        }
        if left == before {
            break;
        }
    }
    out
}

/// `(train, val, test)` sizes: validation and test are the rounded
/// fractions of `n`, training takes the rest. Every split must be nonempty.
pub fn split_sizes(n: usize, fractions: SplitFractions) -> Result<(usize, usize, usize), TrainError> {
    let errs = fractions.violations();
    if !errs.is_empty() {
        return Err(TrainError::Config(errs));
    }
    let n_val = (n as f64 * fractions.val).round() as usize;
    let n_test = (n as f64 * fractions.test).round() as usize;
    if n_val + n_test >= n || n_val == 0 || n_test == 0 {
        return Err(TrainError::EmptySplit(format!(
            "{n} events cannot fill train/val/test at {}/{}/{}",
            fractions.train, fractions.val, fractions.test
        )));
    }
    Ok((n - n_val - n_test, n_val, n_test))
}

/// Class-stratified partition with sizes from [`split_sizes`].
pub fn split_dataset(classes: &[EventClass], fractions: SplitFractions, seed: u64) -> Result<Split, TrainError> {
    let (_, n_val, n_test) = split_sizes(classes.len(), fractions)?;

    let mut members: [Vec<usize>; NUM_CLASSES] = Default::default();
    for (i, c) in classes.iter().enumerate() {
        members[c.index()].push(i);
    }
    let counts: [usize; NUM_CLASSES] = std::array::from_fn(|k| members[k].len());
    let val_quota = apportion(n_val, &counts, &counts);
    let room: [usize; NUM_CLASSES] = std::array::from_fn(|k| counts[k] - val_quota[k]);
    let test_quota = apportion(n_test, &counts, &room);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split::default();
    for k in 0..NUM_CLASSES {
        let ids = &mut members[k];
        ids.shuffle(&mut rng);
        let (v, rest) = ids.split_at(val_quota[k]);
        let (t, tr) = rest.split_at(test_quota[k]);
        split.val.extend_from_slice(v);
        split.test.extend_from_slice(t);
        split.train.extend_from_slice(tr);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cycle(n: usize) -> Vec<EventClass> {
        (0..n).map(|i| EventClass::from_index(i % 3).unwrap()).collect()
    }

    #[test]
    fn desk_sizes() {
        let s = split_dataset(&cycle(1000), SplitFractions::default(), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (900, 50, 50));
        let twelfth = SplitFractions {
            train: 10.0 / 12.0,
            val: 1.0 / 12.0,
            test: 1.0 / 12.0,
        };
        let s = split_dataset(&cycle(3600), twelfth, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (3000, 300, 300));
    }

    #[test]
    fn too_small_is_error() {
        assert!(matches!(
            split_dataset(&cycle(5), SplitFractions::default(), 0),
            Err(TrainError::EmptySplit(_))
        ));
        let bad = SplitFractions { train: 0.5, val: 0.1, test: 0.1 };
        assert!(matches!(split_dataset(&cycle(100), bad, 0), Err(TrainError::Config(_))));
    }
}
