use alloc::format;
use num_traits::Float;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Grade, VolumeSample};
use crate::error::{Error, Result};

/// Anything that carries a glioma grade.
pub trait Graded {
    fn grade(&self) -> Grade;
}

impl Graded for Grade {
    fn grade(&self) -> Grade {
        *self
    }
}

impl Graded for VolumeSample {
    fn grade(&self) -> Grade {
        self.grade
    }
}

/// Stratified split: each grade is shuffled and the first
/// `floor(ratio · n)` go to training. A grade with fewer than two items goes
/// wholly to training. Relative order within each side follows the shuffle,
/// HGG before LGG.
pub fn split_dataset<S: Graded>(items: Vec<S>, ratio: f64, seed: u64) -> Result<(Vec<S>, Vec<S>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio {ratio} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    let mut slots: Vec<Option<S>> = items.into_iter().map(Some).collect();
    for grade in [Grade::Hgg, Grade::Lgg] {
        let mut idx: Vec<usize> = (0..slots.len())
            .filter(|&i| slots[i].as_ref().is_some_and(|s| s.grade() == grade))
            .collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = if n < 2 {
            if n == 1 {
                log::warn!("split_dataset: only one {grade:?} sample; it goes to training");
            }
            n
        } else {
            (Float::floor(ratio * n as f64 + 1e-9) as usize).clamp(1, n - 1)
        };
        for (k, i) in idx.into_iter().enumerate() {
            let item = slots[i].take().expect("visited once");
            if k < n_train {
                train.push(item);
            } else {
                val.push(item);
            }
        }
    }
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grades(hgg: usize, lgg: usize) -> Vec<Grade> {
        let mut v = alloc::vec![Grade::Hgg; hgg];
        v.extend(core::iter::repeat_n(Grade::Lgg, lgg));
        v
    }

    #[test]
    fn nine_to_one_counts() {
        let (train, val) = split_dataset(grades(220, 55), 0.9, 1).unwrap();
        let count = |v: &[Grade], g| v.iter().filter(|&&x| x == g).count();
        assert_eq!((count(&train, Grade::Hgg), count(&train, Grade::Lgg)), (198, 49));
        assert_eq!((count(&val, Grade::Hgg), count(&val, Grade::Lgg)), (22, 6));
    }

    #[test]
    fn singleton_grade_goes_to_train() {
        let (train, val) = split_dataset(grades(10, 1), 0.9, 0).unwrap();
        assert_eq!(train.len(), 10);
        assert_eq!(val, alloc::vec![Grade::Hgg]);
    }

    #[test]
    fn bad_ratio_rejected() {
        assert!(split_dataset(grades(3, 3), 1.0, 0).is_err());
    }
}
