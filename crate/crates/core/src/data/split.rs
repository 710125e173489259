use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{DatasetManifest, LabelMap};

/// Labeled/validation/test partition of the annotated pixels.
///
/// Pixel indices are flat (`row * width + col`). `train[k]` and
/// `validation[k]` belong to class `k + 1`; every list is sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitSpec {
    pub seed: u64,
    pub train: Vec<Vec<usize>>,
    pub validation: Vec<Vec<usize>>,
    pub test: Vec<usize>,
}

impl SplitSpec {
    pub fn classes(&self) -> usize {
        self.train.len()
    }

    /// Training pixels with their class id.
    pub fn train_pixels(&self) -> impl Iterator<Item = (usize, u16)> + '_ {
        Self::flatten(&self.train)
    }

    pub fn validation_pixels(&self) -> impl Iterator<Item = (usize, u16)> + '_ {
        Self::flatten(&self.validation)
    }

    fn flatten(lists: &[Vec<usize>]) -> impl Iterator<Item = (usize, u16)> + '_ {
        lists
            .iter()
            .enumerate()
            .flat_map(|(k, v)| v.iter().map(move |&p| (p, (k + 1) as u16)))
    }

    /// Number of sampled (train + validation) pixels of class `class`.
    pub fn labeled_count(&self, class: u16) -> usize {
        let k = usize::from(class) - 1;
        self.train[k].len() + self.validation[k].len()
    }
}

/// Validation share of `labeled` sampled pixels: 10%, at least one when two
/// or more were sampled.
pub fn validation_count(labeled: usize) -> usize {
    if labeled < 2 {
        0
    } else {
        (labeled / 10).max(1)
    }
}

/// Draws `min(quota, available)` labeled pixels per class without
/// replacement and holds 10% of them out for validation. Everything else that
/// is annotated becomes test data. Deterministic in `seed`.
pub fn sample_split(labels: &LabelMap, manifest: &DatasetManifest, seed: u64) -> Result<SplitSpec> {
    manifest.validate()?;
    let c = usize::from(labels.classes());
    if manifest.class_count() != c {
        return Err(Error::Config(format!(
            "manifest lists {} classes, label map has {c}",
            manifest.class_count()
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); c];
    for p in labels.annotated() {
        by_class[usize::from(labels.get(p)) - 1].push(p);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(c);
    let mut validation = Vec::with_capacity(c);
    let mut taken = vec![false; labels.labels().len()];
    for (k, pool) in by_class.iter().enumerate() {
        if pool.is_empty() {
            return Err(Error::Split(format!(
                "class {} ({}) has no annotated pixels",
                k + 1,
                manifest.classes[k]
            )));
        }
        let count = manifest.quotas[k].min(pool.len());
        let mut chosen: Vec<usize> = pool.choose_multiple(&mut rng, count).copied().collect();
        let n_val = validation_count(count);
        let mut val: Vec<usize> = chosen.drain(..n_val).collect();
        chosen.sort_unstable();
        val.sort_unstable();
        for &p in chosen.iter().chain(&val) {
            taken[p] = true;
        }
        train.push(chosen);
        validation.push(val);
    }
    let test = labels.annotated().filter(|&p| !taken[p]).collect();
    Ok(SplitSpec {
        seed,
        train,
        validation,
        test,
    })
}

/// One-hot label matrix (l×c) for 1-based class ids.
pub fn label_matrix(classes_of_labeled: &[u16], n_classes: usize) -> Result<Tensor> {
    let mut y = Tensor::zeros(classes_of_labeled.len(), n_classes);
    for (i, &k) in classes_of_labeled.iter().enumerate() {
        if k == 0 || usize::from(k) > n_classes {
            return Err(Error::Contract(format!(
                "labeled node {i} has class {k}, expected 1..={n_classes}"
            )));
        }
        y.set(i, usize::from(k) - 1, 1.0);
    }
    Ok(y)
}
