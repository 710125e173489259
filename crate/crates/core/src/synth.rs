//! Synthetic labeled scenes for tests and demos.

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{DatasetManifest, HsiCube, LabelMap};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlobSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub classes: usize,
    /// Distance between any two class means, in units of `sigma`.
    pub separation: f64,
    /// Per-band noise standard deviation.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            height: 48,
            width: 48,
            bands: 10,
            classes: 4,
            separation: 3.0,
            sigma: 0.05,
            seed: 0,
        }
    }
}

/// Cube of `classes` spatially contiguous regions (Voronoi cells around
/// jittered grid sites). Class means sit on distinct random band axes so
/// every pair is exactly `separation·sigma` apart; pixels add i.i.d.
/// Gaussian noise. Every pixel is annotated.
pub fn blobs(spec: &BlobSpec) -> Result<(HsiCube, LabelMap)> {
    let BlobSpec { height: h, width: w, bands, classes, .. } = *spec;
    if classes < 2 || classes > bands || classes > usize::from(u16::MAX) {
        return Err(Error::Param(format!("need 2 <= classes <= bands, got {classes} classes, {bands} bands")));
    }
    if h * w < classes {
        return Err(Error::Param("fewer pixels than classes".into()));
    }
    if !(spec.sigma > 0.0) || !(spec.separation >= 0.0) {
        return Err(Error::Param("sigma must be > 0 and separation >= 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let cols = (classes as f64).sqrt().ceil() as usize;
    let rows = classes.div_ceil(cols);
    let (cell_h, cell_w) = (h as f64 / rows as f64, w as f64 / cols as f64);
    let sites: Vec<(f64, f64)> = (0..classes)
        .map(|k| {
            let (r, c) = (k / cols, k % cols);
            let jr = rng.gen_range(-0.25..=0.25) * cell_h;
            let jc = rng.gen_range(-0.25..=0.25) * cell_w;
            ((r as f64 + 0.5) * cell_h + jr, (c as f64 + 0.5) * cell_w + jc)
        })
        .collect();

    let mut axes: Vec<usize> = (0..bands).collect();
    axes.shuffle(&mut rng);
    let offset = spec.separation * spec.sigma / 2f64.sqrt();
    let base: Vec<f64> = (0..bands).map(|_| rng.gen_range(0.3..0.5)).collect();

    let noise = Normal::new(0.0, spec.sigma).expect("sigma is positive");
    let mut labels = Vec::with_capacity(h * w);
    let mut data = Vec::with_capacity(h * w * bands);
    for y in 0..h {
        for x in 0..w {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let k = (0..classes)
                .min_by(|&a, &b| {
                    let da = (sites[a].0 - py).powi(2) + (sites[a].1 - px).powi(2);
                    let db = (sites[b].0 - py).powi(2) + (sites[b].1 - px).powi(2);
                    da.total_cmp(&db)
                })
                .expect("at least two classes");
            labels.push((k + 1) as u16);
            for (band, &b0) in base.iter().enumerate() {
                let mean = if band == axes[k] { b0 + offset } else { b0 };
                data.push((mean + noise.sample(&mut rng)) as f32);
            }
        }
    }
    let cube = HsiCube::new(h, w, bands, data)?;
    let labels = LabelMap::new(h, w, classes as u16, labels)?;
    Ok((cube, labels))
}

/// Manifest naming classes `class_1..` with one quota for all.
pub fn manifest(name: &str, classes: usize, quota: usize) -> DatasetManifest {
    DatasetManifest::uniform(name, (1..=classes).map(|k| format!("class_{k}")).collect(), quota)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_class_present_and_deterministic() {
        let spec = BlobSpec::default();
        let (cube, labels) = blobs(&spec).unwrap();
        assert_eq!((cube.height(), cube.width(), cube.bands()), (48, 48, 10));
        for k in 1..=4u16 {
            let n = labels.labels().iter().filter(|&&l| l == k).count();
            assert!(n > 48 * 48 / 10, "class {k} has {n} pixels");
        }
        assert_eq!(blobs(&spec).unwrap(), (cube, labels));
    }

    #[test]
    fn class_means_are_separated() {
        let spec = BlobSpec { height: 60, width: 60, sigma: 0.01, ..Default::default() };
        let (cube, labels) = blobs(&spec).unwrap();
        let mut sums = vec![vec![0.0f64; spec.bands]; spec.classes];
        let mut counts = vec![0usize; spec.classes];
        for p in 0..cube.pixels() {
            let k = usize::from(labels.get(p)) - 1;
            counts[k] += 1;
            for (s, &v) in sums[k].iter_mut().zip(cube.spectrum(p)) {
                *s += f64::from(v);
            }
        }
        let means: Vec<Vec<f64>> = sums.iter().zip(&counts).map(|(s, &n)| s.iter().map(|v| v / n as f64).collect()).collect();
        for a in 0..spec.classes {
            for b in (a + 1)..spec.classes {
                let d: f64 = means[a].iter().zip(&means[b]).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
                assert!((d - 3.0 * 0.01).abs() < 0.005, "{d}");
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(blobs(&BlobSpec { classes: 11, ..Default::default() }).is_err());
        assert!(blobs(&BlobSpec { sigma: 0.0, ..Default::default() }).is_err());
    }
}
