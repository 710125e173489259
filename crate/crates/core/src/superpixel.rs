//! SLIC superpixels over a hyperspectral cube, plus per-superpixel features
//! and labels.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::data::{HsiCube, LabelMap, SplitSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_COMPACTNESS: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlicParams {
    pub n_target: usize,
    /// Weight of the spatial term relative to the spectral term.
    pub compactness: f64,
    pub iters: usize,
}

impl SlicParams {
    /// `max(40·classes, H·W/400)` superpixels, compactness 0.3, 10 iterations.
    pub fn for_scene(height: usize, width: usize, classes: usize) -> Self {
        Self {
            n_target: (classes * 40).max(height * width / 400).min(height * width),
            compactness: DEFAULT_COMPACTNESS,
            iters: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelCenter {
    pub row: f64,
    pub col: f64,
    /// Mean min-max normalized spectrum.
    pub spectrum: Vec<f64>,
    pub size: usize,
}

/// Partition of the image into `n` 4-connected regions with ids `0..n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    height: usize,
    width: usize,
    assignment: Vec<usize>,
    centers: Vec<SuperpixelCenter>,
}

impl Segmentation {
    /// Builds a segmentation from a raw assignment, relabeling ids to
    /// `0..n` in raster order of first appearance.
    pub fn from_assignment(height: usize, width: usize, assignment: &[usize], spectra: &[f64], bands: usize) -> Result<Self> {
        if assignment.len() != height * width || spectra.len() != height * width * bands {
            return Err(Error::shape("segmentation", "assignment or spectra length mismatch"));
        }
        let mut remap = std::collections::HashMap::new();
        let ids: Vec<usize> = assignment
            .iter()
            .map(|&a| {
                let next = remap.len();
                *remap.entry(a).or_insert(next)
            })
            .collect();
        let n = remap.len();
        let mut centers = vec![
            SuperpixelCenter {
                row: 0.0,
                col: 0.0,
                spectrum: vec![0.0; bands],
                size: 0,
            };
            n
        ];
        for (p, &id) in ids.iter().enumerate() {
            let c = &mut centers[id];
            c.row += (p / width) as f64;
            c.col += (p % width) as f64;
            c.size += 1;
            for (s, v) in c.spectrum.iter_mut().zip(&spectra[p * bands..(p + 1) * bands]) {
                *s += v;
            }
        }
        for c in &mut centers {
            let k = c.size as f64;
            c.row /= k;
            c.col /= k;
            c.spectrum.iter_mut().for_each(|s| *s /= k);
        }
        Ok(Self {
            height,
            width,
            assignment: ids,
            centers,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Superpixel count.
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn centers(&self) -> &[SuperpixelCenter] {
        &self.centers
    }

    /// Pixel count of every superpixel.
    pub fn sizes(&self) -> Vec<usize> {
        self.centers.iter().map(|c| c.size).collect()
    }

    /// Assignment encoded as an HSIL map (ids stored as-is, class count = n).
    pub fn to_label_map(&self) -> Result<LabelMap> {
        let n = u16::try_from(self.len())
            .map_err(|_| Error::Format(format!("{} superpixels do not fit in u16", self.len())))?;
        let ids = self.assignment.iter().map(|&a| a as u16).collect();
        LabelMap::new(self.height, self.width, n, ids)
    }
}

/// SLIC: local k-means in joint (spectral, spatial) space with distance
/// `sqrt(d_spec² + (m/S)²·d_xy²)`, `S = sqrt(H·W / n_target)`, on the
/// per-band min-max normalized cube, followed by a connectivity pass that
/// merges stray fragments into their most-shared neighbor.
pub fn slic_segment(cube: &HsiCube, params: &SlicParams) -> Result<Segmentation> {
    let (h, w, b) = (cube.height(), cube.width(), cube.bands());
    let pixels = h * w;
    if params.n_target < 2 {
        return Err(Error::Param(format!("n_target must be >= 2, got {}", params.n_target)));
    }
    if params.n_target > pixels {
        return Err(Error::Param(format!(
            "n_target {} exceeds pixel count {pixels}",
            params.n_target
        )));
    }
    if params.iters == 0 {
        return Err(Error::Param("iters must be >= 1".into()));
    }
    if !(params.compactness >= 0.0) {
        return Err(Error::Param("compactness must be non-negative".into()));
    }
    let data = cube.min_max_normalized();
    let s = (pixels as f64 / params.n_target as f64).sqrt();
    let spatial_w = (params.compactness / s).powi(2);

    let ny = ((h as f64 / s).round() as usize).clamp(1, h);
    let nx = ((w as f64 / s).round() as usize).clamp(1, w);
    let (step_y, step_x) = (h as f64 / ny as f64, w as f64 / nx as f64);
    let mut centers: Vec<(f64, f64, Vec<f64>)> = Vec::with_capacity(ny * nx);
    for i in 0..ny {
        for j in 0..nx {
            let cy = (i as f64 + 0.5) * step_y;
            let cx = (j as f64 + 0.5) * step_x;
            let p = (cy as usize).min(h - 1) * w + (cx as usize).min(w - 1);
            centers.push((cy, cx, data[p * b..(p + 1) * b].to_vec()));
        }
    }

    let mut assignment = vec![0usize; pixels];
    for _ in 0..params.iters {
        let grid = CenterGrid::new(&centers, s, h, w);
        assignment
            .par_chunks_mut(w)
            .enumerate()
            .for_each(|(y, row)| {
                for (x, slot) in row.iter_mut().enumerate() {
                    let p = y * w + x;
                    let spec = &data[p * b..(p + 1) * b];
                    let dist = |k: usize| {
                        let (cy, cx, cs) = &centers[k];
                        let ds: f64 = spec.iter().zip(cs).map(|(a, c)| (a - c) * (a - c)).sum();
                        let dy = y as f64 - cy;
                        let dx = x as f64 - cx;
                        ds + spatial_w * (dy * dy + dx * dx)
                    };
                    let mut best: Option<(f64, usize)> = None;
                    for k in grid.candidates(y as f64, x as f64, s, &centers) {
                        let d = dist(k);
                        if best.is_none_or(|(bd, bk)| d < bd || (d == bd && k < bk)) {
                            best = Some((d, k));
                        }
                    }
                    if best.is_none() {
                        for k in 0..centers.len() {
                            let d = dist(k);
                            if best.is_none_or(|(bd, _)| d < bd) {
                                best = Some((d, k));
                            }
                        }
                    }
                    *slot = best.map(|(_, k)| k).unwrap_or(0);
                }
            });

        let mut acc = vec![(0.0, 0.0, vec![0.0; b], 0usize); centers.len()];
        for (p, &k) in assignment.iter().enumerate() {
            let a = &mut acc[k];
            a.0 += (p / w) as f64;
            a.1 += (p % w) as f64;
            for (s, v) in a.2.iter_mut().zip(&data[p * b..(p + 1) * b]) {
                *s += v;
            }
            a.3 += 1;
        }
        for (c, (sy, sx, ss, n)) in centers.iter_mut().zip(acc) {
            if n == 0 {
                continue;
            }
            let n = n as f64;
            c.0 = sy / n;
            c.1 = sx / n;
            c.2 = ss.into_iter().map(|v| v / n).collect();
        }
    }

    let min_size = ((s * s / 4.0) as usize).max(1);
    let merged = enforce_connectivity(&assignment, h, w, min_size);
    Segmentation::from_assignment(h, w, &merged, &data, b)
}

/// Buckets centers by an `S`-sized grid so each pixel only inspects centers
/// whose `2S × 2S` window can contain it.
struct CenterGrid {
    rows: usize,
    cols: usize,
    cells: Vec<Vec<usize>>,
}

impl CenterGrid {
    fn new(centers: &[(f64, f64, Vec<f64>)], s: f64, h: usize, w: usize) -> Self {
        let rows = (h as f64 / s).ceil() as usize + 1;
        let cols = (w as f64 / s).ceil() as usize + 1;
        let mut cells = vec![Vec::new(); rows * cols];
        for (k, (cy, cx, _)) in centers.iter().enumerate() {
            let r = ((cy / s).floor().max(0.0) as usize).min(rows - 1);
            let c = ((cx / s).floor().max(0.0) as usize).min(cols - 1);
            cells[r * cols + c].push(k);
        }
        Self { rows, cols, cells }
    }

    fn candidates<'a>(
        &'a self,
        y: f64,
        x: f64,
        s: f64,
        centers: &'a [(f64, f64, Vec<f64>)],
    ) -> impl Iterator<Item = usize> + 'a {
        let r0 = (y / s).floor() as isize;
        let c0 = (x / s).floor() as isize;
        let mut ks: Vec<usize> = Vec::new();
        for dr in -1..=1 {
            for dc in -1..=1 {
                let (r, c) = (r0 + dr, c0 + dc);
                if r < 0 || c < 0 || r as usize >= self.rows || c as usize >= self.cols {
                    continue;
                }
                ks.extend(self.cells[r as usize * self.cols + c as usize].iter().copied());
            }
        }
        ks.sort_unstable();
        ks.into_iter().filter(move |&k| {
            let (cy, cx, _) = &centers[k];
            (y - cy).abs() <= s && (x - cx).abs() <= s
        })
    }
}

fn neighbors4(p: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    let (y, x) = (p / w, p % w);
    let up = (y > 0).then(|| p - w);
    let down = (y + 1 < h).then(|| p + w);
    let left = (x > 0).then(|| p - 1);
    let right = (x + 1 < w).then(|| p + 1);
    [up, down, left, right].into_iter().flatten()
}

/// Splits clusters into 4-connected components, keeps the largest component
/// of each cluster (if it has at least `min_size` pixels) and merges every
/// other component into the adjacent region sharing the most pixel edges
/// with it (ties to the smaller region id).
fn enforce_connectivity(assignment: &[usize], h: usize, w: usize, min_size: usize) -> Vec<usize> {
    let n = h * w;
    let mut comp = vec![usize::MAX; n];
    let mut comp_label = Vec::new();
    let mut comp_pixels: Vec<Vec<usize>> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comp_label.len();
        let label = assignment[start];
        comp[start] = id;
        queue.push_back(start);
        let mut members = Vec::new();
        while let Some(p) = queue.pop_front() {
            members.push(p);
            for q in neighbors4(p, h, w) {
                if comp[q] == usize::MAX && assignment[q] == label {
                    comp[q] = id;
                    queue.push_back(q);
                }
            }
        }
        comp_label.push(label);
        comp_pixels.push(members);
    }

    let n_comp = comp_label.len();
    let mut primary: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
    for id in 0..n_comp {
        let e = primary.entry(comp_label[id]).or_insert(id);
        if comp_pixels[id].len() > comp_pixels[*e].len() {
            *e = id;
        }
    }
    let orphan: Vec<bool> = (0..n_comp)
        .map(|id| primary[&comp_label[id]] != id || comp_pixels[id].len() < min_size)
        .collect();

    // union-find over components; the root owns the merged pixel list
    let mut parent: Vec<usize> = (0..n_comp).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut owned: Vec<Vec<usize>> = comp_pixels;
    for id in 0..n_comp {
        if !orphan[id] {
            continue;
        }
        let root = find(&mut parent, id);
        let mut counts: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
        for &p in &owned[root] {
            for q in neighbors4(p, h, w) {
                let r = find(&mut parent, comp[q]);
                if r != root {
                    *counts.entry(r).or_default() += 1;
                }
            }
        }
        let Some((&target, _)) = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        else {
            continue;
        };
        let moved = std::mem::take(&mut owned[root]);
        owned[target].extend(moved);
        parent[root] = target;
    }
    (0..n).map(|p| find(&mut parent, comp[p])).collect()
}

/// Mean spectrum of every superpixel (n×d).
pub fn node_features(cube: &HsiCube, seg: &Segmentation) -> Result<Tensor> {
    if cube.height() != seg.height() || cube.width() != seg.width() {
        return Err(Error::shape("node_features", "cube and segmentation differ in size"));
    }
    let (n, d) = (seg.len(), cube.bands());
    let mut x = Tensor::zeros(n, d);
    let mut counts = vec![0usize; n];
    for (p, &id) in seg.assignment().iter().enumerate() {
        counts[id] += 1;
        for (dst, &v) in x.row_mut(id).iter_mut().zip(cube.spectrum(p)) {
            *dst += f64::from(v);
        }
    }
    for (i, &k) in counts.iter().enumerate() {
        let k = k as f64;
        x.row_mut(i).iter_mut().for_each(|v| *v /= k);
    }
    Ok(x)
}

/// Labels of one superpixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeLabel {
    /// Most frequent annotated class among all its pixels; 0 if none.
    pub eval: u16,
    /// Majority class among its sampled training pixels, if any.
    pub train: Option<u16>,
}

impl NodeLabel {
    pub fn is_labeled(&self) -> bool {
        self.train.is_some()
    }
}

/// Majority vote with ties to the smallest class id; `None` when empty.
fn majority(counts: &[usize]) -> Option<u16> {
    let mut best: Option<(usize, usize)> = None;
    for (k, &c) in counts.iter().enumerate() {
        if c > 0 && best.is_none_or(|(_, bc)| c > bc) {
            best = Some((k, c));
        }
    }
    best.map(|(k, _)| k as u16)
}

pub fn node_labels(labels: &LabelMap, seg: &Segmentation, split: &SplitSpec) -> Result<Vec<NodeLabel>> {
    if labels.height() != seg.height() || labels.width() != seg.width() {
        return Err(Error::shape("node_labels", "label map and segmentation differ in size"));
    }
    let c = usize::from(labels.classes());
    let n = seg.len();
    let mut all = vec![vec![0usize; c + 1]; n];
    for (p, &id) in seg.assignment().iter().enumerate() {
        let l = labels.get(p);
        if l != 0 {
            all[id][usize::from(l)] += 1;
        }
    }
    let mut train = vec![vec![0usize; c + 1]; n];
    for (p, class) in split.train_pixels() {
        if usize::from(class) > c {
            return Err(Error::Split(format!("split class {class} exceeds label map classes {c}")));
        }
        train[seg.assignment()[p]][usize::from(class)] += 1;
    }
    Ok((0..n)
        .map(|i| NodeLabel {
            eval: majority(&all[i]).unwrap_or(0),
            train: majority(&train[i]),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cube_from(h: usize, w: usize, f: impl Fn(usize, usize) -> f32) -> HsiCube {
        let data = (0..h * w).map(|p| f(p / w, p % w)).collect();
        HsiCube::new(h, w, 1, data).unwrap()
    }

    fn is_partition_into_connected_regions(seg: &Segmentation) -> bool {
        let (h, w) = (seg.height(), seg.width());
        let a = seg.assignment();
        let n = seg.len();
        if a.iter().any(|&id| id >= n) {
            return false;
        }
        let mut seen = vec![false; h * w];
        let mut regions = 0;
        for s in 0..h * w {
            if seen[s] {
                continue;
            }
            regions += 1;
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(p) = stack.pop() {
                for q in neighbors4(p, h, w) {
                    if !seen[q] && a[q] == a[p] {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        regions == n
    }

    #[test]
    fn constant_cube_gives_compact_tiles() {
        let cube = cube_from(30, 30, |_, _| 0.5);
        let params = SlicParams {
            n_target: 9,
            compactness: 0.1,
            iters: 10,
        };
        let seg = slic_segment(&cube, &params).unwrap();
        assert!(is_partition_into_connected_regions(&seg));
        assert_eq!(seg.len(), 9);
        let s = (900.0f64 / 9.0).sqrt();
        for (p, &id) in seg.assignment().iter().enumerate() {
            let c = &seg.centers()[id];
            assert!(((p / 30) as f64 - c.row).abs() <= s + 1.0);
            assert!(((p % 30) as f64 - c.col).abs() <= s + 1.0);
        }
    }

    #[test]
    fn two_halves_are_never_mixed() {
        // boundary deliberately off the initial grid
        let cube = cube_from(24, 31, |_, x| if x < 13 { 0.0 } else { 1.0 });
        let params = SlicParams {
            n_target: 12,
            compactness: 0.05,
            iters: 10,
        };
        let seg = slic_segment(&cube, &params).unwrap();
        let mut side = vec![None; seg.len()];
        for (p, &id) in seg.assignment().iter().enumerate() {
            let left = p % 31 < 13;
            match side[id] {
                None => side[id] = Some(left),
                Some(s) => assert_eq!(s, left, "superpixel {id} straddles the boundary"),
            }
        }
    }

    #[test]
    fn deterministic() {
        let cube = cube_from(20, 20, |y, x| ((y * 7 + x * 13) % 11) as f32);
        let params = SlicParams {
            n_target: 16,
            compactness: 0.1,
            iters: 10,
        };
        let a = slic_segment(&cube, &params).unwrap();
        let b = slic_segment(&cube, &params).unwrap();
        assert_eq!(a, b);
        assert!(is_partition_into_connected_regions(&a));
    }

    #[test]
    fn parameter_errors() {
        let cube = cube_from(3, 3, |_, _| 0.0);
        let mk = |n, iters| SlicParams {
            n_target: n,
            compactness: 0.1,
            iters,
        };
        assert!(matches!(slic_segment(&cube, &mk(10, 1)), Err(Error::Param(_))));
        assert!(matches!(slic_segment(&cube, &mk(1, 1)), Err(Error::Param(_))));
        assert!(matches!(slic_segment(&cube, &mk(2, 0)), Err(Error::Param(_))));
    }

    #[test]
    fn connectivity_merges_fragments() {
        // cluster 1 appears as two separate fragments
        let a = vec![0, 1, 0, 0, 0, 0, 0, 1, 1];
        let out = enforce_connectivity(&a, 3, 3, 1);
        let seg = Segmentation::from_assignment(3, 3, &out, &[0.0; 9], 1).unwrap();
        assert!(is_partition_into_connected_regions(&seg));
        assert_eq!(seg.len(), 2);
    }

    #[test]
    fn features_are_means() {
        let cube = HsiCube::new(1, 3, 1, vec![1.0, 3.0, 5.0]).unwrap();
        let seg = Segmentation::from_assignment(1, 3, &[0, 0, 1], &[0.0; 3], 1).unwrap();
        let x = node_features(&cube, &seg).unwrap();
        assert_eq!(x.data(), &[2.0, 5.0]);
    }

    #[test]
    fn feature_mass_is_conserved() {
        let cube = HsiCube::new(
            4,
            5,
            3,
            (0..60).map(|i| ((i * 37) % 17) as f32 * 0.25).collect(),
        )
        .unwrap();
        let params = SlicParams {
            n_target: 5,
            compactness: 0.1,
            iters: 5,
        };
        let seg = slic_segment(&cube, &params).unwrap();
        let x = node_features(&cube, &seg).unwrap();
        let sizes = seg.sizes();
        for band in 0..3 {
            let direct: f64 = (0..20).map(|p| f64::from(cube.spectrum(p)[band])).sum();
            let via_nodes: f64 = (0..seg.len()).map(|i| sizes[i] as f64 * x.get(i, band)).sum();
            assert!((direct - via_nodes).abs() < 1e-9);
        }
    }

    #[test]
    fn majority_labels_with_ties() {
        let labels = LabelMap::new(1, 6, 2, vec![1, 1, 2, 1, 2, 0]).unwrap();
        let seg = Segmentation::from_assignment(1, 6, &[0, 0, 0, 1, 1, 2], &[0.0; 6], 1).unwrap();
        let split = SplitSpec {
            seed: 0,
            train: vec![vec![3], vec![4]],
            validation: vec![vec![], vec![]],
            test: vec![0, 1, 2],
        };
        let nl = node_labels(&labels, &seg, &split).unwrap();
        assert_eq!(nl[0], NodeLabel { eval: 1, train: None });
        assert_eq!(nl[1], NodeLabel { eval: 1, train: Some(1) });
        assert_eq!(nl[2], NodeLabel { eval: 0, train: None });
        assert!(!nl[2].is_labeled());
    }
}
