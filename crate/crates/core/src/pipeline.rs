//! Cube → superpixel graph → training → pixel-level evaluation.

use crate::data::{sample_split, DatasetManifest, HsiCube, LabelMap, SplitSpec};
use crate::error::{Error, Result};
use crate::graph::{spatial_neighbors, SuperGraph, DEFAULT_GAMMA};
use crate::metrics::{confusion, ConfusionMatrix, MetricsReport};
use crate::models::{check_params, Checkpoint, ModelConfig};
use crate::superpixel::{node_features, node_labels, slic_segment, Segmentation, SlicParams};
use crate::tensor::ParamStore;
use crate::trainer::{predict, train, TrainConfig, TrainOutcome, TrainRecord, ValidationSet};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphConfig {
    pub slic: SlicParams,
    pub gamma: f64,
}

impl GraphConfig {
    pub fn for_scene(cube: &HsiCube, classes: usize) -> Self {
        Self {
            slic: SlicParams::for_scene(cube.height(), cube.width(), classes),
            gamma: DEFAULT_GAMMA,
        }
    }
}

/// Per-band min-max rescaled copy of a cube.
pub fn normalized_cube(cube: &HsiCube) -> Result<HsiCube> {
    let data = cube.min_max_normalized().into_iter().map(|v| v as f32).collect();
    HsiCube::new(cube.height(), cube.width(), cube.bands(), data)
}

/// Everything derived from the inputs before training.
#[derive(Clone, Debug)]
pub struct Scene {
    pub segmentation: Segmentation,
    pub split: SplitSpec,
    pub graph: SuperGraph,
    pub classes: usize,
}

impl Scene {
    pub fn validation_set(&self) -> ValidationSet {
        let a = self.segmentation.assignment();
        let (nodes, classes) = self.split.validation_pixels().map(|(p, k)| (a[p], k)).unzip();
        ValidationSet { nodes, classes }
    }
}

pub fn build_scene(
    cube: &HsiCube,
    labels: &LabelMap,
    manifest: &DatasetManifest,
    split_seed: u64,
    config: &GraphConfig,
) -> Result<Scene> {
    if !labels.matches(cube) {
        return Err(Error::Contract(format!(
            "label map is {}×{}, cube is {}×{}",
            labels.height(),
            labels.width(),
            cube.height(),
            cube.width()
        )));
    }
    if let Some(b) = manifest.bands {
        if b != cube.bands() {
            return Err(Error::Config(format!("manifest expects {b} bands, cube has {}", cube.bands())));
        }
    }
    let split = sample_split(labels, manifest, split_seed)?;
    let segmentation = slic_segment(cube, &config.slic)?;
    let features = node_features(&normalized_cube(cube)?, &segmentation)?;
    let neighbors = spatial_neighbors(&segmentation);
    let node_labels = node_labels(labels, &segmentation, &split)?;
    let graph = SuperGraph::new(features, neighbors, config.gamma, node_labels)?;
    Ok(Scene {
        segmentation,
        split,
        graph,
        classes: manifest.class_count(),
    })
}

pub fn train_scene(scene: &Scene, config: &TrainConfig, on_record: impl FnMut(&TrainRecord)) -> Result<TrainOutcome> {
    let val = scene.validation_set();
    train(&scene.graph, scene.classes, config, Some(&val), on_record)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub report: MetricsReport,
    /// Predicted class of every pixel.
    pub pixel_map: Vec<u16>,
}

/// Predicts every pixel and scores the split's test pixels.
pub fn evaluate(scene: &Scene, labels: &LabelMap, params: &ParamStore, model: &ModelConfig) -> Result<Evaluation> {
    check_params(params, scene.graph.dims(), scene.classes, model)?;
    let pred = predict(&scene.graph, params, model)?;
    let pixel_map = pred.pixel_map(scene.segmentation.assignment());
    let confusion = confusion(&pixel_map, labels.labels(), &scene.split.test, scene.classes)?;
    let report = MetricsReport::from_confusion(&confusion)?;
    Ok(Evaluation {
        confusion,
        report,
        pixel_map,
    })
}

/// Settings needed to rebuild the scene and model at evaluation time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunMeta {
    pub seed: u64,
    pub graph: GraphConfig,
    pub model: ModelConfig,
    pub classes: usize,
    pub bands: usize,
}

impl RunMeta {
    pub fn to_checkpoint(&self, params: ParamStore) -> Checkpoint {
        let mut ck = Checkpoint::new(params);
        let entries = [
            ("seed", self.seed as f64),
            ("slic_n_target", self.graph.slic.n_target as f64),
            ("slic_compactness", self.graph.slic.compactness),
            ("slic_iters", self.graph.slic.iters as f64),
            ("gamma", self.graph.gamma),
            ("hidden", self.model.hidden as f64),
            ("levels", self.model.levels as f64),
            ("lambda_local", self.model.lambda_local),
            ("classes", self.classes as f64),
            ("bands", self.bands as f64),
        ];
        for (k, v) in entries {
            ck.meta.insert(k.to_string(), v);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let int = |k: &str| -> Result<usize> {
            let v = ck.meta(k)?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Format(format!("checkpoint field {k} is not a count: {v}")));
            }
            Ok(v as usize)
        };
        Ok(Self {
            seed: int("seed")? as u64,
            graph: GraphConfig {
                slic: SlicParams {
                    n_target: int("slic_n_target")?,
                    compactness: ck.meta("slic_compactness")?,
                    iters: int("slic_iters")?,
                },
                gamma: ck.meta("gamma")?,
            },
            model: ModelConfig {
                hidden: int("hidden")?,
                levels: int("levels")?,
                lambda_local: ck.meta("lambda_local")?,
            },
            classes: int("classes")?,
            bands: int("bands")?,
        })
    }
}
