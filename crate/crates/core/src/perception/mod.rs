//! Scene and object perception.
//!
//! Scene perception asks a vision backend for a task-focused description.
//! Object perception turns the labels a sub-task needs into [`ObjectRecord`]s:
//! open-vocabulary detection (queried as `"every <label>"` so no instance is
//! missed), bounding-box centres, depth lookup, back-projection into the base
//! frame, and the best grasp within a neighbourhood of each centre. Several
//! instances of one label are numbered on the image and a vision backend picks
//! the one a descriptor refers to.

mod annotate;
mod camera;
mod grasp;

pub use annotate::{MarkableImage, NumeralMark, RgbImage, MARK_RADIUS, PPM_MEDIA_TYPE};
pub use camera::{CameraCalibration, CameraError, CameraModel, Pixel};
pub use grasp::{best_grasp_in_neighborhood, match_grasp, GraspCandidate, DEFAULT_GRASP_RADIUS};

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError, ImageAttachment, Schema, ViolationKind};
use crate::geometry::{wire, Vec3};
use crate::prompts::{self, PromptError, PromptLibrary};
use crate::text::{content_words, dedup_labels, normalize_label};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerceptionError {
    #[error("no labels requested")]
    NoLabels,
    #[error("detector unavailable: {0}")]
    DetectorUnavailable(String),
    #[error("detector found no `{0}`")]
    EmptyResult(String),
    #[error("every detection of `{0}` fell on a depth hole")]
    NoUsableDepth(String),
    #[error("invalid depth {depth} (hole in the depth map)")]
    BadDepth { depth: f64 },
    #[error("pixel ({u}, {v}) lies outside the image")]
    PixelOutOfBounds { u: f64, v: f64 },
    #[error("disambiguation needs at least two candidates, got {0}")]
    TooFewCandidates(usize),
    #[error("selected instance is outside 1..={count}")]
    IndexOutOfRange { count: u32 },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Axis-aligned box in image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max
    }

    pub fn within(&self, width: u32, height: u32) -> bool {
        self.is_valid()
            && self.x_min >= 0.0
            && self.y_min >= 0.0
            && self.x_max <= f64::from(width)
            && self.y_max <= f64::from(height)
    }

    /// Intersection with the image, `None` if nothing remains.
    pub fn clip(&self, width: u32, height: u32) -> Option<BBox> {
        let b = BBox::new(
            self.x_min.max(0.0),
            self.y_min.max(0.0),
            self.x_max.min(f64::from(width)),
            self.y_max.min(f64::from(height)),
        );
        b.is_valid().then_some(b)
    }

    pub fn translated(&self, du: f64, dv: f64) -> BBox {
        BBox::new(
            self.x_min + du,
            self.y_min + dv,
            self.x_max + du,
            self.y_max + dv,
        )
    }
}

pub fn bbox_center(bbox: &BBox) -> Pixel {
    Pixel::new(
        (bbox.x_min + bbox.x_max) / 2.0,
        (bbox.y_min + bbox.y_max) / 2.0,
    )
}

/// One detector hit before labelling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: String,
    pub bbox: BBox,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct AdapterError(pub String);

/// Open-vocabulary detector adapter.
pub trait Detector {
    fn detect(
        &mut self,
        image: &ImageAttachment,
        phrase: &str,
    ) -> Result<Vec<RawDetection>, AdapterError>;
}

/// Scene-wide grasp pose generator adapter.
pub trait GraspSource {
    fn grasps(&mut self, image: &ImageAttachment) -> Result<Vec<GraspCandidate>, AdapterError>;
}

/// Per-pixel depth along the optical axis, metres. Holes are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl DepthMap {
    pub fn filled(width: u32, height: u32, depth: f64) -> Self {
        Self {
            width,
            height,
            data: alloc::vec![depth; width as usize * height as usize],
        }
    }

    pub fn at(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, depth: f64) {
        let w = self.width as usize;
        self.data[y as usize * w + x as usize] = depth;
    }

    /// Depth of the pixel containing `pixel`.
    pub fn sample(&self, pixel: Pixel) -> Option<f64> {
        let (x, y) = pixel.index();
        (x >= 0 && y >= 0 && x < i64::from(self.width) && y < i64::from(self.height))
            .then(|| self.at(x as u32, y as u32))
    }
}

/// Image plus aligned depth, as handed to object perception.
pub struct SensorFrame<'a> {
    pub image: &'a dyn MarkableImage,
    pub depth: &'a DepthMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub label: String,
    /// 1-based, unique per label within an episode step.
    pub instance_index: u32,
    #[serde(with = "wire::vec3")]
    pub center: Vec3,
    pub grasp: GraspCandidate,
    /// True when no candidate was near and `grasp` is the synthesized top-down one.
    #[serde(default)]
    pub grasp_fallback: bool,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub text: String,
    /// Normalised, deduplicated labels.
    pub mentioned_objects: Vec<String>,
    pub source_prompt_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptionScore {
    pub recall: f64,
    pub relevance: f64,
}

/// Queries the vision backend for a task-focused scene description.
pub fn describe_scene(
    image: &ImageAttachment,
    task_text: &str,
    prompt_id: &str,
    prompts: &PromptLibrary,
    gateway: &Gateway,
) -> Result<SceneDescription, PerceptionError> {
    let request = prompts
        .request(prompt_id, Schema::Scene.id(), &[("task", task_text)])?
        .image(image.clone());
    let response = gateway.complete(&request)?;
    let payload = &response.parsed_payload;
    let text = payload["description"]
        .as_str()
        .unwrap_or_default()
        .to_string();
    let mentioned = payload["objects"]
        .as_array()
        .map(|a| dedup_labels(a.iter().filter_map(|v| v.as_str())))
        .unwrap_or_default();
    Ok(SceneDescription {
        text,
        mentioned_objects: mentioned,
        source_prompt_id: prompt_id.to_string(),
    })
}

fn label_in(label: &str, words: &[String]) -> bool {
    let label_words = content_words(label);
    !label_words.is_empty() && label_words.iter().all(|w| words.contains(w))
}

/// Recall of the true labels and task relevance of the mentioned ones.
///
/// `recall = |mentioned ∩ truth| / |truth|` and
/// `relevance = |mentioned ∩ task words| / max(1, |mentioned|)`. A mentioned
/// label counts as task-relevant when all of its content words occur in the
/// task. An empty truth set scores zero recall.
pub fn score_scene_description<S: AsRef<str>>(
    desc: &SceneDescription,
    ground_truth_labels: &[S],
    task_text: &str,
) -> DescriptionScore {
    let truth = dedup_labels(ground_truth_labels.iter().map(AsRef::as_ref));
    let mentioned = dedup_labels(desc.mentioned_objects.iter());
    let hit = truth.iter().filter(|t| mentioned.contains(t)).count();
    let recall = if truth.is_empty() {
        0.0
    } else {
        hit as f64 / truth.len() as f64
    };
    let task_words = content_words(task_text);
    let relevant = mentioned
        .iter()
        .filter(|m| label_in(m, &task_words))
        .count();
    DescriptionScore {
        recall,
        relevance: relevant as f64 / mentioned.len().max(1) as f64,
    }
}

/// Detector query phrase for `label`.
pub fn detection_phrase(label: &str) -> String {
    format!("every {label}")
}

/// Runs the detector once per label with the `"every <label>"` phrase.
///
/// Boxes are clipped to the image and tagged with the plain label. A label
/// with no surviving box yields [`PerceptionError::EmptyResult`].
pub fn detect_objects(
    image: &ImageAttachment,
    image_size: (u32, u32),
    labels: &[String],
    detector: &mut dyn Detector,
) -> Result<Vec<Detection>, PerceptionError> {
    if labels.is_empty() {
        return Err(PerceptionError::NoLabels);
    }
    let mut out = Vec::new();
    for label in labels {
        let raw = detector
            .detect(image, &detection_phrase(label))
            .map_err(|e| PerceptionError::DetectorUnavailable(e.0))?;
        let before = out.len();
        out.extend(raw.into_iter().filter_map(|d| {
            d.bbox
                .clip(image_size.0, image_size.1)
                .map(|bbox| Detection {
                    label: label.clone(),
                    bbox,
                    confidence: d.confidence.clamp(0.0, 1.0),
                })
        }));
        if out.len() == before {
            return Err(PerceptionError::EmptyResult(label.clone()));
        }
    }
    Ok(out)
}

/// Back-projects `pixel` at optical-axis depth `depth` into the base frame.
pub fn pixel_to_base(pixel: Pixel, depth: f64, cam: &CameraModel) -> Result<Vec3, PerceptionError> {
    if !(depth > 0.0 && depth.is_finite()) {
        return Err(PerceptionError::BadDepth { depth });
    }
    if !cam.contains(pixel) {
        return Err(PerceptionError::PixelOutOfBounds {
            u: pixel.u,
            v: pixel.v,
        });
    }
    let in_camera = Vec3::new(
        (pixel.u - cam.cx) * depth / cam.fx,
        (pixel.v - cam.cy) * depth / cam.fy,
        depth,
    );
    Ok(cam.base_from_camera.apply(&in_camera))
}

/// Numbers the candidates on a copy of the image and asks the vision backend
/// which one `descriptor` means. Returns the chosen `instance_index`.
pub fn disambiguate_instances(
    image: &dyn MarkableImage,
    candidates: &[ObjectRecord],
    descriptor: &str,
    prompts: &PromptLibrary,
    gateway: &Gateway,
) -> Result<u32, PerceptionError> {
    if candidates.len() < 2 {
        return Err(PerceptionError::TooFewCandidates(candidates.len()));
    }
    let marks: Vec<NumeralMark> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| NumeralMark {
            number: i as u32 + 1,
            at: bbox_center(&c.bbox),
        })
        .collect();
    let count = candidates.len() as u32;
    let count_text = format!("{count}");
    let request = prompts
        .request(
            prompts::SELECT_INSTANCE,
            Schema::Select { count }.id(),
            &[
                ("label", &candidates[0].label),
                ("descriptor", descriptor),
                ("count", &count_text),
            ],
        )?
        .image(image.with_marks(&marks));
    match gateway.complete(&request) {
        Ok(resp) => {
            let n = resp.parsed_payload.as_u64().unwrap_or(0) as usize;
            Ok(candidates[n - 1].instance_index)
        }
        Err(GatewayError::Format { violation, .. }) if violation.kind == ViolationKind::Range => {
            Err(PerceptionError::IndexOutOfRange { count })
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionConfig {
    pub grasp_radius: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            grasp_radius: DEFAULT_GRASP_RADIUS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "warning", rename_all = "snake_case")]
pub enum PerceptionWarning {
    /// Object skipped: no usable depth at its centre.
    DepthHole {
        label: String,
        pixel: Pixel,
        reason: String,
    },
    /// No grasp candidate near the object; top-down fallback used.
    FallbackGrasp { label: String, instance_index: u32 },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PerceptionOutput {
    pub records: Vec<ObjectRecord>,
    pub warnings: Vec<PerceptionWarning>,
    /// Detector phrases in query order.
    pub queries: Vec<String>,
}

/// Backends and adapters used by [`perceive_objects`].
pub struct PerceptionAgents<'a> {
    pub detector: &'a mut dyn Detector,
    pub grasp_source: &'a mut dyn GraspSource,
    pub disambiguator: &'a Gateway,
    pub prompts: &'a PromptLibrary,
}

struct QueryLog<'a> {
    inner: &'a mut dyn Detector,
    queries: Vec<String>,
}

impl Detector for QueryLog<'_> {
    fn detect(
        &mut self,
        image: &ImageAttachment,
        phrase: &str,
    ) -> Result<Vec<RawDetection>, AdapterError> {
        self.queries.push(phrase.to_string());
        self.inner.detect(image, phrase)
    }
}

/// Full object perception for the labels of one sub-task.
///
/// Records come out in request-label order, instances of one label by
/// ascending index. Instances are numbered left to right in the image
/// (ascending `u`, then `v`) after dropping those without usable depth. When
/// `descriptors` holds a phrase for a label with several instances, only the
/// instance the disambiguator picks is kept.
pub fn perceive_objects(
    frame: &SensorFrame<'_>,
    object_labels: &[String],
    cam: &CameraModel,
    agents: PerceptionAgents<'_>,
    descriptors: &BTreeMap<String, String>,
    config: &PerceptionConfig,
) -> Result<PerceptionOutput, PerceptionError> {
    let labels = dedup_labels(object_labels.iter());
    if labels.is_empty() {
        return Err(PerceptionError::NoLabels);
    }
    let image = frame.image.attachment();
    let grasps = agents
        .grasp_source
        .grasps(&image)
        .map_err(|e| PerceptionError::DetectorUnavailable(e.0))?;
    let mut log = QueryLog {
        inner: agents.detector,
        queries: Vec::new(),
    };
    let mut out = PerceptionOutput::default();
    for label in &labels {
        let mut detections = detect_objects(
            &image,
            (cam.width, cam.height),
            core::slice::from_ref(label),
            &mut log,
        )?;
        detections.sort_by(|a, b| {
            let (ca, cb) = (bbox_center(&a.bbox), bbox_center(&b.bbox));
            ca.u.total_cmp(&cb.u).then(ca.v.total_cmp(&cb.v))
        });
        let mut instances: Vec<ObjectRecord> = Vec::new();
        for det in detections {
            let pixel = bbox_center(&det.bbox);
            let depth = frame.depth.sample(pixel).unwrap_or(f64::NAN);
            let center = match pixel_to_base(pixel, depth, cam) {
                Ok(c) => c,
                Err(e) => {
                    out.warnings.push(PerceptionWarning::DepthHole {
                        label: label.clone(),
                        pixel,
                        reason: e.to_string(),
                    });
                    continue;
                }
            };
            let instance_index = instances.len() as u32 + 1;
            let best = best_grasp_in_neighborhood(&center, &grasps, config.grasp_radius);
            let grasp = match_grasp(&center, &grasps, config.grasp_radius);
            if best.is_none() {
                out.warnings.push(PerceptionWarning::FallbackGrasp {
                    label: label.clone(),
                    instance_index,
                });
            }
            instances.push(ObjectRecord {
                label: label.clone(),
                instance_index,
                center,
                grasp,
                grasp_fallback: best.is_none(),
                bbox: det.bbox,
            });
        }
        // Dropping a label entirely would shift every later object index.
        if instances.is_empty() {
            return Err(PerceptionError::NoUsableDepth(label.clone()));
        }
        if instances.len() >= 2 {
            if let Some(descriptor) = descriptors.get(label) {
                let chosen = disambiguate_instances(
                    frame.image,
                    &instances,
                    descriptor,
                    agents.prompts,
                    agents.disambiguator,
                )?;
                instances.retain(|r| r.instance_index == chosen);
            }
        }
        out.records.extend(instances);
    }
    out.queries = log.queries;
    Ok(out)
}

/// Normalised descriptor map as produced by keyword extraction.
pub fn normalize_descriptors(descriptors: &BTreeMap<String, String>) -> BTreeMap<String, String> {
    descriptors
        .iter()
        .map(|(k, v)| (normalize_label(k), v.trim().to_string()))
        .collect()
}
