//! Analytic depth rendering and ground-truth sensor stand-ins.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{mix_seed, SimObject, WorldState};
use crate::gateway::ImageAttachment;
use crate::geometry::{top_down, yaw, Vec3};
use crate::perception::{
    AdapterError, BBox, CameraModel, DepthMap, Detector, GraspCandidate, GraspSource,
    MarkableImage, NumeralMark, RawDetection,
};
use crate::text::normalize_label;

pub const SIMFRAME_MEDIA_TYPE: &str = "application/vnd.maniagent.simframe+json";

/// Confidence reported by the oracle detector.
const ORACLE_CONFIDENCE: f64 = 0.9;

/// Distance of decoy grasps from the true one, metres.
const DECOY_DISTANCE: f64 = 0.12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Standard deviation of detection-centre jitter, metres at the object's depth.
    pub center_jitter_sigma_m: f64,
    /// Probability that a detection is missing.
    pub drop_prob: f64,
    /// Per-pixel probability of an invalid depth reading.
    pub depth_hole_prob: f64,
}

impl NoiseSpec {
    pub fn is_noiseless(&self) -> bool {
        self.center_jitter_sigma_m == 0.0 && self.drop_prob == 0.0 && self.depth_hole_prob == 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub width: u32,
    pub height: u32,
    pub depth: DepthMap,
    /// Per pixel: 0 for background, `i + 1` for object `i`.
    pub silhouette: Vec<u16>,
}

impl Observation {
    pub fn object_at(&self, x: u32, y: u32) -> Option<usize> {
        match self.silhouette[y as usize * self.width as usize + x as usize] {
            0 => None,
            k => Some(usize::from(k) - 1),
        }
    }

    /// Hex SHA-256 of the run-length encoded silhouette.
    pub fn silhouette_digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.width.to_le_bytes());
        h.update(self.height.to_le_bytes());
        let mut iter = self.silhouette.iter();
        if let Some(&first) = iter.next() {
            let (mut cur, mut run) = (first, 1u32);
            for &s in iter {
                if s == cur {
                    run += 1;
                } else {
                    h.update(cur.to_le_bytes());
                    h.update(run.to_le_bytes());
                    cur = s;
                    run = 1;
                }
            }
            h.update(cur.to_le_bytes());
            h.update(run.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Knocks out depth pixels at random; holes read as NaN.
    pub fn add_depth_holes(&mut self, prob: f64, seed: u64) {
        if prob <= 0.0 {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for d in &mut self.depth.data {
            if rng.random::<f64>() < prob {
                *d = f64::NAN;
            }
        }
    }
}

/// A box prepared for ray casting: camera origin in box coordinates and the
/// map from normalized image coordinates `(a, b, 1)` to box-frame directions.
struct BoxCaster {
    origin: [f64; 3],
    m: [[f64; 3]; 3],
    extent: [f64; 3],
}

impl BoxCaster {
    fn new(obj: &SimObject, cam: &CameraModel) -> Self {
        let inv = obj.orientation.inverse().to_rotation_matrix();
        let o = inv * (cam.origin() - obj.position);
        let mm = inv.matrix() * cam.base_from_camera.rotation();
        let mut m = [[0.0; 3]; 3];
        for (r, row) in m.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = mm[(r, c)];
            }
        }
        Self {
            origin: [o.x, o.y, o.z],
            m,
            extent: [obj.extent.x, obj.extent.y, obj.extent.z],
        }
    }

    /// Entry distance of the ray through `(a, b)`, if it hits in front of the camera.
    fn cast(&self, a: f64, b: f64) -> Option<f64> {
        let (mut t_min, mut t_max) = (f64::NEG_INFINITY, f64::INFINITY);
        for k in 0..3 {
            let d = self.m[k][0] * a + self.m[k][1] * b + self.m[k][2];
            let (o, e) = (self.origin[k], self.extent[k]);
            if libm::fabs(d) < 1e-15 {
                if libm::fabs(o) > e {
                    return None;
                }
                continue;
            }
            let t1 = (-e - o) / d;
            let t2 = (e - o) / d;
            t_min = t_min.max(t1.min(t2));
            t_max = t_max.min(t1.max(t2));
        }
        (t_min <= t_max && t_min > 0.0).then_some(t_min)
    }
}

fn box_corners(obj: &SimObject) -> [Vec3; 8] {
    let mut out = [Vec3::zeros(); 8];
    for (i, c) in out.iter_mut().enumerate() {
        let s = |bit: usize| if i & (1 << bit) == 0 { -1.0 } else { 1.0 };
        let local = Vec3::new(
            s(0) * obj.extent.x,
            s(1) * obj.extent.y,
            s(2) * obj.extent.z,
        );
        *c = obj.position + obj.orientation * local;
    }
    out
}

/// Pixel index window covering the projection of `obj`; the whole image if any corner is behind the camera.
fn pixel_window(obj: &SimObject, cam: &CameraModel) -> (u32, u32, u32, u32) {
    let (mut u0, mut v0, mut u1, mut v1) = (
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for c in box_corners(obj) {
        match cam.project(&c) {
            Some((p, _)) => {
                u0 = u0.min(p.u);
                v0 = v0.min(p.v);
                u1 = u1.max(p.u);
                v1 = v1.max(p.v);
            }
            None => return (0, 0, cam.width, cam.height),
        }
    }
    let clamp = |x: f64, hi: u32| libm::floor(x).clamp(0.0, f64::from(hi)) as u32;
    (
        clamp(u0 - 1.0, cam.width),
        clamp(v0 - 1.0, cam.height),
        clamp(u1 + 2.0, cam.width),
        clamp(v1 + 2.0, cam.height),
    )
}

/// Depth along the optical axis and object index per pixel, sampled at pixel centres.
///
/// Boxes are intersected exactly; everything else is the table plane z = 0.
pub fn render_observation(world: &WorldState, cam: &CameraModel) -> Observation {
    let (w, h) = (cam.width, cam.height);
    let origin_z = cam.origin().z;
    let r = cam.base_from_camera.rotation();
    let (r20, r21, r22) = (r[(2, 0)], r[(2, 1)], r[(2, 2)]);
    // Normalized image coordinates of pixel centres.
    let a_of = |x: u32| (f64::from(x) + 0.5 - cam.cx) / cam.fx;
    let b_of = |y: u32| (f64::from(y) + 0.5 - cam.cy) / cam.fy;
    let mut depth = DepthMap::filled(w, h, f64::INFINITY);
    let mut silhouette = vec![0u16; w as usize * h as usize];
    for y in 0..h {
        let b = b_of(y);
        for x in 0..w {
            let dz = r20 * a_of(x) + r21 * b + r22;
            if dz < 0.0 {
                depth.data[y as usize * w as usize + x as usize] = -origin_z / dz;
            }
        }
    }
    for (i, obj) in world.objects.iter().enumerate() {
        let caster = BoxCaster::new(obj, cam);
        let (x0, y0, x1, y1) = pixel_window(obj, cam);
        for y in y0..y1 {
            let b = b_of(y);
            for x in x0..x1 {
                let k = y as usize * w as usize + x as usize;
                if let Some(t) = caster.cast(a_of(x), b) {
                    if t < depth.data[k] {
                        depth.data[k] = t;
                        silhouette[k] = (i + 1) as u16;
                    }
                }
            }
        }
    }
    Observation {
        width: w,
        height: h,
        depth,
        silhouette,
    }
}

/// Image stand-in handed to vision backends: the rendered silhouette's digest plus
/// the scene content an oracle needs, and any numeral marks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimFrame {
    pub width: u32,
    pub height: u32,
    pub silhouette_digest: String,
    pub objects: Vec<SimObject>,
    #[serde(default)]
    pub attached: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub marks: Vec<NumeralMark>,
}

impl SimFrame {
    pub fn decode(image: &ImageAttachment) -> Option<Self> {
        if image.media_type != SIMFRAME_MEDIA_TYPE {
            return None;
        }
        serde_json::from_slice(&image.data).ok()
    }

    fn encode(&self) -> ImageAttachment {
        let data = serde_json::to_vec(self).unwrap_or_default();
        ImageAttachment::new(SIMFRAME_MEDIA_TYPE, data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimImage {
    pub frame: SimFrame,
}

impl SimImage {
    pub fn new(world: &WorldState, observation: &Observation) -> Self {
        Self {
            frame: SimFrame {
                width: observation.width,
                height: observation.height,
                silhouette_digest: observation.silhouette_digest(),
                objects: world.objects.clone(),
                attached: world.attached_index(),
                marks: Vec::new(),
            },
        }
    }
}

impl MarkableImage for SimImage {
    fn attachment(&self) -> ImageAttachment {
        self.frame.encode()
    }

    fn with_marks(&self, marks: &[NumeralMark]) -> ImageAttachment {
        let mut frame = self.frame.clone();
        frame.marks = marks.to_vec();
        frame.encode()
    }
}

fn strip_phrase(phrase: &str) -> String {
    let p = normalize_label(phrase);
    match p.strip_prefix("every ") {
        Some(rest) => String::from(rest),
        None => p,
    }
}

/// Box around the projection of an object's top surface.
fn top_bbox(obj: &SimObject, cam: &CameraModel) -> Option<(BBox, f64)> {
    let fp = obj.footprint();
    let z = obj.top();
    let (mut u0, mut v0, mut u1, mut v1) = (
        f64::INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    );
    for (x, y) in [
        (fp.min[0], fp.min[1]),
        (fp.min[0], fp.max[1]),
        (fp.max[0], fp.min[1]),
        (fp.max[0], fp.max[1]),
    ] {
        let (p, _) = cam.project(&Vec3::new(x, y, z))?;
        u0 = u0.min(p.u);
        v0 = v0.min(p.v);
        u1 = u1.max(p.u);
        v1 = v1.max(p.v);
    }
    let (_, depth) = cam.project(&obj.top_center())?;
    Some((BBox::new(u0, v0, u1, v1), depth))
}

/// Ground-truth detector: one box per object matching `phrase`.
///
/// Noise is drawn from a generator seeded by the world seed, its step count and `call`.
pub fn oracle_detect(
    world: &WorldState,
    cam: &CameraModel,
    phrase: &str,
    noise: &NoiseSpec,
    call: u64,
) -> Vec<RawDetection> {
    let label = strip_phrase(phrase);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[world.rng_seed, world.step_count, call]));
    let mut out = Vec::new();
    for obj in world
        .objects
        .iter()
        .filter(|o| normalize_label(&o.label) == label)
    {
        let Some((bbox, depth)) = top_bbox(obj, cam) else {
            continue;
        };
        let (du, dv) = if noise.center_jitter_sigma_m > 0.0 {
            let su = noise.center_jitter_sigma_m * cam.fx / depth;
            let sv = noise.center_jitter_sigma_m * cam.fy / depth;
            let (nu, nv) = match (Normal::new(0.0, su), Normal::new(0.0, sv)) {
                (Ok(a), Ok(b)) => (a, b),
                _ => continue,
            };
            (nu.sample(&mut rng), nv.sample(&mut rng))
        } else {
            (0.0, 0.0)
        };
        if noise.drop_prob > 0.0 && rng.random::<f64>() < noise.drop_prob {
            continue;
        }
        out.push(RawDetection {
            bbox: bbox.translated(du, dv),
            confidence: ORACLE_CONFIDENCE,
        });
    }
    out
}

/// Ground-truth grasp generator.
///
/// Each graspable, unattached object gets a top-down grasp at its top centre
/// with a score in [0.5, 1) and two decoys 0.12 m away scoring below 0.5.
pub fn oracle_grasps(world: &WorldState, label_filter: Option<&str>) -> Vec<GraspCandidate> {
    let filter = label_filter.map(strip_phrase);
    let mut out = Vec::new();
    for (i, obj) in world.objects.iter().enumerate() {
        if !obj.graspable || world.attached_index() == Some(i) {
            continue;
        }
        if filter
            .as_ref()
            .is_some_and(|f| *f != normalize_label(&obj.label))
        {
            continue;
        }
        let mut rng =
            ChaCha8Rng::seed_from_u64(mix_seed(&[world.rng_seed, i as u64, 0x67_7261_7370]));
        let top = obj.top_center();
        let width = 2.0 * obj.extent.x.min(obj.extent.y);
        out.push(GraspCandidate {
            position: top,
            orientation: yaw(obj.yaw()) * top_down(),
            width,
            score: rng.random_range(0.5..1.0),
        });
        let phase = rng.random_range(0.0..core::f64::consts::TAU);
        for k in 0..2 {
            let a = phase + core::f64::consts::PI * f64::from(k);
            out.push(GraspCandidate {
                position: top
                    + Vec3::new(
                        DECOY_DISTANCE * libm::cos(a),
                        DECOY_DISTANCE * libm::sin(a),
                        0.0,
                    ),
                orientation: top_down(),
                width,
                score: rng.random_range(0.0..0.5),
            });
        }
    }
    out
}

/// Detector adapter over a simulated world; the harness refreshes `world` before each perception pass.
#[derive(Debug, Clone)]
pub struct SimDetector {
    pub camera: CameraModel,
    pub noise: NoiseSpec,
    pub world: WorldState,
    calls: u64,
    queries: Vec<String>,
}

impl SimDetector {
    pub fn new(camera: CameraModel, noise: NoiseSpec, world: WorldState) -> Self {
        Self {
            camera,
            noise,
            world,
            calls: 0,
            queries: Vec::new(),
        }
    }

    /// Every phrase received, in order.
    pub fn queries(&self) -> &[String] {
        &self.queries
    }
}

impl Detector for SimDetector {
    fn detect(
        &mut self,
        _image: &ImageAttachment,
        phrase: &str,
    ) -> Result<Vec<RawDetection>, AdapterError> {
        self.queries.push(String::from(phrase));
        self.calls += 1;
        Ok(oracle_detect(
            &self.world,
            &self.camera,
            phrase,
            &self.noise,
            self.calls,
        ))
    }
}

#[derive(Debug, Clone)]
pub struct SimGraspSource {
    pub world: WorldState,
}

impl GraspSource for SimGraspSource {
    fn grasps(&mut self, _image: &ImageAttachment) -> Result<Vec<GraspCandidate>, AdapterError> {
        Ok(oracle_grasps(&self.world, None))
    }
}
