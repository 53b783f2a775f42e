use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{GeometryError, RigidTransform, Vec3};

/// Image-plane coordinate in pixels. Pixel `(i, j)` covers `[i, i+1) x [j, j+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    /// Integer index of the pixel containing this coordinate.
    pub fn index(&self) -> (i64, i64) {
        (libm::floor(self.u) as i64, libm::floor(self.v) as i64)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CameraError {
    #[error("focal lengths must be positive (fx={fx}, fy={fy})")]
    Focal { fx: f64, fy: f64 },
    #[error("principal point ({cx}, {cy}) outside the {width}x{height} image")]
    PrincipalPoint {
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
    },
    #[error("bad extrinsics: {0}")]
    Extrinsics(#[from] GeometryError),
}

/// Pinhole camera with its calibrated pose in the robot base frame.
///
/// The camera frame has x right, y down and z along the optical axis;
/// `base_from_camera` maps camera-frame points into the base frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraCalibration", into = "CameraCalibration")]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub base_from_camera: RigidTransform,
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        base_from_camera: RigidTransform,
    ) -> Result<Self, CameraError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            base_from_camera,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()) {
            return Err(CameraError::Focal {
                fx: self.fx,
                fy: self.fy,
            });
        }
        if !(self.cx >= 0.0
            && self.cx < f64::from(self.width)
            && self.cy >= 0.0
            && self.cy < f64::from(self.height))
        {
            return Err(CameraError::PrincipalPoint {
                cx: self.cx,
                cy: self.cy,
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    pub fn contains(&self, pixel: Pixel) -> bool {
        pixel.u >= 0.0
            && pixel.v >= 0.0
            && pixel.u < f64::from(self.width)
            && pixel.v < f64::from(self.height)
    }

    /// Position of the optical centre in the base frame.
    pub fn origin(&self) -> Vec3 {
        *self.base_from_camera.translation()
    }

    /// Base-frame ray direction through `pixel`, scaled so its camera-frame z is 1.
    pub fn ray(&self, pixel: Pixel) -> Vec3 {
        let dir = Vec3::new(
            (pixel.u - self.cx) / self.fx,
            (pixel.v - self.cy) / self.fy,
            1.0,
        );
        self.base_from_camera.rotate(&dir)
    }

    /// Forward projection of a base-frame point; `None` behind the camera.
    pub fn project(&self, point: &Vec3) -> Option<(Pixel, f64)> {
        let p = self.base_from_camera.apply_inverse(point);
        if p.z <= 0.0 {
            return None;
        }
        Some((
            Pixel::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy),
            p.z,
        ))
    }
}

/// Calibration file layout: intrinsics plus row-major rotation and translation
/// of `base_from_camera`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraCalibration {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl TryFrom<CameraCalibration> for CameraModel {
    type Error = CameraError;

    fn try_from(c: CameraCalibration) -> Result<Self, Self::Error> {
        let extrinsics = RigidTransform::from_row_major(c.rotation, c.translation)?;
        CameraModel::new(c.fx, c.fy, c.cx, c.cy, c.width, c.height, extrinsics)
    }
}

impl From<CameraModel> for CameraCalibration {
    fn from(c: CameraModel) -> Self {
        let t = c.base_from_camera.translation();
        CameraCalibration {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            rotation: c.base_from_camera.rotation_row_major(),
            translation: [t.x, t.y, t.z],
        }
    }
}
