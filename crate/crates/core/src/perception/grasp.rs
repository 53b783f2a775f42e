use serde::{Deserialize, Serialize};

use crate::geometry::{top_down, wire, Quat, Vec3};

/// Default neighbourhood radius for matching grasps to object centres, metres.
pub const DEFAULT_GRASP_RADIUS: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspCandidate {
    #[serde(with = "wire::vec3")]
    pub position: Vec3,
    #[serde(with = "wire::quat")]
    pub orientation: Quat,
    pub width: f64,
    pub score: f64,
}

impl GraspCandidate {
    /// Top-down grasp at `center` with zero score, used when no candidate is near.
    pub fn fallback(center: Vec3) -> Self {
        Self {
            position: center,
            orientation: top_down(),
            width: 0.0,
            score: 0.0,
        }
    }
}

/// Index of the best candidate within `radius` of `center`.
///
/// Highest score wins; ties go to the candidate closer to `center`, then to
/// the lower index. Candidates with non-finite score or position are ignored.
pub fn best_grasp_in_neighborhood(
    center: &Vec3,
    candidates: &[GraspCandidate],
    radius: f64,
) -> Option<usize> {
    let mut best: Option<(usize, f64, f64)> = None;
    for (i, c) in candidates.iter().enumerate() {
        let d = (c.position - center).norm();
        if !c.score.is_finite() || !d.is_finite() || d > radius {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, score, dist)) => c.score > score || (c.score == score && d < dist),
        };
        if better {
            best = Some((i, c.score, d));
        }
    }
    best.map(|(i, _, _)| i)
}

/// Grasp for an object centred at `center`, or the top-down fallback when the
/// neighbourhood is empty.
///
/// # Panics
///
/// If `radius` is not positive.
pub fn match_grasp(center: &Vec3, candidates: &[GraspCandidate], radius: f64) -> GraspCandidate {
    assert!(radius > 0.0, "grasp neighbourhood radius must be positive");
    match best_grasp_in_neighborhood(center, candidates, radius) {
        Some(i) => candidates[i].clone(),
        None => GraspCandidate::fallback(*center),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;

    fn at(x: f64, score: f64) -> GraspCandidate {
        GraspCandidate {
            position: Vec3::new(x, 0.0, 0.0),
            orientation: top_down(),
            width: 0.05,
            score,
        }
    }

    #[test]
    fn nearest_qualifying_beats_higher_outside() {
        let c = [at(0.02, 0.5), at(0.08, 0.9)];
        assert_eq!(match_grasp(&Vec3::zeros(), &c, 0.05), c[0]);
    }

    #[test]
    fn empty_neighborhood_falls_back() {
        let g = match_grasp(&Vec3::new(0.3, 0.1, 0.04), &[at(1.0, 1.0)], 0.05);
        assert_eq!(g, GraspCandidate::fallback(Vec3::new(0.3, 0.1, 0.04)));
        assert_eq!(g.score, 0.0);
        assert_eq!(g.orientation, top_down());
    }

    #[test]
    fn ties() {
        let c = [at(0.03, 0.7), at(-0.03, 0.7)];
        assert_eq!(
            best_grasp_in_neighborhood(&Vec3::zeros(), &c, 0.05),
            Some(0)
        );
        let c = [at(0.03, 0.7), at(0.01, 0.7)];
        assert_eq!(
            best_grasp_in_neighborhood(&Vec3::zeros(), &c, 0.05),
            Some(1)
        );
        let c: Vec<_> = [at(0.05, 0.1)].into();
        assert_eq!(
            best_grasp_in_neighborhood(&Vec3::zeros(), &c, 0.05),
            Some(0)
        );
    }
}
