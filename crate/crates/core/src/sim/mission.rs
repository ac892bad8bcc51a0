//! Mission definition: a sequence of keyframe poses along a survey track.

use crate::geometry::PlanarPose;
use serde::{Deserialize, Serialize};
use std::path::Path;

use super::SimError;

/// A survey mission: keyframe poses at which sonar pairs are captured.
///
/// Poses are expected to sit roughly `keyframe_spacing` meters apart along
/// the track; large gaps usually indicate a malformed file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mission {
    pub keyframe_spacing: f64,
    pub poses: Vec<PlanarPose>,
}

impl Mission {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.keyframe_spacing <= 0.0 {
            return Err(SimError::InvalidMission(
                "keyframe_spacing must be positive".into(),
            ));
        }
        if self.poses.is_empty() {
            return Err(SimError::InvalidMission("mission has no poses".into()));
        }
        for (i, pair) in self.poses.windows(2).enumerate() {
            let d = ((pair[1].x - pair[0].x).powi(2) + (pair[1].y - pair[0].y).powi(2)).sqrt();
            if d > 2.0 * self.keyframe_spacing {
                return Err(SimError::InvalidMission(format!(
                    "poses {i} and {} are {d:.2} m apart, more than twice the \
                     declared spacing of {} m",
                    i + 1,
                    self.keyframe_spacing
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Mission, SimError> {
        let text = std::fs::read_to_string(path)?;
        let mission: Mission = serde_json::from_str(&text)?;
        mission.validate()?;
        Ok(mission)
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Build a straight-line lawnmower-style leg along +x at constant y,
    /// heading fixed so the sonar looks broadside at the structures.
    pub fn straight_leg(
        start: (f64, f64),
        heading: f64,
        depth: f64,
        spacing: f64,
        count: usize,
    ) -> Mission {
        let poses = (0..count)
            .map(|i| PlanarPose::new(start.0 + i as f64 * spacing, start.1, heading, depth))
            .collect();
        Mission {
            keyframe_spacing: spacing,
            poses,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_leg_has_uniform_spacing() {
        let m = Mission::straight_leg((0.0, 0.0), std::f64::consts::FRAC_PI_2, -1.5, 4.0, 20);
        assert_eq!(m.poses.len(), 20);
        m.validate().unwrap();
        for pair in m.poses.windows(2) {
            let d = ((pair[1].x - pair[0].x).powi(2) + (pair[1].y - pair[0].y).powi(2)).sqrt();
            assert!((d - 4.0).abs() < 1e-12);
        }
    }

    #[test]
    fn validate_rejects_oversized_gap() {
        let mut m = Mission::straight_leg((0.0, 0.0), 0.0, -1.5, 2.0, 5);
        m.poses[4].x = 100.0;
        assert!(matches!(m.validate(), Err(SimError::InvalidMission(_))));
    }

    #[test]
    fn json_round_trip_preserves_poses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mission.json");
        let m = Mission::straight_leg((1.0, -2.0), 0.3, -1.5, 4.0, 3);
        m.save(&path).unwrap();
        let back = Mission::load(&path).unwrap();
        assert_eq!(back.poses.len(), 3);
        assert!((back.poses[2].x - m.poses[2].x).abs() < 1e-12);
        assert!((back.keyframe_spacing - 4.0).abs() < 1e-12);
    }
}
