use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Placement of an indenter relative to the gel centre.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactPose {
    pub dx_mm: f64,
    pub dy_mm: f64,
    /// Penetration command; negative presses deeper, zero just touches.
    pub dz_mm: f64,
    pub yaw_deg: f64,
}

impl ContactPose {
    pub fn centered(dz_mm: f64) -> Self {
        ContactPose {
            dx_mm: 0.0,
            dy_mm: 0.0,
            dz_mm,
            yaw_deg: 0.0,
        }
    }

    pub fn penetration_mm(&self) -> f64 {
        (-self.dz_mm).max(0.0)
    }

    /// In-plane offsets must stay on the gel, yaw in `[-180, 180)`.
    pub fn validate(&self, gel_size_mm: (f64, f64)) -> Result<()> {
        let (w, h) = gel_size_mm;
        let finite = [self.dx_mm, self.dy_mm, self.dz_mm, self.yaw_deg]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain(format!("non-finite pose {self:?}")));
        }
        if self.dx_mm.abs() > w / 2.0 || self.dy_mm.abs() > h / 2.0 {
            return Err(Error::Domain(format!(
                "offset ({}, {}) mm lies outside the {w}x{h} mm gel",
                self.dx_mm, self.dy_mm
            )));
        }
        if !(-180.0..180.0).contains(&self.yaw_deg) {
            return Err(Error::Domain(format!("yaw {} deg outside [-180, 180)", self.yaw_deg)));
        }
        Ok(())
    }
}

/// `count` values `start, start + step, ...`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisRange {
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

impl AxisRange {
    pub fn single(value: f64) -> Self {
        AxisRange {
            start: value,
            step: 0.0,
            count: 1,
        }
    }

    /// `count` evenly spaced values centred on zero, `step` apart.
    pub fn centered(step: f64, count: usize) -> Self {
        AxisRange {
            start: -step * (count.saturating_sub(1)) as f64 / 2.0,
            step,
            count,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.start + self.step * i as f64).collect()
    }
}

/// Cartesian grid of contact poses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseGridSpec {
    pub x_mm: AxisRange,
    pub y_mm: AxisRange,
    pub z_mm: AxisRange,
    pub yaw_deg: AxisRange,
}

impl PoseGridSpec {
    /// Braille fine-tuning collection: 3x3 offsets 5 mm apart, four
    /// presses, yaw in {0, +-45, +-90}. Press depth steps are scaled to the
    /// desk gel (`z_step_mm`).
    pub fn finetune(z_start_mm: f64, z_step_mm: f64) -> Self {
        PoseGridSpec {
            x_mm: AxisRange::centered(5.0, 3),
            y_mm: AxisRange::centered(5.0, 3),
            z_mm: AxisRange {
                start: z_start_mm,
                step: z_step_mm,
                count: 4,
            },
            yaw_deg: AxisRange {
                start: -90.0,
                step: 45.0,
                count: 5,
            },
        }
    }

    /// Braille reading collection: 3x3 offsets 3 mm apart, four presses,
    /// yaw from -25 to +25 deg in 5 deg steps.
    pub fn classifier(z_start_mm: f64, z_step_mm: f64) -> Self {
        PoseGridSpec {
            x_mm: AxisRange::centered(3.0, 3),
            y_mm: AxisRange::centered(3.0, 3),
            z_mm: AxisRange {
                start: z_start_mm,
                step: z_step_mm,
                count: 4,
            },
            yaw_deg: AxisRange {
                start: -25.0,
                step: 5.0,
                count: 11,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.x_mm.count * self.y_mm.count * self.z_mm.count * self.yaw_deg.count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Poses in `x`, `y`, `z`, `yaw` nesting order (yaw varies fastest).
pub fn pose_grid(spec: &PoseGridSpec) -> Result<Vec<ContactPose>> {
    let axes = [
        ("x", spec.x_mm),
        ("y", spec.y_mm),
        ("z", spec.z_mm),
        ("yaw", spec.yaw_deg),
    ];
    for (name, axis) in axes {
        if axis.count == 0 {
            return Err(Error::Config(format!("pose grid axis {name} is empty")));
        }
        if !(axis.start.is_finite() && axis.step.is_finite()) {
            return Err(Error::Config(format!("pose grid axis {name} is not finite")));
        }
    }
    let mut out = Vec::with_capacity(spec.len());
    for &x in &spec.x_mm.values() {
        for &y in &spec.y_mm.values() {
            for &z in &spec.z_mm.values() {
                for &yaw in &spec.yaw_deg.values() {
                    out.push(ContactPose {
                        dx_mm: x,
                        dy_mm: y,
                        dz_mm: z,
                        yaw_deg: yaw,
                    });
                }
            }
        }
    }
    Ok(out)
}
