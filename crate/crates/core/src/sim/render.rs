use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{DepthMap, Image, TactileImage};
use crate::scalar::Scalar;
use crate::sim::braille::braille_pattern;
use crate::sim::pose::ContactPose;
use crate::sim::sensor::SensorSpec;

/// Braille dot layout. Defaults are the standard 1.5 mm dots on a 2.5 mm
/// pitch, doubled to suit 2x2 cm printed objects.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrailleGeometry {
    pub dot_radius_mm: f64,
    pub dot_height_mm: f64,
    pub dot_pitch_mm: f64,
    /// Half the side of the square base plate carrying the dots.
    pub plate_half_mm: f64,
}

impl Default for BrailleGeometry {
    fn default() -> Self {
        BrailleGeometry {
            dot_radius_mm: 1.5,
            dot_height_mm: 1.0,
            dot_pitch_mm: 5.0,
            plate_half_mm: 10.0,
        }
    }
}

impl BrailleGeometry {
    /// Dot centres in the object frame (x right, y up), indexed by dot - 1.
    pub fn dot_centers(&self) -> [(f64, f64); 6] {
        let (h, p) = (self.dot_pitch_mm / 2.0, self.dot_pitch_mm);
        [(-h, p), (-h, 0.0), (-h, -p), (h, p), (h, 0.0), (h, -p)]
    }

    // Spherical cap through the rim at the base radius.
    fn cap_radius(&self) -> f64 {
        let (a, hd) = (self.dot_radius_mm, self.dot_height_mm);
        (a * a + hd * hd) / (2.0 * hd)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IndenterShape {
    Sphere { radius_mm: f64 },
    /// Cylindrical ridge of the given width; `angle_deg` orients its axis in
    /// the object frame.
    Edge { width_mm: f64, angle_deg: f64 },
    BrailleCell { mask: u8, geometry: BrailleGeometry },
}

impl IndenterShape {
    pub fn braille(ch: char) -> Result<Self> {
        Ok(IndenterShape::BrailleCell {
            mask: braille_pattern(ch)?,
            geometry: BrailleGeometry::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            IndenterShape::Sphere { radius_mm } => radius_mm > 0.0 && radius_mm.is_finite(),
            IndenterShape::Edge {
                width_mm,
                angle_deg,
            } => width_mm > 0.0 && width_mm.is_finite() && angle_deg.is_finite(),
            IndenterShape::BrailleCell { mask, geometry: g } => {
                if mask == 0 || mask >= 64 {
                    return Err(Error::Domain(format!("braille mask {mask:#b} is not a 6-bit cell")));
                }
                [g.dot_radius_mm, g.dot_height_mm, g.dot_pitch_mm, g.plate_half_mm]
                    .iter()
                    .all(|v| *v > 0.0 && v.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("indenter dimensions must be positive: {self:?}")))
        }
    }

    /// Height of the indenter surface above its lowest point, in the object
    /// frame; `None` where the indenter has no material.
    fn surface(&self, x: f64, y: f64) -> Option<f64> {
        match *self {
            IndenterShape::Sphere { radius_mm: r } => {
                let rho2 = x * x + y * y;
                (rho2 < r * r).then(|| r - (r * r - rho2).sqrt())
            }
            IndenterShape::Edge {
                width_mm,
                angle_deg,
            } => {
                let r = width_mm / 2.0;
                let (s, c) = angle_deg.to_radians().sin_cos();
                let u = -s * x + c * y;
                (u.abs() < r).then(|| r - (r * r - u * u).sqrt())
            }
            IndenterShape::BrailleCell { mask, geometry: g } => {
                if x.abs() > g.plate_half_mm || y.abs() > g.plate_half_mm {
                    return None;
                }
                let rc = g.cap_radius();
                let mut top = 0.0f64;
                for (i, &(cx, cy)) in g.dot_centers().iter().enumerate() {
                    if mask & (1 << i) == 0 {
                        continue;
                    }
                    let rho2 = (x - cx).powi(2) + (y - cy).powi(2);
                    if rho2 < g.dot_radius_mm * g.dot_radius_mm {
                        let h = g.dot_height_mm - rc + (rc * rc - rho2).sqrt();
                        top = top.max(h);
                    }
                }
                // measured downward from the highest dot tip
                Some(g.dot_height_mm - top)
            }
        }
    }
}

/// Gel penetration map for an indenter pressed in at `pose`.
pub fn render_depth<S: Scalar>(
    shape: &IndenterShape,
    pose: &ContactPose,
    sensor: &SensorSpec,
) -> Result<DepthMap<S>> {
    shape.validate()?;
    pose.validate(sensor.gel_size_mm())?;
    let (h, w) = sensor.resolution();
    let pen = pose.penetration_mm();
    let max = sensor.max_penetration_mm();
    let (s, c) = pose.yaw_deg.to_radians().sin_cos();
    let mut mm = Image::zeros(1, h, w);
    if pen > 0.0 {
        for row in 0..h {
            for col in 0..w {
                let (gx, gy) = sensor.pixel_center_mm(row, col);
                let (rx, ry) = (gx - pose.dx_mm, gy - pose.dy_mm);
                // rotate into the object frame
                let (ox, oy) = (c * rx + s * ry, -s * rx + c * ry);
                if let Some(depth_below_tip) = shape.surface(ox, oy) {
                    let d = (pen - depth_below_tip).clamp(0.0, max);
                    mm.set(0, row, col, S::of(d));
                }
            }
        }
    }
    DepthMap::new(mm, max)
}

/// Outward gel normal from central differences of the penetration map
/// (one-sided at the borders). The surface sits at height `-depth`.
pub fn surface_normals(depth: &Image<f64>, pitch_mm: (f64, f64)) -> Vec<[f64; 3]> {
    let (_, h, w) = depth.shape();
    let d = |r: usize, c: usize| depth.at(0, r, c);
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let (c0, c1) = (c.saturating_sub(1), (c + 1).min(w - 1));
            let (r0, r1) = (r.saturating_sub(1), (r + 1).min(h - 1));
            let ddx = if c1 > c0 {
                (d(r, c1) - d(r, c0)) / ((c1 - c0) as f64 * pitch_mm.0)
            } else {
                0.0
            };
            // rows grow downward, y grows upward
            let ddy = if r1 > r0 {
                (d(r0, c) - d(r1, c)) / ((r1 - r0) as f64 * pitch_mm.1)
            } else {
                0.0
            };
            let n = [ddx, ddy, 1.0];
            let len = (n[0] * n[0] + n[1] * n[1] + 1.0).sqrt();
            out.push([n[0] / len, n[1] / len, n[2] / len]);
        }
    }
    out
}

/// Phong response (ambient, diffuse, specular) of a surface patch with
/// normal `n`, viewed along +z.
pub fn phong_shade(sensor: &SensorSpec, n: [f64; 3]) -> [f64; 3] {
    let cfg = &sensor.config;
    let mut rgb = cfg.ambient;
    for light in &cfg.lights {
        let l = light.direction;
        let ndl = n[0] * l[0] + n[1] * l[1] + n[2] * l[2];
        let diffuse = cfg.diffuse * ndl.max(0.0);
        // view direction is +z, so only the z component of the reflection counts
        let rz = 2.0 * ndl * n[2] - l[2];
        let spec = if ndl > 0.0 && rz > 0.0 {
            cfg.specular * rz.powf(cfg.shininess)
        } else {
            0.0
        };
        for (ch, out) in rgb.iter_mut().enumerate() {
            *out += light.color[ch] * (diffuse + spec);
        }
    }
    rgb
}

/// Synthetic sensor image: the flat-gel background plus the change in
/// Phong response caused by the indentation, clamped to `[0, 1]`.
pub fn oracle_render<S: Scalar>(depth: &DepthMap<S>, sensor: &SensorSpec) -> Result<TactileImage<S>> {
    let (h, w) = sensor.resolution();
    if (depth.height(), depth.width()) != (h, w) {
        return Err(Error::ShapeMismatch {
            expected: (1, h, w),
            actual: (1, depth.height(), depth.width()),
        });
    }
    let mm: Image<f64> = depth.mm().cast();
    let normals = surface_normals(&mm, sensor.pixel_pitch_mm());
    let flat = phong_shade(sensor, [0.0, 0.0, 1.0]);
    let mut out = Image::zeros(3, h, w);
    for (i, n) in normals.iter().enumerate() {
        let (r, c) = (i / w, i % w);
        let shade = if n[2] == 1.0 { flat } else { phong_shade(sensor, *n) };
        for ch in 0..3 {
            let v = sensor.background.at(ch, r, c) + (shade[ch] - flat[ch]);
            out.set(ch, r, c, S::of(v.clamp(0.0, 1.0)));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::sensor::SensorConfig;

    fn components(d: &DepthMap<f64>) -> usize {
        let (h, w) = (d.height(), d.width());
        let mut seen = vec![false; h * w];
        let mut count = 0;
        for start in 0..h * w {
            if seen[start] || d.at(start / w, start % w) <= 0.0 {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(i) = stack.pop() {
                let (r, c) = ((i / w) as isize, (i % w) as isize);
                for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                    let (nr, nc) = (r + dr, c + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let j = nr as usize * w + nc as usize;
                    if !seen[j] && d.at(nr as usize, nc as usize) > 0.0 {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        count
    }

    #[test]
    fn no_penetration_gives_zero_depth() {
        let s = SensorSpec::desk();
        for shape in [
            IndenterShape::Sphere { radius_mm: 4.0 },
            IndenterShape::braille('Q').unwrap(),
        ] {
            let d: DepthMap<f64> = render_depth(&shape, &ContactPose::centered(0.0), &s).unwrap();
            assert!(d.mm().data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn centered_sphere_peaks_in_middle_and_is_symmetric() {
        let s = SensorSpec::desk();
        let d: DepthMap<f64> =
            render_depth(&IndenterShape::Sphere { radius_mm: 5.0 }, &ContactPose::centered(-1.0), &s)
                .unwrap();
        let peak = d.mm().data().iter().cloned().fold(0.0, f64::max);
        for (r, c) in [(31, 31), (31, 32), (32, 31), (32, 32)] {
            assert!((d.at(r, c) - peak).abs() < 1e-12);
        }
        for r in 0..64 {
            for c in 0..64 {
                let v = d.at(r, c);
                assert!((v - d.at(63 - r, c)).abs() < 1e-12);
                assert!((v - d.at(r, 63 - c)).abs() < 1e-12);
                assert!((v - d.at(c, r)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn braille_component_counts() {
        let s = SensorSpec::desk();
        let pose = ContactPose::centered(-1.0);
        let a: DepthMap<f64> = render_depth(&IndenterShape::braille('A').unwrap(), &pose, &s).unwrap();
        assert_eq!(components(&a), 1);
        let num: DepthMap<f64> = render_depth(&IndenterShape::braille('#').unwrap(), &pose, &s).unwrap();
        assert_eq!(components(&num), 4);
    }

    #[test]
    fn out_of_bounds_pose_and_bad_shapes() {
        let s = SensorSpec::desk();
        let mut pose = ContactPose::centered(-1.0);
        pose.dy_mm = -12.0;
        let r: Result<DepthMap<f64>> = render_depth(&IndenterShape::Sphere { radius_mm: 2.0 }, &pose, &s);
        assert!(matches!(r, Err(Error::Domain(_))));
        let bad = IndenterShape::BrailleCell {
            mask: 0,
            geometry: BrailleGeometry::default(),
        };
        let r: Result<DepthMap<f64>> = render_depth(&bad, &ContactPose::centered(-1.0), &s);
        assert!(matches!(r, Err(Error::Domain(_))));
        let r: Result<DepthMap<f64>> =
            render_depth(&IndenterShape::Sphere { radius_mm: -1.0 }, &ContactPose::centered(-1.0), &s);
        assert!(r.is_err());
    }

    #[test]
    fn depth_is_clamped_to_sensor_range() {
        let s = SensorSpec::desk();
        let d: DepthMap<f64> =
            render_depth(&IndenterShape::Sphere { radius_mm: 6.0 }, &ContactPose::centered(-4.0), &s)
                .unwrap();
        let peak = d.mm().data().iter().cloned().fold(0.0, f64::max);
        assert_eq!(peak, s.max_penetration_mm());
    }

    #[test]
    fn flat_depth_renders_background_exactly() {
        let s = SensorSpec::desk();
        let img: TactileImage<f64> = oracle_render(&DepthMap::zeros(64, 64, 1.5), &s).unwrap();
        assert_eq!(img, s.background);
    }

    #[test]
    fn tilted_plane_matches_hand_phong() {
        let s = SensorSpec::desk();
        let (gx, gy) = (0.05, -0.02);
        // depth = 0.75 + gx * x + gy * y over the whole gel
        let mm = Image::from_fn(1, 64, 64, |_, r, c| {
            let (x, y) = s.pixel_center_mm(r, c);
            0.75 + gx * x + gy * y
        });
        let depth = DepthMap::new(mm, 1.5).unwrap();
        let img: TactileImage<f64> = oracle_render(&depth, &s).unwrap();

        let len = (gx * gx + gy * gy + 1.0f64).sqrt();
        let n = [gx / len, gy / len, 1.0 / len];
        let cfg = &s.config;
        let mut expect = [0.0; 3];
        for l in &cfg.lights {
            let d = l.direction;
            let ndl = n[0] * d[0] + n[1] * d[1] + n[2] * d[2];
            let rz = 2.0 * ndl * n[2] - d[2];
            let lit = cfg.diffuse * ndl + cfg.specular * rz.powf(cfg.shininess);
            let flat = cfg.diffuse * d[2] + cfg.specular * d[2].powf(cfg.shininess);
            for ch in 0..3 {
                expect[ch] += l.color[ch] * (lit - flat);
            }
        }
        for r in 1..63 {
            for c in 1..63 {
                for ch in 0..3 {
                    let want = (s.background.at(ch, r, c) + expect[ch]).clamp(0.0, 1.0);
                    assert!((img.at(ch, r, c) - want).abs() < 1e-12);
                }
            }
        }
        // the shading change itself is constant over the interior
        let delta = |r, c| img.at(0, r, c) - s.background.at(0, r, c);
        assert!((delta(5, 7) - delta(40, 50)).abs() < 1e-12);
    }

    #[test]
    fn mirrored_depth_with_mirrored_lights_is_symmetric() {
        let mut cfg = SensorConfig::default();
        // light 0 points along +y; lights 1 and 2 are mirror images in x
        cfg.lights[1].color = [0.0, 0.7, 0.7];
        cfg.lights[2].color = [0.0, 0.7, 0.7];
        let s = SensorSpec::new(cfg)
            .unwrap()
            .with_background(Image::filled(3, 64, 64, 0.4))
            .unwrap();
        let d: DepthMap<f64> =
            render_depth(&IndenterShape::Sphere { radius_mm: 4.0 }, &ContactPose::centered(-0.8), &s)
                .unwrap();
        let img: TactileImage<f64> = oracle_render(&d, &s).unwrap();
        for ch in 0..3 {
            for r in 0..64 {
                for c in 0..64 {
                    assert!((img.at(ch, r, c) - img.at(ch, r, 63 - c)).abs() <= 1.0 / 255.0);
                }
            }
        }
        assert!(img.max_abs_diff(&s.background).unwrap() > 0.05);
    }
}
