use std::collections::HashSet;

use proptest::prelude::*;
use tactile_diffusion::dataset::extract_foreground;
use tactile_diffusion::image::DepthMap;
use tactile_diffusion::sim::{oracle_render, render_depth, ContactPose, IndenterShape, SensorSpec, BRAILLE_CHARSET};

fn shape_strategy() -> impl Strategy<Value = IndenterShape> {
    prop_oneof![
        (1.0f64..7.0).prop_map(|radius_mm| IndenterShape::Sphere { radius_mm }),
        (1.0f64..6.0, -90.0f64..90.0).prop_map(|(width_mm, angle_deg)| IndenterShape::Edge { width_mm, angle_deg }),
        prop::sample::select(BRAILLE_CHARSET.to_vec()).prop_map(|c| IndenterShape::braille(c).unwrap()),
    ]
}

fn pose(dx: f64, dy: f64, dz: f64, yaw: f64) -> ContactPose {
    ContactPose {
        dx_mm: dx,
        dy_mm: dy,
        dz_mm: dz,
        yaw_deg: yaw,
    }
}

fn depth(shape: &IndenterShape, p: &ContactPose, sensor: &SensorSpec) -> DepthMap<f64> {
    render_depth(shape, p, sensor).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pressing_deeper_never_reduces_depth(
        shape in shape_strategy(), dx in -4.0f64..4.0, dy in -4.0f64..4.0,
        yaw in -180.0f64..180.0, dz in -1.2f64..0.0, extra in 0.0f64..0.6,
    ) {
        let sensor = SensorSpec::desk();
        let shallow = depth(&shape, &pose(dx, dy, dz, yaw), &sensor);
        let deep = depth(&shape, &pose(dx, dy, dz - extra, yaw), &sensor);
        for (a, b) in shallow.mm().data().iter().zip(deep.mm().data()) {
            prop_assert!(b >= a);
        }
    }

    #[test]
    fn rendering_is_deterministic(shape in shape_strategy(), dz in -1.2f64..-0.1, yaw in -180.0f64..180.0) {
        let sensor = SensorSpec::desk();
        let p = pose(0.5, -0.5, dz, yaw);
        let a = oracle_render::<f64>(&depth(&shape, &p, &sensor), &sensor).unwrap();
        let b = oracle_render::<f64>(&depth(&shape, &p, &sensor), &sensor).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn sphere_contact_stays_inside_its_footprint(
        radius in 1.0f64..7.0, dx in -5.0f64..5.0, dy in -5.0f64..5.0, pen in 0.05f64..1.5,
    ) {
        let sensor = SensorSpec::desk();
        let d = depth(&IndenterShape::Sphere { radius_mm: radius }, &pose(dx, dy, -pen, 0.0), &sensor);
        // past the equator the whole disc of the sphere is in contact
        let footprint = if pen >= radius { radius } else { (2.0 * radius * pen - pen * pen).sqrt() };
        let (h, w) = sensor.resolution();
        for r in 0..h {
            for c in 0..w {
                let (x, y) = sensor.pixel_center_mm(r, c);
                if ((x - dx).powi(2) + (y - dy).powi(2)).sqrt() > footprint + 1e-9 {
                    prop_assert_eq!(d.at(r, c), 0.0);
                }
            }
        }
    }

    #[test]
    fn foreground_lives_on_the_dilated_contact(
        shape in shape_strategy(), dx in -3.0f64..3.0, dy in -3.0f64..3.0,
        dz in -1.2f64..-0.1, yaw in -180.0f64..180.0,
    ) {
        let sensor = SensorSpec::desk();
        let d = depth(&shape, &pose(dx, dy, dz, yaw), &sensor);
        let img = oracle_render::<f64>(&d, &sensor).unwrap();
        let fg = extract_foreground(&img, &sensor.background.cast()).unwrap();
        let (h, w) = sensor.resolution();
        for r in 0..h {
            for c in 0..w {
                let touched = (r.saturating_sub(1)..=(r + 1).min(h - 1))
                    .any(|rr| (c.saturating_sub(1)..=(c + 1).min(w - 1)).any(|cc| d.at(rr, cc) > 0.0));
                if !touched {
                    for ch in 0..3 {
                        prop_assert_eq!(fg.at(ch, r, c), 0.0);
                    }
                }
            }
        }
    }
}

#[test]
fn braille_characters_render_distinct_contacts() {
    let sensor = SensorSpec::desk();
    let mut seen = HashSet::new();
    for &ch in BRAILLE_CHARSET.iter() {
        let d = depth(&IndenterShape::braille(ch).unwrap(), &pose(0.0, 0.0, -1.2, 0.0), &sensor);
        let key: Vec<u64> = d.mm().data().iter().map(|v| v.to_bits()).collect();
        assert!(seen.insert(key), "duplicate contact for {ch}");
    }
}
