//! Desk-scale tactile simulator: rigid indenters pressed into a flat gel,
//! rendered as depth maps and as Phong-shaded sensor images.

pub mod braille;
pub mod pose;
pub mod render;
pub mod sensor;

pub use braille::{braille_label, braille_pattern, mask_dots, BRAILLE_CHARSET};
pub use pose::{pose_grid, AxisRange, ContactPose, PoseGridSpec};
pub use render::{
    oracle_render, phong_shade, render_depth, surface_normals, BrailleGeometry, IndenterShape,
};
pub use sensor::{BackgroundSpec, Light, SensorConfig, SensorSpec};
