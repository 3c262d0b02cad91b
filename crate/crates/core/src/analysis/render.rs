//! Top-down frame rendering and textual scene serialization for the
//! behavioral-analysis stage.
//!
//! Frames are ego-centered, heading-up rasters; a structured text view of
//! the same scene is always attached so text-only backends work.

use crate::geom::Vec2;
use crate::scenario::{relative_position, MapModel, VehicleState};
use base64::Engine;
use image::{Rgb, RgbImage};

pub const FRAME_SIZE: u32 = 256;
pub const METERS_PER_PIXEL: f64 = 0.25;

const BG: Rgb<u8> = Rgb([34, 34, 34]);
const ROAD: Rgb<u8> = Rgb([120, 120, 120]);
const BV: Rgb<u8> = Rgb([70, 110, 220]);
const EGO: Rgb<u8> = Rgb([220, 60, 50]);

/// Rasterize one scene with the ego centered and pointing up.
pub fn render_frame(map: &MapModel, ego: &VehicleState, bvs: &[VehicleState]) -> RgbImage {
    let mut img = RgbImage::from_pixel(FRAME_SIZE, FRAME_SIZE, BG);
    let center = (FRAME_SIZE / 2) as f64;
    for row in 0..FRAME_SIZE {
        for col in 0..FRAME_SIZE {
            // Screen up is the ego's forward axis, screen left its left.
            let body_x = (center - row as f64) * METERS_PER_PIXEL;
            let body_y = (center - col as f64) * METERS_PER_PIXEL;
            let world = ego.position + Vec2::new(body_x, body_y).rotated(ego.heading);
            let mut px = BG;
            if map.is_on_road(world) {
                px = ROAD;
            }
            if bvs.iter().any(|bv| inside_footprint(bv, world)) {
                px = BV;
            }
            if inside_footprint(ego, world) {
                px = EGO;
            }
            img.put_pixel(col, row, px);
        }
    }
    img
}

fn inside_footprint(s: &VehicleState, p: Vec2) -> bool {
    let rel = (p - s.position).rotated(-s.heading);
    rel.x.abs() <= s.length / 2.0 && rel.y.abs() <= s.width / 2.0
}

/// PNG-encode a frame and wrap it in base64 for transport.
pub fn frame_to_base64_png(img: &RgbImage) -> String {
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .expect("png encoding to a memory buffer cannot fail");
    base64::engine::general_purpose::STANDARD.encode(&bytes)
}

/// Deterministic structured-text serialization of a scene.
pub fn scene_text(ego: &VehicleState, bvs: &[VehicleState], step: usize, dt: f64) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    writeln!(out, "step {} (t = {:.1} s)", step, step as f64 * dt).unwrap();
    writeln!(
        out,
        "ego: position ({:.1}, {:.1}), heading {:.2} rad, speed {:.1} m/s",
        ego.position.x, ego.position.y, ego.heading, ego.speed
    )
    .unwrap();
    for (i, bv) in bvs.iter().enumerate() {
        let region = relative_position(ego, bv)
            .map(|r| r.as_str().to_ascii_lowercase())
            .unwrap_or_else(|_| "coincident".to_string());
        writeln!(
            out,
            "vehicle {}: {} of the ego, distance {:.1} m, speed {:.1} m/s",
            i,
            region,
            ego.position.distance(bv.position),
            bv.speed
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Lane;

    fn ego() -> VehicleState {
        VehicleState {
            position: Vec2::new(0.0, 0.0),
            heading: std::f64::consts::FRAC_PI_2,
            speed: 5.0,
            length: 4.0,
            width: 2.0,
        }
    }

    #[test]
    fn ego_pixel_is_ego_colored_and_frame_encodes() {
        let map = MapModel {
            lanes: vec![Lane {
                centerline: vec![Vec2::new(0.0, -50.0), Vec2::new(0.0, 50.0)],
                width: 7.0,
            }],
        };
        let img = render_frame(&map, &ego(), &[]);
        assert_eq!(*img.get_pixel(FRAME_SIZE / 2, FRAME_SIZE / 2), EGO);
        // Off to the side of the corridor: background.
        assert_eq!(*img.get_pixel(4, FRAME_SIZE / 2), BG);
        let b64 = frame_to_base64_png(&img);
        assert!(!b64.is_empty());
    }

    #[test]
    fn scene_text_lists_regions() {
        let bv = VehicleState {
            position: Vec2::new(0.0, 12.0),
            heading: std::f64::consts::FRAC_PI_2,
            speed: 3.0,
            length: 4.0,
            width: 2.0,
        };
        let text = scene_text(&ego(), &[bv], 30, 0.1);
        assert!(text.contains("front of the ego"), "{text}");
        assert!(text.contains("t = 3.0 s"), "{text}");
    }
}
