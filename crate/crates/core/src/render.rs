//! SVG view of a scene: image-plane keypoints and reprojected skeletons on
//! the left, a top-down X–Z map of placed roots on the right.
//!
//! Output bytes depend only on the input; all numbers use two decimals.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::geometry::EPS_DEPTH_MM;
use crate::placement::ScenePlacement;
use crate::pose::Scene;

const VIEW_W: f64 = 640.0;
const MAP_W: f64 = 240.0;
const MARGIN: f64 = 10.0;
const PALETTE: [&str; 6] = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

pub fn render_svg(scene: &Scene, placement: Option<&ScenePlacement>) -> String {
    let s = VIEW_W / scene.image_w_px;
    let view_h = scene.image_h_px * s;
    let total_w = VIEW_W + MAP_W + 3.0 * MARGIN;
    let total_h = view_h.max(MAP_W) + 2.0 * MARGIN;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total_w:.2}" height="{total_h:.2}" viewBox="0 0 {total_w:.2} {total_h:.2}">"#
    );
    let _ = writeln!(
        out,
        r##"<rect class="frame" x="{MARGIN:.2}" y="{MARGIN:.2}" width="{VIEW_W:.2}" height="{view_h:.2}" fill="#ffffff" stroke="#000000"/>"##
    );
    let map_x = VIEW_W + 2.0 * MARGIN;
    let _ = writeln!(
        out,
        r##"<rect class="minimap" x="{map_x:.2}" y="{MARGIN:.2}" width="{MAP_W:.2}" height="{MAP_W:.2}" fill="#f4f4f4" stroke="#000000"/>"##
    );
    let to_view = |p: [f64; 2]| [MARGIN + p[0] * s, MARGIN + p[1] * s];

    for (i, person) in scene.persons.iter().enumerate() {
        if let Some(kp) = &person.keypoints_2d {
            let colour = PALETTE[i % PALETTE.len()];
            let _ = writeln!(out, r#"<g class="keypoints">"#);
            for (p, _) in kp.joints.iter().zip(&kp.visible).filter(|(_, v)| **v) {
                let [x, y] = to_view(*p);
                let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.00" fill="{colour}"/>"#);
            }
            let _ = writeln!(out, "</g>");
        }
    }

    let Some(placed) = placement else {
        out.push_str("</svg>\n");
        return out;
    };
    let cam = &placed.result.camera;
    for (k, g) in placed.result.global_poses.iter().enumerate() {
        let colour = PALETTE[placed.person_indices.get(k).copied().unwrap_or(k) % PALETTE.len()];
        let joints = g.joints_global();
        let projected: Vec<Option<[f64; 2]>> = joints
            .iter()
            .map(|p| {
                (p[2] > EPS_DEPTH_MM).then(|| {
                    to_view([
                        cam.focal_px * p[0] / p[2] + cam.ox_px,
                        cam.focal_px * p[1] / p[2] + cam.oy_px,
                    ])
                })
            })
            .collect();
        let _ = writeln!(out, r#"<g class="skeleton">"#);
        for bone in scene.skeleton.bones() {
            if let (Some(a), Some(b)) = (projected[bone.child], projected[bone.parent]) {
                let _ = writeln!(
                    out,
                    r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{colour}" stroke-width="1.50"/>"#,
                    a[0], a[1], b[0], b[1]
                );
            }
        }
        let _ = writeln!(out, "</g>");
    }

    let roots = &placed.result.translations_mm;
    if !roots.is_empty() {
        // square map window around all roots, camera at the bottom centre
        let half = roots.iter().map(|t| t[0].abs().max(t[2] / 2.0)).fold(1000.0, f64::max) * 1.1;
        let scale = (MAP_W - 2.0 * MARGIN) / (2.0 * half);
        let cx = map_x + MAP_W / 2.0;
        let bottom = MARGIN + MAP_W - MARGIN;
        let _ = writeln!(
            out,
            r##"<circle class="camera" cx="{cx:.2}" cy="{bottom:.2}" r="3.00" fill="#000000"/>"##
        );
        for (k, t) in roots.iter().enumerate() {
            let colour = PALETTE[placed.person_indices.get(k).copied().unwrap_or(k) % PALETTE.len()];
            let x = cx + t[0] * scale;
            let y = bottom - t[2] * scale;
            let _ = writeln!(
                out,
                r#"<circle class="root" cx="{x:.2}" cy="{y:.2}" r="4.00" fill="{colour}"/>"#
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

pub fn write_svg(path: &Path, scene: &Scene, placement: Option<&ScenePlacement>) -> Result<()> {
    std::fs::write(path, render_svg(scene, placement))?;
    Ok(())
}
