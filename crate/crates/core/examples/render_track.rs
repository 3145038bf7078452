//! Draws a talking template face with a red overlay that lags by two frames.
//!
//! cargo run --release --example render_track -- [out_dir]

use std::path::PathBuf;

use lark::geometry::{normalize, template_face_px, LandmarkSequence, Point};
use lark::render::{render_sequence, LineStyle, RenderOptions};

fn main() -> lark::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("lark_render_track"));
    let face = normalize(&template_face_px());
    let talking = |t: usize| {
        let open = 0.03 * (0.5 - 0.5 * (t as f64 * 0.5).cos());
        face.map(|p| if p.y > 0.62 { Point::new(p.x, p.y + open * (p.y - 0.62) * 8.0) } else { p })
    };
    let truth = LandmarkSequence::new((0..25).map(talking).collect(), 25.0)?;
    let lagged = LandmarkSequence::new((0..25).map(|t: usize| talking(t.saturating_sub(2))).collect(), 25.0)?;
    let mut opts = RenderOptions {
        canvas: 300,
        ..RenderOptions::default()
    };
    opts.overlay.style = LineStyle::Dotted;
    let paths = render_sequence(&truth, &out, Some(&lagged), &opts)?;
    println!("wrote {} frames to {}", paths.len(), out.display());
    Ok(())
}
