//! Pins a tilted, shifted face track to the canonical eye positions and
//! removes its identity against the template mean face.
//!
//! cargo run --example align

use lark::geometry::{
    align_sequence, normalize, remove_identity, template_face_px, LandmarkSequence, MeanFace,
    Pins, Point,
};

fn main() -> lark::Result<()> {
    let template = normalize(&template_face_px());
    let (c, s) = (0.2f64.cos(), 0.2f64.sin());
    let frames: Vec<_> = (0..5)
        .map(|t| {
            let open = 0.01 * t as f64;
            template.map(|p| {
                let q = Point::new(p.x, if p.y > 0.6 { p.y + open } else { p.y });
                Point::new(1.3 * (c * q.x - s * q.y) + 0.1, 1.3 * (s * q.x + c * q.y) - 0.05)
            })
        })
        .collect();
    let seq = LandmarkSequence::new(frames, 25.0)?;
    let pins = Pins::canonical();
    let aligned = align_sequence(&seq, &pins)?;
    for (t, f) in aligned.frames().iter().enumerate() {
        let (l, r) = (f.point(36), f.point(45));
        println!("frame {t}: eyes at ({:.4}, {:.4}) ({:.4}, {:.4})", l.x, l.y, r.x, r.y);
    }

    let mean = MeanFace {
        frame: template.clone(),
        source_count: 1,
    };
    let neutral = remove_identity(&aligned, &mean)?;
    for (t, f) in neutral.frames().iter().enumerate() {
        println!(
            "frame {t}: max distance from mean face {:.4}",
            f.max_abs_diff(&mean.frame)
        );
    }
    Ok(())
}
