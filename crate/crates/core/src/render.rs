//! Line-art rendering of landmark frames: the standard 68-point polylines,
//! anti-aliased, with an optional second face overlaid for GT/PD comparison.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{ImageFormat, Rgb, RgbImage};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::FRAME_RATE;
use crate::geometry::{LandmarkFrame, LandmarkSequence, Point, CANONICAL_SIDE};

pub const MIN_CANVAS: u32 = 64;
/// Stroke width at a 600 px canvas; scaled with the canvas.
pub const BASE_LINE_WIDTH: f64 = 2.0;
pub const INDEX_FILE: &str = "index.tsv";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolylineGroup {
    pub name: &'static str,
    pub indices: Vec<usize>,
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaceTopology {
    pub groups: Vec<PolylineGroup>,
}

impl FaceTopology {
    pub fn standard() -> Self {
        let g = |name, r: std::ops::Range<usize>, closed| PolylineGroup {
            name,
            indices: r.collect(),
            closed,
        };
        FaceTopology {
            groups: vec![
                g("jaw", 0..17, false),
                g("right brow", 17..22, false),
                g("left brow", 22..27, false),
                g("nose bridge", 27..31, false),
                g("nose base", 31..36, false),
                g("right eye", 36..42, true),
                g("left eye", 42..48, true),
                g("outer lip", 48..60, true),
                g("inner lip", 60..68, true),
            ],
        }
    }

    /// Index pairs to stroke, closing loops back to their first point.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for g in &self.groups {
            for w in g.indices.windows(2) {
                out.push((w[0], w[1]));
            }
            if g.closed && g.indices.len() > 2 {
                out.push((*g.indices.last().unwrap(), g.indices[0]));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineStyle {
    Solid,
    /// Dashes and gaps along each polyline.
    Dotted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stroke {
    pub color: [u8; 3],
    pub style: LineStyle,
    /// Width in pixels at a 600 px canvas.
    pub width: f64,
}

impl Stroke {
    pub fn ground_truth() -> Self {
        Stroke {
            color: [0, 0, 0],
            style: LineStyle::Solid,
            width: BASE_LINE_WIDTH,
        }
    }

    pub fn prediction() -> Self {
        Stroke {
            color: [220, 0, 0],
            style: LineStyle::Solid,
            width: BASE_LINE_WIDTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    pub canvas: u32,
    pub background: [u8; 3],
    pub primary: Stroke,
    pub overlay: Stroke,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            canvas: CANONICAL_SIDE as u32,
            background: [255, 255, 255],
            primary: Stroke::ground_truth(),
            overlay: Stroke::prediction(),
        }
    }
}

fn check_canvas(canvas: u32) -> Result<()> {
    if canvas < MIN_CANVAS {
        return Err(Error::Argument(format!(
            "canvas {canvas} px is below the {MIN_CANVAS} px minimum"
        )));
    }
    Ok(())
}

/// Normalized coordinates to canvas pixels; pixel (i, j) is centred on the
/// integer position (i, j).
pub fn to_canvas(p: Point, canvas: u32) -> Point {
    Point::new(p.x * canvas as f64, p.y * canvas as f64)
}

/// Per-pixel stroke coverage in [0, 1].
fn coverage(frame: &LandmarkFrame, stroke: &Stroke, canvas: u32) -> Vec<f64> {
    let n = canvas as usize;
    let mut cov = vec![0.0f64; n * n];
    let scale = canvas as f64 / CANONICAL_SIDE;
    let half = 0.5 * stroke.width * scale;
    let (dash, period) = (6.0 * scale, 10.0 * scale);
    let topo = FaceTopology::standard();
    for g in &topo.groups {
        let mut idx = g.indices.clone();
        if g.closed {
            idx.push(g.indices[0]);
        }
        let mut run = 0.0;
        for w in idx.windows(2) {
            let a = to_canvas(frame.point(w[0]), canvas);
            let b = to_canvas(frame.point(w[1]), canvas);
            let (dx, dy) = (b.x - a.x, b.y - a.y);
            let len2 = dx * dx + dy * dy;
            let len = len2.sqrt();
            let reach = half + 1.0;
            let x0 = ((a.x.min(b.x) - reach).floor().max(0.0)) as usize;
            let y0 = ((a.y.min(b.y) - reach).floor().max(0.0)) as usize;
            let x1 = ((a.x.max(b.x) + reach).ceil().min(n as f64 - 1.0)).max(-1.0);
            let y1 = ((a.y.max(b.y) + reach).ceil().min(n as f64 - 1.0)).max(-1.0);
            if x1 < 0.0 || y1 < 0.0 {
                run += len;
                continue;
            }
            for y in y0..=y1 as usize {
                for x in x0..=x1 as usize {
                    let (px, py) = (x as f64 - a.x, y as f64 - a.y);
                    let t = if len2 > 0.0 {
                        ((px * dx + py * dy) / len2).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    if stroke.style == LineStyle::Dotted && (run + t * len) % period >= dash {
                        continue;
                    }
                    let d = ((px - t * dx).powi(2) + (py - t * dy).powi(2)).sqrt();
                    let c = (half + 0.5 - d).clamp(0.0, 1.0);
                    let slot = &mut cov[y * n + x];
                    if c > *slot {
                        *slot = c;
                    }
                }
            }
            run += len;
        }
    }
    cov
}

fn blend(bg: [u8; 3], layers: &[(f64, [u8; 3])]) -> Rgb<u8> {
    let mut out = [0.0; 3];
    let mut rest = 1.0;
    for &(a, c) in layers {
        for k in 0..3 {
            out[k] += a * c[k] as f64;
        }
        rest -= a;
    }
    for k in 0..3 {
        out[k] += rest.max(0.0) * bg[k] as f64;
    }
    Rgb(out.map(|v| v.round().clamp(0.0, 255.0) as u8))
}

pub fn render_frame(frame: &LandmarkFrame, stroke: &Stroke, canvas: u32, background: [u8; 3]) -> Result<RgbImage> {
    check_canvas(canvas)?;
    let cov = coverage(frame, stroke, canvas);
    let n = canvas as usize;
    Ok(RgbImage::from_fn(canvas, canvas, |x, y| {
        blend(background, &[(cov[y as usize * n + x as usize], stroke.color)])
    }))
}

/// Draws `base` in the primary stroke and `top` in the overlay stroke. The
/// overlay's coverage is removed from the base layer, so identical geometry
/// shows only the overlay colour.
pub fn render_overlay(base: &LandmarkFrame, top: &LandmarkFrame, opts: &RenderOptions) -> Result<RgbImage> {
    check_canvas(opts.canvas)?;
    let lower = coverage(base, &opts.primary, opts.canvas);
    let upper = coverage(top, &opts.overlay, opts.canvas);
    let n = opts.canvas as usize;
    Ok(RgbImage::from_fn(opts.canvas, opts.canvas, |x, y| {
        let i = y as usize * n + x as usize;
        let a_top = upper[i];
        let a_low = (lower[i] - a_top).max(0.0);
        blend(opts.background, &[(a_top, opts.overlay.color), (a_low, opts.primary.color)])
    }))
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Error::Format(format!("PNG encoding failed: {e}")))?;
    Ok(buf.into_inner())
}

pub fn frame_file_name(k: usize) -> String {
    format!("frame_{k:05}.png")
}

/// `frame<TAB>seconds` for each frame at the nominal 25 FPS.
pub fn index_text(frames: usize) -> String {
    let mut s = String::from("frame\tseconds\n");
    for k in 0..frames {
        s.push_str(&format!("{k}\t{}\n", k as f64 / FRAME_RATE));
    }
    s
}

/// Writes `frame_00000.png`, ... and `index.tsv` into `out_dir`; returns the
/// image paths. With `overlay`, each frame shows both sequences.
pub fn render_sequence(
    seq: &LandmarkSequence,
    out_dir: &Path,
    overlay: Option<&LandmarkSequence>,
    opts: &RenderOptions,
) -> Result<Vec<PathBuf>> {
    check_canvas(opts.canvas)?;
    if let Some(o) = overlay {
        if o.len() != seq.len() {
            return Err(Error::Shape(format!(
                "overlay has {} frames, sequence has {}",
                o.len(),
                seq.len()
            )));
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let paths = (0..seq.len())
        .into_par_iter()
        .map(|k| {
            let frame = &seq.frames()[k];
            let img = match overlay {
                Some(o) => render_overlay(frame, &o.frames()[k], opts)?,
                None => render_frame(frame, &opts.primary, opts.canvas, opts.background)?,
            };
            let path = out_dir.join(frame_file_name(k));
            std::fs::write(&path, encode_png(&img)?).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect::<Result<Vec<_>>>()?;
    let index = out_dir.join(INDEX_FILE);
    std::fs::write(&index, index_text(seq.len())).map_err(|e| Error::io(&index, e))?;
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{normalize, template_face_px, NUM_LANDMARKS};

    fn mean() -> LandmarkFrame {
        normalize(&template_face_px())
    }

    fn white(p: &Rgb<u8>) -> bool {
        p.0 == [255, 255, 255]
    }

    #[test]
    fn topology_covers_every_point_once() {
        let mut seen = [0; NUM_LANDMARKS];
        for g in FaceTopology::standard().groups {
            for i in g.indices {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        // 16 jaw + 4 + 4 + 3 + 4 + 6 + 6 + 12 + 8
        assert_eq!(FaceTopology::standard().segments().len(), 63);
    }

    #[test]
    fn eye_corners_land_on_pin_pixels() {
        let f = mean();
        let img = render_frame(&f, &Stroke::ground_truth(), 600, [255; 3]).unwrap();
        let l = to_canvas(f.point(36), 600);
        let r = to_canvas(f.point(45), 600);
        assert!((l.x - 180.0).abs() < 1e-9 && (l.y - 200.0).abs() < 1e-9);
        assert!((r.x - 420.0).abs() < 1e-9 && (r.y - 200.0).abs() < 1e-9);
        assert_eq!(img.get_pixel(180, 200).0, [0, 0, 0]);
        assert_eq!(img.get_pixel(420, 200).0, [0, 0, 0]);
        assert!(white(img.get_pixel(300, 30)));
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = encode_png(&render_frame(&mean(), &Stroke::prediction(), 256, [255; 3]).unwrap()).unwrap();
        let b = encode_png(&render_frame(&mean(), &Stroke::prediction(), 256, [255; 3]).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_overlay_hides_base_strokes() {
        let opts = RenderOptions::default();
        let f = mean();
        let over = render_overlay(&f, &f, &opts).unwrap();
        let only = render_frame(&f, &opts.overlay, opts.canvas, opts.background).unwrap();
        let stroked = only.pixels().filter(|p| !white(p)).count();
        let differing = over.pixels().zip(only.pixels()).filter(|(a, b)| a != b).count();
        assert!(stroked > 1000);
        assert!((differing as f64) < 0.01 * stroked as f64);
        let black = over.pixels().filter(|p| p.0 == [0, 0, 0]).count();
        assert_eq!(black, 0);
    }

    #[test]
    fn dotted_style_leaves_gaps() {
        let f = mean();
        let solid = render_frame(&f, &Stroke::prediction(), 600, [255; 3]).unwrap();
        let dotted = render_frame(
            &f,
            &Stroke {
                style: LineStyle::Dotted,
                ..Stroke::prediction()
            },
            600,
            [255; 3],
        )
        .unwrap();
        let count = |img: &RgbImage| img.pixels().filter(|p| !white(p)).count();
        let (s, d) = (count(&solid), count(&dotted));
        assert!(d < s && d > s / 3, "{d} vs {s}");
    }

    #[test]
    fn out_of_range_points_stay_on_canvas() {
        let f = mean().map(|p| Point::new(p.x * 3.0 - 1.0, p.y * 3.0 - 1.0));
        let img = render_frame(&f, &Stroke::ground_truth(), 64, [255; 3]).unwrap();
        assert_eq!(img.dimensions(), (64, 64));
        let edge = mean().map(|p| Point::new(p.x.round(), p.y.round()));
        render_frame(&edge, &Stroke::ground_truth(), 64, [255; 3]).unwrap();
    }

    #[test]
    fn small_canvas_is_argument_error() {
        assert!(matches!(
            render_frame(&mean(), &Stroke::ground_truth(), 63, [255; 3]),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn sequence_writes_frames_and_index() {
        let seq = LandmarkSequence::new(vec![mean(); 75], 25.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let opts = RenderOptions {
            canvas: 64,
            ..Default::default()
        };
        let paths = render_sequence(&seq, dir.path(), None, &opts).unwrap();
        assert_eq!(paths.len(), 75);
        assert!(dir.path().join("frame_00074.png").exists());
        let index = std::fs::read_to_string(dir.path().join(INDEX_FILE)).unwrap();
        let lines: Vec<&str> = index.lines().collect();
        assert_eq!(lines.len(), 76);
        assert_eq!(lines[1], "0\t0");
        assert_eq!(lines[2], "1\t0.04");
        for (k, line) in lines[1..].iter().enumerate() {
            let secs: f64 = line.split('\t').nth(1).unwrap().parse().unwrap();
            assert!((secs - k as f64 / 25.0).abs() < 1e-12);
        }
        let short = LandmarkSequence::new(vec![mean(); 74], 25.0).unwrap();
        assert!(matches!(
            render_sequence(&seq, dir.path(), Some(&short), &opts),
            Err(Error::Shape(_))
        ));
    }
}
