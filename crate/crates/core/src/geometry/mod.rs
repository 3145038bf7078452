//! 68-point landmark geometry: eye-corner pinning, mean face, identity removal.
//!
//! Coordinates live in a normalized canonical space: a 600 x 600 pixel frame
//! divided by 600, so the eye pins (180, 200) and (420, 200) become
//! (0.3, 1/3) and (0.7, 1/3).

mod landmark_file;

pub use landmark_file::{read_landmark_file, write_landmark_file, LandmarkFile};

use crate::error::{Error, Result};

pub const NUM_LANDMARKS: usize = 68;
/// Flattened `(x, y)` length of one frame.
pub const FRAME_DIM: usize = 2 * NUM_LANDMARKS;
/// Outer corner of the eye on the image's left side.
pub const LEFT_EYE_OUTER: usize = 36;
/// Outer corner of the eye on the image's right side.
pub const RIGHT_EYE_OUTER: usize = 45;
/// Side length of the canonical pixel frame.
pub const CANONICAL_SIDE: f64 = 600.0;
pub const CANONICAL_PIN_LEFT_PX: Point = Point::new(180.0, 200.0);
pub const CANONICAL_PIN_RIGHT_PX: Point = Point::new(420.0, 200.0);

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl std::ops::Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

/// Target locations for the two outer eye corners.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pins {
    pub left: Point,
    pub right: Point,
}

impl Pins {
    /// The canonical pins in normalized coordinates.
    pub fn canonical() -> Self {
        Pins {
            left: normalize_point(CANONICAL_PIN_LEFT_PX),
            right: normalize_point(CANONICAL_PIN_RIGHT_PX),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkFrame {
    points: [Point; NUM_LANDMARKS],
}

impl LandmarkFrame {
    pub fn new(points: [Point; NUM_LANDMARKS]) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite {
                name: format!("landmark {i}"),
            });
        }
        Ok(LandmarkFrame { points })
    }

    /// From `[x0, y0, x1, y1, ...]`.
    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != FRAME_DIM {
            return Err(Error::Shape(format!(
                "landmark frame needs {FRAME_DIM} values, got {}",
                values.len()
            )));
        }
        let mut points = [Point::default(); NUM_LANDMARKS];
        for (p, xy) in points.iter_mut().zip(values.chunks_exact(2)) {
            *p = Point::new(xy[0], xy[1]);
        }
        Self::new(points)
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn points(&self) -> &[Point; NUM_LANDMARKS] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Point {
        self.points[i]
    }

    pub fn map(&self, f: impl FnMut(Point) -> Point) -> LandmarkFrame {
        LandmarkFrame {
            points: self.points.map(f),
        }
    }

    fn zip_map(&self, other: &LandmarkFrame, f: impl Fn(Point, Point) -> Point) -> LandmarkFrame {
        let mut points = self.points;
        for (p, q) in points.iter_mut().zip(other.points.iter()) {
            *p = f(*p, *q);
        }
        LandmarkFrame { points }
    }

    pub fn max_abs_diff(&self, other: &LandmarkFrame) -> f64 {
        self.points
            .iter()
            .zip(other.points.iter())
            .map(|(a, b)| (a.x - b.x).abs().max((a.y - b.y).abs()))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSequence {
    frames: Vec<LandmarkFrame>,
    frame_rate: f64,
}

impl LandmarkSequence {
    pub fn new(frames: Vec<LandmarkFrame>, frame_rate: f64) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::EmptyInput("landmark sequence has no frames".into()));
        }
        if !(frame_rate > 0.0 && frame_rate.is_finite()) {
            return Err(Error::Argument(format!("bad frame rate {frame_rate}")));
        }
        Ok(LandmarkSequence { frames, frame_rate })
    }

    pub fn frames(&self) -> &[LandmarkFrame] {
        &self.frames
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// T x 136 row-major flattening.
    pub fn to_matrix(&self) -> ndarray::Array2<f64> {
        let flat: Vec<f64> = self.frames.iter().flat_map(|f| f.to_flat()).collect();
        ndarray::Array2::from_shape_vec((self.frames.len(), FRAME_DIM), flat)
            .expect("frames are fixed-size")
    }

    pub fn from_matrix(m: &ndarray::Array2<f64>, frame_rate: f64) -> Result<Self> {
        let frames = m
            .rows()
            .into_iter()
            .map(|r| LandmarkFrame::from_flat(&r.to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(frames, frame_rate)
    }

    pub fn map_frames(&self, f: impl Fn(&LandmarkFrame) -> LandmarkFrame) -> LandmarkSequence {
        LandmarkSequence {
            frames: self.frames.iter().map(f).collect(),
            frame_rate: self.frame_rate,
        }
    }

    /// Linear interpolation of every trajectory onto a `target_fps` grid;
    /// yields floor((T - 1) * target / source) + 1 frames.
    pub fn resample_frame_rate(&self, target_fps: f64) -> Result<LandmarkSequence> {
        if !(target_fps > 0.0 && target_fps.is_finite()) {
            return Err(Error::Argument(format!("bad frame rate {target_fps}")));
        }
        if (target_fps - self.frame_rate).abs() < 1e-9 {
            return Ok(self.clone());
        }
        let n = self.frames.len();
        let n_out = (((n - 1) as f64 * target_fps / self.frame_rate) + 1e-9).floor() as usize + 1;
        let frames = (0..n_out)
            .map(|k| {
                let pos = k as f64 * self.frame_rate / target_fps;
                let i = (pos.floor() as usize).min(n - 1);
                let j = (i + 1).min(n - 1);
                let w = pos - i as f64;
                self.frames[i].zip_map(&self.frames[j], |a, b| {
                    Point::new(a.x + w * (b.x - a.x), a.y + w * (b.y - a.y))
                })
            })
            .collect();
        LandmarkSequence::new(frames, target_fps)
    }
}

/// `p -> scale * R(rotation) * p + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub rotation: f64,
    pub scale: f64,
    pub translation: Point,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            rotation: 0.0,
            scale: 1.0,
            translation: Point::default(),
        }
    }

    /// From the complex form `z -> a z + t` with `a = (re, im)`.
    fn from_complex(re: f64, im: f64, translation: Point) -> Self {
        SimilarityTransform {
            rotation: im.atan2(re),
            scale: re.hypot(im),
            translation,
        }
    }

    /// 2x2 linear part `scale * R(rotation)`.
    pub fn linear(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rotation.sin_cos();
        [
            [self.scale * c, -self.scale * s],
            [self.scale * s, self.scale * c],
        ]
    }

    pub fn apply_linear(&self, p: Point) -> Point {
        let m = self.linear();
        Point::new(m[0][0] * p.x + m[0][1] * p.y, m[1][0] * p.x + m[1][1] * p.y)
    }

    pub fn apply_point(&self, p: Point) -> Point {
        self.apply_linear(p) + self.translation
    }

    pub fn apply(&self, frame: &LandmarkFrame) -> LandmarkFrame {
        frame.map(|p| self.apply_point(p))
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let inv = SimilarityTransform {
            rotation: -self.rotation,
            scale: 1.0 / self.scale,
            translation: Point::default(),
        };
        let t = inv.apply_linear(self.translation);
        SimilarityTransform {
            translation: Point::new(-t.x, -t.y),
            ..inv
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &SimilarityTransform) -> SimilarityTransform {
        SimilarityTransform {
            rotation: self.rotation + other.rotation,
            scale: self.scale * other.scale,
            translation: self.apply_point(other.translation),
        }
    }
}

/// The similarity sending landmark 36 to `pins.left` and 45 to `pins.right`.
pub fn estimate_pinning_transform(frame: &LandmarkFrame, pins: &Pins) -> Result<SimilarityTransform> {
    let p = frame.point(LEFT_EYE_OUTER);
    let q = frame.point(RIGHT_EYE_OUTER);
    let src = q - p;
    let dst = pins.right - pins.left;
    let denom = src.x * src.x + src.y * src.y;
    if denom < 1e-24 {
        return Err(Error::DegenerateGeometry(
            "outer eye corners coincide".into(),
        ));
    }
    // a = dst / src as complex numbers
    let re = (dst.x * src.x + dst.y * src.y) / denom;
    let im = (dst.y * src.x - dst.x * src.y) / denom;
    let ap = Point::new(re * p.x - im * p.y, im * p.x + re * p.y);
    Ok(SimilarityTransform::from_complex(re, im, pins.left - ap))
}

/// Least-squares similarity mapping `src` onto `dst` over all 68 points.
pub fn fit_similarity(src: &LandmarkFrame, dst: &LandmarkFrame) -> Result<SimilarityTransform> {
    let n = NUM_LANDMARKS as f64;
    let centroid = |f: &LandmarkFrame| {
        let (sx, sy) = f
            .points()
            .iter()
            .fold((0.0, 0.0), |(ax, ay), p| (ax + p.x, ay + p.y));
        Point::new(sx / n, sy / n)
    };
    let (cs, cd) = (centroid(src), centroid(dst));
    let (mut num_re, mut num_im, mut den) = (0.0, 0.0, 0.0);
    for (p, q) in src.points().iter().zip(dst.points().iter()) {
        let (p, q) = (*p - cs, *q - cd);
        // conj(p) * q
        num_re += p.x * q.x + p.y * q.y;
        num_im += p.x * q.y - p.y * q.x;
        den += p.x * p.x + p.y * p.y;
    }
    if den < 1e-24 {
        return Err(Error::DegenerateGeometry(
            "all landmarks coincide; no similarity fit".into(),
        ));
    }
    let (re, im) = (num_re / den, num_im / den);
    let acs = Point::new(re * cs.x - im * cs.y, im * cs.x + re * cs.y);
    Ok(SimilarityTransform::from_complex(re, im, cd - acs))
}

/// Pins frame 0 and applies that single transform to every frame.
pub fn align_sequence(seq: &LandmarkSequence, pins: &Pins) -> Result<LandmarkSequence> {
    let t0 = estimate_pinning_transform(&seq.frames()[0], pins)?;
    Ok(seq.map_frames(|f| t0.apply(f)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFace {
    pub frame: LandmarkFrame,
    pub source_count: usize,
}

/// Pointwise mean over every frame of every sequence, summed in dataset order.
pub fn compute_mean_face<'a, I>(dataset: I) -> Result<MeanFace>
where
    I: IntoIterator<Item = &'a LandmarkSequence>,
{
    let mut acc = [Point::default(); NUM_LANDMARKS];
    let mut count = 0usize;
    for seq in dataset {
        for f in seq.frames() {
            for (a, p) in acc.iter_mut().zip(f.points().iter()) {
                a.x += p.x;
                a.y += p.y;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyInput("no frames to average for the mean face".into()));
    }
    let n = count as f64;
    let frame = LandmarkFrame::new(acc.map(|p| Point::new(p.x / n, p.y / n)))?;
    Ok(MeanFace {
        frame,
        source_count: count,
    })
}

/// `out_t = mean + A (frame_t - frame_0)` where `A` is the linear part of the
/// least-squares similarity from frame 0 onto the mean shape.
pub fn remove_identity(seq: &LandmarkSequence, mean: &MeanFace) -> Result<LandmarkSequence> {
    let first = &seq.frames()[0];
    let fit = fit_similarity(first, &mean.frame)?;
    Ok(seq.map_frames(|f| {
        let mut points = *mean.frame.points();
        for ((out, p), p0) in points.iter_mut().zip(f.points()).zip(first.points()) {
            *out = *out + fit.apply_linear(*p - *p0);
        }
        LandmarkFrame { points }
    }))
}

/// Per-frame pinning, used to stabilize predicted eye corners.
pub fn repin_eyes(frame: &LandmarkFrame, pins: &Pins) -> Result<LandmarkFrame> {
    let t = estimate_pinning_transform(frame, pins)?;
    let mut out = t.apply(frame);
    // land exactly on the pins rather than within rounding
    out.points[LEFT_EYE_OUTER] = pins.left;
    out.points[RIGHT_EYE_OUTER] = pins.right;
    Ok(out)
}

pub fn normalize_point(p: Point) -> Point {
    Point::new(p.x / CANONICAL_SIDE, p.y / CANONICAL_SIDE)
}

pub fn denormalize_point(p: Point) -> Point {
    Point::new(p.x * CANONICAL_SIDE, p.y * CANONICAL_SIDE)
}

/// Pixel coordinates to normalized canonical coordinates.
pub fn normalize(frame: &LandmarkFrame) -> LandmarkFrame {
    frame.map(normalize_point)
}

pub fn denormalize(frame: &LandmarkFrame) -> LandmarkFrame {
    frame.map(denormalize_point)
}


/// A neutral, closed-mouth frontal face in canonical pixel coordinates with the
/// outer eye corners on the canonical pins.
pub fn template_face_px() -> LandmarkFrame {
    let mut pts = [Point::default(); NUM_LANDMARKS];
    for (k, p) in pts[0..17].iter_mut().enumerate() {
        let a = k as f64 * std::f64::consts::PI / 16.0;
        *p = Point::new(300.0 - 155.0 * a.cos(), 215.0 + 255.0 * a.sin());
    }
    for k in 0..5 {
        let y = 165.0 - 15.0 * (std::f64::consts::PI * k as f64 / 4.0).sin();
        pts[17 + k] = Point::new(165.0 + 27.5 * k as f64, y);
        pts[22 + k] = Point::new(325.0 + 27.5 * k as f64, 165.0 - 15.0 * (std::f64::consts::PI * (4 - k) as f64 / 4.0).sin());
    }
    for k in 0..4 {
        pts[27 + k] = Point::new(300.0, 200.0 + 30.0 * k as f64);
    }
    let rest: [(f64, f64); 37] = [
        // nose base 31-35
        (270.0, 315.0), (285.0, 320.0), (300.0, 323.0), (315.0, 320.0), (330.0, 315.0),
        // eyes 36-47
        (180.0, 200.0), (205.0, 188.0), (235.0, 188.0), (260.0, 200.0), (235.0, 210.0), (205.0, 210.0),
        (340.0, 200.0), (365.0, 188.0), (395.0, 188.0), (420.0, 200.0), (395.0, 210.0), (365.0, 210.0),
        // outer lip 48-59
        (240.0, 380.0), (260.0, 368.0), (280.0, 362.0), (300.0, 365.0), (320.0, 362.0), (340.0, 368.0),
        (360.0, 380.0), (340.0, 395.0), (320.0, 402.0), (300.0, 404.0), (280.0, 402.0), (260.0, 395.0),
        // inner lip 60-67
        (250.0, 380.0), (275.0, 376.0), (300.0, 377.0), (325.0, 376.0), (350.0, 380.0),
        (325.0, 384.0), (300.0, 385.0), (275.0, 384.0),
    ];
    for (p, &(x, y)) in pts[31..].iter_mut().zip(rest.iter()) {
        *p = Point::new(x, y);
    }
    LandmarkFrame { points: pts }
}
