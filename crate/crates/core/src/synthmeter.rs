//! Seeded synthetic meter scenes with exact ground truth.
//!
//! A scene is rendered front-on: a dial disk centered in a square image, tick
//! marks, a pointer from the center to 0.8·radius, two scale blobs at
//! 0.9·radius (zero and key scale) and the key number in a 5×7 bitmap font.
//! The ground-truth maps hold only the pointer stroke and the two blobs and are
//! strictly binary before any distortion. An optional homography then warps
//! the image and the maps together.
//!
//! Angles are degrees, measured clockwise on screen from the +x axis.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctc::{parse_numeric, Alphabet, CtcError, ProbMatrix};
use crate::geometry::{
    frame_corners, offsets_to_homography, Correspondence, GeometryError, Homography, QuadOffsets,
};
use crate::image::{save_image, BinaryMask, ImageBuffer, ImageError, Point2, ScoreMap};
use crate::warp::{warp_image, warp_score_map};

/// Pointer length as a fraction of the dial radius.
pub const POINTER_LENGTH: f64 = 0.8;
/// Radial position of the scale blobs as a fraction of the dial radius.
pub const SCALE_RADIUS: f64 = 0.9;
/// Half-width of the GT pointer stroke (3 px thick).
pub const POINTER_HALF_WIDTH: f64 = 1.5;
/// Radius of the GT scale blobs (5 px diameter).
pub const SCALE_BLOB_RADIUS: f64 = 2.5;
/// Largest accepted corner jitter, as a fraction of the image size.
pub const MAX_JITTER: f64 = 0.15;

const NOISE_AMPLITUDE: f64 = 0.015;
const SUPERSAMPLE: usize = 3;
const TICKS: usize = 11;
const GLYPH_CELL: f64 = 2.0;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid meter spec: {0}")]
    InvalidSpec(String),
    #[error("empty range for {0}")]
    EmptyRange(&'static str),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Number(#[from] CtcError),
    #[error("cannot write scene: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot serialize annotation: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeterSpec {
    /// Side of the square image in pixels.
    pub image_size: usize,
    pub dial_radius: f64,
    /// Direction of the zero scale.
    pub zero_angle: f64,
    /// Clockwise sweep from the zero scale to the key scale, in (0, 360).
    pub span_angle: f64,
    /// True reading divided by the key number, in [0, 1].
    pub pointer_fraction: f64,
    pub key_number: String,
    pub distortion: Option<Homography>,
    pub seed: u64,
}

impl MeterSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.image_size < 16 {
            return bad(format!("image size {} is too small", self.image_size));
        }
        if !(self.dial_radius > 0.0 && self.dial_radius < self.image_size as f64 / 2.0) {
            return bad(format!(
                "dial radius {} must lie in (0, {})",
                self.dial_radius,
                self.image_size as f64 / 2.0
            ));
        }
        if !(self.span_angle > 0.0 && self.span_angle < 360.0) {
            return bad(format!("span {} must lie in (0, 360)", self.span_angle));
        }
        if !(0.0..=1.0).contains(&self.pointer_fraction) {
            return bad(format!(
                "pointer fraction {} must lie in [0, 1]",
                self.pointer_fraction
            ));
        }
        if !self.zero_angle.is_finite() {
            return bad("zero angle must be finite".into());
        }
        parse_numeric(&self.key_number)?;
        Ok(())
    }

    pub fn center(&self) -> Point2 {
        let c = (self.image_size as f64 - 1.0) / 2.0;
        Point2::new(c, c)
    }

    pub fn pointer_angle(&self) -> f64 {
        self.zero_angle + self.pointer_fraction * self.span_angle
    }

    pub fn key_angle(&self) -> f64 {
        self.zero_angle + self.span_angle
    }

    fn on_dial(&self, angle_deg: f64, radius_frac: f64) -> Point2 {
        let t = angle_deg.to_radians();
        self.center() + Point2::new(t.cos(), t.sin()) * (radius_frac * self.dial_radius)
    }

    pub fn zero_scale(&self) -> Point2 {
        self.on_dial(self.zero_angle, SCALE_RADIUS)
    }

    pub fn key_scale(&self) -> Point2 {
        self.on_dial(self.key_angle(), SCALE_RADIUS)
    }

    pub fn pointer_tip(&self) -> Point2 {
        self.on_dial(self.pointer_angle(), POINTER_LENGTH)
    }
}

/// Ground truth for one scene. Dial points are in the undistorted frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeterAnnotation {
    pub image_size: usize,
    pub dial_center: Point2,
    pub zero_scale: Point2,
    pub key_scale: Point2,
    pub pointer_angle: f64,
    pub key_number: String,
    pub true_reading: f64,
    /// Undistorted frame corners paired with their distorted positions.
    pub correspondences: [Correspondence; 4],
    /// Corner displacements of the distortion (TL, TR, BR, BL).
    pub offsets: QuadOffsets,
    /// Undistorted → distorted map.
    pub h_gt: Homography,
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub image: ImageBuffer,
    pub pointer_map_gt: ScoreMap,
    pub key_scale_map_gt: ScoreMap,
    pub annotation: MeterAnnotation,
    /// Recognizer-style probability rows that greedy-decode to the key number.
    pub number_probs: ProbMatrix,
}

fn segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let d = b - a;
    let len2 = d.x * d.x + d.y * d.y;
    let t = if len2 > 0.0 {
        (((p - a).x * d.x + (p - a).y * d.y) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    p.distance(a + d * t)
}

/// Rows of a 5×7 bitmap font, most significant of the low five bits on the left.
fn glyph(ch: char) -> Option<[u8; 7]> {
    Some(match ch {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        _ => return None,
    })
}

struct TextBox {
    origin: Point2,
    glyphs: Vec<[u8; 7]>,
}

impl TextBox {
    fn centered(text: &str, at: Point2) -> Self {
        let glyphs: Vec<[u8; 7]> = text.chars().filter_map(glyph).collect();
        let w = glyphs.len() as f64 * 6.0 * GLYPH_CELL - GLYPH_CELL;
        let h = 7.0 * GLYPH_CELL;
        Self {
            origin: at - Point2::new(w / 2.0, h / 2.0),
            glyphs,
        }
    }

    fn covers(&self, p: Point2) -> bool {
        let u = (p.x - self.origin.x) / GLYPH_CELL;
        let v = (p.y - self.origin.y) / GLYPH_CELL;
        if u < 0.0 || !(0.0..7.0).contains(&v) {
            return false;
        }
        let (col, row) = (u.floor() as usize, v.floor() as usize);
        let (g, cx) = (col / 6, col % 6);
        if g >= self.glyphs.len() || cx >= 5 {
            return false;
        }
        self.glyphs[g][row] & (0x10 >> cx) != 0
    }
}

type Rgb = [f64; 3];

const BACKGROUND: Rgb = [0.32, 0.35, 0.40];
const RIM: Rgb = [0.15, 0.15, 0.17];
const FACE: Rgb = [0.94, 0.93, 0.90];
const INK: Rgb = [0.08, 0.08, 0.10];
const NEEDLE: Rgb = [0.70, 0.08, 0.06];

/// Painter's-order color of the undistorted scene at a continuous point.
struct Painter<'a> {
    spec: &'a MeterSpec,
    center: Point2,
    tip: Point2,
    zero: Point2,
    key: Point2,
    ticks: Vec<(Point2, Point2)>,
    text: TextBox,
}

impl<'a> Painter<'a> {
    fn new(spec: &'a MeterSpec) -> Self {
        let ticks = (0..TICKS)
            .map(|i| {
                let a = spec.zero_angle + spec.span_angle * i as f64 / (TICKS - 1) as f64;
                (spec.on_dial(a, 0.84), spec.on_dial(a, 0.97))
            })
            .collect();
        Self {
            spec,
            center: spec.center(),
            tip: spec.pointer_tip(),
            zero: spec.zero_scale(),
            key: spec.key_scale(),
            ticks,
            text: TextBox::centered(&spec.key_number, spec.on_dial(spec.key_angle(), 0.62)),
        }
    }

    fn color(&self, p: Point2) -> Rgb {
        let r = p.distance(self.center);
        let radius = self.spec.dial_radius;
        if r > radius + 3.0 {
            return BACKGROUND;
        }
        if r > radius {
            return RIM;
        }
        if segment_distance(p, self.center, self.tip) <= POINTER_HALF_WIDTH || r <= 4.0 {
            return NEEDLE;
        }
        if p.distance(self.zero) <= SCALE_BLOB_RADIUS || p.distance(self.key) <= SCALE_BLOB_RADIUS {
            return INK;
        }
        let in_tick_band = (0.84 * radius - 0.8..=0.97 * radius + 0.8).contains(&r);
        if in_tick_band
            && self
                .ticks
                .iter()
                .any(|&(a, b)| segment_distance(p, a, b) <= 0.8)
        {
            return INK;
        }
        if self.text.covers(p) {
            return INK;
        }
        FACE
    }
}

/// [1,2,1]/4 blur of an interleaved RGB square image, borders clamped.
fn blur121(rgb: &[f64], n: usize) -> Vec<f64> {
    let idx = |x: usize, y: usize, k: usize| (y * n + x) * 3 + k;
    let pass = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0; src.len()];
        for y in 0..n {
            for x in 0..n {
                for k in 0..3 {
                    let (a, b) = if horizontal {
                        (
                            idx(x.saturating_sub(1), y, k),
                            idx((x + 1).min(n - 1), y, k),
                        )
                    } else {
                        (
                            idx(x, y.saturating_sub(1), k),
                            idx(x, (y + 1).min(n - 1), k),
                        )
                    };
                    out[idx(x, y, k)] = 0.25 * src[a] + 0.5 * src[idx(x, y, k)] + 0.25 * src[b];
                }
            }
        }
        out
    };
    pass(&pass(rgb, true), false)
}

fn render_undistorted(spec: &MeterSpec) -> Result<(ImageBuffer, ScoreMap, ScoreMap), SynthError> {
    let n = spec.image_size;
    let painter = Painter::new(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rgb = Vec::with_capacity(n * n * 3);
    let step = 1.0 / SUPERSAMPLE as f64;
    let samples = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    for y in 0..n {
        for x in 0..n {
            let mut acc = [0.0; 3];
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let p = Point2::new(
                        x as f64 - 0.5 + (sx as f64 + 0.5) * step,
                        y as f64 - 0.5 + (sy as f64 + 0.5) * step,
                    );
                    let c = painter.color(p);
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            rgb.extend(acc.map(|v| v / samples));
        }
    }
    // a light blur keeps edges resolvable by bilinear resampling
    let mut rgb = blur121(&rgb, n);
    for px in rgb.chunks_mut(3) {
        let noise = rng.random_range(-NOISE_AMPLITUDE..=NOISE_AMPLITUDE);
        px.iter_mut()
            .for_each(|v| *v = (*v + noise).clamp(0.0, 1.0));
    }
    let image = ImageBuffer::new(n, n, 3, rgb)?;

    let (center, tip) = (spec.center(), spec.pointer_tip());
    let (zero, key) = (spec.zero_scale(), spec.key_scale());
    let mut pointer = BinaryMask::empty(n, n);
    let mut scales = BinaryMask::empty(n, n);
    for y in 0..n {
        for x in 0..n {
            let p = Point2::new(x as f64, y as f64);
            if segment_distance(p, center, tip) <= POINTER_HALF_WIDTH {
                pointer.set(x, y, true);
            }
            if p.distance(zero) <= SCALE_BLOB_RADIUS || p.distance(key) <= SCALE_BLOB_RADIUS {
                scales.set(x, y, true);
            }
        }
    }
    Ok((
        image,
        ScoreMap::from_mask(&pointer),
        ScoreMap::from_mask(&scales),
    ))
}

/// Probability rows `[blank, c, c, blank, c, c, …, blank]` whose argmax path
/// decodes to `key_number`; the winning class gets 0.6–0.9 of each row.
pub fn key_number_probs(
    key_number: &str,
    alphabet: &Alphabet,
    seed: u64,
) -> Result<ProbMatrix, SynthError> {
    let label = alphabet.encode(key_number)?;
    let blank = alphabet.blank_index();
    let mut path = vec![blank];
    for &k in label.indices() {
        path.extend([k, k, blank]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    let c = alphabet.len();
    let rows = path
        .into_iter()
        .map(|k| {
            let top = rng.random_range(0.6..0.9);
            let mut rest: Vec<f64> = (0..c - 1).map(|_| rng.random_range(0.05..1.0)).collect();
            let rest_sum: f64 = rest.iter().sum();
            for v in &mut rest {
                *v *= (1.0 - top) / rest_sum;
            }
            let mut row = Vec::with_capacity(c);
            let mut others = rest.into_iter();
            for j in 0..c {
                row.push(if j == k { top } else { others.next().unwrap() });
            }
            let s: f64 = row.iter().sum();
            row.into_iter().map(|v| v / s).collect()
        })
        .collect();
    Ok(ProbMatrix::new(rows)?)
}

/// Renders a scene and its ground truth.
pub fn render(spec: &MeterSpec) -> Result<SynthScene, SynthError> {
    spec.validate()?;
    let n = spec.image_size;
    let (image, pointer, scales) = render_undistorted(spec)?;
    let (image, pointer, scales, h_gt) = match &spec.distortion {
        Some(h) => (
            warp_image(&image, h, n, n)?,
            warp_score_map(&pointer, h, n, n)?,
            warp_score_map(&scales, h, n, n)?,
            *h,
        ),
        None => (image, pointer, scales, Homography::identity()),
    };
    let offsets = QuadOffsets::from_homography(n, n, &h_gt)?;
    let corners = frame_corners(n, n);
    let correspondences = std::array::from_fn(|i| {
        let [dx, dy] = offsets.d[i];
        Correspondence::new(corners[i], corners[i] + Point2::new(dx, dy))
    });
    let key_value = parse_numeric(&spec.key_number)?;
    let annotation = MeterAnnotation {
        image_size: n,
        dial_center: spec.center(),
        zero_scale: spec.zero_scale(),
        key_scale: spec.key_scale(),
        pointer_angle: spec.pointer_angle(),
        key_number: spec.key_number.clone(),
        true_reading: spec.pointer_fraction * key_value,
        correspondences,
        offsets,
        h_gt,
    };
    let number_probs = key_number_probs(&spec.key_number, &Alphabet::meter_digits(), spec.seed)?;
    Ok(SynthScene {
        image,
        pointer_map_gt: pointer,
        key_scale_map_gt: scales,
        annotation,
        number_probs,
    })
}

/// Sampling ranges for [`random_spec`]; every pair is an inclusive `(min, max)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecRanges {
    pub image_size: (usize, usize),
    /// Dial radius as a fraction of the image size.
    pub dial_radius_frac: (f64, f64),
    pub zero_angle: (f64, f64),
    pub span_angle: (f64, f64),
    pub pointer_fraction: (f64, f64),
    pub key_numbers: Vec<String>,
    /// Corner jitter bound as a fraction of the image size; `None` leaves the
    /// scene undistorted, `Some(0.0)` gives the identity distortion.
    pub distortion_jitter: Option<f64>,
}

impl Default for SpecRanges {
    fn default() -> Self {
        Self {
            image_size: (224, 320),
            dial_radius_frac: (0.28, 0.36),
            zero_angle: (100.0, 170.0),
            span_angle: (180.0, 300.0),
            pointer_fraction: (0.2, 1.0),
            key_numbers: [
                "1.0", "1.6", "2.5", "4", "6", "10", "16", "25", "40", "60", "100", "160", "250",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
            distortion_jitter: None,
        }
    }
}

impl SpecRanges {
    pub fn distorted(jitter: f64) -> Self {
        Self {
            distortion_jitter: Some(jitter),
            ..Self::default()
        }
    }
}

fn ordered<T: PartialOrd>(r: (T, T), name: &'static str) -> Result<(T, T), SynthError> {
    if r.0 <= r.1 {
        Ok(r)
    } else {
        Err(SynthError::EmptyRange(name))
    }
}

/// Deterministic spec drawn from `ranges`.
pub fn random_spec(seed: u64, ranges: &SpecRanges) -> Result<MeterSpec, SynthError> {
    let size = ordered(ranges.image_size, "image_size")?;
    let radius = ordered(ranges.dial_radius_frac, "dial_radius_frac")?;
    let zero = ordered(ranges.zero_angle, "zero_angle")?;
    let span = ordered(ranges.span_angle, "span_angle")?;
    let frac = ordered(ranges.pointer_fraction, "pointer_fraction")?;
    if ranges.key_numbers.is_empty() {
        return Err(SynthError::EmptyRange("key_numbers"));
    }
    if let Some(j) = ranges.distortion_jitter {
        if !(0.0..=MAX_JITTER).contains(&j) {
            return Err(SynthError::InvalidSpec(format!(
                "jitter {j} must lie in [0, {MAX_JITTER}]"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image_size = rng.random_range(size.0..=size.1);
    let dial_radius = rng.random_range(radius.0..=radius.1) * image_size as f64;
    let zero_angle = rng.random_range(zero.0..=zero.1);
    let span_angle = rng.random_range(span.0..=span.1);
    let pointer_fraction = rng.random_range(frac.0..=frac.1);
    let key_number = ranges.key_numbers[rng.random_range(0..ranges.key_numbers.len())].clone();
    let distortion = match ranges.distortion_jitter {
        None => None,
        Some(j) => {
            let bound = j * image_size as f64;
            let mut d = [[0.0; 2]; 4];
            for pair in d.iter_mut() {
                for v in pair.iter_mut() {
                    *v = if bound > 0.0 {
                        rng.random_range(-bound..=bound)
                    } else {
                        0.0
                    };
                }
            }
            Some(offsets_to_homography(
                image_size,
                image_size,
                &QuadOffsets { d },
            )?)
        }
    };
    let spec = MeterSpec {
        image_size,
        dial_radius,
        zero_angle,
        span_angle,
        pointer_fraction,
        key_number,
        distortion,
        seed,
    };
    spec.validate()?;
    Ok(spec)
}

impl SynthScene {
    /// Writes `<base>.png`, `<base>.pointer.pgm`, `<base>.keyscale.pgm`,
    /// `<base>.json` (annotation) and `<base>.probs.json`.
    pub fn save(&self, dir: &Path, basename: &str) -> Result<(), SynthError> {
        std::fs::create_dir_all(dir)?;
        save_image(&self.image, dir.join(format!("{basename}.png")))?;
        save_image(
            self.pointer_map_gt.as_image(),
            dir.join(format!("{basename}.pointer.pgm")),
        )?;
        save_image(
            self.key_scale_map_gt.as_image(),
            dir.join(format!("{basename}.keyscale.pgm")),
        )?;
        let mut ann = serde_json::to_string_pretty(&self.annotation)?;
        ann.push('\n');
        std::fs::write(dir.join(format!("{basename}.json")), ann)?;
        let mut probs = serde_json::to_string(&self.number_probs)?;
        probs.push('\n');
        std::fs::write(dir.join(format!("{basename}.probs.json")), probs)?;
        Ok(())
    }
}
