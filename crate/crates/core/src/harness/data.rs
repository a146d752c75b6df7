//! Synthetic two-modality detection data.
//!
//! Modality A renders bright discs, squares and triangles on a dark textured
//! background. Modality B is derived from the same scene by
//! [`modality_transform`]: intensity inversion, a per-class intensity band,
//! a 3×3 box blur and bounded noise, so the two modalities share geometry
//! but differ in appearance.

use std::fs;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::{BoundingBox, GroundTruthBox};
use crate::real::Real;
use crate::tensor::Tensor4;
use crate::train::loss::assign_targets;
use crate::train::objective::Sample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    A,
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Disc,
    Square,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Disc, ShapeKind::Square, ShapeKind::Triangle];

    /// Does the pixel centre `(px, py)` fall inside a shape of side `size`
    /// anchored at `(x0, y0)`?
    fn covers(self, x0: f64, y0: f64, size: f64, px: f64, py: f64) -> bool {
        let (u, v) = (px - x0, py - y0);
        if u < 0.0 || v < 0.0 || u > size || v > size {
            return false;
        }
        match self {
            ShapeKind::Disc => {
                let r = size / 2.0;
                (u - r).powi(2) + (v - r).powi(2) <= r * r
            }
            ShapeKind::Square => true,
            // Apex at the top centre, base along the bottom edge.
            ShapeKind::Triangle => (u - size / 2.0).abs() <= v / 2.0,
        }
    }
}

/// Intensity band `[lo, hi]`.
pub type Band = (f64, f64);

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// `(width, height)`.
    pub canvas: (usize, usize),
    /// Relative frequency of each class; its length is the class count.
    pub class_weights: Vec<f64>,
    pub objects: (usize, usize),
    /// Object side length as a fraction of the shorter canvas side.
    pub size_range: (f64, f64),
    /// Half-width of the uniform pixel noise.
    pub noise: f64,
    /// Modality-B bands: background, then one per class.
    pub background_band: Band,
    pub class_bands: Vec<Band>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self::with_canvas(128)
    }
}

impl SceneSpec {
    pub fn with_canvas(side: usize) -> Self {
        Self {
            canvas: (side, side),
            class_weights: vec![1.0; 3],
            objects: (1, 6),
            size_range: (0.09, 0.25),
            noise: 0.03,
            background_band: (0.35, 0.5),
            class_bands: vec![(0.85, 1.0), (0.6, 0.75), (0.05, 0.2)],
        }
    }

    pub fn classes(&self) -> usize {
        self.class_weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        let (w, h) = self.canvas;
        if w < 8 || h < 8 {
            return bad(format!("canvas {w}x{h} is smaller than 8x8"));
        }
        if self.class_weights.is_empty() || self.class_weights.len() > ShapeKind::ALL.len() {
            return bad(format!("{} classes; supported 1..=3", self.class_weights.len()));
        }
        if self.class_weights.iter().any(|&v| !(v >= 0.0 && v.is_finite())) || self.class_weights.iter().sum::<f64>() <= 0.0 {
            return bad("class weights must be non-negative with a positive sum".into());
        }
        if self.objects.0 == 0 || self.objects.0 > self.objects.1 {
            return bad(format!("object count range {:?}", self.objects));
        }
        let (lo, hi) = self.size_range;
        if !(lo > 0.0 && lo <= hi && hi <= 0.5) || lo * (w.min(h) as f64) < 3.0 {
            return bad(format!("size range {:?} does not fit a {w}x{h} canvas", self.size_range));
        }
        if !(0.0..0.1).contains(&self.noise) {
            return bad(format!("noise {} outside [0, 0.1)", self.noise));
        }
        if self.class_bands.len() != self.classes() {
            return bad("one modality-B band per class required".into());
        }
        for &(blo, bhi) in self.class_bands.iter().chain([&self.background_band]) {
            if !(0.0 <= blo && blo + 2.0 * self.noise < bhi && bhi <= 1.0) {
                return bad(format!("band ({blo}, {bhi}) must lie in [0,1] and be wider than twice the noise"));
            }
        }
        Ok(())
    }
}

/// A rendered modality-A scene with its per-pixel labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub canvas: (usize, usize),
    /// Row-major intensities in `[0, 1]`.
    pub image: Vec<f64>,
    /// Object index per pixel, `None` for background.
    pub object_mask: Vec<Option<usize>>,
    pub objects: Vec<GroundTruthBox>,
}

impl Scene {
    /// Class per pixel, `None` for background.
    pub fn class_mask(&self) -> Vec<Option<usize>> {
        self.object_mask.iter().map(|o| o.map(|i| self.objects[i].class_id)).collect()
    }

    /// Tight pixel box around object `index`, measured from the mask.
    pub fn measured_box(&self, index: usize) -> Option<BoundingBox> {
        let w = self.canvas.0;
        let mut ext: Option<(usize, usize, usize, usize)> = None;
        for (p, _) in self.object_mask.iter().enumerate().filter(|(_, o)| **o == Some(index)) {
            let (x, y) = (p % w, p / w);
            ext = Some(match ext {
                None => (x, y, x, y),
                Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
            });
        }
        ext.map(|(x0, y0, x1, y1)| BoundingBox::new(x0 as f64, y0 as f64, (x1 + 1) as f64, (y1 + 1) as f64).expect("ordered"))
    }
}

/// Seed for image `index` of a dataset seeded with `seed` (SplitMix64 mix).
pub fn image_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Renders one modality-A scene: non-overlapping shapes (at least a 2-pixel
/// gap between boxes) on a dark background with a low-frequency texture.
pub fn render_scene(spec: &SceneSpec, seed: u64) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = spec.canvas;
    let side = w.min(h) as f64;
    let classes = WeightedIndex::new(&spec.class_weights).map_err(|e| Error::Argument(e.to_string()))?;

    let (fx, fy) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
    let (px, py) = (rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.0..std::f64::consts::TAU));
    let mut image: Vec<f64> = (0..w * h)
        .map(|p| {
            let (x, y) = ((p % w) as f64 / w as f64, (p / w) as f64 / h as f64);
            let texture = 0.05 * ((std::f64::consts::TAU * fx * x + px).sin() * (std::f64::consts::TAU * fy * y + py).cos());
            (0.12 + texture + rng.gen_range(-spec.noise..=spec.noise)).clamp(0.0, 1.0)
        })
        .collect();
    let mut object_mask = vec![None; w * h];

    let wanted = rng.gen_range(spec.objects.0..=spec.objects.1);
    let mut placed: Vec<(BoundingBox, usize, ShapeKind, f64, f64, f64)> = Vec::new();
    for _ in 0..wanted {
        let class_id = classes.sample(&mut rng);
        let kind = ShapeKind::ALL[class_id];
        for _attempt in 0..50 {
            let size = rng.gen_range(spec.size_range.0..=spec.size_range.1) * side;
            let x0 = rng.gen_range(0.0..=(w as f64 - size));
            let y0 = rng.gen_range(0.0..=(h as f64 - size));
            let reach = BoundingBox::new(x0 - 2.0, y0 - 2.0, x0 + size + 2.0, y0 + size + 2.0)?;
            if placed.iter().any(|(b, ..)| reach.x_min < b.x_max && b.x_min < reach.x_max && reach.y_min < b.y_max && b.y_min < reach.y_max) {
                continue;
            }
            placed.push((BoundingBox::new(x0, y0, x0 + size, y0 + size)?, class_id, kind, x0, y0, size));
            break;
        }
    }

    let mut objects = Vec::new();
    for (b, class_id, kind, x0, y0, size) in placed {
        let index = objects.len();
        let brightness = rng.gen_range(0.6..0.9);
        let mut any = false;
        let (xa, xb) = (b.x_min.floor().max(0.0) as usize, (b.x_max.ceil() as usize).min(w));
        let (ya, yb) = (b.y_min.floor().max(0.0) as usize, (b.y_max.ceil() as usize).min(h));
        for y in ya..yb {
            for x in xa..xb {
                if kind.covers(x0, y0, size, x as f64 + 0.5, y as f64 + 0.5) {
                    let p = y * w + x;
                    object_mask[p] = Some(index);
                    image[p] = (brightness + rng.gen_range(-spec.noise..=spec.noise)).clamp(0.0, 1.0);
                    any = true;
                }
            }
        }
        if any {
            objects.push(GroundTruthBox { image_id: 0, class_id, bbox: b });
        }
    }
    let mut scene = Scene { canvas: spec.canvas, image, object_mask, objects };
    for i in 0..scene.objects.len() {
        scene.objects[i].bbox = scene.measured_box(i).expect("object has pixels");
    }
    Ok(scene)
}

/// Modality-B appearance of a scene.
///
/// Each pixel is inverted (`1 − a`) and mapped into its class band (or the
/// background band) with a noise-wide margin on both sides, then 3×3 box
/// blurred over the neighbours that share its label, and uniform noise
/// bounded by the margin is added. Every pixel stays inside its label's band.
/// Not an involution.
pub fn modality_transform(scene: &Scene, spec: &SceneSpec, seed: u64) -> Vec<f64> {
    let (w, h) = scene.canvas;
    let m = spec.noise;
    let labels = scene.class_mask();
    let mapped: Vec<f64> = scene
        .image
        .iter()
        .zip(&labels)
        .map(|(&a, label)| {
            let (lo, hi) = label.map_or(spec.background_band, |c| spec.class_bands[c]);
            lo + m + (hi - lo - 2.0 * m) * (1.0 - a.clamp(0.0, 1.0))
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let label = labels[y * w + x];
            let (mut acc, mut n) = (0.0, 0usize);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                    if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                        continue;
                    }
                    let q = yy as usize * w + xx as usize;
                    if labels[q] == label {
                        acc += mapped[q];
                        n += 1;
                    }
                }
            }
            let noise = if m > 0.0 { rng.gen_range(-m..=m) } else { 0.0 };
            out[y * w + x] = (acc / n as f64 + noise).clamp(0.0, 1.0);
        }
    }
    out
}

/// One generated image: 8-bit pixels plus ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedImage {
    pub canvas: (usize, usize),
    pub pixels: Vec<u8>,
    pub boxes: Vec<GroundTruthBox>,
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Image `index` of the dataset `(spec, modality, seed)`; depends only on
/// those values, so any subset can be generated independently.
pub fn generate_image(spec: &SceneSpec, modality: Modality, seed: u64, index: usize) -> Result<GeneratedImage> {
    let s = image_seed(seed, index as u64);
    let mut scene = render_scene(spec, s)?;
    for o in &mut scene.objects {
        o.image_id = index;
    }
    let values = match modality {
        Modality::A => scene.image.clone(),
        Modality::B => modality_transform(&scene, spec, s ^ 0xB),
    };
    Ok(GeneratedImage { canvas: spec.canvas, pixels: values.into_iter().map(quantize).collect(), boxes: scene.objects })
}

pub fn generate_dataset(spec: &SceneSpec, modality: Modality, n_images: usize, seed: u64) -> Result<Vec<GeneratedImage>> {
    if n_images == 0 {
        return Err(Error::Argument("need at least one image".into()));
    }
    (0..n_images).map(|i| generate_image(spec, modality, seed, i)).collect()
}

impl GeneratedImage {
    pub fn to_sample<T: Real>(&self, grid: (usize, usize)) -> Sample<T> {
        let (w, h) = self.canvas;
        let data = self.pixels.iter().map(|&p| T::from_f64(p as f64 / 255.0)).collect();
        let image_id = self.boxes.first().map_or(0, |b| b.image_id);
        Sample {
            image_id,
            image: Tensor4::new([1, 1, h, w], data).expect("pixel count matches canvas"),
            targets: assign_targets(&self.boxes, self.canvas, grid),
            boxes: self.boxes.clone(),
        }
    }

    /// `class_id cx cy w h` per box, normalized to `[0, 1]`.
    pub fn annotation_text(&self) -> String {
        let (w, h) = (self.canvas.0 as f64, self.canvas.1 as f64);
        self.boxes
            .iter()
            .map(|b| {
                let bb = &b.bbox;
                format!(
                    "{} {} {} {} {}\n",
                    b.class_id,
                    (bb.x_min + bb.x_max) / 2.0 / w,
                    (bb.y_min + bb.y_max) / 2.0 / h,
                    bb.width() / w,
                    bb.height() / h
                )
            })
            .collect()
    }
}

/// Binary PGM (`P5`, maxval 255).
pub fn encode_pgm(canvas: (usize, usize), pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", canvas.0, canvas.1).into_bytes();
    out.extend_from_slice(pixels);
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<((usize, usize), Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated PGM header".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| Error::Parse("non-ASCII PGM header".into()))?);
    }
    if fields[0] != "P5" {
        return Err(Error::Parse(format!("expected P5, found {}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse(format!("bad PGM number {s}")));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(Error::Parse(format!("maxval {maxval} unsupported; expected 255")));
    }
    pos += 1;
    let data = bytes.get(pos..).unwrap_or_default();
    if w == 0 || h == 0 || data.len() != w * h {
        return Err(Error::Parse(format!("PGM payload {} bytes, expected {}", data.len(), w * h)));
    }
    Ok(((w, h), data.to_vec()))
}

/// Parses annotation text into pixel-space boxes.
pub fn parse_annotations(text: &str, canvas: (usize, usize), image_id: usize) -> Result<Vec<GroundTruthBox>> {
    let (w, h) = (canvas.0 as f64, canvas.1 as f64);
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(Error::Parse(format!("annotation needs 5 fields: {line:?}")));
            }
            let class_id = f[0].parse().map_err(|_| Error::Parse(format!("bad class id in {line:?}")))?;
            let v: Vec<f64> = f[1..].iter().map(|s| s.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| Error::Parse(format!("bad number in {line:?}")))?;
            if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(Error::Parse(format!("annotation values must be normalized: {line:?}")));
            }
            let bbox = BoundingBox::from_center(v[0] * w, v[1] * h, v[2] * w, v[3] * h)?;
            Ok(GroundTruthBox { image_id, class_id, bbox })
        })
        .collect()
}

/// Writes `NNNNNN.pgm` / `NNNNNN.txt` pairs into `dir`.
pub fn write_dataset(dir: &Path, images: &[GeneratedImage]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, img) in images.iter().enumerate() {
        fs::write(dir.join(format!("{i:06}.pgm")), encode_pgm(img.canvas, &img.pixels))?;
        fs::write(dir.join(format!("{i:06}.txt")), img.annotation_text())?;
    }
    Ok(())
}

/// Reads every `*.pgm` in `dir` (sorted by name) with its `.txt` annotation;
/// image ids are positions in that order.
pub fn read_dataset(dir: &Path) -> Result<Vec<GeneratedImage>> {
    let mut names: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Parse(format!("no .pgm images in {}", dir.display())));
    }
    names
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (canvas, pixels) = decode_pgm(&fs::read(p)?)?;
            let text = fs::read_to_string(p.with_extension("txt"))?;
            Ok(GeneratedImage { canvas, pixels, boxes: parse_annotations(&text, canvas, i)? })
        })
        .collect()
}
