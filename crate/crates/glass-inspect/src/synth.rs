//! Seeded synthetic glass-image generator with exact ground truth.
//!
//! Renders bright marks on a dark background: scratches and cracks as
//! glowing polylines, pits as discs, dust as Gaussian blobs, sensor
//! regions as solid or checkerboard patches and light reflections as wide
//! soft blobs. Every primitive is surrounded by a light-leakage shoulder,
//! which mirrors how back-lit defects bloom on a line-scan frame and keeps
//! them comfortably detectable by stage I.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::classify::RegionClass;
use crate::error::{Error, Result};
use crate::imaging::{BBox, GrayImage};
use crate::proposals::{iou, Region};

/// Width of the linear light-leakage shoulder around hard primitives, px.
const GLOW: f64 = 6.0;

/// Background plane: mean intensity plus i.i.d. Gaussian noise.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BackgroundSpec {
    pub mean: u8,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorPattern {
    /// Uniform bright patch (camera/speaker cutout).
    Solid,
    /// QR-like seeded checkerboard with the given cell size; the four
    /// corner cells are always bright so the footprint spans the rect.
    Checkerboard { cell: u32 },
}

/// One renderable primitive.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectSpec {
    Scratch {
        /// Polyline control points.
        points: Vec<(f64, f64)>,
        /// Core width in pixels (1–3).
        width: f64,
        intensity: u8,
    },
    Pit {
        center: (f64, f64),
        /// Core radius in pixels (2–6).
        radius: f64,
        intensity: u8,
    },
    Crack {
        /// Main polyline.
        trunk: Vec<(f64, f64)>,
        /// Branch polylines; each starts near some trunk point.
        branches: Vec<Vec<(f64, f64)>>,
        width: f64,
        intensity: u8,
    },
    Dust {
        center: (f64, f64),
        /// Gaussian radius; small sigmas make pit-like hard negatives.
        sigma: f64,
        peak: u8,
    },
    SensorRegion {
        x0: u32,
        y0: u32,
        w: u32,
        h: u32,
        pattern: SensorPattern,
        intensity: u8,
    },
    LightReflection {
        center: (f64, f64),
        sigma_x: f64,
        sigma_y: f64,
        peak: u8,
    },
}

impl DefectSpec {
    pub fn class(&self) -> RegionClass {
        match self {
            DefectSpec::Scratch { .. } => RegionClass::Scratch,
            DefectSpec::Pit { .. } => RegionClass::Pit,
            DefectSpec::Crack { .. } => RegionClass::Crack,
            DefectSpec::Dust { .. } => RegionClass::Dust,
            DefectSpec::SensorRegion { .. } => RegionClass::SensorRegion,
            DefectSpec::LightReflection { .. } => RegionClass::LightReflection,
        }
    }

    fn intensity(&self) -> u8 {
        match self {
            DefectSpec::Scratch { intensity, .. }
            | DefectSpec::Crack { intensity, .. }
            | DefectSpec::Pit { intensity, .. }
            | DefectSpec::SensorRegion { intensity, .. } => *intensity,
            DefectSpec::Dust { peak, .. } | DefectSpec::LightReflection { peak, .. } => *peak,
        }
    }
}

/// Full description of one synthetic frame.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GlassSpec {
    pub width: u32,
    pub height: u32,
    pub background: BackgroundSpec,
    pub defects: Vec<DefectSpec>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TruthEntry {
    pub bbox: BBox,
    pub class: RegionClass,
}

/// Exact per-primitive ground truth for one generated frame.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct GroundTruth {
    pub entries: Vec<TruthEntry>,
}

impl GroundTruth {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("truth serializes")
    }

    pub fn read(path: &Path) -> Result<GroundTruth> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Load(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

fn dist_point_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (px, py) = (p.0 - a.0, p.1 - a.1);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((px * dx + py * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (cx * cx + cy * cy).sqrt()
}

fn dist_polyline(p: (f64, f64), points: &[(f64, f64)]) -> f64 {
    if points.len() == 1 {
        return dist_point_segment(p, points[0], points[0]);
    }
    points
        .windows(2)
        .map(|w| dist_point_segment(p, w[0], w[1]))
        .fold(f64::INFINITY, f64::min)
}

/// Absolute intensity contributed by a hard core of the given intensity at
/// distance `d` beyond the core edge, with the linear glow shoulder.
fn shoulder(d: f64, intensity: f64, bg: f64) -> f64 {
    if d <= 0.0 {
        intensity
    } else if d >= GLOW {
        0.0
    } else {
        bg + (intensity - bg) * (1.0 - d / GLOW)
    }
}

struct Rendered {
    /// Pixels (x, y, value) with value above background.
    pixels: Vec<(u32, u32, f64)>,
    /// Tight bbox of pixels at or above the footprint cut.
    footprint: Option<BBox>,
}

fn render_primitive(
    defect: &DefectSpec,
    spec: &GlassSpec,
    index: usize,
    cut: f64,
) -> Result<Rendered> {
    let bg = f64::from(spec.background.mean);
    let (w, h) = (spec.width, spec.height);
    let mut pixels = Vec::new();
    let mut fp: Option<(u32, u32, u32, u32)> = None;
    let mut emit = |x: i64, y: i64, value: f64| {
        if x < 0 || y < 0 || x >= i64::from(w) || y >= i64::from(h) || value <= bg {
            return;
        }
        let (x, y) = (x as u32, y as u32);
        pixels.push((x, y, value));
        if value >= cut {
            fp = Some(match fp {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
    };

    match defect {
        DefectSpec::Scratch {
            points,
            width,
            intensity,
        }
        | DefectSpec::Crack {
            trunk: points,
            width,
            intensity,
            ..
        } => {
            if points.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "primitive {index}: polyline has no points"
                )));
            }
            if !(1.0..=3.0).contains(width) {
                return Err(Error::InvalidArgument(format!(
                    "primitive {index}: line width {width} outside [1, 3]"
                )));
            }
            let mut polylines: Vec<&[(f64, f64)]> = vec![points];
            if let DefectSpec::Crack { branches, .. } = defect {
                for b in branches {
                    if b.is_empty() {
                        return Err(Error::InvalidArgument(format!(
                            "primitive {index}: empty crack branch"
                        )));
                    }
                    polylines.push(b);
                }
            }
            let reach = width / 2.0 + GLOW;
            for line in polylines {
                let min_x = line.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
                let max_x = line.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
                let min_y = line.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
                let max_y = line.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
                for y in (min_y - reach).floor() as i64..=(max_y + reach).ceil() as i64 {
                    for x in (min_x - reach).floor() as i64..=(max_x + reach).ceil() as i64 {
                        let d = dist_polyline((x as f64, y as f64), line) - width / 2.0;
                        emit(x, y, shoulder(d, f64::from(*intensity), bg));
                    }
                }
            }
        }
        DefectSpec::Pit {
            center,
            radius,
            intensity,
        } => {
            if !(2.0..=6.0).contains(radius) {
                return Err(Error::InvalidArgument(format!(
                    "primitive {index}: pit radius {radius} outside [2, 6]"
                )));
            }
            let reach = radius + GLOW;
            for y in (center.1 - reach).floor() as i64..=(center.1 + reach).ceil() as i64 {
                for x in (center.0 - reach).floor() as i64..=(center.0 + reach).ceil() as i64 {
                    let r = ((x as f64 - center.0).powi(2) + (y as f64 - center.1).powi(2)).sqrt();
                    emit(x, y, shoulder(r - radius, f64::from(*intensity), bg));
                }
            }
        }
        DefectSpec::Dust { center, sigma, peak } => {
            if !(2.5..=8.0).contains(sigma) {
                return Err(Error::InvalidArgument(format!(
                    "primitive {index}: dust sigma {sigma} outside [2.5, 8]"
                )));
            }
            let reach = 4.0 * sigma;
            for y in (center.1 - reach).floor() as i64..=(center.1 + reach).ceil() as i64 {
                for x in (center.0 - reach).floor() as i64..=(center.0 + reach).ceil() as i64 {
                    let r2 = (x as f64 - center.0).powi(2) + (y as f64 - center.1).powi(2);
                    let v = bg + (f64::from(*peak) - bg) * (-r2 / (2.0 * sigma * sigma)).exp();
                    emit(x, y, v);
                }
            }
        }
        DefectSpec::LightReflection {
            center,
            sigma_x,
            sigma_y,
            peak,
        } => {
            if !(6.0..=40.0).contains(sigma_x) || !(6.0..=40.0).contains(sigma_y) {
                return Err(Error::InvalidArgument(format!(
                    "primitive {index}: reflection sigmas ({sigma_x}, {sigma_y}) outside [6, 40]"
                )));
            }
            let (rx, ry) = (4.0 * sigma_x, 4.0 * sigma_y);
            for y in (center.1 - ry).floor() as i64..=(center.1 + ry).ceil() as i64 {
                for x in (center.0 - rx).floor() as i64..=(center.0 + rx).ceil() as i64 {
                    let nx = (x as f64 - center.0) / sigma_x;
                    let ny = (y as f64 - center.1) / sigma_y;
                    let v = bg + (f64::from(*peak) - bg) * (-(nx * nx + ny * ny) / 2.0).exp();
                    emit(x, y, v);
                }
            }
        }
        DefectSpec::SensorRegion {
            x0,
            y0,
            w: rw,
            h: rh,
            pattern,
            intensity,
        } => {
            if *rw < 16 || *rh < 16 {
                return Err(Error::InvalidArgument(format!(
                    "primitive {index}: sensor region must be at least 16x16"
                )));
            }
            match pattern {
                SensorPattern::Solid => {
                    for y in *y0..y0 + rh {
                        for x in *x0..x0 + rw {
                            emit(i64::from(x), i64::from(y), f64::from(*intensity));
                        }
                    }
                }
                SensorPattern::Checkerboard { cell } => {
                    if *cell < 3 || *cell * 2 > (*rw).min(*rh) {
                        return Err(Error::InvalidArgument(format!(
                            "primitive {index}: checkerboard cell {cell} does not fit"
                        )));
                    }
                    let cells_x = rw.div_ceil(*cell);
                    let cells_y = rh.div_ceil(*cell);
                    let mut cell_rng =
                        ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x5EED + index as u64));
                    let mut bright = vec![false; (cells_x * cells_y) as usize];
                    for b in bright.iter_mut() {
                        *b = cell_rng.gen_bool(0.55);
                    }
                    // Corner cells always bright: the footprint then spans
                    // the whole rect.
                    for cy in [0, cells_y - 1] {
                        for cx in [0, cells_x - 1] {
                            bright[(cy * cells_x + cx) as usize] = true;
                        }
                    }
                    for y in 0..*rh {
                        for x in 0..*rw {
                            let c = (y / cell) * cells_x + x / cell;
                            if bright[c as usize] {
                                emit(
                                    i64::from(x0 + x),
                                    i64::from(y0 + y),
                                    f64::from(*intensity),
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    let footprint = fp.map(|(x0, y0, x1, y1)| BBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1));
    Ok(Rendered { pixels, footprint })
}

/// Renders a frame deterministically and returns it with its ground
/// truth: one tight-bbox entry per primitive.
pub fn generate(spec: &GlassSpec) -> Result<(GrayImage, GroundTruth)> {
    if spec.width < 32 || spec.height < 32 {
        return Err(Error::InvalidArgument(format!(
            "frame must be at least 32x32, got {}x{}",
            spec.width, spec.height
        )));
    }
    if spec.background.noise_sigma < 0.0 || spec.background.noise_sigma > 2.0 {
        return Err(Error::InvalidArgument(format!(
            "noise sigma {} outside [0, 2]",
            spec.background.noise_sigma
        )));
    }
    let bg = f64::from(spec.background.mean);
    let floor = bg + 5.0 * spec.background.noise_sigma;
    for (i, d) in spec.defects.iter().enumerate() {
        let intensity = f64::from(d.intensity());
        if intensity <= floor {
            return Err(Error::InvalidArgument(format!(
                "primitive {i}: intensity {intensity} must exceed background mean + 5 sigma = {floor}"
            )));
        }
    }

    // Footprint cut: where a primitive's contribution is considered part
    // of its rendered extent. Far enough above the noise band that stage I
    // reliably sees everything inside the truth box.
    let cut = bg + (5.0 * spec.background.noise_sigma).max(8.0);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.width as usize * spec.height as usize;
    let mut canvas = vec![0.0f64; n];
    for v in canvas.iter_mut() {
        // Box-Muller keeps the dependency surface small and deterministic.
        let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = rng.gen();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        *v = bg + z * spec.background.noise_sigma;
    }

    let mut truth = GroundTruth::default();
    for (i, defect) in spec.defects.iter().enumerate() {
        let rendered = render_primitive(defect, spec, i, cut)?;
        let Some(bbox) = rendered.footprint else {
            return Err(Error::InvalidArgument(format!(
                "primitive {i} ({}) renders no pixels inside the frame",
                defect.class().name()
            )));
        };
        if bbox.x0 == 0 || bbox.y0 == 0 || bbox.x1() >= spec.width || bbox.y1() >= spec.height {
            return Err(Error::InvalidArgument(format!(
                "primitive {i} ({}) touches the frame border at {bbox}",
                defect.class().name()
            )));
        }
        for (x, y, v) in rendered.pixels {
            let idx = y as usize * spec.width as usize + x as usize;
            if v > canvas[idx] {
                canvas[idx] = v;
            }
        }
        truth.entries.push(TruthEntry {
            bbox,
            class: defect.class(),
        });
    }

    let data: Vec<u8> = canvas
        .into_iter()
        .map(|v| v.round().clamp(0.0, 255.0) as u8)
        .collect();
    Ok((GrayImage::new(spec.width, spec.height, data)?, truth))
}

// ---------------------------------------------------------------------------
// Profiles and corpus generation.
// ---------------------------------------------------------------------------

/// Named parameter ranges mirroring the four evaluation-glass types:
/// clean, dust-heavy, scratch-heavy, pit+crack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Sensor regions plus sparse soft dust; no defects.
    Clean,
    /// Defect-bearing frames contaminated with many dust blobs, the small
    /// hard ones deliberately pit-like.
    Dust,
    /// Scratch-dominated defects plus background objects.
    Scratch,
    /// Pits and cracks plus background objects.
    PitCrack,
}

impl Profile {
    pub const ALL: [Profile; 4] = [
        Profile::Clean,
        Profile::Dust,
        Profile::Scratch,
        Profile::PitCrack,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Profile::Clean => "clean",
            Profile::Dust => "dust",
            Profile::Scratch => "scratch",
            Profile::PitCrack => "pit_crack",
        }
    }

    pub fn parse(name: &str) -> Result<Profile> {
        Self::ALL
            .iter()
            .copied()
            .find(|p| p.name() == name)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown profile {name:?}; expected clean, dust, scratch or pit_crack"
                ))
            })
    }
}

/// Extent estimate used for collision-free placement, px each side.
fn placement_pad() -> f64 {
    GLOW + 14.0
}

struct Placer {
    width: f64,
    height: f64,
    occupied: Vec<(f64, f64, f64, f64)>, // x0, y0, x1, y1 padded
    margin: f64,
}

impl Placer {
    fn new(width: u32, height: u32) -> Self {
        Placer {
            width: f64::from(width),
            height: f64::from(height),
            occupied: Vec::new(),
            margin: 26.0,
        }
    }

    /// Finds a top-left corner for a `w`×`h` extent, away from the frame
    /// border and from previously placed extents.
    fn place(&mut self, rng: &mut ChaCha8Rng, w: f64, h: f64) -> Option<(f64, f64)> {
        let pad = placement_pad();
        for _ in 0..600 {
            let max_x = self.width - self.margin - w;
            let max_y = self.height - self.margin - h;
            if max_x <= self.margin || max_y <= self.margin {
                return None;
            }
            let x = rng.gen_range(self.margin..max_x);
            let y = rng.gen_range(self.margin..max_y);
            let cand = (x - pad, y - pad, x + w + pad, y + h + pad);
            let clash = self
                .occupied
                .iter()
                .any(|o| cand.0 < o.2 && o.0 < cand.2 && cand.1 < o.3 && o.1 < cand.3);
            if !clash {
                self.occupied.push(cand);
                return Some((x, y));
            }
        }
        None
    }
}

struct ProfileMix {
    scratches: (usize, usize),
    pits: (usize, usize),
    cracks: (usize, usize),
    dust: (usize, usize),
    /// Dust sigma range; the low end produces pit-like hard negatives.
    dust_sigma: (f64, f64),
    sensors: (usize, usize),
    reflections: (usize, usize),
}

impl Profile {
    fn mix(self) -> ProfileMix {
        match self {
            Profile::Clean => ProfileMix {
                scratches: (0, 0),
                pits: (0, 0),
                cracks: (0, 0),
                dust: (1, 3),
                dust_sigma: (4.5, 7.0),
                sensors: (1, 2),
                reflections: (0, 0),
            },
            Profile::Dust => ProfileMix {
                scratches: (1, 2),
                pits: (1, 2),
                cracks: (0, 1),
                dust: (6, 10),
                dust_sigma: (2.6, 5.5),
                sensors: (1, 1),
                reflections: (0, 1),
            },
            Profile::Scratch => ProfileMix {
                scratches: (3, 5),
                pits: (0, 0),
                cracks: (0, 0),
                dust: (1, 3),
                dust_sigma: (4.5, 7.0),
                sensors: (1, 1),
                reflections: (0, 1),
            },
            Profile::PitCrack => ProfileMix {
                scratches: (0, 0),
                pits: (2, 3),
                cracks: (1, 2),
                dust: (1, 3),
                dust_sigma: (4.5, 7.0),
                sensors: (1, 1),
                reflections: (0, 1),
            },
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, range: (usize, usize)) -> usize {
    if range.0 == range.1 {
        range.0
    } else {
        rng.gen_range(range.0..=range.1)
    }
}

/// Jittered polyline starting at the origin with the given rough length
/// and heading; returned with its tight extent so it can be placed.
fn polyline_shape(
    rng: &mut ChaCha8Rng,
    length: f64,
    segments: usize,
) -> (Vec<(f64, f64)>, f64, f64) {
    let heading = rng.gen_range(0.0..std::f64::consts::PI);
    let mut points = vec![(0.0, 0.0)];
    let step = length / segments as f64;
    let mut angle = heading;
    for _ in 0..segments {
        angle += rng.gen_range(-0.35..0.35);
        let last = *points.last().expect("non-empty");
        points.push((last.0 + step * angle.cos(), last.1 + step * angle.sin()));
    }
    let min_x = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let min_y = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    for p in points.iter_mut() {
        p.0 -= min_x;
        p.1 -= min_y;
    }
    let w = points.iter().map(|p| p.0).fold(0.0, f64::max);
    let h = points.iter().map(|p| p.1).fold(0.0, f64::max);
    (points, w, h)
}

fn shift(points: &[(f64, f64)], dx: f64, dy: f64) -> Vec<(f64, f64)> {
    points.iter().map(|p| (p.0 + dx, p.1 + dy)).collect()
}

/// Draws a random [`GlassSpec`] for the profile. Primitives are placed
/// with generous spacing so their stage-I detections never merge or
/// suppress one another.
pub fn profile_spec(
    profile: Profile,
    width: u32,
    height: u32,
    rng: &mut ChaCha8Rng,
) -> Result<GlassSpec> {
    let mix = profile.mix();
    let mut placer = Placer::new(width, height);
    let mut defects = Vec::new();
    let mut skipped = 0usize;

    for _ in 0..draw(rng, mix.sensors) {
        let w = rng.gen_range(44..=84);
        let h = rng.gen_range(40..=72);
        let pattern = if rng.gen_bool(0.6) {
            SensorPattern::Checkerboard {
                cell: rng.gen_range(6..=9),
            }
        } else {
            SensorPattern::Solid
        };
        match placer.place(rng, f64::from(w), f64::from(h)) {
            Some((x, y)) => defects.push(DefectSpec::SensorRegion {
                x0: x as u32,
                y0: y as u32,
                w,
                h,
                pattern,
                intensity: rng.gen_range(200..=245),
            }),
            None => skipped += 1,
        }
    }
    for _ in 0..draw(rng, mix.reflections) {
        let sx = rng.gen_range(8.0..14.0);
        let sy = rng.gen_range(8.0..14.0);
        let (w, h) = (2.4 * sx * 2.0, 2.4 * sy * 2.0);
        match placer.place(rng, w, h) {
            Some((x, y)) => defects.push(DefectSpec::LightReflection {
                center: (x + w / 2.0, y + h / 2.0),
                sigma_x: sx,
                sigma_y: sy,
                peak: rng.gen_range(150..=210),
            }),
            None => skipped += 1,
        }
    }
    for _ in 0..draw(rng, mix.scratches) {
        let length = rng.gen_range(45.0..110.0);
        let (points, w, h) = polyline_shape(rng, length, 3);
        match placer.place(rng, w, h) {
            Some((x, y)) => defects.push(DefectSpec::Scratch {
                points: shift(&points, x, y),
                width: rng.gen_range(1.0..=3.0),
                intensity: rng.gen_range(215..=255),
            }),
            None => skipped += 1,
        }
    }
    for _ in 0..draw(rng, mix.cracks) {
        let length = rng.gen_range(40.0..80.0);
        let (trunk, w, h) = polyline_shape(rng, length, 3);
        let mut branches = Vec::new();
        for _ in 0..rng.gen_range(1..=2) {
            let from = trunk[rng.gen_range(1..trunk.len())];
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let blen = rng.gen_range(12.0..30.0);
            branches.push(vec![
                from,
                (from.0 + blen * angle.cos(), from.1 + blen * angle.sin()),
            ]);
        }
        // Branches extend the extent; place with slack for them.
        match placer.place(rng, w + 60.0, h + 60.0) {
            Some((x, y)) => defects.push(DefectSpec::Crack {
                trunk: shift(&trunk, x + 30.0, y + 30.0),
                branches: branches.iter().map(|b| shift(b, x + 30.0, y + 30.0)).collect(),
                width: rng.gen_range(1.0..=2.5),
                intensity: rng.gen_range(215..=255),
            }),
            None => skipped += 1,
        }
    }
    for _ in 0..draw(rng, mix.pits) {
        let radius = rng.gen_range(2.5..=6.0);
        let extent = 2.0 * (radius + GLOW);
        match placer.place(rng, extent, extent) {
            Some((x, y)) => defects.push(DefectSpec::Pit {
                center: (x + extent / 2.0, y + extent / 2.0),
                radius,
                intensity: rng.gen_range(215..=255),
            }),
            None => skipped += 1,
        }
    }
    for _ in 0..draw(rng, mix.dust) {
        let sigma = rng.gen_range(mix.dust_sigma.0..=mix.dust_sigma.1);
        let extent = 2.0 * 2.6 * sigma;
        match placer.place(rng, extent, extent) {
            Some((x, y)) => defects.push(DefectSpec::Dust {
                center: (x + extent / 2.0, y + extent / 2.0),
                sigma,
                peak: rng.gen_range(210..=250),
            }),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::debug!("profile {}: skipped {skipped} primitives for lack of space", profile.name());
    }

    Ok(GlassSpec {
        width,
        height,
        background: BackgroundSpec {
            mean: 20,
            noise_sigma: 0.8,
        },
        defects,
        seed: rng.gen(),
    })
}

/// One corpus item as recorded in the manifest.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ManifestItem {
    pub id: String,
    pub seed: u64,
    pub image: String,
    pub truth: String,
    pub image_sha256: String,
    pub truth_sha256: String,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Manifest {
    pub profile: String,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub items: Vec<ManifestItem>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Load(format!("{}: {e}", path.display())))
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Generates `n` image+truth pairs under `out_dir` with the layout
/// `images/<id>.png`, `truth/<id>.json`, `manifest.json`. Item `i` draws
/// from an independent seeded stream, so corpora are reproducible and
/// items are order-independent.
pub fn generate_corpus(
    profile: Profile,
    n: usize,
    seed: u64,
    width: u32,
    height: u32,
    out_dir: &Path,
) -> Result<Manifest> {
    if n == 0 {
        return Err(Error::InvalidArgument("corpus size must be >= 1".into()));
    }
    let images_dir = out_dir.join("images");
    let truth_dir = out_dir.join("truth");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    std::fs::create_dir_all(&truth_dir).map_err(|e| Error::io(&truth_dir, e))?;

    let mut items = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let spec = profile_spec(profile, width, height, &mut rng)?;
        let (img, truth) = generate(&spec)?;

        let id = format!("{}_{i:04}", profile.name());
        let image_rel = format!("images/{id}.png");
        let truth_rel = format!("truth/{id}.json");
        let image_path = out_dir.join(&image_rel);
        crate::imaging::save_png(&img, &image_path)?;
        truth.write(&out_dir.join(&truth_rel))?;

        let image_bytes = std::fs::read(&image_path).map_err(|e| Error::io(&image_path, e))?;
        items.push(ManifestItem {
            id,
            seed: spec.seed,
            image: image_rel,
            truth: truth_rel,
            image_sha256: sha256_hex(&image_bytes),
            truth_sha256: sha256_hex(truth.to_json().as_bytes()),
        });
    }

    let manifest = Manifest {
        profile: profile.name().to_string(),
        seed,
        width,
        height,
        items,
    };
    let manifest_path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest)
}

/// Labels stage-I regions by their best-overlapping truth entry; regions
/// without an overlap at or above `iou_thresh` stay unlabeled.
pub fn auto_label(regions: &[Region], truth: &GroundTruth, iou_thresh: f64) -> Vec<Option<RegionClass>> {
    regions
        .iter()
        .map(|r| {
            let mut best: Option<(f64, RegionClass)> = None;
            for entry in &truth.entries {
                let overlap = iou(&r.bbox, &entry.bbox);
                if overlap >= iou_thresh && best.map_or(true, |(b, _)| overlap > b) {
                    best = Some((overlap, entry.class));
                }
            }
            best.map(|(_, class)| class)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{stage_one, StageOneParams};

    fn plain_spec(defects: Vec<DefectSpec>) -> GlassSpec {
        GlassSpec {
            width: 256,
            height: 256,
            background: BackgroundSpec {
                mean: 20,
                noise_sigma: 0.0,
            },
            defects,
            seed: 7,
        }
    }

    #[test]
    fn empty_spec_renders_uniform_and_proposes_nothing() {
        let (img, truth) = generate(&plain_spec(vec![])).unwrap();
        assert!(img.data().iter().all(|&p| p == 20));
        assert!(truth.entries.is_empty());
        let regions = stage_one(&img, "t", &StageOneParams::default()).unwrap();
        assert!(regions.is_empty());
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = GlassSpec {
            background: BackgroundSpec {
                mean: 20,
                noise_sigma: 1.0,
            },
            ..plain_spec(vec![DefectSpec::Pit {
                center: (128.0, 128.0),
                radius: 4.0,
                intensity: 240,
            }])
        };
        let (a, ta) = generate(&spec).unwrap();
        let (b, tb) = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
    }

    #[test]
    fn truth_matches_primitive_counts_and_classes() {
        let spec = plain_spec(vec![
            DefectSpec::Scratch {
                points: vec![(40.0, 40.0), (90.0, 60.0)],
                width: 2.0,
                intensity: 240,
            },
            DefectSpec::Scratch {
                points: vec![(40.0, 120.0), (100.0, 130.0)],
                width: 1.5,
                intensity: 230,
            },
            DefectSpec::Scratch {
                points: vec![(40.0, 190.0), (100.0, 200.0)],
                width: 2.5,
                intensity: 250,
            },
            DefectSpec::Pit {
                center: (180.0, 60.0),
                radius: 4.0,
                intensity: 245,
            },
            DefectSpec::Pit {
                center: (180.0, 160.0),
                radius: 5.5,
                intensity: 235,
            },
        ]);
        let (img, truth) = generate(&spec).unwrap();
        let scratches = truth
            .entries
            .iter()
            .filter(|e| e.class == RegionClass::Scratch)
            .count();
        let pits = truth
            .entries
            .iter()
            .filter(|e| e.class == RegionClass::Pit)
            .count();
        assert_eq!((scratches, pits), (3, 2));
        // Tight bboxes: every border row/column of the bbox contains a
        // pixel above the footprint cut (here bg + 8 = 28).
        for e in &truth.entries {
            let b = e.bbox;
            let cut = 28u8;
            let col_hit = |x: u32| (b.y0..b.y1()).any(|y| img.get(x, y) >= cut);
            let row_hit = |y: u32| (b.x0..b.x1()).any(|x| img.get(x, y) >= cut);
            assert!(col_hit(b.x0) && col_hit(b.x1() - 1), "loose bbox {b}");
            assert!(row_hit(b.y0) && row_hit(b.y1() - 1), "loose bbox {b}");
        }
    }

    #[test]
    fn out_of_frame_primitive_is_rejected_with_index() {
        let spec = plain_spec(vec![
            DefectSpec::Pit {
                center: (128.0, 128.0),
                radius: 4.0,
                intensity: 240,
            },
            DefectSpec::Pit {
                center: (250.0, 128.0),
                radius: 4.0,
                intensity: 240,
            },
        ]);
        let err = generate(&spec).unwrap_err();
        assert!(err.to_string().contains("primitive 1"), "{err}");
    }

    #[test]
    fn intensity_below_noise_floor_is_rejected() {
        let spec = GlassSpec {
            background: BackgroundSpec {
                mean: 200,
                noise_sigma: 2.0,
            },
            ..plain_spec(vec![DefectSpec::Pit {
                center: (128.0, 128.0),
                radius: 4.0,
                intensity: 205,
            }])
        };
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn corpus_round_trip_and_clean_profile_definition() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_corpus(Profile::Clean, 5, 99, 256, 320, dir.path()).unwrap();
        assert_eq!(manifest.items.len(), 5);
        for item in &manifest.items {
            let truth = GroundTruth::read(&dir.path().join(&item.truth)).unwrap();
            // Clean frames: sensor regions and sparse dust only.
            for e in &truth.entries {
                assert!(
                    matches!(e.class, RegionClass::SensorRegion | RegionClass::Dust),
                    "clean corpus contained {:?}",
                    e.class
                );
            }
            // Truth bboxes keep clear of the borders.
            for e in &truth.entries {
                assert!(e.bbox.x0 > 0 && e.bbox.y0 > 0);
                assert!(e.bbox.x1() < manifest.width && e.bbox.y1() < manifest.height);
            }
        }
    }

    #[test]
    fn corpus_regeneration_is_identical() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let a = generate_corpus(Profile::Scratch, 2, 41, 256, 320, dir_a.path()).unwrap();
        let b = generate_corpus(Profile::Scratch, 2, 41, 256, 320, dir_b.path()).unwrap();
        for (ia, ib) in a.items.iter().zip(&b.items) {
            assert_eq!(ia.image_sha256, ib.image_sha256);
            assert_eq!(ia.truth_sha256, ib.truth_sha256);
        }
        // Different items have different content.
        assert_ne!(a.items[0].image_sha256, a.items[1].image_sha256);
    }

    #[test]
    fn corpus_rejects_zero_items_and_unknown_profile() {
        let dir = tempfile::tempdir().unwrap();
        assert!(generate_corpus(Profile::Clean, 0, 1, 256, 256, dir.path()).is_err());
        assert!(Profile::parse("sparkle").is_err());
    }

    #[test]
    fn stage_one_finds_every_truth_box() {
        // The detectability contract at a small scale: every truth bbox is
        // overlapped by a proposal at IoU >= 0.5.
        let dir = tempfile::tempdir().unwrap();
        for profile in Profile::ALL {
            let manifest =
                generate_corpus(profile, 4, 7, 320, 384, &dir.path().join(profile.name()))
                    .unwrap();
            for item in &manifest.items {
                let img = crate::imaging::load_gray(
                    &dir.path().join(profile.name()).join(&item.image),
                    false,
                )
                .unwrap();
                let truth =
                    GroundTruth::read(&dir.path().join(profile.name()).join(&item.truth)).unwrap();
                let regions = stage_one(&img, &item.id, &StageOneParams::default()).unwrap();
                for e in &truth.entries {
                    let best = regions
                        .iter()
                        .map(|r| iou(&r.bbox, &e.bbox))
                        .fold(0.0, f64::max);
                    assert!(
                        best >= 0.5,
                        "{}/{}: {:?} at {} best IoU {best:.3}",
                        profile.name(),
                        item.id,
                        e.class,
                        e.bbox
                    );
                }
            }
        }
    }
}
