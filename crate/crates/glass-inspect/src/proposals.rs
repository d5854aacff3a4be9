//! Stage I region selection: detection scores, IoU, greedy non-maximum
//! suppression and normalization of surviving regions to square 224×224
//! crops.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::{BBox, GrayImage, PixelRegion};

/// Side length of the square crops fed to the embedding stage.
pub const CROP_SIDE: u32 = 224;

/// A scored bounding box proposed by stage I.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Region {
    pub bbox: BBox,
    /// Detection score; with the default rule this equals the pixel area.
    pub score: f64,
    /// Number of component pixels behind the box.
    pub area: usize,
    /// Identifier of the originating image.
    pub source_id: String,
}

/// A 224×224 patch cut from a proposal, zero-padded to square before the
/// resize. `pad` records the (left, top) padding so the pre-resize square
/// can be reconstructed.
#[derive(Debug, Clone, PartialEq)]
pub struct Crop {
    pub pixels: GrayImage,
    pub origin: Region,
    pub pad: (u32, u32),
}

impl Crop {
    /// Side of the padded square the crop was resized from.
    pub fn square_side(&self) -> u32 {
        self.origin.bbox.w.max(self.origin.bbox.h)
    }

    /// Stable file/cache identifier: `<source_id>_<index>`.
    pub fn id(source_id: &str, index: usize) -> String {
        format!("{source_id}_{index}")
    }
}

/// Scores a connected component: the default detection score is its pixel
/// area, which prefers large continuous regions as suppression anchors.
pub fn score_region(r: &PixelRegion, source_id: &str) -> Region {
    Region {
        bbox: r.bbox,
        score: r.area as f64,
        area: r.area,
        source_id: source_id.to_string(),
    }
}

/// Intersection over union of two boxes; 0 when disjoint.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix0 = a.x0.max(b.x0);
    let iy0 = a.y0.max(b.y0);
    let ix1 = a.x1().min(b.x1());
    let iy1 = a.y1().min(b.y1());
    if ix1 <= ix0 || iy1 <= iy0 {
        return 0.0;
    }
    let inter = u64::from(ix1 - ix0) * u64::from(iy1 - iy0);
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Ordering used to break score ties in [`nms`]: lexicographic ascending on
/// `(y0, x0, x1, y1)`.
fn tie_key(r: &Region) -> (u32, u32, u32, u32) {
    (r.bbox.y0, r.bbox.x0, r.bbox.x1(), r.bbox.y1())
}

/// Greedy non-maximum suppression.
///
/// Repeatedly moves the highest-score region to the output and removes
/// every remaining region with IoU ≥ `t_nms` against it. Output is in
/// selection order, so scores are non-increasing.
pub fn nms(regions: &[Region], t_nms: f64) -> Result<Vec<Region>> {
    if !(0.0..=1.0).contains(&t_nms) {
        return Err(Error::InvalidArgument(format!(
            "t_nms must lie in [0, 1], got {t_nms}"
        )));
    }
    let mut remaining: Vec<&Region> = regions.iter().collect();
    let mut kept = Vec::new();
    while !remaining.is_empty() {
        let best = remaining
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                b.score
                    .partial_cmp(&a.score)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| tie_key(a).cmp(&tie_key(b)))
            })
            .map(|(i, _)| i)
            .expect("remaining is non-empty");
        let anchor = remaining.swap_remove(best).clone();
        remaining.retain(|r| iou(&anchor.bbox, &r.bbox) < t_nms);
        kept.push(anchor);
    }
    Ok(kept)
}

/// Cuts the region's patch, zero-pads it to a square of side `max(w, h)`
/// (split evenly, extra pixel on the right/bottom) and resizes to
/// 224×224 by nearest neighbor.
///
/// The nearest-neighbor map is `src = dst * side / 224` with integer
/// (floor) division.
pub fn extract_crop(img: &GrayImage, region: &Region) -> Result<Crop> {
    let b = &region.bbox;
    if b.x1() > img.width() || b.y1() > img.height() || b.w == 0 || b.h == 0 {
        return Err(Error::InvalidArgument(format!(
            "region {b} out of bounds for {}x{} image",
            img.width(),
            img.height()
        )));
    }
    let side = b.w.max(b.h);
    let pad_left = (side - b.w) / 2;
    let pad_top = (side - b.h) / 2;

    let mut square = GrayImage::filled(side, side, 0)?;
    for y in 0..b.h {
        for x in 0..b.w {
            square.set(x + pad_left, y + pad_top, img.get(b.x0 + x, b.y0 + y));
        }
    }

    let mut out = GrayImage::filled(CROP_SIDE, CROP_SIDE, 0)?;
    for y in 0..CROP_SIDE {
        let sy = (u64::from(y) * u64::from(side) / u64::from(CROP_SIDE)) as u32;
        for x in 0..CROP_SIDE {
            let sx = (u64::from(x) * u64::from(side) / u64::from(CROP_SIDE)) as u32;
            out.set(x, y, square.get(sx, sy));
        }
    }
    Ok(Crop {
        pixels: out,
        origin: region.clone(),
        pad: (pad_left, pad_top),
    })
}

// ---------------------------------------------------------------------------
// Proposal file format: one `source_id x0 y0 w h score` line per region.
// ---------------------------------------------------------------------------

pub fn write_proposals(regions: &[Region], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for r in regions {
        writeln!(
            out,
            "{} {} {} {} {} {}",
            r.source_id, r.bbox.x0, r.bbox.y0, r.bbox.w, r.bbox.h, r.score
        )
        .expect("writing to Vec cannot fail");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_proposals(path: &Path) -> Result<Vec<Region>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut regions = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::Load(format!(
                "{}:{}: expected 6 fields, got {}",
                path.display(),
                lineno + 1,
                fields.len()
            )));
        }
        let parse_err = |what: &str| {
            Error::Load(format!("{}:{}: bad {what}", path.display(), lineno + 1))
        };
        let bbox = BBox::new(
            fields[1].parse().map_err(|_| parse_err("x0"))?,
            fields[2].parse().map_err(|_| parse_err("y0"))?,
            fields[3].parse().map_err(|_| parse_err("w"))?,
            fields[4].parse().map_err(|_| parse_err("h"))?,
        );
        let score: f64 = fields[5].parse().map_err(|_| parse_err("score"))?;
        regions.push(Region {
            bbox,
            score,
            area: 0,
            source_id: fields[0].to_string(),
        });
    }
    Ok(regions)
}
