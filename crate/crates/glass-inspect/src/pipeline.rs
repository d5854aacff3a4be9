//! Stage I composition: gradient → threshold → dilation → connected
//! components → scoring → minimum-area filter → NMS, with optional
//! overlapping-tile processing for frames too large to touch monolithically.

use crate::error::{Error, Result};
use crate::imaging::{
    connected_regions, dilate, sobel_magnitude, threshold_binary, BBox, GrayImage,
};
use crate::proposals::{extract_crop, nms, score_region, Crop, Region};

/// Stage I knobs. Defaults follow the production profile: Sobel kernel 5,
/// binary threshold 200, 3×3 dilation, NMS threshold 0.2.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageOneParams {
    pub sobel_kernel: u32,
    pub binary_threshold: u8,
    pub dilate_kw: u32,
    pub dilate_kh: u32,
    pub t_nms: f64,
    /// Components smaller than this many pixels are discarded before NMS;
    /// 1 keeps everything.
    pub min_region_area: usize,
    /// Frames wider or taller than this are processed in overlapping
    /// tiles with cross-tile NMS.
    pub tile_size: u32,
    /// Tile overlap; set it to at least twice the largest expected defect
    /// extent so every defect lies fully inside some tile.
    pub tile_overlap: u32,
}

impl Default for StageOneParams {
    fn default() -> Self {
        StageOneParams {
            sobel_kernel: 5,
            binary_threshold: 200,
            dilate_kw: 3,
            dilate_kh: 3,
            t_nms: 0.2,
            min_region_area: 1,
            tile_size: 4096,
            tile_overlap: 512,
        }
    }
}

impl StageOneParams {
    pub fn validate(&self) -> Result<()> {
        if ![3, 5, 7].contains(&self.sobel_kernel) {
            return Err(Error::Config(format!(
                "sobel_kernel must be 3, 5 or 7, got {}",
                self.sobel_kernel
            )));
        }
        if self.dilate_kw % 2 == 0 || self.dilate_kh % 2 == 0 {
            return Err(Error::Config(format!(
                "dilation kernel must be odd, got ({}, {})",
                self.dilate_kw, self.dilate_kh
            )));
        }
        if !(0.0..=1.0).contains(&self.t_nms) {
            return Err(Error::Config(format!(
                "t_nms must lie in [0, 1], got {}",
                self.t_nms
            )));
        }
        if self.min_region_area == 0 {
            return Err(Error::Config("min_region_area must be >= 1".into()));
        }
        if self.tile_size < 64 {
            return Err(Error::Config("tile_size must be >= 64".into()));
        }
        if self.tile_overlap >= self.tile_size {
            return Err(Error::Config(
                "tile_overlap must be smaller than tile_size".into(),
            ));
        }
        Ok(())
    }
}

fn crop_rect(img: &GrayImage, rect: BBox) -> GrayImage {
    let mut data = Vec::with_capacity(rect.w as usize * rect.h as usize);
    for y in rect.y0..rect.y1() {
        for x in rect.x0..rect.x1() {
            data.push(img.get(x, y));
        }
    }
    GrayImage::new(rect.w, rect.h, data).expect("rect within bounds")
}

/// Raw component boxes of one frame (or tile): Sobel, threshold, dilate,
/// connected components, minimum-area filter, scoring. No NMS here.
fn propose_raw(img: &GrayImage, source_id: &str, p: &StageOneParams) -> Result<Vec<Region>> {
    let grad = sobel_magnitude(img, p.sobel_kernel)?;
    let mask = threshold_binary(&grad, p.binary_threshold);
    let dilated = dilate(&mask, p.dilate_kw, p.dilate_kh)?;
    Ok(connected_regions(&dilated)
        .iter()
        .filter(|r| r.area >= p.min_region_area)
        .map(|r| score_region(r, source_id))
        .collect())
}

/// Runs stage I on a full frame, tiling it when it exceeds `tile_size`.
///
/// Tiles overlap by `tile_overlap`; a region that touches an interior tile
/// edge is dropped from that tile unless it spans at least half the
/// overlap, because the neighboring tile sees it whole. Cross-tile
/// duplicates are removed by the final NMS pass.
pub fn stage_one(img: &GrayImage, source_id: &str, p: &StageOneParams) -> Result<Vec<Region>> {
    p.validate()?;
    if img.width() <= p.tile_size && img.height() <= p.tile_size {
        let regions = propose_raw(img, source_id, p)?;
        return nms(&regions, p.t_nms);
    }

    let step = (p.tile_size - p.tile_overlap) as u64;
    let mut collected = Vec::new();
    let mut ty = 0u64;
    while ty < u64::from(img.height()) {
        let y0 = ty as u32;
        let h = p.tile_size.min(img.height() - y0);
        let mut tx = 0u64;
        while tx < u64::from(img.width()) {
            let x0 = tx as u32;
            let w = p.tile_size.min(img.width() - x0);
            let rect = BBox::new(x0, y0, w, h);
            let tile = crop_rect(img, rect);
            for mut region in propose_raw(&tile, source_id, p)? {
                let b = region.bbox;
                let touches_interior = (b.x0 == 0 && x0 > 0)
                    || (b.y0 == 0 && y0 > 0)
                    || (b.x1() == w && x0 + w < img.width())
                    || (b.y1() == h && y0 + h < img.height());
                let spans_half_overlap =
                    b.w >= p.tile_overlap / 2 || b.h >= p.tile_overlap / 2;
                if touches_interior && !spans_half_overlap {
                    continue;
                }
                region.bbox = BBox::new(b.x0 + x0, b.y0 + y0, b.w, b.h);
                collected.push(region);
            }
            if x0 + w >= img.width() {
                break;
            }
            tx += step;
        }
        if y0 + h >= img.height() {
            break;
        }
        ty += step;
    }
    // Identical duplicates from overlapping tiles have IoU 1 and collapse
    // in this pass.
    nms(&collected, p.t_nms)
}

/// Cuts the 224×224 crop of every region, preserving order.
pub fn crops_for_regions(img: &GrayImage, regions: &[Region]) -> Result<Vec<Crop>> {
    regions.iter().map(|r| extract_crop(img, r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blank_image_yields_no_proposals() {
        let img = GrayImage::filled(256, 256, 20).unwrap();
        let regions = stage_one(&img, "blank", &StageOneParams::default()).unwrap();
        assert!(regions.is_empty());
    }

    fn paint_disc(img: &mut GrayImage, cx: i64, cy: i64, r: i64, v: u8) {
        for y in (cy - r).max(0)..=(cy + r).min(i64::from(img.height()) - 1) {
            for x in (cx - r).max(0)..=(cx + r).min(i64::from(img.width()) - 1) {
                if (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r {
                    img.set(x as u32, y as u32, v);
                }
            }
        }
    }

    #[test]
    fn bright_disc_is_proposed() {
        let mut img = GrayImage::filled(300, 300, 20).unwrap();
        paint_disc(&mut img, 150, 150, 5, 250);
        let regions = stage_one(&img, "disc", &StageOneParams::default()).unwrap();
        assert_eq!(regions.len(), 1);
        let b = regions[0].bbox;
        assert!(b.contains(150, 150), "bbox {b} should contain the disc");
    }

    #[test]
    fn tiled_matches_monolithic_for_separated_defects() {
        let mut img = GrayImage::filled(600, 400, 20).unwrap();
        paint_disc(&mut img, 80, 80, 4, 250);
        paint_disc(&mut img, 500, 300, 5, 250);
        paint_disc(&mut img, 300, 200, 3, 250);

        let mono = stage_one(&img, "t", &StageOneParams::default()).unwrap();
        let tiled_params = StageOneParams {
            tile_size: 256,
            tile_overlap: 64,
            ..StageOneParams::default()
        };
        let tiled = stage_one(&img, "t", &tiled_params).unwrap();

        let key = |r: &Region| (r.bbox.x0, r.bbox.y0, r.bbox.w, r.bbox.h);
        let mut a: Vec<_> = mono.iter().map(key).collect();
        let mut b: Vec<_> = tiled.iter().map(key).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
    }

    #[test]
    fn min_area_filter_drops_specks() {
        let mut img = GrayImage::filled(128, 128, 20).unwrap();
        img.set(64, 64, 255); // single-pixel speck
        paint_disc(&mut img, 30, 30, 5, 250);
        let loose = StageOneParams::default();
        let strict = StageOneParams {
            min_region_area: 60,
            ..StageOneParams::default()
        };
        let all = stage_one(&img, "s", &loose).unwrap();
        let filtered = stage_one(&img, "s", &strict).unwrap();
        assert!(all.len() > filtered.len());
        assert_eq!(filtered.len(), 1);
    }

    #[test]
    fn params_validation() {
        let mut p = StageOneParams::default();
        p.sobel_kernel = 4;
        assert!(p.validate().is_err());
        p = StageOneParams::default();
        p.t_nms = 1.5;
        assert!(p.validate().is_err());
        p = StageOneParams::default();
        p.tile_overlap = p.tile_size;
        assert!(p.validate().is_err());
    }
}
