//! Raster primitives for stage I: grayscale images, Sobel gradient
//! magnitude, binary thresholding, morphological dilation and 8-connected
//! component extraction.
//!
//! All operations are pure functions of their inputs and safe to call
//! concurrently on shared images.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// Axis-aligned integer bounding box, `x0/y0` top-left, `w/h ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct BBox {
    pub x0: u32,
    pub y0: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn new(x0: u32, y0: u32, w: u32, h: u32) -> Self {
        BBox { x0, y0, w, h }
    }

    /// Exclusive right edge.
    pub fn x1(&self) -> u32 {
        self.x0 + self.w
    }

    /// Exclusive bottom edge.
    pub fn y1(&self) -> u32 {
        self.y0 + self.h
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1() && y >= self.y0 && y < self.y1()
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{} {} {} {}]", self.x0, self.y0, self.w, self.h)
    }
}

/// Single-channel 8-bit raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize;
        if data.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "image data length {} does not match {width}x{height} = {expected}",
                data.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Result<Self> {
        GrayImage::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        debug_assert!(x < self.width && y < self.height);
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y as usize * self.width as usize + x as usize] = v;
    }

    /// Pixel lookup with edge replication for out-of-range coordinates.
    #[inline]
    fn get_clamped(&self, x: i64, y: i64) -> u8 {
        let xc = x.clamp(0, i64::from(self.width) - 1) as u32;
        let yc = y.clamp(0, i64::from(self.height) - 1) as u32;
        self.get(xc, yc)
    }
}

/// Boolean mask with the same layout as [`GrayImage`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: u32,
    height: u32,
    data: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: u32, height: u32, data: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "mask dimensions must be positive, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize;
        if data.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "mask data length {} does not match {width}x{height} = {expected}",
                data.len()
            )));
        }
        Ok(BinaryImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, value: bool) -> Result<Self> {
        BinaryImage::new(width, height, vec![value; width as usize * height as usize])
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        debug_assert!(x < self.width && y < self.height);
        self.data[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        debug_assert!(x < self.width && y < self.height);
        self.data[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn count_true(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// One 8-connected component of true pixels with its tight bounding box.
#[derive(Debug, Clone)]
pub struct PixelRegion {
    pub pixels: Vec<(u32, u32)>,
    pub bbox: BBox,
    pub area: usize,
}

/// Separable Sobel kernel pair for a given size: (smoothing, derivative).
///
/// The derivative axis gets `deriv`, the orthogonal axis `smooth`; both
/// follow the classical binomial construction, so size 3 is the familiar
/// [-1 0 1] x [1 2 1] operator.
fn sobel_kernels(kernel_size: u32) -> Result<(&'static [i32], &'static [i32])> {
    match kernel_size {
        3 => Ok((&[1, 2, 1], &[-1, 0, 1])),
        5 => Ok((&[1, 4, 6, 4, 1], &[-1, -2, 0, 2, 1])),
        7 => Ok((&[1, 6, 15, 20, 15, 6, 1], &[-1, -4, -5, 0, 5, 4, 1])),
        other => Err(Error::InvalidArgument(format!(
            "unsupported Sobel kernel size {other}; expected 3, 5 or 7"
        ))),
    }
}

/// Per-pixel gradient magnitude `|Gx| + |Gy|`, saturating-clamped to
/// `[0, 255]`. Borders are handled by edge replication.
pub fn sobel_magnitude(img: &GrayImage, kernel_size: u32) -> Result<GrayImage> {
    let (smooth, deriv) = sobel_kernels(kernel_size)?;
    let r = (kernel_size / 2) as i64;
    let w = img.width() as usize;
    let h = img.height() as usize;

    // Separable pass 1: vertical filtering. col_smooth feeds Gx (derivative
    // is then taken horizontally), col_deriv feeds Gy.
    let mut col_smooth = vec![0i32; w * h];
    let mut col_deriv = vec![0i32; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0i32;
            let mut d = 0i32;
            for (t, (&ks, &kd)) in smooth.iter().zip(deriv.iter()).enumerate() {
                let p = i32::from(img.get_clamped(x as i64, y as i64 + t as i64 - r));
                s += ks * p;
                d += kd * p;
            }
            col_smooth[y * w + x] = s;
            col_deriv[y * w + x] = d;
        }
    }

    // Separable pass 2: horizontal filtering. Intermediate values come from
    // replicated-edge pixels, so clamping the column index here reproduces
    // dense 2-D convolution with edge replication exactly.
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut gx = 0i32;
            let mut gy = 0i32;
            for (t, (&ks, &kd)) in smooth.iter().zip(deriv.iter()).enumerate() {
                let xc = (x as i64 + t as i64 - r).clamp(0, w as i64 - 1) as usize;
                gx += kd * col_smooth[y * w + xc];
                gy += ks * col_deriv[y * w + xc];
            }
            out[y * w + x] = (gx.abs() + gy.abs()).min(255) as u8;
        }
    }
    GrayImage::new(img.width(), img.height(), out)
}

/// Binary mask: output pixel is true iff the input pixel is strictly
/// greater than `t`, so the threshold value itself maps to background.
pub fn threshold_binary(img: &GrayImage, t: u8) -> BinaryImage {
    let data = img.data().iter().map(|&p| p > t).collect();
    BinaryImage::new(img.width(), img.height(), data).expect("same dimensions as input")
}

/// Morphological dilation with a `kw`×`kh` window; pixels outside the image
/// are treated as false.
pub fn dilate(mask: &BinaryImage, kw: u32, kh: u32) -> Result<BinaryImage> {
    if kw % 2 == 0 || kh % 2 == 0 || kw == 0 || kh == 0 {
        return Err(Error::InvalidArgument(format!(
            "dilation kernel must have odd positive dimensions, got ({kw}, {kh})"
        )));
    }
    let rx = i64::from(kw / 2);
    let ry = i64::from(kh / 2);
    let w = i64::from(mask.width());
    let h = i64::from(mask.height());
    let mut out = BinaryImage::filled(mask.width(), mask.height(), false)?;
    // Painting the window around every set pixel touches each output pixel
    // once per nearby set pixel; fine at the densities stage I produces.
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x as u32, y as u32) {
                continue;
            }
            for dy in -ry..=ry {
                for dx in -rx..=rx {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && nx < w && ny >= 0 && ny < h {
                        out.set(nx as u32, ny as u32, true);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Extracts the 8-connected components of true pixels.
///
/// Regions are sorted by area descending, ties by `(y0, x0)` of the
/// bounding box ascending. The regions partition the true-pixel set.
pub fn connected_regions(mask: &BinaryImage) -> Vec<PixelRegion> {
    let w = mask.width();
    let h = mask.height();
    let mut visited = vec![false; w as usize * h as usize];
    let mut regions = Vec::new();
    let idx = |x: u32, y: u32| y as usize * w as usize + x as usize;

    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) || visited[idx(x, y)] {
                continue;
            }
            let mut pixels = Vec::new();
            let mut queue = VecDeque::new();
            visited[idx(x, y)] = true;
            queue.push_back((x, y));
            let (mut min_x, mut min_y, mut max_x, mut max_y) = (x, y, x, y);
            while let Some((cx, cy)) = queue.pop_front() {
                pixels.push((cx, cy));
                min_x = min_x.min(cx);
                min_y = min_y.min(cy);
                max_x = max_x.max(cx);
                max_y = max_y.max(cy);
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let nx = cx as i64 + dx;
                        let ny = cy as i64 + dy;
                        if nx < 0 || ny < 0 || nx >= i64::from(w) || ny >= i64::from(h) {
                            continue;
                        }
                        let (nx, ny) = (nx as u32, ny as u32);
                        if mask.get(nx, ny) && !visited[idx(nx, ny)] {
                            visited[idx(nx, ny)] = true;
                            queue.push_back((nx, ny));
                        }
                    }
                }
            }
            let area = pixels.len();
            regions.push(PixelRegion {
                pixels,
                bbox: BBox::new(min_x, min_y, max_x - min_x + 1, max_y - min_y + 1),
                area,
            });
        }
    }

    regions.sort_by(|a, b| {
        b.area
            .cmp(&a.area)
            .then(a.bbox.y0.cmp(&b.bbox.y0))
            .then(a.bbox.x0.cmp(&b.bbox.x0))
    });
    regions
}

// ---------------------------------------------------------------------------
// Image file I/O: 8-bit grayscale PNG and binary PGM (P5).
// ---------------------------------------------------------------------------

/// Loads an 8-bit grayscale image from a PNG or PGM (P5) file.
///
/// Multi-channel input is rejected unless `luma` is set, in which case the
/// standard luminance conversion `0.299 R + 0.587 G + 0.114 B` (rounded
/// half-up) is applied.
pub fn load_gray(path: &Path, luma: bool) -> Result<GrayImage> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    if ext == "pgm" {
        return load_pgm(path);
    }
    let dynimg = image::open(path).map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    match dynimg {
        image::DynamicImage::ImageLuma8(buf) => {
            GrayImage::new(buf.width(), buf.height(), buf.into_raw())
        }
        other => {
            if !luma {
                return Err(Error::InvalidArgument(format!(
                    "{}: multi-channel image; pass --luma to convert with the standard luminance weights",
                    path.display()
                )));
            }
            let rgb = other.to_rgb8();
            let (w, h) = (rgb.width(), rgb.height());
            let data = rgb
                .pixels()
                .map(|p| {
                    let [r, g, b] = p.0;
                    let y = 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
                    (y + 0.5).floor().min(255.0) as u8
                })
                .collect();
            GrayImage::new(w, h, data)
        }
    }
}

pub fn save_png(img: &GrayImage, path: &Path) -> Result<()> {
    let buf = image::GrayImage::from_raw(img.width(), img.height(), img.data().to_vec())
        .expect("dimensions validated at construction");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))
}

pub fn save_pgm(img: &GrayImage, path: &Path) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    bytes.extend_from_slice(img.data());
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|msg| Error::Load(format!("{}: {msg}", path.display())))
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> std::result::Result<String, String> {
        // Skip whitespace and '#' comment lines between header tokens.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("unexpected end of header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    if token(bytes)? != "P5" {
        return Err("not a P5 PGM file".into());
    }
    let width: u32 = token(bytes)?.parse().map_err(|_| "bad width".to_string())?;
    let height: u32 = token(bytes)?.parse().map_err(|_| "bad height".to_string())?;
    let maxval: u32 = token(bytes)?.parse().map_err(|_| "bad maxval".to_string())?;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}; expected 255"));
    }
    pos += 1; // single whitespace byte after maxval
    let expected = width as usize * height as usize;
    if bytes.len() < pos + expected {
        return Err("truncated pixel data".into());
    }
    GrayImage::new(width, height, bytes[pos..pos + expected].to_vec()).map_err(|e| e.to_string())
}
