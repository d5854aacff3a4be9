//! Stage II: converting 224×224 crops into fixed-dimension feature
//! vectors.
//!
//! Providers are pluggable behind [`EmbeddingProvider`]. The built-in
//! [`BaselineEmbedder`] is a deterministic intensity/gradient grid
//! descriptor that keeps the whole test suite hermetic; [`OnnxEmbedder`]
//! adapts an external pre-trained network file.

use std::io::Read;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::sobel_magnitude;
use crate::proposals::{Crop, CROP_SIDE};

/// Default embedding dimension.
pub const DEFAULT_DIM: usize = 512;

/// Fixed-dimension real feature vector.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument(
                "feature vector must have positive dimension".into(),
            ));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "feature vector contains non-finite entry {bad}"
            )));
        }
        Ok(FeatureVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn squared_distance(&self, other: &FeatureVector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Contract for crop embedders: deterministic, constant dimension.
pub trait EmbeddingProvider: Send + Sync {
    /// Output dimension, constant over the provider's lifetime.
    fn dim(&self) -> usize;

    /// Stable identifier used as the cache key component.
    fn id(&self) -> String;

    /// Whether `embed` may be called from several threads at once.
    /// [`embed_all`] serializes calls to providers that return false.
    fn supports_concurrency(&self) -> bool {
        true
    }

    fn embed(&self, crop: &Crop) -> Result<FeatureVector>;
}

fn check_crop_size(crop: &Crop) -> Result<()> {
    if crop.pixels.width() != CROP_SIDE || crop.pixels.height() != CROP_SIDE {
        return Err(Error::InvalidArgument(format!(
            "crop must be {CROP_SIDE}x{CROP_SIDE}, got {}x{}",
            crop.pixels.width(),
            crop.pixels.height()
        )));
    }
    Ok(())
}

/// Deterministic 512-dim descriptor: a 16×16 grid of mean intensities over
/// 14×14 cells followed by a 16×16 grid of mean Sobel-3 gradient
/// magnitudes, both scaled to [0, 1], then L2-normalized (the zero vector
/// passes through unchanged).
#[derive(Debug, Clone, Default)]
pub struct BaselineEmbedder;

/// Grid resolution of the baseline descriptor (16×16 cells of 14×14 px).
const GRID: u32 = 16;
const CELL: u32 = CROP_SIDE / GRID;

impl BaselineEmbedder {
    fn cell_means(img: &crate::imaging::GrayImage) -> Vec<f64> {
        let mut out = Vec::with_capacity((GRID * GRID) as usize);
        for cy in 0..GRID {
            for cx in 0..GRID {
                let mut sum = 0u64;
                for y in cy * CELL..(cy + 1) * CELL {
                    for x in cx * CELL..(cx + 1) * CELL {
                        sum += u64::from(img.get(x, y));
                    }
                }
                out.push(sum as f64 / f64::from(CELL * CELL) / 255.0);
            }
        }
        out
    }
}

impl EmbeddingProvider for BaselineEmbedder {
    fn dim(&self) -> usize {
        DEFAULT_DIM
    }

    fn id(&self) -> String {
        "baseline-v1".into()
    }

    fn embed(&self, crop: &Crop) -> Result<FeatureVector> {
        check_crop_size(crop)?;
        let mut values = Self::cell_means(&crop.pixels);
        let grad = sobel_magnitude(&crop.pixels, 3)?;
        values.extend(Self::cell_means(&grad));
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        }
        FeatureVector::new(values)
    }
}

/// Adapter for an external pre-trained network in ONNX format.
///
/// The model must map a `[1, C, 224, 224]` input to `dim` output values;
/// grayscale crops are replicated across the C input channels. Per-channel
/// normalization constants come from an optional sidecar file
/// `<model>.json` (`{"mean": [...], "std": [...]}`); without one the input
/// is plain `[0, 1]` intensities.
pub struct OnnxEmbedder {
    model: tract_onnx::prelude::TypedRunnableModel<tract_onnx::prelude::TypedModel>,
    channels: usize,
    dim: usize,
    mean: Vec<f64>,
    std: Vec<f64>,
    id: String,
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct SidecarConfig {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl OnnxEmbedder {
    pub fn load(path: &Path, dim: usize) -> Result<Self> {
        use tract_onnx::prelude::*;

        let model = tract_onnx::onnx()
            .model_for_path(path)
            .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?
            .into_optimized()
            .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
        let fact = model
            .input_fact(0)
            .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?
            .clone();
        let shape: Vec<usize> = fact
            .shape
            .iter()
            .map(|d| {
                d.to_usize()
                    .map_err(|_| Error::Load(format!("{}: symbolic input dimension {d}", path.display())))
            })
            .collect::<Result<_>>()?;
        if shape.len() != 4 || shape[0] != 1 || shape[2] != CROP_SIDE as usize || shape[3] != CROP_SIDE as usize {
            return Err(Error::Load(format!(
                "{}: expected input shape [1, C, {CROP_SIDE}, {CROP_SIDE}], got {shape:?}",
                path.display()
            )));
        }
        let channels = shape[1];

        let sidecar_path = path.with_extension(format!(
            "{}.json",
            path.extension().and_then(|e| e.to_str()).unwrap_or("onnx")
        ));
        let (mean, std) = if sidecar_path.exists() {
            let text =
                std::fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
            let cfg: SidecarConfig = serde_json::from_str(&text)
                .map_err(|e| Error::Load(format!("{}: {e}", sidecar_path.display())))?;
            if cfg.mean.len() != channels || cfg.std.len() != channels {
                return Err(Error::Load(format!(
                    "{}: expected {channels} mean/std entries",
                    sidecar_path.display()
                )));
            }
            if cfg.std.iter().any(|s| *s == 0.0) {
                return Err(Error::Load(format!(
                    "{}: zero std entry",
                    sidecar_path.display()
                )));
            }
            (cfg.mean, cfg.std)
        } else {
            (vec![0.0; channels], vec![1.0; channels])
        };

        let runnable = model
            .into_runnable()
            .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;

        // Cache identity covers the file content, not just the path.
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let digest = Sha256::digest(&bytes);
        let id = format!("onnx-{}", hex_prefix(&digest, 16));

        Ok(OnnxEmbedder {
            model: runnable,
            channels,
            dim,
            mean,
            std,
            id,
        })
    }
}

impl EmbeddingProvider for OnnxEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn id(&self) -> String {
        self.id.clone()
    }

    fn supports_concurrency(&self) -> bool {
        false
    }

    fn embed(&self, crop: &Crop) -> Result<FeatureVector> {
        use tract_onnx::prelude::*;

        check_crop_size(crop)?;
        let side = CROP_SIDE as usize;
        let mean: Vec<f32> = self.mean.iter().map(|&v| v as f32).collect();
        let std: Vec<f32> = self.std.iter().map(|&v| v as f32).collect();
        let input = tract_ndarray::Array4::from_shape_fn(
            (1, self.channels, side, side),
            |(_, c, y, x)| {
                let p = f32::from(crop.pixels.get(x as u32, y as u32)) / 255.0;
                (p - mean[c]) / std[c]
            },
        );
        let outputs = self
            .model
            .run(tvec!(Tensor::from(input).into()))
            .map_err(|e| Error::Load(format!("model inference failed: {e}")))?;
        let view = outputs[0]
            .to_array_view::<f32>()
            .map_err(|e| Error::Load(format!("model output is not f32: {e}")))?;
        let values: Vec<f64> = view.iter().map(|&v| f64::from(v)).collect();
        if values.len() != self.dim {
            return Err(Error::ContractViolation(format!(
                "model emitted {} values but provider declares dim {}",
                values.len(),
                self.dim
            )));
        }
        FeatureVector::new(values)
    }
}

// ---------------------------------------------------------------------------
// Batch embedding with an on-disk cache.
// ---------------------------------------------------------------------------

fn hex_prefix(digest: &[u8], chars: usize) -> String {
    let mut s = String::with_capacity(chars);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
        if s.len() >= chars {
            break;
        }
    }
    s.truncate(chars);
    s
}

/// Cache key: provider identity plus crop content, so identical patches
/// cut from different places dedupe.
fn cache_key(provider_id: &str, dim: usize, crop: &Crop) -> String {
    let mut hasher = Sha256::new();
    hasher.update(provider_id.as_bytes());
    hasher.update(dim.to_le_bytes());
    hasher.update(crop.pixels.data());
    let digest = hasher.finalize();
    hex_prefix(&digest, 64)
}

fn read_cache_record(path: &Path, dim: usize) -> Option<Vec<f64>> {
    let mut file = std::fs::File::open(path).ok()?;
    let mut header = [0u8; 4];
    file.read_exact(&mut header).ok()?;
    if u32::from_le_bytes(header) as usize != dim {
        return None;
    }
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).ok()?;
    if buf.len() != dim * 8 {
        return None;
    }
    let values: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(values)
}

fn write_cache_record(path: &Path, vector: &FeatureVector) -> Result<()> {
    let mut bytes = Vec::with_capacity(4 + vector.dim() * 8);
    bytes.extend_from_slice(&(vector.dim() as u32).to_le_bytes());
    for v in vector.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Embeds every crop in input order, using `cache_dir` when given.
///
/// Records live in `<cache_dir>/<hash>.vec` as a 4-byte little-endian dim
/// header followed by dim IEEE-754 doubles. Corrupt records are ignored,
/// rebuilt and rewritten with a warning; results never depend on cache
/// hits.
pub fn embed_all(
    crops: &[Crop],
    provider: &dyn EmbeddingProvider,
    cache_dir: Option<&Path>,
) -> Result<Vec<FeatureVector>> {
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let provider_id = provider.id();
    let mut out = Vec::with_capacity(crops.len());
    for crop in crops {
        let cached = cache_dir.map(|dir| {
            let path = dir.join(format!("{}.vec", cache_key(&provider_id, provider.dim(), crop)));
            (path.clone(), path.exists().then(|| read_cache_record(&path, provider.dim())))
        });
        match cached {
            Some((path, Some(Some(values)))) => {
                out.push(FeatureVector::new(values)?);
                let _ = path;
            }
            Some((path, existed)) => {
                if matches!(existed, Some(None)) {
                    log::warn!("ignoring corrupt embedding cache record {}", path.display());
                }
                let v = provider.embed(crop)?;
                write_cache_record(&path, &v)?;
                out.push(v);
            }
            None => out.push(provider.embed(crop)?),
        }
    }
    Ok(out)
}

/// Wrapper that counts provider calls; used by tests and cache audits.
pub struct CountingProvider<P> {
    inner: P,
    calls: AtomicUsize,
}

impl<P: EmbeddingProvider> CountingProvider<P> {
    pub fn new(inner: P) -> Self {
        CountingProvider {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<P: EmbeddingProvider> EmbeddingProvider for CountingProvider<P> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn id(&self) -> String {
        self.inner.id()
    }

    fn supports_concurrency(&self) -> bool {
        self.inner.supports_concurrency()
    }

    fn embed(&self, crop: &Crop) -> Result<FeatureVector> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.embed(crop)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{BBox, GrayImage};
    use crate::proposals::Region;

    fn crop_from(img: GrayImage) -> Crop {
        Crop {
            origin: Region {
                bbox: BBox::new(0, 0, img.width(), img.height()),
                score: 1.0,
                area: 1,
                source_id: "t".into(),
            },
            pad: (0, 0),
            pixels: img,
        }
    }

    fn uniform_crop(v: u8) -> Crop {
        crop_from(GrayImage::filled(CROP_SIDE, CROP_SIDE, v).unwrap())
    }

    #[test]
    fn zero_crop_embeds_to_zero_vector() {
        let v = BaselineEmbedder.embed(&uniform_crop(0)).unwrap();
        assert_eq!(v.dim(), 512);
        assert!(v.values().iter().all(|&x| x == 0.0));
        assert_eq!(v.l2_norm(), 0.0);
    }

    #[test]
    fn constant_crop_normalizes_to_uniform_intensity_half() {
        let v = BaselineEmbedder.embed(&uniform_crop(255)).unwrap();
        for (i, &x) in v.values().iter().enumerate() {
            if i < 256 {
                assert!((x - 1.0 / 16.0).abs() < 1e-12, "intensity entry {i} = {x}");
            } else {
                assert_eq!(x, 0.0, "gradient entry {i}");
            }
        }
        assert!((v.l2_norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_bright_cell_matches_cell_mean_oracle() {
        let mut img = GrayImage::filled(CROP_SIDE, CROP_SIDE, 0).unwrap();
        // Fill cell (3, 2): x in [42, 56), y in [28, 42).
        for y in 28..42 {
            for x in 42..56 {
                img.set(x, y, 200);
            }
        }
        let crop = crop_from(img.clone());
        let v = BaselineEmbedder.embed(&crop).unwrap();

        // Independent per-cell mean computation for the intensity half.
        let mut expect = vec![0.0f64; 256];
        for cy in 0..16u32 {
            for cx in 0..16u32 {
                let mut sum = 0u64;
                for y in cy * 14..(cy + 1) * 14 {
                    for x in cx * 14..(cx + 1) * 14 {
                        sum += u64::from(img.get(x, y));
                    }
                }
                expect[(cy * 16 + cx) as usize] = sum as f64 / 196.0 / 255.0;
            }
        }
        // Pre-normalization intensity mass is confined to one entry.
        assert_eq!(expect.iter().filter(|&&e| e > 0.0).count(), 1);
        // Undo the normalization to compare against the oracle.
        let grad = sobel_magnitude(&crop.pixels, 3).unwrap();
        let mut raw = BaselineEmbedder::cell_means(&crop.pixels);
        raw.extend(BaselineEmbedder::cell_means(&grad));
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (i, &e) in expect.iter().enumerate() {
            assert!((v.values()[i] - e / norm).abs() < 1e-12, "cell {i}");
        }
    }

    #[test]
    fn baseline_rejects_wrong_size() {
        let crop = crop_from(GrayImage::filled(100, 100, 0).unwrap());
        assert!(BaselineEmbedder.embed(&crop).is_err());
    }

    #[test]
    fn baseline_is_deterministic_and_unit_norm() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let data: Vec<u8> = (0..CROP_SIDE * CROP_SIDE).map(|_| rng.gen()).collect();
            let img = GrayImage::new(CROP_SIDE, CROP_SIDE, data).unwrap();
            let crop = crop_from(img);
            let a = BaselineEmbedder.embed(&crop).unwrap();
            let b = BaselineEmbedder.embed(&crop).unwrap();
            assert_eq!(a, b);
            let n = a.l2_norm();
            assert!(n == 0.0 || (n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn embed_all_cache_round_trip() {
        use rand::{Rng, SeedableRng};
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("cache");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let crops: Vec<Crop> = (0..8)
            .map(|_| {
                let data: Vec<u8> = (0..CROP_SIDE * CROP_SIDE).map(|_| rng.gen()).collect();
                crop_from(GrayImage::new(CROP_SIDE, CROP_SIDE, data).unwrap())
            })
            .collect();

        let p1 = CountingProvider::new(BaselineEmbedder);
        let first = embed_all(&crops, &p1, Some(&cache)).unwrap();
        assert_eq!(p1.calls(), 8);

        let p2 = CountingProvider::new(BaselineEmbedder);
        let second = embed_all(&crops, &p2, Some(&cache)).unwrap();
        assert_eq!(p2.calls(), 0, "second run must be fully cached");
        assert_eq!(first, second);

        // Cache and no-cache results agree exactly, in input order.
        let bare = embed_all(&crops, &BaselineEmbedder, None).unwrap();
        assert_eq!(first, bare);
    }

    #[test]
    fn embed_all_survives_cache_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let cache = dir.path().join("cache");
        let crops = vec![uniform_crop(130)];
        let clean = embed_all(&crops, &BaselineEmbedder, Some(&cache)).unwrap();

        for entry in std::fs::read_dir(&cache).unwrap() {
            std::fs::write(entry.unwrap().path(), b"garbage").unwrap();
        }
        let rebuilt = embed_all(&crops, &BaselineEmbedder, Some(&cache)).unwrap();
        assert_eq!(clean, rebuilt);
    }

    #[test]
    fn embed_all_empty_input() {
        assert!(embed_all(&[], &BaselineEmbedder, None).unwrap().is_empty());
    }

    #[test]
    fn feature_vector_validation() {
        assert!(FeatureVector::new(vec![]).is_err());
        assert!(FeatureVector::new(vec![f64::NAN]).is_err());
        assert!(FeatureVector::new(vec![1.0, 2.0]).is_ok());
    }
}
