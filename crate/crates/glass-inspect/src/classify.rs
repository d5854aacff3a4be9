//! Stages III–IV assembly: the six-way label taxonomy, training of the
//! background/defect (BD) and six-class (DC) forests, and per-image
//! inspection reports with the fixed color convention.

use std::collections::BTreeMap;
use std::path::Path;

use crate::embedding::{embed_all, EmbeddingProvider, FeatureVector};
use crate::error::{Error, Result};
use crate::forest::{self, ForestModel, ForestParams, TrainSample};
use crate::imaging::GrayImage;
use crate::pipeline::{crops_for_regions, stage_one, StageOneParams};
use crate::proposals::Region;

/// The six region classes, wire indices 0–5 in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RegionClass {
    Scratch,
    Pit,
    Crack,
    Dust,
    SensorRegion,
    LightReflection,
}

/// Binary projection of a region class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryVerdict {
    Defect,
    Background,
}

impl RegionClass {
    pub const ALL: [RegionClass; 6] = [
        RegionClass::Scratch,
        RegionClass::Pit,
        RegionClass::Crack,
        RegionClass::Dust,
        RegionClass::SensorRegion,
        RegionClass::LightReflection,
    ];

    pub fn wire_index(self) -> usize {
        match self {
            RegionClass::Scratch => 0,
            RegionClass::Pit => 1,
            RegionClass::Crack => 2,
            RegionClass::Dust => 3,
            RegionClass::SensorRegion => 4,
            RegionClass::LightReflection => 5,
        }
    }

    pub fn from_wire_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::InvalidArgument(format!("class index {index} out of range")))
    }

    /// Canonical lowercase name used in label files and reports.
    pub fn name(self) -> &'static str {
        match self {
            RegionClass::Scratch => "scratch",
            RegionClass::Pit => "pit",
            RegionClass::Crack => "crack",
            RegionClass::Dust => "dust",
            RegionClass::SensorRegion => "sensor_region",
            RegionClass::LightReflection => "light_reflection",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown class name {name:?}")))
    }

    /// Scratches, pits and cracks are defects; dust, sensor regions and
    /// light reflections are background objects.
    pub fn is_defect(self) -> bool {
        matches!(
            self,
            RegionClass::Scratch | RegionClass::Pit | RegionClass::Crack
        )
    }

    pub fn verdict(self) -> BinaryVerdict {
        if self.is_defect() {
            BinaryVerdict::Defect
        } else {
            BinaryVerdict::Background
        }
    }

    /// Report color: scratches red, pits and cracks green, dust and light
    /// reflections yellow, sensor regions purple.
    pub fn color(self) -> &'static str {
        match self {
            RegionClass::Scratch => "red",
            RegionClass::Pit | RegionClass::Crack => "green",
            RegionClass::Dust | RegionClass::LightReflection => "yellow",
            RegionClass::SensorRegion => "purple",
        }
    }
}

/// Classes serialize as their canonical lowercase names.
impl serde::Serialize for RegionClass {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> serde::Deserialize<'de> for RegionClass {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        RegionClass::from_name(&name).map_err(serde::de::Error::custom)
    }
}

impl BinaryVerdict {
    pub fn name(self) -> &'static str {
        match self {
            BinaryVerdict::Defect => "defect",
            BinaryVerdict::Background => "background",
        }
    }

    pub fn is_defect(self) -> bool {
        matches!(self, BinaryVerdict::Defect)
    }
}

/// Where the labels in a [`LabelSet`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Human,
    Pseudo,
}

/// Crop-id → class map with uniform provenance.
#[derive(Debug, Clone)]
pub struct LabelSet {
    pub entries: BTreeMap<String, RegionClass>,
    pub provenance: Provenance,
}

impl LabelSet {
    pub fn new(provenance: Provenance) -> Self {
        LabelSet {
            entries: BTreeMap::new(),
            provenance,
        }
    }

    /// Reads a `crop_id,class_name` CSV (no header) of human labels.
    pub fn read_csv(path: &Path) -> Result<LabelSet> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, name) = line.split_once(',').ok_or_else(|| {
                Error::Load(format!(
                    "{}:{}: expected crop_id,class_name",
                    path.display(),
                    lineno + 1
                ))
            })?;
            let class = RegionClass::from_name(name.trim())
                .map_err(|e| Error::Load(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
            if entries.insert(id.trim().to_string(), class).is_some() {
                return Err(Error::Load(format!(
                    "{}:{}: duplicate crop id {id:?}",
                    path.display(),
                    lineno + 1
                )));
            }
        }
        Ok(LabelSet {
            entries,
            provenance: Provenance::Human,
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for (id, class) in &self.entries {
            out.push_str(&format!("{id},{}\n", class.name()));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn class_counts(&self) -> [usize; 6] {
        let mut counts = [0usize; 6];
        for class in self.entries.values() {
            counts[class.wire_index()] += 1;
        }
        counts
    }
}

/// Which crops the six-class classifier runs on during inspection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DcScope {
    /// Classify every surviving proposal, so sensor regions and other
    /// background objects still show up in the report.
    #[default]
    All,
    /// Classify only crops the BD stage judged defects.
    DefectsOnly,
}

impl DcScope {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(DcScope::All),
            "defects-only" => Ok(DcScope::DefectsOnly),
            other => Err(Error::Config(format!(
                "dc-scope must be 'all' or 'defects-only', got {other:?}"
            ))),
        }
    }
}

/// BD model class indices.
pub const BD_BACKGROUND: usize = 0;
pub const BD_DEFECT: usize = 1;

/// Trains the binary background/defect forest from per-crop pseudo-labels
/// (`true` = defect). Both classes must be present.
pub fn train_bd(
    features: &[FeatureVector],
    pseudo: &[bool],
    params: &ForestParams,
) -> Result<ForestModel> {
    if features.len() != pseudo.len() {
        return Err(Error::InvalidArgument(format!(
            "{} feature vectors but {} pseudo-labels",
            features.len(),
            pseudo.len()
        )));
    }
    if !pseudo.iter().any(|&d| d) || !pseudo.iter().any(|&d| !d) {
        return Err(Error::InvalidArgument(
            "BD training needs both defect and background pseudo-labels".into(),
        ));
    }
    let samples: Vec<TrainSample> = features
        .iter()
        .zip(pseudo)
        .map(|(f, &d)| TrainSample {
            features: f.clone(),
            label: if d { BD_DEFECT } else { BD_BACKGROUND },
        })
        .collect();
    let mut model = forest::train(&samples, 2, params)?;
    model.tag = "BD".into();
    Ok(model)
}

/// Trains the six-class forest from human labels over all six classes.
pub fn train_dc(
    labels: &LabelSet,
    features: &BTreeMap<String, FeatureVector>,
    params: &ForestParams,
) -> Result<ForestModel> {
    if labels.provenance != Provenance::Human {
        return Err(Error::InvalidArgument(
            "DC training uses human labels only".into(),
        ));
    }
    if labels.entries.is_empty() {
        return Err(Error::InvalidArgument("no labels provided".into()));
    }
    let distinct: std::collections::BTreeSet<RegionClass> =
        labels.entries.values().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::InvalidArgument(
            "DC training needs at least two distinct classes".into(),
        ));
    }
    let mut samples = Vec::with_capacity(labels.entries.len());
    for (id, class) in &labels.entries {
        let f = features.get(id).ok_or_else(|| {
            Error::InvalidArgument(format!("no feature vector for labeled crop {id:?}"))
        })?;
        samples.push(TrainSample {
            features: f.clone(),
            label: class.wire_index(),
        });
    }
    let mut model = forest::train(&samples, 6, params)?;
    model.tag = "DC".into();
    Ok(model)
}

/// One classified region of an inspection report.
#[derive(Debug, Clone)]
pub struct Finding {
    pub region: Region,
    pub class: RegionClass,
    pub verdict: BinaryVerdict,
    /// DC vote fractions in wire-index order.
    pub votes: Vec<f64>,
}

/// Per-image inspection result; findings keep proposal selection order.
#[derive(Debug, Clone)]
pub struct InspectionReport {
    pub source_id: String,
    pub findings: Vec<Finding>,
}

impl InspectionReport {
    pub fn to_json(&self) -> String {
        let findings: Vec<serde_json::Value> = self
            .findings
            .iter()
            .map(|f| {
                serde_json::json!({
                    "bbox": [f.region.bbox.x0, f.region.bbox.y0, f.region.bbox.w, f.region.bbox.h],
                    "class": f.class.name(),
                    "verdict": f.verdict.name(),
                    "votes": f.votes,
                    "color": f.class.color(),
                })
            })
            .collect();
        let doc = serde_json::json!({
            "source_id": self.source_id,
            "findings": findings,
        });
        serde_json::to_string_pretty(&doc).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<InspectionReport> {
        let doc: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Load(format!("report: {e}")))?;
        let source_id = doc["source_id"]
            .as_str()
            .ok_or_else(|| Error::Load("report: missing source_id".into()))?
            .to_string();
        let mut findings = Vec::new();
        for f in doc["findings"]
            .as_array()
            .ok_or_else(|| Error::Load("report: findings must be an array".into()))?
        {
            let bbox = f["bbox"]
                .as_array()
                .filter(|a| a.len() == 4)
                .ok_or_else(|| Error::Load("report: bbox must have 4 entries".into()))?;
            let nums: Vec<u32> = bbox
                .iter()
                .map(|v| {
                    v.as_u64()
                        .map(|n| n as u32)
                        .ok_or_else(|| Error::Load("report: bbox entries must be integers".into()))
                })
                .collect::<Result<_>>()?;
            let class = RegionClass::from_name(
                f["class"]
                    .as_str()
                    .ok_or_else(|| Error::Load("report: missing class".into()))?,
            )?;
            let verdict = match f["verdict"].as_str() {
                Some("defect") => BinaryVerdict::Defect,
                Some("background") => BinaryVerdict::Background,
                other => {
                    return Err(Error::Load(format!("report: bad verdict {other:?}")));
                }
            };
            let votes: Vec<f64> = f["votes"]
                .as_array()
                .map(|a| a.iter().filter_map(|v| v.as_f64()).collect())
                .unwrap_or_default();
            findings.push(Finding {
                region: Region {
                    bbox: crate::imaging::BBox::new(nums[0], nums[1], nums[2], nums[3]),
                    score: 0.0,
                    area: 0,
                    source_id: source_id.clone(),
                },
                class,
                verdict,
                votes,
            });
        }
        Ok(InspectionReport {
            source_id,
            findings,
        })
    }
}

/// Everything `inspect` needs besides the image and the two models.
pub struct InspectConfig<'a> {
    pub stage_one: StageOneParams,
    pub dc_scope: DcScope,
    pub provider: &'a dyn EmbeddingProvider,
    pub cache_dir: Option<&'a Path>,
}

/// Runs the full four-stage pipeline on one image.
///
/// Stage I proposes regions, stage II embeds their crops, the BD forest
/// assigns the binary verdict, and the DC forest assigns the six-way class
/// per the configured scope. With [`DcScope::All`] every surviving
/// proposal becomes a finding, so background objects like sensor regions
/// stay visible in the report; with [`DcScope::DefectsOnly`] only
/// BD-judged defects are classified and reported.
pub fn inspect(
    img: &GrayImage,
    source_id: &str,
    bd: &ForestModel,
    dc: &ForestModel,
    config: &InspectConfig,
) -> Result<InspectionReport> {
    let dim = config.provider.dim();
    if bd.dim != dim || dc.dim != dim {
        return Err(Error::ContractViolation(format!(
            "model dims (BD {}, DC {}) do not match embedding dim {dim}",
            bd.dim, dc.dim
        )));
    }
    if bd.class_count != 2 || dc.class_count != 6 {
        return Err(Error::ContractViolation(format!(
            "expected 2-class BD and 6-class DC, got {} and {}",
            bd.class_count, dc.class_count
        )));
    }

    let regions = stage_one(img, source_id, &config.stage_one)?;
    let crops = crops_for_regions(img, &regions)?;
    let features = embed_all(&crops, config.provider, config.cache_dir)?;

    let mut findings = Vec::new();
    for (region, feature) in regions.iter().zip(&features) {
        let (bd_class, _) = forest::predict(bd, feature)?;
        let verdict = if bd_class == BD_DEFECT {
            BinaryVerdict::Defect
        } else {
            BinaryVerdict::Background
        };
        match config.dc_scope {
            DcScope::DefectsOnly if !verdict.is_defect() => continue,
            _ => {}
        }
        let (dc_class, votes) = forest::predict(dc, feature)?;
        findings.push(Finding {
            region: region.clone(),
            class: RegionClass::from_wire_index(dc_class)?,
            verdict,
            votes,
        });
    }
    Ok(InspectionReport {
        source_id: source_id.to_string(),
        findings,
    })
}

/// Draws finding boxes onto the image in the report colors.
pub fn render_report(img: &GrayImage, report: &InspectionReport) -> image::RgbImage {
    let rgb_of = |color: &str| -> [u8; 3] {
        match color {
            "red" => [255, 0, 0],
            "green" => [0, 255, 0],
            "yellow" => [255, 255, 0],
            "purple" => [160, 32, 240],
            _ => [255, 255, 255],
        }
    };
    let mut out = image::RgbImage::new(img.width(), img.height());
    for y in 0..img.height() {
        for x in 0..img.width() {
            let v = img.get(x, y);
            out.put_pixel(x, y, image::Rgb([v, v, v]));
        }
    }
    for f in &report.findings {
        let c = image::Rgb(rgb_of(f.class.color()));
        let b = &f.region.bbox;
        let x1 = (b.x1().saturating_sub(1)).min(img.width() - 1);
        let y1 = (b.y1().saturating_sub(1)).min(img.height() - 1);
        for x in b.x0..=x1 {
            out.put_pixel(x, b.y0, c);
            out.put_pixel(x, y1, c);
        }
        for y in b.y0..=y1 {
            out.put_pixel(b.x0, y, c);
            out.put_pixel(x1, y, c);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_projection_is_total_and_fixed() {
        use RegionClass::*;
        for class in RegionClass::ALL {
            let expect = matches!(class, Scratch | Pit | Crack);
            assert_eq!(class.is_defect(), expect, "{class:?}");
            assert_eq!(class.verdict().is_defect(), expect);
        }
    }

    #[test]
    fn wire_indices_are_stable() {
        for (i, class) in RegionClass::ALL.iter().enumerate() {
            assert_eq!(class.wire_index(), i);
            assert_eq!(RegionClass::from_wire_index(i).unwrap(), *class);
        }
        assert!(RegionClass::from_wire_index(6).is_err());
    }

    #[test]
    fn color_convention_is_exhaustive() {
        use RegionClass::*;
        let expect = [
            (Scratch, "red"),
            (Pit, "green"),
            (Crack, "green"),
            (Dust, "yellow"),
            (SensorRegion, "purple"),
            (LightReflection, "yellow"),
        ];
        for (class, color) in expect {
            assert_eq!(class.color(), color, "{class:?}");
        }
    }

    #[test]
    fn names_round_trip() {
        for class in RegionClass::ALL {
            assert_eq!(RegionClass::from_name(class.name()).unwrap(), class);
        }
        assert!(RegionClass::from_name("smudge").is_err());
    }

    fn vectors(n: usize, offset: f64) -> Vec<FeatureVector> {
        (0..n)
            .map(|i| FeatureVector::new(vec![offset + i as f64 * 0.01, offset]).unwrap())
            .collect()
    }

    #[test]
    fn bd_requires_both_classes() {
        let features = vectors(4, 0.0);
        let all_defect = vec![true; 4];
        assert!(train_bd(&features, &all_defect, &ForestParams::default()).is_err());
        let mixed = vec![true, true, false, false];
        let model = train_bd(&features, &mixed, &ForestParams::default()).unwrap();
        assert_eq!(model.tag, "BD");
        assert_eq!(model.class_count, 2);
    }

    #[test]
    fn bd_exact_small_instance() {
        let mut features = vectors(2, 0.0);
        features.extend(vectors(2, 10.0));
        let pseudo = vec![false, false, true, true];
        let params = ForestParams {
            tree_count: 1,
            bootstrap: false,
            features_per_split: Some(usize::MAX),
            max_depth: 8,
            ..ForestParams::default()
        };
        let model = train_bd(&features, &pseudo, &params).unwrap();
        for (f, &expect) in features.iter().zip(&pseudo) {
            let (class, _) = forest::predict(&model, f).unwrap();
            assert_eq!(class == BD_DEFECT, expect);
        }
    }

    #[test]
    fn dc_needs_two_classes_and_human_labels() {
        let mut labels = LabelSet::new(Provenance::Human);
        labels.entries.insert("a".into(), RegionClass::Scratch);
        labels.entries.insert("b".into(), RegionClass::Scratch);
        let features: BTreeMap<String, FeatureVector> = [
            ("a".to_string(), FeatureVector::new(vec![0.0, 0.0]).unwrap()),
            ("b".to_string(), FeatureVector::new(vec![1.0, 1.0]).unwrap()),
        ]
        .into();
        assert!(train_dc(&labels, &features, &ForestParams::default()).is_err());

        labels.entries.insert("b".into(), RegionClass::Dust);
        let model = train_dc(&labels, &features, &ForestParams::default()).unwrap();
        assert_eq!(model.tag, "DC");
        assert_eq!(model.class_count, 6);

        let pseudo = LabelSet {
            entries: labels.entries.clone(),
            provenance: Provenance::Pseudo,
        };
        assert!(train_dc(&pseudo, &features, &ForestParams::default()).is_err());
    }

    #[test]
    fn dc_separable_clusters_generalize() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(606);
        // Six clusters, inter-centroid distance 20, intra radius <= 1.
        let mut train_labels = LabelSet::new(Provenance::Human);
        let mut features = BTreeMap::new();
        let mut held_out = Vec::new();
        for class in RegionClass::ALL {
            let cx = class.wire_index() as f64 * 20.0;
            for i in 0..25 {
                let id = format!("{}_{i}", class.name());
                let v = FeatureVector::new(vec![
                    cx + rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ])
                .unwrap();
                if i < 20 {
                    train_labels.entries.insert(id.clone(), class);
                    features.insert(id, v);
                } else {
                    held_out.push((v, class));
                }
            }
        }
        let model = train_dc(&train_labels, &features, &ForestParams::default()).unwrap();
        let hits = held_out
            .iter()
            .filter(|(v, class)| {
                forest::predict(&model, v).unwrap().0 == class.wire_index()
            })
            .count();
        let accuracy = hits as f64 / held_out.len() as f64;
        assert!(accuracy >= 0.95, "held-out accuracy {accuracy}");
    }

    #[test]
    fn label_csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        let mut labels = LabelSet::new(Provenance::Human);
        labels.entries.insert("img0_0".into(), RegionClass::Scratch);
        labels.entries.insert("img0_1".into(), RegionClass::SensorRegion);
        labels.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "img0_0,scratch\nimg0_1,sensor_region\n");
        let back = LabelSet::read_csv(&path).unwrap();
        assert_eq!(back.entries, labels.entries);

        std::fs::write(&path, "a,scratch\na,pit\n").unwrap();
        assert!(LabelSet::read_csv(&path).is_err(), "duplicate ids rejected");
        std::fs::write(&path, "a,smudge\n").unwrap();
        assert!(LabelSet::read_csv(&path).is_err(), "unknown class rejected");
    }

    #[test]
    fn report_json_round_trip() {
        let report = InspectionReport {
            source_id: "glass7".into(),
            findings: vec![Finding {
                region: Region {
                    bbox: crate::imaging::BBox::new(4, 5, 6, 7),
                    score: 42.0,
                    area: 42,
                    source_id: "glass7".into(),
                },
                class: RegionClass::SensorRegion,
                verdict: BinaryVerdict::Background,
                votes: vec![0.0, 0.0, 0.1, 0.0, 0.9, 0.0],
            }],
        };
        let json = report.to_json();
        assert!(json.contains("\"purple\""));
        let back = InspectionReport::from_json(&json).unwrap();
        assert_eq!(back.source_id, "glass7");
        assert_eq!(back.findings.len(), 1);
        assert_eq!(back.findings[0].class, RegionClass::SensorRegion);
        assert_eq!(back.findings[0].region.bbox, report.findings[0].region.bbox);
    }
}
