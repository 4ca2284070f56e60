//! Labelled feature datasets, the class catalog, the zero-shot text head,
//! the `CFF1` binary format and the synthetic world generator.
//!
//! `CFF1` layout (little-endian):
//!
//! ```text
//! "CFF1" | u32 version = 1 | u32 num_classes | u32 feature_dim | u64 num_samples
//! per class:  u32 name_len, name bytes (UTF-8)
//! per sample: u32 label, feature_dim x f32
//! ```
//!
//! A text-head file uses the same layout with `num_samples = num_classes`
//! and sample `i` labelled `i`.

use std::collections::HashSet;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, ByteReader};
use crate::numerics::{self, Matrix};
use crate::rng::{self, tag};

pub const DEFAULT_PROMPT_TEMPLATE: &str = "a photo of a [CLASS]";
pub const CLASS_PLACEHOLDER: &str = "[CLASS]";

const MAGIC: &[u8; 4] = b"CFF1";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8;

/// Rows must be unit-norm to within this tolerance.
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCatalog {
    class_names: Vec<String>,
    prompt_template: String,
}

impl ClassCatalog {
    pub fn new(class_names: Vec<String>) -> Result<Self> {
        Self::with_template(class_names, DEFAULT_PROMPT_TEMPLATE.to_string())
    }

    pub fn with_template(class_names: Vec<String>, prompt_template: String) -> Result<Self> {
        if class_names.is_empty() {
            return Err(Error::Invalid("class catalog is empty".into()));
        }
        let mut seen = HashSet::new();
        for name in &class_names {
            if name.is_empty() {
                return Err(Error::Invalid("empty class name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Invalid(format!("duplicate class name {name:?}")));
            }
        }
        if !prompt_template.contains(CLASS_PLACEHOLDER) {
            return Err(Error::Invalid(format!(
                "prompt template {prompt_template:?} lacks {CLASS_PLACEHOLDER}"
            )));
        }
        Ok(ClassCatalog {
            class_names,
            prompt_template,
        })
    }

    /// `class_000`, `class_001`, ...
    pub fn numbered(n: usize) -> Self {
        Self::new((0..n).map(|i| format!("class_{i:03}")).collect())
            .expect("numbered names are unique")
    }

    pub fn len(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.class_names
    }

    pub fn template(&self) -> &str {
        &self.prompt_template
    }

    pub fn prompt(&self, class: usize) -> String {
        self.prompt_template
            .replace(CLASS_PLACEHOLDER, &self.class_names[class])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTag {
    Synthetic,
    Extracted,
}

/// Unit-norm feature rows with class labels.
#[derive(Clone, Debug)]
pub struct FeatureDataset {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
    source: SourceTag,
}

// Provenance is bookkeeping only and is not stored in CFF1 files.
impl PartialEq for FeatureDataset {
    fn eq(&self, other: &Self) -> bool {
        self.features == other.features
            && self.labels == other.labels
            && self.num_classes == other.num_classes
    }
}

impl FeatureDataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        source: SourceTag,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape(
                "FeatureDataset::new",
                format!("{} rows but {} labels", features.rows(), labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Label {
                label: bad,
                num_classes,
            });
        }
        if let Some(r) = first_non_unit_row(&features) {
            return Err(Error::Degenerate(format!(
                "feature row {r} is not L2-normalised"
            )));
        }
        Ok(FeatureDataset {
            features,
            labels,
            num_classes,
            source,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn source(&self) -> SourceTag {
        self.source
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> FeatureDataset {
        FeatureDataset {
            features: self.features.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            source: self.source,
        }
    }

    /// The first `shots` samples of every class, in dataset order.
    /// Fails if some class has fewer than `shots` samples.
    pub fn balanced_subset(&self, shots: usize) -> Result<FeatureDataset> {
        let counts = self.class_counts();
        if shots == 0 || counts.iter().any(|&c| c < shots) {
            return Err(Error::Imbalanced { counts });
        }
        let mut taken = vec![0; self.num_classes];
        let mut keep = Vec::with_capacity(shots * self.num_classes);
        for (i, &y) in self.labels.iter().enumerate() {
            if taken[y] < shots {
                taken[y] += 1;
                keep.push(i);
            }
        }
        Ok(self.subset(&keep))
    }
}

fn first_non_unit_row(m: &Matrix) -> Option<usize> {
    (0..m.rows()).find(|&r| {
        let n = numerics::dot(m.row(r), m.row(r)).sqrt();
        (n - 1.0).abs() > UNIT_NORM_TOL
    })
}

/// Per-class text embeddings, one unit-norm row per class in catalog order.
#[derive(Clone, Debug, PartialEq)]
pub struct TextHead {
    weights: Matrix,
}

impl TextHead {
    pub fn new(weights: Matrix) -> Result<Self> {
        if let Some(r) = first_non_unit_row(&weights) {
            return Err(Error::Degenerate(format!(
                "text head row {r} is not L2-normalised"
            )));
        }
        Ok(TextHead { weights })
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.cols()
    }

    /// The head viewed as a dataset whose sample `i` has label `i`.
    pub fn as_dataset(&self) -> FeatureDataset {
        FeatureDataset {
            features: self.weights.clone(),
            labels: (0..self.num_classes()).collect(),
            num_classes: self.num_classes(),
            source: SourceTag::Extracted,
        }
    }
}

// ---------------------------------------------------------------------------
// CFF1 codec
// ---------------------------------------------------------------------------

pub fn encode_features(dataset: &FeatureDataset, catalog: &ClassCatalog) -> Result<Vec<u8>> {
    if catalog.len() != dataset.num_classes() {
        return Err(Error::shape(
            "encode_features",
            format!(
                "catalog has {} classes, dataset {}",
                catalog.len(),
                dataset.num_classes()
            ),
        ));
    }
    let dim = dataset.feature_dim();
    let mut out = Vec::with_capacity(HEADER_LEN + dataset.len() * (4 + 4 * dim));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&to_u32(catalog.len(), "num_classes")?.to_le_bytes());
    out.extend_from_slice(&to_u32(dim, "feature_dim")?.to_le_bytes());
    out.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    for name in catalog.names() {
        out.extend_from_slice(&to_u32(name.len(), "name_len")?.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    for (i, &y) in dataset.labels().iter().enumerate() {
        out.extend_from_slice(&(y as u32).to_le_bytes());
        for &v in dataset.features().row(i) {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Invalid(format!("{what} {v} does not fit in u32")))
}

pub fn decode_features(bytes: &[u8]) -> Result<(FeatureDataset, ClassCatalog)> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected \"CFF1\"")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let num_classes = r.u32("num_classes")? as usize;
    if num_classes == 0 {
        return Err(Error::format(8, "num_classes is zero"));
    }
    let dim = r.u32("feature_dim")? as usize;
    if dim == 0 {
        return Err(Error::format(12, "feature_dim is zero"));
    }
    let n = r.u64("num_samples")?;
    let mut names = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let at = r.offset();
        let len = r.u32("name_len")? as usize;
        let raw = r.take(len, "class name")?;
        let name = std::str::from_utf8(raw)
            .map_err(|e| Error::format(at + 4, format!("class {c} name is not UTF-8: {e}")))?;
        names.push(name.to_string());
    }
    let catalog = ClassCatalog::new(names).map_err(|e| Error::format(HEADER_LEN as u64, e.to_string()))?;

    let record = 4 + 4 * dim as u64;
    if (r.remaining() as u64) < n.saturating_mul(record) {
        return Err(Error::format(
            r.offset() + r.remaining() as u64,
            format!("truncated: {n} samples of {record} bytes declared"),
        ));
    }
    let n = n as usize;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let at = r.offset();
        let y = r.u32("label")? as usize;
        if y >= num_classes {
            return Err(Error::format(
                at,
                format!("label {y} out of range for {num_classes} classes"),
            ));
        }
        labels.push(y);
        let mut norm2 = 0.0;
        for _ in 0..dim {
            let v = r.f32("feature")? as f64;
            if !v.is_finite() {
                return Err(Error::format(r.offset() - 4, "non-finite feature value"));
            }
            norm2 += v * v;
            data.push(v);
        }
        if (norm2.sqrt() - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::format(at + 4, "feature row is not L2-normalised"));
        }
    }
    if r.remaining() != 0 {
        return Err(Error::format(r.offset(), "trailing bytes after last sample"));
    }
    let features = Matrix::new(n, dim, data)?;
    let dataset = FeatureDataset::new(features, labels, num_classes, SourceTag::Extracted)?;
    Ok((dataset, catalog))
}

pub fn write_features(path: &Path, dataset: &FeatureDataset, catalog: &ClassCatalog) -> Result<()> {
    io::write_atomic(path, &encode_features(dataset, catalog)?)
}

pub fn read_features(path: &Path) -> Result<(FeatureDataset, ClassCatalog)> {
    decode_features(&io::read_bytes(path)?).map_err(|e| match e {
        Error::Format { offset, msg } => Error::Format {
            offset,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

pub fn encode_text_head(head: &TextHead, catalog: &ClassCatalog) -> Result<Vec<u8>> {
    encode_features(&head.as_dataset(), catalog)
}

pub fn decode_text_head(bytes: &[u8]) -> Result<(TextHead, ClassCatalog)> {
    let (ds, catalog) = decode_features(bytes)?;
    if ds.len() != ds.num_classes() {
        return Err(Error::format(
            16,
            format!(
                "text head must hold one row per class ({} rows, {} classes)",
                ds.len(),
                ds.num_classes()
            ),
        ));
    }
    let record = 4 + 4 * ds.feature_dim();
    let rows_start = HEADER_LEN + catalog.names().iter().map(|n| 4 + n.len()).sum::<usize>();
    if let Some(i) = ds.labels().iter().enumerate().position(|(i, &y)| y != i) {
        return Err(Error::format(
            (rows_start + i * record) as u64,
            format!("text head row {i} carries label {}", ds.labels()[i]),
        ));
    }
    Ok((TextHead::new(ds.features)?, catalog))
}

pub fn write_text_head(path: &Path, head: &TextHead, catalog: &ClassCatalog) -> Result<()> {
    io::write_atomic(path, &encode_text_head(head, catalog)?)
}

pub fn read_text_head(path: &Path) -> Result<(TextHead, ClassCatalog)> {
    decode_text_head(&io::read_bytes(path)?)
}

// ---------------------------------------------------------------------------
// Synthetic world
// ---------------------------------------------------------------------------

/// Parameters of the synthetic feature world.
///
/// Class centres are `normalize(axis + class_separation * g / sqrt(dim))`
/// for a shared random axis, so small separations give the narrow cone that
/// real image embeddings occupy. Samples add isotropic noise of norm roughly
/// `noise_scale` and are renormalised. Synthetic centres are the real ones
/// rotated by exactly `domain_gap` radians towards a common random direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub shots_per_class: usize,
    pub feature_dim: usize,
    pub class_separation: f64,
    pub noise_scale: f64,
    pub domain_gap: f64,
    /// Perturbation of the text rows around the real centres.
    pub text_noise: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_classes: 10,
            shots_per_class: 16,
            feature_dim: 64,
            class_separation: 1.0,
            noise_scale: 2.5,
            domain_gap: 0.2,
            text_noise: 1.0,
            train_per_class: 16,
            test_per_class: 50,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_string()));
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2");
        }
        if self.shots_per_class < 1 {
            return bad("shots_per_class must be at least 1");
        }
        if self.feature_dim < 2 {
            return bad("feature_dim must be at least 2");
        }
        if self.train_per_class < 1 || self.test_per_class < 1 {
            return bad("train_per_class and test_per_class must be at least 1");
        }
        for (name, v) in [
            ("class_separation", self.class_separation),
            ("noise_scale", self.noise_scale),
            ("domain_gap", self.domain_gap),
            ("text_noise", self.text_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct World {
    pub catalog: ClassCatalog,
    pub real_train: FeatureDataset,
    pub real_test: FeatureDataset,
    pub synthetic_balanced: FeatureDataset,
    pub text_head: TextHead,
}

fn gaussian(r: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| r.sample(StandardNormal)).collect()
}

/// Rounds through `f32` so the value survives a CFF1 round trip unchanged.
fn quantize(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

fn unit_row(v: &mut Vec<f64>) -> Result<()> {
    numerics::normalize(v)?;
    quantize(v);
    Ok(())
}

fn perturbed(center: &[f64], scale: f64, r: &mut impl Rng) -> Result<Vec<f64>> {
    let dim = center.len();
    let s = scale / (dim as f64).sqrt();
    let g = gaussian(r, dim);
    let mut v: Vec<f64> = center.iter().zip(&g).map(|(c, n)| c + s * n).collect();
    unit_row(&mut v)?;
    Ok(v)
}

/// `center` rotated by `angle` radians in the plane it spans with `towards`.
fn rotate_towards(center: &[f64], towards: &[f64], angle: f64) -> Result<Vec<f64>> {
    let proj = numerics::dot(center, towards);
    let mut u: Vec<f64> = towards.iter().zip(center).map(|(t, c)| t - proj * c).collect();
    numerics::normalize(&mut u)?;
    let (s, c) = angle.sin_cos();
    let mut v: Vec<f64> = center.iter().zip(&u).map(|(x, y)| c * x + s * y).collect();
    numerics::normalize(&mut v)?;
    Ok(v)
}

fn sample_classes(
    centers: &[Vec<f64>],
    per_class: usize,
    noise: f64,
    r: &mut impl Rng,
    source: SourceTag,
) -> Result<FeatureDataset> {
    let dim = centers[0].len();
    let mut data = Vec::with_capacity(centers.len() * per_class * dim);
    let mut labels = Vec::with_capacity(centers.len() * per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            data.extend(perturbed(center, noise, r)?);
            labels.push(c);
        }
    }
    let features = Matrix::new(labels.len(), dim, data)?;
    FeatureDataset::new(features, labels, centers.len(), source)
}

/// Generates real train/test splits, a class-balanced synthetic set and the
/// text head from one seed. Identical specs give bit-identical worlds.
pub fn generate_world(spec: &SynthSpec) -> Result<World> {
    spec.validate()?;
    let dim = spec.feature_dim;
    let mut geometry = rng::stream(spec.seed, &[tag::WORLD, 0]);

    let mut axis = gaussian(&mut geometry, dim);
    numerics::normalize(&mut axis)?;
    let sep = spec.class_separation / (dim as f64).sqrt();
    let mut centers = Vec::with_capacity(spec.num_classes);
    for _ in 0..spec.num_classes {
        let g = gaussian(&mut geometry, dim);
        let mut c: Vec<f64> = axis.iter().zip(&g).map(|(a, n)| a + sep * n).collect();
        unit_row(&mut c)?;
        centers.push(c);
    }

    let drift = gaussian(&mut geometry, dim);
    let synthetic_centers = if spec.domain_gap == 0.0 {
        centers.clone()
    } else {
        centers
            .iter()
            .map(|c| rotate_towards(c, &drift, spec.domain_gap))
            .collect::<Result<Vec<_>>>()?
    };

    let mut text_rng = rng::stream(spec.seed, &[tag::WORLD, 1]);
    let mut text = Vec::with_capacity(spec.num_classes * dim);
    for c in &centers {
        text.extend(perturbed(c, spec.text_noise, &mut text_rng)?);
    }
    let text_head = TextHead::new(Matrix::new(spec.num_classes, dim, text)?)?;

    let real_train = sample_classes(
        &centers,
        spec.train_per_class,
        spec.noise_scale,
        &mut rng::stream(spec.seed, &[tag::WORLD, 2]),
        SourceTag::Synthetic,
    )?;
    let real_test = sample_classes(
        &centers,
        spec.test_per_class,
        spec.noise_scale,
        &mut rng::stream(spec.seed, &[tag::WORLD, 3]),
        SourceTag::Synthetic,
    )?;
    let synthetic_balanced = sample_classes(
        &synthetic_centers,
        spec.shots_per_class,
        spec.noise_scale,
        &mut rng::stream(spec.seed, &[tag::WORLD, 4]),
        SourceTag::Synthetic,
    )?;

    Ok(World {
        catalog: ClassCatalog::numbered(spec.num_classes),
        real_train,
        real_test,
        synthetic_balanced,
        text_head,
    })
}

/// Fraction of `dataset` rows whose most similar text row (lowest index on
/// ties) carries the right label.
pub fn zero_shot_accuracy(head: &TextHead, dataset: &FeatureDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Degenerate("empty evaluation set".into()));
    }
    let scores = numerics::matmul(dataset.features(), &head.weights().transpose())?;
    let correct = (0..scores.rows())
        .filter(|&i| argmax(scores.row(i)) == dataset.labels()[i])
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
