//! Deterministic synthetic stand-in for a hierarchical image/text corpus:
//! superclasses own classes, every class owns a feature prototype, and
//! samples are prototype + modality offset + seeded noise. Includes the
//! retain/forget split and the balanced batch sampler that training
//! consumes.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

// Placement geometry. Superclass anchors live on a sphere of radius
// SUPER_RADIUS and are resampled until pairwise distances reach
// SUPER_MIN_SEP; class prototypes sit on a sphere of radius CLASS_RADIUS
// around their anchor with pairwise separation CLASS_MIN_SEP. The gap
// between the two scales is what guarantees the within-superclass <
// cross-superclass distance invariant.
const SUPER_RADIUS: f64 = 3.0;
const SUPER_MIN_SEP: f64 = 3.6;
const CLASS_RADIUS: f64 = 0.6;
const CLASS_MIN_SEP: f64 = 0.68;
const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassInfo {
    pub id: u32,
    pub superclass_id: u32,
    pub name: String,
    pub prototype: Vec<f64>,
}

/// The class hierarchy plus the two fixed modality offsets; everything a
/// consumer needs to produce or label samples without the generating rng.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptTaxonomy {
    classes: Vec<ClassInfo>,
    superclass_count: usize,
    dimension: usize,
    image_offset: Vec<f64>,
    text_offset: Vec<f64>,
}

impl ConceptTaxonomy {
    /// Assemble a taxonomy from externally supplied classes (ingested
    /// feature files rather than the synthetic generator). Class ids must
    /// be the dense range 0..n — evaluation indexes confusion matrices by
    /// raw id — and every vector must share one dimension ≥ 2.
    pub fn from_parts(
        mut classes: Vec<ClassInfo>,
        image_offset: Vec<f64>,
        text_offset: Vec<f64>,
    ) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::EmptyInput { op: "taxonomy" });
        }
        let d = image_offset.len();
        if d < 2 {
            return Err(Error::InvalidShape {
                op: "taxonomy",
                detail: format!("dimension must be ≥ 2, got {d}"),
            });
        }
        if text_offset.len() != d {
            return Err(Error::ShapeMismatch {
                op: "taxonomy",
                lhs: alloc::vec![d],
                rhs: alloc::vec![text_offset.len()],
            });
        }
        classes.sort_by_key(|c| c.id);
        let mut supers = BTreeSet::new();
        for (i, c) in classes.iter().enumerate() {
            if c.id != i as u32 {
                return Err(Error::invalid(format!(
                    "class ids must form the dense range 0..{}, got id {} at position {i}",
                    classes.len(),
                    c.id
                )));
            }
            if c.prototype.len() != d {
                return Err(Error::ShapeMismatch {
                    op: "taxonomy",
                    lhs: alloc::vec![d],
                    rhs: alloc::vec![c.prototype.len()],
                });
            }
            if !c.prototype.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite { op: "taxonomy" });
            }
            supers.insert(c.superclass_id);
        }
        if !(image_offset.iter().all(|v| v.is_finite())
            && text_offset.iter().all(|v| v.is_finite()))
        {
            return Err(Error::NonFinite { op: "taxonomy" });
        }
        Ok(ConceptTaxonomy {
            classes,
            superclass_count: supers.len(),
            dimension: d,
            image_offset,
            text_offset,
        })
    }

    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn class(&self, id: u32) -> Result<&ClassInfo> {
        self.classes
            .iter()
            .find(|c| c.id == id)
            .ok_or_else(|| Error::invalid(format!("unknown class id {id}")))
    }

    pub fn class_ids(&self) -> Vec<u32> {
        self.classes.iter().map(|c| c.id).collect()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn superclass_count(&self) -> usize {
        self.superclass_count
    }

    pub fn image_offset(&self) -> &[f64] {
        &self.image_offset
    }

    pub fn text_offset(&self) -> &[f64] {
        &self.text_offset
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSample {
    pub image_feature: Vec<f64>,
    pub text_feature: Vec<f64>,
    pub class_id: u32,
    pub superclass_id: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct CorpusConfig {
    pub superclasses: usize,
    pub classes_per_superclass: usize,
    pub dimension: usize,
    pub samples_per_class: usize,
    pub noise_scale: f64,
    pub modality_offset_scale: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            superclasses: 2,
            classes_per_superclass: 4,
            dimension: 16,
            samples_per_class: 60,
            noise_scale: 0.1,
            modality_offset_scale: 0.5,
            seed: 7,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.superclasses == 0 || self.classes_per_superclass == 0 || self.samples_per_class == 0
        {
            return Err(Error::invalid("corpus: all counts must be at least 1"));
        }
        if self.dimension < 2 {
            return Err(Error::InvalidShape {
                op: "corpus",
                detail: format!("feature dimension must be ≥ 2, got {}", self.dimension),
            });
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return Err(Error::invalid("corpus: noise scale must be finite and ≥ 0"));
        }
        if !(self.modality_offset_scale.is_finite() && self.modality_offset_scale >= 0.0) {
            return Err(Error::invalid("corpus: offset scale must be finite and ≥ 0"));
        }
        Ok(())
    }

    pub fn class_count(&self) -> usize {
        self.superclasses * self.classes_per_superclass
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = crate::tensor::l2_slice(&v);
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn sq_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Draw points on a sphere of `radius` around `center`, resampling until
/// each keeps `min_sep` from the ones already placed.
fn place_separated(
    rng: &mut ChaCha8Rng,
    count: usize,
    d: usize,
    center: Option<&[f64]>,
    radius: f64,
    min_sep: f64,
) -> Result<Vec<Vec<f64>>> {
    let mut points: Vec<Vec<f64>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut attempts = 0;
        loop {
            let mut p: Vec<f64> = unit_vector(rng, d).into_iter().map(|x| x * radius).collect();
            if let Some(c) = center {
                for (pi, ci) in p.iter_mut().zip(c) {
                    *pi += ci;
                }
            }
            if points.iter().all(|q| sq_distance(&p, q) >= min_sep * min_sep) {
                points.push(p);
                break;
            }
            attempts += 1;
            if attempts >= MAX_PLACEMENT_ATTEMPTS {
                return Err(Error::Domain {
                    op: "generate_corpus",
                    detail: format!(
                        "cannot place {count} prototypes with separation {min_sep} in dimension {d}"
                    ),
                });
            }
        }
    }
    Ok(points)
}

/// Build the taxonomy and one training corpus from a seed. The same config
/// always produces the bitwise-identical result.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<(ConceptTaxonomy, Vec<CorpusSample>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.dimension;

    let anchors = place_separated(&mut rng, cfg.superclasses, d, None, SUPER_RADIUS, SUPER_MIN_SEP)?;

    let mut classes = Vec::with_capacity(cfg.class_count());
    for (su, anchor) in anchors.iter().enumerate() {
        let protos = place_separated(
            &mut rng,
            cfg.classes_per_superclass,
            d,
            Some(anchor),
            CLASS_RADIUS,
            CLASS_MIN_SEP,
        )?;
        for (ci, prototype) in protos.into_iter().enumerate() {
            classes.push(ClassInfo {
                id: classes.len() as u32,
                superclass_id: su as u32,
                name: format!("class-{su}-{ci}"),
                prototype,
            });
        }
    }

    let scale = cfg.modality_offset_scale;
    let image_offset: Vec<f64> = unit_vector(&mut rng, d).into_iter().map(|x| x * scale).collect();
    let text_offset: Vec<f64> = unit_vector(&mut rng, d).into_iter().map(|x| x * scale).collect();

    let taxonomy = ConceptTaxonomy {
        classes,
        superclass_count: cfg.superclasses,
        dimension: d,
        image_offset,
        text_offset,
    };
    let sample_seed = rng.random::<u64>();
    let samples = generate_samples(&taxonomy, cfg.samples_per_class, cfg.noise_scale, sample_seed);
    Ok((taxonomy, samples))
}

/// Draw a fresh sample set from an existing taxonomy — the held-out
/// evaluation sets come from here with their own seeds.
pub fn generate_samples(
    taxonomy: &ConceptTaxonomy,
    samples_per_class: usize,
    noise_scale: f64,
    seed: u64,
) -> Vec<CorpusSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = taxonomy.dimension;
    let mut samples = Vec::with_capacity(taxonomy.classes.len() * samples_per_class);
    for class in &taxonomy.classes {
        for _ in 0..samples_per_class {
            let mut image = Vec::with_capacity(d);
            let mut text = Vec::with_capacity(d);
            for k in 0..d {
                let ni: f64 = rng.sample(StandardNormal);
                let nt: f64 = rng.sample(StandardNormal);
                image.push(class.prototype[k] + taxonomy.image_offset[k] + noise_scale * ni);
                text.push(class.prototype[k] + taxonomy.text_offset[k] + noise_scale * nt);
            }
            samples.push(CorpusSample {
                image_feature: image,
                text_feature: text,
                class_id: class.id,
                superclass_id: class.superclass_id,
            });
        }
    }
    samples
}

/// The canonical noise-free text feature of a class — the synthetic analog
/// of encoding a class-name prompt.
pub fn class_prompt_feature(taxonomy: &ConceptTaxonomy, class_id: u32) -> Result<Vec<f64>> {
    let class = taxonomy.class(class_id)?;
    Ok(class
        .prototype
        .iter()
        .zip(&taxonomy.text_offset)
        .map(|(p, o)| p + o)
        .collect())
}

/// Which classes to forget. Always non-empty; validity against a taxonomy
/// (subset, retain side non-empty) is checked at split time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForgetSpec {
    classes: BTreeSet<u32>,
}

impl ForgetSpec {
    pub fn new(classes: impl IntoIterator<Item = u32>) -> Result<Self> {
        let classes: BTreeSet<u32> = classes.into_iter().collect();
        if classes.is_empty() {
            return Err(Error::EmptyInput { op: "forget_spec" });
        }
        Ok(ForgetSpec { classes })
    }

    pub fn contains(&self, class_id: u32) -> bool {
        self.classes.contains(&class_id)
    }

    pub fn class_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.classes.iter().copied()
    }

    pub fn validate_against(&self, taxonomy: &ConceptTaxonomy) -> Result<()> {
        let known: BTreeSet<u32> = taxonomy.classes.iter().map(|c| c.id).collect();
        for id in &self.classes {
            if !known.contains(id) {
                return Err(Error::invalid(format!("forget spec names unknown class {id}")));
            }
        }
        if self.classes.len() >= known.len() {
            return Err(Error::invalid(
                "forget spec covers every class; nothing would remain to retain",
            ));
        }
        Ok(())
    }
}

/// Partition a corpus by class membership: (retain, forget).
pub fn split_forget(
    corpus: &[CorpusSample],
    spec: &ForgetSpec,
    taxonomy: &ConceptTaxonomy,
) -> Result<(Vec<CorpusSample>, Vec<CorpusSample>)> {
    spec.validate_against(taxonomy)?;
    let mut retain = Vec::new();
    let mut forget = Vec::new();
    for s in corpus {
        if spec.contains(s.class_id) {
            forget.push(s.clone());
        } else {
            retain.push(s.clone());
        }
    }
    Ok((retain, forget))
}

/// Raw features of one balanced batch: first the retain pairs, then the
/// forget pairs, with the mask and class labels aligned row-for-row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    pub image: Tensor,
    pub text: Tensor,
    pub forget_mask: Vec<bool>,
    pub class_ids: Vec<u32>,
}

fn batch_from_indices(
    retain: &[CorpusSample],
    forget: &[CorpusSample],
    r_idx: &[usize],
    f_idx: &[usize],
) -> FeatureBatch {
    let picks = r_idx
        .iter()
        .map(|&i| (&retain[i], false))
        .chain(f_idx.iter().map(|&i| (&forget[i], true)));
    let mut image = Vec::new();
    let mut text = Vec::new();
    let mut mask = Vec::new();
    let mut class_ids = Vec::new();
    let mut rows = 0usize;
    let d = retain
        .first()
        .map(|s| s.image_feature.len())
        .or_else(|| forget.first().map(|s| s.image_feature.len()))
        .unwrap_or(0);
    for (s, is_forget) in picks {
        image.extend_from_slice(&s.image_feature);
        text.extend_from_slice(&s.text_feature);
        mask.push(is_forget);
        class_ids.push(s.class_id);
        rows += 1;
    }
    FeatureBatch {
        image: Tensor::new(alloc::vec![rows, d], image).expect("batch image tensor"),
        text: Tensor::new(alloc::vec![rows, d], text).expect("batch text tensor"),
        forget_mask: mask,
        class_ids,
    }
}

/// One-shot balanced draw: N distinct retain pairs then N distinct forget
/// pairs, chosen by seeded permutation prefixes.
pub fn sample_balanced_batch(
    retain: &[CorpusSample],
    forget: &[CorpusSample],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<FeatureBatch> {
    if n == 0 {
        return Err(Error::EmptyInput { op: "sample_balanced_batch" });
    }
    if retain.len() < n || forget.len() < n {
        return Err(Error::invalid(format!(
            "balanced batch needs {n} pairs per side; have {} retain, {} forget",
            retain.len(),
            forget.len()
        )));
    }
    let mut r_idx: Vec<usize> = (0..retain.len()).collect();
    let mut f_idx: Vec<usize> = (0..forget.len()).collect();
    r_idx.shuffle(rng);
    f_idx.shuffle(rng);
    Ok(batch_from_indices(retain, forget, &r_idx[..n], &f_idx[..n]))
}

/// Epoch-based balanced sampler: each side is consumed without replacement
/// through a seeded permutation, reshuffled when fewer than N entries
/// remain (the short remainder is dropped).
#[derive(Debug, Clone)]
pub struct BalancedSampler {
    retain: Vec<CorpusSample>,
    forget: Vec<CorpusSample>,
    n: usize,
    r_order: Vec<usize>,
    f_order: Vec<usize>,
    r_pos: usize,
    f_pos: usize,
}

impl BalancedSampler {
    pub fn new(retain: Vec<CorpusSample>, forget: Vec<CorpusSample>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyInput { op: "balanced_sampler" });
        }
        if retain.len() < n || forget.len() < n {
            return Err(Error::invalid(format!(
                "balanced sampler needs {n} pairs per side; have {} retain, {} forget",
                retain.len(),
                forget.len()
            )));
        }
        let r_len = retain.len();
        let f_len = forget.len();
        Ok(BalancedSampler {
            retain,
            forget,
            n,
            r_order: (0..r_len).collect(),
            f_order: (0..f_len).collect(),
            // Start exhausted so the first draw shuffles.
            r_pos: r_len,
            f_pos: f_len,
        })
    }

    pub fn pairs_per_side(&self) -> usize {
        self.n
    }

    pub fn next_batch(&mut self, rng: &mut ChaCha8Rng) -> FeatureBatch {
        if self.r_pos + self.n > self.r_order.len() {
            self.r_order.shuffle(rng);
            self.r_pos = 0;
        }
        if self.f_pos + self.n > self.f_order.len() {
            self.f_order.shuffle(rng);
            self.f_pos = 0;
        }
        let r = &self.r_order[self.r_pos..self.r_pos + self.n];
        let f = &self.f_order[self.f_pos..self.f_pos + self.n];
        let batch = batch_from_indices(&self.retain, &self.forget, r, f);
        self.r_pos += self.n;
        self.f_pos += self.n;
        batch
    }
}
