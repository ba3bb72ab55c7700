//! On-disk layouts: the binary/CSV feature file, the model checkpoint, the
//! per-iteration loss logs, embedding exports, and report JSON. Every
//! writer is deterministic — identical inputs produce identical bytes —
//! because run directories are compared byte-for-byte.

use std::collections::BTreeMap;
use std::path::Path;

use hac_core::corpus::{ClassInfo, ConceptTaxonomy, CorpusSample};
use hac_core::eval::EvalReport;
use hac_core::geometry::GeometryConfig;
use hac_core::losses::{AuditReport, SimilarityKind};
use hac_core::tensor::Tensor;
use hac_core::trainer::{EncoderParams, ModelParams, TrainLog};

use crate::config::FeatureFormat;
use crate::{LabError, LabResult};

pub const FEATURE_MAGIC: [u8; 4] = *b"HACF";
pub const FEATURE_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"HACC";
pub const CHECKPOINT_VERSION: u32 = 1;

// ── little-endian cursor ────────────────────────────────────────────────

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8], path: &Path) -> Self {
        Cursor { buf, pos: 0, path: path.display().to_string() }
    }

    fn fail(&self, what: &str) -> LabError {
        LabError::Io(format!("{}: {what}", self.path))
    }

    fn take(&mut self, n: usize, what: &str) -> LabResult<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.fail(&format!("truncated while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> LabResult<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> LabResult<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> LabResult<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> LabResult<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> LabResult<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> LabResult<Vec<f64>> {
        let raw = self.take(8 * n, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> LabResult<()> {
    std::fs::write(path, bytes)
        .map_err(|e| LabError::Io(format!("{}: {e}", path.display())))
}

fn read_file(path: &Path) -> LabResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| LabError::Io(format!("{}: {e}", path.display())))
}

// ── feature files ───────────────────────────────────────────────────────

fn feature_dimension(samples: &[CorpusSample]) -> LabResult<usize> {
    let d = samples
        .first()
        .ok_or_else(|| LabError::Validation("cannot export an empty corpus".into()))?
        .image_feature
        .len();
    for (i, s) in samples.iter().enumerate() {
        if s.image_feature.len() != d || s.text_feature.len() != d {
            return Err(LabError::Validation(format!(
                "sample {i}: feature dimension differs from {d}"
            )));
        }
    }
    Ok(d)
}

pub fn write_features_binary(path: &Path, samples: &[CorpusSample]) -> LabResult<()> {
    let d = feature_dimension(samples)?;
    let mut out = Vec::with_capacity(20 + samples.len() * (8 + 16 * d));
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    for s in samples {
        out.extend_from_slice(&s.class_id.to_le_bytes());
        out.extend_from_slice(&s.superclass_id.to_le_bytes());
        for v in s.image_feature.iter().chain(&s.text_feature) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_file(path, &out)
}

pub fn read_features_binary(path: &Path) -> LabResult<Vec<CorpusSample>> {
    let bytes = read_file(path)?;
    let mut c = Cursor::new(&bytes, path);
    if c.take(4, "magic")? != FEATURE_MAGIC {
        return Err(c.fail("not a feature file (bad magic)"));
    }
    let version = c.u32("version")?;
    if version != FEATURE_VERSION {
        return Err(c.fail(&format!("unsupported feature-file version {version}")));
    }
    let d = c.u32("dimension")? as usize;
    if d < 2 {
        return Err(c.fail(&format!("feature dimension {d} must be ≥ 2")));
    }
    let count = c.u64("record count")?;
    if count == 0 {
        return Err(c.fail("empty corpus: file declares zero records"));
    }
    let mut samples = Vec::with_capacity(count as usize);
    for row in 0..count {
        let what = format!("record {row}");
        let class_id = c.u32(&what)?;
        let superclass_id = c.u32(&what)?;
        let image_feature = c.f64s(d, &what)?;
        let text_feature = c.f64s(d, &what)?;
        if !(image_feature.iter().all(|v| v.is_finite())
            && text_feature.iter().all(|v| v.is_finite()))
        {
            return Err(c.fail(&format!("record {row}: non-finite feature value")));
        }
        samples.push(CorpusSample { image_feature, text_feature, class_id, superclass_id });
    }
    if !c.done() {
        return Err(c.fail(&format!("trailing bytes after {count} records")));
    }
    Ok(samples)
}

pub fn write_features_csv(path: &Path, samples: &[CorpusSample]) -> LabResult<()> {
    let d = feature_dimension(samples)?;
    let mut out = String::from("class_id,superclass_id");
    for i in 0..d {
        out.push_str(&format!(",img_{i}"));
    }
    for i in 0..d {
        out.push_str(&format!(",txt_{i}"));
    }
    out.push('\n');
    for s in samples {
        out.push_str(&format!("{},{}", s.class_id, s.superclass_id));
        for v in s.image_feature.iter().chain(&s.text_feature) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

pub fn read_features_csv(path: &Path) -> LabResult<Vec<CorpusSample>> {
    let text = String::from_utf8(read_file(path)?)
        .map_err(|_| LabError::Io(format!("{}: not UTF-8 text", path.display())))?;
    let fail = |what: String| LabError::Io(format!("{}: {what}", path.display()));

    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| fail("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 6 || cols[0] != "class_id" || cols[1] != "superclass_id" {
        return Err(fail("header must start with class_id,superclass_id,img_0,…".into()));
    }
    let d = (cols.len() - 2) / 2;
    if cols.len() != 2 + 2 * d
        || (0..d).any(|i| cols[2 + i] != format!("img_{i}"))
        || (0..d).any(|i| cols[2 + d + i] != format!("txt_{i}"))
    {
        return Err(fail("header does not describe paired img_i/txt_i columns".into()));
    }

    let mut samples = Vec::new();
    for (row, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(fail(format!(
                "row {row}: expected {} fields for dimension {d}, got {}",
                cols.len(),
                fields.len()
            )));
        }
        let int = |s: &str, what: &str| {
            s.parse::<u32>().map_err(|_| fail(format!("row {row}: bad {what} {s:?}")))
        };
        let float = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| fail(format!("row {row}: bad feature value {s:?}")))
        };
        let class_id = int(fields[0], "class id")?;
        let superclass_id = int(fields[1], "superclass id")?;
        let image_feature =
            fields[2..2 + d].iter().map(|s| float(s)).collect::<LabResult<Vec<f64>>>()?;
        let text_feature =
            fields[2 + d..].iter().map(|s| float(s)).collect::<LabResult<Vec<f64>>>()?;
        samples.push(CorpusSample { image_feature, text_feature, class_id, superclass_id });
    }
    if samples.is_empty() {
        return Err(fail("empty corpus: no data rows".into()));
    }
    Ok(samples)
}

/// Load an external feature file and rebuild the taxonomy the rest of the
/// pipeline expects: per-class prototype = mean text feature (its prompt),
/// zero modality offsets.
pub fn ingest_external_features(
    path: &Path,
    format: FeatureFormat,
) -> LabResult<(ConceptTaxonomy, Vec<CorpusSample>)> {
    let samples = match format {
        FeatureFormat::Binary => read_features_binary(path)?,
        FeatureFormat::Csv => read_features_csv(path)?,
    };
    let d = samples[0].image_feature.len();

    let mut by_class: BTreeMap<u32, (u32, Vec<f64>, usize)> = BTreeMap::new();
    for (row, s) in samples.iter().enumerate() {
        let entry = by_class.entry(s.class_id).or_insert((s.superclass_id, vec![0.0; d], 0));
        if entry.0 != s.superclass_id {
            return Err(LabError::Io(format!(
                "{}: record {row}: class {} reassigned from superclass {} to {}",
                path.display(),
                s.class_id,
                entry.0,
                s.superclass_id
            )));
        }
        for (acc, v) in entry.1.iter_mut().zip(&s.text_feature) {
            *acc += v;
        }
        entry.2 += 1;
    }

    let classes: Vec<ClassInfo> = by_class
        .into_iter()
        .map(|(id, (superclass_id, sum, n))| ClassInfo {
            id,
            superclass_id,
            name: format!("external-{id}"),
            prototype: sum.into_iter().map(|v| v / n as f64).collect(),
        })
        .collect();
    let taxonomy = ConceptTaxonomy::from_parts(classes, vec![0.0; d], vec![0.0; d])
        .map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
    Ok((taxonomy, samples))
}

// ── checkpoints ─────────────────────────────────────────────────────────

pub fn save_checkpoint(path: &Path, model: &ModelParams) -> LabResult<()> {
    let geo = model.geometry();
    let named = model.named_tensors();
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(match model.kind() {
        SimilarityKind::EuclideanCosine => 0,
        SimilarityKind::HyperbolicNegativeDistance => 1,
    });
    out.extend_from_slice(&geo.curvature.to_le_bytes());
    out.extend_from_slice(&geo.aperture_k.to_le_bytes());
    out.extend_from_slice(&geo.acosh_eps.to_le_bytes());
    out.push(u8::from(geo.literal_lorentz_norm));
    out.extend_from_slice(&model.log_temperature().to_le_bytes());
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, tensor) in named {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(tensor.shape().len() as u8);
        for &e in tensor.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in tensor.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_file(path, &out)
}

pub fn load_checkpoint(path: &Path) -> LabResult<ModelParams> {
    let bytes = read_file(path)?;
    let mut c = Cursor::new(&bytes, path);
    if c.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(c.fail("not a checkpoint file (bad magic)"));
    }
    let version = c.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(c.fail(&format!("unsupported checkpoint version {version}")));
    }
    let kind = match c.u8("similarity kind")? {
        0 => SimilarityKind::EuclideanCosine,
        1 => SimilarityKind::HyperbolicNegativeDistance,
        k => return Err(c.fail(&format!("unknown similarity kind {k}"))),
    };
    let geometry = GeometryConfig {
        curvature: c.f64("curvature")?,
        aperture_k: c.f64("aperture")?,
        acosh_eps: c.f64("acosh eps")?,
        literal_lorentz_norm: c.u8("norm flag")? != 0,
    };
    let log_temperature = c.f64("log temperature")?;
    let tensor_count = c.u32("tensor count")? as usize;

    let mut image_layers: Vec<(usize, Option<Tensor>, Option<Tensor>)> = Vec::new();
    let mut text_layers: Vec<(usize, Option<Tensor>, Option<Tensor>)> = Vec::new();
    for _ in 0..tensor_count {
        let name_len = c.u16("name length")? as usize;
        let name = std::str::from_utf8(c.take(name_len, "name")?)
            .map_err(|_| c.fail("parameter name is not UTF-8"))?
            .to_string();
        let rank = c.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u32("extent")? as usize);
        }
        let n: usize = shape.iter().product();
        let values = c.f64s(n, &name)?;
        let tensor = Tensor::new(shape, values).map_err(|e| c.fail(&format!("{name}: {e}")))?;

        let parts: Vec<&str> = name.split('.').collect();
        let (side, layer, role) = match parts.as_slice() {
            [side, l, role] if l.starts_with('l') => (*side, &l[1..], *role),
            _ => return Err(c.fail(&format!("unrecognized parameter name {name:?}"))),
        };
        let idx: usize =
            layer.parse().map_err(|_| c.fail(&format!("bad layer index in {name:?}")))?;
        let layers = match side {
            "image" => &mut image_layers,
            "text" => &mut text_layers,
            _ => return Err(c.fail(&format!("unrecognized parameter name {name:?}"))),
        };
        if layers.len() <= idx {
            layers.resize_with(idx + 1, || (0, None, None));
        }
        layers[idx].0 = idx;
        let slot = match role {
            "weight" => &mut layers[idx].1,
            "bias" => &mut layers[idx].2,
            _ => return Err(c.fail(&format!("unrecognized parameter name {name:?}"))),
        };
        if slot.replace(tensor).is_some() {
            return Err(c.fail(&format!("duplicate parameter {name:?}")));
        }
    }
    if !c.done() {
        return Err(c.fail("trailing bytes after declared tensors"));
    }

    let assemble = |layers: Vec<(usize, Option<Tensor>, Option<Tensor>)>,
                    side: &str|
     -> LabResult<EncoderParams> {
        let mut pairs = Vec::with_capacity(layers.len());
        for (i, w, b) in layers {
            match (w, b) {
                (Some(w), Some(b)) => pairs.push((w, b)),
                _ => {
                    return Err(LabError::Io(format!(
                        "{}: {side} layer {i} is missing its weight or bias",
                        path.display()
                    )))
                }
            }
        }
        EncoderParams::from_layers(pairs)
            .map_err(|e| LabError::Io(format!("{}: {side} encoder: {e}", path.display())))
    };
    let image = assemble(image_layers, "image")?;
    let text = assemble(text_layers, "text")?;
    ModelParams::from_parts(image, text, log_temperature, kind, geometry)
        .map_err(|e| LabError::Io(format!("{}: {e}", path.display())))
}

// ── loss logs ───────────────────────────────────────────────────────────

/// Fixed unlearning component columns; terms a mode does not use are
/// written as 0 so one header serves all three objectives.
pub const UNLEARN_LOG_COLUMNS: [&str; 7] = [
    "retain",
    "negative_alignment",
    "positive_alignment",
    "performance_preserving",
    "retain_entailment",
    "forget_entailment",
    "norm_regularization",
];

/// Map the trainer's component names onto this file's column names (the
/// trainer logs the shorthand `norm_reg`).
fn component(record_components: &[(&'static str, f64)], column: &str) -> f64 {
    let key = if column == "norm_regularization" { "norm_reg" } else { column };
    record_components.iter().find(|(n, _)| *n == key).map_or(0.0, |(_, v)| *v)
}

fn write_log_csv(path: &Path, log: &TrainLog, columns: &[&str]) -> LabResult<()> {
    let mut out = String::from("iteration,lr,grad_norm");
    for c in columns {
        out.push_str(&format!(",{c}"));
    }
    out.push_str(",total\n");
    for r in &log.records {
        out.push_str(&format!("{},{},{}", r.iteration, r.lr, r.grad_norm));
        for c in columns {
            out.push_str(&format!(",{}", component(&r.components, c)));
        }
        out.push_str(&format!(",{}\n", r.total));
    }
    write_file(path, out.as_bytes())
}

pub fn write_unlearn_log_csv(path: &Path, log: &TrainLog) -> LabResult<()> {
    write_log_csv(path, log, &UNLEARN_LOG_COLUMNS)
}

pub fn write_pretrain_log_csv(path: &Path, log: &TrainLog) -> LabResult<()> {
    write_log_csv(path, log, &["contrastive", "entailment"])
}

// ── reports ─────────────────────────────────────────────────────────────

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> LabResult<()> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

pub fn read_eval_report(path: &Path) -> LabResult<EvalReport> {
    serde_json::from_slice(&read_file(path)?)
        .map_err(|e| LabError::Io(format!("{}: {e}", path.display())))
}

pub fn read_audit_report(path: &Path) -> LabResult<AuditReport> {
    serde_json::from_slice(&read_file(path)?)
        .map_err(|e| LabError::Io(format!("{}: {e}", path.display())))
}

// ── embedding export ────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub modality: String,
    pub class_id: u32,
    pub coords: Vec<f64>,
    /// Lorentz time component; `None` in euclidean exports.
    pub time: Option<f64>,
}

pub fn write_embeddings_csv(path: &Path, rows: &[EmbeddingRow]) -> LabResult<()> {
    let first = rows
        .first()
        .ok_or_else(|| LabError::Validation("no embeddings to export".into()))?;
    let d = first.coords.len();
    let hyper = first.time.is_some();
    let mut out = String::from("modality,class_id");
    for i in 0..d {
        out.push_str(&format!(",c{i}"));
    }
    if hyper {
        out.push_str(",time");
    }
    out.push('\n');
    for r in rows {
        if r.coords.len() != d || r.time.is_some() != hyper {
            return Err(LabError::Validation("mixed embedding shapes in export".into()));
        }
        out.push_str(&format!("{},{}", r.modality, r.class_id));
        for v in &r.coords {
            out.push_str(&format!(",{v}"));
        }
        if let Some(t) = r.time {
            out.push_str(&format!(",{t}"));
        }
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

pub fn read_embeddings_csv(path: &Path) -> LabResult<Vec<EmbeddingRow>> {
    let text = String::from_utf8(read_file(path)?)
        .map_err(|_| LabError::Io(format!("{}: not UTF-8 text", path.display())))?;
    let fail = |what: String| LabError::Io(format!("{}: {what}", path.display()));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| fail("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let hyper = cols.last() == Some(&"time");
    let d = cols.len() - 2 - usize::from(hyper);
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(fail(format!("row {i}: wrong field count")));
        }
        let float = |s: &str| s.parse::<f64>().map_err(|_| fail(format!("row {i}: bad value {s:?}")));
        rows.push(EmbeddingRow {
            modality: fields[0].to_string(),
            class_id: fields[1].parse().map_err(|_| fail(format!("row {i}: bad class id")))?,
            coords: fields[2..2 + d].iter().map(|s| float(s)).collect::<LabResult<_>>()?,
            time: if hyper { Some(float(fields[2 + d])?) } else { None },
        });
    }
    Ok(rows)
}

// ── sweep table ─────────────────────────────────────────────────────────

pub fn write_sweep_csv(
    path: &Path,
    axis: &str,
    rows: &[(f64, Option<f64>, Option<f64>)],
) -> LabResult<()> {
    let mut out = format!("{axis},r_acc,f_acc\n");
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for (value, r, f) in rows {
        out.push_str(&format!("{value},{},{}\n", cell(*r), cell(*f)));
    }
    write_file(path, out.as_bytes())
}
