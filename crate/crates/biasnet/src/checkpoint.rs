//! Manifest-plus-blob container files.
//!
//! A container is a UTF-8 text manifest (format version, kind, free-form
//! metadata, one line per payload entry with name/dtype/shape/offset/count,
//! payload byte length and SHA-256) followed by a `---` separator line and
//! the raw little-endian payload. Parameters are stored as 32-bit floats,
//! labels as raw bytes. The same container carries model checkpoints, bias
//! banks, and dataset caches.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::dataset::{ImageSet, NoiseSpec, Provenance, IMG_HW};
use crate::model::{DAParams, LeNetParams, LeNetShape, ModelMeta, DA_VISIBLE};
use crate::tensor::{Scalar, Tensor};
use crate::training::{BankKind, BiasBank, BiasVectors, LayerSet};
use crate::{Error, Result};

pub const CONTAINER_VERSION: u32 = 1;
const MAGIC: &str = "BIASNET-CONTAINER";
const SEPARATOR: &str = "---";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    F32,
    U8,
}

impl EntryKind {
    fn as_str(self) -> &'static str {
        match self {
            EntryKind::F32 => "f32",
            EntryKind::U8 => "u8",
        }
    }

    fn byte_width(self) -> usize {
        match self {
            EntryKind::F32 => 4,
            EntryKind::U8 => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Entry {
    pub name: String,
    pub kind: EntryKind,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub count: usize,
}

/// In-memory container; build with the `push_*` methods, then [`Container::write`].
#[derive(Debug, Clone, Default)]
pub struct Container {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    entries: Vec<Entry>,
    payload: Vec<u8>,
}

impl Container {
    pub fn new(kind: impl Into<String>) -> Self {
        Container { kind: kind.into(), ..Default::default() }
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.insert(key.into(), value.into());
    }

    pub fn meta_value(&self, key: &str, path: &str) -> Result<&str> {
        self.meta.get(key).map(|s| s.as_str()).ok_or_else(|| Error::ContainerManifest {
            path: path.to_string(),
            detail: format!("missing meta key '{key}'"),
        })
    }

    pub fn push_f32(&mut self, name: impl Into<String>, shape: Vec<usize>, values: &[f32]) {
        let offset = self.payload.len();
        for v in values {
            self.payload.extend_from_slice(&v.to_le_bytes());
        }
        self.entries.push(Entry {
            name: name.into(),
            kind: EntryKind::F32,
            shape,
            offset,
            count: values.len(),
        });
    }

    pub fn push_u8(&mut self, name: impl Into<String>, shape: Vec<usize>, values: &[u8]) {
        let offset = self.payload.len();
        self.payload.extend_from_slice(values);
        self.entries.push(Entry {
            name: name.into(),
            kind: EntryKind::U8,
            shape,
            offset,
            count: values.len(),
        });
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    fn entry(&self, name: &str) -> Result<&Entry> {
        self.entries.iter().find(|e| e.name == name).ok_or_else(|| Error::ContainerManifest {
            path: self.kind.clone(),
            detail: format!("missing entry '{name}'"),
        })
    }

    pub fn f32_values(&self, name: &str) -> Result<(Vec<usize>, Vec<f32>)> {
        let e = self.entry(name)?;
        if e.kind != EntryKind::F32 {
            return Err(Error::ContainerManifest {
                path: self.kind.clone(),
                detail: format!("entry '{name}' is not f32"),
            });
        }
        let bytes = &self.payload[e.offset..e.offset + 4 * e.count];
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok((e.shape.clone(), values))
    }

    pub fn u8_values(&self, name: &str) -> Result<(Vec<usize>, Vec<u8>)> {
        let e = self.entry(name)?;
        if e.kind != EntryKind::U8 {
            return Err(Error::ContainerManifest {
                path: self.kind.clone(),
                detail: format!("entry '{name}' is not u8"),
            });
        }
        Ok((e.shape.clone(), self.payload[e.offset..e.offset + e.count].to_vec()))
    }

    pub fn payload_sha256(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(&self.payload);
        hex_encode(&hasher.finalize())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = String::new();
        let _ = writeln!(manifest, "{MAGIC} v{CONTAINER_VERSION}");
        let _ = writeln!(manifest, "kind: {}", self.kind);
        for (k, v) in &self.meta {
            let _ = writeln!(manifest, "meta.{k}={v}");
        }
        for e in &self.entries {
            let shape = e.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
            let _ = writeln!(
                manifest,
                "entry {} kind={} shape={} offset={} count={}",
                e.name,
                e.kind.as_str(),
                shape,
                e.offset,
                e.count
            );
        }
        let _ = writeln!(manifest, "payload.bytes={}", self.payload.len());
        let _ = writeln!(manifest, "payload.sha256={}", self.payload_sha256());
        let _ = writeln!(manifest, "{SEPARATOR}");
        let mut bytes = manifest.into_bytes();
        bytes.extend_from_slice(&self.payload);
        bytes
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let p = path.as_ref().display().to_string();
        std::fs::write(path.as_ref(), self.to_bytes()).map_err(|e| Error::io(&p, e))
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self> {
        let sep = format!("\n{SEPARATOR}\n");
        let sep_pos = find_subsequence(bytes, sep.as_bytes()).ok_or_else(|| {
            Error::ContainerBadMagic(path.to_string())
        })?;
        let manifest = std::str::from_utf8(&bytes[..sep_pos]).map_err(|_| {
            Error::ContainerManifest { path: path.to_string(), detail: "manifest is not UTF-8".into() }
        })?;
        let payload = &bytes[sep_pos + sep.len()..];

        let mut lines = manifest.lines();
        let header = lines.next().unwrap_or("");
        let version = header
            .strip_prefix(MAGIC)
            .and_then(|rest| rest.trim().strip_prefix('v'))
            .and_then(|v| v.parse::<u32>().ok())
            .ok_or_else(|| Error::ContainerBadMagic(path.to_string()))?;
        if version != CONTAINER_VERSION {
            return Err(Error::ContainerVersion {
                path: path.to_string(),
                supported: CONTAINER_VERSION,
                found: version,
            });
        }

        let mut container = Container::default();
        let mut declared_bytes = None;
        let mut declared_sha = None;
        for line in lines {
            if let Some(kind) = line.strip_prefix("kind: ") {
                container.kind = kind.to_string();
            } else if let Some(kv) = line.strip_prefix("meta.") {
                if let Some((k, v)) = kv.split_once('=') {
                    container.meta.insert(k.to_string(), v.to_string());
                }
            } else if let Some(entry) = line.strip_prefix("entry ") {
                container.entries.push(parse_entry(entry, path)?);
            } else if let Some(v) = line.strip_prefix("payload.bytes=") {
                declared_bytes = v.parse::<usize>().ok();
            } else if let Some(v) = line.strip_prefix("payload.sha256=") {
                declared_sha = Some(v.to_string());
            }
        }

        let declared_bytes = declared_bytes.ok_or_else(|| Error::ContainerManifest {
            path: path.to_string(),
            detail: "missing payload.bytes".into(),
        })?;
        if payload.len() < declared_bytes {
            return Err(Error::ContainerTruncated {
                path: path.to_string(),
                needed: declared_bytes,
                have: payload.len(),
            });
        }
        container.payload = payload[..declared_bytes].to_vec();

        let declared_sha = declared_sha.ok_or_else(|| Error::ContainerManifest {
            path: path.to_string(),
            detail: "missing payload.sha256".into(),
        })?;
        if container.payload_sha256() != declared_sha {
            return Err(Error::ContainerChecksum(path.to_string()));
        }

        // entries must stay inside the payload
        for e in &container.entries {
            if e.offset + e.count * e.kind.byte_width() > container.payload.len() {
                return Err(Error::ContainerTruncated {
                    path: path.to_string(),
                    needed: e.offset + e.count * e.kind.byte_width(),
                    have: container.payload.len(),
                });
            }
        }
        Ok(container)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let p = path.as_ref().display().to_string();
        let bytes = std::fs::read(path.as_ref()).map_err(|e| Error::io(&p, e))?;
        Container::from_bytes(&bytes, &p)
    }
}

fn parse_entry(line: &str, path: &str) -> Result<Entry> {
    let mut name = None;
    let mut kind = None;
    let mut shape = None;
    let mut offset = None;
    let mut count = None;
    for (i, tok) in line.split_whitespace().enumerate() {
        if i == 0 {
            name = Some(tok.to_string());
            continue;
        }
        let (k, v) = tok.split_once('=').ok_or_else(|| Error::ContainerManifest {
            path: path.to_string(),
            detail: format!("malformed entry token '{tok}'"),
        })?;
        match k {
            "kind" => {
                kind = Some(match v {
                    "f32" => EntryKind::F32,
                    "u8" => EntryKind::U8,
                    _ => {
                        return Err(Error::ContainerManifest {
                            path: path.to_string(),
                            detail: format!("unknown entry kind '{v}'"),
                        })
                    }
                })
            }
            "shape" => {
                shape = Some(
                    v.split('x')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| Error::ContainerManifest {
                            path: path.to_string(),
                            detail: format!("bad shape '{v}'"),
                        })?,
                )
            }
            "offset" => offset = v.parse().ok(),
            "count" => count = v.parse().ok(),
            _ => {}
        }
    }
    match (name, kind, shape, offset, count) {
        (Some(name), Some(kind), Some(shape), Some(offset), Some(count)) => {
            Ok(Entry { name, kind, shape, offset, count })
        }
        _ => Err(Error::ContainerManifest {
            path: path.to_string(),
            detail: format!("incomplete entry line '{line}'"),
        }),
    }
}

fn find_subsequence(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

fn hex_encode(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn to_f32<T: Scalar>(values: &[T]) -> Vec<f32> {
    values.iter().map(|v| v.as_f64() as f32).collect()
}

fn from_f32<T: Scalar>(values: &[f32]) -> Vec<T> {
    values.iter().map(|&v| T::from_f64(v as f64)).collect()
}

// ── LeNet checkpoints ──────────────────────────────────────────────────────

fn lenet_container<T: Scalar>(params: &LeNetParams<T>) -> Container {
    let s = params.shape;
    let mut c = Container::new("lenet");
    c.set_meta("noise", params.meta.noise.to_string());
    c.set_meta("seed", params.meta.seed.to_string());
    c.set_meta("epochs", params.meta.epochs.to_string());
    c.push_f32("conv1/w", params.conv1_w.shape().to_vec(), &to_f32(params.conv1_w.data()));
    c.push_f32("conv1/b", vec![s.conv1_filters], &to_f32(&params.conv1_b));
    c.push_f32("conv2/w", params.conv2_w.shape().to_vec(), &to_f32(params.conv2_w.data()));
    c.push_f32("conv2/b", vec![s.conv2_filters], &to_f32(&params.conv2_b));
    c.push_f32("hidden/w", params.hidden_w.shape().to_vec(), &to_f32(params.hidden_w.data()));
    c.push_f32("hidden/b", vec![s.hidden_units], &to_f32(&params.hidden_b));
    c.push_f32("out/w", params.out_w.shape().to_vec(), &to_f32(params.out_w.data()));
    c.push_f32("out/b", vec![s.classes], &to_f32(&params.out_b));
    c
}

pub fn save_lenet<T: Scalar>(params: &LeNetParams<T>, path: impl AsRef<Path>) -> Result<()> {
    lenet_container(params).write(path)
}

/// Identity of a parameter set: SHA-256 over its canonical f32 payload.
/// Banks anchor to this value.
pub fn lenet_params_id<T: Scalar>(params: &LeNetParams<T>) -> String {
    lenet_container(params).payload_sha256()
}

/// Same identity, but excluding the selected bias vectors; used to verify
/// that bias-only retraining froze everything else.
pub fn lenet_id_excluding_biases<T: Scalar>(params: &LeNetParams<T>, skip: LayerSet) -> String {
    let mut c = lenet_container(params);
    let skipped: Vec<&str> = [
        skip.conv1.then_some("conv1/b"),
        skip.conv2.then_some("conv2/b"),
    ]
    .into_iter()
    .flatten()
    .collect();
    let mut filtered = Container::new(c.kind.clone());
    for e in c.entries.clone() {
        if skipped.contains(&e.name.as_str()) {
            continue;
        }
        let (shape, values) = c.f32_values(&e.name).expect("entry exists");
        filtered.push_f32(e.name, shape, &values);
    }
    c = filtered;
    c.payload_sha256()
}

fn tensor_entry<T: Scalar>(c: &Container, name: &str, path: &str) -> Result<Tensor<T>> {
    let (shape, values) = c.f32_values(name).map_err(|_| Error::ContainerManifest {
        path: path.to_string(),
        detail: format!("missing tensor '{name}'"),
    })?;
    Tensor::new(shape, from_f32(&values))
}

fn meta_from_container(c: &Container, path: &str) -> Result<ModelMeta> {
    let noise: NoiseSpec = c.meta_value("noise", path)?.parse()?;
    let seed = c.meta_value("seed", path)?.parse().unwrap_or(0);
    let epochs = c.meta_value("epochs", path)?.parse().unwrap_or(0);
    Ok(ModelMeta { noise, seed, epochs })
}

pub fn load_lenet<T: Scalar>(path: impl AsRef<Path>) -> Result<LeNetParams<T>> {
    let p = path.as_ref().display().to_string();
    let c = Container::read(path.as_ref())?;
    if c.kind != "lenet" {
        return Err(Error::ContainerManifest {
            path: p,
            detail: format!("expected kind 'lenet', found '{}'", c.kind),
        });
    }
    let conv1_w: Tensor<T> = tensor_entry(&c, "conv1/w", &p)?;
    let conv2_w: Tensor<T> = tensor_entry(&c, "conv2/w", &p)?;
    let hidden_w: Tensor<T> = tensor_entry(&c, "hidden/w", &p)?;
    let out_w: Tensor<T> = tensor_entry(&c, "out/w", &p)?;
    let shape = LeNetShape {
        conv1_filters: conv1_w.shape()[0],
        conv2_filters: conv2_w.shape()[0],
        hidden_units: hidden_w.shape()[1],
        classes: out_w.shape()[1],
    };
    let (_, conv1_b) = c.f32_values("conv1/b")?;
    let (_, conv2_b) = c.f32_values("conv2/b")?;
    let (_, hidden_b) = c.f32_values("hidden/b")?;
    let (_, out_b) = c.f32_values("out/b")?;
    let params = LeNetParams {
        shape,
        conv1_w,
        conv1_b: from_f32(&conv1_b),
        conv2_w,
        conv2_b: from_f32(&conv2_b),
        hidden_w,
        hidden_b: from_f32(&hidden_b),
        out_w,
        out_b: from_f32(&out_b),
        meta: meta_from_container(&c, &p)?,
    };
    if !params.all_finite() {
        return Err(Error::NonFinite(format!("checkpoint {p} contains non-finite values")));
    }
    Ok(params)
}

// ── Denoising autoencoder checkpoints ──────────────────────────────────────

pub fn save_da<T: Scalar>(params: &DAParams<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut c = Container::new("da");
    c.set_meta("noise", params.meta.noise.to_string());
    c.set_meta("seed", params.meta.seed.to_string());
    c.set_meta("epochs", params.meta.epochs.to_string());
    c.set_meta("tied", "true");
    c.push_f32("encode/w", params.encode_w.shape().to_vec(), &to_f32(params.encode_w.data()));
    c.push_f32("hidden/b", vec![params.hidden_units], &to_f32(&params.hidden_b));
    c.push_f32("visible/b", vec![DA_VISIBLE], &to_f32(&params.visible_b));
    c.write(path)
}

pub fn load_da<T: Scalar>(path: impl AsRef<Path>) -> Result<DAParams<T>> {
    let p = path.as_ref().display().to_string();
    let c = Container::read(path.as_ref())?;
    if c.kind != "da" {
        return Err(Error::ContainerManifest {
            path: p,
            detail: format!("expected kind 'da', found '{}'", c.kind),
        });
    }
    let encode_w: Tensor<T> = tensor_entry(&c, "encode/w", &p)?;
    let hidden_units = encode_w.shape()[1];
    let (_, hidden_b) = c.f32_values("hidden/b")?;
    let (_, visible_b) = c.f32_values("visible/b")?;
    Ok(DAParams {
        encode_w,
        hidden_b: from_f32(&hidden_b),
        visible_b: from_f32(&visible_b),
        hidden_units,
        meta: meta_from_container(&c, &p)?,
    })
}

// ── Bias banks ─────────────────────────────────────────────────────────────

pub fn save_bank<T: Scalar>(bank: &BiasBank<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut c = Container::new("bank");
    c.set_meta("base", bank.base_params_id.clone());
    c.set_meta("layers", bank.layers.to_string());
    c.set_meta("noise_kind", bank.kind.to_string());
    for (level, vectors) in &bank.entries {
        if let Some(b1) = &vectors.conv1 {
            c.push_f32(format!("bias/conv1/{level:.6}"), vec![b1.len()], &to_f32(b1));
        }
        if let Some(b2) = &vectors.conv2 {
            c.push_f32(format!("bias/conv2/{level:.6}"), vec![b2.len()], &to_f32(b2));
        }
    }
    c.write(path)
}

pub fn load_bank<T: Scalar>(path: impl AsRef<Path>) -> Result<BiasBank<T>> {
    let p = path.as_ref().display().to_string();
    let c = Container::read(path.as_ref())?;
    if c.kind != "bank" {
        return Err(Error::ContainerManifest {
            path: p,
            detail: format!("expected kind 'bank', found '{}'", c.kind),
        });
    }
    let base = c.meta_value("base", &p)?.to_string();
    let layers: LayerSet = c.meta_value("layers", &p)?.parse()?;
    let kind: BankKind = c.meta_value("noise_kind", &p)?.parse()?;
    let mut levels: Vec<f64> = Vec::new();
    for e in c.entries() {
        if let Some(rest) = e.name.strip_prefix("bias/conv1/").or_else(|| e.name.strip_prefix("bias/conv2/")) {
            let level: f64 = rest.parse().map_err(|_| Error::ContainerManifest {
                path: p.clone(),
                detail: format!("bad bank entry name '{}'", e.name),
            })?;
            if !levels.iter().any(|&l| l == level) {
                levels.push(level);
            }
        }
    }
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut entries = Vec::with_capacity(levels.len());
    for level in levels {
        let conv1 = if layers.conv1 {
            let (_, v) = c.f32_values(&format!("bias/conv1/{level:.6}"))?;
            Some(from_f32::<T>(&v))
        } else {
            None
        };
        let conv2 = if layers.conv2 {
            let (_, v) = c.f32_values(&format!("bias/conv2/{level:.6}"))?;
            Some(from_f32::<T>(&v))
        } else {
            None
        };
        entries.push((level, BiasVectors { conv1, conv2 }));
    }
    BiasBank::new(base, layers, kind, entries)
}

// ── Dataset caches ─────────────────────────────────────────────────────────

pub fn save_imageset<T: Scalar>(set: &ImageSet<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut c = Container::new("dataset");
    c.set_meta("source", set.provenance.source.clone());
    c.set_meta("noise", set.provenance.noise.to_string());
    c.set_meta("seed", set.provenance.seed.to_string());
    c.push_f32("images", set.images.shape().to_vec(), &to_f32(set.images.data()));
    c.push_u8("labels", vec![set.labels.len()], &set.labels);
    if let Some(levels) = &set.provenance.per_image {
        let v: Vec<f32> = levels.iter().map(|&l| l as f32).collect();
        c.push_f32("per_image_levels", vec![v.len()], &v);
    }
    c.write(path)
}

pub fn load_imageset<T: Scalar>(path: impl AsRef<Path>) -> Result<ImageSet<T>> {
    let p = path.as_ref().display().to_string();
    let c = Container::read(path.as_ref())?;
    if c.kind != "dataset" {
        return Err(Error::ContainerManifest {
            path: p,
            detail: format!("expected kind 'dataset', found '{}'", c.kind),
        });
    }
    let images: Tensor<T> = tensor_entry(&c, "images", &p)?;
    let (_, labels) = c.u8_values("labels")?;
    let mut provenance = Provenance::new(
        c.meta_value("source", &p)?.to_string(),
        c.meta_value("noise", &p)?.parse()?,
        c.meta_value("seed", &p)?.parse().unwrap_or(0),
    );
    if c.entries().iter().any(|e| e.name == "per_image_levels") {
        let (_, v) = c.f32_values("per_image_levels")?;
        provenance.per_image = Some(v.iter().map(|&x| x as f64).collect());
    }
    debug_assert_eq!(images.shape()[2], IMG_HW);
    ImageSet::new(images, labels, provenance)
}
