//! FWC1 weight containers and binding them to the graph.
//!
//! Layout: `b"FWC1"`, a little-endian `u32` header length, a UTF-8 JSON header
//! `{"meta": {...}, "tensors": {name: {dtype, shape, offset, nbytes}}}`, then the
//! data region of little-endian `f32` values. Offsets are relative to the start
//! of the data region.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{Map, Value};

use crate::blocks::{zeros_for, ParamSource};
use crate::error::{BindIssue, ContainerError, Error, Result};
use crate::graph::{ModelGraph, REG_MAX};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FWC1";

/// A named tensor as stored in a container.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl StoredTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "StoredTensor::new",
                format!("{expected} values for {shape:?}"),
                data.len().to_string(),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::from_dims(&self.shape, self.data.clone())
    }
}

impl From<&Tensor> for StoredTensor {
    fn from(t: &Tensor) -> Self {
        Self {
            shape: t.shape().to_vec(),
            data: t.data().to_vec(),
        }
    }
}

/// A parsed and validated container.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightContainer {
    pub meta: Map<String, Value>,
    pub tensors: BTreeMap<String, StoredTensor>,
}

/// Typed view of the model metadata written by the exporter.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub arch: String,
    pub nc: usize,
    pub reg_max: usize,
    pub strides: Vec<usize>,
    pub input_size: usize,
    pub fused: bool,
    pub param_count_prefusion: u64,
    pub param_count_fused: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl WeightContainer {
    pub fn get(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors.get(name)
    }

    pub fn model_meta(&self) -> Result<ModelMeta> {
        serde_json::from_value(Value::Object(self.meta.clone())).map_err(|e| ContainerError::Meta(e.to_string()).into())
    }

    pub fn param_count(&self) -> u64 {
        self.tensors.values().map(|t| t.data.len() as u64).sum()
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct Entry {
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    nbytes: u64,
}

/// Header tensor table that rejects duplicate names instead of keeping the last one.
struct EntryList(Vec<(String, Entry)>);

impl<'de> Deserialize<'de> for EntryList {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = EntryList;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map of tensor entries")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<EntryList, A::Error> {
                let mut seen = HashSet::new();
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Entry>()? {
                    if !seen.insert(k.clone()) {
                        return Err(serde::de::Error::custom(format!("duplicate tensor name {k:?}")));
                    }
                    out.push((k, v));
                }
                Ok(EntryList(out))
            }
        }
        d.deserialize_map(V)
    }
}

#[derive(Deserialize)]
struct Header {
    #[serde(default)]
    meta: Map<String, Value>,
    tensors: EntryList,
}

pub fn read_container(path: impl AsRef<Path>) -> Result<WeightContainer> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(parse_container(&bytes)?)
}

/// Parses and validates container bytes.
pub fn parse_container(bytes: &[u8]) -> std::result::Result<WeightContainer, ContainerError> {
    if bytes.len() < 4 {
        return Err(ContainerError::Truncated(format!(
            "{} bytes, magic needs 4",
            bytes.len()
        )));
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if &magic != MAGIC {
        return Err(ContainerError::BadMagic(magic));
    }
    if bytes.len() < 8 {
        return Err(ContainerError::Truncated("header length field incomplete".into()));
    }
    let header_len = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let data_start = 8 + header_len;
    if bytes.len() < data_start {
        return Err(ContainerError::Truncated(format!(
            "header declares {header_len} bytes, only {} present",
            bytes.len() - 8
        )));
    }
    let header: Header =
        serde_json::from_slice(&bytes[8..data_start]).map_err(|e| ContainerError::MalformedHeader(e.to_string()))?;
    let data = &bytes[data_start..];

    let mut regions: Vec<(u64, u64, &str)> = Vec::with_capacity(header.tensors.0.len());
    for (name, e) in &header.tensors.0 {
        if e.dtype != "f32" {
            return Err(ContainerError::UnsupportedDtype {
                name: name.clone(),
                dtype: e.dtype.clone(),
            });
        }
        let expected = 4 * e.shape.iter().map(|&d| d as u64).product::<u64>();
        if expected != e.nbytes {
            return Err(ContainerError::SizeMismatch {
                name: name.clone(),
                shape: e.shape.clone(),
                expected,
                nbytes: e.nbytes,
            });
        }
        let end = e
            .offset
            .checked_add(e.nbytes)
            .ok_or_else(|| ContainerError::MalformedHeader(format!("{name}: offset overflow")))?;
        if end > data.len() as u64 {
            return Err(ContainerError::Truncated(format!(
                "tensor {name} ends at byte {end} of a {}-byte data region",
                data.len()
            )));
        }
        if e.nbytes > 0 {
            regions.push((e.offset, end, name));
        }
    }
    regions.sort_unstable();
    for w in regions.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(ContainerError::Overlap {
                first: w[0].2.to_string(),
                second: w[1].2.to_string(),
            });
        }
    }

    let tensors = header
        .tensors
        .0
        .into_iter()
        .map(|(name, e)| {
            let raw = &data[e.offset as usize..(e.offset + e.nbytes) as usize];
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            (
                name,
                StoredTensor {
                    shape: e.shape,
                    data: values,
                },
            )
        })
        .collect();
    Ok(WeightContainer {
        meta: header.meta,
        tensors,
    })
}

/// Serializes tensors contiguously in name order.
pub fn container_bytes(tensors: &BTreeMap<String, StoredTensor>, meta: &Map<String, Value>) -> Result<Vec<u8>> {
    let mut table = Map::new();
    let mut offset = 0u64;
    for (name, t) in tensors {
        let expected: usize = t.shape.iter().product();
        if expected != t.data.len() {
            return Err(Error::shape(
                "write_container",
                format!("{expected} values for {name}"),
                t.data.len().to_string(),
            ));
        }
        let nbytes = 4 * t.data.len() as u64;
        let entry = Entry {
            dtype: "f32".into(),
            shape: t.shape.clone(),
            offset,
            nbytes,
        };
        table.insert(name.clone(), serde_json::to_value(entry)?);
        offset += nbytes;
    }
    let mut header = Map::new();
    header.insert("meta".into(), Value::Object(meta.clone()));
    header.insert("tensors".into(), Value::Object(table));
    let header = serde_json::to_vec(&Value::Object(header))?;
    let header_len =
        u32::try_from(header.len()).map_err(|_| Error::invalid("write_container", "header exceeds 4 GiB"))?;

    let mut out = Vec::with_capacity(8 + header.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&header);
    for t in tensors.values() {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_container(
    tensors: &BTreeMap<String, StoredTensor>,
    meta: &Map<String, Value>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = container_bytes(tensors, meta)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

struct BindingSource<'a> {
    container: &'a WeightContainer,
    used: HashSet<&'a str>,
    issues: Vec<BindIssue>,
}

impl ParamSource for BindingSource<'_> {
    fn take(&mut self, name: &str, dims: &[usize]) -> Tensor {
        match self.container.tensors.get_key_value(name) {
            Some((key, t)) => {
                self.used.insert(key.as_str());
                if t.shape == dims {
                    return Tensor::from_dims(dims, t.data.clone()).expect("validated element count");
                }
                self.issues.push(BindIssue::ShapeMismatch {
                    name: name.to_string(),
                    expected: dims.to_vec(),
                    actual: t.shape.clone(),
                });
            }
            None => self.issues.push(BindIssue::Missing {
                name: name.to_string(),
                expected: dims.to_vec(),
            }),
        }
        zeros_for(dims)
    }
}

/// Binds a container to the graph's slots.
///
/// Every slot must receive exactly one tensor of the right shape and every tensor
/// must land in a slot; all violations are reported together.
pub fn bind(graph: &ModelGraph, container: &WeightContainer) -> Result<ModelGraph> {
    let meta = container.model_meta()?;
    if meta.arch != "yolov10n" {
        return Err(ContainerError::Meta(format!("arch {:?} is not yolov10n", meta.arch)).into());
    }
    if !meta.fused {
        return Err(
            ContainerError::Meta("container is not fused; BatchNorm must be folded before export".into()).into(),
        );
    }
    if meta.reg_max != REG_MAX {
        return Err(ContainerError::Meta(format!("reg_max {} unsupported, expected {REG_MAX}", meta.reg_max)).into());
    }
    if meta.nc != graph.nc() {
        return Err(
            ContainerError::Meta(format!("container has nc={}, graph expects nc={}", meta.nc, graph.nc())).into(),
        );
    }
    let mut src = BindingSource {
        container,
        used: HashSet::new(),
        issues: Vec::new(),
    };
    let bound = ModelGraph::with_source(graph.nc(), &mut src)?;
    let mut issues = src.issues;
    issues.extend(
        container
            .tensors
            .keys()
            .filter(|n| !src.used.contains(n.as_str()))
            .map(|n| BindIssue::Extra { name: n.clone() }),
    );
    if issues.is_empty() {
        Ok(bound)
    } else {
        Err(Error::Binding(issues))
    }
}

/// Reads a container and binds it to a fresh graph with the container's class count.
pub fn load_model(path: impl AsRef<Path>) -> Result<(ModelGraph, ModelMeta)> {
    let container = read_container(path)?;
    let meta = container.model_meta()?;
    let graph = crate::graph::build_yolov10n(meta.nc)?;
    Ok((bind(&graph, &container)?, meta))
}
