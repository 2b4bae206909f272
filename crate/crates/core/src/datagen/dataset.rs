use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::InputKind;

pub const DATASET_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"ABRDSET\0";

/// Who may read a dataset's labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSection {
    /// Labels available to training (source domain).
    Supervised,
    /// Labels held out for evaluation only (target domain).
    EvalOnly,
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadMode {
    Train,
    Eval,
}

/// Samples (one flattened input per row) with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    pub name: String,
    pub input: InputKind,
    pub label_extents: Vec<f64>,
    inputs: Array2<f32>,
    labels: Option<Array2<f32>>,
    section: LabelSection,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    name: String,
    input: InputKind,
    label_extents: Vec<f64>,
    samples: usize,
    sample_len: usize,
    label_dim: usize,
    section: LabelSection,
}

impl DomainDataset {
    pub fn new(
        name: impl Into<String>,
        input: InputKind,
        label_extents: Vec<f64>,
        inputs: Array2<f32>,
        labels: Option<Array2<f32>>,
        section: LabelSection,
    ) -> Result<Self> {
        if inputs.ncols() != input.sample_len() {
            return Err(Error::contract(format!(
                "dataset rows have {} values, {:?} needs {}",
                inputs.ncols(),
                input,
                input.sample_len()
            )));
        }
        match (&labels, section) {
            (None, LabelSection::Absent) => {}
            (Some(l), LabelSection::Supervised | LabelSection::EvalOnly) => {
                if l.dim() != (inputs.nrows(), label_extents.len()) {
                    return Err(Error::contract(format!(
                        "label block {:?} does not match {} samples x {} coordinates",
                        l.dim(),
                        inputs.nrows(),
                        label_extents.len()
                    )));
                }
            }
            _ => return Err(Error::contract("label section does not match label presence")),
        }
        Ok(Self {
            name: name.into(),
            input,
            label_extents,
            inputs,
            labels,
            section,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn label_dim(&self) -> usize {
        self.label_extents.len()
    }

    pub fn section(&self) -> LabelSection {
        self.section
    }

    pub fn reader(&self, mode: ReadMode) -> DatasetReader<'_> {
        DatasetReader { data: self, mode }
    }

    /// The same samples with labels moved to the evaluation-only section.
    pub fn into_eval_only(mut self) -> Self {
        if self.labels.is_some() {
            self.section = LabelSection::EvalOnly;
        }
        self
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            input: self.input,
            label_extents: self.label_extents.clone(),
            inputs: self.inputs.select(Axis(0), indices),
            labels: self.labels.as_ref().map(|l| l.select(Axis(0), indices)),
            section: self.section,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = Header {
            name: self.name.clone(),
            input: self.input,
            label_extents: self.label_extents.clone(),
            samples: self.len(),
            sample_len: self.inputs.ncols(),
            label_dim: self.label_dim(),
            section: self.section,
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let io = |e| Error::io(path, e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_u32::<LittleEndian>(DATASET_VERSION).map_err(io)?;
        w.write_u32::<LittleEndian>(header.len() as u32).map_err(io)?;
        w.write_all(&header).map_err(io)?;
        for v in self.inputs.iter() {
            w.write_f32::<LittleEndian>(*v).map_err(io)?;
        }
        if let Some(labels) = &self.labels {
            for v in labels.iter() {
                w.write_f32::<LittleEndian>(*v).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let truncated = |_| Error::parse(path, "truncated dataset file");
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != MAGIC {
            return Err(Error::parse(path, "not a dataset file"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
        if version != DATASET_VERSION {
            return Err(Error::Version {
                path: path.to_owned(),
                found: version,
                expected: DATASET_VERSION,
            });
        }
        let len = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header).map_err(truncated)?;
        let header: Header = serde_json::from_slice(&header)
            .map_err(|e| Error::parse(path, format!("bad header: {e}")))?;
        let mut read_block = |rows: usize, cols: usize| -> Result<Array2<f32>> {
            let mut data = vec![0f32; rows * cols];
            r.read_f32_into::<LittleEndian>(&mut data).map_err(truncated)?;
            Ok(Array2::from_shape_vec((rows, cols), data).expect("sized buffer"))
        };
        let inputs = read_block(header.samples, header.sample_len)?;
        let labels = match header.section {
            LabelSection::Absent => None,
            _ => Some(read_block(header.samples, header.label_dim)?),
        };
        Self::new(
            header.name,
            header.input,
            header.label_extents,
            inputs,
            labels,
            header.section,
        )
        .map_err(|e| Error::parse(path, e.to_string()))
    }

    /// One row per sample: label columns (when present) then input values.
    pub fn export_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        let mut cols: Vec<String> = Vec::new();
        if self.labels.is_some() {
            cols.extend((0..self.label_dim()).map(|j| format!("label_{j}")));
        }
        cols.extend((0..self.inputs.ncols()).map(|j| format!("x_{j}")));
        writeln!(w, "{}", cols.join(",")).map_err(io)?;
        for (i, row) in self.inputs.rows().into_iter().enumerate() {
            let mut fields: Vec<String> = Vec::new();
            if let Some(l) = &self.labels {
                fields.extend(l.row(i).iter().map(|v| v.to_string()));
            }
            fields.extend(row.iter().map(|v| v.to_string()));
            writeln!(w, "{}", fields.join(",")).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Mode-checked access to a dataset. Training-mode readers refuse to expose
/// evaluation-only labels.
#[derive(Debug, Clone, Copy)]
pub struct DatasetReader<'a> {
    data: &'a DomainDataset,
    mode: ReadMode,
}

impl<'a> DatasetReader<'a> {
    pub fn dataset(&self) -> &'a DomainDataset {
        self.data
    }

    pub fn mode(&self) -> ReadMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn inputs(&self) -> ArrayView2<'a, f32> {
        self.data.inputs.view()
    }

    pub fn labels(&self) -> Result<ArrayView2<'a, f32>> {
        match (self.data.section, self.mode) {
            (LabelSection::Absent, _) => Err(Error::contract(format!(
                "dataset {} has no labels",
                self.data.name
            ))),
            (LabelSection::EvalOnly, ReadMode::Train) => Err(Error::LabelAccess),
            _ => Ok(self.data.labels.as_ref().expect("labels present").view()),
        }
    }

    pub fn has_labels(&self) -> bool {
        self.labels().is_ok()
    }
}

/// Per-channel affine normalization fitted on source signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Fits on rows of `signals` (one time step per row).
    pub fn fit(signals: &Array2<f64>) -> Self {
        let n = signals.nrows().max(1) as f64;
        let mean: Vec<f64> = signals.mean_axis(Axis(0)).map(|m| m.to_vec()).unwrap_or_default();
        let std = signals
            .columns()
            .into_iter()
            .zip(&mean)
            .map(|(c, m)| {
                let var = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                var.sqrt().max(1e-6)
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, signals: &mut Array2<f64>) {
        for (mut col, (m, s)) in signals.columns_mut().into_iter().zip(self.mean.iter().zip(&self.std)) {
            col.mapv_inplace(|v| (v - m) / s);
        }
    }
}

/// Index of the files produced for one experiment's data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub task: String,
    pub seed: u64,
    pub source_train: PathBuf,
    pub source_test: PathBuf,
    pub target: PathBuf,
    /// Generator settings, echoed verbatim.
    pub spec: serde_json::Value,
    pub standardizer: Option<Standardizer>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        if m.format_version != DATASET_VERSION {
            return Err(Error::Version {
                path: path.to_owned(),
                found: m.format_version,
                expected: DATASET_VERSION,
            });
        }
        Ok(m)
    }

    /// Paths are stored relative to the manifest's directory.
    pub fn resolve(&self, manifest_path: &Path, file: &Path) -> PathBuf {
        manifest_path
            .parent()
            .map(|d| d.join(file))
            .unwrap_or_else(|| file.to_owned())
    }
}
