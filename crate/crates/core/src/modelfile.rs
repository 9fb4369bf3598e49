//! Versioned flat text format shared by every persisted model.
//!
//! ```text
//! dermtriage-model<TAB>1
//! kind<TAB>quality
//! <key><TAB><value><TAB><value>...
//! end
//! ```
//!
//! One record per line, fields separated by tabs. Floats are written in
//! scientific notation with 17 significant digits so a write/read cycle
//! reproduces every parameter bit for bit. Network parameters follow the
//! order of [`Mlp::params`]: hidden weights (row-major, output-major), hidden
//! bias, output weights, output bias.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Activation, Dense, HiddenLayer, Mlp, OutputKind};

pub const MAGIC: &str = "dermtriage-model";
pub const FORMAT_VERSION: u32 = 1;

pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Default)]
pub struct ModelWriter {
    out: String,
}

impl ModelWriter {
    pub fn new(kind: &str) -> Self {
        let mut w = Self::default();
        w.line("dermtriage-model", [FORMAT_VERSION.to_string()]);
        w.line("kind", [kind.to_string()]);
        w
    }

    pub fn line<I, S>(&mut self, key: &str, values: I) -> &mut Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        self.out.push_str(key);
        for v in values {
            self.out.push('\t');
            self.out.push_str(v.as_ref());
        }
        self.out.push('\n');
        self
    }

    pub fn floats(&mut self, key: &str, values: &[f64]) -> &mut Self {
        self.line(key, values.iter().map(|v| format_f64(*v)))
    }

    pub fn dense(&mut self, prefix: &str, d: &Dense) -> &mut Self {
        self.line(&format!("{prefix}.shape"), [d.inputs.to_string(), d.outputs.to_string()]);
        self.floats(&format!("{prefix}.weights"), &d.weights);
        self.floats(&format!("{prefix}.bias"), &d.bias)
    }

    pub fn mlp(&mut self, prefix: &str, m: &Mlp) -> &mut Self {
        let kind = match m.kind {
            OutputKind::MultiLabel => "sigmoid",
            OutputKind::Categorical => "softmax",
        };
        self.line(&format!("{prefix}.output_kind"), [kind]);
        match &m.hidden {
            Some(h) => {
                self.line(
                    &format!("{prefix}.hidden"),
                    [h.activation.as_str().to_string(), format_f64(h.dropout)],
                );
                self.dense(&format!("{prefix}.hidden"), &h.dense);
            }
            None => {
                self.line(&format!("{prefix}.hidden"), ["none"]);
            }
        }
        self.dense(&format!("{prefix}.output"), &m.output)
    }

    pub fn finish(mut self) -> String {
        self.out.push_str("end\n");
        self.out
    }
}

/// Parsed model file: ordered `key -> values` records.
#[derive(Debug, Clone)]
pub struct ModelReader {
    kind: String,
    records: Vec<(String, Vec<String>)>,
}

impl ModelReader {
    pub fn parse(text: &str, expected_kind: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::ModelFormat("empty file".into()))?;
        let mut h = header.split('\t');
        if h.next() != Some(MAGIC) {
            return Err(Error::ModelFormat("missing magic header".into()));
        }
        let version: u32 = h
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::ModelFormat("missing format version".into()))?;
        if version != FORMAT_VERSION {
            return Err(Error::ModelFormat(format!("unsupported format version {version}")));
        }
        let mut records: Vec<(String, Vec<String>)> = Vec::new();
        let mut ended = false;
        for line in lines {
            if line == "end" {
                ended = true;
                break;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let key = fields.next().unwrap_or_default().to_string();
            records.push((key, fields.map(str::to_string).collect()));
        }
        if !ended {
            return Err(Error::ModelFormat("truncated file: no `end` record".into()));
        }
        let kind = records
            .iter()
            .find(|(k, _)| k == "kind")
            .and_then(|(_, v)| v.first().cloned())
            .ok_or_else(|| Error::ModelFormat("missing kind".into()))?;
        if kind != expected_kind {
            return Err(Error::ModelFormat(format!("expected a `{expected_kind}` model, found `{kind}`")));
        }
        Ok(Self { kind, records })
    }

    pub fn read(path: &Path, expected_kind: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, expected_kind)
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn values(&self, key: &str) -> Result<&[String]> {
        self.records
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::ModelFormat(format!("missing record `{key}`")))
    }

    pub fn single(&self, key: &str) -> Result<&str> {
        match self.values(key)? {
            [v] => Ok(v),
            other => Err(Error::ModelFormat(format!("`{key}` expects one value, got {}", other.len()))),
        }
    }

    pub fn floats(&self, key: &str) -> Result<Vec<f64>> {
        self.values(key)?
            .iter()
            .map(|v| {
                let x: f64 = v
                    .parse()
                    .map_err(|_| Error::ModelFormat(format!("`{key}`: bad float `{v}`")))?;
                if x.is_finite() {
                    Ok(x)
                } else {
                    Err(Error::ModelFormat(format!("`{key}`: non-finite value")))
                }
            })
            .collect()
    }

    pub fn usizes(&self, key: &str) -> Result<Vec<usize>> {
        self.values(key)?
            .iter()
            .map(|v| v.parse().map_err(|_| Error::ModelFormat(format!("`{key}`: bad integer `{v}`"))))
            .collect()
    }

    pub fn dense(&self, prefix: &str) -> Result<Dense> {
        let shape = self.usizes(&format!("{prefix}.shape"))?;
        let [inputs, outputs] = shape[..] else {
            return Err(Error::ModelFormat(format!("`{prefix}.shape` needs two integers")));
        };
        Dense::from_parts(
            inputs,
            outputs,
            self.floats(&format!("{prefix}.weights"))?,
            self.floats(&format!("{prefix}.bias"))?,
        )
        .map_err(|e| Error::ModelFormat(e.to_string()))
    }

    pub fn mlp(&self, prefix: &str) -> Result<Mlp> {
        let kind = match self.single(&format!("{prefix}.output_kind"))? {
            "sigmoid" => OutputKind::MultiLabel,
            "softmax" => OutputKind::Categorical,
            other => return Err(Error::ModelFormat(format!("unknown output kind `{other}`"))),
        };
        let hidden = match self.values(&format!("{prefix}.hidden"))? {
            [none] if none == "none" => None,
            [act, dropout] => {
                let dropout: f64 = dropout
                    .parse()
                    .map_err(|_| Error::ModelFormat(format!("bad dropout `{dropout}`")))?;
                Some(HiddenLayer {
                    dense: self.dense(&format!("{prefix}.hidden"))?,
                    activation: Activation::parse(act)?,
                    dropout,
                })
            }
            _ => return Err(Error::ModelFormat(format!("malformed `{prefix}.hidden`"))),
        };
        let output = self.dense(&format!("{prefix}.output"))?;
        let expected = hidden.as_ref().map_or(output.inputs, |h| h.dense.outputs);
        if output.inputs != expected {
            return Err(Error::ModelFormat("hidden and output layer widths disagree".into()));
        }
        Ok(Mlp { hidden, output, kind })
    }
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
