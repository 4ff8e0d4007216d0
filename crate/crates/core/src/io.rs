//! CSV data files, prediction files and the text model format.
//!
//! Data CSV: a `label,f0,…,f{m−1}` header, then one row per point. Labels are
//! `1`, `-1`, or empty (unlabeled target rows, which must follow every
//! labeled row).
//!
//! Model file layout, one item per line:
//!
//! ```text
//! sspsc-model 1
//! hyperparams {json}
//! dims <m> <r> <n1>
//! normalizer <yes|no>
//! theta
//! <r rows of m values>
//! w / phi / varphi / u / v / pi   (name line, then one line of values)
//! mean / scale                    (only with a normalizer)
//! end
//! ```
//!
//! Values are written with 17 significant digits, which round-trips every
//! `f64` exactly.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::data::{Hyperparams, ModelState};
use crate::error::{Error, Result};
use crate::normalize::Normalizer;

pub const MODEL_FORMAT: &str = "sspsc-model";
pub const MODEL_VERSION: u32 = 1;

/// Writes via a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(contents).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCsv {
    pub features: DMatrix<f64>,
    pub labels: Vec<Option<i64>>,
}

impl LabeledCsv {
    /// Number of leading labeled rows; errors if a labeled row follows an
    /// unlabeled one.
    pub fn labeled_prefix(&self, name: &str) -> Result<usize> {
        let n3 = self.labels.iter().take_while(|l| l.is_some()).count();
        if let Some(pos) = self.labels[n3..].iter().position(Option::is_some) {
            return Err(Error::Parse {
                path: name.to_string(),
                line: n3 + pos + 2,
                msg: "labeled rows must precede all unlabeled rows".into(),
            });
        }
        Ok(n3)
    }

    /// Every label, erroring if any row is unlabeled.
    pub fn all_labels(&self, name: &str) -> Result<Vec<i64>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                l.ok_or_else(|| Error::Parse {
                    path: name.to_string(),
                    line: i + 2,
                    msg: "every row of this file needs a label".into(),
                })
            })
            .collect()
    }
}

pub fn read_csv(path: &Path) -> Result<LabeledCsv> {
    parse_csv(&read_text(path)?, &path.display().to_string())
}

/// Parses a data CSV. Labels may be any integer here; binary callers check
/// for ±1 downstream.
pub fn parse_csv(text: &str, name: &str) -> Result<LabeledCsv> {
    let err = |line: usize, msg: String| Error::Parse {
        path: name.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let (_, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let m = cols.len().saturating_sub(1);
    let expected: Vec<String> = std::iter::once("label".to_string()).chain((0..m).map(|c| format!("f{c}"))).collect();
    if m == 0 || cols != expected {
        return Err(err(1, format!("header must be label,f0,…,f{{m−1}}; got {header:?}")));
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (line, row) in lines {
        if row.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = row.split(',').map(str::trim).collect();
        if fields.len() != m + 1 {
            return Err(err(line, format!("expected {} fields, found {}", m + 1, fields.len())));
        }
        labels.push(match fields[0] {
            "" => None,
            s => Some(
                s.strip_prefix('+')
                    .unwrap_or(s)
                    .parse::<i64>()
                    .map_err(|_| err(line, format!("label {s:?} is not an integer")))?,
            ),
        });
        for (c, f) in fields[1..].iter().enumerate() {
            let v: f64 = f.parse().map_err(|_| err(line, format!("feature f{c} = {f:?} is not a number")))?;
            if !v.is_finite() {
                return Err(err(line, format!("feature f{c} is not finite")));
            }
            values.push(v);
        }
    }
    if labels.is_empty() {
        return Err(Error::Empty(format!("{name} has no data rows")));
    }
    Ok(LabeledCsv {
        features: DMatrix::from_row_slice(labels.len(), m, &values),
        labels,
    })
}

pub fn format_csv(features: &DMatrix<f64>, labels: &[Option<i64>]) -> String {
    let mut out = String::from("label");
    for c in 0..features.ncols() {
        write!(out, ",f{c}").unwrap();
    }
    out.push('\n');
    for (i, label) in labels.iter().enumerate() {
        if let Some(y) = label {
            write!(out, "{y}").unwrap();
        }
        for c in 0..features.ncols() {
            write!(out, ",{}", features[(i, c)]).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn format_predictions(scores: &[f64], labels: &[i8]) -> String {
    let mut out = String::from("score,label\n");
    for (s, y) in scores.iter().zip(labels) {
        writeln!(out, "{},{y}", fmt_f64(*s)).unwrap();
    }
    out
}

/// A trained model with the settings needed to reuse it.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub hyperparams: Hyperparams,
    pub state: ModelState,
    pub normalizer: Option<Normalizer>,
}

impl SavedModel {
    pub fn check(&self) -> Result<()> {
        let m = self.state.dim();
        self.hyperparams.check(m)?;
        if self.state.subspace_dim() != self.hyperparams.r {
            return Err(Error::Format(format!(
                "Θ has {} rows but hyperparameters say r = {}",
                self.state.subspace_dim(),
                self.hyperparams.r
            )));
        }
        if self.state.loss != self.hyperparams.loss {
            return Err(Error::Format("stored loss disagrees with hyperparameters".into()));
        }
        if let Some(n) = &self.normalizer {
            n.check()?;
            if n.dim() != m {
                return Err(Error::Format("normalizer width differs from model".into()));
            }
        }
        self.state.check(self.hyperparams.delta)
    }

    /// Applies the stored normalizer, if any, then scores with `𝛗`.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<i8>)> {
        if x.ncols() != self.state.dim() {
            return Err(Error::DimensionMismatch(format!(
                "model has {} features, input has {}",
                self.state.dim(),
                x.ncols()
            )));
        }
        let x = match &self.normalizer {
            Some(n) => n.apply(x)?,
            None => x.clone(),
        };
        let scores = crate::classifier::score_rows(&self.state.varphi, &x)?;
        let labels = scores.iter().map(|&s| crate::classifier::label_of(s)).collect();
        Ok((scores.as_slice().to_vec(), labels))
    }

    pub fn to_text(&self) -> String {
        let s = &self.state;
        let mut out = String::new();
        writeln!(out, "{MODEL_FORMAT} {MODEL_VERSION}").unwrap();
        writeln!(out, "hyperparams {}", serde_json::to_string(&self.hyperparams).expect("hyperparams serialize")).unwrap();
        writeln!(out, "dims {} {} {}", s.dim(), s.subspace_dim(), s.pi.len()).unwrap();
        writeln!(out, "normalizer {}", if self.normalizer.is_some() { "yes" } else { "no" }).unwrap();
        out.push_str("theta\n");
        for row in s.theta.row_iter() {
            push_values(&mut out, row.iter());
        }
        let mut vectors: Vec<(&str, &DVector<f64>)> =
            vec![("w", &s.w), ("phi", &s.phi), ("varphi", &s.varphi), ("u", &s.u), ("v", &s.v), ("pi", &s.pi)];
        if let Some(n) = &self.normalizer {
            vectors.push(("mean", &n.mean));
            vectors.push(("scale", &n.scale));
        }
        for (name, v) in vectors {
            writeln!(out, "{name}").unwrap();
            push_values(&mut out, v.iter());
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str, name: &str) -> Result<Self> {
        let mut r = Reader {
            lines: text.lines().enumerate(),
            name,
        };
        let (line, head) = r.next()?;
        let version = head
            .strip_prefix(MODEL_FORMAT)
            .map(str::trim)
            .ok_or_else(|| r.err(line, "not a model file"))?;
        if version != MODEL_VERSION.to_string() {
            return Err(r.err(line, &format!("unsupported model version {version:?}")));
        }
        let (line, hp_line) = r.next()?;
        let json = hp_line.strip_prefix("hyperparams ").ok_or_else(|| r.err(line, "expected hyperparams"))?;
        let hyperparams: Hyperparams =
            serde_json::from_str(json).map_err(|e| r.err(line, &format!("hyperparams: {e}")))?;
        let (line, dims) = r.next()?;
        let dims: Vec<usize> = dims
            .strip_prefix("dims ")
            .ok_or_else(|| r.err(line, "expected dims"))?
            .split_whitespace()
            .map(|d| d.parse().map_err(|_| r.err(line, "bad dimension")))
            .collect::<Result<_>>()?;
        let [m, rdim, n1] = dims[..] else {
            return Err(r.err(line, "dims needs m, r and n1"));
        };
        let (line, norm) = r.next()?;
        let has_norm = match norm {
            "normalizer yes" => true,
            "normalizer no" => false,
            _ => return Err(r.err(line, "expected normalizer yes|no")),
        };
        r.expect("theta")?;
        let mut theta = DMatrix::zeros(rdim, m);
        for i in 0..rdim {
            let row = r.values(m)?;
            theta.row_mut(i).copy_from_slice(&row);
        }
        let mut vector = |label: &str, len: usize| -> Result<DVector<f64>> {
            r.expect(label)?;
            Ok(DVector::from_vec(r.values(len)?))
        };
        let w = vector("w", rdim)?;
        let phi = vector("phi", m)?;
        let varphi = vector("varphi", m)?;
        let u = vector("u", m)?;
        let v = vector("v", m)?;
        let pi = vector("pi", n1)?;
        let normalizer = if has_norm {
            Some(Normalizer {
                mean: vector("mean", m)?,
                scale: vector("scale", m)?,
            })
        } else {
            None
        };
        r.expect("end")?;
        let model = SavedModel {
            state: ModelState {
                theta,
                w,
                phi,
                varphi,
                u,
                v,
                pi,
                loss: hyperparams.loss,
            },
            hyperparams,
            normalizer,
        };
        model.check()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_text(path)?, &path.display().to_string())
    }
}

fn push_values<'a>(out: &mut String, values: impl Iterator<Item = &'a f64>) {
    let line: Vec<String> = values.map(|v| fmt_f64(*v)).collect();
    out.push_str(&line.join(" "));
    out.push('\n');
}

struct Reader<'a, I> {
    lines: I,
    name: &'a str,
}

impl<'a, I: Iterator<Item = (usize, &'a str)>> Reader<'a, I> {
    fn err(&self, line: usize, msg: &str) -> Error {
        Error::Parse {
            path: self.name.to_string(),
            line,
            msg: msg.to_string(),
        }
    }

    fn next(&mut self) -> Result<(usize, &'a str)> {
        match self.lines.next() {
            Some((i, l)) => Ok((i + 1, l.trim_end_matches('\r'))),
            None => Err(Error::Format(format!("{}: unexpected end of file", self.name))),
        }
    }

    fn expect(&mut self, label: &str) -> Result<()> {
        let (line, l) = self.next()?;
        if l != label {
            return Err(self.err(line, &format!("expected {label:?}, found {l:?}")));
        }
        Ok(())
    }

    fn values(&mut self, len: usize) -> Result<Vec<f64>> {
        let (line, l) = self.next()?;
        let vals: Vec<f64> = l
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| self.err(line, &format!("bad number {t:?}"))))
            .collect::<Result<_>>()?;
        if vals.len() != len {
            return Err(self.err(line, &format!("expected {len} values, found {}", vals.len())));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(self.err(line, "non-finite value"));
        }
        Ok(vals)
    }
}
