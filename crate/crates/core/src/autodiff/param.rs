use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU32, Ordering};

use ndarray::Array2;

use crate::error::{Error, Result};

static NEXT_STORE: AtomicU32 = AtomicU32::new(0);

const CHECKPOINT_MAGIC: &str = "stag-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

/// Handle to a parameter inside a specific [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId {
    store: u32,
    index: u32,
}

impl ParamId {
    pub fn index(self) -> usize {
        self.index as usize
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

/// Named trainable matrices with gradient accumulators.
///
/// Clones keep the store identity, so ids stay valid on a copy.
#[derive(Debug, Clone)]
pub struct ParamStore {
    id: u32,
    params: Vec<Param>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            id: NEXT_STORE.fetch_add(1, Ordering::Relaxed),
            params: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let grad = Array2::zeros(value.raw_dim());
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
        });
        ParamId {
            store: self.id,
            index: (self.params.len() - 1) as u32,
        }
    }

    pub fn owns(&self, id: ParamId) -> bool {
        id.store == self.id && id.index() < self.params.len()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        assert!(self.owns(id), "parameter id from a different store");
        &self.params[id.index()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        assert!(self.owns(id), "parameter id from a different store");
        &mut self.params[id.index()]
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.get(id).value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.get_mut(id).value
    }

    pub fn grad(&self, id: ParamId) -> &Array2<f64> {
        &self.get(id).grad
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(move |i| ParamId {
            store: self.id,
            index: i as u32,
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.ids().zip(self.params.iter())
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.iter().find(|(_, p)| p.name == name).map(|(id, _)| id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn snapshot(&self) -> Vec<Array2<f64>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Array2<f64>]) {
        assert_eq!(snapshot.len(), self.params.len(), "snapshot from another store layout");
        for (p, v) in self.params.iter_mut().zip(snapshot) {
            p.value.assign(v);
        }
    }

    /// Writes a versioned plain-text checkpoint.
    ///
    /// ```text
    /// stag-checkpoint 1
    /// param <name> <rows> <cols>
    /// <row-major values, space separated>
    /// ```
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = fs::File::create(path)?;
        writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
        for p in &self.params {
            let (r, c) = p.value.dim();
            writeln!(out, "param {} {r} {c}", p.name)?;
            let line: Vec<String> = p.value.iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    /// Loads values saved by [`ParamStore::save`] into parameters with matching names and shapes.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let display = path.display().to_string();
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: display.clone(),
            line,
            msg,
        };
        let reader = BufReader::new(fs::File::open(path)?);
        let mut lines = reader.lines().enumerate();

        let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty checkpoint".into()))?;
        let header = header?;
        let expected = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}");
        if header.trim() != expected {
            return Err(parse_err(1, format!("expected header '{expected}', found '{header}'")));
        }

        while let Some((i, line)) = lines.next() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 || fields[0] != "param" {
                return Err(parse_err(i + 1, format!("malformed parameter header '{line}'")));
            }
            let name = fields[1];
            let rows: usize = fields[2]
                .parse()
                .map_err(|_| parse_err(i + 1, "bad row count".into()))?;
            let cols: usize = fields[3]
                .parse()
                .map_err(|_| parse_err(i + 1, "bad column count".into()))?;
            let (j, values) = lines
                .next()
                .ok_or_else(|| parse_err(i + 2, format!("missing values for '{name}'")))?;
            let values: Vec<f64> = values?
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| parse_err(j + 1, format!("bad value: {e}")))?;
            let id = self
                .find(name)
                .ok_or_else(|| parse_err(i + 1, format!("unknown parameter '{name}'")))?;
            let target = self.value_mut(id);
            if target.dim() != (rows, cols) || values.len() != rows * cols {
                return Err(parse_err(
                    i + 1,
                    format!(
                        "shape mismatch for '{name}': checkpoint {rows}x{cols}, model {:?}",
                        target.dim()
                    ),
                ));
            }
            target.assign(&Array2::from_shape_vec((rows, cols), values).expect("length checked"));
        }
        Ok(())
    }
}
