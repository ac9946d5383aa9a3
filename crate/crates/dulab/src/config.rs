//! Flat `key = value` run configuration.
//!
//! Lines starting with `#` are comments. Lists are comma separated and
//! distances may be written as exact halves, e.g. `d_values = -1, -1/2, 0, 1`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::geometry::HalfInt;
use crate::replica::Kind;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Geometry {
    LocalEven,
    LocalOddEven,
    Macro,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Fxy,
    Fxybar,
    Opmi,
    TwoPoint,
    Otoc,
    Spectrum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

macro_rules! keyword_enum {
    ($ty:ident { $($s:literal => $v:ident),* $(,)? }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($s => Ok($ty::$v),)*
                    other => Err(Error::Config(format!(concat!("unknown ", stringify!($ty), " {:?}"), other))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$v => $s,)* })
            }
        }
    };
}

keyword_enum!(Geometry { "local-even" => LocalEven, "local-odd-even" => LocalOddEven, "macro" => Macro });
keyword_enum!(Quantity {
    "fxy" => Fxy, "fxybar" => Fxybar, "opmi" => Opmi,
    "two_point" => TwoPoint, "otoc" => Otoc, "spectrum" => Spectrum,
});
keyword_enum!(Format { "csv" => Csv, "json" => Json });

#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub l: usize,
    pub j: f64,
    pub master_seed: u64,
    pub n_samples: usize,
    pub t_max: usize,
    pub d_values: Vec<HalfInt>,
    pub geometry: Geometry,
    pub quantity: Quantity,
    pub output: Option<PathBuf>,
    pub format: Format,
    /// Memory cap for one dense object, in MiB.
    pub max_memory_mb: usize,
    pub max_iterations: usize,
    pub threads: Option<usize>,
    /// Spectrum runs: which transfer matrix, over which couplings.
    #[serde(serialize_with = "ser_kind")]
    pub kind: Kind,
    pub j_values: Vec<f64>,
    pub k: usize,
    /// Macroscopic runs: largest block size.
    pub max_block: usize,
}

fn ser_kind<S: serde::Serializer>(k: &Kind, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{k:?}"))
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            l: 8,
            j: 0.5,
            master_seed: 1,
            n_samples: 20,
            t_max: 2,
            d_values: vec![HalfInt::int(-1), HalfInt::int(0), HalfInt::int(1)],
            geometry: Geometry::LocalEven,
            quantity: Quantity::Fxy,
            output: None,
            format: Format::Csv,
            max_memory_mb: 1024,
            max_iterations: 64,
            threads: None,
            kind: Kind::T1,
            j_values: Vec::new(),
            k: 4,
            max_block: 3,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse(key, s)).collect()
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        text.parse()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "L" | "l" => self.l = parse(key, v)?,
            "J" | "j" => self.j = parse(key, v)?,
            "master_seed" | "seed" => self.master_seed = parse(key, v)?,
            "n_samples" => self.n_samples = parse(key, v)?,
            "t_max" => self.t_max = parse(key, v)?,
            "d_values" => self.d_values = parse_list(key, v)?,
            "geometry" => self.geometry = v.parse()?,
            "quantity" => self.quantity = v.parse()?,
            "output" => self.output = Some(PathBuf::from(v)),
            "format" => self.format = v.parse()?,
            "max_memory_mb" => self.max_memory_mb = parse(key, v)?,
            "max_iterations" => self.max_iterations = parse(key, v)?,
            "threads" => self.threads = Some(parse(key, v)?),
            "kind" => {
                self.kind = match v {
                    "T1" | "t1" => Kind::T1,
                    "T2" | "t2" => Kind::T2,
                    "T3" | "t3" => Kind::T3,
                    _ => return Err(Error::Config(format!("unknown transfer matrix {v:?}"))),
                }
            }
            "j_values" => self.j_values = parse_list(key, v)?,
            "k" => self.k = parse(key, v)?,
            "max_block" => self.max_block = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Hard errors for impossible settings; returns warnings for cells that
    /// will be computed but not asserted.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.l < 4 || self.l % 2 != 0 {
            return Err(Error::Config(format!("L must be even and >= 4, got {}", self.l)));
        }
        if !self.j.is_finite() || self.j_values.iter().any(|j| !j.is_finite()) {
            return Err(Error::Config("J must be finite".into()));
        }
        if self.quantity != Quantity::Spectrum && self.n_samples == 0 {
            return Err(Error::Config("n_samples must be positive".into()));
        }
        if self.d_values.is_empty() {
            return Err(Error::Config("d_values is empty".into()));
        }
        let half = self.d_values.iter().any(|d| !d.is_integer());
        match (self.geometry, self.quantity) {
            (_, Quantity::Spectrum) => {}
            (Geometry::Macro, Quantity::Opmi | Quantity::Fxybar) => {}
            (Geometry::Macro, q) => {
                return Err(Error::Config(format!("quantity {q} is not defined for the macro geometry")))
            }
            (_, Quantity::Opmi) => return Err(Error::Config("quantity opmi needs the macro geometry".into())),
            _ => {}
        }
        if half && self.geometry != Geometry::LocalOddEven {
            return Err(Error::Config("half-integer d needs geometry local-odd-even".into()));
        }
        if self.geometry == Geometry::LocalOddEven && !half {
            return Err(Error::Config("geometry local-odd-even needs half-integer d values".into()));
        }
        let mut warnings = Vec::new();
        let dmax = self.d_values.iter().map(|d| d.twice().unsigned_abs() as usize).max().unwrap_or(0);
        if self.quantity != Quantity::Spectrum && 2 * self.t_max + dmax + 2 > self.l {
            warnings.push(format!(
                "2 t_max + 2 max|d| + 2 = {} exceeds L = {}; cells outside the window are not asserted",
                2 * self.t_max + dmax + 2,
                self.l
            ));
        }
        Ok(warnings)
    }
}

impl FromStr for RunConfig {
    type Err = Error;
    fn from_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            if seen.insert(k.trim().to_string(), n + 1).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {:?}", n + 1, k.trim())));
            }
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }
}
