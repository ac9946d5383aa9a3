//! Subsystem selections and the local/macroscopic placements of X and Y.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layer {
    /// time 0
    Input,
    /// time t
    Output,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsystemSpec {
    pub sites: Vec<usize>,
    pub layer: Layer,
}

impl SubsystemSpec {
    pub fn new(sites: impl IntoIterator<Item = usize>, layer: Layer) -> Self {
        let mut sites: Vec<usize> = sites.into_iter().collect();
        sites.sort_unstable();
        sites.dedup();
        Self { sites, layer }
    }

    pub fn empty(layer: Layer) -> Self {
        Self { sites: Vec::new(), layer }
    }

    pub fn input(sites: impl IntoIterator<Item = usize>) -> Self {
        Self::new(sites, Layer::Input)
    }

    pub fn output(sites: impl IntoIterator<Item = usize>) -> Self {
        Self::new(sites, Layer::Output)
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Complement within the same layer.
    pub fn complement(&self, l: usize) -> Self {
        Self { sites: (0..l).filter(|s| !self.sites.contains(s)).collect(), layer: self.layer }
    }

    pub fn validate(&self, l: usize) -> Result<()> {
        match self.sites.iter().find(|&&s| s >= l) {
            Some(s) => Err(Error::Invalid(format!("site {s} outside 0..{l}"))),
            None => Ok(()),
        }
    }

    /// "even" or "odd" according to the first site.
    pub fn parity(&self) -> &'static str {
        match self.sites.first() {
            Some(s) if s % 2 == 1 => "odd",
            _ => "even",
        }
    }
}

/// The distance label `d`, stored as `2d` so that negative half-integers are
/// exact. Parsed from `"-1"`, `"3"`, `"-1/2"` and the like.
/// Serialized as its exact text form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HalfInt(pub i32);

impl HalfInt {
    pub fn int(d: i32) -> Self {
        Self(2 * d)
    }

    pub fn twice(self) -> i32 {
        self.0
    }

    pub fn is_integer(self) -> bool {
        self.0 % 2 == 0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 2.0
    }

    pub fn as_int(self) -> Option<i32> {
        self.is_integer().then_some(self.0 / 2)
    }
}

impl fmt::Display for HalfInt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_integer() {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

impl Serialize for HalfInt {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HalfInt {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for HalfInt {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("cannot parse distance {s:?}"));
        match s.split_once('/') {
            None => s.parse::<i32>().map(Self::int).map_err(|_| bad()),
            Some((num, "2")) => {
                let n: i32 = num.trim().parse().map_err(|_| bad())?;
                // Only negative half-integers have a placement.
                if n % 2 == 0 || n < 0 {
                    Ok(Self(n))
                } else {
                    Err(bad())
                }
            }
            Some(_) => Err(bad()),
        }
    }
}

/// Single-site placement: `x` even, `y = x + 2t + 2d (mod L)`.
pub fn local_sites(l: usize, t: usize, d: HalfInt, x: usize) -> usize {
    let y = x as i64 + 2 * t as i64 + d.0 as i64;
    y.rem_euclid(l as i64) as usize
}

/// Whether the causal cone of a local cell fits on the ring.
pub fn local_in_window(l: usize, t: usize, d: HalfInt) -> bool {
    2 * t as i64 + d.0.unsigned_abs() as i64 + 2 <= l as i64
}

/// Whether the forward cone of `x` and the backward cone of `y` stay apart
/// on the far side of the ring, where the two sites are `L - 2t - 2d` apart.
/// Without this, cells that are exact on an infinite line pick up small
/// per-instance corrections.
pub fn far_side_clear(l: usize, t: usize, d: HalfInt) -> bool {
    l as i64 >= 4 * t as i64 + d.0 as i64
}

/// Macroscopic blocks `X = [x_l, x_r]` (input) and `Y = [y_l, y_r]` (output)
/// with `x_l`, `x_r` even, `y_l = x_r + 2t + 2d`, and at least `2t - 1`
/// untouched sites between `y_r` and `x_l` on the far side of the ring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroGeometry {
    pub l: usize,
    pub t: usize,
    pub d: i32,
    pub x: SubsystemSpec,
    pub y: SubsystemSpec,
}

impl MacroGeometry {
    /// Largest `|X| + |Y|` allowed by the far-gap rule.
    pub fn capacity(l: usize, t: usize, d: i32) -> i64 {
        l as i64 - 4 * t as i64 - 2 * d as i64 + 2
    }

    /// Explicit block sizes; `nx` must be odd so both ends of X are even.
    pub fn with_sizes(l: usize, t: usize, d: i32, nx: usize, ny: usize) -> Result<Self> {
        if t == 0 {
            return Err(Error::Invalid("macroscopic placement needs t >= 1".into()));
        }
        if nx % 2 == 0 || ny == 0 {
            return Err(Error::Invalid(format!("need odd |X| and |Y| >= 1, got {nx}, {ny}")));
        }
        let r = 2 * t as i64 + 2 * d as i64;
        if r + ny as i64 <= 0 {
            return Err(Error::Invalid("Y must extend to the right of X".into()));
        }
        if ((nx + ny) as i64) > Self::capacity(l, t, d) {
            return Err(Error::Budget(format!(
                "|X|+|Y|={} exceeds the far-gap capacity {} at L={l}, t={t}, d={d}",
                nx + ny,
                Self::capacity(l, t, d)
            )));
        }
        let li = l as i64;
        let xr = nx as i64 - 1;
        let yl = xr + r;
        let x = SubsystemSpec::input((0..nx as i64).map(|s| s.rem_euclid(li) as usize));
        let y = SubsystemSpec::output((yl..yl + ny as i64).map(|s| s.rem_euclid(li) as usize));
        Ok(Self { l, t, d, x, y })
    }

    /// Largest blocks not exceeding `max_block` each, `|X|` odd.
    pub fn fit(l: usize, t: usize, d: i32, max_block: usize) -> Result<Self> {
        let cap = Self::capacity(l, t, d);
        if cap < 2 {
            return Err(Error::Budget(format!("no macroscopic placement fits at L={l}, t={t}, d={d}")));
        }
        let mut nx = (max_block as i64).min(cap - 1) as usize;
        if nx % 2 == 0 {
            nx -= 1;
        }
        let ny = (max_block as i64).min(cap - nx as i64) as usize;
        Self::with_sizes(l, t, d, nx, ny)
    }

    /// Cheapest placement for purities involving the complement of Y: the
    /// smallest X that can resolve `2^{2d-2}` (`|X| = 2|d| + 1` for `d < 0`)
    /// and the largest Y, which must be at least as large as X.
    pub fn fit_for_complement(l: usize, t: usize, d: i32) -> Result<Self> {
        let nx = 2 * d.min(0).unsigned_abs() as usize + 1;
        let cap = Self::capacity(l, t, d);
        if cap < 2 * nx as i64 {
            return Err(Error::Budget(format!("no macroscopic placement fits at L={l}, t={t}, d={d}")));
        }
        Self::with_sizes(l, t, d, nx, (cap - nx as i64) as usize)
    }
}
