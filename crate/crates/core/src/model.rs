//! Finite-support jump laws on Z^d and the structural checks the walk
//! hypotheses ask for: irreducibility, nonzero mean, aperiodicity of the
//! vertical marginal, left continuity and the period of the kernel.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::error::{Error, Result};
use crate::geometry::DualPoint;
use crate::ladder::OneDWalk;

/// Sum validation tolerance for directly constructed or parsed laws.
pub const PROB_SUM_TOL: f64 = 1e-12;
/// Sum tolerance for laws produced by an exponential twist; the twist point
/// comes from a numerical solve of phi(a) = 1 so its residual dominates.
pub const TWIST_SUM_TOL: f64 = 1e-9;

/// A lattice step in Z^d. The last coordinate is the vertical one that the
/// killing boundary acts on.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LatticeVector(Vec<i64>);

impl LatticeVector {
    pub fn new(coords: Vec<i64>) -> Self {
        LatticeVector(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    /// Vertical (last) coordinate.
    pub fn y(&self) -> i64 {
        *self.0.last().expect("lattice vector is never empty")
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&c| (c as f64) * (c as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn norm_inf(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }

    pub fn add(&self, other: &LatticeVector) -> LatticeVector {
        LatticeVector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &LatticeVector) -> LatticeVector {
        LatticeVector(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn scale(&self, k: i64) -> LatticeVector {
        LatticeVector(self.0.iter().map(|c| c * k).collect())
    }

    pub fn zero(dim: usize) -> Self {
        LatticeVector(vec![0; dim])
    }

    /// Standard basis vector e_i.
    pub fn unit(dim: usize, axis: usize) -> Self {
        let mut c = vec![0; dim];
        c[axis] = 1;
        LatticeVector(c)
    }
}

impl fmt::Display for LatticeVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|c| c.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// A finite-support probability law on Z^d, d >= 2.
///
/// Entries are kept in a sorted map so that every sum over the support is
/// evaluated in the same order; results are bit-reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpDistribution {
    dim: usize,
    entries: BTreeMap<LatticeVector, f64>,
}

impl JumpDistribution {
    pub fn new<I>(dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (LatticeVector, f64)>,
    {
        Self::build(dim, entries, PROB_SUM_TOL)
    }

    fn build<I>(dim: usize, entries: I, sum_tol: f64) -> Result<Self>
    where
        I: IntoIterator<Item = (LatticeVector, f64)>,
    {
        if dim < 2 {
            return Err(Error::Model(format!("dimension must be >= 2, got {dim}")));
        }
        let mut map = BTreeMap::new();
        for (z, p) in entries {
            if z.dim() != dim {
                return Err(Error::Model(format!(
                    "jump {z} has {} coordinates, expected {dim}",
                    z.dim()
                )));
            }
            if !(p > 0.0) || !p.is_finite() {
                return Err(Error::Model(format!("jump {z} has probability {p}")));
            }
            if map.insert(z.clone(), p).is_some() {
                return Err(Error::Model(format!("duplicate jump {z}")));
            }
        }
        if map.is_empty() {
            return Err(Error::Model("empty support".into()));
        }
        let sum: f64 = map.values().sum();
        if (sum - 1.0).abs() > sum_tol {
            return Err(Error::Model(format!(
                "probabilities sum to {sum}, expected 1 within {sum_tol:.0e}"
            )));
        }
        Ok(JumpDistribution { dim, entries: map })
    }

    /// Parse the line-oriented model text format:
    ///
    /// ```text
    /// # comment
    /// dim 2
    /// jump 1 0 0.3
    /// jump -1 0 0.2
    /// ```
    pub fn parse(text: &str) -> Result<Self> {
        let mut dim: Option<usize> = None;
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let head = tokens.next().unwrap();
            let err = |msg: String| Error::Model(format!("line {}: {msg}", lineno + 1));
            match head {
                "dim" => {
                    if dim.is_some() {
                        return Err(err("repeated dim line".into()));
                    }
                    let d: usize = tokens
                        .next()
                        .ok_or_else(|| err("missing dimension".into()))?
                        .parse()
                        .map_err(|e| err(format!("bad dimension: {e}")))?;
                    if tokens.next().is_some() {
                        return Err(err("trailing tokens after dim".into()));
                    }
                    dim = Some(d);
                }
                "jump" => {
                    let d = dim.ok_or_else(|| err("jump before dim".into()))?;
                    let rest: Vec<&str> = tokens.collect();
                    if rest.len() != d + 1 {
                        return Err(err(format!(
                            "expected {d} coordinates and a probability, got {} tokens",
                            rest.len()
                        )));
                    }
                    let mut coords = Vec::with_capacity(d);
                    for t in &rest[..d] {
                        coords.push(
                            t.parse::<i64>()
                                .map_err(|e| err(format!("bad coordinate {t}: {e}")))?,
                        );
                    }
                    let p: f64 = rest[d]
                        .parse()
                        .map_err(|e| err(format!("bad probability {}: {e}", rest[d])))?;
                    entries.push((LatticeVector::new(coords), p));
                }
                other => return Err(err(format!("unknown directive {other}"))),
            }
        }
        let dim = dim.ok_or_else(|| Error::Model("missing dim line".into()))?;
        Self::build(dim, entries, PROB_SUM_TOL)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LatticeVector, f64)> {
        self.entries.iter().map(|(z, &p)| (z, p))
    }

    pub fn support_len(&self) -> usize {
        self.entries.len()
    }

    pub fn prob(&self, z: &LatticeVector) -> f64 {
        self.entries.get(z).copied().unwrap_or(0.0)
    }

    /// Largest coordinate magnitude over the support.
    pub fn max_jump_norm(&self) -> i64 {
        self.entries.keys().map(|z| z.norm_inf()).max().unwrap_or(0)
    }

    /// Mean jump vector.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (z, p) in self.iter() {
            for (mi, &c) in m.iter_mut().zip(z.coords()) {
                *mi += p * c as f64;
            }
        }
        m
    }

    /// Law of the vertical coordinate of a single jump.
    pub fn y_marginal(&self) -> OneDWalk {
        let mut collapsed: BTreeMap<i64, f64> = BTreeMap::new();
        for (z, p) in self.iter() {
            *collapsed.entry(z.y()).or_insert(0.0) += p;
        }
        OneDWalk::from_producer(collapsed, TWIST_SUM_TOL)
    }

    /// Exponentially twisted law mu(z)·e^{a·z} / phi(a).
    ///
    /// `a` must lie on the unit level set within 1e-9. The division removes
    /// the leftover root-finding error in phi(a): downstream linear systems
    /// against the twisted law assume unit mass, and a defect of even 1e-12
    /// grows linearly with the truncation height there.
    pub fn twist(&self, a: &DualPoint) -> Result<JumpDistribution> {
        if a.dim() != self.dim {
            return Err(Error::Domain(format!(
                "twist point has dimension {}, model has {}",
                a.dim(),
                self.dim
            )));
        }
        let mut entries = Vec::with_capacity(self.entries.len());
        let mut sum = 0.0;
        for (z, p) in self.iter() {
            let w = p * a.dot_lattice(z).exp();
            sum += w;
            entries.push((z.clone(), w));
        }
        if (sum - 1.0).abs() > TWIST_SUM_TOL {
            return Err(Error::OffBoundary { phi: sum });
        }
        for (_, w) in &mut entries {
            *w /= sum;
        }
        Self::build(self.dim, entries, TWIST_SUM_TOL)
    }
}

/// Outcome of the structural hypothesis checks.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub irreducible: bool,
    pub mean: Vec<f64>,
    pub mean_nonzero: bool,
    pub y_aperiodic: bool,
    pub left_continuous: bool,
    /// gcd of the lengths of zero-displacement jump cycles found within the
    /// search bound; 1 when no cycle was found.
    pub period: u64,
}

/// Default number of jumps explored by the bounded reachability search.
pub fn default_search_bound(model: &JumpDistribution) -> u32 {
    (4 * model.dim() as i64 * model.max_jump_norm().max(1)) as u32
}

/// Bounded breadth-first checks of the walk hypotheses.
///
/// Irreducibility is certified by reaching every +-e_i as a sum of at most
/// `search_bound` support jumps; the search is confined to the box of radius
/// search_bound · max-jump, which is where any such sum must live.
pub fn validate(model: &JumpDistribution, search_bound: u32) -> Result<ValidationReport> {
    if search_bound < 1 {
        return Err(Error::Domain("search bound must be >= 1".into()));
    }
    let d = model.dim();
    let mean = model.mean();
    let mean_norm: f64 = mean.iter().map(|m| m * m).sum::<f64>().sqrt();

    let radius = search_bound as i64 * model.max_jump_norm();
    let in_box = |z: &LatticeVector| z.norm_inf() <= radius;

    // Level sets of exact n-step sums; return times give the period.
    let mut level: BTreeSet<LatticeVector> = BTreeSet::new();
    level.insert(LatticeVector::zero(d));
    let mut reached: BTreeSet<LatticeVector> = level.clone();
    let mut return_gcd: u64 = 0;
    for n in 1..=search_bound as u64 {
        let mut next = BTreeSet::new();
        for z in &level {
            for (j, _) in model.iter() {
                let w = z.add(j);
                if in_box(&w) {
                    next.insert(w);
                }
            }
        }
        if next.contains(&LatticeVector::zero(d)) {
            return_gcd = gcd(return_gcd, n);
        }
        reached.extend(next.iter().cloned());
        level = next;
        if return_gcd == 1 && reached.len() > 1 {
            // gcd can only stay 1; keep going only to fill `reached`.
        }
    }
    let mut irreducible = true;
    for axis in 0..d {
        let e = LatticeVector::unit(d, axis);
        let minus_e = e.scale(-1);
        if !reached.contains(&e) || !reached.contains(&minus_e) {
            irreducible = false;
        }
    }
    let period = if return_gcd == 0 { 1 } else { return_gcd };

    // Same bounded search on the vertical marginal for its return-time gcd.
    let y_jumps: BTreeSet<i64> = model.iter().map(|(z, _)| z.y()).collect();
    let y_radius = search_bound as i64 * y_jumps.iter().map(|j| j.abs()).max().unwrap_or(0);
    let mut y_level: BTreeSet<i64> = BTreeSet::new();
    y_level.insert(0);
    let mut y_gcd: u64 = 0;
    for n in 1..=search_bound as u64 {
        let mut next = BTreeSet::new();
        for y in &y_level {
            for j in &y_jumps {
                let w = y + j;
                if w.abs() <= y_radius {
                    next.insert(w);
                }
            }
        }
        if next.contains(&0) {
            y_gcd = gcd(y_gcd, n);
        }
        if y_gcd == 1 {
            break;
        }
        y_level = next;
    }
    let y_aperiodic = y_gcd == 1;

    let left_continuous = model.iter().all(|(z, _)| z.y() >= -1);

    Ok(ValidationReport {
        irreducible,
        mean,
        mean_nonzero: mean_norm > 1e-12,
        y_aperiodic,
        left_continuous,
        period,
    })
}

fn gcd(a: u64, b: u64) -> u64 {
    if a == 0 {
        b
    } else {
        gcd(b % a, a)
    }
}
