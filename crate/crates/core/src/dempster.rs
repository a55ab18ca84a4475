//! Dempster-Shafer algebra on a finite label space.
//!
//! A [`Bpa`] keeps only its focal elements (subsets with positive mass).
//! This generic path is the reference every specialised fast path in
//! [`crate::contracts`] is checked against.
//!
//! Rule normalisation divides by the directly accumulated agreement mass
//! `Σ_{E∩F≠∅} m1(E) m2(F)` rather than `1 - conflict`, so that tiny but
//! genuine agreement (e.g. `ε1·ε2` in Zadeh's example) is not lost to
//! cancellation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{LabelSpace, SubsetMask};

/// BPA mass-sum tolerance.
pub const BPA_SUM_TOL: f64 = 1e-9;

/// Agreement mass at or below this is a complete contradiction.
pub const MIN_AGREEMENT: f64 = f64::MIN_POSITIVE;

/// Probability vector over a label space.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassProbability {
    space: LabelSpace,
    p: Vec<f64>,
}

impl ClassProbability {
    pub fn new(space: LabelSpace, p: Vec<f64>) -> Result<Self> {
        if p.len() != space.len() {
            return Err(Error::SpaceMismatch);
        }
        if p.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidValue(format!(
                "invalid probability vector {p:?}"
            )));
        }
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > BPA_SUM_TOL {
            return Err(Error::Validation(format!("probabilities sum to {s}")));
        }
        Ok(ClassProbability { space, p })
    }

    pub fn uniform(space: LabelSpace) -> Self {
        let k = space.len();
        ClassProbability {
            p: vec![1.0 / k as f64; k],
            space,
        }
    }

    pub fn space(&self) -> &LabelSpace {
        &self.space
    }

    pub fn values(&self) -> &[f64] {
        &self.p
    }

    pub fn get(&self, c: usize) -> f64 {
        self.p[c]
    }
}

/// Basic probability assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct Bpa {
    space: LabelSpace,
    masses: BTreeMap<SubsetMask, f64>,
}

impl Bpa {
    /// Validates and drops zero-mass entries.
    pub fn new(
        space: LabelSpace,
        masses: impl IntoIterator<Item = (SubsetMask, f64)>,
    ) -> Result<Self> {
        let mut out = BTreeMap::new();
        for (s, m) in masses {
            if !((0.0..=1.0 + BPA_SUM_TOL).contains(&m) && m.is_finite()) {
                return Err(Error::InvalidValue(format!("mass {m} on {s}")));
            }
            if !space.contains(s) {
                return Err(Error::Validation(format!(
                    "subset {s} outside the label space"
                )));
            }
            if m == 0.0 {
                continue;
            }
            if s.is_empty() {
                return Err(Error::Validation("mass on the empty set".into()));
            }
            *out.entry(s).or_insert(0.0) += m;
        }
        let total: f64 = out.values().sum();
        if (total - 1.0).abs() > BPA_SUM_TOL {
            return Err(Error::Validation(format!("masses sum to {total}")));
        }
        Ok(Bpa { space, masses: out })
    }

    /// Total ignorance: all mass on the whole space.
    pub fn vacuous(space: LabelSpace) -> Self {
        let full = space.full();
        Bpa {
            space,
            masses: BTreeMap::from([(full, 1.0)]),
        }
    }

    pub fn space(&self) -> &LabelSpace {
        &self.space
    }

    pub fn mass(&self, s: SubsetMask) -> f64 {
        self.masses.get(&s).copied().unwrap_or(0.0)
    }

    /// Focal elements in increasing bitmask order.
    pub fn focal(&self) -> impl Iterator<Item = (SubsetMask, f64)> + '_ {
        self.masses.iter().map(|(&s, &m)| (s, m))
    }

    pub fn num_focal(&self) -> usize {
        self.masses.len()
    }

    /// `Σ_{F ∋ c} m(F)`.
    pub fn plausibility(&self, c: usize) -> f64 {
        self.focal()
            .filter(|(s, _)| s.contains(c))
            .map(|(_, m)| m)
            .sum()
    }

    /// Reads the singleton masses as a probability; fails if any mass sits on
    /// a larger set.
    pub fn to_probability(&self) -> Result<ClassProbability> {
        if let Some((s, _)) = self.focal().find(|(s, _)| !s.is_singleton()) {
            return Err(Error::Validation(format!(
                "BPA has non-singleton focal set {s}"
            )));
        }
        let p = (0..self.space.len())
            .map(|c| self.mass(SubsetMask::singleton(c)))
            .collect();
        ClassProbability::new(self.space.clone(), p)
    }

    /// Singleton masses, regardless of what else carries mass.
    pub fn singleton_masses(&self) -> Vec<f64> {
        (0..self.space.len())
            .map(|c| self.mass(SubsetMask::singleton(c)))
            .collect()
    }
}

/// BPA whose focal sets are the singletons, `m({c}) = p(c)`.
pub fn from_probability(p: &ClassProbability) -> Bpa {
    let masses = p
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(c, &v)| (SubsetMask::singleton(c), v))
        .collect();
    Bpa {
        space: p.space.clone(),
        masses,
    }
}

fn same_space(a: &LabelSpace, b: &LabelSpace) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::SpaceMismatch)
    }
}

/// `Σ_{E∩F=∅} m1(E) m2(F)`; 1 means completely contradictory.
pub fn contradiction_mass(m1: &Bpa, m2: &Bpa) -> Result<f64> {
    same_space(&m1.space, &m2.space)?;
    let mut k = 0.0;
    for (e, a) in m1.focal() {
        for (f, b) in m2.focal() {
            if (e & f).is_empty() {
                k += a * b;
            }
        }
    }
    Ok(k)
}

/// Dempster's rule of combination.
pub fn combine(m1: &Bpa, m2: &Bpa) -> Result<Bpa> {
    same_space(&m1.space, &m2.space)?;
    let mut acc: BTreeMap<SubsetMask, f64> = BTreeMap::new();
    for (e, a) in m1.focal() {
        for (f, b) in m2.focal() {
            let s = e & f;
            if !s.is_empty() {
                *acc.entry(s).or_insert(0.0) += a * b;
            }
        }
    }
    let agreement: f64 = acc.values().sum();
    if !(agreement > MIN_AGREEMENT) {
        return Err(Error::CompleteContradiction(
            "the two BPAs are completely contradictory".into(),
        ));
    }
    acc.values_mut().for_each(|m| *m /= agreement);
    acc.retain(|_, m| *m > 0.0);
    Ok(Bpa {
        space: m1.space.clone(),
        masses: acc,
    })
}

/// Left fold of [`combine`]; the empty list gives the vacuous BPA.
pub fn combine_many<'a, I>(space: &LabelSpace, ms: I) -> Result<Bpa>
where
    I: IntoIterator<Item = &'a Bpa>,
{
    ms.into_iter()
        .try_fold(Bpa::vacuous(space.clone()), |acc, m| combine(&acc, m))
}

/// `p ⊕ m`, which is again a probability:
/// `(p⊕m)(c) = p(c) pl(c) / Σ_c' p(c') pl(c')` with `pl(c) = Σ_{F∋c} m(F)`.
pub fn combine_prob(p: &ClassProbability, m: &Bpa) -> Result<ClassProbability> {
    same_space(&p.space, &m.space)?;
    let mut num: Vec<f64> = (0..p.p.len()).map(|c| p.p[c] * m.plausibility(c)).collect();
    let agreement: f64 = num.iter().sum();
    if !(agreement > MIN_AGREEMENT) {
        return Err(Error::CompleteContradiction(
            "probability is completely contradictory with the BPA".into(),
        ));
    }
    num.iter_mut().for_each(|v| *v /= agreement);
    Ok(ClassProbability {
        space: p.space.clone(),
        p: num,
    })
}

/// `Σ_c Σ_{F ⊆ C∖{c}} p(c) m(F)`: the contradiction between a probability
/// and a BPA.
pub fn contradiction_prob(p: &ClassProbability, m: &Bpa) -> Result<f64> {
    same_space(&p.space, &m.space)?;
    let mut k = 0.0;
    for (c, &pc) in p.p.iter().enumerate() {
        for (f, mf) in m.focal() {
            if !f.contains(c) {
                k += pc * mf;
            }
        }
    }
    Ok(k)
}

/// BPA file layout: `{ "classes": [...], "masses": { "a|b": 0.4, ... } }`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BpaFile {
    pub classes: Vec<String>,
    pub masses: BTreeMap<String, f64>,
}

impl TryFrom<BpaFile> for Bpa {
    type Error = Error;
    fn try_from(f: BpaFile) -> Result<Bpa> {
        let space = LabelSpace::new(f.classes)?;
        let masses = f
            .masses
            .iter()
            .map(|(k, &v)| Ok((space.parse_subset(k)?, v)))
            .collect::<Result<Vec<_>>>()?;
        Bpa::new(space, masses)
    }
}

impl From<&Bpa> for BpaFile {
    fn from(b: &Bpa) -> BpaFile {
        BpaFile {
            classes: b.space.names().to_vec(),
            masses: b
                .focal()
                .map(|(s, m)| (b.space.format_subset(s), m))
                .collect(),
        }
    }
}

impl Bpa {
    pub fn from_json(text: &str) -> Result<Bpa> {
        let f: BpaFile =
            serde_json::from_str(text).map_err(|e| Error::Validation(e.to_string()))?;
        f.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&BpaFile::from(self)).expect("bpa serializes")
    }
}
