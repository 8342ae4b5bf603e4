//! The hypothesis-testing problem: contamination classes, covariance
//! structure, and exact sampling of observed coordinates.
//!
//! Coordinates are 1-based. Under the null every coordinate is an independent
//! standard normal. Under the alternative a set `S` of `k` coordinates is
//! contaminated:
//!
//! - **Normalized** model: contaminated coordinates keep unit variance and are
//!   pairwise correlated with strength `rho`. A queried coordinate `i in S` is
//!   generated as `sqrt(1-rho) * Y_i + sqrt(rho) * N` with `Y_i`, `N` standard
//!   normal and `N` shared by the whole round.
//! - **Unnormalized** model: contaminated coordinates gain variance, `Y_i +
//!   sqrt(rho) * N`, so the diagonal is `1 + rho` on `S` (a rank-one spiked
//!   covariance).
//!
//! Sampling always goes through the additive common-signal representation:
//! cost is `O(|A|)` per round and only queried coordinates are ever generated.
//! A dense-covariance oracle exists only in the test suite.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

/// Covariance normalization of the contaminated block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Contaminated diagonal entries equal 1.
    Normalized,
    /// Contaminated diagonal entries equal `1 + rho`.
    Unnormalized,
}

/// A class of candidate contaminated sets, all of cardinality `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContaminationClass {
    /// All subsets of `{1..n}` of cardinality `k`.
    KSets { n: u32, k: u32 },
    /// All `k` contiguous coordinates `{z..z+k-1}`, `1 <= z <= n-k+1`.
    KIntervals { n: u32, k: u32 },
    /// The fixed tiling `I_j = {(j-1)k+1 .. jk}` for `j in 1..=floor(n/k)`.
    DisjointKIntervals { n: u32, k: u32 },
    /// Axis-aligned `k1 x k2` blocks in an `n1 x n2` grid, embedded row-major
    /// into `{1..n1*n2}`.
    Rectangles { n1: u32, n2: u32, k1: u32, k2: u32 },
}

impl ContaminationClass {
    /// Ambient dimension `n`.
    pub fn n(&self) -> u32 {
        match *self {
            ContaminationClass::KSets { n, .. }
            | ContaminationClass::KIntervals { n, .. }
            | ContaminationClass::DisjointKIntervals { n, .. } => n,
            ContaminationClass::Rectangles { n1, n2, .. } => n1 * n2,
        }
    }

    /// Member cardinality `k`.
    pub fn k(&self) -> u32 {
        match *self {
            ContaminationClass::KSets { k, .. }
            | ContaminationClass::KIntervals { k, .. }
            | ContaminationClass::DisjointKIntervals { k, .. } => k,
            ContaminationClass::Rectangles { k1, k2, .. } => k1 * k2,
        }
    }

    /// Checks `1 <= k <= n` (and the grid factorizations for rectangles).
    pub fn validate(&self) -> Result<()> {
        let (n, k) = (self.n(), self.k());
        if k == 0 {
            return Err(Error::InvalidClass("k must be positive".into()));
        }
        if n == 0 {
            return Err(Error::InvalidClass("n must be positive".into()));
        }
        if k > n {
            return Err(Error::InvalidClass(format!("k = {k} exceeds n = {n}")));
        }
        if let ContaminationClass::Rectangles { n1, n2, k1, k2 } = *self {
            if k1 == 0 || k2 == 0 || n1 == 0 || n2 == 0 {
                return Err(Error::InvalidClass(
                    "rectangle sides must be positive".into(),
                ));
            }
            if k1 > n1 || k2 > n2 {
                return Err(Error::InvalidClass(format!(
                    "rectangle {k1}x{k2} does not fit the {n1}x{n2} grid"
                )));
            }
        }
        Ok(())
    }

    /// Short lowercase name used in CSV output.
    pub fn kind_name(&self) -> &'static str {
        match self {
            ContaminationClass::KSets { .. } => "ksets",
            ContaminationClass::KIntervals { .. } => "kintervals",
            ContaminationClass::DisjointKIntervals { .. } => "disjoint_kintervals",
            ContaminationClass::Rectangles { .. } => "rectangles",
        }
    }
}

/// Binomial coefficient with overflow detection.
fn binomial(n: u64, k: u64) -> Result<u64> {
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc
            .checked_mul((n - i) as u128)
            .ok_or(Error::ClassTooLarge)?;
        acc /= (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return Err(Error::ClassTooLarge);
        }
    }
    Ok(acc as u64)
}

/// Binomial coefficient saturating at `u64::MAX`, for index-range checks on
/// classes too large to count exactly. Comparisons `index < binomial(...)`
/// stay correct for any index below `u64::MAX`.
fn binomial_saturating(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i + 1) as u128,
            None => return u64::MAX,
        };
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Number of members of the class.
///
/// `C(n,k)` for k-sets, `n-k+1` for k-intervals, `floor(n/k)` for disjoint
/// k-intervals, `(n1-k1+1)(n2-k2+1)` for rectangles.
pub fn class_size(class: &ContaminationClass) -> Result<u64> {
    class.validate()?;
    Ok(match *class {
        ContaminationClass::KSets { n, k } => binomial(n as u64, k as u64)?,
        ContaminationClass::KIntervals { n, k } => (n - k + 1) as u64,
        ContaminationClass::DisjointKIntervals { n, k } => (n / k) as u64,
        ContaminationClass::Rectangles { n1, n2, k1, k2 } => {
            (n1 - k1 + 1) as u64 * (n2 - k2 + 1) as u64
        }
    })
}

/// `ln |C|`, defined even when the exact count overflows `u64`.
pub fn class_size_ln(class: &ContaminationClass) -> Result<f64> {
    class.validate()?;
    Ok(match *class {
        ContaminationClass::KSets { n, k } => {
            let (n, k) = (n as f64, k as f64);
            statrs::function::gamma::ln_gamma(n + 1.0)
                - statrs::function::gamma::ln_gamma(k + 1.0)
                - statrs::function::gamma::ln_gamma(n - k + 1.0)
        }
        _ => (class_size(class)? as f64).ln(),
    })
}

/// The `index`-th member under the canonical order: lexicographic for k-sets,
/// by left endpoint for intervals, by block index for disjoint intervals,
/// row-major for rectangles. Coordinates are returned sorted, 1-based.
pub fn member(class: &ContaminationClass, index: u64) -> Result<Vec<u32>> {
    class.validate()?;
    // Classes whose size overflows u64 accept every u64 index.
    let size = match class_size(class) {
        Ok(size) => size,
        Err(Error::ClassTooLarge) => u64::MAX,
        Err(e) => return Err(e),
    };
    if index >= size {
        return Err(Error::IndexOutOfRange { index, size });
    }
    Ok(match *class {
        ContaminationClass::KSets { n, k } => unrank_combination(n as u64, k as u64, index)?,
        ContaminationClass::KIntervals { k, .. } => {
            let z = index as u32 + 1;
            (z..z + k).collect()
        }
        ContaminationClass::DisjointKIntervals { k, .. } => {
            let start = index as u32 * k + 1;
            (start..start + k).collect()
        }
        ContaminationClass::Rectangles { n2, k1, k2, .. } => {
            let cols = (n2 - k2 + 1) as u64;
            let i0 = (index / cols) as u32 + 1;
            let j0 = (index % cols) as u32 + 1;
            let mut coords = Vec::with_capacity((k1 * k2) as usize);
            for r in i0..i0 + k1 {
                for c in j0..j0 + k2 {
                    coords.push((r - 1) * n2 + c);
                }
            }
            coords
        }
    })
}

/// Inverse of [`member`]: the canonical index of a member set.
pub fn member_rank(class: &ContaminationClass, coords: &[u32]) -> Result<u64> {
    if !is_member(class, coords)? {
        return Err(Error::InvalidInstance(format!(
            "{coords:?} is not a member of {class:?}"
        )));
    }
    Ok(match *class {
        ContaminationClass::KSets { n, .. } => rank_combination(n as u64, coords),
        ContaminationClass::KIntervals { .. } => (coords[0] - 1) as u64,
        ContaminationClass::DisjointKIntervals { k, .. } => ((coords[0] - 1) / k) as u64,
        ContaminationClass::Rectangles { n2, k2, .. } => {
            let first = coords[0] - 1;
            let i0 = first / n2;
            let j0 = first % n2;
            i0 as u64 * (n2 - k2 + 1) as u64 + j0 as u64
        }
    })
}

/// Whether a sorted coordinate set belongs to the class.
pub fn is_member(class: &ContaminationClass, coords: &[u32]) -> Result<bool> {
    class.validate()?;
    let (n, k) = (class.n(), class.k());
    if coords.len() != k as usize {
        return Ok(false);
    }
    if coords.windows(2).any(|w| w[0] >= w[1]) {
        return Ok(false);
    }
    if coords[0] < 1 || coords[coords.len() - 1] > n {
        return Ok(false);
    }
    Ok(match *class {
        ContaminationClass::KSets { .. } => true,
        ContaminationClass::KIntervals { .. } => coords[k as usize - 1] - coords[0] == k - 1,
        ContaminationClass::DisjointKIntervals { k, .. } => {
            let contiguous = coords[k as usize - 1] - coords[0] == k - 1;
            contiguous && (coords[0] - 1).is_multiple_of(k)
        }
        ContaminationClass::Rectangles { n1, n2, k1, k2 } => {
            let first = coords[0] - 1;
            let i0 = first / n2 + 1;
            let j0 = first % n2 + 1;
            if i0 + k1 - 1 > n1 || j0 + k2 - 1 > n2 {
                false
            } else {
                let mut expected = Vec::with_capacity((k1 * k2) as usize);
                for r in i0..i0 + k1 {
                    for c in j0..j0 + k2 {
                        expected.push((r - 1) * n2 + c);
                    }
                }
                expected == coords
            }
        }
    })
}

/// Lexicographic unranking of a k-combination of `{1..n}`.
fn unrank_combination(n: u64, k: u64, mut index: u64) -> Result<Vec<u32>> {
    debug_assert!(k <= n);
    let mut coords = Vec::with_capacity(k as usize);
    let mut next = 1u64;
    let mut remaining = k;
    while remaining > 0 {
        // Sets starting with `next` among those with `remaining` slots left.
        let with_next = binomial_saturating(n - next, remaining - 1);
        if index < with_next {
            coords.push(next as u32);
            remaining -= 1;
        } else {
            index -= with_next;
        }
        next += 1;
    }
    Ok(coords)
}

fn rank_combination(n: u64, coords: &[u32]) -> u64 {
    let k = coords.len() as u64;
    let mut rank = 0u64;
    let mut prev = 0u64;
    for (slot, &c) in coords.iter().enumerate() {
        let c = c as u64;
        for skipped in prev + 1..c {
            rank = rank.saturating_add(binomial_saturating(n - skipped, k - slot as u64 - 1));
        }
        prev = c;
    }
    rank
}

/// Draws a uniformly random member of the class.
pub fn sample_member(class: &ContaminationClass, rng: &mut Stream) -> Result<Vec<u32>> {
    class.validate()?;
    match *class {
        ContaminationClass::KSets { n, k } => {
            // Floyd's algorithm: uniform k-subset without enumeration.
            let mut chosen = std::collections::BTreeSet::new();
            for j in (n - k + 1)..=n {
                let t = rng.gen_range(1..=j);
                if !chosen.insert(t) {
                    chosen.insert(j);
                }
            }
            Ok(chosen.into_iter().collect())
        }
        _ => {
            let size = class_size(class)?;
            member(class, rng.gen_range(0..size))
        }
    }
}

/// Ground truth of a problem instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", untagged)]
pub enum Truth {
    Null,
    Alternative(Vec<u32>),
}

impl Truth {
    pub fn contaminated(&self) -> Option<&[u32]> {
        match self {
            Truth::Null => None,
            Truth::Alternative(s) => Some(s),
        }
    }
}

/// A fully specified testing problem: class, correlation, model kind and the
/// (hidden) truth. Immutable after construction and shareable across trial
/// workers; randomness enters only through explicitly passed streams.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemInstance {
    class: ContaminationClass,
    rho: f64,
    model: ModelKind,
    truth: Truth,
}

impl ProblemInstance {
    /// Builds an instance, validating `rho` and membership of the truth.
    ///
    /// `rho = 1` is rejected (detecting duplicate entries is trivial);
    /// `rho = 0` under the alternative is permitted and yields a degenerate
    /// alternative identical to the null.
    pub fn new(
        class: ContaminationClass,
        rho: f64,
        model: ModelKind,
        truth: Truth,
    ) -> Result<Self> {
        class.validate()?;
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::InvalidRho(format!(
                "rho = {rho} outside [0, 1) (rho = 1 is excluded)"
            )));
        }
        if let Truth::Alternative(s) = &truth {
            if !is_member(&class, s)? {
                return Err(Error::InvalidInstance(format!(
                    "alternative set {s:?} is not a member of the class"
                )));
            }
        }
        Ok(Self {
            class,
            rho,
            model,
            truth,
        })
    }

    pub fn class(&self) -> &ContaminationClass {
        &self.class
    }

    pub fn n(&self) -> u32 {
        self.class.n()
    }

    pub fn k(&self) -> u32 {
        self.class.k()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn model(&self) -> ModelKind {
        self.model
    }

    pub fn truth(&self) -> &Truth {
        &self.truth
    }

    /// Entry `(i, j)` of the instance covariance matrix.
    ///
    /// Normalized: 1 on the diagonal, `rho` off-diagonal inside `S`, 0
    /// elsewhere. Unnormalized: `1 + rho` on the diagonal inside `S`.
    /// Under the null both models are the identity.
    pub fn covariance_entry(&self, i: u32, j: u32) -> Result<f64> {
        let n = self.n();
        for c in [i, j] {
            if c < 1 || c > n {
                return Err(Error::CoordinateOutOfRange(c, n));
            }
        }
        let s = match self.truth.contaminated() {
            None => return Ok(if i == j { 1.0 } else { 0.0 }),
            Some(s) => s,
        };
        let in_s = |c: u32| s.binary_search(&c).is_ok();
        Ok(if i == j {
            match self.model {
                ModelKind::Normalized => 1.0,
                ModelKind::Unnormalized => {
                    if in_s(i) {
                        1.0 + self.rho
                    } else {
                        1.0
                    }
                }
            }
        } else if in_s(i) && in_s(j) {
            self.rho
        } else {
            0.0
        })
    }

    /// Observes one fresh round at the queried coordinates.
    ///
    /// Each call draws a new independent latent vector; the joint law of the
    /// returned values is the restriction of the model's multivariate normal
    /// to `query`. Values are returned aligned with `query`, which must be
    /// sorted, duplicate-free, nonempty and within `1..=n`.
    pub fn sample_round(&self, query: &[u32], rng: &mut Stream) -> Result<Vec<f64>> {
        if query.is_empty() {
            return Err(Error::EmptyQuery);
        }
        let n = self.n();
        let mut prev = 0u32;
        for &c in query {
            if c < 1 || c > n {
                return Err(Error::CoordinateOutOfRange(c, n));
            }
            if c <= prev {
                return Err(Error::InvalidInstance(
                    "query coordinates must be sorted and distinct".into(),
                ));
            }
            prev = c;
        }
        let rho = self.rho;
        let (s, common) = match self.truth.contaminated() {
            Some(s) if rho > 0.0 => {
                let shared: f64 = rng.sample(StandardNormal);
                (Some(s), shared)
            }
            _ => (None, 0.0),
        };
        let mut out = Vec::with_capacity(query.len());
        for &c in query {
            let noise: f64 = rng.sample(StandardNormal);
            let contaminated = s.is_some_and(|s| s.binary_search(&c).is_ok());
            let value = if contaminated {
                match self.model {
                    ModelKind::Normalized => (1.0 - rho).sqrt() * noise + rho.sqrt() * common,
                    ModelKind::Unnormalized => noise + rho.sqrt() * common,
                }
            } else {
                noise
            };
            out.push(value);
        }
        Ok(out)
    }
}

/// JSON description of an instance: `{model, class_kind, n, k, rho, truth}`
/// with `truth` either `"null"` or a sorted coordinate array. Rectangle
/// classes carry their grid factorization as well.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDescription {
    pub model: ModelKind,
    pub class_kind: String,
    pub n: u32,
    pub k: u32,
    pub rho: f64,
    pub truth: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n1: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n2: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k1: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k2: Option<u32>,
}

impl From<&ProblemInstance> for InstanceDescription {
    fn from(inst: &ProblemInstance) -> Self {
        let (n1, n2, k1, k2) = match *inst.class() {
            ContaminationClass::Rectangles { n1, n2, k1, k2 } => {
                (Some(n1), Some(n2), Some(k1), Some(k2))
            }
            _ => (None, None, None, None),
        };
        InstanceDescription {
            model: inst.model(),
            class_kind: inst.class().kind_name().to_string(),
            n: inst.n(),
            k: inst.k(),
            rho: inst.rho(),
            truth: match inst.truth() {
                Truth::Null => serde_json::Value::String("null".into()),
                Truth::Alternative(s) => serde_json::json!(s),
            },
            n1,
            n2,
            k1,
            k2,
        }
    }
}
