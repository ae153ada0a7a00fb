//! Rank-2 stratified models in exponential coordinates of the second type.
//!
//! In these coordinates the horizontal frame reads `X1 = ∂1` and
//! `X2 = ∂2 + Σ_{i≥3} a_i(x1, x2) ∂i`. Each coefficient splits as
//! `a_i = p_i + r_i` where `p_i = x1^(α_i+1) x2^β_i` is homogeneous of
//! degree `w_i - 1` under the dilations and `r_i` is a polynomial remainder
//! of homogeneous degree at least `w_i`.
//!
//! The coefficients only ever see `(x1, x2)`: the API has no way to pass the
//! higher coordinates, so the commutativity condition on the distribution is
//! part of the type rather than a runtime check.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Homogeneous degrees `w_1..w_n` of the coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<u32>);

impl WeightVector {
    pub fn new(weights: Vec<u32>) -> Self {
        WeightVector(weights)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Weight of coordinate `i` (1-based, as in `x_1..x_n`).
    pub fn get(&self, i: usize) -> Option<u32> {
        i.checked_sub(1).and_then(|p| self.0.get(p).copied())
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }
}

/// The single monomial `x1^(alpha+1) x2^beta` carried by coordinate `index`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonomialLayer {
    #[serde(rename = "i")]
    pub index: usize,
    pub alpha: u32,
    pub beta: u32,
}

impl MonomialLayer {
    pub fn new(index: usize, alpha: u32, beta: u32) -> Self {
        MonomialLayer { index, alpha, beta }
    }

    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        x1.powi(self.alpha as i32 + 1) * x2.powi(self.beta as i32)
    }

    /// `∂1 p = (alpha+1) x1^alpha x2^beta`.
    pub fn d1(&self, x1: f64, x2: f64) -> f64 {
        (self.alpha as f64 + 1.0) * x1.powi(self.alpha as i32) * x2.powi(self.beta as i32)
    }

    pub fn order_key(&self) -> (u32, u32) {
        (self.alpha, self.beta)
    }
}

/// One term `coeff * x1^a1 * x2^a2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    #[serde(rename = "c")]
    pub coeff: f64,
    pub a1: u32,
    pub a2: u32,
}

impl Term {
    pub fn degree(&self) -> u32 {
        self.a1 + self.a2
    }
}

/// Finite polynomial in `(x1, x2)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BivariatePolynomial {
    terms: Vec<Term>,
}

impl BivariatePolynomial {
    pub fn new(terms: Vec<Term>) -> Self {
        BivariatePolynomial { terms }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.coeff == 0.0)
    }

    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coeff * x1.powi(t.a1 as i32) * x2.powi(t.a2 as i32))
            .sum()
    }

    pub fn d1(&self, x1: f64, x2: f64) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.a1 > 0)
            .map(|t| t.coeff * t.a1 as f64 * x1.powi(t.a1 as i32 - 1) * x2.powi(t.a2 as i32))
            .sum()
    }

    /// `q(x1 + shift, x2) - q(x1, x2)`, expanded binomially so that small
    /// shifts do not lose digits to cancellation.
    pub fn shift_difference(&self, x1: f64, x2: f64, shift: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let mut acc = 0.0;
                let mut binom = 1.0;
                // sum_{m < a1} C(a1, m) shift^(a1 - m) x1^m
                for m in 0..t.a1 {
                    acc += binom * shift.powi((t.a1 - m) as i32) * x1.powi(m as i32);
                    binom = binom * (t.a1 - m) as f64 / (m + 1) as f64;
                }
                t.coeff * acc * x2.powi(t.a2 as i32)
            })
            .sum()
    }

    /// `∂1 q(x1 + shift, x2)`.
    pub fn d1_shifted(&self, x1: f64, x2: f64, shift: f64) -> f64 {
        self.d1(x1 + shift, x2)
    }
}

/// Remainder polynomials `r_i`, keyed by coordinate index.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RemainderSpec {
    by_index: BTreeMap<usize, BivariatePolynomial>,
}

impl RemainderSpec {
    pub fn empty() -> Self {
        RemainderSpec::default()
    }

    pub fn with_term(mut self, index: usize, term: Term) -> Self {
        self.by_index.entry(index).or_default().terms.push(term);
        self
    }

    pub fn get(&self, index: usize) -> Option<&BivariatePolynomial> {
        self.by_index.get(&index)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &BivariatePolynomial)> {
        self.by_index.iter().map(|(i, p)| (*i, p))
    }

    pub fn is_empty(&self) -> bool {
        self.by_index.values().all(|p| p.is_zero())
    }
}

/// A single violated invariant, naming the offending coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DimensionTooSmall {
        n: usize,
    },
    HorizontalWeight {
        index: usize,
        weight: u32,
    },
    LayerWeightTooSmall {
        index: usize,
        weight: u32,
    },
    WeightsDecreasing {
        index: usize,
    },
    LayerIndexOutOfRange {
        index: usize,
    },
    MissingLayer {
        index: usize,
    },
    DuplicateLayer {
        index: usize,
    },
    DegreeMismatch {
        index: usize,
        alpha: u32,
        beta: u32,
        weight: u32,
    },
    DuplicatePair {
        first: usize,
        second: usize,
        alpha: u32,
        beta: u32,
    },
    RemainderIndexOutOfRange {
        index: usize,
    },
    RemainderDegree {
        index: usize,
        a1: u32,
        a2: u32,
        weight: u32,
    },
    NonFiniteCoefficient {
        index: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Violation::*;
        match self {
            DimensionTooSmall { n } => write!(f, "dimension n = {n} is below 3"),
            HorizontalWeight { index, weight } => {
                write!(f, "w_{index} = {weight}, horizontal coordinates need weight 1")
            }
            LayerWeightTooSmall { index, weight } => write!(f, "w_{index} = {weight} < 2"),
            WeightsDecreasing { index } => write!(f, "w_{index} < w_{}", index - 1),
            LayerIndexOutOfRange { index } => write!(f, "layer for coordinate {index} outside 3..n"),
            MissingLayer { index } => write!(f, "no monomial layer for coordinate {index}"),
            DuplicateLayer { index } => write!(f, "more than one layer for coordinate {index}"),
            DegreeMismatch {
                index,
                alpha,
                beta,
                weight,
            } => write!(
                f,
                "layer {index}: alpha + beta = {} but w_{index} - 2 = {}",
                alpha + beta,
                *weight as i64 - 2
            ),
            DuplicatePair {
                first,
                second,
                alpha,
                beta,
            } => write!(
                f,
                "coordinates {first} and {second} share the exponent pair ({alpha}, {beta})"
            ),
            RemainderIndexOutOfRange { index } => {
                write!(f, "remainder for coordinate {index} outside 3..n")
            }
            RemainderDegree { index, a1, a2, weight } => write!(
                f,
                "remainder term x1^{a1} x2^{a2} of coordinate {index} has degree {} < w_{index} = {weight}",
                a1 + a2
            ),
            NonFiniteCoefficient { index } => {
                write!(f, "non-finite remainder coefficient for coordinate {index}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for (n, v) in self.violations.iter().enumerate() {
            if n > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Empirical constants of the remainder bounds `|r_i| <= C1 ||x||^w_i` and
/// `|∂1 r_i| <= C2 ||x||^(w_i - 1)` on the unit pseudo-ball of the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemainderConstants {
    pub index: usize,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogeneitySample {
    pub lambda: f64,
    pub x1: f64,
    pub x2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedModel {
    weights: WeightVector,
    layers: Vec<MonomialLayer>,
    #[serde(default)]
    remainders: RemainderSpec,
}

impl StratifiedModel {
    /// Assembles a model without checking it. Use [`Self::validate`] to get
    /// the list of violated invariants.
    pub fn from_parts(weights: Vec<u32>, mut layers: Vec<MonomialLayer>, remainders: RemainderSpec) -> Self {
        layers.sort_by_key(|l| l.index);
        StratifiedModel {
            weights: WeightVector::new(weights),
            layers,
            remainders,
        }
    }

    pub fn new(weights: Vec<u32>, layers: Vec<MonomialLayer>, remainders: RemainderSpec) -> Result<Self> {
        let m = Self::from_parts(weights, layers, remainders);
        let report = m.validate();
        if report.is_ok() {
            Ok(m)
        } else {
            Err(Error::InvalidModel(report))
        }
    }

    /// The Heisenberg group: `n = 3`, `a_3 = x1`.
    pub fn heisenberg() -> Self {
        Self::from_parts(vec![1, 1, 2], vec![MonomialLayer::new(3, 0, 0)], RemainderSpec::empty())
    }

    /// Engel-type structure: `n = 4`, `a_3 = x1`, `a_4 = x1^2`.
    pub fn engel() -> Self {
        Self::from_parts(
            vec![1, 1, 2, 3],
            vec![MonomialLayer::new(3, 0, 0), MonomialLayer::new(4, 1, 0)],
            RemainderSpec::empty(),
        )
    }

    pub fn with_remainders(mut self, remainders: RemainderSpec) -> Self {
        self.remainders = remainders;
        self
    }

    pub fn dim(&self) -> usize {
        self.weights.dim()
    }

    /// Number of vertical coordinates `n - 2`, which is also the number of
    /// correction devices.
    pub fn vertical_dim(&self) -> usize {
        self.dim().saturating_sub(2)
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn layers(&self) -> &[MonomialLayer] {
        &self.layers
    }

    pub fn remainders(&self) -> &RemainderSpec {
        &self.remainders
    }

    pub fn has_remainders(&self) -> bool {
        !self.remainders.is_empty()
    }

    /// Vertical coordinate indices `3..=n`.
    pub fn vertical_indices(&self) -> std::ops::RangeInclusive<usize> {
        3..=self.dim()
    }

    pub fn weight(&self, i: usize) -> Result<u32> {
        self.check_index(i)?;
        Ok(self.weights.get(i).unwrap_or(0))
    }

    pub fn layer(&self, i: usize) -> Result<&MonomialLayer> {
        self.check_index(i)?;
        self.layers.iter().find(|l| l.index == i).ok_or_else(|| {
            Error::InvalidModel(ValidationReport {
                violations: vec![Violation::MissingLayer { index: i }],
            })
        })
    }

    pub fn remainder(&self, i: usize) -> Option<&BivariatePolynomial> {
        self.remainders.get(i).filter(|p| !p.is_zero())
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i < 3 || i > self.dim() {
            return Err(Error::IndexOutOfRange {
                index: i,
                n: self.dim(),
            });
        }
        Ok(())
    }

    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let n = self.dim();
        let w = self.weights.as_slice();
        if n < 3 {
            violations.push(Violation::DimensionTooSmall { n });
        }
        for (p, &wi) in w.iter().enumerate().take(2) {
            if wi != 1 {
                violations.push(Violation::HorizontalWeight {
                    index: p + 1,
                    weight: wi,
                });
            }
        }
        for i in 3..=n {
            let wi = w[i - 1];
            if wi < 2 {
                violations.push(Violation::LayerWeightTooSmall { index: i, weight: wi });
            }
            if i > 3 && wi < w[i - 2] {
                violations.push(Violation::WeightsDecreasing { index: i });
            }
        }

        let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
        for l in &self.layers {
            if l.index < 3 || l.index > n {
                violations.push(Violation::LayerIndexOutOfRange { index: l.index });
                continue;
            }
            *seen.entry(l.index).or_default() += 1;
            let wi = w[l.index - 1];
            if (l.alpha + l.beta) as i64 != wi as i64 - 2 {
                violations.push(Violation::DegreeMismatch {
                    index: l.index,
                    alpha: l.alpha,
                    beta: l.beta,
                    weight: wi,
                });
            }
        }
        for i in 3..=n {
            match seen.get(&i) {
                None => violations.push(Violation::MissingLayer { index: i }),
                Some(&c) if c > 1 => violations.push(Violation::DuplicateLayer { index: i }),
                _ => {}
            }
        }
        for (a, la) in self.layers.iter().enumerate() {
            for lb in &self.layers[a + 1..] {
                if la.index != lb.index && la.order_key() == lb.order_key() {
                    violations.push(Violation::DuplicatePair {
                        first: la.index,
                        second: lb.index,
                        alpha: la.alpha,
                        beta: la.beta,
                    });
                }
            }
        }

        for (i, poly) in self.remainders.iter() {
            if i < 3 || i > n {
                violations.push(Violation::RemainderIndexOutOfRange { index: i });
                continue;
            }
            let wi = w[i - 1];
            for t in poly.terms() {
                if !t.coeff.is_finite() {
                    violations.push(Violation::NonFiniteCoefficient { index: i });
                } else if t.coeff != 0.0 && t.degree() < wi {
                    violations.push(Violation::RemainderDegree {
                        index: i,
                        a1: t.a1,
                        a2: t.a2,
                        weight: wi,
                    });
                }
            }
        }
        ValidationReport { violations }
    }

    /// `||x|| = Σ |x_i|^(1/w_i)`.
    pub fn pseudo_norm(&self, x: &[f64]) -> Result<f64> {
        self.check_len(x)?;
        Ok(x.iter()
            .zip(self.weights.as_slice())
            .map(|(xi, &wi)| xi.abs().powf(1.0 / wi as f64))
            .sum())
    }

    /// `δ_λ(x) = (λ^w_1 x_1, ..., λ^w_n x_n)`.
    pub fn dilate(&self, lambda: f64, x: &[f64]) -> Result<Vec<f64>> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(domain("lambda", lambda, "lambda > 0"));
        }
        self.check_len(x)?;
        Ok(x.iter()
            .zip(self.weights.as_slice())
            .map(|(xi, &wi)| lambda.powi(wi as i32) * xi)
            .collect())
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// `a_i(x1, x2) = p_i + r_i`.
    pub fn coefficient(&self, i: usize, x1: f64, x2: f64) -> Result<f64> {
        let p = self.layer(i)?.eval(x1, x2);
        Ok(p + self.remainder(i).map_or(0.0, |r| r.eval(x1, x2)))
    }

    /// Unchecked coefficient evaluation for hot loops; `layer_pos` indexes
    /// [`Self::layers`].
    pub(crate) fn coefficient_at(&self, layer_pos: usize, x1: f64, x2: f64) -> f64 {
        let layer = &self.layers[layer_pos];
        let p = layer.eval(x1, x2);
        match self.remainders.get(layer.index) {
            Some(r) => p + r.eval(x1, x2),
            None => p,
        }
    }

    /// Largest relative residual of `p_i(δ_λ x) = λ^(w_i - 1) p_i(x)` over
    /// the samples.
    pub fn check_homogeneity(&self, i: usize, samples: &[HomogeneitySample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Precondition("homogeneity check needs samples".into()));
        }
        let layer = *self.layer(i)?;
        let w = self.weight(i)?;
        let mut worst: f64 = 0.0;
        for s in samples {
            if !(s.lambda > 0.0) {
                return Err(domain("lambda", s.lambda, "lambda > 0"));
            }
            let lhs = layer.eval(s.lambda * s.x1, s.lambda * s.x2);
            let rhs = s.lambda.powi(w as i32 - 1) * layer.eval(s.x1, s.x2);
            let scale = lhs.abs().max(rhs.abs());
            if scale > 0.0 {
                worst = worst.max((lhs - rhs).abs() / scale);
            }
        }
        Ok(worst)
    }

    /// Measures the constants of the remainder bounds on a grid of the unit
    /// pseudo-ball `{0 < |x1| + |x2| <= 1}`. `radial` and `angular` set the
    /// grid resolution.
    pub fn remainder_constants(&self, radial: usize, angular: usize) -> Vec<RemainderConstants> {
        let mut out = Vec::new();
        for (i, poly) in self.remainders.iter() {
            let Some(w) = self.weights.get(i) else { continue };
            let mut c1: f64 = 0.0;
            let mut c2: f64 = 0.0;
            for r in 1..=radial {
                // geometric radii reach down towards the origin
                let rho = 0.5f64.powf((radial - r) as f64 * 20.0 / radial as f64);
                for a in 0..angular {
                    let u = 4.0 * a as f64 / angular as f64;
                    let (x1, x2) = diamond_point(u, rho);
                    let norm = x1.abs() + x2.abs();
                    c1 = c1.max(poly.eval(x1, x2).abs() / norm.powi(w as i32));
                    c2 = c2.max(poly.d1(x1, x2).abs() / norm.powi(w as i32 - 1));
                }
            }
            out.push(RemainderConstants { index: i, c1, c2 });
        }
        out
    }
}

/// Point on the L1 sphere of radius `rho`, parameterized by `u ∈ [0, 4)`.
fn diamond_point(u: f64, rho: f64) -> (f64, f64) {
    let q = u.floor();
    let s = u - q;
    let (x1, x2) = match q as i32 {
        0 => (1.0 - s, s),
        1 => (-s, 1.0 - s),
        2 => (s - 1.0, -s),
        _ => (s, s - 1.0),
    };
    (rho * x1, rho * x2)
}
