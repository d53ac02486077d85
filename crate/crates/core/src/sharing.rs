//! Shamir secret sharing over a prime field and the share-local linear
//! operations nodes evaluate.
//!
//! Sharing is full-threshold: `N` shares, polynomial degree `N - 1`, all
//! shares needed to reconstruct. Signed integers are encoded by reduction
//! mod `p` and decoded by centering into `[-(p-1)/2, (p-1)/2]`.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// 2^61 - 1.
pub const MERSENNE61: u64 = (1 << 61) - 1;

/// Element of the prime field `Z/PZ`. `P` must be an odd prime below 2^63.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Fp<const P: u64>(u64);

/// The field used on the wire.
pub type Fe = Fp<MERSENNE61>;

impl<const P: u64> Fp<P> {
    pub const MODULUS: u64 = P;
    /// Largest magnitude a signed value may have to survive encoding.
    pub const MAX_ABS: u64 = (P - 1) / 2;

    pub const fn zero() -> Self {
        Fp(0)
    }

    pub const fn one() -> Self {
        Fp(1)
    }

    pub fn new(v: u64) -> Self {
        Fp(v % P)
    }

    pub fn value(self) -> u64 {
        self.0
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Fp(rng.gen_range(0..P))
    }

    /// Encodes a signed integer; `None` if `|v| > (p-1)/2`.
    pub fn encode(v: i128) -> Option<Self> {
        if v.unsigned_abs() > Self::MAX_ABS as u128 {
            return None;
        }
        Some(Fp(v.rem_euclid(P as i128) as u64))
    }

    /// `v mod p` for any integer.
    pub fn reduce(v: i128) -> Self {
        Fp(v.rem_euclid(P as i128) as u64)
    }

    /// Inverse of [`Fp::encode`].
    pub fn decode(self) -> i128 {
        if self.0 > Self::MAX_ABS {
            self.0 as i128 - P as i128
        } else {
            self.0 as i128
        }
    }

    pub fn pow(self, mut e: u64) -> Self {
        let mut base = self;
        let mut acc = Self::one();
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            e >>= 1;
        }
        acc
    }

    /// Multiplicative inverse; `None` for zero.
    pub fn inv(self) -> Option<Self> {
        (self.0 != 0).then(|| self.pow(P - 2))
    }
}

impl<const P: u64> fmt::Debug for Fp<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl<const P: u64> fmt::Display for Fp<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl<const P: u64> Add for Fp<P> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let s = self.0 + rhs.0;
        Fp(if s >= P { s - P } else { s })
    }
}

impl<const P: u64> AddAssign for Fp<P> {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl<const P: u64> Sub for Fp<P> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Fp(if self.0 >= rhs.0 { self.0 - rhs.0 } else { self.0 + P - rhs.0 })
    }
}

impl<const P: u64> Neg for Fp<P> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::zero() - self
    }
}

impl<const P: u64> Mul for Fp<P> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Fp((self.0 as u128 * rhs.0 as u128 % P as u128) as u64)
    }
}

impl<const P: u64> std::iter::Sum for Fp<P> {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::zero(), Add::add)
    }
}

impl<const P: u64> FromStr for Fp<P> {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v: u64 = s.parse().map_err(|e| format!("field element `{s}`: {e}"))?;
        if v >= P {
            return Err(format!("field element {v} is not below {P}"));
        }
        Ok(Fp(v))
    }
}

/// Decimal string on the wire, so values above 2^53 survive JSON tooling.
impl<const P: u64> Serialize for Fp<P> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.to_string())
    }
}

impl<'de, const P: u64> Deserialize<'de> for Fp<P> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Share<const P: u64 = MERSENNE61> {
    /// Evaluation point, the node index (1-based).
    pub x: u32,
    pub y: Fp<P>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SharingError {
    #[error("secret {0} does not fit the field")]
    SecretOutOfRange(i128),
    #[error("need {needed} shares, got {got}")]
    InsufficientShares { needed: usize, got: usize },
    #[error("evaluation point {0} appears more than once")]
    DuplicateEvaluationPoint(u32),
    #[error("evaluation point {x} is outside 1..={n}")]
    InvalidEvaluationPoint { x: u32, n: usize },
    #[error("got {got} shares for {n} nodes")]
    TooManyShares { n: usize, got: usize },
    #[error("at least 2 nodes are required, got {0}")]
    TooFewNodes(usize),
    #[error("{records} records but {weights} weights")]
    LengthMismatch { records: usize, weights: usize },
    #[error("result may exceed the field's signed range")]
    ResultOutOfRange,
}

/// Node count; the threshold always equals it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharingParams {
    n: usize,
}

impl SharingParams {
    pub fn new(n: usize) -> Result<Self, SharingError> {
        if n < 2 {
            return Err(SharingError::TooFewNodes(n));
        }
        Ok(SharingParams { n })
    }

    pub fn nodes(&self) -> usize {
        self.n
    }

    pub fn threshold(&self) -> usize {
        self.n
    }
}

/// Evaluations at `x = 1..=N` of a random degree `N - 1` polynomial whose
/// constant term encodes `secret`.
pub fn share<const P: u64, R: Rng + ?Sized>(
    secret: i128,
    params: SharingParams,
    rng: &mut R,
) -> Result<Vec<Share<P>>, SharingError> {
    let constant = Fp::<P>::encode(secret).ok_or(SharingError::SecretOutOfRange(secret))?;
    let mut coeffs = Vec::with_capacity(params.n);
    coeffs.push(constant);
    coeffs.extend((1..params.n).map(|_| Fp::random(rng)));
    Ok((1..=params.n as u32)
        .map(|x| {
            let xf = Fp::<P>::new(x as u64);
            let y = coeffs.iter().rev().fold(Fp::zero(), |acc, c| acc * xf + *c);
            Share { x, y }
        })
        .collect())
}

/// Lagrange interpolation at 0 over exactly `N` distinct points, decoded
/// by centering.
pub fn reconstruct<const P: u64>(shares: &[Share<P>], params: SharingParams) -> Result<i128, SharingError> {
    let n = params.n;
    let mut seen = std::collections::HashSet::new();
    for s in shares {
        if s.x == 0 || s.x as usize > n {
            return Err(SharingError::InvalidEvaluationPoint { x: s.x, n });
        }
        if !seen.insert(s.x) {
            return Err(SharingError::DuplicateEvaluationPoint(s.x));
        }
    }
    if shares.len() < n {
        return Err(SharingError::InsufficientShares {
            needed: n,
            got: shares.len(),
        });
    }
    if shares.len() > n {
        return Err(SharingError::TooManyShares { n, got: shares.len() });
    }
    let mut acc = Fp::<P>::zero();
    for (i, si) in shares.iter().enumerate() {
        let xi = Fp::<P>::new(si.x as u64);
        let mut num = Fp::one();
        let mut den = Fp::one();
        for (j, sj) in shares.iter().enumerate() {
            if i != j {
                let xj = Fp::<P>::new(sj.x as u64);
                num = num * xj;
                den = den * (xj - xi);
            }
        }
        acc += si.y * num * den.inv().expect("distinct points");
    }
    Ok(acc.decode())
}

pub fn local_sum<const P: u64>(records: &[Fp<P>]) -> Fp<P> {
    records.iter().copied().sum()
}

/// `Σ w_i · r_i` over shares with public weights. `record_bound` is the
/// seller-declared maximum `|v|` of any plaintext record; the result must
/// provably stay inside the signed range.
pub fn local_dot<const P: u64>(records: &[Fp<P>], weights: &[i64], record_bound: u64) -> Result<Fp<P>, SharingError> {
    if records.len() != weights.len() {
        return Err(SharingError::LengthMismatch {
            records: records.len(),
            weights: weights.len(),
        });
    }
    check_range::<P>(weights.iter().map(|w| (w.unsigned_abs() as u128, record_bound)))?;
    Ok(records
        .iter()
        .zip(weights)
        .map(|(r, w)| *r * Fp::reduce(*w as i128))
        .sum())
}

/// Fails unless `Σ |w_i| · bound_i ≤ (p-1)/2` over `(|w_i|, bound_i)`
/// pairs, where `bound_i` bounds the magnitude of record `i`. A sum is the
/// case of all weights equal to one.
pub fn check_range<const P: u64>(terms: impl IntoIterator<Item = (u128, u64)>) -> Result<(), SharingError> {
    let mut total: u128 = 0;
    for (w, bound) in terms {
        total = w
            .checked_mul(bound as u128)
            .and_then(|t| t.checked_add(total))
            .ok_or(SharingError::ResultOutOfRange)?;
        if total > Fp::<P>::MAX_ABS as u128 {
            return Err(SharingError::ResultOutOfRange);
        }
    }
    Ok(())
}
