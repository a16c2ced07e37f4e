//! Monte Carlo collision experiments for lookup functions on pairs of
//! sentences that share a fraction of their tokens.
//!
//! Token embeddings are independent random unit vectors. A sentence is
//! summarised by the mean of its token embeddings, normalised to unit length
//! before hashing. Sentence-level schemes (hyperplane and spherical LSH)
//! collide when both summaries land in the same bucket. Token-ID collides
//! when a random token of the first sentence also occurs in the second, and
//! min-hash when both token sets hash to the same member.
//!
//! Every trial draws its own generator from `(seed, trial)`, so estimates do
//! not depend on how trials are spread over threads.

use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::memory::{default_projections, mix64, HyperplaneLsh, MinHash};

/// Two-sided 99% normal quantile.
pub const Z_99: f64 = 2.575_829_303_548_901;

/// Two equal-length sentences. Token ids `0..shared` occur in both; every
/// other id occurs in exactly one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct SentencePair {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub first_ids: Vec<usize>,
    pub second_ids: Vec<usize>,
    pub shared: usize,
}

fn unit_vector<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

fn pair_with_shared<R: Rng + ?Sized>(l: usize, shared: usize, d: usize, rng: &mut R) -> SentencePair {
    let common: Vec<Vec<f64>> = (0..shared).map(|_| unit_vector(d, rng)).collect();
    let own = l - shared;
    let mut first = common.clone();
    first.extend((0..own).map(|_| unit_vector(d, rng)));
    let mut second = common;
    second.extend((0..own).map(|_| unit_vector(d, rng)));
    let first_ids = (0..l).collect();
    let second_ids = (0..shared).chain(l..l + own).collect();
    SentencePair {
        first,
        second,
        first_ids,
        second_ids,
        shared,
    }
}

fn shared_count(l: usize, f: f64) -> Option<usize> {
    let target = f * l as f64;
    let rounded = target.round();
    ((target - rounded).abs() <= 1e-9).then_some(rounded as usize)
}

fn check_pair_args(l: usize, f: f64, d: usize) -> Result<()> {
    if l == 0 || d < 2 || !(0.0..=1.0).contains(&f) {
        return Err(Error::InvalidArgument(format!(
            "sentence pair needs l >= 1, d >= 2 and f in [0, 1] (got l={l}, d={d}, f={f})"
        )));
    }
    Ok(())
}

/// Pair of length-`l` sentences sharing exactly `f·l` tokens, which must be
/// an integer.
pub fn gen_sentence_pair(l: usize, f: f64, d: usize, seed: u64) -> Result<SentencePair> {
    check_pair_args(l, f, d)?;
    let shared = shared_count(l, f)
        .ok_or_else(|| Error::InvalidArgument(format!("f·l = {} is not an integer", f * l as f64)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(pair_with_shared(l, shared, d, &mut rng))
}

/// Arithmetic mean of the token embeddings.
pub fn mix(sentence: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = sentence
        .first()
        .ok_or_else(|| Error::InvalidArgument("mix of an empty sentence".into()))?;
    let mut acc = vec![0.0; first.len()];
    for v in sentence {
        acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
    }
    let n = sentence.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

fn normalised(v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm == 0.0 {
        v
    } else {
        v.into_iter().map(|a| a / norm).collect()
    }
}

/// Lookup function under test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Grid hashing with `⌈log₂ n⌉` projections of the given bucket width.
    Hyperplane { width: f64 },
    /// Nearest of `n` random unit centres (top-1 softmax with a random router).
    Spherical,
    /// A random token of the first sentence collides if the second contains it.
    TokenId,
    /// Min-hash of the two token sets.
    MinHash,
}

impl Scheme {
    fn stream(self) -> u64 {
        mix64(match self {
            Scheme::Hyperplane { width } => width.to_bits(),
            Scheme::Spherical => 1,
            Scheme::TokenId => 2,
            Scheme::MinHash => 3,
        })
    }

    fn needs_embeddings(self) -> bool {
        matches!(self, Scheme::Hyperplane { .. } | Scheme::Spherical)
    }

    pub fn name(self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Hyperplane { width } => write!(f, "hyperplane(w={width})"),
            Scheme::Spherical => f.write_str("spherical"),
            Scheme::TokenId => f.write_str("token_id"),
            Scheme::MinHash => f.write_str("minhash"),
        }
    }
}

/// Experiment size and seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CollisionSetup {
    /// Number of buckets.
    pub n: usize,
    /// Sentence length.
    pub l: usize,
    /// Overlap fraction.
    pub f: f64,
    /// Embedding dimension.
    pub d: usize,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CollisionEstimate {
    pub scheme: Scheme,
    pub n: usize,
    pub l: usize,
    pub f: f64,
    pub d: usize,
    pub trials: usize,
    pub hits: usize,
    pub probability: f64,
    /// `√(p(1 − p)/trials)`.
    pub stderr: f64,
}

impl CollisionEstimate {
    fn new(scheme: Scheme, s: &CollisionSetup, hits: usize) -> Self {
        let p = hits as f64 / s.trials as f64;
        CollisionEstimate {
            scheme,
            n: s.n,
            l: s.l,
            f: s.f,
            d: s.d,
            trials: s.trials,
            hits,
            probability: p,
            stderr: (p * (1.0 - p) / s.trials as f64).sqrt(),
        }
    }

    /// 99% normal-approximation interval, clipped to `[0, 1]`.
    pub fn ci99(&self) -> (f64, f64) {
        let h = Z_99 * self.stderr;
        ((self.probability - h).max(0.0), (self.probability + h).min(1.0))
    }
}

fn trial_rng(seed: u64, trial: usize, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(trial as u64)));
    rng.set_stream(stream);
    rng
}

/// Nearest of `n` uniformly random unit centres for two unit vectors with
/// inner product `cos`, sampled exactly in the plane they span: a centre's
/// two in-plane coordinates are standard normals and the squared norm of its
/// remaining `d − 2` coordinates is chi-squared.
fn spherical_buckets<R: Rng + ?Sized>(cos: f64, n: usize, d: usize, rng: &mut R) -> (usize, usize) {
    let cos = cos.clamp(-1.0, 1.0);
    let sin = (1.0 - cos * cos).sqrt();
    let rest = (d > 2).then(|| ChiSquared::new((d - 2) as f64).expect("positive degrees of freedom"));
    let (mut best_a, mut best_b) = ((f64::NEG_INFINITY, 0), (f64::NEG_INFINITY, 0));
    for i in 0..n {
        let g1: f64 = StandardNormal.sample(rng);
        let g2: f64 = StandardNormal.sample(rng);
        let q = rest.as_ref().map_or(0.0, |c| c.sample(rng));
        let inv = 1.0 / (g1 * g1 + g2 * g2 + q).sqrt();
        let a = g1 * inv;
        let b = (cos * g1 + sin * g2) * inv;
        if a > best_a.0 {
            best_a = (a, i);
        }
        if b > best_b.0 {
            best_b = (b, i);
        }
    }
    (best_a.1, best_b.1)
}

/// Nearest-centre buckets computed literally: top-1 softmax routing with an
/// `[n, d]` router of random unit rows.
pub fn spherical_buckets_literal<R: Rng + ?Sized>(a: &[f64], b: &[f64], n: usize, rng: &mut R) -> (usize, usize) {
    use crate::memory::{softmax_route, RouterParams};
    use crate::tensor::Tensor;
    let d = a.len();
    let rows: Vec<f64> = (0..n).flat_map(|_| unit_vector(d, rng)).collect();
    let router = RouterParams::new(Tensor::new(vec![n, d], rows).expect("n·d entries"), 1, 0.0).expect("valid router");
    let pick = |x: &[f64], rng: &mut R| softmax_route(x, &router, false, rng).expect("matching width").indices[0];
    (pick(a, rng), pick(b, rng))
}

fn one_trial(schemes: &[Scheme], s: &CollisionSetup, trial: usize) -> Vec<bool> {
    let mut rng = trial_rng(s.seed, trial, 0);
    let shared = match shared_count(s.l, s.f) {
        Some(k) => k,
        None => {
            let target = s.f * s.l as f64;
            let base = target.floor();
            base as usize + usize::from(rng.random::<f64>() < target - base)
        }
    };
    let geometric = schemes.iter().any(|sc| sc.needs_embeddings());
    let pair = geometric.then(|| pair_with_shared(s.l, shared, s.d, &mut rng));
    let mixes = pair.as_ref().map(|p| {
        let a = normalised(mix(&p.first).expect("l >= 1"));
        let b = normalised(mix(&p.second).expect("l >= 1"));
        (a, b)
    });

    schemes
        .iter()
        .map(|&scheme| {
            let mut h = trial_rng(s.seed, trial, scheme.stream());
            match scheme {
                Scheme::TokenId => h.random_range(0..s.l) < shared,
                Scheme::MinHash => {
                    let own = s.l - shared;
                    let first: Vec<usize> = (0..s.l).collect();
                    let second: Vec<usize> = (0..shared).chain(s.l..s.l + own).collect();
                    let mh = MinHash { seed: h.random() };
                    mh.lookup(&first).expect("l >= 1") == mh.lookup(&second).expect("l >= 1")
                }
                Scheme::Spherical => {
                    let (a, b) = mixes.as_ref().expect("embeddings generated");
                    let cos = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    let (ia, ib) = spherical_buckets(cos, s.n, s.d, &mut h);
                    ia == ib
                }
                Scheme::Hyperplane { width } => {
                    let (a, b) = mixes.as_ref().expect("embeddings generated");
                    let lsh = HyperplaneLsh::new(s.d, s.n, default_projections(s.n), width, &mut h)
                        .expect("validated setup");
                    lsh.lookup(a) == lsh.lookup(b)
                }
            }
        })
        .collect()
}

fn check_setup(schemes: &[Scheme], s: &CollisionSetup) -> Result<()> {
    check_pair_args(s.l, s.f, s.d)?;
    if s.trials == 0 || s.n == 0 {
        return Err(Error::InvalidArgument("trials and n must be positive".into()));
    }
    for sc in schemes {
        if let Scheme::Hyperplane { width } = sc {
            if !(*width > 0.0 && width.is_finite()) {
                return Err(Error::InvalidArgument(format!("hyperplane width must be positive, got {width}")));
            }
        }
    }
    Ok(())
}

/// Estimate several schemes on the same sentence pairs.
///
/// When `f·l` is not an integer, each pair shares `⌊f·l⌋` or `⌈f·l⌉` tokens
/// with the probabilities that make the expected overlap exactly `f·l`.
pub fn estimate_many(schemes: &[Scheme], s: &CollisionSetup) -> Result<Vec<CollisionEstimate>> {
    check_setup(schemes, s)?;
    let hits = (0..s.trials)
        .into_par_iter()
        .map(|t| one_trial(schemes, s, t).into_iter().map(usize::from).collect::<Vec<_>>())
        .reduce(
            || vec![0; schemes.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(schemes
        .iter()
        .zip(hits)
        .map(|(&sc, h)| CollisionEstimate::new(sc, s, h))
        .collect())
}

pub fn estimate_collision(scheme: Scheme, s: &CollisionSetup) -> Result<CollisionEstimate> {
    Ok(estimate_many(&[scheme], s)?.remove(0))
}

/// Default hyperplane bucket widths swept by [`verify_ordering`].
pub const HYPERPLANE_WIDTHS: [f64; 3] = [0.5, 1.0, 2.0];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrderingReport {
    pub token_id: CollisionEstimate,
    pub spherical: CollisionEstimate,
    /// One estimate per swept width.
    pub hyperplane: Vec<CollisionEstimate>,
    /// Index into `hyperplane` of the width with the highest collision rate.
    pub best_hyperplane: usize,
    pub minhash: CollisionEstimate,
    /// Token-ID above spherical above the best hyperplane width, each with
    /// disjoint 99% intervals.
    pub ordered: bool,
}

impl OrderingReport {
    pub fn best(&self) -> &CollisionEstimate {
        &self.hyperplane[self.best_hyperplane]
    }

    pub fn all(&self) -> Vec<&CollisionEstimate> {
        let mut v = vec![&self.token_id, &self.spherical];
        v.extend(&self.hyperplane);
        v.push(&self.minhash);
        v
    }
}

/// `a` above `b` with non-overlapping 99% intervals.
pub fn clearly_above(a: &CollisionEstimate, b: &CollisionEstimate) -> bool {
    a.ci99().0 > b.ci99().1
}

/// Run every scheme on shared pairs and check Token-ID ≥ spherical ≥ hyperplane.
pub fn verify_ordering(s: &CollisionSetup, widths: &[f64]) -> Result<OrderingReport> {
    if widths.is_empty() {
        return Err(Error::InvalidArgument("at least one hyperplane width is required".into()));
    }
    let mut schemes = vec![Scheme::TokenId, Scheme::Spherical, Scheme::MinHash];
    schemes.extend(widths.iter().map(|&width| Scheme::Hyperplane { width }));
    let mut est = estimate_many(&schemes, s)?;
    let hyperplane = est.split_off(3);
    let minhash = est.pop().expect("three estimates");
    let spherical = est.pop().expect("three estimates");
    let token_id = est.pop().expect("three estimates");
    let best_hyperplane = (0..hyperplane.len())
        .max_by(|&a, &b| hyperplane[a].probability.total_cmp(&hyperplane[b].probability).then(b.cmp(&a)))
        .expect("non-empty");
    let ordered = clearly_above(&token_id, &spherical) && clearly_above(&spherical, &hyperplane[best_hyperplane]);
    Ok(OrderingReport {
        token_id,
        spherical,
        hyperplane,
        best_hyperplane,
        minhash,
        ordered,
    })
}

/// Exact Jaccard similarity of two equal-length token sets sharing `f·l` tokens.
pub fn jaccard(f: f64) -> f64 {
    f / (2.0 - f)
}

/// Reference quantities of an LSH family estimated from a near and a far pair.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoryConstants {
    /// Distance of near pairs.
    pub r1: f64,
    /// Distance of far pairs.
    pub r2: f64,
    /// Distance gap `r2 / r1`.
    pub c: f64,
    /// Collision probability of near pairs.
    pub p1: f64,
    /// Collision probability of far pairs.
    pub p2: f64,
    /// `ln(1/p1) / ln(1/p2)`.
    pub rho: f64,
}

impl TheoryConstants {
    /// Unit summaries with overlap `f` sit at distance `√(2(1 − f))`; unrelated
    /// ones at `√2`. Returns `None` for `f ≥ 1` or degenerate probabilities.
    pub fn from_estimates(f: f64, near: &CollisionEstimate, far: &CollisionEstimate) -> Option<Self> {
        let (p1, p2) = (near.probability, far.probability);
        if f >= 1.0 || !(0.0 < p1 && p1 < 1.0 && 0.0 < p2 && p2 < 1.0) {
            return None;
        }
        let r1 = (2.0 * (1.0 - f)).sqrt();
        let r2 = 2f64.sqrt();
        Some(TheoryConstants {
            r1,
            r2,
            c: r2 / r1,
            p1,
            p2,
            rho: (1.0 / p1).ln() / (1.0 / p2).ln(),
        })
    }
}

/// Least-squares slope of `ln p` against `ln n`; points with `p == 0` are skipped.
pub fn loglog_slope(points: &[(usize, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, p)| *p > 0.0)
        .map(|&(n, p)| ((n as f64).ln(), p.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / k, pts.iter().map(|p| p.1).sum::<f64>() / k);
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub const CSV_HEADER: &str = "scheme,n,l,f,d,trials,probability,stderr,ci_low,ci_high";

/// Write estimates as CSV with a header row.
pub fn write_csv<W: Write>(mut out: W, rows: &[&CollisionEstimate]) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for e in rows {
        let (lo, hi) = e.ci99();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            e.scheme, e.n, e.l, e.f, e.d, e.trials, e.probability, e.stderr, lo, hi
        )?;
    }
    Ok(())
}
