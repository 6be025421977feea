//! Ramification clusters and the fractional exponents they induce.
//!
//! Near an order-`n` branch point of a spectral curve, a small deformation
//! splits the ramification locus into clusters. Locally the Higgs field is
//! modelled block-diagonally, one `K_j x K_j` companion-type block per
//! cluster, with pairwise distinct eigenvalue shifts `lambda_(j)` and
//! `sum K_j = n`. [`ClusterPartition`] records that combinatorial data
//! together with the curve bookkeeping (genus, bundle degree) needed by the
//! stratum-counting identities.
//!
//! The exponents
//!
//! ```text
//! alpha_{K,i} = (2i - (K+1)) / (2K),   i = 1..K
//! ```
//!
//! drive every construction downstream: they are the logarithmic growth
//! rates of the limiting hermitian metric and (halved, negated) the diagonal
//! entries of the limiting unitary connection.

use num_complex::Complex64;
use num_rational::Rational64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from building a [`ClusterPartition`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PartitionError {
    /// A partition must contain at least one block.
    #[error("partition has no blocks")]
    EmptyPartition,
    /// Block sizes must be at least 1.
    #[error("block {0} has size 0")]
    ZeroBlock(usize),
    /// Eigenvalue shifts must be pairwise distinct.
    #[error("blocks {0} and {1} share the eigenvalue shift {2}")]
    DuplicateShift(usize, usize, Complex64),
    /// Local coordinate scales `|f'(0)|` must be positive.
    #[error("block {0} has non-positive coordinate scale")]
    ZeroScale(usize),
    /// Exponent index outside `1..=K`.
    #[error("exponent index {i} outside 1..={k}")]
    IndexOutOfRange { k: usize, i: usize },
    /// The total rank must be at least 2.
    #[error("total rank {0} is below 2")]
    RankTooSmall(usize),
    /// Trace-free partitions need `sum K_j lambda_(j) = 0`.
    #[error("weighted shift sum {0} is nonzero in a trace-free partition")]
    NonzeroTrace(Complex64),
}

/// Exponent `alpha_{K,i} = (2i - (K+1)) / (2K)` as a reduced fraction.
///
/// `i` is 1-based. The exponents are strictly increasing in `i`, lie in
/// `(-1/2, 1/2)`, sum to zero, and satisfy
/// `alpha_{K,i} = -alpha_{K,K+1-i}`.
///
/// # Panics
///
/// Panics if `k == 0` or `i` is outside `1..=k`.
pub fn alpha(k: usize, i: usize) -> Rational64 {
    assert!(k >= 1, "alpha: rank must be at least 1");
    assert!(i >= 1 && i <= k, "alpha: index {i} outside 1..={k}");
    let k = k as i64;
    let i = i as i64;
    Rational64::new(2 * i - (k + 1), 2 * k)
}

/// Non-panicking form of [`alpha`] for validating external input.
pub fn alpha_checked(k: usize, i: usize) -> Result<Rational64, PartitionError> {
    if k < 1 || i < 1 || i > k {
        return Err(PartitionError::IndexOutOfRange { k, i });
    }
    Ok(alpha(k, i))
}

/// All `K` exponents of a block as `f64`, in index order.
pub fn alpha_row(k: usize) -> Vec<f64> {
    (1..=k).map(|i| rational_to_f64(alpha(k, i))).collect()
}

/// Exact rational to `f64`; exponents here have tiny denominators, so the
/// conversion is exact up to one rounding.
pub fn rational_to_f64(q: Rational64) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

/// One cluster: block size, eigenvalue shift, and the modulus of the local
/// coordinate derivative `|f'(0)|` relating the cluster coordinate to the
/// ambient one.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterBlock {
    /// Block size `K_j >= 1`.
    pub k: usize,
    /// Eigenvalue shift `lambda_(j)`; pairwise distinct across blocks.
    pub lambda: Complex64,
    /// `|f'(0)| > 0`; defaults to 1.
    pub f_prime0: f64,
}

impl ClusterBlock {
    /// Block with unit coordinate scale.
    pub fn new(k: usize, lambda: Complex64) -> Self {
        ClusterBlock {
            k,
            lambda,
            f_prime0: 1.0,
        }
    }
}

/// A cluster partition `n = K_1 + ... + K_m` with eigenvalue shifts, plus
/// genus and bundle degree for the bookkeeping identities.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterPartition {
    blocks: Vec<ClusterBlock>,
    genus: usize,
    deg_e: i64,
    trace_free: bool,
}

impl ClusterPartition {
    /// Validates and builds a partition.
    pub fn new(
        blocks: Vec<ClusterBlock>,
        genus: usize,
        deg_e: i64,
    ) -> Result<Self, PartitionError> {
        if blocks.is_empty() {
            return Err(PartitionError::EmptyPartition);
        }
        for (j, b) in blocks.iter().enumerate() {
            if b.k == 0 {
                return Err(PartitionError::ZeroBlock(j));
            }
            if !(b.f_prime0 > 0.0) {
                return Err(PartitionError::ZeroScale(j));
            }
        }
        let n: usize = blocks.iter().map(|b| b.k).sum();
        if n < 2 {
            return Err(PartitionError::RankTooSmall(n));
        }
        for j in 0..blocks.len() {
            for l in (j + 1)..blocks.len() {
                if blocks[j].lambda == blocks[l].lambda {
                    return Err(PartitionError::DuplicateShift(j, l, blocks[j].lambda));
                }
            }
        }
        Ok(ClusterPartition {
            blocks,
            genus,
            deg_e,
            trace_free: false,
        })
    }

    /// As [`ClusterPartition::new`], additionally requiring the SL(n)
    /// normalization `sum K_j lambda_(j) = 0` and recording it.
    pub fn new_trace_free(
        blocks: Vec<ClusterBlock>,
        genus: usize,
        deg_e: i64,
    ) -> Result<Self, PartitionError> {
        let mut p = ClusterPartition::new(blocks, genus, deg_e)?;
        let scale: f64 = p
            .blocks
            .iter()
            .map(|b| b.k as f64 * b.lambda.norm())
            .sum::<f64>();
        let sum: Complex64 = p.blocks.iter().map(|b| b.lambda * b.k as f64).sum();
        if sum.norm() > 1e-12 * (1.0 + scale) {
            return Err(PartitionError::NonzeroTrace(sum));
        }
        p.trace_free = true;
        Ok(p)
    }

    /// Single block of size `k >= 2`, shift 0, genus 2, degree 0.
    pub fn single(k: usize) -> Self {
        ClusterPartition::new_trace_free(
            vec![ClusterBlock::new(k, Complex64::new(0.0, 0.0))],
            2,
            0,
        )
        .expect("single block of rank >= 2 is always valid")
    }

    /// Blocks of the given sizes with shifts `0, 1, 2, ...` (pairwise
    /// distinct by construction), genus 2, degree 0.
    pub fn from_sizes(ks: &[usize]) -> Result<Self, PartitionError> {
        let blocks = ks
            .iter()
            .enumerate()
            .map(|(j, &k)| ClusterBlock::new(k, Complex64::new(j as f64, 0.0)))
            .collect();
        ClusterPartition::new(blocks, 2, 0)
    }

    /// Total rank `n = sum K_j`.
    pub fn n(&self) -> usize {
        self.blocks.iter().map(|b| b.k).sum()
    }

    /// The blocks in order.
    pub fn blocks(&self) -> &[ClusterBlock] {
        &self.blocks
    }

    /// Underlying curve genus.
    pub fn genus(&self) -> usize {
        self.genus
    }

    /// Degree of the underlying bundle.
    pub fn deg_e(&self) -> i64 {
        self.deg_e
    }

    /// Whether the SL(n) normalization `sum K_j lambda_(j) = 0` was checked
    /// at construction.
    pub fn trace_free(&self) -> bool {
        self.trace_free
    }

    /// Distinct block sizes `K_j >= 2` (those needing a Toda solution).
    pub fn toda_ranks(&self) -> Vec<usize> {
        let mut ks: Vec<usize> = self.blocks.iter().map(|b| b.k).filter(|&k| k >= 2).collect();
        ks.sort_unstable();
        ks.dedup();
        ks
    }

    /// Flat list of the `n` exponents `alpha_{K_j,i}` in block order.
    pub fn alpha_flat(&self) -> Vec<Rational64> {
        let mut out = Vec::with_capacity(self.n());
        for b in &self.blocks {
            for i in 1..=b.k {
                out.push(alpha(b.k, i));
            }
        }
        out
    }

    /// Block index and within-block 1-based index for a flat entry index
    /// (0-based over `0..n`).
    pub fn locate(&self, entry: usize) -> Option<(usize, usize)> {
        let mut offset = 0;
        for (j, b) in self.blocks.iter().enumerate() {
            if entry < offset + b.k {
                return Some((j, entry - offset + 1));
            }
            offset += b.k;
        }
        None
    }

    /// Serializable snapshot.
    pub fn to_record(&self) -> PartitionRecord {
        PartitionRecord {
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockRecord {
                    k: b.k,
                    lambda: [b.lambda.re, b.lambda.im],
                    f_prime0: b.f_prime0,
                })
                .collect(),
            genus: self.genus,
            deg_e: self.deg_e,
            trace_free: self.trace_free,
        }
    }

    /// Rebuilds from a snapshot, re-running all validation.
    pub fn from_record(rec: PartitionRecord) -> Result<Self, PartitionError> {
        let blocks = rec
            .blocks
            .into_iter()
            .map(|b| ClusterBlock {
                k: b.k,
                lambda: Complex64::new(b.lambda[0], b.lambda[1]),
                f_prime0: b.f_prime0,
            })
            .collect();
        if rec.trace_free {
            ClusterPartition::new_trace_free(blocks, rec.genus, rec.deg_e)
        } else {
            ClusterPartition::new(blocks, rec.genus, rec.deg_e)
        }
    }
}

/// JSON form of one block: `{ "k", "lambda": [re, im], "f_prime0" }`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockRecord {
    pub k: usize,
    pub lambda: [f64; 2],
    pub f_prime0: f64,
}

/// JSON form of a partition; shifts are stored as `[re, im]` pairs so the
/// schema has no nested complex encoding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PartitionRecord {
    pub blocks: Vec<BlockRecord>,
    pub genus: usize,
    pub deg_e: i64,
    #[serde(default)]
    pub trace_free: bool,
}
