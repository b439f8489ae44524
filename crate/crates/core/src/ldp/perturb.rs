use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use super::{BucketDictionary, MechanismParams};
use crate::encoding::{generate_similar_bf, BloomFilter};
use crate::error::{invalid, Error, Result};

/// The filters a client emits for one item.
///
/// The bucket and real-item bookkeeping never leaves the client; only
/// `filters` is segmented and sent.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedReport {
    filters: Vec<BloomFilter>,
    buckets: Vec<usize>,
    real_index: Option<usize>,
}

impl PerturbedReport {
    pub fn filters(&self) -> &[BloomFilter] {
        &self.filters
    }

    pub fn into_filters(self) -> Vec<BloomFilter> {
        self.filters
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    /// Bucket that produced each filter, aligned with `filters`.
    #[doc(hidden)]
    pub fn buckets(&self) -> &[usize] {
        &self.buckets
    }

    /// Position of the filter derived from the real item, if it survived.
    #[doc(hidden)]
    pub fn real_index(&self) -> Option<usize> {
        self.real_index
    }
}

/// Randomized response over the one-hot bucket vector of `x_bf`.
///
/// The "on" coordinates are kept as a set of indices: the real bucket stays
/// on with probability `1 - p`, and each of the other `B - 1` buckets turns
/// on with probability `p`. The number of such buckets is drawn from
/// `Binomial(B - 1, p)` and their identities uniformly, which is the same
/// distribution as `B - 1` independent coin flips.
pub fn perturb<R: Rng + ?Sized>(
    x_bf: &BloomFilter,
    params: &MechanismParams,
    dict: &BucketDictionary,
    rng: &mut R,
) -> Result<PerturbedReport> {
    if x_bf.len() != params.l || dict.l() != params.l {
        return Err(invalid(format!(
            "filter length {} / dictionary length {} does not match l = {}",
            x_bf.len(),
            dict.l(),
            params.l
        )));
    }
    if dict.bucket_count() != params.buckets {
        return Err(invalid(format!(
            "dictionary has {} buckets, mechanism expects {}",
            dict.bucket_count(),
            params.buckets
        )));
    }
    let p = params.p_flip()?;
    let b = params.buckets;
    let real = dict.bucket_of(x_bf);

    let others = if p <= 0.0 || b == 1 {
        0
    } else if p >= 1.0 {
        b - 1
    } else {
        Binomial::new((b - 1) as u64, p)
            .expect("valid binomial parameters")
            .sample(rng) as usize
    };

    let mut entries: Vec<(usize, BloomFilter, bool)> = Vec::with_capacity(others + 1);
    for idx in index::sample(rng, b - 1, others) {
        let bucket = if idx >= real { idx + 1 } else { idx };
        let filter = dict
            .bucket(bucket)
            .choose(rng)
            .ok_or_else(|| Error::CorruptDictionary(format!("bucket {bucket} is empty")))?;
        entries.push((bucket, filter.clone(), false));
    }
    if !rng.random_bool(p.clamp(0.0, 1.0)) {
        entries.push((
            real,
            generate_similar_bf(x_bf, params.copy_threshold(), rng)?,
            true,
        ));
    }
    entries.shuffle(rng);

    let real_index = entries.iter().position(|e| e.2);
    let (buckets, filters) = entries.into_iter().map(|(b, f, _)| (b, f)).unzip();
    Ok(PerturbedReport {
        filters,
        buckets,
        real_index,
    })
}
