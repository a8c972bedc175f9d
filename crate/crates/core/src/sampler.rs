//! Identity-balanced `P × Q` batch sampling.

use std::collections::BTreeMap;

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::Rng;

use crate::data::{Sample, Split};
use crate::error::{Error, Result};

/// Training-sample indices grouped by identity, in identity order.
#[derive(Debug, Clone)]
pub struct IdentityIndex {
    groups: Vec<(usize, Vec<usize>)>,
}

impl IdentityIndex {
    /// Indexes the training split of `samples`.
    pub fn from_train(samples: &[Sample]) -> Self {
        let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, s) in samples.iter().enumerate().filter(|(_, s)| s.split == Split::Train) {
            map.entry(s.identity).or_default().push(i);
        }
        Self { groups: map.into_iter().collect() }
    }

    pub fn num_identities(&self) -> usize {
        self.groups.len()
    }

    pub fn num_samples(&self) -> usize {
        self.groups.iter().map(|(_, g)| g.len()).sum()
    }
}

/// Draws `p` distinct identities and `q` samples of each. An identity with
/// fewer than `q` samples contributes all of them once and fills the rest by
/// drawing with replacement.
pub fn pk_sample<R: Rng + ?Sized>(index: &IdentityIndex, p: usize, q: usize, rng: &mut R) -> Result<Vec<usize>> {
    if p > index.num_identities() {
        return Err(Error::TooFewIdentities { needed: p, found: index.num_identities() });
    }
    let mut batch = Vec::with_capacity(p * q);
    for g in index::sample(rng, index.num_identities(), p) {
        let members = &index.groups[g].1;
        if members.len() >= q {
            batch.extend(index::sample(rng, members.len(), q).into_iter().map(|i| members[i]));
        } else {
            let mut picks = members.clone();
            while picks.len() < q {
                picks.push(*members.choose(rng).expect("identity has samples"));
            }
            picks.shuffle(rng);
            batch.extend(picks);
        }
    }
    Ok(batch)
}
