use rand::seq::index::sample;
use rand::Rng;

use super::{DataError, Dataset, Split};

/// One n-way k-shot task. Slot `c` stands for dataset class `classes[c]`;
/// support and query hold sample indices, grouped by slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    pub n_way: usize,
    pub k_shot: usize,
    pub q_query: usize,
    pub classes: Vec<u32>,
    pub support: Vec<usize>,
    pub query: Vec<usize>,
    pub query_slots: Vec<usize>,
}

impl Episode {
    /// Support indices of slot `c`.
    pub fn support_of(&self, c: usize) -> &[usize] {
        &self.support[c * self.k_shot..(c + 1) * self.k_shot]
    }
}

pub fn sample_episode<R: Rng + ?Sized>(
    dataset: &Dataset,
    split: Split,
    n_way: usize,
    k_shot: usize,
    q_query: usize,
    rng: &mut R,
) -> Result<Episode, DataError> {
    if n_way == 0 || k_shot == 0 {
        return Err(DataError::Argument("n_way and k_shot must be positive".into()));
    }
    let pool = dataset.split.classes(split);
    if pool.len() < n_way {
        return Err(DataError::InsufficientClasses {
            need: n_way,
            have: pool.len(),
        });
    }
    let need = k_shot + q_query;
    let classes: Vec<u32> = sample(rng, pool.len(), n_way).iter().map(|i| pool[i]).collect();
    let mut support = Vec::with_capacity(n_way * k_shot);
    let mut query = Vec::with_capacity(n_way * q_query);
    let mut query_slots = Vec::with_capacity(n_way * q_query);
    for (slot, &class) in classes.iter().enumerate() {
        let members = dataset.class_samples(class);
        if members.len() < need {
            return Err(DataError::InsufficientSamples {
                class,
                need,
                have: members.len(),
            });
        }
        let picked = sample(rng, members.len(), need);
        for (j, i) in picked.iter().enumerate() {
            if j < k_shot {
                support.push(members[i]);
            } else {
                query.push(members[i]);
                query_slots.push(slot);
            }
        }
    }
    Ok(Episode {
        n_way,
        k_shot,
        q_query,
        classes,
        support,
        query,
        query_slots,
    })
}
