use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::schema::{EntityId, LinkedPairSet, Provenance, RecordSet};

/// Two record sources plus the true links between them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkedDataset {
    pub a: RecordSet,
    pub b: RecordSet,
    pub links: LinkedPairSet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits {
    pub train: LinkedDataset,
    pub validation: LinkedDataset,
    pub test: LinkedDataset,
}

impl Splits {
    pub fn iter(&self) -> impl Iterator<Item = &LinkedDataset> {
        [&self.train, &self.validation, &self.test].into_iter()
    }
}

/// Split a linked dataset into train/validation/test.
///
/// Linked records move together: links are grouped into connected components
/// over the bipartite link graph and whole components are assigned to one
/// split. Unlinked records are shuffled and cut with the same ratios.
pub fn partition(data: &LinkedDataset, ratios: [f64; 3], seed: u64) -> Result<Splits> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::config("ratios", "ratios must be finite and non-negative"));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::config("ratios", format!("ratios sum to {total}, expected 1")));
    }
    if data.links.is_empty() {
        return Err(Error::EmptyLinks);
    }
    data.links.validate(&data.a, &data.b)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let components = link_components(&data.links);
    let mut order: Vec<usize> = (0..components.len()).collect();
    order.shuffle(&mut rng);

    let n_links = data.links.len();
    let bounds = cut_points(n_links, ratios);
    let mut split_of_a: HashMap<EntityId, usize> = HashMap::new();
    let mut split_of_b: HashMap<EntityId, usize> = HashMap::new();
    let mut split_links: [Vec<(EntityId, EntityId)>; 3] = Default::default();
    let mut assigned = 0usize;
    for &c in &order {
        let split = bounds.iter().position(|&b| assigned < b).unwrap_or(2);
        for &(a, b) in &components[c] {
            split_of_a.insert(a, split);
            split_of_b.insert(b, split);
            split_links[split].push((a, b));
        }
        assigned += components[c].len();
    }

    let assign_unlinked = |set: &RecordSet, linked: &mut HashMap<EntityId, usize>, rng: &mut ChaCha8Rng| {
        let mut free: Vec<EntityId> = set
            .iter()
            .map(|r| r.id)
            .filter(|id| !linked.contains_key(id))
            .collect();
        free.shuffle(rng);
        let bounds = cut_points(free.len(), ratios);
        for (i, id) in free.into_iter().enumerate() {
            let split = bounds.iter().position(|&b| i < b).unwrap_or(2);
            linked.insert(id, split);
        }
    };
    assign_unlinked(&data.a, &mut split_of_a, &mut rng);
    assign_unlinked(&data.b, &mut split_of_b, &mut rng);

    let provenance = [Provenance::Train, Provenance::Validation, Provenance::Test];
    let mut out = Vec::with_capacity(3);
    for s in 0..3 {
        let pick = |set: &RecordSet, map: &HashMap<EntityId, usize>| {
            RecordSet::from_records(
                set.iter()
                    .filter(|r| map.get(&r.id) == Some(&s))
                    .cloned()
                    .collect(),
            )
        };
        // keep links in their original file order within each split
        let mut links = std::mem::take(&mut split_links[s]);
        let position: HashMap<(EntityId, EntityId), usize> = data
            .links
            .pairs()
            .iter()
            .enumerate()
            .map(|(i, p)| (*p, i))
            .collect();
        links.sort_by_key(|p| position[p]);
        out.push(LinkedDataset {
            a: pick(&data.a, &split_of_a)?,
            b: pick(&data.b, &split_of_b)?,
            links: LinkedPairSet::new(links, provenance[s]),
        });
    }
    let test = out.pop().unwrap();
    let validation = out.pop().unwrap();
    let train = out.pop().unwrap();
    Ok(Splits {
        train,
        validation,
        test,
    })
}

/// Exclusive upper bounds of each split in an ordered list of `n` items.
fn cut_points(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let first = (ratios[0] * n as f64).round() as usize;
    let second = ((ratios[0] + ratios[1]) * n as f64).round() as usize;
    [first.min(n), second.min(n), n]
}

fn link_components(links: &LinkedPairSet) -> Vec<Vec<(EntityId, EntityId)>> {
    // union-find over link indices, joined through shared endpoints
    let n = links.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut by_a: HashMap<EntityId, usize> = HashMap::new();
    let mut by_b: HashMap<EntityId, usize> = HashMap::new();
    for (i, &(a, b)) in links.pairs().iter().enumerate() {
        for j in [by_a.insert(a, i), by_b.insert(b, i)].into_iter().flatten() {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri != rj {
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<(EntityId, EntityId)>> = BTreeMap::new();
    for (i, &p) in links.pairs().iter().enumerate() {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(p);
    }
    groups.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::schema::Record;

    fn dataset(n_linked: u64, n_free: u64) -> LinkedDataset {
        let mk = |ids: std::ops::Range<u64>| {
            RecordSet::from_records(ids.map(|i| Record::new(EntityId(i), vec![None])).collect()).unwrap()
        };
        let total = n_linked + n_free;
        let a = mk(0..total);
        let b = mk(10_000..10_000 + total);
        let links = (0..n_linked).map(|i| (EntityId(i), EntityId(10_000 + i))).collect();
        LinkedDataset {
            a,
            b,
            links: LinkedPairSet::new(links, Provenance::Train),
        }
    }

    #[test]
    fn exact_counts_for_hundred_pairs() {
        let d = dataset(100, 0);
        let s = partition(&d, [0.6, 0.2, 0.2], 7).unwrap();
        assert_eq!(s.train.links.len(), 60);
        assert_eq!(s.validation.links.len(), 20);
        assert_eq!(s.test.links.len(), 20);
        assert_eq!(partition(&d, [0.6, 0.2, 0.2], 7).unwrap(), s);
    }

    #[test]
    fn all_train_ratio() {
        let d = dataset(10, 5);
        let s = partition(&d, [1.0, 0.0, 0.0], 1).unwrap();
        assert_eq!(s.train.links.len(), 10);
        assert_eq!(s.train.a.len(), 15);
        assert!(s.validation.a.is_empty() && s.validation.links.is_empty());
        assert!(s.test.b.is_empty() && s.test.links.is_empty());
    }

    #[test]
    fn links_never_straddle_splits() {
        let d = dataset(50, 30);
        let s = partition(&d, [0.5, 0.25, 0.25], 3).unwrap();
        for split in s.iter() {
            split.links.validate(&split.a, &split.b).unwrap();
        }
        let total_a: usize = s.iter().map(|x| x.a.len()).sum();
        assert_eq!(total_a, 80);
    }

    #[test]
    fn many_to_one_links_stay_together() {
        let mut d = dataset(4, 0);
        let mut pairs = d.links.pairs().to_vec();
        pairs.push((EntityId(0), EntityId(10_001)));
        d.links = LinkedPairSet::new(pairs, Provenance::Train);
        for seed in 0..20 {
            let s = partition(&d, [0.5, 0.25, 0.25], seed).unwrap();
            for split in s.iter() {
                split.links.validate(&split.a, &split.b).unwrap();
            }
        }
    }

    #[test]
    fn errors() {
        let d = dataset(0, 3);
        assert!(matches!(partition(&d, [0.6, 0.2, 0.2], 0), Err(Error::EmptyLinks)));
        let d = dataset(3, 0);
        assert!(partition(&d, [0.6, 0.2, 0.3], 0).is_err());
    }
}
