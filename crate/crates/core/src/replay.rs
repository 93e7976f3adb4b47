//! Bounded FIFO transition store with per-species indexing.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};

/// One environment step as stored for off-policy learning.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    /// Environment reward `r`.
    pub reward: f64,
    /// Species diversity reward `r_z`, computed from the next state.
    pub diversity_reward: f64,
    pub next_state: Vec<f64>,
    pub species: usize,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    n_species: usize,
    slots: Vec<Transition>,
    /// Slot overwritten by the next push once the ring is full.
    oldest: usize,
    species_slots: Vec<Vec<usize>>,
    /// Position of each slot inside its species list.
    slot_position: Vec<usize>,
}

impl ReplayBuffer {
    pub const DEFAULT_CAPACITY: usize = 1 << 19;

    pub fn new(capacity: usize, n_species: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        assert!(n_species > 0, "need at least one species");
        Self {
            capacity,
            n_species,
            slots: Vec::new(),
            oldest: 0,
            species_slots: vec![Vec::new(); n_species],
            slot_position: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn n_species(&self) -> usize {
        self.n_species
    }

    pub fn species_len(&self, z: usize) -> usize {
        self.species_slots.get(z).map_or(0, Vec::len)
    }

    /// Live slots holding transitions of species `z`, in no particular order.
    pub fn species_slots(&self, z: usize) -> &[usize] {
        &self.species_slots[z]
    }

    pub fn get(&self, slot: usize) -> Option<&Transition> {
        self.slots.get(slot)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.slots.iter()
    }

    pub fn push(&mut self, transition: Transition) -> Result<()> {
        if transition.species >= self.n_species {
            return Err(Error::SpeciesOutOfRange {
                z: transition.species,
                m: self.n_species,
            });
        }
        let z = transition.species;
        if self.slots.len() < self.capacity {
            let slot = self.slots.len();
            self.slots.push(transition);
            self.slot_position.push(self.species_slots[z].len());
            self.species_slots[z].push(slot);
            return Ok(());
        }

        let slot = self.oldest;
        self.oldest = (self.oldest + 1) % self.capacity;
        let old_z = self.slots[slot].species;
        let pos = self.slot_position[slot];
        let list = &mut self.species_slots[old_z];
        list.swap_remove(pos);
        if let Some(&moved) = list.get(pos) {
            self.slot_position[moved] = pos;
        }
        self.slots[slot] = transition;
        self.slot_position[slot] = self.species_slots[z].len();
        self.species_slots[z].push(slot);
        Ok(())
    }

    /// `n` uniform draws with replacement over all live transitions.
    pub fn sample_uniform<R: Rng + ?Sized>(
        &self,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<&Transition>> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..n)
            .map(|_| &self.slots[rng.gen_range(0..self.slots.len())])
            .collect())
    }

    /// `n` uniform draws with replacement over transitions of species `z`.
    pub fn sample_species<R: Rng + ?Sized>(
        &self,
        z: usize,
        n: usize,
        rng: &mut R,
    ) -> Result<Vec<&Transition>> {
        if z >= self.n_species {
            return Err(Error::SpeciesOutOfRange {
                z,
                m: self.n_species,
            });
        }
        let list = &self.species_slots[z];
        if list.is_empty() {
            return Err(Error::EmptySpecies(z));
        }
        Ok((0..n)
            .map(|_| &self.slots[list[rng.gen_range(0..list.len())]])
            .collect())
    }
}

/// Column-stacked view of sampled transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub diversity_rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub species: Vec<usize>,
    /// 1.0 where the transition ended its episode.
    pub done: Array1<f64>,
}

impl Batch {
    pub fn from_transitions(items: &[&Transition]) -> Self {
        assert!(!items.is_empty(), "empty batch");
        let n = items.len();
        let sd = items[0].state.len();
        let ad = items[0].action.len();
        let mut states = Array2::zeros((n, sd));
        let mut next_states = Array2::zeros((n, sd));
        let mut actions = Array2::zeros((n, ad));
        for (i, t) in items.iter().enumerate() {
            states.row_mut(i).assign(&ndarray::aview1(&t.state));
            next_states
                .row_mut(i)
                .assign(&ndarray::aview1(&t.next_state));
            actions.row_mut(i).assign(&ndarray::aview1(&t.action));
        }
        Self {
            states,
            actions,
            rewards: items.iter().map(|t| t.reward).collect(),
            diversity_rewards: items.iter().map(|t| t.diversity_reward).collect(),
            next_states,
            species: items.iter().map(|t| t.species).collect(),
            done: items
                .iter()
                .map(|t| if t.done { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.species.len()
    }

    pub fn is_empty(&self) -> bool {
        self.species.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn tr(tag: f64, z: usize) -> Transition {
        Transition {
            state: vec![tag],
            action: vec![0.0],
            reward: tag,
            diversity_reward: 0.0,
            next_state: vec![tag + 1.0],
            species: z,
            done: false,
        }
    }

    fn check_index(buf: &ReplayBuffer) {
        for z in 0..buf.n_species() {
            let listed: BTreeSet<usize> = buf.species_slots(z).iter().copied().collect();
            let actual: BTreeSet<usize> = (0..buf.len())
                .filter(|&s| buf.get(s).unwrap().species == z)
                .collect();
            assert_eq!(listed, actual, "species {z}");
            assert_eq!(listed.len(), buf.species_slots(z).len());
        }
    }

    #[test]
    fn push_grows() {
        let mut b = ReplayBuffer::new(8, 2);
        b.push(tr(0.0, 0)).unwrap();
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(4, 1);
        for i in 0..5 {
            b.push(tr(i as f64, 0)).unwrap();
        }
        assert_eq!(b.len(), 4);
        assert!(b.iter().all(|t| t.reward != 0.0));
        assert!(b.iter().any(|t| t.reward == 4.0));
    }

    #[test]
    fn species_index_records_slot() {
        let mut b = ReplayBuffer::new(16, 8);
        b.push(tr(0.0, 1)).unwrap();
        b.push(tr(1.0, 3)).unwrap();
        assert_eq!(b.species_slots(3), &[1]);
        assert!(matches!(
            b.push(tr(0.0, 8)),
            Err(Error::SpeciesOutOfRange { z: 8, m: 8 })
        ));
    }

    #[test]
    fn uniform_single_entry() {
        let mut b = ReplayBuffer::new(4, 1);
        b.push(tr(7.0, 0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = b.sample_uniform(3, &mut rng).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|t| t.reward == 7.0));
    }

    #[test]
    fn empty_buffer_errors() {
        let b = ReplayBuffer::new(4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            b.sample_uniform(1, &mut rng),
            Err(Error::EmptyBuffer)
        ));
    }

    #[test]
    fn sampling_is_seeded() {
        let mut b = ReplayBuffer::new(100, 2);
        for i in 0..50 {
            b.push(tr(i as f64, i % 2)).unwrap();
        }
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            b.sample_uniform(20, &mut rng)
                .unwrap()
                .iter()
                .map(|t| t.reward)
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
    }

    #[test]
    fn uniform_frequencies() {
        let mut b = ReplayBuffer::new(256, 1);
        for i in 0..256 {
            b.push(tr(i as f64, 0)).unwrap();
        }
        let mut counts = vec![0usize; 256];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        for t in b.sample_uniform(draws, &mut rng).unwrap() {
            counts[t.reward as usize] += 1;
        }
        let p = 1.0 / 256.0;
        let mean = draws as f64 * p;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 5.0 * sd, "count {c} mean {mean}");
        }
    }

    #[test]
    fn species_sampling() {
        let mut b = ReplayBuffer::new(64, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..10 {
            b.push(tr(i as f64, 0)).unwrap();
        }
        assert!(b
            .sample_species(0, 32, &mut rng)
            .unwrap()
            .iter()
            .all(|t| t.species == 0));
        assert!(matches!(
            b.sample_species(1, 4, &mut rng),
            Err(Error::EmptySpecies(1))
        ));
        for i in 0..40 {
            b.push(tr(i as f64, i % 4)).unwrap();
        }
        let s = b.sample_species(2, 256, &mut rng).unwrap();
        assert_eq!(s.len(), 256);
        assert!(s.iter().all(|t| t.species == 2));
    }

    #[test]
    fn batch_layout() {
        let a = tr(1.0, 0);
        let mut b = tr(2.0, 1);
        b.done = true;
        let batch = Batch::from_transitions(&[&a, &b]);
        assert_eq!(batch.states[[1, 0]], 2.0);
        assert_eq!(batch.next_states[[0, 0]], 2.0);
        assert_eq!(batch.done.to_vec(), vec![0.0, 1.0]);
        assert_eq!(batch.species, vec![0, 1]);
    }

    proptest! {
        #[test]
        fn index_partitions_live_slots(
            cap in 1usize..20,
            zs in prop::collection::vec(0usize..4, 0..120),
        ) {
            let mut b = ReplayBuffer::new(cap, 4);
            for (i, &z) in zs.iter().enumerate() {
                b.push(tr(i as f64, z)).unwrap();
                check_index(&b);
            }
            prop_assert_eq!(b.len(), zs.len().min(cap));
            // survivors are exactly the newest `cap` pushes
            let live: BTreeSet<i64> = b.iter().map(|t| t.reward as i64).collect();
            let expect: BTreeSet<i64> =
                (zs.len().saturating_sub(cap)..zs.len()).map(|i| i as i64).collect();
            prop_assert_eq!(live, expect);
        }
    }
}
