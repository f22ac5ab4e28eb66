//! Replay buffer with FIFO eviction plus uniform and priority-proportional
//! sampling.
//!
//! Entry ids are insertion sequence numbers. An id stays valid until the
//! entry is evicted; evicted ids are rejected rather than aliased onto the
//! slot's new occupant.

mod sum_tree;

use std::io::Write;

use rand::Rng;
use thiserror::Error;

use crate::datasets::{self, DatasetError, DatasetStats, JointActionSample};

pub use sum_tree::SumTree;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BufferError {
    #[error("buffer is empty")]
    EmptyBuffer,
    #[error("unknown or evicted entry id {0}")]
    UnknownId(usize),
    #[error("priority must be positive and finite, got {0}")]
    InvalidPriority(f64),
    #[error("{ids} ids but {priorities} priorities")]
    LengthMismatch { ids: usize, priorities: usize },
    #[error("capacity must be at least 1")]
    ZeroCapacity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Capacity {
    Bounded(usize),
    Unbounded,
}

impl std::fmt::Display for Capacity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Capacity::Bounded(n) => write!(f, "{n}"),
            Capacity::Unbounded => write!(f, "unbounded"),
        }
    }
}

/// A minibatch drawn with replacement.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub ids: Vec<usize>,
    pub actions: Vec<JointActionSample>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn stats(&self, max_power: usize) -> Result<DatasetStats, DatasetError> {
        datasets::compute_stats(&self.actions, max_power)
    }
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: Capacity,
    // indexed by slot
    entries: Vec<JointActionSample>,
    tree: SumTree,
    inserted: usize,
    last_sampled: Vec<usize>,
}

impl ReplayBuffer {
    pub fn new(capacity: Capacity) -> Result<Self, BufferError> {
        let initial = match capacity {
            Capacity::Bounded(0) => return Err(BufferError::ZeroCapacity),
            Capacity::Bounded(n) => n,
            Capacity::Unbounded => 64,
        };
        Ok(Self {
            capacity,
            entries: Vec::new(),
            tree: SumTree::with_capacity(initial),
            inserted: 0,
            last_sampled: Vec::new(),
        })
    }

    /// Unbounded buffer holding `samples` in order, all at priority `priority`.
    pub fn from_samples(samples: &[JointActionSample], priority: f64) -> Result<Self, BufferError> {
        let mut buf = Self::new(Capacity::Unbounded)?;
        buf.tree.grow(samples.len());
        for s in samples {
            buf.insert(*s, priority)?;
        }
        Ok(buf)
    }

    pub fn capacity(&self) -> Capacity {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn slot(&self, id: usize) -> usize {
        match self.capacity {
            Capacity::Bounded(n) => id % n,
            Capacity::Unbounded => id,
        }
    }

    fn live_slot(&self, id: usize) -> Result<usize, BufferError> {
        if id < self.inserted && id >= self.inserted - self.len() {
            Ok(self.slot(id))
        } else {
            Err(BufferError::UnknownId(id))
        }
    }

    pub fn contains(&self, id: usize) -> bool {
        self.live_slot(id).is_ok()
    }

    /// Stores `sample`, evicting the oldest entry when full. The stored copy
    /// carries the returned id.
    pub fn insert(
        &mut self,
        sample: JointActionSample,
        priority: f64,
    ) -> Result<usize, BufferError> {
        check_priority(priority)?;
        let id = self.inserted;
        let slot = self.slot(id);
        let stored = JointActionSample { id, ..sample };
        if slot == self.entries.len() {
            self.entries.push(stored);
            self.tree.grow(self.entries.len());
        } else {
            self.entries[slot] = stored;
        }
        self.tree.set(slot, priority);
        self.inserted += 1;
        Ok(id)
    }

    pub fn get(&self, id: usize) -> Option<&JointActionSample> {
        self.live_slot(id).ok().map(|slot| &self.entries[slot])
    }

    pub fn priority(&self, id: usize) -> Option<f64> {
        self.live_slot(id).ok().map(|slot| self.tree.get(slot))
    }

    pub fn total_priority(&self) -> f64 {
        self.tree.total()
    }

    /// Largest stored priority, or 1.0 for an empty buffer.
    pub fn max_priority(&self) -> f64 {
        if self.is_empty() {
            1.0
        } else {
            self.tree.max_leaf()
        }
    }

    pub fn sum_tree(&self) -> &SumTree {
        &self.tree
    }

    /// Live ids, oldest first.
    pub fn ids(&self) -> std::ops::Range<usize> {
        self.inserted - self.len()..self.inserted
    }

    /// Live entries, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &JointActionSample> + '_ {
        self.ids().map(move |id| &self.entries[self.slot(id)])
    }

    /// Entries in slot order, paired with their priorities.
    pub fn slots(&self) -> impl Iterator<Item = (&JointActionSample, f64)> + '_ {
        self.entries
            .iter()
            .enumerate()
            .map(move |(slot, s)| (s, self.tree.get(slot)))
    }

    /// Ids of the most recent batch drawn from this buffer.
    pub fn last_sampled(&self) -> &[usize] {
        &self.last_sampled
    }

    fn batch_from_slots(&mut self, slots: impl Iterator<Item = usize>) -> SampleBatch {
        let actions: Vec<JointActionSample> = slots.map(|slot| self.entries[slot]).collect();
        let ids: Vec<usize> = actions.iter().map(|a| a.id).collect();
        self.last_sampled.clone_from(&ids);
        SampleBatch { ids, actions }
    }

    /// I.i.d. uniform draws with replacement.
    pub fn sample_uniform<R: Rng + ?Sized>(
        &mut self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<SampleBatch, BufferError> {
        if self.is_empty() {
            return Err(BufferError::EmptyBuffer);
        }
        let n = self.len();
        let slots: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..n)).collect();
        Ok(self.batch_from_slots(slots.into_iter()))
    }

    /// Draws with replacement, entry `e` with probability `priority(e) / total`.
    pub fn sample_prioritized<R: Rng + ?Sized>(
        &mut self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<SampleBatch, BufferError> {
        if self.is_empty() {
            return Err(BufferError::EmptyBuffer);
        }
        let total = self.tree.total();
        let slots: Vec<usize> = (0..batch_size)
            .map(|_| self.tree.find(rng.random::<f64>() * total))
            .collect();
        debug_assert!(slots.iter().all(|&s| s < self.len()));
        Ok(self.batch_from_slots(slots.into_iter()))
    }

    /// Overwrites priorities of the given entries. Validates everything before
    /// writing anything.
    pub fn update_priorities(&mut self, ids: &[usize], priorities: &[f64]) -> Result<(), BufferError> {
        if ids.len() != priorities.len() {
            return Err(BufferError::LengthMismatch {
                ids: ids.len(),
                priorities: priorities.len(),
            });
        }
        let slots = ids
            .iter()
            .map(|&id| self.live_slot(id))
            .collect::<Result<Vec<_>, _>>()?;
        for &p in priorities {
            check_priority(p)?;
        }
        for (slot, &p) in slots.into_iter().zip(priorities) {
            self.tree.set(slot, p);
        }
        Ok(())
    }

    /// Writes `id,a_x,a_y,priority`, oldest entry first.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{BUFFER_CSV_HEADER}")?;
        for id in self.ids() {
            let slot = self.slot(id);
            let s = &self.entries[slot];
            writeln!(out, "{},{},{},{}", s.id, s.a_x, s.a_y, self.tree.get(slot))?;
        }
        out.flush()
    }
}

pub const BUFFER_CSV_HEADER: &str = "id,a_x,a_y,priority";

fn check_priority(p: f64) -> Result<(), BufferError> {
    if p > 0.0 && p.is_finite() {
        Ok(())
    } else {
        Err(BufferError::InvalidPriority(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn s(x: f64, y: f64) -> JointActionSample {
        JointActionSample::new(0, x, y)
    }

    #[test]
    fn fifo_eviction() {
        let mut buf = ReplayBuffer::new(Capacity::Bounded(2)).unwrap();
        let a = buf.insert(s(1.0, 1.0), 1.0).unwrap();
        let b = buf.insert(s(2.0, 2.0), 1.0).unwrap();
        let c = buf.insert(s(3.0, 3.0), 1.0).unwrap();
        assert_eq!(buf.len(), 2);
        assert!(!buf.contains(a));
        let held: Vec<f64> = buf.iter().map(|e| e.a_x).collect();
        assert_eq!(held, vec![2.0, 3.0]);
        assert_eq!(buf.get(b).unwrap().a_x, 2.0);
        assert_eq!(buf.get(c).unwrap().id, c);
        assert_eq!(buf.total_priority(), 2.0);
        assert_eq!(
            buf.update_priorities(&[a], &[1.0]),
            Err(BufferError::UnknownId(a))
        );
    }

    #[test]
    fn unbounded_never_evicts() {
        let mut buf = ReplayBuffer::new(Capacity::Unbounded).unwrap();
        for k in 0..1000 {
            buf.insert(s(k as f64, 0.0), 1.0).unwrap();
        }
        assert_eq!(buf.len(), 1000);
        assert!(buf.contains(0));
        assert_eq!(buf.total_priority(), 1000.0);
    }

    #[test]
    fn insert_adds_priority_mass() {
        let mut buf = ReplayBuffer::new(Capacity::Bounded(4)).unwrap();
        buf.insert(s(0.0, 0.0), 1.0).unwrap();
        buf.insert(s(0.0, 0.0), 3.0).unwrap();
        assert_eq!(buf.total_priority(), 4.0);
        assert_eq!(buf.max_priority(), 3.0);
    }

    #[test]
    fn rejects_bad_priorities() {
        let mut buf = ReplayBuffer::new(Capacity::Bounded(4)).unwrap();
        for p in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                buf.insert(s(0.0, 0.0), p),
                Err(BufferError::InvalidPriority(_))
            ));
        }
        let id = buf.insert(s(0.0, 0.0), 1.0).unwrap();
        assert!(buf.update_priorities(&[id], &[0.0]).is_err());
        assert!(matches!(
            buf.update_priorities(&[id], &[1.0, 2.0]),
            Err(BufferError::LengthMismatch { .. })
        ));
        assert_eq!(buf.priority(id), Some(1.0));
        assert_eq!(
            ReplayBuffer::new(Capacity::Bounded(0)).unwrap_err(),
            BufferError::ZeroCapacity
        );
    }

    #[test]
    fn empty_buffer_sampling_errors() {
        let mut buf = ReplayBuffer::new(Capacity::Unbounded).unwrap();
        let mut r = rng::stream(0, 0);
        assert_eq!(buf.sample_uniform(4, &mut r), Err(BufferError::EmptyBuffer));
        assert_eq!(buf.sample_prioritized(4, &mut r), Err(BufferError::EmptyBuffer));
    }

    #[test]
    fn single_entry_batch() {
        let mut buf = ReplayBuffer::new(Capacity::Bounded(3)).unwrap();
        let id = buf.insert(s(0.5, -0.5), 1.0).unwrap();
        let mut r = rng::stream(1, 0);
        let batch = buf.sample_uniform(5, &mut r).unwrap();
        assert_eq!(batch.ids, vec![id; 5]);
        assert_eq!(buf.last_sampled(), &[id; 5]);
    }

    #[test]
    fn sampling_is_deterministic() {
        let data: Vec<_> = (0..50).map(|k| s(k as f64, 0.0)).collect();
        let mut a = ReplayBuffer::from_samples(&data, 1.0).unwrap();
        let mut b = a.clone();
        let (mut ra, mut rb) = (rng::stream(7, 1), rng::stream(7, 1));
        assert_eq!(
            a.sample_uniform(32, &mut ra).unwrap(),
            b.sample_uniform(32, &mut rb).unwrap()
        );
        assert_eq!(
            a.sample_prioritized(32, &mut ra).unwrap(),
            b.sample_prioritized(32, &mut rb).unwrap()
        );
    }

    #[test]
    fn unit_update_gives_count_and_leaf_delta() {
        let data: Vec<_> = (0..8).map(|k| s(k as f64, 0.0)).collect();
        let mut buf = ReplayBuffer::from_samples(&data, 0.3).unwrap();
        let ids: Vec<usize> = buf.ids().collect();
        buf.update_priorities(&ids, &[1.0; 8]).unwrap();
        assert_eq!(buf.total_priority(), 8.0);
        buf.update_priorities(&[5], &[5.0]).unwrap();
        assert_eq!(buf.total_priority(), 12.0);
        assert_eq!(buf.priority(4), Some(1.0));
    }

    #[test]
    fn csv_dump_lists_live_entries() {
        let mut buf = ReplayBuffer::new(Capacity::Bounded(2)).unwrap();
        buf.insert(s(1.0, 2.0), 1.0).unwrap();
        buf.insert(s(3.0, 4.0), 0.5).unwrap();
        buf.insert(s(5.0, 6.0), 2.0).unwrap();
        let mut out = Vec::new();
        buf.write_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "id,a_x,a_y,priority\n1,3,4,0.5\n2,5,6,2\n"
        );
    }
}
