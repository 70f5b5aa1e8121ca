//! Bounded FIFO experience pool with uniform with-replacement sampling.

use std::io::{Read, Write};
use std::sync::{Arc, Mutex, MutexGuard};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const SPILL_MAGIC: &[u8; 4] = b"MXRB";
const SPILL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    /// Squashed action, strictly inside the unit cube.
    pub action: Vec<f64>,
    /// `atanh(action)` as produced by the policy before squashing.
    pub pre_squash: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Genuine termination only; time-limit truncation keeps this false.
    pub terminal: bool,
}

/// Column-stacked minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub states: Tensor,
    pub actions: Tensor,
    pub pre_squash: Tensor,
    /// `[n, 1]`.
    pub rewards: Tensor,
    pub next_states: Tensor,
    /// `[n, 1]`, `1.0` for terminal transitions.
    pub terminals: Tensor,
}

impl Batch {
    pub fn from_transitions(ts: &[Transition]) -> Result<Self> {
        let first = ts
            .first()
            .ok_or_else(|| Error::Usage("cannot build an empty batch".into()))?;
        let (ds, da) = (first.state.len(), first.action.len());
        let n = ts.len();
        let mut states = Vec::with_capacity(n * ds);
        let mut next_states = Vec::with_capacity(n * ds);
        let mut actions = Vec::with_capacity(n * da);
        let mut pre = Vec::with_capacity(n * da);
        let mut rewards = Vec::with_capacity(n);
        let mut terminals = Vec::with_capacity(n);
        for t in ts {
            if t.state.len() != ds || t.next_state.len() != ds || t.action.len() != da || t.pre_squash.len() != da {
                return Err(Error::Structural("transitions in a batch have mixed dimensions".into()));
            }
            states.extend_from_slice(&t.state);
            next_states.extend_from_slice(&t.next_state);
            actions.extend_from_slice(&t.action);
            pre.extend_from_slice(&t.pre_squash);
            rewards.push(t.reward);
            terminals.push(if t.terminal { 1.0 } else { 0.0 });
        }
        Ok(Self {
            states: Tensor::matrix(n, ds, states)?,
            actions: Tensor::matrix(n, da, actions)?,
            pre_squash: Tensor::matrix(n, da, pre)?,
            rewards: Tensor::matrix(n, 1, rewards)?,
            next_states: Tensor::matrix(n, ds, next_states)?,
            terminals: Tensor::matrix(n, 1, terminals)?,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record `i` as a transition.
    pub fn transition(&self, i: usize) -> Transition {
        Transition {
            state: self.states.row(i).to_vec(),
            action: self.actions.row(i).to_vec(),
            pre_squash: self.pre_squash.row(i).to_vec(),
            reward: self.rewards.data()[i],
            next_state: self.next_states.row(i).to_vec(),
            terminal: self.terminals.data()[i] != 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    storage: Vec<Transition>,
    /// Slot the next push writes once the ring is full.
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 || state_dim == 0 || action_dim == 0 {
            return Err(Error::Config("replay capacity and dimensions must be positive".into()));
        }
        Ok(Self {
            capacity,
            state_dim,
            action_dim,
            storage: Vec::with_capacity(capacity.min(1 << 20)),
            cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn validate(&self, t: &Transition) -> Result<()> {
        if t.state.len() != self.state_dim || t.next_state.len() != self.state_dim {
            return Err(Error::Structural(format!(
                "transition state dimension {} / {} does not match buffer dimension {}",
                t.state.len(),
                t.next_state.len(),
                self.state_dim
            )));
        }
        if t.action.len() != self.action_dim || t.pre_squash.len() != self.action_dim {
            return Err(Error::Structural(format!(
                "transition action dimension {} does not match buffer dimension {}",
                t.action.len(),
                self.action_dim
            )));
        }
        if t.action.iter().any(|a| !(a.abs() < 1.0)) {
            return Err(Error::Structural(format!("action {:?} is not strictly inside (-1, 1)", t.action)));
        }
        Ok(())
    }

    /// Appends a record, evicting the oldest once full.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        self.validate(&t)?;
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.cursor] = t;
            self.cursor = (self.cursor + 1) % self.capacity;
        }
        Ok(())
    }

    /// Record by age, `0` being the oldest.
    pub fn get(&self, i: usize) -> Option<&Transition> {
        if i >= self.storage.len() {
            return None;
        }
        Some(&self.storage[(self.cursor + i) % self.storage.len()])
    }

    /// Records oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        (0..self.len()).map(move |i| self.get(i).expect("index in range"))
    }

    fn draw_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.storage.is_empty() {
            return Err(Error::Usage("cannot sample from an empty replay buffer".into()));
        }
        Ok((0..n).map(|_| rng.gen_range(0..self.storage.len())).collect())
    }

    /// `n` independent uniform draws with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Transition>> {
        Ok(self
            .draw_indices(n, rng)?
            .into_iter()
            .map(|i| self.storage[i].clone())
            .collect())
    }

    /// Same draws as [`sample_batch`](Self::sample_batch), stacked into tensors.
    pub fn sample_tensors<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        let idx = self.draw_indices(n, rng)?;
        let picked: Vec<Transition> = idx.into_iter().map(|i| self.storage[i].clone()).collect();
        Batch::from_transitions(&picked)
    }

    /// Writes the buffer contents, oldest first, behind a versioned header.
    pub fn spill<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(SPILL_MAGIC)?;
        w.write_all(&SPILL_VERSION.to_le_bytes())?;
        w.write_all(&(self.state_dim as u32).to_le_bytes())?;
        w.write_all(&(self.action_dim as u32).to_le_bytes())?;
        w.write_all(&(self.capacity as u64).to_le_bytes())?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        let mut buf = Vec::new();
        for t in self.iter() {
            buf.clear();
            for v in t.state.iter().chain(&t.action).chain(&t.pre_squash) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            buf.extend_from_slice(&t.reward.to_le_bytes());
            for v in &t.next_state {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            buf.push(t.terminal as u8);
            w.write_all(&buf)?;
        }
        Ok(())
    }

    /// Reads a buffer written by [`spill`](Self::spill).
    pub fn restore<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != SPILL_MAGIC {
            return Err(Error::Format("not a replay buffer spill".into()));
        }
        let mut u32b = [0u8; 4];
        let mut u64b = [0u8; 8];
        let mut read_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut u32b)?;
            Ok(u32::from_le_bytes(u32b))
        };
        let version = read_u32(&mut r)?;
        if version != SPILL_VERSION {
            return Err(Error::Format(format!("unsupported replay spill version {version}")));
        }
        let ds = read_u32(&mut r)? as usize;
        let da = read_u32(&mut r)? as usize;
        r.read_exact(&mut u64b)?;
        let capacity = u64::from_le_bytes(u64b) as usize;
        r.read_exact(&mut u64b)?;
        let len = u64::from_le_bytes(u64b) as usize;
        if len > capacity {
            return Err(Error::Format("replay spill holds more records than its capacity".into()));
        }
        let mut buffer = Self::new(capacity, ds, da)?;
        let f64s = |r: &mut R, n: usize| -> Result<Vec<f64>> {
            let mut raw = vec![0u8; n * 8];
            r.read_exact(&mut raw)?;
            Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        };
        for _ in 0..len {
            let state = f64s(&mut r, ds)?;
            let action = f64s(&mut r, da)?;
            let pre_squash = f64s(&mut r, da)?;
            let reward = f64s(&mut r, 1)?[0];
            let next_state = f64s(&mut r, ds)?;
            let mut flag = [0u8; 1];
            r.read_exact(&mut flag)?;
            buffer.push(Transition {
                state,
                action,
                pre_squash,
                reward,
                next_state,
                terminal: flag[0] != 0,
            })?;
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(Error::Format("trailing bytes after replay records".into()));
        }
        Ok(buffer)
    }
}

/// Buffer shared between one collector and one learner. Every operation
/// holds the lock for its whole duration, so pushes and samples are atomic
/// with respect to each other.
#[derive(Clone, Debug)]
pub struct SharedReplayBuffer {
    inner: Arc<Mutex<ReplayBuffer>>,
}

impl SharedReplayBuffer {
    pub fn new(buffer: ReplayBuffer) -> Self {
        Self {
            inner: Arc::new(Mutex::new(buffer)),
        }
    }

    fn lock(&self) -> MutexGuard<'_, ReplayBuffer> {
        self.inner.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    pub fn push(&self, t: Transition) -> Result<()> {
        self.lock().push(t)
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.lock().is_empty()
    }

    pub fn sample_tensors<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        self.lock().sample_tensors(n, rng)
    }

    /// Copy of the current contents.
    pub fn snapshot(&self) -> ReplayBuffer {
        self.lock().clone()
    }
}
