use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::node_model::TrajectoryBatch;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    /// Time of `state` within its episode.
    pub t: f64,
    pub state: Vec<f64>,
    pub control: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    /// Whether the previously stored transition ends where this one starts.
    pub continues: bool,
}

/// Column-stacked minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct Minibatch {
    pub t: Array1<f64>,
    pub states: Array2<f64>,
    pub controls: Array2<f64>,
    pub rewards: Array1<f64>,
    pub costs: Array1<f64>,
    pub next_states: Array2<f64>,
    pub done: Array1<f64>,
}

impl Minibatch {
    pub fn from_transitions(items: &[&Transition]) -> Result<Self> {
        let first = items.first().ok_or(Error::EmptyBatch)?;
        let (b, n, m) = (items.len(), first.state.len(), first.control.len());
        let mut out = Self {
            t: Array1::zeros(b),
            states: Array2::zeros((b, n)),
            controls: Array2::zeros((b, m)),
            rewards: Array1::zeros(b),
            costs: Array1::zeros(b),
            next_states: Array2::zeros((b, n)),
            done: Array1::zeros(b),
        };
        for (i, tr) in items.iter().enumerate() {
            if tr.state.len() != n || tr.control.len() != m || tr.next_state.len() != n {
                return Err(Error::invalid("transitions have inconsistent dimensions"));
            }
            out.t[i] = tr.t;
            out.states.row_mut(i).assign(&Array1::from(tr.state.clone()));
            out.controls.row_mut(i).assign(&Array1::from(tr.control.clone()));
            out.rewards[i] = tr.reward;
            out.costs[i] = tr.cost;
            out.next_states.row_mut(i).assign(&Array1::from(tr.next_state.clone()));
            out.done[i] = if tr.done { 1.0 } else { 0.0 };
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    /// Physical slot of the oldest item once the ring has wrapped.
    head: usize,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay capacity must be positive"));
        }
        Ok(Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            head: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, tr: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(tr);
        } else {
            self.items[self.head] = tr;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Item in insertion order, 0 being the oldest retained.
    pub fn get(&self, logical: usize) -> Option<&Transition> {
        if logical >= self.items.len() {
            return None;
        }
        Some(&self.items[(self.head + logical) % self.items.len()])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        (0..self.len()).map(move |i| self.get(i).unwrap())
    }

    pub fn sample_indices(&mut self, n: usize) -> Vec<usize> {
        let len = self.items.len();
        (0..n).map(|_| self.rng.random_range(0..len)).collect()
    }

    pub fn sample(&mut self, n: usize) -> Result<Minibatch> {
        if self.items.is_empty() || n == 0 {
            return Err(Error::EmptyBatch);
        }
        let idx = self.sample_indices(n);
        let picked: Vec<&Transition> = idx.iter().map(|&i| &self.items[i]).collect();
        Minibatch::from_transitions(&picked)
    }

    fn window_ok(&self, start: usize, horizon: usize) -> bool {
        start + horizon <= self.len() && (1..horizon).all(|k| self.get(start + k).unwrap().continues)
    }

    /// Uniformly sampled runs of `horizon` consecutive transitions from the
    /// same episode, drawn with the caller's RNG so that model training does
    /// not perturb minibatch sampling. Returns `None` if no such run could
    /// be found.
    pub fn sample_windows<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        n: usize,
        horizon: usize,
    ) -> Result<Option<TrajectoryBatch>> {
        if horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if self.len() < horizon || n == 0 {
            return Ok(None);
        }
        let max_start = self.len() - horizon;
        let mut starts = Vec::with_capacity(n);
        let mut tries = 0;
        while starts.len() < n && tries < 50 * n {
            tries += 1;
            let s = rng.random_range(0..=max_start);
            if self.window_ok(s, horizon) {
                starts.push(s);
            }
        }
        if starts.is_empty() {
            return Ok(None);
        }
        Ok(Some(self.windows_at(&starts, horizon)?))
    }

    /// Windows starting at the given logical indices.
    pub fn windows_at(&self, starts: &[usize], horizon: usize) -> Result<TrajectoryBatch> {
        let first = self.get(starts[0]).ok_or(Error::EmptyBatch)?;
        let (b, n, m) = (starts.len(), first.state.len(), first.control.len());
        let mut states = vec![Array2::zeros((b, n)); horizon + 1];
        let mut controls = vec![Array2::zeros((b, m)); horizon];
        let mut t0 = Array1::zeros(b);
        for (row, &s) in starts.iter().enumerate() {
            if !self.window_ok(s, horizon) {
                return Err(Error::invalid(format!("no contiguous window at {s}")));
            }
            for k in 0..horizon {
                let tr = self.get(s + k).unwrap();
                if k == 0 {
                    t0[row] = tr.t;
                    states[0].row_mut(row).assign(&Array1::from(tr.state.clone()));
                }
                controls[k].row_mut(row).assign(&Array1::from(tr.control.clone()));
                states[k + 1].row_mut(row).assign(&Array1::from(tr.next_state.clone()));
            }
        }
        TrajectoryBatch::new(t0, states, controls)
    }
}
