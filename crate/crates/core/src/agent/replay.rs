use super::nn::{c, Real};
use super::sac::Batch;
use ndarray::{Array1, Array2};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity FIFO ring buffer with uniform sampling. Stored as f32.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    act_dim: usize,
    obs: Vec<f32>,
    act: Vec<f32>,
    rew: Vec<f32>,
    next_obs: Vec<f32>,
    done: Vec<f32>,
    head: usize,
    len: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer {
            capacity,
            obs_dim,
            act_dim,
            obs: vec![0.0; capacity * obs_dim],
            act: vec![0.0; capacity * act_dim],
            rew: vec![0.0; capacity],
            next_obs: vec![0.0; capacity * obs_dim],
            done: vec![0.0; capacity],
            head: 0,
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Overwrites the oldest entry once full.
    pub fn push(&mut self, t: &Transition) {
        assert_eq!(t.obs.len(), self.obs_dim);
        assert_eq!(t.action.len(), self.act_dim);
        let i = self.head;
        let (od, ad) = (self.obs_dim, self.act_dim);
        for (d, s) in self.obs[i * od..(i + 1) * od].iter_mut().zip(&t.obs) {
            *d = *s as f32;
        }
        for (d, s) in self.next_obs[i * od..(i + 1) * od].iter_mut().zip(&t.next_obs) {
            *d = *s as f32;
        }
        for (d, s) in self.act[i * ad..(i + 1) * ad].iter_mut().zip(&t.action) {
            *d = *s as f32;
        }
        self.rew[i] = t.reward as f32;
        self.done[i] = if t.done { 1.0 } else { 0.0 };
        self.head = (self.head + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
    }

    fn slot(&self, k: usize) -> usize {
        (self.head + self.capacity - self.len + k) % self.capacity
    }

    /// Entry `k` in age order, 0 being the oldest retained.
    pub fn get(&self, k: usize) -> Option<Transition> {
        (k < self.len).then(|| {
            let i = self.slot(k);
            let (od, ad) = (self.obs_dim, self.act_dim);
            let f = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
            Transition {
                obs: f(&self.obs[i * od..(i + 1) * od]),
                action: f(&self.act[i * ad..(i + 1) * ad]),
                reward: self.rew[i] as f64,
                next_obs: f(&self.next_obs[i * od..(i + 1) * od]),
                done: self.done[i] > 0.5,
            }
        })
    }

    /// Age-order indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        assert!(!self.is_empty(), "cannot sample an empty buffer");
        (0..n).map(|_| rng.random_range(0..self.len)).collect()
    }

    pub fn sample<F: Real, R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Batch<F> {
        let idx = self.sample_indices(n, rng);
        let (od, ad) = (self.obs_dim, self.act_dim);
        let mut obs = Array2::zeros((n, od));
        let mut next_obs = Array2::zeros((n, od));
        let mut act = Array2::zeros((n, ad));
        let mut rew = Array1::zeros(n);
        let mut done = Array1::zeros(n);
        for (r, &k) in idx.iter().enumerate() {
            let i = self.slot(k);
            for j in 0..od {
                obs[[r, j]] = c(self.obs[i * od + j] as f64);
                next_obs[[r, j]] = c(self.next_obs[i * od + j] as f64);
            }
            for j in 0..ad {
                act[[r, j]] = c(self.act[i * ad + j] as f64);
            }
            rew[r] = c(self.rew[i] as f64);
            done[r] = c(self.done[i] as f64);
        }
        Batch { obs, act, rew, next_obs, done }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(k: usize) -> Transition {
        Transition { obs: vec![k as f64], action: vec![0.0], reward: k as f64, next_obs: vec![k as f64 + 1.0], done: false }
    }

    #[test]
    fn evicts_oldest_first() {
        let mut b = ReplayBuffer::new(3, 1, 1);
        for k in 0..5 {
            b.push(&t(k));
        }
        assert_eq!(b.len(), 3);
        let rewards: Vec<f64> = (0..3).map(|k| b.get(k).unwrap().reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn sampling_is_uniform() {
        let n = 50;
        let mut b = ReplayBuffer::new(n, 1, 1);
        for k in 0..n {
            b.push(&t(k));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let draws = 100_000;
        let mut counts = vec![0usize; n];
        for k in b.sample_indices(draws, &mut rng) {
            counts[k] += 1;
        }
        let expected = draws as f64 / n as f64;
        let chi2: f64 = counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        // 99.9th percentile of chi-square with 49 degrees of freedom.
        assert!(chi2 < 85.35, "chi2 = {chi2}");
        assert!(counts.iter().all(|&c| c > 0));
    }
}
