use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A deterministic random stream identified by a master seed and a path of
/// labels.
///
/// The draw sequence of a stream is a pure function of `(master_seed, path)`
/// and the order of calls made on it. Child streams are derived from the
/// identity of the parent, never from its current draw position, so
/// splitting a stream before or after drawing from it gives the same child.
#[derive(Clone, Debug)]
pub struct RngStream {
    master_seed: u64,
    path: Vec<u64>,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master_seed: u64) -> Self {
        Self::from_path(master_seed, Vec::new())
    }

    fn from_path(master_seed: u64, path: Vec<u64>) -> Self {
        let mut key = splitmix64(master_seed);
        for &label in &path {
            key = splitmix64(key ^ splitmix64(label ^ 0x5851_f42d_4c95_7f2d));
        }
        let mut seed = [0u8; 32];
        let mut state = key;
        for chunk in seed.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        Self {
            master_seed,
            path,
            rng: ChaCha8Rng::from_seed(seed),
        }
    }

    /// Child stream whose path is this stream's path extended by `label`.
    pub fn split(&self, label: u64) -> Self {
        let mut path = self.path.clone();
        path.push(label);
        Self::from_path(self.master_seed, path)
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniformly random permutation of `0..n` (Fisher-Yates).
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.rng.random_range(0..=i);
            perm.swap(i, j);
        }
        perm
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normals(s: &mut RngStream, n: usize) -> Vec<f64> {
        (0..n).map(|_| s.standard_normal()).collect()
    }

    #[test]
    fn same_path_same_sequence() {
        let root = RngStream::new(7);
        let mut a = root.split(3);
        let mut b = root.split(3);
        assert_eq!(normals(&mut a, 100), normals(&mut b, 100));
    }

    #[test]
    fn split_ignores_parent_position() {
        let mut root = RngStream::new(11);
        let before = root.split(4);
        for _ in 0..50 {
            root.next_u64();
        }
        let after = root.split(4);
        assert_eq!(before.clone().next_u64(), after.clone().next_u64());
        assert_eq!(after.path(), &[4]);
    }

    #[test]
    fn path_order_matters() {
        let s = RngStream::new(1);
        let mut a = s.split(1).split(2);
        let mut b = s.split(2).split(1);
        assert_ne!(normals(&mut a, 8), normals(&mut b, 8));
    }

    #[test]
    fn sibling_streams_uncorrelated() {
        let s = RngStream::new(2024);
        let n = 10_000;
        let a = normals(&mut s.split(0), n);
        let b = normals(&mut s.split(1), n);
        let ma = a.iter().sum::<f64>() / n as f64;
        let mb = b.iter().sum::<f64>() / n as f64;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(&b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma).powi(2);
            sbb += (y - mb).powi(2);
        }
        let rho = sab / (saa * sbb).sqrt();
        assert!(rho.abs() < 0.05, "rho = {rho}");
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut s = RngStream::new(5);
        let mut p = s.permutation(257);
        p.sort_unstable();
        assert_eq!(p, (0..257).collect::<Vec<_>>());
        assert_eq!(s.permutation(1), vec![0]);
        assert!(s.permutation(0).is_empty());
    }
}
