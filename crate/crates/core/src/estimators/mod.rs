//! Nonparametric estimators over particle clouds: k-NN differential entropy,
//! the constant-free particle loss used as a training signal, the
//! importance-weighted entropy variant, and the k-NN KL divergence.

mod knn;
mod special;

pub use knn::{brute_force_neighbors, cross_knn, self_knn, self_knn_brute, KdTree, Neighbor};
pub use special::{ball_volume, digamma, ln_ball_volume, EULER_GAMMA};

use thiserror::Error;

/// Floor on neighbour distances inside the training loss only.
pub const DISTANCE_FLOOR: f64 = 1e-8;

/// Neighbour count used throughout unless configured otherwise.
pub const DEFAULT_K: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("contract error: {0}")]
    Contract(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("degenerate k-NN radius at particle indices {indices:?}")]
    DegenerateRadius { indices: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, EstimatorError>;

/// A set of `N >= 2` finite points in `d` dimensions, optionally weighted and
/// labelled by the head that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleCloud {
    points: Vec<f64>,
    dim: usize,
    weights: Option<Vec<f64>>,
    labels: Option<Vec<usize>>,
}

impl ParticleCloud {
    pub fn new(points: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || !points.len().is_multiple_of(dim) {
            return Err(EstimatorError::Contract(format!("{} coordinates do not split into points of dimension {dim}", points.len())));
        }
        if points.len() / dim < 2 {
            return Err(EstimatorError::Contract("a cloud needs at least 2 points".into()));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(EstimatorError::Domain("non-finite point coordinate".into()));
        }
        Ok(Self { points, dim, weights: None, labels: None })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(EstimatorError::Contract("ragged rows".into()));
        }
        Self::new(rows.concat(), dim)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(EstimatorError::Contract("one weight per particle required".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(EstimatorError::Domain("weights must be finite and strictly positive".into()));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(EstimatorError::Contract("one label per particle required".into()));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Adds `shift` to every point.
    pub fn translated(&self, shift: &[f64]) -> Self {
        assert_eq!(shift.len(), self.dim);
        let mut out = self.clone();
        for (i, v) in out.points.iter_mut().enumerate() {
            *v += shift[i % self.dim];
        }
        out
    }

    /// Copy with exact duplicate points collapsed (first occurrence kept).
    pub fn distinct(&self) -> Self {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.point(a)
                .iter()
                .zip(self.point(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut keep = vec![true; self.len()];
        for w in order.windows(2) {
            if self.point(w[0]) == self.point(w[1]) {
                keep[w[1]] = false;
            }
        }
        let select = |v: &[f64], stride: usize| -> Vec<f64> {
            (0..self.len()).filter(|&i| keep[i]).flat_map(|i| v[i * stride..(i + 1) * stride].iter().copied()).collect()
        };
        Self {
            points: select(&self.points, self.dim),
            dim: self.dim,
            weights: self.weights.as_ref().map(|w| select(w, 1)),
            labels: self.labels.as_ref().map(|l| (0..self.len()).filter(|&i| keep[i]).map(|i| l[i]).collect()),
        }
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k >= self.len() {
            return Err(EstimatorError::Contract(format!("k = {k} must satisfy 1 <= k <= N - 1 = {}", self.len() - 1)));
        }
        Ok(())
    }
}

/// Entropy estimate in nats with its per-particle terms.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyEstimate {
    pub value: f64,
    pub k: usize,
    /// Per-particle summands; `value = mean(contributions) + ln k - ψ(k)`.
    pub contributions: Vec<f64>,
}

impl EntropyEstimate {
    pub fn bias_correction(&self) -> f64 {
        (self.k as f64).ln() - digamma(self.k as f64).expect("k >= 1")
    }
}

/// Euclidean distance from each point to its k-th nearest other point (k-d tree).
pub fn knn_distances(cloud: &ParticleCloud, k: usize) -> Result<Vec<f64>> {
    cloud.check_k(k)?;
    Ok(self_knn(&cloud.points, cloud.dim, k).iter().map(|nb| nb[k - 1].dist()).collect())
}

/// Brute-force reference for [`knn_distances`].
pub fn knn_distances_brute(cloud: &ParticleCloud, k: usize) -> Result<Vec<f64>> {
    cloud.check_k(k)?;
    Ok(self_knn_brute(&cloud.points, cloud.dim, k).iter().map(|nb| nb[k - 1].dist()).collect())
}

fn degenerate(radii: &[f64]) -> Result<()> {
    let indices: Vec<usize> = radii.iter().enumerate().filter(|(_, &r)| r == 0.0).map(|(i, _)| i).collect();
    if indices.is_empty() {
        Ok(())
    } else {
        Err(EstimatorError::DegenerateRadius { indices })
    }
}

/// k-NN differential entropy:
/// `Ĥ = -(1/N) Σ ln(k / (N V_i)) + ln k - ψ(k)` with `V_i` the volume of the
/// ball reaching the k-th neighbour of particle `i`.
pub fn entropy_knn(cloud: &ParticleCloud, k: usize) -> Result<EntropyEstimate> {
    let radii = knn_distances(cloud, k)?;
    degenerate(&radii)?;
    let n = cloud.len() as f64;
    let d = cloud.dim;
    let ln_k = (k as f64).ln();
    let contributions: Vec<f64> = radii.iter().map(|&r| -(ln_k - n.ln() - ln_ball_volume(d, r))).collect();
    let mean = contributions.iter().sum::<f64>() / n;
    let value = mean + ln_k - digamma(k as f64)?;
    Ok(EntropyEstimate { value, k, contributions })
}

/// Constant-free training signal: per particle `d · ln max(R_i, ε)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleLoss {
    pub total: f64,
    pub per_particle: Vec<f64>,
}

pub fn particle_loss(cloud: &ParticleCloud, k: usize) -> Result<ParticleLoss> {
    let radii = knn_distances(cloud, k)?;
    let d = cloud.dim as f64;
    let per_particle: Vec<f64> = radii.iter().map(|&r| d * r.max(DISTANCE_FLOOR).ln()).collect();
    Ok(ParticleLoss { total: per_particle.iter().sum(), per_particle })
}

/// Importance-weighted k-NN entropy:
/// `Ĥ = -(1/N) Σ_j W_j ln(W_j / V_j) + ln k - ψ(k)`, where `W_j` is the summed
/// weight of particle `j`'s `k` nearest neighbours after normalizing all
/// weights to sum to 1.
pub fn weighted_entropy(cloud: &ParticleCloud, k: usize) -> Result<EntropyEstimate> {
    let weights = cloud.weights().ok_or_else(|| EstimatorError::Contract("weighted entropy needs particle weights".into()))?;
    cloud.check_k(k)?;
    let total: f64 = weights.iter().sum();
    let neighbors = self_knn(&cloud.points, cloud.dim, k);
    let radii: Vec<f64> = neighbors.iter().map(|nb| nb[k - 1].dist()).collect();
    degenerate(&radii)?;
    let n = cloud.len() as f64;
    let contributions: Vec<f64> = neighbors
        .iter()
        .zip(&radii)
        .map(|(nb, &r)| {
            let w: f64 = nb.iter().map(|m| weights[m.index] / total).sum();
            -w * (w.ln() - ln_ball_volume(cloud.dim, r))
        })
        .collect();
    let value = contributions.iter().sum::<f64>() / n + (k as f64).ln() - digamma(k as f64)?;
    Ok(EntropyEstimate { value, k, contributions })
}

/// k-NN estimate of `KL(p ‖ q)` in nats:
/// `(d/n) Σ_i ln(ν_k(i) / ρ_k(i)) + ln(m / (n - 1))`.
pub fn kl_knn(p: &ParticleCloud, q: &ParticleCloud, k: usize) -> Result<f64> {
    if p.dim != q.dim {
        return Err(EstimatorError::Contract(format!("dimension {} vs {}", p.dim, q.dim)));
    }
    let (n, m) = (p.len(), q.len());
    if k == 0 || k > n - 1 || k > m {
        return Err(EstimatorError::Contract(format!("k = {k} must satisfy 1 <= k <= min(n - 1, m) = {}", (n - 1).min(m))));
    }
    let rho: Vec<f64> = self_knn(&p.points, p.dim, k).iter().map(|nb| nb[k - 1].dist()).collect();
    let nu: Vec<f64> = cross_knn(&p.points, &q.points, p.dim, k).iter().map(|nb| nb[k - 1].dist()).collect();
    degenerate(&rho)?;
    degenerate(&nu)?;
    let sum: f64 = rho.iter().zip(&nu).map(|(r, v)| (v / r).ln()).sum();
    Ok(p.dim as f64 / n as f64 * sum + (m as f64 / (n as f64 - 1.0)).ln())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diversity {
    /// `KL(head ‖ all other heads)` per head.
    pub per_head: Vec<f64>,
    pub mean: f64,
}

/// Mean over heads of the KL divergence between each head's cloud and the
/// union of every other head's cloud.
pub fn pairwise_diversity(clouds: &[ParticleCloud], k: usize) -> Result<Diversity> {
    if clouds.len() < 2 {
        return Err(EstimatorError::Contract("diversity needs at least 2 heads".into()));
    }
    let dim = clouds[0].dim;
    let per_head = (0..clouds.len())
        .map(|h| {
            let others: Vec<f64> = clouds.iter().enumerate().filter(|(j, _)| *j != h).flat_map(|(_, c)| c.points.iter().copied()).collect();
            kl_knn(&clouds[h], &ParticleCloud::new(others, dim)?, k)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = per_head.iter().sum::<f64>() / per_head.len() as f64;
    Ok(Diversity { per_head, mean })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> ParticleCloud {
        ParticleCloud::new(xs.to_vec(), 1).unwrap()
    }

    #[test]
    fn cloud_contracts() {
        assert!(ParticleCloud::new(vec![1.0], 1).is_err());
        assert!(ParticleCloud::new(vec![1.0, 2.0, 3.0], 2).is_err());
        assert!(ParticleCloud::new(vec![1.0, f64::NAN], 1).is_err());
        assert!(line(&[0.0, 1.0]).with_weights(vec![1.0, 0.0]).is_err());
        assert!(line(&[0.0, 1.0]).with_weights(vec![1.0]).is_err());
    }

    #[test]
    fn knn_hand_cases() {
        assert_eq!(knn_distances(&line(&[0.0, 0.5, 1.0]), 1).unwrap(), vec![0.5, 0.5, 0.5]);
        let c = ParticleCloud::new(vec![0.0, 0.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(knn_distances(&c, 1).unwrap(), vec![5.0, 5.0]);
        assert!(matches!(knn_distances(&c, 2), Err(EstimatorError::Contract(_))));
        assert!(matches!(knn_distances(&c, 0), Err(EstimatorError::Contract(_))));
    }

    #[test]
    fn entropy_three_point_case() {
        let e = entropy_knn(&line(&[0.0, 0.5, 1.0]), 1).unwrap();
        assert!((e.value - (3f64.ln() + EULER_GAMMA)).abs() < 1e-12);
        let agg = e.contributions.iter().sum::<f64>() / 3.0 + e.bias_correction();
        assert!((e.value - agg).abs() < 1e-12);
    }

    #[test]
    fn entropy_reports_degenerate_indices() {
        let err = entropy_knn(&line(&[0.0, 0.0, 1.0, 5.0]), 1).unwrap_err();
        assert_eq!(err, EstimatorError::DegenerateRadius { indices: vec![0, 1] });
    }

    #[test]
    fn particle_loss_cases() {
        let l = particle_loss(&line(&[0.0, 0.5, 1.0]), 1).unwrap();
        assert!((l.total - 3.0 * 0.5f64.ln()).abs() < 1e-12);
        let dup = particle_loss(&line(&[2.0, 2.0, 2.0]), 1).unwrap();
        assert!(dup.per_particle.iter().all(|&v| v == DISTANCE_FLOOR.ln()));
    }

    #[test]
    fn weighted_entropy_cases() {
        let c = line(&[0.0, 0.5, 1.0]).with_weights(vec![1.0 / 3.0; 3]).unwrap();
        let e = weighted_entropy(&c, 1).unwrap();
        assert!((e.value - (3f64.ln() / 3.0 + EULER_GAMMA)).abs() < 1e-12);

        // Spacing 1/8 with N = 4 gives V_j = 1/4 = W_j for uniform weights.
        let c = line(&[0.0, 0.125, 0.25, 0.375]).with_weights(vec![7.0; 4]).unwrap();
        let e = weighted_entropy(&c, 1).unwrap();
        assert!((e.value - (0.0 + EULER_GAMMA)).abs() < 1e-12);

        assert!(weighted_entropy(&line(&[0.0, 1.0, 2.0]), 1).is_err());
    }

    #[test]
    fn weighted_entropy_scale_free_for_uniform_weights() {
        let pts = [0.1, 0.4, 0.45, 0.9, 1.3, 2.2];
        let base = weighted_entropy(&line(&pts).with_weights(vec![1.0; 6]).unwrap(), 2).unwrap();
        for s in [1e-3, 0.5, 42.0, 1e6] {
            let e = weighted_entropy(&line(&pts).with_weights(vec![s; 6]).unwrap(), 2).unwrap();
            assert!((e.value - base.value).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_contracts_and_direction() {
        let p = line(&[0.0, 0.3, 0.7, 1.1, 1.6]);
        let q2 = ParticleCloud::new(vec![0.0, 0.0, 1.0, 1.0], 2).unwrap();
        assert!(kl_knn(&p, &q2, 1).is_err());
        assert!(kl_knn(&p, &line(&[0.0, 1.0]), 3).is_err());
        let near = kl_knn(&p, &p.translated(&[5.0]), 2).unwrap();
        let far = kl_knn(&p, &p.translated(&[50.0]), 2).unwrap();
        assert!(near > 0.0 && far > near);
    }

    #[test]
    fn diversity_contracts() {
        let a = line(&[0.0, 0.3, 0.7, 1.1]);
        assert!(pairwise_diversity(std::slice::from_ref(&a), 1).is_err());
        let d = pairwise_diversity(&[a.clone(), a.translated(&[100.0])], 2).unwrap();
        assert!(d.mean > 3.0);
        assert_eq!(d.per_head.len(), 2);
    }

    #[test]
    fn distinct_collapses_duplicates() {
        let c = ParticleCloud::new(vec![1.0, 2.0, 0.0, 0.0, 1.0, 2.0, 3.0, 3.0], 2).unwrap().with_labels(vec![0, 1, 2, 3]).unwrap();
        let d = c.distinct();
        assert_eq!(d.points(), &[1.0, 2.0, 0.0, 0.0, 3.0, 3.0]);
        assert_eq!(d.labels().unwrap(), &[0, 1, 3]);
    }
}
