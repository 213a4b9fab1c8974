//! Labelled datasets, client shards and heterogeneous partitioners.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};

use super::idx::IdxImages;
use crate::error::{Error, Result};
use crate::rng::{Domain, Lane, RngStream};

/// Classification dataset: one feature row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    /// `num_classes` defaults to `max(label) + 1`.
    pub fn new(features: Array2<f64>, labels: Vec<usize>, num_classes: Option<usize>) -> Result<Self> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::InvalidInput("dataset needs at least one sample".into()));
        }
        if labels.len() != n {
            return Err(Error::InvalidInput(format!(
                "{n} feature rows but {} labels",
                labels.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        let seen = labels.iter().copied().max().unwrap_or(0) + 1;
        let num_classes = num_classes.unwrap_or(seen);
        if seen > num_classes {
            return Err(Error::InvalidInput(format!(
                "label {} out of range for {num_classes} classes",
                seen - 1
            )));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Number of samples per class.
    pub fn class_histogram(&self, indices: &[usize]) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &i in indices {
            h[self.labels[i]] += 1;
        }
        h
    }
}

/// Samples held by one client.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientShard {
    pub owner: usize,
    pub sample_indices: Vec<usize>,
}

impl ClientShard {
    pub fn len(&self) -> usize {
        self.sample_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_indices.is_empty()
    }
}

/// Checks that shards are pairwise disjoint and cover `0..n_samples`.
pub fn is_disjoint_cover(shards: &[ClientShard], n_samples: usize) -> bool {
    let mut seen = vec![false; n_samples];
    for s in shards {
        for &i in &s.sample_indices {
            if i >= n_samples || seen[i] {
                return false;
            }
            seen[i] = true;
        }
    }
    seen.into_iter().all(|b| b)
}

pub fn empty_shards(shards: &[ClientShard]) -> Vec<usize> {
    shards.iter().filter(|s| s.is_empty()).map(|s| s.owner).collect()
}

/// Label-sorted split: stable sort keyed `(label, index)`, then contiguous
/// equal slices with the remainder going to the last client.
pub fn partition_sorted_by_label(ds: &Dataset, n: usize) -> Result<Vec<ClientShard>> {
    let total = ds.len();
    if n == 0 || n > total {
        return Err(Error::TooManyClients {
            clients: n,
            samples: total,
        });
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by_key(|&i| (ds.labels[i], i));
    let per = total / n;
    Ok((0..n)
        .map(|owner| {
            let start = owner * per;
            let end = if owner + 1 == n { total } else { start + per };
            ClientShard {
                owner,
                sample_indices: order[start..end].to_vec(),
            }
        })
        .collect())
}

/// Per-class Dirichlet split. For each class the (shuffled) indices are cut
/// by proportions drawn from `Dirichlet(alpha * 1_n)`, rounded with the
/// largest-remainder rule. Empty shards are allowed.
pub fn partition_dirichlet(ds: &Dataset, n: usize, alpha: f64, rng: &mut RngStream) -> Result<Vec<ClientShard>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "dirichlet alpha must be positive, got {alpha}"
        )));
    }
    if n == 0 {
        return Err(Error::TooManyClients {
            clients: 0,
            samples: ds.len(),
        });
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut shards: Vec<ClientShard> = (0..n)
        .map(|owner| ClientShard {
            owner,
            sample_indices: Vec::new(),
        })
        .collect();
    for class in 0..ds.num_classes {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| ds.labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(rng);
        let mut weights: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let total: f64 = weights.iter().sum();
        if total > 0.0 && total.is_finite() {
            weights.iter_mut().for_each(|w| *w /= total);
        } else {
            // every gamma draw underflowed; degenerate Dirichlet mass at one vertex
            let k = rng.random_range(0..n);
            weights = (0..n).map(|j| if j == k { 1.0 } else { 0.0 }).collect();
        }
        let counts = largest_remainder(&weights, members.len());
        let mut start = 0;
        for (owner, c) in counts.into_iter().enumerate() {
            shards[owner]
                .sample_indices
                .extend_from_slice(&members[start..start + c]);
            start += c;
        }
    }
    for s in &mut shards {
        s.sample_indices.sort_unstable();
    }
    Ok(shards)
}

fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let exact: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // ties go to the lower client index
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &j in order.iter().take(total.saturating_sub(assigned)) {
        counts[j] += 1;
    }
    counts
}

/// Shannon entropy (nats) of a shard's label histogram; 0 for empty shards.
pub fn label_entropy(ds: &Dataset, shard: &ClientShard) -> f64 {
    let h = ds.class_histogram(&shard.sample_indices);
    let n = shard.len() as f64;
    if n == 0.0 {
        return 0.0;
    }
    h.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Handwriting-like synthetic images: each class is a fixed pattern of a few
/// Gaussian strokes, each sample a jittered, noisy, 8-bit quantised copy.
/// `seed` fixes the class patterns; `split` selects an independent sample
/// stream over the same patterns (e.g. 0 for train, 1 for test).
/// Returned in IDX layout so it can go through the same loader as real data.
pub fn synthetic_digits(samples: usize, side: usize, classes: usize, seed: u64, split: u32) -> (IdxImages, Vec<u8>) {
    assert!((1..=256).contains(&classes) && side >= 2);
    let lane = Lane {
        round: u32::MAX,
        client: 0,
        step: 0,
    };
    let mut rng = RngStream::new(seed, Domain::Problem, lane);
    let unit = |r: &mut RngStream| r.random::<f64>();
    let side_f = side as f64;
    let mut prototypes = Vec::with_capacity(classes);
    for _ in 0..classes {
        let strokes: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                let cx = 0.2 * side_f + 0.6 * side_f * unit(&mut rng);
                let cy = 0.2 * side_f + 0.6 * side_f * unit(&mut rng);
                let w = 0.08 * side_f + 0.12 * side_f * unit(&mut rng);
                let amp = 0.6 + 0.4 * unit(&mut rng);
                (cx, cy, w, amp)
            })
            .collect();
        prototypes.push(strokes);
    }
    let mut rng = RngStream::new(
        seed,
        Domain::Problem,
        Lane {
            round: u32::MAX,
            client: 1,
            step: split,
        },
    );
    let noise = Normal::new(0.0, 0.12).unwrap();
    let mut labels: Vec<u8> = (0..samples).map(|k| (k % classes) as u8).collect();
    labels.shuffle(&mut rng);
    let mut pixels = Vec::with_capacity(samples * side * side);
    for &lab in &labels {
        let dx = rng.random_range(-1.0..1.0);
        let dy = rng.random_range(-1.0..1.0);
        for r in 0..side {
            for c in 0..side {
                let mut v = 0.0;
                for &(cx, cy, w, amp) in &prototypes[lab as usize] {
                    let ex = c as f64 - cx - dx;
                    let ey = r as f64 - cy - dy;
                    v += amp * (-(ex * ex + ey * ey) / (2.0 * w * w)).exp();
                }
                v += noise.sample(&mut rng);
                pixels.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    (
        IdxImages {
            count: samples,
            rows: side,
            cols: side,
            pixels,
        },
        labels,
    )
}

/// [`synthetic_digits`] loaded directly as a dataset.
pub fn synthetic_digits_dataset(samples: usize, side: usize, classes: usize, seed: u64, split: u32) -> Dataset {
    let (images, labels) = synthetic_digits(samples, side, classes, seed, split);
    Dataset::new(
        images.to_features(),
        labels.into_iter().map(|l| l as usize).collect(),
        Some(classes),
    )
    .expect("synthetic data is well formed")
}
