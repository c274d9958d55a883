//! Agglomerative hierarchical clustering with a nearest-neighbor chain.
//!
//! Ward linkage runs on cluster centroids (the Lance-Williams recurrence for
//! Ward over squared Euclidean distances reduces to a closed form on
//! centroid distance and cluster sizes), so memory stays O(n*d) even for
//! large inputs. Average linkage keeps an explicit distance matrix and is
//! meant for the few-thousand-tile range.
//!
//! Both linkages are reducible, so the NN-chain merge order sorted by
//! distance yields a valid monotone dendrogram. Ties break on the smallest
//! member index, which makes the whole tree deterministic.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linkage {
    Ward,
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Euclidean,
    Cosine,
}

/// One dendrogram step: the clusters named by their smallest member index.
#[derive(Debug, Clone, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
}

/// Compute the full merge sequence (n-1 merges, non-decreasing distance).
pub fn linkage_merges(vectors: &[Vec<f64>], linkage: Linkage, metric: Metric) -> Result<Vec<Merge>> {
    if vectors.is_empty() {
        return Err(Error::Parameter("clustering requires at least one vector".into()));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::Parameter("vectors must share one dimension".into()));
    }
    let mut merges = match (linkage, metric) {
        (Linkage::Ward, Metric::Euclidean) => ward_nn_chain(vectors),
        (Linkage::Ward, Metric::Cosine) => {
            return Err(Error::Parameter(
                "ward linkage requires the euclidean metric".into(),
            ))
        }
        (Linkage::Average, metric) => average_nn_chain(vectors, metric),
    };
    merges.sort_by(|a, b| {
        a.distance
            .partial_cmp(&b.distance)
            .expect("finite distances")
            .then(a.left.cmp(&b.left))
            .then(a.right.cmp(&b.right))
    });
    Ok(merges)
}

/// Apply the first `n - k` merges and label the remaining clusters by
/// decreasing size (ties by smallest member index). Returns one label per
/// input vector, in `[0, k)`.
pub fn cut_to_k(merges: &[Merge], n: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > n {
        return Err(Error::Parameter(format!("k={k} outside 1..={n}")));
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        let mut root = i;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = i;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    for merge in merges.iter().take(n - k) {
        let a = find(&mut parent, merge.left);
        let b = find(&mut parent, merge.right);
        // Root at the smaller representative to keep labels stable.
        let (keep, fold) = if a < b { (a, b) } else { (b, a) };
        parent[fold] = keep;
    }
    let mut sizes: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
    for i in 0..n {
        *sizes.entry(find(&mut parent, i)).or_insert(0) += 1;
    }
    let mut order: Vec<(usize, usize)> = sizes.into_iter().collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let label_of: std::collections::HashMap<usize, usize> = order
        .iter()
        .enumerate()
        .map(|(label, (root, _))| (*root, label))
        .collect();
    Ok((0..n).map(|i| label_of[&find(&mut parent, i)]).collect())
}

struct WardCluster {
    size: f64,
    centroid: Vec<f64>,
    rep: usize,
}

fn ward_distance(a: &WardCluster, b: &WardCluster) -> f64 {
    let mut d2 = 0.0;
    for (x, y) in a.centroid.iter().zip(&b.centroid) {
        let d = x - y;
        d2 += d * d;
    }
    (2.0 * a.size * b.size / (a.size + b.size) * d2).sqrt()
}

fn ward_nn_chain(vectors: &[Vec<f64>]) -> Vec<Merge> {
    let n = vectors.len();
    let mut clusters: Vec<Option<WardCluster>> = vectors
        .iter()
        .enumerate()
        .map(|(i, v)| {
            Some(WardCluster {
                size: 1.0,
                centroid: v.clone(),
                rep: i,
            })
        })
        .collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let mut chain: Vec<usize> = Vec::new();
    while merges.len() + 1 < n {
        if chain.is_empty() {
            let start = clusters
                .iter()
                .position(|c| c.is_some())
                .expect("active cluster exists");
            chain.push(start);
        }
        let top = *chain.last().unwrap();
        let (mut best, mut best_d) = (usize::MAX, f64::INFINITY);
        let top_ref = clusters[top].as_ref().unwrap();
        for (j, c) in clusters.iter().enumerate() {
            if j == top {
                continue;
            }
            let Some(c) = c else { continue };
            let d = ward_distance(top_ref, c);
            let better = d < best_d
                || (d == best_d
                    && best != usize::MAX
                    && c.rep < clusters[best].as_ref().unwrap().rep);
            if better {
                best = j;
                best_d = d;
            }
        }
        if chain.len() >= 2 && chain[chain.len() - 2] == best {
            chain.pop();
            chain.pop();
            let a = clusters[top].take().unwrap();
            let b = clusters[best].take().unwrap();
            let size = a.size + b.size;
            let centroid: Vec<f64> = a
                .centroid
                .iter()
                .zip(&b.centroid)
                .map(|(x, y)| (a.size * x + b.size * y) / size)
                .collect();
            merges.push(Merge {
                left: a.rep.min(b.rep),
                right: a.rep.max(b.rep),
                distance: best_d,
            });
            clusters[top] = Some(WardCluster {
                size,
                centroid,
                rep: a.rep.min(b.rep),
            });
        } else {
            chain.push(best);
        }
    }
    merges
}

fn pair_distance(a: &[f64], b: &[f64], metric: Metric) -> f64 {
    match metric {
        Metric::Euclidean => {
            let mut d2 = 0.0;
            for (x, y) in a.iter().zip(b) {
                let d = x - y;
                d2 += d * d;
            }
            d2.sqrt()
        }
        Metric::Cosine => {
            let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
            for (x, y) in a.iter().zip(b) {
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
            if na == 0.0 || nb == 0.0 {
                return 1.0;
            }
            1.0 - dot / (na.sqrt() * nb.sqrt())
        }
    }
}

fn average_nn_chain(vectors: &[Vec<f64>], metric: Metric) -> Vec<Merge> {
    let n = vectors.len();
    let mut dist = vec![0.0f64; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = pair_distance(&vectors[i], &vectors[j], metric);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut size: Vec<f64> = vec![1.0; n];
    let mut rep: Vec<usize> = (0..n).collect();
    let mut alive: Vec<bool> = vec![true; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let mut chain: Vec<usize> = Vec::new();
    while merges.len() + 1 < n {
        if chain.is_empty() {
            chain.push(alive.iter().position(|&a| a).expect("active cluster"));
        }
        let top = *chain.last().unwrap();
        let (mut best, mut best_d) = (usize::MAX, f64::INFINITY);
        for j in 0..n {
            if j == top || !alive[j] {
                continue;
            }
            let d = dist[top * n + j];
            let better =
                d < best_d || (d == best_d && best != usize::MAX && rep[j] < rep[best]);
            if better {
                best = j;
                best_d = d;
            }
        }
        if chain.len() >= 2 && chain[chain.len() - 2] == best {
            chain.pop();
            chain.pop();
            merges.push(Merge {
                left: rep[top].min(rep[best]),
                right: rep[top].max(rep[best]),
                distance: best_d,
            });
            // Lance-Williams update for average linkage, folded into `top`.
            let (sa, sb) = (size[top], size[best]);
            for j in 0..n {
                if alive[j] && j != top && j != best {
                    let d = (sa * dist[top * n + j] + sb * dist[best * n + j]) / (sa + sb);
                    dist[top * n + j] = d;
                    dist[j * n + top] = d;
                }
            }
            size[top] = sa + sb;
            rep[top] = rep[top].min(rep[best]);
            alive[best] = false;
        } else {
            chain.push(best);
        }
    }
    merges
}
