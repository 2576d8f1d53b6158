//! Foreground/background pixel graphs and the Laplacian smoothing penalty.
//!
//! For one label patch `t` two complete graphs are built, one over sampled
//! foreground pixels (`t >= 0.5`) and one over sampled background pixels.
//! Every pair of nodes `(j, k)` in a graph is joined by an edge of weight
//! `beta = 1 - |t_j - t_k|`. With `A` the weight matrix and `D` its row sums,
//! the region Laplacian is `L = D - A` and
//!
//! ```text
//! y' L y = sum over unordered pairs {j, k} of beta_jk * (y_j - y_k)^2
//! ```
//!
//! The penalty for the patch is `S = y_F' L_F y_F + y_B' L_B y_B`, where
//! `y_F` and `y_B` gather the predictions at the two node sets. Matrices are
//! stored dense; node counts are kept small by sampling.

use rand::Rng;

use crate::error::{Error, Result};

/// Labels at or above this value belong to the foreground region.
pub const FOREGROUND_THRESHOLD: f64 = 0.5;

/// Default number of sampled nodes per region and patch.
pub const DEFAULT_SAMPLE_M: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Foreground,
    Background,
}

impl Region {
    #[inline]
    pub fn contains(self, label: f64) -> bool {
        match self {
            Region::Foreground => label >= FOREGROUND_THRESHOLD,
            Region::Background => label < FOREGROUND_THRESHOLD,
        }
    }
}

/// Complete graph over a sampled node set of one region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionGraph {
    region: Region,
    nodes: Vec<usize>,
    /// Row-major `m x m` symmetric weights with zero diagonal.
    weights: Vec<f64>,
}

impl RegionGraph {
    pub fn region(&self) -> Region {
        self.region
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn weight(&self, j: usize, k: usize) -> f64 {
        self.weights[j * self.nodes.len() + k]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of undirected edges with nonzero weight.
    pub fn edge_count(&self) -> usize {
        let m = self.len();
        (0..m)
            .flat_map(|j| (j + 1..m).map(move |k| (j, k)))
            .filter(|&(j, k)| self.weight(j, k) != 0.0)
            .count()
    }
}

/// Dense region Laplacian `L = D - A` over a node set.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionLaplacian {
    nodes: Vec<usize>,
    matrix: Vec<f64>,
}

impl RegionLaplacian {
    pub fn empty() -> Self {
        Self {
            nodes: Vec::new(),
            matrix: Vec::new(),
        }
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    #[inline]
    pub fn entry(&self, j: usize, k: usize) -> f64 {
        self.matrix[j * self.nodes.len() + k]
    }

    /// Row-major `m x m` matrix.
    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    /// `L v` for a vector already gathered at the node set.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let m = self.len();
        debug_assert_eq!(v.len(), m);
        self.matrix
            .chunks_exact(m.max(1))
            .take(m)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `v' L v` for a vector already gathered at the node set, evaluated as
    /// the weighted sum of squared differences so constant vectors give
    /// exactly zero.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        self.form_and_gradient(v).0
    }

    /// `v' L v` and its gradient `2 L v`, both from pairwise differences.
    pub fn form_and_gradient(&self, v: &[f64]) -> (f64, Vec<f64>) {
        let m = self.len();
        debug_assert_eq!(v.len(), m);
        let mut value = 0.0;
        let mut grad = vec![0.0; m];
        for j in 0..m {
            for k in j + 1..m {
                let w = -self.matrix[j * m + k];
                let d = v[j] - v[k];
                value += w * d * d;
                grad[j] += 2.0 * w * d;
                grad[k] -= 2.0 * w * d;
            }
        }
        (value, grad)
    }
}

/// The penalty `S` for one patch and its gradient with respect to every
/// patch pixel (zero outside the sampled nodes).
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingResult {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Foreground and background Laplacians for one patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchLaplacians {
    pub foreground: RegionLaplacian,
    pub background: RegionLaplacian,
}

impl PatchLaplacians {
    /// Sample `m` nodes per region from `labels` and assemble both Laplacians.
    /// Foreground is sampled first, so the draw order is fixed per seed.
    pub fn sample<R: Rng + ?Sized>(labels: &[f64], m: usize, rng: &mut R) -> Result<Self> {
        let build = |region, rng: &mut R| -> Result<RegionLaplacian> {
            let nodes = sample_region_nodes(labels, region, m, rng);
            Ok(laplacian(&build_region_graph(&nodes, labels, region)?))
        };
        let foreground = build(Region::Foreground, rng)?;
        let background = build(Region::Background, rng)?;
        Ok(Self {
            foreground,
            background,
        })
    }

    pub fn smoothing(&self, y: &[f64]) -> Result<SmoothingResult> {
        smoothing(&self.foreground, &self.background, y)
    }
}

/// Edge weight `1 - |t_j - t_k|` between two label values.
pub fn similarity(t_j: f64, t_k: f64) -> Result<f64> {
    for t in [t_j, t_k] {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidLabel(t));
        }
    }
    Ok(1.0 - (t_j - t_k).abs())
}

/// Draw `min(m, available)` distinct pixel indices of `region` uniformly
/// without replacement. Candidates are enumerated in pixel order before the
/// draw, so the result depends only on the labels and the random stream.
pub fn sample_region_nodes<R: Rng + ?Sized>(
    labels: &[f64],
    region: Region,
    m: usize,
    rng: &mut R,
) -> Vec<usize> {
    let candidates: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, &t)| region.contains(t))
        .map(|(i, _)| i)
        .collect();
    let amount = m.min(candidates.len());
    if amount == 0 {
        return Vec::new();
    }
    rand::seq::index::sample(rng, candidates.len(), amount)
        .into_iter()
        .map(|i| candidates[i])
        .collect()
}

/// Complete graph over `nodes` with label-similarity weights.
pub fn build_region_graph(nodes: &[usize], labels: &[f64], region: Region) -> Result<RegionGraph> {
    let mut seen = vec![false; labels.len()];
    for &n in nodes {
        if n >= labels.len() {
            return Err(Error::InvalidGraph(format!(
                "node {n} outside patch of {} pixels",
                labels.len()
            )));
        }
        if std::mem::replace(&mut seen[n], true) {
            return Err(Error::InvalidGraph(format!("duplicate node {n}")));
        }
    }

    let m = nodes.len();
    let mut weights = vec![0.0; m * m];
    for j in 0..m {
        for k in j + 1..m {
            let w = similarity(labels[nodes[j]], labels[nodes[k]])?;
            weights[j * m + k] = w;
            weights[k * m + j] = w;
        }
    }
    Ok(RegionGraph {
        region,
        nodes: nodes.to_vec(),
        weights,
    })
}

/// `L = D - A` with `D` the diagonal of row sums of the weight matrix.
pub fn laplacian(graph: &RegionGraph) -> RegionLaplacian {
    let m = graph.len();
    let mut matrix: Vec<f64> = graph.weights.iter().map(|&w| -w).collect();
    for j in 0..m {
        let degree: f64 = graph.weights[j * m..(j + 1) * m].iter().sum();
        matrix[j * m + j] = degree;
    }
    RegionLaplacian {
        nodes: graph.nodes.clone(),
        matrix,
    }
}

/// `S = y_F' L_F y_F + y_B' L_B y_B` and `dS/dy = 2 L y` scattered back to
/// the patch. Each undirected edge is counted once in `S`.
pub fn smoothing(
    l_f: &RegionLaplacian,
    l_b: &RegionLaplacian,
    y: &[f64],
) -> Result<SmoothingResult> {
    let mut value = 0.0;
    let mut gradient = vec![0.0; y.len()];
    for lap in [l_f, l_b] {
        if let Some(&bad) = lap.nodes.iter().find(|&&n| n >= y.len()) {
            return Err(Error::InvalidGraph(format!(
                "node {bad} outside prediction of {} pixels",
                y.len()
            )));
        }
        if lap.is_empty() {
            continue;
        }
        let gathered: Vec<f64> = lap.nodes.iter().map(|&n| y[n]).collect();
        let (v, g) = lap.form_and_gradient(&gathered);
        value += v;
        for (&n, g) in lap.nodes.iter().zip(&g) {
            gradient[n] += g;
        }
    }
    // A PSD form can still come out at -1e-17 from roundoff.
    Ok(SmoothingResult {
        value,
        gradient,
    })
}
