//! Isolation forest (Liu, Ting & Zhou) built from scratch.
//!
//! Each tree is grown on a psi-point subsample drawn without replacement. At
//! every internal node the split attribute is drawn uniformly among the
//! attributes that still vary inside the node, and the split value uniformly
//! inside that attribute's `(min, max)` range. Growth stops at
//! `ceil(log2(psi))` or when a node holds at most one point (or nothing can be
//! split). Random draws happen in pre-order, left subtree first, from a single
//! ChaCha8 stream seeded by `seed`.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::InferenceError;
use crate::features::FeatureVector;

const EULER_GAMMA: f64 = 0.5772156649;

/// Average path length of an unsuccessful BST search over `n` points:
/// `c(n) = 2 H(n-1) - 2 (n-1) / n`, with `H(i) = ln i + gamma` and `c(1) = 0`.
pub fn c_factor(n: u64) -> Result<f64, InferenceError> {
    match n {
        0 => Err(InferenceError::NonPositiveN),
        1 => Ok(0.0),
        _ => {
            let n = n as f64;
            Ok(2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n)
        }
    }
}

fn c_of(n: usize) -> f64 {
    c_factor(n.max(1) as u64).expect("n >= 1")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Internal {
        attr: u32,
        split: f64,
        left: u32,
        right: u32,
    },
    External {
        size: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationTree {
    nodes: Vec<Node>,
}

impl IsolationTree {
    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn node(&self, i: u32) -> &Node {
        &self.nodes[i as usize]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn height(&self) -> usize {
        let mut best = 0;
        let mut stack = vec![(0u32, 0usize)];
        while let Some((i, d)) = stack.pop() {
            match self.nodes[i as usize] {
                Node::External { .. } => best = best.max(d),
                Node::Internal { left, right, .. } => {
                    stack.push((left, d + 1));
                    stack.push((right, d + 1));
                }
            }
        }
        best
    }

    /// Path length `h(x)`: edges traversed plus `c(size)` at the leaf.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut i = 0u32;
        let mut edges = 0.0;
        loop {
            match self.nodes[i as usize] {
                Node::External { size } => return edges + c_of(size as usize),
                Node::Internal {
                    attr,
                    split,
                    left,
                    right,
                } => {
                    i = if x[attr as usize] < split { left } else { right };
                    edges += 1.0;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForestModel {
    dims: usize,
    psi: usize,
    seed: u64,
    trees: Vec<IsolationTree>,
    /// Dimensions with zero range over the whole training set.
    unsplittable: Vec<bool>,
}

struct Builder<'a, P> {
    points: &'a [P],
    limit: usize,
    rng: &'a mut ChaCha8Rng,
    nodes: Vec<Node>,
}

impl<P: AsRef<[f64]>> Builder<'_, P> {
    fn grow(&mut self, idx: &mut [usize], depth: usize) -> u32 {
        let me = self.nodes.len() as u32;
        self.nodes.push(Node::External {
            size: idx.len() as u32,
        });
        if depth >= self.limit || idx.len() <= 1 {
            return me;
        }
        let dims = self.points[idx[0]].as_ref().len();
        let ranges: Vec<(usize, f64, f64)> = (0..dims)
            .filter_map(|a| {
                let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    let v = self.points[i].as_ref()[a];
                    (lo.min(v), hi.max(v))
                });
                (hi > lo).then_some((a, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return me;
        }
        let (attr, lo, hi) = ranges[self.rng.random_range(0..ranges.len())];
        let split = loop {
            let u: f64 = self.rng.random();
            let p = lo + u * (hi - lo);
            if p > lo && p <= hi {
                break p;
            }
        };
        let mut mid = 0;
        for j in 0..idx.len() {
            if self.points[idx[j]].as_ref()[attr] < split {
                idx.swap(mid, j);
                mid += 1;
            }
        }
        let (l, r) = idx.split_at_mut(mid);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[me as usize] = Node::Internal {
            attr: attr as u32,
            split,
            left,
            right,
        };
        me
    }
}

/// Height limit `ceil(log2(psi))`.
pub fn height_limit(psi: usize) -> usize {
    (psi as f64).log2().ceil() as usize
}

impl IsolationForestModel {
    /// Fits `trees` isolation trees on `psi`-point subsamples of `points`.
    pub fn fit<P: AsRef<[f64]>>(
        points: &[P],
        trees: usize,
        psi: usize,
        seed: u64,
    ) -> Result<Self, InferenceError> {
        if trees == 0 {
            return Err(InferenceError::InvalidParameter("tree count must be >= 1"));
        }
        if psi < 2 {
            return Err(InferenceError::InvalidParameter("psi must be >= 2"));
        }
        if points.len() < psi {
            return Err(InferenceError::TooFewPoints {
                have: points.len(),
                need: psi,
            });
        }
        let dims = points[0].as_ref().len();
        if dims == 0 {
            return Err(InferenceError::InvalidParameter("points have no dimensions"));
        }
        if let Some(p) = points.iter().find(|p| p.as_ref().len() != dims) {
            return Err(InferenceError::DimensionMismatch {
                expected: dims,
                got: p.as_ref().len(),
            });
        }
        let unsplittable = (0..dims)
            .map(|a| {
                let first = points[0].as_ref()[a];
                points.iter().all(|p| p.as_ref()[a] == first)
            })
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let limit = height_limit(psi);
        let mut forest = Vec::with_capacity(trees);
        for _ in 0..trees {
            let mut idx = rand::seq::index::sample(&mut rng, points.len(), psi).into_vec();
            let mut b = Builder {
                points,
                limit,
                rng: &mut rng,
                nodes: Vec::new(),
            };
            b.grow(&mut idx, 0);
            forest.push(IsolationTree { nodes: b.nodes });
        }
        Ok(IsolationForestModel {
            dims,
            psi,
            seed,
            trees: forest,
            unsplittable,
        })
    }

    pub fn trees(&self) -> &[IsolationTree] {
        &self.trees
    }

    pub fn psi(&self) -> usize {
        self.psi
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn unsplittable(&self) -> &[bool] {
        &self.unsplittable
    }

    /// Mean path length `E(h(x))` over all trees.
    pub fn expected_path_length(&self, x: &[f64]) -> Result<f64, InferenceError> {
        if x.len() != self.dims {
            return Err(InferenceError::DimensionMismatch {
                expected: self.dims,
                got: x.len(),
            });
        }
        let total: f64 = self.trees.iter().map(|t| t.path_length(x)).sum();
        Ok(total / self.trees.len() as f64)
    }

    /// Anomaly score `s(x) = 2^(-E(h(x)) / c(psi))`, in `(0, 1]`.
    pub fn score(&self, x: &[f64]) -> Result<f64, InferenceError> {
        let e = self.expected_path_length(x)?;
        Ok(score_from_path(e, self.psi))
    }

    const MAGIC: &'static [u8; 4] = b"FLIF";
    const VERSION: u8 = 1;

    /// Versioned little-endian binary encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(Self::MAGIC);
        out.push(Self::VERSION);
        out.extend_from_slice(&(self.dims as u32).to_le_bytes());
        out.extend_from_slice(&(self.psi as u32).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend(self.unsplittable.iter().map(|&b| u8::from(b)));
        out.extend_from_slice(&(self.trees.len() as u32).to_le_bytes());
        for tree in &self.trees {
            out.extend_from_slice(&(tree.nodes.len() as u32).to_le_bytes());
            for node in &tree.nodes {
                match *node {
                    Node::Internal {
                        attr,
                        split,
                        left,
                        right,
                    } => {
                        out.push(0);
                        out.extend_from_slice(&attr.to_le_bytes());
                        out.extend_from_slice(&split.to_le_bytes());
                        out.extend_from_slice(&left.to_le_bytes());
                        out.extend_from_slice(&right.to_le_bytes());
                    }
                    Node::External { size } => {
                        out.push(1);
                        out.extend_from_slice(&size.to_le_bytes());
                    }
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, InferenceError> {
        let mut r = Reader { buf: bytes };
        if r.take(4)? != Self::MAGIC {
            return Err(InferenceError::Decode("bad magic"));
        }
        if r.u8()? != Self::VERSION {
            return Err(InferenceError::Decode("unsupported version"));
        }
        let dims = r.u32()? as usize;
        let psi = r.u32()? as usize;
        let seed = r.u64()?;
        let unsplittable = r.take(dims)?.iter().map(|&b| b != 0).collect();
        let ntrees = r.u32()? as usize;
        let mut trees = Vec::with_capacity(ntrees.min(4096));
        for _ in 0..ntrees {
            let n = r.u32()? as usize;
            let mut nodes = Vec::with_capacity(n.min(1 << 16));
            for _ in 0..n {
                nodes.push(match r.u8()? {
                    0 => Node::Internal {
                        attr: r.u32()?,
                        split: f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")),
                        left: r.u32()?,
                        right: r.u32()?,
                    },
                    1 => Node::External { size: r.u32()? },
                    _ => return Err(InferenceError::Decode("bad node tag")),
                });
            }
            let ok = !nodes.is_empty()
                && nodes.iter().all(|node| match *node {
                    Node::Internal { attr, left, right, .. } => {
                        (attr as usize) < dims && (left as usize) < n && (right as usize) < n
                    }
                    Node::External { .. } => true,
                });
            if !ok {
                return Err(InferenceError::Decode("malformed tree"));
            }
            trees.push(IsolationTree { nodes });
        }
        if !r.buf.is_empty() || trees.is_empty() || psi < 2 {
            return Err(InferenceError::Decode("trailing bytes or empty forest"));
        }
        Ok(IsolationForestModel {
            dims,
            psi,
            seed,
            trees,
            unsplittable,
        })
    }
}

/// `2^(-e / c(psi))`.
pub fn score_from_path(expected_path: f64, psi: usize) -> f64 {
    2f64.powf(-expected_path / c_of(psi))
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], InferenceError> {
        if self.buf.len() < n {
            return Err(InferenceError::Decode("truncated"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }
    fn u8(&mut self) -> Result<u8, InferenceError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, InferenceError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64, InferenceError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub trees: usize,
    pub psi: usize,
    /// Snapshots collected before the first fit.
    pub warmup: usize,
    /// Snapshots between refits; 0 disables refitting.
    pub refit_every: usize,
    /// Rolling training buffer size.
    pub buffer: usize,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            trees: 100,
            psi: 256,
            warmup: 512,
            refit_every: 2880,
            buffer: 4096,
            seed: 0x5eed,
        }
    }
}

/// Online wrapper: buffers feature snapshots, fits once enough normal
/// behavior has been seen and refits periodically.
#[derive(Debug, Clone)]
pub struct AnomalyDetector {
    cfg: DetectorConfig,
    model: Option<IsolationForestModel>,
    buffer: VecDeque<[f64; 5]>,
    since_fit: usize,
    fits: u64,
    frozen: bool,
}

impl AnomalyDetector {
    pub fn new(cfg: DetectorConfig) -> Self {
        AnomalyDetector {
            cfg,
            model: None,
            buffer: VecDeque::new(),
            since_fit: 0,
            fits: 0,
            frozen: false,
        }
    }

    /// Detector around a pre-fitted model that is never refitted.
    pub fn with_model(model: IsolationForestModel) -> Self {
        AnomalyDetector {
            model: Some(model),
            frozen: true,
            ..Self::new(DetectorConfig::default())
        }
    }

    pub fn model(&self) -> Option<&IsolationForestModel> {
        self.model.as_ref()
    }

    pub fn is_fitted(&self) -> bool {
        self.model.is_some()
    }

    /// Adds a snapshot to the training buffer; returns true when this call
    /// produced a new model.
    pub fn observe(&mut self, fv: &FeatureVector) -> bool {
        if self.frozen {
            return false;
        }
        self.buffer.push_back(fv.anomaly_features());
        if self.buffer.len() > self.cfg.buffer {
            self.buffer.pop_front();
        }
        self.since_fit += 1;
        let due = match self.model {
            None => self.buffer.len() >= self.cfg.warmup.max(self.cfg.psi),
            Some(_) => self.cfg.refit_every > 0 && self.since_fit >= self.cfg.refit_every,
        };
        if !due {
            return false;
        }
        let pts: Vec<[f64; 5]> = self.buffer.iter().copied().collect();
        let seed = self.cfg.seed.wrapping_add(self.fits);
        match IsolationForestModel::fit(&pts, self.cfg.trees, self.cfg.psi, seed) {
            Ok(m) => {
                self.model = Some(m);
                self.fits += 1;
                self.since_fit = 0;
                true
            }
            Err(_) => false,
        }
    }

    pub fn score(&self, fv: &FeatureVector) -> Result<f64, InferenceError> {
        self.model
            .as_ref()
            .ok_or(InferenceError::UnfittedModel)?
            .score(&fv.anomaly_features())
    }
}
