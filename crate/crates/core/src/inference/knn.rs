use serde::{Deserialize, Serialize};

use super::{AttentionLabel, InferenceError, StateModel};
use crate::features::FeatureVector;

const DIMS: usize = FeatureVector::DIMS;

/// k-nearest-neighbor classifier over min-max normalized feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    k: usize,
    lo: [f64; DIMS],
    hi: [f64; DIMS],
    points: Vec<([f64; DIMS], AttentionLabel)>,
}

impl KnnModel {
    pub fn fit(labeled: &[(FeatureVector, AttentionLabel)], k: usize) -> Result<Self, InferenceError> {
        if labeled.is_empty() {
            return Err(InferenceError::EmptyTrainingSet);
        }
        if k == 0 || k % 2 == 0 {
            return Err(InferenceError::InvalidK(k));
        }
        if k > labeled.len() {
            return Err(InferenceError::KTooLarge {
                k,
                points: labeled.len(),
            });
        }
        let mut lo = [f64::INFINITY; DIMS];
        let mut hi = [f64::NEG_INFINITY; DIMS];
        for (fv, _) in labeled {
            for (d, v) in fv.to_array().into_iter().enumerate() {
                lo[d] = lo[d].min(v);
                hi[d] = hi[d].max(v);
            }
        }
        let mut m = KnnModel {
            k,
            lo,
            hi,
            points: Vec::with_capacity(labeled.len()),
        };
        m.points = labeled
            .iter()
            .map(|(fv, l)| (m.normalize(fv), *l))
            .collect();
        Ok(m)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Maps into the training bounding box; constant dimensions map to 0.
    /// Queries outside the box may fall outside `[0, 1]`.
    pub fn normalize(&self, fv: &FeatureVector) -> [f64; DIMS] {
        let mut out = fv.to_array();
        for (d, v) in out.iter_mut().enumerate() {
            let span = self.hi[d] - self.lo[d];
            *v = if span > 0.0 { (*v - self.lo[d]) / span } else { 0.0 };
        }
        out
    }

    pub fn predict(&self, fv: &FeatureVector) -> AttentionLabel {
        let q = self.normalize(fv);
        let mut dist: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, (p, _))| (euclidean(&q, p), i))
            .collect();
        // Index as secondary key keeps the neighbor set stable under distance ties.
        dist.select_nth_unstable_by(self.k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut votes = [(0usize, 0.0f64); AttentionLabel::ALL.len()];
        for &(d, i) in &dist[..self.k] {
            let v = &mut votes[self.points[i].1.index()];
            v.0 += 1;
            v.1 += d;
        }
        let mut best: Option<(AttentionLabel, usize, f64)> = None;
        for label in AttentionLabel::ALL {
            let (n, sum) = votes[label.index()];
            if n == 0 {
                continue;
            }
            let mean = sum / n as f64;
            let better = match best {
                None => true,
                Some((bl, bn, bm)) => {
                    n > bn || (n == bn && (mean < bm || (mean == bm && label.as_str() < bl.as_str())))
                }
            };
            if better {
                best = Some((label, n, mean));
            }
        }
        best.expect("k >= 1").0
    }
}

impl StateModel for KnnModel {
    fn predict(&self, fv: &FeatureVector) -> Result<AttentionLabel, InferenceError> {
        Ok(KnnModel::predict(self, fv))
    }
}

fn euclidean(a: &[f64; DIMS], b: &[f64; DIMS]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
