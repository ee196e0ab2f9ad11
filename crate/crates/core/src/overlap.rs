//! Overlap between multi-hot label vectors and the per-anchor positive sets
//! built from it.

use serde::{Deserialize, Serialize};

use crate::error::{input, Result};

/// Multi-hot class membership vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelVector(Vec<u8>);

impl LabelVector {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(b) = bits.iter().find(|b| **b > 1) {
            return input(format!("label entries must be 0 or 1, got {b}"));
        }
        Ok(Self(bits))
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        Self(bits.iter().map(|b| u8::from(*b)).collect())
    }

    /// Vector with ones at the given class indices.
    pub fn from_active(num_classes: usize, active: &[usize]) -> Result<Self> {
        let mut bits = vec![0u8; num_classes];
        for &k in active {
            if k >= num_classes {
                return input(format!("class {k} out of range for {num_classes} classes"));
            }
            bits[k] = 1;
        }
        Ok(Self(bits))
    }

    pub fn bits(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, k: usize) -> bool {
        self.0[k] == 1
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|b| **b == 1).count()
    }

    pub fn is_zero(&self) -> bool {
        self.count() == 0
    }

    fn dot(&self, other: &Self) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| **a == 1 && **b == 1).count()
    }
}

fn check_lengths(a: &LabelVector, b: &LabelVector) -> Result<()> {
    if a.len() != b.len() {
        return input(format!("label vectors have lengths {} and {}", a.len(), b.len()));
    }
    Ok(())
}

/// Jaccard index `a·b / (‖a‖² + ‖b‖² − a·b)`. Zero when both are all-zero.
pub fn jaccard(a: &LabelVector, b: &LabelVector) -> Result<f64> {
    check_lengths(a, b)?;
    let inter = a.dot(b);
    let union = a.count() + b.count() - inter;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Cosine similarity `a·b / (‖a‖ ‖b‖)`. Zero when either is all-zero.
pub fn cosine(a: &LabelVector, b: &LabelVector) -> Result<f64> {
    check_lengths(a, b)?;
    let (na, nb) = (a.count(), b.count());
    if na == 0 || nb == 0 {
        return Ok(0.0);
    }
    let inter = a.dot(b);
    if inter == na && na == nb {
        return Ok(1.0);
    }
    Ok(inter as f64 / ((na as f64).sqrt() * (nb as f64).sqrt()))
}

/// Which label-overlap function weights and selects positives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OverlapMeasure {
    #[default]
    Jaccard,
    Cosine,
}

impl OverlapMeasure {
    pub fn eval(self, a: &LabelVector, b: &LabelVector) -> Result<f64> {
        match self {
            Self::Jaccard => jaccard(a, b),
            Self::Cosine => cosine(a, b),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Jaccard => "jaccard",
            Self::Cosine => "cosine",
        }
    }
}

impl std::str::FromStr for OverlapMeasure {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jaccard" => Ok(Self::Jaccard),
            "cosine" => Ok(Self::Cosine),
            other => input(format!("unknown overlap measure {other:?}")),
        }
    }
}

/// Positives of one anchor with their overlap weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PositiveSet {
    pub anchor: usize,
    pub members: Vec<(usize, f64)>,
}

impl PositiveSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.members.iter().any(|(m, _)| *m == j)
    }
}

/// For each anchor `i`, every `j ≠ i` with `D(y_i, y_j) ≥ alpha`, in index order.
/// All-zero label vectors are never positives, even at `alpha = 0`.
pub fn positive_sets(labels: &[LabelVector], alpha: f64, measure: OverlapMeasure) -> Result<Vec<PositiveSet>> {
    if labels.len() < 2 {
        return input(format!("need at least two views, got {}", labels.len()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return input(format!("alpha must lie in [0, 1], got {alpha}"));
    }
    let b = labels.len();
    let mut overlap = vec![0.0; b * b];
    for i in 0..b {
        for j in i + 1..b {
            let d = measure.eval(&labels[i], &labels[j])?;
            overlap[i * b + j] = d;
            overlap[j * b + i] = d;
        }
    }
    Ok((0..b)
        .map(|i| PositiveSet {
            anchor: i,
            members: (0..b)
                .filter(|&j| j != i)
                .map(|j| (j, overlap[i * b + j]))
                .filter(|&(j, d)| d >= alpha && !labels[i].is_zero() && !labels[j].is_zero())
                .collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(bits: &[u8]) -> LabelVector {
        LabelVector::new(bits.to_vec()).unwrap()
    }

    #[test]
    fn jaccard_examples() {
        assert_eq!(jaccard(&lv(&[1, 0, 1]), &lv(&[1, 0, 1])).unwrap(), 1.0);
        assert_eq!(jaccard(&lv(&[1, 0, 0]), &lv(&[0, 1, 1])).unwrap(), 0.0);
        assert_eq!(jaccard(&lv(&[1, 1, 0]), &lv(&[1, 0, 1])).unwrap(), 1.0 / 3.0);
        assert_eq!(jaccard(&lv(&[0, 0]), &lv(&[0, 0])).unwrap(), 0.0);
        assert!(jaccard(&lv(&[1]), &lv(&[1, 0])).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&lv(&[1, 1, 1]), &lv(&[1, 1, 1])).unwrap(), 1.0);
        assert!((cosine(&lv(&[1, 1, 0]), &lv(&[1, 0, 1])).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(cosine(&lv(&[1, 0, 0]), &lv(&[0, 1, 1])).unwrap(), 0.0);
        assert_eq!(cosine(&lv(&[0, 0, 0]), &lv(&[0, 1, 1])).unwrap(), 0.0);
    }

    #[test]
    fn rejects_non_binary() {
        assert!(LabelVector::new(vec![0, 2]).is_err());
    }

    #[test]
    fn identical_labels_make_everyone_positive() {
        let labels = vec![lv(&[1, 1, 0]); 4];
        let sets = positive_sets(&labels, 0.6, OverlapMeasure::Jaccard).unwrap();
        for set in &sets {
            assert_eq!(set.len(), 3);
            assert!(!set.contains(set.anchor));
            assert!(set.members.iter().all(|(_, w)| *w == 1.0));
        }
    }

    #[test]
    fn disjoint_labels_make_empty_sets() {
        let labels = vec![lv(&[1, 0, 0]), lv(&[0, 1, 0]), lv(&[0, 0, 1])];
        let sets = positive_sets(&labels, 0.5, OverlapMeasure::Jaccard).unwrap();
        assert!(sets.iter().all(PositiveSet::is_empty));
    }

    #[test]
    fn small_batch_by_hand() {
        let labels = vec![lv(&[1, 1, 0]), lv(&[1, 0, 0]), lv(&[0, 0, 1])];
        let sets = positive_sets(&labels, 0.5, OverlapMeasure::Jaccard).unwrap();
        assert_eq!(sets[0].members, vec![(1, 0.5)]);
        assert_eq!(sets[1].members, vec![(0, 0.5)]);
        assert!(sets[2].is_empty());
    }

    #[test]
    fn batch_too_small() {
        assert!(positive_sets(&[lv(&[1])], 0.5, OverlapMeasure::Jaccard).is_err());
        assert!(positive_sets(&[lv(&[1]), lv(&[1])], 1.5, OverlapMeasure::Jaccard).is_err());
    }

    #[test]
    fn jaccard_never_exceeds_cosine_exhaustive() {
        for c in 1..=4usize {
            for a in 0..(1u32 << c) {
                for b in 0..(1u32 << c) {
                    let va = LabelVector::from_bools(&(0..c).map(|k| a >> k & 1 == 1).collect::<Vec<_>>());
                    let vb = LabelVector::from_bools(&(0..c).map(|k| b >> k & 1 == 1).collect::<Vec<_>>());
                    let j = jaccard(&va, &vb).unwrap();
                    let cs = cosine(&va, &vb).unwrap();
                    assert!(j <= cs + 1e-15, "{a:b} {b:b}: {j} > {cs}");
                    if a == b && a != 0 {
                        assert_eq!((j, cs), (1.0, 1.0));
                    }
                    if a & b == 0 {
                        assert_eq!((j, cs), (0.0, 0.0));
                    }
                }
            }
        }
    }
}
