//! Examples, the augmented support set, dataset splits and standardization.

use alloc::vec::Vec;
#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A predictor vector with its label. For classification the label is
/// exactly `-1.0` or `+1.0`; for regression it is any real.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl LabeledExample {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        LabeledExample { x, y }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledExample {
    pub x: Vec<f64>,
}

impl UnlabeledExample {
    pub fn new(x: Vec<f64>) -> Self {
        UnlabeledExample { x }
    }
}

/// Where a support atom came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Labeled,
    ReplicatedPositive,
    ReplicatedNegative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportPoint {
    pub x: Vec<f64>,
    pub y: f64,
    pub provenance: Provenance,
}

/// The finite set of atoms the adversary may place mass on: the labeled data
/// in input order, then every unlabeled predictor with label `+1`, then every
/// unlabeled predictor with label `-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    points: Vec<SupportPoint>,
    n_labeled: usize,
    n_unlabeled: usize,
    dim: usize,
}

pub fn is_class_label(y: f64) -> bool {
    y == 1.0 || y == -1.0
}

/// Checks that a dataset is nonempty, has a single width `d >= 1`, and (for
/// classification) uses labels in `{-1, +1}`. Returns `d`.
pub fn check_labeled(data: &[LabeledExample], classification: bool) -> Result<usize> {
    let first = data.first().ok_or(Error::Empty)?;
    let d = first.dim();
    if d == 0 {
        return Err(Error::invalid("examples must have at least one feature"));
    }
    for ex in data {
        if ex.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: ex.dim(),
            });
        }
        if classification && !is_class_label(ex.y) {
            return Err(Error::InvalidLabel(ex.y));
        }
    }
    Ok(d)
}

/// Builds `X_N = D_n ∪ {(+1, x)} ∪ {(-1, x)}`. Duplicate predictors are kept
/// as separate atoms.
pub fn build_support(
    labeled: &[LabeledExample],
    unlabeled: &[UnlabeledExample],
) -> Result<SupportSet> {
    let d = check_labeled(labeled, false)?;
    if let Some(bad) = unlabeled.iter().find(|u| u.x.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: bad.x.len(),
        });
    }
    let mut points = Vec::with_capacity(labeled.len() + 2 * unlabeled.len());
    points.extend(labeled.iter().map(|ex| SupportPoint {
        x: ex.x.clone(),
        y: ex.y,
        provenance: Provenance::Labeled,
    }));
    for (label, provenance) in [
        (1.0, Provenance::ReplicatedPositive),
        (-1.0, Provenance::ReplicatedNegative),
    ] {
        points.extend(unlabeled.iter().map(|u| SupportPoint {
            x: u.x.clone(),
            y: label,
            provenance,
        }));
    }
    Ok(SupportSet {
        points,
        n_labeled: labeled.len(),
        n_unlabeled: unlabeled.len(),
        dim: d,
    })
}

impl SupportSet {
    /// A support made of arbitrary atoms, all tagged as labeled. Used for the
    /// regression profile and for hand-built instances.
    pub fn from_points(points: Vec<LabeledExample>, n_labeled: usize) -> Result<Self> {
        let d = check_labeled(&points, false)?;
        if n_labeled == 0 || n_labeled > points.len() {
            return Err(Error::invalid("n_labeled must be in 1..=len"));
        }
        let n_unlabeled = points.len() - n_labeled;
        Ok(SupportSet {
            points: points
                .into_iter()
                .map(|ex| SupportPoint {
                    x: ex.x,
                    y: ex.y,
                    provenance: Provenance::Labeled,
                })
                .collect(),
            n_labeled,
            n_unlabeled,
            dim: d,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_labeled(&self) -> usize {
        self.n_labeled
    }

    pub fn n_unlabeled(&self) -> usize {
        self.n_unlabeled
    }

    pub fn points(&self) -> &[SupportPoint] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &SupportPoint {
        &self.points[i]
    }

    /// The first `n` atoms, i.e. the labeled data `D_n`.
    pub fn labeled(&self) -> &[SupportPoint] {
        &self.points[..self.n_labeled]
    }

    /// Indices of atoms carrying label `y`, the only ones at finite cost from
    /// a sample labeled `y`.
    pub fn indices_with_label(&self, y: f64) -> Vec<usize> {
        (0..self.points.len())
            .filter(|&i| self.points[i].y == y)
            .collect()
    }
}

/// How to size the three partitions of [`split`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSizes {
    Fractions {
        labeled: f64,
        unlabeled: f64,
        test: f64,
    },
    Counts {
        labeled: usize,
        unlabeled: usize,
        test: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub labeled: Vec<LabeledExample>,
    pub unlabeled: Vec<UnlabeledExample>,
    pub test: Vec<LabeledExample>,
}

/// Random disjoint split into labeled training, unlabeled training (labels
/// dropped) and test data. Deterministic for a given seed.
pub fn split(data: &[LabeledExample], sizes: SplitSizes, seed: u64) -> Result<Split> {
    let n = data.len();
    if n < 3 {
        return Err(Error::invalid("need at least 3 examples to split"));
    }
    let (a, b, c) = match sizes {
        SplitSizes::Counts {
            labeled,
            unlabeled,
            test,
        } => {
            if labeled + unlabeled + test > n {
                return Err(Error::invalid("split counts exceed the dataset size"));
            }
            (labeled, unlabeled, test)
        }
        SplitSizes::Fractions {
            labeled,
            unlabeled,
            test,
        } => {
            let fr = [labeled, unlabeled, test];
            if fr.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
                return Err(Error::invalid("split fractions must be positive"));
            }
            if labeled + unlabeled + test > 1.0 + 1e-12 {
                return Err(Error::invalid("split fractions sum to more than 1"));
            }
            let count = |f: f64| (f * n as f64).floor() as usize;
            (count(labeled), count(unlabeled), count(test))
        }
    };
    if a == 0 {
        return Err(Error::EmptyPartition("labeled"));
    }
    if b == 0 {
        return Err(Error::EmptyPartition("unlabeled"));
    }
    if c == 0 {
        return Err(Error::EmptyPartition("test"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let labeled = idx[..a].iter().map(|&i| data[i].clone()).collect();
    let unlabeled = idx[a..a + b]
        .iter()
        .map(|&i| UnlabeledExample::new(data[i].x.clone()))
        .collect();
    let test = idx[a + b..a + b + c]
        .iter()
        .map(|&i| data[i].clone())
        .collect();
    Ok(Split {
        labeled,
        unlabeled,
        test,
    })
}

/// Per-feature affine standardization to mean 0 and standard deviation 1.
/// Constant features keep scale 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Fits on pooled predictor rows (typically labeled + unlabeled).
    pub fn fit<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        let first = rows.first().ok_or(Error::Empty)?;
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = alloc::vec![0.0; d];
        for r in &rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: r.len(),
                });
            }
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = alloc::vec![0.0; d];
        for r in &rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, scale })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn apply_labeled(&self, data: &[LabeledExample]) -> Vec<LabeledExample> {
        data.iter()
            .map(|ex| LabeledExample::new(self.apply(&ex.x), ex.y))
            .collect()
    }

    pub fn apply_unlabeled(&self, data: &[UnlabeledExample]) -> Vec<UnlabeledExample> {
        data.iter()
            .map(|ex| UnlabeledExample::new(self.apply(&ex.x)))
            .collect()
    }
}

/// Appends a constant-1 feature (an intercept column).
pub fn with_intercept(x: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(x.len() + 1);
    v.extend_from_slice(x);
    v.push(1.0);
    v
}

/// FNV-1a over the bit patterns of the data; identifies a training set in
/// model files.
pub fn fingerprint(labeled: &[LabeledExample], unlabeled: &[UnlabeledExample]) -> u64 {
    fnv(
        labeled.iter().map(|ex| (ex.x.as_slice(), ex.y)),
        unlabeled.iter().map(|ex| ex.x.as_slice()),
    )
}

fn fnv<'a>(
    labeled: impl Iterator<Item = (&'a [f64], f64)>,
    unlabeled: impl Iterator<Item = &'a [f64]>,
) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |v: f64| {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    };
    for (x, y) in labeled {
        x.iter().for_each(|&v| eat(v));
        eat(y);
    }
    eat(f64::NAN);
    for x in unlabeled {
        x.iter().for_each(|&v| eat(v));
    }
    h
}

impl SupportSet {
    /// Same value as [`fingerprint`] of the data the support was built from.
    pub fn fingerprint(&self) -> u64 {
        let n = self.n_labeled;
        fnv(
            self.points[..n].iter().map(|p| (p.x.as_slice(), p.y)),
            self.points[n..n + self.n_unlabeled]
                .iter()
                .map(|p| p.x.as_slice()),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn lab(x: &[f64], y: f64) -> LabeledExample {
        LabeledExample::new(x.to_vec(), y)
    }

    #[test]
    fn support_cardinality() {
        let l = [lab(&[0.0], 1.0), lab(&[1.0], -1.0)];
        let u = [UnlabeledExample::new(vec![2.0])];
        let s = build_support(&l, &u).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.labeled().len(), 2);

        let l3 = [lab(&[0.0], 1.0), lab(&[1.0], -1.0), lab(&[3.0], 1.0)];
        let s = build_support(&l3, &[]).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s
            .points()
            .iter()
            .all(|p| p.provenance == Provenance::Labeled));

        let u2 = [
            UnlabeledExample::new(vec![5.0]),
            UnlabeledExample::new(vec![6.0]),
        ];
        let s = build_support(&l[..1], &u2).unwrap();
        assert_eq!(s.len(), 5);
        for ux in [5.0, 6.0] {
            let labels: Vec<f64> = s
                .points()
                .iter()
                .filter(|p| p.x[0] == ux)
                .map(|p| p.y)
                .collect();
            assert_eq!(labels, vec![1.0, -1.0]);
        }
    }

    #[test]
    fn support_order_and_mismatch() {
        let l = [lab(&[0.0, 1.0], 1.0), lab(&[1.0, 1.0], -1.0)];
        let u = [UnlabeledExample::new(vec![2.0, 2.0])];
        let s = build_support(&l, &u).unwrap();
        assert_eq!(s.point(0).x, l[0].x);
        assert_eq!(s.point(1).x, l[1].x);
        assert_eq!(s.point(2).provenance, Provenance::ReplicatedPositive);
        assert_eq!(s.point(3).provenance, Provenance::ReplicatedNegative);

        let bad = [UnlabeledExample::new(vec![2.0])];
        assert!(matches!(
            build_support(&l, &bad),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn split_counts_and_determinism() {
        let data: Vec<LabeledExample> = (0..569).map(|i| lab(&[i as f64], 1.0)).collect();
        let sizes = SplitSizes::Counts {
            labeled: 40,
            unlabeled: 200,
            test: 329,
        };
        let a = split(&data, sizes, 7).unwrap();
        assert_eq!(
            (a.labeled.len(), a.unlabeled.len(), a.test.len()),
            (40, 200, 329)
        );
        let b = split(&data, sizes, 7).unwrap();
        assert_eq!(a, b);
        let c = split(&data, sizes, 8).unwrap();
        assert_ne!(a, c);

        let mut seen: Vec<f64> = a.labeled.iter().map(|e| e.x[0]).collect();
        seen.extend(a.unlabeled.iter().map(|e| e.x[0]));
        seen.extend(a.test.iter().map(|e| e.x[0]));
        seen.sort_by(|x, y| x.partial_cmp(y).unwrap());
        seen.dedup();
        assert_eq!(seen.len(), 569);
    }

    #[test]
    fn split_errors() {
        let data: Vec<LabeledExample> = (0..10).map(|i| lab(&[i as f64], 1.0)).collect();
        let over = SplitSizes::Fractions {
            labeled: 0.5,
            unlabeled: 0.4,
            test: 0.3,
        };
        assert!(split(&data, over, 1).is_err());
        let tiny = SplitSizes::Fractions {
            labeled: 0.05,
            unlabeled: 0.5,
            test: 0.4,
        };
        assert_eq!(split(&data, tiny, 1), Err(Error::EmptyPartition("labeled")));
        assert!(split(&data[..2], tiny, 1).is_err());
    }

    #[test]
    fn standardizer_moments() {
        let rows = [vec![1.0, 5.0], vec![3.0, 5.0], vec![5.0, 5.0]];
        let st = Standardizer::fit(rows.iter().map(|r| r.as_slice())).unwrap();
        assert_eq!(st.mean, vec![3.0, 5.0]);
        assert_eq!(st.scale[1], 1.0);
        let z: Vec<Vec<f64>> = rows.iter().map(|r| st.apply(r)).collect();
        let m: f64 = z.iter().map(|r| r[0]).sum::<f64>() / 3.0;
        let v: f64 = z.iter().map(|r| r[0] * r[0]).sum::<f64>() / 3.0;
        assert!(m.abs() < 1e-15 && (v - 1.0).abs() < 1e-12);
    }
}
