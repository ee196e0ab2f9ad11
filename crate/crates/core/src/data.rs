//! Synthetic multi-label data, vector augmentations, and two-view batches.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::overlap::LabelVector;
use crate::rng::{self, derive_seed};

/// Draws with no active label are redrawn at most this many times.
const MAX_REDRAWS: usize = 10_000;
const FEASIBILITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticDatasetConfig {
    pub num_samples: usize,
    pub num_classes: usize,
    pub input_dim: usize,
    /// `P(y_i = 1, y_j = 1)`; the diagonal holds the marginals. When absent,
    /// [`default_cooccurrence`] is used.
    pub cooccurrence: Option<Vec<Vec<f64>>>,
    /// One row per class. When absent, prototypes are drawn from the seed.
    pub prototypes: Option<Vec<Vec<f64>>>,
    /// Length of generated prototypes.
    pub prototype_scale: f64,
    /// Standard deviation of the additive feature noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticDatasetConfig {
    fn default() -> Self {
        Self {
            num_samples: 2000,
            num_classes: 6,
            input_dim: 16,
            cooccurrence: None,
            prototypes: None,
            prototype_scale: 1.0,
            noise: 0.6,
            seed: 0,
        }
    }
}

/// Classes come in pairs that co-occur far more often than chance.
///
/// Marginals are 0.3. Partners (0,1), (2,3), … share a label with
/// probability 0.2; any other pair with probability 0.05.
pub fn default_cooccurrence(num_classes: usize) -> Vec<Vec<f64>> {
    (0..num_classes)
        .map(|i| {
            (0..num_classes)
                .map(|j| {
                    if i == j {
                        0.3
                    } else if i / 2 == j / 2 {
                        0.2
                    } else {
                        0.05
                    }
                })
                .collect()
        })
        .collect()
}

impl SyntheticDatasetConfig {
    pub fn cooccurrence_matrix(&self) -> Vec<Vec<f64>> {
        self.cooccurrence.clone().unwrap_or_else(|| default_cooccurrence(self.num_classes))
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes;
        if c == 0 || self.input_dim == 0 || self.num_samples == 0 {
            return Err(Error::Config("dataset sizes must be at least 1".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) || !(self.prototype_scale.is_finite()) {
            return Err(Error::Config("noise and prototype scale must be finite, noise nonnegative".into()));
        }
        check_cooccurrence(&self.cooccurrence_matrix(), c)?;
        if let Some(p) = &self.prototypes {
            if p.len() != c || p.iter().any(|row| row.len() != self.input_dim || row.iter().any(|v| !v.is_finite())) {
                return Err(Error::Config(format!("prototypes must be {c} finite rows of length {}", self.input_dim)));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        crate::digest::json_sha256(self)
    }
}

/// Checks symmetry, range, and the Fréchet bounds on every pair.
pub fn check_cooccurrence(m: &[Vec<f64>], num_classes: usize) -> Result<()> {
    let bad = |msg: String| Err(Error::Input(format!("infeasible co-occurrence matrix: {msg}")));
    if m.len() != num_classes || m.iter().any(|r| r.len() != num_classes) {
        return bad(format!("expected {num_classes}x{num_classes}"));
    }
    for i in 0..num_classes {
        for j in 0..num_classes {
            let v = m[i][j];
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("entry ({i},{j}) = {v} outside [0,1]"));
            }
            if m[j][i] != v {
                return bad(format!("not symmetric at ({i},{j})"));
            }
            let (pi, pj) = (m[i][i], m[j][j]);
            if v > pi.min(pj) + FEASIBILITY_TOL {
                return bad(format!("pair ({i},{j}) probability {v} exceeds a marginal"));
            }
            if v < pi + pj - 1.0 - FEASIBILITY_TOL {
                return bad(format!("pair ({i},{j}) probability {v} below {}", pi + pj - 1.0));
            }
        }
    }
    if m.iter().enumerate().all(|(i, r)| r[i] == 0.0) {
        return bad("every marginal is zero, so no sample can carry a label".into());
    }
    Ok(())
}

/// Sequential sampler matching target first and second moments.
///
/// Class `k` is drawn with probability `p_k + βᵀ(y_<k − p_<k)`, clamped to
/// `[0, 1]`, where `β` solves `Σ_<k β = cov(y_<k, y_k)`. Without clamping
/// the pairwise frequencies are reproduced exactly in expectation.
#[derive(Debug, Clone)]
pub struct LabelSampler {
    marginals: Vec<f64>,
    betas: Vec<Vec<f64>>,
}

impl LabelSampler {
    pub fn new(cooccurrence: &[Vec<f64>]) -> Result<Self> {
        let c = cooccurrence.len();
        check_cooccurrence(cooccurrence, c)?;
        let p: Vec<f64> = (0..c).map(|i| cooccurrence[i][i]).collect();
        let cov = |i: usize, j: usize| cooccurrence[i][j] - p[i] * p[j];
        let mut betas = Vec::with_capacity(c);
        for k in 0..c {
            // Constant classes carry no information about later ones.
            let informative: Vec<usize> = (0..k).filter(|&i| cov(i, i) > FEASIBILITY_TOL).collect();
            let a: Vec<Vec<f64>> = informative.iter().map(|&i| informative.iter().map(|&j| cov(i, j)).collect()).collect();
            let b: Vec<f64> = informative.iter().map(|&i| cov(i, k)).collect();
            let sol = solve(a, b).ok_or_else(|| {
                Error::Input(format!("infeasible co-occurrence matrix: classes before {k} are linearly dependent"))
            })?;
            let mut beta = vec![0.0; k];
            for (idx, &i) in informative.iter().enumerate() {
                beta[i] = sol[idx];
            }
            betas.push(beta);
        }
        Ok(Self { marginals: p, betas })
    }

    /// One label draw. May be all-zero.
    pub fn draw(&self, rng: &mut rng::Rng) -> LabelVector {
        let mut y = Vec::with_capacity(self.marginals.len());
        for (k, beta) in self.betas.iter().enumerate() {
            let shift: f64 = beta.iter().enumerate().map(|(i, b)| b * (f64::from(y[i]) - self.marginals[i])).sum();
            let prob = (self.marginals[k] + shift).clamp(0.0, 1.0);
            y.push(u8::from(rng.random::<f64>() < prob));
        }
        LabelVector::new(y).expect("draws are binary")
    }
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let (top, bottom) = a.split_at_mut(row);
            for (dst, src) in bottom[0][col..].iter_mut().zip(&top[col][col..]) {
                *dst -= f * src;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: LabelVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Hash of the generating config.
    pub config_hash: String,
    pub num_classes: usize,
    pub input_dim: usize,
    pub samples: Vec<Sample>,
}

/// Per-class prototypes: given ones, or Gaussian directions of length
/// `prototype_scale` drawn from a stream derived from the seed.
pub fn prototypes(cfg: &SyntheticDatasetConfig) -> Vec<Vec<f64>> {
    if let Some(p) = &cfg.prototypes {
        return p.clone();
    }
    let mut r = rng::seeded(derive_seed(cfg.seed, 0));
    (0..cfg.num_classes)
        .map(|_| {
            let v: Vec<f64> = (0..cfg.input_dim).map(|_| r.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            v.iter().map(|x| x * cfg.prototype_scale / norm).collect()
        })
        .collect()
}

/// Samples `x = Σ_{k active} prototype_k + noise·ε` with correlated labels.
/// Label draws with no active class are redrawn.
pub fn generate_synthetic(cfg: &SyntheticDatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let sampler = LabelSampler::new(&cfg.cooccurrence_matrix())?;
    let protos = prototypes(cfg);
    let mut labels_rng = rng::seeded(derive_seed(cfg.seed, 1));
    let mut noise_rng = rng::seeded(derive_seed(cfg.seed, 2));
    let mut samples = Vec::with_capacity(cfg.num_samples);
    for i in 0..cfg.num_samples {
        let mut y = sampler.draw(&mut labels_rng);
        let mut redraws = 0;
        while y.is_zero() {
            redraws += 1;
            if redraws > MAX_REDRAWS {
                return Err(Error::Input(format!("sample {i}: no labelled draw after {MAX_REDRAWS} attempts")));
            }
            y = sampler.draw(&mut labels_rng);
        }
        let mut x = vec![0.0; cfg.input_dim];
        for (k, proto) in protos.iter().enumerate() {
            if y.get(k) {
                x.iter_mut().zip(proto).for_each(|(a, b)| *a += b);
            }
        }
        if cfg.noise > 0.0 {
            for a in &mut x {
                *a += cfg.noise * noise_rng.sample::<f64, _>(StandardNormal);
            }
        }
        samples.push(Sample { x, y });
    }
    Ok(Dataset { config_hash: cfg.hash(), num_classes: cfg.num_classes, input_dim: cfg.input_dim, samples })
}

/// Shuffled `(train, test)` index split; `test_frac` of the samples are held out.
pub fn train_test_split(n: usize, test_frac: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&test_frac) {
        return Err(Error::Config(format!("test fraction {test_frac} outside [0,1)")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::seeded(seed));
    let n_test = (n as f64 * test_frac).round() as usize;
    let train = idx.split_off(n_test);
    Ok((train, idx))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Standard deviation of per-coordinate Gaussian jitter.
    pub jitter: f64,
    /// Probability of zeroing each coordinate.
    pub dropout: f64,
    /// Scale factors are uniform in `[1 − r, 1 + r]`.
    pub scale_range: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { jitter: 0.1, dropout: 0.1, scale_range: 0.1 }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        Self { jitter: 0.0, dropout: 0.0, scale_range: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jitter >= 0.0 && self.jitter.is_finite())
            || !(0.0..1.0).contains(&self.dropout)
            || !(0.0..1.0).contains(&self.scale_range)
        {
            return Err(Error::Config(
                "augmentation needs jitter ≥ 0, dropout in [0,1), scale range in [0,1)".into(),
            ));
        }
        Ok(())
    }
}

/// `x' = s · (m ⊙ x + jitter · ε)` with a random scale `s`, keep mask `m`,
/// and standard normal `ε`.
pub fn augment(x: &[f64], cfg: &AugmentConfig, seed: u64) -> Vec<f64> {
    let mut r = rng::seeded(seed);
    let s = 1.0 + cfg.scale_range * (2.0 * r.random::<f64>() - 1.0);
    x.iter()
        .map(|&v| {
            let kept = if r.random::<f64>() < cfg.dropout { 0.0 } else { v };
            let eps: f64 = r.sample(StandardNormal);
            s * (kept + cfg.jitter * eps)
        })
        .collect()
}

/// Two augmented views per sample, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub views: Vec<Vec<f64>>,
    pub labels: Vec<LabelVector>,
    /// Index into the input slice that each view came from.
    pub origin: Vec<usize>,
}

/// Views `2k` and `2k + 1` are independent augmentations of sample `k`.
pub fn make_contrastive_batch(samples: &[Sample], cfg: &AugmentConfig, seed: u64) -> Result<ContrastiveBatch> {
    if samples.is_empty() {
        return Err(Error::Input("cannot build a batch from no samples".into()));
    }
    let mut batch = ContrastiveBatch {
        views: Vec::with_capacity(2 * samples.len()),
        labels: Vec::with_capacity(2 * samples.len()),
        origin: Vec::with_capacity(2 * samples.len()),
    };
    for (k, s) in samples.iter().enumerate() {
        for v in 0..2 {
            batch.views.push(augment(&s.x, cfg, derive_seed(seed, (2 * k + v) as u64)));
            batch.labels.push(s.y.clone());
            batch.origin.push(k);
        }
    }
    Ok(batch)
}

const FORMAT_NAME: &str = "probmcl-dataset";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    config_hash: String,
    num_classes: usize,
    input_dim: usize,
    num_samples: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    x: Vec<f64>,
    y: Vec<u8>,
}

fn malformed<T>(line: usize, msg: impl std::fmt::Display) -> Result<T> {
    Err(Error::Format { kind: "dataset", msg: format!("line {line}: {msg}") })
}

/// One JSON header line, then one `{"x": [...], "y": [...]}` line per sample.
pub fn write_dataset<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    let header = Header {
        format: FORMAT_NAME.into(),
        version: 1,
        config_hash: ds.config_hash.clone(),
        num_classes: ds.num_classes,
        input_dim: ds.input_dim,
        num_samples: ds.samples.len(),
    };
    let to_io = |e: serde_json::Error| Error::Io(e.into());
    serde_json::to_writer(&mut w, &header).map_err(to_io)?;
    w.write_all(b"\n")?;
    for s in &ds.samples {
        serde_json::to_writer(&mut w, &Record { x: s.x.clone(), y: s.y.bits().to_vec() }).map_err(to_io)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(r: R) -> Result<Dataset> {
    let mut lines = r.lines();
    let first = match lines.next() {
        Some(l) => l?,
        None => return malformed(1, "missing header"),
    };
    let header: Header = match serde_json::from_str(&first) {
        Ok(h) => h,
        Err(e) => return malformed(1, e),
    };
    if header.format != FORMAT_NAME || header.version != 1 {
        return malformed(1, format!("unsupported format {} v{}", header.format, header.version));
    }
    if header.num_classes == 0 || header.input_dim == 0 {
        return malformed(1, "class count and input dimension must be positive");
    }
    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.is_empty() {
            continue;
        }
        if samples.len() == header.num_samples {
            return malformed(lineno, "more records than the header declares");
        }
        let rec: Record = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => return malformed(lineno, e),
        };
        if rec.x.len() != header.input_dim || rec.y.len() != header.num_classes {
            return malformed(lineno, "record shape does not match header");
        }
        if rec.x.iter().any(|v| !v.is_finite()) {
            return malformed(lineno, "non-finite feature");
        }
        let y = match LabelVector::new(rec.y) {
            Ok(y) => y,
            Err(e) => return malformed(lineno, e),
        };
        samples.push(Sample { x: rec.x, y });
    }
    if samples.len() != header.num_samples {
        return malformed(samples.len() + 2, format!("expected {} records, found {}", header.num_samples, samples.len()));
    }
    Ok(Dataset { config_hash: header.config_hash, num_classes: header.num_classes, input_dim: header.input_dim, samples })
}
