//! Synthetic benchmark data, augmentation and mini-batch composition.
//!
//! # Dataset file format
//!
//! Plain text, one sample per line, comma separated:
//!
//! ```text
//! split,id,label,f0,f1,...
//! ```
//!
//! `split` is `labeled`, `unlabeled` or `test`; `label` is blank for
//! unlabeled samples. Lines starting with `#` are comments. The first
//! comment `# classes=<C>` is required. Floats are written in shortest
//! round-trip form so a re-read reproduces the data exactly.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PtError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub x: Vec<f64>,
    pub y: usize,
    pub id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledExample {
    pub x: Vec<f64>,
    pub id: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub num_classes: usize,
    pub labeled: Vec<LabeledExample>,
    pub unlabeled: Vec<UnlabeledExample>,
    pub test: Vec<LabeledExample>,
}

impl DatasetSplit {
    pub fn dim(&self) -> usize {
        self.labeled
            .first()
            .map(|e| e.x.len())
            .or_else(|| self.test.first().map(|e| e.x.len()))
            .unwrap_or(0)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.labeled.iter().map(|e| e.y).collect()
    }

    /// Replace the labeled pool's labels, keeping features and ids.
    pub fn with_labels(&self, labels: &[usize]) -> Result<DatasetSplit> {
        if labels.len() != self.labeled.len() {
            return Err(PtError::Contract(
                "label count differs from labeled pool".into(),
            ));
        }
        let mut out = self.clone();
        for (e, &y) in out.labeled.iter_mut().zip(labels) {
            e.y = y;
        }
        Ok(out)
    }

    pub fn without_unlabeled(&self) -> DatasetSplit {
        DatasetSplit {
            unlabeled: Vec::new(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        let mut ids = std::collections::HashSet::new();
        let feats = self
            .labeled
            .iter()
            .chain(&self.test)
            .map(|e| (&e.x, e.id, Some(e.y)))
            .chain(self.unlabeled.iter().map(|e| (&e.x, e.id, None)));
        for (x, id, y) in feats {
            if x.len() != dim || x.iter().any(|v| !v.is_finite()) {
                return Err(PtError::Contract(format!("sample {id} has bad features")));
            }
            if !ids.insert(id) {
                return Err(PtError::Contract(format!("duplicate sample id {id}")));
            }
            if let Some(y) = y {
                if y >= self.num_classes {
                    return Err(PtError::Contract(format!(
                        "sample {id} label {y} out of range"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Gaussian clusters placed on a ring in the first two feature dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub labeled_per_class: usize,
    pub unlabeled: usize,
    pub test_per_class: usize,
    /// Standard deviation of every cluster, per coordinate.
    pub spread: f64,
    pub radius: f64,
    /// Per-class multipliers on the labeled count and the unlabeled mixture
    /// weights. The test set stays balanced.
    pub class_imbalance: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 7,
            dim: 8,
            labeled_per_class: 100,
            unlabeled: 5000,
            test_per_class: 200,
            spread: 0.3,
            radius: 1.0,
            class_imbalance: None,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.dim < 2 {
            return Err(PtError::Config(
                "need at least 2 classes and 2 dimensions".into(),
            ));
        }
        if self.labeled_per_class == 0 || self.test_per_class == 0 {
            return Err(PtError::Config(
                "labeled and test counts must be >= 1".into(),
            ));
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return Err(PtError::Config("spread must be finite and >= 0".into()));
        }
        if let Some(m) = &self.class_imbalance {
            if m.len() != self.num_classes || m.iter().any(|&v| !(v > 0.0)) {
                return Err(PtError::Config(
                    "class_imbalance needs one positive multiplier per class".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn centroid(&self, class: usize) -> Vec<f64> {
        let angle = TAU * class as f64 / self.num_classes as f64;
        let mut c = vec![0.0; self.dim];
        c[0] = self.radius * angle.cos();
        c[1] = self.radius * angle.sin();
        c
    }

    fn multiplier(&self, class: usize) -> f64 {
        self.class_imbalance.as_ref().map_or(1.0, |m| m[class])
    }

    pub fn labeled_count(&self, class: usize) -> usize {
        ((self.labeled_per_class as f64 * self.multiplier(class)).round() as usize).max(1)
    }
}

fn draw_point<R: Rng>(spec: &SyntheticSpec, class: usize, rng: &mut R) -> Vec<f64> {
    spec.centroid(class)
        .into_iter()
        .map(|c| {
            let z: f64 = StandardNormal.sample(rng);
            c + spec.spread * z
        })
        .collect()
}

pub fn make_synthetic_dataset(spec: &SyntheticSpec) -> Result<DatasetSplit> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = spec.num_classes;
    let mut next_id = 0u64;
    let mut id = || {
        next_id += 1;
        next_id - 1
    };

    let mut labeled = Vec::new();
    for class in 0..c {
        for _ in 0..spec.labeled_count(class) {
            labeled.push(LabeledExample {
                x: draw_point(spec, class, &mut rng),
                y: class,
                id: id(),
            });
        }
    }

    let weights: Vec<f64> = (0..c).map(|k| spec.multiplier(k)).collect();
    let total: f64 = weights.iter().sum();
    let mut unlabeled = Vec::with_capacity(spec.unlabeled);
    for _ in 0..spec.unlabeled {
        let mut u = rng.random::<f64>() * total;
        let mut class = c - 1;
        for (k, w) in weights.iter().enumerate() {
            if u < *w {
                class = k;
                break;
            }
            u -= w;
        }
        unlabeled.push(UnlabeledExample {
            x: draw_point(spec, class, &mut rng),
            id: id(),
        });
    }

    let mut test = Vec::new();
    for class in 0..c {
        for _ in 0..spec.test_per_class {
            test.push(LabeledExample {
                x: draw_point(spec, class, &mut rng),
                y: class,
                id: id(),
            });
        }
    }

    Ok(DatasetSplit {
        num_classes: c,
        labeled,
        unlabeled,
        test,
    })
}

/// Stochastic input perturbation: Gaussian jitter plus random swaps of
/// feature pairs (the tabular stand-in for a horizontal flip).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationSpec {
    pub gaussian_sigma: f64,
    pub flip_axes: Vec<(usize, usize)>,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec {
            gaussian_sigma: 0.1,
            flip_axes: Vec::new(),
        }
    }
}

impl AugmentationSpec {
    pub fn identity() -> Self {
        AugmentationSpec {
            gaussian_sigma: 0.0,
            flip_axes: Vec::new(),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.gaussian_sigma == 0.0 && self.flip_axes.is_empty()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.gaussian_sigma >= 0.0 && self.gaussian_sigma.is_finite()) {
            return Err(PtError::Config(
                "gaussian_sigma must be finite and >= 0".into(),
            ));
        }
        if self.flip_axes.iter().any(|&(a, b)| a >= dim || b >= dim) {
            return Err(PtError::Config("flip_axes index out of range".into()));
        }
        Ok(())
    }
}

/// Swap each configured pair with probability 0.5, then add `N(0, sigma^2)`
/// to every coordinate.
pub fn augment<R: Rng + ?Sized>(x: &[f64], spec: &AugmentationSpec, rng: &mut R) -> Vec<f64> {
    let mut out = x.to_vec();
    for &(a, b) in &spec.flip_axes {
        if rng.random_bool(0.5) {
            out.swap(a, b);
        }
    }
    if spec.gaussian_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.gaussian_sigma).expect("sigma validated");
        for v in &mut out {
            *v += noise.sample(rng);
        }
    }
    out
}

// Random-stream roles for `keyed_rng`.
pub(crate) const ROLE_STUDENT: u64 = 1;
pub(crate) const ROLE_TEACHER: u64 = 2;
pub(crate) const ROLE_CONFIDENCE: u64 = 3;
pub(crate) const ROLE_RESCUE: u64 = 4;

/// Independent random streams keyed by `(seed, a, b, c)`.
///
/// Every random draw in training comes from a stream keyed by what it is
/// for (iteration, sample id, role), so draws never depend on evaluation
/// order or on which other models are being trained.
pub fn keyed_rng(seed: u64, a: u64, b: u64, c: u64) -> ChaCha8Rng {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    let k = mix(mix(mix(mix(seed) ^ a) ^ b) ^ c);
    ChaCha8Rng::seed_from_u64(k)
}

/// Endless reshuffled stream of indices into one pool.
#[derive(Debug, Clone)]
pub struct PoolCursor {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl PoolCursor {
    pub fn new(len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        PoolCursor { order, pos: 0, rng }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Next `k` indices; the pool is reshuffled each time it runs out.
    pub fn take(&mut self, k: usize) -> Result<Vec<usize>> {
        if k > 0 && self.order.is_empty() {
            return Err(PtError::Config("cannot draw from an empty pool".into()));
        }
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        Ok(out)
    }
}

/// Labeled and unlabeled members of one batch, with their pool indices.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    pub labeled_part: Vec<LabeledExample>,
    pub unlabeled_part: Vec<UnlabeledExample>,
    pub labeled_pool_indices: Vec<usize>,
}

impl MiniBatch {
    pub fn len(&self) -> usize {
        self.labeled_part.len() + self.unlabeled_part.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Features and ids of every member, labeled first.
    pub fn inputs(&self) -> impl Iterator<Item = (&[f64], u64)> {
        self.labeled_part
            .iter()
            .map(|e| (e.x.as_slice(), e.id))
            .chain(self.unlabeled_part.iter().map(|e| (e.x.as_slice(), e.id)))
    }
}

/// Split of `batch_size` into labeled and unlabeled counts.
pub fn batch_counts(batch_size: usize, labeled_fraction: f64) -> Result<(usize, usize)> {
    if batch_size == 0 || !(labeled_fraction > 0.0 && labeled_fraction <= 1.0) {
        return Err(PtError::Config(format!(
            "need batch_size >= 1 and labeled_fraction in (0,1], got {batch_size} and {labeled_fraction}"
        )));
    }
    let exact = batch_size as f64 * labeled_fraction;
    let rounded = exact.round();
    if (exact - rounded).abs() > 1e-9 {
        return Err(PtError::Config(format!(
            "batch_size * labeled_fraction = {exact} is not an integer"
        )));
    }
    let labeled = rounded as usize;
    if labeled == 0 {
        return Err(PtError::Config("batch has no labeled samples".into()));
    }
    Ok((labeled, batch_size - labeled))
}

/// Draws batches from the two pools using independent cursors, so the
/// labeled stream does not depend on whether unlabeled data is used.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    pub labeled_per_batch: usize,
    pub unlabeled_per_batch: usize,
    labeled: PoolCursor,
    unlabeled: PoolCursor,
}

impl BatchSampler {
    pub fn new(
        n_labeled: usize,
        n_unlabeled: usize,
        batch_size: usize,
        labeled_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        let (l, u) = batch_counts(batch_size, labeled_fraction)?;
        let u = if n_unlabeled == 0 { 0 } else { u };
        Ok(BatchSampler {
            labeled_per_batch: l,
            unlabeled_per_batch: u,
            labeled: PoolCursor::new(n_labeled, seed ^ 0x4C41_4245_4C45_4400),
            unlabeled: PoolCursor::new(n_unlabeled, seed ^ 0x554E_4C41_4245_4C00),
        })
    }

    /// Iterations that make one pass over the larger stream.
    pub fn iters_per_epoch(&self) -> usize {
        let l = self.labeled.len().div_ceil(self.labeled_per_batch);
        if self.unlabeled_per_batch > 0 && !self.unlabeled.is_empty() {
            self.unlabeled.len().div_ceil(self.unlabeled_per_batch)
        } else {
            l
        }
        .max(1)
    }
}

/// Draw the next mini-batch. With an empty unlabeled pool the batch is fully
/// labeled (of size `batch_size * labeled_fraction`).
pub fn compose_minibatch(
    labeled_pool: &[LabeledExample],
    unlabeled_pool: &[UnlabeledExample],
    sampler: &mut BatchSampler,
) -> Result<MiniBatch> {
    if labeled_pool.len() != sampler.labeled.len()
        || unlabeled_pool.len() != sampler.unlabeled.len()
    {
        return Err(PtError::Contract(
            "sampler was built for different pools".into(),
        ));
    }
    let li = sampler.labeled.take(sampler.labeled_per_batch)?;
    let ui = sampler.unlabeled.take(sampler.unlabeled_per_batch)?;
    Ok(MiniBatch {
        labeled_part: li.iter().map(|&i| labeled_pool[i].clone()).collect(),
        unlabeled_part: ui.iter().map(|&i| unlabeled_pool[i].clone()).collect(),
        labeled_pool_indices: li,
    })
}

pub fn write_dataset(data: &DatasetSplit, path: &Path) -> Result<()> {
    std::fs::write(path, format_dataset(data)).map_err(|e| PtError::io(path, e))
}

pub fn format_dataset(data: &DatasetSplit) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# classes={}", data.num_classes);
    let _ = writeln!(s, "# split,id,label,features...");
    let mut line = |split: &str, id: u64, y: Option<usize>, x: &[f64]| {
        let _ = write!(s, "{split},{id},");
        if let Some(y) = y {
            let _ = write!(s, "{y}");
        }
        for v in x {
            let _ = write!(s, ",{v:?}");
        }
        s.push('\n');
    };
    for e in &data.labeled {
        line("labeled", e.id, Some(e.y), &e.x);
    }
    for e in &data.unlabeled {
        line("unlabeled", e.id, None, &e.x);
    }
    for e in &data.test {
        line("test", e.id, Some(e.y), &e.x);
    }
    s
}

pub fn read_dataset(path: &Path) -> Result<DatasetSplit> {
    let text = std::fs::read_to_string(path).map_err(|e| PtError::io(path, e))?;
    parse_dataset(&text, &path.display().to_string())
}

pub fn parse_dataset(text: &str, origin: &str) -> Result<DatasetSplit> {
    let err = |line: usize, detail: String| PtError::Parse {
        path: origin.to_string(),
        line,
        detail,
    };
    let mut num_classes = None;
    let mut data = DatasetSplit {
        num_classes: 0,
        labeled: Vec::new(),
        unlabeled: Vec::new(),
        test: Vec::new(),
    };
    for (no, raw) in text.lines().enumerate() {
        let no = no + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("classes=") {
                num_classes = Some(v.parse::<usize>().map_err(|e| err(no, e.to_string()))?);
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 4 {
            return Err(err(no, "expected split,id,label,features...".into()));
        }
        let id: u64 = fields[1]
            .parse()
            .map_err(|_| err(no, format!("bad id {:?}", fields[1])))?;
        let x = fields[3..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| err(no, format!("bad feature {f:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let label = || -> Result<usize> {
            fields[2]
                .parse()
                .map_err(|_| err(no, format!("bad label {:?}", fields[2])))
        };
        match fields[0] {
            "labeled" => data.labeled.push(LabeledExample { x, y: label()?, id }),
            "test" => data.test.push(LabeledExample { x, y: label()?, id }),
            "unlabeled" => {
                if !fields[2].is_empty() {
                    return Err(err(no, "unlabeled sample carries a label".into()));
                }
                data.unlabeled.push(UnlabeledExample { x, id })
            }
            other => return Err(err(no, format!("unknown split {other:?}"))),
        }
    }
    data.num_classes = num_classes.ok_or_else(|| err(1, "missing '# classes=' header".into()))?;
    data.validate().map_err(|e| err(0, e.to_string()))?;
    Ok(data)
}
