//! k-shot evaluation of frozen region features on novel classes.
//!
//! All novel classes of a split are scored at once (full-way). Scores are
//! ranked by value, ties broken by ascending class index, so top-k counts
//! are well defined even for constant score tables.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datamodel::{BenchmarkManifest, Split, Subset};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::seeds::SUPPORT;
use crate::source::ImageSource;
use crate::trainer::load_resized;

pub const L2_PENALTY: f64 = 1e-4;
pub const GRAD_TOLERANCE: f64 = 1e-6;
pub const MAX_ITERATIONS: usize = 1000;
pub const COSINE_SCALE: f64 = 10.0;

pub type FeatureTable = BTreeMap<u64, Vec<f64>>;

/// Region features of every novel support and query instance, from the
/// enlarged region box as in training. The model is only read.
pub fn embed_novel(
    model: &Model,
    m: &BenchmarkManifest,
    source: &dyn ImageSource,
    short_edge: Option<usize>,
) -> Result<FeatureTable> {
    let idx = m.index();
    let mut table = FeatureTable::new();
    for rec in &m.images {
        let novel: Vec<_> = rec
            .instance_ids
            .iter()
            .map(|id| {
                idx.instances
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::Eval(format!("image {} lists missing instance {id}", rec.image_id)))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|o| matches!(o.subset, Subset::NovelSupport | Subset::NovelQuery))
            .collect();
        if novel.is_empty() {
            continue;
        }
        let loaded = load_resized(source, rec, short_edge)?;
        let fm = model.feature_map(&loaded.image);
        for o in novel {
            let f = model.region_feature(
                &loaded.image,
                Some(&fm),
                &loaded.scale_box(&o.region_box),
                &loaded.scale_box(&o.tight_box),
            )?;
            table.insert(o.instance_id, f.0);
        }
    }
    let expected = m
        .instances
        .iter()
        .filter(|o| matches!(o.subset, Subset::NovelSupport | Subset::NovelQuery))
        .count();
    if table.len() != expected {
        return Err(Error::Eval(format!(
            "embedded {} novel instances, manifest has {expected}",
            table.len()
        )));
    }
    Ok(table)
}

/// Labeled support and query sets of one novel split. Labels index
/// `classes`, the split's category ids in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub split: Split,
    pub k_shot: usize,
    pub classes: Vec<u32>,
    pub support: Vec<(Vec<f64>, usize)>,
    pub query: Vec<(Vec<f64>, usize)>,
    pub support_ids: Vec<u64>,
}

impl Task {
    pub fn way(&self) -> usize {
        self.classes.len()
    }

    /// Short hash of the chosen support instance ids.
    pub fn support_id(&self) -> String {
        let mut h = Sha256::new();
        for id in &self.support_ids {
            h.update(id.to_le_bytes());
        }
        hex::encode(h.finalize())[..16].to_string()
    }
}

/// Builds the k-shot task of `split`. Support instances are those with
/// `support_rank < k`, so 1-shot uses rank 0 of the stored five.
pub fn build_task(m: &BenchmarkManifest, table: &FeatureTable, split: Split, k: usize) -> Result<Task> {
    if !split.is_novel() {
        return Err(Error::Argument(format!("{split:?} is not a novel split")));
    }
    if k == 0 {
        return Err(Error::Argument("k-shot must be positive".into()));
    }
    let mut classes: Vec<u32> = m.categories_with_split(split).map(|c| c.category_id).collect();
    classes.sort_unstable();
    let label: BTreeMap<u32, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let feature = |id: u64| {
        table
            .get(&id)
            .cloned()
            .ok_or_else(|| Error::Eval(format!("no feature for instance {id}")))
    };
    let mut support = Vec::new();
    let mut support_ids = Vec::new();
    let mut query = Vec::new();
    let mut shots = vec![0usize; classes.len()];
    for o in &m.instances {
        let Some(&y) = label.get(&o.category_id) else { continue };
        match o.subset {
            Subset::NovelSupport if o.support_rank.is_some_and(|r| usize::from(r) < k) => {
                support.push((feature(o.instance_id)?, y));
                support_ids.push(o.instance_id);
                shots[y] += 1;
            }
            Subset::NovelQuery => query.push((feature(o.instance_id)?, y)),
            _ => {}
        }
    }
    if let Some(y) = shots.iter().position(|&n| n < k) {
        return Err(Error::Eval(format!(
            "class {} has {} support instances, {k}-shot needs {k}",
            classes[y], shots[y]
        )));
    }
    Ok(Task {
        split,
        k_shot: k,
        classes,
        support,
        query,
        support_ids,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Linear,
    Cosine,
    Proto,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 3] = [ClassifierKind::Linear, ClassifierKind::Cosine, ClassifierKind::Proto];

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Linear => "linear",
            ClassifierKind::Cosine => "cosine",
            ClassifierKind::Proto => "proto",
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClassifierKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown classifier '{s}' (linear, cosine, proto)")))
    }
}

/// How an iterative fit ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub iterations: usize,
    pub grad_norm: f64,
    pub l2: f64,
}

/// Gradient descent with Armijo backtracking until the gradient norm drops
/// below `GRAD_TOLERANCE` or `MAX_ITERATIONS` steps were taken.
fn minimize(x: &mut [f64], l2: f64, f: impl Fn(&[f64], Option<&mut [f64]>) -> f64) -> FitInfo {
    let n = x.len();
    let objective = |x: &[f64], g: Option<&mut [f64]>| {
        let reg = 0.5 * l2 * x.iter().map(|v| v * v).sum::<f64>();
        match g {
            Some(g) => {
                let v = f(x, Some(&mut *g));
                for (gi, xi) in g.iter_mut().zip(x.iter()) {
                    *gi += l2 * xi;
                }
                v + reg
            }
            None => f(x, None) + reg,
        }
    };
    let mut g = vec![0.0; n];
    let mut value = objective(x, Some(&mut g));
    let mut step = 1.0;
    let mut trial = vec![0.0; n];
    let mut iterations = 0;
    loop {
        let norm2: f64 = g.iter().map(|v| v * v).sum();
        if norm2.sqrt() < GRAD_TOLERANCE || iterations == MAX_ITERATIONS {
            return FitInfo {
                iterations,
                grad_norm: norm2.sqrt(),
                l2,
            };
        }
        loop {
            for ((t, xi), gi) in trial.iter_mut().zip(x.iter()).zip(&g) {
                *t = xi - step * gi;
            }
            let v = objective(&trial, None);
            if v <= value - 0.5 * step * norm2 || step < 1e-12 {
                break;
            }
            step *= 0.5;
        }
        x.copy_from_slice(&trial);
        value = objective(x, Some(&mut g));
        step *= 2.0;
        iterations += 1;
    }
}

/// Mean cross-entropy of `scores` rows against labels; with `dscores`,
/// writes `d loss / d scores`.
fn mean_cross_entropy(scores: &[Vec<f64>], labels: &[usize], mut dscores: Option<&mut Vec<Vec<f64>>>) -> f64 {
    let n = scores.len() as f64;
    let mut total = 0.0;
    for (i, (s, &y)) in scores.iter().zip(labels).enumerate() {
        let (loss, d) = crate::nn::softmax_cross_entropy(s, y);
        total += loss;
        if let Some(ds) = dscores.as_deref_mut() {
            ds[i] = d.into_iter().map(|v| v / n).collect();
        }
    }
    total / n
}

fn check_support(support: &[(Vec<f64>, usize)], way: usize) -> Result<usize> {
    let dim = support.first().map_or(0, |s| s.0.len());
    let mut seen = vec![false; way];
    for (f, y) in support {
        if *y >= way || f.len() != dim {
            return Err(Error::Eval("support label or feature size out of range".into()));
        }
        seen[*y] = true;
    }
    if let Some(y) = seen.iter().position(|s| !s) {
        return Err(Error::Eval(format!("class {y} has no support instances")));
    }
    Ok(dim)
}

/// Multinomial logistic regression `W x + b` on frozen features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub fit: FitInfo,
}

impl LinearClassifier {
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        linear_scores(&self.weight, &self.bias, x)
    }
}

fn linear_scores(w: &[Vec<f64>], b: &[f64], x: &[f64]) -> Vec<f64> {
    w.iter()
        .zip(b)
        .map(|(row, bi)| bi + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>())
        .collect()
}

pub fn fit_linear(support: &[(Vec<f64>, usize)], way: usize) -> Result<LinearClassifier> {
    let dim = check_support(support, way)?;
    let labels: Vec<usize> = support.iter().map(|s| s.1).collect();
    let stride = dim + 1;
    let unpack = |x: &[f64]| -> (Vec<Vec<f64>>, Vec<f64>) {
        (
            (0..way).map(|c| x[c * stride..c * stride + dim].to_vec()).collect(),
            (0..way).map(|c| x[c * stride + dim]).collect(),
        )
    };
    let mut x = vec![0.0; way * stride];
    let fit = minimize(&mut x, L2_PENALTY, |x, g| {
        let (w, b) = unpack(x);
        let scores: Vec<Vec<f64>> = support.iter().map(|(f, _)| linear_scores(&w, &b, f)).collect();
        match g {
            None => mean_cross_entropy(&scores, &labels, None),
            Some(g) => {
                let mut ds = vec![Vec::new(); scores.len()];
                let v = mean_cross_entropy(&scores, &labels, Some(&mut ds));
                g.fill(0.0);
                for ((f, _), d) in support.iter().zip(&ds) {
                    for (c, dc) in d.iter().enumerate() {
                        let row = &mut g[c * stride..(c + 1) * stride];
                        for (gi, fi) in row[..dim].iter_mut().zip(f) {
                            *gi += dc * fi;
                        }
                        row[dim] += dc;
                    }
                }
                v
            }
        }
    });
    let (weight, bias) = unpack(&x);
    Ok(LinearClassifier { weight, bias, fit })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = norm(v);
    if n == 0.0 {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|a| a / n).collect()
    }
}

/// Scores `scale * cos(w_c, x)` with learned class vectors `w_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineClassifier {
    pub weight: Vec<Vec<f64>>,
    pub scale: f64,
    pub fit: FitInfo,
}

impl CosineClassifier {
    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        let x = unit(x);
        self.weight
            .iter()
            .map(|w| self.scale * unit(w).iter().zip(&x).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }
}

fn class_means(support: &[(Vec<f64>, usize)], way: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; way];
    let mut counts = vec![0usize; way];
    for (f, y) in support {
        for (s, v) in sums[*y].iter_mut().zip(f) {
            *s += v;
        }
        counts[*y] += 1;
    }
    for (s, n) in sums.iter_mut().zip(counts) {
        for v in s.iter_mut() {
            *v /= n as f64;
        }
    }
    sums
}

/// Fits the class vectors by cross-entropy on scaled cosine scores,
/// starting from the normalized class means of the support.
pub fn fit_cosine(support: &[(Vec<f64>, usize)], way: usize) -> Result<CosineClassifier> {
    let dim = check_support(support, way)?;
    let labels: Vec<usize> = support.iter().map(|s| s.1).collect();
    let units: Vec<Vec<f64>> = support.iter().map(|(f, _)| unit(f)).collect();
    let mut x: Vec<f64> = class_means(support, way, dim).iter().flat_map(|m| unit(m)).collect();
    let fit = minimize(&mut x, L2_PENALTY, |x, g| {
        let ws: Vec<&[f64]> = x.chunks(dim).collect();
        let norms: Vec<f64> = ws.iter().map(|w| norm(w).max(1e-12)).collect();
        let cos: Vec<Vec<f64>> = units
            .iter()
            .map(|u| {
                ws.iter()
                    .zip(&norms)
                    .map(|(w, n)| w.iter().zip(u).map(|(a, b)| a * b).sum::<f64>() / n)
                    .collect()
            })
            .collect();
        let scores: Vec<Vec<f64>> = cos.iter().map(|r| r.iter().map(|c| COSINE_SCALE * c).collect()).collect();
        match g {
            None => mean_cross_entropy(&scores, &labels, None),
            Some(g) => {
                let mut ds = vec![Vec::new(); scores.len()];
                let v = mean_cross_entropy(&scores, &labels, Some(&mut ds));
                g.fill(0.0);
                for ((u, d), crow) in units.iter().zip(&ds).zip(&cos) {
                    for c in 0..way {
                        // d cos / d w = (u - cos * w / |w|) / |w|
                        let k = COSINE_SCALE * d[c] / norms[c];
                        let w = ws[c];
                        for j in 0..dim {
                            g[c * dim + j] += k * (u[j] - crow[c] * w[j] / norms[c]);
                        }
                    }
                }
                v
            }
        }
    });
    Ok(CosineClassifier {
        weight: x.chunks(dim).map(<[f64]>::to_vec).collect(),
        scale: COSINE_SCALE,
        fit,
    })
}

/// Class means of the support; scores are negative squared Euclidean
/// distances, so the nearest prototype ranks first.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    pub means: Vec<Vec<f64>>,
}

impl Prototypes {
    pub fn fit(support: &[(Vec<f64>, usize)], way: usize) -> Result<Self> {
        let dim = check_support(support, way)?;
        Ok(Prototypes {
            means: class_means(support, way, dim),
        })
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        self.means
            .iter()
            .map(|m| -m.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .collect()
    }
}

/// Index of the nearest prototype, ties to the smaller class index.
pub fn prototype_classify(support: &[(Vec<f64>, usize)], way: usize, query: &[f64]) -> Result<usize> {
    Ok(ranked(&Prototypes::fit(support, way)?.scores(query))[0])
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Linear(LinearClassifier),
    Cosine(CosineClassifier),
    Proto(Prototypes),
}

impl Classifier {
    pub fn fit(kind: ClassifierKind, support: &[(Vec<f64>, usize)], way: usize) -> Result<Self> {
        Ok(match kind {
            ClassifierKind::Linear => Classifier::Linear(fit_linear(support, way)?),
            ClassifierKind::Cosine => Classifier::Cosine(fit_cosine(support, way)?),
            ClassifierKind::Proto => Classifier::Proto(Prototypes::fit(support, way)?),
        })
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Classifier::Linear(c) => c.scores(x),
            Classifier::Cosine(c) => c.scores(x),
            Classifier::Proto(c) => c.scores(x),
        }
    }

    pub fn fit_info(&self) -> Option<FitInfo> {
        match self {
            Classifier::Linear(c) => Some(c.fit),
            Classifier::Cosine(c) => Some(c.fit),
            Classifier::Proto(_) => None,
        }
    }
}

/// Class indices by descending score, ties by ascending index.
pub fn ranked(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Zero-based rank of class `truth` under the ordering of [`ranked`].
pub fn rank_of(scores: &[f64], truth: usize) -> usize {
    let t = scores[truth];
    scores
        .iter()
        .enumerate()
        .filter(|&(c, s)| s.total_cmp(&t).is_gt() || (s.total_cmp(&t).is_eq() && c < truth))
        .count()
}

/// Top-1 and top-5 accuracy in percent.
pub fn score(tables: &[Vec<f64>], truths: &[usize]) -> Result<(f64, f64)> {
    if tables.is_empty() || tables.len() != truths.len() {
        return Err(Error::Eval("score needs one truth per non-empty score row".into()));
    }
    let (mut top1, mut top5) = (0usize, 0usize);
    for (s, &t) in tables.iter().zip(truths) {
        if t >= s.len() || s.iter().any(|v| v.is_nan()) {
            return Err(Error::Eval("score row has NaN or truth out of range".into()));
        }
        let r = rank_of(s, t);
        top1 += usize::from(r < 1);
        top5 += usize::from(r < 5);
    }
    let n = tables.len() as f64;
    Ok((100.0 * top1 as f64 / n, 100.0 * top5 as f64 / n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub regime: String,
    /// Which trained model produced the features.
    pub model: String,
    pub split: Split,
    pub k_shot: usize,
    pub way: usize,
    pub classifier: ClassifierKind,
    pub top1: f64,
    pub top5: f64,
    pub seed: u64,
    pub support_id: String,
    pub queries: usize,
    /// Set when different classes share an identical support vector, so
    /// they cannot be told apart.
    pub degenerate_support: bool,
    pub iterations: Option<usize>,
    pub grad_norm: Option<f64>,
    pub l2: Option<f64>,
}

fn degenerate(support: &[(Vec<f64>, usize)]) -> bool {
    let mut owner: BTreeMap<Vec<u64>, usize> = BTreeMap::new();
    for (f, y) in support {
        let key: Vec<u64> = f.iter().map(|v| v.to_bits()).collect();
        if *owner.entry(key).or_insert(*y) != *y {
            return true;
        }
    }
    false
}

/// Fits `kind` on the task's support and scores its queries.
pub fn evaluate_task(task: &Task, kind: ClassifierKind, regime: &str, seed: u64) -> Result<EvalReport> {
    if task.query.is_empty() {
        return Err(Error::Eval(format!("{:?} has no query instances", task.split)));
    }
    let clf = Classifier::fit(kind, &task.support, task.way())?;
    let tables: Vec<Vec<f64>> = task.query.iter().map(|(f, _)| clf.scores(f)).collect();
    let truths: Vec<usize> = task.query.iter().map(|q| q.1).collect();
    let (top1, top5) = score(&tables, &truths)?;
    let degenerate_support = degenerate(&task.support);
    if degenerate_support {
        log::warn!("identical support features under different classes; accuracy is bounded");
    }
    let fit = clf.fit_info();
    Ok(EvalReport {
        regime: regime.to_string(),
        model: String::new(),
        split: task.split,
        k_shot: task.k_shot,
        way: task.way(),
        classifier: kind,
        top1,
        top5,
        seed,
        support_id: task.support_id(),
        queries: task.query.len(),
        degenerate_support,
        iterations: fit.map(|f| f.iterations),
        grad_norm: fit.map(|f| f.grad_norm),
        l2: fit.map(|f| f.l2),
    })
}

/// Embeds the novel instances once and evaluates every requested
/// (split, k, classifier) setting. Reports name the model by the first 12
/// hex digits of its parameter hash.
pub fn evaluate(
    model: &Model,
    m: &BenchmarkManifest,
    source: &dyn ImageSource,
    short_edge: Option<usize>,
    settings: &[(Split, usize, ClassifierKind)],
) -> Result<Vec<EvalReport>> {
    let table = embed_novel(model, m, source, short_edge)?;
    let seed = m.seeds.get(SUPPORT).copied().unwrap_or_default();
    let regime = m.regime.id();
    let name = model.param_hash()[..12].to_string();
    settings
        .iter()
        .map(|&(split, k, kind)| {
            let mut r = evaluate_task(&build_task(m, &table, split, k)?, kind, &regime, seed)?;
            r.model.clone_from(&name);
            Ok(r)
        })
        .collect()
}

/// Appends report rows to a CSV file, writing the header (preceded by
/// `# ` comment lines from `preamble`) when the file is new.
pub fn append_reports(path: &Path, reports: &[EvalReport], preamble: &[String]) -> Result<()> {
    let fresh = !path.exists() || std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len() == 0;
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    if fresh {
        for line in preamble {
            writeln!(file, "# {line}").map_err(|e| Error::io(path, e))?;
        }
    }
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    for r in reports {
        w.serialize(r).map_err(|e| Error::Eval(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads report rows back, skipping `#` comment lines.
pub fn read_reports(path: &Path) -> Result<Vec<EvalReport>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::parse(path.display().to_string(), e))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::parse(format!("{} row {}", path.display(), i + 1), e)))
        .collect()
}

/// Table layout: regime -> model -> split -> classifier -> "k-shot" ->
/// {top1, top5}.
pub fn summary_json(reports: &[EvalReport]) -> serde_json::Value {
    let mut root = serde_json::Map::new();
    for r in reports {
        let split = match r.split {
            Split::NovelVal => "novel_val",
            Split::NovelTest => "novel_test",
            Split::Base => "base",
            Split::Dropped => "dropped",
        };
        let entry = root
            .entry(r.regime.clone())
            .or_insert_with(|| serde_json::json!({}))
            .as_object_mut()
            .expect("object")
            .entry(r.model.clone())
            .or_insert_with(|| serde_json::json!({}))
            .as_object_mut()
            .expect("object")
            .entry(split)
            .or_insert_with(|| serde_json::json!({"way": r.way}))
            .as_object_mut()
            .expect("object")
            .entry(r.classifier.name())
            .or_insert_with(|| serde_json::json!({}));
        entry[format!("{}-shot", r.k_shot)] = serde_json::json!({"top1": r.top1, "top5": r.top5});
    }
    serde_json::Value::Object(root)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeds::Stream;

    fn separable(way: usize, per: usize, dim: usize, seed: u64) -> Vec<(Vec<f64>, usize)> {
        let mut s = Stream::new(seed);
        (0..way)
            .flat_map(|c| (0..per).map(move |i| (c, i)))
            .map(|(c, _)| {
                let mut f: Vec<f64> = (0..dim).map(|_| s.uniform(-0.2, 0.2)).collect();
                f[c % dim] += 3.0;
                (f, c)
            })
            .collect()
    }

    #[test]
    fn nearest_mean_example() {
        let support = vec![(vec![0.0, 0.0], 0), (vec![2.0, 2.0], 1)];
        assert_eq!(prototype_classify(&support, 2, &[0.5, 0.5]).unwrap(), 0);
        let p = Prototypes::fit(&support[..1], 1).unwrap();
        assert_eq!(p.means[0], vec![0.0, 0.0]);
    }

    #[test]
    fn separable_support_and_query_are_perfect() {
        let support = separable(4, 5, 6, 1);
        let query = separable(4, 20, 6, 2);
        for kind in ClassifierKind::ALL {
            let clf = Classifier::fit(kind, &support, 4).unwrap();
            let tables: Vec<_> = query.iter().map(|q| clf.scores(&q.0)).collect();
            let truths: Vec<_> = query.iter().map(|q| q.1).collect();
            assert_eq!(score(&tables, &truths).unwrap(), (100.0, 100.0), "{kind}");
        }
    }

    #[test]
    fn linear_fit_reports_stopping_state() {
        let c = fit_linear(&separable(3, 5, 4, 3), 3).unwrap();
        assert!(c.fit.iterations <= MAX_ITERATIONS);
        assert!(c.fit.iterations == MAX_ITERATIONS || c.fit.grad_norm < GRAD_TOLERANCE);
        assert_eq!(c.fit.l2, L2_PENALTY);
    }

    #[test]
    fn cosine_ignores_query_scale() {
        let support = separable(5, 3, 5, 4);
        let c = fit_cosine(&support, 5).unwrap();
        let mut s = Stream::new(9);
        for _ in 0..50 {
            let q: Vec<f64> = (0..5).map(|_| s.uniform(-1.0, 1.0)).collect();
            let q3: Vec<f64> = q.iter().map(|v| 3.0 * v).collect();
            assert_eq!(ranked(&c.scores(&q))[0], ranked(&c.scores(&q3))[0]);
        }
    }

    #[test]
    fn ties_rank_by_class_index() {
        assert_eq!(ranked(&[1.0, 2.0, 2.0, 0.0]), vec![1, 2, 0, 3]);
        assert_eq!(rank_of(&[1.0, 1.0, 1.0], 2), 2);
        assert_eq!(score(&[vec![0.0; 7]], &[4]).unwrap(), (0.0, 100.0));
        assert_eq!(score(&[vec![0.0; 7]], &[5]).unwrap(), (0.0, 0.0));
        assert_eq!(score(&[vec![0.0; 7]], &[0]).unwrap(), (100.0, 100.0));
    }

    #[test]
    fn missing_class_support_is_an_error() {
        let support = vec![(vec![1.0], 0)];
        assert!(matches!(fit_linear(&support, 2), Err(Error::Eval(_))));
    }

    #[test]
    fn duplicate_support_is_flagged() {
        let task = Task {
            split: Split::NovelVal,
            k_shot: 1,
            classes: vec![7, 8],
            support: vec![(vec![1.0, 0.0], 0), (vec![1.0, 0.0], 1)],
            query: vec![(vec![1.0, 0.0], 0), (vec![1.0, 0.0], 1)],
            support_ids: vec![1, 2],
        };
        let r = evaluate_task(&task, ClassifierKind::Proto, "full", 0).unwrap();
        assert!(r.degenerate_support);
        assert_eq!(r.top1, 50.0);
        assert_eq!(r.top5, 100.0);
    }

    #[test]
    fn reports_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval.csv");
        let task = Task {
            split: Split::NovelTest,
            k_shot: 1,
            classes: vec![1, 2],
            support: vec![(vec![0.0], 0), (vec![1.0], 1)],
            query: vec![(vec![0.1], 0)],
            support_ids: vec![4, 5],
        };
        let a = evaluate_task(&task, ClassifierKind::Linear, "full", 3).unwrap();
        let b = evaluate_task(&task, ClassifierKind::Proto, "full", 3).unwrap();
        append_reports(&path, std::slice::from_ref(&a), &["command=x".into()]).unwrap();
        append_reports(&path, std::slice::from_ref(&b), &["command=x".into()]).unwrap();
        assert_eq!(read_reports(&path).unwrap(), vec![a.clone(), b]);
        let s = summary_json(&[a]);
        assert_eq!(s["full"][""]["novel_test"]["linear"]["1-shot"]["top1"], 100.0);
    }
}
