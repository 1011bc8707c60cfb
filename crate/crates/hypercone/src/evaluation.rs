//! Evaluation suite: probabilistic entailment scoring, the entailment
//! evaluation protocol over a labeled sample set, ranking metrics, and the
//! embedding-space filtering operations used to build negative pools.
//!
//! The entailment probability of an ordered pair (specific `x`, general
//! `y`) is `p_ent = max(1 − 2φ(x, y)/π, 0)`: a perfectly nested pair
//! (exterior angle 0) scores 1, an orthogonal-or-worse pair scores 0, and
//! the score decays linearly in between.
//!
//! The protocol: each sample pairs one image with one caption per hierarchy
//! level, coarse first. Every (image, level caption) pair contributes a
//! positive entry; every caption in a shared negative pool contributes a
//! negative entry, except pool captions identical to the sample's own
//! finest caption, which are skipped. The scored set feeds AUC-ROC and
//! average precision.
//!
//! Metric conventions (pinned so cross-implementation numbers match):
//! AUC-ROC uses the rank statistic with half credit for ties, so an
//! all-ties set scores 0.5. Average precision is non-interpolated with
//! score ties broken by input order (stable sort). Kendall's tau is
//! `(concordant − discordant) / (n(n−1)/2)` over tie-free permutations.
//! Retrieval ranks are 0-based with index tie-breaks, so "rank < 3" means
//! membership in the top three.
//!
//! Retrieval-degree filtering, bidirectional consistency, and
//! lowest-degree pool selection operate on a dense image×text similarity
//! matrix. Subspace retrieval bands texts by their geodesic distance from
//! the origin over the span `[0, d(origin, image)]`, picks the text
//! nearest to the image inside each band, and reports each text once,
//! nearest band first (texts beyond the span fall into the last band).
//!
//! Sample sets travel as line-oriented text: `SAMPLE <image_id>
//! <caption_id_level1> ... <caption_id_levelL>` and `NEGPOOL <caption_id>`
//! lines, with `#` comments.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{exterior_angle, geodesic_distance, origin, LorentzPoint};
use crate::hierarchy::{HierarchyDataset, Modality};
use crate::store::{node_embedding_id, EmbeddingStore};

/// Caption levels per sample in the standard protocol.
pub const DEFAULT_PEP_LEVELS: usize = 4;
/// Bands used by subspace retrieval.
pub const DEFAULT_SUBSPACES: usize = 50;
/// Bidirectional-consistency rank threshold (0-based ranks).
pub const DEFAULT_RANK_THRESHOLD: usize = 3;
/// Size of the lowest-degree negative pool.
pub const DEFAULT_NEGATIVE_POOL: usize = 100;

/// Entailment probability `max(1 − 2φ/π, 0)` of the ordered pair
/// (specific `x`, general `y`).
pub fn p_ent(x: &LorentzPoint, y: &LorentzPoint) -> Result<f64> {
    let phi = exterior_angle(x, y)?.radians();
    Ok((1.0 - 2.0 * phi / std::f64::consts::PI).max(0.0))
}

/// One protocol sample: an image id and its caption ids ordered from the
/// coarsest level (1) to the finest (L).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PepSample {
    pub image: String,
    pub captions: Vec<String>,
}

impl PepSample {
    /// The level-L caption, the one negatives must not duplicate.
    pub fn finest_caption(&self) -> &str {
        self.captions.last().map(String::as_str).unwrap_or("")
    }
}

/// Inputs of one protocol run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PepInput {
    pub samples: Vec<PepSample>,
    pub negative_pool: Vec<String>,
    pub levels: usize,
}

impl PepInput {
    /// Checks the per-sample caption count and that every referenced id
    /// resolves in the store.
    pub fn validate(&self, store: &EmbeddingStore) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::InvalidParameter(
                "protocol needs at least one caption level".to_string(),
            ));
        }
        for sample in &self.samples {
            if sample.captions.len() != self.levels {
                return Err(Error::InvalidParameter(format!(
                    "sample `{}` lists {} captions, protocol uses {}",
                    sample.image,
                    sample.captions.len(),
                    self.levels
                )));
            }
        }
        let ids = self
            .samples
            .iter()
            .flat_map(|s| std::iter::once(&s.image).chain(s.captions.iter()))
            .chain(self.negative_pool.iter());
        for id in ids {
            if store.get(id).is_none() {
                return Err(Error::UnknownId(id.clone()));
            }
        }
        Ok(())
    }
}

/// Scored, labeled entries ready for threshold-free metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPairSet {
    entries: Vec<(f64, bool)>,
}

impl ScoredPairSet {
    /// Scores must be finite and inside `[0, 1]`.
    pub fn new(entries: Vec<(f64, bool)>) -> Result<Self> {
        for &(score, _) in &entries {
            if !score.is_finite() || !(0.0..=1.0).contains(&score) {
                return Err(Error::InvalidParameter(format!(
                    "scores must lie in [0, 1], got {score}"
                )));
            }
        }
        Ok(ScoredPairSet { entries })
    }

    pub fn entries(&self) -> &[(f64, bool)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.entries.iter().filter(|e| e.1).count()
    }

    pub fn negatives(&self) -> usize {
        self.entries.len() - self.positives()
    }
}

/// Runs the scoring half of the protocol: entailment probabilities for
/// every (image, level caption) positive and every usable pool negative.
/// Entry order is deterministic: per sample, positives by level then
/// negatives in pool order.
pub fn pep_collect(store: &EmbeddingStore, input: &PepInput) -> Result<ScoredPairSet> {
    input.validate(store)?;
    let point = |id: &str| -> Result<&LorentzPoint> {
        store
            .get(id)
            .map(|r| &r.point)
            .ok_or_else(|| Error::UnknownId(id.to_string()))
    };
    let mut entries = Vec::new();
    for sample in &input.samples {
        let image = point(&sample.image)?;
        for caption in &sample.captions {
            entries.push((p_ent(image, point(caption)?)?, true));
        }
        for negative in &input.negative_pool {
            if negative == sample.finest_caption() {
                continue;
            }
            entries.push((p_ent(image, point(negative)?)?, false));
        }
    }
    ScoredPairSet::new(entries)
}

/// Builds protocol inputs from a concept tree: each leaf's A view is an
/// image whose captions are the B views along its root-to-leaf path
/// (coarse to fine), and the pool holds every leaf's B view.
pub fn pep_input_from_tree(dataset: &HierarchyDataset) -> Result<PepInput> {
    dataset.validate()?;
    let depth = dataset.depth();
    let mut samples = Vec::new();
    for node in dataset.nodes() {
        if node.level != depth {
            continue;
        }
        let mut path = Vec::with_capacity(depth + 1);
        let mut cursor = Some(node.id);
        while let Some(id) = cursor {
            path.push(node_embedding_id(id, Modality::B));
            cursor = dataset.nodes()[id].parent;
        }
        path.reverse();
        samples.push(PepSample {
            image: node_embedding_id(node.id, Modality::A),
            captions: path,
        });
    }
    let negative_pool = dataset
        .nodes()
        .iter()
        .filter(|n| n.level == depth)
        .map(|n| node_embedding_id(n.id, Modality::B))
        .collect();
    Ok(PepInput {
        samples,
        negative_pool,
        levels: depth + 1,
    })
}

/// Writes a sample set in the line format described in the module docs.
pub fn save_pep_input(input: &PepInput, path: &Path) -> Result<()> {
    let mut out = String::new();
    for sample in &input.samples {
        let _ = write!(out, "SAMPLE {}", sample.image);
        for caption in &sample.captions {
            let _ = write!(out, " {caption}");
        }
        out.push('\n');
    }
    for id in &input.negative_pool {
        let _ = writeln!(out, "NEGPOOL {id}");
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a sample set; the caption level count is fixed by the first
/// `SAMPLE` line and enforced on the rest.
pub fn load_pep_input(path: &Path) -> Result<PepInput> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut samples: Vec<PepSample> = Vec::new();
    let mut negative_pool = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = trimmed.split_whitespace().collect();
        match toks[0] {
            "SAMPLE" => {
                if toks.len() < 3 {
                    return Err(Error::parse(
                        path,
                        line_no,
                        "SAMPLE needs an image id and at least one caption id",
                    ));
                }
                let sample = PepSample {
                    image: toks[1].to_string(),
                    captions: toks[2..].iter().map(|t| t.to_string()).collect(),
                };
                if let Some(first) = samples.first() {
                    if sample.captions.len() != first.captions.len() {
                        return Err(Error::parse(
                            path,
                            line_no,
                            format!(
                                "sample lists {} captions, earlier samples list {}",
                                sample.captions.len(),
                                first.captions.len()
                            ),
                        ));
                    }
                }
                samples.push(sample);
            }
            "NEGPOOL" => {
                if toks.len() != 2 {
                    return Err(Error::parse(
                        path,
                        line_no,
                        "NEGPOOL lines carry exactly one caption id",
                    ));
                }
                negative_pool.push(toks[1].to_string());
            }
            other => {
                return Err(Error::parse(
                    path,
                    line_no,
                    format!("unknown directive `{other}`"),
                ));
            }
        }
    }
    let levels = samples
        .first()
        .map(|s| s.captions.len())
        .unwrap_or(DEFAULT_PEP_LEVELS);
    Ok(PepInput {
        samples,
        negative_pool,
        levels,
    })
}

/// Area under the ROC curve via the rank statistic: the probability that a
/// random positive outscores a random negative, ties at half credit.
pub fn auc_roc(set: &ScoredPairSet) -> Result<f64> {
    let p = set.positives();
    let n = set.negatives();
    if p == 0 || n == 0 {
        return Err(Error::InvalidParameter(format!(
            "AUC needs both classes, got {p} positives and {n} negatives"
        )));
    }
    let entries = set.entries();
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| entries[a].0.partial_cmp(&entries[b].0).expect("finite scores"));
    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && entries[order[j]].0 == entries[order[i]].0 {
            j += 1;
        }
        // Average of the 1-based ranks i+1 ..= j, shared by the tie group.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &e in &order[i..j] {
            if entries[e].1 {
                positive_rank_sum += avg_rank;
            }
        }
        i = j;
    }
    let p_f = p as f64;
    let u = positive_rank_sum - p_f * (p_f + 1.0) / 2.0;
    Ok(u / (p_f * n as f64))
}

/// Non-interpolated average precision. Ties are broken by input order
/// (stable sort), which is the documented cross-implementation key.
pub fn average_precision(set: &ScoredPairSet) -> Result<f64> {
    let p = set.positives();
    if p == 0 {
        return Err(Error::InvalidParameter(
            "average precision needs at least one positive".to_string(),
        ));
    }
    let entries = set.entries();
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| entries[b].0.partial_cmp(&entries[a].0).expect("finite scores"));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank0, &e) in order.iter().enumerate() {
        if entries[e].1 {
            hits += 1;
            sum += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(sum / p as f64)
}

/// Rank correlation `(concordant − discordant) / (n(n−1)/2)` between two
/// orderings of the same items (no ties by construction).
pub fn kendall_tau(predicted: &[usize], reference: &[usize]) -> Result<f64> {
    if predicted.len() != reference.len() {
        return Err(Error::DimensionMismatch {
            expected: reference.len(),
            got: predicted.len(),
        });
    }
    let n = reference.len();
    if n < 2 {
        return Err(Error::InvalidParameter(
            "rank correlation needs at least two items".to_string(),
        ));
    }
    let mut reference_rank = HashMap::with_capacity(n);
    for (rank, &item) in reference.iter().enumerate() {
        if reference_rank.insert(item, rank).is_some() {
            return Err(Error::InvalidParameter(format!(
                "reference order repeats item {item}"
            )));
        }
    }
    let sequence: Vec<usize> = predicted
        .iter()
        .map(|item| {
            reference_rank.get(item).copied().ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "predicted order holds item {item} absent from the reference"
                ))
            })
        })
        .collect::<Result<_>>()?;
    if sequence.iter().collect::<HashSet<_>>().len() != n {
        return Err(Error::InvalidParameter(
            "predicted order repeats an item".to_string(),
        ));
    }
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            if sequence[j] > sequence[i] {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    Ok((concordant - discordant) as f64 / (n * (n - 1) / 2) as f64)
}

/// Fraction of queries for which at least one ground-truth candidate shows
/// up among the `k` geodesically nearest candidates. Distance ties are
/// broken by candidate index.
pub fn recall_at_k(
    queries: &[LorentzPoint],
    candidates: &[LorentzPoint],
    ground_truth: &[Vec<usize>],
    k: usize,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter(
            "recall needs k of at least 1".to_string(),
        ));
    }
    if candidates.is_empty() || queries.is_empty() {
        return Err(Error::InvalidParameter(
            "recall needs nonempty queries and candidates".to_string(),
        ));
    }
    if ground_truth.len() != queries.len() {
        return Err(Error::DimensionMismatch {
            expected: queries.len(),
            got: ground_truth.len(),
        });
    }
    for truth in ground_truth {
        if let Some(&bad) = truth.iter().find(|&&c| c >= candidates.len()) {
            return Err(Error::InvalidParameter(format!(
                "ground-truth candidate index {bad} out of range [0, {})",
                candidates.len()
            )));
        }
    }
    let mut hit_count = 0usize;
    for (query, truth) in queries.iter().zip(ground_truth) {
        let mut distances = Vec::with_capacity(candidates.len());
        for candidate in candidates {
            distances.push(geodesic_distance(query, candidate)?);
        }
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| {
            distances[a]
                .partial_cmp(&distances[b])
                .expect("finite distances")
                .then(a.cmp(&b))
        });
        let truth_set: HashSet<usize> = truth.iter().copied().collect();
        if order[..k.min(order.len())]
            .iter()
            .any(|c| truth_set.contains(c))
        {
            hit_count += 1;
        }
    }
    Ok(hit_count as f64 / queries.len() as f64)
}

/// Hierarchical retrieval along the origin–image span: texts are banded by
/// their distance from the origin into `n_subspaces` equal intervals of
/// `[0, d(origin, image)]` (overshooting texts join the last band), the
/// text nearest to the image wins each band, and the winners are listed
/// nearest band first, each id at most once, truncated to `top`.
pub fn subspace_retrieval(
    image: &LorentzPoint,
    texts: &EmbeddingStore,
    n_subspaces: usize,
    top: usize,
) -> Result<Vec<String>> {
    if n_subspaces == 0 || top == 0 {
        return Err(Error::InvalidParameter(
            "subspace retrieval needs n_subspaces ≥ 1 and top ≥ 1".to_string(),
        ));
    }
    let o = origin(image.dim(), image.kappa());
    let image_radius = geodesic_distance(&o, image)?;
    // Per band: (distance to image, id) of the best text seen so far.
    let mut best: Vec<Option<(f64, &str)>> = vec![None; n_subspaces];
    for record in texts.records() {
        if !record.role.is_text_like() {
            continue;
        }
        let radius = geodesic_distance(&o, &record.point)?;
        let band = if image_radius > 0.0 {
            (((radius / image_radius) * n_subspaces as f64) as usize).min(n_subspaces - 1)
        } else {
            0
        };
        let to_image = geodesic_distance(&record.point, image)?;
        let better = match best[band] {
            None => true,
            Some((d, id)) => to_image < d || (to_image == d && record.id.as_str() < id),
        };
        if better {
            best[band] = Some((to_image, record.id.as_str()));
        }
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for slot in best.iter().flatten() {
        if out.len() == top {
            break;
        }
        if seen.insert(slot.1) {
            out.push(slot.1.to_string());
        }
    }
    Ok(out)
}

fn validate_matrix(similarity: &[Vec<f64>]) -> Result<(usize, usize)> {
    if similarity.is_empty() || similarity[0].is_empty() {
        return Err(Error::InvalidParameter(
            "similarity matrix must be nonempty".to_string(),
        ));
    }
    let cols = similarity[0].len();
    for row in similarity {
        if row.len() != cols {
            return Err(Error::DimensionMismatch {
                expected: cols,
                got: row.len(),
            });
        }
        if row.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite(
                "similarity matrix holds a non-finite score".to_string(),
            ));
        }
    }
    Ok((similarity.len(), cols))
}

/// Per-text retrieval degree: for how many image rows the text sits in the
/// row's top `k` scores (ties broken toward the smaller column index).
pub fn retrieval_degree(similarity: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    let (_, cols) = validate_matrix(similarity)?;
    if k == 0 || k > cols {
        return Err(Error::InvalidParameter(format!(
            "top-k width {k} must lie in [1, {cols}]"
        )));
    }
    let mut degrees = vec![0usize; cols];
    for row in similarity {
        let mut order: Vec<usize> = (0..cols).collect();
        order.sort_by(|&a, &b| {
            row[b]
                .partial_cmp(&row[a])
                .expect("finite scores")
                .then(a.cmp(&b))
        });
        for &c in &order[..k] {
            degrees[c] += 1;
        }
    }
    Ok(degrees)
}

/// True when ground-truth pair `j` (row j with column j) ranks inside the
/// top `rank_threshold` in both retrieval directions. Ranks are 0-based
/// with index tie-breaks.
pub fn bidirectional_consistency(
    similarity: &[Vec<f64>],
    pair: usize,
    rank_threshold: usize,
) -> Result<bool> {
    let (rows, cols) = validate_matrix(similarity)?;
    if pair >= rows || pair >= cols {
        return Err(Error::InvalidParameter(format!(
            "pair {pair} needs both row and column inside a {rows}×{cols} matrix"
        )));
    }
    let own = similarity[pair][pair];
    let image_to_text = (0..cols)
        .filter(|&c| {
            c != pair
                && (similarity[pair][c] > own || (similarity[pair][c] == own && c < pair))
        })
        .count();
    let text_to_image = (0..rows)
        .filter(|&r| {
            r != pair
                && (similarity[r][pair] > own || (similarity[r][pair] == own && r < pair))
        })
        .count();
    Ok(image_to_text.max(text_to_image) < rank_threshold)
}

/// Indices of the `n` texts with the smallest retrieval degree, ties
/// broken by index; the result is sorted by index.
pub fn select_negative_pool(degrees: &[usize], n: usize) -> Result<Vec<usize>> {
    if n > degrees.len() {
        return Err(Error::InvalidParameter(format!(
            "cannot select a pool of {n} from {} texts",
            degrees.len()
        )));
    }
    let mut order: Vec<usize> = (0..degrees.len()).collect();
    order.sort_by_key(|&i| (degrees[i], i));
    let mut pool = order[..n].to_vec();
    pool.sort_unstable();
    Ok(pool)
}

/// Flat `key = value` metric report with a structured-text twin.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    entries: Vec<(String, f64)>,
}

impl MetricReport {
    pub fn new() -> Self {
        MetricReport::default()
    }

    /// Keys are dotted identifiers; values must be finite.
    pub fn push(&mut self, key: &str, value: f64) -> Result<()> {
        let valid_key = !key.is_empty()
            && key
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | '-'));
        if !valid_key {
            return Err(Error::InvalidParameter(format!(
                "report keys are dotted identifiers, got `{key}`"
            )));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "report value for `{key}` is not finite"
            )));
        }
        self.entries.push((key.to_string(), value));
        Ok(())
    }

    pub fn entries(&self) -> &[(String, f64)] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|&(_, v)| v)
    }

    /// One `key = value` fact per line.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for (key, value) in &self.entries {
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    /// Single flat object mirroring the text keys.
    pub fn render_json(&self) -> String {
        let body = self
            .entries
            .iter()
            .map(|(key, value)| format!("\"{key}\": {value}"))
            .collect::<Vec<_>>()
            .join(", ");
        format!("{{{body}}}\n")
    }

    pub fn save_text(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render_text()).map_err(|e| Error::io(path, e))
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render_json()).map_err(|e| Error::io(path, e))
    }
}
