//! Synthetic concept hierarchies with two aligned feature views per node.
//!
//! A dataset is a complete tree of a given branching factor and depth. Every
//! node carries two feature vectors standing in for two modalities: view A
//! ("image-like", the more specific signal) and view B ("text-like", the more
//! general one). Features are built by a Gaussian random walk down the tree —
//! a child's features are its parent's plus isotropic noise — so feature
//! distance correlates with tree distance and the ground-truth hierarchy is
//! known exactly. That ground truth is what the entailment metrics test
//! against later.
//!
//! From a dataset, [`derive_pairs`] produces the training relations:
//!
//! * **alignment** pairs (node A ↔ node B) feed the contrastive loss;
//! * **inter** entailment pairs treat a node's B view as more general than
//!   its own A view (a caption describes its image);
//! * **intra** entailment pairs point from child to parent inside each view.
//!
//! Datasets persist as a line-oriented text file (`HIER v1`), one node per
//! line, floats in shortest round-trip decimal, so save → load is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::PairRelation;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Scale applied to the root's raw Gaussian feature draw.
const ROOT_FEATURE_SCALE: f64 = 0.1;
/// The B view's noise is this fraction of the parent-to-child noise.
const VIEW_B_NOISE_FACTOR: f64 = 0.5;
/// Upper bound on generated nodes, guarding accidental `branching^depth` blowups.
const MAX_NODES: usize = 10_000_000;

/// One concept: position in the tree plus its two feature views.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptNode {
    pub id: usize,
    /// Root is level 0; children are `parent.level + 1`.
    pub level: usize,
    pub parent: Option<usize>,
    /// View A, the specific ("image-like") modality.
    pub feature_a: Vec<f64>,
    /// View B, the general ("text-like") modality.
    pub feature_b: Vec<f64>,
}

/// A complete concept tree with generation metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyDataset {
    nodes: Vec<ConceptNode>,
    branching: usize,
    depth: usize,
    seed: u64,
    noise_sigma: f64,
}

impl HierarchyDataset {
    pub fn nodes(&self) -> &[ConceptNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn branching(&self) -> usize {
        self.branching
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn dim(&self) -> usize {
        self.nodes.first().map_or(0, |n| n.feature_a.len())
    }

    /// `(child id, parent id)` for every edge, in child-id order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.nodes
            .iter()
            .filter_map(|n| n.parent.map(|p| (n.id, p)))
            .collect()
    }

    /// Checks the full tree contract: ids dense in file order, exactly one
    /// root, child levels = parent level + 1, consistent feature dims, and
    /// every node reachable from the root (which rules out cycles).
    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Degenerate("dataset has no nodes".to_string()));
        }
        let dim = self.nodes[0].feature_a.len();
        let mut roots = 0usize;
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i {
                return Err(Error::Degenerate(format!(
                    "node ids must be dense and ordered: position {i} holds id {}",
                    node.id
                )));
            }
            if node.feature_a.len() != dim || node.feature_b.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: node.feature_a.len().max(node.feature_b.len()),
                });
            }
            match node.parent {
                None => {
                    roots += 1;
                    if node.level != 0 {
                        return Err(Error::Degenerate(format!(
                            "root node {} must sit at level 0, found {}",
                            node.id, node.level
                        )));
                    }
                }
                Some(p) => {
                    let parent = self.nodes.get(p).ok_or_else(|| {
                        Error::UnknownId(format!("node {} references missing parent {p}", node.id))
                    })?;
                    if node.level != parent.level + 1 {
                        return Err(Error::Degenerate(format!(
                            "node {} at level {} under parent {} at level {}",
                            node.id, node.level, p, parent.level
                        )));
                    }
                }
            }
        }
        if roots != 1 {
            return Err(Error::Degenerate(format!(
                "tree must have exactly one root, found {roots}"
            )));
        }
        // Reachability from the root covers cycle-freeness: every node with a
        // valid parent chain of strictly increasing levels terminates at the
        // root, and we verified levels above; walk explicitly to be safe.
        let mut reached = vec![false; self.nodes.len()];
        let mut stack: Vec<usize> = self
            .nodes
            .iter()
            .filter(|n| n.parent.is_none())
            .map(|n| n.id)
            .collect();
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for node in &self.nodes {
            if let Some(p) = node.parent {
                children[p].push(node.id);
            }
        }
        while let Some(id) = stack.pop() {
            if reached[id] {
                return Err(Error::Degenerate(format!(
                    "node {id} reachable twice; parent links do not form a tree"
                )));
            }
            reached[id] = true;
            stack.extend(&children[id]);
        }
        if let Some(unreached) = reached.iter().position(|r| !r) {
            return Err(Error::Degenerate(format!(
                "node {unreached} is not reachable from the root"
            )));
        }
        Ok(())
    }
}

/// Number of nodes of a complete tree: `(b^(depth+1) − 1) / (b − 1)`.
fn complete_tree_size(branching: usize, depth: usize) -> Result<usize> {
    let b = branching as u128;
    let total = (b.pow(depth as u32 + 1) - 1) / (b - 1);
    if total > MAX_NODES as u128 {
        return Err(Error::InvalidParameter(format!(
            "tree of branching {branching} and depth {depth} would hold {total} nodes \
             (limit {MAX_NODES})"
        )));
    }
    Ok(total as usize)
}

/// Generates a complete concept tree.
///
/// Features form a Gaussian walk: the root's A view is a standard normal
/// draw scaled by 0.1; each child's A view adds `noise_sigma · N(0, I)` to
/// its parent's; every node's B view adds `0.5 · noise_sigma · N(0, I)` to
/// its own A view. Nodes are created in breadth-first order with one RNG
/// stream, so a seed pins the dataset bit-for-bit.
pub fn generate_tree(
    branching: usize,
    depth: usize,
    dim: usize,
    noise_sigma: f64,
    seed: u64,
) -> Result<HierarchyDataset> {
    if branching < 2 {
        return Err(Error::InvalidParameter(format!(
            "branching must be at least 2, got {branching}"
        )));
    }
    if depth < 1 {
        return Err(Error::InvalidParameter(format!(
            "depth must be at least 1, got {depth}"
        )));
    }
    if dim < 2 {
        return Err(Error::InvalidParameter(format!(
            "feature dim must be at least 2, got {dim}"
        )));
    }
    if !noise_sigma.is_finite() || noise_sigma <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "noise sigma must be finite and positive, got {noise_sigma}"
        )));
    }
    let total = complete_tree_size(branching, depth)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |scale: f64| -> Vec<f64> {
        (0..dim)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };

    let mut nodes: Vec<ConceptNode> = Vec::with_capacity(total);
    let root_a = gauss(ROOT_FEATURE_SCALE);
    let root_b: Vec<f64> = {
        let noise = gauss(VIEW_B_NOISE_FACTOR * noise_sigma);
        root_a.iter().zip(&noise).map(|(a, n)| a + n).collect()
    };
    nodes.push(ConceptNode {
        id: 0,
        level: 0,
        parent: None,
        feature_a: root_a,
        feature_b: root_b,
    });
    // Breadth-first: nodes[0..k] are finalized before node k draws from them.
    let mut next_parent = 0usize;
    while nodes.len() < total {
        let parent_id = next_parent;
        next_parent += 1;
        for _ in 0..branching {
            if nodes.len() == total {
                break;
            }
            let (parent_level, parent_a) = {
                let p = &nodes[parent_id];
                (p.level, p.feature_a.clone())
            };
            let noise_a = gauss(noise_sigma);
            let feature_a: Vec<f64> =
                parent_a.iter().zip(&noise_a).map(|(a, n)| a + n).collect();
            let noise_b = gauss(VIEW_B_NOISE_FACTOR * noise_sigma);
            let feature_b: Vec<f64> =
                feature_a.iter().zip(&noise_b).map(|(a, n)| a + n).collect();
            nodes.push(ConceptNode {
                id: nodes.len(),
                level: parent_level + 1,
                parent: Some(parent_id),
                feature_a,
                feature_b,
            });
        }
    }
    let ds = HierarchyDataset {
        nodes,
        branching,
        depth,
        seed,
        noise_sigma,
    };
    ds.validate()?;
    Ok(ds)
}

/// Which feature view of a node a pair endpoint refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    A,
    B,
}

/// One ordered entailment relation between node views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairSpec {
    pub specific: (usize, Modality),
    pub general: (usize, Modality),
    pub relation: PairRelation,
}

/// Everything the trainer samples from: contrastive alignment ids plus the
/// tagged entailment pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedPairs {
    /// Node ids whose (A, B) views are contrastive positives.
    pub alignment: Vec<usize>,
    /// Ordered (specific → general) relations, inter first, then intra.
    pub entailment: Vec<PairSpec>,
}

/// Derives the training relations of a dataset. Counts are exact functions
/// of the tree shape: `n` alignment pairs, `n` inter pairs, and
/// `2·(n − 1)` intra pairs (each edge once per modality).
pub fn derive_pairs(ds: &HierarchyDataset) -> DerivedPairs {
    let alignment: Vec<usize> = ds.nodes().iter().map(|n| n.id).collect();
    let mut entailment = Vec::with_capacity(3 * ds.len());
    for node in ds.nodes() {
        entailment.push(PairSpec {
            specific: (node.id, Modality::A),
            general: (node.id, Modality::B),
            relation: PairRelation::Inter,
        });
    }
    for (child, parent) in ds.edges() {
        for modality in [Modality::A, Modality::B] {
            entailment.push(PairSpec {
                specific: (child, modality),
                general: (parent, modality),
                relation: PairRelation::Intra,
            });
        }
    }
    DerivedPairs {
        alignment,
        entailment,
    }
}

/// Writes a dataset in the `HIER v1` line format.
pub fn save_dataset(ds: &HierarchyDataset, path: &Path) -> Result<()> {
    ds.validate()?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "HIER v1 {} {} {} {} {} {}",
        ds.len(),
        ds.dim(),
        ds.branching(),
        ds.depth(),
        ds.seed(),
        ds.noise_sigma()
    );
    for node in ds.nodes() {
        let parent = node.parent.map_or(-1i64, |p| p as i64);
        let _ = write!(out, "{} {} {parent}", node.id, node.level);
        for v in node.feature_a.iter().chain(node.feature_b.iter()) {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a `HIER v1` file, validating structure before returning. A
/// malformed or truncated file yields a parse error, never a partial tree.
pub fn load_dataset(path: &Path) -> Result<HierarchyDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty dataset file"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 8 || toks[0] != "HIER" {
        return Err(Error::parse(
            path,
            1,
            "header must be `HIER v1 <nodes> <dim> <branching> <depth> <seed> <sigma>`",
        ));
    }
    if toks[1] != "v1" {
        return Err(Error::UnsupportedVersion {
            path: path.display().to_string(),
            found: toks[1].to_string(),
            expected: "v1".to_string(),
        });
    }
    let parse_usize = |tok: &str, what: &str| -> Result<usize> {
        tok.parse()
            .map_err(|_| Error::parse(path, 1, format!("invalid {what} `{tok}`")))
    };
    let node_count = parse_usize(toks[2], "node count")?;
    let dim = parse_usize(toks[3], "dim")?;
    let branching = parse_usize(toks[4], "branching")?;
    let depth = parse_usize(toks[5], "depth")?;
    let seed: u64 = toks[6]
        .parse()
        .map_err(|_| Error::parse(path, 1, format!("invalid seed `{}`", toks[6])))?;
    let noise_sigma: f64 = toks[7]
        .parse()
        .map_err(|_| Error::parse(path, 1, format!("invalid sigma `{}`", toks[7])))?;

    let mut nodes = Vec::with_capacity(node_count);
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let expected = 3 + 2 * dim;
        if toks.len() != expected {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected {expected} fields, found {}", toks.len()),
            ));
        }
        let id: usize = toks[0]
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("invalid id `{}`", toks[0])))?;
        let level: usize = toks[1]
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("invalid level `{}`", toks[1])))?;
        let parent_raw: i64 = toks[2]
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("invalid parent `{}`", toks[2])))?;
        let parent = if parent_raw < 0 {
            None
        } else {
            Some(parent_raw as usize)
        };
        let mut floats = Vec::with_capacity(2 * dim);
        for tok in &toks[3..] {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(path, line_no, format!("invalid float `{tok}`")))?;
            floats.push(v);
        }
        let feature_b = floats.split_off(dim);
        nodes.push(ConceptNode {
            id,
            level,
            parent,
            feature_a: floats,
            feature_b,
        });
    }
    if nodes.len() != node_count {
        return Err(Error::parse(
            path,
            0,
            format!(
                "header promises {node_count} nodes, file holds {} (truncated or padded)",
                nodes.len()
            ),
        ));
    }
    let ds = HierarchyDataset {
        nodes,
        branching,
        depth,
        seed,
        noise_sigma,
    };
    ds.validate()?;
    Ok(ds)
}
