//! The sampling engine for decorated IP-trees: spans of sampled points as
//! labelled plane trees, leaf attachment with branch/branchpoint weights,
//! and consistent growing chains.
//!
//! Orientation uses weak inequalities throughout: a uniform draw equal to a
//! threshold resolves leftward.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::error::Error;
use crate::ip_tree::{IpTree, TreePoint};
use crate::plane_tree::{LabelledPlaneTree, PlaneTree, Word};
use crate::rng::derive_rng;

/// The randomness behind a chain: sample points and their orientation
/// uniforms, index by index.
#[derive(Clone, Debug)]
pub struct SampleState {
    pub points: Vec<TreePoint>,
    pub uniforms: Vec<f64>,
}

impl SampleState {
    /// Draw `n` points and uniforms; each index has its own derived stream,
    /// so prefixes agree across different `n`.
    pub fn draw(tree: &IpTree, n: usize, seed: u64) -> SampleState {
        let mut points = Vec::with_capacity(n);
        let mut uniforms = Vec::with_capacity(n);
        for i in 0..n {
            let mut rng = derive_rng(seed, &[i as u64]);
            points.push(tree.sample_point(&mut rng));
            uniforms.push(rng.gen());
        }
        SampleState { points, uniforms }
    }
}

/// One vertex of an index-based span tree.
#[derive(Clone, Debug)]
pub struct SpanNode {
    pub point: TreePoint,
    pub parent: Option<usize>,
    /// Children in planar order.
    pub children: Vec<usize>,
    /// Sample labels (1-based) located at this vertex.
    pub labels: Vec<u32>,
}

/// The span of the root and a point list as a pointer tree; node indices
/// follow planar pre-order. This representation stays cheap on deep spans
/// where Ulam-Harris words would be quadratic.
#[derive(Clone, Debug)]
pub struct SpanTree {
    pub nodes: Vec<SpanNode>,
    pub root: usize,
    /// Node of each sample label (index `label - 1`).
    pub label_node: Vec<usize>,
}

impl SpanTree {
    /// Sample count per subtree, by one reverse pass over pre-order.
    pub fn subtree_label_counts(&self) -> Vec<usize> {
        let mut counts: Vec<usize> = self.nodes.iter().map(|n| n.labels.len()).collect();
        for i in (0..self.nodes.len()).rev() {
            if let Some(p) = self.nodes[i].parent {
                counts[p] += counts[i];
            }
        }
        counts
    }
}

/// Build the span as a pointer tree.
pub fn build_span_tree(tree: &IpTree, points: &[TreePoint]) -> Result<SpanTree, Error> {
    if points.is_empty() {
        return Err(Error::Range("span of zero points".into()));
    }
    for p in points {
        // Surface invalid points before any ordering logic.
        tree.fringe_mass(p)?;
        if let TreePoint::Boundary { word, .. } = p {
            if word.is_empty() {
                return Err(Error::Range("empty boundary word; use the vertex".into()));
            }
        }
    }

    // Budget exhaustion: two distinct samples materialized as identical
    // budget-length words cannot be separated.
    let mut sorted_inputs: Vec<&TreePoint> = points.iter().collect();
    sorted_inputs.sort_by(|a, b| tree.planar_cmp(a, b));
    for w in sorted_inputs.windows(2) {
        if let (TreePoint::Boundary { vertex: v1, word: w1 }, TreePoint::Boundary { vertex: v2, word: w2 }) =
            (w[0], w[1])
        {
            if v1 == v2 && w1 == w2 {
                if let Some((_, _, _, budget)) = tree.block_info(*v1) {
                    if w1.len() >= budget {
                        return Err(Error::Budget(budget));
                    }
                }
            }
        }
    }

    // Node set: root, points, and mrcas of planar-consecutive points.
    let mut keys: Vec<TreePoint> = Vec::with_capacity(2 * points.len() + 1);
    keys.push(tree.root_point());
    keys.extend(points.iter().cloned());
    for w in sorted_inputs.windows(2) {
        keys.push(tree.mrca_unchecked(w[0], w[1]));
    }
    keys.sort_by(|a, b| tree.planar_cmp(a, b));
    keys.dedup();

    // Stack construction in planar pre-order; the root comes first.
    let mut nodes: Vec<SpanNode> = Vec::with_capacity(keys.len());
    let mut stack: Vec<usize> = Vec::new();
    for p in keys.iter() {
        while let Some(&top) = stack.last() {
            if tree.leq_unchecked(&nodes[top].point, p) {
                break;
            }
            stack.pop();
        }
        let parent = stack.last().copied();
        let id = nodes.len();
        nodes.push(SpanNode {
            point: p.clone(),
            parent,
            children: Vec::new(),
            labels: Vec::new(),
        });
        if let Some(pid) = parent {
            nodes[pid].children.push(id);
        }
        stack.push(id);
    }

    let mut label_node = vec![0usize; points.len()];
    for (i, p) in points.iter().enumerate() {
        let pos = keys
            .binary_search_by(|n| tree.planar_cmp(n, p))
            .expect("every point is a node");
        nodes[pos].labels.push(i as u32 + 1);
        label_node[i] = pos;
    }
    for n in &mut nodes {
        n.labels.sort_unstable();
    }
    Ok(SpanTree {
        nodes,
        root: 0,
        label_node,
    })
}

/// Span with label sets on vertices (the planar-order map output) in
/// Ulam-Harris form, plus the location of every span vertex.
#[derive(Clone, Debug)]
pub struct Span {
    pub labelled: LabelledPlaneTree,
    /// Location of each span vertex; the planted root, when present, has no
    /// location entry.
    pub vertex_points: BTreeMap<Word, TreePoint>,
}

/// Build the span plane tree of the root and `points`, labelling the vertex
/// of point `i` with `i + 1`.
pub fn span_plane_tree(tree: &IpTree, points: &[TreePoint]) -> Result<Span, Error> {
    let span = build_span_tree(tree, points)?;
    materialize_span(&span)
}

fn materialize_span(span: &SpanTree) -> Result<Span, Error> {
    // Plant the root when the span root branches (the planar-order map adds
    // a new root vertex above a branching span root).
    let planted = span.nodes[span.root].children.len() > 1;
    let base: Word = if planted { vec![0] } else { Word::new() };
    let mut words: Vec<Word> = Vec::with_capacity(span.nodes.len() + 1);
    let mut labels: BTreeMap<Word, BTreeSet<u32>> = BTreeMap::new();
    let mut vertex_points = BTreeMap::new();
    if planted {
        words.push(Word::new());
    }
    // Iterative DFS carrying words.
    let mut stack: Vec<(usize, Word)> = vec![(span.root, base)];
    while let Some((id, w)) = stack.pop() {
        let node = &span.nodes[id];
        words.push(w.clone());
        vertex_points.insert(w.clone(), node.point.clone());
        if !node.labels.is_empty() {
            labels
                .entry(w.clone())
                .or_default()
                .extend(node.labels.iter().copied());
        }
        for (slot, &c) in node.children.iter().enumerate() {
            let mut cw = w.clone();
            cw.push(slot as u32);
            stack.push((c, cw));
        }
    }
    words.sort();
    let plane = PlaneTree::from_words(words)?;
    let labelled = LabelledPlaneTree::new(plane, labels)?;
    Ok(Span {
        labelled,
        vertex_points,
    })
}

// Nested scratch tree for leaf attachment.
struct Node {
    labels: Vec<u32>,
    point: Option<TreePoint>,
    children: Vec<Node>,
    pendant: Option<u32>,
}

fn build_node(span: &Span, w: &Word) -> Node {
    let tree = &span.labelled.tree;
    let mut children = Vec::new();
    let mut k = 0u32;
    loop {
        let mut cw = w.clone();
        cw.push(k);
        if !tree.contains(&cw) {
            break;
        }
        children.push(build_node(span, &cw));
        k += 1;
    }
    Node {
        labels: span
            .labelled
            .labels
            .get(w)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default(),
        point: span.vertex_points.get(w).cloned(),
        children,
        pendant: None,
    }
}

fn emit(node: &Node, word: Word, words: &mut Vec<Word>, labels: &mut BTreeMap<Word, BTreeSet<u32>>) {
    if let Some(l) = node.pendant {
        labels.entry(word.clone()).or_default().insert(l);
    } else if node.children.is_empty() && node.labels.len() == 1 {
        labels.entry(word.clone()).or_default().insert(node.labels[0]);
    }
    words.push(word.clone());
    for (i, c) in node.children.iter().enumerate() {
        let mut cw = word.clone();
        cw.push(i as u32);
        emit(c, cw, words, labels);
    }
}

/// Attach pendant leaves for every label at a non-leaf or multiply-labelled
/// vertex, oriented by the branch and branchpoint weights, then return the
/// leaf-labelled result (labels `1..=n` on leaves).
pub fn attach_leaves(tree: &IpTree, span: &Span, uniforms: &[f64]) -> Result<LabelledPlaneTree, Error> {
    let mut root = build_node(span, &Word::new());
    attach_rec(tree, &mut root, uniforms, true)?;
    // Plant the root if pendants widened it.
    if root.children.len() > 1 {
        let old = std::mem::replace(
            &mut root,
            Node {
                labels: Vec::new(),
                point: None,
                children: Vec::new(),
                pendant: None,
            },
        );
        root.children.push(old);
    }
    let mut words = Vec::new();
    let mut labels = BTreeMap::new();
    emit(&root, Word::new(), &mut words, &mut labels);
    words.sort();
    let plane = PlaneTree::from_words(words)?;
    LabelledPlaneTree::new(plane, labels)
}

fn attach_rec(tree: &IpTree, node: &mut Node, uniforms: &[f64], is_root: bool) -> Result<(), Error> {
    for c in &mut node.children {
        attach_rec(tree, c, uniforms, false)?;
    }
    // A singly-labelled leaf keeps its label; the root is never a leaf, so a
    // labelled root always receives pendants.
    let keeps_label = !is_root && node.children.is_empty() && node.labels.len() == 1;
    if node.labels.is_empty() || keeps_label {
        return Ok(());
    }
    let point = node
        .point
        .clone()
        .expect("labelled span vertices carry locations");

    // Gap index for each pendant: the slot among the existing children.
    let m = node.children.len();
    let mut pendants: Vec<(f64, u32, usize)> = Vec::new(); // (U, label, gap)
    for &l in &node.labels {
        let u = uniforms[(l - 1) as usize];
        let gap = match &point {
            TreePoint::Seg { seg, offset } => {
                if m > 1 {
                    return Err(Error::Structure(
                        "diffuse point with several subtrees".into(),
                    ));
                }
                if m == 1 && u > tree.lambda_at(*seg, *offset) {
                    1
                } else {
                    0
                }
            }
            TreePoint::Vertex(v) => {
                let beta = tree.beta_thresholds(*v).ok_or_else(|| {
                    Error::Structure(format!(
                        "labelled vertex {v} carries no branchpoint weights"
                    ))
                })?;
                let mut gap = m;
                for (j, child) in node.children.iter().enumerate() {
                    let cp = child
                        .point
                        .as_ref()
                        .expect("span children of a vertex carry locations");
                    let idx = tree.direction_at(*v, cp) as usize;
                    if u <= beta[idx] {
                        gap = j;
                        break;
                    }
                }
                gap
            }
            TreePoint::Boundary { .. } => {
                return Err(Error::Structure(
                    "boundary branchpoints carry no orientation weights".into(),
                ));
            }
        };
        pendants.push((u, l, gap));
    }
    pendants.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    let old_children = std::mem::take(&mut node.children);
    let mut new_children = Vec::with_capacity(old_children.len() + pendants.len());
    let mut pit = pendants.into_iter().peekable();
    for (j, child) in old_children.into_iter().enumerate() {
        while pit.peek().map(|p| p.2 <= j).unwrap_or(false) {
            new_children.push(leaf_node(pit.next().unwrap().1));
        }
        new_children.push(child);
    }
    for p in pit {
        new_children.push(leaf_node(p.1));
    }
    node.children = new_children;
    node.labels.clear();
    Ok(())
}

fn leaf_node(label: u32) -> Node {
    Node {
        labels: Vec::new(),
        point: None,
        children: Vec::new(),
        pendant: Some(label),
    }
}

/// Sample the `n`-th tree of a chain directly.
pub fn sample_tree(
    tree: &IpTree,
    n: usize,
    seed: u64,
) -> Result<(SampleState, LabelledPlaneTree), Error> {
    if n == 0 {
        return Err(Error::Range("chain length must be positive".into()));
    }
    let state = SampleState::draw(tree, n, seed);
    let span = span_plane_tree(tree, &state.points)?;
    let labelled = attach_leaves(tree, &span, &state.uniforms)?;
    Ok((state, labelled))
}

/// A consistent growing chain: the `k`-th entry is the labelled tree built
/// from the first `k` points of one sample state.
#[derive(Clone, Debug)]
pub struct Chain {
    pub state: SampleState,
    pub labelled: Vec<LabelledPlaneTree>,
}

impl Chain {
    pub fn unlabelled(&self) -> Vec<PlaneTree> {
        self.labelled.iter().map(|t| t.unlabelled()).collect()
    }

    /// Removing the top label from each tree must reproduce the previous one.
    pub fn check_consistency(&self) -> Result<(), Error> {
        for k in 1..self.labelled.len() {
            let reduced = self.labelled[k].remove_labelled_leaf(k as u32 + 1)?;
            if reduced != self.labelled[k - 1] {
                return Err(Error::Validation(format!(
                    "chain inconsistent between steps {} and {}",
                    k,
                    k + 1
                )));
            }
        }
        Ok(())
    }
}

/// Grow a labelled chain of length `n`.
pub fn grow_chain(tree: &IpTree, n: usize, seed: u64) -> Result<Chain, Error> {
    if n == 0 {
        return Err(Error::Range("chain length must be positive".into()));
    }
    let state = SampleState::draw(tree, n, seed);
    let mut labelled = Vec::with_capacity(n);
    for k in 1..=n {
        let span = span_plane_tree(tree, &state.points[..k])?;
        labelled.push(attach_leaves(tree, &span, &state.uniforms)?);
    }
    Ok(Chain { state, labelled })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ip_tree::{preset, IpTreeConfig};

    fn ip(name: &str) -> IpTree {
        IpTree::validated(&preset(name).unwrap()).unwrap()
    }

    fn single_atom() -> IpTree {
        let cfg: IpTreeConfig =
            serde_json::from_str(r#"{"vertices": 1, "atoms": [{"vertex": 0, "mass": 1.0}]}"#)
                .unwrap();
        IpTree::validated(&cfg).unwrap()
    }

    #[test]
    fn span_single_point_is_planted_path() {
        let t = ip("interval");
        let span = span_plane_tree(&t, &[TreePoint::Seg { seg: 0, offset: 0.4 }]).unwrap();
        assert_eq!(span.labelled.tree.encode(), r#"["","0"]"#);
        assert_eq!(span.labelled.labels[&vec![0u32]], BTreeSet::from([1]));
    }

    #[test]
    fn span_orders_block_leaves_by_symbol() {
        let t = ip("ell-ary");
        let p1 = TreePoint::Boundary { vertex: 0, word: vec![1, 0, 0] };
        let p2 = TreePoint::Boundary { vertex: 0, word: vec![0, 1, 1] };
        let span = span_plane_tree(&t, &[p1, p2]).unwrap();
        // Root had two directions: planted vertex added; point 2 (word 011)
        // is left of point 1 (word 100).
        assert_eq!(span.labelled.tree.leaf_count(), 2);
        let leaves = span.labelled.tree.leaves();
        assert_eq!(span.labelled.labels[&leaves[0]], BTreeSet::from([2]));
        assert_eq!(span.labelled.labels[&leaves[1]], BTreeSet::from([1]));
    }

    #[test]
    fn span_comparable_segment_points_make_labelled_path() {
        let t = ip("interval");
        let span = span_plane_tree(
            &t,
            &[
                TreePoint::Seg { seg: 0, offset: 0.3 },
                TreePoint::Seg { seg: 0, offset: 0.8 },
            ],
        )
        .unwrap();
        // Path root -> 0.3 -> 0.8 with a degree-2 labelled vertex.
        assert_eq!(span.labelled.tree.encode(), r#"["","0","00"]"#);
        assert_eq!(span.labelled.labels[&vec![0u32]], BTreeSet::from([1]));
        assert_eq!(span.labelled.labels[&vec![0u32, 0]], BTreeSet::from([2]));
    }

    #[test]
    fn attach_orders_atom_pendants_by_uniform_rank() {
        // All three samples at one atom; U-ranks (0.2, 0.9, 0.5) put the
        // leaves in order 1, 3, 2.
        let t = single_atom();
        let points = vec![TreePoint::Vertex(0); 3];
        let span = span_plane_tree(&t, &points).unwrap();
        let out = attach_leaves(&t, &span, &[0.2, 0.9, 0.5]).unwrap();
        assert!(out.tree.validate_membership(3).is_empty());
        let leaves = out.tree.leaves();
        let order: Vec<u32> = leaves
            .iter()
            .map(|w| *out.labels[w].iter().next().unwrap())
            .collect();
        assert_eq!(order, vec![1, 3, 2]);
    }

    #[test]
    fn attach_orients_by_branch_weight() {
        let t = ip("interval");
        // Two points: 0.5 is interior (pendant), 0.9 is the span tip.
        let points = vec![
            TreePoint::Seg { seg: 0, offset: 0.5 },
            TreePoint::Seg { seg: 0, offset: 0.9 },
        ];
        let span = span_plane_tree(&t, &points).unwrap();
        // lambda is 1/2; U_1 = 0.3 <= 1/2 puts leaf 1 left of the spine.
        let left = attach_leaves(&t, &span, &[0.3, 0.7]).unwrap();
        let leaves = left.tree.leaves();
        assert_eq!(left.labels[&leaves[0]], BTreeSet::from([1]));
        // U_1 = 0.7 > 1/2 puts it right.
        let right = attach_leaves(&t, &span, &[0.7, 0.7]).unwrap();
        let leaves = right.tree.leaves();
        assert_eq!(right.labels[&leaves[1]], BTreeSet::from([1]));
    }

    #[test]
    fn attach_brackets_atom_thresholds() {
        // Atom with two subtrees and thresholds (0.25, 0.75); U = 0.5 lands
        // between them.
        let cfg: IpTreeConfig = serde_json::from_str(
            r#"{"vertices": 3,
                "segments": [
                  {"parent": 0, "child": 1, "profile": [[0.0,0.0],[0.7,0.0],[1.0,0.3]]},
                  {"parent": 0, "child": 2, "profile": [[0.0,0.0],[0.7,0.0],[1.0,0.3]]}
                ],
                "atoms": [{"vertex": 0, "mass": 0.4, "beta": [0.25, 0.75]}]}"#,
        )
        .unwrap();
        let t = IpTree::validated(&cfg).unwrap();
        let points = vec![
            TreePoint::Seg { seg: 0, offset: 0.1 },
            TreePoint::Seg { seg: 1, offset: 0.1 },
            TreePoint::Vertex(0),
        ];
        let span = span_plane_tree(&t, &points).unwrap();
        let out = attach_leaves(&t, &span, &[0.5, 0.5, 0.5]).unwrap();
        assert!(out.tree.validate_membership(3).is_empty());
        let leaves = out.tree.leaves();
        let order: Vec<u32> = leaves
            .iter()
            .map(|w| *out.labels[w].iter().next().unwrap())
            .collect();
        // Leaf 3 sits between subtree 1 and subtree 2.
        assert_eq!(order, vec![1, 3, 2]);
    }

    #[test]
    fn single_atom_chain_gives_planted_stars() {
        let t = single_atom();
        let chain = grow_chain(&t, 5, 42).unwrap();
        chain.check_consistency().unwrap();
        for (k, lt) in chain.labelled.iter().enumerate() {
            let n = k + 1;
            assert!(lt.tree.validate_membership(n).is_empty());
            // Planted star: root, one center (from n = 2 on), n leaves.
            assert_eq!(lt.tree.len(), if n == 1 { 2 } else { n + 2 });
        }
    }

    #[test]
    fn chains_are_consistent_and_members() {
        for name in ["interval", "ell-ary", "atom-line"] {
            let t = ip(name);
            for seed in 0..5u64 {
                let chain = grow_chain(&t, 12, seed).unwrap();
                chain.check_consistency().unwrap();
                for (k, lt) in chain.labelled.iter().enumerate() {
                    assert!(
                        lt.tree.validate_membership(k + 1).is_empty(),
                        "{name} seed {seed} step {}",
                        k + 1
                    );
                    assert!(lt.is_leaf_labelled());
                    assert!(lt.labels_cover(k + 1));
                }
            }
        }
    }

    #[test]
    fn all_left_lambda_puts_leaves_left() {
        let cfg: IpTreeConfig = serde_json::from_str(
            r#"{"vertices": 2,
                "segments": [{"parent": 0, "child": 1,
                              "profile": [[0.0,0.0],[1.0,1.0]],
                              "lambda": [[1.0, 1.0]]}]}"#,
        )
        .unwrap();
        let t = IpTree::validated(&cfg).unwrap();
        let chain = grow_chain(&t, 8, 7).unwrap();
        let last = chain.labelled.last().unwrap();
        // Every interior vertex has its pendant leaf as the FIRST child.
        for w in last.tree.nodes() {
            if !w.is_empty() && last.tree.child_count(w) == 2 {
                let mut leaf = w.clone();
                leaf.push(0);
                assert!(last.tree.is_leaf(&leaf), "leaf not left at {w:?}");
            }
        }
    }
}
