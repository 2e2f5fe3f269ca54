//! Planted plane trees in Ulam-Harris form and the uniform backward dynamics.
//!
//! A tree is stored as the sorted set of its Ulam-Harris words; the empty
//! word is the root. Sorted word order coincides with planar depth-first
//! order, so leaf indexing is by left-to-right planar position.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;

use crate::error::Error;

/// Ulam-Harris word: the path of child indices from the root.
pub type Word = Vec<u32>;

/// Rooted plane tree, canonically stored as sorted Ulam-Harris words.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PlaneTree {
    nodes: Vec<Word>,
}

/// One violated membership condition for the space of planted leaf-count
/// trees without degree-2 vertices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MembershipViolation {
    /// Root degree must be exactly 1.
    RootDegree { found: usize },
    /// A non-root internal vertex has exactly one child (degree 2).
    DegreeTwo { word: Word },
    /// Leaf count differs from the asserted `n`.
    LeafCount { found: usize, expected: usize },
}

impl fmt::Display for MembershipViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MembershipViolation::RootDegree { found } => {
                write!(f, "root has degree {found}, expected 1")
            }
            MembershipViolation::DegreeTwo { word } => {
                write!(f, "vertex {} has degree 2", encode_word(word))
            }
            MembershipViolation::LeafCount { found, expected } => {
                write!(f, "tree has {found} leaves, expected {expected}")
            }
        }
    }
}

impl PlaneTree {
    /// Build from an arbitrary word collection, checking prefix- and
    /// left-sibling-closure.
    pub fn from_words(mut words: Vec<Word>) -> Result<Self, Error> {
        words.sort();
        words.dedup();
        if words.is_empty() || !words[0].is_empty() {
            return Err(Error::Structure("missing root (empty word)".into()));
        }
        let set: BTreeSet<&Word> = words.iter().collect();
        for w in &words {
            if !w.is_empty() {
                let parent = w[..w.len() - 1].to_vec();
                if !set.contains(&parent) {
                    return Err(Error::Structure(format!(
                        "word {} lacks its parent",
                        encode_word(w)
                    )));
                }
                if *w.last().unwrap() >= 1 {
                    let mut sib = w.clone();
                    *sib.last_mut().unwrap() -= 1;
                    if !set.contains(&sib) {
                        return Err(Error::Structure(format!(
                            "word {} lacks its left sibling",
                            encode_word(w)
                        )));
                    }
                }
            }
        }
        Ok(PlaneTree { nodes: words })
    }

    /// Internal constructor for words already known to be closed and sorted.
    pub(crate) fn from_sorted_unchecked(nodes: Vec<Word>) -> Self {
        debug_assert!(nodes.windows(2).all(|w| w[0] < w[1]));
        PlaneTree { nodes }
    }

    /// The unique one-leaf tree: root plus one leaf.
    pub fn unit() -> Self {
        PlaneTree {
            nodes: vec![vec![], vec![0]],
        }
    }

    pub fn nodes(&self) -> &[Word] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, w: &[u32]) -> bool {
        self.nodes.binary_search_by(|n| n.as_slice().cmp(w)).is_ok()
    }

    /// Number of children of `w`.
    pub fn child_count(&self, w: &[u32]) -> usize {
        let mut k = 0u32;
        loop {
            let mut c = w.to_vec();
            c.push(k);
            if !self.contains(&c) {
                return k as usize;
            }
            k += 1;
        }
    }

    /// Vertex degree: children plus the parent edge for non-root vertices.
    pub fn degree(&self, w: &[u32]) -> usize {
        self.child_count(w) + usize::from(!w.is_empty())
    }

    pub fn is_leaf(&self, w: &[u32]) -> bool {
        !w.is_empty() && self.child_count(w) == 0
    }

    /// Leaves in planar (lexicographic Ulam-Harris) order.
    pub fn leaves(&self) -> Vec<Word> {
        self.nodes
            .iter()
            .filter(|w| self.is_leaf(w))
            .cloned()
            .collect()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|w| self.is_leaf(w)).count()
    }

    /// Check the membership conditions for the planted no-degree-2 space
    /// with `n` leaves; the report is empty exactly on membership.
    pub fn validate_membership(&self, n: usize) -> Vec<MembershipViolation> {
        let mut report = Vec::new();
        let root_deg = self.child_count(&[]);
        if root_deg != 1 {
            report.push(MembershipViolation::RootDegree { found: root_deg });
        }
        for w in &self.nodes {
            if !w.is_empty() && self.child_count(w) == 1 {
                report.push(MembershipViolation::DegreeTwo { word: w.clone() });
            }
        }
        let leaves = self.leaf_count();
        if leaves != n {
            report.push(MembershipViolation::LeafCount {
                found: leaves,
                expected: n,
            });
        }
        report
    }

    /// Remove the leaf with the given planar index and suppress the single
    /// vertex (if any) whose degree dropped to 2.
    pub fn backward_step(&self, leaf_index: usize) -> Result<PlaneTree, Error> {
        let (tree, _) = self.backward_step_mapped(leaf_index)?;
        Ok(tree)
    }

    /// As [`backward_step`](Self::backward_step), also returning the word
    /// relabelling induced on the surviving vertices.
    pub fn backward_step_mapped(
        &self,
        leaf_index: usize,
    ) -> Result<(PlaneTree, RemoveRename), Error> {
        let leaves = self.leaves();
        if leaves.len() <= 1 {
            return Err(Error::Floor);
        }
        let leaf = leaves
            .get(leaf_index)
            .ok_or_else(|| Error::Range(format!("leaf index {leaf_index} out of range")))?
            .clone();
        let parent = leaf[..leaf.len() - 1].to_vec();
        let removed_last = *leaf.last().unwrap();

        // Renumber right siblings of the removed leaf.
        let mut renamer = RemoveRename {
            removed: leaf.clone(),
            parent: parent.clone(),
            removed_last,
            suppressed: None,
        };

        // Suppress the parent if it dropped to a single child (never the root:
        // for n >= 2 the root's child is internal, so removed leaves sit at
        // depth >= 2).
        let parent_children = self.child_count(&parent);
        debug_assert!(!parent.is_empty() || parent_children > 1);
        if !parent.is_empty() && parent_children == 2 {
            let mut q = parent.clone();
            q.push(0);
            renamer.suppressed = Some(q);
        }

        let mut nodes: Vec<Word> = self
            .nodes
            .iter()
            .filter_map(|w| renamer.apply(w))
            .collect();
        nodes.sort();
        // The suppressed vertex maps onto its parent's word, which survives.
        nodes.dedup();
        let tree = PlaneTree { nodes };
        debug_assert!(
            tree.nodes
                .iter()
                .all(|w| w.is_empty() || tree.child_count(w) != 1),
            "backward step left a degree-2 vertex"
        );
        Ok((tree, renamer))
    }

    /// Backward step at a uniformly chosen leaf.
    pub fn uniform_backward_step<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<PlaneTree, Error> {
        let n = self.leaf_count();
        if n <= 1 {
            return Err(Error::Floor);
        }
        self.backward_step(rng.gen_range(0..n))
    }

    /// Stable text form: JSON array of encoded words in sorted order.
    pub fn encode(&self) -> String {
        let strings: Vec<String> = self.nodes.iter().map(|w| encode_word(w)).collect();
        serde_json::to_string(&strings).expect("string vec serializes")
    }

    pub fn decode(text: &str) -> Result<PlaneTree, Error> {
        let strings: Vec<String> = serde_json::from_str(text)
            .map_err(|e| Error::Parse(format!("invalid tree encoding: {e}")))?;
        let mut words = Vec::with_capacity(strings.len());
        for s in &strings {
            words.push(decode_word(s)?);
        }
        PlaneTree::from_words(words)
    }
}

impl fmt::Debug for PlaneTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PlaneTree({})", self.encode())
    }
}

impl fmt::Display for PlaneTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

/// Word relabelling induced by a leaf removal: right siblings of the removed
/// leaf shift down, and a suppressed vertex splices its subtree into its
/// parent.
#[derive(Clone, Debug)]
pub struct RemoveRename {
    removed: Word,
    parent: Word,
    removed_last: u32,
    /// The surviving child of the suppressed parent, in post-renumber words.
    suppressed: Option<Word>,
}

impl RemoveRename {
    /// Map an old word to its new word; `None` for the removed leaf.
    pub fn apply(&self, w: &[u32]) -> Option<Word> {
        if w == self.removed.as_slice() {
            return None;
        }
        let mut out = w.to_vec();
        if out.len() > self.parent.len()
            && out.starts_with(&self.parent)
            && out[self.parent.len()] > self.removed_last
        {
            out[self.parent.len()] -= 1;
        }
        if let Some(q) = &self.suppressed {
            if out.starts_with(q) {
                let tail = out[q.len()..].to_vec();
                out = self.parent.clone();
                out.extend(tail);
            }
        }
        Some(out)
    }
}

/// Encode one word: digits for indices 0-9, `[k]` for larger indices.
pub fn encode_word(w: &[u32]) -> String {
    let mut s = String::new();
    for &x in w {
        if x <= 9 {
            s.push(char::from(b'0' + x as u8));
        } else {
            s.push('[');
            s.push_str(&x.to_string());
            s.push(']');
        }
    }
    s
}

/// Inverse of [`encode_word`].
pub fn decode_word(s: &str) -> Result<Word, Error> {
    let mut w = Vec::new();
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '0'..='9' => w.push(c as u32 - '0' as u32),
            '[' => {
                let mut num = String::new();
                loop {
                    match chars.next() {
                        Some(']') => break,
                        Some(d) if d.is_ascii_digit() => num.push(d),
                        _ => {
                            return Err(Error::Parse(format!("malformed word token in {s:?}")));
                        }
                    }
                }
                w.push(
                    num.parse::<u32>()
                        .map_err(|_| Error::Parse(format!("bad index in {s:?}")))?,
                );
            }
            _ => return Err(Error::Parse(format!("invalid character {c:?} in word"))),
        }
    }
    Ok(w)
}

/// Plane tree with (partial) vertex labels; label sets over all vertices
/// partition `{1..n}`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct LabelledPlaneTree {
    pub tree: PlaneTree,
    pub labels: BTreeMap<Word, BTreeSet<u32>>,
}

impl LabelledPlaneTree {
    pub fn new(tree: PlaneTree, labels: BTreeMap<Word, BTreeSet<u32>>) -> Result<Self, Error> {
        let mut seen = BTreeSet::new();
        for (w, set) in &labels {
            if !tree.contains(w) {
                return Err(Error::Structure(format!(
                    "label on missing vertex {}",
                    encode_word(w)
                )));
            }
            if set.is_empty() {
                return Err(Error::Structure("empty label set".into()));
            }
            for &l in set {
                if l == 0 || !seen.insert(l) {
                    return Err(Error::Structure(format!("label {l} repeated or zero")));
                }
            }
        }
        Ok(LabelledPlaneTree { tree, labels })
    }

    /// True when the label sets partition `{1..n}`.
    pub fn labels_cover(&self, n: usize) -> bool {
        let mut all: Vec<u32> = self
            .labels
            .values()
            .flat_map(|s| s.iter().copied())
            .collect();
        all.sort_unstable();
        all.iter().copied().eq(1..=n as u32)
    }

    pub fn label_count(&self) -> usize {
        self.labels.values().map(|s| s.len()).sum()
    }

    /// True when every leaf carries exactly one label and nothing else is
    /// labelled: the fully leaf-labelled space.
    pub fn is_leaf_labelled(&self) -> bool {
        let leaves = self.tree.leaves();
        leaves.len() == self.labels.len()
            && leaves
                .iter()
                .all(|l| self.labels.get(l).map(|s| s.len()) == Some(1))
    }

    /// Word of the leaf carrying `label`.
    pub fn leaf_of_label(&self, label: u32) -> Option<&Word> {
        self.labels
            .iter()
            .find(|(_, set)| set.contains(&label))
            .map(|(w, _)| w)
    }

    /// Remove the leaf carrying `label` (which must be a singly-labelled
    /// leaf) and suppress any degree-2 vertex, transporting labels.
    pub fn remove_labelled_leaf(&self, label: u32) -> Result<LabelledPlaneTree, Error> {
        let word = self
            .leaf_of_label(label)
            .ok_or_else(|| Error::Range(format!("no leaf with label {label}")))?
            .clone();
        if self.labels[&word].len() != 1 || !self.tree.is_leaf(&word) {
            return Err(Error::Structure(format!(
                "label {label} is not alone on a leaf"
            )));
        }
        let leaves = self.tree.leaves();
        let idx = leaves.iter().position(|w| *w == word).unwrap();
        let (tree, rename) = self.tree.backward_step_mapped(idx)?;
        let mut labels: BTreeMap<Word, BTreeSet<u32>> = BTreeMap::new();
        for (w, set) in &self.labels {
            if *w == word {
                continue;
            }
            let nw = rename.apply(w).expect("only the removed leaf vanishes");
            labels.entry(nw).or_default().extend(set.iter().copied());
        }
        Ok(LabelledPlaneTree { tree, labels })
    }

    /// Forget the labels.
    pub fn unlabelled(&self) -> PlaneTree {
        self.tree.clone()
    }

    pub fn encode(&self) -> String {
        let nodes: Vec<String> = self.tree.nodes().iter().map(|w| encode_word(w)).collect();
        let labels: BTreeMap<String, Vec<u32>> = self
            .labels
            .iter()
            .map(|(w, s)| (encode_word(w), s.iter().copied().collect()))
            .collect();
        serde_json::to_string(&serde_json::json!({ "nodes": nodes, "labels": labels }))
            .expect("serializable")
    }

    pub fn decode(text: &str) -> Result<Self, Error> {
        #[derive(serde::Deserialize)]
        struct Enc {
            nodes: Vec<String>,
            labels: BTreeMap<String, Vec<u32>>,
        }
        let enc: Enc = serde_json::from_str(text)
            .map_err(|e| Error::Parse(format!("invalid labelled tree encoding: {e}")))?;
        let mut words = Vec::with_capacity(enc.nodes.len());
        for s in &enc.nodes {
            words.push(decode_word(s)?);
        }
        let tree = PlaneTree::from_words(words)?;
        let mut labels = BTreeMap::new();
        for (w, set) in enc.labels {
            labels.insert(decode_word(&w)?, set.into_iter().collect::<BTreeSet<u32>>());
        }
        LabelledPlaneTree::new(tree, labels)
    }
}

/// All trees of the planted no-degree-2 space with `n` leaves.
pub fn enumerate_trees(n: usize) -> Vec<PlaneTree> {
    // Each shape is the word set of a subtree rooted at the empty word.
    fn shapes(m: usize) -> Vec<Vec<Word>> {
        if m == 1 {
            return vec![vec![vec![]]];
        }
        let mut out = Vec::new();
        // Split m leaves over k >= 2 ordered children.
        fn compositions(m: usize, k: usize) -> Vec<Vec<usize>> {
            if k == 1 {
                return vec![vec![m]];
            }
            let mut res = Vec::new();
            for first in 1..=(m - k + 1) {
                for mut rest in compositions(m - first, k - 1) {
                    rest.insert(0, first);
                    res.push(rest);
                }
            }
            res
        }
        for k in 2..=m {
            for comp in compositions(m, k) {
                let child_shapes: Vec<Vec<Vec<Word>>> = comp.iter().map(|&c| shapes(c)).collect();
                let mut partial: Vec<Vec<Word>> = vec![vec![vec![]]];
                for (i, cs) in child_shapes.iter().enumerate() {
                    let mut next = Vec::new();
                    for p in &partial {
                        for s in cs {
                            let mut q = p.clone();
                            for w in s {
                                let mut nw = vec![i as u32];
                                nw.extend(w);
                                q.push(nw);
                            }
                            next.push(q);
                        }
                    }
                    partial = next;
                }
                out.extend(partial);
            }
        }
        out
    }
    shapes(n)
        .into_iter()
        .map(|sub| {
            let mut words: Vec<Word> = vec![vec![]];
            for w in sub {
                let mut nw = vec![0u32];
                nw.extend(w);
                words.push(nw);
            }
            words.sort();
            PlaneTree::from_sorted_unchecked(words)
        })
        .collect()
}
