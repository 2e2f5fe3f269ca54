//! Dendritic systems: the static encoding of leaf-labelled plane trees by
//! label-pair classes, a genealogical partial order and a planarity
//! function.
//!
//! Internal planarity values are never stored; they are derived from the
//! leaf values through representatives, which is consistent exactly when the
//! axioms hold. The axiom checker works at the label level: the class-order
//! conditions exhaustively over pairs of label pairs, planarity as leaf
//! antisymmetry, transitivity, and heredity of the leaf values across shared
//! classes.

use std::collections::BTreeMap;

use crate::error::Error;
use crate::mmspace::FiniteMmSpace;
use crate::plane_tree::{LabelledPlaneTree, PlaneTree, Word};
use crate::scalar::{smax, Scalar};

/// A finite dendritic system on labels `1..=n`.
#[derive(Clone, Debug)]
pub struct DendriticSystem {
    n: usize,
    /// Class id of the unordered pair (i, j), triangular indexing, 0-based.
    class_of: Vec<usize>,
    class_count: usize,
    /// leq[a] bitrows: a is a (weak) genealogical ancestor of b.
    leq: Vec<Vec<u64>>,
    /// Leaf planarity, n x n, values -1/0/+1.
    leaf_p: Vec<i8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AxiomViolation {
    C1(String),
    C2(String),
    C3(String),
    C4(String),
    P1(String),
    P2(String),
    P3(String),
    P4(String),
}

impl std::fmt::Display for AxiomViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let (name, detail) = match self {
            AxiomViolation::C1(d) => ("C1", d),
            AxiomViolation::C2(d) => ("C2", d),
            AxiomViolation::C3(d) => ("C3", d),
            AxiomViolation::C4(d) => ("C4", d),
            AxiomViolation::P1(d) => ("P1", d),
            AxiomViolation::P2(d) => ("P2", d),
            AxiomViolation::P3(d) => ("P3", d),
            AxiomViolation::P4(d) => ("P4", d),
        };
        write!(f, "({name}) {detail}")
    }
}

fn tri_index(n: usize, i: usize, j: usize) -> usize {
    let (a, b) = if i <= j { (i, j) } else { (j, i) };
    a * n - a * (a + 1) / 2 + b
}

impl DendriticSystem {
    /// Build directly from parts; labels are 1-based in the public API but
    /// the constructor takes 0-based tables.
    pub fn from_parts(
        n: usize,
        class_of: Vec<usize>,
        class_count: usize,
        leq_pairs: &[(usize, usize)],
        leaf_p: Vec<i8>,
    ) -> Result<Self, Error> {
        if n == 0 || class_of.len() != n * (n + 1) / 2 || leaf_p.len() != n * n {
            return Err(Error::Structure("dendritic table sizes mismatch".into()));
        }
        if class_of.iter().any(|&c| c >= class_count) {
            return Err(Error::Structure("class id out of range".into()));
        }
        let words = class_count.div_ceil(64);
        let mut leq = vec![vec![0u64; words]; class_count];
        for c in 0..class_count {
            leq[c][c / 64] |= 1 << (c % 64);
        }
        for &(a, b) in leq_pairs {
            if a >= class_count || b >= class_count {
                return Err(Error::Structure("order pair out of range".into()));
            }
            leq[a][b / 64] |= 1 << (b % 64);
        }
        Ok(DendriticSystem {
            n,
            class_of,
            class_count,
            leq,
            leaf_p,
        })
    }

    pub fn label_count(&self) -> usize {
        self.n
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Class of the unordered label pair (1-based labels).
    pub fn class(&self, i: u32, j: u32) -> usize {
        self.class_of[tri_index(self.n, i as usize - 1, j as usize - 1)]
    }

    /// Weak genealogical order on class ids (`a` is closer to the root).
    pub fn class_leq(&self, a: usize, b: usize) -> bool {
        self.leq[a][b / 64] & (1 << (b % 64)) != 0
    }

    /// Leaf planarity: +1 when leaf `i` is left of leaf `j`.
    pub fn p_leaf(&self, i: u32, j: u32) -> i8 {
        self.leaf_p[(i as usize - 1) * self.n + (j as usize - 1)]
    }

    /// Encode a fully leaf-labelled plane tree.
    pub fn from_labelled_tree(lt: &LabelledPlaneTree) -> Result<Self, Error> {
        if !lt.is_leaf_labelled() {
            return Err(Error::Structure(
                "dendritic encoding needs singly-labelled leaves".into(),
            ));
        }
        let n = lt.label_count();
        if !lt.labels_cover(n) {
            return Err(Error::Structure("labels do not cover 1..n".into()));
        }
        let mut leaf_word: Vec<Word> = vec![Word::new(); n];
        for (w, set) in &lt.labels {
            for &l in set {
                leaf_word[l as usize - 1] = w.clone();
            }
        }
        // Classes are the mrca words (the lcp of two node words is a node).
        let mut class_ids: BTreeMap<Word, usize> = BTreeMap::new();
        let mut class_of = vec![0usize; n * (n + 1) / 2];
        for i in 0..n {
            for j in i..n {
                let lcp_len = leaf_word[i]
                    .iter()
                    .zip(leaf_word[j].iter())
                    .take_while(|(a, b)| a == b)
                    .count();
                let w = leaf_word[i][..lcp_len].to_vec();
                let next = class_ids.len();
                let id = *class_ids.entry(w).or_insert(next);
                class_of[tri_index(n, i, j)] = id;
            }
        }
        let class_count = class_ids.len();
        // Genealogical order: prefix relation on the class words.
        let mut leq_pairs = Vec::new();
        let words: Vec<(&Word, usize)> = class_ids.iter().map(|(w, &id)| (w, id)).collect();
        for (wa, a) in &words {
            for (wb, b) in &words {
                if wb.starts_with(wa) {
                    leq_pairs.push((*a, *b));
                }
            }
        }
        // Leaf planarity from lexicographic word order.
        let mut leaf_p = vec![0i8; n * n];
        for i in 0..n {
            for j in 0..n {
                leaf_p[i * n + j] = match leaf_word[i].cmp(&leaf_word[j]) {
                    std::cmp::Ordering::Less => 1,
                    std::cmp::Ordering::Greater => -1,
                    std::cmp::Ordering::Equal => 0,
                };
            }
        }
        Self::from_parts(n, class_of, class_count, &leq_pairs, leaf_p)
    }

    /// Check all axioms; empty report exactly when the system is a
    /// dendritic system.
    pub fn check_axioms(&self) -> Vec<AxiomViolation> {
        let mut report = Vec::new();
        let n = self.n;

        // C1: class(i,j) symmetric by construction; leaf classes must be
        // exactly the diagonal classes.
        for i in 1..=n as u32 {
            for j in 1..=n as u32 {
                if i != j && self.class(i, j) == self.class(i, i) {
                    report.push(AxiomViolation::C1(format!(
                        "({i},{j}) shares the class of the leaf ({i},{i})"
                    )));
                }
                if i < j && self.class(i, i) == self.class(j, j) {
                    report.push(AxiomViolation::C1(format!(
                        "leaves {i} and {j} share a class"
                    )));
                }
            }
        }

        // C2: (i,j) below the leaf (i,i).
        for i in 1..=n as u32 {
            for j in 1..=n as u32 {
                if !self.class_leq(self.class(i, j), self.class(i, i)) {
                    report.push(AxiomViolation::C2(format!(
                        "({i},{j}) is not an ancestor of the leaf {i}"
                    )));
                }
            }
        }

        // C3: antisymmetry; plus transitivity so the order is genealogical.
        for a in 0..self.class_count {
            for b in 0..self.class_count {
                if a != b && self.class_leq(a, b) && self.class_leq(b, a) {
                    report.push(AxiomViolation::C3(format!(
                        "classes {a} and {b} are mutual ancestors"
                    )));
                }
                if self.class_leq(a, b) {
                    // up(b) must be contained in up(a).
                    for (wa, wb) in self.leq[a].iter().zip(self.leq[b].iter()) {
                        if wb & !wa != 0 {
                            report.push(AxiomViolation::C3(format!(
                                "order not transitive at ({a},{b})"
                            )));
                            break;
                        }
                    }
                }
            }
        }

        // C4: the six pairwise classes of any two label pairs have a minimum.
        'outer: for i in 1..=n as u32 {
            for j in i..=n as u32 {
                for k in 1..=n as u32 {
                    for l in k..=n as u32 {
                        let classes = [
                            self.class(i, j),
                            self.class(k, l),
                            self.class(i, l),
                            self.class(i, k),
                            self.class(j, l),
                            self.class(j, k),
                        ];
                        let mut m = classes[0];
                        for &c in &classes[1..] {
                            if self.class_leq(c, m) {
                                m = c;
                            }
                        }
                        if classes.iter().any(|&c| !self.class_leq(m, c)) {
                            report.push(AxiomViolation::C4(format!(
                                "pairs ({i},{j}) and ({k},{l}) have no minimum"
                            )));
                            if report.len() > 32 {
                                break 'outer;
                            }
                        }
                    }
                }
            }
        }

        // P1 and P2 at the leaves.
        for i in 1..=n as u32 {
            for j in 1..=n as u32 {
                if self.p_leaf(i, j) != -self.p_leaf(j, i) {
                    report.push(AxiomViolation::P1(format!("p({i},{j}) != -p({j},{i})")));
                }
                if (i == j) != (self.p_leaf(i, j) == 0) {
                    report.push(AxiomViolation::P2(format!(
                        "p({i},{j}) zero pattern wrong"
                    )));
                }
            }
        }

        // P3: transitivity of the leaf order.
        for i in 1..=n as u32 {
            for j in 1..=n as u32 {
                for k in 1..=n as u32 {
                    if self.p_leaf(i, j) == 1 && self.p_leaf(j, k) == 1 && self.p_leaf(i, k) != 1
                    {
                        report.push(AxiomViolation::P3(format!(
                            "p({i},{j}) = p({j},{k}) = 1 but p({i},{k}) = {}",
                            self.p_leaf(i, k)
                        )));
                    }
                }
            }
        }

        // P4 (heredity): two leaves that branch off strictly above their
        // common meeting class with a third leaf lie on the same side of it.
        for i in 1..=n as u32 {
            for i2 in 1..=n as u32 {
                for j in 1..=n as u32 {
                    if i == i2 || i == j || i2 == j {
                        continue;
                    }
                    let meet = self.class(i, j);
                    let own = self.class(i, i2);
                    if meet == self.class(i2, j)
                        && meet != own
                        && self.class_leq(meet, own)
                        && self.p_leaf(i, j) != self.p_leaf(i2, j)
                    {
                        report.push(AxiomViolation::P4(format!(
                            "leaves {i} and {i2} split above their meeting \
                             class with {j} but sit on different sides"
                        )));
                    }
                }
            }
        }

        report
    }

    /// Representative leaf above a class.
    fn rep_leaf(&self, c: usize) -> Option<u32> {
        (1..=self.n as u32).find(|&i| self.class_leq(c, self.class(i, i)))
    }

    /// Derived planarity between incomparable classes.
    pub fn p_class(&self, a: usize, b: usize) -> i8 {
        if self.class_leq(a, b) || self.class_leq(b, a) {
            return 0;
        }
        match (self.rep_leaf(a), self.rep_leaf(b)) {
            (Some(i), Some(j)) => self.p_leaf(i, j),
            _ => 0,
        }
    }

    /// Decode into the unique leaf-labelled plane tree; fails with the
    /// violated axiom when the system is not dendritic.
    pub fn to_labelled_tree(&self) -> Result<LabelledPlaneTree, Error> {
        let violations = self.check_axioms();
        if !violations.is_empty() {
            let msg: Vec<String> = violations.iter().take(3).map(|v| v.to_string()).collect();
            return Err(Error::Validation(msg.join("; ")));
        }
        let c = self.class_count;
        // Parent of a class: the deepest strict ancestor.
        let mut parents: Vec<Option<usize>> = vec![None; c];
        let mut root = 0usize;
        for b in 0..c {
            let ancestors: Vec<usize> =
                (0..c).filter(|&a| a != b && self.class_leq(a, b)).collect();
            if ancestors.is_empty() {
                root = b;
                continue;
            }
            let mut deepest = ancestors[0];
            for &a in &ancestors[1..] {
                if self.class_leq(deepest, a) {
                    deepest = a;
                }
            }
            parents[b] = Some(deepest);
        }
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); c];
        for b in 0..c {
            if let Some(p) = parents[b] {
                children[p].push(b);
            }
        }
        // Sibling order from the derived planarity.
        for list in &mut children {
            list.sort_by(|&x, &y| match self.p_class(x, y) {
                1 => std::cmp::Ordering::Less,
                -1 => std::cmp::Ordering::Greater,
                _ => std::cmp::Ordering::Equal,
            });
        }
        // Emit words; the class root hangs under a planted root.
        let mut words: Vec<Word> = vec![Word::new()];
        let mut labels: BTreeMap<Word, std::collections::BTreeSet<u32>> = BTreeMap::new();
        let mut leaf_class: Vec<Option<u32>> = vec![None; c];
        for i in 1..=self.n as u32 {
            leaf_class[self.class(i, i)] = Some(i);
        }
        let mut stack: Vec<(usize, Word)> = vec![(root, vec![0u32])];
        while let Some((cls, w)) = stack.pop() {
            words.push(w.clone());
            if let Some(l) = leaf_class[cls] {
                labels.entry(w.clone()).or_default().insert(l);
            }
            for (slot, &ch) in children[cls].iter().enumerate() {
                let mut cw = w.clone();
                cw.push(slot as u32);
                stack.push((ch, cw));
            }
        }
        words.sort();
        let tree = PlaneTree::from_words(words)?;
        LabelledPlaneTree::new(tree, labels)
    }

    /// Relabel by a permutation of `1..=n` (`sigma[i-1]` is the image of i).
    pub fn permute(&self, sigma: &[u32]) -> Result<Self, Error> {
        let n = self.n;
        let mut seen = vec![false; n];
        if sigma.len() != n {
            return Err(Error::Range("permutation length mismatch".into()));
        }
        for &s in sigma {
            if s == 0 || s as usize > n || seen[s as usize - 1] {
                return Err(Error::Range("not a permutation of the labels".into()));
            }
            seen[s as usize - 1] = true;
        }
        let mut class_of = vec![0usize; n * (n + 1) / 2];
        let mut leaf_p = vec![0i8; n * n];
        for i in 0..n {
            for j in i..n {
                class_of[tri_index(n, i, j)] = self.class(sigma[i], sigma[j]);
            }
            for j in 0..n {
                leaf_p[i * n + j] = self.p_leaf(sigma[i], sigma[j]);
            }
        }
        Ok(DendriticSystem {
            n,
            class_of,
            class_count: self.class_count,
            leq: self.leq.clone(),
            leaf_p,
        })
    }

    /// Restriction to the labels `1..=m`, reindexing the surviving classes.
    pub fn restrict(&self, m: usize) -> Result<Self, Error> {
        if m == 0 || m > self.n {
            return Err(Error::Range(format!("restriction to {m} labels")));
        }
        let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
        let mut class_of = vec![0usize; m * (m + 1) / 2];
        for i in 0..m {
            for j in i..m {
                let old = self.class_of[tri_index(self.n, i, j)];
                let next = remap.len();
                let id = *remap.entry(old).or_insert(next);
                class_of[tri_index(m, i, j)] = id;
            }
        }
        let class_count = remap.len();
        let mut leq_pairs = Vec::new();
        for (&oa, &a) in &remap {
            for (&ob, &b) in &remap {
                if self.class_leq(oa, ob) {
                    leq_pairs.push((a, b));
                }
            }
        }
        let mut leaf_p = vec![0i8; m * m];
        for i in 0..m {
            for j in 0..m {
                leaf_p[i * m + j] = self.leaf_p[i * self.n + j];
            }
        }
        Self::from_parts(m, class_of, class_count, &leq_pairs, leaf_p)
    }

    /// Structural equality up to class renaming.
    pub fn equivalent(&self, other: &DendriticSystem) -> bool {
        if self.n != other.n {
            return false;
        }
        let n = self.n;
        if self.leaf_p != other.leaf_p {
            return false;
        }
        let pairs: Vec<(u32, u32)> = (1..=n as u32)
            .flat_map(|i| (i..=n as u32).map(move |j| (i, j)))
            .collect();
        for (a, pa) in pairs.iter().enumerate() {
            for pb in pairs.iter().skip(a) {
                let s1 = self.class(pa.0, pa.1);
                let s2 = self.class(pb.0, pb.1);
                let o1 = other.class(pa.0, pa.1);
                let o2 = other.class(pb.0, pb.1);
                if (s1 == s2) != (o1 == o2)
                    || self.class_leq(s1, s2) != other.class_leq(o1, o2)
                    || self.class_leq(s2, s1) != other.class_leq(o2, o1)
                {
                    return false;
                }
            }
        }
        true
    }
}

// ---------------------------------------------------------------------------
// Ultrametrics and the coalescent tree
// ---------------------------------------------------------------------------

/// Empirical descendant frequency of the class of (i, j) in a leaf-labelled
/// tree with `N` leaves: the fraction of other labels below it.
pub fn ultrametric_estimate(lt: &LabelledPlaneTree, i: u32, j: u32) -> Result<f64, Error> {
    if i == j {
        return Ok(0.0);
    }
    let n = lt.label_count();
    if n < 3 {
        return Err(Error::Range("need at least three labels".into()));
    }
    let wi = lt
        .leaf_of_label(i)
        .ok_or_else(|| Error::Range(format!("no leaf labelled {i}")))?;
    let wj = lt
        .leaf_of_label(j)
        .ok_or_else(|| Error::Range(format!("no leaf labelled {j}")))?;
    let lcp = wi.iter().zip(wj.iter()).take_while(|(a, b)| a == b).count();
    let mrca = &wi[..lcp];
    let mut count = 0usize;
    for (w, set) in &lt.labels {
        if w.starts_with(mrca) {
            count += set.iter().filter(|&&l| l != i && l != j).count();
        }
    }
    Ok(count as f64 / (n - 2) as f64)
}

/// The estimator computed from the sample points directly: a label counts
/// exactly when its point lies weakly above the most recent common ancestor
/// of the pair, which is the descent condition in the built tree. Linear in
/// the sample size, against quadratic tree traversals on deep spans.
pub fn ultrametric_estimate_points(
    tree: &crate::ip_tree::IpTree,
    points: &[crate::ip_tree::TreePoint],
    i: u32,
    j: u32,
) -> Result<f64, Error> {
    if i == j {
        return Ok(0.0);
    }
    let n = points.len();
    if n < 3 || i as usize > n || j as usize > n || i == 0 || j == 0 {
        return Err(Error::Range("label out of range".into()));
    }
    let m = tree.mrca(&points[i as usize - 1], &points[j as usize - 1])?;
    let count = points
        .iter()
        .enumerate()
        .filter(|(k, p)| {
            *k != i as usize - 1 && *k != j as usize - 1 && tree.leq_unchecked(&m, p)
        })
        .count();
    Ok(count as f64 / (n - 2) as f64)
}

/// The almost-sure limit of the estimator: the fringe mass at the most
/// recent common ancestor of the two sample points.
pub fn ultrametric_exact(
    tree: &crate::ip_tree::IpTree,
    xi: &crate::ip_tree::TreePoint,
    xj: &crate::ip_tree::TreePoint,
    same_label: bool,
) -> Result<f64, Error> {
    if same_label {
        return Ok(0.0);
    }
    let m = tree.mrca(xi, xj)?;
    tree.fringe_mass(&m)
}

/// Symmetric matrix with the ultrametric property.
#[derive(Clone, Debug)]
pub struct Ultrametric<S> {
    pub d: Vec<Vec<S>>,
}

impl<S: Scalar> Ultrametric<S> {
    /// Validate and wrap; the report names the violated triple.
    pub fn new(d: Vec<Vec<S>>) -> Result<Self, Error> {
        let n = d.len();
        let tol = S::tolerance();
        for (i, row) in d.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Structure("matrix not square".into()));
            }
            if !row[i].is_zero() {
                return Err(Error::Validation(format!("nonzero diagonal at {i}")));
            }
            for (j, v) in row.iter().enumerate() {
                if i != j && *v <= S::zero() {
                    return Err(Error::Validation(format!(
                        "distance ({i},{j}) not positive"
                    )));
                }
                if (v.clone() - d[j][i].clone()).abs() > tol {
                    return Err(Error::Validation(format!("asymmetry at ({i},{j})")));
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let bound = smax(d[i][j].clone(), d[j][k].clone());
                    if d[i][k].clone() - bound > tol {
                        return Err(Error::Validation(format!(
                            "ultrametric inequality fails at triple ({i},{j},{k})"
                        )));
                    }
                }
            }
        }
        Ok(Ultrametric { d })
    }

    pub fn len(&self) -> usize {
        self.d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d.is_empty()
    }
}

/// One cluster of the coalescent: formed at `birth`, with the previous
/// clusters it merged (empty for the leaf singletons).
#[derive(Clone, Debug)]
pub struct CoalNode<S> {
    pub birth: S,
    pub members: Vec<usize>,
    pub children: Vec<usize>,
}

/// The merge forest of an ultrametric plus its metric measure space: leaves
/// carry mass 1/n, internal clusters none; distances follow the coalescent
/// formula `H - (s + t)/2`.
#[derive(Clone, Debug)]
pub struct Coalescent<S> {
    pub nodes: Vec<CoalNode<S>>,
    pub root: usize,
    pub space: FiniteMmSpace<S>,
}

pub fn coalescent_tree<S: Scalar>(um: &Ultrametric<S>) -> Result<Coalescent<S>, Error> {
    let n = um.len();
    if n == 0 {
        return Err(Error::Range("empty ultrametric".into()));
    }
    let mut nodes: Vec<CoalNode<S>> = (0..n)
        .map(|i| CoalNode {
            birth: S::zero(),
            members: vec![i],
            children: Vec::new(),
        })
        .collect();
    // Current cluster of each element.
    let mut cluster: Vec<usize> = (0..n).collect();
    let mut thresholds: Vec<S> = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            thresholds.push(um.d[i][j].clone());
        }
    }
    thresholds.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    thresholds.dedup();

    for t in &thresholds {
        // Union clusters joined at exactly this threshold.
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..n {
            for j in i + 1..n {
                if um.d[i][j] == *t && cluster[i] != cluster[j] {
                    // Group by the smaller current cluster id.
                    let (a, b) = (cluster[i].min(cluster[j]), cluster[i].max(cluster[j]));
                    let entry = groups.entry(a).or_default();
                    if !entry.contains(&b) {
                        entry.push(b);
                    }
                }
            }
        }
        if groups.is_empty() {
            continue;
        }
        // Transitively merge grouped clusters (several groups can chain).
        let mut merged: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut owner: BTreeMap<usize, usize> = BTreeMap::new();
        for (a, bs) in groups {
            let key = *owner.get(&a).unwrap_or(&a);
            let entry = merged.entry(key).or_insert_with(|| vec![a]);
            for b in bs {
                let bk = *owner.get(&b).unwrap_or(&b);
                if bk != key && !entry.contains(&bk) {
                    entry.push(bk);
                    owner.insert(bk, key);
                }
            }
            owner.insert(a, key);
        }
        for (_, parts) in merged {
            if parts.len() < 2 {
                continue;
            }
            let mut members = Vec::new();
            for &p in &parts {
                members.extend(nodes[p].members.iter().copied());
            }
            let id = nodes.len();
            nodes.push(CoalNode {
                birth: t.clone(),
                members: members.clone(),
                children: parts.clone(),
            });
            for &e in &members {
                cluster[e] = id;
            }
        }
    }
    let root = cluster[0];
    if nodes[root].members.len() != n {
        return Err(Error::Validation(
            "coalescent did not merge to a single cluster".into(),
        ));
    }

    // Lowest common ancestor heights give the space's distances.
    let count = nodes.len();
    let mut parent: Vec<Option<usize>> = vec![None; count];
    for (id, node) in nodes.iter().enumerate() {
        for &c in &node.children {
            parent[c] = Some(id);
        }
    }
    let mut ancestors: Vec<Vec<usize>> = vec![Vec::new(); count];
    for i in 0..count {
        let mut chain = vec![i];
        let mut cur = i;
        while let Some(p) = parent[cur] {
            chain.push(p);
            cur = p;
        }
        ancestors[i] = chain;
    }
    let lca_birth = |a: usize, b: usize| -> S {
        for &u in &ancestors[a] {
            if ancestors[b].contains(&u) {
                return nodes[u].birth.clone();
            }
        }
        nodes[root].birth.clone()
    };
    let half = |s: S| -> S {
        s * S::from_ratio(1, 2)
    };
    let mut dist = vec![vec![S::zero(); count]; count];
    for a in 0..count {
        for b in 0..count {
            if a == b {
                continue;
            }
            let h = smax(
                lca_birth(a, b),
                smax(nodes[a].birth.clone(), nodes[b].birth.clone()),
            );
            dist[a][b] = h - half(nodes[a].birth.clone() + nodes[b].birth.clone());
        }
    }
    let mut weights = vec![S::zero(); count];
    for w in weights.iter_mut().take(n) {
        *w = S::from_ratio(1, n as u64);
    }
    let space = FiniteMmSpace::new(dist, weights, root)?;
    Ok(Coalescent { nodes, root, space })
}

// ---------------------------------------------------------------------------
// Unordered tree signatures (for the coalescent-vs-chain comparison)
// ---------------------------------------------------------------------------

/// Canonical form of a leaf-labelled tree with the plane order forgotten.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum UnorderedSig {
    Leaf(u32),
    Node(Vec<UnorderedSig>),
}

/// Signature of a labelled plane tree, planted root dropped.
pub fn tree_signature(lt: &LabelledPlaneTree) -> Result<UnorderedSig, Error> {
    if !lt.is_leaf_labelled() {
        return Err(Error::Structure("tree is not leaf-labelled".into()));
    }
    fn rec(lt: &LabelledPlaneTree, w: &Word) -> UnorderedSig {
        let tree = &lt.tree;
        if tree.is_leaf(w) {
            return UnorderedSig::Leaf(*lt.labels[w].iter().next().unwrap());
        }
        let mut children = Vec::new();
        let mut k = 0u32;
        loop {
            let mut cw = w.clone();
            cw.push(k);
            if !tree.contains(&cw) {
                break;
            }
            children.push(rec(lt, &cw));
            k += 1;
        }
        children.sort();
        UnorderedSig::Node(children)
    }
    // Drop the planted root: a single-leaf tree is just its leaf.
    let top = vec![0u32];
    if !lt.tree.contains(&top) {
        return Err(Error::Structure("empty tree".into()));
    }
    Ok(rec(lt, &top))
}

/// Signature of a coalescent merge forest, labels `1..=n`.
pub fn coalescent_signature<S: Scalar>(coal: &Coalescent<S>) -> UnorderedSig {
    fn rec<S: Scalar>(coal: &Coalescent<S>, id: usize) -> UnorderedSig {
        let node = &coal.nodes[id];
        if node.children.is_empty() {
            return UnorderedSig::Leaf(node.members[0] as u32 + 1);
        }
        let mut children: Vec<UnorderedSig> =
            node.children.iter().map(|&c| rec(coal, c)).collect();
        children.sort();
        UnorderedSig::Node(children)
    }
    rec(coal, coal.root)
}
