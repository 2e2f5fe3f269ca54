//! Forward dynamics for the named example chains: Marchal's growth
//! algorithm, PATRICIA / radix-sort chains, and the interval line chain.
//!
//! The exact Marchal law for small `n` is enumerated by dynamic programming
//! over all weighted choices and serves as the ground-truth oracle for the
//! backward-uniformity tests.

use std::collections::HashMap;

use rand::Rng;

use crate::error::Error;
use crate::ip_tree::{BoundaryMeasure, IpTree};
use crate::plane_tree::{LabelledPlaneTree, PlaneTree, Word};
use crate::rng::derive_rng;
use crate::sampler;

/// Default prefix budget for lazy word materialization.
pub const WORD_BUDGET: usize = 64;

pub fn validate_alpha(alpha: f64) -> Result<(), Error> {
    if alpha > 1.0 && alpha <= 2.0 {
        Ok(())
    } else {
        Err(Error::Range(format!("alpha {alpha} outside (1, 2]")))
    }
}

// ---------------------------------------------------------------------------
// Marchal growth
// ---------------------------------------------------------------------------

/// Growth weights: `alpha - 1` per edge (keyed by the child vertex) and
/// `degree - 1 - alpha` per branchpoint.
#[derive(Clone, Debug)]
pub struct MarchalWeights {
    pub edges: Vec<(Word, f64)>,
    pub branchpoints: Vec<(Word, f64)>,
}

impl MarchalWeights {
    pub fn total(&self) -> f64 {
        self.edges.iter().map(|e| e.1).sum::<f64>()
            + self.branchpoints.iter().map(|b| b.1).sum::<f64>()
    }
}

pub fn marchal_weights(tree: &PlaneTree, alpha: f64) -> Result<MarchalWeights, Error> {
    validate_alpha(alpha)?;
    let mut edges = Vec::new();
    let mut branchpoints = Vec::new();
    for w in tree.nodes() {
        if !w.is_empty() {
            edges.push((w.clone(), alpha - 1.0));
            let deg = tree.degree(w);
            if deg >= 3 {
                branchpoints.push((w.clone(), deg as f64 - 1.0 - alpha));
            }
        }
    }
    Ok(MarchalWeights {
        edges,
        branchpoints,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// One resolved growth choice, applicable deterministically.
#[derive(Clone, Debug)]
pub enum MarchalChoice {
    /// Split the edge above `child`, attach the new leaf on `side`.
    Edge { child: Word, side: Side },
    /// Insert a leaf at `vertex` into gap `gap` (0 = leftmost of `degree`
    /// slots around the existing children).
    Branch { vertex: Word, gap: usize },
}

pub fn marchal_apply(tree: &PlaneTree, choice: &MarchalChoice) -> Result<PlaneTree, Error> {
    let mut words: Vec<Word> = Vec::with_capacity(tree.len() + 2);
    match choice {
        MarchalChoice::Edge { child, side } => {
            if !tree.contains(child) || child.is_empty() {
                return Err(Error::Range("edge child not in tree".into()));
            }
            let (leaf_slot, subtree_slot) = match side {
                Side::Left => (0u32, 1u32),
                Side::Right => (1u32, 0u32),
            };
            for w in tree.nodes() {
                if w.starts_with(child) {
                    let mut nw = child.clone();
                    nw.push(subtree_slot);
                    nw.extend(&w[child.len()..]);
                    words.push(nw);
                } else {
                    words.push(w.clone());
                }
            }
            // The split vertex takes the child's old word.
            words.push(child.clone());
            let mut leaf = child.clone();
            leaf.push(leaf_slot);
            words.push(leaf);
        }
        MarchalChoice::Branch { vertex, gap } => {
            let c = tree.child_count(vertex);
            if vertex.is_empty() || c < 2 {
                return Err(Error::Range("not a branchpoint".into()));
            }
            if *gap > c {
                return Err(Error::Range(format!("gap {gap} out of range")));
            }
            for w in tree.nodes() {
                if w.len() > vertex.len()
                    && w.starts_with(vertex)
                    && w[vertex.len()] >= *gap as u32
                {
                    let mut nw = w.clone();
                    nw[vertex.len()] += 1;
                    words.push(nw);
                } else {
                    words.push(w.clone());
                }
            }
            let mut leaf = vertex.clone();
            leaf.push(*gap as u32);
            words.push(leaf);
        }
    }
    words.sort();
    Ok(PlaneTree::from_sorted_unchecked(words))
}

/// Draw a weighted growth choice.
pub fn marchal_draw<R: Rng + ?Sized>(
    tree: &PlaneTree,
    alpha: f64,
    rng: &mut R,
) -> Result<MarchalChoice, Error> {
    let weights = marchal_weights(tree, alpha)?;
    let edge_total = (alpha - 1.0) * weights.edges.len() as f64;
    let total = weights.total();
    let u: f64 = rng.gen::<f64>() * total;
    if u < edge_total {
        let idx = ((u / (alpha - 1.0)) as usize).min(weights.edges.len() - 1);
        let side = if rng.gen_bool(0.5) {
            Side::Left
        } else {
            Side::Right
        };
        Ok(MarchalChoice::Edge {
            child: weights.edges[idx].0.clone(),
            side,
        })
    } else {
        let mut rest = u - edge_total;
        let mut pick = weights.branchpoints.len() - 1;
        for (i, (_, w)) in weights.branchpoints.iter().enumerate() {
            if rest < *w {
                pick = i;
                break;
            }
            rest -= *w;
        }
        let (vertex, _) = &weights.branchpoints[pick];
        let gap = rng.gen_range(0..tree.degree(vertex));
        Ok(MarchalChoice::Branch {
            vertex: vertex.clone(),
            gap,
        })
    }
}

pub fn marchal_step<R: Rng + ?Sized>(
    tree: &PlaneTree,
    alpha: f64,
    rng: &mut R,
) -> Result<PlaneTree, Error> {
    let choice = marchal_draw(tree, alpha, rng)?;
    marchal_apply(tree, &choice)
}

/// The chain `T_1 .. T_n`, deterministic under the seed: step `k` draws from
/// its own derived stream.
pub fn marchal_chain(n: usize, alpha: f64, seed: u64) -> Result<Vec<PlaneTree>, Error> {
    validate_alpha(alpha)?;
    if n == 0 {
        return Err(Error::Range("chain length must be positive".into()));
    }
    let mut out = Vec::with_capacity(n);
    out.push(PlaneTree::unit());
    for k in 1..n {
        let mut rng = derive_rng(seed, &[k as u64]);
        let next = marchal_step(out.last().unwrap(), alpha, &mut rng)?;
        out.push(next);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Exact Marchal law (enumeration oracle)
// ---------------------------------------------------------------------------

/// Exact distribution of `T_n` under Marchal growth; capped at small `n`
/// (the state space grows super-exponentially).
pub fn marchal_law(n: usize, alpha: f64) -> Result<HashMap<PlaneTree, f64>, Error> {
    validate_alpha(alpha)?;
    if n == 0 || n > 6 {
        return Err(Error::SizeCap(format!("marchal_law supports 1..=6, got {n}")));
    }
    let mut law: HashMap<PlaneTree, f64> = HashMap::new();
    law.insert(PlaneTree::unit(), 1.0);
    for _ in 1..n {
        let mut next: HashMap<PlaneTree, f64> = HashMap::new();
        for (tree, p) in &law {
            let weights = marchal_weights(tree, alpha)?;
            let total = weights.total();
            for (child, w) in &weights.edges {
                for side in [Side::Left, Side::Right] {
                    let t = marchal_apply(
                        tree,
                        &MarchalChoice::Edge {
                            child: child.clone(),
                            side,
                        },
                    )?;
                    *next.entry(t).or_insert(0.0) += p * w / total * 0.5;
                }
            }
            for (vertex, w) in &weights.branchpoints {
                if *w <= 0.0 {
                    continue;
                }
                let deg = tree.degree(vertex);
                for gap in 0..deg {
                    let t = marchal_apply(
                        tree,
                        &MarchalChoice::Branch {
                            vertex: vertex.clone(),
                            gap,
                        },
                    )?;
                    *next.entry(t).or_insert(0.0) += p * w / total / deg as f64;
                }
            }
        }
        law = next;
    }
    Ok(law)
}

/// Exact law of a uniform backward step applied to a distribution.
pub fn backward_law(law: &HashMap<PlaneTree, f64>) -> Result<HashMap<PlaneTree, f64>, Error> {
    let mut out: HashMap<PlaneTree, f64> = HashMap::new();
    for (tree, p) in law {
        let n = tree.leaf_count();
        for i in 0..n {
            let prev = tree.backward_step(i)?;
            *out.entry(prev).or_insert(0.0) += p / n as f64;
        }
    }
    Ok(out)
}

/// Total variation distance between two tree laws.
pub fn tv_distance(a: &HashMap<PlaneTree, f64>, b: &HashMap<PlaneTree, f64>) -> f64 {
    let mut keys: Vec<&PlaneTree> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys
        .iter()
        .map(|k| (a.get(*k).unwrap_or(&0.0) - b.get(*k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

/// Empirical law from a list of sampled trees.
pub fn empirical_law(samples: &[PlaneTree]) -> HashMap<PlaneTree, f64> {
    let mut law: HashMap<PlaneTree, f64> = HashMap::new();
    let w = 1.0 / samples.len() as f64;
    for t in samples {
        *law.entry(t.clone()).or_insert(0.0) += w;
    }
    law
}

// ---------------------------------------------------------------------------
// Radix / PATRICIA
// ---------------------------------------------------------------------------

/// Radix sort tree of the given words: the plane tree of minimal
/// distinguishing prefixes with a planted root, degree-2 chains suppressed.
/// Words must separate within `budget` symbols.
pub fn radix_tree(words: &[Vec<u8>], ell: usize, budget: usize) -> Result<PlaneTree, Error> {
    Ok(radix_tree_labelled(words, ell, budget)?.unlabelled())
}

/// As [`radix_tree`], with leaf `i` labelled `i + 1`.
pub fn radix_tree_labelled(
    words: &[Vec<u8>],
    ell: usize,
    budget: usize,
) -> Result<LabelledPlaneTree, Error> {
    if words.is_empty() {
        return Err(Error::Range("radix tree of zero words".into()));
    }
    if ell < 2 {
        return Err(Error::Range("alphabet size must be >= 2".into()));
    }
    for w in words {
        if w.iter().any(|&s| s as usize >= ell) {
            return Err(Error::Structure("word symbol outside alphabet".into()));
        }
    }

    enum RTree {
        Leaf(usize),
        Node(Vec<RTree>),
    }

    fn build(words: &[Vec<u8>], idx: &[usize], depth: usize, ell: usize, budget: usize) -> Result<RTree, Error> {
        if idx.len() == 1 {
            return Ok(RTree::Leaf(idx[0]));
        }
        if depth >= budget {
            return Err(Error::Budget(budget));
        }
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); ell];
        for &i in idx {
            match words[i].get(depth) {
                Some(&s) => groups[s as usize].push(i),
                None => return Err(Error::Budget(depth)),
            }
        }
        let nonempty: Vec<Vec<usize>> = groups.into_iter().filter(|g| !g.is_empty()).collect();
        if nonempty.len() == 1 {
            // Common symbol: chain vertex, suppressed.
            return build(words, &nonempty[0], depth + 1, ell, budget);
        }
        let mut children = Vec::with_capacity(nonempty.len());
        for g in nonempty {
            children.push(build(words, &g, depth + 1, ell, budget)?);
        }
        Ok(RTree::Node(children))
    }

    fn emit(
        t: &RTree,
        word: Word,
        words_out: &mut Vec<Word>,
        labels: &mut std::collections::BTreeMap<Word, std::collections::BTreeSet<u32>>,
    ) {
        words_out.push(word.clone());
        match t {
            RTree::Leaf(i) => {
                labels.entry(word).or_default().insert(*i as u32 + 1);
            }
            RTree::Node(children) => {
                for (j, c) in children.iter().enumerate() {
                    let mut cw = word.clone();
                    cw.push(j as u32);
                    emit(c, cw, words_out, labels);
                }
            }
        }
    }

    let indices: Vec<usize> = (0..words.len()).collect();
    let top = build(words, &indices, 0, ell, budget)?;
    let mut out_words = vec![Word::new()];
    let mut labels = std::collections::BTreeMap::new();
    emit(&top, vec![0u32], &mut out_words, &mut labels);
    out_words.sort();
    let tree = PlaneTree::from_words(out_words)?;
    LabelledPlaneTree::new(tree, labels)
}

/// Draw `n` words from the boundary measure, one derived stream per index.
pub fn draw_words(
    measure: &BoundaryMeasure,
    n: usize,
    budget: usize,
    seed: u64,
) -> Vec<Vec<u8>> {
    (0..n)
        .map(|i| {
            let mut rng = derive_rng(seed, &[i as u64]);
            measure.sample_word(budget, &mut rng)
        })
        .collect()
}

/// The PATRICIA chain: `T_k` is the radix sort tree of the first `k` words.
pub fn patricia_chain(
    measure: &BoundaryMeasure,
    n: usize,
    seed: u64,
    budget: usize,
) -> Result<Vec<PlaneTree>, Error> {
    if n == 0 {
        return Err(Error::Range("chain length must be positive".into()));
    }
    let ell = measure.alphabet();
    let words = draw_words(measure, n, budget, seed);
    (1..=n).map(|k| radix_tree(&words[..k], ell, budget)).collect()
}

// ---------------------------------------------------------------------------
// Interval line chain
// ---------------------------------------------------------------------------

/// Chain sampled from an interval-type IP-tree (a path skeleton without
/// boundary blocks); delegates to the sampling engine.
pub fn line_chain(tree: &IpTree, n: usize, seed: u64) -> Result<Vec<PlaneTree>, Error> {
    for v in 0..tree.vertex_count() {
        if tree.child_segments(v).len() > 1 {
            return Err(Error::Structure(format!(
                "vertex {v} branches; not an interval-type tree"
            )));
        }
        if tree.block_info(v).is_some() {
            return Err(Error::Structure(
                "interval-type trees carry no boundary blocks".into(),
            ));
        }
    }
    Ok(sampler::grow_chain(tree, n, seed)?.unlabelled())
}

// ---------------------------------------------------------------------------
// Exact sampler laws for the preset families
// ---------------------------------------------------------------------------

/// Exact law of `T_n` for the interval tree with Lebesgue mass and constant
/// branch weight `lambda`: the top sample extends the spine, every other
/// sample hangs left with probability `lambda`, independently, ordered
/// bottom to top.
pub fn interval_line_law(n: usize, lambda: f64) -> Result<HashMap<PlaneTree, f64>, Error> {
    if n == 0 || n > 16 {
        return Err(Error::SizeCap(format!("interval_line_law supports 1..=16, got {n}")));
    }
    let mut law = HashMap::new();
    if n == 1 {
        law.insert(PlaneTree::unit(), 1.0);
        return Ok(law);
    }
    let flips = n - 1;
    for mask in 0u32..(1 << flips) {
        // Bit i: the i-th lowest interior sample hangs left.
        let mut prob = 1.0;
        let mut words: Vec<Word> = vec![Word::new()];
        let mut spine: Word = vec![0];
        for i in 0..flips {
            words.push(spine.clone());
            let left = mask & (1 << i) != 0;
            prob *= if left { lambda } else { 1.0 - lambda };
            let (leaf_slot, next_slot) = if left { (0, 1) } else { (1, 0) };
            let mut leaf = spine.clone();
            leaf.push(leaf_slot);
            words.push(leaf);
            spine.push(next_slot);
        }
        words.push(spine.clone());
        words.sort();
        let tree = PlaneTree::from_words(words)?;
        *law.entry(tree).or_insert(0.0) += prob;
    }
    Ok(law)
}

/// Exact law of the radix sort tree of `n` i.i.d. uniform `ell`-ary words.
pub fn ellary_radix_law(n: usize, ell: usize) -> Result<HashMap<PlaneTree, f64>, Error> {
    if n == 0 || n > 8 {
        return Err(Error::SizeCap(format!("ellary_radix_law supports 1..=8, got {n}")));
    }
    if ell < 2 {
        return Err(Error::Range("alphabet size must be >= 2".into()));
    }

    type SubLaw = Vec<(Vec<Word>, f64)>;

    fn compositions(m: usize, parts: usize) -> Vec<Vec<usize>> {
        if parts == 1 {
            return vec![vec![m]];
        }
        let mut out = Vec::new();
        for first in 0..=m {
            for mut rest in compositions(m - first, parts - 1) {
                rest.insert(0, first);
                out.push(rest);
            }
        }
        out
    }

    fn factorial(k: usize) -> f64 {
        (1..=k).map(|i| i as f64).product()
    }

    // Law of the suppressed trie shape of m uniform words, as subtree word
    // sets rooted at the empty word.
    fn sub_law(m: usize, ell: usize, memo: &mut HashMap<usize, SubLaw>) -> SubLaw {
        if let Some(l) = memo.get(&m) {
            return l.clone();
        }
        if m == 1 {
            let l = vec![(vec![Word::new()], 1.0)];
            memo.insert(1, l.clone());
            return l;
        }
        let trivial = ell as f64 * (1.0 / ell as f64).powi(m as i32);
        let renorm = 1.0 - trivial;
        let mut acc: HashMap<Vec<Word>, f64> = HashMap::new();
        for comp in compositions(m, ell) {
            if comp.contains(&m) {
                continue;
            }
            let coeff = factorial(m) / comp.iter().map(|&k| factorial(k)).product::<f64>();
            let p_comp = coeff * (1.0 / ell as f64).powi(m as i32) / renorm;
            let parts: Vec<usize> = comp.into_iter().filter(|&k| k > 0).collect();
            // Cartesian product of child laws.
            let mut partial: Vec<(Vec<Vec<Word>>, f64)> = vec![(Vec::new(), p_comp)];
            for &k in &parts {
                let child = sub_law(k, ell, memo);
                let mut next = Vec::new();
                for (prefix, p) in &partial {
                    for (shape, q) in &child {
                        let mut np = prefix.clone();
                        np.push(shape.clone());
                        next.push((np, p * q));
                    }
                }
                partial = next;
            }
            for (children, p) in partial {
                let mut words = vec![Word::new()];
                for (j, child) in children.iter().enumerate() {
                    for w in child {
                        let mut nw = vec![j as u32];
                        nw.extend(w);
                        words.push(nw);
                    }
                }
                words.sort();
                *acc.entry(words).or_insert(0.0) += p;
            }
        }
        let l: SubLaw = acc.into_iter().collect();
        memo.insert(m, l.clone());
        l
    }

    let mut memo = HashMap::new();
    let mut law = HashMap::new();
    for (sub, p) in sub_law(n, ell, &mut memo) {
        let mut words = vec![Word::new()];
        for w in sub {
            let mut nw = vec![0u32];
            nw.extend(w);
            words.push(nw);
        }
        words.sort();
        *law.entry(PlaneTree::from_words(words)?).or_insert(0.0) += p;
    }
    Ok(law)
}

// ---------------------------------------------------------------------------
// Arena chain for large-n depth statistics
// ---------------------------------------------------------------------------

/// Mutable pointer-based tree for long Marchal runs; plane order is the
/// order of each child list.
pub struct ArenaTree {
    parent: Vec<usize>,
    children: Vec<Vec<usize>>,
}

impl ArenaTree {
    pub fn unit() -> Self {
        ArenaTree {
            parent: vec![usize::MAX, 0],
            children: vec![vec![1], vec![]],
        }
    }

    pub fn node_count(&self) -> usize {
        self.parent.len()
    }

    /// Mean root-to-leaf graph distance.
    pub fn mean_leaf_depth(&self) -> f64 {
        let mut depth = vec![0usize; self.node_count()];
        let mut stack = vec![0usize];
        let mut sum = 0usize;
        let mut leaves = 0usize;
        while let Some(v) = stack.pop() {
            if v != 0 && self.children[v].is_empty() {
                sum += depth[v];
                leaves += 1;
            }
            for &c in &self.children[v] {
                depth[c] = depth[v] + 1;
                stack.push(c);
            }
        }
        sum as f64 / leaves as f64
    }

    pub fn to_plane_tree(&self) -> PlaneTree {
        let mut words = Vec::with_capacity(self.node_count());
        let mut stack = vec![(0usize, Word::new())];
        while let Some((v, w)) = stack.pop() {
            for (j, &c) in self.children[v].iter().enumerate() {
                let mut cw = w.clone();
                cw.push(j as u32);
                stack.push((c, cw));
            }
            words.push(w);
        }
        words.sort();
        PlaneTree::from_sorted_unchecked(words)
    }
}

/// Grow a Marchal chain in arena form, recording the mean leaf depth at each
/// requested size.
pub fn marchal_depth_profile(
    alpha: f64,
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<(usize, f64)>, Error> {
    validate_alpha(alpha)?;
    let &max_n = sizes.iter().max().ok_or_else(|| Error::Range("empty size grid".into()))?;
    let mut tree = ArenaTree::unit();
    // Branchpoints with their child counts; weights are count - alpha.
    let mut branch_nodes: Vec<usize> = Vec::new();
    let mut branch_total = 0.0f64;
    let mut out = Vec::new();
    let mut leaves = 1usize;
    if sizes.contains(&1) {
        out.push((1, tree.mean_leaf_depth()));
    }
    for step in 1..max_n {
        let mut rng = derive_rng(seed, &[step as u64]);
        let edge_total = (tree.node_count() - 1) as f64 * (alpha - 1.0);
        let u: f64 = rng.gen::<f64>() * (edge_total + branch_total);
        if u < edge_total || branch_total <= 0.0 {
            // Split the edge above node `idx + 1` (all non-root nodes).
            let idx = ((u / (alpha - 1.0)) as usize).min(tree.node_count() - 2);
            let v = idx + 1;
            let side_left = rng.gen_bool(0.5);
            let p = tree.parent[v];
            let w = tree.node_count();
            let leaf = w + 1;
            tree.parent.push(p);
            tree.parent.push(w);
            let slot = tree.children[p].iter().position(|&c| c == v).unwrap();
            tree.children[p][slot] = w;
            tree.parent[v] = w;
            tree.children.push(if side_left { vec![leaf, v] } else { vec![v, leaf] });
            tree.children.push(Vec::new());
            branch_nodes.push(w);
            branch_total += 2.0 - alpha;
        } else {
            let mut rest = u - edge_total;
            let mut pick = *branch_nodes.last().unwrap();
            for &b in &branch_nodes {
                let w = tree.children[b].len() as f64 - alpha;
                if rest < w {
                    pick = b;
                    break;
                }
                rest -= w;
            }
            let deg = tree.children[pick].len() + 1;
            let gap = rng.gen_range(0..deg);
            let leaf = tree.node_count();
            tree.parent.push(pick);
            tree.children.push(Vec::new());
            tree.children[pick].insert(gap, leaf);
            branch_total += 1.0;
        }
        leaves += 1;
        if sizes.contains(&leaves) {
            out.push((leaves, tree.mean_leaf_depth()));
        }
    }
    Ok(out)
}
