//! Explicit, finitely-describable interval-partition trees.
//!
//! The model is a rooted plane skeleton of segments carrying piecewise-linear
//! diffuse mass profiles, per-vertex atom masses, and optional `l`-ary
//! boundary blocks at skeleton leaves. Distances are never stored: the root
//! distance of a point is `1 - fringe_mass(point)`, so the spacing identity
//! holds by construction wherever it is not explicitly violated by the
//! config's stated profile positions. Validation checks the stated positions
//! against the mass-derived ones.
//!
//! On a valid tree a segment profile necessarily has slope 1 where mass sits
//! and slope 0 only in a single leading gap above a vertex that carries the
//! absorbed side mass; `validate_ip` reports any profile breakpoint whose
//! stated position disagrees with the mass-derived distance.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Normalization tolerance for masses.
pub const MASS_TOL: f64 = 1e-9;

/// Default prefix budget for lazily materialized boundary words.
pub const DEFAULT_BUDGET: usize = 64;

fn default_budget() -> usize {
    DEFAULT_BUDGET
}

// ---------------------------------------------------------------------------
// Config (the documented on-disk schema)
// ---------------------------------------------------------------------------

/// On-disk description of an IP-tree. Vertex ids are `0..vertices` with the
/// root at 0; the plane order of a vertex's children is the order its child
/// segments appear in `segments`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IpTreeConfig {
    pub vertices: usize,
    #[serde(default)]
    pub segments: Vec<SegmentConfig>,
    #[serde(default)]
    pub atoms: Vec<AtomConfig>,
    #[serde(default)]
    pub blocks: Vec<BlockConfig>,
}

/// A skeleton segment with its diffuse-mass profile: breakpoints are
/// `[position along the segment, cumulative diffuse mass]`, starting at
/// `[0, 0]`. The segment's diffuse mass is the final cumulative value.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub parent: usize,
    pub child: usize,
    pub profile: Vec<[f64; 2]>,
    /// Piecewise-constant branch weights: `[mass offset end, value]` pieces
    /// covering `(0, diffuse mass]`. Omitted means 1/2 everywhere.
    #[serde(default)]
    pub lambda: Option<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AtomConfig {
    pub vertex: usize,
    pub mass: f64,
    /// Non-decreasing orientation thresholds, one per subtree of the atom.
    /// Omitted means uniform over the gaps.
    #[serde(default)]
    pub beta: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockConfig {
    pub vertex: usize,
    pub mass: f64,
    pub measure: MeasureConfig,
    #[serde(default = "default_budget")]
    pub budget: usize,
}

/// Boundary measure on infinite words over `{0..ell-1}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum MeasureConfig {
    Product { probs: Vec<f64> },
    Markov { init: Vec<f64>, trans: Vec<Vec<f64>> },
}

/// The three worked examples, available wherever a config file is accepted.
pub fn preset(name: &str) -> Option<IpTreeConfig> {
    let json = match name {
        "interval" => {
            r#"{
                "vertices": 2,
                "segments": [
                    {"parent": 0, "child": 1,
                     "profile": [[0.0, 0.0], [1.0, 1.0]],
                     "lambda": [[1.0, 0.5]]}
                ]
            }"#
        }
        "ell-ary" => {
            r#"{
                "vertices": 1,
                "blocks": [
                    {"vertex": 0, "mass": 1.0,
                     "measure": {"type": "product", "probs": [0.5, 0.5]}}
                ]
            }"#
        }
        "atom-line" => {
            r#"{
                "vertices": 3,
                "segments": [
                    {"parent": 0, "child": 1,
                     "profile": [[0.0, 0.0], [0.5, 0.5]],
                     "lambda": [[0.5, 0.25]]},
                    {"parent": 1, "child": 2,
                     "profile": [[0.0, 0.0], [0.2, 0.0], [0.5, 0.3]],
                     "lambda": [[0.3, 0.75]]}
                ],
                "atoms": [{"vertex": 1, "mass": 0.2, "beta": [0.5]}]
            }"#
        }
        _ => return None,
    };
    Some(serde_json::from_str(json).expect("embedded preset parses"))
}

pub const PRESET_NAMES: [&str; 3] = ["interval", "ell-ary", "atom-line"];

// ---------------------------------------------------------------------------
// Boundary measures
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum BoundaryMeasure {
    Product { probs: Vec<f64> },
    Markov { init: Vec<f64>, trans: Vec<Vec<f64>> },
}

impl BoundaryMeasure {
    pub fn from_config(cfg: &MeasureConfig) -> Result<Self, Error> {
        let m = match cfg {
            MeasureConfig::Product { probs } => BoundaryMeasure::Product {
                probs: probs.clone(),
            },
            MeasureConfig::Markov { init, trans } => BoundaryMeasure::Markov {
                init: init.clone(),
                trans: trans.clone(),
            },
        };
        m.validate()?;
        Ok(m)
    }

    pub fn alphabet(&self) -> usize {
        match self {
            BoundaryMeasure::Product { probs } => probs.len(),
            BoundaryMeasure::Markov { init, .. } => init.len(),
        }
    }

    fn validate(&self) -> Result<(), Error> {
        fn check_row(row: &[f64], allow_one: bool, what: &str) -> Result<(), Error> {
            if row.len() < 2 {
                return Err(Error::Structure(format!("{what}: alphabet size must be >= 2")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > MASS_TOL {
                return Err(Error::Structure(format!("{what}: probabilities sum to {sum}")));
            }
            for &p in row {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Structure(format!("{what}: probability {p} out of range")));
                }
                if !allow_one && p > 1.0 - 1e-6 {
                    return Err(Error::Structure(format!(
                        "{what}: degenerate probability {p} concentrates on a single word"
                    )));
                }
            }
            Ok(())
        }
        match self {
            BoundaryMeasure::Product { probs } => check_row(probs, false, "product measure"),
            BoundaryMeasure::Markov { init, trans } => {
                check_row(init, true, "markov initial distribution")?;
                if trans.len() != init.len() {
                    return Err(Error::Structure(
                        "markov transition matrix size mismatch".into(),
                    ));
                }
                for (i, row) in trans.iter().enumerate() {
                    if row.len() != init.len() {
                        return Err(Error::Structure(format!("markov row {i} size mismatch")));
                    }
                    check_row(row, false, &format!("markov row {i}"))?;
                }
                Ok(())
            }
        }
    }

    /// Mass of the cylinder of words starting with `w`.
    pub fn cylinder(&self, w: &[u8]) -> f64 {
        match self {
            BoundaryMeasure::Product { probs } => {
                w.iter().map(|&s| probs[s as usize]).product()
            }
            BoundaryMeasure::Markov { init, trans } => {
                if w.is_empty() {
                    return 1.0;
                }
                let mut p = init[w[0] as usize];
                for pair in w.windows(2) {
                    p *= trans[pair[0] as usize][pair[1] as usize];
                }
                p
            }
        }
    }

    /// Draw a word of `budget` symbols.
    pub fn sample_word<R: Rng + ?Sized>(&self, budget: usize, rng: &mut R) -> Vec<u8> {
        let mut w = Vec::with_capacity(budget);
        for i in 0..budget {
            let row: &[f64] = match self {
                BoundaryMeasure::Product { probs } => probs,
                BoundaryMeasure::Markov { init, trans } => {
                    if i == 0 {
                        init
                    } else {
                        &trans[w[i - 1] as usize]
                    }
                }
            };
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut sym = row.len() - 1;
            for (j, &p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    sym = j;
                    break;
                }
            }
            w.push(sym as u8);
        }
        w
    }
}

// ---------------------------------------------------------------------------
// Points
// ---------------------------------------------------------------------------

/// A location in an IP-tree: a skeleton vertex, a diffuse point on a segment
/// addressed by its mass offset, or a boundary-block word (finite prefixes
/// address block branchpoints; sampled words are budget-length prefixes of
/// the infinite words they stand for).
#[derive(Clone, Debug, PartialEq)]
pub enum TreePoint {
    Vertex(usize),
    Seg { seg: usize, offset: f64 },
    Boundary { vertex: usize, word: Vec<u8> },
}

impl TreePoint {
    /// Empty boundary words denote the block's root vertex.
    fn normalize(self) -> TreePoint {
        match self {
            TreePoint::Boundary { vertex, word } if word.is_empty() => TreePoint::Vertex(vertex),
            p => p,
        }
    }
}

#[derive(Clone, Debug)]
struct Block {
    mass: f64,
    measure: BoundaryMeasure,
    budget: usize,
}

// ---------------------------------------------------------------------------
// The validated model
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct IpTree {
    vertex_count: usize,
    seg_parent: Vec<usize>,
    seg_child: Vec<usize>,
    seg_profile: Vec<Vec<(f64, f64)>>,
    seg_lambda: Vec<Vec<(f64, f64)>>,
    children: Vec<Vec<usize>>,
    parent_seg: Vec<Option<usize>>,
    atom: Vec<f64>,
    beta: Vec<Option<Vec<f64>>>,
    block: Vec<Option<Block>>,
    fringe_v: Vec<f64>,
    depth: Vec<usize>,
}

/// One violated IP-tree condition.
#[derive(Clone, Debug, PartialEq)]
pub enum IpViolation {
    /// Total mass differs from 1 beyond tolerance.
    MassNormalization { total: f64 },
    /// A skeleton leaf carries no mass and no diffuse mass reaches it.
    Spanning { vertex: usize },
    /// A stated profile position disagrees with the mass-derived distance.
    Spacing {
        segment: usize,
        breakpoint: usize,
        stated_root_distance: f64,
        required_root_distance: f64,
    },
}

impl std::fmt::Display for IpViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IpViolation::MassNormalization { total } => {
                write!(f, "total mass {total} differs from 1")
            }
            IpViolation::Spanning { vertex } => {
                write!(f, "leaf vertex {vertex} is not in the support of the measure")
            }
            IpViolation::Spacing {
                segment,
                breakpoint,
                stated_root_distance,
                required_root_distance,
            } => write!(
                f,
                "spacing violated on segment {segment} at breakpoint {breakpoint}: \
                 stated root distance {stated_root_distance}, required {required_root_distance}"
            ),
        }
    }
}

impl IpTree {
    /// Build the structural model; IP-tree conditions are checked separately
    /// by [`validate_ip`](Self::validate_ip).
    pub fn from_config(cfg: &IpTreeConfig) -> Result<Self, Error> {
        let n = cfg.vertices;
        if n == 0 {
            return Err(Error::Structure("need at least the root vertex".into()));
        }
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut parent_seg: Vec<Option<usize>> = vec![None; n];
        let mut seg_parent = Vec::new();
        let mut seg_child = Vec::new();
        let mut seg_profile = Vec::new();
        let mut seg_lambda = Vec::new();

        for (sid, s) in cfg.segments.iter().enumerate() {
            if s.parent >= n || s.child >= n {
                return Err(Error::Structure(format!("segment {sid}: vertex out of range")));
            }
            if s.child == 0 {
                return Err(Error::Structure("the root cannot be a segment child".into()));
            }
            if parent_seg[s.child].is_some() {
                return Err(Error::Structure(format!(
                    "vertex {} has two parent segments",
                    s.child
                )));
            }
            parent_seg[s.child] = Some(sid);
            children[s.parent].push(sid);
            seg_parent.push(s.parent);
            seg_child.push(s.child);

            // Profile: starts at [0,0]; positions strictly increasing,
            // cumulative masses non-decreasing.
            let prof: Vec<(f64, f64)> = s.profile.iter().map(|b| (b[0], b[1])).collect();
            if prof.is_empty() || prof[0] != (0.0, 0.0) {
                return Err(Error::Structure(format!(
                    "segment {sid}: profile must start at [0, 0]"
                )));
            }
            for w in prof.windows(2) {
                if w[1].0 <= w[0].0 || w[1].1 < w[0].1 - MASS_TOL {
                    return Err(Error::Structure(format!(
                        "segment {sid}: profile not monotone"
                    )));
                }
            }
            let mass = prof.last().unwrap().1;
            if mass < -MASS_TOL {
                return Err(Error::Structure(format!("segment {sid}: negative mass")));
            }
            let lam = match &s.lambda {
                None => vec![(mass.max(0.0), 0.5)],
                Some(pieces) => {
                    let lam: Vec<(f64, f64)> = pieces.iter().map(|p| (p[0], p[1])).collect();
                    if lam.is_empty()
                        || lam.windows(2).any(|w| w[1].0 <= w[0].0)
                        || (lam.last().unwrap().0 - mass).abs() > MASS_TOL
                        || lam.iter().any(|&(_, v)| !(0.0..=1.0).contains(&v))
                    {
                        return Err(Error::Structure(format!(
                            "segment {sid}: branch weights do not cover the diffuse mass"
                        )));
                    }
                    lam
                }
            };
            seg_profile.push(prof);
            seg_lambda.push(lam);
        }

        // Reachability from the root makes the skeleton a tree.
        let mut depth = vec![usize::MAX; n];
        depth[0] = 0;
        let mut stack = vec![0usize];
        let mut seen = 1usize;
        while let Some(v) = stack.pop() {
            for &sid in &children[v] {
                let c = seg_child[sid];
                if depth[c] != usize::MAX {
                    return Err(Error::Structure("skeleton contains a cycle".into()));
                }
                depth[c] = depth[v] + 1;
                seen += 1;
                stack.push(c);
            }
        }
        if seen != n {
            return Err(Error::Structure("skeleton is not connected".into()));
        }

        let mut atom = vec![0.0; n];
        let mut beta: Vec<Option<Vec<f64>>> = vec![None; n];
        for a in &cfg.atoms {
            if a.vertex >= n {
                return Err(Error::Structure("atom vertex out of range".into()));
            }
            if a.mass <= 0.0 {
                return Err(Error::Structure("atom mass must be positive".into()));
            }
            if atom[a.vertex] != 0.0 {
                return Err(Error::Structure(format!("vertex {} has two atoms", a.vertex)));
            }
            atom[a.vertex] = a.mass;
            beta[a.vertex] = a.beta.clone();
        }

        let mut block: Vec<Option<Block>> = vec![None; n];
        for b in &cfg.blocks {
            if b.vertex >= n {
                return Err(Error::Structure("block vertex out of range".into()));
            }
            if !children[b.vertex].is_empty() {
                return Err(Error::Structure(format!(
                    "vertex {} has both child segments and a boundary block",
                    b.vertex
                )));
            }
            if block[b.vertex].is_some() {
                return Err(Error::Structure(format!("vertex {} has two blocks", b.vertex)));
            }
            if b.mass <= 0.0 {
                return Err(Error::Structure("block mass must be positive".into()));
            }
            if b.budget == 0 {
                return Err(Error::Structure("block budget must be positive".into()));
            }
            block[b.vertex] = Some(Block {
                mass: b.mass,
                measure: BoundaryMeasure::from_config(&b.measure)?,
                budget: b.budget,
            });
        }

        // Beta thresholds: per subtree of the atom, non-decreasing.
        let mut tree = IpTree {
            vertex_count: n,
            seg_parent,
            seg_child,
            seg_profile,
            seg_lambda,
            children,
            parent_seg,
            atom,
            beta,
            block,
            fringe_v: vec![0.0; n],
            depth,
        };
        tree.compute_fringes();
        for v in 0..n {
            if tree.atom[v] > 0.0 {
                let k = tree.subtree_count(v);
                match &tree.beta[v] {
                    None => {
                        let def: Vec<f64> = (1..=k).map(|j| j as f64 / (k + 1) as f64).collect();
                        tree.beta[v] = Some(def);
                    }
                    Some(list) => {
                        if list.len() != k {
                            return Err(Error::Structure(format!(
                                "vertex {v}: beta has {} thresholds for {k} subtrees",
                                list.len()
                            )));
                        }
                        if list
                            .windows(2)
                            .any(|w| w[1] < w[0])
                            || list.iter().any(|t| !(0.0..=1.0).contains(t))
                        {
                            return Err(Error::Structure(format!(
                                "vertex {v}: beta thresholds must be non-decreasing in [0,1]"
                            )));
                        }
                    }
                }
            } else if tree.beta[v].is_some() {
                return Err(Error::Structure(format!(
                    "vertex {v}: beta thresholds without an atom"
                )));
            }
        }
        Ok(tree)
    }

    /// Parse a config from JSON text or resolve a preset name.
    pub fn from_json_or_preset(text_or_name: &str) -> Result<Self, Error> {
        let cfg = if let Some(p) = preset(text_or_name.trim()) {
            p
        } else {
            serde_json::from_str(text_or_name)
                .map_err(|e| Error::Parse(format!("invalid IP-tree config: {e}")))?
        };
        Self::from_config(&cfg)
    }

    fn compute_fringes(&mut self) {
        // Post-order accumulation.
        let mut order: Vec<usize> = (0..self.vertex_count).collect();
        order.sort_by_key(|&v| std::cmp::Reverse(self.depth[v]));
        for &v in &order {
            let mut f = self.atom[v];
            if let Some(b) = &self.block[v] {
                f += b.mass;
            }
            for &sid in &self.children[v] {
                f += self.seg_mass(sid) + self.fringe_v[self.seg_child[sid]];
            }
            self.fringe_v[v] = f;
        }
    }

    // -- accessors ---------------------------------------------------------

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn segment_count(&self) -> usize {
        self.seg_parent.len()
    }

    pub fn seg_mass(&self, sid: usize) -> f64 {
        self.seg_profile[sid].last().unwrap().1
    }

    pub fn seg_endpoints(&self, sid: usize) -> (usize, usize) {
        (self.seg_parent[sid], self.seg_child[sid])
    }

    pub fn seg_breakpoints(&self, sid: usize) -> &[(f64, f64)] {
        &self.seg_profile[sid]
    }

    pub fn child_segments(&self, v: usize) -> &[usize] {
        &self.children[v]
    }

    pub fn atom_mass(&self, v: usize) -> f64 {
        self.atom[v]
    }

    pub fn block_info(&self, v: usize) -> Option<(usize, f64, &BoundaryMeasure, usize)> {
        self.block
            .as_slice()
            .get(v)?
            .as_ref()
            .map(|b| (b.measure.alphabet(), b.mass, &b.measure, b.budget))
    }

    pub fn vertex_fringe(&self, v: usize) -> f64 {
        self.fringe_v[v]
    }

    pub fn total_mass(&self) -> f64 {
        self.fringe_v[0]
    }

    /// Number of subtrees of vertex `v` (child segments, or block directions).
    pub fn subtree_count(&self, v: usize) -> usize {
        if let Some(b) = &self.block[v] {
            b.measure.alphabet()
        } else {
            self.children[v].len()
        }
    }

    pub fn beta_thresholds(&self, v: usize) -> Option<&[f64]> {
        self.beta[v].as_deref()
    }

    /// Branch weight at a diffuse segment point.
    pub fn lambda_at(&self, sid: usize, offset: f64) -> f64 {
        for &(end, val) in &self.seg_lambda[sid] {
            if offset <= end + MASS_TOL {
                return val;
            }
        }
        self.seg_lambda[sid].last().map(|&(_, v)| v).unwrap_or(0.5)
    }

    // -- IP validation ------------------------------------------------------

    /// Check mass normalization, spanning and spacing; empty report exactly
    /// when the config describes an IP-tree.
    pub fn validate_ip(&self) -> Vec<IpViolation> {
        let mut report = Vec::new();
        let total = self.total_mass();
        if (total - 1.0).abs() > MASS_TOL {
            report.push(IpViolation::MassNormalization { total });
        }

        for v in 0..self.vertex_count {
            let is_leaf = self.children[v].is_empty();
            if v != 0 && is_leaf && self.atom[v] == 0.0 && self.block[v].is_none() {
                // A massless leaf is in the support only if diffuse mass
                // reaches it from below.
                let sid = self.parent_seg[v].expect("non-root has a parent segment");
                let prof = &self.seg_profile[sid];
                let reaches = prof.len() >= 2 && {
                    let (p0, c0) = prof[prof.len() - 2];
                    let (p1, c1) = prof[prof.len() - 1];
                    c1 - c0 > MASS_TOL && (p1 - p0) - (c1 - c0) < MASS_TOL
                };
                if !reaches {
                    report.push(IpViolation::Spanning { vertex: v });
                }
            }
        }

        for sid in 0..self.segment_count() {
            let u = self.seg_parent[sid];
            let v = self.seg_child[sid];
            let m = self.seg_mass(sid);
            let fr_u = self.fringe_v[u];
            let fr_v = self.fringe_v[v];
            let du = 1.0 - fr_u;
            // Mass-derived position of cumulative mass c on this segment.
            let gap = fr_u - fr_v - m;
            let prof = &self.seg_profile[sid];
            for (i, &(pos, cum)) in prof.iter().enumerate() {
                let last = i + 1 == prof.len();
                // A breakpoint is constrained when diffuse mass is adjacent
                // (a run starts or ends here) or it is the segment end.
                let run_ends = i > 0 && prof[i].1 - prof[i - 1].1 > MASS_TOL;
                let run_starts = !last && prof[i + 1].1 - prof[i].1 > MASS_TOL;
                if !(last || run_ends || run_starts) {
                    continue;
                }
                let required = gap + cum;
                if (pos - required).abs() > 1e-7 {
                    report.push(IpViolation::Spacing {
                        segment: sid,
                        breakpoint: i,
                        stated_root_distance: du + pos,
                        required_root_distance: du + required,
                    });
                }
            }
        }
        report
    }

    /// `from_config` + `validate_ip`, erroring on any violation.
    pub fn validated(cfg: &IpTreeConfig) -> Result<Self, Error> {
        let tree = Self::from_config(cfg)?;
        let report = tree.validate_ip();
        if report.is_empty() {
            Ok(tree)
        } else {
            let lines: Vec<String> = report.iter().map(|v| v.to_string()).collect();
            Err(Error::Validation(lines.join("; ")))
        }
    }

    // -- points, masses, genealogy ------------------------------------------

    pub fn root_point(&self) -> TreePoint {
        TreePoint::Vertex(0)
    }

    fn check_point(&self, p: &TreePoint) -> Result<(), Error> {
        match p {
            TreePoint::Vertex(v) => {
                if *v >= self.vertex_count {
                    return Err(Error::Range(format!("vertex {v} out of range")));
                }
            }
            TreePoint::Seg { seg, offset } => {
                if *seg >= self.segment_count() {
                    return Err(Error::Range(format!("segment {seg} out of range")));
                }
                if !(0.0..=self.seg_mass(*seg) + MASS_TOL).contains(offset) {
                    return Err(Error::Range(format!(
                        "offset {offset} outside segment {seg}"
                    )));
                }
            }
            TreePoint::Boundary { vertex, word } => {
                match &self.block.get(*vertex).and_then(|b| b.as_ref()) {
                    None => {
                        return Err(Error::Range(format!("vertex {vertex} has no block")));
                    }
                    Some(b) => {
                        let ell = b.measure.alphabet() as u8;
                        if word.iter().any(|&s| s >= ell) {
                            return Err(Error::Range("word symbol out of alphabet".into()));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Mass weakly above the point.
    pub fn fringe_mass(&self, p: &TreePoint) -> Result<f64, Error> {
        self.check_point(p)?;
        Ok(self.fringe_unchecked(p))
    }

    pub(crate) fn fringe_unchecked(&self, p: &TreePoint) -> f64 {
        match p {
            TreePoint::Vertex(v) => self.fringe_v[*v],
            TreePoint::Seg { seg, offset } => {
                self.seg_mass(*seg) - offset + self.fringe_v[self.seg_child[*seg]]
            }
            TreePoint::Boundary { vertex, word } => {
                let b = self.block[*vertex].as_ref().expect("checked");
                b.mass * b.measure.cylinder(word)
            }
        }
    }

    /// Root distance, via the spacing identity.
    pub fn root_distance(&self, p: &TreePoint) -> Result<f64, Error> {
        Ok(1.0 - self.fringe_mass(p)? / self.total_mass())
    }

    fn seg_slot(&self, sid: usize) -> u32 {
        let u = self.seg_parent[sid];
        self.children[u]
            .iter()
            .position(|&s| s == sid)
            .expect("segment registered at its parent") as u32
    }

    /// Weak skeleton ancestry between vertices.
    fn vertex_leq(&self, a: usize, b: usize) -> bool {
        let mut cur = b;
        while self.depth[cur] > self.depth[a] {
            cur = self.seg_parent[self.parent_seg[cur].unwrap()];
        }
        cur == a
    }

    fn vertex_mrca(&self, a: usize, b: usize) -> usize {
        let (mut x, mut y) = (a, b);
        while self.depth[x] > self.depth[y] {
            x = self.seg_parent[self.parent_seg[x].unwrap()];
        }
        while self.depth[y] > self.depth[x] {
            y = self.seg_parent[self.parent_seg[y].unwrap()];
        }
        while x != y {
            x = self.seg_parent[self.parent_seg[x].unwrap()];
            y = self.seg_parent[self.parent_seg[y].unwrap()];
        }
        x
    }

    /// Highest full vertex weakly below the point.
    fn base_vertex(&self, p: &TreePoint) -> usize {
        match p {
            TreePoint::Vertex(v) => *v,
            TreePoint::Seg { seg, .. } => self.seg_parent[*seg],
            TreePoint::Boundary { vertex, .. } => *vertex,
        }
    }

    /// Genealogical order: `x` lies on the root path of `y`.
    pub fn is_ancestor(&self, x: &TreePoint, y: &TreePoint) -> Result<bool, Error> {
        self.check_point(x)?;
        self.check_point(y)?;
        Ok(self.leq_unchecked(x, y))
    }

    pub(crate) fn leq_unchecked(&self, x: &TreePoint, y: &TreePoint) -> bool {
        match (x, y) {
            (TreePoint::Vertex(a), _) => self.vertex_leq(*a, self.base_vertex(y)),
            (TreePoint::Seg { seg: s1, offset: t1 }, TreePoint::Seg { seg: s2, offset: t2 }) => {
                if s1 == s2 {
                    t1 <= t2
                } else {
                    self.vertex_leq(self.seg_child[*s1], self.seg_parent[*s2])
                }
            }
            (TreePoint::Seg { seg, .. }, TreePoint::Vertex(b)) => {
                self.vertex_leq(self.seg_child[*seg], *b)
            }
            (TreePoint::Seg { seg, .. }, TreePoint::Boundary { vertex, .. }) => {
                self.vertex_leq(self.seg_child[*seg], *vertex)
            }
            (
                TreePoint::Boundary { vertex: v1, word: w1 },
                TreePoint::Boundary { vertex: v2, word: w2 },
            ) => v1 == v2 && w2.len() >= w1.len() && &w2[..w1.len()] == w1.as_slice(),
            (TreePoint::Boundary { .. }, _) => false,
        }
    }

    /// Most recent common ancestor under the genealogical order.
    pub fn mrca(&self, x: &TreePoint, y: &TreePoint) -> Result<TreePoint, Error> {
        self.check_point(x)?;
        self.check_point(y)?;
        Ok(self.mrca_unchecked(x, y))
    }

    pub(crate) fn mrca_unchecked(&self, x: &TreePoint, y: &TreePoint) -> TreePoint {
        if self.leq_unchecked(x, y) {
            return x.clone();
        }
        if self.leq_unchecked(y, x) {
            return y.clone();
        }
        if let (
            TreePoint::Boundary { vertex: v1, word: w1 },
            TreePoint::Boundary { vertex: v2, word: w2 },
        ) = (x, y)
        {
            if v1 == v2 {
                let lcp = w1
                    .iter()
                    .zip(w2.iter())
                    .take_while(|(a, b)| a == b)
                    .count();
                return TreePoint::Boundary {
                    vertex: *v1,
                    word: w1[..lcp].to_vec(),
                }
                .normalize();
            }
        }
        TreePoint::Vertex(self.vertex_mrca(self.base_vertex(x), self.base_vertex(y)))
    }

    /// Distance between two points, derived from fringe masses.
    pub fn distance(&self, x: &TreePoint, y: &TreePoint) -> Result<f64, Error> {
        self.check_point(x)?;
        self.check_point(y)?;
        Ok(self.distance_unchecked(x, y))
    }

    pub(crate) fn distance_unchecked(&self, x: &TreePoint, y: &TreePoint) -> f64 {
        let fx = self.fringe_unchecked(x);
        let fy = self.fringe_unchecked(y);
        if self.leq_unchecked(x, y) || self.leq_unchecked(y, x) {
            (fx - fy).abs()
        } else {
            let m = self.mrca_unchecked(x, y);
            2.0 * self.fringe_unchecked(&m) - fx - fy
        }
    }

    /// The direction (child slot or block symbol) taken at vertex `v` toward
    /// a point strictly above `v`; this indexes the subtrees of `v` in plane
    /// order, matching the beta threshold list.
    pub fn direction_at(&self, v: usize, z: &TreePoint) -> u32 {
        self.first_dir(v, z)
    }

    fn first_dir(&self, v: usize, z: &TreePoint) -> u32 {
        match z {
            TreePoint::Boundary { vertex, word } if *vertex == v => {
                u32::from(word[0])
            }
            _ => {
                // Find v's child vertex on the path toward z's base.
                let mut b = match z {
                    TreePoint::Seg { seg, .. } => {
                        if self.seg_parent[*seg] == v {
                            return self.seg_slot(*seg);
                        }
                        self.seg_parent[*seg]
                    }
                    TreePoint::Vertex(b) => *b,
                    TreePoint::Boundary { vertex, .. } => *vertex,
                };
                while self.depth[b] > self.depth[v] + 1 {
                    b = self.seg_parent[self.parent_seg[b].unwrap()];
                }
                self.seg_slot(self.parent_seg[b].expect("strictly above v"))
            }
        }
    }

    /// Planar depth-first total order: ancestors first, then by plane order
    /// at the divergence point.
    pub fn planar_cmp(&self, x: &TreePoint, y: &TreePoint) -> Ordering {
        if x == y {
            return Ordering::Equal;
        }
        if self.leq_unchecked(x, y) {
            return Ordering::Less;
        }
        if self.leq_unchecked(y, x) {
            return Ordering::Greater;
        }
        match self.mrca_unchecked(x, y) {
            TreePoint::Boundary { word, .. } => {
                let k = word.len();
                let (w1, w2) = match (x, y) {
                    (
                        TreePoint::Boundary { word: w1, .. },
                        TreePoint::Boundary { word: w2, .. },
                    ) => (w1, w2),
                    _ => unreachable!("block mrca implies block points"),
                };
                w1[k].cmp(&w2[k])
            }
            TreePoint::Vertex(v) => self.first_dir(v, x).cmp(&self.first_dir(v, y)),
            TreePoint::Seg { .. } => unreachable!("segment points are totally ordered"),
        }
    }

    // -- sampling -------------------------------------------------------------

    /// Draw a point from the measure.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> TreePoint {
        let total = self.total_mass();
        let mut u: f64 = rng.gen::<f64>() * total;
        for v in 0..self.vertex_count {
            if self.atom[v] > 0.0 {
                if u < self.atom[v] {
                    return TreePoint::Vertex(v);
                }
                u -= self.atom[v];
            }
            if let Some(b) = &self.block[v] {
                if u < b.mass {
                    let word = b.measure.sample_word(b.budget, rng);
                    return TreePoint::Boundary { vertex: v, word };
                }
                u -= b.mass;
            }
        }
        for sid in 0..self.segment_count() {
            let m = self.seg_mass(sid);
            if m > 0.0 {
                if u < m {
                    let offset: f64 = rng.gen::<f64>() * m;
                    return TreePoint::Seg { seg: sid, offset };
                }
                u -= m;
            }
        }
        // Floating slack: fall back to the heaviest component's far end.
        TreePoint::Vertex(0)
    }

    /// Position along the segment of the point at mass offset `t` (the lower
    /// position when `t` falls on a run boundary).
    pub fn offset_position(&self, sid: usize, t: f64) -> f64 {
        let prof = &self.seg_profile[sid];
        for w in prof.windows(2) {
            let (p0, c0) = w[0];
            let (p1, c1) = w[1];
            if c1 - c0 > 0.0 && t <= c1 {
                let frac = ((t - c0) / (c1 - c0)).clamp(0.0, 1.0);
                return p0 + frac * (p1 - p0);
            }
        }
        prof.last().unwrap().0
    }

    /// Root distance of the bottom end of a segment (the parent vertex).
    pub fn seg_bottom_height(&self, sid: usize) -> f64 {
        1.0 - self.fringe_v[self.seg_parent[sid]]
    }
}

// ---------------------------------------------------------------------------
// Epsilon partition (the fringe-approximation decomposition)
// ---------------------------------------------------------------------------

/// Piece of a partition cell, for membership tests and mass computation.
#[derive(Clone, Debug)]
pub enum CellPiece {
    /// Vertex point (its atom mass is excluded; atoms are B-singletons).
    Vertex(usize),
    /// Height interval on a segment `[lo, hi)` in root-distance terms,
    /// closed at the bottom; `closed_top` for intervals ending at the child.
    SegInterval {
        seg: usize,
        lo_height: f64,
        hi_height: f64,
        closed_top: bool,
    },
    /// Block branchpoint (word vertex) inside the window.
    BlockVertex { vertex: usize, word: Vec<u8> },
    /// A whole cylinder contained in the top window; carries its full mass.
    BlockCylinder { vertex: usize, word: Vec<u8> },
}

#[derive(Clone, Debug)]
pub struct Cell {
    /// Lowest point of the cell.
    pub root: TreePoint,
    /// Window index: heights `[level * eps/2, (level+1) * eps/2)`.
    pub level: usize,
    /// Cell this one's root hangs below (None for the root cell).
    pub parent: Option<usize>,
    pub mass: f64,
    /// Certified diameter bound (twice the height extent).
    pub diam: f64,
    pub pieces: Vec<CellPiece>,
}

/// The A/B/S decomposition of an IP-tree at scale `eps`.
#[derive(Clone, Debug)]
pub struct Partition {
    pub eps: f64,
    /// B-singletons: all atoms of the finite representation.
    pub atoms: Vec<(usize, f64)>,
    pub cells: Vec<Cell>,
    /// Mass of the discarded remainder (always 0 here: the representation is
    /// finite, so no tail needs discarding).
    pub remainder_mass: f64,
    half_width: f64,
    top_level: usize,
}

/// Fringe-approximation lookup for a query point.
#[derive(Clone, Debug)]
pub struct CellLookup {
    /// Cells entirely inside the fringe of the query point.
    pub inside: Vec<usize>,
    /// Atoms (indices into `atoms`) inside the fringe.
    pub atoms_inside: Vec<usize>,
    /// The cell containing the query point.
    pub cell_of_point: usize,
}

impl IpTree {
    /// The scale-`eps` partition: singleton atoms, cells of diameter and
    /// mass at most `eps`, empty remainder.
    pub fn epsilon_partition(&self, eps: f64) -> Result<Partition, Error> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Range(format!("eps {eps} outside (0, 1)")));
        }
        let h = eps / 2.0;
        let top_level = ((1.0 / h).ceil() as usize).max(1) - 1;
        let level_of = |height: f64| -> usize {
            (((height + 1e-12) / h).floor() as usize).min(top_level)
        };

        let atoms: Vec<(usize, f64)> = (0..self.vertex_count)
            .filter(|&v| self.atom[v] > 0.0)
            .map(|v| (v, self.atom[v]))
            .collect();

        let mut cells: Vec<Cell> = Vec::new();
        // Root cell.
        cells.push(Cell {
            root: TreePoint::Vertex(0),
            level: 0,
            parent: None,
            mass: 0.0,
            diam: 0.0,
            pieces: vec![CellPiece::Vertex(0)],
        });

        // Walk the skeleton, splitting segments at window boundaries.
        let mut stack: Vec<(usize, usize)> = vec![(0, 0)]; // (vertex, cell id)
        while let Some((v, vcell)) = stack.pop() {
            if let Some(b) = &self.block[v] {
                self.partition_block(v, b, Vec::new(), vcell, top_level, &level_of, &mut cells);
            }
            for &sid in &self.children[v] {
                let lo = self.seg_bottom_height(sid);
                let hi = 1.0 - self.fringe_v[self.seg_child[sid]];
                let mut cur_cell = vcell;
                let mut cur_h = lo;
                let mut lvl = cells[cur_cell].level;
                while lvl < level_of(hi) {
                    let cut = (lvl + 1) as f64 * h;
                    // Close the running interval and open a new cell at the cut.
                    if cut > cur_h {
                        cells[cur_cell].pieces.push(CellPiece::SegInterval {
                            seg: sid,
                            lo_height: cur_h,
                            hi_height: cut,
                            closed_top: false,
                        });
                    }
                    let cut_offset = self.mass_below_height(sid, cut);
                    let root = TreePoint::Seg {
                        seg: sid,
                        offset: cut_offset,
                    };
                    cells.push(Cell {
                        root,
                        level: lvl + 1,
                        parent: Some(cur_cell),
                        mass: 0.0,
                        diam: 0.0,
                        pieces: Vec::new(),
                    });
                    cur_cell = cells.len() - 1;
                    cur_h = cut;
                    lvl += 1;
                }
                cells[cur_cell].pieces.push(CellPiece::SegInterval {
                    seg: sid,
                    lo_height: cur_h,
                    hi_height: hi,
                    closed_top: true,
                });
                let c = self.seg_child[sid];
                cells[cur_cell].pieces.push(CellPiece::Vertex(c));
                stack.push((c, cur_cell));
            }
        }

        // Masses and diameters. A cell's extent starts at its window cut;
        // gap cut points are not addressable by mass offset, so the root's
        // fringe-derived height can overshoot and is not used here.
        for cell in &mut cells {
            let mut mass = 0.0;
            let root_h = cell.level as f64 * h;
            let mut lo = root_h;
            let mut hi = root_h;
            for piece in &cell.pieces {
                match piece {
                    CellPiece::Vertex(v) => {
                        let hv = 1.0 - self.fringe_v[*v];
                        lo = lo.min(hv);
                        hi = hi.max(hv);
                    }
                    CellPiece::SegInterval {
                        seg,
                        lo_height,
                        hi_height,
                        ..
                    } => {
                        mass += self.mass_below_height(*seg, *hi_height)
                            - self.mass_below_height(*seg, *lo_height);
                        lo = lo.min(*lo_height);
                        hi = hi.max(*hi_height);
                    }
                    CellPiece::BlockVertex { vertex, word } => {
                        let b = self.block[*vertex].as_ref().unwrap();
                        let hv = 1.0 - b.mass * b.measure.cylinder(word);
                        lo = lo.min(hv);
                        hi = hi.max(hv);
                    }
                    CellPiece::BlockCylinder { vertex, word } => {
                        let b = self.block[*vertex].as_ref().unwrap();
                        mass += b.mass * b.measure.cylinder(word);
                        let hv = 1.0 - b.mass * b.measure.cylinder(word);
                        lo = lo.min(hv);
                        hi = hi.max(1.0);
                        let _ = hv;
                    }
                }
            }
            cell.mass = mass;
            cell.diam = 2.0 * (hi - lo).max(0.0);
        }

        Ok(Partition {
            eps,
            atoms,
            cells,
            remainder_mass: 0.0,
            half_width: h,
            top_level,
        })
    }

    /// Diffuse mass of segment `sid` strictly below root distance `height`.
    fn mass_below_height(&self, sid: usize, height: f64) -> f64 {
        let base = self.seg_bottom_height(sid);
        let pos = height - base;
        let prof = &self.seg_profile[sid];
        if pos <= 0.0 {
            return 0.0;
        }
        for w in prof.windows(2) {
            let (p0, c0) = w[0];
            let (p1, c1) = w[1];
            if pos <= p1 {
                if p1 > p0 {
                    let frac = ((pos - p0) / (p1 - p0)).clamp(0.0, 1.0);
                    return c0 + frac * (c1 - c0);
                }
                return c0;
            }
        }
        self.seg_mass(sid)
    }

    #[allow(clippy::too_many_arguments)]
    fn partition_block(
        &self,
        bv: usize,
        b: &Block,
        word: Vec<u8>,
        word_cell: usize,
        top_level: usize,
        level_of: &dyn Fn(f64) -> usize,
        cells: &mut Vec<Cell>,
    ) {
        // Descend into each child cylinder, opening cells at window cuts
        // along the edge; once a cut at the top window is crossed the whole
        // cylinder is one cell.
        let ell = b.measure.alphabet();
        for sym in 0..ell as u8 {
            let mut cw = word.clone();
            cw.push(sym);
            let cyl = b.mass * b.measure.cylinder(&cw);
            if cyl <= 0.0 {
                continue;
            }
            let ch = 1.0 - cyl;
            let mut cur_cell = word_cell;
            let mut lvl = cells[cur_cell].level;
            if lvl == top_level {
                // Current cell already reaches height 1: the whole cylinder
                // belongs to it.
                cells[cur_cell].pieces.push(CellPiece::BlockCylinder {
                    vertex: bv,
                    word: cw,
                });
                continue;
            }
            let target = level_of(ch);
            let mut swallowed = false;
            while lvl < target {
                cells.push(Cell {
                    root: TreePoint::Boundary {
                        vertex: bv,
                        word: cw.clone(),
                    },
                    level: lvl + 1,
                    parent: Some(cur_cell),
                    mass: 0.0,
                    diam: 0.0,
                    pieces: Vec::new(),
                });
                cur_cell = cells.len() - 1;
                lvl += 1;
                if lvl == top_level {
                    cells[cur_cell].pieces.push(CellPiece::BlockCylinder {
                        vertex: bv,
                        word: cw.clone(),
                    });
                    swallowed = true;
                    break;
                }
            }
            if swallowed {
                continue;
            }
            cells[cur_cell].pieces.push(CellPiece::BlockVertex {
                vertex: bv,
                word: cw.clone(),
            });
            self.partition_block(bv, b, cw, cur_cell, top_level, level_of, cells);
        }
    }

    /// Locate the partition cell containing a point.
    pub fn cell_of_point(&self, part: &Partition, p: &TreePoint) -> Result<usize, Error> {
        self.check_point(p)?;
        let height = 1.0 - self.fringe_unchecked(p);
        let lvl = (((height + 1e-12) / part.half_width).floor() as usize).min(part.top_level);
        // The containing cell is the unique one at this level whose root is
        // an ancestor of p; fall back to the deepest-rooted ancestor cell.
        let mut best: Option<(usize, f64)> = None;
        for (i, cell) in part.cells.iter().enumerate() {
            if cell.level == lvl && self.leq_unchecked(&cell.root, p) {
                let fr = self.fringe_unchecked(&cell.root);
                if best.map(|(_, f)| fr < f).unwrap_or(true) {
                    best = Some((i, fr));
                }
            }
        }
        match best {
            Some((i, _)) => Ok(i),
            None => {
                // Height fuzz at a window boundary: take the deepest ancestor
                // cell instead.
                let mut fallback = 0usize;
                let mut depth_best = -1.0;
                for (i, cell) in part.cells.iter().enumerate() {
                    if self.leq_unchecked(&cell.root, p) {
                        let d = 1.0 - self.fringe_unchecked(&cell.root);
                        if d > depth_best {
                            depth_best = d;
                            fallback = i;
                        }
                    }
                }
                Ok(fallback)
            }
        }
    }

    /// The fringe-approximation data `(I_x, J_x, k_x)` for a query point.
    pub fn cell_lookup(&self, part: &Partition, p: &TreePoint) -> Result<CellLookup, Error> {
        let k = self.cell_of_point(part, p)?;
        let mut inside = Vec::new();
        for (i, cell) in part.cells.iter().enumerate() {
            if i != k && self.leq_unchecked(p, &cell.root) {
                inside.push(i);
            }
        }
        let atoms_inside = part
            .atoms
            .iter()
            .enumerate()
            .filter(|(_, (v, _))| self.leq_unchecked(p, &TreePoint::Vertex(*v)))
            .map(|(j, _)| j)
            .collect();
        Ok(CellLookup {
            inside,
            atoms_inside,
            cell_of_point: k,
        })
    }
}
