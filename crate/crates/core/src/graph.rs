//! Undirected dependency trees, pairwise distance matrices, and the two maps
//! between them: all-pairs path lengths (tree → metric) and minimum spanning
//! tree decoding (metric → tree).
//!
//! Word indices are 1-based throughout, matching CoNLL-U IDs.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// Undirected spanning tree over the words `1..=n` of a sentence.
///
/// Edges are stored normalised (`i < j`) and sorted, so two trees with the
/// same edge set compare equal.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct DepTree {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl DepTree {
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut normalised = Vec::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::InvalidTree(format!("self-loop on word {a}")));
            }
            if a == 0 || b == 0 || a > n || b > n {
                return Err(Error::InvalidTree(format!(
                    "edge {{{a}, {b}}} outside words 1..={n}"
                )));
            }
            normalised.push((a.min(b), a.max(b)));
        }
        normalised.sort_unstable();
        normalised.dedup();

        if n == 0 {
            return Err(Error::InvalidTree("empty sentence".into()));
        }
        if normalised.len() != n - 1 {
            return Err(Error::InvalidTree(format!(
                "{} distinct edges for {n} words, expected {}",
                normalised.len(),
                n - 1
            )));
        }
        let mut sets = DisjointSets::new(n);
        for &(a, b) in &normalised {
            if !sets.union(a - 1, b - 1) {
                return Err(Error::InvalidTree(format!(
                    "cycle through edge {{{a}, {b}}}"
                )));
            }
        }

        Ok(DepTree {
            n,
            edges: normalised,
        })
    }

    /// Builds the word-only tree from 1-based heads (`0` = root attachment).
    pub fn from_heads(heads: &[usize]) -> Result<Self> {
        let n = heads.len();
        let roots = heads.iter().filter(|&&h| h == 0).count();
        if roots != 1 {
            return Err(Error::InvalidTree(format!("{roots} root-attached words")));
        }
        let edges = heads
            .iter()
            .enumerate()
            .filter(|(_, &h)| h != 0)
            .map(|(i, &h)| (i + 1, h));
        Self::new(n, edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn contains_edge(&self, a: usize, b: usize) -> bool {
        self.edges.binary_search(&(a.min(b), a.max(b))).is_ok()
    }

    pub fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut adjacency = vec![Vec::new(); self.n + 1];
        for &(a, b) in &self.edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        adjacency
    }

    /// Head array (`0` for `root`) obtained by orienting every edge away
    /// from `root`. Inverse of [`DepTree::from_heads`].
    pub fn heads(&self, root: usize) -> Vec<usize> {
        assert!(
            (1..=self.n).contains(&root),
            "root {root} outside 1..={}",
            self.n
        );
        let adjacency = self.neighbours();
        let mut heads = vec![usize::MAX; self.n + 1];
        heads[root] = 0;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &v in &adjacency[u] {
                if heads[v] == usize::MAX {
                    heads[v] = u;
                    queue.push_back(v);
                }
            }
        }
        heads.remove(0);
        heads
    }

    /// Uniformly random labelled tree, drawn through a random Prüfer sequence.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        assert!(n >= 1, "a tree needs at least one word");
        let sequence: Vec<usize> = (0..n.saturating_sub(2))
            .map(|_| rng.random_range(1..=n))
            .collect();
        Self::from_prufer(n, &sequence)
    }

    /// Decodes a Prüfer sequence of length `n - 2` over labels `1..=n`.
    pub fn from_prufer(n: usize, sequence: &[usize]) -> Self {
        assert!(n >= 1);
        if n == 1 {
            return DepTree { n, edges: vec![] };
        }
        assert_eq!(sequence.len(), n - 2, "Prüfer sequence length");

        let mut degree = vec![1usize; n + 1];
        for &v in sequence {
            degree[v] += 1;
        }
        let mut leaves: std::collections::BTreeSet<usize> =
            (1..=n).filter(|&v| degree[v] == 1).collect();
        let mut edges = Vec::with_capacity(n - 1);
        for &v in sequence {
            let leaf = leaves
                .pop_first()
                .expect("Prüfer decoding always has a leaf");
            edges.push((leaf, v));
            degree[v] -= 1;
            if degree[v] == 1 {
                leaves.insert(v);
            }
        }
        let last: Vec<usize> = leaves.into_iter().collect();
        edges.push((last[0], last[1]));
        Self::new(n, edges).expect("Prüfer decoding yields a tree")
    }
}

impl fmt::Display for DepTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.edges.iter().map(|(a, b)| format!("{a}-{b}")).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

/// Symmetric pairwise distances with a zero diagonal; only the strict upper
/// triangle is stored.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    upper: Vec<f64>,
}

impl DistanceMatrix {
    pub fn zeros(n: usize) -> Self {
        DistanceMatrix {
            n,
            upper: vec![0.0; pair_count(n)],
        }
    }

    /// Fills `d(i, j)` for every `i < j` from `f(i, j)`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut upper = Vec::with_capacity(pair_count(n));
        for i in 1..=n {
            for j in i + 1..=n {
                upper.push(f(i, j));
            }
        }
        DistanceMatrix { n, upper }
    }

    /// Builds from the row-major strict upper triangle, validating values.
    pub fn from_upper(n: usize, upper: Vec<f64>) -> Result<Self> {
        if upper.len() != pair_count(n) {
            return Err(Error::Size(format!(
                "{} values for {n} words, expected {}",
                upper.len(),
                pair_count(n)
            )));
        }
        if let Some(v) = upper.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Data(format!(
                "distance {v} is not finite and non-negative"
            )));
        }
        Ok(DistanceMatrix { n, upper })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j <= self.n && i >= 1);
        // Row-major offset of (i, j) in the strict upper triangle, 1-based.
        let row = i - 1;
        row * self.n - row * (row + 1) / 2 + (j - i - 1)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match i.cmp(&j) {
            std::cmp::Ordering::Equal => 0.0,
            std::cmp::Ordering::Less => self.upper[self.index(i, j)],
            std::cmp::Ordering::Greater => self.upper[self.index(j, i)],
        }
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert_ne!(i, j, "diagonal is fixed at zero");
        let idx = self.index(i.min(j), i.max(j));
        self.upper[idx] = value;
    }

    /// Applies `f` to every off-diagonal value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        DistanceMatrix {
            n: self.n,
            upper: self.upper.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `(i, j, d(i, j))` for all `i < j`, in storage order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.n;
        (1..=n)
            .flat_map(move |i| (i + 1..=n).map(move |j| (i, j)))
            .zip(self.upper.iter())
            .map(|((i, j), &v)| (i, j, v))
    }

    pub fn tree_weight(&self, tree: &DepTree) -> f64 {
        tree.edges().iter().map(|&(a, b)| self.get(a, b)).sum()
    }
}

pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Path lengths between all word pairs, by one breadth-first search per word.
pub fn tree_to_distances(tree: &DepTree) -> DistanceMatrix {
    let n = tree.n();
    let adjacency = tree.neighbours();
    let mut out = DistanceMatrix::zeros(n);
    let mut hops = vec![usize::MAX; n + 1];
    let mut queue = VecDeque::with_capacity(n);
    for source in 1..=n {
        hops.iter_mut().for_each(|h| *h = usize::MAX);
        hops[source] = 0;
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            for &v in &adjacency[u] {
                if hops[v] == usize::MAX {
                    hops[v] = hops[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        for (target, &h) in hops.iter().enumerate().skip(source + 1) {
            out.set(source, target, h as f64);
        }
    }
    out
}

/// Minimum spanning tree of the complete graph weighted by `distances`
/// (dense Prim, O(n²)).
///
/// Grows from word 1. Among frontier edges of equal weight the one with the
/// lexicographically smallest `(min endpoint, max endpoint)` wins, so the
/// result is fully deterministic.
pub fn mst_prim(distances: &DistanceMatrix) -> DepTree {
    let n = distances.n();
    assert!(n >= 1, "cannot decode an empty sentence");

    let mut in_tree = vec![false; n + 1];
    // Best known connecting edge for every vertex outside the tree.
    let mut best_weight = vec![f64::INFINITY; n + 1];
    let mut best_pair = vec![(usize::MAX, usize::MAX); n + 1];
    let mut edges = Vec::with_capacity(n - 1);

    let relax =
        |u: usize, in_tree: &[bool], best_weight: &mut [f64], best_pair: &mut [(usize, usize)]| {
            for v in 1..=n {
                if in_tree[v] {
                    continue;
                }
                let w = distances.get(u, v);
                let pair = (u.min(v), u.max(v));
                if w < best_weight[v] || (w == best_weight[v] && pair < best_pair[v]) {
                    best_weight[v] = w;
                    best_pair[v] = pair;
                }
            }
        };

    in_tree[1] = true;
    relax(1, &in_tree, &mut best_weight, &mut best_pair);
    for _ in 1..n {
        let mut next = 0;
        for v in 1..=n {
            if in_tree[v] {
                continue;
            }
            if next == 0
                || best_weight[v] < best_weight[next]
                || (best_weight[v] == best_weight[next] && best_pair[v] < best_pair[next])
            {
                next = v;
            }
        }
        in_tree[next] = true;
        edges.push(best_pair[next]);
        relax(next, &in_tree, &mut best_weight, &mut best_pair);
    }

    DepTree::new(n, edges).expect("Prim's algorithm yields a spanning tree")
}

/// Tree recovered from a distance matrix, with how it was obtained.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Recovered {
    pub tree: DepTree,
    /// `true` when the unit-distance pairs did not form a spanning tree and
    /// the tree came from [`mst_prim`] instead.
    pub used_mst_fallback: bool,
}

/// Inverts [`tree_to_distances`]: the tree edges are exactly the pairs at
/// distance 1. Inexact matrices fall back to the minimum spanning tree.
pub fn distances_to_tree(distances: &DistanceMatrix) -> Recovered {
    let n = distances.n();
    let unit: Vec<(usize, usize)> = distances
        .pairs()
        .filter(|&(_, _, d)| d == 1.0)
        .map(|(i, j, _)| (i, j))
        .collect();
    if unit.len() + 1 == n {
        if let Ok(tree) = DepTree::new(n, unit) {
            return Recovered {
                tree,
                used_mst_fallback: false,
            };
        }
    }
    Recovered {
        tree: mst_prim(distances),
        used_mst_fallback: true,
    }
}

/// Union-find over `0..n` with path halving.
#[derive(Clone, Debug)]
pub(crate) struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    pub(crate) fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns `false` if `a` and `b` were already connected.
    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn tree_strategy(max_n: usize) -> impl Strategy<Value = DepTree> {
        (2..=max_n, any::<u64>()).prop_map(|(n, seed)| {
            let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            DepTree::random(n, &mut r)
        })
    }

    proptest! {
        #[test]
        fn tree_metric_round_trips(tree in tree_strategy(50)) {
            let d = tree_to_distances(&tree);
            let back = distances_to_tree(&d);
            prop_assert!(!back.used_mst_fallback);
            prop_assert_eq!(&back.tree, &tree);
            prop_assert_eq!(tree_to_distances(&back.tree), d.clone());
            for (i, j, v) in d.pairs() {
                prop_assert_eq!(v == 1.0, tree.contains_edge(i, j));
            }
        }

        #[test]
        fn prim_ignores_monotone_transforms(
            n in 2usize..12,
            seed in any::<u64>(),
        ) {
            let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let d = DistanceMatrix::from_fn(n, |_, _| r.random_range(0.0..5.0));
            let base = mst_prim(&d);
            prop_assert_eq!(&mst_prim(&d.map(|v| v * v)), &base);
            prop_assert_eq!(&mst_prim(&d.map(|v| (3.0 * v).exp())), &base);
            prop_assert_eq!(&mst_prim(&d.map(|v| 2.0 * v + 7.0)), &base);
        }
    }
}
