//! Rooted trees of local PODs.

use serde::Serialize;

use super::{pod, InnerProduct, PodMethod};
use crate::error::{Error, Result};

/// Local POD tolerance at a node with `n` snapshots in the leaves below it,
/// for a tree of depth `l_t`. The root takes `√|S|·ω·ε*`, every other node
/// `√n·(L_T−1)^{-1/2}·√(1−ω²)·ε*`.
pub fn local_tolerance(eps_star: f64, omega: f64, l_t: usize, n: usize, is_root: bool) -> f64 {
    let n = n as f64;
    if is_root {
        n.sqrt() * omega * eps_star
    } else if l_t <= 1 {
        0.0
    } else {
        eps_star * ((1.0 - omega * omega) * n / (l_t as f64 - 1.0)).sqrt()
    }
}

/// A rooted tree whose leaves own disjoint snapshot index sets that cover
/// `0..s`.
#[derive(Debug, Clone)]
pub struct HapodTree {
    children: Vec<Vec<usize>>,
    leaf_sets: Vec<Vec<usize>>,
    root: usize,
}

impl HapodTree {
    /// `children[α]` lists the children of node `α`; leaves have none and
    /// take `leaf_sets[α]`.
    pub fn new(children: Vec<Vec<usize>>, leaf_sets: Vec<Vec<usize>>, root: usize) -> Result<HapodTree> {
        let nodes = children.len();
        let bad = |m: String| Err(Error::Config(format!("invalid HAPOD tree: {m}")));
        if leaf_sets.len() != nodes || root >= nodes {
            return bad("node count mismatch".into());
        }
        let mut parent = vec![usize::MAX; nodes];
        for (a, ch) in children.iter().enumerate() {
            for &c in ch {
                if c >= nodes || c == root || parent[c] != usize::MAX {
                    return bad(format!("node {c} has several parents or is out of range"));
                }
                parent[c] = a;
            }
            if !ch.is_empty() && !leaf_sets[a].is_empty() {
                return bad(format!("interior node {a} owns snapshots"));
            }
        }
        // every node must reach the root
        for a in 0..nodes {
            let (mut x, mut steps) = (a, 0);
            while x != root {
                x = parent[x];
                steps += 1;
                if x == usize::MAX || steps > nodes {
                    return bad(format!("node {a} is not connected to the root"));
                }
            }
        }
        let s: usize = leaf_sets.iter().map(Vec::len).sum();
        let mut seen = vec![false; s];
        for &i in leaf_sets.iter().flatten() {
            if i >= s || seen[i] {
                return bad("leaf sets do not partition the snapshot indices".into());
            }
            seen[i] = true;
        }
        Ok(HapodTree { children, leaf_sets, root })
    }

    /// Incremental tree: node `k` combines the output of node `k−1` with
    /// leaf `k`.
    pub fn chain(sets: Vec<Vec<usize>>) -> Result<HapodTree> {
        let c = sets.len();
        if c <= 1 {
            return HapodTree::star(sets);
        }
        // nodes 0..c are leaves, c..2c−1 the chain of interior nodes
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); c];
        let mut leaf_sets = sets;
        children.push(vec![0, 1]);
        leaf_sets.push(Vec::new());
        for k in 2..c {
            children.push(vec![c + k - 2, k]);
            leaf_sets.push(Vec::new());
        }
        let root = children.len() - 1;
        HapodTree::new(children, leaf_sets, root)
    }

    /// Balanced binary tree over the leaves.
    pub fn binary(sets: Vec<Vec<usize>>) -> Result<HapodTree> {
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); sets.len()];
        let mut leaf_sets = sets;
        let mut level: Vec<usize> = (0..children.len()).collect();
        while level.len() > 1 {
            let mut next = Vec::new();
            for pair in level.chunks(2) {
                if pair.len() == 1 {
                    next.push(pair[0]);
                } else {
                    children.push(pair.to_vec());
                    leaf_sets.push(Vec::new());
                    next.push(children.len() - 1);
                }
            }
            level = next;
        }
        let root = level.first().copied().ok_or_else(|| Error::Config("empty HAPOD tree".into()))?;
        HapodTree::new(children, leaf_sets, root)
    }

    /// All leaves are children of the root; a single set gives a one-node tree.
    pub fn star(sets: Vec<Vec<usize>>) -> Result<HapodTree> {
        if sets.len() == 1 {
            return HapodTree::new(vec![Vec::new()], sets, 0);
        }
        let c = sets.len();
        let mut children = vec![Vec::new(); c];
        children.push((0..c).collect());
        let mut leaf_sets = sets;
        leaf_sets.push(Vec::new());
        HapodTree::new(children, leaf_sets, c)
    }

    pub fn num_nodes(&self) -> usize {
        self.children.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn num_snapshots(&self) -> usize {
        self.leaf_sets.iter().map(Vec::len).sum()
    }

    /// `L_T`: the number of nodes on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn rec(t: &HapodTree, a: usize) -> usize {
            1 + t.children[a].iter().map(|&c| rec(t, c)).max().unwrap_or(0)
        }
        rec(self, self.root)
    }

    /// Number of snapshots in the leaves below each node.
    pub fn snapshots_below(&self) -> Vec<usize> {
        let mut out = vec![0; self.num_nodes()];
        for a in self.post_order() {
            out[a] = self.leaf_sets[a].len() + self.children[a].iter().map(|&c| out[c]).sum::<usize>();
        }
        out
    }

    fn post_order(&self) -> Vec<usize> {
        let mut order = Vec::with_capacity(self.num_nodes());
        let mut stack = vec![(self.root, false)];
        while let Some((a, done)) = stack.pop() {
            if done {
                order.push(a);
            } else {
                stack.push((a, true));
                for &c in self.children[a].iter().rev() {
                    stack.push((c, false));
                }
            }
        }
        order
    }
}

/// Counts of the three quantities usually reported for a HAPOD run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct HapodStats {
    pub final_modes: usize,
    /// Largest number of modes produced at any non-root node.
    pub max_local_modes: usize,
    /// Largest number of input vectors of any local POD.
    pub max_input_vectors: usize,
    pub num_snapshots: usize,
}

#[derive(Debug, Clone)]
pub struct HapodResult {
    pub modes: Vec<Vec<f64>>,
    pub singular_values: Vec<f64>,
    pub stats: HapodStats,
}

/// HAPOD over `tree` with the standard local tolerances for target `ε*`
/// and balance `ω`.
pub fn hapod<S: AsRef<[f64]>>(
    tree: &HapodTree,
    snapshots: &[S],
    w: &InnerProduct,
    eps_star: f64,
    omega: f64,
    method: PodMethod,
) -> Result<HapodResult> {
    if !(0.0..=1.0).contains(&omega) || !(eps_star >= 0.0) {
        return Err(Error::Config(format!("invalid HAPOD settings ε* = {eps_star}, ω = {omega}")));
    }
    let l_t = tree.depth();
    let below = tree.snapshots_below();
    let tolerances: Vec<f64> = (0..tree.num_nodes())
        .map(|a| local_tolerance(eps_star, omega, l_t, below[a], a == tree.root))
        .collect();
    hapod_with_tolerances(tree, snapshots, w, &tolerances, method)
}

/// HAPOD with explicit node tolerances; a zero tolerance passes its input
/// through unchanged.
pub fn hapod_with_tolerances<S: AsRef<[f64]>>(
    tree: &HapodTree,
    snapshots: &[S],
    w: &InnerProduct,
    tolerances: &[f64],
    method: PodMethod,
) -> Result<HapodResult> {
    if snapshots.len() != tree.num_snapshots() {
        return Err(Error::mismatch("snapshot count", tree.num_snapshots(), snapshots.len()));
    }
    if tolerances.len() != tree.num_nodes() {
        return Err(Error::mismatch("tolerance count", tree.num_nodes(), tolerances.len()));
    }
    let mut outputs: Vec<Option<(Vec<Vec<f64>>, Vec<f64>)>> = vec![None; tree.num_nodes()];
    let mut stats = HapodStats {
        num_snapshots: snapshots.len(),
        ..Default::default()
    };
    for a in tree.post_order() {
        let input: Vec<Vec<f64>> = if tree.children[a].is_empty() {
            tree.leaf_sets[a].iter().map(|&i| snapshots[i].as_ref().to_vec()).collect()
        } else {
            tree.children[a]
                .iter()
                .flat_map(|&c| outputs[c].take().expect("child evaluated").0)
                .collect()
        };
        stats.max_input_vectors = stats.max_input_vectors.max(input.len());
        let (mut modes, sigma) = if tolerances[a] == 0.0 {
            let k = input.len();
            (input, vec![1.0; k])
        } else {
            let r = pod(&input, w, tolerances[a], method)?;
            (r.modes, r.singular_values)
        };
        if a != tree.root {
            stats.max_local_modes = stats.max_local_modes.max(modes.len());
            for (m, s) in modes.iter_mut().zip(&sigma) {
                m.iter_mut().for_each(|x| *x *= s);
            }
        }
        outputs[a] = Some((modes, sigma));
    }
    let (modes, singular_values) = outputs[tree.root].take().expect("root evaluated");
    stats.final_modes = modes.len();
    Ok(HapodResult { modes, singular_values, stats })
}

#[cfg(test)]
mod tests {
    use super::super::{mean_projection_error, pod};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn split(s: usize, parts: usize) -> Vec<Vec<usize>> {
        let size = s.div_ceil(parts);
        (0..s).collect::<Vec<_>>().chunks(size).map(|c| c.to_vec()).collect()
    }

    fn decaying_snapshots(n: usize, s: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dirs: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        (0..s)
            .map(|_| {
                let mut v = vec![0.0; n];
                for (k, d) in dirs.iter().enumerate() {
                    let c = rng.random_range(-1.0..1.0) * 0.6f64.powi(k as i32);
                    v.iter_mut().zip(d).for_each(|(a, b)| *a += c * b);
                }
                v
            })
            .collect()
    }

    #[test]
    fn tolerance_formula_values() {
        assert_eq!(local_tolerance(1.0, 1.0, 3, 100, true), 10.0);
        assert_eq!(local_tolerance(1.0, 0.0, 3, 100, true), 0.0);
        let t = local_tolerance(1e-4, 0.95, 4, 64, false);
        assert!((t - 1.4422e-4).abs() < 1e-8, "{t}");
    }

    #[test]
    fn tree_shapes_and_depths() {
        let chain = HapodTree::chain(split(20, 4)).unwrap();
        assert_eq!((chain.num_nodes(), chain.depth()), (7, 4));
        let binary = HapodTree::binary(split(20, 4)).unwrap();
        assert_eq!((binary.num_nodes(), binary.depth()), (7, 3));
        let star = HapodTree::star(split(20, 4)).unwrap();
        assert_eq!((star.num_nodes(), star.depth()), (5, 2));
        assert_eq!(star.snapshots_below()[star.root()], 20);
        assert_eq!(HapodTree::star(split(5, 1)).unwrap().depth(), 1);
    }

    #[test]
    fn invalid_trees_are_rejected() {
        // overlapping leaf sets
        assert!(HapodTree::new(vec![vec![], vec![], vec![0, 1]], vec![vec![0], vec![0], vec![]], 2).is_err());
        // disconnected node
        assert!(HapodTree::new(vec![vec![], vec![], vec![0]], vec![vec![0], vec![1], vec![]], 2).is_err());
    }

    #[test]
    fn single_leaf_equals_pod() {
        let s = decaying_snapshots(12, 9, 1);
        let w = InnerProduct::Euclidean;
        let tree = HapodTree::star(vec![(0..9).collect()]).unwrap();
        let h = hapod(&tree, &s, &w, 1e-2, 0.5, PodMethod::Snapshots).unwrap();
        let eps = local_tolerance(1e-2, 0.5, 1, 9, true);
        let p = pod(&s, &w, eps, PodMethod::Snapshots).unwrap();
        assert_eq!(h.modes.len(), p.modes.len());
        for (a, b) in h.singular_values.iter().zip(&p.singular_values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_tolerance_passes_data_through() {
        let s = decaying_snapshots(6, 4, 2);
        let tree = HapodTree::star(vec![vec![0, 1], vec![2, 3]]).unwrap();
        // leaves pass raw snapshots, the root performs an exact POD
        let h = hapod_with_tolerances(&tree, &s, &InnerProduct::Euclidean, &[0.0, 0.0, 1e-12], PodMethod::QrSvd).unwrap();
        assert_eq!(h.stats.max_input_vectors, 4);
        assert_eq!(h.stats.max_local_modes, 2);
        assert!(mean_projection_error(&h.modes, &InnerProduct::Euclidean, &s) < 1e-10);
    }

    #[test]
    fn mean_error_bound_holds_for_all_shapes() {
        // random 100×40 data, depth-3 binary tree and others
        let s = decaying_snapshots(100, 40, 3);
        let w = InnerProduct::Euclidean;
        for omega in [0.1, 0.5, 0.95] {
            for eps in [1e-2, 1e-3] {
                for tree in [
                    HapodTree::chain(split(40, 5)).unwrap(),
                    HapodTree::binary(split(40, 4)).unwrap(),
                    HapodTree::star(split(40, 6)).unwrap(),
                ] {
                    for method in [PodMethod::Snapshots, PodMethod::QrSvd] {
                        let h = hapod(&tree, &s, &w, eps, omega, method).unwrap();
                        let err = mean_projection_error(&h.modes, &w, &s);
                        assert!(err <= eps, "ω={omega} ε*={eps} depth {}: {err}", tree.depth());
                        assert!(h.stats.final_modes <= h.stats.max_input_vectors);
                    }
                }
            }
        }
    }
}
