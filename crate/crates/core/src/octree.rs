//! Octree over 3D points with exact radius and K-nearest queries.
//!
//! Query pruning follows three rules: octants disjoint from the query ball
//! are skipped, octants fully contained in the ball are bulk-accepted without
//! per-point tests, and a KNN search stops once no remaining octant can beat
//! the current worst candidate.

use std::cell::Cell;
use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::scalar::{Scalar, Vec3};

pub const DEFAULT_LEAF_CAPACITY: usize = 16;
pub const DEFAULT_MAX_DEPTH: usize = 21;

#[derive(Debug)]
enum Node {
    Leaf {
        indices: Vec<usize>,
    },
    Branch {
        children: [Option<Box<Node>>; 8],
    },
}

/// Immutable spatial index over a point set. Holds indices into the source
/// slice; queries are exact.
#[derive(Debug)]
pub struct Octree<S: Scalar = f64> {
    points: Vec<Vec3<S>>,
    root: Node,
    root_min: Vec3<S>,
    root_size: S,
    node_count: usize,
}

/// Instrumentation for the pruning-soundness checks.
#[derive(Debug, Default, Clone, Copy)]
pub struct QueryStats {
    pub nodes_visited: usize,
    pub bulk_accepted_octants: usize,
    pub point_distance_tests: usize,
}

impl<S: Scalar> Octree<S> {
    pub fn build(points: &[Vec3<S>], leaf_capacity: usize, max_depth: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("octree over zero points"));
        }
        for (i, p) in points.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::Degenerate(format!("non-finite point at index {i}")));
            }
        }
        let capacity = leaf_capacity.max(1);
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = lo.min_componentwise(*p);
            hi = hi.max_componentwise(*p);
        }
        // cubic root cell, expanded so boundary points fall strictly inside
        let pad = S::from_f64_lossy(1e-6);
        let extent = (hi - lo).x.max((hi - lo).y).max((hi - lo).z).max(pad);
        let size = extent + pad + pad;
        let center = (lo + hi) / S::from_f64_lossy(2.0);
        let root_min = center - Vec3::splat(size / S::from_f64_lossy(2.0));

        let mut node_count = 0usize;
        let all: Vec<usize> = (0..points.len()).collect();
        let root = Self::build_node(
            points,
            all,
            root_min,
            size,
            0,
            capacity,
            max_depth.max(1),
            &mut node_count,
        );
        Ok(Self {
            points: points.to_vec(),
            root,
            root_min,
            root_size: size,
            node_count,
        })
    }

    pub fn with_defaults(points: &[Vec3<S>]) -> Result<Self> {
        Self::build(points, DEFAULT_LEAF_CAPACITY, DEFAULT_MAX_DEPTH)
    }

    fn build_node(
        points: &[Vec3<S>],
        indices: Vec<usize>,
        cell_min: Vec3<S>,
        cell_size: S,
        depth: usize,
        capacity: usize,
        max_depth: usize,
        node_count: &mut usize,
    ) -> Node {
        *node_count += 1;
        if indices.len() <= capacity || depth >= max_depth {
            return Node::Leaf { indices };
        }
        let half = cell_size / S::from_f64_lossy(2.0);
        let center = cell_min + Vec3::splat(half);
        let mut buckets: [Vec<usize>; 8] = Default::default();
        for idx in indices {
            let p = points[idx];
            // boundary points go to the lower-coordinate child
            let mut child = 0usize;
            if p.x > center.x {
                child |= 1;
            }
            if p.y > center.y {
                child |= 2;
            }
            if p.z > center.z {
                child |= 4;
            }
            buckets[child].push(idx);
        }
        let mut children: [Option<Box<Node>>; 8] = Default::default();
        for (child, bucket) in buckets.into_iter().enumerate() {
            if bucket.is_empty() {
                continue;
            }
            let offset = Vec3::new(
                if child & 1 != 0 { half } else { S::zero() },
                if child & 2 != 0 { half } else { S::zero() },
                if child & 4 != 0 { half } else { S::zero() },
            );
            children[child] = Some(Box::new(Self::build_node(
                points,
                bucket,
                cell_min + offset,
                half,
                depth + 1,
                capacity,
                max_depth,
                node_count,
            )));
        }
        Node::Branch { children }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn points(&self) -> &[Vec3<S>] {
        &self.points
    }

    pub fn depth(&self) -> usize {
        fn depth_of(node: &Node) -> usize {
            match node {
                Node::Leaf { .. } => 0,
                Node::Branch { children, .. } => {
                    1 + children
                        .iter()
                        .flatten()
                        .map(|c| depth_of(c))
                        .max()
                        .unwrap_or(0)
                }
            }
        }
        depth_of(&self.root)
    }

    /// All indices with `‖p − center‖ ≤ r`, ascending by index.
    pub fn radius_query(&self, center: Vec3<S>, r: S) -> Vec<usize> {
        self.radius_query_with_stats(center, r).0
    }

    pub fn radius_query_with_stats(&self, center: Vec3<S>, r: S) -> (Vec<usize>, QueryStats) {
        let mut out = Vec::new();
        let mut stats = QueryStats::default();
        self.radius_rec(
            &self.root,
            self.root_min,
            self.root_size,
            center,
            r,
            &mut out,
            &mut stats,
        );
        out.sort_unstable();
        (out, stats)
    }

    fn radius_rec(
        &self,
        node: &Node,
        cell_min: Vec3<S>,
        cell_size: S,
        center: Vec3<S>,
        r: S,
        out: &mut Vec<usize>,
        stats: &mut QueryStats,
    ) {
        stats.nodes_visited += 1;
        let r2 = r * r;
        // criterion 3: query ball contains the octant -> bulk accept
        if cell_max_dist_sq(cell_min, cell_size, center) <= r2 {
            stats.bulk_accepted_octants += 1;
            collect_all(node, out);
            return;
        }
        match node {
            Node::Leaf { indices } => {
                for &idx in indices {
                    stats.point_distance_tests += 1;
                    if (self.points[idx] - center).norm_squared() <= r2 {
                        out.push(idx);
                    }
                }
            }
            Node::Branch { children, .. } => {
                let half = cell_size / S::from_f64_lossy(2.0);
                for (child, sub) in children.iter().enumerate() {
                    let Some(sub) = sub else { continue };
                    let sub_min = child_min(cell_min, half, child);
                    // criterion 1: skip octants disjoint from the query ball
                    if cell_min_dist_sq(sub_min, half, center) > r2 {
                        continue;
                    }
                    self.radius_rec(sub, sub_min, half, center, r, out, stats);
                }
            }
        }
    }

    /// The `k` nearest indices by Euclidean distance, ascending; distance ties
    /// broken by lower index.
    pub fn knn_query(&self, center: Vec3<S>, k: usize) -> Result<Vec<usize>> {
        Ok(self.knn_query_with_stats(center, k)?.0)
    }

    pub fn knn_query_with_stats(
        &self,
        center: Vec3<S>,
        k: usize,
    ) -> Result<(Vec<usize>, QueryStats)> {
        if k == 0 || k > self.points.len() {
            return Err(Error::Bounds(format!(
                "k = {k} outside 1..={}",
                self.points.len()
            )));
        }
        let stats = Cell::new(QueryStats::default());
        let bump = |f: fn(&mut QueryStats)| {
            let mut s = stats.get();
            f(&mut s);
            stats.set(s);
        };

        // worst-first heap of the best k candidates seen so far
        let mut best: BinaryHeap<Candidate<S>> = BinaryHeap::with_capacity(k + 1);
        // nearest-first traversal over octants
        let mut frontier: BinaryHeap<NodeEntry<S>> = BinaryHeap::new();
        frontier.push(NodeEntry {
            dist_sq: cell_min_dist_sq(self.root_min, self.root_size, center),
            node: &self.root,
            cell_min: self.root_min,
            cell_size: self.root_size,
        });
        while let Some(entry) = frontier.pop() {
            if best.len() == k {
                let worst = best.peek().unwrap().dist_sq;
                // criterion 2 analogue: the current k-ball lies inside
                // already-scanned space, nothing closer remains
                if entry.dist_sq > worst {
                    break;
                }
            }
            bump(|s| s.nodes_visited += 1);
            match entry.node {
                Node::Leaf { indices } => {
                    for &idx in indices {
                        bump(|s| s.point_distance_tests += 1);
                        let d2 = (self.points[idx] - center).norm_squared();
                        let cand = Candidate { dist_sq: d2, index: idx };
                        if best.len() < k {
                            best.push(cand);
                        } else if cand < *best.peek().unwrap() {
                            best.pop();
                            best.push(cand);
                        }
                    }
                }
                Node::Branch { children, .. } => {
                    let half = entry.cell_size / S::from_f64_lossy(2.0);
                    for (child, sub) in children.iter().enumerate() {
                        let Some(sub) = sub else { continue };
                        let sub_min = child_min(entry.cell_min, half, child);
                        let d2 = cell_min_dist_sq(sub_min, half, center);
                        if best.len() == k && d2 > best.peek().unwrap().dist_sq {
                            continue;
                        }
                        frontier.push(NodeEntry {
                            dist_sq: d2,
                            node: sub,
                            cell_min: sub_min,
                            cell_size: half,
                        });
                    }
                }
            }
        }
        let mut result: Vec<Candidate<S>> = best.into_vec();
        result.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
        Ok((result.into_iter().map(|c| c.index).collect(), stats.get()))
    }
}

fn collect_all(node: &Node, out: &mut Vec<usize>) {
    match node {
        Node::Leaf { indices } => out.extend_from_slice(indices),
        Node::Branch { children, .. } => {
            for c in children.iter().flatten() {
                collect_all(c, out);
            }
        }
    }
}

fn child_min<S: Scalar>(cell_min: Vec3<S>, half: S, child: usize) -> Vec3<S> {
    Vec3::new(
        cell_min.x + if child & 1 != 0 { half } else { S::zero() },
        cell_min.y + if child & 2 != 0 { half } else { S::zero() },
        cell_min.z + if child & 4 != 0 { half } else { S::zero() },
    )
}

/// Squared distance from `center` to the closest point of the cell.
fn cell_min_dist_sq<S: Scalar>(cell_min: Vec3<S>, size: S, center: Vec3<S>) -> S {
    let cell_max = cell_min + Vec3::splat(size);
    let mut acc = S::zero();
    for a in 0..3 {
        let c = center.component(a);
        let lo = cell_min.component(a);
        let hi = cell_max.component(a);
        let d = if c < lo {
            lo - c
        } else if c > hi {
            c - hi
        } else {
            S::zero()
        };
        acc += d * d;
    }
    acc
}

/// Squared distance from `center` to the farthest point of the cell.
fn cell_max_dist_sq<S: Scalar>(cell_min: Vec3<S>, size: S, center: Vec3<S>) -> S {
    let cell_max = cell_min + Vec3::splat(size);
    let mut acc = S::zero();
    for a in 0..3 {
        let c = center.component(a);
        let d = (c - cell_min.component(a)).abs().max((c - cell_max.component(a)).abs());
        acc += d * d;
    }
    acc
}

#[derive(Debug, Clone, Copy)]
struct Candidate<S> {
    dist_sq: S,
    index: usize,
}

impl<S: Scalar> PartialEq for Candidate<S> {
    fn eq(&self, other: &Self) -> bool {
        self.dist_sq == other.dist_sq && self.index == other.index
    }
}
impl<S: Scalar> Eq for Candidate<S> {}
impl<S: Scalar> PartialOrd for Candidate<S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<S: Scalar> Ord for Candidate<S> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist_sq
            .partial_cmp(&other.dist_sq)
            .unwrap_or(Ordering::Equal)
            .then(self.index.cmp(&other.index))
    }
}

struct NodeEntry<'a, S: Scalar> {
    dist_sq: S,
    node: &'a Node,
    cell_min: Vec3<S>,
    cell_size: S,
}

impl<S: Scalar> PartialEq for NodeEntry<'_, S> {
    fn eq(&self, other: &Self) -> bool {
        self.dist_sq == other.dist_sq
    }
}
impl<S: Scalar> Eq for NodeEntry<'_, S> {}
impl<S: Scalar> PartialOrd for NodeEntry<'_, S> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<S: Scalar> Ord for NodeEntry<'_, S> {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap over distance
        other
            .dist_sq
            .partial_cmp(&self.dist_sq)
            .unwrap_or(Ordering::Equal)
    }
}

/// Linear-scan oracle for radius queries.
pub fn brute_force_radius<S: Scalar>(points: &[Vec3<S>], center: Vec3<S>, r: S) -> Vec<usize> {
    let r2 = r * r;
    (0..points.len())
        .filter(|&i| (points[i] - center).norm_squared() <= r2)
        .collect()
}

/// Linear-scan oracle for KNN queries (ties by lower index).
pub fn brute_force_knn<S: Scalar>(points: &[Vec3<S>], center: Vec3<S>, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let da = (points[a] - center).norm_squared();
        let db = (points[b] - center).norm_squared();
        da.partial_cmp(&db).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Vec3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect()
    }

    #[test]
    fn single_point_is_depth_zero() {
        let tree = Octree::with_defaults(&[Vec3::<f64>::new(1.0, 2.0, 3.0)]).unwrap();
        assert_eq!(tree.depth(), 0);
        assert_eq!(tree.radius_query(Vec3::new(1.0, 2.0, 3.0), 0.1), vec![0]);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(
            Octree::<f64>::with_defaults(&[]),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn unit_cube_corners_split_into_octants() {
        let mut pts = Vec::new();
        for z in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for x in [0.0, 1.0] {
                    pts.push(Vec3::new(x, y, z));
                }
            }
        }
        let tree = Octree::build(&pts, 1, 8).unwrap();
        assert_eq!(tree.depth(), 1);
        // one root + 8 occupied leaves
        assert_eq!(tree.node_count(), 9);
    }

    #[test]
    fn every_index_stored_exactly_once() {
        let pts = random_points(10_000, 3);
        let tree = Octree::with_defaults(&pts).unwrap();
        let all = tree.radius_query(Vec3::zero(), 10.0);
        assert_eq!(all, (0..pts.len()).collect::<Vec<_>>());
    }

    #[test]
    fn tiny_radius_finds_the_stored_point() {
        let pts = random_points(100, 9);
        let tree = Octree::with_defaults(&pts).unwrap();
        assert_eq!(tree.radius_query(pts[42], 1e-9), vec![42]);
    }

    #[test]
    fn whole_root_ball_takes_bulk_path() {
        let pts = random_points(1000, 5);
        let tree = Octree::with_defaults(&pts).unwrap();
        let (hits, stats) = tree.radius_query_with_stats(Vec3::zero(), 100.0);
        assert_eq!(hits.len(), pts.len());
        assert!(stats.bulk_accepted_octants >= 1);
        assert_eq!(stats.point_distance_tests, 0);
    }

    #[test]
    fn radius_matches_brute_force() {
        let pts = random_points(10_000, 1);
        let tree = Octree::with_defaults(&pts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let c = Vec3::new(
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-1.2..1.2),
            );
            let r = rng.gen_range(0.01..0.5);
            assert_eq!(tree.radius_query(c, r), brute_force_radius(&pts, c, r));
        }
    }

    #[test]
    fn knn_matches_brute_force() {
        let pts = random_points(10_000, 4);
        let tree = Octree::with_defaults(&pts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let c = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            for k in [1usize, 8, 64] {
                assert_eq!(
                    tree.knn_query(c, k).unwrap(),
                    brute_force_knn(&pts, c, k),
                    "k={k}"
                );
            }
        }
    }

    #[test]
    fn knn_k_equals_point_count() {
        let pts = random_points(50, 8);
        let tree = Octree::with_defaults(&pts).unwrap();
        let got = tree.knn_query(Vec3::zero(), 50).unwrap();
        assert_eq!(got, brute_force_knn(&pts, Vec3::zero(), 50));
        assert!(tree.knn_query(Vec3::zero(), 51).is_err());
    }

    #[test]
    fn knn_on_a_stored_point_returns_it_first() {
        let pts = random_points(200, 12);
        let tree = Octree::with_defaults(&pts).unwrap();
        assert_eq!(tree.knn_query(pts[17], 1).unwrap(), vec![17]);
    }

    #[test]
    fn localized_queries_prune_nodes() {
        let pts = random_points(5000, 10);
        let tree = Octree::with_defaults(&pts).unwrap();
        let (_, stats) = tree.radius_query_with_stats(Vec3::new(0.5, 0.5, 0.5), 0.05);
        assert!(stats.nodes_visited < tree.node_count());
        let (_, kstats) = tree.knn_query_with_stats(Vec3::new(0.5, 0.5, 0.5), 4).unwrap();
        assert!(kstats.nodes_visited < tree.node_count());
    }

    #[test]
    fn coincident_points_respect_leaf_depth_cap() {
        let pts = vec![Vec3::<f64>::new(0.5, 0.5, 0.5); 100];
        let tree = Octree::build(&pts, 4, 6).unwrap();
        assert_eq!(tree.radius_query(pts[0], 1e-9).len(), 100);
        assert_eq!(tree.knn_query(pts[0], 3).unwrap(), vec![0, 1, 2]);
    }
}
