//! Two-dimensional KD-tree for snapping coordinates to grid nodes.
//!
//! Nodes split on `depth % 2` at the median. Equal keys always go to the
//! right subtree, so every left descendant is strictly below the split value
//! and the tree shape depends only on the input order. Distances are planar
//! Euclidean; ties resolve to the smallest input index.

use thiserror::Error;

use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error("point set is empty")]
    EmptyInput,
    #[error("point {0} has a non-finite coordinate")]
    NonFiniteCoordinate(usize),
    #[error("query has a non-finite coordinate")]
    NonFiniteQuery,
}

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
struct Node<T> {
    point: [T; 2],
    index: u32,
    dim: u8,
    left: u32,
    right: u32,
}

/// Immutable KD-tree over `[x, y]` points.
#[derive(Debug, Clone, PartialEq)]
pub struct KdTree<T> {
    nodes: Vec<Node<T>>,
    root: u32,
}

/// Result of a nearest-neighbour query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<T> {
    pub index: usize,
    pub distance: T,
}

#[inline]
fn dist2<T: Real>(a: &[T; 2], b: &[T; 2]) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

#[inline]
fn better<T: Real>(d2: T, index: usize, best: &Option<(T, usize)>) -> bool {
    match best {
        None => true,
        Some((bd, bi)) => d2 < *bd || (d2 == *bd && index < *bi),
    }
}

impl<T: Real> KdTree<T> {
    /// Builds a median-split tree over `points`.
    pub fn build(points: &[[T; 2]]) -> Result<Self, IndexError> {
        if points.is_empty() {
            return Err(IndexError::EmptyInput);
        }
        if let Some(i) = points
            .iter()
            .position(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(IndexError::NonFiniteCoordinate(i));
        }
        let mut tree = KdTree {
            nodes: Vec::with_capacity(points.len()),
            root: NONE,
        };
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        tree.root = tree.build_rec(points, &mut order, 0);
        Ok(tree)
    }

    fn build_rec(&mut self, points: &[[T; 2]], idx: &mut [u32], depth: usize) -> u32 {
        if idx.is_empty() {
            return NONE;
        }
        let dim = depth % 2;
        // Stable sort keeps input order among equal keys.
        idx.sort_by(|&a, &b| {
            points[a as usize][dim]
                .partial_cmp(&points[b as usize][dim])
                .expect("finite coordinates")
        });
        let mut m = idx.len() / 2;
        let key = points[idx[m] as usize][dim];
        while m > 0 && points[idx[m - 1] as usize][dim] == key {
            m -= 1;
        }
        let id = self.nodes.len() as u32;
        self.nodes.push(Node {
            point: points[idx[m] as usize],
            index: idx[m],
            dim: dim as u8,
            left: NONE,
            right: NONE,
        });
        let (lo, rest) = idx.split_at_mut(m);
        let hi = &mut rest[1..];
        let left = self.build_rec(points, lo, depth + 1);
        let right = self.build_rec(points, hi, depth + 1);
        self.nodes[id as usize].left = left;
        self.nodes[id as usize].right = right;
        id
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input index stored at the root, mostly useful for inspecting shape.
    pub fn root_index(&self) -> usize {
        self.nodes[self.root as usize].index as usize
    }

    /// Split dimension of the root node.
    pub fn root_dim(&self) -> usize {
        self.nodes[self.root as usize].dim as usize
    }

    /// Longest root-to-leaf path, counting nodes.
    pub fn depth(&self) -> usize {
        fn rec<T>(nodes: &[Node<T>], n: u32) -> usize {
            if n == NONE {
                return 0;
            }
            let node = &nodes[n as usize];
            1 + rec(nodes, node.left).max(rec(nodes, node.right))
        }
        rec(&self.nodes, self.root)
    }

    /// Input indices in depth-first pre-order.
    pub fn payload_order(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.index as usize).collect()
    }

    /// Checks the partition predicate at every node: left keys strictly
    /// below the split, right keys at or above it.
    pub fn check_partition(&self) -> bool {
        fn subtree_ok<T: Real>(nodes: &[Node<T>], n: u32, dim: usize, split: T, left: bool) -> bool {
            if n == NONE {
                return true;
            }
            let node = &nodes[n as usize];
            let k = node.point[dim];
            let ok = if left { k < split } else { k >= split };
            ok && subtree_ok(nodes, node.left, dim, split, left)
                && subtree_ok(nodes, node.right, dim, split, left)
        }
        self.nodes.iter().all(|node| {
            let d = node.dim as usize;
            subtree_ok(&self.nodes, node.left, d, node.point[d], true)
                && subtree_ok(&self.nodes, node.right, d, node.point[d], false)
        })
    }

    /// Closest stored point to `query`.
    pub fn nearest(&self, query: [T; 2]) -> Result<Neighbor<T>, IndexError> {
        self.nearest_counted(query).map(|(n, _)| n)
    }

    /// [`nearest`](Self::nearest) plus the number of nodes visited.
    pub fn nearest_counted(&self, query: [T; 2]) -> Result<(Neighbor<T>, usize), IndexError> {
        if !query[0].is_finite() || !query[1].is_finite() {
            return Err(IndexError::NonFiniteQuery);
        }
        let mut best: Option<(T, usize)> = None;
        let mut visited = 0usize;
        self.search(self.root, &query, &mut best, &mut visited);
        let (d2, index) = best.expect("tree is non-empty");
        Ok((
            Neighbor {
                index,
                distance: d2.sqrt(),
            },
            visited,
        ))
    }

    fn search(&self, n: u32, q: &[T; 2], best: &mut Option<(T, usize)>, visited: &mut usize) {
        if n == NONE {
            return;
        }
        *visited += 1;
        let node = &self.nodes[n as usize];
        let d2 = dist2(&node.point, q);
        if better(d2, node.index as usize, best) {
            *best = Some((d2, node.index as usize));
        }
        let dim = node.dim as usize;
        let diff = q[dim] - node.point[dim];
        let (near, far) = if diff < T::zero() {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.search(near, q, best, visited);
        // Non-strict comparison keeps equidistant candidates reachable for
        // the smallest-index tie rule.
        let bound = best.map(|(d, _)| d).unwrap_or_else(T::infinity);
        if diff * diff <= bound {
            self.search(far, q, best, visited);
        }
    }
}

/// Exhaustive nearest-neighbour search with the same tie rule as the tree.
pub fn nearest_bruteforce<T: Real>(points: &[[T; 2]], query: [T; 2]) -> Result<Neighbor<T>, IndexError> {
    if points.is_empty() {
        return Err(IndexError::EmptyInput);
    }
    if !query[0].is_finite() || !query[1].is_finite() {
        return Err(IndexError::NonFiniteQuery);
    }
    let mut best: Option<(T, usize)> = None;
    for (i, p) in points.iter().enumerate() {
        let d2 = dist2(p, &query);
        if better(d2, i, &best) {
            best = Some((d2, i));
        }
    }
    let (d2, index) = best.expect("non-empty");
    Ok(Neighbor {
        index,
        distance: d2.sqrt(),
    })
}
