use crate::error::{Error, Result};
use crate::geometry::{bounding_box, Vec3};

pub const DEFAULT_MAX_LEAF: usize = 16;
pub const DEFAULT_MAX_DEPTH: usize = 12;

const NO_CHILD: u32 = u32::MAX;

#[derive(Debug, Clone)]
enum NodeKind {
    Leaf { start: usize, end: usize },
    Internal { children: [u32; 8] },
}

#[derive(Debug, Clone)]
struct Node {
    center: Vec3,
    half: f64,
    depth: usize,
    kind: NodeKind,
}

/// Point octree for exact nearest-vertex queries.
///
/// Leaves hold contiguous runs of `order`; a node is split while it holds
/// more than `max_leaf` points and is shallower than `max_depth`.
#[derive(Debug, Clone)]
pub struct Octree {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
    max_leaf: usize,
    max_depth: usize,
}

/// A leaf as seen from outside: its cube and the point indices it holds.
#[derive(Debug, Clone)]
pub struct LeafView<'a> {
    pub center: Vec3,
    pub half: f64,
    pub depth: usize,
    pub indices: &'a [usize],
}

impl Octree {
    pub fn build(points: &[Vec3], max_leaf: usize, max_depth: usize) -> Result<Self> {
        let (lo, hi) = bounding_box(points)
            .ok_or_else(|| Error::EmptyInput("cannot index an empty point set".into()))?;
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::Contract("octree input has non-finite coordinates".into()));
        }
        let center = (lo + hi) * 0.5;
        let half = ((hi - lo).max() * 0.5 * 1.01).max(1e-6);
        let mut tree = Octree {
            points: points.to_vec(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
            max_leaf: max_leaf.max(1),
            max_depth,
        };
        tree.build_node(center, half, 0, 0, points.len());
        Ok(tree)
    }

    fn build_node(&mut self, center: Vec3, half: f64, depth: usize, start: usize, end: usize) -> u32 {
        let id = self.nodes.len();
        self.nodes.push(Node {
            center,
            half,
            depth,
            kind: NodeKind::Leaf { start, end },
        });
        if end - start <= self.max_leaf || depth >= self.max_depth {
            return id as u32;
        }
        // Stable partition into octants keeps the structure deterministic.
        let mut buckets: [Vec<usize>; 8] = Default::default();
        for &i in &self.order[start..end] {
            buckets[octant(&center, &self.points[i])].push(i);
        }
        let mut children = [NO_CHILD; 8];
        let mut cursor = start;
        let mut ranges = [(0, 0); 8];
        for (k, bucket) in buckets.iter().enumerate() {
            self.order[cursor..cursor + bucket.len()].copy_from_slice(bucket);
            ranges[k] = (cursor, cursor + bucket.len());
            cursor += bucket.len();
        }
        let quarter = half * 0.5;
        for (k, &(s, e)) in ranges.iter().enumerate() {
            if s == e {
                continue;
            }
            let offset = Vec3::new(
                if k & 1 != 0 { quarter } else { -quarter },
                if k & 2 != 0 { quarter } else { -quarter },
                if k & 4 != 0 { quarter } else { -quarter },
            );
            children[k] = self.build_node(center + offset, quarter, depth + 1, s, e);
        }
        self.nodes[id].kind = NodeKind::Internal { children };
        id as u32
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn leaves(&self) -> impl Iterator<Item = LeafView<'_>> {
        self.nodes.iter().filter_map(|n| match n.kind {
            NodeKind::Leaf { start, end } => Some(LeafView {
                center: n.center,
                half: n.half,
                depth: n.depth,
                indices: &self.order[start..end],
            }),
            NodeKind::Internal { .. } => None,
        })
    }

    /// Exact nearest indexed point; equal distances resolve to the lower index.
    pub fn closest_vertex(&self, query: &Vec3) -> (usize, f64) {
        let mut best = (f64::INFINITY, usize::MAX);
        self.search(0, query, &mut best);
        (best.1, best.0.sqrt())
    }

    fn search(&self, id: usize, q: &Vec3, best: &mut (f64, usize)) {
        let node = &self.nodes[id];
        if box_dist2(&node.center, node.half, q) > best.0 {
            return;
        }
        match &node.kind {
            NodeKind::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    let d2 = (self.points[i] - q).norm_squared();
                    if d2 < best.0 || (d2 == best.0 && i < best.1) {
                        *best = (d2, i);
                    }
                }
            }
            NodeKind::Internal { children } => {
                let mut order: Vec<(f64, u32)> = children
                    .iter()
                    .filter(|&&c| c != NO_CHILD)
                    .map(|&c| {
                        let n = &self.nodes[c as usize];
                        (box_dist2(&n.center, n.half, q), c)
                    })
                    .collect();
                order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                for (d2, c) in order {
                    if d2 > best.0 {
                        break;
                    }
                    self.search(c as usize, q, best);
                }
            }
        }
    }

    /// All indexed points within `radius` of `query`, ascending by index.
    pub fn within(&self, query: &Vec3, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        let r2 = radius * radius;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            if box_dist2(&node.center, node.half, query) > r2 {
                continue;
            }
            match &node.kind {
                NodeKind::Leaf { start, end } => out.extend(
                    self.order[*start..*end]
                        .iter()
                        .filter(|&&i| (self.points[i] - query).norm_squared() <= r2),
                ),
                NodeKind::Internal { children } => stack.extend(
                    children
                        .iter()
                        .filter(|&&c| c != NO_CHILD)
                        .map(|&c| c as usize),
                ),
            }
        }
        out.sort_unstable();
        out
    }
}

fn octant(center: &Vec3, p: &Vec3) -> usize {
    (p.x >= center.x) as usize | ((p.y >= center.y) as usize) << 1 | ((p.z >= center.z) as usize) << 2
}

fn box_dist2(center: &Vec3, half: f64, q: &Vec3) -> f64 {
    (0..3)
        .map(|k| {
            let d = ((q[k] - center[k]).abs() - half).max(0.0);
            d * d
        })
        .sum()
}
