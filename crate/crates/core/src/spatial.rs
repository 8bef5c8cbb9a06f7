//! Static 2-D k-d tree for exact nearest-neighbour lookups.

/// Balanced k-d tree over a fixed point set. Ties between equidistant
/// points resolve to the lowest source index.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 2]>,
    // Implicit tree: each subslice's middle element is the node, halves are children.
    order: Vec<u32>,
}

impl KdTree {
    pub fn new(points: &[[f64; 2]]) -> Self {
        assert!(points.len() < u32::MAX as usize, "too many points for a u32 index");
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        build(points, &mut order, 0);
        KdTree {
            points: points.to_vec(),
            order,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index of the point nearest to `q`, or `None` for an empty tree.
    pub fn nearest(&self, q: [f64; 2]) -> Option<usize> {
        if self.order.is_empty() {
            return None;
        }
        let mut best = (f64::INFINITY, u32::MAX);
        self.search(&self.order, 0, q, &mut best);
        Some(best.1 as usize)
    }

    fn search(&self, slice: &[u32], depth: usize, q: [f64; 2], best: &mut (f64, u32)) {
        if slice.is_empty() {
            return;
        }
        let mid = slice.len() / 2;
        let idx = slice[mid];
        let p = self.points[idx as usize];
        let d2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
        if d2 < best.0 || (d2 == best.0 && idx < best.1) {
            *best = (d2, idx);
        }
        let axis = depth % 2;
        let diff = q[axis] - p[axis];
        let (near, far) = if diff < 0.0 {
            (&slice[..mid], &slice[mid + 1..])
        } else {
            (&slice[mid + 1..], &slice[..mid])
        };
        self.search(near, depth + 1, q, best);
        // `<=` keeps equidistant candidates with lower indices reachable.
        if diff * diff <= best.0 {
            self.search(far, depth + 1, q, best);
        }
    }
}

fn build(points: &[[f64; 2]], slice: &mut [u32], depth: usize) {
    if slice.len() <= 1 {
        return;
    }
    let axis = depth % 2;
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis]
            .total_cmp(&points[b as usize][axis])
            .then(a.cmp(&b))
    });
    let (left, rest) = slice.split_at_mut(mid);
    build(points, left, depth + 1);
    build(points, &mut rest[1..], depth + 1);
}
