//! Static k-d tree for exact nearest-point queries in 3D.

use nalgebra::Vector3;

/// Balanced k-d tree over a fixed point set, laid out implicitly: the node
/// covering `order[lo..hi]` sits at `mid = (lo + hi) / 2` and splits on
/// `axis[mid]`.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    order: Vec<usize>,
    axis: Vec<u8>,
}

impl KdTree {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axis = vec![0u8; points.len()];
        build(&points, &mut order, &mut axis);
        Self {
            points,
            order,
            axis,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn point(&self, index: usize) -> Vector3<f64> {
        self.points[index]
    }

    /// Index and squared distance of the closest point. Equidistant points
    /// resolve to the lower index.
    pub fn nearest(&self, query: &Vector3<f64>) -> Option<(usize, f64)> {
        self.nearest_where(query, |_| true)
    }

    /// Like [`nearest`](Self::nearest) but only considers points accepted by `keep`.
    pub fn nearest_where(
        &self,
        query: &Vector3<f64>,
        keep: impl Fn(usize) -> bool,
    ) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        self.search(query, 0, self.order.len(), &keep, &mut best);
        best
    }

    fn search(
        &self,
        query: &Vector3<f64>,
        lo: usize,
        hi: usize,
        keep: &impl Fn(usize) -> bool,
        best: &mut Option<(usize, f64)>,
    ) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let idx = self.order[mid];
        if keep(idx) {
            let d2 = (self.points[idx] - query).norm_squared();
            let better = match *best {
                None => true,
                Some((bi, bd)) => d2 < bd || (d2 == bd && idx < bi),
            };
            if better {
                *best = Some((idx, d2));
            }
        }
        let ax = self.axis[mid] as usize;
        let delta = query[ax] - self.points[idx][ax];
        let (near, far) = if delta <= 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(query, near.0, near.1, keep, best);
        // `<=` keeps equal-distance candidates on the far side reachable for the index tie-break
        if best.is_none_or(|(_, bd)| delta * delta <= bd) {
            self.search(query, far.0, far.1, keep, best);
        }
    }
}

fn build(points: &[Vector3<f64>], order: &mut [usize], axis: &mut [u8]) {
    let n = order.len();
    if n == 0 {
        return;
    }
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for &i in order.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let ax = (hi - lo).imax();
    let mid = n / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][ax].total_cmp(&points[b][ax]).then(a.cmp(&b))
    });
    axis[mid] = ax as u8;
    let (left, rest) = order.split_at_mut(mid);
    let (left_axis, rest_axis) = axis.split_at_mut(mid);
    build(points, left, left_axis);
    build(points, &mut rest[1..], &mut rest_axis[1..]);
}
