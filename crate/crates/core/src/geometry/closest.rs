use super::Vec3;

/// The primitive of a triangle on which a closest point lies.
///
/// `Edge(k)` is the edge from local corner `k` to corner `(k + 1) % 3`;
/// `Vertex(k)` is corner `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feature {
    Face,
    Edge(u8),
    Vertex(u8),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestPointResult {
    pub point: Vec3,
    pub feature: Feature,
    pub barycentric: [f64; 3],
    pub distance: f64,
}

/// Exact closest point on the closed triangle `(a, b, c)` to `query`.
///
/// Voronoi-region walk: the vertex and edge regions are tested before
/// falling through to the interior projection, so the reported feature
/// always matches the active barycentric constraints.
pub fn closest_point_on_triangle(query: Vec3, a: Vec3, b: Vec3, c: Vec3) -> ClosestPointResult {
    let (bary, feature) = closest_barycentric(query, a, b, c);
    let point = a * bary[0] + b * bary[1] + c * bary[2];
    ClosestPointResult {
        point,
        feature,
        barycentric: bary,
        distance: (query - point).norm(),
    }
}

fn closest_barycentric(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> ([f64; 3], Feature) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ([1.0, 0.0, 0.0], Feature::Vertex(0));
    }

    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return ([0.0, 1.0, 0.0], Feature::Vertex(1));
    }

    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return ([1.0 - v, v, 0.0], Feature::Edge(0));
    }

    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return ([0.0, 0.0, 1.0], Feature::Vertex(2));
    }

    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return ([1.0 - w, 0.0, w], Feature::Edge(2));
    }

    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return ([0.0, 1.0 - w, w], Feature::Edge(1));
    }

    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    ([1.0 - v - w, v, w], Feature::Face)
}
