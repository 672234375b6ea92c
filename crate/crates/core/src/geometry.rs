//! Feasible regions and the linear-optimization oracle.
//!
//! A region is either a bounded polytope given by its vertex list or a
//! Euclidean ball. The oracle `w*(y) = argmin_{w in S} y'w` is exact for
//! both: an exhaustive vertex scan for polytopes and the closed form
//! `center - radius * y / |y|` for balls. The module also computes the
//! geometric constants used by the risk analysis: the linear optimization
//! gap `omega_S`, the diameter `D_S`, the minimal directional width `d_S`,
//! and the polyhedral calibration constant `Xi_S`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vertices within this absolute objective tolerance are treated as tied;
/// ties resolve to the lexicographically smallest vertex so that decisions
/// (and therefore SPO losses) are deterministic.
pub const TIE_TOL: f64 = 1e-12;

/// The decision set `S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RegionSpec", into = "RegionSpec")]
pub enum FeasibleRegion {
    /// Bounded polytope listed by its vertices.
    Polytope { vertices: Vec<DVector<f64>> },
    /// Euclidean ball `{w : |w - center| <= radius}`, the level set of the
    /// 2-strongly-convex, 2-smooth function `|w - center|^2`.
    Ball { center: DVector<f64>, radius: f64 },
}

/// Serde mirror: `{"kind":"polytope","vertices":[[..],..]}` or
/// `{"kind":"ball","center":[..],"radius":r}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum RegionSpec {
    Polytope { vertices: Vec<Vec<f64>> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl TryFrom<RegionSpec> for FeasibleRegion {
    type Error = Error;

    fn try_from(spec: RegionSpec) -> Result<Self> {
        match spec {
            RegionSpec::Polytope { vertices } => FeasibleRegion::polytope(vertices),
            RegionSpec::Ball { center, radius } => FeasibleRegion::ball(center, radius),
        }
    }
}

impl From<FeasibleRegion> for RegionSpec {
    fn from(region: FeasibleRegion) -> Self {
        match region {
            FeasibleRegion::Polytope { vertices } => RegionSpec::Polytope {
                vertices: vertices
                    .iter()
                    .map(|v| v.iter().copied().collect())
                    .collect(),
            },
            FeasibleRegion::Ball { center, radius } => RegionSpec::Ball {
                center: center.iter().copied().collect(),
                radius,
            },
        }
    }
}

impl FeasibleRegion {
    /// Builds a polytope from a nonempty vertex list of consistent dimension.
    pub fn polytope(vertices: Vec<Vec<f64>>) -> Result<Self> {
        let first = vertices
            .first()
            .ok_or_else(|| Error::InvalidRegion("polytope needs at least one vertex".into()))?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::InvalidRegion(
                "vertices must have dimension >= 1".into(),
            ));
        }
        for v in &vertices {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("polytope vertex".into()));
            }
        }
        Ok(FeasibleRegion::Polytope {
            vertices: vertices.into_iter().map(DVector::from_vec).collect(),
        })
    }

    /// Builds a ball with positive radius.
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() {
            return Err(Error::InvalidRegion(
                "ball center must have dimension >= 1".into(),
            ));
        }
        if center.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("ball center".into()));
        }
        if !radius.is_finite() || radius <= 0.0 {
            return Err(Error::InvalidRegion(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        Ok(FeasibleRegion::Ball {
            center: DVector::from_vec(center),
            radius,
        })
    }

    pub fn dim(&self) -> usize {
        match self {
            FeasibleRegion::Polytope { vertices } => vertices[0].len(),
            FeasibleRegion::Ball { center, .. } => center.len(),
        }
    }

    /// The default experiment region: `{w in [0,1]^2 : w1 + w2 >= 1}`, a
    /// stand-in covering polytope on which minimizing positive costs is
    /// non-trivial.
    pub fn default_covering() -> Self {
        FeasibleRegion::polytope(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]])
            .expect("static vertex list is valid")
    }
}

/// Result of the linear oracle: the minimizer and the optimal value
/// `z*(y) = y'w*(y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub minimizer: DVector<f64>,
    pub value: f64,
}

fn check_cost(region: &FeasibleRegion, y: &DVector<f64>) -> Result<()> {
    if y.len() != region.dim() {
        return Err(Error::DimensionMismatch {
            expected: region.dim(),
            got: y.len(),
        });
    }
    if y.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("cost vector".into()));
    }
    Ok(())
}

/// True when `a` precedes `b` lexicographically (total order; entries are
/// finite by region invariants).
fn lex_less(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    for (x, y) in a.iter().zip(b.iter()) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// Solves `min_{w in S} y'w` exactly.
///
/// Polytope: exhaustive scan over vertices, ties within [`TIE_TOL`] broken
/// toward the lexicographically smallest vertex. Ball: `center - r*y/|y|`
/// for `y != 0`, the center for `y = 0`.
pub fn solve_linear(region: &FeasibleRegion, y: &DVector<f64>) -> Result<OracleResult> {
    check_cost(region, y)?;
    match region {
        FeasibleRegion::Polytope { vertices } => {
            let mut best_val = f64::INFINITY;
            for v in vertices {
                let val = y.dot(v);
                if val < best_val {
                    best_val = val;
                }
            }
            let mut best: Option<&DVector<f64>> = None;
            for v in vertices {
                if y.dot(v) <= best_val + TIE_TOL {
                    match best {
                        Some(b) if !lex_less(v, b) => {}
                        _ => best = Some(v),
                    }
                }
            }
            let minimizer = best.expect("nonempty vertex list").clone();
            let value = y.dot(&minimizer);
            Ok(OracleResult { minimizer, value })
        }
        FeasibleRegion::Ball { center, radius } => {
            let norm = y.norm();
            if norm == 0.0 {
                Ok(OracleResult {
                    minimizer: center.clone(),
                    value: 0.0,
                })
            } else {
                let minimizer = center - y * (radius / norm);
                let value = y.dot(&minimizer);
                Ok(OracleResult { minimizer, value })
            }
        }
    }
}

/// Linear optimization gap `omega_S(y) = max_{w in S} y'w - min_{w in S} y'w`.
pub fn lin_opt_gap(region: &FeasibleRegion, y: &DVector<f64>) -> Result<f64> {
    let min = solve_linear(region, y)?.value;
    let max = -solve_linear(region, &(-y))?.value;
    Ok((max - min).max(0.0))
}

/// `omega_S(Y)`: supremum of the gap over a supplied sample of cost vectors.
pub fn lin_opt_gap_sup(region: &FeasibleRegion, ys: &[DVector<f64>]) -> Result<f64> {
    if ys.is_empty() {
        return Err(Error::InvalidParameter(
            "omega_S sup needs a nonempty sample".into(),
        ));
    }
    let mut sup = 0.0f64;
    for y in ys {
        sup = sup.max(lin_opt_gap(region, y)?);
    }
    Ok(sup)
}

/// Diameter `D_S = sup_{w,w' in S} |w - w'|`.
pub fn diameter(region: &FeasibleRegion) -> f64 {
    match region {
        FeasibleRegion::Polytope { vertices } => {
            let mut best = 0.0f64;
            for (i, a) in vertices.iter().enumerate() {
                for b in &vertices[i + 1..] {
                    best = best.max((a - b).norm());
                }
            }
            best
        }
        FeasibleRegion::Ball { radius, .. } => 2.0 * radius,
    }
}

/// Minimal directional width
/// `d_S = min_{|v|=1} (max_{w in S} v'w - min_{w in S} v'w)`.
///
/// For polytopes of dimension 1 this is the coordinate spread; for dimension
/// 2 the minimum is attained at an edge normal of the convex hull, so those
/// directions are scanned. A single vertex (or collinear set in 2-D) yields
/// 0, which downstream consumers treat as degenerate. For balls `d_S = 2r`.
pub fn width(region: &FeasibleRegion) -> Result<f64> {
    match region {
        FeasibleRegion::Ball { radius, .. } => Ok(2.0 * radius),
        FeasibleRegion::Polytope { vertices } => match region.dim() {
            1 => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for v in vertices {
                    lo = lo.min(v[0]);
                    hi = hi.max(v[0]);
                }
                Ok(hi - lo)
            }
            2 => {
                let hull = convex_hull_2d(vertices);
                if hull.len() < 2 {
                    return Ok(0.0);
                }
                let mut best = f64::INFINITY;
                for i in 0..hull.len() {
                    let p = &hull[i];
                    let q = &hull[(i + 1) % hull.len()];
                    let (ex, ey) = (q[0] - p[0], q[1] - p[1]);
                    let len = (ex * ex + ey * ey).sqrt();
                    if len == 0.0 {
                        continue;
                    }
                    let n = (-ey / len, ex / len);
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for v in vertices {
                        let s = n.0 * v[0] + n.1 * v[1];
                        lo = lo.min(s);
                        hi = hi.max(s);
                    }
                    best = best.min(hi - lo);
                    if hull.len() == 2 {
                        break; // degenerate hull: a single edge
                    }
                }
                Ok(if best.is_finite() { best } else { 0.0 })
            }
            d => Err(Error::UnsupportedDimension {
                dim: d,
                op: "polytope width",
            }),
        },
    }
}

/// Andrew monotone chain; returns the hull in counter-clockwise order.
fn convex_hull_2d(points: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p[0], p[1])).collect();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    pts.dedup();
    if pts.len() < 3 {
        return pts
            .into_iter()
            .map(|(x, y)| DVector::from_vec(vec![x, y]))
            .collect();
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() < 2 {
        // all points collinear: keep the two extremes
        lower = vec![pts[0], pts[pts.len() - 1]];
    }
    lower
        .into_iter()
        .map(|(x, y)| DVector::from_vec(vec![x, y]))
        .collect()
}

/// Polyhedral calibration constant
/// `Xi_S = (1 + 2*sqrt(3)*D_S/d_S)^(1-d)`, in (0, 1].
pub fn xi_constant(region: &FeasibleRegion) -> Result<f64> {
    match region {
        FeasibleRegion::Ball { .. } => Err(Error::WrongRegionKind {
            expected: "polytope",
        }),
        FeasibleRegion::Polytope { .. } => {
            let d_s = width(region)?;
            if d_s <= 0.0 {
                return Err(Error::DegenerateRegion(
                    "d_S = 0: width-zero polytope has no calibration constant".into(),
                ));
            }
            let d = region.dim() as f64;
            let ratio = 1.0 + 2.0 * 3.0f64.sqrt() * diameter(region) / d_s;
            Ok(ratio.powf(1.0 - d))
        }
    }
}
