//! Uniform lattices over analytic convex domains, cut-cell boundary handling
//! and finite-difference jets.
//!
//! Every interior node differentiates along the axis directions and, for the
//! mixed terms, along the face diagonals `e_i +- e_j`. Along each line the
//! stencil uses the two nearest samples; a sample that would fall outside the
//! domain is replaced by the exact crossing of the line with the boundary (at
//! fraction `theta` of the step). When a line is cut on one side only, one
//! more sample is taken on the other side so that both derivatives along the
//! line stay second order.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Env, Expr};
use crate::geometry::{GraphJet, SPACELIKE_MARGIN};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "shape")]
pub enum Shape {
    Ball { radius: f64 },
    Box { half_widths: Vec<f64> },
    Ellipsoid { semi_axes: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    #[serde(flatten)]
    pub shape: Shape,
    pub center: Vec<f64>,
}

impl Domain {
    pub fn new(shape: Shape, center: Vec<f64>) -> Result<Self> {
        let n = center.len();
        if !(2..=3).contains(&n) {
            return Err(Error::Domain(format!("grid dimension must be 2 or 3, got {n}")));
        }
        let sizes: Vec<f64> = match &shape {
            Shape::Ball { radius } => vec![*radius],
            Shape::Box { half_widths } => half_widths.clone(),
            Shape::Ellipsoid { semi_axes } => semi_axes.clone(),
        };
        if !matches!(shape, Shape::Ball { .. }) && sizes.len() != n {
            return Err(Error::Domain(format!("shape has {} size parameters, dimension is {n}", sizes.len())));
        }
        if sizes.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Domain(format!("size parameters must be positive, got {sizes:?}")));
        }
        Ok(Self { shape, center })
    }

    pub fn ball(n: usize, radius: f64) -> Result<Self> {
        Self::new(Shape::Ball { radius }, vec![0.0; n])
    }

    pub fn n(&self) -> usize {
        self.center.len()
    }

    pub fn half_extents(&self) -> Vec<f64> {
        match &self.shape {
            Shape::Ball { radius } => vec![*radius; self.n()],
            Shape::Box { half_widths } => half_widths.clone(),
            Shape::Ellipsoid { semi_axes } => semi_axes.clone(),
        }
    }

    pub fn diameter(&self) -> f64 {
        match &self.shape {
            Shape::Ball { radius } => 2.0 * radius,
            Shape::Box { half_widths } => 2.0 * half_widths.iter().map(|a| a * a).sum::<f64>().sqrt(),
            Shape::Ellipsoid { semi_axes } => 2.0 * semi_axes.iter().copied().fold(0.0, f64::max),
        }
    }

    /// Strictly inside.
    pub fn contains(&self, x: &[f64]) -> bool {
        let a = self.half_extents();
        match &self.shape {
            Shape::Box { .. } => x.iter().zip(&self.center).zip(&a).all(|((x, c), a)| (x - c).abs() < *a),
            _ => x.iter().zip(&self.center).zip(&a).map(|((x, c), a)| ((x - c) / a).powi(2)).sum::<f64>() < 1.0,
        }
    }

    /// Smallest `t > 0` with `x + t v` on the boundary, for `x` inside.
    pub fn exit_fraction(&self, x: &[f64], v: &[f64]) -> f64 {
        let a = self.half_extents();
        match &self.shape {
            Shape::Box { .. } => {
                let mut t = f64::INFINITY;
                for i in 0..x.len() {
                    if v[i] != 0.0 {
                        let wall = self.center[i] + v[i].signum() * a[i];
                        t = t.min((wall - x[i]) / v[i]);
                    }
                }
                t
            }
            _ => {
                let (mut qa, mut qb, mut qc) = (0.0, 0.0, -1.0);
                for i in 0..x.len() {
                    let y = (x[i] - self.center[i]) / a[i];
                    let d = v[i] / a[i];
                    qa += d * d;
                    qb += 2.0 * y * d;
                    qc += y * y;
                }
                let disc = (qb * qb - 4.0 * qa * qc).max(0.0).sqrt();
                if qb > 0.0 {
                    -2.0 * qc / (qb + disc)
                } else {
                    (-qb + disc) / (2.0 * qa)
                }
            }
        }
    }

    /// Euclidean distance from an interior point to the boundary.
    pub fn distance_to_boundary(&self, x: &[f64]) -> f64 {
        let a = self.half_extents();
        let y: Vec<f64> = x.iter().zip(&self.center).map(|(x, c)| (x - c).abs()).collect();
        match &self.shape {
            Shape::Ball { radius } => radius - y.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Shape::Box { .. } => y.iter().zip(&a).map(|(y, a)| a - y).fold(f64::INFINITY, f64::min),
            Shape::Ellipsoid { .. } => ellipsoid_distance(&a, &y),
        }
    }

    /// Range of the principal curvatures of the boundary.
    pub fn boundary_curvatures(&self) -> Result<BoundaryCurvatures> {
        match &self.shape {
            Shape::Ball { radius } => Ok(BoundaryCurvatures { n: self.n(), min: 1.0 / radius, max: 1.0 / radius }),
            Shape::Ellipsoid { semi_axes } => {
                // extremes sit at the vertices: a_i / a_j^2
                let lo = semi_axes.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = semi_axes.iter().copied().fold(0.0, f64::max);
                Ok(BoundaryCurvatures { n: self.n(), min: lo / (hi * hi), max: hi / (lo * lo) })
            }
            Shape::Box { .. } => Err(Error::UnsupportedShape(
                "box boundaries are not smooth; boundary curvature admissibility is undefined".into(),
            )),
        }
    }
}

/// Closest-point distance from `y` (first orthant, inside) to the ellipsoid
/// with semi-axes `a`. The closest point is `a_i^2 y_i / (a_i^2 + t)` for the
/// root `t` in `(-min a^2, 0]` of `sum (a_i y_i / (a_i^2 + t))^2 = 1`.
fn ellipsoid_distance(a: &[f64], y: &[f64]) -> f64 {
    let amin2 = a.iter().map(|v| v * v).fold(f64::INFINITY, f64::min);
    let close = |t: f64| -> Vec<f64> { a.iter().zip(y).map(|(a, y)| a * a * y / (a * a + t)).collect() };
    let f = |t: f64| -> f64 { a.iter().zip(y).map(|(a, y)| (a * y / (a * a + t)).powi(2)).sum::<f64>() - 1.0 };
    let on_min_axes = |yi: f64, ai: f64| (ai * ai - amin2).abs() <= 1e-14 * amin2 && yi == 0.0;
    let degenerate = a.iter().zip(y).filter(|(ai, _)| (*ai * *ai - amin2).abs() <= 1e-14 * amin2).all(|(ai, yi)| on_min_axes(*yi, *ai));
    let lo = -amin2;
    if degenerate {
        // limit of f at t -> -amin^2 from the non-minimal axes only
        let limit: f64 = a
            .iter()
            .zip(y)
            .filter(|(ai, _)| (*ai * *ai - amin2).abs() > 1e-14 * amin2)
            .map(|(a, y)| (a * y / (a * a - amin2)).powi(2))
            .sum::<f64>()
            - 1.0;
        if limit <= 0.0 {
            let mut p: Vec<f64> = Vec::with_capacity(a.len());
            let mut used = 0.0;
            for (ai, yi) in a.iter().zip(y) {
                if (ai * ai - amin2).abs() > 1e-14 * amin2 {
                    let v = ai * ai * yi / (ai * ai - amin2);
                    used += (v / ai).powi(2);
                    p.push(v);
                } else {
                    p.push(f64::NAN);
                }
            }
            let rest = (amin2 * (1.0 - used)).max(0.0).sqrt();
            let mut first = true;
            for v in p.iter_mut() {
                if v.is_nan() {
                    *v = if first { rest } else { 0.0 };
                    first = false;
                }
            }
            return p.iter().zip(y).map(|(p, y)| (p - y).powi(2)).sum::<f64>().sqrt();
        }
    }
    let (mut left, mut right) = (lo, 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (left + right);
        if mid <= lo {
            break;
        }
        if f(mid) > 0.0 {
            left = mid;
        } else {
            right = mid;
        }
    }
    let p = close(0.5 * (left + right));
    p.iter().zip(y).map(|(p, y)| (p - y).powi(2)).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCurvatures {
    pub n: usize,
    pub min: f64,
    pub max: f64,
}

impl BoundaryCurvatures {
    pub fn convex(&self) -> bool {
        self.min >= 0.0
    }

    /// At least `k - 1` positive boundary curvatures everywhere. The smooth
    /// shapes here have all of them positive, so the range decides.
    pub fn admissible_for(&self, k: usize) -> bool {
        k <= self.n && (k <= 1 || self.min > 0.0)
    }
}

/// Boundary data `phi(x)`.
#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryData {
    Affine { slope: Vec<f64>, offset: f64 },
    Expr(Expr),
}

impl BoundaryData {
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match self {
            BoundaryData::Affine { slope, offset } => Ok(offset + slope.iter().zip(x).map(|(a, x)| a * x).sum::<f64>()),
            BoundaryData::Expr(e) => e.eval(&Env::new(x, 0.0, &[0.0; 3][..x.len()])),
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            BoundaryData::Affine { slope, .. } => Ok(slope.clone()),
            BoundaryData::Expr(e) => Ok(e.eval_with_partials(&Env::new(x, 0.0, &[0.0; 3][..x.len()]))?.dx),
        }
    }

    pub fn as_affine(&self) -> Option<(&[f64], f64)> {
        match self {
            BoundaryData::Affine { slope, offset } => Some((slope, *offset)),
            BoundaryData::Expr(_) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeClass {
    Interior,
    /// Unknown whose stencil reaches a boundary crossing.
    BoundaryLayer,
    Exterior,
}

/// Where a stencil reads a value from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Sample {
    Node(usize),
    Cut(usize),
}

/// Crossing of a stencil line with the boundary.
#[derive(Clone, Debug)]
pub struct Cut {
    pub x: Vec<f64>,
    pub node: usize,
    pub theta: f64,
}

/// Linear maps from nodal values to `Du` and `D^2u` at one node.
#[derive(Clone, Debug, Default)]
pub struct Stencil {
    pub du: Vec<Vec<(Sample, f64)>>,
    /// Row-major `n x n`, symmetric.
    pub d2u: Vec<Vec<(Sample, f64)>>,
}

#[derive(Clone, Debug)]
pub struct Node {
    pub index: Vec<i64>,
    pub x: Vec<f64>,
    pub class: NodeClass,
}

pub struct Grid {
    pub domain: Domain,
    pub h: f64,
    /// Lattice points per axis.
    pub dims: Vec<usize>,
    pub nodes: Vec<Node>,
    pub cuts: Vec<Cut>,
    /// `phi` at every cut.
    pub boundary_values: Vec<f64>,
    lattice: Vec<Option<usize>>,
    stencils: Vec<Stencil>,
    row_weights: Vec<f64>,
}

/// Lattice points closer to the boundary than this fraction of a step are
/// not unknowns.
const MIN_THETA: f64 = 1e-6;

/// Finite-difference weights at 0 for derivatives 0..=2 on arbitrary points.
fn fornberg(z: &[f64]) -> [Vec<f64>; 3] {
    let m = z.len();
    let mut c = vec![[0.0f64; 3]; m];
    c[0][0] = 1.0;
    let mut c1 = 1.0;
    let mut c4 = z[0];
    for i in 1..m {
        let mn = i.min(2);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = z[i];
        for j in 0..i {
            let c3 = z[i] - z[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] *= c4 / c3;
        }
        c1 = c2;
    }
    [
        c.iter().map(|r| r[0]).collect(),
        c.iter().map(|r| r[1]).collect(),
        c.iter().map(|r| r[2]).collect(),
    ]
}

fn add_into(dst: &mut Vec<(Sample, f64)>, src: &[(Sample, f64)], scale: f64) {
    for &(s, w) in src {
        match dst.iter_mut().find(|(t, _)| *t == s) {
            Some(entry) => entry.1 += scale * w,
            None => dst.push((s, scale * w)),
        }
    }
}

impl Grid {
    /// Lattice of spacing `h` over the bounding box, with `phi` sampled at every
    /// boundary crossing.
    pub fn build(domain: Domain, h: f64, phi: &BoundaryData) -> Result<Arc<Grid>> {
        let n = domain.n();
        let ext = domain.half_extents();
        let smallest = ext.iter().copied().fold(f64::INFINITY, f64::min);
        if !(h > 0.0) || h >= smallest / 4.0 {
            return Err(Error::Resolution(format!(
                "spacing h = {h} must be positive and below a quarter of the smallest half-extent {smallest}"
            )));
        }
        let mut half_counts = Vec::with_capacity(n);
        for &e in &ext {
            let ratio = e / h;
            let rounded = ratio.round();
            if (ratio - rounded).abs() > 1e-9 * ratio {
                return Err(Error::Resolution(format!("h = {h} does not divide the half-extent {e} evenly")));
            }
            half_counts.push(rounded as i64);
        }
        let dims: Vec<usize> = half_counts.iter().map(|c| (2 * c + 1) as usize).collect();
        let total: usize = dims.iter().product();
        let coord = |m: &[i64]| -> Vec<f64> {
            (0..n).map(|i| domain.center[i] + h * (m[i] - half_counts[i]) as f64).collect()
        };
        let unflatten = |mut flat: usize| -> Vec<i64> {
            let mut m = vec![0i64; n];
            for i in (0..n).rev() {
                m[i] = (flat % dims[i]) as i64;
                flat /= dims[i];
            }
            m
        };
        let flatten = |m: &[i64]| -> Option<usize> {
            let mut flat = 0usize;
            for i in 0..n {
                if m[i] < 0 || m[i] >= dims[i] as i64 {
                    return None;
                }
                flat = flat * dims[i] + m[i] as usize;
            }
            Some(flat)
        };

        // axis directions first, then face diagonals (i, j, +1) and (i, j, -1)
        let mut directions: Vec<Vec<i64>> = Vec::new();
        for i in 0..n {
            let mut d = vec![0; n];
            d[i] = 1;
            directions.push(d);
        }
        let mut diagonals = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                for s in [1i64, -1] {
                    let mut d = vec![0; n];
                    d[i] = 1;
                    d[j] = s;
                    diagonals.push((i, j, s));
                    directions.push(d);
                }
            }
        }

        let mut lattice = vec![None; total];
        let mut nodes = Vec::new();
        for flat in 0..total {
            let m = unflatten(flat);
            let x = coord(&m);
            // points a hair inside the boundary count as boundary points
            let clear = domain.contains(&x)
                && directions.iter().all(|d| {
                    [1.0, -1.0].iter().all(|sign| {
                        let v: Vec<f64> = d.iter().map(|&di| sign * di as f64 * h).collect();
                        domain.exit_fraction(&x, &v) >= MIN_THETA
                    })
                });
            if clear {
                lattice[flat] = Some(nodes.len());
                nodes.push(Node { index: m, x, class: NodeClass::Interior });
            }
        }
        if nodes.is_empty() {
            return Err(Error::Resolution("no lattice point falls inside the domain".into()));
        }

        let mut cuts = Vec::new();
        let mut stencils = Vec::with_capacity(nodes.len());
        for idx in 0..nodes.len() {
            let m = nodes[idx].index.clone();
            let x = nodes[idx].x.clone();
            let mut touched_boundary = false;
            let mut lines = Vec::with_capacity(directions.len());
            for d in &directions {
                // sample along x + s h d, s in lattice steps
                let mut pts: Vec<(f64, Sample)> = vec![(0.0, Sample::Node(idx))];
                let mut cut_side = [false; 2];
                for (side, sign) in [1i64, -1].into_iter().enumerate() {
                    let mm: Vec<i64> = (0..n).map(|i| m[i] + sign * d[i]).collect();
                    match flatten(&mm).and_then(|f| lattice[f]) {
                        Some(j) => pts.push((sign as f64, Sample::Node(j))),
                        None => {
                            let v: Vec<f64> = d.iter().map(|&di| (sign * di) as f64 * h).collect();
                            let theta = domain.exit_fraction(&x, &v).clamp(MIN_THETA, 1.0);
                            let cx: Vec<f64> = (0..n).map(|i| x[i] + theta * v[i]).collect();
                            cuts.push(Cut { x: cx, node: idx, theta });
                            pts.push((sign as f64 * theta, Sample::Cut(cuts.len() - 1)));
                            cut_side[side] = theta < 1.0;
                            touched_boundary = true;
                        }
                    }
                }
                if cut_side[0] != cut_side[1] {
                    // extend on the uncut side
                    let sign: i64 = if cut_side[0] { -1 } else { 1 };
                    let mm: Vec<i64> = (0..n).map(|i| m[i] + 2 * sign * d[i]).collect();
                    match flatten(&mm).and_then(|f| lattice[f]) {
                        Some(j) => pts.push((2.0 * sign as f64, Sample::Node(j))),
                        None => {
                            let base: Vec<f64> = (0..n).map(|i| x[i] + (sign * d[i]) as f64 * h).collect();
                            let v: Vec<f64> = d.iter().map(|&di| (sign * di) as f64 * h).collect();
                            let theta = domain.exit_fraction(&base, &v).clamp(MIN_THETA, 1.0);
                            let cx: Vec<f64> = (0..n).map(|i| base[i] + theta * v[i]).collect();
                            cuts.push(Cut { x: cx, node: idx, theta });
                            pts.push((sign as f64 * (1.0 + theta), Sample::Cut(cuts.len() - 1)));
                        }
                    }
                }
                let z: Vec<f64> = pts.iter().map(|p| p.0).collect();
                let [_, w1, w2] = fornberg(&z);
                let first: Vec<(Sample, f64)> = pts.iter().zip(&w1).map(|(p, w)| (p.1, w / h)).collect();
                let second: Vec<(Sample, f64)> = pts.iter().zip(&w2).map(|(p, w)| (p.1, w / (h * h))).collect();
                lines.push((first, second));
            }
            let mut st = Stencil { du: vec![Vec::new(); n], d2u: vec![Vec::new(); n * n] };
            for i in 0..n {
                add_into(&mut st.du[i], &lines[i].0, 1.0);
                add_into(&mut st.d2u[i * n + i], &lines[i].1, 1.0);
            }
            for (q, &(i, j, s)) in diagonals.iter().enumerate() {
                // d^T D2u d = u_ii + 2 s u_ij + u_jj, so u_ij = (D_+ - D_-) / 4
                let line = &lines[n + q].1;
                let mut mixed = Vec::new();
                add_into(&mut mixed, line, s as f64 * 0.25);
                add_into(&mut st.d2u[i * n + j], &mixed, 1.0);
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    let copy = st.d2u[i * n + j].clone();
                    st.d2u[j * n + i] = copy;
                }
            }
            if touched_boundary {
                nodes[idx].class = NodeClass::BoundaryLayer;
            }
            stencils.push(st);
        }
        let boundary_values = cuts.iter().map(|c| phi.eval(&c.x)).collect::<Result<Vec<_>>>()?;
        let interior = 2.0 * n as f64 / (h * h);
        let row_weights = stencils
            .iter()
            .enumerate()
            .map(|(idx, st)| {
                let centre: f64 = (0..n)
                    .map(|i| st.d2u[i * n + i].iter().filter(|(s, _)| *s == Sample::Node(idx)).map(|(_, w)| w.abs()).sum::<f64>())
                    .sum();
                (interior / centre).min(1.0)
            })
            .collect();
        Ok(Arc::new(Grid { domain, h, dims, nodes, cuts, boundary_values, lattice, stencils, row_weights }))
    }

    pub fn n(&self) -> usize {
        self.domain.n()
    }

    pub fn unknowns(&self) -> usize {
        self.nodes.len()
    }

    pub fn stencil(&self, node: usize) -> &Stencil {
        &self.stencils[node]
    }

    /// Ratio of the interior centre weight of the pure second derivatives to
    /// this node's; 1 away from the boundary, about `theta` next to a short arm.
    pub fn row_weight(&self, node: usize) -> f64 {
        self.row_weights[node]
    }

    pub fn lattice_class(&self, m: &[i64]) -> NodeClass {
        let mut flat = 0usize;
        for i in 0..self.n() {
            if m[i] < 0 || m[i] >= self.dims[i] as i64 {
                return NodeClass::Exterior;
            }
            flat = flat * self.dims[i] + m[i] as usize;
        }
        match self.lattice[flat] {
            Some(j) => self.nodes[j].class,
            None => NodeClass::Exterior,
        }
    }

    pub fn node_at(&self, m: &[i64]) -> Option<usize> {
        let mut flat = 0usize;
        for i in 0..self.n() {
            if m[i] < 0 || m[i] >= self.dims[i] as i64 {
                return None;
            }
            flat = flat * self.dims[i] + m[i] as usize;
        }
        self.lattice[flat]
    }

    /// `phi` at all cuts for other boundary data.
    pub fn sample_boundary(&self, phi: &BoundaryData) -> Result<Vec<f64>> {
        self.cuts.iter().map(|c| phi.eval(&c.x)).collect()
    }

    /// Derivative weights sum to zero, so applying them to differences from the
    /// centre value removes the rounding carried by large cut-cell weights.
    fn apply(&self, combo: &[(Sample, f64)], values: &[f64], boundary: &[f64], centre: f64) -> f64 {
        combo
            .iter()
            .map(|&(s, w)| {
                w * match s {
                    Sample::Node(j) => values[j] - centre,
                    Sample::Cut(c) => boundary[c] - centre,
                }
            })
            .sum()
    }

    /// Discrete `(Du, D^2u)` at an unknown node.
    pub fn derivatives(&self, values: &[f64], boundary: &[f64], node: usize) -> (Vec<f64>, DMatrix<f64>) {
        let n = self.n();
        let st = &self.stencils[node];
        let c = values[node];
        let du = (0..n).map(|i| self.apply(&st.du[i], values, boundary, c)).collect();
        let mut d2u = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = self.apply(&st.d2u[i * n + j], values, boundary, c);
                d2u[(i, j)] = v;
                d2u[(j, i)] = v;
            }
        }
        (du, d2u)
    }

    pub fn jet(&self, values: &[f64], boundary: &[f64], node: usize) -> Result<GraphJet> {
        let (du, d2u) = self.derivatives(values, boundary, node);
        match GraphJet::with_margin(values[node], du, d2u, SPACELIKE_MARGIN) {
            Ok(j) => Ok(j.at(self.nodes[node].x.clone())),
            Err(Error::Spacelike { gradient_norm, .. }) => {
                Err(Error::Spacelike { gradient_norm, node: Some(self.nodes[node].index.clone()) })
            }
            Err(e) => Err(e),
        }
    }

    pub fn write_classification(&self, path: &Path) -> Result<()> {
        let n = self.n();
        let mut out = String::new();
        out.push_str(&csv_header(n, "class"));
        let total: usize = self.dims.iter().product();
        for flat in 0..total {
            let mut m = vec![0i64; n];
            let mut f = flat;
            for i in (0..n).rev() {
                m[i] = (f % self.dims[i]) as i64;
                f /= self.dims[i];
            }
            let half: Vec<i64> = self.dims.iter().map(|d| (*d as i64 - 1) / 2).collect();
            let x: Vec<f64> = (0..n).map(|i| self.domain.center[i] + self.h * (m[i] - half[i]) as f64).collect();
            let class = match self.lattice_class(&m) {
                NodeClass::Interior => "interior",
                NodeClass::BoundaryLayer => "boundary_layer",
                NodeClass::Exterior => "exterior",
            };
            push_row(&mut out, &m, &x, class);
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

fn csv_header(n: usize, last: &str) -> String {
    let idx = ["i", "j", "k"];
    let mut s = String::new();
    for name in &idx[..n] {
        s.push_str(name);
        s.push(',');
    }
    for i in 0..n {
        let _ = write!(s, "x{},", i + 1);
    }
    s.push_str(last);
    s.push('\n');
    s
}

fn push_row(out: &mut String, m: &[i64], x: &[f64], last: impl std::fmt::Display) {
    for v in m {
        let _ = write!(out, "{v},");
    }
    for v in x {
        let _ = write!(out, "{v:?},");
    }
    let _ = writeln!(out, "{last}");
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid")
            .field("domain", &self.domain)
            .field("h", &self.h)
            .field("dims", &self.dims)
            .field("unknowns", &self.nodes.len())
            .field("cuts", &self.cuts.len())
            .finish()
    }
}

/// Nodal values on the unknowns of a grid, plus the values the field takes at
/// the boundary crossings (by default the grid's sampled `phi`).
#[derive(Clone)]
pub struct Field {
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
    pub boundary: Vec<f64>,
}

impl std::fmt::Debug for Field {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        f.debug_struct("Field").field("grid", &self.grid).field("range", &(lo, hi)).finish()
    }
}

impl Field {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.unknowns() {
            return Err(Error::Domain(format!("field has {} values, grid has {} nodes", values.len(), grid.unknowns())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("field value at node {:?} is not finite", grid.nodes[i].index)));
        }
        let boundary = grid.boundary_values.clone();
        Ok(Self { grid, values, boundary })
    }

    /// Replace the values read at the boundary crossings.
    pub fn with_boundary(mut self, boundary: Vec<f64>) -> Result<Self> {
        if boundary.len() != self.grid.cuts.len() || boundary.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("boundary vector does not match the grid cuts".into()));
        }
        self.boundary = boundary;
        Ok(self)
    }

    /// Field and boundary values of an analytic function.
    pub fn sample(grid: Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let boundary = grid.cuts.iter().map(|c| f(&c.x)).collect();
        Self::from_fn(grid, f)?.with_boundary(boundary)
    }

    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = grid.nodes.iter().map(|nd| f(&nd.x)).collect();
        Self::new(grid, values)
    }

    pub fn try_from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> Result<f64>) -> Result<Self> {
        let values = grid.nodes.iter().map(|nd| f(&nd.x)).collect::<Result<Vec<_>>>()?;
        Self::new(grid, values)
    }

    /// Jet at an unknown node.
    pub fn fd_jet(&self, node: usize) -> Result<GraphJet> {
        self.grid.jet(&self.values, &self.boundary, node)
    }

    pub fn max_abs_diff(&self, other: &Field) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let n = self.grid.n();
        let mut out = csv_header(n, "value");
        for (nd, v) in self.grid.nodes.iter().zip(&self.values) {
            push_row(&mut out, &nd.index, &nd.x, format!("{v:?}"));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    /// Read values written by [`Field::write_csv`]; every node of `grid` must appear once.
    pub fn read_csv(grid: Arc<Grid>, path: &Path) -> Result<Self> {
        let n = grid.n();
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut values = vec![f64::NAN; grid.unknowns()];
        let mut seen = 0usize;
        for (line_no, line) in file.lines().enumerate() {
            let line = line?;
            if line_no == 0 || line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 2 * n + 1 {
                return Err(Error::Config(format!("line {}: expected {} columns", line_no + 1, 2 * n + 1)));
            }
            let idx = cols[..n]
                .iter()
                .map(|c| c.trim().parse::<i64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Config(format!("line {}: {e}", line_no + 1)))?;
            let value: f64 =
                cols[2 * n].trim().parse().map_err(|e| Error::Config(format!("line {}: {e}", line_no + 1)))?;
            let node = grid
                .node_at(&idx)
                .ok_or_else(|| Error::Config(format!("line {}: node {idx:?} is not on the grid", line_no + 1)))?;
            if values[node].is_nan() {
                seen += 1;
            }
            values[node] = value;
        }
        if seen != grid.unknowns() {
            return Err(Error::Config(format!("solution has {seen} nodes, grid has {}", grid.unknowns())));
        }
        Self::new(grid, values)
    }
}
