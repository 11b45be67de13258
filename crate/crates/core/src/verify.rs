//! Numerical checks of the a priori estimates on computed or sampled data.
//!
//! The constants in the estimates depend on norms that can only be sampled, so
//! every report lists the sampled constants it used. Reports are
//! deterministic given their inputs and, where sampling is used, the seed.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{min_u_derivative, Env};
use crate::geometry::{curvature_matrix, frame};
use crate::grid::{BoundaryData, Field, NodeClass};
use crate::solver::Problem;
use crate::symfun::{
    in_gamma, maclaurin_chain, sigma, sigma_grad, sigma_of_matrix_unchecked, sigma_raw, CurvatureVector,
};

/// Relative slack allowed on the sub/supersolution hypotheses of the
/// comparison check. They are measured on the row-weighted residual.
pub const HYPOTHESIS_TOL: f64 = 1e-8;

/// Relative tolerance of the symmetric-function identities.
pub const IDENTITY_TOL: f64 = 1e-12;

/// Largest relative change of a curvature quantity under one refinement.
pub const REFINEMENT_TOL: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Passed,
    Failed,
    /// The conclusion was evaluated but the inputs do not satisfy the
    /// hypotheses, so a violation would not contradict the estimate.
    HypothesesNotMet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    /// Lattice index of the node, or `[i]` for the `i`-th synthetic sample.
    pub node: Vec<i64>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub name: String,
    /// `margin >= -tolerance`.
    pub passed: bool,
    pub status: Status,
    /// Signed slack, positive when the inequality holds.
    pub margin: f64,
    pub tolerance: f64,
    pub parameters: BTreeMap<String, f64>,
    pub witnesses: Vec<Witness>,
    pub notes: Vec<String>,
}

impl EstimateReport {
    fn new(name: &str, margin: f64, tolerance: f64) -> Self {
        let passed = margin >= -tolerance;
        Self {
            name: name.to_string(),
            passed,
            status: if passed { Status::Passed } else { Status::Failed },
            margin,
            tolerance,
            parameters: BTreeMap::new(),
            witnesses: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn param(&mut self, key: &str, value: f64) -> &mut Self {
        self.parameters.insert(key.to_string(), value);
        self
    }

    fn witness(&mut self, node: Vec<i64>, value: f64) -> &mut Self {
        self.witnesses.push(Witness { node, value });
        self
    }

    fn hypotheses_not_met(&mut self, why: String) {
        self.status = Status::HypothesesNotMet;
        self.notes.push(why);
    }

    /// Passed, or not applicable because the hypotheses fail.
    pub fn acceptable(&self) -> bool {
        self.status != Status::Failed
    }
}

fn check_same_grid(a: &Field, b: &Field) -> Result<()> {
    if a.values.len() != b.values.len() || a.boundary.len() != b.boundary.len() {
        return Err(Error::Config(format!("fields have {} and {} nodes", a.values.len(), b.values.len())));
    }
    Ok(())
}

/// `(position, value)` of the smallest entry.
fn argmin(values: impl Iterator<Item = f64>) -> (usize, f64) {
    values.enumerate().fold((0, f64::INFINITY), |best, (i, v)| if v < best.1 { (i, v) } else { best })
}

/// Row-weighted `sigma_k[v] - psi(x, v, Dv)` and the smallest cone margin, or
/// a description of the first node where `v` is not admissible.
fn weighted_residual(problem: &Problem, v: &Field) -> std::result::Result<(Vec<f64>, f64, f64), String> {
    let grid = &problem.grid;
    let mut out = Vec::with_capacity(grid.unknowns());
    let mut cone = f64::INFINITY;
    let mut scale: f64 = 0.0;
    for i in 0..grid.unknowns() {
        let jet = v.fd_jet(i).map_err(|e| e.to_string())?;
        let (_, _, a) = curvature_matrix(&jet.du, &jet.d2u);
        let sig: Vec<f64> = (1..=problem.k).map(|j| sigma_of_matrix_unchecked(j, &a)).collect();
        cone = cone.min(sig.iter().copied().fold(f64::INFINITY, f64::min));
        let du: Vec<f64> = jet.du.iter().copied().collect();
        let psi = problem.psi.eval(&Env::new(&grid.nodes[i].x, v.values[i], &du)).map_err(|e| e.to_string())?;
        scale = scale.max(psi.abs());
        out.push(grid.row_weight(i) * (sig[problem.k - 1] - psi));
    }
    let scale = scale.max(f64::MIN_POSITIVE);
    Ok((out.iter().map(|r| r / scale).collect(), cone, scale))
}

/// Comparison principle: if `u` is an admissible subsolution, `v` a spacelike
/// supersolution, `u <= v` on the boundary and `psi_u >= 0`, then `u <= v`.
/// The margin is `min (v - u)` over the nodes.
pub fn comparison_check(problem: &Problem, u: &Field, v: &Field, tol: f64) -> Result<EstimateReport> {
    check_same_grid(u, v)?;
    let grid = &problem.grid;
    let (at, margin) = argmin(v.values.iter().zip(&u.values).map(|(a, b)| a - b));
    let mut rep = EstimateReport::new("comparison", margin, tol);
    rep.witness(grid.nodes[at].index.clone(), margin);
    rep.param("k", problem.k as f64).param("hypothesis_tol", HYPOTHESIS_TOL);

    let mut unmet = Vec::new();
    match weighted_residual(problem, u) {
        Ok((r, cone, _)) => {
            rep.param("cone_margin_u", cone);
            if !(cone > 0.0) {
                unmet.push(format!("u is not {}-admissible (min sigma_j = {cone:.3e})", problem.k));
            }
            let (i, worst) = argmin(r.iter().copied());
            rep.param("sub_slack", worst);
            if worst < -HYPOTHESIS_TOL {
                unmet.push(format!("sigma_k[u] < psi at node {:?} (weighted {worst:.3e})", grid.nodes[i].index));
            }
        }
        Err(e) => unmet.push(format!("u: {e}")),
    }
    match weighted_residual(problem, v) {
        Ok((r, _, _)) => {
            let (i, worst) = argmin(r.iter().map(|x| -x));
            rep.param("super_slack", worst);
            if worst < -HYPOTHESIS_TOL {
                unmet.push(format!("sigma_k[v] > psi at node {:?} (weighted {:.3e})", grid.nodes[i].index, -worst));
            }
        }
        Err(e) => unmet.push(format!("v: {e}")),
    }
    let bscale = u.boundary.iter().chain(&v.boundary).fold(1.0_f64, |m, x| m.max(x.abs()));
    let bgap = v.boundary.iter().zip(&u.boundary).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min);
    rep.param("boundary_gap", bgap);
    if bgap < -tol * bscale {
        unmet.push(format!("u > v on the boundary by {:.3e}", -bgap));
    }
    let min_du = min_u_derivative(&problem.psi, &problem.sample_region(0.99))?;
    rep.param("sampled_min_psi_u", min_du);
    if min_du < 0.0 {
        unmet.push(format!("psi is not nondecreasing in u (sampled min psi_u = {min_du:.3e})"));
    }
    if problem.psi.depends_on_p() {
        rep.notes.push("psi depends on Du; the comparison principle is stated for psi(x, u)".into());
    }
    if !unmet.is_empty() {
        rep.hypotheses_not_met(unmet.join("; "));
    }
    Ok(rep)
}

/// `sub <= u <= sup` at every node. The margin is the smaller of
/// `min (u - sub)` and `min (sup - u)`.
pub fn c0_sandwich(u: &Field, sub: &Field, sup: &Field, tol: f64) -> Result<EstimateReport> {
    check_same_grid(u, sub)?;
    check_same_grid(u, sup)?;
    let (i_lo, lower) = argmin(u.values.iter().zip(&sub.values).map(|(a, b)| a - b));
    let (i_hi, upper) = argmin(sup.values.iter().zip(&u.values).map(|(a, b)| a - b));
    let mut rep = EstimateReport::new("c0_sandwich", lower.min(upper), tol);
    rep.param("lower_margin", lower).param("upper_margin", upper);
    rep.witness(u.grid.nodes[i_lo].index.clone(), lower);
    rep.witness(u.grid.nodes[i_hi].index.clone(), upper);
    Ok(rep)
}

/// Global gradient estimate: with `B = sup |D psi| / (k inf psi) + 1e-6`,
/// `sup w~ <= (sup_{boundary} w~) exp[B (2 sup_{boundary} |phi| + diam)]`,
/// `w~ = 1 / sqrt(1 - |Du|^2)`.
///
/// The `psi` norms are sampled at the nodes over the realized `u` range with
/// the realized gradients in the `Du` slot. Boundary-layer nodes stand in for
/// the boundary.
pub fn gradient_bound_report(problem: &Problem, u: &Field) -> Result<EstimateReport> {
    let grid = &problem.grid;
    let k = problem.k as f64;
    let mut grads = Vec::with_capacity(grid.unknowns());
    for i in 0..grid.unknowns() {
        grads.push(u.fd_jet(i)?.du.iter().copied().collect::<Vec<f64>>());
    }
    let norms: Vec<f64> = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let (u_lo, u_hi) = u.values.iter().chain(&u.boundary).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let mut inf_psi = f64::INFINITY;
    let mut sup_grad: f64 = 0.0;
    let levels = 5;
    for (i, g) in grads.iter().enumerate() {
        for j in 0..levels {
            let z = u_lo + (u_hi - u_lo) * j as f64 / (levels - 1) as f64;
            for z in [z, u.values[i]] {
                let part = problem.psi.eval_with_partials(&Env::new(&grid.nodes[i].x, z, g))?;
                inf_psi = inf_psi.min(part.value);
                sup_grad = sup_grad.max(part.gradient_norm());
            }
        }
    }
    let b = sup_grad / (k * inf_psi) + 1e-6;
    let tilt = |g: f64| 1.0 / (1.0 - g * g).sqrt();
    let (mut sup_all, mut at_all) = (0.0_f64, 0);
    let (mut sup_bd, mut at_bd) = (0.0_f64, 0);
    for (i, &g) in norms.iter().enumerate() {
        if g > sup_all {
            sup_all = g;
            at_all = i;
        }
        if grid.nodes[i].class == NodeClass::BoundaryLayer && g > sup_bd {
            sup_bd = g;
            at_bd = i;
        }
    }
    let sup_phi = u.boundary.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let diam = grid.domain.diameter();
    let bound = tilt(sup_bd) * (b * (2.0 * sup_phi + diam)).exp();
    let mut rep = EstimateReport::new("gradient_bound", bound - tilt(sup_all), 0.0);
    rep.param("B", b)
        .param("sup_abs_dpsi", sup_grad)
        .param("inf_psi", inf_psi)
        .param("sup_tilt", tilt(sup_all))
        .param("sup_boundary_tilt", tilt(sup_bd))
        .param("bound", bound)
        .param("theta", 1.0 - sup_all)
        .param("theta_0", 1.0 - sup_bd)
        .param("sup_boundary_abs_phi", sup_phi)
        .param("diameter", diam);
    rep.witness(grid.nodes[at_all].index.clone(), tilt(sup_all));
    rep.witness(grid.nodes[at_bd].index.clone(), tilt(sup_bd));
    rep.notes.push("the Du slot of psi is sampled at the realized gradients only".into());
    let mut unmet = Vec::new();
    if !(inf_psi > 0.0) {
        unmet.push(format!("psi is not positive (sampled inf = {inf_psi:.3e})"));
    }
    let min_du = min_u_derivative(&problem.psi, &problem.sample_region(0.99))?;
    rep.param("sampled_min_psi_u", min_du);
    if min_du < 0.0 {
        unmet.push(format!("psi is not nondecreasing in u (sampled min psi_u = {min_du:.3e})"));
    }
    if problem.psi.depends_on_p() {
        unmet.push("psi depends on Du; the gradient estimate is stated for psi(x, u)".into());
    }
    if !unmet.is_empty() {
        rep.hypotheses_not_met(unmet.join("; "));
    }
    Ok(rep)
}

/// Curvature quantities of one solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureSummary {
    pub h: f64,
    pub inset: f64,
    pub beta: f64,
    /// `sup kappa_max` over nodes at distance at least `inset` from the boundary.
    pub kappa_interior: f64,
    /// `sup kappa_max` over the boundary-layer nodes.
    pub kappa_boundary: f64,
    pub kappa_all: f64,
    /// `sup kappa_max / (1 + kappa_boundary)`.
    pub ratio: f64,
    /// `sup eta^beta kappa_max` with `eta = phi - u`, present when `phi` is
    /// affine and `eta > 0` at every node.
    pub pogorelov: Option<f64>,
    pub min_eta: Option<f64>,
    /// `K = max(0, -min kappa_i)`.
    pub semiconvexity: f64,
    pub interior_nodes: usize,
    pub notes: Vec<String>,
}

pub fn curvature_summary(u: &Field, phi: &BoundaryData, inset: f64, beta: f64) -> Result<CurvatureSummary> {
    let grid = &u.grid;
    let mut s = CurvatureSummary {
        h: grid.h,
        inset,
        beta,
        kappa_interior: f64::NEG_INFINITY,
        kappa_boundary: f64::NEG_INFINITY,
        kappa_all: f64::NEG_INFINITY,
        ratio: 0.0,
        pogorelov: None,
        min_eta: None,
        semiconvexity: 0.0,
        interior_nodes: 0,
        notes: Vec::new(),
    };
    let affine = phi.as_affine().is_some();
    let mut pog = f64::NEG_INFINITY;
    let mut min_eta = f64::INFINITY;
    for i in 0..grid.unknowns() {
        let node = &grid.nodes[i];
        let kappa = frame(&u.fd_jet(i)?)?.kappa;
        let kmax = kappa.max();
        s.semiconvexity = s.semiconvexity.max(-kappa.min());
        s.kappa_all = s.kappa_all.max(kmax);
        if node.class == NodeClass::BoundaryLayer {
            s.kappa_boundary = s.kappa_boundary.max(kmax);
        }
        if grid.domain.distance_to_boundary(&node.x) >= inset {
            s.kappa_interior = s.kappa_interior.max(kmax);
            s.interior_nodes += 1;
        }
        if affine {
            let eta = phi.eval(&node.x)? - u.values[i];
            min_eta = min_eta.min(eta);
            pog = pog.max(eta.max(0.0).powf(beta) * kmax);
        }
    }
    if s.interior_nodes == 0 {
        return Err(Error::Domain(format!("no node lies at distance {inset} from the boundary")));
    }
    s.ratio = s.kappa_all / (1.0 + s.kappa_boundary);
    if affine {
        s.min_eta = Some(min_eta);
        if min_eta > 0.0 {
            s.pogorelov = Some(pog);
        } else {
            s.notes.push(format!("eta = phi - u is not positive (min {min_eta:.3e}); Pogorelov quantity skipped"));
        }
    } else {
        s.notes.push("boundary data is not affine; Pogorelov quantity skipped".into());
    }
    Ok(s)
}

/// Curvature stability under one refinement `h -> h/2`: the interior
/// `kappa_max` and the Pogorelov quantity change by less than 20%, and the
/// ratio `sup kappa_max / (1 + boundary kappa_max)` grows by at most 20%.
/// The boundary-layer curvature itself may vary freely.
pub fn interior_curvature_report(coarse: &CurvatureSummary, fine: &CurvatureSummary) -> EstimateReport {
    let rel = |a: f64, b: f64| (b - a) / a.abs().max(f64::MIN_POSITIVE);
    let interior = rel(coarse.kappa_interior, fine.kappa_interior);
    let ratio = rel(coarse.ratio, fine.ratio);
    let mut margin = (REFINEMENT_TOL - interior.abs()).min(REFINEMENT_TOL - ratio);
    let mut notes = Vec::new();
    let pog = match (coarse.pogorelov, fine.pogorelov) {
        (Some(a), Some(b)) => {
            let r = rel(a, b);
            margin = margin.min(REFINEMENT_TOL - r.abs());
            Some(r)
        }
        _ => {
            notes.push("Pogorelov quantity unavailable on at least one grid".to_string());
            None
        }
    };
    let mut rep = EstimateReport::new("interior_curvature", margin, 0.0);
    rep.param("h_coarse", coarse.h)
        .param("h_fine", fine.h)
        .param("inset", fine.inset)
        .param("beta", fine.beta)
        .param("kappa_interior_coarse", coarse.kappa_interior)
        .param("kappa_interior_fine", fine.kappa_interior)
        .param("kappa_boundary_coarse", coarse.kappa_boundary)
        .param("kappa_boundary_fine", fine.kappa_boundary)
        .param("ratio_coarse", coarse.ratio)
        .param("ratio_fine", fine.ratio)
        .param("change_interior", interior)
        .param("change_ratio", ratio)
        .param("K", coarse.semiconvexity.max(fine.semiconvexity));
    if let Some(r) = pog {
        rep.param("pogorelov_coarse", coarse.pogorelov.unwrap_or_default())
            .param("pogorelov_fine", fine.pogorelov.unwrap_or_default())
            .param("change_pogorelov", r);
    }
    rep.notes = notes;
    rep.notes.extend(coarse.notes.iter().chain(&fine.notes).cloned());
    rep.notes.dedup();
    rep
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proposal {
    #[default]
    Gaussian,
    /// Heavy-tailed proposals for stress tests.
    Cauchy,
}

/// `count` vectors of `Gamma_k` in `R^n` by rejection of i.i.d. proposals.
pub fn sample_gamma(n: usize, k: usize, count: usize, seed: u64, proposal: Proposal) -> Result<Vec<CurvatureVector>> {
    if n == 0 || k < 1 || k > n {
        return Err(Error::Domain(format!("need 1 <= k <= n, got k = {k}, n = {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cauchy = Cauchy::new(0.0, 1.0).expect("unit Cauchy");
    let mut out = Vec::with_capacity(count);
    let mut tries = 0usize;
    while out.len() < count {
        tries += 1;
        if tries > 10_000 * count.max(1) + 1_000_000 {
            return Err(Error::Numeric(format!("rejection sampler for Gamma_{k} in R^{n} made no progress")));
        }
        let v: Vec<f64> = (0..n)
            .map(|_| match proposal {
                Proposal::Gaussian => StandardNormal.sample(&mut rng),
                Proposal::Cauchy => cauchy.sample(&mut rng),
            })
            .collect();
        if (1..=k).all(|j| sigma_raw(j, &v) > 0.0) {
            out.push(CurvatureVector::new(v)?);
        }
    }
    Ok(out)
}

/// Smallest slack of each identity or inequality over a set of samples.
#[derive(Default)]
struct Slacks {
    worst: BTreeMap<&'static str, (f64, usize)>,
}

impl Slacks {
    fn record(&mut self, name: &'static str, slack: f64, sample: usize) {
        let e = self.worst.entry(name).or_insert((f64::INFINITY, 0));
        if slack < e.0 || slack.is_nan() {
            *e = (slack, sample);
        }
    }
}

fn identity_slacks(k: usize, kappa: &CurvatureVector, idx: usize, s: &mut Slacks) -> Result<()> {
    let n = kappa.n();
    let v = kappa.as_slice();
    let sk = sigma(k, kappa)?;
    let grad = sigma_grad(k, kappa)?;
    let size = v.iter().fold(1.0_f64, |m, x| m.max(x.abs()));
    // identities are compared against the magnitude of their terms
    let euler: f64 = v.iter().zip(&grad).map(|(a, b)| a * b).sum();
    s.record("euler", -(euler - k as f64 * sk).abs() / (1.0 + sk.abs()), idx);
    let trace: f64 = grad.iter().sum();
    let skm1 = sigma_raw(k - 1, v);
    s.record("trace", -(trace - (n - k + 1) as f64 * skm1).abs() / (1.0 + skm1.abs()), idx);
    for i in 0..n {
        let mut rest = v.to_vec();
        rest.remove(i);
        let deleted = sigma_raw(k, &rest);
        s.record("expansion", -(sk - (v[i] * grad[i] + deleted)).abs() / (1.0 + sk.abs()), idx);
    }
    s.record("grad_positive", grad.iter().copied().fold(f64::INFINITY, f64::min) / (1.0 + grad.iter().sum::<f64>()), idx);
    let sorted = kappa.sorted_descending();
    let sv = sorted.as_slice();
    let sg = sigma_grad(k, &sorted)?;
    s.record("dominant_derivative", (sg[0] * sv[0] - k as f64 / n as f64 * sk) / (1.0 + sk.abs()), idx);
    s.record("negative_entry", (sv[n - 1] + (n - k) as f64 / k as f64 * sv[0]) / size, idx);
    if sv[n - 1] <= 0.0 {
        let total: f64 = sg.iter().sum();
        s.record("minimal_entry_derivative", (sg[n - 1] - total / n as f64) / (1.0 + total), idx);
    }
    let chain = maclaurin_chain(k, kappa)?;
    for w in chain.windows(2) {
        s.record("maclaurin", (w[0] - w[1]) / chain[0].abs().max(f64::MIN_POSITIVE), idx);
    }
    Ok(())
}

/// The symmetric-function identities and inequalities on each sample:
/// Euler, trace and expansion identities, positivity of the first
/// derivatives, the dominant-derivative bounds, the negative-entry bound,
/// Maclaurin's chain, and midpoint concavity of `sigma_k^{1/k}` over
/// consecutive pairs. Slacks are normalised by the size of their terms.
pub fn identity_suite(samples: &[CurvatureVector], k: usize) -> Result<EstimateReport> {
    let mut s = Slacks::default();
    let mut outside = 0usize;
    let mut used: Vec<usize> = Vec::new();
    for (idx, kappa) in samples.iter().enumerate() {
        if !in_gamma(k, kappa)?.in_cone {
            outside += 1;
            continue;
        }
        identity_slacks(k, kappa, idx, &mut s)?;
        used.push(idx);
    }
    for w in used.windows(2) {
        let (a, b) = (&samples[w[0]], &samples[w[1]]);
        if a.n() != b.n() {
            continue;
        }
        let mid: Vec<f64> = a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| 0.5 * (x + y)).collect();
        let root = |v: &[f64]| sigma_raw(k, v).powf(1.0 / k as f64);
        let lhs = root(&mid);
        let rhs = 0.5 * (root(a.as_slice()) + root(b.as_slice()));
        s.record("concavity", (lhs - rhs) / (1.0 + rhs.abs()), w[1]);
    }
    let (margin, at) = s.worst.values().fold((f64::INFINITY, 0), |m, &(v, i)| if v < m.0 || v.is_nan() { (v, i) } else { m });
    let margin = if s.worst.is_empty() { 0.0 } else { if margin.is_nan() { f64::NEG_INFINITY } else { margin } };
    let mut rep = EstimateReport::new("identity_suite", margin, IDENTITY_TOL);
    rep.param("k", k as f64).param("samples", used.len() as f64);
    for (name, (v, _)) in &s.worst {
        rep.param(name, *v);
    }
    if !used.is_empty() {
        rep.witness(vec![at as i64], margin);
    }
    if outside > 0 {
        rep.hypotheses_not_met(format!("{outside} samples lie outside Gamma_{k}"));
    }
    if used.is_empty() {
        rep.notes.push("no admissible samples".into());
    }
    Ok(rep)
}

/// Principal curvatures of a solution at every node, for [`identity_suite`].
pub fn solution_curvatures(u: &Field) -> Result<Vec<CurvatureVector>> {
    (0..u.grid.unknowns()).map(|i| Ok(frame(&u.fd_jet(i)?)?.kappa)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LuProbe {
    pub k: usize,
    pub n: usize,
    pub l: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub delta0: f64,
    pub trials: usize,
    /// Scale of the Gaussian `xi`; zero probes the trivial case.
    pub xi_scale: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LuRow {
    pub delta_prime: f64,
    pub violations: usize,
    /// Smallest `LHS - RHS`, normalised by `|xi|^2 / kappa_1^2`.
    pub min_slack: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LuReport {
    pub probe: LuProbe,
    /// From `delta' = 1` down by halving.
    pub sweep: Vec<LuRow>,
    /// Largest swept `delta'` at and below which no violation was sampled.
    /// Empirical only.
    pub delta_prime: Option<f64>,
}

impl LuProbe {
    fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if !(1 <= self.l && self.l < self.k && self.k <= self.n) {
            return Err(Error::Domain(format!("need 1 <= l < k <= n, got l = {}, k = {}, n = {}", self.l, self.k, self.n)));
        }
        if !(unit(self.epsilon) && unit(self.delta) && unit(self.delta0)) || !(self.xi_scale >= 0.0) {
            return Err(Error::Domain("epsilon, delta and delta0 must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// `LHS - RHS` of the inequality at one `(kappa, xi)`, with `kappa`
    /// sorted descending. The penalty term is taken with `xi_i^2`.
    pub fn slack(&self, kappa: &CurvatureVector, xi: &[f64]) -> Result<f64> {
        let k1 = kappa.as_slice()[0];
        let sk = sigma(self.k, kappa)?;
        let grad = sigma_grad(self.k, kappa)?;
        let lhs = crate::symfun::lu_quadratic(self.k, kappa, xi)?;
        let penal: f64 = (self.l..self.n).map(|i| grad[i] * xi[i] * xi[i]).sum::<f64>() / (k1 * sk);
        Ok(lhs - (1.0 - self.epsilon) * xi[0] * xi[0] / (k1 * k1) + self.delta0 * penal)
    }

    pub fn run(&self) -> Result<LuReport> {
        self.validate()?;
        let (n, k, l) = (self.n, self.k, self.l);
        let lower = -((n - k) as f64) / k as f64;
        let mut sweep = Vec::new();
        for j in 0..24 {
            let dp = 0.5_f64.powi(j);
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(j as u64));
            let mut row = LuRow { delta_prime: dp, violations: 0, min_slack: f64::INFINITY };
            let mut done = 0usize;
            let mut tries = 0usize;
            while done < self.trials && tries < 1000 * self.trials.max(1) {
                tries += 1;
                // kappa_1 = 1 by scale invariance
                let mut v = vec![1.0];
                v.extend((1..l).map(|_| rng.random_range(self.delta..=1.0)));
                let cap = v.iter().copied().fold(dp, f64::min);
                // alternate between the full admissible range and one scaled
                // to delta', so small delta' still gets cone samples
                let lo = if tries % 2 == 0 { lower } else { lower * cap };
                v.extend((l..n).map(|_| rng.random_range(lo..=cap)));
                v.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
                let kappa = CurvatureVector::new(v)?;
                if !in_gamma(k, &kappa)?.in_cone {
                    continue;
                }
                let xi: Vec<f64> = (0..n)
                    .map(|_| {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        self.xi_scale * g
                    })
                    .collect();
                let norm = 1.0 + xi.iter().map(|x| x * x).sum::<f64>();
                let slack = self.slack(&kappa, &xi)? / norm;
                row.min_slack = row.min_slack.min(slack);
                if slack < -1e-12 {
                    row.violations += 1;
                }
                done += 1;
            }
            sweep.push(row);
        }
        // largest delta' such that it and every smaller swept value is clean
        let mut delta_prime = None;
        for row in sweep.iter().rev() {
            if row.violations > 0 || !row.min_slack.is_finite() {
                break;
            }
            delta_prime = Some(row.delta_prime);
        }
        Ok(LuReport { probe: self.clone(), sweep, delta_prime })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Domain, Grid};
    use crate::expr::PsiSpec;
    use crate::solver::{initial_guess, mean_curvature_supersolution, shifted_subsolution, solve, SolverOptions};
    use std::sync::Arc;

    fn hyperboloid_problem(cells: usize, psi: f64) -> Problem {
        let phi = BoundaryData::Expr(crate::expr::parse("sqrt(1 + x1^2 + x2^2)").unwrap());
        let grid = Grid::build(Domain::ball(2, 0.7).unwrap(), 0.7 / cells as f64, &phi).unwrap();
        Problem::new(grid, 2, &PsiSpec::Constant(psi), phi, SolverOptions::default()).unwrap()
    }

    fn hyperboloid(grid: &Arc<Grid>, radius: f64, shift: f64) -> Field {
        Field::sample(grid.clone(), |x| shift + (radius * radius + x.iter().map(|v| v * v).sum::<f64>()).sqrt()).unwrap()
    }

    #[test]
    fn report_invariant() {
        let r = EstimateReport::new("x", -1e-3, 1e-3);
        assert!(r.passed && r.status == Status::Passed);
        let r = EstimateReport::new("x", -2e-3, 1e-3);
        assert!(!r.passed && r.status == Status::Failed);
    }

    #[test]
    fn comparison_of_a_field_with_itself() {
        let p = hyperboloid_problem(16, 1.0);
        let u = hyperboloid(&p.grid, 1.0, 0.0);
        let r = comparison_check(&p, &u, &u, 1e-9).unwrap();
        assert_eq!(r.margin, 0.0);
        assert!(r.passed);
    }

    #[test]
    fn comparison_flags_a_false_supersolution() {
        let p = hyperboloid_problem(16, 1.0);
        let u = solve(&p).unwrap().state.u;
        // radius 0.5 has sigma_2 = 4 > psi
        let v = hyperboloid(&p.grid, 0.5, 0.5);
        let r = comparison_check(&p, &u, &v, 1e-9).unwrap();
        assert_eq!(r.status, Status::HypothesesNotMet, "{r:?}");
        assert!(r.notes[0].contains("sigma_k[v] > psi"));
    }

    #[test]
    fn comparison_guard_is_antisymmetric() {
        // psi = 1: radius 0.9 is a strict subsolution, radius 1.2 shifted up a
        // strict supersolution
        let p = hyperboloid_problem(16, 1.0);
        let lo = hyperboloid(&p.grid, 0.9, 0.0);
        let hi = hyperboloid(&p.grid, 1.2, 0.1);
        let forward = comparison_check(&p, &lo, &hi, 1e-9).unwrap();
        assert_eq!(forward.status, Status::Passed, "{forward:?}");
        let back = comparison_check(&p, &hi, &lo, 1e-9).unwrap();
        assert_eq!(back.status, Status::HypothesesNotMet);
        assert!(!back.passed);
    }

    #[test]
    fn sandwich_cases() {
        let p = hyperboloid_problem(16, 1.0);
        let sol = solve(&p).unwrap();
        let u = sol.state.u;
        let sub = shifted_subsolution(&p, &initial_guess(&p).unwrap().field).unwrap();
        let sup = mean_curvature_supersolution(&p).unwrap().state.u;
        let r = c0_sandwich(&u, &sub, &sup, 1e-9).unwrap();
        assert!(r.passed, "{r:?}");
        let r = c0_sandwich(&sub, &sub, &sup, 1e-9).unwrap();
        assert_eq!(r.margin, 0.0);
        let bumped = Field::new(u.grid.clone(), u.grid.nodes.iter().zip(&u.values).map(|(nd, v)| {
            let r2: f64 = nd.x.iter().map(|x| x * x).sum();
            v + 0.1 * (1.0 - r2 / 0.49).max(0.0).powi(2)
        }).collect()).unwrap();
        let r = c0_sandwich(&bumped, &sub, &sup, 1e-9).unwrap();
        assert!(!r.passed);
        assert_eq!(r.witnesses[1].node, vec![16, 16]);
    }

    #[test]
    fn gradient_bound_on_the_hyperboloid() {
        let p = hyperboloid_problem(16, 1.0);
        let u = solve(&p).unwrap().state.u;
        let r = gradient_bound_report(&p, &u).unwrap();
        assert!(r.passed && r.margin > 0.0, "{r:?}");
        assert!(r.parameters["B"] < 2e-6);
        // the steepest node sits in the boundary layer
        assert_eq!(r.parameters["sup_tilt"], r.parameters["sup_boundary_tilt"]);
    }

    #[test]
    fn gradient_bound_on_flat_data() {
        let phi = BoundaryData::Affine { slope: vec![0.1, 0.0], offset: 0.0 };
        let grid = Grid::build(Domain::ball(2, 0.7).unwrap(), 0.7 / 16.0, &phi).unwrap();
        let p = Problem::new(grid, 1, &PsiSpec::Constant(1e-3), phi, SolverOptions::default()).unwrap();
        let u = solve(&p).unwrap().state.u;
        let r = gradient_bound_report(&p, &u).unwrap();
        assert!(r.passed);
        assert!((r.parameters["sup_tilt"] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn umbilic_curvature_is_stable() {
        let phi = BoundaryData::Expr(crate::expr::parse("sqrt(1 + x1^2 + x2^2)").unwrap());
        let summary = |cells: usize| {
            let grid = Grid::build(Domain::ball(2, 0.7).unwrap(), 0.7 / cells as f64, &phi).unwrap();
            curvature_summary(&hyperboloid(&grid, 1.0, 0.0), &phi, 0.2, 4.0).unwrap()
        };
        let (a, b) = (summary(16), summary(32));
        assert!((a.kappa_interior - 1.0).abs() < 1e-2 && (b.kappa_interior - 1.0).abs() < 1e-2);
        assert!(a.pogorelov.is_none());
        let r = interior_curvature_report(&a, &b);
        assert!(r.passed, "{r:?}");
        assert!((r.parameters["ratio_fine"] - 0.5).abs() < 1e-2);
    }

    #[test]
    fn sampler_is_deterministic_and_admissible() {
        let a = sample_gamma(4, 2, 200, 7, Proposal::Gaussian).unwrap();
        let b = sample_gamma(4, 2, 200, 7, Proposal::Gaussian).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| in_gamma(2, v).unwrap().in_cone));
        let c = sample_gamma(4, 2, 50, 7, Proposal::Cauchy).unwrap();
        assert_eq!(c.len(), 50);
    }

    #[test]
    fn identity_suite_on_random_samples() {
        for n in 1..=6 {
            for k in 1..=n {
                let s = sample_gamma(n, k, 500, (10 * n + k) as u64, Proposal::Gaussian).unwrap();
                let r = identity_suite(&s, k).unwrap();
                assert!(r.passed, "n = {n}, k = {k}: {r:?}");
            }
        }
    }

    #[test]
    fn identity_suite_equality_case() {
        let s = vec![CurvatureVector::new(vec![0.7; 4]).unwrap(); 3];
        let r = identity_suite(&s, 3).unwrap();
        assert!(r.passed);
        assert!(r.parameters["maclaurin"].abs() <= 1e-15);
        assert!(r.parameters["concavity"].abs() <= 1e-15);
        assert!(r.margin.abs() <= 1e-15);
    }

    #[test]
    fn identity_suite_skips_outside_samples() {
        let s = vec![CurvatureVector::new(vec![3.0, 2.0, -1.0]).unwrap()];
        let r = identity_suite(&s, 3).unwrap();
        assert_eq!(r.status, Status::HypothesesNotMet);
    }

    fn probe() -> LuProbe {
        LuProbe { k: 2, n: 3, l: 1, epsilon: 0.1, delta: 1.0 / 3.0, delta0: 0.5, trials: 2000, xi_scale: 1.0, seed: 11 }
    }

    #[test]
    fn lu_probe_finds_a_threshold() {
        let r = probe().run().unwrap();
        let dp = r.delta_prime.unwrap_or_else(|| panic!("{:?}", r.sweep));
        assert!(dp > 0.0 && dp < 1.0);
        let half = r.sweep.iter().find(|row| row.delta_prime == dp / 2.0).unwrap();
        assert_eq!(half.violations, 0);
        assert!(r.sweep[0].violations > 0);
        assert_eq!(r, probe().run().unwrap());
    }

    #[test]
    fn lu_probe_with_zero_xi() {
        let r = LuProbe { xi_scale: 0.0, trials: 200, ..probe() }.run().unwrap();
        assert!(r.sweep.iter().all(|row| row.violations == 0 && row.min_slack == 0.0));
        assert_eq!(r.delta_prime, Some(1.0));
    }

    #[test]
    fn lu_probe_rejects_bad_parameters() {
        assert!(LuProbe { l: 2, ..probe() }.run().is_err());
        assert!(LuProbe { epsilon: 1.0, ..probe() }.run().is_err());
    }
}
