//! Line tuples, control points and the least-squares fit of the 3D curb
//! template.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, Point2, Vector3};
use serde::{Deserialize, Serialize};

use crate::edges::LineSet;
use crate::geometry::{
    distance_from_row, intersect_lines, project_point, side_boundaries, CameraRig, CddConfig, CurbState, GeometryError,
    HomLine, Line2,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TemplateError {
    #[error("required intersection is at infinity")]
    DegenerateIntersection,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("initial state outside the fit bounds")]
    InitOutOfBounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TupleKind {
    Pair,
    Triplet,
}

impl TupleKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TupleKind::Pair => "pair",
            TupleKind::Triplet => "triplet",
        }
    }
}

/// Two or three lines, lowest in the image first.
#[derive(Debug, Clone, PartialEq)]
pub struct LineTuple {
    pub lines: Vec<Line2>,
}

impl LineTuple {
    pub fn kind(&self) -> TupleKind {
        if self.lines.len() == 3 {
            TupleKind::Triplet
        } else {
            TupleKind::Pair
        }
    }
}

/// Every pair and triplet of lines that do not meet inside the image.
pub fn enumerate_tuples(ls: &LineSet, rig: &CameraRig) -> (Vec<LineTuple>, Vec<LineTuple>) {
    let mut lines: Vec<Line2> = ls.iter_lines().copied().collect();
    lines.sort_by(|x, y| y.b.total_cmp(&x.b));
    let n = lines.len();
    let disjoint = |i: usize, j: usize| {
        lines[i].b > lines[j].b
            && match intersect_lines(&lines[i], &lines[j]).point() {
                Some(p) => !rig.contains(&p),
                None => true,
            }
    };
    let mut ok = vec![vec![false; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            ok[i][j] = disjoint(i, j);
        }
    }
    let mut pairs = Vec::new();
    let mut triplets = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if !ok[i][j] {
                continue;
            }
            pairs.push(LineTuple { lines: vec![lines[i], lines[j]] });
            for k in j + 1..n {
                if ok[i][k] && ok[j][k] {
                    triplets.push(LineTuple { lines: vec![lines[i], lines[j], lines[k]] });
                }
            }
        }
    }
    (pairs, triplets)
}

/// The six template points where the curb edges cross the vertical planes
/// `x = ∓W_max`: base, top-front, top-rear on the left, then on the right.
pub fn template_control_points(x: &CurbState, cdd: &CddConfig, rig: &CameraRig) -> [Vector3<f64>; 6] {
    let w = cdd.w_max;
    let dd1 = w * x.theta.tan();
    let dd2 = x.e / x.theta.cos();
    let (y_base, y_top) = (rig.h_c, rig.h_c - x.h);
    [
        Vector3::new(-w, y_base, x.d + dd1),
        Vector3::new(-w, y_top, x.d + dd1),
        Vector3::new(-w, y_top, x.d + dd1 + dd2),
        Vector3::new(w, y_base, x.d - dd1),
        Vector3::new(w, y_top, x.d - dd1),
        Vector3::new(w, y_top, x.d - dd1 + dd2),
    ]
}

pub fn project_control_points(x: &CurbState, cdd: &CddConfig, rig: &CameraRig) -> Result<[Point2<f64>; 6], GeometryError> {
    let p = template_control_points(x, cdd, rig);
    Ok([
        project_point(&p[0], rig)?,
        project_point(&p[1], rig)?,
        project_point(&p[2], rig)?,
        project_point(&p[3], rig)?,
        project_point(&p[4], rig)?,
        project_point(&p[5], rig)?,
    ])
}

/// Control points measured from a tuple, indexed like the template points.
/// Pairs leave the rear-edge entries (2 and 5) empty.
pub type Targets = [Option<Point2<f64>>; 6];

pub fn target_control_points(t: &LineTuple, b_l: &HomLine, b_r: &HomLine, rig: &CameraRig) -> Result<Targets, TemplateError> {
    let meet = |a: &HomLine, b: &HomLine| a.intersect(b).point().ok_or(TemplateError::DegenerateIntersection);
    let base = t.lines[0].homogeneous();
    let middle = t.lines[1].homogeneous();
    let p1 = meet(&base, b_l)?;
    let p4 = meet(&base, b_r)?;
    let p2 = meet(&middle, &HomLine::vertical(p1.x))?;
    let p5 = meet(&middle, &HomLine::vertical(p4.x))?;
    let mut out = [Some(p1), Some(p2), None, Some(p4), Some(p5), None];
    if let Some(top) = t.lines.get(2).map(Line2::homogeneous) {
        // edges parallel to the optical axis vanish at the principal point
        let c = rig.principal_point();
        out[2] = Some(meet(&top, &HomLine::through(&c, &p2))?);
        out[5] = Some(meet(&top, &HomLine::through(&c, &p5))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Lower and upper bounds of D (cm), yaw (rad), H (cm), E (cm).
    pub lower: [f64; 4],
    pub upper: [f64; 4],
    pub max_iterations: usize,
    /// Convergence when every step component is below this fraction of its
    /// difference step.
    pub step_tolerance: f64,
    pub initial_damping: f64,
    /// Central-difference steps for D, yaw, H, E.
    pub diff_steps: [f64; 4],
    pub e_init: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lower: [5.0, -0.6, 3.0, 5.0],
            upper: [600.0, 0.6, 30.0, 40.0],
            max_iterations: 100,
            step_tolerance: 1e-6,
            initial_damping: 1e-3,
            diff_steps: [0.1, 1e-3, 0.05, 0.05],
            e_init: 20.0,
        }
    }
}

impl FitConfig {
    pub fn clamp(&self, v: [f64; 4]) -> [f64; 4] {
        let mut out = v;
        for i in 0..4 {
            out[i] = v[i].clamp(self.lower[i], self.upper[i]);
        }
        out
    }

    pub fn contains(&self, v: &[f64; 4], used: usize) -> bool {
        (0..used).all(|i| v[i] >= self.lower[i] && v[i] <= self.upper[i])
    }
}

/// Fitted curb hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub state: CurbState,
    /// Unweighted control-point misfit `sqrt(Σ‖p - p̂‖²)`, px.
    pub residual_norm: f64,
    pub kind: TupleKind,
    pub tuple: LineTuple,
    pub converged: bool,
    pub iterations: usize,
}

/// Residual model of one tuple: targets plus the fixed geometry.
pub struct FitProblem<'a> {
    pub targets: Targets,
    pub cdd: &'a CddConfig,
    pub rig: &'a CameraRig,
    pub kind: TupleKind,
}

impl FitProblem<'_> {
    pub fn new<'a>(t: &LineTuple, cdd: &'a CddConfig, rig: &'a CameraRig) -> Result<FitProblem<'a>, TemplateError> {
        let (b_l, b_r) = side_boundaries(rig, cdd);
        Ok(FitProblem { targets: target_control_points(t, &b_l, &b_r, rig)?, cdd, rig, kind: t.kind() })
    }

    /// Number of fitted parameters; pairs leave E out.
    pub fn n_params(&self) -> usize {
        match self.kind {
            TupleKind::Pair => 3,
            TupleKind::Triplet => 4,
        }
    }

    fn state(&self, p: &[f64; 4]) -> CurbState {
        let e = if self.kind == TupleKind::Pair { 0.0 } else { p[3] };
        CurbState::new(p[0], p[1], p[2], e)
    }

    /// Raw differences `p - p̂` for the used control points.
    pub fn misfit(&self, p: &[f64; 4]) -> Result<Vec<f64>, GeometryError> {
        let proj = project_control_points(&self.state(p), self.cdd, self.rig)?;
        let mut r = Vec::with_capacity(12);
        for (t, q) in self.targets.iter().zip(proj.iter()) {
            if let Some(t) = t {
                r.push(t.x - q.x);
                r.push(t.y - q.y);
            }
        }
        Ok(r)
    }

    /// Residuals `sqrt(α_D)·(p - p̂)` with `α_D = D / D_max`, so the squared
    /// norm is the fit objective.
    pub fn residuals(&self, p: &[f64; 4]) -> Result<Vec<f64>, GeometryError> {
        let s = (p[0] / self.cdd.d_max).sqrt();
        Ok(self.misfit(p)?.into_iter().map(|r| s * r).collect())
    }

    pub fn objective(&self, p: &[f64; 4]) -> Result<f64, GeometryError> {
        Ok(self.residuals(p)?.iter().map(|r| r * r).sum())
    }

    pub fn numeric_jacobian(&self, p: &[f64; 4], steps: &[f64; 4]) -> Result<DMatrix<f64>, GeometryError> {
        let n = self.n_params();
        let m = self.residuals(p)?.len();
        let mut j = DMatrix::zeros(m, n);
        for k in 0..n {
            let (mut hi, mut lo) = (*p, *p);
            hi[k] += steps[k];
            lo[k] -= steps[k];
            let (rh, rl) = (self.residuals(&hi)?, self.residuals(&lo)?);
            for i in 0..m {
                j[(i, k)] = (rh[i] - rl[i]) / (2.0 * steps[k]);
            }
        }
        Ok(j)
    }

    /// Closed-form Jacobian of [`Self::residuals`].
    pub fn analytic_jacobian(&self, p: &[f64; 4]) -> Result<DMatrix<f64>, GeometryError> {
        let n = self.n_params();
        let x = self.state(p);
        let pts = template_control_points(&x, self.cdd, self.rig);
        let mis = self.misfit(p)?;
        let (fx, fy) = (self.rig.f_x, self.rig.f_y);
        let s = (x.d / self.cdd.d_max).sqrt();
        let ds_dd = 0.5 / (x.d * self.cdd.d_max).sqrt();
        let (sec2, tan_sec) = (1.0 / x.theta.cos().powi(2), x.theta.sin() / x.theta.cos().powi(2));
        let mut j = DMatrix::zeros(mis.len(), n);
        let mut row = 0;
        for (m, t) in self.targets.iter().enumerate() {
            if t.is_none() {
                continue;
            }
            let q = pts[m];
            let side = if m < 3 { 1.0 } else { -1.0 };
            let rear = if m % 3 == 2 { 1.0 } else { 0.0 };
            let raised = if m % 3 == 0 { 0.0 } else { 1.0 };
            // derivatives of (Y, Z) with respect to D, yaw, H, E
            let dz = [1.0, side * self.cdd.w_max * sec2 + rear * x.e * tan_sec, 0.0, rear / x.theta.cos()];
            let dy = [0.0, 0.0, -raised, 0.0];
            for k in 0..n {
                let du = -fx * q.x / (q.z * q.z) * dz[k];
                let dv = fy * dy[k] / q.z - fy * q.y / (q.z * q.z) * dz[k];
                let scale_term = if k == 0 { ds_dd } else { 0.0 };
                j[(row, k)] = -s * du + scale_term * mis[row];
                j[(row + 1, k)] = -s * dv + scale_term * mis[row + 1];
            }
            row += 2;
        }
        Ok(j)
    }
}

/// Progress of one fit, used by tests and diagnostics.
#[derive(Debug, Clone, Default)]
pub struct FitTrace {
    /// Objective after every accepted step, starting with the initial value.
    pub accepted_objectives: Vec<f64>,
}

/// Damped Gauss-Newton (Levenberg-Marquardt) with central-difference
/// Jacobians; iterates are clamped to the bounds after every step.
pub fn fit_template(
    t: &LineTuple,
    init: &CurbState,
    cfg: &FitConfig,
    cdd: &CddConfig,
    rig: &CameraRig,
) -> Result<Candidate, TemplateError> {
    fit_template_traced(t, init, cfg, cdd, rig).map(|(c, _)| c)
}

pub fn fit_template_traced(
    t: &LineTuple,
    init: &CurbState,
    cfg: &FitConfig,
    cdd: &CddConfig,
    rig: &CameraRig,
) -> Result<(Candidate, FitTrace), TemplateError> {
    let problem = FitProblem::new(t, cdd, rig)?;
    let n = problem.n_params();
    let mut p = init.as_array();
    if !cfg.contains(&p, n) {
        return Err(TemplateError::InitOutOfBounds);
    }
    let mut cost = problem.objective(&p)?;
    let mut trace = FitTrace { accepted_objectives: vec![cost] };
    let mut lambda = cfg.initial_damping;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        if cost < 1e-24 {
            converged = true;
            break;
        }
        iterations += 1;
        let r = DVector::from_vec(problem.residuals(&p)?);
        let j = problem.numeric_jacobian(&p, &cfg.diff_steps)?;
        let a = j.transpose() * &j;
        let g = j.transpose() * r;
        let mut accepted = false;
        let mut small_step = false;
        while lambda < 1e12 {
            let mut damped = a.clone();
            for k in 0..n {
                damped[(k, k)] += lambda * a[(k, k)].max(1e-12);
            }
            let Some(delta) = damped.lu().solve(&(-&g)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = p;
            for k in 0..n {
                trial[k] += delta[k];
            }
            let trial = cfg.clamp(trial);
            small_step = (0..n).all(|k| (trial[k] - p[k]).abs() < cfg.step_tolerance * cfg.diff_steps[k]);
            let trial_cost = problem.objective(&trial).unwrap_or(f64::INFINITY);
            if trial_cost < cost {
                p = trial;
                cost = trial_cost;
                trace.accepted_objectives.push(cost);
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                break;
            }
            if small_step {
                break;
            }
            lambda *= 10.0;
        }
        if small_step || !accepted {
            converged = small_step || lambda >= 1e12;
            break;
        }
    }
    let state = problem.state(&p);
    let misfit = problem.misfit(&p)?;
    let residual_norm = misfit.iter().map(|r| r * r).sum::<f64>().sqrt();
    Ok((Candidate { state, residual_norm, kind: problem.kind, tuple: t.clone(), converged, iterations }, trace))
}

/// Starting state from the tuple's lines, clamped into the bounds.
pub fn initial_state(t: &LineTuple, cfg: &FitConfig, rig: &CameraRig) -> Result<CurbState, TemplateError> {
    let base = t.lines[0];
    let v_base = base.v_at(rig.c_x);
    let d0 = distance_from_row(v_base, rig)?;
    // slope of a ground line z = D - x·tan(yaw) at the image center
    let theta0 = (base.a * rig.f_x * d0 / (rig.f_y * rig.h_c)).atan();
    let h0 = (v_base - t.lines[1].v_at(rig.c_x)) * d0 / rig.f_y;
    let p = cfg.clamp([d0, theta0, h0, cfg.e_init]);
    Ok(CurbState::from_array(p))
}

/// Fits every pair and triplet of `ls`.
pub fn build_candidate_set(ls: &LineSet, cfg: &FitConfig, cdd: &CddConfig, rig: &CameraRig) -> Vec<Candidate> {
    let (pairs, triplets) = enumerate_tuples(ls, rig);
    let mut out = Vec::with_capacity(pairs.len() + triplets.len());
    for t in triplets.iter().chain(pairs.iter()) {
        let fitted = initial_state(t, cfg, rig).and_then(|init| fit_template(t, &init, cfg, cdd, rig));
        match fitted {
            Ok(c) => out.push(c),
            Err(e) => log::debug!("tuple skipped: {e}"),
        }
    }
    out
}

/// One tab-separated line per candidate: kind, D (cm), yaw (deg), H (cm),
/// E (cm), residual (px).
pub fn format_candidates(cands: &[Candidate]) -> String {
    let mut s = String::new();
    for c in cands {
        let _ = writeln!(
            s,
            "{}\t{:.3}\t{:.4}\t{:.3}\t{:.3}\t{:.6}",
            c.kind.as_str(),
            c.state.d,
            c.state.theta.to_degrees(),
            c.state.h,
            c.state.e,
            c.residual_norm
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edges::VotedLine;
    use crate::geometry::CurbEdge;
    use proptest::prelude::*;

    fn setup() -> (CameraRig, CddConfig) {
        let rig = CameraRig::default();
        (rig, CddConfig::from_rig(&rig, 500.0, 130.0).unwrap())
    }

    fn tuple_of(x: &CurbState, rig: &CameraRig, n: usize) -> LineTuple {
        let edges = [CurbEdge::Base, CurbEdge::TopFront, CurbEdge::TopRear];
        LineTuple { lines: edges[..n].iter().map(|&e| x.edge_line(e, rig).unwrap()).collect() }
    }

    fn set(lines: &[Line2]) -> LineSet {
        LineSet { lines: lines.iter().map(|&line| VotedLine { line, votes: 1.0 }).collect() }
    }

    #[test]
    fn tuple_counts_are_binomial() {
        let (rig, _) = setup();
        let lines: Vec<Line2> = (0..6).map(|k| Line2 { a: 0.0, b: 600.0 + 50.0 * k as f64 }).collect();
        let (p, t) = enumerate_tuples(&set(&lines), &rig);
        assert_eq!((p.len(), t.len()), (15, 20));
        for tup in p.iter().chain(t.iter()) {
            assert!(tup.lines.windows(2).all(|w| w[0].b > w[1].b));
        }
    }

    #[test]
    fn lines_crossing_inside_the_image_form_no_tuple() {
        let (rig, _) = setup();
        let (p, t) = enumerate_tuples(&set(&[Line2 { a: 0.1, b: 600.0 }, Line2 { a: -0.1, b: 800.0 }]), &rig);
        assert!(p.is_empty() && t.is_empty());
    }

    #[test]
    fn one_line_crossing_outside_keeps_all_triplets() {
        let (rig, _) = setup();
        // the slanted line meets the others at u = 2000, -400 and -3000
        let lines = [
            Line2 { a: 0.0, b: 900.0 },
            Line2 { a: 0.0, b: 780.0 },
            Line2 { a: 0.05, b: 800.0 },
            Line2 { a: 0.0, b: 650.0 },
        ];
        let (_, t) = enumerate_tuples(&set(&lines), &rig);
        assert_eq!(t.len(), 4);
    }

    #[test]
    fn frontal_template_points() {
        let (rig, cdd) = setup();
        let p = template_control_points(&CurbState::new(300.0, 0.0, 12.0, 20.0), &cdd, &rig);
        assert_eq!(p[0], Vector3::new(-130.0, 55.0, 300.0));
        assert_eq!(p[3], Vector3::new(130.0, 55.0, 300.0));
        assert_eq!(p[2].z - p[1].z, 20.0);
        let q = project_control_points(&CurbState::new(300.0, 0.0, 12.0, 20.0), &cdd, &rig).unwrap();
        assert_eq!(q[0].y, q[3].y);
        assert!((q[0].y - (540.0 + 1000.0 * 55.0 / 300.0)).abs() < 1e-9);
    }

    #[test]
    fn yawed_template_offset() {
        let (rig, cdd) = setup();
        let p = template_control_points(&CurbState::new(300.0, 0.1, 12.0, 20.0), &cdd, &rig);
        assert!((p[0].z - 300.0 - 13.04).abs() < 0.01);
        // the base edge rotated about the reference point meets x = -W at the same depth
        let dir = Vector3::new(0.1f64.cos(), 0.0, -0.1f64.sin());
        let t = -130.0 / dir.x;
        assert!((300.0 + t * dir.z - p[0].z).abs() < 1e-9);
    }

    #[test]
    fn template_points_match_the_prism_corners() {
        let (rig, cdd) = setup();
        let x = CurbState::new(240.0, -0.2, 14.0, 25.0);
        let pts = template_control_points(&x, &cdd, &rig);
        // each control point lies on its edge where the edge crosses x = -W or x = +W
        let edges = [CurbEdge::Base, CurbEdge::TopFront, CurbEdge::TopRear];
        for (m, p) in pts.iter().enumerate() {
            let on_edge = x.edge_point(edges[m % 3], if m < 3 { -130.0 } else { 130.0 }, &rig);
            assert!((p - on_edge).norm() < 1e-9, "{m}");
        }
    }

    #[test]
    fn vertical_boundary_target() {
        let (rig, _) = setup();
        let t = LineTuple { lines: vec![Line2 { a: 0.0, b: 800.0 }, Line2 { a: 0.0, b: 700.0 }] };
        let targets = target_control_points(&t, &HomLine::vertical(400.0), &HomLine::vertical(1500.0), &rig).unwrap();
        assert_eq!(targets[0], Some(Point2::new(400.0, 800.0)));
        assert_eq!(targets[1], Some(Point2::new(400.0, 700.0)));
        assert!(targets[2].is_none());
    }

    #[test]
    fn boundary_parallel_to_the_base_is_degenerate() {
        let (rig, _) = setup();
        // a finite-slope edge always meets a vertical, so use a boundary parallel to the base
        let t = LineTuple { lines: vec![Line2 { a: 0.0, b: 800.0 }, Line2 { a: 0.0, b: 700.0 }] };
        let flat = Line2 { a: 0.0, b: 900.0 }.homogeneous();
        let err = target_control_points(&t, &flat, &HomLine::vertical(1500.0), &rig).unwrap_err();
        assert_eq!(err, TemplateError::DegenerateIntersection);
    }

    #[test]
    fn fit_recovers_a_perturbed_state() {
        let (rig, cdd) = setup();
        let truth = CurbState::new(300.0, 0.05, 12.0, 20.0);
        let cfg = FitConfig::default();
        for (kind, n) in [(TupleKind::Triplet, 3), (TupleKind::Pair, 2)] {
            let t = tuple_of(&truth, &rig, n);
            let init = CurbState::new(330.0, 0.045, 10.8, 22.0);
            let c = fit_template(&t, &init, &cfg, &cdd, &rig).unwrap();
            assert_eq!(c.kind, kind);
            assert!((c.state.d - truth.d).abs() < 0.5, "{c:?}");
            assert!((c.state.theta - truth.theta).abs() < 0.005);
            assert!((c.state.h - truth.h).abs() < 0.2);
            assert!(c.residual_norm < 1e-3);
            match kind {
                TupleKind::Triplet => assert!((c.state.e - truth.e).abs() < 1.0),
                TupleKind::Pair => assert_eq!(c.state.e, 0.0),
            }
        }
    }

    #[test]
    fn fit_at_the_optimum_stays_put() {
        let (rig, cdd) = setup();
        let truth = CurbState::new(250.0, -0.1, 15.0, 18.0);
        let c = fit_template(&tuple_of(&truth, &rig, 3), &truth, &FitConfig::default(), &cdd, &rig).unwrap();
        assert_eq!(c.state, truth);
        assert!(c.residual_norm < 1e-9);
        assert!(c.converged);
    }

    #[test]
    fn jacobians_agree() {
        let (rig, cdd) = setup();
        let truth = CurbState::new(280.0, 0.12, 13.0, 22.0);
        let t = tuple_of(&truth, &rig, 3);
        let problem = FitProblem::new(&t, &cdd, &rig).unwrap();
        let p = [300.0, 0.1, 11.0, 25.0];
        let a = problem.analytic_jacobian(&p).unwrap();
        let n = problem.numeric_jacobian(&p, &[1e-4, 1e-6, 1e-4, 1e-4]).unwrap();
        for (x, y) in a.iter().zip(n.iter()) {
            assert!((x - y).abs() <= 1e-4 * x.abs().max(1e-3), "{x} vs {y}");
        }
    }

    #[test]
    fn candidate_set_for_three_clean_lines() {
        let (rig, cdd) = setup();
        let truth = CurbState::new(320.0, 0.08, 12.0, 20.0);
        let t = tuple_of(&truth, &rig, 3);
        let cands = build_candidate_set(&set(&t.lines), &FitConfig::default(), &cdd, &rig);
        assert_eq!(cands.iter().filter(|c| c.kind == TupleKind::Triplet).count(), 1);
        assert_eq!(cands.iter().filter(|c| c.kind == TupleKind::Pair).count(), 3);
        let best = cands.iter().min_by(|x, y| x.residual_norm.total_cmp(&y.residual_norm)).unwrap();
        assert!(cands[0].residual_norm <= best.residual_norm + 1e-9);
        assert!(build_candidate_set(&LineSet::default(), &FitConfig::default(), &cdd, &rig).is_empty());
    }

    #[test]
    fn candidate_dump_is_tab_separated() {
        let (rig, cdd) = setup();
        let truth = CurbState::new(320.0, 0.0, 12.0, 20.0);
        let c = fit_template(&tuple_of(&truth, &rig, 3), &truth, &FitConfig::default(), &cdd, &rig).unwrap();
        let dump = format_candidates(&[c]);
        let fields: Vec<&str> = dump.trim_end().split('\t').collect();
        assert_eq!(fields, ["triplet", "320.000", "0.0000", "12.000", "20.000", "0.000000"]);
    }

    fn state_in_domain() -> impl Strategy<Value = CurbState> {
        (110.0f64..500.0, -0.5f64..0.5, 5.0f64..25.0, 8.0f64..35.0).prop_map(|(d, t, h, e)| CurbState::new(d, t, h, e))
    }

    proptest! {
        #[test]
        fn targets_from_projected_edges_equal_projected_template(x in state_in_domain()) {
            let (rig, cdd) = setup();
            let (b_l, b_r) = side_boundaries(&rig, &cdd);
            let t = tuple_of(&x, &rig, 3);
            let targets = target_control_points(&t, &b_l, &b_r, &rig).unwrap();
            let proj = project_control_points(&x, &cdd, &rig).unwrap();
            for (t, p) in targets.iter().zip(proj.iter()) {
                let t = t.unwrap();
                prop_assert!((t - p).norm() < 1e-6);
            }
        }

        #[test]
        fn accepted_steps_decrease_the_objective(x in state_in_domain(), k in 0.9f64..1.1) {
            let (rig, cdd) = setup();
            let t = tuple_of(&x, &rig, 3);
            let cfg = FitConfig::default();
            let init = CurbState::from_array(cfg.clamp([x.d * k, x.theta * (2.0 - k), x.h * k, x.e * (2.0 - k)]));
            let (_, trace) = fit_template_traced(&t, &init, &cfg, &cdd, &rig).unwrap();
            prop_assert!(trace.accepted_objectives.windows(2).all(|w| w[1] < w[0]));
        }

        #[test]
        fn refit_from_converged_state_is_stable(x in state_in_domain()) {
            let (rig, cdd) = setup();
            let t = tuple_of(&x, &rig, 3);
            let cfg = FitConfig::default();
            let init = CurbState::from_array(cfg.clamp([x.d * 1.05, x.theta, x.h * 0.95, 20.0]));
            let first = fit_template(&t, &init, &cfg, &cdd, &rig).unwrap();
            let second = fit_template(&t, &first.state, &cfg, &cdd, &rig).unwrap();
            let a = first.state.as_array();
            let b = second.state.as_array();
            for k in 0..4 {
                prop_assert!((a[k] - b[k]).abs() < 1e-4 * cfg.diff_steps[k].max(1.0));
            }
        }

        #[test]
        fn doubling_the_camera_keeps_the_state(x in state_in_domain()) {
            let (rig, cdd) = setup();
            let big = rig.scaled(2.0);
            let cfg = FitConfig::default();
            let init = CurbState::from_array(cfg.clamp([x.d * 1.08, x.theta * 0.9, x.h * 1.1, 22.0]));
            let small_fit = fit_template(&tuple_of(&x, &rig, 3), &init, &cfg, &cdd, &rig).unwrap();
            let big_fit = fit_template(&tuple_of(&x, &big, 3), &init, &cfg, &cdd, &big).unwrap();
            prop_assert!((small_fit.state.d - big_fit.state.d).abs() < 0.5);
            prop_assert!((small_fit.state.theta - big_fit.state.theta).abs() < 0.005);
            prop_assert!((small_fit.state.h - big_fit.state.h).abs() < 0.2);
        }
    }
}
