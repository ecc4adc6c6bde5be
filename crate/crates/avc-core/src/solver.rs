//! The nested capacity solver.
//!
//! The target value is a min-max-min: an outer minimization over
//! feasible observation marginals `P_Z`, a middle maximization over
//! `P(U|Z)`, and an inner minimization over state distributions `Q_S`
//! consistent with `P_Z`. The inner objective `I(U;Y)` is convex in
//! `Q_S` (the polytope fixes `P_U`, and `P(Y|U)` is affine in `Q_S`),
//! so the inner problem is solved by conditional-gradient descent with
//! an exact line search over the polytope's vertices. The middle max is
//! nonconcave; it is attacked with a coarse scan plus multi-start
//! projected supergradient ascent and reported as an honest bracket.
//!
//! All published entry points canonicalize the spec by relabeling each
//! alphabet to a content-derived canonical order before solving, so
//! every reported value is exactly invariant under input relabeling.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::AvcError;
use crate::prob::{entropy_raw, Alphabet, Channel, Dist};
use crate::rng::derive_rng;
use crate::strategy::{StrategyTable, SystemSpec};
use crate::Result;
use rand::Rng;

/// Residual tolerance for membership in the marginal polytope.
pub const TOL_FEAS: f64 = 1e-8;

/// Default simplex grid denominator.
pub const DEFAULT_GRID_K: usize = 16;

/// Default solver convergence tolerance in bits.
pub const DEFAULT_TOL: f64 = 1e-6;

/// Restart budget for the middle maximization.
const RESTARTS: usize = 8;

/// Internal seed for ascent restarts; fixed so the solver is a pure
/// function of its arguments.
const SOLVER_SEED: u64 = 0x50_1ce_d;

const LOG_FLOOR: f64 = 1e-300;

/// Result of a capacity computation: headline value, honest bracket,
/// and the optimizing distributions found.
#[derive(Clone, Debug)]
pub struct CapacityReport {
    /// Headline estimate in bits (the grid-certified outer min).
    pub value: f64,
    /// Saddle value of the best full `(P_Z, P(U|Z), Q_S)` triple,
    /// re-certified by a tighter inner minimization.
    pub lower_bound: f64,
    /// Minimum over the outer grid of the achieved middle max.
    pub upper_bound: f64,
    pub argmin_p_z: Dist,
    pub argmax_p_u_given_z: Channel,
    pub argmin_q_s: Dist,
    pub grid_resolution: usize,
    pub iterations: usize,
    pub wall_time: Duration,
}

/// The affine slice `{Q_S in the S-simplex : [Q_S obs]_Z = P_Z}`,
/// represented by its vertex list plus an interior-leaning feasible
/// point (the vertex average).
#[derive(Clone, Debug)]
pub struct MarginalPolytope {
    p_z: Vec<f64>,
    vertices: Vec<Vec<f64>>,
    center: Vec<f64>,
}

impl MarginalPolytope {
    /// Builds the polytope, enumerating its vertices as basic feasible
    /// solutions of the equality system (an exhaustive active-set
    /// sweep, which doubles as the feasibility test).
    pub fn new(obs: &Channel, p_z: &Dist) -> Result<Self> {
        if p_z.alphabet() != obs.output_alphabet() {
            return Err(AvcError::AlphabetMismatch(
                "P_Z alphabet differs from the observation output".into(),
            ));
        }
        let ns = obs.input_alphabet().size();
        let nz = obs.output_alphabet().size();
        // rows: nz marginal constraints plus the sum-to-one constraint
        let m = nz + 1;
        let mut a = vec![vec![0.0; ns]; m];
        let mut b = vec![0.0; m];
        for z in 0..nz {
            for s in 0..ns {
                a[z][s] = obs.prob(z, s);
            }
            b[z] = p_z.prob(z);
        }
        a[nz] = vec![1.0; ns];
        b[nz] = 1.0;

        let mut vertices: Vec<Vec<f64>> = Vec::new();
        let max_support = ns.min(m);
        for size in 1..=max_support {
            enumerate_subsets(ns, size, &mut |support| {
                if let Some(x) = solve_on_support(&a, &b, support) {
                    let mut q = vec![0.0; ns];
                    let mut ok = true;
                    for (&s, &v) in support.iter().zip(&x) {
                        if v < -1e-10 {
                            ok = false;
                            break;
                        }
                        q[s] = v.max(0.0);
                    }
                    if ok && residual_linf(&a, &b, &q) <= TOL_FEAS {
                        fix_sum(&mut q);
                        if !vertices.iter().any(|v| linf(v, &q) <= 1e-9) {
                            vertices.push(q);
                        }
                    }
                }
            });
        }
        if vertices.is_empty() {
            return Err(AvcError::InfeasibleMarginal(format!(
                "no state distribution maps to P_Z = {:?} (tolerance {TOL_FEAS})",
                p_z.mass()
            )));
        }
        let mut center = vec![0.0; ns];
        for v in &vertices {
            for (c, &x) in center.iter_mut().zip(v) {
                *c += x / vertices.len() as f64;
            }
        }
        fix_sum(&mut center);
        Ok(MarginalPolytope {
            p_z: p_z.mass().to_vec(),
            vertices,
            center,
        })
    }

    pub fn p_z(&self) -> &[f64] {
        &self.p_z
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// A point of the polytope drawn as a seeded random convex
    /// combination of vertices; used by property tests.
    pub fn sample_point(&self, rng: &mut impl Rng) -> Vec<f64> {
        let k = self.vertices.len();
        let mut w: Vec<f64> = (0..k).map(|_| -f64::ln(1.0 - rng.gen::<f64>())).collect();
        let tot: f64 = w.iter().sum();
        for x in &mut w {
            *x /= tot;
        }
        let ns = self.center.len();
        let mut q = vec![0.0; ns];
        for (wi, v) in w.iter().zip(&self.vertices) {
            for (qs, &vs) in q.iter_mut().zip(v) {
                *qs += wi * vs;
            }
        }
        q
    }
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn residual_linf(a: &[Vec<f64>], b: &[f64], x: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(row, &bi)| {
            (row.iter().zip(x).map(|(r, v)| r * v).sum::<f64>() - bi).abs()
        })
        .fold(0.0, f64::max)
}

/// Nudges a near-normalized nonnegative vector so it sums to one
/// exactly, by absorbing the residue into the largest cell.
fn fix_sum(q: &mut [f64]) {
    let sum: f64 = q.iter().sum();
    let imax = q
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    q[imax] += 1.0 - sum;
    if q[imax] < 0.0 {
        q[imax] = 0.0;
    }
}

fn enumerate_subsets(n: usize, size: usize, f: &mut impl FnMut(&[usize])) {
    let mut buf = Vec::with_capacity(size);
    fn rec(start: usize, n: usize, size: usize, buf: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if buf.len() == size {
            f(buf);
            return;
        }
        for i in start..n {
            buf.push(i);
            rec(i + 1, n, size, buf, f);
            buf.pop();
        }
    }
    rec(0, n, size, &mut buf, f);
}

/// Least-squares solution of `A[:, support] x = b` via normal
/// equations; `None` when the restricted columns are rank deficient.
fn solve_on_support(a: &[Vec<f64>], b: &[f64], support: &[usize]) -> Option<Vec<f64>> {
    let k = support.len();
    let mut g = vec![vec![0.0; k + 1]; k];
    for i in 0..k {
        for j in 0..k {
            g[i][j] = a
                .iter()
                .map(|row| row[support[i]] * row[support[j]])
                .sum();
        }
        g[i][k] = a.iter().zip(b).map(|(row, &bi)| row[support[i]] * bi).sum();
    }
    // Gaussian elimination with partial pivoting
    for col in 0..k {
        let piv = (col..k)
            .max_by(|&i, &j| g[i][col].abs().total_cmp(&g[j][col].abs()))
            .unwrap();
        if g[piv][col].abs() < 1e-12 {
            return None;
        }
        g.swap(col, piv);
        for row in 0..k {
            if row == col {
                continue;
            }
            let f = g[row][col] / g[col][col];
            for j in col..=k {
                g[row][j] -= f * g[col][j];
            }
        }
    }
    Some((0..k).map(|i| g[i][k] / g[i][i]).collect())
}

/// All distinct images `[Q_S obs]_Z` of the denominator-`grid_k`
/// simplex grid over `S`, in first-seen grid order.
pub fn feasible_z_marginals(obs: &Channel, grid_k: usize) -> Result<Vec<Dist>> {
    if grid_k == 0 {
        return Err(AvcError::invalid("grid_k must be at least 1"));
    }
    let ns = obs.input_alphabet().size();
    let mut out: Vec<Dist> = Vec::new();
    for q in simplex_grid(ns, grid_k) {
        let img = push_through(&q, obs);
        if !out.iter().any(|d| linf(d.mass(), &img) <= 1e-9) {
            out.push(Dist::new(obs.output_alphabet().clone(), img)?);
        }
    }
    Ok(out)
}

/// All points of the simplex over `dim` coordinates with denominator
/// `k`, in composition order.
pub(crate) fn simplex_grid(dim: usize, k: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut current = vec![0u64; dim];
    crate::prob::fill_compositions(k as u64, 0, &mut current, &mut |c| {
        out.push(c.iter().map(|&x| x as f64 / k as f64).collect());
    });
    out
}

fn push_through(q: &[f64], obs: &Channel) -> Vec<f64> {
    let nz = obs.output_alphabet().size();
    let mut img = vec![0.0; nz];
    for (s, &w) in q.iter().enumerate() {
        for (z, m) in img.iter_mut().enumerate() {
            *m += w * obs.prob(z, s);
        }
    }
    fix_sum(&mut img);
    img
}

/// The inner objective `I(U;Y)` as a function of `Q_S`, with the fixed
/// parts (`P_U`, the per-state kernels, and the polytope-constant
/// `I(U;Z)`) precomputed.
struct InnerProblem {
    ns: usize,
    nu: usize,
    ny: usize,
    /// `a[s][u*ny + y] = sum_z obs(z|s) p(u|z) W(y | strat(u,z), s)`
    a: Vec<Vec<f64>>,
    /// `b[s][y] = sum_u a[s][u,y]`
    b: Vec<Vec<f64>>,
    h_u: f64,
    i_uz: f64,
}

impl InnerProblem {
    fn new(spec: &SystemSpec, strat: &StrategyTable, p_z: &[f64], rows: &[Vec<f64>]) -> Self {
        let ns = spec.s_alphabet().size();
        let nz = spec.z_alphabet().size();
        let nu = strat.num_strategies();
        let ny = spec.y_alphabet().size();
        let mut a = vec![vec![0.0; nu * ny]; ns];
        let mut b = vec![vec![0.0; ny]; ns];
        for s in 0..ns {
            for z in 0..nz {
                let oz = spec.obs_prob(z, s);
                if oz == 0.0 {
                    continue;
                }
                for u in 0..nu {
                    let m = oz * rows[z][u];
                    if m == 0.0 {
                        continue;
                    }
                    let x = strat.apply(u, z);
                    for y in 0..ny {
                        let w = m * spec.w_prob(y, x, s);
                        a[s][u * ny + y] += w;
                        b[s][y] += w;
                    }
                }
            }
        }
        // P_U and I(U;Z) from the fixed (P_Z, P(U|Z)) pair
        let mut p_u = vec![0.0; nu];
        let mut juz = vec![0.0; nu * nz];
        for z in 0..nz {
            for u in 0..nu {
                let m = p_z[z] * rows[z][u];
                p_u[u] += m;
                juz[u * nz + z] += m;
            }
        }
        let h_u = entropy_raw(&p_u);
        let p_z_h = entropy_raw(p_z);
        let i_uz = {
            let mut i = h_u + p_z_h - entropy_raw(&juz);
            if i < 0.0 && i > -1e-12 {
                i = 0.0;
            }
            i
        };
        InnerProblem {
            ns,
            nu,
            ny,
            a,
            b,
            h_u,
            i_uz,
        }
    }

    /// `I(U;Y)` at `q`.
    fn value(&self, q: &[f64]) -> f64 {
        let mut j = vec![0.0; self.nu * self.ny];
        let mut py = vec![0.0; self.ny];
        for s in 0..self.ns {
            let qs = q[s];
            if qs == 0.0 {
                continue;
            }
            for (cell, &ac) in j.iter_mut().zip(&self.a[s]) {
                *cell += qs * ac;
            }
            for (cell, &bc) in py.iter_mut().zip(&self.b[s]) {
                *cell += qs * bc;
            }
        }
        let mut i = self.h_u + entropy_raw(&py) - entropy_raw(&j);
        if i < 0.0 && i > -1e-12 {
            i = 0.0;
        }
        i
    }

    /// Analytic gradient of `I(U;Y)` with respect to `q`:
    /// `grad_s = sum a_s log2 J - sum b_s log2 P_Y` (the `1/ln 2`
    /// terms cancel because each kernel has unit mass).
    fn grad(&self, q: &[f64], out: &mut [f64]) {
        let mut j = vec![0.0; self.nu * self.ny];
        let mut py = vec![0.0; self.ny];
        for s in 0..self.ns {
            let qs = q[s];
            if qs == 0.0 {
                continue;
            }
            for (cell, &ac) in j.iter_mut().zip(&self.a[s]) {
                *cell += qs * ac;
            }
            for (cell, &bc) in py.iter_mut().zip(&self.b[s]) {
                *cell += qs * bc;
            }
        }
        let lj: Vec<f64> = j.iter().map(|&v| v.max(LOG_FLOOR).log2()).collect();
        let lpy: Vec<f64> = py.iter().map(|&v| v.max(LOG_FLOOR).log2()).collect();
        for s in 0..self.ns {
            let mut g = 0.0;
            for (idx, &ac) in self.a[s].iter().enumerate() {
                if ac > 0.0 {
                    g += ac * lj[idx];
                }
            }
            for (y, &bc) in self.b[s].iter().enumerate() {
                if bc > 0.0 {
                    g -= bc * lpy[y];
                }
            }
            out[s] = g;
        }
    }

    fn directional_derivative(&self, q: &[f64], d: &[f64], scratch: &mut [f64]) -> f64 {
        self.grad(q, scratch);
        scratch.iter().zip(d).map(|(g, x)| g * x).sum()
    }

    /// Minimizes `I(U;Y)` over the polytope by conditional gradient
    /// with exact line search; returns `(min I(U;Y), argmin q)`.
    fn minimize(&self, poly: &MarginalPolytope, tol: f64, max_iter: usize) -> (f64, Vec<f64>) {
        let verts = poly.vertices();
        if verts.len() == 1 {
            return (self.value(&verts[0]), verts[0].clone());
        }
        let mut q = poly.center().to_vec();
        let mut grad = vec![0.0; self.ns];
        let mut scratch = vec![0.0; self.ns];
        for _ in 0..max_iter {
            self.grad(&q, &mut grad);
            // linear minimization oracle over the vertex list
            let mut best = 0;
            let mut best_dot = f64::INFINITY;
            for (i, v) in verts.iter().enumerate() {
                let d: f64 = grad.iter().zip(v).map(|(g, x)| g * x).sum();
                if d < best_dot - 1e-15 {
                    best_dot = d;
                    best = i;
                }
            }
            let here: f64 = grad.iter().zip(&q).map(|(g, x)| g * x).sum();
            if here - best_dot < tol {
                break;
            }
            let d: Vec<f64> = verts[best].iter().zip(&q).map(|(v, x)| v - x).collect();
            // exact line search: bisection on the directional derivative
            let mut lo = 0.0;
            let mut hi = 1.0;
            if self.directional_derivative_at(&q, &d, 1.0, &mut scratch) <= 0.0 {
                lo = 1.0;
            } else {
                for _ in 0..48 {
                    let mid = 0.5 * (lo + hi);
                    if self.directional_derivative_at(&q, &d, mid, &mut scratch) < 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
            }
            if lo == 0.0 {
                break;
            }
            for (x, dd) in q.iter_mut().zip(&d) {
                *x += lo * dd;
            }
            clamp_simplex(&mut q);
        }
        (self.value(&q), q)
    }

    fn directional_derivative_at(
        &self,
        q: &[f64],
        d: &[f64],
        t: f64,
        scratch: &mut [f64],
    ) -> f64 {
        let pt: Vec<f64> = q.iter().zip(d).map(|(x, dd)| x + t * dd).collect();
        self.directional_derivative(&pt, d, scratch)
    }
}

fn clamp_simplex(q: &mut [f64]) {
    for x in q.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    fix_sum(q);
}

/// Innermost minimization of Eq-style objective over
/// `{Q_S : [Q_S obs]_Z = P_Z}`; returns the objective value
/// `min I(U;Y) - I(U;Z)` and the minimizing `Q_S`.
pub fn inner_min(
    spec: &SystemSpec,
    p_z: &Dist,
    p_u_given_z: &Channel,
    strat: &StrategyTable,
    tol: f64,
) -> Result<(f64, Dist)> {
    let poly = MarginalPolytope::new(spec.obs(), p_z)?;
    let rows = channel_rows(p_u_given_z);
    let prob = InnerProblem::new(spec, strat, p_z.mass(), &rows);
    let (iuy, q) = prob.minimize(&poly, tol, 200);
    let q_dist = dist_from_raw(spec.s_alphabet().clone(), q)?;
    Ok((clamp_value(iuy - prob.i_uz), q_dist))
}

fn clamp_value(v: f64) -> f64 {
    if v < 0.0 && v >= -1e-12 {
        0.0
    } else {
        v
    }
}

fn channel_rows(ch: &Channel) -> Vec<Vec<f64>> {
    (0..ch.input_alphabet().size())
        .map(|i| ch.row(i).mass().to_vec())
        .collect()
}

fn dist_from_raw(alphabet: Alphabet, mut mass: Vec<f64>) -> Result<Dist> {
    clamp_simplex(&mut mass);
    Dist::new(alphabet, mass)
}

fn rows_to_channel(z: &Alphabet, u: &Alphabet, rows: &[Vec<f64>]) -> Result<Channel> {
    let dists = rows
        .iter()
        .map(|r| dist_from_raw(u.clone(), r.clone()))
        .collect::<Result<Vec<_>>>()?;
    Channel::new(z.clone(), u.clone(), dists)
}

/// Euclidean projection onto the probability simplex.
pub(crate) fn project_simplex(v: &[f64], out: &mut Vec<f64>) {
    let n = v.len();
    let mut sorted: Vec<f64> = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    let mut hit = false;
    for (i, &s) in sorted.iter().enumerate() {
        acc += s;
        let t = (acc - 1.0) / (i + 1) as f64;
        if s - t <= 0.0 {
            hit = true;
            break;
        }
        theta = t;
    }
    let _ = hit;
    out.clear();
    out.extend(v.iter().map(|&x| (x - theta).max(0.0)));
    fix_sum(out);
    let _ = n;
}

/// Middle maximization: `max over P(U|Z)` of the inner min at a fixed
/// feasible `P_Z`. Returns `(value, argmax rows)`.
fn middle_max_raw(
    spec: &SystemSpec,
    strat: &StrategyTable,
    poly: &MarginalPolytope,
    tol: f64,
    restarts: usize,
    seed: u64,
) -> (f64, Vec<Vec<f64>>) {
    let nz = spec.z_alphabet().size();
    let nu = strat.num_strategies();
    let p_z = poly.p_z().to_vec();

    let eval = |rows: &[Vec<f64>], inner_tol: f64, iters: usize| -> f64 {
        let prob = InnerProblem::new(spec, strat, &p_z, rows);
        let (iuy, _) = prob.minimize(poly, inner_tol, iters);
        clamp_value(iuy - prob.i_uz)
    };

    // Coarse scan over per-row simplex grids to seed the ascent; the
    // denominator adapts so the combo count stays bounded.
    let mut denom = 4usize;
    loop {
        let per_row = crate::prob::type_count(nu, denom as u64) as usize;
        let combos = per_row.pow(nz as u32);
        if combos <= 4000 || denom == 1 {
            break;
        }
        denom -= 1;
    }
    let row_opts = simplex_grid(nu, denom);
    let mut combo_idx = vec![0usize; nz];
    let mut scored: Vec<(f64, Vec<Vec<f64>>)> = Vec::new();
    loop {
        let rows: Vec<Vec<f64>> = combo_idx.iter().map(|&i| row_opts[i].clone()).collect();
        let v = eval(&rows, 1e-4, 40);
        scored.push((v, rows));
        if scored.len() > 6 {
            scored.sort_by(|a, b| b.0.total_cmp(&a.0));
            scored.truncate(4);
        }
        let mut d = nz;
        loop {
            if d == 0 {
                break;
            }
            d -= 1;
            combo_idx[d] += 1;
            if combo_idx[d] < row_opts.len() {
                break;
            }
            combo_idx[d] = 0;
            if d == 0 {
                combo_idx.clear();
                break;
            }
        }
        if combo_idx.is_empty() {
            break;
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored.truncate(4);

    // start list: uniform rows (objective >= 0 guarantee), scan
    // leaders, then seeded random starts
    let mut starts: Vec<Vec<Vec<f64>>> = vec![vec![vec![1.0 / nu as f64; nu]; nz]];
    for (_, rows) in &scored {
        starts.push(rows.clone());
    }
    let mut rng = derive_rng(seed, &[0x3a5c]);
    while starts.len() < 1 + scored.len() + restarts {
        let rows: Vec<Vec<f64>> = (0..nz)
            .map(|_| {
                let mut r: Vec<f64> = (0..nu).map(|_| -f64::ln(1.0 - rng.gen::<f64>())).collect();
                let t: f64 = r.iter().sum();
                for x in &mut r {
                    *x /= t;
                }
                r
            })
            .collect();
        starts.push(rows);
    }

    let mut best_val = f64::NEG_INFINITY;
    let mut best_rows: Vec<Vec<f64>> = starts[0].clone();
    for start in starts {
        let (v, rows) = ascend(start, &eval, tol);
        if v > best_val + 1e-12 {
            best_val = v;
            best_rows = rows;
        }
    }
    (best_val, best_rows)
}

/// Projected supergradient ascent on the per-z rows of `P(U|Z)` with
/// finite-difference supergradients and backtracking steps.
fn ascend(
    mut rows: Vec<Vec<f64>>,
    eval: &impl Fn(&[Vec<f64>], f64, usize) -> f64,
    tol: f64,
) -> (f64, Vec<Vec<f64>>) {
    let nz = rows.len();
    let nu = rows[0].len();
    let inner_tol = (tol * 0.1).max(1e-9);
    let mut best = eval(&rows, inner_tol, 120);
    let mut step = 0.25;
    let h = 1e-5;
    let mut proj = Vec::new();
    for _ in 0..80 {
        // finite-difference supergradient, coordinate-wise with
        // reprojection
        let mut grad = vec![vec![0.0; nu]; nz];
        for z in 0..nz {
            for u in 0..nu {
                let mut pert = rows.clone();
                pert[z][u] += h;
                project_simplex(&pert[z], &mut proj);
                pert[z] = proj.clone();
                grad[z][u] = (eval(&pert, inner_tol, 120) - best) / h;
            }
        }
        let norm: f64 = grad
            .iter()
            .flat_map(|r| r.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        if norm < 1e-12 {
            break;
        }
        let mut improved = false;
        let mut t = step;
        while t > 1e-7 {
            let mut cand = rows.clone();
            for z in 0..nz {
                for u in 0..nu {
                    cand[z][u] += t * grad[z][u] / norm;
                }
                project_simplex(&cand[z], &mut proj);
                cand[z] = proj.clone();
            }
            let v = eval(&cand, inner_tol, 120);
            if v > best + tol * 0.01 {
                rows = cand;
                best = v;
                step = (t * 1.5).min(0.5);
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (best, rows)
}

/// Middle maximization at a fixed feasible `P_Z`: returns the value
/// and the maximizing `P(U|Z)` channel.
pub fn middle_max(
    spec: &SystemSpec,
    p_z: &Dist,
    tol: f64,
    restarts: usize,
) -> Result<(f64, Channel)> {
    let strat = spec.strategies()?;
    let poly = MarginalPolytope::new(spec.obs(), p_z)?;
    let (v, rows) = middle_max_raw(spec, &strat, &poly, tol, restarts, SOLVER_SEED);
    let ch = rows_to_channel(spec.z_alphabet(), strat.u_alphabet(), &rows)?;
    Ok((v, ch))
}

/// Canonical relabeling of a spec: the permutation combo of all four
/// alphabets whose flattened `(W, obs)` tensor is lexicographically
/// minimal. Solving in canonical coordinates makes every reported
/// value exactly invariant under input relabeling.
struct Canonical {
    spec: SystemSpec,
    // original index -> canonical index, per alphabet
    px: Vec<usize>,
    ps: Vec<usize>,
    #[allow(dead_code)]
    py: Vec<usize>,
    pz: Vec<usize>,
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..n).collect();
    fn rec(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
        if k == items.len() {
            out.push(items.clone());
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            rec(items, k + 1, out);
            items.swap(k, i);
        }
        if k + 1 < items.len() {
            items[k..].sort_unstable();
        }
    }
    rec(&mut items, 0, &mut out);
    out.sort();
    out
}

fn factorial(n: usize) -> usize {
    (1..=n).product::<usize>().max(1)
}

fn canonicalize(spec: &SystemSpec) -> Canonical {
    let nx = spec.x_alphabet().size();
    let ns = spec.s_alphabet().size();
    let ny = spec.y_alphabet().size();
    let nz = spec.z_alphabet().size();
    let total = factorial(nx)
        .saturating_mul(factorial(ns))
        .saturating_mul(factorial(ny))
        .saturating_mul(factorial(nz));
    let identity = Canonical {
        spec: spec.clone(),
        px: (0..nx).collect(),
        ps: (0..ns).collect(),
        py: (0..ny).collect(),
        pz: (0..nz).collect(),
    };
    if total > 500_000 {
        return identity;
    }
    let perms_x = permutations(nx);
    let perms_s = permutations(ns);
    let perms_y = permutations(ny);
    let perms_z = permutations(nz);

    // key(perm combo) = flattened canonical tensors; perms map
    // original index -> canonical index, so invert for reading
    let key_of = |px: &[usize], ps: &[usize], py: &[usize], pz: &[usize]| -> Vec<f64> {
        let mut inv_x = vec![0usize; nx];
        let mut inv_s = vec![0usize; ns];
        let mut inv_y = vec![0usize; ny];
        let mut inv_z = vec![0usize; nz];
        for (o, &c) in px.iter().enumerate() {
            inv_x[c] = o;
        }
        for (o, &c) in ps.iter().enumerate() {
            inv_s[c] = o;
        }
        for (o, &c) in py.iter().enumerate() {
            inv_y[c] = o;
        }
        for (o, &c) in pz.iter().enumerate() {
            inv_z[c] = o;
        }
        let mut key = Vec::with_capacity(nx * ns * ny + ns * nz);
        for xc in 0..nx {
            for sc in 0..ns {
                for yc in 0..ny {
                    key.push(spec.w_prob(inv_y[yc], inv_x[xc], inv_s[sc]));
                }
            }
        }
        for sc in 0..ns {
            for zc in 0..nz {
                key.push(spec.obs_prob(inv_z[zc], inv_s[sc]));
            }
        }
        key
    };

    let mut best_key: Option<Vec<f64>> = None;
    let mut best: Option<(Vec<usize>, Vec<usize>, Vec<usize>, Vec<usize>)> = None;
    for px in &perms_x {
        for ps in &perms_s {
            for py in &perms_y {
                for pz in &perms_z {
                    let key = key_of(px, ps, py, pz);
                    let better = match &best_key {
                        None => true,
                        Some(bk) => {
                            let mut b = false;
                            for (a, c) in key.iter().zip(bk.iter()) {
                                match a.total_cmp(c) {
                                    std::cmp::Ordering::Less => {
                                        b = true;
                                        break;
                                    }
                                    std::cmp::Ordering::Greater => break,
                                    std::cmp::Ordering::Equal => {}
                                }
                            }
                            b
                        }
                    };
                    if better {
                        best_key = Some(key);
                        best = Some((px.clone(), ps.clone(), py.clone(), pz.clone()));
                    }
                }
            }
        }
    }
    let (px, ps, py, pz) = best.expect("at least the identity combo exists");
    // build the canonical spec tables
    let mut w_rows = vec![vec![0.0; ny]; nx * ns];
    for x in 0..nx {
        for s in 0..ns {
            for y in 0..ny {
                w_rows[px[x] * ns + ps[s]][py[y]] = spec.w_prob(y, x, s);
            }
        }
    }
    let mut obs_rows = vec![vec![0.0; nz]; ns];
    for s in 0..ns {
        for z in 0..nz {
            obs_rows[ps[s]][pz[z]] = spec.obs_prob(z, s);
        }
    }
    let cspec = SystemSpec::from_tables(nx, ns, &w_rows, &obs_rows)
        .expect("permuted tables stay stochastic");
    Canonical {
        spec: cspec,
        px,
        ps,
        py,
        pz,
    }
}

impl Canonical {
    /// Maps a canonical S-distribution back to the original labels.
    fn q_back(&self, q_can: &[f64], alphabet: &Alphabet) -> Result<Dist> {
        let mass: Vec<f64> = (0..q_can.len()).map(|s| q_can[self.ps[s]]).collect();
        dist_from_raw(alphabet.clone(), mass)
    }

    fn p_z_back(&self, p_can: &[f64], alphabet: &Alphabet) -> Result<Dist> {
        let mass: Vec<f64> = (0..p_can.len()).map(|z| p_can[self.pz[z]]).collect();
        dist_from_raw(alphabet.clone(), mass)
    }

    /// Maps a canonical `P(U'|Z')` row set back to the original
    /// strategy indexing.
    fn p_u_back(&self, rows_can: &[Vec<f64>], orig: &SystemSpec) -> Result<Channel> {
        let strat_orig = orig.strategies()?;
        let nz = orig.z_alphabet().size();
        let nx = orig.x_alphabet().size();
        let nu = strat_orig.num_strategies();
        let mut inv_z = vec![0usize; nz];
        for (o, &c) in self.pz.iter().enumerate() {
            inv_z[c] = o;
        }
        let mut rows = vec![vec![0.0; nu]; nz];
        for z in 0..nz {
            for (u_orig, row) in rows.iter_mut().enumerate() {
                // the canonical index of the function f: encode
                // g(z_can) = px[f(inv_z[z_can])] base-|X|
                let mut u_can = 0usize;
                for zc in 0..nz {
                    let f_at = {
                        let zo = inv_z[zc];
                        let mut rem = u_orig;
                        // digit of f at position zo (most significant = z 0)
                        for _ in (zo + 1)..nz {
                            rem /= nx;
                        }
                        rem % nx
                    };
                    u_can = u_can * nx + self.px[f_at];
                }
                row[u_orig] = rows_can[self.pz[z]][u_can];
            }
        }
        rows_to_channel(orig.z_alphabet(), strat_orig.u_alphabet(), &rows)
    }
}

/// Computes the myopic-encoder capacity of Eq-style min-max-min on a
/// simplex grid of denominator `grid_k` with one halving refinement
/// around the incumbent `P_Z`.
pub fn capacity(spec: &SystemSpec, grid_k: usize, tol: f64) -> Result<CapacityReport> {
    let start = Instant::now();
    let canon = canonicalize(spec);
    let cspec = &canon.spec;
    let strat = cspec.strategies()?;
    let cells = cspec.s_alphabet().size()
        * cspec.z_alphabet().size()
        * strat.num_strategies()
        * cspec.x_alphabet().size()
        * cspec.y_alphabet().size();
    if cells > 10_000_000 {
        return Err(AvcError::CapacityLimit(format!(
            "joint tensor would need {cells} cells"
        )));
    }
    if grid_k == 0 {
        return Err(AvcError::invalid("grid_k must be at least 1"));
    }

    let marginals = feasible_z_marginals(cspec.obs(), grid_k)?;
    let evaluate = |p_z: &Dist, idx: usize| -> Result<(f64, Vec<Vec<f64>>, MarginalPolytope)> {
        let poly = MarginalPolytope::new(cspec.obs(), p_z)?;
        let (v, rows) = middle_max_raw(cspec, &strat, &poly, tol, RESTARTS, SOLVER_SEED ^ idx as u64);
        Ok((v, rows, poly))
    };

    let coarse: Vec<(usize, (f64, Vec<Vec<f64>>, MarginalPolytope, Dist))> = marginals
        .par_iter()
        .enumerate()
        .map(|(i, p_z)| {
            let (v, rows, poly) = evaluate(p_z, i)?;
            Ok((i, (v, rows, poly, p_z.clone())))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut iterations = coarse.len();
    let (mut best_idx, mut best) = coarse
        .into_iter()
        .min_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.0.cmp(&b.0)))
        .ok_or_else(|| AvcError::invalid("empty feasible marginal grid"))?;

    // one halving refinement: denominator-2k marginals near the incumbent
    let radius = 1.0 / grid_k as f64;
    let fine = feasible_z_marginals(cspec.obs(), grid_k * 2)?;
    let near: Vec<(usize, Dist)> = fine
        .into_iter()
        .enumerate()
        .filter(|(_, p)| linf(p.mass(), best.3.mass()) <= radius + 1e-12)
        .collect();
    let refined: Vec<(usize, (f64, Vec<Vec<f64>>, MarginalPolytope, Dist))> = near
        .par_iter()
        .map(|(i, p_z)| {
            let (v, rows, poly) = evaluate(p_z, 100_000 + i)?;
            Ok((100_000 + i, (v, rows, poly, p_z.clone())))
        })
        .collect::<Result<Vec<_>>>()?;
    iterations += refined.len();
    for (i, cand) in refined {
        if cand.0 < best.0 - 1e-12 {
            best = cand;
            best_idx = i;
        }
    }
    let _ = best_idx;
    let (upper, rows, poly, p_z_can) = best;

    // lower bound: re-certify the incumbent triple with a tighter
    // inner minimization
    let prob = InnerProblem::new(cspec, &strat, p_z_can.mass(), &rows);
    let (iuy, q_can) = prob.minimize(&poly, (tol * 0.01).max(1e-10), 400);
    let lower = clamp_value(iuy - prob.i_uz);
    let value = upper;

    Ok(CapacityReport {
        value,
        lower_bound: lower.min(value),
        upper_bound: upper,
        argmin_p_z: canon.p_z_back(p_z_can.mass(), spec.z_alphabet())?,
        argmax_p_u_given_z: canon.p_u_back(&rows, spec)?,
        argmin_q_s: canon.q_back(&q_can, spec.s_alphabet())?,
        grid_resolution: grid_k,
        iterations,
        wall_time: start.elapsed(),
    })
}

/// `I(X;Y)` when X and the adversary state are independent:
/// `J(x,y) = p_x(x) sum_s q_s W(y|x,s)`.
fn i_xy(spec: &SystemSpec, p_x: &[f64], q: &[f64]) -> f64 {
    let nx = spec.x_alphabet().size();
    let ns = spec.s_alphabet().size();
    let ny = spec.y_alphabet().size();
    let mut j = vec![0.0; nx * ny];
    for x in 0..nx {
        for s in 0..ns {
            let m = p_x[x] * q[s];
            if m == 0.0 {
                continue;
            }
            for y in 0..ny {
                j[x * ny + y] += m * spec.w_prob(y, x, s);
            }
        }
    }
    crate::prob::mutual_information_raw(&j, nx, ny)
}

/// Worst-case `min_Q I(X;Y)` for a fixed `p_x`; the minimum over the
/// full simplex of a convex function, found by conditional gradient
/// over the corner vertices (implemented as a fine grid plus descent
/// refinement for robustness at kinks).
fn worst_case_ixy(spec: &SystemSpec, p_x: &[f64], grid_k: usize) -> f64 {
    let ns = spec.s_alphabet().size();
    let mut best = f64::INFINITY;
    let mut best_q = vec![1.0 / ns as f64; ns];
    for q in simplex_grid(ns, grid_k.max(8)) {
        let v = i_xy(spec, p_x, &q);
        if v < best {
            best = v;
            best_q = q;
        }
    }
    // local descent refinement around the grid incumbent
    let mut q = best_q;
    let mut step = 1.0 / grid_k.max(8) as f64;
    let mut proj = Vec::new();
    for _ in 0..60 {
        let h = 1e-6;
        let base = i_xy(spec, p_x, &q);
        let mut grad = vec![0.0; ns];
        for s in 0..ns {
            let mut pert = q.clone();
            pert[s] += h;
            project_simplex(&pert, &mut proj);
            grad[s] = (i_xy(spec, p_x, &proj) - base) / h;
        }
        let norm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm < 1e-12 {
            break;
        }
        let mut improved = false;
        let mut t = step;
        while t > 1e-9 {
            let cand: Vec<f64> = q.iter().zip(&grad).map(|(x, g)| x - t * g / norm).collect();
            project_simplex(&cand, &mut proj);
            let v = i_xy(spec, p_x, &proj);
            if v < best - 1e-12 {
                q = proj.clone();
                best = v;
                step = t * 1.5;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    best.max(0.0)
}

/// Oblivious-encoder capacity `max_{P_X} min_{Q_S} I(X;Y)` with its
/// maximizing input distribution.
pub fn capacity_oblivious_with_arg(spec: &SystemSpec, grid_k: usize) -> Result<(f64, Dist)> {
    let canon = canonicalize(spec);
    let cspec = &canon.spec;
    let nx = cspec.x_alphabet().size();
    let pts = simplex_grid(nx, grid_k.max(1));
    let scored: Vec<(usize, f64, Vec<f64>)> = pts
        .par_iter()
        .enumerate()
        .map(|(i, p)| (i, worst_case_ixy(cspec, p, grid_k), p.clone()))
        .collect();
    let (_, mut best, mut p_best) = scored
        .into_iter()
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .ok_or_else(|| AvcError::invalid("empty grid"))?;
    // ascent refinement on p_x (the worst-case value is concave in p_x)
    let mut step = 1.0 / grid_k.max(1) as f64;
    let mut proj = Vec::new();
    for _ in 0..60 {
        let h = 1e-5;
        let mut grad = vec![0.0; nx];
        for x in 0..nx {
            let mut pert = p_best.clone();
            pert[x] += h;
            project_simplex(&pert, &mut proj);
            grad[x] = (worst_case_ixy(cspec, &proj, grid_k) - best) / h;
        }
        let norm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm < 1e-12 {
            break;
        }
        let mut improved = false;
        let mut t = step;
        while t > 1e-8 {
            let cand: Vec<f64> = p_best.iter().zip(&grad).map(|(x, g)| x + t * g / norm).collect();
            project_simplex(&cand, &mut proj);
            let v = worst_case_ixy(cspec, &proj, grid_k);
            if v > best + 1e-12 {
                p_best = proj.clone();
                best = v;
                step = t * 1.5;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    // p_x lives on X; map back through the X permutation
    let mass: Vec<f64> = (0..nx).map(|x| p_best[canon.px[x]]).collect();
    Ok((best.max(0.0), dist_from_raw(spec.x_alphabet().clone(), mass)?))
}

/// Oblivious-encoder capacity (the encoder learns nothing about S).
pub fn capacity_oblivious(spec: &SystemSpec, grid_k: usize) -> Result<f64> {
    capacity_oblivious_with_arg(spec, grid_k).map(|(v, _)| v)
}

/// Omniscient-encoder capacity
/// `min_{Q_S} max_{P(U|S), x} I(U;Y) - I(U;S)`, computed with the
/// middle-max machinery on a derived spec whose observation channel is
/// the identity on S.
pub fn capacity_omniscient(spec: &SystemSpec, grid_k: usize) -> Result<f64> {
    let canon = canonicalize(spec);
    let cspec = &canon.spec;
    let derived = omniscient_spec(cspec)?;
    let strat = derived.strategies()?;
    let ns = derived.s_alphabet().size();
    let pts = simplex_grid(ns, grid_k.max(1));
    let eval = |q: &[f64], idx: usize| -> Result<f64> {
        let p_z = dist_from_raw(derived.z_alphabet().clone(), q.to_vec())?;
        let poly = MarginalPolytope::new(derived.obs(), &p_z)?;
        let (v, _) = middle_max_raw(
            &derived,
            &strat,
            &poly,
            DEFAULT_TOL,
            RESTARTS,
            SOLVER_SEED ^ 0xa11 ^ idx as u64,
        );
        Ok(v)
    };
    let scored: Vec<(usize, f64, Vec<f64>)> = pts
        .par_iter()
        .enumerate()
        .map(|(i, q)| Ok((i, eval(q, i)?, q.clone())))
        .collect::<Result<Vec<_>>>()?;
    let (_, mut best, q_best) = scored
        .into_iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .ok_or_else(|| AvcError::invalid("empty grid"))?;
    // halving refinement near the incumbent
    let radius = 1.0 / grid_k.max(1) as f64;
    let fine: Vec<Vec<f64>> = simplex_grid(ns, grid_k.max(1) * 2)
        .into_iter()
        .filter(|q| linf(q, &q_best) <= radius + 1e-12)
        .collect();
    let refined: Vec<f64> = fine
        .par_iter()
        .enumerate()
        .map(|(i, q)| eval(q, 200_000 + i))
        .collect::<Result<Vec<_>>>()?;
    for v in refined {
        if v < best {
            best = v;
        }
    }
    Ok(best)
}

/// Derived spec where the encoder observes the state exactly.
fn omniscient_spec(spec: &SystemSpec) -> Result<SystemSpec> {
    let ns = spec.s_alphabet().size();
    let nx = spec.x_alphabet().size();
    let ny = spec.y_alphabet().size();
    let mut w_rows = Vec::with_capacity(nx * ns);
    for x in 0..nx {
        for s in 0..ns {
            w_rows.push((0..ny).map(|y| spec.w_prob(y, x, s)).collect());
        }
    }
    let mut obs_rows = vec![vec![0.0; ns]; ns];
    for (s, row) in obs_rows.iter_mut().enumerate() {
        row[s] = 1.0;
    }
    SystemSpec::from_tables(nx, ns, &w_rows, &obs_rows)
}

/// Exhaustive grid evaluation of the min-max-min: pure enumeration on
/// denominator-`grid_k` simplex grids at all three levels, no local
/// search. Used as an independent verification oracle.
pub fn brute_force_oracle(spec: &SystemSpec, grid_k: usize) -> Result<f64> {
    let strat = spec.strategies()?;
    let ns = spec.s_alphabet().size();
    let nz = spec.z_alphabet().size();
    let nu = strat.num_strategies();
    let ny = spec.y_alphabet().size();

    let q_pts = simplex_grid(ns, grid_k);
    let per_row = crate::prob::type_count(nu, grid_k as u64) as usize;
    let combos = per_row.checked_pow(nz as u32).unwrap_or(usize::MAX);
    if q_pts.len().saturating_add(combos) > 10_000_000 {
        return Err(AvcError::CapacityLimit(format!(
            "oracle grid needs {} q-points and {combos} row combos",
            q_pts.len()
        )));
    }

    // group q grid points into buckets of equal induced P_Z
    let mut bucket_keys: Vec<Vec<f64>> = Vec::new();
    let mut buckets: Vec<Vec<usize>> = Vec::new();
    for (i, q) in q_pts.iter().enumerate() {
        let img = push_through(q, spec.obs());
        match bucket_keys.iter().position(|k| linf(k, &img) <= 1e-9) {
            Some(b) => buckets[b].push(i),
            None => {
                bucket_keys.push(img);
                buckets.push(vec![i]);
            }
        }
    }
    let nb = buckets.len();
    let row_opts = simplex_grid(nu, grid_k);

    // stream over P(U|Z) row combos, keeping per-bucket running maxima
    // of (min over the bucket's Q_S points)
    let best_per_bucket: Vec<f64> = (0..row_opts.len())
        .into_par_iter()
        .map(|first| {
            let mut local = vec![f64::NEG_INFINITY; nb];
            let mut combo_idx = vec![0usize; nz];
            combo_idx[0] = first;
            let mut juz = vec![0.0; nu * nz];
            let mut juy = vec![0.0; nu * ny];
            loop {
                let rows: Vec<&[f64]> = combo_idx.iter().map(|&i| row_opts[i].as_slice()).collect();
                for (b, members) in buckets.iter().enumerate() {
                    let mut mn = f64::INFINITY;
                    for &qi in members {
                        let v = objective_scratch(
                            spec, &strat, &q_pts[qi], &rows, &mut juz, &mut juy,
                        );
                        if v < mn {
                            mn = v;
                        }
                    }
                    if mn > local[b] {
                        local[b] = mn;
                    }
                }
                // advance all positions except the parallel first one
                let mut d = nz;
                let mut done = nz == 1;
                while d > 1 {
                    d -= 1;
                    combo_idx[d] += 1;
                    if combo_idx[d] < row_opts.len() {
                        break;
                    }
                    combo_idx[d] = 0;
                    if d == 1 {
                        done = true;
                    }
                }
                if done {
                    break;
                }
            }
            local
        })
        .reduce(
            || vec![f64::NEG_INFINITY; nb],
            |mut acc, local| {
                for (a, l) in acc.iter_mut().zip(local) {
                    if l > *a {
                        *a = l;
                    }
                }
                acc
            },
        );

    Ok(best_per_bucket
        .into_iter()
        .fold(f64::INFINITY, f64::min)
        .max(0.0))
}

/// The objective `I(U;Y) - I(U;Z)` with caller-provided scratch
/// buffers; the oracle's hot loop.
fn objective_scratch(
    spec: &SystemSpec,
    strat: &StrategyTable,
    q: &[f64],
    rows: &[&[f64]],
    juz: &mut [f64],
    juy: &mut [f64],
) -> f64 {
    let ns = spec.s_alphabet().size();
    let nz = spec.z_alphabet().size();
    let nu = strat.num_strategies();
    let ny = spec.y_alphabet().size();
    juz.fill(0.0);
    juy.fill(0.0);
    for s in 0..ns {
        let qs = q[s];
        if qs == 0.0 {
            continue;
        }
        for z in 0..nz {
            let psz = qs * spec.obs_prob(z, s);
            if psz == 0.0 {
                continue;
            }
            for u in 0..nu {
                let m = psz * rows[z][u];
                if m == 0.0 {
                    continue;
                }
                juz[u * nz + z] += m;
                let x = strat.apply(u, z);
                for y in 0..ny {
                    juy[u * ny + y] += m * spec.w_prob(y, x, s);
                }
            }
        }
    }
    crate::prob::mutual_information_raw(juy, nu, ny)
        - crate::prob::mutual_information_raw(juz, nu, nz)
}
