//! Dense Levenberg-Marquardt over manifold-aware parameter blocks.
//!
//! The cost is `1/2 * sum_i rho_i(|r_i|^2)`. Blocks flagged for elimination
//! (typically 3D points) are removed with a Schur complement when every
//! residual touches at most one of them; the reduced system is solved with a
//! dense Cholesky factorization.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::loss::RobustLoss;
use super::manifold::{plus, plus_jacobian, Manifold};
use super::OptimError;
use crate::numerics;

pub type BlockId = usize;

/// A residual function of one or more parameter blocks.
pub trait CostFunction: Send + Sync {
    fn num_residuals(&self) -> usize;

    /// Residual vector, or `None` when it cannot be evaluated at `params`.
    fn residuals(&self, params: &[&[f64]]) -> Option<DVector<f64>>;

    /// Jacobians with respect to the ambient parameters of each block
    /// (`num_residuals x block_len`). A `None` entry, or `None` overall,
    /// selects central finite differences in the tangent space.
    fn jacobians(&self, _params: &[&[f64]]) -> Option<Vec<Option<DMatrix<f64>>>> {
        None
    }

    /// Residuals together with the analytic Jacobians.
    #[allow(clippy::type_complexity)]
    fn residuals_and_jacobians(
        &self,
        params: &[&[f64]],
    ) -> Option<(DVector<f64>, Option<Vec<Option<DMatrix<f64>>>>)> {
        Some((self.residuals(params)?, self.jacobians(params)))
    }
}

/// Cost function backed by a closure; derivatives by finite differences.
pub struct FnCost<F> {
    num_residuals: usize,
    f: F,
}

impl<F> FnCost<F>
where
    F: Fn(&[&[f64]]) -> Option<DVector<f64>> + Send + Sync,
{
    pub fn new(num_residuals: usize, f: F) -> Self {
        Self { num_residuals, f }
    }
}

impl<F> CostFunction for FnCost<F>
where
    F: Fn(&[&[f64]]) -> Option<DVector<f64>> + Send + Sync,
{
    fn num_residuals(&self) -> usize {
        self.num_residuals
    }

    fn residuals(&self, params: &[&[f64]]) -> Option<DVector<f64>> {
        (self.f)(params)
    }
}

#[derive(Debug, Clone)]
pub struct ParameterBlock {
    pub values: Vec<f64>,
    pub manifold: Manifold,
    pub constant: bool,
    /// Euclidean components held fixed.
    pub constant_indices: Vec<usize>,
    pub eliminate: bool,
}

impl ParameterBlock {
    fn free_indices(&self) -> Vec<usize> {
        match self.manifold {
            Manifold::Euclidean => (0..self.values.len())
                .filter(|i| !self.constant_indices.contains(i))
                .collect(),
            _ => Vec::new(),
        }
    }

    fn tangent_dim(&self) -> usize {
        if self.constant {
            return 0;
        }
        match self.manifold {
            Manifold::Euclidean => self.free_indices().len(),
            m => m.tangent_dim(self.values.len()),
        }
    }
}

struct ResidualBlock {
    cost: Box<dyn CostFunction>,
    loss: RobustLoss,
    blocks: Vec<BlockId>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LMOptions {
    pub max_iterations: usize,
    pub function_tolerance: f64,
    pub gradient_tolerance: f64,
    pub parameter_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for LMOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            function_tolerance: 1e-10,
            gradient_tolerance: 1e-12,
            parameter_tolerance: 1e-10,
            initial_damping: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    FunctionTolerance,
    GradientTolerance,
    ParameterTolerance,
    /// The damping grew without finding a cost decrease.
    NoProgress,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub termination: Termination,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.termination != Termination::MaxIterations
    }
}

#[derive(Default)]
pub struct Problem {
    blocks: Vec<ParameterBlock>,
    residuals: Vec<ResidualBlock>,
}

struct Layout {
    /// Offset of every non-constant block in its system (reduced or eliminated).
    offset: Vec<Option<usize>>,
    /// Index into the eliminated-block list, if eliminated.
    elim: Vec<Option<usize>>,
    tangent: Vec<usize>,
    free: Vec<Vec<usize>>,
    n_reduced: usize,
    elim_blocks: Vec<BlockId>,
}

struct Linearization {
    cost: f64,
    h_cc: DMatrix<f64>,
    g_c: DVector<f64>,
    h_pp: Vec<DMatrix<f64>>,
    g_p: Vec<DVector<f64>>,
    /// Per eliminated block: reduced block id -> (reduced dim x elim dim).
    h_cp: Vec<BTreeMap<BlockId, DMatrix<f64>>>,
}

impl Problem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_block(&mut self, values: Vec<f64>, manifold: Manifold) -> BlockId {
        assert_eq!(
            manifold.ambient_dim(values.len()),
            values.len(),
            "block size does not match its manifold"
        );
        self.blocks.push(ParameterBlock {
            values,
            manifold,
            constant: false,
            constant_indices: Vec::new(),
            eliminate: false,
        });
        self.blocks.len() - 1
    }

    pub fn add_residual(
        &mut self,
        cost: Box<dyn CostFunction>,
        loss: RobustLoss,
        blocks: Vec<BlockId>,
    ) {
        assert!(blocks.iter().all(|&b| b < self.blocks.len()), "unknown block id");
        self.residuals.push(ResidualBlock { cost, loss, blocks });
    }

    pub fn set_constant(&mut self, block: BlockId, constant: bool) {
        self.blocks[block].constant = constant;
    }

    pub fn set_constant_indices(&mut self, block: BlockId, indices: Vec<usize>) {
        assert_eq!(self.blocks[block].manifold, Manifold::Euclidean);
        self.blocks[block].constant_indices = indices;
    }

    pub fn set_eliminate(&mut self, block: BlockId, eliminate: bool) {
        self.blocks[block].eliminate = eliminate;
    }

    pub fn block(&self, block: BlockId) -> &[f64] {
        &self.blocks[block].values
    }

    pub fn block_info(&self, block: BlockId) -> &ParameterBlock {
        &self.blocks[block]
    }

    pub fn set_block_values(&mut self, block: BlockId, values: Vec<f64>) {
        assert_eq!(values.len(), self.blocks[block].values.len());
        self.blocks[block].values = values;
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn num_residual_blocks(&self) -> usize {
        self.residuals.len()
    }

    /// Current cost `1/2 sum rho(|r|^2)`.
    pub fn cost(&self) -> Result<f64, OptimError> {
        self.cost_at(&self.current_values())
            .ok_or(OptimError::NumericalFailure("non-finite residual"))
    }

    /// Raw residual vectors of every residual block, in insertion order.
    pub fn evaluate_residuals(&self) -> Vec<Option<DVector<f64>>> {
        let values = self.current_values();
        self.residuals
            .iter()
            .map(|res| {
                let params: Vec<&[f64]> = res.blocks.iter().map(|&b| values[b].as_slice()).collect();
                res.cost.residuals(&params)
            })
            .collect()
    }

    fn current_values(&self) -> Vec<Vec<f64>> {
        self.blocks.iter().map(|b| b.values.clone()).collect()
    }

    fn cost_at(&self, values: &[Vec<f64>]) -> Option<f64> {
        let mut total = 0.0;
        for res in &self.residuals {
            let params: Vec<&[f64]> = res.blocks.iter().map(|&b| values[b].as_slice()).collect();
            let r = res.cost.residuals(&params)?;
            if r.len() != res.cost.num_residuals() || !r.iter().all(|v| v.is_finite()) {
                return None;
            }
            total += 0.5 * res.loss.evaluate(r.norm_squared()).0;
        }
        Some(total)
    }

    fn layout(&self) -> Layout {
        let n = self.blocks.len();
        let mut elim_ok = true;
        for res in &self.residuals {
            let count = res
                .blocks
                .iter()
                .filter(|&&b| self.blocks[b].eliminate && !self.blocks[b].constant)
                .count();
            if count > 1 {
                elim_ok = false;
                break;
            }
        }
        let mut offset = vec![None; n];
        let mut elim = vec![None; n];
        let mut tangent = vec![0; n];
        let mut free = vec![Vec::new(); n];
        let mut n_reduced = 0;
        let mut elim_blocks = Vec::new();
        for (id, block) in self.blocks.iter().enumerate() {
            tangent[id] = block.tangent_dim();
            free[id] = block.free_indices();
            if tangent[id] == 0 {
                continue;
            }
            if elim_ok && block.eliminate {
                elim[id] = Some(elim_blocks.len());
                offset[id] = Some(0);
                elim_blocks.push(id);
            } else {
                offset[id] = Some(n_reduced);
                n_reduced += tangent[id];
            }
        }
        Layout {
            offset,
            elim,
            tangent,
            free,
            n_reduced,
            elim_blocks,
        }
    }

    fn residual_jacobians(
        &self,
        res: &ResidualBlock,
        values: &[Vec<f64>],
        layout: &Layout,
    ) -> Option<(DVector<f64>, Vec<(BlockId, DMatrix<f64>)>)> {
        let params: Vec<&[f64]> = res.blocks.iter().map(|&b| values[b].as_slice()).collect();
        let (r, mut analytic) = res.cost.residuals_and_jacobians(&params)?;
        if !r.iter().all(|v| v.is_finite()) {
            return None;
        }
        let mut jacs = Vec::new();
        for (k, &b) in res.blocks.iter().enumerate() {
            if layout.offset[b].is_none() {
                continue;
            }
            let block = &self.blocks[b];
            let given = analytic.as_mut().and_then(|a| a.get_mut(k).and_then(Option::take));
            let j = match given {
                Some(ja) => ja * plus_jacobian(block.manifold, &values[b], &layout.free[b]),
                None => {
                    self.numeric_jacobian(res, values, k, layout.tangent[b], &layout.free[b], r.len())?
                }
            };
            jacs.push((b, j));
        }
        Some((r, jacs))
    }

    fn numeric_jacobian(
        &self,
        res: &ResidualBlock,
        values: &[Vec<f64>],
        k: usize,
        tangent: usize,
        free: &[usize],
        m: usize,
    ) -> Option<DMatrix<f64>> {
        let b = res.blocks[k];
        let block = &self.blocks[b];
        let x = &values[b];
        let mut j = DMatrix::zeros(m, tangent);
        let mut delta = vec![0.0; tangent];
        for t in 0..tangent {
            let h = match block.manifold {
                Manifold::Euclidean => numerics::FD_RELATIVE_STEP * x[free[t]].abs().max(1.0),
                _ => numerics::FD_RELATIVE_STEP,
            };
            delta[t] = h;
            let xp = plus(block.manifold, x, &delta, free);
            delta[t] = -h;
            let xm = plus(block.manifold, x, &delta, free);
            delta[t] = 0.0;
            let eval = |xv: &Vec<f64>| {
                let params: Vec<&[f64]> = res
                    .blocks
                    .iter()
                    .enumerate()
                    .map(|(i, &bb)| if i == k { xv.as_slice() } else { values[bb].as_slice() })
                    .collect();
                res.cost.residuals(&params)
            };
            let rp = eval(&xp)?;
            let rm = eval(&xm)?;
            let col = (rp - rm) / (2.0 * h);
            j.set_column(t, &col);
        }
        Some(j)
    }

    fn linearize(&self, values: &[Vec<f64>], layout: &Layout) -> Option<Linearization> {
        let nc = layout.n_reduced;
        let ne = layout.elim_blocks.len();
        let mut lin = Linearization {
            cost: 0.0,
            h_cc: DMatrix::zeros(nc, nc),
            g_c: DVector::zeros(nc),
            h_pp: layout
                .elim_blocks
                .iter()
                .map(|&b| DMatrix::zeros(layout.tangent[b], layout.tangent[b]))
                .collect(),
            g_p: layout
                .elim_blocks
                .iter()
                .map(|&b| DVector::zeros(layout.tangent[b]))
                .collect(),
            h_cp: vec![BTreeMap::new(); ne],
        };
        for res in &self.residuals {
            let (r, jacs) = self.residual_jacobians(res, values, layout)?;
            let s = r.norm_squared();
            let (rho, drho) = res.loss.evaluate(s);
            lin.cost += 0.5 * rho;
            let w = drho.max(0.0).sqrt();
            let r = r * w;
            let jacs: Vec<(BlockId, DMatrix<f64>)> = jacs.into_iter().map(|(b, j)| (b, j * w)).collect();
            let point = jacs.iter().find(|(b, _)| layout.elim[*b].is_some());
            // Stack the reduced-system blocks so each residual costs one product.
            let spans: Vec<(BlockId, usize, usize)> = jacs
                .iter()
                .filter(|(b, _)| layout.elim[*b].is_none())
                .map(|(b, _)| (*b, layout.offset[*b].unwrap(), layout.tangent[*b]))
                .collect();
            let cols: usize = spans.iter().map(|s| s.2).sum();
            let mut jc = DMatrix::zeros(r.len(), cols);
            let mut col = 0;
            for (b, j) in &jacs {
                if layout.elim[*b].is_none() {
                    jc.view_mut((0, col), (j.nrows(), j.ncols())).copy_from(j);
                    col += j.ncols();
                }
            }
            let jct = jc.transpose();
            let hcc = &jct * &jc;
            let gc = &jct * &r;
            let mut ci = 0;
            for &(_, oa, da) in &spans {
                let mut gv = lin.g_c.rows_mut(oa, da);
                gv += &gc.rows(ci, da);
                let mut cj = 0;
                for &(_, ob, db) in &spans {
                    let mut hv = lin.h_cc.view_mut((oa, ob), (da, db));
                    hv += &hcc.view((ci, cj), (da, db));
                    cj += db;
                }
                ci += da;
            }
            if let Some((p, jp)) = point {
                let e = layout.elim[*p].unwrap();
                let cross = &jct * jp;
                let mut ci = 0;
                for &(a, _, da) in &spans {
                    let block = cross.rows(ci, da);
                    lin.h_cp[e]
                        .entry(a)
                        .and_modify(|m| *m += &block)
                        .or_insert_with(|| block.into_owned());
                    ci += da;
                }
                let jpt = jp.transpose();
                lin.h_pp[e] += &jpt * jp;
                lin.g_p[e] += &jpt * &r;
            }
        }
        Some(lin)
    }

    fn solve_step(
        &self,
        lin: &Linearization,
        layout: &Layout,
        damping: f64,
    ) -> Option<(DVector<f64>, Vec<DVector<f64>>)> {
        let nc = layout.n_reduced;
        let diag_scale = |v: f64| v.clamp(1e-6, 1e32);
        let mut s = lin.h_cc.clone();
        for i in 0..nc {
            s[(i, i)] += damping * diag_scale(lin.h_cc[(i, i)]);
        }
        let mut rhs = -lin.g_c.clone();
        let mut inverses = Vec::with_capacity(lin.h_pp.len());
        for (e, hpp) in lin.h_pp.iter().enumerate() {
            let mut hd = hpp.clone();
            for i in 0..hd.nrows() {
                hd[(i, i)] += damping * diag_scale(hpp[(i, i)]);
            }
            let inv = hd.clone().cholesky()?.inverse();
            // Stack the camera-point blocks so the update is one dense product.
            let spans: Vec<(usize, usize)> = lin.h_cp[e]
                .keys()
                .map(|a| (layout.offset[*a].unwrap(), layout.tangent[*a]))
                .collect();
            let rows: usize = spans.iter().map(|s| s.1).sum();
            let mut w = DMatrix::zeros(rows, hpp.ncols());
            let mut row = 0;
            for m in lin.h_cp[e].values() {
                w.view_mut((row, 0), (m.nrows(), m.ncols())).copy_from(m);
                row += m.nrows();
            }
            let wi = &w * &inv;
            let u = &wi * &lin.g_p[e];
            let update = &wi * w.transpose();
            let mut ri = 0;
            for &(oa, da) in &spans {
                let mut rv = rhs.rows_mut(oa, da);
                rv += &u.rows(ri, da);
                let mut rj = 0;
                for &(ob, db) in &spans {
                    let mut sv = s.view_mut((oa, ob), (da, db));
                    sv -= &update.view((ri, rj), (da, db));
                    rj += db;
                }
                ri += da;
            }
            inverses.push(inv);
        }
        let delta_c = if nc > 0 {
            let chol = s.cholesky()?;
            chol.solve(&rhs)
        } else {
            DVector::zeros(0)
        };
        let mut delta_p = Vec::with_capacity(inverses.len());
        for (e, inv) in inverses.iter().enumerate() {
            let mut b = -lin.g_p[e].clone();
            for (a, m) in &lin.h_cp[e] {
                let oa = layout.offset[*a].unwrap();
                let da = layout.tangent[*a];
                b -= m.transpose() * delta_c.rows(oa, da);
            }
            delta_p.push(inv * b);
        }
        if !delta_c.iter().all(|v| v.is_finite()) || !delta_p.iter().all(|d| d.iter().all(|v| v.is_finite())) {
            return None;
        }
        Some((delta_c, delta_p))
    }

    fn apply_step(
        &self,
        values: &[Vec<f64>],
        layout: &Layout,
        delta_c: &DVector<f64>,
        delta_p: &[DVector<f64>],
    ) -> Vec<Vec<f64>> {
        values
            .iter()
            .enumerate()
            .map(|(id, x)| match (layout.offset[id], layout.elim[id]) {
                (None, _) => x.clone(),
                (Some(_), Some(e)) => plus(self.blocks[id].manifold, x, delta_p[e].as_slice(), &layout.free[id]),
                (Some(o), None) => {
                    let d: Vec<f64> = delta_c.rows(o, layout.tangent[id]).iter().copied().collect();
                    plus(self.blocks[id].manifold, x, &d, &layout.free[id])
                }
            })
            .collect()
    }

    /// Runs Levenberg-Marquardt from the current block values. Accepted
    /// steps never increase the cost; the best parameters are written back
    /// even when the iteration limit is hit.
    pub fn solve(&mut self, options: &LMOptions) -> Result<SolveReport, OptimError> {
        if !(options.initial_damping > 0.0
            && options.function_tolerance > 0.0
            && options.gradient_tolerance > 0.0)
        {
            return Err(OptimError::InvalidProblem("LM options must be positive".into()));
        }
        for res in &self.residuals {
            if !res.loss.is_valid() {
                return Err(OptimError::InvalidProblem("robust loss scale must be positive".into()));
            }
        }
        let layout = self.layout();
        let mut values = self.current_values();
        let initial_cost = self
            .cost_at(&values)
            .ok_or(OptimError::NumericalFailure("non-finite residual at the initial point"))?;
        let mut report = SolveReport {
            initial_cost,
            final_cost: initial_cost,
            iterations: 0,
            accepted_steps: 0,
            termination: Termination::MaxIterations,
        };
        if layout.n_reduced == 0 && layout.elim_blocks.is_empty() {
            report.termination = Termination::ParameterTolerance;
            return Ok(report);
        }
        let mut cost = initial_cost;
        let mut damping = options.initial_damping;
        let mut nu = 2.0;
        let mut lin = self
            .linearize(&values, &layout)
            .ok_or(OptimError::NumericalFailure("jacobian evaluation failed"))?;

        loop {
            let grad_max = lin
                .g_c
                .amax()
                .max(lin.g_p.iter().map(|g| g.amax()).fold(0.0, f64::max));
            if grad_max < options.gradient_tolerance || cost == 0.0 {
                report.termination = Termination::GradientTolerance;
                break;
            }
            if report.iterations >= options.max_iterations {
                report.termination = Termination::MaxIterations;
                break;
            }
            if damping > 1e32 {
                report.termination = Termination::NoProgress;
                break;
            }
            report.iterations += 1;

            let Some((delta_c, delta_p)) = self.solve_step(&lin, &layout, damping) else {
                damping *= nu;
                nu *= 2.0;
                continue;
            };
            let step_norm = (delta_c.norm_squared()
                + delta_p.iter().map(|d| d.norm_squared()).sum::<f64>())
            .sqrt();
            let x_norm = values.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
            if step_norm < options.parameter_tolerance * (x_norm + options.parameter_tolerance) {
                report.termination = Termination::ParameterTolerance;
                break;
            }

            let candidate = self.apply_step(&values, &layout, &delta_c, &delta_p);
            let new_cost = self.cost_at(&candidate);
            let predicted = {
                let mut p = -lin.g_c.dot(&delta_c);
                for (e, d) in delta_p.iter().enumerate() {
                    p -= lin.g_p[e].dot(d);
                }
                let diag = |h: &DMatrix<f64>, d: &DVector<f64>| -> f64 {
                    (0..d.len()).map(|i| h[(i, i)].clamp(1e-6, 1e32) * d[i] * d[i]).sum()
                };
                let mut reg = 0.0;
                for i in 0..delta_c.len() {
                    reg += lin.h_cc[(i, i)].clamp(1e-6, 1e32) * delta_c[i] * delta_c[i];
                }
                for (e, d) in delta_p.iter().enumerate() {
                    reg += diag(&lin.h_pp[e], d);
                }
                0.5 * (p + damping * reg)
            };
            match new_cost {
                Some(nc) if nc < cost => {
                    let rho = if predicted > 0.0 { (cost - nc) / predicted } else { 1.0 };
                    let relative = (cost - nc) / cost.max(f64::MIN_POSITIVE);
                    values = candidate;
                    cost = nc;
                    report.accepted_steps += 1;
                    damping *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
                    nu = 2.0;
                    if relative < options.function_tolerance {
                        report.termination = Termination::FunctionTolerance;
                        break;
                    }
                    lin = match self.linearize(&values, &layout) {
                        Some(l) => l,
                        None => {
                            report.termination = Termination::NoProgress;
                            break;
                        }
                    };
                }
                _ => {
                    damping *= nu;
                    nu *= 2.0;
                }
            }
        }

        for (block, v) in self.blocks.iter_mut().zip(values) {
            block.values = v;
        }
        report.final_cost = cost;
        Ok(report)
    }

    /// Tangent-space Jacobian of every residual block (unweighted by the
    /// loss), for derivative checks.
    pub fn residual_block_jacobians(&self, index: usize) -> Option<Vec<(BlockId, DMatrix<f64>)>> {
        let layout = self.layout();
        let values = self.current_values();
        self.residual_jacobians(&self.residuals[index], &values, &layout)
            .map(|(_, j)| j)
    }

    /// Same as [`Problem::residual_block_jacobians`] but always by central
    /// differences.
    pub fn residual_block_numeric_jacobians(&self, index: usize) -> Option<Vec<(BlockId, DMatrix<f64>)>> {
        let layout = self.layout();
        let values = self.current_values();
        let res = &self.residuals[index];
        let m = res.cost.num_residuals();
        let mut out = Vec::new();
        for (k, &b) in res.blocks.iter().enumerate() {
            if layout.offset[b].is_none() {
                continue;
            }
            out.push((b, self.numeric_jacobian(res, &values, k, layout.tangent[b], &layout.free[b], m)?));
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_problem() -> (Problem, BlockId, DVector<f64>) {
        // Overdetermined A x = b with an inconsistent right-hand side.
        let a = DMatrix::from_row_slice(5, 3, &[
            1.0, 2.0, 0.5, //
            -1.0, 0.3, 2.0, //
            0.7, -1.1, 1.0, //
            2.0, 0.0, -0.4, //
            0.1, 0.9, 0.3,
        ]);
        let b = DVector::from_row_slice(&[1.0, -2.0, 0.5, 3.0, 0.25]);
        let expected = (a.transpose() * &a).cholesky().unwrap().solve(&(a.transpose() * &b));
        let mut p = Problem::new();
        let x = p.add_block(vec![0.0; 3], Manifold::Euclidean);
        let (a2, b2) = (a.clone(), b.clone());
        p.add_residual(
            Box::new(FnCost::new(5, move |params: &[&[f64]]| {
                let x = DVector::from_column_slice(params[0]);
                Some(&a2 * x - &b2)
            })),
            RobustLoss::Trivial,
            vec![x],
        );
        (p, x, expected)
    }

    #[test]
    fn linear_least_squares_in_two_iterations() {
        let (mut p, x, expected) = linear_problem();
        let opts = LMOptions {
            max_iterations: 2,
            ..Default::default()
        };
        let report = p.solve(&opts).unwrap();
        assert!(report.iterations <= 2);
        let got = DVector::from_column_slice(p.block(x));
        assert!((got - &expected).amax() < 1e-6 * expected.amax());
    }

    #[test]
    fn rosenbrock_reaches_known_minimum() {
        let mut p = Problem::new();
        let x = p.add_block(vec![-1.2, 1.0], Manifold::Euclidean);
        p.add_residual(
            Box::new(FnCost::new(2, |params: &[&[f64]]| {
                let (a, b) = (params[0][0], params[0][1]);
                Some(DVector::from_row_slice(&[10.0 * (b - a * a), 1.0 - a]))
            })),
            RobustLoss::Trivial,
            vec![x],
        );
        let report = p.solve(&LMOptions::default()).unwrap();
        assert!(report.converged());
        assert!((p.block(x)[0] - 1.0).abs() < 1e-8);
        assert!((p.block(x)[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn already_optimal_does_not_move() {
        let (mut p, x, expected) = linear_problem();
        p.set_block_values(x, expected.iter().copied().collect());
        let report = p.solve(&LMOptions::default()).unwrap();
        assert!(report.iterations <= 1);
        let got = DVector::from_column_slice(p.block(x));
        assert!((got - expected).amax() < 1e-12);
    }

    #[test]
    fn non_finite_initial_residual_is_an_error() {
        let mut p = Problem::new();
        let x = p.add_block(vec![0.0], Manifold::Euclidean);
        p.add_residual(
            Box::new(FnCost::new(1, |params: &[&[f64]]| {
                Some(DVector::from_element(1, 1.0 / params[0][0]))
            })),
            RobustLoss::Trivial,
            vec![x],
        );
        assert!(matches!(p.solve(&LMOptions::default()), Err(OptimError::NumericalFailure(_))));
    }

    #[test]
    fn schur_matches_dense_solution() {
        // Fit points and a shared offset; points are eliminated in one run only.
        let targets = [[1.0, 2.0], [0.5, -1.0], [3.0, 0.2]];
        let run = |eliminate: bool| {
            let mut p = Problem::new();
            let shift = p.add_block(vec![0.0, 0.0], Manifold::Euclidean);
            let mut pts = Vec::new();
            for t in targets {
                let id = p.add_block(vec![0.0, 0.0], Manifold::Euclidean);
                p.set_eliminate(id, eliminate);
                pts.push(id);
                p.add_residual(
                    Box::new(FnCost::new(2, move |params: &[&[f64]]| {
                        let (pt, s) = (params[0], params[1]);
                        Some(DVector::from_row_slice(&[
                            pt[0] + s[0] - t[0] + 0.1 * (pt[0] * pt[1]).sin(),
                            pt[1] + s[1] - t[1],
                        ]))
                    })),
                    RobustLoss::Trivial,
                    vec![id, shift],
                );
                p.add_residual(
                    Box::new(FnCost::new(2, move |params: &[&[f64]]| {
                        Some(DVector::from_row_slice(&[params[0][0] - 0.5 * t[0], params[0][1]]))
                    })),
                    RobustLoss::Trivial,
                    vec![id],
                );
            }
            p.solve(&LMOptions::default()).unwrap();
            let mut out: Vec<f64> = p.block(shift).to_vec();
            for id in pts {
                out.extend_from_slice(p.block(id));
            }
            out
        };
        let dense = run(false);
        let schur = run(true);
        for (a, b) in dense.iter().zip(&schur) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_indices_are_respected() {
        let mut p = Problem::new();
        let x = p.add_block(vec![5.0, 5.0, 5.0], Manifold::Euclidean);
        p.set_constant_indices(x, vec![1]);
        p.add_residual(
            Box::new(FnCost::new(2, |params: &[&[f64]]| {
                let x = params[0];
                Some(DVector::from_row_slice(&[x[0], x[2] - x[1]]))
            })),
            RobustLoss::Trivial,
            vec![x],
        );
        p.solve(&LMOptions::default()).unwrap();
        assert!(p.block(x)[0].abs() < 1e-8);
        assert_eq!(p.block(x)[1], 5.0);
        assert!((p.block(x)[2] - 5.0).abs() < 1e-8);
    }

    #[test]
    fn accepted_costs_are_monotone() {
        let mut p = Problem::new();
        let x = p.add_block(vec![3.0, -2.0], Manifold::Euclidean);
        p.add_residual(
            Box::new(FnCost::new(3, |params: &[&[f64]]| {
                let (a, b) = (params[0][0], params[0][1]);
                Some(DVector::from_row_slice(&[a.sin() + b, a * b - 1.0, (a - b).exp() - 2.0]))
            })),
            RobustLoss::Cauchy(0.5),
            vec![x],
        );
        let mut last = p.cost().unwrap();
        for _ in 0..20 {
            let r = p
                .solve(&LMOptions {
                    max_iterations: 1,
                    ..Default::default()
                })
                .unwrap();
            assert!(r.final_cost <= last);
            last = r.final_cost;
        }
    }
}
