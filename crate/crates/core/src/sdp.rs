//! Semidefinite relaxation of `max_{||x||_p <= eps} f(x)` in canonical form
//!
//! ```text
//! max <C, X> + c   s.t.   <A_k, X> = a_k,   X PSD
//! ```
//!
//! The lifted variable is `v v^T` with `v = [1; x_0; x_1; ...; x_L]`, followed
//! by one nonnegative diagonal slack entry per scalar inequality. Every
//! constraint keeps the core block and the slack diagonal decoupled, so the
//! PSD variable is stored as [`SdpMatrix`]: a dense symmetric core plus a
//! diagonal.
//!
//! Constraint order: `P[1] = 1`, the input constraint(s), then for each layer
//! the `h` nonnegativity rows, the `h` affine lower-bound rows and the `h`
//! complementarity rows.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::NetworkParams;
use crate::numerics::{self, SymMatrix};
pub use crate::region::{InputRegion, Norm};

/// Layout of the lifted PSD variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BlockIndex {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub hidden_layers: usize,
    pub core_order: usize,
    pub input_slacks: usize,
    pub slack_count: usize,
}

impl BlockIndex {
    pub fn new(d: usize, h: usize, hidden_layers: usize, norm: Norm) -> Self {
        let input_slacks = match norm {
            Norm::L2 => 1,
            Norm::Linf => d,
        };
        Self {
            input_dim: d,
            hidden_dim: h,
            hidden_layers,
            core_order: 1 + d + hidden_layers * h,
            input_slacks,
            slack_count: input_slacks + 2 * hidden_layers * h,
        }
    }

    /// Total order `n` of the PSD variable, slacks included.
    pub fn order(&self) -> usize {
        self.core_order + self.slack_count
    }

    /// Offset of block `x_l` (`l = 0` is the input) inside the core.
    pub fn offset(&self, l: usize) -> usize {
        if l == 0 {
            1
        } else {
            1 + self.input_dim + (l - 1) * self.hidden_dim
        }
    }

    pub fn block_len(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }

    pub fn nonneg_slack(&self, layer: usize, j: usize) -> usize {
        self.input_slacks + (layer - 1) * 2 * self.hidden_dim + j
    }

    pub fn affine_slack(&self, layer: usize, j: usize) -> usize {
        self.nonneg_slack(layer, j) + self.hidden_dim
    }

    pub fn num_constraints(&self) -> usize {
        1 + self.input_slacks + 3 * self.hidden_layers * self.hidden_dim
    }

    fn layer_base(&self, layer: usize) -> usize {
        1 + self.input_slacks + (layer - 1) * 3 * self.hidden_dim
    }

    pub fn nonneg_index(&self, layer: usize, j: usize) -> usize {
        self.layer_base(layer) + j
    }

    pub fn affine_index(&self, layer: usize, j: usize) -> usize {
        self.layer_base(layer) + self.hidden_dim + j
    }

    pub fn complementarity_index(&self, layer: usize, j: usize) -> usize {
        self.layer_base(layer) + 2 * self.hidden_dim + j
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConstraintKind {
    /// `P[1] = 1`
    Unit,
    /// `tr P[x0 x0^T] + s = eps^2`
    InputTrace,
    /// `P[x0 x0^T]_ii + s = eps^2`
    InputBox { coord: usize },
    /// `-P[x_l]_j + s = 0`
    Nonneg { layer: usize, neuron: usize },
    /// `W_l,j P[x_{l-1}] - P[x_l]_j + s = -b_l,j`
    AffineLower { layer: usize, neuron: usize },
    /// `P[x_l x_l^T]_jj - W_l,j P[x_{l-1} x_l,j] - b_l,j P[x_l]_j = 0`
    Complementarity { layer: usize, neuron: usize },
}

/// `scale * sum_i u_i P(u_offset + i, w)`, i.e. the symmetric rank-2 matrix
/// `scale/2 (u e_w^T + e_w u^T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankTerm {
    pub scale: f64,
    pub u_offset: usize,
    pub u: Vec<f64>,
    pub w: usize,
}

/// One constraint matrix in structured form. The linear functional is
///
/// ```text
/// <A, X> = sum diag_k X_kk + sum pinned_k X_0k + sum low-rank terms + X_slack
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMatrix {
    pub kind: ConstraintKind,
    pub diag: Vec<(usize, f64)>,
    pub pinned: Vec<(usize, f64)>,
    pub low_rank: Vec<LowRankTerm>,
    /// Slack index (relative to the slack block) with coefficient one.
    pub slack: Option<usize>,
}

impl ConstraintMatrix {
    fn new(kind: ConstraintKind) -> Self {
        Self {
            kind,
            diag: Vec::new(),
            pinned: Vec::new(),
            low_rank: Vec::new(),
            slack: None,
        }
    }

    /// Merged core terms as `(i, j, coef)` with `i >= j`, where
    /// `<A, X> = sum coef * X_ij`.
    pub fn core_terms(&self) -> Vec<(usize, usize, f64)> {
        let mut out: Vec<(usize, usize, f64)> = Vec::new();
        let mut push = |i: usize, j: usize, c: f64| {
            let (r, s) = if i >= j { (i, j) } else { (j, i) };
            out.push((r, s, c));
        };
        for &(k, c) in &self.diag {
            push(k, k, c);
        }
        for &(k, c) in &self.pinned {
            push(k, 0, c);
        }
        for t in &self.low_rank {
            for (i, &ui) in t.u.iter().enumerate() {
                if ui != 0.0 {
                    let r = t.u_offset + i;
                    if r == t.w {
                        // degenerate rank-2 term on the diagonal
                        push(r, r, t.scale * ui);
                    } else {
                        push(r, t.w, t.scale * ui);
                    }
                }
            }
        }
        out.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(out.len());
        for (i, j, c) in out {
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += c,
                _ => merged.push((i, j, c)),
            }
        }
        merged
    }

    /// Dense symmetric materialization of order `block.order()`.
    pub fn to_dense(&self, block: &BlockIndex) -> SymMatrix {
        let mut m = SymMatrix::zeros(block.order());
        for (i, j, c) in self.core_terms() {
            m.add_to(i, j, if i == j { c } else { 0.5 * c });
        }
        if let Some(s) = self.slack {
            m.add_to(block.core_order + s, block.core_order + s, 1.0);
        }
        m
    }
}

/// Block-diagonal symmetric matrix: dense core plus diagonal slack block.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpMatrix {
    pub core: SymMatrix,
    pub slack: Vec<f64>,
}

impl SdpMatrix {
    pub fn zeros(block: &BlockIndex) -> Self {
        Self {
            core: SymMatrix::zeros(block.core_order),
            slack: vec![0.0; block.slack_count],
        }
    }

    pub fn order(&self) -> usize {
        self.core.order() + self.slack.len()
    }

    pub fn inner(&self, other: &SdpMatrix) -> f64 {
        self.core.inner(&other.core) + numerics::dot(&self.slack, &other.slack)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.inner(self).max(0.0).sqrt()
    }

    pub fn trace(&self) -> f64 {
        self.core.trace() + self.slack.iter().sum::<f64>()
    }

    pub fn axpy(&mut self, alpha: f64, other: &SdpMatrix) {
        self.core.axpy(alpha, &other.core);
        for (a, b) in self.slack.iter_mut().zip(&other.slack) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.core.scale(alpha);
        self.slack.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn is_finite(&self) -> bool {
        self.core.is_finite() && self.slack.iter().all(|v| v.is_finite())
    }

    /// Projection onto the PSD cone, with the smallest eigenvalue of `self`.
    pub fn psd_project(&self) -> Result<(SdpMatrix, f64)> {
        let (core, eigs) = numerics::psd_project_with_eigs(&self.core)?;
        let slack_min = self.slack.iter().copied().fold(f64::INFINITY, f64::min);
        let core_min = eigs.first().copied().unwrap_or(f64::INFINITY);
        Ok((
            SdpMatrix {
                core,
                slack: self.slack.iter().map(|v| v.max(0.0)).collect(),
            },
            core_min.min(slack_min),
        ))
    }

    pub fn lambda_min(&self) -> Result<f64> {
        let core_min = numerics::lambda_min(&self.core)?;
        let slack_min = self.slack.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(core_min.min(slack_min))
    }

    pub fn to_dense(&self) -> SymMatrix {
        let c = self.core.order();
        let mut m = SymMatrix::zeros(self.order());
        for i in 0..c {
            for j in 0..=i {
                m.set(i, j, self.core.get(i, j));
            }
        }
        for (k, &v) in self.slack.iter().enumerate() {
            m.set(c + k, c + k, v);
        }
        m
    }

    /// Keeps the block-diagonal part of a dense matrix.
    pub fn from_dense(block: &BlockIndex, m: &SymMatrix) -> Self {
        let c = block.core_order;
        Self {
            core: SymMatrix::from_lower_fn(c, |i, j| m.get(i, j)),
            slack: (0..block.slack_count).map(|k| m.get(c + k, c + k)).collect(),
        }
    }
}

// flattened sparse form used by the operator kernels
#[derive(Debug, Clone)]
struct FlatOperator {
    start: Vec<usize>,
    pos: Vec<usize>,
    coef: Vec<f64>,
    entry: Vec<f64>,
    diag: Vec<bool>,
    slack: Vec<Option<usize>>,
}

impl FlatOperator {
    fn new(constraints: &[ConstraintMatrix]) -> Self {
        let mut op = FlatOperator {
            start: vec![0],
            pos: Vec::new(),
            coef: Vec::new(),
            entry: Vec::new(),
            diag: Vec::new(),
            slack: Vec::with_capacity(constraints.len()),
        };
        for a in constraints {
            for (i, j, c) in a.core_terms() {
                op.pos.push(i * (i + 1) / 2 + j);
                op.coef.push(c);
                op.entry.push(if i == j { c } else { 0.5 * c });
                op.diag.push(i == j);
            }
            op.start.push(op.pos.len());
            op.slack.push(a.slack);
        }
        op
    }
}

/// Canonical SDP data for one network and input region.
#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub block: BlockIndex,
    pub region: InputRegion,
    pub objective: SymMatrix,
    pub offset: f64,
    pub constraints: Vec<ConstraintMatrix>,
    pub rhs: Vec<f64>,
    flat: FlatOperator,
}

pub fn build_sdp(params: &NetworkParams, region: &InputRegion) -> Result<SdpProblem> {
    params.validate()?;
    let (d, h, depth) = (params.input_dim, params.hidden_dim, params.hidden_layers);
    let block = BlockIndex::new(d, h, depth, region.norm);
    let eps2 = region.eps * region.eps;
    let mut constraints = Vec::with_capacity(block.num_constraints());
    let mut rhs = Vec::with_capacity(block.num_constraints());

    let mut unit = ConstraintMatrix::new(ConstraintKind::Unit);
    unit.diag.push((0, 1.0));
    constraints.push(unit);
    rhs.push(1.0);

    match region.norm {
        Norm::L2 => {
            let mut a = ConstraintMatrix::new(ConstraintKind::InputTrace);
            a.diag = (0..d).map(|i| (block.offset(0) + i, 1.0)).collect();
            a.slack = Some(0);
            constraints.push(a);
            rhs.push(eps2);
        }
        Norm::Linf => {
            for i in 0..d {
                let mut a = ConstraintMatrix::new(ConstraintKind::InputBox { coord: i });
                a.diag.push((block.offset(0) + i, 1.0));
                a.slack = Some(i);
                constraints.push(a);
                rhs.push(eps2);
            }
        }
    }

    for layer in 1..=depth {
        let w = &params.layers[layer - 1].weight;
        let b = &params.layers[layer - 1].bias;
        let prev = block.offset(layer - 1);
        let cur = block.offset(layer);
        for j in 0..h {
            let mut a = ConstraintMatrix::new(ConstraintKind::Nonneg { layer, neuron: j });
            a.pinned.push((cur + j, -1.0));
            a.slack = Some(block.nonneg_slack(layer, j));
            constraints.push(a);
            rhs.push(0.0);
        }
        for j in 0..h {
            let mut a = ConstraintMatrix::new(ConstraintKind::AffineLower { layer, neuron: j });
            a.low_rank.push(LowRankTerm {
                scale: 1.0,
                u_offset: prev,
                u: w.row(j).to_vec(),
                w: 0,
            });
            a.pinned.push((cur + j, -1.0));
            a.slack = Some(block.affine_slack(layer, j));
            constraints.push(a);
            rhs.push(-b[j]);
        }
        for j in 0..h {
            let k = cur + j;
            let mut a = ConstraintMatrix::new(ConstraintKind::Complementarity { layer, neuron: j });
            a.diag.push((k, 1.0));
            a.low_rank.push(LowRankTerm {
                scale: -1.0,
                u_offset: prev,
                u: w.row(j).to_vec(),
                w: k,
            });
            a.pinned.push((k, -b[j]));
            constraints.push(a);
            rhs.push(0.0);
        }
    }

    let out = params.output();
    let last = block.offset(depth);
    let mut objective = SymMatrix::zeros(block.core_order);
    for j in 0..h {
        objective.set(last + j, 0, 0.5 * out.weight.get(0, j));
    }

    let flat = FlatOperator::new(&constraints);
    Ok(SdpProblem {
        block,
        region: *region,
        objective,
        offset: out.bias[0],
        constraints,
        rhs,
        flat,
    })
}

/// Multipliers and slacks of the augmented Lagrangian.
#[derive(Debug, Clone, PartialEq)]
pub struct Multipliers {
    pub y: Vec<f64>,
    /// Dual slack matrix `S`.
    pub s_mat: SdpMatrix,
    /// Matrix multiplier `X` of the dual constraint.
    pub x_mat: SdpMatrix,
    /// Slack `s >= 0` of the logit constraint.
    pub logit_slack: f64,
    /// Scalar multiplier `x` of the logit constraint.
    pub logit_mult: f64,
}

impl Multipliers {
    pub fn zeros(block: &BlockIndex) -> Self {
        Self {
            y: vec![0.0; block.num_constraints()],
            s_mat: SdpMatrix::zeros(block),
            x_mat: SdpMatrix::zeros(block),
            logit_slack: 0.0,
            logit_mult: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penalties {
    pub mu: f64,
    pub rho: f64,
}

impl SdpProblem {
    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn order(&self) -> usize {
        self.block.order()
    }

    fn check_shape(&self, x: &SdpMatrix) -> Result<()> {
        if x.core.order() != self.block.core_order || x.slack.len() != self.block.slack_count {
            return Err(Error::DimensionMismatch {
                context: "sdp matrix",
                expected: self.block.order(),
                got: x.order(),
            });
        }
        Ok(())
    }

    /// `A(X) = (<A_k, X>)_k`
    pub fn apply_a(&self, x: &SdpMatrix) -> Result<Vec<f64>> {
        self.check_shape(x)?;
        let data = x.core.packed_data();
        let f = &self.flat;
        Ok((0..self.constraints.len())
            .map(|k| {
                let core: f64 = (f.start[k]..f.start[k + 1])
                    .map(|e| f.coef[e] * data[f.pos[e]])
                    .sum();
                core + f.slack[k].map_or(0.0, |s| x.slack[s])
            })
            .collect())
    }

    /// `A^T(y) = sum_k y_k A_k`
    pub fn apply_at(&self, y: &[f64]) -> Result<SdpMatrix> {
        if y.len() != self.constraints.len() {
            return Err(Error::DimensionMismatch {
                context: "dual vector",
                expected: self.constraints.len(),
                got: y.len(),
            });
        }
        let mut core = vec![0.0; self.block.core_order * (self.block.core_order + 1) / 2];
        let mut slack = vec![0.0; self.block.slack_count];
        let f = &self.flat;
        for (k, &yk) in y.iter().enumerate() {
            if yk == 0.0 {
                continue;
            }
            for e in f.start[k]..f.start[k + 1] {
                core[f.pos[e]] += yk * f.entry[e];
            }
            if let Some(s) = f.slack[k] {
                slack[s] += yk;
            }
        }
        let mut it = core.into_iter();
        Ok(SdpMatrix {
            core: SymMatrix::from_lower_fn(self.block.core_order, |_, _| it.next().unwrap_or(0.0)),
            slack,
        })
    }

    /// Gram matrix `(<A_k, A_l>)_{kl}` from the shared sparsity pattern.
    pub fn gram_aat(&self) -> SymMatrix {
        let m = self.constraints.len();
        let f = &self.flat;
        // (position, constraint, matrix entry, diagonal?)
        let mut by_pos: Vec<(usize, usize, f64, bool)> = Vec::with_capacity(f.pos.len());
        for k in 0..m {
            for e in f.start[k]..f.start[k + 1] {
                by_pos.push((f.pos[e], k, f.entry[e], f.diag[e]));
            }
        }
        by_pos.sort_by_key(|t| (t.0, t.1));
        let mut gram = SymMatrix::zeros(m);
        let mut lo = 0;
        while lo < by_pos.len() {
            let mut hi = lo + 1;
            while hi < by_pos.len() && by_pos[hi].0 == by_pos[lo].0 {
                hi += 1;
            }
            let mult = if by_pos[lo].3 { 1.0 } else { 2.0 };
            for p in lo..hi {
                let (_, kp, vp, _) = by_pos[p];
                for q in lo..=p {
                    let (_, kq, vq, _) = by_pos[q];
                    gram.add_to(kp, kq, mult * vp * vq);
                }
            }
            lo = hi;
        }
        let mut slack_owner: Vec<Vec<usize>> = vec![Vec::new(); self.block.slack_count];
        for (k, s) in f.slack.iter().enumerate() {
            if let Some(s) = s {
                slack_owner[*s].push(k);
            }
        }
        for owners in slack_owner {
            for (p, &kp) in owners.iter().enumerate() {
                for &kq in &owners[..=p] {
                    gram.add_to(kp, kq, 1.0);
                }
            }
        }
        gram
    }

    /// `<C, X> + c`
    pub fn objective_value(&self, x: &SdpMatrix) -> f64 {
        self.objective.inner(&x.core) + self.offset
    }

    pub fn objective_matrix(&self) -> SdpMatrix {
        SdpMatrix {
            core: self.objective.clone(),
            slack: vec![0.0; self.block.slack_count],
        }
    }

    /// `A^T(y) - S - C`
    pub fn dual_residual(&self, y: &[f64], s_mat: &SdpMatrix) -> Result<SdpMatrix> {
        let mut r = self.apply_at(y)?;
        r.axpy(-1.0, s_mat);
        r.core.axpy(-1.0, &self.objective);
        Ok(r)
    }

    /// Dual objective `a^T y + c`.
    pub fn dual_value(&self, y: &[f64]) -> f64 {
        numerics::dot(&self.rhs, y) + self.offset
    }

    /// The multiplier and penalty terms of the augmented Lagrangian,
    /// i.e. everything except the classifier loss.
    pub fn lagrangian_terms(&self, m: &Multipliers, pen: Penalties) -> Result<f64> {
        let r = self.dual_value(&m.y) + m.logit_slack;
        let res = self.dual_residual(&m.y, &m.s_mat)?;
        Ok(-m.logit_mult * r - m.x_mat.inner(&res)
            + r * r / (2.0 * pen.rho)
            + res.inner(&res) / (2.0 * pen.mu))
    }

    /// Dense constraint matrices of full order, for cross-checks.
    pub fn dense_constraints(&self) -> Vec<SymMatrix> {
        self.constraints.iter().map(|a| a.to_dense(&self.block)).collect()
    }

    /// JSON dump of `C`, `a`, the block layout and constraint kinds.
    pub fn debug_dump(&self) -> serde_json::Value {
        serde_json::json!({
            "n": self.block.order(),
            "m": self.constraints.len(),
            "block_index": self.block,
            "region": self.region,
            "C": self.objective.to_rows(),
            "c": self.offset,
            "a": self.rhs,
            "constraints": self.constraints.iter().map(|a| a.kind).collect::<Vec<_>>(),
        })
    }
}

/// Rank-one lift of the forward pass at `x`, with each slack set to the
/// value that makes its constraint hold.
pub fn lift_point(params: &NetworkParams, region: &InputRegion, x: &[f64]) -> Result<SdpMatrix> {
    let trace = params.forward(x)?;
    let block = BlockIndex::new(params.input_dim, params.hidden_dim, params.hidden_layers, region.norm);
    let mut v = Vec::with_capacity(block.core_order);
    v.push(1.0);
    v.extend_from_slice(x);
    for post in &trace.postacts {
        v.extend_from_slice(post);
    }
    let core = SymMatrix::from_lower_fn(block.core_order, |i, j| v[i] * v[j]);
    let eps2 = region.eps * region.eps;
    let mut slack = vec![0.0; block.slack_count];
    match region.norm {
        Norm::L2 => slack[0] = eps2 - x.iter().map(|t| t * t).sum::<f64>(),
        Norm::Linf => {
            for (i, &t) in x.iter().enumerate() {
                slack[i] = eps2 - t * t;
            }
        }
    }
    for layer in 1..=block.hidden_layers {
        for j in 0..block.hidden_dim {
            let post = trace.postacts[layer - 1][j];
            let pre = trace.preacts[layer - 1][j];
            slack[block.nonneg_slack(layer, j)] = post;
            slack[block.affine_slack(layer, j)] = post - pre;
        }
    }
    Ok(SdpMatrix { core, slack })
}

/// Gradient over network parameters of
/// `<G, A^T(y) - C> + kappa (a^T y + c)` with `G`, `y`, `kappa` held fixed.
///
/// All SDP data is affine in the weights, so this pairing carries every
/// parameter dependence of the augmented Lagrangian.
pub fn pairing_gradient(
    params: &NetworkParams,
    block: &BlockIndex,
    g: &SymMatrix,
    y: &[f64],
    kappa: f64,
) -> NetworkParams {
    let mut grad = params.zeros_like();
    let h = block.hidden_dim;
    for layer in 1..=block.hidden_layers {
        let prev = block.offset(layer - 1);
        let cur = block.offset(layer);
        let width = block.block_len(layer - 1);
        let gl = &mut grad.layers[layer - 1];
        for j in 0..h {
            let ya = y[block.affine_index(layer, j)];
            let yc = y[block.complementarity_index(layer, j)];
            let k = cur + j;
            let row = gl.weight.row_mut(j);
            for (i, gw) in row.iter_mut().enumerate().take(width) {
                *gw += ya * g.get(0, prev + i) - yc * g.get(prev + i, k);
            }
            gl.bias[j] += -kappa * ya - yc * g.get(0, k);
        }
    }
    let last = block.offset(block.hidden_layers);
    let out = grad.output_mut();
    for j in 0..h {
        out.weight.data[j] -= g.get(0, last + j);
    }
    out.bias[0] += kappa;
    grad
}

/// Gradient over network parameters of the multiplier and penalty terms of
/// the augmented Lagrangian at fixed `(y, S, X, s, x)`.
pub fn grad_theta(
    params: &NetworkParams,
    region: &InputRegion,
    m: &Multipliers,
    pen: Penalties,
) -> Result<NetworkParams> {
    let problem = build_sdp(params, region)?;
    problem.grad_theta(params, m, pen)
}

impl SdpProblem {
    /// Same as [`grad_theta`] for a problem already built at `params`.
    pub fn grad_theta(&self, params: &NetworkParams, m: &Multipliers, pen: Penalties) -> Result<NetworkParams> {
        let res = self.dual_residual(&m.y, &m.s_mat)?;
        // dL/dR = -X + R / mu
        let mut g = res.core;
        g.scale(1.0 / pen.mu);
        g.axpy(-1.0, &m.x_mat.core);
        let r = self.dual_value(&m.y) + m.logit_slack;
        let kappa = -m.logit_mult + r / pen.rho;
        Ok(pairing_gradient(params, &self.block, &g, &m.y, kappa))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::sample_ball;
    use crate::network::init_xavier;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_sdp_matrix(block: &BlockIndex, rng: &mut StdRng) -> SdpMatrix {
        SdpMatrix {
            core: SymMatrix::from_lower_fn(block.core_order, |_, _| rng.random_range(-1.0..1.0)),
            slack: (0..block.slack_count).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn sizes_for_small_l2_problem() {
        let p = init_xavier(2, 3, 1, 0);
        let prob = build_sdp(&p, &InputRegion::new(Norm::L2, 1.0).unwrap()).unwrap();
        assert_eq!(prob.block.core_order, 6);
        assert_eq!(prob.num_constraints(), 11);
        assert_eq!(prob.block.slack_count, 7);
        assert_eq!(prob.order(), 13);
        assert_eq!(prob.rhs.len(), 11);
        assert_eq!(prob.constraints[0].kind, ConstraintKind::Unit);
        assert_eq!(prob.constraints[1].kind, ConstraintKind::InputTrace);
    }

    #[test]
    fn linf_problem_has_per_coordinate_input_rows() {
        let p = init_xavier(3, 2, 2, 0);
        let prob = build_sdp(&p, &InputRegion::new(Norm::Linf, 0.5).unwrap()).unwrap();
        assert_eq!(prob.num_constraints(), 1 + 3 + 3 * 2 * 2);
        assert_eq!(prob.block.slack_count, 3 + 2 * 2 * 2);
        assert!(prob.rhs[1..4].iter().all(|&a| (a - 0.25).abs() < 1e-15));
    }

    #[test]
    fn zero_network_optimum_is_zero() {
        let p = NetworkParams::zeros(2, 2, 1);
        let region = InputRegion::unit_l2();
        let prob = build_sdp(&p, &region).unwrap();
        // e1 e1^T with zero slack except the input slack, which must absorb eps^2
        let mut x = SdpMatrix::zeros(&prob.block);
        x.core.set(0, 0, 1.0);
        x.slack[0] = 1.0;
        let ax = prob.apply_a(&x).unwrap();
        for (l, r) in ax.iter().zip(&prob.rhs) {
            assert!((l - r).abs() < 1e-15);
        }
        assert_eq!(prob.objective_value(&x), 0.0);
    }

    #[test]
    fn rank_one_lift_is_feasible_with_matching_objective() {
        for (seed, norm) in [(0u64, Norm::L2), (1, Norm::Linf), (2, Norm::L2), (3, Norm::Linf)] {
            let p = init_xavier(4, 5, 1 + seed as usize % 2, seed);
            let region = InputRegion::new(norm, 0.8).unwrap();
            let prob = build_sdp(&p, &region).unwrap();
            for x in sample_ball(20, 4, norm, 0.8, seed) {
                let lift = lift_point(&p, &region, &x).unwrap();
                let ax = prob.apply_a(&lift).unwrap();
                for (k, (l, r)) in ax.iter().zip(&prob.rhs).enumerate() {
                    assert!((l - r).abs() <= 1e-8, "constraint {k} {:?}", prob.constraints[k].kind);
                }
                assert!(lift.slack.iter().all(|&s| s >= -1e-12));
                assert!((prob.objective_value(&lift) - p.logit(&x)).abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn unit_vector_adjoint_is_constraint_matrix() {
        let p = init_xavier(2, 3, 2, 4);
        let prob = build_sdp(&p, &InputRegion::unit_l2()).unwrap();
        let dense = prob.dense_constraints();
        for k in [0, 1, 5, prob.num_constraints() - 1] {
            let mut y = vec![0.0; prob.num_constraints()];
            y[k] = 1.0;
            let at = prob.apply_at(&y).unwrap().to_dense();
            let mut diff = at;
            diff.axpy(-1.0, &dense[k]);
            assert!(diff.max_abs() < 1e-15);
        }
        let zero = SdpMatrix::zeros(&prob.block);
        assert!(prob.apply_a(&zero).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn structured_matches_dense() {
        let p = init_xavier(3, 4, 2, 8);
        let prob = build_sdp(&p, &InputRegion::new(Norm::Linf, 1.0).unwrap()).unwrap();
        let mut rng = StdRng::seed_from_u64(1);
        let x = random_sdp_matrix(&prob.block, &mut rng);
        let dx = x.to_dense();
        let ax = prob.apply_a(&x).unwrap();
        for (k, a) in prob.dense_constraints().iter().enumerate() {
            assert!((a.inner(&dx) - ax[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn gram_matches_dense_double_loop() {
        for (seed, norm) in [(0u64, Norm::L2), (1, Norm::Linf)] {
            let p = init_xavier(2, 3, 1 + seed as usize, seed);
            let prob = build_sdp(&p, &InputRegion::new(norm, 1.0).unwrap()).unwrap();
            assert!(prob.order() <= 30);
            let dense = prob.dense_constraints();
            let gram = prob.gram_aat();
            for a in 0..dense.len() {
                for b in 0..=a {
                    assert!((gram.get(a, b) - dense[a].inner(&dense[b])).abs() <= 1e-10);
                }
            }
            assert!(numerics::lambda_min(&gram).unwrap() >= -1e-10);
        }
    }

    #[test]
    fn gram_of_orthogonal_constraints_is_diagonal() {
        // zero weights: the only overlaps come through biases, which are zero too
        let p = NetworkParams::zeros(2, 2, 1);
        let prob = build_sdp(&p, &InputRegion::unit_l2()).unwrap();
        let gram = prob.gram_aat();
        let m = prob.num_constraints();
        // nonneg and affine rows of neuron j share the pinned entry (0, k)
        for a in 0..m {
            for b in 0..a {
                let ka = prob.constraints[a].kind;
                let kb = prob.constraints[b].kind;
                let share = matches!(
                    (ka, kb),
                    (ConstraintKind::AffineLower { neuron: x, .. }, ConstraintKind::Nonneg { neuron: y, .. }) if x == y
                );
                if !share {
                    assert_eq!(gram.get(a, b), 0.0, "{ka:?} vs {kb:?}");
                }
            }
        }
    }

    #[test]
    fn constraints_are_affine_in_parameters() {
        let p0 = init_xavier(3, 4, 2, 1);
        let p1 = init_xavier(3, 4, 2, 2);
        let mut mid = p0.clone();
        mid.axpy(1.0, &p1);
        mid.scale(0.5);
        let region = InputRegion::new(Norm::L2, 1.0).unwrap();
        let (a0, a1, am) = (
            build_sdp(&p0, &region).unwrap(),
            build_sdp(&p1, &region).unwrap(),
            build_sdp(&mid, &region).unwrap(),
        );
        for k in 0..am.num_constraints() {
            let mut avg = a0.constraints[k].to_dense(&a0.block);
            avg.axpy(1.0, &a1.constraints[k].to_dense(&a1.block));
            avg.scale(0.5);
            avg.axpy(-1.0, &am.constraints[k].to_dense(&am.block));
            assert!(avg.max_abs() < 1e-15);
            assert!((0.5 * (a0.rhs[k] + a1.rhs[k]) - am.rhs[k]).abs() < 1e-15);
        }
        let mut c = a0.objective.clone();
        c.axpy(1.0, &a1.objective);
        c.scale(0.5);
        c.axpy(-1.0, &am.objective);
        assert!(c.max_abs() < 1e-15);
        assert!((0.5 * (a0.offset + a1.offset) - am.offset).abs() < 1e-15);
    }

    #[test]
    fn debug_dump_has_layout() {
        let p = init_xavier(2, 2, 1, 0);
        let prob = build_sdp(&p, &InputRegion::unit_l2()).unwrap();
        let v = prob.debug_dump();
        assert_eq!(v["m"], 8);
        assert_eq!(v["constraints"][0]["kind"], "unit");
        assert_eq!(v["block_index"]["core_order"], 5);
    }

    proptest::proptest! {
        #[test]
        fn adjoint_identity(seed in 0u64..500, depth in 1usize..3, linf in proptest::bool::ANY) {
            let norm = if linf { Norm::Linf } else { Norm::L2 };
            let p = init_xavier(2, 2, depth, seed);
            let prob = build_sdp(&p, &InputRegion::new(norm, 1.0).unwrap()).unwrap();
            let mut rng = StdRng::seed_from_u64(seed);
            let x = random_sdp_matrix(&prob.block, &mut rng);
            let y: Vec<f64> = (0..prob.num_constraints()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lhs = numerics::dot(&prob.apply_a(&x).unwrap(), &y);
            let rhs = x.inner(&prob.apply_at(&y).unwrap());
            proptest::prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        }
    }
}
