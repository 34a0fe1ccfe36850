//! Offline, user-independent bounds on how far one query response can move a
//! user's attitude posteriors and the posterior mean rating of any target, and
//! the online test that uses them to skip target posteriors during EVOI.
//!
//! Attitude shift. Under the prior convention the update of VQ `k` after
//! response `r` to query `q` is
//!
//! ```text
//! P'(A_k = l) = P(A_k = l) (F + H_l) / (F + sum_l' H_l' P(A_k = l'))
//! ```
//!
//! with `F = sum_{k' != k} P(T_q = k') sum_l' P0(A_k' = l') theta^r_qk'l'` fixed
//! by the model and `H_l = P(T_q = k) theta^r_qkl`. For a fixed `P(A_k = l) = p`
//! the shift is monotone in the remaining mass's contribution to the
//! denominator, so the worst case puts all remaining mass on one contrast
//! attitude `l_x`. With `a = F + H_l`, `b = F + H_lx` the shift
//! `p a / (b + p (a - b)) - p` is extremal at `p* = sqrt(b) / (sqrt(a) + sqrt(b))`
//! where it equals `(sqrt(a) - sqrt(b)) / (sqrt(a) + sqrt(b))`. The bound is the
//! largest absolute value of that over `l_x != l`, covering both the maximum
//! increase and the maximum decrease.
//!
//! Mean change. A small LP over a worst-case prior `p`, posterior `q` and
//! attitude changes `delta_kl` bounds the change in a target's mean rating.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpError, Relation};
use crate::mcvq::McvqModel;
use crate::par::{self, Execution};

/// Bound on `|P'(A_k = l) - P(A_k = l)|` over every attitude distribution of
/// VQ `k`, for one `(q, r, k, l)`.
pub fn attitude_shift_bound(model: &McvqModel, q: usize, r: u8, k: usize, l: usize) -> f64 {
    let (f, h) = shift_terms(model, q, r, k);
    shift_bound_from_terms(f, &h, l)
}

/// `F` and `H_l'` for `(q, r, k)`, using the same floored likelihoods as the
/// posterior update.
fn shift_terms(model: &McvqModel, q: usize, r: u8, k: usize) -> (f64, Vec<f64>) {
    let mut f = 0.0;
    for kp in 0..model.n_types() {
        if kp != k {
            f += model.type_prob(q, kp) * model.prior_mix(q, kp, r);
        }
    }
    let t = model.type_prob(q, k);
    let h = (0..model.n_attitudes()).map(|l| t * model.theta_floored(q, k, l)[r as usize - 1]).collect();
    (f, h)
}

fn shift_bound_from_terms(f: f64, h: &[f64], l: usize) -> f64 {
    let a = f + h[l];
    let mut worst: f64 = 0.0;
    for (lx, &hx) in h.iter().enumerate() {
        if lx == l || hx == h[l] {
            continue;
        }
        let b = f + hx;
        let (sa, sb) = (a.sqrt(), b.sqrt());
        if sa + sb > 0.0 {
            worst = worst.max(((sa - sb) / (sa + sb)).abs());
        }
    }
    worst.clamp(0.0, 1.0)
}

/// Every `(k, l)` shift bound for one `(q, r)`, shape `K x L`.
pub fn attitude_shift_row(model: &McvqModel, q: usize, r: u8) -> Vec<f64> {
    let (kk, ll) = (model.n_types(), model.n_attitudes());
    let mut out = Vec::with_capacity(kk * ll);
    for k in 0..kk {
        let (f, h) = shift_terms(model, q, r, k);
        out.extend((0..ll).map(|l| shift_bound_from_terms(f, &h, l)));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttitudeShiftBounds {
    pub n_items: usize,
    pub rho: usize,
    pub n_types: usize,
    pub n_attitudes: usize,
    /// Index `((q * rho + r - 1) * K + k) * L + l`.
    pub data: Vec<f64>,
}

impl AttitudeShiftBounds {
    pub fn compute(model: &McvqModel, exec: Execution) -> Self {
        let rho = model.rho();
        let rows = par::map_range(exec, model.n_items() * rho, |idx| {
            attitude_shift_row(model, idx / rho, (idx % rho + 1) as u8)
        });
        Self {
            n_items: model.n_items(),
            rho,
            n_types: model.n_types(),
            n_attitudes: model.n_attitudes(),
            data: rows.concat(),
        }
    }

    /// The `K x L` block for `(q, r)`.
    pub fn row(&self, q: usize, r: u8) -> &[f64] {
        let w = self.n_types * self.n_attitudes;
        let start = (q * self.rho + r as usize - 1) * w;
        &self.data[start..start + w]
    }

    pub fn get(&self, q: usize, r: u8, k: usize, l: usize) -> f64 {
        self.row(q, r)[k * self.n_attitudes + l]
    }
}

/// The mean-change LP for one target, with the constraint counts it is
/// expected to have.
#[derive(Debug, Clone)]
pub struct LpSpec {
    pub program: LinearProgram,
    pub n_types: usize,
    pub n_attitudes: usize,
    pub rho: usize,
    pub tighten: bool,
}

impl LpSpec {
    /// Variables are ordered `p_1..p_rho, q_1..q_rho, delta_kl`.
    pub fn build(model: &McvqModel, j: usize, delta_kl: &[f64], tighten: bool) -> Result<Self> {
        let (kk, ll, rho) = (model.n_types(), model.n_attitudes(), model.rho());
        if delta_kl.len() != kk * ll {
            return Err(Error::InvalidArgument(format!(
                "attitude bound row has length {}, expected {}",
                delta_kl.len(),
                kk * ll
            )));
        }
        let n = 2 * rho + kk * ll;
        let mut objective = vec![0.0; n];
        for r in 0..rho {
            objective[r] = -((r + 1) as f64);
            objective[rho + r] = (r + 1) as f64;
        }
        let mut program = LinearProgram::new(objective);
        for v in 0..2 * rho {
            program.bound(v, 0.0, Some(1.0));
        }
        for (i, &d) in delta_kl.iter().enumerate() {
            let d = d.max(0.0);
            program.bound(2 * rho + i, -d, Some(d));
        }
        let mut sum_p = vec![0.0; n];
        sum_p[..rho].iter_mut().for_each(|c| *c = 1.0);
        program.push(sum_p, Relation::Eq, 1.0);
        let mut sum_q = vec![0.0; n];
        sum_q[rho..2 * rho].iter_mut().for_each(|c| *c = 1.0);
        program.push(sum_q, Relation::Eq, 1.0);
        // q_r - p_r - sum_k P(T_j = k) sum_l theta^r_jkl delta_kl = 0
        for r in 0..rho {
            let mut row = vec![0.0; n];
            row[r] = -1.0;
            row[rho + r] = 1.0;
            for k in 0..kk {
                let t = model.type_prob(j, k);
                for l in 0..ll {
                    row[2 * rho + k * ll + l] = -t * model.theta(j, k, l)[r];
                }
            }
            program.push(row, Relation::Eq, 0.0);
        }
        if tighten {
            for k in 0..kk {
                let mut row = vec![0.0; n];
                row[2 * rho + k * ll..2 * rho + (k + 1) * ll].iter_mut().for_each(|c| *c = 1.0);
                program.push(row, Relation::Eq, 0.0);
            }
        }
        Ok(Self { program, n_types: kk, n_attitudes: ll, rho, tighten })
    }

    pub fn n_variables(&self) -> usize {
        self.program.n_vars()
    }

    /// Constraints counted the way the formulation states them: every finite
    /// variable bound is one constraint, plus every explicit row.
    pub fn n_constraints(&self) -> usize {
        let lower = self.program.lower.len();
        let upper = self.program.upper.iter().filter(|u| u.is_some()).count();
        lower + upper + self.program.constraints.len()
    }
}

/// Largest increase in the posterior mean of target `j` consistent with the
/// attitude-shift bounds `delta_kl`. The largest decrease has the same size.
pub fn mean_change_bound_lp(model: &McvqModel, j: usize, delta_kl: &[f64], tighten: bool) -> Result<f64> {
    if delta_kl.iter().all(|&d| d == 0.0) {
        return Ok(0.0);
    }
    let spec = LpSpec::build(model, j, delta_kl, tighten)?;
    match spec.program.solve() {
        Ok(sol) => Ok(sol.objective.clamp(0.0, (model.rho() - 1) as f64)),
        // The greedy bound is never below the LP optimum.
        Err(LpError::Numerical(_)) => Ok(mean_change_bound_iterative(model, j, delta_kl, tighten)),
        Err(e) => Err(e.into()),
    }
}

/// Table-driven form: the LP for target `j`, query `q`, response `r`.
pub fn mean_change_bound_lp_at(
    model: &McvqModel,
    j: usize,
    q: usize,
    r: u8,
    shifts: &AttitudeShiftBounds,
    tighten: bool,
) -> Result<f64> {
    if j == q {
        return Err(Error::ContractViolation("target and query must differ".into()));
    }
    mean_change_bound_lp(model, j, shifts.row(q, r), tighten)
}

/// Greedy mass-exchange bound in `O(KL log KL + KL rho)`.
///
/// Drops the rating-simplex constraint of the LP and solves what remains
/// exactly: move the allowed attitude mass `P(T_j = k) delta_kl` from the
/// attitudes with the lowest expected rating to those with the highest. The
/// result is never below the LP optimum, and equals it whenever the dropped
/// constraint is slack (always the case for a single VQ with `L <= 3`).
pub fn mean_change_bound_iterative(model: &McvqModel, j: usize, delta_kl: &[f64], tighten: bool) -> f64 {
    let (kk, ll) = (model.n_types(), model.n_attitudes());
    let cap = |k: usize, l: usize| model.type_prob(j, k) * delta_kl[k * ll + l].max(0.0);
    let total = if tighten {
        (0..kk)
            .map(|k| {
                let pool: Vec<(f64, f64)> = (0..ll).map(|l| (model.theta_mean(j, k, l), cap(k, l))).collect();
                exchange_gain(pool)
            })
            .sum()
    } else {
        let pool: Vec<(f64, f64)> = (0..kk)
            .flat_map(|k| (0..ll).map(move |l| (k, l)))
            .map(|(k, l)| (model.theta_mean(j, k, l), cap(k, l)))
            .collect();
        exchange_gain(pool)
    };
    total.min((model.rho() - 1) as f64)
}

/// `max sum x_i v_i` subject to `|x_i| <= c_i`, `sum x_i = 0`.
fn exchange_gain(mut pool: Vec<(f64, f64)>) -> f64 {
    pool.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (mut hi, mut lo) = (0usize, pool.len().saturating_sub(1));
    let mut gain = 0.0;
    while hi < lo {
        let (vh, vl) = (pool[hi].0, pool[lo].0);
        if vh <= vl {
            break;
        }
        let amount = pool[hi].1.min(pool[lo].1);
        gain += amount * (vh - vl);
        pool[hi].1 -= amount;
        pool[lo].1 -= amount;
        if pool[hi].1 <= 0.0 {
            hi += 1;
        }
        if pool[lo].1 <= 0.0 {
            lo = lo.saturating_sub(1);
        }
    }
    gain
}

/// The pre-LP bound: every rating probability moves by at most
/// `c_r = sum_k P(T_j = k) sum_l delta_kl theta^r_jkl`, and since the changes
/// sum to zero the mean moves by at most `sum_r |r - (rho + 1) / 2| c_r`.
pub fn coarse_mean_change_bound(model: &McvqModel, j: usize, delta_kl: &[f64]) -> f64 {
    let (kk, ll, rho) = (model.n_types(), model.n_attitudes(), model.rho());
    let center = (rho as f64 + 1.0) / 2.0;
    let mut bound = 0.0;
    for r in 0..rho {
        let mut c = 0.0;
        for k in 0..kk {
            let t = model.type_prob(j, k);
            for l in 0..ll {
                c += t * delta_kl[k * ll + l] * model.theta(j, k, l)[r];
            }
        }
        bound += ((r + 1) as f64 - center).abs() * c;
    }
    bound
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanChangeMethod {
    #[default]
    Lp,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundConfig {
    /// Add `sum_l delta_kl = 0` per VQ to the LP.
    pub tighten: bool,
    pub method: MeanChangeMethod,
    #[serde(skip, default)]
    pub execution: Execution,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self { tighten: false, method: MeanChangeMethod::Lp, execution: Execution::default() }
    }
}

/// Bound on the change of target `j`'s mean after response `r` to query `q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanChangeBounds {
    pub n_items: usize,
    pub rho: usize,
    /// Index `(j * M + q) * rho + r - 1`; zero on the diagonal `j == q`.
    pub data: Vec<f64>,
}

impl MeanChangeBounds {
    pub fn get(&self, j: usize, q: usize, r: u8) -> f64 {
        self.data[(j * self.n_items + q) * self.rho + r as usize - 1]
    }

    /// `Delta^{qr}_j` for every response `r`.
    pub fn responses(&self, j: usize, q: usize) -> &[f64] {
        let start = (j * self.n_items + q) * self.rho;
        &self.data[start..start + self.rho]
    }

    /// Multiplies every entry by `factor` (clamped to the rating range).
    pub fn scaled(&self, factor: f64) -> Self {
        let cap = (self.rho - 1) as f64;
        Self {
            n_items: self.n_items,
            rho: self.rho,
            data: self.data.iter().map(|d| (d * factor).clamp(0.0, cap)).collect(),
        }
    }

    pub fn uniform(n_items: usize, rho: usize, value: f64) -> Self {
        Self { n_items, rho, data: vec![value; n_items * n_items * rho] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundTables {
    pub config: BoundConfig,
    pub shift: AttitudeShiftBounds,
    pub mean_change: MeanChangeBounds,
}

/// Fills both tables for every `(q, r, k, l)` and `(j, q, r)`.
pub fn precompute_bound_tables(model: &McvqModel, cfg: &BoundConfig) -> Result<BoundTables> {
    let shift = AttitudeShiftBounds::compute(model, cfg.execution);
    let (m, rho) = (model.n_items(), model.rho());
    let blocks = par::try_map_range(cfg.execution, m * m, |idx| -> Result<Vec<f64>> {
        let (j, q) = (idx / m, idx % m);
        if j == q {
            return Ok(vec![0.0; rho]);
        }
        (1..=rho as u8)
            .map(|r| {
                let row = shift.row(q, r);
                match cfg.method {
                    MeanChangeMethod::Lp => mean_change_bound_lp(model, j, row, cfg.tighten),
                    MeanChangeMethod::Iterative => Ok(mean_change_bound_iterative(model, j, row, cfg.tighten)),
                }
            })
            .collect()
    })?;
    Ok(BoundTables {
        config: *cfg,
        shift,
        mean_change: MeanChangeBounds { n_items: m, rho, data: blocks.concat() },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMode {
    /// The response-probability-weighted test.
    Expected,
    /// `min_r (V* - Delta_j*) >= max_r (V_j + Delta_j)`; sound for every
    /// response, so pruned EVOI equals unpruned EVOI.
    #[default]
    PerResponse,
}

/// Targets whose posteriors need not be computed when scoring query `q`.
///
/// `targets[i]` has current posterior mean `means[i]`; `best` is the position
/// of the current argmax. Returns one flag per target. The argmax itself and
/// the query are never pruned, nor is anything when the query is the argmax
/// (the post-response maximum then excludes it).
pub fn prune_targets(
    targets: &[usize],
    means: &[f64],
    best: usize,
    q: usize,
    response_probs: &[f64],
    tables: &MeanChangeBounds,
    mode: PruneMode,
) -> Vec<bool> {
    let mut pruned = vec![false; targets.len()];
    let j_star = targets[best];
    if q == j_star {
        return pruned;
    }
    let v_star = means[best];
    let star_bounds = tables.responses(j_star, q);
    let star_side = match mode {
        PruneMode::Expected => v_star - dot(response_probs, star_bounds),
        PruneMode::PerResponse => star_bounds.iter().map(|d| v_star - d).fold(f64::INFINITY, f64::min),
    };
    for (i, (&j, &v_j)) in targets.iter().zip(means).enumerate() {
        if j == q || i == best || !(v_j < v_star) {
            continue;
        }
        let bounds = tables.responses(j, q);
        let other_side = match mode {
            PruneMode::Expected => v_j + dot(response_probs, bounds),
            PruneMode::PerResponse => bounds.iter().map(|d| v_j + d).fold(f64::NEG_INFINITY, f64::max),
        };
        pruned[i] = star_side >= other_side;
    }
    pruned
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
