//! Closed-form I/O costs for the NB-tree, leveled LSM-tree, B-tree and
//! B^ε-tree, plus a brute-force LSM merge simulator to check the LSM formula.
//!
//! Costs use the α/β convention: α multiplies a sequential page transfer and
//! β multiplies a seek. Big-O constants are 1.

use thiserror::Error;

use crate::types::CostParams;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("parameter domain violated: {0}")]
    Domain(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AlphaBeta {
    pub alpha_seq: f64,
    pub beta_seek: f64,
}

impl AlphaBeta {
    pub fn insert_seconds(&self, p: &CostParams) -> f64 {
        self.alpha_seq * p.t_seq_w + self.beta_seek * p.t_seek
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CostPrediction {
    pub amortized_insert: AlphaBeta,
    pub worst_insert: AlphaBeta,
    /// Pages touched by a point query, each charged a transfer and a seek.
    pub worst_query_alpha: f64,
}

impl CostPrediction {
    pub fn amortized_insert_seconds(&self, p: &CostParams) -> f64 {
        self.amortized_insert.insert_seconds(p)
    }

    pub fn worst_insert_seconds(&self, p: &CostParams) -> f64 {
        self.worst_insert.insert_seconds(p)
    }

    pub fn worst_query_seconds(&self, p: &CostParams) -> f64 {
        self.worst_query_alpha * (p.t_seq_r + p.t_seek)
    }
}

fn log(base: f64, x: f64) -> f64 {
    x.ln() / base.ln()
}

fn domain(msg: String) -> Result<(), CostError> {
    Err(CostError::Domain(msg))
}

/// NB-tree: amortized and (deamortized) worst-case insert are both
/// (f/B)·log_f(n/σ) transfers and (f/σ)·log_f(n/σ) seeks; a query reads
/// log_B(σ) pages in each of log_f(n/σ) levels.
pub fn nbtree_costs(n: f64, b: f64, f: f64, sigma: f64) -> Result<CostPrediction, CostError> {
    if f < 2.0 {
        domain(format!("f = {f} < 2"))?;
    }
    if sigma < 2.0 * f {
        domain(format!("sigma = {sigma} < 2f"))?;
    }
    if n < sigma {
        domain(format!("n = {n} < sigma = {sigma}"))?;
    }
    if b < 2.0 {
        domain(format!("B = {b} < 2"))?;
    }
    let levels = log(f, n / sigma);
    let ins = AlphaBeta { alpha_seq: f / b * levels, beta_seek: f / sigma * levels };
    Ok(CostPrediction {
        amortized_insert: ins,
        worst_insert: ins,
        worst_query_alpha: log(b, sigma) * levels,
    })
}

/// Leveled LSM-tree with growth factor f and in-memory component C1.
pub fn lsm_costs(n: f64, b: f64, f: f64, c1: f64) -> Result<CostPrediction, CostError> {
    if f < 2.0 {
        domain(format!("f = {f} < 2"))?;
    }
    if c1 < 1.0 {
        domain(format!("C1 = {c1} < 1"))?;
    }
    if n < c1 {
        domain(format!("n = {n} < C1 = {c1}"))?;
    }
    if b < 2.0 {
        domain(format!("B = {b} < 2"))?;
    }
    let lb = log(b, n);
    Ok(CostPrediction {
        amortized_insert: AlphaBeta { alpha_seq: f / b * log(f, n / c1), beta_seek: 1.0 },
        worst_insert: AlphaBeta { alpha_seq: n / b, beta_seek: log(f, b) * lb },
        worst_query_alpha: log(f, b) * lb * lb,
    })
}

pub fn btree_costs(n: f64, b: f64) -> Result<CostPrediction, CostError> {
    if n < 1.0 {
        domain(format!("n = {n} < 1"))?;
    }
    if b < 2.0 {
        domain(format!("B = {b} < 2"))?;
    }
    let h = log(b, n);
    let ab = AlphaBeta { alpha_seq: h, beta_seek: h };
    Ok(CostPrediction { amortized_insert: ab, worst_insert: ab, worst_query_alpha: h })
}

pub fn beps_costs(n: f64, b: f64, f: f64) -> Result<CostPrediction, CostError> {
    if n < 1.0 {
        domain(format!("n = {n} < 1"))?;
    }
    if f < 2.0 {
        domain(format!("f = {f} < 2"))?;
    }
    if b < 2.0 {
        domain(format!("B = {b} < 2"))?;
    }
    let x = f * log(f, b) / b * log(b, n);
    let ab = AlphaBeta { alpha_seq: x, beta_seek: x };
    Ok(CostPrediction {
        amortized_insert: ab,
        worst_insert: ab,
        worst_query_alpha: log(f, b) * log(b, n),
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LsmSimResult {
    pub total_pages: u64,
    pub total_seeks: u64,
    pub merges: u64,
}

/// Seeks charged per merge: two read streams and one write stream.
pub const LSM_SEEKS_PER_MERGE: u64 = 3;

/// Inserts `n` items one at a time into a leveled LSM-tree whose component i
/// holds C1·f^i items. Inserting into a full component 0 first merges it into
/// component 1 (cascading further when the next component lacks room); each
/// merge of i into i+1 costs ⌈(C_i + C_{i+1})/B⌉ pages and `seeks_per_merge` seeks.
pub fn lsm_simulate_with(n: u64, f: u64, c1: u64, b: u64, seeks_per_merge: u64) -> LsmSimResult {
    assert!(f >= 2 && c1 >= 1 && b >= 1, "parameters must be positive");
    let cap = |i: usize| c1.saturating_mul(f.saturating_pow(i as u32));
    let mut fill: Vec<u64> = vec![0];
    let mut res = LsmSimResult::default();

    fn make_room(
        i: usize,
        incoming: u64,
        fill: &mut Vec<u64>,
        res: &mut LsmSimResult,
        cap: &dyn Fn(usize) -> u64,
        b: u64,
        seeks: u64,
    ) {
        if fill[i] + incoming <= cap(i) {
            return;
        }
        if fill.len() == i + 1 {
            fill.push(0);
        }
        let moving = fill[i];
        make_room(i + 1, moving, fill, res, cap, b, seeks);
        fill[i + 1] += moving;
        fill[i] = 0;
        res.merges += 1;
        res.total_pages += (cap(i) + cap(i + 1)).div_ceil(b);
        res.total_seeks += seeks;
    }

    for _ in 0..n {
        make_room(0, 1, &mut fill, &mut res, &cap, b, seeks_per_merge);
        fill[0] += 1;
    }
    res
}

pub fn lsm_simulate(n: u64, f: u64, c1: u64, b: u64) -> LsmSimResult {
    lsm_simulate_with(n, f, c1, b, LSM_SEEKS_PER_MERGE)
}
