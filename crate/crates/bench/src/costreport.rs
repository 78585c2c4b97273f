//! Closed-form cost table for the four index structures.

use std::io::Write;

use anyhow::{bail, Result};
use nbtree::costmodel::{beps_costs, btree_costs, lsm_costs, nbtree_costs, CostPrediction};
use nbtree::CostParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Structure {
    NBTree,
    Lsm,
    BTree,
    BEps,
}

impl Structure {
    pub fn name(&self) -> &'static str {
        match self {
            Structure::NBTree => "nbtree",
            Structure::Lsm => "lsm",
            Structure::BTree => "btree",
            Structure::BEps => "beps",
        }
    }
}

impl std::str::FromStr for Structure {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nbtree" => Ok(Structure::NBTree),
            "lsm" => Ok(Structure::Lsm),
            "btree" => Ok(Structure::BTree),
            "beps" => Ok(Structure::BEps),
            _ => bail!("unknown structure {s:?} (expected nbtree, lsm, btree or beps)"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostInputs {
    /// d-tree / page fanout
    pub b: f64,
    /// level fanout
    pub f: f64,
    pub sigma: f64,
    /// LSM component-0 size in items
    pub c1: f64,
    pub cost: CostParams,
}

pub fn predict(s: Structure, n: f64, p: &CostInputs) -> Result<CostPrediction> {
    Ok(match s {
        Structure::NBTree => nbtree_costs(n, p.b, p.f, p.sigma)?,
        Structure::Lsm => lsm_costs(n, p.b, p.f, p.c1)?,
        Structure::BTree => btree_costs(n, p.b)?,
        Structure::BEps => beps_costs(n, p.b, p.f)?,
    })
}

pub fn write_cost_csv(ns: &[u64], structures: &[Structure], p: &CostInputs, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "n",
        "structure",
        "amortized_insert_alpha",
        "amortized_insert_beta",
        "worst_insert_alpha",
        "worst_insert_beta",
        "worst_query_alpha",
        "amortized_insert_s",
        "worst_insert_s",
        "worst_query_s",
    ])?;
    for &n in ns {
        for &s in structures {
            let c = predict(s, n as f64, p)?;
            w.write_record([
                n.to_string(),
                s.name().to_string(),
                c.amortized_insert.alpha_seq.to_string(),
                c.amortized_insert.beta_seek.to_string(),
                c.worst_insert.alpha_seq.to_string(),
                c.worst_insert.beta_seek.to_string(),
                c.worst_query_alpha.to_string(),
                c.amortized_insert_seconds(&p.cost).to_string(),
                c.worst_insert_seconds(&p.cost).to_string(),
                c.worst_query_seconds(&p.cost).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
