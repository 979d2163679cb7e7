//! First-flow benchmark: sequential sessions between two tasks with the
//! rule tables flushed before each, plus summary statistics over the CSV.

use std::io;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::FlowKey;
use crate::endpoints::HandshakeMode;
use crate::net::{CtId, DomainId, Tick};
use crate::sim::{Network, NetworkConfig, OpenRequest, SimError};

/// Per-flow tick budget before a flow is declared stuck.
const FLOW_TICK_BUDGET: Tick = 10_000;

pub const CSV_HEADER: [&str; 7] = [
    "flow",
    "mode",
    "first_packet_ticks",
    "keygen_wall_ns",
    "distribution_wall_ns",
    "handshake_messages",
    "handshake_pk_ops",
];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("flow {0} did not complete")]
    Stalled(u64),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchMode {
    Psk,
    Pk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BenchConfig {
    pub flows: u64,
    pub repeats: u64,
    pub mode: BenchMode,
    pub seed: u64,
    /// Put the two tasks on different hosts.
    pub cross_host: bool,
}

impl BenchConfig {
    pub fn new(flows: u64, repeats: u64, mode: BenchMode, seed: u64) -> Self {
        Self {
            flows,
            repeats,
            mode,
            seed,
            cross_host: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub flow: u64,
    pub mode: BenchMode,
    pub first_packet_ticks: u64,
    pub keygen_wall_ns: u64,
    pub distribution_wall_ns: u64,
    pub handshake_messages: u64,
    pub handshake_pk_ops: u64,
}

/// Seed of repeat `r`; repeat 0 uses the base seed itself.
pub fn repeat_seed(seed: u64, r: u64) -> u64 {
    seed ^ r.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

struct Rig {
    net: Network,
    a: CtId,
    b: CtId,
}

fn rig(cfg: &BenchConfig, seed: u64) -> Result<Rig, BenchError> {
    let hosts = if cfg.cross_host { 2 } else { 1 };
    let mut nc = NetworkConfig::new(seed, hosts);
    nc.distribute_psk = cfg.mode == BenchMode::Psk;
    let mut net = Network::new(nc)?;
    for h in 0..hosts {
        net.deploy_switch(h, DomainId(0))?;
    }
    let a = net.deploy_ct(0)?;
    let b = net.deploy_ct(hosts - 1)?;
    if cfg.mode == BenchMode::Pk {
        net.distribute_peer_keys()?;
    }
    Ok(Rig { net, a, b })
}

fn ct_wall(net: &mut Network, c: CtId) -> Result<(u64, u64), SimError> {
    net.with_ct(c, |st| {
        let m = st.metrics();
        (m.keygen_wall_ns, m.unwrap_wall_ns)
    })
}

fn one_flow(rig: &mut Rig, cfg: &BenchConfig, i: u64) -> Result<BenchRecord, BenchError> {
    let net = &mut rig.net;
    net.flush_all_rules()?;
    let limit = net.now() + FLOW_TICK_BUDGET;
    net.run_to_quiescence(limit);
    let nc0 = net.controller().metrics();
    let (ka0, ua0) = ct_wall(net, rig.a)?;
    let (kb0, ub0) = ct_wall(net, rig.b)?;
    let port = 1024 + (i % 60_000) as u16;
    let flow = FlowKey {
        src: rig.a,
        dst: rig.b,
        src_port: port,
        dst_port: 443,
        proto: 6,
    };
    // Ports wrap after 60k flows; retire the old flow so it is treated as new.
    net.controller_mut().expire_flow(&flow);
    let mode = match cfg.mode {
        BenchMode::Psk => HandshakeMode::Psk,
        BenchMode::Pk => HandshakeMode::BaselinePk,
    };
    let now = net.now();
    net.schedule_open(
        now,
        OpenRequest {
            src: rig.a,
            dst: rig.b,
            src_port: port,
            dst_port: 443,
            mode,
            payloads: vec![],
        },
    );
    if !net.run_to_quiescence(now + FLOW_TICK_BUDGET) {
        return Err(BenchError::Stalled(i));
    }
    let timing = net.timing(&flow).ok_or(BenchError::Stalled(i))?;
    let first = timing.first_delivery.ok_or(BenchError::Stalled(i))? - timing.opened_at;
    let nc1 = net.controller().metrics();
    let (ka1, ua1) = ct_wall(net, rig.a)?;
    let (kb1, ub1) = ct_wall(net, rig.b)?;
    let summary = |st: &mut crate::endpoints::CtState| {
        st.session(&flow)
            .filter(|s| s.established)
            .map(|s| (s.handshake_messages as u64, s.handshake_pk_ops as u64))
    };
    let client = net.with_ct(rig.a, summary)?;
    let server = net.with_ct(rig.b, summary)?;
    let (Some((messages, client_ops)), Some((_, server_ops))) = (client, server) else {
        return Err(BenchError::Stalled(i));
    };
    let keygen = match cfg.mode {
        BenchMode::Psk => nc1.keygen_wall_ns - nc0.keygen_wall_ns,
        BenchMode::Pk => (ka1 - ka0) + (kb1 - kb0),
    };
    Ok(BenchRecord {
        flow: i,
        mode: cfg.mode,
        first_packet_ticks: first,
        keygen_wall_ns: keygen,
        distribution_wall_ns: (nc1.wrap_wall_ns - nc0.wrap_wall_ns) + (ua1 - ua0) + (ub1 - ub0),
        handshake_messages: messages,
        handshake_pk_ops: client_ops + server_ops,
    })
}

/// One repeat: `flows` sequential sessions on a fresh network.
pub fn run_repeat(cfg: &BenchConfig, seed: u64) -> Result<Vec<BenchRecord>, BenchError> {
    let mut rig = rig(cfg, seed)?;
    (0..cfg.flows).map(|i| one_flow(&mut rig, cfg, i)).collect()
}

/// All repeats, run in parallel. Rows are merged in flow order, repeats in
/// order within each flow.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<BenchRecord>, BenchError> {
    if cfg.flows == 0 || cfg.repeats == 0 {
        return Err(BenchError::Config("flows and repeats must be at least 1".into()));
    }
    let per_repeat: Vec<Vec<BenchRecord>> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| run_repeat(cfg, repeat_seed(cfg.seed, r)))
        .collect::<Result<_, _>>()?;
    let mut rows: Vec<BenchRecord> = per_repeat.into_iter().flatten().collect();
    rows.sort_by_key(|r| r.flow);
    Ok(rows)
}

pub fn write_csv(path: &Path, rows: &[BenchRecord]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(CSV_HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<BenchRecord>, BenchError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        return Err(BenchError::Config(format!("unexpected header {header:?}")));
    }
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColumnStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
    /// Population standard deviation.
    pub stddev: f64,
}

pub fn column_stats(values: &[f64]) -> Option<ColumnStats> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let mean = v.iter().sum::<f64>() / n as f64;
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    };
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    Some(ColumnStats {
        min: v[0],
        max: v[n - 1],
        mean,
        median,
        stddev: var.sqrt(),
    })
}

/// Statistics for every numeric column, in CSV column order.
pub fn summarize(rows: &[BenchRecord]) -> Vec<(&'static str, ColumnStats)> {
    type Get = fn(&BenchRecord) -> u64;
    let cols: [(&str, Get); 5] = [
        ("first_packet_ticks", |r| r.first_packet_ticks),
        ("keygen_wall_ns", |r| r.keygen_wall_ns),
        ("distribution_wall_ns", |r| r.distribution_wall_ns),
        ("handshake_messages", |r| r.handshake_messages),
        ("handshake_pk_ops", |r| r.handshake_pk_ops),
    ];
    cols.iter()
        .filter_map(|(name, get)| {
            let v: Vec<f64> = rows.iter().map(|r| get(r) as f64).collect();
            column_stats(&v).map(|s| (*name, s))
        })
        .collect()
}

pub fn render_summary(stats: &[(&str, ColumnStats)]) -> String {
    let mut out = format!(
        "{:<22} {:>14} {:>14} {:>14} {:>14} {:>14}\n",
        "column", "min", "max", "mean", "median", "stddev"
    );
    for (name, s) in stats {
        out.push_str(&format!(
            "{:<22} {:>14.3} {:>14.3} {:>14.3} {:>14.3} {:>14.3}\n",
            name, s.min, s.max, s.mean, s.median, s.stddev
        ));
    }
    out
}
