//! Recorded trajectories and their CSV layout.
//!
//! One row per recorded time, with global columns followed by a fixed block
//! of columns per agent (`p0_x`, `p0_y`, `u0_x`, ...).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::Vec2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSample {
    pub p: Vec2,
    pub u: Vec2,
    pub track_w: f64,
    pub track_z: f64,
    pub e_norm: f64,
    pub g_norm: f64,
    pub xi: f64,
    /// Broadcast on the step that ended at this row's time.
    pub triggered: bool,
    pub events: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub grad_norm: f64,
    pub sigma_norm: f64,
    pub sum_w_inf: f64,
    pub sum_z_inf: f64,
    pub agents: Vec<AgentSample>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trace {
    pub n: usize,
    pub rows: Vec<TraceRow>,
}

const AGENT_FIELDS: [&str; 11] = [
    "p{}_x", "p{}_y", "u{}_x", "u{}_y", "trackw{}", "trackz{}", "e{}", "g{}", "xi{}", "trig{}",
    "events{}",
];

impl Trace {
    pub fn new(n: usize) -> Self {
        Self { n, rows: Vec::new() }
    }

    pub fn header(&self) -> Vec<String> {
        let mut cols: Vec<String> = ["t", "grad_norm", "sigma_norm", "sum_w_inf", "sum_z_inf"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for i in 0..self.n {
            cols.extend(AGENT_FIELDS.iter().map(|f| f.replace("{}", &i.to_string())));
        }
        cols
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for row in &self.rows {
            let mut rec = vec![
                row.t.to_string(),
                row.grad_norm.to_string(),
                row.sigma_norm.to_string(),
                row.sum_w_inf.to_string(),
                row.sum_z_inf.to_string(),
            ];
            for a in &row.agents {
                rec.extend([
                    a.p.x.to_string(),
                    a.p.y.to_string(),
                    a.u.x.to_string(),
                    a.u.y.to_string(),
                    a.track_w.to_string(),
                    a.track_z.to_string(),
                    a.e_norm.to_string(),
                    a.g_norm.to_string(),
                    a.xi.to_string(),
                    u8::from(a.triggered).to_string(),
                    a.events.to_string(),
                ]);
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
