//! CSV output of trace records and events.
//!
//! Columns: `t`, then for each IBR in id order `<id>_P`, `<id>_Q`, `<id>_f`,
//! `<id>_V`, `<id>_delta`, `<id>_Omega`, `<id>_e`, `<id>_local_ok`,
//! `<id>_stage2_ok`, then `<breaker>_latched` for each breaker. Numbers are
//! written with ten significant digits, flags as 0/1.

use std::io::Write;

use crate::engine::{EventKind, EventLog, TraceRecord};
use crate::topology::{BreakerId, IbrId};

pub const IBR_FIELDS: [&str; 9] = ["P", "Q", "f", "V", "delta", "Omega", "e", "local_ok", "stage2_ok"];

pub fn header(ibrs: &[IbrId], breakers: &[BreakerId]) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for id in ibrs {
        h.extend(IBR_FIELDS.iter().map(|f| format!("{id}_{f}")));
    }
    h.extend(breakers.iter().map(|b| format!("{b}_latched")));
    h
}

fn num(x: f64) -> String {
    format!("{x:.9e}")
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

pub struct TraceWriter<W: Write> {
    inner: csv::Writer<W>,
    ibrs: usize,
    breakers: usize,
}

impl<W: Write> TraceWriter<W> {
    /// Writes the header immediately.
    pub fn new(out: W, ibrs: &[IbrId], breakers: &[BreakerId]) -> csv::Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(header(ibrs, breakers))?;
        Ok(TraceWriter { inner, ibrs: ibrs.len(), breakers: breakers.len() })
    }

    pub fn write(&mut self, r: &TraceRecord) -> csv::Result<()> {
        assert_eq!(r.p.len(), self.ibrs, "record IBR count");
        assert_eq!(r.latched.len(), self.breakers, "record breaker count");
        let mut row = Vec::with_capacity(1 + 9 * self.ibrs + self.breakers);
        row.push(num(r.t));
        for i in 0..self.ibrs {
            row.extend([
                num(r.p[i]),
                num(r.q[i]),
                num(r.f_hz[i]),
                num(r.v[i]),
                num(r.delta_deg[i]),
                num(r.omega_sec[i]),
                num(r.e_sec[i]),
                flag(r.local_ok[i]),
                flag(r.stage2_ok[i]),
            ]);
        }
        row.extend(r.latched.iter().map(|&b| flag(b)));
        self.inner.write_record(row)
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }

    pub fn into_inner(self) -> Result<W, String> {
        self.inner.into_inner().map_err(|e| e.to_string())
    }
}

/// Write all records, flushing after each row recorded at a breaker-closure
/// instant.
pub fn write_traces<W: Write>(
    records: &[TraceRecord],
    events: &EventLog,
    ibrs: &[IbrId],
    breakers: &[BreakerId],
    out: W,
) -> csv::Result<W> {
    let mut w = TraceWriter::new(out, ibrs, breakers)?;
    for r in records {
        w.write(r)?;
        if events.closures().any(|(t, _)| t == r.t) {
            w.flush()?;
        }
    }
    w.inner.flush()?;
    w.inner.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}

/// `t,kind,detail` rows, one per event.
pub fn write_events<W: Write>(events: &EventLog, out: W) -> csv::Result<W> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "kind", "detail"])?;
    for e in &events.events {
        let (kind, detail) = match &e.kind {
            EventKind::BreakerClosed { breaker } => ("breaker_closed", breaker.to_string()),
            EventKind::BreakerReset { breaker } => ("breaker_reset", breaker.to_string()),
            EventKind::SetpointReassignment { ibrs, p_star, q_star } => (
                "setpoint_reassignment",
                format!(
                    "{} p_star={} q_star={}",
                    ibrs.iter().map(|i| i.as_str()).collect::<Vec<_>>().join(" "),
                    num(*p_star),
                    num(*q_star)
                ),
            ),
            EventKind::SolverWarning { message } => ("solver_warning", message.clone()),
        };
        w.write_record([num(e.t).as_str(), kind, detail.as_str()])?;
    }
    w.flush()?;
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}
