use std::io::Write;

use crate::error::Result;
use crate::metrics::OperatingPoint;
use crate::selection::SelectionTrace;
use crate::trainer::TrainTrace;

pub fn write_trace_csv(trace: &TrainTrace, out: &mut dyn Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "j", "omega_before", "omega_after_z", "omega_after", "step_norm"])?;
    for r in &trace.records {
        w.write_record([
            r.t.to_string(),
            r.j.to_string(),
            r.omega_before.to_string(),
            r.omega_after_z.to_string(),
            r.omega_after.to_string(),
            r.step_norm.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `m, loss, L, chosen`.
pub fn write_selection_csv(trace: &SelectionTrace, out: &mut dyn Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["m", "loss", "L", "chosen"])?;
    for r in &trace.records {
        w.write_record([
            r.m.to_string(),
            r.loss.to_string(),
            r.objective.to_string(),
            u8::from(r.m == trace.chosen).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `threshold, far, frr`.
pub fn write_curve_csv(curve: &[OperatingPoint], out: &mut dyn Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["threshold", "far", "frr"])?;
    for p in curve {
        w.write_record([p.threshold.to_string(), p.far.to_string(), p.frr.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
