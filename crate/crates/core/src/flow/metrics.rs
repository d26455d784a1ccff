//! Per-step run records and their CSV encoding.

use std::io::Write;

use crate::error::Result;

pub const METRICS_HEADER: &str =
    "step,t,energy,kl,grad_norm,minres_iters,minres_residual,wall_ms,det_sign_ok";

/// One metrics row.
///
/// Row `k` holds the energy at `θ^k` together with the solver statistics of
/// the step that produced `θ^k`; solver fields of row 0 are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub energy: f64,
    /// Standard error of `energy` (not written to CSV).
    pub energy_se: f64,
    /// Unnormalized KL, for relative-entropy runs.
    pub kl: Option<f64>,
    pub grad_norm: Option<f64>,
    pub minres_iters: Option<usize>,
    /// Relative residual `‖Ĝη + ∇_θF‖ / ‖∇_θF‖`, worst over stages.
    pub minres_residual: Option<f64>,
    /// `⟨∇_θF, η⟩` of the first stage (not written to CSV).
    pub descent: Option<f64>,
    pub wall_ms: f64,
    pub det_sign_ok: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    records: Vec<StepRecord>,
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RunMetrics {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a record; step indices must increase.
    pub fn push(&mut self, record: StepRecord) {
        if let Some(last) = self.records.last() {
            assert!(record.step > last.step, "metrics steps must increase");
        }
        self.records.push(record);
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Writes the CSV. With `timing = false` the `wall_ms` column is 0 so
    /// that repeated runs compare bit for bit.
    pub fn write_csv<W: Write>(&self, mut out: W, timing: bool) -> Result<()> {
        writeln!(out, "{METRICS_HEADER}")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{:?},{:?},{},{},{},{},{},{}",
                r.step,
                r.t,
                r.energy,
                opt(r.kl.map(|v| format!("{v:?}"))),
                opt(r.grad_norm.map(|v| format!("{v:?}"))),
                opt(r.minres_iters),
                opt(r.minres_residual.map(|v| format!("{v:?}"))),
                if timing { format!("{:.3}", r.wall_ms) } else { "0".into() },
                u8::from(r.det_sign_ok),
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(step: usize) -> StepRecord {
        StepRecord {
            step,
            t: step as f64 * 0.5,
            energy: 1.0,
            energy_se: 0.0,
            kl: None,
            grad_norm: Some(0.25),
            minres_iters: Some(3),
            minres_residual: Some(1e-5),
            descent: Some(-1.0),
            wall_ms: 12.5,
            det_sign_ok: true,
        }
    }

    #[test]
    fn csv_layout() {
        let mut m = RunMetrics::new();
        m.push(record(0));
        m.push(record(1));
        let mut buf = Vec::new();
        m.write_csv(&mut buf, false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines[2], "1,0.5,1.0,,0.25,3,1e-5,0,1");
    }

    #[test]
    #[should_panic]
    fn steps_must_increase() {
        let mut m = RunMetrics::new();
        m.push(record(2));
        m.push(record(1));
    }
}
