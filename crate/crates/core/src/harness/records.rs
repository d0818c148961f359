//! CSV persistence of trial records.
//!
//! One row per recorded state: `t, state_0..state_{n-1}, u_0..u_{m-1},
//! wall_ms`. The final row carries the terminal state only; its control and
//! timing fields are empty. Numbers use 17 significant digits.

use std::path::Path;

use crate::dynamics::{Control, State};
use crate::error::{Error, Result};
use crate::metrics::TrialRecord;

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn record_header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..n).map(|i| format!("state_{i}")));
    h.extend((0..m).map(|j| format!("u_{j}")));
    h.push("wall_ms".into());
    h
}

/// Writes `record`; with `timing == false` every `wall_ms` is written as 0.
pub fn write_record(path: &Path, record: &TrialRecord, timing: bool) -> Result<()> {
    let n = record.states()[0].dim();
    let m = record.controls().first().map_or(0, |c| c.dim());
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(record_header(n, m))?;
    for (i, (t, x)) in record.times().iter().zip(record.states()).enumerate() {
        let mut row: Vec<String> = Vec::with_capacity(n + m + 2);
        row.push(fmt_f64(*t));
        row.extend(x.iter().map(|v| fmt_f64(*v)));
        match record.controls().get(i) {
            Some(u) => {
                row.extend(u.iter().map(|v| fmt_f64(*v)));
                let ms = if timing {
                    record.step_wall_times()[i] * 1e3
                } else {
                    0.0
                };
                row.push(fmt_f64(ms));
            }
            None => row.extend(std::iter::repeat_n(String::new(), m + 1)),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_record(path: &Path, angle_dims: &[usize]) -> Result<TrialRecord> {
    let malformed = |reason: String| Error::Malformed {
        path: path.display().to_string(),
        reason,
    };
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let n = header.iter().filter(|h| h.starts_with("state_")).count();
    let m = header.iter().filter(|h| h.starts_with("u_")).count();
    if header != record_header(n, m) {
        return Err(malformed(format!("unexpected header {header:?}")));
    }
    let parse = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|e| malformed(format!("bad number '{s}': {e}")))
    };
    let (mut times, mut states, mut controls, mut walls) = (vec![], vec![], vec![], vec![]);
    let mut ended = false;
    for row in r.records() {
        let row = row?;
        if ended {
            return Err(malformed("rows after the terminal row".into()));
        }
        times.push(parse(&row[0])?);
        let x = (1..=n).map(|i| parse(&row[i])).collect::<Result<Vec<_>>>()?;
        states.push(State::new(x));
        if row[n + 1].is_empty() {
            ended = true;
            continue;
        }
        let u = (n + 1..=n + m).map(|i| parse(&row[i])).collect::<Result<Vec<_>>>()?;
        controls.push(Control::new(u));
        walls.push(parse(&row[n + m + 1])? * 1e-3);
    }
    if !ended {
        return Err(malformed("missing terminal row".into()));
    }
    Ok(TrialRecord::from_parts(times, states, controls, walls)
        .map_err(|e| malformed(e.to_string()))?
        .with_angle_dims(angle_dims))
}
