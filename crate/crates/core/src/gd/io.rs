//! Text formats for weights and traces.
//!
//! Weights, one filter per line, sign group first:
//!
//! ```text
//! # xordlab weights v1
//! k 2
//! w 0 0.5 -0.25
//! w 1 1e-5 3
//! u 0 0 0
//! u 1 -2 0.125
//! ```
//!
//! Coordinates are written in shortest round-trip form, so
//! `read_weights(write_weights(w)) == w` bit for bit.

use std::io::{BufRead, Write};

use super::{IterRecord, TrainTrace, TrainingSet, WeightMatrix};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const HEADER: &str = "# xordlab weights v1";

pub fn write_weights<T: Scalar, W: Write>(w: &WeightMatrix<T>, mut out: W) -> Result<()> {
    writeln!(out, "{HEADER}")?;
    writeln!(out, "k {}", w.k())?;
    for (tag, group) in [("w", &w.w), ("u", &w.u)] {
        for (j, f) in group.iter().enumerate() {
            writeln!(out, "{tag} {j} {} {}", f[0], f[1])?;
        }
    }
    Ok(())
}

pub fn read_weights<T: Scalar, R: BufRead>(input: R) -> Result<WeightMatrix<T>> {
    let mut offset = 0u64;
    let mut k: Option<usize> = None;
    let mut w = Vec::new();
    let mut u = Vec::new();
    for line in input.lines() {
        let line = line?;
        let here = offset;
        offset += line.len() as u64 + 1;
        let bad = |detail: String| Error::Parse { offset: here, detail };
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        match fields.as_slice() {
            ["k", n] => {
                k = Some(n.parse().map_err(|_| bad(format!("bad filter count {n:?}")))?);
            }
            [tag @ ("w" | "u"), j, a, b] => {
                let group = if *tag == "w" { &mut w } else { &mut u };
                let j: usize = j.parse().map_err(|_| bad(format!("bad filter index {j:?}")))?;
                if j != group.len() {
                    return Err(bad(format!("{tag} filter {j} out of order")));
                }
                let a: T = a.parse().map_err(|_| bad(format!("bad coordinate {a:?}")))?;
                let b: T = b.parse().map_err(|_| bad(format!("bad coordinate {b:?}")))?;
                group.push([a, b]);
            }
            _ => return Err(bad(format!("unrecognized line {trimmed:?}"))),
        }
    }
    let k = k.ok_or(Error::Parse {
        offset,
        detail: "missing `k` line".into(),
    })?;
    if w.len() != k || u.len() != k {
        return Err(Error::Parse {
            offset,
            detail: format!("k = {k} but found {} w and {} u filters", w.len(), u.len()),
        });
    }
    WeightMatrix::from_filters(w, u)
}

/// Column layout of [`write_trace_csv`], for `m` examples and `k` filters.
pub const TRACE_CSV_COLUMNS: &str = "t, loss, tie, then per example e: n_e, viol_e, count_e; \
then, when snapshots are recorded, per filter j: w{j}_x, w{j}_y, followed by u{j}_x, u{j}_y";

/// Writes one CSV row per recorded iteration.
pub fn write_trace_csv<T: Scalar, W: Write>(trace: &TrainTrace<T>, set: &TrainingSet, out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let m = set.len();
    let k = trace.records.iter().find_map(|r| r.snapshot.as_ref().map(WeightMatrix::k));
    let mut header = vec!["t".to_string(), "loss".into(), "tie".into()];
    for e in 0..m {
        header.extend([format!("n_{e}"), format!("viol_{e}"), format!("count_{e}")]);
    }
    if let Some(k) = k {
        for g in ["w", "u"] {
            for j in 0..k {
                header.extend([format!("{g}{j}_x"), format!("{g}{j}_y")]);
            }
        }
    }
    wtr.write_record(&header)?;
    for r in &trace.records {
        wtr.write_record(row(r, m))?;
    }
    wtr.flush()?;
    Ok(())
}

fn row<T: Scalar>(r: &IterRecord<T>, m: usize) -> Vec<String> {
    let mut out = vec![r.t.to_string(), r.loss.to_string(), (r.tie as u8).to_string()];
    for e in 0..m {
        out.push(r.outputs[e].to_string());
        out.push((r.violating[e] as u8).to_string());
        out.push(r.counters[e].to_string());
    }
    if let Some(s) = &r.snapshot {
        for f in s.w.iter().chain(&s.u) {
            out.push(f[0].to_string());
            out.push(f[1].to_string());
        }
    }
    out
}

/// Filter coordinates for plotting: one row per (frame, filter) with
/// columns `t, group, j, x, y`.
pub fn write_filter_csv<T: Scalar, W: Write>(frames: &[(usize, &WeightMatrix<T>)], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["t", "group", "j", "x", "y"])?;
    for (t, w) in frames {
        for (tag, group) in [("w", &w.w), ("u", &w.u)] {
            for (j, f) in group.iter().enumerate() {
                wtr.write_record([t.to_string(), tag.to_string(), j.to_string(), f[0].to_string(), f[1].to_string()])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gd::{init_gaussian, train, HyperParams, StopRule, TraceLevel};
    use crate::patterns::BinaryInput;
    use crate::rng::seeded;

    #[test]
    fn weights_round_trip_bitwise() {
        let w: WeightMatrix<f64> = init_gaussian(7, 0.3, &mut seeded(4)).unwrap();
        let mut buf = Vec::new();
        write_weights(&w, &mut buf).unwrap();
        let back: WeightMatrix<f64> = read_weights(buf.as_slice()).unwrap();
        assert_eq!(
            back.to_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            w.to_flat().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );

        let w32: WeightMatrix<f32> = init_gaussian(3, 0.3, &mut seeded(4)).unwrap();
        let mut buf = Vec::new();
        write_weights(&w32, &mut buf).unwrap();
        assert_eq!(read_weights::<f32, _>(buf.as_slice()).unwrap(), w32);
    }

    #[test]
    fn malformed_weights_report_offsets() {
        let text = "k 1\nw 0 1 2\nu 0 1 x\n";
        match read_weights::<f64, _>(text.as_bytes()) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 12),
            other => panic!("{other:?}"),
        }
        assert!(read_weights::<f64, _>("k 2\nw 0 1 2\nu 0 1 2\n".as_bytes()).is_err());
        assert!(read_weights::<f64, _>("w 0 1 2\nu 0 1 2\n".as_bytes()).is_err());
    }

    #[test]
    fn trace_csv_shape() {
        let set = TrainingSet::xord_labeled(&[
            BinaryInput::from_indices(&[1, 2, 3, 4]).unwrap(),
            BinaryInput::from_indices(&[2, 4, 2, 2]).unwrap(),
        ])
        .unwrap();
        let hp = HyperParams {
            k: 3,
            c_eta: 0.1,
            sigma_g: 0.01,
            gamma: 2.0,
            max_iters: 5,
            stop_rule: StopRule::Budget,
        };
        let w0: WeightMatrix<f64> = init_gaussian(3, 0.01, &mut seeded(1)).unwrap();
        let (_, trace, _) = train(&w0, &set, &hp, TraceLevel::Full, &mut []).unwrap();
        let mut buf = Vec::new();
        write_trace_csv(&trace, &set, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[0].split(',').count(), 3 + 2 * 3 + 4 * 3);
        assert!(lines[0].starts_with("t,loss,tie,n_0,viol_0,count_0"));
    }
}
