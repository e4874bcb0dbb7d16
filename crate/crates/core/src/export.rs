//! Delimited-text and JSON artifacts. Floats are written with 17 significant
//! digits so every value round-trips, and row order depends only on the run.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::bounds::CertifiedBounds;
use crate::error::{Error, Result};
use crate::simulator::SimResult;
use crate::trigger::Event;

pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Sample indices kept at a stride; the last sample is always kept.
fn kept(len: usize, stride: usize) -> impl Iterator<Item = usize> {
    let stride = stride.max(1);
    (0..len).filter(move |i| i % stride == 0 || i + 1 == len)
}

pub fn write_trajectory_csv<W: Write>(out: &mut W, result: &SimResult, stride: usize) -> std::io::Result<()> {
    let n = result.x.first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend((1..=n).map(|i| format!("xhat_{i}")));
    header.push("x_e_norm".into());
    header.push("envelope".into());
    writeln!(out, "{}", header.join(","))?;
    for i in kept(result.times.len(), stride) {
        let mut row = vec![fmt_num(result.times[i])];
        row.extend(result.x[i].iter().map(|v| fmt_num(*v)));
        row.extend(result.x_hat[i].iter().map(|v| fmt_num(*v)));
        row.push(fmt_num(result.x_e_norm[i]));
        row.push(result.envelope.as_ref().map_or(String::new(), |e| fmt_num(e[i])));
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn write_events_csv<W: Write>(out: &mut W, events: &[Event]) -> std::io::Result<()> {
    writeln!(out, "agent_id,time,broadcast_value,trigger_kind")?;
    for e in events {
        writeln!(
            out,
            "{},{},{},{}",
            e.agent + 1,
            fmt_num(e.time),
            fmt_num(e.value),
            e.kind.as_str()
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EventRecord<'a> {
    agent_id: usize,
    time: f64,
    broadcast_value: f64,
    trigger_kind: &'a str,
}

pub fn events_json(events: &[Event]) -> Result<String> {
    let records: Vec<EventRecord> = events
        .iter()
        .map(|e| EventRecord {
            agent_id: e.agent + 1,
            time: e.time,
            broadcast_value: e.value,
            trigger_kind: e.kind.as_str(),
        })
        .collect();
    Ok(serde_json::to_string_pretty(&records)?)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn finish(path: &Path, res: std::io::Result<()>, mut w: BufWriter<File>) -> Result<()> {
    res.and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn save_trajectory(path: &Path, result: &SimResult, stride: usize) -> Result<()> {
    let mut w = create(path)?;
    let res = write_trajectory_csv(&mut w, result, stride);
    finish(path, res, w)
}

pub fn save_events(csv_path: &Path, json_path: &Path, events: &[Event]) -> Result<()> {
    let mut w = create(csv_path)?;
    let res = write_events_csv(&mut w, events);
    finish(csv_path, res, w)?;
    save_text(json_path, &events_json(events)?)
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    save_text(path, &serde_json::to_string_pretty(value)?)
}

pub fn save_text(path: &Path, text: &str) -> Result<()> {
    let mut body = text.to_string();
    if !body.ends_with('\n') {
        body.push('\n');
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Writes `series.csv` (time-aligned norms, envelope and states) and
/// `markers.csv` (one row per event) into `dir`.
pub fn emit_plot_data(
    result: &SimResult,
    consts: Option<&CertifiedBounds>,
    dir: &Path,
    stride: usize,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let series = dir.join("series.csv");
    let markers = dir.join("markers.csv");
    let n = result.x.first().map_or(0, Vec::len);

    let mut w = create(&series)?;
    let res = (|| -> std::io::Result<()> {
        let mut header = vec!["t".to_string(), "x_e_norm".into()];
        if result.x_e_norm_active.is_some() {
            header.push("x_e_norm_active".into());
        }
        header.push("upsilon_norm".into());
        header.push("envelope".into());
        header.extend((1..=n).map(|i| format!("x_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for i in kept(result.times.len(), stride) {
            let t = result.times[i];
            let mut row = vec![fmt_num(t), fmt_num(result.x_e_norm[i])];
            if let Some(a) = &result.x_e_norm_active {
                row.push(fmt_num(a[i]));
            }
            row.push(fmt_num(result.upsilon_norm[i]));
            row.push(consts.map_or(String::new(), |c| fmt_num(c.envelope(t))));
            row.extend(result.x[i].iter().map(|v| fmt_num(*v)));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    })();
    finish(&series, res, w)?;

    let mut w = create(&markers)?;
    let res = (|| -> std::io::Result<()> {
        writeln!(w, "agent_id,time,broadcast_value")?;
        for e in &result.events {
            writeln!(w, "{},{},{}", e.agent + 1, fmt_num(e.time), fmt_num(e.value))?;
        }
        Ok(())
    })();
    finish(&markers, res, w)?;
    Ok(vec![series, markers])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trigger::TriggerKind;

    fn tiny() -> SimResult {
        SimResult {
            times: vec![0.0, 0.5, 1.0],
            x: vec![vec![0.0, 1.0], vec![0.25, 0.75], vec![0.4, 0.6]],
            x_hat: vec![vec![0.0, 1.0], vec![0.25, 0.75], vec![0.25, 0.75]],
            x_e_norm: vec![1.0, 0.5, 0.2],
            x_e_norm_active: None,
            upsilon_norm: vec![0.7, 0.35, 0.14],
            events: vec![
                Event { agent: 0, time: 0.5, value: 0.25, kind: TriggerKind::Static },
                Event { agent: 1, time: 0.5, value: 0.75, kind: TriggerKind::Static },
            ],
            envelope: None,
            min_inter_event: vec![Some(0.5), Some(0.5)],
            consensus_value: 0.5,
            max_mean_drift: 0.0,
            max_trigger_excess: Some(0.0),
        }
    }

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_num(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_num(0.1).parse::<f64>().unwrap(), 0.1);
        let v = std::f64::consts::PI;
        assert_eq!(fmt_num(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn trajectory_layout() {
        let mut buf = Vec::new();
        write_trajectory_csv(&mut buf, &tiny(), 2).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,x_1,x_2,xhat_1,xhat_2,x_e_norm,envelope");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].ends_with(','));
        assert!(lines[2].starts_with("1.0000000000000000e0,"));
    }

    #[test]
    fn events_are_one_based() {
        let mut buf = Vec::new();
        write_events_csv(&mut buf, &tiny().events).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(2).unwrap(), "2,5.0000000000000000e-1,7.5000000000000000e-1,static");
        let json: serde_json::Value = serde_json::from_str(&events_json(&tiny().events).unwrap()).unwrap();
        assert_eq!(json[0]["agent_id"], 1);
        assert_eq!(json[1]["trigger_kind"], "static");
    }

    #[test]
    fn plot_data_markers() {
        let dir = tempfile::tempdir().unwrap();
        let mut quiet = tiny();
        quiet.events.clear();
        let files = emit_plot_data(&quiet, None, dir.path(), 1).unwrap();
        assert_eq!(std::fs::read_to_string(&files[1]).unwrap(), "agent_id,time,broadcast_value\n");
        let series = std::fs::read_to_string(&files[0]).unwrap();
        assert_eq!(series.lines().count(), 4);

        let other = tempfile::tempdir().unwrap();
        emit_plot_data(&tiny(), None, dir.path(), 1).unwrap();
        emit_plot_data(&tiny(), None, other.path(), 1).unwrap();
        for f in ["series.csv", "markers.csv"] {
            assert_eq!(
                std::fs::read(dir.path().join(f)).unwrap(),
                std::fs::read(other.path().join(f)).unwrap()
            );
        }
    }
}
