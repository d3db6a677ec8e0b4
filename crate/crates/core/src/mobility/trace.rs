//! Position traces: CSV rows `t,node_id,x,y` sampled at 1 Hz.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::Point;

pub const TRACE_HEADER: [&str; 4] = ["t", "node_id", "x", "y"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySample {
    pub t: u64,
    pub node: u64,
    pub x: f64,
    pub y: f64,
}

/// Dense per-timestep positions for a fixed node set.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceTable {
    /// Original node ids, ascending; simulation node `i` is `node_ids[i]`.
    pub node_ids: Vec<u64>,
    /// Trace time of the first row of `positions`.
    pub start: u64,
    /// `positions[t][i]`.
    pub positions: Vec<Vec<Point>>,
}

impl TraceTable {
    /// Nodes that never move, for `steps + 1` rows (t = 0..=steps).
    pub fn stationary(points: &[Point], steps: u64) -> Self {
        TraceTable {
            node_ids: (0..points.len() as u64).collect(),
            start: 0,
            positions: vec![points.to_vec(); steps as usize + 1],
        }
    }

    pub fn duration(&self) -> u64 {
        self.positions.len() as u64
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn sample_count(&self) -> usize {
        self.positions.len() * self.node_ids.len()
    }

    pub fn samples(&self) -> impl Iterator<Item = TrajectorySample> + '_ {
        self.positions.iter().enumerate().flat_map(move |(t, row)| {
            row.iter().zip(&self.node_ids).map(move |(p, &node)| TrajectorySample {
                t: self.start + t as u64,
                node,
                x: p.x,
                y: p.y,
            })
        })
    }
}

pub fn load_trace(path: &Path) -> Result<TraceTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::config(path, e.to_string()))?;
    parse_trace(file)
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize, name: &str) -> Result<T> {
    let raw = rec.get(i).ok_or_else(|| Error::TraceParse { line, msg: format!("missing field {name}") })?;
    raw.trim()
        .parse::<T>()
        .map_err(|_| Error::TraceParse { line, msg: format!("bad {name} value '{raw}'") })
}

pub fn parse_trace<R: Read>(reader: R) -> Result<TraceTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut rows: BTreeMap<u64, BTreeMap<u64, Point>> = BTreeMap::new();
    let mut nodes = BTreeSet::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::TraceParse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(idx + 1),
            msg: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(idx + 1);
        if idx == 0 && rec.get(0).map(str::trim) == Some("t") {
            continue;
        }
        if rec.len() != 4 {
            return Err(Error::TraceParse { line, msg: format!("expected 4 fields, found {}", rec.len()) });
        }
        let t_raw: f64 = parse_field(&rec, 0, line, "t")?;
        if !(t_raw >= 0.0) || t_raw.fract() != 0.0 {
            return Err(Error::TraceParse { line, msg: format!("t must be a whole second, got {t_raw}") });
        }
        let t = t_raw as u64;
        let node: u64 = parse_field(&rec, 1, line, "node_id")?;
        let x: f64 = parse_field(&rec, 2, line, "x")?;
        let y: f64 = parse_field(&rec, 3, line, "y")?;
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::TraceParse { line, msg: "non-finite coordinate".into() });
        }
        if rows.entry(t).or_default().insert(node, Point::new(x, y)).is_some() {
            return Err(Error::TraceParse { line, msg: format!("duplicate sample for node {node} at t={t}") });
        }
        nodes.insert(node);
    }
    let (Some(&first), Some(&last)) = (rows.keys().next(), rows.keys().next_back()) else {
        return Err(Error::TraceParse { line: 1, msg: "trace is empty".into() });
    };
    let node_ids: Vec<u64> = nodes.into_iter().collect();
    let mut positions = Vec::with_capacity((last - first + 1) as usize);
    for t in first..=last {
        let Some(row) = rows.get(&t) else {
            return Err(Error::TraceGap { node: node_ids[0], t });
        };
        let mut dense = Vec::with_capacity(node_ids.len());
        for &n in &node_ids {
            match row.get(&n) {
                Some(p) => dense.push(*p),
                None => return Err(Error::TraceGap { node: n, t }),
            }
        }
        positions.push(dense);
    }
    Ok(TraceTable { node_ids, start: first, positions })
}

pub fn write_trace<W: Write>(writer: W, samples: impl IntoIterator<Item = TrajectorySample>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACE_HEADER)?;
    for s in samples {
        w.write_record([s.t.to_string(), s.node.to_string(), format!("{:?}", s.x), format!("{:?}", s.y)])?;
    }
    w.flush()?;
    Ok(())
}
