use std::io::Write;

use serde::Serialize;

use super::packet::{Packet, PacketStatus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PacketRecord {
    pub packet_id: u64,
    pub src: usize,
    pub dst: usize,
    pub created: u64,
    pub status: &'static str,
    pub delivered_at: Option<u64>,
    pub forwards: u32,
}

impl From<&Packet> for PacketRecord {
    fn from(p: &Packet) -> Self {
        PacketRecord {
            packet_id: p.id,
            src: p.src,
            dst: p.dst,
            created: p.created_at,
            status: p.status.as_str(),
            delivered_at: p.delivered_at,
            forwards: p.forwards,
        }
    }
}

impl PacketRecord {
    pub fn delay(&self) -> Option<u64> {
        self.delivered_at.map(|d| d - self.created)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub scenario: String,
    pub seed: u64,
    pub policy: String,
    pub generated: usize,
    pub delivered: usize,
    pub dropped_ttl: usize,
    pub dropped_buffer: usize,
    pub in_flight: usize,
    pub delivery_rate: f64,
    /// Seconds; NaN when nothing was delivered.
    pub mean_delay: f64,
    pub mean_forwards: f64,
    pub records: Vec<PacketRecord>,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    scenario: &'a str,
    seed: u64,
    policy: &'a str,
    delivery_rate: f64,
    mean_delay_s: f64,
    mean_forwards: f64,
}

impl MetricsReport {
    pub fn from_records(scenario: &str, seed: u64, policy: &str, records: Vec<PacketRecord>, timestep: f64) -> Self {
        let count = |s: PacketStatus| records.iter().filter(|r| r.status == s.as_str()).count();
        let delivered: Vec<&PacketRecord> = records.iter().filter(|r| r.delivered_at.is_some()).collect();
        let n = delivered.len();
        let mean = |f: &dyn Fn(&PacketRecord) -> f64| {
            if n == 0 {
                f64::NAN
            } else {
                delivered.iter().map(|r| f(r)).sum::<f64>() / n as f64
            }
        };
        let mean_delay = mean(&|r| r.delay().unwrap() as f64 * timestep);
        let mean_forwards = mean(&|r| r.forwards as f64);
        let generated = records.len();
        MetricsReport {
            scenario: scenario.to_string(),
            seed,
            policy: policy.to_string(),
            generated,
            delivered: n,
            dropped_ttl: count(PacketStatus::DroppedTtl),
            dropped_buffer: count(PacketStatus::DroppedBuffer),
            in_flight: count(PacketStatus::InFlight),
            delivery_rate: if generated == 0 { f64::NAN } else { n as f64 / generated as f64 },
            mean_delay,
            mean_forwards,
            records,
        }
    }

    pub fn from_packets(scenario: &str, seed: u64, policy: &str, packets: &[Packet], timestep: f64) -> Self {
        Self::from_records(scenario, seed, policy, packets.iter().map(PacketRecord::from).collect(), timestep)
    }

    pub fn require_settled(&self) -> Result<()> {
        if self.in_flight > 0 {
            return Err(Error::InFlightAfterCooldown { in_flight: self.in_flight });
        }
        Ok(())
    }

    pub fn delay_of(&self, packet: u64) -> Option<u64> {
        self.records.get(packet as usize).filter(|r| r.packet_id == packet).and_then(|r| r.delay())
    }
}

/// Writes a `# key=value ...` provenance line.
pub fn write_provenance<W: Write>(out: &mut W, digest: &str, seed: Option<u64>) -> Result<()> {
    match seed {
        Some(s) => writeln!(out, "# digest={digest} seed={s}")?,
        None => writeln!(out, "# digest={digest}")?,
    }
    Ok(())
}

pub fn write_summary_csv<W: Write>(mut out: W, digest: &str, reports: &[MetricsReport]) -> Result<()> {
    let seed = match reports {
        [one] => Some(one.seed),
        _ => None,
    };
    write_provenance(&mut out, digest, seed)?;
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(SummaryRow {
            scenario: &r.scenario,
            seed: r.seed,
            policy: &r.policy,
            delivery_rate: r.delivery_rate,
            mean_delay_s: r.mean_delay,
            mean_forwards: r.mean_forwards,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_packets_csv<W: Write>(mut out: W, digest: &str, report: &MetricsReport) -> Result<()> {
    write_provenance(&mut out, digest, Some(report.seed))?;
    let mut w = csv::Writer::from_writer(out);
    for r in &report.records {
        w.serialize(r)?;
    }
    if report.records.is_empty() {
        w.write_record(["packet_id", "src", "dst", "created", "status", "delivered_at", "forwards"])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u64, created: u64, delivered: Option<u64>, forwards: u32) -> PacketRecord {
        PacketRecord {
            packet_id: id,
            src: 0,
            dst: 1,
            created,
            status: if delivered.is_some() { "delivered" } else { "dropped-ttl" },
            delivered_at: delivered,
            forwards,
        }
    }

    #[test]
    fn seven_of_ten() {
        let recs = (0..10).map(|i| rec(i, 0, (i < 7).then_some(3), 1)).collect();
        let m = MetricsReport::from_records("s", 1, "p", recs, 1.0);
        assert_eq!(m.delivery_rate, 0.7);
        assert_eq!(m.dropped_ttl, 3);
    }

    #[test]
    fn delay_and_forwards_over_delivered_only() {
        let m = MetricsReport::from_records("s", 1, "p", vec![rec(0, 5, Some(25), 1), rec(1, 0, None, 9)], 1.0);
        assert_eq!(m.mean_delay, 20.0);
        assert_eq!(m.mean_forwards, 1.0);
    }

    #[test]
    fn summary_csv_layout() {
        let m = MetricsReport::from_records("s", 4, "utility", vec![rec(0, 5, Some(25), 2)], 1.0);
        let mut buf = Vec::new();
        write_summary_csv(&mut buf, "abcd", std::slice::from_ref(&m)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# digest=abcd seed=4");
        assert_eq!(lines[1], "scenario,seed,policy,delivery_rate,mean_delay_s,mean_forwards");
        assert_eq!(lines[2], "s,4,utility,1.0,20.0,2.0");
        let mut buf = Vec::new();
        write_packets_csv(&mut buf, "abcd", &m).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "packet_id,src,dst,created,status,delivered_at,forwards");
        assert_eq!(text.lines().nth(2).unwrap(), "0,0,1,5,delivered,25,2");
    }
}
