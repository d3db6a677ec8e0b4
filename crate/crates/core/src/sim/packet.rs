use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PacketStatus {
    InFlight,
    Delivered,
    DroppedTtl,
    DroppedBuffer,
}

impl PacketStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            PacketStatus::InFlight => "in-flight",
            PacketStatus::Delivered => "delivered",
            PacketStatus::DroppedTtl => "dropped-ttl",
            PacketStatus::DroppedBuffer => "dropped-buffer",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub id: u64,
    pub flow: u64,
    pub src: usize,
    pub dst: usize,
    pub created_at: u64,
    pub ttl: u32,
    pub holder: usize,
    /// Visit order; `visited_mask` answers membership.
    pub visited: Vec<usize>,
    visited_mask: Vec<u64>,
    pub status: PacketStatus,
    pub forwards: u32,
    pub delivered_at: Option<u64>,
}

impl Packet {
    pub fn new(id: u64, flow: u64, src: usize, dst: usize, created_at: u64, ttl: u32) -> Self {
        let mut p = Packet {
            id,
            flow,
            src,
            dst,
            created_at,
            ttl,
            holder: src,
            visited: Vec::new(),
            visited_mask: Vec::new(),
            status: PacketStatus::InFlight,
            forwards: 0,
            delivered_at: None,
        };
        p.visit(src);
        p
    }

    pub fn has_visited(&self, node: usize) -> bool {
        self.visited_mask.get(node / 64).is_some_and(|w| w & (1 << (node % 64)) != 0)
    }

    fn visit(&mut self, node: usize) {
        if self.visited_mask.len() <= node / 64 {
            self.visited_mask.resize(node / 64 + 1, 0);
        }
        if !self.has_visited(node) {
            self.visited_mask[node / 64] |= 1 << (node % 64);
            self.visited.push(node);
        }
    }

    /// Hands the packet to `node` (one forward).
    pub fn move_to(&mut self, node: usize) {
        debug_assert_eq!(self.status, PacketStatus::InFlight);
        self.forwards += 1;
        self.holder = node;
        self.visit(node);
    }

    pub fn delay(&self) -> Option<u64> {
        self.delivered_at.map(|d| d - self.created_at)
    }

    pub fn in_flight(&self) -> bool {
        self.status == PacketStatus::InFlight
    }
}
