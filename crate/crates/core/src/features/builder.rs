use super::schema::*;
use super::state::NodeState;
use crate::error::{Error, Result};

/// Read-only view of the network at one timestep, from which feature
/// vectors are assembled. Device features are computed once per node.
pub struct FeatureContext<'a> {
    pub params: &'a FeatureParams,
    pub scales: Scales,
    pub nodes: &'a [NodeState],
    pub neighbors: &'a [Vec<usize>],
    pub queue_len: &'a [usize],
    /// `dst_queue[u * N + d]`: packets queued at `u` destined to `d`.
    pub dst_queue: &'a [u32],
    device: Vec<[f64; DEVICE_DIM]>,
}

impl<'a> FeatureContext<'a> {
    pub fn new(
        params: &'a FeatureParams,
        scales: Scales,
        nodes: &'a [NodeState],
        neighbors: &'a [Vec<usize>],
        queue_len: &'a [usize],
        dst_queue: &'a [u32],
    ) -> Self {
        let mut ctx = FeatureContext { params, scales, nodes, neighbors, queue_len, dst_queue, device: Vec::new() };
        ctx.device = (0..nodes.len()).map(|u| ctx.compute_device(u)).collect();
        ctx
    }

    fn compute_device(&self, u: usize) -> [f64; DEVICE_DIM] {
        let p = self.params;
        let s = &self.scales;
        let node = &self.nodes[u];
        let degree = self.neighbors[u].len() as f64;
        [
            norm_queue(self.queue_len[u] as f64, s.buffer),
            norm_density(degree, s.nodes),
            norm_degree(degree, p.degree_scale),
            norm_dynconn(node.dynamic_connectivity(p.dynconn_short) as f64, s.nodes),
            norm_dynconn(node.dynamic_connectivity(p.dynconn_long) as f64, s.nodes),
            norm_length(node.dispersion_short, p.length_scale),
            norm_length(node.dispersion_long, p.length_scale),
            norm_degree(node.new_neighbors as f64, p.degree_scale),
        ]
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn device(&self, u: usize) -> &[f64; DEVICE_DIM] {
        &self.device[u]
    }

    /// Path features of node `u` toward destination `d`. Nodes with no
    /// information about `d` report the initial values.
    pub fn path(&self, u: usize, d: usize) -> [f64; PATH_DIM] {
        let p = self.params;
        let s = &self.scales;
        let node = &self.nodes[u];
        let n = self.nodes.len();
        let (dst_q, dist) = match node.peers.known_loc[d] {
            Some(loc) => (self.dst_queue[u * n + d] as f64, node.pos.dist(&loc)),
            None => (0.1 * s.buffer, p.distance_init()),
        };
        [
            norm_queue(dst_q, s.buffer),
            norm_length(dist, p.length_scale),
            shifted_sigmoid(node.peers.timer[d], p.sigmoid_k, p.sigmoid_mid),
            shifted_sigmoid(node.peers.aoi[d] as f64, p.sigmoid_k, p.sigmoid_mid),
        ]
    }

    pub fn local(&self, u: usize, d: usize) -> [f64; LOCAL_DIM] {
        let mut out = [0.0; LOCAL_DIM];
        out[..DEVICE_DIM].copy_from_slice(self.device(u));
        out[DEVICE_DIM..].copy_from_slice(&self.path(u, d));
        out
    }

    fn check_dst(&self, d: usize) -> Result<()> {
        if d >= self.nodes.len() {
            Err(Error::UnknownDestination(d))
        } else {
            Ok(())
        }
    }

    /// State features for a packet at `v` with `ttl` timesteps left, headed to `d`.
    pub fn state(&self, v: usize, ttl: u32, d: usize) -> Result<[f64; STATE_DIM]> {
        self.check_dst(d)?;
        let mut out = [0.0; STATE_DIM];
        out[0] = norm_ttl(ttl as f64, self.scales.ttl);
        let own = self.local(v, d);
        out[1..1 + LOCAL_DIM].copy_from_slice(&own);
        let (mut lo, mut hi, mut sum) = (own, own, [0.0; LOCAL_DIM]);
        let nbrs = &self.neighbors[v];
        if nbrs.is_empty() {
            sum = own;
        } else {
            lo = [f64::INFINITY; LOCAL_DIM];
            hi = [f64::NEG_INFINITY; LOCAL_DIM];
            for &u in nbrs {
                let f = self.local(u, d);
                for i in 0..LOCAL_DIM {
                    lo[i] = lo[i].min(f[i]);
                    hi[i] = hi[i].max(f[i]);
                    sum[i] += f[i];
                }
            }
            let k = nbrs.len() as f64;
            sum.iter_mut().for_each(|x| *x /= k);
        }
        let base = 1 + LOCAL_DIM;
        out[base..base + LOCAL_DIM].copy_from_slice(&lo);
        out[base + LOCAL_DIM..base + 2 * LOCAL_DIM].copy_from_slice(&hi);
        out[base + 2 * LOCAL_DIM..].copy_from_slice(&sum);
        Ok(out)
    }

    /// Action features for moving the packet from `v` to `u` (`u == v` is stay).
    pub fn action(&self, v: usize, u: usize, d: usize, visited: bool) -> [f64; ACTION_DIM] {
        let mut out = [0.0; ACTION_DIM];
        out[..LOCAL_DIM].copy_from_slice(&self.local(u, d));
        out[LOCAL_DIM] = if visited { 1.0 } else { 0.0 };
        out[LOCAL_DIM + 1] = if u != v { 1.0 } else { 0.0 };
        out
    }
}
