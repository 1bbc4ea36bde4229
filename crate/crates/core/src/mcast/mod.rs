//! Overlay multicast tree: shape planning, round-robin packet spraying
//! (RRPS), proxy hedging, and receiver-side duplicate suppression.
//!
//! Layout: the root (sender) feeds layer 0; layer `l` of a depth-`D` tree has
//! `F^(l+1)` slots, and the last layer (`D-1`) holds the `N` receivers. Depth 1
//! means the root unicasts straight to the receivers. Depth 0 is the
//! direct-unicast baseline: one layer of `N` receivers fed by the root.

mod dedup;
pub mod sim;

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use dedup::{DedupBuffer, DedupOutcome};

use crate::netsim::VmId;
use crate::types::NodeAddr;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreePlan {
    pub n_receivers: u32,
    pub fanout: u32,
    pub depth: u32,
    pub hedge: u32,
    /// Node count of every layer below the root; the last entry is the receiver layer.
    pub layer_sizes: Vec<u32>,
    /// Rotate parent/child assignments per message.
    pub rrps: bool,
    /// Root sends `hedge + 1` copies to every layer-0 node.
    pub root_hedge: bool,
}

/// Picks `F = 10`, `D = round(log10 n)` (at least 1), then widens `F` to the
/// smallest value with `F^D >= n`.
pub fn plan_tree(n: u32) -> Result<TreePlan> {
    if n == 0 {
        return Err(Error::Config("tree.n must be >= 1".into()));
    }
    let depth = ((n as f64).log10().round() as u32).max(1);
    let mut fanout = 10u32;
    if pow(fanout, depth) < n as u64 {
        fanout = smallest_fanout(n, depth);
    }
    TreePlan::new(n, fanout, depth, 0)
}

fn pow(base: u32, exp: u32) -> u64 {
    (base as u64).saturating_pow(exp)
}

fn smallest_fanout(n: u32, depth: u32) -> u32 {
    let mut f = ((n as f64).powf(1.0 / depth as f64).floor() as u32).max(1);
    while pow(f, depth) < n as u64 {
        f += 1;
    }
    while f > 1 && pow(f - 1, depth) >= n as u64 {
        f -= 1;
    }
    f
}

impl TreePlan {
    pub fn new(n: u32, fanout: u32, depth: u32, hedge: u32) -> Result<TreePlan> {
        if n == 0 {
            return Err(Error::Config("tree.n must be >= 1".into()));
        }
        if depth == 0 {
            return Ok(TreePlan::direct_unicast(n).with_hedge_unchecked(hedge));
        }
        if fanout == 0 {
            return Err(Error::Config("tree.fanout must be >= 1".into()));
        }
        if pow(fanout, depth) < n as u64 {
            return Err(Error::Config(format!(
                "tree: fanout {fanout} and depth {depth} cover {} < {n} receivers",
                pow(fanout, depth)
            )));
        }
        let mut layer_sizes: Vec<u32> = (1..depth).map(|l| pow(fanout, l) as u32).collect();
        layer_sizes.push(n);
        let plan = TreePlan {
            n_receivers: n,
            fanout,
            depth,
            hedge: 0,
            layer_sizes,
            rrps: true,
            root_hedge: true,
        };
        plan.with_hedge(hedge)
    }

    /// Degenerate plan: the root unicasts to every receiver back to back.
    pub fn direct_unicast(n: u32) -> TreePlan {
        TreePlan {
            n_receivers: n,
            fanout: n,
            depth: 0,
            hedge: 0,
            layer_sizes: vec![n],
            rrps: false,
            root_hedge: true,
        }
    }

    fn with_hedge_unchecked(mut self, hedge: u32) -> TreePlan {
        self.hedge = hedge;
        self
    }

    pub fn with_hedge(mut self, hedge: u32) -> Result<TreePlan> {
        if let Some(min) = self.proxy_layers().map(|l| self.layer_sizes[l]).min() {
            if hedge >= min {
                return Err(Error::Config(format!(
                    "tree.hedge {hedge} must be smaller than the smallest proxy layer ({min})"
                )));
            }
        }
        self.hedge = hedge;
        Ok(self)
    }

    pub fn with_rrps(mut self, rrps: bool) -> TreePlan {
        self.rrps = rrps && self.depth >= 2;
        self
    }

    pub fn with_root_hedge(mut self, on: bool) -> TreePlan {
        self.root_hedge = on;
        self
    }

    pub fn is_direct_unicast(&self) -> bool {
        self.depth == 0
    }

    pub fn layer_count(&self) -> usize {
        self.layer_sizes.len()
    }

    pub fn leaf_layer(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Layers whose nodes forward to a next layer.
    pub fn proxy_layers(&self) -> Range<usize> {
        0..self.layer_sizes.len() - 1
    }

    pub fn contains(&self, addr: NodeAddr) -> bool {
        addr.is_root()
            || (addr.layer >= 0
                && (addr.layer as usize) < self.layer_sizes.len()
                && addr.index < self.layer_sizes[addr.layer as usize])
    }

    /// Copies each node receives per message in a lossless run.
    pub fn copies_per_node(&self) -> u32 {
        self.hedge + 1
    }

    /// Rotation applied at parent layer `layer` for message `msg_id`.
    ///
    /// The deepest parent layer shifts by one child block per message. Each
    /// shallower layer additionally advances once per full cycle of the layer
    /// below it, so successive messages walk every distinct parent chain.
    pub fn rotation(&self, layer: usize, msg_id: u64) -> u64 {
        if !self.rrps {
            return 0;
        }
        let deepest = self.layer_sizes.len() - 1;
        let mut extra = 0u64;
        let mut period = 1u64;
        for j in (layer + 1..deepest).rev() {
            period = period.saturating_mul(self.layer_sizes[j] as u64);
            if period > msg_id {
                break;
            }
            extra += msg_id / period;
        }
        msg_id + extra
    }

    /// Child-index range served by node `index` of `layer` for `msg_id`.
    pub fn children_range(&self, layer: usize, index: u32, msg_id: u64) -> Range<u32> {
        if layer + 1 >= self.layer_sizes.len() {
            return 0..0;
        }
        let parents = self.layer_sizes[layer] as u64;
        let child_size = self.layer_sizes[layer + 1];
        let block = (index as u64 + self.rotation(layer, msg_id) % parents) % parents;
        let start = (block * self.fanout as u64).min(child_size as u64) as u32;
        let end = ((block + 1) * self.fanout as u64).min(child_size as u64) as u32;
        start..end
    }

    /// Parent of child `index` in layer `layer + 1` for `msg_id`.
    pub fn parent_of(&self, child_layer: usize, index: u32, msg_id: u64) -> u32 {
        let parent_layer = child_layer - 1;
        let parents = self.layer_sizes[parent_layer] as u64;
        let block = (index / self.fanout) as u64;
        let rot = self.rotation(parent_layer, msg_id) % parents;
        ((block + parents - rot) % parents) as u32
    }

    /// Parent used when assignments do not rotate (report and order uplinks).
    pub fn static_parent(&self, addr: NodeAddr) -> NodeAddr {
        if addr.layer <= 0 {
            NodeAddr::ROOT
        } else {
            NodeAddr::new(addr.layer - 1, addr.index / self.fanout)
        }
    }

    /// Static children of `addr` (the rotation-free assignment).
    pub fn static_children(&self, addr: NodeAddr) -> Vec<NodeAddr> {
        if addr.is_root() {
            return (0..self.layer_sizes[0])
                .map(|i| NodeAddr::new(0, i))
                .collect();
        }
        let layer = addr.layer as usize;
        let f = self.fanout;
        match self.layer_sizes.get(layer + 1) {
            Some(&size) => (addr.index * f..((addr.index + 1) * f).min(size))
                .map(|i| NodeAddr::new(addr.layer + 1, i))
                .collect(),
            None => Vec::new(),
        }
    }
}

fn check_node(plan: &TreePlan, addr: NodeAddr) -> Result<()> {
    if plan.contains(addr) {
        Ok(())
    } else {
        Err(Error::UnknownNode(addr))
    }
}

/// Children `proxy` sends message `msg_id` to under RRPS. The root feeds every layer-0 node.
pub fn rrps_children(proxy: NodeAddr, msg_id: u64, plan: &TreePlan) -> Result<Vec<NodeAddr>> {
    check_node(plan, proxy)?;
    if proxy.is_root() {
        return Ok((0..plan.layer_sizes[0])
            .map(|i| NodeAddr::new(0, i))
            .collect());
    }
    let layer = proxy.layer as usize;
    Ok(plan
        .children_range(layer, proxy.index, msg_id)
        .map(|i| NodeAddr::new(proxy.layer + 1, i))
        .collect())
}

/// Extra children `proxy` feeds: the RRPS children of its `H` preceding siblings.
pub fn hedge_targets(proxy: NodeAddr, msg_id: u64, plan: &TreePlan) -> Result<Vec<NodeAddr>> {
    check_node(plan, proxy)?;
    if proxy.is_root() || proxy.layer as usize >= plan.leaf_layer() {
        return Ok(Vec::new());
    }
    let layer = proxy.layer as usize;
    let parents = plan.layer_sizes[layer];
    let mut out = Vec::new();
    for j in 1..=plan.hedge {
        let sibling = (proxy.index + parents - j % parents) % parents;
        out.extend(
            plan.children_range(layer, sibling, msg_id)
                .map(|i| NodeAddr::new(proxy.layer + 1, i)),
        );
    }
    Ok(out)
}

/// Distinct root-to-leaf virtual paths under RRPS: the product of `F^d` for `d` in `1..D`.
pub fn path_count(plan: &TreePlan) -> u64 {
    if plan.depth <= 1 {
        return 1;
    }
    (1..plan.depth).fold(1u64, |acc, d| acc.saturating_mul(pow(plan.fanout, d)))
}

/// Maps tree addresses onto simulator VM ids: root is VM 0, then layers in order.
#[derive(Clone, Debug)]
pub struct Topology {
    offsets: Vec<u32>,
    sizes: Vec<u32>,
}

impl Topology {
    pub fn new(plan: &TreePlan) -> Topology {
        let mut offsets = Vec::with_capacity(plan.layer_sizes.len());
        let mut next = 1u32;
        for &s in &plan.layer_sizes {
            offsets.push(next);
            next += s;
        }
        Topology {
            offsets,
            sizes: plan.layer_sizes.clone(),
        }
    }

    pub fn vm_count(&self) -> u32 {
        1 + self.sizes.iter().sum::<u32>()
    }

    pub fn vm(&self, addr: NodeAddr) -> VmId {
        if addr.is_root() {
            VmId(0)
        } else {
            VmId(self.offsets[addr.layer as usize] + addr.index)
        }
    }

    pub fn try_vm(&self, addr: NodeAddr) -> Result<VmId> {
        if addr.is_root() {
            return Ok(VmId(0));
        }
        match self.sizes.get(addr.layer.max(0) as usize) {
            Some(&s) if addr.layer >= 0 && addr.index < s => Ok(self.vm(addr)),
            _ => Err(Error::UnknownNode(addr)),
        }
    }

    pub fn addr(&self, vm: VmId) -> NodeAddr {
        if vm.0 == 0 {
            return NodeAddr::ROOT;
        }
        let layer = self.offsets.partition_point(|&o| o <= vm.0) - 1;
        NodeAddr::new(layer as i32, vm.0 - self.offsets[layer])
    }

    pub fn layer_vms(&self, layer: usize) -> Range<u32> {
        self.offsets[layer]..self.offsets[layer] + self.sizes[layer]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn plan_for_100_and_1000() {
        let p = plan_tree(100).unwrap();
        assert_eq!((p.depth, p.fanout), (2, 10));
        let p = plan_tree(1000).unwrap();
        assert_eq!((p.depth, p.fanout), (3, 10));
        assert_eq!(p.layer_sizes, vec![10, 100, 1000]);
    }

    #[test]
    fn plan_for_200_takes_ceiling_fanout() {
        let p = plan_tree(200).unwrap();
        assert_eq!(p.depth, 2);
        // Smallest F with F^2 >= 200, found by brute force.
        let oracle = (1..).find(|f: &u32| f * f >= 200).unwrap();
        assert_eq!(p.fanout, oracle);
        assert_eq!(p.fanout, 15);
    }

    #[test]
    fn plan_tiny() {
        let p = plan_tree(1).unwrap();
        assert_eq!((p.depth, p.fanout, p.layer_sizes.clone()), (1, 10, vec![1]));
        assert!(plan_tree(0).is_err());
    }

    #[test]
    fn hedge_must_fit_proxy_layers() {
        let p = plan_tree(100).unwrap();
        assert!(p.clone().with_hedge(9).is_ok());
        assert!(p.with_hedge(10).is_err());
    }

    #[test]
    fn rrps_zero_rotation_and_block_shift() {
        let p = plan_tree(100).unwrap();
        let c0 = rrps_children(NodeAddr::new(0, 0), 0, &p).unwrap();
        assert_eq!(c0, (0..10).map(|i| NodeAddr::new(1, i)).collect::<Vec<_>>());
        let c1 = rrps_children(NodeAddr::new(0, 0), 1, &p).unwrap();
        assert_eq!(
            c1,
            (10..20).map(|i| NodeAddr::new(1, i)).collect::<Vec<_>>()
        );
    }

    fn assert_partition(p: &TreePlan, msg: u64) {
        for layer in p.proxy_layers() {
            let mut seen = vec![0u32; p.layer_sizes[layer + 1] as usize];
            for idx in 0..p.layer_sizes[layer] {
                for c in rrps_children(NodeAddr::new(layer as i32, idx), msg, p).unwrap() {
                    seen[c.index as usize] += 1;
                    assert_eq!(p.parent_of(layer + 1, c.index, msg), idx);
                }
            }
            assert!(seen.iter().all(|&n| n == 1), "layer {layer} msg {msg}");
        }
    }

    #[test]
    fn rrps_partitions_every_layer() {
        for p in [
            plan_tree(100).unwrap(),
            plan_tree(1000).unwrap(),
            plan_tree(200).unwrap(),
            TreePlan::new(30, 4, 3, 0).unwrap(),
        ] {
            for msg in [0, 1, 7, 99, 100, 101, 12_345] {
                assert_partition(&p, msg);
            }
        }
    }

    #[test]
    fn hedging_gives_h_plus_one_parents() {
        let p = plan_tree(100).unwrap().with_hedge(2).unwrap();
        for msg in 0..25 {
            let mut copies = vec![0u32; 100];
            for idx in 0..10 {
                let own = rrps_children(NodeAddr::new(0, idx), msg, &p).unwrap();
                let extra = hedge_targets(NodeAddr::new(0, idx), msg, &p).unwrap();
                for c in own.iter().chain(extra.iter()) {
                    copies[c.index as usize] += 1;
                }
            }
            assert!(copies.iter().all(|&c| c == 3));
        }
    }

    #[test]
    fn hedge_disabled_is_empty() {
        let p = plan_tree(100).unwrap();
        assert!(hedge_targets(NodeAddr::new(0, 3), 5, &p)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn hedge_small_layer_matches_two_proxy_example() {
        // Two layer-0 proxies, four layer-1 nodes: node 3 belongs to proxy 1 and
        // with H = 1 also hears from proxy 0.
        let p = TreePlan::new(4, 2, 2, 1).unwrap().with_rrps(false);
        let from_p0 = hedge_targets(NodeAddr::new(0, 0), 0, &p).unwrap();
        assert!(from_p0.contains(&NodeAddr::new(1, 3)));
        let own_p1 = rrps_children(NodeAddr::new(0, 1), 0, &p).unwrap();
        assert!(own_p1.contains(&NodeAddr::new(1, 3)));
    }

    #[test]
    fn path_count_formula() {
        assert_eq!(path_count(&TreePlan::new(10, 10, 1, 0).unwrap()), 1);
        assert_eq!(path_count(&plan_tree(100).unwrap()), 10);
        assert_eq!(path_count(&plan_tree(1000).unwrap()), 1000);
    }

    fn distinct_chains(p: &TreePlan, leaf: u32) -> usize {
        let leaf_layer = p.leaf_layer();
        let span: u64 = p.fanout as u64 * p.layer_sizes[leaf_layer - 1] as u64;
        let mut chains = BTreeSet::new();
        for msg in 0..span {
            let mut chain = Vec::new();
            let mut idx = leaf;
            for layer in (1..=leaf_layer).rev() {
                idx = p.parent_of(layer, idx, msg);
                chain.push(idx);
            }
            chains.insert(chain);
        }
        chains.len()
    }

    #[test]
    fn enumerated_paths_match_formula() {
        let p2 = plan_tree(100).unwrap();
        assert_eq!(distinct_chains(&p2, 37) as u64, path_count(&p2));
        let p3 = plan_tree(1000).unwrap();
        assert_eq!(distinct_chains(&p3, 0) as u64, path_count(&p3));
        assert_eq!(distinct_chains(&p3, 999) as u64, path_count(&p3));
    }

    #[test]
    fn rrps_off_fixes_assignments() {
        let p = plan_tree(100).unwrap().with_rrps(false);
        assert_eq!(
            rrps_children(NodeAddr::new(0, 2), 0, &p).unwrap(),
            rrps_children(NodeAddr::new(0, 2), 17, &p).unwrap()
        );
    }

    #[test]
    fn unknown_node_rejected() {
        let p = plan_tree(100).unwrap();
        assert!(rrps_children(NodeAddr::new(0, 10), 0, &p).is_err());
        assert!(rrps_children(NodeAddr::new(5, 0), 0, &p).is_err());
    }

    #[test]
    fn topology_round_trips() {
        let p = plan_tree(1000).unwrap();
        let t = Topology::new(&p);
        assert_eq!(t.vm_count(), 1 + 10 + 100 + 1000);
        for vm in 0..t.vm_count() {
            assert_eq!(t.vm(t.addr(VmId(vm))), VmId(vm));
        }
    }

    #[test]
    fn direct_unicast_is_single_layer() {
        let p = TreePlan::direct_unicast(100);
        assert!(p.is_direct_unicast());
        assert_eq!(rrps_children(NodeAddr::ROOT, 3, &p).unwrap().len(), 100);
        assert_eq!(path_count(&p), 1);
    }
}
