//! The structural tree: s-nodes with routing keys, child links and one d-tree each.

use std::sync::Arc;

use crate::bloom::BloomFilter;
use crate::dtree::DTree;
use crate::types::Key;

pub type NodeId = u32;

#[derive(Clone, Debug)]
pub enum NodeData {
    /// The root's records live in the in-memory root buffer.
    Buffer,
    Disk { tree: DTree, bloom: Option<Arc<BloomFilter>> },
}

#[derive(Clone, Debug)]
pub struct SNode {
    pub s_keys: Vec<Key>,
    pub children: Vec<NodeId>,
    pub data: NodeData,
}

impl SNode {
    pub fn leaf(data: NodeData) -> Self {
        SNode { s_keys: Vec::new(), children: Vec::new(), data }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn dtree(&self) -> Option<&DTree> {
        match &self.data {
            NodeData::Disk { tree, .. } => Some(tree),
            NodeData::Buffer => None,
        }
    }

    pub fn bloom(&self) -> Option<&BloomFilter> {
        match &self.data {
            NodeData::Disk { bloom, .. } => bloom.as_deref(),
            NodeData::Buffer => None,
        }
    }

    /// Live records in the node's d-tree (zero for the buffer-backed root).
    pub fn live(&self) -> u64 {
        self.dtree().map_or(0, |t| t.record_count)
    }

    /// Index of the child whose interval holds `key`.
    pub fn child_for(&self, key: &Key) -> usize {
        self.s_keys.partition_point(|s| s <= key)
    }
}

/// Median key and the two halves produced by an s-node split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitResult {
    pub median: Key,
    pub left: NodeId,
    pub right: NodeId,
}

/// Arena of s-nodes. Cloning is cheap enough to give every cascade its own
/// working copy while readers keep using the committed one.
#[derive(Clone, Debug)]
pub struct STree {
    nodes: Vec<Option<SNode>>,
    pub root: NodeId,
}

impl STree {
    pub fn new() -> Self {
        STree { nodes: vec![Some(SNode::leaf(NodeData::Buffer))], root: 0 }
    }

    pub(crate) fn from_parts(nodes: Vec<Option<SNode>>, root: NodeId) -> Self {
        STree { nodes, root }
    }

    pub fn node(&self, id: NodeId) -> &SNode {
        self.nodes[id as usize].as_ref().expect("s-node id refers to a live node")
    }

    pub fn try_node(&self, id: NodeId) -> Option<&SNode> {
        self.nodes.get(id as usize).and_then(|n| n.as_ref())
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut SNode {
        self.nodes[id as usize].as_mut().expect("s-node id refers to a live node")
    }

    pub fn add(&mut self, n: SNode) -> NodeId {
        self.nodes.push(Some(n));
        (self.nodes.len() - 1) as NodeId
    }

    pub fn remove(&mut self, id: NodeId) -> SNode {
        self.nodes[id as usize].take().expect("s-node removed twice")
    }

    pub fn root_node(&self) -> &SNode {
        self.node(self.root)
    }

    pub(crate) fn slots(&self) -> &[Option<SNode>] {
        &self.nodes
    }

    /// Number of s-node levels, following leftmost children.
    pub fn height(&self) -> u32 {
        let mut h = 1;
        let mut n = self.root_node();
        while let Some(&c) = n.children.first() {
            h += 1;
            n = self.node(c);
        }
        h
    }

    pub fn live_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().enumerate().filter(|(_, n)| n.is_some()).map(|(i, _)| i as NodeId)
    }

    /// Tallest d-tree anywhere in the tree.
    pub fn max_dtree_height(&self) -> u32 {
        self.nodes
            .iter()
            .flatten()
            .filter_map(|n| n.dtree())
            .map(|t| t.height)
            .max()
            .unwrap_or(0)
    }

    pub fn disk_records(&self) -> u64 {
        self.nodes.iter().flatten().map(|n| n.live()).sum()
    }
}

impl Default for STree {
    fn default() -> Self {
        Self::new()
    }
}
