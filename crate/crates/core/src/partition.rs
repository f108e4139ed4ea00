//! Block partitions of the off-diagonal transition entries over a cluster
//! tree.
//!
//! A block (A, B) ties every transition from a member of A to a member of B
//! to one parameter. A partition is valid when A and B never overlap and
//! every ordered pair (i, j), i ≠ j, falls in exactly one block.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tree::{ClusterTree, NodeId};

/// Default row-count cap for the all-pairs partition.
pub const DEFAULT_FINEST_CAP: usize = 2048;

/// Row-count cap for brute-force validation.
pub const VALIDATE_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Block {
    /// Row-side subtree.
    pub a: NodeId,
    /// Column-side subtree.
    pub b: NodeId,
}

impl Block {
    pub fn new(a: NodeId, b: NodeId) -> Self {
        Block { a, b }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPartition {
    blocks: Vec<Block>,
}

impl BlockPartition {
    pub fn from_blocks(blocks: Vec<Block>) -> Self {
        BlockPartition { blocks }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn position(&self, block: Block) -> Option<usize> {
        self.blocks.iter().position(|&b| b == block)
    }

    /// Block indices grouped by their row-side node.
    pub fn by_row_node(&self, tree: &ClusterTree) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); tree.len()];
        for (k, blk) in self.blocks.iter().enumerate() {
            out[blk.a].push(k);
        }
        out
    }

    /// B(x_i): indices of the blocks whose row side contains `row`.
    pub fn blocks_for_row(&self, tree: &ClusterTree, row: usize) -> Vec<usize> {
        let leaf = tree.leaf_of_row(row);
        (0..self.blocks.len())
            .filter(|&k| tree.contains(self.blocks[k].a, leaf))
            .collect()
    }

    /// B(x_i) for every row at once.
    pub fn row_index(&self, tree: &ClusterTree) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); tree.n_points()];
        for (k, blk) in self.blocks.iter().enumerate() {
            for &row in tree.members(blk.a) {
                out[row].push(k);
            }
        }
        out
    }
}

pub fn coarsest_partition(tree: &ClusterTree) -> Result<BlockPartition> {
    if tree.n_points() < 2 {
        return Err(Error::InvalidArgument("a partition needs at least two points".into()));
    }
    let blocks = (0..tree.len())
        .filter_map(|a| tree.sibling(a).map(|b| Block::new(a, b)))
        .collect();
    Ok(BlockPartition { blocks })
}

pub fn finest_partition(tree: &ClusterTree, cap: usize) -> Result<BlockPartition> {
    let n = tree.n_points();
    if n < 2 {
        return Err(Error::InvalidArgument("a partition needs at least two points".into()));
    }
    if n > cap {
        return Err(Error::CapExceeded { n, cap });
    }
    let leaves: Vec<NodeId> = tree.leaves().collect();
    let mut blocks = Vec::with_capacity(n * (n - 1));
    for &a in &leaves {
        for &b in &leaves {
            if a != b {
                blocks.push(Block::new(a, b));
            }
        }
    }
    Ok(BlockPartition { blocks })
}

/// Splits `block` on the given side, replacing it by two blocks in place.
pub fn refine_partition_side(p: &BlockPartition, block: Block, side: Side, tree: &ClusterTree) -> Result<BlockPartition> {
    let pos = p
        .position(block)
        .ok_or_else(|| Error::InvalidArgument(format!("block {block:?} is not in the partition")))?;
    let node = match side {
        Side::A => block.a,
        Side::B => block.b,
    };
    let [l, r] = tree
        .children(node)
        .ok_or_else(|| Error::InvalidArgument(format!("cannot split leaf node {node}")))?;
    let (first, second) = match side {
        Side::A => (Block::new(l, block.b), Block::new(r, block.b)),
        Side::B => (Block::new(block.a, l), Block::new(block.a, r)),
    };
    let mut blocks = p.blocks.clone();
    blocks[pos] = first;
    blocks.insert(pos + 1, second);
    Ok(BlockPartition { blocks })
}

/// Splits the larger-cardinality side of `block` (ties to the row side),
/// falling back to the other side when the preferred one is a leaf.
pub fn refine_partition(p: &BlockPartition, block: Block, tree: &ClusterTree) -> Result<BlockPartition> {
    let side = preferred_side(block, tree).ok_or_else(|| {
        Error::InvalidArgument(format!("block {block:?} joins two leaves and cannot be refined"))
    })?;
    refine_partition_side(p, block, side, tree)
}

fn preferred_side(block: Block, tree: &ClusterTree) -> Option<Side> {
    let (sa, sb) = (tree.size(block.a), tree.size(block.b));
    match (sa > 1, sb > 1) {
        (false, false) => None,
        (true, false) => Some(Side::A),
        (false, true) => Some(Side::B),
        (true, true) => Some(if sb > sa { Side::B } else { Side::A }),
    }
}

/// `rounds` refinements, each splitting the block with the largest |A|·|B|
/// (ties to the lowest (a, b) node pair). Stops early once every block is a
/// leaf pair.
pub fn auto_refine(p: &BlockPartition, tree: &ClusterTree, rounds: usize) -> Result<BlockPartition> {
    let mut current = p.clone();
    for _ in 0..rounds {
        let target = current
            .blocks
            .iter()
            .copied()
            .filter(|b| tree.size(b.a) * tree.size(b.b) > 1)
            .max_by(|x, y| {
                (tree.size(x.a) * tree.size(x.b))
                    .cmp(&(tree.size(y.a) * tree.size(y.b)))
                    .then(y.cmp(x))
            });
        match target {
            Some(b) => current = refine_partition(&current, b, tree)?,
            None => break,
        }
    }
    Ok(current)
}

/// First violation found by [`validate_partition`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PartitionIssue {
    UnknownNode { block: usize, node: NodeId },
    Overlapping { block: usize },
    Uncovered { row: usize, col: usize },
    DoublyCovered { row: usize, col: usize },
}

impl fmt::Display for PartitionIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartitionIssue::UnknownNode { block, node } => write!(f, "block {block} names unknown node {node}"),
            PartitionIssue::Overlapping { block } => write!(f, "block {block} joins overlapping subtrees"),
            PartitionIssue::Uncovered { row, col } => write!(f, "pair ({row}, {col}) is not covered"),
            PartitionIssue::DoublyCovered { row, col } => write!(f, "pair ({row}, {col}) is covered more than once"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Validation {
    pub issue: Option<PartitionIssue>,
}

impl Validation {
    pub fn is_valid(&self) -> bool {
        self.issue.is_none()
    }
}

/// Brute-force check over all N² ordered pairs.
pub fn validate_partition(p: &BlockPartition, tree: &ClusterTree) -> Result<Validation> {
    let n = tree.n_points();
    if n > VALIDATE_CAP {
        return Err(Error::CapExceeded { n, cap: VALIDATE_CAP });
    }
    let fail = |issue| Ok(Validation { issue: Some(issue) });
    for (k, blk) in p.blocks.iter().enumerate() {
        for node in [blk.a, blk.b] {
            if node >= tree.len() {
                return fail(PartitionIssue::UnknownNode { block: k, node });
            }
        }
        if tree.overlaps(blk.a, blk.b) {
            return fail(PartitionIssue::Overlapping { block: k });
        }
    }
    let mut cover = vec![0u8; n * n];
    for blk in &p.blocks {
        for &i in tree.members(blk.a) {
            for &j in tree.members(blk.b) {
                let c = &mut cover[i * n + j];
                *c = c.saturating_add(1);
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            match (i == j, cover[i * n + j]) {
                (true, _) | (false, 1) => {}
                (false, 0) => return fail(PartitionIssue::Uncovered { row: i, col: j }),
                (false, _) => return fail(PartitionIssue::DoublyCovered { row: i, col: j }),
            }
        }
    }
    Ok(Validation { issue: None })
}

/// A named way of choosing a partition over a tree.
pub trait PartitionStrategy: fmt::Debug + Send + Sync {
    fn name(&self) -> String;
    fn build(&self, tree: &ClusterTree) -> Result<BlockPartition>;
}

#[derive(Debug, Clone, Copy)]
pub struct Coarsest;

impl PartitionStrategy for Coarsest {
    fn name(&self) -> String {
        "coarsest".into()
    }
    fn build(&self, tree: &ClusterTree) -> Result<BlockPartition> {
        coarsest_partition(tree)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Finest {
    pub cap: usize,
}

impl PartitionStrategy for Finest {
    fn name(&self) -> String {
        "finest".into()
    }
    fn build(&self, tree: &ClusterTree) -> Result<BlockPartition> {
        finest_partition(tree, self.cap)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Refined {
    pub rounds: usize,
}

impl PartitionStrategy for Refined {
    fn name(&self) -> String {
        format!("refine:{}", self.rounds)
    }
    fn build(&self, tree: &ClusterTree) -> Result<BlockPartition> {
        auto_refine(&coarsest_partition(tree)?, tree, self.rounds)
    }
}

/// Options shared by strategy constructors.
#[derive(Debug, Clone, Copy)]
pub struct StrategyOptions {
    pub finest_cap: usize,
}

impl Default for StrategyOptions {
    fn default() -> Self {
        StrategyOptions {
            finest_cap: DEFAULT_FINEST_CAP,
        }
    }
}

type StrategyFactory = fn(Option<&str>, &StrategyOptions) -> Result<Box<dyn PartitionStrategy>>;

/// Parses `name` or `name:arg` into a partition strategy.
#[derive(Clone)]
pub struct PartitionRegistry {
    factories: BTreeMap<&'static str, StrategyFactory>,
}

impl PartitionRegistry {
    pub fn builtin() -> Self {
        let mut factories: BTreeMap<&'static str, StrategyFactory> = BTreeMap::new();
        factories.insert("coarsest", |arg, _| match arg {
            None => Ok(Box::new(Coarsest)),
            Some(a) => Err(Error::InvalidArgument(format!("coarsest takes no argument, got '{a}'"))),
        });
        factories.insert("finest", |arg, opts| match arg {
            None => Ok(Box::new(Finest { cap: opts.finest_cap })),
            Some(a) => Err(Error::InvalidArgument(format!("finest takes no argument, got '{a}'"))),
        });
        factories.insert("refine", |arg, _| {
            let rounds = arg
                .ok_or_else(|| Error::InvalidArgument("refine needs a round count, e.g. refine:5".into()))?
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad refinement count in '{}'", arg.unwrap_or(""))))?;
            Ok(Box::new(Refined { rounds }))
        });
        PartitionRegistry { factories }
    }

    pub fn register(&mut self, name: &'static str, factory: StrategyFactory) {
        self.factories.insert(name, factory);
    }

    pub fn parse(&self, mode: &str, opts: &StrategyOptions) -> Result<Box<dyn PartitionStrategy>> {
        let (name, arg) = match mode.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (mode, None),
        };
        let factory = self.factories.get(name).ok_or_else(|| Error::Unknown {
            what: "partition mode",
            name: mode.to_string(),
        })?;
        factory(arg, opts)
    }
}
