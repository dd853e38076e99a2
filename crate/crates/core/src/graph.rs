//! Simple undirected graphs and the structural primitives the rest of the
//! crate consumes: degrees, connected components and BFS distances.

use std::collections::VecDeque;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("edge ({0}, {1}) has an endpoint outside [0, {2})")]
    NodeOutOfRange(usize, usize, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("{got} block labels for {n} nodes")]
    BlockCount { n: usize, got: usize },
    #[error("block label 0 on node {0}; labels are 1-based")]
    ZeroBlock(usize),
    #[error("source node {0} out of range")]
    SourceOutOfRange(usize),
}

/// A contact network for one cluster.
///
/// Node ids are `0..n`; neighbor lists are kept sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Network {
    cluster_id: u32,
    adj: Vec<Vec<u32>>,
    blocks: Option<Vec<u16>>,
    edge_count: usize,
}

impl Network {
    /// Strict constructor: rejects self-loops, duplicate edges and
    /// out-of-range endpoints.
    pub fn new(
        cluster_id: u32,
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        blocks: Option<Vec<u16>>,
    ) -> Result<Self, GraphError> {
        let mut adj = vec![Vec::new(); n];
        let mut edge_count = 0;
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(GraphError::NodeOutOfRange(u, v, n));
            }
            if u == v {
                return Err(GraphError::SelfLoop(u));
            }
            adj[u].push(v as u32);
            adj[v].push(u as u32);
            edge_count += 1;
        }
        for (u, list) in adj.iter_mut().enumerate() {
            list.sort_unstable();
            if let Some(w) = list.windows(2).find(|w| w[0] == w[1]) {
                return Err(GraphError::DuplicateEdge(u, w[0] as usize));
            }
        }
        Self::check_blocks(n, &blocks)?;
        Ok(Self { cluster_id, adj, blocks, edge_count })
    }

    /// Builds a simple graph from a multigraph edge list, dropping self-loops
    /// and collapsing parallel edges.
    pub fn from_multigraph(
        cluster_id: u32,
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        blocks: Option<Vec<u16>>,
    ) -> Result<Self, GraphError> {
        let mut adj = vec![Vec::new(); n];
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(GraphError::NodeOutOfRange(u, v, n));
            }
            if u != v {
                adj[u].push(v as u32);
                adj[v].push(u as u32);
            }
        }
        let mut twice = 0;
        for list in adj.iter_mut() {
            list.sort_unstable();
            list.dedup();
            twice += list.len();
        }
        Self::check_blocks(n, &blocks)?;
        Ok(Self { cluster_id, adj, blocks, edge_count: twice / 2 })
    }

    fn check_blocks(n: usize, blocks: &Option<Vec<u16>>) -> Result<(), GraphError> {
        if let Some(b) = blocks {
            if b.len() != n {
                return Err(GraphError::BlockCount { n, got: b.len() });
            }
            if let Some(j) = b.iter().position(|&x| x == 0) {
                return Err(GraphError::ZeroBlock(j));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn cluster_id(&self) -> u32 {
        self.cluster_id
    }

    #[inline]
    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    #[inline]
    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    #[inline]
    pub fn neighbors(&self, j: usize) -> &[u32] {
        &self.adj[j]
    }

    #[inline]
    pub fn degree(&self, j: usize) -> usize {
        self.adj[j].len()
    }

    pub fn blocks(&self) -> Option<&[u16]> {
        self.blocks.as_deref()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u].binary_search(&(v as u32)).is_ok()
    }

    /// Edges as `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adj.iter().enumerate().flat_map(|(u, list)| {
            list.iter().map(|&v| v as usize).filter(move |&v| v > u).map(move |v| (u, v))
        })
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adj.iter().map(Vec::len).collect()
    }

    pub fn connected_components(&self) -> ComponentLabeling {
        let n = self.node_count();
        let mut raw = vec![usize::MAX; n];
        let mut groups: Vec<(usize, usize)> = Vec::new(); // (size, smallest node)
        let mut queue = VecDeque::new();
        for start in 0..n {
            if raw[start] != usize::MAX {
                continue;
            }
            let label = groups.len();
            raw[start] = label;
            queue.push_back(start);
            let mut size = 0;
            while let Some(u) = queue.pop_front() {
                size += 1;
                for &v in &self.adj[u] {
                    let v = v as usize;
                    if raw[v] == usize::MAX {
                        raw[v] = label;
                        queue.push_back(v);
                    }
                }
            }
            // Components are discovered in order of their smallest node.
            groups.push((size, start));
        }
        let mut order: Vec<usize> = (0..groups.len()).collect();
        order.sort_by(|&a, &b| groups[b].0.cmp(&groups[a].0).then(groups[a].1.cmp(&groups[b].1)));
        let mut rank = vec![0; groups.len()];
        for (r, &g) in order.iter().enumerate() {
            rank[g] = r;
        }
        ComponentLabeling {
            component_of: raw.into_iter().map(|g| rank[g]).collect(),
            sizes: order.iter().map(|&g| groups[g].0).collect(),
        }
    }

    /// Multi-source BFS. `None` marks nodes unreachable from every source;
    /// an empty source set yields all `None`.
    pub fn bfs_distances(&self, sources: &[usize]) -> Result<Vec<Option<u32>>, GraphError> {
        let mut dist = vec![None; self.node_count()];
        let mut queue = VecDeque::with_capacity(sources.len());
        for &s in sources {
            if s >= self.node_count() {
                return Err(GraphError::SourceOutOfRange(s));
            }
            if dist[s].is_none() {
                dist[s] = Some(0);
                queue.push_back(s);
            }
        }
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for &v in &self.adj[u] {
                let v = v as usize;
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        Ok(dist)
    }
}

/// Component membership with components ordered largest first.
///
/// Index 0 is the largest component; ties in size go to the
/// component holding the smaller node id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentLabeling {
    pub component_of: Vec<usize>,
    pub sizes: Vec<usize>,
}

impl ComponentLabeling {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn size_of_node(&self, j: usize) -> usize {
        self.sizes[self.component_of[j]]
    }

    pub fn largest(&self) -> usize {
        self.sizes.first().copied().unwrap_or(0)
    }
}
