//! Oriented weighted networks and their tree/cycle decomposition.
//!
//! Vertex ids are 0-based in memory. The JSON graph format uses 1-based ids.
//! Integer incidence data (`H`, `H̃`, `Q`, `Z`) is kept in `i64` matrices so
//! the partition identities hold exactly.

use std::collections::{HashSet, VecDeque};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub tail: usize,
    pub head: usize,
    pub conductance: f64,
}

/// A network `(G, a)`: vertices `0..n`, oriented edges and per-edge conductances.
///
/// A directed edge `tail -> head` with conductance `w` sets `a[tail][head] = w`:
/// agent `tail` weighs the information coming from agent `head`. An undirected
/// edge sets both entries.
#[derive(Clone, Debug, PartialEq)]
pub struct OrientedNetwork {
    n: usize,
    edges: Vec<Edge>,
    directed: bool,
}

impl OrientedNetwork {
    /// Builds a network keeping each edge's orientation as given.
    pub fn new(n: usize, edges: Vec<Edge>, directed: bool) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidNetwork("network needs at least one vertex".into()));
        }
        let mut seen = HashSet::with_capacity(edges.len());
        for (k, e) in edges.iter().enumerate() {
            if e.tail >= n || e.head >= n {
                return Err(Error::InvalidNetwork(format!(
                    "edge {k} ({}, {}) has a vertex outside 0..{n}",
                    e.tail, e.head
                )));
            }
            if e.tail == e.head {
                return Err(Error::InvalidNetwork(format!(
                    "edge {k} is a self-loop at {}",
                    e.tail
                )));
            }
            if !e.conductance.is_finite() {
                return Err(Error::InvalidNetwork(format!(
                    "edge {k} has a non-finite conductance"
                )));
            }
            let key = if directed {
                (e.tail, e.head)
            } else {
                (e.tail.min(e.head), e.tail.max(e.head))
            };
            if !seen.insert(key) {
                return Err(Error::InvalidNetwork(format!(
                    "duplicate edge ({}, {})",
                    e.tail, e.head
                )));
            }
        }
        Ok(Self { n, edges, directed })
    }

    /// Undirected network stored with the canonical orientation `tail < head`.
    pub fn undirected<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let edges = edges
            .into_iter()
            .map(|(a, b, w)| Edge {
                tail: a.min(b),
                head: a.max(b),
                conductance: w,
            })
            .collect();
        Self::new(n, edges, false)
    }

    /// Undirected network with unit conductances.
    pub fn simple<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        Self::undirected(n, edges.into_iter().map(|(a, b)| (a, b, 1.0)))
    }

    pub fn directed<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let edges = edges
            .into_iter()
            .map(|(tail, head, conductance)| Edge {
                tail,
                head,
                conductance,
            })
            .collect();
        Self::new(n, edges, true)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// True when every conductance equals one.
    pub fn is_simple(&self) -> bool {
        self.edges.iter().all(|e| e.conductance == 1.0)
    }

    /// Same network with the edges selected by `flip` reversed.
    pub fn reoriented(&self, flip: &[bool]) -> Result<Self> {
        if flip.len() != self.edges.len() {
            return Err(Error::DimensionMismatch {
                expected: self.edges.len(),
                got: flip.len(),
            });
        }
        let edges = self
            .edges
            .iter()
            .zip(flip)
            .map(|(e, &f)| {
                if f {
                    Edge {
                        tail: e.head,
                        head: e.tail,
                        ..*e
                    }
                } else {
                    *e
                }
            })
            .collect();
        Self::new(self.n, edges, self.directed)
    }

    /// Conductance matrix `A` with zero diagonal.
    pub fn conductance_matrix(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for e in &self.edges {
            a[(e.tail, e.head)] += e.conductance;
            if !self.directed {
                a[(e.head, e.tail)] += e.conductance;
            }
        }
        a
    }

    /// Coupling matrix `D = A − diag(row sums of A)`.
    pub fn coupling_matrix(&self) -> DMatrix<f64> {
        let mut d = self.conductance_matrix();
        for i in 0..self.n {
            let s = d.row(i).sum();
            d[(i, i)] -= s;
        }
        d
    }

    /// Weighted Laplacian `−D`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        -self.coupling_matrix()
    }

    /// Sorted neighbour lists of the underlying undirected graph, with edge indices.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.n];
        for (k, e) in self.edges.iter().enumerate() {
            adj[e.tail].push((e.head, k));
            adj[e.head].push((e.tail, k));
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Degrees in the underlying undirected graph.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for e in &self.edges {
            deg[e.tail] += 1;
            deg[e.head] += 1;
        }
        deg
    }

    pub fn regular_degree(&self) -> Option<usize> {
        let deg = self.degrees();
        let d = *deg.first()?;
        deg.iter().all(|&x| x == d).then_some(d)
    }

    fn bfs_distances(adj: &[Vec<(usize, usize)>], source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; adj.len()];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap_or(0);
            for &(v, _) in &adj[u] {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        let adj = self.adjacency();
        Self::bfs_distances(&adj, 0).iter().all(Option::is_some)
    }

    /// Diameter of the underlying undirected graph, BFS from every vertex.
    /// `None` when disconnected.
    pub fn diameter(&self) -> Option<usize> {
        let adj = self.adjacency();
        let mut diam = 0;
        for s in 0..self.n {
            for d in Self::bfs_distances(&adj, s) {
                diam = diam.max(d?);
            }
        }
        Some(diam)
    }

    /// Whether the underlying undirected graph is 2-colourable.
    pub fn is_bipartite(&self) -> bool {
        let adj = self.adjacency();
        let mut colour: Vec<Option<bool>> = vec![None; self.n];
        for s in 0..self.n {
            if colour[s].is_some() {
                continue;
            }
            colour[s] = Some(false);
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                let cu = colour[u].unwrap_or(false);
                for &(v, _) in &adj[u] {
                    match colour[v] {
                        None => {
                            colour[v] = Some(!cu);
                            queue.push_back(v);
                        }
                        Some(cv) if cv == cu => return false,
                        Some(_) => {}
                    }
                }
            }
        }
        true
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            n: self.n,
            edges: self
                .edges
                .iter()
                .map(|e| (e.tail + 1, e.head + 1, e.conductance))
                .collect(),
            directed: self.directed,
        }
    }

    pub fn from_file(file: &GraphFile) -> Result<Self> {
        let mut edges = Vec::with_capacity(file.edges.len());
        for &(tail, head, conductance) in &file.edges {
            if tail == 0 || head == 0 {
                return Err(Error::InvalidNetwork(
                    "vertex ids in graph files are 1-based".into(),
                ));
            }
            edges.push(Edge {
                tail: tail - 1,
                head: head - 1,
                conductance,
            });
        }
        if file.directed {
            Self::new(file.n, edges, true)
        } else {
            Self::undirected(file.n, edges.into_iter().map(|e| (e.tail, e.head, e.conductance)))
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(&serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// On-disk graph format: `{"n": 3, "edges": [[1, 2, 1.0], ...], "directed": false}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
    pub directed: bool,
}

/// Coboundary matrix `H` (m×n): row `k` has `+1` at the head and `−1` at the tail of edge `k`.
pub fn coboundary(net: &OrientedNetwork) -> DMatrix<i64> {
    coboundary_of(net.n(), net.edges().iter())
}

fn coboundary_of<'a>(n: usize, edges: impl IntoIterator<Item = &'a Edge>) -> DMatrix<i64> {
    let edges: Vec<&Edge> = edges.into_iter().collect();
    let mut h = DMatrix::zeros(edges.len(), n);
    for (k, e) in edges.iter().enumerate() {
        h[(k, e.head)] = 1;
        h[(k, e.tail)] = -1;
    }
    h
}

/// One fundamental cycle: its chord and every edge with the sign of the
/// edge's orientation relative to the cycle's (the chord is always `+1`).
#[derive(Clone, Debug, PartialEq)]
pub struct FundamentalCycle {
    pub chord: usize,
    pub edges: Vec<(usize, i8)>,
}

impl FundamentalCycle {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn shared_edges(&self, other: &FundamentalCycle) -> usize {
        let mine: HashSet<usize> = self.edges.iter().map(|&(e, _)| e).collect();
        other.edges.iter().filter(|(e, _)| mine.contains(e)).count()
    }
}

/// Spanning-tree/cycle-space decomposition of a connected network.
///
/// Edges are reordered tree-first: positions `0..n-1` hold the BFS tree edges
/// in discovery order, positions `n-1..m` the chords in their original order.
/// Cycle `k` is the fundamental cycle of chord `k`.
#[derive(Clone, Debug)]
pub struct TreeCycleDecomposition {
    n: usize,
    tree_edges: Vec<usize>,
    chord_edges: Vec<usize>,
    h_tilde: DMatrix<i64>,
    h_reordered: DMatrix<i64>,
    q: DMatrix<i64>,
    cycles: Vec<FundamentalCycle>,
    tree_conductances: Vec<f64>,
    chord_conductances: Vec<f64>,
}

/// BFS spanning tree from vertex 0, neighbours scanned in ascending id order.
pub fn spanning_tree_decomposition(net: &OrientedNetwork) -> Result<TreeCycleDecomposition> {
    let n = net.n();
    let edges = net.edges();
    let adj = net.adjacency();
    for list in &adj {
        if list.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidNetwork(
                "underlying undirected graph has parallel edges".into(),
            ));
        }
    }

    let mut parent_edge: Vec<Option<usize>> = vec![None; n];
    let mut parent = vec![usize::MAX; n];
    let mut depth = vec![0usize; n];
    let mut visited = vec![false; n];
    let mut tree_edges = Vec::with_capacity(n.saturating_sub(1));
    let mut in_tree = vec![false; edges.len()];
    visited[0] = true;
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for &(v, k) in &adj[u] {
            if !visited[v] {
                visited[v] = true;
                parent[v] = u;
                parent_edge[v] = Some(k);
                depth[v] = depth[u] + 1;
                tree_edges.push(k);
                in_tree[k] = true;
                queue.push_back(v);
            }
        }
    }
    if visited.iter().any(|v| !v) {
        return Err(Error::DisconnectedGraph);
    }

    let mut tree_position = vec![usize::MAX; edges.len()];
    for (pos, &k) in tree_edges.iter().enumerate() {
        tree_position[k] = pos;
    }
    let chord_edges: Vec<usize> = (0..edges.len()).filter(|&k| !in_tree[k]).collect();

    let c = chord_edges.len();
    let mut q = DMatrix::zeros(c, n - 1);
    let mut cycles = Vec::with_capacity(c);
    for (row, &chord) in chord_edges.iter().enumerate() {
        let Edge { tail, head, .. } = edges[chord];
        // Sign of each tree edge as traversed along the tree path tail -> head.
        let mut path: Vec<(usize, i8)> = Vec::new();
        let mut descent: Vec<(usize, i8)> = Vec::new();
        let (mut a, mut b) = (tail, head);
        while a != b {
            if depth[a] >= depth[b] {
                let k = parent_edge[a].expect("non-root vertex has a parent edge");
                let s = if edges[k].tail == a { 1 } else { -1 };
                path.push((k, s));
                a = parent[a];
            } else {
                let k = parent_edge[b].expect("non-root vertex has a parent edge");
                let s = if edges[k].head == b { 1 } else { -1 };
                descent.push((k, s));
                b = parent[b];
            }
        }
        path.extend(descent.into_iter().rev());

        let mut cycle_edges = vec![(chord, 1i8)];
        for &(k, s) in &path {
            q[(row, tree_position[k])] = -(s as i64);
            cycle_edges.push((k, -s));
        }
        cycles.push(FundamentalCycle {
            chord,
            edges: cycle_edges,
        });
    }

    let h_tilde = coboundary_of(n, tree_edges.iter().map(|&k| &edges[k]));
    let h_reordered = coboundary_of(n, tree_edges.iter().chain(chord_edges.iter()).map(|&k| &edges[k]));
    let tree_conductances = tree_edges.iter().map(|&k| edges[k].conductance).collect();
    let chord_conductances = chord_edges.iter().map(|&k| edges[k].conductance).collect();

    Ok(TreeCycleDecomposition {
        n,
        tree_edges,
        chord_edges,
        h_tilde,
        h_reordered,
        q,
        cycles,
        tree_conductances,
        chord_conductances,
    })
}

impl TreeCycleDecomposition {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Corank `c = m − n + 1`.
    pub fn corank(&self) -> usize {
        self.chord_edges.len()
    }

    /// Original indices of the tree edges in tree order.
    pub fn tree_edges(&self) -> &[usize] {
        &self.tree_edges
    }

    /// Original indices of the chords in cycle order.
    pub fn chord_edges(&self) -> &[usize] {
        &self.chord_edges
    }

    /// Permutation mapping reordered position to original edge index.
    pub fn edge_order(&self) -> Vec<usize> {
        self.tree_edges.iter().chain(&self.chord_edges).copied().collect()
    }

    /// Coboundary `H̃` of the spanning tree, `(n−1)×n`.
    pub fn tree_coboundary(&self) -> &DMatrix<i64> {
        &self.h_tilde
    }

    /// Coboundary of the whole network with rows in tree-first order.
    pub fn reordered_coboundary(&self) -> &DMatrix<i64> {
        &self.h_reordered
    }

    /// Cycle incidence matrix `Q`, `c×(n−1)`.
    pub fn cycle_incidence(&self) -> &DMatrix<i64> {
        &self.q
    }

    pub fn fundamental_cycles(&self) -> &[FundamentalCycle] {
        &self.cycles
    }

    pub fn tree_conductances(&self) -> &[f64] {
        &self.tree_conductances
    }

    pub fn chord_conductances(&self) -> &[f64] {
        &self.chord_conductances
    }

    /// `[I_{n−1}; −Q] · H̃`, which must reproduce the reordered coboundary.
    pub fn partitioned_coboundary(&self) -> DMatrix<i64> {
        let n1 = self.n - 1;
        let c = self.corank();
        let mut stacked = DMatrix::zeros(n1 + c, n1);
        stacked.view_mut((0, 0), (n1, n1)).fill_with_identity();
        stacked.view_mut((n1, 0), (c, n1)).copy_from(&(-&self.q));
        stacked * &self.h_tilde
    }

    /// Cycle-space basis `Z = (Q I_c)`, `c×m`, in tree-first edge order.
    pub fn cycle_basis(&self) -> DMatrix<i64> {
        let n1 = self.n - 1;
        let c = self.corank();
        let mut z = DMatrix::zeros(c, n1 + c);
        z.view_mut((0, 0), (c, n1)).copy_from(&self.q);
        z.view_mut((0, n1), (c, c)).fill_with_identity();
        z
    }

    pub fn q_f64(&self) -> DMatrix<f64> {
        self.q.map(|v| v as f64)
    }

    pub fn h_tilde_f64(&self) -> DMatrix<f64> {
        self.h_tilde.map(|v| v as f64)
    }

    /// `C₁ + Qᵀ C₂ Q`, the reduced edge-space form of the weighted Laplacian.
    pub fn weighted_tree_form(&self) -> DMatrix<f64> {
        let q = self.q_f64();
        let c2 = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.chord_conductances));
        let c1 = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.tree_conductances));
        c1 + q.transpose() * c2 * q
    }

    /// `I_{n−1} + QᵀQ`.
    pub fn unit_tree_form(&self) -> DMatrix<f64> {
        let q = self.q_f64();
        DMatrix::identity(self.n - 1, self.n - 1) + q.transpose() * q
    }
}

/// Cycle Laplacian `L_c = Q Qᵀ`.
pub fn cycle_laplacian(dec: &TreeCycleDecomposition) -> Result<DMatrix<i64>> {
    if dec.corank() == 0 {
        return Err(Error::EmptyCycleSpace);
    }
    Ok(&dec.q * dec.q.transpose())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CycleStats {
    /// Mean excess cycle length `Σ(|O_k| − 1) / (n − 1)`.
    pub mu: f64,
    /// `max_k |O_k| + Σ_{l≠k} |O_k ∩ O_l|`; zero without cycles.
    pub delta: usize,
    pub lengths: Vec<usize>,
    /// Fundamental cycles pairwise edge-disjoint.
    pub disjoint: bool,
}

pub fn cycle_stats(dec: &TreeCycleDecomposition) -> CycleStats {
    let cycles = dec.fundamental_cycles();
    let lengths: Vec<usize> = cycles.iter().map(FundamentalCycle::len).collect();
    let excess: usize = lengths.iter().map(|l| l - 1).sum();
    let mu = if dec.n() > 1 {
        excess as f64 / (dec.n() - 1) as f64
    } else {
        0.0
    };
    let mut delta = 0;
    let mut disjoint = true;
    for (k, ck) in cycles.iter().enumerate() {
        let mut row = ck.len();
        for (l, cl) in cycles.iter().enumerate() {
            if l != k {
                let shared = ck.shared_edges(cl);
                disjoint &= shared == 0;
                row += shared;
            }
        }
        delta = delta.max(row);
    }
    CycleStats {
        mu,
        delta,
        lengths,
        disjoint,
    }
}
