//! Material networks: elements as nodes, reported alloy systems as edges
//! (binary) or triangles (ternary), plus candidate enumeration for the
//! recommendation tasks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::dataset::{AlloyRecord, EmbeddingTable, Label};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An alloy system over network node indices, stored with its members
/// sorted ascending so that set identity is structural identity. The derived
/// `Ord` is exactly the ascending lexicographic order used for all
/// deterministic entity listings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Entity {
    Pair(usize, usize),
    Triple(usize, usize, usize),
}

impl Entity {
    pub fn pair(a: usize, b: usize) -> Result<Entity> {
        if a == b {
            return Err(Error::Contract(format!(
                "pair members must be distinct, got ({a}, {b})"
            )));
        }
        Ok(Entity::Pair(a.min(b), a.max(b)))
    }

    pub fn triple(a: usize, b: usize, c: usize) -> Result<Entity> {
        if a == b || a == c || b == c {
            return Err(Error::Contract(format!(
                "triple members must be distinct, got ({a}, {b}, {c})"
            )));
        }
        let mut v = [a, b, c];
        v.sort_unstable();
        Ok(Entity::Triple(v[0], v[1], v[2]))
    }

    pub fn from_nodes(nodes: &[usize]) -> Result<Entity> {
        match nodes {
            [a, b] => Entity::pair(*a, *b),
            [a, b, c] => Entity::triple(*a, *b, *c),
            _ => Err(Error::Contract(format!(
                "an entity has 2 or 3 members, got {}",
                nodes.len()
            ))),
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Entity::Pair(..) => 2,
            Entity::Triple(..) => 3,
        }
    }

    pub fn nodes(&self) -> Vec<usize> {
        match *self {
            Entity::Pair(a, b) => vec![a, b],
            Entity::Triple(a, b, c) => vec![a, b, c],
        }
    }

    pub fn contains(&self, node: usize) -> bool {
        match *self {
            Entity::Pair(a, b) => a == node || b == node,
            Entity::Triple(a, b, c) => a == node || b == node || c == node,
        }
    }
}

impl fmt::Display for Entity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Entity::Pair(a, b) => write!(f, "{a}-{b}"),
            Entity::Triple(a, b, c) => write!(f, "{a}-{b}-{c}"),
        }
    }
}

/// How candidates are enumerated for a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryMode {
    /// Query one element, rank partner elements (binary systems).
    PartnerForElement,
    /// Query one element, rank completing pairs (ternary systems).
    PairForElement,
    /// Query an element pair, rank third elements (ternary systems).
    ThirdForPair,
}

/// Element graph induced by the positive records of one arity.
///
/// Nodes are exactly the elements that occur in at least one positive
/// record, ordered by their row in the embedding table, so node indexing is
/// reproducible from the inputs alone. Ternary records contribute all three
/// edges of their triangle to the adjacency.
#[derive(Debug, Clone)]
pub struct MaterialNetwork {
    arity: usize,
    symbols: Vec<String>,
    table_rows: Vec<usize>,
    node_index: BTreeMap<String, usize>,
    positives: Vec<Entity>,
    adjacency: Tensor,
}

/// Build the network from labelled records; only positives define nodes and
/// edges. All positive records must share one arity.
pub fn build_network(records: &[AlloyRecord], table: &EmbeddingTable) -> Result<MaterialNetwork> {
    let positives: Vec<&AlloyRecord> = records
        .iter()
        .filter(|r| r.label == Label::Positive)
        .collect();
    if positives.is_empty() {
        return Err(Error::Config(
            "cannot build a network without positive records".into(),
        ));
    }
    let arity = positives[0].elements.len();
    for rec in &positives {
        if rec.elements.len() != arity {
            return Err(Error::Config(format!(
                "records mix {arity}- and {}-element systems in one network",
                rec.elements.len()
            )));
        }
    }

    // Nodes: elements of >= 1 positive, ordered by embedding-table row.
    let mut table_rows: BTreeSet<usize> = BTreeSet::new();
    for rec in &positives {
        for sym in &rec.elements {
            let row = table.index_of(sym).ok_or_else(|| {
                Error::Reference(format!("element {sym} is not in the embedding table"))
            })?;
            table_rows.insert(row);
        }
    }
    let table_rows: Vec<usize> = table_rows.into_iter().collect();
    let symbols: Vec<String> = table_rows
        .iter()
        .map(|&r| table.symbols()[r].clone())
        .collect();
    let node_index: BTreeMap<String, usize> = symbols
        .iter()
        .enumerate()
        .map(|(i, s)| (s.clone(), i))
        .collect();

    let mut entities: BTreeSet<Entity> = BTreeSet::new();
    let n = symbols.len();
    let mut adj = vec![0.0; n * n];
    for rec in &positives {
        let nodes: Vec<usize> = rec.elements.iter().map(|s| node_index[s]).collect();
        let entity = Entity::from_nodes(&nodes)?;
        entities.insert(entity);
        let members = entity.nodes();
        for (i, &a) in members.iter().enumerate() {
            for &b in &members[i + 1..] {
                adj[a * n + b] = 1.0;
                adj[b * n + a] = 1.0;
            }
        }
    }

    Ok(MaterialNetwork {
        arity,
        symbols,
        table_rows,
        node_index,
        positives: entities.into_iter().collect(),
        adjacency: Tensor::new(vec![n, n], adj)?,
    })
}

impl MaterialNetwork {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol_of(&self, node: usize) -> &str {
        &self.symbols[node]
    }

    pub fn node_of(&self, symbol: &str) -> Option<usize> {
        self.node_index.get(symbol).copied()
    }

    /// Positive entities, ascending, deduplicated.
    pub fn positives(&self) -> &[Entity] {
        &self.positives
    }

    pub fn adjacency(&self) -> &Tensor {
        &self.adjacency
    }

    pub fn degree(&self, node: usize) -> f64 {
        self.adjacency.row(node).iter().sum()
    }

    pub fn edge_count(&self) -> usize {
        let n = self.len();
        let mut count = 0;
        for i in 0..n {
            for j in i + 1..n {
                if self.adjacency.at(i, j) != 0.0 {
                    count += 1;
                }
            }
        }
        count
    }

    /// Rows of the embedding table for the network nodes, `[n, dim]`.
    pub fn node_features(&self, table: &EmbeddingTable) -> Tensor {
        table.rows_for(&self.table_rows)
    }

    /// Map element symbols to an [`Entity`]; unknown symbols are query errors.
    pub fn entity_from_symbols<S: AsRef<str>>(&self, symbols: &[S]) -> Result<Entity> {
        let mut nodes = Vec::with_capacity(symbols.len());
        for sym in symbols {
            let node = self.node_of(sym.as_ref()).ok_or_else(|| {
                Error::Query(format!(
                    "element {} is not a node of the trained network",
                    sym.as_ref()
                ))
            })?;
            nodes.push(node);
        }
        Entity::from_nodes(&nodes)
    }

    /// Human-readable label, members joined by `-` in node order.
    pub fn entity_label(&self, entity: Entity) -> String {
        entity
            .nodes()
            .iter()
            .map(|&n| self.symbols[n].as_str())
            .collect::<Vec<_>>()
            .join("-")
    }

    /// Symmetric renormalised adjacency with self-loops,
    /// `D^{-1/2} (A + I) D^{-1/2}` where `D` is the degree matrix of `A + I`.
    pub fn normalized_adjacency(&self) -> Tensor {
        let n = self.len();
        let a = self.adjacency.data();
        let mut with_loops = a.to_vec();
        for i in 0..n {
            with_loops[i * n + i] += 1.0;
        }
        let inv_sqrt: Vec<f64> = (0..n)
            .map(|i| {
                let d: f64 = with_loops[i * n..(i + 1) * n].iter().sum();
                1.0 / d.sqrt()
            })
            .collect();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = inv_sqrt[i] * with_loops[i * n + j] * inv_sqrt[j];
            }
        }
        Tensor::new(vec![n, n], out).expect("square shape")
    }

    /// Row-stochastic neighbour averaging operator: row `i` is `1/|N(i)|`
    /// over the neighbours of `i` (no self-loops); all-zero for isolated
    /// nodes, so their aggregated message is the zero vector.
    pub fn neighbor_mean_operator(&self) -> Tensor {
        let n = self.len();
        let a = self.adjacency.data();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let deg: f64 = a[i * n..(i + 1) * n].iter().sum();
            if deg > 0.0 {
                for j in 0..n {
                    out[i * n + j] = a[i * n + j] / deg;
                }
            }
        }
        Tensor::new(vec![n, n], out).expect("square shape")
    }

    /// Diagonal `1/sqrt(d_i)` from the loop-free adjacency; zero for
    /// isolated nodes (whose interaction terms vanish anyway).
    pub fn inv_sqrt_degree_operator(&self) -> Tensor {
        let n = self.len();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let d = self.degree(i);
            if d > 0.0 {
                out[i * n + i] = 1.0 / d.sqrt();
            }
        }
        Tensor::new(vec![n, n], out).expect("square shape")
    }

    /// All triangles of the (binary) adjacency, ascending.
    pub fn triangles(&self) -> Vec<Entity> {
        let n = self.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if self.adjacency.at(i, j) == 0.0 {
                    continue;
                }
                for k in j + 1..n {
                    if self.adjacency.at(i, k) != 0.0 && self.adjacency.at(j, k) != 0.0 {
                        out.push(Entity::Triple(i, j, k));
                    }
                }
            }
        }
        out
    }

    /// CSV export of the positive entities (edge list for binary networks,
    /// triangle list for ternary ones).
    pub fn positives_csv(&self) -> String {
        let mut out = String::from(if self.arity == 2 {
            "source,target\n"
        } else {
            "a,b,c\n"
        });
        for entity in &self.positives {
            let labels: Vec<&str> = entity
                .nodes()
                .iter()
                .map(|&n| self.symbols[n].as_str())
                .collect();
            out.push_str(&labels.join(","));
            out.push('\n');
        }
        out
    }

    fn check_node(&self, node: usize) -> Result<()> {
        if node >= self.len() {
            return Err(Error::Query(format!(
                "query node {node} is outside the network (size {})",
                self.len()
            )));
        }
        Ok(())
    }

    /// Enumerate all candidate entities for a query under the given mode,
    /// ascending, skipping everything in `exclude` (canonically the training
    /// positives) and any entity equal to a known positive passed there.
    pub fn enumerate_candidates(
        &self,
        mode: QueryMode,
        query: &[usize],
        exclude: &BTreeSet<Entity>,
    ) -> Result<Vec<Entity>> {
        for &q in query {
            self.check_node(q)?;
        }
        let n = self.len();
        let mut out = Vec::new();
        match (mode, query) {
            (QueryMode::PartnerForElement, &[q]) => {
                for j in 0..n {
                    if j != q {
                        out.push(Entity::pair(q, j)?);
                    }
                }
            }
            (QueryMode::PairForElement, &[q]) => {
                for j in 0..n {
                    for k in j + 1..n {
                        if j != q && k != q {
                            out.push(Entity::triple(q, j, k)?);
                        }
                    }
                }
            }
            (QueryMode::ThirdForPair, &[a, b]) => {
                if a == b {
                    return Err(Error::Query(format!(
                        "pair query members must be distinct, got ({a}, {b})"
                    )));
                }
                for k in 0..n {
                    if k != a && k != b {
                        out.push(Entity::triple(a, b, k)?);
                    }
                }
            }
            (mode, q) => {
                return Err(Error::Query(format!(
                    "{:?} takes {} query node(s), got {}",
                    mode,
                    match mode {
                        QueryMode::ThirdForPair => 2,
                        _ => 1,
                    },
                    q.len()
                )));
            }
        }
        out.retain(|e| !exclude.contains(e));
        out.sort_unstable();
        Ok(out)
    }
}
