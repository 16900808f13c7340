//! Ingestion of element embeddings and labelled alloy records, negative-pool
//! construction, stratified cross-validation folds, and the planted-community
//! synthetic generator used by the self-contained tests and examples.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::Entity;
use crate::tensor::Tensor;

// ---------------------------------------------------------------------------
// Embedding tables

/// Fixed element embeddings for one source language: symbols in file order
/// (which defines node indexing everywhere downstream) and a dense
/// `[len, dim]` value matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    language: String,
    dim: usize,
    symbols: Vec<String>,
    index: BTreeMap<String, usize>,
    matrix: Vec<f64>,
}

impl EmbeddingTable {
    pub fn from_parts(
        language: impl Into<String>,
        symbols: Vec<String>,
        dim: usize,
        matrix: Vec<f64>,
    ) -> Result<Self> {
        if symbols.len() * dim != matrix.len() {
            return Err(Error::Dimension(format!(
                "{} symbols at dim {} need {} values, got {}",
                symbols.len(),
                dim,
                symbols.len() * dim,
                matrix.len()
            )));
        }
        let mut index = BTreeMap::new();
        for (i, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::Contract(format!("duplicate symbol {s}")));
            }
        }
        Ok(EmbeddingTable {
            language: language.into(),
            dim,
            symbols,
            index,
            matrix,
        })
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Row index of a symbol, i.e. its global node index.
    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn vector(&self, row: usize) -> &[f64] {
        &self.matrix[row * self.dim..(row + 1) * self.dim]
    }

    /// Gather rows into a `[k, dim]` tensor.
    pub fn rows_for(&self, rows: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &r in rows {
            data.extend_from_slice(self.vector(r));
        }
        Tensor::new(vec![rows.len(), self.dim], data).expect("gathered rows are rectangular")
    }

    /// The full `[len, dim]` matrix as a tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.len(), self.dim], self.matrix.clone())
            .expect("table matrix is rectangular")
    }

    /// Transposed view for feature-wise analysis: rows become the embedding
    /// dimensions, labelled `d0, d1, ...`.
    pub fn feature_view(&self) -> (Vec<String>, Tensor) {
        let n = self.len();
        let mut data = vec![0.0; self.matrix.len()];
        for r in 0..n {
            for c in 0..self.dim {
                data[c * n + r] = self.matrix[r * self.dim + c];
            }
        }
        let labels = (0..self.dim).map(|c| format!("d{c}")).collect();
        (
            labels,
            Tensor::new(vec![self.dim, n], data).expect("transpose is rectangular"),
        )
    }
}

/// Language tag encoded in the file name's penultimate extension
/// (`elements.eng.tsv` -> `eng`); `und` when absent.
pub fn language_of_path(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    let parts: Vec<&str> = name.split('.').collect();
    if parts.len() >= 3 {
        parts[parts.len() - 2].to_lowercase()
    } else {
        "und".to_string()
    }
}

/// Read a tab-separated embedding table: column 1 the element symbol, the
/// remaining columns the vector. Lines starting with `#` are comments.
/// When `expected_dim` is given, every row must have exactly that many
/// values; otherwise the first data row fixes the width.
pub fn load_embeddings(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let display = path.display().to_string();

    let mut dim = expected_dim;
    let mut symbols = Vec::new();
    let mut matrix = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 2 {
            return Err(Error::Format {
                path: display,
                line: lineno,
                message: "expected a symbol followed by tab-separated values".into(),
            });
        }
        let symbol = fields[0].trim();
        if symbol.is_empty() {
            return Err(Error::Format {
                path: display,
                line: lineno,
                message: "empty element symbol".into(),
            });
        }
        if !seen.insert(symbol.to_string()) {
            return Err(Error::Format {
                path: display,
                line: lineno,
                message: format!("duplicate symbol {symbol}"),
            });
        }
        let want = *dim.get_or_insert(fields.len() - 1);
        if fields.len() - 1 != want {
            return Err(Error::Format {
                path: display,
                line: lineno,
                message: format!("expected {} values, got {}", want, fields.len() - 1),
            });
        }
        for field in &fields[1..] {
            let value: f64 = field.trim().parse().map_err(|_| Error::Format {
                path: display.clone(),
                line: lineno,
                message: format!("cannot parse {field:?} as a real number"),
            })?;
            matrix.push(value);
        }
        symbols.push(symbol.to_string());
    }
    if symbols.is_empty() {
        return Err(Error::Format {
            path: display,
            line: 1,
            message: "no embedding rows".into(),
        });
    }
    EmbeddingTable::from_parts(language_of_path(path), symbols, dim.unwrap(), matrix)
}

/// Write a table in the format accepted by [`load_embeddings`]. Values are
/// printed with the shortest round-tripping representation, so ingest →
/// serialise → ingest is the identity.
pub fn save_embeddings(table: &EmbeddingTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!(
        "# element embeddings: {} symbols, dim {}, language {}\n",
        table.len(),
        table.dim(),
        table.language()
    );
    for (i, sym) in table.symbols().iter().enumerate() {
        out.push_str(sym);
        for v in table.vector(i) {
            out.push('\t');
            out.push_str(&format!("{v:?}"));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// Alloy records

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Positive,
    Negative,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Positive => "pos",
            Label::Negative => "neg",
        })
    }
}

/// One labelled alloy system. Elements are stored sorted so records compare
/// by set identity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct AlloyRecord {
    pub elements: Vec<String>,
    pub label: Label,
}

impl AlloyRecord {
    pub fn new(mut elements: Vec<String>, label: Label) -> Result<Self> {
        elements.sort_unstable();
        if elements.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Contract(format!(
                "repeated element in system {}",
                elements.join("-")
            )));
        }
        if !(elements.len() == 2 || elements.len() == 3) {
            return Err(Error::Contract(format!(
                "alloy systems have 2 or 3 elements, got {}",
                elements.len()
            )));
        }
        Ok(AlloyRecord { elements, label })
    }

    pub fn system_label(&self) -> String {
        self.elements.join("-")
    }
}

/// Read labelled alloy records from CSV with header `elements,label`,
/// elements joined by `-`, labels `pos`/`neg`. Exact duplicates are
/// dropped; the same system under both labels is a conflict. Every element
/// must exist in `table`.
pub fn load_alloys(path: impl AsRef<Path>, table: &EmbeddingTable) -> Result<Vec<AlloyRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let display = path.display().to_string();

    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() || l.trim_start().starts_with('#') => continue,
            Some((n, l)) => break (n + 1, l),
            None => {
                return Err(Error::Format {
                    path: display,
                    line: 1,
                    message: "empty file, expected header elements,label".into(),
                })
            }
        }
    };
    if header.1.trim().to_lowercase() != "elements,label" {
        return Err(Error::Format {
            path: display,
            line: header.0,
            message: format!("expected header elements,label, got {:?}", header.1.trim()),
        });
    }

    let mut records = Vec::new();
    let mut labels_by_system: BTreeMap<Vec<String>, (Label, usize)> = BTreeMap::new();
    for (lineno, line) in lines {
        let lineno = lineno + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 {
            return Err(Error::Format {
                path: display,
                line: lineno,
                message: format!("expected 2 comma-separated fields, got {}", fields.len()),
            });
        }
        let elements: Vec<String> = fields[0]
            .split('-')
            .map(|s| s.trim().to_string())
            .collect();
        if elements.iter().any(String::is_empty) {
            return Err(Error::Format {
                path: display,
                line: lineno,
                message: format!("malformed system {:?}", fields[0]),
            });
        }
        let label = match fields[1].trim() {
            "pos" => Label::Positive,
            "neg" => Label::Negative,
            other => {
                return Err(Error::Format {
                    path: display,
                    line: lineno,
                    message: format!("label must be pos or neg, got {other:?}"),
                })
            }
        };
        let record = AlloyRecord::new(elements, label).map_err(|e| Error::Format {
            path: display.clone(),
            line: lineno,
            message: e.to_string(),
        })?;
        for sym in &record.elements {
            if table.index_of(sym).is_none() {
                return Err(Error::Reference(format!(
                    "{display}:{lineno}: element {sym} is not in the embedding table"
                )));
            }
        }
        match labels_by_system.get(&record.elements) {
            Some(&(prev, prev_line)) if prev != record.label => {
                return Err(Error::Format {
                    path: display,
                    line: lineno,
                    message: format!(
                        "system {} already labelled {} on line {}",
                        record.system_label(),
                        prev,
                        prev_line
                    ),
                });
            }
            Some(_) => continue, // exact duplicate
            None => {
                labels_by_system.insert(record.elements.clone(), (record.label, lineno));
                records.push(record);
            }
        }
    }
    Ok(records)
}

/// Write records in the format accepted by [`load_alloys`].
pub fn save_alloys(records: &[AlloyRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("elements,label\n");
    for rec in records {
        out.push_str(&format!("{},{}\n", rec.system_label(), rec.label));
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

// ---------------------------------------------------------------------------
// Negative pool

/// Candidate negatives for ranking-loss sampling: the explicit negatives
/// plus every same-arity entity over the node range that shares at least
/// one element with the positives, minus the positives themselves.
/// Deterministically ascending. An explicit negative equal to a positive is
/// a conflict; an empty pool is a configuration error.
pub fn build_negative_pool(
    positives: &[Entity],
    node_count: usize,
    explicit: &[Entity],
) -> Result<Vec<Entity>> {
    let first = positives
        .first()
        .ok_or_else(|| Error::Config("cannot build a negative pool without positives".into()))?;
    let arity = first.arity();
    if positives.iter().any(|e| e.arity() != arity) {
        return Err(Error::Config("positives mix arities".into()));
    }
    let positive_set: BTreeSet<Entity> = positives.iter().copied().collect();
    let mut positive_nodes: BTreeSet<usize> = BTreeSet::new();
    for e in positives {
        positive_nodes.extend(e.nodes());
    }

    let mut pool: BTreeSet<Entity> = BTreeSet::new();
    for e in explicit {
        if e.arity() != arity {
            return Err(Error::Config(format!(
                "explicit negative {e} has arity {}, expected {arity}",
                e.arity()
            )));
        }
        if positive_set.contains(e) {
            return Err(Error::Config(format!(
                "explicit negative {e} conflicts with a positive"
            )));
        }
        pool.insert(*e);
    }

    let shares = |e: &Entity| e.nodes().iter().any(|n| positive_nodes.contains(n));
    match arity {
        2 => {
            for i in 0..node_count {
                for j in i + 1..node_count {
                    let e = Entity::Pair(i, j);
                    if !positive_set.contains(&e) && shares(&e) {
                        pool.insert(e);
                    }
                }
            }
        }
        3 => {
            for i in 0..node_count {
                for j in i + 1..node_count {
                    for k in j + 1..node_count {
                        let e = Entity::Triple(i, j, k);
                        if !positive_set.contains(&e) && shares(&e) {
                            pool.insert(e);
                        }
                    }
                }
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unsupported entity arity {other}"
            )))
        }
    }
    if pool.is_empty() {
        return Err(Error::Config(
            "negative pool is empty: every candidate entity is a positive".into(),
        ));
    }
    Ok(pool.into_iter().collect())
}

// ---------------------------------------------------------------------------
// Stratified cross-validation folds

/// A partition of the positives into test folds; fold `k`'s training set is
/// everything outside fold `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    folds: Vec<Vec<Entity>>,
}

impl FoldSplit {
    pub fn fold_count(&self) -> usize {
        self.folds.len()
    }

    /// Held-out positives of fold `k`, ascending.
    pub fn test(&self, k: usize) -> &[Entity] {
        &self.folds[k]
    }

    /// Training positives of fold `k` (the complement), ascending.
    pub fn train(&self, k: usize) -> Vec<Entity> {
        let mut out: Vec<Entity> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != k)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.folds.iter().map(Vec::len).collect()
    }
}

/// Split positives into `fold_count` test folds, stratified by each
/// entity's lowest node index. Entities within a stratum are shuffled by
/// `seed` and dealt round-robin; the rotation continues across strata so
/// both the per-stratum and the total fold sizes stay within one sample of
/// each other.
pub fn stratified_folds(positives: &[Entity], fold_count: usize, seed: u64) -> Result<FoldSplit> {
    if fold_count == 0 {
        return Err(Error::Config("fold count must be positive".into()));
    }
    if fold_count > positives.len() {
        return Err(Error::Config(format!(
            "cannot split {} positives into {} folds",
            positives.len(),
            fold_count
        )));
    }
    let mut strata: BTreeMap<usize, Vec<Entity>> = BTreeMap::new();
    for &e in positives {
        let key = e.nodes().into_iter().min().expect("entities are non-empty");
        strata.entry(key).or_default().push(e);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds: Vec<Vec<Entity>> = vec![Vec::new(); fold_count];
    let mut next = 0usize;
    for (_, mut members) in strata {
        members.sort_unstable();
        members.shuffle(&mut rng);
        for e in members {
            folds[next % fold_count].push(e);
            next += 1;
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(FoldSplit { folds })
}

// ---------------------------------------------------------------------------
// Synthetic data

/// Planted-community generator parameters.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub nodes: usize,
    pub communities: usize,
    pub p_in: f64,
    pub p_out: f64,
    /// 2 for binary systems (edges), 3 for ternary systems (triangles).
    pub arity: usize,
    pub seed: u64,
}

/// Community of node `i` under near-equal contiguous blocks.
pub fn community_of(i: usize, nodes: usize, communities: usize) -> usize {
    i * communities / nodes
}

/// Draw positive records from a planted-community model: within-community
/// entities appear with probability `p_in`, all others with `p_out`.
/// Returns the node symbols (`E00`, `E01`, ...) and the records.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Vec<String>, Vec<AlloyRecord>)> {
    if spec.communities == 0 || spec.nodes < spec.communities {
        return Err(Error::Config(format!(
            "need at least one node per community, got {} nodes in {} communities",
            spec.nodes, spec.communities
        )));
    }
    for p in [spec.p_in, spec.p_out] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("probability {p} outside [0, 1]")));
        }
    }
    if spec.arity != 2 && spec.arity != 3 {
        return Err(Error::Config(format!(
            "synthetic arity must be 2 or 3, got {}",
            spec.arity
        )));
    }
    let width = (spec.nodes.max(2) - 1).to_string().len().max(2);
    let symbols: Vec<String> = (0..spec.nodes)
        .map(|i| format!("E{i:0width$}"))
        .collect();
    let comm = |i: usize| community_of(i, spec.nodes, spec.communities);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = Vec::new();
    let mut push = |rng: &mut ChaCha8Rng, members: Vec<usize>, same: bool| -> Result<()> {
        let p = if same { spec.p_in } else { spec.p_out };
        if rng.gen::<f64>() < p {
            records.push(AlloyRecord::new(
                members.iter().map(|&m| symbols[m].clone()).collect(),
                Label::Positive,
            )?);
        }
        Ok(())
    };
    match spec.arity {
        2 => {
            for i in 0..spec.nodes {
                for j in i + 1..spec.nodes {
                    push(&mut rng, vec![i, j], comm(i) == comm(j))?;
                }
            }
        }
        _ => {
            for i in 0..spec.nodes {
                for j in i + 1..spec.nodes {
                    for k in j + 1..spec.nodes {
                        let same = comm(i) == comm(j) && comm(j) == comm(k);
                        push(&mut rng, vec![i, j, k], same)?;
                    }
                }
            }
        }
    }
    Ok((symbols, records))
}

/// Deterministic synthetic embedding table for the given symbols: entries
/// uniform in [-1, 1), seeded.
pub fn synthetic_embeddings(
    symbols: &[String],
    dim: usize,
    seed: u64,
    language: &str,
) -> Result<EmbeddingTable> {
    if dim == 0 {
        return Err(Error::Config("embedding dim must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let matrix: Vec<f64> = (0..symbols.len() * dim)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    EmbeddingTable::from_parts(language, symbols.to_vec(), dim, matrix)
}

// ---------------------------------------------------------------------------


#[cfg(test)]
mod tests {
    use super::tests_support::{record, table_of};
    use super::*;
    use std::io::Write;

    fn write_temp(name: &str, content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(name);
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        (dir, path)
    }

    #[test]
    fn load_embeddings_parses_symbols_comments_and_values() {
        let (_d, path) = write_temp(
            "small.eng.tsv",
            "# comment\nCu\t1.0\t2.5\nZr\t-0.5\t0.25\n\nAl\t0\t1\n",
        );
        let table = load_embeddings(&path, Some(2)).unwrap();
        assert_eq!(table.language(), "eng");
        assert_eq!(table.symbols(), &["Cu", "Zr", "Al"]);
        assert_eq!(table.index_of("Zr"), Some(1));
        assert_eq!(table.vector(0), &[1.0, 2.5]);
    }

    #[test]
    fn load_embeddings_full_size_table_round_trips() {
        let symbols: Vec<String> = (0..47).map(|i| format!("X{i}")).collect();
        let table = synthetic_embeddings(&symbols, 100, 5, "eng").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.eng.tsv");
        save_embeddings(&table, &path).unwrap();
        let back = load_embeddings(&path, Some(100)).unwrap();
        assert_eq!(back, table);
    }

    #[test]
    fn load_embeddings_errors_carry_line_numbers() {
        let (_d, path) = write_temp("bad.eng.tsv", "Cu\t1.0\t2.0\nZr\t3.0\n");
        let err = load_embeddings(&path, Some(2)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":2:"), "{msg}");
        assert!(msg.contains("expected 2 values, got 1"), "{msg}");

        let (_d, path) = write_temp("nan.eng.tsv", "Cu\t1.0\nZr\tx2\n");
        let err = load_embeddings(&path, None).unwrap_err();
        assert!(err.to_string().contains(":2:"));

        let (_d, path) = write_temp("dup.eng.tsv", "Cu\t1.0\nCu\t2.0\n");
        let err = load_embeddings(&path, None).unwrap_err();
        assert!(err.to_string().contains("duplicate symbol Cu"));
    }

    #[test]
    fn missing_embedding_file_names_the_path() {
        let err = load_embeddings("/nonexistent/x.eng.tsv", None).unwrap_err();
        assert_eq!(err.to_string(), "file not found: /nonexistent/x.eng.tsv");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn language_tags_from_paths() {
        assert_eq!(language_of_path(Path::new("a/b/glove.eng.tsv")), "eng");
        assert_eq!(language_of_path(Path::new("glove.CHN.tsv")), "chn");
        assert_eq!(language_of_path(Path::new("plain.tsv")), "und");
    }

    #[test]
    fn load_alloys_parses_dedups_and_validates() {
        let table = table_of(&["Cu", "Zr", "Al"], 2);
        let (_d, path) = write_temp(
            "alloys.csv",
            "elements,label\nCu-Zr,pos\nZr-Cu,pos\nCu-Zr-Al,pos\nCu-Al,neg\n",
        );
        let records = load_alloys(&path, &table).unwrap();
        assert_eq!(records.len(), 3); // Zr-Cu collapses into Cu-Zr
        assert_eq!(records[0], record(&["Cu", "Zr"], Label::Positive));
        assert_eq!(records[2].label, Label::Negative);
    }

    #[test]
    fn load_alloys_rejects_malformed_rows() {
        let table = table_of(&["Cu", "Zr"], 2);
        for (content, needle) in [
            ("elements,label\nCu-Cu,pos\n", "repeated element"),
            ("elements,label\nCu,pos\n", "2 or 3 elements"),
            ("elements,label\nCu-Zr,maybe\n", "pos or neg"),
            ("elements,label\nCu-Zr\n", "2 comma-separated"),
            ("wrong,header\n", "expected header"),
            ("elements,label\nCu-Zr,pos\nCu-Zr,neg\n", "already labelled"),
        ] {
            let (_d, path) = write_temp("alloys.csv", content);
            let err = load_alloys(&path, &table).unwrap_err();
            assert!(err.to_string().contains(needle), "{content:?} -> {err}");
        }
        let (_d, path) = write_temp("alloys.csv", "elements,label\nCu-Xx,pos\n");
        let err = load_alloys(&path, &table).unwrap_err();
        assert!(err.to_string().contains("Xx"));
    }

    #[test]
    fn alloy_round_trip_is_identity() {
        let table = table_of(&["Cu", "Zr", "Al", "Ni"], 2);
        let records = vec![
            record(&["Cu", "Zr"], Label::Positive),
            record(&["Al", "Ni"], Label::Negative),
            record(&["Al", "Cu", "Ni"], Label::Positive),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("alloys.csv");
        save_alloys(&records, &path).unwrap();
        let back = load_alloys(&path, &table).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn negative_pool_small_case() {
        // Nodes {A=0, B=1, C=2}, positive A-B: complement sharing an element
        // is exactly {A-C, B-C}.
        let pool = build_negative_pool(&[Entity::Pair(0, 1)], 3, &[]).unwrap();
        assert_eq!(pool, vec![Entity::Pair(0, 2), Entity::Pair(1, 2)]);
    }

    #[test]
    fn negative_pool_requires_shared_element() {
        // Nodes 0..5, positive 0-1: pairs within {2, 3, 4} share nothing and
        // must be excluded.
        let pool = build_negative_pool(&[Entity::Pair(0, 1)], 5, &[]).unwrap();
        assert!(pool.iter().all(|e| e.contains(0) || e.contains(1)));
        assert_eq!(pool.len(), 6); // 0-x and 1-x for x in {2, 3, 4}
    }

    #[test]
    fn negative_pool_ternary_matches_exhaustive_enumeration() {
        let positives = [Entity::Triple(0, 1, 2)];
        let pool = build_negative_pool(&positives, 5, &[]).unwrap();
        // Independent brute force over all C(5,3) triples.
        let mut expect = Vec::new();
        for i in 0..5 {
            for j in i + 1..5 {
                for k in j + 1..5 {
                    let e = Entity::Triple(i, j, k);
                    let shares = [i, j, k].iter().any(|&n| n <= 2);
                    if e != positives[0] && shares {
                        expect.push(e);
                    }
                }
            }
        }
        assert_eq!(pool, expect);
        assert_eq!(pool.len(), 9);
    }

    #[test]
    fn negative_pool_conflicts_and_emptiness() {
        let err = build_negative_pool(&[Entity::Pair(0, 1)], 2, &[Entity::Pair(0, 1)]).unwrap_err();
        assert!(err.to_string().contains("conflicts"));
        // Two nodes, the only pair is positive: nothing remains.
        let err = build_negative_pool(&[Entity::Pair(0, 1)], 2, &[]).unwrap_err();
        assert!(err.to_string().contains("empty"));
    }

    #[test]
    fn explicit_negatives_join_the_pool() {
        let pool = build_negative_pool(&[Entity::Pair(0, 1)], 3, &[Entity::Pair(0, 2)]).unwrap();
        assert_eq!(pool, vec![Entity::Pair(0, 2), Entity::Pair(1, 2)]);
    }

    #[test]
    fn fold_sizes_for_ninety_four_positives() {
        let positives: Vec<Entity> = (0..94).map(|i| Entity::Pair(i, 100 + i)).collect();
        let split = stratified_folds(&positives, 5, 0).unwrap();
        let mut sizes = split.sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![18, 19, 19, 19, 19]);
    }

    #[test]
    fn single_stratum_deals_exactly_evenly() {
        // Ten entities sharing lowest node 0 across 5 folds: 2 per fold.
        let positives: Vec<Entity> = (1..=10).map(|j| Entity::Pair(0, j)).collect();
        let split = stratified_folds(&positives, 5, 7).unwrap();
        assert!(split.sizes().iter().all(|&s| s == 2));
    }

    #[test]
    fn folds_partition_the_positives() {
        let positives: Vec<Entity> = (0..23)
            .map(|i| Entity::Pair(i % 5, 10 + i))
            .collect();
        let split = stratified_folds(&positives, 5, 3).unwrap();
        let mut seen: Vec<Entity> = Vec::new();
        for k in 0..5 {
            for &e in split.test(k) {
                assert!(!seen.contains(&e), "{e:?} appears in two folds");
                seen.push(e);
            }
            // train(k) and test(k) are disjoint and cover everything.
            let train = split.train(k);
            assert_eq!(train.len() + split.test(k).len(), positives.len());
            assert!(split.test(k).iter().all(|e| !train.contains(e)));
        }
        assert_eq!(seen.len(), positives.len());
    }

    #[test]
    fn folds_are_deterministic_in_the_seed() {
        let positives: Vec<Entity> = (0..40).map(|i| Entity::Pair(i % 7, 10 + i)).collect();
        let a = stratified_folds(&positives, 5, 11).unwrap();
        let b = stratified_folds(&positives, 5, 11).unwrap();
        let c = stratified_folds(&positives, 5, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn fold_count_must_fit() {
        let positives = vec![Entity::Pair(0, 1), Entity::Pair(0, 2)];
        assert!(stratified_folds(&positives, 3, 0).is_err());
        assert!(stratified_folds(&positives, 0, 0).is_err());
    }

    #[test]
    fn synthetic_extremes_are_exact() {
        let (symbols, records) = generate_synthetic(&SyntheticSpec {
            nodes: 6,
            communities: 2,
            p_in: 1.0,
            p_out: 0.0,
            arity: 2,
            seed: 0,
        })
        .unwrap();
        assert_eq!(symbols.len(), 6);
        assert_eq!(records.len(), 6); // 2 * C(3,2) intra-community edges
        let (_, empty) = generate_synthetic(&SyntheticSpec {
            nodes: 6,
            communities: 2,
            p_in: 0.0,
            p_out: 0.0,
            arity: 2,
            seed: 0,
        })
        .unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn synthetic_ternary_extremes_are_exact() {
        let (_, records) = generate_synthetic(&SyntheticSpec {
            nodes: 6,
            communities: 2,
            p_in: 1.0,
            p_out: 0.0,
            arity: 3,
            seed: 0,
        })
        .unwrap();
        assert_eq!(records.len(), 2); // one all-member triangle per community
        assert!(records.iter().all(|r| r.elements.len() == 3));
    }

    #[test]
    fn synthetic_generation_is_deterministic() {
        let spec = SyntheticSpec {
            nodes: 12,
            communities: 3,
            p_in: 0.8,
            p_out: 0.1,
            arity: 2,
            seed: 42,
        };
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
        let table_a = synthetic_embeddings(&["A".into(), "B".into()], 4, 1, "syn").unwrap();
        let table_b = synthetic_embeddings(&["A".into(), "B".into()], 4, 1, "syn").unwrap();
        assert_eq!(table_a, table_b);
    }
}
