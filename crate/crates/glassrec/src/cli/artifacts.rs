//! On-disk artifacts: the self-contained model checkpoint, run manifests,
//! and the CSV/Newick exports. Every artifact is byte-deterministic for a
//! given command line: no timestamps, sorted keys, shortest-round-trip
//! floats.

use std::collections::BTreeSet;
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{AlloyRecord, EmbeddingTable, Label};
use crate::error::{Error, Result};
use crate::graph::{build_network, Entity, MaterialNetwork};
use crate::model::{ModelConfig, ParamSet};
use crate::scoring::ScorerConfig;
use crate::tensor::Tensor;
use crate::training::{Task, TrainedModel};

/// Leading bytes of every checkpoint file.
pub const CHECKPOINT_MAGIC: &[u8; 17] = b"GLASSREC.CKPT.v1\n";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    task: Task,
    model: ModelConfig,
    scorer: ScorerConfig,
    k: usize,
    language: String,
    symbols: Vec<String>,
    positives: Vec<Vec<usize>>,
}

/// A checkpoint read back into memory: the trained model plus everything
/// needed to rebuild its network and features without the original inputs.
pub struct LoadedCheckpoint {
    pub task: Task,
    pub model_cfg: ModelConfig,
    pub scorer_cfg: ScorerConfig,
    pub k: usize,
    pub language: String,
    pub net: MaterialNetwork,
    pub features: Tensor,
    pub model: TrainedModel,
}

fn push_tensor(out: &mut Vec<u8>, name: &str, tensor: &Tensor) {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    out.extend((tensor.shape().len() as u32).to_le_bytes());
    for &d in tensor.shape() {
        out.extend((d as u64).to_le_bytes());
    }
    for &v in tensor.data() {
        out.extend(v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format {
                path: self.path.to_string(),
                line: 0,
                message: "checkpoint is truncated".into(),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let name_len = self.u32()? as usize;
        let name = String::from_utf8(self.take(name_len)?.to_vec()).map_err(|_| Error::Format {
            path: self.path.to_string(),
            line: 0,
            message: "checkpoint tensor name is not UTF-8".into(),
        })?;
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = self.take(numel * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((name, Tensor::new(shape, data)?))
    }
}

/// Serialize a trained model with its network, features, and configuration.
#[allow(clippy::too_many_arguments)]
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    task: Task,
    model_cfg: &ModelConfig,
    scorer_cfg: &ScorerConfig,
    k: usize,
    language: &str,
    net: &MaterialNetwork,
    features: &Tensor,
    params: &ParamSet,
) -> Result<()> {
    let header = CheckpointHeader {
        format: "glassrec-checkpoint".into(),
        version: 1,
        task,
        model: model_cfg.clone(),
        scorer: scorer_cfg.clone(),
        k,
        language: language.to_string(),
        symbols: net.symbols().to_vec(),
        positives: net.positives().iter().map(|e| e.nodes()).collect(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Contract(format!("could not encode checkpoint header: {e}")))?;

    let mut out = Vec::new();
    out.extend(CHECKPOINT_MAGIC);
    out.extend((header_json.len() as u64).to_le_bytes());
    out.extend(&header_json);
    out.extend((params.len() as u64 + 1).to_le_bytes());
    for (name, tensor) in params.iter() {
        push_tensor(&mut out, name, tensor);
    }
    push_tensor(&mut out, "input.features", features);
    fs::write(path.as_ref(), out).map_err(|e| Error::io(path.as_ref().display().to_string(), e))
}

/// Read a checkpoint back and rebuild the network and model around it.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<LoadedCheckpoint> {
    let path_str = path.as_ref().display().to_string();
    let bytes =
        fs::read(path.as_ref()).map_err(|e| Error::io(path_str.clone(), e))?;
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC
    {
        return Err(Error::Format {
            path: path_str,
            line: 0,
            message: "not a model checkpoint (bad magic bytes)".into(),
        });
    }
    let mut reader = Reader {
        bytes: &bytes,
        pos: CHECKPOINT_MAGIC.len(),
        path: &path_str,
    };
    let header_len = reader.u64()? as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(reader.take(header_len)?).map_err(|e| Error::Format {
            path: path_str.clone(),
            line: 0,
            message: format!("bad checkpoint header: {e}"),
        })?;
    let tensor_count = reader.u64()? as usize;
    if tensor_count == 0 {
        return Err(Error::Format {
            path: path_str.clone(),
            line: 0,
            message: "checkpoint holds no tensors".into(),
        });
    }
    let mut params = ParamSet::new();
    let mut features: Option<Tensor> = None;
    for index in 0..tensor_count {
        let (name, tensor) = reader.tensor()?;
        if name == "input.features" {
            if index + 1 != tensor_count {
                return Err(Error::Format {
                    path: path_str.clone(),
                    line: 0,
                    message: "input features must be the final checkpoint tensor".into(),
                });
            }
            features = Some(tensor);
        } else {
            params.load(&name, tensor);
        }
    }
    let features = features.ok_or_else(|| Error::Format {
        path: path_str.clone(),
        line: 0,
        message: "checkpoint is missing the input features".into(),
    })?;

    // Rebuild the network through the ordinary construction path so every
    // invariant is re-checked.
    let dim = features.last_dim();
    let table = EmbeddingTable::from_parts(
        header.language.clone(),
        header.symbols.clone(),
        dim,
        features.data().to_vec(),
    )?;
    let records: Vec<AlloyRecord> = header
        .positives
        .iter()
        .map(|nodes| {
            let elements: Vec<String> = nodes
                .iter()
                .map(|&n| {
                    header.symbols.get(n).cloned().ok_or_else(|| Error::Format {
                        path: path_str.clone(),
                        line: 0,
                        message: format!("positive references unknown node {n}"),
                    })
                })
                .collect::<Result<_>>()?;
            AlloyRecord::new(elements, Label::Positive)
        })
        .collect::<Result<_>>()?;
    let net = build_network(&records, &table)?;
    let model = TrainedModel::from_parts(&header.model, &header.scorer, params)?;
    Ok(LoadedCheckpoint {
        task: header.task,
        model_cfg: header.model,
        scorer_cfg: header.scorer,
        k: header.k,
        language: header.language,
        net,
        features,
        model,
    })
}

/// SHA-256 of a file, lowercase hex.
pub fn sha256_of(path: impl AsRef<Path>) -> Result<String> {
    let mut file = fs::File::open(path.as_ref())
        .map_err(|e| Error::io(path.as_ref().display().to_string(), e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file
            .read(&mut buf)
            .map_err(|e| Error::io(path.as_ref().display().to_string(), e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    let digest = hasher.finalize();
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Create (or accept) the output directory. A non-empty existing directory
/// is refused unless `force` is set, so runs never silently clobber earlier
/// results.
pub fn prepare_output_dir(path: impl AsRef<Path>, force: bool) -> Result<()> {
    let path = path.as_ref();
    if path.exists() {
        if !path.is_dir() {
            return Err(Error::Config(format!(
                "output path {} exists and is not a directory",
                path.display()
            )));
        }
        let occupied = path
            .read_dir()
            .map_err(|e| Error::io(path.display().to_string(), e))?
            .next()
            .is_some();
        if occupied && !force {
            return Err(Error::Config(format!(
                "output directory {} is not empty; pass --force to write into it",
                path.display()
            )));
        }
        return Ok(());
    }
    fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Write text, mapping failures onto the I/O error contract.
pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    fs::write(path.as_ref(), text)
        .map_err(|e| Error::io(path.as_ref().display().to_string(), e))
}

/// Pretty-printed JSON with a trailing newline. `serde_json` maps keep keys
/// sorted, so output is deterministic.
pub fn write_json(path: impl AsRef<Path>, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Contract(format!("could not serialise manifest: {e}")))?;
    text.push('\n');
    write_text(path, &text)
}

/// `rank,entity,score` rows for one query's ranking.
pub fn ranked_csv(rows: &[(String, f64)]) -> String {
    let mut out = String::from("rank,entity,score\n");
    for (rank, (entity, score)) in rows.iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", rank + 1, entity, score));
    }
    out
}

/// The full pairwise score matrix, min-max normalised over the off-diagonal
/// cells; diagonal cells (self-pairs are not entities) stay empty.
pub fn pair_matrix_csv(symbols: &[String], scores: &[Vec<f64>]) -> String {
    let n = symbols.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                lo = lo.min(scores[i][j]);
                hi = hi.max(scores[i][j]);
            }
        }
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = String::from("element");
    for s in symbols {
        out.push(',');
        out.push_str(s);
    }
    out.push('\n');
    for i in 0..n {
        out.push_str(&symbols[i]);
        for j in 0..n {
            out.push(',');
            if i != j {
                out.push_str(&format!("{}", (scores[i][j] - lo) / span));
            }
        }
        out.push('\n');
    }
    out
}

/// All triple scores as `a,b,c,score` rows, min-max normalised.
pub fn triple_matrix_csv(net: &MaterialNetwork, scored: &[(Entity, f64)]) -> String {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (_, s) in scored {
        lo = lo.min(*s);
        hi = hi.max(*s);
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = String::from("a,b,c,score\n");
    for (entity, score) in scored {
        let nodes = entity.nodes();
        out.push_str(&format!(
            "{},{},{},{}\n",
            net.symbol_of(nodes[0]),
            net.symbol_of(nodes[1]),
            net.symbol_of(nodes[2]),
            (score - lo) / span
        ));
    }
    out
}

/// Cross-validation fold rows in the standard report schema.
pub fn report_csv_header(k: usize) -> String {
    format!("task,architecture,scorer,language,seed,fold,recall@{k},ndcg@{k}\n")
}

/// Queries whose candidate lists a rank cutoff of `k` would swallow whole
/// make recall trivially 1; warn when the network is small enough for that.
pub fn warn_if_k_saturates(task: Task, node_count: usize, k: usize) {
    let bound = match task {
        Task::BinaryToBinary => node_count.saturating_sub(1),
        Task::TernaryThirdForPair | Task::BinaryToTernary => node_count.saturating_sub(2),
        Task::TernaryPairForElement => {
            let m = node_count.saturating_sub(1);
            m * m.saturating_sub(1) / 2
        }
    };
    if k >= bound && bound > 0 {
        eprintln!(
            "warning: k = {k} is at least the whole candidate list ({bound} for task {task} \
             on {node_count} nodes); recall@{k} will saturate at 1"
        );
    }
}

/// Entities already known at training time, for exclusion during ranking.
pub fn exclusion_set(task: Task, net: &MaterialNetwork) -> BTreeSet<Entity> {
    match task {
        // Transfer ranking is over triples while training entities are
        // pairs: nothing to exclude.
        Task::BinaryToTernary => BTreeSet::new(),
        _ => net.positives().iter().copied().collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests_support::{record, table_of};
    use crate::model::Architecture;
    use crate::scoring::ScorerKind;
    use crate::training::{train_final, TaskData, TrainConfig};

    fn trained_fixture() -> (TaskData, TrainedModel, ModelConfig, ScorerConfig) {
        let table = table_of(&["A", "B", "C", "D"], 5);
        let records = vec![
            record(&["A", "B"], Label::Positive),
            record(&["B", "C"], Label::Positive),
            record(&["C", "D"], Label::Positive),
        ];
        let data = TaskData::new(Task::BinaryToBinary, &records, &table, None).unwrap();
        let mut model_cfg = ModelConfig::new(Architecture::Gcn, 5);
        model_cfg.hidden_dim = 4;
        model_cfg.num_heads = 2;
        model_cfg.layers = 1;
        model_cfg.dropout = 0.0;
        let scorer_cfg = ScorerConfig::new(ScorerKind::Pd);
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let model = train_final(&data, &model_cfg, &scorer_cfg, &cfg, 3).unwrap();
        (data, model, model_cfg, scorer_cfg)
    }

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let (data, model, model_cfg, scorer_cfg) = trained_fixture();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(
            &path,
            Task::BinaryToBinary,
            &model_cfg,
            &scorer_cfg,
            10,
            "eng",
            &data.net,
            &data.features,
            &model.params,
        )
        .unwrap();

        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.k, 10);
        assert_eq!(loaded.language, "eng");
        assert_eq!(loaded.net.symbols(), data.net.symbols());
        assert_eq!(loaded.net.positives(), data.net.positives());
        assert_eq!(loaded.features.data(), data.features.data());
        for ((name_a, a), (name_b, b)) in loaded.model.params.iter().zip(model.params.iter()) {
            assert_eq!(name_a, name_b);
            assert_eq!(a.data(), b.data());
        }
        // Representations from the reloaded model are bit-identical.
        let ha = model.embed(&data).unwrap();
        let ops = crate::model::GraphOps::from_network(&loaded.net);
        let hb = loaded
            .model
            .encoder
            .embed(&loaded.model.params, &loaded.features, &ops)
            .unwrap();
        assert_eq!(ha.data(), hb.data());

        // Saving again produces identical bytes.
        let path2 = dir.path().join("model2.ckpt");
        save_checkpoint(
            &path2,
            Task::BinaryToBinary,
            &model_cfg,
            &scorer_cfg,
            10,
            "eng",
            &data.net,
            &data.features,
            &model.params,
        )
        .unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn checkpoint_rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("not_a_checkpoint.bin");
        fs::write(&path, b"GLASSREC.WRONG.v9\n plus junk").unwrap();
        let err = match load_checkpoint(&path) {
            Err(e) => e,
            Ok(_) => panic!("expected a format error"),
        };
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("magic"), "got: {err}");
    }

    #[test]
    fn missing_checkpoint_is_not_found() {
        let err = match load_checkpoint("/nonexistent/model.ckpt") {
            Err(e) => e,
            Ok(_) => panic!("expected a not-found error"),
        };
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("not found"), "got: {err}");
    }

    #[test]
    fn sha256_matches_known_vector() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("abc.txt");
        fs::write(&path, b"abc").unwrap();
        assert_eq!(
            sha256_of(&path).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn output_dir_guard() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        prepare_output_dir(&out, false).unwrap();
        assert!(out.is_dir());
        // Empty: fine to reuse.
        prepare_output_dir(&out, false).unwrap();
        fs::write(out.join("stale.txt"), "x").unwrap();
        let err = prepare_output_dir(&out, false).unwrap_err();
        assert!(err.to_string().contains("--force"), "got: {err}");
        prepare_output_dir(&out, true).unwrap();
    }

    #[test]
    fn ranked_csv_format() {
        let rows = vec![("Cu-Zr".to_string(), 0.75), ("Ag-Mg".to_string(), 0.5)];
        assert_eq!(ranked_csv(&rows), "rank,entity,score\n1,Cu-Zr,0.75\n2,Ag-Mg,0.5\n");
    }

    #[test]
    fn pair_matrix_is_min_max_normalised_with_empty_diagonal() {
        let symbols = vec!["A".to_string(), "B".to_string(), "C".to_string()];
        let scores = vec![
            vec![9.0, 2.0, 4.0],
            vec![2.0, 9.0, 6.0],
            vec![4.0, 6.0, 9.0],
        ];
        let csv = pair_matrix_csv(&symbols, &scores);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "element,A,B,C");
        assert_eq!(lines[1], "A,,0,0.5");
        assert_eq!(lines[2], "B,0,,1");
        assert_eq!(lines[3], "C,0.5,1,");
    }
}
