//! Ward-linkage clustering of element embeddings under cosine distance:
//! build the distance matrix, merge clusters bottom-up, and export the
//! dendrogram both as a merge table and as Newick text.
//!
//! Run with: `cargo run --release -p glassrec --example cluster_elements`

use glassrec::analysis::{cosine_distance_matrix, ward_cluster};
use glassrec::tensor::Tensor;

fn main() -> glassrec::Result<()> {
    // Eight hand-placed "elements" in three blobs: early transition metals
    // along +x, noble metals along +y, and two light elements along +z.
    let labels: Vec<String> = ["Ti", "Zr", "Hf", "Cu", "Ag", "Au", "Be", "Mg"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows = [
        [1.00, 0.05, 0.02],
        [0.98, 0.08, 0.01],
        [0.96, 0.02, 0.06],
        [0.05, 1.00, 0.04],
        [0.02, 0.97, 0.02],
        [0.08, 0.95, 0.07],
        [0.03, 0.06, 1.00],
        [0.06, 0.02, 0.96],
    ];
    let matrix = Tensor::new(
        vec![labels.len(), 3],
        rows.iter().flatten().copied().collect(),
    )?;

    // Cosine distance = 1 - cosine similarity of the embedding vectors.
    let distances = cosine_distance_matrix(&labels, &matrix)?;
    println!(
        "distance Ti-Zr {:.4} (same blob)  vs  Ti-Cu {:.4} (different blobs)",
        distances.at(0, 1),
        distances.at(0, 3)
    );

    let dendrogram = ward_cluster(&distances)?;
    println!("\nstep  merged clusters         height   size");
    for (step, merge) in dendrogram.merges().iter().enumerate() {
        let name = |c: usize| -> String {
            if c < dendrogram.leaf_count() {
                labels[c].clone()
            } else {
                format!("cluster {c}")
            }
        };
        println!(
            "{:>4}  {:<10} + {:<10} {:>6.4}  {:>4}",
            step,
            name(merge.left),
            name(merge.right),
            merge.height,
            merge.size
        );
    }

    // All intra-blob merges happen before any cross-blob merge: Ward picks
    // the pair with the smallest within-cluster variance increase.
    println!("\nnewick: {}", dendrogram.to_newick(&labels)?);
    Ok(())
}
