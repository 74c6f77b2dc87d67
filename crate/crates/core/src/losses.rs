//! Training objectives over the shared distance parameters.
//!
//! * Structural probe: L1 regression of predicted distances onto tree path
//!   lengths over all word pairs, each sentence weighted by `1 / n²`.
//! * Structured perceptron: predicted weight of the gold tree minus the
//!   weight of the minimum spanning tree under the current predictions.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::graph::{mst_prim, tree_to_distances, DepTree, DistanceMatrix};
use crate::model::{ProbeParams, NORM_EPSILON};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Probe,
    Perceptron,
}

impl ModelKind {
    /// Whether the distance is squared unless configured otherwise.
    pub fn default_squared(self) -> bool {
        matches!(self, ModelKind::Probe)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Probe => "probe",
            ModelKind::Perceptron => "perceptron",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probe" => Ok(ModelKind::Probe),
            "perceptron" | "parser" => Ok(ModelKind::Perceptron),
            other => Err(Error::config(
                "model_kind",
                format!("'{other}' is not 'probe' or 'perceptron'"),
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Array2<f64>,
    /// Decoded tree (perceptron only).
    pub predicted: Option<DepTree>,
}

impl LossValue {
    fn scaled(mut self, factor: f64) -> Self {
        self.value *= factor;
        self.grad *= factor;
        self
    }
}

fn check_sizes(emb: &EmbeddingSequence, gold: &DepTree) -> Result<()> {
    if emb.n() != gold.n() {
        return Err(Error::Size(format!(
            "sentence '{}' has {} embedding rows but the tree has {} words",
            emb.sentence_id,
            emb.n(),
            gold.n()
        )));
    }
    if gold.n() < 2 {
        return Err(Error::Size(format!(
            "sentence '{}' has fewer than two words",
            emb.sentence_id
        )));
    }
    Ok(())
}

/// Predicted distances plus the per-pair factor turning `∂(d_B²)/∂B` into the
/// derivative of the chosen distance.
struct Forward {
    projected: Array2<f64>,
    predicted: DistanceMatrix,
    chain: DistanceMatrix,
}

fn forward(params: &ProbeParams, emb: &EmbeddingSequence, squared: bool) -> Result<Forward> {
    let projected = params.project(emb)?;
    let n = emb.n();
    let mut predicted = DistanceMatrix::zeros(n);
    let mut chain = DistanceMatrix::zeros(n);
    for i in 1..=n {
        for j in i + 1..=n {
            let diff = &projected.row(i - 1) - &projected.row(j - 1);
            let sq = diff.dot(&diff);
            if squared {
                predicted.set(i, j, sq);
                chain.set(i, j, 1.0);
            } else {
                let d = sq.sqrt();
                predicted.set(i, j, d);
                chain.set(
                    i,
                    j,
                    if d < NORM_EPSILON {
                        0.0
                    } else {
                        1.0 / (2.0 * d)
                    },
                );
            }
        }
    }
    Ok(Forward {
        projected,
        predicted,
        chain,
    })
}

/// `Σ_{i<j} c_ij ∂(d_B²)(i, j)/∂B = 2 Pᵀ L H`, where `L` is the graph
/// Laplacian of the pair weights `c_ij`, `P = H Bᵀ` and `H` the embeddings.
fn pair_gradient(
    projected: &Array2<f64>,
    emb: &EmbeddingSequence,
    weights: impl IntoIterator<Item = (usize, usize, f64)>,
) -> Array2<f64> {
    let n = emb.n();
    let mut laplacian = Array2::<f64>::zeros((n, n));
    for (i, j, c) in weights {
        if c == 0.0 {
            continue;
        }
        let (a, b) = (i - 1, j - 1);
        laplacian[[a, a]] += c;
        laplacian[[b, b]] += c;
        laplacian[[a, b]] -= c;
        laplacian[[b, a]] -= c;
    }
    2.0 * projected.t().dot(&laplacian.dot(&emb.vectors))
}

/// `Σ_{i<j} |Δ(i, j) − p(i, j)|` with its subgradient (`sign(0) = 0`).
pub fn probe_local_loss(
    params: &ProbeParams,
    emb: &EmbeddingSequence,
    gold: &DepTree,
    squared: bool,
) -> Result<LossValue> {
    check_sizes(emb, gold)?;
    let fwd = forward(params, emb, squared)?;
    let target = tree_to_distances(gold);

    let mut value = 0.0;
    let mut weights = Vec::with_capacity(target.upper().len());
    for ((i, j, t), (&p, &chain)) in target
        .pairs()
        .zip(fwd.predicted.upper().iter().zip(fwd.chain.upper()))
    {
        let residual = t - p;
        value += residual.abs();
        let sign = if residual > 0.0 {
            1.0
        } else if residual < 0.0 {
            -1.0
        } else {
            0.0
        };
        weights.push((i, j, -sign * chain));
    }

    Ok(LossValue {
        value,
        grad: pair_gradient(&fwd.projected, emb, weights),
        predicted: None,
    })
}

/// Weights a local probe loss by `1 / n²`.
pub fn probe_global_contribution(local: LossValue, n: usize) -> LossValue {
    let n = n as f64;
    local.scaled(1.0 / (n * n))
}

/// Gold tree weight minus minimum spanning tree weight under the predicted
/// distances. The decoded tree is held fixed for the gradient.
pub fn perceptron_local_loss(
    params: &ProbeParams,
    emb: &EmbeddingSequence,
    gold: &DepTree,
    squared: bool,
) -> Result<LossValue> {
    check_sizes(emb, gold)?;
    let fwd = forward(params, emb, squared)?;
    let decoded = mst_prim(&fwd.predicted);

    if &decoded == gold {
        return Ok(LossValue {
            value: 0.0,
            grad: Array2::zeros(params.matrix().raw_dim()),
            predicted: Some(decoded),
        });
    }

    let gold_weight = fwd.predicted.tree_weight(gold);
    let decoded_weight = fwd.predicted.tree_weight(&decoded);
    let weights = gold
        .edges()
        .iter()
        .map(|&(i, j)| (i, j, fwd.chain.get(i, j)))
        .chain(
            decoded
                .edges()
                .iter()
                .map(|&(i, j)| (i, j, -fwd.chain.get(i, j))),
        );
    let grad = pair_gradient(&fwd.projected, emb, weights);

    Ok(LossValue {
        // Both sums are over n - 1 edges and the tree is a true minimiser, so
        // anything below zero is summation rounding.
        value: (gold_weight - decoded_weight).max(0.0),
        grad,
        predicted: Some(decoded),
    })
}

/// Per-sentence training contribution: the `1 / n²`-weighted probe loss or
/// the plain perceptron loss.
pub fn sentence_objective(
    kind: ModelKind,
    params: &ProbeParams,
    emb: &EmbeddingSequence,
    gold: &DepTree,
    squared: bool,
) -> Result<LossValue> {
    match kind {
        ModelKind::Probe => Ok(probe_global_contribution(
            probe_local_loss(params, emb, gold, squared)?,
            gold.n(),
        )),
        ModelKind::Perceptron => perceptron_local_loss(params, emb, gold, squared),
    }
}

/// Mean per-sentence objective over a batch, with the matching gradient.
///
/// Sentences are evaluated in parallel and reduced in batch order, so the
/// result does not depend on the thread count.
pub fn batch_objective(
    kind: ModelKind,
    params: &ProbeParams,
    batch: &[(&EmbeddingSequence, &DepTree)],
    squared: bool,
) -> Result<LossValue> {
    if batch.is_empty() {
        return Err(Error::Size("empty batch".into()));
    }
    let parts: Vec<LossValue> = batch
        .par_iter()
        .map(|(emb, gold)| sentence_objective(kind, params, emb, gold, squared))
        .collect::<Result<_>>()?;

    let mut value = 0.0;
    let mut grad = Array2::zeros(params.matrix().raw_dim());
    for part in &parts {
        value += part.value;
        grad += &part.grad;
    }
    Ok(LossValue {
        value,
        grad,
        predicted: None,
    }
    .scaled(1.0 / batch.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::{synth_tree_embeddings, TreeEmbedder};
    use crate::rng;
    use ndarray::{s, Array1};
    use rand::Rng;

    fn random_instance(
        n: usize,
        rank: usize,
        dim: usize,
        seed: u64,
    ) -> (ProbeParams, EmbeddingSequence, DepTree) {
        let mut r = rng::stream(seed, "loss-instance");
        let tree = DepTree::random(n, &mut r);
        let b = Array2::from_shape_simple_fn((rank, dim), || r.random_range(-1.0..1.0));
        let h = Array2::from_shape_simple_fn((n, dim), || r.random_range(-1.0..1.0));
        (
            ProbeParams::new(b).unwrap(),
            EmbeddingSequence::new("x", h),
            tree,
        )
    }

    /// Direct pairwise sum, independent of the Laplacian route.
    fn brute_probe_value(
        p: &ProbeParams,
        emb: &EmbeddingSequence,
        tree: &DepTree,
        squared: bool,
    ) -> f64 {
        let gold = tree_to_distances(tree);
        let mut total = 0.0;
        for i in 1..=tree.n() {
            for j in i + 1..=tree.n() {
                let delta: Array1<f64> = &emb.word(i) - &emb.word(j);
                let bd = p.matrix().dot(&delta);
                let sq = bd.dot(&bd);
                let pred = if squared { sq } else { sq.sqrt() };
                total += (gold.get(i, j) - pred).abs();
            }
        }
        total
    }

    fn numeric_grad(p: &ProbeParams, f: impl Fn(&ProbeParams) -> f64) -> Array2<f64> {
        let step = 1e-5;
        let (r, d) = (p.rank(), p.dim());
        Array2::from_shape_fn((r, d), |(a, b)| {
            let mut plus = p.clone();
            plus.matrix_mut()[[a, b]] += step;
            let mut minus = p.clone();
            minus.matrix_mut()[[a, b]] -= step;
            (f(&plus) - f(&minus)) / (2.0 * step)
        })
    }

    fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let diff = (a - b).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        let scale = a.iter().chain(b.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        diff / scale.max(1e-12)
    }

    #[test]
    fn perfect_fit_has_zero_probe_loss() {
        let tree = DepTree::random(7, &mut rng::stream(1, "t"));
        let embedder = TreeEmbedder::new(10, 0.0, 3).unwrap();
        let emb = embedder.embed("x", &tree, "0").unwrap();
        let params =
            ProbeParams::new(embedder.rotation().t().slice(s![..6, ..]).to_owned()).unwrap();
        let loss = probe_local_loss(&params, &emb, &tree, true).unwrap();
        assert!(loss.value < 1e-9);
    }

    #[test]
    fn single_pair_with_null_map() {
        let tree = DepTree::new(2, [(1, 2)]).unwrap();
        let emb = synth_tree_embeddings(&tree, 3, 0.0, 0).unwrap();
        let loss =
            probe_local_loss(&ProbeParams::zeros(2, 3).unwrap(), &emb, &tree, false).unwrap();
        assert_eq!(loss.value, 1.0);
        assert_eq!(probe_global_contribution(loss, 2).value, 0.25);
    }

    #[test]
    fn global_weighting_arithmetic() {
        let zero = LossValue {
            value: 0.0,
            grad: Array2::zeros((1, 1)),
            predicted: None,
        };
        assert_eq!(probe_global_contribution(zero, 10).value, 0.0);
        let short = LossValue {
            value: 10.0,
            grad: Array2::zeros((1, 1)),
            predicted: None,
        };
        let long = LossValue {
            value: 1225.0,
            grad: Array2::zeros((1, 1)),
            predicted: None,
        };
        assert!((probe_global_contribution(short, 5).value - 0.4).abs() < 1e-15);
        assert!((probe_global_contribution(long, 50).value - 0.49).abs() < 1e-15);
    }

    #[test]
    fn probe_value_and_gradient_match_brute_force() {
        for seed in 0..20 {
            let (p, emb, tree) = random_instance(5, 3, 4, seed);
            for squared in [true, false] {
                let loss = probe_local_loss(&p, &emb, &tree, squared).unwrap();
                let brute = brute_probe_value(&p, &emb, &tree, squared);
                assert!((loss.value - brute).abs() < 1e-12);
                let numeric = numeric_grad(&p, |q| brute_probe_value(q, &emb, &tree, squared));
                assert!(
                    rel_err(&loss.grad, &numeric) < 1e-4,
                    "seed {seed} squared {squared}"
                );
            }
        }
    }

    #[test]
    fn three_word_perceptron_example() {
        // Isosceles triangle: p(1,2) = p(2,3) = 2, p(1,3) = 1 under B = I.
        let h = ndarray::array![[0.0, 0.0], [0.5, 15f64.sqrt() / 2.0], [1.0, 0.0]];
        let emb = EmbeddingSequence::new("k3", h);
        let params = ProbeParams::new(Array2::eye(2)).unwrap();
        let pred = crate::model::predict_matrix(&params, &emb, false)
            .unwrap()
            .distances;
        assert!((pred.get(1, 2) - 2.0).abs() < 1e-12);
        assert!((pred.get(2, 3) - 2.0).abs() < 1e-12);
        assert!((pred.get(1, 3) - 1.0).abs() < 1e-12);

        let gold = DepTree::new(3, [(1, 2), (2, 3)]).unwrap();
        let loss = perceptron_local_loss(&params, &emb, &gold, false).unwrap();
        assert_eq!(loss.predicted.as_ref().unwrap().edges(), &[(1, 2), (1, 3)]);
        assert!((loss.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perceptron_is_zero_when_decoding_is_right() {
        let tree = DepTree::random(9, &mut rng::stream(5, "t"));
        let emb = synth_tree_embeddings(&tree, 12, 0.0, 5).unwrap();
        let embedder = TreeEmbedder::new(12, 0.0, 5).unwrap();
        let params = ProbeParams::new(embedder.rotation().t().to_owned()).unwrap();
        let loss = perceptron_local_loss(&params, &emb, &tree, false).unwrap();
        assert_eq!(loss.value, 0.0);
        assert!(loss.grad.iter().all(|&v| v == 0.0));
        assert_eq!(loss.predicted.unwrap(), tree);
    }

    #[test]
    fn perceptron_value_is_never_negative() {
        for seed in 0..200 {
            let (p, emb, tree) = random_instance(2 + (seed as usize % 9), 3, 5, 1000 + seed);
            for squared in [false, true] {
                let loss = perceptron_local_loss(&p, &emb, &tree, squared).unwrap();
                assert!(loss.value >= 0.0);
                let decoded = loss.predicted.unwrap();
                assert_eq!(loss.value == 0.0, {
                    let pred = crate::model::predict_matrix(&p, &emb, squared)
                        .unwrap()
                        .distances;
                    pred.tree_weight(&tree) <= pred.tree_weight(&decoded)
                });
            }
        }
    }

    #[test]
    fn size_mismatch_rejected() {
        let (p, emb, _) = random_instance(5, 2, 3, 1);
        let other = DepTree::new(4, [(1, 2), (2, 3), (3, 4)]).unwrap();
        assert!(matches!(
            probe_local_loss(&p, &emb, &other, true),
            Err(Error::Size(_))
        ));
        assert!(matches!(
            perceptron_local_loss(&p, &emb, &other, true),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn batch_of_one_equals_sentence() {
        let (p, emb, tree) = random_instance(6, 3, 4, 2);
        let single = probe_global_contribution(probe_local_loss(&p, &emb, &tree, true).unwrap(), 6);
        let batch = batch_objective(ModelKind::Probe, &p, &[(&emb, &tree)], true).unwrap();
        assert_eq!(batch.value, single.value);
        assert_eq!(batch.grad, single.grad);
    }

    #[test]
    fn probe_batch_matches_hand_sum() {
        let instances: Vec<_> = (0..3)
            .map(|k| random_instance(3 + k, 2, 3, 40 + k as u64))
            .collect();
        let p = instances[0].0.clone();
        let batch: Vec<_> = instances.iter().map(|(_, e, t)| (e, t)).collect();
        let got = batch_objective(ModelKind::Probe, &p, &batch, true).unwrap();
        let hand: f64 = instances
            .iter()
            .map(|(_, e, t)| brute_probe_value(&p, e, t, true) / (t.n() * t.n()) as f64)
            .sum::<f64>()
            / 3.0;
        assert!((got.value - hand).abs() < 1e-12);
    }

    #[test]
    fn batch_is_permutation_invariant() {
        let instances: Vec<_> = (0..5)
            .map(|k| random_instance(4 + k, 2, 5, 70 + k as u64))
            .collect();
        let p = instances[0].0.clone();
        let forward: Vec<_> = instances.iter().map(|(_, e, t)| (e, t)).collect();
        let reversed: Vec<_> = forward.iter().rev().cloned().collect();
        for kind in [ModelKind::Probe, ModelKind::Perceptron] {
            let a = batch_objective(kind, &p, &forward, false).unwrap();
            let b = batch_objective(kind, &p, &reversed, false).unwrap();
            assert!((a.value - b.value).abs() < 1e-10);
            assert!((&a.grad - &b.grad).iter().all(|v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn perceptron_batch_zero_when_all_decoded() {
        let embedder = TreeEmbedder::new(10, 0.0, 8).unwrap();
        let params = ProbeParams::new(embedder.rotation().t().to_owned()).unwrap();
        let mut r = rng::stream(8, "trees");
        let data: Vec<_> = (0..4)
            .map(|k| {
                let t = DepTree::random(5 + k, &mut r);
                (embedder.embed("x", &t, &k.to_string()).unwrap(), t)
            })
            .collect();
        let batch: Vec<_> = data.iter().map(|(e, t)| (e, t)).collect();
        let loss = batch_objective(ModelKind::Perceptron, &params, &batch, false).unwrap();
        assert_eq!(loss.value, 0.0);
        assert!(batch_objective(ModelKind::Probe, &params, &[], true).is_err());
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("probe".parse::<ModelKind>().unwrap(), ModelKind::Probe);
        assert_eq!(
            "parser".parse::<ModelKind>().unwrap(),
            ModelKind::Perceptron
        );
        assert!("tagger".parse::<ModelKind>().is_err());
        assert!(ModelKind::Probe.default_squared());
        assert!(!ModelKind::Perceptron.default_squared());
    }
}
