//! Generate → embed or simulate → evaluate, for one configuration and seed.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::{json, Value};

use spectra::asyncsim::{run_async, AsyncNodeState};
use spectra::distsync::{coordinates, psd_precondition, run_sync};
use spectra::io::{matrix_to_csv, write_atomic};
use spectra::linalg::Order;
use spectra::recommend::{agreement_experiment, evaluate_voting, RatingTruth, VotingParams};
use spectra::spectral::{centroids_rating, centroids_similarity, cluster_accuracy, eig_top_operator, embed, svd_top, Centroids, Embedding};
use spectra::synthdata::{gen_ratings, gen_similarity, ClassAssignment, RatingModel, SimilarityModel};
use spectra::{SparseGraph, Trace};

use crate::config::{data_seed, AlgorithmSection, EvaluationSection, ExperimentConfig, Model};
use crate::CliError;

pub enum Data {
    Similarity { graph: SparseGraph, users: ClassAssignment, model: SimilarityModel },
    Rating { ratings: SparseGraph, users: ClassAssignment, items: ClassAssignment, model: RatingModel },
}

impl Data {
    pub fn generate(cfg: &ExperimentConfig, seed: u64) -> Result<Data, CliError> {
        let ds = data_seed(cfg.model_seed(), seed);
        Ok(match cfg.build_model()? {
            Model::Similarity(model) => {
                let (graph, users) = gen_similarity(&model, ds)?;
                let model = model.with_realized_fractions(&users);
                Data::Similarity { graph, users, model }
            }
            Model::Rating(model) => {
                let (ratings, users, items) = gen_ratings(&model, ds)?;
                let model = model.with_realized_fractions(&users, &items);
                Data::Rating { ratings, users, items, model }
            }
        })
    }

    pub fn graph(&self) -> &SparseGraph {
        match self {
            Data::Similarity { graph, .. } => graph,
            Data::Rating { ratings, .. } => ratings,
        }
    }

    /// Writes the edge list and the class labels.
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        let mut buf = Vec::new();
        self.graph().write_edge_list(&mut buf)?;
        write_atomic(&dir.join("graph.txt"), &buf)?;
        match self {
            Data::Similarity { users, .. } => write_atomic(&dir.join("user_labels.csv"), labels_csv(users).as_bytes())?,
            Data::Rating { users, items, .. } => {
                write_atomic(&dir.join("user_labels.csv"), labels_csv(users).as_bytes())?;
                write_atomic(&dir.join("item_labels.csv"), labels_csv(items).as_bytes())?;
            }
        }
        Ok(())
    }
}

fn labels_csv(a: &ClassAssignment) -> String {
    a.labels().iter().map(|l| format!("{l}\n")).collect()
}

/// User profiles with the class centroids expressed in the same basis.
pub struct Profiles {
    pub embedding: Embedding,
    pub centroids: Centroids,
    /// Labels of the embedded users (the largest component for distributed runs).
    pub truth: ClassAssignment,
    /// Original indices of the embedded users.
    pub nodes: Vec<usize>,
    pub trace: Option<(&'static str, Trace)>,
    pub metrics: Vec<(&'static str, f64)>,
}

/// Runs the configured algorithm. A divergence is reported together with the
/// samples recorded before it.
pub fn profiles(cfg: &ExperimentConfig, data: &Data, seed: u64) -> Result<Profiles, CliError> {
    let l = cfg.algorithm.dim();
    match (&cfg.algorithm, data) {
        (AlgorithmSection::Oracle(_), Data::Similarity { graph, users, model }) => {
            let emb = embed(&eig_top_operator(graph, l, Order::Magnitude)?);
            let cents = centroids_similarity(model, l)?.aligned_to(&emb, users);
            Ok(Profiles { embedding: emb, centroids: cents, truth: users.clone(), nodes: (0..graph.n()).collect(), trace: None, metrics: vec![] })
        }
        (AlgorithmSection::Oracle(_), Data::Rating { ratings, users, model, .. }) => {
            let emb = embed(&svd_top(ratings, l)?);
            let cents = centroids_rating(model, l)?.aligned_to(&emb, users);
            Ok(Profiles { embedding: emb, centroids: cents, truth: users.clone(), nodes: (0..ratings.n()).collect(), trace: None, metrics: vec![] })
        }
        (AlgorithmSection::Sync(s), Data::Similarity { graph, users, model }) => {
            let op = psd_precondition(graph, s.psd_mode())?;
            let run = run_sync(graph, l, s.psd_mode(), &s.to_config(&op, seed)).map_err(|e| CliError::from_run(e, "sync_trace.csv"))?;
            let m = run.final_metrics().to_vec();
            let x = coordinates(&run.states);
            let mut p = rotated_profiles(&run.operator, &x, users, model, l)?;
            p.trace = Some(("sync_trace.csv", run.trace));
            p.metrics = vec![("residual", m[1]), ("gram_error", m[2])];
            Ok(p)
        }
        (AlgorithmSection::Async(a), Data::Similarity { graph, users, model }) => {
            let run = run_async(graph, l, &a.to_config(seed)).map_err(|e| CliError::from_run(e, "async_trace.csv"))?;
            let op = psd_precondition(graph, spectra::distsync::PsdMode::Squared)?;
            let x = async_coordinates(&run.states);
            let mut p = rotated_profiles(&op, &x, users, model, l)?;
            p.trace = Some(("async_trace.csv", run.trace));
            p.metrics = vec![("residual", run.residual), ("gram_offdiag_max", run.gram_offdiag_max)];
            Ok(p)
        }
        _ => Err(CliError::Validation("distributed algorithms run on similarity models only".into())),
    }
}

fn async_coordinates(states: &[AsyncNodeState]) -> DMatrix<f64> {
    let l = states.first().map_or(0, |s| s.dim());
    DMatrix::from_fn(states.len(), l, |u, k| states[u].x[k])
}

/// A distributed run converges to some orthonormal basis `X` of the top
/// eigenspace, so the centroids are carried into that basis by `W = V'X`.
fn rotated_profiles(
    op: &spectra::distsync::PsdOperator,
    x: &DMatrix<f64>,
    users: &ClassAssignment,
    model: &SimilarityModel,
    l: usize,
) -> Result<Profiles, CliError> {
    let nodes = op.nodes().to_vec();
    let truth = ClassAssignment::new(nodes.iter().map(|&u| users.label(u)).collect(), users.n_classes())?;
    let basis = op.top_eigenspace(l)?;
    let reference = embed(&basis);
    let cents = centroids_similarity(&model.with_realized_fractions(&truth), l)?.aligned_to(&reference, &truth);
    let w = basis.vectors.transpose() * x;
    Ok(Profiles {
        embedding: Embedding::from_coordinates(x),
        centroids: cents.recombined(&w),
        truth,
        nodes,
        trace: None,
        metrics: vec![],
    })
}

impl Profiles {
    pub fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_atomic(&dir.join("embedding.csv"), matrix_to_csv(&self.embedding.profiles).as_bytes())?;
        write_atomic(&dir.join("centroids.csv"), matrix_to_csv(&self.centroids.points).as_bytes())?;
        if self.nodes.len() != self.truth.len() || self.nodes.iter().enumerate().any(|(i, &u)| i != u) {
            write_atomic(&dir.join("nodes.csv"), self.nodes.iter().map(|u| format!("{u}\n")).collect::<String>().as_bytes())?;
        }
        if let Some((name, trace)) = &self.trace {
            write_atomic(&dir.join(name), trace.to_csv_string().as_bytes())?;
        }
        Ok(())
    }
}

/// Outcome of the evaluation section for one seed.
pub struct Evaluation {
    pub report: Value,
    pub metrics: Vec<(&'static str, f64)>,
    pub extra_csv: Option<(&'static str, String)>,
}

pub fn evaluate(cfg: &ExperimentConfig, data: &Data, seed: u64) -> Result<(Profiles, Evaluation), CliError> {
    let l = cfg.algorithm.dim();
    if let (EvaluationSection::Agreement { max_rank }, Data::Rating { ratings, .. }) = (&cfg.evaluation, data) {
        // the agreement experiment embeds the matrix with one rating per user hidden
        let p = profiles(cfg, data, seed)?;
        let curve = agreement_experiment(ratings, l, *max_rank, seed)?;
        let metrics = vec![("rank1_frequency", curve.frequency[0]), ("mean_popularity", curve.mean_popularity)];
        let csv = curve.to_csv();
        return Ok((p, Evaluation { report: to_value(&curve), metrics, extra_csv: Some(("agreement.csv", csv)) }));
    }
    let p = profiles(cfg, data, seed)?;
    let eval = match (&cfg.evaluation, data) {
        (EvaluationSection::Cluster { radius }, _) => {
            let score = cluster_accuracy(&p.embedding, &p.centroids, &p.truth, *radius)?;
            Evaluation {
                report: to_value(&score),
                metrics: vec![("accuracy", score.accuracy), ("fraction_within", score.fraction_within)],
                extra_csv: None,
            }
        }
        (EvaluationSection::Voting { radius, sample_size, n_samples }, Data::Rating { ratings, users, items, model }) => {
            let params = VotingParams { radius: *radius, sample_size: *sample_size, n_samples: *n_samples, seed };
            let truth = RatingTruth { model, users, items };
            let report = evaluate_voting(ratings, &p.embedding, &p.centroids, truth, params)?;
            Evaluation {
                metrics: vec![
                    ("consistency_fraction", report.consistency_fraction),
                    ("excluded_fraction", report.excluded_fraction),
                    ("mean_misclassified", report.mean_misclassified),
                ],
                report: to_value(&report),
                extra_csv: None,
            }
        }
        _ => return Err(CliError::Validation("voting and agreement evaluations need a rating model".into())),
    };
    Ok((p, eval))
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("reports serialize to JSON")
}

/// Names of the per-cell metrics, in output order.
pub fn metric_names(cfg: &ExperimentConfig) -> Vec<&'static str> {
    let mut names = match cfg.algorithm {
        AlgorithmSection::Oracle(_) => vec![],
        AlgorithmSection::Sync(_) => vec!["residual", "gram_error"],
        AlgorithmSection::Async(_) => vec!["residual", "gram_offdiag_max"],
    };
    names.extend(match cfg.evaluation {
        EvaluationSection::Cluster { .. } => vec!["accuracy", "fraction_within"],
        EvaluationSection::Voting { .. } => vec!["consistency_fraction", "excluded_fraction", "mean_misclassified"],
        EvaluationSection::Agreement { .. } => vec!["rank1_frequency", "mean_popularity"],
    });
    names
}

/// Metrics of one (configuration, seed) cell, ordered as [`metric_names`].
pub fn run_cell(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<f64>, CliError> {
    let data = Data::generate(cfg, seed)?;
    let (p, e) = evaluate(cfg, &data, seed)?;
    let all: Vec<(&str, f64)> = p.metrics.iter().chain(&e.metrics).copied().collect();
    Ok(metric_names(cfg).iter().map(|n| all.iter().find(|(m, _)| m == n).map_or(f64::NAN, |(_, v)| *v)).collect())
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

pub fn seed_report(cfg: &ExperimentConfig, data: &Data, seed: u64, p: &Profiles, e: &Evaluation) -> Value {
    let g = data.graph();
    json!({
        "seed": seed,
        "data_seed": data_seed(cfg.model_seed(), seed),
        "graph": { "n_users": g.n(), "n_items": g.n_items(), "n_edges": g.n_edges() },
        "embedded_users": p.nodes.len(),
        "algorithm": p.metrics.iter().map(|(k, v)| (k.to_string(), json!(v))).collect::<serde_json::Map<_, _>>(),
        "evaluation": e.report,
    })
}
