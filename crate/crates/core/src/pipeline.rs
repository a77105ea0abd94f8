//! End-to-end run: brain-network encoders, networks, contrastive training,
//! feature extraction and the population-graph sweep, with checkpoints
//! after every stage.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::brainnet::{self, EdgeEncoderPair, EpochLoss, NodeAutoencoder};
use crate::config::{ContrastiveNodes, PipelineConfig};
use crate::contrastive::train_contrastive;
use crate::encoders::{MultiModalModel, PatientFeatures, PatientInput};
use crate::error::{Error, Result};
use crate::io;
use crate::popgraph::{self, NodeClassifier, NodeRole, PopulationGraph, Scheme, SchemeResult};
use crate::rng;
use crate::stages::{self, BrainnetHistory, BrainnetModels};
use crate::synth::Cohort;
use crate::types::{BrainNetwork, PatientEntry, Split};

pub const SCHEMA_VERSION: u32 = 1;

pub const STAGES: [&str; 5] = ["brainnet", "networks", "contrastive", "features", "sweep"];

/// File layout of a run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn progress(&self) -> PathBuf {
        self.root.join("progress.json")
    }
    pub fn autoencoder(&self) -> PathBuf {
        self.root.join("brainnet").join("autoencoder")
    }
    pub fn edge_encoders(&self) -> PathBuf {
        self.root.join("brainnet").join("edges")
    }
    pub fn brainnet_history(&self) -> PathBuf {
        self.root.join("brainnet").join("history.json")
    }
    pub fn network(&self, id: &str) -> PathBuf {
        self.root.join("networks").join(id)
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("contrastive").join("model")
    }
    pub fn contrastive_history(&self) -> PathBuf {
        self.root.join("contrastive").join("history.json")
    }
    pub fn features(&self) -> PathBuf {
        self.root.join("features.json")
    }
    pub fn sweep(&self) -> PathBuf {
        self.root.join("sweep.json")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn graph(&self, scheme: usize) -> PathBuf {
        self.root.join("popgraph").join(format!("scheme{scheme}.json"))
    }
    pub fn classifier(&self, scheme: usize) -> PathBuf {
        self.root.join("classifier").join(format!("scheme{scheme}"))
    }
    pub fn classifier_history(&self, scheme: usize) -> PathBuf {
        self.root.join("classifier").join(format!("scheme{scheme}-history.json"))
    }
    pub fn evaluation(&self, scheme: usize) -> PathBuf {
        self.root.join("evaluation").join(format!("scheme{scheme}.json"))
    }

    pub fn completed(&self) -> Result<Vec<String>> {
        if self.progress().exists() {
            io::read_json(self.progress())
        } else {
            Ok(Vec::new())
        }
    }

    pub fn mark(&self, stage: &str) -> Result<()> {
        let mut done = self.completed()?;
        if !done.iter().any(|s| s == stage) {
            done.push(stage.to_string());
        }
        io::write_json(self.progress(), &done)
    }
}

pub fn save_brainnet(run: &RunDir, cfg: &PipelineConfig, models: &BrainnetModels, history: &BrainnetHistory) -> Result<()> {
    let arch = brainnet::brainnet_architecture(&cfg.brainnet);
    io::save_params(run.autoencoder(), &models.autoencoder.store, &arch)?;
    io::save_params(run.edge_encoders(), &models.edges.store, &arch)?;
    io::write_json(run.brainnet_history(), history)
}

pub fn load_brainnet(run: &RunDir, cfg: &PipelineConfig) -> Result<BrainnetModels> {
    let mut autoencoder = NodeAutoencoder::new(&cfg.brainnet, cfg.seed);
    io::load_params(run.autoencoder(), &mut autoencoder.store)?;
    let mut edges = EdgeEncoderPair::new(&cfg.brainnet, cfg.seed);
    io::load_params(run.edge_encoders(), &mut edges.store)?;
    Ok(BrainnetModels { autoencoder, edges })
}

pub fn save_networks(run: &RunDir, cohort: &Cohort, networks: &BTreeMap<String, BrainNetwork>) -> Result<()> {
    let atlas = cohort.root.join(&cohort.manifest.atlas);
    for (id, net) in networks {
        brainnet::save_network(&run.network(id), net, &atlas.display().to_string())?;
    }
    Ok(())
}

pub fn load_networks(run: &RunDir, cohort: &Cohort, entries: &[&PatientEntry]) -> Result<BTreeMap<String, BrainNetwork>> {
    entries
        .iter()
        .map(|e| Ok((e.id.clone(), brainnet::load_network(&run.network(&e.id), &cohort.atlas)?)))
        .collect()
}

/// Fresh model with the run's seeded initialisation.
pub fn new_model(cfg: &PipelineConfig) -> Result<MultiModalModel> {
    let mut r = rng::stream(cfg.seed, "encoders-init", 0);
    MultiModalModel::new(&cfg.encoders, &cfg.heads, cfg.brainnet.attr_dim(), &mut r)
}

pub fn save_model(path: &Path, model: &MultiModalModel, cfg: &PipelineConfig) -> Result<()> {
    io::save_params(path, &model.store, &model.architecture(&cfg.heads))
}

pub fn load_model(path: &Path, cfg: &PipelineConfig) -> Result<MultiModalModel> {
    if !path.join("descriptor.json").exists() {
        return Err(Error::data(format!("{}: no trained model checkpoint", path.display())));
    }
    let mut model = new_model(cfg)?;
    io::load_params(path, &mut model.store)?;
    Ok(model)
}

/// Role of every labelled patient in the population graph; excluded
/// patients are dropped.
pub fn graph_roles<'c>(entries: &[&'c PatientEntry], policy: ContrastiveNodes) -> Vec<(&'c PatientEntry, NodeRole)> {
    entries
        .iter()
        .filter_map(|e| {
            let role = match (e.split, policy) {
                (Split::Classifier, _) => NodeRole::Train,
                (Split::Test, _) => NodeRole::Test,
                (Split::Contrastive, ContrastiveNodes::Context) => NodeRole::Context,
                (Split::Contrastive, ContrastiveNodes::Train) => NodeRole::Train,
                _ => return None,
            };
            Some((*e, role))
        })
        .collect()
}

/// Contrastive training on the contrastive split. On divergence the last
/// finite parameters are still written before the error propagates.
pub fn train_encoders(
    run: &RunDir,
    cfg: &PipelineConfig,
    inputs: &[PatientInput],
    cohort: &Cohort,
) -> Result<(MultiModalModel, Vec<EpochLoss>)> {
    let train: Vec<PatientInput> = inputs
        .iter()
        .filter(|i| cohort.manifest.get(&i.id).is_some_and(|e| e.split == Split::Contrastive))
        .cloned()
        .collect();
    let mut model = new_model(cfg)?;
    match train_contrastive(&mut model, &train, &cfg.contrastive, cfg.seed) {
        Ok(history) => {
            save_model(&run.model(), &model, cfg)?;
            io::write_json(run.contrastive_history(), &history)?;
            Ok((model, history))
        }
        Err(e) => {
            save_model(&run.model(), &model, cfg)?;
            Err(e)
        }
    }
}

pub fn extract_features(model: &MultiModalModel, inputs: &[PatientInput], attention: bool) -> Vec<PatientFeatures> {
    inputs.iter().map(|i| model.features(i, attention)).collect()
}

/// Population graph of one scheme over the labelled patients.
pub fn build_graph(
    features: &[PatientFeatures],
    cohort: &Cohort,
    cfg: &PipelineConfig,
    scheme: Scheme,
) -> Result<PopulationGraph> {
    let entries: Vec<&PatientEntry> = features
        .iter()
        .map(|f| cohort.manifest.get(&f.id).ok_or_else(|| Error::data(format!("{}: not in manifest", f.id))))
        .collect::<Result<_>>()?;
    let roles = graph_roles(&entries, cfg.graph.contrastive_nodes);
    let feats: Vec<PatientFeatures> = features
        .iter()
        .filter(|f| roles.iter().any(|(e, _)| e.id == f.id))
        .cloned()
        .collect();
    let roles: Vec<NodeRole> = roles.iter().map(|(_, r)| *r).collect();
    popgraph::build_population_graph(&feats, &roles, scheme, cfg.classifier.theta, cfg.classifier.similarity)
}

pub fn classifier_architecture(cfg: &PipelineConfig, graph: &PopulationGraph) -> serde_json::Value {
    serde_json::json!({
        "scheme": graph.scheme.index(),
        "in_dim": graph.node_weights.ncols(),
        "classifier": cfg.classifier,
        "gat_self_loops": true,
        "edge_attr": "similarity weight",
    })
}

/// Trains the classifier of one scheme and writes its checkpoint.
pub fn train_classifier(
    run: &RunDir,
    cfg: &PipelineConfig,
    graph: &PopulationGraph,
) -> Result<(NodeClassifier, Vec<EpochLoss>)> {
    let (model, history) = popgraph::train_node_classifier(graph, &cfg.classifier, cfg.seed)?;
    let k = graph.scheme.index();
    io::save_params(run.classifier(k), &model.store, &classifier_architecture(cfg, graph))?;
    io::write_json(run.classifier_history(k), &history)?;
    Ok((model, history))
}

pub fn load_classifier(run: &RunDir, cfg: &PipelineConfig, graph: &PopulationGraph) -> Result<NodeClassifier> {
    let path = run.classifier(graph.scheme.index());
    if !path.join("descriptor.json").exists() {
        return Err(Error::data(format!("{}: no trained classifier checkpoint", path.display())));
    }
    let mut model = NodeClassifier::new(&cfg.classifier, graph.node_weights.ncols(), cfg.seed);
    io::load_params(path, &mut model.store)?;
    Ok(model)
}

/// Builds, trains and evaluates every scheme, keeping graphs and
/// classifiers in the run directory.
pub fn sweep(run: &RunDir, features: &[PatientFeatures], cohort: &Cohort, cfg: &PipelineConfig) -> Result<Vec<SchemeResult>> {
    Scheme::ALL
        .iter()
        .map(|&scheme| {
            let graph = build_graph(features, cohort, cfg, scheme)?;
            io::write_json(run.graph(scheme.index()), &graph)?;
            let (model, history) = train_classifier(run, cfg, &graph)?;
            Ok(SchemeResult {
                scheme: scheme.index(),
                label: scheme.label(),
                n_edges: graph.edges.len(),
                metrics: popgraph::evaluate(&model, &graph, cfg.classifier.threshold)?,
                final_loss: history.last().map_or(f64::NAN, |h| h.loss),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub ssl: usize,
    pub contrastive: usize,
    pub classifier: usize,
    pub test: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageLosses {
    pub initial: Option<f64>,
    #[serde(rename = "final")]
    pub last: Option<f64>,
    pub epochs: usize,
}

impl StageLosses {
    pub fn from_history(h: &[EpochLoss]) -> Self {
        Self {
            initial: h.first().map(|e| e.loss),
            last: h.last().map(|e| e.loss),
            epochs: h.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub command: String,
    pub preset: String,
    pub seed: u64,
    pub splits: SplitCounts,
    pub autoencoder: StageLosses,
    pub edge_encoders: StageLosses,
    pub contrastive: StageLosses,
    pub schemes: Vec<SchemeResult>,
    pub best_scheme: Option<usize>,
    pub best_auc: Option<f64>,
}

impl PipelineReport {
    pub fn table(&self) -> String {
        let rows: Vec<_> = self.schemes.iter().map(|s| (s.label.clone(), s.metrics)).collect();
        popgraph::format_table(&rows)
    }
}

/// Index and AUC of the best scheme by test AUC (first wins ties).
pub fn best_scheme(rows: &[SchemeResult]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for r in rows {
        if let Some(a) = r.metrics.auc {
            if best.is_none_or(|(_, b)| a > b) {
                best = Some((r.scheme, a));
            }
        }
    }
    best
}

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| e.in_stage(name))
}

/// Runs every stage into `out`. With `resume`, completed stages recorded in
/// the run directory are loaded instead of recomputed; the stored config
/// must match.
pub fn run_pipeline(
    cohort_dir: &Path,
    out: &Path,
    cfg: &PipelineConfig,
    resume: bool,
    mut log: impl FnMut(&str),
) -> Result<PipelineReport> {
    let run = RunDir::new(out);
    let cohort = Cohort::open(cohort_dir)?;
    if resume && run.config().exists() {
        let stored: PipelineConfig = io::read_json(run.config())?;
        if &stored != cfg {
            return Err(Error::config("resumed run has a different configuration"));
        }
    } else {
        if run.progress().exists() {
            std::fs::remove_file(run.progress()).map_err(|e| Error::io(run.progress(), e))?;
        }
        io::write_json(run.config(), cfg)?;
    }
    let done = if resume { run.completed()? } else { Vec::new() };
    let is_done = |s: &str| done.iter().any(|d| d == s);

    let history: BrainnetHistory;
    let models = if is_done("brainnet") {
        log("brainnet: resumed from checkpoint");
        history = io::read_json(run.brainnet_history())?;
        load_brainnet(&run, cfg)?
    } else {
        log("brainnet: training node autoencoder and edge encoders");
        let (m, h) = stage("brainnet", || stages::train_brainnet(&cohort, &cfg.brainnet, cfg.seed))?;
        save_brainnet(&run, cfg, &m, &h)?;
        run.mark("brainnet")?;
        history = h;
        m
    };

    let entries = stages::labelled_patients(&cohort);
    let networks = if is_done("networks") {
        log("networks: resumed from checkpoint");
        load_networks(&run, &cohort, &entries)?
    } else {
        log(&format!("networks: building {} brain networks", entries.len()));
        let n = stage("networks", || stages::build_networks(&cohort, &models, &cfg.brainnet, &entries))?;
        save_networks(&run, &cohort, &n)?;
        run.mark("networks")?;
        n
    };
    let inputs = stage("inputs", || stages::prepare_inputs(&cohort, &networks, &cfg.encoders, &entries))?;

    let (model, c_history) = if is_done("contrastive") {
        log("contrastive: resumed from checkpoint");
        (load_model(&run.model(), cfg)?, io::read_json(run.contrastive_history())?)
    } else {
        log("contrastive: training encoders and projection heads");
        let r = stage("contrastive", || train_encoders(&run, cfg, &inputs, &cohort))?;
        run.mark("contrastive")?;
        r
    };

    let features = if is_done("features") {
        log("features: resumed from checkpoint");
        io::read_json(run.features())?
    } else {
        log("features: extracting multi-modal features");
        let f = extract_features(&model, &inputs, cfg.contrastive.attention);
        io::write_json(run.features(), &f)?;
        run.mark("features")?;
        f
    };

    log("sweep: training population-graph classifiers");
    let schemes = stage("sweep", || sweep(&run, &features, &cohort, cfg))?;
    io::write_json(run.sweep(), &schemes)?;
    run.mark("sweep")?;

    let count = |s: Split| cohort.patients(s).len();
    let best = best_scheme(&schemes);
    let report = PipelineReport {
        schema_version: SCHEMA_VERSION,
        command: "pipeline".into(),
        preset: cfg.preset.clone(),
        seed: cfg.seed,
        splits: SplitCounts {
            ssl: count(Split::Ssl),
            contrastive: count(Split::Contrastive),
            classifier: count(Split::Classifier),
            test: count(Split::Test),
        },
        autoencoder: StageLosses::from_history(&history.autoencoder),
        edge_encoders: StageLosses::from_history(&history.edges),
        contrastive: StageLosses::from_history(&c_history),
        schemes,
        best_scheme: best.map(|b| b.0),
        best_auc: best.map(|b| b.1),
    };
    io::write_json(run.report(), &report)?;
    Ok(report)
}
