//! Command-line front end. Every subcommand resolves the layered
//! configuration first; `--dry-run` prints it and stops.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::ablation::{self, AblationReport};
use crate::config::{self, PipelineConfig};
use crate::error::{Error, Result};
use crate::explain;
use crate::io;
use crate::pipeline::{self, RunDir, SCHEMA_VERSION};
use crate::popgraph::{self, PopulationGraph, Scheme};
use crate::stages;
use crate::synth::{self, Cohort, SplitSizes};
use crate::types::{validate_manifest, Split};

#[derive(Parser, Debug)]
#[command(name = "mmgt", version, about = "Multi-modal brain-tumor graph learning on synthetic cohorts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// JSON config file layered over the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// `desk` or `paper`.
    #[arg(long, global = true, default_value = "desk")]
    pub preset: String,
    /// Dotted override, e.g. `contrastive.tau=0.2`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    pub dry_run: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic cohort.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        /// Cohort seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the brain-network encoders and build every patient's network.
    BuildBrainnet {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Multi-modal contrastive training on the contrastive split.
    TrainContrastive {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Extract features and build population graphs.
    BuildPopgraph {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        scheme: Option<usize>,
    },
    /// Train node classifiers on stored population graphs.
    TrainClassifier {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        scheme: Option<usize>,
    },
    /// Test-set metrics of trained classifiers.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        scheme: Option<usize>,
    },
    /// Every stage end to end, then the scheme sweep report.
    Pipeline {
        #[command(flatten)]
        run: RunArgs,
        /// Reuse completed stages found in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Component ablation table.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Also train the whole-volume 3D CNN baseline.
        #[arg(long)]
        baseline: bool,
        /// 1-based rows to run (default: all).
        #[arg(long, value_delimiter = ',')]
        rows: Vec<usize>,
    },
    /// Saliency and attention exports for one patient.
    Explain {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        patient: String,
        #[arg(long)]
        scheme: Option<usize>,
    },
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Cohort directory written by `generate`.
    #[arg(long, default_value = "cohort")]
    pub cohort: PathBuf,
    /// Run directory for checkpoints and reports.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    /// Global seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

fn resolve(args: &ConfigArgs, fallback_file: Option<&Path>, extra: &[String]) -> Result<PipelineConfig> {
    let file = args.config.as_deref().or(fallback_file.filter(|p| p.exists()));
    let mut overrides = args.overrides.clone();
    overrides.extend_from_slice(extra);
    config::resolve(&args.preset, file, std::env::vars(), &overrides)
}

fn run_config(run: &RunArgs) -> Result<PipelineConfig> {
    let extra: Vec<String> = run.seed.map(|s| format!("seed={s}")).into_iter().collect();
    resolve(&run.cfg, Some(&RunDir::new(&run.out).config()), &extra)
}

fn dry_run(cfg: &PipelineConfig) -> Result<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(cfg)?;
    // a closed pipe (e.g. `| head`) is not an error here
    let _ = writeln!(std::io::stdout().lock(), "{text}");
    Ok(())
}

/// Parses `args` (including the program name) and runs the command;
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn schemes(arg: Option<usize>) -> Result<Vec<Scheme>> {
    match arg {
        Some(k) => Ok(vec![Scheme::from_index(k)?]),
        None => Ok(Scheme::ALL.to_vec()),
    }
}

fn log(msg: &str) {
    eprintln!("[mmgt] {msg}");
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Generate { out, n, seed, cfg } => {
            let mut extra = Vec::new();
            extra.extend(n.map(|n| format!("synthesis.n_patients={n}")));
            extra.extend(seed.map(|s| format!("synthesis.seed={s}")));
            let c = resolve(&cfg, None, &extra)?;
            if cfg.dry_run {
                return dry_run(&c);
            }
            cmd_generate(&out, &c)
        }
        Command::BuildBrainnet { run } => with_run(&run, |c, r, cohort| {
            let (models, history) = stages::train_brainnet(cohort, &c.brainnet, c.seed)?;
            pipeline::save_brainnet(r, c, &models, &history)?;
            r.mark("brainnet")?;
            let entries = stages::labelled_patients(cohort);
            let nets = stages::build_networks(cohort, &models, &c.brainnet, &entries)?;
            pipeline::save_networks(r, cohort, &nets)?;
            r.mark("networks")?;
            println!(
                "autoencoder loss {:.4} -> {:.4}; edge loss {:.4} -> {:.4}; {} networks",
                history.autoencoder.first().map_or(f64::NAN, |h| h.loss),
                history.autoencoder.last().map_or(f64::NAN, |h| h.loss),
                history.edges.first().map_or(f64::NAN, |h| h.loss),
                history.edges.last().map_or(f64::NAN, |h| h.loss),
                nets.len()
            );
            Ok(())
        }),
        Command::TrainContrastive { run } => with_run(&run, |c, r, cohort| {
            let inputs = load_inputs(r, c, cohort)?;
            let (_, history) = pipeline::train_encoders(r, c, &inputs, cohort)?;
            r.mark("contrastive")?;
            let s = pipeline::StageLosses::from_history(&history);
            println!(
                "contrastive loss {:.4} -> {:.4} over {} epochs",
                s.initial.unwrap_or(f64::NAN),
                s.last.unwrap_or(f64::NAN),
                s.epochs
            );
            Ok(())
        }),
        Command::BuildPopgraph { run, scheme } => with_run(&run, |c, r, cohort| {
            let features = if r.features().exists() {
                io::read_json(r.features())?
            } else {
                let model = pipeline::load_model(&r.model(), c)?;
                let inputs = load_inputs(r, c, cohort)?;
                let f = pipeline::extract_features(&model, &inputs, c.contrastive.attention);
                io::write_json(r.features(), &f)?;
                r.mark("features")?;
                f
            };
            for s in schemes(scheme)? {
                let g = pipeline::build_graph(&features, cohort, c, s)?;
                io::write_json(r.graph(s.index()), &g)?;
                println!("scheme {}: {} ({} nodes, {} edges)", s.index(), s.label(), g.n_nodes(), g.edges.len());
            }
            Ok(())
        }),
        Command::TrainClassifier { run, scheme } => with_run_dir(&run, |c, r| {
            for s in schemes(scheme)? {
                let g = load_graph(r, s)?;
                let (_, h) = pipeline::train_classifier(r, c, &g)?;
                println!(
                    "scheme {}: final training loss {:.4}",
                    s.index(),
                    h.last().map_or(f64::NAN, |e| e.loss)
                );
            }
            Ok(())
        }),
        Command::Evaluate { run, scheme } => with_run_dir(&run, |c, r| {
            let mut rows = Vec::new();
            for s in schemes(scheme)? {
                let g = load_graph(r, s)?;
                let model = pipeline::load_classifier(r, c, &g)?;
                let m = popgraph::evaluate(&model, &g, c.classifier.threshold)?;
                io::write_json(
                    r.evaluation(s.index()),
                    &serde_json::json!({
                        "schema_version": SCHEMA_VERSION,
                        "command": "evaluate",
                        "scheme": s.index(),
                        "label": s.label(),
                        "metrics": m,
                    }),
                )?;
                rows.push((s.label(), m));
            }
            print!("{}", popgraph::format_table(&rows));
            Ok(())
        }),
        Command::Pipeline { run, resume } => {
            let c = run_config(&run)?;
            if run.cfg.dry_run {
                return dry_run(&c);
            }
            let report = pipeline::run_pipeline(&run.cohort, &run.out, &c, resume, log)?;
            print!("{}", report.table());
            match report.best_scheme {
                Some(b) => println!("best scheme: {b} (AUC {:.3})", report.best_auc.unwrap_or(f64::NAN)),
                None => println!("best scheme: none (AUC undefined)"),
            }
            Ok(())
        }
        Command::Ablate { run, baseline, rows } => with_run(&run, |c, r, cohort| {
            let report = cmd_ablate(c, r, cohort, baseline, &rows)?;
            print!("{}", report.table());
            Ok(())
        }),
        Command::Explain { run, patient, scheme } => with_run(&run, |c, r, cohort| {
            let dir = cmd_explain(c, r, cohort, &patient, scheme)?;
            println!("wrote {}", dir.display());
            Ok(())
        }),
    }
}

fn with_run(run: &RunArgs, f: impl FnOnce(&PipelineConfig, &RunDir, &Cohort) -> Result<()>) -> Result<()> {
    let c = run_config(run)?;
    if run.cfg.dry_run {
        return dry_run(&c);
    }
    let cohort = Cohort::open(&run.cohort)?;
    let r = RunDir::new(&run.out);
    ensure_config(&r, &c)?;
    f(&c, &r, &cohort)
}

fn with_run_dir(run: &RunArgs, f: impl FnOnce(&PipelineConfig, &RunDir) -> Result<()>) -> Result<()> {
    let c = run_config(run)?;
    if run.cfg.dry_run {
        return dry_run(&c);
    }
    let r = RunDir::new(&run.out);
    ensure_config(&r, &c)?;
    f(&c, &r)
}

fn ensure_config(r: &RunDir, c: &PipelineConfig) -> Result<()> {
    if !r.config().exists() {
        io::write_json(r.config(), c)?;
    }
    Ok(())
}

fn load_graph(r: &RunDir, s: Scheme) -> Result<PopulationGraph> {
    let path = r.graph(s.index());
    if !path.exists() {
        return Err(Error::data(format!("{}: run build-popgraph first", path.display())));
    }
    io::read_json(path)
}

fn load_inputs(r: &RunDir, c: &PipelineConfig, cohort: &Cohort) -> Result<Vec<crate::encoders::PatientInput>> {
    let entries = stages::labelled_patients(cohort);
    let nets = pipeline::load_networks(r, cohort, &entries)?;
    stages::prepare_inputs(cohort, &nets, &c.encoders, &entries)
}

pub fn cmd_generate(out: &Path, c: &PipelineConfig) -> Result<()> {
    let manifest = synth::generate_cohort(&c.synthesis, out)?;
    let violations = validate_manifest(&manifest);
    let sizes = SplitSizes::compute(c.synthesis.n_patients, synth::n_ssl(&c.synthesis))?;
    println!("cohort: {} patients in {}", manifest.patients.len(), out.display());
    for s in Split::ALL {
        let pos = manifest
            .patients_in(s)
            .filter(|p| p.label == Some(1))
            .count();
        println!("  {:<12} {:>3} patients, {:>3} positive", s.as_str(), sizes.get(s), pos);
    }
    println!("manifest violations: {}", violations.len());
    Ok(())
}

pub fn cmd_ablate(c: &PipelineConfig, r: &RunDir, cohort: &Cohort, baseline: bool, rows: &[usize]) -> Result<AblationReport> {
    let entries = stages::labelled_patients(cohort);
    let nets = if r.completed()?.iter().any(|s| s == "networks") {
        pipeline::load_networks(r, cohort, &entries)?
    } else {
        let (models, history) = stages::train_brainnet(cohort, &c.brainnet, c.seed)?;
        pipeline::save_brainnet(r, c, &models, &history)?;
        r.mark("brainnet")?;
        let n = stages::build_networks(cohort, &models, &c.brainnet, &entries)?;
        pipeline::save_networks(r, cohort, &n)?;
        r.mark("networks")?;
        n
    };
    let inputs = stages::prepare_inputs(cohort, &nets, &c.encoders, &entries)?;
    let (train, test) = ablation::partition(&inputs, |id| cohort.manifest.get(id).map(|e| e.split));
    let selected: Vec<usize> = if rows.is_empty() {
        (0..ablation::ROWS.len()).collect()
    } else {
        rows.iter()
            .map(|&k| {
                if (1..=ablation::ROWS.len()).contains(&k) {
                    Ok(k - 1)
                } else {
                    Err(Error::config(format!("ablation row {k} outside 1..={}", ablation::ROWS.len())))
                }
            })
            .collect::<Result<_>>()?
    };
    let mut out = Vec::new();
    for k in selected {
        log(&format!("ablation: {}", ablation::ROWS[k].label));
        out.push(ablation::run_row(k, &train, &test, c, c.seed)?);
    }
    if baseline {
        log("ablation: whole-volume baseline");
        let load = |split: &[Split]| -> Result<Vec<(mmgt_autograd::Mat, u8)>> {
            entries
                .iter()
                .filter(|e| split.contains(&e.split))
                .map(|e| {
                    let (v, _) = cohort.load_patient(e)?;
                    let label = e.label.ok_or_else(|| Error::data(format!("{}: no label", e.id)))?;
                    Ok((ablation::baseline_input(&v, c.ablation.baseline_side), label))
                })
                .collect()
        };
        let tr = load(&[Split::Contrastive, Split::Classifier])?;
        let te = load(&[Split::Test])?;
        out.push(ablation::run_baseline(&tr, &te, c, c.seed)?);
    }
    let report = AblationReport {
        schema_version: SCHEMA_VERSION,
        command: "ablate".into(),
        seed: c.seed,
        rows: out,
    };
    io::write_json(r.root.join("ablation.json"), &report)?;
    Ok(report)
}

pub fn cmd_explain(c: &PipelineConfig, r: &RunDir, cohort: &Cohort, patient: &str, scheme: Option<usize>) -> Result<PathBuf> {
    let k = match scheme {
        Some(k) => k,
        None if r.report().exists() => {
            let rep: pipeline::PipelineReport = io::read_json(r.report())?;
            rep.best_scheme.unwrap_or(0)
        }
        None => 0,
    };
    let s = Scheme::from_index(k)?;
    let model = pipeline::load_model(&r.model(), c)?;
    let graph = load_graph(r, s)?;
    let classifier = pipeline::load_classifier(r, c, &graph)?;
    let entry = cohort
        .manifest
        .get(patient)
        .ok_or_else(|| Error::data(format!("unknown patient `{patient}`")))?;
    if entry.split == Split::Ssl {
        return Err(Error::data(format!("{patient} is in the SSL pool and has no prediction")));
    }
    let features: Vec<crate::encoders::PatientFeatures> = io::read_json(r.features())?;
    let raw_rows: Vec<Vec<f64>> = graph
        .ids
        .iter()
        .map(|id| {
            features
                .iter()
                .find(|f| &f.id == id)
                .map(|f| s.node.extract(f))
                .ok_or_else(|| Error::data(format!("{id}: no stored features")))
        })
        .collect::<Result<_>>()?;
    let raw = mmgt_autograd::Mat::from_shape_fn((raw_rows.len(), raw_rows[0].len()), |(i, j)| raw_rows[i][j]);
    let nets = pipeline::load_networks(r, cohort, &[entry])?;
    let input = stages::prepare_inputs(cohort, &nets, &c.encoders, &[entry])?.remove(0);
    let e = explain::explain_patient(&model, &classifier, &graph, &raw, &input, c.contrastive.attention)?;
    let dir = r.root.join("explain").join(patient);
    explain::write_explanation(&dir, &e, input.image.side())?;
    Ok(dir)
}
