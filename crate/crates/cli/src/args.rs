use std::path::PathBuf;

use btex_core::optimizer::Algorithm;
use btex_core::DistanceMetric;
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "btex", version, about = "Learn embeddings inside a vocabulary subspace")]
pub struct Cli {
    #[command(flatten)]
    pub shared: SharedArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct SharedArgs {
    /// Vocabulary file (BTEX or CSV, detected from the contents).
    #[arg(long, global = true)]
    pub vocab: Option<PathBuf>,
    /// Directory receiving output files. Created if missing.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// key=value file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a vocabulary, convert it to BTEX and report its numerical rank.
    Ingest(IngestArgs),
    /// Select the subspace basis around an initial word.
    Select(SelectArgs),
    /// Optimize the weights of a learned embedding.
    Optimize(OptimizeArgs),
    /// Check the single-step identity and vocabulary spanning numerically.
    Verify(VerifyArgs),
    /// Sweep subspace sizes and metrics and tabulate convergence.
    Ablate(AblateArgs),
    /// Place a learned embedding into a prompt's embedding matrix.
    Combine(CombineArgs),
    /// Write a Gaussian synthetic vocabulary.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Absolute SVD cutoff; defaults to max(rows, cols) * eps * sigma_max.
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[arg(long)]
    pub init_word: Option<String>,
    #[arg(long)]
    pub metric: Option<DistanceMetric>,
    /// Take exactly this many nearest embeddings.
    #[arg(long)]
    pub fixed_m: Option<usize>,
    /// Take the shortest prefix reaching this rank.
    #[arg(long)]
    pub target_d1: Option<usize>,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

#[derive(Debug, Args)]
pub struct OptimizerArgs {
    #[arg(long)]
    pub algorithm: Option<Algorithm>,
    #[arg(long, alias = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    #[arg(long)]
    pub adam_beta2: Option<f64>,
    #[arg(long)]
    pub adam_epsilon: Option<f64>,
    /// Loss fraction that counts as converged.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ObjectiveArgs {
    /// quadratic or linear. Without it a seeded synthetic target is used.
    #[arg(long)]
    pub objective: Option<String>,
    #[arg(long)]
    pub target_file: Option<PathBuf>,
    #[arg(long)]
    pub operator_file: Option<PathBuf>,
    #[arg(long)]
    pub observation_file: Option<PathBuf>,
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// Basis file written by `select`; replaces selection from --vocab.
    #[arg(long)]
    pub basis: Option<PathBuf>,
    #[command(flatten)]
    pub select: SelectArgs,
    #[command(flatten)]
    pub optimizer: OptimizerArgs,
    #[command(flatten)]
    pub objective: ObjectiveArgs,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub basis: Option<PathBuf>,
    #[command(flatten)]
    pub select: SelectArgs,
    #[arg(long, alias = "lr")]
    pub learning_rate: Option<f64>,
    /// Replacement for V_M V_M^T, read as a vocabulary file of d columns.
    #[arg(long)]
    pub gram: Option<PathBuf>,
    /// Random vectors reconstructed in the spanning check.
    #[arg(long)]
    pub samples: Option<usize>,
    #[command(flatten)]
    pub objective: ObjectiveArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub init_word: Option<String>,
    /// Comma-separated subspace sizes.
    #[arg(long)]
    pub m_list: Option<String>,
    /// Comma-separated metrics.
    #[arg(long)]
    pub metrics: Option<String>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[command(flatten)]
    pub optimizer: OptimizerArgs,
    #[command(flatten)]
    pub objective: ObjectiveArgs,
}

#[derive(Debug, Args)]
pub struct CombineArgs {
    /// Single-row vocabulary file holding the learned embedding.
    #[arg(long)]
    pub embedding: Option<PathBuf>,
    /// Whitespace-separated tokens with exactly one `*`.
    #[arg(long)]
    pub template: Option<String>,
    #[arg(long)]
    pub n_max: Option<usize>,
    #[arg(long)]
    pub terminator: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
}

impl SharedArgs {
    pub fn overlay(&self, c: &mut RunConfig) {
        c.set_path("vocab", self.vocab.as_ref());
        c.set_path("out_dir", self.out_dir.as_ref());
        c.set("seed", self.seed);
    }
}

impl SelectArgs {
    pub fn overlay(&self, c: &mut RunConfig) {
        c.set("init_word", self.init_word.as_ref());
        c.set("metric", self.metric);
        c.set("fixed_m", self.fixed_m);
        c.set("target_d1", self.target_d1);
        c.set("tolerance", self.tolerance);
    }
}

impl OptimizerArgs {
    pub fn overlay(&self, c: &mut RunConfig) {
        c.set("algorithm", self.algorithm);
        c.set("learning_rate", self.learning_rate);
        c.set("steps", self.steps);
        c.set("weight_decay", self.weight_decay);
        c.set("adam_beta1", self.adam_beta1);
        c.set("adam_beta2", self.adam_beta2);
        c.set("adam_epsilon", self.adam_epsilon);
        c.set("threshold", self.threshold);
    }
}

impl ObjectiveArgs {
    pub fn overlay(&self, c: &mut RunConfig) {
        c.set("objective", self.objective.as_ref());
        c.set_path("target_file", self.target_file.as_ref());
        c.set_path("operator_file", self.operator_file.as_ref());
        c.set_path("observation_file", self.observation_file.as_ref());
        c.set("sigma", self.sigma);
    }
}

impl Command {
    pub fn overlay(&self, c: &mut RunConfig) {
        match self {
            Command::Ingest(a) => c.set("tolerance", a.tolerance),
            Command::Select(a) => a.overlay(c),
            Command::Optimize(a) => {
                c.set_path("basis", a.basis.as_ref());
                a.select.overlay(c);
                a.optimizer.overlay(c);
                a.objective.overlay(c);
            }
            Command::Verify(a) => {
                c.set_path("basis", a.basis.as_ref());
                a.select.overlay(c);
                c.set("learning_rate", a.learning_rate);
                c.set_path("gram", a.gram.as_ref());
                c.set("samples", a.samples);
                a.objective.overlay(c);
            }
            Command::Ablate(a) => {
                c.set("init_word", a.init_word.as_ref());
                c.set("m_list", a.m_list.as_ref());
                c.set("metrics", a.metrics.as_ref());
                c.set("tolerance", a.tolerance);
                a.optimizer.overlay(c);
                a.objective.overlay(c);
            }
            Command::Combine(a) => {
                c.set_path("embedding", a.embedding.as_ref());
                c.set("template", a.template.as_ref());
                c.set("n_max", a.n_max);
                c.set("terminator", a.terminator.as_ref());
            }
            Command::Synth(a) => {
                c.set("dim", a.dim);
                c.set("size", a.size);
            }
        }
    }
}
