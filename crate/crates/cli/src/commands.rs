use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use btex_core::geometry::gram_outer;
use btex_core::optimizer::suggested_gd_rate;
use btex_core::prompt::{PromptTemplate, DEFAULT_N_MAX};
use btex_core::selection::vocabulary_rank;
use btex_core::synthetic::{gaussian_matrix, gaussian_vector, gaussian_vocabulary, rng};
use btex_core::verify::verify_step_identity;
use btex_core::{
    combine, compose_embedding, generate_stub, init_weights, optimize, select_by_rank, select_fixed_m, verify_spanning,
    DistanceMetric, Error, Format, Objective, OptimizerConfig, QuadraticTarget, RunMetrics, SubspaceBasis, Vocabulary,
};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunConfig, SelectionMode};

/// Subspace sizes swept when no list is configured.
pub const DEFAULT_M_LIST: [usize; 5] = [96, 192, 384, 576, 672];
pub const DEFAULT_VERIFY_LR: f64 = 0.1;
pub const DEFAULT_SAMPLES: usize = 100;

/// A check that ran to completion and did not hold.
#[derive(Debug)]
pub struct VerificationFailed(pub String);

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "verification failed: {}", self.0)
    }
}

impl std::error::Error for VerificationFailed {}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

fn load_vocab(cfg: &RunConfig) -> Result<Vocabulary> {
    let path = cfg.require_path("vocab")?;
    Ok(Vocabulary::load_auto(&path)?)
}

/// A basis together with the token of each column and the initial word.
struct Selected {
    basis: SubspaceBasis,
    tokens: Vec<String>,
    init_word: String,
    /// Index of the initial word in the basis' own index space.
    u_index: usize,
    u: DVector<f64>,
}

impl Selected {
    /// Column holding the initial word. Under the dot metric a longer
    /// neighbour can outrank the word itself, so it may be missing.
    fn u_position(&self) -> Option<usize> {
        self.basis.position_of(self.u_index)
    }
}

fn select_from_vocab(vocab: &Vocabulary, cfg: &RunConfig) -> Result<Selected> {
    let init_word: String = cfg.require("init_word")?;
    let u_index = vocab.resolve(init_word.as_str())?;
    let metric = cfg.metric()?;
    let tol = cfg.tolerance()?;
    let basis = match cfg.selection_mode()? {
        SelectionMode::FixedM(m) => select_fixed_m(vocab, u_index, metric, m, tol)?,
        SelectionMode::TargetD1(d1) => select_by_rank(vocab, u_index, metric, d1, tol)?,
    };
    let tokens = basis.indices().iter().map(|&i| vocab.tokens()[i].clone()).collect();
    Ok(Selected {
        basis,
        tokens,
        init_word,
        u_index,
        u: vocab.get_embedding(u_index)?,
    })
}

/// Loads `basis` when configured, otherwise selects from `vocab`.
fn load_selected(cfg: &RunConfig) -> Result<Selected> {
    let Some(path) = cfg.path("basis") else {
        return select_from_vocab(&load_vocab(cfg)?, cfg);
    };
    let file = Vocabulary::load_auto(&path)?;
    let init_word: String = cfg.require("init_word")?;
    let u_index = file
        .index_of(&init_word)
        .with_context(|| format!("initial word {init_word:?} is not a column of {}", path.display()))?;
    let basis = SubspaceBasis::new(
        file.matrix().clone(),
        (0..file.len()).collect(),
        cfg.metric()?,
        cfg.tolerance()?,
    )?;
    Ok(Selected {
        basis,
        tokens: file.tokens().to_vec(),
        init_word,
        u_index,
        u: file.get_embedding(u_index)?,
    })
}

/// The configured objective, or a quadratic target drawn from `N(0, I)`.
fn objective_or_default(cfg: &RunConfig, dim: usize) -> Result<Box<dyn Objective>> {
    let seed = cfg.seed()?;
    let objective: Box<dyn Objective> = match cfg.objective()? {
        Some(spec) => spec.build(seed)?,
        None => Box::new(QuadraticTarget::new(gaussian_vector(dim, &mut rng(seed)))?),
    };
    if objective.dim() != dim {
        return Err(Error::DimensionMismatch(format!(
            "objective acts on R^{}, embeddings live in R^{dim}",
            objective.dim()
        ))
        .into());
    }
    Ok(objective)
}

fn optimizer_for(cfg: &RunConfig, basis: &SubspaceBasis) -> Result<OptimizerConfig> {
    let (mut opt, derive_lr) = cfg.optimizer()?;
    if derive_lr {
        opt.learning_rate = suggested_gd_rate(basis);
        opt.validate().context("deriving a learning rate from the basis")?;
    }
    Ok(opt)
}

/// Loss at the embedding left after the last update.
fn final_loss(objective: &dyn Objective, v: &DVector<f64>, steps: usize) -> Result<f64> {
    let loss = objective.evaluate(v, steps as u64)?.loss;
    if !loss.is_finite() {
        return Err(Error::Diverged {
            what: "loss",
            step: steps,
        }
        .into());
    }
    Ok(loss)
}

fn threshold_text(steps: Option<usize>) -> String {
    steps.map_or_else(|| "NA".to_string(), |s| s.to_string())
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<()> {
    let vocab = load_vocab(cfg)?;
    let report = vocabulary_rank(&vocab, cfg.tolerance()?)?;
    let out = out_dir(cfg)?.join("vocab.btex");
    vocab.save(&out, Format::Binary)?;
    println!("d = {}", vocab.dim());
    println!("|V| = {}", vocab.len());
    println!("rank = {}", report.rank);
    println!("tolerance = {:e}", report.tolerance);
    println!("wrote {}", out.display());
    if report.rank < vocab.dim() {
        eprintln!(
            "warning: rank {} < d = {}; the vocabulary does not span R^{}",
            report.rank,
            vocab.dim(),
            vocab.dim()
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct SelectSummary<'a> {
    #[serde(rename = "M")]
    m: usize,
    d1: usize,
    metric: DistanceMetric,
    tolerance: f64,
    init_word: &'a str,
    u_position: Option<usize>,
    indices: &'a [usize],
    tokens: &'a [String],
}

pub fn cmd_select(cfg: &RunConfig) -> Result<()> {
    let vocab = load_vocab(cfg)?;
    let sel = select_from_vocab(&vocab, cfg)?;
    let dir = out_dir(cfg)?;
    let raw = DMatrix::from_fn(vocab.dim(), sel.basis.len(), |i, j| {
        vocab.raw_matrix()[(i, sel.basis.indices()[j])]
    });
    Vocabulary::new(sel.tokens.clone(), raw)?.save(dir.join("basis.btex"), Format::Binary)?;
    let summary = SelectSummary {
        m: sel.basis.len(),
        d1: sel.basis.rank(),
        metric: sel.basis.metric(),
        tolerance: sel.basis.tolerance(),
        init_word: &sel.init_word,
        u_position: sel.u_position(),
        indices: sel.basis.indices(),
        tokens: &sel.tokens,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    println!("M = {}", summary.m);
    println!("d1 = {}", summary.d1);
    println!("metric = {}", summary.metric);
    println!("tolerance = {:e}", summary.tolerance);
    if summary.u_position.is_none() {
        eprintln!(
            "warning: {:?} is not among its own {} nearest embeddings under {}",
            sel.init_word, summary.m, summary.metric
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct WeightsFile<'a> {
    init_word: &'a str,
    u_position: usize,
    algorithm: String,
    learning_rate: f64,
    steps: usize,
    final_loss: f64,
    tokens: &'a [String],
    weights: &'a [f64],
}

pub fn cmd_optimize(cfg: &RunConfig) -> Result<()> {
    let sel = load_selected(cfg)?;
    let opt = optimizer_for(cfg, &sel.basis)?;
    let threshold = cfg.threshold()?;
    let objective = objective_or_default(cfg, sel.basis.dim())?;
    let dir = out_dir(cfg)?;

    let w0 = init_weights(&sel.basis, sel.u_index).with_context(|| {
        format!(
            "{:?} was not selected; try another metric or a larger basis",
            sel.init_word
        )
    })?;
    let (w, metrics) = optimize(&sel.basis, &w0, objective.as_ref(), &opt)?;
    let v = compose_embedding(&sel.basis, &w)?;
    let loss = final_loss(objective.as_ref(), &v, opt.steps)?;

    write_json(
        &dir.join("weights.json"),
        &WeightsFile {
            init_word: &sel.init_word,
            u_position: w.u_position,
            algorithm: opt.algorithm.to_string(),
            learning_rate: opt.learning_rate,
            steps: opt.steps,
            final_loss: loss,
            tokens: &sel.tokens,
            weights: w.values.as_slice(),
        },
    )?;
    let column = DMatrix::from_column_slice(v.len(), 1, &v.iter().map(|&x| x as f32).collect::<Vec<_>>());
    Vocabulary::new(vec![btex_core::prompt::PLACEHOLDER.to_string()], column)?
        .save(dir.join("embedding.csv"), Format::Csv)?;
    write(&dir.join("metrics.jsonl"), metrics.to_jsonl())?;

    println!("learning_rate = {:e}", opt.learning_rate);
    println!("final loss = {loss:e}");
    println!(
        "steps to threshold = {}",
        threshold_text(metrics.steps_to_threshold(threshold))
    );
    Ok(())
}

#[derive(Serialize)]
struct VerifyFile {
    step_identity: btex_core::StepIdentityReport,
    spanning: Option<btex_core::SpanningReport>,
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<()> {
    let sel = load_selected(cfg)?;
    let lr = cfg.get("learning_rate")?.unwrap_or(DEFAULT_VERIFY_LR);
    let objective = objective_or_default(cfg, sel.basis.dim())?;
    let bv = match cfg.path("gram") {
        Some(p) => Vocabulary::load_auto(&p)?.matrix().clone(),
        None => gram_outer(sel.basis.matrix())?,
    };
    let step = verify_step_identity(&sel.basis, objective.as_ref(), &sel.u, lr, &bv)?;

    let spanning = match cfg.path("vocab") {
        Some(path) => {
            let vocab = Vocabulary::load_auto(&path)?;
            let samples = cfg.get("samples")?.unwrap_or(DEFAULT_SAMPLES);
            if samples == 0 {
                bail!("samples must be at least 1");
            }
            let mut r = rng(cfg.seed()?);
            r.set_stream(1);
            let targets = gaussian_matrix(vocab.dim(), samples, &mut r);
            Some(verify_spanning(vocab.matrix(), &targets)?)
        }
        None => None,
    };

    let dir = out_dir(cfg)?;
    let report = VerifyFile {
        step_identity: step,
        spanning,
    };
    write_json(&dir.join("verify.json"), &report)?;

    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    let s = &report.step_identity;
    println!(
        "{} step identity: max_rel_err = {:e}, rank(B_V) = {}, d1 = {}, tolerance = {:e}",
        verdict(s.passed),
        s.max_rel_err,
        s.rank_bv,
        s.d1,
        s.tolerance
    );
    match &report.spanning {
        Some(sp) => println!(
            "{} spanning: rank = {} of d = {}, max_residual = {:e} over {} vectors",
            verdict(sp.passed),
            sp.rank,
            sp.dim,
            sp.max_residual,
            sp.samples
        ),
        None => println!("SKIP spanning: no --vocab given"),
    }

    let mut failed = Vec::new();
    if !s.passed {
        failed.push("step identity");
    }
    if report.spanning.as_ref().is_some_and(|sp| !sp.passed) {
        failed.push("spanning");
    }
    if !failed.is_empty() {
        return Err(VerificationFailed(failed.join(", ")).into());
    }
    Ok(())
}

/// One row of an ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub m: usize,
    pub metric: DistanceMetric,
    pub d1: usize,
    pub steps_to_tolerance: Option<usize>,
    pub final_residual: f64,
}

pub const ABLATION_HEADER: &str = "M,metric,d1,steps_to_tolerance,final_residual";

impl AblationRow {
    fn csv(&self) -> String {
        format!(
            "{},{},{},{},{:e}",
            self.m,
            self.metric,
            self.d1,
            threshold_text(self.steps_to_tolerance),
            self.final_residual
        )
    }
}

fn ablation_cell(
    vocab: &Vocabulary,
    u_index: usize,
    metric: DistanceMetric,
    m: usize,
    cfg: &RunConfig,
    objective: &dyn Objective,
    threshold: f64,
) -> Result<(AblationRow, RunMetrics)> {
    let basis = select_fixed_m(vocab, u_index, metric, m, cfg.tolerance()?)?;
    let opt = optimizer_for(cfg, &basis)?;
    let w0 = init_weights(&basis, u_index)?;
    let (w, metrics) = optimize(&basis, &w0, objective, &opt)?;
    let v = compose_embedding(&basis, &w)?;
    let loss = final_loss(objective, &v, opt.steps)?;
    let row = AblationRow {
        m,
        metric,
        d1: basis.rank(),
        steps_to_tolerance: metrics.steps_to_threshold(threshold),
        final_residual: (2.0 * loss).sqrt(),
    };
    Ok((row, metrics))
}

/// Default surrogate for one metric: a random combination of the initial
/// word's `k` nearest embeddings, where `k` is the smallest swept `M`.
/// Selections are nested prefixes, so the target lies in every swept span.
fn default_ablation_target(
    vocab: &Vocabulary,
    u_index: usize,
    metric: DistanceMetric,
    k: usize,
    seed: u64,
    tol: Option<f64>,
) -> Result<QuadraticTarget> {
    let basis = select_fixed_m(vocab, u_index, metric, k, tol)?;
    let mut r = rng(seed);
    r.set_stream(2 + DistanceMetric::ALL.iter().position(|&x| x == metric).unwrap() as u64);
    let c = gaussian_vector(k, &mut r) / (k as f64).sqrt();
    Ok(QuadraticTarget::new(basis.matrix() * c)?)
}

pub fn cmd_ablate(cfg: &RunConfig) -> Result<()> {
    let vocab = load_vocab(cfg)?;
    let init_word: String = cfg.require("init_word")?;
    let u_index = vocab.resolve(init_word.as_str())?;
    let m_list = cfg.list::<usize>("m_list")?.unwrap_or_else(|| DEFAULT_M_LIST.to_vec());
    let metrics = cfg
        .list::<DistanceMetric>("metrics")?
        .unwrap_or_else(|| DistanceMetric::ALL.to_vec());
    if m_list.is_empty() {
        bail!("m_list is empty");
    }
    if metrics.is_empty() {
        bail!("metrics is empty");
    }
    for (name, dup) in [
        ("m_list", has_duplicates(&m_list)),
        ("metrics", has_duplicates(&metrics)),
    ] {
        if dup {
            bail!("{name} contains duplicates");
        }
    }
    // surface validation errors before any work starts
    cfg.optimizer()?;
    let threshold = cfg.threshold()?;
    let seed = cfg.seed()?;
    let tol = cfg.tolerance()?;
    let configured = match cfg.objective()? {
        Some(_) => Some(objective_or_default(cfg, vocab.dim())?),
        None => None,
    };
    let k = *m_list.iter().min().expect("non-empty");
    let targets: Vec<Option<QuadraticTarget>> = metrics
        .iter()
        .map(|&metric| match configured {
            Some(_) => Ok(None),
            None => default_ablation_target(&vocab, u_index, metric, k, seed, tol).map(Some),
        })
        .collect::<Result<_>>()?;

    let cells: Vec<(usize, usize)> = (0..metrics.len())
        .flat_map(|mi| m_list.iter().map(move |&m| (mi, m)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(mi, m)| {
            let objective: &dyn Objective = match (&configured, &targets[mi]) {
                (Some(o), _) => o.as_ref(),
                (None, Some(t)) => t,
                (None, None) => unreachable!("every metric has a target"),
            };
            ablation_cell(&vocab, u_index, metrics[mi], m, cfg, objective, threshold)
        })
        .collect::<Result<Vec<_>>>()?;

    let dir = out_dir(cfg)?;
    for (mi, metric) in metrics.iter().enumerate() {
        let mut table = format!("{ABLATION_HEADER}\n");
        for ((cell_metric, m), (row, run)) in cells.iter().zip(&rows) {
            if *cell_metric != mi {
                continue;
            }
            table.push_str(&row.csv());
            table.push('\n');
            write(&dir.join(format!("ablation_{metric}_M{m}.jsonl")), run.to_jsonl())?;
        }
        write(&dir.join(format!("ablation_{metric}.csv")), &table)?;
        print!("{table}");
    }
    Ok(())
}

fn has_duplicates<T: PartialEq>(xs: &[T]) -> bool {
    xs.iter().enumerate().any(|(i, x)| xs[..i].contains(x))
}

pub fn cmd_combine(cfg: &RunConfig) -> Result<()> {
    let vocab = load_vocab(cfg)?;
    let v_star = btex_core::objectives::read_vector(&cfg.require_path("embedding")?)?;
    let text: String = cfg.require("template")?;
    let terminator: String = cfg.require("terminator")?;
    let n_max = cfg.get("n_max")?.unwrap_or(DEFAULT_N_MAX);
    let template = PromptTemplate::parse(&text, n_max, terminator)?;
    let y = combine(&template, &v_star, &vocab)?;
    let handle = generate_stub(&y, out_dir(cfg)?.join("y.btex"))?;
    println!("rows = {}", y.matrix.nrows());
    println!("placeholder row = {}", y.placeholder_row);
    println!("wrote {}", handle.path.display());
    Ok(())
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let dim = cfg.require("dim")?;
    let size = cfg.require("size")?;
    let vocab = gaussian_vocabulary(dim, size, cfg.seed()?)?;
    let out = out_dir(cfg)?.join("vocab.btex");
    vocab.save(&out, Format::Binary)?;
    println!("wrote {} ({dim} x {size})", out.display());
    Ok(())
}
