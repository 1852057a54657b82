//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use btex_core::synthetic::{gaussian_matrix, gaussian_vector, gaussian_vocabulary, rng};
use btex_core::verify::gram_rank_pair;
use btex_core::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        match $cond {
            true => {}
            false => return Err(format!($($fmt)+)),
        }
    };
}

fn btex(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_btex"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "btex {} exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn tempdir() -> tempfile::TempDir {
    tempfile::tempdir().expect("temporary directory")
}

/// Exact rank of an integer matrix by fraction-free elimination.
fn exact_rank(m: &DMatrix<i64>) -> usize {
    let (rows, cols) = m.shape();
    let mut a: Vec<Vec<i128>> = (0..rows)
        .map(|i| (0..cols).map(|j| m[(i, j)] as i128).collect())
        .collect();
    let (mut rank, mut prev) = (0, 1i128);
    for col in 0..cols {
        let Some(p) = (rank..rows).find(|&r| a[r][col] != 0) else {
            continue;
        };
        a.swap(rank, p);
        for r in (rank + 1)..rows {
            for c in (col + 1)..cols {
                a[r][c] = (a[rank][col] * a[r][c] - a[r][col] * a[rank][c]) / prev;
            }
            a[r][col] = 0;
        }
        prev = a[rank][col];
        rank += 1;
        if rank == rows {
            break;
        }
    }
    rank
}

/// Distances computed independently of the library's kernels.
fn brute_distances(a: &DMatrix<f64>, u: usize, metric: DistanceMetric) -> Vec<f64> {
    let col = |j: usize| (0..a.nrows()).map(move |i| a[(i, j)]);
    let norm = |j: usize| col(j).map(|x| x * x).sum::<f64>().sqrt();
    (0..a.ncols())
        .map(|j| {
            let dot: f64 = col(u).zip(col(j)).map(|(x, y)| x * y).sum();
            match metric {
                DistanceMetric::Dot => dot,
                DistanceMetric::Cosine => dot / (norm(u) * norm(j)),
                DistanceMetric::L2 => col(u).zip(col(j)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            }
        })
        .collect()
}

/// Stable insertion sort, closest first.
fn brute_order(dist: &[f64], metric: DistanceMetric) -> Vec<usize> {
    let closer = |a: f64, b: f64| if metric.larger_is_closer() { a > b } else { a < b };
    let mut out: Vec<usize> = Vec::new();
    for i in 0..dist.len() {
        let pos = out.iter().position(|&j| closer(dist[i], dist[j])).unwrap_or(out.len());
        out.insert(pos, i);
    }
    out
}

/// `V (VᵀV)⁻¹ Vᵀ x` for full column rank `V`.
fn normal_projection(v: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let coeffs = v.tr_mul(v).cholesky().expect("full column rank").solve(&v.tr_mul(x));
    v * coeffs
}

fn random_basis(d: usize, m: usize, seed: u64) -> SubspaceBasis {
    let mut r = rng(seed);
    SubspaceBasis::new(
        gaussian_matrix(d, m, &mut r),
        (0..m).collect(),
        DistanceMetric::Dot,
        None,
    )
    .unwrap()
}

fn step_identity() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for i in 0..50u64 {
        let m = [4, 8, 16][i as usize % 3];
        let eta = [0.1, 1.0][(i / 3) as usize % 2];
        let basis = random_basis(32, m, 100 + i);
        let mut r = rng(200 + i);
        let q = QuadraticTarget::new(gaussian_vector(32, &mut r)).unwrap();
        let u = basis.matrix().column(r.gen_range(0..m)).into_owned();
        let rep = verify_projected_step(&basis, &q, &u, eta).map_err(|e| e.to_string())?;
        worst = worst.max(rep.max_rel_err);
        ensure!(
            rep.max_rel_err <= 1e-10,
            "instance {i}: relative error {:e}",
            rep.max_rel_err
        );
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("50 instances, max relative error {worst:e}, {elapsed:.2?}"))
}

fn gram_rank() -> Outcome {
    let mut deficient = 0;
    for i in 0..50u64 {
        let mut r = rng(300 + i);
        let distinct = r.gen_range(1..=24);
        let dups = if i % 2 == 0 { r.gen_range(1..=12) } else { 0 };
        let base = gaussian_matrix(32, distinct, &mut r);
        // duplicates are exact copies or exact doublings of earlier columns
        let vm = DMatrix::from_fn(32, distinct + dups, |row, c| {
            if c < distinct {
                base[(row, c)]
            } else {
                let src = (c * 7) % distinct;
                base[(row, src)] * if c % 2 == 0 { 1.0 } else { 2.0 }
            }
        });
        let bv = gram_outer(&vm).unwrap();
        let (rank_bv, rank_vm, _) = gram_rank_pair(&vm, &bv, None).map_err(|e| e.to_string())?;
        ensure!(
            rank_bv == rank_vm,
            "basis {i}: rank(B_V) {rank_bv} != rank(V_M) {rank_vm}"
        );
        ensure!(rank_vm == distinct, "basis {i}: rank {rank_vm}, constructed {distinct}");
        if vm.ncols() > rank_vm {
            deficient += 1;
        }
    }
    Ok(format!("50 bases ({deficient} rank-deficient), zero mismatches"))
}

fn spanning() -> Outcome {
    let vocab = gaussian_vocabulary(16, 1000, 400).unwrap();
    let targets = gaussian_matrix(16, 100, &mut rng(401));
    let rep = verify_spanning(vocab.matrix(), &targets).map_err(|e| e.to_string())?;
    ensure!(rep.rank == 16, "rank {}", rep.rank);
    ensure!(rep.max_residual <= 1e-8, "max residual {:e}", rep.max_residual);
    // each reconstruction checked independently of the library's residuals
    let (w, _) = least_squares(vocab.matrix(), &targets).unwrap();
    let worst = (0..100)
        .map(|j| (vocab.matrix() * w.column(j) - targets.column(j)).norm())
        .fold(0.0, f64::max);
    ensure!(worst <= 1e-8, "recomputed residual {worst:e}");

    let dir = tempdir();
    vocab.save(dir.path().join("v.csv"), Format::Csv).unwrap();
    let stdout = btex(dir.path(), &["ingest", "--vocab", "v.csv"])?;
    ensure!(stdout.contains("rank = 16\n"), "ingest printed {stdout:?}");
    Ok(format!("100 vectors, max residual {worst:e}; ingest reports rank 16"))
}

fn selection_equivalence() -> Outcome {
    let vocab = gaussian_vocabulary(16, 1000, 500).unwrap();
    let mut r = rng(501);
    for k in 0..20 {
        let u = r.gen_range(0..vocab.len());
        let m = r.gen_range(1..=200);
        for metric in DistanceMetric::ALL {
            let expected = &brute_order(&brute_distances(vocab.matrix(), u, metric), metric)[..m];
            let basis = select_fixed_m(&vocab, u, metric, m, None).map_err(|e| e.to_string())?;
            ensure!(
                basis.indices() == expected,
                "word {k} ({u}), {metric}, M={m}: indices differ"
            );
        }
    }

    let mut checked = 0;
    let mut unreachable = 0;
    for seed in 0..12u64 {
        let mut r = rng(600 + seed);
        // some vocabularies are products of thin factors to force low rank
        let inner = if seed % 3 == 0 { r.gen_range(2..=6) } else { 8 };
        let left = DMatrix::from_fn(8, inner, |_, _| r.gen_range(-1i64..=1));
        let right = DMatrix::from_fn(inner, 16, |_, _| r.gen_range(-1i64..=1));
        let mut ints = &left * &right;
        for j in 0..16 {
            if ints.column(j).iter().all(|&x| x == 0) {
                ints[(j % 8, j)] = 1;
            }
        }
        let vocab = Vocabulary::new((0..16).map(|i| format!("t{i}")).collect(), ints.map(|x| x as f32)).unwrap();
        let full = exact_rank(&ints);
        for u in 0..16 {
            for metric in DistanceMetric::ALL {
                let order = brute_order(&brute_distances(vocab.matrix(), u, metric), metric);
                let prefix_rank = |m: usize| exact_rank(&DMatrix::from_fn(8, m, |i, j| ints[(i, order[j])]));
                for target in 1..=8 {
                    match select_by_rank(&vocab, u, metric, target, None) {
                        Ok(b) => {
                            let m = b.len();
                            ensure!(b.indices() == &order[..m], "seed {seed} u {u} {metric}: not a prefix");
                            ensure!(
                                prefix_rank(m) >= target,
                                "seed {seed} u {u} {metric} target {target}: short"
                            );
                            ensure!(
                                m == 1 || prefix_rank(m - 1) < target,
                                "seed {seed} u {u} {metric} target {target}: M={m} not minimal"
                            );
                        }
                        Err(Error::UnreachableRank { max_rank, .. }) => {
                            ensure!(full < target && max_rank == full, "seed {seed}: wrongly unreachable");
                            unreachable += 1;
                        }
                        Err(e) => return Err(e.to_string()),
                    }
                    checked += 1;
                }
            }
        }
    }
    Ok(format!(
        "fixed-M matches argsort on 20 words x 3 metrics; {checked} rank targets minimal ({unreachable} unreachable)"
    ))
}

fn initialization_exactness() -> Outcome {
    for i in 0..100u64 {
        let mut r = rng(700 + i);
        let d = r.gen_range(2..=64);
        let m = r.gen_range(1..=d + 8);
        let vocab = gaussian_vocabulary(d, m + 20, 800 + i).unwrap();
        let u_index = r.gen_range(0..vocab.len());
        let mut indices: Vec<usize> = (0..vocab.len()).filter(|&j| j != u_index).collect();
        indices.truncate(m - 1);
        indices.insert(r.gen_range(0..m), u_index);
        let basis = SubspaceBasis::from_vocabulary(&vocab, indices, DistanceMetric::Dot, None).unwrap();
        let w = init_weights(&basis, u_index).map_err(|e| e.to_string())?;
        let v = compose_embedding(&basis, &w).unwrap();
        let u = vocab.get_embedding(u_index).unwrap();
        ensure!(
            v == u,
            "basis {i}: compose(init) differs from u by {:e}",
            (v - u).amax()
        );
    }
    Ok("100 bases, zero error".into())
}

fn in_span_invariant() -> Outcome {
    let vocab = gaussian_vocabulary(64, 400, 900).unwrap();
    let mut r = rng(901);
    let a = gaussian_matrix(40, 64, &mut r);
    let a_norm2 = numerical_rank(&a, None).unwrap().singular_values[0].powi(2);
    let lin = LinearReconstruction::new(a, gaussian_vector(40, &mut r), 0.2, 7).unwrap();
    let mut worst = 0.0f64;
    for (metric, m) in [
        (DistanceMetric::Cosine, 24),
        (DistanceMetric::L2, 48),
        (DistanceMetric::Dot, 16),
    ] {
        let basis = select_fixed_m(&vocab, 3, metric, m, None).unwrap();
        let w0 = init_weights(&basis, 3).map_err(|e| e.to_string())?;
        for cfg in [
            OptimizerConfig::adamw(1e-2, 500),
            OptimizerConfig::gd(0.5 * optimizer::suggested_gd_rate(&basis) / a_norm2, 500),
        ] {
            let (w, metrics) = optimize(&basis, &w0, &lin, &cfg).map_err(|e| e.to_string())?;
            ensure!(metrics.records.len() == 500, "{} records", metrics.records.len());
            for rec in &metrics.records {
                let rel = rec.residual / rec.v_norm;
                worst = worst.max(rel);
                ensure!(
                    rel <= 1e-8,
                    "{metric} {} step {}: residual {:e}",
                    cfg.algorithm,
                    rec.step,
                    rel
                );
            }
            // final point against an independent projector
            let v = compose_embedding(&basis, &w).unwrap();
            let off = (&v - normal_projection(basis.matrix(), &v)).norm();
            ensure!(off <= 1e-8 * v.norm(), "final residual {off:e}");
        }
    }
    Ok(format!("6 runs x 500 steps, max residual/|v| {worst:e}"))
}

fn convergence_to_projection() -> Outcome {
    let mut worst_v = 0.0f64;
    let mut worst_loss = 0.0f64;
    for i in 0..10u64 {
        let basis = random_basis(32, 8, 1000 + i);
        let mut r = rng(1100 + i);
        let t = gaussian_vector(32, &mut r);
        let q = QuadraticTarget::new(t.clone()).unwrap();
        let w0 = init_weights(&basis, 0).unwrap();
        let cfg = OptimizerConfig::gd(optimizer::suggested_gd_rate(&basis), 3000);
        let (w, _) = optimize(&basis, &w0, &q, &cfg).map_err(|e| e.to_string())?;
        let v = compose_embedding(&basis, &w).unwrap();
        let p = normal_projection(basis.matrix(), &t);
        ensure!(
            (project_columnspace(basis.matrix(), &t).unwrap() - &p).norm() <= 1e-10,
            "projectors disagree"
        );
        let dv = (&v - &p).norm();
        let expected = 0.5 * (&t - &p).norm_squared();
        let loss = q.eval(&v).unwrap().loss;
        let rel = (loss - expected).abs() / expected;
        worst_v = worst_v.max(dv);
        worst_loss = worst_loss.max(rel);
        ensure!(dv <= 1e-6, "instance {i}: |v* - Pt| = {dv:e}");
        ensure!(rel <= 1e-9, "instance {i}: loss relative error {rel:e}");
    }
    Ok(format!(
        "10 targets, max |v*-Pt| {worst_v:e}, max loss rel err {worst_loss:e}"
    ))
}

fn central_difference(obj: &dyn Objective, v: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(v.len(), |i, _| {
        let mut p = v.clone();
        p[i] += h;
        let mut m = v.clone();
        m[i] -= h;
        (obj.evaluate(&p, 0).unwrap().loss - obj.evaluate(&m, 0).unwrap().loss) / (2.0 * h)
    })
}

fn gradient_checks() -> Outcome {
    let mut r = rng(1200);
    let d = 24;
    let quad = QuadraticTarget::new(gaussian_vector(d, &mut r)).unwrap();
    let exact = LinearReconstruction::new(gaussian_matrix(12, d, &mut r), gaussian_vector(12, &mut r), 0.0, 0).unwrap();
    let noisy = LinearReconstruction::new(gaussian_matrix(30, d, &mut r), gaussian_vector(30, &mut r), 0.5, 9).unwrap();
    let mut worst = 0.0f64;
    for (name, obj) in [
        ("quadratic", &quad as &dyn Objective),
        ("linear", &exact),
        ("linear+noise", &noisy),
    ] {
        for k in 0..100 {
            let v = gaussian_vector(d, &mut r) * 3.0;
            let g = obj.evaluate(&v, 0).unwrap().grad;
            let fd = central_difference(obj, &v, 1e-5);
            let rel = (&g - &fd).amax() / g.amax().max(fd.amax());
            let lib = grad_check(obj, &v, 1e-5).map_err(|e| e.to_string())?;
            worst = worst.max(rel).max(lib);
            ensure!(rel <= 1e-6 && lib <= 1e-6, "{name} point {k}: {rel:e} / {lib:e}");
        }
    }
    Ok(format!("3 objectives x 100 points, max relative error {worst:e}"))
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn ablation_harness() -> Outcome {
    let dir = tempdir();
    gaussian_vocabulary(768, 1000, 1300)
        .unwrap()
        .save(dir.path().join("v.btex"), Format::Binary)
        .unwrap();
    let mut runs = Vec::new();
    let mut times = Vec::new();
    for run in ["a", "b"] {
        let start = Instant::now();
        btex(
            dir.path(),
            &[
                "ablate",
                "--vocab",
                "v.btex",
                "--init-word",
                "w0",
                "--m-list",
                "96,192,384,576,672",
                "--seed",
                "5",
                "--out-dir",
                run,
            ],
        )?;
        let elapsed = start.elapsed();
        ensure!(elapsed < Duration::from_secs(300), "run {run} took {elapsed:?}");
        times.push(elapsed);
        runs.push(read_dir_sorted(&dir.path().join(run)));
    }
    ensure!(runs[0] == runs[1], "two runs with the same seed differ");
    for metric in ["dot", "cosine", "l2"] {
        let name = format!("ablation_{metric}.csv");
        let (_, bytes) = runs[0]
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or(format!("missing {name}"))?;
        let text = String::from_utf8(bytes.clone()).map_err(|e| e.to_string())?;
        let lines: Vec<&str> = text.lines().collect();
        ensure!(lines.len() == 6, "{name}: {} lines", lines.len());
        ensure!(
            lines[0] == "M,metric,d1,steps_to_tolerance,final_residual",
            "{name}: header {:?}",
            lines[0]
        );
        for (line, m) in lines[1..].iter().zip([96, 192, 384, 576, 672]) {
            let f: Vec<&str> = line.split(',').collect();
            ensure!(f.len() == 5, "{name}: row {line:?}");
            ensure!(f[0] == m.to_string() && f[1] == metric, "{name}: row {line:?}");
            ensure!(f[2].parse::<usize>().is_ok_and(|d1| d1 <= m), "{name}: d1 in {line:?}");
            ensure!(
                f[3] == "NA" || f[3].parse::<usize>().is_ok(),
                "{name}: steps in {line:?}"
            );
            ensure!(
                f[4].parse::<f64>().is_ok_and(|x| x.is_finite() && x >= 0.0),
                "{name}: residual in {line:?}"
            );
        }
    }
    Ok(format!(
        "3 tables x 5 rows, identical across runs ({:.1?}, {:.1?})",
        times[0], times[1]
    ))
}

fn determinism() -> Outcome {
    let dir = tempdir();
    let root = dir.path();
    gaussian_vocabulary(16, 300, 1400)
        .unwrap()
        .save(root.join("v.csv"), Format::Csv)
        .unwrap();
    let mut r = rng(1401);
    let op = gaussian_matrix(10, 16, &mut r).transpose();
    let op_tokens: Vec<String> = (0..10).map(|i| format!("row{i}")).collect();
    Vocabulary::new(op_tokens, op.map(|x| x as f32))
        .unwrap()
        .save(root.join("op.csv"), Format::Csv)
        .unwrap();
    let obs = gaussian_vector(10, &mut r).map(|x| x as f32);
    Vocabulary::new(vec!["y".into()], DMatrix::from_column_slice(10, 1, obs.as_slice()))
        .unwrap()
        .save(root.join("obs.csv"), Format::Csv)
        .unwrap();
    fs::write(
        root.join("run.cfg"),
        "vocab = ../v.csv\ninit_word = w4\nmetric = cosine\nfixed_m = 8\nseed = 21\nsteps = 120\n\
         algorithm = adamw\nobjective = linear\noperator_file = ../op.csv\nobservation_file = ../obs.csv\nsigma = 0.3\n\
         m_list = 4,8\nterminator = w0\ntemplate = w1 w2 * w3\nn_max = 9\nembedding = embedding.csv\n\
         dim = 8\nsize = 40\n",
    )
    .unwrap();
    let commands = ["ingest", "select", "optimize", "verify", "ablate", "combine", "synth"];
    let mut files = 0;
    for run in ["a", "b"] {
        fs::create_dir(root.join(run)).unwrap();
    }
    for cmd in commands {
        let mut outputs = Vec::new();
        for run in ["a", "b"] {
            let cwd = root.join(run);
            let out = cwd.join(cmd);
            btex(
                &cwd,
                &[cmd, "--config", "../run.cfg", "--out-dir", out.to_str().unwrap()],
            )?;
            if cmd == "optimize" {
                fs::copy(out.join("embedding.csv"), cwd.join("embedding.csv")).unwrap();
            }
            outputs.push(read_dir_sorted(&out));
        }
        ensure!(!outputs[0].is_empty(), "{cmd} wrote nothing");
        ensure!(outputs[0] == outputs[1], "{cmd}: outputs differ between runs");
        files += outputs[0].len();
    }
    Ok(format!(
        "{} commands, {files} output files byte-identical",
        commands.len()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("single-step identity", step_identity),
        ("rank of B_V equals rank of V_M", gram_rank),
        ("vocabulary spanning", spanning),
        ("selection oracle equivalence", selection_equivalence),
        ("initialization exactness", initialization_exactness),
        ("in-span invariant", in_span_invariant),
        ("convergence to projection", convergence_to_projection),
        ("gradient checks", gradient_checks),
        ("ablation harness", ablation_harness),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
