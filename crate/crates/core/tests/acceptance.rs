//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

mod common;

use std::fs;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{gaussian, quad_form, rel_err, row, small_problem};
use metricforge::classify::{evaluate_cv, train_linear_svm, SvmParams};
use metricforge::dataset::{
    generate_synthetic, generate_views, make_folds, planted_spectrum, select_task_subset, stratified_ids, FeatureKind,
    FeatureSet, LabelRow, LabelTable, SyntheticSpec, Task,
};
use metricforge::fusion::{feature_fusion, FusionOptions};
use metricforge::learners::{
    boost_triplets, itml_constraints, itml_pairs, lmnn_objective, mlkr_loss_and_grad, nca_objective_and_grad, one_hot,
    Learner, LearnerConfig,
};
use metricforge::linalg::sym_eigen_desc;
use metricforge::metric::MahalanobisMetric;
use metricforge::pca::{fit_pca_matrix, PcaOptions};
use metricforge::retrieval::{build_index, Hit};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// PSD within `1e-8·λ_max`, exact symmetry, `d(x,x) = 0` and projected
/// Euclidean distance equal to the Mahalanobis distance within `1e-8`.
fn check_metric(m: &MahalanobisMetric, x: &DMatrix<f64>) -> Result<(), String> {
    let mat = m.matrix();
    ensure(mat == mat.transpose(), || "matrix not symmetric".into())?;
    let (ev, _) = sym_eigen_desc(&mat);
    let lmax = ev.first().copied().unwrap_or(0.0).max(0.0);
    ensure(ev.iter().all(|&l| l >= -1e-8 * lmax), || format!("negative eigenvalue {:e}", ev.last().unwrap()))?;
    let proj = m.project(x).map_err(|e| e.to_string())?;
    for i in 0..x.nrows() {
        let xi = row(x, i);
        ensure(m.distance(&xi, &xi).unwrap() == 0.0, || format!("d(x{i}, x{i}) != 0"))?;
        for j in (i + 1)..x.nrows() {
            let xj = row(x, j);
            let d = m.distance(&xi, &xj).unwrap();
            ensure(d == m.distance(&xj, &xi).unwrap(), || "asymmetric distance".into())?;
            let p = (proj.row(i) - proj.row(j)).norm();
            ensure(rel_err(d, p) < 1e-8 || d.max(p) < 1e-12, || format!("({i}, {j}): {d} vs projected {p}"))?;
        }
    }
    Ok(())
}

fn criterion_1() -> Outcome {
    let cfg = LearnerConfig { max_iter: Some(50), ..Default::default() };
    for seed in 0..5 {
        let c = generate_synthetic(&SyntheticSpec {
            classes: 3,
            per_class: 20,
            ambient_dim: 10,
            intrinsic_dim: 2,
            seed,
            ..Default::default()
        })
        .map_err(|e| e.to_string())?;
        let x = c.features.matrix();
        for l in Learner::ALL {
            let r = l.fit(x, &c.classes, &cfg).map_err(|e| format!("{l}: {e}"))?;
            check_metric(&r.metric, x).map_err(|e| format!("dataset {seed}, {l}: {e}"))?;
        }
    }
    Ok("5 datasets x 5 learners valid".into())
}

fn fd_error(a: &DMatrix<f64>, g: &DMatrix<f64>, f: impl Fn(&DMatrix<f64>) -> f64) -> f64 {
    let h = 1e-5;
    let fd = DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| {
        let mut p = a.clone();
        let mut m = a.clone();
        p[(r, c)] += h;
        m[(r, c)] -= h;
        (f(&p) - f(&m)) / (2.0 * h)
    });
    (g - fd).norm() / g.norm().max(1e-12)
}

fn criterion_2() -> Outcome {
    let (x, y) = small_problem(3, 7, 5, 2);
    let t = one_hot(&y, 3);
    let mut worst = 0.0_f64;
    for point in 0..20 {
        let a = gaussian(3, 5, 500 + point) * 0.3;
        let (_, g) = nca_objective_and_grad(&a, &x, &y);
        worst = worst.max(fd_error(&a, &g, |a| nca_objective_and_grad(a, &x, &y).0));
        let b = gaussian(5, 5, 600 + point) * 0.3;
        let (_, g) = mlkr_loss_and_grad(&b, &x, &t).ok_or("MLKR kernel underflow")?;
        worst = worst.max(fd_error(&b, &g, |b| mlkr_loss_and_grad(b, &x, &t).unwrap().0));
    }
    ensure(worst < 1e-4, || format!("worst relative gradient error {worst:e}"))?;
    Ok(format!("worst relative error {worst:.1e} over 40 points"))
}

fn brute_targets(x: &DMatrix<f64>, y: &[usize], k: usize) -> Vec<Vec<usize>> {
    let eye = DMatrix::identity(x.ncols(), x.ncols());
    (0..x.nrows())
        .map(|i| {
            let mut same: Vec<(f64, usize)> = (0..x.nrows())
                .filter(|&j| j != i && y[j] == y[i])
                .map(|j| (quad_form(&eye, &row(x, i), &row(x, j)), j))
                .collect();
            same.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            same.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

fn svm_dual_oracle(x: &DMatrix<f64>, y: &[f64], c: f64) -> f64 {
    let n = x.nrows();
    let aug = DMatrix::from_fn(n, x.ncols() + 1, |i, j| if j < x.ncols() { x[(i, j)] } else { 1.0 });
    let q = DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * aug.row(i).dot(&aug.row(j)));
    let l = common::jacobi_eigenvalues(&q)[0];
    let (mut alpha, mut z, mut t) = (vec![0.0; n], vec![0.0; n], 1.0_f64);
    for _ in 0..200_000 {
        let next: Vec<f64> = (0..n)
            .map(|i| (z[i] + (1.0 - (0..n).map(|j| q[(i, j)] * z[j]).sum::<f64>()) / l).clamp(0.0, c))
            .collect();
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        z = (0..n).map(|i| next[i] + (t - 1.0) / t_next * (next[i] - alpha[i])).collect();
        alpha = next;
        t = t_next;
    }
    let w: Vec<f64> = (0..aug.ncols()).map(|j| (0..n).map(|i| alpha[i] * y[i] * aug[(i, j)]).sum()).collect();
    let hinge: f64 = (0..n)
        .map(|i| (1.0 - y[i] * (0..aug.ncols()).map(|j| w[j] * aug[(i, j)]).sum::<f64>()).max(0.0))
        .sum();
    0.5 * w.iter().map(|v| v * v).sum::<f64>() + c * hinge
}

fn criterion_3() -> Outcome {
    let (x, y) = small_problem(3, 10, 4, 3);
    let n = x.nrows();

    let b = gaussian(4, 4, 31) * 0.5;
    let m = b.transpose() * &b;
    let targets = brute_targets(&x, &y, 3);
    let (mut pull, mut push) = (0.0, 0.0);
    for i in 0..n {
        for &j in &targets[i] {
            let dij = quad_form(&m, &row(&x, i), &row(&x, j));
            pull += dij;
            for l in (0..n).filter(|&l| y[l] != y[i]) {
                push += (1.0 + dij - quad_form(&m, &row(&x, i), &row(&x, l))).max(0.0);
            }
        }
    }
    let lmnn = lmnn_objective(&m, &x, &y, 3, 0.5).map_err(|e| e.to_string())?;
    let want = 0.5 * pull + 0.5 * push;
    ensure(rel_err(lmnn, want) < 1e-6, || format!("LMNN objective {lmnn} vs {want}"))?;

    let a = gaussian(3, 4, 32) * 0.4;
    let ma = a.transpose() * &a;
    let mut nca_want = 0.0;
    for i in 0..n {
        let (mut z, mut same) = (0.0, 0.0);
        for j in (0..n).filter(|&j| j != i) {
            let e = (-quad_form(&ma, &row(&x, i), &row(&x, j))).exp();
            z += e;
            if y[j] == y[i] {
                same += e;
            }
        }
        nca_want += same / z;
    }
    let nca = nca_objective_and_grad(&a, &x, &y).0;
    ensure(rel_err(nca, nca_want) < 1e-6, || format!("NCA objective {nca} vs {nca_want}"))?;

    let cfg = LearnerConfig { k_neighbors: 2, max_iter: Some(20), ..Default::default() };
    let boost = Learner::Boost.fit(&x, &y, &cfg).map_err(|e| e.to_string())?;
    let mb = boost.metric.matrix();
    let triplets = boost_triplets(&x, &y, 2).map_err(|e| e.to_string())?;
    let margins: Vec<f64> = triplets
        .iter()
        .map(|&(i, j, l)| quad_form(&mb, &row(&x, i), &row(&x, l)) - quad_form(&mb, &row(&x, i), &row(&x, j)))
        .collect();
    let recount = margins.iter().filter(|&&r| r <= 0.0).count();
    let boundary = margins.iter().filter(|r| r.abs() <= 1e-9 * mb.norm()).count();
    let reported = *boost.violations.last().unwrap();
    ensure(recount.abs_diff(reported) <= boundary, || format!("Boost violations {reported} vs recount {recount}"))?;

    let constraints = itml_constraints(&x, &y, &LearnerConfig { pair_cap: Some(40), ..Default::default() })
        .map_err(|e| e.to_string())?;
    let run = itml_pairs(&x, &constraints, 2.0, 20.0, 1.0, 5000, 1e-10).map_err(|e| e.to_string())?;
    for (c, &xi) in constraints.iter().zip(&run.slack_bounds) {
        let d2 = quad_form(&run.matrix, &row(&x, c.i), &row(&x, c.j));
        let ok = if c.similar { d2 <= xi * (1.0 + 1e-3) } else { d2 >= xi * (1.0 - 1e-3) };
        ensure(ok, || format!("ITML constraint ({}, {}) unsatisfied: {d2} vs {xi}", c.i, c.j))?;
    }

    let xs = gaussian(30, 3, 33);
    let ys: Vec<f64> = (0..30)
        .map(|i| if xs[(i, 0)] + 0.8 * ((i * 7 % 5) as f64 - 2.0) > 0.0 { 1.0 } else { -1.0 })
        .collect();
    let svm = train_linear_svm(&xs, &ys, &SvmParams { c: 1.0, eps: 1e-8, max_epochs: 100_000, seed: 0 })
        .map_err(|e| e.to_string())?;
    let (got, want) = (svm.primal_objective(&xs, &ys), svm_dual_oracle(&xs, &ys, 1.0));
    ensure(rel_err(got, want) < 1e-3, || format!("SVM primal {got} vs oracle {want}"))?;
    Ok("LMNN, NCA, Boost, ITML and SVM agree with brute force".into())
}

fn criterion_4() -> Outcome {
    let kinds = [FeatureKind::Gist, FeatureKind::Classemes, FeatureKind::Cnn];
    let mut lines = Vec::new();
    let mut all_ok = true;
    for seed in 0..3 {
        let spec = SyntheticSpec {
            classes: 5,
            per_class: 60,
            ambient_dim: 60,
            intrinsic_dim: 3,
            separation: 3.0,
            noise: 1.0,
            nuisance_scale: 4.0,
            seed,
        };
        let (views, labels, _) = generate_views(&spec, &kinds).map_err(|e| e.to_string())?;
        let subset = select_task_subset(&labels, Task::Style, 1).map_err(|e| e.to_string())?;
        let held = stratified_ids(&subset, 150, seed).map_err(|e| e.to_string())?;
        let rest = subset.without(&held);
        let plan = make_folds(&rest, 3, seed).map_err(|e| e.to_string())?;
        let yh: Vec<usize> = held.iter().map(|id| subset.class_index[id]).collect();
        let cfg = LearnerConfig { seed, ..Default::default() };
        let params = SvmParams::default();
        let mut base = 0.0;
        let mut learned = [0.0; 5];
        for v in &views {
            base += evaluate_cv(v, &rest, &plan, None, &params).map_err(|e| e.to_string())?.report.mean / 3.0;
            let xh = v.rows_for(&held).map_err(|e| e.to_string())?;
            for (li, l) in Learner::ALL.iter().enumerate() {
                let r = l.fit(&xh, &yh, &cfg).map_err(|e| format!("{l}: {e}"))?;
                learned[li] += evaluate_cv(v, &rest, &plan, Some(&r.metric), &params)
                    .map_err(|e| e.to_string())?
                    .report
                    .mean
                    / 3.0;
            }
        }
        let passing = learned.iter().filter(|&&a| a >= base + 0.05).count();
        all_ok &= passing >= 4;
        let deltas: Vec<String> = Learner::ALL
            .iter()
            .zip(&learned)
            .map(|(l, a)| format!("{} {:+.1}", l.as_str(), 100.0 * (a - base)))
            .collect();
        lines.push(format!("seed {seed}: baseline {:.1}%, {}/5 learners +5pp [{}]", 100.0 * base, passing, deltas.join(", ")));
    }
    if all_ok {
        Ok(lines.join("; "))
    } else {
        Err(lines.join("; "))
    }
}

fn criterion_5() -> Outcome {
    let spec = SyntheticSpec { classes: 4, per_class: 30, ambient_dim: 110, intrinsic_dim: 3, seed: 5, ..Default::default() };
    let kinds = [FeatureKind::Gist, FeatureKind::Classemes, FeatureKind::Picodes, FeatureKind::Cnn];
    let (views, _, _) = generate_views(&spec, &kinds).map_err(|e| e.to_string())?;
    let y: Vec<usize> = (0..120).map(|i| i / 30).collect();
    let cfg = LearnerConfig { max_iter: Some(5), ..Default::default() };
    let mut blocks = Vec::new();
    for v in &views {
        let m = Learner::Lmnn.fit(v.matrix(), &y, &cfg).map_err(|e| e.to_string())?.metric;
        ensure(m.rank() == 100, || format!("LMNN rank {}", m.rank()))?;
        blocks.push((m.project_set(v).map_err(|e| e.to_string())?, "lmnn".to_string()));
    }
    let fused = feature_fusion(&blocks, FusionOptions::default()).map_err(|e| e.to_string())?;
    ensure(fused.dim() == 400, || format!("{} fused columns", fused.dim()))?;
    let m = fused.features.matrix();
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in 0..m.nrows() {
            let total = (m.row(i) - m.row(j)).norm_squared();
            let parts: f64 = fused.block_sq_distances(i, j).iter().sum();
            worst = worst.max((total - parts).abs() / total.max(1e-300));
        }
    }
    ensure(worst <= 1e-10, || format!("block-sum deviation {worst:e}"))?;
    Ok(format!("400 columns, worst block-sum deviation {worst:.1e}"))
}

fn criterion_6() -> Outcome {
    let mut spectrum: Vec<f64> = (0..5).map(|i| 0.95 * (5 - i) as f64 / 15.0).collect();
    spectrum.extend((0..15).map(|i| 0.05 * (15 - i) as f64 / 120.0));
    let x = planted_spectrum(500, &spectrum, 6).map_err(|e| e.to_string())?;
    let model = fit_pca_matrix(&x, 20, PcaOptions::default()).map_err(|e| e.to_string())?;
    let f = model.explained_fraction(5).map_err(|e| e.to_string())?;
    ensure((f - 0.95).abs() <= 0.005, || format!("explained fraction {f}"))?;
    Ok(format!("explained fraction at 5 = {f:.6}"))
}

fn criterion_7() -> Outcome {
    let n = 1000;
    let x = gaussian(n, 6, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ids: Vec<String> = (0..n).map(|i| format!("p{i:04}")).collect();
    ids.shuffle(&mut rng);
    let styles = ["a", "b", "c", "d", "e"];
    let rows = ids
        .iter()
        .enumerate()
        .map(|(i, id)| LabelRow { id: id.clone(), style: Some(styles[(i * 7) % 5].to_string()), genre: None, artist: None })
        .collect();
    let labels = LabelTable::new(rows).map_err(|e| e.to_string())?;
    let index = build_index(x.clone(), ids.clone(), Some(labels.clone())).map_err(|e| e.to_string())?;
    let oracle = |q: usize, exclude: bool, k: usize| -> Vec<Hit> {
        let own = labels.label(&ids[q], Task::Style).unwrap();
        let mut all: Vec<Hit> = (0..n)
            .filter(|&r| !exclude || (r != q && labels.label(&ids[r], Task::Style) != Some(own)))
            .map(|r| Hit { id: ids[r].clone(), distance: (x.row(r) - x.row(q)).norm() })
            .collect();
        all.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.id.cmp(&b.id)));
        all.truncate(k);
        all
    };
    let same = |a: &[Hit], b: &[Hit]| {
        a.len() == b.len()
            && a.iter().zip(b).all(|(p, q)| p.id == q.id && (p.distance - q.distance).abs() <= 1e-12 * q.distance.max(1.0))
    };
    for q in (0..n).step_by(37) {
        let own = labels.label(&ids[q], Task::Style).unwrap();
        for k in [1, 5, 20] {
            let got = index.nearest(&row(&x, q), k).map_err(|e| e.to_string())?;
            ensure(same(&got, &oracle(q, false, k)), || format!("nearest mismatch: query {q}, k {k}"))?;
            let got = index.nearest_excluding(&ids[q], Task::Style, k).map_err(|e| e.to_string())?;
            ensure(same(&got, &oracle(q, true, k)), || format!("exclusion mismatch: query {q}, k {k}"))?;
            ensure(got.iter().all(|h| labels.label(&h.id, Task::Style) != Some(own)), || "same-label hit".into())?;
        }
    }
    Ok("28 queries x k in {1, 5, 20} match the exhaustive oracle".into())
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    let bin = env!("CARGO_BIN_EXE_metricforge");
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(bin).args(args).env_remove("METRICFORGE_SEED").output().map_err(|e| e.to_string())?;
        ensure(out.status.success(), || String::from_utf8_lossy(&out.stderr).trim().to_string())
    };
    let d = dir.to_str().unwrap();
    run(&["synth", "--out-dir", d, "--classes", "4", "--per-class", "25", "--dim", "20", "--seed", "8"])?;
    fs::write(
        dir.join("spec.kv"),
        "task = style\ntask = genre\nfeature = gist:gist.bin\nfeature = cnn:cnn.bin\nlabels = labels.csv\n\
         metric = baseline\nmetric = boost\nmetric = itml\nmetric = lmnn\nmetric = mlkr\nmetric = nca\n\
         metric_sample = 40\nlearner.max_iter = 20\nseed = 8\n",
    )
    .map_err(|e| e.to_string())?;
    let spec = dir.join("spec.kv");
    let spec = spec.to_str().unwrap();
    let (a, b) = (dir.join("a"), dir.join("b"));
    run(&["evaluate", "--spec", spec, "--out", a.to_str().unwrap(), "--jobs", "4"])?;
    run(&["evaluate", "--spec", spec, "--out", b.to_str().unwrap(), "--jobs", "1"])?;
    let mut names: Vec<_> = fs::read_dir(&a).map_err(|e| e.to_string())?.map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for name in &names {
        let (x, y) = (fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).map_err(|e| e.to_string())?);
        ensure(x == y, || format!("{} differs between runs", name.to_string_lossy()))?;
    }
    Ok(format!("{} CSVs byte-identical across reruns with different --jobs", names.len()))
}

fn criterion_9() -> Outcome {
    let c = generate_synthetic(&SyntheticSpec {
        classes: 6,
        per_class: 25,
        ambient_dim: 512,
        intrinsic_dim: 3,
        seed: 9,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let set: &FeatureSet = &c.features;
    let cfg = LearnerConfig { max_iter: Some(2), pair_cap: Some(100), ..Default::default() };
    let mut dims = Vec::new();
    for l in Learner::ALL {
        let m = l.fit(set.matrix(), &c.classes, &cfg).map_err(|e| format!("{l}: {e}"))?.metric;
        let want = match l {
            Learner::Nca => 6,
            Learner::Lmnn => 100,
            _ => 512,
        };
        ensure(m.rank() == want && m.dim() == 512, || format!("{l}: rank {} (want {want})", m.rank()))?;
        dims.push(format!("{} {}", l.display_name(), m.rank()));
    }
    Ok(dims.join(", "))
}

fn main() {
    let criteria: [(u32, fn() -> Outcome, Duration); 9] = [
        (1, criterion_1, Duration::from_secs(120)),
        (2, criterion_2, Duration::from_secs(60)),
        (3, criterion_3, Duration::from_secs(120)),
        (4, criterion_4, Duration::from_secs(600)),
        (5, criterion_5, Duration::from_secs(600)),
        (6, criterion_6, Duration::from_secs(600)),
        (7, criterion_7, Duration::from_secs(600)),
        (8, criterion_8, Duration::from_secs(600)),
        (9, criterion_9, Duration::from_secs(600)),
    ];
    let mut failed = 0;
    for (n, f, budget) in criteria {
        let start = Instant::now();
        let outcome = f();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if took > budget => Err(format!("{msg}; over the {}s budget", budget.as_secs())),
            other => other,
        };
        match outcome {
            Ok(msg) => println!("criterion {n}: PASS ({:.1}s) {msg}", took.as_secs_f64()),
            Err(msg) => {
                failed += 1;
                println!("criterion {n}: FAIL ({:.1}s) {msg}", took.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
