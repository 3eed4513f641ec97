//! Acceptance checks. Each test prints one `[PASS]`/`[FAIL]` line.
//! Run with `cargo test --test acceptance -- --nocapture --test-threads 1`
//! for a readable log.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use mtl_affinity::affinity::{
    gradient_similarity, input_attribution_similarity, label_injection, rsa, ScoreKind,
};
use mtl_affinity::autodiff::{Reduction, Tape, Tensor};
use mtl_affinity::commands::cmd_reproduce_tables;
use mtl_affinity::eval::{cost_expression, cost_table, score_cost, CostModel, GainMatrix};
use mtl_affinity::experiment::{run_experiment, run_seed, DatasetSource, ExperimentConfig};
use mtl_affinity::grouping::{
    aggregate_performance, is_valid_grouping, optimize_grouping, CandidateFamily, Grouping,
    ModelCandidate, Violation,
};
use mtl_affinity::matrix::TaskMatrix;
use mtl_affinity::model::{task_loss, BackboneConfig, Network, StlModel};
use mtl_affinity::stats::{kendall_tau, spearman, KendallVariant};
use mtl_affinity::tasks::{generate_latent_factor_suite, LabelMap, Labels, SuiteConfig, TaskShape};
use mtl_affinity::train::{stl_test_loss, train_injected, train_mtl, train_stl, injected_test_loss, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CORRELATION_TOL: f64 = 0.005;
const DELTA_TOL_PERCENT: f64 = 0.05;
const GRAD_REL_TOL: f64 = 1e-5;
/// Denominator floor for the relative gradient error.
const GRAD_FLOOR: f64 = 1e-3;
const FD_STEP: f64 = 1e-5;
const SCORE_TOL: f64 = 1e-9;
const ORACLE_TOL: f64 = 1e-12;

fn verdict(name: &str, pass: bool, detail: &str) {
    println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

// ---------------------------------------------------------------- tables

fn published_level(level: u8) -> (usize, usize, usize, Vec<String>, Duration) {
    assert_eq!(mtl_affinity::reference::CORRELATION_TOL, CORRELATION_TOL);
    assert_eq!(mtl_affinity::reference::DELTA_TOL, DELTA_TOL_PERCENT);
    let t = Instant::now();
    let rep = cmd_reproduce_tables(KendallVariant::TauB, None).unwrap();
    let elapsed = t.elapsed();
    let cells: Vec<_> = rep.checks.iter().filter(|c| c.level == level).collect();
    let flagged = cells.iter().filter(|c| !c.pass && c.tie_flagged).count();
    let bad: Vec<String> = cells
        .iter()
        .filter(|c| c.is_failure())
        .map(|c| format!("{} {} got {} want {}", c.kind, c.row, c.got, c.expected))
        .collect();
    (cells.len(), bad.len(), flagged, bad, elapsed)
}

#[test]
fn published_level1_correlations() {
    let (n, bad, _, list, elapsed) = published_level(1);
    verdict(
        "published level-1 Pearson cells within 0.005",
        bad == 0 && elapsed < Duration::from_secs(1),
        &format!("{}/{n} cells match in {elapsed:?}; off: {}", n - bad, list.join("; ")),
    );
}

#[test]
fn published_level2_rankings() {
    let (n, bad, flagged, list, elapsed) = published_level(2);
    verdict(
        "published level-2 Kendall cells within 0.005 (tie-free)",
        bad == 0 && elapsed < Duration::from_secs(1),
        &format!(
            "{}/{n} cells match, {flagged} tie-affected cells flagged, in {elapsed:?}; off: {}",
            n - bad - flagged,
            list.join("; ")
        ),
    );
}

#[test]
fn published_level3_partners() {
    let (n, bad, _, list, elapsed) = published_level(3);
    let rep = cmd_reproduce_tables(KendallVariant::TauB, None).unwrap();
    let li = rep.report.scores.iter().find(|s| s.kind == ScoreKind::Li).unwrap();
    let li_correct = li.level3.iter().filter(|e| e.tied.contains(&e.true_best)).count();
    let gs = rep.report.scores.iter().find(|s| s.kind == ScoreKind::Gs).unwrap();
    let gs_keypts = &gs.level3[1];
    let spot = gs_keypts.selected == "Edges" && (gs_keypts.delta * 100.0 + 28.3).abs() <= DELTA_TOL_PERCENT;
    verdict(
        "published level-3 partner selections and deltas",
        bad == 0 && li_correct == 4 && spot && elapsed < Duration::from_secs(1),
        &format!(
            "{}/{n} cells match, LI best partner on {li_correct}/5 targets, GS/Keypts -> {} ({:.2}%); off: {}",
            n - bad,
            gs_keypts.selected,
            gs_keypts.delta * 100.0,
            list.join("; ")
        ),
    );
}

// ------------------------------------------------------------------ costs

/// Evaluates `a*b + c*d` style expressions over `n`, `c_s` and `C(n,2)`.
fn eval_expression(expr: &str, n: u64, c_s: u64) -> u64 {
    let expr = expr.replace("C(n,2)", &(n * (n - 1) / 2).to_string());
    expr.split('+')
        .map(|term| {
            term.split('*')
                .map(|f| match f.trim() {
                    "n" => n,
                    "c_s" => c_s,
                    lit => lit.parse().unwrap(),
                })
                .product::<u64>()
        })
        .sum()
}

#[test]
fn cost_model_expressions() {
    let expected = [
        (ScoreKind::Td, "0"),
        (ScoreKind::Ias, "n*c_s"),
        (ScoreKind::Rsa, "n*c_s"),
        (ScoreKind::Li, "n*c_s + 2*C(n,2)*c_s"),
        (ScoreKind::Gs, "C(n,2)*2*c_s"),
        (ScoreKind::Gt, "C(n,2)*2*c_s"),
    ];
    let c_s = 1_234_567;
    let mut checked = 0;
    let mut bad = vec![];
    for n in [2u64, 5, 10] {
        let cm = CostModel::new(n, c_s).unwrap();
        let table = cost_table(&ScoreKind::ALL, &cm);
        for (i, &(kind, expr)) in expected.iter().enumerate() {
            // independent count: STL models, injected models, MTL models
            let models = match kind {
                ScoreKind::Td => 0,
                ScoreKind::Ias | ScoreKind::Rsa => n,
                ScoreKind::Li => n + n * (n - 1),
                ScoreKind::Gs | ScoreKind::Gt => 2 * (n * (n - 1) / 2),
            };
            let ok = cost_expression(kind) == expr
                && eval_expression(expr, n, c_s) == models * c_s
                && score_cost(kind, &cm) == models * c_s
                && table[i].expression == expr
                && table[i].multiply_adds == models * c_s;
            checked += 1;
            if !ok {
                bad.push(format!("{kind} n={n}"));
            }
        }
    }
    verdict(
        "cost expressions for n in {2, 5, 10}",
        bad.is_empty(),
        &format!("{}/{checked} rows match; off: {}", checked - bad.len(), bad.join(", ")),
    );
}

// -------------------------------------------------------- gradient checks

fn random_case(rng: &mut ChaCha8Rng) -> (StlModel, Tensor, Labels, Reduction) {
    let depth = rng.random_range(1..=3usize);
    let input = rng.random_range(1..=32);
    let widths: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=32)).collect();
    let cfg = BackboneConfig::new(input, widths[..depth - 1].to_vec(), widths[depth - 1]).unwrap();
    let classify = rng.random_bool(0.5);
    let out = rng.random_range(if classify { 2 } else { 1 }..=6);
    let mut model = StlModel::init("t", &cfg, out, &mut ChaCha8Rng::seed_from_u64(rng.random()), &mut ChaCha8Rng::seed_from_u64(rng.random()));
    for p in model.params_mut() {
        for v in p.data_mut() {
            *v = rng.random_range(-0.8..0.8);
        }
    }
    let m = rng.random_range(1..=8);
    let x = Tensor::new(vec![m, input], (0..m * input).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
    let labels = if classify {
        Labels::Classes((0..m).map(|_| rng.random_range(0..out)).collect())
    } else {
        Labels::Values(Tensor::new(vec![m, out], (0..m * out).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
    };
    let red = if rng.random_bool(0.5) { Reduction::Mean } else { Reduction::Sum };
    (model, x, labels, red)
}

fn loss_of(model: &StlModel, x: &Tensor, y: &Labels, red: Reduction) -> f64 {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, false);
    let xv = tape.constant(x.clone());
    let (_, out) = model.forward(&mut tape, &vars, xv).unwrap();
    let l = task_loss(&mut tape, out, y, red).unwrap();
    tape.value(l).data()[0]
}

#[test]
fn gradient_checks_random_mlps() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst, mut entries, mut bad_cases) = (0.0f64, 0usize, 0usize);
    for _ in 0..100 {
        let (model, x, y, red) = random_case(&mut rng);
        let mut tape = Tape::new();
        let vars = model.bind(&mut tape, true);
        let xv = tape.leaf(x.clone().with_requires_grad(true));
        let (_, out) = model.forward(&mut tape, &vars, xv).unwrap();
        let l = task_loss(&mut tape, out, &y, red).unwrap();
        tape.backward(l).unwrap();

        let mut case_bad = false;
        let mut check = |analytic: f64, numeric: f64| {
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR);
            worst = worst.max(rel);
            entries += 1;
            case_bad |= rel > GRAD_REL_TOL;
        };
        for (pi, &v) in vars.iter().enumerate() {
            let g = tape.grad(v).unwrap().to_vec();
            for (k, &gk) in g.iter().enumerate() {
                let mut plus = model.clone();
                plus.params_mut()[pi].data_mut()[k] += FD_STEP;
                let mut minus = model.clone();
                minus.params_mut()[pi].data_mut()[k] -= FD_STEP;
                let fd = (loss_of(&plus, &x, &y, red) - loss_of(&minus, &x, &y, red)) / (2.0 * FD_STEP);
                check(gk, fd);
            }
        }
        let gx = tape.grad(xv).unwrap().to_vec();
        for (k, &gk) in gx.iter().enumerate() {
            let mut xp = x.clone();
            xp.data_mut()[k] += FD_STEP;
            let mut xm = x.clone();
            xm.data_mut()[k] -= FD_STEP;
            let fd = (loss_of(&model, &xp, &y, red) - loss_of(&model, &xm, &y, red)) / (2.0 * FD_STEP);
            check(gk, fd);
        }
        bad_cases += case_bad as usize;
    }
    let elapsed = start.elapsed();
    verdict(
        "gradient checks on 100 random MLPs",
        bad_cases == 0 && elapsed < Duration::from_secs(10),
        &format!("{bad_cases} failing cases, {entries} entries, worst relative error {worst:.2e}, {elapsed:?}"),
    );
}

// ------------------------------------------------------- score properties

#[test]
fn score_properties_over_random_runs() {
    let mut failures = vec![];
    let mut range_checks = 0;
    for run in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(run);
        let shape = if rng.random_bool(0.5) {
            TaskShape::Classification { classes: rng.random_range(2..5) }
        } else {
            TaskShape::Regression { outputs: rng.random_range(1..3) }
        };
        let mut ds = generate_latent_factor_suite(&SuiteConfig {
            seed: run,
            n_tasks: 2,
            d_latent: 6,
            d_in: 8,
            n_examples: 200,
            overlap: rng.random_range(0.0..=1.0),
            shapes: vec![shape],
            ..Default::default()
        })
        .unwrap();
        ds.derive_task("task0", LabelMap::Identity, "copy").unwrap();
        let tc = TrainConfig { epochs: 3, seed: run, batch_size: 16, ..Default::default() };
        let full = BackboneConfig::new(8, vec![16], 8).unwrap();
        let half = BackboneConfig::new(8, vec![10], 6).unwrap();
        let m0 = train_stl("task0", &ds, &half, &tc).unwrap().model;
        let m1 = train_stl("task1", &ds, &half, &tc).unwrap().model;
        let x = ds.inputs.select_rows(&ds.splits.test).unwrap();
        let y0 = ds.labels_of("task0").unwrap().select(&ds.splits.test).unwrap();
        let y1 = ds.labels_of("task1").unwrap().select(&ds.splits.test).unwrap();

        let mut expect = |what: &str, ok: bool| {
            if !ok {
                failures.push(format!("run {run}: {what}"));
            }
        };
        let ias_self = input_attribution_similarity(&m0, &m0, &x, (&y0, &y0)).unwrap().score;
        expect("IAS self", (ias_self - 1.0).abs() <= SCORE_TOL);
        let rsa_self = rsa(&m0, &m0, &x).unwrap();
        expect("RSA self", (rsa_self - 1.0).abs() <= SCORE_TOL);
        let dup = train_mtl(("task0", "copy"), &ds, &full, &tc).unwrap().trace;
        let gs_dup = gradient_similarity(&dup).unwrap();
        expect("GS duplicated", (gs_dup - 1.0).abs() <= SCORE_TOL);

        let pair = train_mtl(("task0", "task1"), &ds, &full, &tc).unwrap().trace;
        let mut values = vec![
            input_attribution_similarity(&m0, &m1, &x, (&y0, &y1)).unwrap().score,
            rsa(&m0, &m1, &x).unwrap(),
            gradient_similarity(&pair).unwrap(),
        ];
        values.extend(pair.epochs.iter().filter_map(|e| e.probe.map(|p| p.grad_cosine)));
        for v in values {
            range_checks += 1;
            expect("value in [-1, 1]", (-1.0..=1.0).contains(&v));
        }
    }
    verdict(
        "score properties over 50 random runs",
        failures.is_empty(),
        &format!("{range_checks} range checks; off: {}", failures.join("; ")),
    );
}

// ---------------------------------------------------------- stats oracles

fn oracle_kendall(x: &[f64], y: &[f64], variant: KendallVariant) -> Option<f64> {
    let n = x.len();
    let (mut s, mut nx, mut ny) = (0i64, 0i64, 0i64);
    for i in 0..n {
        for j in 0..n {
            if i < j {
                let a = (x[i] - x[j]).signum() as i64 * (x[i] != x[j]) as i64;
                let b = (y[i] - y[j]).signum() as i64 * (y[i] != y[j]) as i64;
                s += a * b;
                nx += a.abs();
                ny += b.abs();
            }
        }
    }
    if nx == 0 || ny == 0 {
        return None;
    }
    Some(match variant {
        KendallVariant::TauA => s as f64 / (n * (n - 1) / 2) as f64,
        KendallVariant::TauB => s as f64 / ((nx as f64) * (ny as f64)).sqrt(),
    })
}

fn oracle_spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

#[test]
fn statistics_match_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut compared, mut worst, mut bad) = (0, 0.0f64, vec![]);
    for case in 0..200 {
        let n = rng.random_range(3..=25);
        let (x, y): (Vec<f64>, Vec<f64>) = if case % 2 == 0 {
            // small integer range forces ties
            (0..n).map(|_| (rng.random_range(-3..=3) as f64, rng.random_range(-3..=3) as f64)).unzip()
        } else {
            let mut a: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let mut b = a.clone();
            a.shuffle_with(&mut rng);
            b.shuffle_with(&mut rng);
            (a, b)
        };
        for variant in [KendallVariant::TauA, KendallVariant::TauB] {
            match (kendall_tau(&x, &y, variant).ok(), oracle_kendall(&x, &y, variant)) {
                (Some(a), Some(b)) => {
                    compared += 1;
                    worst = worst.max((a - b).abs());
                    if (a - b).abs() > ORACLE_TOL {
                        bad.push(format!("case {case} {variant:?}"));
                    }
                }
                (None, None) => {}
                _ if variant == KendallVariant::TauA => {}
                _ => bad.push(format!("case {case} {variant:?} definedness")),
            }
        }
        match (spearman(&x, &y).ok(), oracle_spearman(&x, &y)) {
            (Some(a), Some(b)) => {
                compared += 1;
                worst = worst.max((a - b).abs());
                if (a - b).abs() > ORACLE_TOL {
                    bad.push(format!("case {case} spearman"));
                }
            }
            (None, None) => {}
            _ => bad.push(format!("case {case} spearman definedness")),
        }
    }
    verdict(
        "Kendall and Spearman against brute-force oracles on 200 lists",
        bad.is_empty(),
        &format!("{compared} comparisons, worst |diff| {worst:.1e}; off: {}", bad.join(", ")),
    );
}

trait ShuffleWith {
    fn shuffle_with(&mut self, rng: &mut ChaCha8Rng);
}

impl ShuffleWith for Vec<f64> {
    fn shuffle_with(&mut self, rng: &mut ChaCha8Rng) {
        for i in (1..self.len()).rev() {
            self.swap(i, rng.random_range(0..=i));
        }
    }
}

// --------------------------------------------------------------- grouping

/// Tries every assignment of a server to each task: itself (STL) or an MTL
/// model shared with one other task. Returns the best total, if any fits.
fn oracle_grouping(gain: &[Vec<f64>], budget_units: usize, allow_mtl: bool) -> Option<f64> {
    let n = gain.len();
    let mut best: Option<f64> = None;
    let mut choice = vec![0usize; n];
    loop {
        let valid = allow_mtl || choice.iter().enumerate().all(|(t, &s)| s == t);
        if valid {
            let mut models = BTreeSet::new();
            let mut value = 0.0;
            for (t, &s) in choice.iter().enumerate() {
                if s == t {
                    models.insert((t, t));
                } else {
                    models.insert((t.min(s), t.max(s)));
                    value += gain[s][t];
                }
            }
            let cost: usize = models.iter().map(|&(a, b)| if a == b { 1 } else { 2 }).sum();
            if cost <= budget_units && best.is_none_or(|b| value > b) {
                best = Some(value);
            }
        }
        // next assignment in base n
        let mut i = 0;
        while i < n {
            choice[i] += 1;
            if choice[i] < n {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
    }
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("t{i}")).collect()
}

#[test]
fn grouping_matches_exhaustive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut bad = vec![];
    for case in 0..50 {
        let n = if case % 2 == 0 { 3 } else { 4 };
        let tasks = names(n);
        let g: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { rng.random_range(-0.5..0.5) }).collect())
            .collect();
        let mut m = TaskMatrix::empty(tasks.clone()).unwrap();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m.set(&tasks[i], &tasks[j], g[i][j]).unwrap();
                }
            }
        }
        let gain = GainMatrix::from_matrix(m).unwrap();
        let units = rng.random_range(n - 1..=2 * n);
        let allow_mtl = case % 5 != 0;
        let family = CandidateFamily { stl_cost: 1.0, allow_mtl };
        let want = oracle_grouping(&g, units, allow_mtl);
        match (optimize_grouping(&gain, units as f64, family), want) {
            (Ok(sol), Some(w)) => {
                let valid = is_valid_grouping(&tasks, &sol.grouping).is_ok();
                let agg = aggregate_performance(&sol.grouping, &gain).unwrap();
                if !valid || (sol.total - w).abs() > 1e-12 || (agg - sol.total).abs() > 1e-12 {
                    bad.push(format!("case {case}: got {} want {w}", sol.total));
                }
            }
            (Err(mtl_affinity::Error::Infeasible { .. }), None) => {}
            (got, want) => bad.push(format!("case {case}: got {got:?} want {want:?}")),
        }
    }

    let t3: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
    let left = Grouping {
        models: vec![
            ModelCandidate::mtl(("a", "b"), &["a", "b"], 2.0),
            ModelCandidate::mtl(("b", "c"), &["c"], 2.0),
        ],
        budget: 4.0,
    };
    let right = Grouping {
        models: vec![
            ModelCandidate::mtl(("a", "b"), &["a", "b"], 2.0),
            ModelCandidate::mtl(("b", "c"), &["b", "c"], 2.0),
        ],
        budget: 4.0,
    };
    let fixtures = is_valid_grouping(&t3, &left).is_ok()
        && is_valid_grouping(&t3, &right)
            .is_err_and(|v| v.contains(&Violation::ServedMultiple { task: "b".into(), count: 2 }));
    verdict(
        "grouping against exhaustive oracle (50 matrices) and fixtures",
        bad.is_empty() && fixtures,
        &format!("{}/50 matrices match, fixtures {}; off: {}", 50 - bad.len(), if fixtures { "ok" } else { "wrong" }, bad.join("; ")),
    );
}

// ------------------------------------------------------------ end to end

fn sanity_config(overlap: f64, scores: Vec<ScoreKind>) -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSource::Generate(SuiteConfig {
            n_tasks: 3,
            n_examples: 2000,
            overlap,
            ..Default::default()
        }),
        train: TrainConfig { epochs: 20, ..Default::default() },
        scores,
        ..Default::default()
    }
}

fn mean_offdiag(r: &mtl_affinity::experiment::SeedResult, kind: ScoreKind) -> f64 {
    let s = r.scores.iter().find(|s| s.kind == kind).unwrap();
    let mut v = vec![];
    for p in &r.tasks {
        for t in &r.tasks {
            if p != t {
                v.push(s.get(p, t).unwrap().unwrap());
            }
        }
    }
    v.iter().sum::<f64>() / v.len() as f64
}

fn dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = vec![];
    for e in walk(dir) {
        let rel = e.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
        out.push((rel, std::fs::read(&e).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut v = vec![];
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            v.extend(walk(&p));
        } else {
            v.push(p);
        }
    }
    v
}

#[test]
fn end_to_end_synthetic_sanity() {
    const SEEDS: u64 = 5;
    let mut detail = vec![];

    // (i) overlap raises IAS and RSA
    let mut means = [[0.0; 2]; 2];
    for (o, overlap) in [0.0, 1.0].into_iter().enumerate() {
        let cfg = sanity_config(overlap, vec![ScoreKind::Ias, ScoreKind::Rsa]);
        for seed in 0..SEEDS {
            let r = run_seed(&cfg, seed).unwrap();
            means[o][0] += mean_offdiag(&r, ScoreKind::Ias) / SEEDS as f64;
            means[o][1] += mean_offdiag(&r, ScoreKind::Rsa) / SEEDS as f64;
        }
    }
    let overlap_ok = means[1][0] > means[0][0] && means[1][1] > means[0][1];
    detail.push(format!(
        "IAS {:.3} -> {:.3}, RSA {:.3} -> {:.3}",
        means[0][0], means[1][0], means[0][1], means[1][1]
    ));

    // (ii) a task's own label as injected input helps
    let mut li_min = f64::INFINITY;
    for seed in 0..SEEDS {
        let ds = generate_latent_factor_suite(&SuiteConfig { seed, n_tasks: 3, ..Default::default() }).unwrap();
        let tc = TrainConfig { epochs: 20, seed, ..Default::default() };
        let full = BackboneConfig::new(ds.input_dim(), vec![64], 32).unwrap();
        let half = mtl_affinity::model::half_capacity(&full, ds.task("task0").unwrap().output_dim).unwrap();
        let stl = train_stl("task0", &ds, &half, &tc).unwrap().model;
        let inj = train_injected("task0", "task0", &ds, &half, &tc).unwrap().model;
        let li = label_injection(stl_test_loss(&stl, &ds).unwrap(), injected_test_loss(&inj, &ds).unwrap()).unwrap();
        li_min = li_min.min(li);
    }
    let li_ok = li_min > 0.0;
    detail.push(format!("own-label LI min {li_min:.3}"));

    // (iii) full pipeline: time and bit-for-bit reproducibility
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = sanity_config(0.5, ScoreKind::ALL.into_iter().filter(|k| *k != ScoreKind::Td).collect());
    cfg.out_dir = tmp.path().join("a");
    let t = Instant::now();
    let first = run_experiment(&cfg).unwrap();
    let elapsed = t.elapsed();
    let hash_a = cfg.hash().unwrap();
    cfg.out_dir = tmp.path().join("b");
    let second = run_experiment(&cfg).unwrap();
    let strip = |files: Vec<(String, Vec<u8>)>| -> Vec<(String, Vec<u8>)> {
        files.into_iter().filter(|(n, _)| !n.ends_with("manifest.json")).collect()
    };
    let same_files = strip(dir_files(&tmp.path().join("a"))) == strip(dir_files(&tmp.path().join("b")));
    let same_values = first[0].gain == second[0].gain && first[0].scores == second[0].scores;
    let repro_ok = same_files && same_values && hash_a == cfg.hash().unwrap();
    let time_ok = elapsed < Duration::from_secs(300);
    detail.push(format!(
        "pipeline {elapsed:?}, reproducible {}",
        if repro_ok { "yes" } else { "no" }
    ));

    verdict(
        "end-to-end synthetic sanity over 5 seeds",
        overlap_ok && li_ok && repro_ok && time_ok,
        &detail.join("; "),
    );
}
