//! Acceptance run: one status line per criterion.
//!
//! Seeded criteria run the seeds {1, 2, 3, 7, 11} and pass on at least
//! three of them. Criteria that need data the repository does not ship are
//! reported as UNATTAINABLE together with the checks that can be run on the
//! synthetic fallback; they never count as passes.

mod common;

use std::time::Instant;

use common::{positive_columns, proportional, random_expr, rng, variance, SEEDS};
use cosr_core::cases::{builtin_case, case_data, CaseSpec, DataMode};
use cosr_core::chain::{clean_front, pi_groups, run_chain, run_invariance, Stage};
use cosr_core::dataset::Dataset;
use cosr_core::dims::Rational;
use cosr_core::engine::{
    bfgs_minimize, fd_gradient, optimize_constants, optimize_constants_masked, pair_search, search, search_with, select_candidate, with_weights,
    EngineConfig, ParetoFront,
};
use cosr_core::expr::{monomial_equivalent, parse_template, parse_with_names, report_form, simplify, BinaryOp, Expr};
use cosr_core::losses::{
    implicit_score, loss, loss_implicit, transformation_fit, DegreePolicy, HierarchicalSpec, ImplicitSpec, LossSpec,
    TransformSpec,
};
use cosr_core::polyfit::fit_poly;
use num_traits::{One, Zero};
use rand::Rng;

enum Status {
    Pass(String),
    Fail(String),
    Unattainable(String),
}

fn seeded(hits: usize, detail: String) -> Status {
    let line = format!("{hits}/{} seeds; {detail}", SEEDS.len());
    if hits >= 3 { Status::Pass(line) } else { Status::Fail(line) }
}

fn case(id: &str) -> (CaseSpec, Dataset, DataMode) {
    let spec = builtin_case(id).expect("builtin case");
    let d = case_data(&spec, None).expect("case data");
    (spec, d.dataset, d.mode)
}

fn invariance_frame(spec: &CaseSpec, data: &Dataset, seed: u64) -> Dataset {
    let config = spec.chain_config(seed);
    let Some(Stage::Invariance(st)) = config.plan.stages.first() else { panic!("no invariance stage") };
    run_invariance(data, st, &config, seed).expect("invariance").frame
}

fn parse(text: &str, names: &[String]) -> Expr {
    parse_with_names(text, names).unwrap_or_else(|e| panic!("{text}: {e}"))
}

fn col(data: &Dataset, name: &str) -> Vec<f64> {
    data.column_by_name(name).unwrap_or_else(|| panic!("no column {name}")).to_vec()
}

// Exact rank by fraction-free elimination, independent of the library's.
fn exact_rank(rows: &[Vec<Rational>]) -> usize {
    let mut m: Vec<Vec<Rational>> = rows.to_vec();
    let ncols = m.first().map_or(0, Vec::len);
    let mut r = 0;
    for c in 0..ncols {
        let Some(p) = (r..m.len()).find(|&i| !m[i][c].is_zero()) else { continue };
        m.swap(r, p);
        for i in 0..m.len() {
            if i != r && !m[i][c].is_zero() {
                let f = m[i][c].clone() / m[r][c].clone();
                for j in 0..ncols {
                    let d = f.clone() * m[r][j].clone();
                    m[i][j] -= d;
                }
            }
        }
        r += 1;
    }
    r
}

fn int_exponents(e: &Expr, n: usize) -> Option<Vec<Rational>> {
    fn walk(e: &Expr, n: usize) -> Option<Vec<Rational>> {
        match e {
            Expr::Var(i) => {
                let mut v = vec![Rational::zero(); n];
                v[*i] = Rational::one();
                Some(v)
            }
            Expr::Binary(BinaryOp::Mul, a, b) => Some(walk(a, n)?.into_iter().zip(walk(b, n)?).map(|(x, y)| x + y).collect()),
            Expr::Binary(BinaryOp::Div, a, b) => Some(walk(a, n)?.into_iter().zip(walk(b, n)?).map(|(x, y)| x - y).collect()),
            Expr::Binary(BinaryOp::Pow, a, b) => {
                let k = b.constant_value()?;
                (k.fract() == 0.0).then_some(())?;
                let k = Rational::from_integer((k as i64).into());
                Some(walk(a, n)?.into_iter().map(|x| x * k.clone()).collect())
            }
            _ => None,
        }
    }
    walk(e, n)
}

fn criterion_1() -> Status {
    let cases: [(&str, usize); 6] = [
        ("gravitation_solar", 2),
        ("rayleigh_benard", 3),
        ("pipe_flow", 2),
        ("keyhole", 3),
        ("aero_sharp_cone", 3),
        ("aero_blunt_body", 3),
    ];
    let refs: [(&str, &[&str]); 3] = [
        ("rayleigh_benard", &["alpha*dT", "nu*alpha*dT/kappa", "g*h^3/nu^2"]),
        ("pipe_flow", &["V*d/nu", "eps/d"]),
        ("aero_sharp_cone", &["alpha", "V/c", "rho*V*d/mu"]),
    ];
    let t0 = Instant::now();
    let mut problems = Vec::new();
    let mut counts = Vec::new();
    for (id, want) in cases {
        let (spec, data, _) = case(id);
        let (groups, _) = pi_groups(&data, &spec.reference_groups, 3).expect("pi groups");
        counts.push(groups.len());
        if groups.len() != want {
            problems.push(format!("{id}: {} groups, want {want}", groups.len()));
        }
        let dims: Vec<Vec<Rational>> = spec.var_dims().unwrap().iter().map(|d| d.exponents().to_vec()).collect();
        let names = spec.names();
        for g in &groups {
            let exps: Vec<Rational> =
                names.iter().map(|n| g.group.exponent_of(n).cloned().unwrap_or_else(Rational::zero)).collect();
            let dimension: Vec<Rational> = (0..dims[0].len())
                .map(|k| exps.iter().zip(&dims).fold(Rational::zero(), |acc, (e, d)| acc + e.clone() * d[k].clone()))
                .collect();
            if dimension.iter().any(|x| !x.is_zero()) {
                problems.push(format!("{id}: group {} is not dimensionless", g.name));
            }
        }
        let Some((_, reference)) = refs.iter().find(|(r, _)| *r == id) else { continue };
        let target = spec.target_name().to_string();
        let inputs: Vec<String> = names.iter().filter(|n| **n != target).cloned().collect();
        let rows = |texts: Vec<String>| -> Vec<Vec<Rational>> {
            texts.iter().map(|t| int_exponents(&parse(t, &inputs), inputs.len()).expect("monomial")).collect()
        };
        let ours = rows(groups.iter().map(|g| g.group.to_infix()).collect());
        let theirs = rows(reference.iter().map(|s| s.to_string()).collect());
        let both: Vec<Vec<Rational>> = ours.iter().chain(&theirs).cloned().collect();
        let (a, b, c) = (exact_rank(&ours), exact_rank(&theirs), exact_rank(&both));
        if !(a == b && b == c && a == ours.len()) {
            problems.push(format!("{id}: span ranks {a}/{b}/{c}"));
        }
    }
    let detail = format!("group counts {counts:?} in {:.2?}", t0.elapsed());
    if problems.is_empty() { Status::Pass(detail) } else { Status::Fail(format!("{detail}; {}", problems.join("; "))) }
}

fn implicit_setup(data: &Dataset, vars: &[&str], seed: u64) -> (Dataset, ImplicitSpec) {
    let idx: Vec<usize> = vars.iter().map(|v| data.index_of(v).unwrap()).collect();
    let mut sub = data.select_columns(&idx);
    sub.set_target(None);
    let spec = ImplicitSpec { var_dims: sub.all_dims(), seed, ..ImplicitSpec::default() };
    (sub, spec)
}

fn implicit_base(e: &Expr, sub: &Dataset) -> f64 {
    let v = e.evaluate(sub.columns()).values;
    let logs: Vec<f64> = v.iter().map(|x| x.abs().ln()).collect();
    variance(&logs)
}

fn criterion_2() -> Status {
    let (spec, data, _) = case("gravitation_solar");
    let names = common::names(&["m", "R", "T"]);
    let kepler = parse("T^2/R^3", &names);
    let mut hits = 0;
    let mut notes = Vec::new();
    for seed in SEEDS {
        let t0 = Instant::now();
        let run = run_chain(&data, &spec.chain_config(seed), Some(&spec.id)).expect("chain");
        let (sub, _) = implicit_setup(&data, &["m", "R", "T"], seed);
        let front = &run.fronts.iter().find(|(n, ..)| n == "implicit").expect("implicit front").1;
        let hit = front.entries().iter().find(|e| {
            if !monomial_equivalent(&e.expr, &kepler) || implicit_base(&e.expr, &sub) >= 1e-4 {
                return false;
            }
            let Some(rf) = report_form(&e.expr) else { return false };
            let v = rf.evaluate(sub.columns()).values;
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            (mean - 1.0).abs() < 0.01 || (1.0 / mean - 1.0).abs() < 0.01
        });
        hits += hit.is_some() as usize;
        notes.push(format!("s{seed} {:.0?}", t0.elapsed()));
    }

    // Oracle fallback: the injected law survives and is knee-selected.
    let (sub, ispec) = implicit_setup(&data, &["m", "R", "T"], 1);
    let config = spec.chain_config(1);
    let Some(Stage::Invariance(st)) = config.plan.stages.first() else { unreachable!() };
    let cfg = EngineConfig { seed: 1, ..st.engine.apply(&config.engine) };
    let lspec = LossSpec::Implicit(ispec.clone());
    let out = search_with(&sub, &lspec, &cfg, &[kepler.clone()], None).expect("search");
    let injected = loss(&kepler, &sub, &with_weights(&lspec, out.weights.clone()));
    let retained = out
        .front
        .entries()
        .iter()
        .any(|e| e.complexity <= kepler.complexity() && e.loss <= injected * (1.0 + 1e-12));
    let clean = clean_front(&out.front, &sub, &ispec);
    let knee = select_candidate(&clean).is_some_and(|(e, _)| monomial_equivalent(&e.expr, &kepler));
    let oracle = retained && knee;
    let detail = format!("oracle retained={retained} knee={knee}; {}", notes.join(" "));
    match seeded(hits, detail) {
        Status::Pass(d) if oracle => Status::Pass(d),
        Status::Pass(d) | Status::Fail(d) => Status::Fail(d),
        s => s,
    }
}

fn mu_proportional(branch: &Expr, names: &[String], seed: u64) -> bool {
    let mut r = rng(seed);
    let n = 1000;
    let m_col: Vec<f64> = (0..n).map(|_| 10f64.powf(r.random_range(-3.0..1.0))).collect();
    let big: Vec<f64> = (0..n).map(|_| 10f64.powf(r.random_range(-3.0..1.0))).collect();
    let cols: Vec<Vec<f64>> = names
        .iter()
        .map(|nm| match nm.as_str() {
            "M" => big.clone(),
            "m" => m_col.clone(),
            _ => vec![1.0; n],
        })
        .collect();
    let got = branch.evaluate(&cols).values;
    let want: Vec<f64> = big.iter().zip(&m_col).map(|(a, b)| a * b / (a + b)).collect();
    proportional(&got, &want, 1e-9)
}

fn criteria_3_4() -> (Status, Status) {
    let (spec, data, _) = case("gravitation_binary");
    let (sub, ispec) = implicit_setup(&data, &["M", "m", "R", "T"], 1);
    let sub_names = sub.names().to_vec();
    let general = parse("(M+m)*T^2/R^3", &sub_names);
    let kepler = parse("T^2/R^3", &sub_names);
    let (lg, lk) = (loss_implicit(&general, &sub, &ispec), loss_implicit(&kepler, &sub, &ispec));
    let ordered = lg < lk;

    let (mut h3, mut h4) = (0, 0);
    let mut notes = Vec::new();
    for seed in SEEDS {
        let t0 = Instant::now();
        let run = run_chain(&data, &spec.chain_config(seed), Some(&spec.id)).expect("chain");
        let implicit = &run.fronts.iter().find(|(n, ..)| n == "implicit").expect("implicit front").1;
        h3 += implicit.entries().iter().any(|e| monomial_equivalent(&e.expr, &general)) as usize;
        let (_, layer, names) = run.fronts.iter().find(|(n, ..)| n == "layer1").expect("layer front");
        h4 += layer.entries().iter().any(|e| match &e.expr {
            Expr::Pair(a, _) => mu_proportional(a, names, seed),
            _ => false,
        }) as usize;
        notes.push(format!("s{seed} {:.0?}", t0.elapsed()));
    }

    let mut worst: f64 = 0.0;
    for id in ["gravitation_solar", "gravitation_binary"] {
        let (spec, data, _) = case(id);
        let law = spec.oracle("reduced_mass_force").unwrap_or_else(|| parse("M*m/(M+m)*39.47841760435743*R/T^2", data.names()));
        let v = law.evaluate(data.columns()).values;
        for (a, b) in v.iter().zip(data.target_values().unwrap()) {
            worst = worst.max((a / b - 1.0).abs());
        }
    }
    let c3 = match seeded(h3, format!("loss (M+m)T^2/R^3 = {lg:.3e} < T^2/R^3 = {lk:.3e}: {ordered}; {}", notes.join(" "))) {
        Status::Pass(d) if ordered => Status::Pass(d),
        Status::Pass(d) | Status::Fail(d) => Status::Fail(d),
        s => s,
    };
    let exact = worst <= 1e-12;
    let c4 = match seeded(h4, format!("reduced-mass force max relative error {worst:.1e}")) {
        Status::Pass(d) if exact => Status::Pass(d),
        Status::Pass(d) | Status::Fail(d) => Status::Fail(d),
        s => s,
    };
    (c3, c4)
}

fn criterion_5() -> Status {
    let (spec, data, mode) = case("rayleigh_benard");
    let frame = invariance_frame(&spec, &data, 1);
    let names = frame.names().to_vec();
    let baseline = parse("pi1*Pr*pi3", &names);
    let tspec = TransformSpec::new(1, baseline, true);
    let pair = Expr::pair(parse("pi1", &names), parse("pi1^3", &names));
    let fit = transformation_fit(&pair, &frame, &tspec).expect("pinned fit");
    let (intercept, slopes) = fit.model.linear_coefficients().expect("degree-1 model");
    let (slope, icpt10) = (slopes[0], intercept / std::f64::consts::LN_10);
    let exact = (slope - 1.0 / 3.0).abs() <= 1e-6 && (icpt10 + 1.2).abs() <= 1e-6;

    // A free pair is not identifiable on this law (every (u, u^3) fits it
    // exactly), so each branch is searched with the other one pinned.
    let config = spec.chain_config(1);
    let vars: Vec<usize> = ["pi1", "Pr", "pi3"].iter().map(|v| frame.index_of(v).unwrap()).collect();
    let pi1 = col(&frame, "pi1");
    let pi1_3: Vec<f64> = pi1.iter().map(|x| x.powi(3)).collect();
    let mut hits = 0;
    let mut notes = Vec::new();
    for seed in SEEDS {
        let t0 = Instant::now();
        let mut ok = true;
        for free in 0..2 {
            let mut s = tspec.clone();
            s.pins[1 - free] = Some(if free == 0 { parse("pi1^3", &names) } else { parse("pi1", &names) });
            let cfg = EngineConfig { seed, variables: Some(vars.clone()), ..config.engine.clone() };
            let front = pair_search(&frame, &LossSpec::Transformation(s), &cfg).expect("pair search");
            let want = if free == 0 { &pi1 } else { &pi1_3 };
            ok &= front.entries().iter().any(|e| {
                let b = e.expr.branches()[free].evaluate(frame.columns()).values;
                proportional(&b, want, 1e-6)
            });
        }
        hits += ok as usize;
        notes.push(format!("s{seed} {:.1?}", t0.elapsed()));
    }
    let detail = format!(
        "{} data, noise 0: slope {slope:.9}, intercept {icpt10:.9} (log10); half-pinned rediscovery {}",
        mode.label(),
        notes.join(" ")
    );
    match seeded(hits, detail) {
        Status::Pass(d) if exact => Status::Pass(d),
        Status::Pass(d) | Status::Fail(d) => Status::Fail(d),
        s => s,
    }
}

fn criterion_6() -> Status {
    let (spec, data, mode) = case("pipe_flow");
    let frame = invariance_frame(&spec, &data, 1);
    let names = frame.names().to_vec();
    let tspec = TransformSpec::new(2, parse("1", &names), true);
    let mre = |sr2: &str| {
        let pair = Expr::pair(parse("Re^0.25", &names), parse(sr2, &names));
        transformation_fit(&pair, &frame, &tspec).expect("reference fit").mre()
    };
    let g = mre("Re^0.75*eps_d");
    let x = mre("Re^0.75*eps_d + Re^0.5*(eps_d + 0.019)");
    let derived = if x < g { "holds" } else { "FAILS" };
    let msg = format!(
        "no Nikuradse data shipped ({} data in use); Goldenfeld MRE {:.2}%, extended {:.2}%, strict improvement {derived}",
        mode.label(),
        100.0 * g,
        100.0 * x
    );
    if x < g { Status::Unattainable(msg) } else { Status::Fail(msg) }
}

fn capped_r2(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    fit_poly(&[&lx], y, 3).map(|m| m.r2).unwrap_or(f64::NAN)
}

fn criterion_7() -> Status {
    let (spec, data, mode) = case("keyhole");
    let y = data.target_values().unwrap().to_vec();
    let ke = spec.oracle("keyhole_number").unwrap().evaluate(data.columns()).values;
    let ke_star = spec.oracle("modified_keyhole_number").unwrap().evaluate(data.columns()).values;
    let (r_ke, r_star) = (capped_r2(&ke, &y), capped_r2(&ke_star, &y));
    let derived = if r_star >= r_ke { "holds" } else { "FAILS" };
    let msg = format!(
        "no keyhole measurements shipped ({} data in use); R2(Ke*) {r_star:.4} >= R2(Ke) {r_ke:.4} {derived}",
        mode.label()
    );
    if r_star >= r_ke { Status::Unattainable(msg) } else { Status::Fail(msg) }
}

fn criterion_8() -> Status {
    let t0 = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for id in ["aero_sharp_cone", "aero_blunt_body"] {
        let (spec, data, mode) = case(id);
        let frame = invariance_frame(&spec, &data, 1);
        let names: Vec<String> = frame.names().to_vec();
        let t = spec.template.as_ref().expect("template");
        let tpl = parse_template(&t.expr, &names).expect("template parses");
        let start = tpl.instantiate(&t.start);
        let lspec = LossSpec::Hierarchical(HierarchicalSpec {
            intermediate_count: 1,
            degree: DegreePolicy::Fixed { degree: 1 },
            log_space: false,
            context: Vec::new(),
        });
        let fitted = optimize_constants_masked(&start, &tpl.free_mask(), &lspec, &frame, 4);
        let got = tpl.values(&fitted);
        let within = got.iter().zip(&t.expected).all(|(g, w)| (g / w - 1.0).abs() <= 0.15);
        ok &= within;
        parts.push(format!("{id} ({}) c = [{}]", mode.label(), got.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(", ")));
    }
    let msg = format!("{} in {:.1?}; no shipped aero data, fitted on the synthetic fallback", parts.join("; "), t0.elapsed());
    if ok { Status::Pass(msg) } else { Status::Fail(msg) }
}

fn criterion_9() -> Status {
    let t0 = Instant::now();
    let mut problems = Vec::new();
    let mut r = rng(9);

    let mut front = ParetoFront::new();
    for _ in 0..10_000 {
        let c = r.random_range(1..30);
        let l = 10f64.powf(r.random_range(-6.0..2.0));
        front.insert(Expr::Const(l), l, c);
        if !front.is_valid() {
            problems.push("pareto front invalid".to_string());
            break;
        }
    }

    let mut worse = 0;
    for _ in 0..100 {
        let x = positive_columns(&mut r, 2, 40);
        let y: Vec<f64> = x[0].iter().zip(&x[1]).map(|(a, b)| 1.7 * a / b + 0.3 * a).collect();
        let d = common::dataset(x, Some(y));
        let mut e = random_expr(&mut r, 2, 3);
        if e.constants().is_empty() {
            e = Expr::binary(BinaryOp::Mul, Expr::Const(1.0), e);
        }
        let before = loss(&e, &d, &LossSpec::SquaredError);
        let after = loss(&optimize_constants(&e, &LossSpec::SquaredError, &d, 2), &d, &LossSpec::SquaredError);
        worse += !(after <= before || !before.is_finite()) as usize;
    }
    if worse > 0 {
        problems.push(format!("optimize_constants raised the loss {worse} times"));
    }

    let x = positive_columns(&mut r, 2, 60);
    let d = common::dataset(x, None);
    let f = parse_with_names("x0^2/x1 + x1", d.names()).unwrap();
    let base = |e: &Expr| implicit_score(e, &d, &ImplicitSpec::default()).base;
    let b0 = base(&f);
    let scaled = base(&Expr::binary(BinaryOp::Mul, Expr::Const(37.5), f.clone()));
    let powered = base(&Expr::binary(BinaryOp::Pow, f.clone(), Expr::Const(2.5)));
    if (scaled - b0).abs() > 1e-9 * b0.max(1e-12) || (powered / (6.25 * b0) - 1.0).abs() > 1e-9 {
        problems.push(format!("var-log invariance: {b0:e} {scaled:e} {powered:e}"));
    }

    let cols = positive_columns(&mut r, 3, 20);
    let mut changed = 0;
    for _ in 0..1000 {
        let e = random_expr(&mut r, 3, 4);
        let s = simplify(&e);
        let (a, b) = (e.evaluate(&cols).values, s.evaluate(&cols).values);
        changed += a.iter().zip(&b).any(|(u, v)| u.is_finite() && !(((u - v).abs()) <= 1e-9 * u.abs().max(1.0))) as usize;
        changed += (s.complexity() > e.complexity()) as usize;
    }
    if changed > 0 {
        problems.push(format!("simplify changed {changed} expressions"));
    }

    let x = positive_columns(&mut r, 2, 50);
    let y: Vec<f64> = x[0].iter().zip(&x[1]).map(|(a, b)| a * a + b).collect();
    let d = common::dataset(x, Some(y));
    let cfg = |threads| EngineConfig { seed: 5, population_size: 120, iterations: 8, islands: 2, threads, ..EngineConfig::default() };
    let a = search(&d, &LossSpec::SquaredError, &cfg(1)).unwrap();
    let b = search(&d, &LossSpec::SquaredError, &cfg(8)).unwrap();
    if a != b {
        problems.push("fronts differ across thread counts".into());
    }

    let rosen = |p: &[f64]| (1.0 - p[0]).powi(2) + 100.0 * (p[1] - p[0] * p[0]).powi(2);
    let rosen_grad = |p: &[f64]| vec![-2.0 * (1.0 - p[0]) - 400.0 * p[0] * (p[1] - p[0] * p[0]), 200.0 * (p[1] - p[0] * p[0])];
    let mut bad_dir = 0;
    for _ in 0..200 {
        let p = [r.random_range(-2.0..2.0), r.random_range(-1.0..3.0)];
        let dir = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let (g, h) = (fd_gradient(&rosen, &p), rosen_grad(&p));
        let (dg, dh) = (g[0] * dir[0] + g[1] * dir[1], h[0] * dir[0] + h[1] * dir[1]);
        bad_dir += ((dg - dh).abs() > 1e-4 * dh.abs().max(1.0)) as usize;
    }
    let (xmin, _) = bfgs_minimize(&rosen, &[-1.2, 1.0], 500);
    if bad_dir > 0 || (xmin[0] - 1.0).abs() > 1e-3 {
        problems.push(format!("gradient check: {bad_dir} directions off, minimum at {xmin:?}"));
    }

    let detail = format!("deterministic suite in {:.1?}", t0.elapsed());
    if problems.is_empty() { Status::Pass(detail) } else { Status::Fail(format!("{detail}; {}", problems.join("; "))) }
}

// All trees of at most `max` nodes over {*, /, ^k} on three variables,
// each paired with its exponent vector.
fn enumerate(max: usize) -> Vec<(Expr, [i64; 3])> {
    let mut by_size: Vec<Vec<(Expr, [i64; 3])>> = vec![Vec::new(); max + 1];
    by_size[1] = (0..3)
        .map(|i| {
            let mut v = [0; 3];
            v[i] = 1;
            (Expr::Var(i), v)
        })
        .collect();
    for size in 2..=max {
        let mut out = Vec::new();
        for left in 1..size - 1 {
            let right = size - 1 - left;
            for (a, va) in &by_size[left] {
                for (b, vb) in &by_size[right] {
                    out.push((Expr::binary(BinaryOp::Mul, a.clone(), b.clone()), [va[0] + vb[0], va[1] + vb[1], va[2] + vb[2]]));
                    out.push((Expr::binary(BinaryOp::Div, a.clone(), b.clone()), [va[0] - vb[0], va[1] - vb[1], va[2] - vb[2]]));
                }
            }
        }
        for (a, va) in &by_size[size - 2] {
            for k in [-3i64, -2, -1, 2, 3] {
                out.push((Expr::binary(BinaryOp::Pow, a.clone(), Expr::Const(k as f64)), va.map(|x| x * k)));
            }
        }
        by_size[size] = out;
    }
    by_size.into_iter().flatten().collect()
}

fn criterion_10() -> Status {
    let t0 = Instant::now();
    let (_, data, _) = case("gravitation_solar");
    let (sub, ispec) = implicit_setup(&data, &["m", "R", "T"], 1);
    let kepler = parse("T^2/R^3", sub.names());
    let all = enumerate(9);
    let mut best: Option<(f64, &Expr)> = None;
    for (e, v) in &all {
        if v.iter().filter(|x| **x != 0).count() < 2 {
            continue;
        }
        let b = implicit_base(e, &sub);
        if best.is_none_or(|(bb, _)| b < bb) {
            best = Some((b, e));
        }
    }
    let Some((b, e)) = best else { return Status::Fail("no candidates".into()) };
    let lib = implicit_score(e, &sub, &ispec).base;
    let agree = (lib / b - 1.0).abs() < 1e-9;
    let ok = monomial_equivalent(e, &kepler) && agree;
    let msg = format!(
        "{} candidates, minimizer {} with Var ln|F| = {b:.3e} (library {lib:.3e}) in {:.1?}",
        all.len(),
        e.format_with(sub.names()),
        t0.elapsed()
    );
    if ok { Status::Pass(msg) } else { Status::Fail(msg) }
}

fn main() {
    // `cargo test` passes harness flags; a name filter that excludes us skips the run.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let (c3, c4) = criteria_3_4();
    let results = vec![
        criterion_1(),
        criterion_2(),
        c3,
        c4,
        criterion_5(),
        criterion_6(),
        criterion_7(),
        criterion_8(),
        criterion_9(),
        criterion_10(),
    ];
    let mut failed = 0;
    for (i, s) in results.iter().enumerate() {
        match s {
            Status::Pass(d) => println!("criterion {:>2}: PASS  {d}", i + 1),
            Status::Fail(d) => {
                failed += 1;
                println!("criterion {:>2}: FAIL  {d}", i + 1)
            }
            Status::Unattainable(d) => println!("criterion {:>2}: UNATTAINABLE  {d}", i + 1),
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
