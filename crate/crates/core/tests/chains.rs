//! Chain runs and case data on the built-in cases.

mod common;

use common::{positive_columns, proportional, rng};
use cosr_core::cases::{
    builtin_case, builtin_cases, case_data, generate_gravitation, load_csv_str, synthesize_fallback, Body, CaseError,
    DataMode,
};
use cosr_core::chain::{
    evaluate_chain, export_chain, import_chain, render_text, run_chain, run_invariance, ChainError, ChainRun,
    InvarianceStage, KnowledgeChain, NodeRole, Stage,
};
use cosr_core::dims::check_homogeneity;
use cosr_core::expr::{monomial_equivalent, parse_with_names};
use cosr_core::polyfit::fit_poly;

fn run(id: &str, seed: u64) -> (ChainRun, cosr_core::dataset::Dataset) {
    let spec = builtin_case(id).unwrap();
    let data = case_data(&spec, None).unwrap().dataset;
    (run_chain(&data, &spec.chain_config(seed), Some(id)).unwrap(), data)
}

fn assert_structure(chain: &KnowledgeChain) {
    let mut seen: Vec<(&str, usize)> = chain.groups.iter().map(|g| (g.name.as_str(), 0)).collect();
    seen.extend(chain.inputs.iter().map(|n| (n.as_str(), 0)));
    let mut last_layer = 0;
    for node in chain.nodes() {
        assert!(node.layer >= last_layer, "{} out of layer order", node.name);
        last_layer = node.layer;
        for p in &node.parents {
            let parent = seen.iter().find(|(n, _)| n == p);
            assert!(parent.is_some_and(|(_, l)| *l <= node.layer), "{} has parent {p} from a later layer", node.name);
        }
        seen.push((node.name.as_str(), node.layer));
    }
    let mut prev = None;
    for layer in chain.layers.iter().filter(|l| l.kind == "compression") {
        let best = layer.nodes.iter().filter_map(|n| n.r2).fold(f64::NEG_INFINITY, f64::max);
        if let Some(p) = prev {
            assert!(best >= p - chain.config.plan.stages.iter().find_map(margin).unwrap_or(0.0) - 1e-12);
        }
        prev = Some(best);
    }
    for n in chain.nodes().filter(|n| n.role == NodeRole::Transformation) {
        let base_mre: f64 = n
            .note
            .as_deref()
            .and_then(|s| s.rsplit("MRE ").next())
            .and_then(|s| s.parse().ok())
            .expect("baseline MRE recorded");
        assert!(n.mre.unwrap() <= base_mre);
    }
}

fn margin(s: &Stage) -> Option<f64> {
    match s {
        Stage::Compression(c) => Some(c.margin),
        _ => None,
    }
}

#[test]
fn export_is_byte_identical_across_runs_and_threads() {
    let spec = builtin_case("pipe_flow").unwrap();
    let data = case_data(&spec, None).unwrap().dataset;
    let mut exports = Vec::new();
    for threads in [1, 3, 0] {
        let mut cfg = spec.chain_config(5);
        cfg.engine.threads = threads;
        let run = run_chain(&data, &cfg, Some("pipe_flow")).unwrap();
        exports.push(export_chain(&run.chain, "json").unwrap());
    }
    assert_eq!(exports[0], exports[1]);
    assert_eq!(exports[0], exports[2]);
}

#[test]
fn solar_chain_finds_kepler_and_names_nodes() {
    let (run, data) = run("gravitation_solar", 3);
    assert!(run.failure.is_none());
    let chain = &run.chain;
    assert_structure(chain);
    let kepler = chain.node("kepler").expect("implicit node");
    let t = parse_with_names("T^2/R^3", &kepler.frame).unwrap();
    assert!(monomial_equivalent(&kepler.expr, &t), "{}", kepler.expr_infix);
    assert!(chain.node("centripetal").is_some());
    let eval = evaluate_chain(chain, &data).unwrap();
    let stored = chain.final_model.as_ref().unwrap();
    assert!((eval.r2 - stored.r2.unwrap()).abs() <= 1e-9);
    assert!((eval.mre - stored.mre.unwrap()).abs() <= 1e-9);
}

#[test]
fn rayleigh_benard_chain_compresses_to_rayleigh() {
    let (run, data) = run("rayleigh_benard", 7);
    assert!(run.failure.is_none());
    let chain = &run.chain;
    assert_structure(chain);
    let units: Vec<_> = chain.nodes().filter(|n| n.role == NodeRole::Unit && n.layer == 1).collect();
    assert_eq!(units.len(), 2);
    for want in ["Pr", "pi1*pi3"] {
        let hit = units.iter().any(|u| monomial_equivalent(&u.expr, &parse_with_names(want, &u.frame).unwrap()));
        assert!(hit, "layer 1 lacks {want}");
    }
    let r = chain.node("thermal_expansion_correction").expect("reference node");
    let c = r.coefficients.as_ref().unwrap();
    assert!((c[1] - 1.0 / 3.0).abs() < 1e-6, "{c:?}");
    assert!((c[0] / std::f64::consts::LN_10 + 1.2).abs() < 1e-6, "{c:?}");
    let json = export_chain(chain, "json").unwrap();
    let back = import_chain(&json).unwrap();
    assert_eq!(evaluate_chain(&back, &data).unwrap(), evaluate_chain(chain, &data).unwrap());
    assert_eq!(render_text(&back), render_text(chain));
}

#[test]
fn pipe_chain_reports_both_scalings() {
    let (run, _) = run("pipe_flow", 1);
    let chain = &run.chain;
    assert_structure(chain);
    let g = chain.node("goldenfeld").and_then(|n| n.mre).unwrap();
    let x = chain.node("extended").and_then(|n| n.mre).unwrap();
    assert!(x < g, "extended {x} vs goldenfeld {g}");
    let text = render_text(chain);
    assert!(text.contains("goldenfeld") && text.contains("extended"));
}

#[test]
fn noise_target_has_no_implicit_relation() {
    let mut r = rng(4);
    let x = positive_columns(&mut r, 3, 80);
    let base = cosr_core::dims::BaseDims::default();
    let dims = [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0]];
    let cols = x
        .into_iter()
        .zip(["a", "b", "c"])
        .zip(dims)
        .map(|((v, n), d)| (n.to_string(), Some(cosr_core::dims::DimVector::from_ints(&d)), v))
        .collect();
    let data = cosr_core::dataset::Dataset::from_columns(base, cols, None).unwrap();
    let stage: InvarianceStage = serde_json::from_str(r#"{"run_implicit": true, "nondimensionalize": false}"#).unwrap();
    let mut cfg = builtin_case("gravitation_solar").unwrap().chain_config(1);
    cfg.engine.population_size = 200;
    cfg.engine.iterations = 10;
    let inv = run_invariance(&data, &stage, &cfg, 1).unwrap();
    assert!(inv.nodes.iter().any(|n| n.name == "no_implicit_relation" && n.role == NodeRole::Marker));
}

#[test]
fn chain_import_rejects_garbage_and_unknown_formats() {
    assert!(matches!(import_chain("{not json"), Err(ChainError::Json(_))));
    let (run, _) = run("pipe_flow", 2);
    assert!(matches!(export_chain(&run.chain, "yaml"), Err(ChainError::UnknownFormat(_))));
}

#[test]
fn oracles_are_homogeneous() {
    for spec in builtin_cases() {
        let dims = spec.var_dims().unwrap();
        for o in &spec.oracles {
            let e = spec.parse(&o.expr).unwrap();
            assert_eq!(check_homogeneity(&e, &dims).violations, 0, "{}: {}", spec.id, o.name);
        }
    }
}

#[test]
fn builtin_plans_have_the_expected_shape() {
    let ids: Vec<String> = builtin_cases().into_iter().map(|c| c.id).collect();
    assert!(ids.len() >= 6, "{ids:?}");
    let kinds = |id: &str| -> Vec<String> {
        builtin_case(id)
            .unwrap()
            .plan
            .stages
            .iter()
            .map(|s| match s {
                Stage::Invariance(_) => "I".to_string(),
                Stage::Compression(c) => format!("C{:?}", c.layers.iter().map(|l| l.intermediates).collect::<Vec<_>>()),
                Stage::Transformation(t) => format!("T{}{}", t.order, if t.log_space { "log" } else { "" }),
            })
            .collect()
    };
    assert_eq!(kinds("rayleigh_benard"), ["I", "C[2, 1]", "T1log"]);
    assert_eq!(kinds("pipe_flow"), ["I", "T2log"]);
    assert_eq!(kinds("keyhole"), ["I", "C[2, 1]"]);
}

#[test]
fn csv_export_round_trips_bit_identically() {
    let spec = builtin_case("pipe_flow").unwrap();
    let data = case_data(&spec, None).unwrap().dataset;
    let text = data.to_csv_string();
    let back = load_csv_str(&text, "memory", &spec).unwrap();
    assert_eq!(back.rejected_rows, 0);
    for i in 0..data.ncols() {
        let (a, b) = (data.column(i), back.dataset.column(i));
        assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()), "column {}", data.name(i));
    }
    assert_eq!(back.dataset.to_csv_string(), text);
}

#[test]
fn csv_schema_and_filtering_errors() {
    let spec = builtin_case("pipe_flow").unwrap();
    let typo = "V,nu,dd,eps,Cf\n1,1e-6,0.05,1e-4,0.01\n";
    match load_csv_str(typo, "t", &spec) {
        Err(CaseError::SchemaMismatch { missing, extra }) => {
            assert_eq!(missing, ["d"]);
            assert_eq!(extra, ["dd"]);
        }
        other => panic!("{other:?}"),
    }
    let nan = "V,nu,d,eps,Cf\nNaN,NaN,NaN,NaN,NaN\nnan,1,1,1,\n";
    assert!(matches!(load_csv_str(nan, "t", &spec), Err(CaseError::EmptyAfterFiltering { rejected: 2 })));
}

#[test]
fn gravitation_generator_rows() {
    let four_pi2 = 4.0 * std::f64::consts::PI.powi(2);
    let m = 3.003e-6;
    let bodies = [
        Body { central: 1.0, companion: m, distance: 1.0, period: 1.0 },
        Body { central: 1.0, companion: 1.0, distance: 1.0, period: 2.0 },
    ];
    let d = generate_gravitation(&bodies);
    let f = d.target_values().unwrap();
    assert!((f[0] / (m * four_pi2 / (1.0 + m)) - 1.0).abs() < 1e-14);
    assert!((f[1] / (0.5 * four_pi2 / 4.0) - 1.0).abs() < 1e-14);

    let solar = case_data(&builtin_case("gravitation_solar").unwrap(), None).unwrap();
    assert!(matches!(solar.mode, DataMode::Shipped { .. }));
    let (r, t) = (solar.dataset.column_by_name("R").unwrap(), solar.dataset.column_by_name("T").unwrap());
    for (r, t) in r.iter().zip(t) {
        assert!((t * t / (r * r * r) - 1.0).abs() < 0.03, "T^2/R^3 = {}", t * t / (r * r * r));
    }
}

#[test]
fn keyhole_fallback_favours_the_modified_number() {
    let spec = builtin_case("keyhole").unwrap();
    let a = synthesize_fallback(&spec, 300, 0.02, 9).unwrap();
    let b = synthesize_fallback(&spec, 300, 0.02, 9).unwrap();
    assert_eq!(a, b);
    let y = a.target_values().unwrap();
    let r2 = |name: &str| {
        let u: Vec<f64> = spec.oracle(name).unwrap().evaluate(a.columns()).values.iter().map(|v| v.ln()).collect();
        fit_poly(&[&u], y, 3).unwrap().r2
    };
    assert!(r2("modified_keyhole_number") > r2("keyhole_number"));
    let ke = spec.oracle("keyhole_number").unwrap().evaluate(a.columns()).values;
    let pi = parse_with_names("etaP/(dT*rho*Cp*sqrt(alpha*Vs*r0^3))", a.names()).unwrap();
    assert!(proportional(&ke, &pi.evaluate(a.columns()).values, 1e-12));
}
