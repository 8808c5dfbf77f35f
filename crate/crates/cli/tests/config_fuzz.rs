//! Stable-toolchain companion to the `config_parse` fuzz target: replays the
//! checked-in corpus and throws perturbed configs at the validator.

use proptest::prelude::*;
use sdde_cli::ExperimentConfig;
use serde_json::Value;

/// Same body as the fuzz target. Returns whether the config was accepted.
fn exercise(text: &str) -> bool {
    let Ok(config) = ExperimentConfig::from_json(text) else {
        return false;
    };
    match config.build_model() {
        Ok(model) => {
            let _ = config.simulation_grid(&model);
            let _ = config.convergence_ladder(&model);
            let _ = config.pricing_plan(&model);
            true
        }
        Err(_) => false,
    }
}

fn corpus() -> Vec<(String, String)> {
    let dir = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../fuzz/corpus/config_parse"
    );
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            (name, std::fs::read_to_string(&path).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn corpus_replays() {
    let seeds = corpus();
    assert!(seeds.len() >= 4);
    for (name, text) in &seeds {
        let accepted = exercise(text);
        let expect_reject = name.starts_with("invalid") || name.starts_with("truncated");
        assert_eq!(accepted, !expect_reject, "{name}");
    }
}

#[test]
fn shipped_configs_are_in_corpus() {
    let seeds = corpus();
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(
            seeds.iter().any(|(_, t)| *t == text),
            "{} missing from corpus",
            path.display()
        );
    }
}

const NUMERIC_FIELDS: [&[&str]; 9] = [
    &["model", "alpha_m1"],
    &["model", "rho"],
    &["model", "theta"],
    &["model", "tau"],
    &["model", "lambda"],
    &["initial", "value"],
    &["truncation", "pi_exponent"],
    &["grid", "horizon"],
    &["run", "error_order"],
];

fn base() -> Value {
    let text = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../configs/price.json"
    ))
    .unwrap();
    serde_json::from_str(&text).unwrap()
}

proptest! {
    #[test]
    fn perturbed_numbers_never_panic(
        field in 0..NUMERIC_FIELDS.len(),
        value in prop_oneof![any::<f64>(), -10.0f64..10.0, Just(0.0), Just(1e308)],
        m in prop_oneof![Just(None), (0usize..5000).prop_map(Some), Just(Some(usize::MAX))],
    ) {
        let mut cfg = base();
        let path = NUMERIC_FIELDS[field];
        if let Some(n) = serde_json::Number::from_f64(value) {
            cfg[path[0]][path[1]] = Value::Number(n);
        }
        if let Some(m) = m {
            cfg["grid"]["m"] = m.into();
        }
        exercise(&cfg.to_string());
    }

    #[test]
    fn arbitrary_text_never_panics(text in "\\PC{0,200}") {
        exercise(&text);
    }

    #[test]
    fn ladders_never_panic(ladder in prop::collection::vec(0usize..100_000, 0..6), reference in 0usize..100_000) {
        let mut cfg = base();
        cfg["grid"]["ladder"] = ladder.clone().into();
        cfg["grid"]["reference_m"] = reference.into();
        cfg["pricing"]["ladder"] = ladder.into();
        exercise(&cfg.to_string());
    }
}
