//! Regenerates `tests/fixtures/`: a small house-listing corpus, run configurations, and
//! transcripts recorded against the local mock chat server.
//!
//! cargo run -p genz-cli --example make_fixtures

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use genz_cli::config::{apply_override, RunConfig};
use genz_cli::runner;
use genz_core::oracle::mock::MockChatServer;

const HOUSES: usize = 100;

const EXTERIORS: [&str; 6] = ["stucco", "brick", "adobe", "timber", "stone", "siding"];
const FEATURES: [(&str, f64); 8] = [
    ("pool", 0.18),
    ("granite", 0.12),
    ("mountain views", 0.15),
    ("vaulted ceilings", 0.08),
    ("dated carpet", -0.14),
    ("busy road", -0.12),
    ("solar panels", 0.05),
    ("fireplace", 0.04),
];

fn house(id: usize, rng: &mut ChaCha8Rng) -> Value {
    let bedrooms = rng.random_range(2..=5);
    let bathrooms = f64::from(rng.random_range(2..=8)) / 2.0;
    let area = 900 + 350 * bedrooms + rng.random_range(0..700);
    let exterior = EXTERIORS[rng.random_range(0..EXTERIORS.len())];
    let mut log_price = 11.2 + 0.00035 * f64::from(area) + 0.04 * bathrooms;
    let mut notes = Vec::new();
    for (phrase, effect) in FEATURES {
        if rng.random_bool(0.3) {
            notes.push(phrase);
            log_price += effect;
        }
    }
    log_price += 0.05 * (rng.random::<f64>() - 0.5);
    let frontal = format!("A {exterior} exterior with {}", if notes.is_empty() { "plain finishes".to_string() } else { notes.join(", ") });
    json!({
        "house_id": id,
        "metadata": {
            "bedrooms": bedrooms,
            "bathrooms": bathrooms,
            "area": area,
            "zip_code": format!("85{:03}", rng.random_range(0..400)),
            "price": (log_price.exp() / 100.0).round() * 100.0,
        },
        "image_descriptions": {"frontal_description": frontal},
    })
}

fn config(base: Value, overrides: &[&str]) -> Value {
    let mut v = base;
    for o in overrides {
        apply_override(&mut v, o).expect("valid override");
    }
    v
}

fn record(dir: &Path, name: &str, cfg: &Value, server: &MockChatServer) {
    let transcript = dir.join(format!("{name}.transcript.jsonl"));
    let _ = fs::remove_file(&transcript);
    let out = std::env::temp_dir().join(format!("genz-fixture-{name}"));
    let mut run_cfg = RunConfig::from_value(cfg.clone()).expect("fixture config parses");
    run_cfg.oracle.backend = genz_cli::config::OracleBackend::Remote;
    run_cfg.oracle.transcript = Some(transcript.clone());
    run_cfg.output_dir = out.clone();
    run_cfg.absolutize_paths().unwrap();
    std::env::set_var("GENZ_API_BASE", server.base_url());
    let summary = runner::run(&run_cfg).expect("recording run succeeds");
    println!("{name}: {}", serde_json::to_string(&summary).unwrap());
    println!("{name}: {} transcript lines", fs::read_to_string(&transcript).unwrap().lines().count());
}

fn main() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    fs::create_dir_all(&dir).unwrap();
    std::env::set_current_dir(env!("CARGO_MANIFEST_DIR")).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let houses: Vec<Value> = (0..HOUSES).map(|id| house(id + 1, &mut rng)).collect();
    fs::write(dir.join("houses.json"), serde_json::to_string_pretty(&houses).unwrap() + "\n").unwrap();

    let zero_shot = json!({
        "experiment": "zero_shot_baseline",
        "data": {"source": "items_json", "path": "tests/fixtures/houses.json"},
        "log_target": true,
        "model": "linear_exact",
        "oracle": {"backend": "replay", "transcript": "tests/fixtures/zero_shot.transcript.jsonl"},
        "zero_shot": {"task": "Predict the log sale price of each house.", "n_features": 8},
        "discovery": {"n_refit": 5, "n_inner": 15},
        "output_dir": "runs/zero_shot",
    });
    let hedonic_base = |model: &str, transcript: &str| {
        config(
            json!({
                "experiment": "hedonic",
                "data": {"source": "items_json", "path": "tests/fixtures/houses.json"},
                "model": model,
                "oracle": {"backend": "replay", "transcript": format!("tests/fixtures/{transcript}.transcript.jsonl")},
                "output_dir": format!("runs/{transcript}"),
            }),
            &["discovery.max_cycles=4", "discovery.k_add=3", "discovery.k_cut=1", "discovery.n_inner=10", "discovery.n_refit=3"],
        )
    };
    let hedonic = hedonic_base("nonlinear", "hedonic");
    let hedonic_linear = hedonic_base("linear_exact", "hedonic_linear");
    let runs = [("zero_shot", &zero_shot), ("hedonic", &hedonic), ("hedonic_linear", &hedonic_linear)];
    for (name, cfg) in runs {
        fs::write(dir.join(format!("{name}.config.json")), serde_json::to_string_pretty(cfg).unwrap() + "\n").unwrap();
    }

    let server = MockChatServer::start(0).expect("mock server starts");
    for (name, cfg) in runs {
        record(&dir, name, cfg, &server);
    }
}
