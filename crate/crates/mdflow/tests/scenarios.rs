use std::path::{Path, PathBuf};
use std::process::Command as Process;

use mdflow::experiments::{run_scenario, RunOptions};
use mdflow::io::read_grid_binary;
use mdflow::scenario::{DomainSpec, Scenario};
use mdflow::Error;
use proptest::prelude::*;
use sha2::{Digest, Sha256};

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn run(name: &str, out: &Path, seed: Option<u64>) -> mdflow::experiments::ExperimentSummary {
    run_scenario(
        &scenario(name),
        &RunOptions {
            out: out.to_path_buf(),
            seed,
        },
    )
    .unwrap()
}

#[test]
fn box_diffusion_conserves_mass_and_dumps_the_final_density() {
    let dir = tempfile::tempdir().unwrap();
    let s = run("box_diffusion.json", dir.path(), None);
    assert!(s.passed(), "{:?}", s.flags);
    assert!(s.constants["mass_drift"] <= 1e-8);
    let fin = read_grid_binary(&dir.path().join("final_density.bin")).unwrap();
    assert!((fin.total_mass() - 1.0).abs() <= 1e-8);
    let energy = s.table("energy").unwrap().column("energy").unwrap();
    assert!(energy.windows(2).all(|w| w[1] <= w[0] + 1e-10));
}

#[test]
fn seeded_reruns_are_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for name in ["box_diffusion.json", "expanding_ball.json"] {
        let s1 = run(name, a.path(), Some(17));
        let s2 = run(name, b.path(), Some(17));
        assert_eq!(s1.hash(), s2.hash(), "{name}");
        assert_eq!(s1.seed, 17);
    }
    // the particle cloud is sampled from the seed
    let s3 = run("expanding_ball.json", a.path(), Some(18));
    assert_ne!(
        run("expanding_ball.json", b.path(), Some(17)).hash(),
        s3.hash()
    );
}

#[test]
fn viscosity_sweep_writes_one_row_per_eps_and_time_and_hashes_its_plot() {
    let dir = tempfile::tempdir().unwrap();
    let s = run("viscosity_interval.json", dir.path(), None);
    assert!(s.passed(), "{:?}", s.flags);
    let csv_path = dir.path().join("viscosity.csv");
    let mut rd = csv::Reader::from_path(&csv_path).unwrap();
    let headers = rd.headers().unwrap().clone();
    assert_eq!(headers.get(0), Some("eps [1]"));
    assert_eq!(headers.iter().next_back(), Some("provenance"));
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 4 * 4);
    let mut keys: Vec<(String, String)> = rows
        .iter()
        .map(|r| (r[0].to_string(), r[1].to_string()))
        .collect();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), rows.len());
    let hash: String = Sha256::digest(std::fs::read(&csv_path).unwrap())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    let svg = std::fs::read_to_string(dir.path().join("viscosity.svg")).unwrap();
    assert!(svg.contains(&format!("data-sha256: {hash}")));
    let fin = std::fs::read_to_string(dir.path().join("viscosity_final.svg")).unwrap();
    assert!(fin.contains("final_sq_distance_eps_slope"));
}

#[test]
fn every_shipped_scenario_passes_its_checks() {
    let dir = tempfile::tempdir().unwrap();
    let mut names: Vec<String> = std::fs::read_dir(scenario(""))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".json"))
        .collect();
    names.sort();
    assert!(names.len() >= 8);
    for name in names {
        let s = run(&name, &dir.path().join(&name), None);
        assert!(s.passed(), "{name}: {:?}", s.flags);
        assert!(!s.flags.is_empty(), "{name}");
    }
}

#[test]
fn unknown_domain_type_is_a_schema_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let text = std::fs::read_to_string(scenario("box_diffusion.json"))
        .unwrap()
        .replace("\"type\": \"box\"", "\"type\": \"torus\"");
    std::fs::write(&path, text).unwrap();
    let err = run_scenario(
        &path,
        &RunOptions {
            out: dir.path().join("out"),
            seed: None,
        },
    )
    .unwrap_err();
    match err {
        Error::Schema { field, line, .. } => {
            assert_eq!(field, "domain.type");
            assert_eq!(line, 4);
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn cli_exit_codes_follow_the_flags() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_mdflow");
    let ok = Process::new(bin)
        .args(["run-jko", "--scenario"])
        .arg(scenario("box_diffusion.json"))
        .arg("--out")
        .arg(dir.path().join("ok"))
        .args(["--seed", "3", "--threads", "1"])
        .output()
        .unwrap();
    assert_eq!(ok.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.contains("mass_conserved"));
    assert!(stdout.contains("PASS"));

    let wrong = Process::new(bin)
        .args(["cosine-instability", "--scenario"])
        .arg(scenario("box_diffusion.json"))
        .arg("--out")
        .arg(dir.path().join("wrong"))
        .output()
        .unwrap();
    assert_eq!(wrong.status.code(), Some(2));

    let missing = Process::new(bin)
        .args(["run-jko", "--scenario", "/nonexistent.json"])
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scenarios_round_trip_through_json(seed in any::<u64>(), r in 0.1f64..5.0, rate in -0.5f64..0.5) {
        let mut sc = Scenario::load(&scenario("expanding_ball.json")).unwrap();
        sc.seed = seed;
        sc.domain = DomainSpec::Ball { center: vec![0.0, 0.0], radius: r, rate, prox: None };
        let text = serde_json::to_string_pretty(&sc).unwrap();
        let back = Scenario::from_json(&text).unwrap();
        prop_assert_eq!(&back, &sc);
        prop_assert_eq!(back.hash(), sc.hash());
    }
}
