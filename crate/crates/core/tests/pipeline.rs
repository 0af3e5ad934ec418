use std::path::Path;

use flexsettle::benchmark::{asymmetric_scenarios, asymmetric_system};
use flexsettle::da::Design;
use flexsettle::pipeline::{clear_da, digest, simulate_day};
use flexsettle::rt::RtMode;
use flexsettle::settlement::{iso_position, Product, Stage};
use flexsettle::solver::{HighsBackend, MicrolpBackend};
use flexsettle::study::{compare, run_study, StudyConfig, StudyMode};
use flexsettle::system::{validate_system, SystemModel};

fn toml_blocks(md: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur: Option<String> = None;
    for line in md.lines() {
        match (&mut cur, line.trim()) {
            (None, "```toml") => cur = Some(String::new()),
            (Some(_), "```") => out.push(cur.take().unwrap()),
            (Some(b), _) => {
                b.push_str(line);
                b.push('\n');
            }
            _ => {}
        }
    }
    out
}

#[test]
fn documented_schema_parses() {
    let md = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/system.md")).unwrap();
    let blocks = toml_blocks(&md);
    assert_eq!(blocks.len(), 2);
    let sys = SystemModel::from_toml_str(&blocks[0]).unwrap();
    assert!(validate_system(&sys, None).is_empty(), "{:?}", validate_system(&sys, None));
    assert_eq!(sys.generators[0].p_max, 125.0);
    let back = SystemModel::from_toml_str(&sys.to_toml_string()).unwrap();
    assert_eq!(back, sys);
    let dir = tempfile::tempdir().unwrap();
    for f in ["system.toml", "da.csv", "actual.csv", "oos.csv"] {
        std::fs::write(dir.path().join(f), "").unwrap();
    }
    let cfg = StudyConfig::from_toml_str(&blocks[1], dir.path()).unwrap();
    assert_eq!(cfg.system, Some(dir.path().join("system.toml")));
    assert_eq!(cfg.output, dir.path().join("out"));
}

#[test]
fn asymmetric_day_settles_for_both_designs() {
    let sys = asymmetric_system();
    let backend = HighsBackend::default();
    let da = asymmetric_scenarios(60.0, 30, 1).unwrap();
    let actual = asymmetric_scenarios(sys.market.rt_resolution, 1, 4).unwrap();
    for design in [Design::Ir, Design::Fo] {
        let run = simulate_day(&sys, &da, &actual, design, RtMode::Full, 3, &backend).unwrap();
        assert!(run.ledger.audit(1e-6).is_empty());
        assert!(run.ledger.entries.iter().all(|e| e.day == 3));
        let pos = iso_position(&run.ledger).unwrap();
        let fo = pos.get(Stage::Da, Product::FoUp) + pos.get(Stage::Rt, Product::FoUp);
        if design == Design::Fo {
            assert!(pos.fo_total().abs() < 1e-6);
        } else {
            assert_eq!(fo, 0.0);
            let ratio = pos.ir_recovery_ratio.unwrap_or(0.0);
            assert!(ratio <= 1.0 + 1e-9, "{ratio}");
        }
        assert!((run.cost.total - run.cost.da_cost - run.cost.rt_incremental - run.cost.rt_scarcity).abs() < 1e-6);
        assert_eq!(run.points.len(), actual.num_intervals());
    }
}

#[test]
fn settlement_needs_duals() {
    let sys = asymmetric_system();
    let da = asymmetric_scenarios(60.0, 10, 1).unwrap();
    let actual = asymmetric_scenarios(sys.market.rt_resolution, 1, 4).unwrap();
    let err = simulate_day(&sys, &da, &actual, Design::Fo, RtMode::Full, 0, &MicrolpBackend).unwrap_err();
    assert!(err.to_string().contains("duals"), "{err}");
    // DA clearing alone works without duals and agrees with HiGHS.
    let a = clear_da(&sys, &da, Design::Ir, 0, &MicrolpBackend).unwrap();
    let b = clear_da(&sys, &da, Design::Ir, 0, &HighsBackend::default()).unwrap();
    let gap = sys.market.mip_gap * b.solution.objective.abs().max(1.0);
    assert!((a.solution.objective - b.solution.objective).abs() <= 2.0 * gap);
}

#[test]
fn digest_tracks_inputs() {
    let a = asymmetric_scenarios(60.0, 5, 1).unwrap();
    let b = asymmetric_scenarios(60.0, 5, 2).unwrap();
    let act = asymmetric_scenarios(15.0, 1, 1).unwrap();
    assert_eq!(digest(&a, &act), digest(&a.clone(), &act));
    assert_ne!(digest(&a, &act), digest(&b, &act));
    assert_eq!(digest(&a, &act).len(), 16);
}

#[test]
fn single_design_runs_compare_across_designs() {
    let dir = tempfile::tempdir().unwrap();
    let base = "oos_scenarios = 3\n\n[synthetic]\nseed = 2\nweeks = 1\ndays_per_week = 1\nscenarios = 10\n";
    let backend = HighsBackend::default();
    for d in ["ir", "fo"] {
        let text = format!("output = \"{d}\"\ndesigns = \"{d}\"\n{base}");
        let cfg = StudyConfig::from_toml_str(&text, dir.path()).unwrap();
        let out = run_study(&cfg, StudyMode::Full, &backend).unwrap();
        assert!(out.failures.is_empty());
        assert!(out.files.contains_key("costs.csv"));
    }
    let out = compare(&dir.path().join("ir"), &dir.path().join("fo"), &dir.path().join("cmp")).unwrap();
    assert!(out.files.contains_key("delta_costs.csv"));
    let text = std::fs::read_to_string(dir.path().join("cmp/delta_costs.csv")).unwrap();
    let row = text.lines().nth(1).unwrap();
    assert!(row.contains(",ir,fo,"), "{text}");
}
