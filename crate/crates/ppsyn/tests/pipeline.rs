//! Cross-module invariants of the full synthesis loop.

mod common;

use common::{all_two_way, correlated_dataset};
use ppsyn::evaluation::baseline_no_partition;
use ppsyn::synthesizer::{synthesize, BudgetSpec, SynthesisConfig};

#[test]
fn budget_safety_across_configs() {
    let data = correlated_dataset(1_500, 5);
    let workload = all_two_way(4);
    for (i, rho) in [1e-4, 1e-3, 0.05, 0.5].iter().enumerate() {
        let mut config = SynthesisConfig::new(BudgetSpec::Rho { rho: *rho }, i as u64);
        config.rounds = 8;
        let out = synthesize(&data, &workload, &config).unwrap();
        let r = &out.report;
        assert!(r.rho_spent <= r.rho_total + 1e-12, "rho {rho}");
        assert!(r.rounds_executed <= 10 * config.rounds);
        // each completed round appears once in the ledger as a measure charge
        let measures = r
            .ledger
            .iter()
            .filter(|c| c.label.starts_with("measure:"))
            .count();
        assert_eq!(measures, r.rounds.len());
        let selects = r
            .ledger
            .iter()
            .filter(|c| c.label.starts_with("select:"))
            .count();
        assert_eq!(selects, r.rounds_executed);
    }
}

#[test]
fn baseline_same_ledger_discipline() {
    let data = correlated_dataset(1_500, 6);
    let workload = all_two_way(4);
    let mut config = SynthesisConfig::new(BudgetSpec::Rho { rho: 0.02 }, 3);
    config.rounds = 8;
    let out = baseline_no_partition(&data, &workload, &config).unwrap();
    let r = &out.report;
    assert!(r.rho_spent <= r.rho_total + 1e-12);
    // identity partitions: |P| equals the clique's cell count and RE = 0
    for round in &r.rounds {
        assert_eq!(round.re, 0.0);
        assert!(round.partition_size >= 64);
    }
}

#[test]
fn synthetic_record_count_override() {
    let data = correlated_dataset(800, 9);
    let workload = all_two_way(4);
    let mut config = SynthesisConfig::new(BudgetSpec::Rho { rho: 0.05 }, 2);
    config.rounds = 4;
    config.records = Some(123);
    let out = synthesize(&data, &workload, &config).unwrap();
    assert_eq!(out.synthetic.n(), 123);

    config.records = None;
    let out = synthesize(&data, &workload, &config).unwrap();
    assert_eq!(out.synthetic.n(), data.n());
}

#[test]
fn thread_count_does_not_change_results() {
    let data = correlated_dataset(1_000, 13);
    let workload = all_two_way(4);
    let mut config = SynthesisConfig::new(BudgetSpec::Rho { rho: 0.05 }, 21);
    config.rounds = 4;
    let ambient = synthesize(&data, &workload, &config).unwrap();
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| synthesize(&data, &workload, &config).unwrap());
    assert_eq!(
        serde_json::to_string(&ambient.report).unwrap(),
        serde_json::to_string(&single.report).unwrap()
    );
    for i in 0..ambient.synthetic.n() {
        assert_eq!(ambient.synthetic.row(i), single.synthetic.row(i));
    }
}

#[test]
fn trace_and_dumps_cover_rounds() {
    let data = correlated_dataset(1_000, 8);
    let workload = all_two_way(4);
    let mut config = SynthesisConfig::new(BudgetSpec::Rho { rho: 0.05 }, 4);
    config.rounds = 4;
    config.trace = true;
    config.dump_partitions = true;
    let out = synthesize(&data, &workload, &config).unwrap();
    let traces = out.trace.unwrap();
    assert_eq!(traces.len(), out.report.rounds_executed);
    for t in &traces {
        assert_eq!(t.candidates.len(), workload.len());
    }
    let dumps = out.partition_dumps.unwrap();
    assert_eq!(dumps.len(), out.report.rounds.len());
    for d in &dumps {
        assert!(d.rho.is_finite() && d.rho > 0.0);
        assert!(d.boxes.is_some() || d.perm.is_some());
    }
}
