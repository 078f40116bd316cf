use crowdlabel::aggregation::{dawid_skene, AggregationMethod};
use crowdlabel::model::PROB_FLOOR;
use crowdlabel::annotators::Connectors;
use crowdlabel::scenario::Scenario;
use crowdlabel::{Engine, LabelRecord, Money, SampleId};
use proptest::prelude::*;

fn run(sc: &Scenario) -> crowdlabel::RunState {
    let mut engine = Engine::new(sc.build().unwrap(), &Connectors::default()).unwrap();
    engine.run(None).unwrap();
    engine.into_state()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn run_invariants(
        samples in 30usize..90,
        classes in 2usize..5,
        budget_cents in 1i64..300,
        seed in 0u64..1000,
    ) {
        let sc = Scenario { samples, classes, budget: Money::from_cents(budget_cents), seed, max_rounds: 12, ..Scenario::default() };
        let state = run(&sc);
        prop_assert!(state.termination.is_some());
        prop_assert!(state.round <= sc.max_rounds);

        let entries: Money = state.ledger.entries.iter().map(|e| e.amount).sum();
        prop_assert_eq!(entries, state.ledger.spent);
        prop_assert!(state.ledger.spent <= state.task.budget);
        prop_assert!(state.ledger.entries.iter().all(|e| !e.amount.is_negative()));
        let records: Money = state.records.iter().map(|r| r.cost).sum();
        prop_assert!(records <= state.ledger.spent);

        for b in state.beliefs.values() {
            let sum: f64 = b.probs.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9, "sum {}", sum);
            prop_assert!(b.probs.iter().all(|&p| p >= PROB_FLOOR * (1.0 - 1e-9)));
            prop_assert_eq!(b.converged, state.converged_at.contains_key(&b.sample_id));
        }
        let mut last = 0;
        for h in &state.history {
            prop_assert!(h.converged >= last);
            last = h.converged;
            prop_assert_eq!(h.cumulative_cost + h.remaining, state.task.budget);
        }
        let mut seqs: Vec<u64> = state.records.iter().map(|r| r.timestamp).collect();
        seqs.dedup();
        prop_assert_eq!(seqs.len(), state.records.len());
    }

    #[test]
    fn ds_beliefs_are_distributions(
        labels in proptest::collection::vec((0usize..6, 0usize..3, 0usize..3), 1..40),
    ) {
        let records: Vec<LabelRecord> = labels
            .iter()
            .enumerate()
            .map(|(i, &(s, a, l))| LabelRecord {
                sample_id: SampleId::new(format!("s{s}")),
                annotator_id: format!("a{a}").as_str().into(),
                round: 1,
                label: l,
                cost: Money::ZERO,
                timestamp: i as u64,
            })
            .collect();
        let out = dawid_skene(&records, 3, None, &AggregationMethod::default()).unwrap();
        for probs in out.beliefs.values() {
            let sum: f64 = probs.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(probs.iter().all(|&p| p >= PROB_FLOOR * (1.0 - 1e-9)));
        }
        for w in out.objective.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9, "objective fell {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn money_text_round_trip(micros in -10_000_000_000i64..10_000_000_000) {
        let m = Money::from_micros(micros);
        let text = m.to_string();
        let back: Money = text.parse().unwrap();
        prop_assert_eq!(back, m);
    }
}
