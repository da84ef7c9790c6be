mod common;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use swgee::data::{ingest_cluster_period, ingest_individual};
use swgee::{SwgeeError, TrialData};

fn trial_strategy() -> impl Strategy<Value = TrialData> {
    (1usize..6, 1usize..6, any::<u64>()).prop_map(|(i, j, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        common::random_trial(&mut rng, i, j, 40)
    })
}

fn individual_csv(d: &TrialData) -> Vec<String> {
    let mut rows = Vec::new();
    for c in 0..d.n_clusters() {
        for p in 0..d.n_periods() {
            for k in 0..d.size(c, p) {
                rows.push(format!(
                    "{},{},{},{}",
                    d.cluster_ids()[c],
                    d.periods()[p],
                    u8::from(d.treated(c, p)),
                    u8::from(k < d.total(c, p))
                ));
            }
        }
    }
    rows
}

fn same_cells(a: &TrialData, b: &TrialData) {
    assert_eq!(a.periods(), b.periods());
    for (c, id) in a.cluster_ids().iter().enumerate() {
        let k = b.cluster_ids().iter().position(|x| x == id).unwrap();
        assert_eq!(a.sizes()[c], b.sizes()[k]);
        assert_eq!(a.totals()[c], b.totals()[k]);
        assert_eq!(a.treatment()[c], b.treatment()[k]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cluster_period_csv_round_trips(d in trial_strategy()) {
        let text = d.to_cluster_period_csv().unwrap();
        let back = ingest_cluster_period(text.as_bytes()).unwrap();
        prop_assert_eq!(back, d);
    }

    #[test]
    fn row_order_does_not_matter(d in trial_strategy(), seed in any::<u64>()) {
        let mut rows = individual_csv(&d);
        rows.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let text = format!("cluster,period,treatment,outcome\n{}\n", rows.join("\n"));
        let back = ingest_individual(text.as_bytes()).unwrap();
        same_cells(&d, &back);
    }

    #[test]
    fn collapse_matches_cluster_period_ingest(d in trial_strategy()) {
        let text = format!("cluster,period,treatment,outcome\n{}\n", individual_csv(&d).join("\n"));
        let collapsed = ingest_individual(text.as_bytes()).unwrap();
        let cp = ingest_cluster_period(collapsed.to_cluster_period_csv().unwrap().as_bytes()).unwrap();
        prop_assert_eq!(collapsed, cp);
    }
}

#[test]
fn numeric_period_labels_sort_numerically() {
    let csv = "cluster,period,treatment,n,y\na,10,1,5,1\na,2,0,5,2\na,1,0,5,0\n";
    let d = ingest_cluster_period(csv.as_bytes()).unwrap();
    assert_eq!(d.periods(), &["1", "2", "10"]);
    assert_eq!(d.totals()[0], vec![0, 2, 1]);
}

#[test]
fn malformed_rows_are_rejected() {
    let bad_outcome = "cluster,period,treatment,outcome\na,1,0,2\n";
    assert!(matches!(ingest_individual(bad_outcome.as_bytes()), Err(SwgeeError::Schema { row: 1, .. })));
    let conflicting = "cluster,period,treatment,outcome\na,1,0,1\na,1,1,0\n";
    assert!(matches!(ingest_individual(conflicting.as_bytes()), Err(SwgeeError::Integrity(_))));
    let duplicate = "cluster,period,treatment,n,y\na,1,0,5,1\na,1,0,5,1\n";
    assert!(matches!(ingest_cluster_period(duplicate.as_bytes()), Err(SwgeeError::Integrity(_))));
    let missing_column = "cluster,period,n,y\na,1,5,1\n";
    assert!(matches!(ingest_cluster_period(missing_column.as_bytes()), Err(SwgeeError::Schema { .. })));
}

#[test]
fn fixtures_load() {
    let cp = common::fixture("trial_cp.csv");
    assert_eq!((cp.n_clusters(), cp.n_periods()), (12, 5));
    let ind = common::fixture("trial_individual.csv");
    assert_eq!((ind.n_clusters(), ind.n_periods()), (6, 5));
    assert!(swgee::data::validate_design(&cp).is_stepped_wedge);
}
