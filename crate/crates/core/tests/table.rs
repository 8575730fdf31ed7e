use nalgebra::DMatrix;
use pairwhiten::table::{Covariate, CovariateValues, FeatureTable, TableSchema};
use proptest::prelude::*;

fn schema() -> TableSchema {
    TableSchema {
        label: "dx".into(),
        numeric: vec!["age".into()],
        categorical: vec!["site".into()],
    }
}

fn build(x: Vec<f64>, d: usize, ages: Vec<f64>) -> FeatureTable {
    let n = ages.len();
    FeatureTable::new(
        (0..d).map(|j| format!("f{j}")).collect(),
        DMatrix::from_row_slice(n, d, &x),
        vec![
            Covariate {
                name: "age".into(),
                values: CovariateValues::Numeric(ages),
            },
            Covariate {
                name: "site".into(),
                values: CovariateValues::Categorical(
                    (0..n).map(|i| format!("site{}", i % 3)).collect(),
                ),
            },
        ],
        "dx",
        (0..n).map(|i| (i % 2) as u8).collect(),
    )
    .unwrap()
}

proptest! {
    #[test]
    fn csv_round_trip_is_exact(
        (d, x, ages) in (1usize..6, 2usize..12).prop_flat_map(|(d, n)| (
            Just(d),
            proptest::collection::vec(-1e6f64..1e6, n * d),
            proptest::collection::vec(0.0f64..100.0, n),
        ))
    ) {
        let t = build(x, d, ages);
        let back = FeatureTable::from_csv_str(&t.to_csv_string(), &schema()).unwrap();
        prop_assert_eq!(back, t);
    }
}

#[test]
fn file_round_trip_and_column_order() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    let t = build(vec![0.5, 1.5, -2.0, 3.25], 2, vec![30.0, 41.5]);
    t.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("f0,f1,age,site,dx\n"));
    assert_eq!(FeatureTable::read_csv(&path, &schema()).unwrap(), t);
}

#[test]
fn malformed_tables_are_rejected() {
    let s = schema();
    for bad in [
        "f0,age,site\n1,2,a\n",           // no label column
        "f0,age,site,dx\n1,2,a,2\n",      // label outside {0, 1}
        "f0,age,site,dx\nx,2,a,1\n",      // non-numeric feature
        "f0,age,site,dx\n1,,a,1\n",       // missing covariate
        "f0,f0,age,site,dx\n1,1,2,a,1\n", // duplicate column
        "age,site,dx\n2,a,1\n",           // no features
    ] {
        assert!(FeatureTable::from_csv_str(bad, &s).is_err(), "{bad}");
    }
    let e = FeatureTable::read_csv(std::path::Path::new("/nonexistent/t.csv"), &s).unwrap_err();
    assert!(e.to_string().contains("/nonexistent/t.csv"));
}

#[test]
fn row_selection_keeps_covariates_aligned() {
    let t = build(
        (0..12).map(f64::from).collect(),
        2,
        vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
    );
    let s = t.select_rows(&[4, 1]);
    assert_eq!(s.features()[(0, 0)], 8.0);
    assert_eq!(s.numeric_column("age").unwrap(), vec![5.0, 2.0]);
    assert_eq!(s.labels(), &[0, 1]);
}
