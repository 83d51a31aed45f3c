use outlierscope::ingest::{read_csv, ColumnKind, ColumnSpec, DatasetSchema, DischargeTable, ErrorPolicy};
use proptest::prelude::*;

fn schema() -> DatasetSchema {
    DatasetSchema::new(
        vec![
            ColumnSpec::categorical("Diagnosis"),
            ColumnSpec::new("Facility", ColumnKind::Categorical, false),
            ColumnSpec::new("Cost", ColumnKind::Numeric, true),
            ColumnSpec::new("Year", ColumnKind::Year, true),
        ],
        "Cost",
        "Year",
    )
    .unwrap()
}

const HEADER: &str = "Diagnosis,Facility,Cost,Year\n";

/// The structural promises a loaded table makes, whatever the input was.
fn assert_table_invariants(table: &DischargeTable) {
    let n = table.row_count();
    for col in table.categorical_columns() {
        assert_eq!(col.codes().len(), n, "column {}", col.name());
        let dict = col.dictionary();
        let distinct: std::collections::HashSet<&String> = dict.iter().collect();
        assert_eq!(
            distinct.len(),
            dict.len(),
            "dictionary of {} has duplicates",
            col.name()
        );
        for &c in col.codes() {
            assert!((c as usize) < dict.len());
        }
        for v in dict {
            assert_eq!(v, v.trim(), "dictionary values are trimmed");
        }
    }
    assert_eq!(table.costs().len(), n);
    assert_eq!(table.years().len(), n);
    for &c in table.costs() {
        assert!(c.is_finite() && c >= 0.0, "cost {c}");
    }
    let mut years = table.years().to_vec();
    years.sort();
    years.dedup();
    assert_eq!(table.distinct_years(), years.as_slice());
}

#[derive(Debug, Clone)]
enum Line {
    Valid {
        dx: String,
        facility: String,
        cost: String,
        year: i32,
    },
    Corrupt(String),
}

fn value_text() -> impl Strategy<Value = String> {
    prop_oneof![
        prop::sample::select(vec!["A", "B", "Heart Failure", "Ünïcode", "x y"]).prop_map(String::from),
        "[a-zA-Z]{1,6}",
    ]
}

fn padded(s: impl Strategy<Value = String>) -> impl Strategy<Value = String> {
    (
        s,
        prop::sample::select(vec!["", " ", "  "]),
        prop::sample::select(vec!["", " ", "\t"]),
    )
        .prop_map(|(s, l, r)| format!("{l}{s}{r}"))
}

fn cost_text() -> impl Strategy<Value = String> {
    prop_oneof![
        (0u32..100_000).prop_map(|c| c.to_string()),
        (0u32..100_000, 0u32..100).prop_map(|(d, c)| format!("{d}.{c:02}")),
        (1u32..999, 0u32..1000).prop_map(|(t, u)| format!("\"${t},{u:03}.50\"")),
    ]
}

fn line() -> impl Strategy<Value = Line> {
    let valid = (
        padded(value_text()),
        prop_oneof![Just(String::new()), value_text()],
        cost_text(),
        2000i32..2030,
    )
        .prop_map(|(dx, facility, cost, year)| Line::Valid {
            dx,
            facility,
            cost,
            year,
        });
    let corrupt = prop_oneof![
        // too few / too many fields
        Just("A,B,1".to_string()),
        Just("A,B,1,2010,extra".to_string()),
        // blank required categorical or cost
        Just(" ,B,1,2010".to_string()),
        Just("A,B,,2010".to_string()),
        // bad numbers
        Just("A,B,-3,2010".to_string()),
        Just("A,B,abc,2010".to_string()),
        Just("A,B,inf,2010".to_string()),
        Just("A,B,NaN,2010".to_string()),
        Just("A,B,1,20x0".to_string()),
        Just("A,B,1,".to_string()),
    ];
    prop_oneof![3 => valid, 1 => corrupt.prop_map(Line::Corrupt)]
}

fn render(lines: &[Line]) -> String {
    let mut text = HEADER.to_string();
    for l in lines {
        match l {
            Line::Valid {
                dx,
                facility,
                cost,
                year,
            } => text.push_str(&format!("{dx},{facility},{cost},{year}\n")),
            Line::Corrupt(s) => {
                text.push_str(s);
                text.push('\n');
            }
        }
    }
    text
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn skip_mode_accounts_for_every_line_and_round_trips(lines in prop::collection::vec(line(), 0..60)) {
        let text = render(&lines);
        let (table, report) = read_csv(text.as_bytes(), &schema(), ErrorPolicy::Skip).unwrap();
        assert_table_invariants(&table);
        prop_assert_eq!(report.data_records, lines.len() as u64);
        prop_assert_eq!(report.accepted + report.rejected_total(), report.data_records);
        prop_assert_eq!(report.accepted, table.row_count() as u64);

        let valid: Vec<&Line> = lines.iter().filter(|l| matches!(l, Line::Valid { .. })).collect();
        prop_assert_eq!(table.row_count(), valid.len());
        let dx = table.dimension("Diagnosis").unwrap();
        let fac = table.dimension("Facility").unwrap();
        for (row, l) in valid.iter().enumerate() {
            let Line::Valid { dx: d, facility, year, .. } = l else { unreachable!() };
            prop_assert_eq!(dx.value(row), d.trim());
            prop_assert_eq!(fac.value(row), facility.trim());
            prop_assert_eq!(table.years()[row], *year);
        }
    }

    #[test]
    fn arbitrary_bytes_never_break_the_table(body in prop::collection::vec(any::<u8>(), 0..600)) {
        let mut bytes = HEADER.as_bytes().to_vec();
        bytes.extend(body);
        let (table, report) = read_csv(bytes.as_slice(), &schema(), ErrorPolicy::Skip).unwrap();
        assert_table_invariants(&table);
        prop_assert_eq!(report.accepted + report.rejected_total(), report.data_records);
        prop_assert_eq!(report.accepted, table.row_count() as u64);
    }

    #[test]
    fn strict_mode_accepts_exactly_the_clean_files(lines in prop::collection::vec(line(), 1..30)) {
        let text = render(&lines);
        let clean = lines.iter().all(|l| matches!(l, Line::Valid { .. }));
        let loaded = read_csv(text.as_bytes(), &schema(), ErrorPolicy::Strict);
        prop_assert_eq!(loaded.is_ok(), clean);
    }
}

#[test]
fn currency_formatting_is_stripped() {
    let text = format!("{HEADER}A,,\"$12,068.11\",2014\n");
    let (table, report) = read_csv(text.as_bytes(), &schema(), ErrorPolicy::Strict).unwrap();
    assert_eq!(report.accepted, 1);
    assert_eq!(table.costs(), [12068.11]);
    assert_eq!(table.dimension("Facility").unwrap().value(0), "");
}
