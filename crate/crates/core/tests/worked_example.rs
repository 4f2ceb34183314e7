mod common;

#[test]
fn worked_example_matches_golden_trace() {
    let golden = include_str!("golden/worked_example.txt");
    let actual = common::worked_example::render();
    assert_eq!(actual, golden, "\n--- actual ---\n{actual}");
}
