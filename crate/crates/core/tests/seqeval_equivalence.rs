mod common;

use common::{entity_cases, prf_fixtures, span_map};
use skillharness::corpus::{parse_tags, tags_to_ranges};
use skillharness::evaluate::{strict_prf, LabelMode};

#[test]
fn entity_decoding_matches_reference() {
    let cases = entity_cases();
    assert_eq!(cases.len(), 1000);
    for case in cases {
        let tags = parse_tags(&case.tags).unwrap();
        let got: Vec<(String, usize, usize)> =
            tags_to_ranges(tags.as_slice()).into_iter().map(|(r, l)| (l, r.start, r.end)).collect();
        assert_eq!(got, case.entities, "tags {:?}", case.tags);
    }
}

#[test]
fn strict_scores_match_reference() {
    let fx = prf_fixtures();
    for case in fx.cases.iter().chain([&fx.named]) {
        let r = strict_prf::<f64>(&span_map(&case.gold), &span_map(&case.pred), LabelMode::Aware).unwrap();
        assert_eq!(
            (r.precision, r.recall, r.f1),
            (case.precision, case.recall, case.f1),
            "gold {:?} pred {:?}",
            case.gold,
            case.pred
        );
    }
}

#[test]
fn documented_instance() {
    let fx = prf_fixtures();
    let r = strict_prf::<f64>(&span_map(&fx.named.gold), &span_map(&fx.named.pred), LabelMode::Aware).unwrap();
    assert_eq!(r.precision, 0.5);
    assert_eq!(r.recall, 1.0);
    approx::assert_abs_diff_eq!(r.f1, 2.0 / 3.0, epsilon = 1e-12);
}
