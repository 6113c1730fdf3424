use scm_debias::lexicon::{self, Lexicon, TermKind};

fn shipped() -> Lexicon {
    Lexicon::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/lexicon.json")).unwrap()
}

#[test]
fn name_sets_have_balanced_subgroups() {
    let lex = shipped();
    for (set, prefix) in [("EA-names", "EA"), ("AA-names", "AA")] {
        let s = lex.stimulus_set(set).unwrap();
        assert_eq!(s.kind(), TermKind::Target);
        assert_eq!(s.terms().len(), 20);
        let counts = s.group_counts();
        assert_eq!(counts[format!("{prefix}-female").as_str()], 10);
        assert_eq!(counts[format!("{prefix}-male").as_str()], 10);
    }
    assert_eq!(lex.stimulus_set("MAF-names").unwrap().terms().len(), 10);
    assert_eq!(lex.stimulus_set("EAM-names").unwrap().terms().len(), 10);
}

#[test]
fn eight_tests_over_four_dimensions() {
    let lex = shipped();
    assert_eq!(lex.bias_test_specs().len(), 8);
    for d in lex.attribute_dimensions() {
        assert!(d.pole_high().len() <= lexicon::DEFAULT_POLE_CAP);
        assert!(d.pole_low().len() <= lexicon::DEFAULT_POLE_CAP);
    }
    assert!(lex.test("EA,AA,Warm").is_some());
    assert!(lex.test("EAM,MAF,Inter.").is_some());
}

#[test]
fn debiasing_attributes_do_not_leak_into_other_tests() {
    let lex = shipped();
    let debias: Vec<_> = ["warmth", "competence"]
        .iter()
        .flat_map(|d| lex.dimension(d).unwrap().attributes().cloned().collect::<Vec<_>>())
        .collect();
    for name in ["EA,AA,Pleas.", "EA,AA,Inter.", "EAM,MAF,Pleas.", "EAM,MAF,Inter."] {
        let report = lexicon::validate_disjoint(&debias, lex.test(name).unwrap());
        assert!(report.is_valid(), "{name}: {:?}", report.overlaps);
    }
}

#[test]
fn shipped_file_round_trips() {
    let lex = shipped();
    let again = Lexicon::from_json_str(&lex.to_json_string()).unwrap();
    assert_eq!(again, lex);
}
