use serde::{Deserialize, Serialize};

use super::dataset::SequencePair;
use super::vocab::{VocabFile, Vocabulary, END, SEP};
use super::{invalid, Result};

/// One admission: diagnosis codes in priority order, treatment codes in the
/// order given.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Visit {
    pub diagnoses: Vec<String>,
    pub treatments: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patient {
    pub id: String,
    pub visits: Vec<Visit>,
}

/// Token strings before vocabulary lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenPair {
    pub input: Vec<String>,
    pub target: Vec<String>,
}

/// History of the first `n` visits: every earlier visit contributes its
/// diagnoses, `%`, its treatments and `∅`; visit `n` contributes its
/// diagnoses and `%`. The target is visit `n`'s treatments and `∅`.
pub fn encode_admission_history(visits: &[Visit], n: usize) -> Result<TokenPair> {
    if n < 2 {
        return Err(invalid(format!("history needs at least 2 visits, got {n}")));
    }
    if n > visits.len() {
        return Err(invalid(format!("visit {n} requested from {} visits", visits.len())));
    }
    let current = &visits[n - 1];
    if current.diagnoses.is_empty() {
        return Err(invalid(format!("visit {n} has no diagnoses")));
    }
    let mut input = Vec::new();
    for v in &visits[..n - 1] {
        input.extend(v.diagnoses.iter().cloned());
        input.push(SEP.to_string());
        input.extend(v.treatments.iter().cloned());
        input.push(END.to_string());
    }
    input.extend(current.diagnoses.iter().cloned());
    input.push(SEP.to_string());
    let mut target = current.treatments.clone();
    target.push(END.to_string());
    Ok(TokenPair { input, target })
}

/// Vocabulary over every code in `patients`, ids in order of first
/// appearance. Treatment codes appear in both vocabularies.
pub fn emr_vocab(patients: &[Patient]) -> VocabFile {
    let mut input = Vocabulary::new();
    let mut output = Vocabulary::new();
    for v in patients.iter().flat_map(|p| &p.visits) {
        for d in &v.diagnoses {
            input.add(d);
        }
        for t in &v.treatments {
            input.add(t);
            output.add(t);
        }
    }
    VocabFile::new(input, output)
}

/// One pair per visit after the first, for every patient in order.
pub fn emr_pairs(patients: &[Patient], vocab: &VocabFile) -> Result<Vec<SequencePair>> {
    let mut pairs = Vec::new();
    for p in patients {
        for n in 2..=p.visits.len() {
            let tokens = encode_admission_history(&p.visits, n)?;
            pairs.push(SequencePair {
                input: vocab.input.encode(&tokens.input)?,
                target: vocab.output.encode(&tokens.target)?,
            });
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn visit(d: &[&str], t: &[&str]) -> Visit {
        Visit {
            diagnoses: d.iter().map(|s| s.to_string()).collect(),
            treatments: t.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn two_visit_example() {
        let visits = [visit(&["a", "b"], &["x"]), visit(&["c"], &["y", "z"])];
        let p = encode_admission_history(&visits, 2).unwrap();
        assert_eq!(p.input, ["a", "b", "%", "x", "∅", "c", "%"]);
        assert_eq!(p.target, ["y", "z", "∅"]);
    }

    #[test]
    fn empty_treatments_and_errors() {
        let visits = [visit(&["a"], &["x"]), visit(&["c"], &[]), visit(&[], &["q"])];
        assert_eq!(encode_admission_history(&visits, 2).unwrap().target, ["∅"]);
        assert!(encode_admission_history(&visits, 1).is_err());
        assert!(encode_admission_history(&visits, 3).is_err());
        assert!(encode_admission_history(&visits, 4).is_err());
    }

    #[test]
    fn separator_counts() {
        let visits = [
            visit(&["a", "b"], &["x", "y"]),
            visit(&["c"], &[]),
            visit(&["d", "e", "f"], &["z"]),
            visit(&["g"], &["x"]),
        ];
        for n in 2..=4 {
            let p = encode_admission_history(&visits, n).unwrap();
            let count = |tok: &str| p.input.iter().filter(|t| *t == tok).count();
            assert_eq!(count("%"), n);
            assert_eq!(count("∅"), n - 1);
            let expected: usize = visits[..n - 1]
                .iter()
                .map(|v| v.diagnoses.len() + v.treatments.len() + 2)
                .sum::<usize>()
                + visits[n - 1].diagnoses.len()
                + 1;
            assert_eq!(p.input.len(), expected);
        }
    }

    #[test]
    fn pairs_round_trip_through_vocab() {
        let patients = vec![Patient {
            id: "p".into(),
            visits: vec![
                visit(&["a", "b"], &["x"]),
                visit(&["c"], &["y", "z"]),
                visit(&["a"], &["x"]),
            ],
        }];
        let vocab = emr_vocab(&patients);
        let pairs = emr_pairs(&patients, &vocab).unwrap();
        assert_eq!(pairs.len(), 2);
        for (n, pair) in (2..).zip(&pairs) {
            pair.validate(&vocab).unwrap();
            let tokens = encode_admission_history(&patients[0].visits, n).unwrap();
            assert_eq!(vocab.input.decode(&pair.input).unwrap(), tokens.input);
            assert_eq!(vocab.output.decode(&pair.target).unwrap(), tokens.target);
        }
    }
}
