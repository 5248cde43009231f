use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bench::RunRecord;
use super::io::Id;
use crate::error::{Error, Result};
use crate::lm::TokenId;
use crate::metrics::{sign_test, PairwiseComparison, SignTestResult, Verdict};
use crate::text::TextCodec;

/// A passage as shown to graders: ids always, decoded text when a codec is known.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub tokens: Vec<TokenId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

/// Blind worksheet row; carries no system identity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorksheetRow {
    pub row_id: usize,
    pub prompt: Passage,
    pub first: Passage,
    pub second: Passage,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRow {
    pub row_id: usize,
    pub prompt_id: Id,
    pub system_a: String,
    pub system_b: String,
    pub first_is_a: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preference {
    First,
    Second,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRow {
    pub row_id: usize,
    pub verdict: Preference,
}

fn system_of(records: &[RunRecord], side: &str) -> Result<String> {
    let names: BTreeSet<&str> = records.iter().map(|r| r.system.as_str()).collect();
    match names.len() {
        1 => Ok(names.into_iter().next().unwrap_or_default().to_string()),
        0 => Err(Error::InvalidInput(format!(
            "records for system {side} are empty"
        ))),
        _ => Err(Error::InvalidInput(format!(
            "records for system {side} mix systems: {}",
            names.into_iter().collect::<Vec<_>>().join(", ")
        ))),
    }
}

fn by_prompt<'a>(records: &'a [RunRecord], side: &str) -> Result<HashMap<&'a Id, &'a RunRecord>> {
    let mut map = HashMap::new();
    for r in records {
        if map.insert(&r.prompt_id, r).is_some() {
            return Err(Error::InvalidInput(format!(
                "records for system {side} repeat prompt {}",
                r.prompt_id
            )));
        }
    }
    Ok(map)
}

/// Pairs the two systems' continuations per prompt in a seeded random order.
///
/// `prompt_ids` selects and orders the rows; by default every prompt of `records_a` is used.
pub fn pairwise_export(
    records_a: &[RunRecord],
    records_b: &[RunRecord],
    prompt_ids: Option<&[Id]>,
    order_seed: u64,
    codec: Option<&TextCodec>,
) -> Result<(Vec<WorksheetRow>, Vec<KeyRow>)> {
    let system_a = system_of(records_a, "A")?;
    let system_b = system_of(records_b, "B")?;
    let a = by_prompt(records_a, "A")?;
    let b = by_prompt(records_b, "B")?;

    let ids: Vec<Id> = match prompt_ids {
        Some(ids) => ids.to_vec(),
        None => {
            let extra: BTreeSet<&Id> = b
                .keys()
                .filter(|id| !a.contains_key(*id))
                .copied()
                .collect();
            if !extra.is_empty() {
                return Err(misaligned("A", extra));
            }
            records_a.iter().map(|r| r.prompt_id.clone()).collect()
        }
    };
    let missing_a: BTreeSet<&Id> = ids.iter().filter(|id| !a.contains_key(id)).collect();
    if !missing_a.is_empty() {
        return Err(misaligned("A", missing_a));
    }
    let missing_b: BTreeSet<&Id> = ids.iter().filter(|id| !b.contains_key(id)).collect();
    if !missing_b.is_empty() {
        return Err(misaligned("B", missing_b));
    }

    let passage = |tokens: &[TokenId]| Passage {
        tokens: tokens.to_vec(),
        text: codec.map(|c| c.decode(tokens)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(order_seed);
    let mut sheet = Vec::with_capacity(ids.len());
    let mut key = Vec::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        let (ra, rb) = (a[id], b[id]);
        let first_is_a = rng.random_bool(0.5);
        let (first, second) = if first_is_a { (ra, rb) } else { (rb, ra) };
        sheet.push(WorksheetRow {
            row_id: i + 1,
            prompt: passage(&ra.generation.prompt),
            first: passage(&first.generation.continuation),
            second: passage(&second.generation.continuation),
        });
        key.push(KeyRow {
            row_id: i + 1,
            prompt_id: id.clone(),
            system_a: system_a.clone(),
            system_b: system_b.clone(),
            first_is_a,
        });
    }
    Ok((sheet, key))
}

fn misaligned(side: &str, ids: BTreeSet<&Id>) -> Error {
    let list: Vec<&str> = ids.iter().map(|i| i.0.as_str()).collect();
    Error::InvalidInput(format!(
        "prompt ids missing from system {side}: {}",
        list.join(", ")
    ))
}

/// De-blinds verdicts through the key and runs the sign test.
pub fn pairwise_ingest(
    verdicts: &[VerdictRow],
    key: &[KeyRow],
) -> Result<(Vec<PairwiseComparison>, SignTestResult)> {
    let key_by_row: BTreeMap<usize, &KeyRow> = key.iter().map(|k| (k.row_id, k)).collect();
    if key_by_row.len() != key.len() {
        return Err(Error::InvalidInput("key file repeats a row id".into()));
    }
    let mut seen = BTreeSet::new();
    let mut comparisons = Vec::with_capacity(verdicts.len());
    for v in verdicts {
        let k = key_by_row.get(&v.row_id).ok_or_else(|| {
            Error::InvalidInput(format!("verdict row {} is not in the key", v.row_id))
        })?;
        if !seen.insert(v.row_id) {
            return Err(Error::InvalidInput(format!(
                "verdict row {} appears twice",
                v.row_id
            )));
        }
        let verdict = match (v.verdict, k.first_is_a) {
            (Preference::Neutral, _) => Verdict::Neutral,
            (Preference::First, true) | (Preference::Second, false) => Verdict::AWins,
            (Preference::First, false) | (Preference::Second, true) => Verdict::BWins,
        };
        comparisons.push(PairwiseComparison {
            prompt_id: k.prompt_id.0.clone(),
            system_a: k.system_a.clone(),
            system_b: k.system_b.clone(),
            verdict,
        });
    }
    if seen.len() < key.len() {
        log::warn!("{} key rows have no verdict", key.len() - seen.len());
    }
    let result = sign_test(&comparisons)?;
    Ok((comparisons, result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoding::{DecodeSpec, GenerationRecord, StopReason};
    use crate::lm::Vocabulary;

    fn records(system: &str, ids: &[&str]) -> Vec<RunRecord> {
        ids.iter()
            .enumerate()
            .map(|(i, id)| RunRecord {
                system: system.into(),
                prompt_id: Id((*id).into()),
                prompt_index: i,
                generation: GenerationRecord {
                    vocab: Vocabulary::new(10, None).unwrap(),
                    prompt: vec![1, 2],
                    continuation: vec![if system == "alpha" { 3 } else { 4 }; 3],
                    spec: DecodeSpec::Greedy,
                    max_length: 3,
                    seed: 0,
                    stop_reason: StopReason::MaxLength,
                },
            })
            .collect()
    }

    #[test]
    fn export_is_blind_and_deterministic() {
        let ids: Vec<String> = (0..150).map(|i| format!("p{i}")).collect();
        let ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        let a = records("alpha", &ids);
        let b = records("beta", &ids);
        let (sheet, key) = pairwise_export(&a, &b, None, 9, None).unwrap();
        assert_eq!(sheet.len(), 150);
        let text = crate::harness::to_jsonl(&sheet).unwrap();
        assert!(!text.contains("alpha") && !text.contains("beta"));
        assert_eq!(pairwise_export(&a, &b, None, 9, None).unwrap().1, key);
        let firsts = key.iter().filter(|k| k.first_is_a).count();
        assert!(firsts > 40 && firsts < 110);
        for (row, k) in sheet.iter().zip(&key) {
            assert_eq!(row.first.tokens[0] == 3, k.first_is_a);
        }
    }

    #[test]
    fn misaligned_ids_are_named() {
        let a = records("alpha", &["x", "y"]);
        let b = records("beta", &["y", "z"]);
        let err = pairwise_export(&a, &b, None, 0, None)
            .unwrap_err()
            .to_string();
        assert!(err.contains('z'), "{err}");
        let err = pairwise_export(&a, &b, Some(&[Id("x".into())]), 0, None)
            .unwrap_err()
            .to_string();
        assert!(err.contains("system B") && err.contains('x'), "{err}");
        assert_eq!(
            pairwise_export(&a, &b, Some(&[Id("y".into())]), 0, None)
                .unwrap()
                .0
                .len(),
            1
        );
    }

    #[test]
    fn ingest_deblinds() {
        let ids = ["a", "b", "c", "d"];
        let (_, key) = pairwise_export(
            &records("alpha", &ids),
            &records("beta", &ids),
            None,
            5,
            None,
        )
        .unwrap();
        let verdicts: Vec<VerdictRow> = key
            .iter()
            .map(|k| VerdictRow {
                row_id: k.row_id,
                verdict: if k.first_is_a {
                    Preference::First
                } else {
                    Preference::Second
                },
            })
            .collect();
        let (cmp, result) = pairwise_ingest(&verdicts, &key).unwrap();
        assert!(cmp
            .iter()
            .all(|c| c.verdict == Verdict::AWins && c.system_a == "alpha"));
        assert_eq!((result.wins_a, result.wins_b), (4, 0));

        let unknown = [VerdictRow {
            row_id: 99,
            verdict: Preference::First,
        }];
        assert!(pairwise_ingest(&unknown, &key).is_err());
        let twice = [verdicts[0], verdicts[0]];
        assert!(pairwise_ingest(&twice, &key).is_err());
    }
}
