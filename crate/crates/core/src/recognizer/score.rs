use crate::error::{Error, Result};

/// Character-level Levenshtein distance.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Character error rate: edit distance normalized by the reference length.
pub fn cer(prediction: &str, reference: &str) -> Result<f64> {
    let n = reference.chars().count();
    if n == 0 {
        return Err(Error::InvalidArgument("empty reference".into()));
    }
    Ok(edit_distance(prediction, reference) as f64 / n as f64)
}

/// Word error rate over isolated words: fraction of inexact predictions.
pub fn wer(predictions: &[String], references: &[String]) -> Result<f64> {
    if predictions.len() != references.len() {
        return Err(Error::shape(
            format!("{} predictions", references.len()),
            predictions.len(),
        ));
    }
    if references.is_empty() {
        return Err(Error::InvalidArgument("no references".into()));
    }
    let wrong = predictions
        .iter()
        .zip(references)
        .filter(|(p, r)| p != r)
        .count();
    Ok(wrong as f64 / references.len() as f64)
}

/// Mean per-sample CER.
pub fn mean_cer(predictions: &[String], references: &[String]) -> Result<f64> {
    if predictions.len() != references.len() {
        return Err(Error::shape(
            format!("{} predictions", references.len()),
            predictions.len(),
        ));
    }
    if references.is_empty() {
        return Err(Error::InvalidArgument("no references".into()));
    }
    let total = predictions
        .iter()
        .zip(references)
        .map(|(p, r)| cer(p, r))
        .sum::<Result<f64>>()?;
    Ok(total / references.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cer_examples() {
        assert_eq!(cer("and", "and").unwrap(), 0.0);
        assert!((cer("ard", "and").unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(cer("", "and").unwrap(), 1.0);
        assert!(cer("x", "").is_err());
    }

    #[test]
    fn wer_examples() {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        assert_eq!(wer(&s(&["a", "b"]), &s(&["a", "b"])).unwrap(), 0.0);
        assert_eq!(
            wer(&s(&["a", "b", "c", "x"]), &s(&["a", "b", "c", "d"])).unwrap(),
            0.25
        );
        assert!(wer(&s(&["a"]), &s(&["a", "b"])).is_err());
    }

    proptest! {
        #[test]
        fn cer_bounds(p in "[a-c]{0,8}", r in "[a-c]{1,8}") {
            let c = cer(&p, &r).unwrap();
            prop_assert!(c >= 0.0);
            prop_assert!(c <= (p.len() + r.len()) as f64 / r.len() as f64);
            prop_assert_eq!(cer(&r, &r).unwrap(), 0.0);
        }
    }
}
