use std::collections::HashMap;

use super::{check_aligned, MetricError};

pub const MAX_ORDER: usize = 4;

/// Stand-in precision numerator for an order with no matching n-grams.
pub const BLEU_EPSILON: f64 = 1e-9;

fn ngram_counts<'t, 'a>(tokens: &'t [&'a str], n: usize) -> HashMap<&'t [&'a str], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU-4 with brevity penalty on a 0-100 scale.
///
/// Tokens are whitespace-separated. Clipped n-gram matches are pooled over
/// the corpus; an order with no candidate n-grams at all (every hypothesis
/// shorter than n) is left out of the geometric mean, and an order with
/// candidates but no matches uses [`BLEU_EPSILON`] as its match count. The
/// reference length per item is the closest reference length, shorter on ties.
pub fn corpus_bleu(hypotheses: &[String], references: &[Vec<String>]) -> Result<f64, MetricError> {
    check_aligned(references.len(), hypotheses.len())?;
    if hypotheses.is_empty() {
        return Err(MetricError::Empty);
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;

    for (hyp, refs) in hypotheses.iter().zip(references) {
        if refs.is_empty() {
            return Err(MetricError::Empty);
        }
        let hyp_tokens: Vec<&str> = hyp.split_whitespace().collect();
        let ref_tokens: Vec<Vec<&str>> = refs.iter().map(|r| r.split_whitespace().collect()).collect();
        hyp_len += hyp_tokens.len();
        ref_len += ref_tokens
            .iter()
            .map(Vec::len)
            .min_by_key(|&len| (len.abs_diff(hyp_tokens.len()), len))
            .expect("at least one reference");

        for n in 1..=MAX_ORDER {
            let hyp_counts = ngram_counts(&hyp_tokens, n);
            let mut max_ref: HashMap<&[&str], usize> = HashMap::new();
            for r in &ref_tokens {
                for (gram, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(gram).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            totals[n - 1] += hyp_counts.values().sum::<usize>();
            matches[n - 1] += hyp_counts
                .iter()
                .map(|(gram, &c)| c.min(max_ref.get(gram).copied().unwrap_or(0)))
                .sum::<usize>();
        }
    }

    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 0..MAX_ORDER {
        if totals[n] == 0 {
            continue;
        }
        let numerator = if matches[n] == 0 {
            BLEU_EPSILON
        } else {
            matches[n] as f64
        };
        log_sum += (numerator / totals[n] as f64).ln();
        orders += 1;
    }
    let precision = (log_sum / orders as f64).exp();
    let brevity = if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * brevity * precision)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn identical_is_100() {
        let h = v(&["the hilton is near chinatown", "ok"]);
        let r: Vec<Vec<String>> = h.iter().map(|x| vec![x.clone()]).collect();
        assert!((corpus_bleu(&h, &r).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn empty_hypotheses_score_zero() {
        let h = v(&["", ""]);
        let r = vec![v(&["a b c"]), v(&["d"])];
        assert_eq!(corpus_bleu(&h, &r).unwrap(), 0.0);
    }

    #[test]
    fn short_hypothesis_uses_available_orders() {
        // orders 1-3 match fully, no 4-grams; BP = exp(1 - 4/3)
        let b = corpus_bleu(&v(&["the cat sat"]), &[v(&["the cat sat down"])]).unwrap();
        assert!((b - 100.0 * (1.0f64 - 4.0 / 3.0).exp()).abs() < 1e-9);
    }

    #[test]
    fn errors() {
        assert_eq!(corpus_bleu(&[], &[]), Err(MetricError::Empty));
        assert!(corpus_bleu(&v(&["a"]), &[]).is_err());
        assert_eq!(corpus_bleu(&v(&["a"]), &[vec![]]), Err(MetricError::Empty));
    }

    #[test]
    fn clipping() {
        // "the the the the" vs "the cat": unigram clipped to 1/4
        let b = corpus_bleu(&v(&["the the the the"]), &[v(&["the cat"])]).unwrap();
        // p1 = 1/4, p2..p4 = eps/3, eps/2, eps/1; hyp longer than ref so BP = 1
        let log_p = (0.25f64).ln()
            + (BLEU_EPSILON / 3.0).ln()
            + (BLEU_EPSILON / 2.0).ln()
            + BLEU_EPSILON.ln();
        assert!((b - 100.0 * (log_p / 4.0).exp()).abs() < 1e-12);
    }
}
