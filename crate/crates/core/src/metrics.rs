//! Automatic evaluation: distinct-n, perplexity under an evaluation LM, and
//! attribute accuracy through a pluggable classifier.

use std::collections::HashSet;
use std::hash::Hash;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::ensemble::AttributeEnsemble;
use crate::error::{Error, Result};
use crate::ngram::NGramModel;
use crate::vocab::{TokenId, Vocabulary};

/// Mean over texts of `|unique n-grams| / |n-grams|`.
pub fn distinctness<T: Hash + Eq>(texts: &[Vec<T>], n: usize) -> Result<f64> {
    check_distinct_inputs(texts, n)?;
    let total: f64 = texts
        .iter()
        .map(|t| {
            let grams = t.len() - n + 1;
            let unique: HashSet<&[T]> = t.windows(n).collect();
            unique.len() as f64 / grams as f64
        })
        .sum();
    Ok(total / texts.len() as f64)
}

/// Corpus-pooled variant: unique n-grams across all texts over all n-grams.
pub fn distinctness_pooled<T: Hash + Eq>(texts: &[Vec<T>], n: usize) -> Result<f64> {
    check_distinct_inputs(texts, n)?;
    let mut unique = HashSet::new();
    let mut grams = 0usize;
    for t in texts {
        grams += t.len() - n + 1;
        unique.extend(t.windows(n));
    }
    Ok(unique.len() as f64 / grams as f64)
}

fn check_distinct_inputs<T>(texts: &[Vec<T>], n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Config("distinct-n needs n >= 1".into()));
    }
    if texts.is_empty() {
        return Err(Error::EmptyInput("distinct-n over no texts"));
    }
    let short: Vec<String> = texts
        .iter()
        .enumerate()
        .filter(|(_, t)| t.len() < n)
        .map(|(i, _)| i.to_string())
        .collect();
    if !short.is_empty() {
        return Err(Error::TextTooShort(format!(
            "texts shorter than {n} tokens at indices [{}]",
            short.join(", ")
        )));
    }
    Ok(())
}

/// Mean per-text perplexity.
pub fn corpus_perplexity(texts: &[Vec<TokenId>], eval_model: &NGramModel) -> Result<f64> {
    if texts.is_empty() {
        return Err(Error::EmptyInput("perplexity over no texts"));
    }
    let mut total = 0.0;
    for t in texts {
        total += eval_model.sequence_perplexity(t)?;
    }
    Ok(total / texts.len() as f64)
}

/// Mean perplexity of continuations conditioned on their prompts; prompt
/// tokens are context only and are not scored.
pub fn continuation_perplexity(
    items: &[(Vec<TokenId>, Vec<TokenId>)],
    eval_model: &NGramModel,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::EmptyInput("perplexity over no texts"));
    }
    let mut total = 0.0;
    for (prompt, text) in items {
        total += eval_model.conditional_perplexity(prompt, text)?;
    }
    Ok(total / items.len() as f64)
}

/// Re-expresses ids from one vocabulary in another by surface form.
pub fn retokenize(ids: &[TokenId], from: &Vocabulary, to: &Vocabulary) -> Vec<TokenId> {
    if from == to {
        return ids.to_vec();
    }
    ids.iter()
        .map(|&id| to.id_or_unk(from.token(id).unwrap_or_default()))
        .collect()
}

/// Sequence-level Bayes posterior over classes, in label order:
/// `P(c | x) ∝ P(c) · Π_j P_c(x_j | x_<j)`.
pub fn bayes_classify(ensemble: &AttributeEnsemble, tokens: &[TokenId]) -> Vec<f64> {
    let scores: Vec<f64> = ensemble
        .class_models()
        .iter()
        .zip(ensemble.priors())
        .map(|(m, p)| p.ln() + m.log_likelihood(&[], tokens))
        .collect();
    normalize_log(&scores)
}

/// Softmax of log-scores.
pub fn normalize_log(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return vec![1.0 / scores.len() as f64; scores.len()];
    }
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// What a classifier says about one text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: String,
    /// Scalar score from scorers that return one number (e.g. toxicity).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub score: Option<f64>,
}

pub trait AttributeClassifier: Sync {
    fn classify(&self, text: &str) -> Result<Classification>;
}

/// Classifies with the ensemble's own class models.
pub struct BayesClassifier<'a> {
    pub ensemble: &'a AttributeEnsemble,
}

impl AttributeClassifier for BayesClassifier<'_> {
    fn classify(&self, text: &str) -> Result<Classification> {
        let post = bayes_classify(self.ensemble, &self.ensemble.tokenize(text));
        let best = crate::dist::ranked_ids(&post)[0] as usize;
        Ok(Classification {
            label: self.ensemble.labels()[best].clone(),
            score: None,
        })
    }
}

/// HTTP/JSON scorer: one `POST {"text": ...}` per text.
///
/// The value at `score_path` (dot-separated, numeric segments index arrays) is
/// read as either a `{label: score}` object (argmax), a label string, or a
/// number compared against `threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalClassifier {
    pub endpoint: String,
    #[serde(with = "millis")]
    pub timeout: Duration,
    pub score_path: String,
    /// Label for scalar scores `>= threshold`.
    pub positive_label: String,
    /// Label for scalar scores `< threshold`.
    pub negative_label: String,
    pub threshold: f64,
    pub retries: u32,
    #[serde(with = "millis")]
    pub backoff: Duration,
}

impl ExternalClassifier {
    pub fn new(endpoint: impl Into<String>) -> Self {
        ExternalClassifier {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(10),
            score_path: "score".into(),
            positive_label: "positive".into(),
            negative_label: "negative".into(),
            threshold: 0.5,
            retries: 2,
            backoff: Duration::from_millis(200),
        }
    }

    fn request(&self, agent: &ureq::Agent, text: &str) -> Result<Value> {
        let body = serde_json::json!({ "text": text });
        let mut resp = agent
            .post(&self.endpoint)
            .send_json(&body)
            .map_err(|e| Error::Classifier(format!("{}: {e}", self.endpoint)))?;
        resp.body_mut()
            .read_json::<Value>()
            .map_err(|e| Error::Classifier(format!("bad response body: {e}")))
    }

    fn interpret(&self, response: &Value) -> Result<Classification> {
        let value = lookup_path(response, &self.score_path).ok_or_else(|| {
            Error::Classifier(format!("response has no field `{}`", self.score_path))
        })?;
        match value {
            Value::Number(n) => {
                let s = n
                    .as_f64()
                    .ok_or_else(|| Error::Classifier("score is not a number".into()))?;
                let label = if s >= self.threshold {
                    &self.positive_label
                } else {
                    &self.negative_label
                };
                Ok(Classification {
                    label: label.clone(),
                    score: Some(s),
                })
            }
            Value::String(label) => Ok(Classification {
                label: label.clone(),
                score: None,
            }),
            Value::Object(map) => {
                let mut best: Option<(&String, f64)> = None;
                // serde_json maps iterate in key order, so ties go to the first label.
                for (label, v) in map {
                    let s = v.as_f64().ok_or_else(|| {
                        Error::Classifier(format!("score for `{label}` is not a number"))
                    })?;
                    if best.is_none_or(|(_, b)| s > b) {
                        best = Some((label, s));
                    }
                }
                let (label, _) =
                    best.ok_or_else(|| Error::Classifier("empty score object".into()))?;
                Ok(Classification {
                    label: label.clone(),
                    score: None,
                })
            }
            other => Err(Error::Classifier(format!("unusable score value {other}"))),
        }
    }
}

impl AttributeClassifier for ExternalClassifier {
    fn classify(&self, text: &str) -> Result<Classification> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .http_status_as_error(true)
            .build()
            .into();
        let mut attempt = 0;
        loop {
            match self.request(&agent, text).and_then(|v| self.interpret(&v)) {
                Ok(c) => return Ok(c),
                Err(e) if attempt < self.retries => {
                    log::debug!("classifier attempt {} failed: {e}", attempt + 1);
                    thread::sleep(self.backoff * 2u32.pow(attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

fn lookup_path<'v>(value: &'v Value, path: &str) -> Option<&'v Value> {
    path.split('.')
        .filter(|s| !s.is_empty())
        .try_fold(value, |v, seg| match v {
            Value::Object(map) => map.get(seg),
            Value::Array(items) => seg.parse::<usize>().ok().and_then(|i| items.get(i)),
            _ => None,
        })
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// The two classifier backends.
pub enum ClassifierHandle<'a> {
    Bayes(BayesClassifier<'a>),
    External(ExternalClassifier),
}

impl ClassifierHandle<'_> {
    pub fn as_classifier(&self) -> &dyn AttributeClassifier {
        match self {
            ClassifierHandle::Bayes(c) => c,
            ClassifierHandle::External(c) => c,
        }
    }

    pub fn default_in_flight(&self) -> usize {
        match self {
            ClassifierHandle::Bayes(_) => 1,
            ClassifierHandle::External(_) => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub index: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    /// `None` when more than [`MAX_FAILURE_RATE`] of the calls failed.
    pub accuracy: Option<f64>,
    /// Mean scalar score over scored texts, when the classifier returns one.
    pub mean_score: Option<f64>,
    pub n_texts: usize,
    pub n_scored: usize,
    pub failures: Vec<ItemFailure>,
}

pub const MAX_FAILURE_RATE: f64 = 0.10;

impl AccuracyReport {
    pub fn failed(&self) -> bool {
        self.accuracy.is_none()
    }
}

/// Fraction of texts classified as their generation target.
///
/// Texts are scored with up to `max_in_flight` concurrent classifier calls.
/// Accuracy is over successfully scored texts; the aggregate is withheld when
/// more than 10% of the calls fail.
pub fn attribute_accuracy(
    items: &[(String, String)],
    classifier: &dyn AttributeClassifier,
    max_in_flight: usize,
) -> Result<AccuracyReport> {
    if items.is_empty() {
        return Err(Error::EmptyInput("accuracy over no texts"));
    }
    let results: Vec<Mutex<Option<Result<Classification>>>> =
        items.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = max_in_flight.clamp(1, items.len());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = classifier.classify(&items[i].0);
                *results[i].lock().expect("result slot") = Some(r);
            });
        }
    });

    let mut correct = 0usize;
    let mut scored = 0usize;
    let mut score_sum = 0.0;
    let mut n_scores = 0usize;
    let mut failures = Vec::new();
    for (i, slot) in results.into_iter().enumerate() {
        match slot.into_inner().expect("result slot").expect("every item visited") {
            Ok(c) => {
                scored += 1;
                if c.label == items[i].1 {
                    correct += 1;
                }
                if let Some(s) = c.score {
                    score_sum += s;
                    n_scores += 1;
                }
            }
            Err(e) => failures.push(ItemFailure {
                index: i,
                message: e.to_string(),
            }),
        }
    }
    let failure_rate = failures.len() as f64 / items.len() as f64;
    let accuracy = (failure_rate <= MAX_FAILURE_RATE && scored > 0)
        .then(|| correct as f64 / scored as f64);
    Ok(AccuracyReport {
        accuracy,
        mean_score: (n_scores > 0).then(|| score_sum / n_scores as f64),
        n_texts: items.len(),
        n_scored: scored,
        failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Attribute accuracy; `None` if the classifier failed too often.
    pub accuracy: Option<f64>,
    /// Mean scalar classifier score (toxicity-style scorers).
    pub mean_toxicity: Option<f64>,
    pub mean_ppl: f64,
    pub dist1: f64,
    pub dist2: f64,
    pub dist3: f64,
    pub n_texts: usize,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["acc", "mean_toxicity", "ppl", "dist1", "dist2", "dist3", "n_texts"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            opt(self.accuracy),
            opt(self.mean_toxicity),
            self.mean_ppl.to_string(),
            self.dist1.to_string(),
            self.dist2.to_string(),
            self.dist3.to_string(),
            self.n_texts.to_string(),
        ])?;
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::EnsembleConfig;
    use crate::ngram::Smoothing;
    use crate::vocab::{TokenizerConfig, UNK_ID};

    fn words(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn distinct_hand_counts() {
        assert_eq!(distinctness(&[words("the cat the cat")], 1).unwrap(), 0.5);
        // bigrams: the-cat, cat-the, the-cat -> 2 unique of 3
        assert_eq!(distinctness(&[words("the cat the cat")], 2).unwrap(), 2.0 / 3.0);
        assert_eq!(distinctness(&[words("a b c d")], 3).unwrap(), 1.0);
        let pair = [words("x x y y"), words("p q r s")];
        assert_eq!(distinctness(&pair, 1).unwrap(), 0.75);
        // pooled: {x, y, p, q, r, s} over 8
        assert_eq!(distinctness_pooled(&pair, 1).unwrap(), 0.75);
        assert_eq!(
            distinctness_pooled(&[words("a b"), words("a b")], 1).unwrap(),
            0.5
        );
    }

    #[test]
    fn distinct_short_text_lists_indices() {
        let texts = [words("a b c"), words("a"), words("b c d"), words("")];
        match distinctness(&texts, 2) {
            Err(Error::TextTooShort(msg)) => assert!(msg.contains("[1, 3]"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn perplexity_aggregation() {
        let m = NGramModel::train_texts(
            &["a b".to_string()],
            &TokenizerConfig::default(),
            2,
            Smoothing::highest_order_only(2, 0.01),
        )
        .unwrap();
        let v = m.vocab_size() as f64;
        let uniform = continuation_perplexity(&[(vec![UNK_ID], vec![UNK_ID])], &m).unwrap();
        assert!((uniform - v).abs() < 1e-9);
        assert!(corpus_perplexity(&[], &m).is_err());
    }

    #[test]
    fn bayes_sigmoid_closed_form() {
        let labeled = vec![
            ("pos".to_string(), vec!["good fun good".to_string(), "fun".into()]),
            ("neg".to_string(), vec!["bad dull bad".to_string(), "dull".into()]),
        ];
        let e = AttributeEnsemble::build(&labeled, None, &EnsembleConfig::with_order(2)).unwrap();
        let toks = e.tokenize("good fun");
        let gap = e.class_models()[0].log_likelihood(&[], &toks)
            - e.class_models()[1].log_likelihood(&[], &toks);
        let post = bayes_classify(&e, &toks);
        let sigmoid = 1.0 / (1.0 + (-gap).exp());
        assert!((post[0] - sigmoid).abs() < 1e-12);
        assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(post[0] > 0.5);
    }

    #[test]
    fn bayes_identical_models_uniform() {
        let docs = vec!["some words here".to_string()];
        let labeled = vec![("a".to_string(), docs.clone()), ("b".to_string(), docs)];
        let e = AttributeEnsemble::build(&labeled, None, &EnsembleConfig::with_order(2)).unwrap();
        let post = bayes_classify(&e, &e.tokenize("words here some"));
        assert_eq!(post, vec![0.5, 0.5]);
    }

    #[test]
    fn normalize_log_is_shift_invariant() {
        let a = normalize_log(&[-3.0, -1.0, -2.0]);
        let b = normalize_log(&[-1003.0, -1001.0, -1002.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    struct Fixed(&'static str);

    impl AttributeClassifier for Fixed {
        fn classify(&self, _: &str) -> Result<Classification> {
            Ok(Classification {
                label: self.0.into(),
                score: None,
            })
        }
    }

    #[test]
    fn accuracy_counts_matches() {
        let items: Vec<(String, String)> = (0..10)
            .map(|i| (format!("t{i}"), if i < 7 { "pos" } else { "neg" }.to_string()))
            .collect();
        let r = attribute_accuracy(&items, &Fixed("pos"), 3).unwrap();
        assert_eq!(r.accuracy, Some(0.7));
        assert!(attribute_accuracy(&[], &Fixed("pos"), 1).is_err());
    }

    #[test]
    fn score_path_interpretation() {
        let mut c = ExternalClassifier::new("http://unused");
        c.score_path = "attributeScores.TOXICITY.summaryScore.value".into();
        c.positive_label = "toxic".into();
        c.negative_label = "nontoxic".into();
        let v = serde_json::json!({"attributeScores": {"TOXICITY": {"summaryScore": {"value": 0.8}}}});
        assert_eq!(
            c.interpret(&v).unwrap(),
            Classification {
                label: "toxic".into(),
                score: Some(0.8)
            }
        );
        c.score_path = "scores".into();
        let v = serde_json::json!({"scores": {"neg": 0.2, "pos": 0.8}});
        assert_eq!(c.interpret(&v).unwrap().label, "pos");
        c.score_path = "out.1".into();
        let v = serde_json::json!({"out": ["x", "neg"]});
        assert_eq!(c.interpret(&v).unwrap().label, "neg");
        c.score_path = "missing".into();
        assert!(c.interpret(&v).is_err());
    }
}
