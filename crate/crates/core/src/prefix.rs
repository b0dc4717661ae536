//! Prompt construction for the three priming families (binary, value-based
//! and generative) under a hard context-window budget.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{check_newline_free, Polarity, Shot, Utterance};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("budget exceeded: minimal prompt needs {required} tokens, limit is {limit}")]
    BudgetExceeded { required: usize, limit: usize },
    #[error("invalid prompt style: {0}")]
    InvalidStyle(String),
    #[error("invalid budget: {0}")]
    InvalidBudget(String),
}

/// Surface tokens used when rendering shots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptStyle {
    pub arrow: String,
    pub example_separator: String,
    pub assignment: String,
    pub true_token: String,
    pub false_token: String,
    pub none_token: String,
}

impl Default for PromptStyle {
    fn default() -> Self {
        Self {
            arrow: "->".into(),
            example_separator: "\n".into(),
            assignment: " = ".into(),
            true_token: "true".into(),
            false_token: "false".into(),
            none_token: "None".into(),
        }
    }
}

impl PromptStyle {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.arrow.is_empty() {
            return Err(PromptError::InvalidStyle("arrow is empty".into()));
        }
        if self.example_separator.is_empty() {
            return Err(PromptError::InvalidStyle("example separator is empty".into()));
        }
        if self.true_token == self.false_token {
            return Err(PromptError::InvalidStyle(
                "true and false tokens are identical".into(),
            ));
        }
        for (name, token) in [
            ("arrow", &self.arrow),
            ("assignment", &self.assignment),
            ("true_token", &self.true_token),
            ("false_token", &self.false_token),
            ("none_token", &self.none_token),
        ] {
            if token.contains(self.example_separator.as_str()) {
                return Err(PromptError::InvalidStyle(format!(
                    "{name} contains the example separator"
                )));
            }
        }
        Ok(())
    }
}

/// Counts tokens of a prompt fragment. Implementations must satisfy
/// `count("") == 0` and be monotone under concatenation.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

impl<T: TokenCounter + ?Sized> TokenCounter for &T {
    fn count(&self, text: &str) -> usize {
        (**self).count(text)
    }
}

/// Whitespace word count scaled by 1.35 and rounded up, a conservative
/// stand-in for BPE sub-word inflation.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordCountEstimator;

impl TokenCounter for WordCountEstimator {
    fn count(&self, text: &str) -> usize {
        let words = text.split_whitespace().count();
        (words * 135).div_ceil(100)
    }
}

/// Which of the three prompt families a prompt belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrefixKind {
    Binary,
    Value,
    Generative,
}

impl PrefixKind {
    pub fn default_max_new_tokens(self) -> usize {
        match self {
            PrefixKind::Binary => 3,
            PrefixKind::Value => 20,
            PrefixKind::Generative => 64,
        }
    }

    pub fn default_reserve(self) -> usize {
        match self {
            PrefixKind::Binary => 4,
            PrefixKind::Value => 24,
            PrefixKind::Generative => 72,
        }
    }

    fn needs_both_polarities(self) -> bool {
        !matches!(self, PrefixKind::Generative)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetPolicy {
    pub context_limit: usize,
    pub reserve: usize,
    pub max_shots: usize,
}

/// GPT-2's context window.
pub const DEFAULT_CONTEXT_LIMIT: usize = 1024;

impl BudgetPolicy {
    pub fn new(context_limit: usize, reserve: usize, max_shots: usize) -> Self {
        Self {
            context_limit,
            reserve,
            max_shots,
        }
    }

    pub fn for_prefix(kind: PrefixKind, max_shots: usize) -> Self {
        Self::new(DEFAULT_CONTEXT_LIMIT, kind.default_reserve(), max_shots)
    }

    pub fn validate(&self, max_new_tokens: usize) -> Result<(), PromptError> {
        if self.max_shots == 0 {
            return Err(PromptError::InvalidBudget("max_shots must be at least 1".into()));
        }
        if self.reserve < max_new_tokens {
            return Err(PromptError::InvalidBudget(format!(
                "reserve {} is smaller than max_new_tokens {}",
                self.reserve, max_new_tokens
            )));
        }
        Ok(())
    }
}

/// A fully serialized prompt with its generation controls.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimedPrompt {
    pub text: String,
    pub stop_sequences: Vec<String>,
    pub max_new_tokens: usize,
    pub token_count: usize,
    pub shots_used: usize,
}

/// What the answer side of each line looks like.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family<'a> {
    Binary { class_name: &'a str },
    Value { slot: &'a str },
    Generative,
}

impl Family<'_> {
    pub fn kind(&self) -> PrefixKind {
        match self {
            Family::Binary { .. } => PrefixKind::Binary,
            Family::Value { .. } => PrefixKind::Value,
            Family::Generative => PrefixKind::Generative,
        }
    }

    /// Renders one answered example line.
    pub fn render_shot(&self, shot: &Shot, style: &PromptStyle) -> String {
        let answer = match (self, shot.polarity) {
            (Family::Binary { .. }, Polarity::Negative) => style.false_token.as_str(),
            (Family::Binary { .. }, _) => style.true_token.as_str(),
            (Family::Value { .. }, Polarity::Negative) => style.none_token.as_str(),
            (_, _) => shot.output.as_str(),
        };
        format!("{}{}", self.stub(&shot.input, style), answer)
    }

    /// `{input} {arrow} {name}{assignment}` with nothing after it.
    fn stub(&self, input: &str, style: &PromptStyle) -> String {
        match self {
            Family::Binary { class_name: name } | Family::Value { slot: name } => {
                format!("{input} {} {name}{}", style.arrow, style.assignment)
            }
            Family::Generative => format!("{input} {} ", style.arrow),
        }
    }

    /// The trailing unanswered line; trailing whitespace is dropped so the
    /// model produces the separating space itself.
    pub fn query_stub(&self, query: &str, style: &PromptStyle) -> String {
        self.stub(query, style).trim_end().to_string()
    }
}

pub fn build_binary_prefix(
    class_name: &str,
    shots: &[Shot],
    query: &Utterance,
    style: &PromptStyle,
    budget: &BudgetPolicy,
    counter: &dyn TokenCounter,
) -> Result<PrimedPrompt, PromptError> {
    if class_name.is_empty() {
        return Err(PromptError::Precondition("empty class name".into()));
    }
    build_prefix(Family::Binary { class_name }, shots, query.text(), style, budget, counter)
}

pub fn build_value_prefix(
    slot: &str,
    shots: &[Shot],
    query: &Utterance,
    style: &PromptStyle,
    budget: &BudgetPolicy,
    counter: &dyn TokenCounter,
) -> Result<PrimedPrompt, PromptError> {
    if slot.is_empty() {
        return Err(PromptError::Precondition("empty slot name".into()));
    }
    build_prefix(Family::Value { slot }, shots, query.text(), style, budget, counter)
}

pub fn build_generative_prefix(
    shots: &[Shot],
    query: &str,
    style: &PromptStyle,
    budget: &BudgetPolicy,
    counter: &dyn TokenCounter,
) -> Result<PrimedPrompt, PromptError> {
    build_prefix(Family::Generative, shots, query, style, budget, counter)
}

/// Shared builder: validates, packs shots into the budget, renders the
/// prompt and re-checks the budget against the exact rendered text.
pub fn build_prefix(
    family: Family<'_>,
    shots: &[Shot],
    query: &str,
    style: &PromptStyle,
    budget: &BudgetPolicy,
    counter: &dyn TokenCounter,
) -> Result<PrimedPrompt, PromptError> {
    style.validate()?;
    let kind = family.kind();
    let max_new_tokens = kind.default_max_new_tokens();
    budget.validate(max_new_tokens)?;
    check_newline_free(query).map_err(|e| PromptError::Precondition(e.to_string()))?;
    check_polarities(kind, shots)?;
    for shot in shots {
        if shot.input.contains(style.example_separator.as_str())
            || shot.output.contains(style.example_separator.as_str())
        {
            return Err(PromptError::Precondition(
                "shot contains the example separator".into(),
            ));
        }
    }

    let stub = family.query_stub(query, style);
    let stub_tokens = counter.count(&stub);
    let mut packed = pack_shots(family, shots, style, stub_tokens, budget, counter)?;

    loop {
        let mut text = String::new();
        for shot in &packed {
            text.push_str(&family.render_shot(shot, style));
            text.push_str(&style.example_separator);
        }
        text.push_str(&stub);
        let token_count = counter.count(&text);
        if token_count + budget.reserve <= budget.context_limit {
            return Ok(PrimedPrompt {
                text,
                stop_sequences: vec![style.example_separator.clone()],
                max_new_tokens,
                token_count,
                shots_used: packed.len(),
            });
        }
        // The counter is not additive over lines; shrink further.
        let polarities: Vec<Polarity> = packed.iter().map(|s| s.polarity).collect();
        match drop_index(&polarities, kind.needs_both_polarities()) {
            Some(i) => {
                packed.remove(i);
            }
            None => {
                return Err(PromptError::BudgetExceeded {
                    required: token_count + budget.reserve,
                    limit: budget.context_limit,
                })
            }
        }
    }
}

fn check_polarities(kind: PrefixKind, shots: &[Shot]) -> Result<(), PromptError> {
    if shots.is_empty() {
        return Err(PromptError::Precondition("no shots".into()));
    }
    if !kind.needs_both_polarities() {
        return Ok(());
    }
    let what = match kind {
        PrefixKind::Binary => ("true", "false"),
        _ => ("valued", "None"),
    };
    if shots.iter().any(|s| s.polarity == Polarity::Neutral) {
        return Err(PromptError::Precondition(format!(
            "{kind:?} prefixes take only positive and negative shots"
        )));
    }
    if !shots.iter().any(|s| s.polarity == Polarity::Positive) {
        return Err(PromptError::Precondition(format!("no {} shot", what.0)));
    }
    if !shots.iter().any(|s| s.polarity == Polarity::Negative) {
        return Err(PromptError::Precondition(format!("no {} shot", what.1)));
    }
    Ok(())
}

/// Index of the next shot to drop when shrinking, or `None` when the set is
/// already minimal. Shots go from the tail, except that the last remaining
/// shot of a required polarity is kept and the earliest shot of a polarity
/// that still has spares is dropped instead.
fn drop_index(polarities: &[Polarity], polarity_rule: bool) -> Option<usize> {
    let minimal = if polarity_rule { 2 } else { 1 };
    if polarities.len() <= minimal {
        return None;
    }
    let tail = polarities.len() - 1;
    if !polarity_rule {
        return Some(tail);
    }
    let count = |p: Polarity| polarities.iter().filter(|&&q| q == p).count();
    if count(polarities[tail]) > 1 {
        return Some(tail);
    }
    polarities.iter().position(|&p| count(p) > 1)
}

/// Keeps as many shots (in priority order) as fit: at most
/// `budget.max_shots`, with the rendered lines plus `query_stub_tokens` plus
/// `budget.reserve` within `budget.context_limit`. Binary and value families
/// always retain at least one positive and one negative shot.
pub fn pack_shots(
    family: Family<'_>,
    shots: &[Shot],
    style: &PromptStyle,
    query_stub_tokens: usize,
    budget: &BudgetPolicy,
    counter: &dyn TokenCounter,
) -> Result<Vec<Shot>, PromptError> {
    let kind = family.kind();
    check_polarities(kind, shots)?;
    let polarity_rule = kind.needs_both_polarities();
    let separator_tokens = counter.count(&style.example_separator);

    let mut kept: Vec<(Shot, usize)> = shots
        .iter()
        .map(|s| {
            let cost = counter.count(&family.render_shot(s, style)) + separator_tokens;
            (s.clone(), cost)
        })
        .collect();
    let fixed = query_stub_tokens + budget.reserve;
    let mut total: usize = kept.iter().map(|(_, c)| c).sum::<usize>() + fixed;

    while kept.len() > budget.max_shots || total > budget.context_limit {
        let polarities: Vec<Polarity> = kept.iter().map(|(s, _)| s.polarity).collect();
        match drop_index(&polarities, polarity_rule) {
            Some(i) => {
                let (_, cost) = kept.remove(i);
                total -= cost;
            }
            None => {
                return Err(PromptError::BudgetExceeded {
                    required: if total > budget.context_limit {
                        total
                    } else {
                        // cap smaller than the minimal legal set
                        kept.len()
                    },
                    limit: if total > budget.context_limit {
                        budget.context_limit
                    } else {
                        budget.max_shots
                    },
                });
            }
        }
    }
    Ok(kept.into_iter().map(|(s, _)| s).collect())
}
