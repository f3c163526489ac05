//! Explanations as predictors of activation.
//!
//! An explanation turns concept scores into a predicted activation per input
//! and is scored by the correlation of that prediction with the neuron's real
//! activations.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{ActivationVector, ConceptVector};
use crate::error::{Error, Result};
use crate::estimator::pearson;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formula {
    Leaf(String),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearTerm {
    pub weight: f64,
    pub concept_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub lower: f64,
    pub upper: f64,
    pub formula: Formula,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Explanation {
    Simple(String),
    Linear(Vec<LinearTerm>),
    Compositional(Formula),
    Clustered(Vec<Cluster>),
}

/// Concept scores by id.
pub type ConceptMap<'a> = HashMap<&'a str, &'a [f64]>;

pub fn concept_map<'a, I>(concepts: I) -> ConceptMap<'a>
where
    I: IntoIterator<Item = &'a ConceptVector>,
{
    concepts.into_iter().map(|c| (c.concept_id.as_str(), c.values.as_slice())).collect()
}

impl Formula {
    pub fn leaf(id: impl Into<String>) -> Self {
        Formula::Leaf(id.into())
    }

    pub fn negate(f: Formula) -> Self {
        Formula::Not(Box::new(f))
    }

    fn collect_concepts<'a>(&'a self, out: &mut BTreeSet<&'a str>) {
        match self {
            Formula::Leaf(id) => {
                out.insert(id);
            }
            Formula::Not(f) => f.collect_concepts(out),
            Formula::And(fs) | Formula::Or(fs) => fs.iter().for_each(|f| f.collect_concepts(out)),
        }
    }

    fn check(&self) -> Result<()> {
        match self {
            Formula::Leaf(_) => Ok(()),
            Formula::Not(f) => f.check(),
            Formula::And(fs) | Formula::Or(fs) => {
                if fs.is_empty() {
                    return Err(Error::EmptyExplanation);
                }
                fs.iter().try_for_each(Formula::check)
            }
        }
    }

    /// Probabilistic value at one input. Children fold left to right.
    pub fn eval(&self, concepts: &ConceptMap<'_>, i: usize) -> Result<f64> {
        Ok(match self {
            Formula::Leaf(id) => lookup(concepts, id)?[i],
            Formula::Not(f) => 1.0 - f.eval(concepts, i)?,
            Formula::And(fs) => {
                let mut acc = first(fs)?.eval(concepts, i)?;
                for f in &fs[1..] {
                    acc *= f.eval(concepts, i)?;
                }
                acc
            }
            Formula::Or(fs) => {
                let mut acc = first(fs)?.eval(concepts, i)?;
                for f in &fs[1..] {
                    let y = f.eval(concepts, i)?;
                    acc = 1.0 - (1.0 - acc) * (1.0 - y);
                }
                acc
            }
        })
    }

    fn precedence(&self) -> u8 {
        match self {
            Formula::Or(_) => 1,
            Formula::And(_) => 2,
            Formula::Not(_) => 3,
            Formula::Leaf(_) => 4,
        }
    }

    fn fmt_child(&self, f: &mut fmt::Formatter<'_>, parent: u8) -> fmt::Result {
        if self.precedence() <= parent && !matches!(self, Formula::Not(_)) {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

fn first(fs: &[Formula]) -> Result<&Formula> {
    fs.first().ok_or(Error::EmptyExplanation)
}

fn lookup<'a>(concepts: &ConceptMap<'a>, id: &str) -> Result<&'a [f64]> {
    concepts.get(id).copied().ok_or_else(|| Error::UnknownConcept(id.to_string()))
}

fn write_ident(f: &mut fmt::Formatter<'_>, id: &str) -> fmt::Result {
    let plain = id.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && id.chars().all(is_ident_char)
        && !is_keyword(id);
    if plain {
        f.write_str(id)
    } else {
        write!(f, "\"{}\"", id.replace('\\', "\\\\").replace('"', "\\\""))
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Leaf(id) => write_ident(f, id),
            Formula::Not(inner) => {
                f.write_str("NOT ")?;
                if inner.precedence() < 3 {
                    write!(f, "({inner})")
                } else {
                    write!(f, "{inner}")
                }
            }
            Formula::And(fs) | Formula::Or(fs) => {
                let (op, prec) = if matches!(self, Formula::And(_)) { (" AND ", 2) } else { (" OR ", 1) };
                // Nested nodes of the same operator keep their parentheses so the tree round-trips.
                for (k, child) in fs.iter().enumerate() {
                    if k > 0 {
                        f.write_str(op)?;
                    }
                    child.fmt_child(f, prec)?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for Explanation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Explanation::Simple(id) => write_ident(f, id),
            Explanation::Linear(terms) => {
                for (k, t) in terms.iter().enumerate() {
                    if k > 0 {
                        f.write_str(" + ")?;
                    }
                    write!(f, "{}*", t.weight)?;
                    write_ident(f, &t.concept_id)?;
                }
                Ok(())
            }
            Explanation::Compositional(formula) => write!(f, "{formula}"),
            Explanation::Clustered(clusters) => {
                for (k, c) in clusters.iter().enumerate() {
                    if k > 0 {
                        f.write_str("; ")?;
                    }
                    write!(f, "[{}, {}] {}", c.lower, c.upper, c.formula)?;
                }
                Ok(())
            }
        }
    }
}

impl Explanation {
    /// Unique concept ids, sorted.
    pub fn concepts(&self) -> Vec<&str> {
        let mut out = BTreeSet::new();
        match self {
            Explanation::Simple(id) => {
                out.insert(id.as_str());
            }
            Explanation::Linear(terms) => out.extend(terms.iter().map(|t| t.concept_id.as_str())),
            Explanation::Compositional(formula) => formula.collect_concepts(&mut out),
            Explanation::Clustered(clusters) => clusters.iter().for_each(|c| c.formula.collect_concepts(&mut out)),
        }
        out.into_iter().collect()
    }

    /// Complexity: the number of distinct concepts mentioned.
    pub fn length(&self) -> usize {
        self.concepts().len()
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Explanation::Simple(_) => Ok(()),
            Explanation::Linear(terms) => {
                if terms.is_empty() {
                    return Err(Error::EmptyExplanation);
                }
                if let Some(t) = terms.iter().find(|t| !t.weight.is_finite()) {
                    return Err(Error::InvalidArgument(format!("weight of `{}` is not finite", t.concept_id)));
                }
                Ok(())
            }
            Explanation::Compositional(formula) => formula.check(),
            Explanation::Clustered(clusters) => {
                if clusters.is_empty() {
                    return Err(Error::EmptyExplanation);
                }
                for c in clusters {
                    if !(c.lower < c.upper) || !c.lower.is_finite() || !c.upper.is_finite() {
                        return Err(Error::InvalidArgument(format!(
                            "cluster range [{}, {}] must satisfy lower < upper",
                            c.lower, c.upper
                        )));
                    }
                    c.formula.check()?;
                }
                Ok(())
            }
        }
    }
}

/// Predicted activation of every input. All referenced concepts must share
/// one length.
pub fn predict(e: &Explanation, concepts: &ConceptMap<'_>) -> Result<Vec<f64>> {
    e.validate()?;
    let ids = e.concepts();
    let n = lookup(concepts, ids[0])?.len();
    for id in &ids[1..] {
        let len = lookup(concepts, id)?.len();
        if len != n {
            return Err(Error::DimensionMismatch(format!(
                "concept `{id}` has {len} values, `{}` has {n}",
                ids[0]
            )));
        }
    }
    (0..n).map(|i| predict_at(e, concepts, i)).collect()
}

fn predict_at(e: &Explanation, concepts: &ConceptMap<'_>, i: usize) -> Result<f64> {
    match e {
        Explanation::Simple(id) => Ok(lookup(concepts, id)?[i]),
        Explanation::Linear(terms) => terms
            .iter()
            .map(|t| Ok(t.weight * lookup(concepts, &t.concept_id)?[i]))
            .sum(),
        Explanation::Compositional(formula) => formula.eval(concepts, i),
        Explanation::Clustered(clusters) => clusters
            .iter()
            .map(|c| Ok((c.lower + c.upper) / 2.0 * c.formula.eval(concepts, i)?))
            .sum(),
    }
}

/// Correlation between the neuron's activations and the prediction, over
/// `split` when given, otherwise over every input.
pub fn score_explanation(
    e: &Explanation,
    a: &ActivationVector,
    concepts: &ConceptMap<'_>,
    split: Option<&[usize]>,
) -> Result<f64> {
    let pred = predict(e, concepts)?;
    if pred.len() != a.len() {
        return Err(Error::DimensionMismatch(format!(
            "prediction has {} values, activation `{}` has {}",
            pred.len(),
            a.neuron_id,
            a.len()
        )));
    }
    let label = e.to_string();
    match split {
        None => pearson(&a.neuron_id, &a.values, &label, &pred),
        Some(idx) => {
            let mut xs = Vec::with_capacity(idx.len());
            let mut ys = Vec::with_capacity(idx.len());
            for &i in idx {
                if i >= a.len() {
                    return Err(Error::IndexOutOfRange { index: i, size: a.len() });
                }
                xs.push(a.values[i]);
                ys.push(pred[i]);
            }
            pearson(&a.neuron_id, &xs, &label, &ys)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Ident(String),
    Number(f64),
    Star,
    Plus,
    Minus,
    LParen,
    RParen,
    And,
    Or,
    Not,
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

fn is_keyword(s: &str) -> bool {
    ["and", "or", "not"].iter().any(|k| s.eq_ignore_ascii_case(k))
}

fn syntax(pos: usize, message: impl Into<String>) -> Error {
    Error::Syntax { pos, message: message.into() }
}

fn tokenize(text: &str) -> Result<Vec<(usize, Token)>> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(pos, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        let single = match c {
            '*' | '·' | '×' => Some(Token::Star),
            '+' => Some(Token::Plus),
            '-' => Some(Token::Minus),
            '(' => Some(Token::LParen),
            ')' => Some(Token::RParen),
            _ => None,
        };
        if let Some(t) = single {
            chars.next();
            out.push((pos, t));
        } else if c == '"' {
            chars.next();
            let mut id = String::new();
            let mut closed = false;
            while let Some((_, ch)) = chars.next() {
                match ch {
                    '"' => {
                        closed = true;
                        break;
                    }
                    '\\' => match chars.next() {
                        Some((_, esc)) => id.push(esc),
                        None => break,
                    },
                    _ => id.push(ch),
                }
            }
            if !closed {
                return Err(syntax(pos, "unterminated quoted concept"));
            }
            out.push((pos, Token::Ident(id)));
        } else if c.is_ascii_digit() || c == '.' {
            let mut end = pos;
            let mut prev = ' ';
            while let Some(&(p, ch)) = chars.peek() {
                let exp_sign = (ch == '+' || ch == '-') && (prev == 'e' || prev == 'E');
                if ch.is_ascii_digit() || ch == '.' || ch == 'e' || ch == 'E' || exp_sign {
                    end = p + ch.len_utf8();
                    prev = ch;
                    chars.next();
                } else {
                    break;
                }
            }
            let lit = &text[pos..end];
            let v: f64 = lit.parse().map_err(|_| syntax(pos, format!("bad number `{lit}`")))?;
            out.push((pos, Token::Number(v)));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let mut end = pos;
            while let Some(&(p, ch)) = chars.peek() {
                if is_ident_char(ch) {
                    end = p + ch.len_utf8();
                    chars.next();
                } else {
                    break;
                }
            }
            let word = &text[pos..end];
            let tok = match word.to_ascii_lowercase().as_str() {
                "and" => Token::And,
                "or" => Token::Or,
                "not" => Token::Not,
                _ => Token::Ident(word.to_string()),
            };
            out.push((pos, tok));
        } else {
            return Err(syntax(pos, format!("unexpected character `{c}`")));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(p, _)| *p)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn ident(&mut self, what: &str) -> Result<String> {
        let at = self.offset();
        match self.bump() {
            Some(Token::Ident(id)) => Ok(id),
            _ => Err(syntax(at, format!("expected {what}"))),
        }
    }

    fn linear(&mut self) -> Result<Explanation> {
        let mut terms = Vec::new();
        // `a - 2*b` reads as `a + -2*b`.
        let mut sign = 1.0;
        loop {
            if self.peek() == Some(&Token::Minus) {
                self.bump();
                sign = -sign;
            }
            let at = self.offset();
            let weight = match self.bump() {
                Some(Token::Number(v)) => v,
                _ => return Err(syntax(at, "expected a weight")),
            };
            let at = self.offset();
            if self.bump() != Some(Token::Star) {
                return Err(syntax(at, "expected `*`"));
            }
            let concept_id = self.ident("a concept after `*`")?;
            terms.push(LinearTerm { weight: sign * weight, concept_id });
            sign = match self.peek() {
                None => break,
                Some(Token::Plus) => 1.0,
                Some(Token::Minus) => -1.0,
                Some(_) => return Err(syntax(self.offset(), "expected `+` or end of input")),
            };
            self.bump();
        }
        Ok(Explanation::Linear(terms))
    }

    fn or(&mut self) -> Result<Formula> {
        let mut kids = vec![self.and()?];
        while self.peek() == Some(&Token::Or) {
            self.bump();
            kids.push(self.and()?);
        }
        Ok(if kids.len() == 1 { kids.pop().unwrap() } else { Formula::Or(kids) })
    }

    fn and(&mut self) -> Result<Formula> {
        let mut kids = vec![self.unary()?];
        while self.peek() == Some(&Token::And) {
            self.bump();
            kids.push(self.unary()?);
        }
        Ok(if kids.len() == 1 { kids.pop().unwrap() } else { Formula::And(kids) })
    }

    fn unary(&mut self) -> Result<Formula> {
        let at = self.offset();
        match self.bump() {
            Some(Token::Not) => Ok(Formula::negate(self.unary()?)),
            Some(Token::LParen) => {
                let inner = self.or()?;
                let close = self.offset();
                if self.bump() != Some(Token::RParen) {
                    return Err(syntax(close, "expected `)`"));
                }
                Ok(inner)
            }
            Some(Token::Ident(id)) => Ok(Formula::Leaf(id)),
            Some(_) => Err(syntax(at, "expected a concept, `NOT` or `(`")),
            None => Err(syntax(at, "unexpected end of input")),
        }
    }
}

/// Parses the text form of a simple, linear or compositional explanation.
///
/// ```text
/// dog
/// 2.7*dog + 1.5*cat
/// (cat OR dog) AND NOT water
/// ```
///
/// `NOT` binds tighter than `AND`, which binds tighter than `OR`. Keywords are
/// case-insensitive; concepts that clash with them can be double-quoted.
pub fn parse_explanation(text: &str) -> Result<Explanation> {
    let tokens = tokenize(text)?;
    if tokens.is_empty() {
        return Err(syntax(0, "empty explanation"));
    }
    let linear = tokens
        .iter()
        .any(|(_, t)| matches!(t, Token::Number(_) | Token::Star | Token::Plus | Token::Minus));
    let mut p = Parser { tokens, pos: 0, end: text.len() };
    let e = if linear {
        p.linear()?
    } else {
        match p.or()? {
            Formula::Leaf(id) => Explanation::Simple(id),
            f => Explanation::Compositional(f),
        }
    };
    if p.pos < p.tokens.len() {
        return Err(syntax(p.offset(), "unexpected trailing input"));
    }
    Ok(e)
}

pub fn parse_formula(text: &str) -> Result<Formula> {
    match parse_explanation(text)? {
        Explanation::Simple(id) => Ok(Formula::Leaf(id)),
        Explanation::Compositional(f) => Ok(f),
        _ => Err(syntax(0, "expected a logical formula")),
    }
}

/// One line of an explanations file.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplanationRecord {
    pub neuron_id: String,
    pub explanation: Explanation,
}

#[derive(Deserialize)]
struct RawRecord {
    neuron_id: String,
    explanation: RawExplanation,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawExplanation {
    Text(String),
    Clustered { clusters: Vec<RawCluster> },
    Structured(Explanation),
}

#[derive(Deserialize)]
struct RawCluster {
    lower: f64,
    upper: f64,
    formula: RawFormula,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawFormula {
    Text(String),
    Tree(Formula),
}

impl RawExplanation {
    fn resolve(self) -> Result<Explanation> {
        let e = match self {
            RawExplanation::Text(s) => parse_explanation(&s)?,
            RawExplanation::Structured(e) => e,
            RawExplanation::Clustered { clusters } => Explanation::Clustered(
                clusters
                    .into_iter()
                    .map(|c| {
                        let formula = match c.formula {
                            RawFormula::Text(s) => parse_formula(&s)?,
                            RawFormula::Tree(f) => f,
                        };
                        Ok(Cluster { lower: c.lower, upper: c.upper, formula })
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        e.validate()?;
        Ok(e)
    }
}

pub fn parse_explanations_jsonl<R: BufRead>(reader: R, origin: &str) -> Result<Vec<ExplanationRecord>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("{origin}:{}: {e}", n + 1)))?;
        let explanation = raw.explanation.resolve().map_err(|e| match e {
            Error::Syntax { pos, message } => Error::Syntax {
                pos,
                message: format!("{origin}:{}: {message}", n + 1),
            },
            other => other,
        })?;
        out.push(ExplanationRecord { neuron_id: raw.neuron_id, explanation });
    }
    Ok(out)
}

pub fn read_explanations_jsonl(path: &Path) -> Result<Vec<ExplanationRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_explanations_jsonl(std::io::BufReader::new(f), &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRow {
    pub neuron_id: String,
    pub explanation: String,
    pub length: usize,
    pub score: f64,
}

/// Scores every record against its neuron.
pub fn score_all(
    records: &[ExplanationRecord],
    activations: &[ActivationVector],
    concepts: &ConceptMap<'_>,
    split: Option<&[usize]>,
) -> Result<Vec<ScoreRow>> {
    records
        .iter()
        .map(|r| {
            let a = activations
                .iter()
                .find(|a| a.neuron_id == r.neuron_id)
                .ok_or_else(|| Error::UnknownNeuron(r.neuron_id.clone()))?;
            Ok(ScoreRow {
                neuron_id: r.neuron_id.clone(),
                explanation: r.explanation.to_string(),
                length: r.explanation.length(),
                score: score_explanation(&r.explanation, a, concepts, split)?,
            })
        })
        .collect()
}

pub fn write_scores_csv<W: Write>(w: W, rows: &[ScoreRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let err = |e: csv::Error| Error::Parse(e.to_string());
    out.write_record(["neuron_id", "explanation", "length", "score"]).map_err(err)?;
    for r in rows {
        out.write_record([r.neuron_id.clone(), r.explanation.clone(), r.length.to_string(), format!("{}", r.score)])
            .map_err(err)?;
    }
    out.flush().map_err(|e| Error::io("<scores csv>", e))?;
    Ok(())
}
