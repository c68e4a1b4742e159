//! Probabilistic context-free grammars.
//!
//! Grammars are read from a line-oriented BNF dialect:
//!
//! ```text
//! # comment
//! <expr> ::= <expr> <op> <expr> (0.5)
//!          | <var>              (0.5)
//! <op>   ::= + | - | * | /
//! <var>  ::= x[..] | 1.0
//! ```
//!
//! Alternatives without a trailing `(p)` annotation share their non-terminal's
//! mass uniformly. `x[..]` is a feature macro which expands into one
//! alternative per dataset feature. The first rule's left-hand side is the
//! axiom.
//!
//! Non-terminals are interned: bodies refer to them by [`NtId`], which is the
//! position of the defining rule in the source text.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

/// Tolerance accepted on explicit probability annotations.
pub const ANNOTATION_TOLERANCE: f64 = 1e-6;

const FEATURE_MACRO: &str = "x[..]";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrammarError {
    #[error("grammar text is empty")]
    Empty,
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("undefined non-terminal <{name}> referenced at line {line}")]
    UndefinedNonTerminal { name: String, line: usize },
    #[error("duplicate definition of <{name}> at line {line}")]
    DuplicateRule { name: String, line: usize },
    #[error("probabilities of <{name}> sum to {sum}, expected 1")]
    ProbabilitySum { name: String, sum: f64 },
    #[error("<{name}> mixes annotated and unannotated alternatives")]
    MixedProbabilities { name: String },
    #[error("feature macro {FEATURE_MACRO} at line {line} needs a feature count and must stand alone")]
    FeatureMacro { line: usize },
    #[error("<{name}> has no non-recursive production, derivations cannot terminate")]
    NoTerminatingProduction { name: String },
}

/// Index of a non-terminal inside its grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NtId(pub usize);

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Symbol {
    Terminal(String),
    NonTerminal(NtId),
}

impl Symbol {
    pub fn is_terminal(&self) -> bool {
        matches!(self, Symbol::Terminal(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Production {
    pub symbols: Vec<Symbol>,
    pub probability: f64,
    /// Set when the left-hand side is derivable from this body.
    pub recursive: bool,
}

impl Production {
    pub fn non_terminals(&self) -> impl Iterator<Item = NtId> + '_ {
        self.symbols.iter().filter_map(|s| match s {
            Symbol::NonTerminal(id) => Some(*id),
            Symbol::Terminal(_) => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub name: String,
    pub productions: Vec<Production>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pcfg {
    rules: Vec<Rule>,
}

/// Parses grammar text. `features` drives the expansion of `x[..]`.
pub fn parse_grammar(text: &str, features: Option<usize>) -> Result<Pcfg, GrammarError> {
    Pcfg::parse_with_features(text, features)
}

impl Pcfg {
    pub fn parse(text: &str) -> Result<Pcfg, GrammarError> {
        Self::parse_with_features(text, None)
    }

    pub fn parse_with_features(text: &str, features: Option<usize>) -> Result<Pcfg, GrammarError> {
        let raw = RawGrammar::read(text, features)?;
        let pcfg = raw.resolve()?;
        detect_recursion(&pcfg)
    }

    pub fn axiom(&self) -> NtId {
        NtId(0)
    }

    pub fn axiom_name(&self) -> &str {
        &self.rules[0].name
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn rule(&self, nt: NtId) -> &Rule {
        &self.rules[nt.0]
    }

    pub fn productions(&self, nt: NtId) -> &[Production] {
        &self.rules[nt.0].productions
    }

    pub fn non_terminal_count(&self) -> usize {
        self.rules.len()
    }

    pub fn non_terminals(&self) -> impl Iterator<Item = NtId> {
        (0..self.rules.len()).map(NtId)
    }

    pub fn name(&self, nt: NtId) -> &str {
        &self.rules[nt.0].name
    }

    pub fn index_of(&self, name: &str) -> Option<NtId> {
        self.rules.iter().position(|r| r.name == name).map(NtId)
    }

    pub fn probabilities(&self, nt: NtId) -> Vec<f64> {
        self.productions(nt).iter().map(|p| p.probability).collect()
    }

    /// Overwrites the probabilities of `nt`. The caller keeps them normalized.
    pub fn set_probabilities(&mut self, nt: NtId, probs: &[f64]) {
        let prods = &mut self.rules[nt.0].productions;
        assert_eq!(prods.len(), probs.len(), "probability count mismatch");
        for (prod, &p) in prods.iter_mut().zip(probs) {
            prod.probability = p;
        }
    }

    /// Indices of the non-recursive productions of `nt`, in grammar order.
    pub fn non_recursive(&self, nt: NtId) -> Vec<usize> {
        self.productions(nt)
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.recursive)
            .map(|(i, _)| i)
            .collect()
    }

    /// True when both grammars have the same non-terminals and bodies,
    /// regardless of probabilities.
    pub fn same_structure(&self, other: &Pcfg) -> bool {
        self.rules.len() == other.rules.len()
            && self.rules.iter().zip(&other.rules).all(|(a, b)| {
                a.name == b.name
                    && a.productions.len() == b.productions.len()
                    && a.productions
                        .iter()
                        .zip(&b.productions)
                        .all(|(p, q)| p.symbols == q.symbols)
            })
    }

    /// Longest chain of expansions available when only non-recursive
    /// productions may be used, over all non-terminals.
    pub fn non_recursive_height(&self) -> usize {
        fn height(g: &Pcfg, nt: NtId, memo: &mut Vec<Option<usize>>) -> usize {
            if let Some(h) = memo[nt.0] {
                return h;
            }
            let mut best = 0;
            for prod in g.productions(nt).iter().filter(|p| !p.recursive) {
                for child in prod.non_terminals() {
                    best = best.max(1 + height(g, child, memo));
                }
            }
            memo[nt.0] = Some(best);
            best
        }
        let mut memo = vec![None; self.rules.len()];
        self.non_terminals()
            .map(|nt| height(self, nt, &mut memo))
            .max()
            .unwrap_or(0)
    }

    /// Adds `delta` to one production probability, clamps it to [0, 1] and
    /// rescales the siblings so the non-terminal sums to one again.
    pub fn shift_probability(&mut self, nt: NtId, index: usize, delta: f64) {
        let prods = &mut self.rules[nt.0].productions;
        let p = (prods[index].probability + delta).clamp(0.0, 1.0);
        prods[index].probability = p;
        adjust_probabilities(prods, index);
    }

    /// Perturbs at most one production per non-terminal: the first
    /// production whose uniform draw falls below `prob_mutation` receives a
    /// `N(0, sd)` increment.
    pub fn mutate<R: Rng + ?Sized>(&self, prob_mutation: f64, sd: f64, rng: &mut R) -> Pcfg {
        let normal = Normal::new(0.0, sd).expect("standard deviation must be positive and finite");
        let mut out = self.clone();
        for nt in 0..out.rules.len() {
            for index in 0..out.rules[nt].productions.len() {
                if rng.random::<f64>() < prob_mutation {
                    let delta = normal.sample(rng);
                    out.shift_probability(NtId(nt), index, delta);
                    break;
                }
            }
        }
        out
    }
}

/// Free-function form of [`Pcfg::mutate`].
pub fn mutate_grammar<R: Rng + ?Sized>(pcfg: &Pcfg, prob_mutation: f64, sd: f64, rng: &mut R) -> Pcfg {
    pcfg.mutate(prob_mutation, sd, rng)
}

/// Rescales every production except `mutated` so that the whole list sums to
/// one. When the siblings carry no mass the remainder is split evenly.
pub fn adjust_probabilities(productions: &mut [Production], mutated: usize) {
    if productions.len() == 1 {
        productions[0].probability = 1.0;
        return;
    }
    let fixed = productions[mutated].probability.clamp(0.0, 1.0);
    productions[mutated].probability = fixed;
    let remainder = 1.0 - fixed;
    let others: f64 = productions
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != mutated)
        .map(|(_, p)| p.probability)
        .sum();
    let siblings = (productions.len() - 1) as f64;
    for (i, prod) in productions.iter_mut().enumerate() {
        if i == mutated {
            continue;
        }
        prod.probability = if others > 0.0 {
            prod.probability * remainder / others
        } else {
            remainder / siblings
        };
    }
}

/// Recomputes every production's `recursive` flag by transitive reachability
/// and checks that each non-terminal keeps a way to terminate.
pub fn detect_recursion(pcfg: &Pcfg) -> Result<Pcfg, GrammarError> {
    let n = pcfg.rules.len();
    let direct: Vec<HashSet<usize>> = pcfg
        .rules
        .iter()
        .map(|r| {
            r.productions
                .iter()
                .flat_map(|p| p.non_terminals().map(|id| id.0))
                .collect()
        })
        .collect();

    // reach[a] holds every non-terminal derivable from a in one or more steps
    let mut reach = vec![HashSet::new(); n];
    for start in 0..n {
        let mut queue: VecDeque<usize> = direct[start].iter().copied().collect();
        while let Some(next) = queue.pop_front() {
            if reach[start].insert(next) {
                queue.extend(direct[next].iter().copied());
            }
        }
    }

    let mut out = pcfg.clone();
    for (lhs, rule) in out.rules.iter_mut().enumerate() {
        for prod in &mut rule.productions {
            let recursive = prod
                .non_terminals()
                .any(|b| b.0 == lhs || reach[b.0].contains(&lhs));
            prod.recursive = recursive;
        }
        if rule.productions.iter().all(|p| p.recursive) {
            return Err(GrammarError::NoTerminatingProduction {
                name: rule.name.clone(),
            });
        }
    }
    Ok(out)
}

impl fmt::Display for Pcfg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for rule in &self.rules {
            let lead = format!("<{}> ::=", rule.name);
            for (i, prod) in rule.productions.iter().enumerate() {
                if i == 0 {
                    write!(f, "{lead}")?;
                } else {
                    write!(f, "{:width$}|", "", width = lead.len() - 1)?;
                }
                for sym in &prod.symbols {
                    match sym {
                        Symbol::Terminal(t) => write!(f, " {t}")?,
                        Symbol::NonTerminal(id) => write!(f, " <{}>", self.rules[id.0].name)?,
                    }
                }
                writeln!(f, " ({})", prod.probability)?;
            }
        }
        Ok(())
    }
}

enum RawSymbol {
    Terminal(String),
    NonTerminal(String),
}

struct RawAlternative {
    symbols: Vec<RawSymbol>,
    probability: Option<f64>,
    line: usize,
}

struct RawRule {
    name: String,
    alternatives: Vec<RawAlternative>,
}

struct RawGrammar {
    rules: Vec<RawRule>,
}

impl RawGrammar {
    fn read(text: &str, features: Option<usize>) -> Result<RawGrammar, GrammarError> {
        if text.trim().is_empty() {
            return Err(GrammarError::Empty);
        }
        let mut rules: Vec<RawRule> = Vec::new();
        let mut seen: HashSet<String> = HashSet::new();

        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let trimmed = line.trim_start();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let indent = line.len() - trimmed.len();

            let (body, body_offset, fresh) = if let Some(rest) = trimmed.strip_prefix('|') {
                if rules.is_empty() {
                    return Err(syntax(line, line_no, indent, "continuation line before any rule"));
                }
                (rest, indent + 1, false)
            } else {
                let Some(pos) = trimmed.find("::=") else {
                    return Err(syntax(line, line_no, indent, "expected `<name> ::=` or a `|` continuation"));
                };
                let lhs = trimmed[..pos].trim();
                let name = lhs
                    .strip_prefix('<')
                    .and_then(|s| s.strip_suffix('>'))
                    .filter(|s| is_name(s))
                    .ok_or_else(|| syntax(line, line_no, indent, "left-hand side must be a single `<name>`"))?;
                if !seen.insert(name.to_string()) {
                    return Err(GrammarError::DuplicateRule {
                        name: name.to_string(),
                        line: line_no,
                    });
                }
                rules.push(RawRule {
                    name: name.to_string(),
                    alternatives: Vec::new(),
                });
                let offset = indent + pos + 3;
                (&trimmed[pos + 3..], offset, true)
            };

            let rule = rules.last_mut().expect("a rule is open");
            let pieces: Vec<(usize, &str)> = split_alternatives(body);
            for (start, alt) in &pieces {
                // `<a> ::=` followed only by continuation lines
                if fresh && pieces.len() == 1 && alt.trim().is_empty() {
                    continue;
                }
                let column_base = body_offset + start;
                if alt.trim().is_empty() {
                    return Err(syntax(line, line_no, column_base, "empty alternative"));
                }
                let parsed = parse_alternative(line, line_no, column_base, alt)?;
                expand_macro(parsed, features, &mut rule.alternatives)?;
            }
        }
        Ok(RawGrammar { rules })
    }

    fn resolve(self) -> Result<Pcfg, GrammarError> {
        let ids: HashMap<&str, usize> = self
            .rules
            .iter()
            .enumerate()
            .map(|(i, r)| (r.name.as_str(), i))
            .collect();

        let mut rules = Vec::with_capacity(self.rules.len());
        for raw in &self.rules {
            if raw.alternatives.is_empty() {
                return Err(GrammarError::Syntax {
                    line: 0,
                    column: 0,
                    message: format!("<{}> has no alternatives", raw.name),
                });
            }
            let annotated = raw.alternatives.iter().filter(|a| a.probability.is_some()).count();
            let k = raw.alternatives.len();
            let probs: Vec<f64> = if annotated == 0 {
                vec![1.0 / k as f64; k]
            } else if annotated == k {
                let given: Vec<f64> = raw.alternatives.iter().map(|a| a.probability.unwrap()).collect();
                let sum: f64 = given.iter().sum();
                if (sum - 1.0).abs() > ANNOTATION_TOLERANCE {
                    return Err(GrammarError::ProbabilitySum {
                        name: raw.name.clone(),
                        sum,
                    });
                }
                if (sum - 1.0).abs() > 1e-12 {
                    given.iter().map(|p| p / sum).collect()
                } else {
                    given
                }
            } else {
                return Err(GrammarError::MixedProbabilities {
                    name: raw.name.clone(),
                });
            };

            let mut productions = Vec::with_capacity(k);
            for (alt, probability) in raw.alternatives.iter().zip(probs) {
                let mut symbols = Vec::with_capacity(alt.symbols.len());
                for sym in &alt.symbols {
                    symbols.push(match sym {
                        RawSymbol::Terminal(t) => Symbol::Terminal(t.clone()),
                        RawSymbol::NonTerminal(name) => {
                            let id = ids.get(name.as_str()).ok_or_else(|| {
                                GrammarError::UndefinedNonTerminal {
                                    name: name.clone(),
                                    line: alt.line,
                                }
                            })?;
                            Symbol::NonTerminal(NtId(*id))
                        }
                    });
                }
                productions.push(Production {
                    symbols,
                    probability,
                    recursive: false,
                });
            }
            rules.push(Rule {
                name: raw.name.clone(),
                productions,
            });
        }
        Ok(Pcfg { rules })
    }
}

fn syntax(line: &str, line_no: usize, byte_offset: usize, message: &str) -> GrammarError {
    let column = line
        .get(..byte_offset.min(line.len()))
        .map(|s| s.chars().count())
        .unwrap_or(byte_offset)
        + 1;
    GrammarError::Syntax {
        line: line_no,
        column,
        message: message.to_string(),
    }
}

fn is_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| !c.is_whitespace() && c != '<' && c != '>')
}

/// Splits on `|`, returning each piece with its byte offset in `body`.
fn split_alternatives(body: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, c) in body.char_indices() {
        if c == '|' {
            out.push((start, &body[start..i]));
            start = i + 1;
        }
    }
    out.push((start, &body[start..]));
    out
}

fn parse_alternative(
    line: &str,
    line_no: usize,
    column_base: usize,
    alt: &str,
) -> Result<RawAlternative, GrammarError> {
    let mut chunks: Vec<(usize, &str)> = Vec::new();
    let mut current: Option<usize> = None;
    for (i, c) in alt.char_indices() {
        match (c.is_whitespace(), current) {
            (true, Some(s)) => {
                chunks.push((s, &alt[s..i]));
                current = None;
            }
            (false, None) => current = Some(i),
            _ => {}
        }
    }
    if let Some(s) = current {
        chunks.push((s, &alt[s..]));
    }

    let mut probability = None;
    if let Some(&(offset, last)) = chunks.last() {
        if let Some(inner) = last.strip_prefix('(').and_then(|s| s.strip_suffix(')')) {
            if let Ok(p) = inner.trim().parse::<f64>() {
                if !(0.0..=1.0).contains(&p) {
                    return Err(syntax(line, line_no, column_base + offset, "probability outside [0, 1]"));
                }
                probability = Some(p);
                chunks.pop();
            }
        }
    }
    if chunks.is_empty() {
        return Err(syntax(line, line_no, column_base, "alternative has no symbols"));
    }

    let mut symbols = Vec::new();
    for (_, chunk) in chunks {
        split_chunk(chunk, &mut symbols);
    }
    Ok(RawAlternative {
        symbols,
        probability,
        line: line_no,
    })
}

/// Separates `<name>` references glued to other text, e.g. `(<B>`.
fn split_chunk(chunk: &str, out: &mut Vec<RawSymbol>) {
    let mut terminal = String::new();
    let mut rest = chunk;
    while let Some(open) = rest.find('<') {
        let after = &rest[open + 1..];
        match after.find('>') {
            Some(close) if is_name(&after[..close]) => {
                terminal.push_str(&rest[..open]);
                if !terminal.is_empty() {
                    out.push(RawSymbol::Terminal(std::mem::take(&mut terminal)));
                }
                out.push(RawSymbol::NonTerminal(after[..close].to_string()));
                rest = &after[close + 1..];
            }
            _ => {
                terminal.push_str(&rest[..=open]);
                rest = after;
            }
        }
    }
    terminal.push_str(rest);
    if !terminal.is_empty() {
        out.push(RawSymbol::Terminal(terminal));
    }
}

fn expand_macro(
    alt: RawAlternative,
    features: Option<usize>,
    out: &mut Vec<RawAlternative>,
) -> Result<(), GrammarError> {
    let has_macro = alt
        .symbols
        .iter()
        .any(|s| matches!(s, RawSymbol::Terminal(t) if t == FEATURE_MACRO));
    if !has_macro {
        out.push(alt);
        return Ok(());
    }
    let count = match features {
        Some(n) if n > 0 && alt.symbols.len() == 1 => n,
        _ => return Err(GrammarError::FeatureMacro { line: alt.line }),
    };
    for i in 0..count {
        out.push(RawAlternative {
            symbols: vec![RawSymbol::Terminal(format!("x[{i}]"))],
            probability: alt.probability.map(|p| p / count as f64),
            line: alt.line,
        });
    }
    Ok(())
}
