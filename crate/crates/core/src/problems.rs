//! Benchmark problems: phenotype interpreters, fitness functions and data.
//!
//! Phenotypes are interpreted from a [`Term`], so grouping comes from the
//! derivation tree rather than from operator precedence. Flat strings are
//! also accepted; they parse with conventional precedence (`* /` over
//! `+ -`; `not` over `and` over `or` over `if else`).

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::encoding::{Term, WORST_FITNESS};
use crate::grammar::{parse_grammar, GrammarError, Pcfg};

/// Ceiling applied to `exp` so that overflow stays finite.
pub const EXP_CEILING: f64 = 1e150;

pub const PAGIE_GRAMMAR: &str = include_str!("../grammars/pagie.bnf");
pub const REGRESSION_GRAMMAR: &str = include_str!("../grammars/regression.bnf");
pub const PARITY_GRAMMAR: &str = include_str!("../grammars/parity5.bnf");
pub const MULTIPLEXER_GRAMMAR: &str = include_str!("../grammars/multiplexer11.bnf");
pub const MULTIPLEXER_FULL_GRAMMAR: &str = include_str!("../grammars/multiplexer11_full.bnf");

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("cannot interpret phenotype: {0}")]
    Parse(String),
    #[error("targets are constant, relative error is undefined")]
    ConstantTargets,
    #[error("prediction and target lengths differ ({predictions} vs {targets})")]
    LengthMismatch { predictions: usize, targets: usize },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV at line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("line {line}: expected {expected} columns, found {found}")]
    ColumnCount { line: u64, expected: usize, found: usize },
    #[error("line {line}, column {column}: `{value}` is not a number")]
    NonNumeric { line: u64, column: usize, value: String },
    #[error("dataset has no rows")]
    EmptyDataset,
    #[error(transparent)]
    Grammar(#[from] GrammarError),
}

// ---------------------------------------------------------------------------
// token-tree parsing shared by both interpreters

enum Item<'a> {
    Tok(&'a str),
    Sub(Vec<Item<'a>>),
}

fn normalize(term: &Term) -> Item<'_> {
    match term {
        Term::Token(s) => Item::Tok(s),
        Term::Group(items) if items.len() == 1 => normalize(&items[0]),
        Term::Group(items) => Item::Sub(items.iter().map(normalize).collect()),
    }
}

struct Cursor<'i, 'a> {
    items: &'i [Item<'a>],
    pos: usize,
}

impl<'i, 'a> Cursor<'i, 'a> {
    fn new(items: &'i [Item<'a>]) -> Self {
        Cursor { items, pos: 0 }
    }

    fn peek_tok(&self) -> Option<&'a str> {
        match self.items.get(self.pos) {
            Some(Item::Tok(t)) => Some(t),
            _ => None,
        }
    }

    fn next(&mut self) -> Option<&'i Item<'a>> {
        let item = self.items.get(self.pos);
        self.pos += 1;
        item
    }

    fn eat(&mut self, tok: &str) -> bool {
        if self.peek_tok() == Some(tok) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: &str) -> Result<(), ProblemError> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(ProblemError::Parse(format!("expected `{tok}`")))
        }
    }

    fn finish(&self) -> Result<(), ProblemError> {
        if self.pos == self.items.len() {
            Ok(())
        } else {
            Err(ProblemError::Parse("trailing tokens".into()))
        }
    }
}

fn parse_whole<'a, T>(
    item: &Item<'a>,
    parse: impl Fn(&mut Cursor<'_, 'a>) -> Result<T, ProblemError>,
) -> Result<T, ProblemError> {
    let single;
    let items = match item {
        Item::Sub(items) => items.as_slice(),
        tok => {
            single = [match tok {
                Item::Tok(t) => Item::Tok(t),
                Item::Sub(_) => unreachable!(),
            }];
            &single[..]
        }
    };
    let mut cursor = Cursor::new(items);
    let out = parse(&mut cursor)?;
    cursor.finish()?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// arithmetic

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Sin,
    Cos,
    Exp,
    Log,
    Inv,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArithExpr {
    Const(f64),
    Feature(usize),
    Unary(UnaryOp, Box<ArithExpr>),
    Binary(BinaryOp, Box<ArithExpr>, Box<ArithExpr>),
}

pub fn protected_div(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        1.0
    } else {
        a / b
    }
}

pub fn protected_log(v: f64) -> f64 {
    if v <= 0.0 {
        0.0
    } else {
        v.ln()
    }
}

pub fn saturating_exp(v: f64) -> f64 {
    if v.is_nan() {
        v
    } else {
        v.exp().min(EXP_CEILING)
    }
}

impl UnaryOp {
    fn from_token(t: &str) -> Option<UnaryOp> {
        Some(match t {
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "exp" => UnaryOp::Exp,
            "log" => UnaryOp::Log,
            "inv" => UnaryOp::Inv,
            _ => return None,
        })
    }

    pub fn apply(self, v: f64) -> f64 {
        match self {
            UnaryOp::Sin => v.sin(),
            UnaryOp::Cos => v.cos(),
            UnaryOp::Exp => saturating_exp(v),
            UnaryOp::Log => protected_log(v),
            UnaryOp::Inv => protected_div(1.0, v),
        }
    }
}

impl BinaryOp {
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => protected_div(a, b),
        }
    }
}

impl ArithExpr {
    pub fn parse(term: &Term) -> Result<ArithExpr, ProblemError> {
        parse_whole(&normalize(term), arith_sum)
    }

    pub fn parse_str(text: &str) -> Result<ArithExpr, ProblemError> {
        Self::parse(&Term::from_text(text))
    }

    pub fn eval(&self, features: &[f64]) -> f64 {
        match self {
            ArithExpr::Const(c) => *c,
            ArithExpr::Feature(i) => features[*i],
            ArithExpr::Unary(op, e) => op.apply(e.eval(features)),
            ArithExpr::Binary(op, a, b) => op.apply(a.eval(features), b.eval(features)),
        }
    }

    /// Evaluates every row of `data` at once, column by column.
    pub fn eval_dataset(&self, data: &Dataset) -> Vec<f64> {
        match self {
            ArithExpr::Const(c) => vec![*c; data.len()],
            ArithExpr::Feature(i) => data.column(*i),
            ArithExpr::Unary(op, e) => {
                let mut v = e.eval_dataset(data);
                v.iter_mut().for_each(|x| *x = op.apply(*x));
                v
            }
            ArithExpr::Binary(op, a, b) => {
                let mut left = a.eval_dataset(data);
                let right = b.eval_dataset(data);
                left.iter_mut().zip(right).for_each(|(l, r)| *l = op.apply(*l, r));
                left
            }
        }
    }

    pub fn max_feature(&self) -> Option<usize> {
        match self {
            ArithExpr::Const(_) => None,
            ArithExpr::Feature(i) => Some(*i),
            ArithExpr::Unary(_, e) => e.max_feature(),
            ArithExpr::Binary(_, a, b) => a.max_feature().max(b.max_feature()),
        }
    }
}

fn arith_sum(c: &mut Cursor<'_, '_>) -> Result<ArithExpr, ProblemError> {
    let mut lhs = arith_product(c)?;
    loop {
        let op = match c.peek_tok() {
            Some("+") => BinaryOp::Add,
            Some("-") => BinaryOp::Sub,
            _ => return Ok(lhs),
        };
        c.pos += 1;
        lhs = ArithExpr::Binary(op, Box::new(lhs), Box::new(arith_product(c)?));
    }
}

fn arith_product(c: &mut Cursor<'_, '_>) -> Result<ArithExpr, ProblemError> {
    let mut lhs = arith_factor(c)?;
    loop {
        let op = match c.peek_tok() {
            Some("*") => BinaryOp::Mul,
            Some("/") => BinaryOp::Div,
            _ => return Ok(lhs),
        };
        c.pos += 1;
        lhs = ArithExpr::Binary(op, Box::new(lhs), Box::new(arith_factor(c)?));
    }
}

fn arith_factor(c: &mut Cursor<'_, '_>) -> Result<ArithExpr, ProblemError> {
    match c.next() {
        None => Err(ProblemError::Parse("unexpected end of expression".into())),
        Some(Item::Sub(items)) => {
            let mut inner = Cursor::new(items);
            let e = arith_sum(&mut inner)?;
            inner.finish()?;
            Ok(e)
        }
        Some(Item::Tok("(")) => {
            let e = arith_sum(c)?;
            c.expect(")")?;
            Ok(e)
        }
        Some(Item::Tok(t)) => {
            if let Some(op) = UnaryOp::from_token(t) {
                c.expect("(")?;
                let e = arith_sum(c)?;
                c.expect(")")?;
                return Ok(ArithExpr::Unary(op, Box::new(e)));
            }
            if let Some(index) = t.strip_prefix("x[").and_then(|s| s.strip_suffix(']')) {
                return index
                    .parse()
                    .map(ArithExpr::Feature)
                    .map_err(|_| ProblemError::Parse(format!("bad feature reference `{t}`")));
            }
            t.parse()
                .map(ArithExpr::Const)
                .map_err(|_| ProblemError::Parse(format!("unknown token `{t}`")))
        }
    }
}

/// Evaluates a flat arithmetic phenotype on one feature vector.
pub fn eval_arith(phenotype: &str, features: &[f64]) -> Result<f64, ProblemError> {
    let expr = ArithExpr::parse_str(phenotype)?;
    if let Some(i) = expr.max_feature() {
        if i >= features.len() {
            return Err(ProblemError::Parse(format!("x[{i}] is out of range")));
        }
    }
    Ok(expr.eval(features))
}

// ---------------------------------------------------------------------------
// boolean

#[derive(Debug, Clone, PartialEq)]
pub enum BoolExpr {
    Var(usize),
    Not(Box<BoolExpr>),
    And(Box<BoolExpr>, Box<BoolExpr>),
    Or(Box<BoolExpr>, Box<BoolExpr>),
    /// `then if cond else otherwise`
    IfElse {
        then: Box<BoolExpr>,
        cond: Box<BoolExpr>,
        otherwise: Box<BoolExpr>,
    },
}

impl BoolExpr {
    pub fn parse(term: &Term, vars: &[&str]) -> Result<BoolExpr, ProblemError> {
        parse_whole(&normalize(term), |c| bool_cond(c, vars))
    }

    pub fn parse_str(text: &str, vars: &[&str]) -> Result<BoolExpr, ProblemError> {
        Self::parse(&Term::from_text(text), vars)
    }

    pub fn eval(&self, inputs: &[bool]) -> bool {
        match self {
            BoolExpr::Var(i) => inputs[*i],
            BoolExpr::Not(e) => !e.eval(inputs),
            BoolExpr::And(a, b) => a.eval(inputs) && b.eval(inputs),
            BoolExpr::Or(a, b) => a.eval(inputs) || b.eval(inputs),
            BoolExpr::IfElse { then, cond, otherwise } => {
                if cond.eval(inputs) {
                    then.eval(inputs)
                } else {
                    otherwise.eval(inputs)
                }
            }
        }
    }

    /// Evaluates all cases of a truth table at once; `inputs[v]` is the
    /// bitset of cases in which variable `v` is true.
    pub fn eval_bits(&self, inputs: &[Vec<u64>]) -> Vec<u64> {
        match self {
            BoolExpr::Var(i) => inputs[*i].clone(),
            BoolExpr::Not(e) => e.eval_bits(inputs).into_iter().map(|w| !w).collect(),
            BoolExpr::And(a, b) => zip_words(a.eval_bits(inputs), b.eval_bits(inputs), |x, y| x & y),
            BoolExpr::Or(a, b) => zip_words(a.eval_bits(inputs), b.eval_bits(inputs), |x, y| x | y),
            BoolExpr::IfElse { then, cond, otherwise } => {
                let c = cond.eval_bits(inputs);
                let t = then.eval_bits(inputs);
                let o = otherwise.eval_bits(inputs);
                c.iter().zip(t).zip(o).map(|((c, t), o)| (c & t) | (!c & o)).collect()
            }
        }
    }
}

fn zip_words(mut a: Vec<u64>, b: Vec<u64>, f: impl Fn(u64, u64) -> u64) -> Vec<u64> {
    a.iter_mut().zip(b).for_each(|(x, y)| *x = f(*x, y));
    a
}

fn bool_cond(c: &mut Cursor<'_, '_>, vars: &[&str]) -> Result<BoolExpr, ProblemError> {
    let then = bool_or(c, vars)?;
    if !c.eat("if") {
        return Ok(then);
    }
    let cond = bool_or(c, vars)?;
    c.expect("else")?;
    let otherwise = bool_cond(c, vars)?;
    Ok(BoolExpr::IfElse {
        then: Box::new(then),
        cond: Box::new(cond),
        otherwise: Box::new(otherwise),
    })
}

fn bool_or(c: &mut Cursor<'_, '_>, vars: &[&str]) -> Result<BoolExpr, ProblemError> {
    let mut lhs = bool_and(c, vars)?;
    while c.eat("or") {
        lhs = BoolExpr::Or(Box::new(lhs), Box::new(bool_and(c, vars)?));
    }
    Ok(lhs)
}

fn bool_and(c: &mut Cursor<'_, '_>, vars: &[&str]) -> Result<BoolExpr, ProblemError> {
    let mut lhs = bool_not(c, vars)?;
    while c.eat("and") {
        lhs = BoolExpr::And(Box::new(lhs), Box::new(bool_not(c, vars)?));
    }
    Ok(lhs)
}

fn bool_not(c: &mut Cursor<'_, '_>, vars: &[&str]) -> Result<BoolExpr, ProblemError> {
    if c.eat("not") {
        return Ok(BoolExpr::Not(Box::new(bool_not(c, vars)?)));
    }
    match c.next() {
        None => Err(ProblemError::Parse("unexpected end of expression".into())),
        Some(Item::Sub(items)) => {
            let mut inner = Cursor::new(items);
            let e = bool_cond(&mut inner, vars)?;
            inner.finish()?;
            Ok(e)
        }
        Some(Item::Tok("(")) => {
            let e = bool_cond(c, vars)?;
            c.expect(")")?;
            Ok(e)
        }
        Some(Item::Tok(t)) => vars
            .iter()
            .position(|v| v == t)
            .map(BoolExpr::Var)
            .ok_or_else(|| ProblemError::Parse(format!("unknown variable `{t}`"))),
    }
}

pub const PARITY_VARS: [&str; 5] = ["b0", "b1", "b2", "b3", "b4"];
pub const MULTIPLEXER_VARS: [&str; 11] = ["s0", "s1", "s2", "i0", "i1", "i2", "i3", "i4", "i5", "i6", "i7"];

/// Evaluates a flat boolean phenotype. Inputs are indexed by position in
/// `b0..b4` when five are given, otherwise by `s0 s1 s2 i0..i7`.
pub fn eval_bool(phenotype: &str, inputs: &[bool]) -> Result<bool, ProblemError> {
    let vars: &[&str] = if inputs.len() == PARITY_VARS.len() {
        &PARITY_VARS
    } else if inputs.len() == MULTIPLEXER_VARS.len() {
        &MULTIPLEXER_VARS
    } else {
        return Err(ProblemError::Parse(format!("no variable set with {} inputs", inputs.len())));
    };
    Ok(BoolExpr::parse_str(phenotype, vars)?.eval(inputs))
}

/// A complete truth table stored as bitsets over cases.
#[derive(Debug, Clone)]
pub struct TruthTable {
    pub cases: usize,
    pub inputs: Vec<Vec<u64>>,
    pub target: Vec<u64>,
}

impl TruthTable {
    pub fn build(variables: usize, cases: usize, input: impl Fn(usize, usize) -> bool, target: impl Fn(usize) -> bool) -> Self {
        let words = cases.div_ceil(64);
        let mut inputs = vec![vec![0u64; words]; variables];
        let mut out = vec![0u64; words];
        for case in 0..cases {
            for (v, bits) in inputs.iter_mut().enumerate() {
                if input(case, v) {
                    bits[case / 64] |= 1 << (case % 64);
                }
            }
            if target(case) {
                out[case / 64] |= 1 << (case % 64);
            }
        }
        TruthTable {
            cases,
            inputs,
            target: out,
        }
    }

    pub fn errors(&self, expr: &BoolExpr) -> u32 {
        let got = expr.eval_bits(&self.inputs);
        got.iter()
            .zip(&self.target)
            .enumerate()
            .map(|(w, (g, t))| {
                let used = self.cases - w * 64;
                let mask = if used >= 64 { u64::MAX } else { (1u64 << used) - 1 };
                ((g ^ t) & mask).count_ones()
            })
            .sum()
    }
}

pub fn parity_table() -> TruthTable {
    TruthTable::build(5, 32, |case, v| case >> v & 1 == 1, |case| case.count_ones() % 2 == 1)
}

/// Register selected by the address lines; `msb_first` makes `s0` the most
/// significant address bit.
pub fn multiplexer_address(s0: bool, s1: bool, s2: bool, msb_first: bool) -> usize {
    let (hi, lo) = if msb_first { (s0, s2) } else { (s2, s0) };
    (hi as usize) << 2 | (s1 as usize) << 1 | lo as usize
}

pub fn multiplexer_table(msb_first: bool) -> TruthTable {
    let bit = |case: usize, v: usize| case >> v & 1 == 1;
    TruthTable::build(11, 2048, bit, |case| {
        let address = multiplexer_address(bit(case, 0), bit(case, 1), bit(case, 2), msb_first);
        bit(case, 3 + address)
    })
}

/// Mismatches of a flat phenotype over all 32 five-bit inputs.
pub fn parity_fitness(phenotype: &str) -> Result<u32, ProblemError> {
    let expr = BoolExpr::parse_str(phenotype, &PARITY_VARS)?;
    Ok(parity_table().errors(&expr))
}

/// Mismatches of a flat phenotype over all 2048 multiplexer inputs, with
/// `s0` as the most significant address bit.
pub fn multiplexer_fitness(phenotype: &str) -> Result<u32, ProblemError> {
    let expr = BoolExpr::parse_str(phenotype, &MULTIPLEXER_VARS)?;
    Ok(multiplexer_table(true).errors(&expr))
}

// ---------------------------------------------------------------------------
// data

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub feature_count: usize,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Dataset, ProblemError> {
        if features.is_empty() {
            return Err(ProblemError::EmptyDataset);
        }
        let feature_count = features[0].len();
        assert!(features.iter().all(|r| r.len() == feature_count), "ragged feature rows");
        assert_eq!(features.len(), targets.len());
        Ok(Dataset {
            features,
            targets,
            feature_count,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn column(&self, i: usize) -> Vec<f64> {
        self.features.iter().map(|r| r[i]).collect()
    }

    fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: rows.iter().map(|&r| self.features[r].clone()).collect(),
            targets: rows.iter().map(|&r| self.targets[r]).collect(),
            feature_count: self.feature_count,
        }
    }
}

/// Root relative squared error against the mean-predicting model.
pub fn rrse(predictions: &[f64], targets: &[f64]) -> Result<f64, ProblemError> {
    if predictions.len() != targets.len() || targets.is_empty() {
        return Err(ProblemError::LengthMismatch {
            predictions: predictions.len(),
            targets: targets.len(),
        });
    }
    let denominator = baseline_squared_error(targets)?;
    Ok(rrse_with(predictions, targets, denominator))
}

fn baseline_squared_error(targets: &[f64]) -> Result<f64, ProblemError> {
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let d: f64 = targets.iter().map(|y| (mean - y).powi(2)).sum();
    if d > 0.0 {
        Ok(d)
    } else {
        Err(ProblemError::ConstantTargets)
    }
}

fn rrse_with(predictions: &[f64], targets: &[f64], denominator: f64) -> f64 {
    let numerator: f64 = predictions.iter().zip(targets).map(|(p, y)| (p - y).powi(2)).sum();
    (numerator / denominator).sqrt()
}

pub fn pagie_target(x0: f64, x1: f64) -> f64 {
    1.0 / (1.0 + x0.powi(-4)) + 1.0 / (1.0 + x1.powi(-4))
}

/// The 26 x 26 grid over `[-5, 5]` with step 0.4.
pub fn pagie_dataset() -> Dataset {
    let axis: Vec<f64> = (0..26).map(|i| (-25 + 2 * i) as f64 / 5.0).collect();
    let mut features = Vec::with_capacity(676);
    let mut targets = Vec::with_capacity(676);
    for &a in &axis {
        for &b in &axis {
            features.push(vec![a, b]);
            targets.push(pagie_target(a, b));
        }
    }
    Dataset::new(features, targets).expect("grid is non-empty")
}

/// Reads a numeric CSV whose last column is the target. A first row with any
/// non-numeric cell is taken as a header.
pub fn load_dataset(path: &Path) -> Result<Dataset, ProblemError> {
    let io = |source| ProblemError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut width = None;
    for (index, record) in reader.records().enumerate() {
        let record = record.map_err(|e| ProblemError::Csv {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(index as u64 + 1, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let parsed: Vec<Result<f64, _>> = record.iter().map(str::parse::<f64>).collect();
        if index == 0 && parsed.iter().any(Result::is_err) {
            continue;
        }
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected || expected < 2 {
            return Err(ProblemError::ColumnCount {
                line,
                expected: expected.max(2),
                found: record.len(),
            });
        }
        let mut row = Vec::with_capacity(expected);
        for (column, (value, cell)) in parsed.into_iter().zip(record.iter()).enumerate() {
            row.push(value.map_err(|_| ProblemError::NonNumeric {
                line,
                column: column + 1,
                value: cell.to_string(),
            })?);
        }
        targets.push(row.pop().expect("at least two columns"));
        features.push(row);
    }
    Dataset::new(features, targets)
}

/// Shuffles `data` with `seed` and splits it 90/10 into train and test.
pub fn split_dataset(data: &Dataset, seed: u64) -> (Dataset, Dataset) {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = data.len() * 9 / 10;
    (data.subset(&order[..train]), data.subset(&order[train..]))
}

pub const BOSTON_FEATURES: usize = 13;

pub fn load_boston(path: &Path, split_seed: u64) -> Result<(Dataset, Dataset), ProblemError> {
    let data = load_dataset(path)?;
    if data.feature_count != BOSTON_FEATURES {
        return Err(ProblemError::ColumnCount {
            line: 1,
            expected: BOSTON_FEATURES + 1,
            found: data.feature_count + 1,
        });
    }
    Ok(split_dataset(&data, split_seed))
}

// ---------------------------------------------------------------------------
// problems

/// A benchmark: a grammar plus an error measure to minimize.
pub trait Problem: Send + Sync {
    fn name(&self) -> &str;
    fn grammar(&self) -> &Pcfg;
    /// Training error; [`WORST_FITNESS`] when the phenotype cannot be scored.
    fn fitness(&self, phenotype: &Term) -> f64;
    /// Error on held-out data, for problems that have it.
    fn test_fitness(&self, _phenotype: &Term) -> Option<f64> {
        None
    }
    fn has_test_set(&self) -> bool {
        false
    }
}

pub struct Regression {
    name: String,
    grammar: Pcfg,
    train: Dataset,
    train_baseline: f64,
    test: Option<(Dataset, f64)>,
}

impl Regression {
    pub fn new(name: &str, grammar: Pcfg, train: Dataset, test: Option<Dataset>) -> Result<Self, ProblemError> {
        let train_baseline = baseline_squared_error(&train.targets)?;
        let test = match test {
            Some(t) => {
                let b = baseline_squared_error(&t.targets)?;
                Some((t, b))
            }
            None => None,
        };
        Ok(Regression {
            name: name.to_string(),
            grammar,
            train,
            train_baseline,
            test,
        })
    }

    pub fn pagie() -> Self {
        let grammar = Pcfg::parse(PAGIE_GRAMMAR).expect("bundled grammar parses");
        Self::new("pagie", grammar, pagie_dataset(), None).expect("pagie targets vary")
    }

    pub fn boston(path: &Path, split_seed: u64, grammar_text: Option<&str>) -> Result<Self, ProblemError> {
        let (train, test) = load_boston(path, split_seed)?;
        let grammar = parse_grammar(grammar_text.unwrap_or(REGRESSION_GRAMMAR), Some(BOSTON_FEATURES))?;
        Self::new("boston", grammar, train, Some(test))
    }

    pub fn with_grammar(mut self, grammar: Pcfg) -> Self {
        self.grammar = grammar;
        self
    }

    fn score(&self, phenotype: &Term, data: &Dataset, baseline: f64) -> f64 {
        let Ok(expr) = ArithExpr::parse(phenotype) else {
            return WORST_FITNESS;
        };
        if expr.max_feature().is_some_and(|i| i >= data.feature_count) {
            return WORST_FITNESS;
        }
        let error = rrse_with(&expr.eval_dataset(data), &data.targets, baseline);
        if error.is_finite() {
            error
        } else {
            WORST_FITNESS
        }
    }
}

impl Problem for Regression {
    fn name(&self) -> &str {
        &self.name
    }

    fn grammar(&self) -> &Pcfg {
        &self.grammar
    }

    fn fitness(&self, phenotype: &Term) -> f64 {
        self.score(phenotype, &self.train, self.train_baseline)
    }

    fn test_fitness(&self, phenotype: &Term) -> Option<f64> {
        self.test.as_ref().map(|(data, b)| self.score(phenotype, data, *b))
    }

    fn has_test_set(&self) -> bool {
        self.test.is_some()
    }
}

pub struct BooleanProblem {
    name: String,
    grammar: Pcfg,
    vars: Vec<&'static str>,
    table: TruthTable,
}

impl BooleanProblem {
    pub fn parity5() -> Self {
        BooleanProblem {
            name: "parity5".into(),
            grammar: Pcfg::parse(PARITY_GRAMMAR).expect("bundled grammar parses"),
            vars: PARITY_VARS.to_vec(),
            table: parity_table(),
        }
    }

    /// `full_terminals` selects the grammar that also offers register `i2`.
    pub fn multiplexer11(msb_first: bool, full_terminals: bool) -> Self {
        let text = if full_terminals {
            MULTIPLEXER_FULL_GRAMMAR
        } else {
            MULTIPLEXER_GRAMMAR
        };
        BooleanProblem {
            name: "multiplexer11".into(),
            grammar: Pcfg::parse(text).expect("bundled grammar parses"),
            vars: MULTIPLEXER_VARS.to_vec(),
            table: multiplexer_table(msb_first),
        }
    }

    pub fn with_grammar(mut self, grammar: Pcfg) -> Self {
        self.grammar = grammar;
        self
    }

    pub fn table(&self) -> &TruthTable {
        &self.table
    }

    pub fn errors(&self, phenotype: &Term) -> Result<u32, ProblemError> {
        Ok(self.table.errors(&BoolExpr::parse(phenotype, &self.vars)?))
    }
}

impl Problem for BooleanProblem {
    fn name(&self) -> &str {
        &self.name
    }

    fn grammar(&self) -> &Pcfg {
        &self.grammar
    }

    fn fitness(&self, phenotype: &Term) -> f64 {
        self.errors(phenotype).map_or(WORST_FITNESS, f64::from)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{copsge_create_individual, ge_map, IntGenotype};
    use rand::{Rng, SeedableRng};
    use std::io::Write;

    #[test]
    fn arith_examples() {
        assert_eq!(eval_arith("1.0 - x[0]", &[0.5]).unwrap(), 0.5);
        assert_eq!(eval_arith("x[0] / 1.0", &[0.0]).unwrap(), 0.0);
        assert_eq!(eval_arith("1.0 / x[0]", &[0.0]).unwrap(), 1.0);
        assert_eq!(eval_arith("log ( x[0] )", &[-3.0]).unwrap(), 0.0);
        assert_eq!(eval_arith("log ( x[0] )", &[0.0]).unwrap(), 0.0);
        assert_eq!(eval_arith("inv ( x[0] )", &[0.0]).unwrap(), 1.0);
        assert_eq!(eval_arith("inv ( x[0] )", &[4.0]).unwrap(), 0.25);
        assert_eq!(eval_arith("exp ( x[0] )", &[1000.0]).unwrap(), EXP_CEILING);
        assert_eq!(eval_arith("1.0 + x[0] * x[1]", &[2.0, 3.0]).unwrap(), 7.0);
        assert_eq!(eval_arith("( 1.0 + x[0] ) * x[1]", &[2.0, 3.0]).unwrap(), 9.0);
        assert!((eval_arith("sin ( x[0] ) + cos ( x[0] )", &[0.3]).unwrap() - (0.3f64.sin() + 0.3f64.cos())).abs() < 1e-15);
        assert!(eval_arith("x[3]", &[1.0]).is_err());
        assert!(eval_arith("1.0 +", &[]).is_err());
        assert!(eval_arith("foo", &[]).is_err());
    }

    #[test]
    fn tree_grouping_overrides_precedence() {
        // (1.0 - x[0]) * x[1] built as an explicit tree without parentheses
        let tok = |s: &str| Term::Token(s.into());
        let term = Term::Group(vec![
            Term::Group(vec![tok("1.0"), tok("-"), tok("x[0]")]),
            Term::Group(vec![tok("*")]),
            Term::Group(vec![tok("x[1]")]),
        ]);
        let e = ArithExpr::parse(&term).unwrap();
        assert_eq!(e.eval(&[0.25, 2.0]), 1.5);
        // the flat reading would give 1.0 - 0.5
        assert_eq!(eval_arith("1.0 - x[0] * x[1]", &[0.25, 2.0]).unwrap(), 0.5);
    }

    #[test]
    fn bool_examples() {
        let bits = |v: &[u8]| v.iter().map(|&b| b == 1).collect::<Vec<_>>();
        assert!(eval_bool("b0 and b1", &bits(&[1, 1, 0, 0, 0])).unwrap());
        assert!(eval_bool("not ( b0 or b1 )", &bits(&[0, 0, 0, 0, 0])).unwrap());
        // s0 s1 s2 i0..i7
        let mut mux = vec![false; 11];
        mux[0] = true;
        mux[4] = true;
        assert!(!eval_bool("i0 if s0 else i1", &mux).unwrap());
        mux[0] = false;
        assert!(eval_bool("i0 if s0 else i1", &mux).unwrap());
        assert!(eval_bool("b0 or", &bits(&[0; 5])).is_err());
        assert!(eval_bool("q7", &bits(&[0; 5])).is_err());
    }

    fn parity_oracle(expr: &BoolExpr) -> u32 {
        (0..32u32)
            .filter(|case| {
                let inputs: Vec<bool> = (0..5).map(|v| case >> v & 1 == 1).collect();
                expr.eval(&inputs) != (case.count_ones() % 2 == 1)
            })
            .count() as u32
    }

    #[test]
    fn parity_examples() {
        assert_eq!(parity_fitness("b0 or not ( b0 or b0 )").unwrap(), 16);
        let xor = |a: &str, b: &str| format!("( ( {a} or {b} ) and not ( {a} and {b} ) )");
        let exact = xor(&xor(&xor(&xor("b0", "b1"), "b2"), "b3"), "b4");
        assert_eq!(parity_fitness(&exact).unwrap(), 0);
        let negated = format!("not {exact}");
        assert_eq!(parity_fitness(&negated).unwrap(), 32);
    }

    #[test]
    fn multiplexer_examples() {
        assert_eq!(multiplexer_fitness("i0").unwrap(), 896);
        let exact = "( ( ( i7 if s2 else i6 ) if s1 else ( i5 if s2 else i4 ) ) if s0 else \
                     ( ( i3 if s2 else i2 ) if s1 else ( i1 if s2 else i0 ) ) )";
        assert_eq!(multiplexer_fitness(exact).unwrap(), 0);
        assert_eq!(multiplexer_address(true, false, false, true), 4);
        assert_eq!(multiplexer_address(true, false, false, false), 1);
        let lsb = BooleanProblem::multiplexer11(false, true);
        assert!(lsb.errors(&Term::from_text(exact)).unwrap() > 0);
    }

    #[test]
    fn bitset_evaluation_matches_scalar_oracle() {
        let grammar = Pcfg::parse(PARITY_GRAMMAR).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..300 {
            let ind = copsge_create_individual(&grammar, 6, &mut rng);
            let text = ind.phenotype_text();
            let expr = BoolExpr::parse_str(text, &PARITY_VARS).unwrap();
            let bound = parity_fitness(text).unwrap();
            assert_eq!(bound, parity_oracle(&expr));
            assert!(bound <= 32);
        }
    }

    #[test]
    fn rrse_examples() {
        let t = [0.0, 4.0];
        assert_eq!(rrse(&t, &t).unwrap(), 0.0);
        assert_eq!(rrse(&[2.0, 2.0], &t).unwrap(), 1.0);
        assert!((rrse(&[1.0, 2.0], &t).unwrap() - 0.625f64.sqrt()).abs() < 1e-15);
        assert!(matches!(rrse(&[1.0, 2.0], &[3.0, 3.0]), Err(ProblemError::ConstantTargets)));
        assert!(rrse(&[1.0], &t).is_err());
    }

    #[test]
    fn rrse_is_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let y: Vec<f64> = (0..20).map(|_| rng.random_range(-5.0..5.0)).collect();
            let p: Vec<f64> = (0..20).map(|_| rng.random_range(-5.0..5.0)).collect();
            let c = rng.random_range(-100.0..100.0);
            let ys: Vec<f64> = y.iter().map(|v| v + c).collect();
            let ps: Vec<f64> = p.iter().map(|v| v + c).collect();
            assert!((rrse(&p, &y).unwrap() - rrse(&ps, &ys).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn pagie_grid() {
        let d = pagie_dataset();
        assert_eq!(d.len(), 676);
        assert_eq!(d.feature_count, 2);
        assert!(d.features.iter().flatten().all(|&v| v != 0.0));
        let at = |a: f64, b: f64| {
            let i = d.features.iter().position(|r| r[0] == a && r[1] == b).unwrap();
            d.targets[i]
        };
        assert!((at(5.0, 5.0) - 1.996805).abs() < 1e-6);
        assert_eq!(at(-5.0, 5.0), at(5.0, -5.0));
        assert_eq!(d.features[0], vec![-5.0, -5.0]);
        assert_eq!(d.features[675], vec![5.0, 5.0]);
        assert!((d.features[1][1] - -4.6).abs() < 1e-15);
    }

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_loading() {
        let f = write_csv("a,b,target\n1,2,3\n4,5,6\n");
        let d = load_dataset(f.path()).unwrap();
        assert_eq!(d.feature_count, 2);
        assert_eq!(d.targets, vec![3.0, 6.0]);

        let f = write_csv("1,2,3\n4,5,6\n");
        assert_eq!(load_dataset(f.path()).unwrap().len(), 2);

        let f = write_csv("1,2,3\n4,5\n");
        assert!(matches!(
            load_dataset(f.path()),
            Err(ProblemError::ColumnCount { line: 2, expected: 3, found: 2 })
        ));

        let f = write_csv("1,2,3\n4,oops,6\n");
        match load_dataset(f.path()) {
            Err(ProblemError::NonNumeric { line, column, value }) => {
                assert_eq!((line, column, value.as_str()), (2, 2, "oops"));
            }
            other => panic!("unexpected {other:?}"),
        }

        assert!(matches!(
            load_dataset(Path::new("/nonexistent/boston.csv")),
            Err(ProblemError::Io { .. })
        ));
    }

    #[test]
    fn boston_split() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/boston_fixture.csv");
        let (train, test) = load_boston(&path, 3).unwrap();
        assert_eq!((train.len(), test.len()), (18, 2));
        assert_eq!(train.feature_count, 13);
        let (train2, test2) = load_boston(&path, 3).unwrap();
        assert_eq!((train, test), (train2, test2));

        // 506 synthetic rows split into 455 + 51
        let rows: String = (0..506)
            .map(|i| {
                let cells: Vec<String> = (0..14).map(|c| format!("{}", i * 14 + c)).collect();
                cells.join(",") + "\n"
            })
            .collect();
        let f = write_csv(&rows);
        let (train, test) = load_boston(f.path(), 1).unwrap();
        assert_eq!((train.len(), test.len()), (455, 51));
        let mut all: Vec<f64> = train.targets.iter().chain(&test.targets).copied().collect();
        all.sort_by(f64::total_cmp);
        let expected: Vec<f64> = (0..506).map(|i| (i * 14 + 13) as f64).collect();
        assert_eq!(all, expected);

        let f = write_csv("1,2,3\n4,5,6\n");
        assert!(matches!(load_boston(f.path(), 0), Err(ProblemError::ColumnCount { .. })));
    }

    #[test]
    fn evaluators_are_total_over_their_languages() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let pagie = Regression::pagie();
        let parity = BooleanProblem::parity5();
        let mux = BooleanProblem::multiplexer11(true, false);
        for problem in [&pagie as &dyn Problem, &parity, &mux] {
            let g = problem.grammar();
            for _ in 0..2000 {
                let ind = copsge_create_individual(g, 8, &mut rng);
                let term = ind.phenotype.unwrap().derivation.to_term(g);
                let f = problem.fitness(&term);
                assert!(!f.is_nan());
            }
            // GE phenotypes exercise deeper, unbalanced trees
            for _ in 0..500 {
                let genotype = IntGenotype((0..128).map(|_| rng.random()).collect());
                if let Some(d) = ge_map(&genotype, g) {
                    assert!(!problem.fitness(&d.to_term(g)).is_nan());
                }
            }
        }
    }
}
