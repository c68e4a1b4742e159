//! Genotype representations and genotype-to-phenotype mapping.
//!
//! Four encodings share one derivation model:
//!
//! * GE: fixed-length vector of integer codons in `[0, 255]`, rule = codon mod k.
//! * PGE: fixed-length vector of real codons in `[0, 1]`, rule chosen by
//!   cumulative probability.
//! * SGE: one dynamic list of production indices per non-terminal.
//! * Co-PSGE: one dynamic list of real codons per non-terminal, read through
//!   the individual's own grammar.
//!
//! GE and PGE never wrap; running out of codons makes the individual invalid.
//! The structured encodings extend their lists on demand and force
//! non-recursive productions once the depth limit is reached, so they always
//! produce a complete sentence.

use rand::Rng;

use crate::grammar::{NtId, Pcfg, Symbol};

/// Fitness assigned to individuals without a phenotype.
pub const WORST_FITNESS: f64 = f64::INFINITY;

pub const INVALID_PHENOTYPE: &str = "INVALID";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntGenotype(pub Vec<u8>);

#[derive(Debug, Clone, PartialEq)]
pub struct RealGenotype(pub Vec<f64>);

/// Per-non-terminal codon lists, indexed by [`NtId`].
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredGenotype<C> {
    pub lists: Vec<Vec<C>>,
}

pub type SgeGenotype = StructuredGenotype<u32>;
pub type CopsgeGenotype = StructuredGenotype<f64>;

impl<C> StructuredGenotype<C> {
    pub fn empty(grammar: &Pcfg) -> Self {
        StructuredGenotype {
            lists: (0..grammar.non_terminal_count()).map(|_| Vec::new()).collect(),
        }
    }

    pub fn from_lists(lists: Vec<Vec<C>>) -> Self {
        StructuredGenotype { lists }
    }

    pub fn list(&self, nt: NtId) -> &[C] {
        &self.lists[nt.0]
    }

    pub fn codon_count(&self) -> usize {
        self.lists.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Genotype {
    Ge(IntGenotype),
    Pge(RealGenotype),
    Sge(SgeGenotype),
    Copsge(CopsgeGenotype),
}

/// One expansion step: `nt` was rewritten with production `rule`; `children`
/// follow the non-terminals of that production from left to right.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivation {
    pub nt: NtId,
    pub rule: usize,
    pub children: Vec<Derivation>,
}

/// Phenotype with its grouping preserved: every expansion becomes a group.
#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Token(String),
    Group(Vec<Term>),
}

impl Term {
    pub fn tokens(&self) -> Vec<&str> {
        fn walk<'a>(t: &'a Term, out: &mut Vec<&'a str>) {
            match t {
                Term::Token(s) => out.push(s),
                Term::Group(items) => items.iter().for_each(|i| walk(i, out)),
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }

    /// A single flat group, as read from a phenotype string.
    pub fn from_text(text: &str) -> Term {
        Term::Group(text.split_whitespace().map(|t| Term::Token(t.to_string())).collect())
    }
}

impl Derivation {
    pub fn to_term(&self, grammar: &Pcfg) -> Term {
        let prod = &grammar.productions(self.nt)[self.rule];
        let mut children = self.children.iter();
        Term::Group(
            prod.symbols
                .iter()
                .map(|s| match s {
                    Symbol::Terminal(t) => Term::Token(t.clone()),
                    Symbol::NonTerminal(_) => children.next().expect("child per non-terminal").to_term(grammar),
                })
                .collect(),
        )
    }

    pub fn text(&self, grammar: &Pcfg) -> String {
        let mut out = String::new();
        self.write_text(grammar, &mut out);
        out
    }

    fn write_text(&self, grammar: &Pcfg, out: &mut String) {
        let prod = &grammar.productions(self.nt)[self.rule];
        let mut children = self.children.iter();
        for s in &prod.symbols {
            match s {
                Symbol::Terminal(t) => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(t);
                }
                Symbol::NonTerminal(_) => children.next().expect("child per non-terminal").write_text(grammar, out),
            }
        }
    }

    /// Edges on the longest root-to-leaf path; the axiom sits at depth 0.
    pub fn depth(&self) -> usize {
        self.children.iter().map(|c| 1 + c.depth()).max().unwrap_or(0)
    }

    pub fn expansions(&self) -> usize {
        1 + self.children.iter().map(Derivation::expansions).sum::<usize>()
    }

    /// `(non-terminal, rule)` pairs in the order the expansions happened.
    pub fn preorder(&self) -> Vec<(NtId, usize)> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(d) = stack.pop() {
            out.push((d.nt, d.rule));
            stack.extend(d.children.iter().rev());
        }
        out
    }

    /// How often each production was used, indexed `[nt][rule]`.
    pub fn usage(&self, grammar: &Pcfg) -> Vec<Vec<u32>> {
        let mut counts: Vec<Vec<u32>> = grammar
            .rules()
            .iter()
            .map(|r| vec![0; r.productions.len()])
            .collect();
        for (nt, rule) in self.preorder() {
            counts[nt.0][rule] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phenotype {
    pub text: String,
    pub derivation: Derivation,
}

impl Phenotype {
    pub fn new(derivation: Derivation, grammar: &Pcfg) -> Phenotype {
        Phenotype {
            text: derivation.text(grammar),
            derivation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub genotype: Genotype,
    /// Personal grammar, Co-PSGE only.
    pub grammar: Option<Pcfg>,
    pub phenotype: Option<Phenotype>,
    pub fitness: f64,
}

impl Individual {
    pub fn new(genotype: Genotype, grammar: Option<Pcfg>) -> Individual {
        Individual {
            genotype,
            grammar,
            phenotype: None,
            fitness: WORST_FITNESS,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.phenotype.is_some()
    }

    pub fn phenotype_text(&self) -> &str {
        self.phenotype.as_ref().map_or(INVALID_PHENOTYPE, |p| p.text.as_str())
    }
}

/// Chooses the first production whose cumulative probability reaches
/// `codon`. Zero-probability productions are never chosen; if rounding
/// leaves the total marginally below `codon` the last eligible production
/// wins.
pub fn select_cumulative(probs: impl IntoIterator<Item = (usize, f64)>, codon: f64) -> usize {
    let mut cumulative = 0.0;
    let mut last = None;
    for (index, p) in probs {
        if p <= 0.0 {
            continue;
        }
        cumulative += p;
        last = Some(index);
        if codon <= cumulative {
            return index;
        }
    }
    last.expect("at least one production with positive probability")
}

/// Rule selection for probabilistic structured mapping. Below the depth
/// limit every production competes; at or beyond it only non-recursive
/// productions do, with their probabilities renormalized to sum to one.
pub fn generate_expansion(nt: NtId, codon: f64, grammar: &Pcfg, depth: usize, max_depth: usize) -> usize {
    let prods = grammar.productions(nt);
    if depth < max_depth {
        return select_cumulative(prods.iter().map(|p| p.probability).enumerate(), codon);
    }
    let total: f64 = prods.iter().filter(|p| !p.recursive).map(|p| p.probability).sum();
    if total > 0.0 {
        select_cumulative(
            prods
                .iter()
                .enumerate()
                .filter(|(_, p)| !p.recursive)
                .map(|(i, p)| (i, p.probability / total)),
            codon,
        )
    } else {
        // every terminating production has been mutated down to zero
        let eligible = prods.iter().filter(|p| !p.recursive).count() as f64;
        select_cumulative(
            prods
                .iter()
                .enumerate()
                .filter(|(_, p)| !p.recursive)
                .map(|(i, _)| (i, 1.0 / eligible)),
            codon,
        )
    }
}

fn expand_linear(grammar: &Pcfg, nt: NtId, choose: &mut impl FnMut(NtId) -> Option<usize>) -> Option<Derivation> {
    let rule = choose(nt)?;
    let children = grammar.productions(nt)[rule]
        .non_terminals()
        .map(|child| expand_linear(grammar, child, choose))
        .collect::<Option<Vec<_>>>()?;
    Some(Derivation { nt, rule, children })
}

/// Classic GE mapping; `None` when the codons run out first.
pub fn ge_map(genotype: &IntGenotype, grammar: &Pcfg) -> Option<Derivation> {
    let mut codons = genotype.0.iter();
    expand_linear(grammar, grammar.axiom(), &mut |nt| {
        let codon = *codons.next()? as usize;
        Some(codon % grammar.productions(nt).len())
    })
}

/// PGE mapping; `None` when the codons run out first.
pub fn pge_map(genotype: &RealGenotype, grammar: &Pcfg) -> Option<Derivation> {
    let mut codons = genotype.0.iter();
    expand_linear(grammar, grammar.axiom(), &mut |nt| {
        let codon = *codons.next()?;
        Some(select_cumulative(
            grammar.productions(nt).iter().map(|p| p.probability).enumerate(),
            codon,
        ))
    })
}

/// Result of a structured mapping: the derivation plus the number of codons
/// consumed from each list.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredMapping {
    pub derivation: Derivation,
    pub positions: Vec<usize>,
}

/// Co-PSGE mapping. Lists that run short are extended with codons from
/// `fresh`, in place.
pub fn copsge_map_with(
    genotype: &mut CopsgeGenotype,
    grammar: &Pcfg,
    max_depth: usize,
    fresh: &mut impl FnMut() -> f64,
) -> StructuredMapping {
    fn expand(
        genotype: &mut CopsgeGenotype,
        positions: &mut [usize],
        nt: NtId,
        depth: usize,
        max_depth: usize,
        grammar: &Pcfg,
        fresh: &mut impl FnMut() -> f64,
    ) -> Derivation {
        let list = &mut genotype.lists[nt.0];
        if positions[nt.0] >= list.len() {
            list.push(fresh());
        }
        let codon = list[positions[nt.0]];
        let rule = generate_expansion(nt, codon, grammar, depth, max_depth);
        positions[nt.0] += 1;
        let children = grammar.productions(nt)[rule]
            .non_terminals()
            .map(|child| expand(genotype, positions, child, depth + 1, max_depth, grammar, fresh))
            .collect();
        Derivation { nt, rule, children }
    }

    let mut positions = vec![0; grammar.non_terminal_count()];
    let derivation = expand(genotype, &mut positions, grammar.axiom(), 0, max_depth, grammar, fresh);
    StructuredMapping { derivation, positions }
}

pub fn copsge_map<R: Rng + ?Sized>(
    genotype: &mut CopsgeGenotype,
    grammar: &Pcfg,
    max_depth: usize,
    rng: &mut R,
) -> StructuredMapping {
    copsge_map_with(genotype, grammar, max_depth, &mut || rng.random::<f64>())
}

/// A random Co-PSGE individual carrying its own copy of `grammar`. Creation
/// is mapping from empty lists: every expansion draws the codon it reads.
pub fn copsge_create_individual<R: Rng + ?Sized>(grammar: &Pcfg, max_depth: usize, rng: &mut R) -> Individual {
    copsge_create_with(grammar, max_depth, &mut || rng.random::<f64>())
}

pub fn copsge_create_with(grammar: &Pcfg, max_depth: usize, fresh: &mut impl FnMut() -> f64) -> Individual {
    let mut genotype = CopsgeGenotype::empty(grammar);
    let mapping = copsge_map_with(&mut genotype, grammar, max_depth, fresh);
    Individual {
        genotype: Genotype::Copsge(genotype),
        grammar: Some(grammar.clone()),
        phenotype: Some(Phenotype::new(mapping.derivation, grammar)),
        fitness: WORST_FITNESS,
    }
}

/// Production chosen by an SGE codon. At or beyond the depth limit the
/// codon indexes the non-recursive subset, modulo its size.
pub fn sge_rule(grammar: &Pcfg, nt: NtId, codon: u32, depth: usize, max_depth: usize) -> usize {
    let prods = grammar.productions(nt);
    let codon = codon as usize;
    if depth < max_depth {
        return codon % prods.len();
    }
    let eligible = prods.iter().filter(|p| !p.recursive).count();
    prods
        .iter()
        .enumerate()
        .filter(|(_, p)| !p.recursive)
        .nth(codon % eligible)
        .map(|(i, _)| i)
        .expect("validated grammars keep a non-recursive production")
}

/// SGE mapping with list extension. New codons are uniform over all
/// productions below the depth limit and over the non-recursive subset at or
/// beyond it.
pub fn sge_map<R: Rng + ?Sized>(
    genotype: &mut SgeGenotype,
    grammar: &Pcfg,
    max_depth: usize,
    rng: &mut R,
) -> StructuredMapping {
    fn expand<R: Rng + ?Sized>(
        genotype: &mut SgeGenotype,
        positions: &mut [usize],
        nt: NtId,
        depth: usize,
        max_depth: usize,
        grammar: &Pcfg,
        rng: &mut R,
    ) -> Derivation {
        let list = &mut genotype.lists[nt.0];
        if positions[nt.0] >= list.len() {
            let prods = grammar.productions(nt);
            let choices = if depth < max_depth {
                prods.len()
            } else {
                prods.iter().filter(|p| !p.recursive).count()
            };
            list.push(rng.random_range(0..choices as u32));
        }
        let rule = sge_rule(grammar, nt, list[positions[nt.0]], depth, max_depth);
        positions[nt.0] += 1;
        let children = grammar.productions(nt)[rule]
            .non_terminals()
            .map(|child| expand(genotype, positions, child, depth + 1, max_depth, grammar, rng))
            .collect();
        Derivation { nt, rule, children }
    }

    let mut positions = vec![0; grammar.non_terminal_count()];
    let derivation = expand(genotype, &mut positions, grammar.axiom(), 0, max_depth, grammar, rng);
    StructuredMapping { derivation, positions }
}

pub fn sge_create_individual<R: Rng + ?Sized>(grammar: &Pcfg, max_depth: usize, rng: &mut R) -> Individual {
    let mut genotype = SgeGenotype::empty(grammar);
    let mapping = sge_map(&mut genotype, grammar, max_depth, rng);
    Individual {
        genotype: Genotype::Sge(genotype),
        grammar: None,
        phenotype: Some(Phenotype::new(mapping.derivation, grammar)),
        fitness: WORST_FITNESS,
    }
}

/// Re-derives the phenotype of `ind` from its genotype. Structured lists may
/// grow. `grammar` is the shared grammar; a personal grammar takes precedence.
pub fn remap<R: Rng + ?Sized>(ind: &mut Individual, grammar: &Pcfg, max_depth: usize, rng: &mut R) {
    let personal = ind.grammar.as_ref().unwrap_or(grammar);
    let derivation = match &mut ind.genotype {
        Genotype::Ge(g) => ge_map(g, personal),
        Genotype::Pge(g) => pge_map(g, personal),
        Genotype::Sge(g) => Some(sge_map(g, personal, max_depth, rng).derivation),
        Genotype::Copsge(g) => Some(copsge_map(g, personal, max_depth, rng).derivation),
    };
    ind.phenotype = derivation.map(|d| Phenotype::new(d, personal));
    ind.fitness = WORST_FITNESS;
}
