//! Generational loop shared by GE, PGE, SGE and Co-PSGE.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::encoding::{
    copsge_create_individual, remap, sge_create_individual, Genotype, Individual, IntGenotype, RealGenotype,
    WORST_FITNESS,
};
use crate::grammar::Pcfg;
use crate::problems::Problem;
use crate::variation::{
    copsge_gaussian_mutation, ge_int_mutation, ge_one_point_crossover, mask_crossover, pge_float_mutation,
    pge_one_point_crossover, pge_update_probabilities, sge_int_mutation,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Ge,
    Pge,
    Sge,
    Copsge,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Ge, Algorithm::Pge, Algorithm::Sge, Algorithm::Copsge];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ge => "ge",
            Algorithm::Pge => "pge",
            Algorithm::Sge => "sge",
            Algorithm::Copsge => "copsge",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown algorithm `{0}` (expected ge, pge, sge or copsge)")]
pub struct UnknownAlgorithm(pub String);

impl FromStr for Algorithm {
    type Err = UnknownAlgorithm;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ge" => Ok(Algorithm::Ge),
            "pge" => Ok(Algorithm::Pge),
            "sge" => Ok(Algorithm::Sge),
            "copsge" | "co-psge" => Ok(Algorithm::Copsge),
            _ => Err(UnknownAlgorithm(s.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("parameter `{name}` = {value}: {reason}")]
pub struct ParameterError {
    pub name: &'static str,
    pub value: String,
    pub reason: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub population_size: usize,
    pub generations: usize,
    pub elitism_count: usize,
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    pub tournament_size: usize,
    /// GE and PGE only.
    pub genotype_size: usize,
    /// SGE and Co-PSGE only.
    pub max_depth: usize,
    pub grammar_mutation_prob: f64,
    pub grammar_mutation_sd: f64,
    pub learning_factor: f64,
    pub seed: u64,
    /// Breed and evaluate individuals on the rayon pool. Results do not
    /// depend on this flag.
    pub parallel: bool,
}

impl Default for Parameters {
    fn default() -> Self {
        Parameters {
            population_size: 1000,
            generations: 50,
            elitism_count: 100,
            mutation_rate: 0.05,
            crossover_rate: 0.9,
            tournament_size: 3,
            genotype_size: 128,
            max_depth: 10,
            grammar_mutation_prob: 0.05,
            grammar_mutation_sd: 0.5,
            learning_factor: 0.01,
            seed: 0,
            parallel: true,
        }
    }
}

impl Parameters {
    pub fn validate(&self) -> Result<(), ParameterError> {
        fn err(name: &'static str, value: impl fmt::Display, reason: &'static str) -> Result<(), ParameterError> {
            Err(ParameterError {
                name,
                value: value.to_string(),
                reason,
            })
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if self.population_size == 0 {
            return err("population_size", self.population_size, "must be at least 1");
        }
        if self.elitism_count >= self.population_size {
            return err("elitism_count", self.elitism_count, "must be below population_size");
        }
        if !unit(self.mutation_rate) {
            return err("mutation_rate", self.mutation_rate, "must lie in [0, 1]");
        }
        if !unit(self.crossover_rate) {
            return err("crossover_rate", self.crossover_rate, "must lie in [0, 1]");
        }
        if self.tournament_size == 0 {
            return err("tournament_size", self.tournament_size, "must be at least 1");
        }
        if self.genotype_size == 0 {
            return err("genotype_size", self.genotype_size, "must be at least 1");
        }
        if self.max_depth == 0 {
            return err("max_depth", self.max_depth, "must be at least 1");
        }
        if !unit(self.grammar_mutation_prob) {
            return err("grammar_mutation_prob", self.grammar_mutation_prob, "must lie in [0, 1]");
        }
        if !(self.grammar_mutation_sd > 0.0 && self.grammar_mutation_sd.is_finite()) {
            return err("grammar_mutation_sd", self.grammar_mutation_sd, "must be positive");
        }
        if !unit(self.learning_factor) {
            return err("learning_factor", self.learning_factor, "must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub generation: usize,
    pub best_fitness: f64,
    /// Mean over individuals with finite fitness; infinite when there are none.
    pub mean_fitness: f64,
    pub invalid_count: usize,
    pub best_phenotype: String,
    /// Held-out error of the generation's best, for problems with a test set.
    pub best_test_fitness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub algorithm: Algorithm,
    pub problem: String,
    pub seed: u64,
    pub parameters: Parameters,
    pub generations: Vec<GenerationRecord>,
    pub best: Individual,
    /// Personal grammar of the final best (Co-PSGE) or the learned shared
    /// grammar (PGE).
    pub best_grammar: Option<Pcfg>,
}

/// Samples `k` individuals with replacement and returns the fittest; ties go
/// to the one sampled first.
pub fn tournament_select<'a, R: Rng + ?Sized>(population: &'a [Individual], k: usize, rng: &mut R) -> &'a Individual {
    let mut best = &population[rng.random_range(0..population.len())];
    for _ in 1..k {
        let candidate = &population[rng.random_range(0..population.len())];
        if candidate.fitness < best.fitness {
            best = candidate;
        }
    }
    best
}

/// The independent stream used by `slot` in `generation`.
pub fn slot_rng(seed: u64, generation: usize, slot: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((generation as u64) << 32 | slot as u64);
    rng
}

/// Copy of `grammar` with every non-terminal's productions equally likely.
pub fn uniform_grammar(grammar: &Pcfg) -> Pcfg {
    let mut g = grammar.clone();
    for nt in grammar.non_terminals() {
        let k = grammar.productions(nt).len();
        g.set_probabilities(nt, &vec![1.0 / k as f64; k]);
    }
    g
}

pub fn create_individual<R: Rng + ?Sized>(
    algorithm: Algorithm,
    grammar: &Pcfg,
    params: &Parameters,
    rng: &mut R,
) -> Individual {
    let mut ind = match algorithm {
        Algorithm::Ge => Individual::new(
            Genotype::Ge(IntGenotype((0..params.genotype_size).map(|_| rng.random()).collect())),
            None,
        ),
        Algorithm::Pge => Individual::new(
            Genotype::Pge(RealGenotype((0..params.genotype_size).map(|_| rng.random()).collect())),
            None,
        ),
        Algorithm::Sge => return sge_create_individual(grammar, params.max_depth, rng),
        Algorithm::Copsge => return copsge_create_individual(grammar, params.max_depth, rng),
    };
    remap(&mut ind, grammar, params.max_depth, rng);
    ind
}

pub fn initialize_population(algorithm: Algorithm, grammar: &Pcfg, params: &Parameters) -> Vec<Individual> {
    let make = |slot| create_individual(algorithm, grammar, params, &mut slot_rng(params.seed, 0, slot));
    if params.parallel {
        (0..params.population_size).into_par_iter().map(make).collect()
    } else {
        (0..params.population_size).map(make).collect()
    }
}

fn evaluate(ind: &mut Individual, grammar: &Pcfg, problem: &dyn Problem) {
    ind.fitness = match &ind.phenotype {
        Some(p) => problem.fitness(&p.derivation.to_term(grammar)),
        None => WORST_FITNESS,
    };
}

/// A run in progress. Generation 0 is created and evaluated by [`Evolution::new`];
/// each [`Evolution::step`] produces one more generation.
pub struct Evolution<'p> {
    problem: &'p dyn Problem,
    algorithm: Algorithm,
    params: Parameters,
    grammar: Pcfg,
    population: Vec<Individual>,
    generation: usize,
    best_overall: Individual,
    records: Vec<GenerationRecord>,
}

impl<'p> Evolution<'p> {
    pub fn new(problem: &'p dyn Problem, algorithm: Algorithm, params: Parameters) -> Result<Self, ParameterError> {
        params.validate()?;
        let grammar = match algorithm {
            Algorithm::Pge | Algorithm::Copsge => uniform_grammar(problem.grammar()),
            Algorithm::Ge | Algorithm::Sge => problem.grammar().clone(),
        };
        let mut population = initialize_population(algorithm, &grammar, &params);
        Self::evaluate_all(&mut population, &grammar, problem, params.parallel);
        let best_overall = population[best_index(&population)].clone();
        let mut evolution = Evolution {
            problem,
            algorithm,
            params,
            grammar,
            population,
            generation: 0,
            best_overall,
            records: Vec::new(),
        };
        evolution.finish_generation();
        Ok(evolution)
    }

    fn evaluate_all(population: &mut [Individual], grammar: &Pcfg, problem: &dyn Problem, parallel: bool) {
        if parallel {
            population.par_iter_mut().for_each(|ind| evaluate(ind, grammar, problem));
        } else {
            population.iter_mut().for_each(|ind| evaluate(ind, grammar, problem));
        }
    }

    pub fn population(&self) -> &[Individual] {
        &self.population
    }

    /// Shared grammar: uniform for Co-PSGE, learned for PGE.
    pub fn grammar(&self) -> &Pcfg {
        &self.grammar
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn records(&self) -> &[GenerationRecord] {
        &self.records
    }

    pub fn best_overall(&self) -> &Individual {
        &self.best_overall
    }

    fn breed(&self, slot: usize) -> Individual {
        let p = &self.params;
        let rng = &mut slot_rng(p.seed, self.generation + 1, slot);
        let a = tournament_select(&self.population, p.tournament_size, rng);
        let b = tournament_select(&self.population, p.tournament_size, rng);
        let fitter = if b.fitness < a.fitness { b } else { a };
        let crossover = rng.random::<f64>() < p.crossover_rate;

        let mut child = match (&a.genotype, &b.genotype) {
            (Genotype::Ge(ga), Genotype::Ge(gb)) => {
                let g = if crossover {
                    ge_one_point_crossover(ga, gb, rng).0
                } else {
                    match &fitter.genotype {
                        Genotype::Ge(g) => g.clone(),
                        _ => unreachable!(),
                    }
                };
                Individual::new(Genotype::Ge(ge_int_mutation(&g, p.mutation_rate, rng)), None)
            }
            (Genotype::Pge(ga), Genotype::Pge(gb)) => {
                let g = if crossover {
                    pge_one_point_crossover(ga, gb, rng).0
                } else {
                    match &fitter.genotype {
                        Genotype::Pge(g) => g.clone(),
                        _ => unreachable!(),
                    }
                };
                Individual::new(Genotype::Pge(pge_float_mutation(&g, p.mutation_rate, rng)), None)
            }
            _ => {
                let mut child = if crossover {
                    mask_crossover(a, b, rng)
                } else {
                    fitter.clone()
                };
                child.genotype = match &child.genotype {
                    Genotype::Sge(g) => Genotype::Sge(sge_int_mutation(g, p.mutation_rate, &self.grammar, rng)),
                    Genotype::Copsge(g) => Genotype::Copsge(copsge_gaussian_mutation(
                        g,
                        p.mutation_rate,
                        p.grammar_mutation_sd,
                        rng,
                    )),
                    _ => unreachable!("population mixes encodings"),
                };
                if let Some(g) = &child.grammar {
                    child.grammar = Some(g.mutate(p.grammar_mutation_prob, p.grammar_mutation_sd, rng));
                }
                child
            }
        };
        remap(&mut child, &self.grammar, p.max_depth, rng);
        evaluate(&mut child, &self.grammar, self.problem);
        child
    }

    /// Produces and evaluates the next generation.
    pub fn step(&mut self) {
        let elites: Vec<Individual> = {
            let mut order: Vec<usize> = (0..self.population.len()).collect();
            order.sort_by(|&i, &j| self.population[i].fitness.total_cmp(&self.population[j].fitness));
            order[..self.params.elitism_count]
                .iter()
                .map(|&i| self.population[i].clone())
                .collect()
        };
        let slots = self.params.elitism_count..self.params.population_size;
        let offspring: Vec<Individual> = if self.params.parallel {
            slots.into_par_iter().map(|s| self.breed(s)).collect()
        } else {
            slots.map(|s| self.breed(s)).collect()
        };
        self.population = elites.into_iter().chain(offspring).collect();
        self.generation += 1;
        self.finish_generation();
    }

    fn finish_generation(&mut self) {
        let best = &self.population[best_index(&self.population)];
        if best.fitness < self.best_overall.fitness {
            self.best_overall = best.clone();
        }
        let finite: Vec<f64> = self.population.iter().map(|i| i.fitness).filter(|f| f.is_finite()).collect();
        let mean_fitness = if finite.is_empty() {
            WORST_FITNESS
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        let best_test_fitness = best
            .phenotype
            .as_ref()
            .and_then(|ph| self.problem.test_fitness(&ph.derivation.to_term(&self.grammar)))
            .or_else(|| self.problem.has_test_set().then_some(WORST_FITNESS));
        self.records.push(GenerationRecord {
            generation: self.generation,
            best_fitness: best.fitness,
            mean_fitness,
            invalid_count: self.population.iter().filter(|i| !i.is_valid()).count(),
            best_phenotype: best.phenotype_text().to_string(),
            best_test_fitness,
        });

        if self.algorithm == Algorithm::Pge {
            // even generations learn from the generation's best, odd ones
            // from the best found so far
            let source = if self.generation.is_multiple_of(2) {
                best.clone()
            } else {
                self.best_overall.clone()
            };
            if let Some(ph) = &source.phenotype {
                let usage = ph.derivation.usage(&self.grammar);
                self.grammar = pge_update_probabilities(&self.grammar, &usage, self.params.learning_factor);
            }
        }
    }

    pub fn finish(self) -> RunRecord {
        let best_grammar = match self.algorithm {
            Algorithm::Copsge => self.best_overall.grammar.clone(),
            Algorithm::Pge => Some(self.grammar.clone()),
            Algorithm::Ge | Algorithm::Sge => None,
        };
        RunRecord {
            algorithm: self.algorithm,
            problem: self.problem.name().to_string(),
            seed: self.params.seed,
            parameters: self.params,
            generations: self.records,
            best: self.best_overall,
            best_grammar,
        }
    }
}

/// Index of the lowest fitness; the earliest wins ties.
fn best_index(population: &[Individual]) -> usize {
    let mut best = 0;
    for (i, ind) in population.iter().enumerate() {
        if ind.fitness < population[best].fitness {
            best = i;
        }
    }
    best
}

/// Runs `params.generations` generations after the initial one.
pub fn evolve(problem: &dyn Problem, algorithm: Algorithm, params: Parameters) -> Result<RunRecord, ParameterError> {
    let generations = params.generations;
    let mut evolution = Evolution::new(problem, algorithm, params)?;
    for _ in 0..generations {
        evolution.step();
    }
    Ok(evolution.finish())
}
