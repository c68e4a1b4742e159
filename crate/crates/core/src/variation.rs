//! Crossover and mutation operators, and the PGE probability update.
//!
//! Every operator takes its inputs by reference and returns fresh values.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::encoding::{
    CopsgeGenotype, Genotype, Individual, IntGenotype, RealGenotype, SgeGenotype, StructuredGenotype, WORST_FITNESS,
};
use crate::grammar::{NtId, Pcfg};

/// One-point crossover on equal-length vectors with the cut drawn from
/// `[1, len - 1]`. Vectors shorter than two codons are returned unchanged.
pub fn one_point_crossover<T: Clone, R: Rng + ?Sized>(a: &[T], b: &[T], rng: &mut R) -> (Vec<T>, Vec<T>) {
    assert_eq!(a.len(), b.len(), "one-point crossover needs equal lengths");
    if a.len() < 2 {
        return (a.to_vec(), b.to_vec());
    }
    let cut = rng.random_range(1..a.len());
    one_point_crossover_at(a, b, cut)
}

pub fn one_point_crossover_at<T: Clone>(a: &[T], b: &[T], cut: usize) -> (Vec<T>, Vec<T>) {
    let first = a[..cut].iter().chain(&b[cut..]).cloned().collect();
    let second = b[..cut].iter().chain(&a[cut..]).cloned().collect();
    (first, second)
}

pub fn ge_one_point_crossover<R: Rng + ?Sized>(
    a: &IntGenotype,
    b: &IntGenotype,
    rng: &mut R,
) -> (IntGenotype, IntGenotype) {
    let (x, y) = one_point_crossover(&a.0, &b.0, rng);
    (IntGenotype(x), IntGenotype(y))
}

pub fn pge_one_point_crossover<R: Rng + ?Sized>(
    a: &RealGenotype,
    b: &RealGenotype,
    rng: &mut R,
) -> (RealGenotype, RealGenotype) {
    let (x, y) = one_point_crossover(&a.0, &b.0, rng);
    (RealGenotype(x), RealGenotype(y))
}

pub fn ge_int_mutation<R: Rng + ?Sized>(g: &IntGenotype, rate: f64, rng: &mut R) -> IntGenotype {
    IntGenotype(
        g.0.iter()
            .map(|&c| if rng.random::<f64>() < rate { rng.random::<u8>() } else { c })
            .collect(),
    )
}

pub fn pge_float_mutation<R: Rng + ?Sized>(g: &RealGenotype, rate: f64, rng: &mut R) -> RealGenotype {
    RealGenotype(
        g.0.iter()
            .map(|&c| if rng.random::<f64>() < rate { rng.random::<f64>() } else { c })
            .collect(),
    )
}

/// Adds `delta` to a real codon, keeping it inside `[0, 1]`.
pub fn shift_codon(codon: f64, delta: f64) -> f64 {
    (codon + delta).clamp(0.0, 1.0)
}

pub fn copsge_gaussian_mutation<R: Rng + ?Sized>(
    g: &CopsgeGenotype,
    rate: f64,
    sd: f64,
    rng: &mut R,
) -> CopsgeGenotype {
    let normal = Normal::new(0.0, sd).expect("standard deviation must be positive and finite");
    StructuredGenotype::from_lists(
        g.lists
            .iter()
            .map(|list| {
                list.iter()
                    .map(|&c| {
                        if rng.random::<f64>() < rate {
                            shift_codon(c, normal.sample(rng))
                        } else {
                            c
                        }
                    })
                    .collect()
            })
            .collect(),
    )
}

/// Replaces codons with a different production index of the same
/// non-terminal. Non-terminals with a single production are left alone.
pub fn sge_int_mutation<R: Rng + ?Sized>(g: &SgeGenotype, rate: f64, grammar: &Pcfg, rng: &mut R) -> SgeGenotype {
    StructuredGenotype::from_lists(
        g.lists
            .iter()
            .enumerate()
            .map(|(nt, list)| {
                let k = grammar.productions(NtId(nt)).len() as u32;
                list.iter()
                    .map(|&c| {
                        if k < 2 || rng.random::<f64>() >= rate {
                            return c;
                        }
                        // uniform over the k - 1 other indices
                        let draw = rng.random_range(0..k - 1);
                        if draw >= c {
                            draw + 1
                        } else {
                            draw
                        }
                    })
                    .collect()
            })
            .collect(),
    )
}

/// Builds one offspring whose list for each non-terminal is copied whole
/// from `a` (mask bit false) or `b` (mask bit true).
pub fn mask_crossover_lists<C: Clone>(
    a: &StructuredGenotype<C>,
    b: &StructuredGenotype<C>,
    mask: &[bool],
) -> StructuredGenotype<C> {
    assert_eq!(a.lists.len(), b.lists.len(), "parents must share the non-terminal set");
    assert_eq!(a.lists.len(), mask.len(), "one mask bit per non-terminal");
    StructuredGenotype::from_lists(
        mask.iter()
            .zip(a.lists.iter().zip(&b.lists))
            .map(|(&take_b, (la, lb))| if take_b { lb.clone() } else { la.clone() })
            .collect(),
    )
}

/// Structured crossover with a random mask. The offspring inherits the
/// personal grammar of the fitter parent (`a` on ties) and has to be
/// re-mapped before evaluation.
pub fn mask_crossover<R: Rng + ?Sized>(a: &Individual, b: &Individual, rng: &mut R) -> Individual {
    let lists = match &a.genotype {
        Genotype::Sge(g) => g.lists.len(),
        Genotype::Copsge(g) => g.lists.len(),
        _ => panic!("mask crossover needs structured genotypes"),
    };
    let mask: Vec<bool> = (0..lists).map(|_| rng.random()).collect();
    mask_crossover_with(a, b, &mask)
}

pub fn mask_crossover_with(a: &Individual, b: &Individual, mask: &[bool]) -> Individual {
    let genotype = match (&a.genotype, &b.genotype) {
        (Genotype::Sge(x), Genotype::Sge(y)) => Genotype::Sge(mask_crossover_lists(x, y, mask)),
        (Genotype::Copsge(x), Genotype::Copsge(y)) => Genotype::Copsge(mask_crossover_lists(x, y, mask)),
        _ => panic!("mask crossover needs two structured genotypes of the same kind"),
    };
    let fitter = if b.fitness < a.fitness { b } else { a };
    Individual {
        genotype,
        grammar: fitter.grammar.clone(),
        phenotype: None,
        fitness: WORST_FITNESS,
    }
}

/// Moves the shared PGE grammar towards the productions used by `usage`
/// (counts indexed `[nt][rule]`, see `Derivation::usage`).
///
/// For every non-terminal expanded at least once, with `C` total
/// expansions, rule `j` receives `lambda * c_j / C` and the non-terminal is
/// renormalized. Untouched non-terminals keep their probabilities.
pub fn pge_update_probabilities(grammar: &Pcfg, usage: &[Vec<u32>], lambda: f64) -> Pcfg {
    let mut out = grammar.clone();
    for nt in grammar.non_terminals() {
        let counts = &usage[nt.0];
        let total: u32 = counts.iter().sum();
        if total == 0 {
            continue;
        }
        let raised: Vec<f64> = grammar
            .probabilities(nt)
            .iter()
            .zip(counts)
            .map(|(&p, &c)| p + lambda * c as f64 / total as f64)
            .collect();
        let sum: f64 = raised.iter().sum();
        let normalized: Vec<f64> = raised.iter().map(|p| p / sum).collect();
        out.set_probabilities(nt, &normalized);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const EXAMPLE: &str = include_str!("../grammars/example.bnf");

    #[test]
    fn one_point_examples() {
        let (c1, c2) = one_point_crossover_at(&[1, 2, 3, 4], &[5, 6, 7, 8], 2);
        assert_eq!(c1, vec![1, 2, 7, 8]);
        assert_eq!(c2, vec![5, 6, 3, 4]);
        for cut in 1..4 {
            let (c1, c2) = one_point_crossover_at(&[1, 2, 3, 4], &[1, 2, 3, 4], cut);
            assert_eq!(c1, vec![1, 2, 3, 4]);
            assert_eq!(c2, vec![1, 2, 3, 4]);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(one_point_crossover(&[9], &[4], &mut rng), (vec![9], vec![4]));
    }

    proptest! {
        #[test]
        fn one_point_preserves_multiset(
            pair in (2usize..64).prop_flat_map(|n| (
                proptest::collection::vec(any::<u8>(), n),
                proptest::collection::vec(any::<u8>(), n),
            )),
            seed in any::<u64>(),
        ) {
            let (a, b) = pair;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (c1, c2) = ge_one_point_crossover(&IntGenotype(a.clone()), &IntGenotype(b.clone()), &mut rng);
            prop_assert_eq!(c1.0.len(), a.len());
            let mut parents: Vec<u8> = a.iter().chain(&b).copied().collect();
            let mut children: Vec<u8> = c1.0.iter().chain(&c2.0).copied().collect();
            parents.sort_unstable();
            children.sort_unstable();
            prop_assert_eq!(parents, children);
        }

        #[test]
        fn sge_mutation_stays_valid_and_changes(seed in any::<u64>()) {
            let g = Pcfg::parse(EXAMPLE).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let parent = SgeGenotype::from_lists(vec![vec![0, 1, 1, 0], vec![3, 2], vec![2, 0, 1]]);
            let child = sge_int_mutation(&parent, 1.0, &g, &mut rng);
            for (nt, (old, new)) in parent.lists.iter().zip(&child.lists).enumerate() {
                let k = g.productions(NtId(nt)).len() as u32;
                for (o, n) in old.iter().zip(new) {
                    prop_assert!(*n < k);
                    prop_assert_ne!(o, n);
                }
            }
        }
    }

    #[test]
    fn mutation_rate_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = IntGenotype((0..=255).collect());
        assert_eq!(ge_int_mutation(&g, 0.0, &mut rng), g);
        let r = RealGenotype((0..100).map(|i| i as f64 / 100.0).collect());
        assert_eq!(pge_float_mutation(&r, 0.0, &mut rng), r);
        let c = CopsgeGenotype::from_lists(vec![vec![0.1, 0.2], vec![0.9]]);
        assert_eq!(copsge_gaussian_mutation(&c, 0.0, 0.5, &mut rng), c);
        let grammar = Pcfg::parse(EXAMPLE).unwrap();
        let s = SgeGenotype::from_lists(vec![vec![0, 1], vec![3], vec![2]]);
        assert_eq!(sge_int_mutation(&s, 0.0, &grammar, &mut rng), s);
    }

    #[test]
    fn full_rate_resamples_every_codon() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let g = IntGenotype((0..n).map(|i| (i % 256) as u8).collect());
        let m = ge_int_mutation(&g, 1.0, &mut rng);
        let differing = g.0.iter().zip(&m.0).filter(|(a, b)| a != b).count() as f64;
        // Binomial(n, 255/256)
        let p = 255.0 / 256.0;
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((differing - mean).abs() <= 3.0 * sd + 1.0, "{differing} vs {mean}");

        let r = RealGenotype(vec![0.5; n]);
        let m = pge_float_mutation(&r, 1.0, &mut rng);
        assert!(m.0.iter().all(|c| (0.0..=1.0).contains(c)));
        assert!(m.0.iter().filter(|&&c| c != 0.5).count() == n);
    }

    #[test]
    fn per_codon_rate_within_binomial_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 20_000;
        let rate = 0.05;
        let r = RealGenotype(vec![2.0; n]); // sentinel outside the codon range
        let m = pge_float_mutation(&r, rate, &mut rng);
        let hits = m.0.iter().filter(|&&c| c != 2.0).count() as f64;
        let sd = (n as f64 * rate * (1.0 - rate)).sqrt();
        assert!((hits - n as f64 * rate).abs() <= 3.0 * sd);

        let g = IntGenotype(vec![7; n]);
        let m = ge_int_mutation(&g, rate, &mut rng);
        let changed = m.0.iter().filter(|&&c| c != 7).count() as f64;
        let p = rate * 255.0 / 256.0;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((changed - n as f64 * p).abs() <= 3.0 * sd);
    }

    #[test]
    fn gaussian_codon_examples() {
        assert!((shift_codon(0.41, 0.23) - 0.64).abs() < 1e-12);
        assert_eq!(shift_codon(0.95, 0.30), 1.0);
        assert_eq!(shift_codon(0.05, -0.30), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = CopsgeGenotype::from_lists(vec![vec![0.5; 50], vec![], vec![0.0; 3]]);
        let m = copsge_gaussian_mutation(&c, 1.0, 0.5, &mut rng);
        assert_eq!(m.lists.iter().map(Vec::len).collect::<Vec<_>>(), vec![50, 0, 3]);
        assert!(m.lists.iter().flatten().all(|c| (0.0..=1.0).contains(c)));
    }

    #[test]
    fn single_production_is_never_mutated() {
        let g = Pcfg::parse("<s> ::= <t> <t>\n<t> ::= a | b\n").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = SgeGenotype::from_lists(vec![vec![0, 0, 0], vec![0, 1]]);
        let m = sge_int_mutation(&s, 1.0, &g, &mut rng);
        assert_eq!(m.lists[0], vec![0, 0, 0]);
        assert_eq!(m.lists[1], vec![1, 0]);
    }

    fn copsge(lists: Vec<Vec<f64>>, fitness: f64, grammar: &Pcfg) -> Individual {
        Individual {
            genotype: Genotype::Copsge(CopsgeGenotype::from_lists(lists)),
            grammar: Some(grammar.clone()),
            phenotype: None,
            fitness,
        }
    }

    #[test]
    fn mask_crossover_worked_example() {
        let g = Pcfg::parse(EXAMPLE).unwrap();
        let mut g2 = g.clone();
        g2.shift_probability(NtId(0), 1, -0.23);
        let p1 = copsge(vec![vec![0.29, 0.73, 0.52], vec![0.86], vec![0.41, 0.15]], 3.0, &g);
        let p2 = copsge(vec![vec![0.16, 0.71, 0.48], vec![0.23], vec![0.19, 0.86, 0.56]], 1.0, &g2);
        let child = mask_crossover_with(&p1, &p2, &[false, true, false]);
        assert_eq!(
            child.genotype,
            Genotype::Copsge(CopsgeGenotype::from_lists(vec![
                vec![0.29, 0.73, 0.52],
                vec![0.23],
                vec![0.41, 0.15]
            ]))
        );
        // p2 is fitter, so its grammar is inherited
        assert_eq!(child.grammar.as_ref(), Some(&g2));
        assert!(child.phenotype.is_none());

        let tie = mask_crossover_with(&copsge(vec![vec![0.1], vec![], vec![]], 1.0, &g), &p2, &[true, true, true]);
        assert_eq!(tie.grammar.as_ref(), Some(&g));
    }

    #[test]
    fn mask_crossover_lists_come_from_parents() {
        let g = Pcfg::parse(EXAMPLE).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let mut random_lists = || -> Vec<Vec<f64>> {
                (0..3)
                    .map(|_| (0..rng.random_range(0..5)).map(|_| rng.random()).collect())
                    .collect()
            };
            let a = copsge(random_lists(), 1.0, &g);
            let b = copsge(random_lists(), 2.0, &g);
            let child = mask_crossover(&a, &b, &mut rng);
            let (Genotype::Copsge(ga), Genotype::Copsge(gb), Genotype::Copsge(gc)) =
                (&a.genotype, &b.genotype, &child.genotype)
            else {
                unreachable!()
            };
            for i in 0..3 {
                assert!(gc.lists[i] == ga.lists[i] || gc.lists[i] == gb.lists[i]);
            }
        }
        let a = copsge(vec![vec![0.3], vec![0.6, 0.1], vec![]], 1.0, &g);
        let child = mask_crossover(&a, &a.clone(), &mut rng);
        assert_eq!(child.genotype, a.genotype);
    }

    #[test]
    fn pge_update_examples() {
        let g = Pcfg::parse("<s> ::= a | b\n").unwrap();
        let same = pge_update_probabilities(&g, &[vec![3, 1]], 0.0);
        assert_eq!(same, g);

        let updated = pge_update_probabilities(&g, &[vec![3, 1]], 0.01);
        let p = updated.probabilities(NtId(0));
        assert!((p[0] - 0.5075 / 1.01).abs() < 1e-12);
        assert!((p[1] - 0.5025 / 1.01).abs() < 1e-12);
        assert!((p[0] - 0.5025).abs() < 1e-4);

        let g = Pcfg::parse(EXAMPLE).unwrap();
        let untouched = pge_update_probabilities(&g, &[vec![1, 0], vec![0; 4], vec![0, 0, 1]], 0.5);
        assert_eq!(untouched.probabilities(NtId(1)), g.probabilities(NtId(1)));
    }

    #[test]
    fn pge_update_keeps_normalization() {
        let mut g = Pcfg::parse(EXAMPLE).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let usage: Vec<Vec<u32>> = g
                .rules()
                .iter()
                .map(|r| r.productions.iter().map(|_| rng.random_range(0..4)).collect())
                .collect();
            g = pge_update_probabilities(&g, &usage, rng.random_range(0.0..0.5));
        }
        for nt in g.non_terminals() {
            let p = g.probabilities(nt);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
        }
    }
}
