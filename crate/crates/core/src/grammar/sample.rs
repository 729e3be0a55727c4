use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Derivation, DerivationNode, Grammar, GrammarError, Symbol};

/// Seeded top-down sampler. Each expansion picks among the alternatives
/// whose shallowest completion still fits the remaining depth budget, with
/// probability proportional to alternative weight (uniform by default).
pub struct Sampler<'g> {
    grammar: &'g Grammar,
    rng: ChaCha8Rng,
    max_depth: usize,
    alt_depth: Vec<Vec<usize>>,
}

impl<'g> Sampler<'g> {
    pub fn new(grammar: &'g Grammar, seed: u64, max_depth: usize) -> Result<Self, GrammarError> {
        let min_depth = grammar.min_depth(grammar.start());
        if min_depth > max_depth {
            return Err(GrammarError::DepthExceeded {
                max_depth,
                min_depth,
            });
        }
        let alt_depth = (0..grammar.nonterminals().len() as u32)
            .map(|a| {
                grammar
                    .alternatives(a)
                    .iter()
                    .map(|alt| {
                        alt.symbols
                            .iter()
                            .filter_map(|s| match s {
                                Symbol::Nonterminal(b) => Some(grammar.min_depth(*b) + 1),
                                _ => None,
                            })
                            .max()
                            .unwrap_or(1)
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            grammar,
            rng: ChaCha8Rng::seed_from_u64(seed),
            max_depth,
            alt_depth,
        })
    }

    pub fn sample(&mut self) -> (Vec<String>, Derivation) {
        let root = self.expand(self.grammar.start(), self.max_depth);
        let d = Derivation { root };
        (d.tokens(self.grammar), d)
    }

    fn expand(&mut self, nt: u32, budget: usize) -> DerivationNode {
        let alts = self.grammar.alternatives(nt);
        let depths = &self.alt_depth[nt as usize];
        let total: f64 = alts
            .iter()
            .zip(depths)
            .filter(|(_, &d)| d <= budget)
            .map(|(a, _)| a.weight)
            .sum();
        let mut draw = self.rng.gen::<f64>() * total;
        let mut chosen = None;
        for (i, (alt, &d)) in alts.iter().zip(depths).enumerate() {
            if d > budget {
                continue;
            }
            chosen = Some(i);
            if draw < alt.weight {
                break;
            }
            draw -= alt.weight;
        }
        // Budget feasibility is guaranteed by the caller's check on min depth.
        let alternative = chosen.expect("at least one alternative fits the depth budget");
        let symbols = alts[alternative].symbols.clone();
        let children = symbols
            .iter()
            .map(|s| match *s {
                Symbol::Terminal(terminal) => DerivationNode::Leaf { terminal },
                Symbol::Marker(marker) => DerivationNode::Marker { marker },
                Symbol::Nonterminal(b) => self.expand(b, budget - 1),
            })
            .collect();
        DerivationNode::Internal {
            nonterminal: nt,
            alternative,
            children,
        }
    }
}

/// Samples `count` sentences with replacement.
pub fn generate(
    grammar: &Grammar,
    seed: u64,
    count: usize,
    max_depth: usize,
) -> Result<Vec<(Vec<String>, Derivation)>, GrammarError> {
    let mut sampler = Sampler::new(grammar, seed, max_depth)?;
    Ok((0..count).map(|_| sampler.sample()).collect())
}

/// Samples until `count` distinct sentences are collected, giving up after
/// `max_attempts` draws.
pub fn generate_unique(
    grammar: &Grammar,
    seed: u64,
    count: usize,
    max_depth: usize,
    max_attempts: usize,
) -> Result<Vec<(Vec<String>, Derivation)>, GrammarError> {
    let mut sampler = Sampler::new(grammar, seed, max_depth)?;
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        if attempts >= max_attempts {
            return Err(GrammarError::DedupeExhausted {
                wanted: count,
                attempts,
            });
        }
        attempts += 1;
        let (tokens, d) = sampler.sample();
        if seen.insert(tokens.clone()) {
            out.push((tokens, d));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{bundled_grammar, parse_grammar, recognize};

    #[test]
    fn singleton_language() {
        let g = parse_grammar("S -> b").unwrap();
        let out = generate(&g, 7, 3, 10).unwrap();
        assert_eq!(out.len(), 3);
        for (tokens, d) in out {
            assert_eq!(tokens, vec!["b"]);
            assert!(d.is_consistent_with(&g));
        }
    }

    #[test]
    fn depth_budget_is_respected() {
        let g = parse_grammar("S -> a S | b").unwrap();
        for (tokens, d) in generate(&g, 3, 200, 4).unwrap() {
            assert!(d.depth() <= 4);
            assert!(tokens.len() <= 4);
        }
        assert_eq!(
            generate(&parse_grammar("S -> A\nA -> B\nB -> x").unwrap(), 0, 1, 2).unwrap_err(),
            GrammarError::DepthExceeded {
                max_depth: 2,
                min_depth: 3
            }
        );
    }

    #[test]
    fn equal_seeds_equal_samples() {
        let g = bundled_grammar("first_eq_main").unwrap();
        let a = generate(&g, 42, 50, 30).unwrap();
        let b = generate(&g, 42, 50, 30).unwrap();
        assert_eq!(a, b);
        let c = generate(&g, 43, 50, 30).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn markers_never_surface() {
        let g = bundled_grammar("prepose_delete").unwrap();
        for (tokens, d) in generate(&g, 1, 300, 30).unwrap() {
            assert!(!tokens.iter().any(|t| t == "MAIN-AUX"));
            assert_eq!(d.marker_positions().len(), 1);
            assert!(recognize(&g, &tokens) >= 1);
        }
    }

    #[test]
    fn dedupe_collects_distinct_sentences() {
        let g = parse_grammar("S -> a | b | c").unwrap();
        let out = generate_unique(&g, 5, 3, 5, 10_000).unwrap();
        let set: HashSet<_> = out.iter().map(|(t, _)| t.clone()).collect();
        assert_eq!(set.len(), 3);
        assert!(matches!(
            generate_unique(&g, 5, 4, 5, 1000),
            Err(GrammarError::DedupeExhausted { .. })
        ));
    }
}
