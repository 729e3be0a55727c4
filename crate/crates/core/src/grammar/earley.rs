//! Earley chart recognition with exact derivation counting.
//!
//! The chart records every completed span `(A, i, j)`. Derivations are then
//! counted (or materialized) by a memoized walk over the alternatives of each
//! completed span, which only visits spans the chart proved reachable.

use std::collections::{HashMap, HashSet};

use super::{Derivation, DerivationNode, Grammar, Symbol};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Item {
    nt: u32,
    alt: u32,
    dot: u32,
    origin: u32,
}

/// Completed spans of an Earley pass over one token sequence.
pub struct Chart<'g> {
    grammar: &'g Grammar,
    tokens: Vec<Option<u32>>,
    completed: HashSet<(u32, usize, usize)>,
    count_memo: HashMap<(u32, usize, usize), u128>,
    seq_memo: HashMap<(u32, usize, usize, usize, usize), u128>,
}

impl<'g> Chart<'g> {
    pub fn build<S: AsRef<str>>(grammar: &'g Grammar, tokens: &[S]) -> Self {
        let toks: Vec<Option<u32>> = tokens
            .iter()
            .map(|t| grammar.terminal_id(t.as_ref()))
            .collect();
        let n = toks.len();
        let mut sets: Vec<Vec<Item>> = vec![Vec::new(); n + 1];
        let mut seen: Vec<HashSet<Item>> = vec![HashSet::new(); n + 1];
        let mut completed = HashSet::new();

        fn push(sets: &mut [Vec<Item>], seen: &mut [HashSet<Item>], at: usize, item: Item) {
            if seen[at].insert(item) {
                sets[at].push(item);
            }
        }

        let start = grammar.start();
        for alt in 0..grammar.alternatives(start).len() {
            push(
                &mut sets,
                &mut seen,
                0,
                Item {
                    nt: start,
                    alt: alt as u32,
                    dot: 0,
                    origin: 0,
                },
            );
        }

        for i in 0..=n {
            let mut k = 0;
            while k < sets[i].len() {
                let item = sets[i][k];
                k += 1;
                let symbols = &grammar.alternatives(item.nt)[item.alt as usize].symbols;
                let advance = Item {
                    dot: item.dot + 1,
                    ..item
                };
                if item.dot as usize == symbols.len() {
                    completed.insert((item.nt, item.origin as usize, i));
                    let origin = item.origin as usize;
                    let waiting: Vec<Item> = sets[origin]
                        .iter()
                        .filter(|p| {
                            let s = &grammar.alternatives(p.nt)[p.alt as usize].symbols;
                            s.get(p.dot as usize) == Some(&Symbol::Nonterminal(item.nt))
                        })
                        .copied()
                        .collect();
                    for p in waiting {
                        push(&mut sets, &mut seen, i, Item { dot: p.dot + 1, ..p });
                    }
                    continue;
                }
                match symbols[item.dot as usize] {
                    Symbol::Terminal(t) => {
                        if i < n && toks[i] == Some(t) {
                            push(&mut sets, &mut seen, i + 1, advance);
                        }
                    }
                    Symbol::Marker(_) => push(&mut sets, &mut seen, i, advance),
                    Symbol::Nonterminal(b) => {
                        for alt in 0..grammar.alternatives(b).len() {
                            push(
                                &mut sets,
                                &mut seen,
                                i,
                                Item {
                                    nt: b,
                                    alt: alt as u32,
                                    dot: 0,
                                    origin: i as u32,
                                },
                            );
                        }
                        // Aycock-Horspool: nullable nonterminals complete in place.
                        if grammar.is_nullable(b) {
                            push(&mut sets, &mut seen, i, advance);
                        }
                    }
                }
            }
        }

        Chart {
            grammar,
            tokens: toks,
            completed,
            count_memo: HashMap::new(),
            seq_memo: HashMap::new(),
        }
    }

    pub fn accepts(&self) -> bool {
        self.completed
            .contains(&(self.grammar.start(), 0, self.tokens.len()))
    }

    /// Number of distinct derivations of the whole sequence (saturating).
    pub fn derivation_count(&mut self) -> u128 {
        let n = self.tokens.len();
        self.count_nt(self.grammar.start(), 0, n)
    }

    fn count_nt(&mut self, nt: u32, i: usize, j: usize) -> u128 {
        if !self.completed.contains(&(nt, i, j)) {
            return 0;
        }
        if let Some(&c) = self.count_memo.get(&(nt, i, j)) {
            return c;
        }
        let mut total: u128 = 0;
        for alt in 0..self.grammar.alternatives(nt).len() {
            total = total.saturating_add(self.count_seq(nt, alt, 0, i, j));
        }
        self.count_memo.insert((nt, i, j), total);
        total
    }

    fn count_seq(&mut self, nt: u32, alt: usize, k: usize, i: usize, j: usize) -> u128 {
        let key = (nt, alt, k, i, j);
        if let Some(&c) = self.seq_memo.get(&key) {
            return c;
        }
        let grammar = self.grammar;
        let symbols = &grammar.alternatives(nt)[alt].symbols;
        let result = if k == symbols.len() {
            u128::from(i == j)
        } else {
            match symbols[k] {
                Symbol::Terminal(t) => {
                    if i < j && self.tokens[i] == Some(t) {
                        self.count_seq(nt, alt, k + 1, i + 1, j)
                    } else {
                        0
                    }
                }
                Symbol::Marker(_) => self.count_seq(nt, alt, k + 1, i, j),
                Symbol::Nonterminal(b) => {
                    let mut sum: u128 = 0;
                    let rest = grammar.min_yield_of(&symbols[k + 1..]);
                    let lo = i + grammar.min_yield(b);
                    for m in lo..=j.saturating_sub(rest) {
                        let head = self.count_nt(b, i, m);
                        if head == 0 {
                            continue;
                        }
                        let tail = self.count_seq(nt, alt, k + 1, m, j);
                        sum = sum.saturating_add(head.saturating_mul(tail));
                    }
                    sum
                }
            }
        };
        self.seq_memo.insert(key, result);
        result
    }

    /// Up to `limit` derivation trees of the whole sequence.
    pub fn trees(&mut self, limit: usize) -> Vec<Derivation> {
        let n = self.tokens.len();
        if self.derivation_count() == 0 || limit == 0 {
            return Vec::new();
        }
        self.trees_nt(self.grammar.start(), 0, n, limit)
            .into_iter()
            .map(|root| Derivation { root })
            .collect()
    }

    fn trees_nt(&mut self, nt: u32, i: usize, j: usize, limit: usize) -> Vec<DerivationNode> {
        let mut out = Vec::new();
        if self.count_nt(nt, i, j) == 0 {
            return out;
        }
        for alt in 0..self.grammar.alternatives(nt).len() {
            if out.len() >= limit {
                break;
            }
            if self.count_seq(nt, alt, 0, i, j) == 0 {
                continue;
            }
            for children in self.trees_seq(nt, alt, 0, i, j, limit - out.len()) {
                out.push(DerivationNode::Internal {
                    nonterminal: nt,
                    alternative: alt,
                    children,
                });
            }
        }
        out
    }

    fn trees_seq(
        &mut self,
        nt: u32,
        alt: usize,
        k: usize,
        i: usize,
        j: usize,
        limit: usize,
    ) -> Vec<Vec<DerivationNode>> {
        let grammar = self.grammar;
        let symbols = &grammar.alternatives(nt)[alt].symbols;
        if k == symbols.len() {
            return if i == j { vec![Vec::new()] } else { Vec::new() };
        }
        if self.count_seq(nt, alt, k, i, j) == 0 {
            return Vec::new();
        }
        let prepend = |node: DerivationNode, tails: Vec<Vec<DerivationNode>>| {
            tails
                .into_iter()
                .map(|mut t| {
                    t.insert(0, node.clone());
                    t
                })
                .collect::<Vec<_>>()
        };
        match symbols[k] {
            Symbol::Terminal(terminal) => {
                let tails = self.trees_seq(nt, alt, k + 1, i + 1, j, limit);
                prepend(DerivationNode::Leaf { terminal }, tails)
            }
            Symbol::Marker(marker) => {
                let tails = self.trees_seq(nt, alt, k + 1, i, j, limit);
                prepend(DerivationNode::Marker { marker }, tails)
            }
            Symbol::Nonterminal(b) => {
                let mut out = Vec::new();
                let rest = grammar.min_yield_of(&symbols[k + 1..]);
                let lo = i + grammar.min_yield(b);
                for m in lo..=j.saturating_sub(rest) {
                    if out.len() >= limit {
                        break;
                    }
                    if self.count_nt(b, i, m) == 0 || self.count_seq(nt, alt, k + 1, m, j) == 0 {
                        continue;
                    }
                    let heads = self.trees_nt(b, i, m, limit - out.len());
                    let tails = self.trees_seq(nt, alt, k + 1, m, j, limit - out.len());
                    'outer: for h in &heads {
                        for t in &tails {
                            if out.len() >= limit {
                                break 'outer;
                            }
                            let mut v = Vec::with_capacity(t.len() + 1);
                            v.push(h.clone());
                            v.extend(t.iter().cloned());
                            out.push(v);
                        }
                    }
                }
                out
            }
        }
    }
}

/// Number of distinct derivations of `tokens` (0 means rejection).
pub fn recognize<S: AsRef<str>>(grammar: &Grammar, tokens: &[S]) -> u64 {
    let mut chart = Chart::build(grammar, tokens);
    u64::try_from(chart.derivation_count()).unwrap_or(u64::MAX)
}

/// Up to `limit` derivations of `tokens`.
pub fn parse_trees<S: AsRef<str>>(grammar: &Grammar, tokens: &[S], limit: usize) -> Vec<Derivation> {
    Chart::build(grammar, tokens).trees(limit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{bundled_grammar, parse_grammar};

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn unambiguous_recursion() {
        let g = parse_grammar("S -> a S | b").unwrap();
        assert_eq!(recognize(&g, &toks("a a b")), 1);
        assert_eq!(recognize(&g, &toks("a a")), 0);
        assert_eq!(recognize(&g, &toks("")), 0);
    }

    #[test]
    fn ambiguous_counts() {
        // Catalan numbers: 3 leaves -> 2 trees, 4 leaves -> 5 trees.
        let g = parse_grammar("S -> S S | x").unwrap();
        assert_eq!(recognize(&g, &toks("x x x")), 2);
        assert_eq!(recognize(&g, &toks("x x x x")), 5);
        let trees = parse_trees(&g, &toks("x x x x"), 10);
        assert_eq!(trees.len(), 5);
        let distinct: HashSet<_> = trees.iter().collect();
        assert_eq!(distinct.len(), 5);
        assert_eq!(parse_trees(&g, &toks("x x x x"), 3).len(), 3);
    }

    #[test]
    fn nullable_and_markers() {
        let g = parse_grammar("@marker M\nS -> A b A\nA -> M | a").unwrap();
        assert_eq!(recognize(&g, &toks("b")), 1);
        assert_eq!(recognize(&g, &toks("a b")), 1);
        assert_eq!(recognize(&g, &toks("a b a")), 1);
        let t = parse_trees(&g, &toks("b"), 5);
        assert_eq!(t[0].marker_positions().len(), 2);
        assert!(t[0].is_consistent_with(&g));
    }

    #[test]
    fn ungrammatical_question_rejected_by_declarative_grammar() {
        let g = bundled_grammar("prepose_delete").unwrap();
        assert_eq!(recognize(&g, &toks("has the dog who seen a boy did try")), 0);
        assert_eq!(
            recognize(&g, &toks("the boy who has talked can read")),
            1
        );
    }

    #[test]
    fn trees_spell_their_input() {
        let g = bundled_grammar("first_eq_main").unwrap();
        let s = toks("the boy can see the girl who is sleeping");
        let trees = parse_trees(&g, &s, 4);
        assert!(!trees.is_empty());
        for t in trees {
            assert_eq!(t.tokens(&g), s);
            assert!(t.is_consistent_with(&g));
        }
    }
}
