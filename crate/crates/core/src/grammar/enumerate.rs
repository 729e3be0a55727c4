use std::collections::{BTreeSet, HashMap, HashSet};
use std::rc::Rc;

use super::{Grammar, GrammarError, Symbol};

pub const DEFAULT_ENUMERATION_CAP: usize = 1_000_000;

/// Every string derivable with derivation depth at most `max_depth`.
///
/// Fails with [`GrammarError::SizeLimit`] as soon as any intermediate
/// language exceeds `cap` strings.
pub fn enumerate_language(
    grammar: &Grammar,
    max_depth: usize,
    cap: usize,
) -> Result<BTreeSet<Vec<String>>, GrammarError> {
    let mut e = Enumerator {
        grammar,
        cap,
        memo: HashMap::new(),
    };
    let strings = e.lang(grammar.start(), max_depth)?;
    Ok(strings
        .iter()
        .map(|s| s.iter().map(|&t| grammar.terminal_name(t).to_string()).collect())
        .collect())
}

struct Enumerator<'g> {
    grammar: &'g Grammar,
    cap: usize,
    memo: HashMap<(u32, usize), Rc<Vec<Vec<u32>>>>,
}

impl Enumerator<'_> {
    fn lang(&mut self, nt: u32, depth: usize) -> Result<Rc<Vec<Vec<u32>>>, GrammarError> {
        if depth < self.grammar.min_depth(nt) {
            return Ok(Rc::new(Vec::new()));
        }
        if let Some(v) = self.memo.get(&(nt, depth)) {
            return Ok(v.clone());
        }
        let mut set: HashSet<Vec<u32>> = HashSet::new();
        for alt in self.grammar.alternatives(nt) {
            let mut partial: Vec<Vec<u32>> = vec![Vec::new()];
            for sym in &alt.symbols {
                match *sym {
                    Symbol::Terminal(t) => partial.iter_mut().for_each(|p| p.push(t)),
                    Symbol::Marker(_) => {}
                    Symbol::Nonterminal(b) => {
                        let sub = self.lang(b, depth - 1)?;
                        if sub.is_empty() {
                            partial.clear();
                            break;
                        }
                        if partial.len().saturating_mul(sub.len()) > self.cap {
                            return Err(GrammarError::SizeLimit { cap: self.cap });
                        }
                        let mut next = Vec::with_capacity(partial.len() * sub.len());
                        for p in &partial {
                            for s in sub.iter() {
                                let mut v = p.clone();
                                v.extend_from_slice(s);
                                next.push(v);
                            }
                        }
                        partial = next;
                    }
                }
            }
            set.extend(partial);
            if set.len() > self.cap {
                return Err(GrammarError::SizeLimit { cap: self.cap });
            }
        }
        let v = Rc::new(set.into_iter().collect::<Vec<_>>());
        self.memo.insert((nt, depth), v.clone());
        Ok(v)
    }
}
