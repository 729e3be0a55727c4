//! Context-free grammars: parsing, sampling, Earley recognition and bounded
//! enumeration of the language.
//!
//! Symbols come in three kinds. Nonterminals have rules, terminals are
//! surface tokens, and markers are zero-width annotations (such as
//! `MAIN-AUX`) that appear in derivations but never in the token sequence.

mod bundled;
mod derivation;
mod earley;
mod enumerate;
mod parse;
mod sample;

use std::collections::{HashMap, HashSet};
use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use bundled::{bundled_grammar, bundled_source, BUNDLED_GRAMMARS};
pub use derivation::{Derivation, DerivationNode, LeafInfo};
pub use earley::{parse_trees, recognize, Chart};
pub use enumerate::{enumerate_language, DEFAULT_ENUMERATION_CAP};
pub use parse::{parse_grammar, parse_grammar_file, parse_grammar_with};
pub use sample::{generate, generate_unique, Sampler};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GrammarError {
    #[error("line {line}: syntax error: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: undefined symbol `{symbol}`")]
    UndefinedSymbol { symbol: String, line: usize },
    #[error("line {line}: duplicate definition: {message}")]
    DuplicateDefinition { message: String, line: usize },
    #[error("nonterminal `{0}` derives no finite terminal string")]
    Unproductive(String),
    #[error("nonterminal `{0}` is unreachable from the start symbol")]
    Unreachable(String),
    #[error("nonterminal `{0}` can derive itself without consuming input")]
    Cyclic(String),
    #[error("grammar has no rules")]
    Empty,
    #[error("start symbol `{0}` has no rules")]
    UnknownStart(String),
    #[error("no complete derivation fits within depth {max_depth} (minimum is {min_depth})")]
    DepthExceeded { max_depth: usize, min_depth: usize },
    #[error("language enumeration exceeded the cap of {cap} strings")]
    SizeLimit { cap: usize },
    #[error("could not collect {wanted} distinct sentences after {attempts} draws")]
    DedupeExhausted { wanted: usize, attempts: usize },
    #[error("cannot read `{path}`: {message}")]
    Io { path: String, message: String },
    #[error("unknown bundled grammar `{0}`")]
    UnknownBundled(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Symbol {
    Terminal(u32),
    Nonterminal(u32),
    Marker(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alternative {
    pub symbols: Vec<Symbol>,
    pub weight: f64,
}

/// Symbol kind requested by a rule author, before ids are assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymbolKind {
    Terminal,
    Nonterminal,
    Marker,
}

/// Incrementally assembles a [`Grammar`]; `build` runs every validity check.
#[derive(Debug, Default, Clone)]
pub struct GrammarBuilder {
    start: Option<String>,
    markers: Vec<String>,
    // (lhs, symbols, weight, source line)
    rules: Vec<(String, Vec<(String, SymbolKind)>, f64, usize)>,
}

impl GrammarBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn start(&mut self, name: &str) -> &mut Self {
        self.start = Some(name.to_string());
        self
    }

    pub fn marker(&mut self, name: &str) -> &mut Self {
        if !self.markers.iter().any(|m| m == name) {
            self.markers.push(name.to_string());
        }
        self
    }

    pub fn rule(
        &mut self,
        lhs: &str,
        symbols: Vec<(String, SymbolKind)>,
        weight: f64,
        line: usize,
    ) -> &mut Self {
        self.rules.push((lhs.to_string(), symbols, weight, line));
        self
    }

    pub fn build(&self) -> Result<Grammar, GrammarError> {
        if self.rules.is_empty() {
            return Err(GrammarError::Empty);
        }
        let mut g = Grammar {
            nonterminals: Vec::new(),
            terminals: Vec::new(),
            markers: self.markers.clone(),
            rules: Vec::new(),
            start: 0,
            nt_lookup: HashMap::new(),
            t_lookup: HashMap::new(),
            m_lookup: HashMap::new(),
            min_depth: Vec::new(),
            nullable: Vec::new(),
            min_yield: Vec::new(),
        };
        for (i, m) in g.markers.iter().enumerate() {
            g.m_lookup.insert(m.clone(), i as u32);
        }
        // Nonterminal ids in order of first definition.
        for (lhs, _, _, line) in &self.rules {
            if g.m_lookup.contains_key(lhs) {
                return Err(GrammarError::DuplicateDefinition {
                    message: format!("`{lhs}` is declared as a marker and defined as a rule"),
                    line: *line,
                });
            }
            if !g.nt_lookup.contains_key(lhs) {
                g.nt_lookup.insert(lhs.clone(), g.nonterminals.len() as u32);
                g.nonterminals.push(lhs.clone());
                g.rules.push(Vec::new());
            }
        }
        for (lhs, symbols, weight, line) in &self.rules {
            let mut alt = Vec::with_capacity(symbols.len());
            for (name, kind) in symbols {
                let sym = match kind {
                    SymbolKind::Marker => match g.m_lookup.get(name) {
                        Some(&id) => Symbol::Marker(id),
                        None => {
                            return Err(GrammarError::UndefinedSymbol {
                                symbol: name.clone(),
                                line: *line,
                            })
                        }
                    },
                    SymbolKind::Nonterminal => match g.nt_lookup.get(name) {
                        Some(&id) => Symbol::Nonterminal(id),
                        None => {
                            return Err(GrammarError::UndefinedSymbol {
                                symbol: name.clone(),
                                line: *line,
                            })
                        }
                    },
                    SymbolKind::Terminal => {
                        if g.nt_lookup.contains_key(name) || g.m_lookup.contains_key(name) {
                            return Err(GrammarError::DuplicateDefinition {
                                message: format!("terminal `{name}` clashes with a nonterminal or marker"),
                                line: *line,
                            });
                        }
                        let next = g.terminals.len() as u32;
                        let id = *g.t_lookup.entry(name.clone()).or_insert(next);
                        if id == next {
                            g.terminals.push(name.clone());
                        }
                        Symbol::Terminal(id)
                    }
                };
                alt.push(sym);
            }
            if alt.is_empty() {
                return Err(GrammarError::Syntax {
                    line: *line,
                    message: format!("empty alternative for `{lhs}`"),
                });
            }
            if !(weight.is_finite() && *weight > 0.0) {
                return Err(GrammarError::Syntax {
                    line: *line,
                    message: format!("alternative weight must be positive, got {weight}"),
                });
            }
            let nt = g.nt_lookup[lhs] as usize;
            if g.rules[nt].iter().any(|a| a.symbols == alt) {
                return Err(GrammarError::DuplicateDefinition {
                    message: format!("alternative listed twice for `{lhs}`"),
                    line: *line,
                });
            }
            g.rules[nt].push(Alternative {
                symbols: alt,
                weight: *weight,
            });
        }
        let start_name = self.start.clone().unwrap_or_else(|| g.nonterminals[0].clone());
        g.start = match g.nt_lookup.get(&start_name) {
            Some(&id) => id,
            None => return Err(GrammarError::UnknownStart(start_name)),
        };
        g.finish()?;
        Ok(g)
    }
}

/// An immutable, validated context-free grammar.
#[derive(Debug, Clone)]
pub struct Grammar {
    nonterminals: Vec<String>,
    terminals: Vec<String>,
    markers: Vec<String>,
    rules: Vec<Vec<Alternative>>,
    start: u32,
    nt_lookup: HashMap<String, u32>,
    t_lookup: HashMap<String, u32>,
    m_lookup: HashMap<String, u32>,
    min_depth: Vec<usize>,
    nullable: Vec<bool>,
    min_yield: Vec<usize>,
}

impl PartialEq for Grammar {
    fn eq(&self, other: &Self) -> bool {
        self.nonterminals == other.nonterminals
            && self.terminals == other.terminals
            && self.markers == other.markers
            && self.rules == other.rules
            && self.start == other.start
    }
}

impl Grammar {
    fn finish(&mut self) -> Result<(), GrammarError> {
        let n = self.nonterminals.len();

        // Minimum derivation depth; usize::MAX marks unproductive.
        let mut depth = vec![usize::MAX; n];
        loop {
            let mut changed = false;
            for a in 0..n {
                for alt in &self.rules[a] {
                    let mut d = 1usize;
                    let mut ok = true;
                    for s in &alt.symbols {
                        if let Symbol::Nonterminal(b) = s {
                            let db = depth[*b as usize];
                            if db == usize::MAX {
                                ok = false;
                                break;
                            }
                            d = d.max(db + 1);
                        }
                    }
                    if ok && d < depth[a] {
                        depth[a] = d;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if let Some(a) = (0..n).find(|&a| depth[a] == usize::MAX) {
            return Err(GrammarError::Unproductive(self.nonterminals[a].clone()));
        }

        let mut seen = vec![false; n];
        let mut stack = vec![self.start as usize];
        seen[self.start as usize] = true;
        while let Some(a) = stack.pop() {
            for alt in &self.rules[a] {
                for s in &alt.symbols {
                    if let Symbol::Nonterminal(b) = s {
                        if !seen[*b as usize] {
                            seen[*b as usize] = true;
                            stack.push(*b as usize);
                        }
                    }
                }
            }
        }
        if let Some(a) = (0..n).find(|&a| !seen[a]) {
            return Err(GrammarError::Unreachable(self.nonterminals[a].clone()));
        }

        let mut nullable = vec![false; n];
        loop {
            let mut changed = false;
            for a in 0..n {
                if nullable[a] {
                    continue;
                }
                if self.rules[a].iter().any(|alt| {
                    alt.symbols.iter().all(|s| match s {
                        Symbol::Terminal(_) => false,
                        Symbol::Marker(_) => true,
                        Symbol::Nonterminal(b) => nullable[*b as usize],
                    })
                }) {
                    nullable[a] = true;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }

        // A -> B edges where everything else in the alternative is nullable.
        let mut unit: Vec<HashSet<usize>> = vec![HashSet::new(); n];
        for a in 0..n {
            for alt in &self.rules[a] {
                for (i, s) in alt.symbols.iter().enumerate() {
                    if let Symbol::Nonterminal(b) = s {
                        let rest_nullable = alt.symbols.iter().enumerate().all(|(j, t)| {
                            j == i
                                || match t {
                                    Symbol::Terminal(_) => false,
                                    Symbol::Marker(_) => true,
                                    Symbol::Nonterminal(c) => nullable[*c as usize],
                                }
                        });
                        if rest_nullable {
                            unit[a].insert(*b as usize);
                        }
                    }
                }
            }
        }
        // 0 = unvisited, 1 = on stack, 2 = done
        fn visit(a: usize, unit: &[HashSet<usize>], state: &mut [u8]) -> Option<usize> {
            state[a] = 1;
            for &b in &unit[a] {
                match state[b] {
                    1 => return Some(b),
                    0 => {
                        if let Some(c) = visit(b, unit, state) {
                            return Some(c);
                        }
                    }
                    _ => {}
                }
            }
            state[a] = 2;
            None
        }
        let mut state = vec![0u8; n];
        for a in 0..n {
            if state[a] == 0 {
                if let Some(c) = visit(a, &unit, &mut state) {
                    return Err(GrammarError::Cyclic(self.nonterminals[c].clone()));
                }
            }
        }

        // Shortest surface yield of each nonterminal.
        let mut yield_len = vec![usize::MAX; n];
        loop {
            let mut changed = false;
            for a in 0..n {
                for alt in &self.rules[a] {
                    let len = alt.symbols.iter().try_fold(0usize, |acc, s| match s {
                        Symbol::Terminal(_) => Some(acc + 1),
                        Symbol::Marker(_) => Some(acc),
                        Symbol::Nonterminal(b) => match yield_len[*b as usize] {
                            usize::MAX => None,
                            l => Some(acc + l),
                        },
                    });
                    if let Some(len) = len {
                        if len < yield_len[a] {
                            yield_len[a] = len;
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }

        self.min_depth = depth;
        self.nullable = nullable;
        self.min_yield = yield_len;
        Ok(())
    }

    pub fn start(&self) -> u32 {
        self.start
    }

    pub fn start_name(&self) -> &str {
        &self.nonterminals[self.start as usize]
    }

    pub fn nonterminals(&self) -> &[String] {
        &self.nonterminals
    }

    pub fn terminals(&self) -> &[String] {
        &self.terminals
    }

    pub fn markers(&self) -> &[String] {
        &self.markers
    }

    pub fn alternatives(&self, nonterminal: u32) -> &[Alternative] {
        &self.rules[nonterminal as usize]
    }

    pub fn nonterminal_id(&self, name: &str) -> Option<u32> {
        self.nt_lookup.get(name).copied()
    }

    pub fn terminal_id(&self, token: &str) -> Option<u32> {
        self.t_lookup.get(token).copied()
    }

    pub fn marker_id(&self, name: &str) -> Option<u32> {
        self.m_lookup.get(name).copied()
    }

    pub fn nonterminal_name(&self, id: u32) -> &str {
        &self.nonterminals[id as usize]
    }

    pub fn terminal_name(&self, id: u32) -> &str {
        &self.terminals[id as usize]
    }

    pub fn marker_name(&self, id: u32) -> &str {
        &self.markers[id as usize]
    }

    /// Smallest derivation depth of any string derived from `nonterminal`.
    pub fn min_depth(&self, nonterminal: u32) -> usize {
        self.min_depth[nonterminal as usize]
    }

    /// Length of the shortest token sequence derivable from `nonterminal`.
    pub fn min_yield(&self, nonterminal: u32) -> usize {
        self.min_yield[nonterminal as usize]
    }

    /// Shortest surface length of a symbol sequence.
    pub fn min_yield_of(&self, symbols: &[Symbol]) -> usize {
        symbols
            .iter()
            .map(|s| match s {
                Symbol::Terminal(_) => 1,
                Symbol::Marker(_) => 0,
                Symbol::Nonterminal(b) => self.min_yield(*b),
            })
            .sum()
    }

    pub fn is_nullable(&self, nonterminal: u32) -> bool {
        self.nullable[nonterminal as usize]
    }

    /// Terminals derivable from `nonterminal` when every alternative is a single terminal.
    pub fn lexical_items(&self, nonterminal: u32) -> Option<Vec<&str>> {
        self.rules[nonterminal as usize]
            .iter()
            .map(|alt| match alt.symbols.as_slice() {
                [Symbol::Terminal(t)] => Some(self.terminal_name(*t)),
                _ => None,
            })
            .collect()
    }

    /// Copy of this grammar in which every purely lexical nonterminal keeps
    /// only its first `per_class` words.
    pub fn reduce_lexicon(&self, per_class: usize) -> Result<Grammar, GrammarError> {
        let mut b = GrammarBuilder::new();
        b.start(self.start_name());
        for m in &self.markers {
            b.marker(m);
        }
        for (a, alts) in self.rules.iter().enumerate() {
            let lexical = self.lexical_items(a as u32).is_some();
            let keep = if lexical { per_class.max(1) } else { alts.len() };
            for alt in alts.iter().take(keep) {
                b.rule(&self.nonterminals[a], self.spell(&alt.symbols), alt.weight, 0);
            }
        }
        b.build()
    }

    /// Symbol names and kinds for an alternative, as accepted by [`GrammarBuilder::rule`].
    pub fn spell(&self, symbols: &[Symbol]) -> Vec<(String, SymbolKind)> {
        symbols
            .iter()
            .map(|s| match s {
                Symbol::Terminal(t) => (self.terminals[*t as usize].clone(), SymbolKind::Terminal),
                Symbol::Nonterminal(n) => {
                    (self.nonterminals[*n as usize].clone(), SymbolKind::Nonterminal)
                }
                Symbol::Marker(m) => (self.markers[*m as usize].clone(), SymbolKind::Marker),
            })
            .collect()
    }

    /// A builder pre-populated with every rule of this grammar.
    pub fn to_builder(&self) -> GrammarBuilder {
        let mut b = GrammarBuilder::new();
        b.start(self.start_name());
        for m in &self.markers {
            b.marker(m);
        }
        for (a, alts) in self.rules.iter().enumerate() {
            for alt in alts {
                b.rule(&self.nonterminals[a], self.spell(&alt.symbols), alt.weight, 0);
            }
        }
        b
    }

    /// SHA-256 of the canonical text rendering.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_string().as_bytes()))
    }

    fn render_symbol(&self, s: &Symbol) -> String {
        match s {
            Symbol::Nonterminal(n) => self.nonterminals[*n as usize].clone(),
            Symbol::Marker(m) => self.markers[*m as usize].clone(),
            Symbol::Terminal(t) => {
                let name = &self.terminals[*t as usize];
                if parse::looks_like_nonterminal(name) || parse::needs_quotes(name) {
                    format!("\"{name}\"")
                } else {
                    name.clone()
                }
            }
        }
    }
}

/// Canonical text form; re-parses to an equal grammar.
impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "@start {}", self.start_name())?;
        for m in &self.markers {
            writeln!(f, "@marker {m}")?;
        }
        for (a, alts) in self.rules.iter().enumerate() {
            let rendered: Vec<String> = alts
                .iter()
                .map(|alt| {
                    let body: Vec<String> =
                        alt.symbols.iter().map(|s| self.render_symbol(s)).collect();
                    if alt.weight == 1.0 {
                        body.join(" ")
                    } else {
                        format!("{} [{}]", body.join(" "), alt.weight)
                    }
                })
                .collect();
            writeln!(f, "{} -> {}", self.nonterminals[a], rendered.join(" | "))?;
        }
        Ok(())
    }
}
