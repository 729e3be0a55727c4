use super::{Grammar, Symbol};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum DerivationNode {
    Internal {
        nonterminal: u32,
        alternative: usize,
        children: Vec<DerivationNode>,
    },
    Leaf {
        terminal: u32,
    },
    /// Zero-width annotation.
    Marker {
        marker: u32,
    },
}

/// A derivation tree whose leaves, read left to right, spell the sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Derivation {
    pub root: DerivationNode,
}

/// A surface token with the chain of nonterminals above it (root first).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeafInfo {
    pub position: usize,
    pub terminal: u32,
    pub ancestors: Vec<u32>,
}

impl DerivationNode {
    pub fn depth(&self) -> usize {
        match self {
            DerivationNode::Internal { children, .. } => {
                1 + children.iter().map(DerivationNode::depth).max().unwrap_or(0)
            }
            _ => 0,
        }
    }
}

impl Derivation {
    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    pub fn terminal_ids(&self) -> Vec<u32> {
        self.leaves().into_iter().map(|l| l.terminal).collect()
    }

    pub fn tokens(&self, grammar: &Grammar) -> Vec<String> {
        self.terminal_ids()
            .into_iter()
            .map(|t| grammar.terminal_name(t).to_string())
            .collect()
    }

    pub fn leaves(&self) -> Vec<LeafInfo> {
        let mut out = Vec::new();
        let mut path = Vec::new();
        walk(&self.root, &mut path, &mut |node, path, pos| {
            if let DerivationNode::Leaf { terminal } = node {
                out.push(LeafInfo {
                    position: pos,
                    terminal: *terminal,
                    ancestors: path.to_vec(),
                });
            }
        });
        out
    }

    /// Markers as (marker id, index of the next surface token).
    pub fn marker_positions(&self) -> Vec<(u32, usize)> {
        let mut out = Vec::new();
        let mut path = Vec::new();
        walk(&self.root, &mut path, &mut |node, _, pos| {
            if let DerivationNode::Marker { marker } = node {
                out.push((*marker, pos));
            }
        });
        out
    }

    /// Checks that each internal node matches its recorded alternative exactly.
    pub fn is_consistent_with(&self, grammar: &Grammar) -> bool {
        fn check(node: &DerivationNode, g: &Grammar) -> bool {
            match node {
                DerivationNode::Internal {
                    nonterminal,
                    alternative,
                    children,
                } => {
                    if *nonterminal as usize >= g.nonterminals().len() {
                        return false;
                    }
                    let Some(alt) = g.alternatives(*nonterminal).get(*alternative) else {
                        return false;
                    };
                    alt.symbols.len() == children.len()
                        && alt.symbols.iter().zip(children).all(|(s, c)| match (s, c) {
                            (Symbol::Terminal(t), DerivationNode::Leaf { terminal }) => t == terminal,
                            (Symbol::Marker(m), DerivationNode::Marker { marker }) => m == marker,
                            (
                                Symbol::Nonterminal(n),
                                DerivationNode::Internal { nonterminal, .. },
                            ) => n == nonterminal && check(c, g),
                            _ => false,
                        })
                }
                _ => false,
            }
        }
        matches!(&self.root, DerivationNode::Internal { nonterminal, .. } if *nonterminal == grammar.start())
            && check(&self.root, grammar)
    }
}

fn walk<F>(node: &DerivationNode, path: &mut Vec<u32>, f: &mut F) -> usize
where
    F: FnMut(&DerivationNode, &[u32], usize),
{
    fn go<F>(node: &DerivationNode, path: &mut Vec<u32>, pos: &mut usize, f: &mut F)
    where
        F: FnMut(&DerivationNode, &[u32], usize),
    {
        match node {
            DerivationNode::Internal {
                nonterminal,
                children,
                ..
            } => {
                path.push(*nonterminal);
                for c in children {
                    go(c, path, pos, f);
                }
                path.pop();
            }
            DerivationNode::Leaf { .. } => {
                f(node, path, *pos);
                *pos += 1;
            }
            DerivationNode::Marker { .. } => f(node, path, *pos),
        }
    }
    let mut pos = 0;
    go(node, path, &mut pos, f);
    pos
}
