//! Text format:
//!
//! ```text
//! # comment
//! @start S
//! @marker MAIN-AUX
//! @include vocab.cfg
//! S -> NP VP | NP MAIN-AUX VP [2.0]
//! ```
//!
//! Repeated `LHS ->` lines append alternatives. A line starting with `|`
//! continues the previous rule. Symbols beginning with an ASCII uppercase
//! letter are nonterminals unless declared as markers; quoted symbols and
//! everything else are terminals. A trailing `[w]` sets an alternative weight.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use super::{Grammar, GrammarBuilder, GrammarError, SymbolKind};

pub(crate) fn looks_like_nonterminal(name: &str) -> bool {
    name.chars().next().is_some_and(|c| c.is_ascii_uppercase())
}

pub(crate) fn needs_quotes(name: &str) -> bool {
    name.is_empty()
        || name.starts_with('@')
        || name.starts_with('"')
        || name.starts_with('\'')
        || name.starts_with('[')
        || name.contains(|c: char| c.is_whitespace() || c == '|' || c == '#')
        || name == "->"
}

struct RawRule {
    lhs: String,
    alts: Vec<(Vec<String>, f64)>,
    line: usize,
}

#[derive(Default)]
struct Collected {
    start: Option<String>,
    first_top_level_lhs: Option<String>,
    markers: Vec<String>,
    rules: Vec<RawRule>,
}

/// Parses grammar text that contains no `@include` directives.
pub fn parse_grammar(text: &str) -> Result<Grammar, GrammarError> {
    parse_grammar_with(text, &|name: &str| {
        Err(GrammarError::Io {
            path: name.to_string(),
            message: "includes are not available for in-memory grammars".into(),
        })
    })
}

/// Parses a grammar file, resolving `@include` relative to its directory.
pub fn parse_grammar_file(path: &Path) -> Result<Grammar, GrammarError> {
    let read = |p: &Path| {
        std::fs::read_to_string(p).map_err(|e| GrammarError::Io {
            path: p.display().to_string(),
            message: e.to_string(),
        })
    };
    let text = read(path)?;
    let dir: PathBuf = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_grammar_with(&text, &|name: &str| read(&dir.join(name)))
}

/// Parses grammar text, fetching included files through `resolve`.
pub fn parse_grammar_with(
    text: &str,
    resolve: &dyn Fn(&str) -> Result<String, GrammarError>,
) -> Result<Grammar, GrammarError> {
    let mut collected = Collected::default();
    let mut visiting = HashSet::new();
    collect(text, resolve, &mut collected, &mut visiting, 0)?;

    let markers: HashSet<&str> = collected.markers.iter().map(String::as_str).collect();
    let mut builder = GrammarBuilder::new();
    if let Some(s) = collected.start.as_ref().or(collected.first_top_level_lhs.as_ref()) {
        builder.start(s);
    }
    for m in &collected.markers {
        builder.marker(m);
    }
    for rule in &collected.rules {
        if !looks_like_nonterminal(&rule.lhs) {
            return Err(GrammarError::Syntax {
                line: rule.line,
                message: format!("left-hand side `{}` must start with an uppercase letter", rule.lhs),
            });
        }
        for (symbols, weight) in &rule.alts {
            let spelled = symbols
                .iter()
                .map(|s| classify(s, &markers))
                .collect::<Vec<_>>();
            builder.rule(&rule.lhs, spelled, *weight, rule.line);
        }
    }
    builder.build()
}

fn classify(raw: &str, markers: &HashSet<&str>) -> (String, SymbolKind) {
    let quoted = raw.len() >= 2
        && ((raw.starts_with('"') && raw.ends_with('"'))
            || (raw.starts_with('\'') && raw.ends_with('\'')));
    if quoted {
        (raw[1..raw.len() - 1].to_string(), SymbolKind::Terminal)
    } else if markers.contains(raw) {
        (raw.to_string(), SymbolKind::Marker)
    } else if looks_like_nonterminal(raw) {
        (raw.to_string(), SymbolKind::Nonterminal)
    } else {
        (raw.to_string(), SymbolKind::Terminal)
    }
}

fn strip_comment(line: &str) -> &str {
    // `#` inside quotes is literal.
    let mut quote: Option<char> = None;
    for (i, c) in line.char_indices() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None if c == '"' || c == '\'' => {
                let prev_ws = i == 0 || line[..i].ends_with(char::is_whitespace);
                if prev_ws {
                    quote = Some(c);
                }
            }
            None if c == '#' => return &line[..i],
            None => {}
        }
    }
    line
}

fn collect(
    text: &str,
    resolve: &dyn Fn(&str) -> Result<String, GrammarError>,
    out: &mut Collected,
    visiting: &mut HashSet<String>,
    depth: usize,
) -> Result<(), GrammarError> {
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw_line).trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('@') {
            let mut parts = rest.split_whitespace();
            let directive = parts.next().unwrap_or("");
            let args: Vec<&str> = parts.collect();
            match directive {
                "start" if args.len() == 1 => {
                    if depth == 0 || out.start.is_none() {
                        out.start = Some(args[0].to_string());
                    }
                }
                "marker" if !args.is_empty() => {
                    for a in args {
                        if !out.markers.iter().any(|m| m == a) {
                            out.markers.push(a.to_string());
                        }
                    }
                }
                "include" if args.len() == 1 => {
                    let name = args[0].to_string();
                    if !visiting.insert(name.clone()) {
                        return Err(GrammarError::Syntax {
                            line: line_no,
                            message: format!("recursive include of `{name}`"),
                        });
                    }
                    let included = resolve(&name)?;
                    collect(&included, resolve, out, visiting, depth + 1)?;
                    visiting.remove(&name);
                }
                _ => {
                    return Err(GrammarError::Syntax {
                        line: line_no,
                        message: format!("malformed directive `@{rest}`"),
                    })
                }
            }
            continue;
        }

        let (lhs, body) = if let Some(cont) = line.strip_prefix('|') {
            let Some(prev) = out.rules.last() else {
                return Err(GrammarError::Syntax {
                    line: line_no,
                    message: "continuation line without a preceding rule".into(),
                });
            };
            (prev.lhs.clone(), cont)
        } else {
            let (lhs, body) = line
                .split_once("->")
                .or_else(|| line.split_once('→'))
                .ok_or_else(|| GrammarError::Syntax {
                    line: line_no,
                    message: "expected `LHS -> alternatives`".into(),
                })?;
            let lhs = lhs.trim();
            if lhs.is_empty() || lhs.contains(char::is_whitespace) {
                return Err(GrammarError::Syntax {
                    line: line_no,
                    message: format!("bad left-hand side `{lhs}`"),
                });
            }
            (lhs.to_string(), body)
        };

        let mut alts = Vec::new();
        for piece in split_alternatives(body) {
            let mut symbols = tokenize(piece).map_err(|message| GrammarError::Syntax {
                line: line_no,
                message,
            })?;
            let mut weight = 1.0;
            if let Some(last) = symbols.last() {
                if last.starts_with('[') && last.ends_with(']') && last.len() > 2 {
                    weight = last[1..last.len() - 1].parse::<f64>().map_err(|_| {
                        GrammarError::Syntax {
                            line: line_no,
                            message: format!("bad weight `{last}`"),
                        }
                    })?;
                    symbols.pop();
                }
            }
            if symbols.is_empty() {
                return Err(GrammarError::Syntax {
                    line: line_no,
                    message: format!("empty alternative for `{lhs}`"),
                });
            }
            alts.push((symbols, weight));
        }
        if depth == 0 && out.first_top_level_lhs.is_none() {
            out.first_top_level_lhs = Some(lhs.clone());
        }
        out.rules.push(RawRule {
            lhs,
            alts,
            line: line_no,
        });
    }
    Ok(())
}

fn split_alternatives(body: &str) -> Vec<&str> {
    let mut pieces = Vec::new();
    let mut quote: Option<char> = None;
    let mut start = 0;
    for (i, c) in body.char_indices() {
        match quote {
            Some(q) if c == q => quote = None,
            Some(_) => {}
            None if c == '"' || c == '\'' => {
                if i == 0 || body[..i].ends_with(char::is_whitespace) {
                    quote = Some(c);
                }
            }
            None if c == '|' => {
                pieces.push(&body[start..i]);
                start = i + 1;
            }
            None => {}
        }
    }
    pieces.push(&body[start..]);
    pieces
}

fn tokenize(piece: &str) -> Result<Vec<String>, String> {
    let mut out = Vec::new();
    let mut chars = piece.trim().chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        let mut tok = String::new();
        if c == '"' || c == '\'' {
            tok.push(c);
            chars.next();
            let mut closed = false;
            for d in chars.by_ref() {
                tok.push(d);
                if d == c {
                    closed = true;
                    break;
                }
            }
            if !closed {
                return Err(format!("unterminated quote in `{piece}`"));
            }
        } else {
            while let Some(&d) = chars.peek() {
                if d.is_whitespace() {
                    break;
                }
                tok.push(d);
                chars.next();
            }
        }
        out.push(tok);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn continuation_lines_and_comments() {
        let g = parse_grammar("S -> a # first\n | b\n# whole line\nS -> c").unwrap();
        assert_eq!(g.alternatives(g.start()).len(), 3);
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        assert_eq!(
            parse_grammar("S -> a\nbroken line").unwrap_err(),
            GrammarError::Syntax {
                line: 2,
                message: "expected `LHS -> alternatives`".into()
            }
        );
        assert!(matches!(
            parse_grammar("S -> a |  | b"),
            Err(GrammarError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            parse_grammar("s -> a"),
            Err(GrammarError::Syntax { line: 1, .. })
        ));
    }

    #[test]
    fn quoted_terminals_and_weights() {
        let g = parse_grammar("S -> \"A\" 'x y' [3]").unwrap();
        assert_eq!(g.terminals(), &["A".to_string(), "x y".to_string()]);
        assert_eq!(g.alternatives(0)[0].weight, 3.0);
    }

    #[test]
    fn marker_symbols_are_classified() {
        let g = parse_grammar("@marker MAIN-AUX\nS -> x MAIN-AUX y").unwrap();
        assert_eq!(g.markers(), &["MAIN-AUX".to_string()]);
        assert!(g.terminal_id("MAIN-AUX").is_none());
    }

    #[test]
    fn includes_resolve_through_callback() {
        let g = parse_grammar_with("@include lex\nS -> D N", &|name| {
            assert_eq!(name, "lex");
            Ok("D -> the\nN -> cat | dog".to_string())
        })
        .unwrap();
        assert_eq!(g.start_name(), "S");
        assert_eq!(g.terminals().len(), 3);
    }
}
