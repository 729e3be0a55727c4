use super::{parse_grammar_with, Grammar, GrammarError};

/// Bundled grammar files, keyed by file stem.
pub const BUNDLED_GRAMMARS: &[(&str, &str)] = &[
    ("prepose_delete", include_str!("../../grammars/prepose_delete.cfg")),
    ("first_eq_main", include_str!("../../grammars/first_eq_main.cfg")),
    ("first_neq_main", include_str!("../../grammars/first_neq_main.cfg")),
    ("vocab", include_str!("../../grammars/vocab.cfg")),
];

/// Raw text of a bundled file; accepts the stem with or without `.cfg`.
pub fn bundled_source(name: &str) -> Option<&'static str> {
    let stem = name.strip_suffix(".cfg").unwrap_or(name);
    BUNDLED_GRAMMARS
        .iter()
        .find(|(n, _)| *n == stem)
        .map(|(_, text)| *text)
}

/// Parses one of the bundled grammars, resolving its vocabulary include.
pub fn bundled_grammar(name: &str) -> Result<Grammar, GrammarError> {
    let text = bundled_source(name).ok_or_else(|| GrammarError::UnknownBundled(name.to_string()))?;
    parse_grammar_with(text, &|inc: &str| {
        bundled_source(inc)
            .map(str::to_string)
            .ok_or_else(|| GrammarError::UnknownBundled(inc.to_string()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_bundled_grammars_parse() {
        for name in ["prepose_delete", "first_eq_main", "first_neq_main.cfg"] {
            let g = bundled_grammar(name).unwrap();
            assert_eq!(g.start_name(), "S");
        }
    }

    #[test]
    fn singular_auxiliaries_match_lexicon() {
        let g = bundled_grammar("prepose_delete").unwrap();
        let aux = g.nonterminal_id("Aux_S").unwrap();
        assert_eq!(
            g.lexical_items(aux).unwrap(),
            vec!["does", "did", "can", "would", "shall"]
        );
        assert_eq!(g.markers(), &["MAIN-AUX".to_string()]);
    }
}
