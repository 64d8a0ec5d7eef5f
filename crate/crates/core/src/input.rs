//! Tokenized inputs with named attribute columns.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// One token: a surface form plus optional named attribute columns
/// (e.g. a gold or predicted tag column, a cluster column).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub form: String,
    pub attrs: BTreeMap<String, String>,
}

impl Token {
    pub fn new(form: impl Into<String>) -> Self {
        Token {
            form: form.into(),
            attrs: BTreeMap::new(),
        }
    }

    pub fn with_attr(mut self, column: impl Into<String>, value: impl Into<String>) -> Self {
        self.attrs.insert(column.into(), value.into());
        self
    }

    pub fn attr(&self, column: &str) -> Option<&str> {
        self.attrs.get(column).map(|s| s.as_str())
    }
}

/// A tokenized sentence. Non-empty, and every token carries the same
/// set of attribute columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Input {
    tokens: Vec<Token>,
}

impl Input {
    pub fn new(tokens: Vec<Token>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        let columns: Vec<String> = tokens[0].attrs.keys().cloned().collect();
        for (i, tok) in tokens.iter().enumerate() {
            for col in &columns {
                if !tok.attrs.contains_key(col) {
                    return Err(Error::InconsistentColumns {
                        index: i,
                        column: col.clone(),
                    });
                }
            }
            if tok.attrs.len() != columns.len() {
                let extra = tok
                    .attrs
                    .keys()
                    .find(|k| !columns.contains(k))
                    .cloned()
                    .unwrap_or_default();
                return Err(Error::InconsistentColumns {
                    index: 0,
                    column: extra,
                });
            }
        }
        Ok(Input { tokens })
    }

    /// Convenience constructor from bare forms, no attribute columns.
    pub fn from_forms<S: AsRef<str>>(forms: &[S]) -> Result<Self> {
        Input::new(forms.iter().map(|f| Token::new(f.as_ref())).collect())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // enforced non-empty at construction
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn token(&self, i: usize) -> &Token {
        &self.tokens[i]
    }

    pub fn forms(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.form.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty() {
        assert!(matches!(Input::new(vec![]), Err(Error::EmptyInput)));
    }

    #[test]
    fn rejects_inconsistent_columns() {
        let toks = vec![
            Token::new("a").with_attr("tag", "X"),
            Token::new("b"),
        ];
        assert!(matches!(
            Input::new(toks),
            Err(Error::InconsistentColumns { .. })
        ));
    }

    #[test]
    fn from_forms_works() {
        let x = Input::from_forms(&["a", "b", "c"]).unwrap();
        assert_eq!(x.len(), 3);
        assert_eq!(x.token(1).form, "b");
    }
}
