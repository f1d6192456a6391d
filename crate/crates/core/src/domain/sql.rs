//! SQL tokenisation into a closed vocabulary.
//!
//! Keywords and identifiers are lowercased, identifiers are split on
//! underscores into pieces, and numeric literals collapse to a single `NUM`
//! class token. Anything outside the vocabulary becomes `UNK`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const MASK: usize = 2;
pub const NUM: usize = 3;
pub const STR: usize = 4;

pub const DEFAULT_MAX_SQL_LEN: usize = 128;

const SPECIALS: [&str; 5] = ["[pad]", "[unk]", "[mask]", "[num]", "[str]"];

pub const KEYWORDS: &[&str] = &[
    "select", "from", "where", "join", "inner", "left", "right", "outer", "on", "and", "or", "not",
    "in", "exists", "group", "by", "order", "having", "as", "limit", "count", "sum", "avg", "min",
    "max", "distinct", "union", "all", "insert", "into", "values", "update", "set", "delete",
    "between", "like", "is", "null", "asc", "desc", "case", "when", "then", "else", "end", "with",
    "interval", "date", "cast",
];

pub const PUNCTUATION: &[&str] = &[
    ",", ".", "(", ")", "*", "=", "<", ">", "<=", ">=", "<>", "!=", ";", "+", "-", "/", "%", "||",
];

/// Identifier pieces known to the standard vocabulary. The workload
/// simulator only builds table and column names out of these.
pub const IDENT_PIECES: &[&str] = &[
    "orders",
    "customer",
    "customers",
    "user",
    "users",
    "id",
    "events",
    "event",
    "lineitem",
    "item",
    "items",
    "product",
    "products",
    "store",
    "sales",
    "sale",
    "dim",
    "web",
    "page",
    "pages",
    "inventory",
    "warehouse",
    "stock",
    "district",
    "payment",
    "payments",
    "history",
    "nation",
    "region",
    "supplier",
    "part",
    "partsupp",
    "qty",
    "quantity",
    "price",
    "amount",
    "total",
    "status",
    "created",
    "at",
    "updated",
    "name",
    "city",
    "country",
    "key",
    "type",
    "category",
    "discount",
    "tax",
    "ship",
    "mode",
    "balance",
    "comment",
    "session",
    "sessions",
    "click",
    "clicks",
    "account",
    "accounts",
    "ts",
    "day",
    "month",
    "year",
    "revenue",
    "cost",
    "flag",
    "code",
    "level",
    "score",
    "value",
    "log",
    "logs",
    "metric",
    "metrics",
    "tag",
    "tags",
    "line",
    "number",
    "no",
    "brand",
    "size",
    "segment",
    "address",
    "phone",
    "email",
    "age",
    "rank",
    "shop",
    "visits",
    "visit",
    "device",
    "campaign",
    "ad",
    "ads",
    "impressions",
    "shipments",
    "shipment",
    "returns",
    "return",
    "refund",
    "coupon",
    "cart",
    "carts",
    "review",
    "reviews",
    "rating",
    "t",
    "s",
    "sub",
    "a",
    "b",
    "c",
    "d",
    "x",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub id: usize,
    pub text: String,
}

/// Tokenised SQL statement.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<Token>,
    /// Set when the statement was cut at the length limit.
    pub truncated: bool,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.id).collect()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.text.as_str()).collect()
    }

    /// Space-joined raw token text.
    pub fn detokenize(&self) -> String {
        self.texts().join(" ")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    entries: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Specials, keywords, punctuation, then identifier pieces, in that order.
    pub fn standard() -> Self {
        let entries: Vec<String> = SPECIALS
            .iter()
            .chain(KEYWORDS)
            .chain(PUNCTUATION)
            .chain(IDENT_PIECES)
            .map(|s| s.to_string())
            .collect();
        let mut index = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            index.entry(e.clone()).or_insert(i);
        }
        Vocab { entries, index }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, text: &str) -> Option<usize> {
        self.index.get(text).copied()
    }

    pub fn text(&self, id: usize) -> Option<&str> {
        self.entries.get(id).map(|s| s.as_str())
    }

    pub fn is_keyword(&self, text: &str) -> bool {
        KEYWORDS.contains(&text)
    }

    /// Vocabulary id of one identifier piece (`UNK` when unknown, `NUM` for digits).
    pub fn piece_id(&self, piece: &str) -> usize {
        if piece.chars().all(|c| c.is_ascii_digit()) {
            return NUM;
        }
        if self.is_keyword(piece) {
            return self.id(piece).unwrap_or(UNK);
        }
        self.id(piece).unwrap_or(UNK)
    }

    /// Pieces of an identifier such as `user_id` -> `[user, id]`.
    pub fn identifier_pieces(ident: &str) -> Vec<String> {
        ident
            .to_ascii_lowercase()
            .split('_')
            .filter(|p| !p.is_empty())
            .map(|p| p.to_string())
            .collect()
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::standard()
    }
}

pub fn tokenize_sql(text: &str, vocab: &Vocab) -> Result<TokenSeq> {
    tokenize_sql_with_limit(text, vocab, DEFAULT_MAX_SQL_LEN)
}

pub fn tokenize_sql_with_limit(text: &str, vocab: &Vocab, max_len: usize) -> Result<TokenSeq> {
    if text.trim().is_empty() {
        return Err(Error::InvalidInput("empty SQL text".into()));
    }
    let lower = text.to_ascii_lowercase();
    let chars: Vec<char> = lower.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit()
            || (c == '.' && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit()))
        {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            tokens.push(Token {
                id: NUM,
                text: chars[start..i].iter().collect(),
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            if vocab.is_keyword(&word) {
                tokens.push(Token {
                    id: vocab.id(&word).unwrap_or(UNK),
                    text: word,
                });
            } else {
                for piece in Vocab::identifier_pieces(&word) {
                    tokens.push(Token {
                        id: vocab.piece_id(&piece),
                        text: piece,
                    });
                }
            }
        } else if c == '\'' {
            let start = i;
            i += 1;
            while i < chars.len() && chars[i] != '\'' {
                i += 1;
            }
            i = (i + 1).min(chars.len());
            let lit: String = chars[start..i]
                .iter()
                .filter(|c| !c.is_whitespace())
                .collect();
            tokens.push(Token { id: STR, text: lit });
        } else if c == '[' {
            // A literal "[mask]" etc. maps back onto the special token.
            let end = chars[i..].iter().position(|&x| x == ']').map(|p| i + p + 1);
            match end {
                Some(e) => {
                    let word: String = chars[i..e].iter().collect();
                    let id = SPECIALS.iter().position(|s| *s == word).unwrap_or(UNK);
                    tokens.push(Token { id, text: word });
                    i = e;
                }
                None => {
                    tokens.push(Token {
                        id: UNK,
                        text: "[".into(),
                    });
                    i += 1;
                }
            }
        } else {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            if two.len() == 2 && PUNCTUATION.contains(&two.as_str()) {
                tokens.push(Token {
                    id: vocab.id(&two).unwrap_or(UNK),
                    text: two,
                });
                i += 2;
            } else {
                let one = c.to_string();
                tokens.push(Token {
                    id: vocab
                        .id(&one)
                        .filter(|_| PUNCTUATION.contains(&one.as_str()))
                        .unwrap_or(UNK),
                    text: one,
                });
                i += 1;
            }
        }
    }
    if tokens.is_empty() {
        return Err(Error::InvalidInput("SQL text has no tokens".into()));
    }
    let truncated = tokens.len() > max_len;
    tokens.truncate(max_len);
    Ok(TokenSeq { tokens, truncated })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(seq: &TokenSeq) -> Vec<String> {
        seq.tokens
            .iter()
            .map(|t| match t.id {
                NUM => "NUM".to_string(),
                _ => t.text.clone(),
            })
            .collect()
    }

    #[test]
    fn simple_select() {
        let v = Vocab::standard();
        let s = tokenize_sql("SELECT a FROM t", &v).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(texts(&s), ["select", "a", "from", "t"]);
        assert!(s.tokens.iter().all(|t| t.id != UNK));
    }

    #[test]
    fn empty_is_invalid() {
        let v = Vocab::standard();
        assert!(matches!(tokenize_sql("", &v), Err(Error::InvalidInput(_))));
        assert!(matches!(
            tokenize_sql("   ", &v),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn identifiers_split_and_numbers_collapse() {
        let v = Vocab::standard();
        let s = tokenize_sql("select user_id from orders where qty > 10", &v).unwrap();
        assert_eq!(
            texts(&s),
            ["select", "user", "id", "from", "orders", "where", "qty", ">", "NUM"]
        );
        assert_eq!(s.tokens[8].id, NUM);
        assert!(s.tokens.iter().all(|t| t.id != UNK));
    }

    #[test]
    fn unknown_pieces_and_truncation() {
        let v = Vocab::standard();
        let s = tokenize_sql("select zzqx_id from orders", &v).unwrap();
        assert_eq!(s.tokens[1].id, UNK);
        assert_eq!(s.tokens[2].text, "id");
        let long = "select a ".repeat(100);
        let s = tokenize_sql(&long, &v).unwrap();
        assert_eq!(s.len(), DEFAULT_MAX_SQL_LEN);
        assert!(s.truncated);
    }

    #[test]
    fn operators_and_literals() {
        let v = Vocab::standard();
        let s = tokenize_sql("a.b <= 3.5 and c <> 'x y'", &v).unwrap();
        assert_eq!(
            s.texts(),
            ["a", ".", "b", "<=", "3.5", "and", "c", "<>", "'xy'"]
        );
        assert_eq!(s.tokens[8].id, STR);
        let mask = tokenize_sql("select [mask] from t", &v).unwrap();
        assert_eq!(mask.tokens[1].id, MASK);
    }
}
