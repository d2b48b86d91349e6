use std::collections::HashMap;

use crate::error::{CoreError, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Joint token/id map shared by both languages. Ids are dense; the first
/// four are reserved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Reserved tokens followed by `tokens` in order, duplicates skipped.
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in RESERVED {
            v.push(t);
        }
        for t in tokens {
            let t = t.as_ref();
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(CoreError::InvalidArgument(format!("bad token {t:?}")));
            }
            if !v.index.contains_key(t) {
                v.push(t);
            }
        }
        if v.len() < 5 {
            return Err(CoreError::InvalidArgument(
                "vocabulary needs at least one non-reserved token".into(),
            ));
        }
        Ok(v)
    }

    fn push(&mut self, t: &str) {
        self.index.insert(t.to_string(), self.tokens.len());
        self.tokens.push(t.to_string());
    }

    /// Every whitespace token of `lines` in first-seen order.
    pub fn from_corpus<'a>(lines: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        Self::new(lines.into_iter().flat_map(str::split_whitespace))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map(String::as_str).unwrap_or(RESERVED[UNK])
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, line: &str) -> Vec<usize> {
        line.split_whitespace().map(|t| self.id(t)).collect()
    }

    /// Tokens joined by spaces, stopping at EOS and skipping BOS/PAD.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != BOS && i != PAD)
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn is_reserved(id: usize) -> bool {
        id < RESERVED.len()
    }

    pub fn first_regular() -> usize {
        RESERVED.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::new(["a", "b", "a"]).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(v.id("<pad>"), PAD);
        assert_eq!(v.id("<s>"), BOS);
        assert_eq!(v.id("</s>"), EOS);
        assert_eq!(v.id("<unk>"), UNK);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("zzz"), UNK);
    }

    #[test]
    fn too_small_is_rejected() {
        assert!(Vocabulary::new(Vec::<&str>::new()).is_err());
        assert!(Vocabulary::new(["a b"]).is_err());
    }

    #[test]
    fn decode_stops_at_eos() {
        let v = Vocabulary::new(["x", "y"]).unwrap();
        assert_eq!(v.decode(&[BOS, 4, 5, EOS, 4]), "x y");
        assert_eq!(v.encode("y x q"), vec![5, 4, UNK]);
    }
}
