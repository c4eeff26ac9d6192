use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const SEP: TokenId = 3;

const SPECIALS: [&str; 4] = ["<PAD>", "<BOS>", "<EOS>", "<SEP>"];
const CHARS: &str = "0123456789+-*()=\n# ";

/// Character-level vocabulary: four special tokens followed by one token per
/// character of the task alphabet. Ids are fixed by this ordering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    chars: Vec<char>,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::new()
    }
}

impl Tokenizer {
    pub fn new() -> Self {
        Self {
            chars: CHARS.chars().collect(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        SPECIALS.len() + self.chars.len()
    }

    /// Printable form of every token, in id order.
    pub fn vocab(&self) -> Vec<String> {
        SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(self.chars.iter().map(|c| c.to_string()))
            .collect()
    }

    /// SHA-256 over the ordered vocabulary; stored in checkpoints and checked at load.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for (id, tok) in self.vocab().iter().enumerate() {
            hasher.update((id as u32).to_le_bytes());
            hasher.update((tok.len() as u32).to_le_bytes());
            hasher.update(tok.as_bytes());
        }
        hex::encode(hasher.finalize())
    }

    pub fn is_special(&self, token: TokenId) -> bool {
        (token as usize) < SPECIALS.len()
    }

    pub fn token_of(&self, ch: char) -> Option<TokenId> {
        self.chars
            .iter()
            .position(|&c| c == ch)
            .map(|i| (i + SPECIALS.len()) as TokenId)
    }

    pub fn char_of(&self, token: TokenId) -> Option<char> {
        (token as usize)
            .checked_sub(SPECIALS.len())
            .and_then(|i| self.chars.get(i).copied())
    }

    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        text.chars()
            .enumerate()
            .map(|(position, ch)| {
                self.token_of(ch)
                    .ok_or(Error::UnknownCharacter { position, ch })
            })
            .collect()
    }

    /// Inverse of [`encode`](Self::encode). Special tokens carry no text and are dropped.
    pub fn decode(&self, tokens: &[TokenId]) -> String {
        tokens.iter().filter_map(|&t| self.char_of(t)).collect()
    }

    /// Like [`decode`](Self::decode) but renders special tokens as `<EOS>` etc.
    pub fn decode_display(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .map(|&t| match self.char_of(t) {
                Some(c) => c.to_string(),
                None => SPECIALS
                    .get(t as usize)
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| format!("<{t}?>")),
            })
            .collect()
    }

    /// Text of a generated completion: everything before the first EOS.
    pub fn completion_text(&self, tokens: &[TokenId]) -> String {
        let end = tokens.iter().position(|&t| t == EOS).unwrap_or(tokens.len());
        self.decode(&tokens[..end])
    }

    /// `BOS expression SEP`, the conditioning context for every generation.
    pub fn prompt_tokens(&self, expression: &str) -> Result<Vec<TokenId>> {
        let mut out = Vec::with_capacity(expression.len() + 2);
        out.push(BOS);
        out.extend(self.encode(expression)?);
        out.push(SEP);
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basic_round_trip() {
        let tok = Tokenizer::new();
        assert_eq!(tok.decode(&tok.encode("3+5=8").unwrap()), "3+5=8");
        assert!(tok.encode("").unwrap().is_empty());
    }

    #[test]
    fn unknown_character_reports_position() {
        let tok = Tokenizer::new();
        match tok.encode("1+é") {
            Err(Error::UnknownCharacter { position, ch }) => {
                assert_eq!(position, 2);
                assert_eq!(ch, 'é');
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn eos_is_unique_and_ids_are_stable() {
        let tok = Tokenizer::new();
        let vocab = tok.vocab();
        assert_eq!(vocab.iter().filter(|v| *v == "<EOS>").count(), 1);
        assert_eq!(vocab[EOS as usize], "<EOS>");
        assert_eq!(tok.vocab_size(), 23);
        assert_eq!(tok.fingerprint(), Tokenizer::new().fingerprint());
        assert_eq!(tok.token_of('0'), Some(4));
    }

    #[test]
    fn completion_text_stops_at_eos() {
        let tok = Tokenizer::new();
        let mut t = tok.encode("#### 4").unwrap();
        t.push(EOS);
        t.extend(tok.encode("99").unwrap());
        assert_eq!(tok.completion_text(&t), "#### 4");
        assert!(tok.decode_display(&t).contains("<EOS>"));
    }

    proptest! {
        #[test]
        fn round_trip_over_alphabet(s in "[0-9+*()=# \n-]{0,64}") {
            let tok = Tokenizer::new();
            prop_assert_eq!(tok.decode(&tok.encode(&s).unwrap()), s);
        }
    }
}
