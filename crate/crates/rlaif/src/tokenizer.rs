//! Word-level tokenizer over the closed vocabulary of the synthetic
//! world and its prompt templates.
//!
//! Text is lowercased and split on whitespace; every surface form the
//! generators can emit is a single token. Unknown words map to `<unk>`.

use std::collections::HashMap;
use std::sync::OnceLock;

use crate::world;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

/// Words used by question/answer/judge templates, beyond the world's
/// actor/action/object names and numerals.
const TEMPLATE_WORDS: &[&str] = &[
    ".", ":", "?", ",", "|", "a", "b", "q", "is", "there", "does", "do", "how", "many",
    "distinct", "actors", "appear", "times", "what", "first", "before", "after", "happen",
    "yes", "no", "describe", "this", "video", "in", "detail", "question", "response",
    "context", "which", "better", "preferred", "answer", "and", "then", "score",
];

pub struct Tokenizer {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Tokenizer {
    fn build() -> Self {
        let mut words: Vec<String> = vec![
            "<pad>".into(),
            "<bos>".into(),
            "<eos>".into(),
            "<unk>".into(),
        ];
        let mut push = |w: &str, words: &mut Vec<String>| {
            let w = w.to_string();
            if !words.contains(&w) {
                words.push(w);
            }
        };
        for w in TEMPLATE_WORDS {
            push(w, &mut words);
        }
        for w in world::ACTORS {
            push(w, &mut words);
        }
        for w in world::ACTIONS {
            push(w, &mut words);
        }
        for w in world::OBJECTS {
            push(w, &mut words);
        }
        for n in 0..=world::MAX_NUMERAL {
            push(&n.to_string(), &mut words);
        }
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Tokenizer { words, index }
    }

    /// The process-wide tokenizer. The vocabulary is a pure function of
    /// compiled-in word lists, so sharing it is safe.
    pub fn shared() -> &'static Tokenizer {
        static TOK: OnceLock<Tokenizer> = OnceLock::new();
        TOK.get_or_init(Tokenizer::build)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn id(&self, word: &str) -> usize {
        *self.index.get(word).unwrap_or(&UNK)
    }

    pub fn word(&self, id: usize) -> &str {
        self.words.get(id).map(|s| s.as_str()).unwrap_or("<unk>")
    }

    /// Lowercase, split on whitespace, map each word to its id.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.split_whitespace()
            .map(|w| self.id(&w.to_lowercase()))
            .collect()
    }

    /// Join tokens with single spaces, skipping special tokens.
    pub fn decode(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for &id in ids {
            if id <= UNK {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(self.word(id));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_known_words() {
        let tok = Tokenizer::shared();
        let text = "alice kick ball . yes no 7";
        let ids = tok.encode(text);
        assert!(ids.iter().all(|&i| i != UNK));
        assert_eq!(tok.decode(&ids), text);
    }

    #[test]
    fn unknown_words_map_to_unk_and_are_skipped_on_decode() {
        let tok = Tokenizer::shared();
        let ids = tok.encode("alice zzzgibberish ball");
        assert_eq!(ids[1], UNK);
        assert_eq!(tok.decode(&ids), "alice ball");
    }

    #[test]
    fn vocabulary_fits_default_model_vocab() {
        let tok = Tokenizer::shared();
        assert!(tok.len() <= 512, "vocab {} exceeds 512", tok.len());
        assert!(tok.len() > 100);
    }

    #[test]
    fn specials_have_fixed_ids() {
        let tok = Tokenizer::shared();
        assert_eq!(tok.id("<pad>"), PAD);
        assert_eq!(tok.id("<bos>"), BOS);
        assert_eq!(tok.id("<eos>"), EOS);
        assert_eq!(tok.id("<unk>"), UNK);
    }
}
