use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::error::{contract, CoreError, Result};

pub const SEP: usize = 0;
pub const SIL: usize = 1;
pub const UNK: usize = 2;
const SPECIALS: [&str; 3] = ["<sep>", "<sil>", "<unk>"];

/// Sentence separation mark in lyrics text (newlines also separate).
pub const SEPARATION_MARK: char = '|';

/// Token-to-phoneme table. Phoneme IDs are dense: the three specials first,
/// then phonemes in order of first appearance in the table.
#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    phonemes: Vec<String>,
    ids: HashMap<String, usize>,
    words: BTreeMap<String, Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct G2pOutput {
    pub phonemes: Vec<usize>,
    /// Phoneme index at which each word starts.
    pub word_starts: Vec<usize>,
    pub unknown_tokens: usize,
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::new()
    }
}

impl Lexicon {
    pub fn new() -> Self {
        let phonemes: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let ids = phonemes.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        Lexicon {
            phonemes,
            ids,
            words: BTreeMap::new(),
        }
    }

    fn phoneme_id(&mut self, p: &str) -> usize {
        if let Some(&id) = self.ids.get(p) {
            return id;
        }
        self.phonemes.push(p.to_string());
        self.ids.insert(p.to_string(), self.phonemes.len() - 1);
        self.phonemes.len() - 1
    }

    /// Adds (or replaces) a word.
    pub fn insert(&mut self, word: &str, phonemes: &[&str]) {
        let ids = phonemes.iter().map(|p| self.phoneme_id(p)).collect();
        self.words.insert(word.to_lowercase(), ids);
    }

    /// Parses `word ph1 ph2 ...` lines; `#` starts a comment. A line
    /// `@phonemes p1 p2 ...` pins the inventory order.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lex = Lexicon::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let head = parts.next().unwrap_or_default();
            let rest: Vec<&str> = parts.collect();
            if head == "@phonemes" {
                for p in rest {
                    lex.phoneme_id(p);
                }
                continue;
            }
            if rest.is_empty() {
                return Err(CoreError::Format(format!("lexicon line {}: word without phonemes", n + 1)));
            }
            lex.insert(head, &rest);
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("@phonemes");
        for p in &self.phonemes[SPECIALS.len()..] {
            out.push(' ');
            out.push_str(p);
        }
        out.push('\n');
        for (w, ids) in &self.words {
            out.push_str(w);
            for &i in ids {
                out.push(' ');
                out.push_str(&self.phonemes[i]);
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.phonemes.len()
    }

    pub fn phoneme_name(&self, id: usize) -> &str {
        self.phonemes.get(id).map(String::as_str).unwrap_or("<?>")
    }

    pub fn lookup(&self, word: &str) -> Option<&[usize]> {
        self.words.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    pub fn words(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.words.iter().map(|(w, p)| (w.as_str(), p.as_slice()))
    }

    /// Converts cleaned lyrics to phoneme IDs. Sentences (split at `|` or
    /// newlines) are joined by exactly one separator; empty sentences vanish.
    pub fn g2p(&self, text: &str) -> Result<G2pOutput> {
        let mut phonemes = Vec::new();
        let mut word_starts = Vec::new();
        let mut unknown = 0;
        for sentence in text.split(|c| c == SEPARATION_MARK || c == '\n') {
            let tokens: Vec<&str> = sentence.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            if !phonemes.is_empty() {
                phonemes.push(SEP);
            }
            for tok in tokens {
                word_starts.push(phonemes.len());
                match self.lookup(tok) {
                    Some(ids) => phonemes.extend_from_slice(ids),
                    None => {
                        unknown += 1;
                        phonemes.push(UNK);
                    }
                }
            }
        }
        if phonemes.is_empty() {
            return Err(contract("lyrics are empty after cleaning"));
        }
        if unknown > 0 {
            log::warn!("{unknown} token(s) not in the lexicon mapped to <unk>");
        }
        Ok(G2pOutput {
            phonemes,
            word_starts,
            unknown_tokens: unknown,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> Lexicon {
        Lexicon::parse("# demo\nka k a\nmi m i\n").unwrap()
    }

    #[test]
    fn ids_are_dense_and_specials_first() {
        let l = lex();
        assert_eq!(l.vocab_size(), 7);
        assert_eq!(l.phoneme_name(SEP), "<sep>");
        assert_eq!(l.lookup("KA").unwrap(), &[3, 4]);
        assert_eq!(Lexicon::parse(&l.to_text()).unwrap(), l);
    }

    #[test]
    fn g2p_contract() {
        let l = lex();
        assert!(l.g2p("  | \n").is_err());
        assert_eq!(l.g2p("ka").unwrap().phonemes, vec![3, 4]);
        let two = l.g2p("| ka || mi |").unwrap();
        assert_eq!(two.phonemes, vec![3, 4, SEP, 5, 6]);
        assert_eq!(two.word_starts, vec![0, 3]);
        let unk = l.g2p("ka zz").unwrap();
        assert_eq!(unk.phonemes, vec![3, 4, UNK]);
        assert_eq!(unk.unknown_tokens, 1);
    }
}
