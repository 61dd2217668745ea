use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::alignment::NUM_PHONES;
use crate::error::{invalid, Error, Result};

const CONSONANTS: [&str; 24] = [
    "B", "CH", "D", "DH", "F", "G", "HH", "JH", "K", "L", "M", "N", "NG", "P", "R", "S", "SH", "T", "TH", "V",
    "W", "Y", "Z", "ZH",
];
const VOWELS: [&str; 15] = [
    "AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY", "UH", "UW",
];
const SPECIAL: [&str; 3] = ["sil", "sp", "spn"];

/// The 72-entry monophone table: ARPAbet consonants, stressed vowels and
/// three non-speech symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhoneSet {
    symbols: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl PhoneSet {
    pub fn arpabet() -> Self {
        let mut symbols: Vec<String> = CONSONANTS.iter().map(|s| s.to_string()).collect();
        for v in VOWELS {
            for stress in 0..3 {
                symbols.push(format!("{v}{stress}"));
            }
        }
        symbols.sort();
        symbols.extend(SPECIAL.iter().map(|s| s.to_string()));
        Self::from_symbols(symbols).expect("built-in table is valid")
    }

    pub fn from_symbols(symbols: Vec<String>) -> Result<Self> {
        if symbols.len() != NUM_PHONES as usize {
            return Err(invalid!("phone table needs {NUM_PHONES} symbols, got {}", symbols.len()));
        }
        let mut index = BTreeMap::new();
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() || s.contains(char::is_whitespace) {
                return Err(invalid!("bad phone symbol {s:?} at line {}", i + 1));
            }
            if index.insert(s.clone(), i as u32).is_some() {
                return Err(invalid!("duplicate phone symbol {s}"));
            }
        }
        Ok(Self { symbols, index })
    }

    /// One symbol per line; the line number (from 0) is the id.
    pub fn parse(text: &str) -> Result<Self> {
        Self::from_symbols(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        )
    }

    pub fn to_text(&self) -> String {
        self.symbols.iter().map(|s| format!("{s}\n")).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn id(&self, symbol: &str) -> Option<u32> {
        self.index.get(symbol).copied()
    }

    pub fn symbol(&self, id: u32) -> Option<&str> {
        self.symbols.get(id as usize).map(String::as_str)
    }

    pub fn silence(&self) -> u32 {
        self.id("sil").unwrap_or(NUM_PHONES - 3)
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Phoneme ids for synthesis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeSequence {
    pub ids: Vec<u32>,
    pub text: Option<String>,
}

impl PhonemeSequence {
    pub fn new(ids: Vec<u32>, text: Option<String>) -> Result<Self> {
        if let Some(&bad) = ids.iter().find(|&&p| p >= NUM_PHONES) {
            return Err(invalid!("phoneme id {bad} outside the {NUM_PHONES}-phone table"));
        }
        Ok(Self { ids, text })
    }

    /// Surround the sequence with a silence phoneme.
    pub fn with_edge_silence(mut self, sil: u32) -> Self {
        self.ids.insert(0, sil);
        self.ids.push(sil);
        self
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Word to phoneme mapping over a fixed phone table. Words are stored lowercase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    phones: PhoneSet,
    words: BTreeMap<String, Vec<u32>>,
}

impl Lexicon {
    pub fn new(phones: PhoneSet) -> Self {
        Self {
            phones,
            words: BTreeMap::new(),
        }
    }

    pub fn phones(&self) -> &PhoneSet {
        &self.phones
    }

    pub fn insert(&mut self, word: &str, ids: Vec<u32>) -> Result<()> {
        if ids.is_empty() {
            return Err(invalid!("word {word:?} has no phonemes"));
        }
        if let Some(&bad) = ids.iter().find(|&&p| p as usize >= self.phones.len()) {
            return Err(invalid!("word {word:?} maps to invalid phoneme id {bad}"));
        }
        self.words.insert(word.to_lowercase(), ids);
        Ok(())
    }

    pub fn lookup(&self, word: &str) -> Option<&[u32]> {
        self.words.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    pub fn words(&self) -> impl Iterator<Item = (&String, &Vec<u32>)> {
        self.words.iter()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// `WORD PH1 PH2 ...` per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str, phones: PhoneSet) -> Result<Self> {
        let mut lex = Self::new(phones);
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            let word = fields.next().unwrap_or_default();
            let ids = fields
                .map(|s| {
                    lex.phones
                        .id(s)
                        .ok_or_else(|| invalid!("lexicon line {}: unknown phone {s}", n + 1))
                })
                .collect::<Result<Vec<_>>>()?;
            lex.insert(word, ids)?;
        }
        Ok(lex)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (word, ids) in &self.words {
            out.push_str(word);
            for &p in ids {
                out.push(' ');
                out.push_str(self.phones.symbol(p).unwrap_or("?"));
            }
            out.push('\n');
        }
        out
    }

    pub fn load(lexicon: impl AsRef<Path>, symbols: impl AsRef<Path>) -> Result<Self> {
        let path = lexicon.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, PhoneSet::load(symbols)?)
    }

    pub fn save(&self, lexicon: impl AsRef<Path>, symbols: impl AsRef<Path>) -> Result<()> {
        let path = lexicon.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))?;
        self.phones.save(symbols)
    }
}

/// Lowercase, turn everything but letters, digits and apostrophes into spaces, split.
pub fn normalize_words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '\'' { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(String::from)
        .collect()
}

/// Concatenated lexicon entries of every word. Every unknown word is reported.
pub fn text_to_phonemes(text: &str, lex: &Lexicon) -> Result<PhonemeSequence> {
    let words = normalize_words(text);
    if words.is_empty() {
        return Err(invalid!("text has no words"));
    }
    let mut ids = Vec::new();
    let mut missing = Vec::new();
    for w in &words {
        match lex.lookup(w) {
            Some(p) => ids.extend_from_slice(p),
            None => missing.push(w.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::OutOfVocabulary(missing));
    }
    PhonemeSequence::new(ids, Some(text.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> Lexicon {
        Lexicon::parse("hello HH AH0 L OW1\nworld W ER1 L D\n", PhoneSet::arpabet()).unwrap()
    }

    #[test]
    fn table_has_72_unique_symbols() {
        let p = PhoneSet::arpabet();
        assert_eq!(p.len(), 72);
        assert_eq!(PhoneSet::parse(&p.to_text()).unwrap(), p);
        assert_eq!(p.symbol(p.silence()), Some("sil"));
    }

    #[test]
    fn lookup_and_concatenation() {
        let l = lex();
        let p = l.phones();
        let hello: Vec<u32> = ["HH", "AH0", "L", "OW1"].iter().map(|s| p.id(s).unwrap()).collect();
        let one = text_to_phonemes("Hello", &l).unwrap();
        assert_eq!(one.ids, hello);
        let two = text_to_phonemes("hello, WORLD!", &l).unwrap();
        assert_eq!(&two.ids[..4], &hello[..]);
        assert_eq!(two.ids.len(), 8);
    }

    #[test]
    fn oov_words_are_listed() {
        match text_to_phonemes("hello there big world", &lex()) {
            Err(Error::OutOfVocabulary(w)) => assert_eq!(w, vec!["there", "big"]),
            other => panic!("{other:?}"),
        }
        assert!(text_to_phonemes("  ,. ", &lex()).unwrap_err().is_validation());
    }

    #[test]
    fn lexicon_text_round_trip() {
        let l = lex();
        assert_eq!(Lexicon::parse(&l.to_text(), PhoneSet::arpabet()).unwrap(), l);
        assert!(Lexicon::parse("x QQ", PhoneSet::arpabet()).is_err());
    }
}
