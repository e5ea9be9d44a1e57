/// Number of output symbols.
pub const VOCAB_SIZE: usize = 32;

pub const APOSTROPHE: usize = 26;
pub const PERIOD: usize = 27;
pub const DASH: usize = 28;
pub const SPACE: usize = 29;
pub const NOISE: usize = 30;
/// End of sequence; also the decoder's start symbol.
pub const EOS: usize = 31;

pub const NOISE_TOKEN: &str = "<noise>";
pub const EOS_TOKEN: &str = "<eos>";

/// The 32-symbol character set: a–z, apostrophe, period, dash, space, noise, eos.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Vocabulary;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("unknown symbol {0:?}")]
    UnknownSymbol(String),
    #[error("symbol index {0} out of range")]
    IndexOutOfRange(usize),
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        VOCAB_SIZE
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn symbol(&self, index: usize) -> Result<&'static str, VocabError> {
        const LETTERS: [&str; 26] = [
            "a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l", "m", "n", "o", "p", "q", "r", "s", "t", "u",
            "v", "w", "x", "y", "z",
        ];
        Ok(match index {
            0..=25 => LETTERS[index],
            APOSTROPHE => "'",
            PERIOD => ".",
            DASH => "-",
            SPACE => " ",
            NOISE => NOISE_TOKEN,
            EOS => EOS_TOKEN,
            _ => return Err(VocabError::IndexOutOfRange(index)),
        })
    }

    /// Index of a single text character (not noise/eos).
    pub fn char_index(&self, c: char) -> Option<usize> {
        match c {
            'a'..='z' => Some(c as usize - 'a' as usize),
            '\'' => Some(APOSTROPHE),
            '.' => Some(PERIOD),
            '-' => Some(DASH),
            ' ' => Some(SPACE),
            _ => None,
        }
    }

    /// Splits text into symbols: `<noise>` and `<eos>` are single symbols, everything else one char each.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>, VocabError> {
        let mut out = Vec::with_capacity(text.len());
        let mut rest = text;
        while let Some(c) = rest.chars().next() {
            if let Some(r) = rest.strip_prefix(NOISE_TOKEN) {
                out.push(NOISE);
                rest = r;
            } else if let Some(r) = rest.strip_prefix(EOS_TOKEN) {
                out.push(EOS);
                rest = r;
            } else {
                out.push(self.char_index(c).ok_or_else(|| VocabError::UnknownSymbol(c.to_string()))?);
                rest = &rest[c.len_utf8()..];
            }
        }
        Ok(out)
    }

    pub fn decode(&self, indices: &[usize]) -> Result<String, VocabError> {
        indices.iter().map(|&i| self.symbol(i)).collect()
    }

    /// Decodes, dropping eos symbols.
    pub fn transcript(&self, indices: &[usize]) -> Result<String, VocabError> {
        indices.iter().filter(|&&i| i != EOS).map(|&i| self.symbol(i)).collect()
    }
}
