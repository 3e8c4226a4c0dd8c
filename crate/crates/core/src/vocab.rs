//! Token inventory and the whitespace/character tokenizer.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

pub const BOS_ID: TokenId = 0;
pub const EOS_ID: TokenId = 1;
pub const UNK_ID: TokenId = 2;

/// Dense, bijective token/id mapping. The three sentinels always occupy ids 0..3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for special in [BOS, EOS, UNK] {
            vocab.insert(special);
        }
        vocab
    }

    /// Rebuilds a vocabulary from its ordered token list, checking the sentinel
    /// layout and uniqueness.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 3 || tokens[0] != BOS || tokens[1] != EOS || tokens[2] != UNK {
            return Err(Error::Config(
                "vocabulary must start with <s>, </s>, <unk>".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id as TokenId).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token `{tok}`")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    /// Returns the id of `token`, adding it if absent.
    pub fn insert(&mut self, token: &str) -> TokenId {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as TokenId;
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), id);
        id
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn is_special(id: TokenId) -> bool {
        id <= UNK_ID
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TokenizeMode {
    #[default]
    Word,
    Character,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub mode: TokenizeMode,
    pub lowercase: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            mode: TokenizeMode::Word,
            lowercase: true,
        }
    }
}

impl TokenizerConfig {
    pub fn character() -> Self {
        TokenizerConfig {
            mode: TokenizeMode::Character,
            lowercase: false,
        }
    }

    /// Splits text into surface tokens without touching a vocabulary.
    pub fn split(&self, text: &str) -> Vec<String> {
        let text = if self.lowercase {
            text.to_lowercase()
        } else {
            text.to_owned()
        };
        match self.mode {
            TokenizeMode::Word => text.split_whitespace().map(str::to_owned).collect(),
            TokenizeMode::Character => text.chars().map(String::from).collect(),
        }
    }

    /// Closed-vocabulary tokenization; unseen tokens map to `<unk>`.
    pub fn tokenize(&self, text: &str, vocab: &Vocabulary) -> Vec<TokenId> {
        self.split(text)
            .iter()
            .map(|t| vocab.id_or_unk(t))
            .collect()
    }

    /// Open-vocabulary tokenization used while building a vocabulary.
    pub fn tokenize_extend(&self, text: &str, vocab: &mut Vocabulary) -> Vec<TokenId> {
        self.split(text).iter().map(|t| vocab.insert(t)).collect()
    }

    pub fn detokenize(&self, ids: &[TokenId], vocab: &Vocabulary) -> String {
        let sep = match self.mode {
            TokenizeMode::Word => " ",
            TokenizeMode::Character => "",
        };
        ids.iter()
            .map(|&id| vocab.token(id).unwrap_or(UNK))
            .collect::<Vec<_>>()
            .join(sep)
    }
}
