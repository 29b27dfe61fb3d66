use std::collections::HashMap;

use serde::de::Error as _;
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{Result, TaskError};

pub const PAD: &str = "PAD";
pub const GO: &str = "GO";
pub const SEP: &str = "%";
pub const END: &str = "∅";

pub const PAD_ID: usize = 0;
pub const GO_ID: usize = 1;
pub const SEP_ID: usize = 2;
pub const END_ID: usize = 3;

/// Reserved tokens, in id order. Every vocabulary starts with these.
pub const SPECIALS: [&str; 4] = [PAD, GO, SEP, END];

/// Dense token <-> id map with the reserved tokens at ids 0..4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for s in SPECIALS {
            v.add(s);
        }
        v
    }

    pub fn with_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::new();
        for t in tokens {
            v.add(t.as_ref());
        }
        v
    }

    /// Id of `token`, adding it if new.
    pub fn add(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), self.tokens.len() - 1);
        self.tokens.len() - 1
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<usize>> {
        tokens
            .iter()
            .map(|t| {
                self.id(t.as_ref())
                    .ok_or_else(|| TaskError::UnknownToken(t.as_ref().to_string()))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Result<Vec<String>> {
        ids.iter()
            .map(|&i| {
                self.token(i).map(str::to_string).ok_or(TaskError::UnknownId {
                    id: i,
                    size: self.len(),
                })
            })
            .collect()
    }

    fn from_map(map: HashMap<String, usize>) -> std::result::Result<Self, String> {
        let mut tokens = vec![None; map.len()];
        for (tok, id) in &map {
            match tokens.get_mut(*id) {
                Some(slot @ None) => *slot = Some(tok.clone()),
                Some(Some(other)) => return Err(format!("id {id} assigned to both `{other}` and `{tok}`")),
                None => return Err(format!("id {id} of `{tok}` is not dense (size {})", map.len())),
            }
        }
        let tokens: Vec<String> = tokens.into_iter().map(|t| t.expect("dense ids")).collect();
        for (id, s) in SPECIALS.iter().enumerate() {
            if tokens.get(id).map(String::as_str) != Some(*s) {
                return Err(format!("reserved token `{s}` must have id {id}"));
            }
        }
        Ok(Self { index: map, tokens })
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.tokens.len()))?;
        for (id, tok) in self.tokens.iter().enumerate() {
            map.serialize_entry(tok, &id)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let map = HashMap::<String, usize>::deserialize(deserializer)?;
        Vocabulary::from_map(map).map_err(D::Error::custom)
    }
}

/// Input and output vocabularies of one task, as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabFile {
    pub input: Vocabulary,
    pub output: Vocabulary,
    pub special: Vec<String>,
}

impl VocabFile {
    pub fn new(input: Vocabulary, output: Vocabulary) -> Self {
        Self {
            input,
            output,
            special: SPECIALS.iter().map(|s| s.to_string()).collect(),
        }
    }
}
