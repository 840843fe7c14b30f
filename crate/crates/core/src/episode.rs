use std::fmt;
use std::str::FromStr;

/// One teacher turn of a fixed dialog log.
#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub text: String,
    pub labels: Vec<String>,
    pub label_candidates: Option<Vec<String>>,
    pub reward: Option<f64>,
}

impl Turn {
    pub fn new(text: impl Into<String>) -> Self {
        Turn { text: text.into(), labels: Vec::new(), label_candidates: None, reward: None }
    }

    pub fn with_labels<I, S>(mut self, labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.labels = labels.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_candidates<I, S>(mut self, cands: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.label_candidates = Some(cands.into_iter().map(Into::into).collect());
        self
    }
}

/// An ordered, non-empty run of turns. Only the last turn ends the episode.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub turns: Vec<Turn>,
    pub source_task: String,
}

impl Episode {
    pub fn new(source_task: impl Into<String>, turns: Vec<Turn>) -> Self {
        Episode { turns, source_task: source_task.into() }
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Episodes of one task, per split.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawEpisodeSet {
    pub train: Vec<Episode>,
    pub valid: Vec<Episode>,
    pub test: Vec<Episode>,
}

impl RawEpisodeSet {
    pub fn split(&self, split: Split) -> &[Episode] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<Episode> {
        match split {
            Split::Train => &mut self.train,
            Split::Valid => &mut self.valid,
            Split::Test => &mut self.test,
        }
    }
}

/// Which split a teacher streams and whether it streams it in order.
///
/// Valid and test are always ordered; test withholds labels from the
/// emitted messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DataMode {
    split: Split,
    ordered: bool,
}

impl DataMode {
    pub const TRAIN: DataMode = DataMode { split: Split::Train, ordered: false };
    pub const TRAIN_ORDERED: DataMode = DataMode { split: Split::Train, ordered: true };
    pub const VALID: DataMode = DataMode { split: Split::Valid, ordered: true };
    pub const TEST: DataMode = DataMode { split: Split::Test, ordered: true };

    pub fn new(split: Split, ordered: bool) -> Self {
        DataMode { split, ordered: ordered || split != Split::Train }
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn ordered(&self) -> bool {
        self.ordered
    }

    pub fn withholds_labels(&self) -> bool {
        self.split == Split::Test
    }

    /// The same split, streamed in order.
    pub fn as_ordered(self) -> Self {
        DataMode { ordered: true, ..self }
    }
}

impl fmt::Display for DataMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.split == Split::Train && self.ordered {
            f.write_str("train:ordered")
        } else {
            f.write_str(self.split.as_str())
        }
    }
}

impl FromStr for DataMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" | "train:random" => Ok(DataMode::TRAIN),
            "train:ordered" => Ok(DataMode::TRAIN_ORDERED),
            "valid" => Ok(DataMode::VALID),
            "test" => Ok(DataMode::TEST),
            other => Err(format!("unknown data mode {other:?} (expected train, train:ordered, valid or test)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_parse_and_force_order() {
        assert_eq!("valid".parse::<DataMode>().unwrap(), DataMode::VALID);
        assert!(DataMode::new(Split::Test, false).ordered());
        assert!(!DataMode::TRAIN.ordered());
        assert!(DataMode::TEST.withholds_labels());
        assert!("dev".parse::<DataMode>().is_err());
        assert_eq!(DataMode::TRAIN_ORDERED.to_string(), "train:ordered");
    }
}
