use serde::{Deserialize, Serialize};

/// The six treatment stages plus the PAD/BOS/EOS control tokens.
///
/// Token ids are fixed: PAD=0, BOS=1, EOS=2, stages 3..=8 in the order
/// below. Targets store stage tokens only; control tokens are added by the
/// decoder plumbing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct StageVocab;

pub const STAGE_NAMES: [&str; 6] = [
    "Dx",
    "Chemotherapy",
    "Targeted",
    "Hormonal",
    "Radiation",
    "Surgery",
];

impl StageVocab {
    pub const PAD: usize = 0;
    pub const BOS: usize = 1;
    pub const EOS: usize = 2;
    /// Id of the first stage token.
    pub const STAGE_BASE: usize = 3;

    pub fn size(&self) -> usize {
        Self::STAGE_BASE + STAGE_NAMES.len()
    }

    pub fn stage_count(&self) -> usize {
        STAGE_NAMES.len()
    }

    /// Token id of stage index `s` (0-based into [`STAGE_NAMES`]).
    pub fn stage_token(&self, s: usize) -> usize {
        Self::STAGE_BASE + s
    }

    /// Stage index of a token id, if it is a stage token.
    pub fn stage_of_token(&self, token: usize) -> Option<usize> {
        (Self::STAGE_BASE..self.size())
            .contains(&token)
            .then(|| token - Self::STAGE_BASE)
    }

    pub fn name(&self, token: usize) -> &'static str {
        match token {
            Self::PAD => "<pad>",
            Self::BOS => "<bos>",
            Self::EOS => "<eos>",
            t if t < Self::STAGE_BASE + STAGE_NAMES.len() => STAGE_NAMES[t - Self::STAGE_BASE],
            _ => "<unk>",
        }
    }

    pub fn token_of_name(&self, name: &str) -> Option<usize> {
        STAGE_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|s| self.stage_token(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_fixed_and_distinct() {
        let v = StageVocab;
        assert_eq!(v.size(), 9);
        assert_eq!(StageVocab::PAD, 0);
        assert_eq!(StageVocab::BOS, 1);
        assert_eq!(StageVocab::EOS, 2);
        assert_eq!(v.stage_token(0), 3);
        assert_eq!(v.name(3), "Dx");
        assert_eq!(v.name(8), "Surgery");
        assert_eq!(v.token_of_name("Radiation"), Some(7));
        assert_eq!(v.stage_of_token(7), Some(4));
        assert_eq!(v.stage_of_token(2), None);
    }
}
