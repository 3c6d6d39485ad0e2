//! Catalogue of corruptions applied to a replica's outgoing messages before
//! they are signed.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::message::{Body, Dest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ByzantineMode {
    /// Flips one byte of every payload the node forwards.
    FlipPayloadByte,
    /// As leader, proposes different batches to different replicas.
    EquivocatePropose,
    /// Votes for random digests.
    WrongDigestVote,
    /// Sends nothing.
    Mute,
}

pub const ALL_MODES: [ByzantineMode; 4] = [
    ByzantineMode::FlipPayloadByte,
    ByzantineMode::EquivocatePropose,
    ByzantineMode::WrongDigestVote,
    ByzantineMode::Mute,
];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown corruption mode {0:?} (expected flip-payload-byte, equivocate-propose, wrong-digest-vote or mute)")]
pub struct UnknownMode(pub String);

impl FromStr for ByzantineMode {
    type Err = UnknownMode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "flip-payload-byte" => ByzantineMode::FlipPayloadByte,
            "equivocate-propose" => ByzantineMode::EquivocatePropose,
            "wrong-digest-vote" => ByzantineMode::WrongDigestVote,
            "mute" => ByzantineMode::Mute,
            _ => return Err(UnknownMode(s.to_string())),
        })
    }
}

impl fmt::Display for ByzantineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ByzantineMode::FlipPayloadByte => "flip-payload-byte",
            ByzantineMode::EquivocatePropose => "equivocate-propose",
            ByzantineMode::WrongDigestVote => "wrong-digest-vote",
            ByzantineMode::Mute => "mute",
        })
    }
}

pub fn flip_byte(payload: &mut Vec<u8>) {
    match payload.first_mut() {
        Some(b) => *b ^= 0x01,
        None => payload.push(0xff),
    }
}

/// Corrupts `body` addressed to `dest`. Returns `None` if the message is
/// suppressed.
pub fn corrupt(
    mode: ByzantineMode,
    dest: &Dest,
    mut body: Body,
    rng: &mut dyn RngCore,
) -> Option<Body> {
    match mode {
        ByzantineMode::Mute => return None,
        ByzantineMode::FlipPayloadByte => match &mut body {
            Body::Propose { batch, .. } => batch.iter_mut().for_each(|r| flip_byte(&mut r.payload)),
            Body::Decision(p) => p.batch.iter_mut().for_each(|r| flip_byte(&mut r.payload)),
            _ => {}
        },
        ByzantineMode::EquivocatePropose => {
            if let (Body::Propose { batch, .. }, Dest::Replica(i)) = (&mut body, dest) {
                if i % 2 == 1 {
                    if batch.is_empty() {
                        return None;
                    }
                    batch.remove(0);
                }
            }
        }
        ByzantineMode::WrongDigestVote => {
            if let Body::Write { digest, .. } | Body::Accept { digest, .. } = &mut body {
                rng.fill_bytes(digest);
            }
        }
    }
    Some(body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn modes_parse_and_print() {
        for m in ALL_MODES {
            assert_eq!(m.to_string().parse::<ByzantineMode>(), Ok(m));
        }
        assert!("lie".parse::<ByzantineMode>().is_err());
    }

    #[test]
    fn wrong_digest_changes_votes_only() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let w = Body::Write {
            view: 0,
            slot: 0,
            digest: [0; 32],
        };
        assert_ne!(
            corrupt(
                ByzantineMode::WrongDigestVote,
                &Dest::Replica(1),
                w.clone(),
                &mut rng
            ),
            Some(w)
        );
        let f = Body::Fetch { from: 0 };
        assert_eq!(
            corrupt(
                ByzantineMode::WrongDigestVote,
                &Dest::Replica(1),
                f.clone(),
                &mut rng
            ),
            Some(f)
        );
        assert_eq!(
            corrupt(
                ByzantineMode::Mute,
                &Dest::Replica(1),
                Body::Fetch { from: 0 },
                &mut rng
            ),
            None
        );
    }
}
