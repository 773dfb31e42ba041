//! The shared radio medium.
//!
//! The medium sees every link's action and hands each link back only what it
//! could sense on the single channel it used: whether that channel was busy,
//! whether its own transmission collided, and when the first contender on it
//! started. It never reveals link identities or activity on other channels.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{realize_slot, RewardSampler, SlotOutcome, SILENT};
use crate::rng::{stream_rng, Stream};

/// What a link does in a data slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Transmit(usize),
    /// Stay silent but listen on a channel.
    Sense(usize),
    Idle,
}

impl Action {
    /// The channel transmitted on, `0` if none.
    pub fn choice(self) -> usize {
        match self {
            Action::Transmit(c) => c,
            _ => SILENT,
        }
    }
}

/// What link `n` perceives after a data slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotObservation {
    /// Channel used or sensed, `0` for idle.
    pub channel: usize,
    /// No-collision indicator of that channel (1 when idle).
    pub eta: u8,
    /// Whether any link transmitted on it.
    pub busy: bool,
    pub reward: f64,
}

/// One contender in a contention window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContentionEntry {
    pub link: usize,
    pub channel: usize,
    /// Back-off in micro-slots, `0..=2^b`.
    pub backoff: u64,
}

/// Outcome of a contention window on one channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelContention {
    Idle,
    Won { link: usize, start: u64 },
    /// Two or more contenders share the earliest start.
    Collision { start: u64 },
}

/// What a link perceives on the channel it contended for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContentionObservation {
    /// It accessed the channel strictly before everyone else.
    Won,
    /// Someone started earlier, at micro-slot `winner_start`.
    Lost { winner_start: u64 },
    /// Its transmission overlapped another one starting in the same micro-slot.
    Collision,
    /// It did not contend.
    Idle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContentionResult {
    /// `channels[i - 1]` is the outcome on channel `i`.
    pub channels: Vec<ChannelContention>,
    pub observations: Vec<ContentionObservation>,
}

/// Resolves one contention window of `2^bits` micro-slots: on every channel the
/// earliest contender wins; a tie at the earliest start is a quantization collision.
pub fn resolve_contention(
    entries: &[ContentionEntry],
    n_links: usize,
    n_channels: usize,
    bits: u32,
) -> Result<ContentionResult> {
    let window = 1u64 << bits;
    let mut earliest: Vec<Option<(u64, usize, usize)>> = vec![None; n_channels];
    let mut entered = vec![false; n_links];
    for e in entries {
        if e.channel == SILENT || e.channel > n_channels {
            return Err(Error::Protocol(format!(
                "link {} contends on invalid channel {}",
                e.link, e.channel
            )));
        }
        if e.backoff > window {
            return Err(Error::Protocol(format!(
                "back-off {} outside the window [0, {window}]",
                e.backoff
            )));
        }
        if e.link >= n_links || std::mem::replace(&mut entered[e.link], true) {
            return Err(Error::Protocol(format!("link {} contends twice or does not exist", e.link)));
        }
        let slot = &mut earliest[e.channel - 1];
        *slot = match *slot {
            None => Some((e.backoff, e.link, 1)),
            Some((start, link, count)) if e.backoff == start => Some((start, link, count + 1)),
            Some((start, ..)) if e.backoff < start => Some((e.backoff, e.link, 1)),
            keep => keep,
        };
    }
    let channels: Vec<ChannelContention> = earliest
        .iter()
        .map(|s| match *s {
            None => ChannelContention::Idle,
            Some((start, link, 1)) => ChannelContention::Won { link, start },
            Some((start, ..)) => ChannelContention::Collision { start },
        })
        .collect();
    let mut observations = vec![ContentionObservation::Idle; n_links];
    for e in entries {
        observations[e.link] = match channels[e.channel - 1] {
            ChannelContention::Won { link, .. } if link == e.link => ContentionObservation::Won,
            ChannelContention::Won { start, .. } => ContentionObservation::Lost { winner_start: start },
            ChannelContention::Collision { start } if start == e.backoff => ContentionObservation::Collision,
            ChannelContention::Collision { start } => ContentionObservation::Lost { winner_start: start },
            ChannelContention::Idle => unreachable!("a contended channel is never idle"),
        };
    }
    Ok(ContentionResult {
        channels,
        observations,
    })
}

/// The voting slot: every link listens on channel 1, so the result is one bit,
/// set iff anybody transmitted there.
pub fn resolve_voting(transmitting: &[bool]) -> bool {
    transmitting.iter().any(|&t| t)
}

/// Data-slot resolution with each link's reward stream.
#[derive(Debug, Clone)]
pub struct Medium {
    sampler: RewardSampler,
    reward_rngs: Vec<ChaCha8Rng>,
    n_channels: usize,
}

impl Medium {
    pub fn new(sampler: RewardSampler, n_links: usize, n_channels: usize, seed: u64) -> Self {
        Medium {
            sampler,
            reward_rngs: (0..n_links).map(|n| stream_rng(seed, Stream::Reward(n))).collect(),
            n_channels,
        }
    }

    pub fn n_links(&self) -> usize {
        self.reward_rngs.len()
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn sampler(&self) -> &RewardSampler {
        &self.sampler
    }

    /// Resolves a data slot (collisions and rewards) and derives each link's
    /// single-channel observation.
    pub fn resolve_data_slot(&mut self, actions: &[Action]) -> Result<(SlotOutcome, Vec<SlotObservation>)> {
        let choices: Vec<usize> = actions.iter().map(|a| a.choice()).collect();
        for (n, a) in actions.iter().enumerate() {
            if let Action::Sense(c) = *a {
                if c == SILENT || c > self.n_channels {
                    return Err(Error::Index {
                        link: n,
                        channel: c,
                        channels: self.n_channels,
                    });
                }
            }
        }
        let outcome = realize_slot(&choices, &self.sampler, &mut self.reward_rngs)?;
        let observations = actions
            .iter()
            .enumerate()
            .map(|(n, a)| match *a {
                Action::Transmit(c) => SlotObservation {
                    channel: c,
                    eta: outcome.eta[c - 1],
                    busy: true,
                    reward: outcome.rewards[n],
                },
                Action::Sense(c) => SlotObservation {
                    channel: c,
                    eta: outcome.eta[c - 1],
                    busy: !outcome.occupancy[c - 1].is_empty(),
                    reward: 0.0,
                },
                Action::Idle => SlotObservation {
                    channel: SILENT,
                    eta: 1,
                    busy: false,
                    reward: 0.0,
                },
            })
            .collect();
        Ok((outcome, observations))
    }

    /// Data part of a CSMA frame that follows a contention window: every link
    /// that accessed a channel first transmits on it, including the overlapping
    /// transmissions of a quantization collision.
    pub fn resolve_frame_data(
        &mut self,
        entries: &[ContentionEntry],
        result: &ContentionResult,
    ) -> Result<(SlotOutcome, Vec<SlotObservation>)> {
        let mut actions = vec![Action::Idle; self.n_links()];
        for e in entries {
            match result.observations[e.link] {
                ContentionObservation::Won | ContentionObservation::Collision => {
                    actions[e.link] = Action::Transmit(e.channel)
                }
                _ => {}
            }
        }
        self.resolve_data_slot(&actions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{QosModel, SamplerKind};

    fn entry(link: usize, channel: usize, backoff: u64) -> ContentionEntry {
        ContentionEntry { link, channel, backoff }
    }

    #[test]
    fn strict_order_winner() {
        let r = resolve_contention(&[entry(0, 2, 3), entry(1, 2, 7)], 2, 3, 3).unwrap();
        assert_eq!(r.channels[1], ChannelContention::Won { link: 0, start: 3 });
        assert_eq!(r.observations[0], ContentionObservation::Won);
        assert_eq!(r.observations[1], ContentionObservation::Lost { winner_start: 3 });
        assert_eq!(r.channels[0], ChannelContention::Idle);
    }

    #[test]
    fn equal_backoff_is_a_collision() {
        let r = resolve_contention(&[entry(0, 2, 3), entry(1, 2, 3)], 2, 2, 3).unwrap();
        assert_eq!(r.channels[1], ChannelContention::Collision { start: 3 });
        assert_eq!(r.observations, vec![ContentionObservation::Collision; 2]);
    }

    #[test]
    fn later_contender_loses_to_a_collision() {
        let r = resolve_contention(&[entry(0, 1, 2), entry(1, 1, 2), entry(2, 1, 5)], 3, 3, 3).unwrap();
        assert_eq!(r.observations[2], ContentionObservation::Lost { winner_start: 2 });
    }

    #[test]
    fn disjoint_channels_all_win() {
        let r = resolve_contention(&[entry(0, 1, 8), entry(1, 2, 0), entry(2, 3, 4)], 4, 3, 3).unwrap();
        assert!(r.observations[..3].iter().all(|o| *o == ContentionObservation::Won));
        assert_eq!(r.observations[3], ContentionObservation::Idle);
    }

    #[test]
    fn protocol_errors() {
        assert!(matches!(
            resolve_contention(&[entry(0, 1, 9)], 1, 1, 3),
            Err(Error::Protocol(_))
        ));
        assert!(resolve_contention(&[entry(0, 1, 1), entry(0, 1, 2)], 1, 1, 3).is_err());
        assert!(resolve_contention(&[entry(0, 2, 1)], 1, 1, 3).is_err());
    }

    #[test]
    fn voting_is_binary() {
        assert!(!resolve_voting(&[false, false]));
        assert!(resolve_voting(&[false, true]));
        assert!(resolve_voting(&[true, true, true]));
    }

    fn medium() -> Medium {
        let m = QosModel::new(vec![1.0, 2.0, 3.0, 4.0], 1.0, vec![vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 1.0], vec![3.0, 3.0, 3.0]])
            .unwrap();
        Medium::new(RewardSampler::new(SamplerKind::Deterministic, 0.0, &m), 3, 3, 1)
    }

    #[test]
    fn data_slot_observations() {
        let mut med = medium();
        let (_, obs) = med
            .resolve_data_slot(&[Action::Transmit(1), Action::Transmit(1), Action::Idle])
            .unwrap();
        assert_eq!((obs[0].eta, obs[1].eta), (0, 0));
        let (_, obs) = med
            .resolve_data_slot(&[Action::Transmit(1), Action::Transmit(2), Action::Idle])
            .unwrap();
        assert_eq!((obs[0].eta, obs[1].eta), (1, 1));
        assert_eq!((obs[0].reward, obs[1].reward), (1.0, 4.0));
        let (_, obs) = med
            .resolve_data_slot(&[Action::Idle, Action::Transmit(3), Action::Sense(3)])
            .unwrap();
        assert!(obs[2].busy);
        assert_eq!(obs[2].reward, 0.0);
    }
}
