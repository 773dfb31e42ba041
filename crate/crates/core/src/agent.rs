//! One link's protocol state machine.
//!
//! A link explores channels at random and keeps collision-free reward
//! statistics, turns them into dithered estimates, takes part in a CSMA-driven
//! auction whose bids are expressed only through back-off timing, and then
//! transmits on the channel it won. Links never read each other's state; every
//! input arrives as a single-channel observation from the medium.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::medium::{ContentionEntry, ContentionObservation};
use crate::model::SILENT;
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Explore,
    Auction,
    Exploit,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Explore => "explore",
            Phase::Auction => "auction",
            Phase::Exploit => "exploit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Assigned,
    Unassigned,
}

/// Protocol constants every link knows in advance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    pub n_links: usize,
    pub n_channels: usize,
    pub delta_min: f64,
    /// Lowest ladder level `Q_1`.
    pub q_min: f64,
    /// Highest ladder level `Q_M`.
    pub q_max: f64,
    /// Auction bid increment.
    pub eps: f64,
    /// Initial number of back-off quantization bits.
    pub b0: u32,
}

/// Largest supported number of back-off bits.
pub const MAX_BITS: u32 = 52;

impl LinkParams {
    /// Upper end of the back-off mapping; bids at or above it start immediately.
    pub fn cap(&self) -> f64 {
        self.q_max + self.delta_min
    }

    /// Half-width of the dither interval, `Δ_min / 8N`.
    pub fn dither_bound(&self) -> f64 {
        self.delta_min / (8.0 * self.n_links as f64)
    }

    /// Strict upper bound on `eps`, `Δ_min / 4K`.
    pub fn eps_bound(&self) -> f64 {
        self.delta_min / (4.0 * self.n_channels as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_links == 0 || self.n_channels < self.n_links {
            return Err(Error::Config(format!(
                "K >= N >= 1 violated: N = {}, K = {}",
                self.n_links, self.n_channels
            )));
        }
        if !(self.delta_min > 0.0) {
            return Err(Error::Config("delta_min must be > 0".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be > 0, got {}", self.eps)));
        }
        if self.eps >= self.eps_bound() {
            return Err(Error::Config(format!(
                "eps >= Δ_min/4K violated: eps = {}, Δ_min/4K = {}",
                self.eps,
                self.eps_bound()
            )));
        }
        if self.b0 < 1 || self.b0 > MAX_BITS {
            return Err(Error::Config(format!("b0 must lie in [1, {MAX_BITS}], got {}", self.b0)));
        }
        Ok(())
    }
}

/// Maps a bid to a back-off start in `0..=2^bits`: linear and decreasing in
/// the bid, `τ = ⌊2^b (1 − clamp(bid, 0, cap)/cap)⌋`.
pub fn backoff_quantize(bid: f64, bits: u32, cap: f64) -> u64 {
    let window = (1u64 << bits) as f64;
    let frac = 1.0 - bid.clamp(0.0, cap) / cap;
    ((window * frac).floor() as u64).min(1u64 << bits)
}

/// Largest bid that a start at micro-slot `start` can stand for.
pub fn backoff_dequantize(start: u64, bits: u32, cap: f64) -> f64 {
    cap * (1.0 - start as f64 / (1u64 << bits) as f64)
}

/// A bid placed in one auction iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bid {
    pub channel: usize,
    /// Best profit `γ`.
    pub profit: f64,
    /// Second-best profit `w`.
    pub second: f64,
    /// The raised local price of `channel`.
    pub price: f64,
    pub backoff: u64,
}

/// A link's full protocol state.
#[derive(Debug, Clone)]
pub struct LinkState {
    id: usize,
    params: LinkParams,
    phase: Phase,
    packet: u64,
    visits: Vec<u64>,
    sums: Vec<f64>,
    dither: Vec<f64>,
    estimates: Vec<f64>,
    prices: Vec<f64>,
    status: Status,
    my_channel: Option<usize>,
    contended: Option<usize>,
    bits: u32,
    collided: bool,
    withdrawn: bool,
    vote_sensed: bool,
    rng: ChaCha8Rng,
}

impl LinkState {
    /// Creates link `id` with zeroed statistics and its dither drawn once,
    /// uniformly on `[−Δ_min/8N, Δ_min/8N]`, from the link's own stream.
    pub fn new(id: usize, params: LinkParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let mut rng = stream_rng(seed, Stream::Link(id));
        let bound = params.dither_bound();
        let dither: Vec<f64> = (0..params.n_channels)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let k = params.n_channels;
        Ok(LinkState {
            id,
            params,
            phase: Phase::Explore,
            packet: 0,
            visits: vec![0; k],
            sums: vec![0.0; k],
            estimates: dither.iter().map(|u| params.q_min + u).collect(),
            dither,
            prices: vec![0.0; k],
            status: Status::Unassigned,
            my_channel: None,
            contended: None,
            bits: params.b0,
            collided: false,
            withdrawn: false,
            vote_sensed: false,
            rng,
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }
    pub fn params(&self) -> &LinkParams {
        &self.params
    }
    pub fn phase(&self) -> Phase {
        self.phase
    }
    pub fn packet(&self) -> u64 {
        self.packet
    }
    pub fn status(&self) -> Status {
        self.status
    }
    pub fn my_channel(&self) -> Option<usize> {
        self.my_channel
    }
    /// Back-off bits `b(k)` in use for the current packet.
    pub fn bits(&self) -> u32 {
        self.bits
    }
    /// Per-channel collision-free sample counts; index `i` is channel `i + 1`.
    pub fn visits(&self) -> &[u64] {
        &self.visits
    }
    pub fn sums(&self) -> &[f64] {
        &self.sums
    }
    pub fn dither(&self) -> &[f64] {
        &self.dither
    }
    /// Dithered estimates of the current packet.
    pub fn estimates(&self) -> &[f64] {
        &self.estimates
    }
    /// Local price vector.
    pub fn prices(&self) -> &[f64] {
        &self.prices
    }
    /// Whether this link sensed a vote during the current auction.
    pub fn vote_sensed(&self) -> bool {
        self.vote_sensed
    }

    fn require(&self, phase: Phase, op: &'static str) -> Result<()> {
        if self.phase == phase {
            Ok(())
        } else {
            Err(Error::Phase {
                op,
                phase: self.phase.name(),
            })
        }
    }

    pub fn begin_exploration(&mut self, packet: u64) {
        self.phase = Phase::Explore;
        self.packet = packet;
    }

    /// Picks a channel uniformly from `1..=K`.
    pub fn explore_choose(&mut self) -> Result<usize> {
        self.require(Phase::Explore, "explore_choose")?;
        Ok(self.rng.random_range(1..=self.params.n_channels))
    }

    /// Accumulates one exploration sample; a collided slot (`eta = 0`, reward 0)
    /// leaves the statistics unchanged.
    pub fn explore_observe(&mut self, channel: usize, reward: f64, eta: u8) -> Result<()> {
        self.require(Phase::Explore, "explore_observe")?;
        if channel == SILENT {
            return Ok(());
        }
        self.visits[channel - 1] += u64::from(eta);
        self.sums[channel - 1] += reward;
        Ok(())
    }

    /// Turns the accumulated statistics into dithered estimates. A channel
    /// never observed collision-free is estimated at the ladder minimum.
    pub fn finalize_estimates(&mut self) {
        for i in 0..self.params.n_channels {
            let mean = if self.visits[i] > 0 {
                self.sums[i] / self.visits[i] as f64
            } else {
                self.params.q_min
            };
            self.estimates[i] = mean + self.dither[i];
        }
    }

    /// Replaces the estimates with known means plus this link's dither.
    pub fn load_estimates(&mut self, means: &[f64]) {
        assert_eq!(means.len(), self.params.n_channels);
        for (e, (m, u)) in self.estimates.iter_mut().zip(means.iter().zip(&self.dither)) {
            *e = m + u;
        }
    }

    /// Starts an auction: unassigned, all local prices zero.
    pub fn begin_auction(&mut self) {
        self.phase = Phase::Auction;
        self.status = Status::Unassigned;
        self.prices.iter_mut().for_each(|p| *p = 0.0);
        self.my_channel = None;
        self.contended = None;
        self.collided = false;
        self.withdrawn = false;
        self.vote_sensed = false;
    }

    /// Profit `q_hat_i − B_i` of channel `i` (1-based).
    pub fn profit(&self, channel: usize) -> f64 {
        self.estimates[channel - 1] - self.prices[channel - 1]
    }

    /// Best and second-best profit with the best channel (lowest index on ties).
    fn best_two(&self) -> (usize, f64, f64) {
        let mut best = 1;
        let mut gamma = self.profit(1);
        for i in 2..=self.params.n_channels {
            let p = self.profit(i);
            if p > gamma {
                gamma = p;
                best = i;
            }
        }
        let second = (1..=self.params.n_channels)
            .filter(|&i| i != best)
            .map(|i| self.profit(i))
            .fold(None, |acc: Option<f64>, p| Some(acc.map_or(p, |a| a.max(p))))
            // single channel: a floor below every profit
            .unwrap_or_else(|| (-self.params.cap()).min(gamma));
        (best, gamma, second)
    }

    /// Bids for the most profitable channel: raises its local price by
    /// `γ − w + ε` and converts the new price into a back-off.
    pub fn auction_bid(&mut self) -> Result<Bid> {
        self.require(Phase::Auction, "auction_bid")?;
        if self.status != Status::Unassigned {
            return Err(Error::Protocol(format!("link {} bids while assigned", self.id)));
        }
        let (channel, profit, second) = self.best_two();
        self.prices[channel - 1] += profit - second + self.params.eps;
        let price = self.prices[channel - 1];
        self.contended = Some(channel);
        Ok(Bid {
            channel,
            profit,
            second,
            price,
            backoff: backoff_quantize(price, self.bits, self.params.cap()),
        })
    }

    /// This link's entry in the next contention window: a fresh bid when
    /// unassigned, otherwise a defence of the held channel at its standing price.
    ///
    /// Every bid at or above the back-off cap maps to start 0, so it cannot be
    /// told apart from other saturated bids. Prices only get there when links
    /// keep colliding in one cell, so instead of placing such a bid the link
    /// withdraws for the rest of this auction (`None`) and raises the
    /// collision vote once, so the next packet gets a finer back-off. A
    /// single-channel link is exempt: its `−cap` second-best floor bids the
    /// whole range on purpose, and with `N ≤ K` it has no rival.
    pub fn contend(&mut self) -> Result<Option<(ContentionEntry, Option<Bid>)>> {
        self.require(Phase::Auction, "contend")?;
        if self.withdrawn {
            return Ok(None);
        }
        if self.status == Status::Unassigned && self.params.n_channels > 1 {
            let (channel, profit, second) = self.best_two();
            if self.prices[channel - 1] + profit - second + self.params.eps >= self.params.cap() {
                self.withdrawn = true;
                self.collided = true;
                self.my_channel = None;
                return Ok(None);
            }
        }
        Ok(Some(match (self.status, self.my_channel) {
            (Status::Assigned, Some(channel)) => {
                self.contended = Some(channel);
                let backoff = backoff_quantize(self.prices[channel - 1], self.bits, self.params.cap());
                (
                    ContentionEntry {
                        link: self.id,
                        channel,
                        backoff,
                    },
                    None,
                )
            }
            _ => {
                let bid = self.auction_bid()?;
                (
                    ContentionEntry {
                        link: self.id,
                        channel: bid.channel,
                        backoff: bid.backoff,
                    },
                    Some(bid),
                )
            }
        }))
    }

    /// Whether this link gave up bidding in the current auction.
    pub fn withdrawn(&self) -> bool {
        self.withdrawn
    }

    /// Applies what the link sensed on its contended channel.
    pub fn auction_observe(&mut self, obs: ContentionObservation) -> Result<()> {
        self.require(Phase::Auction, "auction_observe")?;
        let Some(channel) = self.contended.take() else {
            return Ok(());
        };
        match obs {
            ContentionObservation::Won => {
                self.status = Status::Assigned;
                self.my_channel = Some(channel);
            }
            ContentionObservation::Lost { winner_start } => {
                self.status = Status::Unassigned;
                self.my_channel = None;
                let inferred = backoff_dequantize(winner_start, self.bits, self.params.cap());
                let p = &mut self.prices[channel - 1];
                *p = p.max(inferred);
            }
            ContentionObservation::Collision => {
                // someone else bid into the same cell: treat the shared start as
                // a winner's start, like a loss. Keeping the own bid instead would
                // make the next bid exactly `B + 2ε` regardless of the dither, so
                // distinct links could tie.
                self.status = Status::Unassigned;
                self.my_channel = None;
                self.collided = true;
                let cap = self.params.cap();
                let p = &mut self.prices[channel - 1];
                let start = backoff_quantize(*p, self.bits, cap);
                *p = p.max(backoff_dequantize(start, self.bits, cap));
            }
            ContentionObservation::Idle => {}
        }
        Ok(())
    }

    /// Voting slot: transmit on channel 1 iff this link's last access collided.
    pub fn vote(&self) -> bool {
        self.collided
    }

    /// Result sensed on channel 1 in the voting slot.
    pub fn observe_vote(&mut self, sensed: bool) {
        self.collided = false;
        self.vote_sensed |= sensed;
    }

    pub fn begin_exploitation(&mut self) {
        self.phase = Phase::Exploit;
    }

    /// Channel to use in the exploitation phase; silent when unassigned.
    pub fn exploit_action(&self) -> Result<usize> {
        self.require(Phase::Exploit, "exploit_action")?;
        Ok(match self.status {
            Status::Assigned => self.my_channel.unwrap_or(SILENT),
            Status::Unassigned => SILENT,
        })
    }

    /// Closes the packet: one more back-off bit if any vote was sensed.
    pub fn end_packet(&mut self) {
        if self.vote_sensed && self.bits < MAX_BITS {
            self.bits += 1;
        }
        self.vote_sensed = false;
    }

    /// How far the held channel's profit falls short of the best profit
    /// (`None` when unassigned).
    pub fn slackness_gap(&self) -> Option<f64> {
        let ch = self.my_channel?;
        let best = (1..=self.params.n_channels)
            .map(|i| self.profit(i))
            .fold(f64::NEG_INFINITY, f64::max);
        Some(best - self.profit(ch))
    }

    #[cfg(test)]
    pub(crate) fn set_estimates_raw(&mut self, estimates: Vec<f64>) {
        self.estimates = estimates;
    }

    #[cfg(test)]
    pub(crate) fn set_prices_raw(&mut self, prices: Vec<f64>) {
        self.prices = prices;
    }
}
