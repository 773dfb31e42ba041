//! QoS ladder, expected-QoS matrix, reward sampling and the collision model.
//!
//! Channels are numbered `1..=K`; a choice of `0` means the link is silent.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Channel id used for "not transmitting".
pub const SILENT: usize = 0;

/// The supported QoS ladder and the N×K matrix of expected QoS values.
#[derive(Debug, Clone, PartialEq)]
pub struct QosModel {
    levels: Vec<f64>,
    delta_min: f64,
    q: Vec<f64>,
    n_links: usize,
    n_channels: usize,
}

impl QosModel {
    /// Builds a model from an explicit ladder and matrix (`rows[n][i-1]` is
    /// the expected QoS of link `n` on channel `i`), validating every
    /// structural invariant.
    pub fn new(levels: Vec<f64>, delta_min: f64, rows: Vec<Vec<f64>>) -> Result<Self> {
        if !(delta_min > 0.0) || !delta_min.is_finite() {
            return Err(Error::Config(format!("delta_min must be > 0, got {delta_min}")));
        }
        if levels.len() < 2 {
            return Err(Error::Config(format!(
                "the QoS ladder needs M >= 2 levels, got {}",
                levels.len()
            )));
        }
        for w in levels.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::Config("QoS levels must be strictly increasing".into()));
            }
        }
        for &l in &levels {
            let steps = (l / delta_min).round();
            if steps < 0.0 || !on_grid(l, steps * delta_min) {
                return Err(Error::Config(format!(
                    "QoS level {l} is not a non-negative integer multiple of delta_min = {delta_min}"
                )));
            }
        }
        let n_links = rows.len();
        if n_links == 0 {
            return Err(Error::Config("need at least one link (N >= 1)".into()));
        }
        let n_channels = rows[0].len();
        if rows.iter().any(|r| r.len() != n_channels) {
            return Err(Error::Config("q_matrix rows have unequal lengths".into()));
        }
        if n_channels < n_links {
            return Err(Error::Config(format!(
                "K >= N violated: {n_links} links, {n_channels} channels"
            )));
        }
        for (n, row) in rows.iter().enumerate() {
            for (i, &v) in row.iter().enumerate() {
                if !levels.iter().any(|&l| on_grid(l, v)) {
                    return Err(Error::Config(format!(
                        "q_matrix entry ({}, {}) = {v} is not a ladder level",
                        n + 1,
                        i + 1
                    )));
                }
            }
        }
        Ok(QosModel {
            levels,
            delta_min,
            q: rows.into_iter().flatten().collect(),
            n_links,
            n_channels,
        })
    }

    /// Random instance: each `Q_{n,i}` drawn uniformly from the ladder
    /// `delta_min·{1, …, M}`. Deterministic in `seed`.
    pub fn random(seed: u64, n_links: usize, n_channels: usize, m: usize, delta_min: f64) -> Result<Self> {
        if n_links < 1 {
            return Err(Error::Config("need at least one link (N >= 1)".into()));
        }
        if n_channels < n_links {
            return Err(Error::Config(format!(
                "K >= N violated: {n_links} links, {n_channels} channels"
            )));
        }
        if m < 2 {
            return Err(Error::Config(format!("the QoS ladder needs M >= 2 levels, got {m}")));
        }
        let levels = Self::ladder(m, delta_min);
        let mut rng = stream_rng(seed, Stream::Instance);
        let rows = (0..n_links)
            .map(|_| {
                (0..n_channels)
                    .map(|_| levels[rng.random_range(0..m)])
                    .collect()
            })
            .collect();
        Self::new(levels, delta_min, rows)
    }

    /// The default ladder `delta_min·{1, …, M}`.
    pub fn ladder(m: usize, delta_min: f64) -> Vec<f64> {
        (1..=m).map(|l| l as f64 * delta_min).collect()
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn delta_min(&self) -> f64 {
        self.delta_min
    }

    pub fn delta_max(&self) -> f64 {
        self.q_max() - self.q_min()
    }

    /// Lowest ladder level `Q_1`.
    pub fn q_min(&self) -> f64 {
        self.levels[0]
    }

    /// Highest ladder level `Q_M`.
    pub fn q_max(&self) -> f64 {
        self.levels[self.levels.len() - 1]
    }

    pub fn n_links(&self) -> usize {
        self.n_links
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    /// Expected QoS of `link` (0-based) on `channel` (1-based).
    pub fn mean(&self, link: usize, channel: usize) -> f64 {
        debug_assert!(channel >= 1 && channel <= self.n_channels);
        self.q[link * self.n_channels + channel - 1]
    }

    /// Row of expected QoS values of `link`; index `i` holds channel `i + 1`.
    pub fn row(&self, link: usize) -> &[f64] {
        &self.q[link * self.n_channels..(link + 1) * self.n_channels]
    }

    /// The matrix as nested rows.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_links).map(|n| self.row(n).to_vec()).collect()
    }

    /// Snaps `value` to the nearest multiple of `delta_min`.
    pub fn to_grid(&self, value: f64) -> i64 {
        (value / self.delta_min).round() as i64
    }
}

fn on_grid(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Shape of the instantaneous-QoS distribution around its mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    /// `q ≡ Q_{n,i}`.
    Deterministic,
    /// Uniform on `[Q - h, Q + h]`, `h = min(spread, Q - Q_1, Q_M - Q)`.
    UniformBand,
    /// `Q_1` or `Q_M`, weighted so that the mean is `Q_{n,i}`.
    TwoPoint,
    /// Normal(Q, h/2) truncated symmetrically to `[Q - h, Q + h]`.
    TruncatedBell,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Deterministic => "deterministic",
            SamplerKind::UniformBand => "uniform-band",
            SamplerKind::TwoPoint => "two-point",
            SamplerKind::TruncatedBell => "truncated-bell",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "deterministic" => Some(SamplerKind::Deterministic),
            "uniform-band" => Some(SamplerKind::UniformBand),
            "two-point" => Some(SamplerKind::TwoPoint),
            "truncated-bell" => Some(SamplerKind::TruncatedBell),
            _ => None,
        }
    }
}

/// Per-(link, channel) parameters of the reward distribution.
#[derive(Debug, Clone, Copy)]
struct Cell {
    mean: f64,
    half_width: f64,
    upper_prob: f64,
}

/// Draws `q_{n,i}(t)`: bounded in `[Q_1, Q_M]` with mean exactly `Q_{n,i}`.
///
/// The sampler is stateless; randomness comes from the caller's stream, one
/// per link, so draws are independent across links, channels and slots.
#[derive(Debug, Clone)]
pub struct RewardSampler {
    kind: SamplerKind,
    spread: f64,
    n_channels: usize,
    q_min: f64,
    q_max: f64,
    cells: Vec<Cell>,
}

impl RewardSampler {
    pub fn new(kind: SamplerKind, spread: f64, model: &QosModel) -> Self {
        let (lo, hi) = (model.q_min(), model.q_max());
        let cells = (0..model.n_links())
            .flat_map(|n| model.row(n).to_vec())
            .map(|mean| {
                let half_width = spread.max(0.0).min(mean - lo).min(hi - mean).max(0.0);
                let upper_prob = if hi > lo { ((mean - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
                Cell {
                    mean,
                    half_width,
                    upper_prob,
                }
            })
            .collect();
        RewardSampler {
            kind,
            spread,
            n_channels: model.n_channels(),
            q_min: lo,
            q_max: hi,
            cells,
        }
    }

    pub fn kind(&self) -> SamplerKind {
        self.kind
    }

    pub fn spread(&self) -> f64 {
        self.spread
    }

    /// One draw of link `link` (0-based) on `channel` (1-based).
    pub fn sample<R: Rng + ?Sized>(&self, link: usize, channel: usize, rng: &mut R) -> f64 {
        let c = self.cells[link * self.n_channels + channel - 1];
        let v = match self.kind {
            SamplerKind::Deterministic => c.mean,
            SamplerKind::UniformBand => {
                if c.half_width > 0.0 {
                    c.mean + c.half_width * (2.0 * rng.random::<f64>() - 1.0)
                } else {
                    c.mean
                }
            }
            SamplerKind::TwoPoint => {
                if rng.random::<f64>() < c.upper_prob {
                    self.q_max
                } else {
                    self.q_min
                }
            }
            SamplerKind::TruncatedBell => {
                if c.half_width > 0.0 {
                    let bell = Normal::new(c.mean, c.half_width / 2.0).expect("positive sigma");
                    loop {
                        let x = bell.sample(rng);
                        if (x - c.mean).abs() <= c.half_width {
                            break x;
                        }
                    }
                } else {
                    c.mean
                }
            }
        };
        v.clamp(self.q_min, self.q_max)
    }
}

/// Result of one data slot on the shared medium.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotOutcome {
    /// `occupancy[i - 1]` lists the links transmitting on channel `i`.
    pub occupancy: Vec<Vec<usize>>,
    /// `eta[i - 1]` is 1 when channel `i` is collision-free.
    pub eta: Vec<u8>,
    /// Realized reward of each link.
    pub rewards: Vec<f64>,
}

fn check_choices(choices: &[usize], n_channels: usize) -> Result<()> {
    match choices.iter().position(|&c| c > n_channels) {
        Some(link) => Err(Error::Index {
            link,
            channel: choices[link],
            channels: n_channels,
        }),
        None => Ok(()),
    }
}

/// Per-channel links transmitting on it.
pub fn occupancy(choices: &[usize], n_channels: usize) -> Result<Vec<Vec<usize>>> {
    check_choices(choices, n_channels)?;
    let mut occ = vec![Vec::new(); n_channels];
    for (n, &c) in choices.iter().enumerate() {
        if c != SILENT {
            occ[c - 1].push(n);
        }
    }
    Ok(occ)
}

/// No-collision indicator of every channel: 0 iff two or more links chose it.
pub fn collision_indicator(choices: &[usize], n_channels: usize) -> Result<Vec<u8>> {
    Ok(occupancy(choices, n_channels)?
        .iter()
        .map(|o| u8::from(o.len() <= 1))
        .collect())
}

/// Resolves one data slot: each transmitting link draws its instantaneous QoS
/// from its own reward stream and keeps it only if its channel is collision-free.
///
/// A sample is drawn for every transmitting link, collided or not, so a link's
/// reward stream advances only with its own actions.
pub fn realize_slot<R: Rng>(
    choices: &[usize],
    sampler: &RewardSampler,
    reward_rngs: &mut [R],
) -> Result<SlotOutcome> {
    let n_channels = sampler.n_channels;
    let occupancy = occupancy(choices, n_channels)?;
    let eta: Vec<u8> = occupancy.iter().map(|o| u8::from(o.len() <= 1)).collect();
    let rewards = choices
        .iter()
        .enumerate()
        .map(|(n, &c)| {
            if c == SILENT {
                0.0
            } else {
                let q = sampler.sample(n, c, &mut reward_rngs[n]);
                q * f64::from(eta[c - 1])
            }
        })
        .collect();
    Ok(SlotOutcome {
        occupancy,
        eta,
        rewards,
    })
}
