use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{KrausChannel, SuperOperatorMatrix};
use crate::dobrushin::{embed_classical, exp1_matrix};
use crate::error::{Error, Result};
use crate::opalg::DensityOperator;
use crate::rng;

/// Deterministic, seeded recipes for infinite channel sequences. The channel
/// at step `n` is drawn from stream `n` of the seed, so it does not depend on
/// which other steps were generated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeneratedRule {
    /// Each step is depolarizing with probability `depolarizing_rate`
    /// (strength uniform in `[p_min, p_max]`), otherwise a Haar unitary.
    UnitaryDepolarizing {
        depolarizing_rate: f64,
        p_min: f64,
        p_max: f64,
    },
    /// Haar channel with `kraus_count` operators mixed with the completely
    /// depolarizing channel at weight `beta`.
    HaarNoisy { kraus_count: usize, beta: f64 },
    /// Embedded two-state chain that is weakly but not strongly ergodic.
    Exp1,
    /// Replace by `|0><0|` at even steps and by `|1><1|` at odd steps.
    Oscillation,
}

#[derive(Clone, Debug)]
pub enum ScheduleKind {
    Explicit(Vec<KrausChannel>),
    Periodic(Vec<KrausChannel>),
    Generated { seed: u64, rule: GeneratedRule },
}

/// Sequence of channels `Φ_0, Φ_1, ...` on a fixed dimension.
#[derive(Clone, Debug)]
pub struct ProcessSchedule {
    dim: usize,
    kind: ScheduleKind,
}

fn common_dim(list: &[KrausChannel]) -> Result<usize> {
    let first = list
        .first()
        .ok_or_else(|| Error::InvalidParameter("schedule needs at least one channel".into()))?;
    let d = first.dim();
    for ch in list {
        if ch.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: ch.dim() });
        }
    }
    Ok(d)
}

impl ProcessSchedule {
    pub fn explicit(channels: Vec<KrausChannel>) -> Result<Self> {
        let dim = common_dim(&channels)?;
        Ok(ProcessSchedule {
            dim,
            kind: ScheduleKind::Explicit(channels),
        })
    }

    pub fn periodic(channels: Vec<KrausChannel>) -> Result<Self> {
        let dim = common_dim(&channels)?;
        Ok(ProcessSchedule {
            dim,
            kind: ScheduleKind::Periodic(channels),
        })
    }

    pub fn constant(channel: KrausChannel) -> Self {
        ProcessSchedule {
            dim: channel.dim(),
            kind: ScheduleKind::Periodic(vec![channel]),
        }
    }

    pub fn generated(dim: usize, seed: u64, rule: GeneratedRule) -> Result<Self> {
        match &rule {
            GeneratedRule::UnitaryDepolarizing {
                depolarizing_rate,
                p_min,
                p_max,
            } => {
                let ok = (0.0..=1.0).contains(depolarizing_rate) && 0.0 <= *p_min && p_min <= p_max && *p_max <= 1.0;
                if !ok {
                    return Err(Error::InvalidParameter(
                        "unitary-depolarizing needs rate in [0,1] and 0 <= p_min <= p_max <= 1".into(),
                    ));
                }
            }
            GeneratedRule::HaarNoisy { kraus_count, beta } => {
                if *kraus_count == 0 || !(0.0..=1.0).contains(beta) {
                    return Err(Error::InvalidParameter("haar-noisy needs kraus_count >= 1 and beta in [0,1]".into()));
                }
            }
            GeneratedRule::Exp1 | GeneratedRule::Oscillation => {
                if dim != 2 {
                    return Err(Error::InvalidParameter(format!("rule {rule:?} is defined for d = 2 only")));
                }
            }
        }
        if dim == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        Ok(ProcessSchedule {
            dim,
            kind: ScheduleKind::Generated { seed, rule },
        })
    }

    pub fn oscillation() -> Self {
        Self::generated(2, 0, GeneratedRule::Oscillation).expect("valid rule")
    }

    pub fn exp1() -> Self {
        Self::generated(2, 0, GeneratedRule::Exp1).expect("valid rule")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &ScheduleKind {
        &self.kind
    }

    /// Number of channels when finite.
    pub fn len(&self) -> Option<usize> {
        match &self.kind {
            ScheduleKind::Explicit(list) => Some(list.len()),
            _ => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == Some(0)
    }

    pub fn period(&self) -> Option<usize> {
        match &self.kind {
            ScheduleKind::Periodic(list) => Some(list.len()),
            ScheduleKind::Generated {
                rule: GeneratedRule::Oscillation,
                ..
            } => Some(2),
            _ => None,
        }
    }

    /// Index whose channel equals `Φ_n`, used to share per-channel work.
    pub fn canonical_index(&self, n: usize) -> usize {
        match &self.kind {
            ScheduleKind::Periodic(list) => n % list.len(),
            ScheduleKind::Generated {
                rule: GeneratedRule::Oscillation,
                ..
            } => n % 2,
            _ => n,
        }
    }

    /// `Φ_n`.
    pub fn channel(&self, n: usize) -> Result<KrausChannel> {
        match &self.kind {
            ScheduleKind::Explicit(list) => list.get(n).cloned().ok_or(Error::ScheduleExhausted {
                requested: n,
                len: list.len(),
            }),
            ScheduleKind::Periodic(list) => Ok(list[n % list.len()].clone()),
            ScheduleKind::Generated { seed, rule } => generate(self.dim, *seed, rule, n),
        }
    }

    pub fn superoperator(&self, n: usize) -> Result<SuperOperatorMatrix> {
        Ok(self.channel(n)?.to_superoperator())
    }
}

fn generate(d: usize, seed: u64, rule: &GeneratedRule, n: usize) -> Result<KrausChannel> {
    let mut r = rng::stream(seed, n as u64);
    match rule {
        GeneratedRule::UnitaryDepolarizing {
            depolarizing_rate,
            p_min,
            p_max,
        } => {
            let u: f64 = r.random();
            if u < *depolarizing_rate {
                let p = if p_max > p_min { r.random_range(*p_min..=*p_max) } else { *p_min };
                KrausChannel::depolarizing(d, p)
            } else {
                KrausChannel::haar_unitary(d, &mut r)
            }
        }
        GeneratedRule::HaarNoisy { kraus_count, beta } => {
            let base = KrausChannel::haar(d, *kraus_count, &mut r)?;
            base.mix(&KrausChannel::depolarizing(d, 1.0)?, *beta)
        }
        GeneratedRule::Exp1 => embed_classical(&exp1_matrix(n)),
        GeneratedRule::Oscillation => KrausChannel::replace(&DensityOperator::basis(2, n % 2)),
    }
}
