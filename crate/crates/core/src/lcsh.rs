//! Level-crossing sampling with hysteresis.
//!
//! Each sensor tracks the LR level `η·Δ` it last reported and transmits a
//! short burst only when its current LR leaves the band `(ηΔ - Δ, ηΔ + Δ)`.
//! The fusion center mirrors the same state by replaying the bursts.
//!
//! Burst wire format: one sign bit (`1` up, `0` down) followed by the extra
//! crossings `χ - 1` written as a run of `1`s (two crossings each) and an
//! optional trailing `0` (one crossing).

use alloc::string::String;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LcshBurst {
    pub direction: Direction,
    pub crossings: u64,
}

impl LcshBurst {
    pub fn sign(&self) -> i64 {
        match self.direction {
            Direction::Up => 1,
            Direction::Down => -1,
        }
    }

    /// `ceil((χ - 1)/2) + 1`.
    pub fn bit_count(&self) -> u64 {
        self.crossings / 2 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LcshChannelState {
    eta: u64,
    delta: f64,
}

impl LcshChannelState {
    pub fn new(delta: f64) -> Result<Self> {
        Self::with_level(0, delta)
    }

    pub fn with_level(eta: u64, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::invalid("delta", "level spacing must be positive and finite"));
        }
        Ok(Self { eta, delta })
    }

    pub fn eta(&self) -> u64 {
        self.eta
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Sensor side: compares `lr` with the last reported level and emits a
    /// burst when it has moved by at least one spacing.
    pub fn step(&mut self, lr: f64) -> Result<Option<LcshBurst>> {
        if !(lr >= 0.0) {
            return Err(Error::invalid("lr", "likelihood ratios are nonnegative"));
        }
        let diff = lr - self.reconstruct();
        if diff.abs() < self.delta {
            return Ok(None);
        }
        let direction = if diff > 0.0 { Direction::Up } else { Direction::Down };
        // Rounding in the division can land just below an integer.
        let crossings = (libm::floor(diff.abs() / self.delta) as u64).max(1);
        let burst = LcshBurst { direction, crossings };
        self.apply(&burst);
        Ok(Some(burst))
    }

    /// Fusion side: applies a received burst to the mirror state.
    pub fn apply(&mut self, burst: &LcshBurst) {
        match burst.direction {
            Direction::Up => self.eta = self.eta.saturating_add(burst.crossings),
            Direction::Down => {
                debug_assert!(burst.crossings <= self.eta, "level would drop below zero");
                self.eta = self.eta.saturating_sub(burst.crossings);
            }
        }
    }

    /// The fusion center's current view of the sensor LR, `η·Δ`.
    pub fn reconstruct(&self) -> f64 {
        self.eta as f64 * self.delta
    }
}

pub fn lcsh_step(state: &mut LcshChannelState, lr: f64) -> Result<Option<LcshBurst>> {
    state.step(lr)
}

pub fn reconstruct_lr(state: &LcshChannelState) -> f64 {
    state.reconstruct()
}

pub fn encode_burst(burst: &LcshBurst) -> String {
    debug_assert!(burst.crossings >= 1);
    let extra = burst.crossings - 1;
    let mut bits = String::with_capacity(burst.bit_count() as usize);
    bits.push(match burst.direction {
        Direction::Up => '1',
        Direction::Down => '0',
    });
    for _ in 0..extra / 2 {
        bits.push('1');
    }
    if extra % 2 == 1 {
        bits.push('0');
    }
    bits
}

pub fn decode_burst(bits: &str) -> Result<LcshBurst> {
    let malformed = || Error::MalformedBits(bits.into());
    let mut chars = bits.chars();
    let direction = match chars.next() {
        Some('1') => Direction::Up,
        Some('0') => Direction::Down,
        _ => return Err(malformed()),
    };
    let mut crossings = 1u64;
    let mut closed = false;
    for c in chars {
        match (c, closed) {
            ('1', false) => crossings += 2,
            ('0', false) => {
                crossings += 1;
                closed = true;
            }
            _ => return Err(malformed()),
        }
    }
    Ok(LcshBurst { direction, crossings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn up(crossings: u64) -> LcshBurst {
        LcshBurst {
            direction: Direction::Up,
            crossings,
        }
    }

    fn down(crossings: u64) -> LcshBurst {
        LcshBurst {
            direction: Direction::Down,
            crossings,
        }
    }

    #[test]
    fn worked_example() {
        let delta = 0.1;
        let mut s = LcshChannelState::with_level(2, delta).unwrap();
        let burst = lcsh_step(&mut s, 6.4 * delta).unwrap().unwrap();
        assert_eq!(burst, up(4));
        assert_eq!(encode_burst(&burst), "110");
        assert_eq!(burst.bit_count(), 3);
        assert_eq!(s.eta(), 6);
    }

    #[test]
    fn inside_band_is_silent() {
        let mut s = LcshChannelState::with_level(3, 0.25).unwrap();
        assert_eq!(lcsh_step(&mut s, 3.5 * 0.25).unwrap(), None);
        assert_eq!(s.eta(), 3);
    }

    #[test]
    fn single_downward_crossing() {
        let mut s = LcshChannelState::with_level(5, 0.5).unwrap();
        let burst = lcsh_step(&mut s, 3.2 * 0.5).unwrap().unwrap();
        assert_eq!(burst, down(1));
        assert_eq!(burst.bit_count(), 1);
        assert_eq!(s.eta(), 4);
    }

    #[test]
    fn fires_at_exactly_one_spacing() {
        let mut s = LcshChannelState::with_level(2, 0.5).unwrap();
        assert_eq!(s.step(1.5).unwrap(), Some(up(1)));
    }

    #[test]
    fn negative_lr_rejected() {
        let mut s = LcshChannelState::new(0.1).unwrap();
        assert!(s.step(-0.1).is_err());
        assert!(LcshChannelState::new(0.0).is_err());
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode_burst(&up(4)), "110");
        assert_eq!(encode_burst(&down(1)), "0");
        assert_eq!(encode_burst(&up(2)), "10");
        assert_eq!(encode_burst(&down(5)), "011");
    }

    #[test]
    fn decode_examples() {
        assert_eq!(decode_burst("110").unwrap(), up(4));
        assert_eq!(decode_burst("0").unwrap(), down(1));
        for bad in ["", "101", "100", "2", "1x"] {
            assert!(decode_burst(bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn round_trip_and_bit_count() {
        for crossings in 1..=1000 {
            for burst in [up(crossings), down(crossings)] {
                let bits = encode_burst(&burst);
                assert_eq!(bits.len() as u64, burst.bit_count());
                assert_eq!(burst.bit_count(), (crossings - 1).div_ceil(2) + 1);
                assert_eq!(decode_burst(&bits).unwrap(), burst);
            }
        }
    }

    #[test]
    fn reconstruct_examples() {
        let s = LcshChannelState::with_level(6, 0.1).unwrap();
        assert!((reconstruct_lr(&s) - 0.6).abs() < 1e-15);
        assert_eq!(reconstruct_lr(&LcshChannelState::new(0.1).unwrap()), 0.0);
    }

    #[test]
    fn band_property_and_lockstep_decoder() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let delta = 0.3;
        let mut sensor = LcshChannelState::new(delta).unwrap();
        let mut fusion = LcshChannelState::new(delta).unwrap();
        for _ in 0..10_000 {
            let z: f64 = rng.random_range(-2.5..3.5);
            let lr = (z - 0.5).exp();
            if let Some(burst) = sensor.step(lr).unwrap() {
                fusion.apply(&decode_burst(&encode_burst(&burst)).unwrap());
            }
            assert!((sensor.reconstruct() - lr).abs() < delta);
            assert_eq!(sensor, fusion);
        }
    }
}
