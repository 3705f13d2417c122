//! Back-of-the-envelope numbers for the alternatives to replay.

use super::AttackError;

/// Bit period of the air interface: 8 ETU of 1.18 µs.
pub const BIT_PERIOD_SECONDS: f64 = 9.44e-6;

const SECONDS_PER_DAY: f64 = 86_400.0;

/// Days and years needed to try every key of `key_bits` bits at
/// `attempt_seconds` per key.
pub fn estimate_bruteforce(attempt_seconds: f64, key_bits: u32) -> Result<(f64, f64), AttackError> {
    if attempt_seconds.is_nan() || attempt_seconds <= 0.0 || attempt_seconds.is_infinite() {
        return Err(AttackError::InvalidArgument("attempt duration must be positive"));
    }
    if key_bits > 127 {
        return Err(AttackError::InvalidArgument("key too long"));
    }
    let days = (1u128 << key_bits) as f64 * attempt_seconds / SECONDS_PER_DAY;
    Ok((days, days / 365.0))
}

/// Seconds until a nonce generator with `period` states ticking once per bit
/// period comes back to the same nonce.
pub fn reappearance_interval(period: u64) -> f64 {
    period as f64 * BIT_PERIOD_SECONDS
}
