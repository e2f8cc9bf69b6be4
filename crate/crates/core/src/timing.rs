// SPDX-License-Identifier: Apache-2.0

use std::time::{Duration, Instant};

const SPIN_BELOW: Duration = Duration::from_micros(100);
const SLEEP_SLACK: Duration = Duration::from_micros(150);

/// Blocks until `deadline`. Short waits spin; longer ones sleep and spin the
/// tail, since sleep granularity alone overshoots by tens of microseconds.
pub fn wait_until(deadline: Instant) {
    let now = Instant::now();
    if deadline <= now {
        return;
    }
    let remaining = deadline - now;
    if remaining > SPIN_BELOW + SLEEP_SLACK {
        std::thread::sleep(remaining - SLEEP_SLACK);
    }
    while Instant::now() < deadline {
        std::hint::spin_loop();
    }
}

/// Blocks for `cost`.
pub fn busy_delay(cost: Duration) {
    if !cost.is_zero() {
        wait_until(Instant::now() + cost);
    }
}

/// Current wall-clock time as fractional Unix seconds.
pub fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delay_is_never_short() {
        for micros in [5u64, 80, 300, 2000] {
            let cost = Duration::from_micros(micros);
            let t0 = Instant::now();
            busy_delay(cost);
            assert!(t0.elapsed() >= cost);
        }
    }
}
