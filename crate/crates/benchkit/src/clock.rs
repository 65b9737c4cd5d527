//! Process-wide monotonic clock.
//!
//! Publishers stamp payloads and subscribers compute latency against the same
//! in-process epoch, so readings are comparable across threads without any
//! wall-clock assumptions. Wall-clock time is used only for record metadata.

use std::sync::OnceLock;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

static EPOCH: OnceLock<Instant> = OnceLock::new();

fn epoch() -> Instant {
    *EPOCH.get_or_init(Instant::now)
}

/// Pin the epoch now. Optional; the first reading pins it otherwise.
pub fn init() {
    let _ = epoch();
}

/// Nanoseconds since the process epoch. Monotonic, never zero.
pub fn now_ns() -> u64 {
    epoch().elapsed().as_nanos().max(1) as u64
}

/// Sleep until `deadline_ns` on the process clock; no-op if already past.
pub fn sleep_until_ns(deadline_ns: u64) {
    let now = now_ns();
    if deadline_ns > now {
        std::thread::sleep(Duration::from_nanos(deadline_ns - now));
    }
}

/// Wall-clock nanoseconds since the unix epoch, for record metadata.
pub fn unix_ns() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0)
}
