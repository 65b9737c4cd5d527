//! Thread-spawn helper with small stacks.
//!
//! A matrix cell runs hundreds of OS threads (one per publisher session plus
//! four relay threads per proxied connection). Default 8 MiB stacks are
//! wasteful at that count, so every internal thread gets a fixed small stack.

use std::io;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

const STACK_BYTES: usize = 512 * 1024;

pub(crate) fn spawn<F>(name: &str, f: F) -> io::Result<JoinHandle<()>>
where
    F: FnOnce() + Send + 'static,
{
    thread::Builder::new()
        .name(name.to_owned())
        .stack_size(STACK_BYTES)
        .spawn(f)
}

/// Poll `counter` until it reaches zero or `timeout` expires. Used by
/// shutdown paths to wait for detached worker threads.
pub(crate) fn await_zero(counter: &AtomicUsize, timeout: Duration) {
    let deadline = Instant::now() + timeout;
    while counter.load(Ordering::SeqCst) != 0 && Instant::now() < deadline {
        thread::sleep(Duration::from_millis(2));
    }
}
