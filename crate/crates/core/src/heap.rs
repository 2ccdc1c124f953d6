//! Allocator tuning for the training and scoring loops.
//!
//! Every graph op allocates a fresh output tensor, many of them above
//! glibc's mmap threshold. Left alone, each one is mapped, faulted in and
//! unmapped again, which costs more time than the arithmetic.

use std::sync::Once;

static TUNE: Once = Once::new();

/// Keep large freed blocks on the heap. Idempotent and cheap after the
/// first call.
pub fn keep_large_blocks() {
    TUNE.call_once(|| {
        #[cfg(all(target_os = "linux", target_env = "gnu"))]
        // SAFETY: mallopt only adjusts allocator parameters.
        unsafe {
            libc::mallopt(libc::M_MMAP_THRESHOLD, 256 << 20);
            libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
        }
    });
}
