//! A desk-scale laboratory for transformer-based decoding of short block
//! codes, built from first principles: GF(2) linear algebra, BCH and polar
//! code construction, code-aware attention masks, an AWGN channel with
//! syndrome preprocessing, a small reverse-mode autodiff engine, the decoder
//! models themselves, and a Monte-Carlo evaluation harness.

/// Training and evaluation allocate and free large short-lived tensors on
/// every tape operation; the system allocator returns those pages to the
/// kernel each time, which dominates wall time with page faults. mimalloc
/// keeps them pooled.
#[global_allocator]
static GLOBAL_ALLOCATOR: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// `mi_option_purge_delay` in the bundled mimalloc's option enum (same index
/// in both its v2 and v3 sources); -1 disables purging entirely. Without
/// this, freed pages are decommitted on a 10 ms delay and immediately
/// re-faulted by the next minibatch, costing ~30% of training wall time.
const MI_OPTION_PURGE_DELAY: libmimalloc_sys::mi_option_t = 15;

static ALLOCATOR_TUNED: std::sync::Once = std::sync::Once::new();

/// Keep freed pages pooled for the lifetime of the process. Called at the
/// top of the training and evaluation loops.
pub(crate) fn tune_allocator() {
    ALLOCATOR_TUNED.call_once(|| unsafe {
        libmimalloc_sys::mi_option_set(MI_OPTION_PURGE_DELAY, -1);
    });
}

pub mod autodiff;
pub mod channel;
pub mod codes;
pub mod gf2;
pub mod harness;
pub mod mask;
pub mod model;
pub mod rng;
