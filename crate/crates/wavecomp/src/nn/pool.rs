//! Recycling pool for large tensor buffers.
//!
//! Fresh multi-megabyte allocations go through mmap and fault in a page at a
//! time, which measures an order of magnitude slower than writing warm
//! memory on this class of machine. Dropped tensors above a size threshold
//! park their storage here and later allocations of a fitting size reuse it.
//! Values are always re-zeroed on the way out, so pooling is invisible to
//! callers.

use std::sync::Mutex;

/// Buffers below this many elements are not worth recycling.
const MIN_POOLED_LEN: usize = 32 * 1024;
/// Keep at most this many parked buffers.
const MAX_POOLED: usize = 24;

static POOL: Mutex<Vec<Vec<f64>>> = Mutex::new(Vec::new());

/// A zeroed buffer of exactly `len` elements, reusing parked storage when a
/// fit exists (smallest sufficient capacity wins).
pub(crate) fn take_zeroed(len: usize) -> Vec<f64> {
    if len >= MIN_POOLED_LEN {
        let reused = {
            let mut pool = POOL.lock().unwrap();
            let best = pool
                .iter()
                .enumerate()
                .filter(|(_, b)| b.capacity() >= len)
                .min_by_key(|(_, b)| b.capacity())
                .map(|(i, _)| i);
            best.map(|i| pool.swap_remove(i))
        };
        if let Some(mut buf) = reused {
            buf.clear();
            buf.resize(len, 0.0);
            return buf;
        }
    }
    vec![0.0; len]
}

pub(crate) fn give_back(buf: Vec<f64>) {
    if buf.capacity() >= MIN_POOLED_LEN {
        let mut pool = POOL.lock().unwrap();
        if pool.len() < MAX_POOLED {
            pool.push(buf);
        }
    }
}

static INDEX_POOL: Mutex<Vec<Vec<usize>>> = Mutex::new(Vec::new());

pub(crate) fn take_zeroed_indices(len: usize) -> Vec<usize> {
    if len >= MIN_POOLED_LEN {
        let reused = {
            let mut pool = INDEX_POOL.lock().unwrap();
            let best = pool
                .iter()
                .enumerate()
                .filter(|(_, b)| b.capacity() >= len)
                .min_by_key(|(_, b)| b.capacity())
                .map(|(i, _)| i);
            best.map(|i| pool.swap_remove(i))
        };
        if let Some(mut buf) = reused {
            buf.clear();
            buf.resize(len, 0);
            return buf;
        }
    }
    vec![0; len]
}

pub(crate) fn give_back_indices(buf: Vec<usize>) {
    if buf.capacity() >= MIN_POOLED_LEN {
        let mut pool = INDEX_POOL.lock().unwrap();
        if pool.len() < MAX_POOLED {
            pool.push(buf);
        }
    }
}
