//! Deterministic fork-join helper.
//!
//! All internal parallelism in this crate goes through [`map_indexed`]: the
//! closure is a pure function of its index (each worker owns its RNG stream),
//! results are reassembled in index order, so output never depends on how the
//! work was scheduled. The `PARTMC_THREADS` environment variable caps the
//! worker count; it affects speed only, never results.

use std::sync::atomic::{AtomicUsize, Ordering};

/// Worker cap: `PARTMC_THREADS` if set and valid, else available parallelism.
pub fn thread_count() -> usize {
    if let Ok(v) = std::env::var("PARTMC_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                return n;
            }
        }
    }
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Apply `f` to `0..count`, in parallel, returning results in index order.
pub fn map_indexed<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = thread_count().min(count);
    if workers <= 1 {
        return (0..count).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let mut collected: Vec<Vec<(usize, T)>> = Vec::new();
    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(workers);
        for _ in 0..workers {
            let next = &next;
            let f = &f;
            handles.push(scope.spawn(move || {
                let mut out = Vec::new();
                loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= count {
                        break;
                    }
                    out.push((i, f(i)));
                }
                out
            }));
        }
        for h in handles {
            collected.push(h.join().expect("parallel worker panicked"));
        }
    });
    let mut slots: Vec<Option<T>> = (0..count).map(|_| None).collect();
    for chunk in collected {
        for (i, v) in chunk {
            slots[i] = Some(v);
        }
    }
    slots.into_iter().map(|s| s.expect("missing result")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_index_order() {
        let out = map_indexed(100, |i| i * i);
        assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }
}
