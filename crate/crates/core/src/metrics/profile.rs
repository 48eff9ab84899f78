use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);
static ACTIVE: AtomicBool = AtomicBool::new(false);

/// Allocator wrapper that tracks live and peak heap bytes. Install it in a
/// binary with `#[global_allocator]` to get allocation-accounted peaks from
/// [`profile`]; otherwise the resident-set high-water mark is used.
pub struct CountingAlloc;

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            grow(layout.size());
        }
        p
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc_zeroed(layout) };
        if !p.is_null() {
            grow(layout.size());
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = unsafe { System.realloc(ptr, layout, new_size) };
        if !p.is_null() {
            if new_size >= layout.size() {
                grow(new_size - layout.size());
            } else {
                CURRENT.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

fn grow(bytes: usize) {
    ACTIVE.store(true, Ordering::Relaxed);
    let now = CURRENT.fetch_add(bytes, Ordering::Relaxed) + bytes;
    PEAK.fetch_max(now, Ordering::Relaxed);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryProbe {
    /// Heap bytes counted by [`CountingAlloc`], relative to the start of the run.
    Alloc,
    /// Process peak resident set size.
    Rss,
}

#[derive(Debug, Clone)]
pub struct Profiled<T> {
    pub wall_seconds: f64,
    pub peak_bytes: u64,
    pub probe: MemoryProbe,
    pub result: T,
}

fn peak_rss() -> u64 {
    std::fs::read_to_string("/proc/self/status")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("VmHWM:"))
                .and_then(|l| l.split_whitespace().nth(1).and_then(|kb| kb.parse::<u64>().ok()))
        })
        .map_or(0, |kb| kb * 1024)
}

/// Runs `f`, measuring wall time on a monotonic clock and peak memory.
///
/// Allocation accounting is process-wide, so concurrent work on other
/// threads counts toward the peak.
pub fn profile<T>(f: impl FnOnce() -> T) -> Profiled<T> {
    let counting = ACTIVE.load(Ordering::Relaxed);
    let base = CURRENT.load(Ordering::Relaxed);
    if counting {
        PEAK.store(base, Ordering::Relaxed);
    }
    let start = Instant::now();
    let result = f();
    let wall_seconds = start.elapsed().as_secs_f64();
    let (peak_bytes, probe) = if counting {
        let peak = PEAK.load(Ordering::Relaxed).saturating_sub(base);
        (peak as u64, MemoryProbe::Alloc)
    } else {
        (peak_rss(), MemoryProbe::Rss)
    };
    Profiled {
        wall_seconds,
        peak_bytes,
        probe,
        result,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passthrough_and_nonnegative_time() {
        let p = profile(|| 6 * 7);
        assert_eq!(p.result, 42);
        assert!(p.wall_seconds >= 0.0);
    }

    #[test]
    fn counting_allocator_sees_large_buffer() {
        let a = CountingAlloc;
        let layout = Layout::array::<f64>(1_000_000).unwrap();
        unsafe { a.dealloc(a.alloc(Layout::new::<u64>()), Layout::new::<u64>()) };
        let p = profile(|| unsafe {
            let ptr = a.alloc(layout);
            a.dealloc(ptr, layout);
        });
        assert_eq!(p.probe, MemoryProbe::Alloc);
        assert!(p.peak_bytes >= 8_000_000);
    }
}
