//! Single-writer snapshot exchange.
//!
//! A sequence lock over a fixed-size payload of atomics. The writer bumps the
//! sequence to odd, stores the payload, then bumps it to even; readers retry
//! until they see the same even sequence on both sides of their copy. The
//! writer never waits on readers.

use std::sync::atomic::{fence, AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;

use crate::encoder::HiddenSnapshot;
use crate::{Error, Result};

const SPINS_BEFORE_YIELD: u32 = 64;

#[derive(Debug)]
struct Slot {
    seq: AtomicU64,
    t: AtomicU64,
    stamp_ns: AtomicU64,
    checksum: AtomicU64,
    h: Box<[AtomicU32]>,
    z: Box<[AtomicU32]>,
}

/// A snapshot as seen by a reader.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRead {
    pub snapshot: HiddenSnapshot,
    /// Publication time on the run's clock.
    pub stamp_ns: u64,
    /// Number of publications up to and including this one.
    pub counter: u64,
}

/// The writing end. Not `Clone`: there is exactly one writer per cell.
#[derive(Debug)]
pub struct SnapshotWriter {
    slot: Arc<Slot>,
}

/// A reading end; clone freely across threads.
#[derive(Debug, Clone)]
pub struct SnapshotReader {
    slot: Arc<Slot>,
}

/// Creates a cell for snapshots with `h_len` history and `z_len` prompt values.
pub fn snapshot_cell(h_len: usize, z_len: usize) -> (SnapshotWriter, SnapshotReader) {
    let zeros = |n: usize| (0..n).map(|_| AtomicU32::new(0)).collect::<Box<[_]>>();
    let slot = Arc::new(Slot {
        seq: AtomicU64::new(0),
        t: AtomicU64::new(0),
        stamp_ns: AtomicU64::new(0),
        checksum: AtomicU64::new(0),
        h: zeros(h_len),
        z: zeros(z_len),
    });
    (SnapshotWriter { slot: slot.clone() }, SnapshotReader { slot })
}

impl SnapshotWriter {
    /// Replaces the visible snapshot. Bounded time regardless of readers.
    pub fn publish(&mut self, snap: &HiddenSnapshot, stamp_ns: u64) -> Result<()> {
        let s = &*self.slot;
        if snap.h.len() != s.h.len() {
            return Err(Error::shape("snapshot h", s.h.len(), snap.h.len()));
        }
        if snap.z.len() != s.z.len() {
            return Err(Error::shape("snapshot z", s.z.len(), snap.z.len()));
        }
        // only this writer mutates seq, so a relaxed load is exact
        let seq = s.seq.load(Ordering::Relaxed);
        s.seq.store(seq + 1, Ordering::Relaxed);
        fence(Ordering::Release);
        s.t.store(snap.t, Ordering::Relaxed);
        s.stamp_ns.store(stamp_ns, Ordering::Relaxed);
        s.checksum.store(snap.checksum, Ordering::Relaxed);
        for (dst, v) in s.h.iter().zip(&snap.h) {
            dst.store(v.to_bits(), Ordering::Relaxed);
        }
        for (dst, v) in s.z.iter().zip(&snap.z) {
            dst.store(v.to_bits(), Ordering::Relaxed);
        }
        s.seq.store(seq + 2, Ordering::Release);
        Ok(())
    }

    pub fn reader(&self) -> SnapshotReader {
        SnapshotReader { slot: self.slot.clone() }
    }

    pub fn counter(&self) -> u64 {
        self.slot.seq.load(Ordering::Relaxed) / 2
    }
}

impl SnapshotReader {
    /// Monotone publication counter.
    pub fn counter(&self) -> u64 {
        self.slot.seq.load(Ordering::Acquire) / 2
    }

    /// Latest complete snapshot. The returned checksum is copied, not
    /// recomputed, so [`HiddenSnapshot::verify`] is an independent check.
    pub fn read_latest(&self) -> Result<CellRead> {
        let s = &*self.slot;
        let mut h = vec![0.0f32; s.h.len()];
        let mut z = vec![0.0f32; s.z.len()];
        let mut spins = 0u32;
        loop {
            let before = s.seq.load(Ordering::Acquire);
            if before == 0 {
                return Err(Error::NoSnapshot);
            }
            if before % 2 == 1 {
                backoff(&mut spins);
                continue;
            }
            let t = s.t.load(Ordering::Relaxed);
            let stamp_ns = s.stamp_ns.load(Ordering::Relaxed);
            let checksum = s.checksum.load(Ordering::Relaxed);
            for (dst, src) in h.iter_mut().zip(s.h.iter()) {
                *dst = f32::from_bits(src.load(Ordering::Relaxed));
            }
            for (dst, src) in z.iter_mut().zip(s.z.iter()) {
                *dst = f32::from_bits(src.load(Ordering::Relaxed));
            }
            fence(Ordering::Acquire);
            if s.seq.load(Ordering::Relaxed) == before {
                return Ok(CellRead {
                    snapshot: HiddenSnapshot { t, h, z, checksum },
                    stamp_ns,
                    counter: before / 2,
                });
            }
            backoff(&mut spins);
        }
    }
}

fn backoff(spins: &mut u32) {
    *spins += 1;
    if (*spins).is_multiple_of(SPINS_BEFORE_YIELD) {
        std::thread::yield_now();
    } else {
        std::hint::spin_loop();
    }
}

/// Outcome of [`stress_cell`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct StressReport {
    pub publishes: u64,
    pub readers: usize,
    pub reads: u64,
    pub torn_reads: u64,
    /// A reader saw the counter go backwards.
    pub counter_regressions: u64,
}

/// Hammers one cell with `readers` threads while the caller's thread publishes
/// `publishes` distinct snapshots. Every read is checksum-verified.
pub fn stress_cell(publishes: u64, readers: usize, h_len: usize, z_len: usize) -> StressReport {
    let (mut writer, reader) = snapshot_cell(h_len, z_len);
    let done = std::sync::atomic::AtomicBool::new(false);
    let results: Vec<(u64, u64, u64)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..readers)
            .map(|_| {
                let r = reader.clone();
                let done = &done;
                scope.spawn(move || {
                    let (mut reads, mut torn, mut regress, mut last) = (0u64, 0u64, 0u64, 0u64);
                    while !done.load(Ordering::Acquire) {
                        if let Ok(read) = r.read_latest() {
                            reads += 1;
                            if !read.snapshot.verify() || read.snapshot.t != read.counter {
                                torn += 1;
                            }
                            if read.counter < last {
                                regress += 1;
                            }
                            last = read.counter;
                        } else {
                            std::thread::yield_now();
                        }
                    }
                    (reads, torn, regress)
                })
            })
            .collect();
        let mut h = vec![0.0f32; h_len];
        let mut z = vec![0.0f32; z_len];
        for i in 1..=publishes {
            // every element changes on every publish so mixes are detectable
            for (k, v) in h.iter_mut().enumerate() {
                *v = (i as f32) + k as f32 * 0.5;
            }
            for (k, v) in z.iter_mut().enumerate() {
                *v = -(i as f32) - k as f32;
            }
            writer
                .publish(&HiddenSnapshot::new(i, h.clone(), z.clone()), i)
                .expect("fixed dims");
        }
        done.store(true, Ordering::Release);
        handles.into_iter().map(|h| h.join().expect("reader panicked")).collect()
    });
    StressReport {
        publishes,
        readers,
        reads: results.iter().map(|r| r.0).sum(),
        torn_reads: results.iter().map(|r| r.1).sum(),
        counter_regressions: results.iter().map(|r| r.2).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap(t: u64) -> HiddenSnapshot {
        HiddenSnapshot::new(t, vec![t as f32; 4], vec![-(t as f32); 2])
    }

    #[test]
    fn read_before_publish_fails() {
        let (_w, r) = snapshot_cell(4, 2);
        assert!(matches!(r.read_latest(), Err(Error::NoSnapshot)));
        assert_eq!(r.counter(), 0);
    }

    #[test]
    fn publish_then_read() {
        let (mut w, r) = snapshot_cell(4, 2);
        w.publish(&snap(1), 10).unwrap();
        let got = r.read_latest().unwrap();
        assert_eq!(got.snapshot, snap(1));
        assert_eq!((got.stamp_ns, got.counter), (10, 1));
    }

    #[test]
    fn last_writer_wins() {
        let (mut w, r) = snapshot_cell(4, 2);
        w.publish(&snap(1), 10).unwrap();
        w.publish(&snap(2), 20).unwrap();
        let got = r.read_latest().unwrap();
        assert_eq!(got.snapshot, snap(2));
        assert_eq!(got.counter, 2);
        assert!(got.snapshot.verify());
    }

    #[test]
    fn wrong_dims_rejected() {
        let (mut w, _r) = snapshot_cell(3, 2);
        assert!(matches!(w.publish(&snap(1), 0), Err(Error::Shape { .. })));
        assert_eq!(w.counter(), 0);
    }

    #[test]
    fn small_stress_has_no_torn_reads() {
        let rep = stress_cell(20_000, 3, 16, 8);
        assert_eq!(rep.torn_reads, 0);
        assert_eq!(rep.counter_regressions, 0);
    }
}
