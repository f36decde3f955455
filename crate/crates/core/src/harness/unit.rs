//! Offline checks of the pure building blocks.

use std::time::Duration;

use super::report::{ensure, Report};
use crate::filetools::FileFrame;
use crate::path::{stripe, StripePlan, BARRIER_TOKEN, LENGTH_PREFIX_LEN, MIB};
use crate::stream::{pacing_delay, StreamHandshake};

pub type StripeFn = fn(usize, usize) -> StripePlan;

pub fn run_unit_tests() -> Report {
    run_unit_tests_with(stripe)
}

/// Runs the unit checks against the given striping rule.
pub fn run_unit_tests_with(stripe_fn: StripeFn) -> Report {
    let mut r = Report::default();
    r.run("stripe examples", || {
        for (len, n, want) in [
            (10, 3, &[4, 3, 3][..]),
            (0, 4, &[0, 0, 0, 0]),
            (1, 4, &[1, 0, 0, 0]),
            (7, 1, &[7]),
            (9, 3, &[3, 3, 3]),
        ] {
            let got = stripe_fn(len, n);
            ensure!(
                got.segment_lengths() == want,
                "stripe({len}, {n}) = {:?}, want {want:?}",
                got.segment_lengths()
            );
        }
        Ok(())
    });
    r.run("stripe invariants", || {
        for n in 1..=32 {
            for len in 0..=300 {
                let plan = stripe_fn(len, n);
                let seg = plan.segment_lengths();
                ensure!(
                    seg.len() == n,
                    "stripe({len}, {n}) has {} segments",
                    seg.len()
                );
                ensure!(
                    seg.iter().sum::<usize>() == len,
                    "stripe({len}, {n}) loses bytes"
                );
                let (lo, hi) = (seg.iter().min().unwrap(), seg.iter().max().unwrap());
                ensure!(hi - lo <= 1, "stripe({len}, {n}) is uneven: {seg:?}");
                ensure!(
                    seg.windows(2).all(|w| w[0] >= w[1]),
                    "stripe({len}, {n}) puts larger segments last: {seg:?}"
                );
            }
        }
        Ok(())
    });
    r.run("pacing delay examples", || {
        ensure!(
            pacing_delay(16 * MIB as u64, 16 * MIB as u64) == Duration::from_secs(1),
            "1 s case"
        );
        ensure!(
            pacing_delay(64 * MIB as u64, 16 * MIB as u64) == Duration::from_secs(4),
            "4 s case"
        );
        ensure!(
            pacing_delay(1, 1_000_000_000) == Duration::from_nanos(1),
            "1 ns case"
        );
        ensure!(
            pacing_delay(12345, 0) == Duration::ZERO,
            "rate 0 must mean unpaced"
        );
        Ok(())
    });
    r.run("pacing delay additivity", || {
        let rate = 3 * MIB as u64 + 17;
        let pieces = [1u64, 4096, 65_537, 8 * MIB as u64, 333];
        let whole = pacing_delay(pieces.iter().sum(), rate);
        let split: Duration = pieces.iter().map(|&b| pacing_delay(b, rate)).sum();
        let diff = whole.abs_diff(split);
        ensure!(
            diff <= Duration::from_nanos(pieces.len() as u64),
            "split delays drift by {diff:?}"
        );
        Ok(())
    });
    r.run("handshake encode/decode", || {
        let h = StreamHandshake::new(0xDEAD_BEEF, 7, 32).map_err(|e| e.to_string())?;
        let raw = h.encode();
        ensure!(&raw[..4] == b"MPWP", "magic missing: {raw:?}");
        ensure!(
            StreamHandshake::decode(&raw).ok() == Some(h),
            "roundtrip failed"
        );
        let mut bad = raw;
        bad[0] = b'X';
        ensure!(StreamHandshake::decode(&bad).is_err(), "bad magic accepted");
        let mut bad = raw;
        bad[11..13].copy_from_slice(&0u16.to_be_bytes());
        ensure!(
            StreamHandshake::decode(&bad).is_err(),
            "zero stream count accepted"
        );
        ensure!(
            StreamHandshake::decode(&raw[..5]).is_err(),
            "short handshake accepted"
        );
        Ok(())
    });
    r.run("file frame encode/decode", || {
        let f = FileFrame::new("dir/file.dat", 0o640, (0..=255).collect())
            .map_err(|e| e.to_string())?;
        ensure!(
            FileFrame::decode(&f.encode()).ok() == Some(f),
            "roundtrip failed"
        );
        let mut raw = FileFrame::new("ab/x", 0o644, vec![1]).unwrap().encode();
        raw[2..4].copy_from_slice(b"..");
        ensure!(FileFrame::decode(&raw).is_err(), "traversal path accepted");
        ensure!(
            FileFrame::new("/abs", 0, vec![]).is_err(),
            "absolute path accepted"
        );
        Ok(())
    });
    r.run("control tokens", || {
        ensure!(
            &BARRIER_TOKEN.to_be_bytes() == b"MPWBBAR1",
            "barrier token bytes"
        );
        ensure!(
            LENGTH_PREFIX_LEN == 8,
            "length prefix is {LENGTH_PREFIX_LEN} bytes"
        );
        Ok(())
    });
    r
}
