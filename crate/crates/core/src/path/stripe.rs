use std::ops::Range;

/// Per-stream segment lengths for one message.
///
/// The first `len % streams` segments carry one byte more than the rest, so
/// lengths differ by at most one and segment `i` always goes to stream `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StripePlan {
    segment_lengths: Vec<usize>,
}

impl StripePlan {
    /// A plan with arbitrary segment lengths.
    pub fn from_lengths(segment_lengths: Vec<usize>) -> Self {
        StripePlan { segment_lengths }
    }

    pub fn segment_lengths(&self) -> &[usize] {
        &self.segment_lengths
    }

    pub fn total(&self) -> usize {
        self.segment_lengths.iter().sum()
    }

    /// Byte ranges of each segment within the message, in stream order.
    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.segment_lengths.iter().scan(0usize, |start, &len| {
            let r = *start..*start + len;
            *start += len;
            Some(r)
        })
    }
}

/// Splits `total_len` bytes evenly over `stream_count` streams.
///
/// # Panics
///
/// Panics if `stream_count` is zero.
pub fn stripe(total_len: usize, stream_count: usize) -> StripePlan {
    assert!(stream_count > 0, "stripe over zero streams");
    let base = total_len / stream_count;
    let extra = total_len % stream_count;
    StripePlan {
        segment_lengths: (0..stream_count)
            .map(|i| base + usize::from(i < extra))
            .collect(),
    }
}
