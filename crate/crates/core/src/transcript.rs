//! Timed transcript segments, sampled frames, and their alignment.

use alloc::collections::{BTreeSet, BinaryHeap};
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Reverse;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::Millis;

/// One timed caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptSegment {
    pub segment_id: usize,
    pub start: Millis,
    pub end: Millis,
    pub text: String,
}

impl TranscriptSegment {
    pub fn contains(&self, t: Millis) -> bool {
        self.start <= t && t < self.end
    }
}

/// One sampled frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: usize,
    pub timestamp: Millis,
    pub image_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TimelineError {
    #[error("duplicate frame timestamp {0}")]
    DuplicateTimestamp(Millis),
    #[error("sampling interval must be positive")]
    NonPositiveInterval,
    #[error("segment {segment_id} ends at {end}, past the media duration {duration}")]
    SegmentBeyondDuration { segment_id: usize, end: Millis, duration: Millis },
    #[error("frame {frame_id} at {timestamp} lies past the media duration {duration}")]
    FrameBeyondDuration { frame_id: usize, timestamp: Millis, duration: Millis },
    #[error("segment {0} violates ordering or non-empty invariants")]
    InvalidSegment(usize),
    #[error("frame {0} is out of order or misnumbered")]
    InvalidFrame(usize),
    #[error("video_id must not be empty")]
    EmptyVideoId,
}

/// A video's aligned transcript and frame streams.
///
/// A video without an audio track is an asset with zero segments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoAsset {
    pub video_id: String,
    pub segments: Vec<TranscriptSegment>,
    pub frames: Vec<FrameRecord>,
    pub duration: Millis,
}

impl VideoAsset {
    /// Validates both streams. When `duration` is `None` it is taken as the
    /// latest segment end or frame timestamp.
    pub fn new(
        video_id: impl Into<String>,
        segments: Vec<TranscriptSegment>,
        frames: Vec<FrameRecord>,
        duration: Option<Millis>,
    ) -> Result<Self, TimelineError> {
        let video_id = video_id.into();
        if video_id.trim().is_empty() {
            return Err(TimelineError::EmptyVideoId);
        }
        let latest = segments
            .iter()
            .map(|s| s.end)
            .chain(frames.iter().map(|f| f.timestamp))
            .max()
            .unwrap_or(Millis::ZERO);
        let duration = duration.unwrap_or(latest);
        let asset = VideoAsset { video_id, segments, frames, duration };
        asset.validate()?;
        Ok(asset)
    }

    pub fn validate(&self) -> Result<(), TimelineError> {
        for (pos, seg) in self.segments.iter().enumerate() {
            let sorted = pos == 0 || self.segments[pos - 1].start <= seg.start;
            if seg.segment_id != pos || seg.end <= seg.start || seg.text.trim().is_empty() || !sorted {
                return Err(TimelineError::InvalidSegment(pos));
            }
            if seg.end > self.duration {
                return Err(TimelineError::SegmentBeyondDuration {
                    segment_id: pos,
                    end: seg.end,
                    duration: self.duration,
                });
            }
        }
        for (pos, frame) in self.frames.iter().enumerate() {
            let increasing = pos == 0 || self.frames[pos - 1].timestamp < frame.timestamp;
            if frame.frame_id != pos || !increasing {
                return Err(TimelineError::InvalidFrame(pos));
            }
            if frame.timestamp > self.duration {
                return Err(TimelineError::FrameBeyondDuration {
                    frame_id: pos,
                    timestamp: frame.timestamp,
                    duration: self.duration,
                });
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty() && self.frames.is_empty()
    }

    pub fn frame(&self, frame_id: usize) -> Option<&FrameRecord> {
        self.frames.get(frame_id)
    }

    pub fn segment(&self, segment_id: usize) -> Option<&TranscriptSegment> {
        self.segments.get(segment_id)
    }
}

/// Sorts raw `(timestamp, image_ref)` records and assigns frame ids by rank.
pub fn frames_from_records(
    mut records: Vec<(Millis, String)>,
) -> Result<Vec<FrameRecord>, TimelineError> {
    records.sort_by_key(|(t, _)| *t);
    if let Some(w) = records.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(TimelineError::DuplicateTimestamp(w[0].0));
    }
    Ok(records
        .into_iter()
        .enumerate()
        .map(|(frame_id, (timestamp, image_ref))| FrameRecord { frame_id, timestamp, image_ref })
        .collect())
}

/// Timestamps `k * interval` for `k = 0..=floor(duration / interval)`.
pub fn sample_timestamps(duration: Millis, interval: Millis) -> Result<Vec<Millis>, TimelineError> {
    if interval.0 == 0 {
        return Err(TimelineError::NonPositiveInterval);
    }
    let count = duration.0 / interval.0 + 1;
    Ok((0..count).map(|k| Millis(k * interval.0)).collect())
}

/// Maps every frame to the segment whose `[start, end)` span contains it.
///
/// Overlapping cues resolve to the lowest segment id. Frames in transcript
/// gaps map to `None`. The result is indexed by frame id.
pub fn align_frames_to_segments(asset: &VideoAsset) -> Vec<Option<usize>> {
    // Sweep frames in time order; `active` holds ids of segments that have
    // started, `expiry` drops them once their end passes.
    let mut active: BTreeSet<usize> = BTreeSet::new();
    let mut expiry: BinaryHeap<Reverse<(Millis, usize)>> = BinaryHeap::new();
    let mut next = 0;
    let segments = &asset.segments;
    asset
        .frames
        .iter()
        .map(|frame| {
            let t = frame.timestamp;
            while next < segments.len() && segments[next].start <= t {
                active.insert(next);
                expiry.push(Reverse((segments[next].end, next)));
                next += 1;
            }
            while let Some(Reverse((end, id))) = expiry.peek().copied() {
                if end > t {
                    break;
                }
                expiry.pop();
                active.remove(&id);
            }
            active.first().copied()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    fn seg(id: usize, start: u64, end: u64) -> TranscriptSegment {
        TranscriptSegment { segment_id: id, start: Millis(start), end: Millis(end), text: "x".to_string() }
    }

    fn frames_at(ts: &[u64]) -> Vec<FrameRecord> {
        ts.iter()
            .enumerate()
            .map(|(i, t)| FrameRecord { frame_id: i, timestamp: Millis(*t), image_ref: format!("f{i}.jpg") })
            .collect()
    }

    fn brute_force(asset: &VideoAsset) -> Vec<Option<usize>> {
        asset
            .frames
            .iter()
            .map(|f| {
                let mut hit = None;
                for s in &asset.segments {
                    if s.start <= f.timestamp && f.timestamp < s.end {
                        hit = Some(s.segment_id);
                        break;
                    }
                }
                hit
            })
            .collect()
    }

    #[test]
    fn frame_inside_segment() {
        let asset = VideoAsset::new("v", vec![seg(0, 1000, 3500)], frames_at(&[2000]), None).unwrap();
        assert_eq!(align_frames_to_segments(&asset), vec![Some(0)]);
    }

    #[test]
    fn frame_in_gap() {
        let asset = VideoAsset::new("v", vec![seg(0, 1000, 3500)], frames_at(&[500]), None).unwrap();
        assert_eq!(align_frames_to_segments(&asset), vec![None]);
    }

    #[test]
    fn boundary_frame_goes_to_later_cue() {
        let asset = VideoAsset::new(
            "v",
            vec![seg(0, 1000, 3500), seg(1, 3500, 5000)],
            frames_at(&[3500]),
            None,
        )
        .unwrap();
        assert_eq!(align_frames_to_segments(&asset), vec![Some(1)]);
    }

    #[test]
    fn overlap_prefers_lower_id() {
        let asset = VideoAsset::new(
            "v",
            vec![seg(0, 0, 10_000), seg(1, 2000, 4000)],
            frames_at(&[3000, 5000, 11_000]),
            Some(Millis(12_000)),
        )
        .unwrap();
        assert_eq!(align_frames_to_segments(&asset), vec![Some(0), Some(0), None]);
    }

    #[test]
    fn fifty_frames_twenty_segments_match_brute_force() {
        // 20 cues of 1.5 s every 4 s, plus a long overlapping cue; frames every 1.7 s.
        let mut segments: Vec<TranscriptSegment> = (0..19u64).map(|k| seg(0, k * 4000, k * 4000 + 1500)).collect();
        segments.push(seg(0, 30_000, 52_000));
        segments.sort_by_key(|s| s.start);
        for (i, s) in segments.iter_mut().enumerate() {
            s.segment_id = i;
        }
        let ts: Vec<u64> = (0..50u64).map(|k| k * 1700).collect();
        let asset = VideoAsset::new("v", segments, frames_at(&ts), None).unwrap();
        assert_eq!(align_frames_to_segments(&asset), brute_force(&asset));
    }

    #[test]
    fn manifest_records_sorted_and_renumbered() {
        let frames = frames_from_records(vec![(Millis(2000), "b".into()), (Millis(0), "a".into())]).unwrap();
        assert_eq!(frames[0].image_ref, "a");
        assert_eq!(frames[0].frame_id, 0);
        assert_eq!(frames[1].frame_id, 1);
        assert_eq!(
            frames_from_records(vec![(Millis(5), "a".into()), (Millis(5), "b".into())]),
            Err(TimelineError::DuplicateTimestamp(Millis(5)))
        );
    }

    #[test]
    fn sample_progressions() {
        let secs = |v: Vec<Millis>| v.into_iter().map(|m| m.0 / 1000).collect::<Vec<_>>();
        assert_eq!(secs(sample_timestamps(Millis(10_000), Millis(2000)).unwrap()), vec![0, 2, 4, 6, 8, 10]);
        // enumerate k*y <= duration independently
        let oracle: Vec<u64> = (0..).map(|k| k * 2).take_while(|t| *t <= 7).collect();
        assert_eq!(secs(sample_timestamps(Millis(7000), Millis(2000)).unwrap()), oracle);
        assert_eq!(sample_timestamps(Millis(7000), Millis(0)), Err(TimelineError::NonPositiveInterval));
    }

    #[test]
    fn asset_rejects_content_past_duration() {
        let err = VideoAsset::new("v", vec![seg(0, 0, 5000)], vec![], Some(Millis(4000))).unwrap_err();
        assert!(matches!(err, TimelineError::SegmentBeyondDuration { .. }));
    }

    proptest! {
        #[test]
        fn alignment_matches_brute_force(
            spans in prop::collection::vec((0u64..20_000, 1u64..6000), 0..25),
            mut ts in prop::collection::btree_set(0u64..26_000, 0..40),
        ) {
            let mut segments: Vec<TranscriptSegment> =
                spans.iter().map(|(s, len)| seg(0, *s, s + len)).collect();
            segments.sort_by_key(|s| s.start);
            for (i, s) in segments.iter_mut().enumerate() { s.segment_id = i; }
            let ts: Vec<u64> = core::mem::take(&mut ts).into_iter().collect();
            let asset = VideoAsset::new("v", segments, frames_at(&ts), None).unwrap();
            prop_assert_eq!(align_frames_to_segments(&asset), brute_force(&asset));
        }

        #[test]
        fn sample_count(duration in 0u64..1_000_000, y in 1u64..50_000) {
            let v = sample_timestamps(Millis(duration), Millis(y)).unwrap();
            prop_assert_eq!(v.len() as u64, duration / y + 1);
        }
    }
}
