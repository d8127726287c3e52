mod common;

use common::{cluster, lighthouse, Scripted};
use proptest::prelude::*;
use regex::Regex;
use vidqa_core::backend::TokenEstimator;
use vidqa_core::clock::FrozenClock;
use vidqa_core::summary::{
    build_global_summary, parse_loose_timestamp, plan_batches, repair_contiguity, SummaryConfig, SummaryError,
};
use vidqa_core::{FrameRecord, Millis, TranscriptSegment, VideoAsset};

fn asset() -> impl Strategy<Value = VideoAsset> {
    let segs = prop::collection::vec((1u64..20_000, 500u64..9_000, "[a-z ]{1,120}"), 0..30);
    let frames = prop::collection::btree_set(0u64..400_000, 0..30);
    (segs, frames).prop_filter_map("empty", |(raw, frame_ts)| {
        let mut t = 0;
        let mut segments = Vec::new();
        for (gap, len, text) in raw {
            if text.trim().is_empty() {
                continue;
            }
            t += gap;
            segments.push(TranscriptSegment { segment_id: segments.len(), start: Millis(t), end: Millis(t + len), text });
        }
        let frames: Vec<FrameRecord> = frame_ts
            .into_iter()
            .enumerate()
            .map(|(i, t)| FrameRecord { frame_id: i, timestamp: Millis(t), image_ref: format!("x/{i}.jpg") })
            .collect();
        let a = VideoAsset::new("v", segments, frames, None).ok()?;
        (!a.is_empty()).then_some(a)
    })
}

proptest! {
    #[test]
    fn batches_partition_the_asset(asset in asset(), budget in 400usize..6_000) {
        let est = TokenEstimator::default();
        let batches = match plan_batches(&asset, budget, &est) {
            Err(SummaryError::ItemExceedsBudget { .. }) => return Ok(()),
            other => other.unwrap(),
        };
        let segs: Vec<TranscriptSegment> = batches.iter().flat_map(|b| b.segments.clone()).collect();
        prop_assert_eq!(&segs, &asset.segments);
        let frames: Vec<FrameRecord> = batches.iter().flat_map(|b| b.frames.clone()).collect();
        prop_assert_eq!(&frames, &asset.frames);
        prop_assert_eq!(batches[0].span_start, Millis::ZERO);
        prop_assert_eq!(batches.last().unwrap().span_end, asset.duration);
        for (k, b) in batches.iter().enumerate() {
            prop_assert_eq!(b.batch_id, k);
            prop_assert!(!b.segments.is_empty() || !b.frames.is_empty());
            prop_assert!(b.token_estimate <= budget, "batch {} estimate {} > {}", k, b.token_estimate, budget);
            if k > 0 {
                prop_assert_eq!(b.span_start, batches[k - 1].span_end);
            }
        }
    }

    #[test]
    fn small_seams_snap_shut(ends in prop::collection::vec(5_000u64..20_000, 1..10), jitter in prop::collection::vec(-2_000i64..=2_000, 10)) {
        let mut t = 0;
        let mut clusters = Vec::new();
        for (k, len) in ends.iter().enumerate() {
            let start = if k == 0 { 0 } else { (t as i64 + jitter[k]) as u64 };
            clusters.push(cluster(start, t + len, "topic"));
            t += len;
        }
        let fixed = repair_contiguity(clusters.clone(), Millis(2_000)).unwrap();
        prop_assert_eq!(fixed.len(), clusters.len());
        prop_assert!(fixed.windows(2).all(|w| w[1].start == w[0].end));
        prop_assert!(fixed.iter().zip(&clusters).all(|(a, b)| a.end == b.end));
    }
}

#[test]
fn wide_seams_are_errors() {
    let clusters = vec![cluster(0, 10_000, "a"), cluster(12_001, 20_000, "b")];
    assert!(matches!(
        repair_contiguity(clusters, Millis(2_000)),
        Err(SummaryError::IrreparableTimeline { index: 1, offset_ms: 2_001 })
    ));
    let swallowed = vec![cluster(0, 10_000, "a"), cluster(9_000, 9_500, "b")];
    assert!(repair_contiguity(swallowed, Millis(2_000)).is_err());
}

#[test]
fn loose_timestamps() {
    assert_eq!(parse_loose_timestamp("00:01:02.500"), Some(Millis(62_500)));
    assert_eq!(parse_loose_timestamp("01:02.500"), Some(Millis(62_500)));
    assert_eq!(parse_loose_timestamp("**00:01:02**"), Some(Millis(62_000)));
    assert_eq!(parse_loose_timestamp("62.5s"), Some(Millis(62_500)));
    assert_eq!(parse_loose_timestamp("00:61:00"), None);
    assert_eq!(parse_loose_timestamp("soon"), None);
}

/// Replies with two clusters per batch, splitting its span in half and
/// nudging the inner seam by 300 ms.
fn halving_backend() -> Scripted {
    let span = Regex::new(r"This batch covers (\S+) to (\S+)\.").unwrap();
    Scripted::new(move |r| {
        let text: String = r.user_parts.iter().map(|p| format!("{p:?}")).collect();
        let caps = span.captures(&text).unwrap();
        let a = parse_loose_timestamp(&caps[1]).unwrap();
        let b = parse_loose_timestamp(&caps[2]).unwrap();
        let mid = Millis((a.0 + b.0) / 2);
        format!(
            "Start timestamp: {a}\nEnd timestamp: {mid}\nTopic Title: First half\nShort summary of the topic: x\n\
             Character Descriptions:\n- Keeper: an old man\nBackground Descriptions: rocks\nReferenced Video Frames: {a}\n\n\
             Start timestamp: {}\nEnd timestamp: {b}\nTopic Title: Second half\nShort summary of the topic: y\n\
             Character Descriptions:\n- Keeper: an old man\nBackground Descriptions: sea\nReferenced Video Frames: none\n",
            Millis(mid.0 + 300)
        )
    })
}

#[test]
fn summary_is_contiguous_over_several_batches() {
    let asset = lighthouse();
    let backend = halving_backend();
    let config = SummaryConfig { batch_budget: 1_200, ..SummaryConfig::for_context_window(100_000, 0.7) };
    let batches = plan_batches(&asset, config.batch_budget, &TokenEstimator::default()).unwrap();
    assert!(batches.len() > 1, "fixture should need several batches");
    let out = build_global_summary(&asset, &backend, &config, &FrozenClock(42)).unwrap();
    let s = &out.summary;
    assert_eq!(out.backend_calls, batches.len());
    assert_eq!(s.source_batches, batches.len());
    assert_eq!(s.clusters.len(), 2 * batches.len());
    assert_eq!(s.time_span(), Some((Millis::ZERO, asset.duration)));
    assert!(s.clusters.windows(2).all(|w| w[1].start == w[0].end));
    assert_eq!(s.generated_at, 42);
    assert!(s.validate().is_ok());
}

#[test]
fn oversized_item_is_reported() {
    let asset = lighthouse();
    assert!(matches!(
        plan_batches(&asset, 50, &TokenEstimator::default()),
        Err(SummaryError::ItemExceedsBudget { .. })
    ));
}
