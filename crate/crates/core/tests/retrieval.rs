use proptest::prelude::*;
use vidqa_core::embedding::{cosine_similarity, EmbeddingIndex, EmbeddingVector, IndexedItem, ItemKind};

const DIM: usize = 12;

fn vector() -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-4.0f32..4.0, DIM).prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f32>() > 1e-3)
}

fn ev(v: &[f32]) -> EmbeddingVector {
    EmbeddingVector::new(v.to_vec()).unwrap()
}

proptest! {
    #[test]
    fn self_similarity_is_one(a in vector()) {
        let s = cosine_similarity(&ev(&a), &ev(&a)).unwrap();
        prop_assert!((s - 1.0).abs() < 1e-9, "{}", s);
    }

    #[test]
    fn similarity_is_symmetric_and_scale_free(a in vector(), b in vector(), lambda in 0.01f32..100.0) {
        let (a, b) = (ev(&a), ev(&b));
        let ab = cosine_similarity(&a, &b).unwrap();
        prop_assert_eq!(ab, cosine_similarity(&b, &a).unwrap());
        prop_assert!((-1.0..=1.0).contains(&ab));
        let scaled = cosine_similarity(&a.scaled(lambda), &b).unwrap();
        prop_assert!((scaled - ab).abs() < 1e-6, "{} vs {}", scaled, ab);
    }

    #[test]
    fn returned_hits_outscore_everything_left_out(
        frames in prop::collection::vec(vector(), 1..40),
        query in vector(),
        n in 1usize..10,
    ) {
        let mut index = EmbeddingIndex::new(DIM).unwrap();
        for (ordinal, v) in frames.iter().enumerate() {
            index.insert(IndexedItem { video_id: "v".into(), kind: ItemKind::Frame, ordinal, vector: ev(v) }).unwrap();
        }
        let q = ev(&query);
        let hits = index.top_n(&q, ItemKind::Frame, n, "v").unwrap();
        prop_assert_eq!(hits.len(), n.min(frames.len()));
        prop_assert!(hits.windows(2).all(|w| w[0].score >= w[1].score));
        let min_kept = hits.last().unwrap().score;
        for (ordinal, v) in frames.iter().enumerate() {
            if hits.iter().all(|h| h.ordinal != ordinal) {
                let s = cosine_similarity(&q, &ev(v)).unwrap();
                prop_assert!(s <= min_kept + 1e-12, "left out {} scoring {} > {}", ordinal, s, min_kept);
            }
        }
    }
}

#[test]
fn other_videos_and_kinds_stay_separate() {
    let mut index = EmbeddingIndex::new(2).unwrap();
    let put = |index: &mut EmbeddingIndex, video: &str, kind, ordinal, v: [f32; 2]| {
        index.insert(IndexedItem { video_id: video.into(), kind, ordinal, vector: ev(&v) }).unwrap();
    };
    put(&mut index, "a", ItemKind::Frame, 0, [1.0, 0.0]);
    put(&mut index, "a", ItemKind::Transcript, 0, [0.0, 1.0]);
    put(&mut index, "b", ItemKind::Frame, 0, [0.0, 1.0]);
    let hits = index.top_n(&ev(&[0.0, 1.0]), ItemKind::Frame, 5, "a").unwrap();
    assert_eq!(hits.len(), 1);
    assert!(hits[0].score.abs() < 1e-12);
    assert_eq!(index.count("b", ItemKind::Transcript), 0);
}

#[test]
fn dimension_mismatch_and_zero_vectors_are_errors() {
    let mut index = EmbeddingIndex::new(3).unwrap();
    assert!(index.insert(IndexedItem { video_id: "v".into(), kind: ItemKind::Frame, ordinal: 0, vector: ev(&[1.0, 2.0]) }).is_err());
    let zero = EmbeddingVector::new(vec![0.0; 3]).unwrap();
    assert!(zero.normalized().is_err());
    assert!(cosine_similarity(&zero, &ev(&[1.0, 0.0, 0.0])).is_err());
    assert!(EmbeddingVector::new(vec![f32::NAN, 1.0]).is_err());
    assert!(EmbeddingIndex::new(0).is_err());
}

#[test]
fn ties_break_toward_earlier_items() {
    let mut index = EmbeddingIndex::new(2).unwrap();
    for ordinal in [3, 1, 2, 0] {
        index.insert(IndexedItem { video_id: "v".into(), kind: ItemKind::Frame, ordinal, vector: ev(&[1.0, 1.0]) }).unwrap();
    }
    let order: Vec<usize> = index.top_n(&ev(&[2.0, 2.0]), ItemKind::Frame, 3, "v").unwrap().iter().map(|h| h.ordinal).collect();
    assert_eq!(order, [0, 1, 2]);
}
