mod common;

use common::levenshtein_oracle;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slotforge::corpus::{bio_tags, parse_conll, write_conll, Corpus, SlotTag, Utterance};
use slotforge::delex::{build_slot_value_map, delexicalise, realise, DelexUtterance};
use slotforge::diversity::{
    build_training_pairs, candidate_pairs, edit_distance, kept_alternatives, parse_rank_token, rank_alternatives,
    PairOptions,
};
use slotforge::eval::{chunk_prf, extract_chunks};

#[derive(Clone, Debug)]
enum Piece {
    Word(String),
    Slot(String, Vec<String>),
}

fn piece() -> impl Strategy<Value = Piece> {
    prop_oneof![
        2 => "w[0-5]".prop_map(Piece::Word),
        1 => ("[abc]", prop::collection::vec("v[0-5]", 1..4)).prop_map(|(t, v)| Piece::Slot(t, v)),
    ]
}

fn build(pieces: &[Piece]) -> Utterance {
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    for p in pieces {
        match p {
            Piece::Word(w) => {
                tokens.push(w.clone());
                tags.push(SlotTag::Outside);
            }
            Piece::Slot(t, v) => {
                tokens.extend(v.iter().cloned());
                tags.extend(bio_tags(t, v.len()));
            }
        }
    }
    Utterance::new(tokens, tags).unwrap()
}

fn utterance() -> impl Strategy<Value = Utterance> {
    prop::collection::vec(piece(), 1..8).prop_map(|p| build(&p))
}

fn seq() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..4, 0..=6)
}

fn delex_seq() -> impl Strategy<Value = DelexUtterance> {
    prop::collection::vec(prop_oneof!["[a-d]", Just("<x>".to_string())], 1..7).prop_map(DelexUtterance::from_tokens)
}

proptest! {
    #[test]
    fn edit_distance_is_a_metric(a in seq(), b in seq(), c in seq()) {
        let d = |x: &[u8], y: &[u8]| edit_distance(x, y);
        prop_assert_eq!(d(&a, &b), levenshtein_oracle(&a, &b));
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert_eq!(d(&a, &b) == 0, a == b);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c));
    }

    #[test]
    fn ranking_is_a_sorted_permutation(u in delex_seq(), cluster in prop::collection::vec(delex_seq(), 0..7), seed in any::<u64>()) {
        let ranked = rank_alternatives(&u, &cluster);
        let mut positions: Vec<usize> = ranked.iter().map(|r| r.position).collect();
        positions.sort_unstable();
        prop_assert_eq!(positions, (0..cluster.len()).collect::<Vec<_>>());
        prop_assert!(ranked.windows(2).all(|w| w[0].score >= w[1].score));
        prop_assert!(ranked.iter().enumerate().all(|(i, r)| r.rank == i + 1));

        let mut shuffled = cluster.clone();
        rand::seq::SliceRandom::shuffle(&mut shuffled[..], &mut ChaCha8Rng::seed_from_u64(seed));
        let key = |xs: Vec<slotforge::diversity::RankedAlternative>| -> Vec<(DelexUtterance, u64)> {
            xs.into_iter().map(|r| (r.target, r.score.to_bits())).collect()
        };
        prop_assert_eq!(key(rank_alternatives(&u, &shuffled)), key(ranked));
    }

    #[test]
    fn delex_realise_roundtrip(u in utterance(), seed in any::<u64>()) {
        let c = Corpus::new(vec![u.clone()]);
        let map = build_slot_value_map(&c);
        prop_assume!(map.entries().values().all(|v| v.len() == 1));
        let (d, alignment) = delexicalise(&u);
        prop_assert_eq!(alignment.len(), u.segments().len());
        let back = realise(&d, &map, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(back, u);
    }

    #[test]
    fn realisation_preserves_frame(us in prop::collection::vec(utterance(), 1..5), pick in any::<prop::sample::Index>(), seed in any::<u64>()) {
        let c = Corpus::new(us.clone());
        let map = build_slot_value_map(&c);
        let (d, _) = delexicalise(pick.get(&us));
        let a = realise(&d, &map, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = realise(&d, &map, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a.frame(), d.frame());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn frame_ignores_segment_order(pieces in prop::collection::vec(piece(), 1..8), seed in any::<u64>()) {
        let mut shuffled = pieces.clone();
        rand::seq::SliceRandom::shuffle(&mut shuffled[..], &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(build(&pieces).frame(), build(&shuffled).frame());
    }

    #[test]
    fn conll_roundtrip(us in prop::collection::vec(utterance(), 1..5)) {
        let c = Corpus::new(us);
        let text = write_conll(&c);
        let back = parse_conll(&text).unwrap();
        prop_assert_eq!(&back.utterances, &c.utterances);
        prop_assert_eq!(write_conll(&back), text);
    }

    #[test]
    fn chunks_survive_bio_reexpansion(u in utterance()) {
        let chunks = extract_chunks(u.tags());
        let mut tags = vec![SlotTag::Outside; u.len()];
        for ch in &chunks {
            for (i, t) in bio_tags(&ch.slot_type, ch.end - ch.start).enumerate() {
                tags[ch.start + i] = t;
            }
        }
        prop_assert_eq!(extract_chunks(&tags), chunks);
    }

    #[test]
    fn scores_ignore_utterance_order(us in prop::collection::vec(utterance(), 1..6), seed in any::<u64>()) {
        let preds: Vec<Vec<SlotTag>> = us.iter().map(|u| {
            u.tags().iter().rev().cloned().collect()
        }).collect();
        let m = chunk_prf(&Corpus::new(us.clone()), &preds).unwrap();
        let mut idx: Vec<usize> = (0..us.len()).collect();
        rand::seq::SliceRandom::shuffle(&mut idx[..], &mut ChaCha8Rng::seed_from_u64(seed));
        let us2: Vec<Utterance> = idx.iter().map(|&i| us[i].clone()).collect();
        let preds2: Vec<Vec<SlotTag>> = idx.iter().map(|&i| preds[i].clone()).collect();
        prop_assert_eq!(chunk_prf(&Corpus::new(us2), &preds2).unwrap(), m);
    }

    #[test]
    fn pair_count_before_dedup(k in 1usize..9, filler in prop::collection::vec("w[0-3]", 0..3)) {
        // K distinct utterances sharing one frame.
        let us: Vec<Utterance> = (0..k).map(|i| {
            let mut pieces: Vec<Piece> = filler.iter().cloned().map(Piece::Word).collect();
            pieces.extend((0..i).map(|j| Piece::Word(format!("x{j}"))));
            pieces.push(Piece::Slot("a".into(), vec!["v".into()]));
            build(&pieces)
        }).collect();
        let c = Corpus::new(us);
        let expected = if k < 2 { 0 } else { k * kept_alternatives(k) };
        prop_assert_eq!(candidate_pairs(&c, PairOptions::default()).len(), expected);
        prop_assert_eq!(kept_alternatives(k), (k - 1).div_ceil(2));
    }

    #[test]
    fn pair_sources_carry_one_rank_token(us in prop::collection::vec(utterance(), 1..8)) {
        for p in build_training_pairs(&Corpus::new(us)) {
            let ranks: Vec<usize> = p.source.iter().filter_map(|t| parse_rank_token(t)).collect();
            prop_assert_eq!(ranks.len(), 1);
            prop_assert!(parse_rank_token(p.source.last().unwrap()).is_some());
            prop_assert!(p.target.iter().all(|t| parse_rank_token(t).is_none()));
        }
    }
}
