use bnbp_core::bnbp_model::{run_chain, train};
use bnbp_core::checkpoint::Checkpoint;
use bnbp_core::corpus::{export_corpus, filter_vocab, load_corpus, split_heldout};
use bnbp_core::eval::perplexity;
use bnbp_core::{Corpus, CorpusFormat, Hyperpriors, PosteriorDraw, RngStream, TopicModelState, TrainConfig};
use proptest::prelude::*;
use rand::Rng;

fn two_theme_corpus(docs: usize, len: usize, seed: u64) -> Corpus {
    let mut rng = RngStream::new(seed);
    let words = (0..docs)
        .map(|j| {
            let base = if j % 2 == 0 { 0 } else { 6 };
            let mut d: Vec<u32> = (0..len).map(|_| base + rng.random_range(0..6)).collect();
            d.push(12 + (j % 3) as u32);
            d
        })
        .collect();
    Corpus::with_numbered_vocab(words, 16).unwrap()
}

#[test]
fn uci_file_to_perplexity() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = two_theme_corpus(12, 30, 41);
    let path = dir.path().join("docword.toy.txt");
    export_corpus(&corpus, &path, CorpusFormat::Uci, None).unwrap();
    let loaded = load_corpus(&path, CorpusFormat::Uci, None).unwrap();
    assert_eq!(loaded.num_docs(), 12);
    assert_eq!(loaded.total_tokens(), corpus.total_tokens());

    // Term 15 never occurs and terms 12..14 sit in four documents each.
    let (filtered, stats) = filter_vocab(&loaded, 5).unwrap();
    assert_eq!(stats.removed_terms, 4);
    assert_eq!(stats.removed_tokens, 12);
    assert_eq!(filtered.vocab_size(), 12);

    let split = split_heldout(&filtered, 0.5, &mut RngStream::new(1)).unwrap();
    assert_eq!(split.train.total_tokens() as u64 + split.test.total(), 360);
    let cfg = TrainConfig {
        iters: 60,
        collect: 20,
        thin: 2,
    };
    let mut draws: Vec<PosteriorDraw> = Vec::new();
    let (state, trace) =
        train(&split.train, 0.1, Hyperpriors::default(), &cfg, &mut RngStream::new(2), &mut draws).unwrap();
    assert_eq!(draws.len(), 10);
    assert_eq!(trace.len(), 61);
    state.check_invariants().unwrap();
    let p = perplexity(&split.test, &draws).unwrap();
    // Two themes of six terms each: a fitted model sits near 6, far below
    // the uniform 12.
    assert!((1.0..9.0).contains(&p), "perplexity {p}");
}

#[test]
fn lines_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = two_theme_corpus(5, 8, 42);
    let path = dir.path().join("toy.txt");
    export_corpus(&corpus, &path, CorpusFormat::Lines, None).unwrap();
    let back = load_corpus(&path, CorpusFormat::Lines, None).unwrap();
    assert_eq!(back.docs(), corpus.docs());
    assert_eq!(back.vocab(), corpus.vocab());
}

#[test]
fn checkpoint_file_resumes_chain() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = two_theme_corpus(6, 10, 43);
    let cfg = TrainConfig {
        iters: 10,
        collect: 0,
        thin: 1,
    };
    let mut rng = RngStream::new(3).split(1);
    let mut state = TopicModelState::new(&corpus, 0.2, Hyperpriors::default()).unwrap();
    run_chain(&mut state, &cfg, &mut rng, &mut bnbp_core::NoDraws).unwrap();
    let path = dir.path().join("ck.txt");
    state.to_checkpoint(&rng).unwrap().save(&path).unwrap();

    let ck = Checkpoint::load(&path).unwrap();
    let mut resumed = TopicModelState::from_checkpoint(&ck).unwrap();
    let mut rng2 = ck.rng();
    let a = run_chain(&mut state, &cfg, &mut rng, &mut bnbp_core::NoDraws).unwrap();
    let b = run_chain(&mut resumed, &cfg, &mut rng2, &mut bnbp_core::NoDraws).unwrap();
    assert_eq!(a, b);
    assert_eq!(state.token_pairs(), resumed.token_pairs());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Every token lands on exactly one side, ⌈f·m_j⌉ of them in training.
    #[test]
    fn split_conserves_tokens(seed in any::<u64>(), fraction in 0.05f64..0.95) {
        let corpus = two_theme_corpus(7, 13, seed);
        let split = split_heldout(&corpus, fraction, &mut RngStream::new(seed)).unwrap();
        for (j, doc) in corpus.docs().iter().enumerate() {
            let mut all: Vec<u32> = split.train.doc(j).to_vec();
            for &(v, n) in &split.test.docs()[j] {
                all.extend(std::iter::repeat_n(v, n as usize));
            }
            all.sort_unstable();
            let mut want = doc.clone();
            want.sort_unstable();
            prop_assert_eq!(all, want);
            prop_assert_eq!(split.train.doc(j).len(), (fraction * doc.len() as f64 - 1e-9).ceil() as usize);
        }
    }

    /// Surviving terms all meet the threshold and keep their order.
    #[test]
    fn filter_keeps_frequent_terms(seed in any::<u64>(), min_docs in 1usize..6) {
        let corpus = two_theme_corpus(9, 5, seed);
        let df = corpus.document_frequencies();
        let Ok((filtered, stats)) = filter_vocab(&corpus, min_docs) else {
            prop_assert!(df.iter().all(|&d| d < min_docs));
            return Ok(());
        };
        let kept: Vec<&String> = corpus.vocab().iter().zip(&df).filter(|(_, &d)| d >= min_docs).map(|(t, _)| t).collect();
        prop_assert_eq!(filtered.vocab().iter().collect::<Vec<_>>(), kept);
        prop_assert_eq!(stats.removed_terms, corpus.vocab_size() - filtered.vocab_size());
        prop_assert!(filtered.document_frequencies().iter().all(|&d| d >= min_docs));
    }
}
