use driftlab::corpus_synth::{generate_graph, sample_walk, token_name, CooccurrenceGraph, Corpus};
use driftlab::embed::{
    build_vocab, embed_corpus, intersect_align, EmbeddingMeta, EmbeddingSet, SgnsParams, Vocabulary,
};
use driftlab::numeric::Tensor;
use driftlab::{seed, Error};
use proptest::prelude::*;
use rand::Rng as _;

fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let n = |v: &[f32]| v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    dot / (n(a) * n(b))
}

/// Node `copy` gets exactly the in- and out-edges of node `orig`.
fn with_twin(g: &CooccurrenceGraph, orig: usize, copy: usize) -> CooccurrenceGraph {
    let mut edges: Vec<_> = g.edges.iter().copied().filter(|e| e.0 != copy && e.1 != copy).collect();
    let extra: Vec<_> = edges
        .iter()
        .filter_map(|&(s, d, w)| match (s == orig, d == orig) {
            (true, false) => Some((copy, d, w)),
            (false, true) => Some((s, copy, w)),
            _ => None,
        })
        .collect();
    edges.extend(extra);
    edges.sort_by_key(|e| (e.0, e.1));
    let out = CooccurrenceGraph {
        n_nodes: g.n_nodes,
        edges,
        seed: g.seed,
    };
    out.validate().unwrap();
    out
}

#[test]
fn words_with_identical_contexts_end_up_close() {
    let g = with_twin(&generate_graph(100, 0.1, 5).unwrap(), 3, 4);
    let corpus = sample_walk(&g, 100_000, 6).unwrap();
    let e = embed_corpus(&corpus, &SgnsParams::synthetic(), 7, "twin").unwrap();
    let twin = cosine(e.vector(&token_name(3)).unwrap(), e.vector(&token_name(4)).unwrap());

    let mut rng = seed::rng(8);
    let mut random: Vec<f64> = (0..2000)
        .filter_map(|_| {
            let (a, b) = (rng.gen_range(0..100), rng.gen_range(0..100));
            (a != b).then(|| cosine(e.vector(&token_name(a)).unwrap(), e.vector(&token_name(b)).unwrap()))
        })
        .collect();
    random.sort_by(f64::total_cmp);
    let p95 = random[random.len() * 95 / 100];
    assert!(twin > p95, "twin cosine {twin} vs random 95th percentile {p95}");
}

#[test]
fn words_that_never_share_a_window_are_not_aligned() {
    // Two disjoint vocabularies on separate lines.
    let mut total = 0.0;
    for s in 0..10u64 {
        let mut rng = seed::rng(s);
        let lines: Vec<Vec<String>> = (0..2000)
            .map(|i| {
                let prefix = if i % 2 == 0 { "a" } else { "b" };
                (0..20).map(|_| format!("{prefix}{}", rng.gen_range(0..5))).collect()
            })
            .collect();
        let e = embed_corpus(&Corpus::from_lines(lines), &SgnsParams::synthetic(), s, "split").unwrap();
        total += cosine(e.vector("a0").unwrap(), e.vector("b0").unwrap()).abs();
    }
    let mean = total / 10.0;
    assert!(mean < 0.5, "mean |cos| {mean}");
}

#[test]
fn synthetic_embeddings_have_the_expected_shape_and_scale() {
    let g = generate_graph(100, 0.1, 1).unwrap();
    let corpus = sample_walk(&g, 50_000, 2).unwrap();
    let e = embed_corpus(&corpus, &SgnsParams::synthetic(), 3, "d1").unwrap();
    assert_eq!((e.len(), e.dim()), (100, 50));
    assert!(e.matrix.is_finite());
    let max_norm = (0..e.len())
        .map(|i| e.matrix.row(i).iter().map(|&x| x * x).sum::<f32>().sqrt())
        .fold(0.0f32, f32::max);
    assert!(max_norm < 100.0, "row norm {max_norm}");
    assert_eq!(e.meta.corpus_id, "d1");
}

#[test]
fn independent_seeds_give_unaligned_spaces() {
    let g = generate_graph(100, 0.1, 1).unwrap();
    let corpus = sample_walk(&g, 50_000, 2).unwrap();
    let p = SgnsParams::synthetic();
    let a = embed_corpus(&corpus, &p, 10, "x").unwrap();
    let b = embed_corpus(&corpus, &p, 11, "x").unwrap();
    let same = embed_corpus(&corpus, &p, 10, "x").unwrap();
    assert_eq!(a, same);
    let mean: f64 = a
        .words()
        .iter()
        .map(|w| cosine(a.vector(w).unwrap(), b.vector(w).unwrap()))
        .sum::<f64>()
        / a.len() as f64;
    assert!(mean.abs() < 0.3, "raw cross-seed cosine {mean}");
}

#[test]
fn vocabulary_counts_and_order() {
    let v = build_vocab(&Corpus::parse("b c a a\nc a"), 1).unwrap();
    assert_eq!(v.words(), ["a", "c", "b"]);
    assert_eq!(v.counts(), [3, 2, 1]);
    assert!(matches!(
        build_vocab(&Corpus::parse("a b"), 2),
        Err(Error::EmptyVocabulary { .. })
    ));
}

fn named(words: &[&str], d: usize) -> EmbeddingSet {
    let m = Tensor::from_fn(words.len(), d, |r, c| (r * d + c) as f32);
    EmbeddingSet::new(
        Vocabulary::from_words(words.iter().map(|w| w.to_string()).collect()).unwrap(),
        m,
        EmbeddingMeta::default(),
    )
    .unwrap()
}

#[test]
fn alignment_keeps_common_words_in_first_order() {
    let a = named(&["x", "y", "z"], 2);
    let b = named(&["z", "w", "x"], 2);
    let small = named(&["z"], 2);
    let al = intersect_align(&a, &b, Some(&small)).unwrap();
    assert_eq!(al.a.words(), ["x", "z"]);
    assert_eq!(al.b.words(), ["x", "z"]);
    assert_eq!(al.a.vector("z").unwrap(), a.vector("z").unwrap());
    assert_eq!(al.b.vector("x").unwrap(), b.vector("x").unwrap());
    let sc = al.small.unwrap();
    assert_eq!(sc.mask, [false, true]);
    assert_eq!(sc.set.vector("x").unwrap(), [0.0, 0.0]);
    assert_eq!(sc.coverage(), 1);

    assert!(matches!(
        intersect_align(&a, &named(&["q"], 2), None),
        Err(Error::Alignment(_))
    ));
    assert!(matches!(
        intersect_align(&a, &named(&["x"], 3), None),
        Err(Error::Alignment(_))
    ));
}

#[test]
fn short_row_is_a_format_error() {
    let mut text = String::from("2 50\n");
    text.push_str(&format!("a {}\n", vec!["0.5"; 50].join(" ")));
    text.push_str(&format!("b {}\n", vec!["0.5"; 49].join(" ")));
    assert!(matches!(EmbeddingSet::from_text(&text), Err(Error::Format { .. })));
}

fn arbitrary_set() -> impl Strategy<Value = EmbeddingSet> {
    (1usize..20, 1usize..8).prop_flat_map(|(n, d)| {
        prop::collection::vec(
            prop::num::f32::NORMAL | prop::num::f32::ZERO | prop::num::f32::SUBNORMAL,
            n * d,
        )
        .prop_map(move |data| {
            let words = (0..n).map(|i| format!("w{i}")).collect();
            EmbeddingSet::new(
                Vocabulary::from_words(words).unwrap(),
                Tensor::from_vec(n, d, data).unwrap(),
                EmbeddingMeta::default(),
            )
            .unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn files_round_trip_bit_exactly(e in arbitrary_set()) {
        let dir = tempfile::tempdir().unwrap();
        for binary in [false, true] {
            let path = dir.path().join(if binary { "e.bin" } else { "e.txt" });
            e.save(&path, binary).unwrap();
            let back = EmbeddingSet::load(&path, binary).unwrap();
            prop_assert_eq!(back.words(), e.words());
            let bits = |s: &EmbeddingSet| s.matrix.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&e));
        }
    }
}

#[test]
fn trained_set_text_round_trip_keeps_header() {
    let g = generate_graph(100, 0.1, 1).unwrap();
    let corpus = sample_walk(&g, 20_000, 2).unwrap();
    let e = embed_corpus(&corpus, &SgnsParams::synthetic(), 3, "d1").unwrap();
    let text = e.to_text();
    assert_eq!(text.lines().next(), Some("100 50"));
    let back = EmbeddingSet::from_text(&text).unwrap();
    assert!(back.matrix.max_abs_diff(&e.matrix) <= 1e-6);
}
