#![allow(dead_code)]

use std::collections::BTreeMap;

use affectva::corpus::{build_corpus, AnnotatedInstance, Corpus, Fold};
use affectva::fixture;
use affectva::model::pieces;
use nalgebra::{DMatrix, DVector};

pub fn fixture_corpus(seed: u64) -> Corpus {
    let dir = tempfile::tempdir().unwrap();
    let manifest = fixture::write_fixture(dir.path(), fixture::DEFAULT_FIXTURE_SEED).unwrap();
    build_corpus(&manifest, dir.path(), seed).unwrap().corpus
}

pub fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mut mx = 0.0;
    let mut my = 0.0;
    for i in 0..x.len() {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

fn features(vocab: &BTreeMap<String, usize>, inst: &AnnotatedInstance) -> Vec<(usize, f64)> {
    let p = pieces(&inst.text);
    let w = 1.0 / p.len() as f64;
    let mut out = vec![(0, 1.0)];
    for piece in p {
        if let Some(&k) = vocab.get(&piece) {
            out.push((k, w));
        }
    }
    out
}

/// Ridge regression on length-normalized bag-of-words, trained on one fold
/// and scored on the other, both directions pooled. Returns (ρ_V, ρ_A).
pub fn ridge_cross_fold(corpus: &Corpus, lambda: f64) -> (f64, f64) {
    let mut vocab = BTreeMap::new();
    for inst in corpus.iter() {
        for piece in pieces(&inst.text) {
            let next = vocab.len() + 1;
            vocab.entry(piece).or_insert(next);
        }
    }
    let dim = vocab.len() + 1;
    let mut gold = (Vec::new(), Vec::new());
    let mut pred = (Vec::new(), Vec::new());
    for fold in [Fold::A, Fold::B] {
        let train: Vec<&AnnotatedInstance> = corpus.iter().filter(|i| i.fold == fold).collect();
        let test: Vec<&AnnotatedInstance> = corpus.iter().filter(|i| i.fold == fold.other()).collect();
        let mut x = DMatrix::<f64>::zeros(train.len(), dim);
        for (r, inst) in train.iter().enumerate() {
            for (k, w) in features(&vocab, inst) {
                x[(r, k)] += w;
            }
        }
        let mut gram = x.transpose() * &x;
        for k in 1..dim {
            gram[(k, k)] += lambda;
        }
        gram[(0, 0)] += 1e-9;
        let chol = gram.cholesky().expect("ridge system is positive definite");
        for dim_idx in 0..2 {
            let y = DVector::from_iterator(
                train.len(),
                train.iter().map(|i| if dim_idx == 0 { i.valence } else { i.arousal }),
            );
            let beta = chol.solve(&(x.transpose() * y));
            for inst in &test {
                let p: f64 = features(&vocab, inst).iter().map(|&(k, w)| beta[k] * w).sum();
                let g = if dim_idx == 0 { inst.valence } else { inst.arousal };
                if dim_idx == 0 {
                    pred.0.push(p);
                    gold.0.push(g);
                } else {
                    pred.1.push(p);
                    gold.1.push(g);
                }
            }
        }
    }
    (naive_pearson(&gold.0, &pred.0), naive_pearson(&gold.1, &pred.1))
}
