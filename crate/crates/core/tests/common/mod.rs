#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;

const CONS: &[u8] = b"bcdfghjklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

pub fn pseudo_word<R: Rng>(rng: &mut R) -> String {
    let syllables = rng.gen_range(2..=4);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(CONS[rng.gen_range(0..CONS.len())] as char);
        w.push(VOWELS[rng.gen_range(0..VOWELS.len())] as char);
    }
    w
}

pub fn vocabulary<R: Rng>(rng: &mut R, size: usize) -> Vec<String> {
    let mut v: Vec<String> = (0..size * 2).map(|_| pseudo_word(rng)).collect();
    v.sort();
    v.dedup();
    v.shuffle(rng);
    v.truncate(size);
    v
}

/// A capitalized sentence of `n` words ending in a period.
pub fn sentence<R: Rng>(rng: &mut R, vocab: &[String], n: usize) -> String {
    let mut words: Vec<String> = (0..n)
        .map(|_| vocab[rng.gen_range(0..vocab.len())].clone())
        .collect();
    let first = &mut words[0];
    *first = first[..1].to_uppercase() + &first[1..];
    words.join(" ") + "."
}

pub fn paragraph<R: Rng>(rng: &mut R, vocab: &[String], sentences: usize) -> String {
    (0..sentences)
        .map(|_| {
            let n = rng.gen_range(8..=16);
            sentence(rng, vocab, n)
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Standard normal draw by Box-Muller.
pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn report(criterion: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {criterion} [{}] {name}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
}
