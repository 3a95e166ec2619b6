//! Brute-force reference implementations, written for clarity rather than speed.
#![allow(dead_code)]

use std::collections::HashSet;

use geonca::CellGrid;

pub const TOL: f64 = 1e-6;

pub fn read(g: &CellGrid<f64>, r: isize, c: isize, ch: usize) -> f64 {
    if r < 0 || c < 0 || r >= g.height() as isize || c >= g.width() as isize {
        0.0
    } else {
        g.get(r as usize, c as usize, ch)
    }
}

pub fn brute_conv(g: &CellGrid<f64>, k: &[Vec<f64>]) -> Vec<f64> {
    let s = k.len() as isize;
    let mut out = Vec::new();
    for r in 0..g.height() as isize {
        for c in 0..g.width() as isize {
            for ch in 0..g.layout().n() {
                let mut acc = 0.0;
                for i in 0..s {
                    for j in 0..s {
                        acc += k[i as usize][j as usize] * read(g, r + i - s / 2, c + j - s / 2, ch);
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

pub fn binomial(n: usize, i: usize) -> f64 {
    (0..i).fold(1.0, |acc, t| acc * (n - t) as f64 / (t + 1) as f64)
}

/// Sobel-x of odd size `s`, built from closed-form binomial coefficients.
pub fn brute_sobel_x(s: usize) -> Vec<Vec<f64>> {
    let smooth: Vec<f64> = (0..s).map(|i| binomial(s - 1, i)).collect();
    let inner: Vec<f64> = (0..s - 2).map(|i| binomial(s - 3, i)).collect();
    let deriv: Vec<f64> = (0..s)
        .map(|j| {
            let right = if j >= 2 { inner[j - 2] } else { 0.0 };
            let left = if j < s - 2 { inner[j] } else { 0.0 };
            right - left
        })
        .collect();
    let mut k: Vec<Vec<f64>> = smooth.iter().map(|a| deriv.iter().map(|b| a * b).collect()).collect();
    let norm: f64 = k.iter().flatten().map(|x| x.abs()).sum();
    k.iter_mut().flatten().for_each(|x| *x /= norm);
    k
}

pub fn transpose(k: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..k.len()).map(|i| (0..k.len()).map(|j| k[j][i]).collect()).collect()
}

pub fn brute_perceive(g: &CellGrid<f64>) -> Vec<f64> {
    let n = g.layout().n();
    let mut convs = Vec::new();
    for s in [3, 5, 7] {
        let kx = brute_sobel_x(s);
        convs.push(brute_conv(g, &kx));
        convs.push(brute_conv(g, &transpose(&kx)));
    }
    let mut out = Vec::new();
    for r in 0..g.height() {
        for c in 0..g.width() {
            let base = (r * g.width() + c) * n;
            out.extend_from_slice(g.cell(r, c));
            for conv in &convs {
                out.extend_from_slice(&conv[base..base + n]);
            }
            for ch in 0..n {
                let mut m = f64::NEG_INFINITY;
                for dr in -1..=1 {
                    for dc in -1..=1 {
                        m = m.max(read(g, r as isize + dr, c as isize + dc, ch));
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

pub fn brute_softmax(logits: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = logits.iter().map(|x| x.exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

pub fn brute_loss(g: &CellGrid<f64>, labels: &[Option<u8>]) -> f64 {
    let mut total = 0.0;
    for (i, l) in labels.iter().enumerate() {
        let (r, c) = (i / g.width(), i % g.width());
        if let Some(j) = l {
            let h = brute_softmax(g.logits(r, c));
            total += -(h[*j as usize].ln()) + (g.alpha(r, c) - 1.0).powi(2);
        }
    }
    total
}

pub fn brute_accuracy(g: &CellGrid<f64>, labels: &[Option<u8>], threshold: f64) -> (usize, usize) {
    let truth: HashSet<(usize, usize)> = labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| l.map(|j| (i, j as usize)))
        .collect();
    let predicted: HashSet<(usize, usize)> = (0..labels.len())
        .filter(|&i| labels[i].is_some() && g.alpha(i / g.width(), i % g.width()) > threshold)
        .map(|i| {
            let h = brute_softmax(g.logits(i / g.width(), i % g.width()));
            let best = (0..h.len()).fold(0, |b, j| if h[j] > h[b] { j } else { b });
            (i, best)
        })
        .collect();
    (truth.intersection(&predicted).count(), predicted.len())
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOL * (1.0 + b.abs())
}

/// KL(p‖h) with 0·ln 0 = 0.
pub fn kl(p: &[f64], h: &[f64]) -> f64 {
    p.iter().zip(h).filter(|(pj, _)| **pj > 0.0).map(|(pj, hj)| pj * (pj / hj).ln()).sum()
}

/// Target logit of one forced cell with a one-hot target over `k` classes, zero network and
/// zero starting logits; the other logits never move, so only this scalar evolves.
pub fn one_hot_recurrence(c: f64, k: usize, steps: usize) -> Vec<f64> {
    let mut x = 0.0f64;
    let mut out = vec![x];
    for _ in 0..steps {
        let h = x.exp() / (x.exp() + (k - 1) as f64);
        x += c * (1.0 - h);
        out.push(x);
    }
    out
}
