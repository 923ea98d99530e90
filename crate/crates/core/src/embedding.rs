//! Soft ordinal embedding: study coordinates fitted to triplet constraints by
//! minimising the summed margin triplet loss
//! `max(0, δ + ‖xa − xp‖ − ‖xa − xn‖)` with mini-batch Adam.
//!
//! Only rows referenced by a batch receive an update, and each row keeps its
//! own Adam moments and step count. The coordinates with the lowest triplet
//! error seen at any epoch boundary (initialisation included) are retained.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::seed::rng;
use crate::triplets::TripletSet;
use crate::{Error, Result};

/// Row-major `m × d` coordinates; row `i` embeds study `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub m: usize,
    pub d: usize,
    pub coords: Vec<f64>,
}

impl Embedding {
    pub fn new(m: usize, d: usize, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != m * d {
            return Err(Error::invalid(format!(
                "embedding of {m}x{d} needs {} coordinates, got {}",
                m * d,
                coords.len()
            )));
        }
        if coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("embedding coordinates must be finite"));
        }
        Ok(Self { m, d, coords })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("embedding rows have unequal length"));
        }
        Self::new(rows.len(), d, rows.concat())
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.coords[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.d.max(1)).take(self.m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Standard deviation of the normal initialisation.
    pub init_scale: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            learning_rate: 0.01,
            epochs: 300,
            batch_size: 128,
            seed: 0,
            init_scale: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {x}")))
            }
        };
        positive("margin", self.margin)?;
        positive("learning_rate", self.learning_rate)?;
        positive("init_scale", self.init_scale)?;
        positive("epsilon", self.epsilon)?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0 is the initialisation.
    pub epoch: usize,
    pub mean_loss: f64,
    pub triplet_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_coords: Embedding,
    pub final_coords: Embedding,
}

impl TrainHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.records[self.best_epoch]
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_triplet_args(xa: &[f64], xp: &[f64], xn: &[f64], margin: f64) -> Result<()> {
    if xa.len() != xp.len() || xa.len() != xn.len() {
        return Err(Error::invalid("triplet vectors differ in dimension"));
    }
    if !(margin > 0.0 && margin.is_finite()) {
        return Err(Error::invalid(format!("margin must be positive, got {margin}")));
    }
    if xa.iter().chain(xp).chain(xn).any(|x| !x.is_finite()) {
        return Err(Error::invalid("triplet vectors must be finite"));
    }
    Ok(())
}

fn loss_unchecked(xa: &[f64], xp: &[f64], xn: &[f64], margin: f64) -> f64 {
    (margin + dist(xa, xp) - dist(xa, xn)).max(0.0)
}

pub fn triplet_loss(xa: &[f64], xp: &[f64], xn: &[f64], margin: f64) -> Result<f64> {
    check_triplet_args(xa, xp, xn, margin)?;
    Ok(loss_unchecked(xa, xp, xn, margin))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrad {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

/// Adds the loss gradient for one triplet into the three output slices and
/// returns the loss. Zero at and below the hinge; a coincident pair adds
/// nothing for its branch.
fn accumulate_grad(
    xa: &[f64],
    xp: &[f64],
    xn: &[f64],
    margin: f64,
    ga: &mut [f64],
    gp: &mut [f64],
    gn: &mut [f64],
) -> f64 {
    let dap = dist(xa, xp);
    let dan = dist(xa, xn);
    let loss = margin + dap - dan;
    if loss <= 0.0 {
        return 0.0;
    }
    let d = xa.len();
    if dap > 0.0 {
        for k in 0..d {
            let u = (xa[k] - xp[k]) / dap;
            ga[k] += u;
            gp[k] -= u;
        }
    }
    if dan > 0.0 {
        for k in 0..d {
            let w = (xa[k] - xn[k]) / dan;
            ga[k] -= w;
            gn[k] += w;
        }
    }
    loss
}

pub fn triplet_loss_grad(xa: &[f64], xp: &[f64], xn: &[f64], margin: f64) -> Result<TripletGrad> {
    check_triplet_args(xa, xp, xn, margin)?;
    let d = xa.len();
    let mut g = TripletGrad {
        anchor: vec![0.0; d],
        positive: vec![0.0; d],
        negative: vec![0.0; d],
    };
    accumulate_grad(xa, xp, xn, margin, &mut g.anchor, &mut g.positive, &mut g.negative);
    Ok(g)
}

fn error_count(e: &Embedding, triples: &[[usize; 3]]) -> usize {
    triples
        .iter()
        .filter(|[a, p, n]| sq_dist(e.row(*a), e.row(*p)) >= sq_dist(e.row(*a), e.row(*n)))
        .count()
}

fn check_indices(e: &Embedding, triples: &[[usize; 3]]) -> Result<()> {
    if let Some(t) = triples.iter().find(|t| t.iter().any(|&i| i >= e.m)) {
        return Err(Error::invalid(format!(
            "triplet {t:?} references a study outside the {}-row embedding",
            e.m
        )));
    }
    if let Some(t) = triples.iter().find(|[a, p, n]| a == p || a == n || p == n) {
        return Err(Error::invalid(format!("triplet {t:?} repeats a study")));
    }
    Ok(())
}

/// Fraction of triplets with `‖xa − xp‖ ≥ ‖xa − xn‖`; ties count as violated.
pub fn triplet_error(e: &Embedding, t: &TripletSet) -> Result<f64> {
    triplet_error_indices(e, &t.index_triples())
}

pub fn triplet_error_indices(e: &Embedding, triples: &[[usize; 3]]) -> Result<f64> {
    if triples.is_empty() {
        return Err(Error::invalid("triplet error of an empty triplet set"));
    }
    check_indices(e, triples)?;
    Ok(error_count(e, triples) as f64 / triples.len() as f64)
}

fn mean_loss(e: &Embedding, triples: &[[usize; 3]], margin: f64) -> f64 {
    let total: f64 = triples
        .iter()
        .map(|[a, p, n]| loss_unchecked(e.row(*a), e.row(*p), e.row(*n), margin))
        .sum();
    total / triples.len() as f64
}

/// Adam with moments and step counters kept per embedding row.
struct RowAdam {
    d: usize,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: Vec<i32>,
}

impl RowAdam {
    fn new(m: usize, d: usize) -> Self {
        Self {
            d,
            first: vec![0.0; m * d],
            second: vec![0.0; m * d],
            steps: vec![0; m],
        }
    }

    fn step_row(&mut self, row: usize, coords: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.steps[row] += 1;
        let t = self.steps[row];
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let base = row * self.d;
        for k in 0..self.d {
            let i = base + k;
            let g = grad[i];
            self.first[i] = cfg.beta1 * self.first[i] + (1.0 - cfg.beta1) * g;
            self.second[i] = cfg.beta2 * self.second[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.first[i] / c1;
            let v_hat = self.second[i] / c2;
            coords[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

/// Observes training; `after_batch` sees coordinates before and after every
/// update together with the batch's triplet indices.
pub trait TrainObserver {
    fn after_batch(&mut self, _before: &[f64], _after: &[f64], _batch: &[[usize; 3]]) {}
}

impl TrainObserver for () {}

pub fn initial_embedding(m: usize, d: usize, cfg: &TrainConfig) -> Result<Embedding> {
    let normal = Normal::new(0.0, cfg.init_scale)
        .map_err(|e| Error::Config(format!("init_scale: {e}")))?;
    let mut r = rng(cfg.seed);
    Embedding::new(m, d, (0..m * d).map(|_| normal.sample(&mut r)).collect())
}

pub fn train(t: &TripletSet, m: usize, d: usize, cfg: &TrainConfig) -> Result<TrainHistory> {
    train_indices(&t.index_triples(), m, d, cfg, &mut ())
}

pub fn train_indices(
    triples: &[[usize; 3]],
    m: usize,
    d: usize,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if triples.is_empty() {
        return Err(Error::invalid("cannot train on an empty triplet set"));
    }
    if d == 0 {
        return Err(Error::invalid("embedding dimension must be at least 1"));
    }
    let mut emb = initial_embedding(m, d, cfg)?;
    check_indices(&emb, triples)?;

    let record = |e: &Embedding, epoch| EpochRecord {
        epoch,
        mean_loss: mean_loss(e, triples, cfg.margin),
        triplet_error: error_count(e, triples) as f64 / triples.len() as f64,
    };
    let mut records = vec![record(&emb, 0)];
    let mut best_epoch = 0;
    let mut best_coords = emb.clone();

    // shuffling is a separate stream from initialisation
    let mut order_rng = rng(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut adam = RowAdam::new(m, d);
    let mut grad = vec![0.0; m * d];
    let mut touched = vec![false; m];
    let mut touched_rows = Vec::with_capacity(m);
    let mut batch_buf: Vec<[usize; 3]> = Vec::with_capacity(cfg.batch_size);
    let mut before = Vec::new();
    let mut scratch = vec![0.0; 3 * d];

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch_buf.clear();
            batch_buf.extend(chunk.iter().map(|&i| triples[i]));
            for &[a, p, n] in &batch_buf {
                for r in [a, p, n] {
                    if !touched[r] {
                        touched[r] = true;
                        touched_rows.push(r);
                    }
                }
                scratch.fill(0.0);
                let (ga, rest) = scratch.split_at_mut(d);
                let (gp, gn) = rest.split_at_mut(d);
                if accumulate_grad(emb.row(a), emb.row(p), emb.row(n), cfg.margin, ga, gp, gn) > 0.0 {
                    for (slot, row) in [a, p, n].into_iter().enumerate() {
                        for k in 0..d {
                            grad[row * d + k] += scratch[slot * d + k];
                        }
                    }
                }
            }
            touched_rows.sort_unstable();
            before.clone_from(&emb.coords);
            for &r in &touched_rows {
                adam.step_row(r, &mut emb.coords, &grad, cfg);
                grad[r * d..(r + 1) * d].fill(0.0);
                touched[r] = false;
            }
            touched_rows.clear();
            observer.after_batch(&before, &emb.coords, &batch_buf);
        }
        let rec = record(&emb, epoch);
        if !rec.mean_loss.is_finite() || emb.coords.iter().any(|x| !x.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                learning_rate: cfg.learning_rate,
                message: format!("mean loss is {}", rec.mean_loss),
            });
        }
        if rec.triplet_error < records[best_epoch].triplet_error {
            best_epoch = epoch;
            best_coords.coords.clone_from(&emb.coords);
        }
        records.push(rec);
    }
    Ok(TrainHistory {
        records,
        best_epoch,
        best_coords,
        final_coords: emb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(triples: &[(usize, usize, usize)]) -> TripletSet {
        use crate::oracle::{Slot, TripletJudgment};
        use crate::triplets::{Triplet, TripletSource};
        TripletSet {
            triplets: triples
                .iter()
                .map(|&(a, p, n)| Triplet {
                    anchor: a,
                    positive: p,
                    negative: n,
                    judgment: TripletJudgment {
                        anchor_id: a.to_string(),
                        candidate_a_id: p.to_string(),
                        candidate_b_id: n.to_string(),
                        more_similar: Slot::A,
                        explanation: String::new(),
                        oracle_tag: "test".into(),
                        prompt_hash: None,
                        presented_swapped: false,
                    },
                })
                .collect(),
            seed: 0,
            source: TripletSource::Loaded,
        }
    }

    #[test]
    fn loss_examples() {
        assert_eq!(triplet_loss(&[0.0], &[0.0], &[2.0], 1.0).unwrap(), 0.0);
        assert_eq!(triplet_loss(&[0.0], &[2.0], &[-2.5], 1.0).unwrap(), 0.5);
        assert_eq!(triplet_loss(&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0], 1.0).unwrap(), 1.0);
        assert!(triplet_loss(&[f64::NAN], &[0.0], &[0.0], 1.0).is_err());
        assert!(triplet_loss(&[0.0], &[0.0, 1.0], &[0.0], 1.0).is_err());
    }

    #[test]
    fn grad_examples() {
        let g = triplet_loss_grad(&[0.0], &[0.0], &[2.0], 1.0).unwrap();
        assert!(g.anchor.iter().chain(&g.positive).chain(&g.negative).all(|&x| x == 0.0));

        let g = triplet_loss_grad(&[0.0], &[2.0], &[-2.5], 1.0).unwrap();
        assert_eq!(g.positive, vec![1.0]);
        assert_eq!(g.negative, vec![1.0]);
        assert_eq!(g.anchor, vec![-2.0]);

        // exactly on the hinge: zero
        let g = triplet_loss_grad(&[0.0], &[1.0], &[2.0], 1.0).unwrap();
        assert_eq!(g.anchor, vec![0.0]);

        // anchor on top of positive: only the negative branch contributes
        let g = triplet_loss_grad(&[0.0], &[0.0], &[0.5], 1.0).unwrap();
        assert_eq!(g.positive, vec![0.0]);
        assert_eq!(g.negative, vec![-1.0]);
        assert_eq!(g.anchor, vec![1.0]);
    }

    #[test]
    fn grad_matches_central_differences_1d() {
        let (xa, xp, xn) = (0.0, 2.0, -2.5);
        let h = 1e-6;
        let f = |a: f64, p: f64, n: f64| triplet_loss(&[a], &[p], &[n], 1.0).unwrap();
        let fd_a = (f(xa + h, xp, xn) - f(xa - h, xp, xn)) / (2.0 * h);
        let fd_p = (f(xa, xp + h, xn) - f(xa, xp - h, xn)) / (2.0 * h);
        let fd_n = (f(xa, xp, xn + h) - f(xa, xp, xn - h)) / (2.0 * h);
        assert!((fd_a + 2.0).abs() < 1e-6);
        assert!((fd_p - 1.0).abs() < 1e-6);
        assert!((fd_n - 1.0).abs() < 1e-6);
    }

    #[test]
    fn triplet_error_examples() {
        let t = set(&[(0, 1, 2), (1, 0, 2), (2, 1, 0), (0, 2, 1)]);
        // points on a line at 0, 1, 3
        let e = Embedding::new(3, 1, vec![0.0, 1.0, 3.0]).unwrap();
        assert_eq!(triplet_error(&e, &t).unwrap(), 0.25);
        let good = set(&[(0, 1, 2), (1, 0, 2), (2, 1, 0)]);
        assert_eq!(triplet_error(&e, &good).unwrap(), 0.0);
        let flat = Embedding::new(3, 2, vec![0.5; 6]).unwrap();
        assert_eq!(triplet_error(&flat, &good).unwrap(), 1.0);
        assert!(triplet_error(&e, &set(&[])).is_err());
        assert!(triplet_error(&e, &set(&[(0, 0, 2)])).is_err());
        assert!(triplet_error(&e, &set(&[(0, 1, 3)])).is_err());
    }

    #[test]
    fn single_triplet_is_solved() {
        let t = set(&[(0, 1, 2)]);
        let cfg = TrainConfig {
            epochs: 300,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let h = train(&t, 3, 1, &cfg).unwrap();
        let last = h.records.last().unwrap();
        assert_eq!(last.mean_loss, 0.0);
        assert_eq!(last.triplet_error, 0.0);
        assert_eq!(h.best().triplet_error, 0.0);
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let t = set(&[(0, 1, 2), (2, 1, 0)]);
        let cfg = TrainConfig {
            epochs: 0,
            seed: 9,
            ..TrainConfig::default()
        };
        let h = train(&t, 4, 2, &cfg).unwrap();
        assert_eq!(h.records.len(), 1);
        assert_eq!(h.best_epoch, 0);
        assert_eq!(h.best_coords, initial_embedding(4, 2, &cfg).unwrap());
        assert_eq!(h.best_coords, h.final_coords);
    }

    fn random_set(m: usize, n: usize, seed: u64) -> TripletSet {
        use rand::Rng;
        let mut r = rng(seed);
        let mut v = Vec::new();
        while v.len() < n {
            let a = r.random_range(0..m);
            let p = r.random_range(0..m);
            let q = r.random_range(0..m);
            if a != p && a != q && p != q {
                v.push((a, p, q));
            }
        }
        set(&v)
    }

    #[test]
    fn training_is_bit_reproducible_and_best_is_minimum() {
        let t = random_set(20, 300, 4);
        let cfg = TrainConfig {
            epochs: 40,
            seed: 123,
            batch_size: 32,
            ..TrainConfig::default()
        };
        let a = train(&t, 20, 2, &cfg).unwrap();
        let b = train(&t, 20, 2, &cfg).unwrap();
        assert_eq!(a, b);
        let min = a
            .records
            .iter()
            .map(|r| r.triplet_error)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(a.best().triplet_error, min);
        assert_eq!(triplet_error(&a.best_coords, &t).unwrap(), min);
        let first_min = a.records.iter().position(|r| r.triplet_error == min).unwrap();
        assert_eq!(a.best_epoch, first_min);
    }

    #[test]
    fn divergence_is_reported() {
        let t = random_set(6, 20, 1);
        let cfg = TrainConfig {
            learning_rate: 1e308,
            epochs: 5,
            ..TrainConfig::default()
        };
        match train(&t, 6, 2, &cfg) {
            Err(Error::Divergence { learning_rate, .. }) => assert_eq!(learning_rate, 1e308),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    struct Locality {
        checked: usize,
    }

    impl TrainObserver for Locality {
        fn after_batch(&mut self, before: &[f64], after: &[f64], batch: &[[usize; 3]]) {
            let d = 2;
            for row in 0..before.len() / d {
                if batch.iter().any(|t| t.contains(&row)) {
                    continue;
                }
                assert_eq!(before[row * d..row * d + d], after[row * d..row * d + d]);
                self.checked += 1;
            }
        }
    }

    #[test]
    fn untouched_rows_are_bit_identical() {
        let t = random_set(40, 200, 8);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let mut obs = Locality { checked: 0 };
        train_indices(&t.index_triples(), 40, 2, &cfg, &mut obs).unwrap();
        assert!(obs.checked > 0);
    }

    fn vec3(d: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        let v = || proptest::collection::vec(-3.0f64..3.0, d);
        (v(), v(), v())
    }

    proptest! {
        #[test]
        fn loss_nonnegative_and_zero_iff_margin_met((xa, xp, xn) in vec3(3), margin in 0.1f64..2.0) {
            let l = triplet_loss(&xa, &xp, &xn, margin).unwrap();
            prop_assert!(l >= 0.0);
            let satisfied = dist(&xa, &xn) >= dist(&xa, &xp) + margin;
            prop_assert_eq!(l == 0.0, satisfied);
        }

        #[test]
        fn translation_invariance((xa, xp, xn) in vec3(2), shift in proptest::collection::vec(-5.0f64..5.0, 2)) {
            let mv = |v: &[f64]| v.iter().zip(&shift).map(|(x, s)| x + s).collect::<Vec<_>>();
            let l0 = triplet_loss(&xa, &xp, &xn, 1.0).unwrap();
            let l1 = triplet_loss(&mv(&xa), &mv(&xp), &mv(&xn), 1.0).unwrap();
            prop_assert!((l0 - l1).abs() < 1e-9);
            let g0 = triplet_loss_grad(&xa, &xp, &xn, 1.0).unwrap();
            let g1 = triplet_loss_grad(&mv(&xa), &mv(&xp), &mv(&xn), 1.0).unwrap();
            // the shift can move a point across the hinge only within rounding
            if (1.0 + dist(&xa, &xp) - dist(&xa, &xn)).abs() > 1e-9 {
                for (u, v) in g0.anchor.iter().chain(&g0.positive).chain(&g0.negative)
                    .zip(g1.anchor.iter().chain(&g1.positive).chain(&g1.negative)) {
                    prop_assert!((u - v).abs() < 1e-7);
                }
            }
        }

        #[test]
        fn rotation_invariance((xa, xp, xn) in vec3(2), theta in 0.0f64..std::f64::consts::TAU) {
            let (s, c) = theta.sin_cos();
            let rot = |v: &[f64]| vec![c * v[0] - s * v[1], s * v[0] + c * v[1]];
            let l0 = triplet_loss(&xa, &xp, &xn, 1.0).unwrap();
            let l1 = triplet_loss(&rot(&xa), &rot(&xp), &rot(&xn), 1.0).unwrap();
            prop_assert!((l0 - l1).abs() < 1e-9);
        }
    }
}
