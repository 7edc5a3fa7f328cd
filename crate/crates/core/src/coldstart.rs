//! Collaborative-filtering embeddings and the cold-start simulation.
//!
//! The ratings matrix is items × users with unobserved entries read as 0. Its rank-k
//! truncated SVD `U S Vᵀ` is split as item factors `U S^α` and user factors `S^(1-α) Vᵀ`;
//! any `α` (and any rotation between the two factors) gives the same product.
//!
//! A partially rated item is embedded by folding its rating vector into the fixed user
//! factors: `e = x V S^(α-1)`. With the item's complete ratings this reproduces its
//! full-data embedding exactly.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, SemanticItem};
use crate::error::{Error, Result};

pub const DEFAULT_EMBEDDING_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct RatingsMatrix {
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    /// Observed `(user, rating)` pairs per item, in input order.
    by_item: Vec<Vec<(usize, f64)>>,
}

impl RatingsMatrix {
    /// `triplets` are `(user, item, rating)` index triples with ratings in `1..=5`.
    pub fn new(n_users: usize, n_items: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let user_ids = (0..n_users).map(|u| u.to_string()).collect();
        let item_ids = (0..n_items).map(|i| i.to_string()).collect();
        Self::with_ids(user_ids, item_ids, triplets)
    }

    fn with_ids(user_ids: Vec<String>, item_ids: Vec<String>, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        if user_ids.is_empty() || item_ids.is_empty() {
            return Err(Error::Validation("ratings matrix has no users or no items".into()));
        }
        let mut by_item = vec![Vec::new(); item_ids.len()];
        let mut seen = std::collections::HashSet::new();
        for &(u, i, r) in triplets {
            if u >= user_ids.len() || i >= item_ids.len() {
                return Err(Error::Validation(format!("rating ({u}, {i}) outside matrix")));
            }
            if !(1.0..=5.0).contains(&r) {
                return Err(Error::Validation(format!(
                    "rating {r} for user `{}` item `{}` outside 1..5",
                    user_ids[u], item_ids[i]
                )));
            }
            if !seen.insert((u, i)) {
                return Err(Error::Validation(format!(
                    "user `{}` rated item `{}` twice",
                    user_ids[u], item_ids[i]
                )));
            }
            by_item[i].push((u, r));
        }
        Ok(Self {
            user_ids,
            item_ids,
            by_item,
        })
    }

    /// Reads `user,item,rating` lines; a first line whose rating field is not numeric is
    /// treated as a header. Ids are assigned indices in order of first appearance.
    pub fn load(path: &Path) -> Result<Self> {
        let name = path.display().to_string();
        let text = fs::read_to_string(path)?;
        let mut users: HashMap<String, usize> = HashMap::new();
        let mut items: HashMap<String, usize> = HashMap::new();
        let (mut user_ids, mut item_ids) = (Vec::new(), Vec::new());
        let mut triplets = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::parse(&name, format!("line {}", n + 1), "expected user,item,rating"));
            }
            let rating: f64 = match fields[2].parse() {
                Ok(r) => r,
                Err(_) if n == 0 => continue,
                Err(e) => return Err(Error::parse(&name, format!("line {}", n + 1), e)),
            };
            let index = |map: &mut HashMap<String, usize>, ids: &mut Vec<String>, key: &str| {
                *map.entry(key.to_string()).or_insert_with(|| {
                    ids.push(key.to_string());
                    ids.len() - 1
                })
            };
            let u = index(&mut users, &mut user_ids, fields[0]);
            let i = index(&mut items, &mut item_ids, fields[1]);
            triplets.push((u, i, rating));
        }
        if triplets.is_empty() {
            return Err(Error::parse(&name, "file", "no ratings"));
        }
        Self::with_ids(user_ids, item_ids, &triplets)
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn ratings_of(&self, item: usize) -> &[(usize, f64)] {
        &self.by_item[item]
    }

    pub fn count(&self, item: usize) -> usize {
        self.by_item[item].len()
    }

    /// Dense items × users matrix with zeros for unobserved entries.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut x = DMatrix::zeros(self.n_items(), self.n_users());
        for (i, ratings) in self.by_item.iter().enumerate() {
            for &(u, r) in ratings {
                x[(i, u)] = r;
            }
        }
        x
    }

    /// Keeps only the given items, in the given order.
    pub fn select_items(&self, items: &[usize]) -> Self {
        Self {
            user_ids: self.user_ids.clone(),
            item_ids: items.iter().map(|&i| self.item_ids[i].clone()).collect(),
            by_item: items.iter().map(|&i| self.by_item[i].clone()).collect(),
        }
    }
}

/// Ratings from a rank-`rank` preference model: user and item factors are standard normal,
/// the scaled score `a·b / sqrt(rank)` maps to `clamp(round(3 + 1.2 score), 1, 5)`, and each
/// entry is observed with probability `density`. Every item keeps at least one rating.
pub fn synthetic_ratings(n_users: usize, n_items: usize, rank: usize, density: f64, seed: u64) -> Result<RatingsMatrix> {
    if rank == 0 || !(density > 0.0 && density <= 1.0) {
        return Err(Error::Config(format!("need rank >= 1 and density in (0, 1], got {rank} and {density}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factors = |n: usize| -> DMatrix<f64> { DMatrix::from_fn(n, rank, |_, _| StandardNormal.sample(&mut rng)) };
    let users = factors(n_users);
    let items = factors(n_items);
    let scale = (rank as f64).sqrt();
    let rating = |u: usize, i: usize| -> f64 {
        let score = users.row(u).dot(&items.row(i)) / scale;
        (3.0 + 1.2 * score).round().clamp(1.0, 5.0)
    };
    let mut triplets = Vec::new();
    for i in 0..n_items {
        let before = triplets.len();
        for u in 0..n_users {
            if rng.random::<f64>() < density {
                triplets.push((u, i, rating(u, i)));
            }
        }
        if triplets.len() == before && n_users > 0 {
            let u = rng.random_range(0..n_users);
            triplets.push((u, i, rating(u, i)));
        }
    }
    RatingsMatrix::new(n_users, n_items, &triplets)
}

/// Rank-k truncated SVD, singular values descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub fn truncated_svd(x: &DMatrix<f64>, k: usize) -> Result<TruncatedSvd> {
    let max_rank = x.nrows().min(x.ncols());
    if k == 0 || k > max_rank {
        return Err(Error::Config(format!("rank {k} not in 1..={max_rank}")));
    }
    let svd = x.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(TruncatedSvd {
        u: DMatrix::from_fn(u.nrows(), k, |r, c| u[(r, order[c])]),
        s: DVector::from_fn(k, |c, _| svd.singular_values[order[c]]),
        v: DMatrix::from_fn(v_t.ncols(), k, |r, c| v_t[(order[c], r)]),
    })
}

/// Item and user factors for one choice of the scaling exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdEmbedding {
    pub svd: TruncatedSvd,
    pub alpha: f64,
    /// items × k
    pub items: DMatrix<f64>,
    /// k × users
    pub users: DMatrix<f64>,
}

impl SvdEmbedding {
    pub fn from_svd(svd: TruncatedSvd, alpha: f64) -> Self {
        let (items, users) = decomposition(&svd, alpha, None);
        Self {
            svd,
            alpha,
            items,
            users,
        }
    }

    pub fn reconstruction(&self) -> DMatrix<f64> {
        &self.items * &self.users
    }

    /// Embedding of an item from a subset of its ratings.
    pub fn fold_in(&self, ratings: &[(usize, f64)]) -> DVector<f64> {
        let k = self.svd.s.len();
        let mut e = DVector::zeros(k);
        for &(u, r) in ratings {
            for c in 0..k {
                e[c] += r * self.svd.v[(u, c)];
            }
        }
        for c in 0..k {
            e[c] *= self.svd.s[c].powf(self.alpha - 1.0);
        }
        e
    }
}

/// `(U S^α R, Rᵀ S^(1-α) Vᵀ)`; `rotation = None` means the identity.
pub fn decomposition(svd: &TruncatedSvd, alpha: f64, rotation: Option<&DMatrix<f64>>) -> (DMatrix<f64>, DMatrix<f64>) {
    let s_a = DMatrix::from_diagonal(&svd.s.map(|v| v.powf(alpha)));
    let s_b = DMatrix::from_diagonal(&svd.s.map(|v| v.powf(1.0 - alpha)));
    let left = &svd.u * s_a;
    let right = s_b * svd.v.transpose();
    match rotation {
        Some(r) => (left * r, r.transpose() * right),
        None => (left, right),
    }
}

pub fn svd_embed(r: &RatingsMatrix, k: usize, alpha: f64) -> Result<SvdEmbedding> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(SvdEmbedding::from_svd(truncated_svd(&r.to_dense(), k)?, alpha))
}

/// `a·b / (|a| |b|)`, and 0 when either vector is zero.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// The `n` most-rated items, most ratings first, ties to the smaller index.
pub fn top_items_filter(r: &RatingsMatrix, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..r.n_items()).collect();
    idx.sort_by(|&a, &b| r.count(b).cmp(&r.count(a)).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

/// Items as a dataset whose targets are their embeddings. Item text is the title when one
/// is given, else the item id.
pub fn embedding_dataset(
    r: &RatingsMatrix,
    k: usize,
    alpha: f64,
    titles: Option<&HashMap<String, String>>,
) -> Result<Dataset> {
    let emb = svd_embed(r, k, alpha)?;
    let items = r
        .item_ids()
        .iter()
        .map(|id| {
            let text = titles.and_then(|t| t.get(id)).cloned().unwrap_or_else(|| id.clone());
            SemanticItem::new(id.clone(), text)
        })
        .collect();
    Dataset::new(items, emb.items)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColdStartCurve {
    pub schedule: Vec<usize>,
    pub mean: Vec<f64>,
    pub p5: Vec<f64>,
    pub p95: Vec<f64>,
    pub n_trials: usize,
}

impl ColdStartCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("count,mean_cs,p5,p95\n");
        for k in 0..self.schedule.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.schedule[k], self.mean[k], self.p5[k], self.p95[k]
            ));
        }
        out
    }
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Cosine similarity to the full-data embedding after revealing each scheduled number of an
/// item's ratings in random order, for every item and trial. Counts above an item's
/// available ratings use all of them.
pub fn cold_start_sim(
    emb: &SvdEmbedding,
    r: &RatingsMatrix,
    items: &[usize],
    schedule: &[usize],
    seed: u64,
    n_trials: usize,
) -> Result<ColdStartCurve> {
    if schedule.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("schedule counts must be strictly increasing".into()));
    }
    if n_trials == 0 || items.is_empty() {
        return Err(Error::Config("need at least one item and one trial".into()));
    }
    if let Some(&i) = items.iter().find(|&&i| r.count(i) == 0) {
        return Err(Error::Validation(format!("item `{}` has no ratings", r.item_ids()[i])));
    }
    let runs: Vec<(usize, usize)> = items.iter().flat_map(|&i| (0..n_trials).map(move |k| (i, k))).collect();
    let per_run: Vec<Vec<f64>> = runs
        .par_iter()
        .map(|&(item, trial)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((item as u64) << 20) | trial as u64);
            let mut ratings = r.ratings_of(item).to_vec();
            ratings.shuffle(&mut rng);
            let truth: Vec<f64> = emb.items.row(item).iter().copied().collect();
            schedule
                .iter()
                .map(|&c| {
                    let e = emb.fold_in(&ratings[..c.min(ratings.len())]);
                    cosine_similarity(e.as_slice(), &truth)
                })
                .collect()
        })
        .collect();
    let mut curve = ColdStartCurve {
        schedule: schedule.to_vec(),
        mean: Vec::new(),
        p5: Vec::new(),
        p95: Vec::new(),
        n_trials,
    };
    for k in 0..schedule.len() {
        let mut vals: Vec<f64> = per_run.iter().map(|v| v[k]).collect();
        curve.mean.push(vals.iter().sum::<f64>() / vals.len() as f64);
        vals.sort_by(f64::total_cmp);
        curve.p5.push(percentile(&vals, 0.05));
        curve.p95.push(percentile(&vals, 0.95));
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn exact_rank_reconstructs() {
        let x = random_matrix(20, 3, 1) * random_matrix(3, 30, 2);
        let emb = SvdEmbedding::from_svd(truncated_svd(&x, 3).unwrap(), 0.5);
        assert!((emb.reconstruction() - &x).norm() / x.norm() < 1e-8);
    }

    #[test]
    fn singular_values_match_eigenvalues_of_gram() {
        let x = random_matrix(12, 7, 3);
        let svd = truncated_svd(&x, 3).unwrap();
        let mut eig: Vec<f64> = (x.transpose() * &x).symmetric_eigen().eigenvalues.iter().copied().collect();
        eig.sort_by(|a, b| b.total_cmp(a));
        for (k, e) in eig.iter().take(3).enumerate() {
            assert_abs_diff_eq!(svd.s[k], e.sqrt(), epsilon = 1e-6);
        }
    }

    #[test]
    fn reconstruction_error_shrinks_with_rank() {
        let x = random_matrix(15, 10, 4);
        let errs: Vec<f64> = (1..=10)
            .map(|k| (SvdEmbedding::from_svd(truncated_svd(&x, k).unwrap(), 0.3).reconstruction() - &x).norm())
            .collect();
        assert!(errs.windows(2).all(|w| w[1] <= w[0] + 1e-10));
        assert!(truncated_svd(&x, 11).is_err());
    }

    #[test]
    fn cosine_conventions() {
        assert_abs_diff_eq!(cosine_similarity(&[1.0, 2.0], &[1.0, 2.0]), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(cosine_similarity(&[1.0, 2.0], &[-1.0, -2.0]), -1.0, epsilon = 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[0.0, 3.0]), 0.0);
    }

    #[test]
    fn top_items_ties_prefer_smaller_index() {
        let mut trip = vec![];
        for u in 0..3 {
            trip.push((u, 0, 3.0));
        }
        for u in 0..5 {
            trip.push((u, 1, 4.0));
            trip.push((u, 2, 2.0));
        }
        let r = RatingsMatrix::new(5, 3, &trip).unwrap();
        assert_eq!(top_items_filter(&r, 2), vec![1, 2]);
        assert_eq!(top_items_filter(&r, 3), vec![1, 2, 0]);
    }

    #[test]
    fn ratings_validation() {
        assert!(RatingsMatrix::new(2, 2, &[(0, 0, 6.0)]).is_err());
        assert!(RatingsMatrix::new(2, 2, &[(0, 0, 3.0), (0, 0, 4.0)]).is_err());
        assert!(RatingsMatrix::new(0, 2, &[]).is_err());
    }

    #[test]
    fn load_triplets_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        fs::write(&path, "user,item,rating\nu1,m1,5\nu2,m1,3\nu2,m2,1\n").unwrap();
        let r = RatingsMatrix::load(&path).unwrap();
        assert_eq!((r.n_users(), r.n_items()), (2, 2));
        assert_eq!(r.to_dense(), DMatrix::from_row_slice(2, 2, &[5.0, 3.0, 0.0, 1.0]));
        fs::write(&path, "u1,m1,5\nu2,m1,x\n").unwrap();
        let err = RatingsMatrix::load(&path).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    fn small_ratings(seed: u64) -> RatingsMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trip = vec![];
        for i in 0..20 {
            for u in 0..60 {
                if rng.random::<f64>() < 0.4 {
                    trip.push((u, i, f64::from(rng.random_range(1..=5))));
                }
            }
        }
        RatingsMatrix::new(60, 20, &trip).unwrap()
    }

    #[test]
    fn full_ratings_recover_embedding_and_zero_ratings_give_zero() {
        let r = small_ratings(5);
        let emb = svd_embed(&r, 4, 0.5).unwrap();
        let items: Vec<usize> = (0..20).collect();
        let curve = cold_start_sim(&emb, &r, &items, &[0, 5, 1000], 1, 3).unwrap();
        assert_eq!(curve.mean[0], 0.0);
        assert_abs_diff_eq!(curve.mean[2], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(curve.p5[2], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn simulation_is_reproducible() {
        let r = small_ratings(6);
        let emb = svd_embed(&r, 4, 0.5).unwrap();
        let a = cold_start_sim(&emb, &r, &[0, 3], &[1, 4, 8], 42, 5).unwrap();
        let b = cold_start_sim(&emb, &r, &[0, 3], &[1, 4, 8], 42, 5).unwrap();
        assert_eq!(a, b);
        assert!(cold_start_sim(&emb, &r, &[0], &[4, 4], 42, 5).is_err());
    }

    #[test]
    fn synthetic_ratings_density_and_range() {
        let r = synthetic_ratings(400, 30, 4, 0.1, 3).unwrap();
        let total: usize = (0..30).map(|i| r.count(i)).sum();
        assert!((total as f64 / (400.0 * 30.0) - 0.1).abs() < 0.02, "{total}");
        assert!((0..30).all(|i| r.count(i) >= 1));
        assert!(r.to_dense().iter().all(|&v| v == 0.0 || (1.0..=5.0).contains(&v)));
        assert_eq!(r, synthetic_ratings(400, 30, 4, 0.1, 3).unwrap());
    }

    #[test]
    fn embedding_dataset_uses_titles() {
        let r = small_ratings(7);
        let titles: HashMap<String, String> = [("3".to_string(), "Alien (1979)".to_string())].into();
        let d = embedding_dataset(&r, 4, 0.5, Some(&titles)).unwrap();
        assert_eq!(d.len(), 20);
        assert_eq!(d.target_dim(), 4);
        assert_eq!(d.items()[3].text, "Alien (1979)");
        assert_eq!(d.items()[4].text, "4");
    }
}
