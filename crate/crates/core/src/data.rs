//! Ratings data: CSV ingest, density filtering, train/test splits with replay
//! schedules, and synthetic data drawn from a ground-truth MCVQ model.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcvq::McvqModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Observation {
    pub user: usize,
    pub item: usize,
    pub rating: u8,
}

/// Sparse `(user, item, rating)` observations on the scale `1..=rho`.
///
/// Observations are kept sorted by `(user, item)` with at most one entry per
/// pair. `user_labels` and `item_labels` map compact indices back to the
/// identifiers found in the source data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingsDataset {
    n_users: usize,
    n_items: usize,
    rho: usize,
    observations: Vec<Observation>,
    user_labels: Vec<String>,
    item_labels: Vec<String>,
}

impl RatingsDataset {
    /// Builds a dataset, keeping the last of any duplicate `(user, item)`
    /// observations in input order.
    pub fn new(
        n_users: usize,
        n_items: usize,
        rho: usize,
        observations: Vec<Observation>,
        user_labels: Option<Vec<String>>,
        item_labels: Option<Vec<String>>,
    ) -> Result<Self> {
        if rho == 0 || rho > u8::MAX as usize {
            return Err(Error::Validation(format!("invalid rating scale {rho}")));
        }
        let mut dedup: BTreeMap<(usize, usize), u8> = BTreeMap::new();
        for o in observations {
            if o.user >= n_users || o.item >= n_items {
                return Err(Error::Validation(format!("observation {o:?} has an index out of range")));
            }
            if o.rating == 0 || o.rating as usize > rho {
                return Err(Error::Validation(format!("rating {} outside 1..={rho}", o.rating)));
            }
            dedup.insert((o.user, o.item), o.rating);
        }
        let observations = dedup
            .into_iter()
            .map(|((user, item), rating)| Observation { user, item, rating })
            .collect();
        let user_labels = user_labels.unwrap_or_else(|| (0..n_users).map(|u| format!("u{u}")).collect());
        let item_labels = item_labels.unwrap_or_else(|| (0..n_items).map(|j| format!("i{j}")).collect());
        if user_labels.len() != n_users || item_labels.len() != n_items {
            return Err(Error::Validation("label tables do not match dataset dimensions".into()));
        }
        Ok(Self { n_users, n_items, rho, observations, user_labels, item_labels })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn rho(&self) -> usize {
        self.rho
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn user_labels(&self) -> &[String] {
        &self.user_labels
    }

    pub fn item_labels(&self) -> &[String] {
        &self.item_labels
    }

    /// Each user's `(item, rating)` pairs in item order.
    pub fn by_user(&self) -> Vec<Vec<(usize, u8)>> {
        let mut out = vec![Vec::new(); self.n_users];
        for o in &self.observations {
            out[o.user].push((o.item, o.rating));
        }
        out
    }

    pub fn user_ratings(&self, user: usize) -> BTreeMap<usize, u8> {
        let start = self.observations.partition_point(|o| o.user < user);
        self.observations[start..]
            .iter()
            .take_while(|o| o.user == user)
            .map(|o| (o.item, o.rating))
            .collect()
    }

    pub fn item_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_items];
        for o in &self.observations {
            counts[o.item] += 1;
        }
        counts
    }

    pub fn user_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_users];
        for o in &self.observations {
            counts[o.user] += 1;
        }
        counts
    }

    /// Per-item rating histograms, `hist[j][r - 1]`.
    pub fn item_histograms(&self) -> Vec<Vec<usize>> {
        let mut hist = vec![vec![0; self.rho]; self.n_items];
        for o in &self.observations {
            hist[o.item][o.rating as usize - 1] += 1;
        }
        hist
    }

    /// Keeps only the given users and items, compacting indices in their
    /// original order.
    fn restrict(&self, keep_user: &[bool], keep_item: &[bool]) -> Result<Self> {
        let remap = |keep: &[bool]| {
            let mut next = 0;
            keep.iter()
                .map(|&k| {
                    if k {
                        next += 1;
                        Some(next - 1)
                    } else {
                        None
                    }
                })
                .collect::<Vec<_>>()
        };
        let user_map = remap(keep_user);
        let item_map = remap(keep_item);
        let observations = self
            .observations
            .iter()
            .filter_map(|o| {
                Some(Observation { user: user_map[o.user]?, item: item_map[o.item]?, rating: o.rating })
            })
            .collect();
        let pick = |labels: &[String], keep: &[bool]| {
            labels.iter().zip(keep).filter(|(_, &k)| k).map(|(l, _)| l.clone()).collect::<Vec<_>>()
        };
        let user_labels = pick(&self.user_labels, keep_user);
        let item_labels = pick(&self.item_labels, keep_item);
        Self::new(user_labels.len(), item_labels.len(), self.rho, observations, Some(user_labels), Some(item_labels))
    }
}

/// Column layout of a ratings CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub user_column: usize,
    pub item_column: usize,
    pub rating_column: usize,
    pub has_header: bool,
    pub delimiter: u8,
    pub rho: usize,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self { user_column: 0, item_column: 1, rating_column: 2, has_header: true, delimiter: b',', rho: 6 }
    }
}

/// Reads `(user, item, rating)` rows. Users and items are indexed in order of
/// first appearance; duplicate pairs keep the last rating.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<RatingsDataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, schema)
}

pub fn read_csv(reader: impl std::io::Read, schema: &CsvSchema) -> Result<RatingsDataset> {
    read_csv_indexed(reader, schema, None, None)
}

/// Reads a ratings CSV against fixed label tables, so that indices line up
/// with a previously written split. Unknown users or items are an error.
pub fn load_csv_indexed(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
    user_labels: Option<&[String]>,
    item_labels: Option<&[String]>,
) -> Result<RatingsDataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv_indexed(file, schema, user_labels, item_labels)
}

fn read_csv_indexed(
    reader: impl std::io::Read,
    schema: &CsvSchema,
    fixed_users: Option<&[String]>,
    fixed_items: Option<&[String]>,
) -> Result<RatingsDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(schema.has_header)
        .delimiter(schema.delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let table = |fixed: Option<&[String]>| -> HashMap<String, usize> {
        fixed.map(|ls| ls.iter().enumerate().map(|(i, l)| (l.clone(), i)).collect()).unwrap_or_default()
    };
    let mut users = table(fixed_users);
    let mut items = table(fixed_items);
    let mut user_labels = fixed_users.map(<[String]>::to_vec).unwrap_or_default();
    let mut item_labels = fixed_items.map(<[String]>::to_vec).unwrap_or_default();
    let mut observations = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |col: usize| {
            record.get(col).ok_or_else(|| Error::Parse { line, message: format!("missing column {col}") })
        };
        let user = field(schema.user_column)?;
        let item = field(schema.item_column)?;
        let raw_rating = field(schema.rating_column)?;
        let rating: i64 = raw_rating
            .parse()
            .map_err(|_| Error::Parse { line, message: format!("rating {raw_rating:?} is not an integer") })?;
        if rating < 1 || rating > schema.rho as i64 {
            return Err(Error::Validation(format!("line {line}: rating {rating} outside 1..={}", schema.rho)));
        }
        let intern = |map: &mut HashMap<String, usize>, labels: &mut Vec<String>, key: &str, fixed: bool| {
            if let Some(&idx) = map.get(key) {
                return Ok(idx);
            }
            if fixed {
                return Err(Error::Validation(format!("line {line}: unknown identifier {key:?}")));
            }
            labels.push(key.to_string());
            map.insert(key.to_string(), labels.len() - 1);
            Ok(labels.len() - 1)
        };
        let u = intern(&mut users, &mut user_labels, user, fixed_users.is_some())?;
        let i = intern(&mut items, &mut item_labels, item, fixed_items.is_some())?;
        observations.push(Observation { user: u, item: i, rating: rating as u8 });
    }
    RatingsDataset::new(
        user_labels.len(),
        item_labels.len(),
        schema.rho,
        observations,
        Some(user_labels),
        Some(item_labels),
    )
}

/// Writes `user,item,rating` rows using the dataset's labels.
pub fn write_csv(d: &RatingsDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["user", "item", "rating"])?;
    for o in &d.observations {
        w.write_record([&d.user_labels[o.user], &d.item_labels[o.item], &o.rating.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// Alternate user and item passes until nothing changes.
    #[default]
    FixedPoint,
    /// One user pass followed by one item pass.
    SinglePass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub min_ratings_per_user: usize,
    pub min_ratings_per_item: usize,
    pub n_test_users: usize,
    pub seed: u64,
    #[serde(default)]
    pub filter_mode: FilterMode,
}

/// Drops users and items with too few ratings.
pub fn density_filter(d: &RatingsDataset, spec: &SplitSpec) -> Result<RatingsDataset> {
    let mut keep_user = vec![true; d.n_users];
    let mut keep_item = vec![true; d.n_items];
    loop {
        let mut changed = false;
        for pass in [true, false] {
            let mut counts_u = vec![0usize; d.n_users];
            let mut counts_i = vec![0usize; d.n_items];
            for o in &d.observations {
                if keep_user[o.user] && keep_item[o.item] {
                    counts_u[o.user] += 1;
                    counts_i[o.item] += 1;
                }
            }
            let (keep, counts, min) = if pass {
                (&mut keep_user, counts_u, spec.min_ratings_per_user)
            } else {
                (&mut keep_item, counts_i, spec.min_ratings_per_item)
            };
            for (k, c) in keep.iter_mut().zip(counts) {
                if *k && c < min {
                    *k = false;
                    changed = true;
                }
            }
        }
        if !changed || spec.filter_mode == FilterMode::SinglePass {
            break;
        }
    }
    let out = d.restrict(&keep_user, &keep_item)?;
    if out.is_empty() {
        return Err(Error::EmptyAfterFilter);
    }
    Ok(out)
}

/// Per-test-user reveal schedules for the replay protocol. At `kappa` known
/// ratings the first `kappa` scheduled items are known and the rest are held
/// out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayMask {
    pub seed: u64,
    pub schedules: Vec<Vec<usize>>,
}

impl ReplayMask {
    pub fn known(&self, user: usize, kappa: usize) -> &[usize] {
        let s = &self.schedules[user];
        &s[..kappa.min(s.len())]
    }

    pub fn held_out(&self, user: usize, kappa: usize) -> &[usize] {
        let s = &self.schedules[user];
        &s[kappa.min(s.len())..]
    }

    /// Draws a fresh schedule for every user of `test`.
    pub fn shuffled(test: &RatingsDataset, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let schedules = test
            .by_user()
            .into_iter()
            .map(|rated| {
                let mut items: Vec<usize> = rated.into_iter().map(|(j, _)| j).collect();
                items.shuffle(&mut rng);
                items
            })
            .collect();
        Self { seed, schedules }
    }
}

/// A train/test split plus the index tables that tie it back to the filtered
/// dataset it was drawn from.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: RatingsDataset,
    pub test: RatingsDataset,
    pub mask: ReplayMask,
    /// Indices (in the source dataset) of the train users, in train order.
    pub train_users: Vec<usize>,
    /// Indices (in the source dataset) of the test users, in test order.
    pub test_users: Vec<usize>,
}

/// Splits users into train and test sets. Both keep the item index space of
/// `d`; test users get a seeded reveal schedule.
pub fn make_split(d: &RatingsDataset, spec: &SplitSpec) -> Result<Split> {
    if spec.n_test_users > 0 && spec.n_test_users >= d.n_users {
        return Err(Error::InvalidArgument(format!(
            "{} test users requested but only {} users are available",
            spec.n_test_users, d.n_users
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..d.n_users).collect();
    order.shuffle(&mut rng);
    let mut is_test = vec![false; d.n_users];
    for &u in &order[..spec.n_test_users] {
        is_test[u] = true;
    }
    let all_items = vec![true; d.n_items];
    let keep_train: Vec<bool> = is_test.iter().map(|t| !t).collect();
    let train = d.restrict_users(&keep_train, &all_items)?;
    let test = d.restrict_users(&is_test, &all_items)?;
    let mask = ReplayMask::shuffled(&test, spec.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    Ok(Split {
        train,
        test,
        mask,
        train_users: (0..d.n_users).filter(|&u| !is_test[u]).collect(),
        test_users: (0..d.n_users).filter(|&u| is_test[u]).collect(),
    })
}

impl RatingsDataset {
    /// Like `restrict` but allows an empty result.
    fn restrict_users(&self, keep_user: &[bool], keep_item: &[bool]) -> Result<Self> {
        let mut user_map = vec![None; self.n_users];
        let mut next = 0;
        for (u, &k) in keep_user.iter().enumerate() {
            if k {
                user_map[u] = Some(next);
                next += 1;
            }
        }
        let observations = self
            .observations
            .iter()
            .filter(|o| keep_item[o.item])
            .filter_map(|o| Some(Observation { user: user_map[o.user]?, item: o.item, rating: o.rating }))
            .collect();
        let user_labels =
            self.user_labels.iter().zip(keep_user).filter(|(_, &k)| k).map(|(l, _)| l.clone()).collect();
        Self::new(next, self.n_items, self.rho, observations, Some(user_labels), Some(self.item_labels.clone()))
    }
}

/// Samples a categorical index from `probs` (which must sum to ~1).
pub(crate) fn sample_categorical(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}

/// Draws a dataset from the MCVQ generative process: one attitude per VQ per
/// user, then for each present `(user, item)` pair a type from `P(T_j)` and a
/// rating from the binned multinomial of that `(item, type, attitude)`.
pub fn generate_synthetic(gt: &McvqModel, n_users: usize, density: f64, seed: u64) -> Result<RatingsDataset> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidArgument(format!("density must be in (0, 1], got {density}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (kk, m) = (gt.n_types(), gt.n_items());
    let mut observations = Vec::new();
    let mut attitudes = vec![0usize; kk];
    for user in 0..n_users {
        for (k, a) in attitudes.iter_mut().enumerate() {
            *a = sample_categorical(&mut rng, gt.attitude_prior_row(k));
        }
        for item in 0..m {
            if density < 1.0 && rng.random::<f64>() >= density {
                continue;
            }
            let k = sample_categorical(&mut rng, gt.type_row(item));
            let r = sample_categorical(&mut rng, gt.theta(item, k, attitudes[k])) + 1;
            observations.push(Observation { user, item, rating: r as u8 });
        }
    }
    RatingsDataset::new(n_users, m, gt.rho(), observations, None, None)
}

/// On-disk description of a split: seed, filter settings, the label tables
/// needed to map compact indices back to source identifiers, and the replay
/// schedules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub format: String,
    pub version: u32,
    pub spec: SplitSpec,
    pub rho: usize,
    pub item_labels: Vec<String>,
    pub train_user_labels: Vec<String>,
    pub test_user_labels: Vec<String>,
    pub mask: ReplayMask,
}

pub const SPLIT_FORMAT: &str = "acf-split";
pub const SPLIT_VERSION: u32 = 1;

impl SplitManifest {
    pub fn new(split: &Split, spec: &SplitSpec) -> Self {
        Self {
            format: SPLIT_FORMAT.into(),
            version: SPLIT_VERSION,
            spec: spec.clone(),
            rho: split.train.rho,
            item_labels: split.train.item_labels.clone(),
            train_user_labels: split.train.user_labels.clone(),
            test_user_labels: split.test.user_labels.clone(),
            mask: split.mask.clone(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let manifest: Self = serde_json::from_str(&text)?;
        if manifest.format != SPLIT_FORMAT || manifest.version != SPLIT_VERSION {
            return Err(Error::Format(format!(
                "unsupported split manifest {} v{}",
                manifest.format, manifest.version
            )));
        }
        Ok(manifest)
    }
}
