//! Datasets of (semantic item, target vector) pairs.
//!
//! Three on-disk formats are understood:
//!
//! * `items_json`: a JSON array of records `{id, text, covariates?, target?}`. `text` may be a
//!   string or any JSON value (serialized compactly after every `price` field is removed).
//!   House-listing records with a `metadata` object and no `text` are accepted as well: the
//!   whole record becomes the payload and `[1, area, bedrooms, bathrooms]` the covariates.
//!   Targets may instead come from a sidecar JSON object `{id: [values..]}`.
//! * `ratings_matrix`: sparse `user,item,rating` triplets; items become semantic items and
//!   their targets are truncated-SVD embeddings (see [`crate::coldstart`]).
//! * `lines`: one item per line whose target is the line's numeric value.
//!
//! Items without explicit covariates get the single intercept covariate `[1.0]`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticItem {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub covariates: Vec<f64>,
}

impl SemanticItem {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            covariates: vec![1.0],
        }
    }

    pub fn with_covariates(mut self, covariates: Vec<f64>) -> Self {
        self.covariates = covariates;
        self
    }
}

/// Items and their `T x n_d` target matrix. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    items: Vec<SemanticItem>,
    targets: DMatrix<f64>,
}

impl Dataset {
    pub fn new(items: Vec<SemanticItem>, targets: DMatrix<f64>) -> Result<Self> {
        if items.len() != targets.nrows() {
            return Err(Error::Validation(format!(
                "{} items but {} target rows",
                items.len(),
                targets.nrows()
            )));
        }
        let mut seen = HashSet::with_capacity(items.len());
        let covariate_dim = items.first().map(|it| it.covariates.len());
        for (t, item) in items.iter().enumerate() {
            if !seen.insert(item.id.as_str()) {
                return Err(Error::Validation(format!("duplicate item id `{}`", item.id)));
            }
            if item.text.is_empty() {
                return Err(Error::Validation(format!("item `{}` has empty text", item.id)));
            }
            if Some(item.covariates.len()) != covariate_dim {
                return Err(Error::Validation(format!(
                    "item `{}` has {} covariates, expected {}",
                    item.id,
                    item.covariates.len(),
                    covariate_dim.unwrap_or(0)
                )));
            }
            if item.covariates.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!(
                    "item `{}` has a non-finite covariate",
                    item.id
                )));
            }
            if targets.row(t).iter().any(|y| !y.is_finite()) {
                return Err(Error::Validation(format!(
                    "item `{}` has a non-finite target",
                    item.id
                )));
            }
        }
        Ok(Self { items, targets })
    }

    /// One-dimensional convenience constructor.
    pub fn from_scalar_targets(items: Vec<SemanticItem>, targets: &[f64]) -> Result<Self> {
        let targets = DMatrix::from_column_slice(targets.len(), 1, targets);
        Self::new(items, targets)
    }

    pub fn items(&self) -> &[SemanticItem] {
        &self.items
    }

    pub fn targets(&self) -> &DMatrix<f64> {
        &self.targets
    }

    pub fn target(&self, t: usize) -> DVector<f64> {
        self.targets.row(t).transpose()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn target_dim(&self) -> usize {
        self.targets.ncols()
    }

    pub fn covariate_dim(&self) -> usize {
        self.items.first().map_or(0, |it| it.covariates.len())
    }

    /// Rows `indices` (in the given order) as a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let items = indices.iter().map(|&t| self.items[t].clone()).collect();
        let targets = self.targets.select_rows(indices);
        Dataset { items, targets }
    }

    pub fn map_targets(&self, f: impl Fn(f64) -> f64) -> Dataset {
        Dataset {
            items: self.items.clone(),
            targets: self.targets.map(f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    ItemsJson,
    RatingsMatrix,
    Lines,
}

impl std::str::FromStr for DataFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "items_json" => Ok(Self::ItemsJson),
            "ratings_matrix" => Ok(Self::RatingsMatrix),
            "lines" => Ok(Self::Lines),
            other => Err(Error::Config(format!("unknown data format `{other}`"))),
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: DataFormat) -> Result<Dataset> {
    let path = path.as_ref();
    match format {
        DataFormat::ItemsJson => load_items_json(path, None),
        DataFormat::Lines => load_lines(path),
        DataFormat::RatingsMatrix => {
            let ratings = crate::coldstart::RatingsMatrix::load(path)?;
            let k = crate::coldstart::DEFAULT_EMBEDDING_DIM
                .min(ratings.n_users())
                .min(ratings.n_items());
            crate::coldstart::embedding_dataset(&ratings, k, 0.5, None)
        }
    }
}

/// Loads an items file; when `sidecar` is given, targets are looked up there by id.
pub fn load_items_json(path: &Path, sidecar: Option<&Path>) -> Result<Dataset> {
    let display = path.display().to_string();
    let raw = fs::read_to_string(path)?;
    if raw.trim().is_empty() {
        return Err(Error::parse(&display, "file", "empty file"));
    }
    let value: Value = serde_json::from_str(&raw).map_err(|e| {
        Error::parse(&display, format!("line {} column {}", e.line(), e.column()), e)
    })?;
    let Value::Array(records) = value else {
        return Err(Error::parse(&display, "top level", "expected a JSON array of items"));
    };

    let sidecar_targets = match sidecar {
        Some(p) => Some(load_sidecar(p)?),
        None => None,
    };

    let mut items = Vec::with_capacity(records.len());
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(records.len());
    for (index, record) in records.iter().enumerate() {
        let context = format!("record {index}");
        let (item, target) =
            parse_record(record).map_err(|msg| Error::parse(&display, &context, msg))?;
        let target = match (&sidecar_targets, target) {
            (Some(map), _) => map.get(&item.id).cloned().ok_or_else(|| {
                Error::parse(&display, &context, format!("no sidecar target for `{}`", item.id))
            })?,
            (None, Some(t)) => t,
            (None, None) => {
                return Err(Error::parse(&display, &context, "record has no target"));
            }
        };
        items.push(item);
        rows.push(target);
    }
    Dataset::new(items, rows_to_matrix(&display, &rows)?)
}

fn load_sidecar(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let display = path.display().to_string();
    let raw = fs::read_to_string(path)?;
    let map: BTreeMap<String, Value> = serde_json::from_str(&raw).map_err(|e| {
        Error::parse(&display, format!("line {} column {}", e.line(), e.column()), e)
    })?;
    map.into_iter()
        .map(|(id, v)| {
            let target = parse_target(&v)
                .ok_or_else(|| Error::parse(&display, format!("id `{id}`"), "bad target"))?;
            Ok((id, target))
        })
        .collect()
}

fn rows_to_matrix(path: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let dim = rows.first().map_or(0, Vec::len);
    if let Some((t, _)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
        return Err(Error::parse(
            path,
            format!("record {t}"),
            format!("target has inconsistent dimension (expected {dim})"),
        ));
    }
    Ok(DMatrix::from_fn(rows.len(), dim, |t, d| rows[t][d]))
}

fn parse_target(v: &Value) -> Option<Vec<f64>> {
    match v {
        Value::Number(n) => n.as_f64().map(|x| vec![x]),
        Value::Array(xs) => xs.iter().map(Value::as_f64).collect(),
        _ => None,
    }
}

fn id_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn parse_record(record: &Value) -> std::result::Result<(SemanticItem, Option<Vec<f64>>), String> {
    let Value::Object(obj) = record else {
        return Err("expected an object".into());
    };

    if !obj.contains_key("text") && obj.contains_key("metadata") {
        return parse_house_record(record);
    }

    let id = obj
        .get("id")
        .and_then(id_string)
        .ok_or("missing or invalid `id`")?;
    let text = match obj.get("text") {
        Some(Value::String(s)) => s.clone(),
        Some(other) => {
            let mut payload = other.clone();
            strip_price(&mut payload);
            payload.to_string()
        }
        None => return Err("missing `text`".into()),
    };
    let covariates = match obj.get("covariates") {
        None | Some(Value::Null) => vec![1.0],
        Some(v) => v
            .as_array()
            .and_then(|xs| xs.iter().map(Value::as_f64).collect::<Option<Vec<_>>>())
            .ok_or("`covariates` must be an array of numbers")?,
    };
    let target = match obj.get("target") {
        None | Some(Value::Null) => None,
        Some(v) => Some(parse_target(v).ok_or("`target` must be a number or array")?),
    };
    Ok((SemanticItem { id, text, covariates }, target))
}

/// A listing record: `{house_id, metadata: {bedrooms, bathrooms, area, zip_code, price}, ...}`.
fn parse_house_record(
    record: &Value,
) -> std::result::Result<(SemanticItem, Option<Vec<f64>>), String> {
    let id = record
        .get("house_id")
        .or_else(|| record.get("id"))
        .and_then(id_string)
        .ok_or("house record without `house_id`")?;
    let meta = &record["metadata"];
    let number = |key: &str| -> std::result::Result<f64, String> {
        meta.get(key)
            .and_then(Value::as_f64)
            .ok_or_else(|| format!("metadata.{key} missing or not a number"))
    };
    let covariates = vec![1.0, number("area")?, number("bedrooms")?, number("bathrooms")?];
    let target = meta.get("price").and_then(Value::as_f64).map(|p| vec![p]);

    let mut payload = record.clone();
    strip_price(&mut payload);
    let item = SemanticItem {
        id,
        text: payload.to_string(),
        covariates,
    };
    Ok((item, target))
}

/// Removes every object field named `price`, at any depth.
pub fn strip_price(value: &mut Value) {
    match value {
        Value::Object(map) => {
            map.remove("price");
            map.values_mut().for_each(strip_price);
        }
        Value::Array(xs) => xs.iter_mut().for_each(strip_price),
        _ => {}
    }
}

fn load_lines(path: &Path) -> Result<Dataset> {
    let display = path.display().to_string();
    let raw = fs::read_to_string(path)?;
    let mut items = Vec::new();
    let mut targets = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let value: f64 = text
            .parse()
            .map_err(|e| Error::parse(&display, format!("line {}", lineno + 1), e))?;
        items.push(SemanticItem::new(items.len().to_string(), text));
        targets.push(value);
    }
    if items.is_empty() {
        return Err(Error::parse(&display, "file", "no items"));
    }
    Dataset::from_scalar_targets(items, &targets)
}

#[derive(Serialize)]
struct ItemRecord<'a> {
    id: &'a str,
    text: &'a str,
    covariates: &'a [f64],
    target: Vec<f64>,
}

/// Writes the `items_json` form; loading the result reproduces `dataset` exactly.
pub fn save_items_json(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let records: Vec<ItemRecord> = dataset
        .items
        .iter()
        .enumerate()
        .map(|(t, item)| ItemRecord {
            id: &item.id,
            text: &item.text,
            covariates: &item.covariates,
            target: dataset.targets.row(t).iter().copied().collect(),
        })
        .collect();
    fs::write(path, serde_json::to_string_pretty(&records)?)?;
    Ok(())
}

/// Items `"0"`, `"1"`, ... `count - 1` whose targets are their own values.
pub fn integer_dataset(count: usize) -> Dataset {
    let items = (0..count)
        .map(|v| SemanticItem::new(v.to_string(), v.to_string()))
        .collect();
    let targets: Vec<f64> = (0..count).map(|v| v as f64).collect();
    Dataset::from_scalar_targets(items, &targets).expect("integer dataset is valid")
}

pub fn log_transform_targets(dataset: &Dataset) -> Result<Dataset> {
    for (t, item) in dataset.items.iter().enumerate() {
        if let Some(&value) = dataset.targets.row(t).iter().find(|&&y| y <= 0.0) {
            return Err(Error::NonPositiveTarget {
                id: item.id.clone(),
                value,
            });
        }
    }
    Ok(dataset.map_targets(f64::ln))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Self {
        Self {
            train_fraction,
            seed,
        }
    }

    /// `floor(fraction * T)`, kept at least one away from both ends.
    pub fn train_size(&self, total: usize) -> Result<usize> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Validation(format!(
                "train fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        if total < 2 {
            return Err(Error::Validation(format!(
                "cannot split {total} items into two non-empty sets"
            )));
        }
        let n = (self.train_fraction * total as f64).floor() as usize;
        Ok(n.clamp(1, total - 1))
    }
}

/// Uniform random partition. Both halves keep the original item order.
pub fn split(dataset: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    let n_train = spec.train_size(dataset.len())?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut test: Vec<usize> = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((dataset.subset(&train), dataset.subset(&test)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    const HOUSE: &str = r#"[{
        "house_id": 1,
        "metadata": {"bedrooms": 4, "bathrooms": 4.0, "area": 4053, "zip_code": "85255", "price": 869500},
        "image_descriptions": {
            "house_id": 1,
            "frontal_description": "The exterior showcases a desert landscape with mature cacti"
        }
    }]"#;

    #[test]
    fn house_record_gets_intercept_and_metadata_covariates() {
        let f = write_tmp(HOUSE);
        let d = load_dataset(f.path(), DataFormat::ItemsJson).unwrap();
        assert_eq!(d.len(), 1);
        let item = &d.items()[0];
        assert_eq!(item.id, "1");
        assert_eq!(item.covariates, vec![1.0, 4053.0, 4.0, 4.0]);
        assert_eq!(d.targets()[(0, 0)], 869500.0);
        assert!(!item.text.contains("price"));
        assert!(!item.text.contains("869500"));
        assert!(item.text.contains("85255"));
    }

    #[test]
    fn generic_record_with_object_text_is_price_stripped() {
        let f = write_tmp(
            r#"[{"id": "a", "text": {"title": "x", "nested": {"price": 3}}, "target": [1.0, 2.0]}]"#,
        );
        let d = load_dataset(f.path(), DataFormat::ItemsJson).unwrap();
        assert_eq!(d.items()[0].text, r#"{"nested":{},"title":"x"}"#);
        assert_eq!(d.target_dim(), 2);
        assert_eq!(d.items()[0].covariates, vec![1.0]);
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        let f = write_tmp("");
        assert!(matches!(
            load_dataset(f.path(), DataFormat::ItemsJson),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            load_dataset(f.path(), DataFormat::Lines),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn malformed_json_reports_line() {
        let f = write_tmp("[\n{\"id\": 1,\n\"text\": }\n]");
        match load_dataset(f.path(), DataFormat::ItemsJson) {
            Err(Error::Parse { context, .. }) => assert!(context.starts_with("line 3")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let f = write_tmp(
            r#"[{"id": "a", "text": "x", "target": 1}, {"id": "a", "text": "y", "target": 2}]"#,
        );
        assert!(matches!(
            load_dataset(f.path(), DataFormat::ItemsJson),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn sidecar_targets_by_id() {
        let items = write_tmp(r#"[{"id": "a", "text": "x"}, {"id": "b", "text": "y"}]"#);
        let side = write_tmp(r#"{"b": [2, 20], "a": [1, 10]}"#);
        let d = load_items_json(items.path(), Some(side.path())).unwrap();
        assert_eq!(d.target(1).as_slice(), &[2.0, 20.0]);
    }

    #[test]
    fn lines_file_of_512_integers() {
        let body: String = (0..512).map(|v| format!("{v}\n")).collect();
        let f = write_tmp(&body);
        let d = load_dataset(f.path(), DataFormat::Lines).unwrap();
        assert_eq!(d.len(), 512);
        assert_eq!(d.target_dim(), 1);
        assert_eq!(d.targets()[(300, 0)], 300.0);
        assert_eq!(d, integer_dataset(512));
    }

    #[test]
    fn log_transform_values_and_errors() {
        let items = vec![SemanticItem::new("h", "house"), SemanticItem::new("u", "unit")];
        let d = Dataset::from_scalar_targets(items.clone(), &[869500.0, 1.0]).unwrap();
        let logged = log_transform_targets(&d).unwrap();
        assert!((logged.targets()[(0, 0)] - 13.675_673).abs() < 1e-5);
        assert_eq!(logged.targets()[(1, 0)], 0.0);

        let bad = Dataset::from_scalar_targets(items, &[5.0, 0.0]).unwrap();
        match log_transform_targets(&bad) {
            Err(Error::NonPositiveTarget { id, .. }) => assert_eq!(id, "u"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let d = integer_dataset(10);
        let (a, b) = split(&d, SplitSpec::new(0.8, 7)).unwrap();
        assert_eq!((a.len(), b.len()), (8, 2));
        let (a2, _) = split(&d, SplitSpec::new(0.8, 7)).unwrap();
        assert_eq!(a, a2);

        let d = integer_dataset(512);
        let (a, b) = split(&d, SplitSpec::new(0.8, 7)).unwrap();
        assert_eq!(a.len(), (0.8f64 * 512.0).floor() as usize);
        assert_eq!(a.len() + b.len(), 512);

        let (c, _) = split(&d, SplitSpec::new(0.8, 8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn split_rejects_bad_specs() {
        let d = integer_dataset(10);
        assert!(split(&d, SplitSpec::new(1.0, 0)).is_err());
        assert!(split(&d, SplitSpec::new(0.0, 0)).is_err());
        assert!(split(&integer_dataset(1), SplitSpec::new(0.5, 0)).is_err());
        // tiny fractions still leave one item on each side
        let (a, b) = split(&d, SplitSpec::new(0.01, 0)).unwrap();
        assert_eq!((a.len(), b.len()), (1, 9));
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 2usize..200, frac in 0.01f64..0.99, seed in any::<u64>()) {
            let d = integer_dataset(n);
            let (a, b) = split(&d, SplitSpec::new(frac, seed)).unwrap();
            let mut ids: Vec<&str> = a.items().iter().chain(b.items()).map(|i| i.id.as_str()).collect();
            prop_assert_eq!(ids.len(), n);
            ids.sort_unstable();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
            prop_assert!(!a.is_empty() && !b.is_empty());
        }

        #[test]
        fn log_then_exp_is_identity(ys in proptest::collection::vec(1e-6f64..1e9, 1..20)) {
            let items = (0..ys.len()).map(|i| SemanticItem::new(i.to_string(), "x")).collect();
            let d = Dataset::from_scalar_targets(items, &ys).unwrap();
            let back = log_transform_targets(&d).unwrap().map_targets(f64::exp);
            for (a, b) in back.targets().iter().zip(d.targets().iter()) {
                prop_assert!(((a - b) / b).abs() <= 1e-12);
            }
        }

        #[test]
        fn save_load_is_idempotent(ys in proptest::collection::vec(-1e6f64..1e6, 1..10)) {
            let items = (0..ys.len())
                .map(|i| SemanticItem::new(format!("id{i}"), format!("item \"{i}\"")).with_covariates(vec![1.0, i as f64 * 0.5]))
                .collect();
            let d = Dataset::from_scalar_targets(items, &ys).unwrap();
            let f = tempfile::NamedTempFile::new().unwrap();
            save_items_json(&d, f.path()).unwrap();
            let once = load_dataset(f.path(), DataFormat::ItemsJson).unwrap();
            save_items_json(&once, f.path()).unwrap();
            let twice = load_dataset(f.path(), DataFormat::ItemsJson).unwrap();
            prop_assert_eq!(&once, &d);
            prop_assert_eq!(&twice, &once);
        }
    }
}
