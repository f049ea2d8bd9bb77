//! Building networks from transaction CSVs or from a seeded generator.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use chrono::{Datelike, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{StoreNetwork, StoreRecord, DEFAULT_RADIUS_MILES, DEFAULT_RECAPTURE_GAMMA, EARTH_RADIUS_MILES};
use crate::scalar::Scalar;

/// CSV header names for each field. Defaults match the minimal projection
/// `date,store_id,store_name,city,county,zip,latitude,longitude,sale_amount`.
///
/// When `location` is set, coordinates are read from that single column in
/// `POINT (lon lat)` form, as in the Iowa liquor sales export, and the
/// latitude/longitude columns are not required.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub date: String,
    pub store_id: String,
    pub store_name: String,
    pub city: String,
    pub county: String,
    pub zip: String,
    pub latitude: String,
    pub longitude: String,
    pub location: Option<String>,
    pub sale_amount: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            date: "date".into(),
            store_id: "store_id".into(),
            store_name: "store_name".into(),
            city: "city".into(),
            county: "county".into(),
            zip: "zip".into(),
            latitude: "latitude".into(),
            longitude: "longitude".into(),
            location: None,
            sale_amount: "sale_amount".into(),
        }
    }
}

impl ColumnMap {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestOptions {
    pub columns: ColumnMap,
    /// Keep only rows dated in this calendar year.
    pub year: Option<i32>,
    pub radius_miles: f64,
    pub recapture_gamma: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            columns: ColumnMap::default(),
            year: None,
            radius_miles: DEFAULT_RADIUS_MILES,
            recapture_gamma: DEFAULT_RECAPTURE_GAMMA,
        }
    }
}

/// One parsed CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct TransactionRow {
    pub date: NaiveDate,
    pub store_id: u64,
    pub store_name: String,
    pub city: String,
    pub county: String,
    pub zip: String,
    pub latitude: Option<f64>,
    pub longitude: Option<f64>,
    pub sale_amount: f64,
}

/// Counters collected while aggregating.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_skipped: usize,
    pub rows_outside_year: usize,
    pub stores_without_coordinates: usize,
    pub conflicting_coordinates: usize,
    /// Sum of every accepted sale amount.
    pub total_sales: f64,
}

struct Columns {
    date: usize,
    store_id: usize,
    store_name: usize,
    city: usize,
    county: usize,
    zip: usize,
    coordinates: CoordinateColumns,
    sale_amount: usize,
}

enum CoordinateColumns {
    Separate { lat: usize, lon: usize },
    Point(usize),
}

impl Columns {
    fn resolve(headers: &csv::StringRecord, map: &ColumnMap) -> Result<Self> {
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        let coordinates = match &map.location {
            Some(name) => CoordinateColumns::Point(find(name)?),
            None => CoordinateColumns::Separate {
                lat: find(&map.latitude)?,
                lon: find(&map.longitude)?,
            },
        };
        Ok(Self {
            date: find(&map.date)?,
            store_id: find(&map.store_id)?,
            store_name: find(&map.store_name)?,
            city: find(&map.city)?,
            county: find(&map.county)?,
            zip: find(&map.zip)?,
            coordinates,
            sale_amount: find(&map.sale_amount)?,
        })
    }

    fn parse(&self, record: &csv::StringRecord) -> Option<TransactionRow> {
        let field = |i: usize| record.get(i).map(str::trim).unwrap_or("");
        let (latitude, longitude) = match self.coordinates {
            CoordinateColumns::Separate { lat, lon } => (parse_optional(field(lat))?, parse_optional(field(lon))?),
            CoordinateColumns::Point(i) => parse_point(field(i))?,
        };
        let sale_amount = parse_amount(field(self.sale_amount))?;
        Some(TransactionRow {
            date: parse_date(field(self.date))?,
            store_id: field(self.store_id).parse().ok()?,
            store_name: field(self.store_name).to_string(),
            city: field(self.city).to_string(),
            county: field(self.county).to_string(),
            zip: field(self.zip).to_string(),
            latitude,
            longitude,
            sale_amount,
        })
    }
}

fn parse_date(text: &str) -> Option<NaiveDate> {
    ["%Y-%m-%d", "%m/%d/%Y"]
        .iter()
        .find_map(|fmt| NaiveDate::parse_from_str(text, fmt).ok())
}

/// Empty means missing; anything else must parse.
fn parse_optional(text: &str) -> Option<Option<f64>> {
    if text.is_empty() {
        Some(None)
    } else {
        text.parse::<f64>().ok().filter(|v| v.is_finite()).map(Some)
    }
}

/// `POINT (lon lat)`; empty means missing.
fn parse_point(text: &str) -> Option<(Option<f64>, Option<f64>)> {
    if text.is_empty() {
        return Some((None, None));
    }
    let inner = text
        .strip_prefix("POINT")?
        .trim()
        .strip_prefix('(')?
        .strip_suffix(')')?;
    let mut parts = inner.split_whitespace();
    let lon: f64 = parts.next()?.parse().ok()?;
    let lat: f64 = parts.next()?.parse().ok()?;
    Some((Some(lat), Some(lon)))
}

fn parse_amount(text: &str) -> Option<f64> {
    let cleaned: String = text.chars().filter(|c| !matches!(c, '$' | ',')).collect();
    cleaned.parse::<f64>().ok().filter(|v| v.is_finite() && *v >= 0.0)
}

struct StoreAccumulator {
    name: String,
    city: String,
    county: String,
    zip: String,
    coordinates: Option<(f64, f64)>,
    sales: f64,
}

/// Groups transactions by store and sums their sales into `base_sales`.
///
/// Unparseable rows are skipped and counted. The first non-empty
/// coordinates seen for a store win; stores that never get coordinates are
/// left out of the network.
pub fn aggregate_transactions<T: Scalar, R: Read>(
    input: R,
    options: &IngestOptions,
) -> Result<(StoreNetwork<T>, IngestReport)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let columns = Columns::resolve(reader.headers()?, &options.columns)?;

    let mut report = IngestReport::default();
    let mut stores: BTreeMap<u64, StoreAccumulator> = BTreeMap::new();
    for record in reader.records() {
        report.rows_read += 1;
        let Some(row) = record.ok().and_then(|r| columns.parse(&r)) else {
            report.rows_skipped += 1;
            continue;
        };
        if options.year.is_some_and(|y| row.date.year() != y) {
            report.rows_outside_year += 1;
            continue;
        }
        report.total_sales += row.sale_amount;
        let entry = stores.entry(row.store_id).or_insert_with(|| StoreAccumulator {
            name: row.store_name.clone(),
            city: row.city.clone(),
            county: row.county.clone(),
            zip: row.zip.clone(),
            coordinates: None,
            sales: 0.0,
        });
        entry.sales += row.sale_amount;
        if let (Some(lat), Some(lon)) = (row.latitude, row.longitude) {
            match entry.coordinates {
                None => entry.coordinates = Some((lat, lon)),
                Some(first) if first != (lat, lon) => report.conflicting_coordinates += 1,
                Some(_) => {}
            }
        }
    }
    if report.rows_skipped > 0 {
        log::warn!("skipped {} unparseable rows", report.rows_skipped);
    }
    if report.conflicting_coordinates > 0 {
        log::warn!(
            "{} rows carried coordinates that differ from the store's first; kept the first",
            report.conflicting_coordinates
        );
    }

    let mut records = Vec::with_capacity(stores.len());
    for (id, acc) in stores {
        let Some((lat, lon)) = acc.coordinates else {
            report.stores_without_coordinates += 1;
            continue;
        };
        records.push(StoreRecord {
            id,
            name: acc.name,
            latitude: T::of(lat),
            longitude: T::of(lon),
            county: acc.county,
            city: acc.city,
            zip: acc.zip,
            base_sales: T::of(acc.sales),
        });
    }
    if report.stores_without_coordinates > 0 {
        log::warn!(
            "dropped {} stores without coordinates",
            report.stores_without_coordinates
        );
    }
    let network = StoreNetwork::new(records, T::of(options.radius_miles), T::of(options.recapture_gamma))?;
    Ok((network, report))
}

pub fn aggregate_csv_file<T: Scalar>(
    path: impl AsRef<Path>,
    options: &IngestOptions,
) -> Result<(StoreNetwork<T>, IngestReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    aggregate_transactions(file, options)
}

/// Stores whose county matches `county` case-insensitively.
pub fn filter_county<T: Scalar>(network: &StoreNetwork<T>, county: &str) -> Result<StoreNetwork<T>> {
    let wanted = county.trim().to_lowercase();
    let sub = network.subset(|s| s.county.trim().to_lowercase() == wanted)?;
    if sub.is_empty() {
        return Err(Error::EmptyCounty(county.to_string()));
    }
    Ok(sub)
}

/// Sorted, de-duplicated county names present in the network.
pub fn counties<T: Scalar>(network: &StoreNetwork<T>) -> Vec<String> {
    let mut names: Vec<String> = network.stores().iter().map(|s| s.county.clone()).collect();
    names.sort();
    names.dedup();
    names
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    fn is_valid(&self) -> bool {
        let vals = [self.min_lat, self.max_lat, self.min_lon, self.max_lon];
        vals.iter().all(|v| v.is_finite())
            && self.min_lat <= self.max_lat
            && self.min_lon <= self.max_lon
            && self.min_lat >= -90.0
            && self.max_lat <= 90.0
            && self.min_lon >= -180.0
            && self.max_lon <= 180.0
    }
}

/// Parameters of the clustered synthetic network generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_stores: usize,
    pub seed: u64,
    pub area: BoundingBox,
    pub cluster_count: usize,
    /// Std-dev of the Gaussian scatter around each cluster center.
    pub cluster_sigma_miles: f64,
    /// Log-normal `(mu, sigma)` of annual base sales.
    pub sales_lognormal: (f64, f64),
    pub radius_miles: f64,
    pub recapture_gamma: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_stores: 30,
            seed: 0,
            // roughly a county-sized patch of central Iowa
            area: BoundingBox {
                min_lat: 41.50,
                max_lat: 41.70,
                min_lon: -93.75,
                max_lon: -93.50,
            },
            cluster_count: 6,
            cluster_sigma_miles: 0.3,
            sales_lognormal: (12.0, 0.8),
            radius_miles: DEFAULT_RADIUS_MILES,
            recapture_gamma: DEFAULT_RECAPTURE_GAMMA,
        }
    }
}

impl SyntheticSpec {
    pub fn new(n_stores: usize, seed: u64) -> Self {
        Self {
            n_stores,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_stores < 2 {
            return Err(Error::Config(format!("n_stores must be >= 2, got {}", self.n_stores)));
        }
        if !self.area.is_valid() {
            return Err(Error::Config(format!("invalid bounding box {:?}", self.area)));
        }
        if self.cluster_count == 0 {
            return Err(Error::Config("cluster_count must be >= 1".into()));
        }
        if !(self.cluster_sigma_miles.is_finite() && self.cluster_sigma_miles >= 0.0) {
            return Err(Error::Config("cluster_sigma_miles must be >= 0".into()));
        }
        if !(self.sales_lognormal.1.is_finite() && self.sales_lognormal.1 >= 0.0) {
            return Err(Error::Config("sales log-normal sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Clustered random network, deterministic per `spec.seed`. Store ids are
/// `1..=n_stores`.
pub fn generate_synthetic<T: Scalar>(spec: &SyntheticSpec) -> Result<StoreNetwork<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let area = spec.area;
    let centers: Vec<(f64, f64)> = (0..spec.cluster_count)
        .map(|_| {
            (
                rng.random_range(area.min_lat..=area.max_lat),
                rng.random_range(area.min_lon..=area.max_lon),
            )
        })
        .collect();

    let miles_per_degree = EARTH_RADIUS_MILES * std::f64::consts::PI / 180.0;
    let scatter = Normal::new(0.0, spec.cluster_sigma_miles).map_err(|e| Error::Config(e.to_string()))?;
    let sales =
        LogNormal::new(spec.sales_lognormal.0, spec.sales_lognormal.1).map_err(|e| Error::Config(e.to_string()))?;

    let stores = (0..spec.n_stores)
        .map(|i| {
            let cluster = rng.random_range(0..centers.len());
            let (clat, clon) = centers[cluster];
            let north: f64 = scatter.sample(&mut rng);
            let east: f64 = scatter.sample(&mut rng);
            let lat = (clat + north / miles_per_degree).clamp(-90.0, 90.0);
            let lon = (clon + east / (miles_per_degree * clat.to_radians().cos())).clamp(-180.0, 180.0);
            StoreRecord {
                id: i as u64 + 1,
                name: format!("Store {}", i + 1),
                latitude: T::of(lat),
                longitude: T::of(lon),
                county: "Synthetic".into(),
                city: format!("Cluster {}", cluster + 1),
                zip: String::new(),
                base_sales: T::of(sales.sample(&mut rng)),
            }
        })
        .collect();
    StoreNetwork::new(stores, T::of(spec.radius_miles), T::of(spec.recapture_gamma))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "date,store_id,store_name,city,county,zip,latitude,longitude,sale_amount\n";

    #[test]
    fn sums_per_store() {
        let csv = format!(
            "{HEADER}2022-01-03,7,A,Ames,Story,50010,42.03,-93.62,10.50\n\
             2022-01-04,7,A,Ames,Story,50010,42.03,-93.62,4.25\n\
             01/05/2022,8,B,Ames,Story,50010,42.04,-93.61,\"1,000.00\"\n"
        );
        let (net, report) = aggregate_transactions::<f64, _>(csv.as_bytes(), &IngestOptions::default()).unwrap();
        assert_eq!(net.len(), 2);
        assert_eq!(net.store(0).base_sales, 14.75);
        assert_eq!(net.store(1).base_sales, 1000.0);
        assert_eq!(report.rows_read, 3);
        assert_eq!(report.total_sales, 1014.75);
    }

    #[test]
    fn empty_file_with_header_gives_empty_network() {
        let (net, report) = aggregate_transactions::<f64, _>(HEADER.as_bytes(), &IngestOptions::default()).unwrap();
        assert!(net.is_empty());
        assert_eq!(report.rows_read, 0);
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "date,store_id,store_name,city,county,zip,latitude,longitude\n";
        let err = aggregate_transactions::<f64, _>(csv.as_bytes(), &IngestOptions::default()).unwrap_err();
        assert!(matches!(&err, Error::MissingColumn(c) if c == "sale_amount"));
        assert!(err.to_string().contains("sale_amount"));
    }

    #[test]
    fn bad_rows_skipped_and_coordinate_conflicts_keep_first() {
        let csv = format!(
            "{HEADER}2022-01-03,7,A,Ames,Story,50010,42.03,-93.62,10\n\
             not-a-date,7,A,Ames,Story,50010,42.03,-93.62,10\n\
             2022-01-03,7,A,Ames,Story,50010,42.99,-93.00,5\n\
             2022-01-03,9,C,Ames,Story,50010,,,5\n"
        );
        let (net, report) = aggregate_transactions::<f64, _>(csv.as_bytes(), &IngestOptions::default()).unwrap();
        assert_eq!(report.rows_skipped, 1);
        assert_eq!(report.conflicting_coordinates, 1);
        assert_eq!(report.stores_without_coordinates, 1);
        assert_eq!(net.len(), 1);
        assert_eq!(net.store(0).latitude, 42.03);
        assert_eq!(net.store(0).base_sales, 15.0);
    }

    #[test]
    fn point_location_and_renamed_columns() {
        let columns = ColumnMap {
            date: "Date".into(),
            store_id: "Store Number".into(),
            store_name: "Store Name".into(),
            city: "City".into(),
            county: "County".into(),
            zip: "Zip Code".into(),
            location: Some("Store Location".into()),
            sale_amount: "Sale (Dollars)".into(),
            ..ColumnMap::default()
        };
        let csv = "Date,Store Number,Store Name,City,Zip Code,Store Location,County,Sale (Dollars)\n\
                   01/02/2022,2633,Hy-Vee,Des Moines,50320,POINT (-93.619787 41.572399),POLK,$162.84\n";
        let options = IngestOptions {
            columns,
            ..IngestOptions::default()
        };
        let (net, _) = aggregate_transactions::<f64, _>(csv.as_bytes(), &options).unwrap();
        let store = net.store(0);
        assert_eq!(store.id, 2633);
        assert_eq!((store.latitude, store.longitude), (41.572399, -93.619787));
        assert_eq!(store.base_sales, 162.84);
    }

    #[test]
    fn year_filter() {
        let csv = format!(
            "{HEADER}2021-12-31,7,A,Ames,Story,50010,42.03,-93.62,10\n\
             2022-01-01,7,A,Ames,Story,50010,42.03,-93.62,5\n"
        );
        let options = IngestOptions {
            year: Some(2022),
            ..IngestOptions::default()
        };
        let (net, report) = aggregate_transactions::<f64, _>(csv.as_bytes(), &options).unwrap();
        assert_eq!(net.store(0).base_sales, 5.0);
        assert_eq!(report.rows_outside_year, 1);
    }

    #[test]
    fn county_filter_is_case_insensitive_and_idempotent() {
        let stores = vec![
            StoreRecord {
                county: "Polk".into(),
                ..StoreRecord::new(1, 41.6, -93.6, 1.0)
            },
            StoreRecord {
                county: "STORY".into(),
                ..StoreRecord::new(2, 42.0, -93.6, 1.0)
            },
            StoreRecord {
                county: "polk".into(),
                ..StoreRecord::new(3, 41.61, -93.6, 1.0)
            },
        ];
        let net = StoreNetwork::<f64>::with_defaults(stores).unwrap();
        let polk = filter_county(&net, "POLK").unwrap();
        assert_eq!(polk.len(), 2);
        let again = filter_county(&polk, "polk").unwrap();
        assert_eq!(again.stores(), polk.stores());
        assert!(matches!(filter_county(&net, "Linn"), Err(Error::EmptyCounty(_))));
        assert_eq!(counties(&net), vec!["Polk".to_string(), "STORY".into(), "polk".into()]);
    }

    #[test]
    fn synthetic_is_deterministic_and_sized() {
        let spec = SyntheticSpec::new(25, 42);
        let a = generate_synthetic::<f64>(&spec).unwrap();
        let b = generate_synthetic::<f64>(&spec).unwrap();
        assert_eq!(a.stores(), b.stores());
        assert_eq!(a.len(), 25);
        assert!(generate_synthetic::<f64>(&SyntheticSpec::new(1, 0)).is_err());
    }
}
