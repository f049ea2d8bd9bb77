//! Spatial store network and the sales-loss objective.
//!
//! Closing a store loses its annual sales, except for the fraction
//! `recapture_gamma` that migrates to open stores within `radius_miles`.
//! Recaptured demand is split among the open neighbors of the closed store
//! in proportion to inverse distance, `w = 1 / (d + 0.01 mi)`.
//!
//! Stores are kept sorted by id, so a store's index is also its rank in id
//! order. Search code works on indices; ids appear at the API boundary.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const EARTH_RADIUS_MILES: f64 = 3958.8;
pub const DEFAULT_RADIUS_MILES: f64 = 0.5;
pub const DEFAULT_RECAPTURE_GAMMA: f64 = 0.5;
/// Added to every distance before inverting it into a recapture weight.
pub const DISTANCE_EPSILON_MILES: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatLon<T> {
    pub lat: T,
    pub lon: T,
}

impl<T: Scalar> LatLon<T> {
    pub fn new(lat: T, lon: T) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite() && self.lon.is_finite() && self.lat.abs() <= T::of(90.0) && self.lon.abs() <= T::of(180.0)
    }
}

/// Great-circle distance in miles.
pub fn haversine_miles<T: Scalar>(a: LatLon<T>, b: LatLon<T>) -> T {
    let two = T::of(2.0);
    let lat1 = a.lat.to_radians();
    let lat2 = b.lat.to_radians();
    let dlat = (b.lat - a.lat).to_radians();
    let dlon = (b.lon - a.lon).to_radians();

    let h = (dlat / two).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / two).sin().powi(2);
    // rounding can push h a hair above 1 for antipodal points
    let h = h.min(T::one());
    two * T::of(EARTH_RADIUS_MILES) * h.sqrt().asin()
}

/// One retail store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StoreRecord<T> {
    pub id: u64,
    #[serde(default)]
    pub name: String,
    #[serde(rename = "lat")]
    pub latitude: T,
    #[serde(rename = "lon")]
    pub longitude: T,
    #[serde(default)]
    pub county: String,
    #[serde(default)]
    pub city: String,
    #[serde(default)]
    pub zip: String,
    /// Annual sales with every store open.
    pub base_sales: T,
}

impl<T: Scalar> StoreRecord<T> {
    /// Record with only the fields the model needs; text fields empty.
    pub fn new(id: u64, latitude: T, longitude: T, base_sales: T) -> Self {
        Self {
            id,
            name: String::new(),
            latitude,
            longitude,
            county: String::new(),
            city: String::new(),
            zip: String::new(),
            base_sales,
        }
    }

    pub fn location(&self) -> LatLon<T> {
        LatLon::new(self.latitude, self.longitude)
    }

    fn validate(&self) -> Result<()> {
        if !self.location().is_valid() {
            return Err(Error::InvalidStore {
                id: self.id,
                reason: format!("coordinates ({}, {}) out of range", self.latitude, self.longitude),
            });
        }
        if !(self.base_sales.is_finite() && self.base_sales >= T::zero()) {
            return Err(Error::InvalidStore {
                id: self.id,
                reason: format!("base_sales {} must be finite and non-negative", self.base_sales),
            });
        }
        Ok(())
    }
}

/// Entry of the precomputed neighbor index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor<T> {
    pub index: usize,
    pub distance: T,
    /// Inverse-distance recapture weight.
    pub weight: T,
}

/// Serialized form of a [`StoreNetwork`].
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct NetworkDocument<T> {
    stores: Vec<StoreRecord<T>>,
    radius_miles: T,
    recapture_gamma: T,
}

/// Immutable set of stores plus the neighbor structure within `radius_miles`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", try_from = "NetworkDocument<T>", into = "NetworkDocument<T>")]
pub struct StoreNetwork<T> {
    stores: Vec<StoreRecord<T>>,
    radius_miles: T,
    recapture_gamma: T,
    index_of: HashMap<u64, usize>,
    neighbors: Vec<Vec<Neighbor<T>>>,
}

impl<T: Scalar> TryFrom<NetworkDocument<T>> for StoreNetwork<T> {
    type Error = Error;

    fn try_from(doc: NetworkDocument<T>) -> Result<Self> {
        StoreNetwork::new(doc.stores, doc.radius_miles, doc.recapture_gamma)
    }
}

impl<T: Scalar> From<StoreNetwork<T>> for NetworkDocument<T> {
    fn from(network: StoreNetwork<T>) -> Self {
        NetworkDocument {
            stores: network.stores,
            radius_miles: network.radius_miles,
            recapture_gamma: network.recapture_gamma,
        }
    }
}

impl<T: Scalar> StoreNetwork<T> {
    /// Builds the network and its neighbor index. Stores are reordered by id.
    pub fn new(mut stores: Vec<StoreRecord<T>>, radius_miles: T, recapture_gamma: T) -> Result<Self> {
        if !(radius_miles.is_finite() && radius_miles > T::zero()) {
            return Err(Error::Config(format!("radius_miles must be > 0, got {radius_miles}")));
        }
        if !(recapture_gamma >= T::zero() && recapture_gamma <= T::one()) {
            return Err(Error::Config(format!(
                "recapture_gamma must lie in [0, 1], got {recapture_gamma}"
            )));
        }
        for store in &stores {
            store.validate()?;
        }
        stores.sort_by_key(|s| s.id);
        let mut index_of = HashMap::with_capacity(stores.len());
        for (i, store) in stores.iter().enumerate() {
            if index_of.insert(store.id, i).is_some() {
                return Err(Error::DuplicateStore(store.id));
            }
        }

        let eps = T::of(DISTANCE_EPSILON_MILES);
        let mut neighbors = vec![Vec::new(); stores.len()];
        for i in 0..stores.len() {
            for j in (i + 1)..stores.len() {
                let distance = haversine_miles(stores[i].location(), stores[j].location());
                if distance <= radius_miles {
                    let weight = T::one() / (distance + eps);
                    neighbors[i].push(Neighbor {
                        index: j,
                        distance,
                        weight,
                    });
                    neighbors[j].push(Neighbor {
                        index: i,
                        distance,
                        weight,
                    });
                }
            }
        }
        for list in &mut neighbors {
            list.sort_by_key(|n| n.index);
        }

        Ok(Self {
            stores,
            radius_miles,
            recapture_gamma,
            index_of,
            neighbors,
        })
    }

    /// Network with the default 0.5 mile radius and γ = 0.5.
    pub fn with_defaults(stores: Vec<StoreRecord<T>>) -> Result<Self> {
        Self::new(stores, T::of(DEFAULT_RADIUS_MILES), T::of(DEFAULT_RECAPTURE_GAMMA))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Pretty-printed JSON with a trailing newline.
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.stores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stores.is_empty()
    }

    pub fn stores(&self) -> &[StoreRecord<T>] {
        &self.stores
    }

    pub fn store(&self, index: usize) -> &StoreRecord<T> {
        &self.stores[index]
    }

    pub fn radius_miles(&self) -> T {
        self.radius_miles
    }

    pub fn recapture_gamma(&self) -> T {
        self.recapture_gamma
    }

    pub fn index_of(&self, store_id: u64) -> Result<usize> {
        self.index_of
            .get(&store_id)
            .copied()
            .ok_or(Error::UnknownStore(store_id))
    }

    pub fn id_of(&self, index: usize) -> u64 {
        self.stores[index].id
    }

    pub fn ids_of(&self, indices: &[usize]) -> Vec<u64> {
        indices.iter().map(|&i| self.id_of(i)).collect()
    }

    /// Neighbors of the store at `index`, sorted by index.
    pub fn neighbors_of(&self, index: usize) -> &[Neighbor<T>] {
        &self.neighbors[index]
    }

    /// Ids of all other stores within `radius_miles`, ascending.
    pub fn neighbors_within(&self, store_id: u64) -> Result<Vec<u64>> {
        let index = self.index_of(store_id)?;
        Ok(self.neighbors[index].iter().map(|n| self.id_of(n.index)).collect())
    }

    pub fn total_base_sales(&self) -> T {
        self.stores.iter().map(|s| s.base_sales).sum()
    }

    pub fn mean_neighbor_degree(&self) -> f64 {
        if self.stores.is_empty() {
            return 0.0;
        }
        let edges: usize = self.neighbors.iter().map(Vec::len).sum();
        edges as f64 / self.stores.len() as f64
    }

    /// Sub-network of the stores accepted by `keep`, neighbor index rebuilt.
    pub fn subset(&self, keep: impl Fn(&StoreRecord<T>) -> bool) -> Result<Self> {
        let stores = self.stores.iter().filter(|s| keep(s)).cloned().collect();
        Self::new(stores, self.radius_miles, self.recapture_gamma)
    }

    fn check_state(&self, state: &ClosureState) -> Result<()> {
        if state.store_count() != self.len() {
            return Err(Error::InvalidState(format!(
                "state sized for {} stores used with a network of {}",
                state.store_count(),
                self.len()
            )));
        }
        Ok(())
    }

    fn has_open_neighbor(&self, state: &ClosureState, index: usize) -> bool {
        self.neighbors[index].iter().any(|n| !state.is_closed(n.index))
    }

    /// Sales of the open store at `index` under `state`.
    pub fn store_sales_at(&self, state: &ClosureState, index: usize) -> Result<T> {
        self.check_state(state)?;
        if index >= self.len() {
            return Err(Error::InvalidState(format!("store index {index} out of range")));
        }
        if state.is_closed(index) {
            return Err(Error::StoreClosed(self.id_of(index)));
        }
        let mut sales = self.stores[index].base_sales;
        for link in &self.neighbors[index] {
            let k = link.index;
            if !state.is_closed(k) {
                continue;
            }
            let open_weight: T = self.neighbors[k]
                .iter()
                .filter(|l| !state.is_closed(l.index))
                .map(|l| l.weight)
                .sum();
            // `index` itself is open and adjacent to k, so open_weight > 0
            sales += self.recapture_gamma * self.stores[k].base_sales * link.weight / open_weight;
        }
        Ok(sales)
    }

    /// Sales of store `store_id` under `state`.
    pub fn store_sales(&self, state: &ClosureState, store_id: u64) -> Result<T> {
        let index = self.index_of(store_id)?;
        self.store_sales_at(state, index)
    }

    /// Total sales of the open stores, summed store by store.
    pub fn network_sales(&self, state: &ClosureState) -> Result<T> {
        self.check_state(state)?;
        let mut total = T::zero();
        for index in 0..self.len() {
            if !state.is_closed(index) {
                total += self.store_sales_at(state, index)?;
            }
        }
        Ok(total)
    }

    /// Sales lost by closing `state.closed()`, via the closed-form expression
    /// `Σ_k b_k · (1 − γ·[k has an open neighbor])`.
    pub fn total_loss(&self, state: &ClosureState) -> Result<T> {
        self.check_state(state)?;
        let mut loss = T::zero();
        for &k in state.closed() {
            let base = self.stores[k].base_sales;
            if self.has_open_neighbor(state, k) {
                loss += base * (T::one() - self.recapture_gamma);
            } else {
                loss += base;
            }
        }
        Ok(loss)
    }

    /// Same quantity as [`total_loss`](Self::total_loss), computed as
    /// all-open network sales minus network sales under `state`.
    pub fn loss_by_recomputation(&self, state: &ClosureState) -> Result<T> {
        Ok(self.total_base_sales() - self.network_sales(state)?)
    }
}

/// Set of closed stores, as indices into a specific [`StoreNetwork`].
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ClosureState {
    closed: Vec<usize>,
    mask: Vec<bool>,
}

impl ClosureState {
    /// Every store open.
    pub fn all_open(store_count: usize) -> Self {
        Self {
            closed: Vec::new(),
            mask: vec![false; store_count],
        }
    }

    pub fn from_indices(store_count: usize, indices: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut state = Self::all_open(store_count);
        for index in indices {
            state.close(index)?;
        }
        Ok(state)
    }

    pub fn from_ids<T: Scalar>(network: &StoreNetwork<T>, ids: impl IntoIterator<Item = u64>) -> Result<Self> {
        let mut state = Self::all_open(network.len());
        for id in ids {
            state.close(network.index_of(id)?)?;
        }
        Ok(state)
    }

    pub fn close(&mut self, index: usize) -> Result<()> {
        if index >= self.mask.len() {
            return Err(Error::InvalidState(format!(
                "store index {index} out of range for {} stores",
                self.mask.len()
            )));
        }
        if self.mask[index] {
            return Err(Error::InvalidState(format!("store index {index} closed twice")));
        }
        self.mask[index] = true;
        let at = self.closed.partition_point(|&c| c < index);
        self.closed.insert(at, index);
        Ok(())
    }

    pub fn is_closed(&self, index: usize) -> bool {
        self.mask[index]
    }

    /// Closed indices, ascending.
    pub fn closed(&self) -> &[usize] {
        &self.closed
    }

    pub fn closed_count(&self) -> usize {
        self.closed.len()
    }

    pub fn store_count(&self) -> usize {
        self.mask.len()
    }

    pub fn closed_ids<T: Scalar>(&self, network: &StoreNetwork<T>) -> Vec<u64> {
        network.ids_of(&self.closed)
    }
}
