use std::collections::HashSet;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius in kilometers (IUGG).
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// A site with geographic coordinates in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

impl Location {
    pub fn new(id: impl Into<String>, lat: f64, lon: f64) -> Result<Self> {
        let loc = Location {
            id: id.into(),
            lat,
            lon,
        };
        loc.validate()?;
        Ok(loc)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lat.is_finite() || !(-90.0..=90.0).contains(&self.lat) {
            return Err(Error::Input(format!(
                "site `{}`: latitude {} outside [-90, 90]",
                self.id, self.lat
            )));
        }
        if !self.lon.is_finite() || !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::Input(format!(
                "site `{}`: longitude {} outside [-180, 180]",
                self.id, self.lon
            )));
        }
        Ok(())
    }
}

/// Haversine distance in kilometers.
pub fn great_circle_distance(a: &Location, b: &Location) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    Ok(haversine_km(a.lat, a.lon, b.lat, b.lon))
}

fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    let h = h.clamp(0.0, 1.0);
    // atan2 form stays accurate near the antipode where asin(sqrt(h)) does not
    2.0 * EARTH_RADIUS_KM * h.sqrt().atan2((1.0 - h).sqrt())
}

/// Symmetric matrix of pairwise great-circle distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    d: DMatrix<f64>,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.d.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.d
    }

    /// Sample standard deviation of the strictly-upper-triangular entries.
    /// Returns `None` for fewer than three sites.
    pub fn off_diagonal_sd(&self) -> Option<f64> {
        let n = self.n();
        let vals: Vec<f64> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| self.d[(i, j)])
            .collect();
        if vals.len() < 2 {
            return None;
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
        Some(var.sqrt())
    }

    /// Rescales distances according to `scaling`.
    pub fn scaled(&self, scaling: GcdScaling) -> DistanceMatrix {
        let divisor = match scaling {
            GcdScaling::Kilometers => 1.0,
            GcdScaling::StdDev => match self.off_diagonal_sd() {
                Some(sd) if sd > 0.0 => sd,
                _ => 1.0,
            },
            GcdScaling::Divisor(v) => v,
        };
        DistanceMatrix { d: &self.d / divisor }
    }
}

/// How raw kilometer distances are rescaled before entering a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GcdScaling {
    /// Raw kilometers.
    Kilometers,
    /// Divide by the sample standard deviation of pairwise distances.
    StdDev,
    /// Divide by a fixed number of kilometers.
    Divisor(f64),
}

impl Default for GcdScaling {
    fn default() -> Self {
        GcdScaling::StdDev
    }
}

pub fn distance_matrix(locs: &[Location]) -> Result<DistanceMatrix> {
    if locs.is_empty() {
        return Err(Error::Input("distance matrix needs at least one location".into()));
    }
    let mut seen = HashSet::with_capacity(locs.len());
    for loc in locs {
        loc.validate()?;
        if !seen.insert(loc.id.as_str()) {
            return Err(Error::Input(format!("duplicate site id `{}`", loc.id)));
        }
    }
    let n = locs.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = haversine_km(locs[i].lat, locs[i].lon, locs[j].lat, locs[j].lon);
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    Ok(DistanceMatrix { d })
}
