//! CSV and JSON file formats.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::ChainOutput;
use crate::model::SpatialDataset;
use crate::posterior::FitReport;
use crate::spatial::{CovarianceModel, Location};

/// Column roles of a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSchema {
    pub id: String,
    pub lat: String,
    pub lon: String,
    pub response: String,
    /// Regression covariates, in order.
    pub covariates: Vec<String>,
    /// Auxiliary covariates entering the similarity kernels.
    pub auxiliary: Vec<String>,
    pub intercept: bool,
}

impl Default for DataSchema {
    fn default() -> Self {
        DataSchema {
            id: "site_id".into(),
            lat: "lat".into(),
            lon: "lon".into(),
            response: "y".into(),
            covariates: vec!["x1".into(), "x2".into(), "x3".into()],
            auxiliary: vec!["z1".into(), "z2".into()],
            intercept: false,
        }
    }
}

impl DataSchema {
    /// Schema matching the columns of `data` as written by [`write_dataset`].
    pub fn for_dataset(data: &SpatialDataset) -> Self {
        DataSchema {
            covariates: data.covariate_names().to_vec(),
            auxiliary: data.z_names.clone(),
            intercept: data.with_intercept,
            ..DataSchema::default()
        }
    }
}

/// Header line identifying the run that produced a file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    pub fn comment(&self) -> String {
        format!("# bccr seed={} config_hash={}", self.seed, self.config_hash)
    }
}

fn parse_err(path: &Path, line: u64, column: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        column: column.to_string(),
        message: message.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    parse_err(path, line, "", e.to_string())
}

pub fn load_dataset(path: &Path, schema: &DataSchema) -> Result<SpatialDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let header_line = rdr.position().line().max(1);
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(path, header_line, name, "missing column"))
    };
    let id_col = find(&schema.id)?;
    let lat_col = find(&schema.lat)?;
    let lon_col = find(&schema.lon)?;
    let y_col = find(&schema.response)?;
    let x_cols = schema.covariates.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let z_cols = schema.auxiliary.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;

    let mut locs = Vec::new();
    let mut y = Vec::new();
    let mut xs = vec![Vec::new(); x_cols.len()];
    let mut zs = vec![Vec::new(); z_cols.len()];
    let mut seen = std::collections::HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let number = |col: usize| -> Result<f64> {
            let name = &headers[col];
            let cell = rec
                .get(col)
                .ok_or_else(|| parse_err(path, line, name, "missing value"))?;
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(path, line, name, format!("`{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, name, format!("`{cell}` is not finite")));
            }
            Ok(v)
        };
        let id = rec.get(id_col).unwrap_or_default().to_string();
        if id.is_empty() {
            return Err(parse_err(path, line, &schema.id, "empty site id"));
        }
        if let Some(first) = seen.insert(id.clone(), line) {
            return Err(parse_err(
                path,
                line,
                &schema.id,
                format!("duplicate site id `{id}` (first on line {first})"),
            ));
        }
        let loc = Location::new(id, number(lat_col)?, number(lon_col)?)
            .map_err(|e| parse_err(path, line, &schema.lat, e.to_string()))?;
        locs.push(loc);
        y.push(number(y_col)?);
        for (dst, &c) in xs.iter_mut().zip(&x_cols) {
            dst.push(number(c)?);
        }
        for (dst, &c) in zs.iter_mut().zip(&z_cols) {
            dst.push(number(c)?);
        }
    }
    if locs.is_empty() {
        return Err(parse_err(path, header_line, "", "no data rows"));
    }
    SpatialDataset::new(
        locs,
        y,
        xs,
        schema.covariates.clone(),
        zs,
        schema.auxiliary.clone(),
        schema.intercept,
    )
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Writes comment header lines then CSV rows.
fn write_csv(
    path: &Path,
    comments: &[String],
    header: &[String],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<()> {
    let mut out = create(path)?;
    for c in comments {
        writeln!(out, "{c}").map_err(|e| Error::io(path, e))?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .flush()
        .map_err(|e| Error::io(path, e))
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Writes the dataset with the default column names of [`DataSchema`].
pub fn write_dataset(path: &Path, data: &SpatialDataset, provenance: Option<&Provenance>) -> Result<()> {
    let schema = DataSchema::for_dataset(data);
    let mut header = vec![
        schema.id.clone(),
        schema.lat.clone(),
        schema.lon.clone(),
        schema.response.clone(),
    ];
    header.extend(schema.covariates.iter().cloned());
    header.extend(schema.auxiliary.iter().cloned());
    let x = data.covariate_columns();
    let rows = (0..data.n()).map(|i| {
        let mut row = vec![
            data.locs[i].id.clone(),
            fmt_f64(data.locs[i].lat),
            fmt_f64(data.locs[i].lon),
            fmt_f64(data.y[i]),
        ];
        row.extend(x.iter().map(|c| fmt_f64(c[i])));
        row.extend(data.z_aux.iter().map(|c| fmt_f64(c[i])));
        row
    });
    write_csv(
        path,
        &provenance.map(|p| p.comment()).into_iter().collect::<Vec<_>>(),
        &header,
        rows,
    )
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_fit_report(path: &Path) -> Result<FitReport> {
    read_json(path)
}

/// `site_id,cluster` with one-based modal clusters.
pub fn write_labels(path: &Path, report: &FitReport, provenance: &Provenance) -> Result<()> {
    let rows = report
        .site_ids
        .iter()
        .zip(&report.modal_labels)
        .map(|(id, l)| vec![id.clone(), l.to_string()]);
    write_csv(
        path,
        &[provenance.comment()],
        &["site_id".into(), "cluster".into()],
        rows,
    )
}

/// Reads `site_id,cluster` pairs, in file order.
pub fn read_labels(path: &Path) -> Result<Vec<(String, usize)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let header_line = rdr.position().line().max(1);
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(path, header_line, name, "missing column"))
    };
    let (id_col, c_col) = (col("site_id")?, col("cluster")?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let cell = rec.get(c_col).unwrap_or_default();
        let c = cell
            .parse()
            .map_err(|_| parse_err(path, line, "cluster", format!("`{cell}` is not a cluster label")))?;
        out.push((rec.get(id_col).unwrap_or_default().to_string(), c));
    }
    Ok(out)
}

/// One row per retained draw with the scalar parameters.
pub fn write_trace(path: &Path, out: &ChainOutput, cov: &CovarianceModel, provenance: &Provenance) -> Result<()> {
    let mut header: Vec<String> = ["iteration", "k_active", "k", "tau_y", "sigma2", "lambda"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let kernels = cov.kernel_labels();
    header.push("alpha_identity".into());
    header.extend(kernels.iter().map(|k| format!("alpha_{k}")));
    header.extend(kernels.iter().map(|k| format!("kappa_{k}")));
    header.push("log_lik".into());
    let identity = cov.alpha_dim() > kernels.len();
    let rows = out
        .states
        .iter()
        .zip(&out.iterations)
        .zip(&out.per_obs_logdens)
        .map(|((s, it), ld)| {
            let mut row = vec![
                it.to_string(),
                s.k_active().to_string(),
                s.k().to_string(),
                fmt_f64(s.tau_y),
                fmt_f64(s.sigma2),
                fmt_f64(s.lambda),
            ];
            if !identity {
                row.push(fmt_f64(0.0));
            }
            row.extend(s.alphas.iter().map(|&a| fmt_f64(a)));
            row.extend(s.kappas.iter().map(|&k| fmt_f64(k)));
            row.push(fmt_f64(ld.iter().sum()));
            row
        });
    write_csv(path, &[provenance.comment()], &header, rows)
}

/// Any serializable records as CSV under a provenance header.
pub fn write_records<T: Serialize>(path: &Path, header: &[&str], records: &[T], provenance: &Provenance) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "{}", provenance.comment()).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(header)?;
    for r in records {
        w.serialize(r)?;
    }
    w.into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?
        .flush()
        .map_err(|e| Error::io(path, e))
}

/// Expected CSV header for the county housing-cost data.
pub const GEORGIA_COLUMNS: [&str; 10] = ["site_id", "lat", "lon", "y", "x1", "x2", "x3", "z1", "z2", "z3"];

pub fn georgia_schema() -> DataSchema {
    DataSchema {
        covariates: vec!["x1".into(), "x2".into(), "x3".into()],
        auxiliary: vec!["z1".into(), "z2".into(), "z3".into()],
        intercept: true,
        ..DataSchema::default()
    }
}

pub fn georgia_template() -> String {
    [
        "# y: median monthly housing cost",
        "# x1: unemployment rate (%), x2: property tax, x3: median home value",
        "# z1: White population (%), z2: median age, z3: population",
        &GEORGIA_COLUMNS.join(","),
    ]
    .join("\n")
        + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::toy_dataset;

    fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn schema_xz() -> DataSchema {
        DataSchema {
            covariates: vec!["x1".into()],
            auxiliary: vec!["z1".into()],
            intercept: true,
            ..DataSchema::default()
        }
    }

    #[test]
    fn three_rows() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "d.csv",
            "site_id,lat,lon,y,x1,z1\na,31,-84,1.5,0.2,3\nb,32,-83,2.5,0.4,1\nc,33,-82,0.5,0.9,2\n",
        );
        let d = load_dataset(&p, &schema_xz()).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.p(), 2);
        assert_eq!(d.y, vec![1.5, 2.5, 0.5]);
        assert_eq!(d.z_aux, vec![vec![3.0, 1.0, 2.0]]);
    }

    #[test]
    fn bad_cells_name_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "d.csv",
            "site_id,lat,lon,y,x1,z1\na,31,-84,1.5,0.2,3\nb,32,-83,oops,0.4,1\n",
        );
        match load_dataset(&p, &schema_xz()).unwrap_err() {
            Error::Parse { line, column, .. } => {
                assert_eq!(line, 3);
                assert_eq!(column, "y");
            }
            e => panic!("unexpected {e}"),
        }
        let p = write(dir.path(), "m.csv", "site_id,lat,lon,y,x1\na,31,-84,1.5,0.2\n");
        match load_dataset(&p, &schema_xz()).unwrap_err() {
            Error::Parse { column, .. } => assert_eq!(column, "z1"),
            e => panic!("unexpected {e}"),
        }
        let p = write(
            dir.path(),
            "dup.csv",
            "site_id,lat,lon,y,x1,z1\na,31,-84,1,0,0\na,32,-83,1,0,0\n",
        );
        let msg = load_dataset(&p, &schema_xz()).unwrap_err().to_string();
        assert!(msg.contains("duplicate") && msg.contains(":3:"), "{msg}");
        let p = write(dir.path(), "lat.csv", "site_id,lat,lon,y,x1,z1\na,95,-84,1,0,0\n");
        assert!(load_dataset(&p, &schema_xz()).is_err());
        let p = write(dir.path(), "empty.csv", "site_id,lat,lon,y,x1,z1\n");
        assert!(load_dataset(&p, &schema_xz()).is_err());
        assert!(matches!(
            load_dataset(&dir.path().join("none.csv"), &schema_xz()),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = toy_dataset(25, 4);
        let p = dir.path().join("sub/data.csv");
        let prov = Provenance {
            seed: 3,
            config_hash: "abc".into(),
        };
        write_dataset(&p, &data, Some(&prov)).unwrap();
        assert!(fs::read_to_string(&p)
            .unwrap()
            .starts_with("# bccr seed=3 config_hash=abc\n"));
        let back = load_dataset(&p, &DataSchema::for_dataset(&data)).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn template_parses_as_header() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = georgia_template();
        text.push_str("c1,33.1,-84.2,800,5.1,900,120000,60,38,15000\n");
        let p = write(dir.path(), "g.csv", &text);
        let d = load_dataset(&p, &georgia_schema()).unwrap();
        assert_eq!(d.n(), 1);
        assert_eq!(d.p(), 4);
        assert_eq!(d.z_names.len(), 3);
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "l.csv",
            "# bccr seed=1 config_hash=x\nsite_id,cluster\na,1\nb,2\n",
        );
        assert_eq!(
            read_labels(&p).unwrap(),
            vec![("a".to_string(), 1), ("b".to_string(), 2)]
        );
    }
}
