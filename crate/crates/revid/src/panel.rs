//! Firm panel data model, CSV ingestion and two-period pairing.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default maximum number of distinct shifter values treated as discrete.
pub const DEFAULT_MAX_Z_LEVELS: usize = 10;

/// Column-name map for the observed fields of a panel CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub id: String,
    pub t: String,
    pub r: String,
    pub m: String,
    pub k: String,
    pub l: String,
    pub z: String,
    pub mx: String,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            id: "id".into(),
            t: "t".into(),
            r: "r".into(),
            m: "m".into(),
            k: "k".into(),
            l: "l".into(),
            z: "z".into(),
            mx: "mx".into(),
        }
    }
}

/// Latent columns carried by simulated panels, written with a `true_` prefix.
pub const TRUTH_COLUMNS: [&str; 5] = ["omega", "markup", "p", "y", "eps"];

/// Latent values of one simulated firm-period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Latent {
    pub omega: f64,
    pub markup: f64,
    pub p: f64,
    pub y: f64,
    pub eps: f64,
}

/// One firm-period observation.
#[derive(Debug, Clone, PartialEq)]
pub struct FirmRecord {
    pub firm_id: String,
    pub period: i64,
    /// Log revenue including measurement error.
    pub r: f64,
    /// Log material.
    pub m: f64,
    /// Log capital.
    pub k: f64,
    /// Log labor.
    pub l: f64,
    /// Demand shifter.
    pub z: f64,
    /// Material expenditure in currency units.
    pub mx: f64,
    pub latent: Option<Latent>,
}

/// Column-wise latent truth; missing cells are NaN.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Truth {
    pub omega: Vec<f64>,
    pub markup: Vec<f64>,
    pub p: Vec<f64>,
    pub y: Vec<f64>,
    pub eps: Vec<f64>,
}

impl Truth {
    fn with_capacity(n: usize) -> Self {
        Self {
            omega: Vec::with_capacity(n),
            markup: Vec::with_capacity(n),
            p: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            eps: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, v: Option<Latent>) {
        let v = v.unwrap_or(Latent {
            omega: f64::NAN,
            markup: f64::NAN,
            p: f64::NAN,
            y: f64::NAN,
            eps: f64::NAN,
        });
        self.omega.push(v.omega);
        self.markup.push(v.markup);
        self.p.push(v.p);
        self.y.push(v.y);
        self.eps.push(v.eps);
    }

    fn get(&self, i: usize) -> Latent {
        Latent {
            omega: self.omega[i],
            markup: self.markup[i],
            p: self.p[i],
            y: self.y[i],
            eps: self.eps[i],
        }
    }

    fn column(&self, name: &str) -> &[f64] {
        match name {
            "omega" => &self.omega,
            "markup" => &self.markup,
            "p" => &self.p,
            "y" => &self.y,
            _ => &self.eps,
        }
    }
}

/// Validated, immutable firm panel stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct FirmPanel {
    pub ids: Vec<String>,
    pub period: Vec<i64>,
    pub r: Vec<f64>,
    pub m: Vec<f64>,
    pub k: Vec<f64>,
    pub l: Vec<f64>,
    pub z: Vec<f64>,
    pub mx: Vec<f64>,
    pub truth: Option<Truth>,
    /// True when the shifter takes few enough distinct values to be treated as discrete.
    pub z_discrete: bool,
    /// Rows dropped at ingestion because a required cell was empty.
    pub dropped: usize,
}

impl FirmPanel {
    /// Builds a panel from records, validating positivity, finiteness and key uniqueness.
    pub fn from_records(records: Vec<FirmRecord>, max_z_levels: usize) -> Result<Self> {
        let n = records.len();
        let has_truth = records.iter().any(|r| r.latent.is_some());
        let mut p = FirmPanel {
            ids: Vec::with_capacity(n),
            period: Vec::with_capacity(n),
            r: Vec::with_capacity(n),
            m: Vec::with_capacity(n),
            k: Vec::with_capacity(n),
            l: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
            mx: Vec::with_capacity(n),
            truth: has_truth.then(|| Truth::with_capacity(n)),
            z_discrete: false,
            dropped: 0,
        };
        let mut seen = HashSet::with_capacity(n);
        for (row, rec) in records.into_iter().enumerate() {
            for (name, v) in [
                ("r", rec.r),
                ("m", rec.m),
                ("k", rec.k),
                ("l", rec.l),
                ("z", rec.z),
                ("mx", rec.mx),
            ] {
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        column: name.into(),
                        row,
                    });
                }
            }
            if rec.mx <= 0.0 {
                return Err(Error::InvalidStructure(format!(
                    "material expenditure must be positive (row {row})"
                )));
            }
            if !seen.insert((rec.firm_id.clone(), rec.period)) {
                return Err(Error::Duplicate {
                    id: rec.firm_id,
                    period: rec.period,
                });
            }
            p.ids.push(rec.firm_id);
            p.period.push(rec.period);
            p.r.push(rec.r);
            p.m.push(rec.m);
            p.k.push(rec.k);
            p.l.push(rec.l);
            p.z.push(rec.z);
            p.mx.push(rec.mx);
            if let Some(t) = p.truth.as_mut() {
                t.push(rec.latent);
            }
        }
        p.z_discrete = z_levels(&p.z).len() <= max_z_levels;
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Record at row `i`.
    pub fn record(&self, i: usize) -> FirmRecord {
        FirmRecord {
            firm_id: self.ids[i].clone(),
            period: self.period[i],
            r: self.r[i],
            m: self.m[i],
            k: self.k[i],
            l: self.l[i],
            z: self.z[i],
            mx: self.mx[i],
            latent: self.truth.as_ref().map(|t| t.get(i)),
        }
    }

    /// Distinct periods in increasing order.
    pub fn periods(&self) -> Vec<i64> {
        let mut v: Vec<i64> = self.period.clone();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Row counts per period.
    pub fn rows_per_period(&self) -> BTreeMap<i64, usize> {
        let mut out = BTreeMap::new();
        for &t in &self.period {
            *out.entry(t).or_insert(0) += 1;
        }
        out
    }

    /// Row indices of one period, in storage order.
    pub fn rows_of(&self, t: i64) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.period[i] == t).collect()
    }

    /// Writes the panel as CSV with default column names and `true_` latent columns.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = ["id", "t", "r", "m", "k", "l", "z", "mx"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        if self.truth.is_some() {
            header.extend(TRUTH_COLUMNS.iter().map(|c| format!("true_{c}")));
        }
        out.write_record(&header)?;
        let mut row = Vec::with_capacity(header.len());
        for i in 0..self.len() {
            row.clear();
            row.push(self.ids[i].clone());
            row.push(self.period[i].to_string());
            for v in [
                self.r[i], self.m[i], self.k[i], self.l[i], self.z[i], self.mx[i],
            ] {
                row.push(fmt_f64(v));
            }
            if let Some(t) = &self.truth {
                for c in TRUTH_COLUMNS {
                    row.push(fmt_f64(t.column(c)[i]));
                }
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes the panel to a file path.
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Formats a float with the shortest representation that round-trips; NaN becomes empty.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// Sorted distinct values of a column.
pub fn z_levels(z: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = z.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Reads and validates a panel CSV from a file.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<FirmPanel> {
    let f = std::fs::File::open(path)?;
    read_csv(f, schema, DEFAULT_MAX_Z_LEVELS)
}

/// Reads and validates a panel CSV from any reader.
pub fn read_csv<R: Read>(rdr: R, schema: &Schema, max_z_levels: usize) -> Result<FirmPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(rdr);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let id_c = col(&schema.id)?;
    let t_c = col(&schema.t)?;
    let names = [
        &schema.r, &schema.m, &schema.k, &schema.l, &schema.z, &schema.mx,
    ];
    let mut num_c = [0usize; 6];
    for (slot, name) in num_c.iter_mut().zip(names) {
        *slot = col(name)?;
    }
    let truth_c: Vec<Option<usize>> = TRUTH_COLUMNS
        .iter()
        .map(|c| headers.iter().position(|h| h == format!("true_{c}")))
        .collect();
    let has_truth = truth_c.iter().any(Option::is_some);

    let mut records = Vec::new();
    let mut dropped = 0usize;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec.get(id_c).unwrap_or("");
        let t = rec.get(t_c).unwrap_or("");
        if id.is_empty()
            || t.is_empty()
            || num_c.iter().any(|&c| rec.get(c).unwrap_or("").is_empty())
        {
            dropped += 1;
            continue;
        }
        let period: i64 = t.parse().map_err(|_| Error::NonFinite {
            column: schema.t.clone(),
            row,
        })?;
        let mut vals = [0.0f64; 6];
        for (j, &c) in num_c.iter().enumerate() {
            vals[j] = parse_finite(rec.get(c).unwrap_or("")).ok_or_else(|| Error::NonFinite {
                column: names[j].clone(),
                row,
            })?;
        }
        let latent = if has_truth {
            let mut lv = [f64::NAN; 5];
            for (j, c) in truth_c.iter().enumerate() {
                if let Some(c) = c {
                    let s = rec.get(*c).unwrap_or("");
                    if !s.is_empty() {
                        lv[j] = s.parse().map_err(|_| Error::NonFinite {
                            column: format!("true_{}", TRUTH_COLUMNS[j]),
                            row,
                        })?;
                    }
                }
            }
            Some(Latent {
                omega: lv[0],
                markup: lv[1],
                p: lv[2],
                y: lv[3],
                eps: lv[4],
            })
        } else {
            None
        };
        records.push(FirmRecord {
            firm_id: id.to_string(),
            period,
            r: vals[0],
            m: vals[1],
            k: vals[2],
            l: vals[3],
            z: vals[4],
            mx: vals[5],
            latent,
        });
    }
    let mut panel = FirmPanel::from_records(records, max_z_levels)?;
    panel.dropped = dropped;
    Ok(panel)
}

fn parse_finite(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Latent truth aligned with the rows of a pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTruth {
    pub omega: Vec<f64>,
    pub omega_lag: Vec<f64>,
    pub markup: Vec<f64>,
    pub p: Vec<f64>,
    pub y: Vec<f64>,
    pub eps: Vec<f64>,
}

/// Firms observed in both t−1 and t, aligned row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelPair {
    pub t: i64,
    pub ids: Vec<String>,
    pub r: Vec<f64>,
    pub m: Vec<f64>,
    pub k: Vec<f64>,
    pub l: Vec<f64>,
    pub z: Vec<f64>,
    pub mx: Vec<f64>,
    pub m_lag: Vec<f64>,
    pub k_lag: Vec<f64>,
    pub l_lag: Vec<f64>,
    pub z_lag: Vec<f64>,
    pub truth: Option<PairTruth>,
    pub z_discrete: bool,
    /// Firms present in exactly one of the two periods.
    pub attrition: usize,
}

impl PanelPair {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Conditioning vector (k, l, z, m₋₁, k₋₁, l₋₁, z₋₁) of row `i`.
    pub fn v(&self, i: usize) -> [f64; 7] {
        [
            self.k[i],
            self.l[i],
            self.z[i],
            self.m_lag[i],
            self.k_lag[i],
            self.l_lag[i],
            self.z_lag[i],
        ]
    }

    /// Restricts the pair to the given rows, preserving order.
    pub fn subset(&self, rows: &[usize]) -> PanelPair {
        let pick = |v: &Vec<f64>| rows.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        PanelPair {
            t: self.t,
            ids: rows.iter().map(|&i| self.ids[i].clone()).collect(),
            r: pick(&self.r),
            m: pick(&self.m),
            k: pick(&self.k),
            l: pick(&self.l),
            z: pick(&self.z),
            mx: pick(&self.mx),
            m_lag: pick(&self.m_lag),
            k_lag: pick(&self.k_lag),
            l_lag: pick(&self.l_lag),
            z_lag: pick(&self.z_lag),
            truth: self.truth.as_ref().map(|t| PairTruth {
                omega: pick(&t.omega),
                omega_lag: pick(&t.omega_lag),
                markup: pick(&t.markup),
                p: pick(&t.p),
                y: pick(&t.y),
                eps: pick(&t.eps),
            }),
            z_discrete: self.z_discrete,
            attrition: self.attrition,
        }
    }
}

/// Inner-joins periods t−1 and t on firm id.
pub fn make_pair(panel: &FirmPanel, t: i64, min_rows: usize) -> Result<PanelPair> {
    let cur = panel.rows_of(t);
    if cur.is_empty() {
        return Err(Error::MissingPeriod(t));
    }
    let prev = panel.rows_of(t - 1);
    if prev.is_empty() {
        return Err(Error::MissingPeriod(t - 1));
    }
    let lag_index: HashMap<&str, usize> =
        prev.iter().map(|&i| (panel.ids[i].as_str(), i)).collect();
    let mut matched = Vec::with_capacity(cur.len());
    for &i in &cur {
        if let Some(&j) = lag_index.get(panel.ids[i].as_str()) {
            matched.push((i, j));
        }
    }
    let attrition = (cur.len() - matched.len()) + (prev.len() - matched.len());
    if matched.len() < min_rows {
        return Err(Error::TooFewRows {
            got: matched.len(),
            needed: min_rows,
            context: format!("matched firms for period {t}"),
        });
    }
    let cur_col = |v: &Vec<f64>| matched.iter().map(|&(i, _)| v[i]).collect::<Vec<f64>>();
    let lag_col = |v: &Vec<f64>| matched.iter().map(|&(_, j)| v[j]).collect::<Vec<f64>>();
    let truth = panel.truth.as_ref().map(|tr| PairTruth {
        omega: cur_col(&tr.omega),
        omega_lag: lag_col(&tr.omega),
        markup: cur_col(&tr.markup),
        p: cur_col(&tr.p),
        y: cur_col(&tr.y),
        eps: cur_col(&tr.eps),
    });
    Ok(PanelPair {
        t,
        ids: matched.iter().map(|&(i, _)| panel.ids[i].clone()).collect(),
        r: cur_col(&panel.r),
        m: cur_col(&panel.m),
        k: cur_col(&panel.k),
        l: cur_col(&panel.l),
        z: cur_col(&panel.z),
        mx: cur_col(&panel.mx),
        m_lag: lag_col(&panel.m),
        k_lag: lag_col(&panel.k),
        l_lag: lag_col(&panel.l),
        z_lag: lag_col(&panel.z),
        truth,
        z_discrete: panel.z_discrete,
        attrition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = "id,t,r,m,k,l,z,mx\nA,1,1.0,0.5,0.1,0.2,0,1.6\nB,1,1.1,0.4,0.2,0.1,1,1.5\nC,2,0.9,0.3,0.0,0.0,0,1.3\n";

    #[test]
    fn reads_small_csv() {
        let p = read_csv(SMALL.as_bytes(), &Schema::default(), 10).unwrap();
        assert_eq!(p.len(), 3);
        assert!(p.z_discrete);
        assert!(p.truth.is_none());
        assert_eq!(p.rows_per_period()[&1], 2);
    }

    #[test]
    fn missing_column_is_named() {
        let csv = "id,t,r,m,k,l,z\nA,1,1,1,1,1,0\n";
        match read_csv(csv.as_bytes(), &Schema::default(), 10) {
            Err(Error::MissingColumn(c)) => assert_eq!(c, "mx"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_cells_drop_rows() {
        let csv = "id,t,r,m,k,l,z,mx\nA,1,1,1,1,1,0,2\nB,1,,1,1,1,0,2\n";
        let p = read_csv(csv.as_bytes(), &Schema::default(), 10).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.dropped, 1);
    }

    #[test]
    fn non_finite_and_duplicates_rejected() {
        let csv = "id,t,r,m,k,l,z,mx\nA,1,inf,1,1,1,0,2\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &Schema::default(), 10),
            Err(Error::NonFinite { .. })
        ));
        let csv = "id,t,r,m,k,l,z,mx\nA,1,1,1,1,1,0,2\nA,1,1,1,1,1,0,2\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &Schema::default(), 10),
            Err(Error::Duplicate { .. })
        ));
    }

    #[test]
    fn custom_schema() {
        let csv = "firm,year,rev,mat,cap,lab,shift,spend\nA,1,1,1,1,1,0,2\n";
        let schema = Schema {
            id: "firm".into(),
            t: "year".into(),
            r: "rev".into(),
            m: "mat".into(),
            k: "cap".into(),
            l: "lab".into(),
            z: "shift".into(),
            mx: "spend".into(),
        };
        assert_eq!(read_csv(csv.as_bytes(), &schema, 10).unwrap().len(), 1);
    }

    #[test]
    fn pair_counts_attrition() {
        let csv = "id,t,r,m,k,l,z,mx\nA,1,1,1,1,1,0,2\nB,1,1,1,1,1,0,2\nA,2,1,1,1,1,0,2\nB,2,1,1,1,1,0,2\nC,2,1,1,1,1,0,2\n";
        let p = read_csv(csv.as_bytes(), &Schema::default(), 10).unwrap();
        let pair = make_pair(&p, 2, 1).unwrap();
        assert_eq!(pair.len(), 2);
        assert_eq!(pair.attrition, 1);
        assert!(make_pair(&p, 2, 3).is_err());
        assert!(matches!(make_pair(&p, 1, 1), Err(Error::MissingPeriod(0))));
    }
}
