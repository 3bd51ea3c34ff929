//! Balanced panel data: one treated unit observed alongside `N` control units
//! over `T` periods, plus the outcome transforms (historical differencing,
//! running demeaning, first differencing) that reduce fixed-effect estimators
//! to weight fits on transformed series.

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

/// A balanced panel. Period indices are 1-based in all public APIs; internal
/// storage is 0-based. `bound` is the box the outcomes are assumed to live in
/// (`|y| <= bound`); regret bounds quoted by the protocol module scale with it.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    treated: Vec<f64>,
    /// Unit-major: `controls[i][t]` is control unit `i+1` at period `t+1`.
    controls: Vec<Vec<f64>>,
    bound: f64,
}

impl Panel {
    /// Builds a panel, inferring the bound as `max(1, max |y|)`. Data larger
    /// than the unit box is accepted; callers can detect it via
    /// [`Panel::exceeds_unit_bound`] when a bound-sensitive guarantee is at stake.
    pub fn new(treated: Vec<f64>, controls: Vec<Vec<f64>>) -> Result<Self> {
        let mut panel = Panel { treated, controls, bound: 1.0 };
        panel.validate()?;
        panel.bound = panel.max_abs().max(1.0);
        Ok(panel)
    }

    /// Builds a panel with an explicit bound (must cover the data).
    pub fn with_bound(treated: Vec<f64>, controls: Vec<Vec<f64>>, bound: f64) -> Result<Self> {
        let panel = Panel { treated, controls, bound };
        panel.validate()?;
        if !bound.is_finite() || bound <= 0.0 {
            return Err(Error::Panel(format!("bound must be positive and finite, got {bound}")));
        }
        if panel.max_abs() > bound * (1.0 + 1e-12) {
            return Err(Error::Panel(format!(
                "declared bound {bound} is smaller than max |y| = {}",
                panel.max_abs()
            )));
        }
        Ok(panel)
    }

    fn validate(&self) -> Result<()> {
        let t = self.treated.len();
        if t == 0 {
            return Err(Error::Panel("panel has no periods".into()));
        }
        if self.controls.is_empty() {
            return Err(Error::Panel("panel has no control units".into()));
        }
        for (i, series) in self.controls.iter().enumerate() {
            if series.len() != t {
                return Err(Error::Panel(format!(
                    "control unit {} has {} periods, treated has {t}",
                    i + 1,
                    series.len()
                )));
            }
        }
        let bad = self
            .treated
            .iter()
            .chain(self.controls.iter().flatten())
            .any(|v| !v.is_finite());
        if bad {
            return Err(Error::Panel("panel contains non-finite values".into()));
        }
        Ok(())
    }

    /// Number of periods `T`.
    pub fn periods(&self) -> usize {
        self.treated.len()
    }

    /// Number of control units `N`.
    pub fn units(&self) -> usize {
        self.controls.len()
    }

    /// Treated series, all periods.
    pub fn treated(&self) -> &[f64] {
        &self.treated
    }

    /// Treated outcome at 1-based period `t`.
    pub fn treated_at(&self, t: usize) -> f64 {
        self.treated[t - 1]
    }

    /// Full series of control unit `i` (1-based).
    pub fn control_series(&self, i: usize) -> &[f64] {
        &self.controls[i - 1]
    }

    /// Control outcomes at 1-based period `t`, as the vector `y_t`.
    pub fn controls_at(&self, t: usize) -> Vec<f64> {
        self.controls.iter().map(|s| s[t - 1]).collect()
    }

    /// Declared outcome bound.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Largest absolute outcome in the panel.
    pub fn max_abs(&self) -> f64 {
        self.treated
            .iter()
            .chain(self.controls.iter().flatten())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// True when outcomes stray outside `[-1, 1]`, the box most of the stated
    /// regret bounds assume.
    pub fn exceeds_unit_bound(&self) -> bool {
        self.max_abs() > 1.0 + 1e-12
    }

    /// Stable 64-bit fingerprint of the panel contents (FNV-1a over the raw
    /// bit patterns), used to tie reports back to their inputs.
    pub fn hash64(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: f64| {
            for b in v.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        feed(self.treated.len() as u64 as f64);
        feed(self.controls.len() as u64 as f64);
        for v in &self.treated {
            feed(*v);
        }
        for series in &self.controls {
            for v in series {
                feed(*v);
            }
        }
        h
    }

    /// Reads a panel from CSV with header `t,y0,y1,...,yN`. Periods must be
    /// 1..T in order; positions in errors are 1-based.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    /// CSV parsing from any reader; see [`Panel::read_csv`].
    pub fn from_reader(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(line) => line?,
            None => return Err(Error::Panel("empty panel file".into())),
        };
        let cols = header.split(',').count();
        if cols < 3 {
            return Err(Error::Panel(format!(
                "header must have at least columns t,y0,y1; got {cols} columns"
            )));
        }
        let n_units = cols - 2;
        let mut treated = Vec::new();
        let mut controls = vec![Vec::new(); n_units];
        for (idx, line) in lines.enumerate() {
            let row = idx + 2; // 1-based, counting the header
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols {
                return Err(Error::Parse {
                    row,
                    col: fields.len().min(cols),
                    msg: format!("expected {cols} fields, found {}", fields.len()),
                });
            }
            let parse = |col: usize, s: &str| -> Result<f64> {
                s.trim().parse::<f64>().map_err(|e| Error::Parse {
                    row,
                    col: col + 1,
                    msg: format!("{e}: {s:?}"),
                })
            };
            let t_val = fields[0].trim().parse::<usize>().map_err(|e| Error::Parse {
                row,
                col: 1,
                msg: format!("{e}: {:?}", fields[0]),
            })?;
            if t_val != treated.len() + 1 {
                return Err(Error::Parse {
                    row,
                    col: 1,
                    msg: format!("periods must run 1..T in order; expected {}, got {t_val}", treated.len() + 1),
                });
            }
            treated.push(parse(1, fields[1])?);
            for (i, f) in fields[2..].iter().enumerate() {
                controls[i].push(parse(i + 2, f)?);
            }
        }
        Panel::new(treated, controls)
    }

    /// Writes the canonical CSV form; floats use the shortest representation
    /// that round-trips exactly, so read-back reproduces the panel bit for bit.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(self.to_csv_string().as_bytes())?;
        Ok(())
    }

    /// CSV serialization as a string; see [`Panel::write_csv`].
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("t,y0");
        for i in 1..=self.units() {
            let _ = write!(out, ",y{i}");
        }
        out.push('\n');
        for t in 1..=self.periods() {
            let _ = write!(out, "{t},{}", self.treated[t - 1]);
            for series in &self.controls {
                let _ = write!(out, ",{}", series[t - 1]);
            }
            out.push('\n');
        }
        out
    }
}

/// Outcome transform selector. All transforms keep the panel shape; the first
/// period always carries the raw levels so a weight fit on the transformed
/// data still pins down the scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    /// Identity: values are the raw outcomes.
    Levels,
    /// `y_t - mean(y_1..y_{t-1})` for `t >= 2`; period 1 keeps the level.
    /// This is the transform under which a two-way fixed-effects fit becomes
    /// a plain weight fit.
    HistoricalDiff,
    /// `y_t - mean(y_1..y_t)`: demeaning by the running mean through `t`.
    RunningDemean,
    /// `y_t - y_{t-1}` for `t >= 2`; period 1 keeps the level.
    FirstDiff,
}

/// A panel together with its transformed values and the treated-side offsets
/// needed to map transformed predictions back to levels:
/// `treated[t] = values.treated[t] + level_offsets[t]` for every period.
#[derive(Debug, Clone)]
pub struct TransformedPanel {
    pub kind: TransformKind,
    /// Transformed outcomes, stored as a panel in their own right. The bound
    /// doubles for the differencing transforms (a difference of two values in
    /// `[-B, B]` lives in `[-2B, 2B]`).
    pub values: Panel,
    /// Per-period additive offsets for the treated unit (0-based storage,
    /// `level_offsets[t-1]` belongs to period `t`).
    pub level_offsets: Vec<f64>,
}

impl TransformedPanel {
    /// Offset for 1-based period `t`.
    pub fn offset_at(&self, t: usize) -> f64 {
        self.level_offsets[t - 1]
    }
}

fn transform_series(series: &[f64], kind: TransformKind) -> (Vec<f64>, Vec<f64>) {
    let t_len = series.len();
    let mut values = Vec::with_capacity(t_len);
    let mut offsets = Vec::with_capacity(t_len);
    let mut running_sum = 0.0;
    for (idx, &y) in series.iter().enumerate() {
        let t = idx + 1;
        let (offset, value) = match kind {
            TransformKind::Levels => (0.0, y),
            TransformKind::HistoricalDiff => {
                if t == 1 {
                    (0.0, y)
                } else {
                    let mean = running_sum / (t - 1) as f64;
                    (mean, y - mean)
                }
            }
            TransformKind::RunningDemean => {
                let mean = (running_sum + y) / t as f64;
                (mean, y - mean)
            }
            TransformKind::FirstDiff => {
                if t == 1 {
                    (0.0, y)
                } else {
                    (series[idx - 1], y - series[idx - 1])
                }
            }
        };
        values.push(value);
        offsets.push(offset);
        running_sum += y;
    }
    (values, offsets)
}

/// Applies `kind` to every unit of the panel. The treated unit's offsets are
/// retained so predictions made in transformed coordinates can be mapped back
/// to levels.
pub fn transform(panel: &Panel, kind: TransformKind) -> TransformedPanel {
    let (treated_values, level_offsets) = transform_series(panel.treated(), kind);
    let control_values: Vec<Vec<f64>> = (1..=panel.units())
        .map(|i| transform_series(panel.control_series(i), kind).0)
        .collect();
    let bound = match kind {
        TransformKind::Levels => panel.bound(),
        _ => 2.0 * panel.bound(),
    };
    let values = Panel { treated: treated_values, controls: control_values, bound };
    TransformedPanel { kind, values, level_offsets }
}

/// Historical differencing (see [`TransformKind::HistoricalDiff`]).
pub fn historical_diff(panel: &Panel) -> TransformedPanel {
    transform(panel, TransformKind::HistoricalDiff)
}

/// Running demeaning (see [`TransformKind::RunningDemean`]).
pub fn running_demean(panel: &Panel) -> TransformedPanel {
    transform(panel, TransformKind::RunningDemean)
}

/// First differencing (see [`TransformKind::FirstDiff`]).
pub fn first_diff(panel: &Panel) -> TransformedPanel {
    transform(panel, TransformKind::FirstDiff)
}
