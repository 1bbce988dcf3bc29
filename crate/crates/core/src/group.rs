//! Index sets over which group averages are taken.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupKind {
    /// `I x T` with both sides proper subsets.
    Block,
    /// `I x {all periods}`.
    Serial,
    /// `{all units} x T`.
    CrossSectional,
}

/// A validated group `G = I x T` with 0-based, strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSpec {
    kind: GroupKind,
    rows: Vec<usize>,
    cols: Vec<usize>,
    in_rows: Vec<bool>,
    in_cols: Vec<bool>,
}

fn check_indices(idx: &[usize], len: usize, side: &str) -> Result<()> {
    if idx.is_empty() {
        return Err(Error::InvalidInput(format!("group {side} set is empty")));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= len) {
        return Err(Error::InvalidInput(format!(
            "group {side} index {} out of range 1..={len}",
            bad + 1
        )));
    }
    if idx.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(format!(
            "group {side} indices must be strictly increasing without duplicates"
        )));
    }
    if idx.len() == len {
        return Err(Error::InvalidInput(format!(
            "group {side} set must be a proper subset (it covers all {len})"
        )));
    }
    Ok(())
}

fn membership(idx: &[usize], len: usize) -> Vec<bool> {
    let mut m = vec![false; len];
    for &i in idx {
        m[i] = true;
    }
    m
}

impl GroupSpec {
    /// Block group from 0-based row and column indices.
    pub fn block(rows: Vec<usize>, cols: Vec<usize>, n: usize, t: usize) -> Result<Self> {
        check_indices(&rows, n, "row")?;
        check_indices(&cols, t, "column")?;
        Ok(Self {
            kind: GroupKind::Block,
            in_rows: membership(&rows, n),
            in_cols: membership(&cols, t),
            rows,
            cols,
        })
    }

    pub fn serial(rows: Vec<usize>, n: usize, t: usize) -> Result<Self> {
        check_indices(&rows, n, "row")?;
        Ok(Self {
            kind: GroupKind::Serial,
            in_rows: membership(&rows, n),
            in_cols: vec![true; t],
            rows,
            cols: (0..t).collect(),
        })
    }

    pub fn cross_sectional(cols: Vec<usize>, n: usize, t: usize) -> Result<Self> {
        check_indices(&cols, t, "column")?;
        Ok(Self {
            kind: GroupKind::CrossSectional,
            in_rows: vec![true; n],
            in_cols: membership(&cols, t),
            rows: (0..n).collect(),
            cols,
        })
    }

    pub fn kind(&self) -> GroupKind {
        self.kind
    }

    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    /// `|G| = |I| * |T|`.
    pub fn size(&self) -> usize {
        self.rows.len() * self.cols.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.in_rows.len(), self.in_cols.len())
    }

    pub fn contains_row(&self, i: usize) -> bool {
        self.in_rows[i]
    }

    pub fn contains_col(&self, t: usize) -> bool {
        self.in_cols[t]
    }

    pub fn contains(&self, i: usize, t: usize) -> bool {
        self.in_rows[i] && self.in_cols[t]
    }

    /// Whether cell `(i, t)` belongs to the sample used by the restricted fit.
    pub fn in_restricted_sample(&self, i: usize, t: usize) -> bool {
        match self.kind {
            GroupKind::Block => !self.in_rows[i] && !self.in_cols[t],
            GroupKind::Serial => !self.in_rows[i],
            GroupKind::CrossSectional => !self.in_cols[t],
        }
    }

    /// 1-based description suitable for reports and config files.
    pub fn to_request(&self) -> GroupRequest {
        let one = |v: &[usize]| v.iter().map(|i| i + 1).collect::<Vec<_>>();
        match self.kind {
            GroupKind::Block => GroupRequest {
                kind: self.kind,
                rows: Some(one(&self.rows)),
                cols: Some(one(&self.cols)),
            },
            GroupKind::Serial => GroupRequest {
                kind: self.kind,
                rows: Some(one(&self.rows)),
                cols: None,
            },
            GroupKind::CrossSectional => GroupRequest {
                kind: self.kind,
                rows: None,
                cols: Some(one(&self.cols)),
            },
        }
    }
}

impl Serialize for GroupSpec {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_request().serialize(s)
    }
}

/// Unvalidated group description with 1-based indices, as written in JSON
/// configs: `{"kind":"block","rows":[1,2],"cols":[3,4]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupRequest {
    pub kind: GroupKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cols: Option<Vec<usize>>,
}

fn to_zero_based(v: &[usize], side: &str) -> Result<Vec<usize>> {
    v.iter()
        .map(|&i| {
            i.checked_sub(1)
                .ok_or_else(|| Error::InvalidInput(format!("group {side} indices are 1-based")))
        })
        .collect()
}

impl GroupRequest {
    /// Validate against panel dimensions.
    pub fn resolve(&self, n: usize, t: usize) -> Result<GroupSpec> {
        let need = |v: &Option<Vec<usize>>, field: &str| -> Result<Vec<usize>> {
            v.as_deref()
                .map(|v| to_zero_based(v, field))
                .transpose()?
                .ok_or_else(|| Error::InvalidInput(format!("group field `{field}` is required")))
        };
        match self.kind {
            GroupKind::Block => GroupSpec::block(need(&self.rows, "rows")?, need(&self.cols, "cols")?, n, t),
            GroupKind::Serial => GroupSpec::serial(need(&self.rows, "rows")?, n, t),
            GroupKind::CrossSectional => GroupSpec::cross_sectional(need(&self.cols, "cols")?, n, t),
        }
    }

    /// Parse either a JSON object or the inline form
    /// `block:1-5x10-20`, `serial:1-3,7`, `cross-sectional:4-6` (alias `cs:`).
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text.starts_with('{') {
            return serde_json::from_str(text)
                .map_err(|e| Error::InvalidInput(format!("invalid group JSON: {e}")));
        }
        let (kind, body) = text
            .split_once(':')
            .ok_or_else(|| Error::InvalidInput(format!("cannot parse group spec `{text}`")))?;
        match kind.trim() {
            "block" => {
                let (r, c) = body.split_once(['x', 'X']).ok_or_else(|| {
                    Error::InvalidInput(format!("block group needs ROWSxCOLS, got `{body}`"))
                })?;
                Ok(Self {
                    kind: GroupKind::Block,
                    rows: Some(parse_ranges(r)?),
                    cols: Some(parse_ranges(c)?),
                })
            }
            "serial" => Ok(Self {
                kind: GroupKind::Serial,
                rows: Some(parse_ranges(body)?),
                cols: None,
            }),
            "cross-sectional" | "cs" => Ok(Self {
                kind: GroupKind::CrossSectional,
                rows: None,
                cols: Some(parse_ranges(body)?),
            }),
            other => Err(Error::InvalidInput(format!("unknown group kind `{other}`"))),
        }
    }
}

/// Parse `1-5,8,10-12` into a list of 1-based indices.
pub fn parse_ranges(text: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidInput(format!("cannot parse index list `{text}`"));
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            return Err(bad());
        }
        match part.split_once('-') {
            Some((a, b)) => {
                let a: usize = a.trim().parse().map_err(|_| bad())?;
                let b: usize = b.trim().parse().map_err(|_| bad())?;
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    Ok(out)
}
