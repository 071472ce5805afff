use serde::{Deserialize, Serialize};

use super::{Chart, CuspBranch, CuspParams, Scenario, Sheet, SheetId, SheetKind};
use crate::error::{Error, Result};

/// On-disk scenario layout (TOML).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    #[serde(default)]
    pub name: String,
    pub chart: ChartDoc,
    pub sheets: Vec<SheetDoc>,
    /// Derived on output; ignored on input.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub folds: Vec<FoldDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartDoc {
    pub dim: usize,
    pub bounds: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub periodic: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SheetKindDoc {
    Smooth,
    CuspUpper,
    CuspLower,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SheetDoc {
    pub id: SheetId,
    pub kind: SheetKindDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<f64>>,
    /// Fold axis, one based.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FoldDoc {
    pub id: usize,
    pub axis: usize,
    pub offset: f64,
    pub sign: i32,
    pub pair: String,
    pub upper: SheetId,
    pub lower: SheetId,
}

impl ScenarioDoc {
    pub fn build(&self) -> Result<Scenario> {
        let chart = Chart::new(self.chart.dim, &self.chart.bounds, &self.chart.periodic)?;
        let mut sheets = Vec::with_capacity(self.sheets.len());
        for doc in &self.sheets {
            sheets.push(doc.build(chart.dim)?);
        }
        Scenario::from_sheets(&self.name, chart, sheets)
    }
}

impl SheetDoc {
    fn build(&self, dim: usize) -> Result<Sheet> {
        let branch = match self.kind {
            SheetKindDoc::Smooth => {
                let src = self.expr.as_deref().ok_or_else(|| {
                    Error::InvalidScenario(format!("smooth sheet {} has no expr", self.id))
                })?;
                return Sheet::smooth(self.id, src, dim);
            }
            SheetKindDoc::CuspUpper => CuspBranch::Upper,
            SheetKindDoc::CuspLower => CuspBranch::Lower,
        };
        if self.expr.is_some() {
            return Err(Error::InvalidScenario(format!(
                "cusp sheet {} takes parameters, not an expression",
                self.id
            )));
        }
        let axis = self.axis.unwrap_or(1);
        if axis == 0 || axis > dim {
            return Err(Error::InvalidScenario(format!(
                "sheet {}: fold axis {axis} outside 1..={dim}",
                self.id
            )));
        }
        let offset = self.offset.unwrap_or(0.0);
        let sign = self.sign.unwrap_or(1);
        let pair = self
            .pair
            .clone()
            .unwrap_or_else(|| format!("x{axis}={offset}:{sign}"));
        Ok(Sheet {
            id: self.id,
            kind: SheetKind::Cusp {
                branch,
                params: CuspParams {
                    b: self.b.unwrap_or(0.0),
                    a: self.a.clone().unwrap_or_else(|| vec![0.0; dim - 1]),
                    axis: axis - 1,
                    offset,
                    sign: sign as f64,
                    pair,
                },
            },
        })
    }
}

impl Scenario {
    /// Document form including the derived fold list.
    pub fn to_document(&self) -> ScenarioDoc {
        let dim = self.chart.dim;
        let sheets = self
            .sheets
            .iter()
            .map(|s| match &s.kind {
                SheetKind::Smooth { expr, .. } => SheetDoc {
                    id: s.id,
                    kind: SheetKindDoc::Smooth,
                    expr: Some(expr.to_string()),
                    b: None,
                    a: None,
                    axis: None,
                    offset: None,
                    sign: None,
                    pair: None,
                },
                SheetKind::Cusp { branch, params } => SheetDoc {
                    id: s.id,
                    kind: match branch {
                        CuspBranch::Upper => SheetKindDoc::CuspUpper,
                        CuspBranch::Lower => SheetKindDoc::CuspLower,
                    },
                    expr: None,
                    b: Some(params.b),
                    a: Some(params.a.clone()),
                    axis: Some(params.axis + 1),
                    offset: Some(params.offset),
                    sign: Some(params.sign as i32),
                    pair: Some(params.pair.clone()),
                },
            })
            .collect();
        ScenarioDoc {
            name: self.name.clone(),
            chart: ChartDoc {
                dim,
                bounds: self.chart.bounds[..dim].to_vec(),
                periodic: if self.chart.periodic[..dim].iter().any(|&p| p) {
                    self.chart.periodic[..dim].to_vec()
                } else {
                    Vec::new()
                },
            },
            sheets,
            folds: self
                .folds
                .iter()
                .map(|f| FoldDoc {
                    id: f.id,
                    axis: f.axis + 1,
                    offset: f.offset,
                    sign: f.sign as i32,
                    pair: f.pair.clone(),
                    upper: f.upper,
                    lower: f.lower,
                })
                .collect(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(&self.to_document()).expect("scenario documents serialize")
    }
}
