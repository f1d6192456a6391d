use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::kpi::KpiMatrix;
use super::log::LogVector;
use super::plan::{parse_plan, PlanDag};
use super::sql::{tokenize_sql, TokenSeq, Vocab};
use crate::error::{Error, Result};
use crate::synthgen::QuerySpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Pretrain,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Pretrain => "pretrain",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            "pretrain" => Ok(Split::Pretrain),
            other => Err(Error::Schema(format!("unknown split `{other}`"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One observed query with its four modalities.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryRecord {
    pub id: String,
    pub sql_text: String,
    pub sql: TokenSeq,
    pub plan: PlanDag,
    /// Raw (unnormalised) log counters.
    pub log: LogVector,
    /// Raw KPI series.
    pub kpis: KpiMatrix,
    pub runtime_s: f64,
    pub split: Split,
    /// Ground-truth impacts; present exactly for labeled slow queries.
    pub impacts: Option<Vec<f64>>,
    /// Simulator specification, when the record is synthetic.
    pub spec: Option<QuerySpec>,
}

impl QueryRecord {
    pub fn is_labeled(&self) -> bool {
        self.impacts.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Schema("empty record id".into()));
        }
        if !(self.runtime_s.is_finite() && self.runtime_s > 0.0) {
            return Err(Error::Schema(format!(
                "record `{}`: runtime_s must be positive",
                self.id
            )));
        }
        match (&self.impacts, self.split) {
            (Some(_), Split::Pretrain) => {
                return Err(Error::Schema(format!(
                    "record `{}`: labeled record in the pretrain split",
                    self.id
                )))
            }
            (None, Split::Train | Split::Val | Split::Test) => {
                return Err(Error::Schema(format!(
                    "record `{}`: split `{}` requires impacts",
                    self.id, self.split
                )))
            }
            _ => {}
        }
        if let Some(y) = &self.impacts {
            if y.iter().any(|v| !v.is_finite() || *v > 1.0) {
                return Err(Error::Schema(format!(
                    "record `{}`: impacts must be finite and at most 1",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("id".into(), json!(self.id));
        obj.insert("sql".into(), json!(self.sql_text));
        obj.insert("plan".into(), self.plan.to_json());
        obj.insert("log".into(), json!(self.log.to_map()));
        obj.insert("kpis".into(), json!(self.kpis.to_rows()));
        obj.insert("runtime_s".into(), json!(self.runtime_s));
        obj.insert("split".into(), json!(self.split.name()));
        if let Some(y) = &self.impacts {
            obj.insert("impacts".into(), json!(y));
        }
        if let Some(spec) = &self.spec {
            obj.insert(
                "spec".into(),
                serde_json::to_value(spec).expect("spec serialises"),
            );
        }
        Value::Object(obj)
    }

    /// Parse one record object. A missing `split` defaults to `train` for
    /// labeled records and `pretrain` otherwise.
    pub fn from_json(v: &Value, vocab: &Vocab) -> Result<Self> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::Schema("record is not an object".into()))?;
        let field = |k: &str| {
            obj.get(k)
                .ok_or_else(|| Error::Schema(format!("missing `{k}`")))
        };
        let id = field("id")?
            .as_str()
            .ok_or_else(|| Error::Schema("`id` must be a string".into()))?
            .to_string();
        let sql_text = field("sql")?
            .as_str()
            .ok_or_else(|| Error::Schema("`sql` must be a string".into()))?
            .to_string();
        let sql = tokenize_sql(&sql_text, vocab)?;
        let plan = parse_plan(field("plan")?)?;
        let log_raw: BTreeMap<String, f64> = serde_json::from_value(field("log")?.clone())
            .map_err(|e| Error::Schema(format!("`log`: {e}")))?;
        let log = LogVector::from_map(&log_raw)?;
        let rows: Vec<Vec<f64>> = serde_json::from_value(field("kpis")?.clone())
            .map_err(|e| Error::Schema(format!("`kpis`: {e}")))?;
        let kpis = KpiMatrix::from_rows(&rows)?;
        let runtime_s = field("runtime_s")?
            .as_f64()
            .ok_or_else(|| Error::Schema("`runtime_s` must be a number".into()))?;
        let impacts: Option<Vec<f64>> = match obj.get("impacts") {
            None | Some(Value::Null) => None,
            Some(y) => Some(
                serde_json::from_value(y.clone())
                    .map_err(|e| Error::Schema(format!("`impacts`: {e}")))?,
            ),
        };
        let split = match obj.get("split").and_then(Value::as_str) {
            Some(s) => Split::parse(s)?,
            None if impacts.is_some() => Split::Train,
            None => Split::Pretrain,
        };
        let spec = match obj.get("spec") {
            None | Some(Value::Null) => None,
            Some(s) => Some(
                serde_json::from_value(s.clone())
                    .map_err(|e| Error::Schema(format!("`spec`: {e}")))?,
            ),
        };
        let rec = QueryRecord {
            id,
            sql_text,
            sql,
            plan,
            log,
            kpis,
            runtime_s,
            split,
            impacts,
            spec,
        };
        rec.validate()?;
        Ok(rec)
    }
}
