use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Every root cause the simulator knows how to plant. The default catalog
/// is the first five, the extended one all ten.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootCause {
    Statistics,
    JoinOrder,
    Index,
    DistributionKey,
    QueryRewrite,
    RedundantIndex,
    RepeatedSubquery,
    ComplexJoin,
    FullTableUpdate,
    LargeInsert,
}

impl RootCause {
    pub const ALL: [RootCause; 10] = [
        RootCause::Statistics,
        RootCause::JoinOrder,
        RootCause::Index,
        RootCause::DistributionKey,
        RootCause::QueryRewrite,
        RootCause::RedundantIndex,
        RootCause::RepeatedSubquery,
        RootCause::ComplexJoin,
        RootCause::FullTableUpdate,
        RootCause::LargeInsert,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn bit(self) -> u16 {
        1 << (self as u16)
    }

    pub fn name(self) -> &'static str {
        match self {
            RootCause::Statistics => "statistics",
            RootCause::JoinOrder => "join_order",
            RootCause::Index => "index",
            RootCause::DistributionKey => "distribution_key",
            RootCause::QueryRewrite => "query_rewrite",
            RootCause::RedundantIndex => "redundant_index",
            RootCause::RepeatedSubquery => "repeated_subquery",
            RootCause::ComplexJoin => "complex_join",
            RootCause::FullTableUpdate => "full_table_update",
            RootCause::LargeInsert => "large_insert",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.name() == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatalogKind {
    Default5,
    Extended10,
}

/// Ordered root-cause names. Position `j` in the catalog is root cause `j`
/// in every impact vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootCauseCatalog {
    causes: Vec<RootCause>,
}

impl RootCauseCatalog {
    pub fn new(kind: CatalogKind) -> Self {
        let n = match kind {
            CatalogKind::Default5 => 5,
            CatalogKind::Extended10 => 10,
        };
        RootCauseCatalog {
            causes: RootCause::ALL[..n].to_vec(),
        }
    }

    pub fn from_names(names: &[String]) -> Result<Self> {
        let causes = names
            .iter()
            .map(|n| {
                RootCause::from_name(n)
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown root cause `{n}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let cat = RootCauseCatalog { causes };
        if cat.causes.len() != 5 && cat.causes.len() != 10 {
            return Err(Error::InvalidConfig(
                "catalog must have 5 or 10 entries".into(),
            ));
        }
        if cat.causes[..] != RootCause::ALL[..cat.causes.len()] {
            return Err(Error::InvalidConfig(
                "catalog is not in canonical order".into(),
            ));
        }
        Ok(cat)
    }

    pub fn len(&self) -> usize {
        self.causes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.causes.is_empty()
    }

    pub fn causes(&self) -> &[RootCause] {
        &self.causes
    }

    pub fn names(&self) -> Vec<String> {
        self.causes.iter().map(|c| c.name().to_string()).collect()
    }

    pub fn position(&self, cause: RootCause) -> Option<usize> {
        self.causes.iter().position(|&c| c == cause)
    }
}
