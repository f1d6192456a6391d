//! Execution-plan DAGs.
//!
//! Plans arrive as nested JSON objects `{op, est_rows, est_cost, children}`
//! with optional `table` / `columns` annotations. A node may carry an `id`,
//! and a child entry of the form `{"ref": <id>}` points back at an already
//! declared node, which is how shared sub-plans (and therefore DAGs) are
//! expressed. Edges run child -> parent, so the root is the unique node with
//! no outgoing edge.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OperatorKind {
    Scan,
    IndexScan,
    Filter,
    HashJoin,
    NestedLoopJoin,
    MergeJoin,
    Sort,
    Aggregate,
    Project,
    Exchange,
    Insert,
    Update,
    SubqueryScan,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 13] = [
        OperatorKind::Scan,
        OperatorKind::IndexScan,
        OperatorKind::Filter,
        OperatorKind::HashJoin,
        OperatorKind::NestedLoopJoin,
        OperatorKind::MergeJoin,
        OperatorKind::Sort,
        OperatorKind::Aggregate,
        OperatorKind::Project,
        OperatorKind::Exchange,
        OperatorKind::Insert,
        OperatorKind::Update,
        OperatorKind::SubqueryScan,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::Scan => "Scan",
            OperatorKind::IndexScan => "IndexScan",
            OperatorKind::Filter => "Filter",
            OperatorKind::HashJoin => "HashJoin",
            OperatorKind::NestedLoopJoin => "NestedLoopJoin",
            OperatorKind::MergeJoin => "MergeJoin",
            OperatorKind::Sort => "Sort",
            OperatorKind::Aggregate => "Aggregate",
            OperatorKind::Project => "Project",
            OperatorKind::Exchange => "Exchange",
            OperatorKind::Insert => "Insert",
            OperatorKind::Update => "Update",
            OperatorKind::SubqueryScan => "SubqueryScan",
        }
    }

    pub fn is_join(self) -> bool {
        matches!(
            self,
            OperatorKind::HashJoin | OperatorKind::NestedLoopJoin | OperatorKind::MergeJoin
        )
    }

    pub fn is_scan(self) -> bool {
        matches!(
            self,
            OperatorKind::Scan | OperatorKind::IndexScan | OperatorKind::SubqueryScan
        )
    }
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OperatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OperatorKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidPlan(format!("unknown operator kind `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    pub kind: OperatorKind,
    pub est_rows: f64,
    pub est_cost: f64,
    /// Relation the node reads or writes, if any.
    pub table: Option<String>,
    /// Column annotations (predicate, join key, grouping or sort columns).
    pub columns: Vec<String>,
}

impl PlanNode {
    pub fn new(kind: OperatorKind, est_rows: f64, est_cost: f64) -> Self {
        PlanNode {
            kind,
            est_rows,
            est_cost,
            table: None,
            columns: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanDag {
    nodes: Vec<PlanNode>,
    /// Ordered children of each node.
    children: Vec<Vec<usize>>,
    root: usize,
    /// Children before parents.
    topo: Vec<usize>,
}

/// Builder-friendly nested plan, mainly for the workload simulator.
#[derive(Clone, Debug)]
pub struct PlanTree {
    pub node: PlanNode,
    pub children: Vec<PlanTree>,
}

impl PlanTree {
    pub fn leaf(node: PlanNode) -> Self {
        PlanTree {
            node,
            children: Vec::new(),
        }
    }

    pub fn with(node: PlanNode, children: Vec<PlanTree>) -> Self {
        PlanTree { node, children }
    }
}

impl PlanDag {
    /// Build and validate a plan from its nodes and child lists.
    pub fn from_parts(nodes: Vec<PlanNode>, children: Vec<Vec<usize>>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::InvalidPlan("plan has no nodes".into()));
        }
        if children.len() != nodes.len() {
            return Err(Error::InvalidPlan(
                "child lists do not match node count".into(),
            ));
        }
        for (i, n) in nodes.iter().enumerate() {
            if !(n.est_rows.is_finite() && n.est_rows >= 0.0) {
                return Err(Error::InvalidPlan(format!(
                    "node {i}: bad est_rows {}",
                    n.est_rows
                )));
            }
            if !(n.est_cost.is_finite() && n.est_cost >= 0.0) {
                return Err(Error::InvalidPlan(format!(
                    "node {i}: bad est_cost {}",
                    n.est_cost
                )));
            }
        }
        let n = nodes.len();
        let mut parents = vec![0usize; n];
        for (p, cs) in children.iter().enumerate() {
            for &c in cs {
                if c >= n {
                    return Err(Error::InvalidPlan(format!("edge to missing node {c}")));
                }
                if c == p {
                    return Err(Error::InvalidPlan(format!("node {p} references itself")));
                }
                parents[c] += 1;
            }
        }
        // Kahn's algorithm, children first.
        let mut pending: Vec<usize> = children.iter().map(|c| c.len()).collect();
        let mut parent_lists = vec![Vec::new(); n];
        for (p, cs) in children.iter().enumerate() {
            for &c in cs {
                parent_lists[c].push(p);
            }
        }
        let mut queue: VecDeque<usize> = (0..n).filter(|&i| pending[i] == 0).collect();
        let mut topo = Vec::with_capacity(n);
        while let Some(v) = queue.pop_front() {
            topo.push(v);
            for &p in &parent_lists[v] {
                pending[p] -= 1;
                if pending[p] == 0 {
                    queue.push_back(p);
                }
            }
        }
        if topo.len() != n {
            return Err(Error::InvalidPlan("cycle detected".into()));
        }
        let roots: Vec<usize> = (0..n).filter(|&i| parents[i] == 0).collect();
        if roots.len() != 1 {
            return Err(Error::InvalidPlan(format!(
                "expected one root, found {}",
                roots.len()
            )));
        }
        Ok(PlanDag {
            nodes,
            children,
            root: roots[0],
            topo,
        })
    }

    pub fn from_tree(tree: &PlanTree) -> Result<Self> {
        let mut nodes = Vec::new();
        let mut children = Vec::new();
        fn walk(t: &PlanTree, nodes: &mut Vec<PlanNode>, children: &mut Vec<Vec<usize>>) -> usize {
            let idx = nodes.len();
            nodes.push(t.node.clone());
            children.push(Vec::new());
            for c in &t.children {
                let ci = walk(c, nodes, children);
                children[idx].push(ci);
            }
            idx
        }
        walk(tree, &mut nodes, &mut children);
        Self::from_parts(nodes, children)
    }

    pub fn nodes(&self) -> &[PlanNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    /// Edges as `(child, parent)` pairs.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.children
            .iter()
            .enumerate()
            .flat_map(|(p, cs)| cs.iter().map(move |&c| (c, p)))
            .collect()
    }

    pub fn topological_order(&self) -> &[usize] {
        &self.topo
    }

    /// Undirected hop distances between all node pairs.
    pub fn distances(&self) -> Vec<Vec<usize>> {
        let n = self.nodes.len();
        let mut adj = vec![Vec::new(); n];
        for (c, p) in self.edges() {
            adj[c].push(p);
            adj[p].push(c);
        }
        (0..n)
            .map(|s| {
                let mut dist = vec![usize::MAX; n];
                dist[s] = 0;
                let mut q = VecDeque::from([s]);
                while let Some(v) = q.pop_front() {
                    for &w in &adj[v] {
                        if dist[w] == usize::MAX {
                            dist[w] = dist[v] + 1;
                            q.push_back(w);
                        }
                    }
                }
                dist
            })
            .collect()
    }

    /// Relabel nodes: new index `i` holds old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.nodes.len();
        if perm.len() != n {
            return Err(Error::InvalidInput("permutation length".into()));
        }
        let mut inv = vec![usize::MAX; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        if inv.iter().any(|&x| x == usize::MAX) {
            return Err(Error::InvalidInput("not a permutation".into()));
        }
        let nodes = perm.iter().map(|&o| self.nodes[o].clone()).collect();
        let children = perm
            .iter()
            .map(|&o| self.children[o].iter().map(|&c| inv[c]).collect())
            .collect();
        Self::from_parts(nodes, children)
    }

    /// Serialise as a nested document, rooted at the plan root. Shared
    /// nodes are written once with an `id` and referenced afterwards.
    pub fn to_json(&self) -> Value {
        let mut parent_count = vec![0usize; self.nodes.len()];
        for (c, _) in self.edges() {
            parent_count[c] += 1;
        }
        let mut emitted = vec![false; self.nodes.len()];
        self.node_json(self.root, &parent_count, &mut emitted)
    }

    fn node_json(&self, i: usize, parent_count: &[usize], emitted: &mut [bool]) -> Value {
        if emitted[i] {
            return json!({ "ref": i });
        }
        emitted[i] = true;
        let n = &self.nodes[i];
        let mut obj = Map::new();
        obj.insert("op".into(), json!(n.kind.name()));
        obj.insert("est_rows".into(), json!(n.est_rows));
        obj.insert("est_cost".into(), json!(n.est_cost));
        if let Some(t) = &n.table {
            obj.insert("table".into(), json!(t));
        }
        if !n.columns.is_empty() {
            obj.insert("columns".into(), json!(n.columns));
        }
        if parent_count[i] > 1 {
            obj.insert("id".into(), json!(i));
        }
        let kids: Vec<Value> = self.children[i]
            .iter()
            .map(|&c| self.node_json(c, parent_count, emitted))
            .collect();
        obj.insert("children".into(), Value::Array(kids));
        Value::Object(obj)
    }
}

/// Parse a plan document. A top-level array is treated as a forest and
/// must contain exactly one root.
pub fn parse_plan(doc: &Value) -> Result<PlanDag> {
    let mut nodes = Vec::new();
    let mut children: Vec<Vec<ChildRef>> = Vec::new();
    let mut ids: HashMap<String, usize> = HashMap::new();
    match doc {
        Value::Array(items) => {
            for item in items {
                parse_node(item, &mut nodes, &mut children, &mut ids)?;
            }
        }
        _ => {
            parse_node(doc, &mut nodes, &mut children, &mut ids)?;
        }
    }
    let resolved = children
        .into_iter()
        .map(|cs| {
            cs.into_iter()
                .map(|c| match c {
                    ChildRef::Index(i) => Ok(i),
                    ChildRef::Id(key) => ids
                        .get(&key)
                        .copied()
                        .ok_or_else(|| Error::InvalidPlan(format!("dangling ref `{key}`"))),
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    PlanDag::from_parts(nodes, resolved)
}

enum ChildRef {
    Index(usize),
    Id(String),
}

fn id_key(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn parse_node(
    v: &Value,
    nodes: &mut Vec<PlanNode>,
    children: &mut Vec<Vec<ChildRef>>,
    ids: &mut HashMap<String, usize>,
) -> Result<usize> {
    let obj = v
        .as_object()
        .ok_or_else(|| Error::InvalidPlan("plan node is not an object".into()))?;
    let op = obj
        .get("op")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::InvalidPlan("node without `op`".into()))?;
    let kind: OperatorKind = op.parse()?;
    let num = |key: &str| -> Result<f64> {
        obj.get(key)
            .and_then(Value::as_f64)
            .ok_or_else(|| Error::InvalidPlan(format!("node `{op}` without numeric `{key}`")))
    };
    let mut node = PlanNode::new(kind, num("est_rows")?, num("est_cost")?);
    node.table = obj.get("table").and_then(Value::as_str).map(str::to_string);
    if let Some(cols) = obj.get("columns") {
        let arr = cols
            .as_array()
            .ok_or_else(|| Error::InvalidPlan("`columns` is not an array".into()))?;
        node.columns = arr
            .iter()
            .map(|c| {
                c.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| Error::InvalidPlan("non-string column".into()))
            })
            .collect::<Result<_>>()?;
    }
    let idx = nodes.len();
    nodes.push(node);
    children.push(Vec::new());
    if let Some(id) = obj.get("id") {
        if ids.insert(id_key(id), idx).is_some() {
            return Err(Error::InvalidPlan(format!("duplicate node id {id}")));
        }
    }
    if let Some(kids) = obj.get("children") {
        let arr = kids
            .as_array()
            .ok_or_else(|| Error::InvalidPlan("`children` is not an array".into()))?;
        for k in arr {
            let r = match k.as_object().and_then(|o| o.get("ref")) {
                Some(target) => ChildRef::Id(id_key(target)),
                None => ChildRef::Index(parse_node(k, nodes, children, ids)?),
            };
            children[idx].push(r);
        }
    }
    Ok(idx)
}
