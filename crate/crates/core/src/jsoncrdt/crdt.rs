use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use log::warn;

use super::{CrdtError, JsonValue};

/// Width of the zero-padded decimal form of an [`OpId`]. `u64::MAX` has 20
/// digits, so lexicographic and numeric order agree.
const OP_ID_WIDTH: usize = 20;

/// Operation identifier: the value of the Lamport clock when the operation
/// was created.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OpId(pub u64);

impl OpId {
    pub fn value(self) -> u64 {
        self.0
    }
}

impl fmt::Display for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:0width$}", self.0, width = OP_ID_WIDTH)
    }
}

impl FromStr for OpId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(OpId)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LamportClock {
    counter: u64,
}

impl LamportClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tick(&mut self) -> OpId {
        self.counter += 1;
        OpId(self.counter)
    }

    pub fn current(&self) -> OpId {
        OpId(self.counter)
    }

    /// Identifier the next [`tick`](Self::tick) will return.
    pub fn peek_next(&self) -> OpId {
        OpId(self.counter + 1)
    }

    fn observe(&mut self, id: OpId) {
        self.counter = self.counter.max(id.0);
    }
}

/// One step of a cursor. Map children are addressed by their text key, list
/// elements by the identifier of the first operation that created them.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CursorElement {
    Key(String),
    Item(OpId),
}

impl fmt::Display for CursorElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CursorElement::Key(k) => write!(f, "{k}"),
            CursorElement::Item(id) => write!(f, "#{id}"),
        }
    }
}

/// Path from the head of the CRDT tree to the node an operation mutates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Cursor(Vec<CursorElement>);

impl Cursor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_keys<I, S>(keys: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Cursor(keys.into_iter().map(|k| CursorElement::Key(k.into())).collect())
    }

    pub fn push(&mut self, element: CursorElement) {
        self.0.push(element);
    }

    pub fn pop(&mut self) -> Option<CursorElement> {
        self.0.pop()
    }

    pub fn elements(&self) -> &[CursorElement] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for Cursor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("/");
        }
        for element in &self.0 {
            write!(f, "/{element}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mutation {
    Insert { key: String, value: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Operation {
    pub id: OpId,
    pub deps: BTreeSet<OpId>,
    pub cursor: Cursor,
    pub mutation: Mutation,
}

impl Operation {
    pub fn insert(id: OpId, deps: BTreeSet<OpId>, cursor: Cursor, key: &str, value: &str) -> Self {
        Operation {
            id,
            deps,
            cursor,
            mutation: Mutation::Insert {
                key: key.to_string(),
                value: value.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplyStatus {
    /// Applied immediately; the count includes queued operations that
    /// became applicable as a consequence.
    Applied { released: usize },
    /// Waiting for at least one dependency.
    Queued,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MergeOptions {
    /// Skip a list item when an element with identical plain-JSON content
    /// already exists in the target list.
    pub dedup_list_leaves: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Map,
    List,
    Leaf,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Map => "map",
            Kind::List => "list",
            Kind::Leaf => "leaf",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum NodeBody {
    Map(BTreeMap<String, Node>),
    List(BTreeMap<OpId, Node>),
    Leaf(BTreeMap<OpId, String>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Node {
    ops: BTreeSet<OpId>,
    body: NodeBody,
}

impl Node {
    fn new(kind: Kind) -> Self {
        let body = match kind {
            Kind::Map => NodeBody::Map(BTreeMap::new()),
            Kind::List => NodeBody::List(BTreeMap::new()),
            Kind::Leaf => NodeBody::Leaf(BTreeMap::new()),
        };
        Node {
            ops: BTreeSet::new(),
            body,
        }
    }

    fn kind(&self) -> Kind {
        match self.body {
            NodeBody::Map(_) => Kind::Map,
            NodeBody::List(_) => Kind::List,
            NodeBody::Leaf(_) => Kind::Leaf,
        }
    }

    /// A node that no operation has touched yet. Only the head can be in
    /// this state.
    fn is_blank(&self) -> bool {
        self.ops.is_empty() && matches!(&self.body, NodeBody::Map(m) if m.is_empty())
    }

    fn child(&self, element: &CursorElement) -> Option<&Node> {
        match (&self.body, element) {
            (NodeBody::Map(children), CursorElement::Key(k)) => children.get(k),
            (NodeBody::List(children), CursorElement::Item(id)) => children.get(id),
            _ => None,
        }
    }

    fn child_mut_or_insert(&mut self, element: &CursorElement, kind: Kind) -> &mut Node {
        match (&mut self.body, element) {
            (NodeBody::Map(children), CursorElement::Key(k)) => {
                children.entry(k.clone()).or_insert_with(|| Node::new(kind))
            }
            (NodeBody::List(children), CursorElement::Item(id)) => {
                children.entry(*id).or_insert_with(|| Node::new(kind))
            }
            _ => unreachable!("cursor compatibility is checked before mutation"),
        }
    }

    fn to_json(&self) -> JsonValue {
        match &self.body {
            NodeBody::Map(children) => JsonValue::Map(
                children
                    .iter()
                    .map(|(k, child)| (k.clone(), child.to_json()))
                    .collect(),
            ),
            NodeBody::List(children) => {
                JsonValue::List(children.values().map(Node::to_json).collect())
            }
            // Last writer wins among concurrent values of one register.
            NodeBody::Leaf(values) => JsonValue::Str(
                values
                    .values()
                    .next_back()
                    .cloned()
                    .unwrap_or_default(),
            ),
        }
    }

    fn collect_ops<'a>(&'a self, out: &mut Vec<&'a BTreeSet<OpId>>) {
        out.push(&self.ops);
        match &self.body {
            NodeBody::Map(children) => children.values().for_each(|c| c.collect_ops(out)),
            NodeBody::List(children) => children.values().for_each(|c| c.collect_ops(out)),
            NodeBody::Leaf(_) => {}
        }
    }
}

/// Kind a node reached by `cursor[index]` must have.
fn required_kind(cursor: &[CursorElement], index: usize) -> Kind {
    match cursor.get(index + 1) {
        None => Kind::Leaf,
        Some(CursorElement::Key(_)) => Kind::Map,
        Some(CursorElement::Item(_)) => Kind::List,
    }
}

fn container_kind_for(element: &CursorElement) -> Kind {
    match element {
        CursorElement::Key(_) => Kind::Map,
        CursorElement::Item(_) => Kind::List,
    }
}

fn conflict(path: &[CursorElement], expected: Kind, found: Kind) -> CrdtError {
    CrdtError::StructuralConflict {
        path: Cursor(path.to_vec()).to_string(),
        expected: expected.name(),
        found: found.name(),
    }
}

/// JSON CRDT for one ledger key.
#[derive(Debug, Clone)]
pub struct JsonCrdt {
    key: String,
    clock: LamportClock,
    root: Node,
    applied: BTreeSet<OpId>,
    pending: Vec<Operation>,
    options: MergeOptions,
}

impl JsonCrdt {
    /// Creates an empty CRDT for `key`. The sample value only establishes
    /// that the write-set value has a mergeable shape.
    pub fn init_empty(key: &str, sample: &JsonValue) -> Result<Self, CrdtError> {
        Self::init_with_options(key, sample, MergeOptions::default())
    }

    pub fn init_with_options(
        key: &str,
        sample: &JsonValue,
        options: MergeOptions,
    ) -> Result<Self, CrdtError> {
        if key.is_empty() {
            return Err(CrdtError::EmptyKey);
        }
        if let JsonValue::List(_) = sample {
            return Err(CrdtError::UnsupportedTopLevel("list"));
        }
        Ok(JsonCrdt {
            key: key.to_string(),
            clock: LamportClock::new(),
            root: Node::new(Kind::Map),
            applied: BTreeSet::new(),
            pending: Vec::new(),
            options,
        })
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn clock(&self) -> OpId {
        self.clock.current()
    }

    pub fn options(&self) -> MergeOptions {
        self.options
    }

    pub fn tick_clock(&mut self) -> OpId {
        self.clock.tick()
    }

    pub fn applied(&self) -> &BTreeSet<OpId> {
        &self.applied
    }

    pub fn pending(&self) -> &[Operation] {
        &self.pending
    }

    /// Operation identifiers recorded on the node at `cursor`, if it exists.
    pub fn node_ops(&self, cursor: &Cursor) -> Option<&BTreeSet<OpId>> {
        self.lookup(cursor.elements()).map(|n| &n.ops)
    }

    fn lookup(&self, path: &[CursorElement]) -> Option<&Node> {
        path.iter().try_fold(&self.root, |node, element| node.child(element))
    }

    /// Merges a plain document into the CRDT and returns the number of
    /// insert operations generated.
    pub fn merge_json(&mut self, doc: &JsonValue) -> Result<usize, CrdtError> {
        self.merge_inner(doc, None)
    }

    /// Same as [`merge_json`](Self::merge_json) but also returns the
    /// generated operations in creation order.
    pub fn merge_json_ops(&mut self, doc: &JsonValue) -> Result<Vec<Operation>, CrdtError> {
        let mut ops = Vec::new();
        self.merge_inner(doc, Some(&mut ops))?;
        Ok(ops)
    }

    /// Checks that merging `doc` cannot hit a structural conflict. Merges
    /// run this first so a rejected document leaves the CRDT untouched.
    pub fn check_mergeable(&self, doc: &JsonValue) -> Result<(), CrdtError> {
        match doc {
            JsonValue::List(_) => Err(CrdtError::UnsupportedTopLevel("list")),
            JsonValue::Str(_) => {
                if self.root.is_blank() || self.root.kind() == Kind::Leaf {
                    Ok(())
                } else {
                    Err(conflict(&[], Kind::Leaf, self.root.kind()))
                }
            }
            JsonValue::Map(entries) => {
                if entries.values().all(|v| v.leaf_count() == 0) {
                    return Ok(());
                }
                if self.root.kind() != Kind::Map {
                    return Err(conflict(&[], Kind::Map, self.root.kind()));
                }
                let mut path = Vec::new();
                for (k, v) in entries {
                    check_entry(&self.root, k, v, &mut path)?;
                }
                Ok(())
            }
        }
    }

    fn merge_inner(
        &mut self,
        doc: &JsonValue,
        mut sink: Option<&mut Vec<Operation>>,
    ) -> Result<usize, CrdtError> {
        self.check_mergeable(doc)?;
        let start = self.clock.current();
        match doc {
            JsonValue::Str(s) => {
                let id = self.clock.tick();
                let key = self.key.clone();
                let op = Operation::insert(id, BTreeSet::new(), Cursor::new(), &key, s);
                self.apply_local(op, &mut sink)?;
            }
            JsonValue::Map(entries) => {
                for (key, value) in entries {
                    // Fresh cursor and dependency set for every top-level key.
                    let mut cursor = Cursor::new();
                    let mut deps = BTreeSet::new();
                    self.add_value(&mut cursor, key, value, &mut deps, &mut sink)?;
                }
            }
            JsonValue::List(_) => unreachable!("rejected by check_mergeable"),
        }
        Ok((self.clock.current().0 - start.0) as usize)
    }

    fn add_value(
        &mut self,
        cursor: &mut Cursor,
        key: &str,
        value: &JsonValue,
        deps: &mut BTreeSet<OpId>,
        sink: &mut Option<&mut Vec<Operation>>,
    ) -> Result<(), CrdtError> {
        match value {
            JsonValue::Str(s) => {
                cursor.push(CursorElement::Key(key.to_string()));
                self.insert_leaf(cursor, key, s, deps, sink)?;
                cursor.pop();
            }
            JsonValue::List(items) => {
                cursor.push(CursorElement::Key(key.to_string()));
                for item in items {
                    self.add_list_item(cursor, key, item, deps, sink)?;
                }
                cursor.pop();
            }
            JsonValue::Map(entries) => {
                cursor.push(CursorElement::Key(key.to_string()));
                for (map_key, map_value) in entries {
                    self.add_value(cursor, map_key, map_value, deps, sink)?;
                }
                cursor.pop();
            }
        }
        Ok(())
    }

    /// `cursor` points at the list node. The new element is addressed by
    /// the identifier its first operation will receive.
    fn add_list_item(
        &mut self,
        cursor: &mut Cursor,
        key: &str,
        item: &JsonValue,
        deps: &mut BTreeSet<OpId>,
        sink: &mut Option<&mut Vec<Operation>>,
    ) -> Result<(), CrdtError> {
        if item.leaf_count() == 0 {
            return Ok(());
        }
        if self.options.dedup_list_leaves && self.list_contains(cursor, item) {
            return Ok(());
        }
        cursor.push(CursorElement::Item(self.clock.peek_next()));
        match item {
            JsonValue::Str(s) => self.insert_leaf(cursor, key, s, deps, sink)?,
            JsonValue::Map(entries) => {
                for (map_key, map_value) in entries {
                    self.add_value(cursor, map_key, map_value, deps, sink)?;
                }
            }
            JsonValue::List(inner) => {
                for nested in inner {
                    self.add_list_item(cursor, key, nested, deps, sink)?;
                }
            }
        }
        cursor.pop();
        Ok(())
    }

    fn list_contains(&self, cursor: &Cursor, item: &JsonValue) -> bool {
        match self.lookup(cursor.elements()) {
            Some(Node {
                body: NodeBody::List(children),
                ..
            }) => children.values().any(|child| child.to_json() == *item),
            _ => false,
        }
    }

    fn insert_leaf(
        &mut self,
        cursor: &Cursor,
        key: &str,
        value: &str,
        deps: &mut BTreeSet<OpId>,
        sink: &mut Option<&mut Vec<Operation>>,
    ) -> Result<(), CrdtError> {
        let id = self.clock.tick();
        let op = Operation::insert(id, deps.clone(), cursor.clone(), key, value);
        self.apply_local(op, sink)?;
        deps.insert(id);
        Ok(())
    }

    fn apply_local(
        &mut self,
        op: Operation,
        sink: &mut Option<&mut Vec<Operation>>,
    ) -> Result<(), CrdtError> {
        if let Some(ops) = sink.as_deref_mut() {
            ops.push(op.clone());
        }
        self.apply_operation(op).map(|_| ())
    }

    /// Applies an operation, or queues it until all of its dependencies
    /// have been applied.
    pub fn apply_operation(&mut self, op: Operation) -> Result<ApplyStatus, CrdtError> {
        if self.applied.contains(&op.id) || self.pending.iter().any(|p| p.id == op.id) {
            return Err(CrdtError::DuplicateOperation(op.id));
        }
        if let Some(dep) = op.deps.iter().find(|d| **d >= op.id) {
            return Err(CrdtError::InvalidDependency { op: op.id, dep: *dep });
        }
        if !op.deps.iter().all(|d| self.applied.contains(d)) {
            self.pending.push(op);
            return Ok(ApplyStatus::Queued);
        }
        self.apply_ready(&op)?;
        let released = self.release_pending();
        Ok(ApplyStatus::Applied { released })
    }

    fn release_pending(&mut self) -> usize {
        let mut released = 0;
        while let Some(pos) = self
            .pending
            .iter()
            .position(|p| p.deps.iter().all(|d| self.applied.contains(d)))
        {
            let op = self.pending.remove(pos);
            match self.apply_ready(&op) {
                Ok(()) => released += 1,
                Err(e) => warn!("dropping queued operation {}: {e}", op.id),
            }
        }
        released
    }

    fn apply_ready(&mut self, op: &Operation) -> Result<(), CrdtError> {
        let path = op.cursor.elements();
        self.check_path(path)?;

        let Mutation::Insert { value, .. } = &op.mutation;
        if path.is_empty() && self.root.is_blank() {
            self.root = Node::new(Kind::Leaf);
        }
        let mut node = &mut self.root;
        for (i, element) in path.iter().enumerate() {
            node = node.child_mut_or_insert(element, required_kind(path, i));
            node.ops.insert(op.id);
        }
        match &mut node.body {
            NodeBody::Leaf(values) => {
                values.insert(op.id, value.clone());
            }
            _ => unreachable!("cursor compatibility is checked before mutation"),
        }
        self.applied.insert(op.id);
        self.clock.observe(op.id);
        Ok(())
    }

    fn check_path(&self, path: &[CursorElement]) -> Result<(), CrdtError> {
        let Some(first) = path.first() else {
            return if self.root.is_blank() || self.root.kind() == Kind::Leaf {
                Ok(())
            } else {
                Err(conflict(path, Kind::Leaf, self.root.kind()))
            };
        };
        let head_kind = container_kind_for(first);
        if self.root.kind() != head_kind && !self.root.is_blank() {
            return Err(conflict(&[], head_kind, self.root.kind()));
        }
        if self.root.is_blank() && head_kind == Kind::List {
            return Err(conflict(&[], Kind::List, Kind::Map));
        }
        let mut node = &self.root;
        for (i, element) in path.iter().enumerate() {
            let Some(child) = node.child(element) else {
                return Ok(());
            };
            let expected = required_kind(path, i);
            if child.kind() != expected {
                return Err(conflict(&path[..=i], expected, child.kind()));
            }
            node = child;
        }
        Ok(())
    }

    /// Converts the tree back to a plain document with all operation
    /// metadata removed.
    pub fn to_json(&self) -> Result<JsonValue, CrdtError> {
        if !self.pending.is_empty() {
            return Err(CrdtError::Incomplete {
                pending: self.pending.len(),
            });
        }
        Ok(self.root.to_json())
    }

    /// Verifies the internal bookkeeping invariants; used by tests.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut sets = Vec::new();
        self.root.collect_ops(&mut sets);
        for set in sets {
            if let Some(id) = set.iter().find(|id| !self.applied.contains(id)) {
                return Err(format!("node records unapplied operation {id}"));
            }
        }
        for op in &self.pending {
            if op.deps.iter().all(|d| self.applied.contains(d)) {
                return Err(format!("pending operation {} is applicable", op.id));
            }
        }
        if let Some(max) = self.applied.iter().next_back() {
            if self.clock.current() < *max {
                return Err(format!("clock {} behind applied {max}", self.clock.current()));
            }
        }
        Ok(())
    }
}

fn check_entry(
    parent: &Node,
    key: &str,
    value: &JsonValue,
    path: &mut Vec<CursorElement>,
) -> Result<(), CrdtError> {
    if value.leaf_count() == 0 {
        return Ok(());
    }
    let element = CursorElement::Key(key.to_string());
    let Some(child) = parent.child(&element) else {
        return Ok(());
    };
    path.push(element);
    let expected = match value {
        JsonValue::Str(_) => Kind::Leaf,
        JsonValue::List(_) => Kind::List,
        JsonValue::Map(_) => Kind::Map,
    };
    if child.kind() != expected {
        return Err(conflict(path, expected, child.kind()));
    }
    // List items always land in fresh elements, so only maps need a deeper look.
    if let JsonValue::Map(entries) = value {
        for (k, v) in entries {
            check_entry(child, k, v, path)?;
        }
    }
    path.pop();
    Ok(())
}
