//! Constituency-tree utilities: bracketed-string parsing, SelfCat lookup,
//! root paths, candidate constituents for argument segmentation, head
//! finding, production rules, and node context.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::corpus::{Sentence, Token};

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("empty parse tree string")]
    Empty,
    #[error("unbalanced parenthesis at byte {position}")]
    Unbalanced { position: usize },
    #[error("unexpected token at byte {position}: {message}")]
    Unexpected { position: usize, message: String },
    #[error("tree yield is empty after dropping trace nodes")]
    EmptyYield,
    #[error("connective token {index} outside sentence of {len} tokens")]
    TokenOutOfRange { index: usize, len: usize },
    #[error("head rule file line {line}: {message}")]
    HeadRuleFormat { line: usize, message: String },
}

/// Index of a node in its [`Tree`] arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
struct NodeData {
    label: String,
    word: Option<String>,
    parent: Option<NodeId>,
    children: Vec<NodeId>,
    /// Inclusive range of sentence-local token indices covered by the node.
    span: (usize, usize),
}

/// An immutable constituency tree stored as an arena, so parent links are
/// plain indices.
#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<NodeData>,
    root: NodeId,
    leaves: Vec<NodeId>,
}

/// Labels of a node and its immediate neighborhood, with `"ROOT"`/`"NONE"`
/// sentinels where the parent or a sibling is absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeContext {
    pub label: String,
    pub parent_label: String,
    pub left_sibling_label: String,
    pub right_sibling_label: String,
}

impl Tree {
    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn label(&self, node: NodeId) -> &str {
        &self.nodes[node.0].label
    }

    /// Leaf word, present only on leaves.
    pub fn word(&self, node: NodeId) -> Option<&str> {
        self.nodes[node.0].word.as_deref()
    }

    pub fn parent(&self, node: NodeId) -> Option<NodeId> {
        self.nodes[node.0].parent
    }

    pub fn children(&self, node: NodeId) -> &[NodeId] {
        &self.nodes[node.0].children
    }

    pub fn is_leaf(&self, node: NodeId) -> bool {
        self.nodes[node.0].children.is_empty()
    }

    /// Inclusive `(first, last)` token span of the node.
    pub fn span(&self, node: NodeId) -> (usize, usize) {
        self.nodes[node.0].span
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves.len()
    }

    /// Leaf node covering the given sentence-local token index.
    pub fn leaf(&self, tok_index: usize) -> Option<NodeId> {
        self.leaves.get(tok_index).copied()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    pub fn covers(&self, node: NodeId, tok_index: usize) -> bool {
        let (first, last) = self.span(node);
        first <= tok_index && tok_index <= last
    }

    pub fn is_ancestor_of(&self, ancestor: NodeId, node: NodeId) -> bool {
        let mut current = self.parent(node);
        while let Some(p) = current {
            if p == ancestor {
                return true;
            }
            current = self.parent(p);
        }
        false
    }
}

#[derive(Debug)]
enum RawNode {
    Internal {
        label: String,
        children: Vec<RawNode>,
    },
    Leaf {
        label: String,
        word: String,
    },
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Parser {
            bytes: text.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn symbol(&mut self) -> String {
        let start = self.pos;
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b == b'(' || b == b')' || b.is_ascii_whitespace() {
                break;
            }
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned()
    }

    fn node(&mut self) -> Result<RawNode, TreeError> {
        self.skip_ws();
        if self.peek() != Some(b'(') {
            return Err(TreeError::Unexpected {
                position: self.pos,
                message: "expected '('".into(),
            });
        }
        let open_pos = self.pos;
        self.pos += 1;
        self.skip_ws();
        let label = match self.peek() {
            Some(b'(') | Some(b')') => String::new(),
            Some(_) => self.symbol(),
            None => return Err(TreeError::Unbalanced { position: open_pos }),
        };
        self.skip_ws();
        match self.peek() {
            Some(b'(') => {
                let mut children = Vec::new();
                while self.peek() == Some(b'(') {
                    children.push(self.node()?);
                    self.skip_ws();
                }
                if self.peek() != Some(b')') {
                    return Err(TreeError::Unbalanced { position: open_pos });
                }
                self.pos += 1;
                Ok(RawNode::Internal { label, children })
            }
            Some(b')') => {
                self.pos += 1;
                if label.is_empty() {
                    Err(TreeError::Unexpected {
                        position: open_pos,
                        message: "empty node".into(),
                    })
                } else {
                    // A bare "(X)" carries no word and no children.
                    Err(TreeError::Unexpected {
                        position: open_pos,
                        message: format!("node {label:?} has no children"),
                    })
                }
            }
            Some(_) => {
                let word = self.symbol();
                self.skip_ws();
                if self.peek() != Some(b')') {
                    return Err(TreeError::Unbalanced { position: open_pos });
                }
                self.pos += 1;
                Ok(RawNode::Leaf { label, word })
            }
            None => Err(TreeError::Unbalanced { position: open_pos }),
        }
    }
}

/// Strips functional tags and co-index suffixes: `NP-SBJ-1` and `NP=2`
/// become `NP`. Labels beginning with `-` (`-NONE-`, `-LRB-`, `-RRB-`)
/// are kept whole.
fn strip_label(label: &str) -> String {
    if label.starts_with('-') {
        return label.to_owned();
    }
    let cut = label.find(['-', '=']).unwrap_or(label.len());
    label[..cut].to_owned()
}

/// Drops `-NONE-` leaves and any node whose yield becomes empty; returns
/// `None` when the whole subtree vanishes.
fn drop_traces(node: RawNode) -> Option<RawNode> {
    match node {
        RawNode::Leaf { label, word } => {
            if label == "-NONE-" {
                None
            } else {
                Some(RawNode::Leaf { label, word })
            }
        }
        RawNode::Internal { label, children } => {
            let kept: Vec<RawNode> = children.into_iter().filter_map(drop_traces).collect();
            if kept.is_empty() {
                None
            } else {
                Some(RawNode::Internal {
                    label,
                    children: kept,
                })
            }
        }
    }
}

/// Parses a Penn-style bracketed string into a [`Tree`].
///
/// Accepts both `"(S ...)"` and the wrapped `"( (S ...) )"` form; functional
/// tags are stripped and `-NONE-` trace leaves are removed together with any
/// constituent they empty out.
pub fn parse_bracketed(tree_str: &str) -> Result<Tree, TreeError> {
    let mut parser = Parser::new(tree_str);
    parser.skip_ws();
    if parser.peek().is_none() {
        return Err(TreeError::Empty);
    }
    let raw = parser.node()?;
    parser.skip_ws();
    if parser.peek().is_some() {
        return Err(TreeError::Unexpected {
            position: parser.pos,
            message: "trailing input after tree".into(),
        });
    }

    let mut raw = drop_traces(raw).ok_or(TreeError::EmptyYield)?;
    // Unwrap empty-label unary wrappers such as the outer "( ... )".
    loop {
        match raw {
            RawNode::Internal {
                ref label,
                ref mut children,
            } if label.is_empty() && children.len() == 1 => {
                raw = children.pop().expect("one child");
            }
            _ => break,
        }
    }

    let mut tree = Tree {
        nodes: Vec::new(),
        root: NodeId(0),
        leaves: Vec::new(),
    };
    let root = build_arena(&mut tree, raw, None);
    tree.root = root;
    Ok(tree)
}

fn build_arena(tree: &mut Tree, raw: RawNode, parent: Option<NodeId>) -> NodeId {
    let id = NodeId(tree.nodes.len());
    tree.nodes.push(NodeData {
        label: String::new(),
        word: None,
        parent,
        children: Vec::new(),
        span: (0, 0),
    });
    match raw {
        RawNode::Leaf { label, word } => {
            let index = tree.leaves.len();
            tree.leaves.push(id);
            let data = &mut tree.nodes[id.0];
            data.label = strip_label(&label);
            data.word = Some(word);
            data.span = (index, index);
        }
        RawNode::Internal { label, children } => {
            let stripped = strip_label(&label);
            let child_ids: Vec<NodeId> = children
                .into_iter()
                .map(|c| build_arena(tree, c, Some(id)))
                .collect();
            let first = tree.nodes[child_ids[0].0].span.0;
            let last = tree.nodes[child_ids[child_ids.len() - 1].0].span.1;
            let data = &mut tree.nodes[id.0];
            data.label = stripped;
            data.children = child_ids;
            data.span = (first, last);
        }
    }
    id
}

/// Renders the tree back to bracketed form.
pub fn print_bracketed(tree: &Tree) -> String {
    let mut out = String::new();
    print_node(tree, tree.root(), &mut out);
    out
}

fn print_node(tree: &Tree, node: NodeId, out: &mut String) {
    if tree.is_leaf(node) {
        let _ = write!(
            out,
            "({} {})",
            tree.label(node),
            tree.word(node).unwrap_or("")
        );
    } else {
        let _ = write!(out, "({}", tree.label(node));
        for &child in tree.children(node) {
            out.push(' ');
            print_node(tree, child, out);
        }
        out.push(')');
    }
}

/// Finds the SelfCat node for a set of sentence-local connective token
/// indices: the highest node whose yield is exactly those tokens, falling
/// back to the lowest common ancestor when no exact-yield node exists
/// (discontinuous connectives).
pub fn self_cat(tree: &Tree, connective_toks: &[usize]) -> Result<NodeId, TreeError> {
    assert!(!connective_toks.is_empty(), "connective must be non-empty");
    let len = tree.leaf_count();
    let mut sorted: Vec<usize> = connective_toks.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for &index in &sorted {
        if index >= len {
            return Err(TreeError::TokenOutOfRange { index, len });
        }
    }
    let first = sorted[0];
    let last = sorted[sorted.len() - 1];
    let contiguous = last - first + 1 == sorted.len();

    if contiguous {
        // Exact-yield nodes form a unary chain; walk up from the covering
        // leaf chain and keep the last node whose span is still exact.
        let mut best: Option<NodeId> = None;
        let mut current = Some(tree.leaf(first).expect("leaf in range"));
        while let Some(node) = current {
            let span = tree.span(node);
            if span == (first, last) {
                best = Some(node);
            } else if span.0 <= first && last <= span.1 {
                // Covers more than the connective; the chain is over.
                break;
            }
            current = tree.parent(node);
        }
        if let Some(node) = best {
            return Ok(node);
        }
    }

    // Lowest node covering all connective tokens.
    let mut node = tree.root();
    'descend: loop {
        for &child in tree.children(node) {
            let (cf, cl) = tree.span(child);
            if cf <= first && last <= cl {
                node = child;
                continue 'descend;
            }
        }
        return Ok(node);
    }
}

/// Path from the node (inclusive) up to the root (inclusive).
pub fn root_path(tree: &Tree, node: NodeId) -> Vec<NodeId> {
    let mut path = vec![node];
    let mut current = node;
    while let Some(parent) = tree.parent(current) {
        path.push(parent);
        current = parent;
    }
    path
}

/// Constituents directly attached to the SelfCat-to-root path: children of
/// path nodes that are not path nodes themselves and lie outside the SelfCat
/// subtree, ordered left to right. This is the observation sequence for the
/// argument segmenter.
pub fn candidate_constituents(tree: &Tree, selfcat: NodeId) -> Vec<NodeId> {
    let path = root_path(tree, selfcat);
    let mut candidates = Vec::new();
    for &path_node in &path {
        for &child in tree.children(path_node) {
            if path.contains(&child) || child == selfcat {
                continue;
            }
            if tree.is_ancestor_of(selfcat, child) {
                continue;
            }
            candidates.push(child);
        }
    }
    candidates.sort_by_key(|&n| tree.span(n).0);
    candidates
}

/// Head-finding rule table, one row per parent label. Direction gives the
/// child scan order; items are tried in priority order.
#[derive(Debug, Clone)]
pub struct HeadRules {
    rows: BTreeMap<String, (Direction, Vec<String>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Left,
    Right,
}

impl HeadRules {
    /// Parses the table format: one line per parent label,
    /// `PARENT direction child1 child2 ...`, with `#` comments.
    pub fn parse(text: &str) -> Result<Self, TreeError> {
        let mut rows = BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut parts = trimmed.split_whitespace();
            let parent = parts.next().expect("non-empty line").to_owned();
            let direction = match parts.next() {
                Some("left") => Direction::Left,
                Some("right") => Direction::Right,
                other => {
                    return Err(TreeError::HeadRuleFormat {
                        line: line_no,
                        message: format!("expected direction left|right, got {other:?}"),
                    })
                }
            };
            let items: Vec<String> = parts.map(str::to_owned).collect();
            rows.insert(parent, (direction, items));
        }
        Ok(HeadRules { rows })
    }

    pub fn load(path: &Path) -> Result<Self, TreeError> {
        let text = fs::read_to_string(path).map_err(|e| TreeError::HeadRuleFormat {
            line: 0,
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// The table shipped with the crate.
    pub fn bundled() -> Self {
        Self::parse(include_str!("../data/head_rules.txt")).expect("bundled table is valid")
    }

    fn head_child(&self, tree: &Tree, node: NodeId) -> NodeId {
        let children = tree.children(node);
        debug_assert!(!children.is_empty());
        if let Some((direction, items)) = self.rows.get(tree.label(node)) {
            for item in items {
                let found = match direction {
                    Direction::Left => children.iter().find(|&&c| tree.label(c) == item),
                    Direction::Right => children.iter().rev().find(|&&c| tree.label(c) == item),
                };
                if let Some(&child) = found {
                    return child;
                }
            }
        }
        // No row or no priority item matched.
        *children.last().expect("non-empty children")
    }
}

/// Finds the lexical head token of a constituent by recursive rule-table
/// descent; a leaf heads itself.
pub fn head_token<'a>(
    tree: &Tree,
    node: NodeId,
    sentence: &'a Sentence,
    rules: &HeadRules,
) -> &'a Token {
    let mut current = node;
    while !tree.is_leaf(current) {
        current = rules.head_child(tree, current);
    }
    &sentence.tokens[tree.span(current).0]
}

/// `"LABEL -> child1 child2 ..."` for internal nodes; leaves yield
/// `"POS -> word"` with the word lowercased.
pub fn production_rule(tree: &Tree, node: NodeId) -> String {
    if tree.is_leaf(node) {
        format!(
            "{} -> {}",
            tree.label(node),
            tree.word(node).unwrap_or("").to_lowercase()
        )
    } else {
        let children: Vec<&str> = tree.children(node).iter().map(|&c| tree.label(c)).collect();
        format!("{} -> {}", tree.label(node), children.join(" "))
    }
}

/// Labels of the node, its parent, and its siblings, with sentinels.
pub fn node_context(tree: &Tree, node: NodeId) -> NodeContext {
    let parent = tree.parent(node);
    let parent_label = parent
        .map(|p| tree.label(p).to_owned())
        .unwrap_or_else(|| "ROOT".to_owned());
    let (left, right) = match parent {
        Some(p) => {
            let siblings = tree.children(p);
            let position = siblings
                .iter()
                .position(|&c| c == node)
                .expect("child of parent");
            let left = position
                .checked_sub(1)
                .map(|i| tree.label(siblings[i]).to_owned());
            let right = siblings
                .get(position + 1)
                .map(|&c| tree.label(c).to_owned());
            (left, right)
        }
        None => (None, None),
    };
    NodeContext {
        label: tree.label(node).to_owned(),
        parent_label,
        left_sibling_label: left.unwrap_or_else(|| "NONE".to_owned()),
        right_sibling_label: right.unwrap_or_else(|| "NONE".to_owned()),
    }
}
