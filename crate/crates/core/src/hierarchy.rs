//! Class-hierarchy tree: parsing, validation, and queries.
//!
//! A hierarchy is an immutable rooted tree over named classes. Leaves are the
//! mutually exclusive ground-truth classes; internal nodes are unions of their
//! leaf descendants. A prediction at node `v` is correct for a leaf label `y`
//! iff `v` lies on the path from `y` to the root.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

/// Dense index identifying a node within one [`Hierarchy`].
///
/// Ids are assigned in first-appearance order while parsing and are not
/// stable across files; names are the external identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum HierarchyError {
    #[error("CycleDetected")]
    CycleDetected,
    #[error("MultipleParents({0})")]
    MultipleParents(String),
    #[error("MultipleRoots({})", .0.join(","))]
    MultipleRoots(Vec<String>),
    #[error("DuplicateEdge")]
    DuplicateEdge,
    #[error("EmptyHierarchy")]
    EmptyHierarchy,
    #[error("FewerThanTwoLeaves")]
    FewerThanTwoLeaves,
    #[error("MalformedLine({0})")]
    MalformedLine(usize),
    #[error("DuplicateName({0})")]
    DuplicateName(String),
    #[error("LabelNotLeaf")]
    LabelNotLeaf,
    #[error("InvalidNodeId({0})")]
    InvalidNodeId(u32),
}

/// Immutable rooted tree over named classes with cached per-node leaf counts,
/// depths, heights, and a topological order (parents before children).
///
/// Safe to share across threads; all queries are pure.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    names: Vec<String>,
    parent: Vec<Option<NodeId>>,
    children: Vec<Vec<NodeId>>,
    root: NodeId,
    leaves: Vec<NodeId>,
    leaf_count: Vec<usize>,
    depth: Vec<usize>,
    height: Vec<usize>,
    name_to_id: HashMap<String, NodeId>,
    topo: Vec<NodeId>,
}

impl Hierarchy {
    /// Builds and validates a hierarchy from per-node names and parent links.
    ///
    /// `parent[i]` is the index of node `i`'s parent, or `None` at the root.
    /// Children keep the order in which they appear in `parent`.
    pub fn from_parents(
        names: Vec<String>,
        parent_idx: Vec<Option<usize>>,
    ) -> Result<Self, HierarchyError> {
        let n = names.len();
        if n == 0 {
            return Err(HierarchyError::EmptyHierarchy);
        }
        assert_eq!(parent_idx.len(), n);

        let mut name_to_id = HashMap::with_capacity(n);
        for (i, name) in names.iter().enumerate() {
            if name_to_id.insert(name.clone(), NodeId(i as u32)).is_some() {
                return Err(HierarchyError::DuplicateName(name.clone()));
            }
        }

        let roots: Vec<usize> = (0..n).filter(|&i| parent_idx[i].is_none()).collect();
        match roots.len() {
            0 => return Err(HierarchyError::CycleDetected),
            1 => {}
            _ => {
                return Err(HierarchyError::MultipleRoots(
                    roots.iter().map(|&i| names[i].clone()).collect(),
                ))
            }
        }
        let root = NodeId(roots[0] as u32);

        let parent: Vec<Option<NodeId>> = parent_idx
            .iter()
            .map(|p| p.map(|i| NodeId(i as u32)))
            .collect();
        let mut children: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                children[p.index()].push(NodeId(i as u32));
            }
        }

        // BFS from the root; unreached nodes sit on a cycle (or hang off one).
        let mut depth = vec![usize::MAX; n];
        let mut topo = Vec::with_capacity(n);
        depth[root.index()] = 0;
        topo.push(root);
        let mut head = 0;
        while head < topo.len() {
            let v = topo[head];
            head += 1;
            for &c in &children[v.index()] {
                depth[c.index()] = depth[v.index()] + 1;
                topo.push(c);
            }
        }
        if topo.len() != n {
            return Err(HierarchyError::CycleDetected);
        }

        let leaves: Vec<NodeId> = (0..n)
            .map(|i| NodeId(i as u32))
            .filter(|v| children[v.index()].is_empty())
            .collect();
        if leaves.len() < 2 {
            return Err(HierarchyError::FewerThanTwoLeaves);
        }

        let mut leaf_count = vec![0usize; n];
        let mut height = vec![0usize; n];
        for &v in topo.iter().rev() {
            let i = v.index();
            if children[i].is_empty() {
                leaf_count[i] = 1;
            } else {
                leaf_count[i] = children[i].iter().map(|c| leaf_count[c.index()]).sum();
                height[i] = 1 + children[i].iter().map(|c| height[c.index()]).max().unwrap();
            }
        }

        Ok(Hierarchy {
            names,
            parent,
            children,
            root,
            leaves,
            leaf_count,
            depth,
            height,
            name_to_id,
            topo,
        })
    }

    pub fn node_count(&self) -> usize {
        self.names.len()
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn name(&self, v: NodeId) -> &str {
        &self.names[v.index()]
    }

    pub fn node_by_name(&self, name: &str) -> Option<NodeId> {
        self.name_to_id.get(name.trim()).copied()
    }

    pub fn parent(&self, v: NodeId) -> Option<NodeId> {
        self.parent[v.index()]
    }

    pub fn children(&self, v: NodeId) -> &[NodeId] {
        &self.children[v.index()]
    }

    /// Leaves in ascending `NodeId` order; this is the canonical leaf order
    /// used for score-table columns.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn is_leaf(&self, v: NodeId) -> bool {
        self.children[v.index()].is_empty()
    }

    pub fn leaf_count(&self, v: NodeId) -> usize {
        self.leaf_count[v.index()]
    }

    pub fn depth(&self, v: NodeId) -> usize {
        self.depth[v.index()]
    }

    pub fn height(&self, v: NodeId) -> usize {
        self.height[v.index()]
    }

    /// Nodes in an order where every parent precedes its children.
    pub fn topo_order(&self) -> &[NodeId] {
        &self.topo
    }

    /// The path `[v, parent(v), ..., root]`.
    pub fn ancestors(&self, v: NodeId) -> Vec<NodeId> {
        let mut path = Vec::with_capacity(self.depth(v) + 1);
        let mut cur = v;
        path.push(cur);
        while let Some(p) = self.parent(cur) {
            path.push(p);
            cur = p;
        }
        path
    }

    /// True iff `anc` is `v` or a proper ancestor of `v`.
    pub fn is_ancestor(&self, anc: NodeId, v: NodeId) -> bool {
        let target = self.depth(anc);
        let mut cur = v;
        while self.depth(cur) > target {
            cur = self.parent(cur).expect("non-root node has a parent");
        }
        cur == anc
    }

    /// Lowest common ancestor of `u` and `v`.
    pub fn lca(&self, u: NodeId, v: NodeId) -> NodeId {
        let (mut u, mut v) = (u, v);
        while self.depth(u) > self.depth(v) {
            u = self.parent(u).unwrap();
        }
        while self.depth(v) > self.depth(u) {
            v = self.parent(v).unwrap();
        }
        while u != v {
            u = self.parent(u).unwrap();
            v = self.parent(v).unwrap();
        }
        u
    }

    /// Entropy-based coverage `1 - ln|L(v)| / ln|L(root)|`.
    ///
    /// 0 at the root, 1 at every leaf. Base-invariant since it is a ratio.
    pub fn node_coverage(&self, v: NodeId) -> f64 {
        let total = self.leaf_count(self.root) as f64;
        1.0 - (self.leaf_count(v) as f64).ln() / total.ln()
    }

    /// Hierarchical correctness: `predicted` is the label or one of its
    /// ancestors.
    pub fn is_correct(&self, predicted: NodeId, label: NodeId) -> Result<bool, HierarchyError> {
        if !self.is_leaf(label) {
            return Err(HierarchyError::LabelNotLeaf);
        }
        Ok(self.is_ancestor(predicted, label))
    }

    /// Serializes back to the canonical edge-list TSV (one `parent<TAB>child`
    /// per line, parents before children).
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for &v in &self.topo {
            for &c in self.children(v) {
                out.push_str(self.name(v));
                out.push('\t');
                out.push_str(self.name(c));
                out.push('\n');
            }
        }
        out
    }
}

/// Parses the edge-list TSV format: one `parent<TAB>child` per line, names
/// trimmed, `#`-prefixed comment lines and blank lines ignored, LF or CRLF.
///
/// The root is the unique name never appearing as a child; children keep
/// first-appearance order.
pub fn parse_hierarchy(text: &str) -> Result<Hierarchy, HierarchyError> {
    let mut names: Vec<String> = Vec::new();
    let mut name_to_id: HashMap<String, usize> = HashMap::new();
    let mut parent_idx: Vec<Option<usize>> = Vec::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();

    let mut intern = |name: &str, names: &mut Vec<String>, parent_idx: &mut Vec<Option<usize>>| {
        *name_to_id.entry(name.to_owned()).or_insert_with(|| {
            names.push(name.to_owned());
            parent_idx.push(None);
            names.len() - 1
        })
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(2, '\t');
        let parent_name = parts.next().unwrap_or("").trim();
        let child_name = parts.next().unwrap_or("").trim();
        if parent_name.is_empty() || child_name.is_empty() {
            return Err(HierarchyError::MalformedLine(lineno + 1));
        }
        let p = intern(parent_name, &mut names, &mut parent_idx);
        let c = intern(child_name, &mut names, &mut parent_idx);
        if edges.contains(&(p, c)) {
            return Err(HierarchyError::DuplicateEdge);
        }
        edges.push((p, c));
        match parent_idx[c] {
            None => parent_idx[c] = Some(p),
            Some(existing) if existing == p => unreachable!("duplicate edge caught above"),
            Some(_) => return Err(HierarchyError::MultipleParents(names[c].clone())),
        }
    }

    if names.is_empty() {
        return Err(HierarchyError::EmptyHierarchy);
    }
    Hierarchy::from_parents(names, parent_idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn five_node() -> Hierarchy {
        parse_hierarchy("r\ta\nr\tb\na\ta1\na\ta2").unwrap()
    }

    #[test]
    fn smallest_valid_tree() {
        let h = parse_hierarchy("root\ta\nroot\tb").unwrap();
        assert_eq!(h.node_count(), 3);
        assert_eq!(h.leaves().len(), 2);
        assert_eq!(h.name(h.root()), "root");
    }

    #[test]
    fn two_node_cycle() {
        assert_eq!(
            parse_hierarchy("a\tb\nb\ta").unwrap_err(),
            HierarchyError::CycleDetected
        );
    }

    #[test]
    fn disconnected_cycle() {
        assert_eq!(
            parse_hierarchy("r\ta\nr\tz\nb\tc\nc\tb").unwrap_err(),
            HierarchyError::CycleDetected
        );
    }

    #[test]
    fn five_node_counts() {
        let h = five_node();
        assert_eq!(h.node_count(), 5);
        let leaves: Vec<&str> = h.leaves().iter().map(|&v| h.name(v)).collect();
        assert_eq!(leaves, vec!["b", "a1", "a2"]);
        let a = h.node_by_name("a").unwrap();
        assert_eq!(h.leaf_count(a), 2);
        assert_eq!(h.leaf_count(h.root()), 3);
    }

    #[test]
    fn parse_errors() {
        assert_eq!(
            parse_hierarchy("").unwrap_err(),
            HierarchyError::EmptyHierarchy
        );
        assert_eq!(
            parse_hierarchy("# only a comment\n").unwrap_err(),
            HierarchyError::EmptyHierarchy
        );
        assert_eq!(
            parse_hierarchy("r\ta").unwrap_err(),
            HierarchyError::FewerThanTwoLeaves
        );
        assert_eq!(
            parse_hierarchy("r\ta\nr\ta").unwrap_err(),
            HierarchyError::DuplicateEdge
        );
        assert_eq!(
            parse_hierarchy("r\tc\ns\tc\nr\tx\ns\ty").unwrap_err(),
            HierarchyError::MultipleParents("c".into())
        );
        assert_eq!(
            parse_hierarchy("r\ta\ns\tb").unwrap_err(),
            HierarchyError::MultipleRoots(vec!["r".into(), "s".into()])
        );
        assert_eq!(
            parse_hierarchy("r\ta\nnotanedge").unwrap_err(),
            HierarchyError::MalformedLine(2)
        );
    }

    #[test]
    fn crlf_and_comments() {
        let h = parse_hierarchy("# comment\r\nr\ta\r\n\r\nr\tb\r\n").unwrap();
        assert_eq!(h.node_count(), 3);
    }

    #[test]
    fn ancestors_path() {
        let h = five_node();
        assert_eq!(h.ancestors(h.root()), vec![h.root()]);
        let a1 = h.node_by_name("a1").unwrap();
        let path: Vec<&str> = h.ancestors(a1).iter().map(|&v| h.name(v)).collect();
        assert_eq!(path, vec!["a1", "a", "r"]);
    }

    #[test]
    fn lca_cases() {
        let h = five_node();
        let (a, a1, a2, b) = (
            h.node_by_name("a").unwrap(),
            h.node_by_name("a1").unwrap(),
            h.node_by_name("a2").unwrap(),
            h.node_by_name("b").unwrap(),
        );
        assert_eq!(h.lca(a1, a1), a1);
        assert_eq!(h.lca(a1, a2), a);
        assert_eq!(h.lca(a1, b), h.root());
        assert_eq!(h.lca(b, a1), h.root());
    }

    #[test]
    fn coverage_values() {
        let h = five_node();
        assert_eq!(h.node_coverage(h.root()), 0.0);
        let a1 = h.node_by_name("a1").unwrap();
        assert_eq!(h.node_coverage(a1), 1.0);
        let a = h.node_by_name("a").unwrap();
        let expected = 1.0 - 2f64.ln() / 3f64.ln();
        assert!((h.node_coverage(a) - expected).abs() < 1e-15);

        // 4-leaf balanced tree: internal node over 2 leaves has coverage 0.5.
        let h4 = parse_hierarchy("r\tu\nr\tv\nu\tu1\nu\tu2\nv\tv1\nv\tv2").unwrap();
        let u = h4.node_by_name("u").unwrap();
        assert!((h4.node_coverage(u) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn correctness() {
        let h = five_node();
        let (a, a1, b) = (
            h.node_by_name("a").unwrap(),
            h.node_by_name("a1").unwrap(),
            h.node_by_name("b").unwrap(),
        );
        for &y in h.leaves() {
            assert!(h.is_correct(h.root(), y).unwrap());
        }
        assert!(h.is_correct(a, a1).unwrap());
        assert!(!h.is_correct(a, b).unwrap());
        assert!(h.is_correct(b, b).unwrap());
        assert_eq!(
            h.is_correct(a1, a).unwrap_err(),
            HierarchyError::LabelNotLeaf
        );
    }

    #[test]
    fn roundtrip_isomorphic() {
        let h = five_node();
        let h2 = parse_hierarchy(&h.to_edge_list()).unwrap();
        assert_eq!(h.node_count(), h2.node_count());
        for v in 0..h.node_count() {
            let v = NodeId(v as u32);
            let v2 = h2.node_by_name(h.name(v)).unwrap();
            let p = h.parent(v).map(|p| h.name(p).to_owned());
            let p2 = h2.parent(v2).map(|p| h2.name(p).to_owned());
            assert_eq!(p, p2);
        }
    }
}
