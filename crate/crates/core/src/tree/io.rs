//! Tree files (JSON).
//!
//! ```json
//! {"version": 1,
//!  "blocks": [{"weights": [0.5, 0.5], "signs": [1, -1]}],
//!  "root": {"level": 0, "block": 0, "function": [0, 1],
//!           "children": [{"level": 1}, {"level": 1}]}}
//! ```
//!
//! Leaves carry only their level; a `null` child is never reached.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{BlockSpace, DecisionTree, Node, Query, TreeError};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeFile {
    version: u32,
    blocks: Vec<BlockSpace>,
    root: NodeFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeFile {
    level: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    block: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    function: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    children: Vec<Option<NodeFile>>,
}

fn to_file(node: &Node, level: usize) -> NodeFile {
    match node {
        Node::Leaf => NodeFile {
            level,
            block: None,
            lambda: None,
            function: None,
            children: Vec::new(),
        },
        Node::Query(q) => NodeFile {
            level,
            block: Some(q.block),
            lambda: q.lambda,
            function: Some(q.func.to_vec()),
            children: q
                .children
                .iter()
                .map(|c| c.as_ref().map(|c| to_file(c, level + 1)))
                .collect(),
        },
    }
}

fn from_file(f: NodeFile, level: usize) -> Result<Arc<Node>, TreeError> {
    if f.level != level {
        return Err(TreeError::Format(format!(
            "node declares level {} at depth {level}",
            f.level
        )));
    }
    match (f.block, f.function) {
        (None, None) if f.children.is_empty() => Ok(Arc::new(Node::Leaf)),
        (Some(block), Some(func)) => {
            let children = f
                .children
                .into_iter()
                .map(|c| c.map(|c| from_file(c, level + 1)).transpose())
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Arc::new(Node::Query(Query {
                block,
                lambda: f.lambda,
                func: Arc::new(func),
                children,
            })))
        }
        _ => Err(TreeError::Format(format!(
            "node at level {level} needs both `block` and `function`, or neither"
        ))),
    }
}

pub fn write_tree(t: &DecisionTree) -> String {
    let file = TreeFile {
        version: 1,
        blocks: t.blocks().to_vec(),
        root: to_file(t.root(), 0),
    };
    serde_json::to_string_pretty(&file).expect("trees serialise")
}

pub fn read_tree(text: &str) -> Result<DecisionTree, TreeError> {
    let file: TreeFile =
        serde_json::from_str(text).map_err(|e| TreeError::Format(e.to_string()))?;
    if file.version != 1 {
        return Err(TreeError::Format(format!("unsupported version {}", file.version)));
    }
    DecisionTree::new(file.blocks, from_file(file.root, 0)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let leaf = Arc::new(Node::Leaf);
        let inner = Node::new_query(1, Some(3), vec![1, 0], vec![Some(leaf.clone()), Some(leaf)]);
        let root = Node::new_query(0, None, vec![0, 0, 0, 0], vec![Some(inner), None]);
        let t = DecisionTree::new(
            vec![BlockSpace::parity(&[0.25; 4]), BlockSpace::parity(&[0.5, 0.5])],
            root,
        )
        .unwrap();
        let text = write_tree(&t);
        assert_eq!(read_tree(&text).unwrap(), t);
        assert!(read_tree(&text.replace("\"version\": 1", "\"version\": 2")).is_err());
        assert!(read_tree(&text.replace("\"lambda\"", "\"lamda\"")).is_err());
    }
}
