//! JSON documents for graphs and dataset directories.
//!
//! A graph file is
//! `{"n", "edges": [[i, j, w], ...], "features", "node_labels", "graph_label", "labeled_mask"}`
//! with upper-triangle edges only. A dataset directory holds
//! `graph_00000.json`, `graph_00001.json`, ... and `split.json`
//! (`{"task", "train", "val", "test"}`).

use std::fs;
use std::path::Path;

use grelax_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use super::{Dataset, Graph, GraphError, Split, Task};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphDoc {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
    features: Vec<Vec<f64>>,
    node_labels: Option<Vec<usize>>,
    graph_label: Option<usize>,
    labeled_mask: Option<Vec<bool>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitDoc {
    task: Task,
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

fn parse_error(context: &str, e: serde_json::Error) -> GraphError {
    GraphError::Parse {
        context: context.to_string(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

fn io_error(path: &Path, source: std::io::Error) -> GraphError {
    GraphError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn to_json(g: &Graph) -> String {
    let doc = GraphDoc {
        n: g.n(),
        edges: g.edges(),
        features: (0..g.n()).map(|i| g.features().row(i).to_vec()).collect(),
        node_labels: g.node_labels.clone(),
        graph_label: g.graph_label,
        labeled_mask: g.labeled_mask.clone(),
    };
    serde_json::to_string(&doc).expect("graph documents always serialize")
}

/// Parses and validates one graph document; `context` names it in errors.
pub fn parse_graph(text: &str, context: &str) -> Result<Graph, GraphError> {
    let doc: GraphDoc = serde_json::from_str(text).map_err(|e| parse_error(context, e))?;
    let invalid = |msg: String| GraphError::Invalid(format!("{context}: {msg}"));
    if doc.features.len() != doc.n {
        return Err(invalid(format!("{} feature rows for n={}", doc.features.len(), doc.n)));
    }
    let d = doc.features.first().map_or(0, Vec::len);
    if doc.features.iter().any(|r| r.len() != d) {
        return Err(invalid("ragged feature rows".into()));
    }
    let mut adj = Tensor::zeros(&[doc.n, doc.n]);
    for &(i, j, w) in &doc.edges {
        if i >= doc.n || j >= doc.n {
            return Err(invalid(format!("edge ({i}, {j}) out of range")));
        }
        if i == j {
            return Err(invalid(format!("self loop at node {i}")));
        }
        if adj.get2(i, j) != 0.0 && adj.get2(i, j) != w {
            return Err(invalid(format!(
                "asymmetric adjacency: pair ({i}, {j}) listed with weights {} and {w}",
                adj.get2(i, j)
            )));
        }
        adj.set2(i, j, w);
        adj.set2(j, i, w);
    }
    let features = Tensor::matrix(doc.n, d, doc.features.concat());
    let mut g = Graph::new(adj, features).map_err(|e| invalid(e.to_string()))?;
    if let Some(labels) = doc.node_labels {
        if labels.len() != doc.n {
            return Err(invalid(format!("{} node labels for n={}", labels.len(), doc.n)));
        }
        g = g.with_node_labels(labels);
    }
    if let Some(mask) = doc.labeled_mask {
        if mask.len() != doc.n {
            return Err(invalid(format!("{} mask entries for n={}", mask.len(), doc.n)));
        }
        g = g.with_labeled_mask(mask);
    }
    g.graph_label = doc.graph_label;
    Ok(g)
}

pub fn save_graph(g: &Graph, path: &Path) -> Result<(), GraphError> {
    fs::write(path, to_json(g)).map_err(|e| io_error(path, e))
}

pub fn load_graph(path: &Path) -> Result<Graph, GraphError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    parse_graph(&text, &path.display().to_string())
}

fn graph_file(i: usize) -> String {
    format!("graph_{i:05}.json")
}

pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<(), GraphError> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    for (i, g) in ds.graphs.iter().enumerate() {
        save_graph(g, &dir.join(graph_file(i)))?;
    }
    let split = SplitDoc {
        task: ds.task,
        train: ds.split.train.clone(),
        val: ds.split.val.clone(),
        test: ds.split.test.clone(),
    };
    let path = dir.join("split.json");
    fs::write(&path, serde_json::to_string_pretty(&split).expect("split serializes")).map_err(|e| io_error(&path, e))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, GraphError> {
    let path = dir.join("split.json");
    let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
    let doc: SplitDoc = serde_json::from_str(&text).map_err(|e| parse_error(&path.display().to_string(), e))?;
    let mut graphs = Vec::new();
    loop {
        let p = dir.join(graph_file(graphs.len()));
        if !p.exists() {
            break;
        }
        graphs.push(load_graph(&p)?);
    }
    let split = Split {
        train: doc.train,
        val: doc.val,
        test: doc.test,
    };
    Dataset::new(graphs, split, doc.task)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triangle() -> Graph {
        let feats = Tensor::matrix(3, 2, vec![0.1, -2.5, 1.0 / 3.0, 7e-300, 0.0, 1e10]);
        Graph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)], feats)
            .unwrap()
            .with_node_labels(vec![0, 1, 1])
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let g = triangle();
        assert_eq!(parse_graph(&to_json(&g), "t").unwrap(), g);
        let w = Graph::from_edges(2, &[(0, 1, 0.1 + 0.2)], Tensor::matrix(2, 1, vec![std::f64::consts::PI, -0.0]))
            .unwrap();
        assert_eq!(parse_graph(&to_json(&w), "w").unwrap(), w);
    }

    #[test]
    fn truncated_file_reports_position() {
        let text = to_json(&triangle());
        match parse_graph(&text[..text.len() / 2], "cut") {
            Err(GraphError::Parse { line, column, .. }) => assert!(line >= 1 && column > 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn asymmetric_listing_rejected() {
        let text = r#"{"n":2,"edges":[[0,1,1.0],[1,0,0.5]],"features":[[0.0],[0.0]],
            "node_labels":null,"graph_label":null,"labeled_mask":null}"#;
        assert!(matches!(parse_graph(text, "a"), Err(GraphError::Invalid(_))));
    }
}
