//! Finite simple graphs with optional per-vertex activity overrides.
//!
//! JSON form:
//! ```json
//! {"n": 4, "edges": [[0,1],[1,2],[2,3]], "fields": {"0": "2/3"}}
//! ```
//! Vertices are `0..n`. `fields` maps a vertex to a vertex activity that
//! replaces the global `lambda` for that vertex; absent vertices use the
//! global value. Edges are stored with the smaller endpoint first and
//! sorted, so equal graphs serialize identically.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Graph {
    pub n: usize,
    pub edges: Vec<(u32, u32)>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fields: BTreeMap<u32, Scalar>,
}

impl Graph {
    pub fn empty(n: usize) -> Self {
        Graph { n, edges: Vec::new(), fields: BTreeMap::new() }
    }

    pub fn with_edges(n: usize, edges: &[(u32, u32)]) -> Result<Self> {
        let mut g = Graph::empty(n);
        for &(u, v) in edges {
            g.add_edge(u, v)?;
        }
        g.canonicalize()?;
        Ok(g)
    }

    pub fn add_edge(&mut self, u: u32, v: u32) -> Result<()> {
        if u == v {
            return Err(Error::Parse(format!("self-loop at vertex {u}")));
        }
        if u as usize >= self.n || v as usize >= self.n {
            return Err(Error::Parse(format!("edge ({u},{v}) out of range, n={}", self.n)));
        }
        self.edges.push((u.min(v), u.max(v)));
        Ok(())
    }

    /// Sort edges, reject duplicates, and check field keys are in range.
    pub fn canonicalize(&mut self) -> Result<()> {
        for e in &mut self.edges {
            *e = (e.0.min(e.1), e.0.max(e.1));
        }
        self.edges.sort_unstable();
        if self.edges.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Parse("duplicate edge".into()));
        }
        if let Some((&v, _)) = self.fields.iter().next_back() {
            if v as usize >= self.n {
                return Err(Error::Parse(format!("field override at missing vertex {v}")));
            }
        }
        for e in &self.edges {
            if e.0 == e.1 {
                return Err(Error::Parse(format!("self-loop at vertex {}", e.0)));
            }
            if e.1 as usize >= self.n {
                return Err(Error::Parse(format!("edge {e:?} out of range, n={}", self.n)));
            }
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let mut g: Graph =
            serde_json::from_str(json).map_err(|e| Error::Parse(format!("graph JSON: {e}")))?;
        g.canonicalize()?;
        Ok(g)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("graph serialization cannot fail")
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn adjacency(&self) -> Vec<Vec<u32>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v) in &self.edges {
            adj[u as usize].push(v);
            adj[v as usize].push(u);
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0usize; self.n];
        for &(u, v) in &self.edges {
            d[u as usize] += 1;
            d[v as usize] += 1;
        }
        d
    }

    pub fn is_regular(&self, k: usize) -> bool {
        self.degrees().iter().all(|&d| d == k)
    }

    /// Append `other` as a disjoint block; returns the vertex offset its
    /// indices were shifted by.
    pub fn append_disjoint(&mut self, other: &Graph) -> u32 {
        let off = self.n as u32;
        self.n += other.n;
        for &(u, v) in &other.edges {
            self.edges.push((u + off, v + off));
        }
        for (&v, f) in &other.fields {
            self.fields.insert(v + off, f.clone());
        }
        off
    }

    /// Effective vertex activity of `v` under global activity `lambda`.
    pub fn field_at(&self, v: u32, lambda: &Scalar) -> Scalar {
        self.fields.get(&v).cloned().unwrap_or_else(|| lambda.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_json_round_trip() {
        let mut g = Graph::empty(4);
        g.add_edge(2, 1).unwrap();
        g.add_edge(0, 1).unwrap();
        g.add_edge(3, 2).unwrap();
        g.fields.insert(0, Scalar::from_ratio(2, 3));
        g.canonicalize().unwrap();
        let json = g.to_json();
        assert_eq!(
            json,
            r#"{"n":4,"edges":[[0,1],[1,2],[2,3]],"fields":{"0":"2/3"}}"#
        );
        let g2 = Graph::from_json(&json).unwrap();
        assert_eq!(g2.to_json(), json);
    }

    #[test]
    fn rejects_malformed() {
        assert!(Graph::with_edges(3, &[(0, 0)]).is_err());
        assert!(Graph::with_edges(3, &[(0, 5)]).is_err());
        assert!(Graph::with_edges(3, &[(0, 1), (1, 0)]).is_err());
        assert!(Graph::from_json(r#"{"n":2,"edges":[[0,1]],"fields":{"9":"1"}}"#).is_err());
    }

    #[test]
    fn disjoint_append_shifts_indices() {
        let mut a = Graph::with_edges(2, &[(0, 1)]).unwrap();
        let b = Graph::with_edges(3, &[(0, 2)]).unwrap();
        let off = a.append_disjoint(&b);
        assert_eq!(off, 2);
        assert_eq!(a.n, 5);
        assert!(a.edges.contains(&(2, 4)));
    }
}
