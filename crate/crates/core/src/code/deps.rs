//! Pattern-based import extraction and deterministic topological ordering.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{LangFamily, Repository};
use crate::error::{Error, Result};

/// Files as nodes; an edge `(dependency, importer)` means the importer
/// needs the dependency first.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RepoGraph {
    nodes: BTreeSet<String>,
    edges: BTreeSet<(String, String)>,
}

/// Debug dump: `{"edges": [[dep, importer], ...]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphDump {
    pub edges: Vec<(String, String)>,
}

impl RepoGraph {
    pub fn new(
        nodes: impl IntoIterator<Item = String>,
        edges: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let nodes: BTreeSet<String> = nodes.into_iter().collect();
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b {
                return Err(Error::InvalidConfig(format!("self-edge on {a:?}")));
            }
            for n in [&a, &b] {
                if !nodes.contains(n) {
                    return Err(Error::InvalidConfig(format!(
                        "edge references unknown node {n:?}"
                    )));
                }
            }
            set.insert((a, b));
        }
        Ok(RepoGraph { nodes, edges: set })
    }

    pub fn nodes(&self) -> &BTreeSet<String> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(String, String)> {
        &self.edges
    }

    pub fn dump(&self) -> GraphDump {
        GraphDump {
            edges: self.edges.iter().cloned().collect(),
        }
    }
}

/// Kahn's algorithm taking the lexicographically smallest ready node each
/// step. When nothing is ready, the smallest remaining node has its unmet
/// incoming edges discarded and becomes ready.
pub fn topo_order(graph: &RepoGraph) -> Vec<String> {
    let mut indegree: BTreeMap<&str, usize> = graph.nodes.iter().map(|n| (n.as_str(), 0)).collect();
    let mut successors: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (a, b) in &graph.edges {
        *indegree.get_mut(b.as_str()).unwrap() += 1;
        successors.entry(a.as_str()).or_default().push(b.as_str());
    }
    let mut ready: BTreeSet<&str> = indegree
        .iter()
        .filter(|(_, &d)| d == 0)
        .map(|(&n, _)| n)
        .collect();
    let mut remaining: BTreeSet<&str> = indegree.keys().copied().collect();
    let mut order = Vec::with_capacity(remaining.len());
    while !remaining.is_empty() {
        let next = match ready.pop_first() {
            Some(n) => n,
            None => {
                let n = *remaining.first().unwrap();
                indegree.insert(n, 0);
                n
            }
        };
        remaining.remove(next);
        order.push(next.to_string());
        for &s in successors.get(next).into_iter().flatten() {
            if !remaining.contains(s) {
                continue;
            }
            let d = indegree.get_mut(s).unwrap();
            if *d > 0 {
                *d -= 1;
                if *d == 0 {
                    ready.insert(s);
                }
            }
        }
    }
    order
}

fn python_import() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^[ \t]*import[ \t]+([\w.][\w., \t]*)").unwrap())
}

fn python_from() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?m)^[ \t]*from[ \t]+(\.*)([\w.]*)[ \t]+import[ \t]+\(?([\w., \t*]+)").unwrap()
    })
}

fn c_include() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"(?m)^[ \t]*#[ \t]*include[ \t]*"([^"\n]+)""#).unwrap())
}

fn js_imports() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r#"(?:\bimport\s+(?:[\w*{}\s,$]+?\s+from\s+)?|\bexport\s+[\w*{}\s,$]+?\s+from\s+|\brequire\(\s*|\bimport\(\s*)['"]([^'"\n]+)['"]"#,
        )
        .unwrap()
    })
}

const JS_EXTENSIONS: [&str; 6] = [".js", ".ts", ".jsx", ".tsx", ".mjs", ".cjs"];

/// Joins `rel` onto `dir`, resolving `.` and `..`; `None` if it escapes
/// the repository root.
fn join_path(dir: &str, rel: &str) -> Option<String> {
    let mut parts: Vec<&str> = if rel.starts_with('/') {
        Vec::new()
    } else {
        dir.split('/').filter(|p| !p.is_empty()).collect()
    };
    for p in rel.split('/') {
        match p {
            "" | "." => {}
            ".." => {
                parts.pop()?;
            }
            p => parts.push(p),
        }
    }
    (!parts.is_empty()).then(|| parts.join("/"))
}

fn parent_dir(path: &str) -> &str {
    path.rsplit_once('/').map(|(d, _)| d).unwrap_or("")
}

/// An import reference: repository-relative candidates tried first, then
/// bare suffixes matched against any path.
struct Reference {
    relative: Vec<String>,
    suffixes: Vec<String>,
}

fn python_refs(path: &str, text: &str) -> Vec<Reference> {
    let dir = parent_dir(path);
    let module_files = |module_path: &str| {
        vec![
            format!("{module_path}.py"),
            format!("{module_path}/__init__.py"),
        ]
    };
    let mut refs = Vec::new();
    for cap in python_import().captures_iter(text) {
        for item in cap[1].split(',') {
            let module = item.split_whitespace().next().unwrap_or("");
            if module.is_empty() {
                continue;
            }
            let mp = module.replace('.', "/");
            let files = module_files(&mp);
            refs.push(Reference {
                relative: files.iter().filter_map(|f| join_path(dir, f)).collect(),
                suffixes: files,
            });
        }
    }
    for cap in python_from().captures_iter(text) {
        let dots = cap[1].len();
        let mp = cap[2].replace('.', "/");
        let names: Vec<&str> = cap[3]
            .split(',')
            .filter_map(|n| n.split_whitespace().next())
            .filter(|n| *n != "*")
            .collect();
        let mut targets: Vec<String> = Vec::new();
        if !mp.is_empty() {
            targets.push(mp.clone());
        }
        for n in &names {
            targets.push(if mp.is_empty() {
                n.to_string()
            } else {
                format!("{mp}/{n}")
            });
        }
        for t in targets {
            let files = module_files(&t);
            if dots > 0 {
                let mut base = dir.to_string();
                for _ in 1..dots {
                    base = parent_dir(&base).to_string();
                }
                refs.push(Reference {
                    relative: files.iter().filter_map(|f| join_path(&base, f)).collect(),
                    suffixes: Vec::new(),
                });
            } else {
                refs.push(Reference {
                    relative: files.iter().filter_map(|f| join_path(dir, f)).collect(),
                    suffixes: files,
                });
            }
        }
    }
    refs
}

fn c_refs(path: &str, text: &str) -> Vec<Reference> {
    let dir = parent_dir(path);
    c_include()
        .captures_iter(text)
        .map(|cap| {
            let inc = cap[1].trim().to_string();
            Reference {
                relative: join_path(dir, &inc).into_iter().collect(),
                suffixes: join_path("", &inc).into_iter().collect(),
            }
        })
        .collect()
}

fn js_refs(path: &str, text: &str) -> Vec<Reference> {
    let dir = parent_dir(path);
    js_imports()
        .captures_iter(text)
        .map(|cap| {
            let spec = cap[1].trim();
            let mut forms = vec![spec.to_string()];
            forms.extend(JS_EXTENSIONS.iter().map(|e| format!("{spec}{e}")));
            forms.extend(JS_EXTENSIONS.iter().map(|e| format!("{spec}/index{e}")));
            let relative = forms.iter().filter_map(|f| join_path(dir, f)).collect();
            let suffixes = if spec.starts_with('.') {
                Vec::new()
            } else {
                forms.iter().filter_map(|f| join_path("", f)).collect()
            };
            Reference { relative, suffixes }
        })
        .collect()
}

fn resolve(reference: &Reference, paths: &BTreeSet<&str>) -> Option<String> {
    if let Some(hit) = reference
        .relative
        .iter()
        .find(|c| paths.contains(c.as_str()))
    {
        return Some(hit.clone());
    }
    for suffix in &reference.suffixes {
        let tail = format!("/{suffix}");
        if let Some(hit) = paths.iter().find(|p| **p == suffix || p.ends_with(&tail)) {
            return Some(hit.to_string());
        }
    }
    None
}

/// Scans import statements per language family and links each resolvable
/// import to the in-repo file it names. Unresolvable imports are external
/// and ignored.
pub fn extract_dependencies(repo: &Repository) -> RepoGraph {
    let paths: BTreeSet<&str> = repo.files.iter().map(|f| f.path.as_str()).collect();
    let mut edges = BTreeSet::new();
    for file in &repo.files {
        let refs = match file.family {
            LangFamily::PythonLike => python_refs(&file.path, &file.text),
            LangFamily::CLike => c_refs(&file.path, &file.text),
            LangFamily::JsLike => js_refs(&file.path, &file.text),
            LangFamily::Other => continue,
        };
        for r in refs {
            if let Some(dep) = resolve(&r, &paths) {
                if dep != file.path {
                    edges.insert((dep, file.path.clone()));
                }
            }
        }
    }
    RepoGraph {
        nodes: paths.into_iter().map(String::from).collect(),
        edges,
    }
}
