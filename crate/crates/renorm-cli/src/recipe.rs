//! Recipe files: structured text with `[section]` headers and `key = value`
//! lines. Unknown sections or keys are parse errors, and every failure
//! carries its line number.

use std::collections::BTreeMap;

use renorm::error::Error;

#[derive(Debug, Clone)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
    /// 1-based column of the value within its line.
    pub value_col: usize,
}

#[derive(Debug, Default)]
pub struct Recipe {
    sections: BTreeMap<String, Vec<Entry>>,
    pub dir: Option<std::path::PathBuf>,
}

const KNOWN: &[(&str, &[&str])] = &[
    ("target", &["map"]),
    ("plugin", &["k", "delta", "case", "tol", "n_factors"]),
    ("verify", &["grid", "order"]),
    ("measure", &["density", "n", "seeds", "orbit_step"]),
    ("universal", &["band"]),
    (
        "lielab",
        &["a", "big_a", "t", "samples", "trotter_n", "commutator_tau"],
    ),
    ("star", &["left", "right", "k"]),
    ("output", &["dir"]),
];

impl Recipe {
    pub fn parse(text: &str, dir: Option<std::path::PathBuf>) -> Result<Self, Error> {
        let mut sections: BTreeMap<String, Vec<Entry>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let stripped = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            };
            let line = stripped.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or(Error::Parse {
                    line: line_no,
                    column: 1,
                    message: "unterminated section header".into(),
                })?;
                let known = KNOWN.iter().any(|(s, _)| *s == name);
                if !known {
                    return Err(Error::Parse {
                        line: line_no,
                        column: 2,
                        message: format!("unknown section `{name}`"),
                    });
                }
                sections.entry(name.to_string()).or_default();
                current = Some(name.to_string());
                continue;
            }
            let section = current.clone().ok_or(Error::Parse {
                line: line_no,
                column: 1,
                message: "key outside of any section".into(),
            })?;
            let eq = line.find('=').ok_or(Error::Parse {
                line: line_no,
                column: 1,
                message: "expected `key = value`".into(),
            })?;
            let key = line[..eq].trim().to_string();
            let value = line[eq + 1..].trim().to_string();
            let eq_raw = stripped.find('=').unwrap_or(eq);
            let after = &stripped[eq_raw + 1..];
            let value_col = eq_raw + 2 + (after.len() - after.trim_start().len());
            let allowed = KNOWN
                .iter()
                .find(|(s, _)| *s == section)
                .map(|(_, keys)| keys.contains(&key.as_str()))
                .unwrap_or(false);
            if !allowed {
                return Err(Error::Parse {
                    line: line_no,
                    column: 1,
                    message: format!("unknown key `{key}` in section [{section}]"),
                });
            }
            sections
                .get_mut(&section)
                .expect("section created on header")
                .push(Entry { key, value, line: line_no, value_col });
        }
        Ok(Recipe { sections, dir })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        let dir = path.parent().map(|p| p.to_path_buf());
        Self::parse(&text, dir)
    }

    /// Single-valued key lookup.
    pub fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.sections
            .get(section)?
            .iter()
            .find(|e| e.key == key)
    }

    /// All values of a repeatable key, in file order.
    pub fn get_all(&self, section: &str, key: &str) -> Vec<&Entry> {
        self.sections
            .get(section)
            .map(|v| v.iter().filter(|e| e.key == key).collect())
            .unwrap_or_default()
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&Entry, Error> {
        self.get(section, key).ok_or_else(|| Error::Parse {
            line: 1,
            column: 1,
            message: format!("missing {key} in section [{section}] (missing {section})"),
        })
    }

    pub fn f64_of(&self, e: &Entry) -> Result<f64, Error> {
        e.value.trim().parse::<f64>().map_err(|_| Error::Parse {
            line: e.line,
            column: 1,
            message: format!("malformed number `{}`", e.value),
        })
    }

    pub fn usize_of(&self, e: &Entry) -> Result<usize, Error> {
        e.value.trim().parse::<usize>().map_err(|_| Error::Parse {
            line: e.line,
            column: 1,
            message: format!("malformed integer `{}`", e.value),
        })
    }

    /// Parse `NxM` grid syntax.
    pub fn grid_of(&self, e: &Entry) -> Result<(usize, usize), Error> {
        let parts: Vec<&str> = e.value.trim().split('x').collect();
        if parts.len() == 2 {
            if let (Ok(a), Ok(b)) = (parts[0].trim().parse(), parts[1].trim().parse()) {
                if a > 0 && b > 0 {
                    return Ok((a, b));
                }
            }
        }
        Err(Error::Parse {
            line: e.line,
            column: 1,
            message: format!("expected grid `NxM`, got `{}`", e.value),
        })
    }
}

pub fn parse_grid_flag(raw: &str) -> Result<(usize, usize), Error> {
    let parts: Vec<&str> = raw.trim().split('x').collect();
    if parts.len() == 2 {
        if let (Ok(a), Ok(b)) = (parts[0].trim().parse(), parts[1].trim().parse()) {
            if a > 0 && b > 0 {
                return Ok((a, b));
            }
        }
    }
    Err(Error::Parse {
        line: 0,
        column: 0,
        message: format!("--grid expects `NxM`, got `{raw}`"),
    })
}
