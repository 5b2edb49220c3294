use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PageSimError;

/// The DNS workload of one page: the names it resolves, in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageProfile {
    pub name: String,
    pub queries: Vec<String>,
    /// Issue every query at once instead of one after another.
    #[serde(default)]
    pub parallel: bool,
}

impl PageProfile {
    pub fn new(name: impl Into<String>, queries: Vec<String>) -> Result<Self, PageSimError> {
        let name = name.into();
        if queries.is_empty() {
            return Err(PageSimError::EmptyProfile(name));
        }
        Ok(Self {
            name,
            queries,
            parallel: false,
        })
    }

    /// `k` distinct names under a common suffix.
    pub fn synthetic(k: usize) -> Result<Self, PageSimError> {
        let queries = (0..k).map(|i| format!("host{i}.example.com")).collect();
        Self::new(format!("k{k}"), queries)
    }

    pub fn parallel(self) -> Self {
        self.with_parallel(true)
    }

    fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }
}

/// Parses a profile file: `[name]` headers, an optional `parallel = true`
/// line, then one name per line. Blank lines and `#` comments are ignored.
pub fn parse_profiles(text: &str) -> Result<Vec<PageProfile>, PageSimError> {
    let mut out = Vec::new();
    let mut current: Option<PageProfile> = None;
    let finish = |p: Option<PageProfile>, out: &mut Vec<PageProfile>| -> Result<(), PageSimError> {
        if let Some(p) = p {
            out.push(PageProfile::new(p.name, p.queries)?.with_parallel(p.parallel));
        }
        Ok(())
    };
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            finish(current.take(), &mut out)?;
            current = Some(PageProfile {
                name: name.trim().to_string(),
                queries: Vec::new(),
                parallel: false,
            });
            continue;
        }
        let Some(p) = current.as_mut() else {
            return Err(PageSimError::Parse {
                line: i + 1,
                message: "name before the first [profile] header".into(),
            });
        };
        if let Some((k, v)) = line.split_once('=') {
            match (k.trim(), v.trim()) {
                ("parallel", "true") => p.parallel = true,
                ("parallel", "false") => p.parallel = false,
                _ => {
                    return Err(PageSimError::Parse {
                        line: i + 1,
                        message: format!("unknown setting {line:?}"),
                    })
                }
            }
        } else if line.contains(char::is_whitespace) {
            return Err(PageSimError::Parse {
                line: i + 1,
                message: format!("not a domain name: {line:?}"),
            });
        } else {
            p.queries.push(line.to_string());
        }
    }
    finish(current, &mut out)?;
    Ok(out)
}

pub fn load_profiles(path: impl AsRef<Path>) -> Result<Vec<PageProfile>, PageSimError> {
    parse_profiles(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections() {
        let text = "# c\n[a]\nx.com\ny.com\n\n[b]\nparallel = true\nz.com # trailing\n";
        let p = parse_profiles(text).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].queries, ["x.com", "y.com"]);
        assert!(!p[0].parallel);
        assert!(p[1].parallel);
        assert_eq!(p[1].queries, ["z.com"]);
    }

    #[test]
    fn rejects_empty_and_orphans() {
        assert!(
            matches!(parse_profiles("[a]\n[b]\nx.com"), Err(PageSimError::EmptyProfile(n)) if n == "a")
        );
        assert!(matches!(
            parse_profiles("x.com\n[a]\ny.com"),
            Err(PageSimError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_profiles("[a]\nspeed = 3\n"),
            Err(PageSimError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn shipped_profiles_parse() {
        let p = load_profiles(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/profiles/synthetic.txt"
        ))
        .unwrap();
        let ks: Vec<usize> = p.iter().map(|p| p.queries.len()).collect();
        assert_eq!(ks, [1, 5, 10, 20]);
    }
}
