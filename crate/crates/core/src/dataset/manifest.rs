//! Plain-text dataset manifest.
//!
//! ```text
//! # comments start with '#'
//! <f> <G>
//! labels 0-5 6-10 11-15        (optional, exactly G tokens)
//! bridge 1
//! x young/a.pgm
//! y old/a.pgm
//! bridge 2
//! ...
//! ```
//!
//! Bridges are numbered 1..G-1 and must appear in order. Within a bridge the
//! i-th `x` line pairs with the i-th `y` line. Relative paths resolve against
//! the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub f: usize,
    pub groups: usize,
    pub labels: Option<Vec<String>>,
    /// Per bridge: (younger paths, older paths).
    pub bridges: Vec<(Vec<PathBuf>, Vec<PathBuf>)>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, path)
    }

    pub fn parse(text: &str, base: &Path, origin: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Manifest {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut header: Option<(usize, usize)> = None;
        let mut labels = None;
        let mut bridges: Vec<(Vec<PathBuf>, Vec<PathBuf>)> = Vec::new();

        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((_, groups)) = header else {
                let nums: Vec<&str> = line.split_whitespace().collect();
                let parsed = match nums.as_slice() {
                    [f, g] => f.parse::<usize>().ok().zip(g.parse::<usize>().ok()),
                    _ => None,
                };
                let (f, g) = parsed.ok_or_else(|| err(lineno, "expected header `f G`".into()))?;
                if f == 0 {
                    return Err(err(lineno, "f must be positive".into()));
                }
                if g < 2 {
                    return Err(err(lineno, format!("need at least 2 groups, got {g}")));
                }
                header = Some((f, g));
                continue;
            };
            let (keyword, rest) = line
                .split_once(char::is_whitespace)
                .map(|(k, r)| (k, r.trim()))
                .unwrap_or((line, ""));
            match keyword {
                "labels" => {
                    if !bridges.is_empty() {
                        return Err(err(lineno, "labels must precede the first bridge".into()));
                    }
                    let toks: Vec<String> = rest.split_whitespace().map(str::to_owned).collect();
                    if toks.len() != groups {
                        return Err(err(
                            lineno,
                            format!("expected {groups} labels, found {}", toks.len()),
                        ));
                    }
                    labels = Some(toks);
                }
                "bridge" => {
                    let b: usize = rest
                        .parse()
                        .map_err(|_| err(lineno, format!("bad bridge index {rest:?}")))?;
                    if b != bridges.len() + 1 {
                        return Err(err(
                            lineno,
                            format!("expected bridge {}, found {b}", bridges.len() + 1),
                        ));
                    }
                    if b > groups - 1 {
                        return Err(err(lineno, format!("bridge {b} exceeds G-1 = {}", groups - 1)));
                    }
                    bridges.push((Vec::new(), Vec::new()));
                }
                "x" | "y" => {
                    if rest.is_empty() {
                        return Err(err(lineno, "missing path".into()));
                    }
                    let Some(current) = bridges.last_mut() else {
                        return Err(err(lineno, "sample listed before any bridge".into()));
                    };
                    let p = base.join(rest);
                    if keyword == "x" {
                        current.0.push(p);
                    } else {
                        current.1.push(p);
                    }
                }
                other => return Err(err(lineno, format!("unknown keyword {other:?}"))),
            }
        }

        let (f, groups) = header.ok_or_else(|| err(0, "empty manifest".into()))?;
        if bridges.len() != groups - 1 {
            return Err(err(
                0,
                format!("expected {} bridges, found {}", groups - 1, bridges.len()),
            ));
        }
        for (i, (x, y)) in bridges.iter().enumerate() {
            if x.len() != y.len() {
                return Err(Error::PairCountMismatch {
                    bridge: i + 1,
                    x: x.len(),
                    y: y.len(),
                });
            }
            if x.is_empty() {
                return Err(Error::EmptyBridge { bridge: i + 1 });
            }
        }
        Ok(Manifest {
            f,
            groups,
            labels,
            bridges,
        })
    }

    /// Renders the manifest with paths written relative to `base` when possible.
    pub fn render(&self, base: &Path) -> String {
        let mut out = format!("{} {}\n", self.f, self.groups);
        if let Some(labels) = &self.labels {
            out.push_str("labels ");
            out.push_str(&labels.join(" "));
            out.push('\n');
        }
        for (i, (xs, ys)) in self.bridges.iter().enumerate() {
            out.push_str(&format!("bridge {}\n", i + 1));
            for p in xs {
                out.push_str(&format!("x {}\n", p.strip_prefix(base).unwrap_or(p).display()));
            }
            for p in ys {
                out.push_str(&format!("y {}\n", p.strip_prefix(base).unwrap_or(p).display()));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Manifest> {
        Manifest::parse(text, Path::new("/data"), Path::new("m.txt"))
    }

    #[test]
    fn parses_blocks_in_order() {
        let m = parse(
            "# demo\n4 3\nlabels a b c\nbridge 1\nx a1\nx a2\ny b1\ny b2\nbridge 2\nx c1\ny d1\n",
        )
        .unwrap();
        assert_eq!((m.f, m.groups), (4, 3));
        assert_eq!(m.labels.unwrap(), vec!["a", "b", "c"]);
        assert_eq!(m.bridges[0].0, vec![PathBuf::from("/data/a1"), PathBuf::from("/data/a2")]);
        assert_eq!(m.bridges[1].1, vec![PathBuf::from("/data/d1")]);
    }

    #[test]
    fn pair_count_mismatch() {
        let e = parse("4 2\nbridge 1\nx a\nx b\ny c\n").unwrap_err();
        assert!(e.to_string().contains("pair count mismatch"), "{e}");
    }

    #[test]
    fn empty_bridge() {
        let e = parse("4 3\nbridge 1\nx a\ny b\nbridge 2\n").unwrap_err();
        assert!(matches!(e, Error::EmptyBridge { bridge: 2 }));
    }

    #[test]
    fn missing_bridge() {
        assert!(parse("4 3\nbridge 1\nx a\ny b\n").is_err());
        assert!(parse("4 3\nbridge 2\nx a\ny b\n").is_err());
    }

    #[test]
    fn bad_header() {
        assert!(parse("4\n").is_err());
        assert!(parse("4 1\n").is_err());
        assert!(parse("0 2\n").is_err());
    }

    #[test]
    fn render_round_trips() {
        let text = "4 3\nlabels a b c\nbridge 1\nx a1\ny b1\nbridge 2\nx c1\ny d1\n";
        let m = parse(text).unwrap();
        assert_eq!(m.render(Path::new("/data")), text);
    }
}
