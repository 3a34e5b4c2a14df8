use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::config::Config;

/// Shortest text that round-trips the value rounded to 12 significant
/// digits; very small or large magnitudes use exponent notation.
pub fn num(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.11e}").parse().expect("formatted float parses");
    if rounded == 0.0 {
        return "0".into();
    }
    let mag = rounded.abs();
    if (1e-4..1e15).contains(&mag) {
        format!("{rounded}")
    } else {
        format!("{rounded:e}")
    }
}

/// Column-oriented CSV table with a one-line header.
pub struct Table {
    header: Vec<String>,
    columns: Vec<Vec<f64>>,
    index: Vec<usize>,
}

impl Table {
    pub fn new(index_name: &str, index: Vec<usize>) -> Self {
        Self { header: vec![index_name.to_string()], columns: Vec::new(), index }
    }

    pub fn column(&mut self, name: &str, values: Vec<f64>) {
        assert_eq!(values.len(), self.index.len(), "column {name} has the wrong length");
        self.header.push(name.to_string());
        self.columns.push(values);
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for (r, i) in self.index.iter().enumerate() {
            write!(out, "{i}").unwrap();
            for c in &self.columns {
                out.push(',');
                out.push_str(&num(c[r]));
            }
            out.push('\n');
        }
        out
    }
}

/// Output directory of one command run.
pub struct Artifact {
    dir: PathBuf,
}

impl Artifact {
    pub fn create(dir: &Path, cfg: &Config) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let a = Self { dir: dir.to_path_buf() };
        a.write("config.toml", &cfg.to_toml())?;
        a.write("seed", &format!("{}\n", cfg.simulation.seed))?;
        a.write("version", &format!("tclpop {}\n", env!("CARGO_PKG_VERSION")))?;
        Ok(a)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
    }
}
