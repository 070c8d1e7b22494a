//! CSV tables with `#` header comments, gnuplot companions and the JSON
//! run summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// A CSV file: one `# name: meaning` comment per column, then a header row.
#[derive(Clone, Debug)]
pub struct Table {
    pub name: String,
    pub title: String,
    pub columns: Vec<(String, String)>,
    pub rows: Vec<Vec<String>>,
    pub plot: Option<Plot>,
}

/// Columns (0-based) for a gnuplot companion script.
#[derive(Clone, Debug)]
pub struct Plot {
    pub x: usize,
    pub ys: Vec<usize>,
    pub log_y: bool,
}

impl Table {
    pub fn new(name: &str, title: &str, columns: &[(&str, &str)]) -> Self {
        Table {
            name: name.into(),
            title: title.into(),
            columns: columns.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            rows: Vec::new(),
            plot: None,
        }
    }

    pub fn with_plot(mut self, x: usize, ys: &[usize], log_y: bool) -> Self {
        self.plot = Some(Plot { x, ys: ys.to_vec(), log_y });
        self
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width in table {}", self.name);
        self.rows.push(row);
    }

    pub fn render(&self, preamble: &[String]) -> String {
        let mut s = String::new();
        for line in preamble {
            let _ = writeln!(s, "# {line}");
        }
        let _ = writeln!(s, "# {}", self.title);
        for (c, meaning) in &self.columns {
            let _ = writeln!(s, "# {c}: {meaning}");
        }
        let names: Vec<&str> = self.columns.iter().map(|c| c.0.as_str()).collect();
        let _ = writeln!(s, "{}", names.join(","));
        for r in &self.rows {
            let _ = writeln!(s, "{}", r.join(","));
        }
        s
    }

    pub fn gnuplot(&self) -> Option<String> {
        let p = self.plot.as_ref()?;
        let mut s = String::new();
        let _ = writeln!(s, "set datafile separator ','");
        let _ = writeln!(s, "set datafile commentschars '#'");
        let _ = writeln!(s, "set key autotitle columnhead");
        let _ = writeln!(s, "set title '{}'", self.title.replace('\'', ""));
        let _ = writeln!(s, "set xlabel '{}'", self.columns[p.x].0);
        if p.log_y {
            let _ = writeln!(s, "set logscale y");
        }
        let curves: Vec<String> = p.ys.iter().map(|&y| format!("'{}.csv' using {}:{} with linespoints", self.name, p.x + 1, y + 1)).collect();
        let _ = writeln!(s, "plot {}", curves.join(", \\\n     "));
        Some(s)
    }

    pub fn write(&self, dir: &Path, preamble: &[String], gnuplot: bool) -> std::io::Result<Vec<PathBuf>> {
        let csv = dir.join(format!("{}.csv", self.name));
        fs::write(&csv, self.render(preamble))?;
        let mut out = vec![csv];
        if gnuplot {
            if let Some(script) = self.gnuplot() {
                let gp = dir.join(format!("{}.gp", self.name));
                fs::write(&gp, script)?;
                out.push(gp);
            }
        }
        Ok(out)
    }
}

/// Shortest round-trip form; identical bits give identical text.
pub fn f(x: f64) -> String {
    if x == 0.0 || (1e-3..1e6).contains(&x.abs()) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn u(x: usize) -> String {
    x.to_string()
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Check { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary<C: Serialize> {
    pub subcommand: String,
    pub config: C,
    pub warnings: Vec<String>,
    pub checks: Vec<Check>,
    pub files: Vec<String>,
    pub passed: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_layout() {
        let mut t = Table::new("demo", "a demo table", &[("k", "generation"), ("v", "value")]).with_plot(0, &[1], true);
        t.push(vec![u(1), f(0.25)]);
        t.push(vec![u(2), f(1.5e-9)]);
        let text = t.render(&["run".into()]);
        assert_eq!(text, "# run\n# a demo table\n# k: generation\n# v: value\nk,v\n1,0.25\n2,1.5e-9\n");
        assert!(t.gnuplot().unwrap().contains("using 1:2"));
    }
}
